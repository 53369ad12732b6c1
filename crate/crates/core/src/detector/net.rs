//! The minimal one-stage detector network.
//!
//! A stack of stride-2 3x3 convolutions with SiLU activations downsamples the
//! input to the anchor grid resolution; two 1x1 heads emit one score logit
//! and four box deltas per anchor. Everything runs in f64 with hand-written
//! backward passes so gradients can be checked against finite differences.

use ndarray::{Array1, Array2, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_rng;

use super::anchors::{build_anchors, AnchorGrid};

const NORM_EPS: f64 = 1e-5;

/// Geometry and capacity of the detector.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DetectorConfig {
    pub input_size: usize,
    pub grid_size: usize,
    /// Square anchor side lengths, in pixels.
    pub anchor_sizes: Vec<f64>,
    /// Hidden channel width of the backbone.
    pub channels: usize,
    /// Assignment bands: IoU >= pos_iou is positive, < neg_iou negative.
    pub pos_iou: f64,
    pub neg_iou: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            input_size: 128,
            grid_size: 8,
            anchor_sizes: vec![12.0, 20.0, 32.0],
            channels: 16,
            pos_iou: 0.5,
            neg_iou: 0.4,
        }
    }
}

impl DetectorConfig {
    /// Smallest useful configuration, for gradient checks and fast tests.
    pub fn tiny() -> Self {
        DetectorConfig {
            input_size: 8,
            grid_size: 2,
            anchor_sizes: vec![4.0],
            channels: 8,
            pos_iou: 0.5,
            neg_iou: 0.4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 || self.input_size == 0 || self.channels == 0 {
            return Err(Error::InvalidConfig(
                "detector sizes must be positive".into(),
            ));
        }
        let ratio = self.input_size / self.grid_size;
        if ratio * self.grid_size != self.input_size || !ratio.is_power_of_two() || ratio < 2 {
            return Err(Error::InvalidConfig(format!(
                "input size {} must be grid size {} times a power of two >= 2",
                self.input_size, self.grid_size
            )));
        }
        if self.anchor_sizes.is_empty() || self.anchor_sizes.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidConfig("anchor sizes must be positive".into()));
        }
        if !(0.0 <= self.neg_iou && self.neg_iou <= self.pos_iou && self.pos_iou <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "assignment bands need 0 <= neg {} <= pos {} <= 1",
                self.neg_iou, self.pos_iou
            )));
        }
        Ok(())
    }

    /// Number of stride-2 blocks between input and grid resolution.
    pub fn num_blocks(&self) -> usize {
        (self.input_size / self.grid_size).trailing_zeros() as usize
    }

    pub fn num_anchor_sizes(&self) -> usize {
        self.anchor_sizes.len()
    }

    pub fn num_anchors(&self) -> usize {
        self.grid_size * self.grid_size * self.anchor_sizes.len()
    }

    pub fn anchor_grid(&self) -> Result<AnchorGrid> {
        let pairs: Vec<(f64, f64)> = self.anchor_sizes.iter().map(|&s| (s, s)).collect();
        build_anchors(self.grid_size, &pairs, self.input_size)
    }
}

/// One convolution layer stored in GEMM form: weight rows are output
/// channels, columns run over `(c_in, ky, kx)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub in_channels: usize,
    pub kernel: usize,
}

impl ConvLayer {
    fn init<R: Rng>(out_c: usize, in_c: usize, kernel: usize, rng: &mut R) -> Self {
        let fan_in = (in_c * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        let weight = Array2::from_shape_fn((out_c, in_c * kernel * kernel), |_| {
            // Box-Muller keeps us independent of rand_distr
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        ConvLayer {
            weight,
            bias: Array1::zeros(out_c),
            in_channels: in_c,
            kernel,
        }
    }

    fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Raw per-anchor predictions; anchor `n` follows the [`AnchorGrid`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub score_logits: Array1<f64>,
    pub box_deltas: Array2<f64>,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    /// Normalized input as an image matrix `(3, H*W)` plus spatial size.
    input: Array2<f64>,
    input_hw: usize,
    /// Per block: im2col matrix of the block input and pre-activation z.
    cols: Vec<Array2<f64>>,
    pre_acts: Vec<Array2<f64>>,
    /// Post-activation features at grid resolution `(C, G*G)`.
    features: Array2<f64>,
}

/// All weights of the detector. Input normalization statistics ride along as
/// non-trainable entries: they are updated from data batches, carried by EMA
/// and checkpoints, but receive no gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub config: DetectorConfig,
    pub blocks: Vec<ConvLayer>,
    pub score_head: ConvLayer,
    pub box_head: ConvLayer,
    pub input_mean: [f64; 3],
    pub input_var: [f64; 3],
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// im2col for a 3x3 stride-2 pad-1 convolution on a `(C, H*W)` image matrix.
fn im2col_3x3_s2(input: &Array2<f64>, hw: usize) -> Array2<f64> {
    let c_in = input.shape()[0];
    let out_hw = hw / 2;
    let mut col = Array2::<f64>::zeros((c_in * 9, out_hw * out_hw));
    for c in 0..c_in {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = c * 9 + ky * 3 + kx;
                for oy in 0..out_hw {
                    let iy = (oy * 2 + ky) as isize - 1;
                    if iy < 0 || iy >= hw as isize {
                        continue;
                    }
                    for ox in 0..out_hw {
                        let ix = (ox * 2 + kx) as isize - 1;
                        if ix < 0 || ix >= hw as isize {
                            continue;
                        }
                        col[[row, oy * out_hw + ox]] = input[[c, iy as usize * hw + ix as usize]];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add the columns gradient back onto the block input.
fn col2im_3x3_s2(d_col: &Array2<f64>, c_in: usize, hw: usize) -> Array2<f64> {
    let out_hw = hw / 2;
    let mut d_input = Array2::<f64>::zeros((c_in, hw * hw));
    for c in 0..c_in {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = c * 9 + ky * 3 + kx;
                for oy in 0..out_hw {
                    let iy = (oy * 2 + ky) as isize - 1;
                    if iy < 0 || iy >= hw as isize {
                        continue;
                    }
                    for ox in 0..out_hw {
                        let ix = (ox * 2 + kx) as isize - 1;
                        if ix < 0 || ix >= hw as isize {
                            continue;
                        }
                        d_input[[c, iy as usize * hw + ix as usize]] +=
                            d_col[[row, oy * out_hw + ox]];
                    }
                }
            }
        }
    }
    d_input
}

impl DetectorParams {
    /// Random initialization, deterministic in `seed`. The score-head bias
    /// starts negative so the untrained detector predicts mostly background.
    pub fn init(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = derive_rng(seed, &[0x494e4954]);
        let mut blocks = Vec::with_capacity(config.num_blocks());
        let mut in_c = 3usize;
        for _ in 0..config.num_blocks() {
            blocks.push(ConvLayer::init(config.channels, in_c, 3, &mut rng));
            in_c = config.channels;
        }
        let a = config.num_anchor_sizes();
        let mut score_head = ConvLayer::init(a, config.channels, 1, &mut rng);
        score_head.bias.fill(-3.0);
        let mut box_head = ConvLayer::init(4 * a, config.channels, 1, &mut rng);
        box_head.weight.mapv_inplace(|w| w * 0.1);
        Ok(DetectorParams {
            config,
            blocks,
            score_head,
            box_head,
            input_mean: [0.5; 3],
            input_var: [1.0 / 12.0; 3],
        })
    }

    pub fn n_trainable(&self) -> usize {
        self.blocks.iter().map(ConvLayer::n_params).sum::<usize>()
            + self.score_head.n_params()
            + self.box_head.n_params()
    }

    pub fn n_total(&self) -> usize {
        self.n_trainable() + 6
    }

    /// Flatten every parameter: trainable weights first, then the six input
    /// statistics. The order is the contract for gradients, SGD, EMA and
    /// checkpoints.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_total());
        for layer in self.blocks.iter().chain([&self.score_head, &self.box_head]) {
            v.extend(layer.weight.iter());
            v.extend(layer.bias.iter());
        }
        v.extend(self.input_mean);
        v.extend(self.input_var);
        v
    }

    /// Rebuild parameters from a flat vector laid out by [`Self::to_vec`].
    pub fn from_vec(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.n_total() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.n_total(),
                v.len()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0usize;
        for layer in out
            .blocks
            .iter_mut()
            .chain([&mut out.score_head, &mut out.box_head])
        {
            for w in layer.weight.iter_mut() {
                *w = v[offset];
                offset += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = v[offset];
                offset += 1;
            }
        }
        out.input_mean.copy_from_slice(&v[offset..offset + 3]);
        out.input_var.copy_from_slice(&v[offset + 3..offset + 6]);
        Ok(out)
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.to_vec().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteGradient)
        }
    }

    fn normalized_input(&self, pixels: &ArrayView3<f64>) -> Result<(Array2<f64>, usize)> {
        let shape = pixels.shape();
        let s = self.config.input_size;
        if shape != [s, s, 3] {
            return Err(Error::ShapeMismatch(format!(
                "expected {s}x{s}x3 image, got {}x{}x{}",
                shape[0], shape[1], shape[2]
            )));
        }
        let mut input = Array2::<f64>::zeros((3, s * s));
        for c in 0..3 {
            let inv = 1.0 / (self.input_var[c] + NORM_EPS).sqrt();
            let mean = self.input_mean[c];
            for y in 0..s {
                for x in 0..s {
                    input[[c, y * s + x]] = (pixels[[y, x, c]] - mean) * inv;
                }
            }
        }
        Ok((input, s))
    }

    /// Forward pass returning per-anchor logits and deltas.
    pub fn forward(&self, pixels: &ArrayView3<f64>) -> Result<DetectorOutput> {
        Ok(self.forward_cached(pixels)?.0)
    }

    /// Forward pass that also keeps activations for [`Self::backward`].
    pub fn forward_cached(
        &self,
        pixels: &ArrayView3<f64>,
    ) -> Result<(DetectorOutput, ForwardCache)> {
        let (input, mut hw) = self.normalized_input(pixels)?;
        let input_hw = hw;
        let mut cols = Vec::with_capacity(self.blocks.len());
        let mut pre_acts = Vec::with_capacity(self.blocks.len());
        let mut x = input.clone();
        for block in &self.blocks {
            let col = im2col_3x3_s2(&x, hw);
            let mut z = block.weight.dot(&col);
            for (mut row, &b) in z.rows_mut().into_iter().zip(block.bias.iter()) {
                row.mapv_inplace(|v| v + b);
            }
            let activated = z.mapv(silu);
            cols.push(col);
            pre_acts.push(z);
            x = activated;
            hw /= 2;
        }
        debug_assert_eq!(hw, self.config.grid_size);
        let features = x;

        let mut score = self.score_head.weight.dot(&features);
        for (mut row, &b) in score.rows_mut().into_iter().zip(self.score_head.bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        let mut boxes = self.box_head.weight.dot(&features);
        for (mut row, &b) in boxes.rows_mut().into_iter().zip(self.box_head.bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }

        let g2 = self.config.grid_size * self.config.grid_size;
        let a = self.config.num_anchor_sizes();
        let n = g2 * a;
        let mut logits = Array1::<f64>::zeros(n);
        let mut deltas = Array2::<f64>::zeros((n, 4));
        for cell in 0..g2 {
            for ai in 0..a {
                let anchor = cell * a + ai;
                logits[anchor] = score[[ai, cell]];
                for coord in 0..4 {
                    deltas[[anchor, coord]] = boxes[[ai * 4 + coord, cell]];
                }
            }
        }

        Ok((
            DetectorOutput {
                score_logits: logits,
                box_deltas: deltas,
            },
            ForwardCache {
                input,
                input_hw,
                cols,
                pre_acts,
                features,
            },
        ))
    }

    /// Backpropagate output gradients to a flat trainable-parameter gradient
    /// (layout matching the prefix of [`Self::to_vec`]).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: &Array1<f64>,
        d_deltas: &Array2<f64>,
    ) -> Vec<f64> {
        let g2 = self.config.grid_size * self.config.grid_size;
        let a = self.config.num_anchor_sizes();

        let mut d_score = Array2::<f64>::zeros((a, g2));
        let mut d_boxes = Array2::<f64>::zeros((4 * a, g2));
        for cell in 0..g2 {
            for ai in 0..a {
                let anchor = cell * a + ai;
                d_score[[ai, cell]] = d_logits[anchor];
                for coord in 0..4 {
                    d_boxes[[ai * 4 + coord, cell]] = d_deltas[[anchor, coord]];
                }
            }
        }

        // heads (1x1 convolutions over the feature matrix)
        let d_score_w = d_score.dot(&cache.features.t());
        let d_score_b: Array1<f64> = d_score.sum_axis(ndarray::Axis(1));
        let d_box_w = d_boxes.dot(&cache.features.t());
        let d_box_b: Array1<f64> = d_boxes.sum_axis(ndarray::Axis(1));

        let mut d_features = self.score_head.weight.t().dot(&d_score);
        d_features += &self.box_head.weight.t().dot(&d_boxes);

        // backbone blocks in reverse
        let mut d_layers: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.blocks.len());
        let mut d_out = d_features;
        let mut hw = self.config.grid_size;
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let mut d_z = d_out;
            ndarray::Zip::from(&mut d_z)
                .and(&cache.pre_acts[i])
                .for_each(|g, &z| *g *= silu_grad(z));
            let d_w = d_z.dot(&cache.cols[i].t());
            let d_b = d_z.sum_axis(ndarray::Axis(1));
            if i > 0 {
                let d_col = block.weight.t().dot(&d_z);
                d_out = col2im_3x3_s2(&d_col, block.in_channels, hw * 2);
                // the recovered gradient is w.r.t. the previous block's
                // activation output
            } else {
                d_out = Array2::zeros((1, 1));
            }
            d_layers.push((d_w, d_b));
            hw *= 2;
        }
        d_layers.reverse();
        let _ = cache.input_hw;
        let _ = &cache.input;

        let mut flat = Vec::with_capacity(self.n_trainable());
        for (d_w, d_b) in &d_layers {
            flat.extend(d_w.iter());
            flat.extend(d_b.iter());
        }
        flat.extend(d_score_w.iter());
        flat.extend(d_score_b.iter());
        flat.extend(d_box_w.iter());
        flat.extend(d_box_b.iter());
        flat
    }

    /// Fold per-channel statistics of a pixel batch into the running input
    /// normalization. Gradients never flow through these statistics.
    pub fn update_input_stats(&mut self, batch: &[ArrayView3<f64>], momentum: f64) {
        if batch.is_empty() || momentum == 0.0 {
            return;
        }
        let mut mean = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = 0usize;
        for pixels in batch {
            let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
            count += h * w;
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let v = pixels[[y, x, c]];
                        mean[c] += v;
                        sq[c] += v * v;
                    }
                }
            }
        }
        let n = count as f64;
        for c in 0..3 {
            let m = mean[c] / n;
            let v = (sq[c] / n - m * m).max(0.0);
            self.input_mean[c] = (1.0 - momentum) * self.input_mean[c] + momentum * m;
            self.input_var[c] = (1.0 - momentum) * self.input_var[c] + momentum * v;
        }
    }
}
