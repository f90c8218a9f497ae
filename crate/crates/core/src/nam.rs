//! Learned antenna-configuration classifier: input features, a single
//! convolution followed by two dense layers, the asymmetric loss, Adam
//! training and evaluation metrics.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{mix_seed, ArrayGeometry};
use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};

/// Feature columns per element: `Re W`, `Im W`, `Re H`, `Im H`.
pub const FEATURE_WIDTH: usize = 4;

/// Floor applied to probabilities inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Index of feature `(h, w, c)` in the flattened `height x 4 x K` tensor.
pub fn feature_index(h: usize, w: usize, c: usize, k: usize) -> usize {
    (h * FEATURE_WIDTH + w) * k + c
}

fn normalize_into(v: &[f64], out: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (o, x) in out.iter_mut().zip(v) {
        *o = if n > 0.0 { x / n } else { 0.0 };
    }
}

/// Builds the input tensor for up to `k_max` users.
///
/// `channels[k]` are the per-PRB channels and `precoders[k]` the full-array
/// transmit matrix of scheduled user `k`. The channel is averaged over PRBs,
/// receive antennas and both polarizations; the precoder over its stream
/// columns and both polarization blocks. Each of the four real vectors is
/// scaled to unit norm; slots of absent users stay zero.
pub fn featurize(
    channels: &[&[CMat]],
    precoders: &[CMat],
    geometry: &ArrayGeometry,
    k_max: usize,
) -> Result<Vec<f32>> {
    if channels.len() != precoders.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} channels vs {} precoders",
            channels.len(),
            precoders.len()
        )));
    }
    if channels.len() > k_max {
        return Err(Error::OutOfRange(format!("{} users exceed K = {k_max}", channels.len())));
    }
    let half = geometry.per_pol();
    let m = geometry.total();
    let mut x = vec![0f32; half * FEATURE_WIDTH * k_max];
    let mut cols = [vec![0.0; half], vec![0.0; half], vec![0.0; half], vec![0.0; half]];
    let mut normed = vec![0.0; half];

    for (k, (prbs, w)) in channels.iter().zip(precoders).enumerate() {
        if w.nrows() != m || prbs.iter().any(|h| h.ncols() != m) {
            return Err(Error::DimensionMismatch(format!("user {k} does not match M = {m}")));
        }
        let mut h_pol = vec![C64::new(0.0, 0.0); half];
        let mut w_pol = vec![C64::new(0.0, 0.0); half];
        let h_count = (prbs.len() * prbs.first().map_or(0, |h| h.nrows()) * 2).max(1) as f64;
        let w_count = (w.ncols() * 2).max(1) as f64;
        for (i, (hp, wp)) in h_pol.iter_mut().zip(w_pol.iter_mut()).enumerate() {
            for p in 0..ArrayGeometry::POLARIZATIONS {
                let j = i + p * half;
                for h in prbs.iter() {
                    *hp += h.column(j).sum();
                }
                *wp += w.row(j).sum();
            }
            *hp /= h_count;
            *wp /= w_count;
        }
        for i in 0..half {
            cols[0][i] = w_pol[i].re;
            cols[1][i] = w_pol[i].im;
            cols[2][i] = h_pol[i].re;
            cols[3][i] = h_pol[i].im;
        }
        for (c, col) in cols.iter().enumerate() {
            normalize_into(col, &mut normed);
            for (h, &v) in normed.iter().enumerate() {
                x[feature_index(h, c, k, k_max)] = v as f32;
            }
        }
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Split::Train),
            1 => Some(Split::Validation),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleMeta {
    pub drop: u32,
    pub slot: u32,
    pub scheduled: u8,
    /// Even the full array misses the rate constraints; label is `N - 1`.
    pub infeasible: bool,
    pub split: Split,
}

/// One labeled slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f32>,
    pub label: usize,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn one_hot(&self, classes: usize) -> Vec<f64> {
        one_hot(self.label, classes)
    }
}

pub fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    v
}

/// Layer sizes. The input is treated as a `height x 4` image with `K`
/// channels; convolution uses valid padding and stride 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub kernel: (usize, usize),
    pub conv_channels: usize,
    pub hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            kernel: (3, 3),
            conv_channels: 4,
            hidden: 32,
        }
    }
}

/// Derived tensor shapes of one architecture instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShapes {
    pub input: (usize, usize, usize),
    pub conv_out: (usize, usize, usize),
    pub flat: usize,
    /// `(inputs, outputs)` of each dense layer.
    pub dense: Vec<(usize, usize)>,
}

impl Architecture {
    pub fn shapes(&self, height: usize, in_channels: usize, classes: usize) -> Result<LayerShapes> {
        let (a, b) = self.kernel;
        if a == 0 || b == 0 || a > height || b > FEATURE_WIDTH {
            return Err(Error::InvalidArgument(format!(
                "kernel {a}x{b} does not fit a {height}x{FEATURE_WIDTH} input"
            )));
        }
        if self.conv_channels == 0 || self.hidden == 0 || in_channels == 0 || classes < 2 {
            return Err(Error::InvalidArgument("layer sizes must be positive and N ≥ 2".into()));
        }
        let conv_out = (height + 1 - a, FEATURE_WIDTH + 1 - b, self.conv_channels);
        let flat = conv_out.0 * conv_out.1 * conv_out.2;
        Ok(LayerShapes {
            input: (height, FEATURE_WIDTH, in_channels),
            conv_out,
            flat,
            dense: vec![(flat, self.hidden), (self.hidden, classes)],
        })
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    shapes: LayerShapes,
    conv_w: usize,
    conv_b: usize,
    d1_w: usize,
    d1_b: usize,
    d2_w: usize,
    d2_b: usize,
    len: usize,
}

impl Layout {
    fn new(shapes: LayerShapes, kernel: (usize, usize)) -> Self {
        let (_, _, cin) = shapes.input;
        let cout = shapes.conv_out.2;
        let conv_w = 0;
        let conv_b = conv_w + kernel.0 * kernel.1 * cin * cout;
        let d1_w = conv_b + cout;
        let (f, hid) = shapes.dense[0];
        let d1_b = d1_w + f * hid;
        let d2_w = d1_b + hid;
        let (_, n) = shapes.dense[1];
        let d2_b = d2_w + hid * n;
        let len = d2_b + n;
        Self {
            shapes,
            conv_w,
            conv_b,
            d1_w,
            d1_b,
            d2_w,
            d2_b,
            len,
        }
    }
}

/// Asymmetric-loss configuration `(λ, α, β)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            alpha: 0.1,
            beta: 10.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.alpha >= 0.0 && self.beta >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "loss config needs λ ≥ 0, α ≥ 0, β ≥ 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Cross-entropy only.
    Symmetric,
    /// Cross-entropy plus the asymmetric penalty.
    Asymmetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub init_seed: u64,
    pub config_hash: Option<String>,
    pub phases: Vec<PhaseRecord>,
}

/// Classifier with parameters held in one flat vector. Every stored value is
/// exactly representable in `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct NamModel {
    pub arch: Architecture,
    pub classes: usize,
    pub provenance: Provenance,
    layout: Layout,
    params: Vec<f64>,
}

/// Activations kept for backpropagation.
struct Cache {
    x: Vec<f64>,
    conv: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn round_f32(v: &mut [f64]) {
    for p in v {
        *p = *p as f32 as f64;
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl NamModel {
    /// Zero-initialized model for `height x 4 x in_channels` inputs.
    pub fn zeros(arch: Architecture, height: usize, in_channels: usize, classes: usize) -> Result<Self> {
        let shapes = arch.shapes(height, in_channels, classes)?;
        let layout = Layout::new(shapes, arch.kernel);
        Ok(Self {
            params: vec![0.0; layout.len],
            arch,
            classes,
            provenance: Provenance::default(),
            layout,
        })
    }

    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub fn new(arch: Architecture, height: usize, in_channels: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(arch, height, in_channels, classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = &m.layout;
        let (a, b) = m.arch.kernel;
        let blocks = [
            (l.conv_w, l.conv_b, a * b * in_channels),
            (l.d1_w, l.d1_b, l.shapes.dense[0].0),
            (l.d2_w, l.d2_b, l.shapes.dense[1].0),
        ];
        for (start, end, fan_in) in blocks {
            let lim = (6.0 / fan_in as f64).sqrt();
            for p in &mut m.params[start..end] {
                *p = rng.random_range(-lim..lim);
            }
        }
        round_f32(&mut m.params);
        m.provenance.init_seed = seed;
        Ok(m)
    }

    pub fn height(&self) -> usize {
        self.layout.shapes.input.0
    }

    pub fn in_channels(&self) -> usize {
        self.layout.shapes.input.2
    }

    pub fn input_len(&self) -> usize {
        let (h, w, c) = self.layout.shapes.input;
        h * w * c
    }

    pub fn shapes(&self) -> &LayerShapes {
        &self.layout.shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replaces all parameters; values are rounded to `f32`.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a model with {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params.copy_from_slice(params);
        round_f32(&mut self.params);
        Ok(())
    }

    /// Sets the output-layer bias.
    pub fn set_output_bias(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.classes {
            return Err(Error::DimensionMismatch("output bias length".into()));
        }
        let start = self.layout.d2_b;
        self.params[start..start + self.classes].copy_from_slice(bias);
        round_f32(&mut self.params[start..start + self.classes]);
        Ok(())
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} values, model expects {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, x: &[f32]) -> Cache {
        let l = &self.layout;
        let p = &self.params;
        let (_, w_in, cin) = l.shapes.input;
        let (oh, ow, cout) = l.shapes.conv_out;
        let (ka, kb) = self.arch.kernel;
        let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();

        let mut conv = vec![0.0; l.shapes.flat];
        for i in 0..oh {
            for j in 0..ow {
                let out = &mut conv[(i * ow + j) * cout..(i * ow + j + 1) * cout];
                out.copy_from_slice(&p[l.conv_b..l.conv_b + cout]);
                for di in 0..ka {
                    for dj in 0..kb {
                        let xin = &x[((i + di) * w_in + j + dj) * cin..][..cin];
                        let kbase = l.conv_w + (di * kb + dj) * cin * cout;
                        for (c, &xv) in xin.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let kw = &p[kbase + c * cout..][..cout];
                            for (o, &w) in out.iter_mut().zip(kw) {
                                *o += w * xv;
                            }
                        }
                    }
                }
            }
        }
        for v in &mut conv {
            *v = v.max(0.0);
        }

        let (flat, hid) = l.shapes.dense[0];
        let mut hidden = p[l.d1_b..l.d1_b + hid].to_vec();
        for (u, h) in hidden.iter_mut().enumerate() {
            let row = &p[l.d1_w + u * flat..][..flat];
            *h += row.iter().zip(&conv).map(|(w, v)| w * v).sum::<f64>();
            *h = h.max(0.0);
        }

        let n = self.classes;
        let mut logits = p[l.d2_b..l.d2_b + n].to_vec();
        for (u, z) in logits.iter_mut().enumerate() {
            let row = &p[l.d2_w + u * hid..][..hid];
            *z += row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>();
        }
        Cache {
            x,
            conv,
            hidden,
            probs: softmax(&logits),
        }
    }

    /// Class probabilities.
    pub fn forward(&self, x: &[f32]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_cached(x).probs)
    }

    pub fn predict(&self, x: &[f32]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Accumulates `dL/dθ` into `grad` given `dL/dz` at the logits.
    fn backward(&self, cache: &Cache, dz: &[f64], grad: &mut [f64]) {
        let l = &self.layout;
        let p = &self.params;
        let (flat, hid) = l.shapes.dense[0];
        let n = self.classes;

        let mut dh = vec![0.0; hid];
        for u in 0..n {
            grad[l.d2_b + u] += dz[u];
            let row = l.d2_w + u * hid;
            for (k, &h) in cache.hidden.iter().enumerate() {
                grad[row + k] += dz[u] * h;
                dh[k] += dz[u] * p[row + k];
            }
        }
        for (k, d) in dh.iter_mut().enumerate() {
            if cache.hidden[k] <= 0.0 {
                *d = 0.0;
            }
        }

        let mut dconv = vec![0.0; flat];
        for (u, &d) in dh.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[l.d1_b + u] += d;
            let row = l.d1_w + u * flat;
            for (f, &v) in cache.conv.iter().enumerate() {
                grad[row + f] += d * v;
                dconv[f] += d * p[row + f];
            }
        }
        for (f, d) in dconv.iter_mut().enumerate() {
            if cache.conv[f] <= 0.0 {
                *d = 0.0;
            }
        }

        let (_, w_in, cin) = l.shapes.input;
        let (oh, ow, cout) = l.shapes.conv_out;
        let (ka, kb) = self.arch.kernel;
        for i in 0..oh {
            for j in 0..ow {
                let dout = &dconv[(i * ow + j) * cout..][..cout];
                for (o, &d) in dout.iter().enumerate() {
                    grad[l.conv_b + o] += d;
                }
                for di in 0..ka {
                    for dj in 0..kb {
                        let xin = &cache.x[((i + di) * w_in + j + dj) * cin..][..cin];
                        let kbase = l.conv_w + (di * kb + dj) * cin * cout;
                        for (c, &xv) in xin.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            for (o, &d) in dout.iter().enumerate() {
                                grad[kbase + c * cout + o] += d * xv;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Loss of one sample and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, x: &[f32], y: &[f64], loss: Option<&LossConfig>) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let mut grad = vec![0.0; self.params.len()];
        let value = self.accumulate(x, y, loss, &mut grad);
        Ok((value, grad))
    }

    fn accumulate(&self, x: &[f32], y: &[f64], loss: Option<&LossConfig>, grad: &mut [f64]) -> f64 {
        let cache = self.forward_cached(x);
        let (value, g) = match loss {
            Some(cfg) => (total_loss(y, &cache.probs, cfg), total_loss_grad(y, &cache.probs, cfg)),
            None => (cross_entropy(y, &cache.probs), cross_entropy_grad(y, &cache.probs)),
        };
        let dz = softmax_backward(&cache.probs, &g);
        self.backward(&cache, &dz, grad);
        value
    }

    /// Loss of one sample without gradients.
    pub fn sample_loss(&self, x: &[f32], y: &[f64], loss: Option<&LossConfig>) -> Result<f64> {
        let probs = self.forward(x)?;
        Ok(match loss {
            Some(cfg) => total_loss(y, &probs, cfg),
            None => cross_entropy(y, &probs),
        })
    }
}

/// `−Σ y_i log max(ŷ_i, 1e-12)`.
pub fn cross_entropy(y: &[f64], yhat: &[f64]) -> f64 {
    -y.iter()
        .zip(yhat)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, p)| t * p.clamp(PROB_FLOOR, 1.0).ln())
        .sum::<f64>()
}

/// `d CE / d ŷ`; zero where the floor is active.
pub fn cross_entropy_grad(y: &[f64], yhat: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(yhat)
        .map(|(t, p)| if *t == 0.0 || *p < PROB_FLOOR { 0.0 } else { -t / p })
        .collect()
}

/// `Σ_i softmax(β v)_i · i`.
pub fn softargmax(v: &[f64], beta: f64) -> f64 {
    let scaled: Vec<f64> = v.iter().map(|x| beta * x).collect();
    softmax(&scaled).iter().enumerate().map(|(i, p)| i as f64 * p).sum()
}

/// Gradient of [`softargmax`] with respect to `v`: `β p_j (j − s)`.
pub fn softargmax_grad(v: &[f64], beta: f64) -> Vec<f64> {
    let scaled: Vec<f64> = v.iter().map(|x| beta * x).collect();
    let p = softmax(&scaled);
    let s: f64 = p.iter().enumerate().map(|(i, q)| i as f64 * q).sum();
    p.iter().enumerate().map(|(j, q)| beta * q * (j as f64 - s)).collect()
}

/// Squared gap, scaled by `α` when the prediction over-provisions.
pub fn asymmetric_penalty(y_max: f64, yhat_max: f64, alpha: f64) -> f64 {
    let d = y_max - yhat_max;
    if d > 0.0 {
        d * d
    } else {
        alpha * d * d
    }
}

fn asymmetric_penalty_grad(y_max: f64, yhat_max: f64, alpha: f64) -> f64 {
    let d = y_max - yhat_max;
    if d > 0.0 {
        -2.0 * d
    } else {
        -2.0 * alpha * d
    }
}

/// Cross-entropy plus `λ` times the asymmetric penalty between the
/// softargmax of the label and of the prediction.
pub fn total_loss(y: &[f64], yhat: &[f64], cfg: &LossConfig) -> f64 {
    let ce = cross_entropy(y, yhat);
    if cfg.lambda == 0.0 {
        return ce;
    }
    let pen = asymmetric_penalty(softargmax(y, cfg.beta), softargmax(yhat, cfg.beta), cfg.alpha);
    ce + cfg.lambda * pen
}

/// `d total_loss / d ŷ`.
pub fn total_loss_grad(y: &[f64], yhat: &[f64], cfg: &LossConfig) -> Vec<f64> {
    let mut g = cross_entropy_grad(y, yhat);
    if cfg.lambda == 0.0 {
        return g;
    }
    let ys = softargmax(y, cfg.beta);
    let ps = softargmax(yhat, cfg.beta);
    let scale = cfg.lambda * asymmetric_penalty_grad(ys, ps, cfg.alpha);
    for (gi, si) in g.iter_mut().zip(softargmax_grad(yhat, cfg.beta)) {
        *gi += scale * si;
    }
    g
}

/// Pulls `dL/dŷ` back through the softmax: `ŷ_i (g_i − Σ_j ŷ_j g_j)`.
pub fn softmax_backward(probs: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(g).map(|(p, v)| p * v).sum();
    probs.iter().zip(g).map(|(p, v)| p * (v - dot)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Keep the parameters of the epoch with the lowest validation loss
    /// instead of the last epoch. Ignored without a validation set.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 7,
            restore_best: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Epoch whose parameters were kept when `restore_best` is set.
    pub best_epoch: Option<usize>,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-7;

/// Adam moments; a fresh state is used for every training phase.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_B1.powi(self.t);
        let c2 = 1.0 - ADAM_B2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = ADAM_B1 * *m + (1.0 - ADAM_B1) * g;
            *v = ADAM_B2 * *v + (1.0 - ADAM_B2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
        round_f32(params);
    }
}

fn mean_loss(model: &NamModel, samples: &[Sample], loss: Option<&LossConfig>) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let n = model.classes;
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let probs = model.forward_cached(&s.features).probs;
            let y = s.one_hot(n);
            match loss {
                Some(cfg) => total_loss(&y, &probs, cfg),
                None => cross_entropy(&y, &probs),
            }
        })
        .collect();
    losses.iter().sum::<f64>() / samples.len() as f64
}

/// Mini-batch Adam training for one phase. The symmetric phase minimizes
/// cross-entropy; the asymmetric phase minimizes [`total_loss`] with `loss`.
///
/// Batches are visited in a seeded order that depends only on `cfg.seed` and
/// the epoch. Per-sample gradients are summed in batch order.
pub fn train(
    model: &mut NamModel,
    train_set: &[Sample],
    validation: &[Sample],
    phase: Phase,
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<History> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("batch size and learning rate must be positive".into()));
    }
    loss.validate()?;
    let n = model.classes;
    for s in train_set.iter().chain(validation) {
        if s.label >= n {
            return Err(Error::OutOfRange(format!("label {} of {n} classes", s.label)));
        }
        model.check_input(&s.features)?;
    }
    let loss_fn = match phase {
        Phase::Symmetric => None,
        Phase::Asymmetric => Some(loss),
    };

    let np = model.params.len();
    let mut opt = Adam::new(np, cfg.learning_rate);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let keep_best = cfg.restore_best && !validation.is_empty();
    let mut best: Option<(f64, Vec<f64>)> = None;

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let model_ref = &*model;
            let parts: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &train_set[i];
                    let mut g = vec![0.0; np];
                    let l = model_ref.accumulate(&s.features, &s.one_hot(n), loss_fn, &mut g);
                    (l, g)
                })
                .collect();
            let mut grad = vec![0.0; np];
            let scale = 1.0 / batch.len() as f64;
            for (l, g) in &parts {
                epoch_loss += l;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            for g in &mut grad {
                *g *= scale;
            }
            opt.step(&mut model.params, &grad);
        }
        epoch_loss /= train_set.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }
        history.train_loss.push(epoch_loss);
        let val = mean_loss(model, validation, loss_fn);
        history.validation_loss.push(val);
        log::info!("{phase:?} epoch {epoch}: train {epoch_loss:.5} validation {val:.5}");
        if keep_best && best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, model.params.clone()));
            history.best_epoch = Some(epoch);
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    model.provenance.phases.push(PhaseRecord {
        phase,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        loss: *loss,
        samples: train_set.len(),
    });
    Ok(history)
}

/// Classification metrics. `confusion[i][j]` is the fraction of samples with
/// label `i` predicted as `j`; rows of absent labels are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub samples: usize,
    pub accuracy: f64,
    pub qos_guarantee: f64,
    pub counts: Vec<Vec<u64>>,
    pub confusion: Vec<Vec<f64>>,
    pub priors: Vec<f64>,
}

impl EvalMetrics {
    pub fn from_pairs(pairs: &[(usize, usize)], classes: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("no samples to evaluate".into()));
        }
        let mut counts = vec![vec![0u64; classes]; classes];
        for &(y, p) in pairs {
            if y >= classes || p >= classes {
                return Err(Error::OutOfRange(format!("class pair ({y}, {p}) of {classes}")));
            }
            counts[y][p] += 1;
        }
        let total = pairs.len() as f64;
        let correct = pairs.iter().filter(|(y, p)| y == p).count() as f64;
        let covered = pairs.iter().filter(|(y, p)| p >= y).count() as f64;
        let priors: Vec<f64> = counts.iter().map(|r| r.iter().sum::<u64>() as f64 / total).collect();
        let confusion = counts
            .iter()
            .map(|r| {
                let n = r.iter().sum::<u64>();
                r.iter()
                    .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                    .collect()
            })
            .collect();
        Ok(Self {
            samples: pairs.len(),
            accuracy: correct / total,
            qos_guarantee: covered / total,
            counts,
            confusion,
            priors,
        })
    }

    /// `Σ_i c_ii · prior_i`.
    pub fn accuracy_from_confusion(&self) -> f64 {
        (0..self.priors.len()).map(|i| self.confusion[i][i] * self.priors[i]).sum()
    }

    /// `Σ_i Σ_{j ≥ i} c_ij · prior_i`.
    pub fn qos_from_confusion(&self) -> f64 {
        (0..self.priors.len())
            .map(|i| self.confusion[i][i..].iter().sum::<f64>() * self.priors[i])
            .sum()
    }
}

/// Predicted class of every sample, in order.
pub fn predict_all(model: &NamModel, samples: &[Sample]) -> Result<Vec<usize>> {
    samples.par_iter().map(|s| model.predict(&s.features)).collect()
}

/// Metrics over `samples`; slots flagged infeasible are skipped unless
/// `include_infeasible`.
pub fn evaluate(model: &NamModel, samples: &[Sample], include_infeasible: bool) -> Result<EvalMetrics> {
    let kept: Vec<Sample> = samples
        .iter()
        .filter(|s| include_infeasible || !s.meta.infeasible)
        .cloned()
        .collect();
    let preds = predict_all(model, &kept)?;
    let pairs: Vec<(usize, usize)> = kept.iter().zip(preds).map(|(s, p)| (s.label, p)).collect();
    EvalMetrics::from_pairs(&pairs, model.classes)
}

pub const CHECKPOINT_FORMAT: &str = "antmute-nam";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub activation: String,
    /// Conv: `[a, b, in, out]`; dense: `[out, in]`.
    pub shape: Vec<usize>,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Serialized model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub layers: Vec<LayerRecord>,
    pub provenance: Provenance,
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

impl NamModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let l = &self.layout;
        let p = &self.params;
        let (h, w, c) = l.shapes.input;
        let (ka, kb) = self.arch.kernel;
        let (flat, hid) = l.shapes.dense[0];
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: self.arch.clone(),
            input_shape: [h, w, c],
            classes: self.classes,
            layers: vec![
                LayerRecord {
                    name: "conv".into(),
                    activation: "relu".into(),
                    shape: vec![ka, kb, c, self.arch.conv_channels],
                    weights: to_f32(&p[l.conv_w..l.conv_b]),
                    bias: to_f32(&p[l.conv_b..l.d1_w]),
                },
                LayerRecord {
                    name: "dense".into(),
                    activation: "relu".into(),
                    shape: vec![hid, flat],
                    weights: to_f32(&p[l.d1_w..l.d1_b]),
                    bias: to_f32(&p[l.d1_b..l.d2_w]),
                },
                LayerRecord {
                    name: "output".into(),
                    activation: "softmax".into(),
                    shape: vec![self.classes, hid],
                    weights: to_f32(&p[l.d2_w..l.d2_b]),
                    bias: to_f32(&p[l.d2_b..l.len]),
                },
            ],
            provenance: self.provenance.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let [h, w, c] = ck.input_shape;
        if w != FEATURE_WIDTH {
            return Err(Error::InvalidArgument(format!("input width {w}, expected {FEATURE_WIDTH}")));
        }
        let mut m = Self::zeros(ck.architecture.clone(), h, c, ck.classes)?;
        let mut flat = Vec::with_capacity(m.params.len());
        for layer in &ck.layers {
            flat.extend(layer.weights.iter().map(|&v| v as f64));
            flat.extend(layer.bias.iter().map(|&v| v as f64));
        }
        m.set_params(&flat)?;
        m.provenance = ck.provenance.clone();
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_checkpoint(&serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
