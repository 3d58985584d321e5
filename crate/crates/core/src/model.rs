//! One-hidden-layer rectifier network `s = w2 · relu(W1 x + b1) + b2`.
//!
//! Under the DRP objective the network output is a logit and
//! `roi_hat = sigmoid(s)`; under the MSE objective it is a plain regression
//! output (used for the two S-learner regressors of the TPM-SL baseline).

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{RctDataset, RctSample};
use crate::error::{RdrpError, Result};
use crate::seed::{self, StreamRng};

pub const HIDDEN_MIN: usize = 10;
pub const HIDDEN_MAX: usize = 100;
/// `roi_hat` is clamped to `[ROI_EPS, 1 - ROI_EPS]` before any logarithm.
pub const ROI_EPS: f64 = 1e-12;
/// Floor for the TPM-SL cost-uplift denominator.
pub const UPLIFT_FLOOR: f64 = 1e-6;

const WEIGHT_MAGIC: &[u8; 4] = b"RDRP";
const WEIGHT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    d: usize,
    hidden: usize,
    /// Row-major `hidden x d`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpParams {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        MlpParams {
            d,
            hidden,
            w1: vec![0.0; hidden * d],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// All parameters flattened in file order: w1, b1, w2, b2.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn from_flat(d: usize, hidden: usize, flat: &[f64]) -> Result<Self> {
        let expected = hidden * d + 2 * hidden + 1;
        if flat.len() != expected {
            return Err(RdrpError::Shape {
                expected,
                got: flat.len(),
            });
        }
        let (w1, rest) = flat.split_at(hidden * d);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, rest) = rest.split_at(hidden);
        Ok(MlpParams {
            d,
            hidden,
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: rest[0],
        })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(RdrpError::Shape {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-activations of the hidden layer written into `pre`.
    fn pre_activations(&self, x: &[f64], pre: &mut [f64]) {
        for (j, p) in pre.iter_mut().enumerate() {
            let row = &self.w1[j * self.d..(j + 1) * self.d];
            *p = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(d: usize, hidden: usize, seed: u64) -> Result<MlpParams> {
    if d == 0 {
        return Err(RdrpError::InvalidConfig("input dimension must be at least 1".into()));
    }
    if !(HIDDEN_MIN..=HIDDEN_MAX).contains(&hidden) {
        return Err(RdrpError::InvalidConfig(format!(
            "hidden width {hidden} outside [{HIDDEN_MIN}, {HIDDEN_MAX}]"
        )));
    }
    let mut rng = seed::rng_for(seed, &[seed::label("init")]);
    let mut p = MlpParams::zeros(d, hidden);
    let bound1 = (6.0 / (d + hidden) as f64).sqrt();
    for w in &mut p.w1 {
        *w = rng.random_range(-bound1..=bound1);
    }
    let bound2 = (6.0 / (hidden + 1) as f64).sqrt();
    for w in &mut p.w2 {
        *w = rng.random_range(-bound2..=bound2);
    }
    Ok(p)
}

pub enum ForwardMode<'a> {
    Deterministic,
    /// Inverted dropout on the hidden layer: each unit survives with
    /// probability `retention` and survivors are scaled by `1 / retention`.
    Dropout {
        retention: f64,
        rng: &'a mut StreamRng,
    },
}

pub fn forward(params: &MlpParams, x: &[f64], mode: ForwardMode<'_>) -> Result<f64> {
    params.check_input(x)?;
    let mut s = params.b2;
    match mode {
        ForwardMode::Deterministic => {
            for j in 0..params.hidden {
                let row = &params.w1[j * params.d..(j + 1) * params.d];
                let pre = params.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                s += params.w2[j] * pre.max(0.0);
            }
        }
        ForwardMode::Dropout { retention, rng } => {
            if !(retention > 0.0 && retention <= 1.0) {
                return Err(RdrpError::InvalidArgument(format!(
                    "retention {retention} outside (0, 1]"
                )));
            }
            let scale = 1.0 / retention;
            for j in 0..params.hidden {
                let u: f64 = rng.random();
                if u >= retention {
                    continue;
                }
                let row = &params.w1[j * params.d..(j + 1) * params.d];
                let pre = params.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                s += params.w2[j] * (pre.max(0.0) * scale);
            }
        }
    }
    Ok(s)
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(s)` clamped into `[ROI_EPS, 1 - ROI_EPS]`.
pub fn roi_from_score(s: f64) -> f64 {
    sigmoid(s).clamp(ROI_EPS, 1.0 - ROI_EPS)
}

pub fn predict_roi(params: &MlpParams, x: &[f64]) -> Result<f64> {
    Ok(roi_from_score(forward(params, x, ForwardMode::Deterministic)?))
}

/// A training batch; for the DRP objective both arms must be present.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    samples: Vec<&'a RctSample>,
    n_treated: usize,
}

impl<'a> Batch<'a> {
    pub fn new(samples: Vec<&'a RctSample>) -> Self {
        let n_treated = samples.iter().filter(|s| s.t).count();
        Batch { samples, n_treated }
    }

    pub fn from_dataset(ds: &'a RctDataset) -> Self {
        Batch::new(ds.samples().iter().collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_treated(&self) -> usize {
        self.n_treated
    }

    pub fn n_control(&self) -> usize {
        self.samples.len() - self.n_treated
    }

    fn require_both_arms(&self) -> Result<(f64, f64)> {
        if self.n_treated == 0 || self.n_control() == 0 {
            return Err(RdrpError::DegenerateBatch {
                n1: self.n_treated,
                n0: self.n_control(),
            });
        }
        Ok((self.n_treated as f64, self.n_control() as f64))
    }
}

/// Per-sample DRP term `y_r ln(roi / (1 - roi)) + y_c ln(1 - roi)`.
fn drp_term(y_r: f64, y_c: f64, roi: f64) -> f64 {
    y_r * (roi / (1.0 - roi)).ln() + y_c * (1.0 - roi).ln()
}

/// DRP loss of per-sample scores, given as `(sample, s)` pairs.
pub fn drp_loss_from_scores<'a>(
    scored: impl Iterator<Item = (&'a RctSample, f64)>,
) -> Result<f64> {
    let (mut sum1, mut sum0, mut n1, mut n0) = (0.0, 0.0, 0usize, 0usize);
    for (smp, s) in scored {
        let term = drp_term(smp.y_r, smp.y_c, roi_from_score(s));
        if smp.t {
            sum1 += term;
            n1 += 1;
        } else {
            sum0 += term;
            n0 += 1;
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(RdrpError::DegenerateBatch { n1, n0 });
    }
    Ok(-(sum1 / n1 as f64 - sum0 / n0 as f64))
}

pub fn drp_loss(params: &MlpParams, batch: &Batch<'_>) -> Result<f64> {
    batch.require_both_arms()?;
    let scores = batch
        .samples
        .iter()
        .map(|s| forward(params, &s.x, ForwardMode::Deterministic))
        .collect::<Result<Vec<f64>>>()?;
    drp_loss_from_scores(batch.samples.iter().copied().zip(scores))
}

/// `dL/ds_i` for one sample: `-(y_r - y_c roi) / N1` if treated,
/// `+(y_r - y_c roi) / N0` otherwise. Zero when `roi` sits on the clamp.
fn drp_score_grad(smp: &RctSample, s: f64, n1: f64, n0: f64) -> f64 {
    let raw = sigmoid(s);
    if !(ROI_EPS..=1.0 - ROI_EPS).contains(&raw) {
        return 0.0;
    }
    let g = smp.y_r - smp.y_c * raw;
    if smp.t {
        -g / n1
    } else {
        g / n0
    }
}

/// Gradient buffers with the same layout as [`MlpParams`].
pub type Gradient = MlpParams;

/// Accumulates `ds/dθ · g` for one input into `grad`; returns nothing.
fn backprop(params: &MlpParams, x: &[f64], g: f64, pre: &[f64], grad: &mut Gradient) {
    let d = params.d;
    grad.b2 += g;
    for j in 0..params.hidden {
        let h = pre[j].max(0.0);
        grad.w2[j] += g * h;
        if pre[j] > 0.0 {
            let dpre = g * params.w2[j];
            grad.b1[j] += dpre;
            let row = &mut grad.w1[j * d..(j + 1) * d];
            for (w, v) in row.iter_mut().zip(x) {
                *w += dpre * v;
            }
        }
    }
}

/// Exact gradient of [`drp_loss`] with respect to every parameter.
pub fn drp_loss_grad(params: &MlpParams, batch: &Batch<'_>) -> Result<Gradient> {
    let (n1, n0) = batch.require_both_arms()?;
    let mut grad = MlpParams::zeros(params.d, params.hidden);
    let mut pre = vec![0.0; params.hidden];
    for smp in &batch.samples {
        params.check_input(&smp.x)?;
        params.pre_activations(&smp.x, &mut pre);
        let s = params.b2
            + pre
                .iter()
                .zip(&params.w2)
                .map(|(p, w)| w * p.max(0.0))
                .sum::<f64>();
        let g = drp_score_grad(smp, s, n1, n0);
        if g != 0.0 {
            backprop(params, &smp.x, g, &pre, &mut grad);
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionTarget {
    Revenue,
    Cost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "target")]
pub enum Objective {
    Drp,
    /// Squared error against one outcome, with the treatment flag appended
    /// to the features as input `d + 1`.
    MseRegression(RegressionTarget),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden: usize,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 256,
            learning_rate: 0.01,
            momentum: 0.9,
            hidden: 32,
            seed: 0,
            objective: Objective::Drp,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(RdrpError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(RdrpError::InvalidConfig("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(RdrpError::InvalidConfig(format!(
                "learning_rate = {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(RdrpError::InvalidConfig(format!("momentum = {}", self.momentum)));
        }
        Ok(())
    }
}

/// Treatment-augmented input `[x, t]` used by the regression objective.
pub fn with_treatment(x: &[f64], t: bool) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + 1);
    v.extend_from_slice(x);
    v.push(if t { 1.0 } else { 0.0 });
    v
}

pub fn train(ds: &RctDataset, config: &TrainConfig) -> Result<MlpParams> {
    train_with_history(ds, config).map(|(p, _)| p)
}

/// Mini-batch SGD with momentum. Returns the final parameters and the mean
/// batch loss of every epoch.
pub fn train_with_history(ds: &RctDataset, config: &TrainConfig) -> Result<(MlpParams, Vec<f64>)> {
    config.validate()?;
    if ds.is_empty() {
        return Err(RdrpError::DegenerateDataset("training set is empty".into()));
    }
    match config.objective {
        Objective::Drp => train_drp(ds, config),
        Objective::MseRegression(target) => train_mse(ds, config, target),
    }
}

struct Sgd {
    velocity: Vec<f64>,
    lr: f64,
    momentum: f64,
}

impl Sgd {
    fn new(n: usize, lr: f64, momentum: f64) -> Self {
        Sgd {
            velocity: vec![0.0; n],
            lr,
            momentum,
        }
    }

    fn step(&mut self, params: &mut MlpParams, grad: &Gradient) {
        let (lr, mu) = (self.lr, self.momentum);
        let pairs = params
            .w1
            .iter_mut()
            .zip(&grad.w1)
            .chain(params.b1.iter_mut().zip(&grad.b1))
            .chain(params.w2.iter_mut().zip(&grad.w2))
            .chain(std::iter::once((&mut params.b2, &grad.b2)));
        for ((p, g), v) in pairs.zip(self.velocity.iter_mut()) {
            *v = mu * *v - lr * g;
            *p += *v;
        }
    }
}

fn reset(grad: &mut Gradient) {
    grad.w1.iter_mut().for_each(|v| *v = 0.0);
    grad.b1.iter_mut().for_each(|v| *v = 0.0);
    grad.w2.iter_mut().for_each(|v| *v = 0.0);
    grad.b2 = 0.0;
}

fn train_drp(ds: &RctDataset, config: &TrainConfig) -> Result<(MlpParams, Vec<f64>)> {
    let mut treated: Vec<usize> = Vec::with_capacity(ds.n_treated());
    let mut control: Vec<usize> = Vec::with_capacity(ds.n_control());
    for (i, s) in ds.samples().iter().enumerate() {
        if s.t {
            treated.push(i);
        } else {
            control.push(i);
        }
    }
    if treated.is_empty() || control.is_empty() {
        return Err(RdrpError::DegenerateDataset(format!(
            "DRP training needs both arms (treated={}, control={})",
            treated.len(),
            control.len()
        )));
    }

    // Stratified batches: every batch receives a proportional share of each
    // arm, so the per-arm means in the loss are always defined.
    let n = ds.len();
    let n_batches = (n as f64 / config.batch_size as f64)
        .round()
        .max(1.0)
        .min(treated.len().min(control.len()) as f64) as usize;

    let mut params = init_params(ds.dim(), config.hidden, config.seed)?;
    let mut rng = seed::rng_for(config.seed, &[seed::label("batches")]);
    let mut sgd = Sgd::new(params.num_params(), config.learning_rate, config.momentum);
    let mut grad = MlpParams::zeros(ds.dim(), config.hidden);
    let mut pre = vec![0.0; config.hidden];
    let mut history = Vec::with_capacity(config.epochs);
    let samples = ds.samples();

    for epoch in 0..config.epochs {
        treated.shuffle(&mut rng);
        control.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for b in 0..n_batches {
            let t_part = &treated[b * treated.len() / n_batches..(b + 1) * treated.len() / n_batches];
            let c_part = &control[b * control.len() / n_batches..(b + 1) * control.len() / n_batches];
            let (n1, n0) = (t_part.len() as f64, c_part.len() as f64);
            reset(&mut grad);
            let (mut sum1, mut sum0) = (0.0, 0.0);
            for &i in t_part.iter().chain(c_part) {
                let smp = &samples[i];
                params.pre_activations(&smp.x, &mut pre);
                let s = params.b2
                    + pre
                        .iter()
                        .zip(&params.w2)
                        .map(|(p, w)| w * p.max(0.0))
                        .sum::<f64>();
                let term = drp_term(smp.y_r, smp.y_c, roi_from_score(s));
                if smp.t {
                    sum1 += term;
                } else {
                    sum0 += term;
                }
                let g = drp_score_grad(smp, s, n1, n0);
                if g != 0.0 {
                    backprop(&params, &smp.x, g, &pre, &mut grad);
                }
            }
            epoch_loss += -(sum1 / n1 - sum0 / n0);
            sgd.step(&mut params, &grad);
        }
        let mean = epoch_loss / n_batches as f64;
        log::debug!("drp epoch {epoch}: mean batch loss {mean:.6}");
        history.push(mean);
    }
    Ok((params, history))
}

fn train_mse(
    ds: &RctDataset,
    config: &TrainConfig,
    target: RegressionTarget,
) -> Result<(MlpParams, Vec<f64>)> {
    let inputs: Vec<Vec<f64>> = ds.samples().iter().map(|s| with_treatment(&s.x, s.t)).collect();
    let targets: Vec<f64> = ds
        .samples()
        .iter()
        .map(|s| match target {
            RegressionTarget::Revenue => s.y_r,
            RegressionTarget::Cost => s.y_c,
        })
        .collect();

    let mut params = init_params(ds.dim() + 1, config.hidden, config.seed)?;
    let mut rng = seed::rng_for(config.seed, &[seed::label("batches")]);
    let mut sgd = Sgd::new(params.num_params(), config.learning_rate, config.momentum);
    let mut grad = MlpParams::zeros(ds.dim() + 1, config.hidden);
    let mut pre = vec![0.0; config.hidden];
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut epoch_loss, mut n_batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            reset(&mut grad);
            let m = chunk.len() as f64;
            let mut sq = 0.0;
            for &i in chunk {
                params.pre_activations(&inputs[i], &mut pre);
                let s = params.b2
                    + pre
                        .iter()
                        .zip(&params.w2)
                        .map(|(p, w)| w * p.max(0.0))
                        .sum::<f64>();
                let r = s - targets[i];
                sq += r * r;
                backprop(&params, &inputs[i], 2.0 * r / m, &pre, &mut grad);
            }
            epoch_loss += sq / m;
            n_batches += 1;
            sgd.step(&mut params, &grad);
        }
        let mean = epoch_loss / n_batches as f64;
        log::debug!("mse epoch {epoch}: mean batch loss {mean:.6}");
        history.push(mean);
    }
    Ok((params, history))
}

/// TPM-SL ROI: ratio of the two S-learner uplifts `f(x, 1) - f(x, 0)`.
pub fn tpm_sl_predict(model_r: &MlpParams, model_c: &MlpParams, x: &[f64]) -> Result<f64> {
    let uplift = |m: &MlpParams| -> Result<f64> {
        let on = forward(m, &with_treatment(x, true), ForwardMode::Deterministic)?;
        let off = forward(m, &with_treatment(x, false), ForwardMode::Deterministic)?;
        Ok(on - off)
    };
    let up_r = uplift(model_r)?;
    let up_c = uplift(model_c)?.max(UPLIFT_FLOOR);
    Ok(up_r / up_c)
}

pub fn write_params(params: &MlpParams, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(WEIGHT_MAGIC)?;
    w.write_all(&WEIGHT_VERSION.to_le_bytes())?;
    w.write_all(&(params.d as u32).to_le_bytes())?;
    w.write_all(&(params.hidden as u32).to_le_bytes())?;
    for v in params.to_flat() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_params(mut r: impl Read) -> Result<MlpParams> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| RdrpError::Corruption(format!("read failed: {e}")))?;
    if bytes.len() < 16 {
        if bytes.len() >= 4 && &bytes[..4] != WEIGHT_MAGIC {
            return Err(RdrpError::Format("bad magic".into()));
        }
        return Err(RdrpError::Corruption(format!(
            "header truncated ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..4] != WEIGHT_MAGIC {
        return Err(RdrpError::Format("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != WEIGHT_VERSION {
        return Err(RdrpError::Format(format!("unsupported version {version}")));
    }
    let (d, hidden) = (word(8) as usize, word(12) as usize);
    if d == 0 || !(HIDDEN_MIN..=HIDDEN_MAX).contains(&hidden) {
        return Err(RdrpError::Format(format!("invalid dimensions d={d}, hidden={hidden}")));
    }
    let count = hidden * d + 2 * hidden + 1;
    let body = &bytes[16..];
    if body.len() != count * 8 {
        return Err(RdrpError::Corruption(format!(
            "expected {} payload bytes for d={d}, hidden={hidden}, found {}",
            count * 8,
            body.len()
        )));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if !flat.iter().all(|v| v.is_finite()) {
        return Err(RdrpError::Corruption("non-finite weight".into()));
    }
    MlpParams::from_flat(d, hidden, &flat)
}

pub fn save_params(params: &MlpParams, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + params.num_params() * 8);
    write_params(params, &mut buf).map_err(|e| RdrpError::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| RdrpError::io(path, e))
}

pub fn load_params(path: &Path) -> Result<MlpParams> {
    let f = std::fs::File::open(path).map_err(|e| RdrpError::io(path, e))?;
    read_params(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, OutcomeModel, ShiftSpec, SyntheticConfig};
    use rand::SeedableRng;

    fn smp(x: Vec<f64>, t: bool, y_r: f64, y_c: f64) -> RctSample {
        RctSample { x, t, y_r, y_c }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_params(12, 64, 3).unwrap();
        assert_eq!(a, init_params(12, 64, 3).unwrap());
        assert_eq!(a.w1.len(), 768);
        let bound = (6.0f64 / 76.0).sqrt();
        assert!(a.w1.iter().all(|w| w.abs() <= bound));
        assert!(a.b1.iter().all(|&b| b == 0.0) && a.b2 == 0.0);
        assert!(matches!(init_params(12, 200, 3), Err(RdrpError::InvalidConfig(_))));
        assert!(matches!(init_params(12, 9, 3), Err(RdrpError::InvalidConfig(_))));
    }

    #[test]
    fn forward_basics() {
        let zero = MlpParams::zeros(3, 10);
        assert_eq!(forward(&zero, &[1.0, -2.0, 3.0], ForwardMode::Deterministic).unwrap(), 0.0);
        assert!(matches!(
            forward(&zero, &[1.0], ForwardMode::Deterministic),
            Err(RdrpError::Shape { expected: 3, got: 1 })
        ));

        let p = init_params(3, 16, 1).unwrap();
        let x = [0.3, -1.2, 0.8];
        let det = forward(&p, &x, ForwardMode::Deterministic).unwrap();
        let mut rng = StreamRng::seed_from_u64(0);
        let full = forward(&p, &x, ForwardMode::Dropout { retention: 1.0, rng: &mut rng }).unwrap();
        assert_eq!(det, full);
    }

    #[test]
    fn dropout_is_unbiased_in_expectation() {
        let p = init_params(4, 32, 7).unwrap();
        let x = [0.5, -0.3, 1.1, 0.2];
        let det = forward(&p, &x, ForwardMode::Deterministic).unwrap();
        let mut rng = StreamRng::seed_from_u64(99);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| forward(&p, &x, ForwardMode::Dropout { retention: 0.9, rng: &mut rng }).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let se = (var / draws.len() as f64).sqrt();
        assert!((mean - det).abs() <= (3.0 * se).max(0.05 * det.abs()), "{mean} vs {det}");
    }

    #[test]
    fn predict_roi_saturates_inside_open_interval() {
        let mut p = MlpParams::zeros(1, 10);
        assert_eq!(predict_roi(&p, &[0.0]).unwrap(), 0.5);
        p.b2 = 20.0;
        let r = predict_roi(&p, &[0.0]).unwrap();
        assert!(r > 0.9999 && r < 1.0);
        p.b2 = 800.0;
        assert_eq!(predict_roi(&p, &[0.0]).unwrap(), 1.0 - ROI_EPS);
        p.b2 = -800.0;
        assert_eq!(predict_roi(&p, &[0.0]).unwrap(), ROI_EPS);
    }

    #[test]
    fn drp_loss_hand_values() {
        let p = MlpParams::zeros(1, 10);
        let data = [smp(vec![0.0], true, 1.0, 1.0), smp(vec![0.0], false, 0.0, 0.0)];
        let l = drp_loss(&p, &Batch::new(data.iter().collect())).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-6);

        let zeros = [smp(vec![0.3], true, 0.0, 0.0), smp(vec![1.0], false, 0.0, 0.0)];
        let q = init_params(1, 10, 1).unwrap();
        assert_eq!(drp_loss(&q, &Batch::new(zeros.iter().collect())).unwrap(), 0.0);
        let g = drp_loss_grad(&q, &Batch::new(zeros.iter().collect())).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));

        let one_arm = [smp(vec![0.0], true, 1.0, 1.0)];
        assert!(matches!(
            drp_loss(&p, &Batch::new(one_arm.iter().collect())),
            Err(RdrpError::DegenerateBatch { n1: 1, n0: 0 })
        ));
    }

    #[test]
    fn drp_loss_is_antisymmetric_in_arms() {
        let p = init_params(2, 12, 5).unwrap();
        let data = vec![
            smp(vec![0.1, 0.2], true, 0.4, 1.0),
            smp(vec![-0.5, 1.0], true, 0.0, 1.0),
            smp(vec![0.7, -0.3], false, 0.2, 0.5),
        ];
        let swapped: Vec<RctSample> = data.iter().map(|s| RctSample { t: !s.t, ..s.clone() }).collect();
        let a = drp_loss(&p, &Batch::new(data.iter().collect())).unwrap();
        let b = drp_loss(&p, &Batch::new(swapped.iter().collect())).unwrap();
        assert!((a + b).abs() < 1e-12);
    }

    #[test]
    fn stationary_samples_have_zero_score_gradient() {
        // y_r = y_c * roi at roi = 0.5 (all-zero network)
        let p = MlpParams::zeros(1, 10);
        let data = [smp(vec![1.0], true, 0.3, 0.6), smp(vec![2.0], false, 0.5, 1.0)];
        let g = drp_loss_grad(&p, &Batch::new(data.iter().collect())).unwrap();
        assert_eq!(g.b2, 0.0);
        for smp in &data {
            assert_eq!(drp_score_grad(smp, 0.0, 1.0, 1.0), 0.0);
        }
    }

    #[test]
    fn train_decreases_loss_and_is_deterministic() {
        let cfg = SyntheticConfig {
            n: 5000,
            d: 4,
            outcome_model: OutcomeModel::Gaussian,
            noise: 0.1,
            seed: 1,
        };
        let (ds, _) = generate_synthetic(&cfg, &ShiftSpec::NONE).unwrap();
        let tc = TrainConfig {
            epochs: 100,
            seed: 2,
            ..TrainConfig::default()
        };
        let (p, hist) = train_with_history(&ds, &tc).unwrap();
        assert_eq!(hist.len(), 100);
        assert!(hist[99] < hist[0], "{} !< {}", hist[99], hist[0]);
        assert_eq!(train(&ds, &tc).unwrap(), p);

        let one_arm = ds.select(
            &(0..ds.len()).filter(|&i| ds.samples()[i].t).collect::<Vec<_>>(),
        );
        assert!(matches!(train(&one_arm, &tc), Err(RdrpError::DegenerateDataset(_))));
    }

    #[test]
    fn mse_regression_beats_constant_predictor() {
        let cfg = SyntheticConfig {
            n: 5000,
            d: 4,
            outcome_model: OutcomeModel::Gaussian,
            noise: 0.05,
            seed: 4,
        };
        let (ds, _) = generate_synthetic(&cfg, &ShiftSpec::NONE).unwrap();
        let tc = TrainConfig {
            epochs: 30,
            objective: Objective::MseRegression(RegressionTarget::Cost),
            ..TrainConfig::default()
        };
        let p = train(&ds, &tc).unwrap();
        assert_eq!(p.input_dim(), 5);
        let ys: Vec<f64> = ds.samples().iter().map(|s| s.y_c).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
        let mse = ds
            .samples()
            .iter()
            .map(|s| {
                let f = forward(&p, &with_treatment(&s.x, s.t), ForwardMode::Deterministic).unwrap();
                (f - s.y_c).powi(2)
            })
            .sum::<f64>()
            / ds.len() as f64;
        assert!(mse < var, "mse {mse} vs var {var}");
    }

    #[test]
    fn tpm_sl_ratio_and_floor() {
        let mut m = MlpParams::zeros(2, 10);
        // f(x, t) = relu(t) * 1: uplift 1 everywhere
        m.w1[1] = 1.0;
        m.w2[0] = 1.0;
        assert_eq!(tpm_sl_predict(&m, &m, &[0.3]).unwrap(), 1.0);

        let mut tiny = m.clone();
        tiny.w2[0] = 1e-12;
        let v = tpm_sl_predict(&m, &tiny, &[0.3]).unwrap();
        assert!(v.is_finite());
        assert_eq!(v, 1.0 / UPLIFT_FLOOR);
    }

    #[test]
    fn weight_file_round_trip_and_errors() {
        let p = init_params(5, 20, 9).unwrap();
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * p.num_params());
        let q = read_params(buf.as_slice()).unwrap();
        assert_eq!(
            p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            q.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );

        assert!(matches!(read_params(&buf[..buf.len() - 3]), Err(RdrpError::Corruption(_))));
        assert!(matches!(read_params(&buf[..10]), Err(RdrpError::Corruption(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_params(bad.as_slice()), Err(RdrpError::Format(_))));
        let mut v2 = buf.clone();
        v2[4] = 2;
        assert!(matches!(read_params(v2.as_slice()), Err(RdrpError::Format(_))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rdrp");
        save_params(&p, &path).unwrap();
        assert_eq!(load_params(&path).unwrap(), p);
    }
}
