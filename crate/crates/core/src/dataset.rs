//! RCT datasets: the synthetic generator, CSV ingestion and the seeded
//! transforms (rescale, subsample, split) used to build the four
//! robustness settings.
//!
//! The synthetic population is a two-component Gaussian mixture. The
//! majority component sits at the origin; the minority component is offset
//! along the ROI score direction, so minority individuals have high ROI and
//! are rare in training. Covariate shift either translates every feature
//! (`MeanShift`) or rebalances the mixture from 0.9/0.1 to 0.5/0.5
//! (`MixtureReweight`). Shifted and unshifted runs with the same seed consume
//! identical random draws, so `Y | X` is unchanged by a shift.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{RdrpError, Result};
use crate::seed::{self, StreamRng};

/// One RCT record.
#[derive(Debug, Clone, PartialEq)]
pub struct RctSample {
    pub x: Vec<f64>,
    pub t: bool,
    pub y_r: f64,
    pub y_c: f64,
}

/// An immutable collection of RCT samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct RctDataset {
    samples: Vec<RctSample>,
    d: usize,
    n_treated: usize,
}

impl RctDataset {
    pub fn new(samples: Vec<RctSample>) -> Result<Self> {
        let d = samples.first().map_or(0, |s| s.x.len());
        Self::with_dim(samples, d)
    }

    /// Like [`RctDataset::new`] but with an explicit dimension, so that an
    /// empty dataset still knows its width.
    pub fn with_dim(samples: Vec<RctSample>, d: usize) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != d {
                return Err(RdrpError::Shape {
                    expected: d,
                    got: s.x.len(),
                });
            }
            if !s.x.iter().all(|v| v.is_finite()) || !s.y_r.is_finite() || !s.y_c.is_finite() {
                return Err(RdrpError::Validation {
                    row: i,
                    message: "non-finite value".into(),
                });
            }
        }
        let n_treated = samples.iter().filter(|s| s.t).count();
        Ok(Self {
            samples,
            d,
            n_treated,
        })
    }

    pub fn samples(&self) -> &[RctSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_treated(&self) -> usize {
        self.n_treated
    }

    pub fn n_control(&self) -> usize {
        self.samples.len() - self.n_treated
    }

    pub fn has_both_arms(&self) -> bool {
        self.n_treated > 0 && self.n_control() > 0
    }

    pub fn features(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.samples.iter().map(|s| s.x.as_slice())
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> RctDataset {
        let samples: Vec<RctSample> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let n_treated = samples.iter().filter(|s| s.t).count();
        RctDataset {
            samples,
            d: self.d,
            n_treated,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_to_io(path, e))?;
        let mut header: Vec<String> = (0..self.d).map(|j| format!("x{j}")).collect();
        header.extend(["t", "y_r", "y_c"].map(String::from));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
            row.push(if s.t { "1".into() } else { "0".into() });
            row.push(s.y_r.to_string());
            row.push(s.y_c.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| RdrpError::io(path, e))
    }
}

fn csv_to_io(path: &Path, e: csv::Error) -> RdrpError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => RdrpError::io(path, io),
        other => RdrpError::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Per-sample uplifts known only for synthetic data.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub tau_r: Vec<f64>,
    pub tau_c: Vec<f64>,
    pub roi: Vec<f64>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.roi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roi.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> GroundTruth {
        GroundTruth {
            tau_r: indices.iter().map(|&i| self.tau_r[i]).collect(),
            tau_c: indices.iter().map(|&i| self.tau_c[i]).collect(),
            roi: indices.iter().map(|&i| self.roi[i]).collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_to_io(path, e))?;
        w.write_record(["tau_r", "tau_c", "roi"])?;
        for i in 0..self.len() {
            w.write_record([
                self.tau_r[i].to_string(),
                self.tau_c[i].to_string(),
                self.roi[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| RdrpError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_to_io(path, e))?;
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| RdrpError::Schema(name.to_string()))
        };
        let (ir, ic, iroi) = (col("tau_r")?, col("tau_c")?, col("roi")?);
        let mut gt = GroundTruth {
            tau_r: Vec::new(),
            tau_c: Vec::new(),
            roi: Vec::new(),
        };
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            gt.tau_r.push(parse_cell(&rec, ir, row + 1, "tau_r")?);
            gt.tau_c.push(parse_cell(&rec, ic, row + 1, "tau_c")?);
            gt.roi.push(parse_cell(&rec, iroi, row + 1, "roi")?);
        }
        Ok(gt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeModel {
    Bernoulli,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d: usize,
    pub outcome_model: OutcomeModel,
    /// Standard deviation of the additive noise (Gaussian model only).
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub seed: u64,
}

fn default_noise() -> f64 {
    0.1
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(RdrpError::InvalidConfig(format!(
                "n = {} (need at least 4 samples)",
                self.n
            )));
        }
        if self.d < 1 {
            return Err(RdrpError::InvalidConfig("d must be at least 1".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(RdrpError::InvalidConfig(format!("noise = {}", self.noise)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    #[default]
    None,
    MeanShift,
    MixtureReweight,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    #[serde(default)]
    pub magnitude: f64,
}

impl ShiftSpec {
    pub const NONE: ShiftSpec = ShiftSpec {
        kind: ShiftKind::None,
        magnitude: 0.0,
    };

    pub fn mean_shift(magnitude: f64) -> Self {
        ShiftSpec {
            kind: ShiftKind::MeanShift,
            magnitude,
        }
    }

    pub fn mixture_reweight() -> Self {
        ShiftSpec {
            kind: ShiftKind::MixtureReweight,
            magnitude: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kind != ShiftKind::None && !(self.magnitude.is_finite() && self.magnitude >= 0.0) {
            return Err(RdrpError::InvalidConfig(format!(
                "shift magnitude = {}",
                self.magnitude
            )));
        }
        Ok(())
    }
}

/// Weight of the minority mixture component before and after reweighting.
pub const MINORITY_WEIGHT: f64 = 0.1;
pub const MINORITY_WEIGHT_SHIFTED: f64 = 0.5;
/// Distance of the minority component's mean from the origin, along the
/// ROI score direction.
pub const MINORITY_OFFSET: f64 = 2.0;
pub const ROI_MIN: f64 = 0.05;
pub const ROI_MAX: f64 = 0.95;

/// Fixed population coefficients for a given feature dimension.
///
/// They depend on `d` only, never on the sample seed, so every seed draws
/// from the same population.
#[derive(Debug, Clone)]
pub struct Population {
    roi_w: Vec<f64>,
    roi_bias: f64,
    cost_w: Vec<f64>,
    base_c_w: Vec<f64>,
    base_r_w: Vec<f64>,
    minority_mean: Vec<f64>,
}

impl Population {
    pub fn new(d: usize) -> Self {
        let mut rng = seed::rng_for(seed::label("rdrp-population"), &[d as u64]);
        let direction = |norm: f64, rng: &mut StreamRng| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let len = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|a| a * norm / len).collect::<Vec<f64>>()
        };
        let roi_w = direction(1.0, &mut rng);
        let cost_w = direction(0.8, &mut rng);
        let base_c_w = direction(0.8, &mut rng);
        let base_r_w = direction(0.8, &mut rng);
        let minority_mean = roi_w.iter().map(|w| w * MINORITY_OFFSET).collect();
        Population {
            roi_w,
            roi_bias: -0.5,
            cost_w,
            base_c_w,
            base_r_w,
            minority_mean,
        }
    }

    pub fn roi(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.roi_w, x) + self.roi_bias).clamp(ROI_MIN, ROI_MAX)
    }

    pub fn tau_c(&self, x: &[f64]) -> f64 {
        0.1 + 0.4 * sigmoid(dot(&self.cost_w, x))
    }

    pub fn base_c(&self, x: &[f64]) -> f64 {
        0.1 + 0.3 * sigmoid(dot(&self.base_c_w, x))
    }

    pub fn base_r(&self, x: &[f64]) -> f64 {
        0.1 + 0.3 * sigmoid(dot(&self.base_r_w, x))
    }

    pub fn minority_mean(&self) -> &[f64] {
        &self.minority_mean
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// Draws an RCT sample from the synthetic population.
pub fn generate_synthetic(
    config: &SyntheticConfig,
    shift: &ShiftSpec,
) -> Result<(RctDataset, GroundTruth)> {
    config.validate()?;
    shift.validate()?;
    let pop = Population::new(config.d);
    let minority_weight = match shift.kind {
        ShiftKind::MixtureReweight => MINORITY_WEIGHT_SHIFTED,
        _ => MINORITY_WEIGHT,
    };
    let offset = match shift.kind {
        ShiftKind::MeanShift => shift.magnitude,
        _ => 0.0,
    };

    let mut rng = seed::rng_for(config.seed, &[seed::label("generate")]);
    let mut samples = Vec::with_capacity(config.n);
    let mut gt = GroundTruth {
        tau_r: Vec::with_capacity(config.n),
        tau_c: Vec::with_capacity(config.n),
        roi: Vec::with_capacity(config.n),
    };
    for _ in 0..config.n {
        // Draw order is fixed so that shifted runs reuse the same variates.
        let u_comp: f64 = rng.random();
        let z: Vec<f64> = (0..config.d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let u_t: f64 = rng.random();
        let (e_c, e_r): (f64, f64) = match config.outcome_model {
            OutcomeModel::Bernoulli => (rng.random(), rng.random()),
            OutcomeModel::Gaussian => (
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ),
        };

        let minority = u_comp < minority_weight;
        let x: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(j, zj)| {
                let center = if minority { pop.minority_mean[j] } else { 0.0 };
                center + zj + offset
            })
            .collect();
        let t = u_t < 0.5;

        let roi = pop.roi(&x);
        let tau_c = pop.tau_c(&x);
        let tau_r = roi * tau_c;
        let mean_c = pop.base_c(&x) + if t { tau_c } else { 0.0 };
        let mean_r = pop.base_r(&x) + if t { tau_r } else { 0.0 };
        let (y_c, y_r) = match config.outcome_model {
            OutcomeModel::Bernoulli => (
                if e_c < mean_c { 1.0 } else { 0.0 },
                if e_r < mean_r { 1.0 } else { 0.0 },
            ),
            OutcomeModel::Gaussian => (mean_c + config.noise * e_c, mean_r + config.noise * e_r),
        };

        samples.push(RctSample { x, t, y_r, y_c });
        gt.tau_r.push(tau_r);
        gt.tau_c.push(tau_c);
        gt.roi.push(roi);
    }
    Ok((RctDataset::with_dim(samples, config.d)?, gt))
}

/// Maps CSV header names onto the RCT fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub features: Vec<String>,
    pub treatment: String,
    pub revenue: String,
    pub cost: String,
}

impl ColumnMap {
    /// CRITEO-UPLIFT v2: twelve features `f0..f11`, `conversion` as revenue
    /// and `visit` as cost.
    pub fn criteo() -> Self {
        ColumnMap {
            features: (0..12).map(|j| format!("f{j}")).collect(),
            treatment: "treatment".into(),
            revenue: "conversion".into(),
            cost: "visit".into(),
        }
    }

    /// The layout written by [`RctDataset::write_csv`] for dimension `d`.
    pub fn synthetic(d: usize) -> Self {
        ColumnMap {
            features: (0..d).map(|j| format!("x{j}")).collect(),
            treatment: "t".into(),
            revenue: "y_r".into(),
            cost: "y_c".into(),
        }
    }

    /// Every column other than `t`, `y_r` and `y_c` is a feature.
    pub fn infer(headers: &[String]) -> Self {
        ColumnMap {
            features: headers
                .iter()
                .filter(|h| !matches!(h.as_str(), "t" | "y_r" | "y_c"))
                .cloned()
                .collect(),
            treatment: "t".into(),
            revenue: "y_r".into(),
            cost: "y_c".into(),
        }
    }
}

fn parse_cell(rec: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<f64> {
    let raw = rec.get(idx).unwrap_or("");
    raw.trim().parse::<f64>().map_err(|_| RdrpError::Parse {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

pub fn csv_headers(path: &Path) -> Result<Vec<String>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_to_io(path, e))?;
    Ok(r.headers()?.iter().map(String::from).collect())
}

/// Reads a header-first, comma-separated RCT file. Row numbers in errors are
/// 1-based data rows (the header is not counted).
pub fn load_csv(path: &Path, columns: &ColumnMap) -> Result<RctDataset> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_to_io(path, e))?;
    let headers = r.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| RdrpError::Schema(name.to_string()))
    };
    let feature_idx: Vec<usize> = columns
        .features
        .iter()
        .map(|f| find(f))
        .collect::<Result<_>>()?;
    let t_idx = find(&columns.treatment)?;
    let r_idx = find(&columns.revenue)?;
    let c_idx = find(&columns.cost)?;

    let mut samples = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let x = feature_idx
            .iter()
            .zip(&columns.features)
            .map(|(&j, name)| parse_cell(&rec, j, row, name))
            .collect::<Result<Vec<f64>>>()?;
        let t = parse_cell(&rec, t_idx, row, &columns.treatment)?;
        let t = if t == 1.0 {
            true
        } else if t == 0.0 {
            false
        } else {
            return Err(RdrpError::Validation {
                row,
                message: format!("treatment `{}` = {t}, expected 0 or 1", columns.treatment),
            });
        };
        let y_r = parse_cell(&rec, r_idx, row, &columns.revenue)?;
        let y_c = parse_cell(&rec, c_idx, row, &columns.cost)?;
        if !x.iter().all(|v| v.is_finite()) || !y_r.is_finite() || !y_c.is_finite() {
            return Err(RdrpError::Validation {
                row,
                message: "non-finite value".into(),
            });
        }
        samples.push(RctSample { x, t, y_r, y_c });
    }
    RctDataset::with_dim(samples, columns.features.len())
}

pub fn rescale_outcomes(ds: &RctDataset, factor_r: f64, factor_c: f64) -> Result<RctDataset> {
    if !(factor_r > 0.0 && factor_r.is_finite() && factor_c > 0.0 && factor_c.is_finite()) {
        return Err(RdrpError::InvalidArgument(format!(
            "rescale factors must be positive, got ({factor_r}, {factor_c})"
        )));
    }
    let samples = ds
        .samples
        .iter()
        .map(|s| RctSample {
            x: s.x.clone(),
            t: s.t,
            y_r: s.y_r * factor_r,
            y_c: s.y_c * factor_c,
        })
        .collect();
    Ok(RctDataset {
        samples,
        d: ds.d,
        n_treated: ds.n_treated,
    })
}

/// Indices kept by independent Bernoulli(`rate`) thinning, in order.
pub fn subsample_indices(n: usize, rate: f64, seed: u64) -> Result<Vec<usize>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(RdrpError::InvalidArgument(format!(
            "subsample rate {rate} outside (0, 1]"
        )));
    }
    let mut rng = seed::rng_for(seed, &[seed::label("subsample")]);
    Ok((0..n)
        .filter(|_| {
            let u: f64 = rng.random();
            u < rate
        })
        .collect())
}

pub fn subsample(ds: &RctDataset, rate: f64, seed: u64) -> Result<RctDataset> {
    Ok(ds.select(&subsample_indices(ds.len(), rate, seed)?))
}

/// Seeded shuffle cut into three consecutive parts.
pub fn split_indices(
    n: usize,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<[Vec<usize>; 3]> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(RdrpError::InvalidArgument(format!(
            "split fractions ({a}, {b}, {c}) must be positive and sum to 1"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng_for(seed, &[seed::label("split")]);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_a = ((a * n as f64).round() as usize).min(n);
    let n_b = ((b * n as f64).round() as usize).min(n - n_a);
    let test = order.split_off(n_a + n_b);
    let cali = order.split_off(n_a);
    Ok([order, cali, test])
}

pub fn split(
    ds: &RctDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(RctDataset, RctDataset, RctDataset)> {
    let [a, b, c] = split_indices(ds.len(), fractions, seed)?;
    Ok((ds.select(&a), ds.select(&b), ds.select(&c)))
}

/// Treated-minus-control difference of the mean revenue and cost outcomes.
pub fn diff_in_means(ds: &RctDataset) -> Result<(f64, f64)> {
    diff_in_means_of(ds.samples.iter())
}

pub(crate) fn diff_in_means_of<'a>(
    samples: impl Iterator<Item = &'a RctSample>,
) -> Result<(f64, f64)> {
    let (mut n1, mut n0) = (0usize, 0usize);
    let (mut r1, mut c1, mut r0, mut c0) = (0.0, 0.0, 0.0, 0.0);
    for s in samples {
        if s.t {
            n1 += 1;
            r1 += s.y_r;
            c1 += s.y_c;
        } else {
            n0 += 1;
            r0 += s.y_r;
            c0 += s.y_c;
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(RdrpError::DegenerateDataset(format!(
            "diff-in-means needs both arms (treated={n1}, control={n0})"
        )));
    }
    let (n1, n0) = (n1 as f64, n0 as f64);
    Ok((r1 / n1 - r0 / n0, c1 / n1 - c0 / n0))
}
