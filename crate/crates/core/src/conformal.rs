//! Post-hoc robustness stage for a trained DRP network.
//!
//! On a calibration RCT sample:
//! 1. `roi_hat` from the deterministic forward pass;
//! 2. `roi*`, the zero of the shared-score loss derivative, by bisection;
//! 3. `r_hat`, the standard deviation of `roi_hat` over MC-dropout passes;
//! 4. `q_hat`, the conformal quantile of `|roi* - roi_hat| / r_hat`;
//! 5. the point-estimate calibration form with the best calibration AUCC.
//!
//! Test samples then get `roi_hat`, `r_hat`, the interval
//! `roi_hat ± r_hat q_hat` and the recalibrated score `roi_tilde` using the
//! frozen `(q_hat, form)`.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{diff_in_means, RctDataset};
use crate::error::{RdrpError, Result};
use crate::evaluation::{aucc, cost_curve, DEFAULT_BUCKETS};
use crate::model::{forward, predict_roi, roi_from_score, sigmoid, ForwardMode, MlpParams};
use crate::seed;

/// Floor applied to `r_hat` in score denominators and to `r_hat q_hat` in
/// the ratio form.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinarySearchConfig {
    pub epsilon: f64,
    /// Return the nearest admissible boundary (with a warning) instead of
    /// failing when the diff-in-means ratio falls outside `(eps, 1 - eps)`.
    #[serde(default)]
    pub clamp: bool,
}

impl Default for BinarySearchConfig {
    fn default() -> Self {
        BinarySearchConfig {
            epsilon: 1e-3,
            clamp: false,
        }
    }
}

impl BinarySearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.1) {
            return Err(RdrpError::InvalidConfig(format!(
                "epsilon {} outside (0, 0.1)",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Worst-case number of halvings, `floor(log2(1 / eps)) + 1`.
    pub fn max_iterations(&self) -> usize {
        (1.0 / self.epsilon).log2().floor() as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub passes: usize,
    pub retention: f64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            passes: 50,
            retention: 0.9,
            seed: 0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.passes < 2 {
            return Err(RdrpError::InvalidConfig(format!(
                "MC passes = {}, need at least 2",
                self.passes
            )));
        }
        if !(self.retention > 0.0 && self.retention < 1.0) {
            return Err(RdrpError::InvalidConfig(format!(
                "retention {} outside (0, 1)",
                self.retention
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationForm {
    /// `roi_hat (roi_hat + r_hat q_hat)`
    Product,
    /// `roi_hat / (r_hat q_hat)`
    Ratio,
    /// `roi_hat + r_hat q_hat`
    Sum,
    /// `roi_hat` unchanged; only offered when explicitly enabled.
    Identity,
}

impl CalibrationForm {
    /// The default candidate menu, in tie-break order.
    pub const STANDARD: [CalibrationForm; 3] = [
        CalibrationForm::Product,
        CalibrationForm::Ratio,
        CalibrationForm::Sum,
    ];

    pub fn candidates(include_identity: bool) -> Vec<CalibrationForm> {
        let mut v = Self::STANDARD.to_vec();
        if include_identity {
            v.push(CalibrationForm::Identity);
        }
        v
    }
}

impl fmt::Display for CalibrationForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CalibrationForm::Product => "product",
            CalibrationForm::Ratio => "ratio",
            CalibrationForm::Sum => "sum",
            CalibrationForm::Identity => "identity",
        })
    }
}

/// Serializes a possibly infinite quantile as a number, or `"inf"`.
mod quantile_serde {
    use super::*;

    pub fn serialize<S: Serializer>(q: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if q.is_infinite() && *q > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*q)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid q_hat {s:?}"))),
        }
    }
}

/// Frozen output of the calibration phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibration {
    pub roi_star: f64,
    #[serde(with = "quantile_serde")]
    pub q_hat: f64,
    pub alpha: f64,
    pub mc: McConfig,
    pub form: CalibrationForm,
    pub n: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ConformalCalibration {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cal: ConformalCalibration = serde_json::from_str(s)?;
        if !(cal.roi_star > 0.0 && cal.roi_star < 1.0) {
            return Err(RdrpError::Format(format!("roi_star {} outside (0, 1)", cal.roi_star)));
        }
        if !(cal.alpha > 0.0 && cal.alpha < 1.0) {
            return Err(RdrpError::Format(format!("alpha {} outside (0, 1)", cal.alpha)));
        }
        cal.mc.validate()?;
        Ok(cal)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| RdrpError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| RdrpError::io(path, e))?;
        Self::from_json(&s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiPrediction {
    pub roi_hat: f64,
    pub r_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub roi_tilde: f64,
}

/// `L'(s) = sigmoid(s) dY_c - dY_r`: derivative of the DRP loss when every
/// sample shares the score `s`.
pub fn loss_derivative(s: f64, ds: &RctDataset) -> Result<f64> {
    let (dr, dc) = diff_in_means(ds)?;
    Ok(shared_derivative(s, dr, dc))
}

fn shared_derivative(s: f64, delta_r: f64, delta_c: f64) -> f64 {
    sigmoid(s) * delta_c - delta_r
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiStarSearch {
    pub roi_star: f64,
    pub iterations: usize,
    pub warning: Option<String>,
}

/// Bisection for the zero of `L'` over `roi in (0, 1)`.
///
/// Starts at the midpoint of `[0, 1]`, halves by the sign of `L'` and stops
/// once the bracket is no wider than `eps` or `|L'| < eps`.
pub fn find_roi_star(ds: &RctDataset, cfg: &BinarySearchConfig) -> Result<RoiStarSearch> {
    cfg.validate()?;
    let (dr, dc) = diff_in_means(ds)?;
    if !(dc > 0.0) {
        return Err(RdrpError::AssumptionViolation(format!(
            "incremental cost dY_c = {dc} must be positive"
        )));
    }
    let eps = cfg.epsilon;
    let ratio = dr / dc;
    if !(ratio > eps && ratio < 1.0 - eps) {
        if !cfg.clamp {
            return Err(RdrpError::RoiScope {
                ratio,
                lo: eps,
                hi: 1.0 - eps,
            });
        }
        let bound = if ratio <= eps { eps } else { 1.0 - eps };
        let warning = format!("diff-in-means ratio {ratio} outside ({eps}, {}); roi* clamped to {bound}", 1.0 - eps);
        log::warn!("{warning}");
        return Ok(RoiStarSearch {
            roi_star: bound,
            iterations: 0,
            warning: Some(warning),
        });
    }

    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut roi = (lo + hi) / 2.0;
    let mut deriv = shared_derivative(logit(roi), dr, dc);
    let mut iterations = 0;
    while (hi - lo).abs() > eps {
        if deriv.abs() < eps {
            break;
        }
        if deriv > 0.0 {
            hi = roi;
        } else {
            lo = roi;
        }
        roi = (lo + hi) / 2.0;
        deriv = shared_derivative(logit(roi), dr, dc);
        iterations += 1;
    }
    Ok(RoiStarSearch {
        roi_star: roi,
        iterations,
        warning: None,
    })
}

/// Sample mean and standard deviation (divisor `K - 1`) of `roi_hat` over
/// `K` dropout passes. Pass `k` draws from the stream `(mc.seed, k)`.
pub fn mc_dropout_stats(params: &MlpParams, x: &[f64], mc: &McConfig) -> Result<(f64, f64)> {
    mc.validate()?;
    let mut vals = Vec::with_capacity(mc.passes);
    for k in 0..mc.passes {
        let mut rng = seed::rng_for(mc.seed, &[k as u64]);
        let s = forward(
            params,
            x,
            ForwardMode::Dropout {
                retention: mc.retention,
                rng: &mut rng,
            },
        )?;
        vals.push(roi_from_score(s));
    }
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok((mean, var.sqrt()))
}

/// [`mc_dropout_stats`] for many inputs in parallel; sample `i` uses the
/// master seed derived with `i`, so results do not depend on scheduling.
pub fn mc_dropout_batch(params: &MlpParams, xs: &[&[f64]], mc: &McConfig) -> Result<Vec<(f64, f64)>> {
    mc.validate()?;
    xs.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let per_sample = McConfig {
                seed: seed::derive_seed(mc.seed, &[seed::label("sample"), i as u64]),
                ..*mc
            };
            mc_dropout_stats(params, x, &per_sample)
        })
        .collect()
}

/// `|roi* - roi_hat| / max(r_hat, STD_FLOOR)` element-wise.
pub fn conformal_scores(roi_star: f64, roi_hat: &[f64], r_hat: &[f64]) -> Result<Vec<f64>> {
    if roi_hat.len() != r_hat.len() {
        return Err(RdrpError::Shape {
            expected: roi_hat.len(),
            got: r_hat.len(),
        });
    }
    Ok(roi_hat
        .iter()
        .zip(r_hat)
        .map(|(p, r)| (roi_star - p).abs() / r.max(STD_FLOOR))
        .collect())
}

/// The `ceil((1 - alpha)(n + 1))`-th smallest score, or `+inf` when that
/// rank exceeds `n`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(RdrpError::InvalidArgument("no conformal scores".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RdrpError::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(RdrpError::InvalidArgument("NaN conformal score".into()));
    }
    let n = scores.len();
    let k = quantile_rank(n, alpha);
    if k > n {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    Ok(*kth)
}

/// `ceil((1 - alpha)(n + 1))`, guarded against the product landing a hair
/// above an integer (e.g. `0.9 * 10 = 9.000000000000002`).
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let level = (1.0 - alpha) * (n as f64 + 1.0);
    let nearest = level.round();
    if (level - nearest).abs() <= 1e-9 * level.max(1.0) {
        nearest as usize
    } else {
        level.ceil() as usize
    }
}

/// `[roi_hat - r_hat q_hat, roi_hat + r_hat q_hat]` clamped to `[0, 1]`.
pub fn prediction_interval(roi_hat: f64, r_hat: f64, q_hat: f64) -> (f64, f64) {
    if q_hat.is_infinite() {
        return (0.0, 1.0);
    }
    let half = r_hat * q_hat;
    ((roi_hat - half).max(0.0), (roi_hat + half).min(1.0))
}

pub fn apply_form(form: CalibrationForm, roi_hat: f64, r_hat: f64, q_hat: f64) -> Result<f64> {
    if !q_hat.is_finite() {
        return Err(RdrpError::CalibrationDegenerate(format!(
            "q_hat = {q_hat}; calibration forms need a finite quantile"
        )));
    }
    let half = r_hat * q_hat;
    Ok(match form {
        CalibrationForm::Product => roi_hat * (roi_hat + half),
        CalibrationForm::Ratio => roi_hat / half.max(STD_FLOOR),
        CalibrationForm::Sum => roi_hat + half,
        CalibrationForm::Identity => roi_hat,
    })
}

/// Picks the candidate whose `roi_tilde` ranking has the largest AUCC on the
/// calibration set. Ties go to the earliest candidate.
pub fn select_form(
    cali_predictions: &[(f64, f64)],
    cali_ds: &RctDataset,
    q_hat: f64,
    candidates: &[CalibrationForm],
    buckets: usize,
) -> Result<CalibrationForm> {
    if candidates.is_empty() {
        return Err(RdrpError::InvalidArgument("no candidate forms".into()));
    }
    if cali_predictions.len() != cali_ds.len() {
        return Err(RdrpError::Shape {
            expected: cali_ds.len(),
            got: cali_predictions.len(),
        });
    }
    let mut best: Option<(CalibrationForm, f64)> = None;
    for &form in candidates {
        let tilde = cali_predictions
            .iter()
            .map(|&(p, r)| apply_form(form, p, r, q_hat))
            .collect::<Result<Vec<f64>>>()?;
        let score = aucc(&cost_curve(&tilde, cali_ds, buckets)?);
        log::debug!("form {form}: calibration AUCC {score:.6}");
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((form, score));
        }
    }
    Ok(best.unwrap().0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdrpConfig {
    pub alpha: f64,
    pub mc: McConfig,
    pub search: BinarySearchConfig,
    pub buckets: usize,
    /// Offer the identity form as a fourth candidate.
    pub identity_candidate: bool,
}

impl Default for RdrpConfig {
    fn default() -> Self {
        RdrpConfig {
            alpha: 0.1,
            mc: McConfig::default(),
            search: BinarySearchConfig::default(),
            buckets: DEFAULT_BUCKETS,
            identity_candidate: false,
        }
    }
}

/// Deterministic `roi_hat` and MC `r_hat` for each input.
pub fn point_and_spread(params: &MlpParams, xs: &[&[f64]], mc: &McConfig) -> Result<Vec<(f64, f64)>> {
    let stats = mc_dropout_batch(params, xs, mc)?;
    xs.iter()
        .zip(stats)
        .map(|(x, (_, std))| Ok((predict_roi(params, x)?, std)))
        .collect()
}

/// Calibration phase: returns the frozen artifact.
pub fn calibrate(params: &MlpParams, cali_ds: &RctDataset, cfg: &RdrpConfig) -> Result<ConformalCalibration> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(RdrpError::InvalidConfig(format!("alpha {} outside (0, 1)", cfg.alpha)));
    }
    cfg.mc.validate()?;
    if !cali_ds.has_both_arms() {
        return Err(RdrpError::DegenerateDataset(format!(
            "calibration set needs both arms (treated={}, control={})",
            cali_ds.n_treated(),
            cali_ds.n_control()
        )));
    }
    let xs: Vec<&[f64]> = cali_ds.features().collect();
    let preds = point_and_spread(params, &xs, &cfg.mc)?;

    let search = find_roi_star(cali_ds, &cfg.search)?;
    let roi_hat: Vec<f64> = preds.iter().map(|p| p.0).collect();
    let r_hat: Vec<f64> = preds.iter().map(|p| p.1).collect();
    let scores = conformal_scores(search.roi_star, &roi_hat, &r_hat)?;
    let q_hat = conformal_quantile(&scores, cfg.alpha)?;
    let form = select_form(
        &preds,
        cali_ds,
        q_hat,
        &CalibrationForm::candidates(cfg.identity_candidate),
        cfg.buckets,
    )?;
    Ok(ConformalCalibration {
        roi_star: search.roi_star,
        q_hat,
        alpha: cfg.alpha,
        mc: cfg.mc,
        form,
        n: cali_ds.len(),
        warnings: search.warning.into_iter().collect(),
    })
}

/// Test phase: applies a frozen calibration to new inputs.
pub fn predict_calibrated(
    params: &MlpParams,
    cal: &ConformalCalibration,
    xs: &[&[f64]],
) -> Result<Vec<RoiPrediction>> {
    point_and_spread(params, xs, &cal.mc)?
        .into_iter()
        .map(|(roi_hat, r_hat)| {
            let (lo, hi) = prediction_interval(roi_hat, r_hat, cal.q_hat);
            Ok(RoiPrediction {
                roi_hat,
                r_hat,
                lo,
                hi,
                roi_tilde: apply_form(cal.form, roi_hat, r_hat, cal.q_hat)?,
            })
        })
        .collect()
}

/// Full robust pipeline: calibrate on `cali_ds`, then predict `test_features`.
pub fn rdrp_predict(
    params: &MlpParams,
    cali_ds: &RctDataset,
    test_features: &[&[f64]],
    cfg: &RdrpConfig,
) -> Result<(Vec<RoiPrediction>, ConformalCalibration)> {
    let cal = calibrate(params, cali_ds, cfg)?;
    let preds = predict_calibrated(params, &cal, test_features)?;
    Ok((preds, cal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, OutcomeModel, RctSample, ShiftSpec, SyntheticConfig};
    use crate::model::{drp_loss_from_scores, init_params, train, TrainConfig};

    fn smp(t: bool, y_r: f64, y_c: f64) -> RctSample {
        RctSample {
            x: vec![0.0],
            t,
            y_r,
            y_c,
        }
    }

    fn ds(rows: &[(bool, f64, f64)]) -> RctDataset {
        RctDataset::new(rows.iter().map(|&(t, r, c)| smp(t, r, c)).collect()).unwrap()
    }

    #[test]
    fn closed_form_derivative_matches_finite_differences() {
        let data = ds(&[(true, 0.4, 1.0), (true, 0.1, 0.3), (false, 0.1, 0.4), (false, 0.0, 0.2)]);
        let shared_loss = |s: f64| drp_loss_from_scores(data.samples().iter().map(|x| (x, s))).unwrap();
        for &s in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-5;
            let fd = (shared_loss(s + h) - shared_loss(s - h)) / (2.0 * h);
            let cf = loss_derivative(s, &data).unwrap();
            assert!((fd - cf).abs() < 1e-8, "s={s}: {fd} vs {cf}");
        }
    }

    #[test]
    fn loss_derivative_examples() {
        let data = ds(&[(true, 0.4, 1.0), (false, 0.1, 0.4)]);
        assert!(loss_derivative(0.0, &data).unwrap().abs() < 1e-12);
        assert!((loss_derivative(logit(0.9), &data).unwrap() - 0.24).abs() < 1e-12);
        let grid: Vec<f64> = (0..10).map(|k| -4.0 + k as f64 * 0.9).collect();
        let vals: Vec<f64> = grid.iter().map(|&s| loss_derivative(s, &data).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
        assert!(loss_derivative(0.0, &ds(&[(true, 0.4, 1.0)])).is_err());
    }

    #[test]
    fn roi_star_examples() {
        let cfg = BinarySearchConfig::default();
        let a = find_roi_star(&ds(&[(true, 0.4, 1.0), (false, 0.1, 0.4)]), &cfg).unwrap();
        assert!((a.roi_star - 0.5).abs() <= 2.0 * cfg.epsilon);
        let b = find_roi_star(
            &ds(&[(true, 0.2, 1.0), (true, 0.2, 1.0), (false, 0.0, 0.0), (false, 0.0, 0.0)]),
            &cfg,
        )
        .unwrap();
        assert!((b.roi_star - 0.2).abs() <= 2.0 * cfg.epsilon);
        assert!(b.iterations <= cfg.max_iterations());

        let out = ds(&[(true, 1.0, 1.0), (false, 0.0, 0.5)]);
        assert!(matches!(find_roi_star(&out, &cfg), Err(RdrpError::RoiScope { .. })));
        let clamped = find_roi_star(&out, &BinarySearchConfig { clamp: true, ..cfg }).unwrap();
        assert_eq!(clamped.roi_star, 1.0 - cfg.epsilon);
        assert!(clamped.warning.is_some());

        let negative = ds(&[(true, 0.3, 0.1), (false, 0.1, 0.4)]);
        assert!(matches!(
            find_roi_star(&negative, &cfg),
            Err(RdrpError::AssumptionViolation(_))
        ));
    }

    #[test]
    fn roi_star_early_stop_error_is_bounded_by_eps_over_dc() {
        // With a small cost lift the |L'| < eps stop can fire away from the
        // root; the error is then below eps / dY_c.
        let cfg = BinarySearchConfig::default();
        for k in 1..200 {
            let ratio = 0.02 + 0.96 * k as f64 / 200.0;
            let dc = 0.1;
            let data = ds(&[(true, ratio * dc, dc), (false, 0.0, 0.0)]);
            let s = find_roi_star(&data, &cfg).unwrap();
            let err = (s.roi_star - ratio).abs();
            assert!(err <= cfg.epsilon / dc + 1e-12, "ratio {ratio}: err {err}");
            assert!(s.iterations <= cfg.max_iterations());
        }
    }

    #[test]
    fn mc_stats_edge_cases() {
        let zero = MlpParams::zeros(2, 10);
        let mc = McConfig { passes: 20, retention: 0.8, seed: 1 };
        assert_eq!(mc_dropout_stats(&zero, &[0.4, 1.0], &mc).unwrap(), (0.5, 0.0));

        let p = init_params(2, 16, 3).unwrap();
        let nearly_one = McConfig { retention: 1.0 - 1e-12, ..mc };
        let (_, std) = mc_dropout_stats(&p, &[0.4, 1.0], &nearly_one).unwrap();
        assert!(std < 1e-12, "std {std}");

        let a = mc_dropout_stats(&p, &[0.4, 1.0], &mc).unwrap();
        assert_eq!(a, mc_dropout_stats(&p, &[0.4, 1.0], &mc).unwrap());
        assert!(a.1 > 0.0);
        assert!(mc_dropout_stats(&p, &[0.4, 1.0], &McConfig { passes: 1, ..mc }).is_err());
    }

    #[test]
    fn score_examples() {
        let s = conformal_scores(0.5, &[0.4, 0.5, 0.3], &[0.05, 0.3, 0.0]).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-12);
        assert_eq!(s[1], 0.0);
        assert!((s[2] - 0.2 * 1e6).abs() < 1e-6);
        assert!(conformal_scores(0.5, &[0.4], &[]).is_err());
    }

    #[test]
    fn quantile_examples() {
        let ten: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        assert_eq!(conformal_quantile(&ten, 0.1).unwrap(), 1.0);
        assert_eq!(conformal_quantile(&[0.4, 0.1, 0.3, 0.2], 0.5).unwrap(), 0.3);
        assert_eq!(conformal_quantile(&[0.7], 0.1).unwrap(), f64::INFINITY);
        assert!(conformal_quantile(&[], 0.1).is_err());
        assert_eq!(quantile_rank(10, 0.1), 10);
        assert_eq!(quantile_rank(4, 0.5), 3);
        assert_eq!(quantile_rank(1, 0.1), 2);
    }

    #[test]
    fn interval_examples() {
        let (lo, hi) = prediction_interval(0.5, 0.1, 2.0);
        assert!((lo - 0.3).abs() < 1e-12 && (hi - 0.7).abs() < 1e-12);
        let (lo, hi) = prediction_interval(0.9, 0.2, 1.0);
        assert!((lo - 0.7).abs() < 1e-12);
        assert_eq!(hi, 1.0);
        assert_eq!(prediction_interval(0.42, 0.0, 3.0), (0.42, 0.42));
        assert_eq!(prediction_interval(0.42, 0.0, f64::INFINITY), (0.0, 1.0));
    }

    #[test]
    fn form_examples() {
        assert!((apply_form(CalibrationForm::Sum, 0.4, 0.05, 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((apply_form(CalibrationForm::Product, 0.5, 0.1, 2.0).unwrap() - 0.35).abs() < 1e-12);
        assert!((apply_form(CalibrationForm::Ratio, 0.5, 0.1, 2.0).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(apply_form(CalibrationForm::Identity, 0.5, 0.1, 2.0).unwrap(), 0.5);
        assert_eq!(apply_form(CalibrationForm::Ratio, 0.5, 0.0, 2.0).unwrap(), 0.5 / STD_FLOOR);
        assert!(matches!(
            apply_form(CalibrationForm::Sum, 0.5, 0.1, f64::INFINITY),
            Err(RdrpError::CalibrationDegenerate(_))
        ));
    }

    fn synthetic(n: usize, seed: u64) -> (RctDataset, crate::dataset::GroundTruth) {
        let cfg = SyntheticConfig {
            n,
            d: 3,
            outcome_model: OutcomeModel::Gaussian,
            noise: 0.05,
            seed,
        };
        generate_synthetic(&cfg, &ShiftSpec::NONE).unwrap()
    }

    #[test]
    fn select_form_tie_goes_to_product() {
        let (cali, _) = synthetic(2000, 1);
        // Constant r_hat: every form is a monotone map of roi_hat.
        let preds: Vec<(f64, f64)> = cali.features().map(|x| (0.3 + 0.1 * x[0].tanh(), 0.02)).collect();
        let f = select_form(&preds, &cali, 1.5, &CalibrationForm::STANDARD, 100).unwrap();
        assert_eq!(f, CalibrationForm::Product);
    }

    #[test]
    fn select_form_finds_the_only_informative_form() {
        // roi_hat carries no signal; r_hat is the true ROI. Only the sum form
        // (roi_hat + r_hat q_hat) ranks by the truth: product is dominated by
        // the roi_hat^2 noise, ratio ranks inversely.
        let (cali, gt) = synthetic(20_000, 2);
        let mut noise = crate::seed::rng_for(9, &[]);
        let preds: Vec<(f64, f64)> = gt
            .roi
            .iter()
            .map(|&r| {
                use rand::Rng;
                (0.5 + 0.001 * noise.random::<f64>(), r)
            })
            .collect();
        let f = select_form(&preds, &cali, 1.0, &CalibrationForm::STANDARD, 100).unwrap();
        assert_eq!(f, CalibrationForm::Sum);
    }

    #[test]
    fn select_form_identity_wins_when_every_form_hurts() {
        let (cali, gt) = synthetic(20_000, 3);
        // roi_hat is the truth; r_hat is large independent noise that
        // scrambles every non-identity form.
        let mut noise = crate::seed::rng_for(11, &[]);
        let preds: Vec<(f64, f64)> = gt
            .roi
            .iter()
            .map(|&r| {
                use rand::Rng;
                (r, 0.05 + noise.random::<f64>())
            })
            .collect();
        let f = select_form(&preds, &cali, 5.0, &CalibrationForm::candidates(true), 100).unwrap();
        assert_eq!(f, CalibrationForm::Identity);
    }

    #[test]
    fn rdrp_on_its_own_calibration_features_covers() {
        let (train_ds, _) = synthetic(3000, 4);
        let (cali, _) = synthetic(1000, 5);
        let params = train(&train_ds, &TrainConfig { epochs: 5, ..TrainConfig::default() }).unwrap();
        let cfg = RdrpConfig {
            mc: McConfig { passes: 20, retention: 0.9, seed: 6 },
            ..RdrpConfig::default()
        };
        let xs: Vec<&[f64]> = cali.features().collect();
        let (preds, cal) = rdrp_predict(&params, &cali, &xs, &cfg).unwrap();
        let intervals: Vec<(f64, f64)> = preds.iter().map(|p| (p.lo, p.hi)).collect();
        let cov = crate::evaluation::empirical_coverage(&intervals, cal.roi_star).unwrap();
        assert!(cov >= 0.9, "coverage {cov}");
        assert_eq!(cal.n, 1000);

        let (again, cal2) = rdrp_predict(&params, &cali, &xs, &cfg).unwrap();
        assert_eq!(cal, cal2);
        assert_eq!(preds, again);
    }

    #[test]
    fn zero_network_gives_degenerate_intervals() {
        let (cali, _) = synthetic(500, 7);
        let zero = MlpParams::zeros(3, 10);
        let xs: Vec<&[f64]> = cali.features().collect();
        let (preds, cal) = rdrp_predict(&zero, &cali, &xs, &RdrpConfig::default()).unwrap();
        assert_eq!(cal.form, CalibrationForm::Product);
        for p in &preds {
            assert_eq!((p.lo, p.hi), (0.5, 0.5));
            assert_eq!(p.roi_tilde, preds[0].roi_tilde);
        }
    }

    #[test]
    fn calibration_json_round_trip_with_infinite_quantile() {
        let cal = ConformalCalibration {
            roi_star: 0.31,
            q_hat: f64::INFINITY,
            alpha: 0.1,
            mc: McConfig::default(),
            form: CalibrationForm::Sum,
            n: 1,
            warnings: vec!["w".into()],
        };
        let json = cal.to_json().unwrap();
        assert!(json.contains("\"q_hat\": \"inf\""));
        assert!(json.contains("\"form\": \"sum\""));
        assert_eq!(ConformalCalibration::from_json(&json).unwrap(), cal);
        let finite = ConformalCalibration { q_hat: 2.5, ..cal };
        assert_eq!(ConformalCalibration::from_json(&finite.to_json().unwrap()).unwrap(), finite);
        assert!(ConformalCalibration::from_json(&json.replace("\"inf\"", "\"nan\"")).is_err());
    }
}
