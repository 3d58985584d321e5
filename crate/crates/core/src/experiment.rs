//! Four-setting benchmark: sufficient/insufficient training data crossed
//! with no/with covariate shift, for several ROI rankers.
//!
//! Per seed the sufficient dataset is generated once and split into a
//! training pool, a calibration part and a test part. Insufficient settings
//! thin the training pool; shifted settings regenerate the same draws under
//! the shift and take calibration and test rows from the same split indices.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{greedy_allocate_by_score, AllocationInstance};
use crate::conformal::{
    calibrate, find_roi_star, predict_calibrated, BinarySearchConfig, ConformalCalibration, McConfig,
    RdrpConfig,
};
use crate::dataset::{
    generate_synthetic, split_indices, subsample_indices, GroundTruth, OutcomeModel, RctDataset,
    ShiftSpec, SyntheticConfig,
};
use crate::error::{RdrpError, Result};
use crate::evaluation::{aucc, cost_curve, empirical_coverage, CostCurve};
use crate::model::{predict_roi, tpm_sl_predict, train, MlpParams, Objective, RegressionTarget, TrainConfig};
use crate::seed;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Setting {
    SuNo,
    SuCo,
    InNo,
    InCo,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::SuNo, Setting::SuCo, Setting::InNo, Setting::InCo];

    pub fn insufficient(self) -> bool {
        matches!(self, Setting::InNo | Setting::InCo)
    }

    pub fn shifted(self) -> bool {
        matches!(self, Setting::SuCo | Setting::InCo)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Setting {
    type Err = RdrpError;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|x| x.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| RdrpError::InvalidArgument(format!("unknown setting {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    TpmSl,
    Drp,
    Rdrp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Random, Method::TpmSl, Method::Drp, Method::Rdrp];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Random => "random",
            Method::TpmSl => "tpm_sl",
            Method::Drp => "drp",
            Method::Rdrp => "rdrp",
        })
    }
}

impl FromStr for Method {
    type Err = RdrpError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| RdrpError::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Synthetic data source; the seed comes from the experiment's seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub d: usize,
    pub outcome_model: OutcomeModel,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.1
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 100_000,
            d: 8,
            outcome_model: OutcomeModel::Bernoulli,
            noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub generator: GeneratorConfig,
    pub shift: ShiftSpec,
    pub settings: Vec<Setting>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub alpha: f64,
    pub mc: McConfig,
    pub search: BinarySearchConfig,
    /// Budgets as fractions of the test set's total true cost uplift.
    pub budget_fractions: Vec<f64>,
    pub split: (f64, f64, f64),
    pub insufficient_rate: f64,
    pub buckets: usize,
    pub train: TrainConfig,
    pub identity_candidate: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            generator: GeneratorConfig::default(),
            shift: ShiftSpec::mixture_reweight(),
            settings: Setting::ALL.to_vec(),
            methods: Method::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            alpha: 0.1,
            mc: McConfig::default(),
            search: BinarySearchConfig {
                clamp: true,
                ..BinarySearchConfig::default()
            },
            budget_fractions: vec![0.1, 0.2, 0.3, 0.5],
            split: (0.7, 0.15, 0.15),
            insufficient_rate: 0.15,
            buckets: 100,
            train: TrainConfig {
                epochs: 30,
                learning_rate: 0.003,
                ..TrainConfig::default()
            },
            identity_candidate: false,
            output_dir: PathBuf::from("rdrp-out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(RdrpError::InvalidConfig(format!(
                "config version {} (supported: {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.settings.is_empty() || self.methods.is_empty() || self.seeds.is_empty() {
            return Err(RdrpError::InvalidConfig(
                "settings, methods and seeds must be nonempty".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(RdrpError::InvalidConfig(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.insufficient_rate > 0.0 && self.insufficient_rate <= 1.0) {
            return Err(RdrpError::InvalidConfig(format!(
                "insufficient_rate {} outside (0, 1]",
                self.insufficient_rate
            )));
        }
        if let Some(b) = self.budget_fractions.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(RdrpError::InvalidConfig(format!("budget fraction {b}")));
        }
        if self.buckets < 2 {
            return Err(RdrpError::InvalidConfig("buckets must be at least 2".into()));
        }
        self.mc.validate()?;
        self.search.validate()?;
        self.train.validate()?;
        self.synthetic(0).validate()?;
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| RdrpError::io(path, e))?;
        Self::from_json(&s)
    }

    fn synthetic(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n: self.generator.n,
            d: self.generator.d,
            outcome_model: self.generator.outcome_model,
            noise: self.generator.noise,
            seed,
        }
    }

    fn rdrp(&self, seed: u64) -> RdrpConfig {
        RdrpConfig {
            alpha: self.alpha,
            mc: McConfig {
                seed: seed::derive_seed(self.mc.seed, &[seed::label("mc"), seed]),
                ..self.mc
            },
            search: self.search,
            buckets: self.buckets,
            identity_candidate: self.identity_candidate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetOutcome {
    pub budget_fraction: f64,
    pub revenue: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub setting: Setting,
    pub method: Method,
    pub seed: u64,
    pub aucc: Option<f64>,
    pub coverage: Option<f64>,
    pub revenue: Vec<BudgetOutcome>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: Setting,
    pub method: Method,
    pub n_ok: usize,
    pub aucc_mean: Option<f64>,
    pub aucc_std: Option<f64>,
    pub coverage_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub seed: u64,
    pub phase: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub seed: u64,
    pub calibration: ConformalCalibration,
}

/// Deterministic results first; wall-clock timings live in the trailing
/// `timings` section and are the only part that varies between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
    pub calibrations: BTreeMap<Setting, Vec<CalibrationRecord>>,
    #[serde(skip)]
    pub curves: BTreeMap<(Setting, Method), CostCurve>,
    pub timings: Vec<PhaseTiming>,
}

impl Report {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    pub fn summary_for(&self, setting: Setting, method: Method) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.setting == setting && r.method == method)
    }

    /// `metrics.json` content up to (not including) the timings section.
    pub fn deterministic_json(&self) -> Result<String> {
        let full = serde_json::to_string_pretty(self)?;
        Ok(match full.find("\"timings\"") {
            Some(i) => full[..i].to_string(),
            None => full,
        })
    }
}

struct Timer {
    seed: u64,
    log: Vec<PhaseTiming>,
}

impl Timer {
    fn time<T>(&mut self, phase: impl Into<String>, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.log.push(PhaseTiming {
            seed: self.seed,
            phase: phase.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

struct Models {
    drp: Option<Result<MlpParams>>,
    tpm: Option<Result<(MlpParams, MlpParams)>>,
}

struct SeedOutput {
    cells: Vec<CellResult>,
    curves: Vec<((Setting, Method), CostCurve)>,
    calibrations: Vec<(Setting, ConformalCalibration)>,
    timings: Vec<PhaseTiming>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let mut settings = config.settings.clone();
    settings.sort();
    settings.dedup();
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();

    let outputs: Vec<SeedOutput> = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, &settings, &methods, seed))
        .collect();

    let mut cells = Vec::new();
    let mut curves = BTreeMap::new();
    let mut calibrations: BTreeMap<Setting, Vec<CalibrationRecord>> = BTreeMap::new();
    let mut timings = Vec::new();
    for (out, &seed) in outputs.into_iter().zip(&config.seeds) {
        cells.extend(out.cells);
        for (key, curve) in out.curves {
            curves.entry(key).or_insert(curve);
        }
        for (setting, calibration) in out.calibrations {
            calibrations
                .entry(setting)
                .or_default()
                .push(CalibrationRecord { seed, calibration });
        }
        timings.extend(out.timings);
    }
    cells.sort_by_key(|c| (c.setting, c.method));

    let summary = settings
        .iter()
        .flat_map(|&s| methods.iter().map(move |&m| (s, m)))
        .map(|(setting, method)| {
            let rows: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.setting == setting && c.method == method && c.error.is_none())
                .collect();
            let auccs: Vec<f64> = rows.iter().filter_map(|c| c.aucc).collect();
            let covs: Vec<f64> = rows.iter().filter_map(|c| c.coverage).collect();
            let (aucc_mean, aucc_std) = mean_std(&auccs);
            SummaryRow {
                setting,
                method,
                n_ok: rows.len(),
                aucc_mean,
                aucc_std,
                coverage_mean: mean_std(&covs).0,
            }
        })
        .collect();

    Ok(Report {
        version: CONFIG_VERSION,
        cells,
        summary,
        calibrations,
        curves,
        timings,
    })
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

struct SettingData {
    cali: RctDataset,
    test: RctDataset,
    test_truth: GroundTruth,
}

fn run_seed(config: &ExperimentConfig, settings: &[Setting], methods: &[Method], seed: u64) -> SeedOutput {
    let mut timer = Timer {
        seed,
        log: Vec::new(),
    };
    let mut out = SeedOutput {
        cells: Vec::new(),
        curves: Vec::new(),
        calibrations: Vec::new(),
        timings: Vec::new(),
    };
    let fail_all = |out: &mut SeedOutput, settings: &[Setting], e: &RdrpError| {
        for &setting in settings {
            for &method in methods {
                out.cells.push(failed_cell(setting, method, seed, e));
            }
        }
    };

    let synth = config.synthetic(seed);
    let base = timer.time("generate", || generate_synthetic(&synth, &ShiftSpec::NONE));
    let (ds, gt) = match base {
        Ok(v) => v,
        Err(e) => {
            fail_all(&mut out, settings, &e);
            out.timings = timer.log;
            return out;
        }
    };
    let [train_idx, cali_idx, test_idx] = match split_indices(ds.len(), config.split, seed) {
        Ok(v) => v,
        Err(e) => {
            fail_all(&mut out, settings, &e);
            out.timings = timer.log;
            return out;
        }
    };
    let shifted = if settings.iter().any(|s| s.shifted()) {
        Some(timer.time("generate_shifted", || generate_synthetic(&synth, &config.shift)))
    } else {
        None
    };

    let train_pool = ds.select(&train_idx);
    let mut models: BTreeMap<bool, Models> = BTreeMap::new();
    for insufficient in [false, true] {
        if !settings.iter().any(|s| s.insufficient() == insufficient) {
            continue;
        }
        let train_ds = if insufficient {
            match subsample_indices(train_pool.len(), config.insufficient_rate, seed) {
                Ok(idx) => train_pool.select(&idx),
                Err(e) => {
                    let failed: Vec<Setting> =
                        settings.iter().copied().filter(|s| s.insufficient()).collect();
                    fail_all(&mut out, &failed, &e);
                    continue;
                }
            }
        } else {
            train_pool.clone()
        };
        let tag = if insufficient { "in" } else { "su" };
        let train_seed = seed::derive_seed(seed, &[seed::label("train"), u64::from(insufficient)]);
        let drp = methods
            .iter()
            .any(|m| matches!(m, Method::Drp | Method::Rdrp))
            .then(|| {
                timer.time(format!("train_drp_{tag}"), || {
                    let cfg = TrainConfig {
                        seed: train_seed,
                        objective: Objective::Drp,
                        ..config.train.clone()
                    };
                    train(&train_ds, &cfg)
                })
            });
        let tpm = methods.contains(&Method::TpmSl).then(|| {
            timer.time(format!("train_tpm_{tag}"), || {
                let fit = |target: RegressionTarget, k: u64| {
                    let cfg = TrainConfig {
                        seed: seed::derive_seed(train_seed, &[k]),
                        objective: Objective::MseRegression(target),
                        ..config.train.clone()
                    };
                    train(&train_ds, &cfg)
                };
                Ok((fit(RegressionTarget::Revenue, 1)?, fit(RegressionTarget::Cost, 2)?))
            })
        });
        models.insert(insufficient, Models { drp, tpm });
    }

    for (si, &setting) in settings.iter().enumerate() {
        let Some(models) = models.get(&setting.insufficient()) else {
            continue;
        };
        let data = if setting.shifted() {
            match shifted.as_ref().expect("generated when a shifted setting is requested") {
                Ok((sds, sgt)) => SettingData {
                    cali: sds.select(&cali_idx),
                    test: sds.select(&test_idx),
                    test_truth: sgt.select(&test_idx),
                },
                Err(e) => {
                    fail_all(&mut out, &[setting], e);
                    continue;
                }
            }
        } else {
            SettingData {
                cali: ds.select(&cali_idx),
                test: ds.select(&test_idx),
                test_truth: gt.select(&test_idx),
            }
        };

        for &method in methods {
            let cell = timer.time(format!("{setting}_{method}"), || {
                run_cell(config, method, seed, si as u64, models, &data)
            });
            match cell {
                Ok(c) => {
                    out.curves.push(((setting, method), c.curve));
                    if let Some(cal) = c.calibration {
                        out.calibrations.push((setting, cal));
                    }
                    out.cells.push(CellResult {
                        setting,
                        method,
                        seed,
                        aucc: Some(c.aucc),
                        coverage: c.coverage,
                        revenue: c.revenue,
                        error: None,
                    });
                }
                Err(e) => {
                    log::warn!("seed {seed} {setting}/{method} failed: {e}");
                    out.cells.push(failed_cell(setting, method, seed, &e));
                }
            }
        }
    }
    out.timings = timer.log;
    out
}

fn failed_cell(setting: Setting, method: Method, seed: u64, e: &RdrpError) -> CellResult {
    CellResult {
        setting,
        method,
        seed,
        aucc: None,
        coverage: None,
        revenue: Vec::new(),
        error: Some(e.to_string()),
    }
}

struct CellOutput {
    aucc: f64,
    curve: CostCurve,
    coverage: Option<f64>,
    revenue: Vec<BudgetOutcome>,
    calibration: Option<ConformalCalibration>,
}

fn model_ref<T>(m: &Option<Result<T>>) -> Result<&T> {
    match m {
        Some(Ok(v)) => Ok(v),
        Some(Err(e)) => Err(RdrpError::InvalidArgument(format!("training failed: {e}"))),
        None => Err(RdrpError::InvalidArgument("model not trained".into())),
    }
}

fn run_cell(
    config: &ExperimentConfig,
    method: Method,
    seed: u64,
    setting_index: u64,
    models: &Models,
    data: &SettingData,
) -> Result<CellOutput> {
    let xs: Vec<&[f64]> = data.test.features().collect();
    let mut coverage = None;
    let mut calibration = None;
    let scores: Vec<f64> = match method {
        Method::Random => {
            let mut rng = seed::rng_for(seed, &[seed::label("random"), setting_index]);
            xs.iter().map(|_| rng.random::<f64>()).collect()
        }
        Method::TpmSl => {
            let (mr, mc) = model_ref(&models.tpm)?;
            xs.iter()
                .map(|x| tpm_sl_predict(mr, mc, x))
                .collect::<Result<_>>()?
        }
        Method::Drp => {
            let p = model_ref(&models.drp)?;
            xs.iter().map(|x| predict_roi(p, x)).collect::<Result<_>>()?
        }
        Method::Rdrp => {
            let p = model_ref(&models.drp)?;
            let rcfg = config.rdrp(seed);
            let cal = calibrate(p, &data.cali, &rcfg)?;
            let preds = predict_calibrated(p, &cal, &xs)?;
            let target = find_roi_star(&data.test, &config.search)?;
            let intervals: Vec<(f64, f64)> = preds.iter().map(|p| (p.lo, p.hi)).collect();
            coverage = Some(empirical_coverage(&intervals, target.roi_star)?);
            calibration = Some(cal);
            preds.iter().map(|p| p.roi_tilde).collect()
        }
    };

    let curve = cost_curve(&scores, &data.test, config.buckets)?;
    let instance = AllocationInstance::new(
        data.test_truth.tau_r.clone(),
        data.test_truth.tau_c.clone(),
        0.0,
    )?;
    let total_cost: f64 = instance.tau_c.iter().sum();
    let revenue = config
        .budget_fractions
        .iter()
        .map(|&f| {
            let inst = AllocationInstance {
                budget: f * total_cost,
                ..instance.clone()
            };
            let a = greedy_allocate_by_score(&scores, &inst)?;
            Ok(BudgetOutcome {
                budget_fraction: f,
                revenue: a.total_revenue,
                cost: a.total_cost,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CellOutput {
        aucc: aucc(&curve),
        curve,
        coverage,
        revenue,
        calibration,
    })
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| RdrpError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| RdrpError::io(&tmp, e))?;
    f.sync_all().map_err(|e| RdrpError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| RdrpError::io(path, e))
}

fn csv_bytes(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w)?;
    w.into_inner()
        .map_err(|e| RdrpError::Format(format!("csv buffer: {e}")))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `metrics.json`, `summary.csv`, one cost curve per (setting,
/// method) from the first successful seed, and one calibration file per
/// setting. Returns the written paths.
pub fn emit_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| RdrpError::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("metrics.json");
    write_atomic(&path, (serde_json::to_string_pretty(report)? + "\n").as_bytes())?;
    written.push(path);

    let path = dir.join("summary.csv");
    let bytes = csv_bytes(|w| {
        w.write_record(["setting", "method", "n_ok", "aucc_mean", "aucc_std", "coverage_mean"])?;
        for r in &report.summary {
            w.write_record([
                r.setting.to_string(),
                r.method.to_string(),
                r.n_ok.to_string(),
                fmt_opt(r.aucc_mean),
                fmt_opt(r.aucc_std),
                fmt_opt(r.coverage_mean),
            ])?;
        }
        Ok(())
    })?;
    write_atomic(&path, &bytes)?;
    written.push(path);

    for ((setting, method), curve) in &report.curves {
        let path = dir.join(format!("cost_curve_{setting}_{method}.csv"));
        let bytes = csv_bytes(|w| {
            w.write_record(["bucket", "norm_cost", "norm_value"])?;
            for (k, (c, v)) in curve.points.iter().enumerate() {
                w.write_record([k.to_string(), c.to_string(), v.to_string()])?;
            }
            Ok(())
        })?;
        write_atomic(&path, &bytes)?;
        written.push(path);
    }

    for (setting, records) in &report.calibrations {
        let path = dir.join(format!("calibration_{setting}.json"));
        write_atomic(&path, (serde_json::to_string_pretty(records)? + "\n").as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(settings: Vec<Setting>, methods: Vec<Method>, seeds: Vec<u64>) -> ExperimentConfig {
        ExperimentConfig {
            generator: GeneratorConfig {
                n: 4000,
                d: 4,
                ..GeneratorConfig::default()
            },
            settings,
            methods,
            seeds,
            mc: McConfig {
                passes: 10,
                ..McConfig::default()
            },
            train: TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_round_trips_and_validates() {
        let cfg = ExperimentConfig::default();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), cfg);
        let bad = ExperimentConfig {
            seeds: vec![],
            ..cfg.clone()
        };
        assert!(bad.validate().is_err());
        let wrong_version = ExperimentConfig { version: 9, ..cfg };
        assert!(wrong_version.validate().is_err());
    }

    #[test]
    fn names_parse() {
        assert_eq!("InCo".parse::<Setting>().unwrap(), Setting::InCo);
        assert_eq!("suno".parse::<Setting>().unwrap(), Setting::SuNo);
        assert_eq!("tpm_sl".parse::<Method>().unwrap(), Method::TpmSl);
        assert!("dr".parse::<Method>().is_err());
    }

    #[test]
    fn duplicate_seeds_give_identical_rows() {
        let cfg = small(vec![Setting::InCo], vec![Method::Random, Method::Drp], vec![7, 7]);
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.cells.len(), 4);
        let drp: Vec<_> = r.cells.iter().filter(|c| c.method == Method::Drp).collect();
        assert_eq!(drp[0], drp[1]);
        assert_eq!(r.summary_for(Setting::InCo, Method::Drp).unwrap().aucc_std, Some(0.0));
    }

    #[test]
    fn every_requested_cell_is_present() {
        let cfg = small(Setting::ALL.to_vec(), Method::ALL.to_vec(), vec![1]);
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.cells.len(), 16);
        assert_eq!(r.failed(), 0, "{:?}", r.cells.iter().find(|c| c.error.is_some()));
        for c in &r.cells {
            assert_eq!(c.coverage.is_some(), c.method == Method::Rdrp);
            assert_eq!(c.revenue.len(), cfg.budget_fractions.len());
        }
        assert_eq!(r.calibrations.len(), 4);
    }

    #[test]
    fn emit_writes_expected_files() {
        let cfg = small(vec![Setting::SuNo], vec![Method::Random, Method::Rdrp], vec![3]);
        let r = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&r, dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 3);
        assert!(dir.path().join("cost_curve_SuNo_rdrp.csv").exists());
        assert!(dir.path().join("calibration_SuNo.json").exists());
        // Overwrite in place.
        emit_report(&r, dir.path()).unwrap();
        let leftovers = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().to_string_lossy().ends_with(".tmp"))
            .count();
        assert_eq!(leftovers, 0);
    }

    #[test]
    fn unwritable_dir_names_the_path() {
        let cfg = small(vec![Setting::SuNo], vec![Method::Random], vec![3]);
        let r = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = emit_report(&r, &blocker.join("out")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }

    #[test]
    fn failing_cells_are_recorded_not_fatal() {
        let mut cfg = small(vec![Setting::SuNo], vec![Method::Random, Method::Rdrp], vec![3]);
        // 600 calibration rows: the quantile rank exceeds n, so q_hat = inf.
        cfg.alpha = 0.001;
        let r = run_experiment(&cfg).unwrap();
        let rdrp = r.cells.iter().find(|c| c.method == Method::Rdrp).unwrap();
        assert!(rdrp.error.is_some());
        assert!(r.cells.iter().find(|c| c.method == Method::Random).unwrap().error.is_none());
        assert_eq!(r.failed(), 1);
    }
}
