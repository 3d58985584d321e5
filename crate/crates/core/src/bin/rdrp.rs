use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rdrp::allocation::{brute_force_allocate, greedy_allocate, greedy_allocate_by_score, AllocationInstance};
use rdrp::conformal::{
    calibrate, predict_calibrated, BinarySearchConfig, ConformalCalibration, McConfig, RdrpConfig,
};
use rdrp::dataset::{
    csv_headers, generate_synthetic, load_csv, ColumnMap, GroundTruth, OutcomeModel, RctDataset, ShiftSpec,
    SyntheticConfig,
};
use rdrp::evaluation::{aucc_report, cost_curve, DEFAULT_BUCKETS};
use rdrp::experiment::{emit_report, run_experiment, ExperimentConfig, Method, Setting};
use rdrp::model::{load_params, predict_roi, save_params, train, Objective, RegressionTarget, TrainConfig};
use rdrp::{RdrpError, Result};

#[derive(Parser)]
#[command(name = "rdrp", version, about = "Robust direct ROI prediction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic RCT dataset with known uplifts.
    Gen(GenArgs),
    /// Train a network on an RCT CSV and write its weights.
    Train(TrainArgs),
    /// Fit the conformal calibration for a DRP model on a calibration CSV.
    Calibrate(CalibrateArgs),
    /// Score a CSV with a DRP model, optionally with a calibration.
    Predict(PredictArgs),
    /// Solve a budgeted treatment assignment.
    Allocate(AllocateArgs),
    /// Cost curve and AUCC of a score column on an RCT CSV.
    Evaluate(EvaluateArgs),
    /// Run the four-setting benchmark from a JSON config.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ShiftArg {
    None,
    MeanShift,
    MixtureReweight,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutcomeArg {
    Bernoulli,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum ColumnsArg {
    /// `t`, `y_r`, `y_c`; every other column is a feature.
    Auto,
    /// CRITEO-UPLIFT v2 layout.
    Criteo,
}

#[derive(Args)]
struct DataArgs {
    /// Input RCT CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    columns: ColumnsArg,
}

impl DataArgs {
    fn load(&self) -> Result<RctDataset> {
        let map = match self.columns {
            ColumnsArg::Auto => ColumnMap::infer(&csv_headers(&self.data)?),
            ColumnsArg::Criteo => ColumnMap::criteo(),
        };
        load_csv(&self.data, &map)
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, value_enum, default_value = "bernoulli")]
    outcome_model: OutcomeArg,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, value_enum, default_value = "none")]
    shift: ShiftArg,
    #[arg(long, default_value_t = 1.0)]
    magnitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Optional ground-truth uplift CSV.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Drp,
    MseRevenue,
    MseCost,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "drp")]
    objective: ObjectiveArg,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 50)]
    passes: usize,
    #[arg(long, default_value_t = 0.9)]
    retention: f64,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Clamp roi* to the search range instead of failing.
    #[arg(long)]
    clamp: bool,
    /// Offer the unchanged point estimate as a calibration form.
    #[arg(long)]
    identity: bool,
    #[arg(long, default_value_t = DEFAULT_BUCKETS)]
    buckets: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Calibration JSON; adds r_hat, interval and recalibrated score.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Overrides the MC-dropout seed stored in the calibration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AllocateArgs {
    /// CSV with `tau_r` and `tau_c` columns (e.g. a ground-truth file).
    #[arg(long)]
    uplifts: PathBuf,
    /// Optional CSV whose `score` column ranks individuals instead of true ROI.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    budget: f64,
    /// Exhaustive optimum (small instances only).
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// CSV with one score per data row.
    #[arg(long)]
    scores: PathBuf,
    /// Score column name.
    #[arg(long, default_value = "score")]
    column: String,
    #[arg(long, default_value_t = DEFAULT_BUCKETS)]
    buckets: usize,
    #[arg(long)]
    curve_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    settings: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Write the effective config to this path and exit.
    #[arg(long)]
    print_config: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Allocate(a) => allocate_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Experiment(a) => experiment_cmd(a),
    }
    .map(|()| ExitCode::SUCCESS)
    .or_else(|e| match e {
        CmdError::CellsFailed(n) => {
            eprintln!("{n} experiment cell(s) failed");
            Ok(ExitCode::from(1))
        }
        CmdError::Rdrp(e) => Err(e),
    })
}

enum CmdError {
    Rdrp(RdrpError),
    CellsFailed(usize),
}

impl From<RdrpError> for CmdError {
    fn from(e: RdrpError) -> Self {
        CmdError::Rdrp(e)
    }
}

type CmdResult = std::result::Result<(), CmdError>;

fn gen(a: GenArgs) -> CmdResult {
    let cfg = SyntheticConfig {
        n: a.n,
        d: a.d,
        outcome_model: match a.outcome_model {
            OutcomeArg::Bernoulli => OutcomeModel::Bernoulli,
            OutcomeArg::Gaussian => OutcomeModel::Gaussian,
        },
        noise: a.noise,
        seed: a.seed,
    };
    let shift = match a.shift {
        ShiftArg::None => ShiftSpec::NONE,
        ShiftArg::MeanShift => ShiftSpec::mean_shift(a.magnitude),
        ShiftArg::MixtureReweight => ShiftSpec::mixture_reweight(),
    };
    let (ds, gt) = generate_synthetic(&cfg, &shift)?;
    ds.write_csv(&a.out)?;
    if let Some(p) = &a.truth {
        gt.write_csv(p)?;
    }
    log::info!("wrote {} rows to {}", ds.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let ds = a.data.load()?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        momentum: a.momentum,
        hidden: a.hidden,
        seed: a.seed,
        objective: match a.objective {
            ObjectiveArg::Drp => Objective::Drp,
            ObjectiveArg::MseRevenue => Objective::MseRegression(RegressionTarget::Revenue),
            ObjectiveArg::MseCost => Objective::MseRegression(RegressionTarget::Cost),
        },
    };
    let params = train(&ds, &cfg)?;
    save_params(&params, &a.out)?;
    log::info!("trained on {} rows; weights at {}", ds.len(), a.out.display());
    Ok(())
}

fn calibrate_cmd(a: CalibrateArgs) -> CmdResult {
    let params = load_params(&a.model)?;
    let ds = a.data.load()?;
    let cfg = RdrpConfig {
        alpha: a.alpha,
        mc: McConfig {
            passes: a.passes,
            retention: a.retention,
            seed: a.seed,
        },
        search: BinarySearchConfig {
            epsilon: a.epsilon,
            clamp: a.clamp,
        },
        buckets: a.buckets,
        identity_candidate: a.identity,
    };
    let cal = calibrate(&params, &ds, &cfg)?;
    cal.save(&a.out)?;
    log::info!(
        "roi* = {:.4}, q_hat = {}, form = {}",
        cal.roi_star,
        cal.q_hat,
        cal.form
    );
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| RdrpError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(csv::Writer::from_writer(f))
}

fn flush(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| RdrpError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn predict_cmd(a: PredictArgs) -> CmdResult {
    let params = load_params(&a.model)?;
    let ds = a.data.load()?;
    let xs: Vec<&[f64]> = ds.features().collect();
    let mut w = csv_writer(&a.out)?;
    match &a.calibration {
        Some(path) => {
            let mut cal = ConformalCalibration::load(path)?;
            if let Some(seed) = a.seed {
                cal.mc.seed = seed;
            }
            w.write_record(["score", "roi_hat", "r_hat", "lo", "hi"]).map_err(RdrpError::from)?;
            for p in predict_calibrated(&params, &cal, &xs)? {
                w.write_record([
                    p.roi_tilde.to_string(),
                    p.roi_hat.to_string(),
                    p.r_hat.to_string(),
                    p.lo.to_string(),
                    p.hi.to_string(),
                ])
                .map_err(RdrpError::from)?;
            }
        }
        None => {
            w.write_record(["score"]).map_err(RdrpError::from)?;
            for x in &xs {
                w.write_record([predict_roi(&params, x)?.to_string()])
                    .map_err(RdrpError::from)?;
            }
        }
    }
    flush(w, &a.out)?;
    Ok(())
}

fn read_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => RdrpError::Io {
            path: path.to_path_buf(),
            source: io,
        },
        other => RdrpError::Format(format!("{other:?}")),
    })?;
    let idx = r
        .headers()?
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| RdrpError::Schema(column.to_string()))?;
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let raw = rec.get(idx).unwrap_or("");
            raw.trim().parse::<f64>().map_err(|_| RdrpError::Parse {
                row: i + 1,
                column: column.to_string(),
                value: raw.to_string(),
            })
        })
        .collect()
}

fn allocate_cmd(a: AllocateArgs) -> CmdResult {
    let gt = GroundTruth::read_csv(&a.uplifts)?;
    let inst = AllocationInstance::new(gt.tau_r, gt.tau_c, a.budget)?;
    let alloc = match (&a.scores, a.exact) {
        (Some(_), true) => {
            return Err(RdrpError::InvalidArgument("--scores and --exact are exclusive".into()).into())
        }
        (Some(p), false) => greedy_allocate_by_score(&read_column(p, "score")?, &inst)?,
        (None, true) => brute_force_allocate(&inst)?,
        (None, false) => greedy_allocate(&inst)?,
    };
    println!(
        "treated={} revenue={} cost={} budget={}",
        alloc.z.iter().filter(|z| **z).count(),
        alloc.total_revenue,
        alloc.total_cost,
        a.budget
    );
    if let Some(out) = &a.out {
        alloc.write_csv(out)?;
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> CmdResult {
    let ds = a.data.load()?;
    let scores = read_column(&a.scores, &a.column)?;
    let report = aucc_report(&scores, &ds, a.buckets)?;
    println!("{}", serde_json::to_string(&report).map_err(RdrpError::from)?);
    if let Some(out) = &a.curve_out {
        cost_curve(&scores, &ds, a.buckets)?.write_csv(out)?;
    }
    Ok(())
}

fn experiment_cmd(a: ExperimentArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(dir) = a.out_dir {
        cfg.output_dir = dir;
    }
    if let Some(s) = &a.settings {
        cfg.settings = s.iter().map(|x| x.parse::<Setting>()).collect::<Result<_>>()?;
    }
    if let Some(m) = &a.methods {
        cfg.methods = m.iter().map(|x| x.parse::<Method>()).collect::<Result<_>>()?;
    }
    cfg.validate()?;
    if let Some(p) = &a.print_config {
        let json = serde_json::to_string_pretty(&cfg).map_err(RdrpError::from)? + "\n";
        std::fs::write(p, json).map_err(|e| RdrpError::Io {
            path: p.clone(),
            source: e,
        })?;
        return Ok(());
    }
    let report = run_experiment(&cfg)?;
    for row in &report.summary {
        println!(
            "{:<5} {:<7} aucc={} std={} coverage={} ok={}",
            row.setting.to_string(),
            row.method.to_string(),
            row.aucc_mean.map_or("-".into(), |v| format!("{v:.4}")),
            row.aucc_std.map_or("-".into(), |v| format!("{v:.4}")),
            row.coverage_mean.map_or("-".into(), |v| format!("{v:.3}")),
            row.n_ok
        );
    }
    let files = emit_report(&report, &cfg.output_dir)?;
    log::info!("wrote {} files to {}", files.len(), cfg.output_dir.display());
    match report.failed() {
        0 => Ok(()),
        n => Err(CmdError::CellsFailed(n)),
    }
}
