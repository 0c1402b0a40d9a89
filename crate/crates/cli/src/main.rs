//! `mkqr`: fit, test and build intervals for multi-kink quantile regression
//! from CSV data, and run the simulation studies.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure, 4 usage error.

mod io;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mkqr::brisq::{brisq_fit, BrisqSettings};
use mkqr::infer::{
    bootstrap_ci, covariance, srs_invert_ci, wald_ci, wild_bootstrap_pvalue, CiMethod, InferSettings, ScoreGrid,
    SrsScan,
};
use mkqr::linqr::{BandwidthRule, QuantileLevel};
use mkqr::model::Dataset;
use mkqr::select::{backward_eliminate, CnRule};
use mkqr::simgen::{generate, ErrorDist, KinkCase, ScenarioSpec};
use mkqr::study::{ci_study, estimation_study, power_study, selection_study, CiStudyConfig};
use mkqr::MkqrError;
use serde::Serialize;
use serde_json::json;

use report::*;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] MkqrError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Usage(_) => 4,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(MkqrError::Data(_)) => 2,
            CliError::Core(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(name = "mkqr", version, about = "Multi-kink quantile regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select the number of kinks and fit the model at each quantile level.
    Fit(FitArgs),
    /// Test for the existence of a kink (sup-score test, wild bootstrap).
    Test(TestArgs),
    /// Confidence intervals for the kink locations.
    Ci(CiArgs),
    /// Run a Monte Carlo study on a simulation design.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct Common {
    /// CSV file with header `y,x[,z1,...]`.
    #[arg(long, short)]
    input: PathBuf,
    /// Quantile level; repeat for several levels.
    #[arg(long = "tau", default_values_t = vec![0.5])]
    taus: Vec<f64>,
    /// Master seed for all random draws.
    #[arg(long, env = "MKQR_SEED", default_value_t = 1)]
    seed: u64,
    /// Write JSON here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Bandwidth rule for the density weights.
    #[arg(long, value_enum, default_value_t = Bandwidth::HallSheather)]
    bandwidth: Bandwidth,
}

#[derive(Args)]
struct Selection {
    /// Initial number of kinks for backward elimination.
    #[arg(long, default_value_t = 10)]
    kmax: usize,
    /// Penalty multiplier C_n of the BIC.
    #[arg(long, value_enum, default_value_t = Cn::Log)]
    cn: Cn,
    /// Bootstrap restarts per BRISQ fit.
    #[arg(long, default_value_t = 20)]
    restarts: usize,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    selection: Selection,
    /// Also write fitted quantile curves (x grid, one column per tau) to this CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    common: Common,
    /// Wild-bootstrap replicates.
    #[arg(long, default_value_t = 300)]
    boot: usize,
    /// Lower trimming quantile of the candidate kink grid.
    #[arg(long, default_value_t = 0.1)]
    grid_lower: f64,
    /// Upper trimming quantile of the candidate kink grid.
    #[arg(long, default_value_t = 0.9)]
    grid_upper: f64,
}

#[derive(Args)]
struct CiArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    selection: Selection,
    /// Interval method; repeat for several.
    #[arg(long = "method", value_enum, default_values_t = vec![Method::Wald, Method::Score])]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Bootstrap replicates for `boot` intervals.
    #[arg(long, default_value_t = 200)]
    boot: usize,
    /// Fix the number of kinks instead of selecting it.
    #[arg(long)]
    k: Option<usize>,
    /// Scan step of the score interval (default range(x)/200).
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Which study to run.
    #[arg(long, value_enum, default_value_t = Study::Selection)]
    study: Study,
    /// Scenario file (TOML keys: case, n, error, heteroscedastic, power_c, betas, deltas, seed).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Simulation case when no config file is given.
    #[arg(long, value_parser = ["1", "2", "3"], default_value = "1")]
    case: String,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, value_enum, default_value_t = Error::Normal)]
    error: Error,
    #[arg(long)]
    heteroscedastic: bool,
    /// Quantile level; repeat for several.
    #[arg(long = "tau")]
    taus: Vec<f64>,
    /// Replications (default 200, or 1000 with --full).
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Full-scale run: 1000 replications, tau in {0.3, 0.5, 0.7}, all C_n rules.
    #[arg(long)]
    full: bool,
    /// Also write the summary table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the scenario's dataset (at --seed) as CSV and exit.
    #[arg(long)]
    emit_dataset: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, env = "MKQR_SEED")]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    kmax: usize,
    /// C_n rule for selection studies; repeat to compare.
    #[arg(long = "cn", value_enum)]
    cns: Vec<Cn>,
    /// Interval method for ci studies; repeat for several.
    #[arg(long = "method", value_enum, default_values_t = vec![Method::Wald, Method::Score])]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Bootstrap replicates (wild bootstrap for power, paired for ci).
    #[arg(long)]
    boot: Option<usize>,
    /// Signal strengths c (b_1 = c / sqrt(n)) for power studies.
    #[arg(long = "c")]
    cs: Vec<f64>,
    /// Test level for power studies.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    #[arg(long, value_enum, default_value_t = Bandwidth::HallSheather)]
    bandwidth: Bandwidth,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bandwidth {
    HallSheather,
    Bofinger,
}

impl From<Bandwidth> for BandwidthRule {
    fn from(b: Bandwidth) -> Self {
        match b {
            Bandwidth::HallSheather => BandwidthRule::HallSheather,
            Bandwidth::Bofinger => BandwidthRule::Bofinger,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Cn {
    One,
    Loglog,
    Log,
}

impl From<Cn> for CnRule {
    fn from(c: Cn) -> Self {
        match c {
            Cn::One => CnRule::One,
            Cn::Loglog => CnRule::LogLog,
            Cn::Log => CnRule::Log,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Method {
    Wald,
    Boot,
    Score,
}

impl From<Method> for CiMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Wald => CiMethod::Wald,
            Method::Boot => CiMethod::Boot,
            Method::Score => CiMethod::Score,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Error {
    Normal,
    T3,
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    Selection,
    Estimation,
    Ci,
    Power,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Test(a) => cmd_test(&a),
        Command::Ci(a) => cmd_ci(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mkqr: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn levels(taus: &[f64]) -> Result<Vec<QuantileLevel>, CliError> {
    if taus.is_empty() {
        return Err(CliError::Usage("at least one --tau is required".into()));
    }
    taus.iter().map(|t| QuantileLevel::new(*t).map_err(|e| CliError::Usage(e.to_string()))).collect()
}

fn tau_key(tau: QuantileLevel) -> String {
    tau.value().to_string()
}

fn emit<T: Serialize>(doc: &T, output: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(doc).map_err(|e| CliError::Input(e.to_string()))? + "\n";
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn input_info(common: &Common, data: &Dataset) -> InputInfo {
    let mut columns = vec!["y".to_string(), "x".to_string()];
    columns.extend(data.z_names().iter().cloned());
    InputInfo { path: common.input.display().to_string(), n: data.n(), p: data.p(), columns }
}

fn brisq_settings(restarts: usize, seed: u64) -> BrisqSettings {
    BrisqSettings { restarts, seed, ..BrisqSettings::default() }
}

fn infer_settings(bandwidth: Bandwidth) -> InferSettings {
    InferSettings { rule: bandwidth.into(), ..InferSettings::default() }
}

fn cmd_fit(a: &FitArgs) -> Result<(), CliError> {
    let taus = levels(&a.common.taus)?;
    let data = io::read_dataset(&a.common.input)?;
    let settings = brisq_settings(a.selection.restarts, a.common.seed);
    let infer = infer_settings(a.common.bandwidth);
    let mut results = BTreeMap::new();
    let mut curves = Vec::new();
    for tau in taus {
        let (fit, trace) = backward_eliminate(&data, tau, a.selection.kmax, a.selection.cn.into(), &settings, &infer)?;
        curves.push((tau.value(), fit.estimate.params.clone()));
        results.insert(tau_key(tau), fit_result(tau.value(), &fit, &trace, data.z_names()));
    }
    if let Some(path) = &a.curve {
        io::write_curve(path, &data, &curves)?;
    }
    let doc = Document {
        command: "fit",
        version: VERSION,
        input: input_info(&a.common, &data),
        settings: FitSettingsOut {
            seed: a.common.seed,
            kmax: a.selection.kmax,
            cn: CnRule::from(a.selection.cn).to_string(),
            bandwidth: BandwidthRule::from(a.common.bandwidth).to_string(),
            restarts: a.selection.restarts,
        },
        results,
    };
    emit(&doc, a.common.output.as_deref())
}

fn cmd_test(a: &TestArgs) -> Result<(), CliError> {
    let taus = levels(&a.common.taus)?;
    if a.boot == 0 {
        return Err(CliError::Usage("--boot must be at least 1".into()));
    }
    let data = io::read_dataset(&a.common.input)?;
    let grid = ScoreGrid::from_data(data.x(), a.grid_lower, a.grid_upper)?;
    let infer = infer_settings(a.common.bandwidth);
    let mut results = BTreeMap::new();
    for tau in taus {
        let result = wild_bootstrap_pvalue(&data, tau, a.boot, &grid, a.common.seed, &infer, false)?;
        results.insert(tau_key(tau), TestResultOut { tau: tau.value(), result });
    }
    let doc = Document {
        command: "test",
        version: VERSION,
        input: input_info(&a.common, &data),
        settings: TestSettingsOut {
            seed: a.common.seed,
            boot: a.boot,
            bandwidth: BandwidthRule::from(a.common.bandwidth).to_string(),
            grid_lower: a.grid_lower,
            grid_upper: a.grid_upper,
        },
        results,
    };
    emit(&doc, a.common.output.as_deref())
}

fn cmd_ci(a: &CiArgs) -> Result<(), CliError> {
    let taus = levels(&a.common.taus)?;
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(CliError::Usage(format!("--level {} outside (0, 1)", a.level)));
    }
    let mut methods = a.methods.clone();
    methods.dedup();
    let data = io::read_dataset(&a.common.input)?;
    let settings = brisq_settings(a.selection.restarts, a.common.seed);
    let infer = infer_settings(a.common.bandwidth);
    let scan = SrsScan { rho_step: a.rho, bandwidth: None };
    let mut results = BTreeMap::new();
    for tau in taus {
        let est = match a.k {
            Some(0) => return Err(CliError::Usage("--k must be at least 1".into())),
            Some(k) => brisq_fit(&data, tau, k, &settings)?,
            None => backward_eliminate(&data, tau, a.selection.kmax, a.selection.cn.into(), &settings, &infer)?.0.estimate,
        };
        let mut out = BTreeMap::new();
        let mut errors = BTreeMap::new();
        for m in &methods {
            let method = CiMethod::from(*m);
            if est.k() == 0 {
                errors.insert(method.to_string(), "no kinks in the fitted model".to_string());
                continue;
            }
            let start = Instant::now();
            let set = match method {
                CiMethod::Wald => covariance(&data, &est.params, tau, &infer).and_then(|c| wald_ci(&est.params, &c, a.level)),
                CiMethod::Boot => bootstrap_ci(&data, tau, &est, a.boot, a.level, a.common.seed, &settings),
                CiMethod::Score => srs_invert_ci(&data, tau, &est.params, a.level, &scan, &infer),
            };
            match set {
                Ok(set) => {
                    out.insert(method.to_string(), MethodOut { seconds: start.elapsed().as_secs_f64(), set });
                }
                Err(e) => {
                    errors.insert(method.to_string(), e.to_string());
                }
            }
        }
        results.insert(
            tau_key(tau),
            CiResultOut {
                tau: tau.value(),
                k: est.k(),
                deltas: est.params.deltas.clone(),
                objective: est.objective,
                methods: out,
                errors,
            },
        );
    }
    let doc = Document {
        command: "ci",
        version: VERSION,
        input: input_info(&a.common, &data),
        settings: CiSettingsOut {
            seed: a.common.seed,
            level: a.level,
            methods: methods.iter().map(|m| CiMethod::from(*m).to_string()).collect(),
            boot: a.boot,
            k: a.k,
            kmax: a.selection.kmax,
            cn: CnRule::from(a.selection.cn).to_string(),
            bandwidth: BandwidthRule::from(a.common.bandwidth).to_string(),
            restarts: a.selection.restarts,
        },
        results,
    };
    emit(&doc, a.common.output.as_deref())
}

fn scenario(a: &SimulateArgs) -> Result<ScenarioSpec, CliError> {
    let mut spec = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<ScenarioSpec>(&text)
                .map_err(|e| CliError::Input(format!("{}: invalid scenario: {e}", path.display())))?
        }
        None => ScenarioSpec {
            error: match a.error {
                Error::Normal => ErrorDist::Normal,
                Error::T3 => ErrorDist::T3,
            },
            heteroscedastic: a.heteroscedastic,
            seed: 1,
            ..ScenarioSpec::new(a.case.parse::<KinkCase>()?, a.n)
        },
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| CliError::Input(format!("invalid scenario: {e}")))?;
    Ok(spec)
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let spec = scenario(a)?;
    if let Some(path) = &a.emit_dataset {
        let (data, _) = generate(&spec)?;
        return io::write_dataset(path, &data);
    }
    if let Some(jobs) = a.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {jobs} worker threads: {e}")))?;
    }
    let reps = a.reps.unwrap_or(if a.full { 1000 } else { 200 });
    if reps < 2 {
        return Err(CliError::Usage("--reps must be at least 2".into()));
    }
    let taus = if !a.taus.is_empty() {
        levels(&a.taus)?
    } else if a.full {
        levels(&[0.3, 0.5, 0.7])?
    } else {
        levels(&[0.5])?
    };
    let seed = spec.seed;
    let settings = brisq_settings(a.restarts, seed);
    let infer = infer_settings(a.bandwidth);
    let (study, rows, header, table): (&str, Vec<serde_json::Value>, Vec<&str>, Vec<Vec<String>>) = match a.study {
        Study::Selection => {
            let rules: Vec<CnRule> = if !a.cns.is_empty() {
                a.cns.iter().map(|c| (*c).into()).collect()
            } else if a.full {
                vec![CnRule::One, CnRule::LogLog, CnRule::Log]
            } else {
                vec![CnRule::Log]
            };
            let mut rows = Vec::new();
            let mut table = Vec::new();
            for tau in &taus {
                for s in selection_study(&spec, *tau, a.kmax, &rules, reps, seed, &settings)? {
                    let counts = s.k_hat_counts.iter().map(|(k, c)| format!("{k}:{c}")).collect::<Vec<_>>().join(";");
                    table.push(vec![
                        s.rule.to_string(),
                        fmt(s.tau),
                        s.true_k.to_string(),
                        s.reps.to_string(),
                        fmt(s.rate),
                        s.failures.to_string(),
                        counts,
                    ]);
                    rows.push(serde_json::to_value(&s).expect("serializable"));
                }
            }
            ("selection", rows, vec!["cn", "tau", "true_k", "reps", "rate", "failures", "k_hat_counts"], table)
        }
        Study::Estimation => {
            let mut rows = Vec::new();
            let mut table = Vec::new();
            for tau in &taus {
                let e = estimation_study(&spec, *tau, reps, seed, &settings, &infer)?;
                for p in &e.parameters {
                    table.push(vec![
                        fmt(e.tau),
                        p.name.clone(),
                        fmt(p.truth),
                        fmt(p.bias),
                        fmt(p.sd),
                        fmt(p.se),
                        fmt(p.mse),
                        e.usable.to_string(),
                        e.reps.to_string(),
                    ]);
                }
                rows.push(serde_json::to_value(&e).expect("serializable"));
            }
            ("estimation", rows, vec!["tau", "parameter", "truth", "bias", "sd", "se", "mse", "usable", "reps"], table)
        }
        Study::Ci => {
            let mut methods: Vec<CiMethod> = a.methods.iter().map(|m| (*m).into()).collect();
            methods.dedup();
            let config = CiStudyConfig {
                methods,
                level: a.level,
                boot_replicates: a.boot.unwrap_or(200),
                scan: SrsScan::default(),
            };
            let mut rows = Vec::new();
            let mut table = Vec::new();
            for tau in &taus {
                for c in ci_study(&spec, *tau, reps, seed, &config, &settings, &infer)? {
                    table.push(vec![
                        fmt(tau.value()),
                        c.method.to_string(),
                        c.kink.to_string(),
                        fmt(c.coverage),
                        fmt(c.mean_length),
                        fmt(c.mean_seconds),
                        c.usable.to_string(),
                        c.truncated.to_string(),
                        reps.to_string(),
                    ]);
                    let mut v = serde_json::to_value(&c).expect("serializable");
                    v["tau"] = json!(tau.value());
                    rows.push(v);
                }
            }
            (
                "ci",
                rows,
                vec!["tau", "method", "kink", "coverage", "mean_length", "mean_seconds", "usable", "truncated", "reps"],
                table,
            )
        }
        Study::Power => {
            if spec.case != KinkCase::One {
                return Err(CliError::Input("power studies use case 1".into()));
            }
            let cs = if a.cs.is_empty() { vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0] } else { a.cs.clone() };
            let mut rows = Vec::new();
            let mut table = Vec::new();
            for tau in &taus {
                for pt in power_study(&spec, *tau, &cs, reps, a.boot.unwrap_or(300), a.alpha, seed, &infer)? {
                    table.push(vec![
                        fmt(tau.value()),
                        fmt(pt.c),
                        pt.reps.to_string(),
                        fmt(pt.rejection_rate),
                        pt.failures.to_string(),
                    ]);
                    let mut v = serde_json::to_value(&pt).expect("serializable");
                    v["tau"] = json!(tau.value());
                    rows.push(v);
                }
            }
            ("power", rows, vec!["tau", "c", "reps", "rejection_rate", "failures"], table)
        }
    };
    if let Some(path) = &a.csv {
        io::write_table(path, &header, &table)?;
    }
    let doc = SimulateOut { command: "simulate", version: VERSION, study: study.to_string(), scenario: spec, reps, seed, rows };
    emit(&doc, a.output.as_deref())
}
