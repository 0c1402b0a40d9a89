//! JSON documents written by the commands. The layout is described by
//! `schema/mkqr-output.schema.json`.

use std::collections::BTreeMap;

use mkqr::brisq::{FitDiagnostics, ThetaEstimate};
use mkqr::infer::{IntervalSet, KinkTestResult};
use mkqr::select::{FitReport, SbicTrace};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct InputInfo {
    pub path: String,
    pub n: usize,
    pub p: usize,
    pub columns: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Document<S: Serialize, R: Serialize> {
    pub command: &'static str,
    pub version: &'static str,
    pub input: InputInfo,
    pub settings: S,
    /// Keyed by the quantile level as written on the command line.
    pub results: BTreeMap<String, R>,
}

#[derive(Debug, Serialize)]
pub struct FitSettingsOut {
    pub seed: u64,
    pub kmax: usize,
    pub cn: String,
    pub bandwidth: String,
    pub restarts: usize,
}

#[derive(Debug, Serialize)]
pub struct TraceEntryOut {
    pub k: usize,
    pub sbic: f64,
    pub objective: f64,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct FitResultOut {
    pub tau: f64,
    pub k_hat: usize,
    pub coefficients: BTreeMap<String, f64>,
    pub deltas: Vec<f64>,
    pub standard_errors: Option<BTreeMap<String, f64>>,
    pub covariance_error: Option<String>,
    pub objective: f64,
    pub sbic_trace: Vec<TraceEntryOut>,
    pub stage_one_k: usize,
    pub diagnostics: FitDiagnostics,
}

/// Coefficient labels in `(a0, a1, b, g)` order.
pub fn coefficient_labels(k: usize, z_names: &[String]) -> Vec<String> {
    let mut labels = vec!["alpha0".to_string(), "alpha1".to_string()];
    labels.extend((1..=k).map(|j| format!("beta{j}")));
    labels.extend(z_names.iter().map(|z| format!("gamma_{z}")));
    labels
}

pub fn fit_result(tau: f64, report: &FitReport, trace: &SbicTrace, z_names: &[String]) -> FitResultOut {
    let est: &ThetaEstimate = &report.estimate;
    let k = est.k();
    let labels = coefficient_labels(k, z_names);
    let coefficients = labels.iter().cloned().zip(est.params.coefficients()).collect();
    let standard_errors = report.standard_errors.as_ref().map(|se| {
        let mut all = labels.clone();
        all.extend((1..=k).map(|j| format!("delta{j}")));
        all.into_iter().zip(se.iter().copied()).collect()
    });
    FitResultOut {
        tau,
        k_hat: report.k_hat,
        coefficients,
        deltas: est.params.deltas.clone(),
        standard_errors,
        covariance_error: report.covariance_error.clone(),
        objective: est.objective,
        sbic_trace: trace
            .entries
            .iter()
            .map(|e| TraceEntryOut { k: e.k, sbic: e.sbic, objective: e.estimate.objective, deltas: e.estimate.params.deltas.clone() })
            .collect(),
        stage_one_k: trace.stage_one_k,
        diagnostics: est.diagnostics.clone(),
    }
}

#[derive(Debug, Serialize)]
pub struct TestSettingsOut {
    pub seed: u64,
    pub boot: usize,
    pub bandwidth: String,
    pub grid_lower: f64,
    pub grid_upper: f64,
}

#[derive(Debug, Serialize)]
pub struct TestResultOut {
    pub tau: f64,
    #[serde(flatten)]
    pub result: KinkTestResult,
}

#[derive(Debug, Serialize)]
pub struct CiSettingsOut {
    pub seed: u64,
    pub level: f64,
    pub methods: Vec<String>,
    pub boot: usize,
    pub k: Option<usize>,
    pub kmax: usize,
    pub cn: String,
    pub bandwidth: String,
    pub restarts: usize,
}

#[derive(Debug, Serialize)]
pub struct MethodOut {
    pub seconds: f64,
    #[serde(flatten)]
    pub set: IntervalSet,
}

#[derive(Debug, Serialize)]
pub struct CiResultOut {
    pub tau: f64,
    pub k: usize,
    pub deltas: Vec<f64>,
    pub objective: f64,
    pub methods: BTreeMap<String, MethodOut>,
    /// Methods that could not be computed, with the reason.
    pub errors: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
pub struct SimulateOut<R: Serialize> {
    pub command: &'static str,
    pub version: &'static str,
    pub study: String,
    pub scenario: mkqr::simgen::ScenarioSpec,
    pub reps: usize,
    pub seed: u64,
    pub rows: Vec<R>,
}
