//! Kink-location estimation: iterative linearization of the hinge terms and
//! bootstrap-restarted refits (BRISQ).
//!
//! For kinks at `d0` the model is linearized as
//!
//! ```text
//!   b_k (x - d_k)_+  ~  b_k (x - d0_k)_+ + phi_k * (-1[x > d0_k]),   phi_k = b_k (d_k - d0_k)
//! ```
//!
//! so one linear quantile fit with the extra `-1[x > d0_k]` columns yields the
//! update `d_k = d0_k + phi_k / b_k`. Restarts refit on a paired bootstrap
//! sample, then on the original sample, and keep the result only if the
//! original-sample objective drops.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MkqrError, Result};
use crate::linqr::{fit_linear_qr, DesignMatrix, QrSettings, QrSolution, QuantileLevel};
use crate::model::{hinge, objective, Dataset, MkqrParams};
use crate::rng::stream_rng;

/// Step-halving attempts per linearized update.
const MAX_HALVINGS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrisqSettings {
    pub max_inner_iterations: usize,
    /// Convergence threshold on `max_k |d_k change|`; default `1e-4 * range(x)`.
    pub delta_tolerance: Option<f64>,
    /// Number of bootstrap restarts `B`.
    pub restarts: usize,
    /// Relative objective window for the final averaging step.
    pub epsilon: f64,
    /// Default `max(10, p + 3)`.
    pub min_segment_obs: Option<usize>,
    /// Default `1e-4 * sd(y) / sd(x)`.
    pub beta_floor: Option<f64>,
    /// The averaged estimate is kept only if its objective is within this
    /// relative slack of the best accepted estimate.
    pub averaging_slack: f64,
    pub seed: u64,
    pub qr: QrSettings,
}

impl Default for BrisqSettings {
    fn default() -> Self {
        Self {
            max_inner_iterations: 50,
            delta_tolerance: None,
            restarts: 20,
            epsilon: 0.02,
            min_segment_obs: None,
            beta_floor: None,
            averaging_slack: 1e-4,
            seed: 0,
            qr: QrSettings::default(),
        }
    }
}

/// Settings with the data-dependent defaults filled in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedSettings {
    pub max_inner_iterations: usize,
    pub delta_tolerance: f64,
    pub restarts: usize,
    pub epsilon: f64,
    pub min_segment_obs: usize,
    pub beta_floor: f64,
    pub averaging_slack: f64,
    pub seed: u64,
    pub qr: QrSettings,
}

fn sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

impl BrisqSettings {
    pub fn resolve(&self, data: &Dataset) -> Result<ResolvedSettings> {
        if self.max_inner_iterations == 0 {
            return Err(MkqrError::usage("max_inner_iterations must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(MkqrError::usage(format!("epsilon {} outside (0, 1)", self.epsilon)));
        }
        let delta_tolerance = self.delta_tolerance.unwrap_or(1e-4 * data.x_range());
        let beta_floor = self.beta_floor.unwrap_or_else(|| {
            let sx = sd(data.x());
            let sy = sd(data.y());
            if sy > 0.0 {
                1e-4 * sy / sx
            } else {
                1e-4 / sx
            }
        });
        let min_segment_obs = self.min_segment_obs.unwrap_or(10.max(data.p() + 3));
        if !(delta_tolerance > 0.0) || !(beta_floor > 0.0) || min_segment_obs == 0 {
            return Err(MkqrError::usage("BRISQ tolerances must be positive"));
        }
        Ok(ResolvedSettings {
            max_inner_iterations: self.max_inner_iterations,
            delta_tolerance,
            restarts: self.restarts,
            epsilon: self.epsilon,
            min_segment_obs,
            beta_floor,
            averaging_slack: self.averaging_slack,
            seed: self.seed,
            qr: self.qr,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    OutOfSupport,
    TooClose,
    BetaDegenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedKink {
    /// Position of the kink in the input to the step that dropped it.
    pub index: usize,
    pub location: f64,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InadmissibleReport {
    pub dropped: Vec<DroppedKink>,
}

impl InadmissibleReport {
    pub fn is_empty(&self) -> bool {
        self.dropped.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Linearized steps taken by the final inner iteration.
    pub inner_iterations: usize,
    pub converged: bool,
    pub dropped: Vec<DroppedKink>,
    /// Original-sample objective after the initial fit and after each restart.
    pub trajectory: Vec<f64>,
    pub accepted_restarts: usize,
    /// Trajectory entries averaged into the final estimate (1 = no averaging).
    pub averaged_over: usize,
}

/// A fitted `theta = (eta, delta)` with its mean check loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub params: MkqrParams,
    pub objective: f64,
    pub diagnostics: FitDiagnostics,
}

impl ThetaEstimate {
    pub fn k(&self) -> usize {
        self.params.k()
    }

    pub fn deltas(&self) -> &[f64] {
        &self.params.deltas
    }
}

/// `k / (K + 1)` sample quantiles of `x`, nudged upward to the next distinct
/// sample value where ties would repeat a location.
pub fn init_kinks(x: &[f64], k: usize, min_segment_obs: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(MkqrError::usage("init_kinks needs K >= 1"));
    }
    let n = x.len();
    if n < (k + 1) * min_segment_obs {
        return Err(MkqrError::usage(format!(
            "{k} kinks leave fewer than {min_segment_obs} observations per segment (n = {n})"
        )));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[n - 1] {
        return Err(MkqrError::data("threshold covariate x is constant"));
    }
    let mut out: Vec<f64> = Vec::with_capacity(k);
    for j in 1..=k {
        let mut q = quantile_sorted(&sorted, j as f64 / (k + 1) as f64);
        if let Some(&prev) = out.last() {
            if q <= prev {
                let pos = sorted.partition_point(|v| *v <= prev);
                q = match sorted.get(pos) {
                    Some(&next) if next < sorted[n - 1] => next,
                    _ => return Err(MkqrError::usage(format!("x has too few distinct values for {k} kinks"))),
                };
            }
        }
        out.push(q);
    }
    Ok(out)
}

/// Type-7 sample quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Observations in `(d_{k-1}, d_k]`, with open ends at both sides.
fn segment_counts(sorted_x: &[f64], deltas: &[f64]) -> Vec<usize> {
    let mut counts = Vec::with_capacity(deltas.len() + 1);
    let mut below = 0;
    for d in deltas {
        let upto = sorted_x.partition_point(|v| v <= d);
        counts.push(upto - below);
        below = upto;
    }
    counts.push(sorted_x.len() - below);
    counts
}

fn sorted_x(data: &Dataset) -> Vec<f64> {
    let mut xs = data.x().to_vec();
    xs.sort_by(f64::total_cmp);
    xs
}

fn admissible(sorted_x: &[f64], deltas: &[f64], m: usize) -> bool {
    deltas.windows(2).all(|w| w[0] < w[1])
        && deltas.iter().all(|d| *d > sorted_x[0] && *d < sorted_x[sorted_x.len() - 1])
        && segment_counts(sorted_x, deltas).iter().all(|c| *c >= m)
}

/// Output of one linearized update.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedStep {
    /// `(a0, a1, b_1..b_K, g)` from the working fit.
    pub eta: Vec<f64>,
    pub phi: Vec<f64>,
    pub deltas_next: Vec<f64>,
    /// Working-fit slope changes of the surviving kinks, aligned with `deltas_next`.
    pub betas_next: Vec<f64>,
    pub report: InadmissibleReport,
    pub working_objective: f64,
}

fn working_design(data: &Dataset, deltas: &[f64]) -> Result<DesignMatrix> {
    let n = data.n();
    let k = deltas.len();
    let p = data.p();
    let d = 2 + 2 * k + p;
    let mut values = Vec::with_capacity(n * d);
    for t in 0..n {
        let x = data.x()[t];
        values.push(1.0);
        values.push(x);
        values.extend(deltas.iter().map(|&dk| hinge(x, dk)));
        values.extend_from_slice(data.z_row(t));
        values.extend(deltas.iter().map(|&dk| if x > dk { -1.0 } else { 0.0 }));
    }
    let mut labels = crate::model::design_labels(k, data.z_names());
    labels.extend((1..=k).map(|j| format!("shift{j}")));
    DesignMatrix::new(n, d, values, labels)
}

/// One linearized update of the kink locations.
pub fn linearized_step(
    data: &Dataset,
    tau: QuantileLevel,
    deltas: &[f64],
    settings: &BrisqSettings,
) -> Result<LinearizedStep> {
    let rs = settings.resolve(data)?;
    step_resolved(data, &sorted_x(data), tau, deltas, &rs)
}

fn step_resolved(
    data: &Dataset,
    sorted_x: &[f64],
    tau: QuantileLevel,
    deltas: &[f64],
    rs: &ResolvedSettings,
) -> Result<LinearizedStep> {
    let k = deltas.len();
    let p = data.p();
    let design = working_design(data, deltas)?;
    let fit = fit_linear_qr(&design, data.y(), tau, &rs.qr)?;
    let eta = fit.coefficients[..2 + k + p].to_vec();
    let phi = fit.coefficients[2 + k + p..].to_vec();
    let mut report = InadmissibleReport::default();

    // (original index, new location, beta)
    let mut moved: Vec<(usize, f64, f64)> = Vec::with_capacity(k);
    for j in 0..k {
        let beta = eta[2 + j];
        if beta.abs() < rs.beta_floor {
            report.dropped.push(DroppedKink { index: j, location: deltas[j], reason: DropReason::BetaDegenerate });
            continue;
        }
        let next = deltas[j] + phi[j] / beta;
        let lo = sorted_x[0];
        let hi = sorted_x[sorted_x.len() - 1];
        if !next.is_finite() || next <= lo || next >= hi {
            report.dropped.push(DroppedKink { index: j, location: next, reason: DropReason::OutOfSupport });
            continue;
        }
        moved.push((j, next, beta));
    }
    moved.sort_by(|a, b| a.1.total_cmp(&b.1));
    moved.dedup_by(|b, a| {
        if a.1 == b.1 {
            report.dropped.push(DroppedKink { index: b.0, location: b.1, reason: DropReason::TooClose });
            true
        } else {
            false
        }
    });
    loop {
        let locs: Vec<f64> = moved.iter().map(|m| m.1).collect();
        let counts = segment_counts(sorted_x, &locs);
        let Some(seg) = counts.iter().position(|c| *c < rs.min_segment_obs) else { break };
        if moved.is_empty() {
            break;
        }
        let victim = if seg == 0 {
            0
        } else if seg == moved.len() {
            seg - 1
        } else if moved[seg - 1].2.abs() <= moved[seg].2.abs() {
            seg - 1
        } else {
            seg
        };
        let (index, location, _) = moved.remove(victim);
        report.dropped.push(DroppedKink { index, location, reason: DropReason::TooClose });
    }
    Ok(LinearizedStep {
        eta,
        phi,
        deltas_next: moved.iter().map(|m| m.1).collect(),
        betas_next: moved.iter().map(|m| m.2).collect(),
        report,
        working_objective: fit.objective,
    })
}

/// Linear quantile fit with the kinks held at `deltas`.
pub fn fit_fixed_kinks(
    data: &Dataset,
    tau: QuantileLevel,
    deltas: &[f64],
    qr: &QrSettings,
) -> Result<(MkqrParams, QrSolution)> {
    let design = data.design(deltas)?;
    let sol = fit_linear_qr(&design, data.y(), tau, qr)?;
    let params = MkqrParams::from_coefficients(&sol.coefficients, deltas.to_vec())?;
    Ok((params, sol))
}

fn fixed_estimate(data: &Dataset, tau: QuantileLevel, deltas: &[f64], qr: &QrSettings) -> Result<ThetaEstimate> {
    let (params, sol) = fit_fixed_kinks(data, tau, deltas, qr)?;
    Ok(ThetaEstimate { params, objective: sol.objective, diagnostics: FitDiagnostics::default() })
}

/// Repeats linearized updates from `deltas0` until the locations settle.
///
/// Each full update is halved (up to a few times) when it would raise the
/// objective; when no halving helps the current locations are final.
pub fn iterate_segmented(
    data: &Dataset,
    tau: QuantileLevel,
    deltas0: &[f64],
    settings: &BrisqSettings,
) -> Result<ThetaEstimate> {
    let rs = settings.resolve(data)?;
    iterate_resolved(data, &sorted_x(data), tau, deltas0, &rs)
}

fn iterate_resolved(
    data: &Dataset,
    sorted_x: &[f64],
    tau: QuantileLevel,
    deltas0: &[f64],
    rs: &ResolvedSettings,
) -> Result<ThetaEstimate> {
    if !deltas0.windows(2).all(|w| w[0] < w[1]) {
        return Err(MkqrError::usage(format!("kink locations {deltas0:?} are not strictly increasing")));
    }
    let mut deltas = deltas0.to_vec();
    let mut dropped = Vec::new();
    let mut current = fixed_estimate(data, tau, &deltas, &rs.qr)?;
    let mut converged = deltas.is_empty();
    let mut iterations = 0;
    while !converged && iterations < rs.max_inner_iterations {
        iterations += 1;
        let step = step_resolved(data, sorted_x, tau, &deltas, rs)?;
        if !step.report.is_empty() {
            dropped.extend(step.report.dropped);
            deltas = step.deltas_next;
            current = fixed_estimate(data, tau, &deltas, &rs.qr)?;
            converged = deltas.is_empty();
            continue;
        }
        let target = step.deltas_next;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = deltas.iter().zip(&target).map(|(d, t)| d + lambda * (t - d)).collect();
            if admissible(sorted_x, &cand, rs.min_segment_obs) {
                if let Ok(est) = fixed_estimate(data, tau, &cand, &rs.qr) {
                    if est.objective <= current.objective {
                        accepted = Some((cand, est));
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((cand, est)) => {
                let change = deltas.iter().zip(&cand).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                deltas = cand;
                current = est;
                converged = change < rs.delta_tolerance;
            }
            None => converged = true,
        }
    }
    current.diagnostics = FitDiagnostics {
        inner_iterations: iterations,
        converged,
        dropped,
        trajectory: vec![current.objective],
        accepted_restarts: 0,
        averaged_over: 1,
    };
    Ok(current)
}

/// Full BRISQ fit with `k` kinks started at the evenly dispersed quantiles of `x`.
pub fn brisq_fit(data: &Dataset, tau: QuantileLevel, k: usize, settings: &BrisqSettings) -> Result<ThetaEstimate> {
    let rs = settings.resolve(data)?;
    let deltas0 = init_kinks(data.x(), k, rs.min_segment_obs)?;
    brisq_resolved(data, tau, &deltas0, &rs)
}

/// Full BRISQ fit started from `deltas0`.
pub fn brisq_fit_from(
    data: &Dataset,
    tau: QuantileLevel,
    deltas0: &[f64],
    settings: &BrisqSettings,
) -> Result<ThetaEstimate> {
    let rs = settings.resolve(data)?;
    brisq_resolved(data, tau, deltas0, &rs)
}

fn brisq_resolved(data: &Dataset, tau: QuantileLevel, deltas0: &[f64], rs: &ResolvedSettings) -> Result<ThetaEstimate> {
    let xs = sorted_x(data);
    let first = iterate_resolved(data, &xs, tau, deltas0, rs)?;
    let k = first.k();
    let mut dropped = first.diagnostics.dropped.clone();
    let mut current = first;
    let mut trajectory = vec![current.clone()];
    let mut accepted = 0;
    let n = data.n();
    if k > 0 {
        for b in 1..=rs.restarts {
            let mut rng = stream_rng(rs.seed, b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let boot = data.resample(&idx);
            let boot_sorted = sorted_x(&boot);
            let restart = iterate_resolved(&boot, &boot_sorted, tau, current.deltas(), rs)
                .ok()
                .filter(|e| e.k() == k)
                .and_then(|star| iterate_resolved(data, &xs, tau, star.deltas(), rs).ok())
                .filter(|e| e.k() == k);
            if let Some(cand) = restart {
                if cand.objective < current.objective {
                    dropped.extend(cand.diagnostics.dropped.iter().cloned());
                    current = cand;
                    accepted += 1;
                }
            }
            trajectory.push(current.clone());
        }
    }

    let best = current;
    let limit = best.objective * (1.0 + rs.epsilon);
    let pool: Vec<&ThetaEstimate> = trajectory.iter().filter(|e| e.k() == k && e.objective <= limit).collect();
    let mut result = best.clone();
    let mut averaged_over = 1;
    if pool.len() > 1 && pool.iter().any(|e| e.params != best.params) {
        let m = pool.len() as f64;
        let dim = best.params.coefficients().len();
        let mut eta = vec![0.0; dim];
        let mut deltas = vec![0.0; k];
        for e in &pool {
            for (acc, v) in eta.iter_mut().zip(e.params.coefficients()) {
                *acc += v / m;
            }
            for (acc, v) in deltas.iter_mut().zip(e.deltas()) {
                *acc += v / m;
            }
        }
        if let Ok(params) = MkqrParams::from_coefficients(&eta, deltas) {
            let obj = objective(data, &params, tau)?;
            if admissible(&xs, &params.deltas, rs.min_segment_obs) && obj <= best.objective * (1.0 + rs.averaging_slack) {
                result = ThetaEstimate { params, objective: obj, diagnostics: best.diagnostics.clone() };
                averaged_over = pool.len();
            }
        }
    }
    result.diagnostics = FitDiagnostics {
        inner_iterations: best.diagnostics.inner_iterations,
        converged: best.diagnostics.converged,
        dropped,
        trajectory: trajectory.iter().map(|e| e.objective).collect(),
        accepted_restarts: accepted,
        averaged_over,
    };
    Ok(result)
}
