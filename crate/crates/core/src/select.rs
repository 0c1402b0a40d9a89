//! Choosing the number of kinks by a strengthened quantile BIC with backward
//! elimination from an over-specified model.

use serde::{Deserialize, Serialize};

use crate::brisq::{
    brisq_fit, brisq_fit_from, fit_fixed_kinks, init_kinks, iterate_segmented, BrisqSettings, FitDiagnostics,
    ThetaEstimate,
};
use crate::error::{MkqrError, Result};
use crate::infer::{covariance, CovarianceEstimate, InferSettings};
use crate::linqr::QuantileLevel;
use crate::model::Dataset;
use crate::rng::derive_seed;

/// Multiplier `C_n` of the BIC penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CnRule {
    /// `C_n = 1`, the ordinary quantile BIC.
    One,
    LogLog,
    #[default]
    Log,
}

impl CnRule {
    pub fn value(self, n: usize) -> f64 {
        let ln = (n as f64).ln();
        match self {
            CnRule::One => 1.0,
            CnRule::LogLog => ln.ln(),
            CnRule::Log => ln,
        }
    }
}

impl std::str::FromStr for CnRule {
    type Err = MkqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "one" => Ok(Self::One),
            "loglog" | "log-log" => Ok(Self::LogLog),
            "log" => Ok(Self::Log),
            other => Err(MkqrError::usage(format!("unknown C_n rule `{other}` (one, loglog, log)"))),
        }
    }
}

impl std::fmt::Display for CnRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::One => "one",
            Self::LogLog => "loglog",
            Self::Log => "log",
        })
    }
}

/// `ln(S_n) + (2 + p + 2K) ln(n) / (2n) C_n`. A zero objective gives
/// negative infinity.
pub fn sbic(objective: f64, n: usize, p: usize, k: usize, rule: CnRule) -> Result<f64> {
    if !(objective >= 0.0) || n < 2 {
        return Err(MkqrError::usage(format!("sBIC needs a nonnegative objective and n >= 2, got {objective}, n = {n}")));
    }
    let nf = n as f64;
    let params = (2 + p + 2 * k) as f64;
    Ok(objective.ln() + params * nf.ln() / (2.0 * nf) * rule.value(n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbicEntry {
    pub k: usize,
    pub sbic: f64,
    pub estimate: ThetaEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbicTrace {
    /// Entries in evaluation order; `k` strictly decreases.
    pub entries: Vec<SbicEntry>,
    pub selected: usize,
    /// Kink count reached by the first stage from `K_max`.
    pub stage_one_k: usize,
}

impl SbicTrace {
    pub fn selected_entry(&self) -> &SbicEntry {
        &self.entries[self.selected]
    }

    pub fn k_hat(&self) -> usize {
        self.selected_entry().k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub k_hat: usize,
    pub estimate: ThetaEstimate,
    pub covariance: Option<CovarianceEstimate>,
    /// `(a0, a1, b, g, d)` order, when the covariance is available.
    pub standard_errors: Option<Vec<f64>>,
    /// Why the covariance is missing.
    pub covariance_error: Option<String>,
}

/// Fit with the kink having the smallest objective increase removed.
fn cheapest_drop(data: &Dataset, tau: QuantileLevel, deltas: &[f64], settings: &BrisqSettings) -> Option<Vec<f64>> {
    (0..deltas.len())
        .filter_map(|j| {
            let mut rest = deltas.to_vec();
            rest.remove(j);
            fit_fixed_kinks(data, tau, &rest, &settings.qr).ok().map(|(_, sol)| (rest, sol.objective))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(rest, _)| rest)
}

fn linear_estimate(data: &Dataset, tau: QuantileLevel, settings: &BrisqSettings) -> Result<ThetaEstimate> {
    let (params, sol) = fit_fixed_kinks(data, tau, &[], &settings.qr)?;
    Ok(ThetaEstimate {
        params,
        objective: sol.objective,
        diagnostics: FitDiagnostics { converged: true, averaged_over: 1, trajectory: vec![sol.objective], ..Default::default() },
    })
}

/// Fit at `target` kinks: warm start from the cheapest drop of `previous`,
/// cold start from evenly dispersed kinks if that fails.
fn refit_one_fewer(
    data: &Dataset,
    tau: QuantileLevel,
    previous: &[f64],
    settings: &BrisqSettings,
) -> Result<ThetaEstimate> {
    let target = previous.len() - 1;
    if target == 0 {
        return linear_estimate(data, tau, settings);
    }
    let s = BrisqSettings { seed: derive_seed(settings.seed, target as u64), ..settings.clone() };
    if let Some(start) = cheapest_drop(data, tau, previous, settings) {
        if let Ok(est) = brisq_fit_from(data, tau, &start, &s) {
            return Ok(est);
        }
    }
    brisq_fit(data, tau, target, &s)
}

/// Kink-number selection only (no covariance).
pub fn select_kinks(
    data: &Dataset,
    tau: QuantileLevel,
    k_max: usize,
    rule: CnRule,
    settings: &BrisqSettings,
) -> Result<SbicTrace> {
    if k_max == 0 {
        return Err(MkqrError::usage("K_max must be at least 1"));
    }
    let rs = settings.resolve(data)?;
    let k_start = k_max.min(data.n() / rs.min_segment_obs - 1);
    let (n, p) = (data.n(), data.p());
    let stage_one = if k_start == 0 {
        linear_estimate(data, tau, settings)?
    } else {
        let deltas0 = init_kinks(data.x(), k_start, rs.min_segment_obs)?;
        iterate_segmented(data, tau, &deltas0, settings)?
    };
    let stage_one_k = stage_one.k();
    let first = if stage_one_k == 0 {
        stage_one
    } else {
        let s = BrisqSettings { seed: derive_seed(settings.seed, stage_one_k as u64), ..settings.clone() };
        brisq_fit_from(data, tau, stage_one.deltas(), &s)?
    };
    let mut entries = vec![SbicEntry { k: first.k(), sbic: sbic(first.objective, n, p, first.k(), rule)?, estimate: first }];
    loop {
        let last = entries.last().expect("nonempty");
        if last.k == 0 {
            break;
        }
        let next = refit_one_fewer(data, tau, last.estimate.deltas(), settings)?;
        let value = sbic(next.objective, n, p, next.k(), rule)?;
        let improves = value < last.sbic;
        entries.push(SbicEntry { k: next.k(), sbic: value, estimate: next });
        if !improves {
            break;
        }
    }
    let selected = entries
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.sbic.total_cmp(&b.1.sbic))
        .map(|(i, _)| i)
        .expect("nonempty");
    Ok(SbicTrace { entries, selected, stage_one_k })
}

/// Backward elimination followed by the covariance of the selected fit.
pub fn backward_eliminate(
    data: &Dataset,
    tau: QuantileLevel,
    k_max: usize,
    rule: CnRule,
    settings: &BrisqSettings,
    infer: &InferSettings,
) -> Result<(FitReport, SbicTrace)> {
    let trace = select_kinks(data, tau, k_max, rule, settings)?;
    let estimate = trace.selected_entry().estimate.clone();
    let (covariance, covariance_error) = match covariance(data, &estimate.params, tau, infer) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let standard_errors = covariance.as_ref().map(CovarianceEstimate::standard_errors);
    let report = FitReport { k_hat: estimate.k(), estimate, covariance, standard_errors, covariance_error };
    Ok((report, trace))
}
