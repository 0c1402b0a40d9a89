//! Monte Carlo studies over the simulation designs: kink-number selection
//! rates, estimation accuracy, interval coverage and test power.
//!
//! Replicate `r` draws its data with seed `derive_seed(master, r)` and runs
//! the algorithms with `derive_seed(data_seed, 1)`, so results do not depend
//! on the number of worker threads.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brisq::{brisq_fit, BrisqSettings, ThetaEstimate};
use crate::error::Result;
use crate::infer::{
    bootstrap_ci, covariance, srs_invert_ci, wald_ci, wild_bootstrap_pvalue, CiMethod, InferSettings, IntervalSet,
    ScoreGrid, SrsScan,
};
use crate::linqr::QuantileLevel;
use crate::rng::derive_seed;
use crate::select::{select_kinks, CnRule};
use crate::simgen::{generate, true_theta_at, ScenarioSpec};

fn seeds(master: u64, r: usize) -> (u64, u64) {
    let data = derive_seed(master, r as u64);
    (data, derive_seed(data, 1))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub rule: CnRule,
    pub tau: f64,
    pub true_k: usize,
    pub reps: usize,
    /// Share of replicates with `K_hat = K_0`; failed replicates count as misses.
    pub rate: f64,
    pub failures: usize,
    pub k_hat_counts: BTreeMap<usize, usize>,
}

/// Selection rate of each `rule`; all rules see the same datasets and seeds.
pub fn selection_study(
    spec: &ScenarioSpec,
    tau: QuantileLevel,
    k_max: usize,
    rules: &[CnRule],
    reps: usize,
    master_seed: u64,
    settings: &BrisqSettings,
) -> Result<Vec<SelectionSummary>> {
    spec.validate()?;
    let true_k = spec.true_k()?;
    let per_rep: Vec<Vec<Option<usize>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let (data_seed, algo_seed) = seeds(master_seed, r);
            let Ok((data, _)) = generate(&spec.with_seed(data_seed)) else { return vec![None; rules.len()] };
            let s = BrisqSettings { seed: algo_seed, ..settings.clone() };
            rules.iter().map(|rule| select_kinks(&data, tau, k_max, *rule, &s).ok().map(|t| t.k_hat())).collect()
        })
        .collect();
    Ok(rules
        .iter()
        .enumerate()
        .map(|(i, rule)| {
            let mut counts = BTreeMap::new();
            let mut failures = 0;
            for rep in &per_rep {
                match rep[i] {
                    Some(k) => *counts.entry(k).or_insert(0) += 1,
                    None => failures += 1,
                }
            }
            let hits = counts.get(&true_k).copied().unwrap_or(0);
            SelectionSummary {
                rule: *rule,
                tau: tau.value(),
                true_k,
                reps,
                rate: hits as f64 / reps as f64,
                failures,
                k_hat_counts: counts,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    /// Mean plug-in standard error.
    pub se: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationSummary {
    pub tau: f64,
    pub reps: usize,
    /// Replicates that produced an estimate with the true kink count and a covariance.
    pub usable: usize,
    pub parameters: Vec<ParameterSummary>,
}

/// Bias, SD, mean SE and MSE of BRISQ fits with the true number of kinks.
pub fn estimation_study(
    spec: &ScenarioSpec,
    tau: QuantileLevel,
    reps: usize,
    master_seed: u64,
    settings: &BrisqSettings,
    infer: &InferSettings,
) -> Result<EstimationSummary> {
    spec.validate()?;
    let truth = true_theta_at(spec, tau)?;
    let k = truth.k();
    let rows: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let (data_seed, algo_seed) = seeds(master_seed, r);
            let (data, _) = generate(&spec.with_seed(data_seed)).ok()?;
            let s = BrisqSettings { seed: algo_seed, ..settings.clone() };
            let est = brisq_fit(&data, tau, k, &s).ok().filter(|e| e.k() == k)?;
            let cov = covariance(&data, &est.params, tau, infer).ok()?;
            Some((est.params.theta(), cov.standard_errors()))
        })
        .collect();
    let usable: Vec<&(Vec<f64>, Vec<f64>)> = rows.iter().flatten().collect();
    let names: Vec<String> = {
        let mut v = vec!["alpha0".to_string(), "alpha1".to_string()];
        v.extend((1..=k).map(|j| format!("beta{j}")));
        v.push("gamma".to_string());
        v.extend((1..=k).map(|j| format!("delta{j}")));
        v
    };
    let theta0 = truth.theta();
    let parameters = if usable.is_empty() {
        Vec::new()
    } else {
        names
            .into_iter()
            .enumerate()
            .map(|(i, name)| {
                let est: Vec<f64> = usable.iter().map(|u| u.0[i]).collect();
                let se: Vec<f64> = usable.iter().map(|u| u.1[i]).collect();
                let bias = mean(&est) - theta0[i];
                let mse = est.iter().map(|e| (e - theta0[i]).powi(2)).sum::<f64>() / est.len() as f64;
                ParameterSummary { name, truth: theta0[i], bias, sd: sd(&est), se: mean(&se), mse }
            })
            .collect()
    };
    Ok(EstimationSummary { tau: tau.value(), reps, usable: usable.len(), parameters })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub method: CiMethod,
    pub kink: usize,
    pub coverage: f64,
    pub mean_length: f64,
    /// Mean wall-clock seconds per replicate for the whole interval set.
    pub mean_seconds: f64,
    pub usable: usize,
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiStudyConfig {
    pub methods: Vec<CiMethod>,
    pub level: f64,
    pub boot_replicates: usize,
    pub scan: SrsScan,
}

impl Default for CiStudyConfig {
    fn default() -> Self {
        Self { methods: vec![CiMethod::Wald, CiMethod::Score], level: 0.95, boot_replicates: 200, scan: SrsScan::default() }
    }
}

fn interval_set(
    method: CiMethod,
    data: &crate::model::Dataset,
    tau: QuantileLevel,
    est: &ThetaEstimate,
    config: &CiStudyConfig,
    seed: u64,
    settings: &BrisqSettings,
    infer: &InferSettings,
) -> Result<IntervalSet> {
    match method {
        CiMethod::Wald => wald_ci(&est.params, &covariance(data, &est.params, tau, infer)?, config.level),
        CiMethod::Boot => bootstrap_ci(data, tau, est, config.boot_replicates, config.level, seed, settings),
        CiMethod::Score => srs_invert_ci(data, tau, &est.params, config.level, &config.scan, infer),
    }
}

/// Coverage and mean length of each interval method around BRISQ fits with
/// the true number of kinks.
pub fn ci_study(
    spec: &ScenarioSpec,
    tau: QuantileLevel,
    reps: usize,
    master_seed: u64,
    config: &CiStudyConfig,
    settings: &BrisqSettings,
    infer: &InferSettings,
) -> Result<Vec<CoverageSummary>> {
    spec.validate()?;
    let truth = true_theta_at(spec, tau)?;
    let k = truth.k();
    let per_rep: Vec<Vec<Option<(IntervalSet, f64)>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let (data_seed, algo_seed) = seeds(master_seed, r);
            let none = vec![None; config.methods.len()];
            let Ok((data, _)) = generate(&spec.with_seed(data_seed)) else { return none };
            let s = BrisqSettings { seed: algo_seed, ..settings.clone() };
            let Some(est) = brisq_fit(&data, tau, k, &s).ok().filter(|e| e.k() == k) else { return none };
            config
                .methods
                .iter()
                .map(|m| {
                    let start = Instant::now();
                    let set = interval_set(*m, &data, tau, &est, config, derive_seed(algo_seed, 2), &s, infer).ok()?;
                    Some((set, start.elapsed().as_secs_f64()))
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for (mi, method) in config.methods.iter().enumerate() {
        let sets: Vec<&(IntervalSet, f64)> = per_rep.iter().filter_map(|r| r[mi].as_ref()).collect();
        let seconds = if sets.is_empty() { f64::NAN } else { mean(&sets.iter().map(|s| s.1).collect::<Vec<_>>()) };
        for j in 0..k {
            let ivs: Vec<_> = sets.iter().map(|s| &s.0.intervals[j]).collect();
            let covered = ivs.iter().filter(|iv| iv.contains(truth.deltas[j])).count();
            out.push(CoverageSummary {
                method: *method,
                kink: j + 1,
                // failed replicates count as non-covering
                coverage: covered as f64 / reps as f64,
                mean_length: if ivs.is_empty() { f64::NAN } else { mean(&ivs.iter().map(|iv| iv.length()).collect::<Vec<_>>()) },
                mean_seconds: seconds,
                usable: ivs.len(),
                truncated: ivs.iter().filter(|iv| iv.truncated_lower || iv.truncated_upper).count(),
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub c: f64,
    pub reps: usize,
    pub rejection_rate: f64,
    pub failures: usize,
}

/// Rejection rates of the sup-score test at level `alpha` for Case (1) data
/// with `b_1 = c / sqrt(n)`.
pub fn power_study(
    spec: &ScenarioSpec,
    tau: QuantileLevel,
    cs: &[f64],
    reps: usize,
    boot: usize,
    alpha: f64,
    master_seed: u64,
    infer: &InferSettings,
) -> Result<Vec<PowerPoint>> {
    cs.iter()
        .map(|&c| {
            let s = ScenarioSpec { power_c: Some(c), ..spec.clone() };
            s.validate()?;
            let outcomes: Vec<Option<bool>> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let (data_seed, algo_seed) = seeds(master_seed, r);
                    let (data, _) = generate(&s.with_seed(data_seed)).ok()?;
                    let grid = ScoreGrid::default_for(data.x()).ok()?;
                    let res = wild_bootstrap_pvalue(&data, tau, boot, &grid, algo_seed, infer, false).ok()?;
                    Some(res.p_value < alpha)
                })
                .collect();
            let failures = outcomes.iter().filter(|o| o.is_none()).count();
            let rejections = outcomes.iter().filter(|o| **o == Some(true)).count();
            Ok(PowerPoint { c, reps, rejection_rate: rejections as f64 / reps as f64, failures })
        })
        .collect()
}
