//! Inference for kink models: the sup-score test for kink existence with
//! wild-bootstrap p-values, the sandwich covariance of `theta`, and Wald,
//! bootstrap and inverted smoothed-rank-score intervals for kink locations.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF, Normal};

use crate::brisq::{brisq_fit_from, quantile_sorted, BrisqSettings, ThetaEstimate};
use crate::error::{MkqrError, Result};
use crate::linalg::{matmul, PivotedCholesky, RANK_TOLERANCE};
use crate::linqr::{
    density_weights, dot, fit_linear_qr, psi, BandwidthPolicy, BandwidthRule, DesignMatrix, QrSettings,
    QuantileLevel,
};
use crate::model::{hinge, Dataset, MkqrParams};
use crate::rng::{derive_seed, stream_rng};

/// Shared numerical settings of the inference routines.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InferSettings {
    pub rule: BandwidthRule,
    pub policy: BandwidthPolicy,
    pub qr: QrSettings,
}

fn standard_normal() -> Normal {
    Normal::standard()
}

fn sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    idx
}

fn factor_or_rank(m: &[f64], dim: usize, what: &'static str, labels: &[String], advice: &str) -> Result<PivotedCholesky> {
    PivotedCholesky::factor(m, dim, RANK_TOLERANCE).map_err(|def| MkqrError::Rank {
        what,
        column: labels.get(def.column).cloned().unwrap_or_else(|| def.column.to_string()),
        advice: advice.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Score test

/// Candidate kink locations for the sup-score statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGrid {
    pub points: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl ScoreGrid {
    /// Every distinct sample `x` between the `lower` and `upper` sample
    /// quantiles, plus the two quantiles themselves.
    pub fn from_data(x: &[f64], lower: f64, upper: f64) -> Result<Self> {
        if !(0.0 <= lower && lower < upper && upper <= 1.0) {
            return Err(MkqrError::usage(format!("trimming fractions ({lower}, {upper}) are invalid")));
        }
        let xs = sorted(x);
        let lo = quantile_sorted(&xs, lower);
        let hi = quantile_sorted(&xs, upper);
        let mut points = vec![lo];
        points.extend(xs.iter().copied().filter(|v| *v > lo && *v < hi));
        points.push(hi);
        points.dedup();
        if points.len() < 10 {
            return Err(MkqrError::data(format!(
                "score grid has {} points between the {lower} and {upper} quantiles of x; need at least 10",
                points.len()
            )));
        }
        Ok(Self { points, lower, upper })
    }

    pub fn default_for(x: &[f64]) -> Result<Self> {
        Self::from_data(x, 0.1, 0.9)
    }
}

/// `sum_{x_t <= d} e_t (x_t - d)` for each `d` in the sorted `grid`.
fn cusum(x: &[f64], order: &[usize], e: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let (mut i, mut a, mut b) = (0, 0.0, 0.0);
    for &d in grid {
        while i < order.len() && x[order[i]] <= d {
            let t = order[i];
            a += e[t] * x[t];
            b += e[t];
            i += 1;
        }
        out.push(a - d * b);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreStatistic {
    pub statistic: f64,
    pub argmax: f64,
    /// `R_n(d)` at each grid point.
    pub values: Vec<f64>,
    /// Null fit coefficients on `(1, x, z)`.
    pub null_coefficients: Vec<f64>,
}

/// `T_n = sup_d |R_n(d)|` with `R_n(d) = n^{-1/2} sum_t psi(e_t) (x_t - d) 1[x_t <= d]`
/// and `e_t` the residuals of the linear (no-kink) fit.
pub fn score_statistic(
    data: &Dataset,
    tau: QuantileLevel,
    grid: &ScoreGrid,
    qr: &QrSettings,
) -> Result<ScoreStatistic> {
    let design = data.linear_design();
    let fit = fit_linear_qr(&design, data.y(), tau, qr)?;
    let e: Vec<f64> = fit.residuals.iter().map(|r| psi(*r, tau)).collect();
    let order = argsort(data.x());
    let scale = (data.n() as f64).sqrt();
    let values: Vec<f64> = cusum(data.x(), &order, &e, &grid.points).into_iter().map(|v| v / scale).collect();
    let (imax, statistic) = values
        .iter()
        .map(|v| v.abs())
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    Ok(ScoreStatistic { statistic, argmax: grid.points[imax], values, null_coefficients: fit.coefficients })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinkTestResult {
    pub statistic: f64,
    pub argmax: f64,
    pub p_value: f64,
    pub replicates: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub bandwidth: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicate_statistics: Option<Vec<f64>>,
}

/// Sup-score test of "no kink" with the multiplier bootstrap: each replicate
/// draws `v_t ~ N(0,1) - q(tau)` and Rademacher `w_t` and evaluates
///
/// ```text
///   R*(d) = n^{-1/2} sum_t w_t psi(v_t) {(x_t - d) 1[x_t <= d] - H1(d)' H^{-1} V_t}
/// ```
///
/// with density-weighted plug-ins `H = n^{-1} sum f_t V_t V_t'` and
/// `H1(d) = n^{-1} sum f_t V_t (x_t - d) 1[x_t <= d]`. The p-value is the
/// share of replicates with `T* >= T_n`.
pub fn wild_bootstrap_pvalue(
    data: &Dataset,
    tau: QuantileLevel,
    replicates: usize,
    grid: &ScoreGrid,
    seed: u64,
    settings: &InferSettings,
    keep_replicates: bool,
) -> Result<KinkTestResult> {
    if replicates == 0 {
        return Err(MkqrError::usage("bootstrap replicate count must be positive"));
    }
    let observed = score_statistic(data, tau, grid, &settings.qr)?;
    let design = data.linear_design();
    let d = design.cols();
    let n = data.n();
    let weights = density_weights(&design, data.y(), tau, settings.rule, settings.policy, &settings.qr)?;
    let f = &weights.values;
    let h = design.weighted_gram(Some(f));
    let h_scaled: Vec<f64> = h.iter().map(|v| v / n as f64).collect();
    let factor = factor_or_rank(
        &h_scaled,
        d,
        "density-weighted null Gram matrix",
        design.labels(),
        "; too few observations with positive density weight",
    )?;

    // H1(d) for every grid point by a sweep over sorted x, then g(d) = H^{-1} H1(d).
    let order = argsort(data.x());
    let x = data.x();
    let mut g = Vec::with_capacity(grid.points.len());
    let (mut i, mut fvx, mut fv) = (0, vec![0.0; d], vec![0.0; d]);
    for &delta in &grid.points {
        while i < n && x[order[i]] <= delta {
            let t = order[i];
            let row = design.row(t);
            for j in 0..d {
                fvx[j] += f[t] * row[j] * x[t];
                fv[j] += f[t] * row[j];
            }
            i += 1;
        }
        let h1: Vec<f64> = (0..d).map(|j| (fvx[j] - delta * fv[j]) / n as f64).collect();
        g.push(factor.solve(&h1));
    }

    let plan = Multiplier { design: &design, order: &order, g: &g, grid: &grid.points, x, tau };
    let stats: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|b| plan.process(seed, b as u64).iter().fold(0.0_f64, |m, v| m.max(v.abs())))
        .collect();
    let exceed = stats.iter().filter(|t| **t >= observed.statistic).count();
    Ok(KinkTestResult {
        statistic: observed.statistic,
        argmax: observed.argmax,
        p_value: exceed as f64 / replicates as f64,
        replicates,
        seed,
        grid_points: grid.points.len(),
        bandwidth: weights.bandwidth,
        replicate_statistics: keep_replicates.then_some(stats),
    })
}

/// Precomputed pieces of the multiplier bootstrap.
struct Multiplier<'a> {
    design: &'a DesignMatrix,
    order: &'a [usize],
    /// `H^{-1} H1(d)` per grid point.
    g: &'a [Vec<f64>],
    grid: &'a [f64],
    x: &'a [f64],
    tau: QuantileLevel,
}

impl Multiplier<'_> {
    /// `R*(d)` on the grid for replicate `b`.
    fn process(&self, seed: u64, b: u64) -> Vec<f64> {
        let n = self.x.len();
        let q = standard_normal().inverse_cdf(self.tau.value());
        let mut rng = stream_rng(seed, b);
        let e: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                let w = if rng.random::<bool>() { 1.0 } else { -1.0 };
                w * psi(z - q, self.tau)
            })
            .collect();
        let mut s = vec![0.0; self.design.cols()];
        for (t, et) in e.iter().enumerate() {
            for (sj, vj) in s.iter_mut().zip(self.design.row(t)) {
                *sj += et * vj;
            }
        }
        let scale = (n as f64).sqrt();
        cusum(self.x, self.order, &e, self.grid)
            .iter()
            .zip(self.g)
            .map(|(c, gk)| (c - dot(gk, &s)) / scale)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Covariance

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    /// Row-major `dim x dim`, ordered `(a0, a1, b, g, d)`.
    pub sigma: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub d_hat: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<String>,
    pub n: usize,
    pub rule: BandwidthRule,
    pub bandwidth: f64,
    /// Density weights clamped to zero.
    pub clamped: usize,
}

impl CovarianceEstimate {
    /// `sqrt(diag(Sigma) / n)`.
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.dim).map(|i| (self.sigma[i * self.dim + i].max(0.0) / self.n as f64).sqrt()).collect()
    }

    /// Standard errors of the kink locations.
    pub fn delta_standard_errors(&self, k: usize) -> Vec<f64> {
        let se = self.standard_errors();
        se[self.dim - k..].to_vec()
    }
}

/// Gradient of the quantile function with respect to `(a0, a1, b, g, d)`.
fn score_vector(params: &MkqrParams, x: f64, z: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    out.push(x);
    out.extend(params.deltas.iter().map(|d| hinge(x, *d)));
    out.extend_from_slice(z);
    out.extend(params.betas.iter().zip(&params.deltas).map(|(b, d)| if x > *d { -b } else { 0.0 }));
}

/// Sandwich `Sigma = D^{-1} C D^{-1}` with `C = tau(1-tau) n^{-1} sum h h'` and
/// `D = n^{-1} sum f_t h h'`, where `f_t` are Hendricks-Koenker density
/// estimates from the fixed-kink design.
pub fn covariance(
    data: &Dataset,
    params: &MkqrParams,
    tau: QuantileLevel,
    settings: &InferSettings,
) -> Result<CovarianceEstimate> {
    let k = params.k();
    let design = data.design(&params.deltas)?;
    let weights = density_weights(&design, data.y(), tau, settings.rule, settings.policy, &settings.qr)?;
    let n = data.n();
    let dim = design.cols() + k;
    let t = tau.value();
    let mut c_hat = vec![0.0; dim * dim];
    let mut d_hat = vec![0.0; dim * dim];
    let mut h = Vec::with_capacity(dim);
    for row in 0..n {
        score_vector(params, data.x()[row], data.z_row(row), &mut h);
        let f = weights.values[row];
        for i in 0..dim {
            for j in 0..=i {
                let v = h[i] * h[j];
                c_hat[i * dim + j] += v;
                d_hat[i * dim + j] += f * v;
            }
        }
    }
    for i in 0..dim {
        for j in 0..=i {
            let c = c_hat[i * dim + j] * t * (1.0 - t) / n as f64;
            let d = d_hat[i * dim + j] / n as f64;
            c_hat[i * dim + j] = c;
            c_hat[j * dim + i] = c;
            d_hat[i * dim + j] = d;
            d_hat[j * dim + i] = d;
        }
    }
    let mut labels = design.labels().to_vec();
    labels.extend((1..=k).map(|j| format!("delta{j}")));
    let factor = factor_or_rank(
        &d_hat,
        dim,
        "density-weighted information matrix",
        &labels,
        "; too few observations with positive density weight near a kink",
    )?;
    let d_inv = factor.inverse();
    let mut sigma = matmul(&matmul(&d_inv, &c_hat, dim), &d_inv, dim);
    crate::linalg::symmetrize(&mut sigma, dim);
    Ok(CovarianceEstimate {
        sigma,
        c_hat,
        d_hat,
        dim,
        labels,
        n,
        rule: weights.rule,
        bandwidth: weights.bandwidth,
        clamped: weights.clamped,
    })
}

// ---------------------------------------------------------------------------
// Intervals

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    Wald,
    Boot,
    Score,
}

impl std::str::FromStr for CiMethod {
    type Err = MkqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wald" => Ok(Self::Wald),
            "boot" | "bootstrap" => Ok(Self::Boot),
            "score" | "srs" => Ok(Self::Score),
            other => Err(MkqrError::usage(format!("unknown interval method `{other}` (wald, boot, score)"))),
        }
    }
}

impl std::fmt::Display for CiMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Wald => "wald",
            Self::Boot => "boot",
            Self::Score => "score",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinkInterval {
    /// 1-based kink number.
    pub kink: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub truncated_lower: bool,
    pub truncated_upper: bool,
}

impl KinkInterval {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    pub method: CiMethod,
    pub level: f64,
    pub intervals: Vec<KinkInterval>,
    /// Bootstrap replicates used and discarded (boot only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates_discarded: Option<usize>,
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(MkqrError::usage(format!("confidence level {level} outside (0, 1)")))
    }
}

/// `estimate +/- z_{(1+level)/2} se`.
pub fn wald_interval(estimate: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    check_level(level)?;
    let z = standard_normal().inverse_cdf(0.5 + level / 2.0);
    Ok((estimate - z * se, estimate + z * se))
}

/// Normal intervals for every kink location.
pub fn wald_ci(params: &MkqrParams, cov: &CovarianceEstimate, level: f64) -> Result<IntervalSet> {
    let k = params.k();
    if cov.dim != params.coefficients().len() + k {
        return Err(MkqrError::usage("covariance does not match the parameter vector"));
    }
    let se = cov.delta_standard_errors(k);
    let intervals = params
        .deltas
        .iter()
        .zip(&se)
        .enumerate()
        .map(|(j, (d, s))| {
            let (lower, upper) = wald_interval(*d, *s, level)?;
            Ok(KinkInterval { kink: j + 1, estimate: *d, lower, upper, truncated_lower: false, truncated_upper: false })
        })
        .collect::<Result<_>>()?;
    Ok(IntervalSet { method: CiMethod::Wald, level, intervals, replicates_used: None, replicates_discarded: None })
}

/// Percentile intervals from paired-bootstrap refits warm-started at the
/// estimate. Replicates whose fit loses or gains kinks are discarded.
pub fn bootstrap_ci(
    data: &Dataset,
    tau: QuantileLevel,
    theta: &ThetaEstimate,
    replicates: usize,
    level: f64,
    seed: u64,
    settings: &BrisqSettings,
) -> Result<IntervalSet> {
    check_level(level)?;
    let k = theta.k();
    if k == 0 {
        return Err(MkqrError::usage("bootstrap intervals need at least one kink"));
    }
    let n = data.n();
    let draws: Vec<Option<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let boot = data.resample(&idx);
            let s = BrisqSettings { seed: derive_seed(seed, b as u64), ..settings.clone() };
            brisq_fit_from(&boot, tau, theta.deltas(), &s).ok().filter(|e| e.k() == k).map(|e| e.params.deltas)
        })
        .collect();
    let usable: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    if usable.len() * 2 < replicates || usable.is_empty() {
        return Err(MkqrError::DegenerateBootstrap { usable: usable.len(), requested: replicates });
    }
    let alpha = 1.0 - level;
    let intervals = (0..k)
        .map(|j| {
            let col = sorted(&usable.iter().map(|d| d[j]).collect::<Vec<_>>());
            KinkInterval {
                kink: j + 1,
                estimate: theta.deltas()[j],
                lower: quantile_sorted(&col, alpha / 2.0),
                upper: quantile_sorted(&col, 1.0 - alpha / 2.0),
                truncated_lower: false,
                truncated_upper: false,
            }
        })
        .collect();
    Ok(IntervalSet {
        method: CiMethod::Boot,
        level,
        intervals,
        replicates_used: Some(usable.len()),
        replicates_discarded: Some(replicates - usable.len()),
    })
}

// ---------------------------------------------------------------------------
// Smoothed rank score

/// Default smoothing bandwidth `sd(x) n^{-1/5}`.
pub fn default_srs_bandwidth(data: &Dataset) -> f64 {
    sd(data.x()) * (data.n() as f64).powf(-0.2)
}

/// Default scan step `range(x) / 200`.
pub fn default_rho_step(data: &Dataset) -> f64 {
    data.x_range() / 200.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrsStatistic {
    pub statistic: f64,
    /// Degrees of freedom (number of tested coordinates).
    pub df: usize,
}

/// Smoothed rank score statistic for `H0: delta = deltas_tilde`, restricted
/// to the kink coordinates in `coords` (all kinks when `None`).
pub fn srs_statistic(
    data: &Dataset,
    tau: QuantileLevel,
    deltas_tilde: &[f64],
    h: &[f64],
    coords: Option<&[usize]>,
    settings: &InferSettings,
) -> Result<SrsStatistic> {
    let k = deltas_tilde.len();
    if k == 0 {
        return Err(MkqrError::usage("the rank score statistic needs at least one kink"));
    }
    if h.len() != k || h.iter().any(|v| !(*v > 0.0)) {
        return Err(MkqrError::usage("one positive smoothing bandwidth per kink is required"));
    }
    let all: Vec<usize> = (0..k).collect();
    let coords = coords.unwrap_or(&all);
    if coords.is_empty() || coords.iter().any(|c| *c >= k) {
        return Err(MkqrError::usage("tested kink coordinates out of range"));
    }
    let design = data.design(deltas_tilde)?;
    let fit = fit_linear_qr(&design, data.y(), tau, &settings.qr)?;
    let weights = density_weights(&design, data.y(), tau, settings.rule, settings.policy, &settings.qr)?;
    let betas = &fit.coefficients[2..2 + k];
    let n = data.n();
    let m = design.cols();
    let q = coords.len();
    let normal = standard_normal();

    // Partial scores P (n x q), column-major.
    let mut p = vec![0.0; n * q];
    for (c, &j) in coords.iter().enumerate() {
        for t in 0..n {
            let u = (data.x()[t] - deltas_tilde[j]) / h[j];
            p[c * n + t] = -betas[j] * normal.cdf(u) - betas[j] * (data.x()[t] - deltas_tilde[j]) * normal.pdf(u) / h[j];
        }
    }
    // P* = P - M (M' Psi M)^{-1} M' Psi P
    let gram = design.weighted_gram(Some(&weights.values));
    let factor = factor_or_rank(
        &gram,
        m,
        "density-weighted design at the hypothesized kinks",
        design.labels(),
        "; too few observations with positive density weight",
    )?;
    for c in 0..q {
        let col = &mut p[c * n..(c + 1) * n];
        let mut rhs = vec![0.0; m];
        for t in 0..n {
            let w = weights.values[t] * col[t];
            if w != 0.0 {
                for (r, v) in rhs.iter_mut().zip(design.row(t)) {
                    *r += w * v;
                }
            }
        }
        let coef = factor.solve(&rhs);
        for t in 0..n {
            col[t] -= dot(design.row(t), &coef);
        }
    }
    let tv = tau.value();
    let root_n = (n as f64).sqrt();
    let s: Vec<f64> = (0..q)
        .map(|c| (0..n).map(|t| p[c * n + t] * psi(fit.residuals[t], tau)).sum::<f64>() / root_n)
        .collect();
    let mut v = vec![0.0; q * q];
    for a in 0..q {
        for b in 0..=a {
            let val = tv * (1.0 - tv) * (0..n).map(|t| p[a * n + t] * p[b * n + t]).sum::<f64>() / n as f64;
            v[a * q + b] = val;
            v[b * q + a] = val;
        }
    }
    let labels: Vec<String> = coords.iter().map(|j| format!("delta{}", j + 1)).collect();
    let vf = factor_or_rank(&v, q, "rank score variance", &labels, "; the smoothed scores vanish")?;
    let statistic = dot(&s, &vf.solve(&s)).max(0.0);
    Ok(SrsStatistic { statistic, df: q })
}

/// Options for inverting the rank score test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SrsScan {
    /// Default `range(x) / 200`.
    pub rho_step: Option<f64>,
    /// Default `sd(x) n^{-1/5}`.
    pub bandwidth: Option<f64>,
}

/// Per-kink intervals by scanning `d_k +/- m rho` with the other kinks held
/// at their estimates; the first rejection on each side is the endpoint.
/// Scans stop at the support edges and at the neighboring kinks, and an
/// unrejected (or numerically failed) scan is flagged as truncated.
pub fn srs_invert_ci(
    data: &Dataset,
    tau: QuantileLevel,
    params: &MkqrParams,
    level: f64,
    scan: &SrsScan,
    settings: &InferSettings,
) -> Result<IntervalSet> {
    check_level(level)?;
    let k = params.k();
    if k == 0 {
        return Err(MkqrError::usage("score intervals need at least one kink"));
    }
    let rho = scan.rho_step.unwrap_or_else(|| default_rho_step(data));
    let bw = scan.bandwidth.unwrap_or_else(|| default_srs_bandwidth(data));
    if !(rho > 0.0) || !(bw > 0.0) {
        return Err(MkqrError::usage("scan step and bandwidth must be positive"));
    }
    let crit = ChiSquared::new(1.0).expect("valid df").inverse_cdf(level);
    let h = vec![bw; k];
    let (x_min, x_max) = (data.x_min(), data.x_max());
    let mut intervals = Vec::with_capacity(k);
    for j in 0..k {
        let est = params.deltas[j];
        let lo_cap = if j == 0 { x_min } else { params.deltas[j - 1] };
        let hi_cap = if j + 1 == k { x_max } else { params.deltas[j + 1] };
        let stat_at = |d: f64| -> Result<f64> {
            let mut deltas = params.deltas.clone();
            deltas[j] = d;
            Ok(srs_statistic(data, tau, &deltas, &h, Some(&[j]), settings)?.statistic)
        };
        let bound = |sign: f64, cap: f64| -> (f64, bool) {
            let mut last = est;
            for m in 1.. {
                let d = est + sign * (m as f64) * rho;
                if (sign > 0.0 && d >= cap) || (sign < 0.0 && d <= cap) {
                    return (cap, true);
                }
                match stat_at(d) {
                    Ok(s) if s > crit => return (d, false),
                    Ok(_) => last = d,
                    Err(_) => return (last, true),
                }
            }
            unreachable!()
        };
        let (upper, truncated_upper) = bound(1.0, hi_cap);
        let (lower, truncated_lower) = bound(-1.0, lo_cap);
        intervals.push(KinkInterval { kink: j + 1, estimate: est, lower, upper, truncated_lower, truncated_upper });
    }
    Ok(IntervalSet { method: CiMethod::Score, level, intervals, replicates_used: None, replicates_discarded: None })
}
