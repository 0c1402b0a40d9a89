//! Linear quantile regression: check-loss minimization on a dense design and
//! the Hendricks-Koenker difference-quotient density estimates that every
//! sandwich or rank-score computation downstream relies on.
//!
//! The solver is a primal-dual (Frisch-Newton) interior point method on the
//! bounded dual linear program
//!
//! ```text
//!   max  y'a   s.t.  X'a = (1 - tau) X'1,   0 <= a <= 1
//! ```
//!
//! with Mehrotra predictor-corrector steps. The regression coefficients are
//! the (negated) multipliers of the equality constraints. After convergence
//! the solution is snapped to the vertex through the `d` observations with
//! the smallest absolute residuals whenever that vertex is at least as good,
//! so interpolated observations carry exactly zero residuals.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{MkqrError, Result};
use crate::linalg::{self, PivotedCholesky, RANK_TOLERANCE};

/// A quantile level strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(MkqrError::usage(format!("quantile level {tau} is not inside (0, 1)")))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = MkqrError;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(q: QuantileLevel) -> f64 {
        q.0
    }
}

impl fmt::Display for QuantileLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Check loss `rho_tau(u) = u (tau - 1[u < 0])`.
#[inline]
pub fn check_loss(u: f64, tau: QuantileLevel) -> f64 {
    let t = tau.value();
    if u < 0.0 {
        u * (t - 1.0)
    } else {
        u * t
    }
}

/// Quantile score `psi_tau(u) = tau - 1[u <= 0]`.
#[inline]
pub fn psi(u: f64, tau: QuantileLevel) -> f64 {
    if u <= 0.0 {
        tau.value() - 1.0
    } else {
        tau.value()
    }
}

/// Mean check loss of a residual vector.
pub fn mean_check_loss(residuals: &[f64], tau: QuantileLevel) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    residuals.iter().map(|&r| check_loss(r, tau)).sum::<f64>() / residuals.len() as f64
}

/// Dense row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(MkqrError::usage(format!(
                "design has {} values, expected {rows} x {cols}",
                values.len()
            )));
        }
        if labels.len() != cols {
            return Err(MkqrError::usage(format!("{} labels for {cols} columns", labels.len())));
        }
        if rows < cols {
            return Err(MkqrError::data(format!(
                "design has fewer rows ({rows}) than columns ({cols})"
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(MkqrError::data(format!(
                "non-finite design entry at row {}, column `{}`",
                pos / cols + 1,
                labels[pos % cols]
            )));
        }
        Ok(Self { rows, cols, values, labels })
    }

    /// Builds a design from column vectors.
    pub fn from_columns(columns: &[(&str, Vec<f64>)]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.1.len());
        if columns.iter().any(|c| c.1.len() != rows) {
            return Err(MkqrError::usage("design columns have different lengths"));
        }
        let mut values = vec![0.0; rows * cols];
        for (j, (_, col)) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                values[i * cols + j] = *v;
            }
        }
        let labels = columns.iter().map(|c| c.0.to_string()).collect();
        Self::new(rows, cols, values, labels)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// `X b`.
    pub fn mul_vec(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), b)).collect()
    }

    /// `sum_i w_i x_i x_i'` as a row-major `cols x cols` matrix.
    pub fn weighted_gram(&self, weights: Option<&[f64]>) -> Vec<f64> {
        let d = self.cols;
        let mut g = vec![0.0; d * d];
        for i in 0..self.rows {
            let w = weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            let r = self.row(i);
            for j in 0..d {
                let wj = w * r[j];
                if wj == 0.0 {
                    continue;
                }
                let gj = &mut g[j * d..j * d + j + 1];
                for (k, gk) in gj.iter_mut().enumerate() {
                    *gk += wj * r[k];
                }
            }
        }
        for j in 0..d {
            for k in 0..j {
                g[k * d + j] = g[j * d + k];
            }
        }
        g
    }

    /// Pivoted factorization of `X'X`; the error names the first column found
    /// to be collinear with the rest.
    pub fn check_rank(&self) -> Result<PivotedCholesky> {
        let gram = self.weighted_gram(None);
        PivotedCholesky::factor(&gram, self.cols, RANK_TOLERANCE).map_err(|def| MkqrError::Rank {
            what: "design",
            column: self.labels[def.column].clone(),
            advice: String::new(),
        })
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Settings for [`fit_linear_qr`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QrSettings {
    /// Relative duality-gap tolerance.
    pub gap_tolerance: f64,
    pub max_iterations: usize,
    /// Snap the interior solution to an optimal vertex when one is found.
    pub vertex_polish: bool,
}

impl Default for QrSettings {
    fn default() -> Self {
        Self { gap_tolerance: 1e-8, max_iterations: 200, vertex_polish: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrSolution {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Mean check loss of `residuals`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl QrSolution {
    fn from_coefficients(
        design: &DesignMatrix,
        y: &[f64],
        tau: QuantileLevel,
        coefficients: Vec<f64>,
        iterations: usize,
        converged: bool,
    ) -> Self {
        let fitted = design.mul_vec(&coefficients);
        let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
        let objective = mean_check_loss(&residuals, tau);
        Self { coefficients, residuals, objective, iterations, converged }
    }
}

/// Minimizes `sum_i rho_tau(y_i - x_i' b)` over `b`.
pub fn fit_linear_qr(
    design: &DesignMatrix,
    y: &[f64],
    tau: QuantileLevel,
    settings: &QrSettings,
) -> Result<QrSolution> {
    let n = design.rows();
    let d = design.cols();
    if y.len() != n {
        return Err(MkqrError::usage(format!("response has {} values, design has {n} rows", y.len())));
    }
    if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
        return Err(MkqrError::data(format!("non-finite response at row {}", pos + 1)));
    }
    let gram_factor = design.check_rank()?;
    let t = tau.value();

    // Start: a = 1 - tau (primal feasible), dual from least squares.
    let mut xp = vec![1.0 - t; n];
    let mut sp = vec![t; n];
    let xty: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| design.get(i, j) * y[i]).sum())
        .collect();
    let beta_ls = gram_factor.solve(&xty);
    // LP dual multipliers are the negated coefficients.
    let mut dual: Vec<f64> = beta_ls.iter().map(|b| -b).collect();
    let resid0: Vec<f64> = y.iter().zip(design.mul_vec(&beta_ls)).map(|(y, f)| y - f).collect();
    let spread = resid0.iter().map(|r| r.abs()).sum::<f64>() / n as f64;
    let offset = (0.5 * spread).max(1e-6 * (1.0 + y.iter().fold(0.0_f64, |m, v| m.max(v.abs()))));
    // z - w = c - A'dual = X beta - y = -resid
    let mut z: Vec<f64> = resid0.iter().map(|r| (-r).max(0.0) + offset).collect();
    let mut w: Vec<f64> = resid0.iter().map(|r| r.max(0.0) + offset).collect();

    let b_rhs: Vec<f64> = (0..d)
        .map(|j| (1.0 - t) * (0..n).map(|i| design.get(i, j)).sum::<f64>())
        .collect();

    let mut theta = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let mut dz = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let mut rz = vec![0.0; n];
    let mut rw = vec![0.0; n];
    const STEP_SCALE: f64 = 0.99995;

    let beta_of = |dual: &[f64]| -> Vec<f64> { dual.iter().map(|v| -v).collect() };

    let mut iterations = 0;
    loop {
        let gap: f64 = (0..n).map(|i| xp[i] * z[i] + sp[i] * w[i]).sum();
        let beta = beta_of(&dual);
        let current = QrSolution::from_coefficients(design, y, tau, beta, iterations, false);
        let scale = (current.objective * n as f64).max(1.0);
        if gap <= settings.gap_tolerance * scale {
            let mut sol = current;
            sol.converged = true;
            if settings.vertex_polish {
                polish_to_vertex(design, y, tau, &mut sol);
            }
            return Ok(sol);
        }
        if iterations >= settings.max_iterations {
            return Err(MkqrError::Convergence { iterations, gap, last: Box::new(current) });
        }
        iterations += 1;

        // residuals of the equality constraints (drift only)
        let mut r_primal = b_rhs.clone();
        for i in 0..n {
            let row = design.row(i);
            for j in 0..d {
                r_primal[j] -= row[j] * xp[i];
            }
        }
        // r_dual = c - A'dual - z + w with c = -y
        let r_dual: Vec<f64> = (0..n)
            .map(|i| -y[i] - dot(design.row(i), &dual) - z[i] + w[i])
            .collect();

        for i in 0..n {
            theta[i] = 1.0 / (z[i] / xp[i] + w[i] / sp[i]);
        }
        let normal = design.weighted_gram(Some(&theta));
        let factor = match PivotedCholesky::factor(&normal, d, 1e-15) {
            Ok(f) => f,
            Err(_) => {
                let mut reg = normal.clone();
                let bump = 1e-12 * (0..d).map(|j| normal[j * d + j]).fold(0.0, f64::max);
                for j in 0..d {
                    reg[j * d + j] += bump;
                }
                PivotedCholesky::factor(&reg, d, 0.0).map_err(|def| MkqrError::Rank {
                    what: "interior point normal matrix",
                    column: design.labels()[def.column].clone(),
                    advice: String::new(),
                })?
            }
        };

        // predictor
        for i in 0..n {
            rz[i] = -xp[i] * z[i];
            rw[i] = -sp[i] * w[i];
        }
        let dy_aff = newton_direction(
            design, &factor, &theta, &xp, &sp, &z, &w, &r_primal, &r_dual, &rz, &rw, &mut g,
            &mut dx, &mut dz, &mut dw,
        );
        let _ = dy_aff;
        let (ap, ad) = step_lengths(&xp, &sp, &z, &w, &dx, &dz, &dw, 1.0);
        let mut mu_aff = 0.0;
        for i in 0..n {
            mu_aff += (xp[i] + ap * dx[i]) * (z[i] + ad * dz[i])
                + (sp[i] - ap * dx[i]) * (w[i] + ad * dw[i]);
        }
        let sigma = (mu_aff / gap).powi(3).min(1.0);
        let mu = sigma * gap / (2 * n) as f64;

        // corrector
        for i in 0..n {
            rz[i] = mu - xp[i] * z[i] - dx[i] * dz[i];
            rw[i] = mu - sp[i] * w[i] + dx[i] * dw[i];
        }
        let dy = newton_direction(
            design, &factor, &theta, &xp, &sp, &z, &w, &r_primal, &r_dual, &rz, &rw, &mut g,
            &mut dx, &mut dz, &mut dw,
        );
        let (ap, ad) = step_lengths(&xp, &sp, &z, &w, &dx, &dz, &dw, STEP_SCALE);
        for i in 0..n {
            xp[i] += ap * dx[i];
            sp[i] -= ap * dx[i];
            z[i] += ad * dz[i];
            w[i] += ad * dw[i];
        }
        for j in 0..d {
            dual[j] += ad * dy[j];
        }
    }
}

/// Solves the reduced Newton system for one right-hand side. Fills `dx`,
/// `dz`, `dw` and returns `dy`.
#[allow(clippy::too_many_arguments)]
fn newton_direction(
    design: &DesignMatrix,
    factor: &PivotedCholesky,
    theta: &[f64],
    xp: &[f64],
    sp: &[f64],
    z: &[f64],
    w: &[f64],
    r_primal: &[f64],
    r_dual: &[f64],
    rz: &[f64],
    rw: &[f64],
    g: &mut [f64],
    dx: &mut [f64],
    dz: &mut [f64],
    dw: &mut [f64],
) -> Vec<f64> {
    let n = design.rows();
    let d = design.cols();
    // A'dy - q dx = g,  A dx = r_p  =>  (A theta A') dy = r_p + A (theta g)
    let mut rhs = r_primal.to_vec();
    for i in 0..n {
        g[i] = r_dual[i] - rz[i] / xp[i] + rw[i] / sp[i];
        let tg = theta[i] * g[i];
        let row = design.row(i);
        for j in 0..d {
            rhs[j] += row[j] * tg;
        }
    }
    let dy = factor.solve(&rhs);
    for i in 0..n {
        dx[i] = theta[i] * (dot(design.row(i), &dy) - g[i]);
        dz[i] = (rz[i] - z[i] * dx[i]) / xp[i];
        dw[i] = (rw[i] + w[i] * dx[i]) / sp[i];
    }
    dy
}

#[allow(clippy::too_many_arguments)]
fn step_lengths(
    xp: &[f64],
    sp: &[f64],
    z: &[f64],
    w: &[f64],
    dx: &[f64],
    dz: &[f64],
    dw: &[f64],
    scale: f64,
) -> (f64, f64) {
    let mut ap = f64::INFINITY;
    let mut ad = f64::INFINITY;
    for i in 0..xp.len() {
        if dx[i] < 0.0 {
            ap = ap.min(-xp[i] / dx[i]);
        } else if dx[i] > 0.0 {
            ap = ap.min(sp[i] / dx[i]);
        }
        if dz[i] < 0.0 {
            ad = ad.min(-z[i] / dz[i]);
        }
        if dw[i] < 0.0 {
            ad = ad.min(-w[i] / dw[i]);
        }
    }
    ((scale * ap).min(1.0), (scale * ad).min(1.0))
}

/// Replaces an interior solution by the basic solution through the `d`
/// smallest absolute residuals when that vertex is no worse.
fn polish_to_vertex(design: &DesignMatrix, y: &[f64], tau: QuantileLevel, sol: &mut QrSolution) {
    let n = design.rows();
    let d = design.cols();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        sol.residuals[a]
            .abs()
            .partial_cmp(&sol.residuals[b].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let basis = &order[..d];
    let mut a = Vec::with_capacity(d * d);
    let mut rhs = Vec::with_capacity(d);
    for &i in basis {
        a.extend_from_slice(design.row(i));
        rhs.push(y[i]);
    }
    let Some(beta) = linalg::lu_solve(&a, &rhs, d, 1e-10) else {
        return;
    };
    let mut candidate =
        QrSolution::from_coefficients(design, y, tau, beta, sol.iterations, true);
    let slack = 1e-12 * (1.0 + sol.objective);
    if candidate.objective <= sol.objective + slack {
        for &i in basis {
            candidate.residuals[i] = 0.0;
        }
        candidate.objective = mean_check_loss(&candidate.residuals, tau);
        *sol = candidate;
    }
}

/// Closed-form bandwidth rules for the difference-quotient density estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// Edgeworth-expansion rule for studentized quantiles (alpha = 0.05).
    #[default]
    HallSheather,
    /// Rule minimizing the mean squared error of the density estimate.
    Bofinger,
}

impl FromStr for BandwidthRule {
    type Err = MkqrError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hall-sheather" | "hs" | "hall_sheather" => Ok(Self::HallSheather),
            "bofinger" => Ok(Self::Bofinger),
            other => Err(MkqrError::usage(format!(
                "unknown bandwidth rule `{other}` (expected hall-sheather or bofinger)"
            ))),
        }
    }
}

impl fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HallSheather => "hall-sheather",
            Self::Bofinger => "bofinger",
        })
    }
}

/// Bandwidth on the quantile scale for sample size `n`.
pub fn bandwidth(tau: QuantileLevel, n: usize, rule: BandwidthRule) -> Result<f64> {
    if n < 2 {
        return Err(MkqrError::usage(format!("bandwidth needs n >= 2, got {n}")));
    }
    let std = Normal::standard();
    let x0 = std.inverse_cdf(tau.value());
    let f0 = std.pdf(x0);
    let n = n as f64;
    let h = match rule {
        BandwidthRule::HallSheather => {
            let z = std.inverse_cdf(1.0 - 0.05 / 2.0);
            n.powf(-1.0 / 3.0)
                * z.powf(2.0 / 3.0)
                * (1.5 * f0 * f0 / (2.0 * x0 * x0 + 1.0)).powf(1.0 / 3.0)
        }
        BandwidthRule::Bofinger => {
            let denom = 2.0 * x0 * x0 + 1.0;
            n.powf(-0.2) * (4.5 * f0.powi(4) / (denom * denom)).powf(0.2)
        }
    };
    Ok(h)
}

/// What to do when `tau +/- h` leaves (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthPolicy {
    /// Shrink h to 90% of the distance from tau to the nearer boundary.
    #[default]
    Shrink,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityWeights {
    pub values: Vec<f64>,
    pub bandwidth: f64,
    pub rule: BandwidthRule,
    /// Observations whose difference quotient was negative or non-finite.
    pub clamped: usize,
}

/// Hendricks-Koenker density estimates `f_t` at the fitted `tau` quantile,
/// from the difference quotient of the fitted quantiles at `tau +/- h`.
pub fn density_weights(
    design: &DesignMatrix,
    y: &[f64],
    tau: QuantileLevel,
    rule: BandwidthRule,
    policy: BandwidthPolicy,
    settings: &QrSettings,
) -> Result<DensityWeights> {
    let t = tau.value();
    let mut h = bandwidth(tau, design.rows(), rule)?;
    if t - h <= 0.0 || t + h >= 1.0 {
        match policy {
            BandwidthPolicy::Fail => return Err(MkqrError::Bandwidth { tau: t, bandwidth: h }),
            BandwidthPolicy::Shrink => h = 0.9 * t.min(1.0 - t),
        }
    }
    let hi = fit_linear_qr(design, y, QuantileLevel::new(t + h)?, settings)?;
    let lo = fit_linear_qr(design, y, QuantileLevel::new(t - h)?, settings)?;
    let diff: Vec<f64> = hi.coefficients.iter().zip(&lo.coefficients).map(|(a, b)| a - b).collect();
    let eps = f64::EPSILON.powf(2.0 / 3.0);
    let mut clamped = 0;
    let values = (0..design.rows())
        .map(|i| {
            let dq = dot(design.row(i), &diff);
            let f = 2.0 * h / (dq - eps);
            if f.is_finite() && f >= 0.0 {
                f
            } else {
                clamped += 1;
                0.0
            }
        })
        .collect();
    Ok(DensityWeights { values, bandwidth: h, rule, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn q(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    fn intercept(y: &[f64]) -> DesignMatrix {
        DesignMatrix::from_columns(&[("intercept", vec![1.0; y.len()])]).unwrap()
    }

    #[test]
    fn quantile_level_rejects_boundaries() {
        assert!(QuantileLevel::new(0.0).is_err());
        assert!(QuantileLevel::new(1.0).is_err());
        assert!(QuantileLevel::new(f64::NAN).is_err());
        assert!(QuantileLevel::new(0.3).is_ok());
    }

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(1.0, q(0.5)), 0.5);
        assert!((check_loss(-2.0, q(0.3)) - 1.4).abs() < 1e-15);
        assert_eq!(check_loss(0.0, q(0.9)), 0.0);
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi(1.0, q(0.5)), 0.5);
        assert!((psi(0.0, q(0.3)) + 0.7).abs() < 1e-15);
        assert!((psi(-3.0, q(0.9)) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn median_of_three() {
        let y = [1.0, 2.0, 9.0];
        let sol = fit_linear_qr(&intercept(&y), &y, q(0.5), &QrSettings::default()).unwrap();
        assert!((sol.coefficients[0] - 2.0).abs() < 1e-8);
        assert!(sol.converged);
    }

    #[test]
    fn lower_quartile_flat_optimum() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let sol = fit_linear_qr(&intercept(&y), &y, q(0.25), &QrSettings::default()).unwrap();
        let b = sol.coefficients[0];
        assert!((1.0 - 1e-8..=2.0 + 1e-8).contains(&b), "{b}");
        // objective is constant (0.25 * (1+2+3)/4 ... evaluated at b = 1) on [1, 2]
        let at_one = mean_check_loss(&y.map(|v| v - 1.0), q(0.25));
        assert!((sol.objective - at_one).abs() < 1e-8);
    }

    #[test]
    fn interpolating_fit() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.37 - 2.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let design =
            DesignMatrix::from_columns(&[("intercept", vec![1.0; 20]), ("x", x.clone())]).unwrap();
        for t in [0.1, 0.5, 0.8] {
            let sol = fit_linear_qr(&design, &y, q(t), &QrSettings::default()).unwrap();
            assert!(sol.coefficients[0].abs() < 1e-8);
            assert!((sol.coefficients[1] - 2.0).abs() < 1e-8);
            assert!(sol.objective < 1e-10);
        }
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let design = DesignMatrix::from_columns(&[
            ("intercept", vec![1.0; 10]),
            ("x", x.clone()),
            ("x2", x.iter().map(|v| 2.0 * v + 1.0).collect()),
        ])
        .unwrap();
        let err = fit_linear_qr(&design, &x, q(0.5), &QrSettings::default()).unwrap_err();
        assert!(matches!(err, MkqrError::Rank { .. }));
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.sample::<f64, _>(StandardNormal)).collect();
        let design = DesignMatrix::from_columns(&[("intercept", vec![1.0; 50]), ("x", x)]).unwrap();
        let settings = QrSettings { max_iterations: 1, ..QrSettings::default() };
        match fit_linear_qr(&design, &y, q(0.5), &settings) {
            Err(MkqrError::Convergence { iterations, last, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(last.coefficients.len(), 2);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    // Hall-Sheather and Bofinger values evaluated independently (scipy.stats.norm):
    //   hs(0.5, 100)   = 0.20931604694700326
    //   hs(0.5, 10000) = 0.04509577527229662
    //   hs(0.1, 500)   = 0.04359259117851062
    //   bof(0.5, 500)  = 0.18688590782791506
    #[test]
    fn bandwidth_closed_forms() {
        let hs100 = bandwidth(q(0.5), 100, BandwidthRule::HallSheather).unwrap();
        let hs1e4 = bandwidth(q(0.5), 10_000, BandwidthRule::HallSheather).unwrap();
        assert!(hs100 > hs1e4);
        assert!((hs100 - 0.20931604694700326).abs() < 1e-9);
        assert!((hs1e4 - 0.04509577527229662).abs() < 1e-9);
        let hs = bandwidth(q(0.1), 500, BandwidthRule::HallSheather).unwrap();
        assert!((hs - 0.04359259117851062).abs() < 1e-9);
        let bof = bandwidth(q(0.5), 500, BandwidthRule::Bofinger).unwrap();
        assert!((bof - 0.18688590782791506).abs() < 1e-9);
        assert!("silverman".parse::<BandwidthRule>().is_err());
        assert!(bandwidth(q(0.5), 1, BandwidthRule::Bofinger).is_err());
    }

    #[test]
    fn density_of_standard_normal_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
        let dw = density_weights(
            &intercept(&y),
            &y,
            q(0.5),
            BandwidthRule::HallSheather,
            BandwidthPolicy::Shrink,
            &QrSettings::default(),
        )
        .unwrap();
        assert_eq!(dw.values.len(), 2000);
        assert!(dw.values.iter().all(|v| *v >= 0.0 && v.is_finite()));
        let mean = dw.values.iter().sum::<f64>() / 2000.0;
        let phi0 = 0.398_942_280_401_432_7;
        assert!((mean - phi0).abs() < 0.25 * phi0, "{mean}");
    }

    #[test]
    fn exact_fit_density_is_clamped() {
        let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 0.5 * v).collect();
        let design = DesignMatrix::from_columns(&[("intercept", vec![1.0; 30]), ("x", x)]).unwrap();
        let dw = density_weights(
            &design,
            &y,
            q(0.5),
            BandwidthRule::HallSheather,
            BandwidthPolicy::Shrink,
            &QrSettings::default(),
        )
        .unwrap();
        assert_eq!(dw.clamped, 30);
        assert!(dw.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bandwidth_policy_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..20).map(|_| rng.sample(StandardNormal)).collect();
        let err = density_weights(
            &intercept(&y),
            &y,
            q(0.02),
            BandwidthRule::Bofinger,
            BandwidthPolicy::Fail,
            &QrSettings::default(),
        )
        .unwrap_err();
        assert!(matches!(err, MkqrError::Bandwidth { .. }));
        let ok = density_weights(
            &intercept(&y),
            &y,
            q(0.02),
            BandwidthRule::Bofinger,
            BandwidthPolicy::Shrink,
            &QrSettings::default(),
        )
        .unwrap();
        assert!(ok.bandwidth < 0.02);
    }

    /// Exhaustive vertex enumeration: an optimal solution interpolates d points.
    fn vertex_oracle(design: &DesignMatrix, y: &[f64], tau: QuantileLevel) -> f64 {
        let n = design.rows();
        let d = design.cols();
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; d];
        fn rec(
            start: usize,
            depth: usize,
            idx: &mut Vec<usize>,
            n: usize,
            f: &mut dyn FnMut(&[usize]),
        ) {
            if depth == idx.len() {
                f(idx);
                return;
            }
            for i in start..n {
                idx[depth] = i;
                rec(i + 1, depth + 1, idx, n, f);
            }
        }
        rec(0, 0, &mut idx, n, &mut |sel: &[usize]| {
            let a: Vec<f64> = sel.iter().flat_map(|&i| design.row(i).to_vec()).collect();
            let b: Vec<f64> = sel.iter().map(|&i| y[i]).collect();
            if let Some(beta) = linalg::lu_solve(&a, &b, d, 1e-12) {
                let r: Vec<f64> = (0..n).map(|i| y[i] - dot(design.row(i), &beta)).collect();
                best = best.min(mean_check_loss(&r, tau));
            }
        });
        best
    }

    fn small_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize, f64)> {
        (4usize..=12, 1usize..=2, 0.1f64..0.9).prop_flat_map(|(n, d, t)| {
            (
                proptest::collection::vec(-3.0f64..3.0, n),
                proptest::collection::vec(-5.0f64..5.0, n),
                Just(d),
                Just(t),
            )
        })
    }

    fn design_for(x: &[f64], d: usize) -> DesignMatrix {
        let n = x.len();
        if d == 1 {
            DesignMatrix::from_columns(&[("intercept", vec![1.0; n])]).unwrap()
        } else {
            DesignMatrix::from_columns(&[("intercept", vec![1.0; n]), ("x", x.to_vec())]).unwrap()
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn solver_matches_vertex_enumeration((x, y, d, t) in small_instance()) {
            let design = design_for(&x, d);
            prop_assume!(design.check_rank().is_ok());
            let tau = q(t);
            let sol = fit_linear_qr(&design, &y, tau, &QrSettings::default()).unwrap();
            let oracle = vertex_oracle(&design, &y, tau);
            prop_assert!(sol.objective <= oracle + 1e-8, "{} vs {}", sol.objective, oracle);
            prop_assert!((sol.objective - mean_check_loss(&sol.residuals, tau)).abs() < 1e-12);
        }

        #[test]
        fn subgradient_counts_hold((x, y, d, t) in small_instance()) {
            let design = design_for(&x, d);
            prop_assume!(design.check_rank().is_ok());
            let n = y.len() as f64;
            let sol = fit_linear_qr(&design, &y, q(t), &QrSettings::default()).unwrap();
            let neg = sol.residuals.iter().filter(|r| **r < 0.0).count() as f64;
            let nonpos = sol.residuals.iter().filter(|r| **r <= 0.0).count() as f64;
            prop_assert!(neg <= n * t + d as f64);
            prop_assert!(nonpos >= n * t - d as f64);
        }

        #[test]
        fn scale_and_shift_equivariance((x, y, _d, t) in small_instance(), c in 0.1f64..10.0, a in -3.0f64..3.0) {
            let design = design_for(&x, 2);
            prop_assume!(design.check_rank().is_ok());
            let tau = q(t);
            let base = fit_linear_qr(&design, &y, tau, &QrSettings::default()).unwrap();
            let scaled: Vec<f64> = y.iter().map(|v| c * v).collect();
            let s = fit_linear_qr(&design, &scaled, tau, &QrSettings::default()).unwrap();
            prop_assert!((s.objective - c * base.objective).abs() < 1e-6 * (1.0 + c * base.objective));
            let shifted: Vec<f64> = y.iter().zip(&x).map(|(v, xv)| v + a * xv).collect();
            let sh = fit_linear_qr(&design, &shifted, tau, &QrSettings::default()).unwrap();
            prop_assert!((sh.objective - base.objective).abs() < 1e-6 * (1.0 + base.objective));
            // unique optimum needed for coefficient checks
            if (s.coefficients[1] - c * base.coefficients[1]).abs() > 1e-6 * (1.0 + c) {
                let alt = mean_check_loss(
                    &scaled.iter().zip(&x).map(|(v, xv)| v - c * base.coefficients[0] - c * base.coefficients[1] * xv).collect::<Vec<_>>(),
                    tau,
                );
                prop_assert!((alt - s.objective).abs() < 1e-6 * (1.0 + s.objective));
            }
        }

        #[test]
        fn check_loss_is_convex(u in -50.0f64..50.0, v in -50.0f64..50.0, t in 0.01f64..0.99) {
            let tau = q(t);
            let mid = check_loss(0.5 * (u + v), tau);
            prop_assert!(mid <= 0.5 * (check_loss(u, tau) + check_loss(v, tau)) + 1e-12);
            prop_assert!(check_loss(u, tau) >= 0.0);
        }
    }
}
