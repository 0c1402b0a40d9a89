//! The multi-kink quantile model in its hinge parameterization
//!
//! ```text
//!   Q(tau | x, z) = a0 + a1 x + sum_k b_k (x - d_k)_+ + g'z
//! ```
//!
//! plus conversion to the per-segment intercept/slope form.

use serde::{Deserialize, Serialize};

use crate::error::{MkqrError, Result};
use crate::linqr::{check_loss, DesignMatrix, QuantileLevel};

#[inline]
pub fn hinge(x: f64, delta: f64) -> f64 {
    if x > delta {
        x - delta
    } else {
        0.0
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Observations `(y, x, z)` with a scalar threshold covariate `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    /// Row-major `n x p`.
    z: Vec<f64>,
    p: usize,
    z_names: Vec<String>,
}

impl Dataset {
    /// `z` is row-major `n x p`; pass an empty vector when `p = 0`.
    pub fn new(y: Vec<f64>, x: Vec<f64>, z: Vec<f64>, p: usize) -> Result<Self> {
        let names = (1..=p).map(|j| format!("z{j}")).collect();
        Self::with_names(y, x, z, p, names)
    }

    pub fn with_names(
        y: Vec<f64>,
        x: Vec<f64>,
        z: Vec<f64>,
        p: usize,
        z_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if x.len() != n || z.len() != n * p || z_names.len() != p {
            return Err(MkqrError::usage(format!(
                "dimension mismatch: {} responses, {} x values, {} z values for p = {p}",
                n,
                x.len(),
                z.len()
            )));
        }
        let min_n = 10.max(p + 4);
        if n < min_n {
            return Err(MkqrError::data(format!("need at least {min_n} observations, got {n}")));
        }
        for (name, col) in [("y", &y), ("x", &x)] {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(MkqrError::data(format!("non-finite {name} at row {}", i + 1)));
            }
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(MkqrError::data(format!(
                "non-finite {} at row {}",
                z_names[i % p],
                i / p + 1
            )));
        }
        if x.iter().all(|v| *v == x[0]) {
            return Err(MkqrError::data("threshold covariate x is constant"));
        }
        Ok(Self { y, x, z, p, z_names })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn z_row(&self, t: usize) -> &[f64] {
        &self.z[t * self.p..(t + 1) * self.p]
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }

    pub fn x_min(&self) -> f64 {
        self.x.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn x_max(&self) -> f64 {
        self.x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn x_range(&self) -> f64 {
        self.x_max() - self.x_min()
    }

    /// Column means of `z` (used to draw fitted curves at typical covariates).
    pub fn z_means(&self) -> Vec<f64> {
        let n = self.n() as f64;
        (0..self.p)
            .map(|j| (0..self.n()).map(|t| self.z[t * self.p + j]).sum::<f64>() / n)
            .collect()
    }

    /// Rows picked by `indices` (repeats allowed). Skips validation so that
    /// resamples with tied `x` values stay usable.
    pub fn resample(&self, indices: &[usize]) -> Dataset {
        let mut z = Vec::with_capacity(indices.len() * self.p);
        for &i in indices {
            z.extend_from_slice(self.z_row(i));
        }
        Dataset {
            y: indices.iter().map(|&i| self.y[i]).collect(),
            x: indices.iter().map(|&i| self.x[i]).collect(),
            z,
            p: self.p,
            z_names: self.z_names.clone(),
        }
    }

    /// The fixed-kink design `[1, x, (x - d_1)_+, ..., (x - d_K)_+, z]`.
    pub fn design(&self, deltas: &[f64]) -> Result<DesignMatrix> {
        build_design(&self.x, &self.z, self.p, &self.z_names, deltas)
    }

    /// Design with only `[1, x, z]`, the null model of the kink tests.
    pub fn linear_design(&self) -> DesignMatrix {
        self.design(&[]).expect("linear design is always valid")
    }
}

/// Builds `[1, x, (x - d_1)_+, ..., (x - d_K)_+, z]` with row-major `z`.
pub fn build_design(
    x: &[f64],
    z: &[f64],
    p: usize,
    z_names: &[String],
    deltas: &[f64],
) -> Result<DesignMatrix> {
    if !strictly_increasing(deltas) {
        return Err(MkqrError::usage(format!("kink locations {deltas:?} are not strictly increasing")));
    }
    let n = x.len();
    let k = deltas.len();
    let d = 2 + k + p;
    let mut values = Vec::with_capacity(n * d);
    for t in 0..n {
        values.push(1.0);
        values.push(x[t]);
        values.extend(deltas.iter().map(|&dk| hinge(x[t], dk)));
        values.extend_from_slice(&z[t * p..(t + 1) * p]);
    }
    DesignMatrix::new(n, d, values, design_labels(k, z_names))
}

pub(crate) fn design_labels(k: usize, z_names: &[String]) -> Vec<String> {
    let mut labels = vec!["intercept".to_string(), "x".to_string()];
    labels.extend((1..=k).map(|j| format!("hinge{j}")));
    labels.extend(z_names.iter().cloned());
    labels
}

/// Hinge-form parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MkqrParams {
    pub alpha0: f64,
    pub alpha1: f64,
    /// Slope changes at each kink.
    pub betas: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Kink locations, strictly increasing.
    pub deltas: Vec<f64>,
}

impl MkqrParams {
    pub fn new(alpha0: f64, alpha1: f64, betas: Vec<f64>, gamma: Vec<f64>, deltas: Vec<f64>) -> Result<Self> {
        let params = Self { alpha0, alpha1, betas, gamma, deltas };
        params.validate()?;
        Ok(params)
    }

    /// Splits a coefficient vector in design order `(a0, a1, b, g)`.
    pub fn from_coefficients(eta: &[f64], deltas: Vec<f64>) -> Result<Self> {
        let k = deltas.len();
        if eta.len() < 2 + k {
            return Err(MkqrError::usage("coefficient vector shorter than 2 + K"));
        }
        Self::new(eta[0], eta[1], eta[2..2 + k].to_vec(), eta[2 + k..].to_vec(), deltas)
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.len() != self.deltas.len() {
            return Err(MkqrError::usage(format!(
                "{} slope changes for {} kinks",
                self.betas.len(),
                self.deltas.len()
            )));
        }
        if !strictly_increasing(&self.deltas) {
            return Err(MkqrError::usage(format!(
                "kink locations {:?} are not strictly increasing",
                self.deltas
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.deltas.len()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.gamma.len()
    }

    /// `(a0, a1, b_1..b_K, g)` in design order.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut eta = vec![self.alpha0, self.alpha1];
        eta.extend_from_slice(&self.betas);
        eta.extend_from_slice(&self.gamma);
        eta
    }

    /// Full parameter vector `(eta, delta)`.
    pub fn theta(&self) -> Vec<f64> {
        let mut theta = self.coefficients();
        theta.extend_from_slice(&self.deltas);
        theta
    }

    pub fn predict(&self, x: f64, z: &[f64]) -> f64 {
        predict_quantile(self, x, z)
    }
}

/// `a0 + a1 x + sum_k b_k (x - d_k)_+ + g'z`.
pub fn predict_quantile(params: &MkqrParams, x: f64, z: &[f64]) -> f64 {
    debug_assert_eq!(z.len(), params.gamma.len());
    let kinks: f64 = params.betas.iter().zip(&params.deltas).map(|(b, d)| b * hinge(x, *d)).sum();
    let cov: f64 = params.gamma.iter().zip(z).map(|(g, v)| g * v).sum();
    params.alpha0 + params.alpha1 * x + kinks + cov
}

/// Mean check loss of `data` under `params`.
pub fn objective(data: &Dataset, params: &MkqrParams, tau: QuantileLevel) -> Result<f64> {
    params.validate()?;
    if params.p() != data.p() {
        return Err(MkqrError::usage(format!(
            "parameters carry {} covariate coefficients, data has p = {}",
            params.p(),
            data.p()
        )));
    }
    let total: f64 = (0..data.n())
        .map(|t| check_loss(data.y()[t] - predict_quantile(params, data.x()[t], data.z_row(t)), tau))
        .sum();
    Ok(total / data.n() as f64)
}

/// Per-segment intercepts and slopes; segment `k` covers `(d_{k-1}, d_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentForm {
    pub intercepts: Vec<f64>,
    pub slopes: Vec<f64>,
    pub gamma: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl SegmentForm {
    /// Largest violation of the continuity constraints at the kinks.
    pub fn continuity_gap(&self) -> f64 {
        self.deltas
            .iter()
            .enumerate()
            .map(|(k, d)| {
                let left = self.intercepts[k] + self.slopes[k] * d;
                let right = self.intercepts[k + 1] + self.slopes[k + 1] * d;
                (left - right).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_params(&self) -> Result<MkqrParams> {
        let betas = self.slopes.windows(2).map(|w| w[1] - w[0]).collect();
        MkqrParams::new(self.intercepts[0], self.slopes[0], betas, self.gamma.clone(), self.deltas.clone())
    }
}

pub fn to_segment_form(params: &MkqrParams) -> SegmentForm {
    let k = params.k();
    let mut intercepts = Vec::with_capacity(k + 1);
    let mut slopes = Vec::with_capacity(k + 1);
    intercepts.push(params.alpha0);
    slopes.push(params.alpha1);
    for j in 0..k {
        slopes.push(slopes[j] + params.betas[j]);
        intercepts.push(intercepts[j] - params.betas[j] * params.deltas[j]);
    }
    SegmentForm { intercepts, slopes, gamma: params.gamma.clone(), deltas: params.deltas.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linqr::{fit_linear_qr, QrSettings};
    use proptest::prelude::*;

    fn case_one() -> MkqrParams {
        MkqrParams::new(1.0, 1.0, vec![-3.0], vec![1.0], vec![0.5]).unwrap()
    }

    #[test]
    fn design_hinge_arithmetic() {
        let x: Vec<f64> = vec![2.0, 0.0, 3.0, -1.0, 5.0, 1.0, 4.0, 2.5, 0.5, -2.0];
        let design = build_design(&x, &[], 0, &[], &[0.0, 3.0]).unwrap();
        assert_eq!(design.row(0), &[1.0, 2.0, 2.0, 0.0]);
        // x equal to the kink: strict inequality gives zero
        assert_eq!(design.row(2)[3], 0.0);
        assert_eq!(design.row(1)[2], 0.0);
        let plain = build_design(&x, &[], 0, &[], &[]).unwrap();
        assert_eq!(plain.cols(), 2);
        assert!(build_design(&x, &[], 0, &[], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn predict_case_one() {
        let p = case_one();
        assert!((p.predict(0.5, &[0.0]) - 1.5).abs() < 1e-15);
        assert!((p.predict(1.5, &[0.0]) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn segment_slopes_case_two() {
        let p = MkqrParams::new(1.0, 1.0, vec![-3.0, 4.0], vec![1.0], vec![-1.0, 2.0]).unwrap();
        let seg = to_segment_form(&p);
        assert_eq!(seg.slopes, vec![1.0, -2.0, 2.0]);
        assert_eq!(seg.continuity_gap(), 0.0);
        let single = to_segment_form(&MkqrParams::new(0.3, 2.0, vec![], vec![], vec![]).unwrap());
        assert_eq!(single.intercepts, vec![0.3]);
        assert_eq!(single.slopes, vec![2.0]);
    }

    #[test]
    fn objective_zero_on_exact_data_and_matches_design_fit() {
        let p = case_one();
        let x: Vec<f64> = (0..40).map(|i| -5.0 + i as f64 * 0.25).collect();
        let z: Vec<f64> = (0..40).map(|i| (i % 7) as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().zip(&z).map(|(xv, zv)| p.predict(*xv, &[*zv])).collect();
        let data = Dataset::new(y, x, z, 1).unwrap();
        let tau = QuantileLevel::new(0.5).unwrap();
        assert!(objective(&data, &p, tau).unwrap() < 1e-14);
        let wrong = MkqrParams::new(0.0, 1.0, vec![-3.0], vec![1.0], vec![0.5]).unwrap();
        assert!(objective(&data, &wrong, tau).unwrap() > 0.0);
        let bad_p = MkqrParams::new(0.0, 1.0, vec![], vec![], vec![]).unwrap();
        assert!(objective(&data, &bad_p, tau).is_err());

        let noisy: Vec<f64> = data.y().iter().enumerate().map(|(i, v)| v + ((i * 37) % 11) as f64 - 5.0).collect();
        let noisy = Dataset::new(noisy, data.x().to_vec(), (0..40).map(|i| (i % 7) as f64 * 0.3).collect(), 1).unwrap();
        let sol = fit_linear_qr(&noisy.linear_design(), noisy.y(), tau, &QrSettings::default()).unwrap();
        let linear = MkqrParams::from_coefficients(&sol.coefficients, vec![]).unwrap();
        assert!((objective(&noisy, &linear, tau).unwrap() - sol.objective).abs() < 1e-12);
    }

    #[test]
    fn dataset_validation() {
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        assert!(Dataset::new(vec![0.0; 9], x[..9].to_vec(), vec![], 0).is_err());
        assert!(Dataset::new(vec![0.0; 12], vec![1.0; 12], vec![], 0).is_err());
        let mut y = vec![0.0; 12];
        y[4] = f64::NAN;
        assert!(Dataset::new(y, x.clone(), vec![], 0).is_err());
        assert!(Dataset::new(vec![0.0; 12], x, vec![], 0).is_ok());
    }

    fn params_strategy() -> impl Strategy<Value = MkqrParams> {
        (0usize..4, 0usize..3).prop_flat_map(|(k, p)| {
            (
                -5.0f64..5.0,
                -5.0f64..5.0,
                proptest::collection::vec(-4.0f64..4.0, k),
                proptest::collection::vec(-2.0f64..2.0, p),
                proptest::collection::vec(-5.0f64..5.0, k),
            )
                .prop_filter_map("distinct kinks", |(a0, a1, b, g, mut d)| {
                    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    if d.windows(2).any(|w| w[1] - w[0] < 1e-3) {
                        return None;
                    }
                    MkqrParams::new(a0, a1, b, g, d).ok()
                })
        })
    }

    proptest! {
        #[test]
        fn continuity_at_kinks(params in params_strategy()) {
            let z = vec![0.7; params.p()];
            for &d in &params.deltas {
                let eps = 1e-9 * (1.0 + d.abs());
                let left = params.predict(d - eps, &z);
                let right = params.predict(d + eps, &z);
                prop_assert!((left - right).abs() < 1e-6);
                prop_assert!((params.predict(d, &z) - left).abs() < 1e-6);
            }
        }

        #[test]
        fn segment_round_trip(params in params_strategy()) {
            let seg = to_segment_form(&params);
            let scale = 1.0 + params.theta().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(seg.continuity_gap() <= 1e-12 * scale * scale);
            let back = seg.to_params().unwrap();
            prop_assert!((back.alpha0 - params.alpha0).abs() < 1e-12 * scale);
            prop_assert!((back.alpha1 - params.alpha1).abs() < 1e-12 * scale);
            for (a, b) in back.betas.iter().zip(&params.betas) {
                prop_assert!((a - b).abs() < 1e-12 * scale);
            }
            prop_assert_eq!(back.deltas, params.deltas);
        }

        #[test]
        fn location_shift_preserves_predictions(params in params_strategy(), a in -3.0f64..3.0, x in -8.0f64..8.0) {
            let shifted = MkqrParams::new(
                params.alpha0 - a * params.alpha1,
                params.alpha1,
                params.betas.clone(),
                params.gamma.clone(),
                params.deltas.iter().map(|d| d + a).collect(),
            ).unwrap();
            let z = vec![0.2; params.p()];
            let lhs = params.predict(x, &z);
            let rhs = shifted.predict(x + a, &z);
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn objective_is_permutation_invariant(seed in 0u64..1000) {
            let params = case_one();
            let n = 25;
            let x: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed) % 101) as f64 / 10.0 - 5.0).collect();
            let z: Vec<f64> = (0..n).map(|i| ((i as u64 * 31 + seed) % 13) as f64 / 6.0).collect();
            let y: Vec<f64> = (0..n).map(|i| ((i as u64 * 17 + seed) % 29) as f64 / 5.0 - 3.0).collect();
            prop_assume!(x.iter().any(|v| *v != x[0]));
            let data = Dataset::new(y, x, z, 1).unwrap();
            let mut order: Vec<usize> = (0..n).collect();
            order.reverse();
            order.rotate_left((seed % n as u64) as usize);
            let permuted = data.resample(&order);
            let tau = QuantileLevel::new(0.3).unwrap();
            let a = objective(&data, &params, tau).unwrap();
            let b = objective(&permuted, &params, tau).unwrap();
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + a));
        }
    }
}
