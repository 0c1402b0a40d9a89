//! Data-generating processes for the Monte Carlo designs:
//!
//! ```text
//!   Y = a0 + a1 X + sum_k b_k (X - d_k)_+ + g Z + s(X) e
//! ```
//!
//! with `X ~ U(-5, 5)`, `Z ~ N(1, 1)`, `a0 = a1 = g = 1`, `e` standard normal
//! or `t(3)` and `s(X) = 1` or `1 + 0.2 X`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{MkqrError, Result};
use crate::linqr::QuantileLevel;
use crate::model::{predict_quantile, Dataset, MkqrParams};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KinkCase {
    /// One kink: `b = -3`, `d = 0.5`.
    #[serde(rename = "1")]
    One,
    /// Two kinks: `b = (-3, 4)`, `d = (-1, 2)`.
    #[serde(rename = "2")]
    Two,
    /// Three kinks: `b = (-3, 4, -4)`, `d = (-3, 0, 3)`.
    #[serde(rename = "3")]
    Three,
    /// Kinks from `betas` and `deltas` in the spec.
    #[serde(rename = "custom")]
    Custom,
}

impl std::str::FromStr for KinkCase {
    type Err = MkqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Self::One),
            "2" => Ok(Self::Two),
            "3" => Ok(Self::Three),
            "custom" => Ok(Self::Custom),
            other => Err(MkqrError::usage(format!("unknown case `{other}` (1, 2, 3, custom)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorDist {
    #[default]
    Normal,
    T3,
}

impl std::str::FromStr for ErrorDist {
    type Err = MkqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Self::Normal),
            "t3" => Ok(Self::T3),
            other => Err(MkqrError::usage(format!("unknown error distribution `{other}` (normal, t3)"))),
        }
    }
}

impl ErrorDist {
    /// `F^{-1}(tau)` of the (unscaled) error.
    pub fn quantile(self, tau: QuantileLevel) -> f64 {
        match self {
            ErrorDist::Normal => Normal::standard().inverse_cdf(tau.value()),
            ErrorDist::T3 => StudentsT::new(0.0, 1.0, 3.0).expect("valid t").inverse_cdf(tau.value()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub case: KinkCase,
    pub n: usize,
    #[serde(default)]
    pub error: ErrorDist,
    #[serde(default)]
    pub heteroscedastic: bool,
    /// Case (1) with `b_1 = c / sqrt(n)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(case: KinkCase, n: usize) -> Self {
        Self { case, n, error: ErrorDist::Normal, heteroscedastic: false, power_c: None, betas: None, deltas: None, seed: 0 }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Kink part `(b, d)` of the generator.
    pub fn kinks(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if let Some(c) = self.power_c {
            if self.case != KinkCase::One {
                return Err(MkqrError::usage("power_c applies to case 1 only"));
            }
            return Ok((vec![c / (self.n as f64).sqrt()], vec![0.5]));
        }
        Ok(match self.case {
            KinkCase::One => (vec![-3.0], vec![0.5]),
            KinkCase::Two => (vec![-3.0, 4.0], vec![-1.0, 2.0]),
            KinkCase::Three => (vec![-3.0, 4.0, -4.0], vec![-3.0, 0.0, 3.0]),
            KinkCase::Custom => match (&self.betas, &self.deltas) {
                (Some(b), Some(d)) => (b.clone(), d.clone()),
                _ => return Err(MkqrError::usage("custom case needs betas and deltas")),
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(MkqrError::usage(format!("scenario n = {} is below 10", self.n)));
        }
        let (b, d) = self.kinks()?;
        if d.iter().any(|v| !(-5.0 < *v && *v < 5.0)) {
            return Err(MkqrError::usage("kink locations must lie inside (-5, 5)"));
        }
        MkqrParams::new(1.0, 1.0, b, vec![1.0], d).map(|_| ())
    }

    /// Generator parameters (the truth at the median).
    pub fn base_params(&self) -> Result<MkqrParams> {
        let (b, d) = self.kinks()?;
        MkqrParams::new(1.0, 1.0, b, vec![1.0], d)
    }

    /// Number of kinks with a nonzero slope change.
    pub fn true_k(&self) -> Result<usize> {
        Ok(self.kinks()?.0.iter().filter(|b| **b != 0.0).count())
    }
}

/// True conditional `tau`-quantile parameters: the error quantile `q` moves
/// `a0` by `q` and, under heteroscedasticity, `a1` by `0.2 q`.
pub fn true_theta_at(spec: &ScenarioSpec, tau: QuantileLevel) -> Result<MkqrParams> {
    let mut params = spec.base_params()?;
    let q = spec.error.quantile(tau);
    params.alpha0 += q;
    if spec.heteroscedastic {
        params.alpha1 += 0.2 * q;
    }
    Ok(params)
}

/// Draws a dataset. Observations are generated in order, each consuming
/// `x`, `z`, `e` from stream 0 of the ChaCha8 generator seeded by `spec.seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<(Dataset, MkqrParams)> {
    spec.validate()?;
    let params = spec.base_params()?;
    let mut rng = stream_rng(spec.seed, 0);
    let t3 = StudentT::new(3.0).expect("valid t");
    let n = spec.n;
    let (mut x, mut z, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let xt: f64 = rng.random_range(-5.0..5.0);
        let zt: f64 = 1.0 + rng.sample::<f64, _>(StandardNormal);
        let e: f64 = match spec.error {
            ErrorDist::Normal => rng.sample(StandardNormal),
            ErrorDist::T3 => t3.sample(&mut rng),
        };
        let scale = if spec.heteroscedastic { 1.0 + 0.2 * xt } else { 1.0 };
        y.push(predict_quantile(&params, xt, &[zt]) + scale * e);
        x.push(xt);
        z.push(zt);
    }
    Ok((Dataset::new(y, x, z, 1)?, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    #[test]
    fn named_cases() {
        let (b, d) = ScenarioSpec::new(KinkCase::Two, 100).kinks().unwrap();
        assert_eq!((b, d), (vec![-3.0, 4.0], vec![-1.0, 2.0]));
        let p = ScenarioSpec::new(KinkCase::Three, 100).base_params().unwrap();
        assert_eq!(p.betas, vec![-3.0, 4.0, -4.0]);
        assert_eq!(p.deltas, vec![-3.0, 0.0, 3.0]);
        assert_eq!((p.alpha0, p.alpha1, p.gamma[0]), (1.0, 1.0, 1.0));
        let power = ScenarioSpec { power_c: Some(10.0), ..ScenarioSpec::new(KinkCase::One, 1000) };
        assert!((power.kinks().unwrap().0[0] - 10.0 / 1000f64.sqrt()).abs() < 1e-15);
        let null = ScenarioSpec { power_c: Some(0.0), ..ScenarioSpec::new(KinkCase::One, 1000) };
        assert_eq!(null.true_k().unwrap(), 0);
    }

    #[test]
    fn deterministic_and_in_support() {
        let spec = ScenarioSpec { error: ErrorDist::T3, heteroscedastic: true, ..ScenarioSpec::new(KinkCase::One, 500) }
            .with_seed(42);
        let (a, _) = generate(&spec).unwrap();
        let (b, _) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.x().iter().all(|x| (-5.0..=5.0).contains(x)));
        let (c, _) = generate(&spec.with_seed(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn median_truth_is_generator() {
        for error in [ErrorDist::Normal, ErrorDist::T3] {
            let spec = ScenarioSpec { error, heteroscedastic: true, ..ScenarioSpec::new(KinkCase::Two, 100) };
            let truth = true_theta_at(&spec, q(0.5)).unwrap();
            assert_eq!(truth, spec.base_params().unwrap());
        }
    }

    #[test]
    fn heteroscedastic_shift_at_07() {
        let spec = ScenarioSpec { heteroscedastic: true, ..ScenarioSpec::new(KinkCase::One, 100) };
        let truth = true_theta_at(&spec, q(0.7)).unwrap();
        let z = 0.5244005127080407; // qnorm(0.7)
        assert!((truth.alpha0 - (1.0 + z)).abs() < 1e-9);
        assert!((truth.alpha1 - (1.0 + 0.2 * z)).abs() < 1e-9);
        assert_eq!(truth.deltas, vec![0.5]);
    }

    #[test]
    fn empirical_quantiles_match_truth() {
        // conditional quantile at fixed (x, z): s(x) e quantiles by simulation
        let t = q(0.7);
        for (error, hetero) in [(ErrorDist::Normal, true), (ErrorDist::T3, false), (ErrorDist::T3, true)] {
            let spec = ScenarioSpec { error, heteroscedastic: hetero, ..ScenarioSpec::new(KinkCase::One, 100) };
            let truth = true_theta_at(&spec, t).unwrap();
            let base = spec.base_params().unwrap();
            let mut rng = stream_rng(5, 1);
            let t3 = StudentT::new(3.0).unwrap();
            for x in [-4.0, 0.5, 3.0] {
                let s = if hetero { 1.0 + 0.2 * x } else { 1.0 };
                let mut ys: Vec<f64> = (0..100_000)
                    .map(|_| {
                        let e: f64 = match error {
                            ErrorDist::Normal => rng.sample(StandardNormal),
                            ErrorDist::T3 => t3.sample(&mut rng),
                        };
                        predict_quantile(&base, x, &[1.0]) + s * e
                    })
                    .collect();
                ys.sort_by(f64::total_cmp);
                let emp = ys[70_000];
                assert!((emp - predict_quantile(&truth, x, &[1.0])).abs() < 0.03, "{error:?} {hetero} x={x}");
            }
        }
    }

    #[test]
    fn t3_has_heavier_tails() {
        let kurtosis = |error| {
            let spec = ScenarioSpec { error, ..ScenarioSpec::new(KinkCase::Custom, 100_000) };
            let spec = ScenarioSpec { betas: Some(vec![]), deltas: Some(vec![]), ..spec }.with_seed(9);
            let (data, params) = generate(&spec).unwrap();
            let e: Vec<f64> = (0..data.n())
                .map(|t| data.y()[t] - predict_quantile(&params, data.x()[t], data.z_row(t)))
                .collect();
            let m = e.iter().sum::<f64>() / e.len() as f64;
            let m2 = e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / e.len() as f64;
            let m4 = e.iter().map(|v| (v - m).powi(4)).sum::<f64>() / e.len() as f64;
            m4 / (m2 * m2)
        };
        assert!(kurtosis(ErrorDist::T3) > kurtosis(ErrorDist::Normal));
    }

    #[test]
    fn scenario_round_trips_through_serde() {
        let spec = ScenarioSpec { power_c: Some(4.0), ..ScenarioSpec::new(KinkCase::One, 1000) }.with_seed(3);
        let json = serde_json::to_string(&spec).unwrap();
        let back: ScenarioSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
