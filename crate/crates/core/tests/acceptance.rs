//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run a subset with `cargo test -p mkqr --test acceptance -- 1 4 7`.

use std::process::ExitCode;
use std::time::Instant;

use mkqr::brisq::{brisq_fit, fit_fixed_kinks, BrisqSettings};
use mkqr::infer::{wald_interval, wild_bootstrap_pvalue, CiMethod, InferSettings, ScoreGrid};
use mkqr::linqr::{fit_linear_qr, QrSettings, QuantileLevel};
use mkqr::model::Dataset;
use mkqr::rng::derive_seed;
use mkqr::select::{sbic, select_kinks, CnRule};
use mkqr::simgen::{generate, ErrorDist, KinkCase, ScenarioSpec};
use mkqr::study::{ci_study, estimation_study, power_study, selection_study, CiStudyConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn tau(t: f64) -> QuantileLevel {
    QuantileLevel::new(t).unwrap()
}

fn criterion_1() -> Outcome {
    let spec = ScenarioSpec::new(KinkCase::Two, 500);
    let s = selection_study(&spec, tau(0.5), 10, &[CnRule::Log], 200, 1001, &BrisqSettings::default()).unwrap();
    let r = &s[0];
    Outcome {
        pass: r.rate >= 0.95,
        detail: format!("K_hat = 2 rate {:.3} (>= 0.95), counts {:?}, failures {}", r.rate, r.k_hat_counts, r.failures),
    }
}

fn criterion_2() -> Outcome {
    let spec = ScenarioSpec { heteroscedastic: true, ..ScenarioSpec::new(KinkCase::One, 500) };
    let s = selection_study(&spec, tau(0.5), 10, &[CnRule::Log, CnRule::One], 200, 1002, &BrisqSettings::default())
        .unwrap();
    Outcome {
        pass: s[0].rate > s[1].rate,
        detail: format!(
            "rate C_n=log n {:.3} vs C_n=1 {:.3} (strictly greater); counts {:?} vs {:?}",
            s[0].rate, s[1].rate, s[0].k_hat_counts, s[1].k_hat_counts
        ),
    }
}

fn criterion_3() -> Outcome {
    let spec = ScenarioSpec::new(KinkCase::One, 500);
    let e = estimation_study(&spec, tau(0.5), 500, 1003, &BrisqSettings::default(), &InferSettings::default()).unwrap();
    let d = e.parameters.iter().find(|p| p.name == "delta1").unwrap();
    let ratio = d.sd / d.se;
    Outcome {
        pass: d.bias.abs() <= 0.03 && (0.8..=1.25).contains(&ratio) && e.usable == e.reps,
        detail: format!(
            "delta bias {:.4} (|.| <= 0.03), SD {:.4}, SE {:.4}, SD/SE {:.3} (in [0.8, 1.25]), usable {}/{}",
            d.bias, d.sd, d.se, ratio, e.usable, e.reps
        ),
    }
}

/// Profile objective minimized over 500 evenly spaced kink locations.
fn grid_oracle(data: &Dataset, t: QuantileLevel, m: usize) -> f64 {
    let mut xs = data.x().to_vec();
    xs.sort_by(f64::total_cmp);
    let (lo, hi) = (xs[m], xs[xs.len() - 1 - m]);
    (0..500)
        .map(|i| lo + (hi - lo) * i as f64 / 499.0)
        .filter_map(|d| fit_fixed_kinks(data, t, &[d], &QrSettings::default()).ok())
        .map(|(_, sol)| sol.objective)
        .fold(f64::INFINITY, f64::min)
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for i in 0..50u64 {
        let spec = ScenarioSpec::new(KinkCase::One, 200).with_seed(derive_seed(1004, i));
        let (data, _) = generate(&spec).unwrap();
        let settings = BrisqSettings { seed: i, ..BrisqSettings::default() };
        let est = brisq_fit(&data, tau(0.5), 1, &settings).unwrap();
        let oracle = grid_oracle(&data, tau(0.5), 10);
        let rel = est.objective / oracle - 1.0;
        worst = worst.max(rel);
        if est.objective > oracle * (1.0 + 1e-3) {
            failures.push(i);
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!("worst relative excess over oracle {worst:.2e} (<= 1e-3); failing datasets {failures:?}"),
    }
}

fn criterion_5() -> Outcome {
    let spec = ScenarioSpec::new(KinkCase::One, 1000);
    let pts = power_study(&spec, tau(0.5), &[0.0, 10.0], 200, 300, 0.05, 1005, &InferSettings::default()).unwrap();
    let (size, power) = (pts[0].rejection_rate, pts[1].rejection_rate);
    Outcome {
        pass: (0.02..=0.09).contains(&size) && power >= 0.9,
        detail: format!("size at c=0 {size:.3} (in [0.02, 0.09]); power at c=10 {power:.3} (>= 0.9)"),
    }
}

fn criterion_6() -> Outcome {
    let spec = ScenarioSpec { error: ErrorDist::T3, heteroscedastic: true, ..ScenarioSpec::new(KinkCase::Two, 500) };
    let rows = ci_study(
        &spec,
        tau(0.5),
        200,
        1006,
        &CiStudyConfig::default(),
        &BrisqSettings::default(),
        &InferSettings::default(),
    )
    .unwrap();
    let get = |m: CiMethod, k: usize| rows.iter().find(|r| r.method == m && r.kink == k).unwrap();
    let (s1, s2, w2) = (get(CiMethod::Score, 1), get(CiMethod::Score, 2), get(CiMethod::Wald, 2));
    let w1 = get(CiMethod::Wald, 1);
    Outcome {
        pass: (0.89..=0.99).contains(&s1.coverage) && (0.89..=0.99).contains(&s2.coverage) && s2.mean_length > w2.mean_length,
        detail: format!(
            "score coverage ({:.3}, {:.3}) (in [0.89, 0.99]); delta2 length score {:.3} > wald {:.3}; \
             [wald coverage ({:.3}, {:.3}), delta1 lengths score {:.3} wald {:.3}]",
            s1.coverage, s2.coverage, s2.mean_length, w2.mean_length, w1.coverage, w2.coverage, s1.mean_length,
            w1.mean_length
        ),
    }
}

fn criterion_7() -> Outcome {
    let (lo, hi) = wald_interval(3.468, 0.227, 0.95).unwrap();
    let shown = format!("[{lo:.3}, {hi:.3}]");
    Outcome { pass: shown == "[3.023, 3.913]", detail: format!("interval {shown} (expected [3.023, 3.913])") }
}

fn criterion_8() -> Outcome {
    let mut problems = Vec::new();
    let mut fits = 0;
    for i in 0..20u64 {
        let case = [KinkCase::One, KinkCase::Two, KinkCase::Three][i as usize % 3];
        let spec = ScenarioSpec { heteroscedastic: i % 2 == 0, ..ScenarioSpec::new(case, 300) }.with_seed(derive_seed(1008, i));
        let (data, _) = generate(&spec).unwrap();
        let t = tau([0.3, 0.5, 0.7][i as usize % 3]);
        let settings = BrisqSettings { seed: i, ..BrisqSettings::default() };
        let est = brisq_fit(&data, t, spec.true_k().unwrap(), &settings).unwrap();

        // subgradient counts of the fixed-kink fit at the estimate
        let design = data.design(est.deltas()).unwrap();
        let sol = fit_linear_qr(&design, data.y(), t, &QrSettings::default()).unwrap();
        fits += 1;
        let (n, d) = (data.n() as f64, design.cols() as f64);
        let neg = sol.residuals.iter().filter(|r| **r < 0.0).count() as f64;
        let nonpos = sol.residuals.iter().filter(|r| **r <= 0.0).count() as f64;
        if !(sol.converged && neg <= n * t.value() + d && nonpos >= n * t.value() - d) {
            problems.push(format!("subgradient counts on fit {i}"));
        }
        // continuity at every kink
        for &dk in est.deltas() {
            let z = data.z_row(0);
            let eps = 1e-9 * (1.0 + dk.abs());
            let (l, r) = (est.params.predict(dk - eps, z), est.params.predict(dk + eps, z));
            if (l - r).abs() > 1e-6 {
                problems.push(format!("discontinuity at {dk} on fit {i}"));
            }
        }
        // accepted objectives strictly decrease
        let traj = &est.diagnostics.trajectory;
        let mut accepted: Vec<f64> = vec![traj[0]];
        for v in &traj[1..] {
            if v != accepted.last().unwrap() {
                accepted.push(*v);
            }
        }
        if !accepted.windows(2).all(|w| w[1] < w[0]) {
            problems.push(format!("trajectory not monotone on fit {i}"));
        }
        // determinism
        let again = brisq_fit(&data, t, spec.true_k().unwrap(), &settings).unwrap();
        if serde_json::to_string(&est).unwrap() != serde_json::to_string(&again).unwrap() {
            problems.push(format!("non-deterministic fit {i}"));
        }
    }
    // sBIC arithmetic
    let ln = 100f64.ln();
    let checks = [
        (sbic(1.0, 100, 0, 1, CnRule::Log).unwrap(), 4.0 * ln / 200.0 * ln),
        (sbic(1.0, 100, 0, 0, CnRule::Log).unwrap(), 2.0 * ln / 200.0 * ln),
        (sbic(0.5, 500, 1, 2, CnRule::One).unwrap(), 0.5f64.ln() + 7.0 * 500f64.ln() / 1000.0),
    ];
    for (got, want) in checks {
        if (got - want).abs() > 1e-12 {
            problems.push(format!("sBIC {got} vs {want}"));
        }
    }
    // determinism of selection and the test statistic, as JSON
    let spec = ScenarioSpec::new(KinkCase::Two, 300).with_seed(8);
    let (data, _) = generate(&spec).unwrap();
    let sel = || serde_json::to_string(&select_kinks(&data, tau(0.5), 5, CnRule::Log, &BrisqSettings::default()).unwrap()).unwrap();
    if sel() != sel() {
        problems.push("non-deterministic selection".into());
    }
    let grid = ScoreGrid::default_for(data.x()).unwrap();
    let test = || {
        serde_json::to_string(&wild_bootstrap_pvalue(&data, tau(0.5), 100, &grid, 3, &InferSettings::default(), true).unwrap())
            .unwrap()
    };
    if test() != test() {
        problems.push("non-deterministic test".into());
    }
    Outcome {
        pass: problems.is_empty(),
        detail: if problems.is_empty() {
            format!("{fits} fits: subgradient counts, continuity, monotone trajectories, sBIC arithmetic, determinism")
        } else {
            problems.join("; ")
        },
    }
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "selection consistency", criterion_1),
        (2, "C_n ordering", criterion_2),
        (3, "estimation accuracy", criterion_3),
        (4, "oracle equivalence", criterion_4),
        (5, "test size and power", criterion_5),
        (6, "score interval coverage", criterion_6),
        (7, "Wald arithmetic", criterion_7),
        (8, "property suite", criterion_8),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("{verdict} [{id}] {name}: {} ({:.1}s)", out.detail, start.elapsed().as_secs_f64());
        if !out.pass {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
