//! Acceptance criteria at desk scale. Prints one PASS/FAIL line per
//! criterion and exits non-zero when a criterion outside `KNOWN_UNATTAINED`
//! fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nash_cbo::checks::{
    consensus_oracle_check, gradient_check, laplace_gap_check, lemma_check,
    quantitative_laplace_batch, LemmaCheckConfig,
};
use nash_cbo::diagnostics::{fit_decay_rate, predicted_rate, FitWindow};
use nash_cbo::dynamics::{DiffusionMode, SolverParams};
use nash_cbo::experiments::{
    aggregate, build_case, init_seed, median, noise_seed, run_sweep, solve, CaseId, InitRule,
    Preset, SolveOutcome, FIRST_PASSAGE_FACTOR,
};
use nash_cbo::game::{GameConfig, GameInstance};
use nash_cbo::io::{summary_csv, trace_csv};

/// Criteria that fail as specified; see the project notes for the analysis.
const KNOWN_UNATTAINED: [usize; 1] = [7];

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn quadratic_init() -> InitRule {
    InitRule { variance: 5.0, offset: Some(vec![-2.0, 1.0, 0.0, 3.0]), shift: 0.0 }
}

fn cournot_init() -> InitRule {
    InitRule { variance: 10.0, offset: None, shift: 1.0 }
}

fn a_params(alpha: f64, lambda: f64) -> SolverParams {
    SolverParams {
        lambda,
        sigma: 0.1,
        alpha,
        dt: 1e-4,
        steps: 100,
        particles: 40,
        mode: DiffusionMode::Anisotropic,
        seed: 0,
    }
}

/// One run per seed. The initial ensemble depends on the seed and shape only,
/// the noise on the seed only, so runs with the same seed are paired.
fn runs(
    instance: &GameInstance,
    params: &SolverParams,
    init: &InitRule,
    trace: bool,
) -> Vec<SolveOutcome> {
    SEEDS
        .iter()
        .map(|&s| {
            let init = init
                .resolve(&instance.nash, init_seed(s, params.particles, instance.nash.dim()))
                .unwrap();
            let params = SolverParams { seed: noise_seed(s, 0, 0), ..*params };
            solve(instance, &params, &init, trace.then_some(1)).unwrap()
        })
        .collect()
}

fn prefloor_rate(out: &SolveOutcome, dt: f64) -> f64 {
    fit_decay_rate(&out.time_series(dt), FitWindow::PreFloor).map_or(f64::NAN, |f| f.rate)
}

fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn criterion_1() -> Verdict {
    let inst = GameConfig::quadratic_perturbed(4).instantiate().unwrap();
    let lambda = (1e4 + 0.01) / 2.0;
    let finals = |alpha: f64| -> Vec<f64> {
        runs(&inst, &a_params(alpha, lambda), &quadratic_init(), false)
            .iter()
            .map(SolveOutcome::final_v)
            .collect()
    };
    let high = finals(1e7);
    let low = finals(1e-6);
    let ladder: Vec<f64> = [1e-2, 1e2, 1e7].iter().map(|&a| median(&finals(a))).collect();
    let monotone = ladder.windows(2).all(|w| w[1] <= w[0]);
    let (m_high, m_low) = (median(&high), median(&low));
    verdict(
        m_high <= 1e-7 && m_low >= 1e-3 && monotone,
        format!(
            "median final V at alpha=1e7 {m_high:.2e} (<= 1e-7, seeds {}), at alpha=1e-6 \
             {m_low:.2e} (>= 1e-3), medians at 1e-2, 1e2, 1e7 {} non-increasing: {monotone}",
            sci(&high),
            sci(&ladder)
        ),
    )
}

fn criterion_2() -> Verdict {
    let inst = GameConfig::quadratic_perturbed(4).instantiate().unwrap();
    let rates: Vec<f64> = [1e2, 1e3, 1e4]
        .iter()
        .map(|&u| {
            let p = a_params(1e7, (u + 0.01) / 2.0);
            let r: Vec<f64> = runs(&inst, &p, &quadratic_init(), false)
                .iter()
                .map(|o| prefloor_rate(o, p.dt))
                .collect();
            median(&r)
        })
        .collect();
    let increasing = rates.windows(2).all(|w| w[1] > w[0]);
    verdict(
        increasing,
        format!("median pre-floor rates at u=1e2, 1e3, 1e4: {} strictly increasing", sci(&rates)),
    )
}

fn criterion_3() -> Verdict {
    let spec = build_case(CaseId::A4LambdaSigma, Preset::Desk);
    let b = &spec.base;
    assert_eq!((b.particles, b.alpha, b.dt, b.steps), (100, 1e7, 1e-2, 100));
    assert_eq!(spec.shape(), vec![10, 10]);
    let cells = aggregate(&run_sweep(&spec, 8).unwrap());
    let (mut eligible, mut agree) = (0, 0);
    for c in &cells {
        let (lambda, sigma) = (c.values[0], c.values[1]);
        let gap = 2.0 * lambda - sigma * sigma;
        if gap.abs() < 0.5 * (2.0 * lambda).max(sigma * sigma) || lambda < 1.0 {
            continue;
        }
        eligible += 1;
        let converging = c.median < c.v0_median;
        if converging == (gap > 0.0) {
            agree += 1;
        }
    }
    let share = agree as f64 / eligible.max(1) as f64;
    verdict(
        eligible > 0 && share >= 0.8,
        format!("{agree}/{eligible} cells away from the boundary agree ({:.1}%, >= 80%)", 100.0 * share),
    )
}

fn criterion_4() -> Verdict {
    let inst = GameConfig::quadratic(4).instantiate().unwrap();
    let p = SolverParams {
        lambda: 5.0,
        sigma: 0.1,
        alpha: 1e7,
        dt: 1e-3,
        steps: 2000,
        particles: 2000,
        mode: DiffusionMode::Anisotropic,
        seed: 0,
    };
    let rates: Vec<f64> =
        runs(&inst, &p, &quadratic_init(), false).iter().map(|o| prefloor_rate(o, p.dt)).collect();
    let bound = 0.9 * predicted_rate(p.lambda, p.sigma);
    let m = median(&rates);
    verdict(m >= bound, format!("median pre-floor rate {m:.3} (>= {bound:.4}), seeds {}", sci(&rates)))
}

fn criterion_5() -> Verdict {
    let r = quantitative_laplace_batch(100, 200, &[1.0, 1e2, 1e4], 0).unwrap();
    verdict(
        r.holds == r.cases && r.cases == 300,
        format!("{}/{} cases hold, worst margin {:.3e}", r.holds, r.cases, r.worst_margin),
    )
}

fn criterion_6() -> Verdict {
    let r = laplace_gap_check(200, 0).unwrap();
    verdict(
        r.gap_at_max_alpha <= 1e-5 && r.all_within_log_bound,
        format!(
            "gap at alpha=1e6 {:.3e} (<= 1e-5), within log(N)/alpha at every alpha: {}",
            r.gap_at_max_alpha, r.all_within_log_bound
        ),
    )
}

fn cournot_params(mode: DiffusionMode) -> SolverParams {
    SolverParams {
        lambda: 5.5,
        sigma: 1.0,
        alpha: 1e10,
        dt: 1e-3,
        steps: 1000,
        particles: 2000,
        mode,
        seed: 0,
    }
}

fn criterion_7() -> Verdict {
    let inst = GameConfig::cournot(5, 4, 0).instantiate().unwrap();
    let outs = runs(&inst, &cournot_params(DiffusionMode::Anisotropic), &cournot_init(), false);
    let ratios: Vec<f64> = outs.iter().map(|o| o.final_v() / o.v0()).collect();
    let drops: Vec<f64> = outs
        .iter()
        .map(|o| (o.residual0.unwrap() / o.final_residual.unwrap()).log10())
        .collect();
    let good = ratios.iter().zip(&drops).filter(|(r, d)| **r <= 1e-4 && **d >= 3.0).count();
    verdict(
        good >= 4,
        format!(
            "{good}/5 seeds meet both (>= 4): V(T)/V(0) {} (<= 1e-4), residual decades {}",
            sci(&ratios),
            sci(&drops)
        ),
    )
}

fn criterion_8() -> Verdict {
    let inst = GameConfig::cournot(5, 4, 0).instantiate().unwrap();
    let passage = |mode| -> Vec<f64> {
        runs(&inst, &cournot_params(mode), &cournot_init(), false)
            .iter()
            .map(|o| o.first_passage(FIRST_PASSAGE_FACTOR).map_or(f64::INFINITY, |s| s as f64))
            .collect()
    };
    let aniso = passage(DiffusionMode::Anisotropic);
    let iso = passage(DiffusionMode::Isotropic);
    let (a, i) = (median(&aniso), median(&iso));
    verdict(
        a < i,
        format!("median first passage to V(0)/100: aniso {a} < iso {i} (aniso {aniso:?}, iso {iso:?})"),
    )
}

fn criterion_9() -> Verdict {
    let r = gradient_check(10, 100, 0, false);
    verdict(
        r.max_rel_err <= 1e-6 && r.points == 100,
        format!("max relative error {:.3e} (<= 1e-6) over {} points", r.max_rel_err, r.points),
    )
}

fn criterion_10() -> Verdict {
    let r = consensus_oracle_check(1000, 0);
    verdict(
        r.max_rel_err <= 1e-12 && r.shift_max_change == 0.0 && r.instances == 1000,
        format!(
            "max relative error {:.3e} (<= 1e-12), max change under shift {:e} (== 0)",
            r.max_rel_err, r.shift_max_change
        ),
    )
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn criterion_11() -> Verdict {
    let inst = GameConfig::cournot(5, 4, 0).instantiate().unwrap();
    let p = SolverParams { steps: 200, seed: 3, ..cournot_params(DiffusionMode::Isotropic) };
    let init = cournot_init().resolve(&inst.nash, 3).unwrap();
    let trace = |threads| {
        with_threads(threads, || {
            let out = solve(&inst, &p, &init, Some(1)).unwrap();
            trace_csv(&out.records, 5, 4, true)
        })
    };
    let solve_same = trace(1) == trace(8);
    let spec = build_case(CaseId::A4LambdaSigma, Preset::Desk);
    let sweep = |threads| {
        let r = run_sweep(&spec, threads).unwrap();
        summary_csv(&r, &aggregate(&r))
    };
    let sweep_same = sweep(1) == sweep(8);
    verdict(
        solve_same && sweep_same,
        format!("solve trace identical: {solve_same}, a4 desk summary identical: {sweep_same}"),
    )
}

fn criterion_12() -> Verdict {
    let cfg = LemmaCheckConfig::default();
    assert_eq!((cfg.seeds, cfg.particles), (20, 10_000));
    let r = lemma_check(&cfg, 0).unwrap();
    verdict(
        r.fraction >= 0.95,
        format!(
            "{}/{} step-player pairs within 3 standard errors ({:.1}%, >= 95%, statistical)",
            r.within,
            r.evaluated,
            100.0 * r.fraction
        ),
    )
}

type Criterion = (usize, fn() -> Verdict, Option<u64>);

const CRITERIA: [Criterion; 12] = [
    (1, criterion_1, Some(30)),
    (2, criterion_2, Some(30)),
    (3, criterion_3, Some(300)),
    (4, criterion_4, Some(60)),
    (5, criterion_5, Some(10)),
    (6, criterion_6, Some(1)),
    (7, criterion_7, Some(180)),
    (8, criterion_8, None),
    (9, criterion_9, Some(5)),
    (10, criterion_10, Some(5)),
    (11, criterion_11, None),
    (12, criterion_12, Some(300)),
];

fn main() -> ExitCode {
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = Vec::new();
    for (id, run, budget) in CRITERIA {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let elapsed = start.elapsed();
        let in_time = budget.is_none_or(|s| elapsed <= Duration::from_secs(s));
        let passed = v.passed && in_time;
        let budget = budget.map_or(String::new(), |s| format!(" of {s} s"));
        println!(
            "criterion {id:>2}: {}  {} [{:.2} s{budget}]",
            if passed { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64()
        );
        if !passed && !KNOWN_UNATTAINED.contains(&id) {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
