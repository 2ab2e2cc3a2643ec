//! Acceptance gate. Every criterion runs at its stated tolerance and prints
//! one `PASS`/`FAIL` line; the process exits nonzero if any criterion fails.
//!
//! The Monte-Carlo calibration (criterion 9) is projected from a pilot run
//! and only executed in full with `KEMENY_ACCEPTANCE_FULL=1`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use kemeny_core::birth_death::{
    analyze_bd, design_from_f, kemeny_bd, necessary_condition, theta_series, truncate, Extend,
};
use kemeny_core::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CORPUS_SIZE: usize = 200;
const CORPUS_SEED: u64 = 0x6b656d656e79;

type Check = fn() -> Result<String, String>;

fn main() {
    let checks: [(u8, &str, Check); 10] = [
        (1, "constancy", constancy),
        (2, "route equivalence", route_equivalence),
        (3, "Hunter bound", hunter_bound),
        (4, "deviation identities", deviation_identities),
        (5, "deviation series oracle", deviation_series),
        (6, "sped-up M/M/1", sped_up),
        (7, "designed family", designed_family),
        (8, "divergence battery", divergence_battery),
        (9, "Monte-Carlo calibration", calibration),
        (10, "reproducibility", reproducibility),
    ];
    let mut failures = 0;
    for (id, name, check) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  [{id:>2}] {name}: {detail} ({secs:.1} s)"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  [{id:>2}] {name}: {detail} ({secs:.1} s)");
            }
        }
    }
    println!("\nacceptance: {} passed, {failures} failed", checks.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Random corpus
// ---------------------------------------------------------------------------

/// Irreducible chain on `m` states: sparse random weights plus a cycle.
/// Discrete chains get self-loops, which makes them aperiodic.
fn random_chain(kind: ChainKind, m: usize, rng: &mut ChaCha8Rng) -> MarkovChain {
    let density = rng.random_range(0.05..0.6);
    let mut a = DMatrix::from_fn(m, m, |_, _| {
        if rng.random_bool(density) {
            rng.random::<f64>()
        } else {
            0.0
        }
    });
    for i in 0..m {
        a[(i, (i + 1) % m)] += rng.random_range(0.05..1.0);
    }
    for i in 0..m {
        match kind {
            ChainKind::Discrete => {
                a[(i, i)] += 0.1;
                let s = a.row(i).sum();
                a.row_mut(i).scale_mut(1.0 / s);
            }
            ChainKind::Continuous => {
                a[(i, i)] = 0.0;
                let scale = rng.random_range(0.1..10.0);
                a.row_mut(i).scale_mut(scale);
                a[(i, i)] = -a.row(i).sum();
            }
        }
    }
    MarkovChain::new(kind, a).expect("corpus chain is valid")
}

fn corpus(kind: ChainKind) -> Vec<MarkovChain> {
    let seed = CORPUS_SEED + kind as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..CORPUS_SIZE)
        .map(|_| {
            let m = rng.random_range(2..=100);
            random_chain(kind, m, &mut rng)
        })
        .collect()
}

fn analyze_corpus(kind: ChainKind) -> Result<Vec<(MarkovChain, AnalysisReport)>, String> {
    corpus(kind)
        .into_iter()
        .enumerate()
        .map(|(n, chain)| {
            let report = kemeny_exact(&chain, 1e-9).map_err(|e| format!("chain {n}: {e}"))?;
            Ok((chain, report))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Finite chains
// ---------------------------------------------------------------------------

fn constancy() -> Result<String, String> {
    let start = Instant::now();
    let reports = analyze_corpus(ChainKind::Discrete)?;
    let secs = start.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    for (n, (_, r)) in reports.iter().enumerate() {
        let rel = r.spread / (1.0 + r.kprime);
        ensure(rel <= 1e-9, || format!("chain {n}: spread {:e}, K' = {}", r.spread, r.kprime))?;
        worst = worst.max(rel);
    }
    ensure(secs < 60.0, || format!("corpus took {secs:.1} s"))?;
    Ok(format!("max spread/(1+K') = {worst:.1e} over {} chains, solved in {secs:.1} s", reports.len()))
}

fn route_equivalence() -> Result<String, String> {
    let mut detail = Vec::new();
    for kind in [ChainKind::Discrete, ChainKind::Continuous] {
        let mut worst: f64 = 0.0;
        for (n, (chain, r)) in analyze_corpus(kind)?.iter().enumerate() {
            let trace = kemeny_via_trace(chain).map_err(err)?;
            let rel = (r.kprime - trace).abs() / (1.0 + r.kprime);
            ensure(rel <= 1e-9, || format!("{kind} chain {n}: hitting {} vs trace {trace}", r.kprime))?;
            worst = worst.max(rel);
        }
        detail.push(format!("{kind} max {worst:.1e}"));
    }
    Ok(detail.join(", "))
}

fn hunter_bound() -> Result<String, String> {
    let mut min_slack = f64::INFINITY;
    for (n, (chain, r)) in analyze_corpus(ChainKind::Discrete)?.iter().enumerate() {
        let k = r.kprime + 1.0;
        let bound = (chain.size() as f64 + 1.0) / 2.0;
        ensure(k >= bound, || format!("chain {n}: K = {k} < {bound}"))?;
        min_slack = min_slack.min(k - bound);
    }
    Ok(format!("min K - (m+1)/2 = {min_slack:.3e} over {CORPUS_SIZE} chains"))
}

fn deviation_identities() -> Result<String, String> {
    let (mut hit, mut rows, mut left) = (0.0f64, 0.0f64, 0.0f64);
    for kind in [ChainKind::Discrete, ChainKind::Continuous] {
        for (n, chain) in corpus(kind).iter().enumerate() {
            let r = identity_report(chain).map_err(|e| format!("{kind} chain {n}: {e}"))?;
            ensure(r.hitting_vs_deviation <= 1e-9, || {
                format!("{kind} chain {n}: |pi_j E_i - (D_jj - D_ij)| = {:e}", r.hitting_vs_deviation)
            })?;
            ensure(r.row_sums <= 1e-10, || format!("{kind} chain {n}: ||D 1|| = {:e}", r.row_sums))?;
            ensure(r.left_null <= 1e-10, || format!("{kind} chain {n}: ||pi D|| = {:e}", r.left_null))?;
            hit = hit.max(r.hitting_vs_deviation);
            rows = rows.max(r.row_sums);
            left = left.max(r.left_null);
        }
    }
    Ok(format!("max residuals: hitting {hit:.1e}, D1 {rows:.1e}, piD {left:.1e}"))
}

fn deviation_series() -> Result<String, String> {
    const TERMS: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED ^ 5);
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    while tested < 20 {
        let m = rng.random_range(2..=8);
        let chain = random_chain(ChainKind::Discrete, m, &mut rng);
        let p = chain.matrix().clone();
        // spectral-gap guard: P^n - 1 pi^T must be negligible by n = TERMS
        let mut moduli: Vec<f64> = p.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        moduli.sort_by(|a, b| b.total_cmp(a));
        if moduli[1] > 0.95 {
            continue;
        }
        let dev = deviation_matrix(&chain, 1e-12).map_err(err)?;
        let pi = nalgebra::RowDVector::from_column_slice(&dev.pi);
        let limit = DMatrix::from_fn(m, m, |_, k| pi[k]);
        let mut power = DMatrix::<f64>::identity(m, m);
        let mut sum = DMatrix::<f64>::zeros(m, m);
        for _ in 0..=TERMS {
            sum += &power - &limit;
            power = &power * &p;
        }
        let diff = (&sum - &dev.d).amax();
        ensure(diff <= 1e-6, || format!("chain {tested} (m = {m}): max entry error {diff:e}"))?;
        worst = worst.max(diff);
        tested += 1;
    }
    Ok(format!("20 chains, max |partial sum - D| = {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// Birth-death processes
// ---------------------------------------------------------------------------

fn sped_up_spec() -> BirthDeathSpec {
    BirthDeathSpec::continuous(Family::SpedUpMm1 {
        rho: 0.5,
        lambda: RateRule::pow(2.0),
    })
    .expect("valid family")
}

fn truncated_kprime(spec: &BirthDeathSpec, n: usize) -> Result<f64, String> {
    let chain = truncate(spec, n).map_err(err)?;
    Ok(kemeny_exact(&chain, default_tolerance(&chain)).map_err(err)?.kprime)
}

fn sped_up() -> Result<String, String> {
    let spec = sped_up_spec();
    let report = analyze_bd(&spec, &SeriesOptions::default()).map_err(err)?;
    let theta = report.theta.value().ok_or("theta not converged")?;
    let e_pi = report
        .e_pi_theta0
        .as_ref()
        .and_then(SeriesResult::value)
        .ok_or("E_pi[theta_0] not converged")?;
    let kprime = report.kprime.value().ok_or("K' not converged")?;
    for (name, got, want) in [("theta", theta, 2.0), ("E_pi", e_pi, 2.0 / 3.0), ("K'", kprime, 4.0 / 3.0)] {
        ensure((got - want).abs() <= 1e-9, || format!("{name} = {got}, expected {want}"))?;
    }
    let mut deltas = Vec::new();
    for n in [10, 20, 40, 80] {
        deltas.push((truncated_kprime(&spec, n)? - 4.0 / 3.0).abs());
    }
    ensure(deltas.windows(2).all(|w| w[1] < w[0]), || format!("ladder not decreasing: {deltas:?}"))?;
    ensure(deltas[3] <= 1e-6, || format!("|K'(80) - 4/3| = {:e}", deltas[3]))?;
    let deltas: Vec<String> = deltas.iter().map(|d| format!("{d:.1e}")).collect();
    Ok(format!("K' = {kprime}, ladder |K'(N) - 4/3| = [{}]", deltas.join(", ")))
}

fn designed_family() -> Result<String, String> {
    let spec = design_from_f(RateRule::inverse_square(), RateRule::constant(1.0)).map_err(err)?;
    let theta = theta_series(&spec, &SeriesOptions::default())
        .map_err(err)?
        .value()
        .ok_or("theta not converged")?;
    // integral bounds: 1/(n+1) < sum_{j>n} 1/j^2 < 1/n
    let n = 100_000;
    let partial: f64 = (1..=n).rev().map(|j| 1.0 / (j as f64 * j as f64)).sum();
    let oracle = partial + 0.5 * (1.0 / (n as f64 + 1.0) + 1.0 / n as f64);
    ensure((theta - oracle).abs() <= 1e-7, || format!("theta = {theta}, oracle {oracle}"))?;

    let kprime = kemeny_bd(&spec, &SeriesOptions::default()).map_err(err)?;
    let kprime = kprime.value().ok_or_else(|| format!("K' not finite: {kprime:?}"))?;

    let chain = truncate(&spec, 100).map_err(err)?;
    let report = kemeny_exact(&chain, 1e-8).map_err(err)?;
    ensure(report.spread <= 1e-8, || format!("spread at N = 100 is {:e}", report.spread))?;
    Ok(format!("theta = {theta}, K' = {kprime}, spread(N = 100) = {:.1e}", report.spread))
}

fn divergence_battery() -> Result<String, String> {
    let opts = SeriesOptions::default();
    let expect = |what: &str, got: &SeriesResult, reason: DivergenceReason| {
        ensure(got.divergence_reason() == Some(reason), || format!("{what}: {got:?}, expected {reason:?}"))
    };

    let mm1 = BirthDeathSpec::continuous(Family::Mm1 { lambda: 1.0, mu: 2.0 }).map_err(err)?;
    expect("mm1 K'", &kemeny_bd(&mm1, &opts).map_err(err)?, DivergenceReason::Analytic)?;

    let mm_inf = BirthDeathSpec::continuous(Family::MmInfinity { lambda: 1.0, mu: 1.0 }).map_err(err)?;
    expect("mm_infinity sum 1/mu", &necessary_condition(&mm_inf, &opts).map_err(err)?, DivergenceReason::Analytic)?;
    expect(
        "mm_infinity theta",
        &theta_series(&mm_inf, &opts).map_err(err)?,
        DivergenceReason::NecessaryConditionFailed,
    )?;

    let power = BirthDeathSpec::continuous(Family::PowerLaw { alpha: 0.5 }).map_err(err)?;
    let inv_mu = necessary_condition(&power, &opts).map_err(err)?;
    let inv_mu = inv_mu.value().ok_or_else(|| format!("power law sum 1/mu: {inv_mu:?}"))?;
    let n = 1_000_000;
    let partial: f64 = (1..=n).rev().map(|j| (j as f64).powf(-1.5)).sum();
    // tail between 2/sqrt(n+1) and 2/sqrt(n)
    let oracle = partial + ((n as f64 + 1.0).sqrt().recip() + (n as f64).sqrt().recip());
    ensure((inv_mu - oracle).abs() <= 1e-3, || format!("sum 1/mu = {inv_mu}, oracle {oracle}"))?;
    expect("power law theta", &theta_series(&power, &opts).map_err(err)?, DivergenceReason::Analytic)?;

    let discrete = [
        BirthDeathSpec::new(ChainKind::Discrete, Family::Mm1 { lambda: 0.3, mu: 0.5 }),
        BirthDeathSpec::new(
            ChainKind::Discrete,
            Family::Table {
                lambda: vec![0.5, 0.4, 0.2],
                mu: vec![0.3, 0.6, 0.7],
                extend: Extend::Last,
            },
        ),
    ];
    for spec in discrete {
        let spec = spec.map_err(err)?;
        expect("discrete K'", &kemeny_bd(&spec, &opts).map_err(err)?, DivergenceReason::Analytic)?;
    }
    Ok(format!("all verdicts as expected; power law sum 1/mu = {inv_mu:.6}"))
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

const SEEDS: u64 = 100;
const REQUIRED_COVERAGE: usize = 97;
const FULL_TRAJECTORIES: usize = 100_000;
const FULL_HORIZON: f64 = 5_000.0;
const BUDGET_SECS: f64 = 600.0;

struct Case {
    name: &'static str,
    chain: MarkovChain,
    horizon: Horizon,
    pair: (usize, usize),
}

fn calibration_cases() -> Result<Vec<Case>, String> {
    let dtmc = MarkovChain::from_rows(ChainKind::Discrete, &[vec![0.5, 0.5], vec![0.5, 0.5]]).map_err(err)?;
    let ctmc = MarkovChain::from_rows(ChainKind::Continuous, &[vec![-1.0, 1.0], vec![1.0, -1.0]]).map_err(err)?;
    let sped = truncate(&sped_up_spec(), 40).map_err(err)?;
    Ok(vec![
        Case { name: "2-state dtmc", chain: dtmc, horizon: Horizon::Steps(FULL_HORIZON as u64), pair: (0, 1) },
        Case { name: "2-state ctmc", chain: ctmc, horizon: Horizon::Time(FULL_HORIZON), pair: (0, 1) },
        Case { name: "sped-up N=40", chain: sped, horizon: Horizon::Time(FULL_HORIZON), pair: (0, 1) },
    ])
}

/// Wall time of one seed (both estimators) at full scale, extrapolated from
/// a pilot with few trajectories.
fn projected_seconds_per_seed(case: &Case) -> Result<f64, String> {
    let m = case.chain.size();
    let pilot = (4000 / (m * m)).clamp(2, 1000);
    let cfg = SimConfig::new(case.horizon, pilot, 1);
    let start = Instant::now();
    step_count_identity(&case.chain, &cfg).map_err(err)?;
    let per_trajectory = start.elapsed().as_secs_f64() / (m * pilot) as f64;
    // step count runs R trajectories per start state, the deficit 2R
    Ok(per_trajectory * ((m + 2) * FULL_TRAJECTORIES) as f64)
}

fn coverage(case: &Case) -> Result<(usize, usize), String> {
    let exact = kemeny_exact(&case.chain, default_tolerance(&case.chain)).map_err(err)?;
    let (i, j) = case.pair;
    let deficit_exact = exact.pi[j] * exact.hitting[(i, j)];
    let (mut deficit, mut steps) = (0, 0);
    for seed in 0..SEEDS {
        let cfg = SimConfig::new(case.horizon, FULL_TRAJECTORIES, seed);
        let d = visit_deficit(&case.chain, i, j, &cfg).map_err(err)?;
        let s = step_count_identity(&case.chain, &cfg).map_err(err)?;
        deficit += usize::from((d.value - deficit_exact).abs() <= 3.0 * d.std_error);
        steps += usize::from((s.value - exact.kprime).abs() <= 3.0 * s.std_error);
    }
    Ok((deficit, steps))
}

fn calibration() -> Result<String, String> {
    let cases = calibration_cases()?;
    let full = std::env::var("KEMENY_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    if !full {
        let mut total = 0.0;
        let mut parts = Vec::new();
        for case in &cases {
            let secs = projected_seconds_per_seed(case)? * SEEDS as f64;
            parts.push(format!("{} {secs:.2e} s", case.name));
            total += secs;
        }
        let summary = format!("projected runtime at R = 1e5, 100 seeds: {} (total {total:.2e} s)", parts.join(", "));
        return if total < BUDGET_SECS {
            Err(format!("{summary}; within budget, rerun with KEMENY_ACCEPTANCE_FULL=1"))
        } else {
            Err(format!("{summary} exceeds the {BUDGET_SECS} s budget; not run"))
        };
    }

    let start = Instant::now();
    let mut parts = Vec::new();
    for case in &cases {
        let (deficit, steps) = coverage(case)?;
        ensure(deficit >= REQUIRED_COVERAGE && steps >= REQUIRED_COVERAGE, || {
            format!("{}: deficit {deficit}/100, step count {steps}/100", case.name)
        })?;
        parts.push(format!("{} {deficit}/{steps}", case.name));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < BUDGET_SECS, || format!("coverage met but took {secs:.0} s"))?;
    Ok(format!("coverage (deficit/step count): {}", parts.join(", ")))
}

fn reproducibility() -> Result<String, String> {
    let chain = MarkovChain::from_rows(
        ChainKind::Discrete,
        &[vec![0.1, 0.6, 0.3], vec![0.4, 0.4, 0.2], vec![0.5, 0.25, 0.25]],
    )
    .map_err(err)?;
    let cfg = SimConfig::new(Horizon::Steps(500), 4000, 2024);
    let max_threads = std::thread::available_parallelism().map_or(1, |n| n.get()).max(8);
    let run = |threads: usize| -> Result<String, String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(err)?;
        pool.install(|| {
            let d = visit_deficit(&chain, 2, 0, &cfg).map_err(err)?;
            let s = step_count_identity(&chain, &cfg).map_err(err)?;
            serde_json::to_string(&(d, s)).map_err(err)
        })
    };
    let reference = run(1)?;
    for threads in [1, 2, max_threads] {
        ensure(run(threads)? == reference, || format!("library output differs at {threads} threads"))?;
    }

    let Some(binary) = kemeny_binary() else {
        return Err("kemeny binary not built; run the whole workspace test suite".into());
    };
    let input = std::env::temp_dir().join(format!("kemeny-acceptance-{}.json", std::process::id()));
    std::fs::write(&input, serde_json::to_string(&ChainFile::from_chain(&chain)).map_err(err)?).map_err(err)?;
    let cli = |threads: usize, estimator: &str| -> Result<Vec<u8>, String> {
        let out = Command::new(&binary)
            .args(["simulate", input.to_str().unwrap(), "--estimator", estimator])
            .args(["--start", "2", "--target", "0", "--horizon", "500", "--trajectories", "4000", "--seed", "2024"])
            .env("RAYON_NUM_THREADS", threads.to_string())
            .output()
            .map_err(err)?;
        ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
        Ok(out.stdout)
    };
    let mut result = Ok(());
    for estimator in ["deficit", "stepcount"] {
        let a = cli(1, estimator)?;
        for threads in [1, max_threads] {
            if cli(threads, estimator)? != a {
                result = Err(format!("{estimator}: CLI output differs at {threads} threads"));
            }
        }
    }
    let _ = std::fs::remove_file(&input);
    result?;
    Ok(format!("library and CLI output bitwise identical at 1..{max_threads} threads"))
}

/// The `kemeny` binary built alongside this test, if any.
fn kemeny_binary() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?;
    let path = dir.join(format!("kemeny{}", std::env::consts::EXE_SUFFIX));
    path.exists().then_some(path)
}
