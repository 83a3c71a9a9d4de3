//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use mnchemo::diagnostics::{check_functional_dissipation, to_csv_string};
use mnchemo::experiments::{
    convergence_study, estimate_critical_alpha, mass_identity_error, ode_phase_study, run_single, run_sweep,
    ConversionFamily, ConvergenceKind, RunSpec, SweepResult, SweepSpec,
};
use mnchemo::grid::{build_grid, chemotactic_divergence, neumann_laplacian, Field, GridSpec};
use mnchemo::initial::{InitialData, UniformSource};
use mnchemo::models::{homogeneous_equilibria, rhs_may_nowak_ode, ConversionSpec, ModelSpec, SystemKind};
use mnchemo::stepper::{StepperConfig, POSITIVITY_TOL};
use mnchemo::Classification;

type Outcome = Result<String, String>;

/// Worst `min / (1 + max)` seen by any fixture run, with its label.
#[derive(Default)]
struct PositivityLog {
    worst: Vec<(String, f64)>,
}

impl PositivityLog {
    fn record(&mut self, label: impl Into<String>, scaled_min: f64) {
        self.worst.push((label.into(), scaled_min));
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn budget(name: &str, elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed <= limit, || {
        format!("{name} took {:.1}s, budget {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64())
    })
}

fn mass_identity(log: &mut PositivityLog) -> Outcome {
    let mut details = Vec::new();
    for kappa in [0.0, 1.0, 2.0] {
        let start = Instant::now();
        let coarse = mass_identity_error(kappa, 128, 1e-3, 10.0, 0).map_err(|e| e.to_string())?;
        budget(&format!("kappa = {kappa} at dt = 1e-3"), start.elapsed(), Duration::from_secs(10))?;
        let fine = mass_identity_error(kappa, 128, 5e-4, 10.0, 0).map_err(|e| e.to_string())?;
        log.record(format!("mass kappa={kappa}"), coarse.record.stats.worst_scaled_min);
        log.record(format!("mass kappa={kappa} fine"), fine.record.stats.worst_scaled_min);
        check(coarse.max_rel_error < 0.01, || {
            format!("kappa = {kappa}: relative error {:.3e} >= 1%", coarse.max_rel_error)
        })?;
        let ratio = coarse.max_abs_error / fine.max_abs_error;
        check((ratio - 2.0).abs() < 0.2, || {
            format!("kappa = {kappa}: residual ratio {ratio:.3} under dt halving")
        })?;
        check(coarse.bound_excess <= 1e-12 * 2.0, || {
            format!("kappa = {kappa}: z exceeds max(z0, kappa|Omega|) by {:.3e}", coarse.bound_excess)
        })?;
        details.push(format!("k={kappa}: rel {:.2e}, ratio {ratio:.3}", coarse.max_rel_error));
    }
    Ok(details.join("; "))
}

fn random_field(grid: &std::sync::Arc<mnchemo::Grid>, src: &mut UniformSource) -> Field {
    let vals = (0..grid.len()).map(|_| src.next_in(0.0, 1.0)).collect();
    Field::new(grid.clone(), vals).unwrap()
}

/// `|sum vol * op| / sum vol * |op|` for one discrete operator output.
fn relative_total(f: &Field) -> f64 {
    let vols = f.grid().cell_volumes();
    let signed: f64 = f.values().iter().zip(vols).map(|(a, v)| a * v).sum();
    let abs: f64 = f.values().iter().zip(vols).map(|(a, v)| a.abs() * v).sum();
    if abs == 0.0 {
        0.0
    } else {
        signed.abs() / abs
    }
}

fn conservativity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut src = UniformSource::new(2024);
    for spec in [
        GridSpec::interval(1.0, 64),
        GridSpec::rectangle(1.0, 2.0, 24, 16),
        GridSpec::radial_disk(1.0, 64),
    ] {
        let grid = build_grid(spec).unwrap();
        for _ in 0..100 {
            let u = random_field(&grid, &mut src);
            let v = random_field(&grid, &mut src);
            worst = worst.max(relative_total(&neumann_laplacian(&v)));
            worst = worst.max(relative_total(&chemotactic_divergence(&u, &v)));
        }
    }
    check(worst < 1e-10, || format!("relative discrete divergence {worst:.3e}"))?;
    budget("conservativity", start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("worst relative total {worst:.2e} over 100 fields x 3 geometries"))
}

fn manufactured_solution() -> Outcome {
    let start = Instant::now();
    let temporal = convergence_study(ConvergenceKind::WEquationExact, 3).map_err(|e| e.to_string())?;
    let spatial = convergence_study(ConvergenceKind::WEquationSpatial, 3).map_err(|e| e.to_string())?;
    let orders = |rows: &[mnchemo::experiments::ConvergenceRow]| -> Vec<f64> {
        rows.iter().filter_map(|r| r.observed_order).collect()
    };
    let (ot, os) = (orders(&temporal), orders(&spatial));
    check(ot.iter().all(|o| (o - 1.0).abs() <= 0.2), || format!("temporal orders {ot:?}"))?;
    check(os.iter().all(|o| (o - 2.0).abs() <= 0.2), || format!("spatial orders {os:?}"))?;
    budget("manufactured solution", start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("temporal orders {ot:.3?}, spatial orders {os:.3?}"))
}

fn equilibria() -> Outcome {
    let start = Instant::now();
    let set_eq = |a: &[[f64; 3]], b: &[[f64; 3]]| {
        a.len() == b.len()
            && a.iter().all(|x| b.iter().any(|y| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-10)))
    };
    let mut worst_residual: f64 = 0.0;
    for kappa in [0.25, 0.5, 0.9, 1.5, 2.0, 3.0] {
        let spec = ModelSpec::normalized(SystemKind::MayNowakOde, kappa, ConversionSpec::identity());
        let eqs = homogeneous_equilibria(&spec).map_err(|e| e.to_string())?;
        let expected: Vec<[f64; 3]> = if kappa < 1.0 {
            vec![[kappa, 0.0, 0.0]]
        } else {
            vec![[kappa, 0.0, 0.0], [1.0, kappa - 1.0, kappa - 1.0]]
        };
        check(set_eq(&eqs, &expected), || format!("kappa = {kappa}: got {eqs:?}"))?;
        for e in &eqs {
            let r = rhs_may_nowak_ode(*e, kappa);
            worst_residual = worst_residual.max(r.iter().fold(0.0, |m, x| m.max(x.abs())));
        }
    }
    check(worst_residual < 1e-10, || format!("RHS residual {worst_residual:.3e}"))?;
    let rows = ode_phase_study(&[0.5, 2.0], &ConversionSpec::identity(), 100.0).map_err(|e| e.to_string())?;
    let stable = [[0.5, 0.0, 0.0], [1.0, 1.0, 1.0]];
    for (row, want) in rows.iter().zip(stable) {
        let err = row.limit.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        check(err <= 1e-4, || {
            format!("kappa = {}: limit {:?} is {err:.2e} from {want:?}", row.kappa, row.limit)
        })?;
    }
    budget("equilibria", start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("equilibrium sets match, residual {worst_residual:.1e}, ODE limits within 1e-4"))
}

fn bounded_base(grid: GridSpec) -> RunSpec {
    RunSpec {
        model: ModelSpec::normalized(SystemKind::MayNowakChemotaxis, 1.0, ConversionSpec::identity()),
        grid,
        stepper: StepperConfig::default(),
        sample_interval: 0.5,
        q: None,
        initial: InitialData::RandomBump { mass: 1.0 },
        seed: 0,
    }
}

fn one_dimensional_sweep() -> SweepSpec {
    SweepSpec {
        base: bounded_base(GridSpec::interval(1.0, 128)),
        alpha_values: vec![0.5, 1.0, 1.5, 1.9],
        kappa_values: vec![1.0],
        seeds: vec![0, 1, 2],
        conversion: ConversionFamily::Prototype,
        workers: None,
    }
}

fn all_bounded(result: &SweepResult, log: &mut PositivityLog, tag: &str) -> Result<(), String> {
    for row in &result.rows {
        if let Some(rec) = &row.record {
            log.record(format!("{tag} alpha={} seed={}", row.alpha, row.seed), rec.stats.worst_scaled_min);
        }
        check(row.outcome.classification == Classification::Bounded, || {
            format!(
                "alpha = {}, seed = {}: {} {}",
                row.alpha,
                row.seed,
                row.outcome.classification.label(),
                row.error.clone().unwrap_or_default()
            )
        })?;
    }
    Ok(())
}

fn bounded_one_dimensional(log: &mut PositivityLog) -> Result<(String, SweepResult), String> {
    let start = Instant::now();
    let result = run_sweep(&one_dimensional_sweep()).map_err(|e| e.to_string())?;
    all_bounded(&result, log, "n=1")?;
    let mut checked = 0;
    for row in result.rows.iter().filter(|r| r.alpha > 1.0 && r.alpha < 2.0) {
        let rec = row.record.as_ref().ok_or("missing record")?;
        let report = check_functional_dissipation(&rec.series, row.alpha, 1);
        check(report.applicable && report.plateau == Some(true), || {
            format!("alpha = {}, seed = {}: functional report {report:?}", row.alpha, row.seed)
        })?;
        checked += 1;
    }
    budget("n = 1 sweep", start.elapsed(), Duration::from_secs(300))?;
    Ok((
        format!("{} runs Bounded, functional plateaus in {checked} runs", result.rows.len()),
        result,
    ))
}

fn bounded_two_dimensional(log: &mut PositivityLog) -> Outcome {
    let start = Instant::now();
    let spec = SweepSpec {
        base: bounded_base(GridSpec::rectangle(1.0, 1.0, 32, 32)),
        alpha_values: vec![0.5, 0.9],
        kappa_values: vec![1.0],
        seeds: vec![0, 1, 2],
        conversion: ConversionFamily::Prototype,
        workers: None,
    };
    let result = run_sweep(&spec).map_err(|e| e.to_string())?;
    all_bounded(&result, log, "n=2")?;
    budget("n = 2 sweep", start.elapsed(), Duration::from_secs(600))?;
    Ok(format!("{} runs Bounded on a 32x32 rectangle", result.rows.len()))
}

/// Parabolic-elliptic system on the unit disk with a centered Gaussian.
/// The reduced threshold sits below the single-cell mass cap `mass / vol0`
/// so concentration is detected before the grid saturates.
fn critical_base(alpha: f64, mass: f64) -> RunSpec {
    RunSpec {
        model: ModelSpec::normalized(
            SystemKind::KsParabolicElliptic,
            0.0,
            ConversionFamily::Prototype.conversion(alpha),
        ),
        grid: GridSpec::radial_disk(1.0, 100),
        stepper: StepperConfig {
            t_end: 10.0,
            blowup_threshold: 100.0,
            ..StepperConfig::default()
        },
        sample_interval: 0.2,
        q: None,
        initial: InitialData::ConcentratedGaussian { mass, width: 0.3 },
        seed: 0,
    }
}

const SMALL_MASS: f64 = 5.0;
const LARGE_MASS: f64 = 30.0;
const DT_COLLAPSE_MAX: f64 = 0.1;

fn critical_contrast(log: &mut PositivityLog) -> Outcome {
    let start = Instant::now();
    let small = run_single(&critical_base(0.5, SMALL_MASS)).map_err(|e| e.to_string())?;
    log.record("critical small mass", small.stats.worst_scaled_min);
    check(small.outcome.classification == Classification::Bounded, || {
        format!("alpha = 0.5, small mass: {:?}", small.outcome.classification)
    })?;

    let large = run_single(&critical_base(1.5, LARGE_MASS)).map_err(|e| e.to_string())?;
    log.record("critical large mass", large.stats.worst_scaled_min);
    let t_blow = match large.outcome.classification {
        Classification::BlowUp { t } if t.is_finite() => t,
        other => return Err(format!("alpha = 1.5, large mass: {other:?}")),
    };
    let collapse = large.stats.dt_collapse_ratio();
    check(collapse <= DT_COLLAPSE_MAX, || {
        format!("no dt collapse at blow-up: last/max dt = {collapse:.3e}")
    })?;

    let search = estimate_critical_alpha(&critical_base(1.0, LARGE_MASS), ConversionFamily::Prototype, (0.5, 1.5), 4)
        .map_err(|e| e.to_string())?;
    let width = search.bracket.1 - search.bracket.0;
    check((width - 1.0 / 16.0).abs() < 1e-12, || format!("bracket width {width}"))?;
    check((search.estimate - 1.0).abs() <= 0.25, || {
        format!("critical alpha estimate {}", search.estimate)
    })?;
    // Monotonicity on this fixture: blow-up at alpha implies blow-up above it.
    let mut evals = search.evaluations.clone();
    evals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let first_blow = evals.iter().position(|(_, c)| c.is_blow_up());
    check(
        first_blow.is_some_and(|i| evals[i..].iter().all(|(_, c)| c.is_blow_up())),
        || format!("non-monotone classifications {evals:?}"),
    )?;
    budget("criticality contrast", start.elapsed(), Duration::from_secs(900))?;
    Ok(format!(
        "blow-up at t = {t_blow:.3e} (last/max dt {collapse:.1e}), estimate {:.4} in ({:.4}, {:.4})",
        search.estimate, search.bracket.0, search.bracket.1
    ))
}

fn positivity(log: &PositivityLog) -> Outcome {
    let (label, worst) = log
        .worst
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .ok_or("no fixture runs recorded")?;
    check(worst >= -POSITIVITY_TOL, || format!("{label}: scaled minimum {worst:.3e}"))?;
    Ok(format!("worst scaled minimum {worst:.3e} ({label}) over {} runs", log.worst.len()))
}

fn determinism(first: &SweepResult) -> Outcome {
    let again = run_sweep(&one_dimensional_sweep()).map_err(|e| e.to_string())?;
    for (a, b) in first.rows.iter().zip(&again.rows) {
        let csv = |r: &mnchemo::experiments::SweepRow| {
            r.record.as_ref().map(|rec| to_csv_string(&rec.series).unwrap())
        };
        check(csv(a).is_some() && csv(a) == csv(b), || {
            format!("alpha = {}, seed = {}: diagnostics differ", a.alpha, a.seed)
        })?;
    }
    let (mut s1, mut s2) = (Vec::new(), Vec::new());
    first.write_summary_csv(&mut s1).map_err(|e| e.to_string())?;
    again.write_summary_csv(&mut s2).map_err(|e| e.to_string())?;
    check(s1 == s2, || "sweep summaries differ".into())?;
    Ok(format!("{} diagnostics files byte-identical", first.rows.len()))
}

fn main() {
    let mut log = PositivityLog::default();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "mass identity", mass_identity(&mut log)));
    results.push((2, "conservativity", conservativity()));
    results.push((3, "manufactured w-equation", manufactured_solution()));
    results.push((4, "homogeneous equilibria", equilibria()));
    let one_d = bounded_one_dimensional(&mut log);
    let (msg5, sweep5) = match one_d {
        Ok((m, s)) => (Ok(m), Some(s)),
        Err(e) => (Err(e), None),
    };
    results.push((5, "bounded regime n = 1", msg5));
    results.push((6, "bounded regime n = 2", bounded_two_dimensional(&mut log)));
    results.push((7, "critical exponent contrast", critical_contrast(&mut log)));
    results.push((8, "positivity", positivity(&log)));
    results.push((
        9,
        "determinism",
        sweep5.as_ref().map_or_else(|| Err("fixture 5 did not run".into()), determinism),
    ));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {why}");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
