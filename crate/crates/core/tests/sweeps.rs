use mnchemo::diagnostics::{read_csv, to_csv_string};
use mnchemo::experiments::{
    estimate_critical_alpha, run_sweep, ConversionFamily, ExperimentError, RunSpec, SweepSpec,
};
use mnchemo::initial::UniformSource;
use mnchemo::stepper::POSITIVITY_TOL;
use mnchemo::{ConversionSpec, GridSpec, InitialData, ModelSpec, StepperConfig, SystemKind};

fn small_sweep(workers: Option<usize>) -> SweepSpec {
    SweepSpec {
        base: RunSpec {
            model: ModelSpec::normalized(SystemKind::MayNowakChemotaxis, 1.0, ConversionSpec::identity()),
            grid: GridSpec::interval(1.0, 32),
            stepper: StepperConfig {
                t_end: 5.0,
                ..StepperConfig::default()
            },
            sample_interval: 0.25,
            q: None,
            initial: InitialData::RandomBump { mass: 1.0 },
            seed: 0,
        },
        alpha_values: vec![0.5, 1.0, 1.5, 1.9],
        kappa_values: vec![0.5, 2.0],
        seeds: vec![0, 1, 2, 3, 4],
        conversion: ConversionFamily::Prototype,
        workers,
    }
}

#[test]
fn sweep_order_and_determinism_do_not_depend_on_workers() {
    let a = run_sweep(&small_sweep(Some(1))).unwrap();
    let b = run_sweep(&small_sweep(Some(4))).unwrap();
    let keys: Vec<_> = a.rows.iter().map(|r| (r.alpha, r.kappa, r.seed)).collect();
    assert_eq!(keys, small_sweep(None).tuples());
    let (mut sa, mut sb) = (Vec::new(), Vec::new());
    a.write_summary_csv(&mut sa).unwrap();
    b.write_summary_csv(&mut sb).unwrap();
    assert_eq!(sa, sb);
    let text = String::from_utf8(sa).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "alpha,kappa,seed,classification,t_detect,peak_linf_u,peak_grad_v_lq,peak_linf_w"
    );
    assert_eq!(lines.count(), 40);
}

#[test]
fn spot_checked_runs_satisfy_invariants() {
    let spec = small_sweep(None);
    let result = run_sweep(&spec).unwrap();
    let mut pick = UniformSource::new(99);
    let mut checked = 0;
    for row in &result.rows {
        if pick.next_unit() >= 0.1 && checked > 0 {
            continue;
        }
        checked += 1;
        let rec = row.record.as_ref().expect("bounded fixture runs succeed");
        assert!(rec.stats.worst_scaled_min >= -POSITIVITY_TOL);
        // Times strictly increase and land on the sample grid.
        for w in rec.series.windows(2) {
            assert!(w[1].t > w[0].t);
        }
        for r in &rec.series {
            let k = (r.t / 0.25).round();
            assert!((r.t - 0.25 * k).abs() < 1e-12);
        }
        // First-order agreement with the exact mass ODE between samples.
        for r in &rec.series[1..] {
            let bound = 0.25 * 1e-2 * (r.mass_u + r.mass_v + row.kappa);
            assert!(r.mass_ode_residual.unwrap().abs() <= bound, "{r:?}");
        }
        // Diagnostics survive a CSV round trip.
        let back = read_csv(to_csv_string(&rec.series).unwrap().as_bytes()).unwrap();
        assert_eq!(back.len(), rec.series.len());
    }
    assert!(checked >= 2);
}

#[test]
fn identical_bracket_classifications_are_rejected() {
    let base = small_sweep(None).base;
    let err = estimate_critical_alpha(&base, ConversionFamily::Prototype, (0.5, 0.9), 3).unwrap_err();
    assert!(matches!(err, ExperimentError::BracketInvalid { .. }), "{err}");
}

#[test]
fn four_alpha_fixture_yields_four_rows() {
    let mut spec = small_sweep(None);
    spec.kappa_values = vec![1.0];
    spec.seeds = vec![0];
    let result = run_sweep(&spec).unwrap();
    assert_eq!(result.summary().len(), 4);
    assert!(result.rows.iter().all(|r| r.error.is_none()));
}
