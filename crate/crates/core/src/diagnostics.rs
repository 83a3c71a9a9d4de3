//! Monitored quantities and run classification.
//!
//! All checks are qualitative: a norm counts as bounded when its maximum over
//! the second half of the run exceeds the maximum over the first half by at
//! most `PLATEAU_DELTA`.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{dirichlet_energy, grad_max, grad_norm_lq, GridError};
use crate::models::{ModelSpec, State, SystemKind};
use crate::stepper::{BlowUpCause, Termination};

pub const PLATEAU_DELTA: f64 = 0.05;
pub const GROWTH_FACTOR: f64 = 2.0;
pub const MIN_ROWS: usize = 10;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("monitor exponent q must exceed 1, got {0}")]
    InvalidExponent(f64),
    #[error("classification needs at least {MIN_ROWS} samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One sample of the monitored quantities. Serializes to the fixed CSV column
/// order; `None` becomes an empty cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub dt: f64,
    pub mass_u: f64,
    pub mass_v: f64,
    pub mass_w: Option<f64>,
    pub linf_u: f64,
    pub linf_w: Option<f64>,
    pub grad_v_lq: f64,
    #[serde(rename = "functional_E")]
    pub functional_e: Option<f64>,
    pub mass_ode_residual: Option<f64>,
    /// Largest face gradient of v; not part of the CSV schema.
    #[serde(skip)]
    pub grad_v_max: f64,
}

pub const CSV_COLUMNS: [&str; 10] = [
    "t",
    "dt",
    "mass_u",
    "mass_v",
    "mass_w",
    "linf_u",
    "linf_w",
    "grad_v_lq",
    "functional_E",
    "mass_ode_residual",
];

/// Default monitor exponent `q = n + 1`.
pub fn default_q(spatial_dim: usize) -> f64 {
    spatial_dim as f64 + 1.0
}

/// Common decay rate when the total mass of u + v obeys a closed linear ODE.
fn mass_ode_rate(spec: &ModelSpec) -> Option<f64> {
    (spec.system == SystemKind::MayNowakChemotaxis && spec.decay_u == spec.decay_v)
        .then_some(spec.decay_u)
}

/// Exact solution of `z' = -d z + kappa |Omega|` after time `tau`.
pub fn mass_ode_exact(z0: f64, tau: f64, decay: f64, kappa_vol: f64) -> f64 {
    let e = (-decay * tau).exp();
    z0 * e + kappa_vol / decay * (1.0 - e)
}

pub fn compute_row(
    state: &State,
    spec: &ModelSpec,
    q: f64,
    dt: f64,
    prev: Option<&DiagnosticsRow>,
) -> Result<DiagnosticsRow, DiagnosticsError> {
    if !(q > 1.0) {
        return Err(DiagnosticsError::InvalidExponent(q));
    }
    let grid = state.grid();
    let mass_u = state.u.l1_norm();
    let mass_v = state.v.l1_norm();
    let alpha = spec.alpha();
    let functional_e = (alpha > 0.0).then(|| {
        let u_part: f64 = state
            .u
            .values()
            .iter()
            .zip(grid.cell_volumes())
            .map(|(u, vol)| u.max(0.0).powf(alpha) * vol)
            .sum();
        u_part / alpha + 0.5 * dirichlet_energy(&state.v)
    });
    let mass_ode_residual = mass_ode_rate(spec).map(|d| match prev {
        None => 0.0,
        Some(p) => {
            let z_prev = p.mass_u + p.mass_v;
            let exact = mass_ode_exact(z_prev, state.t - p.t, d, spec.kappa * grid.total_volume());
            mass_u + mass_v - exact
        }
    });
    Ok(DiagnosticsRow {
        t: state.t,
        dt,
        mass_u,
        mass_v,
        mass_w: state.w.as_ref().map(|w| w.l1_norm()),
        linf_u: state.u.max_abs(),
        linf_w: state.w.as_ref().map(|w| w.max_abs()),
        grad_v_lq: grad_norm_lq(&state.v, q)?,
        functional_e,
        mass_ode_residual,
        grad_v_max: grad_max(&state.v),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classification {
    Bounded,
    Growing,
    BlowUp { t: f64 },
    Diverged { t: f64 },
    Inconclusive,
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::Bounded => "Bounded",
            Classification::Growing => "Growing",
            Classification::BlowUp { .. } => "BlowUp",
            Classification::Diverged { .. } => "Diverged",
            Classification::Inconclusive => "Inconclusive",
        }
    }

    pub fn detection_time(&self) -> Option<f64> {
        match *self {
            Classification::BlowUp { t } | Classification::Diverged { t } => Some(t),
            _ => None,
        }
    }

    pub fn is_blow_up(&self) -> bool {
        matches!(self, Classification::BlowUp { .. })
    }
}

/// Late/early maxima ratio of one monitored norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauCheck {
    pub first_half_max: f64,
    pub last_half_max: f64,
    pub plateau: bool,
}

impl PlateauCheck {
    fn new(first: f64, last: f64) -> Self {
        Self {
            first_half_max: first,
            last_half_max: last,
            plateau: last <= (1.0 + PLATEAU_DELTA) * first,
        }
    }

    pub fn ratio(&self) -> f64 {
        if self.first_half_max > 0.0 {
            self.last_half_max / self.first_half_max
        } else if self.last_half_max > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub peak_linf_u: f64,
    pub peak_grad_v_lq: f64,
    pub peak_linf_w: Option<f64>,
    pub peak_grad_v_max: f64,
    pub linf_u: Option<PlateauCheck>,
    pub grad_v_lq: Option<PlateauCheck>,
    pub linf_w: Option<PlateauCheck>,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub classification: Classification,
    pub evidence: Evidence,
}

fn peak(series: &[DiagnosticsRow], f: impl Fn(&DiagnosticsRow) -> Option<f64>) -> Option<f64> {
    series.iter().filter_map(f).reduce(f64::max)
}

fn halves(series: &[DiagnosticsRow]) -> (&[DiagnosticsRow], &[DiagnosticsRow]) {
    let t0 = series.first().map_or(0.0, |r| r.t);
    let t1 = series.last().map_or(0.0, |r| r.t);
    let mid = 0.5 * (t0 + t1);
    let split = series.partition_point(|r| r.t <= mid);
    series.split_at(split)
}

fn plateau_of(
    series: &[DiagnosticsRow],
    f: impl Fn(&DiagnosticsRow) -> Option<f64> + Copy,
) -> Option<PlateauCheck> {
    let (first, last) = halves(series);
    Some(PlateauCheck::new(peak(first, f)?, peak(last, f)?))
}

/// Classifies a finished run.
///
/// Blow-up and divergence pass through from the termination reason. A run
/// that reached its horizon is `Bounded` when `linf_u`, `grad_v_lq` and (if
/// present) `linf_w` all plateau, `Growing` when the late maximum of
/// `linf_u` is more than twice the early one, and `Inconclusive` otherwise.
pub fn classify(series: &[DiagnosticsRow], termination: Termination) -> Result<RunOutcome, DiagnosticsError> {
    let evidence = |series: &[DiagnosticsRow], with_plateaus: bool| Evidence {
        peak_linf_u: peak(series, |r| Some(r.linf_u)).unwrap_or(0.0),
        peak_grad_v_lq: peak(series, |r| Some(r.grad_v_lq)).unwrap_or(0.0),
        peak_linf_w: peak(series, |r| r.linf_w),
        peak_grad_v_max: peak(series, |r| Some(r.grad_v_max)).unwrap_or(0.0),
        linf_u: with_plateaus.then(|| plateau_of(series, |r| Some(r.linf_u))).flatten(),
        grad_v_lq: with_plateaus.then(|| plateau_of(series, |r| Some(r.grad_v_lq))).flatten(),
        linf_w: with_plateaus.then(|| plateau_of(series, |r| r.linf_w)).flatten(),
        termination,
    };
    match termination {
        Termination::BlowUpSuspected { t, .. } => {
            return Ok(RunOutcome {
                classification: Classification::BlowUp { t },
                evidence: evidence(series, false),
            })
        }
        Termination::Diverged { t } => {
            return Ok(RunOutcome {
                classification: Classification::Diverged { t },
                evidence: evidence(series, false),
            })
        }
        Termination::ReachedTEnd => {}
    }
    if series.len() < MIN_ROWS {
        return Err(DiagnosticsError::TooFewSamples(series.len()));
    }
    let ev = evidence(series, true);
    let u = ev.linf_u.expect("nonempty series");
    let all_plateau = [ev.linf_u, ev.grad_v_lq, ev.linf_w]
        .iter()
        .flatten()
        .all(|c| c.plateau);
    let classification = if all_plateau {
        Classification::Bounded
    } else if u.last_half_max > GROWTH_FACTOR * u.first_half_max {
        Classification::Growing
    } else {
        Classification::Inconclusive
    };
    Ok(RunOutcome {
        classification,
        evidence: ev,
    })
}

/// Observable content of the n = 1 energy estimate: E(t) stays bounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub applicable: bool,
    pub sup_e: Option<f64>,
    pub plateau: Option<bool>,
    /// Least-squares fit `dE/dt ~ slope * (-E) + intercept` over the second
    /// half of the run.
    pub fit_slope: Option<f64>,
    pub fit_intercept: Option<f64>,
}

impl FunctionalReport {
    fn not_applicable() -> Self {
        Self {
            applicable: false,
            sup_e: None,
            plateau: None,
            fit_slope: None,
            fit_intercept: None,
        }
    }
}

pub fn check_functional_dissipation(series: &[DiagnosticsRow], alpha: f64, n: usize) -> FunctionalReport {
    if n != 1 || !(alpha > 1.0 && alpha < 2.0) {
        return FunctionalReport::not_applicable();
    }
    let e: Vec<(f64, f64)> = series
        .iter()
        .filter_map(|r| r.functional_e.map(|e| (r.t, e)))
        .collect();
    if e.is_empty() {
        return FunctionalReport::not_applicable();
    }
    let sup_e = e.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let plateau = plateau_of(series, |r| r.functional_e).map(|c| c.plateau);

    let mid = 0.5 * (e[0].0 + e[e.len() - 1].0);
    let pts: Vec<(f64, f64)> = e
        .windows(2)
        .filter(|w| w[0].0 >= mid && w[1].0 > w[0].0)
        .map(|w| {
            let x = -0.5 * (w[0].1 + w[1].1);
            let y = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            (x, y)
        })
        .collect();
    let (fit_slope, fit_intercept) = least_squares(&pts).unzip();
    FunctionalReport {
        applicable: true,
        sup_e: Some(sup_e),
        plateau,
        fit_slope,
        fit_intercept,
    }
}

fn least_squares(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * n {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

pub fn write_csv<W: io::Write>(rows: &[DiagnosticsRow], out: W) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(rows: &[DiagnosticsRow]) -> Result<String, DiagnosticsError> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<DiagnosticsRow>, DiagnosticsError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<_>, _>>()?)
}

pub fn blow_up_cause(outcome: &RunOutcome) -> Option<BlowUpCause> {
    match outcome.evidence.termination {
        Termination::BlowUpSuspected { cause, .. } => Some(cause),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Field, GridSpec};
    use crate::models::ConversionSpec;
    use std::f64::consts::PI;

    fn row(t: f64, linf_u: f64) -> DiagnosticsRow {
        DiagnosticsRow {
            t,
            dt: 0.1,
            mass_u: 1.0,
            mass_v: 1.0,
            mass_w: Some(1.0),
            linf_u,
            linf_w: Some(1.0),
            grad_v_lq: 1.0,
            functional_e: Some(1.0),
            mass_ode_residual: Some(0.0),
            grad_v_max: 1.0,
        }
    }

    fn interval_state(n: usize, u: impl Fn(f64) -> f64, v: impl Fn(f64) -> f64, w: f64) -> State {
        let g = build_grid(GridSpec::interval(1.0, n)).unwrap();
        State::new(
            0.0,
            Field::from_fn(g.clone(), |x, _| u(x)),
            Field::from_fn(g.clone(), |x, _| v(x)),
            Some(Field::constant(g, w)),
        )
        .unwrap()
    }

    #[test]
    fn zero_state_row() {
        let spec = ModelSpec::normalized(SystemKind::MayNowakChemotaxis, 0.0, ConversionSpec::identity());
        let s = interval_state(16, |_| 0.0, |_| 0.0, 0.0);
        let r0 = compute_row(&s, &spec, 2.0, 0.0, None).unwrap();
        let r1 = compute_row(&State { t: 0.5, ..s }, &spec, 2.0, 0.1, Some(&r0)).unwrap();
        for r in [&r0, &r1] {
            assert_eq!(r.mass_u + r.mass_v + r.linf_u + r.grad_v_lq, 0.0);
            assert_eq!(r.mass_ode_residual, Some(0.0));
            assert_eq!(r.functional_e, Some(0.0));
        }
    }

    #[test]
    fn functional_u_part() {
        let spec = ModelSpec::normalized(SystemKind::MayNowakChemotaxis, 0.0, ConversionSpec::power_law(1.5));
        let s = interval_state(32, |_| 1.0, |_| 0.0, 0.0);
        let r = compute_row(&s, &spec, 2.0, 0.0, None).unwrap();
        assert!((r.functional_e.unwrap() - 1.0 / 1.5).abs() < 1e-12);
        let spec = ModelSpec::normalized(SystemKind::MayNowakChemotaxis, 0.0, ConversionSpec::power_law(0.0));
        assert_eq!(compute_row(&s, &spec, 2.0, 0.0, None).unwrap().functional_e, None);
    }

    #[test]
    fn grad_monitor_on_cosine() {
        let spec = ModelSpec::normalized(SystemKind::MayNowakChemotaxis, 0.0, ConversionSpec::identity());
        let s = interval_state(128, |_| 1.0, |x| (PI * x).cos(), 0.0);
        let r = compute_row(&s, &spec, 2.0, 0.0, None).unwrap();
        let exact = PI / 2f64.sqrt();
        assert!((r.grad_v_lq - exact).abs() / exact < 0.02);
        assert!(matches!(
            compute_row(&s, &spec, 1.0, 0.0, None),
            Err(DiagnosticsError::InvalidExponent(_))
        ));
    }

    #[test]
    fn mass_residual_not_applicable_for_ks_or_unequal_decay() {
        let g = build_grid(GridSpec::interval(1.0, 8)).unwrap();
        let s = State::new(0.0, Field::constant(g.clone(), 1.0), Field::zeros(g), None).unwrap();
        let spec = ModelSpec::normalized(SystemKind::KsParabolicParabolic, 0.0, ConversionSpec::identity());
        assert_eq!(compute_row(&s, &spec, 2.0, 0.0, None).unwrap().mass_ode_residual, None);
        let mut spec = ModelSpec::normalized(SystemKind::MayNowakChemotaxis, 0.0, ConversionSpec::identity());
        spec.decay_v = 2.0;
        let s = interval_state(8, |_| 1.0, |_| 0.0, 0.0);
        assert_eq!(compute_row(&s, &spec, 2.0, 0.0, None).unwrap().mass_ode_residual, None);
    }

    #[test]
    fn constant_series_is_bounded() {
        let series: Vec<_> = (0..20).map(|k| row(k as f64, 3.0)).collect();
        let out = classify(&series, Termination::ReachedTEnd).unwrap();
        assert_eq!(out.classification, Classification::Bounded);
    }

    #[test]
    fn doubling_series_is_growing() {
        let series: Vec<_> = (0..20).map(|k| row(k as f64, 2f64.powi(k))).collect();
        let out = classify(&series, Termination::ReachedTEnd).unwrap();
        assert_eq!(out.classification, Classification::Growing);
    }

    #[test]
    fn mild_growth_is_inconclusive() {
        let series: Vec<_> = (0..20).map(|k| row(k as f64, 1.0 + 0.03 * k as f64)).collect();
        let out = classify(&series, Termination::ReachedTEnd).unwrap();
        assert_eq!(out.classification, Classification::Inconclusive);
    }

    #[test]
    fn blow_up_passes_through() {
        let series: Vec<_> = (0..3).map(|k| row(k as f64, 1.0)).collect();
        let term = Termination::BlowUpSuspected {
            t: 3.2,
            cause: BlowUpCause::Threshold,
        };
        let out = classify(&series, term).unwrap();
        assert_eq!(out.classification, Classification::BlowUp { t: 3.2 });
        assert_eq!(blow_up_cause(&out), Some(BlowUpCause::Threshold));
    }

    #[test]
    fn too_few_samples() {
        let series: Vec<_> = (0..5).map(|k| row(k as f64, 1.0)).collect();
        assert!(matches!(
            classify(&series, Termination::ReachedTEnd),
            Err(DiagnosticsError::TooFewSamples(5))
        ));
    }

    #[test]
    fn subsampling_keeps_classification() {
        let bounded: Vec<_> = (0..40).map(|k| row(k as f64 * 0.5, 2.0 - (-(k as f64)).exp())).collect();
        let growing: Vec<_> = (0..40).map(|k| row(k as f64 * 0.5, (0.2 * k as f64).exp())).collect();
        for series in [bounded, growing] {
            let full = classify(&series, Termination::ReachedTEnd).unwrap().classification;
            let sub: Vec<_> = series.iter().step_by(2).cloned().collect();
            let half = classify(&sub, Termination::ReachedTEnd).unwrap().classification;
            assert_eq!(full, half);
        }
    }

    #[test]
    fn functional_report_regimes() {
        let series: Vec<_> = (0..20).map(|k| row(k as f64, 1.0)).collect();
        let rep = check_functional_dissipation(&series, 1.5, 1);
        assert!(rep.applicable);
        assert_eq!(rep.plateau, Some(true));
        assert_eq!(rep.sup_e, Some(1.0));
        assert_eq!(rep.fit_slope, None);
        assert!(!check_functional_dissipation(&series, 1.5, 2).applicable);
        assert!(!check_functional_dissipation(&series, 0.5, 1).applicable);
    }

    #[test]
    fn functional_fit_recovers_relaxation() {
        // E' = -2 E + 3 has E = 1.5 + c e^{-2t}; sample densely.
        let series: Vec<_> = (0..400)
            .map(|k| {
                let t = k as f64 * 0.005;
                let mut r = row(t, 1.0);
                r.functional_e = Some(1.5 + 2.0 * (-2.0 * t).exp());
                r
            })
            .collect();
        let rep = check_functional_dissipation(&series, 1.5, 1);
        assert!((rep.fit_slope.unwrap() - 2.0).abs() < 1e-2);
        assert!((rep.fit_intercept.unwrap() - 3.0).abs() < 1e-2);
    }

    #[test]
    fn csv_layout_and_empty_cells() {
        let mut r = row(0.5, 2.0);
        r.mass_w = None;
        r.linf_w = None;
        r.functional_e = None;
        let s = to_csv_string(&[r.clone()]).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "0.5,0.1,1.0,1.0,,2.0,,1.0,,0.0");
        let back = read_csv(s.as_bytes()).unwrap();
        assert_eq!(back[0].t, r.t);
        assert_eq!(back[0].linf_w, None);
        assert_eq!(to_csv_string(&[]).unwrap().trim(), CSV_COLUMNS.join(","));
    }
}
