//! Orchestrated studies built on the stepper and diagnostics: single runs,
//! parameter sweeps, bisection for the critical exponent, convergence
//! studies and the phase study of the homogeneous kinetics.

use std::f64::consts::PI;
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{
    classify, compute_row, default_q, mass_ode_exact, Classification, DiagnosticsError, DiagnosticsRow,
    RunOutcome,
};
use crate::grid::{build_grid, neumann_laplacian, Field, GridError, GridSpec};
use crate::initial::{sample_state, InitialData};
use crate::models::{homogeneous_equilibria, ConversionSpec, ModelError, ModelSpec, State, SystemKind};
use crate::stepper::{integrate, integrate_ode, Scheme, StepError, StepperConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("bracket endpoints alpha = {lo} and alpha = {hi} both classify as {label}")]
    BracketInvalid { lo: f64, hi: f64, label: &'static str },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Everything needed to reproduce one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub model: ModelSpec,
    pub grid: GridSpec,
    pub stepper: StepperConfig,
    pub sample_interval: f64,
    /// Monitor exponent; `None` means `n + 1`.
    pub q: Option<f64>,
    pub initial: InitialData,
    pub seed: u64,
}

impl RunSpec {
    pub fn monitor_exponent(&self) -> f64 {
        self.q.unwrap_or_else(|| default_q(self.grid.spatial_dim()))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.grid.validate()?;
        self.model.validate()?;
        self.stepper.validate()?;
        self.initial.validate().map_err(ExperimentError::InvalidSpec)?;
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return Err(ExperimentError::InvalidSpec(format!(
                "sample_interval must be positive, got {}",
                self.sample_interval
            )));
        }
        let q = self.monitor_exponent();
        if !(q > 1.0) {
            return Err(DiagnosticsError::InvalidExponent(q).into());
        }
        if self.model.system == SystemKind::MayNowakOde {
            return Err(ExperimentError::InvalidSpec(
                "homogeneous kinetics have no spatial run; use the phase study".into(),
            ));
        }
        Ok(())
    }
}

/// Step statistics kept alongside each run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub min_dt: f64,
    pub max_dt: f64,
    pub last_dt: f64,
    pub worst_scaled_min: f64,
}

impl StepStats {
    pub fn dt_collapse_ratio(&self) -> f64 {
        if self.max_dt > 0.0 {
            self.last_dt / self.max_dt
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub series: Vec<DiagnosticsRow>,
    pub outcome: RunOutcome,
    pub stats: StepStats,
    pub final_state: State,
}

pub fn run_single(spec: &RunSpec) -> Result<RunRecord, ExperimentError> {
    run_observed(spec, |_| {})
}

/// As `run_single`, also handing every sampled state to `on_sample`.
pub fn run_observed(spec: &RunSpec, mut on_sample: impl FnMut(&State)) -> Result<RunRecord, ExperimentError> {
    spec.validate()?;
    let grid = build_grid(spec.grid)?;
    let state0 = sample_state(&grid, spec.model.system, &spec.initial, spec.seed)?;
    let q = spec.monitor_exponent();
    let mut series: Vec<DiagnosticsRow> = Vec::new();
    let mut row_error = None;
    let report = integrate(state0, &spec.model, &spec.stepper, spec.sample_interval, |state, dt| {
        if row_error.is_some() {
            return;
        }
        if series.last().is_some_and(|r| r.t == state.t) {
            return;
        }
        match compute_row(state, &spec.model, q, dt, series.last()) {
            Ok(r) => {
                series.push(r);
                on_sample(state);
            }
            Err(e) => row_error = Some(e),
        }
    })?;
    if let Some(e) = row_error {
        return Err(e.into());
    }
    let outcome = classify(&series, report.termination)?;
    Ok(RunRecord {
        stats: StepStats {
            accepted_steps: report.accepted_steps,
            rejected_steps: report.rejected_steps,
            min_dt: report.min_dt,
            max_dt: report.max_dt,
            last_dt: report.last_dt,
            worst_scaled_min: report.worst_scaled_min,
        },
        series,
        outcome,
        final_state: report.final_state,
    })
}

/// How the conversion function follows the swept exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConversionFamily {
    /// Saturated for `alpha <= 1`, power law above.
    #[default]
    Prototype,
    Saturated,
    PowerLaw,
}

impl ConversionFamily {
    pub fn conversion(self, alpha: f64) -> ConversionSpec {
        match self {
            ConversionFamily::Prototype => ConversionSpec::prototype(alpha),
            ConversionFamily::Saturated => ConversionSpec::saturated(alpha),
            ConversionFamily::PowerLaw => ConversionSpec::power_law(alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: RunSpec,
    pub alpha_values: Vec<f64>,
    pub kappa_values: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub conversion: ConversionFamily,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.alpha_values.is_empty() || self.kappa_values.is_empty() || self.seeds.is_empty() {
            return Err(ExperimentError::InvalidSpec(
                "alpha_values, kappa_values and seeds must be nonempty".into(),
            ));
        }
        if self.workers == Some(0) {
            return Err(ExperimentError::InvalidSpec("workers must be at least 1".into()));
        }
        self.base.validate()
    }

    /// Run parameters for one tuple.
    pub fn run_spec(&self, alpha: f64, kappa: f64, seed: u64) -> RunSpec {
        let mut spec = self.base.clone();
        spec.model.conversion = ConversionSpec {
            k_f: self.base.model.conversion.k_f,
            ..self.conversion.conversion(alpha)
        };
        spec.model.kappa = kappa;
        spec.seed = seed;
        spec
    }

    /// Tuples in alpha-major, then kappa, then seed order.
    pub fn tuples(&self) -> Vec<(f64, f64, u64)> {
        let mut out = Vec::new();
        for &a in &self.alpha_values {
            for &k in &self.kappa_values {
                for &s in &self.seeds {
                    out.push((a, k, s));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub alpha: f64,
    pub kappa: f64,
    pub seed: u64,
    pub outcome: RunOutcome,
    /// `None` when the run failed before producing a record.
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalEstimate {
    pub estimate: f64,
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub empirical_critical_alpha: Option<CriticalEstimate>,
}

fn failed_outcome(error: &ExperimentError) -> RunOutcome {
    use crate::diagnostics::Evidence;
    use crate::stepper::Termination;
    let t = match error {
        ExperimentError::Step(StepError::NonFiniteState { t }) => *t,
        _ => f64::NAN,
    };
    RunOutcome {
        classification: Classification::Diverged { t },
        evidence: Evidence {
            peak_linf_u: f64::NAN,
            peak_grad_v_lq: f64::NAN,
            peak_linf_w: None,
            peak_grad_v_max: f64::NAN,
            linf_u: None,
            grad_v_lq: None,
            linf_w: None,
            termination: Termination::Diverged { t },
        },
    }
}

fn run_tuple(spec: &SweepSpec, (alpha, kappa, seed): (f64, f64, u64)) -> SweepRow {
    match run_single(&spec.run_spec(alpha, kappa, seed)) {
        Ok(record) => SweepRow {
            alpha,
            kappa,
            seed,
            outcome: record.outcome.clone(),
            record: Some(record),
            error: None,
        },
        Err(e) => SweepRow {
            alpha,
            kappa,
            seed,
            outcome: failed_outcome(&e),
            record: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every `(alpha, kappa, seed)` tuple. Failed runs are recorded as
/// `Diverged` and never abort the sweep. Row order is the tuple order
/// regardless of scheduling.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, ExperimentError> {
    spec.validate()?;
    let tuples = spec.tuples();
    let run_all = || -> Vec<SweepRow> { tuples.par_iter().map(|&t| run_tuple(spec, t)).collect() };
    let rows = match spec.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))?
            .install(run_all),
        None => run_all(),
    };
    let empirical_critical_alpha = empirical_bracket(&rows);
    Ok(SweepResult {
        rows,
        empirical_critical_alpha,
    })
}

/// Largest non-blow-up alpha below the smallest blow-up alpha, provided every
/// run at or above that smallest alpha blows up.
fn empirical_bracket(rows: &[SweepRow]) -> Option<CriticalEstimate> {
    let hi = rows
        .iter()
        .filter(|r| r.outcome.classification.is_blow_up())
        .map(|r| r.alpha)
        .reduce(f64::min)?;
    if rows
        .iter()
        .any(|r| r.alpha >= hi && !r.outcome.classification.is_blow_up())
    {
        return None;
    }
    let lo = rows
        .iter()
        .filter(|r| r.alpha < hi && matches!(r.outcome.classification, Classification::Bounded))
        .map(|r| r.alpha)
        .reduce(f64::max)?;
    Some(CriticalEstimate {
        estimate: 0.5 * (lo + hi),
        bracket: (lo, hi),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummaryRow {
    pub alpha: f64,
    pub kappa: f64,
    pub seed: u64,
    pub classification: &'static str,
    pub t_detect: Option<f64>,
    pub peak_linf_u: f64,
    pub peak_grad_v_lq: f64,
    pub peak_linf_w: Option<f64>,
}

impl SweepResult {
    pub fn summary(&self) -> Vec<SweepSummaryRow> {
        self.rows
            .iter()
            .map(|r| SweepSummaryRow {
                alpha: r.alpha,
                kappa: r.kappa,
                seed: r.seed,
                classification: r.outcome.classification.label(),
                t_detect: r.outcome.classification.detection_time().filter(|t| t.is_finite()),
                peak_linf_u: r.outcome.evidence.peak_linf_u,
                peak_grad_v_lq: r.outcome.evidence.peak_grad_v_lq,
                peak_linf_w: r.outcome.evidence.peak_linf_w,
            })
            .collect()
    }

    /// Writes `alpha, kappa, seed, classification, t_detect, peak_linf_u,
    /// peak_grad_v_lq, peak_linf_w`.
    pub fn write_summary_csv<W: io::Write>(&self, out: W) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.summary() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalSearch {
    pub estimate: f64,
    pub bracket: (f64, f64),
    /// Every evaluated exponent with its classification, in evaluation order.
    pub evaluations: Vec<(f64, Classification)>,
}

/// Bisection on the blow-up / no-blow-up boundary in alpha.
///
/// System, dimension and initial data all come from `base`; the conversion
/// function is `family.conversion(alpha)`.
pub fn estimate_critical_alpha(
    base: &RunSpec,
    family: ConversionFamily,
    bracket: (f64, f64),
    iterations: usize,
) -> Result<CriticalSearch, ExperimentError> {
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) {
        return Err(ExperimentError::InvalidSpec(format!(
            "bracket must satisfy lo < hi, got ({lo}, {hi})"
        )));
    }
    let classify_at = |alpha: f64| -> Result<Classification, ExperimentError> {
        let mut spec = base.clone();
        spec.model.conversion = ConversionSpec {
            k_f: base.model.conversion.k_f,
            ..family.conversion(alpha)
        };
        Ok(run_single(&spec)?.outcome.classification)
    };
    let c_lo = classify_at(lo)?;
    let c_hi = classify_at(hi)?;
    let mut evaluations = vec![(lo, c_lo), (hi, c_hi)];
    if c_lo.is_blow_up() == c_hi.is_blow_up() {
        return Err(ExperimentError::BracketInvalid {
            lo,
            hi,
            label: c_lo.label(),
        });
    }
    let lo_blows = c_lo.is_blow_up();
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        let c = classify_at(mid)?;
        evaluations.push((mid, c));
        if c.is_blow_up() == lo_blows {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CriticalSearch {
        estimate: 0.5 * (lo + hi),
        bracket: (lo, hi),
        evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceKind {
    /// Temporal order of the w-equation against its separable solution.
    WEquationExact,
    /// Spatial order of the same problem, with `dt` proportional to `h^2`.
    WEquationSpatial,
    /// Global error of the total-mass ODE under `dt` halving.
    MassOde,
    /// Discrete Laplacian on the Neumann eigenfunction `cos(pi x)`.
    LaplacianEigen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    /// Grid spacing or time step of the level.
    pub h: f64,
    pub error: f64,
    /// `log2(previous error / error)`; absent on the coarsest level.
    pub observed_order: Option<f64>,
}

/// `w(x, t) = e^{-(1 + pi^2) t} cos(pi x) + 1.5 e^{-t}` solves
/// `w_t = w_xx - w` on (0, 1) with Neumann conditions.
pub fn w_equation_exact(x: f64, t: f64) -> f64 {
    (-(1.0 + PI * PI) * t).exp() * (PI * x).cos() + 1.5 * (-t).exp()
}

fn w_equation_error(cells: usize, dt: f64, t_end: f64) -> Result<f64, ExperimentError> {
    let grid = build_grid(GridSpec::interval(1.0, cells))?;
    let spec = ModelSpec::normalized(SystemKind::MayNowakChemotaxis, 0.0, ConversionSpec::identity());
    let w0 = Field::from_fn(grid.clone(), |x, _| w_equation_exact(x, 0.0));
    let state = State::new(0.0, Field::zeros(grid.clone()), Field::zeros(grid.clone()), Some(w0))?;
    let cfg = StepperConfig::fixed(dt, t_end);
    let report = integrate(state, &spec, &cfg, t_end, |_, _| {})?;
    let w = report.final_state.w.expect("w is present");
    Ok(grid
        .centers()
        .iter()
        .zip(w.values())
        .map(|(c, v)| (v - w_equation_exact(c[0], t_end)).abs())
        .fold(0.0, f64::max))
}

/// Mass-identity fixture: normalized system on (0, 1), random bumps of mass
/// `MASS_FIXTURE_MASS` per component, constant step `dt`. Returns the largest deviation of
/// `z(t)` from the exact `z(0) e^{-t} + kappa (1 - e^{-t})` over the samples.
pub fn mass_identity_error(
    kappa: f64,
    cells: usize,
    dt: f64,
    t_end: f64,
    seed: u64,
) -> Result<MassIdentityCheck, ExperimentError> {
    let spec = RunSpec {
        model: ModelSpec::normalized(SystemKind::MayNowakChemotaxis, kappa, ConversionSpec::saturated(0.5)),
        grid: GridSpec::interval(1.0, cells),
        stepper: StepperConfig::fixed(dt, t_end),
        sample_interval: 0.1,
        q: None,
        initial: InitialData::RandomBump { mass: MASS_FIXTURE_MASS },
        seed,
    };
    let rec = run_single(&spec)?;
    let z0 = rec.series[0].mass_u + rec.series[0].mass_v;
    let kappa_vol = kappa * 1.0;
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut bound_excess = f64::NEG_INFINITY;
    for r in &rec.series {
        let z = r.mass_u + r.mass_v;
        let exact = mass_ode_exact(z0, r.t, 1.0, kappa_vol);
        max_abs = max_abs.max((z - exact).abs());
        max_rel = max_rel.max((z - exact).abs() / exact.abs().max(f64::MIN_POSITIVE));
        bound_excess = bound_excess.max(z - z0.max(kappa_vol));
    }
    Ok(MassIdentityCheck {
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        bound_excess,
        record: rec,
    })
}

/// Chosen so that `z(0) = 1.5` differs from `kappa |Omega|` for the usual
/// kappa values; otherwise the exact mass is constant and the error is pure
/// rounding.
pub const MASS_FIXTURE_MASS: f64 = 0.75;

#[derive(Debug, Clone)]
pub struct MassIdentityCheck {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// `max_t z(t) - max(z(0), kappa |Omega|)`.
    pub bound_excess: f64,
    pub record: RunRecord,
}

fn laplacian_eigen_error(cells: usize) -> Result<f64, ExperimentError> {
    let grid = build_grid(GridSpec::interval(1.0, cells))?;
    let f = Field::from_fn(grid.clone(), |x, _| (PI * x).cos());
    let lap = neumann_laplacian(&f);
    Ok(lap
        .values()
        .iter()
        .zip(f.values())
        .map(|(l, v)| (l + PI * PI * v).abs())
        .fold(0.0, f64::max))
}

pub fn convergence_study(kind: ConvergenceKind, levels: usize) -> Result<Vec<ConvergenceRow>, ExperimentError> {
    if levels < 3 {
        return Err(ExperimentError::InvalidSpec(format!(
            "convergence study needs at least 3 levels, got {levels}"
        )));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels);
    for k in 0..levels {
        let scale = 2f64.powi(k as i32);
        let (h, error) = match kind {
            ConvergenceKind::LaplacianEigen => {
                let cells = 32 << k;
                (1.0 / cells as f64, laplacian_eigen_error(cells)?)
            }
            ConvergenceKind::WEquationExact => {
                let dt = 0.02 / scale;
                (dt, w_equation_error(512, dt, 1.0)?)
            }
            ConvergenceKind::WEquationSpatial => {
                let cells = 16 << k;
                let h = 1.0 / cells as f64;
                (h, w_equation_error(cells, h * h / 100.0, 0.1)?)
            }
            ConvergenceKind::MassOde => {
                let dt = 1e-3 / scale;
                (dt, mass_identity_error(1.0, 128, dt, 10.0, 0)?.max_abs_error)
            }
        };
        let observed_order = rows.last().map(|p| (p.error / error).log2());
        rows.push(ConvergenceRow {
            h,
            error,
            observed_order,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseRow {
    pub kappa: f64,
    pub limit: [f64; 3],
    /// Equilibrium within `PHASE_MATCH_TOL` of the limit, if any.
    pub matched_equilibrium: Option<[f64; 3]>,
    /// False when no equilibrium was matched by `t_end`.
    pub converged: bool,
}

pub const PHASE_MATCH_TOL: f64 = 1e-4;
pub const PHASE_DT: f64 = 0.01;
pub const PHASE_PERTURBATION: f64 = 0.1;

/// Integrates the homogeneous kinetics from `(kappa/d1, 0.1, 0.1)` with RK4
/// and matches the state at `t_end` against the homogeneous equilibria.
pub fn ode_phase_study(
    kappa_values: &[f64],
    conversion: &ConversionSpec,
    t_end: f64,
) -> Result<Vec<PhaseRow>, ExperimentError> {
    kappa_values
        .iter()
        .map(|&kappa| {
            let spec = ModelSpec::normalized(SystemKind::MayNowakOde, kappa, conversion.clone());
            let cfg = StepperConfig {
                scheme: Scheme::ExplicitRk4,
                ..StepperConfig::fixed(PHASE_DT, t_end)
            };
            let y0 = [kappa / spec.decay_u, PHASE_PERTURBATION, PHASE_PERTURBATION];
            let limit = integrate_ode(y0, &spec, &cfg, |_, _| {})?;
            let matched_equilibrium = homogeneous_equilibria(&spec)?.into_iter().find(|e| {
                e.iter()
                    .zip(&limit)
                    .all(|(a, b)| (a - b).abs() <= PHASE_MATCH_TOL)
            });
            Ok(PhaseRow {
                kappa,
                limit,
                converged: matched_equilibrium.is_some(),
                matched_equilibrium,
            })
        })
        .collect()
}
