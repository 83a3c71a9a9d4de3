//! Time integration.
//!
//! The spatial systems use first-order IMEX Euler: diffusion and linear decay
//! are backward Euler, everything else (chemotactic transport, conversion,
//! replenishment, virus production) is forward Euler. The implicit operator
//! `vol (1 + decay) - coeff * K` has column sums `vol (1 + decay)`, so the
//! discrete total mass obeys the same linear recursion as the continuous
//! `z' = -z + kappa |Omega|` up to rounding.
//!
//! Positivity is enforced by rejecting and halving, never by clamping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{chemotactic_divergence, grad_max, Field};
use crate::linalg::{implicit_line, SolveError};
use crate::models::{elliptic_signal, rhs_ode, ModelError, ModelSpec, State, SystemKind};

/// Accepted states must satisfy `min >= -POSITIVITY_TOL * (1 + max|.|)`.
pub const POSITIVITY_TOL: f64 = 1e-12;
pub const DT_GROWTH: f64 = 1.2;
/// Relative slack under which a step is stretched to land on a sample time
/// instead of leaving a rounding-sized remainder.
const LANDING_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("time step fell below dt_min ({dt:.3e} < {dt_min:.3e}) at t = {t}")]
    StepTooSmall { t: f64, dt: f64, dt_min: f64 },
    #[error("non-finite value in state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("invalid stepper configuration: {0}")]
    InvalidConfig(String),
    #[error("scheme {scheme:?} cannot integrate {system:?}")]
    WrongScheme { scheme: Scheme, system: SystemKind },
    #[error("negative initial data (min {0:e})")]
    NegativeInitialData(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ImexEuler,
    /// Fixed-step classical Runge-Kutta, homogeneous kinetics only.
    ExplicitRk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepperConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub cfl_safety: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    /// Relative to `max(1, |u0|_inf)`.
    pub blowup_threshold: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            dt_init: 1e-3,
            dt_min: 1e-10,
            dt_max: 1e-2,
            cfl_safety: 0.5,
            t_end: 50.0,
            scheme: Scheme::ImexEuler,
            blowup_threshold: 1e6,
        }
    }
}

impl StepperConfig {
    /// Constant step `dt` (no growth, no CFL slack below it).
    pub fn fixed(dt: f64, t_end: f64) -> Self {
        Self {
            dt_init: dt,
            dt_min: dt * 1e-6,
            dt_max: dt,
            t_end,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), StepError> {
        let bad = |msg: String| Err(StepError::InvalidConfig(msg));
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return bad(format!(
                "need 0 < dt_min <= dt_init <= dt_max, got {} / {} / {}",
                self.dt_min, self.dt_init, self.dt_max
            ));
        }
        if !self.dt_max.is_finite() {
            return bad("dt_max must be finite".into());
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return bad(format!("cfl_safety must be in (0, 1], got {}", self.cfl_safety));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if !(self.blowup_threshold > 1.0) {
            return bad(format!("blowup_threshold must exceed 1, got {}", self.blowup_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: State,
    pub dt_used: f64,
    pub rejected_count: usize,
}

/// Solves `(I + decay - coeff Lap_h) x = f`.
///
/// One Thomas sweep in 1D and on the disk. On rectangles the operator is
/// split as `(I + decay - coeff Lap_x)(I - coeff Lap_y)`, one tridiagonal
/// sweep per row and then per column.
pub fn solve_implicit_diffusion(f: &Field, coeff: f64, decay: f64) -> Result<Field, StepError> {
    if !(coeff >= 0.0 && decay >= 0.0) {
        return Err(StepError::InvalidConfig(format!(
            "implicit diffusion needs coeff, decay >= 0 (got {coeff}, {decay})"
        )));
    }
    let grid = f.grid().clone();
    if !grid.is_two_dimensional_lattice() {
        let trans: Vec<f64> = grid.faces().iter().map(|fc| fc.transmissibility()).collect();
        let x = implicit_line(grid.cell_volumes(), &trans, coeff, decay, f.values())?;
        return Ok(Field::new(grid, x).map_err(ModelError::from)?);
    }
    let (nx, ny) = grid.shape();
    let vol = grid.cell_volumes()[0];
    let tx = grid.x_faces()[0].transmissibility();
    let ty = grid.y_faces()[0].transmissibility();
    let row_vols = vec![vol; nx];
    let row_trans = vec![tx; nx - 1];
    let mut half = vec![0.0; nx * ny];
    for j in 0..ny {
        let row = &f.values()[j * nx..(j + 1) * nx];
        let x = implicit_line(&row_vols, &row_trans, coeff, decay, row)?;
        half[j * nx..(j + 1) * nx].copy_from_slice(&x);
    }
    let col_vols = vec![vol; ny];
    let col_trans = vec![ty; ny - 1];
    let mut out = vec![0.0; nx * ny];
    let mut col = vec![0.0; ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = half[j * nx + i];
        }
        let x = implicit_line(&col_vols, &col_trans, coeff, 0.0, &col)?;
        for j in 0..ny {
            out[j * nx + i] = x[j];
        }
    }
    Ok(Field::new(grid, out).map_err(ModelError::from)?)
}

/// Largest `dt` allowed by the transport CFL condition.
pub fn cfl_limit(state: &State, spec: &ModelSpec, cfg: &StepperConfig) -> f64 {
    let speed = spec.chi * grad_max(&state.v);
    if speed > 0.0 {
        cfg.cfl_safety * state.grid().min_spacing() / speed
    } else {
        f64::INFINITY
    }
}

fn imex_update(state: &State, spec: &ModelSpec, dt: f64) -> Result<State, StepError> {
    let (u, v) = (&state.u, &state.v);
    let t = state.t + dt;
    match spec.system {
        SystemKind::MayNowakChemotaxis => {
            let w = state.w.as_ref().ok_or(ModelError::MissingW)?;
            let taxis = chemotactic_divergence(u, v);
            let n = u.len();
            let (mut ru, mut rv, mut rw) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for i in 0..n {
                let (ui, vi, wi) = (u.values()[i], v.values()[i], w.values()[i]);
                let c = spec.conversion.eval_extended(ui) * wi;
                ru[i] = ui + dt * (spec.chi * taxis.values()[i] - c + spec.kappa);
                rv[i] = vi + dt * c;
                rw[i] = wi + dt * spec.production * vi;
            }
            let g = u.grid().clone();
            let field = |vals| Field::new(g.clone(), vals).map_err(ModelError::from);
            let u1 = solve_implicit_diffusion(&field(ru)?, spec.diff_u * dt, spec.decay_u * dt)?;
            let v1 = solve_implicit_diffusion(&field(rv)?, spec.diff_v * dt, spec.decay_v * dt)?;
            let w1 = solve_implicit_diffusion(&field(rw)?, spec.diff_w * dt, spec.decay_w * dt)?;
            Ok(State::new(t, u1, v1, Some(w1))?)
        }
        SystemKind::KsParabolicParabolic => {
            let taxis = chemotactic_divergence(u, v);
            let ru = u.zip_map(&taxis, |a, b| a + dt * spec.chi * b);
            let fu = spec.conversion.apply(u);
            let rv = v.zip_map(&fu, |a, b| a + dt * b);
            let u1 = solve_implicit_diffusion(&ru, spec.diff_u * dt, 0.0)?;
            let v1 = solve_implicit_diffusion(&rv, spec.diff_v * dt, spec.decay_v * dt)?;
            Ok(State::new(t, u1, v1, None)?)
        }
        SystemKind::KsParabolicElliptic => {
            let taxis = chemotactic_divergence(u, v);
            let ru = u.zip_map(&taxis, |a, b| a + dt * spec.chi * b);
            let u1 = solve_implicit_diffusion(&ru, spec.diff_u * dt, 0.0)?;
            if !u1.all_finite() {
                return Err(StepError::NonFiniteState { t });
            }
            let v1 = elliptic_signal(&u1, spec)?;
            Ok(State::new(t, u1, v1, None)?)
        }
        SystemKind::MayNowakOde => Err(StepError::WrongScheme {
            scheme: Scheme::ImexEuler,
            system: spec.system,
        }),
    }
}

/// Fields subject to the positivity policy: everything except the
/// zero-mean signal of the parabolic-elliptic system.
fn constrained_fields<'a>(state: &'a State, spec: &ModelSpec) -> Vec<&'a Field> {
    let mut out = vec![&state.u];
    if spec.system != SystemKind::KsParabolicElliptic {
        out.push(&state.v);
    }
    if let Some(w) = &state.w {
        out.push(w);
    }
    out
}

/// `min / (1 + max|.|)` over the constrained fields; accepted states keep
/// this above `-POSITIVITY_TOL`.
pub fn scaled_min_component(state: &State, spec: &ModelSpec) -> f64 {
    let fields = constrained_fields(state, spec);
    let norm = fields.iter().fold(0.0f64, |m, f| m.max(f.max_abs()));
    let min = fields.iter().fold(f64::INFINITY, |m, f| m.min(f.min()));
    min / (1.0 + norm)
}

/// For the parabolic-elliptic system, recomputes `v` from `u`.
pub fn prepare_state(state: State, spec: &ModelSpec) -> Result<State, StepError> {
    if spec.system == SystemKind::KsParabolicElliptic {
        let v = elliptic_signal(&state.u, spec)?;
        return Ok(State { v, ..state });
    }
    Ok(state)
}

/// One IMEX Euler step.
///
/// The trial step is `min(dt_request, dt_max, CFL limit)`; callers implement
/// the growth policy by passing `1.2 * previous dt`.
pub fn step_imex(
    state: &State,
    spec: &ModelSpec,
    cfg: &StepperConfig,
    dt_request: f64,
) -> Result<StepResult, StepError> {
    advance(state, spec, cfg, dt_request, cfg.dt_min)
}

fn advance(
    state: &State,
    spec: &ModelSpec,
    cfg: &StepperConfig,
    dt_request: f64,
    dt_floor: f64,
) -> Result<StepResult, StepError> {
    let cap = cfg.dt_max.min(cfl_limit(state, spec, cfg));
    let mut dt = if dt_request <= cap * (1.0 + LANDING_SLACK) {
        dt_request
    } else {
        cap
    };
    let mut rejected_count = 0;
    loop {
        if dt < dt_floor || dt.is_nan() {
            return Err(StepError::StepTooSmall {
                t: state.t,
                dt,
                dt_min: cfg.dt_min,
            });
        }
        let next = imex_update(state, spec, dt)?;
        if !next.all_finite() {
            return Err(StepError::NonFiniteState { t: next.t });
        }
        if scaled_min_component(&next, spec) >= -POSITIVITY_TOL {
            return Ok(StepResult {
                state: next,
                dt_used: dt,
                rejected_count,
            });
        }
        rejected_count += 1;
        dt *= 0.5;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowUpCause {
    /// `|u|_inf` exceeded the configured threshold.
    Threshold,
    /// The admissible step collapsed below `dt_min`.
    StepCollapse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    ReachedTEnd,
    BlowUpSuspected { t: f64, cause: BlowUpCause },
    Diverged { t: f64 },
}

#[derive(Debug, Clone)]
pub struct IntegrationReport {
    pub final_state: State,
    pub termination: Termination,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub min_dt: f64,
    pub max_dt: f64,
    /// Last accepted step not shortened to land on a sample time.
    pub last_dt: f64,
    /// Minimum of [`scaled_min_component`] over every accepted state.
    pub worst_scaled_min: f64,
    pub peak_linf_u: f64,
}

impl IntegrationReport {
    /// `last_dt / max_dt`; small values mean the step size collapsed.
    pub fn dt_collapse_ratio(&self) -> f64 {
        if self.max_dt > 0.0 {
            self.last_dt / self.max_dt
        } else {
            1.0
        }
    }
}

/// Integrates until `t_end` or until blow-up/divergence is detected.
///
/// `observer(state, dt)` is called at `t = 0`, at every multiple of
/// `sample_interval`, at `t_end`, and at the detection time of an early
/// termination. Steps are shortened to land exactly on sample times.
pub fn integrate(
    state0: State,
    spec: &ModelSpec,
    cfg: &StepperConfig,
    sample_interval: f64,
    mut observer: impl FnMut(&State, f64),
) -> Result<IntegrationReport, StepError> {
    cfg.validate()?;
    spec.validate()?;
    if spec.system == SystemKind::MayNowakOde || cfg.scheme != Scheme::ImexEuler {
        return Err(StepError::WrongScheme {
            scheme: cfg.scheme,
            system: spec.system,
        });
    }
    if !(sample_interval > 0.0) {
        return Err(StepError::InvalidConfig(format!(
            "sample interval must be positive, got {sample_interval}"
        )));
    }
    let mut state = prepare_state(state0, spec)?;
    let initial_min = scaled_min_component(&state, spec);
    if initial_min < -POSITIVITY_TOL {
        return Err(StepError::NegativeInitialData(initial_min));
    }
    let u_cap = cfg.blowup_threshold * state.u.max_abs().max(1.0);

    let mut report = IntegrationReport {
        final_state: state.clone(),
        termination: Termination::ReachedTEnd,
        accepted_steps: 0,
        rejected_steps: 0,
        min_dt: f64::INFINITY,
        max_dt: 0.0,
        last_dt: 0.0,
        worst_scaled_min: initial_min,
        peak_linf_u: state.u.max_abs(),
    };
    observer(&state, 0.0);

    let mut dt_trial = cfg.dt_init;
    let mut sample_index = 1usize;
    let mut last_dt = 0.0;
    let mut last_landing_dt = 0.0;
    loop {
        let next_sample = (sample_index as f64 * sample_interval).min(cfg.t_end);
        let remaining = next_sample - state.t;
        let clipped = remaining <= dt_trial * (1.0 + LANDING_SLACK);
        let request = if clipped { remaining } else { dt_trial };
        let floor = if clipped { cfg.dt_min.min(remaining) } else { cfg.dt_min };

        let step = match advance(&state, spec, cfg, request, floor) {
            Ok(s) => s,
            Err(StepError::StepTooSmall { t, .. }) => {
                report.termination = Termination::BlowUpSuspected {
                    t,
                    cause: BlowUpCause::StepCollapse,
                };
                observer(&state, last_dt);
                break;
            }
            Err(StepError::NonFiniteState { t }) => {
                report.termination = Termination::Diverged { t };
                observer(&state, last_dt);
                break;
            }
            Err(e) => return Err(e),
        };

        report.rejected_steps += step.rejected_count;
        report.accepted_steps += 1;
        let dt = step.dt_used;
        // Steps shortened only to hit a sample time do not count towards
        // the step-size statistics or the growth policy.
        let landed = clipped && dt == request;
        if !landed || dt >= dt_trial {
            report.min_dt = report.min_dt.min(dt);
            report.max_dt = report.max_dt.max(dt);
            report.last_dt = dt;
            last_dt = dt;
            dt_trial = (dt * DT_GROWTH).min(cfg.dt_max);
        }
        state = step.state;
        if landed {
            state.t = next_sample;
            last_landing_dt = dt;
        }
        report.worst_scaled_min = report.worst_scaled_min.min(scaled_min_component(&state, spec));
        let linf_u = state.u.max_abs();
        report.peak_linf_u = report.peak_linf_u.max(linf_u);

        if linf_u > u_cap {
            report.termination = Termination::BlowUpSuspected {
                t: state.t,
                cause: BlowUpCause::Threshold,
            };
            observer(&state, last_dt.max(dt));
            break;
        }
        if landed {
            observer(&state, last_dt.max(dt));
            sample_index += 1;
            if next_sample >= cfg.t_end {
                break;
            }
        }
    }
    if report.min_dt == f64::INFINITY {
        // Every step was a landing step.
        report.min_dt = last_landing_dt;
        report.max_dt = last_landing_dt;
        report.last_dt = last_landing_dt;
    }
    report.final_state = state;
    Ok(report)
}

pub fn rk4_step(y: [f64; 3], dt: f64, spec: &ModelSpec) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    let k1 = rhs_ode(y, spec);
    let k2 = rhs_ode(add(y, k1, 0.5 * dt), spec);
    let k3 = rhs_ode(add(y, k2, 0.5 * dt), spec);
    let k4 = rhs_ode(add(y, k3, dt), spec);
    let mut out = y;
    for i in 0..3 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Fixed-step RK4 for the homogeneous kinetics with step `cfg.dt_init`.
pub fn integrate_ode(
    y0: [f64; 3],
    spec: &ModelSpec,
    cfg: &StepperConfig,
    mut observer: impl FnMut(f64, [f64; 3]),
) -> Result<[f64; 3], StepError> {
    cfg.validate()?;
    spec.validate()?;
    if cfg.scheme != Scheme::ExplicitRk4 {
        return Err(StepError::WrongScheme {
            scheme: cfg.scheme,
            system: spec.system,
        });
    }
    let steps = (cfg.t_end / cfg.dt_init).ceil() as usize;
    let dt = cfg.t_end / steps as f64;
    let mut y = y0;
    observer(0.0, y);
    for k in 1..=steps {
        y = rk4_step(y, dt, spec);
        if y.iter().any(|x| !x.is_finite()) {
            return Err(StepError::NonFiniteState { t: k as f64 * dt });
        }
        observer(k as f64 * dt, y);
    }
    Ok(y)
}
