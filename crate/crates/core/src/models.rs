//! Right-hand sides of the chemotaxis May-Nowak system, its ODE kinetics and
//! the two Keller-Segel comparison systems, together with the catalog of
//! conversion functions `f`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{chemotactic_divergence, neumann_laplacian, Field, Grid, GridError};
use crate::linalg::{neumann_poisson_line, projected_cg, SolveError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("conversion function evaluated at negative argument {0}")]
    NegativeArgument(f64),
    #[error("invalid conversion function: {0}")]
    InvalidConversion(String),
    #[error("invalid model parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("{0} is not defined for this system")]
    NotApplicable(&'static str),
    #[error("state fields live on different grids")]
    GridMismatch,
    #[error("state is missing the w component")]
    MissingW,
    #[error("Poisson solve failed: {0}")]
    Poisson(#[from] SolveError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversionKind {
    /// `s / (1 + s^(1 - alpha))`
    Saturated,
    /// `s^alpha`
    PowerLaw,
    /// `s`
    Identity,
    /// Linear interpolation of a table starting at `(0, 0)`.
    Custom,
}

/// Conversion function `f` with its declared growth exponent `alpha` and
/// constant `k_f` in `f(s) <= k_f s^alpha` for `s >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversionSpec {
    pub kind: ConversionKind,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub k_f: f64,
    /// `(s, f(s))` knots, only for `Custom`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub table: Vec<[f64; 2]>,
}

fn one() -> f64 {
    1.0
}

impl ConversionSpec {
    pub fn saturated(alpha: f64) -> Self {
        Self {
            kind: ConversionKind::Saturated,
            alpha,
            k_f: 1.0,
            table: Vec::new(),
        }
    }

    pub fn power_law(alpha: f64) -> Self {
        Self {
            kind: ConversionKind::PowerLaw,
            alpha,
            k_f: 1.0,
            table: Vec::new(),
        }
    }

    pub fn identity() -> Self {
        Self {
            kind: ConversionKind::Identity,
            alpha: 1.0,
            k_f: 1.0,
            table: Vec::new(),
        }
    }

    pub fn custom(table: Vec<[f64; 2]>, alpha: f64, k_f: f64) -> Result<Self, ModelError> {
        let spec = Self {
            kind: ConversionKind::Custom,
            alpha,
            k_f,
            table,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Saturated prototype for `alpha <= 1`, power law above.
    pub fn prototype(alpha: f64) -> Self {
        if alpha <= 1.0 {
            Self::saturated(alpha)
        } else {
            Self::power_law(alpha)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.alpha.is_finite() {
            return Err(ModelError::InvalidConversion(format!("alpha = {}", self.alpha)));
        }
        if !(self.k_f > 0.0 && self.k_f.is_finite()) {
            return Err(ModelError::InvalidConversion(format!(
                "k_f must be positive, got {}",
                self.k_f
            )));
        }
        if self.kind == ConversionKind::Custom {
            let t = &self.table;
            if t.len() < 2 {
                return Err(ModelError::InvalidConversion(
                    "custom table needs at least two knots".into(),
                ));
            }
            if t[0] != [0.0, 0.0] {
                return Err(ModelError::InvalidConversion(
                    "custom table must start at (0, 0)".into(),
                ));
            }
            if t.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                return Err(ModelError::InvalidConversion(
                    "custom table abscissae must be strictly increasing".into(),
                ));
            }
            if t.iter().any(|k| !(k[1] >= 0.0) || !k[1].is_finite()) {
                return Err(ModelError::InvalidConversion(
                    "custom table values must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(())
    }

    /// Value at `s >= 0`; nonnegative arguments only.
    pub fn eval(&self, s: f64) -> Result<f64, ModelError> {
        if s < 0.0 || s.is_nan() {
            return Err(ModelError::NegativeArgument(s));
        }
        Ok(self.eval_unchecked(s))
    }

    /// Extension to the whole real line by `f(s) = 0` for `s <= 0`.
    ///
    /// Grid-level right-hand sides use this so that round-off sized negative
    /// values tolerated by the stepper do not abort a run.
    #[inline]
    pub fn eval_extended(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            self.eval_unchecked(s)
        }
    }

    fn eval_unchecked(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        match self.kind {
            ConversionKind::Saturated => s / (1.0 + s.powf(1.0 - self.alpha)),
            ConversionKind::PowerLaw => s.powf(self.alpha),
            ConversionKind::Identity => s,
            ConversionKind::Custom => interpolate(&self.table, s),
        }
    }

    pub fn apply(&self, u: &Field) -> Field {
        u.map(|s| self.eval_extended(s))
    }
}

fn interpolate(table: &[[f64; 2]], s: f64) -> f64 {
    let last = table[table.len() - 1];
    if s >= last[0] {
        return last[1];
    }
    let k = table.partition_point(|p| p[0] <= s);
    let (a, b) = (table[k - 1], table[k]);
    a[1] + (b[1] - a[1]) * (s - a[0]) / (b[0] - a[0])
}

/// Free function form of [`ConversionSpec::eval`].
pub fn eval_f(spec: &ConversionSpec, s: f64) -> Result<f64, ModelError> {
    spec.eval(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// u, v, w with chemotaxis and conversion `f(u) w`.
    MayNowakChemotaxis,
    /// Spatially homogeneous kinetics.
    MayNowakOde,
    /// `u_t = D1 Lap u - chi div(u grad v)`, `v_t = D2 Lap v - d2 v + f(u)`.
    KsParabolicParabolic,
    /// `u_t = D1 Lap u - chi div(u grad v)`, `0 = Lap v - mean f(u) + f(u)`.
    KsParabolicElliptic,
}

impl SystemKind {
    pub fn has_w(self) -> bool {
        matches!(self, SystemKind::MayNowakChemotaxis | SystemKind::MayNowakOde)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub system: SystemKind,
    #[serde(default = "one")]
    pub diff_u: f64,
    #[serde(default = "one")]
    pub diff_v: f64,
    #[serde(default = "one")]
    pub diff_w: f64,
    #[serde(default = "one")]
    pub chi: f64,
    #[serde(default = "one")]
    pub decay_u: f64,
    #[serde(default = "one")]
    pub decay_v: f64,
    #[serde(default = "one")]
    pub decay_w: f64,
    #[serde(default = "one")]
    pub production: f64,
    #[serde(default)]
    pub kappa: f64,
    pub conversion: ConversionSpec,
}

impl ModelSpec {
    /// All rates equal to one, as in the unparametrized system.
    pub fn normalized(system: SystemKind, kappa: f64, conversion: ConversionSpec) -> Self {
        Self {
            system,
            diff_u: 1.0,
            diff_v: 1.0,
            diff_w: 1.0,
            chi: 1.0,
            decay_u: 1.0,
            decay_v: 1.0,
            decay_w: 1.0,
            production: 1.0,
            kappa,
            conversion,
        }
    }

    pub fn is_normalized(&self) -> bool {
        [
            self.diff_u,
            self.diff_v,
            self.diff_w,
            self.chi,
            self.decay_u,
            self.decay_v,
            self.decay_w,
            self.production,
        ]
        .iter()
        .all(|&p| p == 1.0)
    }

    pub fn alpha(&self) -> f64 {
        self.conversion.alpha
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("diff_u", self.diff_u),
            ("diff_v", self.diff_v),
            ("diff_w", self.diff_w),
            ("chi", self.chi),
            ("decay_u", self.decay_u),
            ("decay_v", self.decay_v),
            ("decay_w", self.decay_w),
            ("production", self.production),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite and > 0",
                });
            }
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(ModelError::InvalidParameter {
                name: "kappa",
                value: self.kappa,
                reason: "must be finite and >= 0",
            });
        }
        self.conversion.validate()
    }
}

/// Snapshot of a spatial system. `w` is present only for the May-Nowak
/// chemotaxis system; for the parabolic-elliptic system `v` is slaved to `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: Field,
    pub v: Field,
    pub w: Option<Field>,
}

impl State {
    pub fn new(t: f64, u: Field, v: Field, w: Option<Field>) -> Result<Self, ModelError> {
        let consistent = u.same_grid(&v) && w.as_ref().is_none_or(|w| u.same_grid(w));
        if !consistent {
            return Err(ModelError::GridMismatch);
        }
        Ok(Self { t, u, v, w })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.u.grid()
    }

    pub fn fields(&self) -> impl Iterator<Item = &Field> {
        [Some(&self.u), Some(&self.v), self.w.as_ref()].into_iter().flatten()
    }

    pub fn all_finite(&self) -> bool {
        self.fields().all(Field::all_finite)
    }
}

/// Time derivatives of the state components.
#[derive(Debug, Clone, PartialEq)]
pub struct Rhs {
    pub du: Field,
    pub dv: Field,
    pub dw: Option<Field>,
}

/// Full right-hand side of the chemotaxis May-Nowak system.
pub fn rhs_may_nowak_chemotaxis(state: &State, spec: &ModelSpec) -> Result<Rhs, ModelError> {
    let w = state.w.as_ref().ok_or(ModelError::MissingW)?;
    let (u, v) = (&state.u, &state.v);
    let lap_u = neumann_laplacian(u);
    let lap_v = neumann_laplacian(v);
    let lap_w = neumann_laplacian(w);
    let taxis = chemotactic_divergence(u, v);
    let conv = spec.conversion.apply(u).zip_map(w, |f, w| f * w);

    let n = u.len();
    let (uu, vv, ww) = (u.values(), v.values(), w.values());
    let mut du = Vec::with_capacity(n);
    let mut dv = Vec::with_capacity(n);
    let mut dw = Vec::with_capacity(n);
    for i in 0..n {
        let c = conv.values()[i];
        du.push(
            spec.diff_u * lap_u.values()[i] + spec.chi * taxis.values()[i] - spec.decay_u * uu[i]
                - c
                + spec.kappa,
        );
        dv.push(spec.diff_v * lap_v.values()[i] - spec.decay_v * vv[i] + c);
        dw.push(spec.diff_w * lap_w.values()[i] - spec.decay_w * ww[i] + spec.production * vv[i]);
    }
    let grid = u.grid().clone();
    Ok(Rhs {
        du: Field::new(grid.clone(), du)?,
        dv: Field::new(grid.clone(), dv)?,
        dw: Some(Field::new(grid, dw)?),
    })
}

/// Reaction part only: `(-d1 u - f(u) w + kappa, -d2 v + f(u) w)`; their sum
/// is `-d1 u - d2 v + kappa` cell by cell.
pub fn reaction_uv(u: f64, v: f64, w: f64, spec: &ModelSpec) -> (f64, f64) {
    let c = spec.conversion.eval_extended(u) * w;
    (-spec.decay_u * u - c + spec.kappa, -spec.decay_v * v + c)
}

/// Unparametrized kinetics `(-u - uw + kappa, -v + uw, -w + v)`.
pub fn rhs_may_nowak_ode(state: [f64; 3], kappa: f64) -> [f64; 3] {
    let [u, v, w] = state;
    [-u - u * w + kappa, -v + u * w, -w + v]
}

/// Homogeneous kinetics with the model's rates and conversion function.
pub fn rhs_ode(state: [f64; 3], spec: &ModelSpec) -> [f64; 3] {
    let [u, v, w] = state;
    let c = spec.conversion.eval_extended(u) * w;
    [
        -spec.decay_u * u - c + spec.kappa,
        -spec.decay_v * v + c,
        -spec.decay_w * w + spec.production * v,
    ]
}

pub fn rhs_ks_parabolic_parabolic(state: &State, spec: &ModelSpec) -> Result<Rhs, ModelError> {
    let (u, v) = (&state.u, &state.v);
    let lap_u = neumann_laplacian(u);
    let taxis = chemotactic_divergence(u, v);
    let du = lap_u.zip_map(&taxis, |l, t| spec.diff_u * l + spec.chi * t);
    let fu = spec.conversion.apply(u);
    let lap_v = neumann_laplacian(v);
    let dv_vals = (0..v.len())
        .map(|i| spec.diff_v * lap_v.values()[i] - spec.decay_v * v.values()[i] + fu.values()[i])
        .collect();
    Ok(Rhs {
        du,
        dv: Field::new(v.grid().clone(), dv_vals)?,
        dw: None,
    })
}

/// Solves `Lap_h v = rhs` with homogeneous Neumann conditions and zero
/// weighted mean. The weighted mean of `rhs` is removed first.
pub fn solve_neumann_poisson(rhs: &Field) -> Result<Field, ModelError> {
    let grid = rhs.grid().clone();
    let mean = rhs.mean();
    let vols = grid.cell_volumes();
    let b: Vec<f64> = rhs
        .values()
        .iter()
        .zip(vols)
        .map(|(r, vol)| (r - mean) * vol)
        .collect();
    let mut x = if grid.is_two_dimensional_lattice() {
        let faces = grid.faces();
        let apply = |x: &[f64], y: &mut [f64]| {
            y.iter_mut().for_each(|v| *v = 0.0);
            for f in faces {
                let flux = f.transmissibility() * (x[f.hi] - x[f.lo]);
                y[f.lo] -= flux;
                y[f.hi] += flux;
            }
        };
        // Cells are uniform on rectangles, so the zero-sum projection in CG is
        // the zero-mean projection.
        let neg_b: Vec<f64> = b.iter().map(|v| -v).collect();
        projected_cg(apply, &neg_b, POISSON_REL_TOL, 20 * grid.len() + 100)?
    } else {
        let trans: Vec<f64> = grid.faces().iter().map(|f| f.transmissibility()).collect();
        neumann_poisson_line(&trans, &b)?
    };
    let offset = x.iter().zip(vols).map(|(v, vol)| v * vol).sum::<f64>() / grid.total_volume();
    x.iter_mut().for_each(|v| *v -= offset);
    Ok(Field::new(grid, x)?)
}

const POISSON_REL_TOL: f64 = 1e-12;

/// Signal of the parabolic-elliptic system: `Lap v = mean f(u) - f(u)`.
pub fn elliptic_signal(u: &Field, spec: &ModelSpec) -> Result<Field, ModelError> {
    let fu = spec.conversion.apply(u);
    let mean = fu.mean();
    solve_neumann_poisson(&fu.map(|f| mean - f))
}

/// Returns `(du, v)` for the parabolic-elliptic system.
pub fn rhs_ks_parabolic_elliptic(u: &Field, spec: &ModelSpec) -> Result<(Field, Field), ModelError> {
    let v = elliptic_signal(u, spec)?;
    let lap_u = neumann_laplacian(u);
    let taxis = chemotactic_divergence(u, &v);
    let du = lap_u.zip_map(&taxis, |l, t| spec.diff_u * l + spec.chi * t);
    Ok((du, v))
}

const EQUILIBRIUM_BRACKET_LO: f64 = 1e-12;

/// Spatially homogeneous steady states `(u*, v*, w*)` of the May-Nowak kinetics.
///
/// The infection-free state `(kappa/d1, 0, 0)` always comes first. Infected
/// states need `f(u*) = d2 d3 / r` with `v* = (kappa - d1 u*)/d2 > 0`; the
/// root is located by bisection on `(1e-12, kappa/d1)`, assuming `f` is
/// monotone there.
pub fn homogeneous_equilibria(spec: &ModelSpec) -> Result<Vec<[f64; 3]>, ModelError> {
    if !spec.system.has_w() {
        return Err(ModelError::NotApplicable("homogeneous May-Nowak equilibria"));
    }
    spec.validate()?;
    let u_free = spec.kappa / spec.decay_u;
    let mut out = vec![[u_free, 0.0, 0.0]];

    let target = spec.decay_v * spec.decay_w / spec.production;
    let g = |u: f64| spec.conversion.eval_extended(u) - target;
    let (mut lo, mut hi) = (EQUILIBRIUM_BRACKET_LO, u_free);
    if hi <= lo {
        return Ok(out);
    }
    let (g_lo, g_hi) = (g(lo), g(hi));
    if g_lo == 0.0 || g_hi == 0.0 || g_lo.signum() == g_hi.signum() {
        // A root exactly at u_free coincides with the infection-free state.
        if g_lo == 0.0 {
            push_infected(&mut out, lo, spec);
        }
        return Ok(out);
    }
    let lo_sign = g_lo.signum();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid).signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Pick the endpoint with the smaller residual.
    let root = if g(lo).abs() <= g(hi).abs() { lo } else { hi };
    push_infected(&mut out, root, spec);
    Ok(out)
}

fn push_infected(out: &mut Vec<[f64; 3]>, u: f64, spec: &ModelSpec) {
    let v = (spec.kappa - spec.decay_u * u) / spec.decay_v;
    if v > 0.0 {
        out.push([u, v, spec.production / spec.decay_w * v]);
    }
}
