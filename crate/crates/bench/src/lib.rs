//! Shared fixtures for the operator benchmarks.

use std::f64::consts::PI;

use mnchemo::{build_grid, ConversionSpec, Field, GridSpec, ModelSpec, State, SystemKind};

/// Smooth positive state on `spec` for the normalized chemotaxis system.
pub fn smooth_state(spec: GridSpec) -> State {
    let grid = build_grid(spec).expect("valid benchmark grid");
    let bump = |x: f64, y: f64| 1.0 + 0.3 * (PI * x).cos() * (PI * y).cos();
    State::new(
        0.0,
        Field::from_fn(grid.clone(), bump),
        Field::from_fn(grid.clone(), |x, y| bump(y, x)),
        Some(Field::constant(grid, 1.0)),
    )
    .expect("fields share a grid")
}

pub fn normalized_model(alpha: f64) -> ModelSpec {
    ModelSpec::normalized(SystemKind::MayNowakChemotaxis, 1.0, ConversionSpec::prototype(alpha))
}
