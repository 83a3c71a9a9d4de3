//! Seeded initial data.
//!
//! Random draws come from PCG64 (`Lcg128Xsl64`: 128-bit LCG state, XSL-RR
//! output) constructed as `Pcg64::new(seed as u128, PCG_STREAM)`. Each
//! uniform sample on `[0, 1)` is `(next_u64() >> 11) * 2^-53`. Coefficients
//! are drawn in a fixed order (all of u, then v, then w), so the same seed
//! gives the same fields on every platform.

use std::f64::consts::PI;
use std::sync::Arc;

use rand_core::Rng;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::grid::{Field, Geometry, Grid};
use crate::models::{ModelError, State, SystemKind};

/// Increment used for every stream (the reference PCG64 default).
pub const PCG_STREAM: u128 = 0x0a02_bdbf_7bb3_c0a7_ac28_fa16_a64a_bf96;

/// Fraction of the u profile used for v and w in the Gaussian family.
pub const GAUSSIAN_COMPANION_FRACTION: f64 = 0.1;

const BUMP_AMPLITUDE_1D: f64 = 0.2;
const BUMP_MODES_1D: usize = 4;
const BUMP_AMPLITUDE_2D: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// Smooth positive random cosine series; each component has total mass
    /// `mass`.
    RandomBump { mass: f64 },
    /// Gaussian in u of total mass `mass` and width `width`, centered in the
    /// domain (at the origin on the disk). v and w are the same profile at
    /// one tenth of the mass.
    ConcentratedGaussian { mass: f64, width: f64 },
    Constant { u: f64, v: f64, w: f64 },
}

impl InitialData {
    pub fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} must be positive, got {x}"))
            }
        };
        match *self {
            InitialData::RandomBump { mass } => positive("mass", mass),
            InitialData::ConcentratedGaussian { mass, width } => {
                positive("mass", mass)?;
                positive("width", width)
            }
            InitialData::Constant { u, v, w } => {
                if [u, v, w].iter().all(|x| *x >= 0.0 && x.is_finite()) {
                    Ok(())
                } else {
                    Err("constant initial data must be finite and nonnegative".into())
                }
            }
        }
    }
}

pub struct UniformSource {
    rng: Pcg64,
}

impl UniformSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Pcg64::new(seed as u128, PCG_STREAM),
        }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn next_unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit()
    }
}

fn normalize_mass(profile: Field, mass: f64) -> Field {
    let total = profile.integral();
    profile.map(|p| p * mass / total)
}

fn random_bump(grid: &Arc<Grid>, src: &mut UniformSource, mass: f64) -> Field {
    let profile = match grid.spec().geometry {
        Geometry::Interval { length: l } | Geometry::RadialDisk { radius: l } => {
            let coeffs: Vec<f64> = (0..BUMP_MODES_1D)
                .map(|_| src.next_in(-BUMP_AMPLITUDE_1D, BUMP_AMPLITUDE_1D))
                .collect();
            Field::from_fn(grid.clone(), |x, _| {
                1.0 + coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a * ((k + 1) as f64 * PI * x / l).cos())
                    .sum::<f64>()
            })
        }
        Geometry::Rectangle { lx, ly } => {
            // Modes (k, l) in {0,1,2}^2 without the constant, k-major order.
            let modes: Vec<(usize, usize, f64)> = (0..3)
                .flat_map(|k| (0..3).map(move |l| (k, l)))
                .filter(|&(k, l)| k + l > 0)
                .map(|(k, l)| (k, l, src.next_in(-BUMP_AMPLITUDE_2D, BUMP_AMPLITUDE_2D)))
                .collect();
            Field::from_fn(grid.clone(), |x, y| {
                1.0 + modes
                    .iter()
                    .map(|&(k, l, a)| {
                        a * (k as f64 * PI * x / lx).cos() * (l as f64 * PI * y / ly).cos()
                    })
                    .sum::<f64>()
            })
        }
    };
    normalize_mass(profile, mass)
}

fn gaussian(grid: &Arc<Grid>, mass: f64, width: f64) -> Field {
    let (cx, cy) = match grid.spec().geometry {
        Geometry::Interval { length } => (0.5 * length, 0.0),
        Geometry::Rectangle { lx, ly } => (0.5 * lx, 0.5 * ly),
        Geometry::RadialDisk { .. } => (0.0, 0.0),
    };
    let w2 = width * width;
    let profile = Field::from_fn(grid.clone(), |x, y| {
        (-((x - cx).powi(2) + (y - cy).powi(2)) / w2).exp()
    });
    normalize_mass(profile, mass)
}

/// Samples `(u0, v0, w0)` for `system` on `grid`. For the parabolic-elliptic
/// system the returned `v` is a placeholder; the stepper recomputes it.
pub fn sample_state(
    grid: &Arc<Grid>,
    system: SystemKind,
    family: &InitialData,
    seed: u64,
) -> Result<State, ModelError> {
    let (u, v, w) = match *family {
        InitialData::RandomBump { mass } => {
            let mut src = UniformSource::new(seed);
            let u = random_bump(grid, &mut src, mass);
            let v = random_bump(grid, &mut src, mass);
            let w = random_bump(grid, &mut src, mass);
            (u, v, w)
        }
        InitialData::ConcentratedGaussian { mass, width } => {
            let u = gaussian(grid, mass, width);
            let c = u.map(|x| GAUSSIAN_COMPANION_FRACTION * x);
            (u, c.clone(), c)
        }
        InitialData::Constant { u, v, w } => (
            Field::constant(grid.clone(), u),
            Field::constant(grid.clone(), v),
            Field::constant(grid.clone(), w),
        ),
    };
    let v = if system == SystemKind::KsParabolicElliptic {
        Field::zeros(grid.clone())
    } else {
        v
    };
    let w = system.has_w().then_some(w);
    State::new(0.0, u, v, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec};

    #[test]
    fn pcg_stream_is_reproducible() {
        let mut a = UniformSource::new(7);
        let mut b = UniformSource::new(7);
        let mut c = UniformSource::new(8);
        let xs: Vec<f64> = (0..5).map(|_| a.next_unit()).collect();
        let ys: Vec<f64> = (0..5).map(|_| b.next_unit()).collect();
        let zs: Vec<f64> = (0..5).map(|_| c.next_unit()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
        assert!(xs.iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn random_bump_is_positive_with_requested_mass() {
        for gs in [
            GridSpec::interval(1.0, 64),
            GridSpec::rectangle(1.0, 1.0, 16, 16),
            GridSpec::radial_disk(1.0, 40),
        ] {
            let g = build_grid(gs).unwrap();
            for seed in 0..5 {
                let s = sample_state(&g, SystemKind::MayNowakChemotaxis, &InitialData::RandomBump { mass: 1.0 }, seed)
                    .unwrap();
                for f in s.fields() {
                    assert!(f.min() > 0.0);
                    assert!((f.integral() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gaussian_mass_and_peak() {
        let g = build_grid(GridSpec::radial_disk(1.0, 100)).unwrap();
        let s = sample_state(
            &g,
            SystemKind::KsParabolicElliptic,
            &InitialData::ConcentratedGaussian { mass: 30.0, width: 0.1 },
            0,
        )
        .unwrap();
        assert!((s.u.integral() - 30.0).abs() < 1e-10);
        assert!(s.w.is_none());
        // Peak close to mass / (pi width^2).
        let peak = 30.0 / (PI * 0.01);
        assert!((s.u.max_abs() - peak).abs() / peak < 0.01);
    }
}
