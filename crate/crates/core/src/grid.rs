//! Cell-centered finite-volume grids with homogeneous Neumann boundaries.
//!
//! Every geometry is reduced to the same representation: a list of cells
//! (center, measure) and a list of interior faces (the two adjacent cells,
//! face area, center-to-center distance). Boundary faces carry zero flux and
//! are never stored, so the discrete operators below are conservative by
//! construction: each face contributes equal and opposite amounts to its two
//! cells.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_CELLS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("at least {MIN_CELLS} cells are required per dimension, got {0}")]
    TooFewCells(usize),
    #[error("domain lengths must be finite and strictly positive, got {0}")]
    NonPositiveLength(f64),
    #[error("field has {got} values but the grid has {expected} cells")]
    LengthMismatch { expected: usize, got: usize },
    #[error("Lq norm requires q >= 1, got {0}")]
    InvalidExponent(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Interval { length: f64 },
    Rectangle { lx: f64, ly: f64 },
    RadialDisk { radius: f64 },
}

/// Domain plus resolution. For `Interval` and `RadialDisk` only `cells[0]`
/// is used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub geometry: Geometry,
    pub cells: [usize; 2],
}

impl GridSpec {
    pub fn interval(length: f64, cells: usize) -> Self {
        Self {
            geometry: Geometry::Interval { length },
            cells: [cells, 1],
        }
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Self {
        Self {
            geometry: Geometry::Rectangle { lx, ly },
            cells: [nx, ny],
        }
    }

    pub fn radial_disk(radius: f64, cells: usize) -> Self {
        Self {
            geometry: Geometry::RadialDisk { radius },
            cells: [cells, 1],
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let check_len = |l: f64| {
            if l.is_finite() && l > 0.0 {
                Ok(())
            } else {
                Err(GridError::NonPositiveLength(l))
            }
        };
        let check_cells = |n: usize| {
            if n >= MIN_CELLS {
                Ok(())
            } else {
                Err(GridError::TooFewCells(n))
            }
        };
        match self.geometry {
            Geometry::Interval { length } => {
                check_len(length)?;
                check_cells(self.cells[0])
            }
            Geometry::Rectangle { lx, ly } => {
                check_len(lx)?;
                check_len(ly)?;
                check_cells(self.cells[0])?;
                check_cells(self.cells[1])
            }
            Geometry::RadialDisk { radius } => {
                check_len(radius)?;
                check_cells(self.cells[0])
            }
        }
    }

    /// Dimension n of the physical domain. The disk is two-dimensional even
    /// though it is discretized along the radius only.
    pub fn spatial_dim(&self) -> usize {
        match self.geometry {
            Geometry::Interval { .. } => 1,
            Geometry::Rectangle { .. } | Geometry::RadialDisk { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Interior face between cells `lo` and `hi`; the positive direction points
/// from `lo` to `hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub lo: usize,
    pub hi: usize,
    pub area: f64,
    pub dist: f64,
    pub axis: Axis,
}

impl Face {
    #[inline]
    pub fn transmissibility(&self) -> f64 {
        self.area / self.dist
    }

    /// Measure of the dual cell straddling the face.
    #[inline]
    pub fn dual_volume(&self) -> f64 {
        self.area * self.dist
    }

    #[inline]
    pub fn gradient(&self, values: &[f64]) -> f64 {
        (values[self.hi] - values[self.lo]) / self.dist
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    spec: GridSpec,
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    centers: Vec<[f64; 2]>,
    cell_volumes: Vec<f64>,
    total_volume: f64,
    faces: Vec<Face>,
    x_faces: usize,
}

pub fn build_grid(spec: GridSpec) -> Result<Arc<Grid>, GridError> {
    Grid::new(spec).map(Arc::new)
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Self, GridError> {
        spec.validate()?;
        let grid = match spec.geometry {
            Geometry::Interval { length } => {
                let n = spec.cells[0];
                let dx = length / n as f64;
                let centers = (0..n).map(|i| [(i as f64 + 0.5) * dx, 0.0]).collect();
                let faces: Vec<Face> = (0..n - 1)
                    .map(|i| Face {
                        lo: i,
                        hi: i + 1,
                        area: 1.0,
                        dist: dx,
                        axis: Axis::X,
                    })
                    .collect();
                Grid {
                    spec,
                    nx: n,
                    ny: 1,
                    dx,
                    dy: 1.0,
                    centers,
                    cell_volumes: vec![dx; n],
                    total_volume: length,
                    x_faces: faces.len(),
                    faces,
                }
            }
            Geometry::Rectangle { lx, ly } => {
                let (nx, ny) = (spec.cells[0], spec.cells[1]);
                let dx = lx / nx as f64;
                let dy = ly / ny as f64;
                let mut centers = Vec::with_capacity(nx * ny);
                for j in 0..ny {
                    for i in 0..nx {
                        centers.push([(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy]);
                    }
                }
                let mut faces = Vec::with_capacity((nx - 1) * ny + nx * (ny - 1));
                for j in 0..ny {
                    for i in 0..nx - 1 {
                        faces.push(Face {
                            lo: j * nx + i,
                            hi: j * nx + i + 1,
                            area: dy,
                            dist: dx,
                            axis: Axis::X,
                        });
                    }
                }
                let x_faces = faces.len();
                for j in 0..ny - 1 {
                    for i in 0..nx {
                        faces.push(Face {
                            lo: j * nx + i,
                            hi: (j + 1) * nx + i,
                            area: dx,
                            dist: dy,
                            axis: Axis::Y,
                        });
                    }
                }
                Grid {
                    spec,
                    nx,
                    ny,
                    dx,
                    dy,
                    centers,
                    cell_volumes: vec![dx * dy; nx * ny],
                    total_volume: lx * ly,
                    faces,
                    x_faces,
                }
            }
            Geometry::RadialDisk { radius } => {
                let n = spec.cells[0];
                let dr = radius / n as f64;
                let centers = (0..n).map(|i| [(i as f64 + 0.5) * dr, 0.0]).collect();
                // Annulus [i dr, (i+1) dr] has measure pi dr^2 (2i+1) = 2 pi r_i dr.
                let cell_volumes: Vec<f64> = (0..n)
                    .map(|i| PI * dr * dr * (2 * i + 1) as f64)
                    .collect();
                let faces: Vec<Face> = (0..n - 1)
                    .map(|i| Face {
                        lo: i,
                        hi: i + 1,
                        area: 2.0 * PI * (i + 1) as f64 * dr,
                        dist: dr,
                        axis: Axis::X,
                    })
                    .collect();
                Grid {
                    spec,
                    nx: n,
                    ny: 1,
                    dx: dr,
                    dy: 1.0,
                    centers,
                    cell_volumes,
                    total_volume: PI * radius * radius,
                    x_faces: faces.len(),
                    faces,
                }
            }
        };
        Ok(grid)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.cell_volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_volumes.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Cell width in y; `None` for one-dimensional discretizations.
    pub fn dy(&self) -> Option<f64> {
        matches!(self.spec.geometry, Geometry::Rectangle { .. }).then_some(self.dy)
    }

    /// Smallest cell width over all discretized directions.
    pub fn min_spacing(&self) -> f64 {
        self.dy().map_or(self.dx, |dy| self.dx.min(dy))
    }

    pub fn spatial_dim(&self) -> usize {
        self.spec.spatial_dim()
    }

    pub fn is_two_dimensional_lattice(&self) -> bool {
        matches!(self.spec.geometry, Geometry::Rectangle { .. })
    }

    /// Cell centers; for the disk the first coordinate is the radius.
    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn cell_volumes(&self) -> &[f64] {
        &self.cell_volumes
    }

    pub fn total_volume(&self) -> f64 {
        self.total_volume
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Faces along x, stored row by row with `nx - 1` faces per row.
    pub fn x_faces(&self) -> &[Face] {
        &self.faces[..self.x_faces]
    }

    /// Faces along y, stored row by row with `nx` faces per row.
    pub fn y_faces(&self) -> &[Face] {
        &self.faces[self.x_faces..]
    }

    /// Mirror image of a cell index (x -> L - x, and y -> L - y on rectangles).
    pub fn mirror_index(&self, cell: usize) -> usize {
        let (i, j) = (cell % self.nx, cell / self.nx);
        match self.spec.geometry {
            Geometry::Rectangle { .. } => (self.ny - 1 - j) * self.nx + (self.nx - 1 - i),
            _ => self.nx - 1 - i,
        }
    }
}

/// Cell-centered samples of one unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let values = vec![value; grid.len()];
        Self { grid, values }
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f(x, y)` at cell centers (`f(r, 0)` on the disk).
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = grid.centers().iter().map(|c| f(c[0], c[1])).collect();
        Self { grid, values }
    }

    pub(crate) fn from_parts(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_parts(self.grid.clone(), self.values.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert!(self.same_grid(other));
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Field::from_parts(self.grid.clone(), values)
    }

    /// Quadrature of the field over the domain.
    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.cell_volumes())
            .map(|(v, vol)| v * vol)
            .sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.cell_volumes())
            .map(|(v, vol)| v.abs() * vol)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.integral() / self.grid.total_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Discrete Neumann Laplacian in conservative flux form.
///
/// On the disk this is `(1/r)(r f_r)_r`; the face at `r = 0` has zero area so
/// the symmetry condition holds without a special case.
pub fn neumann_laplacian(f: &Field) -> Field {
    let grid = f.grid();
    let v = f.values();
    let mut acc = vec![0.0; grid.len()];
    for face in grid.faces() {
        let flux = face.transmissibility() * (v[face.hi] - v[face.lo]);
        acc[face.lo] += flux;
        acc[face.hi] -= flux;
    }
    for (a, vol) in acc.iter_mut().zip(grid.cell_volumes()) {
        *a /= vol;
    }
    Field::from_parts(grid.clone(), acc)
}

/// `-div(u grad v)` with upwinded `u` at each face.
///
/// The face velocity is the central difference of `v` across the face; `u`
/// is taken from the cell the velocity points away from.
pub fn chemotactic_divergence(u: &Field, v: &Field) -> Field {
    debug_assert!(u.same_grid(v));
    let grid = u.grid();
    let (uu, vv) = (u.values(), v.values());
    let mut acc = vec![0.0; grid.len()];
    for face in grid.faces() {
        let g = face.gradient(vv);
        let upwind = if g >= 0.0 { uu[face.lo] } else { uu[face.hi] };
        // Transport from lo to hi at rate g.
        let flux = upwind * g * face.area;
        acc[face.lo] -= flux;
        acc[face.hi] += flux;
    }
    for (a, vol) in acc.iter_mut().zip(grid.cell_volumes()) {
        *a /= vol;
    }
    Field::from_parts(grid.clone(), acc)
}

/// `(sum_faces |grad v|^q * dual_volume)^(1/q)` with face-centered differences.
///
/// On rectangles the x- and y-faces are summed separately, so for `q = 2`
/// this is exactly the square root of the discrete Dirichlet energy.
pub fn grad_norm_lq(v: &Field, q: f64) -> Result<f64, GridError> {
    if !(q >= 1.0) || !q.is_finite() {
        return Err(GridError::InvalidExponent(q));
    }
    let vals = v.values();
    let sum: f64 = v
        .grid()
        .faces()
        .iter()
        .map(|f| f.gradient(vals).abs().powf(q) * f.dual_volume())
        .sum();
    Ok(sum.powf(1.0 / q))
}

/// Largest face gradient magnitude, used as a proxy for `|grad v|_inf`.
pub fn grad_max(v: &Field) -> f64 {
    let vals = v.values();
    v.grid()
        .faces()
        .iter()
        .fold(0.0, |m, f| m.max(f.gradient(vals).abs()))
}

/// Discrete Dirichlet energy `sum_faces |grad v|^2 * dual_volume`.
pub fn dirichlet_energy(v: &Field) -> f64 {
    let vals = v.values();
    v.grid()
        .faces()
        .iter()
        .map(|f| f.gradient(vals).powi(2) * f.dual_volume())
        .sum()
}
