//! Nodal containers for densities, potentials and velocities, plus the
//! preparation steps that turn two raw images into an admissible endpoint pair.

mod export;
mod persist;
mod pgm;

pub use export::{export_frames, format_g17, FrameFormat};
pub use persist::{read_scalar_field, read_velocity_field, write_scalar_field, write_velocity_field, FieldSidecar};
pub use pgm::{load_density, parse_pgm, write_pgm16, PgmImage};

use crate::driver::SolverConfig;
use crate::error::{Error, Result};
use crate::mesh::{locate_axis, Grid2D, SpaceTimeGrid};

/// Nodal values on one time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField2D {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Shape(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.nx(),
                grid.ny()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: &Grid2D, value: f64) -> Self {
        Self {
            values: vec![value; grid.node_count()],
            grid: grid.clone(),
        }
    }

    /// Sample `f(x, y)` at every node.
    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.node_count());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let [x, y] = grid.position(i, j);
                values.push(f(x, y));
            }
        }
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Integral of the bilinear interpolant.
    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bilinear interpolation; points outside the square are clamped onto it.
    pub fn sample(&self, p: [f64; 2]) -> f64 {
        let ((ei, ej), [a, b]) = self.grid.locate(p);
        let n = self.grid.element_nodes(ei, ej);
        let v = &self.values;
        (1.0 - a) * (1.0 - b) * v[n[0]] + a * (1.0 - b) * v[n[1]] + (1.0 - a) * b * v[n[2]] + a * b * v[n[3]]
    }
}

/// Nodal values on every slice of a space-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: SpaceTimeGrid,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn new(grid: SpaceTimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Shape(format!(
                "{} values for {} space-time nodes",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self {
            values: vec![0.0; grid.node_count()],
            grid: grid.clone(),
        }
    }

    pub fn from_fn(grid: &SpaceTimeGrid, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let g = grid.spatial();
        let mut values = Vec::with_capacity(grid.node_count());
        for k in 0..grid.nt() {
            let t = grid.time(k);
            for j in 0..g.ny() {
                for i in 0..g.nx() {
                    let [x, y] = g.position(i, j);
                    values.push(f(t, x, y));
                }
            }
        }
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn from_slices(grid: &SpaceTimeGrid, slices: &[ScalarField2D]) -> Result<Self> {
        if slices.len() != grid.nt() || slices.iter().any(|s| s.grid() != grid.spatial()) {
            return Err(Error::Shape("slice stack does not match the space-time grid".into()));
        }
        let values = slices.iter().flat_map(|s| s.values().iter().copied()).collect();
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn slice_values(&self, k: usize) -> &[f64] {
        let m = self.grid.slice_len();
        &self.values[k * m..(k + 1) * m]
    }

    pub fn slice(&self, k: usize) -> ScalarField2D {
        ScalarField2D {
            grid: self.grid.spatial().clone(),
            values: self.slice_values(k).to_vec(),
        }
    }

    /// Slice `k` becomes slice `nt - 1 - k`.
    pub fn reversed_in_time(&self) -> Self {
        let nt = self.grid.nt();
        let values = (0..nt)
            .rev()
            .flat_map(|k| self.slice_values(k).iter().copied())
            .collect();
        Self {
            grid: self.grid.clone(),
            values,
        }
    }

    /// Trilinear interpolation in `(t, x, y)`, clamped to the closed cylinder.
    pub fn sample(&self, t: f64, p: [f64; 2]) -> f64 {
        let (k, s) = self.grid.locate_time(t);
        let lo = self.slice_sample(k, p);
        if s == 0.0 {
            return lo;
        }
        (1.0 - s) * lo + s * self.slice_sample(k + 1, p)
    }

    fn slice_sample(&self, k: usize, p: [f64; 2]) -> f64 {
        let g = self.grid.spatial();
        let ((ei, ej), [a, b]) = g.locate(p);
        let n = g.element_nodes(ei, ej);
        let v = self.slice_values(k);
        (1.0 - a) * (1.0 - b) * v[n[0]] + a * (1.0 - b) * v[n[1]] + (1.0 - a) * b * v[n[2]] + a * b * v[n[3]]
    }

    /// Space-time trapezoidal weights (exact for trilinear interpolants).
    pub fn quadrature_weights(grid: &SpaceTimeGrid) -> Vec<f64> {
        let spatial = grid.spatial().lumped_weights();
        let mut w = Vec::with_capacity(grid.node_count());
        for k in 0..grid.nt() {
            let wt = if k == 0 || k + 1 == grid.nt() {
                0.5 * grid.dt()
            } else {
                grid.dt()
            };
            w.extend(spatial.iter().map(|s| s * wt));
        }
        w
    }

    /// Trapezoidal L2(Q) norm.
    pub fn l2_norm(&self) -> f64 {
        Self::quadrature_weights(&self.grid)
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Trapezoidal L2(Q) norm of `self - other`.
    pub fn l2_distance(&self, other: &SpaceTimeField) -> f64 {
        Self::quadrature_weights(&self.grid)
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(w, (a, b))| w * (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_distance(&self, other: &SpaceTimeField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Spatial integral of each slice.
    pub fn slice_masses(&self) -> Vec<f64> {
        (0..self.grid.nt())
            .map(|k| self.grid.spatial().integrate(self.slice_values(k)))
            .collect()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-slice nodal velocity vectors.
///
/// The solver always produces fields that vanish on the spatial boundary of every
/// slice; hand-built fields (test harnesses, prescribed flows) need not.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    grid: SpaceTimeGrid,
    values: Vec<[f64; 2]>,
}

impl VelocityField {
    pub fn new(grid: SpaceTimeGrid, values: Vec<[f64; 2]>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Shape(format!(
                "{} vectors for {} space-time nodes",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self::constant(grid, [0.0, 0.0])
    }

    pub fn constant(grid: &SpaceTimeGrid, v: [f64; 2]) -> Self {
        Self {
            values: vec![v; grid.node_count()],
            grid: grid.clone(),
        }
    }

    pub fn from_fn(grid: &SpaceTimeGrid, f: impl Fn(f64, f64, f64) -> [f64; 2]) -> Self {
        let g = grid.spatial();
        let mut values = Vec::with_capacity(grid.node_count());
        for k in 0..grid.nt() {
            let t = grid.time(k);
            for j in 0..g.ny() {
                for i in 0..g.nx() {
                    let [x, y] = g.position(i, j);
                    values.push(f(t, x, y));
                }
            }
        }
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn from_slices(grid: &SpaceTimeGrid, slices: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        if slices.len() != grid.nt() || slices.iter().any(|s| s.len() != grid.slice_len()) {
            return Err(Error::Shape("velocity slices do not match the grid".into()));
        }
        Ok(Self {
            grid: grid.clone(),
            values: slices.into_iter().flatten().collect(),
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[[f64; 2]] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.values
    }

    pub fn slice(&self, k: usize) -> &[[f64; 2]] {
        let m = self.grid.slice_len();
        &self.values[k * m..(k + 1) * m]
    }

    pub fn max_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v[0].hypot(v[1]))
            .fold(0.0, f64::max)
    }

    pub fn max_distance(&self, other: &VelocityField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .fold(0.0, f64::max)
    }

    pub fn vanishes_on_boundary(&self) -> bool {
        let g = self.grid.spatial();
        (0..self.grid.nt()).all(|k| {
            let s = self.slice(k);
            g.boundary().iter().all(|&b| s[b] == [0.0, 0.0])
        })
    }

    pub fn zero_boundary(&mut self) {
        let m = self.grid.slice_len();
        let boundary = self.grid.spatial().boundary().to_vec();
        for k in 0..self.grid.nt() {
            for &b in &boundary {
                self.values[k * m + b] = [0.0, 0.0];
            }
        }
    }

    /// The velocity of the time-reversed motion: slices reversed and vectors negated.
    pub fn reversed_in_time(&self) -> Self {
        let nt = self.grid.nt();
        let values = (0..nt)
            .rev()
            .flat_map(|k| self.slice(k).iter().map(|v| [-v[0], -v[1]]))
            .collect();
        Self {
            grid: self.grid.clone(),
            values,
        }
    }

    /// Trilinear interpolation in `(t, x, y)`. Returns zero outside the closed square.
    pub fn sample(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
            return [0.0, 0.0];
        }
        let g = self.grid.spatial();
        let (k, s) = locate_axis(t, self.grid.nt());
        let ((ei, ej), [a, b]) = g.locate(p);
        let n = g.element_nodes(ei, ej);
        let w = [(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b];
        let mut out = [0.0; 2];
        for (slice, ws) in [(k, 1.0 - s), (k + 1, s)] {
            if ws == 0.0 {
                continue;
            }
            let vs = self.slice(slice);
            for (node, wn) in n.iter().zip(w) {
                out[0] += ws * wn * vs[*node][0];
                out[1] += ws * wn * vs[*node][1];
            }
        }
        out
    }
}

/// Discrete time derivative: centered differences inside, one-sided
/// second-order stencils on the first and last slice.
pub fn time_derivative(rho: &SpaceTimeField) -> SpaceTimeField {
    let grid = rho.grid();
    let nt = grid.nt();
    let m = grid.slice_len();
    let inv = 1.0 / (2.0 * grid.dt());
    let mut out = vec![0.0; grid.node_count()];
    for k in 0..nt {
        let dst = &mut out[k * m..(k + 1) * m];
        if k == 0 {
            let (a, b, c) = (rho.slice_values(0), rho.slice_values(1), rho.slice_values(2));
            for n in 0..m {
                dst[n] = (4.0 * (b[n] - a[n]) - (c[n] - a[n])) * inv;
            }
        } else if k + 1 == nt {
            let (a, b, c) = (
                rho.slice_values(nt - 3),
                rho.slice_values(nt - 2),
                rho.slice_values(nt - 1),
            );
            for n in 0..m {
                dst[n] = (4.0 * (c[n] - b[n]) - (c[n] - a[n])) * inv;
            }
        } else {
            let (a, c) = (rho.slice_values(k - 1), rho.slice_values(k + 1));
            for n in 0..m {
                dst[n] = (c[n] - a[n]) * inv;
            }
        }
    }
    SpaceTimeField {
        grid: grid.clone(),
        values: out,
    }
}

/// Turn two raw `[0,1]` images into an admissible endpoint pair.
///
/// Steps: affine remap into `[beta_min, 1]`; boundary traces checked against
/// `boundary_tol` and replaced by their average; interior of the lighter image
/// scaled up so both carry the same mass.
pub fn prepare_pair(
    rho0_raw: &ScalarField2D,
    rho1_raw: &ScalarField2D,
    cfg: &SolverConfig,
) -> Result<(ScalarField2D, ScalarField2D)> {
    if rho0_raw.grid() != rho1_raw.grid() {
        return Err(Error::Shape("endpoint images live on different grids".into()));
    }
    for (name, f) in [("rho0", rho0_raw), ("rho1", rho1_raw)] {
        let mass = f.integral();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::Degenerate(format!("{name} has total mass {mass}")));
        }
    }
    let beta = cfg.beta_min;
    let remap = |v: f64| beta + (1.0 - beta) * v.clamp(0.0, 1.0);
    let mut a = rho0_raw.map(remap).into_values();
    let mut b = rho1_raw.map(remap).into_values();
    let grid = rho0_raw.grid().clone();

    let mut worst = 0.0f64;
    let mut worst_node = 0;
    for &n in grid.boundary() {
        let d = (a[n] - b[n]).abs();
        if d > worst {
            worst = d;
            worst_node = n;
        }
    }
    if worst > cfg.boundary_tol {
        let (i, j) = grid.coords(worst_node);
        return Err(Error::Hypothesis(format!(
            "boundary traces differ by {worst:.4} at node ({i}, {j}); tolerance is {}",
            cfg.boundary_tol
        )));
    }
    for &n in grid.boundary() {
        let avg = 0.5 * (a[n] + b[n]);
        a[n] = avg;
        b[n] = avg;
    }

    let mask = grid.boundary_mask();
    let m0 = grid.integrate(&a);
    let m1 = grid.integrate(&b);
    if m0 != m1 {
        let (light, target) = if m0 < m1 { (&mut a, m1) } else { (&mut b, m0) };
        let interior: Vec<f64> = light
            .iter()
            .zip(&mask)
            .map(|(v, &bd)| if bd { 0.0 } else { *v })
            .collect();
        let interior_mass = grid.integrate(&interior);
        let boundary_mass = grid.integrate(light) - interior_mass;
        let scale = (target - boundary_mass) / interior_mass;
        for (v, &bd) in light.iter_mut().zip(&mask) {
            if !bd {
                *v *= scale;
            }
        }
    }
    Ok((ScalarField2D::new(grid.clone(), a)?, ScalarField2D::new(grid, b)?))
}
