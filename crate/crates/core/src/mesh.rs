//! Structured grids on the unit square and the space-time cylinder `(0,1) x (0,1)^2`,
//! order-one Lagrange shape functions and tensor Gauss rules.
//!
//! Nodes are numbered row-major inside a slice (x fastest) and slice-major across
//! time, so every time slice occupies a contiguous block of `nx * ny` values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ScalarField2D, SpaceTimeField};

/// Uniform node lattice on `[0,1]^2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    #[serde(skip)]
    boundary: Vec<usize>,
}

impl PartialEq for Grid2D {
    fn eq(&self, other: &Self) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 nodes per axis, got {nx}x{ny}"
            )));
        }
        let mut boundary = Vec::with_capacity(2 * nx + 2 * ny - 4);
        for j in 0..ny {
            for i in 0..nx {
                if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                    boundary.push(j * nx + i);
                }
            }
        }
        Ok(Self {
            nx,
            ny,
            hx: 1.0 / (nx - 1) as f64,
            hy: 1.0 / (ny - 1) as f64,
            boundary,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn element_count(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Inverse of [`Grid2D::index`].
    #[inline]
    pub fn coords(&self, node: usize) -> (usize, usize) {
        (node % self.nx, node / self.nx)
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize) -> [f64; 2] {
        [i as f64 * self.hx, j as f64 * self.hy]
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Boundary node indices in increasing order.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    /// Boolean mask over nodes, `true` on the boundary.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.node_count()];
        for &b in &self.boundary {
            mask[b] = true;
        }
        mask
    }

    /// Corner nodes of element `(ei, ej)` in the quad4 local ordering.
    #[inline]
    pub fn element_nodes(&self, ei: usize, ej: usize) -> [usize; 4] {
        let n0 = self.index(ei, ej);
        [n0, n0 + 1, n0 + self.nx, n0 + self.nx + 1]
    }

    pub fn elements(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ny - 1).flat_map(move |ej| (0..self.nx - 1).map(move |ei| (ei, ej)))
    }

    /// Element containing `p` (clamped to the closed square) and the local
    /// reference coordinates of `p` inside it.
    pub fn locate(&self, p: [f64; 2]) -> ((usize, usize), [f64; 2]) {
        let (ei, xi) = locate_axis(p[0], self.nx);
        let (ej, eta) = locate_axis(p[1], self.ny);
        ((ei, ej), [xi, eta])
    }

    /// Trapezoidal (lumped) nodal weights; they integrate bilinear interpolants exactly.
    pub fn lumped_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.node_count()];
        let quarter = 0.25 * self.hx * self.hy;
        for (ei, ej) in self.elements() {
            for n in self.element_nodes(ei, ej) {
                w[n] += quarter;
            }
        }
        w
    }

    /// Exact integral of the bilinear interpolant of nodal values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let mut sum = 0.0;
        for j in 0..self.ny {
            let wy = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
            for i in 0..self.nx {
                let wx = if i == 0 || i == self.nx - 1 { 0.5 } else { 1.0 };
                sum += wx * wy * values[self.index(i, j)];
            }
        }
        sum * self.hx * self.hy
    }
}

pub(crate) fn locate_axis(x: f64, n: usize) -> (usize, f64) {
    let cells = (n - 1) as f64;
    let s = (x.clamp(0.0, 1.0)) * cells;
    let e = (s.floor() as usize).min(n - 2);
    (e, s - e as f64)
}

/// Uniform lattice on the space-time cylinder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    spatial: Grid2D,
    nt: usize,
    dt: f64,
}

impl SpaceTimeGrid {
    pub fn new(spatial: Grid2D, nt: usize) -> Result<Self> {
        if nt < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 time slices, got {nt}"
            )));
        }
        Ok(Self {
            spatial,
            nt,
            dt: 1.0 / (nt - 1) as f64,
        })
    }

    pub fn spatial(&self) -> &Grid2D {
        &self.spatial
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        if k + 1 == self.nt {
            1.0
        } else {
            k as f64 * self.dt
        }
    }

    pub fn slice_len(&self) -> usize {
        self.spatial.node_count()
    }

    pub fn node_count(&self) -> usize {
        self.nt * self.spatial.node_count()
    }

    #[inline]
    pub fn index(&self, k: usize, i: usize, j: usize) -> usize {
        k * self.slice_len() + self.spatial.index(i, j)
    }

    /// Corner nodes of brick `(k, ei, ej)` in the brick8 local ordering
    /// (bit 0: x, bit 1: y, bit 2: t).
    #[inline]
    pub fn brick_nodes(&self, k: usize, ei: usize, ej: usize) -> [usize; 8] {
        let q = self.spatial.element_nodes(ei, ej);
        let lo = k * self.slice_len();
        let hi = lo + self.slice_len();
        [
            lo + q[0],
            lo + q[1],
            lo + q[2],
            lo + q[3],
            hi + q[0],
            hi + q[1],
            hi + q[2],
            hi + q[3],
        ]
    }

    pub fn bricks(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.nt - 1).flat_map(move |k| self.spatial.elements().map(move |(ei, ej)| (k, ei, ej)))
    }

    /// Slice interval containing `t` and the local time coordinate in it.
    pub fn locate_time(&self, t: f64) -> (usize, f64) {
        locate_axis(t, self.nt)
    }
}

/// Build the space-time grid used by every solver stage.
pub fn build_space_time_grid(nx: usize, ny: usize, nt: usize) -> Result<SpaceTimeGrid> {
    SpaceTimeGrid::new(Grid2D::new(nx, ny)?, nt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Quad4,
    Brick8,
}

impl ElementKind {
    pub fn dimension(self) -> usize {
        match self {
            ElementKind::Quad4 => 2,
            ElementKind::Brick8 => 3,
        }
    }
}

/// Values and reference-space gradients of the d-linear basis at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeEval {
    pub values: Vec<f64>,
    pub gradients: Vec<Vec<f64>>,
}

pub fn shape_functions(kind: ElementKind, ref_point: &[f64]) -> Result<ShapeEval> {
    let inside = ref_point.len() == kind.dimension()
        && ref_point.iter().all(|&c| (0.0..=1.0).contains(&c));
    if !inside {
        return Err(Error::OutOfRange {
            point: ref_point.to_vec(),
        });
    }
    Ok(match kind {
        ElementKind::Quad4 => {
            let (v, g) = quad4([ref_point[0], ref_point[1]]);
            ShapeEval {
                values: v.to_vec(),
                gradients: g.iter().map(|g| g.to_vec()).collect(),
            }
        }
        ElementKind::Brick8 => {
            let (v, g) = brick8([ref_point[0], ref_point[1], ref_point[2]]);
            ShapeEval {
                values: v.to_vec(),
                gradients: g.iter().map(|g| g.to_vec()).collect(),
            }
        }
    })
}

#[inline]
fn lin(bit: usize, s: f64) -> (f64, f64) {
    if bit == 0 {
        (1.0 - s, -1.0)
    } else {
        (s, 1.0)
    }
}

/// Bilinear basis on the unit reference square.
#[inline]
pub fn quad4(xi: [f64; 2]) -> ([f64; 4], [[f64; 2]; 4]) {
    let mut v = [0.0; 4];
    let mut g = [[0.0; 2]; 4];
    for a in 0..4 {
        let (fx, dx) = lin(a & 1, xi[0]);
        let (fy, dy) = lin((a >> 1) & 1, xi[1]);
        v[a] = fx * fy;
        g[a] = [dx * fy, fx * dy];
    }
    (v, g)
}

/// Trilinear basis on the unit reference cube, coordinates `(x, y, t)`.
#[inline]
pub fn brick8(xi: [f64; 3]) -> ([f64; 8], [[f64; 3]; 8]) {
    let mut v = [0.0; 8];
    let mut g = [[0.0; 3]; 8];
    for a in 0..8 {
        let (fx, dx) = lin(a & 1, xi[0]);
        let (fy, dy) = lin((a >> 1) & 1, xi[1]);
        let (ft, dt) = lin((a >> 2) & 1, xi[2]);
        v[a] = fx * fy * ft;
        g[a] = [dx * fy * ft, fx * dy * ft, fx * fy * dt];
    }
    (v, g)
}

/// Gauss-Legendre nodes and weights on `[0,1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w): (&[f64], &[f64]) = match n {
        1 => (&[0.0], &[2.0]),
        2 => {
            const A: f64 = 0.577_350_269_189_625_8;
            (&[-A, A], &[1.0, 1.0])
        }
        3 => {
            const A: f64 = 0.774_596_669_241_483_4;
            (&[-A, 0.0, A], &[5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            const A: f64 = 0.339_981_043_584_856_3;
            const B: f64 = 0.861_136_311_594_052_6;
            const WA: f64 = 0.652_145_154_862_546_1;
            const WB: f64 = 0.347_854_845_137_453_9;
            (&[-B, -A, A, B], &[WB, WA, WA, WB])
        }
        _ => panic!("Gauss-Legendre rule with {n} points is not tabulated"),
    };
    (
        x.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        w.iter().map(|w| 0.5 * w).collect(),
    )
}

/// Tensor Gauss rule on the reference element `[0,1]^D`.
#[derive(Debug, Clone)]
pub struct QuadratureRule<const D: usize> {
    pub points: Vec<[f64; D]>,
    pub weights: Vec<f64>,
    /// Highest per-axis polynomial degree integrated exactly.
    pub degree: usize,
}

impl<const D: usize> QuadratureRule<D> {
    pub fn gauss(points_per_axis: usize) -> Self {
        let (x, w) = gauss_legendre_unit(points_per_axis);
        let n = points_per_axis;
        let total = n.pow(D as u32);
        let mut points = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for flat in 0..total {
            let mut p = [0.0; D];
            let mut wt = 1.0;
            let mut rem = flat;
            for c in p.iter_mut() {
                let q = rem % n;
                rem /= n;
                *c = x[q];
                wt *= w[q];
            }
            points.push(p);
            weights.push(wt);
        }
        Self {
            points,
            weights,
            degree: 2 * n - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; D], f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

/// Nodal linear blend `(1 - t) rho0 + t rho1` on every slice.
pub fn interpolate_lifting(
    rho0: &ScalarField2D,
    rho1: &ScalarField2D,
    grid: &SpaceTimeGrid,
) -> Result<SpaceTimeField> {
    if rho0.grid() != grid.spatial() || rho1.grid() != grid.spatial() {
        return Err(Error::Shape(
            "endpoint densities do not live on the space-time grid's spatial lattice".into(),
        ));
    }
    let m = grid.slice_len();
    let mut values = Vec::with_capacity(grid.node_count());
    for k in 0..grid.nt() {
        if k == 0 {
            values.extend_from_slice(rho0.values());
        } else if k + 1 == grid.nt() {
            values.extend_from_slice(rho1.values());
        } else {
            let t = grid.time(k);
            values.extend(
                rho0.values()
                    .iter()
                    .zip(rho1.values())
                    .map(|(a, b)| a + t * (b - a)),
            );
        }
    }
    debug_assert_eq!(values.len(), m * grid.nt());
    SpaceTimeField::new(grid.clone(), values)
}
