//! Space-time least-squares finite elements for the conservation law
//! `d_t rho + div(v rho) = 0` with both endpoint densities prescribed.
//!
//! The unknown is the correction `c = rho - lifting`, which vanishes on the first
//! and last slice. With `L(w) = d_t w + div(v w)` the discrete problem minimizes
//! `J(c) = 1/2 int_Q (L(c) + L(lifting))^2`, giving the normal equations
//! `A c = b` with `A_ij = int L(phi_i) L(phi_j)` and `b_j = -int L(lifting) L(phi_j)`.
//! Velocities are interpolated trilinearly inside each brick; integrals use
//! 2x2x2 Gauss points.

use crate::driver::SolverConfig;
use crate::error::{Error, Result};
use crate::fields::{SpaceTimeField, VelocityField};
use crate::linalg::{pcg_jacobi, SparseOperator, TripletBuilder};
use crate::mesh::{brick8, QuadratureRule, SpaceTimeGrid};

/// Tabulated trilinear basis at the 2x2x2 Gauss points.
pub(crate) struct BrickTables {
    pub weights: Vec<f64>,
    pub values: Vec<[f64; 8]>,
    /// Physical-space gradients `(d_x, d_y, d_t)`.
    pub grads: Vec<[[f64; 3]; 8]>,
}

impl BrickTables {
    pub fn new(grid: &SpaceTimeGrid) -> Self {
        let g = grid.spatial();
        let (hx, hy, dt) = (g.hx(), g.hy(), grid.dt());
        let rule = QuadratureRule::<3>::gauss(2);
        let mut weights = Vec::with_capacity(rule.len());
        let mut values = Vec::with_capacity(rule.len());
        let mut grads = Vec::with_capacity(rule.len());
        for (p, w) in rule.iter() {
            let (v, gr) = brick8(*p);
            weights.push(w * hx * hy * dt);
            values.push(v);
            let mut phys = [[0.0; 3]; 8];
            for a in 0..8 {
                phys[a] = [gr[a][0] / hx, gr[a][1] / hy, gr[a][2] / dt];
            }
            grads.push(phys);
        }
        Self { weights, values, grads }
    }

    /// `L(u)` at Gauss point `q` from the images `l` of [`Self::operator_images`].
    /// The time derivative is formed from differences across the brick, so a
    /// field constant in time without motion gives exactly zero.
    pub fn apply(&self, q: usize, l: &[f64; 8], u: &[f64; 8]) -> f64 {
        let g = &self.grads[q];
        let mut r = 0.0;
        for a in 0..4 {
            r += g[a + 4][2] * (u[a + 4] - u[a]);
        }
        for a in 0..8 {
            r += (l[a] - g[a][2]) * u[a];
        }
        r
    }

    /// `L(N_a)` at every Gauss point of one brick for the given corner velocities.
    pub fn operator_images(&self, corner_v: &[[f64; 2]; 8]) -> Vec<[f64; 8]> {
        self.values
            .iter()
            .zip(&self.grads)
            .map(|(n, g)| {
                let mut v = [0.0; 2];
                let mut div = 0.0;
                for a in 0..8 {
                    v[0] += n[a] * corner_v[a][0];
                    v[1] += n[a] * corner_v[a][1];
                    div += g[a][0] * corner_v[a][0] + g[a][1] * corner_v[a][1];
                }
                let mut l = [0.0; 8];
                for a in 0..8 {
                    l[a] = g[a][2] + v[0] * g[a][0] + v[1] * g[a][1] + div * n[a];
                }
                l
            })
            .collect()
    }
}

fn check_grids(a: &SpaceTimeGrid, b: &SpaceTimeGrid) -> Result<()> {
    if a != b {
        return Err(Error::Shape("velocity and density live on different grids".into()));
    }
    Ok(())
}

/// Normal equations of the least-squares problem on the interior-in-time nodes.
#[derive(Debug, Clone)]
pub struct LsqSystem {
    pub operator: SparseOperator,
    pub load: Vec<f64>,
    pub lifting: SpaceTimeField,
}

impl LsqSystem {
    /// Global node index of the first degree of freedom (start of slice 1).
    pub fn offset(&self) -> usize {
        self.lifting.grid().slice_len()
    }

    pub fn dofs(&self) -> usize {
        self.operator.dim()
    }

    /// Embed a correction vector into a full field (zero on the endpoint slices).
    pub fn embed(&self, c: &[f64]) -> SpaceTimeField {
        let mut values = vec![0.0; self.lifting.grid().node_count()];
        values[self.offset()..self.offset() + c.len()].copy_from_slice(c);
        SpaceTimeField::new(self.lifting.grid().clone(), values).expect("sized from grid")
    }
}

pub fn assemble_lsq(v: &VelocityField, lifting: &SpaceTimeField, cfg: &SolverConfig) -> Result<LsqSystem> {
    assemble_lsq_with_source(v, lifting, None, cfg)
}

/// As [`assemble_lsq`], with an optional extra source `s` inside the residual,
/// `L(c) + s + L(lifting)`. The driver passes `d_t rho^n` here in legacy mode.
pub fn assemble_lsq_with_source(
    v: &VelocityField,
    lifting: &SpaceTimeField,
    source: Option<&SpaceTimeField>,
    cfg: &SolverConfig,
) -> Result<LsqSystem> {
    let grid = lifting.grid();
    check_grids(v.grid(), grid)?;
    if let Some(s) = source {
        check_grids(s.grid(), grid)?;
    }
    let m = grid.slice_len();
    let dofs = (grid.nt() - 2) * m;
    let tables = BrickTables::new(grid);
    let mut builder = TripletBuilder::with_capacity(dofs, 64 * (grid.nt() - 1) * grid.spatial().element_count());
    let mut load = vec![0.0; dofs];
    let vv = v.values();
    let lv = lifting.values();
    let is_dof = |n: usize| n >= m && n < m + dofs;

    for (k, ei, ej) in grid.bricks() {
        let nodes = grid.brick_nodes(k, ei, ej);
        let corner_v: [[f64; 2]; 8] = std::array::from_fn(|a| vv[nodes[a]]);
        let images = tables.operator_images(&corner_v);
        let lift_corners: [f64; 8] = std::array::from_fn(|a| lv[nodes[a]]);
        let mut ke = [[0.0; 8]; 8];
        let mut be = [0.0; 8];
        for (q, l) in images.iter().enumerate() {
            let w = tables.weights[q];
            let mut lift_res = tables.apply(q, l, &lift_corners);
            if let Some(s) = source {
                lift_res += (0..8).map(|a| tables.values[q][a] * s.values()[nodes[a]]).sum::<f64>();
            }
            for a in 0..8 {
                be[a] -= w * lift_res * l[a];
                for b in 0..8 {
                    ke[a][b] += w * l[a] * l[b];
                }
            }
        }
        for a in 0..8 {
            if !is_dof(nodes[a]) {
                continue;
            }
            let ra = nodes[a] - m;
            load[ra] += be[a];
            for b in 0..8 {
                if is_dof(nodes[b]) {
                    builder.add(ra, nodes[b] - m, ke[a][b]);
                }
            }
        }
    }
    let mut operator = builder.build(true);
    if cfg.lsq_eps > 0.0 {
        operator = operator.add_scaled(cfg.lsq_eps, &space_time_mass(grid));
    }
    Ok(LsqSystem {
        operator,
        load,
        lifting: lifting.clone(),
    })
}

/// Trilinear mass matrix restricted to the interior-in-time nodes.
pub fn space_time_mass(grid: &SpaceTimeGrid) -> SparseOperator {
    let m = grid.slice_len();
    let dofs = (grid.nt() - 2) * m;
    let tables = BrickTables::new(grid);
    let mut me = [[0.0; 8]; 8];
    for (q, n) in tables.values.iter().enumerate() {
        for a in 0..8 {
            for b in 0..8 {
                me[a][b] += tables.weights[q] * n[a] * n[b];
            }
        }
    }
    let mut builder = TripletBuilder::new(dofs);
    for (k, ei, ej) in grid.bricks() {
        let nodes = grid.brick_nodes(k, ei, ej);
        for a in 0..8 {
            if nodes[a] < m || nodes[a] >= m + dofs {
                continue;
            }
            for b in 0..8 {
                if nodes[b] >= m && nodes[b] < m + dofs {
                    builder.add(nodes[a] - m, nodes[b] - m, me[a][b]);
                }
            }
        }
    }
    builder.build(true)
}

#[derive(Debug, Clone)]
pub struct TransportSolve {
    pub rho: SpaceTimeField,
    pub iterations: usize,
    pub residual: f64,
}

/// Solve the normal equations and return `lifting + c`. The endpoint slices are
/// copied from the lifting untouched.
pub fn solve_transport(sys: &LsqSystem, cfg: &SolverConfig) -> Result<TransportSolve> {
    let max_iter = cfg.cg_max_iter.unwrap_or(10 * sys.dofs());
    let out = pcg_jacobi(&sys.operator, &sys.load, cfg.cg_tol, max_iter)?;
    let mut values = sys.lifting.values().to_vec();
    let off = sys.offset();
    for (dst, c) in values[off..off + out.x.len()].iter_mut().zip(&out.x) {
        *dst += c;
    }
    Ok(TransportSolve {
        rho: SpaceTimeField::new(sys.lifting.grid().clone(), values)?,
        iterations: out.iterations,
        residual: out.residual,
    })
}

/// `int_Q (d_t rho + div(v rho))^2` by 2x2x2 Gauss on every brick.
pub fn lsq_residual(rho: &SpaceTimeField, v: &VelocityField) -> Result<f64> {
    Ok(brick_residuals(rho, v)?.iter().sum())
}

/// The squared residual integrated over each time interval `[t_k, t_{k+1}]`.
pub(crate) fn brick_residuals(rho: &SpaceTimeField, v: &VelocityField) -> Result<Vec<f64>> {
    let grid = rho.grid();
    check_grids(v.grid(), grid)?;
    let tables = BrickTables::new(grid);
    let mut per_interval = vec![0.0; grid.nt() - 1];
    let (rv, vv) = (rho.values(), v.values());
    for (k, ei, ej) in grid.bricks() {
        let nodes = grid.brick_nodes(k, ei, ej);
        let corner_v: [[f64; 2]; 8] = std::array::from_fn(|a| vv[nodes[a]]);
        let corners: [f64; 8] = std::array::from_fn(|a| rv[nodes[a]]);
        for (q, l) in tables.operator_images(&corner_v).iter().enumerate() {
            let r = tables.apply(q, l, &corners);
            per_interval[k] += tables.weights[q] * r * r;
        }
    }
    Ok(per_interval)
}

/// `J(c) = 1/2 int_Q L(lifting + c)^2` for a correction on the interior slices.
pub fn lsq_objective(sys: &LsqSystem, v: &VelocityField, c: &[f64]) -> Result<f64> {
    if c.len() != sys.dofs() {
        return Err(Error::Shape(format!("correction has {} entries, expected {}", c.len(), sys.dofs())));
    }
    let mut rho = sys.embed(c);
    for (r, l) in rho.values_mut().iter_mut().zip(sys.lifting.values()) {
        *r += l;
    }
    Ok(0.5 * lsq_residual(&rho, v)?)
}

/// Gradient `A c - b` of [`lsq_objective`] (without the Tikhonov term when `lsq_eps = 0`).
pub fn lsq_gradient(sys: &LsqSystem, c: &[f64]) -> Vec<f64> {
    let mut g = sys.operator.mul(c);
    for (gi, bi) in g.iter_mut().zip(&sys.load) {
        *gi -= bi;
    }
    g
}
