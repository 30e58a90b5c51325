//! Per-slice elliptic problems for the operator `-div(rho grad .)` with bilinear
//! elements: the Dirichlet potential problem, the auxiliary Neumann problem that
//! defines the boundary constant, and nodal velocity recovery.

use crate::driver::SolverConfig;
use crate::error::{Error, Result};
use crate::fields::ScalarField2D;
use crate::linalg::{norm, pcg_jacobi, SparseOperator, TripletBuilder};
use crate::mesh::{quad4, Grid2D, QuadratureRule};

/// Perimeter of the unit square.
pub const BOUNDARY_LENGTH: f64 = 4.0;

/// Stiffness matrix `A_ij = int rho grad(psi_i) . grad(psi_j)` with `rho`
/// interpolated bilinearly, 2x2 Gauss per element.
pub fn assemble_stiffness(rho: &ScalarField2D) -> Result<SparseOperator> {
    check_positive(rho, 0.0)?;
    let g = rho.grid();
    let (hx, hy) = (g.hx(), g.hy());
    let rule = QuadratureRule::<2>::gauss(2);
    let tables: Vec<_> = rule.iter().map(|(p, w)| (quad4(*p), w * hx * hy)).collect();
    let mut b = TripletBuilder::with_capacity(g.node_count(), 16 * g.element_count());
    let rv = rho.values();
    for (ei, ej) in g.elements() {
        let nodes = g.element_nodes(ei, ej);
        let mut ke = [[0.0; 4]; 4];
        for ((vals, grads), w) in &tables {
            let coef: f64 = (0..4).map(|a| vals[a] * rv[nodes[a]]).sum();
            for a in 0..4 {
                let ga = [grads[a][0] / hx, grads[a][1] / hy];
                for c in 0..4 {
                    let gc = [grads[c][0] / hx, grads[c][1] / hy];
                    ke[a][c] += w * coef * (ga[0] * gc[0] + ga[1] * gc[1]);
                }
            }
        }
        for a in 0..4 {
            for c in 0..4 {
                b.add(nodes[a], nodes[c], ke[a][c]);
            }
        }
    }
    Ok(b.build(true))
}

/// Consistent bilinear mass matrix.
pub fn mass_matrix(g: &Grid2D) -> SparseOperator {
    let rule = QuadratureRule::<2>::gauss(2);
    let area = g.hx() * g.hy();
    let mut me = [[0.0; 4]; 4];
    for (p, w) in rule.iter() {
        let (v, _) = quad4(*p);
        for a in 0..4 {
            for c in 0..4 {
                me[a][c] += w * area * v[a] * v[c];
            }
        }
    }
    let mut b = TripletBuilder::with_capacity(g.node_count(), 16 * g.element_count());
    for (ei, ej) in g.elements() {
        let nodes = g.element_nodes(ei, ej);
        for a in 0..4 {
            for c in 0..4 {
                b.add(nodes[a], nodes[c], me[a][c]);
            }
        }
    }
    b.build(true)
}

/// `int_{boundary} psi_i ds` for every node.
pub fn boundary_load(g: &Grid2D) -> Vec<f64> {
    let mut load = vec![0.0; g.node_count()];
    let (nx, ny) = (g.nx(), g.ny());
    for i in 0..nx - 1 {
        for j in [0, ny - 1] {
            load[g.index(i, j)] += 0.5 * g.hx();
            load[g.index(i + 1, j)] += 0.5 * g.hx();
        }
    }
    for j in 0..ny - 1 {
        for i in [0, nx - 1] {
            load[g.index(i, j)] += 0.5 * g.hy();
            load[g.index(i, j + 1)] += 0.5 * g.hy();
        }
    }
    load
}

fn check_positive(rho: &ScalarField2D, floor: f64) -> Result<()> {
    for (node, &value) in rho.values().iter().enumerate() {
        if !(value >= floor) || !value.is_finite() {
            return Err(Error::Ellipticity { node, value, floor });
        }
    }
    Ok(())
}

fn same_grid(a: &ScalarField2D, b: &ScalarField2D) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::Shape("coefficient and right-hand side grids differ".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PotentialSolve {
    pub phi: ScalarField2D,
    pub iterations: usize,
    pub residual: f64,
}

/// Dirichlet problem `-div(rho grad phi) = rhs`, `phi = boundary_value` on the boundary.
///
/// The Galerkin system is solved for `phi - boundary_value`, which has
/// homogeneous boundary data, and the constant is added back afterwards.
pub fn solve_potential(
    rho: &ScalarField2D,
    rhs: &ScalarField2D,
    boundary_value: f64,
    cfg: &SolverConfig,
) -> Result<PotentialSolve> {
    same_grid(rho, rhs)?;
    check_positive(rho, 0.5 * cfg.beta_min)?;
    let g = rho.grid();
    let stiffness = assemble_stiffness(rho)?;
    let load = mass_matrix(g).mul(rhs.values());
    let interior: Vec<bool> = g.boundary_mask().iter().map(|b| !b).collect();
    let (reduced, map) = stiffness.restrict(&interior);
    let b: Vec<f64> = map.iter().map(|&n| load[n]).collect();
    let max_iter = cfg.cg_max_iter.unwrap_or(10 * reduced.dim());
    let out = pcg_jacobi(&reduced, &b, cfg.cg_tol, max_iter)?;
    let mut phi = vec![boundary_value; g.node_count()];
    for (r, &n) in map.iter().enumerate() {
        phi[n] = boundary_value + out.x[r];
    }
    Ok(PotentialSolve {
        phi: ScalarField2D::new(g.clone(), phi)?,
        iterations: out.iterations,
        residual: out.residual,
    })
}

#[derive(Debug, Clone)]
pub struct NeumannSolve {
    pub eta: ScalarField2D,
    /// `(1/|boundary|) int dt_rho * eta`.
    pub constant: f64,
    pub iterations: usize,
    /// Relative size of the load component removed to make the system compatible.
    pub projection_residual: f64,
}

/// Auxiliary problem `-div(rho grad eta) = 0`, `rho d_n eta = 1` and the
/// boundary constant it defines.
///
/// The unit flux datum has nonzero total, so the load is projected onto the
/// range of the (singular) stiffness matrix by removing its mean, and `eta`
/// is fixed by the zero-mean gauge.
pub fn solve_eta_and_constant(
    rho: &ScalarField2D,
    dt_rho: &ScalarField2D,
    cfg: &SolverConfig,
) -> Result<NeumannSolve> {
    same_grid(rho, dt_rho)?;
    check_positive(rho, 0.5 * cfg.beta_min)?;
    let g = rho.grid();
    let stiffness = assemble_stiffness(rho)?;
    let mut load = boundary_load(g);
    let raw_norm = norm(&load);
    let mean = load.iter().sum::<f64>() / load.len() as f64;
    for l in &mut load {
        *l -= mean;
    }
    let projection_residual = mean.abs() * (load.len() as f64).sqrt() / raw_norm;
    let max_iter = cfg.cg_max_iter.unwrap_or(10 * stiffness.dim());
    let out = pcg_jacobi(&stiffness, &load, cfg.cg_tol, max_iter)?;
    let mut eta = out.x;
    let shift = g.integrate(&eta);
    for e in &mut eta {
        *e -= shift;
    }
    let mass = mass_matrix(g);
    let constant = crate::linalg::dot(dt_rho.values(), &mass.mul(&eta)) / BOUNDARY_LENGTH;
    Ok(NeumannSolve {
        eta: ScalarField2D::new(g.clone(), eta)?,
        constant,
        iterations: out.iterations,
        projection_residual,
    })
}

/// Nodal gradient recovery: average of the bilinear element gradients of the
/// adjacent elements, evaluated at the node, then zeroed on the boundary.
pub fn velocity_from_potential(phi: &ScalarField2D) -> Vec<[f64; 2]> {
    let g = phi.grid();
    let v = phi.values();
    let mut acc = vec![[0.0; 2]; g.node_count()];
    let mut count = vec![0u8; g.node_count()];
    for (ei, ej) in g.elements() {
        let nodes = g.element_nodes(ei, ej);
        for (a, &node) in nodes.iter().enumerate() {
            let xi = [(a & 1) as f64, ((a >> 1) & 1) as f64];
            let (_, grads) = quad4(xi);
            let mut gx = 0.0;
            let mut gy = 0.0;
            for c in 0..4 {
                gx += grads[c][0] * v[nodes[c]];
                gy += grads[c][1] * v[nodes[c]];
            }
            acc[node][0] += gx / g.hx();
            acc[node][1] += gy / g.hy();
            count[node] += 1;
        }
    }
    for (a, c) in acc.iter_mut().zip(&count) {
        let c = *c as f64;
        a[0] /= c;
        a[1] /= c;
    }
    for &b in g.boundary() {
        acc[b] = [0.0, 0.0];
    }
    acc
}
