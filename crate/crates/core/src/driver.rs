//! Fixed-point coupling of the elliptic and transport solvers.
//!
//! Starting from the linear blend of the endpoint densities, each sweep
//! 1. solves the Neumann auxiliary problem on every slice for the boundary constant,
//! 2. solves the Dirichlet potential problem with the discrete time derivative of
//!    the current density as source,
//! 3. recovers the nodal velocity as the potential's gradient,
//! 4. solves the space-time least-squares transport problem for the next density.

use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic::{solve_eta_and_constant, solve_potential, velocity_from_potential};
use crate::error::{Error, Result};
use crate::fields::{time_derivative, ScalarField2D, SpaceTimeField, VelocityField};
use crate::mesh::{interpolate_lifting, quad4, QuadratureRule, SpaceTimeGrid};
use crate::transport::{assemble_lsq_with_source, lsq_residual, solve_transport, BrickTables};

/// Every numerical knob of a run. Serialized as flat JSON with these key names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Lower density bound after remapping.
    pub beta_min: f64,
    /// Largest accepted boundary mismatch between the endpoint images.
    pub boundary_tol: f64,
    pub cg_tol: f64,
    /// `None` means ten times the system size.
    pub cg_max_iter: Option<usize>,
    /// Tikhonov shift of the least-squares normal equations.
    pub lsq_eps: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    /// Runge-Kutta substeps per slice interval in the characteristic oracle.
    pub rk4_substeps: usize,
    /// Keep the extra `d_t rho^n` term in the least-squares load.
    pub legacy_rhs: bool,
    /// Fixed-point update `rho <- rho + relaxation * (F(rho) - rho)`.
    pub relaxation: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta_min: 0.1,
            boundary_tol: 0.05,
            cg_tol: 1e-10,
            cg_max_iter: None,
            lsq_eps: 0.0,
            fp_tol: 1e-6,
            fp_max_iter: 50,
            nx: 33,
            ny: 33,
            nt: 11,
            rk4_substeps: 8,
            legacy_rhs: false,
            relaxation: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.beta_min > 0.0 && self.beta_min <= 0.5) {
            return fail(format!("beta_min must lie in (0, 0.5], got {}", self.beta_min));
        }
        for (name, v) in [
            ("boundary_tol", self.boundary_tol),
            ("cg_tol", self.cg_tol),
            ("fp_tol", self.fp_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.lsq_eps >= 0.0) {
            return fail(format!("lsq_eps must be non-negative, got {}", self.lsq_eps));
        }
        if self.fp_max_iter < 1 {
            return fail("fp_max_iter must be at least 1".into());
        }
        if self.cg_max_iter == Some(0) {
            return fail("cg_max_iter must be at least 1".into());
        }
        if self.rk4_substeps < 1 {
            return fail("rk4_substeps must be at least 1".into());
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return fail(format!("relaxation must lie in (0, 1], got {}", self.relaxation));
        }
        if self.nx < 3 || self.ny < 3 || self.nt < 3 {
            return fail(format!(
                "grid must have at least 3 nodes per axis, got {}x{}x{}",
                self.nx, self.ny, self.nt
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<SpaceTimeGrid> {
        crate::mesh::build_space_time_grid(self.nx, self.ny, self.nt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `||rho^{n+1} - rho^n||_{L2(Q)} / ||rho^0||_{L2(Q)}`.
    pub residual_l2: f64,
    pub residual_max: f64,
    pub transport_cost: f64,
    pub lsq_residual: f64,
    /// `|mass(t_k) - mass(0)| / mass(0)` per slice.
    pub mass_drift: Vec<f64>,
    pub cg_potential: Vec<usize>,
    pub cg_neumann: Vec<usize>,
    pub cg_transport: usize,
    pub neumann_projection: Vec<f64>,
    pub boundary_constants: Vec<f64>,
    pub clamped_nodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub per_iteration_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub config: SolverConfig,
    pub records: Vec<IterationRecord>,
    pub verdict: Verdict,
    /// Wall-clock data; the only part of a report that differs between reruns.
    pub timings: Timings,
}

impl IterationReport {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("at least one sweep is always run")
    }

    pub fn converged(&self) -> bool {
        self.verdict == Verdict::Converged
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointRun {
    pub rho: SpaceTimeField,
    pub velocity: VelocityField,
    pub report: IterationReport,
}

struct SliceSolve {
    velocity: Vec<[f64; 2]>,
    constant: f64,
    projection: f64,
    cg_neumann: usize,
    cg_potential: usize,
}

/// Velocity of the current density iterate, one independent solve per slice.
fn sweep_velocity(rho: &SpaceTimeField, dt_rho: &SpaceTimeField, cfg: &SolverConfig) -> Result<Vec<SliceSolve>> {
    (0..rho.grid().nt())
        .into_par_iter()
        .map(|k| {
            let r = rho.slice(k);
            let d = dt_rho.slice(k);
            let aux = solve_eta_and_constant(&r, &d, cfg)?;
            let pot = solve_potential(&r, &d, aux.constant, cfg)?;
            Ok(SliceSolve {
                velocity: velocity_from_potential(&pot.phi),
                constant: aux.constant,
                projection: aux.projection_residual,
                cg_neumann: aux.iterations,
                cg_potential: pot.iterations,
            })
        })
        .collect()
}

/// Run the fixed-point iteration from the linear blend of `rho0` and `rho1`.
///
/// Non-convergence is reported through the verdict, not as an error.
pub fn run_fixed_point(rho0: &ScalarField2D, rho1: &ScalarField2D, cfg: &SolverConfig) -> Result<FixedPointRun> {
    cfg.validate()?;
    let started = Instant::now();
    let spatial = rho0.grid().clone();
    let grid = SpaceTimeGrid::new(spatial, cfg.nt)?;
    let lifting = interpolate_lifting(rho0, rho1, &grid)?;
    let reference = lifting.l2_norm();
    let mass0 = rho0.integral();
    let floor = 0.5 * cfg.beta_min;
    let m = grid.slice_len();
    let nt = grid.nt();

    let mut rho = lifting.clone();
    let mut velocity = VelocityField::zeros(&grid);
    let mut records = Vec::new();
    let mut per_iteration = Vec::new();
    let mut verdict = Verdict::MaxIterations;

    for iteration in 1..=cfg.fp_max_iter {
        let tick = Instant::now();
        let wrap = |e: Error| Error::Iteration {
            iteration,
            source: Box::new(e),
        };
        let dt_rho = time_derivative(&rho);
        let slices = sweep_velocity(&rho, &dt_rho, cfg).map_err(wrap)?;
        let v = VelocityField::from_slices(&grid, slices.iter().map(|s| s.velocity.clone()).collect()).map_err(wrap)?;
        let source = cfg.legacy_rhs.then_some(&dt_rho);
        let system = assemble_lsq_with_source(&v, &lifting, source, cfg).map_err(wrap)?;
        let solved = solve_transport(&system, cfg).map_err(wrap)?;

        let mut next = solved.rho.into_values();
        if cfg.relaxation != 1.0 {
            for (n, old) in next.iter_mut().zip(rho.values()) {
                *n = old + cfg.relaxation * (*n - old);
            }
        }
        let mut clamped = 0;
        for value in &mut next[m..(nt - 1) * m] {
            if *value < floor {
                *value = floor;
                clamped += 1;
            }
        }
        if clamped > 0 {
            warn!("iteration {iteration}: clamped {clamped} density values to {floor}");
        }
        let next = SpaceTimeField::new(grid.clone(), next).map_err(wrap)?;

        let residual_l2 = next.l2_distance(&rho) / reference;
        let residual_max = next.max_distance(&rho);
        let mass_drift = next
            .slice_masses()
            .iter()
            .map(|mk| (mk - mass0).abs() / mass0)
            .collect();
        records.push(IterationRecord {
            iteration,
            residual_l2,
            residual_max,
            transport_cost: bb_cost(&next, &v).map_err(wrap)?,
            lsq_residual: lsq_residual(&next, &v).map_err(wrap)?,
            mass_drift,
            cg_potential: slices.iter().map(|s| s.cg_potential).collect(),
            cg_neumann: slices.iter().map(|s| s.cg_neumann).collect(),
            cg_transport: solved.iterations,
            neumann_projection: slices.iter().map(|s| s.projection).collect(),
            boundary_constants: slices.iter().map(|s| s.constant).collect(),
            clamped_nodes: clamped,
        });
        rho = next;
        velocity = v;
        per_iteration.push(tick.elapsed().as_secs_f64());
        if residual_l2 <= cfg.fp_tol {
            verdict = Verdict::Converged;
            break;
        }
    }

    Ok(FixedPointRun {
        rho,
        velocity,
        report: IterationReport {
            config: cfg.clone(),
            records,
            verdict,
            timings: Timings {
                total_seconds: started.elapsed().as_secs_f64(),
                per_iteration_seconds: per_iteration,
            },
        },
    })
}

fn check_grids(a: &SpaceTimeGrid, b: &SpaceTimeGrid) -> Result<()> {
    if a != b {
        return Err(Error::Shape("density and velocity live on different grids".into()));
    }
    Ok(())
}

/// Transport cost `int_0^1 int rho |v|^2` with trilinear fields and 2x2x2 Gauss.
pub fn bb_cost(rho: &SpaceTimeField, v: &VelocityField) -> Result<f64> {
    let grid = rho.grid();
    check_grids(grid, v.grid())?;
    let tables = BrickTables::new(grid);
    let (rv, vv) = (rho.values(), v.values());
    let mut cost = 0.0;
    for (k, ei, ej) in grid.bricks() {
        let nodes = grid.brick_nodes(k, ei, ej);
        for (q, n) in tables.values.iter().enumerate() {
            let mut r = 0.0;
            let mut vel = [0.0; 2];
            for a in 0..8 {
                r += n[a] * rv[nodes[a]];
                vel[0] += n[a] * vv[nodes[a]][0];
                vel[1] += n[a] * vv[nodes[a]][1];
            }
            cost += tables.weights[q] * r * (vel[0] * vel[0] + vel[1] * vel[1]);
        }
    }
    Ok(cost)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationResidual {
    /// `||d_t rho + div(v rho)||_{L2(Omega)}` at each slice time.
    pub per_slice: Vec<f64>,
    /// Space-time squared residual, as in [`lsq_residual`].
    pub total: f64,
}

/// Strong residual of the conservation law, slice by slice and over the cylinder.
///
/// On a slice the time derivative is the discrete one of [`time_derivative`] and
/// the flux divergence is taken from the bilinear interpolants of `v` and `rho`.
pub fn conservation_residual(rho: &SpaceTimeField, v: &VelocityField) -> Result<ConservationResidual> {
    let grid = rho.grid();
    check_grids(grid, v.grid())?;
    let g = grid.spatial();
    let (hx, hy) = (g.hx(), g.hy());
    let dt_rho = time_derivative(rho);
    let rule = QuadratureRule::<2>::gauss(2);
    let tables: Vec<_> = rule.iter().map(|(p, w)| (quad4(*p), w * hx * hy)).collect();
    let mut per_slice = Vec::with_capacity(grid.nt());
    for k in 0..grid.nt() {
        let r = rho.slice_values(k);
        let d = dt_rho.slice_values(k);
        let vel = v.slice(k);
        let mut sum = 0.0;
        for (ei, ej) in g.elements() {
            let nodes = g.element_nodes(ei, ej);
            for ((vals, grads), w) in &tables {
                let mut res = 0.0;
                let (mut rq, mut rx, mut ry) = (0.0, 0.0, 0.0);
                let (mut v1, mut v2, mut div) = (0.0, 0.0, 0.0);
                for a in 0..4 {
                    let n = nodes[a];
                    res += vals[a] * d[n];
                    rq += vals[a] * r[n];
                    rx += grads[a][0] / hx * r[n];
                    ry += grads[a][1] / hy * r[n];
                    v1 += vals[a] * vel[n][0];
                    v2 += vals[a] * vel[n][1];
                    div += grads[a][0] / hx * vel[n][0] + grads[a][1] / hy * vel[n][1];
                }
                res += v1 * rx + v2 * ry + div * rq;
                sum += w * res * res;
            }
        }
        per_slice.push(sum.sqrt());
    }
    Ok(ConservationResidual {
        per_slice,
        total: lsq_residual(rho, v)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_space_time_grid;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = SolverConfig::default();
        c.validate().unwrap();
        let back: SolverConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: SolverConfig = serde_json::from_str(r#"{"nt": 5, "fp_tol": 1e-8}"#).unwrap();
        assert_eq!(partial.nt, 5);
        assert_eq!(partial.beta_min, 0.1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = SolverConfig::default();
        c.beta_min = 0.7;
        assert!(c.validate().is_err());
        let mut c = SolverConfig::default();
        c.fp_max_iter = 0;
        assert!(c.validate().is_err());
        let mut c = SolverConfig::default();
        c.cg_tol = 0.0;
        assert!(c.validate().is_err());
        let mut c = SolverConfig::default();
        c.nx = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn cost_of_zero_and_constant_velocity() {
        let grid = build_space_time_grid(5, 6, 4).unwrap();
        let rho = SpaceTimeField::from_fn(&grid, |t, x, _| 0.5 + t * x);
        assert_eq!(bb_cost(&rho, &VelocityField::zeros(&grid)).unwrap(), 0.0);
        let ones = SpaceTimeField::from_fn(&grid, |_, _, _| 1.0);
        let c = bb_cost(&ones, &VelocityField::constant(&grid, [0.3, -0.4])).unwrap();
        assert!((c - 0.25).abs() < 1e-14);
    }

    #[test]
    fn conservation_residual_of_blend_without_motion() {
        let grid = build_space_time_grid(9, 9, 5).unwrap();
        let g = grid.spatial();
        let r0 = ScalarField2D::from_fn(g, |x, y| 0.5 + 0.2 * x * y);
        let r1 = ScalarField2D::from_fn(g, |x, _| 0.4 + 0.3 * x);
        let lift = interpolate_lifting(&r0, &r1, &grid).unwrap();
        let res = conservation_residual(&lift, &VelocityField::zeros(&grid)).unwrap();
        // ||rho1 - rho0||_L2 of the bilinear interpolant, by fine quadrature
        let rule = QuadratureRule::<2>::gauss(3);
        let mut sq = 0.0;
        for (ei, ej) in g.elements() {
            let nodes = g.element_nodes(ei, ej);
            for (p, w) in rule.iter() {
                let (v, _) = quad4(*p);
                let d: f64 = (0..4).map(|a| v[a] * (r1.values()[nodes[a]] - r0.values()[nodes[a]])).sum();
                sq += w * g.hx() * g.hy() * d * d;
            }
        }
        for r in &res.per_slice {
            assert!((r - sq.sqrt()).abs() < 1e-12);
        }

        let stationary = interpolate_lifting(&r0, &r0, &grid).unwrap();
        let res = conservation_residual(&stationary, &VelocityField::zeros(&grid)).unwrap();
        assert!(res.per_slice.iter().all(|&r| r <= 1e-10) && res.total <= 1e-10);
    }

    #[test]
    fn identical_endpoints_are_stationary() {
        let mut cfg = SolverConfig::default();
        cfg.nx = 9;
        cfg.ny = 9;
        cfg.nt = 5;
        let g = cfg.grid().unwrap().spatial().clone();
        let r = ScalarField2D::from_fn(&g, |x, y| 0.3 + 0.5 * (x * (1.0 - x) * y * (1.0 - y)) * 16.0);
        let run = run_fixed_point(&r, &r, &cfg).unwrap();
        assert!(run.report.converged());
        assert_eq!(run.report.iterations(), 1);
        assert_eq!(run.velocity.max_norm(), 0.0);
        assert_eq!(run.report.last().transport_cost, 0.0);
    }

    #[test]
    fn single_sweep_contract() {
        let mut cfg = SolverConfig::default();
        cfg.nx = 9;
        cfg.ny = 9;
        cfg.nt = 5;
        cfg.fp_max_iter = 1;
        let g = cfg.grid().unwrap().spatial().clone();
        let bump = |c: f64| move |x: f64, y: f64| 0.3 + 0.6 * (-((x - c).powi(2) + (y - 0.5).powi(2)) / 0.02).exp();
        let r0 = ScalarField2D::from_fn(&g, bump(0.45));
        let r1 = ScalarField2D::from_fn(&g, bump(0.55));
        let run = run_fixed_point(&r0, &r1, &cfg).unwrap();
        assert_eq!(run.report.iterations(), 1);
        assert!(run.velocity.vanishes_on_boundary());
        assert_eq!(run.rho.slice(0), r0);
        assert_eq!(run.rho.slice(4), r1);
    }
}
