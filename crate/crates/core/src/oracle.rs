//! Independent checks built on characteristics: RK4 flow maps, the two
//! representation formulas for the least-squares density, the Liouville identity,
//! and a 1D Wasserstein distance by quantile inversion.
//!
//! Nothing here touches the finite-element assembly; derivatives of velocity are
//! taken by central differences of the interpolated field.

use log::warn;
use rayon::prelude::*;

use crate::driver::SolverConfig;
use crate::error::{Error, Result};
use crate::fields::{ScalarField2D, SpaceTimeField, VelocityField};
use crate::mesh::SpaceTimeGrid;

/// Anything that can be asked for a velocity at `(t, x)`.
pub trait VelocitySource: Sync {
    fn velocity(&self, t: f64, x: [f64; 2]) -> [f64; 2];

    /// `(slice interval, spatial step)` of the underlying discretization.
    fn spacing(&self) -> Option<(f64, f64)> {
        None
    }

    /// Whether trajectories are confined to the unit square.
    fn confined(&self) -> bool {
        true
    }
}

impl VelocitySource for VelocityField {
    fn velocity(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        self.sample(t, x)
    }

    fn spacing(&self) -> Option<(f64, f64)> {
        Some((self.grid().dt(), self.grid().spatial().hx()))
    }
}

/// A closure `(t, x) -> v` used as a velocity.
pub struct AnalyticVelocity<F> {
    f: F,
    confined: bool,
}

impl<F: Fn(f64, [f64; 2]) -> [f64; 2] + Sync> AnalyticVelocity<F> {
    pub fn new(f: F) -> Self {
        Self { f, confined: true }
    }

    /// A field whose trajectories may leave the unit square.
    pub fn unbounded(f: F) -> Self {
        Self { f, confined: false }
    }
}

impl<F: Fn(f64, [f64; 2]) -> [f64; 2] + Sync> VelocitySource for AnalyticVelocity<F> {
    fn velocity(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        (self.f)(t, x)
    }

    fn confined(&self) -> bool {
        self.confined
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `dX/ds = v(s, X)`.
    Plus,
    /// `dX/ds = -v(1 - s, X)`, the time-reversed flow.
    Minus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
    pub direction: Direction,
}

fn slice_dt<V: VelocitySource + ?Sized>(v: &V, cfg: &SolverConfig) -> f64 {
    v.spacing().map(|s| s.0).unwrap_or(1.0 / (cfg.nt - 1) as f64)
}

/// Step used for the central-difference divergence: half the spatial mesh size.
pub fn divergence_step<V: VelocitySource + ?Sized>(v: &V, cfg: &SolverConfig) -> f64 {
    0.5 * v.spacing().map(|s| s.1).unwrap_or(1.0 / (cfg.nx - 1) as f64)
}

pub fn divergence<V: VelocitySource + ?Sized>(v: &V, t: f64, x: [f64; 2], h: f64) -> f64 {
    let xp = v.velocity(t, [x[0] + h, x[1]])[0];
    let xm = v.velocity(t, [x[0] - h, x[1]])[0];
    let yp = v.velocity(t, [x[0], x[1] + h])[1];
    let ym = v.velocity(t, [x[0], x[1] - h])[1];
    (xp - xm + yp - ym) / (2.0 * h)
}

struct Integrator<'a, V: ?Sized> {
    v: &'a V,
    dir: Direction,
    h_div: f64,
    with_divergence: bool,
}

impl<V: VelocitySource + ?Sized> Integrator<'_, V> {
    /// Right-hand side for `(X, int div)`.
    fn rhs(&self, s: f64, y: [f64; 3]) -> [f64; 3] {
        let x = [y[0], y[1]];
        let (time, sign) = match self.dir {
            Direction::Plus => (s, 1.0),
            Direction::Minus => (1.0 - s, -1.0),
        };
        let w = self.v.velocity(time, x);
        let div = if self.with_divergence {
            sign * divergence(self.v, time, x, self.h_div)
        } else {
            0.0
        };
        [sign * w[0], sign * w[1], div]
    }

    fn confine(&self, y: &mut [f64; 3]) {
        if !self.v.confined() {
            return;
        }
        for c in &mut y[..2] {
            let clamped = c.clamp(0.0, 1.0);
            if (*c - clamped).abs() > 1e-9 {
                warn!("trajectory left the domain by {:.3e}; clamped", (*c - clamped).abs());
            }
            *c = clamped;
        }
    }

    /// Classical RK4 from `t` to `s` in `n` uniform steps; calls `visit` after each step.
    fn run(&self, s: f64, t: f64, x: [f64; 2], n: usize, mut visit: impl FnMut(f64, [f64; 3])) -> [f64; 3] {
        let mut y = [x[0], x[1], 0.0];
        if s == t {
            return y;
        }
        let h = (s - t) / n as f64;
        for j in 0..n {
            let tau = t + j as f64 * h;
            let k1 = self.rhs(tau, y);
            let k2 = self.rhs(tau + 0.5 * h, add(y, k1, 0.5 * h));
            let k3 = self.rhs(tau + 0.5 * h, add(y, k2, 0.5 * h));
            let k4 = self.rhs(tau + h, add(y, k3, h));
            for c in 0..3 {
                y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
            self.confine(&mut y);
            visit(if j + 1 == n { s } else { tau + h }, y);
        }
        y
    }
}

#[inline]
fn add(y: [f64; 3], k: [f64; 3], h: f64) -> [f64; 3] {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2]]
}

fn step_count<V: VelocitySource + ?Sized>(v: &V, s: f64, t: f64, cfg: &SolverConfig) -> usize {
    let intervals = (s - t).abs() / slice_dt(v, cfg);
    ((intervals * cfg.rk4_substeps as f64 - 1e-9).ceil() as usize).max(1)
}

/// `X_dir(s, t, x)`: start at `x` at time `t` and integrate to time `s`.
pub fn integrate_flow<V: VelocitySource + ?Sized>(
    v: &V,
    dir: Direction,
    s: f64,
    t: f64,
    x: [f64; 2],
    cfg: &SolverConfig,
) -> [f64; 2] {
    let it = Integrator {
        v,
        dir,
        h_div: 0.0,
        with_divergence: false,
    };
    let y = it.run(s, t, x, step_count(v, s, t, cfg), |_, _| {});
    [y[0], y[1]]
}

/// As [`integrate_flow`], also returning `int_t^s div(w)(tau, X(tau)) dtau`, where
/// `w` is the field actually driving the flow (`v` or `-v(1 - .)`).
pub fn flow_with_divergence<V: VelocitySource + ?Sized>(
    v: &V,
    dir: Direction,
    s: f64,
    t: f64,
    x: [f64; 2],
    cfg: &SolverConfig,
) -> ([f64; 2], f64) {
    let it = Integrator {
        v,
        dir,
        h_div: divergence_step(v, cfg),
        with_divergence: true,
    };
    let y = it.run(s, t, x, step_count(v, s, t, cfg), |_, _| {});
    ([y[0], y[1]], y[2])
}

pub fn trajectory<V: VelocitySource + ?Sized>(
    v: &V,
    dir: Direction,
    s: f64,
    t: f64,
    x: [f64; 2],
    cfg: &SolverConfig,
) -> FlowTrajectory {
    let it = Integrator {
        v,
        dir,
        h_div: 0.0,
        with_divergence: false,
    };
    let mut times = vec![t];
    let mut positions = vec![x];
    if s != t {
        it.run(s, t, x, step_count(v, s, t, cfg), |tau, y| {
            times.push(tau);
            positions.push([y[0], y[1]]);
        });
    }
    FlowTrajectory {
        times,
        positions,
        direction: dir,
    }
}

/// Pointwise `(1-t) rho0(X(0))^2 / rho_prev(t,x) + t rho1(X(1))^2 / rho_prev(t,x)`
/// with `X = X_+(., t, x)`.
pub fn representation_at<V: VelocitySource + ?Sized>(
    v: &V,
    rho_prev: f64,
    rho0: impl Fn([f64; 2]) -> f64,
    rho1: impl Fn([f64; 2]) -> f64,
    t: f64,
    x: [f64; 2],
    cfg: &SolverConfig,
) -> f64 {
    let a = rho0(integrate_flow(v, Direction::Plus, 0.0, t, x, cfg));
    let b = rho1(integrate_flow(v, Direction::Plus, 1.0, t, x, cfg));
    (1.0 - t) * a * a / rho_prev + t * b * b / rho_prev
}

/// Nodal evaluation of the quotient representation formula for the next density.
pub fn representation_density<V: VelocitySource + ?Sized>(
    rho_prev: &SpaceTimeField,
    v: &V,
    rho0: &ScalarField2D,
    rho1: &ScalarField2D,
    cfg: &SolverConfig,
) -> Result<SpaceTimeField> {
    let grid = rho_prev.grid();
    let floor = 0.5 * cfg.beta_min;
    if let Some((node, &value)) = rho_prev.values().iter().enumerate().find(|(_, &r)| !(r >= floor)) {
        return Err(Error::DivisionGuard { node, value, floor });
    }
    let values = nodal(grid, |t, x, n| {
        representation_at(v, rho_prev.values()[n], |p| rho0.sample(p), |p| rho1.sample(p), t, x, cfg)
    });
    SpaceTimeField::new(grid.clone(), values)
}

/// Pointwise two-endpoint formula
/// `(1-t) exp(-int_0^t div v) rho0(X(0)) + t exp(int_t^1 div v) rho1(X(1))`
/// with the divergence accumulated along `X_+(., t, x)`.
pub fn ode_lsq_at<V: VelocitySource + ?Sized>(
    v: &V,
    t: f64,
    x: [f64; 2],
    rho0: impl Fn([f64; 2]) -> f64,
    rho1: impl Fn([f64; 2]) -> f64,
    cfg: &SolverConfig,
) -> f64 {
    if t == 0.0 {
        return rho0(x);
    }
    let (x0, back) = flow_with_divergence(v, Direction::Plus, 0.0, t, x, cfg);
    let (x1, fwd) = flow_with_divergence(v, Direction::Plus, 1.0, t, x, cfg);
    (1.0 - t) * back.exp() * rho0(x0) + t * fwd.exp() * rho1(x1)
}

pub fn ode_lsq_solution<V: VelocitySource + ?Sized>(
    v: &V,
    t: f64,
    x: [f64; 2],
    rho0: &ScalarField2D,
    rho1: &ScalarField2D,
    cfg: &SolverConfig,
) -> f64 {
    ode_lsq_at(v, t, x, |p| rho0.sample(p), |p| rho1.sample(p), cfg)
}

/// [`ode_lsq_solution`] at every node of `grid`.
pub fn ode_lsq_field<V: VelocitySource + ?Sized>(
    v: &V,
    grid: &SpaceTimeGrid,
    rho0: &ScalarField2D,
    rho1: &ScalarField2D,
    cfg: &SolverConfig,
) -> SpaceTimeField {
    let values = nodal(grid, |t, x, _| ode_lsq_solution(v, t, x, rho0, rho1, cfg));
    SpaceTimeField::new(grid.clone(), values).expect("sized from grid")
}

fn nodal(grid: &SpaceTimeGrid, f: impl Fn(f64, [f64; 2], usize) -> f64 + Sync) -> Vec<f64> {
    let g = grid.spatial();
    (0..grid.node_count())
        .into_par_iter()
        .map(|n| {
            let k = n / grid.slice_len();
            let (i, j) = g.coords(n % grid.slice_len());
            f(grid.time(k), g.position(i, j), n)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiouvilleSample {
    pub s: f64,
    pub t: f64,
    pub x: [f64; 2],
}

/// Largest `|det D_x X_+(s,t,x) - exp(int_t^s div v)| / exp(int_t^s div v)`, with
/// the Jacobian from central differences of four perturbed trajectories.
pub fn liouville_check<V: VelocitySource + ?Sized>(v: &V, samples: &[LiouvilleSample], cfg: &SolverConfig) -> f64 {
    let delta = 1e-6;
    samples
        .iter()
        .map(|smp| {
            let flow = |p: [f64; 2]| integrate_flow(v, Direction::Plus, smp.s, smp.t, p, cfg);
            let x = smp.x;
            let xp = flow([x[0] + delta, x[1]]);
            let xm = flow([x[0] - delta, x[1]]);
            let yp = flow([x[0], x[1] + delta]);
            let ym = flow([x[0], x[1] - delta]);
            // divide by the perturbation actually represented in floating point
            let dx = (x[0] + delta) - (x[0] - delta);
            let dy = (x[1] + delta) - (x[1] - delta);
            let j = [
                [(xp[0] - xm[0]) / dx, (yp[0] - ym[0]) / dy],
                [(xp[1] - xm[1]) / dx, (yp[1] - ym[1]) / dy],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let (_, acc) = flow_with_divergence(v, Direction::Plus, smp.s, smp.t, x, cfg);
            let expected = acc.exp();
            (det - expected).abs() / expected
        })
        .fold(0.0, f64::max)
}

/// Nonnegative samples `values[i]` at `origin + i * spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct Density1D {
    pub origin: f64,
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl Density1D {
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Self {
        let spacing = 1.0 / (n - 1) as f64;
        Self {
            origin: 0.0,
            spacing,
            values: (0..n).map(|i| f(i as f64 * spacing)).collect(),
        }
    }

    /// Cumulative trapezoid masses at the nodes.
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.values.len());
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * (w[0] + w[1]) * self.spacing;
            out.push(acc);
        }
        out
    }

    pub fn mass(&self) -> f64 {
        *self.cdf().last().unwrap_or(&0.0)
    }

    /// Inverse of the piecewise-linear CDF.
    fn quantile(&self, cdf: &[f64], m: f64) -> f64 {
        let i = cdf.partition_point(|&f| f <= m).clamp(1, cdf.len() - 1) - 1;
        let cell = cdf[i + 1] - cdf[i];
        let frac = if cell > 0.0 { ((m - cdf[i]) / cell).clamp(0.0, 1.0) } else { 0.0 };
        self.origin + (i as f64 + frac) * self.spacing
    }
}

/// Integral over `y` of a 2D density, as a density in `x`.
pub fn x_marginal(field: &ScalarField2D) -> Density1D {
    let g = field.grid();
    let values = (0..g.nx())
        .map(|i| {
            (0..g.ny())
                .map(|j| {
                    let w = if j == 0 || j + 1 == g.ny() { 0.5 } else { 1.0 };
                    w * g.hy() * field.values()[g.index(i, j)]
                })
                .sum()
        })
        .collect();
    Density1D {
        origin: 0.0,
        spacing: g.hx(),
        values,
    }
}

/// Squared 2-Wasserstein distance `int_0^M |F^-1(m) - G^-1(m)|^2 dm` with
/// piecewise-linear CDFs and midpoint quadrature in mass.
pub fn w2_1d_oracle(f: &Density1D, g: &Density1D) -> Result<f64> {
    if f.values.len() != g.values.len() || f.origin != g.origin || f.spacing != g.spacing {
        return Err(Error::Shape("1D densities must share a grid".into()));
    }
    if f.values.len() < 2 || f.values.iter().chain(&g.values).any(|&v| !(v >= 0.0)) {
        return Err(Error::Shape("1D densities need at least two nonnegative samples".into()));
    }
    let (cf, cg) = (f.cdf(), g.cdf());
    let (mf, mg) = (cf[cf.len() - 1], cg[cg.len() - 1]);
    if !(mf > 0.0) || (mf - mg).abs() > 1e-10 * mf.max(mg).max(1.0) {
        return Err(Error::MassMismatch(mf, mg));
    }
    let n = (20 * f.values.len()).max(10_000);
    let dm = mf / n as f64;
    let sum: f64 = (0..n)
        .map(|k| {
            let m = (k as f64 + 0.5) * dm;
            let d = f.quantile(&cf, m) - g.quantile(&cg, m.min(mg));
            d * d
        })
        .sum();
    Ok(sum * dm)
}
