//! Morph one Gaussian bump into a translated copy and print the iteration history.

use otmorph::{prepare_pair, run_fixed_point, ScalarField2D, SolverConfig};

fn bump(cx: f64, cy: f64) -> impl Fn(f64, f64) -> f64 {
    move |x, y| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * 0.1f64.powi(2))).exp()
}

fn main() -> otmorph::Result<()> {
    let cfg = SolverConfig::default();
    let grid = cfg.grid()?;
    let g = grid.spatial();
    let raw0 = ScalarField2D::from_fn(g, bump(0.4, 0.5));
    let raw1 = ScalarField2D::from_fn(g, bump(0.6, 0.5));
    let (rho0, rho1) = prepare_pair(&raw0, &raw1, &cfg)?;
    let run = run_fixed_point(&rho0, &rho1, &cfg)?;
    for r in &run.report.records {
        println!(
            "iter {:2}  residual {:.3e}  cost {:.6}  lsq {:.3e}  drift {:.2e}  clamped {}",
            r.iteration,
            r.residual_l2,
            r.transport_cost,
            r.lsq_residual,
            r.mass_drift.iter().cloned().fold(0.0, f64::max),
            r.clamped_nodes
        );
    }
    println!("verdict {:?} after {:.2}s", run.report.verdict, run.report.timings.total_seconds);
    Ok(())
}
