//! Solve the two elliptic problems for a fixed density slice and print the
//! boundary constant, solver effort and the resulting velocity range.

use otmorph::elliptic::{solve_eta_and_constant, solve_potential, velocity_from_potential};
use otmorph::{Grid2D, ScalarField2D, SolverConfig};

fn main() -> otmorph::Result<()> {
    let cfg = SolverConfig::default();
    let g = Grid2D::new(65, 65)?;
    let rho = ScalarField2D::from_fn(&g, |x, y| 1.0 + 0.5 * x + 0.2 * y * y);
    // a mass-free time derivative: moves density from left to right
    let dt_rho = ScalarField2D::from_fn(&g, |x, y| (std::f64::consts::PI * x).cos() * (1.0 + 0.1 * y));

    let neumann = solve_eta_and_constant(&rho, &dt_rho, &cfg)?;
    println!(
        "eta: {} CG iterations, load projection {:.2e}, C = {:.6e}",
        neumann.iterations, neumann.projection_residual, neumann.constant
    );

    let pot = solve_potential(&rho, &dt_rho, neumann.constant, &cfg)?;
    println!("phi: {} CG iterations, residual {:.2e}", pot.iterations, pot.residual);

    let v = velocity_from_potential(&pot.phi);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for w in &v {
        lo = lo.min(w[0]);
        hi = hi.max(w[0]);
    }
    println!("v_x in [{lo:.4}, {hi:.4}]");
    Ok(())
}
