//! Follow characteristics of a rotation: forward and backward flows, the
//! accumulated divergence, and RK4 accuracy against the closed form.

use otmorph::oracle::{flow_with_divergence, integrate_flow, trajectory, AnalyticVelocity, Direction};
use otmorph::SolverConfig;

fn main() {
    let cfg = SolverConfig::default();
    let rot = AnalyticVelocity::unbounded(|_t, x: [f64; 2]| [-(x[1] - 0.5), x[0] - 0.5]);
    let x0 = [0.7, 0.5];

    let path = trajectory(&rot, Direction::Plus, 1.0, 0.0, x0, &cfg);
    println!("{} RK4 steps", path.times.len() - 1);
    for (t, p) in path.times.iter().zip(&path.positions).step_by(path.times.len() / 5) {
        println!("  t {t:.3}  ({:.6}, {:.6})", p[0], p[1]);
    }

    let end = integrate_flow(&rot, Direction::Plus, 1.0, 0.0, x0, &cfg);
    let exact = [0.5 + 0.2 * 1f64.cos(), 0.5 + 0.2 * 1f64.sin()];
    println!("error vs closed form {:.2e}", (end[0] - exact[0]).hypot(end[1] - exact[1]));

    // X_- from 0 to 1 undoes X_+ from 0 to 1
    let back = integrate_flow(&rot, Direction::Minus, 1.0, 0.0, end, &cfg);
    println!("round trip {:.2e}", (back[0] - x0[0]).hypot(back[1] - x0[1]));

    let spread = AnalyticVelocity::unbounded(|_t, x: [f64; 2]| [0.3 * (x[0] - 0.5), 0.0]);
    let (_, div) = flow_with_divergence(&spread, Direction::Plus, 1.0, 0.0, [0.6, 0.5], &cfg);
    println!("integrated divergence {div:.6} (exact 0.3)");
}
