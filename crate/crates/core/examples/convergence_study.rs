//! Grid refinement of the elliptic and transport solvers against manufactured
//! solutions, printed in the same CSV as the `convergence` subcommand.

use otmorph::cli::{elliptic_manufactured_error, transport_translation_error};
use otmorph::SolverConfig;

fn main() -> otmorph::Result<()> {
    let cfg = SolverConfig::default();
    println!("case,h,error,order");
    let mut prev: Option<(f64, f64)> = None;
    for n in [8, 16, 32, 64] {
        let (h, e) = (1.0 / n as f64, elliptic_manufactured_error(n, &cfg)?);
        let order = prev.map(|(hp, ep)| format!("{:.3}", (ep / e).ln() / (hp / h).ln())).unwrap_or_default();
        println!("elliptic,{h},{e:.4e},{order}");
        prev = Some((h, e));
    }
    prev = None;
    for n in [8, 16, 32] {
        let (h, e) = (1.0 / n as f64, transport_translation_error(n + 1, n + 1, n / 2 + 1, &cfg)?);
        let order = prev.map(|(hp, ep)| format!("{:.3}", (ep / e).ln() / (hp / h).ln())).unwrap_or_default();
        println!("transport,{h},{e:.4e},{order}");
        prev = Some((h, e));
    }
    Ok(())
}
