//! 1D quadratic Wasserstein distance between x-marginals by quantile inversion.

use otmorph::oracle::{w2_1d_oracle, x_marginal, Density1D};
use otmorph::{Grid2D, ScalarField2D};

fn gauss(c: f64, s: f64) -> impl Fn(f64) -> f64 {
    move |x| (-(x - c).powi(2) / (2.0 * s * s)).exp()
}

// W2^2 scales with total mass, so compare unit-mass profiles
fn unit(d: Density1D) -> Density1D {
    let m = d.mass();
    Density1D {
        values: d.values.iter().map(|v| v / m).collect(),
        ..d
    }
}

fn main() -> otmorph::Result<()> {
    // equal-width Gaussians: W2^2 is the squared shift, up to truncation at the walls
    let f = unit(Density1D::from_fn(401, gauss(0.4, 0.08)));
    let g = unit(Density1D::from_fn(401, gauss(0.6, 0.08)));
    println!("shifted Gaussians   W2^2 = {:.6e}", w2_1d_oracle(&f, &g)?);

    let narrow = unit(Density1D::from_fn(401, gauss(0.5, 0.05)));
    let wide = unit(Density1D::from_fn(401, gauss(0.5, 0.12)));
    println!("different widths    W2^2 = {:.6e}", w2_1d_oracle(&narrow, &wide)?);

    let grid = Grid2D::new(65, 65)?;
    let a = ScalarField2D::from_fn(&grid, |x, y| 1.0 + gauss(0.35, 0.1)(x) * (1.0 + y));
    let b = ScalarField2D::from_fn(&grid, |x, y| 1.0 + gauss(0.65, 0.1)(x) * (1.0 + y));
    let (ma, mb) = (unit(x_marginal(&a)), unit(x_marginal(&b)));
    println!("2D field marginals  W2^2 = {:.6e}", w2_1d_oracle(&ma, &mb)?);
    Ok(())
}
