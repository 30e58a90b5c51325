//! Write a 16-bit PGM, load it as a density on a coarser grid, normalize the pair
//! and export the linear blend as frames.

use otmorph::fields::{export_frames, load_density, write_pgm16, FrameFormat};
use otmorph::{prepare_pair, SolverConfig, SpaceTimeField};

fn ring(n: usize, r0: f64) -> Vec<u16> {
    let mut px = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let (x, y) = (c as f64 / (n - 1) as f64 - 0.5, r as f64 / (n - 1) as f64 - 0.5);
            let d = (x.hypot(y) - r0) / 0.06;
            px.push((20000.0 + 40000.0 * (-d * d).exp()) as u16);
        }
    }
    px
}

fn main() -> otmorph::Result<()> {
    let dir = std::env::temp_dir().join("otmorph-image-roundtrip");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let (pa, pb) = (dir.join("small.pgm"), dir.join("large.pgm"));
    write_pgm16(&pa, 128, 128, &ring(128, 0.15))?;
    write_pgm16(&pb, 128, 128, &ring(128, 0.3))?;

    let cfg = SolverConfig::default();
    let grid = cfg.grid()?;
    let raw0 = load_density(&pa, grid.spatial())?;
    let raw1 = load_density(&pb, grid.spatial())?;
    println!("raw masses {:.4} {:.4}", raw0.integral(), raw1.integral());
    let (rho0, rho1) = prepare_pair(&raw0, &raw1, &cfg)?;
    println!("normalized {:.4} {:.4}, min {:.4}", rho0.integral(), rho1.integral(), rho0.min().min(rho1.min()));

    let blend = SpaceTimeField::from_fn(&grid, |t, x, y| {
        let (a, b) = (rho0.sample([x, y]), rho1.sample([x, y]));
        a + t * (b - a)
    });
    let frames = export_frames(&blend, dir.join("frames"), FrameFormat::Pgm16)?;
    println!("{} frames in {}", frames.len(), dir.join("frames").display());
    Ok(())
}
