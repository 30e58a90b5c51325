use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{write_pgm16, SpaceTimeField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    Pgm16,
    Csv,
}

impl FromStr for FrameFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pgm16" => Ok(FrameFormat::Pgm16),
            "csv" => Ok(FrameFormat::Csv),
            other => Err(format!("unknown frame format {other:?}")),
        }
    }
}

/// Write one file per slice, `frame_0000.pgm` (or `.csv`) onwards.
///
/// `pgm16` frames share one affine intensity map from the sequence-wide
/// `[min, max]` onto `0..=65535`. CSV frames carry `x,y,value` rows in
/// row-major order (x fastest) with 17 significant digits.
pub fn export_frames(rho: &SpaceTimeField, dir: impl AsRef<Path>, format: FrameFormat) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| Error::Export {
        path: dir.to_path_buf(),
        source,
    })?;
    let grid = rho.grid();
    let g = grid.spatial();
    let (lo, hi) = (rho.min(), rho.max());
    let span = hi - lo;
    let mut written = Vec::with_capacity(grid.nt());
    for k in 0..grid.nt() {
        let slice = rho.slice_values(k);
        let path = match format {
            FrameFormat::Pgm16 => {
                let path = dir.join(format!("frame_{k:04}.pgm"));
                let pixels: Vec<u16> = slice
                    .iter()
                    .map(|&v| {
                        if span > 0.0 {
                            ((v - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
                        } else {
                            0
                        }
                    })
                    .collect();
                write_pgm16(&path, g.nx(), g.ny(), &pixels)?;
                path
            }
            FrameFormat::Csv => {
                let path = dir.join(format!("frame_{k:04}.csv"));
                let mut out = String::from("x,y,value\n");
                for j in 0..g.ny() {
                    for i in 0..g.nx() {
                        let [x, y] = g.position(i, j);
                        let _ = writeln!(
                            out,
                            "{},{},{}",
                            format_g17(x),
                            format_g17(y),
                            format_g17(slice[g.index(i, j)])
                        );
                    }
                }
                std::fs::write(&path, out).map_err(|source| Error::Export {
                    path: path.clone(),
                    source,
                })?;
                path
            }
        };
        written.push(path);
    }
    Ok(written)
}

/// C `printf("%.17g")` formatting.
pub fn format_g17(x: f64) -> String {
    const P: i32 = 17;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-4..P).contains(&exp) {
        let fixed = format!("{:.*}", (P - 1 - exp) as usize, x);
        strip_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
