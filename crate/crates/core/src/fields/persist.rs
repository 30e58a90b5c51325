//! Bit-exact field storage: raw little-endian `f64` payload next to a JSON
//! sidecar describing dimensions, ordering and a SHA-256 checksum.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fields::{SpaceTimeField, VelocityField};
use crate::mesh::SpaceTimeGrid;

pub const ORDERING: &str = "slice-major, row-major within a slice (x fastest), components interleaved";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub kind: String,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub components: usize,
    pub dtype: String,
    pub ordering: String,
    pub payload: String,
    pub sha256: String,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("f64"), base.with_extension("json"))
}

fn write_raw(base: &Path, kind: &str, dims: (usize, usize, usize), components: usize, data: &[f64]) -> Result<()> {
    let (payload, sidecar) = paths(base);
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let meta = FieldSidecar {
        kind: kind.into(),
        nx: dims.0,
        ny: dims.1,
        nt: dims.2,
        components,
        dtype: "f64-le".into(),
        ordering: ORDERING.into(),
        payload: payload
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    };
    std::fs::write(&payload, &bytes).map_err(|source| Error::Export {
        path: payload.clone(),
        source,
    })?;
    let json = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
    std::fs::write(&sidecar, json).map_err(|source| Error::Export { path: sidecar, source })
}

/// Payload values, sidecar, and whether the payload still matches its checksum.
fn read_raw(base: &Path, kind: &str) -> Result<(FieldSidecar, Vec<f64>, bool)> {
    let (payload, sidecar) = paths(base);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: FieldSidecar = serde_json::from_str(&text).map_err(|e| Error::Artifact {
        path: sidecar.clone(),
        message: e.to_string(),
    })?;
    if meta.kind != kind {
        return Err(Error::Artifact {
            path: sidecar,
            message: format!("expected a {kind} field, found {}", meta.kind),
        });
    }
    let bytes = std::fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let expected = meta.nx * meta.ny * meta.nt * meta.components * 8;
    if bytes.len() != expected {
        return Err(Error::Artifact {
            path: payload,
            message: format!("payload has {} bytes, sidecar implies {expected}", bytes.len()),
        });
    }
    let intact = hex::encode(Sha256::digest(&bytes)) == meta.sha256;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((meta, values, intact))
}

pub fn write_scalar_field(base: impl AsRef<Path>, field: &SpaceTimeField) -> Result<()> {
    let g = field.grid();
    write_raw(
        base.as_ref(),
        "scalar",
        (g.spatial().nx(), g.spatial().ny(), g.nt()),
        1,
        field.values(),
    )
}

pub fn write_velocity_field(base: impl AsRef<Path>, field: &VelocityField) -> Result<()> {
    let g = field.grid();
    let flat: Vec<f64> = field.values().iter().flat_map(|v| *v).collect();
    write_raw(
        base.as_ref(),
        "velocity",
        (g.spatial().nx(), g.spatial().ny(), g.nt()),
        2,
        &flat,
    )
}

/// Returns the field and whether its checksum matched.
pub fn read_scalar_field(base: impl AsRef<Path>) -> Result<(SpaceTimeField, bool)> {
    let (meta, values, intact) = read_raw(base.as_ref(), "scalar")?;
    let grid = crate::mesh::build_space_time_grid(meta.nx, meta.ny, meta.nt)?;
    Ok((SpaceTimeField::new(grid, values)?, intact))
}

pub fn read_velocity_field(base: impl AsRef<Path>) -> Result<(VelocityField, bool)> {
    let (meta, values, intact) = read_raw(base.as_ref(), "velocity")?;
    let grid: SpaceTimeGrid = crate::mesh::build_space_time_grid(meta.nx, meta.ny, meta.nt)?;
    let vecs = values.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    Ok((VelocityField::new(grid, vecs)?, intact))
}
