//! Binary field snapshots and Gibbs-trace CSV export.
//!
//! Snapshot layout (all little-endian):
//!
//! ```text
//! b"CHSNAP01" | u32 nx | u32 ny | nx*ny f64 a-values | nx*ny f64 b-values
//! ```
//!
//! Values are row-major. Domain lengths are not stored; readers supply them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{FieldPair, GridSpec, ScalarField};
use crate::solver::GibbsPoint;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"CHSNAP01";

pub fn encode_snapshot(f: &FieldPair) -> Vec<u8> {
    let g = f.grid();
    let mut out = Vec::with_capacity(16 + 16 * g.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(g.nx as u32).to_le_bytes());
    out.extend_from_slice(&(g.ny as u32).to_le_bytes());
    for v in f.a.values().iter().chain(f.b.values()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode a snapshot, placing it on a domain of size `lx` x `ly`.
pub fn decode_snapshot(bytes: &[u8], lx: f64, ly: f64) -> std::result::Result<FieldPair, String> {
    if bytes.len() < 16 || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err("missing CHSNAP01 header".into());
    }
    let nx = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let ny = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let n = nx
        .checked_mul(ny)
        .ok_or_else(|| "grid size overflows".to_string())?;
    let expected = 16 + 16 * n;
    if bytes.len() != expected {
        return Err(format!(
            "expected {expected} bytes for a {nx}x{ny} grid, found {}",
            bytes.len()
        ));
    }
    let grid = GridSpec::new(nx, ny, lx, ly).map_err(|e| e.to_string())?;
    let vals: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (a, b) = vals.split_at(n);
    let a = ScalarField::from_values(grid, a.to_vec()).map_err(|e| e.to_string())?;
    let b = ScalarField::from_values(grid, b.to_vec()).map_err(|e| e.to_string())?;
    FieldPair::new(a, b).map_err(|e| e.to_string())
}

pub fn write_snapshot(path: &Path, f: &FieldPair) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    w.write_all(&encode_snapshot(f))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path, lx: f64, ly: f64) -> Result<FieldPair> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes, lx, ly).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

/// Read a snapshot onto a unit-spacing grid (`lx = nx`, `ly = ny`), for
/// consumers that only need cell values.
pub fn read_snapshot_cells(path: &Path) -> Result<FieldPair> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let dims = |r: std::ops::Range<usize>| {
        bytes
            .get(r)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as f64)
            .unwrap_or(0.0)
    };
    let (nx, ny) = (dims(8..12), dims(12..16));
    decode_snapshot(&bytes, nx, ny).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

/// Write the trace as CSV with header `step,t,gibbs`.
pub fn write_gibbs_csv(path: &Path, trace: &[GibbsPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "t", "gibbs"])?;
    for p in trace {
        w.write_record([
            p.step.to_string(),
            p.t.to_string(),
            format!("{:e}", p.gibbs),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_gibbs_csv(path: &Path) -> Result<Vec<GibbsPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["step", "t", "gibbs"] {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unexpected header {headers:?}"),
        });
    }
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let (step, t, gibbs): (usize, f64, f64) = rec?;
        out.push(GibbsPoint { step, t, gibbs });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FieldPair {
        let g = GridSpec::new(5, 4, 2.0, 3.0).unwrap();
        FieldPair::new(
            ScalarField::from_fn(g, |x, y| 0.1 + 0.01 * x + 0.02 * y),
            ScalarField::from_fn(g, |x, y| 0.3 - 0.01 * x * y),
        )
        .unwrap()
    }

    #[test]
    fn snapshot_layout_is_fixed() {
        let f = sample();
        let bytes = encode_snapshot(&f);
        assert_eq!(&bytes[..8], b"CHSNAP01");
        assert_eq!(&bytes[8..12], &5u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 2 * 20 * 8);
        let first_b = f64::from_le_bytes(bytes[16 + 160..16 + 168].try_into().unwrap());
        assert_eq!(first_b, f.b.values()[0]);
        assert_eq!(decode_snapshot(&bytes, 2.0, 3.0).unwrap(), f);
    }

    #[test]
    fn snapshot_rejects_corruption() {
        let bytes = encode_snapshot(&sample());
        assert!(decode_snapshot(&bytes[..bytes.len() - 1], 2.0, 3.0).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_snapshot(&bad, 2.0, 3.0).is_err());
    }

    #[test]
    fn gibbs_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        let trace = vec![
            GibbsPoint {
                step: 0,
                t: 0.0,
                gibbs: 3.0428781412345,
            },
            GibbsPoint {
                step: 1,
                t: 0.02,
                gibbs: -1.5e-7,
            },
        ];
        write_gibbs_csv(&p, &trace).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("step,t,gibbs\n"));
        assert_eq!(read_gibbs_csv(&p).unwrap(), trace);
    }
}
