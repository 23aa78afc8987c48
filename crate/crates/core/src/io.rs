//! Field snapshots and diagnostics files.
//!
//! A snapshot is a pair of files sharing a stem: `<stem>.bin` holds the
//! components one after another as little-endian `f64` in row-major axis
//! order, and `<stem>.json` records `dim`, `n_per_axis` and the component
//! names.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::StepRecord;
use crate::forms::{basis_name, multi_indices, KForm, VectorField};
use crate::grid::{ScalarField, TorusGrid};
use crate::maps::TorusMap;
use crate::scalar::Real;

/// Sidecar metadata of a snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub dim: usize,
    pub n_per_axis: usize,
    pub components: Vec<String>,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes named components sampled on one grid.
pub fn write_snapshot<T: Real>(
    stem: &Path,
    names: &[String],
    fields: &[&ScalarField<T>],
) -> Result<()> {
    let grid = *fields
        .first()
        .ok_or_else(|| Error::Io("snapshot without components".into()))?
        .grid();
    if names.len() != fields.len() {
        return Err(Error::Io(format!(
            "{} names for {} components",
            names.len(),
            fields.len()
        )));
    }
    let mut bytes = Vec::with_capacity(fields.len() * grid.point_count() * 8);
    for f in fields {
        grid.ensure_same(f.grid())?;
        for v in f.values() {
            bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    fs::write(with_ext(stem, "bin"), bytes)?;
    let meta = SnapshotMeta {
        dim: grid.dim(),
        n_per_axis: grid.n_per_axis(),
        components: names.to_vec(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(with_ext(stem, "json"), json)?;
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`].
pub fn read_snapshot<T: Real>(stem: &Path) -> Result<(SnapshotMeta, Vec<ScalarField<T>>)> {
    let meta: SnapshotMeta = serde_json::from_str(&fs::read_to_string(with_ext(stem, "json"))?)
        .map_err(|e| Error::Io(format!("{}: {e}", with_ext(stem, "json").display())))?;
    let grid = TorusGrid::new(meta.dim, meta.n_per_axis)?;
    let bytes = fs::read(with_ext(stem, "bin"))?;
    let count = grid.point_count();
    if bytes.len() != meta.components.len() * count * 8 {
        return Err(Error::Io(format!(
            "expected {} bytes for {} components, found {}",
            meta.components.len() * count * 8,
            meta.components.len(),
            bytes.len()
        )));
    }
    let fields = bytes
        .chunks_exact(count * 8)
        .map(|chunk| {
            let values = chunk
                .chunks_exact(8)
                .map(|b| T::lit(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
                .collect();
            ScalarField::new(grid, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((meta, fields))
}

pub fn write_vector_field<T: Real>(stem: &Path, x: &VectorField<T>) -> Result<()> {
    let names: Vec<String> = (1..=x.grid().dim()).map(|a| format!("x{a}")).collect();
    write_snapshot(stem, &names, &x.components().iter().collect::<Vec<_>>())
}

/// Components named by their increasing multi-index, e.g. `d13`.
pub fn write_kform<T: Real>(stem: &Path, a: &KForm<T>) -> Result<()> {
    let names: Vec<String> = multi_indices(a.grid().dim(), a.degree())
        .iter()
        .map(|i| basis_name(i))
        .collect();
    write_snapshot(stem, &names, &a.components().iter().collect::<Vec<_>>())
}

/// The displacement `u` of `F = id + u`.
pub fn write_map<T: Real>(stem: &Path, f: &TorusMap<T>) -> Result<()> {
    let names: Vec<String> = (1..=f.dim()).map(|a| format!("u{a}")).collect();
    write_snapshot(
        stem,
        &names,
        &f.displacement().components().iter().collect::<Vec<_>>(),
    )
}

pub fn read_map<T: Real>(stem: &Path) -> Result<TorusMap<T>> {
    let (_, comps) = read_snapshot(stem)?;
    TorusMap::new(VectorField::new(comps)?)
}

/// Header of the diagnostics CSV.
pub const CSV_HEADER: &str = "t,phi,mu_inf,minH,gradnorm,dt,residual";

fn sig17(v: f64) -> String {
    format!("{v:.16e}")
}

/// One CSV line per record, 17 significant digits; a missing residual is `NaN`.
pub fn diagnostics_csv<T: Real>(records: &[StepRecord<T>]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let cols = [
            r.t.to_f64_lossy(),
            r.phi.to_f64_lossy(),
            r.mu_inf.to_f64_lossy(),
            r.min_density.to_f64_lossy(),
            r.grad_norm.to_f64_lossy(),
            r.dt.to_f64_lossy(),
            r.residual.map_or(f64::NAN, |v| v.to_f64_lossy()),
        ];
        out.push_str(&cols.iter().map(|&v| sig17(v)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

pub fn write_diagnostics_csv<T: Real>(path: &Path, records: &[StepRecord<T>]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(diagnostics_csv(records).as_bytes())?;
    Ok(())
}
