//! File output: CSV field dumps, pretty JSON, and a hashed manifest.
//!
//! Every writer here is deterministic: floats print with Rust's
//! shortest-roundtrip formatting, rows follow mesh index order, and the
//! manifest lists files sorted by name. Timestamps and other run-varying
//! data belong in `metadata.json`, which the manifest deliberately skips
//! so that reruns of the same configuration produce byte-identical hashed
//! outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::mesh::{CellField, Mesh, NodeField};
use crate::Result;

/// Writes vertex data as `node,x[,y],value` rows in node order.
pub fn write_node_csv(path: &Path, mesh: &Mesh, field: &NodeField) -> Result<()> {
    field.validate(mesh)?;
    let two_d = mesh.dimension == 2;
    let mut out = String::new();
    out.push_str(if two_d { "node,x,y,value\n" } else { "node,x,value\n" });
    for (j, value) in field.values.iter().enumerate() {
        let [x, y] = mesh.nodes[j];
        if two_d {
            writeln!(out, "{j},{x},{y},{value}").expect("string writes are infallible");
        } else {
            writeln!(out, "{j},{x},{value}").expect("string writes are infallible");
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes cell data as `cell,x[,y],value` rows (coordinates are
/// centroids) in cell order.
pub fn write_cell_csv(path: &Path, mesh: &Mesh, field: &CellField) -> Result<()> {
    field.validate(mesh)?;
    let two_d = mesh.dimension == 2;
    let mut out = String::new();
    out.push_str(if two_d { "cell,x,y,value\n" } else { "cell,x,value\n" });
    for (c, value) in field.values.iter().enumerate() {
        let [x, y] = mesh.centroids[c];
        if two_d {
            writeln!(out, "{c},{x},{y},{value}").expect("string writes are infallible");
        } else {
            writeln!(out, "{c},{x},{value}").expect("string writes are infallible");
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a plot-data CSV from a header line and preformatted rows.
pub fn write_csv_rows<I>(path: &Path, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator,
    I::Item: AsRef<str>,
{
    let mut out = String::with_capacity(256);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row.as_ref());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Serializes a value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Lowercase hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        write!(hex, "{byte:02x}").expect("string writes are infallible");
    }
    hex
}

#[derive(Clone, Debug, Serialize)]
struct ManifestEntry {
    name: String,
    sha256: String,
    bytes: usize,
}

#[derive(Clone, Debug, Serialize)]
struct Manifest {
    files: Vec<ManifestEntry>,
}

/// Hashes the named files inside `dir` and writes `manifest.json` next to
/// them. Entries are sorted by name; `manifest.json` itself and
/// `metadata.json` (the designated home for timestamps) are never listed,
/// keeping the manifest reproducible across reruns.
pub fn write_manifest(dir: &Path, names: &[String]) -> Result<PathBuf> {
    let mut files = Vec::with_capacity(names.len());
    let mut sorted: Vec<&String> = names
        .iter()
        .filter(|n| n.as_str() != "manifest.json" && n.as_str() != "metadata.json")
        .collect();
    sorted.sort();
    sorted.dedup();
    for name in sorted {
        let bytes = fs::read(dir.join(name))?;
        files.push(ManifestEntry {
            name: name.clone(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        });
    }
    let path = dir.join("manifest.json");
    write_json(&path, &Manifest { files })?;
    Ok(path)
}
