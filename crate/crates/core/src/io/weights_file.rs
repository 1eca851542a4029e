//! Weights as `i,j,w` triplets plus a JSON sidecar with site labels and
//! neighbour statistics.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{create_with_header, csv_reader, read_json, short_hash, write_json, CONFIG_HASH_KEY, WEIGHTS_HASH_KEY};
use crate::error::{Error, Result};
use crate::weights::WeightsMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsMeta {
    pub n: usize,
    pub row_normalized: bool,
    /// Label of site `i` (row `i` of the matrix).
    pub site_ids: Vec<String>,
    /// How the matrix was built, e.g. `queen 7x14` or `distance <= 15 miles`.
    pub construction: String,
    pub mean_neighbors: f64,
    pub sparsity_percent: f64,
    pub isolated_sites: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub weights_hash: String,
}

impl WeightsMeta {
    pub fn describe(
        w: &WeightsMatrix,
        site_ids: Vec<String>,
        construction: impl Into<String>,
        coordinates: Option<Vec<(f64, f64)>>,
        config_hash: Option<String>,
    ) -> Result<Self> {
        if site_ids.len() != w.n() {
            return Err(Error::InvalidDimension(format!(
                "{} site ids for a {}-site weights matrix",
                site_ids.len(),
                w.n()
            )));
        }
        let isolated_sites = w.isolated_sites().iter().map(|&i| site_ids[i].clone()).collect();
        Ok(WeightsMeta {
            n: w.n(),
            row_normalized: w.is_row_normalized(),
            construction: construction.into(),
            mean_neighbors: w.mean_neighbors(),
            sparsity_percent: w.sparsity_percent(),
            isolated_sites,
            coordinates,
            config_hash,
            weights_hash: weights_hash(w),
            site_ids,
        })
    }
}

#[derive(Debug, Clone)]
pub struct WeightsFile {
    pub matrix: WeightsMatrix,
    pub meta: WeightsMeta,
}

/// Content hash of a weights matrix (size, flag and exact entries).
pub fn weights_hash(w: &WeightsMatrix) -> String {
    let mut bytes = Vec::with_capacity(16 + 24 * w.nnz());
    bytes.extend_from_slice(&(w.n() as u64).to_le_bytes());
    bytes.push(w.is_row_normalized() as u8);
    for (i, j, v) in w.triplets() {
        bytes.extend_from_slice(&(i as u64).to_le_bytes());
        bytes.extend_from_slice(&(j as u64).to_le_bytes());
        bytes.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    short_hash(&bytes)
}

/// `weights.csv` -> `weights.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn write_weights(path: impl AsRef<Path>, w: &WeightsMatrix, meta: &WeightsMeta) -> Result<()> {
    let path = path.as_ref();
    let mut header = vec![(WEIGHTS_HASH_KEY, meta.weights_hash.as_str())];
    if let Some(h) = &meta.config_hash {
        header.insert(0, (CONFIG_HASH_KEY, h.as_str()));
    }
    let mut out = create_with_header(path, &header)?;
    let err = |e| Error::io(path, e);
    writeln!(out, "i,j,w").map_err(err)?;
    for (i, j, v) in w.triplets() {
        writeln!(out, "{i},{j},{v:?}").map_err(err)?;
    }
    out.flush().map_err(err)?;
    write_json(&sidecar_path(path), meta)
}

#[derive(Deserialize)]
struct Triplet {
    i: usize,
    j: usize,
    w: f64,
}

/// Reads triplets and, when present, the sidecar. Without a sidecar the
/// sites are labelled `0..n` with `n` one past the largest index, and the
/// matrix counts as row-normalized when every nonempty row sums to one.
pub fn read_weights(path: impl AsRef<Path>) -> Result<WeightsFile> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["i", "j", "w"] {
        return Err(Error::InvalidInput(format!(
            "{}: expected header i,j,w",
            path.display()
        )));
    }
    let triplets = rdr
        .deserialize::<Triplet>()
        .map(|r| r.map(|t| (t.i, t.j, t.w)))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let side = sidecar_path(path);
    let meta: Option<WeightsMeta> = if side.exists() { Some(read_json(&side)?) } else { None };
    let n = match &meta {
        Some(m) => m.n,
        None => triplets.iter().map(|t| t.0.max(t.1) + 1).max().unwrap_or(0),
    };
    let row_normalized = match &meta {
        Some(m) => m.row_normalized,
        None => {
            let mut sums = vec![0.0; n];
            for &(i, _, v) in &triplets {
                sums[i] += v;
            }
            sums.iter().all(|&s| s == 0.0 || (s - 1.0).abs() <= 1e-12)
        }
    };
    let matrix = WeightsMatrix::from_triplets(n, triplets, row_normalized)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let meta = match meta {
        Some(m) => {
            if m.site_ids.len() != n {
                return Err(Error::InvalidInput(format!(
                    "{}: {} site ids for n = {n}",
                    side.display(),
                    m.site_ids.len()
                )));
            }
            m
        }
        None => WeightsMeta::describe(
            &matrix,
            (0..n).map(|i| i.to_string()).collect(),
            "external",
            None,
            super::header_value(path, CONFIG_HASH_KEY)?,
        )?,
    };
    Ok(WeightsFile { matrix, meta })
}

#[derive(Deserialize)]
struct CoordRecord {
    site_id: String,
    lat: f64,
    lon: f64,
}

/// `site_id,lat,lon` in degrees.
pub fn read_coordinates(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<(f64, f64)>)> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    let mut seen = HashSet::new();
    for (k, rec) in rdr.deserialize::<CoordRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        if !(rec.lat.is_finite() && rec.lon.is_finite()) || rec.lat.abs() > 90.0 {
            return Err(Error::InvalidInput(format!(
                "{}: record {}: malformed coordinates ({}, {}) for site {}",
                path.display(),
                k + 1,
                rec.lat,
                rec.lon,
                rec.site_id
            )));
        }
        if !seen.insert(rec.site_id.clone()) {
            return Err(Error::InvalidInput(format!(
                "{}: site {} listed twice",
                path.display(),
                rec.site_id
            )));
        }
        ids.push(rec.site_id);
        coords.push((rec.lat, rec.lon));
    }
    if ids.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no coordinates (expected header site_id,lat,lon)",
            path.display()
        )));
    }
    Ok((ids, coords))
}
