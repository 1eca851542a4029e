//! File formats, run configuration and the commands behind the `stsv`
//! binary.
//!
//! Every CSV written here starts with `# key=value` comment lines; the
//! readers skip `#` lines, so the files stay plain CSV for other tools.

pub mod commands;
pub mod config;
pub mod panel;
pub mod report;
pub mod weights_file;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use commands::{
    cmd_estimate, cmd_moments, cmd_simulate, cmd_summarize, cmd_weights, EstimateOutcome,
    SimulateOutcome,
};
pub use config::RunConfig;
pub use panel::{read_panel, write_panel, Panel};
pub use report::SummaryReport;
pub use weights_file::{read_coordinates, read_weights, write_weights, WeightsFile, WeightsMeta};

/// Header key carrying the hash of the configuration that produced a file.
pub const CONFIG_HASH_KEY: &str = "config_hash";
/// Header key carrying the content hash of the weights a panel was
/// simulated with.
pub const WEIGHTS_HASH_KEY: &str = "weights_hash";

/// 16 hex digits of the SHA-256 of a value's JSON form.
pub fn hash_of<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(short_hash(&json))
}

pub(crate) fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

/// `# key=value` lines at the top of a text file.
pub fn read_header(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let Some(rest) = line.strip_prefix('#') else { break };
        if let Some((k, v)) = rest.trim().split_once('=') {
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    Ok(out)
}

pub fn header_value(path: impl AsRef<Path>, key: &str) -> Result<Option<String>> {
    Ok(read_header(path)?
        .into_iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

/// Opens `path` for writing and emits the comment header.
pub(crate) fn create_with_header(path: &Path, header: &[(&str, &str)]) -> Result<BufWriter<File>> {
    let mut out = create(path)?;
    for (k, v) in header {
        writeln!(out, "# {k}={v}").map_err(|e| Error::io(path, e))?;
    }
    Ok(out)
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let mut w = create_with_header(&p, &[("config_hash", "abc"), ("seed", "4")]).unwrap();
        writeln!(w, "a,b\n1,2").unwrap();
        drop(w);
        assert_eq!(header_value(&p, "seed").unwrap().as_deref(), Some("4"));
        assert_eq!(header_value(&p, "config_hash").unwrap().as_deref(), Some("abc"));
        assert_eq!(header_value(&p, "nope").unwrap(), None);
    }

    #[test]
    fn hashes_are_stable_and_short() {
        let a = hash_of(&(1, "x")).unwrap();
        assert_eq!(a, hash_of(&(1, "x")).unwrap());
        assert_ne!(a, hash_of(&(2, "x")).unwrap());
        assert_eq!(a.len(), 16);
    }
}
