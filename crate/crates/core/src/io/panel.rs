//! Long-format panels: one `site_id,time,value` row per observation.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use super::{create_with_header, csv_reader};
use crate::error::{Error, Result};

/// `n x T` values (column = period) with the site labels in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub site_ids: Vec<String>,
    pub values: DMatrix<f64>,
}

impl Panel {
    pub fn new(site_ids: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if site_ids.len() != values.nrows() {
            return Err(Error::InvalidDimension(format!(
                "{} site ids for a panel with {} rows",
                site_ids.len(),
                values.nrows()
            )));
        }
        Ok(Panel { site_ids, values })
    }

    /// Sites labelled `0..n`.
    pub fn with_default_ids(values: DMatrix<f64>) -> Self {
        let site_ids = (0..values.nrows()).map(|i| i.to_string()).collect();
        Panel { site_ids, values }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn t_len(&self) -> usize {
        self.values.ncols()
    }

    /// Rows rearranged to follow `order`; every label must be present
    /// exactly once on both sides.
    pub fn reorder(&self, order: &[String]) -> Result<Panel> {
        let index: HashMap<&str, usize> = self
            .site_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let missing: Vec<&str> = order
            .iter()
            .filter(|s| !index.contains_key(s.as_str()))
            .map(String::as_str)
            .collect();
        let wanted: std::collections::HashSet<&str> = order.iter().map(String::as_str).collect();
        let extra: Vec<&str> = self
            .site_ids
            .iter()
            .filter(|s| !wanted.contains(s.as_str()))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::InvalidInput(format!(
                "panel and weights cover different sites; in weights only: [{}]; in panel only: [{}]",
                preview(&missing),
                preview(&extra)
            )));
        }
        let rows: Vec<usize> = order.iter().map(|s| index[s.as_str()]).collect();
        Ok(Panel {
            site_ids: order.to_vec(),
            values: self.values.select_rows(rows.iter()),
        })
    }
}

pub(crate) fn preview(items: &[&str]) -> String {
    const SHOWN: usize = 10;
    let mut s = items.iter().take(SHOWN).copied().collect::<Vec<_>>().join(", ");
    if items.len() > SHOWN {
        s.push_str(&format!(", ... ({} total)", items.len()));
    }
    s
}

#[derive(Deserialize)]
struct Record {
    site_id: String,
    time: i64,
    value: f64,
}

/// Reads a panel; sites keep their order of first appearance.
pub fn read_panel(path: impl AsRef<Path>) -> Result<Panel> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    for col in ["site_id", "time", "value"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::InvalidInput(format!(
                "{}: missing column `{col}` (expected header site_id,time,value)",
                path.display()
            )));
        }
    }
    let mut site_index: HashMap<String, usize> = HashMap::new();
    let mut site_ids = Vec::new();
    let mut records: Vec<(usize, usize, f64)> = Vec::new();
    let mut t_len = 0usize;
    for (line, rec) in rdr.deserialize::<Record>().enumerate() {
        let rec = rec?;
        if rec.time < 0 {
            return Err(Error::InvalidInput(format!(
                "{}: record {}: negative time index {}",
                path.display(),
                line + 1,
                rec.time
            )));
        }
        if !rec.value.is_finite() {
            return Err(Error::InvalidInput(format!(
                "{}: record {}: non-finite value for site {} at time {}",
                path.display(),
                line + 1,
                rec.site_id,
                rec.time
            )));
        }
        let next = site_ids.len();
        let i = *site_index.entry(rec.site_id.clone()).or_insert_with(|| {
            site_ids.push(rec.site_id.clone());
            next
        });
        let t = rec.time as usize;
        t_len = t_len.max(t + 1);
        records.push((i, t, rec.value));
    }
    if records.is_empty() {
        return Err(Error::InvalidInput(format!("{}: panel has no rows", path.display())));
    }
    let n = site_ids.len();
    let mut values = DMatrix::from_element(n, t_len, f64::NAN);
    let mut duplicates = Vec::new();
    for &(i, t, v) in &records {
        if !values[(i, t)].is_nan() {
            duplicates.push(format!("({}, {t})", site_ids[i]));
        }
        values[(i, t)] = v;
    }
    if !duplicates.is_empty() {
        let d: Vec<&str> = duplicates.iter().map(String::as_str).collect();
        return Err(Error::InvalidInput(format!(
            "{}: duplicated (site, time) pairs: {}",
            path.display(),
            preview(&d)
        )));
    }
    let gaps: Vec<String> = (0..n)
        .flat_map(|i| (0..t_len).map(move |t| (i, t)))
        .filter(|&(i, t)| values[(i, t)].is_nan())
        .map(|(i, t)| format!("({}, {t})", site_ids[i]))
        .collect();
    if !gaps.is_empty() {
        let g: Vec<&str> = gaps.iter().map(String::as_str).collect();
        return Err(Error::InvalidInput(format!(
            "{}: panel is not complete over times 0..{t_len}; missing (site, time): {}",
            path.display(),
            preview(&g)
        )));
    }
    Ok(Panel { site_ids, values })
}

/// Writes a panel site by site, with `# key=value` header lines.
pub fn write_panel(path: impl AsRef<Path>, panel: &Panel, header: &[(&str, &str)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create_with_header(path, header)?;
    let err = |e| Error::io(path, e);
    writeln!(out, "site_id,time,value").map_err(err)?;
    for (i, id) in panel.site_ids.iter().enumerate() {
        for t in 0..panel.t_len() {
            // shortest representation that parses back to the same f64
            writeln!(out, "{},{t},{:?}", csv_field(id), panel.values[(i, t)]).map_err(err)?;
        }
    }
    out.flush().map_err(err)
}

pub(crate) fn csv_field(s: &str) -> std::borrow::Cow<'_, str> {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\"")).into()
    } else {
        s.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("panel.csv");
        let values = DMatrix::from_fn(3, 4, |i, t| (i as f64 + 0.1).powf(t as f64 + 0.3) / 7.0 - 1e-300);
        let panel = Panel::new(vec!["a".into(), "b,c".into(), "7".into()], values).unwrap();
        write_panel(&p, &panel, &[("config_hash", "00ff")]).unwrap();
        let back = read_panel(&p).unwrap();
        assert_eq!(back, panel);
    }

    #[test]
    fn rejects_gaps_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        fs::write(&p, "site_id,time,value\na,0,1\na,1,2\nb,1,3\n").unwrap();
        let e = read_panel(&p).unwrap_err().to_string();
        assert!(e.contains("(b, 0)"), "{e}");

        fs::write(&p, "site_id,time,value\na,0,1\na,0,2\n").unwrap();
        let e = read_panel(&p).unwrap_err().to_string();
        assert!(e.contains("duplicated"), "{e}");

        fs::write(&p, "site,time,value\na,0,1\n").unwrap();
        assert!(read_panel(&p).unwrap_err().to_string().contains("site_id"));
    }

    #[test]
    fn comments_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        fs::write(&p, "# note\nsite_id,time,value\nz,1,4\nz,0,3\na,0,1\na,1,2\n").unwrap();
        let panel = read_panel(&p).unwrap();
        assert_eq!(panel.site_ids, vec!["z", "a"]);
        assert_eq!(panel.values[(0, 0)], 3.0);
        let r = panel.reorder(&["a".into(), "z".into()]).unwrap();
        assert_eq!(r.values[(0, 1)], 2.0);
        let e = panel.reorder(&["a".into(), "q".into()]).unwrap_err().to_string();
        assert!(e.contains("q") && e.contains("z"), "{e}");
    }
}
