use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::record::{MetricRow, RunRecord};

pub const CSV_HEADER: &str = "iter,kl_star_pi,kl_pi_star,dualgap_beta,dualgap,residual";

/// 17 significant digits, enough to round-trip any double.
fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_string(rows: &[MetricRow]) -> String {
    let mut out = String::with_capacity(32 + rows.len() * 128);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let cols = [
            r.kl_star_pi,
            r.kl_pi_star,
            r.dualgap_beta,
            r.dualgap,
            r.residual,
        ]
        .map(fmt_float);
        out.push_str(&format!("{},{}\n", r.iter, cols.join(",")));
    }
    out
}

pub fn write_csv(record: &RunRecord, path: impl AsRef<Path>) -> Result<()> {
    write_text(path, &csv_string(&record.rows))
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

/// Parses a trajectory CSV written by [`write_csv`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

pub fn parse_csv(text: &str) -> std::result::Result<Vec<MetricRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(format!("expected header {CSV_HEADER:?}, found {other:?}")),
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(format!(
                "line {}: expected 6 columns, found {}",
                k + 2,
                f.len()
            ));
        }
        let num = |i: usize| {
            f[i].parse::<f64>()
                .map_err(|e| format!("line {}: column {}: {e}", k + 2, i + 1))
        };
        rows.push(MetricRow {
            iter: f[0]
                .parse()
                .map_err(|e| format!("line {}: iter: {e}", k + 2))?,
            kl_star_pi: num(1)?,
            kl_pi_star: num(2)?,
            dualgap_beta: num(3)?,
            dualgap: num(4)?,
            residual: num(5)?,
        });
    }
    Ok(rows)
}

pub(crate) fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(iter: usize, x: f64) -> MetricRow {
        MetricRow {
            iter,
            kl_star_pi: x,
            kl_pi_star: x / 3.0,
            dualgap_beta: 0.1 + x,
            dualgap: 1e-300,
            residual: x.sqrt(),
        }
    }

    #[test]
    fn header_is_exact_and_round_trip_is_bit_exact() {
        let rows: Vec<MetricRow> = (0..20)
            .map(|i| row(i * 7, std::f64::consts::PI / (i + 1) as f64))
            .collect();
        let text = csv_string(&rows);
        assert_eq!(
            text.lines().next().unwrap(),
            "iter,kl_star_pi,kl_pi_star,dualgap_beta,dualgap,residual"
        );
        let back = parse_csv(&text).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn empty_record_is_header_only() {
        assert_eq!(csv_string(&[]), format!("{CSV_HEADER}\n"));
        assert!(parse_csv(&csv_string(&[])).unwrap().is_empty());
    }

    #[test]
    fn io_errors_carry_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.csv");
        let err = read_csv(&missing).unwrap_err().to_string();
        assert!(err.contains("nope.csv"), "{err}");
        assert!(parse_csv("a,b\n").is_err());
    }
}
