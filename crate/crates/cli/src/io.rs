//! CSV and JSON files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use grips::mcmc::ChainStore;
use grips::predict::Summary;
use grips::{ObservedData, Point};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Contents of a data CSV: `lon,lat,y1..yq,x1..xp`. Outcome columns may be
/// absent from prediction files.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub locations: Vec<Point>,
    /// Missing outcomes are NaN.
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

impl Table {
    pub fn into_data(self, path: &Path) -> Result<ObservedData> {
        ObservedData::new(self.locations, self.y, self.x).map_err(|e| CliError::io(path, e))
    }
}

/// Index suffix of a `y<i>` / `x<i>` header.
fn numbered(name: &str, prefix: char) -> Option<usize> {
    name.strip_prefix(prefix)?.parse().ok()
}

fn parse_num(path: &Path, line: usize, col: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::io(path, format!("line {line}, column {col}: cannot parse `{s}` as a number")))
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::io(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 || header[0] != "lon" || header[1] != "lat" {
        return Err(CliError::io(path, "header must start with `lon,lat`"));
    }
    let q = header[2..].iter().take_while(|h| h.starts_with('y')).count();
    let p = header.len() - 2 - q;
    for (i, h) in header[2..2 + q].iter().enumerate() {
        if numbered(h, 'y') != Some(i + 1) {
            return Err(CliError::io(path, format!("expected column `y{}`, found `{h}`", i + 1)));
        }
    }
    for (i, h) in header[2 + q..].iter().enumerate() {
        if numbered(h, 'x') != Some(i + 1) {
            return Err(CliError::io(path, format!("expected column `x{}`, found `{h}`", i + 1)));
        }
    }
    let mut locations = Vec::new();
    let (mut y, mut x) = (Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        if rec.len() != header.len() {
            return Err(CliError::io(path, format!("line {line}: expected {} fields, found {}", header.len(), rec.len())));
        }
        locations.push([parse_num(path, line, "lon", &rec[0])?, parse_num(path, line, "lat", &rec[1])?]);
        for c in 2..2 + q {
            y.push(if rec[c].is_empty() { f64::NAN } else { parse_num(path, line, &header[c], &rec[c])? });
        }
        for c in 2 + q..header.len() {
            x.push(parse_num(path, line, &header[c], &rec[c])?);
        }
    }
    let n = locations.len();
    Ok(Table {
        locations,
        y: DMatrix::from_row_slice(n, q, &y),
        x: DMatrix::from_row_slice(n, p, &x),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn finish(path: &Path, w: csv::Writer<BufWriter<File>>) -> Result<()> {
    w.into_inner()
        .map_err(|e| CliError::io(path, e))?
        .flush()
        .map_err(|e| CliError::io(path, e))
}

/// Shortest representation that parses back to the same value.
fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn write_data(path: &Path, data: &ObservedData) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["lon".to_string(), "lat".to_string()];
    header.extend((1..=data.q()).map(|j| format!("y{j}")));
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(|e| CliError::io(path, e))?;
    for (i, loc) in data.locations().iter().enumerate() {
        let mut rec = vec![num(loc[0]), num(loc[1])];
        rec.extend((0..data.q()).map(|j| num(data.outcomes()[(i, j)])));
        rec.extend((0..data.p()).map(|j| num(data.covariates()[(i, j)])));
        w.write_record(&rec).map_err(|e| CliError::io(path, e))?;
    }
    finish(path, w)
}

pub fn write_chain(path: &Path, chain: &ChainStore) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(chain.columns()).map_err(|e| CliError::io(path, e))?;
    for row in &chain.draws {
        w.write_record(row.iter().map(|&v| num(v))).map_err(|e| CliError::io(path, e))?;
    }
    finish(path, w)
}

/// Column label of a quantile level, e.g. `q02.5` for 0.025.
pub fn quantile_label(p: f64) -> String {
    format!("q{:04.1}", p * 100.0)
}

/// `lon,lat,outcome,mean,<quantiles>,interval_width`, outcomes numbered
/// from 1; the width spans the outermost levels.
pub fn write_summaries(path: &Path, rows: &[Summary], probs: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = ["lon", "lat", "outcome", "mean"].iter().map(|s| s.to_string()).collect();
    header.extend(probs.iter().map(|&p| quantile_label(p)));
    header.push("interval_width".into());
    w.write_record(&header).map_err(|e| CliError::io(path, e))?;
    for s in rows {
        let mut rec = vec![num(s.location[0]), num(s.location[1]), (s.outcome + 1).to_string(), num(s.mean)];
        rec.extend(s.quantiles.iter().map(|&v| num(v)));
        let width = s.quantiles.last().unwrap_or(&f64::NAN) - s.quantiles.first().unwrap_or(&f64::NAN);
        rec.push(num(width));
        w.write_record(&rec).map_err(|e| CliError::io(path, e))?;
    }
    finish(path, w)
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::io(path, e))?;
    }
    finish(path, w)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| CliError::io(path, e))?;
    writeln!(f).and_then(|_| f.flush()).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn labels() {
        assert_eq!(quantile_label(0.025), "q02.5");
        assert_eq!(quantile_label(0.975), "q97.5");
        assert_eq!(quantile_label(0.5), "q50.0");
    }

    #[test]
    fn data_round_trip_is_exact() {
        let locs = vec![[0.1, 1.0 / 3.0], [0.7, 0.2]];
        let y = DMatrix::from_row_slice(2, 2, &[1e-17, f64::NAN, -2.5, std::f64::consts::PI]);
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.123456789012345, 1.0, -7.0]);
        let data = ObservedData::new(locs, y, x).unwrap();
        let dir = tmp();
        let p = dir.path().join("d.csv");
        write_data(&p, &data).unwrap();
        let back = read_table(&p).unwrap().into_data(&p).unwrap();
        assert_eq!(back.locations(), data.locations());
        assert_eq!(back.covariates(), data.covariates());
        assert!(back.value(0, 1).is_none());
        assert_eq!(back.value(1, 1), data.value(1, 1));
        assert_eq!(back.value(0, 0), Some(1e-17));
    }

    #[test]
    fn outcome_columns_are_optional() {
        let dir = tmp();
        let p = dir.path().join("p.csv");
        std::fs::write(&p, "lon,lat,x1,x2\n0.5,0.5,1,2\n").unwrap();
        let t = read_table(&p).unwrap();
        assert_eq!((t.y.ncols(), t.x.ncols()), (0, 2));
    }

    #[test]
    fn malformed_files_are_io_errors() {
        let dir = tmp();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "lat,lon,y1\n0,0,1\n").unwrap();
        assert_eq!(read_table(&p).unwrap_err().exit_code(), 4);
        std::fs::write(&p, "lon,lat,y1,x1\n0,0,abc,1\n").unwrap();
        let e = read_table(&p).unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("y1"), "{e}");
        std::fs::write(&p, "lon,lat,y2\n0,0,1\n").unwrap();
        assert!(read_table(&p).is_err());
        assert_eq!(read_table(&dir.path().join("missing.csv")).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn simulated_data_round_trips_bitwise() {
        use grips::synth::{simulate_dataset, SimulationSpec};
        let mut spec = SimulationSpec::univariate(60, 8, 1.0, 5.0, 0.5, 4);
        spec.missing = 0.3;
        let data = simulate_dataset(&spec).unwrap().train;
        let dir = tmp();
        let p = dir.path().join("t.csv");
        write_data(&p, &data).unwrap();
        let back = read_table(&p).unwrap().into_data(&p).unwrap();
        let bits = |m: &DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(back.locations(), data.locations());
        assert_eq!(bits(back.outcomes()), bits(data.outcomes()));
        assert_eq!(bits(back.covariates()), bits(data.covariates()));
    }
}
