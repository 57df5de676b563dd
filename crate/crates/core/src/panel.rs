//! Panels of cross-sectional time series: CSV ingestion, export and the
//! trend/seasonal cleaning applied before estimation.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{NetvarError, Result};
use crate::network::Network;
use crate::output::fmt_num;

/// An `n x T` panel. Column `t` holds the cross-section at period `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub values: DMatrix<f64>,
    pub unit_labels: Vec<String>,
    pub time_labels: Vec<String>,
    pub frequency_tag: String,
    pub preprocessing_log: Vec<PreprocessRecord>,
}

/// One entry of the preprocessing history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessRecord {
    pub step: String,
    pub unit: String,
    /// Regressor names paired with the fitted coefficients.
    pub coefficients: Vec<(String, f64)>,
}

/// Which components to strip in [`detrend_deseasonalize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub remove_linear_trend: bool,
    pub seasonal_period: Option<usize>,
    pub demean: bool,
}

/// Options for [`load_panel`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestOptions {
    /// Fill interior gaps by linear interpolation instead of failing.
    pub interpolate_missing: bool,
    pub frequency_tag: String,
}

pub(crate) fn check_unique(labels: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(NetvarError::DuplicateLabel(l.clone()));
        }
    }
    Ok(())
}

impl Panel {
    /// Wraps a value matrix. Time labels default to `0..T`.
    pub fn new(values: DMatrix<f64>, unit_labels: Vec<String>) -> Result<Self> {
        let t = values.ncols();
        let time_labels = (0..t).map(|i| i.to_string()).collect();
        Panel::with_time_labels(values, unit_labels, time_labels)
    }

    pub fn with_time_labels(
        values: DMatrix<f64>,
        unit_labels: Vec<String>,
        time_labels: Vec<String>,
    ) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(NetvarError::Validation("panel needs n >= 1 and T >= 1".into()));
        }
        if unit_labels.len() != values.nrows() {
            return Err(NetvarError::Validation(format!(
                "{} unit labels for {} units",
                unit_labels.len(),
                values.nrows()
            )));
        }
        if time_labels.len() != values.ncols() {
            return Err(NetvarError::Validation(format!(
                "{} time labels for {} periods",
                time_labels.len(),
                values.ncols()
            )));
        }
        check_unique(&unit_labels)?;
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let n = values.nrows();
            return Err(NetvarError::MissingValue { unit: idx % n, time: idx / n });
        }
        Ok(Panel {
            values,
            unit_labels,
            time_labels,
            frequency_tag: String::new(),
            preprocessing_log: Vec::new(),
        })
    }

    /// Panel with labels `u1..un`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let labels = (1..=values.nrows()).map(|i| format!("u{i}")).collect();
        Panel::new(values, labels)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn t(&self) -> usize {
        self.values.ncols()
    }

    /// Columns `start..end` as a new panel, keeping labels and the log.
    pub fn slice(&self, start: usize, end: usize) -> Result<Panel> {
        if start >= end || end > self.t() {
            return Err(NetvarError::Validation(format!(
                "invalid time slice {start}..{end} of a {}-period panel",
                self.t()
            )));
        }
        Ok(Panel {
            values: self.values.columns(start, end - start).into_owned(),
            unit_labels: self.unit_labels.clone(),
            time_labels: self.time_labels[start..end].to_vec(),
            frequency_tag: self.frequency_tag.clone(),
            preprocessing_log: self.preprocessing_log.clone(),
        })
    }

    /// Writes the wide CSV layout `time,<labels>`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        header.extend(self.unit_labels.iter().cloned());
        w.write_record(&header)?;
        for t in 0..self.t() {
            let mut row = vec![self.time_labels[t].clone()];
            row.extend((0..self.n()).map(|i| fmt_num(self.values[(i, t)])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn read_rows<R: Read>(input: R) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| NetvarError::Parse { row: k + 1, col: 0, msg: e.to_string() })?;
        rows.push(rec.iter().map(|s| s.to_string()).collect());
    }
    Ok(rows)
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "NaN" | "nan" | "null")
}

/// Reads a wide panel CSV: header `time,<label1>,...`, one row per period.
pub fn read_panel<R: Read>(input: R, options: &IngestOptions) -> Result<Panel> {
    let rows = read_rows(input)?;
    let header = rows
        .first()
        .ok_or(NetvarError::Parse { row: 1, col: 1, msg: "empty file".into() })?;
    if header.len() < 2 {
        return Err(NetvarError::Parse { row: 1, col: 2, msg: "no unit columns".into() });
    }
    let labels: Vec<String> = header[1..].to_vec();
    check_unique(&labels)?;
    let n = labels.len();
    let body = &rows[1..];
    if body.is_empty() {
        return Err(NetvarError::Parse { row: 2, col: 1, msg: "no data rows".into() });
    }
    let t = body.len();
    let mut values = DMatrix::from_element(n, t, f64::NAN);
    let mut time_labels = Vec::with_capacity(t);
    for (k, row) in body.iter().enumerate() {
        let line = k + 2;
        if row.len() != n + 1 {
            return Err(NetvarError::Parse {
                row: line,
                col: row.len().min(n + 1),
                msg: format!("expected {} fields, found {}", n + 1, row.len()),
            });
        }
        time_labels.push(row[0].clone());
        for i in 0..n {
            let cell = &row[i + 1];
            if is_missing(cell) {
                continue;
            }
            values[(i, k)] = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                NetvarError::NonNumeric { row: line, col: i + 2, value: cell.clone() }
            })?;
        }
    }
    if options.interpolate_missing {
        interpolate_interior(&mut values)?;
    } else if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| v.is_nan()) {
        return Err(NetvarError::MissingValue { unit: idx % n, time: idx / n });
    }
    if n < 2 {
        return Err(NetvarError::Validation("a panel needs at least two units".into()));
    }
    let mut panel = Panel::with_time_labels(values, labels, time_labels)?;
    panel.frequency_tag = options.frequency_tag.clone();
    Ok(panel)
}

/// Loads a panel from a CSV file.
pub fn load_panel(path: &Path, options: &IngestOptions) -> Result<Panel> {
    read_panel(std::fs::File::open(path)?, options)
}

/// Linear interpolation across interior gaps; leading or trailing gaps fail.
fn interpolate_interior(values: &mut DMatrix<f64>) -> Result<()> {
    let (n, t) = values.shape();
    for i in 0..n {
        let known: Vec<usize> = (0..t).filter(|&s| !values[(i, s)].is_nan()).collect();
        let (first, last) = match (known.first(), known.last()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => return Err(NetvarError::MissingValue { unit: i, time: 0 }),
        };
        if first > 0 {
            return Err(NetvarError::MissingValue { unit: i, time: 0 });
        }
        if last < t - 1 {
            return Err(NetvarError::MissingValue { unit: i, time: last + 1 });
        }
        for w in known.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (va, vb) = (values[(i, a)], values[(i, b)]);
            for s in (a + 1)..b {
                let f = (s - a) as f64 / (b - a) as f64;
                values[(i, s)] = va + f * (vb - va);
            }
        }
    }
    Ok(())
}

/// Reads an adjacency CSV: header `,<label1>,...`, each row `label,values...`
/// with row labels in the same order as the header.
pub fn read_adjacency<R: Read>(input: R) -> Result<Network> {
    let rows = read_rows(input)?;
    let header = rows
        .first()
        .ok_or(NetvarError::Parse { row: 1, col: 1, msg: "empty file".into() })?;
    let labels: Vec<String> = header.iter().skip(1).cloned().collect();
    let n = labels.len();
    if rows.len() != n + 1 {
        return Err(NetvarError::Parse {
            row: rows.len() + 1,
            col: 1,
            msg: format!("expected {n} adjacency rows, found {}", rows.len() - 1),
        });
    }
    let mut a = DMatrix::zeros(n, n);
    for (i, row) in rows[1..].iter().enumerate() {
        let line = i + 2;
        if row.len() != n + 1 {
            return Err(NetvarError::Parse {
                row: line,
                col: row.len().min(n + 1),
                msg: format!("expected {} fields, found {}", n + 1, row.len()),
            });
        }
        if row[0] != labels[i] {
            return Err(NetvarError::Validation(format!(
                "row label {:?} does not match column label {:?}",
                row[0], labels[i]
            )));
        }
        for j in 0..n {
            a[(i, j)] = row[j + 1].parse::<f64>().map_err(|_| NetvarError::NonNumeric {
                row: line,
                col: j + 2,
                value: row[j + 1].clone(),
            })?;
        }
    }
    Network::new(a, labels)
}

pub fn load_adjacency(path: &Path) -> Result<Network> {
    read_adjacency(std::fs::File::open(path)?)
}

/// Writes a network in the adjacency CSV layout.
pub fn write_adjacency<W: Write>(net: &Network, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![String::new()];
    header.extend(net.labels().iter().cloned());
    w.write_record(&header)?;
    for i in 0..net.n() {
        let mut row = vec![net.labels()[i].clone()];
        row.extend((0..net.n()).map(|j| fmt_num(net.adjacency()[(i, j)])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Builds the shared regression design used for every unit.
fn design(t: usize, spec: &PreprocessSpec) -> (DMatrix<f64>, Vec<String>) {
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    if spec.remove_linear_trend {
        cols.push(("trend".into(), (1..=t).map(|s| s as f64).collect()));
    }
    match spec.seasonal_period {
        Some(period) => {
            for m in 0..period {
                let d = (0..t).map(|s| if s % period == m { 1.0 } else { 0.0 }).collect();
                cols.push((format!("season{}", m + 1), d));
            }
        }
        None => {
            if spec.demean || spec.remove_linear_trend {
                cols.push(("intercept".into(), vec![1.0; t]));
            }
        }
    }
    let names = cols.iter().map(|(n, _)| n.clone()).collect();
    let x = DMatrix::from_fn(t, cols.len(), |s, c| cols[c].1[s]);
    (x, names)
}

/// Replaces each series by its residual from a regression on a linear trend
/// and a full set of seasonal dummies (no separate intercept when dummies are
/// present). Coefficients are appended to the preprocessing log.
pub fn detrend_deseasonalize(panel: &Panel, spec: &PreprocessSpec) -> Result<Panel> {
    let t = panel.t();
    if let Some(period) = spec.seasonal_period {
        if period < 2 || period > t / 2 {
            return Err(NetvarError::Validation(format!(
                "seasonal period {period} must lie in 2..={}",
                t / 2
            )));
        }
        if spec.remove_linear_trend && t <= 1 + period {
            return Err(NetvarError::Estimation(format!(
                "need more than {} periods to fit trend and seasonal dummies",
                1 + period
            )));
        }
    }
    let (x, names) = design(t, spec);
    if x.ncols() == 0 {
        return Ok(panel.clone());
    }
    let y = panel.values.transpose();
    let beta = crate::linalg::ols(&x, &y)?;
    let resid = &y - &x * &beta;
    let mut out = panel.clone();
    out.values = resid.transpose();
    for (i, label) in panel.unit_labels.iter().enumerate() {
        out.preprocessing_log.push(PreprocessRecord {
            step: "detrend_deseasonalize".into(),
            unit: label.clone(),
            coefficients: names.iter().cloned().zip(beta.column(i).iter().cloned()).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "time,a,b,c\n1,1,2,3\n2,4,5,6\n3,7,8,9\n4,10,11,12\n";

    #[test]
    fn reads_small_panel() {
        let p = read_panel(SMALL.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!((p.n(), p.t()), (3, 4));
        assert_eq!(p.values[(1, 2)], 8.0);
        assert_eq!(p.time_labels[3], "4");
        assert!(p.preprocessing_log.is_empty());
    }

    #[test]
    fn missing_cell_is_an_error_unless_interpolated() {
        let csv = "time,a,b\n1,1,2\n2,,4\n3,3,6\n";
        match read_panel(csv.as_bytes(), &IngestOptions::default()) {
            Err(NetvarError::MissingValue { unit, time }) => assert_eq!((unit, time), (0, 1)),
            other => panic!("unexpected {other:?}"),
        }
        let opts = IngestOptions { interpolate_missing: true, ..Default::default() };
        let p = read_panel(csv.as_bytes(), &opts).unwrap();
        assert_eq!(p.values[(0, 1)], 2.0);
        let edge = "time,a,b\n1,,2\n2,1,4\n";
        assert!(read_panel(edge.as_bytes(), &opts).is_err());
    }

    #[test]
    fn duplicate_and_non_numeric_cells() {
        let dup = "time,USA,USA\n1,1,2\n";
        assert!(matches!(
            read_panel(dup.as_bytes(), &IngestOptions::default()),
            Err(NetvarError::DuplicateLabel(l)) if l == "USA"
        ));
        let bad = "time,a,b\n1,1,x\n";
        assert!(matches!(
            read_panel(bad.as_bytes(), &IngestOptions::default()),
            Err(NetvarError::NonNumeric { row: 2, col: 3, .. })
        ));
        let ragged = "time,a,b\n1,1\n";
        assert!(matches!(
            read_panel(ragged.as_bytes(), &IngestOptions::default()),
            Err(NetvarError::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let vals = DMatrix::from_fn(2, 5, |i, t| (i as f64 + 1.0) / 3.0 + t as f64 * 1e-7);
        let p = Panel::from_values(vals).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = read_panel(buf.as_slice(), &IngestOptions::default()).unwrap();
        assert_eq!(p.values, q.values);
    }

    #[test]
    fn adjacency_round_trip() {
        let net = Network::from_rows(2, &[0.0, 0.25, 1.0 / 3.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        write_adjacency(&net, &mut buf).unwrap();
        let back = read_adjacency(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        let mislabeled = ",a,b\nb,0,1\na,1,0\n";
        assert!(read_adjacency(mislabeled.as_bytes()).is_err());
    }

    #[test]
    fn exact_trend_and_season_are_removed() {
        let t = 48;
        let lin = DMatrix::from_fn(2, t, |_, s| 2.0 * (s + 1) as f64);
        let p = Panel::from_values(lin).unwrap();
        let spec = PreprocessSpec { remove_linear_trend: true, ..Default::default() };
        let r = detrend_deseasonalize(&p, &spec).unwrap();
        assert!(r.values.abs().max() < 1e-10);
        assert_eq!(r.preprocessing_log.len(), 2);

        let seas = DMatrix::from_fn(2, t, |_, s| if s % 12 == 2 { 5.0 } else { 0.0 });
        let p = Panel::from_values(seas).unwrap();
        let spec = PreprocessSpec { seasonal_period: Some(12), ..Default::default() };
        let r = detrend_deseasonalize(&p, &spec).unwrap();
        assert!(r.values.abs().max() < 1e-12);
    }

    #[test]
    fn seasonal_period_bounds() {
        let p = Panel::from_values(DMatrix::from_element(2, 10, 1.0)).unwrap();
        let spec = PreprocessSpec { seasonal_period: Some(6), ..Default::default() };
        assert!(detrend_deseasonalize(&p, &spec).is_err());
        let spec = PreprocessSpec { remove_linear_trend: true, ..Default::default() };
        let one = Panel::from_values(DMatrix::from_element(2, 1, 1.0)).unwrap();
        assert!(detrend_deseasonalize(&one, &spec).is_err());
    }
}
