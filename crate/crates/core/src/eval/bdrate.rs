//! Bjøntegaard rate difference between two rate-distortion curves.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    pub label: String,
    /// `(rate, psnr)` sorted by increasing rate.
    pub points: Vec<(f64, f64)>,
}

impl RdCurve {
    /// Validates and sorts the points. Out-of-order input is accepted with a warning.
    pub fn new(label: impl Into<String>, mut points: Vec<(f64, f64)>) -> Result<Self> {
        let label = label.into();
        if points.len() < 3 {
            return Err(Error::InvalidInput(format!("curve {label:?} has {} points, need at least 3", points.len())));
        }
        if let Some(p) = points.iter().find(|(r, q)| !(*r > 0.0 && r.is_finite() && q.is_finite())) {
            return Err(Error::InvalidInput(format!("curve {label:?} has invalid point {p:?}")));
        }
        let sorted = points.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1);
        if !sorted {
            warn!("curve {label:?} is not monotone; proceeding on points sorted by rate");
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        Ok(RdCurve { label, points })
    }

    pub fn psnr_range(&self) -> (f64, f64) {
        let lo = self.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = self.points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdResult {
    pub bd_rate_percent: f64,
    /// PSNR interval the average was taken over.
    pub overlap: (f64, f64),
}

/// Polynomial coefficients, lowest degree first.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let anti = |x: f64| self.0.iter().enumerate().rev().fold(0.0, |acc, (k, c)| acc * x + c / (k + 1) as f64) * x;
        anti(b) - anti(a)
    }
}

/// Least-squares polynomial of the given degree through `(x, y)`.
///
/// `x` is centred and scaled before solving the normal equations so the
/// system stays well conditioned for PSNR values around 30-40.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<Poly> {
    let m = degree + 1;
    if x.len() != y.len() || x.len() < m {
        return Err(Error::InvalidInput(format!("{} points cannot determine a degree-{degree} fit", x.len())));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let scale = x.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max).max(1e-12);
    let mut a = vec![vec![0.0; m + 1]; m];
    for (&xi, &yi) in x.iter().zip(y) {
        let t = (xi - mean) / scale;
        let pw: Vec<f64> = (0..m).map(|k| t.powi(k as i32)).collect();
        for r in 0..m {
            for c in 0..m {
                a[r][c] += pw[r] * pw[c];
            }
            a[r][m] += pw[r] * yi;
        }
    }
    // Gauss-Jordan with partial pivoting
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        if a[piv][col].abs() < 1e-12 {
            return Err(Error::Numerical("degenerate polynomial fit (repeated PSNR values?)".into()));
        }
        a.swap(col, piv);
        for r in 0..m {
            if r != col {
                let k = a[r][col] / a[col][col];
                for c in col..=m {
                    a[r][c] -= k * a[col][c];
                }
            }
        }
    }
    let t_coef: Vec<f64> = (0..m).map(|r| a[r][m] / a[r][r]).collect();
    // expand p((x - mean) / scale) into powers of x
    let mut out = vec![0.0; m];
    let mut basis = vec![1.0];
    for (k, c) in t_coef.iter().enumerate() {
        for (i, b) in basis.iter().enumerate() {
            out[i] += c * b;
        }
        if k + 1 < m {
            let mut next = vec![0.0; basis.len() + 1];
            for (i, b) in basis.iter().enumerate() {
                next[i] -= b * mean / scale;
                next[i + 1] += b / scale;
            }
            basis = next;
        }
    }
    Ok(Poly(out))
}

/// Cubic fits of `ln(rate)` as a function of PSNR for both curves.
pub fn fit_log_rate(curve: &RdCurve) -> Result<Poly> {
    let psnr: Vec<f64> = curve.points.iter().map(|p| p.1).collect();
    let log_rate: Vec<f64> = curve.points.iter().map(|p| p.0.ln()).collect();
    polyfit(&psnr, &log_rate, 3)
}

pub fn overlap(anchor: &RdCurve, test: &RdCurve) -> Result<(f64, f64)> {
    let (a_lo, a_hi) = anchor.psnr_range();
    let (b_lo, b_hi) = test.psnr_range();
    let (lo, hi) = (a_lo.max(b_lo), a_hi.min(b_hi));
    if !(hi > lo) {
        return Err(Error::NoOverlap { a_lo, a_hi, b_lo, b_hi });
    }
    Ok((lo, hi))
}

/// Average rate change of `test` relative to `anchor` at equal PSNR, in
/// percent. Negative values mean `test` needs fewer bits.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<BdResult> {
    let (lo, hi) = overlap(anchor, test)?;
    let pa = fit_log_rate(anchor)?;
    let pt = fit_log_rate(test)?;
    let mean_diff = (pt.integral(lo, hi) - pa.integral(lo, hi)) / (hi - lo);
    Ok(BdResult {
        bd_rate_percent: (mean_diff.exp() - 1.0) * 100.0,
        overlap: (lo, hi),
    })
}

pub const CSV_HEADER: [&str; 3] = ["label", "rate", "psnr"];

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    label: String,
    rate: f64,
    psnr: f64,
}

/// Reads `label,rate,psnr` rows and groups them into curves, in order of
/// first appearance.
pub fn read_rd_csv(path: &Path) -> Result<Vec<RdCurve>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::InvalidInput(format!(
            "{}: expected header {}, found {}",
            path.display(),
            CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut order = Vec::new();
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if !groups.contains_key(&row.label) {
            order.push(row.label.clone());
        }
        groups.entry(row.label).or_default().push((row.rate, row.psnr));
    }
    if order.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no RD points", path.display())));
    }
    order.into_iter().map(|l| RdCurve::new(l.clone(), groups.remove(&l).unwrap())).collect()
}

pub fn write_rd_csv(path: &Path, curves: &[RdCurve]) -> Result<()> {
    let rows: Vec<(String, f64, f64)> =
        curves.iter().flat_map(|c| c.points.iter().map(|&(r, p)| (c.label.clone(), r, p))).collect();
    write_rd_rows(path, &rows)
}

/// Writes `(label, rate, psnr)` rows without requiring complete curves.
pub fn write_rd_rows(path: &Path, rows: &[(String, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if rows.is_empty() {
        w.write_record(CSV_HEADER).map_err(|e| csv_err(path, e))?;
    }
    for (label, rate, psnr) in rows {
        w.serialize(CsvRow {
            label: label.clone(),
            rate: *rate,
            psnr: *psnr,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdRow {
    pub label: String,
    pub class: String,
    pub bd_rate_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdTable {
    pub rows: Vec<BdRow>,
    /// Mean BD-rate per class, in class order of first appearance.
    pub classes: Vec<(String, f64)>,
    pub average: f64,
}

/// Class of a label written `class/sequence`; labels without a slash form
/// their own class.
pub fn class_of(label: &str) -> &str {
    label.split_once('/').map_or(label, |(c, _)| c)
}

/// BD-rate of every test curve against the anchor curve with the same label,
/// averaged per class and overall.
pub fn bd_table(anchors: &[RdCurve], tests: &[RdCurve]) -> Result<BdTable> {
    let mut rows = Vec::new();
    for t in tests {
        let a = anchors
            .iter()
            .find(|a| a.label == t.label)
            .ok_or_else(|| Error::InvalidInput(format!("no anchor curve labelled {:?}", t.label)))?;
        rows.push(BdRow {
            label: t.label.clone(),
            class: class_of(&t.label).to_string(),
            bd_rate_percent: bd_rate(a, t)?.bd_rate_percent,
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("no test curves".into()));
    }
    let mut classes: Vec<(String, Vec<f64>)> = Vec::new();
    for r in &rows {
        match classes.iter_mut().find(|(c, _)| *c == r.class) {
            Some((_, v)) => v.push(r.bd_rate_percent),
            None => classes.push((r.class.clone(), vec![r.bd_rate_percent])),
        }
    }
    let classes: Vec<(String, f64)> =
        classes.into_iter().map(|(c, v)| (c, v.iter().sum::<f64>() / v.len() as f64)).collect();
    let average = rows.iter().map(|r| r.bd_rate_percent).sum::<f64>() / rows.len() as f64;
    Ok(BdTable { rows, classes, average })
}

impl std::fmt::Display for BdTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<32} {:>10}", "sequence", "BD-rate")?;
        for r in &self.rows {
            writeln!(f, "{:<32} {:>9.2}%", r.label, r.bd_rate_percent)?;
        }
        if self.classes.len() > 1 || self.rows.len() > 1 {
            for (c, v) in &self.classes {
                writeln!(f, "{:<32} {:>9.2}%", format!("class {c}"), v)?;
            }
            writeln!(f, "{:<32} {:>9.2}%", "average", self.average)?;
        }
        Ok(())
    }
}
