//! Aggregation of a results table into mean ± std summaries and the
//! FFR-versus-mixing ordering table.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::Serialize;
use synthbias_core::metrics::EvalRow;

use crate::grid::{ResultRow, ERROR_SCOPE};
use crate::error::{HarnessError, Result};

pub const REPORT_HEADER: &str =
    "Results are averaged over seeds of one synthetic benchmark family; mean ± sample standard deviation.";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; `None` with fewer than two values.
    pub std: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Some(Stat { mean, std, n })
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.4} ± {:.4}", self.mean, s),
            None => write!(f, "{:.4}", self.mean),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub augmentation: String,
    pub method: String,
    /// `None` when pooled over all ratios.
    pub bias_ratio: Option<f64>,
    pub scope: String,
    pub wa: Stat,
    pub ba: Stat,
    /// Mean of per-seed BA − WA.
    pub gap: Stat,
    pub probe_acc: Option<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderingRow {
    pub method: String,
    pub bias_ratio: Option<f64>,
    pub ffr_wa: f64,
    pub asb_wa: Option<f64>,
    pub usb_wa: Option<f64>,
    pub ffr_ge_asb: Option<bool>,
    pub ffr_ge_usb: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub header: String,
    /// Per (augmentation, method, scope), pooled over ratios.
    pub aggregates: Vec<Aggregate>,
    /// Per (augmentation, method, ratio, scope).
    pub by_ratio: Vec<Aggregate>,
    /// Real-scope WA of FFR against ASB and USB.
    pub ordering: Vec<OrderingRow>,
    pub error_rows: usize,
}

impl Report {
    pub fn find(&self, augmentation: &str, method: &str, ratio: Option<f64>, scope: &str) -> Option<&Aggregate> {
        let pool = if ratio.is_some() { &self.by_ratio } else { &self.aggregates };
        pool.iter().find(|a| {
            a.augmentation == augmentation && a.method == method && a.bias_ratio == ratio && a.scope == scope
        })
    }
}

pub fn report_path(path: &Path) -> Result<Report> {
    report_reader(std::fs::File::open(path)?)
}

pub fn report_reader<R: Read>(reader: R) -> Result<Report> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let missing: Vec<String> = EvalRow::HEADER
        .iter()
        .filter(|h| !headers.iter().any(|x| x == **h))
        .map(|h| h.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(HarnessError::SchemaMismatch { missing });
    }
    let rows = rdr.deserialize::<ResultRow>().collect::<std::result::Result<Vec<_>, _>>()?;
    report(&rows)
}

pub fn report(rows: &[ResultRow]) -> Result<Report> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let error_rows = rows.iter().filter(|r| r.scope == ERROR_SCOPE).count();
    let ok: Vec<&ResultRow> = rows
        .iter()
        .filter(|r| r.scope != ERROR_SCOPE && r.wa.is_some() && r.ba.is_some())
        .collect();
    if ok.is_empty() {
        return Err(HarnessError::EmptyResults);
    }

    let aggregates = aggregate(&ok, false);
    let by_ratio = aggregate(&ok, true);
    let mut ordering = ordering(&by_ratio);
    ordering.extend(self::ordering(&aggregates));
    Ok(Report {
        header: REPORT_HEADER.into(),
        aggregates,
        by_ratio,
        ordering,
        error_rows,
    })
}

type Key = (String, String, Option<u64>, String);

fn aggregate(rows: &[&ResultRow], per_ratio: bool) -> Vec<Aggregate> {
    let mut groups: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let ratio = per_ratio.then(|| r.bias_ratio.to_bits());
        groups
            .entry((r.augmentation.clone(), r.method.clone(), ratio, r.scope.clone()))
            .or_default()
            .push(r);
    }
    let mut out: Vec<Aggregate> = groups
        .into_iter()
        .map(|((augmentation, method, ratio, scope), rs)| {
            let wa: Vec<f64> = rs.iter().filter_map(|r| r.wa).collect();
            let ba: Vec<f64> = rs.iter().filter_map(|r| r.ba).collect();
            let gap: Vec<f64> = rs.iter().filter_map(|r| Some(r.ba? - r.wa?)).collect();
            let probe: Vec<f64> = rs.iter().filter_map(|r| r.probe_acc).collect();
            Aggregate {
                augmentation,
                method,
                bias_ratio: ratio.map(f64::from_bits),
                scope,
                wa: Stat::of(&wa).expect("filtered rows carry WA"),
                ba: Stat::of(&ba).expect("filtered rows carry BA"),
                gap: Stat::of(&gap).expect("filtered rows carry both"),
                probe_acc: Stat::of(&probe),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (a.bias_ratio.unwrap_or(0.0), &a.augmentation, &a.method, &a.scope)
            .partial_cmp(&(b.bias_ratio.unwrap_or(0.0), &b.augmentation, &b.method, &b.scope))
            .expect("ratios are finite")
    });
    out
}

fn ordering(aggs: &[Aggregate]) -> Vec<OrderingRow> {
    let real: Vec<&Aggregate> = aggs.iter().filter(|a| a.scope == "Real").collect();
    let wa = |aug: &str, method: &str, ratio: Option<f64>| {
        real.iter()
            .find(|a| a.augmentation == aug && a.method == method && a.bias_ratio == ratio)
            .map(|a| a.wa.mean)
    };
    real.iter()
        .filter(|a| a.augmentation == "FFR")
        .map(|ffr| {
            let asb = wa("ASB", &ffr.method, ffr.bias_ratio);
            let usb = wa("USB", &ffr.method, ffr.bias_ratio);
            OrderingRow {
                method: ffr.method.clone(),
                bias_ratio: ffr.bias_ratio,
                ffr_wa: ffr.wa.mean,
                asb_wa: asb,
                usb_wa: usb,
                ffr_ge_asb: asb.map(|v| ffr.wa.mean >= v),
                ffr_ge_usb: usb.map(|v| ffr.wa.mean >= v),
            }
        })
        .collect()
}

fn ratio_label(r: Option<f64>) -> String {
    r.map_or_else(|| "all".into(), |v| v.to_string())
}

fn mark(flag: Option<bool>) -> &'static str {
    match flag {
        Some(true) => "yes",
        Some(false) => "NO",
        None => "-",
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.header)?;
        if self.error_rows > 0 {
            writeln!(f, "{} failed cells excluded", self.error_rows)?;
        }
        for (title, table) in [("Pooled over bias ratios", &self.aggregates), ("Per bias ratio", &self.by_ratio)] {
            writeln!(f, "\n## {title}")?;
            writeln!(
                f,
                "{:<6} {:<12} {:<6} {:<10} {:<18} {:<18} {:<18} {:<18} {:>3}",
                "aug", "method", "ratio", "scope", "WA", "BA", "BA-WA", "probe", "n"
            )?;
            for a in table {
                writeln!(
                    f,
                    "{:<6} {:<12} {:<6} {:<10} {:<18} {:<18} {:<18} {:<18} {:>3}",
                    a.augmentation,
                    a.method,
                    ratio_label(a.bias_ratio),
                    a.scope,
                    a.wa.to_string(),
                    a.ba.to_string(),
                    a.gap.to_string(),
                    a.probe_acc.map_or_else(|| "-".into(), |p| p.to_string()),
                    a.wa.n
                )?;
            }
        }
        writeln!(f, "\n## Ordering (real-scope WA)")?;
        writeln!(
            f,
            "{:<12} {:<6} {:>8} {:>8} {:>8} {:>9} {:>9}",
            "method", "ratio", "FFR", "ASB", "USB", "FFR>=ASB", "FFR>=USB"
        )?;
        let opt = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{x:.4}"));
        for o in &self.ordering {
            writeln!(
                f,
                "{:<12} {:<6} {:>8.4} {:>8} {:>8} {:>9} {:>9}",
                o.method,
                ratio_label(o.bias_ratio),
                o.ffr_wa,
                opt(o.asb_wa),
                opt(o.usb_wa),
                mark(o.ffr_ge_asb),
                mark(o.ffr_ge_usb)
            )?;
        }
        Ok(())
    }
}
