//! Trial archive files and the metric tables derived from them.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use glmd_core::datagen::true_beta;
use glmd_core::metrics::{median, relative_report, TrialArchive};
use glmd_core::{FamilyKind, Matrix, Method};

/// One method's result on one trial of one (p, K) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub p: usize,
    pub k: usize,
    pub method: Method,
    pub trial: usize,
    pub converged: bool,
    pub estimate: Vec<f64>,
    /// Diagonal of the inverse pooled Fisher information at the estimate.
    pub variance: Option<Vec<f64>>,
}

impl TrialRecord {
    /// A trial whose estimator returned an error.
    pub fn failed(p: usize, k: usize, method: Method, trial: usize) -> Self {
        TrialRecord {
            p,
            k,
            method,
            trial,
            converged: false,
            estimate: vec![f64::NAN; p],
            variance: None,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.variance.is_none() || self.estimate.iter().any(|v| !v.is_finite())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrialRow {
    model: String,
    p: usize,
    #[serde(rename = "K")]
    k: usize,
    method: String,
    trial: usize,
    converged: bool,
    estimate: String,
    variance: String,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn split(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(';')
        .map(|x| x.parse::<f64>().with_context(|| format!("bad number {x:?}")))
        .collect()
}

pub fn write_trials(path: &Path, model: FamilyKind, records: &[TrialRecord]) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in records {
        w.serialize(TrialRow {
            model: model.to_string(),
            p: r.p,
            k: r.k,
            method: r.method.to_string(),
            trial: r.trial,
            converged: r.converged,
            estimate: join(&r.estimate),
            variance: r.variance.as_deref().map(join).unwrap_or_default(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trial archive written by [`write_trials`]. All rows must share a
/// model.
pub fn read_trials(path: &Path) -> anyhow::Result<(FamilyKind, Vec<TrialRecord>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut model: Option<FamilyKind> = None;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<TrialRow>().enumerate() {
        let line = i + 2;
        let row = row.with_context(|| format!("{}: line {line}", path.display()))?;
        let mut parse = || -> anyhow::Result<TrialRecord> {
            let m: FamilyKind = row.model.parse().map_err(anyhow::Error::msg)?;
            match model {
                None => model = Some(m),
                Some(prev) if prev != m => bail!("model {m} differs from {prev}"),
                _ => {}
            }
            let estimate = split(&row.estimate)?;
            let variance = if row.variance.is_empty() {
                None
            } else {
                Some(split(&row.variance)?)
            };
            if estimate.len() != row.p || variance.as_ref().is_some_and(|v| v.len() != row.p) {
                bail!("vector length differs from p = {}", row.p);
            }
            Ok(TrialRecord {
                p: row.p,
                k: row.k,
                method: row.method.parse().map_err(anyhow::Error::msg)?,
                trial: row.trial,
                converged: row.converged,
                estimate,
                variance,
            })
        };
        out.push(parse().with_context(|| format!("{}: line {line}", path.display()))?);
    }
    let model = model.with_context(|| format!("{} holds no trials", path.display()))?;
    Ok((model, out))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub model: String,
    pub p: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub method: String,
    pub coord: usize,
    pub rmse: Option<f64>,
    pub re: Option<f64>,
    pub cpci: Option<f64>,
    pub rc: Option<f64>,
    pub nonconverged_frac: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub model: String,
    pub p: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub method: String,
    pub trials: usize,
    pub re_min: Option<f64>,
    pub re_median: Option<f64>,
    pub re_max: Option<f64>,
    pub rc_min: Option<f64>,
    pub rc_median: Option<f64>,
    pub rc_max: Option<f64>,
    pub rmse_median: Option<f64>,
    pub cpci_median: Option<f64>,
    pub nonconverged_frac: f64,
}

/// Records of one (p, K, method) cell.
pub struct Cell<'a> {
    pub p: usize,
    pub k: usize,
    pub method: Method,
    pub records: Vec<&'a TrialRecord>,
}

impl Cell<'_> {
    pub fn nonconverged_fraction(&self) -> f64 {
        self.records.iter().filter(|r| !r.converged).count() as f64 / self.records.len() as f64
    }

    /// The usable trials as an archive; failed trials are always left out,
    /// non-converged ones too when `strict`.
    pub fn archive(&self, strict: bool) -> Option<TrialArchive> {
        let keep: Vec<&TrialRecord> = self
            .records
            .iter()
            .copied()
            .filter(|r| !r.is_failed() && (!strict || r.converged))
            .collect();
        if keep.is_empty() {
            return None;
        }
        let est = Matrix::from_rows(&keep.iter().map(|r| r.estimate.as_slice()).collect::<Vec<_>>()).ok()?;
        let var = Matrix::from_rows(
            &keep
                .iter()
                .map(|r| r.variance.as_deref().expect("not failed"))
                .collect::<Vec<_>>(),
        )
        .ok()?;
        TrialArchive::new(self.method, est, Some(var), keep.iter().map(|r| r.converged).collect()).ok()
    }
}

/// Groups records by cell in order of first appearance.
pub fn cells(records: &[TrialRecord]) -> Vec<Cell<'_>> {
    let mut out: Vec<Cell> = Vec::new();
    for r in records {
        match out
            .iter_mut()
            .find(|c| c.p == r.p && c.k == r.k && c.method == r.method)
        {
            Some(c) => c.records.push(r),
            None => out.push(Cell {
                p: r.p,
                k: r.k,
                method: r.method,
                records: vec![r],
            }),
        }
    }
    out
}

fn spread(values: &[Option<f64>]) -> (Option<f64>, Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return (None, None, None);
    }
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (Some(min), median(&v), Some(max))
}

/// Per-coordinate metrics and per-cell summaries. RE and RC are relative to
/// the global method of the same (p, K) cell and stay empty without one.
pub fn compute(model: FamilyKind, records: &[TrialRecord], strict: bool) -> anyhow::Result<(Vec<MetricRow>, Vec<SummaryRow>)> {
    let cells = cells(records);
    let mut metrics = Vec::new();
    let mut summary = Vec::new();
    for cell in &cells {
        let beta0 = true_beta(model, cell.p);
        let archive = cell.archive(strict);
        let baseline = cells
            .iter()
            .find(|c| c.p == cell.p && c.k == cell.k && c.method == Method::Global)
            .and_then(|c| c.archive(strict));
        let nonconv = cell.nonconverged_fraction();
        let coords: Vec<_> = match (&archive, &baseline) {
            (Some(a), Some(b)) => relative_report(a, b, &beta0)?
                .into_iter()
                .map(|r| (Some(r.rmse), r.re, r.cpci, r.rc))
                .collect(),
            (Some(a), None) => {
                let rmse = glmd_core::metrics::coordinatewise_rmse(a, &beta0)?;
                let cpci = glmd_core::metrics::coverage(a, &beta0)?;
                rmse.into_iter()
                    .zip(cpci)
                    .map(|(r, c)| (Some(r), None, Some(c), None))
                    .collect()
            }
            (None, _) => vec![(None, None, None, None); cell.p],
        };
        for (j, (rmse, re, cpci, rc)) in coords.iter().copied().enumerate() {
            metrics.push(MetricRow {
                model: model.to_string(),
                p: cell.p,
                k: cell.k,
                method: cell.method.to_string(),
                coord: j,
                rmse,
                re,
                cpci,
                rc,
                nonconverged_frac: nonconv,
            });
        }
        let (re_min, re_median, re_max) = spread(&coords.iter().map(|c| c.1).collect::<Vec<_>>());
        let (rc_min, rc_median, rc_max) = spread(&coords.iter().map(|c| c.3).collect::<Vec<_>>());
        summary.push(SummaryRow {
            model: model.to_string(),
            p: cell.p,
            k: cell.k,
            method: cell.method.to_string(),
            trials: cell.records.len(),
            re_min,
            re_median,
            re_max,
            rc_min,
            rc_median,
            rc_max,
            rmse_median: spread(&coords.iter().map(|c| c.0).collect::<Vec<_>>()).1,
            cpci_median: spread(&coords.iter().map(|c| c.2).collect::<Vec<_>>()).1,
            nonconverged_frac: nonconv,
        });
    }
    Ok((metrics, summary))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
