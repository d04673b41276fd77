//! The spline-expanded case study: labeled CSV ingestion, quartile-knot
//! design, distributed fit over K shards, holdout AUC and coefficient SE.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{bail, Context};
use rayon::prelude::*;

use glmd_core::distributed::{global_fit, run_method, LocalFit, LocalScoreFisher, Shard};
use glmd_core::metrics::{auc, empirical_se};
use glmd_core::rng::{mix_seed, SplitMix64};
use glmd_core::spline::AdditiveDesign;
use glmd_core::transport::{worker_local_fit, worker_score_fisher};
use glmd_core::{Dataset, FamilyKind, FitOptions, GlmFamily, Matrix, Method, Transport};

use crate::UsageError;

/// Labels with their raw feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledData {
    pub features: Matrix,
    pub labels: Vec<f64>,
}

impl LabeledData {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Rows `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> LabeledData {
        let f = self.features.cols();
        let mut data = Vec::with_capacity(idx.len() * f);
        for &i in idx {
            data.extend_from_slice(self.features.row(i));
        }
        LabeledData {
            features: Matrix::from_row_major(idx.len(), f, data).expect("row width"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Parses `label,x1,...,xm` records. Blank lines are skipped; every record
/// must have the same width (`features` when given). Errors name the line.
pub fn read_labeled<R: BufRead>(reader: R, features: Option<usize>) -> anyhow::Result<LabeledData> {
    let mut width = features;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.with_context(|| format!("line {lineno}"))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label: f64 = fields
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|_| anyhow::anyhow!("line {lineno}: label is not a number"))?;
        // labels arrive as 0/1 or 0.0/1.0
        let label = match label {
            l if l == 0.0 || l == 1.0 => l,
            l => bail!("line {lineno}: label {l} is not 0 or 1"),
        };
        let start = data.len();
        for (j, f) in fields.enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| anyhow::anyhow!("line {lineno}: field {} is not a number: {f:?}", j + 2))?;
            if !v.is_finite() {
                bail!("line {lineno}: field {} is not finite", j + 2);
            }
            data.push(v);
        }
        let got = data.len() - start;
        match width {
            None if got == 0 => bail!("line {lineno}: no features"),
            None => width = Some(got),
            Some(w) if w != got => bail!("line {lineno}: expected {w} features, found {got}"),
            _ => {}
        }
        labels.push(label);
    }
    let Some(w) = width.filter(|_| !labels.is_empty()) else {
        bail!("no records");
    };
    Ok(LabeledData {
        features: Matrix::from_row_major(labels.len(), w, data)?,
        labels,
    })
}

pub fn read_labeled_file(path: &Path, features: Option<usize>) -> anyhow::Result<LabeledData> {
    let file = File::open(path).map_err(|e| UsageError(format!("cannot open {}: {e}", path.display())))?;
    read_labeled(BufReader::new(file), features).with_context(|| path.display().to_string())
}

/// Raw shards that are expanded into the spline design only while a round
/// runs, so at most one expanded copy of each shard exists at a time.
pub struct ExpandingTransport<'a> {
    family: GlmFamily,
    design: &'a AdditiveDesign,
    shards: Vec<LabeledData>,
    opts: FitOptions,
    fits: Option<Vec<LocalFit>>,
}

impl<'a> ExpandingTransport<'a> {
    pub fn new(family: GlmFamily, design: &'a AdditiveDesign, shards: Vec<LabeledData>, opts: FitOptions) -> Self {
        ExpandingTransport {
            family,
            design,
            shards,
            opts,
            fits: None,
        }
    }

    fn expand(&self, w: usize) -> glmd_core::Result<Shard> {
        let s = &self.shards[w];
        Ok(Shard {
            worker_id: w as u32,
            data: Dataset::new(self.design.expand(&s.features)?, s.labels.clone())?,
        })
    }
}

impl Transport for ExpandingTransport<'_> {
    fn workers(&self) -> usize {
        self.shards.len()
    }

    fn local_fits(&mut self) -> glmd_core::Result<Vec<LocalFit>> {
        if let Some(f) = &self.fits {
            return Ok(f.clone());
        }
        let fits = (0..self.shards.len())
            .into_par_iter()
            .map(|w| worker_local_fit(self.family, &self.expand(w)?, &self.opts))
            .collect::<glmd_core::Result<Vec<_>>>()?;
        self.fits = Some(fits.clone());
        Ok(fits)
    }

    fn local_score_fisher(&mut self, beta: &[f64]) -> glmd_core::Result<Vec<LocalScoreFisher>> {
        (0..self.shards.len())
            .into_par_iter()
            .map(|w| worker_score_fisher(self.family, &self.expand(w)?, beta))
            .collect()
    }

    fn publish(&mut self, _method: Method, _estimate: &[f64]) -> glmd_core::Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CaseStudyOptions {
    pub family: FamilyKind,
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub holdout_fraction: f64,
    pub trials: usize,
    pub linear: Vec<usize>,
    pub fit: FitOptions,
}

impl Default for CaseStudyOptions {
    fn default() -> Self {
        CaseStudyOptions {
            family: FamilyKind::Logistic,
            method: Method::OneStep,
            k: 10,
            seed: 1,
            holdout_fraction: 0.2,
            trials: 1,
            linear: glmd_core::spline::CASE_STUDY_LINEAR.to_vec(),
            fit: FitOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CaseStudyReport {
    pub dim: usize,
    pub aucs: Vec<f64>,
    /// Row `t` is trial `t`'s coefficient estimate.
    pub estimates: Matrix,
    /// Across-trial standard error per coefficient (two or more trials).
    pub se: Option<Vec<f64>>,
    pub nonconverged_trials: usize,
}

impl CaseStudyReport {
    pub fn mean_auc(&self) -> f64 {
        self.aucs.iter().sum::<f64>() / self.aucs.len() as f64
    }
}

/// Seeded split of `0..n` into (training, holdout) index lists.
pub fn split_indices(n: usize, holdout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(seed);
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        idx.swap(i, j);
    }
    let holdout = ((n as f64) * holdout_fraction).round() as usize;
    let train = idx.split_off(holdout);
    (train, idx)
}

/// Linear predictor of every row of `data` under `design` and `beta`.
pub fn scores(design: &AdditiveDesign, data: &LabeledData, beta: &[f64]) -> anyhow::Result<Vec<f64>> {
    (0..data.n())
        .into_par_iter()
        .map_init(
            || vec![0.0; design.dim()],
            |row, i| {
                design.expand_row(data.features.row(i), row)?;
                Ok(row.iter().zip(beta).map(|(a, b)| a * b).sum())
            },
        )
        .collect()
}

pub fn run_case_study(data: &LabeledData, opts: &CaseStudyOptions) -> anyhow::Result<CaseStudyReport> {
    if opts.k == 0 || opts.trials == 0 {
        return Err(UsageError("K and the trial count must be positive".into()).into());
    }
    if !(opts.holdout_fraction > 0.0 && opts.holdout_fraction < 1.0) {
        return Err(UsageError("holdout fraction must lie in (0, 1)".into()).into());
    }
    let family = GlmFamily::from(opts.family);
    let mut aucs = Vec::with_capacity(opts.trials);
    let mut estimates = Vec::new();
    let mut dim = 0;
    let mut nonconverged = 0;
    for t in 0..opts.trials {
        let (train_idx, hold_idx) = split_indices(data.n(), opts.holdout_fraction, mix_seed(opts.seed, t as u64));
        let train = data.select(&train_idx);
        let holdout = data.select(&hold_idx);
        let design = AdditiveDesign::fit(&train.features, &opts.linear)?;
        dim = design.dim();
        if train.n() < opts.k * dim {
            return Err(UsageError(format!(
                "{} training rows cannot give {} shards of at least {dim} rows",
                train.n(),
                opts.k
            ))
            .into());
        }

        let ranges = glmd_core::datagen::shard_ranges(train.n(), opts.k)?;
        let est = if opts.method == Method::Global {
            let pooled = Shard {
                worker_id: 0,
                data: Dataset::new(design.expand(&train.features)?, train.labels.clone())?,
            };
            global_fit(family, std::slice::from_ref(&pooled), &opts.fit)?
        } else {
            let shards = ranges
                .into_iter()
                .map(|r| train.select(&r.collect::<Vec<_>>()))
                .collect();
            let mut transport = ExpandingTransport::new(family, &design, shards, opts.fit);
            run_method(opts.method, &mut transport)?
        };
        if !est.all_converged() {
            nonconverged += 1;
        }
        let s = scores(&design, &holdout, &est.estimate)?;
        let a = auc(&s, &holdout.labels)?;
        log::info!("trial {t}: holdout AUC {a:.4}");
        aucs.push(a);
        estimates.extend_from_slice(&est.estimate);
    }
    let estimates = Matrix::from_row_major(opts.trials, dim, estimates)?;
    let se = (opts.trials >= 2).then(|| empirical_se(&estimates)).transpose()?;
    Ok(CaseStudyReport {
        dim,
        aucs,
        estimates,
        se,
        nonconverged_trials: nonconverged,
    })
}
