//! Monte-Carlo sweep over (p, K, method, trial).

use std::fs;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;

use glmd_core::datagen::{generate_dataset, partition_shards, trial_seed, SimDesign};
use glmd_core::distributed::{global_fit, run_method};
use glmd_core::glm::fisher_info;
use glmd_core::metrics::wald_variances;
use glmd_core::rng::mix_seed;
use glmd_core::{Dataset, DistributedEstimate, FitOptions, GlmFamily, InProcessTransport, Method};

use crate::config::ExperimentConfig;
use crate::report::{self, TrialRecord};

/// Seed of the pooled data for dimension `p`, trial `trial`. It does not
/// depend on K or on the method list.
pub fn data_seed(base_seed: u64, p: usize, trial: usize) -> u64 {
    trial_seed(mix_seed(base_seed, p as u64), trial as u64)
}

fn fit_options(cfg: &ExperimentConfig) -> FitOptions {
    FitOptions {
        max_iterations: cfg.max_iterations,
        score_tolerance: cfg.score_tolerance,
        ..FitOptions::default()
    }
}

fn record(
    p: usize,
    k: usize,
    method: Method,
    trial: usize,
    family: GlmFamily,
    pooled: &Dataset,
    est: glmd_core::Result<DistributedEstimate>,
) -> TrialRecord {
    let failed = |why: String| {
        log::warn!("p={p} K={k} {method} trial {trial}: {why}");
        TrialRecord::failed(p, k, method, trial)
    };
    let est = match est {
        Ok(e) => e,
        Err(e) => return failed(e.to_string()),
    };
    // Wald variances from the pooled information at this trial's estimate
    let fisher = match method {
        Method::Global => est.global_fisher.clone().ok_or_else(|| "missing Fisher".to_string()),
        _ => fisher_info(family, pooled, &est.estimate).map_err(|e| e.to_string()),
    };
    let variance = match fisher.and_then(|f| wald_variances(&f).map_err(|e| e.to_string())) {
        Ok(v) => v,
        Err(e) => return failed(format!("no Wald variance: {e}")),
    };
    TrialRecord {
        p,
        k,
        method,
        trial,
        converged: est.all_converged(),
        estimate: est.estimate,
        variance: Some(variance),
    }
}

/// Every method at every K for one trial of dimension `p`.
pub fn run_trial(cfg: &ExperimentConfig, p: usize, trial: usize) -> Vec<TrialRecord> {
    let family = GlmFamily::from(cfg.model);
    let opts = fit_options(cfg);
    let design = SimDesign {
        model: cfg.model,
        n: cfg.n,
        p,
        rho: cfg.rho,
        seed: data_seed(cfg.base_seed, p, trial),
        k: 1,
    };
    let all_failed = |why: &str| {
        log::warn!("p={p} trial {trial}: {why}");
        cfg.k_list
            .iter()
            .flat_map(|&k| cfg.methods.iter().map(move |&m| TrialRecord::failed(p, k, m, trial)))
            .collect()
    };
    let pooled = match generate_dataset(&design) {
        Ok(d) => d,
        Err(e) => return all_failed(&e.to_string()),
    };
    let global = cfg.methods.contains(&Method::Global).then(|| {
        let one = partition_shards(&pooled, 1).expect("n >= 1");
        global_fit(family, &one, &opts)
    });

    let mut out = Vec::with_capacity(cfg.k_list.len() * cfg.methods.len());
    for &k in &cfg.k_list {
        let shards = match partition_shards(&pooled, k) {
            Ok(s) => s,
            Err(e) => return all_failed(&e.to_string()),
        };
        let mut transport = InProcessTransport::new(family, &shards, opts);
        for &method in &cfg.methods {
            let est = match method {
                Method::Global => global.clone().expect("global requested"),
                m => run_method(m, &mut transport),
            };
            out.push(record(p, k, method, trial, family, &pooled, est));
        }
    }
    out
}

/// Runs the sweep with at most `jobs` concurrent trials (all cores when
/// `None`). Records are ordered by p, K, method (config order), then trial.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> anyhow::Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .context("building the worker pool")?;
    let mut records = Vec::with_capacity(cfg.p_list.len() * cfg.k_list.len() * cfg.methods.len() * cfg.t);
    for &p in &cfg.p_list {
        let per_trial: Vec<Vec<TrialRecord>> =
            pool.install(|| (0..cfg.t).into_par_iter().map(|t| run_trial(cfg, p, t)).collect());
        // per_trial[t] is ordered by (K, method); regroup by cell
        let cells = cfg.k_list.len() * cfg.methods.len();
        for cell in 0..cells {
            for trial in &per_trial {
                records.push(trial[cell].clone());
            }
        }
        log::info!("p={p}: {} trials done", cfg.t);
    }
    Ok(records)
}

/// Runs the sweep and writes `trials.csv`, `metrics.csv`, `summary.csv` and
/// the effective `config.json` into the output directory.
pub fn run_and_write(cfg: &ExperimentConfig, jobs: Option<usize>) -> anyhow::Result<()> {
    let records = run_experiment(cfg, jobs)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    report::write_trials(&dir.join("trials.csv"), cfg.model, &records)?;
    write_reports(dir, cfg.model, &records, cfg.strict)
}

pub fn write_reports(
    dir: &Path,
    model: glmd_core::FamilyKind,
    records: &[TrialRecord],
    strict: bool,
) -> anyhow::Result<()> {
    let (metrics, summary) = report::compute(model, records, strict)?;
    report::write_csv(&dir.join("metrics.csv"), &metrics)?;
    report::write_csv(&dir.join("summary.csv"), &summary)?;
    Ok(())
}
