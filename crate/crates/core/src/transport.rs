//! The coordinator's view of the workers.
//!
//! A [`Transport`] runs the two rounds of the exchange and returns worker
//! replies in ascending worker order. [`InProcessTransport`] evaluates the
//! shards directly; the `glmd` crate provides a socket-backed implementation
//! with the same semantics.

use alloc::vec::Vec;

use crate::distributed::{LocalFit, LocalScoreFisher, Method, Shard};
use crate::error::Result;
use crate::glm::{fisher_info, score, GlmFamily};
use crate::solver::{fit_mle, FitOptions};

pub trait Transport {
    /// Number of workers taking part.
    fn workers(&self) -> usize;

    /// Round one: every worker's local MLE and the Fisher information at it.
    fn local_fits(&mut self) -> Result<Vec<LocalFit>>;

    /// Round two: broadcast `beta` and collect local scores and Fisher
    /// matrices evaluated at it.
    fn local_score_fisher(&mut self, beta: &[f64]) -> Result<Vec<LocalScoreFisher>>;

    /// Delivers the final estimate to every worker.
    fn publish(&mut self, method: Method, estimate: &[f64]) -> Result<()>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn workers(&self) -> usize {
        (**self).workers()
    }
    fn local_fits(&mut self) -> Result<Vec<LocalFit>> {
        (**self).local_fits()
    }
    fn local_score_fisher(&mut self, beta: &[f64]) -> Result<Vec<LocalScoreFisher>> {
        (**self).local_score_fisher(beta)
    }
    fn publish(&mut self, method: Method, estimate: &[f64]) -> Result<()> {
        (**self).publish(method, estimate)
    }
}

/// Evaluates the shards in this process, one worker after another.
///
/// Local fits are deterministic, so round one is computed once and reused
/// when several estimators run over the same transport.
#[derive(Debug)]
pub struct InProcessTransport<'a> {
    family: GlmFamily,
    shards: &'a [Shard],
    opts: FitOptions,
    fits: Option<Vec<LocalFit>>,
}

impl<'a> InProcessTransport<'a> {
    pub fn new(family: GlmFamily, shards: &'a [Shard], opts: FitOptions) -> Self {
        InProcessTransport {
            family,
            shards,
            opts,
            fits: None,
        }
    }

    pub fn shards(&self) -> &'a [Shard] {
        self.shards
    }
}

/// Worker-side round one for a single shard.
pub fn worker_local_fit(family: GlmFamily, shard: &Shard, opts: &FitOptions) -> Result<LocalFit> {
    family.check_response(shard.data.response())?;
    let fit = fit_mle(family, &shard.data, None, opts)?;
    if !fit.converged {
        log::warn!(
            "worker {} local fit stopped after {} iterations (score norm {:e})",
            shard.worker_id,
            fit.iterations,
            fit.final_score_norm
        );
    }
    Ok(LocalFit::from_fit(shard.worker_id, &fit))
}

/// Worker-side round two for a single shard.
pub fn worker_score_fisher(family: GlmFamily, shard: &Shard, beta: &[f64]) -> Result<LocalScoreFisher> {
    Ok(LocalScoreFisher {
        worker_id: shard.worker_id,
        score: score(family, &shard.data, beta)?,
        fisher: fisher_info(family, &shard.data, beta)?,
    })
}

impl Transport for InProcessTransport<'_> {
    fn workers(&self) -> usize {
        self.shards.len()
    }

    fn local_fits(&mut self) -> Result<Vec<LocalFit>> {
        if let Some(f) = &self.fits {
            return Ok(f.clone());
        }
        let fits = self
            .shards
            .iter()
            .map(|s| worker_local_fit(self.family, s, &self.opts))
            .collect::<Result<Vec<_>>>()?;
        self.fits = Some(fits.clone());
        Ok(fits)
    }

    fn local_score_fisher(&mut self, beta: &[f64]) -> Result<Vec<LocalScoreFisher>> {
        self.shards
            .iter()
            .map(|s| worker_score_fisher(self.family, s, beta))
            .collect()
    }

    fn publish(&mut self, _method: Method, _estimate: &[f64]) -> Result<()> {
        Ok(())
    }
}

/// Payload-bearing exchanges per worker, in each direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MessageCounts {
    pub worker_to_coordinator: usize,
    pub coordinator_to_worker: usize,
}

/// Wraps a transport and counts the exchanges it performs.
///
/// Round one is one worker→coordinator message per worker; round two is one
/// message each way; publishing is one coordinator→worker message.
#[derive(Debug)]
pub struct CountingTransport<T> {
    inner: T,
    counts: MessageCounts,
}

impl<T: Transport> CountingTransport<T> {
    pub fn new(inner: T) -> Self {
        CountingTransport {
            inner,
            counts: MessageCounts::default(),
        }
    }

    pub fn counts(&self) -> MessageCounts {
        self.counts
    }

    pub fn into_inner(self) -> T {
        self.inner
    }
}

impl<T: Transport> Transport for CountingTransport<T> {
    fn workers(&self) -> usize {
        self.inner.workers()
    }

    fn local_fits(&mut self) -> Result<Vec<LocalFit>> {
        self.counts.worker_to_coordinator += 1;
        self.inner.local_fits()
    }

    fn local_score_fisher(&mut self, beta: &[f64]) -> Result<Vec<LocalScoreFisher>> {
        self.counts.coordinator_to_worker += 1;
        self.counts.worker_to_coordinator += 1;
        self.inner.local_score_fisher(beta)
    }

    fn publish(&mut self, method: Method, estimate: &[f64]) -> Result<()> {
        self.counts.coordinator_to_worker += 1;
        self.inner.publish(method, estimate)
    }
}
