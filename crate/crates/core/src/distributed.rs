//! Distributed estimators over K shards.
//!
//! The one-round estimators (weighted average, AEE) combine local MLEs. The
//! two-round estimators broadcast the weighted average back to the workers,
//! collect local scores and Fisher matrices at it, and take one
//! Fisher-scoring step: with the exact aggregate Fisher (`OneStep`) or with
//! worker 0's Fisher rescaled by `n / n₀` (`CslOneStep`).
//!
//! All aggregation happens in ascending worker order, so an estimate depends
//! only on the values the workers report, never on how they were delivered.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::glm::{Dataset, GlmFamily};
use crate::linalg::{check_len, Matrix, SpdMatrix};
use crate::solver::{fit_mle, scoring_direction, FitOptions, FitResult};
use crate::sum::pairwise;
use crate::transport::Transport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Average,
    Aee,
    OneStep,
    CslOneStep,
    Global,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Average,
        Method::Aee,
        Method::OneStep,
        Method::CslOneStep,
        Method::Global,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Average => "average",
            Method::Aee => "aee",
            Method::OneStep => "one_step",
            Method::CslOneStep => "csl_one_step",
            Method::Global => "global",
        }
    }

    /// Rounds of coordinator/worker communication the method needs.
    pub fn rounds_of_communication(self) -> u32 {
        match self {
            Method::Average | Method::Aee => 1,
            Method::OneStep | Method::CslOneStep => 2,
            Method::Global => 0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Method::Average => 0,
            Method::Aee => 1,
            Method::OneStep => 2,
            Method::CslOneStep => 3,
            Method::Global => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.code() == code)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(&norm))
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

/// One worker's block of the data.
#[derive(Clone, Debug, PartialEq)]
pub struct Shard {
    pub worker_id: u32,
    pub data: Dataset,
}

/// What a worker reports after its local fit (round one).
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFit {
    pub worker_id: u32,
    pub local_n: u64,
    pub converged: bool,
    pub iterations: u32,
    pub estimate: Vec<f64>,
    /// Local Fisher information at the local estimate.
    pub fisher: SpdMatrix,
}

impl LocalFit {
    pub fn from_fit(worker_id: u32, fit: &FitResult) -> Self {
        LocalFit {
            worker_id,
            local_n: fit.local_n as u64,
            converged: fit.converged,
            iterations: fit.iterations as u32,
            estimate: fit.estimate.clone(),
            fisher: fit.fisher_at_estimate.clone(),
        }
    }
}

/// Local score and Fisher information at the broadcast estimate (round two).
#[derive(Clone, Debug, PartialEq)]
pub struct LocalScoreFisher {
    pub worker_id: u32,
    pub score: Vec<f64>,
    pub fisher: SpdMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributedEstimate {
    pub method: Method,
    pub estimate: Vec<f64>,
    /// `Σₖ Fₖ(β̄)` for one-step, the pooled Fisher at the estimate for global.
    pub global_fisher: Option<SpdMatrix>,
    pub rounds_of_communication: u32,
    pub local_convergence: Vec<bool>,
}

impl DistributedEstimate {
    pub fn all_converged(&self) -> bool {
        self.local_convergence.iter().all(|c| *c)
    }
}

fn check_ordered<T>(items: &[T], id: impl Fn(&T) -> u32) -> Result<()> {
    if items.is_empty() {
        return Err(Error::invalid("no worker results"));
    }
    for (k, item) in items.iter().enumerate() {
        if id(item) as usize != k {
            return Err(Error::invalid(format!(
                "worker ids must be contiguous from 0 in ascending order (position {k} holds {})",
                id(item)
            )));
        }
    }
    Ok(())
}

fn check_dims(fits: &[LocalFit]) -> Result<usize> {
    check_ordered(fits, |f| f.worker_id)?;
    let p = fits[0].estimate.len();
    for f in fits {
        check_len(p, f.estimate.len())?;
        check_len(p, f.fisher.dim())?;
    }
    Ok(p)
}

/// `Σₖ (nₖ / n) β̂ₖ` in worker order.
pub fn weighted_average(fits: &[LocalFit]) -> Result<Vec<f64>> {
    let p = check_dims(fits)?;
    let n: u64 = fits.iter().map(|f| f.local_n).sum();
    if n == 0 {
        return Err(Error::invalid("total sample size is zero"));
    }
    let n = n as f64;
    Ok(pairwise(fits.len(), p, |k, acc| {
        let f = &fits[k];
        let weight = f.local_n as f64 / n;
        for (a, b) in acc.iter_mut().zip(&f.estimate) {
            *a += weight * b;
        }
    }))
}

/// Sum of worker vectors in worker order.
fn sum_vectors(items: &[&[f64]], p: usize) -> Vec<f64> {
    pairwise(items.len(), p, |k, acc| {
        for (a, v) in acc.iter_mut().zip(items[k]) {
            *a += v;
        }
    })
}

/// Sum of worker Fisher matrices in worker order.
fn sum_fishers<'a, I>(mats: I, p: usize) -> Result<SpdMatrix>
where
    I: IntoIterator<Item = &'a SpdMatrix>,
{
    let items: Vec<&[f64]> = mats.into_iter().map(|m| m.matrix().as_slice()).collect();
    let total = Matrix::from_row_major(p, p, sum_vectors(&items, p * p))?;
    Ok(SpdMatrix::symmetrized(total))
}

/// Fisher-weighted combination `[Σₖ Fₖ(β̂ₖ)]⁻¹ Σₖ Fₖ(β̂ₖ) β̂ₖ`.
pub fn aee_combine(fits: &[LocalFit]) -> Result<DistributedEstimate> {
    let p = check_dims(fits)?;
    let total = sum_fishers(fits.iter().map(|f| &f.fisher), p)?;
    let weighted = fits
        .iter()
        .map(|f| f.fisher.matrix().mul_vec(&f.estimate))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = weighted.iter().map(Vec::as_slice).collect();
    let rhs = sum_vectors(&refs, p);
    let estimate = scoring_direction(&total, &rhs)?;
    Ok(DistributedEstimate {
        method: Method::Aee,
        estimate,
        global_fisher: None,
        rounds_of_communication: Method::Aee.rounds_of_communication(),
        local_convergence: fits.iter().map(|f| f.converged).collect(),
    })
}

fn convergence(fits: &[LocalFit]) -> Vec<bool> {
    fits.iter().map(|f| f.converged).collect()
}

/// Round one only: the weighted average of local MLEs.
pub fn average_distributed<T: Transport + ?Sized>(transport: &mut T) -> Result<DistributedEstimate> {
    let fits = transport.local_fits()?;
    let estimate = weighted_average(&fits)?;
    transport.publish(Method::Average, &estimate)?;
    Ok(DistributedEstimate {
        method: Method::Average,
        estimate,
        global_fisher: None,
        rounds_of_communication: Method::Average.rounds_of_communication(),
        local_convergence: convergence(&fits),
    })
}

/// Round one only: the AEE combination of local MLEs and Fisher matrices.
pub fn aee_distributed<T: Transport + ?Sized>(transport: &mut T) -> Result<DistributedEstimate> {
    let fits = transport.local_fits()?;
    let est = aee_combine(&fits)?;
    transport.publish(Method::Aee, &est.estimate)?;
    Ok(est)
}

struct SecondRound {
    fits: Vec<LocalFit>,
    average: Vec<f64>,
    locals: Vec<LocalScoreFisher>,
    score: Vec<f64>,
}

fn second_round<T: Transport + ?Sized>(transport: &mut T) -> Result<SecondRound> {
    let fits = transport.local_fits()?;
    let average = weighted_average(&fits)?;
    let locals = transport.local_score_fisher(&average)?;
    check_ordered(&locals, |l| l.worker_id)?;
    if locals.len() != fits.len() {
        return Err(Error::invalid("round two answered by a different worker set"));
    }
    let p = average.len();
    for l in &locals {
        check_len(p, l.score.len())?;
        check_len(p, l.fisher.dim())?;
    }
    let refs: Vec<&[f64]> = locals.iter().map(|l| l.score.as_slice()).collect();
    let score = sum_vectors(&refs, p);
    Ok(SecondRound {
        fits,
        average,
        locals,
        score,
    })
}

/// The two-round one-step estimator:
///
/// 1. local MLEs β̂ₖ;
/// 2. β̄ = Σ (nₖ/n) β̂ₖ;
/// 3. broadcast β̄, collect Sₖ(β̄) and Fₖ(β̄);
/// 4. S(β̄) = Σ Sₖ(β̄), F(β̄) = Σ Fₖ(β̄);
/// 5. β̄⁽¹⁾ = β̄ + F(β̄)⁻¹ S(β̄).
pub fn one_step_distributed<T: Transport + ?Sized>(transport: &mut T) -> Result<DistributedEstimate> {
    let round = second_round(transport)?;
    let fisher = sum_fishers(round.locals.iter().map(|l| &l.fisher), round.average.len())?;
    let delta = scoring_direction(&fisher, &round.score)?;
    let estimate: Vec<f64> = round.average.iter().zip(&delta).map(|(b, d)| b + d).collect();
    transport.publish(Method::OneStep, &estimate)?;
    Ok(DistributedEstimate {
        method: Method::OneStep,
        estimate,
        global_fisher: Some(fisher),
        rounds_of_communication: Method::OneStep.rounds_of_communication(),
        local_convergence: convergence(&round.fits),
    })
}

/// As [`one_step_distributed`] but with `F(β̄) ≈ (n / n₀) F₀(β̄)`, worker 0
/// standing in for the whole system, so the step is `(n₀ / n) F₀⁻¹ S`.
pub fn csl_one_step<T: Transport + ?Sized>(transport: &mut T) -> Result<DistributedEstimate> {
    let round = second_round(transport)?;
    let n: u64 = round.fits.iter().map(|f| f.local_n).sum();
    let n0 = round.fits[0].local_n;
    let delta = scoring_direction(&round.locals[0].fisher, &round.score)?;
    let scale = n0 as f64 / n as f64;
    let estimate: Vec<f64> = round
        .average
        .iter()
        .zip(&delta)
        .map(|(b, d)| b + scale * d)
        .collect();
    transport.publish(Method::CslOneStep, &estimate)?;
    Ok(DistributedEstimate {
        method: Method::CslOneStep,
        estimate,
        global_fisher: None,
        rounds_of_communication: Method::CslOneStep.rounds_of_communication(),
        local_convergence: convergence(&round.fits),
    })
}

/// Runs any of the four distributed methods over `transport`.
pub fn run_method<T: Transport + ?Sized>(method: Method, transport: &mut T) -> Result<DistributedEstimate> {
    match method {
        Method::Average => average_distributed(transport),
        Method::Aee => aee_distributed(transport),
        Method::OneStep => one_step_distributed(transport),
        Method::CslOneStep => csl_one_step(transport),
        Method::Global => Err(Error::invalid(
            "the global estimator needs the pooled data, not a transport",
        )),
    }
}

/// Pooled-data MLE over the shards concatenated in worker order.
pub fn global_fit(family: GlmFamily, shards: &[Shard], opts: &FitOptions) -> Result<DistributedEstimate> {
    check_ordered(shards, |s| s.worker_id)?;
    let pooled = Dataset::concat(shards.iter().map(|s| &s.data))?;
    let fit = fit_mle(family, &pooled, None, opts)?;
    Ok(DistributedEstimate {
        method: Method::Global,
        local_convergence: alloc::vec![fit.converged; shards.len()],
        estimate: fit.estimate,
        global_fisher: Some(fit.fisher_at_estimate),
        rounds_of_communication: Method::Global.rounds_of_communication(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::transport::{CountingTransport, InProcessTransport};
    use alloc::vec;

    fn fit(worker_id: u32, n: u64, estimate: &[f64], fisher: SpdMatrix) -> LocalFit {
        LocalFit {
            worker_id,
            local_n: n,
            converged: true,
            iterations: 3,
            estimate: estimate.to_vec(),
            fisher,
        }
    }

    fn spd(rows: &[[f64; 2]]) -> SpdMatrix {
        SpdMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(Method::from_code(m.code()), Some(m));
        }
        assert_eq!("one-step".parse::<Method>().unwrap(), Method::OneStep);
        assert!("newton".parse::<Method>().is_err());
    }

    #[test]
    fn weighted_average_examples() {
        let single = [fit(0, 10, &[1.5, -2.0], SpdMatrix::identity(2))];
        assert_eq!(weighted_average(&single).unwrap(), vec![1.5, -2.0]);

        let two = [
            fit(0, 1, &[0.0], SpdMatrix::identity(1)),
            fit(1, 3, &[4.0], SpdMatrix::identity(1)),
        ];
        assert_eq!(weighted_average(&two).unwrap(), vec![3.0]);
        assert!(weighted_average(&[]).is_err());
    }

    #[test]
    fn weighted_average_matches_oracle() {
        let mut rng = crate::rng::SplitMix64::new(5);
        let fits: Vec<LocalFit> = (0..5)
            .map(|k| {
                let n = 10 + (rng.next_u64() % 90);
                let est: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
                fit(k, n, &est, SpdMatrix::identity(3))
            })
            .collect();
        let got = weighted_average(&fits).unwrap();
        let total: f64 = fits.iter().map(|f| f.local_n as f64).sum();
        for j in 0..3 {
            let mut num = 0.0;
            for f in &fits {
                num += f.local_n as f64 * f.estimate[j];
            }
            assert!((got[j] - num / total).abs() <= 1e-15 * (num / total).abs().max(1.0));
        }
    }

    #[test]
    fn rejects_out_of_order_workers() {
        let fits = [
            fit(1, 1, &[0.0], SpdMatrix::identity(1)),
            fit(0, 1, &[0.0], SpdMatrix::identity(1)),
        ];
        assert!(weighted_average(&fits).is_err());
    }

    #[test]
    fn aee_single_worker_is_identity() {
        let f = spd(&[[3.0, 1.0], [1.0, 2.0]]);
        let est = aee_combine(&[fit(0, 7, &[0.4, -1.1], f)]).unwrap();
        assert!((est.estimate[0] - 0.4).abs() < 1e-15);
        assert!((est.estimate[1] + 1.1).abs() < 1e-15);
        assert_eq!(est.rounds_of_communication, 1);
    }

    #[test]
    fn aee_common_estimate_is_fixed_point() {
        let fits = [
            fit(0, 5, &[0.5, 2.0], spd(&[[3.0, 1.0], [1.0, 2.0]])),
            fit(1, 5, &[0.5, 2.0], spd(&[[9.0, -2.0], [-2.0, 1.0]])),
            fit(2, 5, &[0.5, 2.0], spd(&[[1.0, 0.0], [0.0, 4.0]])),
        ];
        let est = aee_combine(&fits).unwrap();
        assert!((est.estimate[0] - 0.5).abs() < 1e-14);
        assert!((est.estimate[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn aee_two_by_two_hand_oracle() {
        let f1 = [[2.0, 0.5], [0.5, 1.0]];
        let f2 = [[1.0, -0.25], [-0.25, 3.0]];
        let b1 = [1.0, -1.0];
        let b2 = [0.2, 0.6];
        let fits = [fit(0, 10, &b1, spd(&f1)), fit(1, 10, &b2, spd(&f2))];
        let est = aee_combine(&fits).unwrap();

        let s = [
            [f1[0][0] + f2[0][0], f1[0][1] + f2[0][1]],
            [f1[1][0] + f2[1][0], f1[1][1] + f2[1][1]],
        ];
        let r = [
            f1[0][0] * b1[0] + f1[0][1] * b1[1] + f2[0][0] * b2[0] + f2[0][1] * b2[1],
            f1[1][0] * b1[0] + f1[1][1] * b1[1] + f2[1][0] * b2[0] + f2[1][1] * b2[1],
        ];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let x0 = (s[1][1] * r[0] - s[0][1] * r[1]) / det;
        let x1 = (s[0][0] * r[1] - s[1][0] * r[0]) / det;
        assert!((est.estimate[0] - x0).abs() <= 1e-12);
        assert!((est.estimate[1] - x1).abs() <= 1e-12);
    }

    #[test]
    fn aee_with_scaled_identity_is_weighted_average() {
        let ns = [3u64, 5, 8];
        let total: u64 = ns.iter().sum();
        let fits: Vec<LocalFit> = ns
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let est = [k as f64 * 0.3 - 0.2, 1.0 / (k as f64 + 1.0)];
                fit(k as u32, n, &est, SpdMatrix::identity(2).scaled(n as f64 / total as f64))
            })
            .collect();
        let aee = aee_combine(&fits).unwrap().estimate;
        let avg = weighted_average(&fits).unwrap();
        for (a, b) in aee.iter().zip(&avg) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn aee_singular_aggregate() {
        let z = SpdMatrix::symmetrized(Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap());
        assert!(matches!(
            aee_combine(&[fit(0, 1, &[0.0, 0.0], z)]),
            Err(Error::SingularFisher { .. })
        ));
    }

    fn replicated_shards(k: u32) -> Vec<Shard> {
        let z = Matrix::from_rows(&[
            [1.0, 0.3],
            [1.0, -1.2],
            [1.0, 0.8],
            [1.0, 2.0],
            [1.0, -0.4],
            [1.0, 0.1],
        ])
        .unwrap();
        let d = Dataset::new(z, vec![0.0, 0.0, 1.0, 1.0, 1.0, 0.0]).unwrap();
        (0..k)
            .map(|worker_id| Shard {
                worker_id,
                data: d.clone(),
            })
            .collect()
    }

    #[test]
    fn replicated_shards_stay_at_common_mle() {
        let opts = FitOptions::default();
        let shards = replicated_shards(4);
        let local = fit_mle(GlmFamily::LOGISTIC, &shards[0].data, None, &opts).unwrap();
        let mut t = InProcessTransport::new(GlmFamily::LOGISTIC, &shards, opts);
        let one = one_step_distributed(&mut t).unwrap();
        for (a, b) in one.estimate.iter().zip(&local.estimate) {
            assert!((a - b).abs() <= 1e-8);
        }
        let csl = csl_one_step(&mut t).unwrap();
        for (a, b) in csl.estimate.iter().zip(&one.estimate) {
            assert!((a - b).abs() <= 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn csl_equals_one_step_for_one_worker() {
        let shards = replicated_shards(1);
        let mut t = InProcessTransport::new(GlmFamily::LOGISTIC, &shards, FitOptions::default());
        let one = one_step_distributed(&mut t).unwrap();
        let csl = csl_one_step(&mut t).unwrap();
        assert_eq!(one.estimate, csl.estimate);
    }

    #[test]
    fn rounds_are_accounted() {
        let shards = replicated_shards(3);
        for m in [Method::Average, Method::Aee, Method::OneStep, Method::CslOneStep] {
            let inner = InProcessTransport::new(GlmFamily::LOGISTIC, &shards, FitOptions::default());
            let mut t = CountingTransport::new(inner);
            let est = run_method(m, &mut t).unwrap();
            assert_eq!(est.rounds_of_communication, m.rounds_of_communication());
            assert_eq!(est.local_convergence.len(), 3);
            let c = t.counts();
            assert_eq!(c.worker_to_coordinator, m.rounds_of_communication() as usize);
            assert_eq!(c.coordinator_to_worker, m.rounds_of_communication() as usize);
            assert_eq!(est.global_fisher.is_some(), m == Method::OneStep);
        }
        let g = global_fit(GlmFamily::LOGISTIC, &shards, &FitOptions::default()).unwrap();
        assert_eq!(g.rounds_of_communication, 0);
        assert!(g.global_fisher.is_some());
        assert!(run_method(Method::Global, &mut InProcessTransport::new(
            GlmFamily::LOGISTIC,
            &shards,
            FitOptions::default()
        ))
        .is_err());
    }
}
