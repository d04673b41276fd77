//! Fisher-scoring maximum likelihood and the single one-step update.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::glm::{fisher_info, log_likelihood, score, Dataset, GlmFamily};
use crate::linalg::{cholesky, spd_solve, CholeskyFactor, SpdMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Threshold on the max-norm of the score.
    pub score_tolerance: f64,
    pub step_halving_max: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 50,
            score_tolerance: 1e-8,
            step_halving_max: 10,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.score_tolerance > 0.0) {
            return Err(Error::invalid("score_tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub estimate: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_score_norm: f64,
    /// Fisher information evaluated at `estimate`.
    pub fisher_at_estimate: SpdMatrix,
    pub local_n: usize,
    /// Log-likelihood at the start and after every accepted step.
    pub log_likelihood_trace: Vec<f64>,
}

pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn factor_fisher(fisher: &SpdMatrix) -> Result<CholeskyFactor> {
    cholesky(fisher).map_err(|e| match e {
        Error::NotPositiveDefinite { index } => Error::SingularFisher { pivot: index },
        other => other,
    })
}

/// Solves `F δ = s` for the Fisher-scoring direction.
pub(crate) fn scoring_direction(fisher: &SpdMatrix, score: &[f64]) -> Result<Vec<f64>> {
    spd_solve(&factor_fisher(fisher)?, score)
}

/// Iterates `β ← β + F(β)⁻¹ S(β)` from `init` (zero when absent) until
/// `‖S‖∞ ≤ score_tolerance` or the iteration cap.
///
/// A step is halved, at most `step_halving_max` times, while it lowers the
/// log-likelihood by more than rounding noise. When no halving is accepted
/// the fit stops unconverged at the last iterate.
pub fn fit_mle(
    family: GlmFamily,
    data: &Dataset,
    init: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<FitResult> {
    opts.validate()?;
    let p = data.p();
    if data.n() < p {
        log::warn!("fitting {p} coefficients on only {} observations", data.n());
    }
    let mut beta = match init {
        Some(b) => {
            if b.len() != p {
                return Err(Error::Dimension {
                    expected: p,
                    found: b.len(),
                });
            }
            b.to_vec()
        }
        None => vec![0.0; p],
    };

    let diverged = |iteration: usize, beta: &[f64]| Error::Divergence {
        iteration,
        estimate: beta.to_vec(),
    };

    let mut ll = log_likelihood(family, data, &beta).map_err(|e| match e {
        Error::DivergedInput { .. } => diverged(0, &beta),
        other => other,
    })?;
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = false;
    let mut s = score(family, data, &beta)?;

    loop {
        if max_norm(&s) <= opts.score_tolerance {
            converged = true;
            break;
        }
        if iterations == opts.max_iterations {
            break;
        }
        let fisher = fisher_info(family, data, &beta)?;
        let delta = scoring_direction(&fisher, &s)?;

        let noise = 1e-12 * ll.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.step_halving_max {
            let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
            match log_likelihood(family, data, &cand) {
                Ok(c) if c.is_finite() && c >= ll - noise => {
                    accepted = Some((cand, c));
                    break;
                }
                Ok(_) | Err(Error::DivergedInput { .. }) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        iterations += 1;
        match accepted {
            Some((cand, c)) => {
                beta = cand;
                ll = c;
                trace.push(ll);
                s = score(family, data, &beta).map_err(|_| diverged(iterations, &beta))?;
            }
            None => {
                log::debug!("no ascent step after {} halvings", opts.step_halving_max);
                break;
            }
        }
    }

    let fisher_at_estimate = fisher_info(family, data, &beta)?;
    Ok(FitResult {
        final_score_norm: max_norm(&s),
        estimate: beta,
        converged,
        iterations,
        fisher_at_estimate,
        local_n: data.n(),
        log_likelihood_trace: trace,
    })
}

/// One raw Fisher-scoring step `β₀ + F(β₀)⁻¹ S(β₀)`; no halving, no
/// convergence test.
pub fn one_step_update(family: GlmFamily, data: &Dataset, beta0: &[f64]) -> Result<Vec<f64>> {
    let s = score(family, data, beta0).map_err(|e| match e {
        Error::DivergedInput { .. } => Error::Divergence {
            iteration: 0,
            estimate: beta0.to_vec(),
        },
        other => other,
    })?;
    let fisher = fisher_info(family, data, beta0)?;
    let delta = scoring_direction(&fisher, &s)?;
    Ok(beta0.iter().zip(&delta).map(|(b, d)| b + d).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::observed_hessian;
    use crate::linalg::{eigen_extremes, Matrix};
    use crate::rng::SplitMix64;
    use crate::special::normal_cdf;

    fn data(rows: &[&[f64]], y: &[f64]) -> Dataset {
        Dataset::new(Matrix::from_rows(rows).unwrap(), y.to_vec()).unwrap()
    }

    fn synthetic(family: GlmFamily, n: usize, beta0: &[f64], seed: u64) -> Dataset {
        let p = beta0.len();
        let mut rng = SplitMix64::new(seed);
        let mut z = Vec::with_capacity(n * p);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..p).map(|_| rng.standard_normal()).collect();
            let eta: f64 = row.iter().zip(beta0).map(|(a, b)| a * b).sum();
            let u = rng.next_f64();
            y.push(match family.kind() {
                crate::glm::FamilyKind::Probit => (u < normal_cdf(eta)) as u8 as f64,
                crate::glm::FamilyKind::Logistic => (u < 1.0 / (1.0 + libm::exp(-eta))) as u8 as f64,
                crate::glm::FamilyKind::Poisson => {
                    let lam = libm::exp(eta);
                    let (mut k, mut pk) = (0.0, libm::exp(-lam));
                    let mut c = pk;
                    while u > c && k < 200.0 {
                        k += 1.0;
                        pk *= lam / k;
                        c += pk;
                    }
                    k
                }
            });
            z.extend(row);
        }
        Dataset::new(Matrix::from_row_major(n, p, z).unwrap(), y).unwrap()
    }

    #[test]
    fn balanced_intercept_logistic() {
        let d = data(&[&[1.0], &[1.0]], &[0.0, 1.0]);
        let r = fit_mle(GlmFamily::LOGISTIC, &d, None, &FitOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.estimate, vec![0.0]);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn intercept_poisson_is_log_mean() {
        let d = data(&[&[1.0], &[1.0], &[1.0]], &[2.0, 3.0, 1.0]);
        let r = fit_mle(GlmFamily::POISSON, &d, None, &FitOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.estimate[0] - libm::log(2.0)).abs() < 1e-9);
        assert!(r.final_score_norm <= 1e-8);
        assert_eq!(
            r.fisher_at_estimate,
            fisher_info(GlmFamily::POISSON, &d, &r.estimate).unwrap()
        );
    }

    #[test]
    fn probit_matches_grid_search() {
        let beta0 = [0.3, -0.4];
        let d = synthetic(GlmFamily::PROBIT, 200, &beta0, 17);
        let r = fit_mle(GlmFamily::PROBIT, &d, None, &FitOptions::default()).unwrap();
        assert!(r.converged);

        // coarse 1e-2 grid, then a 1e-4 grid around the coarse winner
        let best = |center: [f64; 2], half: f64, h: f64| {
            let steps = (2.0 * half / h) as i64;
            let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
            for i in 0..=steps {
                for j in 0..=steps {
                    let b = [center[0] - half + i as f64 * h, center[1] - half + j as f64 * h];
                    let ll = log_likelihood(GlmFamily::PROBIT, &d, &b).unwrap();
                    if ll > best.0 {
                        best = (ll, b);
                    }
                }
            }
            best.1
        };
        let coarse = best([0.0, 0.0], 1.0, 1e-2);
        let fine = best(coarse, 2e-2, 1e-4);
        for k in 0..2 {
            assert!((r.estimate[k] - fine[k]).abs() <= 1e-4, "{:?} vs {:?}", r.estimate, fine);
        }
    }

    #[test]
    fn one_step_poisson_hand_arithmetic() {
        let d = data(&[&[1.0], &[1.0]], &[1.0, 3.0]);
        // S = 1 + 3 - 2 = 2, F = 2
        let b = one_step_update(GlmFamily::POISSON, &d, &[0.0]).unwrap();
        assert!((b[0] - 1.0).abs() <= 2.0 * f64::EPSILON);
    }

    #[test]
    fn one_step_matches_elimination() {
        let beta0 = [0.5, -0.25];
        let d = synthetic(GlmFamily::LOGISTIC, 8, &beta0, 3);
        let start = [0.6, -0.1];
        let got = one_step_update(GlmFamily::LOGISTIC, &d, &start).unwrap();
        let s = score(GlmFamily::LOGISTIC, &d, &start).unwrap();
        let f = fisher_info(GlmFamily::LOGISTIC, &d, &start).unwrap();
        // Cramer's rule on the 2x2 system
        let det = f[(0, 0)] * f[(1, 1)] - f[(0, 1)] * f[(1, 0)];
        let d0 = (s[0] * f[(1, 1)] - f[(0, 1)] * s[1]) / det;
        let d1 = (f[(0, 0)] * s[1] - f[(1, 0)] * s[0]) / det;
        assert!((got[0] - (start[0] + d0)).abs() <= 1e-10);
        assert!((got[1] - (start[1] + d1)).abs() <= 1e-10);
    }

    #[test]
    fn fixed_point_at_mle() {
        for (k, f) in [GlmFamily::PROBIT, GlmFamily::LOGISTIC, GlmFamily::POISSON].into_iter().enumerate() {
            let d = synthetic(f, 400, &[0.25, -0.25, 0.5], 40 + k as u64);
            let opts = FitOptions::default();
            let r = fit_mle(f, &d, None, &opts).unwrap();
            assert!(r.converged);
            let stepped = one_step_update(f, &d, &r.estimate).unwrap();
            let (lmin, _) = eigen_extremes(&r.fisher_at_estimate, 1e-10).unwrap();
            let dev = max_norm(
                &stepped.iter().zip(&r.estimate).map(|(a, b)| a - b).collect::<Vec<_>>(),
            );
            assert!(dev <= 100.0 * opts.score_tolerance / lmin, "{f}: {dev}");
        }
    }

    #[test]
    fn likelihood_trace_is_monotone() {
        for (k, f) in [GlmFamily::PROBIT, GlmFamily::LOGISTIC, GlmFamily::POISSON].into_iter().enumerate() {
            let d = synthetic(f, 300, &[1.0, -1.5, 0.5, 0.75], 60 + k as u64);
            let r = fit_mle(f, &d, None, &FitOptions::default()).unwrap();
            for w in r.log_likelihood_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0));
            }
        }
    }

    #[test]
    fn newton_equals_fisher_for_canonical_links() {
        for f in [GlmFamily::LOGISTIC, GlmFamily::POISSON] {
            let d = synthetic(f, 50, &[0.3, -0.2, 0.1], 8);
            let beta = [0.1, 0.1, -0.1];
            let s = score(f, &d, &beta).unwrap();
            let neg_h = observed_hessian(f, &d, &beta).unwrap();
            let mut m = neg_h.clone();
            for i in 0..3 {
                for j in 0..3 {
                    m[(i, j)] = -neg_h[(i, j)];
                }
            }
            let newton = scoring_direction(&SpdMatrix::new(m).unwrap(), &s).unwrap();
            let fisher = scoring_direction(&fisher_info(f, &d, &beta).unwrap(), &s).unwrap();
            for (a, b) in newton.iter().zip(&fisher) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn column_rescaling() {
        let d = synthetic(GlmFamily::LOGISTIC, 200, &[0.4, -0.6], 12);
        let base = fit_mle(GlmFamily::LOGISTIC, &d, None, &FitOptions::default()).unwrap();
        let c = 2.5;
        let mut z = d.design().clone();
        for i in 0..z.rows() {
            z[(i, 1)] *= c;
        }
        let scaled = Dataset::new(z, d.response().to_vec()).unwrap();
        let r = fit_mle(GlmFamily::LOGISTIC, &scaled, None, &FitOptions::default()).unwrap();
        assert!((r.estimate[0] - base.estimate[0]).abs() <= 1e-8 * base.estimate[0].abs());
        assert!((r.estimate[1] - base.estimate[1] / c).abs() <= 1e-8 * (base.estimate[1] / c).abs());
    }

    #[test]
    fn singular_design_reports_singular_fisher() {
        let d = data(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]], &[0.0, 1.0, 1.0]);
        assert!(matches!(
            fit_mle(GlmFamily::LOGISTIC, &d, None, &FitOptions::default()),
            Err(Error::SingularFisher { .. })
        ));
        assert!(matches!(
            one_step_update(GlmFamily::LOGISTIC, &d, &[0.0, 0.0]),
            Err(Error::SingularFisher { .. })
        ));
    }

    #[test]
    fn separated_data_does_not_converge() {
        let d = data(&[&[1.0, -2.0], &[1.0, -1.0], &[1.0, 1.0], &[1.0, 2.0]], &[0.0, 0.0, 1.0, 1.0]);
        match fit_mle(GlmFamily::LOGISTIC, &d, None, &FitOptions::default()) {
            // the score vanishes along the separating direction, so a
            // "converged" fit can only come with a runaway estimate
            Ok(r) => assert!(!r.converged || r.estimate[1] > 10.0, "{r:?}"),
            Err(e) => assert!(e.is_numerical()),
        }
    }

    #[test]
    fn option_validation() {
        let d = data(&[&[1.0]], &[1.0]);
        let bad = FitOptions {
            max_iterations: 0,
            ..FitOptions::default()
        };
        assert!(fit_mle(GlmFamily::POISSON, &d, None, &bad).is_err());
        assert!(fit_mle(GlmFamily::POISSON, &d, Some(&[0.0, 1.0]), &FitOptions::default()).is_err());
    }
}
