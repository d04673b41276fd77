//! Seeded synthetic data: AR(1) Gaussian designs, GLM responses, shard
//! partitioning and design diagnostics.
//!
//! Randomness is drawn per row. Row `i` of a dataset with seed `s` uses its
//! own SplitMix64 stream seeded from `(s, i)` (one stream for the covariates,
//! another for the response), so any row range can be regenerated on its own
//! and the pooled data is the same whatever the shard count.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::distributed::Shard;
use crate::error::{Error, Result};
use crate::glm::{Dataset, FamilyFn, FamilyKind, GlmFamily};
use crate::linalg::{dot, eigen_extremes, Matrix};
use crate::rng::{mix_seed, SplitMix64};

const STREAM_DESIGN: u64 = 0xD5;
const STREAM_RESPONSE: u64 = 0x5E;
const QUARTIC_DIRECTIONS_SEED: u64 = 0x0A11_CE5E_ED00_0004;
const QUARTIC_RANDOM_DIRECTIONS: usize = 64;

/// One synthetic setting: model, size, AR(1) correlation and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SimDesign {
    pub model: FamilyKind,
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub seed: u64,
    pub k: usize,
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.k == 0 {
            return Err(Error::invalid("n, p and K must be positive"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::invalid("rho must lie in [0, 1)"));
        }
        if self.k > self.n {
            return Err(Error::invalid("more shards than observations"));
        }
        Ok(())
    }

    pub fn family(&self) -> GlmFamily {
        self.model.into()
    }
}

/// Seed of trial `t` under `base_seed`.
pub fn trial_seed(base_seed: u64, trial: u64) -> u64 {
    mix_seed(base_seed, trial)
}

fn row_rng(seed: u64, row: usize, stream: u64) -> SplitMix64 {
    SplitMix64::new(mix_seed(mix_seed(seed, row as u64), stream))
}

/// The full `n × p` design.
pub fn gen_design(design: &SimDesign) -> Matrix {
    gen_design_rows(design, 0..design.n)
}

/// Rows `rows` of the design: `x₁ = ε₁`, `xⱼ = ρ xⱼ₋₁ + √(1−ρ²) εⱼ`, which
/// has covariance `ρ^|i−j|`.
pub fn gen_design_rows(design: &SimDesign, rows: Range<usize>) -> Matrix {
    let p = design.p;
    let rho = design.rho;
    let innovation = libm::sqrt(1.0 - rho * rho);
    let mut m = Matrix::zeros(rows.len(), p);
    for (r, i) in rows.enumerate() {
        let mut rng = row_rng(design.seed, i, STREAM_DESIGN);
        let out = m.row_mut(r);
        let mut prev = rng.standard_normal();
        out[0] = prev;
        for x in out.iter_mut().skip(1) {
            prev = rho * prev + innovation * rng.standard_normal();
            *x = prev;
        }
    }
    m
}

/// Alternating true coefficients: `(−0.25, 0.25, …)` for the binary models,
/// `(0.5, −0.5, …)` for Poisson.
pub fn true_beta(model: FamilyKind, p: usize) -> Vec<f64> {
    let first = match model {
        FamilyKind::Probit | FamilyKind::Logistic => -0.25,
        FamilyKind::Poisson => 0.5,
    };
    (0..p).map(|j| if j % 2 == 0 { first } else { -first }).collect()
}

/// Responses for every row of `design_matrix`.
pub fn gen_response(
    family: GlmFamily,
    design_matrix: &Matrix,
    beta0: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    gen_response_rows(family, design_matrix, 0, beta0, seed)
}

/// Responses for a block of rows whose first row has global index
/// `first_row`.
pub fn gen_response_rows(
    family: GlmFamily,
    rows: &Matrix,
    first_row: usize,
    beta0: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    if rows.cols() != beta0.len() {
        return Err(Error::Dimension {
            expected: rows.cols(),
            found: beta0.len(),
        });
    }
    (0..rows.rows())
        .map(|r| {
            let eta = dot(rows.row(r), beta0);
            let mean = family.eval(FamilyFn::H, eta)?;
            let mut rng = row_rng(seed, first_row + r, STREAM_RESPONSE);
            Ok(match family.kind() {
                FamilyKind::Probit | FamilyKind::Logistic => {
                    if rng.next_f64() < mean {
                        1.0
                    } else {
                        0.0
                    }
                }
                FamilyKind::Poisson => sample_poisson(&mut rng, mean),
            })
        })
        .collect()
}

/// Poisson variate: sequential-search inversion below mean 30, Hörmann's
/// PTRS transformed rejection above.
pub fn sample_poisson(rng: &mut SplitMix64, mean: f64) -> f64 {
    if mean < 30.0 {
        let u = rng.next_f64();
        let mut k = 0.0;
        let mut pk = libm::exp(-mean);
        let mut cdf = pk;
        while u > cdf {
            k += 1.0;
            pk *= mean / k;
            cdf += pk;
            // the remaining tail is below double precision
            if pk == 0.0 && k > mean {
                break;
            }
        }
        return k;
    }
    let slam = libm::sqrt(mean);
    let loglam = libm::log(mean);
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.next_f64() - 0.5;
        let v = rng.next_f64();
        let us = 0.5 - u.abs();
        let k = libm::floor((2.0 * a / us + b) * u + mean + 0.43);
        if us >= 0.07 && v <= vr {
            return k;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = libm::log(v) + libm::log(inv_alpha) - libm::log(a / (us * us) + b);
        if lhs <= -mean + k * loglam - libm::lgamma(k + 1.0) {
            return k;
        }
    }
}

/// The pooled dataset of one trial, generated at the model's true
/// coefficients.
pub fn generate_dataset(design: &SimDesign) -> Result<Dataset> {
    design.validate()?;
    let z = gen_design(design);
    let y = gen_response(design.family(), &z, &true_beta(design.model, design.p), design.seed)?;
    Dataset::new(z, y)
}

/// Worker `worker_id`'s shard of the trial, generated without the rest.
pub fn generate_shard(design: &SimDesign, worker_id: u32) -> Result<Shard> {
    design.validate()?;
    let ranges = shard_ranges(design.n, design.k)?;
    let range = ranges
        .get(worker_id as usize)
        .cloned()
        .ok_or_else(|| Error::invalid("worker id outside 0..K"))?;
    let z = gen_design_rows(design, range.clone());
    let beta0 = true_beta(design.model, design.p);
    let y = gen_response_rows(design.family(), &z, range.start, &beta0, design.seed)?;
    Ok(Shard {
        worker_id,
        data: Dataset::new(z, y)?,
    })
}

/// Contiguous blocks of `0..n`: the first `n mod k` blocks hold one extra row.
pub fn shard_ranges(n: usize, k: usize) -> Result<Vec<Range<usize>>> {
    if k == 0 || k > n {
        return Err(Error::invalid("shard count must be in 1..=n"));
    }
    let base = n / k;
    let extra = n % k;
    let mut start = 0;
    Ok((0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

pub fn partition_shards(data: &Dataset, k: usize) -> Result<Vec<Shard>> {
    Ok(shard_ranges(data.n(), k)?
        .into_iter()
        .enumerate()
        .map(|(w, r)| Shard {
            worker_id: w as u32,
            data: data.slice(r),
        })
        .collect())
}

/// Empirical checks of the design conditions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DesignDiagnostics {
    /// Extreme eigenvalues of `ZᵀZ / n`.
    pub lambda_min_over_n: f64,
    pub lambda_max_over_n: f64,
    pub max_row_norm_sq: f64,
    /// `max_α (1/n) Σ |αᵀzᵢ|⁴` over the coordinate axes and 64 seeded random
    /// unit directions. A lower bound on the supremum, not a certificate.
    pub quartic_proxy: f64,
}

pub fn design_diagnostics(design_matrix: &Matrix) -> Result<DesignDiagnostics> {
    let n = design_matrix.rows();
    let p = design_matrix.cols();
    if n < p || p == 0 {
        return Err(Error::invalid("diagnostics need n >= p >= 1"));
    }
    let inv_n = 1.0 / n as f64;
    let gram = crate::glm::weighted_gram(design_matrix, &vec![inv_n; n]);
    let (lambda_min_over_n, lambda_max_over_n) = eigen_extremes(&gram, 1e-12)?;

    let max_row_norm_sq = (0..n)
        .map(|i| {
            let r = design_matrix.row(i);
            dot(r, r)
        })
        .fold(0.0, f64::max);

    let quartic = |alpha: &[f64]| -> f64 {
        let s: f64 = (0..n)
            .map(|i| {
                let t = dot(alpha, design_matrix.row(i));
                let t2 = t * t;
                t2 * t2
            })
            .sum();
        s * inv_n
    };
    let mut quartic_proxy = 0.0_f64;
    let mut axis = vec![0.0; p];
    for j in 0..p {
        axis.iter_mut().for_each(|v| *v = 0.0);
        axis[j] = 1.0;
        quartic_proxy = quartic_proxy.max(quartic(&axis));
    }
    let mut rng = SplitMix64::new(QUARTIC_DIRECTIONS_SEED);
    for _ in 0..QUARTIC_RANDOM_DIRECTIONS {
        let mut alpha: Vec<f64> = (0..p).map(|_| rng.standard_normal()).collect();
        let norm = libm::sqrt(dot(&alpha, &alpha));
        alpha.iter_mut().for_each(|v| *v /= norm);
        quartic_proxy = quartic_proxy.max(quartic(&alpha));
    }

    Ok(DesignDiagnostics {
        lambda_min_over_n,
        lambda_max_over_n,
        max_row_norm_sq,
        quartic_proxy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::normal_cdf;
    use crate::test_oracles::bisect_eigen;

    fn design(model: FamilyKind, n: usize, p: usize, rho: f64, seed: u64) -> SimDesign {
        SimDesign {
            model,
            n,
            p,
            rho,
            seed,
            k: 1,
        }
    }

    fn sample_cov(z: &Matrix) -> Matrix {
        let n = z.rows() as f64;
        let g = z.transpose().matmul(z).unwrap();
        let mut c = g;
        for i in 0..z.cols() {
            for j in 0..z.cols() {
                c[(i, j)] /= n;
            }
        }
        c
    }

    #[test]
    fn independent_columns_at_rho_zero() {
        let z = gen_design(&design(FamilyKind::Probit, 100_000, 4, 0.0, 1));
        let c = sample_cov(&z);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let corr = c[(i, j)] / libm::sqrt(c[(i, i)] * c[(j, j)]);
                    assert!(corr.abs() <= 0.02);
                }
            }
        }
    }

    #[test]
    fn ar1_covariance() {
        for p in [4, 8] {
            let z = gen_design(&design(FamilyKind::Probit, 100_000, p, 0.75, 2));
            let c = sample_cov(&z);
            for i in 0..p {
                for j in 0..p {
                    let target = libm::pow(0.75, (i as f64 - j as f64).abs());
                    assert!((c[(i, j)] - target).abs() <= 0.02, "({i},{j})");
                }
            }
        }
    }

    #[test]
    fn deterministic_and_row_addressable() {
        let d = design(FamilyKind::Poisson, 50, 3, 0.5, 99);
        assert_eq!(gen_design(&d), gen_design(&d));
        let full = gen_design(&d);
        assert_eq!(gen_design_rows(&d, 10..20), full.slice_rows(10..20));
    }

    #[test]
    fn true_beta_patterns() {
        assert_eq!(true_beta(FamilyKind::Probit, 4), vec![-0.25, 0.25, -0.25, 0.25]);
        assert_eq!(true_beta(FamilyKind::Poisson, 2), vec![0.5, -0.5]);
        assert_eq!(true_beta(FamilyKind::Logistic, 1), vec![-0.25]);
    }

    fn constant_rows(n: usize, value: f64) -> Matrix {
        Matrix::from_row_major(n, 1, vec![value; n]).unwrap()
    }

    #[test]
    fn logistic_at_zero_is_fair_coin() {
        let z = constant_rows(100_000, 1.0);
        let y = gen_response(GlmFamily::LOGISTIC, &z, &[0.0], 3).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((0.495..=0.505).contains(&mean));
    }

    #[test]
    fn poisson_intercept_mean() {
        let z = constant_rows(100_000, 1.0);
        let y = gen_response(GlmFamily::POISSON, &z, &[0.0], 4).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((0.99..=1.01).contains(&mean));
    }

    #[test]
    fn probit_success_rate() {
        let z = constant_rows(100_000, 1.0);
        let y = gen_response(GlmFamily::PROBIT, &z, &[1.0], 5).unwrap();
        let rate = y.iter().sum::<f64>() / y.len() as f64;
        assert!((rate - normal_cdf(1.0)).abs() <= 0.005);
    }

    #[test]
    fn ptrs_moments() {
        let mut rng = SplitMix64::new(8);
        let n = 50_000;
        for mean in [30.0, 75.5, 400.0] {
            let xs: Vec<f64> = (0..n).map(|_| sample_poisson(&mut rng, mean)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
            assert!((m - mean).abs() <= 4.0 * libm::sqrt(mean / n as f64), "mean {m}");
            assert!((v / mean - 1.0).abs() <= 0.05, "var {v}");
            assert!(xs.iter().all(|x| *x >= 0.0 && libm::trunc(*x) == *x));
        }
    }

    #[test]
    fn shard_sizes() {
        let sizes = |n, k| {
            shard_ranges(n, k)
                .unwrap()
                .iter()
                .map(|r| r.len())
                .collect::<Vec<_>>()
        };
        assert_eq!(sizes(8, 4), vec![2, 2, 2, 2]);
        assert_eq!(sizes(10, 4), vec![3, 3, 2, 2]);
        assert!(shard_ranges(3, 4).is_err());
        assert!(shard_ranges(3, 0).is_err());
    }

    #[test]
    fn generated_shard_matches_partition() {
        let mut d = design(FamilyKind::Logistic, 103, 3, 0.75, 21);
        d.k = 4;
        let pooled = generate_dataset(&d).unwrap();
        let parts = partition_shards(&pooled, 4).unwrap();
        for w in 0..4 {
            assert_eq!(generate_shard(&d, w).unwrap(), parts[w as usize]);
        }
        assert!(generate_shard(&d, 4).is_err());
    }

    #[test]
    fn diagnostics_on_identity() {
        let d = design_diagnostics(&Matrix::identity(5)).unwrap();
        assert!((d.lambda_min_over_n - 0.2).abs() < 1e-12);
        assert!((d.lambda_max_over_n - 0.2).abs() < 1e-12);
        assert_eq!(d.max_row_norm_sq, 1.0);
    }

    #[test]
    fn diagnostics_on_scaled_orthonormal_columns() {
        // Hadamard columns are orthogonal with squared norm n.
        let h = [
            [1.0, 1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ];
        let z = Matrix::from_rows(&h).unwrap();
        let d = design_diagnostics(&z).unwrap();
        assert!((d.lambda_min_over_n - 1.0).abs() < 1e-12);
        assert!((d.lambda_max_over_n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagnostics_match_bisection_oracle() {
        let z = gen_design(&design(FamilyKind::Probit, 4096, 8, 0.75, 7));
        let d = design_diagnostics(&z).unwrap();
        let gram = sample_cov(&z);
        let lo = bisect_eigen(&gram, 0);
        let hi = bisect_eigen(&gram, 7);
        assert!(((d.lambda_min_over_n - lo) / lo).abs() <= 1e-6);
        assert!(((d.lambda_max_over_n - hi) / hi).abs() <= 1e-6);
        assert!(d.quartic_proxy >= 3.0 * 0.9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partition_round_trip(n in 1usize..60, k in 1usize..60, seed in any::<u64>()) {
                prop_assume!(k <= n);
                let d = generate_dataset(&SimDesign {
                    model: FamilyKind::Poisson, n, p: 2, rho: 0.3, seed, k,
                }).unwrap();
                let shards = partition_shards(&d, k).unwrap();
                let sizes: Vec<usize> = shards.iter().map(|s| s.data.n()).collect();
                let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
                let back = Dataset::concat(shards.iter().map(|s| &s.data)).unwrap();
                prop_assert_eq!(back, d);
            }
        }
    }
}
