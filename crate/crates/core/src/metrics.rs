//! Monte-Carlo summaries: RMSE, Wald coverage, relative efficiency and
//! coverage, empirical SE, AUC and a normality check.

use alloc::vec::Vec;

use crate::distributed::Method;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, spd_inverse, Matrix, SpdMatrix};

/// Normal quantile used for the 95% Wald interval.
pub const WALD_Z: f64 = 1.96;

/// Per-trial estimates of one method in one setting.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialArchive {
    pub method: Method,
    /// Row `t` is the estimate of trial `t`.
    pub estimates: Matrix,
    /// Row `t` is the diagonal of `F⁻¹` at trial `t`'s estimate.
    pub variances: Option<Matrix>,
    pub converged: Vec<bool>,
}

impl TrialArchive {
    pub fn new(
        method: Method,
        estimates: Matrix,
        variances: Option<Matrix>,
        converged: Vec<bool>,
    ) -> Result<Self> {
        if estimates.rows() == 0 {
            return Err(Error::invalid("archive needs at least one trial"));
        }
        if converged.len() != estimates.rows() {
            return Err(Error::Dimension {
                expected: estimates.rows(),
                found: converged.len(),
            });
        }
        if let Some(v) = &variances {
            if v.rows() != estimates.rows() || v.cols() != estimates.cols() {
                return Err(Error::invalid("variance matrix shape differs from estimates"));
            }
            if v.as_slice().iter().any(|x| !(*x > 0.0)) {
                return Err(Error::invalid("variances must be strictly positive"));
            }
        }
        Ok(TrialArchive {
            method,
            estimates,
            variances,
            converged,
        })
    }

    pub fn trials(&self) -> usize {
        self.estimates.rows()
    }

    pub fn p(&self) -> usize {
        self.estimates.cols()
    }

    pub fn nonconverged_fraction(&self) -> f64 {
        self.converged.iter().filter(|c| !**c).count() as f64 / self.trials() as f64
    }

    /// Only the converged trials, or `None` when there are none.
    pub fn converged_only(&self) -> Option<TrialArchive> {
        let keep: Vec<usize> = (0..self.trials()).filter(|&t| self.converged[t]).collect();
        if keep.is_empty() {
            return None;
        }
        let pick = |m: &Matrix| {
            let rows: Vec<&[f64]> = keep.iter().map(|&t| m.row(t)).collect();
            Matrix::from_rows(&rows).expect("rows share a width")
        };
        Some(TrialArchive {
            method: self.method,
            estimates: pick(&self.estimates),
            variances: self.variances.as_ref().map(pick),
            converged: alloc::vec![true; keep.len()],
        })
    }

    fn check_beta(&self, beta0: &[f64]) -> Result<()> {
        if beta0.len() != self.p() {
            return Err(Error::Dimension {
                expected: self.p(),
                found: beta0.len(),
            });
        }
        Ok(())
    }
}

/// Diagonal of `F⁻¹`: the Wald variances at an estimate.
pub fn wald_variances(fisher: &SpdMatrix) -> Result<Vec<f64>> {
    Ok(spd_inverse(&cholesky(fisher)?).diagonal())
}

/// `√((1/T) Σ_t (β̂_tj − β₀j)²)` per coordinate.
pub fn coordinatewise_rmse(archive: &TrialArchive, beta0: &[f64]) -> Result<Vec<f64>> {
    archive.check_beta(beta0)?;
    let t = archive.trials() as f64;
    Ok((0..archive.p())
        .map(|j| {
            let ss: f64 = (0..archive.trials())
                .map(|r| {
                    let d = archive.estimates[(r, j)] - beta0[j];
                    d * d
                })
                .sum();
            libm::sqrt(ss / t)
        })
        .collect())
}

/// Fraction of trials whose interval `β̂_tj ± 1.96 √v_tj` contains `β₀j`.
pub fn coverage(archive: &TrialArchive, beta0: &[f64]) -> Result<Vec<f64>> {
    archive.check_beta(beta0)?;
    let var = archive
        .variances
        .as_ref()
        .ok_or_else(|| Error::invalid("coverage needs per-trial variances"))?;
    let t = archive.trials();
    Ok((0..archive.p())
        .map(|j| {
            let hits = (0..t)
                .filter(|&r| {
                    (archive.estimates[(r, j)] - beta0[j]).abs() <= WALD_Z * libm::sqrt(var[(r, j)])
                })
                .count();
            hits as f64 / t as f64
        })
        .collect())
}

/// Sample standard deviation per column, divisor `T − 1`.
pub fn empirical_se(estimates: &Matrix) -> Result<Vec<f64>> {
    let t = estimates.rows();
    if t < 2 {
        return Err(Error::invalid("empirical SE needs at least two trials"));
    }
    Ok((0..estimates.cols())
        .map(|j| {
            let col = estimates.column(j);
            let mean = col.iter().sum::<f64>() / t as f64;
            let ss: f64 = col.iter().map(|x| (x - mean) * (x - mean)).sum();
            libm::sqrt(ss / (t - 1) as f64)
        })
        .collect())
}

/// Mann–Whitney AUC with ties counted one half.
///
/// The statistic is accumulated as the integer `2U` and divided once, so the
/// result equals a pairwise count evaluated the same way.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if labels.iter().any(|l| *l != 0.0 && *l != 1.0) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut negatives_below: u128 = 0;
    let mut twice_u: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        // -0.0 and 0.0 tie, so group by value rather than by total order
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] == 1.0 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_u += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        i = j;
    }
    let npos = labels.iter().filter(|l| **l == 1.0).count() as u128;
    let nneg = labels.len() as u128 - npos;
    if npos == 0 || nneg == 0 {
        return Err(Error::invalid("AUC needs both classes"));
    }
    Ok(twice_u as f64 / (2 * npos * nneg) as f64)
}

/// One coordinate of a method's report against the pooled baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordinateReport {
    pub rmse: f64,
    /// `None` when the baseline RMSE is zero.
    pub re: Option<f64>,
    /// `None` when the archive carries no variances.
    pub cpci: Option<f64>,
    /// `None` when either coverage is missing or the baseline's is zero.
    pub rc: Option<f64>,
}

pub fn relative_report(
    archive: &TrialArchive,
    baseline: &TrialArchive,
    beta0: &[f64],
) -> Result<Vec<CoordinateReport>> {
    let rmse = coordinatewise_rmse(archive, beta0)?;
    let base_rmse = coordinatewise_rmse(baseline, beta0)?;
    let cov = archive
        .variances
        .as_ref()
        .map(|_| coverage(archive, beta0))
        .transpose()?;
    let base_cov = baseline
        .variances
        .as_ref()
        .map(|_| coverage(baseline, beta0))
        .transpose()?;
    Ok((0..rmse.len())
        .map(|j| {
            let cpci = cov.as_ref().map(|c| c[j]);
            let rc = match (cpci, base_cov.as_ref().map(|c| c[j])) {
                (Some(c), Some(b)) if b > 0.0 => Some(c / b),
                _ => None,
            };
            CoordinateReport {
                rmse: rmse[j],
                re: (base_rmse[j] > 0.0).then(|| rmse[j] / base_rmse[j]),
                cpci,
                rc,
            }
        })
        .collect())
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// One-sample Kolmogorov–Smirnov test against N(0, 1): the statistic `D` and
/// its asymptotic p-value with Stephens' small-sample correction.
pub fn ks_normal(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() || samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("KS test needs finite samples"));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = crate::special::normal_cdf(*x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let sn = libm::sqrt(n);
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    Ok((d, kolmogorov_sf(lambda)))
}

/// `P(K > λ)` for the Kolmogorov distribution.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = libm::exp(-2.0 * jf * jf * lambda * lambda);
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
