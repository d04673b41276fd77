//! B-spline basis expansion and the additive design used by the case study.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Basis specification over `[low, high]` with an open (clamped) knot vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineSpec {
    pub order: usize,
    pub interior_knots: Vec<f64>,
    pub low: f64,
    pub high: f64,
    pub drop_first: bool,
}

impl SplineSpec {
    /// Cubic (order 4) basis with the first function dropped, so that an
    /// intercept column stays identifiable.
    pub fn cubic(interior_knots: Vec<f64>, low: f64, high: f64) -> Result<Self> {
        let s = SplineSpec {
            order: 4,
            interior_knots,
            low,
            high,
            drop_first: true,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::invalid("spline order must be positive"));
        }
        if !(self.low.is_finite() && self.high.is_finite() && self.low < self.high) {
            return Err(Error::invalid("spline boundary must satisfy low < high"));
        }
        let mut prev = self.low;
        for &k in &self.interior_knots {
            if !(k > prev && k < self.high) {
                return Err(Error::invalid(
                    "interior knots must be strictly increasing and inside the boundary",
                ));
            }
            prev = k;
        }
        if self.drop_first && self.full_count() == 1 {
            return Err(Error::invalid("dropping the only basis function"));
        }
        Ok(())
    }

    fn full_count(&self) -> usize {
        self.interior_knots.len() + self.order
    }

    /// Number of values [`bspline_basis`] returns.
    pub fn basis_count(&self) -> usize {
        self.full_count() - usize::from(self.drop_first)
    }

    pub fn knot_vector(&self) -> Vec<f64> {
        let mut t = vec![self.low; self.order];
        t.extend_from_slice(&self.interior_knots);
        t.extend(core::iter::repeat_n(self.high, self.order));
        t
    }
}

/// The 0.25, 0.5 and 0.75 sample quantiles, interpolating linearly between
/// order statistics at position `(n − 1)q`.
pub fn quantile_knots(values: &[f64]) -> Result<[f64; 3]> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateKnots("non-finite value".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let distinct = 1 + v.windows(2).filter(|w| w[0] != w[1]).count();
    if v.is_empty() || distinct < 4 {
        return Err(Error::DegenerateKnots(format!(
            "need at least 4 distinct values, found {}",
            if v.is_empty() { 0 } else { distinct }
        )));
    }
    let q = |prob: f64| {
        let h = (v.len() - 1) as f64 * prob;
        let lo = libm::floor(h) as usize;
        let hi = (lo + 1).min(v.len() - 1);
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    Ok([q(0.25), q(0.5), q(0.75)])
}

/// Basis values at `x`, which is first clamped to `[low, high]`.
pub fn bspline_basis(x: f64, spec: &SplineSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if x.is_nan() {
        return Err(Error::invalid("spline argument is NaN"));
    }
    let mut out = vec![0.0; spec.full_count()];
    basis_into(x, spec, &spec.knot_vector(), &mut out);
    if spec.drop_first {
        out.remove(0);
    }
    Ok(out)
}

/// Fills `out` (length `interior + order`) with the full basis. The spec is
/// assumed valid.
fn basis_into(x: f64, spec: &SplineSpec, knots: &[f64], out: &mut [f64]) {
    let x = x.clamp(spec.low, spec.high);
    let degree = spec.order - 1;
    let m = spec.full_count();
    // knot span with t[s] <= x < t[s+1]; the right end belongs to the last span
    let span = if x >= spec.high {
        m - 1
    } else {
        let mut s = degree;
        while knots[s + 1] <= x {
            s += 1;
        }
        s
    };

    let mut n = vec![0.0; spec.order];
    let mut left = vec![0.0; spec.order];
    let mut right = vec![0.0; spec.order];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    out[span - degree..=span].copy_from_slice(&n);
}

/// Raw feature columns used linearly in the case-study design.
pub const CASE_STUDY_LINEAR: [usize; 3] = [2, 5, 7];
pub const CASE_STUDY_FEATURES: usize = 18;

/// Intercept, selected raw columns, then a spline block per expanded column.
#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveDesign {
    pub features: usize,
    pub linear: Vec<usize>,
    pub expanded: Vec<(usize, SplineSpec)>,
}

impl AdditiveDesign {
    /// Quartile-knot cubic bases for every column of `training` not listed in
    /// `linear`. Boundaries are the training minimum and maximum.
    pub fn fit(training: &Matrix, linear: &[usize]) -> Result<Self> {
        let features = training.cols();
        if linear.iter().any(|&c| c >= features) {
            return Err(Error::invalid("linear column outside the feature range"));
        }
        let mut expanded = Vec::new();
        for c in (0..features).filter(|c| !linear.contains(c)) {
            let col = training.column(c);
            let knots = quantile_knots(&col)?;
            let low = col.iter().copied().fold(f64::INFINITY, f64::min);
            let high = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let spec = SplineSpec::cubic(knots.to_vec(), low, high)
                .map_err(|e| Error::DegenerateKnots(format!("feature {c}: {e}")))?;
            expanded.push((c, spec));
        }
        let mut linear = linear.to_vec();
        linear.sort_unstable();
        Ok(AdditiveDesign {
            features,
            linear,
            expanded,
        })
    }

    /// The 94-column layout of the SUSY study.
    pub fn case_study(training: &Matrix) -> Result<Self> {
        if training.cols() != CASE_STUDY_FEATURES {
            return Err(Error::Dimension {
                expected: CASE_STUDY_FEATURES,
                found: training.cols(),
            });
        }
        Self::fit(training, &CASE_STUDY_LINEAR)
    }

    pub fn dim(&self) -> usize {
        1 + self.linear.len() + self.expanded.iter().map(|(_, s)| s.basis_count()).sum::<usize>()
    }

    pub fn expand_row(&self, features: &[f64], out: &mut [f64]) -> Result<()> {
        if features.len() != self.features {
            return Err(Error::Dimension {
                expected: self.features,
                found: features.len(),
            });
        }
        if out.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: out.len(),
            });
        }
        out[0] = 1.0;
        let mut at = 1;
        for &c in &self.linear {
            out[at] = features[c];
            at += 1;
        }
        for (c, spec) in &self.expanded {
            let mut full = vec![0.0; spec.full_count()];
            basis_into(features[*c], spec, &spec.knot_vector(), &mut full);
            let values = if spec.drop_first { &full[1..] } else { &full[..] };
            out[at..at + values.len()].copy_from_slice(values);
            at += values.len();
        }
        Ok(())
    }

    pub fn expand(&self, features: &Matrix) -> Result<Matrix> {
        let mut m = Matrix::zeros(features.rows(), self.dim());
        for i in 0..features.rows() {
            self.expand_row(features.row(i), m.row_mut(i))?;
        }
        Ok(m)
    }
}
