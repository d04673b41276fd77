//! Probit, logistic and Poisson families with unit dispersion, and the
//! likelihood quantities built from them: log-likelihood, score, Fisher
//! information and observed Hessian.
//!
//! For a linear predictor `eta = zᵀβ` the mean is `h(eta)`, the canonical
//! parameter is `u(eta)`, the variance is `v(eta)` and the Fisher weight is
//! `w(eta) = h'(eta)² / v(eta)`. The additive `log c(y)` term of the
//! log-likelihood is dropped throughout.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{check_len, dot, Matrix, SpdMatrix};
use crate::special::{normal_pdf, normal_tails_clamped};
use crate::sum::{pairwise, pairwise_scalar};

/// Poisson linear predictors above this raise [`Error::DivergedInput`].
pub const POISSON_ETA_MAX: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FamilyKind {
    Probit,
    Logistic,
    Poisson,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 3] = [FamilyKind::Probit, FamilyKind::Logistic, FamilyKind::Poisson];

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Probit => "probit",
            FamilyKind::Logistic => "logistic",
            FamilyKind::Poisson => "poisson",
        }
    }

    /// Byte used on the wire.
    pub fn code(self) -> u8 {
        match self {
            FamilyKind::Probit => 0,
            FamilyKind::Logistic => 1,
            FamilyKind::Poisson => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        FamilyKind::ALL.into_iter().find(|k| k.code() == code)
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FamilyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(alloc::format!("unknown model family `{s}`")))
    }
}

/// Which family function [`GlmFamily::eval`] returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyFn {
    H,
    HPrime,
    UPrime,
    UDoublePrime,
    UTriplePrime,
    V,
    W,
}

/// Per-observation derivative quantities at one linear predictor.
#[derive(Clone, Copy, Debug)]
struct Terms {
    h: f64,
    u1: f64,
    u2: f64,
    w: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GlmFamily {
    kind: FamilyKind,
}

impl From<FamilyKind> for GlmFamily {
    fn from(kind: FamilyKind) -> Self {
        GlmFamily { kind }
    }
}

impl GlmFamily {
    pub const PROBIT: GlmFamily = GlmFamily {
        kind: FamilyKind::Probit,
    };
    pub const LOGISTIC: GlmFamily = GlmFamily {
        kind: FamilyKind::Logistic,
    };
    pub const POISSON: GlmFamily = GlmFamily {
        kind: FamilyKind::Poisson,
    };

    pub fn kind(self) -> FamilyKind {
        self.kind
    }

    /// Logistic and Poisson use canonical links (`u(eta) = eta`).
    pub fn is_canonical(self) -> bool {
        !matches!(self.kind, FamilyKind::Probit)
    }

    /// Dispersion is fixed at one for every supported family.
    pub fn dispersion(self) -> f64 {
        1.0
    }

    /// Evaluates one family function at `eta`.
    pub fn eval(self, which: FamilyFn, eta: f64) -> Result<f64> {
        if !eta.is_finite() {
            return Err(Error::Domain("linear predictor"));
        }
        self.guard(eta)?;
        Ok(match self.kind {
            FamilyKind::Probit => probit_fn(which, eta),
            FamilyKind::Logistic => {
                let (h, q) = logistic_tails(eta);
                match which {
                    FamilyFn::H => h,
                    FamilyFn::HPrime | FamilyFn::V | FamilyFn::W => h * q,
                    FamilyFn::UPrime => 1.0,
                    FamilyFn::UDoublePrime | FamilyFn::UTriplePrime => 0.0,
                }
            }
            FamilyKind::Poisson => match which {
                FamilyFn::H | FamilyFn::HPrime | FamilyFn::V | FamilyFn::W => libm::exp(eta),
                FamilyFn::UPrime => 1.0,
                FamilyFn::UDoublePrime | FamilyFn::UTriplePrime => 0.0,
            },
        })
    }

    fn guard(self, eta: f64) -> Result<()> {
        if self.kind == FamilyKind::Poisson && eta > POISSON_ETA_MAX {
            return Err(Error::DivergedInput { eta });
        }
        Ok(())
    }

    /// Per-observation log-likelihood `y u(eta) - b(u(eta))`.
    fn loglik_term(self, eta: f64, y: f64) -> f64 {
        match self.kind {
            FamilyKind::Probit => {
                let (p, q) = normal_tails_clamped(eta);
                y * libm::log(p) + (1.0 - y) * libm::log(q)
            }
            FamilyKind::Logistic => {
                let softplus = eta.max(0.0) + libm::log1p(libm::exp(-eta.abs()));
                y * eta - softplus
            }
            FamilyKind::Poisson => y * eta - libm::exp(eta),
        }
    }

    fn terms(self, eta: f64) -> Terms {
        match self.kind {
            FamilyKind::Probit => {
                let (p, q) = normal_tails_clamped(eta);
                let phi = normal_pdf(eta);
                let g = p * q;
                let u1 = phi / g;
                Terms {
                    h: p,
                    u1,
                    u2: -eta * u1 - u1 * u1 * (q - p),
                    w: phi * u1,
                }
            }
            FamilyKind::Logistic => {
                let (h, q) = logistic_tails(eta);
                Terms {
                    h,
                    u1: 1.0,
                    u2: 0.0,
                    w: h * q,
                }
            }
            FamilyKind::Poisson => {
                let m = libm::exp(eta);
                Terms {
                    h: m,
                    u1: 1.0,
                    u2: 0.0,
                    w: m,
                }
            }
        }
    }

    /// Checks the response support: {0,1} for Bernoulli families,
    /// non-negative integers for Poisson.
    pub fn check_response(self, response: &[f64]) -> Result<()> {
        let bad = match self.kind {
            FamilyKind::Probit | FamilyKind::Logistic => {
                response.iter().position(|&y| y != 0.0 && y != 1.0)
            }
            FamilyKind::Poisson => response
                .iter()
                .position(|&y| !(y >= 0.0 && libm::trunc(y) == y && y.is_finite())),
        };
        match bad {
            Some(i) => Err(Error::invalid(alloc::format!(
                "response {i} ({}) outside the {} support",
                response[i],
                self.kind
            ))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for GlmFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind.fmt(f)
    }
}

fn logistic_tails(eta: f64) -> (f64, f64) {
    let e = libm::exp(-eta.abs());
    let big = 1.0 / (1.0 + e);
    let small = e / (1.0 + e);
    if eta >= 0.0 {
        (big, small)
    } else {
        (small, big)
    }
}

fn probit_fn(which: FamilyFn, eta: f64) -> f64 {
    let (p, q) = normal_tails_clamped(eta);
    let phi = normal_pdf(eta);
    let g = p * q;
    // 1 - 2 Phi, formed from the two tails to avoid cancellation
    let skew = q - p;
    // everything is written through u' = phi / g so the tails never square
    // an underflowing density
    let u1 = phi / g;
    match which {
        FamilyFn::H => p,
        FamilyFn::HPrime => phi,
        FamilyFn::V => g,
        FamilyFn::W => phi * u1,
        FamilyFn::UPrime => u1,
        FamilyFn::UDoublePrime => -eta * u1 - u1 * u1 * skew,
        FamilyFn::UTriplePrime => {
            let u1sq = u1 * u1;
            -u1 * (1.0 - eta * eta)
                + 3.0 * eta * u1sq * skew
                + 2.0 * u1sq * phi
                + 2.0 * u1sq * u1 * skew * skew
        }
    }
}

/// An `n × p` design with an `n`-vector response.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    design: Matrix,
    response: Vec<f64>,
}

impl Dataset {
    pub fn new(design: Matrix, response: Vec<f64>) -> Result<Self> {
        if design.rows() == 0 || design.cols() == 0 {
            return Err(Error::invalid("dataset needs at least one row and one column"));
        }
        check_len(design.rows(), response.len())?;
        if !design.is_finite() {
            return Err(Error::Domain("design matrix"));
        }
        if response.iter().any(|y| !y.is_finite()) {
            return Err(Error::Domain("response"));
        }
        Ok(Dataset { design, response })
    }

    pub fn n(&self) -> usize {
        self.design.rows()
    }

    pub fn p(&self) -> usize {
        self.design.cols()
    }

    pub fn design(&self) -> &Matrix {
        &self.design
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, range: core::ops::Range<usize>) -> Dataset {
        Dataset {
            design: self.design.slice_rows(range.clone()),
            response: self.response[range].to_vec(),
        }
    }

    /// Row-wise concatenation.
    pub fn concat<'a, I>(parts: I) -> Result<Dataset>
    where
        I: IntoIterator<Item = &'a Dataset>,
    {
        let parts: Vec<&Dataset> = parts.into_iter().collect();
        if parts.is_empty() {
            return Err(Error::invalid("concatenation of zero datasets"));
        }
        let design = Matrix::vstack(parts.iter().map(|d| &d.design))?;
        let response = parts.iter().flat_map(|d| d.response.iter().copied()).collect();
        Ok(Dataset { design, response })
    }

    fn linear_predictors(&self, family: GlmFamily, beta: &[f64]) -> Result<Vec<f64>> {
        check_len(self.p(), beta.len())?;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("coefficients"));
        }
        (0..self.n())
            .map(|i| {
                let eta = dot(self.design.row(i), beta);
                family.guard(eta).map(|_| eta)
            })
            .collect()
    }
}

/// `Σᵢ [yᵢ u(ηᵢ) − b(u(ηᵢ))]` with the `log c` term omitted.
pub fn log_likelihood(family: GlmFamily, data: &Dataset, beta: &[f64]) -> Result<f64> {
    let eta = data.linear_predictors(family, beta)?;
    let terms: Vec<f64> = eta
        .iter()
        .zip(data.response())
        .map(|(&e, &y)| family.loglik_term(e, y))
        .collect();
    Ok(pairwise_scalar(&terms))
}

/// Score `Σᵢ zᵢ u'(ηᵢ)(yᵢ − h(ηᵢ))`.
pub fn score(family: GlmFamily, data: &Dataset, beta: &[f64]) -> Result<Vec<f64>> {
    let eta = data.linear_predictors(family, beta)?;
    let weights: Vec<f64> = eta
        .iter()
        .zip(data.response())
        .map(|(&e, &y)| {
            let t = family.terms(e);
            t.u1 * (y - t.h)
        })
        .collect();
    Ok(weighted_row_sum(data.design(), &weights))
}

/// Fisher information `Σᵢ zᵢ w(ηᵢ) zᵢᵀ`, exactly symmetric.
pub fn fisher_info(family: GlmFamily, data: &Dataset, beta: &[f64]) -> Result<SpdMatrix> {
    let eta = data.linear_predictors(family, beta)?;
    let weights: Vec<f64> = eta.iter().map(|&e| family.terms(e).w).collect();
    Ok(weighted_gram(data.design(), &weights))
}

/// Observed Hessian `R(β) − F(β)` with `R = Σᵢ zᵢ u''(ηᵢ)(yᵢ − h(ηᵢ)) zᵢᵀ`.
///
/// For canonical families `R` vanishes and this is exactly `−F`.
pub fn observed_hessian(family: GlmFamily, data: &Dataset, beta: &[f64]) -> Result<Matrix> {
    let eta = data.linear_predictors(family, beta)?;
    let p = data.p();
    let terms: Vec<Terms> = eta.iter().map(|&e| family.terms(e)).collect();
    let fisher_w: Vec<f64> = terms.iter().map(|t| t.w).collect();
    let fisher = weighted_gram(data.design(), &fisher_w);
    let mut h = fisher.into_matrix();
    if family.is_canonical() {
        negate(&mut h);
        return Ok(h);
    }
    let r_w: Vec<f64> = terms
        .iter()
        .zip(data.response())
        .map(|(t, &y)| t.u2 * (y - t.h))
        .collect();
    let r = weighted_gram(data.design(), &r_w).into_matrix();
    for i in 0..p {
        for j in 0..p {
            h[(i, j)] = r[(i, j)] - h[(i, j)];
        }
    }
    Ok(h)
}

fn negate(m: &mut Matrix) {
    let (rows, cols) = (m.rows(), m.cols());
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = -m[(i, j)];
        }
    }
}

/// `Σᵢ cᵢ zᵢ` by pairwise summation over rows.
pub(crate) fn weighted_row_sum(design: &Matrix, weights: &[f64]) -> Vec<f64> {
    pairwise(design.rows(), design.cols(), |i, acc| {
        let c = weights[i];
        for (a, z) in acc.iter_mut().zip(design.row(i)) {
            *a += c * z;
        }
    })
}

/// `Σᵢ cᵢ zᵢ zᵢᵀ` accumulated on the packed upper triangle, then mirrored.
pub(crate) fn weighted_gram(design: &Matrix, weights: &[f64]) -> SpdMatrix {
    let p = design.cols();
    let packed = pairwise(design.rows(), p * (p + 1) / 2, |i, acc| {
        let z = design.row(i);
        let c = weights[i];
        let mut idx = 0;
        for j in 0..p {
            let cz = c * z[j];
            for (a, zl) in acc[idx..idx + p - j].iter_mut().zip(&z[j..]) {
                *a += cz * zl;
            }
            idx += p - j;
        }
    });
    SpdMatrix::from_packed_upper(p, &packed)
}

impl FromStr for GlmFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.parse::<FamilyKind>().map(GlmFamily::from)
    }
}

impl GlmFamily {
    pub fn name(self) -> &'static str {
        self.kind.name()
    }
}
