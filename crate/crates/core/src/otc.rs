//! Bayesian updates for an OTC market maker quoting `d` assets on both sides.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::bayes::GammaPrior;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::Bid => 0,
            Side::Ask => 1,
        }
    }
}

/// Gamma prior on the RFQ arrival intensity of one (asset, side).
pub type RfqGammaPrior = GammaPrior;

/// Posterior mean `(alpha + count) / (beta + exposure)` where the exposure
/// is `int int f(delta(s, z)) ds eta(dz)`.
pub fn update_rfq_intensity(prior: &RfqGammaPrior, count: u64, exposure: f64) -> Result<(RfqGammaPrior, f64)> {
    crate::bayes::update_intensity(prior, count, exposure)
}

/// Probability that a quote at distance `delta` is hit.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum FillProbability {
    /// `1 / (1 + exp(a + b delta))`.
    Logistic { a: f64, b: f64 },
    /// `exp(-k delta)` for `delta >= 0`, one below.
    Exponential { k: f64 },
}

impl FillProbability {
    pub fn eval(&self, delta: f64) -> f64 {
        match *self {
            FillProbability::Logistic { a, b } => 1.0 / (1.0 + math::exp(a + b * delta)),
            FillProbability::Exponential { k } => {
                if delta <= 0.0 {
                    1.0
                } else {
                    math::exp(-k * delta)
                }
            }
        }
    }
}

/// A quote held for `duration` at distance `delta`, covering a share
/// `weight` of the request-size distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuoteSegment {
    pub duration: f64,
    pub delta: f64,
    pub weight: f64,
}

pub fn quote_exposure(segments: &[QuoteSegment], f: &FillProbability) -> Result<f64> {
    let mut total = 0.0;
    for s in segments {
        if !(s.duration >= 0.0 && s.weight >= 0.0 && s.delta.is_finite()) {
            return Err(Error::domain(format!("bad quote segment {s:?}")));
        }
        total += s.duration * s.weight * f.eval(s.delta);
    }
    Ok(total)
}

/// Request sizes are `Gamma(a, b)` with known shape `a`; the rate `b` has a
/// `Gamma(a0, b0)` prior.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SizeScalePrior {
    pub shape: f64,
    pub a0: f64,
    pub b0: f64,
}

impl SizeScalePrior {
    pub fn new(shape: f64, a0: f64, b0: f64) -> Result<Self> {
        for (what, x) in [("size shape", shape), ("size prior a0", a0), ("size prior b0", b0)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::invalid(what, format!("expected a finite positive value, got {x}")));
            }
        }
        Ok(SizeScalePrior { shape, a0, b0 })
    }

    /// Posterior after `n` sizes summing to `total`.
    pub fn update_stats(&self, n: u64, total: f64) -> Result<Self> {
        if !(total >= 0.0 && total.is_finite()) {
            return Err(Error::domain(format!("size total must be non-negative, got {total}")));
        }
        Ok(SizeScalePrior {
            shape: self.shape,
            a0: self.a0 + n as f64 * self.shape,
            b0: self.b0 + total,
        })
    }

    pub fn mean(&self) -> f64 {
        self.a0 / self.b0
    }
}

/// Posterior and `(a0 + n a) / (b0 + sum z)`.
pub fn update_size_scale(prior: &SizeScalePrior, sizes: &[f64]) -> Result<(SizeScalePrior, f64)> {
    if let Some(z) = sizes.iter().find(|z| !(**z > 0.0 && z.is_finite())) {
        return Err(Error::domain(format!("sizes must be positive, got {z}")));
    }
    let post = prior.update_stats(sizes.len() as u64, sizes.iter().sum())?;
    Ok((post, post.mean()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NiwVariant {
    /// Scale update `psi + (x - x/t)(x - x/t)^T + k0 t/(k0 + t) (mu0 - x/t)(mu0 - x/t)^T`
    /// with `x` the displacement.
    #[default]
    Printed,
    /// Textbook update treating `x/t` as the mean of `t` unit-time observations.
    Standard,
}

/// `(mu, Sigma) ~ NIW(mu0, kappa0, nu0, psi)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NiwPrior {
    pub mu0: Vec<f64>,
    pub kappa0: f64,
    pub nu0: f64,
    pub psi: Matrix,
}

impl NiwPrior {
    pub fn new(mu0: Vec<f64>, kappa0: f64, nu0: f64, psi: Matrix) -> Result<Self> {
        let p = NiwPrior { mu0, kappa0, nu0, psi };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.psi.dim() != d {
            return Err(Error::invalid("niw prior", "mu0 and psi dimensions differ"));
        }
        if !(self.kappa0 > 0.0 && self.kappa0.is_finite()) {
            return Err(Error::invalid("niw prior", format!("kappa0 must be positive, got {}", self.kappa0)));
        }
        if !(self.nu0 > d as f64 - 1.0) {
            return Err(Error::invalid("niw prior", format!("nu0 must exceed d - 1 = {}, got {}", d - 1, self.nu0)));
        }
        if self.mu0.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("niw prior", "mu0 must be finite"));
        }
        self.psi
            .cholesky()
            .map(|_| ())
            .map_err(|e| Error::invalid("niw prior", format!("psi must be symmetric positive definite: {e}")))
    }

    /// `(mu_hat, Sigma_hat)`: the mean of `mu` and the mean `psi / (nu - d - 1)`
    /// of `Sigma`, which needs `nu > d + 1`.
    pub fn estimate(&self) -> Result<(Vec<f64>, Matrix)> {
        let excess = self.nu0 - self.dim() as f64 - 1.0;
        if !(excess > 0.0) {
            return Err(Error::Degenerate(format!("covariance mean undefined for nu = {}", self.nu0)));
        }
        Ok((self.mu0.clone(), self.psi.scaled(1.0 / excess)))
    }

    /// Posterior after a displacement `x` of the prices over time `t`.
    pub fn update(&self, displacement: &[f64], t: f64, variant: NiwVariant) -> Result<NiwPrior> {
        let d = self.dim();
        if displacement.len() != d {
            return Err(Error::domain(format!("expected a {d}-vector, got {}", displacement.len())));
        }
        if !(t > 0.0 && t.is_finite()) || displacement.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain(format!("update needs finite data and t > 0, got t = {t}")));
        }
        let kappa = self.kappa0 + t;
        let mu: Vec<f64> = (0..d).map(|i| (self.kappa0 * self.mu0[i] + displacement[i]) / kappa).collect();
        let mean: Vec<f64> = displacement.iter().map(|x| x / t).collect();
        let mut psi = self.psi.clone();
        if variant == NiwVariant::Printed {
            let resid: Vec<f64> = (0..d).map(|i| displacement[i] - mean[i]).collect();
            psi.add_outer(1.0, &resid);
        }
        let gap: Vec<f64> = (0..d).map(|i| self.mu0[i] - mean[i]).collect();
        psi.add_outer(self.kappa0 * t / kappa, &gap);
        psi.symmetrize();
        psi.cholesky()
            .map_err(|e| Error::Degenerate(format!("posterior psi lost positive definiteness: {e}")))?;
        Ok(NiwPrior {
            mu0: mu,
            kappa0: kappa,
            nu0: self.nu0 + t,
            psi,
        })
    }
}

/// Returns the posterior, `mu_hat` and `Sigma_hat`.
pub fn update_niw(prior: &NiwPrior, displacement: &[f64], t: f64, variant: NiwVariant) -> Result<(NiwPrior, Vec<f64>, Matrix)> {
    let post = prior.update(displacement, t, variant)?;
    let (mu, sigma) = post.estimate()?;
    Ok((post, mu, sigma))
}

/// Price increments summarised for a batch NIW update: total displacement,
/// total time, `sum x x^T / t` and `sum (1 - 1/t)^2 x x^T`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NiwStats {
    pub displacement: Vec<f64>,
    pub time: f64,
    pub weighted_scatter: Matrix,
    pub residual_scatter: Matrix,
}

impl NiwStats {
    pub fn zeros(d: usize) -> Self {
        NiwStats {
            displacement: vec![0.0; d],
            time: 0.0,
            weighted_scatter: Matrix::zeros(d),
            residual_scatter: Matrix::zeros(d),
        }
    }

    pub fn push(&mut self, displacement: &[f64], t: f64) -> Result<()> {
        if displacement.len() != self.displacement.len() {
            return Err(Error::domain("increment dimension differs"));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::domain(format!("increment needs t > 0, got {t}")));
        }
        for (a, x) in self.displacement.iter_mut().zip(displacement) {
            *a += x;
        }
        self.time += t;
        self.weighted_scatter.add_outer(1.0 / t, displacement);
        let r = 1.0 - 1.0 / t;
        self.residual_scatter.add_outer(r * r, displacement);
        Ok(())
    }

    pub fn merge(&mut self, other: &NiwStats) {
        for (a, x) in self.displacement.iter_mut().zip(&other.displacement) {
            *a += x;
        }
        self.time += other.time;
        let d = self.displacement.len();
        for i in 0..d {
            for j in 0..d {
                self.weighted_scatter
                    .set(i, j, self.weighted_scatter.get(i, j) + other.weighted_scatter.get(i, j));
                self.residual_scatter
                    .set(i, j, self.residual_scatter.get(i, j) + other.residual_scatter.get(i, j));
            }
        }
    }
}

impl NiwPrior {
    /// Posterior after all increments in `stats`; equals applying
    /// [`NiwPrior::update`] to each increment in turn.
    pub fn update_batch(&self, stats: &NiwStats, variant: NiwVariant) -> Result<NiwPrior> {
        let d = self.dim();
        if stats.displacement.len() != d {
            return Err(Error::domain("statistics dimension differs"));
        }
        if stats.time == 0.0 {
            return Ok(self.clone());
        }
        let kappa = self.kappa0 + stats.time;
        let mu: Vec<f64> = (0..d)
            .map(|i| (self.kappa0 * self.mu0[i] + stats.displacement[i]) / kappa)
            .collect();
        let mut psi = self.psi.clone();
        for i in 0..d {
            for j in 0..d {
                let mut x = psi.get(i, j) + stats.weighted_scatter.get(i, j) + self.kappa0 * self.mu0[i] * self.mu0[j]
                    - kappa * mu[i] * mu[j];
                if variant == NiwVariant::Printed {
                    x += stats.residual_scatter.get(i, j);
                }
                psi.set(i, j, x);
            }
        }
        psi.symmetrize();
        psi.cholesky()
            .map_err(|e| Error::Degenerate(format!("posterior psi lost positive definiteness: {e}")))?;
        Ok(NiwPrior {
            mu0: mu,
            kappa0: kappa,
            nu0: self.nu0 + stats.time,
            psi,
        })
    }
}

/// Priors of an OTC book over `d` assets.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OtcPriors {
    /// Indexed `asset * 2 + side`.
    pub rfq: Vec<RfqGammaPrior>,
    /// Indexed `asset * 2 + side`.
    pub size: Vec<SizeScalePrior>,
    pub niw: NiwPrior,
    pub variant: NiwVariant,
}

/// Sufficient statistics of an RFQ log, per `asset * 2 + side`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OtcStats {
    /// Requests that ended in a transaction.
    pub executions: Vec<u64>,
    /// `int f(delta(s)) ds` over the quotes in force.
    pub exposure: Vec<f64>,
    /// Number of observed request sizes and their sum.
    pub sizes: Vec<u64>,
    pub size_total: Vec<f64>,
    pub prices: NiwStats,
}

impl OtcStats {
    pub fn zeros(d: usize) -> Self {
        OtcStats {
            executions: vec![0; 2 * d],
            exposure: vec![0.0; 2 * d],
            sizes: vec![0; 2 * d],
            size_total: vec![0.0; 2 * d],
            prices: NiwStats::zeros(d),
        }
    }

    pub fn merge(&mut self, other: &OtcStats) {
        for (a, b) in self.executions.iter_mut().zip(&other.executions) {
            *a += b;
        }
        for (a, b) in self.exposure.iter_mut().zip(&other.exposure) {
            *a += b;
        }
        for (a, b) in self.sizes.iter_mut().zip(&other.sizes) {
            *a += b;
        }
        for (a, b) in self.size_total.iter_mut().zip(&other.size_total) {
            *a += b;
        }
        self.prices.merge(&other.prices);
    }
}

impl OtcPriors {
    pub fn validate(&self) -> Result<()> {
        let d = self.niw.dim();
        if self.rfq.len() != 2 * d || self.size.len() != 2 * d {
            return Err(Error::invalid("otc priors", format!("expected {} rfq and size priors", 2 * d)));
        }
        for g in &self.rfq {
            GammaPrior::new(g.alpha, g.beta)?;
        }
        for s in &self.size {
            SizeScalePrior::new(s.shape, s.a0, s.b0)?;
        }
        self.niw.validate()
    }

    pub fn update(&self, stats: &OtcStats) -> Result<OtcPriors> {
        Ok(OtcPriors {
            rfq: self
                .rfq
                .iter()
                .enumerate()
                .map(|(i, g)| g.update(stats.executions[i], stats.exposure[i]))
                .collect::<Result<_>>()?,
            size: self
                .size
                .iter()
                .enumerate()
                .map(|(i, s)| s.update_stats(stats.sizes[i], stats.size_total[i]))
                .collect::<Result<_>>()?,
            niw: self.niw.update_batch(&stats.prices, self.variant)?,
            variant: self.variant,
        })
    }
}
