//! Conjugate updates of every market parameter.
//!
//! * fill intensities: Gamma prior, Poisson counts against the exposure
//!   `int f(l) ds`;
//! * executed proportions: Dirichlet prior, categorical counts;
//! * spread/imbalance chains: Gamma prior on each exit rate, Dirichlet prior
//!   on each row of jump probabilities;
//! * drift and volatility: Normal-Inverse-Gamma prior, or a Normal prior on
//!   the drift when the volatility is known.
//!
//! Updates only ever see sufficient statistics ([`SliceStats`]), so the
//! order of events inside a log is irrelevant and updating on a
//! concatenated log equals updating on its parts in sequence.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::market::{Generator, IntensityTable, Limit, MarketSpec, PriceModel, Process, ProportionTable, RateMatrix};
use crate::math;
use crate::simulator::EventLog;

/// Smallest hyperparameter used when a prior is centred on a zero rate or
/// probability.
pub const PRIOR_FLOOR: f64 = 1e-9;

fn positive(what: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(what, format!("expected a finite positive value, got {x}")))
    }
}

fn non_negative(what: &'static str, x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must be finite and non-negative, got {x}")))
    }
}

/// Normalises positive weights so that the `f64` sum is exactly one.
pub fn normalize_exact(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut out: Vec<f64> = weights.iter().map(|w| w / total).collect();
    if out.len() < 2 {
        return out;
    }
    let big = (0..out.len()).fold(0, |b, i| if out[i] > out[b] { i } else { b });
    let rest: f64 = out.iter().enumerate().filter(|(i, _)| *i != big).map(|(_, p)| p).sum();
    out[big] = 1.0 - rest;
    for _ in 0..64 {
        let s: f64 = out.iter().sum();
        if s == 1.0 {
            break;
        }
        let fixed = out[big] - (s - 1.0);
        out[big] = if fixed != out[big] {
            fixed
        } else if s > 1.0 {
            out[big].next_down()
        } else {
            out[big].next_up()
        };
    }
    let n = out.len();
    if out.iter().sum::<f64>() != 1.0 {
        let head: f64 = out[..n - 1].iter().sum();
        if head <= 1.0 {
            out[n - 1] = 1.0 - head;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GammaPrior {
    /// Shape.
    pub alpha: f64,
    /// Rate.
    pub beta: f64,
}

impl GammaPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        positive("gamma prior alpha", alpha)?;
        positive("gamma prior beta", beta)?;
        Ok(GammaPrior { alpha, beta })
    }

    /// Prior with mean `rate` worth `weight` units of exposure.
    pub fn centered(rate: f64, weight: f64) -> Result<Self> {
        GammaPrior::new((rate * weight).max(PRIOR_FLOOR), weight)
    }

    pub fn update(&self, count: u64, exposure: f64) -> Result<Self> {
        non_negative("exposure", exposure)?;
        Ok(GammaPrior {
            alpha: self.alpha + count as f64,
            beta: self.beta + exposure,
        })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / self.beta
    }
}

/// Posterior and posterior mean `(alpha + N) / (beta + exposure)`.
pub fn update_intensity(prior: &GammaPrior, fills: u64, exposure: f64) -> Result<(GammaPrior, f64)> {
    let post = prior.update(fills, exposure)?;
    Ok((post, post.mean()))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DirichletPrior {
    pub alpha: Vec<f64>,
}

impl DirichletPrior {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::invalid("dirichlet prior", "empty concentration vector"));
        }
        for a in &alpha {
            positive("dirichlet prior alpha", *a)?;
        }
        Ok(DirichletPrior { alpha })
    }

    /// Prior with mean `probs` and total concentration `weight`.
    pub fn centered(probs: &[f64], weight: f64) -> Result<Self> {
        DirichletPrior::new(probs.iter().map(|p| (p * weight).max(PRIOR_FLOOR)).collect())
    }

    pub fn update(&self, counts: &[u64]) -> Result<Self> {
        if counts.len() != self.alpha.len() {
            return Err(Error::domain(format!("expected {} counts, got {}", self.alpha.len(), counts.len())));
        }
        Ok(DirichletPrior {
            alpha: self.alpha.iter().zip(counts).map(|(a, c)| a + *c as f64).collect(),
        })
    }

    pub fn mean(&self) -> Vec<f64> {
        normalize_exact(&self.alpha)
    }
}

/// Posterior and posterior mean `(alpha + c) / sum(alpha + c)`.
pub fn update_proportions(prior: &DirichletPrior, counts: &[u64]) -> Result<(DirichletPrior, Vec<f64>)> {
    let post = prior.update(counts)?;
    let mean = post.mean();
    Ok((post, mean))
}

/// Point estimate of a chain's exit rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CtmcEstimator {
    /// `(a + n - 1) / (b + T)`.
    #[default]
    Mode,
    /// `(a + n) / (b + T)`.
    Mean,
}

/// Transition counts and holding times of one chain.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChainStats {
    /// `counts[k][k']`, zero on the diagonal.
    pub counts: Vec<Vec<u64>>,
    /// Total time spent in each state.
    pub holding: Vec<f64>,
}

impl ChainStats {
    pub fn zeros(size: usize) -> Self {
        ChainStats {
            counts: vec![vec![0; size]; size],
            holding: vec![0.0; size],
        }
    }

    pub fn merge(&mut self, other: &ChainStats) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (c, x) in row.iter_mut().zip(o) {
                *c += x;
            }
        }
        for (h, x) in self.holding.iter_mut().zip(&other.holding) {
            *h += x;
        }
    }
}

/// Priors of one chain: Gamma on each exit rate, Dirichlet on each row.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChainPrior {
    pub holding: Vec<GammaPrior>,
    /// `transitions[k][k']`; the diagonal is ignored and stored as zero.
    pub transitions: Vec<Vec<f64>>,
}

impl ChainPrior {
    pub fn validate(&self) -> Result<()> {
        let n = self.holding.len();
        if self.transitions.len() != n || self.transitions.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("ctmc prior", "holding and transition priors must be square of the same size"));
        }
        for (k, g) in self.holding.iter().enumerate() {
            GammaPrior::new(g.alpha, g.beta)?;
            for (j, a) in self.transitions[k].iter().enumerate() {
                if j != k && n > 1 {
                    positive("ctmc transition prior", *a)?;
                }
            }
        }
        Ok(())
    }

    /// Prior whose point estimate under `estimator` is `matrix`, worth
    /// `holding_weight` minutes per state and `transition_weight` jumps per row.
    pub fn centered(matrix: &RateMatrix, holding_weight: f64, transition_weight: f64, estimator: CtmcEstimator) -> Result<Self> {
        positive("ctmc holding weight", holding_weight)?;
        positive("ctmc transition weight", transition_weight)?;
        let n = matrix.size();
        let mut holding = Vec::with_capacity(n);
        let mut transitions = Vec::with_capacity(n);
        for k in 0..n {
            let nu = matrix.exit_rate(k);
            let a = match estimator {
                CtmcEstimator::Mode => nu * holding_weight + 1.0,
                CtmcEstimator::Mean => (nu * holding_weight).max(PRIOR_FLOOR),
            };
            holding.push(GammaPrior::new(a, holding_weight)?);
            let p = matrix.jump_probabilities(k);
            transitions.push(
                (0..n)
                    .map(|j| if j == k { 0.0 } else { (p[j] * transition_weight).max(PRIOR_FLOOR) })
                    .collect(),
            );
        }
        let prior = ChainPrior { holding, transitions };
        prior.validate()?;
        Ok(prior)
    }

    pub fn update(&self, stats: &ChainStats) -> Result<Self> {
        let n = self.holding.len();
        if stats.counts.len() != n || stats.holding.len() != n {
            return Err(Error::domain("chain statistics do not match the prior size"));
        }
        let mut post = self.clone();
        for k in 0..n {
            if stats.counts[k][k] != 0 {
                return Err(Error::domain(format!("self-transition count in state {k}")));
            }
            let exits: u64 = stats.counts[k].iter().sum();
            post.holding[k] = self.holding[k].update(exits, stats.holding[k])?;
            for j in 0..n {
                if j != k {
                    post.transitions[k][j] += stats.counts[k][j] as f64;
                }
            }
        }
        Ok(post)
    }

    /// Generator `r_kk' = nu_k p_kk'`, `r_kk = -nu_k`.
    pub fn estimate(&self, estimator: CtmcEstimator) -> Result<RateMatrix> {
        let n = self.holding.len();
        let mut rows = vec![vec![0.0; n]; n];
        for k in 0..n {
            let g = self.holding[k];
            let nu = match estimator {
                CtmcEstimator::Mode => {
                    if g.alpha <= 1.0 {
                        return Err(Error::Degenerate(format!(
                            "exit-rate mode undefined in state {k}: a + n = {} <= 1",
                            g.alpha
                        )));
                    }
                    (g.alpha - 1.0) / g.beta
                }
                CtmcEstimator::Mean => g.mean(),
            };
            if n == 1 {
                continue;
            }
            let others: Vec<f64> = (0..n).filter(|j| *j != k).map(|j| self.transitions[k][j]).collect();
            let p = normalize_exact(&others);
            let mut it = p.into_iter();
            let mut off = 0.0;
            for j in 0..n {
                if j != k {
                    rows[k][j] = nu * it.next().expect("one probability per successor");
                    off += rows[k][j];
                }
            }
            rows[k][k] = -off;
        }
        RateMatrix::new(rows)
    }
}

/// Posterior chain prior and the estimated generator.
pub fn update_ctmc(prior: &ChainPrior, stats: &ChainStats, estimator: CtmcEstimator) -> Result<(ChainPrior, RateMatrix)> {
    let post = prior.update(stats)?;
    let r = post.estimate(estimator)?;
    Ok((post, r))
}

/// Price increments: total displacement `x`, total time `t` and
/// `q = sum x_i^2 / t_i` over the observed increments.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DriftStats {
    pub displacement: f64,
    pub time: f64,
    pub weighted_square: f64,
}

impl DriftStats {
    pub fn increment(displacement: f64, time: f64) -> Result<Self> {
        if !(time > 0.0 && time.is_finite() && displacement.is_finite()) {
            return Err(Error::domain(format!("increment needs t > 0, got t = {time}")));
        }
        Ok(DriftStats {
            displacement,
            time,
            weighted_square: displacement * displacement / time,
        })
    }

    pub fn merge(&mut self, other: &DriftStats) {
        self.displacement += other.displacement;
        self.time += other.time;
        self.weighted_square += other.weighted_square;
    }
}

/// `(mu, sigma^2) ~ NIG(mu0, nu, alpha, beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NigPrior {
    pub mu0: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NigPrior {
    pub fn validate(&self) -> Result<()> {
        positive("nig nu", self.nu)?;
        positive("nig beta", self.beta)?;
        if !(self.alpha > 1.0) || !self.mu0.is_finite() {
            return Err(Error::invalid("nig prior", "alpha must exceed 1 and mu0 be finite"));
        }
        Ok(())
    }

    /// Posterior after independent increments. For a single increment
    /// `(x, t)` this is `NIG((x + mu0 nu)/(nu + t), nu + t, alpha + t/2,
    /// beta + t nu/(nu + t) (x/t - mu0)^2 / 2)`.
    pub fn update(&self, stats: &DriftStats) -> Self {
        let nu = self.nu + stats.time;
        let mu = (stats.displacement + self.mu0 * self.nu) / nu;
        let beta = if stats.time == 0.0 {
            self.beta
        } else {
            self.beta + 0.5 * (stats.weighted_square + self.mu0 * self.mu0 * self.nu - mu * mu * nu)
        };
        NigPrior {
            mu0: mu,
            nu,
            alpha: self.alpha + 0.5 * stats.time,
            beta,
        }
    }

    /// Posterior means `(E[mu], E[sigma^2])`.
    pub fn estimate(&self) -> Result<(f64, f64)> {
        if self.alpha <= 1.0 {
            return Err(Error::Degenerate(format!("sigma^2 mean undefined for alpha = {}", self.alpha)));
        }
        Ok((self.mu0, self.beta / (self.alpha - 1.0)))
    }
}

/// Returns the posterior, `mu_hat` and `sigma2_hat`.
pub fn update_drift_vol(prior: &NigPrior, displacement: f64, t: f64) -> Result<(NigPrior, f64, f64)> {
    let post = prior.update(&DriftStats::increment(displacement, t)?);
    let (mu, s2) = post.estimate()?;
    Ok((post, mu, s2))
}

/// `mu ~ N(mu0, nu^2)` with known volatility.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormalDriftPrior {
    pub mu0: f64,
    /// Prior standard deviation of the drift.
    pub nu: f64,
    pub sigma: f64,
}

impl NormalDriftPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu >= 0.0 && self.sigma >= 0.0 && self.mu0.is_finite()) || self.nu + self.sigma == 0.0 {
            return Err(Error::invalid("normal drift prior", "nu and sigma must be >= 0 and not both zero"));
        }
        Ok(())
    }

    /// Posterior mean `(mu0 sigma^2 + nu^2 x) / (sigma^2 + nu^2 t)` and
    /// standard deviation `sigma nu / sqrt(sigma^2 + nu^2 t)`.
    pub fn update(&self, displacement: f64, time: f64) -> Self {
        let s2 = self.sigma * self.sigma;
        let v2 = self.nu * self.nu;
        let den = s2 + v2 * time;
        NormalDriftPrior {
            mu0: (self.mu0 * s2 + v2 * displacement) / den,
            nu: self.sigma * self.nu / math::sqrt(den),
            sigma: self.sigma,
        }
    }
}

pub fn update_drift_known_vol(prior: &NormalDriftPrior, displacement: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain("t must be non-negative"));
    }
    if t == 0.0 {
        return Ok(prior.mu0);
    }
    Ok(prior.update(displacement, t).mu0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum DriftPrior {
    Nig(NigPrior),
    Normal(NormalDriftPrior),
}

impl DriftPrior {
    pub fn update(&self, stats: &DriftStats) -> Self {
        match self {
            DriftPrior::Nig(p) => DriftPrior::Nig(p.update(stats)),
            DriftPrior::Normal(p) => DriftPrior::Normal(if stats.time == 0.0 {
                *p
            } else {
                p.update(stats.displacement, stats.time)
            }),
        }
    }

    /// `(mu_hat, sigma_hat)`.
    pub fn estimate(&self) -> Result<(f64, f64)> {
        match self {
            DriftPrior::Nig(p) => p.estimate().map(|(m, s2)| (m, math::sqrt(s2))),
            DriftPrior::Normal(p) => Ok((p.mu0, p.sigma)),
        }
    }
}

/// How executed-proportion laws share information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ProportionPooling {
    /// One law per venue, shared by every regime and limit.
    Venue,
    /// One law per (venue, regime, limit).
    #[default]
    Full,
}

/// Sufficient statistics of one or more slices.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SliceStats {
    /// Fill counts over (venue, regime, limit).
    pub fills: Vec<u64>,
    /// Exposure over (venue, regime, limit).
    pub exposure: Vec<f64>,
    /// Proportion counts over (venue, regime, limit, proportion).
    pub proportions: Vec<u64>,
    /// One entry per chain of the generator.
    pub chains: Vec<ChainStats>,
    pub drift: DriftStats,
}

fn chain_size(generator: &Generator, process: Process) -> usize {
    generator.matrix(process).map_or(0, |m| m.size())
}

impl SliceStats {
    pub fn empty(spec: &MarketSpec) -> Self {
        let cells = spec.n_venues() * spec.n_regimes() * 3;
        let g = spec.generator();
        SliceStats {
            fills: vec![0; cells],
            exposure: vec![0.0; cells],
            proportions: vec![0; cells * spec.n_proportions()],
            chains: g.processes(spec.n_venues()).into_iter().map(|p| ChainStats::zeros(chain_size(g, p))).collect(),
            drift: DriftStats::default(),
        }
    }

    pub fn from_log(spec: &MarketSpec, log: &EventLog) -> Result<Self> {
        let mut stats = SliceStats::empty(spec);
        if log.n_venues != spec.n_venues() || log.n_regimes != spec.n_regimes() || log.exposures.len() != stats.exposure.len() {
            return Err(Error::domain("event log does not match the market topology"));
        }
        let r = spec.n_proportions();
        for f in &log.fills {
            let cell = (f.venue * spec.n_regimes() + f.regime) * 3 + f.limit.index();
            stats.fills[cell] += 1;
            stats.proportions[cell * r + f.proportion_index] += 1;
        }
        stats.exposure.copy_from_slice(&log.exposures);

        let decoded = spec.decode_state(log.initial_state)?;
        for (c, process) in spec.generator().processes(spec.n_venues()).into_iter().enumerate() {
            let mut cur = match process {
                Process::Spread(n) => decoded.spreads[n],
                Process::Imbalance(n) => decoded.imbalances[n],
                Process::Joint => log.initial_state,
            };
            let mut since = log.start;
            let chain = &mut stats.chains[c];
            for tr in log.transitions.iter().filter(|t| t.process == process) {
                if tr.from != cur {
                    return Err(Error::domain(format!("inconsistent transition at t = {}", tr.time)));
                }
                chain.holding[cur] += tr.time - since;
                chain.counts[cur][tr.to] += 1;
                cur = tr.to;
                since = tr.time;
            }
            chain.holding[cur] += log.end - since;
        }

        let (t0, s0) = log.prices.first().copied().unwrap_or((log.start, 0.0));
        let (t1, s1) = log.prices.last().copied().unwrap_or((log.end, 0.0));
        if t1 > t0 {
            stats.drift = DriftStats::increment(s1 - s0, t1 - t0)?;
        }
        Ok(stats)
    }

    pub fn merge(&mut self, other: &SliceStats) {
        for (a, b) in self.fills.iter_mut().zip(&other.fills) {
            *a += b;
        }
        for (a, b) in self.exposure.iter_mut().zip(&other.exposure) {
            *a += b;
        }
        for (a, b) in self.proportions.iter_mut().zip(&other.proportions) {
            *a += b;
        }
        for (a, b) in self.chains.iter_mut().zip(&other.chains) {
            a.merge(b);
        }
        self.drift.merge(&other.drift);
    }

    pub fn total_fills(&self) -> u64 {
        self.fills.iter().sum()
    }
}

/// How much weight a prior centred on a spec carries.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PriorWeights {
    /// Pseudo-exposure (minutes at unit decay) behind each fill-rate prior.
    pub intensity: f64,
    /// Pseudo-count behind each proportion law.
    pub proportions: f64,
    /// Pseudo-time (minutes) behind each exit-rate prior.
    pub holding: f64,
    /// Pseudo-count of jumps behind each row of jump probabilities.
    pub transitions: f64,
}

impl Default for PriorWeights {
    fn default() -> Self {
        PriorWeights {
            intensity: 1.0,
            proportions: 10.0,
            holding: 1.0,
            transitions: 10.0,
        }
    }
}

/// Priors of every market parameter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PriorSet {
    /// Over (venue, regime, limit).
    pub intensity: Vec<GammaPrior>,
    pub pooling: ProportionPooling,
    /// One per venue, or over (venue, regime, limit), following `pooling`.
    pub proportions: Vec<DirichletPrior>,
    /// One per chain of the generator, in [`Generator::processes`] order.
    pub chains: Vec<ChainPrior>,
    pub drift: DriftPrior,
    pub estimator: CtmcEstimator,
}

impl PriorSet {
    /// Priors whose point estimates reproduce `spec`. With venue pooling the
    /// proportion law of each venue is taken from its first regime and limit.
    pub fn centered_on(spec: &MarketSpec, weights: PriorWeights, drift: DriftPrior, pooling: ProportionPooling, estimator: CtmcEstimator) -> Result<Self> {
        let n = spec.n_venues();
        let m = spec.n_regimes();
        let mut intensity = Vec::with_capacity(n * m * 3);
        for v in 0..n {
            for reg in 0..m {
                for p in Limit::ALL {
                    intensity.push(GammaPrior::centered(spec.base_rate(v, reg, p), weights.intensity)?);
                }
            }
        }
        let proportions = match pooling {
            ProportionPooling::Venue => (0..n)
                .map(|v| DirichletPrior::centered(spec.proportion_probs(v, 0, Limit::ALL[0]), weights.proportions))
                .collect::<Result<Vec<_>>>()?,
            ProportionPooling::Full => {
                let mut out = Vec::with_capacity(n * m * 3);
                for v in 0..n {
                    for reg in 0..m {
                        for p in Limit::ALL {
                            out.push(DirichletPrior::centered(spec.proportion_probs(v, reg, p), weights.proportions)?);
                        }
                    }
                }
                out
            }
        };
        let g = spec.generator();
        let chains = g
            .processes(n)
            .into_iter()
            .map(|p| ChainPrior::centered(g.matrix(p).expect("process of generator"), weights.holding, weights.transitions, estimator))
            .collect::<Result<Vec<_>>>()?;
        let set = PriorSet {
            intensity,
            pooling,
            proportions,
            chains,
            drift,
            estimator,
        };
        set.validate(spec)?;
        Ok(set)
    }

    pub fn validate(&self, spec: &MarketSpec) -> Result<()> {
        let cells = spec.n_venues() * spec.n_regimes() * 3;
        if self.intensity.len() != cells {
            return Err(Error::invalid("priors", format!("expected {cells} intensity priors, got {}", self.intensity.len())));
        }
        for g in &self.intensity {
            GammaPrior::new(g.alpha, g.beta)?;
        }
        let expected = match self.pooling {
            ProportionPooling::Venue => spec.n_venues(),
            ProportionPooling::Full => cells,
        };
        if self.proportions.len() != expected {
            return Err(Error::invalid("priors", format!("expected {expected} proportion priors, got {}", self.proportions.len())));
        }
        for d in &self.proportions {
            if d.alpha.len() != spec.n_proportions() {
                return Err(Error::invalid("priors", "proportion prior length differs from omega"));
            }
            DirichletPrior::new(d.alpha.clone())?;
        }
        let g = spec.generator();
        let processes = g.processes(spec.n_venues());
        if self.chains.len() != processes.len() {
            return Err(Error::invalid("priors", "one chain prior per generator process required"));
        }
        for (c, p) in self.chains.iter().zip(processes) {
            c.validate()?;
            if c.holding.len() != chain_size(g, p) {
                return Err(Error::invalid("priors", format!("chain prior for {p:?} has the wrong size")));
            }
        }
        match self.drift {
            DriftPrior::Nig(p) => p.validate(),
            DriftPrior::Normal(p) => p.validate(),
        }
    }

    /// Posterior given the statistics of everything observed so far.
    pub fn update(&self, stats: &SliceStats) -> Result<PriorSet> {
        let r = self.proportions.first().map_or(0, |d| d.alpha.len());
        let intensity = self
            .intensity
            .iter()
            .enumerate()
            .map(|(i, g)| g.update(stats.fills[i], stats.exposure[i]))
            .collect::<Result<Vec<_>>>()?;
        let proportions = match self.pooling {
            ProportionPooling::Full => self
                .proportions
                .iter()
                .enumerate()
                .map(|(i, d)| d.update(&stats.proportions[i * r..(i + 1) * r]))
                .collect::<Result<Vec<_>>>()?,
            ProportionPooling::Venue => {
                let per_venue = stats.proportions.len() / (r * self.proportions.len().max(1));
                self.proportions
                    .iter()
                    .enumerate()
                    .map(|(v, d)| {
                        let mut counts = vec![0u64; r];
                        for cell in v * per_venue..(v + 1) * per_venue {
                            for (k, c) in counts.iter_mut().enumerate() {
                                *c += stats.proportions[cell * r + k];
                            }
                        }
                        d.update(&counts)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let chains = self
            .chains
            .iter()
            .zip(&stats.chains)
            .map(|(c, s)| c.update(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(PriorSet {
            intensity,
            pooling: self.pooling,
            proportions,
            chains,
            drift: self.drift.update(&stats.drift),
            estimator: self.estimator,
        })
    }

    /// Market spec built from the point estimates, keeping the venues,
    /// zones, proportions grid, decay and initial price of `template`.
    pub fn believed_spec(&self, template: &MarketSpec) -> Result<MarketSpec> {
        self.validate(template)?;
        let n = template.n_venues();
        let m = template.n_regimes();
        let intensities = IntensityTable {
            kappa: template.intensities().kappa,
            rates: self.intensity.iter().map(GammaPrior::mean).collect(),
        };
        let omega = template.proportions().omega.clone();
        let probs = match self.pooling {
            ProportionPooling::Full => self.proportions.iter().flat_map(DirichletPrior::mean).collect(),
            ProportionPooling::Venue => {
                let per_venue: Vec<Vec<f64>> = self.proportions.iter().map(DirichletPrior::mean).collect();
                ProportionTable::per_venue(omega.clone(), &per_venue, m).probs
            }
        };
        let estimated = self
            .chains
            .iter()
            .map(|c| c.estimate(self.estimator))
            .collect::<Result<Vec<_>>>()?;
        let generator = match template.generator() {
            Generator::Coupled(_) => Generator::Coupled(estimated.into_iter().next().expect("one joint chain")),
            Generator::Factored { .. } => {
                let mut it = estimated.into_iter();
                let spread: Vec<RateMatrix> = it.by_ref().take(n).collect();
                let imbalance: Vec<RateMatrix> = it.collect();
                Generator::Factored { spread, imbalance }
            }
        };
        let (mu, sigma) = self.drift.estimate()?;
        MarketSpec::new(
            template.venues().to_vec(),
            template.zones().clone(),
            generator,
            intensities,
            ProportionTable { omega, probs },
            PriceModel {
                mu,
                sigma,
                s0: template.price().s0,
            },
        )
    }
}

/// Priors together with everything observed since.
#[derive(Debug, Clone, PartialEq)]
pub struct Beliefs {
    pub prior: PriorSet,
    pub observed: SliceStats,
}

impl Beliefs {
    pub fn new(prior: PriorSet, spec: &MarketSpec) -> Result<Self> {
        prior.validate(spec)?;
        Ok(Beliefs {
            prior,
            observed: SliceStats::empty(spec),
        })
    }

    pub fn observe(&mut self, stats: &SliceStats) {
        self.observed.merge(stats);
    }

    pub fn posterior(&self) -> Result<PriorSet> {
        self.prior.update(&self.observed)
    }
}
