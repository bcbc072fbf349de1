//! Static description of a multi-venue market.
//!
//! Each venue carries a spread chain (multiples of its tick) and an
//! imbalance chain. The joint market state is the tuple of every venue's
//! spread and imbalance index, encoded row-major as
//! `(spread_0, .., spread_{N-1}, imbalance_0, .., imbalance_{N-1})`.
//! Regimes group states into zones; intensity and proportion tables are
//! indexed by the joint regime, encoded the same way over zone indices.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

const ROW_SUM_TOL: f64 = 1e-9;
const PROB_SUM_TOL: f64 = 1e-12;

/// Placement of a limit order relative to the current best price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(into = "i8", try_from = "i8")
)]
pub enum Limit {
    /// Improve the best price by one tick (`p = -1`).
    NewBest,
    /// Join the best limit (`p = 0`).
    Best,
    /// Sit one tick behind the best limit (`p = +1`).
    Second,
}

impl Limit {
    pub const ALL: [Limit; 3] = [Limit::NewBest, Limit::Best, Limit::Second];

    pub fn offset(self) -> i8 {
        match self {
            Limit::NewBest => -1,
            Limit::Best => 0,
            Limit::Second => 1,
        }
    }

    /// Position in [`Limit::ALL`].
    pub fn index(self) -> usize {
        (self.offset() + 1) as usize
    }

    pub fn from_offset(p: i8) -> Option<Limit> {
        match p {
            -1 => Some(Limit::NewBest),
            0 => Some(Limit::Best),
            1 => Some(Limit::Second),
            _ => None,
        }
    }
}

impl From<Limit> for i8 {
    fn from(l: Limit) -> i8 {
        l.offset()
    }
}

impl TryFrom<i8> for Limit {
    type Error = Error;
    fn try_from(p: i8) -> Result<Limit> {
        Limit::from_offset(p).ok_or_else(|| Error::domain(format!("limit {p} not in {{-1, 0, 1}}")))
    }
}

const ONE_TICK_LIMITS: [Limit; 2] = [Limit::Best, Limit::Second];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VenueSpec {
    pub tick_size: f64,
    /// Spread levels in ticks, strictly increasing.
    pub spread_ticks: Vec<u32>,
    /// Imbalance levels in [-1, 1], strictly increasing.
    pub imbalance_values: Vec<f64>,
}

impl VenueSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tick_size > 0.0 && self.tick_size.is_finite()) {
            return Err(Error::invalid("venue", format!("tick size {} must be positive", self.tick_size)));
        }
        if self.spread_ticks.is_empty() || self.imbalance_values.is_empty() {
            return Err(Error::invalid("venue", "spread and imbalance state spaces must be non-empty"));
        }
        if self.spread_ticks[0] == 0 || self.spread_ticks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("venue", "spread ticks must be positive and strictly increasing"));
        }
        if self.imbalance_values.iter().any(|x| !(-1.0..=1.0).contains(x))
            || self.imbalance_values.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid("venue", "imbalance values must be strictly increasing within [-1, 1]"));
        }
        Ok(())
    }

    /// Spread in price units at level `j`.
    pub fn spread(&self, j: usize) -> f64 {
        f64::from(self.spread_ticks[j]) * self.tick_size
    }

    pub fn is_one_tick(&self, j: usize) -> bool {
        self.spread_ticks[j] == 1
    }

    /// Limits available when the spread sits at level `j`.
    pub fn admissible_limits(&self, j: usize) -> &'static [Limit] {
        if self.is_one_tick(j) {
            &ONE_TICK_LIMITS
        } else {
            &Limit::ALL
        }
    }
}

/// Assignment of every (venue, state) to a regime.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ZoneMap {
    /// `spread[n][j]` is the spread regime of level `j` on venue `n`.
    pub spread: Vec<Vec<usize>>,
    /// `imbalance[n][k]` is the imbalance regime of level `k` on venue `n`.
    pub imbalance: Vec<Vec<usize>>,
}

impl ZoneMap {
    /// Every state is its own regime.
    pub fn identity(venues: &[VenueSpec]) -> Self {
        ZoneMap {
            spread: venues.iter().map(|v| (0..v.spread_ticks.len()).collect()).collect(),
            imbalance: venues.iter().map(|v| (0..v.imbalance_values.len()).collect()).collect(),
        }
    }

    /// All states in a single regime.
    pub fn collapsed(venues: &[VenueSpec]) -> Self {
        ZoneMap {
            spread: venues.iter().map(|v| vec![0; v.spread_ticks.len()]).collect(),
            imbalance: venues.iter().map(|v| vec![0; v.imbalance_values.len()]).collect(),
        }
    }

    fn validate(&self, venues: &[VenueSpec]) -> Result<()> {
        if self.spread.len() != venues.len() || self.imbalance.len() != venues.len() {
            return Err(Error::invalid("zones", "one spread and one imbalance map per venue required"));
        }
        for (n, v) in venues.iter().enumerate() {
            if self.spread[n].len() != v.spread_ticks.len() {
                return Err(Error::invalid("zones", format!("venue {n}: spread map length mismatch")));
            }
            if self.imbalance[n].len() != v.imbalance_values.len() {
                return Err(Error::invalid("zones", format!("venue {n}: imbalance map length mismatch")));
            }
            for map in [&self.spread[n], &self.imbalance[n]] {
                let count = map.iter().max().map_or(0, |m| m + 1);
                if (0..count).any(|z| !map.contains(&z)) {
                    return Err(Error::invalid(
                        "zones",
                        format!("venue {n}: regime indices must form a contiguous range from 0"),
                    ));
                }
            }
        }
        Ok(())
    }

    fn count(map: &[usize]) -> usize {
        map.iter().max().map_or(0, |m| m + 1)
    }
}

/// Square transition-rate matrix of a continuous-time Markov chain.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RateMatrix {
    size: usize,
    rates: Vec<f64>,
}

impl RateMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if size == 0 || rows.iter().any(|r| r.len() != size) {
            return Err(Error::invalid("generator", "rate matrix must be square and non-empty"));
        }
        let m = RateMatrix {
            size,
            rates: rows.into_iter().flatten().collect(),
        };
        m.validate()?;
        Ok(m)
    }

    /// The zero generator: a frozen chain.
    pub fn zeros(size: usize) -> Self {
        RateMatrix {
            size,
            rates: vec![0.0; size * size],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.len() != self.size * self.size {
            return Err(Error::invalid("generator", "rate matrix storage does not match its size"));
        }
        for k in 0..self.size {
            let row = self.row(k);
            if row.iter().any(|r| !r.is_finite()) {
                return Err(Error::invalid("generator", format!("row {k} has a non-finite rate")));
            }
            if row.iter().enumerate().any(|(j, r)| j != k && *r < 0.0) {
                return Err(Error::invalid("generator", format!("row {k} has a negative off-diagonal rate")));
            }
            if row[k] > 0.0 {
                return Err(Error::invalid("generator", format!("row {k} has a positive diagonal")));
            }
            let sum: f64 = row.iter().sum();
            let scale = row.iter().map(|r| r.abs()).fold(1.0, f64::max);
            if sum.abs() > ROW_SUM_TOL * scale {
                return Err(Error::invalid("generator", format!("row {k} sums to {sum}, not 0")));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.rates[from * self.size + to]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rates[k * self.size..(k + 1) * self.size]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.size).map(|k| self.row(k).to_vec()).collect()
    }

    /// Total rate of leaving state `k` (the holding-time intensity).
    pub fn exit_rate(&self, k: usize) -> f64 {
        self.row(k)
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, r)| *r)
            .sum()
    }

    /// Jump-chain probabilities out of `k`; zero on the diagonal. All zero
    /// for an absorbing state.
    pub fn jump_probabilities(&self, k: usize) -> Vec<f64> {
        let nu = self.exit_rate(k);
        self.row(k)
            .iter()
            .enumerate()
            .map(|(j, r)| if j == k || nu <= 0.0 { 0.0 } else { r / nu })
            .collect()
    }

    /// Rebuilds a generator from holding intensities and jump probabilities.
    pub fn from_decomposition(exit_rates: &[f64], jumps: &[Vec<f64>]) -> Result<Self> {
        let size = exit_rates.len();
        let mut rows = vec![vec![0.0; size]; size];
        for k in 0..size {
            for j in 0..size {
                if j != k {
                    rows[k][j] = exit_rates[k] * jumps[k][j];
                }
            }
            rows[k][k] = -exit_rates[k];
        }
        let m = RateMatrix {
            size,
            rates: rows.into_iter().flatten().collect(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        RateMatrix {
            size: self.size,
            rates: self.rates.iter().map(|r| r * factor).collect(),
        }
    }
}

/// Dynamics of the joint spread/imbalance state.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Generator {
    /// Independent chains: one spread and one imbalance chain per venue.
    Factored {
        spread: Vec<RateMatrix>,
        imbalance: Vec<RateMatrix>,
    },
    /// One chain over the whole joint state space.
    Coupled(RateMatrix),
}

/// A single chain inside a [`Generator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Process {
    Spread(usize),
    Imbalance(usize),
    Joint,
}

impl Generator {
    pub fn processes(&self, n_venues: usize) -> Vec<Process> {
        match self {
            Generator::Factored { .. } => (0..n_venues)
                .map(Process::Spread)
                .chain((0..n_venues).map(Process::Imbalance))
                .collect(),
            Generator::Coupled(_) => vec![Process::Joint],
        }
    }

    pub fn matrix(&self, process: Process) -> Option<&RateMatrix> {
        match (self, process) {
            (Generator::Factored { spread, .. }, Process::Spread(n)) => spread.get(n),
            (Generator::Factored { imbalance, .. }, Process::Imbalance(n)) => imbalance.get(n),
            (Generator::Coupled(m), Process::Joint) => Some(m),
            _ => None,
        }
    }

    pub fn is_factored(&self) -> bool {
        matches!(self, Generator::Factored { .. })
    }
}

/// Decoded joint market state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarketState {
    pub spreads: Vec<usize>,
    pub imbalances: Vec<usize>,
}

/// Decoded joint regime.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Regime {
    pub spread: Vec<usize>,
    pub imbalance: Vec<usize>,
}

/// Base fill rates `lambda[n][m][p]` and the volume decay of `exp(-kappa * sum(l))`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IntensityTable {
    pub kappa: f64,
    /// Dense over (venue, joint regime, limit index), limit index per [`Limit::index`].
    pub rates: Vec<f64>,
}

/// Default multiplicative factors for `p = -1, 0, +1` applied to the `p = 0` table.
pub const DEFAULT_LIMIT_FACTORS: [f64; 3] = [1.6, 1.0, 0.5];

impl IntensityTable {
    /// Expands per-regime `p = 0` rates (one vector per venue) by limit factors.
    pub fn from_base(base: &[Vec<f64>], limit_factors: [f64; 3], kappa: f64) -> Self {
        let mut rates = Vec::new();
        for venue in base {
            for rate in venue {
                rates.extend(limit_factors.iter().map(|f| rate * f));
            }
        }
        IntensityTable { kappa, rates }
    }

    pub fn scaled_venue(&self, n_regimes: usize, venue: usize, factor: f64) -> Self {
        let mut t = self.clone();
        let stride = n_regimes * 3;
        for r in &mut t.rates[venue * stride..(venue + 1) * stride] {
            *r *= factor;
        }
        t
    }
}

/// Categorical law of the executed proportion per (venue, regime, limit).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProportionTable {
    /// Executed proportions, strictly increasing within (0, 1].
    pub omega: Vec<f64>,
    /// Dense over (venue, joint regime, limit index, proportion index).
    pub probs: Vec<f64>,
}

impl ProportionTable {
    /// One probability vector per venue, shared by all regimes and limits.
    pub fn per_venue(omega: Vec<f64>, per_venue: &[Vec<f64>], n_regimes: usize) -> Self {
        let mut probs = Vec::new();
        for v in per_venue {
            for _ in 0..n_regimes * 3 {
                probs.extend_from_slice(v);
            }
        }
        ProportionTable { omega, probs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PriceModel {
    /// Drift per minute.
    pub mu: f64,
    /// Volatility per square-root minute.
    pub sigma: f64,
    pub s0: f64,
}

/// Full parameterisation of an N-venue market. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "MarketSpecData", into = "MarketSpecData"))]
pub struct MarketSpec {
    venues: Vec<VenueSpec>,
    zones: ZoneMap,
    generator: Generator,
    intensities: IntensityTable,
    proportions: ProportionTable,
    price: PriceModel,
    state_radix: Vec<usize>,
    regime_radix: Vec<usize>,
}

/// Serialised form of a [`MarketSpec`], validated on the way in.
#[cfg(feature = "serde")]
#[derive(serde::Serialize, serde::Deserialize)]
pub struct MarketSpecData {
    pub venues: Vec<VenueSpec>,
    pub zones: ZoneMap,
    pub generator: Generator,
    pub intensities: IntensityTable,
    pub proportions: ProportionTable,
    pub price: PriceModel,
}

#[cfg(feature = "serde")]
impl From<MarketSpec> for MarketSpecData {
    fn from(s: MarketSpec) -> Self {
        MarketSpecData {
            venues: s.venues,
            zones: s.zones,
            generator: s.generator,
            intensities: s.intensities,
            proportions: s.proportions,
            price: s.price,
        }
    }
}

#[cfg(feature = "serde")]
impl TryFrom<MarketSpecData> for MarketSpec {
    type Error = Error;

    fn try_from(d: MarketSpecData) -> Result<Self> {
        MarketSpec::new(d.venues, d.zones, d.generator, d.intensities, d.proportions, d.price)
    }
}

fn encode(radix: &[usize], digits: impl Iterator<Item = usize>) -> usize {
    radix.iter().zip(digits).fold(0, |acc, (r, d)| acc * r + d)
}

fn decode(radix: &[usize], mut index: usize) -> Vec<usize> {
    let mut digits = vec![0; radix.len()];
    for (d, r) in digits.iter_mut().zip(radix).rev() {
        *d = index % r;
        index /= r;
    }
    digits
}

impl MarketSpec {
    pub fn new(
        venues: Vec<VenueSpec>,
        zones: ZoneMap,
        generator: Generator,
        intensities: IntensityTable,
        mut proportions: ProportionTable,
        price: PriceModel,
    ) -> Result<Self> {
        if venues.is_empty() {
            return Err(Error::invalid("market", "at least one venue is required"));
        }
        for v in &venues {
            v.validate()?;
        }
        zones.validate(&venues)?;
        let n = venues.len();
        let state_radix: Vec<usize> = venues
            .iter()
            .map(|v| v.spread_ticks.len())
            .chain(venues.iter().map(|v| v.imbalance_values.len()))
            .collect();
        let regime_radix: Vec<usize> = zones
            .spread
            .iter()
            .map(|m| ZoneMap::count(m))
            .chain(zones.imbalance.iter().map(|m| ZoneMap::count(m)))
            .collect();
        let n_states: usize = state_radix.iter().product();
        let n_regimes: usize = regime_radix.iter().product();

        match &generator {
            Generator::Factored { spread, imbalance } => {
                if spread.len() != n || imbalance.len() != n {
                    return Err(Error::invalid("generator", "factored mode needs one spread and one imbalance matrix per venue"));
                }
                for (i, v) in venues.iter().enumerate() {
                    if spread[i].size() != v.spread_ticks.len() || imbalance[i].size() != v.imbalance_values.len() {
                        return Err(Error::invalid("generator", format!("venue {i}: matrix size does not match its state space")));
                    }
                    spread[i].validate()?;
                    imbalance[i].validate()?;
                }
            }
            Generator::Coupled(m) => {
                if m.size() != n_states {
                    return Err(Error::invalid("generator", format!("coupled matrix must be {n_states}x{n_states}")));
                }
                m.validate()?;
            }
        }

        if !(intensities.kappa >= 0.0 && intensities.kappa.is_finite()) {
            return Err(Error::invalid("intensities", "kappa must be finite and non-negative"));
        }
        if intensities.rates.len() != n * n_regimes * 3 {
            return Err(Error::invalid(
                "intensities",
                format!("expected {} rates (venues x regimes x limits), got {}", n * n_regimes * 3, intensities.rates.len()),
            ));
        }
        if intensities.rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::invalid("intensities", "base rates must be finite and non-negative"));
        }

        let r = proportions.omega.len();
        if r == 0
            || proportions.omega.iter().any(|w| !(*w > 0.0 && *w <= 1.0))
            || proportions.omega.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::invalid("proportions", "omega must be strictly increasing within (0, 1]"));
        }
        if proportions.probs.len() != n * n_regimes * 3 * r {
            return Err(Error::invalid(
                "proportions",
                format!("expected {} probabilities, got {}", n * n_regimes * 3 * r, proportions.probs.len()),
            ));
        }
        for chunk in proportions.probs.chunks_exact_mut(r) {
            if chunk.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid("proportions", "probabilities must lie in [0, 1]"));
            }
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::invalid("proportions", format!("probability vector sums to {sum}")));
            }
            for p in chunk.iter_mut() {
                *p /= sum;
            }
        }

        if !(price.sigma >= 0.0) || !price.mu.is_finite() || !price.s0.is_finite() {
            return Err(Error::invalid("price", "sigma must be non-negative and parameters finite"));
        }

        Ok(MarketSpec {
            venues,
            zones,
            generator,
            intensities,
            proportions,
            price,
            state_radix,
            regime_radix,
        })
    }

    pub fn venues(&self) -> &[VenueSpec] {
        &self.venues
    }
    pub fn zones(&self) -> &ZoneMap {
        &self.zones
    }
    pub fn generator(&self) -> &Generator {
        &self.generator
    }
    pub fn intensities(&self) -> &IntensityTable {
        &self.intensities
    }
    pub fn proportions(&self) -> &ProportionTable {
        &self.proportions
    }
    pub fn price(&self) -> &PriceModel {
        &self.price
    }

    pub fn with_generator(&self, generator: Generator) -> Result<Self> {
        let s = self.clone();
        Self::new(s.venues, s.zones, generator, s.intensities, s.proportions, s.price)
    }
    pub fn with_intensities(&self, intensities: IntensityTable) -> Result<Self> {
        let s = self.clone();
        Self::new(s.venues, s.zones, s.generator, intensities, s.proportions, s.price)
    }
    pub fn with_proportions(&self, proportions: ProportionTable) -> Result<Self> {
        let s = self.clone();
        Self::new(s.venues, s.zones, s.generator, s.intensities, proportions, s.price)
    }
    pub fn with_price(&self, price: PriceModel) -> Result<Self> {
        let s = self.clone();
        Self::new(s.venues, s.zones, s.generator, s.intensities, s.proportions, price)
    }

    pub fn n_venues(&self) -> usize {
        self.venues.len()
    }
    pub fn n_states(&self) -> usize {
        self.state_radix.iter().product()
    }
    pub fn n_regimes(&self) -> usize {
        self.regime_radix.iter().product()
    }
    pub fn n_proportions(&self) -> usize {
        self.proportions.omega.len()
    }

    /// True when venues share topology (state spaces, zones and generator mode).
    pub fn same_topology(&self, other: &MarketSpec) -> bool {
        self.state_radix == other.state_radix
            && self.regime_radix == other.regime_radix
            && self.zones == other.zones
            && self.n_proportions() == other.n_proportions()
            && self.generator.is_factored() == other.generator.is_factored()
    }

    /// Row-major index of the joint state.
    pub fn joint_state_index(&self, spreads: &[usize], imbalances: &[usize]) -> Result<usize> {
        let n = self.n_venues();
        if spreads.len() != n || imbalances.len() != n {
            return Err(Error::domain(format!("expected {n} spread and {n} imbalance indices")));
        }
        for (i, (&d, &r)) in spreads.iter().chain(imbalances).zip(&self.state_radix).enumerate() {
            if d >= r {
                return Err(Error::domain(format!("state coordinate {i} = {d} out of range 0..{r}")));
            }
        }
        Ok(encode(&self.state_radix, spreads.iter().chain(imbalances).copied()))
    }

    pub fn decode_state(&self, state: usize) -> Result<MarketState> {
        self.check_state(state)?;
        let n = self.n_venues();
        let digits = decode(&self.state_radix, state);
        Ok(MarketState {
            spreads: digits[..n].to_vec(),
            imbalances: digits[n..].to_vec(),
        })
    }

    pub(crate) fn check_state(&self, state: usize) -> Result<()> {
        if state >= self.n_states() {
            return Err(Error::domain(format!("state {state} out of range 0..{}", self.n_states())));
        }
        Ok(())
    }

    /// Joint regime index of a joint state.
    pub fn regime_of(&self, state: usize) -> Result<usize> {
        let s = self.decode_state(state)?;
        let zones = s
            .spreads
            .iter()
            .enumerate()
            .map(|(n, &j)| self.zones.spread[n][j])
            .chain(s.imbalances.iter().enumerate().map(|(n, &k)| self.zones.imbalance[n][k]));
        Ok(encode(&self.regime_radix, zones))
    }

    pub fn decode_regime(&self, regime: usize) -> Regime {
        let n = self.n_venues();
        let digits = decode(&self.regime_radix, regime);
        Regime {
            spread: digits[..n].to_vec(),
            imbalance: digits[n..].to_vec(),
        }
    }

    pub fn regime_index(&self, regime: &Regime) -> Result<usize> {
        let digits: Vec<usize> = regime.spread.iter().chain(&regime.imbalance).copied().collect();
        if digits.len() != self.regime_radix.len() || digits.iter().zip(&self.regime_radix).any(|(d, r)| d >= r) {
            return Err(Error::domain("regime out of range"));
        }
        Ok(encode(&self.regime_radix, digits.into_iter()))
    }

    /// Spread in price units of venue `n` in joint state `state`.
    pub fn spread_of(&self, state: &MarketState, venue: usize) -> f64 {
        self.venues[venue].spread(state.spreads[venue])
    }

    pub fn volume_decay(&self, total_volume: f64) -> f64 {
        math::exp(-self.intensities.kappa * total_volume)
    }

    pub fn base_rate(&self, venue: usize, regime: usize, limit: Limit) -> f64 {
        self.intensities.rates[(venue * self.n_regimes() + regime) * 3 + limit.index()]
    }

    pub fn proportion_probs(&self, venue: usize, regime: usize, limit: Limit) -> &[f64] {
        let r = self.n_proportions();
        let start = ((venue * self.n_regimes() + regime) * 3 + limit.index()) * r;
        &self.proportions.probs[start..start + r]
    }

    /// Whether `limit` may be used on `venue` in `state`.
    pub fn is_admissible(&self, state: &MarketState, venue: usize, limit: Limit) -> bool {
        !(limit == Limit::NewBest && self.venues[venue].is_one_tick(state.spreads[venue]))
    }

    /// Per-venue fill rates of orders posted with `limits` and `volumes`.
    /// A venue with zero volume has no order and rate zero.
    pub fn fill_intensity(&self, state: usize, limits: &[Limit], volumes: &[f64]) -> Result<Vec<f64>> {
        let n = self.n_venues();
        if limits.len() != n || volumes.len() != n {
            return Err(Error::domain(format!("expected {n} limits and {n} volumes")));
        }
        if volumes.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::domain("volumes must be finite and non-negative"));
        }
        let decoded = self.decode_state(state)?;
        let regime = self.regime_of(state)?;
        let decay = self.volume_decay(volumes.iter().sum());
        (0..n)
            .map(|v| {
                if !self.is_admissible(&decoded, v, limits[v]) {
                    return Err(Error::domain(format!("limit p = -1 is not admissible on venue {v} at a one-tick spread")));
                }
                Ok(if volumes[v] > 0.0 {
                    decay * self.base_rate(v, regime, limits[v])
                } else {
                    0.0
                })
            })
            .collect()
    }

    /// Neighbouring joint states reachable in one jump, with their rates.
    pub fn transitions_from(&self, state: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        match &self.generator {
            Generator::Coupled(m) => {
                for (j, r) in m.row(state).iter().enumerate() {
                    if j != state && *r > 0.0 {
                        out.push((j, *r));
                    }
                }
            }
            Generator::Factored { spread, imbalance } => {
                let n = self.n_venues();
                let digits = decode(&self.state_radix, state);
                for coord in 0..2 * n {
                    let matrix = if coord < n { &spread[coord] } else { &imbalance[coord - n] };
                    let cur = digits[coord];
                    for (j, r) in matrix.row(cur).iter().enumerate() {
                        if j != cur && *r > 0.0 {
                            let mut d = digits.clone();
                            d[coord] = j;
                            out.push((encode(&self.state_radix, d.into_iter()), *r));
                        }
                    }
                }
            }
        }
        out
    }

    /// State obtained by exchanging the coordinates of venues `a` and `b`.
    pub fn swap_venues(&self, state: usize, a: usize, b: usize) -> Result<usize> {
        let mut s = self.decode_state(state)?;
        s.spreads.swap(a, b);
        s.imbalances.swap(a, b);
        self.joint_state_index(&s.spreads, &s.imbalances)
    }
}
