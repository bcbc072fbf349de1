//! Backward finite-difference solution of the reduced control problem on one
//! slice.
//!
//! The value `v(t, q, state)` is the part of the trader's value left after
//! removing cash and the mark-to-market of inventory. Marching backward from
//! `v = 0` at the end of the slice, each explicit Euler step computes
//!
//! ```text
//! v(t_i) = v(t_{i+1}) - dt * ( g(q - q*) - mu q - sum_k' r(k, k') (v(k') - v(k))
//!                              - sup_{p, l} sum_n lambda_n E[eps l (psi/2 + p delta) + v(q - eps l) - v(q)] )
//! ```
//!
//! with every term on the right evaluated at `t_{i+1}`. The supremum is a
//! brute-force search over the joint limit choice and the joint volume grid.
//! When market orders are enabled, the obstacle
//! `v >= sup_m -m psi/2 + v(q - m)` is applied after each step.
//!
//! Ties in the supremum are broken by: smallest total volume, then the more
//! passive limit venue by venue, then the smaller volume venue by venue. A
//! venue without volume reports `p = 0`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::curve::Schedule;
use crate::error::{Error, Result};
use crate::market::{Limit, MarketSpec, MarketState};
use crate::math;

/// Discretisation of one slice.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SliceGrid {
    /// Inventory grid size; the grid spans `[0, q_max]`.
    pub n_q: usize,
    /// Volume grid size per venue; the grid spans `[0, l_max]`.
    pub n_l: usize,
    /// Time steps per slice.
    pub n_t: usize,
    pub dt: f64,
    pub slice_length: f64,
    pub q_max: f64,
    pub l_max: f64,
    /// When false the only admissible control is the null order.
    pub limit_orders: bool,
    /// Market-order sizes; empty disables the obstacle branch.
    pub market_orders: Vec<f64>,
    /// Absolute value above which the solve aborts.
    pub blowup_bound: f64,
    /// Explicit Euler sub-steps per decision interval; `None` picks the
    /// smallest count for which the scheme is monotone.
    pub substeps: Option<usize>,
}

impl SliceGrid {
    pub fn new(n_q: usize, n_l: usize, n_t: usize, slice_length: f64, q_max: f64) -> Result<Self> {
        let grid = SliceGrid {
            n_q,
            n_l,
            n_t,
            dt: slice_length / n_t.max(1) as f64,
            slice_length,
            q_max,
            l_max: q_max,
            limit_orders: true,
            market_orders: Vec::new(),
            blowup_bound: 1e12,
            substeps: None,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Enables market orders on `n_m` evenly spaced sizes over `[0, m_max]`.
    pub fn with_market_orders(mut self, m_max: f64, n_m: usize) -> Result<Self> {
        if n_m < 2 || !(m_max > 0.0) {
            return Err(Error::invalid("grid", "market-order grid needs m_max > 0 and at least 2 points"));
        }
        self.market_orders = (0..n_m).map(|i| m_max * i as f64 / (n_m - 1) as f64).collect();
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_q < 2 || self.n_l < 2 || self.n_t < 1 {
            return Err(Error::invalid("grid", "need n_q >= 2, n_l >= 2 and n_t >= 1"));
        }
        if self.n_l > u16::MAX as usize {
            return Err(Error::invalid("grid", "volume grid too large"));
        }
        if !(self.dt > 0.0 && self.slice_length > 0.0) {
            return Err(Error::invalid("grid", "dt and slice length must be positive"));
        }
        if (self.dt * self.n_t as f64 - self.slice_length).abs() > 1e-9 * self.slice_length {
            return Err(Error::invalid(
                "grid",
                format!("dt * n_t = {} differs from slice length {}", self.dt * self.n_t as f64, self.slice_length),
            ));
        }
        if !(self.q_max > 0.0 && self.l_max > 0.0 && self.q_max.is_finite() && self.l_max.is_finite()) {
            return Err(Error::invalid("grid", "q_max and l_max must be positive"));
        }
        if self.market_orders.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return Err(Error::invalid("grid", "market-order sizes must be non-negative"));
        }
        if self.substeps == Some(0) {
            return Err(Error::invalid("grid", "substeps must be at least 1"));
        }
        if !(self.blowup_bound > 0.0) {
            return Err(Error::invalid("grid", "blow-up bound must be positive"));
        }
        Ok(())
    }

    pub fn q_step(&self) -> f64 {
        self.q_max / (self.n_q - 1) as f64
    }

    pub fn l_step(&self) -> f64 {
        self.l_max / (self.n_l - 1) as f64
    }

    pub fn inventory(&self, i: usize) -> f64 {
        self.q_max * i as f64 / (self.n_q - 1) as f64
    }

    pub fn volume(&self, j: usize) -> f64 {
        self.l_max * j as f64 / (self.n_l - 1) as f64
    }

    /// Slice-local time of step `i`.
    pub fn time(&self, i: usize) -> f64 {
        self.dt * i as f64
    }

    /// Smallest sub-step count `k` with `dt / k * (exit rate + total fill
    /// rate) <= 1` in every state.
    pub fn stable_substeps(&self, spec: &MarketSpec) -> usize {
        let mut worst: f64 = 0.0;
        for s in 0..spec.n_states() {
            let exit: f64 = spec.transitions_from(s).iter().map(|(_, r)| r).sum();
            let decoded = spec.decode_state(s).expect("state in range");
            let regime = spec.regime_of(s).expect("state in range");
            let fills: f64 = if self.limit_orders {
                (0..spec.n_venues())
                    .map(|n| {
                        spec.venues()[n]
                            .admissible_limits(decoded.spreads[n])
                            .iter()
                            .map(|p| spec.base_rate(n, regime, *p))
                            .fold(0.0, f64::max)
                    })
                    .sum()
            } else {
                0.0
            };
            worst = worst.max(exit + fills);
        }
        (math::ceil(worst * self.dt - 1e-12).max(1.0)) as usize
    }

    pub fn resolved_substeps(&self, spec: &MarketSpec) -> usize {
        self.substeps.unwrap_or_else(|| self.stable_substeps(spec))
    }

    pub fn nearest_inventory_index(&self, q: f64) -> usize {
        let x = math::round(q / self.q_step());
        (x.max(0.0) as usize).min(self.n_q - 1)
    }

    /// True when some `omega * l` or market-order size falls between
    /// inventory grid points, in which case values are interpolated.
    pub fn requires_interpolation(&self, omega: &[f64]) -> bool {
        let q_step = self.q_step();
        let off = |amount: f64| matches!(Shift::new(amount, q_step), Shift::Between { .. });
        (0..self.n_l).any(|j| omega.iter().any(|w| off(w * self.volume(j)))) || self.market_orders.iter().any(|m| off(*m))
    }
}

/// Running penalty `g(x) = eta_g * x^2` on the distance to the target curve.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PenaltySpec {
    pub eta_g: f64,
}

impl PenaltySpec {
    pub fn eval(&self, x: f64) -> f64 {
        self.eta_g * x * x
    }
}

/// Downward inventory move expressed in grid steps.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Shift {
    Exact(usize),
    /// Between `lo` and `lo + 1` steps; `frac` is the weight of `lo + 1`.
    Between { lo: usize, frac: f64 },
}

const SHIFT_EXACT_TOL: f64 = 1e-9;

impl Shift {
    fn new(amount: f64, q_step: f64) -> Shift {
        let steps = amount / q_step;
        let nearest = math::round(steps);
        if (steps - nearest).abs() <= SHIFT_EXACT_TOL {
            Shift::Exact(nearest as usize)
        } else {
            let lo = math::floor(steps);
            Shift::Between {
                lo: lo as usize,
                frac: steps - lo,
            }
        }
    }

    /// `v(q_i - amount)` from the row of values over the inventory grid.
    #[inline]
    fn apply(self, row: &[f64], i: usize) -> f64 {
        match self {
            Shift::Exact(k) => row[i - k],
            Shift::Between { lo, frac } => (1.0 - frac) * row[i - lo] + frac * row[i - lo - 1],
        }
    }

    fn fits(self, i: usize) -> bool {
        match self {
            Shift::Exact(k) => k <= i,
            Shift::Between { lo, .. } => lo < i,
        }
    }
}

/// Values over (state, inventory) at one time.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValueSlice {
    n_q: usize,
    n_states: usize,
    values: Vec<f64>,
}

impl ValueSlice {
    pub fn zeros(n_q: usize, n_states: usize) -> Self {
        ValueSlice {
            n_q,
            n_states,
            values: vec![0.0; n_q * n_states],
        }
    }

    pub fn from_fn(n_q: usize, n_states: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_q * n_states);
        for s in 0..n_states {
            for q in 0..n_q {
                values.push(f(q, s));
            }
        }
        ValueSlice { n_q, n_states, values }
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn get(&self, q: usize, state: usize) -> f64 {
        self.values[state * self.n_q + q]
    }

    /// Values of one state over the inventory grid.
    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_q..(state + 1) * self.n_q]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Value function over the whole slice. `slice(t)` is the value at decision
/// time `t`, `slice(n_t)` the terminal zero. Intermediate Euler sub-steps are
/// kept and reachable through [`ValueFunction::fine_slice`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValueFunction {
    substeps: usize,
    slices: Vec<ValueSlice>,
}

impl ValueFunction {
    /// Number of decision times including the terminal one.
    pub fn n_times(&self) -> usize {
        (self.slices.len() - 1) / self.substeps + 1
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn slice(&self, t: usize) -> &ValueSlice {
        &self.slices[t * self.substeps]
    }

    /// Value after `j` sub-steps from the start of the slice.
    pub fn fine_slice(&self, j: usize) -> &ValueSlice {
        &self.slices[j]
    }

    pub fn get(&self, t: usize, q: usize, state: usize) -> f64 {
        self.slice(t).get(q, state)
    }
}

/// Optimal control at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    pub volume_index: Vec<usize>,
    pub volumes: Vec<f64>,
    pub limits: Vec<Limit>,
    /// Market-order size per venue (zero when unused).
    pub market: Vec<f64>,
    /// Value of the supremum attained by the limit-order control.
    pub gain: f64,
}

/// Controls over (state, inventory) at one decision time.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicySlice {
    n_q: usize,
    n_states: usize,
    n_venues: usize,
    volume_index: Vec<u16>,
    limits: Vec<Limit>,
    market: Vec<f64>,
    gain: Vec<f64>,
}

impl PolicySlice {
    fn new(n_q: usize, n_states: usize, n_venues: usize) -> Self {
        let points = n_q * n_states;
        PolicySlice {
            n_q,
            n_states,
            n_venues,
            volume_index: vec![0; points * n_venues],
            limits: vec![Limit::Best; points * n_venues],
            market: vec![0.0; points * n_venues],
            gain: vec![0.0; points],
        }
    }

    fn point(&self, q: usize, state: usize) -> usize {
        state * self.n_q + q
    }

    pub fn gain(&self, q: usize, state: usize) -> f64 {
        self.gain[self.point(q, state)]
    }

    pub fn volume_index(&self, q: usize, state: usize, venue: usize) -> usize {
        self.volume_index[self.point(q, state) * self.n_venues + venue] as usize
    }

    pub fn limit(&self, q: usize, state: usize, venue: usize) -> Limit {
        self.limits[self.point(q, state) * self.n_venues + venue]
    }

    pub fn market(&self, q: usize, state: usize, venue: usize) -> f64 {
        self.market[self.point(q, state) * self.n_venues + venue]
    }

    pub fn control(&self, q: usize, state: usize, grid: &SliceGrid) -> Control {
        let base = self.point(q, state) * self.n_venues;
        let idx: Vec<usize> = self.volume_index[base..base + self.n_venues].iter().map(|&j| j as usize).collect();
        Control {
            volumes: idx.iter().map(|&j| grid.volume(j)).collect(),
            volume_index: idx,
            limits: self.limits[base..base + self.n_venues].to_vec(),
            market: self.market[base..base + self.n_venues].to_vec(),
            gain: self.gain[self.point(q, state)],
        }
    }
}

/// Decision rule over the slice; `slice(i)` is used on `[t_i, t_{i+1})`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Policy {
    slices: Vec<PolicySlice>,
}

impl Policy {
    pub fn n_steps(&self) -> usize {
        self.slices.len()
    }
    pub fn slice(&self, i: usize) -> &PolicySlice {
        &self.slices[i]
    }
    pub fn n_venues(&self) -> usize {
        self.slices.first().map_or(0, |s| s.n_venues)
    }
}

/// Everything that defines one slice problem.
#[derive(Debug, Clone, Copy)]
pub struct SliceProblem<'a> {
    pub spec: &'a MarketSpec,
    pub grid: &'a SliceGrid,
    pub penalty: PenaltySpec,
    pub schedule: &'a Schedule,
    /// Global time at which the slice starts.
    pub start_time: f64,
}

/// `psi/2 + p * delta` for one venue.
fn price_gain(spec: &MarketSpec, state: &MarketState, venue: usize, limit: Limit) -> f64 {
    0.5 * spec.spread_of(state, venue) + f64::from(limit.offset()) * spec.venues()[venue].tick_size
}

/// `E[eps l (psi/2 + p delta) + v(q - eps l) - v(q)]` under the proportion law.
#[inline]
fn expected_fill_gain(row: &[f64], i: usize, probs: &[f64], omega: &[f64], shifts: &[Shift], volume: f64, gain: f64) -> f64 {
    let vq = row[i];
    let mut acc = 0.0;
    for r in 0..omega.len() {
        acc += probs[r] * (omega[r] * volume * gain + shifts[r].apply(row, i) - vq);
    }
    acc
}

/// Term under the supremum for one explicit control: per venue, fill rate
/// times the expected gain of a fill.
pub fn candidate_gain(
    v_next: &ValueSlice,
    q_index: usize,
    state: usize,
    limits: &[Limit],
    volumes: &[f64],
    spec: &MarketSpec,
    grid: &SliceGrid,
) -> Result<f64> {
    if q_index >= grid.n_q || v_next.n_q != grid.n_q || v_next.n_states != spec.n_states() {
        return Err(Error::domain("value slice or inventory index does not match the grid"));
    }
    let q = grid.inventory(q_index);
    let total: f64 = volumes.iter().sum();
    if total > q + SHIFT_EXACT_TOL * grid.q_step() {
        return Err(Error::domain(format!("total volume {total} exceeds inventory {q}")));
    }
    let rates = spec.fill_intensity(state, limits, volumes)?;
    let decoded = spec.decode_state(state)?;
    let regime = spec.regime_of(state)?;
    let omega = &spec.proportions().omega;
    let row = v_next.row(state);
    let q_step = grid.q_step();
    let mut acc = 0.0;
    for n in 0..spec.n_venues() {
        if volumes[n] == 0.0 {
            continue;
        }
        let shifts: Vec<Shift> = omega.iter().map(|w| Shift::new(w * volumes[n], q_step)).collect();
        let probs = spec.proportion_probs(n, regime, limits[n]);
        let e = expected_fill_gain(row, q_index, probs, omega, &shifts, volumes[n], price_gain(spec, &decoded, n, limits[n]));
        acc += rates[n] * e;
    }
    Ok(acc)
}

struct VenueInfo {
    limits: &'static [Limit],
    base: [f64; 3],
    price_gain: [f64; 3],
    probs: [Vec<f64>; 3],
    half_spread: f64,
}

struct StateInfo {
    venues: Vec<VenueInfo>,
    transitions: Vec<(usize, f64)>,
}

/// Joint volume choice with its decay factor.
struct Combo {
    start: usize,
    total: f64,
    decay: f64,
    index_sum: usize,
}

/// Precomputed solver for one [`SliceProblem`].
pub struct Solver<'a> {
    problem: SliceProblem<'a>,
    states: Vec<StateInfo>,
    combo_index: Vec<u16>,
    combos: Vec<Combo>,
    /// `fill_shifts[j * R + r]` is the move for a fill of `omega_r * l_j`.
    fill_shifts: Vec<Shift>,
    market_shifts: Vec<Shift>,
    substeps: usize,
    h: f64,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    combo: usize,
    limits: [Limit; MAX_VENUES],
}

pub const MAX_AUTO_SUBSTEPS: usize = 10_000;

/// The brute-force search keeps per-candidate limits inline.
pub const MAX_VENUES: usize = 8;

impl<'a> Solver<'a> {
    pub fn new(problem: SliceProblem<'a>) -> Result<Self> {
        let spec = problem.spec;
        let grid = problem.grid;
        grid.validate()?;
        let n = spec.n_venues();
        if n > MAX_VENUES {
            return Err(Error::invalid("market", format!("at most {MAX_VENUES} venues supported by the solver")));
        }
        if !(problem.penalty.eta_g >= 0.0) {
            return Err(Error::invalid("penalty", "eta_g must be non-negative"));
        }

        let mut states = Vec::with_capacity(spec.n_states());
        for s in 0..spec.n_states() {
            let decoded = spec.decode_state(s)?;
            let regime = spec.regime_of(s)?;
            let venues = (0..n)
                .map(|v| VenueInfo {
                    limits: spec.venues()[v].admissible_limits(decoded.spreads[v]),
                    base: Limit::ALL.map(|p| spec.base_rate(v, regime, p)),
                    price_gain: Limit::ALL.map(|p| price_gain(spec, &decoded, v, p)),
                    probs: Limit::ALL.map(|p| spec.proportion_probs(v, regime, p).to_vec()),
                    half_spread: 0.5 * spec.spread_of(&decoded, v),
                })
                .collect();
            states.push(StateInfo {
                venues,
                transitions: spec.transitions_from(s),
            });
        }

        // All joint volume choices, odometer order with the last venue fastest.
        let n_l = if grid.limit_orders { grid.n_l } else { 1 };
        let n_combos = n_l.pow(n as u32);
        let mut combo_index = Vec::with_capacity(n_combos * n);
        let mut combos = Vec::with_capacity(n_combos);
        let mut digits = vec![0usize; n];
        for c in 0..n_combos {
            let mut rest = c;
            for d in digits.iter_mut().rev() {
                *d = rest % n_l;
                rest /= n_l;
            }
            let volumes: Vec<f64> = digits.iter().map(|&j| grid.volume(j)).collect();
            let total: f64 = volumes.iter().sum();
            combos.push(Combo {
                start: combo_index.len(),
                total,
                decay: spec.volume_decay(total),
                index_sum: digits.iter().sum(),
            });
            combo_index.extend(digits.iter().map(|&j| j as u16));
        }

        let omega = &spec.proportions().omega;
        let q_step = grid.q_step();
        let fill_shifts = (0..grid.n_l)
            .flat_map(|j| omega.iter().map(move |w| Shift::new(w * grid.volume(j), q_step)))
            .collect();
        let market_shifts = grid.market_orders.iter().map(|m| Shift::new(*m, q_step)).collect();

        let substeps = grid.resolved_substeps(spec);
        if grid.substeps.is_none() && substeps > MAX_AUTO_SUBSTEPS {
            return Err(Error::invalid(
                "grid",
                format!("rates need {substeps} sub-steps per decision for a monotone scheme; set substeps explicitly"),
            ));
        }
        Ok(Solver {
            problem,
            states,
            combo_index,
            combos,
            fill_shifts,
            market_shifts,
            substeps,
            h: grid.dt / substeps as f64,
        })
    }

    pub fn problem(&self) -> &SliceProblem<'a> {
        &self.problem
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Length of one Euler sub-step.
    pub fn step(&self) -> f64 {
        self.h
    }

    /// One explicit step from the values after `next` sub-steps to
    /// `next - 1`. The obstacle is applied when `next - 1` is a decision time.
    pub fn bellman_step(&self, v_next: &ValueSlice, next: usize) -> Result<(ValueSlice, PolicySlice)> {
        let spec = self.problem.spec;
        let grid = self.problem.grid;
        let n_states = spec.n_states();
        if v_next.n_q != grid.n_q || v_next.n_states != n_states {
            return Err(Error::domain("value slice does not match the grid"));
        }
        let n_fine = grid.n_t * self.substeps;
        if next == 0 || next > n_fine {
            return Err(Error::domain(format!("step index {next} outside 1..={n_fine}")));
        }
        if v_next.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("value slice contains non-finite values"));
        }
        let t_next = self.fine_time(next);

        #[cfg(feature = "parallel")]
        let rows: Vec<Result<RowOutput>> = {
            use rayon::prelude::*;
            (0..n_states).into_par_iter().map(|s| self.solve_row(v_next, s, t_next)).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let rows: Vec<Result<RowOutput>> = (0..n_states).map(|s| self.solve_row(v_next, s, t_next)).collect();

        let n = spec.n_venues();
        let mut values = ValueSlice::zeros(grid.n_q, n_states);
        let mut policy = PolicySlice::new(grid.n_q, n_states, n);
        for (s, row) in rows.into_iter().enumerate() {
            let row = row?;
            values.values[s * grid.n_q..(s + 1) * grid.n_q].copy_from_slice(&row.values);
            let p0 = s * grid.n_q;
            policy.gain[p0..p0 + grid.n_q].copy_from_slice(&row.gain);
            policy.volume_index[p0 * n..(p0 + grid.n_q) * n].copy_from_slice(&row.volume_index);
            policy.limits[p0 * n..(p0 + grid.n_q) * n].copy_from_slice(&row.limits);
        }

        if !grid.market_orders.is_empty() && (next - 1) % self.substeps == 0 {
            self.market_order_obstacle(&mut values, &mut policy);
        }

        for s in 0..n_states {
            for i in 0..grid.n_q {
                let v = values.get(i, s);
                if !v.is_finite() || v.abs() > grid.blowup_bound {
                    return Err(Error::BlowUp {
                        t: self.problem.start_time + self.fine_time(next - 1),
                        q: grid.inventory(i),
                        state: s,
                        value: v,
                        bound: grid.blowup_bound,
                    });
                }
            }
        }
        Ok((values, policy))
    }

    fn fine_time(&self, j: usize) -> f64 {
        if j % self.substeps == 0 {
            self.problem.grid.time(j / self.substeps)
        } else {
            self.h * j as f64
        }
    }

    fn solve_row(&self, v_next: &ValueSlice, s: usize, t_next: f64) -> Result<RowOutput> {
        let spec = self.problem.spec;
        let grid = self.problem.grid;
        let n = spec.n_venues();
        let info = &self.states[s];
        let row = v_next.row(s);
        let mu = spec.price().mu;
        let target = self.problem.schedule.at(self.problem.start_time + t_next);
        let omega = &spec.proportions().omega;
        let n_r = omega.len();

        let mut out = RowOutput {
            values: vec![0.0; grid.n_q],
            gain: vec![0.0; grid.n_q],
            volume_index: vec![0; grid.n_q * n],
            limits: vec![Limit::Best; grid.n_q * n],
        };
        // expected[(venue * 3 + limit) * n_l + j]
        let mut expected = vec![0.0; n * 3 * grid.n_l];

        for i in 0..grid.n_q {
            let q = grid.inventory(i);
            let q_tol = q + SHIFT_EXACT_TOL * grid.q_step();

            let mut coupling = 0.0;
            for &(k, rate) in &info.transitions {
                coupling += rate * (v_next.get(i, k) - row[i]);
            }

            let sup = if grid.limit_orders {
                for (v, vi) in info.venues.iter().enumerate() {
                    for &p in vi.limits {
                        let base = (v * 3 + p.index()) * grid.n_l;
                        for j in 1..grid.n_l {
                            let l = grid.volume(j);
                            if l > q_tol {
                                break;
                            }
                            let shifts = &self.fill_shifts[j * n_r..(j + 1) * n_r];
                            if shifts.iter().any(|sh| !sh.fits(i)) {
                                break;
                            }
                            expected[base + j] =
                                expected_fill_gain(row, i, &vi.probs[p.index()], omega, shifts, l, vi.price_gain[p.index()]);
                        }
                    }
                }
                let best = self.search(info, &expected, q_tol, grid.n_l);
                let start = self.combos[best.combo].start;
                for v in 0..n {
                    out.volume_index[i * n + v] = self.combo_index[start + v];
                    out.limits[i * n + v] = best.limits[v];
                }
                best.gain
            } else {
                0.0
            };
            out.gain[i] = sup;

            let g = self.problem.penalty.eval(q - target);
            out.values[i] = row[i] - self.h * (g - mu * q - coupling - sup);
        }
        Ok(out)
    }

    /// Brute-force supremum over joint volumes and limits.
    fn search(&self, info: &StateInfo, expected: &[f64], q_tol: f64, n_l: usize) -> Candidate {
        let n = info.venues.len();
        let mut best = Candidate {
            gain: 0.0,
            combo: 0,
            limits: [Limit::Best; MAX_VENUES],
        };
        for (c, combo) in self.combos.iter().enumerate().skip(1) {
            if combo.total > q_tol {
                continue;
            }
            let idx = &self.combo_index[combo.start..combo.start + n];
            let mut gain = 0.0;
            let mut limits = [Limit::Best; MAX_VENUES];
            for v in 0..n {
                let j = idx[v] as usize;
                if j == 0 {
                    continue;
                }
                let vi = &info.venues[v];
                let mut term = f64::NEG_INFINITY;
                // Most passive limit first so that ties keep it.
                for &p in vi.limits.iter().rev() {
                    let t = (combo.decay * vi.base[p.index()]) * expected[(v * 3 + p.index()) * n_l + j];
                    if t > term {
                        term = t;
                        limits[v] = p;
                    }
                }
                gain += term;
            }
            let cand = Candidate { gain, combo: c, limits };
            if self.prefer(&cand, &best, n) {
                best = cand;
            }
        }
        best
    }

    fn prefer(&self, a: &Candidate, b: &Candidate, n: usize) -> bool {
        if a.gain != b.gain {
            return a.gain > b.gain;
        }
        let (ca, cb) = (&self.combos[a.combo], &self.combos[b.combo]);
        if ca.index_sum != cb.index_sum {
            return ca.index_sum < cb.index_sum;
        }
        for v in 0..n {
            if a.limits[v] != b.limits[v] {
                return a.limits[v] > b.limits[v];
            }
        }
        let ia = &self.combo_index[ca.start..ca.start + n];
        let ib = &self.combo_index[cb.start..cb.start + n];
        ia < ib
    }

    /// Applies `v <= max(v, sup_m -m psi/2 + v(q - m))` venue by venue and
    /// records the chosen market order. Uses the pre-obstacle values on the
    /// right-hand side, so a single order of at most `m_max` is taken.
    pub fn market_order_obstacle(&self, values: &mut ValueSlice, policy: &mut PolicySlice) {
        let grid = self.problem.grid;
        let n = self.problem.spec.n_venues();
        for s in 0..values.n_states {
            let info = &self.states[s];
            let before = values.row(s).to_vec();
            for i in 0..grid.n_q {
                let q = grid.inventory(i);
                let mut best = before[i];
                let mut choice: Option<(usize, f64)> = None;
                for (v, vi) in info.venues.iter().enumerate() {
                    for (m, shift) in grid.market_orders.iter().zip(&self.market_shifts) {
                        if *m <= 0.0 || *m > q + SHIFT_EXACT_TOL * grid.q_step() || !shift.fits(i) {
                            continue;
                        }
                        let cand = -m * vi.half_spread + shift.apply(&before, i);
                        if cand > best {
                            best = cand;
                            choice = Some((v, *m));
                        }
                    }
                }
                if let Some((v, m)) = choice {
                    values.values[s * grid.n_q + i] = best;
                    let p = policy.point(i, s) * n;
                    policy.market[p + v] = m;
                }
            }
        }
    }

    /// Marches from the terminal condition back to the start of the slice.
    pub fn solve(&self) -> Result<(ValueFunction, Policy)> {
        let grid = self.problem.grid;
        let n_states = self.problem.spec.n_states();
        let mut slices = vec![ValueSlice::zeros(grid.n_q, n_states)];
        let mut policies = Vec::with_capacity(grid.n_t);
        for next in (1..=grid.n_t * self.substeps).rev() {
            let (v, p) = self.bellman_step(slices.last().expect("terminal slice"), next)?;
            slices.push(v);
            if (next - 1) % self.substeps == 0 {
                policies.push(p);
            }
        }
        slices.reverse();
        policies.reverse();
        Ok((
            ValueFunction {
                substeps: self.substeps,
                slices,
            },
            Policy { slices: policies },
        ))
    }
}

struct RowOutput {
    values: Vec<f64>,
    gain: Vec<f64>,
    volume_index: Vec<u16>,
    limits: Vec<Limit>,
}

pub fn solve_slice(problem: SliceProblem<'_>) -> Result<(ValueFunction, Policy)> {
    Solver::new(problem)?.solve()
}

/// Standalone obstacle step on one value slice. Returns the updated values
/// and the chosen market-order size per (state, inventory, venue).
pub fn market_order_obstacle(values: &ValueSlice, problem: SliceProblem<'_>) -> Result<(ValueSlice, Vec<f64>)> {
    let solver = Solver::new(problem)?;
    let mut out = values.clone();
    let mut policy = PolicySlice::new(values.n_q, values.n_states, problem.spec.n_venues());
    solver.market_order_obstacle(&mut out, &mut policy);
    Ok((out, policy.market))
}
