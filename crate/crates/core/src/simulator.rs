//! Seeded forward simulation of one slice against a market spec.
//!
//! The spread/imbalance path of the whole slice is drawn first. Then, for
//! each decision interval, the policy is read at the interval start, market
//! orders are executed, and limit orders are exposed to exponential fill
//! clocks that are redrawn whenever the state changes or another order
//! fills. An order fills at most once per interval unless multi-fill mode is
//! on. The mid-price moves by exact Gaussian increments per interval.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::market::{Limit, MarketSpec, Process, RateMatrix};
use crate::math;
use crate::rng;
use crate::solver::{Policy, SliceGrid};

/// One jump of one chain. `from` and `to` index the chain's own states.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Transition {
    pub time: f64,
    pub process: Process,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Fill {
    pub time: f64,
    pub venue: usize,
    pub limit: Limit,
    /// Posted volume of this order.
    pub volume: f64,
    /// Total volume live across venues when the fill happened.
    pub total_posted: f64,
    pub proportion_index: usize,
    pub omega: f64,
    /// Shares executed, `omega * volume` capped by the inventory.
    pub executed: f64,
    pub price: f64,
    pub regime: usize,
    pub state: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarketOrder {
    pub time: f64,
    pub venue: usize,
    pub volume: f64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EventLog {
    pub start: f64,
    pub end: f64,
    pub initial_state: usize,
    pub final_state: usize,
    pub initial_inventory: f64,
    pub final_inventory: f64,
    /// Set when the initial inventory was not on the grid.
    pub snapped_from: Option<f64>,
    pub n_venues: usize,
    pub n_regimes: usize,
    pub transitions: Vec<Transition>,
    pub fills: Vec<Fill>,
    pub market_orders: Vec<MarketOrder>,
    /// `(time, mid-price)` at every decision time and at the end.
    pub prices: Vec<(f64, f64)>,
    /// `(time, inventory)` at every decision time and at the end.
    pub inventory: Vec<(f64, f64)>,
    /// Dense over (venue, regime, limit index): time integral of the volume
    /// decay while an order was live there.
    pub exposures: Vec<f64>,
    /// Cash received from all executions.
    pub cash: f64,
}

impl EventLog {
    pub fn exposure(&self, venue: usize, regime: usize, limit: Limit) -> f64 {
        self.exposures[(venue * self.n_regimes + regime) * 3 + limit.index()]
    }

    pub fn executed_volume(&self) -> f64 {
        self.fills.iter().map(|f| f.executed).sum::<f64>() + self.market_orders.iter().map(|m| m.volume).sum::<f64>()
    }
}

/// Simulation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimOptions {
    /// Re-arm a filled order immediately instead of waiting for the next decision.
    pub multi_fill: bool,
}

/// Jumps of one chain over `[start, start + duration)`.
pub fn simulate_chain(matrix: &RateMatrix, initial: usize, start: f64, duration: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, usize, usize)> {
    let mut out = Vec::new();
    let end = start + duration;
    let mut state = initial;
    let mut t = start;
    loop {
        let nu = matrix.exit_rate(state);
        if nu <= 0.0 {
            break;
        }
        t += rng::exponential(rng, nu);
        if t >= end {
            break;
        }
        let to = match rng::categorical(rng, &matrix.jump_probabilities(state)) {
            Some(k) => k,
            None => break,
        };
        out.push((t, state, to));
        state = to;
    }
    out
}

/// Path of every chain of the generator from `initial_state`, merged by
/// time. Each chain draws from its own stream so chains do not perturb each
/// other.
pub fn simulate_ctmc(spec: &MarketSpec, initial_state: usize, start: f64, duration: f64, seed: u64, stream_index: u64) -> Result<Vec<Transition>> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::domain("duration must be finite and non-negative"));
    }
    let decoded = spec.decode_state(initial_state)?;
    let generator = spec.generator();
    let mut all = Vec::new();
    for (i, process) in generator.processes(spec.n_venues()).into_iter().enumerate() {
        let matrix = generator.matrix(process).expect("process belongs to generator");
        let initial = match process {
            Process::Spread(n) => decoded.spreads[n],
            Process::Imbalance(n) => decoded.imbalances[n],
            Process::Joint => initial_state,
        };
        let mut r = rng::stream(seed, rng::CTMC_STREAM, stream_index * 64 + i as u64);
        all.extend(
            simulate_chain(matrix, initial, start, duration, &mut r)
                .into_iter()
                .map(|(time, from, to)| Transition { time, process, from, to }),
        );
    }
    all.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(all)
}

/// Joint state after applying one transition.
pub fn apply_transition(spec: &MarketSpec, state: usize, tr: &Transition) -> Result<usize> {
    match tr.process {
        Process::Joint => Ok(tr.to),
        Process::Spread(n) | Process::Imbalance(n) => {
            let mut d = spec.decode_state(state)?;
            let slot = match tr.process {
                Process::Spread(_) => &mut d.spreads[n],
                _ => &mut d.imbalances[n],
            };
            if *slot != tr.from {
                return Err(Error::domain(format!("transition from {} but chain is in {}", tr.from, slot)));
            }
            *slot = tr.to;
            spec.joint_state_index(&d.spreads, &d.imbalances)
        }
    }
}

/// Everything needed to simulate one slice.
#[derive(Debug, Clone, Copy)]
pub struct SliceRun<'a> {
    pub spec: &'a MarketSpec,
    pub grid: &'a SliceGrid,
    pub policy: &'a Policy,
    pub inventory: f64,
    pub state: usize,
    pub price: f64,
    pub start_time: f64,
    pub seed: u64,
    /// Distinguishes the random streams of successive slices.
    pub stream_index: u64,
    pub options: SimOptions,
}

/// Limit actually in force: `p = -1` degrades to the best limit once the
/// spread has closed to one tick.
fn effective_limit(spec: &MarketSpec, state: usize, venue: usize, limit: Limit) -> Result<Limit> {
    let d = spec.decode_state(state)?;
    Ok(if spec.is_admissible(&d, venue, limit) { limit } else { Limit::Best })
}

pub fn simulate_slice(run: SliceRun<'_>) -> Result<EventLog> {
    let SliceRun {
        spec,
        grid,
        policy,
        start_time,
        seed,
        stream_index,
        options,
        ..
    } = run;
    let n = spec.n_venues();
    if policy.n_steps() != grid.n_t || policy.n_venues() != n {
        return Err(Error::domain("policy does not cover the grid"));
    }
    if !(run.inventory >= 0.0 && run.inventory.is_finite()) {
        return Err(Error::domain("inventory must be finite and non-negative"));
    }
    spec.decode_state(run.state)?;

    let mut q = run.inventory;
    let mut snapped_from = None;
    let qi0 = grid.nearest_inventory_index(q);
    if (grid.inventory(qi0) - q).abs() > 1e-9 * grid.q_step() {
        snapped_from = Some(q);
        q = grid.inventory(qi0);
    }

    let path = simulate_ctmc(spec, run.state, start_time, grid.slice_length, seed, stream_index)?;
    let mut fill_rng = rng::stream(seed, rng::FILL_STREAM, stream_index);
    let mut price_rng = rng::stream(seed, rng::PRICE_STREAM, stream_index);

    let mut log = EventLog {
        start: start_time,
        end: start_time + grid.slice_length,
        initial_state: run.state,
        final_state: run.state,
        initial_inventory: q,
        final_inventory: q,
        snapped_from,
        n_venues: n,
        n_regimes: spec.n_regimes(),
        transitions: Vec::with_capacity(path.len()),
        fills: Vec::new(),
        market_orders: Vec::new(),
        prices: vec![(start_time, run.price)],
        inventory: vec![(start_time, q)],
        exposures: vec![0.0; n * spec.n_regimes() * 3],
        cash: 0.0,
    };

    let mut state = run.state;
    let mut price = run.price;
    let mut next_tr = 0;
    let omega = &spec.proportions().omega;
    let price_model = *spec.price();

    for i in 0..grid.n_t {
        let t0 = start_time + grid.time(i);
        let t1 = if i + 1 == grid.n_t { log.end } else { start_time + grid.time(i + 1) };
        let decisions = policy.slice(i);

        // Market orders first, then the limit-order part at the new inventory.
        let qi = grid.nearest_inventory_index(q);
        let d = spec.decode_state(state)?;
        for v in 0..n {
            let m = decisions.market(qi, state, v).min(q);
            if m > 0.0 {
                let px = price - 0.5 * spec.spread_of(&d, v);
                q -= m;
                log.cash += m * px;
                log.market_orders.push(MarketOrder {
                    time: t0,
                    venue: v,
                    volume: m,
                    price: px,
                });
            }
        }
        let control = decisions.control(grid.nearest_inventory_index(q), state, grid);
        let mut volumes = vec![0.0; n];
        let mut room = q;
        for v in 0..n {
            volumes[v] = control.volumes[v].min(room);
            room -= volumes[v];
        }
        let mut live: Vec<bool> = volumes.iter().map(|l| *l > 0.0).collect();

        let mut tau = t0;
        while tau < t1 {
            let tn = path.get(next_tr).map_or(f64::INFINITY, |t| t.time);
            let horizon = tn.min(t1);
            let regime = spec.regime_of(state)?;
            let total: f64 = (0..n).filter(|v| live[*v]).map(|v| volumes[v]).sum();
            let decay = spec.volume_decay(total);
            let mut limits = vec![Limit::Best; n];
            let mut first: Option<(f64, usize)> = None;
            for v in 0..n {
                if !live[v] {
                    continue;
                }
                limits[v] = effective_limit(spec, state, v, control.limits[v])?;
                let rate = decay * spec.base_rate(v, regime, limits[v]);
                let wait = rng::exponential(&mut fill_rng, rate);
                if first.map_or(true, |(w, _)| wait < w) {
                    first = Some((wait, v));
                }
            }
            let fill = first.filter(|(w, _)| tau + w < horizon);
            let stop = fill.map_or(horizon, |(w, _)| tau + w);
            for v in 0..n {
                if live[v] {
                    log.exposures[(v * log.n_regimes + regime) * 3 + limits[v].index()] += (stop - tau) * decay;
                }
            }
            tau = stop;
            match fill {
                Some((_, v)) => {
                    let probs = spec.proportion_probs(v, regime, limits[v]);
                    let r = rng::categorical(&mut fill_rng, probs).ok_or_else(|| Error::domain("empty proportion law"))?;
                    let executed = (omega[r] * volumes[v]).min(q);
                    let d = spec.decode_state(state)?;
                    let px = price + 0.5 * spec.spread_of(&d, v) + f64::from(limits[v].offset()) * spec.venues()[v].tick_size;
                    q -= executed;
                    log.cash += executed * px;
                    log.fills.push(Fill {
                        time: tau,
                        venue: v,
                        limit: limits[v],
                        volume: volumes[v],
                        total_posted: total,
                        proportion_index: r,
                        omega: omega[r],
                        executed,
                        price: px,
                        regime,
                        state,
                    });
                    if options.multi_fill {
                        let others: f64 = (0..n).filter(|u| *u != v && live[*u]).map(|u| volumes[u]).sum();
                        volumes[v] = volumes[v].min((q - others).max(0.0));
                        live[v] = volumes[v] > 0.0;
                    } else {
                        live[v] = false;
                    }
                }
                None => {
                    if tn < t1 && tau == tn {
                        let tr = path[next_tr];
                        state = apply_transition(spec, state, &tr)?;
                        log.transitions.push(tr);
                        next_tr += 1;
                    }
                }
            }
        }

        let h = t1 - t0;
        price += price_model.mu * h + price_model.sigma * math::sqrt(h) * rng::standard_normal(&mut price_rng);
        log.prices.push((t1, price));
        log.inventory.push((t1, q));
    }

    log.final_state = state;
    log.final_inventory = q;
    Ok(log)
}
