//! The adaptive slice loop: estimate, solve, trade one slice, update.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use crate::bayes::{Beliefs, PriorSet, SliceStats};
use crate::curve::{CurveMode, CurveParams, Schedule};
use crate::error::{Error, Result};
use crate::market::MarketSpec;
use crate::simulator::{simulate_slice, EventLog, SimOptions, SliceRun};
use crate::solver::{PenaltySpec, Policy, SliceGrid, SliceProblem, Solver, ValueFunction};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunConfig {
    pub n_slices: usize,
    /// Grid of every slice; its length is the slice length.
    pub grid: SliceGrid,
    pub penalty: PenaltySpec,
    /// Target curve; `q0` is the initial inventory.
    pub curve: CurveParams,
    pub curve_mode: CurveMode,
    /// Market the orders are simulated against.
    pub truth: MarketSpec,
    /// Beliefs before the first slice.
    pub prior: PriorSet,
    /// When false the believed market stays at the prior estimate.
    pub learn: bool,
    pub initial_state: usize,
    pub seed: u64,
    pub options: SimOptions,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_slices == 0 {
            return Err(Error::invalid("run", "at least one slice is required"));
        }
        self.grid.validate()?;
        self.curve.validate()?;
        let span = self.n_slices as f64 * self.grid.slice_length;
        if span > self.curve.horizon * (1.0 + 1e-9) {
            return Err(Error::invalid(
                "run",
                format!("{} slices of {} min exceed the curve horizon {}", self.n_slices, self.grid.slice_length, self.curve.horizon),
            ));
        }
        if self.curve.q0 > self.grid.q_max * (1.0 + 1e-12) {
            return Err(Error::invalid("run", format!("q0 = {} exceeds the inventory grid bound {}", self.curve.q0, self.grid.q_max)));
        }
        if !(self.penalty.eta_g >= 0.0 && self.penalty.eta_g.is_finite()) {
            return Err(Error::invalid("penalty", "eta_g must be finite and non-negative"));
        }
        if self.initial_state >= self.truth.n_states() {
            return Err(Error::invalid("run", format!("initial state {} out of range", self.initial_state)));
        }
        self.prior.validate(&self.truth)?;
        self.prior.believed_spec(&self.truth).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SliceReport {
    pub index: usize,
    pub start_time: f64,
    /// Market the slice's policy was computed for.
    pub believed: MarketSpec,
    /// Beliefs after observing the slice.
    pub posterior: PriorSet,
    pub stats: SliceStats,
    pub log: EventLog,
    pub q_start: f64,
    pub q_end: f64,
    pub cash: f64,
    /// Value of the believed problem at the start of the slice.
    pub value_at_start: f64,
    pub substeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunReport {
    pub slices: Vec<SliceReport>,
    pub initial_inventory: f64,
    pub final_inventory: f64,
    pub cash: f64,
    pub final_price: f64,
}

/// What a slice solved, handed to the observer of [`run_with`].
pub struct SliceView<'a> {
    pub index: usize,
    pub start_time: f64,
    pub believed: &'a MarketSpec,
    pub grid: &'a SliceGrid,
    pub values: &'a ValueFunction,
    pub policy: &'a Policy,
}

pub fn run(config: &RunConfig) -> Result<RunReport> {
    run_with(config, |p| Solver::new(p)?.solve(), |_| {})
}

/// Runs the loop with a custom slice solver, showing every solved slice to
/// `observe` before it is traded.
pub fn run_with(
    config: &RunConfig,
    mut solve: impl FnMut(SliceProblem<'_>) -> Result<(ValueFunction, Policy)>,
    mut observe: impl FnMut(&SliceView<'_>),
) -> Result<RunReport> {
    config.validate()?;
    let truth = &config.truth;
    let global = Schedule::global(config.curve)?;
    let mut beliefs = Beliefs::new(config.prior.clone(), truth)?;
    let mut posterior = config.prior.clone();
    let mut q = config.curve.q0;
    let mut state = config.initial_state;
    let mut price = truth.price().s0;
    let mut slices = Vec::with_capacity(config.n_slices);
    let mut cash = 0.0;

    for v in 0..config.n_slices {
        let wrap = |e: Error| Error::Slice { index: v, inner: Box::new(e) };
        let start_time = v as f64 * config.grid.slice_length;
        let believed = if config.learn {
            posterior.believed_spec(truth)
        } else {
            config.prior.believed_spec(truth)
        }
        .map_err(wrap)?;
        let schedule = match config.curve_mode {
            CurveMode::Global => global,
            CurveMode::Renormalized => Schedule::renormalized(config.curve, start_time, q).map_err(wrap)?,
        };
        let (values, policy) = solve(SliceProblem {
            spec: &believed,
            grid: &config.grid,
            penalty: config.penalty,
            schedule: &schedule,
            start_time,
        })
        .map_err(wrap)?;
        observe(&SliceView {
            index: v,
            start_time,
            believed: &believed,
            grid: &config.grid,
            values: &values,
            policy: &policy,
        });

        let log = simulate_slice(SliceRun {
            spec: truth,
            grid: &config.grid,
            policy: &policy,
            inventory: q,
            state,
            price,
            start_time,
            seed: config.seed,
            stream_index: v as u64,
            options: config.options,
        })
        .map_err(wrap)?;
        let stats = SliceStats::from_log(truth, &log).map_err(wrap)?;
        beliefs.observe(&stats);
        posterior = beliefs.posterior().map_err(wrap)?;

        let qi = config.grid.nearest_inventory_index(log.initial_inventory);
        let value_at_start = values.get(0, qi, state);
        q = log.final_inventory;
        state = log.final_state;
        price = log.prices.last().map_or(price, |p| p.1);
        cash += log.cash;
        slices.push(SliceReport {
            index: v,
            start_time,
            believed,
            posterior: posterior.clone(),
            stats,
            q_start: log.initial_inventory,
            q_end: log.final_inventory,
            cash: log.cash,
            value_at_start,
            substeps: values.substeps(),
            log,
        });
    }

    Ok(RunReport {
        slices,
        initial_inventory: config.curve.q0,
        final_inventory: q,
        cash,
        final_price: price,
    })
}
