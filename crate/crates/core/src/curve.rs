//! Implementation-shortfall target inventory schedule.

use alloc::format;

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurveParams {
    /// Initial inventory in shares.
    pub q0: f64,
    /// Risk aversion.
    pub gamma: f64,
    /// Volatility per square-root minute.
    pub sigma: f64,
    /// Market volume per minute.
    pub volume: f64,
    /// Quadratic execution cost coefficient.
    pub eta: f64,
    /// Horizon in minutes.
    pub horizon: f64,
}

impl CurveParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.q0, self.gamma, self.sigma, self.volume, self.eta, self.horizon];
        if all.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::invalid("curve", "all curve parameters must be strictly positive"));
        }
        Ok(())
    }

    /// Urgency `sqrt(gamma * sigma^2 * V / (2 eta))`.
    pub fn urgency(&self) -> f64 {
        math::sqrt(self.gamma * self.sigma * self.sigma * self.volume / (2.0 * self.eta))
    }
}

/// `q*_t = q0 sinh(k (T - t)) / sinh(k T)`.
pub fn target_inventory(t: f64, params: &CurveParams) -> Result<f64> {
    params.validate()?;
    if !(0.0..=params.horizon).contains(&t) {
        return Err(Error::domain(format!("t = {t} outside [0, {}]", params.horizon)));
    }
    let k = params.urgency();
    Ok(params.q0 * math::sinh(k * (params.horizon - t)) / math::sinh(k * params.horizon))
}

/// How a slice re-anchors the curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CurveMode {
    /// Every slice tracks the schedule computed once at t = 0.
    #[default]
    Global,
    /// Each slice rescales the schedule so that it starts at the inventory
    /// actually held when the slice begins.
    Renormalized,
}

/// The target inventory as seen from one slice, indexed by global time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    params: CurveParams,
    anchor_time: f64,
    anchor_inventory: f64,
}

impl Schedule {
    pub fn global(params: CurveParams) -> Result<Self> {
        params.validate()?;
        Ok(Schedule {
            params,
            anchor_time: 0.0,
            anchor_inventory: params.q0,
        })
    }

    /// Schedule through `(anchor_time, inventory)` ending at zero at the horizon.
    pub fn renormalized(params: CurveParams, anchor_time: f64, inventory: f64) -> Result<Self> {
        params.validate()?;
        if !(0.0..params.horizon).contains(&anchor_time) {
            return Err(Error::domain(format!("anchor time {anchor_time} outside [0, {})", params.horizon)));
        }
        Ok(Schedule {
            params,
            anchor_time,
            anchor_inventory: inventory,
        })
    }

    pub fn params(&self) -> &CurveParams {
        &self.params
    }

    /// Target inventory at global time `t`, clamped to the horizon.
    pub fn at(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.params.horizon);
        let k = self.params.urgency();
        let h = self.params.horizon;
        if self.anchor_time == 0.0 && self.anchor_inventory == self.params.q0 {
            return self.params.q0 * math::sinh(k * (h - t)) / math::sinh(k * h);
        }
        self.anchor_inventory * math::sinh(k * (h - t)) / math::sinh(k * (h - self.anchor_time))
    }
}
