//! Ready-made two-venue market used by the examples, the sample
//! configuration and the tests.
//!
//! Each venue has spreads of one or two ticks (tick 0.05) and imbalances
//! `{-0.5, 0, 0.5}`; every state is its own regime. Fill rates come from
//! four 3x3 tables indexed by the spread pair `(own, other)` with rows the
//! own imbalance and columns the other venue's imbalance.

use alloc::vec;
use alloc::vec::Vec;

use crate::curve::CurveParams;
use crate::market::{
    Generator, IntensityTable, MarketSpec, PriceModel, ProportionTable, RateMatrix, VenueSpec, ZoneMap, DEFAULT_LIMIT_FACTORS,
};
use crate::Result;

pub const TICK: f64 = 0.05;
pub const KAPPA: f64 = 2.5e-5;
pub const OMEGA: [f64; 2] = [0.5, 1.0];
pub const PROPORTION_PRIOR: [f64; 2] = [0.1, 0.9];

/// `BASE_RATES[own spread][other spread][own imbalance][other imbalance]`, per minute.
pub const BASE_RATES: [[[[f64; 3]; 3]; 2]; 2] = [
    [
        [[5.35, 6.52, 7.11], [2.75, 3.4, 3.79], [1.5, 1.86, 2.1]],
        [[8.28, 10.03, 10.9], [4.38, 5.35, 5.9], [2.5, 3.05, 3.4]],
    ],
    [
        [[1.81, 2.27, 2.5], [0.78, 1.04, 1.19], [0.29, 0.43, 0.53]],
        [[2.96, 3.65, 4.0], [1.42, 1.81, 2.04], [0.68, 0.9, 1.04]],
    ],
];

pub fn spread_generator() -> RateMatrix {
    RateMatrix::new(vec![vec![-5.0, 5.0], vec![5.0, -5.0]]).expect("valid generator")
}

pub fn imbalance_generator() -> RateMatrix {
    RateMatrix::new(vec![vec![-5.0, 2.8, 2.2], vec![2.2, -5.0, 2.8], vec![2.2, 2.8, -5.0]]).expect("valid generator")
}

pub fn venue() -> VenueSpec {
    VenueSpec {
        tick_size: TICK,
        spread_ticks: vec![1, 2],
        imbalance_values: vec![-0.5, 0.0, 0.5],
    }
}

/// `p = 0` base rates per venue over the 36 joint regimes, in regime order
/// `(spread 1, spread 2, imbalance 1, imbalance 2)`.
pub fn base_rates() -> Vec<Vec<f64>> {
    let mut venue1 = Vec::with_capacity(36);
    let mut venue2 = Vec::with_capacity(36);
    for s1 in 0..2 {
        for s2 in 0..2 {
            for i1 in 0..3 {
                for i2 in 0..3 {
                    venue1.push(BASE_RATES[s1][s2][i1][i2]);
                    venue2.push(BASE_RATES[s2][s1][i2][i1]);
                }
            }
        }
    }
    vec![venue1, venue2]
}

/// Symmetric two-venue market; `venue2_scale` multiplies every fill rate of
/// the second venue.
pub fn two_venue(price: PriceModel, venue2_scale: f64) -> Result<MarketSpec> {
    let venues = vec![venue(), venue()];
    let zones = ZoneMap::identity(&venues);
    let generator = Generator::Factored {
        spread: vec![spread_generator(), spread_generator()],
        imbalance: vec![imbalance_generator(), imbalance_generator()],
    };
    let intensities = IntensityTable::from_base(&base_rates(), DEFAULT_LIMIT_FACTORS, KAPPA).scaled_venue(36, 1, venue2_scale);
    let prior = PROPORTION_PRIOR.to_vec();
    let proportions = ProportionTable::per_venue(OMEGA.to_vec(), &[prior.clone(), prior], 36);
    MarketSpec::new(venues, zones, generator, intensities, proportions, price)
}

pub fn price() -> PriceModel {
    PriceModel {
        mu: 0.0,
        sigma: 0.05,
        s0: 100.0,
    }
}

pub fn curve() -> CurveParams {
    CurveParams {
        q0: 5e4,
        gamma: 1e-6,
        sigma: 0.05,
        volume: 1e8,
        eta: 0.1,
        horizon: 10.0,
    }
}
