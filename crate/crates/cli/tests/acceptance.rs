//! Acceptance checks. Prints one line per criterion and exits non-zero if a
//! criterion outside `KNOWN_FAILURES` fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use xvenue_core::bayes::{
    ChainPrior, ChainStats, CtmcEstimator, DirichletPrior, DriftPrior, DriftStats, GammaPrior, NigPrior, NormalDriftPrior,
    PriorSet, PriorWeights, ProportionPooling,
};
use xvenue_core::curve::{target_inventory, CurveMode, CurveParams, Schedule};
use xvenue_core::engine::{self, RunConfig};
use xvenue_core::linalg::Matrix;
use xvenue_core::market::{Generator, IntensityTable, PriceModel, ProportionTable, RateMatrix};
use xvenue_core::otc::{update_rfq_intensity, update_size_scale, NiwPrior, NiwStats, NiwVariant, SizeScalePrior};
use xvenue_core::presets;
use xvenue_core::rng;
use xvenue_core::simulator::{simulate_chain, simulate_ctmc, simulate_slice, SimOptions, SliceRun};
use xvenue_core::solver::{candidate_gain, PenaltySpec, Policy, SliceGrid, SliceProblem, Solver, ValueFunction, ValueSlice};
use xvenue_core::{Limit, MarketSpec};

/// Criteria that cannot be met as stated; see the README.
const KNOWN_FAILURES: [usize; 2] = [9, 10];

const ETA_G: f64 = 2e-4;

fn penalty() -> PenaltySpec {
    PenaltySpec { eta_g: ETA_G }
}

fn price(mu: f64) -> PriceModel {
    PriceModel { mu, ..presets::price() }
}

fn paper_spec(venue2_scale: f64) -> MarketSpec {
    presets::two_venue(price(0.0), venue2_scale).unwrap()
}

fn paper_grid() -> SliceGrid {
    SliceGrid::new(101, 51, 10, 1.0, 5e4).unwrap()
}

fn schedule() -> Schedule {
    Schedule::global(presets::curve()).unwrap()
}

fn solve(spec: &MarketSpec, grid: &SliceGrid) -> (ValueFunction, Policy) {
    let sched = schedule();
    Solver::new(SliceProblem {
        spec,
        grid,
        penalty: penalty(),
        schedule: &sched,
        start_time: 0.0,
    })
    .unwrap()
    .solve()
    .unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check {
        pass,
        detail: detail.into(),
    }
}

/// Solutions shared by several criteria.
struct Shared {
    symmetric: (ValueFunction, Policy),
    symmetric_time: Duration,
}

fn zero_rate_oracle() -> Check {
    let start = Instant::now();
    let zero = IntensityTable {
        kappa: presets::KAPPA,
        rates: vec![0.0; 2 * 36 * 3],
    };
    let frozen = Generator::Factored {
        spread: vec![RateMatrix::zeros(2), RateMatrix::zeros(2)],
        imbalance: vec![RateMatrix::zeros(3), RateMatrix::zeros(3)],
    };
    let spec = paper_spec(1.0).with_intensities(zero).unwrap().with_generator(frozen).unwrap();
    let grid = paper_grid();
    let (values, _) = solve(&spec, &grid);
    let elapsed = start.elapsed();
    if values.substeps() != 1 {
        return check(false, format!("expected one sub-step, got {}", values.substeps()));
    }
    let curve = presets::curve();
    let mut worst: f64 = 0.0;
    for t in 0..=grid.n_t {
        for i in 0..grid.n_q {
            let q = grid.inventory(i);
            let mut acc = 0.0;
            for j in t + 1..=grid.n_t {
                let target = target_inventory(j as f64 * grid.dt, &curve).unwrap();
                acc -= grid.dt * ETA_G * (q - target) * (q - target);
            }
            for s in 0..spec.n_states() {
                worst = worst.max((values.get(t, i, s) - acc).abs());
            }
        }
    }
    let ok = worst < 1e-9 && elapsed < Duration::from_secs(1);
    check(ok, format!("max abs error {worst:.3e}, {:.3}s", elapsed.as_secs_f64()))
}

/// Exhaustive supremum at one point. Returns the gain, the volume indices
/// and the limits, choosing among equal gains the smallest total volume
/// index, then the most passive limits, then the smallest indices.
fn exhaustive(spec: &MarketSpec, grid: &SliceGrid, next: &ValueSlice, i: usize, s: usize) -> (f64, Vec<usize>, Vec<Limit>) {
    let state = spec.decode_state(s).unwrap();
    let regime = spec.regime_of(s).unwrap();
    let omega = &spec.proportions().omega;
    let q = grid.inventory(i);
    let q_step = grid.q_step();
    let row = next.row(s);
    let options = |n: usize| -> Vec<(usize, Limit)> {
        let mut out = vec![(0, Limit::Best)];
        for j in 1..grid.n_l {
            for p in Limit::ALL {
                if spec.is_admissible(&state, n, p) {
                    out.push((j, p));
                }
            }
        }
        out
    };
    let term = |n: usize, j: usize, p: Limit, decay: f64| -> f64 {
        let l = grid.volume(j);
        let gain = 0.5 * spec.spread_of(&state, n) + f64::from(p.offset()) * spec.venues()[n].tick_size;
        let probs = spec.proportion_probs(n, regime, p);
        let mut e = 0.0;
        for r in 0..omega.len() {
            let k = (omega[r] * l / q_step).round() as usize;
            e += probs[r] * (omega[r] * l * gain + row[i - k] - row[i]);
        }
        (decay * spec.base_rate(n, regime, p)) * e
    };
    let mut best = (0.0, vec![0, 0], vec![Limit::Best, Limit::Best]);
    for &(j0, p0) in &options(0) {
        for &(j1, p1) in &options(1) {
            if j0 + j1 == 0 {
                continue;
            }
            let total = grid.volume(j0) + grid.volume(j1);
            if total > q + 1e-9 * q_step {
                continue;
            }
            let decay = spec.volume_decay(total);
            let mut gain = 0.0;
            if j0 > 0 {
                gain += term(0, j0, p0, decay);
            }
            if j1 > 0 {
                gain += term(1, j1, p1, decay);
            }
            let better = if gain != best.0 {
                gain > best.0
            } else if j0 + j1 != best.1[0] + best.1[1] {
                j0 + j1 < best.1[0] + best.1[1]
            } else if [p0, p1] != best.2[..] {
                [p0, p1] > [best.2[0], best.2[1]]
            } else {
                [j0, j1] < [best.1[0], best.1[1]]
            };
            if better {
                best = (gain, vec![j0, j1], vec![p0, p1]);
            }
        }
    }
    best
}

fn brute_force_bellman() -> Check {
    let start = Instant::now();
    let spec = paper_spec(1.0);
    let grid = SliceGrid::new(11, 6, 10, 1.0, 5e4).unwrap();
    let (values, policy) = solve(&spec, &grid);
    let k = values.substeps();
    let h = grid.dt / k as f64;
    let sched = schedule();
    let n_fine = grid.n_t * k;
    let n_states = spec.n_states();

    let mut own = ValueSlice::zeros(grid.n_q, n_states);
    let mut worst_value: f64 = 0.0;
    let mut policy_mismatch = 0;
    let mut gain_mismatch = 0;
    for next in (1..=n_fine).rev() {
        let t_next = next as f64 * h;
        let target = sched.at(t_next);
        let solver_next = values.fine_slice(next);
        let decision = (next - 1) % k == 0;
        let mut fresh = vec![0.0; grid.n_q * n_states];
        for s in 0..n_states {
            let state = spec.decode_state(s).unwrap();
            let mut neighbours = Vec::new();
            for n in 0..2 {
                let chains = [(presets::spread_generator(), true), (presets::imbalance_generator(), false)];
                for (m, is_spread) in &chains {
                    let cur = if *is_spread { state.spreads[n] } else { state.imbalances[n] };
                    for to in 0..m.size() {
                        if to == cur {
                            continue;
                        }
                        let mut spreads = state.spreads.clone();
                        let mut imbalances = state.imbalances.clone();
                        if *is_spread {
                            spreads[n] = to;
                        } else {
                            imbalances[n] = to;
                        }
                        neighbours.push((spec.joint_state_index(&spreads, &imbalances).unwrap(), m.rate(cur, to)));
                    }
                }
            }
            for i in 0..grid.n_q {
                let q = grid.inventory(i);
                let coupling: f64 = neighbours.iter().map(|(k2, r)| r * (own.get(i, *k2) - own.get(i, s))).sum();
                let (sup, _, _) = exhaustive(&spec, &grid, &own, i, s);
                let g = ETA_G * (q - target) * (q - target);
                fresh[s * grid.n_q + i] = own.get(i, s) - h * (g - coupling - sup);

                if decision {
                    let (gain, idx, limits) = exhaustive(&spec, &grid, solver_next, i, s);
                    let p = policy.slice((next - 1) / k);
                    if p.gain(i, s) != gain {
                        gain_mismatch += 1;
                    }
                    let stored_idx = [p.volume_index(i, s, 0), p.volume_index(i, s, 1)];
                    let stored_lim = [p.limit(i, s, 0), p.limit(i, s, 1)];
                    if stored_idx[..] != idx[..] || stored_lim[..] != limits[..] {
                        policy_mismatch += 1;
                    }
                }
            }
        }
        own = ValueSlice::from_fn(grid.n_q, n_states, |i, s| fresh[s * grid.n_q + i]);
        let solver_now = values.fine_slice(next - 1);
        for s in 0..n_states {
            for i in 0..grid.n_q {
                let (a, b) = (own.get(i, s), solver_now.get(i, s));
                worst_value = worst_value.max((a - b).abs() / a.abs().max(1.0));
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = worst_value <= 1e-12 && policy_mismatch == 0 && gain_mismatch == 0 && elapsed < Duration::from_secs(10);
    check(
        ok,
        format!(
            "{} points x {} decisions, policy mismatches {policy_mismatch}, supremum mismatches {gain_mismatch}, max rel value error {worst_value:.2e}, {:.2}s",
            grid.n_q * n_states,
            grid.n_t,
            elapsed.as_secs_f64()
        ),
    )
}

fn swap_symmetry(shared: &Shared) -> Check {
    let spec = paper_spec(1.0);
    let grid = paper_grid();
    let (values, policy) = &shared.symmetric;
    let k = values.substeps();
    let mut worst: f64 = 0.0;
    for t in 0..=grid.n_t {
        for s in 0..spec.n_states() {
            let w = spec.swap_venues(s, 0, 1).unwrap();
            for i in 0..grid.n_q {
                let (a, b) = (values.get(t, i, s), values.get(t, i, w));
                worst = worst.max((a - b).abs() / a.abs().max(1.0));
            }
        }
    }
    let (mut mismatches, mut ties, mut broken) = (0, 0, 0);
    for t in 0..grid.n_t {
        let p = policy.slice(t);
        for s in 0..spec.n_states() {
            let w = spec.swap_venues(s, 0, 1).unwrap();
            for i in 0..grid.n_q {
                let a = p.control(i, s, &grid);
                let b = p.control(i, w, &grid);
                let same = a.volume_index[0] == b.volume_index[1]
                    && a.volume_index[1] == b.volume_index[0]
                    && a.limits[0] == b.limits[1]
                    && a.limits[1] == b.limits[0];
                if same {
                    continue;
                }
                mismatches += 1;
                let swapped_limits = [b.limits[1], b.limits[0]];
                let swapped_volumes = [b.volumes[1], b.volumes[0]];
                let g = candidate_gain(values.fine_slice(t * k + 1), i, s, &swapped_limits, &swapped_volumes, &spec, &grid).unwrap();
                if rel_close(g, a.gain, 1e-9) {
                    ties += 1;
                } else {
                    broken += 1;
                }
            }
        }
    }
    let ok = worst <= 1e-9 && broken == 0;
    check(
        ok,
        format!("max rel value gap {worst:.2e}; policy differences {mismatches}, of which exact ties {ties}, genuine {broken}"),
    )
}

fn asymmetric_dominance(shared: &Shared) -> Check {
    let spec = paper_spec(0.5);
    let grid = paper_grid();
    let (asym, _) = solve(&spec, &grid);
    let (sym, _) = &shared.symmetric;
    let mut violations = 0;
    for t in 0..=grid.n_t {
        for s in 0..spec.n_states() {
            for i in 0..grid.n_q {
                let (a, b) = (asym.get(t, i, s), sym.get(t, i, s));
                if a > b + 1e-9 * b.abs().max(1.0) {
                    violations += 1;
                }
            }
        }
    }
    let mid = grid.n_t / 2;
    let top = grid.n_q - 1;
    let not_strict = (0..spec.n_states()).filter(|&s| asym.get(mid, top, s) >= sym.get(mid, top, s)).count();
    let s0 = spec.joint_state_index(&[0, 0], &[1, 1]).unwrap();
    let ok = violations == 0 && not_strict == 0;
    check(
        ok,
        format!(
            "pointwise violations {violations}; at (t = 0.5, q = q0) not strictly lower in {not_strict} states; e.g. {:.0} vs {:.0}",
            asym.get(mid, top, s0),
            sym.get(mid, top, s0)
        ),
    )
}

fn limit_monotonicity(shared: &Shared) -> Check {
    let spec = paper_spec(1.0);
    let grid = paper_grid();
    let (_, policy) = &shared.symmetric;
    let mut violations = 0;
    let mut sequences = 0;
    for t in 0..grid.n_t {
        let p = policy.slice(t);
        for s in 0..spec.n_states() {
            for n in 0..2 {
                sequences += 1;
                let mut last: Option<Limit> = None;
                for i in 0..grid.n_q {
                    if p.volume_index(i, s, n) == 0 {
                        continue;
                    }
                    let lim = p.limit(i, s, n);
                    if let Some(prev) = last {
                        if lim > prev {
                            violations += 1;
                        }
                    }
                    last = Some(lim);
                }
            }
        }
    }
    check(violations == 0, format!("{sequences} (t, state, venue) sequences, {violations} increases of p in q"))
}

fn solver_runtime(shared: &Shared) -> Check {
    let secs = shared.symmetric_time.as_secs_f64();
    check(secs <= 120.0, format!("paper grid, one thread: {secs:.2}s"))
}

fn conjugacy() -> Check {
    let start = Instant::now();
    let mut r = rng::stream(3, "acceptance-conjugacy", 0);
    let mut uniform = move || rng::uniform_open0(&mut r);
    let mut failures = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    let obs: Vec<(u64, f64)> = (0..50).map(|_| ((uniform() * 7.0) as u64, uniform() * 3.0)).collect();
    let g0 = GammaPrior::new(2.0, 0.5).unwrap();
    let seq = obs.iter().fold(g0, |g, (c, e)| g.update(*c, *e).unwrap());
    let (n, e) = obs.iter().fold((0, 0.0), |(n, e), (c, x)| (n + c, e + x));
    let batch = g0.update(n, e).unwrap();
    expect("gamma", seq.alpha == batch.alpha && rel_close(seq.beta, batch.beta, 1e-12));

    let rfq = obs.iter().fold(g0, |g, (c, e)| update_rfq_intensity(&g, *c, *e).unwrap().0);
    let (rfq_batch, _) = update_rfq_intensity(&g0, n, e).unwrap();
    expect("rfq", rfq.alpha == rfq_batch.alpha && rel_close(rfq.beta, rfq_batch.beta, 1e-12));

    let d0 = DirichletPrior::new(vec![0.3, 1.2, 2.0]).unwrap();
    let counts: Vec<Vec<u64>> = (0..40).map(|_| (0..3).map(|_| (uniform() * 5.0) as u64).collect()).collect();
    let seq = counts.iter().fold(d0.clone(), |d, c| d.update(c).unwrap());
    let total: Vec<u64> = (0..3).map(|k| counts.iter().map(|c| c[k]).sum()).collect();
    expect("dirichlet", seq == d0.update(&total).unwrap());

    let chain0 = ChainPrior::centered(&presets::imbalance_generator(), 1.0, 10.0, CtmcEstimator::Mode).unwrap();
    let mut merged = ChainStats::zeros(3);
    let mut seq = chain0.clone();
    for _ in 0..30 {
        let mut st = ChainStats::zeros(3);
        for a in 0..3 {
            st.holding[a] = uniform() * 2.0;
            for b in 0..3 {
                if a != b {
                    st.counts[a][b] = (uniform() * 4.0) as u64;
                }
            }
        }
        seq = seq.update(&st).unwrap();
        merged.merge(&st);
    }
    let batch = chain0.update(&merged).unwrap();
    let chain_ok = seq.transitions == batch.transitions
        && seq
            .holding
            .iter()
            .zip(&batch.holding)
            .all(|(a, b)| a.alpha == b.alpha && rel_close(a.beta, b.beta, 1e-12));
    expect("ctmc", chain_ok);

    let incs: Vec<(f64, f64)> = (0..60).map(|_| (uniform() - 0.5, 0.05 + uniform())).collect();
    let nig0 = NigPrior {
        mu0: 0.1,
        nu: 0.5,
        alpha: 3.0,
        beta: 0.2,
    };
    let mut stats = DriftStats::default();
    let mut seq = nig0;
    for (x, t) in &incs {
        let inc = DriftStats::increment(*x, *t).unwrap();
        seq = seq.update(&inc);
        stats.merge(&inc);
    }
    let batch = nig0.update(&stats);
    expect(
        "nig",
        rel_close(seq.mu0, batch.mu0, 1e-12)
            && rel_close(seq.nu, batch.nu, 1e-12)
            && rel_close(seq.alpha, batch.alpha, 1e-12)
            && rel_close(seq.beta, batch.beta, 1e-12),
    );

    let normal0 = NormalDriftPrior {
        mu0: 0.1,
        nu: 0.02,
        sigma: 0.05,
    };
    let seq = incs.iter().fold(normal0, |p, (x, t)| p.update(*x, *t));
    let batch = normal0.update(stats.displacement, stats.time);
    expect("normal", rel_close(seq.mu0, batch.mu0, 1e-12) && rel_close(seq.nu, batch.nu, 1e-12));

    let size0 = SizeScalePrior::new(2.0, 3.0, 1.5).unwrap();
    let sizes: Vec<f64> = (0..80).map(|_| 0.1 + 10.0 * uniform()).collect();
    let seq = sizes.chunks(7).fold(size0, |p, c| update_size_scale(&p, c).unwrap().0);
    let (batch, _) = update_size_scale(&size0, &sizes).unwrap();
    expect("size", seq.a0 == batch.a0 && rel_close(seq.b0, batch.b0, 1e-12));

    let psi = Matrix::from_rows(&[vec![0.5, 0.1, 0.0], vec![0.1, 0.4, 0.05], vec![0.0, 0.05, 0.3]]).unwrap();
    let niw0 = NiwPrior::new(vec![0.1, -0.2, 0.0], 2.0, 6.0, psi).unwrap();
    let moves: Vec<(Vec<f64>, f64)> = (0..40)
        .map(|_| ((0..3).map(|_| uniform() - 0.5).collect(), 0.1 + 2.0 * uniform()))
        .collect();
    for variant in [NiwVariant::Printed, NiwVariant::Standard] {
        let mut seq = niw0.clone();
        let mut st = NiwStats::zeros(3);
        for (x, t) in &moves {
            seq = seq.update(x, *t, variant).unwrap();
            st.push(x, *t).unwrap();
        }
        let batch = niw0.update_batch(&st, variant).unwrap();
        let scale = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| batch.psi.get(i, j).abs()).fold(1.0, f64::max);
        let psi_ok = (0..3).all(|i| (0..3).all(|j| (seq.psi.get(i, j) - batch.psi.get(i, j)).abs() <= 1e-12 * scale));
        let ok = psi_ok
            && rel_close(seq.kappa0, batch.kappa0, 1e-12)
            && rel_close(seq.nu0, batch.nu0, 1e-12)
            && seq.mu0.iter().zip(&batch.mu0).all(|(a, b)| rel_close(*a, *b, 1e-12));
        expect(if variant == NiwVariant::Printed { "niw (printed)" } else { "niw (standard)" }, ok);
    }

    let elapsed = start.elapsed();
    let ok = failures.is_empty() && elapsed < Duration::from_secs(1);
    let detail = if failures.is_empty() {
        format!("gamma, dirichlet, ctmc, nig, normal, rfq, size, niw x2 agree; {:.3}s", elapsed.as_secs_f64())
    } else {
        format!("disagree: {}", failures.join(", "))
    };
    check(ok, detail)
}

fn chain_stats(matrix: &RateMatrix, jumps: &[(f64, usize, usize)], initial: usize, end: f64) -> ChainStats {
    let mut st = ChainStats::zeros(matrix.size());
    let (mut cur, mut since) = (initial, 0.0);
    for &(t, from, to) in jumps {
        assert_eq!(from, cur);
        st.holding[cur] += t - since;
        st.counts[cur][to] += 1;
        cur = to;
        since = t;
    }
    st.holding[cur] += end - since;
    st
}

fn ctmc_calibration() -> Check {
    let minutes = 2000.0;
    let mut worst: f64 = 0.0;
    for (idx, truth) in [presets::spread_generator(), presets::imbalance_generator()].iter().enumerate() {
        let size = truth.size();
        let flat = RateMatrix::from_decomposition(&vec![1.0; size], &(0..size)
            .map(|a| (0..size).map(|b| if a == b { 0.0 } else { 1.0 / (size - 1) as f64 }).collect())
            .collect::<Vec<_>>())
        .unwrap();
        let prior = ChainPrior::centered(&flat, 1.0, 10.0, CtmcEstimator::Mode).unwrap();
        let mut r = rng::stream(21, "acceptance-ctmc", idx as u64);
        let jumps = simulate_chain(truth, 0, 0.0, minutes, &mut r);
        let post = prior.update(&chain_stats(truth, &jumps, 0, minutes)).unwrap();
        let est = post.estimate(CtmcEstimator::Mode).unwrap();
        for a in 0..size {
            for b in 0..size {
                worst = worst.max((est.rate(a, b) - truth.rate(a, b)).abs() / truth.rate(a, b).abs());
            }
        }
    }
    check(worst <= 0.15, format!("2000 min, flat prior, worst relative error {:.2}%", 100.0 * worst))
}

fn run_config(truth: MarketSpec, prior: PriorSet, grid: SliceGrid, slices: usize, horizon: f64, seed: u64, options: SimOptions) -> RunConfig {
    let initial_state = truth.joint_state_index(&[0, 0], &[1, 1]).unwrap();
    RunConfig {
        n_slices: slices,
        grid,
        penalty: penalty(),
        curve: CurveParams {
            horizon,
            ..presets::curve()
        },
        curve_mode: CurveMode::Global,
        truth,
        prior,
        learn: true,
        initial_state,
        seed,
        options,
    }
}

fn drift_recovery() -> Check {
    let truth = presets::two_venue(price(-0.5), 1.0).unwrap();
    let drift = DriftPrior::Normal(NormalDriftPrior {
        mu0: 0.1,
        nu: 0.02,
        sigma: 0.05,
    });
    let prior = PriorSet::centered_on(&truth, PriorWeights::default(), drift, ProportionPooling::Venue, CtmcEstimator::Mode).unwrap();
    let grid = SliceGrid::new(3, 2, 10, 1.0, 5e4).unwrap();
    let mut hits = 0;
    let mut mean = 0.0;
    for seed in 0..100 {
        let cfg = run_config(truth.clone(), prior.clone(), grid.clone(), 20, 20.0, seed, SimOptions::default());
        let report = engine::run(&cfg).unwrap();
        let (mu, _) = report.slices[19].posterior.drift.estimate().unwrap();
        mean += mu / 100.0;
        if (mu + 0.5).abs() <= 0.1 {
            hits += 1;
        }
    }
    check(hits >= 90, format!("{hits}/100 seeds within 0.1 of -0.5; mean estimate {mean:.4}"))
}

fn proportion_recovery() -> Check {
    let wrong = vec![0.5, 0.5];
    let right = presets::PROPORTION_PRIOR.to_vec();
    let believed = paper_spec(1.0);
    let truth = believed
        .with_proportions(ProportionTable::per_venue(presets::OMEGA.to_vec(), &[wrong.clone(), right.clone()], 36))
        .unwrap();
    let weights = PriorWeights {
        proportions: 2.0,
        ..PriorWeights::default()
    };
    let drift = DriftPrior::Normal(NormalDriftPrior {
        mu0: 0.0,
        nu: 0.02,
        sigma: 0.05,
    });
    let prior = PriorSet::centered_on(&believed, weights, drift, ProportionPooling::Venue, CtmcEstimator::Mode).unwrap();
    let grid = SliceGrid::new(21, 11, 10, 1.0, 5e4).unwrap();
    let options = SimOptions { multi_fill: true };
    let mut hits = 0;
    let mut fills = 0;
    for seed in 0..100 {
        let cfg = run_config(truth.clone(), prior.clone(), grid.clone(), 2, 10.0, seed, options);
        let report = engine::run(&cfg).unwrap();
        let post = &report.slices[1].posterior;
        fills += report.slices.iter().map(|s| s.stats.total_fills()).sum::<u64>();
        let ok = [&wrong, &right]
            .iter()
            .enumerate()
            .all(|(v, truth)| (post.proportions[v].mean()[0] - truth[0]).abs() <= 0.15);
        if ok {
            hits += 1;
        }
    }
    check(
        hits >= 80,
        format!("{hits}/100 seeds within 0.15 after 2 slices; {:.1} fills per run", fills as f64 / 100.0),
    )
}

fn simulator_statistics() -> Check {
    let spec = presets::two_venue(price(-0.5), 1.0).unwrap();
    let initial = spec.joint_state_index(&[0, 0], &[1, 1]).unwrap();
    let mut failures = Vec::new();

    let path = simulate_ctmc(&spec, initial, 0.0, 1000.0, 11, 0).unwrap();
    let decoded = spec.decode_state(initial).unwrap();
    for (c, process) in spec.generator().processes(2).into_iter().enumerate() {
        let matrix = spec.generator().matrix(process).unwrap();
        let size = matrix.size();
        let mut cur = if c < 2 { decoded.spreads[c] } else { decoded.imbalances[c - 2] };
        let mut since = 0.0;
        let mut durations = vec![Vec::new(); size];
        let mut counts = vec![vec![0u64; size]; size];
        for tr in path.iter().filter(|t| t.process == process) {
            durations[cur].push(tr.time - since);
            counts[cur][tr.to] += 1;
            cur = tr.to;
            since = tr.time;
        }
        for k in 0..size {
            let n = durations[k].len() as f64;
            let mean = durations[k].iter().sum::<f64>() / n;
            let expected = 1.0 / matrix.exit_rate(k);
            if (mean - expected).abs() > 3.0 * expected / n.sqrt() {
                failures.push(format!("holding {process:?}[{k}] {mean:.4} vs {expected:.4}"));
            }
            let jumps = matrix.jump_probabilities(k);
            for to in 0..size {
                let p = jumps[to];
                let freq = counts[k][to] as f64 / n;
                let se = (p * (1.0 - p) / n).sqrt();
                if (freq - p).abs() > 3.0 * se + 1e-12 {
                    failures.push(format!("jump {process:?}[{k}->{to}] {freq:.4} vs {p:.4}"));
                }
            }
        }
    }

    let grid = SliceGrid::new(21, 11, 10, 1.0, 5e4).unwrap();
    let (_, policy) = solve(&spec, &grid);
    let (mut fills, mut compensator) = (0usize, 0.0);
    let mut increments = Vec::new();
    let mut slice = 0u64;
    while fills < 10_000 {
        let log = simulate_slice(SliceRun {
            spec: &spec,
            grid: &grid,
            policy: &policy,
            inventory: 5e4,
            state: initial,
            price: 100.0,
            start_time: 0.0,
            seed: 11,
            stream_index: slice,
            options: SimOptions { multi_fill: true },
        })
        .unwrap();
        fills += log.fills.len();
        for n in 0..2 {
            for m in 0..spec.n_regimes() {
                for p in Limit::ALL {
                    compensator += spec.base_rate(n, m, p) * log.exposure(n, m, p);
                }
            }
        }
        for w in log.prices.windows(2) {
            increments.push(w[1].1 - w[0].1);
        }
        slice += 1;
    }
    let z_fill = (fills as f64 - compensator) / compensator.sqrt();
    if z_fill.abs() > 3.0 {
        failures.push(format!("fills {fills} vs {compensator:.1}"));
    }
    let n = increments.len() as f64;
    let mean = increments.iter().sum::<f64>() / n;
    let expected = -0.5 * grid.dt;
    let tol = 3.0 * 0.05 * grid.dt.sqrt() / n.sqrt();
    if (mean - expected).abs() > tol {
        failures.push(format!("price increment mean {mean:.3e} vs {expected:.3e}"));
    }
    let detail = format!(
        "{} transitions, {fills} fills (z = {z_fill:.2}), {} price increments (mean {mean:.5} vs {expected:.5})",
        path.len(),
        increments.len()
    );
    if failures.is_empty() {
        check(true, detail)
    } else {
        check(false, format!("{detail}; outside 3 SE: {}", failures.join("; ")))
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn end_to_end_determinism() -> Check {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper.toml");
    let tmp = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let code = xvenue::cli::main([
            "xvenue".as_ref(),
            "-q".as_ref(),
            "-c".as_ref(),
            config.as_os_str(),
            "--output-dir".as_ref(),
            out.as_os_str(),
            "run".as_ref(),
            "--seed".as_ref(),
            "7".as_ref(),
        ] as [&std::ffi::OsStr; 9]);
        if code != 0 {
            return check(false, format!("run exited with {code}"));
        }
        trees.push(tree(&out));
    }
    let files = trees[0].len();
    let bytes: usize = trees[0].values().map(Vec::len).sum();
    check(
        files > 0 && trees[0] == trees[1],
        format!("{files} files, {bytes} bytes, identical: {}", trees[0] == trees[1]),
    )
}

fn main() {
    let start = Instant::now();
    let grid = paper_grid();
    let spec = paper_spec(1.0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let solve_start = Instant::now();
    let symmetric = pool.install(|| solve(&spec, &grid));
    let shared = Shared {
        symmetric,
        symmetric_time: solve_start.elapsed(),
    };

    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Check + '_>)> = vec![
        (1, "zero-rate closed form", Box::new(zero_rate_oracle)),
        (2, "brute-force Bellman", Box::new(brute_force_bellman)),
        (3, "venue-swap symmetry", Box::new(|| swap_symmetry(&shared))),
        (4, "asymmetric-venue dominance", Box::new(|| asymmetric_dominance(&shared))),
        (5, "limit monotonicity", Box::new(|| limit_monotonicity(&shared))),
        (6, "solver runtime", Box::new(|| solver_runtime(&shared))),
        (7, "conjugacy coherence", Box::new(conjugacy)),
        (8, "CTMC calibration", Box::new(ctmc_calibration)),
        (9, "drift recovery", Box::new(drift_recovery)),
        (10, "proportion recovery", Box::new(proportion_recovery)),
        (11, "simulator statistics", Box::new(simulator_statistics)),
        (12, "end-to-end determinism", Box::new(end_to_end_determinism)),
    ];

    let mut unexpected = Vec::new();
    for (id, name, run) in &criteria {
        let c = run();
        let tag = if c.pass { "PASS" } else { "FAIL" };
        let note = if !c.pass && KNOWN_FAILURES.contains(id) { " (known)" } else { "" };
        println!("criterion {id:>2} {tag}{note}: {name}: {}", c.detail);
        if !c.pass && !KNOWN_FAILURES.contains(id) {
            unexpected.push(*id);
        }
    }
    println!("acceptance finished in {:.1}s", start.elapsed().as_secs_f64());
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
