//! Subcommand implementations. Every command computes its results in memory
//! and only then writes files, so a failure leaves no partial outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use xvenue_core::bayes::{Beliefs, SliceStats};
use xvenue_core::curve::{CurveMode, Schedule};
use xvenue_core::engine::{self, RunReport};
use xvenue_core::otc::{FillProbability, OtcPriors, OtcStats};
use xvenue_core::solver::{SliceProblem, Solver};

use crate::cache::SolveCache;
use crate::config::{prior_file, GammaSection, NiwSection, OneOrMany, OtcSection, Overrides, Resolved, SizeSection};
use crate::error::CliError;
use crate::io::{self, num, Table};

/// Files produced by a command, keyed by path relative to the output directory.
pub type Outputs = BTreeMap<PathBuf, Vec<u8>>;

pub fn write_outputs(dir: &Path, outputs: &Outputs) -> Result<(), CliError> {
    for (rel, bytes) in outputs {
        io::write_file(&dir.join(rel), bytes)?;
    }
    Ok(())
}

fn warn_grid(cfg: &Resolved) -> Result<(), CliError> {
    let spec = cfg.market()?;
    let grid = cfg.grid(None)?;
    if grid.requires_interpolation(&spec.proportions().omega) {
        log::warn!("executed volumes fall between inventory grid points; values are interpolated linearly in q");
    }
    Ok(())
}

pub fn curve(cfg: &Resolved, points: usize) -> Result<Outputs, CliError> {
    let c = cfg.curve()?;
    if points < 2 {
        return Err(CliError::Config {
            path: "--points".into(),
            message: "need at least 2 points".into(),
        });
    }
    let schedule = Schedule::global(c.params())?;
    let mut table = Table::new(&["t", "q"]);
    for i in 0..points {
        let t = c.horizon * i as f64 / (points - 1) as f64;
        table.row([num(t), num(schedule.at(t))]);
    }
    Ok(BTreeMap::from([(PathBuf::from("curve.csv"), table.into_bytes())]))
}

pub fn solve(cfg: &Resolved, overrides: &Overrides, slice: usize) -> Result<Outputs, CliError> {
    warn_grid(cfg)?;
    let run = cfg.run_config(overrides)?;
    let believed = run.prior.believed_spec(&run.truth)?;
    let start_time = slice as f64 * run.grid.slice_length;
    if start_time >= run.curve.horizon {
        return Err(CliError::Config {
            path: "--slice".into(),
            message: format!("slice {slice} starts after the horizon"),
        });
    }
    let schedule = match run.curve_mode {
        CurveMode::Global => Schedule::global(run.curve)?,
        CurveMode::Renormalized => Schedule::renormalized(run.curve, start_time, run.curve.q0)?,
    };
    let problem = SliceProblem {
        spec: &believed,
        grid: &run.grid,
        penalty: run.penalty,
        schedule: &schedule,
        start_time,
    };
    let (values, policy) = match &cfg.run_section().cache_dir {
        Some(dir) => SolveCache::new(cfg.base_dir.join(dir)).solve(problem)?,
        None => Solver::new(problem)?.solve()?,
    };
    log::info!("solved slice {slice} with {} Euler sub-steps per decision interval", values.substeps());
    let csv = io::value_policy_csv(&believed, &run.grid, &values, &policy)?;
    Ok(BTreeMap::from([(PathBuf::from("value_policy.csv"), csv)]))
}

fn slice_tables(report: &RunReport) -> (Vec<u8>, Vec<u8>) {
    let mut inventory = Table::new(&["slice", "t", "q"]);
    let mut summary = Table::new(&[
        "slice",
        "start_time",
        "q_start",
        "q_end",
        "cash",
        "value_at_start",
        "fills",
        "market_orders",
        "transitions",
        "end_price",
        "substeps",
    ]);
    for s in &report.slices {
        for (t, q) in &s.log.inventory {
            inventory.row([s.index.to_string(), num(*t), num(*q)]);
        }
        summary.row([
            s.index.to_string(),
            num(s.start_time),
            num(s.q_start),
            num(s.q_end),
            num(s.cash),
            num(s.value_at_start),
            s.log.fills.len().to_string(),
            s.log.market_orders.len().to_string(),
            s.log.transitions.len().to_string(),
            num(s.log.prices.last().map_or(f64::NAN, |p| p.1)),
            s.substeps.to_string(),
        ]);
    }
    (inventory.into_bytes(), summary.into_bytes())
}

fn execute(cfg: &Resolved, overrides: &Overrides) -> Result<(engine::RunConfig, RunReport, BTreeMap<usize, Vec<u8>>), CliError> {
    warn_grid(cfg)?;
    let run = cfg.run_config(overrides)?;
    let wanted = cfg.run_section().output_slices;
    let mut tables = BTreeMap::new();
    let mut table_error = None;
    let mut cache = cfg.run_section().cache_dir.map(|d| SolveCache::new(cfg.base_dir.join(d)));
    let mut cache_error = None;
    let report = engine::run_with(
        &run,
        |p| match cache.as_mut() {
            None => Solver::new(p)?.solve(),
            Some(c) => c.solve(p).map_err(|e| {
                let msg = e.to_string();
                cache_error = Some(e);
                xvenue_core::Error::Degenerate(msg)
            }),
        },
        |view| {
            if wanted.contains(&view.index) {
                match io::value_policy_csv(view.believed, view.grid, view.values, view.policy) {
                    Ok(csv) => {
                        tables.insert(view.index, csv);
                    }
                    Err(e) => table_error = Some(e),
                }
            }
        },
    );
    if let Some(e) = cache_error {
        return Err(e);
    }
    let report = report?;
    if let Some(e) = table_error {
        return Err(e);
    }
    for s in &report.slices {
        if let Some(from) = s.log.snapped_from {
            log::warn!("slice {}: inventory {from} snapped to grid point {}", s.index, s.q_start);
        }
    }
    Ok((run, report, tables))
}

pub fn simulate(cfg: &Resolved, overrides: &Overrides) -> Result<Outputs, CliError> {
    let overrides = Overrides {
        slices: Some(1),
        ..overrides.clone()
    };
    let (_, report, _) = execute(cfg, &overrides)?;
    let (inventory, summary) = slice_tables(&report);
    let log = &report.slices[0].log;
    Ok(BTreeMap::from([
        (PathBuf::from("events/slice_000.jsonl"), io::event_log_jsonl(log)),
        (PathBuf::from("inventory.csv"), inventory),
        (PathBuf::from("slices.csv"), summary),
    ]))
}

fn trace_rows(table: &mut Table, label: String, estimates: &[(String, f64)]) {
    for (name, x) in estimates {
        table.row([label.clone(), name.clone(), num(*x)]);
    }
}

pub fn run(cfg: &Resolved, overrides: &Overrides) -> Result<Outputs, CliError> {
    let (config, report, tables) = execute(cfg, overrides)?;
    let mut out = Outputs::new();
    let mut trace = Table::new(&io::trace_header());
    for s in &report.slices {
        out.insert(PathBuf::from(format!("events/slice_{:03}.jsonl", s.index)), io::event_log_jsonl(&s.log));
        trace_rows(&mut trace, s.index.to_string(), &io::estimates(&s.posterior, &config.truth)?);
    }
    for (v, csv) in tables {
        out.insert(PathBuf::from(format!("value_policy/slice_{v:03}.csv")), csv);
    }
    let (inventory, summary) = slice_tables(&report);
    out.insert(PathBuf::from("posterior_trace.csv"), trace.into_bytes());
    out.insert(PathBuf::from("inventory.csv"), inventory);
    out.insert(PathBuf::from("slices.csv"), summary);
    let last = report.slices.last().expect("at least one slice");
    out.insert(PathBuf::from("posterior.toml"), prior_file(&last.posterior)?.into_bytes());
    Ok(out)
}

pub fn calibrate(cfg: &Resolved, events: &[PathBuf]) -> Result<Outputs, CliError> {
    let template = cfg.market()?;
    let prior = cfg.prior(&template)?;
    let mut beliefs = Beliefs::new(prior.clone(), &template)?;
    let mut trace = Table::new(&io::trace_header());
    let mut index = 0usize;
    let mut posterior = prior;
    for path in events {
        let text = io::read_file(path)?;
        for log in io::parse_event_logs(&text, path)? {
            let stats = SliceStats::from_log(&template, &log).map_err(|e| CliError::Io {
                path: path.display().to_string(),
                message: format!("event log does not fit the configured market: {e}"),
            })?;
            beliefs.observe(&stats);
            posterior = beliefs.posterior()?;
            trace_rows(&mut trace, index.to_string(), &io::estimates(&posterior, &template)?);
            index += 1;
        }
    }
    log::info!("calibrated on {index} slices");
    Ok(BTreeMap::from([
        (PathBuf::from("posterior.toml"), prior_file(&posterior)?.into_bytes()),
        (PathBuf::from("calibration_trace.csv"), trace.into_bytes()),
    ]))
}

struct QuoteClock {
    delta: Option<f64>,
    since: f64,
}

fn otc_estimates(post: &OtcPriors) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (i, g) in post.rfq.iter().enumerate() {
        out.push((format!("lambda_rfq.a{}.{}", i / 2, side_name(i % 2)), g.mean()));
    }
    for (i, s) in post.size.iter().enumerate() {
        out.push((format!("size_rate.a{}.{}", i / 2, side_name(i % 2)), s.mean()));
    }
    for (i, m) in post.niw.mu0.iter().enumerate() {
        out.push((format!("mu.a{i}"), *m));
    }
    if let Ok((_, sigma)) = post.niw.estimate() {
        for i in 0..sigma.dim() {
            for j in 0..sigma.dim() {
                out.push((format!("sigma.a{i}.a{j}"), sigma.get(i, j)));
            }
        }
    }
    out
}

fn side_name(i: usize) -> &'static str {
    if i == 0 {
        "bid"
    } else {
        "ask"
    }
}

fn otc_section(post: &OtcPriors, f: FillProbability) -> OtcSection {
    OtcSection {
        assets: post.niw.dim(),
        variant: post.variant,
        fill_probability: f,
        rfq_prior: OneOrMany::Many(post.rfq.iter().map(|g| GammaSection { alpha: g.alpha, beta: g.beta }).collect()),
        size_prior: OneOrMany::Many(
            post.size
                .iter()
                .map(|s| SizeSection {
                    shape: s.shape,
                    a0: s.a0,
                    b0: s.b0,
                })
                .collect(),
        ),
        niw: NiwSection {
            mu0: post.niw.mu0.clone(),
            kappa0: post.niw.kappa0,
            nu0: post.niw.nu0,
            psi: post.niw.psi.rows(),
        },
    }
}

/// Sufficient statistics of an RFQ log. The quote in force on a side is the
/// `delta` of its latest `quote` or `rfq` record; time before the first one
/// carries no exposure. Only filled requests count as executions, every
/// request contributes its size.
pub fn otc_stats(records: &[io::OtcRecord], d: usize, f: &FillProbability, mut at_price: impl FnMut(f64, &OtcStats)) -> Result<OtcStats, CliError> {
    let mut stats = OtcStats::zeros(d);
    let mut clocks: Vec<QuoteClock> = (0..2 * d).map(|_| QuoteClock { delta: None, since: 0.0 }).collect();
    let mut last_prices: Option<(f64, Vec<f64>)> = None;
    let check = |asset: usize| {
        if asset >= d {
            Err(CliError::Io {
                path: "otc log".into(),
                message: format!("asset {asset} out of range for {d} assets"),
            })
        } else {
            Ok(())
        }
    };
    let advance = |clocks: &mut Vec<QuoteClock>, stats: &mut OtcStats, time: f64| {
        for (i, c) in clocks.iter_mut().enumerate() {
            if let Some(delta) = c.delta {
                stats.exposure[i] += (time - c.since) * f.eval(delta);
            }
            c.since = time;
        }
    };
    for rec in records {
        advance(&mut clocks, &mut stats, rec.time());
        match rec {
            io::OtcRecord::Rfq {
                asset,
                side,
                size,
                delta,
                filled,
                ..
            } => {
                check(*asset)?;
                if !(*size > 0.0 && size.is_finite()) {
                    return Err(CliError::Io {
                        path: "otc log".into(),
                        message: format!("request size must be positive, got {size}"),
                    });
                }
                let i = asset * 2 + side.index();
                if *filled {
                    stats.executions[i] += 1;
                }
                stats.sizes[i] += 1;
                stats.size_total[i] += size;
                clocks[i].delta = Some(*delta);
            }
            io::OtcRecord::Quote { asset, side, delta, .. } => {
                check(*asset)?;
                clocks[asset * 2 + side.index()].delta = Some(*delta);
            }
            io::OtcRecord::Prices { time, prices } => {
                if prices.len() != d {
                    return Err(CliError::Io {
                        path: "otc log".into(),
                        message: format!("expected {d} prices, got {}", prices.len()),
                    });
                }
                if let Some((t0, p0)) = &last_prices {
                    if time > t0 {
                        let x: Vec<f64> = prices.iter().zip(p0).map(|(a, b)| a - b).collect();
                        stats.prices.push(&x, time - t0)?;
                    }
                }
                last_prices = Some((*time, prices.clone()));
                at_price(*time, &stats);
            }
            io::OtcRecord::End { .. } => {}
        }
    }
    Ok(stats)
}

pub fn otc_calibrate(cfg: &Resolved, log_path: &Path) -> Result<Outputs, CliError> {
    let (priors, f) = cfg.otc()?;
    let records = io::parse_otc_log(&io::read_file(log_path)?, log_path)?;
    let d = priors.niw.dim();
    let mut trace = Table::new(&["time", "parameter", "estimate"]);
    let mut failure = None;
    let stats = otc_stats(&records, d, &f, |time, s| match priors.update(s) {
        Ok(post) => {
            for (name, x) in otc_estimates(&post) {
                trace.row([num(time), name, num(x)]);
            }
        }
        Err(e) => failure = Some(e),
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    let post = priors.update(&stats)?;
    let file = crate::config::ConfigFile {
        otc: Some(otc_section(&post, f)),
        ..Default::default()
    };
    let text = toml::to_string(&file).map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok(BTreeMap::from([
        (PathBuf::from("otc_posterior.toml"), text.into_bytes()),
        (PathBuf::from("otc_trace.csv"), trace.into_bytes()),
    ]))
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header = reader.headers().map_err(|e| CliError::io(path, e))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for r in reader.records() {
        rows.push(r.map_err(|e| CliError::io(path, e))?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

/// Figure-ready tables from a finished `run` directory.
///
/// * `value_vs_q.csv`: slice, t, spreads, imbalances, q, v
/// * `limit_vs_q.csv`: slice, t, spreads, imbalances, q, venue, limit (only where the venue posts)
/// * `volume_vs_q.csv`: slice, t, spreads, imbalances, q, venue, volume
/// * `estimates_vs_slice.csv`: slice, parameter, estimate
/// * `drift_trace.csv`: slice, mu
pub fn plot_data(run_dir: &Path) -> Result<Outputs, CliError> {
    let trace_path = run_dir.join("posterior_trace.csv");
    let vp_dir = run_dir.join("value_policy");
    if !trace_path.is_file() {
        return Err(CliError::io(&trace_path, "missing; is this a finished run directory?"));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&vp_dir)
        .map_err(|e| CliError::io(&vp_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::io(&vp_dir, "no value/policy tables"));
    }

    let mut value = None;
    let mut limit = None;
    let mut volume = None;
    for path in &files {
        let slice: usize = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_prefix("slice_"))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::io(path, "expected a name of the form slice_NNN.csv"))?;
        let (header, rows) = read_csv(path)?;
        let n = header.iter().filter(|h| h.starts_with("l_")).count();
        let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| CliError::io(path, format!("missing column {name}")));
        let state_cols: Vec<usize> = (1..=n)
            .map(|i| col(&format!("spread_{i}")))
            .chain((1..=n).map(|i| col(&format!("imbalance_{i}"))))
            .collect::<Result<_, _>>()?;
        let (ct, cq, cv) = (col("t")?, col("q")?, col("v")?);
        let state_names: Vec<String> = state_cols.iter().map(|c| header[*c].clone()).collect();
        let mut head = vec!["slice".to_string(), "t".into()];
        head.extend(state_names.iter().cloned());
        head.push("q".into());
        let value_t = value.get_or_insert_with(|| Table::new(&[head.clone(), vec!["v".into()]].concat()));
        for r in &rows {
            let mut row = vec![slice.to_string(), r[ct].clone()];
            row.extend(state_cols.iter().map(|c| r[*c].clone()));
            row.push(r[cq].clone());
            row.push(r[cv].clone());
            value_t.row(row);
        }
        let limit_t = limit.get_or_insert_with(|| Table::new(&[head.clone(), vec!["venue".into(), "limit".into()]].concat()));
        for r in &rows {
            for v in 1..=n {
                let l: f64 = r[col(&format!("l_{v}"))?].parse().map_err(|_| CliError::io(path, "bad volume"))?;
                if l > 0.0 {
                    let mut row = vec![slice.to_string(), r[ct].clone()];
                    row.extend(state_cols.iter().map(|c| r[*c].clone()));
                    row.extend([r[cq].clone(), v.to_string(), r[col(&format!("p_{v}"))?].clone()]);
                    limit_t.row(row);
                }
            }
        }
        let volume_t = volume.get_or_insert_with(|| Table::new(&[head.clone(), vec!["venue".into(), "volume".into()]].concat()));
        for r in &rows {
            for v in 1..=n {
                let mut row = vec![slice.to_string(), r[ct].clone()];
                row.extend(state_cols.iter().map(|c| r[*c].clone()));
                row.extend([r[cq].clone(), v.to_string(), r[col(&format!("l_{v}"))?].clone()]);
                volume_t.row(row);
            }
        }
    }

    let (header, rows) = read_csv(&trace_path)?;
    if header != io::trace_header() {
        return Err(CliError::io(&trace_path, "unexpected header"));
    }
    let mut estimates = Table::new(&io::trace_header());
    let mut drift = Table::new(&["slice", "mu"]);
    for r in &rows {
        estimates.row(r);
        if r[1] == "mu" {
            drift.row([&r[0], &r[2]]);
        }
    }
    Ok(BTreeMap::from([
        (PathBuf::from("value_vs_q.csv"), value.expect("one table").into_bytes()),
        (PathBuf::from("limit_vs_q.csv"), limit.expect("one table").into_bytes()),
        (PathBuf::from("volume_vs_q.csv"), volume.expect("one table").into_bytes()),
        (PathBuf::from("estimates_vs_slice.csv"), estimates.into_bytes()),
        (PathBuf::from("drift_trace.csv"), drift.into_bytes()),
    ]))
}
