//! File formats: CSV tables, JSONL event logs, estimate traces.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use xvenue_core::bayes::{PriorSet, ProportionPooling};
use xvenue_core::market::{Generator, MarketSpec, Process};
use xvenue_core::simulator::{EventLog, Fill, MarketOrder, Transition};
use xvenue_core::solver::{Policy, SliceGrid, ValueFunction};
use xvenue_core::Limit;

use crate::error::CliError;

/// CSV with a header row, built in memory.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer
            .write_record(header.iter().map(|h| h.as_ref()))
            .expect("writing to memory");
        Table { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("writing to memory");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("writing to memory")
    }
}

/// Shortest decimal that parses back to `x`; negative zero prints as `0`.
pub fn num(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else {
        format!("{x}")
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Value and control at every decision time, inventory and state.
///
/// Columns: `t, q, spread_1..N, imbalance_1..N, v, l_1..N, p_1..N, m_1..N`
/// where `t` is the time inside the slice.
pub fn value_policy_csv(spec: &MarketSpec, grid: &SliceGrid, values: &ValueFunction, policy: &Policy) -> Result<Vec<u8>, CliError> {
    let n = spec.n_venues();
    let mut header = vec!["t".to_string(), "q".to_string()];
    header.extend((1..=n).map(|i| format!("spread_{i}")));
    header.extend((1..=n).map(|i| format!("imbalance_{i}")));
    header.push("v".into());
    for prefix in ["l", "p", "m"] {
        header.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    let mut table = Table::new(&header);
    for t in 0..grid.n_t {
        let ps = policy.slice(t);
        for state in 0..spec.n_states() {
            let decoded = spec.decode_state(state)?;
            for q in 0..grid.n_q {
                let c = ps.control(q, state, grid);
                let mut row = vec![num(grid.time(t)), num(grid.inventory(q))];
                row.extend(decoded.spreads.iter().map(|s| s.to_string()));
                row.extend(decoded.imbalances.iter().map(|s| s.to_string()));
                row.push(num(values.get(t, q, state)));
                row.extend(c.volumes.iter().map(|x| num(*x)));
                row.extend(c.limits.iter().map(|l| l.offset().to_string()));
                row.extend(c.market.iter().map(|x| num(*x)));
                table.row(row);
            }
        }
    }
    Ok(table.into_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Slice {
        start: f64,
        end: f64,
        initial_state: usize,
        initial_inventory: f64,
        snapped_from: Option<f64>,
        n_venues: usize,
        n_regimes: usize,
    },
    Transition(Transition),
    Fill(Fill),
    MarketOrder(MarketOrder),
    Price {
        time: f64,
        price: f64,
    },
    Inventory {
        time: f64,
        inventory: f64,
    },
    End {
        final_state: usize,
        final_inventory: f64,
        cash: f64,
        exposures: Vec<f64>,
    },
}

/// One JSON object per line: a `slice` header, the transitions, fills,
/// market orders, price and inventory samples, and an `end` record.
pub fn event_log_jsonl(log: &EventLog) -> Vec<u8> {
    let mut lines = vec![LogLine::Slice {
        start: log.start,
        end: log.end,
        initial_state: log.initial_state,
        initial_inventory: log.initial_inventory,
        snapped_from: log.snapped_from,
        n_venues: log.n_venues,
        n_regimes: log.n_regimes,
    }];
    lines.extend(log.transitions.iter().cloned().map(LogLine::Transition));
    lines.extend(log.fills.iter().cloned().map(LogLine::Fill));
    lines.extend(log.market_orders.iter().cloned().map(LogLine::MarketOrder));
    lines.extend(log.prices.iter().map(|&(time, price)| LogLine::Price { time, price }));
    lines.extend(log.inventory.iter().map(|&(time, inventory)| LogLine::Inventory { time, inventory }));
    lines.push(LogLine::End {
        final_state: log.final_state,
        final_inventory: log.final_inventory,
        cash: log.cash,
        exposures: log.exposures.clone(),
    });
    let mut out = Vec::new();
    for l in &lines {
        serde_json::to_writer(&mut out, l).expect("serialising to memory");
        out.push(b'\n');
    }
    out
}

/// Reads every slice contained in a JSONL stream.
pub fn parse_event_logs(text: &str, origin: &Path) -> Result<Vec<EventLog>, CliError> {
    let bad = |line: usize, msg: String| CliError::Io {
        path: format!("{}:{}", origin.display(), line + 1),
        message: msg,
    };
    let mut logs = Vec::new();
    let mut cur: Option<EventLog> = None;
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: LogLine = serde_json::from_str(raw).map_err(|e| bad(i, e.to_string()))?;
        match line {
            LogLine::Slice {
                start,
                end,
                initial_state,
                initial_inventory,
                snapped_from,
                n_venues,
                n_regimes,
            } => {
                if cur.is_some() {
                    return Err(bad(i, "slice header before the previous slice ended".into()));
                }
                cur = Some(EventLog {
                    start,
                    end,
                    initial_state,
                    final_state: initial_state,
                    initial_inventory,
                    final_inventory: initial_inventory,
                    snapped_from,
                    n_venues,
                    n_regimes,
                    transitions: Vec::new(),
                    fills: Vec::new(),
                    market_orders: Vec::new(),
                    prices: Vec::new(),
                    inventory: Vec::new(),
                    exposures: Vec::new(),
                    cash: 0.0,
                });
            }
            other => {
                let log = cur.as_mut().ok_or_else(|| bad(i, "record outside a slice".into()))?;
                match other {
                    LogLine::Transition(t) => log.transitions.push(t),
                    LogLine::Fill(f) => log.fills.push(f),
                    LogLine::MarketOrder(m) => log.market_orders.push(m),
                    LogLine::Price { time, price } => log.prices.push((time, price)),
                    LogLine::Inventory { time, inventory } => log.inventory.push((time, inventory)),
                    LogLine::End {
                        final_state,
                        final_inventory,
                        cash,
                        exposures,
                    } => {
                        log.final_state = final_state;
                        log.final_inventory = final_inventory;
                        log.cash = cash;
                        log.exposures = exposures;
                        logs.push(cur.take().expect("open slice"));
                    }
                    LogLine::Slice { .. } => unreachable!(),
                }
            }
        }
    }
    if cur.is_some() {
        return Err(bad(text.lines().count().saturating_sub(1), "slice without an end record".into()));
    }
    Ok(logs)
}

fn limit_label(l: Limit) -> &'static str {
    match l {
        Limit::NewBest => "-1",
        Limit::Best => "0",
        Limit::Second => "1",
    }
}

fn process_label(p: Process) -> String {
    match p {
        Process::Spread(n) => format!("spread.v{n}"),
        Process::Imbalance(n) => format!("imbalance.v{n}"),
        Process::Joint => "joint".into(),
    }
}

/// Point estimates under `prior`, named
/// `lambda.v{n}.m{regime}.p{limit}`, `rho.v{n}[.m{regime}.p{limit}].r{k}`,
/// `exit.{chain}.k{state}`, `jump.{chain}.k{from}.k{to}`, `mu` and `sigma`.
pub fn estimates(prior: &PriorSet, template: &MarketSpec) -> Result<Vec<(String, f64)>, CliError> {
    let believed = prior.believed_spec(template)?;
    let mut out = Vec::new();
    let n = believed.n_venues();
    let m = believed.n_regimes();
    for v in 0..n {
        for reg in 0..m {
            for p in Limit::ALL {
                out.push((format!("lambda.v{v}.m{reg}.p{}", limit_label(p)), believed.base_rate(v, reg, p)));
            }
        }
    }
    for v in 0..n {
        match prior.pooling {
            ProportionPooling::Venue => {
                for (k, x) in believed.proportion_probs(v, 0, Limit::NewBest).iter().enumerate() {
                    out.push((format!("rho.v{v}.r{k}"), *x));
                }
            }
            ProportionPooling::Full => {
                for reg in 0..m {
                    for p in Limit::ALL {
                        for (k, x) in believed.proportion_probs(v, reg, p).iter().enumerate() {
                            out.push((format!("rho.v{v}.m{reg}.p{}.r{k}", limit_label(p)), *x));
                        }
                    }
                }
            }
        }
    }
    let g: &Generator = believed.generator();
    for process in g.processes(n) {
        let r = g.matrix(process).expect("process of generator");
        let name = process_label(process);
        for k in 0..r.size() {
            out.push((format!("exit.{name}.k{k}"), r.exit_rate(k)));
        }
        for k in 0..r.size() {
            for j in 0..r.size() {
                if j != k {
                    out.push((format!("jump.{name}.k{k}.k{j}"), r.rate(k, j)));
                }
            }
        }
    }
    out.push(("mu".into(), believed.price().mu));
    out.push(("sigma".into(), believed.price().sigma));
    Ok(out)
}

pub fn trace_header() -> [&'static str; 3] {
    ["slice", "parameter", "estimate"]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OtcRecord {
    /// A request for quote, answered at distance `delta`.
    Rfq {
        time: f64,
        asset: usize,
        side: xvenue_core::otc::Side,
        size: f64,
        delta: f64,
        filled: bool,
    },
    /// A standing quote update without a request.
    Quote {
        time: f64,
        asset: usize,
        side: xvenue_core::otc::Side,
        delta: f64,
    },
    /// Mid prices of every asset.
    Prices { time: f64, prices: Vec<f64> },
    /// Marks the end of the observation window.
    End { time: f64 },
}

impl OtcRecord {
    pub fn time(&self) -> f64 {
        match self {
            OtcRecord::Rfq { time, .. } | OtcRecord::Quote { time, .. } | OtcRecord::Prices { time, .. } | OtcRecord::End { time } => *time,
        }
    }
}

pub fn parse_otc_log(text: &str, origin: &Path) -> Result<Vec<OtcRecord>, CliError> {
    let mut out: Vec<OtcRecord> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| CliError::Io {
            path: format!("{}:{}", origin.display(), i + 1),
            message: msg,
        };
        let rec: OtcRecord = serde_json::from_str(raw).map_err(|e| bad(e.to_string()))?;
        if let Some(prev) = out.last() {
            if rec.time() < prev.time() {
                return Err(bad("records must be in time order".into()));
            }
        }
        out.push(rec);
    }
    Ok(out)
}
