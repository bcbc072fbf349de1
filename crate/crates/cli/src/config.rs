//! TOML configuration.
//!
//! Parse errors and validation errors both carry the dotted key path of the
//! offending entry, e.g. `market.venues[1].base_rates`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xvenue_core::bayes::{CtmcEstimator, DriftPrior, NigPrior, NormalDriftPrior, PriorSet, PriorWeights, ProportionPooling};
use xvenue_core::curve::{CurveMode, CurveParams};
use xvenue_core::engine::RunConfig;
use xvenue_core::linalg::Matrix;
use xvenue_core::market::{
    Generator, IntensityTable, MarketSpec, PriceModel, ProportionTable, RateMatrix, VenueSpec, ZoneMap, DEFAULT_LIMIT_FACTORS,
};
use xvenue_core::otc::{FillProbability, NiwPrior, NiwVariant, OtcPriors, RfqGammaPrior, SizeScalePrior};
use xvenue_core::simulator::SimOptions;
use xvenue_core::solver::{PenaltySpec, SliceGrid};

use crate::error::CliError;

fn invalid(path: impl Into<String>, message: impl ToString) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub market: Option<MarketSection>,
    pub grid: Option<GridSection>,
    pub penalty: Option<PenaltySpec>,
    pub curve: Option<CurveSection>,
    pub prior: Option<PriorSection>,
    pub run: Option<RunSection>,
    pub otc: Option<OtcSection>,
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zones {
    #[default]
    Identity,
    Collapsed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VenueSection {
    pub tick_size: f64,
    pub spread_ticks: Vec<u32>,
    pub imbalance_values: Vec<f64>,
    /// Regime of each spread level; defaults follow `market.zones`.
    pub spread_zones: Option<Vec<usize>>,
    pub imbalance_zones: Option<Vec<usize>>,
    pub spread_generator: Option<Vec<Vec<f64>>>,
    pub imbalance_generator: Option<Vec<Vec<f64>>>,
    /// Fill rate at the best limit, one entry per joint regime.
    pub base_rates: Vec<f64>,
    /// Law of the executed proportion, shared by every regime and limit.
    pub proportions: Option<Vec<f64>>,
    /// Law per (regime, limit), `n_regimes * 3` rows.
    pub proportion_table: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub kappa: f64,
    /// Multipliers of the base rate for limits -1, 0 and +1.
    #[serde(default = "default_limit_factors")]
    pub limit_factors: [f64; 3],
    pub omega: Vec<f64>,
    #[serde(default)]
    pub zones: Zones,
    /// Coupled generator over the joint state; replaces the per-venue ones.
    pub joint_generator: Option<Vec<Vec<f64>>>,
    pub price: PriceModel,
    pub venues: Vec<VenueSection>,
}

fn default_limit_factors() -> [f64; 3] {
    DEFAULT_LIMIT_FACTORS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Substeps {
    Count(usize),
    Named(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoKeyword {
    Auto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_n_q")]
    pub n_q: usize,
    #[serde(default = "default_n_l")]
    pub n_l: usize,
    #[serde(default = "default_n_t")]
    pub n_t: usize,
    #[serde(default = "default_slice_length")]
    pub slice_length: f64,
    /// Defaults to `curve.q0`.
    pub q_max: Option<f64>,
    /// Defaults to `q_max`.
    pub l_max: Option<f64>,
    pub substeps: Option<Substeps>,
    pub blowup_bound: Option<f64>,
    #[serde(default)]
    pub market_orders: bool,
    /// Defaults to `q_max`.
    pub m_max: Option<f64>,
    #[serde(default = "default_n_m")]
    pub n_m: usize,
}

fn default_n_q() -> usize {
    101
}
fn default_n_l() -> usize {
    51
}
fn default_n_t() -> usize {
    10
}
fn default_slice_length() -> f64 {
    1.0
}
fn default_n_m() -> usize {
    11
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSection {
    pub q0: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub volume: f64,
    pub eta: f64,
    pub horizon: f64,
    #[serde(default)]
    pub mode: CurveMode,
}

impl CurveSection {
    pub fn params(&self) -> CurveParams {
        CurveParams {
            q0: self.q0,
            gamma: self.gamma,
            sigma: self.sigma,
            volume: self.volume,
            eta: self.eta,
            horizon: self.horizon,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSection {
    /// Known volatility; `nu` is the prior standard deviation of the drift
    /// and `sigma` defaults to the market's.
    Normal { mu0: f64, nu: f64, sigma: Option<f64> },
    Nig { mu0: f64, nu: f64, alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    /// File whose `prior.hyperparameters` are loaded, relative to the config.
    pub file: Option<PathBuf>,
    /// Explicit hyperparameters, as written by `calibrate` and `run`.
    pub hyperparameters: Option<PriorSet>,
    pub estimator: Option<CtmcEstimator>,
    pub pooling: Option<ProportionPooling>,
    pub weights: Option<PriorWeights>,
    pub drift: Option<DriftSection>,
    /// Believed market; defaults to `market`.
    pub market: Option<MarketSection>,
    /// Per-venue multipliers of the believed fill rates.
    pub intensity_scale: Option<Vec<f64>>,
    /// Believed proportion law for every venue.
    pub proportions: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub spreads: Vec<usize>,
    pub imbalances: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_slices")]
    pub slices: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub learn: bool,
    #[serde(default)]
    pub multi_fill: bool,
    pub initial_state: Option<InitialState>,
    /// Slices whose value and policy tables are written.
    #[serde(default = "default_output_slices")]
    pub output_slices: Vec<usize>,
    /// Directory of the solve cache; no caching when absent.
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            slices: default_slices(),
            seed: 0,
            learn: true,
            multi_fill: false,
            initial_state: None,
            output_slices: default_output_slices(),
            cache_dir: None,
        }
    }
}

fn default_slices() -> usize {
    10
}
fn default_true() -> bool {
    true
}
fn default_output_slices() -> Vec<usize> {
    vec![0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn expand(&self, n: usize, path: &str) -> Result<Vec<T>, CliError> {
        match self {
            OneOrMany::One(x) => Ok(vec![x.clone(); n]),
            OneOrMany::Many(v) if v.len() == n => Ok(v.clone()),
            OneOrMany::Many(v) => Err(invalid(path, format!("expected one entry or {n} entries, got {}", v.len()))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSection {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeSection {
    pub shape: f64,
    pub a0: f64,
    pub b0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NiwSection {
    pub mu0: Vec<f64>,
    pub kappa0: f64,
    pub nu0: f64,
    pub psi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OtcSection {
    pub assets: usize,
    #[serde(default)]
    pub variant: NiwVariant,
    pub fill_probability: FillProbability,
    /// One prior for all, or `2 * assets` ordered asset-major, bid first.
    pub rfq_prior: OneOrMany<GammaSection>,
    pub size_prior: OneOrMany<SizeSection>,
    pub niw: NiwSection,
}

/// Reads and parses a config file; unknown keys are rejected.
pub fn load(path: &Path) -> Result<(ConfigFile, PathBuf), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let config = parse(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

pub fn parse(text: &str) -> Result<ConfigFile, CliError> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.message().to_string();
        invalid(if path == "." { String::new() } else { path }, message)
    })
}

fn check_rows(rows: &[Vec<f64>], path: &str) -> Result<RateMatrix, CliError> {
    RateMatrix::new(rows.to_vec()).map_err(|e| invalid(path, e))
}

impl MarketSection {
    pub fn build(&self, path: &str) -> Result<MarketSpec, CliError> {
        if self.venues.is_empty() {
            return Err(invalid(format!("{path}.venues"), "at least one venue is required"));
        }
        let venues: Vec<VenueSpec> = self
            .venues
            .iter()
            .map(|v| VenueSpec {
                tick_size: v.tick_size,
                spread_ticks: v.spread_ticks.clone(),
                imbalance_values: v.imbalance_values.clone(),
            })
            .collect();
        for (n, v) in venues.iter().enumerate() {
            v.validate().map_err(|e| invalid(format!("{path}.venues[{n}]"), e))?;
        }
        let mut zones = match self.zones {
            Zones::Identity => ZoneMap::identity(&venues),
            Zones::Collapsed => ZoneMap::collapsed(&venues),
        };
        for (n, v) in self.venues.iter().enumerate() {
            if let Some(z) = &v.spread_zones {
                zones.spread[n] = z.clone();
            }
            if let Some(z) = &v.imbalance_zones {
                zones.imbalance[n] = z.clone();
            }
        }
        let n_regimes: usize = (0..venues.len())
            .map(|n| {
                let count = |m: &Vec<usize>| m.iter().max().map_or(0, |x| x + 1);
                count(&zones.spread[n]) * count(&zones.imbalance[n])
            })
            .product();

        let generator = match &self.joint_generator {
            Some(rows) => {
                for (n, v) in self.venues.iter().enumerate() {
                    if v.spread_generator.is_some() || v.imbalance_generator.is_some() {
                        return Err(invalid(
                            format!("{path}.venues[{n}]"),
                            "per-venue generators cannot be combined with joint_generator",
                        ));
                    }
                }
                Generator::Coupled(check_rows(rows, &format!("{path}.joint_generator"))?)
            }
            None => {
                let mut spread = Vec::new();
                let mut imbalance = Vec::new();
                for (n, v) in self.venues.iter().enumerate() {
                    let p = format!("{path}.venues[{n}]");
                    let s = v
                        .spread_generator
                        .as_ref()
                        .ok_or_else(|| invalid(format!("{p}.spread_generator"), "missing (or give market.joint_generator)"))?;
                    let i = v
                        .imbalance_generator
                        .as_ref()
                        .ok_or_else(|| invalid(format!("{p}.imbalance_generator"), "missing (or give market.joint_generator)"))?;
                    spread.push(check_rows(s, &format!("{p}.spread_generator"))?);
                    imbalance.push(check_rows(i, &format!("{p}.imbalance_generator"))?);
                }
                Generator::Factored { spread, imbalance }
            }
        };

        let mut base = Vec::new();
        let mut probs = Vec::new();
        let r = self.omega.len();
        for (n, v) in self.venues.iter().enumerate() {
            let p = format!("{path}.venues[{n}]");
            if v.base_rates.len() != n_regimes {
                return Err(invalid(
                    format!("{p}.base_rates"),
                    format!("expected {n_regimes} entries (one per regime), got {}", v.base_rates.len()),
                ));
            }
            base.push(v.base_rates.clone());
            match (&v.proportions, &v.proportion_table) {
                (Some(law), None) => {
                    if law.len() != r {
                        return Err(invalid(format!("{p}.proportions"), format!("expected {r} entries, got {}", law.len())));
                    }
                    for _ in 0..n_regimes * 3 {
                        probs.extend_from_slice(law);
                    }
                }
                (None, Some(table)) => {
                    if table.len() != n_regimes * 3 || table.iter().any(|row| row.len() != r) {
                        return Err(invalid(
                            format!("{p}.proportion_table"),
                            format!("expected {} rows of {r} entries", n_regimes * 3),
                        ));
                    }
                    probs.extend(table.iter().flatten());
                }
                _ => return Err(invalid(p, "give exactly one of proportions and proportion_table")),
            }
        }
        MarketSpec::new(
            venues,
            zones,
            generator,
            IntensityTable::from_base(&base, self.limit_factors, self.kappa),
            ProportionTable {
                omega: self.omega.clone(),
                probs,
            },
            self.price,
        )
        .map_err(|e| invalid(path, e))
    }
}

/// A fully resolved configuration.
pub struct Resolved {
    pub file: ConfigFile,
    pub base_dir: PathBuf,
}

impl Resolved {
    pub fn new(file: ConfigFile, base_dir: PathBuf) -> Self {
        Resolved { file, base_dir }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let (file, base_dir) = load(path)?;
        Ok(Resolved { file, base_dir })
    }

    pub fn market(&self) -> Result<MarketSpec, CliError> {
        self.file.market.as_ref().ok_or_else(|| invalid("market", "section is required"))?.build("market")
    }

    pub fn curve(&self) -> Result<&CurveSection, CliError> {
        let c = self.file.curve.as_ref().ok_or_else(|| invalid("curve", "section is required"))?;
        c.params().validate().map_err(|e| invalid("curve", e))?;
        Ok(c)
    }

    pub fn penalty(&self) -> Result<PenaltySpec, CliError> {
        let p = self.file.penalty.ok_or_else(|| invalid("penalty.eta_g", "required; the running penalty has no default"))?;
        if !(p.eta_g >= 0.0 && p.eta_g.is_finite()) {
            return Err(invalid("penalty.eta_g", "must be finite and non-negative"));
        }
        Ok(p)
    }

    pub fn grid(&self, market_orders: Option<bool>) -> Result<SliceGrid, CliError> {
        let g = self.file.grid.clone().ok_or_else(|| invalid("grid", "section is required"))?;
        let q0 = self.curve()?.q0;
        let q_max = g.q_max.unwrap_or(q0);
        let mut grid = SliceGrid::new(g.n_q, g.n_l, g.n_t, g.slice_length, q_max).map_err(|e| invalid("grid", e))?;
        grid.l_max = g.l_max.unwrap_or(q_max);
        if let Some(b) = g.blowup_bound {
            grid.blowup_bound = b;
        }
        grid.substeps = match g.substeps {
            None | Some(Substeps::Named(AutoKeyword::Auto)) => None,
            Some(Substeps::Count(k)) => Some(k),
        };
        if market_orders.unwrap_or(g.market_orders) {
            grid = grid.with_market_orders(g.m_max.unwrap_or(q_max), g.n_m).map_err(|e| invalid("grid.n_m", e))?;
        }
        grid.validate().map_err(|e| invalid("grid", e))?;
        Ok(grid)
    }

    pub fn run_section(&self) -> RunSection {
        self.file.run.clone().unwrap_or_default()
    }

    pub fn initial_state(&self, spec: &MarketSpec) -> Result<usize, CliError> {
        match &self.run_section().initial_state {
            None => Ok(0),
            Some(s) => spec
                .joint_state_index(&s.spreads, &s.imbalances)
                .map_err(|e| invalid("run.initial_state", e)),
        }
    }

    /// Prior hyperparameters, resolved against the true market's topology.
    pub fn prior(&self, truth: &MarketSpec) -> Result<PriorSet, CliError> {
        let section = self.file.prior.clone().unwrap_or_default();
        if let Some(file) = &section.file {
            let path = self.base_dir.join(file);
            let other = Resolved::load(&path)?;
            let set = other
                .file
                .prior
                .and_then(|p| p.hyperparameters)
                .ok_or_else(|| invalid("prior.file", format!("{} has no prior.hyperparameters", path.display())))?;
            set.validate(truth).map_err(|e| invalid("prior.file", e))?;
            return Ok(set);
        }
        if let Some(set) = section.hyperparameters {
            set.validate(truth).map_err(|e| invalid("prior.hyperparameters", e))?;
            return Ok(set);
        }
        let mut believed = match &section.market {
            Some(m) => m.build("prior.market")?,
            None => truth.clone(),
        };
        if !believed.same_topology(truth) {
            return Err(invalid("prior.market", "believed market must share the venues and state spaces of market"));
        }
        if let Some(scale) = &section.intensity_scale {
            if scale.len() != believed.n_venues() {
                return Err(invalid("prior.intensity_scale", format!("expected {} entries", believed.n_venues())));
            }
            let mut table = believed.intensities().clone();
            for (n, f) in scale.iter().enumerate() {
                table = table.scaled_venue(believed.n_regimes(), n, *f);
            }
            believed = believed.with_intensities(table).map_err(|e| invalid("prior.intensity_scale", e))?;
        }
        if let Some(law) = &section.proportions {
            let omega = believed.proportions().omega.clone();
            if law.len() != omega.len() {
                return Err(invalid("prior.proportions", format!("expected {} entries", omega.len())));
            }
            let table = ProportionTable::per_venue(omega, &vec![law.clone(); believed.n_venues()], believed.n_regimes());
            believed = believed.with_proportions(table).map_err(|e| invalid("prior.proportions", e))?;
        }
        let drift = match section.drift.clone().ok_or_else(|| invalid("prior.drift", "required unless hyperparameters are given"))? {
            DriftSection::Normal { mu0, nu, sigma } => DriftPrior::Normal(NormalDriftPrior {
                mu0,
                nu,
                sigma: sigma.unwrap_or(truth.price().sigma),
            }),
            DriftSection::Nig { mu0, nu, alpha, beta } => DriftPrior::Nig(NigPrior { mu0, nu, alpha, beta }),
        };
        PriorSet::centered_on(
            &believed,
            section.weights.unwrap_or_default(),
            drift,
            section.pooling.unwrap_or_default(),
            section.estimator.unwrap_or_default(),
        )
        .map_err(|e| invalid("prior", e))
    }

    pub fn run_config(&self, overrides: &Overrides) -> Result<RunConfig, CliError> {
        let truth = self.market()?;
        let run = self.run_section();
        let curve = self.curve()?;
        let config = RunConfig {
            n_slices: overrides.slices.unwrap_or(run.slices),
            grid: self.grid(overrides.market_orders)?,
            penalty: self.penalty()?,
            curve: curve.params(),
            curve_mode: curve.mode,
            prior: self.prior(&truth)?,
            initial_state: self.initial_state(&truth)?,
            truth,
            learn: run.learn,
            seed: overrides.seed.unwrap_or(run.seed),
            options: SimOptions { multi_fill: run.multi_fill },
        };
        config.validate().map_err(|e| invalid("run", e))?;
        Ok(config)
    }

    pub fn otc(&self) -> Result<(OtcPriors, FillProbability), CliError> {
        let s = self.file.otc.as_ref().ok_or_else(|| invalid("otc", "section is required"))?;
        let d = s.assets;
        if d == 0 {
            return Err(invalid("otc.assets", "must be positive"));
        }
        let rfq = s
            .rfq_prior
            .expand(2 * d, "otc.rfq_prior")?
            .into_iter()
            .enumerate()
            .map(|(i, g)| RfqGammaPrior::new(g.alpha, g.beta).map_err(|e| invalid(format!("otc.rfq_prior[{i}]"), e)))
            .collect::<Result<Vec<_>, _>>()?;
        let size = s
            .size_prior
            .expand(2 * d, "otc.size_prior")?
            .into_iter()
            .enumerate()
            .map(|(i, z)| SizeScalePrior::new(z.shape, z.a0, z.b0).map_err(|e| invalid(format!("otc.size_prior[{i}]"), e)))
            .collect::<Result<Vec<_>, _>>()?;
        if s.niw.mu0.len() != d {
            return Err(invalid("otc.niw.mu0", format!("expected {d} entries")));
        }
        let psi = Matrix::from_rows(&s.niw.psi).map_err(|e| invalid("otc.niw.psi", e))?;
        let niw = NiwPrior::new(s.niw.mu0.clone(), s.niw.kappa0, s.niw.nu0, psi).map_err(|e| invalid("otc.niw", e))?;
        Ok((
            OtcPriors {
                rfq,
                size,
                niw,
                variant: s.variant,
            },
            s.fill_probability,
        ))
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub slices: Option<usize>,
    pub market_orders: Option<bool>,
}

/// A config file holding only `prior.hyperparameters`.
pub fn prior_file(set: &PriorSet) -> Result<String, CliError> {
    let file = ConfigFile {
        prior: Some(PriorSection {
            hyperparameters: Some(set.clone()),
            ..PriorSection::default()
        }),
        ..ConfigFile::default()
    };
    toml::to_string(&file).map_err(|e| CliError::Numerical(format!("cannot serialise posterior: {e}")))
}
