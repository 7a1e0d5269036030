//! Run configuration: a TOML file with documented keys, strict about unknown
//! fields, normalized and validated before any compute starts.
//!
//! ```toml
//! seed = 42
//! out = "runs/demo"
//!
//! [data]
//! source = "synth"          # "synth" | "csv"
//! days = 1461               # synth: number of days from `start`
//! lat = 52.1
//! lon = 5.2
//! start = "2014-01-01"
//! no_arbitrage = false      # synth: force rtm_up >= dam >= rtm_down >= 0
//! cap = 1.05                # preprocessing outlier cap
//! # pv_csv = "data/pv.csv"        (csv source)
//! # price_csv = "data/prices.csv" (csv source)
//!
//! [split]
//! train_end = "2016-01-01"
//! cal_end = "2017-01-01"
//!
//! [model]
//! kind = "rfr"              # "slr" | "mlr" | "rfr"
//! n_trees = 375
//! max_features = 3
//! min_leaf = 5
//! tune = false              # grid-search (grid_trees × grid_features)
//! grid_trees = [100, 375]
//! grid_features = [2, 3]
//! folds = 10                # CV folds for subset selection / tuning
//! subset_max_features = 8   # cap for forward selection (mlr)
//!
//! [uncertainty]
//! methods = ["M1", "M2", "M3", "M4", "M5"]   # plus "SLQR", "MLQR"
//! k = 50
//! bins = 15
//! lqr_max_points = 1000     # training subsample for quantile regression
//!
//! [market]
//! clusters = 20             # price-delta clusters
//! scenarios = 99            # PV quantile scenarios
//!
//! [[strategy]]
//! kind = "perfect"          # also: trust | worst_case | newsvendor | eum | eum_cvar
//! # newsvendor:  constraint = "none" | "prob" | "dec",  fraction = 0.1
//! # eum_cvar:    gamma = 0.6, beta = 0.1, window = 168,
//! #              cvar_scenarios = 5, cvar_clusters = 2
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use pvbid_core::conformal::Method;
use pvbid_core::market::NewsvendorConstraint;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub data: DataConfig,
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub uncertainty: UncertaintyConfig,
    #[serde(default)]
    pub market: MarketConfig,
    #[serde(default = "default_strategies", rename = "strategy")]
    pub strategies: Vec<StrategyConfig>,
}

fn default_seed() -> u64 {
    42
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_strategies() -> Vec<StrategyConfig> {
    vec![
        StrategyConfig::perfect(),
        StrategyConfig::trust(),
        StrategyConfig::worst_case(),
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default = "default_days")]
    pub days: u32,
    #[serde(default = "default_lat")]
    pub lat: f64,
    #[serde(default = "default_lon")]
    pub lon: f64,
    #[serde(default = "default_start")]
    pub start: NaiveDate,
    #[serde(default)]
    pub no_arbitrage: bool,
    #[serde(default = "default_cap")]
    pub cap: f64,
    #[serde(default)]
    pub pv_csv: Option<PathBuf>,
    #[serde(default)]
    pub price_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth,
    Csv,
}

fn default_days() -> u32 {
    1461
}
fn default_lat() -> f64 {
    52.1
}
fn default_lon() -> f64 {
    5.2
}
fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2014, 1, 1).unwrap()
}
fn default_cap() -> f64 {
    1.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_end: NaiveDate,
    pub cal_end: NaiveDate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_model_kind")]
    pub kind: ModelKind,
    #[serde(default = "default_n_trees")]
    pub n_trees: usize,
    #[serde(default = "default_max_features")]
    pub max_features: usize,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    #[serde(default)]
    pub tune: bool,
    #[serde(default = "default_grid_trees")]
    pub grid_trees: Vec<usize>,
    #[serde(default = "default_grid_features")]
    pub grid_features: Vec<usize>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_subset_max")]
    pub subset_max_features: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Slr,
    Mlr,
    Rfr,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Slr => "SLR",
            ModelKind::Mlr => "MLR",
            ModelKind::Rfr => "RFR",
        }
    }
}

fn default_model_kind() -> ModelKind {
    ModelKind::Rfr
}
fn default_n_trees() -> usize {
    375
}
fn default_max_features() -> usize {
    3
}
fn default_min_leaf() -> usize {
    5
}
fn default_grid_trees() -> Vec<usize> {
    vec![100, 375]
}
fn default_grid_features() -> Vec<usize> {
    vec![2, 3]
}
fn default_folds() -> usize {
    10
}
fn default_subset_max() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_lqr_max_points")]
    pub lqr_max_points: usize,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn default_methods() -> Vec<String> {
    vec!["M1".into(), "M2".into(), "M3".into(), "M4".into(), "M5".into()]
}
fn default_k() -> usize {
    50
}
fn default_bins() -> usize {
    15
}
fn default_lqr_max_points() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
}

impl Default for MarketConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn default_clusters() -> usize {
    20
}
fn default_scenarios() -> usize {
    99
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    #[serde(default)]
    pub constraint: Option<ConstraintKind>,
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub cvar_scenarios: Option<usize>,
    #[serde(default)]
    pub cvar_clusters: Option<usize>,
}

impl StrategyConfig {
    fn bare(kind: StrategyKind) -> Self {
        Self {
            kind,
            constraint: None,
            fraction: None,
            gamma: None,
            beta: None,
            window: None,
            cvar_scenarios: None,
            cvar_clusters: None,
        }
    }

    pub fn perfect() -> Self {
        Self::bare(StrategyKind::Perfect)
    }
    pub fn trust() -> Self {
        Self::bare(StrategyKind::Trust)
    }
    pub fn worst_case() -> Self {
        Self::bare(StrategyKind::WorstCase)
    }

    /// Normalized Newsvendor constraint.
    pub fn newsvendor_constraint(&self) -> NewsvendorConstraint {
        let fraction = self.fraction.unwrap_or(0.1);
        match self.constraint {
            None | Some(ConstraintKind::None) => NewsvendorConstraint::None,
            Some(ConstraintKind::Prob) => NewsvendorConstraint::Probability(fraction),
            Some(ConstraintKind::Dec) => NewsvendorConstraint::Decision(fraction),
        }
    }

    /// Stable label used in artifact file names and report rows.
    pub fn label(&self) -> String {
        match self.kind {
            StrategyKind::Perfect => "perfect".into(),
            StrategyKind::Trust => "trust".into(),
            StrategyKind::WorstCase => "worst_case".into(),
            StrategyKind::Newsvendor => match self.newsvendor_constraint() {
                NewsvendorConstraint::None => "newsvendor".into(),
                NewsvendorConstraint::Probability(c) => {
                    format!("newsvendor_prob{:02}", (c * 100.0).round() as u32)
                }
                NewsvendorConstraint::Decision(c) => {
                    format!("newsvendor_dec{:02}", (c * 100.0).round() as u32)
                }
            },
            StrategyKind::Eum => "eum".into(),
            StrategyKind::EumCvar => format!(
                "eum_cvar_g{:03}_b{:03}",
                (self.gamma.unwrap_or(0.6) * 100.0).round() as u32,
                (self.beta.unwrap_or(0.1) * 100.0).round() as u32
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Perfect,
    Trust,
    WorstCase,
    Newsvendor,
    Eum,
    EumCvar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    None,
    Prob,
    Dec,
}

/// A validated uncertainty method name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSpec {
    Conformal(Method),
    Slqr,
    Mlqr,
}

impl MethodSpec {
    pub fn parse(name: &str) -> Option<MethodSpec> {
        match name {
            "SLQR" => Some(MethodSpec::Slqr),
            "MLQR" => Some(MethodSpec::Mlqr),
            other => Method::parse(other).map(MethodSpec::Conformal),
        }
    }

    pub fn name(&self) -> String {
        match self {
            MethodSpec::Conformal(m) => m.name().to_string(),
            MethodSpec::Slqr => "SLQR".into(),
            MethodSpec::Mlqr => "MLQR".into(),
        }
    }
}

/// Parse and validate a config file into a normalized [`RunConfig`].
pub fn validate_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: RunConfig = toml::from_str(&text).context("parsing config")?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn validate(cfg: &RunConfig) -> Result<()> {
    if cfg.split.train_end >= cfg.split.cal_end {
        bail!(
            "split.train_end ({}) must precede split.cal_end ({})",
            cfg.split.train_end,
            cfg.split.cal_end
        );
    }
    match cfg.data.source {
        DataSource::Synth => {
            if cfg.data.days < 3 {
                bail!("data.days must be at least 3, got {}", cfg.data.days);
            }
        }
        DataSource::Csv => {
            if cfg.data.pv_csv.is_none() {
                bail!("data.pv_csv is required when data.source = \"csv\"");
            }
            if cfg.data.price_csv.is_none() {
                bail!("data.price_csv is required when data.source = \"csv\"");
            }
        }
    }
    if !(-90.0..=90.0).contains(&cfg.data.lat) {
        bail!("data.lat {} outside [-90, 90]", cfg.data.lat);
    }
    if cfg.data.cap <= 1.0 {
        bail!("data.cap must exceed 1, got {}", cfg.data.cap);
    }
    if cfg.uncertainty.methods.is_empty() {
        bail!("uncertainty.methods must not be empty");
    }
    for m in &cfg.uncertainty.methods {
        if MethodSpec::parse(m).is_none() {
            bail!("uncertainty.methods: unknown method `{m}`");
        }
    }
    if cfg.uncertainty.k == 0 {
        bail!("uncertainty.k must be positive");
    }
    if cfg.uncertainty.bins == 0 {
        bail!("uncertainty.bins must be positive");
    }
    if cfg.market.clusters == 0 {
        bail!("market.clusters must be positive");
    }
    if cfg.market.scenarios == 0 {
        bail!("market.scenarios must be positive");
    }
    if cfg.model.folds < 2 {
        bail!("model.folds must be at least 2");
    }
    if cfg.strategies.is_empty() {
        bail!("at least one [[strategy]] block is required");
    }
    for s in &cfg.strategies {
        if let Some(f) = s.fraction {
            if !(0.0 < f && f < 0.5) {
                bail!("strategy.fraction {f} outside (0, 0.5)");
            }
        }
        match s.kind {
            StrategyKind::EumCvar => {
                let gamma = s.gamma.unwrap_or(0.6);
                let beta = s.beta.unwrap_or(0.1);
                if !(0.0 < gamma && gamma < 1.0) {
                    bail!("strategy.gamma {gamma} outside (0, 1)");
                }
                if !(0.0..=1.0).contains(&beta) {
                    bail!("strategy.beta {beta} outside [0, 1]");
                }
                if s.window == Some(0) {
                    bail!("strategy.window must be positive");
                }
            }
            StrategyKind::Newsvendor => {}
            _ => {
                if s.constraint.is_some() || s.fraction.is_some() {
                    bail!(
                        "strategy `{}` takes no constraint/fraction settings",
                        s.label()
                    );
                }
            }
        }
    }
    Ok(())
}

/// Methods with duplicates removed, preserving order.
pub fn method_specs(cfg: &RunConfig) -> Vec<MethodSpec> {
    let mut seen = Vec::new();
    for name in &cfg.uncertainty.methods {
        let spec = MethodSpec::parse(name).expect("validated");
        if !seen.contains(&spec) {
            seen.push(spec);
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn parse(text: &str) -> Result<RunConfig> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        validate_config(f.path())
    }

    const MINIMAL: &str = r#"
[data]
source = "synth"
days = 30

[split]
train_end = "2014-01-15"
cal_end = "2014-01-22"
"#;

    #[test]
    fn minimal_config_fills_paper_defaults() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.uncertainty.k, 50);
        assert_eq!(cfg.uncertainty.bins, 15);
        assert_eq!(cfg.market.clusters, 20);
        assert_eq!(cfg.market.scenarios, 99);
        assert_eq!(cfg.model.n_trees, 375);
        assert_eq!(cfg.model.max_features, 3);
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\nmystery_knob = 3\n");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn unknown_method_is_rejected_by_name() {
        let text = format!("{MINIMAL}\n[uncertainty]\nmethods = [\"M1\", \"M9\"]\n");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("M9"), "error was: {err}");
    }

    #[test]
    fn bad_gamma_is_rejected_naming_the_field() {
        let text = format!("{MINIMAL}\n[[strategy]]\nkind = \"eum_cvar\"\ngamma = 1.5\n");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("gamma"), "error was: {err}");
        assert!(err.contains("1.5"), "error was: {err}");
    }

    #[test]
    fn explicit_k_overrides_default() {
        let text = format!("{MINIMAL}\n[uncertainty]\nk = 10\n");
        let cfg = parse(&text).unwrap();
        assert_eq!(cfg.uncertainty.k, 10);
    }

    #[test]
    fn bad_split_order_rejected() {
        let text = r#"
[data]
source = "synth"

[split]
train_end = "2016-01-01"
cal_end = "2015-01-01"
"#;
        assert!(parse(text).is_err());
    }

    #[test]
    fn strategy_labels_are_stable() {
        let mut nv = StrategyConfig::bare(StrategyKind::Newsvendor);
        nv.constraint = Some(ConstraintKind::Dec);
        nv.fraction = Some(0.1);
        assert_eq!(nv.label(), "newsvendor_dec10");
        let mut cv = StrategyConfig::bare(StrategyKind::EumCvar);
        cv.gamma = Some(0.6);
        cv.beta = Some(0.1);
        assert_eq!(cv.label(), "eum_cvar_g060_b010");
    }
}
