//! Pipeline stages and their on-disk artifacts.
//!
//! Every stage reads only files written by earlier stages, so a stage can be
//! re-run in isolation and reproduces its outputs byte for byte. Layout under
//! the output directory:
//!
//! ```text
//! dataset.csv  prices.csv            data stage
//! models/point.json  models/meta.json    train stage
//! predictors/<METHOD>.json           calibrate stage
//! reports/wis.{csv,json}  reports/coverage.csv   evaluate stage
//! market/clusters.json  scenarios/<METHOD>.json  bids/<m>__<s>.csv   bid stage
//! ledgers/<m>__<s>.csv  reports/backtest.{csv,json}   backtest stage
//! .stage_<name>                      completion markers
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use pvbid_core::conformal::{ConformalConfig, ConformalPredictor, UncertaintyModel};
use pvbid_core::data::{
    self, ingest_csv, read_price_csv, split, synth_generate, write_dataset_csv, write_price_csv,
    CsvSchema, Dataset, Location, SplitSpec, SynthConfig,
};
use pvbid_core::evaluation::{self, WisSummaryRow};
use pvbid_core::market::{
    backtest, build_scenarios, cluster_deltas, strategy_eum, strategy_eum_cvar,
    strategy_newsvendor, strategy_perfect, strategy_trust, strategy_worst_case, BidSchedule,
    DeltaClusterSet, PriceSeries, ScenarioMatrix,
};
use pvbid_core::models::{
    self, fit_lqr, fit_ols, fit_rfr, forward_subset_select, tune_rfr, FeatureScaler, PointModel,
    QuantileModel, RfrParams,
};

use crate::config::{method_specs, MethodSpec, ModelKind, RunConfig, StrategyKind};

/// Canonical quantile grid 0.01..0.99 used for benchmark quantile fits.
pub fn tau_grid() -> Vec<f64> {
    (1..=99).map(|j| j as f64 / 100.0).collect()
}

/// Either kind of calibrated uncertainty model, as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnyPredictor {
    Conformal(ConformalPredictor),
    Quantile(QuantileModel),
}

impl UncertaintyModel for AnyPredictor {
    fn point(&self, features: &[f64]) -> f64 {
        match self {
            AnyPredictor::Conformal(p) => p.point(features),
            AnyPredictor::Quantile(p) => p.point(features),
        }
    }

    fn quantile(&self, features: &[f64], tau: f64) -> f64 {
        match self {
            AnyPredictor::Conformal(p) => p.quantile(features, tau),
            AnyPredictor::Quantile(p) => p.quantile(features, tau),
        }
    }

    fn interval(&self, features: &[f64], alpha: f64) -> (f64, f64) {
        match self {
            AnyPredictor::Conformal(p) => p.interval(features, alpha),
            AnyPredictor::Quantile(p) => p.interval(features, alpha),
        }
    }

    fn quantiles(&self, features: &[f64], taus: &[f64]) -> Vec<f64> {
        match self {
            AnyPredictor::Conformal(p) => p.quantiles(features, taus),
            AnyPredictor::Quantile(p) => p.quantiles(features, taus),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub kind: String,
    pub features: Vec<String>,
    pub n_trees: usize,
    pub max_features: usize,
    pub min_leaf: usize,
    pub adjusted_r2_test: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestRow {
    pub strategy: String,
    pub cp_method: String,
    pub profit: f64,
    pub imbalance_pct: f64,
    pub timesteps: usize,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub stages: Vec<String>,
    pub out_dir: PathBuf,
    pub records: Option<usize>,
    pub adjusted_r2_test: Option<f64>,
    pub methods: Vec<String>,
    pub wis: Vec<WisSummaryRow>,
    pub backtest: Vec<BacktestRow>,
}

pub struct Pipeline {
    pub cfg: RunConfig,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Self {
        Self { cfg }
    }

    fn out(&self) -> &Path {
        &self.cfg.out
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out().join(rel)
    }

    fn mark(&self, stage: &str) -> Result<()> {
        fs::write(self.path(&format!(".stage_{stage}")), "ok\n")?;
        Ok(())
    }

    fn ensure_dir(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        fs::create_dir_all(&p)?;
        Ok(p)
    }

    fn site(&self) -> Result<Location> {
        Ok(Location::new(self.cfg.data.lat, self.cfg.data.lon)?)
    }

    fn load_dataset(&self) -> Result<Dataset> {
        let path = self.path("dataset.csv");
        if !path.exists() {
            bail!("missing {}; run the data stage first", path.display());
        }
        Ok(ingest_csv(&path, &CsvSchema::standard(self.site()?))?)
    }

    fn load_prices(&self) -> Result<PriceSeries> {
        let path = self.path("prices.csv");
        if !path.exists() {
            bail!("missing {}; run the data stage first", path.display());
        }
        Ok(read_price_csv(&path)?)
    }

    fn split_spec(&self) -> Result<SplitSpec> {
        Ok(SplitSpec::new(
            self.cfg.split.train_end,
            self.cfg.split.cal_end,
        )?)
    }

    fn load_split(&self) -> Result<(Dataset, Dataset, Dataset)> {
        let ds = self.load_dataset()?;
        Ok(split(&ds, &self.split_spec()?)?)
    }

    fn load_point_model(&self) -> Result<(PointModel, TrainMeta)> {
        let model: PointModel = read_artifact(&self.path("models/point.json"))?;
        let meta: TrainMeta = read_artifact(&self.path("models/meta.json"))?;
        Ok((model, meta))
    }

    fn load_predictor(&self, name: &str) -> Result<AnyPredictor> {
        read_artifact(&self.path(&format!("predictors/{name}.json")))
    }

    /// Single feature with the highest absolute correlation with the target.
    fn best_correlated_feature(train: &Dataset) -> Result<usize> {
        let y = train.targets();
        let mut best: Option<(usize, f64)> = None;
        for j in 0..train.n_features() {
            let x = train.column(j);
            let r = pearson(&x, &y).abs();
            if r.is_finite() && best.map_or(true, |(_, b)| r > b) {
                best = Some((j, r));
            }
        }
        best.map(|(j, _)| j)
            .ok_or_else(|| anyhow!("no usable feature column"))
    }

    fn mlr_features(&self, train: &Dataset) -> Result<Vec<usize>> {
        let sel = forward_subset_select(
            train,
            self.cfg.model.folds,
            self.cfg.model.subset_max_features,
            self.cfg.seed ^ 0x01,
        )?;
        if sel.is_empty() {
            // Nothing improved on the intercept; keep the single most
            // correlated feature so downstream models stay well-defined.
            Ok(vec![Self::best_correlated_feature(train)?])
        } else {
            Ok(sel)
        }
    }

    // ---- stages -----------------------------------------------------------

    pub fn stage_data(&self) -> Result<usize> {
        fs::create_dir_all(self.out())?;
        let (raw, prices) = match self.cfg.data.source {
            crate::config::DataSource::Synth => synth_generate(&SynthConfig {
                seed: self.cfg.seed,
                days: self.cfg.data.days,
                lat: self.cfg.data.lat,
                lon: self.cfg.data.lon,
                start: self.cfg.data.start,
                no_arbitrage: self.cfg.data.no_arbitrage,
            })?,
            crate::config::DataSource::Csv => {
                let pv = self.cfg.data.pv_csv.as_ref().expect("validated");
                let price = self.cfg.data.price_csv.as_ref().expect("validated");
                let ds = ingest_csv(pv, &CsvSchema::standard(self.site()?))?;
                (ds, read_price_csv(price)?)
            }
        };
        let clean = data::preprocess(&raw, self.cfg.data.cap)?.with_solar_features();
        write_dataset_csv(&clean, &self.path("dataset.csv"))?;
        write_price_csv(&prices, &self.path("prices.csv"))?;
        self.mark("data")?;
        Ok(clean.len())
    }

    pub fn stage_train(&self) -> Result<TrainMeta> {
        let (train, _cal, test) = self.load_split()?;
        self.ensure_dir("models")?;
        let mcfg = &self.cfg.model;
        let (model, features) = match mcfg.kind {
            ModelKind::Slr => {
                let f = Self::best_correlated_feature(&train)?;
                let fit = fit_ols(&train, &[f])?;
                (PointModel::Linear(fit.model), vec![f])
            }
            ModelKind::Mlr => {
                let sel = self.mlr_features(&train)?;
                let fit = fit_ols(&train, &sel)?;
                (PointModel::Linear(fit.model), sel)
            }
            ModelKind::Rfr => {
                let params = if mcfg.tune {
                    let mut grid = Vec::new();
                    for &t in &mcfg.grid_trees {
                        for &f in &mcfg.grid_features {
                            grid.push((t, f));
                        }
                    }
                    let (n_trees, max_features) =
                        tune_rfr(&train, &grid, mcfg.folds, self.cfg.seed ^ 0x04)?;
                    RfrParams {
                        n_trees,
                        max_features,
                        min_leaf: mcfg.min_leaf,
                    }
                } else {
                    RfrParams {
                        n_trees: mcfg.n_trees,
                        max_features: mcfg.max_features,
                        min_leaf: mcfg.min_leaf,
                    }
                };
                let forest = fit_rfr(&train, params, self.cfg.seed ^ 0x02)?;
                (PointModel::Forest(forest), (0..train.n_features()).collect())
            }
        };

        let yhat = model.predict_dataset(&test)?;
        let p = features.len();
        let r2 = evaluation::adjusted_r2(&test.targets(), &yhat, p)?;
        let meta = TrainMeta {
            kind: mcfg.kind.label().to_string(),
            features: features
                .iter()
                .map(|&i| train.feature_names()[i].clone())
                .collect(),
            n_trees: match &model {
                PointModel::Forest(f) => f.params.n_trees,
                _ => 0,
            },
            max_features: match &model {
                PointModel::Forest(f) => f.params.max_features,
                _ => 0,
            },
            min_leaf: match &model {
                PointModel::Forest(f) => f.params.min_leaf,
                _ => 0,
            },
            adjusted_r2_test: r2,
        };
        write_artifact(&self.path("models/point.json"), &model)?;
        write_artifact(&self.path("models/meta.json"), &meta)?;
        self.mark("train")?;
        Ok(meta)
    }

    pub fn stage_calibrate(&self) -> Result<Vec<String>> {
        let (train, cal, _test) = self.load_split()?;
        let (model, _meta) = self.load_point_model()?;
        self.ensure_dir("predictors")?;
        let scaler = FeatureScaler::fit(&train)?;
        let taus = tau_grid();
        let mut names = Vec::new();
        for spec in method_specs(&self.cfg) {
            let predictor = match spec {
                MethodSpec::Conformal(method) => {
                    let cfg = ConformalConfig {
                        k: self.cfg.uncertainty.k,
                        n_bins: self.cfg.uncertainty.bins,
                        ..ConformalConfig::for_method(method)
                    };
                    AnyPredictor::Conformal(ConformalPredictor::calibrate(
                        model.clone(),
                        &cal,
                        cfg,
                        Some(&scaler),
                    )?)
                }
                MethodSpec::Slqr => {
                    let f = Self::best_correlated_feature(&train)?;
                    let sub = subsample(&train, self.cfg.uncertainty.lqr_max_points);
                    AnyPredictor::Quantile(fit_lqr(&sub, &[f], &taus)?)
                }
                MethodSpec::Mlqr => {
                    let sel = self.mlr_features(&train)?;
                    let sub = subsample(&train, self.cfg.uncertainty.lqr_max_points);
                    AnyPredictor::Quantile(fit_lqr(&sub, &sel, &taus)?)
                }
            };
            let name = spec.name();
            write_artifact(&self.path(&format!("predictors/{name}.json")), &predictor)?;
            names.push(name);
        }
        self.mark("calibrate")?;
        Ok(names)
    }

    pub fn stage_evaluate(&self) -> Result<Vec<WisSummaryRow>> {
        let (_train, _cal, test) = self.load_split()?;
        let meta: TrainMeta = read_artifact(&self.path("models/meta.json"))?;
        self.ensure_dir("reports")?;
        let mut rows = Vec::new();
        let mut coverage_rows = Vec::new();
        for spec in method_specs(&self.cfg) {
            let name = spec.name();
            let predictor = self.load_predictor(&name)?;
            let report = evaluation::wis(&predictor, &test)?;
            let (method, version) = match spec {
                MethodSpec::Conformal(m) => (m.name().to_string(), meta.kind.clone()),
                MethodSpec::Slqr => ("LQR".to_string(), "SLQR".to_string()),
                MethodSpec::Mlqr => ("LQR".to_string(), "MLQR".to_string()),
            };
            for alpha in [0.1, 0.2, 0.5] {
                let c = evaluation::coverage(&predictor, &test, alpha)?;
                coverage_rows.push((name.clone(), alpha, c));
            }
            rows.push(WisSummaryRow {
                method,
                version,
                wis: report.wis,
                sharpness: report.sharpness,
                calibration: report.calibration,
            });
        }
        let mut csv_buf = Vec::new();
        evaluation::write_wis_csv(&rows, &mut csv_buf)?;
        fs::write(self.path("reports/wis.csv"), csv_buf)?;
        fs::write(
            self.path("reports/wis.json"),
            serde_json::to_string_pretty(&rows)?,
        )?;
        let mut cov = String::from("method,alpha,coverage\n");
        for (m, a, c) in &coverage_rows {
            cov.push_str(&format!("{m},{a},{c:.6}\n"));
        }
        fs::write(self.path("reports/coverage.csv"), cov)?;
        self.mark("evaluate")?;
        Ok(rows)
    }

    pub fn stage_bid(&self) -> Result<Vec<String>> {
        let (_train, cal, test) = self.load_split()?;
        let prices = self.load_prices()?;
        self.ensure_dir("bids")?;
        self.ensure_dir("scenarios")?;
        self.ensure_dir("market")?;

        let cal_prices = prices.aligned_to(&cal.timestamps())?;
        let clusters = cluster_deltas(&cal_prices, self.cfg.market.clusters, self.cfg.seed ^ 0x03)?;
        write_artifact(&self.path("market/clusters.json"), &clusters)?;

        let mut written = Vec::new();
        let mut perfect_done = false;
        for spec in method_specs(&self.cfg) {
            let name = spec.name();
            let predictor = self.load_predictor(&name)?;
            let scenarios = build_scenarios(
                &predictor,
                &test,
                &prices,
                &clusters,
                self.cfg.market.scenarios,
            )?;
            write_artifact(&self.path(&format!("scenarios/{name}.json")), &scenarios)?;

            for strat in &self.cfg.strategies {
                if strat.kind == StrategyKind::Perfect {
                    if !perfect_done {
                        let schedule = strategy_perfect(&test);
                        written.push(self.write_bids(&schedule, "actual", "perfect")?);
                        perfect_done = true;
                    }
                    continue;
                }
                let label = strat.label();
                let schedule = match strat.kind {
                    StrategyKind::Trust => strategy_trust(&predictor, &test),
                    StrategyKind::WorstCase => strategy_worst_case(&predictor, &test),
                    StrategyKind::Newsvendor => strategy_newsvendor(
                        &predictor,
                        &test,
                        &clusters,
                        strat.newsvendor_constraint(),
                    )?,
                    StrategyKind::Eum => strategy_eum(&scenarios)?,
                    StrategyKind::EumCvar => {
                        let gamma = strat.gamma.unwrap_or(0.6);
                        let beta = strat.beta.unwrap_or(0.1);
                        let window = strat.window.unwrap_or(168);
                        let reduced = self.cvar_scenarios(
                            &predictor, &test, &prices, &clusters, strat, window,
                        )?;
                        strategy_eum_cvar(&reduced, gamma, beta)?.schedule
                    }
                    StrategyKind::Perfect => unreachable!(),
                };
                written.push(self.write_bids(&schedule, &name, &label)?);
            }
        }
        self.mark("bid")?;
        Ok(written)
    }

    /// Scenario matrix for the joint CVaR program: fewer quantile levels,
    /// merged clusters, and a truncated horizon keep the LP at desk scale.
    fn cvar_scenarios(
        &self,
        predictor: &AnyPredictor,
        test: &Dataset,
        prices: &PriceSeries,
        clusters: &DeltaClusterSet,
        strat: &crate::config::StrategyConfig,
        window: usize,
    ) -> Result<ScenarioMatrix> {
        let n = strat.cvar_scenarios.unwrap_or(5);
        let c = strat.cvar_clusters.unwrap_or(2);
        let reduced_clusters = clusters.reduce(c, self.cfg.seed ^ 0x05)?;
        let full = build_scenarios(predictor, test, prices, &reduced_clusters, n)?;
        Ok(full.truncated(window))
    }

    fn write_bids(&self, schedule: &BidSchedule, method: &str, label: &str) -> Result<String> {
        let file = format!("{method}__{label}");
        let mut text = String::from("timestamp,bid\n");
        for (ts, bid) in schedule.timestamps.iter().zip(&schedule.bids) {
            text.push_str(&format!("{},{}\n", ts.format("%Y-%m-%dT%H:%M:%SZ"), bid));
        }
        fs::write(self.path(&format!("bids/{file}.csv")), text)?;
        Ok(file)
    }

    pub fn stage_backtest(&self) -> Result<Vec<BacktestRow>> {
        let (_train, _cal, test) = self.load_split()?;
        let prices = self.load_prices()?;
        self.ensure_dir("ledgers")?;
        self.ensure_dir("reports")?;

        let bids_dir = self.path("bids");
        let mut files: Vec<PathBuf> = fs::read_dir(&bids_dir)
            .with_context(|| format!("reading {}", bids_dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();

        let mut rows = Vec::new();
        for file in files {
            let stem = file
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| anyhow!("bad bids file name"))?
                .to_string();
            let (method, label) = stem
                .split_once("__")
                .ok_or_else(|| anyhow!("bids file `{stem}` lacks method__strategy name"))?;
            let schedule = read_bids(&file, method, label)?;
            let report = backtest(&schedule, &test, &prices)?;
            let mut ledger = Vec::new();
            report.write_ledger_csv(&mut ledger)?;
            fs::write(self.path(&format!("ledgers/{stem}.csv")), ledger)?;
            rows.push(BacktestRow {
                strategy: label.to_string(),
                cp_method: method.to_string(),
                profit: report.profit,
                imbalance_pct: report.imbalance_pct,
                timesteps: report.ledger.len(),
            });
        }

        let mut csv = String::from("strategy,cp_method,profit,imbalance_pct,timesteps\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{:.2},{:.4},{}\n",
                r.strategy, r.cp_method, r.profit, r.imbalance_pct, r.timesteps
            ));
        }
        fs::write(self.path("reports/backtest.csv"), csv)?;
        fs::write(
            self.path("reports/backtest.json"),
            serde_json::to_string_pretty(&rows)?,
        )?;
        self.mark("backtest")?;
        Ok(rows)
    }

    /// All stages in order.
    pub fn run(&self) -> Result<RunSummary> {
        let mut summary = RunSummary {
            out_dir: self.out().to_path_buf(),
            ..Default::default()
        };
        summary.records = Some(self.stage_data()?);
        summary.stages.push("data".into());
        let meta = self.stage_train()?;
        summary.adjusted_r2_test = Some(meta.adjusted_r2_test);
        summary.stages.push("train".into());
        summary.methods = self.stage_calibrate()?;
        summary.stages.push("calibrate".into());
        summary.wis = self.stage_evaluate()?;
        summary.stages.push("evaluate".into());
        self.stage_bid()?;
        summary.stages.push("bid".into());
        summary.backtest = self.stage_backtest()?;
        summary.stages.push("backtest".into());
        Ok(summary)
    }
}

/// Evenly spaced subsample of at most `max` records, keeping order.
fn subsample(ds: &Dataset, max: usize) -> Dataset {
    if ds.len() <= max || max == 0 {
        return ds.clone();
    }
    let rows: Vec<_> = (0..max)
        .map(|i| {
            let idx = i * ds.len() / max;
            let r = &ds.records()[idx];
            (r.timestamp, r.pv, r.features.clone())
        })
        .collect();
    Dataset::from_rows(ds.site(), ds.feature_names().to_vec(), rows).expect("subsample")
}

fn write_artifact<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, models::to_artifact_json(value))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_artifact<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(models::from_artifact_json(&text)?)
}

fn read_bids(path: &Path, method: &str, label: &str) -> Result<BidSchedule> {
    let text = fs::read_to_string(path)?;
    let mut timestamps = Vec::new();
    let mut bids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let (ts, bid) = line
            .split_once(',')
            .ok_or_else(|| anyhow!("malformed bids row {i}"))?;
        timestamps.push(
            chrono::DateTime::parse_from_rfc3339(ts)
                .map_err(|e| anyhow!("bad timestamp at row {i}: {e}"))?
                .with_timezone(&chrono::Utc),
        );
        bids.push(bid.parse::<f64>()?);
    }
    Ok(BidSchedule {
        timestamps,
        bids,
        strategy: label.to_string(),
        method: method.to_string(),
    })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va.sqrt() * vb.sqrt())
}
