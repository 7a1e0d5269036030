//! Scenario construction and day-ahead-market quantity bidding: imbalance
//! price-delta clustering, PV quantile scenarios, the five bidding strategies
//! and the realized-price backtest.

mod cluster;
mod eum;

pub use cluster::{cluster_deltas, DeltaCluster, DeltaClusterSet};
pub use eum::{solve_eum_cvar_lp, strategy_eum, strategy_eum_cvar, EumCvarOutcome};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

use crate::conformal::UncertaintyModel;
use crate::data::Dataset;
use crate::lp::LpError;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("need at least {needed} distinct delta points, got {got}")]
    TooFewDeltaPoints { needed: usize, got: usize },
    #[error("every cluster violates delta validity; cannot merge")]
    NoValidCluster,
    #[error("cluster has zero delta sum; fractile undefined")]
    ZeroDeltaSum,
    #[error("no price row at {0}")]
    MissingPrice(DateTime<Utc>),
    #[error("series are misaligned: {0}")]
    Misaligned(String),
    #[error("gamma must lie in (0, 1), got {0}")]
    BadGamma(f64),
    #[error("beta must lie in [0, 1], got {0}")]
    BadBeta(f64),
    #[error("scenario matrix is empty")]
    EmptyScenarios,
    #[error("bidding program failed: {0}")]
    Lp(#[from] LpError),
    #[error("bidding program ended {0}")]
    BadLpStatus(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Day-ahead and real-time prices per timestep, €/MWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    timestamps: Vec<DateTime<Utc>>,
    dam: Vec<f64>,
    rtm_up: Vec<f64>,
    rtm_down: Vec<f64>,
    #[serde(skip)]
    index: BTreeMap<DateTime<Utc>, usize>,
}

impl PriceSeries {
    pub fn from_rows(rows: Vec<(DateTime<Utc>, f64, f64, f64)>) -> Self {
        let mut s = Self {
            timestamps: Vec::with_capacity(rows.len()),
            dam: Vec::with_capacity(rows.len()),
            rtm_up: Vec::with_capacity(rows.len()),
            rtm_down: Vec::with_capacity(rows.len()),
            index: BTreeMap::new(),
        };
        for (ts, dam, up, down) in rows {
            s.index.insert(ts, s.timestamps.len());
            s.timestamps.push(ts);
            s.dam.push(dam);
            s.rtm_up.push(up);
            s.rtm_down.push(down);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn row(&self, i: usize) -> (DateTime<Utc>, f64, f64, f64) {
        (
            self.timestamps[i],
            self.dam[i],
            self.rtm_up[i],
            self.rtm_down[i],
        )
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn lookup(&self, ts: DateTime<Utc>) -> Option<(f64, f64, f64)> {
        // The index is skipped by serde; fall back to search when absent.
        if let Some(&i) = self.index.get(&ts) {
            return Some((self.dam[i], self.rtm_up[i], self.rtm_down[i]));
        }
        self.timestamps
            .binary_search(&ts)
            .ok()
            .map(|i| (self.dam[i], self.rtm_up[i], self.rtm_down[i]))
    }

    /// Rows restricted to the given timestamps, in their order.
    pub fn aligned_to(&self, timestamps: &[DateTime<Utc>]) -> Result<PriceSeries, MarketError> {
        let mut rows = Vec::with_capacity(timestamps.len());
        for &ts in timestamps {
            let (d, u, w) = self.lookup(ts).ok_or(MarketError::MissingPrice(ts))?;
            rows.push((ts, d, u, w));
        }
        Ok(PriceSeries::from_rows(rows))
    }

    /// Up and down imbalance price deltas per timestep.
    pub fn deltas(&self) -> Vec<(f64, f64)> {
        (0..self.len())
            .map(|i| (self.rtm_up[i] - self.dam[i], self.dam[i] - self.rtm_down[i]))
            .collect()
    }
}

/// Per-timestep PV quantile scenarios plus aligned prices and the price-delta
/// clusters used as RTM scenarios.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioMatrix {
    pub timestamps: Vec<DateTime<Utc>>,
    pub dam: Vec<f64>,
    /// `preds[t][n]`, non-decreasing in `n`, clamped to `[0, 1]`.
    pub preds: Vec<Vec<f64>>,
    pub clusters: DeltaClusterSet,
}

impl ScenarioMatrix {
    pub fn n_timesteps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_scenarios(&self) -> usize {
        self.preds.first().map_or(0, Vec::len)
    }

    /// Restrict to the first `window` timesteps.
    pub fn truncated(&self, window: usize) -> ScenarioMatrix {
        let w = window.min(self.n_timesteps());
        ScenarioMatrix {
            timestamps: self.timestamps[..w].to_vec(),
            dam: self.dam[..w].to_vec(),
            preds: self.preds[..w].to_vec(),
            clusters: self.clusters.clone(),
        }
    }
}

/// Quantile grid for `n` scenarios: `τ_j = j / (n + 1)`, which reproduces the
/// 0.01..0.99 grid at `n = 99`.
pub fn scenario_taus(n: usize) -> Vec<f64> {
    (1..=n).map(|j| j as f64 / (n + 1) as f64).collect()
}

/// PV quantile scenarios from a calibrated predictor for every test
/// timestep, with prices aligned 1:1.
pub fn build_scenarios<P: UncertaintyModel + ?Sized>(
    predictor: &P,
    test: &Dataset,
    prices: &PriceSeries,
    clusters: &DeltaClusterSet,
    n_scenarios: usize,
) -> Result<ScenarioMatrix, MarketError> {
    let taus = scenario_taus(n_scenarios);
    let mut timestamps = Vec::with_capacity(test.len());
    let mut dam = Vec::with_capacity(test.len());
    let mut preds = Vec::with_capacity(test.len());
    for r in test.records() {
        let (d, _, _) = prices
            .lookup(r.timestamp)
            .ok_or(MarketError::MissingPrice(r.timestamp))?;
        let mut q = predictor.quantiles(&r.features, &taus);
        for v in &mut q {
            *v = v.clamp(0.0, 1.0);
        }
        q.sort_by(|a, b| a.partial_cmp(b).unwrap());
        timestamps.push(r.timestamp);
        dam.push(d);
        preds.push(q);
    }
    Ok(ScenarioMatrix {
        timestamps,
        dam,
        preds,
        clusters: clusters.clone(),
    })
}

/// A quantity bid per timestep, in normalized power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidSchedule {
    pub timestamps: Vec<DateTime<Utc>>,
    pub bids: Vec<f64>,
    pub strategy: String,
    pub method: String,
}

impl BidSchedule {
    pub fn len(&self) -> usize {
        self.bids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }
}

/// Newsvendor constraint space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NewsvendorConstraint {
    None,
    /// Clamp each cluster fractile into `[0.5 - c, 0.5 + c]`.
    Probability(f64),
    /// Clamp each bid into `[ŷ(1-c), ŷ(1+c)] ∩ [0, 1]`.
    Decision(f64),
}

/// Bid the median of the uncertainty range.
pub fn strategy_trust<P: UncertaintyModel + ?Sized>(predictor: &P, test: &Dataset) -> BidSchedule {
    per_timestep(predictor, test, "trust", |p, x| p.quantile(x, 0.5))
}

/// Bid the 0.05 quantile (the lower bound of the α = 0.10 interval).
pub fn strategy_worst_case<P: UncertaintyModel + ?Sized>(
    predictor: &P,
    test: &Dataset,
) -> BidSchedule {
    per_timestep(predictor, test, "worst_case", |p, x| p.quantile(x, 0.05))
}

/// Critical fractile of one price-delta cluster, clamped into [0.01, 0.99].
pub fn newsvendor_fractile(cluster: &DeltaCluster) -> Result<f64, MarketError> {
    let denom = cluster.delta_down + cluster.delta_up;
    if denom == 0.0 {
        return Err(MarketError::ZeroDeltaSum);
    }
    Ok((cluster.delta_down / denom).clamp(0.01, 0.99))
}

/// Bid the quantile at the cluster-weighted critical fractile.
pub fn strategy_newsvendor<P: UncertaintyModel + ?Sized>(
    predictor: &P,
    test: &Dataset,
    clusters: &DeltaClusterSet,
    constraint: NewsvendorConstraint,
) -> Result<BidSchedule, MarketError> {
    let mut weighted = 0.0;
    for c in clusters.clusters() {
        let mut nv = newsvendor_fractile(c)?;
        if let NewsvendorConstraint::Probability(band) = constraint {
            nv = nv.clamp(0.5 - band, 0.5 + band);
        }
        weighted += c.weight * nv;
    }
    let tau = (weighted / clusters.total_weight()).clamp(0.01, 0.99);
    let label = match constraint {
        NewsvendorConstraint::None => "newsvendor".to_string(),
        NewsvendorConstraint::Probability(c) => format!("newsvendor_prob{:02}", (c * 100.0).round()),
        NewsvendorConstraint::Decision(c) => format!("newsvendor_dec{:02}", (c * 100.0).round()),
    };
    let mut schedule = per_timestep(predictor, test, &label, |p, x| p.quantile(x, tau));
    if let NewsvendorConstraint::Decision(band) = constraint {
        for (bid, r) in schedule.bids.iter_mut().zip(test.records()) {
            let point = predictor.point(&r.features);
            let lo = (point * (1.0 - band)).clamp(0.0, 1.0);
            let hi = (point * (1.0 + band)).clamp(0.0, 1.0);
            *bid = bid.clamp(lo, hi);
        }
    }
    Ok(schedule)
}

/// Bid the actual output; zero imbalance by construction.
pub fn strategy_perfect(test: &Dataset) -> BidSchedule {
    BidSchedule {
        timestamps: test.timestamps(),
        bids: test.targets(),
        strategy: "perfect".into(),
        method: "actual".into(),
    }
}

fn per_timestep<P: UncertaintyModel + ?Sized>(
    predictor: &P,
    test: &Dataset,
    strategy: &str,
    f: impl Fn(&P, &[f64]) -> f64,
) -> BidSchedule {
    let bids = test
        .records()
        .iter()
        .map(|r| f(predictor, &r.features).clamp(0.0, 1.0))
        .collect();
    BidSchedule {
        timestamps: test.timestamps(),
        bids,
        strategy: strategy.into(),
        method: String::new(),
    }
}

/// One settled timestep of a backtest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub timestamp: DateTime<Utc>,
    pub bid: f64,
    pub actual: f64,
    pub dam: f64,
    pub rtm_up: f64,
    pub rtm_down: f64,
    /// DAM revenue `bid · dam`.
    pub revenue: f64,
    /// Deficit bought back: `(bid - actual)⁺ · rtm_up`.
    pub deficit_cost: f64,
    /// Surplus sold: `(actual - bid)⁺ · rtm_down`.
    pub surplus_revenue: f64,
    pub profit: f64,
}

/// Totals and per-timestep ledger for one bid schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestReport {
    pub strategy: String,
    pub method: String,
    pub profit: f64,
    /// `100 · Σ|bid - actual| / Σ actual`.
    pub imbalance_pct: f64,
    pub ledger: Vec<LedgerEntry>,
}

impl BacktestReport {
    /// `timestamp, bid, actual, dam, rtm_up, rtm_down, profit` rows.
    pub fn write_ledger_csv<W: Write>(&self, w: W) -> Result<(), MarketError> {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(["timestamp", "bid", "actual", "dam", "rtm_up", "rtm_down", "profit"])?;
        for e in &self.ledger {
            writer.write_record(&[
                e.timestamp.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
                format!("{}", e.bid),
                format!("{}", e.actual),
                format!("{}", e.dam),
                format!("{}", e.rtm_up),
                format!("{}", e.rtm_down),
                format!("{}", e.profit),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Settle a schedule against actual output and realized prices.
///
/// Per timestep: `profit = bid·dam − (bid−actual)⁺·rtm_up +
/// (actual−bid)⁺·rtm_down`.
pub fn backtest(
    bids: &BidSchedule,
    actuals: &Dataset,
    prices: &PriceSeries,
) -> Result<BacktestReport, MarketError> {
    let actual_by_ts: BTreeMap<_, _> = actuals
        .records()
        .iter()
        .map(|r| (r.timestamp, r.pv))
        .collect();
    let mut ledger = Vec::with_capacity(bids.len());
    let mut profit = 0.0;
    let mut abs_dev = 0.0;
    let mut total_actual = 0.0;
    for (&ts, &bid) in bids.timestamps.iter().zip(&bids.bids) {
        let actual = *actual_by_ts
            .get(&ts)
            .ok_or_else(|| MarketError::Misaligned(format!("no actual at {ts}")))?;
        let (dam, up, down) = prices.lookup(ts).ok_or(MarketError::MissingPrice(ts))?;
        let revenue = bid * dam;
        let deficit_cost = (bid - actual).max(0.0) * up;
        let surplus_revenue = (actual - bid).max(0.0) * down;
        let p = revenue - deficit_cost + surplus_revenue;
        profit += p;
        abs_dev += (bid - actual).abs();
        total_actual += actual;
        ledger.push(LedgerEntry {
            timestamp: ts,
            bid,
            actual,
            dam,
            rtm_up: up,
            rtm_down: down,
            revenue,
            deficit_cost,
            surplus_revenue,
            profit: p,
        });
    }
    let imbalance_pct = if abs_dev == 0.0 {
        0.0
    } else {
        100.0 * abs_dev / total_actual
    };
    Ok(BacktestReport {
        strategy: bids.strategy.clone(),
        method: bids.method.clone(),
        profit,
        imbalance_pct,
        ledger,
    })
}
