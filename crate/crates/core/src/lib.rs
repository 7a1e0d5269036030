//! Day-ahead PV power bidding toolkit.
//!
//! The crate covers the full chain from data to market decisions:
//!
//! - [`data`] — CSV ingestion, preprocessing, solar geometry, chronological
//!   splits and a synthetic weather/price generator.
//! - [`models`] — point prediction (OLS, random forest), linear quantile
//!   regression and a KNN residual index for difficulty estimates.
//! - [`conformal`] — split conformal predictors M1–M5: plain intervals,
//!   KNN-normalized scores, Mondrian binning and conformal predictive
//!   distributions.
//! - [`evaluation`] — adjusted R², coverage, interval score and WIS.
//! - [`lp`] — dense bounded-variable simplex used by quantile regression and
//!   the CVaR bidding program.
//! - [`market`] — imbalance-price clustering, scenario construction, the
//!   bidding strategies and the backtest ledger.

pub mod conformal;
pub mod data;
pub mod evaluation;
pub mod lp;
pub mod market;
pub mod models;
