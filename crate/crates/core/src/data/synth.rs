//! Synthetic hourly PV + weather-feature + market-price generator.
//!
//! Stands in for non-redistributable measurement archives: a clear-sky-index
//! process drives normalized PV output, forecast-style feature columns are
//! correlated with it (with forecast error that is worst in broken-sky
//! regimes), and DAM/RTM prices follow a daily shape with heavy-tailed
//! imbalance deltas.

use chrono::{Datelike, NaiveDate, TimeZone, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::f64::consts::PI;

use super::{haurwitz_peak, solar_features, DataError, Dataset, Location};
use crate::market::PriceSeries;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub days: u32,
    pub lat: f64,
    pub lon: f64,
    pub start: NaiveDate,
    /// Force `rtm_up >= dam >= rtm_down >= 0` everywhere.
    pub no_arbitrage: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            days: 1461,
            lat: 52.1,
            lon: 5.2,
            start: NaiveDate::from_ymd_opt(2014, 1, 1).unwrap(),
            no_arbitrage: false,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the draw count per call fixed.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn lognormal(rng: &mut ChaCha8Rng, mu: f64, sigma: f64) -> f64 {
    (mu + sigma * normal(rng)).exp()
}

#[derive(Clone, Copy, PartialEq)]
enum PriceState {
    Balanced,
    Deficit,
    Surplus,
}

/// Deterministic synthetic dataset and price series.
///
/// The dataset covers every hour (nights included, pv = 0); prices cover the
/// same hours. Imbalance deltas satisfy `Δup + Δdown >= 0` in at least 99% of
/// hours; rare violating pairs are injected so downstream cluster validation
/// has something to do.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, PriceSeries), DataError> {
    assert!(cfg.days >= 3, "need at least 3 days");
    let site = Location::new(cfg.lat, cfg.lon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let peak = haurwitz_peak();
    let start = Utc
        .from_utc_datetime(&cfg.start.and_hms_opt(0, 0, 0).unwrap());

    let feature_names: Vec<String> = [
        "cloud_fc",
        "temp_fc",
        "wind_fc",
        "clearsky_ghi",
        "zenith",
        "azimuth",
        "hod_cos",
        "hod_sin",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let mut rows = Vec::with_capacity(cfg.days as usize * 24);
    let mut price_rows = Vec::with_capacity(cfg.days as usize * 24);

    let mut ar = 0.0_f64;
    let mut wind = 2.0_f64;
    let mut state = PriceState::Balanced;

    for day in 0..cfg.days as i64 {
        let regime = rng.gen_range(0.15..1.0);
        // Broken-sky days are both more volatile and harder to forecast.
        let broken = 4.0 * regime * (1.0 - regime);
        let vol = 0.03 + 0.22 * broken;
        let fc_err_sd = 0.03 + 0.17 * broken;

        for hod in 0..24u32 {
            let ts = start + chrono::Duration::hours(day * 24 + hod as i64);
            let geom = solar_features(ts, site.lat, site.lon);
            let doy = ts.ordinal() as f64;
            let seasonal = 0.5 - 0.5 * (2.0 * PI * (doy - 15.0) / 365.0).cos();

            ar = 0.8 * ar + vol * normal(&mut rng);
            let csi = (regime + ar).clamp(0.02, 1.05);
            let ghi_norm = geom.clear_sky_ghi / peak;
            let pv = if geom.zenith < 90.0 {
                (csi * ghi_norm).clamp(0.0, 1.0)
            } else {
                0.0
            };

            let cloud_fc = (1.0 - csi + fc_err_sd * normal(&mut rng)).clamp(0.0, 1.2);
            let temp_fc = 8.0 + 14.0 * seasonal + 5.0 * ghi_norm + 1.5 * normal(&mut rng);
            wind = (0.7 * wind + 1.2 * normal(&mut rng)).abs();

            rows.push((
                ts,
                pv,
                vec![
                    cloud_fc,
                    temp_fc,
                    wind,
                    geom.clear_sky_ghi,
                    geom.zenith,
                    geom.azimuth,
                    geom.hod_cos,
                    geom.hod_sin,
                ],
            ));

            // Prices.
            let dam = (38.0
                + 14.0 * (2.0 * PI * (hod as f64 - 9.0) / 24.0).sin()
                + 8.0 * seasonal
                + 4.0 * normal(&mut rng))
            .max(5.0);

            if rng.gen::<f64>() > 0.9 {
                state = match rng.gen_range(0..3u8) {
                    0 => PriceState::Balanced,
                    1 => PriceState::Deficit,
                    _ => PriceState::Surplus,
                };
            }
            let (mut d_up, mut d_down) = match state {
                PriceState::Balanced => (
                    lognormal(&mut rng, 1.6, 0.7),
                    lognormal(&mut rng, 1.4, 0.7),
                ),
                PriceState::Deficit => {
                    let up = lognormal(&mut rng, 3.0, 0.8);
                    let mut down = lognormal(&mut rng, 0.8, 0.6);
                    if rng.gen::<f64>() < 0.15 {
                        down = -lognormal(&mut rng, 0.4, 0.5);
                    }
                    (up, down)
                }
                PriceState::Surplus => {
                    let down = lognormal(&mut rng, 3.0, 0.8);
                    let mut up = lognormal(&mut rng, 0.8, 0.6);
                    if rng.gen::<f64>() < 0.15 {
                        up = -lognormal(&mut rng, 0.4, 0.5);
                    }
                    (up, down)
                }
            };
            // Rare invalid pair: the sum itself goes negative.
            if rng.gen::<f64>() < 0.004 {
                d_down = lognormal(&mut rng, 0.2, 0.4);
                d_up = -d_down - lognormal(&mut rng, 1.0, 0.5);
            }
            if cfg.no_arbitrage {
                d_up = d_up.max(0.0);
                d_down = d_down.max(0.0).min(dam);
            }
            price_rows.push((ts, dam, dam + d_up, dam - d_down));
        }
    }

    let ds = Dataset::from_rows(site, feature_names, rows)?;
    Ok((ds, PriceSeries::from_rows(price_rows)))
}
