//! Time-aligned PV and weather-feature series: ingestion, preprocessing,
//! solar geometry, chronological splitting and synthetic generation.

mod ingest;
mod solar;
mod synth;

pub use ingest::{ingest_csv, read_price_csv, write_dataset_csv, write_price_csv, CsvSchema};
pub use solar::{haurwitz_ghi, haurwitz_peak, solar_features, SolarGeometry};
pub use synth::{synth_generate, SynthConfig};

use chrono::{DateTime, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default normalized-power cap for outlier removal.
pub const DEFAULT_PV_CAP: f64 = 1.05;
/// Records above this multiple of the clear-sky index bound are dropped.
pub const CLEAR_SKY_OUTLIER_FACTOR: f64 = 1.3;
/// Sub-hourly aggregation drops hours with less than this coverage.
pub const MIN_HOUR_COVERAGE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column `{0}` missing from header")]
    MissingColumn(String),
    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(DateTime<Utc>),
    #[error("unparseable value in column `{column}` at data row {row}")]
    BadCell { row: usize, column: String },
    #[error("timestamps are not strictly increasing at {0}")]
    UnsortedTimestamps(DateTime<Utc>),
    #[error("record at {0} has wrong feature arity")]
    ArityMismatch(DateTime<Utc>),
    #[error("no records remain after cleaning")]
    EmptyAfterCleaning,
    #[error("{0} partition is empty")]
    EmptyPartition(&'static str),
    #[error("train_end {train_end} must precede cal_end {cal_end}")]
    BadSplit {
        train_end: NaiveDate,
        cal_end: NaiveDate,
    },
    #[error("latitude {0} outside [-90, 90]")]
    BadLatitude(f64),
    #[error("preprocessing cap must exceed 1, got {0}")]
    BadCap(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Site coordinates in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub lat: f64,
    pub lon: f64,
}

impl Location {
    pub fn new(lat: f64, lon: f64) -> Result<Self, DataError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(DataError::BadLatitude(lat));
        }
        Ok(Self { lat, lon })
    }
}

/// One hourly (or sub-hourly, pre-aggregation) observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub timestamp: DateTime<Utc>,
    /// Normalized power in kW per kWp.
    pub pv: f64,
    pub features: Vec<f64>,
    /// Sun above the horizon at this timestamp.
    pub day_flag: bool,
}

/// Records sorted strictly by timestamp, all sharing one feature arity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    site: Location,
    feature_names: Vec<String>,
    records: Vec<Record>,
}

impl Dataset {
    /// Build a dataset from `(timestamp, pv, features)` rows, computing the
    /// day flag from solar geometry at the site.
    pub fn from_rows(
        site: Location,
        feature_names: Vec<String>,
        rows: Vec<(DateTime<Utc>, f64, Vec<f64>)>,
    ) -> Result<Self, DataError> {
        let mut records = Vec::with_capacity(rows.len());
        let mut prev: Option<DateTime<Utc>> = None;
        for (ts, pv, features) in rows {
            if features.len() != feature_names.len() {
                return Err(DataError::ArityMismatch(ts));
            }
            match prev {
                Some(p) if ts == p => return Err(DataError::DuplicateTimestamp(ts)),
                Some(p) if ts < p => return Err(DataError::UnsortedTimestamps(ts)),
                _ => {}
            }
            prev = Some(ts);
            let geom = solar_features(ts, site.lat, site.lon);
            records.push(Record {
                timestamp: ts,
                pv,
                features,
                day_flag: geom.zenith < 90.0,
            });
        }
        Ok(Self {
            site,
            feature_names,
            records,
        })
    }

    pub fn site(&self) -> Location {
        self.site
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.pv).collect()
    }

    pub fn timestamps(&self) -> Vec<DateTime<Utc>> {
        self.records.iter().map(|r| r.timestamp).collect()
    }

    /// Values of one feature column.
    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.features[idx]).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Keep sunrise-hour records only.
    pub fn day_only(&self) -> Dataset {
        Dataset {
            site: self.site,
            feature_names: self.feature_names.clone(),
            records: self
                .records
                .iter()
                .filter(|r| r.day_flag)
                .cloned()
                .collect(),
        }
    }

    /// Append solar-geometry feature columns computed from the timestamps.
    /// Columns that already exist by name are left untouched.
    pub fn with_solar_features(&self) -> Dataset {
        let wanted = ["clearsky_ghi", "zenith", "azimuth", "hod_cos", "hod_sin"];
        let missing: Vec<&str> = wanted
            .iter()
            .copied()
            .filter(|n| self.feature_index(n).is_none())
            .collect();
        if missing.is_empty() {
            return self.clone();
        }
        let mut names = self.feature_names.clone();
        names.extend(missing.iter().map(|s| s.to_string()));
        let records = self
            .records
            .iter()
            .map(|r| {
                let g = solar_features(r.timestamp, self.site.lat, self.site.lon);
                let mut features = r.features.clone();
                for name in &missing {
                    features.push(match *name {
                        "clearsky_ghi" => g.clear_sky_ghi,
                        "zenith" => g.zenith,
                        "azimuth" => g.azimuth,
                        "hod_cos" => g.hod_cos,
                        "hod_sin" => g.hod_sin,
                        _ => unreachable!(),
                    });
                }
                Record {
                    features,
                    ..r.clone()
                }
            })
            .collect();
        Dataset {
            site: self.site,
            feature_names: names,
            records,
        }
    }

    fn with_records(&self, records: Vec<Record>) -> Dataset {
        Dataset {
            site: self.site,
            feature_names: self.feature_names.clone(),
            records,
        }
    }
}

/// Chronological split boundaries: `[.., train_end)` trains,
/// `[train_end, cal_end)` calibrates, `[cal_end, ..)` tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: NaiveDate,
    pub cal_end: NaiveDate,
}

impl SplitSpec {
    pub fn new(train_end: NaiveDate, cal_end: NaiveDate) -> Result<Self, DataError> {
        if train_end >= cal_end {
            return Err(DataError::BadSplit { train_end, cal_end });
        }
        Ok(Self { train_end, cal_end })
    }
}

/// Split into train/calibration/test, keeping day records only.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let mut train = Vec::new();
    let mut cal = Vec::new();
    let mut test = Vec::new();
    for r in ds.records() {
        if !r.day_flag {
            continue;
        }
        let d = r.timestamp.date_naive();
        if d < spec.train_end {
            train.push(r.clone());
        } else if d < spec.cal_end {
            cal.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    if train.is_empty() {
        return Err(DataError::EmptyPartition("train"));
    }
    if cal.is_empty() {
        return Err(DataError::EmptyPartition("calibration"));
    }
    if test.is_empty() {
        return Err(DataError::EmptyPartition("test"));
    }
    Ok((
        ds.with_records(train),
        ds.with_records(cal),
        ds.with_records(test),
    ))
}

/// Clean a raw series: aggregate sub-hourly rows to hourly means, zero night
/// values, drop outliers and clamp to `[0, 1]`.
///
/// Outliers are records with `pv > cap` or `pv` above
/// [`CLEAR_SKY_OUTLIER_FACTOR`] times the normalized clear-sky bound. Hours
/// with under half of the inferred sub-hourly cadence present are dropped.
pub fn preprocess(raw: &Dataset, cap: f64) -> Result<Dataset, DataError> {
    if cap <= 1.0 {
        return Err(DataError::BadCap(cap));
    }
    let hourly = aggregate_hourly(raw)?;
    let peak = haurwitz_peak();
    let mut kept = Vec::with_capacity(hourly.records.len());
    for r in &hourly.records {
        let mut rec = r.clone();
        if !rec.day_flag {
            rec.pv = 0.0;
        } else {
            let geom = solar_features(rec.timestamp, hourly.site.lat, hourly.site.lon);
            let csi_bound = geom.clear_sky_ghi / peak;
            if rec.pv > cap || rec.pv > CLEAR_SKY_OUTLIER_FACTOR * csi_bound {
                continue;
            }
            rec.pv = rec.pv.clamp(0.0, 1.0);
        }
        kept.push(rec);
    }
    if kept.is_empty() {
        return Err(DataError::EmptyAfterCleaning);
    }
    Ok(hourly.with_records(kept))
}

/// Most frequent positive gap between consecutive timestamps, in seconds.
fn modal_cadence_secs(records: &[Record]) -> i64 {
    use std::collections::BTreeMap;
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for w in records.windows(2) {
        let gap = (w[1].timestamp - w[0].timestamp).num_seconds();
        if gap > 0 {
            *counts.entry(gap).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(gap, _)| gap)
        .unwrap_or(3600)
}

fn aggregate_hourly(raw: &Dataset) -> Result<Dataset, DataError> {
    let cadence = modal_cadence_secs(&raw.records);
    if cadence >= 3600 {
        return Ok(raw.clone());
    }
    let expected = (3600 / cadence) as f64;
    let p = raw.n_features();
    let mut rows: Vec<(DateTime<Utc>, f64, Vec<f64>)> = Vec::new();
    let mut i = 0;
    while i < raw.records.len() {
        let hour = truncate_hour(raw.records[i].timestamp);
        let mut j = i;
        let mut pv_sum = 0.0;
        let mut feat_sum = vec![0.0; p];
        while j < raw.records.len() && truncate_hour(raw.records[j].timestamp) == hour {
            pv_sum += raw.records[j].pv;
            for (s, v) in feat_sum.iter_mut().zip(&raw.records[j].features) {
                *s += v;
            }
            j += 1;
        }
        let count = (j - i) as f64;
        if count / expected >= MIN_HOUR_COVERAGE {
            let features = feat_sum.into_iter().map(|s| s / count).collect();
            rows.push((hour, pv_sum / count, features));
        }
        i = j;
    }
    Dataset::from_rows(raw.site, raw.feature_names.clone(), rows)
}

fn truncate_hour(ts: DateTime<Utc>) -> DateTime<Utc> {
    ts.with_minute(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
        .expect("hour truncation")
}
