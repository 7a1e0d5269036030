//! CSV ingestion and emission.
//!
//! Dataset files carry a header row with a `timestamp` column (ISO-8601), a
//! `pv` column, and any number of numeric feature columns. Price files carry
//! `timestamp, dam, rtm_up, rtm_down` in €/MWh.

use std::path::Path;

use chrono::{DateTime, Utc};

use super::{DataError, Dataset, Location};
use crate::market::PriceSeries;

/// Column mapping and site for ingestion. Every header column other than the
/// timestamp and target becomes a feature, in header order.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub timestamp_col: String,
    pub pv_col: String,
    pub site: Location,
}

impl CsvSchema {
    pub fn standard(site: Location) -> Self {
        Self {
            timestamp_col: "timestamp".into(),
            pv_col: "pv".into(),
            site,
        }
    }
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = chrono::NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    None
}

/// Read a dataset CSV. Rows are sorted by timestamp; duplicate timestamps and
/// unparseable cells are rejected, citing the offending data row.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let ts_idx = headers
        .iter()
        .position(|h| h == schema.timestamp_col)
        .ok_or_else(|| DataError::MissingColumn(schema.timestamp_col.clone()))?;
    let pv_idx = headers
        .iter()
        .position(|h| h == schema.pv_col)
        .ok_or_else(|| DataError::MissingColumn(schema.pv_col.clone()))?;
    let feature_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != ts_idx && *i != pv_idx)
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut rows: Vec<(DateTime<Utc>, f64, Vec<f64>)> = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_no + 1; // 1-based data row, header excluded
        let ts = parse_timestamp(&record[ts_idx]).ok_or_else(|| DataError::BadCell {
            row,
            column: schema.timestamp_col.clone(),
        })?;
        let pv: f64 = record[pv_idx].trim().parse().map_err(|_| DataError::BadCell {
            row,
            column: schema.pv_col.clone(),
        })?;
        let mut features = Vec::with_capacity(feature_cols.len());
        for (idx, name) in &feature_cols {
            let v: f64 = record[*idx].trim().parse().map_err(|_| DataError::BadCell {
                row,
                column: name.clone(),
            })?;
            features.push(v);
        }
        rows.push((ts, pv, features));
    }
    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(DataError::DuplicateTimestamp(w[0].0));
        }
    }
    Dataset::from_rows(
        schema.site,
        feature_cols.into_iter().map(|(_, n)| n).collect(),
        rows,
    )
}

pub fn write_dataset_csv(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string(), "pv".to_string()];
    header.extend(ds.feature_names().iter().cloned());
    writer.write_record(&header)?;
    for r in ds.records() {
        let mut row = vec![
            r.timestamp.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            format!("{}", r.pv),
        ];
        row.extend(r.features.iter().map(|v| format!("{v}")));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_price_csv(path: &Path) -> Result<PriceSeries, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.into()))
    };
    let (ti, di, ui, wi) = (idx("timestamp")?, idx("dam")?, idx("rtm_up")?, idx("rtm_down")?);
    let mut rows: Vec<(DateTime<Utc>, f64, f64, f64)> = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_no + 1;
        let ts = parse_timestamp(&record[ti]).ok_or_else(|| DataError::BadCell {
            row,
            column: "timestamp".into(),
        })?;
        let num = |i: usize, name: &str| -> Result<f64, DataError> {
            record[i].trim().parse().map_err(|_| DataError::BadCell {
                row,
                column: name.into(),
            })
        };
        rows.push((ts, num(di, "dam")?, num(ui, "rtm_up")?, num(wi, "rtm_down")?));
    }
    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(DataError::DuplicateTimestamp(w[0].0));
        }
    }
    Ok(PriceSeries::from_rows(rows))
}

pub fn write_price_csv(prices: &PriceSeries, path: &Path) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["timestamp", "dam", "rtm_up", "rtm_down"])?;
    for i in 0..prices.len() {
        let (ts, dam, up, down) = prices.row(i);
        writer.write_record(&[
            ts.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            format!("{dam}"),
            format!("{up}"),
            format!("{down}"),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
