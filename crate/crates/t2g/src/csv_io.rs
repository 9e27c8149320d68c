//! One CSV file per table, `<dir>/<table>.csv`, with a header row naming exactly
//! the schema's columns (plus the label and optional split column on the target
//! table). Empty cells are missing values.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use t2g_core::rdb::{ColumnKind, RawTable, RdbInstance, Schema};

use crate::error::{Error, Result};

pub fn table_path(dir: &Path, table: &str) -> PathBuf {
    dir.join(format!("{table}.csv"))
}

/// Seconds since the Unix epoch (UTC) from a number, an RFC 3339 timestamp, an
/// ISO date-time without offset, or an ISO date.
pub fn parse_temporal(s: &str) -> Option<f64> {
    if let Ok(v) = s.parse::<f64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp() as f64);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp() as f64)
}

fn cell(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Reads every table of `schema` from `dir` without further processing.
pub fn read_raw(schema: &Schema, dir: &Path) -> Result<Vec<RawTable>> {
    schema
        .tables
        .iter()
        .map(|spec| {
            let path = table_path(dir, &spec.name);
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_path(&path)
                .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
            let header: Vec<String> = reader
                .headers()
                .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?
                .iter()
                .map(|h| h.trim().to_string())
                .collect();
            let is_target = spec.name == schema.target_table;
            let mut expected: Vec<&str> = spec.columns.iter().map(|c| c.name.as_str()).collect();
            if is_target {
                expected.push(&schema.label_column);
                if let Some(s) = &schema.split_column {
                    expected.push(s);
                }
            }
            let pos: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
            if pos.len() != header.len() {
                return Err(Error::invalid(format!("{}: duplicate header column", path.display())));
            }
            if let Some(missing) = expected.iter().find(|c| !pos.contains_key(*c)) {
                return Err(Error::invalid(format!("{}: missing column '{missing}'", path.display())));
            }
            if let Some(extra) = header.iter().find(|h| !expected.contains(&h.as_str())) {
                return Err(Error::invalid(format!("{}: undeclared column '{extra}'", path.display())));
            }

            let mut raw = RawTable {
                name: spec.name.clone(),
                ..Default::default()
            };
            let fk_cols: Vec<usize> = spec.foreign_keys().map(|(c, _)| pos[c]).collect();
            let num_cols: Vec<(usize, bool)> = spec
                .numeric_columns()
                .map(|c| (pos[c.name.as_str()], c.kind == ColumnKind::Temporal))
                .collect();
            let cat_cols: Vec<usize> = spec.categorical_columns().map(|c| pos[c.name.as_str()]).collect();
            let pk = pos[spec.primary_key().name.as_str()];
            raw.foreign_keys = vec![Vec::new(); fk_cols.len()];
            raw.numeric = vec![Vec::new(); num_cols.len()];
            raw.categorical = vec![Vec::new(); cat_cols.len()];
            let mut labels = Vec::new();
            let mut splits = Vec::new();
            for (line, rec) in reader.records().enumerate() {
                let rec = rec.map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
                let row = line + 2;
                let key = cell(&rec[pk]).ok_or_else(|| {
                    Error::invalid(format!("{}:{row}: empty primary key", path.display()))
                })?;
                raw.keys.push(key);
                for (dst, &c) in raw.foreign_keys.iter_mut().zip(&fk_cols) {
                    dst.push(cell(&rec[c]));
                }
                for (dst, &(c, temporal)) in raw.numeric.iter_mut().zip(&num_cols) {
                    let v = match cell(&rec[c]) {
                        None => None,
                        Some(s) => {
                            let parsed = if temporal { parse_temporal(&s) } else { s.parse::<f64>().ok() };
                            Some(parsed.filter(|v| v.is_finite()).ok_or_else(|| {
                                Error::invalid(format!(
                                    "{}:{row}: cannot parse '{s}' in column '{}'",
                                    path.display(),
                                    header[c]
                                ))
                            })?)
                        }
                    };
                    dst.push(v);
                }
                for (dst, &c) in raw.categorical.iter_mut().zip(&cat_cols) {
                    dst.push(cell(&rec[c]));
                }
                if is_target {
                    labels.push(cell(&rec[pos[schema.label_column.as_str()]]));
                    if let Some(s) = &schema.split_column {
                        splits.push(cell(&rec[pos[s.as_str()]]));
                    }
                }
            }
            if is_target {
                raw.labels = Some(labels);
                if schema.split_column.is_some() {
                    raw.splits = Some(splits);
                }
            }
            Ok(raw)
        })
        .collect()
}

/// Loads and resolves the database; numeric columns are left unstandardized.
pub fn load_rdb(schema: &Schema, dir: &Path) -> Result<RdbInstance> {
    let raw = read_raw(schema, dir)?;
    Ok(RdbInstance::from_raw(schema.clone(), raw)?)
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes raw tables in schema column order.
pub fn write_raw(schema: &Schema, tables: &[RawTable], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    for (spec, raw) in schema.tables.iter().zip(tables) {
        let path = table_path(dir, &spec.name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let is_target = spec.name == schema.target_table;
        let mut header: Vec<String> = spec.columns.iter().map(|c| c.name.clone()).collect();
        if is_target {
            header.push(schema.label_column.clone());
            if let Some(s) = &schema.split_column {
                header.push(s.clone());
            }
        }
        let wrap = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
        w.write_record(&header).map_err(wrap)?;
        for r in 0..raw.row_count() {
            let (mut fk, mut num, mut cat) = (0, 0, 0);
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            for c in &spec.columns {
                rec.push(match c.kind {
                    ColumnKind::PrimaryKey => raw.keys[r].clone(),
                    ColumnKind::ForeignKey { .. } => {
                        fk += 1;
                        raw.foreign_keys[fk - 1][r].clone().unwrap_or_default()
                    }
                    ColumnKind::Numerical | ColumnKind::Temporal => {
                        num += 1;
                        fmt_opt_f64(raw.numeric[num - 1][r])
                    }
                    ColumnKind::Categorical => {
                        cat += 1;
                        raw.categorical[cat - 1][r].clone().unwrap_or_default()
                    }
                });
            }
            if is_target {
                rec.push(raw.labels.as_ref().and_then(|l| l[r].clone()).unwrap_or_default());
                if schema.split_column.is_some() {
                    rec.push(raw.splits.as_ref().and_then(|s| s[r].clone()).unwrap_or_default());
                }
            }
            w.write_record(&rec).map_err(wrap)?;
        }
        w.flush().map_err(Error::io(&path))?;
    }
    Ok(())
}

/// Total size of the schema's CSV files.
pub fn csv_bytes(schema: &Schema, dir: &Path) -> Result<u64> {
    schema.tables.iter().try_fold(0, |acc, t| {
        let p = table_path(dir, &t.name);
        Ok(acc + fs::metadata(&p).map_err(Error::io(&p))?.len())
    })
}
