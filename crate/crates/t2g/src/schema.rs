//! Schema JSON.
//!
//! ```json
//! {
//!   "tables": [
//!     {"name": "store", "columns": [
//!       {"name": "store_id", "kind": "primary_key"},
//!       {"name": "size", "kind": "numerical"}]},
//!     {"name": "sales", "columns": [
//!       {"name": "sale_id", "kind": "primary_key"},
//!       {"name": "store_id", "kind": "foreign_key", "target": "store"},
//!       {"name": "day", "kind": "temporal"}]}
//!   ],
//!   "target_table": "sales",
//!   "task": "regression",
//!   "label_column": "label",
//!   "split_column": "split"
//! }
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use t2g_core::rdb::{ColumnKind, ColumnSpec, Schema, TableSpec, Task};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    tables: Vec<TableFile>,
    target_table: String,
    task: TaskName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split_column: Option<String>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TaskName {
    Classification,
    Regression,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    name: String,
    columns: Vec<ColumnFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ColumnFile {
    name: String,
    kind: KindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<String>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindName {
    PrimaryKey,
    ForeignKey,
    Numerical,
    Categorical,
    Temporal,
}

pub fn parse_schema(text: &str) -> Result<Schema> {
    let file: SchemaFile =
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("schema JSON: {e}")))?;
    let tables = file
        .tables
        .into_iter()
        .map(|t| {
            let columns = t
                .columns
                .into_iter()
                .map(|c| {
                    let kind = match (c.kind, c.target) {
                        (KindName::ForeignKey, Some(target)) => ColumnKind::ForeignKey { target },
                        (KindName::ForeignKey, None) => {
                            return Err(Error::invalid(format!(
                                "foreign key '{}.{}' has no target",
                                t.name, c.name
                            )))
                        }
                        (_, Some(_)) => {
                            return Err(Error::invalid(format!(
                                "column '{}.{}' has a target but is not a foreign key",
                                t.name, c.name
                            )))
                        }
                        (KindName::PrimaryKey, None) => ColumnKind::PrimaryKey,
                        (KindName::Numerical, None) => ColumnKind::Numerical,
                        (KindName::Categorical, None) => ColumnKind::Categorical,
                        (KindName::Temporal, None) => ColumnKind::Temporal,
                    };
                    Ok(ColumnSpec::new(c.name, kind))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TableSpec {
                name: t.name,
                columns,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let task = match (file.task, file.num_classes) {
        (TaskName::Regression, None) => Task::Regression,
        (TaskName::Regression, Some(_)) => {
            return Err(Error::invalid("num_classes given for a regression task"))
        }
        (TaskName::Classification, n) => Task::Classification {
            num_classes: n.unwrap_or(2),
        },
    };
    Ok(Schema::new(
        tables,
        file.target_table,
        task,
        file.label_column,
        file.split_column,
    )?)
}

/// Canonical compact JSON; `parse_schema(schema_json(s)) == s`.
pub fn schema_json(schema: &Schema) -> String {
    let (task, num_classes) = match schema.task {
        Task::Regression => (TaskName::Regression, None),
        Task::Classification { num_classes } => (TaskName::Classification, Some(num_classes)),
    };
    let file = SchemaFile {
        tables: schema
            .tables
            .iter()
            .map(|t| TableFile {
                name: t.name.clone(),
                columns: t
                    .columns
                    .iter()
                    .map(|c| {
                        let (kind, target) = match &c.kind {
                            ColumnKind::PrimaryKey => (KindName::PrimaryKey, None),
                            ColumnKind::ForeignKey { target } => {
                                (KindName::ForeignKey, Some(target.clone()))
                            }
                            ColumnKind::Numerical => (KindName::Numerical, None),
                            ColumnKind::Categorical => (KindName::Categorical, None),
                            ColumnKind::Temporal => (KindName::Temporal, None),
                        };
                        ColumnFile {
                            name: c.name.clone(),
                            kind,
                            target,
                        }
                    })
                    .collect(),
            })
            .collect(),
        target_table: schema.target_table.clone(),
        task,
        num_classes,
        label_column: Some(schema.label_column.clone()),
        split_column: schema.split_column.clone(),
    };
    serde_json::to_string(&file).expect("schema serializes")
}

/// SHA-256 of the canonical schema JSON.
pub fn fingerprint(schema: &Schema) -> [u8; 32] {
    Sha256::digest(schema_json(schema).as_bytes()).into()
}
