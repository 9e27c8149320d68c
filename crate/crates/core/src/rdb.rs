//! Relational database model: schema, loaded row data, imputation and
//! standardization.
//!
//! Text parsing lives in the `t2g` crate; it hands over [`RawTable`]s whose cells
//! are already split into typed columns, and [`RdbInstance::from_raw`] resolves
//! keys, indexes categories, assigns splits and imputes missing numbers.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numcore::{Mat, population_std};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    PrimaryKey,
    ForeignKey { target: String },
    Numerical,
    Categorical,
    Temporal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn is_attribute(&self) -> bool {
        matches!(
            self.kind,
            ColumnKind::Numerical | ColumnKind::Categorical | ColumnKind::Temporal
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableSpec {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
}

impl TableSpec {
    pub fn primary_key(&self) -> &ColumnSpec {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::PrimaryKey)
            .expect("validated schema has a primary key")
    }

    pub fn foreign_keys(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.columns.iter().filter_map(|c| match &c.kind {
            ColumnKind::ForeignKey { target } => Some((c.name.as_str(), target.as_str())),
            _ => None,
        })
    }

    /// Numerical and temporal columns, in declaration order.
    pub fn numeric_columns(&self) -> impl Iterator<Item = &ColumnSpec> + '_ {
        self.columns
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::Numerical | ColumnKind::Temporal))
    }

    pub fn categorical_columns(&self) -> impl Iterator<Item = &ColumnSpec> + '_ {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Categorical)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classification { num_classes: usize },
    Regression,
}

impl Task {
    /// Width of the label matrix: classes for classification, 1 for regression.
    pub fn label_width(&self) -> usize {
        match self {
            Task::Classification { num_classes } => *num_classes,
            Task::Regression => 1,
        }
    }
}

/// Foreign-key link from `child.column` to the primary key of `parent`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Link {
    pub child: usize,
    pub column: String,
    pub parent: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub tables: Vec<TableSpec>,
    pub target_table: String,
    pub task: Task,
    pub label_column: String,
    pub split_column: Option<String>,
}

pub const DEFAULT_LABEL_COLUMN: &str = "label";

impl Schema {
    /// Validates and builds a schema.
    pub fn new(
        tables: Vec<TableSpec>,
        target_table: impl Into<String>,
        task: Task,
        label_column: Option<String>,
        split_column: Option<String>,
    ) -> Result<Self> {
        let schema = Self {
            tables,
            target_table: target_table.into(),
            task,
            label_column: label_column.unwrap_or_else(|| DEFAULT_LABEL_COLUMN.to_string()),
            split_column,
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Schema(m));
        if self.tables.is_empty() {
            return err("schema has no tables".into());
        }
        for (i, t) in self.tables.iter().enumerate() {
            if self.tables[..i].iter().any(|o| o.name == t.name) {
                return err(format!("duplicate table name '{}'", t.name));
            }
            for (j, c) in t.columns.iter().enumerate() {
                if t.columns[..j].iter().any(|o| o.name == c.name) {
                    return err(format!("duplicate column '{}.{}'", t.name, c.name));
                }
            }
            let pks = t
                .columns
                .iter()
                .filter(|c| c.kind == ColumnKind::PrimaryKey)
                .count();
            match pks {
                0 => return err(format!("table '{}' has no primary key", t.name)),
                1 => {}
                _ => return err(format!("table '{}' has {pks} primary keys", t.name)),
            }
            for (col, target) in t.foreign_keys() {
                if !self.tables.iter().any(|o| o.name == target) {
                    return err(format!(
                        "foreign key '{}.{col}' targets unknown table '{target}'",
                        t.name
                    ));
                }
            }
        }
        let Some(target) = self.tables.iter().find(|t| t.name == self.target_table) else {
            return err(format!("target table '{}' not in schema", self.target_table));
        };
        if target.columns.iter().any(|c| c.name == self.label_column) {
            return err(format!(
                "label column '{}' must not be declared as a feature column",
                self.label_column
            ));
        }
        if let Some(s) = &self.split_column {
            if target.columns.iter().any(|c| &c.name == s) || *s == self.label_column {
                return err(format!("split column '{s}' clashes with a declared column"));
            }
        }
        if let Task::Classification { num_classes } = self.task {
            if num_classes == 0 {
                return err("num_classes must be positive".into());
            }
        }
        if self.tables.len() > 1 && self.links().is_empty() {
            return err("multi-table schema has no foreign-key links".into());
        }
        Ok(())
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    pub fn target_index(&self) -> usize {
        self.table_index(&self.target_table)
            .expect("validated schema contains its target table")
    }

    /// Foreign-key links in table order, then column order.
    pub fn links(&self) -> Vec<Link> {
        let mut out = Vec::new();
        for (ci, t) in self.tables.iter().enumerate() {
            for (col, target) in t.foreign_keys() {
                if let Some(parent) = self.table_index(target) {
                    out.push(Link {
                        child: ci,
                        column: col.to_string(),
                        parent,
                    });
                }
            }
        }
        out
    }

    /// Number of attribute (numerical, categorical, temporal) columns over all tables.
    pub fn attribute_count(&self) -> usize {
        self.tables
            .iter()
            .flat_map(|t| &t.columns)
            .filter(|c| c.is_attribute())
            .count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Deterministic 60/20/20 assignment from a 64-bit FNV-1a hash of the key.
    pub fn from_key_hash(key: &str) -> Split {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in key.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        match h % 100 {
            0..=59 => Split::Train,
            60..=79 => Split::Val,
            _ => Split::Test,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Regression(Vec<f64>),
    Classification(Vec<usize>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Regression(v) => v.len(),
            Labels::Classification(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, keep: &[usize]) -> Labels {
        match self {
            Labels::Regression(v) => Labels::Regression(keep.iter().map(|&i| v[i]).collect()),
            Labels::Classification(v) => {
                Labels::Classification(keep.iter().map(|&i| v[i]).collect())
            }
        }
    }
}

/// A table as delivered by a file reader: one vector per column, `None` = missing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawTable {
    pub name: String,
    pub keys: Vec<String>,
    /// Per foreign-key column, in schema order.
    pub foreign_keys: Vec<Vec<Option<String>>>,
    /// Per numerical/temporal column, in schema order; temporal already in epoch seconds.
    pub numeric: Vec<Vec<Option<f64>>>,
    /// Per categorical column, in schema order.
    pub categorical: Vec<Vec<Option<String>>>,
    /// Target table only.
    pub labels: Option<Vec<Option<String>>>,
    /// Target table only, when the schema names a split column.
    pub splits: Option<Vec<Option<String>>>,
}

impl RawTable {
    pub fn row_count(&self) -> usize {
        self.keys.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoricalColumn {
    pub name: String,
    /// Observed values in first-appearance order; index = category id.
    pub levels: Vec<String>,
    /// Missing cells map to the extra id `levels.len()`.
    pub has_missing: bool,
}

impl CategoricalColumn {
    pub fn cardinality(&self) -> usize {
        self.levels.len() + usize::from(self.has_missing)
    }
}

/// Mean and population standard deviation of one numeric column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    pub fn apply(&self, x: f64) -> f64 {
        if self.std > 0.0 {
            (x - self.mean) / self.std
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableData {
    pub name: String,
    pub keys: Vec<String>,
    /// Per foreign-key column (schema order): parent row index for every row.
    pub foreign_keys: Vec<Vec<usize>>,
    pub numeric_columns: Vec<String>,
    pub temporal: Vec<bool>,
    /// rows × d_num.
    pub numeric: Mat,
    pub categorical_columns: Vec<CategoricalColumn>,
    /// rows × d_cat, row-major.
    pub categories: Vec<usize>,
    /// Rows removed while loading because a foreign key did not resolve.
    pub dropped_rows: usize,
}

impl TableData {
    pub fn row_count(&self) -> usize {
        self.keys.len()
    }

    pub fn d_num(&self) -> usize {
        self.numeric_columns.len()
    }

    pub fn d_cat(&self) -> usize {
        self.categorical_columns.len()
    }

    pub fn category(&self, row: usize, col: usize) -> usize {
        self.categories[row * self.d_cat() + col]
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.categorical_columns.iter().map(|c| c.cardinality()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RdbInstance {
    pub schema: Schema,
    pub tables: Vec<TableData>,
    /// One label per target-table row.
    pub labels: Labels,
    /// One split per target-table row.
    pub splits: Vec<Split>,
    /// Per table, per numeric column; set by [`RdbInstance::normalize`].
    pub norm: Option<Vec<Vec<ColumnStats>>>,
}

impl RdbInstance {
    /// Resolves keys, indexes categories, parses labels, assigns splits and imputes
    /// missing numeric cells with the training-visible column mean.
    ///
    /// Rows whose foreign key is missing or unmatched are dropped, repeatedly, until
    /// every remaining key resolves; the per-table count is kept in `dropped_rows`.
    pub fn from_raw(schema: Schema, raw: Vec<RawTable>) -> Result<Self> {
        if raw.len() != schema.tables.len() {
            return Err(Error::Data(format!(
                "expected {} tables, got {}",
                schema.tables.len(),
                raw.len()
            )));
        }
        for (spec, t) in schema.tables.iter().zip(&raw) {
            check_raw_shape(spec, t)?;
        }
        let tgt = schema.target_index();
        let raw_labels = raw[tgt]
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data(format!("label column '{}' absent", schema.label_column)))?;
        if schema.split_column.is_some() && raw[tgt].splits.is_none() {
            return Err(Error::Data("split column absent on target table".into()));
        }

        // Key indexes and duplicate detection.
        let mut key_index: Vec<BTreeMap<&str, usize>> = Vec::with_capacity(raw.len());
        for t in &raw {
            let mut m = BTreeMap::new();
            for (i, k) in t.keys.iter().enumerate() {
                if k.is_empty() {
                    return Err(Error::Data(format!("empty primary key in '{}'", t.name)));
                }
                if m.insert(k.as_str(), i).is_some() {
                    return Err(Error::Data(format!("duplicate primary key '{k}' in '{}'", t.name)));
                }
            }
            key_index.push(m);
        }

        // Cascading drop of rows with unresolvable foreign keys.
        let fk_targets: Vec<Vec<usize>> = schema
            .tables
            .iter()
            .map(|t| {
                t.foreign_keys()
                    .map(|(_, target)| schema.table_index(target).unwrap())
                    .collect()
            })
            .collect();
        let mut alive: Vec<Vec<bool>> = raw.iter().map(|t| vec![true; t.row_count()]).collect();
        loop {
            let mut changed = false;
            for ti in 0..raw.len() {
                for r in 0..raw[ti].row_count() {
                    if !alive[ti][r] {
                        continue;
                    }
                    let ok = raw[ti].foreign_keys.iter().zip(&fk_targets[ti]).all(|(col, &p)| {
                        col[r]
                            .as_deref()
                            .and_then(|k| key_index[p].get(k))
                            .is_some_and(|&pr| alive[p][pr])
                    });
                    if !ok {
                        alive[ti][r] = false;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let kept: Vec<Vec<usize>> = alive
            .iter()
            .map(|a| a.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect())
            .collect();
        let mut new_index: Vec<Vec<usize>> = alive.iter().map(|a| vec![usize::MAX; a.len()]).collect();
        for (ti, k) in kept.iter().enumerate() {
            for (new, &old) in k.iter().enumerate() {
                new_index[ti][old] = new;
            }
        }

        // Target labels and splits.
        let tgt_rows = &kept[tgt];
        let mut splits = Vec::with_capacity(tgt_rows.len());
        for &r in tgt_rows {
            let s = match &raw[tgt].splits {
                Some(col) => {
                    let v = col[r].as_deref().unwrap_or("");
                    Split::parse(v).ok_or_else(|| {
                        Error::Data(format!("split value '{v}' not in {{train, val, test}}"))
                    })?
                }
                None => Split::from_key_hash(&raw[tgt].keys[r]),
            };
            splits.push(s);
        }
        let labels = parse_labels(schema.task, raw_labels, tgt_rows)?;

        let mut tables = Vec::with_capacity(raw.len());
        for (ti, (spec, t)) in schema.tables.iter().zip(&raw).enumerate() {
            let rows = &kept[ti];
            let foreign_keys = t
                .foreign_keys
                .iter()
                .zip(&fk_targets[ti])
                .map(|(col, &p)| {
                    rows.iter()
                        .map(|&r| {
                            let old = key_index[p][col[r].as_deref().unwrap()];
                            new_index[p][old]
                        })
                        .collect()
                })
                .collect();

            let visible: Vec<bool> = if ti == tgt {
                splits.iter().map(|s| *s == Split::Train).collect()
            } else {
                vec![true; rows.len()]
            };
            let d_num = t.numeric.len();
            let mut numeric = Mat::zeros(rows.len(), d_num);
            for (c, col) in t.numeric.iter().enumerate() {
                let vals: Vec<Option<f64>> = rows.iter().map(|&r| col[r]).collect();
                let observed: Vec<f64> = vals
                    .iter()
                    .zip(&visible)
                    .filter_map(|(v, &vis)| if vis { *v } else { None })
                    .collect();
                let fill = if observed.is_empty() {
                    0.0
                } else {
                    observed.iter().sum::<f64>() / observed.len() as f64
                };
                for (i, v) in vals.iter().enumerate() {
                    numeric.set(i, c, v.unwrap_or(fill));
                }
            }

            let cat_specs: Vec<&ColumnSpec> = spec.categorical_columns().collect();
            let d_cat = cat_specs.len();
            let mut categories = vec![0usize; rows.len() * d_cat];
            let mut categorical_columns = Vec::with_capacity(d_cat);
            for (c, (cs, col)) in cat_specs.iter().zip(&t.categorical).enumerate() {
                let mut levels: Vec<String> = Vec::new();
                let mut lookup: BTreeMap<&str, usize> = BTreeMap::new();
                let mut missing_rows = Vec::new();
                for (i, &r) in rows.iter().enumerate() {
                    match col[r].as_deref() {
                        Some(v) => {
                            let id = *lookup.entry(v).or_insert_with(|| {
                                levels.push(v.to_string());
                                levels.len() - 1
                            });
                            categories[i * d_cat + c] = id;
                        }
                        None => missing_rows.push(i),
                    }
                }
                let has_missing = !missing_rows.is_empty();
                for i in missing_rows {
                    categories[i * d_cat + c] = levels.len();
                }
                categorical_columns.push(CategoricalColumn {
                    name: cs.name.clone(),
                    levels,
                    has_missing,
                });
            }

            tables.push(TableData {
                name: spec.name.clone(),
                keys: rows.iter().map(|&r| t.keys[r].clone()).collect(),
                foreign_keys,
                numeric_columns: spec.numeric_columns().map(|c| c.name.clone()).collect(),
                temporal: spec
                    .numeric_columns()
                    .map(|c| c.kind == ColumnKind::Temporal)
                    .collect(),
                numeric,
                categorical_columns,
                categories,
                dropped_rows: t.row_count() - rows.len(),
            });
        }

        Ok(Self {
            schema,
            tables,
            labels,
            splits,
            norm: None,
        })
    }

    pub fn target_index(&self) -> usize {
        self.schema.target_index()
    }

    pub fn target(&self) -> &TableData {
        &self.tables[self.target_index()]
    }

    pub fn task(&self) -> Task {
        self.schema.task
    }

    /// Target rows assigned to `split`, ascending.
    pub fn split_rows(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rows used for statistics and allocation: training rows for the target table,
    /// every row otherwise.
    pub fn visible_rows(&self, table: usize) -> Vec<usize> {
        if table == self.target_index() {
            self.split_rows(Split::Train)
        } else {
            (0..self.tables[table].row_count()).collect()
        }
    }

    pub fn total_rows(&self) -> usize {
        self.tables.iter().map(|t| t.row_count()).sum()
    }

    /// Standardizes every numeric column to zero mean and unit population variance
    /// over its training-visible rows. Constant columns become all zeros.
    pub fn normalize(mut self) -> Self {
        let stats: Vec<Vec<ColumnStats>> = (0..self.tables.len())
            .map(|ti| {
                let vis = self.visible_rows(ti);
                let t = &self.tables[ti];
                (0..t.d_num())
                    .map(|c| {
                        let vals: Vec<f64> = vis.iter().map(|&r| t.numeric.get(r, c)).collect();
                        column_stats(&vals)
                    })
                    .collect()
            })
            .collect();
        self.apply_stats(&stats);
        self.norm = Some(stats);
        self
    }

    /// Applies previously computed statistics, e.g. from a training-time instance.
    pub fn normalize_with(mut self, stats: &[Vec<ColumnStats>]) -> Result<Self> {
        if stats.len() != self.tables.len()
            || stats.iter().zip(&self.tables).any(|(s, t)| s.len() != t.d_num())
        {
            return Err(Error::InvalidArgument(
                "normalization statistics do not match the schema".into(),
            ));
        }
        self.apply_stats(stats);
        self.norm = Some(stats.to_vec());
        Ok(self)
    }

    fn apply_stats(&mut self, stats: &[Vec<ColumnStats>]) {
        for (t, s) in self.tables.iter_mut().zip(stats) {
            for r in 0..t.row_count() {
                for (c, st) in s.iter().enumerate() {
                    let v = st.apply(t.numeric.get(r, c));
                    t.numeric.set(r, c, v);
                }
            }
        }
    }

    /// Keeps only the listed target rows (ascending), e.g. to simulate an unseen split.
    pub fn retain_target_rows(&self, keep: &[usize]) -> Self {
        let mut out = self.clone();
        let tgt = self.target_index();
        let t = &self.tables[tgt];
        let d_cat = t.d_cat();
        let nt = &mut out.tables[tgt];
        nt.keys = keep.iter().map(|&r| t.keys[r].clone()).collect();
        nt.foreign_keys = t
            .foreign_keys
            .iter()
            .map(|col| keep.iter().map(|&r| col[r]).collect())
            .collect();
        nt.numeric = t.numeric.select_rows(keep);
        nt.categories = keep
            .iter()
            .flat_map(|&r| t.categories[r * d_cat..(r + 1) * d_cat].iter().copied())
            .collect();
        out.labels = self.labels.select(keep);
        out.splits = keep.iter().map(|&r| self.splits[r]).collect();
        out
    }
}

/// Affine map between raw regression labels and the standardized values used for
/// training. Identity for classification.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelScaler {
    pub mean: f64,
    pub std: f64,
}

impl LabelScaler {
    pub const IDENTITY: LabelScaler = LabelScaler { mean: 0.0, std: 1.0 };

    pub fn fit(values: &[f64]) -> Self {
        let st = column_stats(values);
        Self {
            mean: st.mean,
            std: if st.std > 0.0 { st.std } else { 1.0 },
        }
    }

    pub fn scale(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn unscale(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

impl RdbInstance {
    /// Standardization fitted on training labels (regression), identity otherwise.
    pub fn label_scaler(&self) -> LabelScaler {
        match &self.labels {
            Labels::Regression(v) => {
                let train: Vec<f64> = self.split_rows(Split::Train).iter().map(|&r| v[r]).collect();
                LabelScaler::fit(&train)
            }
            Labels::Classification(_) => LabelScaler::IDENTITY,
        }
    }

    /// Label matrix for target rows `rows`: one-hot for classification, a single
    /// standardized column for regression.
    pub fn label_matrix(&self, rows: &[usize], scaler: &LabelScaler) -> Mat {
        match &self.labels {
            Labels::Regression(v) => Mat::from_fn(rows.len(), 1, |i, _| scaler.scale(v[rows[i]])),
            Labels::Classification(v) => {
                let d = self.schema.task.label_width();
                Mat::from_fn(rows.len(), d, |i, j| if v[rows[i]] == j { 1.0 } else { 0.0 })
            }
        }
    }
}

fn column_stats(vals: &[f64]) -> ColumnStats {
    if vals.is_empty() {
        return ColumnStats { mean: 0.0, std: 0.0 };
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let mut std = population_std(vals);
    // relative guard against round-off on constant columns
    if std <= 1e-12 * mean.abs().max(1.0) {
        std = 0.0;
    }
    ColumnStats { mean, std }
}

fn check_raw_shape(spec: &TableSpec, t: &RawTable) -> Result<()> {
    let n = t.row_count();
    let mismatch = |what: &str| {
        Err(Error::Data(format!(
            "table '{}': {what} does not match the schema",
            spec.name
        )))
    };
    if t.name != spec.name {
        return mismatch("table name");
    }
    if t.foreign_keys.len() != spec.foreign_keys().count()
        || t.numeric.len() != spec.numeric_columns().count()
        || t.categorical.len() != spec.categorical_columns().count()
    {
        return mismatch("column set");
    }
    let lens_ok = t.foreign_keys.iter().all(|c| c.len() == n)
        && t.numeric.iter().all(|c| c.len() == n)
        && t.categorical.iter().all(|c| c.len() == n)
        && t.labels.as_ref().is_none_or(|c| c.len() == n)
        && t.splits.as_ref().is_none_or(|c| c.len() == n);
    if !lens_ok {
        return mismatch("column length");
    }
    Ok(())
}

fn parse_labels(task: Task, raw: &[Option<String>], rows: &[usize]) -> Result<Labels> {
    let cell = |r: usize| -> Result<&str> {
        raw[r]
            .as_deref()
            .ok_or_else(|| Error::Data(format!("missing label on target row {r}")))
    };
    match task {
        Task::Regression => rows
            .iter()
            .map(|&r| {
                let s = cell(r)?;
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("unparseable regression label '{s}'")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Labels::Regression),
        Task::Classification { num_classes } => rows
            .iter()
            .map(|&r| {
                let s = cell(r)?;
                s.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&c| c < num_classes)
                    .ok_or_else(|| {
                        Error::Data(format!("class label '{s}' not in [0, {num_classes})"))
                    })
            })
            .collect::<Result<Vec<_>>>()
            .map(Labels::Classification),
    }
}
