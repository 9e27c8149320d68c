//! Workspace stages: ingest → pretrain → distill → evaluate → report.
//!
//! Every stage writes a `<stage>.stamp` file holding a hash of its inputs. A stage
//! whose stamp is unchanged and whose outputs exist is skipped; a stage that does
//! run removes the outputs of every later stage.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use t2g_core::distill::run_distillation;
use t2g_core::eval::{
    evaluate, random_baseline, train_downstream, EvalReport, Metric, ModelKind, TrainingGraph, REPORT_HEADER,
};
use t2g_core::minirdb::{generate, MiniRdbConfig};
use t2g_core::pretrain::{pretrain, supervised_pretrain};
use t2g_core::rdb::{RdbInstance, Schema, Split};
use t2g_core::reg::Reg;
use t2g_core::sbm::{generate_structure, SbmModel};
use t2g_core::tokenizer::TokenizerBank;

use crate::artifact::{Artifact, Provenance, StorageReport};
use crate::config::Config;
use crate::csv_io::{csv_bytes, load_rdb, table_path, write_raw};
use crate::error::{Error, Result};
use crate::schema::{fingerprint, parse_schema, schema_json};
use crate::state::PretrainState;

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex(&h.finalize())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct IngestRecord {
    data_dir: PathBuf,
    data_sha256: String,
    fingerprint: String,
    rows: Vec<usize>,
}

pub struct Workspace {
    root: PathBuf,
}

const STAGES: [&str; 3] = ["ingest", "pretrain", "distill"];

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn config_path(&self) -> PathBuf {
        self.path("config.json")
    }

    pub fn artifact_path(&self) -> PathBuf {
        self.path("artifact.t2g")
    }

    pub fn report_path(&self) -> PathBuf {
        self.path("report.csv")
    }

    pub fn eval_path(&self, model: ModelKind) -> PathBuf {
        self.path(&format!("eval_{}.csv", model.as_str()))
    }

    fn stamp_path(&self, stage: &str) -> PathBuf {
        self.path(&format!("{stage}.stamp"))
    }

    fn read_stamp(&self, stage: &str) -> Option<String> {
        fs::read_to_string(self.stamp_path(stage)).ok()
    }

    fn write_stamp(&self, stage: &str, stamp: &str) -> Result<()> {
        let p = self.stamp_path(stage);
        fs::write(&p, stamp).map_err(Error::io(p))
    }

    fn require(&self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact(p))
        }
    }

    /// Deletes outputs of the stages after `stage`.
    fn invalidate_after(&self, stage: &str) -> Result<()> {
        let pos = STAGES.iter().position(|s| *s == stage).expect("known stage");
        let mut doomed: Vec<PathBuf> = Vec::new();
        for later in &STAGES[pos + 1..] {
            doomed.push(self.stamp_path(later));
        }
        if pos < 1 {
            doomed.extend(["pretrain.bin", "pretrain_log.csv"].map(|n| self.path(n)));
        }
        if pos < 2 {
            doomed.extend(
                ["artifact.t2g", "distill_log.csv", "structure.txt", "storage.csv"].map(|n| self.path(n)),
            );
        }
        doomed.push(self.report_path());
        for m in [ModelKind::Hgnn, ModelKind::Mlp] {
            doomed.push(self.eval_path(m));
        }
        for p in doomed {
            if p.exists() {
                fs::remove_file(&p).map_err(Error::io(&p))?;
            }
        }
        Ok(())
    }

    pub fn config(&self) -> Result<Config> {
        Config::load(&self.require("config.json")?)
    }

    pub fn schema(&self) -> Result<Schema> {
        let p = self.require("schema.json")?;
        parse_schema(&fs::read_to_string(&p).map_err(Error::io(&p))?)
    }

    fn ingest_record(&self) -> Result<IngestRecord> {
        let p = self.require("ingest.json")?;
        serde_json::from_str(&fs::read_to_string(&p).map_err(Error::io(&p))?)
            .map_err(|e| Error::invalid(format!("{}: {e}", p.display())))
    }

    pub fn data_dir(&self) -> Result<PathBuf> {
        Ok(self.ingest_record()?.data_dir)
    }

    /// The ingested database, unstandardized, after checking the data files are unchanged.
    pub fn raw_rdb(&self) -> Result<(Schema, RdbInstance, PathBuf)> {
        let schema = self.schema()?;
        let rec = self.ingest_record()?;
        if data_hash(&schema, &rec.data_dir)? != rec.data_sha256 {
            return Err(Error::invalid(format!(
                "data files in {} changed since ingest; run ingest again",
                rec.data_dir.display()
            )));
        }
        let rdb = load_rdb(&schema, &rec.data_dir)?;
        Ok((schema, rdb, rec.data_dir))
    }
}

fn data_hash(schema: &Schema, dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for t in &schema.tables {
        let p = table_path(dir, &t.name);
        let bytes = fs::read(&p).map_err(Error::io(&p))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

/// Validates schema and data, and initializes the workspace.
pub fn ingest(schema_path: &Path, data_dir: &Path, ws: &Workspace, config: Option<Config>) -> Result<Outcome> {
    let text = fs::read_to_string(schema_path).map_err(Error::io(schema_path))?;
    let schema = parse_schema(&text)?;
    let data_dir = fs::canonicalize(data_dir).map_err(Error::io(data_dir))?;
    let rdb = load_rdb(&schema, &data_dir)?;
    for t in &rdb.tables {
        if t.dropped_rows > 0 {
            warn!("{}: dropped {} rows with unresolved foreign keys", t.name, t.dropped_rows);
        }
    }
    let config = match config {
        Some(c) => c,
        None if ws.config_path().exists() => ws.config()?,
        None => Config::default(),
    };
    config.validate()?;
    fs::create_dir_all(ws.root()).map_err(Error::io(ws.root()))?;

    let data_sha = data_hash(&schema, &data_dir)?;
    let json = schema_json(&schema);
    let stamp = sha(&[json.as_bytes(), data_sha.as_bytes(), data_dir.to_string_lossy().as_bytes()]);
    let config_changed = !ws.config_path().exists() || ws.config()? != config;
    config.save(&ws.config_path())?;
    if !config_changed && ws.read_stamp("ingest").as_deref() == Some(stamp.as_str()) {
        return Ok(Outcome::UpToDate);
    }
    let p = ws.path("schema.json");
    fs::write(&p, &json).map_err(Error::io(&p))?;
    let rec = IngestRecord {
        data_dir,
        data_sha256: data_sha,
        fingerprint: hex(&fingerprint(&schema)),
        rows: rdb.tables.iter().map(|t| t.row_count()).collect(),
    };
    let p = ws.path("ingest.json");
    fs::write(&p, serde_json::to_string_pretty(&rec).expect("record serializes") + "\n").map_err(Error::io(&p))?;
    ws.invalidate_after("ingest")?;
    ws.write_stamp("ingest", &stamp)?;
    info!(
        "ingested {} tables ({} rows)",
        rdb.tables.len(),
        rdb.total_rows()
    );
    Ok(Outcome::Ran)
}

fn prepared(ws: &Workspace) -> Result<(RdbInstance, Reg)> {
    let (_, rdb, _) = ws.raw_rdb()?;
    let rdb = rdb.normalize();
    let reg = Reg::build(&rdb);
    Ok((rdb, reg))
}

/// Stage 1. `update` adjusts the stored configuration first.
pub fn run_pretrain(ws: &Workspace, update: impl FnOnce(&mut Config)) -> Result<Outcome> {
    let ingest_stamp = ws.read_stamp("ingest").ok_or_else(|| Error::MissingArtifact(ws.stamp_path("ingest")))?;
    let mut config = ws.config()?;
    update(&mut config);
    config.validate()?;
    config.save(&ws.config_path())?;
    let stamp = sha(&[ingest_stamp.as_bytes(), config.pretrain_key().as_bytes()]);
    if ws.read_stamp("pretrain").as_deref() == Some(stamp.as_str()) && ws.path("pretrain.bin").exists() {
        info!("pretraining is up to date");
        return Ok(Outcome::UpToDate);
    }
    let (rdb, reg) = prepared(ws)?;
    let out = pretrain(&rdb, &reg, &config.pretrain())?;
    if out.allocation.all_floored {
        warn!("ratio {} leaves every table at one synthetic entity", config.ratio);
    }
    ws.invalidate_after("pretrain")?;
    let state = PretrainState {
        bank: out.bank,
        levels: rdb.tables.iter().map(|t| t.categorical_columns.clone()).collect(),
        pseudo: out.pseudo,
        allocation: out.allocation,
        losses: out.losses,
    };
    state.save(&ws.path("pretrain.bin"), &rdb.schema)?;
    let mut log = String::from("epoch,loss\n");
    for (i, l) in state.losses.iter().enumerate() {
        log.push_str(&format!("{i},{l}\n"));
    }
    let p = ws.path("pretrain_log.csv");
    fs::write(&p, log).map_err(Error::io(&p))?;
    ws.write_stamp("pretrain", &stamp)?;
    info!("pretrained; synthetic entities per table {:?}", state.allocation.counts);
    Ok(Outcome::Ran)
}

/// Stages 2 and 3: structure generation and feature distillation.
pub fn run_distill(ws: &Workspace, update: impl FnOnce(&mut Config)) -> Result<Outcome> {
    let state_path = ws.require("pretrain.bin")?;
    let pre_stamp = ws.read_stamp("pretrain").ok_or_else(|| Error::MissingArtifact(ws.stamp_path("pretrain")))?;
    let mut config = ws.config()?;
    update(&mut config);
    config.validate()?;
    config.save(&ws.config_path())?;
    let stamp = sha(&[pre_stamp.as_bytes(), config.distill_key().as_bytes()]);
    if ws.read_stamp("distill").as_deref() == Some(stamp.as_str()) && ws.artifact_path().exists() {
        info!("distillation is up to date");
        return Ok(Outcome::UpToDate);
    }
    let (rdb, reg) = prepared(ws)?;
    let state = PretrainState::load(&state_path, &rdb.schema)?;
    let model = SbmModel::from_pseudo(&reg, &state.pseudo)?;
    let structure = generate_structure(&model, config.rho)?;
    for r in structure.relations.iter().filter(|r| r.fallback) {
        warn!(
            "relation {}.{} kept only its densest block pair after thresholding",
            reg.table_names[r.src], r.column
        );
    }
    let out = run_distillation(&rdb, &reg, &state.bank, &state.pseudo, &structure, &config.distill())?;
    ws.invalidate_after("distill")?;
    let artifact = Artifact::new(
        &rdb,
        state.bank,
        out.graph,
        Provenance {
            seed: config.seed,
            config_hash: config.hash(),
        },
    );
    artifact.save(&ws.artifact_path())?;
    let mut log = String::from("iter,L_task,L_pseudo,L_total\n");
    for rec in &out.log {
        log.push_str(&rec.line());
        log.push('\n');
    }
    let p = ws.path("distill_log.csv");
    fs::write(&p, log).map_err(Error::io(&p))?;
    let p = ws.path("structure.txt");
    fs::write(&p, artifact.graph.reg()?.edge_list()).map_err(Error::io(&p))?;
    let storage = storage_report(ws)?;
    let p = ws.path("storage.csv");
    fs::write(&p, storage.lines()).map_err(Error::io(&p))?;
    ws.write_stamp("distill", &stamp)?;
    info!(
        "distilled {} synthetic rows into {} bytes ({:.3}% of the CSV files)",
        artifact.graph.rows(),
        storage.artifact_bytes,
        100.0 * storage.artifact_fraction()
    );
    Ok(Outcome::Ran)
}

/// Byte comparison of the saved artifact with the ingested CSV files.
pub fn storage_report(ws: &Workspace) -> Result<StorageReport> {
    let artifact = Artifact::load(&ws.artifact_path())?;
    let bytes = fs::metadata(ws.artifact_path()).map_err(Error::io(ws.artifact_path()))?.len() as usize;
    let sizes = artifact.sizes();
    debug_assert_eq!(sizes.total(), bytes);
    Ok(StorageReport::new(&sizes, csv_bytes(&artifact.schema, &ws.data_dir()?)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Random,
    Full,
}

impl Baseline {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Self::Random),
            "full" => Some(Self::Full),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Full => "full",
        }
    }
}

/// One evaluated run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub config: String,
    pub seed: u64,
    pub metric: Metric,
    pub value: f64,
    pub train_seconds: f64,
    pub rows_synthetic: usize,
    pub rows_original: usize,
}

const EVAL_HEADER: &str = "config,seed,metric,value,train_seconds,rows_synthetic,rows_original";

impl EvalRow {
    fn line(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{},{}",
            self.config,
            self.seed,
            self.metric.as_str(),
            self.value,
            self.train_seconds,
            self.rows_synthetic,
            self.rows_original
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::invalid(format!("malformed evaluation line '{line}'"));
        if f.len() != 7 {
            return Err(bad());
        }
        Ok(Self {
            config: f[0].to_string(),
            seed: f[1].parse().map_err(|_| bad())?,
            metric: match f[2] {
                "MAE" => Metric::Mae,
                "AUC" => Metric::Auc,
                _ => return Err(bad()),
            },
            value: f[3].parse().map_err(|_| bad())?,
            train_seconds: f[4].parse().map_err(|_| bad())?,
            rows_synthetic: f[5].parse().map_err(|_| bad())?,
            rows_original: f[6].parse().map_err(|_| bad())?,
        })
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let out = f()?;
    Ok((out, t.elapsed().as_secs_f64()))
}

/// Trains `repeats` downstream models on the artifact (and optional baselines) and
/// scores them on the test split of the original database.
pub fn run_evaluate(
    ws: &Workspace,
    model: ModelKind,
    repeats: usize,
    baselines: &[Baseline],
) -> Result<Vec<EvalRow>> {
    if repeats < 3 {
        return Err(Error::invalid("at least 3 repeats are required"));
    }
    let artifact = Artifact::load(&ws.artifact_path())?;
    let config = ws.config()?;
    let (_, raw, _) = ws.raw_rdb()?;
    artifact.check_compatible(&raw)?;
    let norms: Vec<_> = artifact.bank.tables.iter().map(|t| t.norm.clone()).collect();
    let rdb = raw.clone().normalize_with(&norms)?;
    let reg = Reg::build(&rdb);
    let metric = Metric::for_task(rdb.task());
    let original = rdb.total_rows();
    let scaler = artifact.graph.scaler;
    let synthetic = TrainingGraph::from_synthetic(&artifact.graph, rdb.task())?;
    let baseline_rdb = if baselines.is_empty() { None } else { Some(raw.normalize()) };

    let mut rows = Vec::new();
    for i in 0..repeats {
        let seed = config.seed + i as u64;
        let dc = config.downstream(model, seed);
        let (trained, secs) = timed(|| Ok(train_downstream(&synthetic, &dc)?))?;
        rows.push(EvalRow {
            config: format!("t2g-{}", model.as_str()),
            seed,
            metric,
            value: evaluate(&trained.model, &rdb, &reg, &artifact.bank, &scaler, Split::Test)?,
            train_seconds: secs,
            rows_synthetic: artifact.graph.rows(),
            rows_original: original,
        });
        if let Some(brdb) = &baseline_rdb {
            let mut pc = config.pretrain();
            pc.seed = seed;
            let breg = Reg::build(brdb);
            let (bank, _): (TokenizerBank, _) = supervised_pretrain(brdb, &breg, &pc)?;
            let bscaler = brdb.label_scaler();
            for &b in baselines {
                let graph = match b {
                    Baseline::Random => random_baseline(brdb, &breg, &bank, config.ratio, seed)?,
                    Baseline::Full => TrainingGraph::full(brdb, &breg, &bank)?,
                };
                let (trained, secs) = timed(|| Ok(train_downstream(&graph, &dc)?))?;
                rows.push(EvalRow {
                    config: format!("{}-{}", b.as_str(), model.as_str()),
                    seed,
                    metric,
                    value: evaluate(&trained.model, brdb, &breg, &bank, &bscaler, Split::Test)?,
                    train_seconds: secs,
                    rows_synthetic: graph.node_count(),
                    rows_original: original,
                });
            }
        }
    }
    let mut text = String::from(EVAL_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&r.line());
        text.push('\n');
    }
    let p = ws.eval_path(model);
    fs::write(&p, text).map_err(Error::io(&p))?;
    Ok(rows)
}

/// Aggregates every evaluation file into `report.csv`.
pub fn run_report(ws: &Workspace) -> Result<Vec<EvalReport>> {
    let config = ws.config()?;
    let mut rows = Vec::new();
    for m in [ModelKind::Hgnn, ModelKind::Mlp] {
        let p = ws.eval_path(m);
        if !p.exists() {
            continue;
        }
        let text = fs::read_to_string(&p).map_err(Error::io(&p))?;
        for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
            rows.push(EvalRow::parse(line)?);
        }
    }
    if rows.is_empty() {
        return Err(Error::MissingArtifact(ws.eval_path(ModelKind::Hgnn)));
    }
    let mut names: Vec<String> = Vec::new();
    for r in &rows {
        if !names.contains(&r.config) {
            names.push(r.config.clone());
        }
    }
    let mut out = Vec::with_capacity(names.len());
    let mut text = String::from(REPORT_HEADER);
    text.push('\n');
    for name in names {
        let group: Vec<&EvalRow> = rows.iter().filter(|r| r.config == name).collect();
        let values: Vec<f64> = group.iter().map(|r| r.value).collect();
        let secs = group.iter().map(|r| r.train_seconds).sum::<f64>() / group.len() as f64;
        let rep = EvalReport::from_values(
            name,
            group[0].metric,
            &values,
            config.ratio,
            secs,
            group[0].rows_synthetic,
            group[0].rows_original,
        )?;
        text.push_str(&rep.csv_line());
        text.push('\n');
        out.push(rep);
    }
    let p = ws.report_path();
    fs::write(&p, text).map_err(Error::io(&p))?;
    Ok(out)
}

/// Writes a planted mini database (`schema.json` plus one CSV per table) to `out`.
pub fn gen_minirdb(cfg: &MiniRdbConfig, out: &Path) -> Result<()> {
    let m = generate(cfg)?;
    write_raw(&m.schema, &m.tables, out)?;
    let p = out.join("schema.json");
    let pretty: serde_json::Value = serde_json::from_str(&schema_json(&m.schema)).expect("valid JSON");
    fs::write(&p, serde_json::to_string_pretty(&pretty).expect("serializes") + "\n").map_err(Error::io(&p))?;
    Ok(())
}
