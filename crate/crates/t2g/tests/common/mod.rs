#![allow(dead_code)]

use std::path::{Path, PathBuf};

use t2g::config::Config;
use t2g::pipeline::{gen_minirdb, ingest, Workspace};
use t2g_core::minirdb::MiniRdbConfig;

/// Settings small enough for a full pipeline run in about a second.
pub fn quick_config() -> Config {
    Config {
        ratio: 0.05,
        hidden: 16,
        pretrain_epochs: 6,
        distill_iters: 15,
        eval_epochs: 20,
        ..Config::default()
    }
}

/// Generates a planted database under `root/data` and ingests it into `root/ws`.
pub fn workspace(root: &Path, rows: usize, classification: bool, config: Config) -> Workspace {
    let data = data_dir(root, rows, classification);
    let ws = Workspace::new(root.join("ws"));
    ingest(&data.join("schema.json"), &data, &ws, Some(config)).unwrap();
    ws
}

pub fn data_dir(root: &Path, rows: usize, classification: bool) -> PathBuf {
    let data = root.join("data");
    if !data.join("schema.json").exists() {
        let cfg = MiniRdbConfig {
            rows,
            parents: (rows / 10).max(3),
            classification,
            ..Default::default()
        };
        gen_minirdb(&cfg, &data).unwrap();
    }
    data
}
