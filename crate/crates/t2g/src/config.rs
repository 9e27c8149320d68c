//! Pipeline hyper-parameters, stored as `config.json` in the workspace.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use t2g_core::distill::{DistillConfig, DEFAULT_LAMBDA};
use t2g_core::eval::{DownstreamConfig, ModelKind};
use t2g_core::hgnn::DEFAULT_HIDDEN;
use t2g_core::pretrain::{PretrainConfig, DEFAULT_WEIGHT_DECAY};
use t2g_core::tokenizer::DEFAULT_D_TOKEN;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Compression ratio r.
    pub ratio: f64,
    pub d_token: usize,
    pub hidden: usize,
    /// Encoder depth; `null` means one layer per table.
    pub layers: Option<usize>,
    pub weight_decay: f64,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub recluster_period: usize,
    pub lambda: f64,
    pub beta: f64,
    /// Sparsity ratio ρ.
    pub rho: f64,
    pub distill_iters: usize,
    pub distill_lr: f64,
    pub eval_epochs: usize,
    pub eval_lr: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            ratio: 0.01,
            d_token: DEFAULT_D_TOKEN,
            hidden: DEFAULT_HIDDEN,
            layers: None,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            pretrain_epochs: 50,
            pretrain_lr: 0.1,
            recluster_period: 10,
            lambda: DEFAULT_LAMBDA,
            beta: 1.0,
            rho: 0.5,
            distill_iters: 200,
            distill_lr: 0.01,
            eval_epochs: 100,
            eval_lr: 0.01,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let c: Config = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(Error::io(path))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_json().as_bytes()).into()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::invalid(format!("ratio {} outside (0, 1)", self.ratio)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid(format!("rho {} outside (0, 1)", self.rho)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::invalid("beta must be non-negative"));
        }
        if self.d_token == 0 || self.hidden == 0 || self.layers == Some(0) {
            return Err(Error::invalid("widths and depth must be positive"));
        }
        if self.pretrain_epochs == 0 || self.recluster_period == 0 {
            return Err(Error::invalid("pretraining needs epochs and a positive recluster period"));
        }
        for (name, lr) in [
            ("pretrain_lr", self.pretrain_lr),
            ("distill_lr", self.distill_lr),
            ("eval_lr", self.eval_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            lr: self.pretrain_lr,
            weight_decay: self.weight_decay,
            recluster_period: self.recluster_period,
            seed: self.seed,
            ratio: self.ratio,
            d_token: self.d_token,
            hidden: self.hidden,
            layers: self.layers,
        }
    }

    pub fn distill(&self) -> DistillConfig {
        DistillConfig {
            iterations: self.distill_iters,
            lr: self.distill_lr,
            lambda: self.lambda,
            beta: self.beta,
            seed: self.seed,
            hidden: self.hidden,
            layers: self.layers,
        }
    }

    pub fn downstream(&self, model: ModelKind, seed: u64) -> DownstreamConfig {
        DownstreamConfig {
            model,
            epochs: self.eval_epochs,
            lr: self.eval_lr,
            weight_decay: self.weight_decay,
            hidden: self.hidden,
            layers: self.layers,
            seed,
        }
    }

    /// Parameters that determine the pretraining stage.
    pub fn pretrain_key(&self) -> String {
        format!(
            "seed={} ratio={} d_token={} hidden={} layers={:?} wd={} epochs={} lr={} period={}",
            self.seed,
            self.ratio,
            self.d_token,
            self.hidden,
            self.layers,
            self.weight_decay,
            self.pretrain_epochs,
            self.pretrain_lr,
            self.recluster_period
        )
    }

    /// Parameters that determine the distillation stage beyond pretraining.
    pub fn distill_key(&self) -> String {
        format!(
            "lambda={} beta={} rho={} iters={} lr={}",
            self.lambda, self.beta, self.rho, self.distill_iters, self.distill_lr
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_partial_files() {
        let c = Config::default();
        let back: Config = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let partial: Config = serde_json::from_str(r#"{"beta": 10, "rho": 0.25}"#).unwrap();
        assert_eq!(partial.beta, 10.0);
        assert_eq!(partial.ratio, c.ratio);
        assert!(serde_json::from_str::<Config>(r#"{"betta": 1}"#).is_err());
        assert!(Config { rho: 1.0, ..c.clone() }.validate().is_err());
        assert!(Config { ratio: 0.0, ..c }.validate().is_err());
    }
}
