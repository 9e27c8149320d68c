//! Pretraining output persisted between pipeline stages.

use std::fs;
use std::path::Path;

use t2g_core::pretrain::{Allocation, PseudoLabels};
use t2g_core::rdb::{CategoricalColumn, Schema};
use t2g_core::tokenizer::TokenizerBank;

use crate::artifact::{read_bank, write_bank};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::schema::fingerprint;

const MAGIC: &[u8; 4] = b"T2GP";

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainState {
    pub bank: TokenizerBank,
    pub levels: Vec<Vec<CategoricalColumn>>,
    pub pseudo: PseudoLabels,
    pub allocation: Allocation,
    pub losses: Vec<f64>,
}

impl PretrainState {
    pub fn to_bytes(&self, schema: &Schema) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAGIC);
        w.buf.extend_from_slice(&fingerprint(schema));
        write_bank(&mut w, &self.bank, &self.levels);
        w.u32(self.pseudo.assignments.len());
        for ((a, c), m) in self
            .pseudo
            .assignments
            .iter()
            .zip(&self.pseudo.counts)
            .zip(&self.pseudo.centroids)
        {
            w.u32(a.len());
            a.iter().for_each(|&x| w.u32(x));
            w.u32(c.len());
            c.iter().for_each(|&x| w.u32(x));
            w.mat(m);
        }
        w.u32(self.allocation.counts.len());
        self.allocation.counts.iter().for_each(|&x| w.u32(x));
        w.u8(u8::from(self.allocation.all_floored));
        w.u32(self.losses.len());
        w.f64s(&self.losses);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], schema: &Schema) -> Result<Self> {
        let mut r = Reader::new(bytes, "pretraining state");
        if r.take(4)? != MAGIC {
            return Err(Error::invalid("not a pretraining state file"));
        }
        if r.take(32)? != fingerprint(schema) {
            return Err(Error::invalid("pretraining state was produced for a different schema"));
        }
        let (bank, levels) = read_bank(&mut r, schema)?;
        let n = r.u32()?;
        let (mut assignments, mut counts, mut centroids) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let k = r.u32()?;
            assignments.push((0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
            let k = r.u32()?;
            counts.push((0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
            centroids.push(r.mat()?);
        }
        let k = r.u32()?;
        let alloc_counts = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let all_floored = r.bool()?;
        let k = r.u32()?;
        let losses = r.f64s(k)?;
        r.finish()?;
        Ok(Self {
            bank,
            levels,
            pseudo: PseudoLabels {
                assignments,
                centroids,
                counts,
            },
            allocation: Allocation {
                total: alloc_counts.iter().sum(),
                counts: alloc_counts,
                all_floored,
            },
            losses,
        })
    }

    pub fn save(&self, path: &Path, schema: &Schema) -> Result<()> {
        fs::write(path, self.to_bytes(schema)).map_err(Error::io(path))
    }

    pub fn load(path: &Path, schema: &Schema) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path).map_err(Error::io(path))?, schema)
    }
}
