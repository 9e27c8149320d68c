//! Distillation artifact file.
//!
//! Layout: `"T2G1"`, a `u32` version, then seven sections in fixed order, each a
//! tag byte, a `u64` payload length and the payload:
//!
//! | tag | section      | payload                                                     |
//! |-----|--------------|-------------------------------------------------------------|
//! | 1   | schema       | canonical schema JSON                                       |
//! | 2   | fingerprint  | SHA-256 of the schema JSON                                  |
//! | 3   | provenance   | seed, SHA-256 of the configuration                          |
//! | 4   | tokenizers   | per table: category levels, normalization, raw f64 weights  |
//! | 5   | structure    | per-table synthetic counts, per relation a packed bitset    |
//! | 6   | features     | per table `n'_T × d_token` f64                              |
//! | 7   | labels       | `n'_target × D` f64, label mean and std                     |
//!
//! All integers and floats are little-endian. Encoding is canonical: decoding
//! then re-encoding reproduces the input bytes.

use std::fs;
use std::path::Path;

use t2g_core::distill::SyntheticGraph;
use t2g_core::rdb::{CategoricalColumn, ColumnStats, LabelScaler, RdbInstance, Schema};
use t2g_core::sbm::{BitMatrix, SyntheticRelation, SyntheticStructure};
use t2g_core::tokenizer::{TableTokenizer, TokenizerBank};
use t2g_core::Mat;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::schema::{fingerprint, parse_schema, schema_json};

pub const MAGIC: &[u8; 4] = b"T2G1";
pub const VERSION: u32 = 1;
/// Magic and version.
pub const HEADER_BYTES: usize = 8;
/// Tag and length in front of every section.
pub const SECTION_OVERHEAD: usize = 9;

const SECTIONS: [&str; 7] = [
    "schema",
    "fingerprint",
    "provenance",
    "tokenizers",
    "structure",
    "features",
    "labels",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: [u8; 32],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub schema: Schema,
    pub fingerprint: [u8; 32],
    pub provenance: Provenance,
    pub bank: TokenizerBank,
    /// Per table, its categorical columns with their level strings.
    pub levels: Vec<Vec<CategoricalColumn>>,
    pub graph: SyntheticGraph,
}

/// Encoded size of each section including its tag and length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SectionSizes {
    pub header: usize,
    pub sections: [usize; 7],
}

impl SectionSizes {
    pub fn total(&self) -> usize {
        self.header + self.sections.iter().sum::<usize>()
    }

    pub fn tokenizers(&self) -> usize {
        self.sections[3]
    }

    /// Structure, features and labels.
    pub fn synthetic(&self) -> usize {
        self.sections[4..].iter().sum()
    }

    pub fn metadata(&self) -> usize {
        self.header + self.sections[..3].iter().sum::<usize>()
    }
}

impl Artifact {
    pub fn new(
        rdb: &RdbInstance,
        bank: TokenizerBank,
        graph: SyntheticGraph,
        provenance: Provenance,
    ) -> Self {
        Self {
            fingerprint: fingerprint(&rdb.schema),
            schema: rdb.schema.clone(),
            provenance,
            bank,
            levels: rdb.tables.iter().map(|t| t.categorical_columns.clone()).collect(),
            graph,
        }
    }

    fn sections(&self) -> [Vec<u8>; 7] {
        let schema = schema_json(&self.schema).into_bytes();
        let fp = self.fingerprint.to_vec();

        let mut w = Writer::default();
        w.u64(self.provenance.seed);
        w.buf.extend_from_slice(&self.provenance.config_hash);
        let prov = w.buf;

        let mut w = Writer::default();
        write_bank(&mut w, &self.bank, &self.levels);
        let tokenizers = w.buf;

        let st = &self.graph.structure;
        let mut w = Writer::default();
        w.u32(st.counts.len());
        for &c in &st.counts {
            w.u32(c);
        }
        w.u32(st.relations.len());
        for r in &st.relations {
            w.u32(r.src);
            w.u32(r.dst);
            w.str(&r.column);
            w.f64(r.tau);
            w.u8(u8::from(r.fallback));
            w.bytes(&r.adjacency.to_bytes());
        }
        let structure = w.buf;

        let mut w = Writer::default();
        for f in &self.graph.features {
            w.f64s(f.data());
        }
        let features = w.buf;

        let mut w = Writer::default();
        w.u32(self.graph.labels.cols());
        w.f64s(self.graph.labels.data());
        w.f64(self.graph.scaler.mean);
        w.f64(self.graph.scaler.std);
        let labels = w.buf;

        [schema, fp, prov, tokenizers, structure, features, labels]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (i, s) in self.sections().iter().enumerate() {
            out.push(i as u8 + 1);
            out.extend_from_slice(&(s.len() as u64).to_le_bytes());
            out.extend_from_slice(s);
        }
        out
    }

    pub fn sizes(&self) -> SectionSizes {
        let secs = self.sections();
        SectionSizes {
            header: HEADER_BYTES,
            sections: std::array::from_fn(|i| secs[i].len() + SECTION_OVERHEAD),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "artifact");
        if r.take(4)? != MAGIC {
            return Err(Error::invalid("not a distillation artifact (bad magic)"));
        }
        let version = r.u32()? as u32;
        if version != VERSION {
            return Err(Error::invalid(format!(
                "artifact version {version} is not supported (expected {VERSION})"
            )));
        }
        let mut payloads = Vec::with_capacity(7);
        for (i, name) in SECTIONS.iter().enumerate() {
            let tag = r.u8()?;
            if tag as usize != i + 1 {
                return Err(Error::invalid(format!("expected {name} section, found tag {tag}")));
            }
            let len = usize::try_from(r.u64()?).map_err(|_| Error::invalid("section too large"))?;
            payloads.push(r.take(len)?);
        }
        r.finish()?;

        let json = std::str::from_utf8(payloads[0]).map_err(|_| Error::invalid("schema is not UTF-8"))?;
        let schema = parse_schema(json)?;
        if schema_json(&schema) != json {
            return Err(Error::invalid("schema section is not canonical"));
        }
        let fp: [u8; 32] = payloads[1]
            .try_into()
            .map_err(|_| Error::invalid("fingerprint must be 32 bytes"))?;
        if fp != fingerprint(&schema) {
            return Err(Error::invalid("artifact fingerprint does not match its schema"));
        }

        let mut p = Reader::new(payloads[2], "provenance");
        let seed = p.u64()?;
        let config_hash: [u8; 32] = p.take(32)?.try_into().expect("32 bytes");
        p.finish()?;

        let num_tables = schema.tables.len();
        let mut t = Reader::new(payloads[3], "tokenizers");
        let (bank, levels) = read_bank(&mut t, &schema)?;
        let d_token = bank.d_token;
        t.finish()?;

        let mut s = Reader::new(payloads[4], "structure");
        if s.u32()? != num_tables {
            return Err(Error::invalid("structure table count differs from schema"));
        }
        let counts = (0..num_tables).map(|_| s.u32()).collect::<Result<Vec<_>>>()?;
        let n_rel = s.u32()?;
        let mut relations = Vec::with_capacity(n_rel);
        for _ in 0..n_rel {
            let src = s.u32()?;
            let dst = s.u32()?;
            if src >= num_tables || dst >= num_tables {
                return Err(Error::invalid("structure relation references unknown table"));
            }
            let column = s.str()?;
            let tau = s.f64()?;
            let fallback = s.bool()?;
            let adjacency = BitMatrix::from_bytes(counts[src], counts[dst], s.bytes()?)?;
            relations.push(SyntheticRelation {
                src,
                dst,
                column,
                adjacency,
                tau,
                fallback,
            });
        }
        s.finish()?;
        let structure = SyntheticStructure { counts, relations };

        let mut f = Reader::new(payloads[5], "features");
        let features = structure
            .counts
            .iter()
            .map(|&n| Ok(Mat::from_vec(n, d_token, f.f64s(n * d_token)?)?))
            .collect::<Result<Vec<_>>>()?;
        f.finish()?;

        let target = schema.target_index();
        let mut l = Reader::new(payloads[6], "labels");
        let width = l.u32()?;
        let n = structure.counts[target];
        let labels = Mat::from_vec(n, width, l.f64s(n * width)?)?;
        let scaler = LabelScaler {
            mean: l.f64()?,
            std: l.f64()?,
        };
        l.finish()?;

        Ok(Self {
            graph: SyntheticGraph {
                table_names: schema.tables.iter().map(|t| t.name.clone()).collect(),
                target,
                structure,
                features,
                labels,
                scaler,
            },
            bank,
            levels,
            provenance: Provenance { seed, config_hash },
            fingerprint: fp,
            schema,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path).map_err(Error::io(path))?)
    }

    /// Checks that `rdb` was loaded with the schema and category levels this
    /// artifact was distilled from.
    pub fn check_compatible(&self, rdb: &RdbInstance) -> Result<()> {
        if fingerprint(&rdb.schema) != self.fingerprint {
            return Err(Error::invalid("schema fingerprint does not match the artifact"));
        }
        for (t, cols) in rdb.tables.iter().zip(&self.levels) {
            if &t.categorical_columns != cols {
                return Err(Error::invalid(format!(
                    "categorical levels of '{}' differ from the artifact",
                    t.name
                )));
            }
        }
        Ok(())
    }
}

/// Tokenizer weights with their category levels and normalization statistics.
pub(crate) fn write_bank(w: &mut Writer, bank: &TokenizerBank, levels: &[Vec<CategoricalColumn>]) {
    w.u32(bank.d_token);
    w.u32(bank.tables.len());
    for (tok, cols) in bank.tables.iter().zip(levels) {
        w.u32(tok.d_num());
        w.u32(cols.len());
        for c in cols {
            w.u8(u8::from(c.has_missing));
            w.u32(c.levels.len());
            for l in &c.levels {
                w.str(l);
            }
        }
        w.u32(tok.norm.len());
        for s in &tok.norm {
            w.f64(s.mean);
            w.f64(s.std);
        }
        w.f64s(tok.w_num.data());
        w.f64s(tok.e_cat.data());
        w.u8(u8::from(tok.bias.is_some()));
        if let Some(b) = &tok.bias {
            w.f64s(b.data());
        }
    }
}

pub(crate) fn read_bank(t: &mut Reader<'_>, schema: &Schema) -> Result<(TokenizerBank, Vec<Vec<CategoricalColumn>>)> {
    let num_tables = schema.tables.len();
    let d_token = t.u32()?;
    if t.u32()? != num_tables {
        return Err(Error::invalid("tokenizer count differs from table count"));
    }
    let mut tables = Vec::with_capacity(num_tables);
    let mut levels = Vec::with_capacity(num_tables);
    for spec in &schema.tables {
        let d_num = t.u32()?;
        let n_cat = t.u32()?;
        if d_num != spec.numeric_columns().count() || n_cat != spec.categorical_columns().count() {
            return Err(Error::invalid(format!("tokenizer of '{}' does not fit the schema", spec.name)));
        }
        let mut cols = Vec::with_capacity(n_cat);
        for c in spec.categorical_columns() {
            let has_missing = t.bool()?;
            let n = t.u32()?;
            let lv = (0..n).map(|_| t.str()).collect::<Result<Vec<_>>>()?;
            cols.push(CategoricalColumn {
                name: c.name.clone(),
                levels: lv,
                has_missing,
            });
        }
        let n_norm = t.u32()?;
        let norm = (0..n_norm)
            .map(|_| Ok(ColumnStats { mean: t.f64()?, std: t.f64()? }))
            .collect::<Result<Vec<_>>>()?;
        let cards: Vec<usize> = cols.iter().map(|c| c.cardinality()).collect();
        let total: usize = cards.iter().sum();
        let w_num = Mat::from_vec(d_num, d_token, t.f64s(d_num * d_token)?)?;
        let e_cat = Mat::from_vec(total, d_token, t.f64s(total * d_token)?)?;
        let bias = if t.bool()? {
            Some(Mat::from_vec(1, d_token, t.f64s(d_token)?)?)
        } else {
            None
        };
        let mut offsets = Vec::with_capacity(cards.len());
        let mut acc = 0;
        for &c in &cards {
            offsets.push(acc);
            acc += c;
        }
        tables.push(TableTokenizer {
            w_num,
            e_cat,
            offsets,
            cardinalities: cards,
            bias,
            norm,
        });
        levels.push(cols);
    }
    Ok((TokenizerBank { d_token, tables }, levels))
}

/// Byte accounting for one artifact against the original CSV files.
#[derive(Clone, Debug, PartialEq)]
pub struct StorageReport {
    pub tokenizer_bytes: usize,
    pub synthetic_bytes: usize,
    pub metadata_bytes: usize,
    pub artifact_bytes: usize,
    pub original_bytes: u64,
}

impl StorageReport {
    pub fn new(sizes: &SectionSizes, original_bytes: u64) -> Self {
        Self {
            tokenizer_bytes: sizes.tokenizers(),
            synthetic_bytes: sizes.synthetic(),
            metadata_bytes: sizes.metadata(),
            artifact_bytes: sizes.total(),
            original_bytes,
        }
    }

    /// Artifact size as a fraction of the original CSV size.
    pub fn artifact_fraction(&self) -> f64 {
        self.artifact_bytes as f64 / self.original_bytes.max(1) as f64
    }

    pub fn tokenizer_fraction(&self) -> f64 {
        self.tokenizer_bytes as f64 / self.artifact_bytes.max(1) as f64
    }

    pub fn compression_factor(&self) -> f64 {
        self.original_bytes as f64 / self.artifact_bytes.max(1) as f64
    }

    pub fn lines(&self) -> String {
        format!(
            "section,bytes\ntokenizers,{}\nsynthetic,{}\nmetadata,{}\nartifact,{}\noriginal_csv,{}\ncompression_factor,{:.2}\n",
            self.tokenizer_bytes,
            self.synthetic_bytes,
            self.metadata_bytes,
            self.artifact_bytes,
            self.original_bytes,
            self.compression_factor()
        )
    }
}
