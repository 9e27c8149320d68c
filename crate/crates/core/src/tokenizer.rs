//! Per-column tokenizers: a learnable row vector per numerical column and a
//! lookup table per categorical column, averaged into one entity embedding.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numcore::{Mat, ParamSet, Rng64, Segments, Tape, Var};
use crate::rdb::{ColumnStats, RdbInstance, TableData};

pub const DEFAULT_D_TOKEN: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct TableTokenizer {
    /// d_num × d_token, one row per numerical column.
    pub w_num: Mat,
    /// C × d_token, the per-column lookup tables stacked.
    pub e_cat: Mat,
    /// First row of each categorical column's block in `e_cat`.
    pub offsets: Vec<usize>,
    pub cardinalities: Vec<usize>,
    /// Learnable constant token, present only for tables without attribute columns.
    pub bias: Option<Mat>,
    /// Standardization applied to the numeric inputs.
    pub norm: Vec<ColumnStats>,
}

impl TableTokenizer {
    pub fn new(
        d_token: usize,
        d_num: usize,
        cardinalities: Vec<usize>,
        norm: Vec<ColumnStats>,
        rng: &mut Rng64,
    ) -> Self {
        let bound = 1.0 / libm::sqrt(d_token as f64);
        let mut offsets = Vec::with_capacity(cardinalities.len());
        let mut total = 0;
        for &c in &cardinalities {
            offsets.push(total);
            total += c;
        }
        let mut init = |r, c| Mat::from_fn(r, c, |_, _| rng.uniform(-bound, bound));
        let w_num = init(d_num, d_token);
        let e_cat = init(total, d_token);
        let bias = (d_num == 0 && cardinalities.is_empty()).then(|| init(1, d_token));
        Self {
            w_num,
            e_cat,
            offsets,
            cardinalities,
            bias,
            norm,
        }
    }

    pub fn d_num(&self) -> usize {
        self.w_num.rows()
    }

    pub fn d_token(&self) -> usize {
        self.w_num.cols()
    }

    /// Total categories C over all categorical columns.
    pub fn total_categories(&self) -> usize {
        self.e_cat.rows()
    }

    pub fn param_count(&self) -> usize {
        (self.d_num() + self.total_categories()) * self.d_token()
            + self.bias.as_ref().map_or(0, |b| b.cols())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenizerBank {
    pub d_token: usize,
    pub tables: Vec<TableTokenizer>,
}

/// Tape handles for one table's tokenizer.
#[derive(Clone, Debug)]
pub struct TableVars {
    pub w_num: Var,
    pub e_cat: Var,
    pub bias: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct BankVars {
    pub tables: Vec<TableVars>,
}

impl BankVars {
    pub fn flat(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for t in &self.tables {
            out.push(t.w_num);
            out.push(t.e_cat);
            if let Some(b) = t.bias {
                out.push(b);
            }
        }
        out
    }
}

impl TokenizerBank {
    /// Fresh tokenizers for every table, initialized uniform in ±1/√d_token.
    pub fn init(rdb: &RdbInstance, d_token: usize, rng: &mut Rng64) -> Self {
        let tables = rdb
            .tables
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let norm = rdb
                    .norm
                    .as_ref()
                    .map(|n| n[i].clone())
                    .unwrap_or_default();
                TableTokenizer::new(d_token, t.d_num(), t.cardinalities(), norm, rng)
            })
            .collect();
        Self { d_token, tables }
    }

    pub fn param_count(&self) -> usize {
        self.tables.iter().map(|t| t.param_count()).sum()
    }

    pub fn on_tape(&self, tape: &mut Tape, trainable: bool) -> Result<BankVars> {
        let mut reg = |m: &Mat| {
            if trainable {
                tape.leaf(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        let tables = self
            .tables
            .iter()
            .map(|t| {
                Ok(TableVars {
                    w_num: reg(&t.w_num)?,
                    e_cat: reg(&t.e_cat)?,
                    bias: t.bias.as_ref().map(&mut reg).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BankVars { tables })
    }

    /// Embeddings of every row of `table`, one per row (n_T × d_token).
    pub fn encode_table(&self, rdb: &RdbInstance, table: usize) -> Result<Mat> {
        let mut tape = Tape::new();
        let vars = self.on_tape(&mut tape, false)?;
        let out = encode_on_tape(&mut tape, &vars.tables[table], &self.tables[table], &rdb.tables[table])?;
        Ok(tape.value(out).clone())
    }

    pub fn encode_all(&self, rdb: &RdbInstance) -> Result<Vec<Mat>> {
        (0..rdb.tables.len()).map(|t| self.encode_table(rdb, t)).collect()
    }
}

impl ParamSet for TokenizerBank {
    fn params(&self) -> Vec<&Mat> {
        let mut out = Vec::new();
        for t in &self.tables {
            out.push(&t.w_num);
            out.push(&t.e_cat);
            if let Some(b) = &t.bias {
                out.push(b);
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = Vec::new();
        for t in &mut self.tables {
            out.push(&mut t.w_num);
            out.push(&mut t.e_cat);
            if let Some(b) = &mut t.bias {
                out.push(b);
            }
        }
        out
    }
}

/// Records the mean-of-tokens encoding of `data` on `tape`:
/// row v = mean({x_{v,i}·W_num[i]} ∪ {E_cat[offset_i + x_{v,i}]}).
pub fn encode_on_tape(
    tape: &mut Tape,
    vars: &TableVars,
    tok: &TableTokenizer,
    data: &TableData,
) -> Result<Var> {
    let n = data.row_count();
    let d_num = data.d_num();
    let d_cat = data.d_cat();
    if d_num != tok.d_num() || data.cardinalities() != tok.cardinalities {
        return Err(Error::Shape {
            op: "encode_table",
            lhs: (d_num, d_cat),
            rhs: (tok.d_num(), tok.cardinalities.len()),
        });
    }
    if d_num + d_cat == 0 {
        let bias = vars
            .bias
            .ok_or_else(|| Error::InvalidArgument(format!("table '{}' has no tokens", data.name)))?;
        let segs = Segments::from_fixed(1, alloc::vec![0; n]);
        return tape.gather(bias, Arc::new(segs), false);
    }

    let mut sum: Option<Var> = None;
    if d_num > 0 {
        let x = tape.constant(data.numeric.clone())?;
        sum = Some(tape.matmul(x, vars.w_num)?);
    }
    if d_cat > 0 {
        let mut idx = Vec::with_capacity(n * d_cat);
        for r in 0..n {
            for c in 0..d_cat {
                let v = data.category(r, c);
                if v >= tok.cardinalities[c] {
                    return Err(Error::Data(format!(
                        "category {v} out of range for column '{}'",
                        data.categorical_columns[c].name
                    )));
                }
                idx.push(tok.offsets[c] + v);
            }
        }
        let cat = tape.gather(vars.e_cat, Arc::new(Segments::from_fixed(d_cat, idx)), false)?;
        // zero-row tables still need a well-shaped output
        sum = Some(match sum {
            Some(s) => tape.add(s, cat)?,
            None => cat,
        });
    }
    let total = sum.expect("at least one modality present");
    Ok(tape.scale(total, 1.0 / (d_num + d_cat) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rdb::{CategoricalColumn, TableData};
    use alloc::string::ToString;
    use alloc::vec;

    fn table(numeric: Mat, cats: Vec<usize>, cards: Vec<usize>) -> TableData {
        let n = numeric.rows();
        TableData {
            name: "t".into(),
            keys: (0..n).map(|i| i.to_string()).collect(),
            foreign_keys: vec![],
            numeric_columns: (0..numeric.cols()).map(|i| alloc::format!("x{i}")).collect(),
            temporal: vec![false; numeric.cols()],
            numeric,
            categorical_columns: cards
                .iter()
                .enumerate()
                .map(|(i, &c)| CategoricalColumn {
                    name: alloc::format!("c{i}"),
                    levels: (0..c).map(|l| l.to_string()).collect(),
                    has_missing: false,
                })
                .collect(),
            categories: cats,
            dropped_rows: 0,
        }
    }

    fn encode(tok: &TableTokenizer, data: &TableData) -> Result<Mat> {
        let bank = TokenizerBank {
            d_token: tok.d_token(),
            tables: vec![tok.clone()],
        };
        let mut tape = Tape::new();
        let vars = bank.on_tape(&mut tape, false)?;
        let v = encode_on_tape(&mut tape, &vars.tables[0], tok, data)?;
        Ok(tape.value(v).clone())
    }

    #[test]
    fn zero_numeric_gives_zero_token() {
        let mut rng = Rng64::new(1);
        let tok = TableTokenizer::new(4, 1, vec![], vec![], &mut rng);
        let out = encode(&tok, &table(Mat::zeros(1, 1), vec![], vec![])).unwrap();
        assert_eq!(out, Mat::zeros(1, 4));
    }

    #[test]
    fn hand_evaluated_mean() {
        let mut rng = Rng64::new(1);
        let mut tok = TableTokenizer::new(2, 1, vec![1], vec![], &mut rng);
        tok.w_num = Mat::from_rows(&[&[1.0, 0.0]]);
        tok.e_cat = Mat::from_rows(&[&[0.0, 4.0]]);
        let data = table(Mat::from_rows(&[&[2.0]]), vec![0], vec![1]);
        assert_eq!(encode(&tok, &data).unwrap(), Mat::from_rows(&[&[1.0, 2.0]]));
    }

    #[test]
    fn param_count_formula() {
        let mut rng = Rng64::new(1);
        let tok = TableTokenizer::new(8, 2, vec![4, 6], vec![], &mut rng);
        assert_eq!(tok.total_categories(), 10);
        assert_eq!(tok.param_count(), 96);
        assert_eq!(tok.offsets, vec![0, 4]);
    }

    #[test]
    fn init_within_bounds() {
        let mut rng = Rng64::new(5);
        let tok = TableTokenizer::new(8, 3, vec![5], vec![], &mut rng);
        let b = 1.0 / libm::sqrt(8.0);
        assert!(tok.w_num.max_abs() <= b && tok.e_cat.max_abs() <= b);
    }

    #[test]
    fn out_of_range_category_rejected() {
        let mut rng = Rng64::new(1);
        let tok = TableTokenizer::new(2, 0, vec![2], vec![], &mut rng);
        let mut data = table(Mat::zeros(1, 0), vec![5], vec![2]);
        assert!(matches!(encode(&tok, &data), Err(Error::Data(_))));
        data.categorical_columns[0].levels.push("x".into());
        assert!(matches!(encode(&tok, &data), Err(Error::Shape { .. })));
    }

    #[test]
    fn attribute_free_table_uses_bias_token() {
        let mut rng = Rng64::new(3);
        let tok = TableTokenizer::new(3, 0, vec![], vec![], &mut rng);
        let out = encode(&tok, &table(Mat::zeros(2, 0), vec![], vec![])).unwrap();
        let b = tok.bias.as_ref().unwrap();
        assert_eq!(out.row(0), b.row(0));
        assert_eq!(out.row(1), b.row(0));
    }

    #[test]
    fn cat_gradient_only_on_used_rows() {
        let mut rng = Rng64::new(4);
        let tok = TableTokenizer::new(3, 1, vec![4], vec![], &mut rng);
        let data = table(Mat::from_rows(&[&[0.5], &[-1.0]]), vec![1, 3], vec![4]);
        let bank = TokenizerBank {
            d_token: 3,
            tables: vec![tok.clone()],
        };
        let mut tape = Tape::new();
        let vars = bank.on_tape(&mut tape, true).unwrap();
        let out = encode_on_tape(&mut tape, &vars.tables[0], &tok, &data).unwrap();
        let loss = tape.frob_sq(out).unwrap();
        let g = tape.backward(loss).unwrap();
        let ge = g.get(vars.tables[0].e_cat).unwrap();
        for r in 0..4 {
            let nz = ge.row(r).iter().any(|v| *v != 0.0);
            assert_eq!(nz, r == 1 || r == 3, "row {r}");
        }
    }
}
