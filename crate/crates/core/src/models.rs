//! Model ensembles: the analytic monomial benchmark and replayed tables.

use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acv::CostModel;
use crate::error::{Error, Result};
use crate::matparam::CovarianceMatrix;

/// An ordered set of models sharing one random input; model 0 is the reference.
pub trait ModelEnsemble {
    type Input: Clone;

    fn n_models(&self) -> usize;

    fn cost_model(&self) -> &CostModel;

    /// Draws `n` fresh inputs.
    fn sample_inputs(&mut self, rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<Self::Input>>;

    /// Evaluates model `model` at each input. Must be deterministic per input.
    fn evaluate(&mut self, model: usize, inputs: &[Self::Input]) -> Result<Vec<f64>>;

    /// `n` joint evaluations of every model, one row per input.
    fn pilot_rows(&mut self, rng: &mut ChaCha8Rng, n: usize) -> Result<DMatrix<f64>> {
        let inputs = self.sample_inputs(rng, n)?;
        let mut out = DMatrix::zeros(n, self.n_models());
        for m in 0..self.n_models() {
            let y = self.evaluate(m, &inputs)?;
            for (i, v) in y.into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Evaluation {
                        model: m,
                        sample: i,
                        reason: format!("non-finite output {v}"),
                    });
                }
                out[(i, m)] = v;
            }
        }
        Ok(out)
    }
}

/// `f_m(z) = z^{5-m}` with `z ~ U(0, 1)` and costs `10^{-m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialEnsemble {
    n_models: usize,
    costs: CostModel,
}

fn check_monomial(m: usize) -> Result<()> {
    if !(2..=5).contains(&m) {
        return Err(Error::Config(format!("monomial ensemble supports 2 to 5 models, got {m}")));
    }
    Ok(())
}

pub fn monomial_ensemble(m: usize) -> Result<MonomialEnsemble> {
    check_monomial(m)?;
    let costs = CostModel::new((0..m).map(|k| 10f64.powi(-(k as i32))).collect())?;
    Ok(MonomialEnsemble { n_models: m, costs })
}

impl MonomialEnsemble {
    pub fn degree(model: usize) -> i32 {
        5 - model as i32
    }
}

impl ModelEnsemble for MonomialEnsemble {
    type Input = f64;

    fn n_models(&self) -> usize {
        self.n_models
    }

    fn cost_model(&self) -> &CostModel {
        &self.costs
    }

    fn sample_inputs(&mut self, rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<f64>> {
        Ok((0..n).map(|_| rng.gen::<f64>()).collect())
    }

    fn evaluate(&mut self, model: usize, inputs: &[f64]) -> Result<Vec<f64>> {
        if model >= self.n_models {
            return Err(Error::Dimension(format!("model {model} out of range")));
        }
        let p = Self::degree(model);
        Ok(inputs.iter().map(|z| z.powi(p)).collect())
    }
}

/// Exact covariance of the monomial outputs: `1/(a+b+1) − 1/((a+1)(b+1))`.
pub fn monomial_oracle_cov(m: usize) -> Result<CovarianceMatrix> {
    check_monomial(m)?;
    CovarianceMatrix::new(DMatrix::from_fn(m, m, |i, j| {
        let a = MonomialEnsemble::degree(i) as f64;
        let b = MonomialEnsemble::degree(j) as f64;
        1.0 / (a + b + 1.0) - 1.0 / ((a + 1.0) * (b + 1.0))
    }))
}

/// Exact mean of the high-fidelity monomial, `E[z^5]`.
pub const MONOMIAL_MEAN: f64 = 1.0 / 6.0;

/// Companion metadata for a tabular ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub costs: Vec<f64>,
    /// Output column names, high fidelity first. Defaults to `f0..f{M-1}`.
    #[serde(default)]
    pub columns: Option<Vec<String>>,
}

impl TabularSchema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let f = File::open(path)?;
        Ok(serde_json::from_reader(f)?)
    }

    fn column_names(&self) -> Vec<String> {
        self.columns
            .clone()
            .unwrap_or_else(|| (0..self.costs.len()).map(|m| format!("f{m}")).collect())
    }
}

/// Precomputed outputs consumed row by row without replacement.
#[derive(Debug, Clone)]
pub struct TabularEnsemble {
    source: String,
    values: DMatrix<f64>,
    costs: CostModel,
    cursor: usize,
}

impl TabularEnsemble {
    pub fn from_rows(values: DMatrix<f64>, costs: CostModel, source: impl Into<String>) -> Result<Self> {
        if values.ncols() != costs.n_models() {
            return Err(Error::Dimension(format!(
                "table has {} columns but {} costs",
                values.ncols(),
                costs.n_models()
            )));
        }
        Ok(Self {
            source: source.into(),
            values,
            costs,
            cursor: 0,
        })
    }

    /// Reads a delimited table whose header names the output columns; extra columns
    /// (such as an input id) are ignored.
    pub fn from_csv(path: &Path, schema: &TabularSchema) -> Result<Self> {
        let source = path.display().to_string();
        let costs = CostModel::new(schema.costs.clone())?;
        let names = schema.column_names();
        if names.len() != costs.n_models() {
            return Err(Error::Schema {
                path: source,
                row: 0,
                reason: format!("{} column names for {} costs", names.len(), costs.n_models()),
            });
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let header = reader.headers()?.clone();
        let mut idx = Vec::with_capacity(names.len());
        for n in &names {
            match header.iter().position(|h| h == n) {
                Some(i) => idx.push(i),
                None => {
                    return Err(Error::Schema {
                        path: source,
                        row: 0,
                        reason: format!("missing column '{n}'"),
                    })
                }
            }
        }
        let mut flat = Vec::new();
        let mut rows = 0;
        for (r, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = r + 1;
            for &i in &idx {
                let field = rec.get(i).ok_or_else(|| Error::Schema {
                    path: source.clone(),
                    row,
                    reason: format!("missing field {i}"),
                })?;
                let v: f64 = field.parse().map_err(|_| Error::Schema {
                    path: source.clone(),
                    row,
                    reason: format!("'{field}' is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Schema {
                        path: source.clone(),
                        row,
                        reason: format!("non-finite value {v}"),
                    });
                }
                flat.push(v);
            }
            rows += 1;
        }
        let values = DMatrix::from_row_slice(rows, names.len(), &flat);
        Self::from_rows(values, costs, source)
    }

    pub fn load(table: &Path, metadata: &Path) -> Result<Self> {
        Self::from_csv(table, &TabularSchema::from_json_file(metadata)?)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn remaining(&self) -> usize {
        self.n_rows() - self.cursor
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Skips the first `n` rows, for example to give independent trials disjoint slices.
    pub fn seek(&mut self, n: usize) -> Result<()> {
        if n > self.n_rows() {
            return Err(self.exhausted(n.saturating_sub(self.cursor)));
        }
        self.cursor = n;
        Ok(())
    }

    fn exhausted(&self, requested: usize) -> Error {
        Error::Exhausted {
            path: self.source.clone(),
            row: self.n_rows() + 1,
            remaining: self.remaining(),
            requested,
        }
    }
}

/// Writes `rows` as a table with header `f0..f{M-1}`.
pub fn write_table(path: &Path, rows: &DMatrix<f64>) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..rows.ncols()).map(|m| format!("f{m}")))?;
    for r in rows.row_iter() {
        w.write_record(r.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

impl ModelEnsemble for TabularEnsemble {
    type Input = usize;

    fn n_models(&self) -> usize {
        self.values.ncols()
    }

    fn cost_model(&self) -> &CostModel {
        &self.costs
    }

    fn sample_inputs(&mut self, _rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<usize>> {
        if n > self.remaining() {
            return Err(self.exhausted(n));
        }
        let out = (self.cursor..self.cursor + n).collect();
        self.cursor += n;
        Ok(out)
    }

    fn evaluate(&mut self, model: usize, inputs: &[usize]) -> Result<Vec<f64>> {
        if model >= self.n_models() {
            return Err(Error::Dimension(format!("model {model} out of range")));
        }
        inputs
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                if r >= self.n_rows() {
                    Err(Error::Evaluation {
                        model,
                        sample: i,
                        reason: format!("row {r} outside table {}", self.source),
                    })
                } else {
                    Ok(self.values[(r, model)])
                }
            })
            .collect()
    }
}
