//! γ-transform utility for matrix and vector files.

use std::path::Path;

use mfpilot_core::matparam::{dim_from_gamma_len, DEFAULT_GAMMA_TOL};
use mfpilot_core::{gamma_forward, gamma_inverse, CorrelationMatrix};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Correlation matrix to γ.
    Forward,
    /// γ to correlation matrix.
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum TransformOutput {
    Gamma(Vec<f64>),
    Correlation(Vec<Vec<f64>>),
}

/// Reads a JSON array (flat or nested) or delimited text with one matrix row per line.
pub fn read_numbers(text: &str) -> CliResult<Vec<Vec<f64>>> {
    if let Ok(rows) = serde_json::from_str::<Vec<Vec<f64>>>(text) {
        return Ok(rows);
    }
    if let Ok(flat) = serde_json::from_str::<Vec<f64>>(text) {
        return Ok(vec![flat]);
    }
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Validation(format!("line {}: {e}", i + 1)))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Validation("no numbers found".into()));
    }
    Ok(rows)
}

/// Applies the transform; the direction is inferred from the shape when not given.
pub fn transform(rows: &[Vec<f64>], direction: Option<Direction>, tol: f64) -> CliResult<TransformOutput> {
    let is_vector = rows.len() == 1 || rows.iter().all(|r| r.len() == 1);
    let direction = direction.unwrap_or(if is_vector { Direction::Inverse } else { Direction::Forward });
    match direction {
        Direction::Forward => {
            let m = rows.len();
            if rows.iter().any(|r| r.len() != m) {
                return Err(CliError::Validation(format!("expected a square matrix, got {m} rows of unequal width")));
            }
            let r = CorrelationMatrix::new(DMatrix::from_fn(m, m, |i, j| rows[i][j]))?;
            Ok(TransformOutput::Gamma(gamma_forward(&r)?.iter().copied().collect()))
        }
        Direction::Inverse => {
            if !is_vector {
                return Err(CliError::Validation("the inverse transform needs a vector".into()));
            }
            let v: Vec<f64> = rows.iter().flatten().copied().collect();
            if dim_from_gamma_len(v.len()).is_none() {
                return Err(CliError::Validation(format!(
                    "a γ vector has M(M-1)/2 entries; {} is not such a count",
                    v.len()
                )));
            }
            let r = gamma_inverse(&DVector::from_vec(v), tol)?;
            let m = r.dim();
            Ok(TransformOutput::Correlation(
                (0..m).map(|i| (0..m).map(|j| r.as_matrix()[(i, j)]).collect()).collect(),
            ))
        }
    }
}

pub fn cmd_transform(path: &Path, direction: Option<Direction>, tol: Option<f64>) -> CliResult<TransformOutput> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    transform(&read_numbers(&text)?, direction, tol.unwrap_or(DEFAULT_GAMMA_TOL))
}
