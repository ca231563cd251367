//! Plain-text coefficient vectors: one decimal value per line, `#` comments
//! and blank lines ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub values: Array1<f64>,
    /// Fraction of nonzero entries.
    pub sparsity: f64,
}

impl Coefficients {
    pub fn new(values: Array1<f64>) -> Self {
        let sparsity = if values.is_empty() {
            0.0
        } else {
            values.iter().filter(|&&v| v != 0.0).count() as f64 / values.len() as f64
        };
        Self { values, sparsity }
    }
}

pub fn parse_coefficients(text: &str, source_name: &str, expected_len: Option<usize>) -> Result<Coefficients> {
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::Parse {
            source_name: source_name.to_string(),
            line: idx + 1,
            message: format!("expected a decimal number, found `{line}`"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line: idx + 1,
                message: format!("non-finite coefficient `{line}`"),
            });
        }
        values.push(v);
    }
    if let Some(n) = expected_len {
        if values.len() != n {
            return Err(Error::Dimension {
                what: "coefficient file length",
                expected: n,
                found: values.len(),
            });
        }
    }
    Ok(Coefficients::new(Array1::from(values)))
}

pub fn load_coefficients(path: &Path, expected_len: Option<usize>) -> Result<Coefficients> {
    let text = fs::read_to_string(path)?;
    parse_coefficients(&text, &path.display().to_string(), expected_len)
}

/// Writes values with shortest round-trip formatting, so loading gives
/// back the identical vector.
pub fn save_coefficients(path: &Path, values: ArrayView1<'_, f64>) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 12);
    for v in values {
        writeln!(out, "{v:?}").expect("writing to a String");
    }
    fs::write(path, out)?;
    Ok(())
}
