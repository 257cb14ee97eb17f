//! LIBSVM sparse text format: `label idx:val idx:val …` with 1-based,
//! strictly increasing indices.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::{CornError, Result, Scalar};

/// Feature count of the a9a dataset.
pub const A9A_DIM: usize = 123;

/// Dense samples (one row each) with labels in `{−1, +1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LibsvmData<T: Scalar> {
    pub features: DMatrix<T>,
    pub labels: Vec<T>,
}

impl<T: Scalar> LibsvmData<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows `idx` in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> CornError {
    CornError::Parse { line, message: message.into() }
}

fn parse_line(line_no: usize, line: &str, dim: usize, row: &mut Vec<(usize, f64)>) -> Result<f64> {
    let mut tokens = line.split_whitespace();
    let label_tok = tokens.next().ok_or_else(|| parse_error(line_no, "missing label"))?;
    let label: f64 = label_tok
        .parse()
        .map_err(|_| parse_error(line_no, format!("label {label_tok:?} is not a number")))?;
    row.clear();
    let mut last = 0usize;
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| parse_error(line_no, format!("expected idx:val, found {tok:?}")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| parse_error(line_no, format!("index {idx:?} is not a positive integer")))?;
        let val: f64 = val
            .parse()
            .map_err(|_| parse_error(line_no, format!("value {val:?} is not a number")))?;
        if idx == 0 {
            return Err(parse_error(line_no, "indices are 1-based"));
        }
        if idx <= last {
            return Err(parse_error(line_no, format!("index {idx} does not increase (previous {last})")));
        }
        if idx > dim {
            return Err(parse_error(line_no, format!("index {idx} exceeds dimension {dim}")));
        }
        last = idx;
        row.push((idx - 1, val));
    }
    Ok(if label > 0.0 { 1.0 } else { -1.0 })
}

/// Reads every non-blank line. Labels `> 0` map to `+1`, all others to `−1`.
pub fn parse_libsvm<T: Scalar, R: BufRead>(reader: R, dim: usize) -> Result<LibsvmData<T>> {
    let mut labels = Vec::new();
    let mut values: Vec<T> = Vec::new();
    let mut row = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let label = parse_line(k + 1, &line, dim, &mut row)?;
        labels.push(T::lit(label));
        let start = values.len();
        values.resize(start + dim, T::zero());
        for &(j, v) in &row {
            values[start + j] = T::lit(v);
        }
    }
    Ok(LibsvmData { features: DMatrix::from_row_slice(labels.len(), dim, &values), labels })
}

pub fn parse_libsvm_str<T: Scalar>(text: &str, dim: usize) -> Result<LibsvmData<T>> {
    parse_libsvm(text.as_bytes(), dim)
}

/// Writes non-zero entries only, with round-trip float formatting.
pub fn write_libsvm<T: Scalar, W: Write>(data: &LibsvmData<T>, mut out: W) -> Result<()> {
    for (i, label) in data.labels.iter().enumerate() {
        write!(out, "{}", if *label > T::zero() { "+1" } else { "-1" })?;
        for j in 0..data.dim() {
            let v = data.features[(i, j)];
            if v != T::zero() {
                write!(out, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_sparse_line() {
        let d: LibsvmData<f64> = parse_libsvm_str("+1 3:1 11:1\n", 12).unwrap();
        assert_eq!(d.labels, vec![1.0]);
        for j in 0..12 {
            let expected = if j == 2 || j == 10 { 1.0 } else { 0.0 };
            assert_eq!(d.features[(0, j)], expected);
        }
    }

    #[test]
    fn label_only_line() {
        let d: LibsvmData<f64> = parse_libsvm_str("-1\n", 5).unwrap();
        assert_eq!(d.labels, vec![-1.0]);
        assert!(d.features.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_one_labels_are_mapped() {
        let d: LibsvmData<f64> = parse_libsvm_str("0 1:2\n1 2:0.5\n", 2).unwrap();
        assert_eq!(d.labels, vec![-1.0, 1.0]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("+1 1:1\n+1 3:1 2:1\n", 2),
            ("+1 1:1\n\n-1 x:1\n", 3),
            ("+1 13:1\n", 1),
            ("+1 0:1\n", 1),
            ("abc 1:1\n", 1),
            ("+1 1:zz\n", 1),
            ("+1 1-1\n", 1),
        ];
        for (text, line) in cases {
            match parse_libsvm_str::<f64>(text, 12) {
                Err(CornError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn round_trip() {
        let text = "+1 1:0.25 4:-3 7:1e-7\n-1\n-1 2:1.5\n";
        let d: LibsvmData<f64> = parse_libsvm_str(text, 7).unwrap();
        let mut buf = Vec::new();
        write_libsvm(&d, &mut buf).unwrap();
        let again: LibsvmData<f64> = parse_libsvm(buf.as_slice(), 7).unwrap();
        assert_eq!(d, again);
    }
}
