//! Plain-text formats for graphs and dense matrices.
//!
//! Edge lists: the first non-comment line is the agent count `n`, then one
//! `i j` pair (0-based) per line. `#` starts a comment.
//!
//! Matrices: comma-separated rows, no header. Values are written with the
//! shortest representation that parses back to the same float.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::graph::Graph;
use crate::{CornError, Result, Scalar};

fn parse_error(line: usize, message: impl Into<String>) -> CornError {
    CornError::Parse { line, message: message.into() }
}

fn content(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

pub fn read_edge_list<R: BufRead>(reader: R) -> Result<Graph> {
    let mut n: Option<usize> = None;
    let mut edges = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let text = content(&line);
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        let parse = |s: &str| s.parse::<usize>().map_err(|_| parse_error(k + 1, format!("{s:?} is not a non-negative integer")));
        match (n, fields.as_slice()) {
            (None, [count]) => n = Some(parse(count)?),
            (None, _) => return Err(parse_error(k + 1, "first line must hold the agent count")),
            (Some(_), [i, j]) => edges.push((parse(i)?, parse(j)?)),
            (Some(_), _) => return Err(parse_error(k + 1, "expected an edge \"i j\"")),
        }
    }
    let n = n.ok_or_else(|| parse_error(0, "empty edge list"))?;
    Graph::new(n, edges)
}

pub fn write_edge_list<W: Write>(g: &Graph, mut out: W) -> Result<()> {
    writeln!(out, "{}", g.n())?;
    for (i, j) in g.edges() {
        writeln!(out, "{i} {j}")?;
    }
    Ok(())
}

pub fn read_matrix_csv<T: Scalar, R: BufRead>(reader: R) -> Result<DMatrix<T>> {
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let text = content(&line);
        if text.is_empty() {
            continue;
        }
        let row = text
            .split(',')
            .map(|s| {
                let s = s.trim();
                s.parse::<f64>()
                    .map(T::lit)
                    .map_err(|_| parse_error(k + 1, format!("{s:?} is not a number")))
            })
            .collect::<Result<Vec<T>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_error(k + 1, format!("row has {} entries, expected {}", row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn write_matrix_csv<T: Scalar, W: Write>(m: &DMatrix<T>, mut out: W) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_list_round_trip() {
        let g = Graph::erdos_renyi(9, 0.4, 5).unwrap();
        let mut buf = Vec::new();
        write_edge_list(&g, &mut buf).unwrap();
        assert_eq!(read_edge_list(buf.as_slice()).unwrap(), g);
    }

    #[test]
    fn edge_list_comments_and_errors() {
        let g = read_edge_list("# ring\n3\n0 1\n1 2 # last\n2,0\n".as_bytes()).unwrap();
        assert_eq!(g.edge_count(), 3);
        assert!(matches!(read_edge_list("3\n0 1 2\n".as_bytes()), Err(CornError::Parse { line: 2, .. })));
        assert!(read_edge_list("3\n0 0\n".as_bytes()).is_err());
        assert!(read_edge_list("".as_bytes()).is_err());
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = DMatrix::from_fn(4, 3, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0) * 1e-3 - 0.7);
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).unwrap();
        let back: DMatrix<f64> = read_matrix_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(read_matrix_csv::<f64, _>("1,2\n3\n".as_bytes()).is_err());
    }
}
