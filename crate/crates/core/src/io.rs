//! Comma-separated point files: one header line, one row per point,
//! '.'-decimal floats, newline-terminated.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub fn to_csv_string(header: &[&str], rows: &Array2<f64>) -> Result<String> {
    if header.len() != rows.ncols() {
        return Err(Error::shape("csv columns", header.len(), rows.ncols()));
    }
    let mut out = String::with_capacity(rows.len() * 20 + 32);
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows.rows() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("write to string");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &Array2<f64>) -> Result<()> {
    let text = to_csv_string(header, rows)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str, origin: &str) -> Result<(Vec<String>, Array2<f64>)> {
    let mut lines = text.lines();
    let header: Vec<String> = match lines.next() {
        Some(h) if !h.trim().is_empty() => h.split(',').map(|s| s.trim().to_string()).collect(),
        _ => {
            return Err(Error::Parse {
                path: origin.into(),
                line: 1,
                reason: "missing header".into(),
            })
        }
    };
    let cols = header.len();
    let mut values = Vec::new();
    let mut n_rows = 0;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for tok in line.split(',') {
            let v: f64 = tok.trim().parse().map_err(|_| Error::Parse {
                path: origin.into(),
                line: i + 2,
                reason: format!("invalid number '{tok}'"),
            })?;
            values.push(v);
            count += 1;
        }
        if count != cols {
            return Err(Error::Parse {
                path: origin.into(),
                line: i + 2,
                reason: format!("expected {cols} fields, found {count}"),
            });
        }
        n_rows += 1;
    }
    let data = Array2::from_shape_vec((n_rows, cols), values).expect("row lengths checked");
    Ok((header, data))
}

pub fn read_csv(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, &path.display().to_string())
}

/// Read a file and check that its header matches `expected` exactly.
pub fn read_csv_expect(path: &Path, expected: &[&str]) -> Result<Array2<f64>> {
    let (header, data) = read_csv(path)?;
    if header != expected {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            reason: format!("expected header {}, found {}", expected.join(","), header.join(",")),
        });
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn points_format() {
        let text = to_csv_string(&["x0", "x1"], &array![[0.5, -1.0], [1e-3, 2.25]]).unwrap();
        assert_eq!(text, "x0,x1\n0.5,-1\n0.001,2.25\n");
        let (h, back) = parse_csv(&text, "mem").unwrap();
        assert_eq!(h, vec!["x0", "x1"]);
        assert_eq!(back, array![[0.5, -1.0], [1e-3, 2.25]]);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(parse_csv("a,b\n1,2\n3\n", "mem").is_err());
        assert!(parse_csv("", "mem").is_err());
    }
}
