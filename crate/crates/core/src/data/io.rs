//! Plain-text point files: `.xyz` and `.normals` hold one whitespace-separated
//! triple per line, `.pidx` one index per line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Points of a `.xyz` file.
pub fn read_xyz(path: impl AsRef<Path>) -> Result<Vec<Vector3<f64>>> {
    read_triples(path.as_ref())
}

/// Normals of a `.normals` file. Lengths are not checked here.
pub fn read_normals(path: impl AsRef<Path>) -> Result<Vec<Vector3<f64>>> {
    read_triples(path.as_ref())
}

/// Indices of a `.pidx` file, each checked against `cloud_len`.
pub fn read_pidx(path: impl AsRef<Path>, cloud_len: usize) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (line_no, line) in data_lines(&text) {
        let index: usize = line.parse().map_err(|_| parse_error(path, line_no, format!("bad index {line:?}")))?;
        if index >= cloud_len {
            return Err(Error::Bounds { index, len: cloud_len });
        }
        out.push(index);
    }
    Ok(out)
}

pub fn write_xyz(path: impl AsRef<Path>, points: &[Vector3<f64>]) -> Result<()> {
    write_triples(path.as_ref(), points)
}

pub fn write_normals(path: impl AsRef<Path>, normals: &[Vector3<f64>]) -> Result<()> {
    write_triples(path.as_ref(), normals)
}

pub fn write_pidx(path: impl AsRef<Path>, indices: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(indices.len() * 6);
    for i in indices {
        writeln!(text, "{i}").expect("writing to a String");
    }
    write_text(path.as_ref(), &text)
}

/// Shape names of a shape-list file, one per line.
pub fn read_shape_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(data_lines(&text).map(|(_, l)| l.to_string()).collect())
}

/// Sibling file `<dir>/<name>.<ext>`.
pub fn shape_file(dir: &Path, name: &str, ext: &str) -> PathBuf {
    dir.join(format!("{name}.{ext}"))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_error(path: &Path, line: usize, msg: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    }
}

fn read_triples(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (line_no, line) in data_lines(&text) {
        let mut values = [0.0f64; 3];
        let mut fields = line.split_whitespace();
        for v in &mut values {
            let field = fields
                .next()
                .ok_or_else(|| parse_error(path, line_no, "expected three values".into()))?;
            *v = field
                .parse()
                .map_err(|_| parse_error(path, line_no, format!("bad number {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_error(path, line_no, format!("non-finite value {field:?}")));
            }
        }
        if fields.next().is_some() {
            return Err(parse_error(path, line_no, "expected three values".into()));
        }
        out.push(Vector3::from(values));
    }
    Ok(out)
}

fn write_triples(path: &Path, rows: &[Vector3<f64>]) -> Result<()> {
    let mut text = String::with_capacity(rows.len() * 72);
    for p in rows {
        writeln!(text, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z).expect("writing to a String");
    }
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
