//! Matrix Market coordinate files, newline-delimited vectors and key=value manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::SparseCsc;

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Writes `a` as `coordinate real general`, entries in column-major order.
pub fn write_matrix_market(path: &Path, a: &SparseCsc) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.nrows(), a.ncols(), a.nnz())?;
    for (i, j, v) in a.triplets() {
        writeln!(w, "{} {} {}", i + 1, j + 1, v)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `coordinate` matrices with `real`, `integer` or `pattern` fields and
/// `general` or `symmetric` symmetry.
pub fn read_matrix_market(path: &Path) -> Result<SparseCsc> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, "empty file"))??;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(path, format!("bad header '{header}'")));
    }
    if tokens[2] != "coordinate" {
        return Err(parse_err(path, format!("unsupported format '{}'", tokens[2])));
    }
    let pattern = match tokens[3].as_str() {
        "real" | "integer" => false,
        "pattern" => true,
        other => return Err(parse_err(path, format!("unsupported field '{other}'"))),
    };
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(path, format!("unsupported symmetry '{other}'"))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        let at = |msg: &str| parse_err(path, format!("line {}: {msg}", lineno + 2));
        match size {
            None => {
                if fields.len() != 3 {
                    return Err(at("expected 'rows cols nnz'"));
                }
                let parse = |s: &str| s.parse::<usize>().map_err(|_| at("bad size"));
                let dims = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
                triplets.reserve(dims.2);
                size = Some(dims);
            }
            Some((m, n, _)) => {
                let need = if pattern { 2 } else { 3 };
                if fields.len() < need {
                    return Err(at("short entry"));
                }
                let i: usize = fields[0].parse().map_err(|_| at("bad row index"))?;
                let j: usize = fields[1].parse().map_err(|_| at("bad column index"))?;
                if i == 0 || j == 0 || i > m || j > n {
                    return Err(at("index out of range"));
                }
                let v = if pattern {
                    1.0
                } else {
                    fields[2].parse::<f64>().map_err(|_| at("bad value"))?
                };
                triplets.push((i - 1, j - 1, v));
                if symmetric && i != j {
                    triplets.push((j - 1, i - 1, v));
                }
            }
        }
    }
    let (m, n, nnz) = size.ok_or_else(|| parse_err(path, "missing size line"))?;
    let stored = if symmetric {
        triplets.iter().filter(|t| t.0 >= t.1).count()
    } else {
        triplets.len()
    };
    if stored != nnz {
        return Err(parse_err(path, format!("expected {nnz} entries, found {stored}")));
    }
    SparseCsc::from_triplets(m, n, &triplets)
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for x in v {
        writeln!(w, "{x}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| parse_err(path, format!("line {}: bad number '{l}'", n + 1)))
        })
        .collect()
}

/// `key=value` lines; `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| parse_err(path, format!("line {}: expected key=value", n + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for (k, v) in &self.entries {
            writeln!(w, "{k}={v}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Parses a value, failing with the manifest path in the message.
    pub fn parse<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| parse_err(path, format!("missing key '{key}'")))?;
        raw.parse()
            .map_err(|_| parse_err(path, format!("bad value for '{key}': '{raw}'")))
    }
}
