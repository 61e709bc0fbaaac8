//! Feature CSV: a header `label,f0,f1,...` then one row per instance.
//! A label of `-1` marks an unlabeled row. Floats are written in their
//! shortest round-trip form, so reading back reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

use super::{LabeledSet, UnlabeledSet};

pub const UNLABELED: i64 = -1;

/// Serialises rows and labels into the CSV text format.
pub fn write_feature_csv(features: &Matrix, labels: &[i64]) -> String {
    let mut out = String::from("label");
    for j in 0..features.cols() {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for (row, label) in features.row_iter().zip(labels) {
        let _ = write!(out, "{label}");
        for v in row {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}

/// Parses the CSV text format. `path` is only used in error messages.
pub fn read_feature_csv(text: &str, path: &Path) -> Result<(Matrix, Vec<i64>)> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (hline, header) = lines.next().ok_or_else(|| err(1, "missing header row".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") {
        return Err(err(hline, format!("header must start with `label`, found `{}`", cols[0])));
    }
    for (j, name) in cols[1..].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(err(hline, format!("header column {} should be `f{j}`, found `{name}`", j + 1)));
        }
    }
    let dims = cols.len() - 1;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != dims + 1 {
            return Err(err(ln, format!("expected {} columns, found {}", dims + 1, cells.len())));
        }
        let label: i64 = cells[0]
            .parse()
            .map_err(|_| err(ln, format!("label `{}` is not an integer", cells[0])))?;
        if label < UNLABELED {
            return Err(err(ln, format!("label {label} is negative (only -1 is allowed)")));
        }
        labels.push(label);
        for (j, cell) in cells[1..].iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| err(ln, format!("column f{j}: `{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(ln, format!("column f{j}: non-finite value")));
            }
            data.push(v);
        }
    }
    let features = Matrix::new(labels.len(), dims, data)?;
    Ok((features, labels))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a labeled set; any `-1` label is an error.
pub fn load_labeled(path: impl AsRef<Path>) -> Result<LabeledSet> {
    let path = path.as_ref();
    let (features, labels) = read_feature_csv(&read_text(path)?, path)?;
    if let Some(row) = labels.iter().position(|&l| l == UNLABELED) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: row + 2,
            message: "row is unlabeled but a labeled set was expected".into(),
        });
    }
    LabeledSet::new(features, labels)
}

/// Loads features only; the label column, whatever it holds, is discarded.
pub fn load_unlabeled(path: impl AsRef<Path>) -> Result<UnlabeledSet> {
    let path = path.as_ref();
    let (features, _) = read_feature_csv(&read_text(path)?, path)?;
    Ok(UnlabeledSet::new(features))
}

pub fn save_labeled(set: &LabeledSet, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &write_feature_csv(&set.features, &set.labels))
}

pub fn save_unlabeled(set: &UnlabeledSet, path: impl AsRef<Path>) -> Result<()> {
    let labels = vec![UNLABELED; set.len()];
    write_text(path.as_ref(), &write_feature_csv(&set.features, &labels))
}
