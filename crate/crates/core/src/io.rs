//! On-disk formats: `.mat.txt` matrices, instance JSON and shared float formatting.
//!
//! Matrix text files start with a `rows cols` line followed by one row per
//! line, entries space separated with 17 significant digits, which is enough
//! for every `f64` to round-trip exactly.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DscError, Result};
use crate::model::{
    ChainMode, Dictionary, DictionaryKind, DscInstance, LayeredDictionary, SparseCode,
};

/// Fixed float formatting used in every text and CSV artifact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = format!("{} {}\n", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| fmt_f64(m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| DscError::Parse("empty matrix file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| DscError::Parse(format!("bad header {header:?}: {e}")))?;
    let [rows, cols] = dims[..] else {
        return Err(DscError::Parse(format!("bad header {header:?}")));
    };
    let mut values = Vec::with_capacity(rows * cols);
    for (r, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| DscError::Parse(format!("row {}: {e}", r + 1)))?;
        if row.len() != cols {
            return Err(DscError::Parse(format!(
                "row {} has {} entries, expected {cols}",
                r + 1,
                row.len()
            )));
        }
        values.extend(row);
    }
    if values.len() != rows * cols {
        return Err(DscError::Parse(format!(
            "expected {rows} rows, found {}",
            values.len() / cols.max(1)
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_matrix(m))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DscError::MissingArtifact(path.to_path_buf()),
        _ => e.into(),
    })?;
    parse_matrix(&text)
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(DscError::Parse("ragged matrix rows".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(n, c, &flat))
}

/// A matrix stored inline or in a sibling `.mat.txt` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixRef {
    File { file: String },
    Inline(Vec<Vec<f64>>),
}

impl MatrixRef {
    pub fn resolve(&self, base: &Path) -> Result<DMatrix<f64>> {
        match self {
            MatrixRef::Inline(rows) => from_rows(rows),
            MatrixRef::File { file } => read_matrix(&base.join(file)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub shape: Vec<(usize, usize)>,
    pub lambda: Vec<usize>,
    pub eps: Vec<f64>,
    pub seed: u64,
    pub mode: ChainMode,
    pub bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<DictionaryKind>,
    pub matrices: Vec<MatrixRef>,
    pub y: Vec<f64>,
    #[serde(default)]
    pub truth: Option<Vec<SparseCode>>,
    #[serde(default)]
    pub noise0: Option<Vec<f64>>,
}

impl InstanceFile {
    pub fn into_instance(self, base: &Path) -> Result<DscInstance> {
        let depth = self.matrices.len();
        if self.shape.len() != depth || self.lambda.len() != depth || self.eps.len() != depth {
            return Err(DscError::Parse(format!(
                "instance lists {depth} matrices but {} shapes, {} budgets, {} tolerances",
                self.shape.len(),
                self.lambda.len(),
                self.eps.len()
            )));
        }
        let mut layers = Vec::with_capacity(depth);
        for (j, m) in self.matrices.iter().enumerate() {
            let mat = m.resolve(base)?;
            if mat.shape() != self.shape[j] {
                return Err(DscError::ShapeMismatch(format!(
                    "matrix {} is {:?}, shape field says {:?}",
                    j + 1,
                    mat.shape(),
                    self.shape[j]
                )));
            }
            layers.push(Dictionary::new(mat)?);
        }
        let dicts = LayeredDictionary::new(layers)?;
        if self.y.len() != dicts.layer(1).rows() {
            return Err(DscError::ShapeMismatch(format!(
                "y has length {}, D_1 has {} rows",
                self.y.len(),
                dicts.layer(1).rows()
            )));
        }
        Ok(DscInstance {
            y: DVector::from_vec(self.y),
            dicts,
            lambda: self.lambda,
            eps: self.eps,
            truth: self.truth,
            noise0: self.noise0.map(DVector::from_vec),
            seed: self.seed,
            mode: self.mode,
            bound: self.bound,
        })
    }
}

/// Where instance matrices go when writing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixStorage {
    Inline,
    /// `<stem>.D<j>.mat.txt` next to the JSON file.
    Files,
}

pub fn instance_to_file(inst: &DscInstance, matrices: Vec<MatrixRef>) -> InstanceFile {
    InstanceFile {
        shape: inst
            .dicts
            .layers()
            .iter()
            .map(|d| (d.rows(), d.cols()))
            .collect(),
        lambda: inst.lambda.clone(),
        eps: inst.eps.clone(),
        seed: inst.seed,
        mode: inst.mode,
        bound: inst.bound,
        dictionary: None,
        matrices,
        y: inst.y.iter().copied().collect(),
        truth: inst.truth.clone(),
        noise0: inst.noise0.as_ref().map(|n| n.iter().copied().collect()),
    }
}

fn file_stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "instance".into());
    name.strip_suffix(".json").unwrap_or(&name).to_string()
}

pub fn write_instance(inst: &DscInstance, path: &Path, storage: MatrixStorage) -> Result<()> {
    let base = parent_dir(path);
    let matrices = match storage {
        MatrixStorage::Inline => inst
            .dicts
            .layers()
            .iter()
            .map(|d| MatrixRef::Inline(to_rows(d.matrix())))
            .collect(),
        MatrixStorage::Files => {
            let stem = file_stem(path);
            let mut refs = Vec::new();
            for (j, d) in inst.dicts.layers().iter().enumerate() {
                let name = format!("{stem}.D{}.mat.txt", j + 1);
                write_matrix(&base.join(&name), d.matrix())?;
                refs.push(MatrixRef::File { file: name });
            }
            refs
        }
    };
    write_json(path, &instance_to_file(inst, matrices))
}

pub fn read_instance(path: &Path) -> Result<DscInstance> {
    let file: InstanceFile = read_json(path)?;
    file.into_instance(&parent_dir(path))
}

pub fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DscError::MissingArtifact(path.to_path_buf()),
        _ => e.into(),
    })?;
    Ok(serde_json::from_str(&text)?)
}
