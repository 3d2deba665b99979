//! Dataset loading and saving, synthetic blobs, graph corruption.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::binio::{expect_eof, read_f64s, read_magic, read_u32, write_f64s, write_len};
use crate::error::{Error, Result};
use crate::graph::MknnGraph;
use crate::rng::{substream, Stream};

const MATRIX_MAGIC: &[u8; 8] = b"CPACMAT1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    #[default]
    Csv,
    Binary,
}

impl DataFormat {
    /// `.bin` / `.mat` mean the binary matrix format, anything else CSV.
    pub fn from_extension(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("mat") => DataFormat::Binary,
            _ => DataFormat::Csv,
        }
    }
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "binary" | "bin" | "binary-matrix" => Ok(DataFormat::Binary),
            other => Err(Error::Parameter(format!("unknown data format '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
    labels: Option<Vec<usize>>,
    image_shape: Option<(usize, usize)>,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(((r, c), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "value {v} at row {r}, column {c}"
            )));
        }
        Ok(Self {
            values,
            labels: None,
            image_shape: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::dim("labels vs rows", self.n(), labels.len()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_image_shape(mut self, height: usize, width: usize) -> Result<Self> {
        if height * width != self.dim() {
            return Err(Error::dim(
                "image height × width vs columns",
                self.dim(),
                height * width,
            ));
        }
        self.image_shape = Some((height, width));
        Ok(self)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Per-feature zero mean and unit variance; constant columns are only
    /// centered.
    pub fn standardize(&mut self) {
        let n = self.n().max(1) as f64;
        for mut col in self.values.axis_iter_mut(Axis(1)) {
            let mean = col.sum() / n;
            col.mapv_inplace(|v| v - mean);
            let sd = (col.dot(&col) / n).sqrt();
            if sd > 0.0 {
                col.mapv_inplace(|v| v / sd);
            }
        }
    }
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<DataMatrix> {
    match format {
        DataFormat::Csv => load_csv(path),
        DataFormat::Binary => load_binary(path),
    }
}

pub fn save_dataset(path: &Path, data: &DataMatrix, format: DataFormat) -> Result<()> {
    match format {
        DataFormat::Csv => save_csv(path, data.values()),
        DataFormat::Binary => save_binary(path, data.values()),
    }
}

/// Headerless numeric CSV, one row per point.
pub fn load_csv(path: &Path) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            location: format!("{}:{line}", path.display()),
            message: e.to_string(),
        })?;
        let width = *cols.get_or_insert(rec.len());
        if rec.len() != width {
            return Err(Error::Parse {
                location: format!("{}:{line}", path.display()),
                message: format!("ragged row: expected {width} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            let bad = |m: &str| Error::Parse {
                location: format!("{}:{line}:{}", path.display(), j + 1),
                message: format!("{m} '{cell}'"),
            };
            let v: f64 = cell.parse().map_err(|_| bad("not a number:"))?;
            if !v.is_finite() {
                return Err(bad("non-finite value"));
            }
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse {
        location: path.display().to_string(),
        message: "empty file".into(),
    })?;
    DataMatrix::new(Array2::from_shape_vec((rows, cols), values).expect("row-major fill"))
}

pub fn save_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<Array2<f64>> {
    read_magic(r, MATRIX_MAGIC)?;
    let rows = read_u32(r, "row count")? as usize;
    let cols = read_u32(r, "column count")? as usize;
    let payload = read_f64s(r, rows * cols, "matrix payload")?;
    expect_eof(r)?;
    Ok(Array2::from_shape_vec((rows, cols), payload).expect("sized payload"))
}

pub fn write_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    write_len(w, m.nrows(), "row count")?;
    write_len(w, m.ncols(), "column count")?;
    write_f64s(
        w,
        m.as_standard_layout().as_slice().expect("standard layout"),
    )
}

pub fn load_binary(path: &Path) -> Result<DataMatrix> {
    let m = read_matrix(&mut BufReader::new(File::open(path)?))?;
    DataMatrix::new(m)
}

pub fn save_binary(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, m)?;
    w.flush()?;
    Ok(())
}

/// One non-negative integer per line; blank lines are skipped.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|e| Error::Parse {
                location: format!("{}:{}", path.display(), i + 1),
                message: format!("bad label '{}': {e}", l.trim()),
            })
        })
        .collect()
}

pub fn save_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in labels {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

/// `data.csv` → `data.labels`, looked up when no label path is given.
pub fn sibling_labels_path(path: &Path) -> PathBuf {
    path.with_extension("labels")
}

/// Blob centers: `separation/√2 · e_j` (pairwise distance exactly
/// `separation`) when the blobs fit in `d` axes, otherwise an integer lattice
/// with spacing `separation`.
pub fn blob_centers(d: usize, clusters: usize, separation: f64) -> Array2<f64> {
    let mut centers = Array2::zeros((clusters, d));
    if clusters <= d {
        for j in 0..clusters {
            centers[[j, j]] = separation / std::f64::consts::SQRT_2;
        }
        return centers;
    }
    let side = (1..)
        .find(|s: &usize| s.pow(d as u32) >= clusters)
        .expect("finite lattice");
    for j in 0..clusters {
        let mut rest = j;
        for c in 0..d {
            centers[[j, c]] = (rest % side) as f64 * separation;
            rest /= side;
        }
    }
    centers
}

/// Isotropic unit-variance Gaussian blobs; point `i` belongs to blob
/// `i % clusters`.
pub fn synth_blobs(
    n: usize,
    d: usize,
    clusters: usize,
    separation: f64,
    seed: u64,
) -> Result<DataMatrix> {
    if clusters == 0 || d == 0 {
        return Err(Error::Parameter(
            "need at least one cluster and one dimension".into(),
        ));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::Parameter(format!(
            "separation must be finite and >= 0, got {separation}"
        )));
    }
    let centers = blob_centers(d, clusters, separation);
    let mut rng = substream(seed, Stream::Synth);
    let labels: Vec<usize> = (0..n).map(|i| i % clusters).collect();
    let mut values = Array2::zeros((n, d));
    for (i, mut row) in values.rows_mut().into_iter().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            *v = centers[[labels[i], c]] + noise;
        }
    }
    DataMatrix::new(values)?.with_labels(labels)
}

/// Pollutes the graph: a `fraction` of points (chosen at random) each gain
/// an edge to a random point of a different class, after which all weights
/// are recomputed. Returns the injected pairs.
pub fn corrupt_graph(
    graph: &mut MknnGraph,
    labels: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let n = graph.n();
    if labels.len() != n {
        return Err(Error::dim("labels vs graph size", n, labels.len()));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Parameter(format!(
            "corruption fraction {fraction} outside [0, 1]"
        )));
    }
    let mut rng = substream(seed, Stream::Corruption);
    let count = (fraction * n as f64).round() as usize;
    let all: Vec<usize> = (0..n).collect();
    let chosen: Vec<usize> = all.choose_multiple(&mut rng, count).copied().collect();
    let mut pairs = Vec::with_capacity(count);
    for p in chosen {
        let others: Vec<usize> = (0..n).filter(|&q| labels[q] != labels[p]).collect();
        if let Some(&q) = others.choose(&mut rng) {
            pairs.push((p.min(q), p.max(q)));
        }
    }
    graph.inject_edges(&pairs)?;
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn small_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "1,2\n3,4").unwrap();
        let m = load_csv(&path).unwrap();
        assert_eq!(m.values(), &array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn nan_cell_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "1,2\n3,nan\n").unwrap();
        let err = load_csv(&path).unwrap_err().to_string();
        assert!(err.contains(":2:2"), "{err}");
        assert!(err.contains("nan"), "{err}");
    }

    #[test]
    fn ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "1,2\n3\n").unwrap();
        assert!(load_csv(&path).unwrap_err().to_string().contains(":2"));
    }

    #[test]
    fn binary_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        save_binary(&a, &array![[1.5, -2.0, 0.25], [3.0, 4.0, 1e-300]]).unwrap();
        let m = load_binary(&a).unwrap();
        save_binary(&b, m.values()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn binary_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        std::fs::write(&a, b"CPACMAT2\0\0\0\0\0\0\0\0").unwrap();
        assert!(load_binary(&a).is_err());
    }

    #[test]
    fn labels_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.labels");
        std::fs::write(&path, "0\n2\n\n1\n").unwrap();
        assert_eq!(load_labels(&path).unwrap(), vec![0, 2, 1]);
        assert_eq!(sibling_labels_path(&dir.path().join("x.csv")), path);
    }

    #[test]
    fn single_blob_labels() {
        let d = synth_blobs(10, 3, 1, 10.0, 1).unwrap();
        assert!(d.labels().unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn centers_are_separated() {
        for (d, k) in [(10, 4), (2, 7)] {
            let c = blob_centers(d, k, 10.0);
            for i in 0..k {
                for j in i + 1..k {
                    let diff = &c.row(i) - &c.row(j);
                    assert!(diff.dot(&diff).sqrt() >= 10.0 - 1e-9);
                }
            }
        }
    }

    #[test]
    fn standardize_columns() {
        let mut d = DataMatrix::new(array![[1.0, 5.0], [3.0, 5.0]]).unwrap();
        d.standardize();
        assert_eq!(d.values(), &array![[-1.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn image_shape_must_match() {
        let d = DataMatrix::new(Array2::zeros((2, 6))).unwrap();
        assert!(d.clone().with_image_shape(2, 3).is_ok());
        assert!(d.with_image_shape(2, 2).is_err());
    }
}
