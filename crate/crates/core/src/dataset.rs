//! Labeled feature datasets: IDX (MNIST) and CSV ingestion, normalization,
//! and seeded synthetic blobs.
//!
//! Features are stored column-major, one sample per column (`D x N`).

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Class index per sample. The one-hot label matrix is only built on demand.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelArray {
    values: Vec<usize>,
}

impl LabelArray {
    pub fn new(values: Vec<usize>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.values
    }

    pub fn get(&self, i: usize) -> usize {
        self.values[i]
    }

    /// Checks every label against the class count.
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self.values.iter().position(|&v| v >= classes) {
            Some(index) => Err(Error::LabelOutOfRange {
                index,
                label: self.values[index] as i64,
                classes,
            }),
            None => Ok(()),
        }
    }

    /// Samples per class (`N_k`).
    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &v in &self.values {
            counts[v] += 1;
        }
        counts
    }

    /// `C x N` one-hot matrix `Y`.
    pub fn one_hot(&self, classes: usize) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(classes, self.values.len());
        for (i, &v) in self.values.iter().enumerate() {
            y[(v, i)] = 1.0;
        }
        y
    }

    pub fn subset(&self, idx: &[usize]) -> LabelArray {
        LabelArray::new(idx.iter().map(|&i| self.values[i]).collect())
    }
}

impl From<Vec<usize>> for LabelArray {
    fn from(values: Vec<usize>) -> Self {
        Self::new(values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    /// `D x N`, one sample per column.
    pub features: DMatrix<f64>,
    pub labels: LabelArray,
    pub class_count: usize,
}

impl RawDataset {
    /// Validates label range, sample count and finiteness.
    pub fn new(features: DMatrix<f64>, labels: LabelArray, class_count: usize) -> Result<Self> {
        if features.ncols() == 0 {
            return Err(Error::EmptyDataset);
        }
        if labels.len() != features.ncols() {
            return Err(Error::DimensionMismatch {
                what: "label count vs sample count",
                expected: features.ncols(),
                actual: labels.len(),
            });
        }
        if class_count == 0 {
            return Err(Error::invalid("class count must be positive"));
        }
        labels.validate(class_count)?;
        let dim = features.nrows();
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                sample: pos / dim,
                dim: pos % dim,
            });
        }
        Ok(Self {
            features,
            labels,
            class_count,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.features.ncols() == 0
    }

    /// Classes with no samples.
    pub fn missing_classes(&self) -> Vec<usize> {
        self.labels
            .class_counts(self.class_count)
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 0)
            .map(|(k, _)| k)
            .collect()
    }

    /// The first `n` samples in storage order.
    pub fn head(&self, n: usize) -> RawDataset {
        let n = n.min(self.len());
        RawDataset {
            features: self.features.columns(0, n).into_owned(),
            labels: LabelArray::new(self.labels.as_slice()[..n].to_vec()),
            class_count: self.class_count,
        }
    }

    /// Samples `[start, start + n)` in storage order.
    pub fn slice(&self, start: usize, n: usize) -> RawDataset {
        let start = start.min(self.len());
        let n = n.min(self.len() - start);
        RawDataset {
            features: self.features.columns(start, n).into_owned(),
            labels: LabelArray::new(self.labels.as_slice()[start..start + n].to_vec()),
            class_count: self.class_count,
        }
    }
}

struct ByteReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Idx {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn u32_be(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.err(self.pos, "truncated header"))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn expect_magic(&mut self, magic: u32) -> Result<()> {
        let at = self.pos;
        let got = self.u32_be()?;
        if got != magic {
            return Err(self.err(
                at,
                format!("bad magic number 0x{got:08x}, expected 0x{magic:08x}"),
            ));
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(self.err(
                self.bytes.len(),
                format!("truncated payload: need {n} bytes from offset {}", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

/// Loads an IDX image/label pair (MNIST layout). Pixels are scaled to `[0, 1]`.
///
/// `limit` keeps the first samples in file order.
pub fn load_mnist(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<RawDataset> {
    if limit == Some(0) {
        return Err(Error::EmptyDataset);
    }
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;

    let mut img = ByteReader {
        path: images_path,
        bytes: &image_bytes,
        pos: 0,
    };
    img.expect_magic(IDX_IMAGES_MAGIC)?;
    let count = img.u32_be()? as usize;
    let rows = img.u32_be()? as usize;
    let cols = img.u32_be()? as usize;

    let mut lab = ByteReader {
        path: labels_path,
        bytes: &label_bytes,
        pos: 0,
    };
    lab.expect_magic(IDX_LABELS_MAGIC)?;
    let label_count_at = lab.pos;
    let label_count = lab.u32_be()? as usize;
    if label_count != count {
        return Err(lab.err(
            label_count_at,
            format!("count mismatch: {label_count} labels for {count} images"),
        ));
    }

    let n = limit.map_or(count, |l| l.min(count));
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let dim = rows * cols;
    let pixels = img.take(n * dim)?;
    let raw_labels = lab.take(n)?;

    let features = DMatrix::from_iterator(dim, n, pixels.iter().map(|&p| p as f64 / 255.0));
    let mut labels = Vec::with_capacity(n);
    for (i, &l) in raw_labels.iter().enumerate() {
        if l > 9 {
            return Err(lab.err(8 + i, format!("label {l} outside 0-9")));
        }
        labels.push(l as usize);
    }
    RawDataset::new(features, LabelArray::new(labels), 10)
}

/// Writes an IDX image/label pair. Feature values are quantized to `round(v * 255)`,
/// so datasets loaded by [`load_mnist`] round-trip bitwise.
pub fn write_idx(
    dataset: &RawDataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != dataset.dim() {
        return Err(Error::DimensionMismatch {
            what: "rows*cols vs feature dimension",
            expected: dataset.dim(),
            actual: rows * cols,
        });
    }
    if dataset.labels.as_slice().iter().any(|&l| l > 255) {
        return Err(Error::invalid("IDX labels must fit in one byte"));
    }
    let n = dataset.len();
    let mut img = Vec::with_capacity(16 + n * rows * cols);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [n, rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend(
        dataset
            .features
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend(dataset.labels.as_slice().iter().map(|&l| l as u8));
    fs::File::create(images_path)?.write_all(&img)?;
    fs::File::create(labels_path)?.write_all(&lab)?;
    Ok(())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, &e))?)
}

fn csv_error(path: &Path, e: &csv::Error) -> Error {
    let row = match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, .. } => pos.as_ref().map_or(0, |p| p.line()),
        _ => e.position().map_or(0, |p| p.line()),
    };
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("ragged row: {len} fields, expected {expected_len}"),
        csv::ErrorKind::Io(err) => err.to_string(),
        _ => e.to_string(),
    };
    Error::Csv {
        path: path.to_path_buf(),
        row,
        message,
    }
}

/// Loads features (one sample per row, comma separated) and labels (one integer per row).
///
/// With `classes = None` the class count is `max(label) + 1`.
pub fn load_csv(
    features_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    classes: Option<usize>,
) -> Result<RawDataset> {
    let features_path = features_path.as_ref();
    let labels_path = labels_path.as_ref();

    let mut values = Vec::new();
    let mut dim = None;
    let mut n = 0usize;
    for (row, rec) in csv_reader(features_path)?.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(features_path, &e))?;
        let d = *dim.get_or_insert(rec.len());
        // `flexible(false)` already rejects ragged rows; keep the guard for the first row.
        if rec.len() != d {
            return Err(Error::Csv {
                path: features_path.to_path_buf(),
                row: row as u64 + 1,
                message: format!("ragged row: {} fields, expected {d}", rec.len()),
            });
        }
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Csv {
                path: features_path.to_path_buf(),
                row: row as u64 + 1,
                message: format!("non-numeric cell {cell:?} in column {}", col + 1),
            })?;
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }

    let mut labels = Vec::new();
    for (row, rec) in csv_reader(labels_path)?.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(labels_path, &e))?;
        let cell = rec.get(0).unwrap_or("");
        let v: i64 = cell.parse().map_err(|_| Error::Csv {
            path: labels_path.to_path_buf(),
            row: row as u64 + 1,
            message: format!("non-integer label {cell:?}"),
        })?;
        labels.push(v);
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            what: "label rows vs feature rows",
            expected: n,
            actual: labels.len(),
        });
    }
    let classes = match classes {
        Some(c) => c,
        None => labels.iter().copied().max().map_or(0, |m| m.max(0) as usize + 1),
    };
    let mut out = Vec::with_capacity(n);
    for (index, &label) in labels.iter().enumerate() {
        if label < 0 || label as usize >= classes {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                classes,
            });
        }
        out.push(label as usize);
    }
    let d = dim.unwrap_or(0);
    RawDataset::new(DMatrix::from_vec(d, n, values), LabelArray::new(out), classes)
}

/// Writes features and labels in the format read by [`load_csv`].
pub fn write_csv(
    dataset: &RawDataset,
    features_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(features_path)?);
    for col in dataset.features.column_iter() {
        let row: Vec<String> = col.iter().map(|v| format!("{v:?}")).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    let mut l = std::io::BufWriter::new(fs::File::create(labels_path)?);
    for v in dataset.labels.as_slice() {
        writeln!(l, "{v}")?;
    }
    l.flush()?;
    Ok(())
}

/// Gaussian blobs: class `k` is centered at a standard-normal random point and
/// its samples add isotropic noise with standard deviation `spread`.
/// Samples are stored class by class, so labels come out sorted.
pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<RawDataset> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::invalid("synth_blobs needs classes, per_class and dim >= 1"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::invalid("spread must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = DMatrix::<f64>::from_fn(dim, classes, |_, _| StandardNormal.sample(&mut rng));
    let n = classes * per_class;
    let mut features = DMatrix::<f64>::zeros(dim, n);
    let mut labels = Vec::with_capacity(n);
    let noise = Normal::new(0.0, spread.max(f64::MIN_POSITIVE)).unwrap();
    for k in 0..classes {
        for s in 0..per_class {
            let i = k * per_class + s;
            for d in 0..dim {
                let jitter = if spread == 0.0 {
                    0.0
                } else {
                    noise.sample(&mut rng)
                };
                features[(d, i)] = centers[(d, k)] + jitter;
            }
            labels.push(k);
        }
    }
    RawDataset::new(features, LabelArray::new(labels), classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormMode {
    /// Each sample scaled to Euclidean norm 1.
    #[default]
    UnitNorm,
    /// Per-dimension mean removed across samples, then unit norm.
    ZeroMeanUnitNorm,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit_norm" => Ok(NormMode::UnitNorm),
            "zero_mean_unit_norm" => Ok(NormMode::ZeroMeanUnitNorm),
            other => Err(Error::invalid(format!("unknown normalization {other:?}"))),
        }
    }
}

impl std::fmt::Display for NormMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormMode::UnitNorm => "unit_norm",
            NormMode::ZeroMeanUnitNorm => "zero_mean_unit_norm",
        })
    }
}

pub fn normalize(dataset: &RawDataset, mode: NormMode) -> Result<RawDataset> {
    let mut features = dataset.features.clone();
    if mode == NormMode::ZeroMeanUnitNorm {
        let mean = features.column_mean();
        for mut col in features.column_iter_mut() {
            col -= &mean;
        }
    }
    for (i, mut col) in features.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::ZeroNorm(i));
        }
        col /= norm;
    }
    Ok(RawDataset {
        features,
        labels: dataset.labels.clone(),
        class_count: dataset.class_count,
    })
}
