//! Labeled image data: IDX ingestion, sparse feature storage and partitioning.

use std::fs;
use std::path::Path;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::RandomStream;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Pixel bytes are multiplied by this before use. Raw bytes keep gradient
/// magnitudes large enough that `b = 0.1` saturates the stochastic encoder.
pub const DEFAULT_PIXEL_SCALE: f64 = 1.0;

/// Feature rows in compressed sparse row form. Every row ends with the
/// constant-1 bias entry in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    num_features: usize,
    num_classes: usize,
    row_start: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    labels: Vec<u8>,
}

impl LabeledDataset {
    /// Builds a dataset from dense pixel rows; the bias column is appended.
    pub fn from_pixels(rows: &[Vec<f64>], labels: &[u8], num_classes: usize) -> Result<Self> {
        let width = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("dataset needs at least one row"))?;
        if labels.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        let mut b = Builder::new(width + 1, num_classes);
        for (row, &label) in rows.iter().zip(labels) {
            if row.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    actual: row.len(),
                });
            }
            b.push_row(row.iter().copied().enumerate(), label)?;
        }
        Ok(b.finish())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row width including the bias column.
    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Nonzero `(column, value)` entries of row `i`, bias last.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_start[i], self.row_start[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_features];
        let (cols, vals) = self.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            out[c as usize] = v;
        }
        out
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut b = Builder::new(self.num_features, self.num_classes);
        for &i in indices {
            let (cols, vals) = self.row(i);
            b.cols.extend_from_slice(cols);
            b.vals.extend_from_slice(vals);
            b.row_start.push(b.cols.len());
            b.labels.push(self.labels[i]);
        }
        b.finish()
    }

    /// Rows of both datasets, `self` first.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.num_features != other.num_features || self.num_classes != other.num_classes {
            return Err(Error::invalid("datasets have different shapes"));
        }
        let mut out = self.clone();
        let offset = out.cols.len();
        out.cols.extend_from_slice(&other.cols);
        out.vals.extend_from_slice(&other.vals);
        out.row_start
            .extend(other.row_start[1..].iter().map(|s| s + offset));
        out.labels.extend_from_slice(&other.labels);
        Ok(out)
    }

    /// Number of samples per label.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y as usize] += 1;
        }
        counts
    }
}

struct Builder {
    num_features: usize,
    num_classes: usize,
    row_start: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    labels: Vec<u8>,
}

impl Builder {
    fn new(num_features: usize, num_classes: usize) -> Self {
        Self {
            num_features,
            num_classes,
            row_start: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Appends one row of pixel values followed by the bias entry.
    fn push_row(&mut self, pixels: impl Iterator<Item = (usize, f64)>, label: u8) -> Result<()> {
        if label as usize >= self.num_classes {
            return Err(Error::invalid(format!(
                "label {label} outside 0..{}",
                self.num_classes
            )));
        }
        for (j, v) in pixels {
            if !v.is_finite() {
                return Err(Error::invalid(format!("non-finite feature at column {j}")));
            }
            if v != 0.0 {
                self.cols.push(j as u32);
                self.vals.push(v);
            }
        }
        self.cols.push((self.num_features - 1) as u32);
        self.vals.push(1.0);
        self.row_start.push(self.cols.len());
        self.labels.push(label);
        Ok(())
    }

    fn finish(self) -> LabeledDataset {
        LabeledDataset {
            num_features: self.num_features,
            num_classes: self.num_classes,
            row_start: self.row_start,
            cols: self.cols,
            vals: self.vals,
            labels: self.labels,
        }
    }
}

fn read_be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Loads an IDX image file and its IDX label file, scaling pixels by [`DEFAULT_PIXEL_SCALE`].
pub fn load_idx_dataset(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    load_idx_dataset_scaled(images_path, labels_path, DEFAULT_PIXEL_SCALE)
}

/// Loads an IDX pair, multiplying every pixel byte by `pixel_scale`.
pub fn load_idx_dataset_scaled(
    images_path: &Path,
    labels_path: &Path,
    pixel_scale: f64,
) -> Result<LabeledDataset> {
    parse_idx(
        &fs::read(images_path)?,
        &fs::read(labels_path)?,
        pixel_scale,
    )
}

/// Parses in-memory IDX image and label files.
pub fn parse_idx(images: &[u8], labels: &[u8], pixel_scale: f64) -> Result<LabeledDataset> {
    if !(pixel_scale.is_finite() && pixel_scale > 0.0) {
        return Err(Error::invalid(format!(
            "pixel scale must be > 0, got {pixel_scale}"
        )));
    }
    let magic = read_be_u32(images, 0, "images")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("images: bad magic {magic:#010x}")));
    }
    let magic = read_be_u32(labels, 0, "labels")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!("labels: bad magic {magic:#010x}")));
    }
    let n = read_be_u32(images, 4, "images")? as usize;
    let rows = read_be_u32(images, 8, "images")? as usize;
    let cols = read_be_u32(images, 12, "images")? as usize;
    let n_labels = read_be_u32(labels, 4, "labels")? as usize;
    if n != n_labels {
        return Err(Error::Format(format!("{n} images but {n_labels} labels")));
    }
    let pixels = rows * cols;
    let body = &images[16..];
    if body.len() != n * pixels {
        return Err(Error::Format(format!(
            "images: expected {} pixel bytes, found {}",
            n * pixels,
            body.len()
        )));
    }
    let label_body = &labels[8..];
    if label_body.len() != n {
        return Err(Error::Format(format!(
            "labels: expected {n} bytes, found {}",
            label_body.len()
        )));
    }
    let num_classes = 10;
    let mut b = Builder::new(pixels + 1, num_classes);
    for (image, &label) in body.chunks_exact(pixels).zip(label_body) {
        let entries = image
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(j, &v)| (j, f64::from(v) * pixel_scale));
        b.push_row(entries, label)
            .map_err(|e| Error::Format(format!("labels: {e}")))?;
    }
    Ok(b.finish())
}

/// Each worker draws `n` distinct rows uniformly at random; draws are
/// independent across workers.
pub fn partition_iid(
    ds: &LabeledDataset,
    num_workers: usize,
    n: usize,
    rng: &mut RandomStream,
) -> Result<Vec<LabeledDataset>> {
    if num_workers == 0 || n == 0 {
        return Err(Error::invalid("need at least one worker and one sample"));
    }
    if n > ds.len() {
        return Err(Error::invalid(format!(
            "{n} samples per worker requested from {} rows",
            ds.len()
        )));
    }
    Ok((0..num_workers)
        .map(|_| ds.subset(&index::sample(rng, ds.len(), n).into_vec()))
        .collect())
}

/// Worker `m` draws `n` distinct rows, all with label `m`.
pub fn partition_by_label(
    ds: &LabeledDataset,
    num_workers: usize,
    n: usize,
    rng: &mut RandomStream,
) -> Result<Vec<LabeledDataset>> {
    if num_workers != ds.num_classes() {
        return Err(Error::invalid(format!(
            "label partition needs one worker per class ({}), got {num_workers}",
            ds.num_classes()
        )));
    }
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, &y) in ds.labels().iter().enumerate() {
        by_label[y as usize].push(i);
    }
    by_label
        .iter()
        .enumerate()
        .map(|(label, pool)| {
            if n == 0 || n > pool.len() {
                return Err(Error::invalid(format!(
                    "label {label} has {} samples, {n} requested",
                    pool.len()
                )));
            }
            let picks: Vec<usize> = index::sample(rng, pool.len(), n)
                .into_iter()
                .map(|k| pool[k])
                .collect();
            Ok(ds.subset(&picks))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_files(images: &[[u8; 4]], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        img.extend_from_slice(&(images.len() as u32).to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        for im in images {
            img.extend_from_slice(im);
        }
        let mut lab = Vec::new();
        lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lab.extend_from_slice(labels);
        (img, lab)
    }

    #[test]
    fn parses_small_idx() {
        let (img, lab) = idx_files(&[[0, 255, 0, 51], [0, 0, 0, 0]], &[7, 2]);
        let ds = parse_idx(&img, &lab, 1.0 / 255.0).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_features(), 5);
        assert_eq!(ds.labels(), &[7, 2]);
        assert_eq!(ds.dense_row(0), vec![0.0, 1.0, 0.0, 0.2, 1.0]);
        assert_eq!(ds.dense_row(1), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_files() {
        let (img, lab) = idx_files(&[[1, 2, 3, 4]], &[1]);
        let mut bad = img.clone();
        bad[3] = 0x02;
        assert!(matches!(parse_idx(&bad, &lab, 1.0), Err(Error::Format(_))));
        assert!(matches!(
            parse_idx(&img[..img.len() - 1], &lab, 1.0),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            parse_idx(&img[..6], &lab, 1.0),
            Err(Error::Format(_))
        ));
        let (_, two_labels) = idx_files(&[], &[1, 2]);
        assert!(matches!(
            parse_idx(&img, &two_labels, 1.0),
            Err(Error::Format(_))
        ));
        let (_, bad_label) = idx_files(&[], &[10]);
        assert!(parse_idx(&img, &bad_label, 1.0).is_err());
    }

    fn toy(n_per_label: usize) -> LabeledDataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for y in 0..10u8 {
            for k in 0..n_per_label {
                rows.push(vec![f64::from(y), k as f64]);
                labels.push(y);
            }
        }
        LabeledDataset::from_pixels(&rows, &labels, 10).unwrap()
    }

    #[test]
    fn subset_and_concat() {
        let ds = toy(3);
        let s = ds.subset(&[4, 0]);
        assert_eq!(s.labels(), &[1, 0]);
        assert_eq!(s.dense_row(0), ds.dense_row(4));
        let c = s.concat(&ds.subset(&[29])).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.dense_row(2), ds.dense_row(29));
    }

    #[test]
    fn label_partition_is_pure() {
        let ds = toy(20);
        let mut rng = RandomStream::new(1);
        let parts = partition_by_label(&ds, 10, 15, &mut rng).unwrap();
        for (m, p) in parts.iter().enumerate() {
            assert_eq!(p.len(), 15);
            assert!(p.labels().iter().all(|&y| y as usize == m));
        }
        assert!(partition_by_label(&ds, 10, 21, &mut rng).is_err());
        assert!(partition_by_label(&ds, 5, 10, &mut rng).is_err());
    }

    #[test]
    fn iid_partition_draws_distinct_rows() {
        let ds = toy(20);
        let mut rng = RandomStream::new(2);
        let parts = partition_iid(&ds, 4, 50, &mut rng).unwrap();
        assert_eq!(parts.len(), 4);
        for p in &parts {
            let mut rows: Vec<Vec<u64>> = (0..p.len())
                .map(|i| p.dense_row(i).iter().map(|v| v.to_bits()).collect())
                .collect();
            rows.sort();
            rows.dedup();
            assert_eq!(rows.len(), 50);
        }
        assert!(partition_iid(&ds, 2, 201, &mut rng).is_err());
    }
}
