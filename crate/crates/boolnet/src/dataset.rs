//! MNIST ingestion: IDX container parsing, pixel normalization and the
//! train/validation split.
//!
//! Files are read from local paths; nothing is downloaded. Pixels are
//! scaled from raw bytes to [0, 1] by division by 255 with no centering —
//! the first network layer owns any further scaling.

use crate::nn::Tensor;
use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {field} is {found}, expected {expected}")]
    Header { path: PathBuf, field: &'static str, found: u64, expected: u64 },
    #[error("label {value} at index {index} is outside 0..=9")]
    BadLabel { index: usize, value: u8 },
    #[error("image file has {images} samples but label file has {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("cannot split {found} samples at {at}")]
    BadSplit { found: usize, at: usize },
}

/// Images with their class labels. `images` is `[count, 28, 28]` with
/// values in [0, 1]; `labels` holds one digit per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub images: Tensor,
    pub labels: Vec<u8>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The samples `lo..hi`, order preserved.
    pub fn slice(&self, lo: usize, hi: usize) -> LabeledSet {
        LabeledSet {
            images: self.images.slice_rows(lo, hi),
            labels: self.labels[lo..hi].to_vec(),
        }
    }
}

fn read_u32(r: &mut impl Read, path: &Path, field: &'static str) -> Result<u32, DatasetError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source: io::Error::new(source.kind(), format!("reading {field}: {source}")),
    })?;
    Ok(u32::from_be_bytes(buf))
}

fn expect_u32(
    r: &mut impl Read,
    path: &Path,
    field: &'static str,
    expected: u32,
) -> Result<(), DatasetError> {
    let found = read_u32(r, path, field)?;
    if found != expected {
        return Err(DatasetError::Header {
            path: path.to_path_buf(),
            field,
            found: found as u64,
            expected: expected as u64,
        });
    }
    Ok(())
}

fn read_payload(r: &mut impl Read, path: &Path, len: usize) -> Result<Vec<u8>, DatasetError> {
    let mut data = vec![0u8; len];
    r.read_exact(&mut data)
        .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    // A stray trailing byte means the header undercounts; flag it.
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(data),
        Ok(_) => Err(DatasetError::Header {
            path: path.to_path_buf(),
            field: "file length",
            found: len as u64 + 1,
            expected: len as u64,
        }),
        Err(source) => Err(DatasetError::Io { path: path.to_path_buf(), source }),
    }
}

fn read_idx_images(mut r: impl Read, path: &Path) -> Result<Tensor, DatasetError> {
    expect_u32(&mut r, path, "image magic", 0x0000_0803)?;
    let count = read_u32(&mut r, path, "image count")? as usize;
    expect_u32(&mut r, path, "row count", 28)?;
    expect_u32(&mut r, path, "column count", 28)?;
    let raw = read_payload(&mut r, path, count * 28 * 28)?;
    let data = raw.iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Tensor::from_vec(&[count, 28, 28], data))
}

fn read_idx_labels(mut r: impl Read, path: &Path) -> Result<Vec<u8>, DatasetError> {
    expect_u32(&mut r, path, "label magic", 0x0000_0801)?;
    let count = read_u32(&mut r, path, "label count")? as usize;
    let labels = read_payload(&mut r, path, count)?;
    for (index, &value) in labels.iter().enumerate() {
        if value > 9 {
            return Err(DatasetError::BadLabel { index, value });
        }
    }
    Ok(labels)
}

fn open(path: &Path) -> Result<BufReader<File>, DatasetError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

/// Loads an IDX image file and its matching IDX label file.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledSet, DatasetError> {
    let images = read_idx_images(open(images_path)?, images_path)?;
    let labels = read_idx_labels(open(labels_path)?, labels_path)?;
    if images.dim(0) != labels.len() {
        return Err(DatasetError::CountMismatch { images: images.dim(0), labels: labels.len() });
    }
    Ok(LabeledSet { images, labels })
}

/// Splits off the last `set.len() - at` samples; both halves preserve the
/// original order, so concatenating them reproduces the input exactly.
pub fn split_at(set: &LabeledSet, at: usize) -> Result<(LabeledSet, LabeledSet), DatasetError> {
    if at == 0 || at >= set.len() {
        return Err(DatasetError::BadSplit { found: set.len(), at });
    }
    Ok((set.slice(0, at), set.slice(at, set.len())))
}

/// The canonical split: the last 10,000 of the 60,000 training samples
/// become the validation set.
pub fn split_validation(set: &LabeledSet) -> Result<(LabeledSet, LabeledSet), DatasetError> {
    if set.len() != 60_000 {
        return Err(DatasetError::BadSplit { found: set.len(), at: 50_000 });
    }
    split_at(set, 50_000)
}

/// Proportional override for reduced-size runs: the first
/// `round(len · ratio)` samples train, the rest validate.
pub fn split_validation_ratio(
    set: &LabeledSet,
    ratio: f64,
) -> Result<(LabeledSet, LabeledSet), DatasetError> {
    let at = (set.len() as f64 * ratio).round() as usize;
    split_at(set, at)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn idx_images(count: u32, pixels: &[u8]) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        buf.extend_from_slice(&count.to_be_bytes());
        buf.extend_from_slice(&28u32.to_be_bytes());
        buf.extend_from_slice(&28u32.to_be_bytes());
        buf.extend_from_slice(pixels);
        buf
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        buf.extend_from_slice(labels);
        buf
    }

    fn data_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
    }

    #[test]
    fn synthetic_idx_round_trips_and_normalizes() {
        let mut pixels = vec![0u8; 2 * 28 * 28];
        pixels[0] = 255;
        pixels[1] = 51;
        let images = read_idx_images(Cursor::new(idx_images(2, &pixels)), Path::new("mem")).unwrap();
        assert_eq!(images.shape(), &[2, 28, 28]);
        assert_eq!(images.data()[0], 1.0);
        assert_eq!(images.data()[1], 51.0 / 255.0);
        let labels = read_idx_labels(Cursor::new(idx_labels(&[3, 7])), Path::new("mem")).unwrap();
        assert_eq!(labels, vec![3, 7]);
    }

    #[test]
    fn header_errors_name_the_field() {
        let mut bad_magic = idx_images(1, &[0; 28 * 28]);
        bad_magic[3] = 0x01;
        match read_idx_images(Cursor::new(bad_magic), Path::new("mem")) {
            Err(DatasetError::Header { field: "image magic", found, .. }) => {
                assert_eq!(found, 0x0801)
            }
            other => panic!("expected magic error, got {other:?}"),
        }

        let mut bad_rows = idx_images(1, &[0; 28 * 28]);
        bad_rows[11] = 27;
        match read_idx_images(Cursor::new(bad_rows), Path::new("mem")) {
            Err(DatasetError::Header { field: "row count", found: 27, .. }) => {}
            other => panic!("expected row error, got {other:?}"),
        }

        let truncated = idx_images(2, &[0; 28 * 28]);
        assert!(matches!(
            read_idx_images(Cursor::new(truncated), Path::new("mem")),
            Err(DatasetError::Io { .. })
        ));

        let mut overlong = idx_labels(&[1]);
        overlong.push(9);
        assert!(matches!(
            read_idx_labels(Cursor::new(overlong), Path::new("mem")),
            Err(DatasetError::Header { field: "file length", .. })
        ));
    }

    #[test]
    fn split_preserves_order_and_concatenates_back() {
        let n = 12;
        let pixels: Vec<u8> = (0..n * 28 * 28).map(|i| (i % 251) as u8).collect();
        let images = read_idx_images(Cursor::new(idx_images(n as u32, &pixels)), Path::new("mem"))
            .unwrap();
        let labels: Vec<u8> = (0..n as u8).map(|i| i % 10).collect();
        let set = LabeledSet { images, labels };
        let (head, tail) = split_validation_ratio(&set, 0.75).unwrap();
        assert_eq!(head.len(), 9);
        assert_eq!(tail.len(), 3);
        assert_eq!(tail.labels[0], set.labels[9]);
        let mut rejoined = head.images.data().to_vec();
        rejoined.extend_from_slice(tail.images.data());
        assert_eq!(rejoined, set.images.data());
        let mut relabeled = head.labels.clone();
        relabeled.extend_from_slice(&tail.labels);
        assert_eq!(relabeled, set.labels);
    }

    #[test]
    fn official_files_load_with_expected_counts() {
        let dir = data_dir();
        let train =
            load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))
                .unwrap();
        assert_eq!(train.len(), 60_000);
        assert!(train.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let (kept, val) = split_validation(&train).unwrap();
        assert_eq!((kept.len(), val.len()), (50_000, 10_000));
        assert_eq!(val.labels[0], train.labels[50_000]);

        let test =
            load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))
                .unwrap();
        assert_eq!(test.len(), 10_000);
    }

    #[test]
    fn ratio_split_rejects_degenerate_cuts() {
        let images = Tensor::zeros(&[3, 28, 28]);
        let set = LabeledSet { images, labels: vec![0, 1, 2] };
        assert!(matches!(
            split_validation_ratio(&set, 0.0),
            Err(DatasetError::BadSplit { found: 3, at: 0 })
        ));
        assert!(matches!(split_validation(&set), Err(DatasetError::BadSplit { .. })));
    }
}
