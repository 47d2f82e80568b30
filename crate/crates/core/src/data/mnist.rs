//! MNIST IDX reader.
//!
//! Images: big-endian `u32` magic `0x00000803`, count, rows, cols, then
//! `count * rows * cols` unsigned bytes. Labels: magic `0x00000801`, count,
//! then `count` bytes.

use std::path::{Path, PathBuf};

use super::{Dataset, Role};
use crate::nn::Matrix;
use crate::{IngestError, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;
const MNIST_CLASSES: usize = 10;

/// Paths of the four standard MNIST files inside one directory.
#[derive(Debug, Clone)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            train_images: d.join("train-images-idx3-ubyte"),
            train_labels: d.join("train-labels-idx1-ubyte"),
            test_images: d.join("t10k-images-idx3-ubyte"),
            test_labels: d.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn exist(&self) -> bool {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
        .iter()
        .all(|p| p.is_file())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, IngestError> {
    std::fs::read(path).map_err(|source| IngestError::Open {
        path: path.to_owned(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn need(path: &Path, bytes: &[u8], expected: usize) -> Result<(), IngestError> {
    if bytes.len() < expected {
        return Err(IngestError::Truncated {
            path: path.to_owned(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(())
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32) -> Result<(), IngestError> {
    let found = be_u32(bytes, 0);
    if found != expected {
        return Err(IngestError::BadMagic {
            path: path.to_owned(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Pixels scaled to `[0, 1]`; returns `(count, rows * cols, pixels)`.
fn parse_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f64>), IngestError> {
    need(path, bytes, 16)?;
    check_magic(path, bytes, IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4) as usize;
    let dim = be_u32(bytes, 8) as usize * be_u32(bytes, 12) as usize;
    need(path, bytes, 16 + count * dim)?;
    let pixels = bytes[16..16 + count * dim]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Ok((count, dim, pixels))
}

fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>, IngestError> {
    need(path, bytes, 8)?;
    check_magic(path, bytes, LABELS_MAGIC)?;
    let count = be_u32(bytes, 4) as usize;
    need(path, bytes, 8 + count)?;
    Ok(bytes[8..8 + count].iter().map(|&b| usize::from(b)).collect())
}

/// Reads an image/label IDX pair into a 10-class dataset.
pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>, role: Role) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let (count, dim, pixels) = parse_images(ip, &read_file(ip)?)?;
    let labels = parse_labels(lp, &read_file(lp)?)?;
    if labels.len() != count {
        return Err(IngestError::CountMismatch {
            images: count,
            labels: labels.len(),
        }
        .into());
    }
    Dataset::new(Matrix::from_vec(count, dim, pixels), labels, MNIST_CLASSES, role)
}

/// Loads `(train, test)` from a directory holding the standard file names.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let files = MnistFiles::in_dir(dir);
    let train = load_mnist(&files.train_images, &files.train_labels, Role::Train)?;
    let test = load_mnist(&files.test_images, &files.test_labels, Role::Test)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use std::io::Write;

    fn idx_images(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IMAGES_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    fn idx_labels(magic: u32, labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&magic.to_be_bytes());
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn parses_small_files() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = write(dir.path(), "i", &idx_images(2, 2, 2, &[0, 255, 51, 0, 1, 2, 3, 4]));
        let lbls = write(dir.path(), "l", &idx_labels(LABELS_MAGIC, &[7, 3]));
        let ds = load_mnist(&imgs, &lbls, Role::Test).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.input_dim(), 4);
        assert_eq!(ds.num_classes(), 10);
        assert_eq!(ds.sample(0), &[0.0, 1.0, 0.2, 0.0]);
        assert_eq!(ds.labels(), &[7, 3]);
    }

    #[test]
    fn wrong_label_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = write(dir.path(), "i", &idx_images(1, 1, 1, &[0]));
        let lbls = write(dir.path(), "l", &idx_labels(2051, &[1]));
        match load_mnist(&imgs, &lbls, Role::Train) {
            Err(Error::Ingest(IngestError::BadMagic { expected: 2049, found: 2051, .. })) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_images_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = write(dir.path(), "i", &idx_images(3, 2, 2, &[0; 5]));
        let lbls = write(dir.path(), "l", &idx_labels(LABELS_MAGIC, &[1, 2, 3]));
        assert!(matches!(
            load_mnist(&imgs, &lbls, Role::Train),
            Err(Error::Ingest(IngestError::Truncated { expected: 28, found: 21, .. }))
        ));
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = write(dir.path(), "i", &idx_images(2, 1, 1, &[0, 0]));
        let lbls = write(dir.path(), "l", &idx_labels(LABELS_MAGIC, &[1, 2, 3]));
        assert!(matches!(
            load_mnist(&imgs, &lbls, Role::Train),
            Err(Error::Ingest(IngestError::CountMismatch { images: 2, labels: 3 }))
        ));
    }

    #[test]
    fn missing_file_is_open_error() {
        let err = load_mnist("/nonexistent/a", "/nonexistent/b", Role::Train).unwrap_err();
        assert!(matches!(err, Error::Ingest(IngestError::Open { .. })));
    }
}
