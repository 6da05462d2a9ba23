//! MNIST in the IDX container: big-endian `u32` magic and dimension sizes
//! followed by raw unsigned bytes.

use std::fs;
use std::path::Path;

use super::{Dataset, Example};
use crate::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

pub const MNIST_LABELS: usize = 10;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(format!("{what}: truncated header")))
}

struct Images {
    count: usize,
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
}

fn parse_images(bytes: Vec<u8>) -> Result<Images> {
    let magic = be_u32(&bytes, 0, "image file")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(format!(
            "image file: bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = be_u32(&bytes, 4, "image file")? as usize;
    let rows = be_u32(&bytes, 8, "image file")? as usize;
    let cols = be_u32(&bytes, 12, "image file")? as usize;
    let expected = count * rows * cols;
    if bytes.len() - 16 != expected {
        return Err(Error::format(format!(
            "image file: header promises {expected} pixel bytes, found {}",
            bytes.len() - 16
        )));
    }
    let mut pixels = bytes;
    pixels.drain(..16);
    Ok(Images {
        count,
        rows,
        cols,
        pixels,
    })
}

fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "label file")?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(format!(
            "label file: bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4, "label file")? as usize;
    if bytes.len() - 8 != count {
        return Err(Error::format(format!(
            "label file: header promises {count} labels, found {}",
            bytes.len() - 8
        )));
    }
    Ok(bytes[8..].to_vec())
}

/// Builds a dataset from raw IDX image and label file contents.
pub(crate) fn mnist_from_bytes(image_bytes: Vec<u8>, label_bytes: &[u8], limit: Option<usize>) -> Result<Dataset> {
    let images = parse_images(image_bytes)?;
    let labels = parse_labels(label_bytes)?;
    if labels.len() != images.count {
        return Err(Error::format(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let dim = images.rows * images.cols;
    let take = limit.unwrap_or(images.count).min(images.count);
    let examples = images
        .pixels
        .chunks_exact(dim.max(1))
        .zip(labels.iter())
        .take(take)
        .map(|(px, &label)| Example::new(px.iter().map(|&p| f64::from(p) / 255.0).collect(), usize::from(label)))
        .collect();
    Dataset::new(examples, MNIST_LABELS, dim)
}

/// Loads an MNIST image/label file pair with pixels scaled into `[0, 1]`.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    load_mnist_idx_limit(images_path, labels_path, None)
}

/// Like [`load_mnist_idx`] but keeps only the first `limit` examples.
pub fn load_mnist_idx_limit(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;
    mnist_from_bytes(image_bytes, &label_bytes, limit)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        out.extend_from_slice(&count.to_be_bytes());
        out.extend_from_slice(&rows.to_be_bytes());
        out.extend_from_slice(&cols.to_be_bytes());
        out.extend_from_slice(pixels);
        out
    }

    pub(crate) fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn header_layout() {
        let images = idx_images(10_000, 28, 28, &vec![0u8; 10_000 * 784]);
        assert_eq!(&images[..4], &[0x00, 0x00, 0x08, 0x03]);
        let ds = mnist_from_bytes(images, &idx_labels(&[3u8; 10_000]), None).unwrap();
        assert_eq!(ds.len(), 10_000);
        assert_eq!(ds.feature_dim(), 784);
        assert_eq!(ds.num_labels(), 10);
    }

    #[test]
    fn pixel_scaling_and_labels() {
        let images = idx_images(2, 1, 2, &[255, 0, 51, 255]);
        let ds = mnist_from_bytes(images, &idx_labels(&[7, 0]), None).unwrap();
        assert_eq!(ds.examples()[0].features, vec![1.0, 0.0]);
        assert!((ds.examples()[1].features[0] - 0.2).abs() < 1e-15);
        assert_eq!(ds.examples()[0].label, 7);
        assert!(ds.examples()[0].label < ds.num_labels());
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut images = idx_images(1, 1, 1, &[0]);
        images[3] = 0x01;
        let err = mnist_from_bytes(images, &idx_labels(&[0]), None).unwrap_err();
        assert!(matches!(err, Error::Format(_)));

        let images = idx_images(1, 1, 1, &[0]);
        let mut labels = idx_labels(&[0]);
        labels[3] = 0x03;
        let err = mnist_from_bytes(images, &labels, None).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn count_mismatch_is_format_error() {
        let images = idx_images(2, 1, 1, &[0, 1]);
        let err = mnist_from_bytes(images, &idx_labels(&[0]), None).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        let truncated = idx_images(3, 1, 1, &[0, 1]);
        let err = mnist_from_bytes(truncated, &idx_labels(&[0, 1, 2]), None).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn label_out_of_range_rejected() {
        let images = idx_images(1, 1, 1, &[0]);
        assert!(mnist_from_bytes(images, &idx_labels(&[10]), None).is_err());
    }

    #[test]
    fn limit_truncates() {
        let images = idx_images(3, 1, 1, &[0, 1, 2]);
        let ds = mnist_from_bytes(images, &idx_labels(&[0, 1, 2]), Some(2)).unwrap();
        assert_eq!(ds.labels(), vec![0, 1]);
    }
}
