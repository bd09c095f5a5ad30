//! IDX binary format ingestion (the classic big-endian digit-file layout).

use thiserror::Error;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("bad magic at byte {offset}: found {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        offset: usize,
        found: u32,
        expected: u32,
    },
    #[error("truncated file: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Grayscale images with labels; pixels in [0, 1] after ingestion (corrupted
/// copies may leave that range).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub width: usize,
    pub height: usize,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> ImageSet {
        ImageSet {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            width: self.width,
            height: self.height,
        }
    }
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(IdxError::Truncated {
            needed: end,
            got: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parse image bytes (magic 0x00000803: count, rows, cols, then unsigned
/// pixel bytes scaled to [0, 1]).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<Vec<f64>>, usize, usize), IdxError> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(IdxError::BadMagic {
            offset: 0,
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            got: bytes.len(),
        });
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * rows * cols;
        images.push(
            bytes[start..start + rows * cols]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect(),
        );
    }
    Ok((images, cols, rows))
}

/// Parse label bytes (magic 0x00000801: count, then unsigned label bytes).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>, IdxError> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(IdxError::BadMagic {
            offset: 0,
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            got: bytes.len(),
        });
    }
    Ok(bytes[8..8 + count].iter().map(|&b| b as usize).collect())
}

/// Load an image/label file pair from disk.
pub fn load_idx(images_path: &std::path::Path, labels_path: &std::path::Path) -> Result<ImageSet, IdxError> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;
    let (images, width, height) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if images.len() != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    Ok(ImageSet {
        images,
        labels,
        width,
        height,
    })
}
