//! IDX (MNIST) binary format: big-endian header, raw pixel/label bytes.

use std::fs;
use std::path::Path;

use super::{DataError, DatasetSplit};
use crate::qformat::FloatTensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Load an IDX image/label file pair. Pixels are scaled by 1/255 into
/// [0, 1]; a malformed or truncated file is rejected whole, naming the
/// offending field.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<DatasetSplit, DataError> {
    let img_bytes = fs::read(images_path).map_err(|e| DataError::io(images_path, e))?;
    let lbl_bytes = fs::read(labels_path).map_err(|e| DataError::io(labels_path, e))?;

    let magic = read_be(&img_bytes, 0, images_path, "magic")?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::parse(
            images_path,
            format!("image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = read_be(&img_bytes, 4, images_path, "image count")? as usize;
    let rows = read_be(&img_bytes, 8, images_path, "row count")? as usize;
    let cols = read_be(&img_bytes, 12, images_path, "column count")? as usize;
    let expected = 16 + count * rows * cols;
    if img_bytes.len() != expected {
        return Err(DataError::parse(
            images_path,
            format!("pixel data: file is {} bytes, header implies {expected}", img_bytes.len()),
        ));
    }

    let magic = read_be(&lbl_bytes, 0, labels_path, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(DataError::parse(
            labels_path,
            format!("label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        ));
    }
    let lbl_count = read_be(&lbl_bytes, 4, labels_path, "label count")? as usize;
    if lbl_bytes.len() != 8 + lbl_count {
        return Err(DataError::parse(
            labels_path,
            format!("label data: file is {} bytes, header implies {}", lbl_bytes.len(), 8 + lbl_count),
        ));
    }
    if lbl_count != count {
        return Err(DataError::parse(
            labels_path,
            format!("label count {lbl_count} does not match image count {count}"),
        ));
    }

    let data: Vec<f64> = img_bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<u32> = lbl_bytes[8..].iter().map(|&b| b as u32).collect();
    let images = FloatTensor { shape: vec![count, 1, rows, cols], data };
    DatasetSplit::new(images, labels, 10)
}

fn read_be(bytes: &[u8], offset: usize, path: &Path, field: &str) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DataError::parse(path, format!("{field}: file truncated before offset {offset}")))
}
