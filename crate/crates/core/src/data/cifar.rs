//! CIFAR-10 binary format: records of 1 label byte + 3072 pixel bytes
//! (3 channels x 32 x 32, channel-major).

use std::fs;
use std::path::Path;

use super::{DataError, DatasetSplit};
use crate::qformat::FloatTensor;

const RECORD_LEN: usize = 1 + 3 * 32 * 32;

/// Load and concatenate CIFAR-10 binary batch files, scaling pixels into
/// [0, 1]. Files whose length is not a whole number of records are
/// rejected.
pub fn load_cifar10(batch_paths: &[impl AsRef<Path>]) -> Result<DatasetSplit, DataError> {
    if batch_paths.is_empty() {
        return Err(DataError::Format("no CIFAR-10 batch files given".into()));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for p in batch_paths {
        let path = p.as_ref();
        let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
        if bytes.is_empty() || bytes.len() % RECORD_LEN != 0 {
            return Err(DataError::parse(
                path,
                format!("file length {} is not a multiple of the {RECORD_LEN}-byte record", bytes.len()),
            ));
        }
        for record in bytes.chunks_exact(RECORD_LEN) {
            let label = record[0];
            if label > 9 {
                return Err(DataError::parse(path, format!("label byte {label} out of range")));
            }
            labels.push(label as u32);
            data.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    let n = labels.len();
    let images = FloatTensor { shape: vec![n, 3, 32, 32], data };
    DatasetSplit::new(images, labels, 10)
}
