//! Host-side data layout transforms for accelerators that execute on
//! channel-vectorized data: (N, C, H, W) <-> (N, ceil(C/V), H, W, V).

use super::DeviceError;
use crate::qformat::QTensor;

/// Reorder (N, C, H, W) into the vectorized layout (N, ceil(C/V), H, W, V),
/// zero-padding the channel tail when C is not a multiple of V. Values are
/// only permuted (plus zeros); nothing is rescaled.
pub fn data_layout_reorder(x: &QTensor, vector_width: usize) -> Result<QTensor, DeviceError> {
    if vector_width == 0 {
        return Err(DeviceError::Layout("vector_width must be positive".into()));
    }
    let [n, c, h, w] = shape4(x)?;
    let v = vector_width;
    let blocks = c.div_ceil(v);
    let mut out = vec![0i8; n * blocks * h * w * v];
    for ni in 0..n {
        for ci in 0..c {
            let (block, lane) = (ci / v, ci % v);
            for y in 0..h {
                for xx in 0..w {
                    let src = ((ni * c + ci) * h + y) * w + xx;
                    let dst = ((((ni * blocks + block) * h + y) * w) + xx) * v + lane;
                    out[dst] = x.data[src];
                }
            }
        }
    }
    Ok(QTensor { shape: vec![n, blocks, h, w, v], data: out, format: x.format })
}

/// Exact inverse of [`data_layout_reorder`], dropping the zero-padded
/// channel tail. `original_channels` must be consistent with the blocked
/// shape: ceil(original_channels / V) blocks.
pub fn data_layout_recover(x: &QTensor, original_channels: usize) -> Result<QTensor, DeviceError> {
    if x.shape.len() != 5 {
        return Err(DeviceError::Layout(format!(
            "expected a 5-d vectorized tensor, got shape {:?}",
            x.shape
        )));
    }
    let (n, blocks, h, w, v) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3], x.shape[4]);
    if original_channels == 0 || original_channels.div_ceil(v) != blocks {
        return Err(DeviceError::Layout(format!(
            "{original_channels} channels inconsistent with {blocks} blocks of {v} lanes"
        )));
    }
    let c = original_channels;
    let mut out = vec![0i8; n * c * h * w];
    for ni in 0..n {
        for ci in 0..c {
            let (block, lane) = (ci / v, ci % v);
            for y in 0..h {
                for xx in 0..w {
                    let src = ((((ni * blocks + block) * h + y) * w) + xx) * v + lane;
                    let dst = ((ni * c + ci) * h + y) * w + xx;
                    out[dst] = x.data[src];
                }
            }
        }
    }
    Ok(QTensor { shape: vec![n, c, h, w], data: out, format: x.format })
}

fn shape4(x: &QTensor) -> Result<[usize; 4], DeviceError> {
    if x.shape.len() == 4 {
        Ok([x.shape[0], x.shape[1], x.shape[2], x.shape[3]])
    } else {
        Err(DeviceError::Layout(format!("expected a 4-d (N,C,H,W) tensor, got {:?}", x.shape)))
    }
}
