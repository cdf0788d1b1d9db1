//! Integer compute kernels of the simulated device: fault-injecting MAC
//! dot products, requantization, and the conv/fc/pool/relu layer loops.
//!
//! All arithmetic is wrapping. Exact dot products cannot overflow (checked
//! at network construction), but a bit flip can push the running
//! accumulator anywhere in the 32-bit range, and a hardware accumulator
//! wraps from there.

use crate::faultmodel::{apply_flip, FlipSampler, RngStream};
use crate::qformat::{QFormat, QTensor};

/// Exact int8 dot product in a 32-bit accumulator.
#[inline]
pub fn exact_dot(w: &[i8], x: &[i8]) -> i32 {
    debug_assert_eq!(w.len(), x.len());
    let mut acc = 0i32;
    for i in 0..w.len() {
        acc = acc.wrapping_add(w[i] as i32 * x[i] as i32);
    }
    acc
}

/// Int8 dot product with per-MAC fault injection: after every accumulate
/// step the sampler may flip one bit of the running 32-bit accumulator, and
/// the corrupted value propagates through the rest of the sum. With a
/// zero-rate sampler this is the exact integer dot product.
pub fn faulty_dot(w: &[i8], x: &[i8], sampler: &FlipSampler, rng: &mut RngStream) -> i32 {
    debug_assert_eq!(w.len(), x.len());
    if sampler.is_off() {
        return exact_dot(w, x);
    }
    let mut acc = 0i32;
    for i in 0..w.len() {
        acc = acc.wrapping_add(w[i] as i32 * x[i] as i32);
        if let Some(bit) = sampler.sample_flip(rng) {
            acc = apply_flip(acc, bit);
        }
    }
    acc
}

/// Requantize a 32-bit accumulator to int8: arithmetic right shift with
/// round-half-away-from-zero, then saturation.
#[inline]
pub fn requantize(acc: i32, shift: u32) -> i8 {
    let v = acc as i64;
    let rounded = if shift == 0 {
        v
    } else {
        let half = 1i64 << (shift - 1);
        if v >= 0 { (v + half) >> shift } else { -((-v + half) >> shift) }
    };
    rounded.clamp(-128, 127) as i8
}

/// Read-only activation tensor view that hides the channel layout: either
/// the default (C, H, W) or the vectorized (ceil(C/V), H, W, V) produced by
/// `data_layout_reorder`.
#[derive(Clone, Copy)]
pub enum ActivationView<'a> {
    Standard { data: &'a [i8], channels: usize, height: usize, width: usize },
    Blocked { data: &'a [i8], height: usize, width: usize, lanes: usize, channels: usize },
}

impl<'a> ActivationView<'a> {
    /// View a (C, H, W) tensor.
    pub fn standard(t: &'a QTensor) -> Self {
        debug_assert_eq!(t.shape.len(), 3);
        Self::Standard { data: &t.data, channels: t.shape[0], height: t.shape[1], width: t.shape[2] }
    }

    /// View a (ceil(C/V), H, W, V) tensor holding `channels` real channels.
    pub fn blocked(t: &'a QTensor, channels: usize) -> Self {
        debug_assert_eq!(t.shape.len(), 4);
        Self::Blocked {
            data: &t.data,
            height: t.shape[1],
            width: t.shape[2],
            lanes: t.shape[3],
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        match *self {
            Self::Standard { channels, .. } | Self::Blocked { channels, .. } => channels,
        }
    }

    pub fn height(&self) -> usize {
        match *self {
            Self::Standard { height, .. } | Self::Blocked { height, .. } => height,
        }
    }

    pub fn width(&self) -> usize {
        match *self {
            Self::Standard { width, .. } | Self::Blocked { width, .. } => width,
        }
    }

    #[inline(always)]
    fn get(&self, c: usize, y: usize, x: usize) -> i8 {
        match *self {
            Self::Standard { data, height, width, .. } => data[(c * height + y) * width + x],
            Self::Blocked { data, height, width, lanes, .. } => {
                let block = c / lanes;
                let lane = c % lanes;
                data[((block * height + y) * width + x) * lanes + lane]
            }
        }
    }
}

pub struct ConvGeometry {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

/// Fixed-point convolution (cross-correlation, no kernel flip). Each output
/// element is one fault-injecting dot over its receptive field, gathered in
/// (in_channel, ky, kx) order with zeros at padded coordinates; bias enters
/// the accumulator before the requantizing shift and is never flipped.
/// Output positions are computed row-major with output channels innermost;
/// the fault stream is consumed in that order.
pub fn conv2d_q(
    input: ActivationView<'_>,
    weights: &QTensor,
    bias: &[i32],
    geom: &ConvGeometry,
    requant_shift: u32,
    out_format: QFormat,
    sampler: &FlipSampler,
    rng: &mut RngStream,
) -> QTensor {
    let in_c = input.channels();
    let k = geom.kernel;
    let patch_len = in_c * k * k;
    debug_assert_eq!(weights.data.len(), geom.out_channels * patch_len);
    debug_assert_eq!(bias.len(), geom.out_channels);

    let mut out = vec![0i8; geom.out_channels * geom.out_height * geom.out_width];
    let mut patch = vec![0i8; patch_len];
    let plane = geom.out_height * geom.out_width;

    for oy in 0..geom.out_height {
        for ox in 0..geom.out_width {
            gather_patch(&input, geom, oy, ox, &mut patch);
            for oc in 0..geom.out_channels {
                let w_row = &weights.data[oc * patch_len..(oc + 1) * patch_len];
                let acc = faulty_dot(w_row, &patch, sampler, rng).wrapping_add(bias[oc]);
                out[oc * plane + oy * geom.out_width + ox] = requantize(acc, requant_shift);
            }
        }
    }
    QTensor {
        shape: vec![geom.out_channels, geom.out_height, geom.out_width],
        data: out,
        format: out_format,
    }
}

#[inline]
fn gather_patch(
    input: &ActivationView<'_>,
    geom: &ConvGeometry,
    oy: usize,
    ox: usize,
    patch: &mut [i8],
) {
    let k = geom.kernel;
    let h = input.height() as isize;
    let w = input.width() as isize;
    let mut idx = 0;
    for c in 0..input.channels() {
        for ky in 0..k {
            let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
            for kx in 0..k {
                let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                patch[idx] = if iy >= 0 && iy < h && ix >= 0 && ix < w {
                    input.get(c, iy as usize, ix as usize)
                } else {
                    0
                };
                idx += 1;
            }
        }
    }
}

/// Same computation as [`conv2d_q`] but producing the vectorized layout
/// (ceil(OC/V), OH, OW, V); lanes beyond the real channel count stay zero.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_q_blocked(
    input: ActivationView<'_>,
    weights: &QTensor,
    bias: &[i32],
    geom: &ConvGeometry,
    requant_shift: u32,
    out_format: QFormat,
    lanes: usize,
    sampler: &FlipSampler,
    rng: &mut RngStream,
) -> QTensor {
    let in_c = input.channels();
    let k = geom.kernel;
    let patch_len = in_c * k * k;
    let blocks = geom.out_channels.div_ceil(lanes);

    let mut out = vec![0i8; blocks * geom.out_height * geom.out_width * lanes];
    let mut patch = vec![0i8; patch_len];

    for oy in 0..geom.out_height {
        for ox in 0..geom.out_width {
            gather_patch(&input, geom, oy, ox, &mut patch);
            for oc in 0..geom.out_channels {
                let w_row = &weights.data[oc * patch_len..(oc + 1) * patch_len];
                let acc = faulty_dot(w_row, &patch, sampler, rng).wrapping_add(bias[oc]);
                let (block, lane) = (oc / lanes, oc % lanes);
                let off = ((block * geom.out_height + oy) * geom.out_width + ox) * lanes + lane;
                out[off] = requantize(acc, requant_shift);
            }
        }
    }
    QTensor {
        shape: vec![blocks, geom.out_height, geom.out_width, lanes],
        data: out,
        format: out_format,
    }
}

/// Fully connected layer: one fault-injecting dot per output feature, in
/// ascending output order.
pub fn fully_connected_q(
    input: &[i8],
    weights: &QTensor,
    bias: &[i32],
    out_features: usize,
    requant_shift: u32,
    out_format: QFormat,
    sampler: &FlipSampler,
    rng: &mut RngStream,
) -> QTensor {
    let in_features = input.len();
    debug_assert_eq!(weights.data.len(), out_features * in_features);
    let mut out = vec![0i8; out_features];
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &weights.data[o * in_features..(o + 1) * in_features];
        let acc = faulty_dot(row, input, sampler, rng).wrapping_add(bias[o]);
        *slot = requantize(acc, requant_shift);
    }
    QTensor { shape: vec![out_features, 1, 1], data: out, format: out_format }
}

/// Max pooling on raw integers. No fault injection: the paper's model only
/// corrupts MAC results.
pub fn max_pool_q(input: &QTensor, window: usize, stride: usize) -> QTensor {
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = vec![0i8; c * oh * ow];
    for ch in 0..c {
        let plane = &input.data[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = i8::MIN;
                for ky in 0..window {
                    let row = (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        m = m.max(plane[row + kx]);
                    }
                }
                out[(ch * oh + oy) * ow + ox] = m;
            }
        }
    }
    QTensor { shape: vec![c, oh, ow], data: out, format: input.format }
}

/// ReLU on raw integers: negatives clamp to zero. Fault-free.
pub fn relu_q(input: &QTensor) -> QTensor {
    let data = input.data.iter().map(|&v| v.max(0)).collect();
    QTensor { shape: input.shape.clone(), data, format: input.format }
}
