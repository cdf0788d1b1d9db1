//! Checkpoint file format: magic "FLCK", a version word, the network
//! descriptor, per-layer fixed-point formats, full-precision weights as
//! little-endian f64, ordered key-value metadata, and a trailing CRC32 over
//! everything before it. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use super::DataError;
use crate::accelsim::{LayerDescriptor, NetworkDescriptor};
use crate::qformat::{FloatTensor, QFormat};
use crate::train::{Checkpoint, LayerTensors, MasterWeights};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FLCK";
pub const CHECKPOINT_VERSION: u16 = 1;

const KIND_CONV: u8 = 0;
const KIND_FC: u8 = 1;
const KIND_POOL: u8 = 2;
const KIND_RELU: u8 = 3;

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), DataError> {
    let mut buf = Vec::with_capacity(1024);
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());

    let net = &checkpoint.network;
    for d in net.input_shape {
        push_u32(&mut buf, d as u32);
    }
    push_format(&mut buf, net.input_format);
    push_u32(&mut buf, net.num_classes as u32);
    push_u32(&mut buf, net.layers.len() as u32);
    for layer in &net.layers {
        match *layer {
            LayerDescriptor::Conv2d {
                in_channels, out_channels, kernel, stride, padding, ..
            } => {
                buf.push(KIND_CONV);
                for v in [in_channels, out_channels, kernel, stride, padding] {
                    push_u32(&mut buf, v as u32);
                }
            }
            LayerDescriptor::FullyConnected { in_features, out_features, .. } => {
                buf.push(KIND_FC);
                push_u32(&mut buf, in_features as u32);
                push_u32(&mut buf, out_features as u32);
            }
            LayerDescriptor::MaxPool { window, stride } => {
                buf.push(KIND_POOL);
                push_u32(&mut buf, window as u32);
                push_u32(&mut buf, stride as u32);
            }
            LayerDescriptor::Relu => buf.push(KIND_RELU),
        }
    }

    for layer in &net.layers {
        let (Some(wf), Some(af)) = (layer.weight_format(), layer.activation_format()) else {
            continue;
        };
        push_format(&mut buf, wf);
        push_format(&mut buf, af);
        let shift = match *layer {
            LayerDescriptor::Conv2d { requant_shift, .. }
            | LayerDescriptor::FullyConnected { requant_shift, .. } => requant_shift,
            _ => unreachable!(),
        };
        push_u32(&mut buf, shift);
    }

    for lt in checkpoint.masters.layers.iter().flatten() {
        push_u32(&mut buf, lt.weights.data.len() as u32);
        for &v in &lt.weights.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        push_u32(&mut buf, lt.bias.data.len() as u32);
        for &v in &lt.bias.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    push_u32(&mut buf, checkpoint.metadata.len() as u32);
    for (k, v) in &checkpoint.metadata {
        push_u32(&mut buf, k.len() as u32);
        buf.extend_from_slice(k.as_bytes());
        push_u32(&mut buf, v.len() as u32);
        buf.extend_from_slice(v.as_bytes());
    }

    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, &buf).map_err(|e| DataError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.len() < 10 {
        return Err(DataError::Format("file too short for a checkpoint".into()));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(DataError::Format(format!(
            "bad magic {:02x?}, expected {CHECKPOINT_MAGIC:02x?}",
            &bytes[..4]
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(DataError::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(DataError::Checksum { stored, computed });
    }

    let mut cur = Cursor { bytes: &bytes[..body_len], pos: 6 };
    let input_shape = [cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize];
    let input_format = cur.format()?;
    let num_classes = cur.u32()? as usize;
    let layer_count = cur.u32()? as usize;

    let mut bare_layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let kind = cur.u8()?;
        bare_layers.push(match kind {
            KIND_CONV => {
                let v: Vec<usize> = (0..5).map(|_| cur.u32().map(|x| x as usize)).collect::<Result<_, _>>()?;
                (kind, v)
            }
            KIND_FC | KIND_POOL => {
                let a = cur.u32()? as usize;
                let b = cur.u32()? as usize;
                (kind, vec![a, b])
            }
            KIND_RELU => (kind, vec![]),
            other => return Err(DataError::Format(format!("unknown layer kind tag {other}"))),
        });
    }

    let mut layers = Vec::with_capacity(layer_count);
    for (kind, v) in bare_layers {
        let layer = match kind {
            KIND_CONV => {
                let wf = cur.format()?;
                let af = cur.format()?;
                let shift = cur.u32()?;
                LayerDescriptor::Conv2d {
                    in_channels: v[0],
                    out_channels: v[1],
                    kernel: v[2],
                    stride: v[3],
                    padding: v[4],
                    weight_format: wf,
                    activation_format: af,
                    requant_shift: shift,
                }
            }
            KIND_FC => {
                let wf = cur.format()?;
                let af = cur.format()?;
                let shift = cur.u32()?;
                LayerDescriptor::FullyConnected {
                    in_features: v[0],
                    out_features: v[1],
                    weight_format: wf,
                    activation_format: af,
                    requant_shift: shift,
                }
            }
            KIND_POOL => LayerDescriptor::MaxPool { window: v[0], stride: v[1] },
            _ => LayerDescriptor::Relu,
        };
        layers.push(layer);
    }

    let network = NetworkDescriptor { layers, input_shape, input_format, num_classes };

    let mut masters = Vec::with_capacity(layer_count);
    for layer in &network.layers {
        if let Some(shape) = layer.weight_shape() {
            let wlen = cur.u32()? as usize;
            let expected: usize = shape.iter().product();
            if wlen != expected {
                return Err(DataError::Format(format!(
                    "weight block holds {wlen} values, descriptor implies {expected}"
                )));
            }
            let weights = FloatTensor { shape, data: cur.f64s(wlen)? };
            let blen = cur.u32()? as usize;
            if blen != layer.bias_len().unwrap() {
                return Err(DataError::Format(format!(
                    "bias block holds {blen} values, descriptor implies {}",
                    layer.bias_len().unwrap()
                )));
            }
            let bias = FloatTensor { shape: vec![blen], data: cur.f64s(blen)? };
            masters.push(Some(LayerTensors { weights, bias }));
        } else {
            masters.push(None);
        }
    }

    let pair_count = cur.u32()? as usize;
    let mut metadata = Vec::with_capacity(pair_count);
    for _ in 0..pair_count {
        let k = cur.string()?;
        let v = cur.string()?;
        metadata.push((k, v));
    }
    if cur.pos != cur.bytes.len() {
        return Err(DataError::Format(format!(
            "{} trailing bytes after metadata",
            cur.bytes.len() - cur.pos
        )));
    }

    Ok(Checkpoint { network, masters: MasterWeights { layers: masters }, metadata })
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_format(buf: &mut Vec<u8>, f: QFormat) {
    buf.push(f.total_bits as u8);
    buf.push(f.frac_bits as u8);
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], DataError> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| DataError::Format(format!("truncated at offset {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn format(&mut self) -> Result<QFormat, DataError> {
        let total = self.u8()? as u32;
        let frac = self.u8()? as u32;
        Ok(QFormat::new(total, frac)?)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, DataError> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn string(&mut self) -> Result<String, DataError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| DataError::Format("metadata is not valid utf-8".into()))
    }
}
