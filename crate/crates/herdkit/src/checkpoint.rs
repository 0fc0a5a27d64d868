//! Checkpoint files: a JSON manifest followed by raw little-endian payloads.
//!
//! ```text
//! offset 0            magic  b"HERDCKPT"
//! offset 8            u32 LE format version (1)
//! offset 12           u64 LE manifest length L
//! offset 20           L bytes of UTF-8 JSON manifest
//! offset 20 + L       payload; tensor offsets are relative to this point
//! ```
//!
//! Per convolution `convK.weight` (out, in, kh, kw) and `convK.bias`; per
//! batch norm `bnK.weight`, `bnK.bias`, `bnK.running_mean`, `bnK.running_var`
//! as `f32`, and `bnK.num_batches_tracked` as a scalar `u64`. Tensors are
//! stored in that order, back to back.

use std::fs;
use std::path::Path;

use herdkit_core::config::ArchId;
use herdkit_core::model::Model;
use herdkit_core::nn::Layer;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HerdError, Result};

pub const MAGIC: &[u8; 8] = b"HERDCKPT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_BYTES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub arch: ArchId,
    pub init_seed: u64,
    pub payload_bytes: usize,
    pub tensors: Vec<TensorEntry>,
}

enum Payload<'a> {
    F32(&'a [f32]),
    U64(u64),
}

fn tensors(model: &Model<f32>) -> Vec<(String, Vec<usize>, Payload<'_>)> {
    let (mut conv, mut bn) = (0, 0);
    let mut out = Vec::new();
    for l in model.layers() {
        match l {
            Layer::Conv(c) => {
                conv += 1;
                let shape = vec![c.out_channels, c.in_channels, c.kernel, c.kernel];
                out.push((format!("conv{conv}.weight"), shape, Payload::F32(&c.weight)));
                out.push((format!("conv{conv}.bias"), vec![c.out_channels], Payload::F32(&c.bias)));
            }
            Layer::BatchNorm(b) => {
                bn += 1;
                let ch = vec![b.channels];
                out.push((format!("bn{bn}.weight"), ch.clone(), Payload::F32(&b.gamma)));
                out.push((format!("bn{bn}.bias"), ch.clone(), Payload::F32(&b.beta)));
                out.push((format!("bn{bn}.running_mean"), ch.clone(), Payload::F32(&b.running_mean)));
                out.push((format!("bn{bn}.running_var"), ch, Payload::F32(&b.running_var)));
                out.push((format!("bn{bn}.num_batches_tracked"), vec![], Payload::U64(b.num_batches_tracked)));
            }
            Layer::LeakyRelu { .. } | Layer::MaxPool { .. } => {}
        }
    }
    out
}

pub fn encode_checkpoint(model: &Model<f32>) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut entries = Vec::new();
    for (name, shape, data) in tensors(model) {
        let offset = payload.len();
        let dtype = match data {
            Payload::F32(v) => {
                v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes()));
                "f32"
            }
            Payload::U64(n) => {
                payload.extend_from_slice(&n.to_le_bytes());
                "u64"
            }
        };
        entries.push(TensorEntry { name, dtype: dtype.into(), shape, offset, bytes: payload.len() - offset });
    }
    let manifest = Manifest {
        arch: model.arch(),
        init_seed: model.init_seed(),
        payload_bytes: payload.len(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(HEADER_BYTES + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

/// Parses the header and manifest and checks that the payload length matches.
pub fn decode_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8]), String> {
    if bytes.len() < HEADER_BYTES || &bytes[..8] != MAGIC {
        return Err("not a checkpoint (bad magic or short header)".into());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let json = bytes
        .get(HEADER_BYTES..HEADER_BYTES.saturating_add(len))
        .ok_or("truncated manifest")?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| format!("manifest: {e}"))?;
    let payload = &bytes[HEADER_BYTES + len..];
    if payload.len() != manifest.payload_bytes {
        return Err(format!(
            "payload is {} bytes, manifest declares {}",
            payload.len(),
            manifest.payload_bytes
        ));
    }
    Ok((manifest, payload))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model<f32>, String> {
    let (manifest, payload) = decode_manifest(bytes)?;
    let mut model = Model::<f32>::init(manifest.arch, manifest.init_seed);
    let expected: Vec<(String, Vec<usize>, &'static str)> = tensors(&model)
        .into_iter()
        .map(|(n, s, p)| (n, s, if matches!(p, Payload::F32(_)) { "f32" } else { "u64" }))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(format!("{} tensors, expected {}", manifest.tensors.len(), expected.len()));
    }
    let mut chunks = Vec::with_capacity(expected.len());
    for ((name, shape, dtype), e) in expected.iter().zip(&manifest.tensors) {
        let width = if *dtype == "f32" { 4 } else { 8 };
        let count: usize = shape.iter().product();
        if &e.name != name || &e.shape != shape || e.dtype != *dtype || e.bytes != count * width {
            return Err(format!("tensor `{}` does not match expected `{name}` {shape:?} {dtype}", e.name));
        }
        let chunk = e
            .offset
            .checked_add(e.bytes)
            .and_then(|end| payload.get(e.offset..end))
            .ok_or_else(|| format!("tensor `{name}` lies outside the payload"))?;
        chunks.push(chunk);
    }
    let f32s = |c: &[u8]| -> Vec<f32> { c.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect() };
    let mut it = chunks.into_iter();
    for l in model.layers_mut() {
        match l {
            Layer::Conv(c) => {
                c.weight = f32s(it.next().unwrap());
                c.bias = f32s(it.next().unwrap());
            }
            Layer::BatchNorm(b) => {
                b.gamma = f32s(it.next().unwrap());
                b.beta = f32s(it.next().unwrap());
                b.running_mean = f32s(it.next().unwrap());
                b.running_var = f32s(it.next().unwrap());
                b.num_batches_tracked = u64::from_le_bytes(it.next().unwrap().try_into().unwrap());
            }
            Layer::LeakyRelu { .. } | Layer::MaxPool { .. } => {}
        }
    }
    Ok(model)
}

/// Writes through a temporary sibling and a rename, so a reader never sees a
/// partial file.
pub fn save_checkpoint(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("ckpt.partial");
    fs::write(&tmp, encode_checkpoint(model)).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes).map_err(|reason| HerdError::Checkpoint { path: path.into(), reason })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_size_matches_parameter_arithmetic() {
        let m = Model::<f32>::init(ArchId::SimpleCnn, 3);
        let (manifest, _) = decode_manifest(&encode_checkpoint(&m)).map(|(m, p)| (m, p.len())).unwrap();
        // Learnable f32s, two running-stat vectors per BN channel, four u64 counters.
        assert_eq!(manifest.payload_bytes, 962_304 * 4 + 2 * 704 * 4 + 4 * 8);
    }

    #[test]
    fn round_trip_is_exact() {
        let mut m = Model::<f32>::init(ArchId::SimpleCnn, 5);
        for b in m.batch_norms_mut() {
            b.running_mean.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 0.25);
            b.num_batches_tracked = 7;
        }
        let back = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncation_and_corruption_rejected() {
        let bytes = encode_checkpoint(&Model::<f32>::init(ArchId::SimpleCnn, 1));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode_checkpoint(&longer).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        assert!(decode_checkpoint(&bytes[..10]).is_err());
    }
}
