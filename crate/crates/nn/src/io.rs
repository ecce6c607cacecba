//! EGFW weight files and JSON spec sidecars.
//!
//! Layout: magic `EGFW`, format version (u32), tensor count (u32), then per
//! tensor in layer order: rank (u32), dims (u32 each), little-endian f32 data.
//! Grouping into layers is recovered from the spec.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{NnError, Result};
use crate::network::NetworkState;
use crate::spec::NetworkSpec;
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"EGFW";
pub const FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NnError + '_ {
    move |source| NnError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn encode_weights<T: Real>(state: &NetworkState<T>) -> Vec<u8> {
    let tensors: Vec<&Tensor<T>> = state.weights.iter().flatten().collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    buf
}

pub fn save_weights<T: Real>(path: &Path, state: &NetworkState<T>) -> Result<()> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&encode_weights(state)).map_err(io_err(path))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let slice = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(slice)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn decode_weights<T: Real>(
    bytes: &[u8],
    spec: &NetworkSpec,
    path: &Path,
) -> Result<NetworkState<T>> {
    let bad = |message: &str| NnError::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(bad("missing EGFW magic"));
    }
    let version = r.u32().ok_or_else(|| bad("truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = r.u32().ok_or_else(|| bad("truncated tensor header"))? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated dims"))?;
        let len: usize = dims.iter().product();
        let raw = r.take(len * 4).ok_or_else(|| bad("truncated tensor data"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        tensors.push(Tensor::new(dims, data)?);
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let mut it = tensors.into_iter();
    let mut weights = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        let n = layer.param_shapes().len();
        let group: Vec<Tensor<T>> = it.by_ref().take(n).collect();
        if group.len() != n {
            return Err(bad("fewer tensors than the spec requires"));
        }
        weights.push(group);
    }
    if it.next().is_some() {
        return Err(bad("more tensors than the spec requires"));
    }
    NetworkState::from_weights(spec, weights)
}

pub fn load_weights<T: Real>(path: &Path, spec: &NetworkSpec) -> Result<NetworkState<T>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_weights(&bytes, spec, path)
}

pub fn save_spec(path: &Path, spec: &NetworkSpec) -> Result<()> {
    fs::write(path, spec.to_json()?).map_err(io_err(path))
}

pub fn load_spec(path: &Path) -> Result<NetworkSpec> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    NetworkSpec::from_json(&text)
}
