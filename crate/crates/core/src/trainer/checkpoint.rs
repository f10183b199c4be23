//! Single-file checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! magic     8 bytes   "CSGANCKP"
//! version   u32
//! hlen      u64       length of the JSON header
//! header    hlen bytes
//! payload   raw tensor data; offsets in the header are relative to its start
//! ```
//!
//! Tensors are stored at their native precision, so a load reproduces every
//! value bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::TrainConfig;
use crate::error::{contract, Error, Result};
use crate::networks::{Module, ModelBundle, ModelConfig};

const MAGIC: &[u8; 8] = b"CSGANCKP";
pub const FORMAT_VERSION: u32 = 1;

/// Position in a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngSnapshot {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Complete training state after `epoch` epochs.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub epoch: usize,
    pub iteration: u64,
    pub config: TrainConfig,
    /// Architecture fingerprint, see [`ModelConfig::fingerprint`].
    pub fingerprint: String,
    pub parameters: Vec<(String, Tensor)>,
    pub optimizer_g: AdamState,
    pub optimizer_d: AdamState,
    pub pool_a: Vec<Tensor>,
    pub pool_b: Vec<Tensor>,
    pub rng: RngSnapshot,
}

impl Checkpoint {
    /// Fails unless the checkpoint was written for the `expected` architecture.
    pub fn ensure_model(&self, expected: &ModelConfig) -> Result<()> {
        let want = expected.fingerprint();
        if self.fingerprint != want {
            return Err(Error::Incompatible(format!(
                "checkpoint architecture fingerprint {} does not match configured {want}",
                self.fingerprint
            )));
        }
        Ok(())
    }

    /// Rebuilds the four networks with this checkpoint's parameters.
    pub fn bundle(&self) -> Result<ModelBundle> {
        let bundle = ModelBundle::new(&self.config.model)?;
        let stored: BTreeMap<&str, &Tensor> =
            self.parameters.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let params = bundle.parameters();
        if params.len() != stored.len() {
            return Err(Error::Incompatible(format!(
                "checkpoint holds {} parameters, architecture has {}",
                stored.len(),
                params.len()
            )));
        }
        for p in params {
            let t = stored
                .get(p.name.as_str())
                .ok_or_else(|| Error::Incompatible(format!("checkpoint lacks parameter `{}`", p.name)))?;
            if t.dims() != p.var.dims() {
                return Err(Error::Incompatible(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name,
                    t.dims(),
                    p.var.dims()
                )));
            }
            p.var.set(&t.to_dtype(p.var.dtype())?)?;
        }
        Ok(bundle)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    nbytes: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    epoch: usize,
    iteration: u64,
    config: TrainConfig,
    fingerprint: String,
    optimizer_g_steps: u64,
    optimizer_d_steps: u64,
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
    tensors: Vec<TensorEntry>,
}

fn dtype_name(dtype: DType) -> Result<&'static str> {
    match dtype {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(contract!("checkpoints store f32/f64 tensors, got {other:?}")),
    }
}

fn encode(t: &Tensor, out: &mut Vec<u8>) -> Result<()> {
    let flat = t.flatten_all()?;
    match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F64 => flat.to_vec1::<f64>()?.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        other => return Err(contract!("cannot store {other:?} tensor")),
    }
    Ok(())
}

fn decode(entry: &TensorEntry, bytes: &[u8]) -> Result<Tensor> {
    let data = bytes
        .get(entry.offset..entry.offset + entry.nbytes)
        .ok_or_else(|| Error::Incompatible(format!("tensor `{}` lies outside the payload", entry.name)))?;
    let count: usize = entry.shape.iter().product();
    let t = match entry.dtype.as_str() {
        "f32" if data.len() == count * 4 => {
            let v: Vec<f32> = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::from_vec(v, entry.shape.as_slice(), &Device::Cpu)?
        }
        "f64" if data.len() == count * 8 => {
            let v: Vec<f64> = data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::from_vec(v, entry.shape.as_slice(), &Device::Cpu)?
        }
        other => {
            return Err(Error::Incompatible(format!(
                "tensor `{}`: bad dtype `{other}` or size",
                entry.name
            )))
        }
    };
    Ok(t)
}

/// Writes atomically: data goes to a sibling temp file that is renamed into place,
/// so a failed write never replaces an existing checkpoint.
pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    let mut named: Vec<(String, &Tensor)> = Vec::new();
    for (n, t) in &c.parameters {
        named.push((format!("param/{n}"), t));
    }
    for (prefix, state) in [("opt_g", &c.optimizer_g), ("opt_d", &c.optimizer_d)] {
        for (n, m, v) in &state.moments {
            named.push((format!("{prefix}/m/{n}"), m));
            named.push((format!("{prefix}/v/{n}"), v));
        }
    }
    for (prefix, pool) in [("pool_a", &c.pool_a), ("pool_b", &c.pool_b)] {
        for (i, t) in pool.iter().enumerate() {
            named.push((format!("{prefix}/{i}"), t));
        }
    }

    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(named.len());
    for (name, t) in named {
        let offset = payload.len();
        encode(t, &mut payload)?;
        entries.push(TensorEntry {
            name,
            dtype: dtype_name(t.dtype())?.to_string(),
            shape: t.dims().to_vec(),
            offset,
            nbytes: payload.len() - offset,
        });
    }
    let header = Header {
        epoch: c.epoch,
        iteration: c.iteration,
        config: c.config.clone(),
        fingerprint: c.fingerprint.clone(),
        optimizer_g_steps: c.optimizer_g.steps,
        optimizer_d_steps: c.optimizer_d.steps,
        rng_seed: hex::encode(c.rng.seed),
        rng_stream: c.rng.stream,
        rng_word_pos: c.rng.word_pos.to_string(),
        tensors: entries,
    };
    let header = serde_json::to_vec(&header).map_err(|e| contract!("header serialization: {e}"))?;

    let tmp = path.with_extension("ckpt.tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(MAGIC)?;
        f.write_all(&FORMAT_VERSION.to_le_bytes())?;
        f.write_all(&(header.len() as u64).to_le_bytes())?;
        f.write_all(&header)?;
        f.write_all(&payload)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Incompatible(format!("{} is not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint format version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_bytes = bytes
        .get(20..20 + hlen)
        .ok_or_else(|| Error::Incompatible("truncated checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Incompatible(format!("unreadable checkpoint header: {e}")))?;
    let recomputed = header.config.model.fingerprint();
    if recomputed != header.fingerprint {
        return Err(Error::Incompatible(format!(
            "stored fingerprint {} does not match its own configuration ({recomputed})",
            header.fingerprint
        )));
    }
    let payload = &bytes[20 + hlen..];

    let mut parameters = Vec::new();
    let mut moments: BTreeMap<(&str, &str), (Option<Tensor>, Option<Tensor>)> = BTreeMap::new();
    let mut moment_order: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    let mut pools: [Vec<(usize, Tensor)>; 2] = [Vec::new(), Vec::new()];
    for entry in &header.tensors {
        let t = decode(entry, payload)?;
        let parts: Vec<&str> = entry.name.splitn(3, '/').collect();
        match parts.as_slice() {
            ["param", name] => parameters.push((name.to_string(), t)),
            [opt @ ("opt_g" | "opt_d"), kind @ ("m" | "v"), name] => {
                let idx = usize::from(*opt == "opt_d");
                let slot = moments.entry((opt, name)).or_insert_with(|| {
                    moment_order[idx].push(name.to_string());
                    (None, None)
                });
                if *kind == "m" {
                    slot.0 = Some(t);
                } else {
                    slot.1 = Some(t);
                }
            }
            [pool @ ("pool_a" | "pool_b"), index] => {
                let i: usize = index
                    .parse()
                    .map_err(|_| Error::Incompatible(format!("bad pool entry `{}`", entry.name)))?;
                pools[usize::from(*pool == "pool_b")].push((i, t));
            }
            _ => return Err(Error::Incompatible(format!("unknown tensor `{}`", entry.name))),
        }
    }

    let mut states = Vec::with_capacity(2);
    for (idx, (opt, steps)) in [("opt_g", header.optimizer_g_steps), ("opt_d", header.optimizer_d_steps)]
        .into_iter()
        .enumerate()
    {
        let mut list = Vec::new();
        for name in &moment_order[idx] {
            match moments.remove(&(opt, name.as_str())) {
                Some((Some(m), Some(v))) => list.push((name.clone(), m, v)),
                _ => return Err(Error::Incompatible(format!("incomplete optimizer moments for `{name}`"))),
            }
        }
        states.push(AdamState { steps, moments: list });
    }
    let optimizer_d = states.pop().unwrap();
    let optimizer_g = states.pop().unwrap();
    let [mut pool_a, mut pool_b] = pools;
    pool_a.sort_by_key(|(i, _)| *i);
    pool_b.sort_by_key(|(i, _)| *i);

    let seed_bytes = hex::decode(&header.rng_seed)
        .ok()
        .and_then(|b| <[u8; 32]>::try_from(b).ok())
        .ok_or_else(|| Error::Incompatible("bad random-state seed".into()))?;
    let word_pos: u128 = header
        .rng_word_pos
        .parse()
        .map_err(|_| Error::Incompatible("bad random-state position".into()))?;

    Ok(Checkpoint {
        epoch: header.epoch,
        iteration: header.iteration,
        config: header.config,
        fingerprint: header.fingerprint,
        parameters,
        optimizer_g,
        optimizer_d,
        pool_a: pool_a.into_iter().map(|(_, t)| t).collect(),
        pool_b: pool_b.into_iter().map(|(_, t)| t).collect(),
        rng: RngSnapshot {
            seed: seed_bytes,
            stream: header.rng_stream,
            word_pos,
        },
    })
}
