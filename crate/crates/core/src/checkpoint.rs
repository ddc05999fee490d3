//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PFCK" | u32 version | u32 crc32(echo) | u64 len, echo bytes
//! | rng: 32-byte seed, u64 stream, u128 word position
//! | u64 phases_done | u64 epochs_done | u64 tensor count
//! | per tensor: u64 name len, name, u64 rank, rank × u64 dims, f64 values
//! | u32 crc32 of everything before it
//! ```
//!
//! Every parameter `p` is stored with its Adam state as `p#m`, `p#v` (same
//! shape) and `p#t` (rank 0, the step count).

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network};
use crate::nn::{Param, ParameterStore};
use crate::train::TrainState;

pub const MAGIC: &[u8; 4] = b"PFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
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

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ParameterStore<f64>,
    pub rng: RngState,
    pub phases_done: usize,
    pub epochs_done: usize,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Self {
        Self {
            model: state.net.config().clone(),
            params: state.net.params.clone(),
            rng: RngState::capture(&state.rng),
            phases_done: state.phases_done,
            epochs_done: state.epochs_done,
        }
    }

    pub fn into_state(self) -> Result<TrainState> {
        let net = Network::from_parts(self.model, self.params)?;
        Ok(TrainState {
            net,
            rng: self.rng.restore(),
            phases_done: self.phases_done,
            epochs_done: self.epochs_done,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let echo = self.model.to_echo();
        out.extend_from_slice(&crc32fast::hash(echo.as_bytes()).to_le_bytes());
        put_u64(&mut out, echo.len() as u64);
        out.extend_from_slice(echo.as_bytes());
        out.extend_from_slice(&self.rng.seed);
        put_u64(&mut out, self.rng.stream);
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        put_u64(&mut out, self.phases_done as u64);
        put_u64(&mut out, self.epochs_done as u64);
        put_u64(&mut out, 4 * self.params.len() as u64);
        for (name, p) in self.params.iter() {
            put_tensor(&mut out, name, &p.shape, &p.values);
            put_tensor(&mut out, &format!("{name}#m"), &p.shape, &p.m);
            put_tensor(&mut out, &format!("{name}#v"), &p.shape, &p.v);
            put_tensor(&mut out, &format!("{name}#t"), &[], &[p.step as f64]);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt("CRC mismatch"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let digest = r.u32()?;
        let echo_len = r.len()?;
        let echo = std::str::from_utf8(r.take(echo_len)?).map_err(|_| corrupt("config echo is not UTF-8"))?;
        if crc32fast::hash(echo.as_bytes()) != digest {
            return Err(corrupt("config digest mismatch"));
        }
        let model = ModelConfig::from_echo(echo)?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let phases_done = r.len()?;
        let epochs_done = r.len()?;
        let count = r.len()?;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            tensors.push(r.tensor()?);
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after tensors"));
        }
        let params = assemble(tensors)?;
        let net = Network::from_parts(model.clone(), params).map_err(|e| corrupt(&e.to_string()))?;
        Ok(Self {
            model,
            params: net.params,
            rng: RngState { seed, stream, word_pos },
            phases_done,
            epochs_done,
        })
    }
}

/// Writes through a temporary file and renames it into place.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&ckpt.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn corrupt(msg: &str) -> Error {
    Error::CorruptCheckpoint(msg.to_string())
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    put_u64(out, name.len() as u64);
    out.extend_from_slice(name.as_bytes());
    put_u64(out, shape.len() as u64);
    for &d in shape {
        put_u64(out, d as u64);
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflows usize"))
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let n = self.len()?;
        let name = std::str::from_utf8(self.take(n)?).map_err(|_| corrupt("tensor name is not UTF-8"))?.to_string();
        let rank = self.len()?;
        if rank > 8 {
            return Err(corrupt(&format!("tensor {name} has rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.len()).collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= self.buf.len()))
            .ok_or_else(|| corrupt(&format!("tensor {name} has implausible shape {shape:?}")))?;
        let raw = self.take(count * 8)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok((name, shape, values))
    }
}

fn assemble(tensors: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<ParameterStore<f64>> {
    use std::collections::BTreeMap;
    let mut base: BTreeMap<String, Param<f64>> = BTreeMap::new();
    let mut extra: Vec<(String, String, Vec<usize>, Vec<f64>)> = Vec::new();
    for (name, shape, values) in tensors {
        match name.split_once('#') {
            None => {
                let p = Param::new(shape, values).map_err(|e| corrupt(&e.to_string()))?;
                if base.insert(name.clone(), p).is_some() {
                    return Err(corrupt(&format!("duplicate tensor {name}")));
                }
            }
            Some((owner, tag)) => extra.push((owner.to_string(), tag.to_string(), shape, values)),
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for (owner, tag, shape, values) in extra {
        let p = base
            .get_mut(&owner)
            .ok_or_else(|| corrupt(&format!("optimizer state for unknown tensor {owner}")))?;
        if !seen.insert((owner.clone(), tag.clone())) {
            return Err(corrupt(&format!("duplicate tensor {owner}#{tag}")));
        }
        match tag.as_str() {
            "m" | "v" if shape == p.shape => {
                if tag == "m" {
                    p.m = values;
                } else {
                    p.v = values;
                }
            }
            "t" if shape.is_empty() && values[0] >= 0.0 && values[0].fract() == 0.0 => p.step = values[0] as u64,
            _ => return Err(corrupt(&format!("bad optimizer tensor {owner}#{tag} with shape {shape:?}"))),
        }
    }
    for name in base.keys() {
        for tag in ["m", "v", "t"] {
            if !seen.contains(&(name.clone(), tag.to_string())) {
                return Err(corrupt(&format!("missing optimizer tensor {name}#{tag}")));
            }
        }
    }
    let mut store = ParameterStore::new();
    for (name, p) in base {
        store.insert_param(name, p);
    }
    Ok(store)
}
