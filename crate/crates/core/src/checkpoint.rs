//! Versioned per-slice binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "DTMC"  u32 version  u64 master_seed  u64 iteration
//! u32 slice_index  u32 T  u32 K  u32 V  u32 D_t
//! f64[K] alpha  f64[K*V] phi  f64[D_t*K] eta
//! u32[D_t] doc_lengths  u32[Σ lengths] z
//! u32 crc32(all preceding bytes)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::Corpus;
use crate::model::{accumulate_counts, Hyperparams, ModelState, SliceState};

const MAGIC: &[u8; 4] = b"DTMC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint does not match the corpus/model: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceCheckpoint {
    pub master_seed: u64,
    pub iteration: u64,
    pub num_slices: usize,
    pub slice: SliceState,
}

pub fn encode_slice(slice: &SliceState, num_slices: usize, master_seed: u64, iteration: u64) -> Vec<u8> {
    let n_tokens: usize = slice.z.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(
        48 + 8 * (slice.alpha.len() + slice.phi.len() + slice.eta.len()) + 4 * (slice.z.len() + n_tokens),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&master_seed.to_le_bytes());
    out.extend_from_slice(&iteration.to_le_bytes());
    for dim in [slice.index, num_slices, slice.num_topics, slice.vocab_size, slice.num_docs()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in slice.alpha.iter().chain(&slice.phi).chain(&slice.eta) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for z in &slice.z {
        out.extend_from_slice(&(z.len() as u32).to_le_bytes());
    }
    for &k in slice.z.iter().flatten() {
        out.extend_from_slice(&k.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>, CheckpointError> {
        let bytes = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_slice(bytes: &[u8]) -> Result<SliceCheckpoint, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated);
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(CheckpointError::Checksum);
    }
    let master_seed = r.u64()?;
    let iteration = r.u64()?;
    let index = r.u32()? as usize;
    let num_slices = r.u32()? as usize;
    let k = r.u32()? as usize;
    let v = r.u32()? as usize;
    let d = r.u32()? as usize;
    let alpha = r.f64s(k)?;
    let phi = r.f64s(k * v)?;
    let eta = r.f64s(d * k)?;
    let lens = r.u32s(d)?;
    let mut z = Vec::with_capacity(d);
    for len in lens {
        z.push(r.u32s(len as usize)?);
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Mismatch("trailing bytes".into()));
    }
    let mut slice = SliceState {
        index,
        num_topics: k,
        vocab_size: v,
        alpha,
        phi,
        eta,
        z,
        eta_lognorm: vec![0.0; d],
        phi_lognorm: vec![0.0; k],
    };
    slice.refresh_normalizers();
    Ok(SliceCheckpoint {
        master_seed,
        iteration,
        num_slices,
        slice,
    })
}

pub fn slice_file(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("slice_{t:03}.ckpt"))
}

pub fn iteration_dir(root: &Path, iteration: u64) -> PathBuf {
    root.join(format!("iter_{iteration:06}"))
}

pub fn write_slice(dir: &Path, ckpt: &SliceCheckpoint) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = slice_file(dir, ckpt.slice.index);
    let bytes = encode_slice(&ckpt.slice, ckpt.num_slices, ckpt.master_seed, ckpt.iteration);
    fs::write(&path, bytes).map_err(|source| CheckpointError::Io { path, source })
}

/// Writes one file per slice into `dir`.
pub fn save_model(dir: &Path, state: &ModelState) -> Result<(), CheckpointError> {
    for s in &state.slices {
        write_slice(
            dir,
            &SliceCheckpoint {
                master_seed: state.seed,
                iteration: state.iteration,
                num_slices: state.num_slices(),
                slice: s.clone(),
            },
        )?;
    }
    Ok(())
}

pub fn read_slice(path: &Path) -> Result<SliceCheckpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_slice(&bytes)
}

/// Loads every slice in `dir` and checks it against the corpus. Counts are
/// rebuilt over all documents.
pub fn load_model(dir: &Path, corpus: &Corpus, hyper: &Hyperparams) -> Result<ModelState, CheckpointError> {
    let t_total = corpus.num_slices();
    let mut slices = Vec::with_capacity(t_total);
    let mut counts = Vec::with_capacity(t_total);
    let mut header: Option<(u64, u64)> = None;
    for ts in &corpus.slices {
        let ck = read_slice(&slice_file(dir, ts.index))?;
        let s = &ck.slice;
        let mismatch = |what: String| Err(CheckpointError::Mismatch(what));
        if ck.num_slices != t_total {
            return mismatch(format!("T = {} but corpus has {t_total} slices", ck.num_slices));
        }
        if s.index != ts.index {
            return mismatch(format!("slice index {} in file for slice {}", s.index, ts.index));
        }
        if s.num_topics != hyper.num_topics {
            return mismatch(format!("K = {} but model expects {}", s.num_topics, hyper.num_topics));
        }
        if s.vocab_size != corpus.vocab_size() {
            return mismatch(format!("V = {} but corpus has {}", s.vocab_size, corpus.vocab_size()));
        }
        if s.num_docs() != ts.docs.len()
            || s.z.iter().zip(&ts.docs).any(|(z, d)| z.len() != d.tokens.len())
        {
            return mismatch(format!("document layout of slice {} differs from corpus", ts.index));
        }
        match header {
            None => header = Some((ck.master_seed, ck.iteration)),
            Some(h) if h != (ck.master_seed, ck.iteration) => {
                return mismatch("slices come from different runs or iterations".into())
            }
            _ => {}
        }
        let all: Vec<usize> = (0..ts.docs.len()).collect();
        counts.push(accumulate_counts(s, &ts.docs, &all));
        slices.push(ck.slice);
    }
    let (seed, iteration) = header.unwrap_or_default();
    Ok(ModelState {
        hyper: *hyper,
        vocab_size: corpus.vocab_size(),
        seed,
        iteration,
        slices,
        counts,
    })
}
