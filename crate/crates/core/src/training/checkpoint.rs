//! Single-file checkpoint container.
//!
//! Layout: 8-byte magic, `u32` LE header length, JSON header, the payload of
//! every named block as little-endian `f64`, and a SHA-256 of all preceding
//! bytes. The header lists block names and shapes in payload order and the
//! payload's own digest.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{adam_config, Checkpoint, Nets, Optimizers};
use crate::autograd::Tensor;
use crate::config::{hex, RunConfig};
use crate::networks::FaceRecognizer;
use crate::nn::ParamStore;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADVMKUP\x01";
pub const CHECKPOINT_FORMAT: &str = "advmakeup-checkpoint/1";
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngState {
    seed: String,
    stream: u64,
    /// Decimal, since JSON numbers cannot hold a `u128`.
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrEntry {
    model_id: String,
    seed: u64,
    role: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Block {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    step: u64,
    config_hash: String,
    config: RunConfig,
    rng: RngState,
    pair_word_pos: String,
    optimizer_steps: BTreeMap<String, u64>,
    fr_models: Vec<FrEntry>,
    blocks: Vec<Block>,
    payload_sha256: String,
}

fn blocks_of(ck: &Checkpoint) -> Vec<(String, &Tensor)> {
    fn push<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, store: &'a ParamStore) {
        for (name, t) in store.iter() {
            out.push((format!("{prefix}/{name}"), t));
        }
    }
    let mut out = Vec::new();
    for (name, store) in ck.nets.stores() {
        push(&mut out, name, store);
    }
    for ((name, store), adam) in ck.nets.stores().into_iter().zip(ck.optim.all()) {
        for (moment, tensors) in [("m", &adam.first_moment), ("v", &adam.second_moment)] {
            for (pname, t) in store.names().iter().zip(tensors) {
                out.push((format!("adam.{name}.{moment}/{pname}"), t));
            }
        }
    }
    for m in ck.ensemble.iter().chain([&ck.holdout]) {
        push(&mut out, &format!("fr/{}", m.model_id), &m.params);
    }
    out.push(("target/pixels".into(), &ck.target));
    out
}

/// The checkpoint serialised to bytes.
pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let blocks = blocks_of(ck);
    let mut payload = Vec::with_capacity(blocks.iter().map(|b| 8 * b.1.len()).sum());
    for (_, t) in &blocks {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut fr_models: Vec<FrEntry> = ck
        .ensemble
        .iter()
        .map(|m| FrEntry {
            model_id: m.model_id.clone(),
            seed: m.seed,
            role: "ensemble".into(),
        })
        .collect();
    fr_models.push(FrEntry {
        model_id: ck.holdout.model_id.clone(),
        seed: ck.holdout.seed,
        role: "holdout".into(),
    });
    let names = ["g", "dx", "dy", "h"];
    let header = Header {
        format: CHECKPOINT_FORMAT.into(),
        step: ck.step,
        config_hash: ck.config.hash(),
        config: ck.config.clone(),
        rng: RngState {
            seed: hex(&ck.rng.get_seed()),
            stream: ck.rng.get_stream(),
            word_pos: ck.rng.get_word_pos().to_string(),
        },
        pair_word_pos: ck.pair_word_pos.to_string(),
        optimizer_steps: names
            .iter()
            .zip(ck.optim.all())
            .map(|(n, a)| (n.to_string(), a.step))
            .collect(),
        fr_models,
        blocks: blocks
            .iter()
            .map(|(name, t)| Block {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header.len() + payload.len() + DIGEST_LEN);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Writes atomically: a temporary sibling is renamed over `path`.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ck)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let written = std::fs::write(&tmp, &bytes).and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = written {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    decode(&bytes).map_err(|reason| Error::Integrity {
        path: path.to_path_buf(),
        reason,
    })
}

fn unhex32(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

/// Reads blocks in order, checking each name and shape.
struct Cursor<'a> {
    blocks: std::slice::Iter<'a, Block>,
    payload: &'a [u8],
}

impl Cursor<'_> {
    fn next(&mut self, name: &str, shape: &[usize]) -> std::result::Result<Tensor, String> {
        let b = self
            .blocks
            .next()
            .ok_or_else(|| format!("missing block {name}"))?;
        if b.name != name || b.shape != shape {
            return Err(format!(
                "block layout mismatch: expected {name} {shape:?}, found {} {:?}",
                b.name, b.shape
            ));
        }
        let n: usize = shape.iter().product();
        let (head, rest) = self.payload.split_at(8 * n);
        self.payload = rest;
        let data = head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Tensor::new(shape.to_vec(), data))
    }

    fn fill(&mut self, prefix: &str, store: &mut ParamStore) -> std::result::Result<(), String> {
        let names = store.names().to_vec();
        for (name, t) in names.iter().zip(store.tensors_mut()) {
            *t = self.next(&format!("{prefix}/{name}"), t.shape())?;
        }
        Ok(())
    }
}

fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + DIGEST_LEN {
        return Err(format!(
            "file is {} bytes, too short for a checkpoint",
            bytes.len()
        ));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err("not a checkpoint file (bad magic)".into());
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err("checksum mismatch: file is truncated or corrupted".into());
    }
    let header_len = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or("header length exceeds file size")?;
    let header: Header =
        serde_json::from_slice(&body[12..header_end]).map_err(|e| format!("bad header: {e}"))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(format!("unsupported format {}", header.format));
    }
    let payload = &body[header_end..];
    let expected: usize = header
        .blocks
        .iter()
        .map(|b| 8 * b.shape.iter().product::<usize>())
        .sum();
    if payload.len() != expected {
        return Err(format!(
            "payload is {} bytes, header describes {expected}",
            payload.len()
        ));
    }
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err("payload checksum mismatch".into());
    }
    let config = header.config;
    if config.hash() != header.config_hash {
        return Err("config hash does not match the embedded config".into());
    }
    config.validate().map_err(|e| e.to_string())?;

    let mut cur = Cursor {
        blocks: header.blocks.iter(),
        payload,
    };
    let mut nets = Nets::new(&config.networks, config.training.seed);
    let names = ["g", "dx", "dy", "h"];
    for (name, store) in names.iter().zip(nets.stores_mut()) {
        cur.fill(name, store)?;
    }
    let mut optim = Optimizers::new(&config.training, &nets);
    for ((name, adam), (_, store)) in names.iter().zip(optim.all_mut()).zip(nets.stores()) {
        adam.config = adam_config(&config.training);
        adam.step = *header
            .optimizer_steps
            .get(*name)
            .ok_or_else(|| format!("missing optimizer step for {name}"))?;
        for (moment, tensors) in [
            ("m", &mut adam.first_moment),
            ("v", &mut adam.second_moment),
        ] {
            for (pname, t) in store.names().iter().zip(tensors.iter_mut()) {
                *t = cur.next(&format!("adam.{name}.{moment}/{pname}"), t.shape())?;
            }
        }
    }
    let mut ensemble = Vec::new();
    let mut holdout = None;
    for entry in &header.fr_models {
        let mut m = FaceRecognizer::new(entry.model_id.clone(), entry.seed);
        cur.fill(&format!("fr/{}", entry.model_id), &mut m.params)?;
        match entry.role.as_str() {
            "ensemble" => ensemble.push(m),
            "holdout" if holdout.is_none() => holdout = Some(m),
            other => return Err(format!("unexpected model role {other}")),
        }
    }
    let holdout = holdout.ok_or("no holdout model")?;
    let r = config.data.resolution;
    let target = cur.next("target/pixels", &[1, 3, r, r])?;
    if cur.blocks.next().is_some() {
        return Err("unexpected trailing blocks".into());
    }

    let mut rng = ChaCha8Rng::from_seed(unhex32(&header.rng.seed).ok_or("bad rng seed")?);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(
        header
            .rng
            .word_pos
            .parse()
            .map_err(|_| "bad rng position")?,
    );
    Ok(Checkpoint {
        step: header.step,
        rng,
        pair_word_pos: header
            .pair_word_pos
            .parse()
            .map_err(|_| "bad sampler position")?,
        nets,
        optim,
        ensemble,
        holdout,
        target,
        config,
    })
}
