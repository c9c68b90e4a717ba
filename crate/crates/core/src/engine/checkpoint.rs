//! Checkpoint files.
//!
//! Layout (little-endian): magic `SEGC`, u16 version, then the sections
//! `spec`, `params`, `bn-stats`, `adam-state`, `rng`, `history` in that
//! order. Each section is a u8 name length, the name, a u64 payload length,
//! the CRC-32 of the payload and the payload itself.

use std::path::Path;

use indexmap::IndexMap;

use crate::architectures::{ModelKind, ModelSpec};
use crate::autodiff::BatchNormState;
use crate::error::{Error, Result};
use crate::optimizer::AdamState;
use crate::rng::RngState;
use crate::tensor::{tnsr, Tensor};

use super::History;

pub const CHECKPOINT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"SEGC";
const SECTIONS: [&str; 6] = ["spec", "params", "bn-stats", "adam-state", "rng", "history"];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: IndexMap<String, Tensor<f32>>,
    pub bn: IndexMap<String, BatchNormState<f32>>,
    pub adam: AdamState<f32>,
    /// Position of the dropout stream.
    pub rng: RngState,
    pub history: History,
}

impl Checkpoint {
    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for name in SECTIONS {
            let mut payload = vec![];
            match name {
                "spec" => encode_spec(&self.spec, &mut payload),
                "params" => {
                    put_u32(&mut payload, self.params.len() as u32);
                    for (k, t) in &self.params {
                        put_name(&mut payload, k);
                        tnsr::encode(t, &mut payload);
                    }
                }
                "bn-stats" => {
                    put_u32(&mut payload, self.bn.len() as u32);
                    for (k, s) in &self.bn {
                        put_name(&mut payload, k);
                        payload.push(s.populated as u8);
                        tnsr::encode(&s.mean, &mut payload);
                        tnsr::encode(&s.var, &mut payload);
                    }
                }
                "adam-state" => self.adam.encode(&mut payload),
                "rng" => {
                    payload.extend_from_slice(&self.rng.seed.to_le_bytes());
                    payload.extend_from_slice(&self.rng.stream.to_le_bytes());
                    payload.extend_from_slice(&self.rng.word_pos.to_le_bytes());
                }
                "history" => self.history.encode(&mut payload),
                _ => unreachable!(),
            }
            out.push(name.len() as u8);
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.get(..4) != Some(MAGIC.as_slice()) {
            return Err(Error::format(0, "not a checkpoint (bad magic)"));
        }
        let version = u16::from_le_bytes(
            bytes.get(4..6).ok_or_else(|| Error::format(4, "truncated header"))?.try_into().unwrap(),
        );
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(4, format!("checkpoint version {} (expected {})", version, CHECKPOINT_VERSION)));
        }
        let mut pos = 6;
        let mut payloads = Vec::with_capacity(SECTIONS.len());
        for expect in SECTIONS {
            let at = pos;
            let trunc = || Error::format(bytes.len(), format!("truncated before section '{}'", expect));
            let len = *bytes.get(pos).ok_or_else(trunc)? as usize;
            let name = bytes.get(pos + 1..pos + 1 + len).ok_or_else(trunc)?;
            if name != expect.as_bytes() {
                return Err(Error::format(at, format!("expected section '{}'", expect)));
            }
            pos += 1 + len;
            let head = bytes.get(pos..pos + 12).ok_or_else(trunc)?;
            let size = u64::from_le_bytes(head[..8].try_into().unwrap()) as usize;
            let crc = u32::from_le_bytes(head[8..].try_into().unwrap());
            pos += 12;
            let payload = bytes
                .get(pos..pos.saturating_add(size))
                .ok_or_else(|| Error::format(bytes.len(), format!("section '{}' is truncated", expect)))?;
            if crc32fast::hash(payload) != crc {
                return Err(Error::format(pos, format!("section '{}' is corrupt (checksum mismatch)", expect)));
            }
            payloads.push((pos, payload));
            pos += size;
        }
        if pos != bytes.len() {
            return Err(Error::format(pos, "trailing bytes after the last section"));
        }

        let (base, p) = payloads[0];
        let spec = decode_spec(p).ok_or_else(|| Error::format(base, "section 'spec' is malformed"))?;

        let (base, p) = payloads[1];
        let mut r = Cursor { bytes: p, pos: 0, base, section: "params" };
        let n = r.u32()?;
        let mut params = IndexMap::new();
        for _ in 0..n {
            let name = r.name()?;
            params.insert(name, r.tensor()?);
        }
        r.finish()?;

        let (base, p) = payloads[2];
        let mut r = Cursor { bytes: p, pos: 0, base, section: "bn-stats" };
        let n = r.u32()?;
        let mut bn = IndexMap::new();
        for _ in 0..n {
            let name = r.name()?;
            let populated = r.take(1)?[0] != 0;
            let (mean, var) = (r.tensor()?, r.tensor()?);
            bn.insert(name, BatchNormState { mean, var, populated });
        }
        r.finish()?;

        let (base, p) = payloads[3];
        let (adam, used) = AdamState::decode(p, base)?;
        if used != p.len() {
            return Err(Error::format(base + used, "section 'adam-state' has trailing bytes"));
        }

        let (base, p) = payloads[4];
        if p.len() != 32 {
            return Err(Error::format(base, "section 'rng' is malformed"));
        }
        let rng = RngState {
            seed: u64::from_le_bytes(p[..8].try_into().unwrap()),
            stream: u64::from_le_bytes(p[8..16].try_into().unwrap()),
            word_pos: u128::from_le_bytes(p[16..].try_into().unwrap()),
        };

        let (base, p) = payloads[5];
        let history = History::decode(p).ok_or_else(|| Error::format(base, "section 'history' is malformed"))?;

        Ok(Checkpoint { spec, params, bn, adam, rng, history })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

fn encode_spec(s: &ModelSpec, out: &mut Vec<u8>) {
    out.push(s.kind.code());
    for v in [s.input_height, s.input_width, s.input_channels, s.num_classes] {
        put_u32(out, v as u32);
    }
    out.extend_from_slice(&s.width_multiplier.to_le_bytes());
    out.extend_from_slice(&s.dropout_rate.to_le_bytes());
    out.extend_from_slice(&s.seed.to_le_bytes());
}

fn decode_spec(p: &[u8]) -> Option<ModelSpec> {
    if p.len() != 1 + 16 + 24 {
        return None;
    }
    let kind = ModelKind::from_code(p[0])?;
    let u = |i: usize| u32::from_le_bytes(p[1 + 4 * i..5 + 4 * i].try_into().unwrap()) as usize;
    let f = |at: usize| p[at..at + 8].try_into().unwrap();
    let spec = ModelSpec {
        kind,
        input_height: u(0),
        input_width: u(1),
        input_channels: u(2),
        num_classes: u(3),
        width_multiplier: f64::from_le_bytes(f(17)),
        dropout_rate: f64::from_le_bytes(f(25)),
        seed: u64::from_le_bytes(f(33)),
    };
    spec.validate().ok()?;
    Some(spec)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
    section: &'static str,
}

impl<'a> Cursor<'a> {
    fn err(&self, what: &str) -> Error {
        Error::format(self.base + self.pos, format!("section '{}': {}", self.section, what))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| self.err("truncated"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err("name is not UTF-8"))
    }

    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let (t, used) = tnsr::decode(&self.bytes[self.pos..], self.base + self.pos)?;
        self.pos += used;
        Ok(t)
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(self.err("trailing bytes"))
        }
    }
}
