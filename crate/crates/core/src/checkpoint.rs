//! Binary checkpoint format.
//!
//! All integers little-endian:
//!
//! ```text
//! "CCAT"  version:u32
//! vocab_size d_model n_heads n_blocks d_ffn input_len output_len
//!     dropout_ppm                                   (u32 each)
//! 14 x (len:u32, utf-8 bytes)                       vocabulary in id order
//! seed:u64  steps:u64  stage_accuracy:f64
//! per parameter, canonical order:
//!     name_len:u32 name rank:u32 dims:u32*rank data:f32*prod(dims)
//! has_optimizer:u8
//!     [adam_step:u64, first-moment blocks, second-moment blocks]
//! ```
//!
//! `dropout_ppm` is the dropout rate in parts per million.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Tensor};
use crate::optim::OptimState;
use crate::vocab::SYMBOLS;

pub const MAGIC: &[u8; 4] = b"CCAT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub steps: u64,
    pub stage_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub meta: CheckpointMeta,
    pub optim: Option<OptimState<f32>>,
}

impl Checkpoint {
    pub fn config(&self) -> ModelConfig {
        self.params.config
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_blocks(out: &mut Vec<u8>, params: &ModelParams<f32>) -> Result<()> {
    for (name, t) in params.named() {
        if let Some(bad) = t.data.iter().find(|x| !x.is_finite()) {
            return Err(Error::Checkpoint(format!("{name} holds non-finite value {bad}")));
        }
        put_u32(out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(out, t.shape.len() as u32);
        for &d in &t.shape {
            put_u32(out, d as u32);
        }
        for &x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let c = ckpt.params.config;
    let mut out = Vec::with_capacity(4 * ckpt.params.num_params() + 4096);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    for v in [
        c.vocab_size,
        c.d_model,
        c.n_heads,
        c.n_blocks,
        c.d_ffn,
        c.input_len,
        c.output_len,
    ] {
        put_u32(&mut out, v as u32);
    }
    put_u32(&mut out, (c.dropout_rate * 1e6).round() as u32);
    for sym in SYMBOLS {
        let mut buf = [0u8; 4];
        let bytes = sym.encode_utf8(&mut buf).as_bytes();
        put_u32(&mut out, bytes.len() as u32);
        out.extend_from_slice(bytes);
    }
    out.extend_from_slice(&ckpt.meta.seed.to_le_bytes());
    out.extend_from_slice(&ckpt.meta.steps.to_le_bytes());
    out.extend_from_slice(&ckpt.meta.stage_accuracy.to_le_bytes());
    put_blocks(&mut out, &ckpt.params)?;
    match &ckpt.optim {
        None => out.push(0),
        Some(state) => {
            out.push(1);
            out.extend_from_slice(&state.step.to_le_bytes());
            put_blocks(&mut out, &state.first_moment)?;
            put_blocks(&mut out, &state.second_moment)?;
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} while reading {what}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn blocks(&mut self, config: ModelConfig) -> Result<ModelParams<f32>> {
        let mut params = ModelParams::<f32>::zeros(config);
        for (name, t) in params.named_mut() {
            let len = self.u32("name length")? as usize;
            let got = self.take(len, "name")?;
            if got != name.as_bytes() {
                return Err(Error::Checkpoint(format!(
                    "expected block {name}, found {:?}",
                    String::from_utf8_lossy(got)
                )));
            }
            let rank = self.u32("rank")? as usize;
            let mut dims = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                dims.push(self.u32("dimension")? as usize);
            }
            if dims != t.shape {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {dims:?}, config implies {:?}",
                    t.shape
                )));
            }
            let raw = self.take(4 * t.len(), &name)?;
            *t = Tensor {
                shape: dims,
                data: raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            };
        }
        Ok(params)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (this build reads version {VERSION})"
        )));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.u32("config")? as usize;
    }
    let dropout_ppm = r.u32("dropout")?;
    let config = ModelConfig {
        vocab_size: dims[0],
        d_model: dims[1],
        n_heads: dims[2],
        n_blocks: dims[3],
        d_ffn: dims[4],
        input_len: dims[5],
        output_len: dims[6],
        dropout_rate: dropout_ppm as f64 / 1e6,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;
    for (id, sym) in SYMBOLS.iter().enumerate() {
        let len = r.u32("vocabulary")? as usize;
        let got = r.take(len, "vocabulary")?;
        let mut buf = [0u8; 4];
        if got != sym.encode_utf8(&mut buf).as_bytes() {
            return Err(Error::Checkpoint(format!(
                "vocabulary mismatch at id {id}: file has {:?}, expected {sym:?}",
                String::from_utf8_lossy(got)
            )));
        }
    }
    let meta = CheckpointMeta {
        seed: r.u64("seed")?,
        steps: r.u64("steps")?,
        stage_accuracy: r.f64("stage accuracy")?,
    };
    let params = r.blocks(config)?;
    let optim = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            Some(OptimState {
                step,
                first_moment: r.blocks(config)?,
                second_moment: r.blocks(config)?,
            })
        }
        f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        params,
        meta,
        optim,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(with_optim: bool) -> Checkpoint {
        let params = ModelParams::<f32>::init(ModelConfig::tiny(), 5);
        let optim = with_optim.then(|| {
            let mut s = OptimState::new(&params);
            s.step = 17;
            s.first_moment = ModelParams::init(ModelConfig::tiny(), 6);
            s
        });
        Checkpoint {
            params,
            meta: CheckpointMeta {
                seed: 5,
                steps: 17,
                stage_accuracy: 0.25,
            },
            optim,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for with_optim in [false, true] {
            let ckpt = sample(with_optim);
            let back = decode_checkpoint(&encode_checkpoint(&ckpt).unwrap()).unwrap();
            assert_eq!(back, ckpt);
            for ((_, a), (_, b)) in back.params.named().iter().zip(ckpt.params.named()) {
                let bits = |t: &Tensor<f32>| t.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(b));
            }
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&sample(false)).unwrap();
        assert_eq!(&bytes[..4], b"CCAT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        // d_model of the tiny config.
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 8);
        // First vocabulary entry: length 1, "P".
        assert_eq!(&bytes[40..45], &[1, 0, 0, 0, b'P']);
    }

    #[test]
    fn truncation_is_a_framing_error() {
        let bytes = encode_checkpoint(&sample(true)).unwrap();
        for cut in [0, 3, 10, 50, bytes.len() / 2, bytes.len() - 1] {
            match decode_checkpoint(&bytes[..cut]) {
                Err(Error::Checkpoint(msg)) => assert!(msg.contains("truncated"), "{msg}"),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_bad_magic_version_vocab() {
        let bytes = encode_checkpoint(&sample(false)).unwrap();
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(decode_checkpoint(&b).unwrap_err().to_string().contains("magic"));
        let mut b = bytes.clone();
        b[4] = 2;
        assert!(decode_checkpoint(&b).unwrap_err().to_string().contains("version 2"));
        let mut b = bytes.clone();
        b[44] = b'Q';
        assert!(decode_checkpoint(&b).unwrap_err().to_string().contains("vocabulary"));
        let mut b = bytes;
        b.push(0);
        assert!(decode_checkpoint(&b).unwrap_err().to_string().contains("trailing"));
    }

    #[test]
    fn non_finite_values_are_refused() {
        let mut ckpt = sample(false);
        ckpt.params.w_vocab.data[3] = f32::NAN;
        assert!(matches!(encode_checkpoint(&ckpt), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = sample(true);
        save_checkpoint(&path, &ckpt).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    }
}
