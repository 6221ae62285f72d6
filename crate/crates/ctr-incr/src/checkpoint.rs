//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! | part | layout |
//! |------|--------|
//! | magic | 8 bytes `CTRCKPT\0` |
//! | version | `u32` = 1 |
//! | metadata | seed `u64`, steps `u64`, config_hash `u64`, teacher_hash `u64`, label_prior `f64` |
//! | fields | count `u32`; per field: name (`u32` length + UTF-8), embedding_dim `u32`, value count `u32`, values `u32` in index order |
//! | layers | hidden count `u32`; width `u32` per hidden layer |
//! | parameters | block count `u32`; per block: id string, rows `u32`, cols `u32`, `rows × cols` `f64` row-major |
//! | optimizer | flag `u8`; if 1: epsilon `f64`, block count `u32`, blocks as above with ids prefixed `adagrad/` |
//! | trailer | SHA-256 of every preceding byte (32 bytes) |
//!
//! Parameter block ids are `embedding/<field>`, `hidden/<i>/weights`,
//! `hidden/<i>/bias`, `output/weights`, `output/bias`, in that order.

use std::fs;
use std::path::Path;

use ctr_incr_core::nn::{Activation, DenseLayer, EmbeddingTable, FieldSpec, ModelMeta};
use ctr_incr_core::{CtrModel, OptimizerState, Vocabulary};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CTRCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn block(&mut self, id: &str, rows: usize, cols: usize, values: &[f64]) {
        self.str(id);
        self.u32(rows as u32);
        self.u32(cols as u32);
        for &v in values {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
                Error::Corrupt(format!("unexpected end of data at byte {} (wanted {n} more)", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("invalid UTF-8 in string".into()))
    }
    fn block(&mut self, want_id: &str, want: (usize, usize)) -> Result<Vec<f64>> {
        let id = self.str()?;
        if id != want_id {
            return Err(Error::Missing(format!("expected parameter block `{want_id}`, found `{id}`")));
        }
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        if (rows, cols) != want {
            return Err(Error::Corrupt(format!(
                "block `{id}` has shape {rows}x{cols}, expected {}x{}",
                want.0, want.1
            )));
        }
        (0..rows * cols).map(|_| self.f64()).collect()
    }
}

/// Serializes a model (and optionally its optimizer state) to bytes.
pub fn encode(model: &CtrModel, opt: Option<&OptimizerState>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    let m = &model.meta;
    w.u64(m.seed);
    w.u64(m.steps);
    w.u64(m.config_hash);
    w.u64(m.teacher_hash);
    w.f64(m.label_prior);

    w.u32(model.fields.len() as u32);
    for (f, spec) in model.fields.iter().enumerate() {
        w.str(&spec.name);
        w.u32(spec.embedding_dim as u32);
        let values = model.vocab.values(f);
        w.u32(values.len() as u32);
        for &v in values {
            w.u32(v);
        }
    }
    w.u32(model.hidden.len() as u32);
    for l in &model.hidden {
        w.u32(l.outputs as u32);
    }

    let ids = model.block_ids();
    let blocks = model.blocks();
    w.u32(ids.len() as u32);
    for (id, values) in ids.iter().zip(&blocks) {
        let (r, c) = model.block_shape(*id);
        w.block(&model.block_name(*id), r, c, values);
    }

    match opt {
        None => w.u8(0),
        Some(opt) => {
            w.u8(1);
            w.f64(opt.epsilon);
            w.u32(ids.len() as u32);
            for (id, values) in ids.iter().zip(&opt.accumulators) {
                let (r, c) = model.block_shape(*id);
                w.block(&format!("adagrad/{}", model.block_name(*id)), r, c, values);
            }
        }
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

/// Parses bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<(CtrModel, Option<OptimizerState>)> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
        return Err(Error::Corrupt(format!("{} bytes is too short for a checkpoint", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Corrupt("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }

    let mut r = Reader { buf: body, pos: 12 };
    let meta = ModelMeta {
        seed: r.u64()?,
        steps: r.u64()?,
        config_hash: r.u64()?,
        teacher_hash: r.u64()?,
        label_prior: r.f64()?,
    };
    let n_fields = r.u32()? as usize;
    if n_fields == 0 {
        return Err(Error::Missing("checkpoint declares no fields".into()));
    }
    let mut fields = Vec::with_capacity(n_fields);
    let mut vocab_parts = Vec::with_capacity(n_fields);
    for _ in 0..n_fields {
        let name = r.str()?;
        let dim = r.u32()? as usize;
        let n = r.u32()? as usize;
        let values = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        fields.push(FieldSpec::new(name.clone(), dim));
        vocab_parts.push((name, values));
    }
    let vocab = Vocabulary::from_values(vocab_parts)?;
    let n_hidden = r.u32()? as usize;
    let widths = (0..n_hidden).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;

    let n_blocks = r.u32()? as usize;
    let expected_blocks = n_fields + 2 * n_hidden + 2;
    if n_blocks != expected_blocks {
        return Err(Error::Missing(format!("{n_blocks} parameter blocks, expected {expected_blocks}")));
    }
    let mut tables = Vec::with_capacity(n_fields);
    for (f, spec) in fields.iter().enumerate() {
        let rows = vocab.len(f);
        let weights = r.block(&format!("embedding/{}", spec.name), (rows, spec.embedding_dim))?;
        tables.push(EmbeddingTable { rows, dim: spec.embedding_dim, weights });
    }
    let mut width: usize = fields.iter().map(|f| f.embedding_dim).sum();
    let mut hidden = Vec::with_capacity(n_hidden);
    for (l, &out) in widths.iter().enumerate() {
        let weights = r.block(&format!("hidden/{l}/weights"), (width, out))?;
        let bias = r.block(&format!("hidden/{l}/bias"), (1, out))?;
        hidden.push(DenseLayer { inputs: width, outputs: out, weights, bias, activation: Activation::Relu });
        width = out;
    }
    let weights = r.block("output/weights", (width, 1))?;
    let bias = r.block("output/bias", (1, 1))?;
    let output = DenseLayer { inputs: width, outputs: 1, weights, bias, activation: Activation::Identity };
    let model = CtrModel { fields, vocab, tables, hidden, output, meta };

    let opt = match r.u8()? {
        0 => None,
        1 => {
            let epsilon = r.f64()?;
            if r.u32()? as usize != expected_blocks {
                return Err(Error::Missing("optimizer block count differs from model".into()));
            }
            let accumulators = model
                .block_ids()
                .into_iter()
                .map(|id| r.block(&format!("adagrad/{}", model.block_name(id)), model.block_shape(id)))
                .collect::<Result<Vec<_>>>()?;
            Some(OptimizerState { accumulators, epsilon })
        }
        flag => return Err(Error::Corrupt(format!("bad optimizer flag {flag}"))),
    };
    if r.pos != body.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok((model, opt))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &CtrModel, opt: Option<&OptimizerState>) -> Result<()> {
    fs::write(path, encode(model, opt))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CtrModel, Option<OptimizerState>)> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctr_incr_core::nn::{init_model, ModelSpec};

    fn model() -> (CtrModel, OptimizerState) {
        let mut v = Vocabulary::new(&["item", "publisher"]);
        for x in [5, 3, 9] {
            v.insert(0, x);
        }
        v.insert(1, 1);
        let spec = ModelSpec::uniform(&["item", "publisher"], 3, vec![4, 2]);
        let mut m = init_model(&spec, &v, 42).unwrap();
        m.meta.config_hash = 0xdead_beef;
        m.meta.label_prior = 0.0731;
        let mut o = OptimizerState::zeros_like(&m);
        o.accumulators[1][0] = 1.25;
        (m, o)
    }

    #[test]
    fn round_trip_is_exact_and_canonical() {
        let (m, o) = model();
        let bytes = encode(&m, Some(&o));
        let (m2, o2) = decode(&bytes).unwrap();
        assert_eq!(m2, m);
        assert_eq!(o2.as_ref(), Some(&o));
        assert_eq!(encode(&m2, o2.as_ref()), bytes);
        let (m3, o3) = decode(&encode(&m, None)).unwrap();
        assert_eq!(m3, m);
        assert!(o3.is_none());
    }

    #[test]
    fn version_mismatch() {
        let (m, _) = model();
        let mut bytes = encode(&m, None);
        bytes[8] = 2;
        assert!(matches!(decode(&bytes), Err(Error::Version { found: 2, expected: 1 })));
    }

    #[test]
    fn truncation_and_bit_flips_are_corruption() {
        let (m, o) = model();
        let bytes = encode(&m, Some(&o));
        for cut in [bytes.len() - 1, bytes.len() / 2, 20] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode(&flipped), Err(Error::Corrupt(_))));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(decode(&magic), Err(Error::Corrupt(_))));
    }

    #[test]
    fn inconsistent_body_with_valid_checksum_is_rejected() {
        let (m, _) = model();
        let mut bytes = encode(&m, None);
        bytes.truncate(bytes.len() - DIGEST_LEN);
        // drop the optimizer flag and the last parameter block, then re-seal
        let cut = bytes.len() - 1 - (4 + "output/bias".len() + 8 + 8);
        bytes.truncate(cut);
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        assert!(matches!(decode(&bytes), Err(Error::Corrupt(_) | Error::Missing(_))));
    }
}
