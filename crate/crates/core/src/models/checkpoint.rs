//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "PSIM"
//! version      u32
//! arch         u8       1 = binary, 2 = rank
//! phone_dim    u32
//! hidden_dim   u32
//! num_layers   u8
//! bidir        u8
//! embed_dim    u32      ranking embedding size n (0 for binary)
//! t_max        u32      binary maximum length (0 for rank)
//! ffn_dim      u32
//! flags        u8       bit 0: final ReLU on the ranking embedding
//! pos_class    u8       softmax class of label +1 (always 1)
//! inv_hash     u64      inventory fingerprint
//! num_phones   u32
//! n_blocks     u32
//! n_blocks x { name_len u16, name utf-8, ndim u8, dims u32 x ndim, values f64 x prod(dims) }
//! ```
//!
//! Only parameter values are stored; gradients and Adagrad state are not.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{BinaryConfig, BinaryModel, RankConfig, RankModel};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Parameter, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"PSIM";
const ARCH_BINARY: u8 = 1;
const ARCH_RANK: u8 = 2;
const POSITIVE_CLASS: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Binary(BinaryModel),
    Rank(RankModel),
}

impl Model {
    pub fn arch_name(&self) -> &'static str {
        match self {
            Model::Binary(_) => "binary",
            Model::Rank(_) => "rank",
        }
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        match self {
            Model::Binary(m) => m.encoder.config(),
            Model::Rank(m) => m.encoder.config(),
        }
    }

    pub fn num_phones(&self) -> usize {
        match self {
            Model::Binary(m) => m.encoder.num_phones(),
            Model::Rank(m) => m.encoder.num_phones(),
        }
    }

    fn params(&self) -> Vec<(String, &Parameter)> {
        match self {
            Model::Binary(m) => m.params(),
            Model::Rank(m) => m.params(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub inventory_fingerprint: u64,
}

impl Checkpoint {
    pub fn new(model: Model, inventory_fingerprint: u64) -> Self {
        Checkpoint { model, inventory_fingerprint }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let enc = *self.model.encoder_config();
        let (arch, embed_dim, t_max, ffn_dim, flags) = match &self.model {
            Model::Binary(m) => (ARCH_BINARY, 0, m.config().t_max, m.config().ffn_dim, 0u8),
            Model::Rank(m) => {
                let c = m.config();
                (ARCH_RANK, c.embed_dim, 0, c.ffn_dim, u8::from(c.final_relu))
            }
        };
        out.push(arch);
        put_u32(&mut out, enc.phone_embed_dim);
        put_u32(&mut out, enc.hidden_dim);
        out.push(enc.num_layers as u8);
        out.push(u8::from(enc.bidirectional));
        put_u32(&mut out, embed_dim);
        put_u32(&mut out, t_max);
        put_u32(&mut out, ffn_dim);
        out.push(flags);
        out.push(POSITIVE_CLASS);
        out.extend_from_slice(&self.inventory_fingerprint.to_le_bytes());
        put_u32(&mut out, self.model.num_phones());

        let params = self.model.params();
        put_u32(&mut out, params.len());
        for (name, p) in params {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(p.shape().len() as u8);
            for &d in p.shape() {
                put_u32(&mut out, d);
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let arch = r.u8()?;
        let encoder = EncoderConfig {
            phone_embed_dim: r.u32()? as usize,
            hidden_dim: r.u32()? as usize,
            num_layers: r.u8()? as usize,
            bidirectional: r.u8()? != 0,
        };
        let embed_dim = r.u32()? as usize;
        let t_max = r.u32()? as usize;
        let ffn_dim = r.u32()? as usize;
        let flags = r.u8()?;
        if r.u8()? != POSITIVE_CLASS {
            return Err(Error::Checkpoint("unexpected class mapping".into()));
        }
        let inventory_fingerprint = r.u64()?;
        let num_phones = r.u32()? as usize;
        let n_blocks = r.u32()? as usize;

        let mut names = Vec::with_capacity(n_blocks);
        let mut params = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let ndim = r.u8()? as usize;
            let shape: Vec<usize> = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            names.push(name);
            params.push(Parameter::new(Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }

        let model = match arch {
            ARCH_BINARY => Model::Binary(BinaryModel::from_parameters(
                BinaryConfig { encoder, ffn_dim, t_max },
                num_phones,
                params,
            )?),
            ARCH_RANK => Model::Rank(RankModel::from_parameters(
                RankConfig { encoder, embed_dim, ffn_dim, final_relu: flags & 1 != 0 },
                num_phones,
                params,
            )?),
            other => return Err(Error::Checkpoint(format!("unknown architecture tag {other}"))),
        };
        let expected: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        if expected != names {
            return Err(Error::Checkpoint(format!("parameter names {names:?} do not match {expected:?}")));
        }
        Ok(Checkpoint { model, inventory_fingerprint })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
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
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderKind;
    use crate::phonology::Pronunciation;
    use crate::rng::{stream, Stream};

    #[test]
    fn rank_round_trip_is_bit_exact() {
        let mut rng = stream(1, Stream::Init);
        let mut cfg = RankConfig::new(EncoderKind::BiTwoLstm.config(3, 4), 5);
        cfg.final_relu = true;
        let m = RankModel::new(cfg, 6, &mut rng).unwrap();
        let ck = Checkpoint::new(Model::Rank(m), 0xdead_beef);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let (Model::Rank(a), Model::Rank(b)) = (&ck.model, &back.model) else { panic!() };
        let p = Pronunciation::from_ids(&[1, 2, 3]);
        let q = Pronunciation::from_ids(&[4, 0]);
        assert_eq!(a.similarity(&p, &q).unwrap(), b.similarity(&p, &q).unwrap());
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let mut rng = stream(2, Stream::Init);
        let m = BinaryModel::new(BinaryConfig::new(EncoderKind::Lstm.config(3, 4), 7), 6, &mut rng).unwrap();
        let ck = Checkpoint::new(Model::Binary(m), 42);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut rng = stream(3, Stream::Init);
        let m = RankModel::new(RankConfig::new(EncoderKind::Lstm.config(2, 2), 3), 4, &mut rng).unwrap();
        let bytes = Checkpoint::new(Model::Rank(m), 1).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
