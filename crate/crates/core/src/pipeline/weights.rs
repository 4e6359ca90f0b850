//! Model weights, seeded initialization and the binary weights file.
//!
//! File layout (little-endian, no padding):
//!
//! ```text
//! "VMTC" | version: u32 | tensor count: u32
//! per tensor: name length: u32 | UTF-8 name | ndims: u32 | dims: u32 × ndims | f64 × Π dims
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::attention::{AttentionParams, BlockParams, NormParams};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_init, Matrix, Rng};

use super::config::ModelConfig;

pub const MAGIC: &[u8; 4] = b"VMTC";
pub const FORMAT_VERSION: u32 = 1;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub n_heads: usize,
    pub patch_embed: Matrix,
    pub cls: Vec<f64>,
    pub encoder_pos: Matrix,
    pub encoder: Vec<BlockParams>,
    pub projector: Projector,
    pub token_embed: Matrix,
    pub decoder_pos: Matrix,
    pub decoder: Vec<BlockParams>,
    pub lm_head: Matrix,
    pub lm_head_bias: Vec<f64>,
}

fn init_block(rng: &mut Rng, d: usize, d_ff: usize, n_heads: usize) -> BlockParams {
    let mut g = |r, c| gaussian_init(rng, r, c, INIT_STD);
    BlockParams {
        attention: AttentionParams {
            w_q: g(d, d),
            w_k: g(d, d),
            w_v: g(d, d),
            w_o: g(d, d),
            n_heads,
        },
        mlp_in: g(d, d_ff),
        mlp_out: g(d_ff, d),
        ln1: NormParams::identity(d),
        ln2: NormParams::identity(d),
    }
}

/// Gaussian `N(0, 0.02²)` matrices, zero biases and shifts, unit scales.
pub fn init_weights(cfg: &ModelConfig) -> Weights {
    let d = cfg.d_model;
    let mut rng = Rng::new(cfg.seed);
    let patch_embed = gaussian_init(&mut rng, cfg.patch_dim, d, INIT_STD);
    let cls = gaussian_init(&mut rng, 1, d, INIT_STD).into_data();
    let encoder_pos = gaussian_init(&mut rng, cfg.n_patches + 1, d, INIT_STD);
    let encoder = (0..cfg.vit_depth)
        .map(|_| init_block(&mut rng, d, cfg.d_ff, cfg.n_heads))
        .collect();
    let projector = Projector {
        w1: gaussian_init(&mut rng, d, d, INIT_STD),
        b1: vec![0.0; d],
        w2: gaussian_init(&mut rng, d, d, INIT_STD),
        b2: vec![0.0; d],
    };
    let token_embed = gaussian_init(&mut rng, cfg.vocab_size, d, INIT_STD);
    let decoder_pos = gaussian_init(&mut rng, cfg.max_image_tokens() + cfg.max_text_len, d, INIT_STD);
    let decoder = (0..cfg.llm_depth)
        .map(|_| init_block(&mut rng, d, cfg.d_ff, cfg.n_heads))
        .collect();
    let lm_head = gaussian_init(&mut rng, d, cfg.vocab_size, INIT_STD);
    Weights {
        n_heads: cfg.n_heads,
        patch_embed,
        cls,
        encoder_pos,
        encoder,
        projector,
        token_embed,
        decoder_pos,
        decoder,
        lm_head,
        lm_head_bias: vec![0.0; cfg.vocab_size],
    }
}

/// A named tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn matrix(name: String, m: &Matrix) -> Self {
        Self {
            name,
            dims: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }

    fn vector(name: String, v: &[f64]) -> Self {
        Self {
            name,
            dims: vec![v.len()],
            data: v.to_vec(),
        }
    }
}

fn block_tensors(prefix: &str, b: &BlockParams, out: &mut Vec<Tensor>) {
    let a = &b.attention;
    for (name, m) in [
        ("attn.w_q", &a.w_q),
        ("attn.w_k", &a.w_k),
        ("attn.w_v", &a.w_v),
        ("attn.w_o", &a.w_o),
        ("mlp.w_in", &b.mlp_in),
        ("mlp.w_out", &b.mlp_out),
    ] {
        out.push(Tensor::matrix(format!("{prefix}.{name}"), m));
    }
    out.push(Tensor::vector(format!("{prefix}.ln1.scale"), &b.ln1.scale));
    out.push(Tensor::vector(format!("{prefix}.ln1.shift"), &b.ln1.shift));
    out.push(Tensor::vector(format!("{prefix}.ln2.scale"), &b.ln2.scale));
    out.push(Tensor::vector(format!("{prefix}.ln2.shift"), &b.ln2.shift));
}

impl Weights {
    pub fn to_tensors(&self) -> Vec<Tensor> {
        let mut t = vec![
            Tensor::vector("meta.n_heads".into(), &[self.n_heads as f64]),
            Tensor::matrix("encoder.patch_embed".into(), &self.patch_embed),
            Tensor::vector("encoder.cls".into(), &self.cls),
            Tensor::matrix("encoder.pos".into(), &self.encoder_pos),
        ];
        for (i, b) in self.encoder.iter().enumerate() {
            block_tensors(&format!("encoder.blocks.{i}"), b, &mut t);
        }
        t.push(Tensor::matrix("projector.w1".into(), &self.projector.w1));
        t.push(Tensor::vector("projector.b1".into(), &self.projector.b1));
        t.push(Tensor::matrix("projector.w2".into(), &self.projector.w2));
        t.push(Tensor::vector("projector.b2".into(), &self.projector.b2));
        t.push(Tensor::matrix("decoder.token_embed".into(), &self.token_embed));
        t.push(Tensor::matrix("decoder.pos".into(), &self.decoder_pos));
        for (i, b) in self.decoder.iter().enumerate() {
            block_tensors(&format!("decoder.blocks.{i}"), b, &mut t);
        }
        t.push(Tensor::matrix("lm_head.weight".into(), &self.lm_head));
        t.push(Tensor::vector("lm_head.bias".into(), &self.lm_head_bias));
        t
    }

    pub fn from_tensors(tensors: Vec<Tensor>, end_offset: usize) -> Result<Self> {
        let mut map: BTreeMap<String, Tensor> = BTreeMap::new();
        for t in tensors {
            if map.contains_key(&t.name) {
                return Err(Error::Parse {
                    offset: end_offset,
                    reason: format!("duplicate tensor `{}`", t.name),
                });
            }
            map.insert(t.name.clone(), t);
        }
        WeightsReader { map, end_offset }.assemble()
    }
}

struct WeightsReader {
    map: BTreeMap<String, Tensor>,
    end_offset: usize,
}

impl WeightsReader {
    fn err(&self, reason: String) -> Error {
        Error::Parse {
            offset: self.end_offset,
            reason,
        }
    }

    fn tensor(&mut self, name: &str, ndims: usize) -> Result<Tensor> {
        let t = self
            .map
            .remove(name)
            .ok_or_else(|| self.err(format!("missing tensor `{name}`")))?;
        if t.dims.len() != ndims {
            return Err(self.err(format!(
                "tensor `{name}` has {} dims, expected {ndims}",
                t.dims.len()
            )));
        }
        Ok(t)
    }

    fn matrix(&mut self, name: &str) -> Result<Matrix> {
        let t = self.tensor(name, 2)?;
        Matrix::from_vec(t.dims[0], t.dims[1], t.data)
    }

    fn vector(&mut self, name: &str) -> Result<Vec<f64>> {
        Ok(self.tensor(name, 1)?.data)
    }

    fn block(&mut self, prefix: &str, n_heads: usize) -> Result<BlockParams> {
        Ok(BlockParams {
            attention: AttentionParams {
                w_q: self.matrix(&format!("{prefix}.attn.w_q"))?,
                w_k: self.matrix(&format!("{prefix}.attn.w_k"))?,
                w_v: self.matrix(&format!("{prefix}.attn.w_v"))?,
                w_o: self.matrix(&format!("{prefix}.attn.w_o"))?,
                n_heads,
            },
            mlp_in: self.matrix(&format!("{prefix}.mlp.w_in"))?,
            mlp_out: self.matrix(&format!("{prefix}.mlp.w_out"))?,
            ln1: NormParams {
                scale: self.vector(&format!("{prefix}.ln1.scale"))?,
                shift: self.vector(&format!("{prefix}.ln1.shift"))?,
            },
            ln2: NormParams {
                scale: self.vector(&format!("{prefix}.ln2.scale"))?,
                shift: self.vector(&format!("{prefix}.ln2.shift"))?,
            },
        })
    }

    fn count_blocks(&self, prefix: &str) -> usize {
        (0..)
            .take_while(|i| self.map.contains_key(&format!("{prefix}.{i}.attn.w_q")))
            .count()
    }

    fn assemble(mut self) -> Result<Weights> {
        let heads = self.vector("meta.n_heads")?;
        let n_heads = match heads.as_slice() {
            [h] if *h >= 1.0 && h.fract() == 0.0 => *h as usize,
            _ => return Err(self.err("`meta.n_heads` must hold one positive integer".into())),
        };
        let n_enc = self.count_blocks("encoder.blocks");
        let n_dec = self.count_blocks("decoder.blocks");
        let w = Weights {
            n_heads,
            patch_embed: self.matrix("encoder.patch_embed")?,
            cls: self.vector("encoder.cls")?,
            encoder_pos: self.matrix("encoder.pos")?,
            encoder: (0..n_enc)
                .map(|i| self.block(&format!("encoder.blocks.{i}"), n_heads))
                .collect::<Result<_>>()?,
            projector: Projector {
                w1: self.matrix("projector.w1")?,
                b1: self.vector("projector.b1")?,
                w2: self.matrix("projector.w2")?,
                b2: self.vector("projector.b2")?,
            },
            token_embed: self.matrix("decoder.token_embed")?,
            decoder_pos: self.matrix("decoder.pos")?,
            decoder: (0..n_dec)
                .map(|i| self.block(&format!("decoder.blocks.{i}"), n_heads))
                .collect::<Result<_>>()?,
            lm_head: self.matrix("lm_head.weight")?,
            lm_head_bias: self.vector("lm_head.bias")?,
        };
        if let Some(name) = self.map.keys().next() {
            return Err(self.err(format!("unexpected tensor `{name}`")));
        }
        Ok(w)
    }
}

pub fn encode_tensors(tensors: &[Tensor]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos,
                reason: format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(buf: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = ByteReader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let at = r.pos;
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse {
            offset: at,
            reason: format!("unsupported version {version}"),
        });
    }
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Parse {
                offset: at,
                reason: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let ndims = r.u32("ndims")? as usize;
        let mut dims = Vec::with_capacity(ndims.min(8));
        for _ in 0..ndims {
            dims.push(r.u32("dim")? as usize);
        }
        let at = r.pos;
        let elems = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Parse {
                offset: at,
                reason: format!("tensor `{name}` is too large"),
            })?;
        let data = r
            .take(elems, "tensor payload")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor { name, dims, data });
    }
    if r.pos != buf.len() {
        return Err(Error::Parse {
            offset: r.pos,
            reason: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    Ok(tensors)
}

pub fn weights_to_bytes(w: &Weights) -> Vec<u8> {
    encode_tensors(&w.to_tensors())
}

pub fn weights_from_bytes(buf: &[u8]) -> Result<Weights> {
    let tensors = decode_tensors(buf)?;
    Weights::from_tensors(tensors, buf.len())
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn save_weights(w: &Weights, path: &Path) -> Result<()> {
    write_atomic(path, &weights_to_bytes(w))
}

pub fn load_weights(path: &Path) -> Result<Weights> {
    weights_from_bytes(&fs::read(path)?)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
