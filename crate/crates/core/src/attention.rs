//! Multi-head self-attention and pre-norm / literal transformer blocks.

use crate::error::{shape_err, Result};
use crate::linalg::{gelu, softmax_rows, Matrix, MaskMatrix};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub n_heads: usize,
}

impl AttentionParams {
    pub fn d_model(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_head(&self) -> usize {
        self.d_model() / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_model();
        if self.n_heads == 0 || d % self.n_heads != 0 {
            return Err(shape_err(format!(
                "d_model {d} is not divisible by {} heads",
                self.n_heads
            )));
        }
        for (name, w) in [("w_q", &self.w_q), ("w_k", &self.w_k), ("w_v", &self.w_v), ("w_o", &self.w_o)] {
            if w.shape() != (d, d) {
                return Err(shape_err(format!("{name} is {:?}, expected {d}x{d}", w.shape())));
            }
        }
        Ok(())
    }
}

/// Per-feature affine parameters of a layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl NormParams {
    pub fn identity(d: usize) -> Self {
        Self {
            scale: vec![1.0; d],
            shift: vec![0.0; d],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub attention: AttentionParams,
    pub mlp_in: Matrix,
    pub mlp_out: Matrix,
    pub ln1: NormParams,
    pub ln2: NormParams,
}

impl BlockParams {
    /// All projections zero, norms at identity.
    pub fn zeros(d_model: usize, n_heads: usize, d_ff: usize) -> Self {
        let z = || Matrix::zeros(d_model, d_model);
        Self {
            attention: AttentionParams {
                w_q: z(),
                w_k: z(),
                w_v: z(),
                w_o: z(),
                n_heads,
            },
            mlp_in: Matrix::zeros(d_model, d_ff),
            mlp_out: Matrix::zeros(d_ff, d_model),
            ln1: NormParams::identity(d_model),
            ln2: NormParams::identity(d_model),
        }
    }
}

/// Attention weights of one self-attention call.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    /// Post-softmax weights, one `seq × seq` matrix per head.
    pub per_head_weights: Vec<Matrix>,
    /// Entrywise mean of `per_head_weights`.
    pub averaged_weights: Matrix,
    /// Entrywise head mean of the scaled pre-softmax scores `QKᵀ/√d_head`.
    pub averaged_scores: Matrix,
}

pub fn causal_mask(seq_len: usize) -> MaskMatrix {
    MaskMatrix::causal(seq_len)
}

fn head_mean(per_head: &[Matrix]) -> Matrix {
    let (r, c) = per_head[0].shape();
    let mut sum = Matrix::zeros(r, c);
    for m in per_head {
        sum = sum.add(m).expect("heads share a shape");
    }
    sum.scale(1.0 / per_head.len() as f64)
}

pub fn multi_head_self_attention(
    x: &Matrix,
    params: &AttentionParams,
    mask: &MaskMatrix,
) -> Result<(Matrix, AttentionRecord)> {
    params.validate()?;
    let d = params.d_model();
    let seq = x.rows();
    if x.cols() != d {
        return Err(shape_err(format!("input has {} features, params expect {d}", x.cols())));
    }
    if (mask.rows(), mask.cols()) != (seq, seq) {
        return Err(shape_err(format!(
            "mask {}x{} for sequence of {seq}",
            mask.rows(),
            mask.cols()
        )));
    }
    let q = x.matmul(&params.w_q)?;
    let k = x.matmul(&params.w_k)?;
    let v = x.matmul(&params.w_v)?;
    let dh = params.d_head();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();

    let mut weights = Vec::with_capacity(params.n_heads);
    let mut scores = Vec::with_capacity(params.n_heads);
    let mut heads = Vec::with_capacity(params.n_heads);
    for h in 0..params.n_heads {
        let cols = h * dh..(h + 1) * dh;
        let q_h = q.columns(cols.clone());
        let k_h = k.columns(cols.clone());
        let v_h = v.columns(cols);
        let s = q_h.matmul(&k_h.transpose())?.scale(inv_sqrt);
        let w = softmax_rows(&s, mask)?;
        heads.push(w.matmul(&v_h)?);
        weights.push(w);
        scores.push(s);
    }
    let out = Matrix::hstack(&heads)?.matmul(&params.w_o)?;
    let record = AttentionRecord {
        averaged_weights: head_mean(&weights),
        averaged_scores: head_mean(&scores),
        per_head_weights: weights,
    };
    Ok((out, record))
}

/// Per-row normalization with population variance and ε = 1e-5.
pub fn layer_norm(x: &Matrix, norm: &NormParams) -> Result<Matrix> {
    let d = x.cols();
    if norm.scale.len() != d || norm.shift.len() != d {
        return Err(shape_err("layer norm parameters do not match feature count"));
    }
    let mut out = Matrix::zeros(x.rows(), d);
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (j, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = (row[j] - mean) * inv * norm.scale[j] + norm.shift[j];
        }
    }
    Ok(out)
}

/// `z' = MSA(norm(x)) + x`. `literal` drops the normalization.
pub fn attention_sublayer(
    x: &Matrix,
    params: &BlockParams,
    mask: &MaskMatrix,
    literal: bool,
) -> Result<(Matrix, AttentionRecord)> {
    let (attn, record) = if literal {
        multi_head_self_attention(x, &params.attention, mask)?
    } else {
        multi_head_self_attention(&layer_norm(x, &params.ln1)?, &params.attention, mask)?
    };
    Ok((attn.add(x)?, record))
}

/// `z = MLP(norm(z')) + z'` with `MLP(u) = gelu(u·W_in)·W_out`.
pub fn mlp_sublayer(z_prime: &Matrix, params: &BlockParams, literal: bool) -> Result<Matrix> {
    let input = if literal {
        z_prime.clone()
    } else {
        layer_norm(z_prime, &params.ln2)?
    };
    let hidden = gelu(&input.matmul(&params.mlp_in)?);
    hidden.matmul(&params.mlp_out)?.add(z_prime)
}

pub fn transformer_block(
    x: &Matrix,
    params: &BlockParams,
    mask: &MaskMatrix,
    literal: bool,
) -> Result<(Matrix, AttentionRecord)> {
    let (z_prime, record) = attention_sublayer(x, params, mask, literal)?;
    Ok((mlp_sublayer(&z_prime, params, literal)?, record))
}
