//! Cross-modality attention inhibition inside the decoder.
//!
//! For every text query row, image keys are scored by a focus score that mixes
//! the row's own text-to-image attention with the image attention of the text
//! tokens it attends to. The lowest-scoring fraction γ of image keys is masked
//! out of that row and the block is evaluated again with the augmented mask.

use serde::{Deserialize, Serialize};

use crate::attention::{mlp_sublayer, multi_head_self_attention, layer_norm, AttentionRecord, BlockParams};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{lowest_rank_indices, Matrix, MaskMatrix};

/// Image tokens occupy `[0, n_image)`, text tokens `[n_image, n_image + n_text)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SequenceLayout {
    pub n_image: usize,
    pub n_text: usize,
}

impl SequenceLayout {
    pub fn len(&self) -> usize {
        self.n_image + self.n_text
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How the per-row focus over image keys is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocusMode {
    /// Own text-to-image attention plus neighbor-aggregated attention.
    #[default]
    Neighborhood,
    /// Own text-to-image attention only.
    Tia,
    /// Causal prefix sum of text-to-image rows.
    Sum,
    /// Prefix sum discounted by `δ^(distance)`.
    Discounted,
}

impl std::str::FromStr for FocusMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neighborhood" => Ok(Self::Neighborhood),
            "tia" => Ok(Self::Tia),
            "sum" => Ok(Self::Sum),
            "discounted" => Ok(Self::Discounted),
            other => Err(Error::InvalidMode(other.to_string())),
        }
    }
}

/// Which head-averaged attention matrix the focus score is built from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocusBasis {
    /// Post-softmax weights.
    #[default]
    Weights,
    /// Scaled pre-softmax scores.
    Scores,
}

/// Text rows × image columns.
#[derive(Clone, Debug, PartialEq)]
pub struct FocusScore(pub Matrix);

/// Inhibited image columns per text row, ascending.
pub type InhibitionPositions = Vec<Vec<usize>>;

#[derive(Clone, Debug, PartialEq)]
pub struct InhibitionResult {
    pub positions: InhibitionPositions,
    pub mask: MaskMatrix,
}

/// Returns `(A_t2i, A_t2t)`.
pub fn split_attention(a_s: &Matrix, layout: SequenceLayout) -> Result<(Matrix, Matrix)> {
    let total = layout.len();
    if a_s.shape() != (total, total) {
        return Err(shape_err(format!(
            "attention {:?} does not match layout of {total} tokens",
            a_s.shape()
        )));
    }
    let n = layout.n_image;
    Ok((a_s.slice(n..total, 0..n), a_s.slice(n..total, n..total)))
}

/// Strictly-lower-triangular copy: each text token's attention to earlier
/// text tokens, itself excluded.
pub fn neighborhood_mask(a_t2t: &Matrix) -> Result<Matrix> {
    if a_t2t.rows() != a_t2t.cols() {
        return Err(shape_err("text-to-text block is not square"));
    }
    let m = a_t2t.rows();
    let mut out = Matrix::zeros(m, m);
    for j in 0..m {
        for k in 0..j {
            out.set(j, k, a_t2t.get(j, k));
        }
    }
    Ok(out)
}

/// `A_n2i = A_t2n · A_t2i`.
pub fn neighborhood_focus(a_t2n: &Matrix, a_t2i: &Matrix) -> Result<Matrix> {
    a_t2n.matmul(a_t2i)
}

/// `F = A_n2i + A_t2i`.
pub fn focus_score(a_n2i: &Matrix, a_t2i: &Matrix) -> Result<FocusScore> {
    Ok(FocusScore(a_n2i.add(a_t2i)?))
}

/// Focus score for any [`FocusMode`]; `discount` is only read by
/// [`FocusMode::Discounted`] and must lie in `(0, 1)` there.
pub fn focus_score_variant(
    a_t2i: &Matrix,
    a_t2t: &Matrix,
    mode: FocusMode,
    discount: f64,
) -> Result<FocusScore> {
    match mode {
        FocusMode::Neighborhood => {
            let a_n2i = neighborhood_focus(&neighborhood_mask(a_t2t)?, a_t2i)?;
            focus_score(&a_n2i, a_t2i)
        }
        FocusMode::Tia => Ok(FocusScore(a_t2i.clone())),
        FocusMode::Sum => Ok(FocusScore(discounted_prefix(a_t2i, 1.0))),
        FocusMode::Discounted => {
            if !(discount > 0.0 && discount < 1.0) {
                return Err(Error::InvalidMode(format!("discount {discount} outside (0, 1)")));
            }
            Ok(FocusScore(discounted_prefix(a_t2i, discount)))
        }
    }
}

/// `F[j] = Σ_{h≤j} δ^{j−h}·A[h]`, via the recurrence `F[j] = δ·F[j−1] + A[j]`.
fn discounted_prefix(a: &Matrix, discount: f64) -> Matrix {
    let mut out = a.clone();
    for j in 1..a.rows() {
        for c in 0..a.cols() {
            out.set(j, c, discount * out.get(j - 1, c) + a.get(j, c));
        }
    }
    out
}

/// Number of image columns inhibited per text row:
/// `min(⌊γ·n_image⌋, n_image − 1)`, zero when there are no image tokens.
pub fn inhibited_count(gamma: f64, n_image: usize) -> usize {
    if n_image == 0 {
        return 0;
    }
    ((gamma * n_image as f64).floor() as usize).min(n_image - 1)
}

/// Per text row, the `inhibited_count` image columns with the lowest focus.
pub fn inhibition_positions(f: &FocusScore, gamma: f64) -> Result<InhibitionPositions> {
    let n_image = f.0.cols();
    let q = inhibited_count(gamma, n_image);
    (0..f.0.rows())
        .map(|r| {
            if q == 0 {
                Ok(Vec::new())
            } else {
                lowest_rank_indices(f.0.row(r), q)
            }
        })
        .collect()
}

/// Writes the blocking value at `(n_image + row, col)` for every position.
pub fn apply_inhibition(
    mask: &MaskMatrix,
    positions: &InhibitionPositions,
    layout: SequenceLayout,
) -> Result<MaskMatrix> {
    if (mask.rows(), mask.cols()) != (layout.len(), layout.len()) {
        return Err(shape_err("mask does not match sequence layout"));
    }
    let mut out = mask.clone();
    for (row, cols) in positions.iter().enumerate() {
        for &col in cols {
            if col >= layout.n_image || row >= layout.n_text {
                return Err(shape_err(format!("inhibition ({row}, {col}) outside text-image block")));
            }
            out.block(layout.n_image + row, col);
        }
    }
    Ok(out)
}

/// `γ_l = γ_max·l/(depth − 1)`; a single layer gets `γ_max`.
pub fn linear_gamma_schedule(depth: usize, gamma_max: f64) -> Vec<f64> {
    match depth {
        0 => Vec::new(),
        1 => vec![gamma_max],
        _ => (0..depth)
            .map(|l| gamma_max * l as f64 / (depth - 1) as f64)
            .collect(),
    }
}

/// Settings for one inhibited decoder layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CmaiSettings {
    pub gamma: f64,
    pub mode: FocusMode,
    pub discount: f64,
    pub basis: FocusBasis,
    pub literal: bool,
}

#[derive(Clone, Debug)]
pub struct CmaiLayerOutput {
    pub output: Matrix,
    pub inhibition: InhibitionResult,
    /// Attention under the base mask, used for scoring.
    pub scoring_record: AttentionRecord,
    /// Attention under the augmented mask, the one that produced `output`.
    pub record: AttentionRecord,
}

/// Two-pass block evaluation: score under `base_mask`, then recompute the
/// whole block under the inhibited mask.
pub fn cmai_layer(
    x: &Matrix,
    params: &BlockParams,
    base_mask: &MaskMatrix,
    layout: SequenceLayout,
    settings: CmaiSettings,
) -> Result<CmaiLayerOutput> {
    if !(0.0..1.0).contains(&settings.gamma) {
        return Err(Error::Config {
            field: "cmai.gamma_max".into(),
            reason: format!("inhibition ratio {} outside [0, 1)", settings.gamma),
        });
    }
    if x.rows() != layout.len() {
        return Err(shape_err("input rows do not match sequence layout"));
    }
    let normed = if settings.literal {
        x.clone()
    } else {
        layer_norm(x, &params.ln1)?
    };
    let (attn, scoring_record) = multi_head_self_attention(&normed, &params.attention, base_mask)?;

    let basis = match settings.basis {
        FocusBasis::Weights => &scoring_record.averaged_weights,
        FocusBasis::Scores => &scoring_record.averaged_scores,
    };
    let (a_t2i, a_t2t) = split_attention(basis, layout)?;
    let focus = focus_score_variant(&a_t2i, &a_t2t, settings.mode, settings.discount)?;
    let positions = inhibition_positions(&focus, settings.gamma)?;
    let mask = apply_inhibition(base_mask, &positions, layout)?;

    let (attn, record) = if positions.iter().all(Vec::is_empty) {
        (attn, scoring_record.clone())
    } else {
        multi_head_self_attention(&normed, &params.attention, &mask)?
    };
    let z_prime = attn.add(x)?;
    let output = mlp_sublayer(&z_prime, params, settings.literal)?;
    Ok(CmaiLayerOutput {
        output,
        inhibition: InhibitionResult { positions, mask },
        scoring_record,
        record,
    })
}
