//! The toy multimodal model: ViT encoder with scheduled token compression,
//! two-layer GELU projector, and a causal decoder with attention inhibition.

mod config;
mod report;
mod weights;

use std::time::Instant;

pub use config::{CmaiConfig, InputConfig, ModelConfig};
pub use report::{canonical_json, digest_f64, format_float, LayerReport, RunReport};
pub use weights::{
    decode_tensors, encode_tensors, init_weights, load_weights, save_weights, weights_from_bytes,
    weights_to_bytes, Projector, Tensor, Weights, FORMAT_VERSION, MAGIC,
};
pub(crate) use weights::write_atomic;

use crate::attention::{attention_sublayer, causal_mask, mlp_sublayer, transformer_block, AttentionRecord};
use crate::cmai::{cmai_layer, linear_gamma_schedule, CmaiSettings, SequenceLayout};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{gaussian_init, gelu, Matrix, MaskMatrix, Rng};
use crate::vmtc::{
    compress, last_layer_prune, schedule_stages, spatial_downsample, CompressionStrategy, MergeMode,
    StagePlan, TokenPartition,
};

/// One executed compression stage.
#[derive(Clone, Debug)]
pub struct StageTrace {
    pub layer: usize,
    pub plan: StagePlan,
    /// Block state after attention, `[CLS]` first.
    pub input: Matrix,
    /// Compressed state handed to the MLP.
    pub output: Matrix,
    pub partition: TokenPartition,
}

#[derive(Clone, Debug)]
pub struct EncodeOutput {
    /// Visual tokens for the projector; `[CLS]` only when `keep_cls` is set.
    pub tokens: Matrix,
    /// Patch-token count entering the encoder, then after each reduction.
    pub token_counts: Vec<usize>,
    pub stages: Vec<StageTrace>,
}

pub fn encode_image(patches: &Matrix, weights: &Weights, cfg: &ModelConfig) -> Result<EncodeOutput> {
    if patches.shape() != (cfg.n_patches, cfg.patch_dim) {
        return Err(shape_err(format!(
            "patches {:?}, config expects {}x{}",
            patches.shape(),
            cfg.n_patches,
            cfg.patch_dim
        )));
    }
    let literal = cfg.literal_equations;
    let embedded = patches.matmul(&weights.patch_embed)?;
    let cls = Matrix::row_vector(&weights.cls);
    let mut x = Matrix::vstack(&[&cls, &embedded])?.add(&weights.encoder_pos)?;

    let v = &cfg.vmtc;
    let layerwise = v.enabled && v.strategy == CompressionStrategy::Layerwise;
    let (layers, plans) = if layerwise {
        (v.insertion_layers(weights.encoder.len())?, schedule_stages(cfg.n_patches, v)?)
    } else {
        (Vec::new(), Vec::new())
    };
    let mut rng = Rng::new(v.kmeans.seed);
    let mut token_counts = vec![cfg.n_patches];
    let mut stages = Vec::new();
    let mut last_record: Option<AttentionRecord> = None;
    let mask_for = |n: usize| MaskMatrix::zeros(n, n);

    for (l, block) in weights.encoder.iter().enumerate() {
        let mask = mask_for(x.rows());
        match layers.iter().position(|&s| s == l) {
            Some(t) if !plans[t].is_identity() => {
                let plan = plans[t].clone();
                let (z_prime, record) = attention_sublayer(&x, block, &mask, literal)?;
                let mut stage_cfg = v.clone();
                if stage_cfg.merge == MergeMode::Cluster {
                    stage_cfg.clusters_per_stage = plan.clusters;
                }
                let out = compress(&z_prime, &record.averaged_weights, plan.keep, &stage_cfg, &mut rng)?;
                if out.tokens.rows() != plan.output + 1 {
                    return Err(Error::InvalidSchedule(format!(
                        "stage {t} produced {} tokens, planned {}",
                        out.tokens.rows() - 1,
                        plan.output
                    )));
                }
                x = mlp_sublayer(&out.tokens, block, literal)?;
                token_counts.push(plan.output);
                stages.push(StageTrace {
                    layer: l,
                    plan,
                    input: z_prime,
                    output: out.tokens,
                    partition: out.partition,
                });
                last_record = Some(record);
            }
            _ => {
                let (next, record) = transformer_block(&x, block, &mask, literal)?;
                x = next;
                last_record = Some(record);
            }
        }
    }

    if v.enabled {
        match v.strategy {
            CompressionStrategy::Layerwise => {}
            CompressionStrategy::LastLayer => {
                let record = last_record.ok_or_else(|| shape_err("encoder has no blocks"))?;
                x = last_layer_prune(&x, &record.averaged_weights, v.target_keep_ratio, v.ips_direction)?;
                token_counts.push(x.rows() - 1);
            }
            CompressionStrategy::Spatial => {
                let patches = x.slice(1..x.rows(), 0..x.cols());
                let pooled = spatial_downsample(&patches, cfg.grid_side(), v.spd_factor)?;
                token_counts.push(pooled.rows());
                x = Matrix::vstack(&[&x.select_rows(&[0]), &pooled])?;
            }
        }
    }

    let tokens = if cfg.keep_cls {
        x
    } else {
        x.slice(1..x.rows(), 0..x.cols())
    };
    Ok(EncodeOutput {
        tokens,
        token_counts,
        stages,
    })
}

/// `gelu(t·W₁ + b₁)·W₂ + b₂`.
pub fn project(t: &Matrix, projector: &Projector) -> Result<Matrix> {
    let hidden = gelu(&t.matmul(&projector.w1)?.add_row_broadcast(&projector.b1)?);
    hidden.matmul(&projector.w2)?.add_row_broadcast(&projector.b2)
}

#[derive(Clone, Debug)]
pub struct DecodeOutput {
    /// One row per sequence position.
    pub logits: Matrix,
    pub layers: Vec<LayerReport>,
}

fn histogram(counts: &[usize]) -> Vec<(usize, usize)> {
    let mut h: std::collections::BTreeMap<usize, usize> = Default::default();
    for &c in counts {
        *h.entry(c).or_default() += 1;
    }
    h.into_iter().collect()
}

fn mean_text_image_mass(weights: &Matrix, layout: SequenceLayout, skip: Option<&[Vec<usize>]>) -> f64 {
    if layout.n_text == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for t in 0..layout.n_text {
        let row = weights.row(layout.n_image + t);
        let mut mass: f64 = row[..layout.n_image].iter().sum();
        if let Some(skip) = skip {
            for &c in &skip[t] {
                mass -= row[c];
            }
        }
        total += mass;
    }
    total / layout.n_text as f64
}

/// Gamma per decoder layer; all zeros when inhibition is disabled.
pub fn gamma_schedule(cfg: &ModelConfig) -> Vec<f64> {
    if cfg.cmai.enabled {
        linear_gamma_schedule(cfg.llm_depth, cfg.cmai.gamma_max)
    } else {
        vec![0.0; cfg.llm_depth]
    }
}

/// Runs the decoder over projected visual tokens followed by text tokens.
pub fn decode(visual: &Matrix, text_ids: &[usize], weights: &Weights, cfg: &ModelConfig) -> Result<DecodeOutput> {
    let d = weights.token_embed.cols();
    if visual.cols() != d {
        return Err(shape_err(format!("visual tokens have {} features, decoder uses {d}", visual.cols())));
    }
    if text_ids.len() > cfg.max_text_len {
        return Err(shape_err(format!(
            "{} text tokens exceed max_text_len {}",
            text_ids.len(),
            cfg.max_text_len
        )));
    }
    if let Some(&bad) = text_ids.iter().find(|&&id| id >= weights.token_embed.rows()) {
        return Err(shape_err(format!("token id {bad} outside vocabulary")));
    }
    let layout = SequenceLayout {
        n_image: visual.rows(),
        n_text: text_ids.len(),
    };
    let seq = layout.len();
    if seq > weights.decoder_pos.rows() {
        return Err(shape_err(format!(
            "sequence of {seq} exceeds {} decoder positions",
            weights.decoder_pos.rows()
        )));
    }
    let text = weights.token_embed.select_rows(text_ids);
    let positions = weights.decoder_pos.slice(0..seq, 0..d);
    let mut x = Matrix::vstack(&[visual, &text])?.add(&positions)?;
    let base = causal_mask(seq);
    let gammas = gamma_schedule(cfg);

    let mut layers = Vec::with_capacity(weights.decoder.len());
    for (l, block) in weights.decoder.iter().enumerate() {
        let gamma = gammas.get(l).copied().unwrap_or(0.0);
        if cfg.cmai.enabled {
            let out = cmai_layer(
                &x,
                block,
                &base,
                layout,
                CmaiSettings {
                    gamma,
                    mode: cfg.cmai.mode,
                    discount: cfg.cmai.discount,
                    basis: cfg.cmai.focus_basis,
                    literal: cfg.literal_equations,
                },
            )?;
            let counts: Vec<usize> = out.inhibition.positions.iter().map(Vec::len).collect();
            let scoring = &out.scoring_record.averaged_weights;
            layers.push(LayerReport {
                layer: l,
                gamma,
                mean_inhibited: mean_usize(&counts),
                inhibited_count_histogram: histogram(&counts),
                image_mass_before: mean_text_image_mass(scoring, layout, None),
                image_mass_after: mean_text_image_mass(scoring, layout, Some(&out.inhibition.positions)),
                image_mass_recomputed: mean_text_image_mass(&out.record.averaged_weights, layout, None),
            });
            x = out.output;
        } else {
            let (next, record) = transformer_block(&x, block, &base, cfg.literal_equations)?;
            let mass = mean_text_image_mass(&record.averaged_weights, layout, None);
            let counts = vec![0; layout.n_text];
            layers.push(LayerReport {
                layer: l,
                gamma,
                mean_inhibited: 0.0,
                inhibited_count_histogram: histogram(&counts),
                image_mass_before: mass,
                image_mass_after: mass,
                image_mass_recomputed: mass,
            });
            x = next;
        }
    }
    let logits = x.matmul(&weights.lm_head)?.add_row_broadcast(&weights.lm_head_bias)?;
    Ok(DecodeOutput { logits, layers })
}

fn mean_usize(v: &[usize]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<usize>() as f64 / v.len() as f64
    }
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding without a cache: every step re-runs the full sequence.
pub fn generate_greedy(
    visual: &Matrix,
    prompt_ids: &[usize],
    steps: usize,
    weights: &Weights,
    cfg: &ModelConfig,
) -> Result<Vec<usize>> {
    let mut ids = prompt_ids.to_vec();
    let mut generated = Vec::with_capacity(steps);
    for _ in 0..steps {
        let out = decode(visual, &ids, weights, cfg)?;
        if out.logits.rows() == 0 {
            return Err(shape_err("nothing to decode from"));
        }
        let next = argmax(out.logits.row(out.logits.rows() - 1));
        ids.push(next);
        generated.push(next);
    }
    Ok(generated)
}

/// Deterministic stand-in image: `n_patches × patch_dim` standard normals.
pub fn synthesize_patches(cfg: &ModelConfig) -> Matrix {
    let mut rng = Rng::new(cfg.seed ^ 0x5EED_1A6E);
    gaussian_init(&mut rng, cfg.n_patches, cfg.patch_dim, 1.0)
}

/// The configured prompt, or `prompt_len` ids drawn from the seed.
pub fn prompt_ids(cfg: &ModelConfig) -> Vec<usize> {
    if !cfg.input.prompt_ids.is_empty() {
        return cfg.input.prompt_ids.clone();
    }
    let mut rng = Rng::new(cfg.seed ^ 0x7E47);
    (0..cfg.input.prompt_len)
        .map(|_| rng.next_below(cfg.vocab_size))
        .collect()
}

/// Encode, project, decode and optionally generate; collects a [`RunReport`].
pub fn run_pipeline(
    cfg: &ModelConfig,
    weights: &Weights,
    patches: &Matrix,
    text_ids: &[usize],
) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let encoded = encode_image(patches, weights, cfg)?;
    let visual = project(&encoded.tokens, &weights.projector)?;
    let decoded = decode(&visual, text_ids, weights, cfg)?;
    let generated_ids = if cfg.input.generate_steps > 0 {
        generate_greedy(&visual, text_ids, cfg.input.generate_steps, weights, cfg)?
    } else {
        Vec::new()
    };
    Ok(RunReport {
        config: cfg.clone(),
        seed: cfg.seed,
        final_visual_token_count: encoded.tokens.rows(),
        token_count_per_stage: encoded.token_counts,
        prompt_ids: text_ids.to_vec(),
        layers: decoded.layers,
        logits_shape: decoded.logits.shape(),
        logits_digest: format!("{:016x}", digest_f64(decoded.logits.data())),
        generated_ids,
        wall_clock: started.elapsed(),
    })
}

/// Validates, then runs with seeded weights and synthesized inputs.
pub fn run_with_synthetic_inputs(cfg: &ModelConfig, weights: Option<&Weights>) -> Result<RunReport> {
    cfg.validate()?;
    let owned;
    let weights = match weights {
        Some(w) => w,
        None => {
            owned = init_weights(cfg);
            &owned
        }
    };
    run_pipeline(cfg, weights, &synthesize_patches(cfg), &prompt_ids(cfg))
}
