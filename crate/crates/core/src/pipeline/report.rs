//! Run reports and their canonical JSON form.
//!
//! Canonical JSON: object keys sorted, no whitespace, integers verbatim, every
//! float written as `{:.16e}` (17 significant digits). Identical runs therefore
//! serialize to identical bytes.

use std::fmt::Write as _;
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::config::ModelConfig;

#[derive(Clone, Debug, Serialize)]
pub struct LayerReport {
    pub layer: usize,
    pub gamma: f64,
    /// `(inhibited columns, number of text rows)` pairs, ascending by count.
    pub inhibited_count_histogram: Vec<(usize, usize)>,
    pub mean_inhibited: f64,
    /// Mean over text rows of scoring-pass attention mass on image keys.
    pub image_mass_before: f64,
    /// Same mass with the inhibited entries removed, before renormalization.
    pub image_mass_after: f64,
    /// Mean over text rows of image mass in the inhibited (second) pass.
    pub image_mass_recomputed: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: ModelConfig,
    pub seed: u64,
    /// Patch-token count entering the encoder, then after each reduction.
    pub token_count_per_stage: Vec<usize>,
    pub final_visual_token_count: usize,
    pub prompt_ids: Vec<usize>,
    pub layers: Vec<LayerReport>,
    pub logits_shape: (usize, usize),
    /// FNV-1a 64 over the little-endian bytes of the logits, as hex.
    pub logits_digest: String,
    pub generated_ids: Vec<usize>,
    /// Not serialized: the canonical form must not depend on timing.
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl RunReport {
    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }

    /// Mean inhibited columns per text row, over all decoder layers.
    pub fn mean_inhibited(&self) -> f64 {
        if self.layers.is_empty() {
            return 0.0;
        }
        self.layers.iter().map(|l| l.mean_inhibited).sum::<f64>() / self.layers.len() as f64
    }
}

pub fn digest_f64(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("report values serialize");
    let mut out = String::new();
    write_value(&v, &mut out);
    out.push('\n');
    out
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_u64() {
                write!(out, "{i}").unwrap();
            } else if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else {
                out.push_str(&format_float(n.as_f64().unwrap()));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).unwrap()),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).unwrap());
                out.push(':');
                write_value(&map[k], out);
            }
            out.push('}');
        }
    }
}
