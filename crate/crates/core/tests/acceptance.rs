//! Acceptance suite. One PASS/FAIL line per criterion; exits nonzero if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mmredux::cmai::{focus_score, neighborhood_focus, neighborhood_mask};
use mmredux::linalg::{gaussian_init, Matrix, Rng};
use mmredux::oracle::{kmeans_quality, run_suite, ProductionOps, Suite};
use mmredux::pipeline::{
    decode, encode_image, init_weights, load_weights, project, prompt_ids, run_with_synthetic_inputs,
    save_weights, synthesize_patches, ModelConfig,
};
use mmredux::vmtc::{merge_clusters, spatial_downsample, ClusterAssignment, ImportanceScores};

type Verdict = Result<String, String>;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mmredux")
}

fn default_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn oracle_agreement() -> Verdict {
    let ops = ProductionOps::default();
    let mut notes = Vec::new();
    for suite in [Suite::Attention, Suite::N2i, Suite::Merge, Suite::Quantile] {
        for o in run_suite(suite, &ops) {
            check(o.cases >= 50, format!("{} ran only {} cases", o.suite.name(), o.cases))?;
            check(o.passed(), format!("{o}"))?;
            notes.push(format!("{}: {} cases, max dev {:.1e}", o.suite.name(), o.cases, o.max_deviation));
        }
    }
    let full = Instant::now();
    let all = run_suite(Suite::All, &ops);
    let full_time = full.elapsed();
    check(all.iter().all(|o| o.passed()), "full suite has a failure")?;
    check(
        full_time < Duration::from_secs(30),
        format!("full suite took {full_time:?}"),
    )?;
    notes.push(format!("full suite {:.2}s", full_time.as_secs_f64()));
    Ok(notes.join("; "))
}

fn noop_equivalence() -> Verdict {
    for seed in 0..10u64 {
        let mut on = ModelConfig {
            seed,
            n_patches: [16, 36, 64][seed as usize % 3],
            literal_equations: seed % 4 == 3,
            ..ModelConfig::default()
        };
        on.cmai.enabled = true;
        on.cmai.gamma_max = 0.0;
        let mut off = on.clone();
        off.cmai.enabled = false;

        let w = init_weights(&on);
        let patches = synthesize_patches(&on);
        let ids = prompt_ids(&on);
        let visual = project(&encode_image(&patches, &w, &on).map_err(|e| e.to_string())?.tokens, &w.projector)
            .map_err(|e| e.to_string())?;
        let a = decode(&visual, &ids, &w, &on).map_err(|e| e.to_string())?;
        let b = decode(&visual, &ids, &w, &off).map_err(|e| e.to_string())?;
        check(a.logits.bit_eq(&b.logits), format!("seed {seed}: logits differ"))?;

        let ra = run_with_synthetic_inputs(&on, None).map_err(|e| e.to_string())?;
        let rb = run_with_synthetic_inputs(&off, None).map_err(|e| e.to_string())?;
        check(
            ra.logits_digest == rb.logits_digest && ra.generated_ids == rb.generated_ids,
            format!("seed {seed}: reports differ"),
        )?;
    }
    Ok("10 configs bit-identical".into())
}

fn inhibition_counts() -> Verdict {
    let mut rows = 0usize;
    for gamma_max in [0.0, 0.2, 0.4, 0.6] {
        let mut cfg = ModelConfig::default();
        cfg.cmai.gamma_max = gamma_max;
        let r = run_with_synthetic_inputs(&cfg, None).map_err(|e| e.to_string())?;
        let n_image = r.final_visual_token_count;
        let n_text = r.prompt_ids.len();
        check(r.layers.len() == cfg.llm_depth, "missing layer reports")?;
        for l in &r.layers {
            let expected = ((l.gamma * n_image as f64).floor() as usize).min(n_image - 1);
            let total: usize = l.inhibited_count_histogram.iter().map(|h| h.1).sum();
            check(total == n_text, format!("layer {} covers {total} of {n_text} rows", l.layer))?;
            for &(count, _) in &l.inhibited_count_histogram {
                check(
                    count == expected,
                    format!("γ_max {gamma_max} layer {}: {count} inhibited, expected {expected}", l.layer),
                )?;
            }
            rows += total;
        }
    }
    Ok(format!("{rows} rows exact"))
}

fn compression_arithmetic() -> Verdict {
    let cfg = ModelConfig {
        n_patches: 576,
        ..ModelConfig::default()
    };
    let w = init_weights(&cfg);
    let out = encode_image(&synthesize_patches(&cfg), &w, &cfg).map_err(|e| e.to_string())?;
    let expected: Vec<usize> = (0..=3)
        .map(|t| (576.0 * 0.5f64.powf(t as f64 / 3.0)).round() as usize)
        .collect();
    check(out.token_counts == expected, format!("counts {:?}, expected {expected:?}", out.token_counts))?;
    check(out.token_counts == [576, 457, 363, 288], format!("counts {:?}", out.token_counts))?;
    check(out.tokens.rows() == 288, format!("{} final tokens", out.tokens.rows()))?;
    check(out.stages.len() == 3, "three stages expected")?;
    for s in &out.stages {
        check(s.input.row(0) == s.output.row(0), format!("[CLS] altered at layer {}", s.layer))?;
        let bits = |r: &[f64]| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        check(bits(s.input.row(0)) == bits(s.output.row(0)), "[CLS] bits differ")?;
        for (i, &p) in s.partition.primary.iter().enumerate() {
            check(
                bits(s.input.row(p + 1)) == bits(s.output.row(i + 1)),
                format!("primary token {p} altered at layer {}", s.layer),
            )?;
        }
        check(s.output.rows() == s.plan.output + 1, "stage size mismatch")?;
    }
    Ok("576 → 457 → 363 → 288, pass-through bit-exact".into())
}

fn unit_identities() -> Verdict {
    let mut rng = Rng::new(0x1D);
    for m in 1..12 {
        let a = gaussian_init(&mut rng, m, m, 1.0);
        let n = neighborhood_mask(&a).map_err(|e| e.to_string())?;
        for j in 0..m {
            for k in 0..m {
                let want = if k < j { a.get(j, k) } else { 0.0 };
                check(n.get(j, k).to_bits() == want.to_bits(), format!("mask entry ({j},{k})"))?;
            }
        }

        let t2i = gaussian_init(&mut rng, m, 7, 1.0).map(f64::abs);
        let n2i = neighborhood_focus(&Matrix::zeros(m, m), &t2i).map_err(|e| e.to_string())?;
        let f = focus_score(&n2i, &t2i).map_err(|e| e.to_string())?;
        check(f.0.bit_eq(&t2i), "F differs from A_t2i with zero neighbor block")?;

        let tokens = gaussian_init(&mut rng, 9, 5, 1.0);
        let ips = ImportanceScores((0..9).map(|_| rng.next_f64()).collect());
        let j = rng.next_below(9);
        let assignment = ClusterAssignment {
            n_clusters: 1,
            labels: vec![0],
            centroids: Matrix::zeros(1, 5),
            objective_trace: Vec::new(),
        };
        let merged = merge_clusters(&tokens, &[j], &assignment, &ips, false).map_err(|e| e.to_string())?;
        for c in 0..5 {
            let want = ips.0[j] * tokens.get(j, c);
            check(merged.get(0, c).to_bits() == want.to_bits(), "single-member merge differs")?;
        }
    }
    Ok("all exact over 11 sizes".into())
}

fn kmeans_quality_check() -> Verdict {
    let q = kmeans_quality(&ProductionOps::default(), 50);
    let msg = format!(
        "{}/{} within 5%, {}/{} monotone, worst ratio {:.4}",
        q.within_factor, q.instances, q.monotone, q.instances, q.worst_ratio
    );
    check(q.instances == 50 && q.passes(), msg.clone())?;
    Ok(msg)
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = default_config_path();
    let mut reports = Vec::new();
    for name in ["a.json", "b.json"] {
        let path = dir.path().join(name);
        let status = Command::new(bin())
            .args(["run", "--config"])
            .arg(&cfg)
            .args(["--seed", "7", "--report"])
            .arg(&path)
            .status()
            .map_err(|e| e.to_string())?;
        check(status.success(), format!("run exited with {status}"))?;
        reports.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    check(!reports[0].is_empty() && reports[0] == reports[1], "reports differ")?;

    let model = ModelConfig {
        seed: 7,
        ..ModelConfig::default()
    };
    let w = init_weights(&model);
    let path = dir.path().join("w.bin");
    save_weights(&w, &path).map_err(|e| e.to_string())?;
    let back = load_weights(&path).map_err(|e| e.to_string())?;
    let (ta, tb) = (w.to_tensors(), back.to_tensors());
    check(ta.len() == tb.len(), "tensor count differs")?;
    for (a, b) in ta.iter().zip(&tb) {
        let same = a.name == b.name
            && a.dims == b.dims
            && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
            && a.data.len() == b.data.len();
        check(same, format!("tensor {} differs after reload", a.name))?;
    }
    Ok(format!("{} report bytes identical, {} tensors round-trip", reports[0].len(), ta.len()))
}

fn spd_baseline() -> Verdict {
    let mut rng = Rng::new(24);
    let tokens = gaussian_init(&mut rng, 576, 8, 1.0);
    let out = spatial_downsample(&tokens, 24, 2).map_err(|e| e.to_string())?;
    check(out.shape() == (144, 8), format!("shape {:?}", out.shape()))?;
    for by in 0..12 {
        for bx in 0..12 {
            for c in 0..8 {
                let at = |y: usize, x: usize| tokens.get(y * 24 + x, c);
                let (y, x) = (2 * by, 2 * bx);
                let mean = (at(y, x) + at(y, x + 1) + at(y + 1, x) + at(y + 1, x + 1)) / 4.0;
                check(out.get(by * 12 + bx, c).to_bits() == mean.to_bits(), format!("block ({by},{bx})"))?;
            }
        }
    }
    Ok("144 tokens equal block means".into())
}

fn runtime_budget() -> Verdict {
    let started = Instant::now();
    let out = Command::new(bin())
        .args(["run", "--config"])
        .arg(default_config_path())
        .output()
        .map_err(|e| e.to_string())?;
    let run_time = started.elapsed();
    check(out.status.success(), format!("run exited with {}", out.status))?;
    check(run_time < Duration::from_secs(10), format!("run took {run_time:?}"))?;

    let started = Instant::now();
    let out = Command::new(bin())
        .args(["oracle", "--suite", "all"])
        .output()
        .map_err(|e| e.to_string())?;
    let oracle_time = started.elapsed();
    check(out.status.success(), format!("oracle exited with {}", out.status))?;
    check(oracle_time < Duration::from_secs(60), format!("oracle took {oracle_time:?}"))?;
    Ok(format!(
        "run {:.2}s, oracle {:.2}s",
        run_time.as_secs_f64(),
        oracle_time.as_secs_f64()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("1 oracle agreement", oracle_agreement),
        ("2 no-op inhibition equivalence", noop_equivalence),
        ("3 inhibition count exactness", inhibition_counts),
        ("4 compression arithmetic", compression_arithmetic),
        ("5 unit identities", unit_identities),
        ("6 k-means quality", kmeans_quality_check),
        ("7 determinism", determinism),
        ("8 spatial down-sampling baseline", spd_baseline),
        ("9 runtime budget", runtime_budget),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
