//! Command-line front end.
//!
//! Exit codes: 0 success, 1 oracle failure, 2 usage or config error,
//! 3 runtime error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::oracle::{run_suite, ProductionOps, Suite};
use crate::pipeline::{
    decode_tensors, init_weights, load_weights, run_with_synthetic_inputs, save_weights, write_atomic,
    ModelConfig, RunReport, Weights,
};
use crate::vmtc::CompressionStrategy;

pub const EXIT_OK: i32 = 0;
pub const EXIT_TEST_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mmredux", version, about = "Toy MLLM with visual token compression and attention inhibition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline once and write a canonical JSON report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Load weights from this file instead of initializing from the seed.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Run once per value of one config axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check production operations against the brute-force oracles.
    Oracle {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Create or describe a weights file.
    Weights {
        #[command(subcommand)]
        action: WeightsAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum WeightsAction {
    Init {
        path: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    Inspect {
        path: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SweepAxis {
    GammaMax,
    KeepRatio,
    SpdFactor,
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::GammaMax => "gamma_max",
            SweepAxis::KeepRatio => "keep_ratio",
            SweepAxis::SpdFactor => "spd_factor",
        }
    }

    fn apply(self, cfg: &mut ModelConfig, raw: &str) -> Result<(), String> {
        match self {
            SweepAxis::GammaMax => {
                cfg.cmai.enabled = true;
                cfg.cmai.gamma_max = raw.parse().map_err(|_| format!("`{raw}` is not a number"))?;
            }
            SweepAxis::KeepRatio => {
                cfg.vmtc.enabled = true;
                cfg.vmtc.strategy = CompressionStrategy::Layerwise;
                cfg.vmtc.target_keep_ratio = raw.parse().map_err(|_| format!("`{raw}` is not a number"))?;
            }
            SweepAxis::SpdFactor => {
                cfg.vmtc.enabled = true;
                cfg.vmtc.strategy = CompressionStrategy::Spatial;
                cfg.vmtc.spd_factor = raw.parse().map_err(|_| format!("`{raw}` is not an integer"))?;
            }
        }
        Ok(())
    }
}

/// Parses a TOML run config; unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<ModelConfig, String> {
    let cfg: ModelConfig = toml::from_str(text).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ModelConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Parses `args` (program name first) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(cli.command),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

pub fn dispatch(command: Command) -> i32 {
    match command {
        Command::Run {
            config,
            seed,
            report,
            weights,
        } => cmd_run(&config, seed, report.as_deref(), weights.as_deref()),
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => cmd_sweep(&config, axis, &values, &out),
        Command::Oracle { suite } => cmd_oracle(&suite),
        Command::Weights { action } => match action {
            WeightsAction::Init { path, config, seed } => cmd_weights_init(&path, config.as_deref(), seed),
            WeightsAction::Inspect { path } => cmd_weights_inspect(&path),
        },
    }
}

fn config_with_seed(path: &Path, seed: Option<u64>) -> Result<ModelConfig, i32> {
    let mut cfg = load_config(path).map_err(|e| {
        eprintln!("config error: {e}");
        EXIT_USAGE
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn runtime(e: Error) -> i32 {
    eprintln!("error: {e}");
    match e {
        Error::Config { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn load_optional_weights(path: Option<&Path>) -> Result<Option<Weights>, i32> {
    path.map(load_weights).transpose().map_err(runtime)
}

pub fn cmd_run(config: &Path, seed: Option<u64>, report: Option<&Path>, weights: Option<&Path>) -> i32 {
    let cfg = match config_with_seed(config, seed) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let weights = match load_optional_weights(weights) {
        Ok(w) => w,
        Err(code) => return code,
    };
    let result = match run_with_synthetic_inputs(&cfg, weights.as_ref()) {
        Ok(r) => r,
        Err(e) => return runtime(e),
    };
    eprintln!(
        "run finished in {:.3}s: {} visual tokens, logits digest {}",
        result.wall_clock.as_secs_f64(),
        result.final_visual_token_count,
        result.logits_digest
    );
    let json = result.to_canonical_json();
    match report {
        Some(path) => match write_atomic(path, json.as_bytes()) {
            Ok(()) => EXIT_OK,
            Err(e) => runtime(e),
        },
        None => {
            print!("{json}");
            EXIT_OK
        }
    }
}

fn summary_row(axis: SweepAxis, value: &str, r: &RunReport) -> String {
    let max_gamma = r.layers.iter().map(|l| l.gamma).fold(0.0, f64::max);
    let max_inhibited = r
        .layers
        .iter()
        .flat_map(|l| l.inhibited_count_histogram.iter().map(|h| h.0))
        .max()
        .unwrap_or(0);
    format!(
        "{},{},{},{:.6},{},{:.6},{}\n",
        axis.name(),
        value,
        r.final_visual_token_count,
        r.mean_inhibited(),
        max_inhibited,
        max_gamma,
        r.logits_digest
    )
}

pub const SUMMARY_HEADER: &str =
    "axis,value,final_visual_token_count,mean_inhibited,max_inhibited,max_gamma,logits_digest\n";

pub fn cmd_sweep(config: &Path, axis: SweepAxis, values: &str, out: &Path) -> i32 {
    let base = match config_with_seed(config, None) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        eprintln!("sweep needs at least one value");
        return EXIT_USAGE;
    }
    // Validate every point before anything is written.
    let mut configs = Vec::with_capacity(values.len());
    for v in &values {
        let mut cfg = base.clone();
        if let Err(msg) = axis.apply(&mut cfg, v) {
            eprintln!("bad value for {}: {msg}", axis.name());
            return EXIT_USAGE;
        }
        if let Err(e) = cfg.validate() {
            eprintln!("config error at {}={v}: {e}", axis.name());
            return EXIT_USAGE;
        }
        configs.push(cfg);
    }
    if let Err(e) = fs::create_dir_all(out) {
        return runtime(e.into());
    }
    let mut summary = String::from(SUMMARY_HEADER);
    for (v, cfg) in values.iter().zip(&configs) {
        let report = match run_with_synthetic_inputs(cfg, None) {
            Ok(r) => r,
            Err(e) => return runtime(e),
        };
        let path = out.join(format!("report_{}_{}.json", axis.name(), v));
        if let Err(e) = write_atomic(&path, report.to_canonical_json().as_bytes()) {
            return runtime(e);
        }
        summary.push_str(&summary_row(axis, v, &report));
    }
    match write_atomic(&out.join("summary.csv"), summary.as_bytes()) {
        Ok(()) => EXIT_OK,
        Err(e) => runtime(e),
    }
}

/// Runs oracle suites against `ops`; used directly by tests with perturbed ops.
pub fn cmd_oracle_with(suite: &str, ops: &ProductionOps) -> i32 {
    let suite: Suite = match suite.parse() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_USAGE;
        }
    };
    let outcomes = run_suite(suite, ops);
    let mut all_passed = true;
    for o in &outcomes {
        println!("{o}");
        all_passed &= o.passed();
    }
    if all_passed {
        EXIT_OK
    } else {
        EXIT_TEST_FAILURE
    }
}

pub fn cmd_oracle(suite: &str) -> i32 {
    cmd_oracle_with(suite, &ProductionOps::default())
}

pub fn cmd_weights_init(path: &Path, config: Option<&Path>, seed: Option<u64>) -> i32 {
    let mut cfg = match config {
        Some(c) => match config_with_seed(c, None) {
            Ok(c) => c,
            Err(code) => return code,
        },
        None => ModelConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    match save_weights(&init_weights(&cfg), path) {
        Ok(()) => EXIT_OK,
        Err(e) => runtime(e),
    }
}

pub fn describe_weights(bytes: &[u8]) -> Result<String, Error> {
    let tensors = decode_tensors(bytes)?;
    let mut out = String::new();
    let mut total = 0usize;
    for t in &tensors {
        let n: usize = t.dims.iter().product();
        total += n;
        writeln!(out, "{:<40} {:?}", t.name, t.dims).unwrap();
    }
    writeln!(out, "{} tensors, {} parameters", tensors.len(), total).unwrap();
    Ok(out)
}

pub fn cmd_weights_inspect(path: &Path) -> i32 {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) => return runtime(e.into()),
    };
    match describe_weights(&bytes) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => runtime(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_config("d_model = 64\nbogus = 1\n").unwrap_err();
        assert!(err.contains("bogus"), "{err}");
        let err = parse_config("[cmai]\ngama_max = 0.3\n").unwrap_err();
        assert!(err.contains("gama_max"), "{err}");
    }

    #[test]
    fn validation_error_names_field() {
        let err = parse_config("[cmai]\ngamma_max = 1.0\n").unwrap_err();
        assert!(err.contains("cmai.gamma_max"), "{err}");
    }

    #[test]
    fn comments_and_partial_configs() {
        let cfg = parse_config("# toy\nseed = 9 # inline\n[vmtc]\nnum_stages = 2\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.vmtc.num_stages, 2);
        assert_eq!(cfg.d_model, 64);
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run_cli(["mmredux", "frobnicate"]), EXIT_USAGE);
        assert_eq!(cmd_oracle("nope"), EXIT_USAGE);
    }
}
