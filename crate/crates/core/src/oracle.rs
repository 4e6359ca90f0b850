//! Brute-force reference implementations and the agreement suites that pit
//! them against the production operations.
//!
//! Nothing here calls into the production code it checks: attention is
//! written with explicit loops, the quantile selection with a full sort, the
//! clustering optimum by enumerating every partition.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::attention::{multi_head_self_attention, AttentionParams};
use crate::cmai::{inhibition_positions, neighborhood_focus, FocusScore, InhibitionPositions};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_init, Matrix, MaskMatrix, Rng, NEG_INF};
use crate::vmtc::{merge_clusters, spherical_kmeans, ClusterAssignment, ImportanceScores};

/// Explicit-loop multi-head attention; mask entries equal to [`NEG_INF`] are
/// skipped outright.
pub fn naive_attention(x: &Matrix, params: &AttentionParams, mask: &MaskMatrix) -> Matrix {
    let seq = x.rows();
    let d = x.cols();
    let heads = params.n_heads;
    let dh = d / heads;
    let project = |w: &Matrix| {
        let mut out = vec![vec![0.0; d]; seq];
        for i in 0..seq {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += x.get(i, k) * w.get(k, j);
                }
                out[i][j] = s;
            }
        }
        out
    };
    let (q, k, v) = (project(&params.w_q), project(&params.w_k), project(&params.w_v));
    let mut concat = vec![vec![0.0; d]; seq];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..seq {
            let mut logits = vec![f64::NEG_INFINITY; seq];
            for j in 0..seq {
                if mask.as_matrix().get(i, j) == NEG_INF {
                    continue;
                }
                let mut s = 0.0;
                for t in 0..dh {
                    s += q[i][off + t] * k[j][off + t];
                }
                logits[j] = s / (dh as f64).sqrt();
            }
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits
                .iter()
                .map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { (l - top).exp() })
                .collect();
            let z: f64 = exps.iter().sum();
            for t in 0..dh {
                let mut acc = 0.0;
                for j in 0..seq {
                    acc += exps[j] / z * v[j][off + t];
                }
                concat[i][off + t] = acc;
            }
        }
    }
    let mut out = Matrix::zeros(seq, d);
    for i in 0..seq {
        for j in 0..d {
            let mut s = 0.0;
            for t in 0..d {
                s += concat[i][t] * params.w_o.get(t, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

/// Triple-loop neighborhood aggregation `Σ_h A_t2n[j][h]·A_t2i[h][k]`.
pub fn naive_n2i(a_t2n: &Matrix, a_t2i: &Matrix) -> Matrix {
    let (m, n) = (a_t2i.rows(), a_t2i.cols());
    let mut out = Matrix::zeros(a_t2n.rows(), n);
    for j in 0..a_t2n.rows() {
        for k in 0..n {
            let mut s = 0.0;
            for h in 0..m {
                s += a_t2n.get(j, h) * a_t2i.get(h, k);
            }
            out.set(j, k, s);
        }
    }
    out
}

/// Sorts `(value, index)` pairs and takes the first `min(⌊γ·n⌋, n−1)`.
pub fn naive_quantile_select(row: &[f64], gamma: f64) -> Vec<usize> {
    let n = row.len();
    if n == 0 {
        return Vec::new();
    }
    let take = ((gamma * n as f64).floor() as usize).min(n - 1);
    let mut pairs: Vec<(f64, usize)> = row.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = pairs[..take].iter().map(|p| p.1).collect();
    picked.sort();
    picked
}

/// Per-cluster scalar loop of the unnormalized importance-weighted sum.
pub fn naive_merge(
    tokens: &Matrix,
    redundant: &[usize],
    labels: &[usize],
    n_clusters: usize,
    ips: &[f64],
) -> Matrix {
    let mut out = Matrix::zeros(n_clusters, tokens.cols());
    for c in 0..n_clusters {
        for col in 0..tokens.cols() {
            let mut s = 0.0;
            for (p, &j) in redundant.iter().enumerate() {
                if labels[p] == c {
                    s += ips[j] * tokens.get(j, col);
                }
            }
            out.set(c, col, s);
        }
    }
    out
}

/// Globally optimal clustering into at most `c` groups, by enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExhaustiveOptimum {
    pub labels: Vec<usize>,
    pub objective: f64,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// `Σ 1 − cos(token, normalized group mean)` over unit-normalized tokens.
pub fn partition_objective(units: &[Vec<f64>], labels: &[usize]) -> f64 {
    let groups = labels.iter().max().map_or(0, |m| m + 1);
    let d = units.first().map_or(0, Vec::len);
    let mut total = 0.0;
    for g in 0..groups {
        let mut mean = vec![0.0; d];
        let mut members = Vec::new();
        for (i, u) in units.iter().enumerate() {
            if labels[i] == g {
                members.push(i);
                for t in 0..d {
                    mean[t] += u[t];
                }
            }
        }
        if members.is_empty() {
            continue;
        }
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        for &i in &members {
            let cos = if norm == 0.0 {
                0.0
            } else {
                units[i].iter().zip(&mean).map(|(a, b)| a * b).sum::<f64>() / norm
            };
            total += 1.0 - cos;
        }
    }
    total
}

/// Enumerates restricted-growth label strings; practical for `r ≤ 10`.
pub fn exhaustive_kmeans(tokens: &Matrix, c: usize) -> ExhaustiveOptimum {
    let r = tokens.rows();
    let units: Vec<Vec<f64>> = (0..r).map(|i| unit(tokens.row(i))).collect();
    if r <= c {
        let labels: Vec<usize> = (0..r).collect();
        let objective = partition_objective(&units, &labels);
        return ExhaustiveOptimum { labels, objective };
    }
    let mut best = ExhaustiveOptimum {
        labels: vec![0; r],
        objective: f64::INFINITY,
    };
    let mut labels = vec![0usize; r];
    fn recurse(
        i: usize,
        used: usize,
        c: usize,
        labels: &mut Vec<usize>,
        units: &[Vec<f64>],
        best: &mut ExhaustiveOptimum,
    ) {
        if i == labels.len() {
            let obj = partition_objective(units, labels);
            if obj < best.objective {
                best.objective = obj;
                best.labels = labels.clone();
            }
            return;
        }
        for g in 0..(used + 1).min(c) {
            labels[i] = g;
            recurse(i + 1, used.max(g + 1), c, labels, units, best);
        }
    }
    recurse(1, 1, c, &mut labels, &units, &mut best);
    best
}

/// Production entry points under test; swap one out to check that the
/// suites catch a regression.
#[derive(Clone, Copy)]
pub struct ProductionOps {
    pub attention: fn(&Matrix, &AttentionParams, &MaskMatrix) -> Result<Matrix>,
    pub n2i: fn(&Matrix, &Matrix) -> Result<Matrix>,
    pub quantile: fn(&FocusScore, f64) -> Result<InhibitionPositions>,
    pub merge: fn(&Matrix, &[usize], &ClusterAssignment, &ImportanceScores, bool) -> Result<Matrix>,
    pub kmeans: fn(&Matrix, usize, &mut Rng, usize, f64) -> Result<ClusterAssignment>,
}

fn attention_output(x: &Matrix, p: &AttentionParams, m: &MaskMatrix) -> Result<Matrix> {
    multi_head_self_attention(x, p, m).map(|(out, _)| out)
}

impl Default for ProductionOps {
    fn default() -> Self {
        Self {
            attention: attention_output,
            n2i: neighborhood_focus,
            quantile: inhibition_positions,
            merge: merge_clusters,
            kmeans: spherical_kmeans,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Attention,
    N2i,
    Quantile,
    Kmeans,
    Merge,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "attention" => Suite::Attention,
            "n2i" => Suite::N2i,
            "quantile" => Suite::Quantile,
            "kmeans" => Suite::Kmeans,
            "merge" => Suite::Merge,
            "all" => Suite::All,
            other => return Err(Error::InvalidMode(format!("unknown oracle suite `{other}`"))),
        })
    }
}

impl Suite {
    fn expand(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![Suite::Attention, Suite::N2i, Suite::Quantile, Suite::Kmeans, Suite::Merge],
            s => vec![s],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Attention => "attention",
            Suite::N2i => "n2i",
            Suite::Quantile => "quantile",
            Suite::Kmeans => "kmeans",
            Suite::Merge => "merge",
            Suite::All => "all",
        }
    }
}

pub const ATTENTION_TOL: f64 = 1e-9;
pub const N2I_TOL: f64 = 1e-12;
pub const MERGE_TOL: f64 = 1e-12;
/// k-means objective may exceed the enumerated optimum by at most this factor...
pub const KMEANS_QUALITY_FACTOR: f64 = 1.05;
/// ...on at least this fraction of instances.
pub const KMEANS_QUALITY_SHARE: f64 = 0.9;

#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub cases: usize,
    pub failures: usize,
    /// Largest deviation seen; its meaning depends on the suite.
    pub max_deviation: f64,
    pub note: String,
    pub elapsed: Duration,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for SuiteOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<10} {:<4} cases={:<4} failures={:<3} max_dev={:.3e} {:>8.1}ms  {}",
            self.suite.name(),
            if self.passed() { "PASS" } else { "FAIL" },
            self.cases,
            self.failures,
            self.max_deviation,
            self.elapsed.as_secs_f64() * 1e3,
            self.note
        )
    }
}

pub fn run_suite(suite: Suite, ops: &ProductionOps) -> Vec<SuiteOutcome> {
    suite
        .expand()
        .into_iter()
        .map(|s| {
            let start = Instant::now();
            let mut out = match s {
                Suite::Attention => attention_suite(ops, 50),
                Suite::N2i => n2i_suite(ops, 50),
                Suite::Quantile => quantile_suite(ops, 100),
                Suite::Kmeans => kmeans_suite(ops, 50),
                Suite::Merge => merge_suite(ops, 50),
                Suite::All => unreachable!(),
            };
            out.elapsed = start.elapsed();
            out
        })
        .collect()
}

fn outcome(suite: Suite, cases: usize, failures: usize, max_deviation: f64, note: String) -> SuiteOutcome {
    SuiteOutcome {
        suite,
        cases,
        failures,
        max_deviation,
        note,
        elapsed: Duration::ZERO,
    }
}

fn random_mask(rng: &mut Rng, seq: usize) -> MaskMatrix {
    match rng.next_below(3) {
        0 => MaskMatrix::zeros(seq, seq),
        1 => MaskMatrix::causal(seq),
        _ => {
            let mut m = MaskMatrix::causal(seq);
            for i in 1..seq {
                for j in 0..i {
                    if rng.next_below(4) == 0 {
                        m.block(i, j);
                    }
                }
            }
            m
        }
    }
}

fn attention_suite(ops: &ProductionOps, cases: usize) -> SuiteOutcome {
    let mut rng = Rng::new(0xA77E);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let seq = 1 + rng.next_below(8);
        let heads = [1, 2, 4][rng.next_below(3)];
        let d = heads * (1 + rng.next_below(16 / heads));
        let x = gaussian_init(&mut rng, seq, d, 1.0);
        let params = AttentionParams {
            w_q: gaussian_init(&mut rng, d, d, 0.5),
            w_k: gaussian_init(&mut rng, d, d, 0.5),
            w_v: gaussian_init(&mut rng, d, d, 0.5),
            w_o: gaussian_init(&mut rng, d, d, 0.5),
            n_heads: heads,
        };
        let mask = random_mask(&mut rng, seq);
        let expect = naive_attention(&x, &params, &mask);
        match (ops.attention)(&x, &params, &mask) {
            Ok(got) => {
                let dev = got.max_abs_diff(&expect);
                worst = worst.max(dev);
                if !(dev <= ATTENTION_TOL) {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    outcome(Suite::Attention, cases, failures, worst, format!("tol {ATTENTION_TOL:e}"))
}

fn n2i_suite(ops: &ProductionOps, cases: usize) -> SuiteOutcome {
    let mut rng = Rng::new(0x0421);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let m = 1 + rng.next_below(12);
        let n = rng.next_below(16);
        let mut t2n = Matrix::zeros(m, m);
        for j in 0..m {
            for k in 0..j {
                t2n.set(j, k, rng.next_f64());
            }
        }
        let mut t2i = Matrix::zeros(m, n);
        for j in 0..m {
            for k in 0..n {
                t2i.set(j, k, rng.next_f64());
            }
        }
        let expect = naive_n2i(&t2n, &t2i);
        match (ops.n2i)(&t2n, &t2i) {
            Ok(got) if got.shape() == expect.shape() => {
                let dev = got.max_abs_diff(&expect);
                worst = worst.max(dev);
                if !(dev <= N2I_TOL) {
                    failures += 1;
                }
            }
            _ => failures += 1,
        }
    }
    outcome(Suite::N2i, cases, failures, worst, format!("tol {N2I_TOL:e}"))
}

fn quantile_suite(ops: &ProductionOps, cases: usize) -> SuiteOutcome {
    let mut rng = Rng::new(0x0A17);
    let mut failures = 0;
    for case in 0..cases {
        let n = 1 + rng.next_below(24);
        // every third row draws from four levels to exercise ties
        let row: Vec<f64> = (0..n)
            .map(|_| {
                if case % 3 == 0 {
                    rng.next_below(4) as f64 * 0.25
                } else {
                    rng.next_f64()
                }
            })
            .collect();
        let gamma = rng.next_f64() * 0.99;
        let expect = naive_quantile_select(&row, gamma);
        let focus = FocusScore(Matrix::row_vector(&row));
        match (ops.quantile)(&focus, gamma) {
            Ok(got) if got.len() == 1 && got[0] == expect => {}
            _ => failures += 1,
        }
    }
    outcome(Suite::Quantile, cases, failures, 0.0, "exact set equality".into())
}

fn merge_suite(ops: &ProductionOps, cases: usize) -> SuiteOutcome {
    let mut rng = Rng::new(0x3E26);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = 2 + rng.next_below(19);
        let d = 1 + rng.next_below(8);
        let tokens = gaussian_init(&mut rng, n, d, 1.0);
        let ips: Vec<f64> = (0..n).map(|_| rng.next_f64() / n as f64).collect();
        let mut redundant: Vec<usize> = (0..n).filter(|_| rng.next_below(3) > 0).collect();
        if redundant.is_empty() {
            redundant.push(rng.next_below(n));
        }
        let s = 1 + rng.next_below(redundant.len().min(5));
        // first s members seed the clusters so none is empty
        let labels: Vec<usize> = (0..redundant.len())
            .map(|p| if p < s { p } else { rng.next_below(s) })
            .collect();
        let assignment = ClusterAssignment {
            n_clusters: s,
            labels: labels.clone(),
            centroids: Matrix::zeros(s, d),
            objective_trace: Vec::new(),
        };
        let expect = naive_merge(&tokens, &redundant, &labels, s, &ips);
        match (ops.merge)(&tokens, &redundant, &assignment, &ImportanceScores(ips), false) {
            Ok(got) if got.shape() == expect.shape() => {
                let dev = got.max_abs_diff(&expect);
                worst = worst.max(dev);
                if !(dev <= MERGE_TOL) {
                    failures += 1;
                }
            }
            _ => failures += 1,
        }
    }
    outcome(Suite::Merge, cases, failures, worst, format!("tol {MERGE_TOL:e}"))
}

/// Clustered unit-ish vectors around `groups` random directions.
pub fn kmeans_instance(rng: &mut Rng, r: usize, d: usize, groups: usize, noise: f64) -> Matrix {
    let centers = gaussian_init(rng, groups, d, 1.0);
    let mut out = Matrix::zeros(r, d);
    for i in 0..r {
        let c = centers.row(i % groups);
        for j in 0..d {
            out.set(i, j, c[j] + noise * rng.next_normal());
        }
    }
    out
}

/// Result of the clustering quality check.
#[derive(Clone, Debug)]
pub struct KmeansQuality {
    pub instances: usize,
    pub within_factor: usize,
    pub monotone: usize,
    /// Largest `objective / optimum` ratio observed.
    pub worst_ratio: f64,
}

impl KmeansQuality {
    pub fn passes(&self) -> bool {
        self.monotone == self.instances
            && self.within_factor as f64 >= KMEANS_QUALITY_SHARE * self.instances as f64
    }
}

pub fn kmeans_quality(ops: &ProductionOps, instances: usize) -> KmeansQuality {
    let mut rng = Rng::new(0xC1A5);
    let mut q = KmeansQuality {
        instances,
        within_factor: 0,
        monotone: 0,
        worst_ratio: 1.0,
    };
    for case in 0..instances {
        let r = 3 + rng.next_below(8);
        let c = 2 + rng.next_below(3);
        let d = 2 + rng.next_below(5);
        let tokens = kmeans_instance(&mut rng, r, d, c, 0.35);
        let opt = exhaustive_kmeans(&tokens, c);
        let Ok(a) = (ops.kmeans)(&tokens, c, &mut Rng::new(case as u64), 50, 1e-6) else {
            continue;
        };
        let units: Vec<Vec<f64>> = (0..r).map(|i| unit(tokens.row(i))).collect();
        // score the returned partition with the oracle's own objective
        let obj = partition_objective(&units, &a.labels);
        if obj <= opt.objective * KMEANS_QUALITY_FACTOR + 1e-12 {
            q.within_factor += 1;
        }
        if opt.objective > 1e-12 {
            q.worst_ratio = q.worst_ratio.max(obj / opt.objective);
        }
        if a.objective_trace.windows(2).all(|w| w[1] <= w[0]) {
            q.monotone += 1;
        }
    }
    q
}

fn kmeans_suite(ops: &ProductionOps, instances: usize) -> SuiteOutcome {
    let q = kmeans_quality(ops, instances);
    let failures = usize::from(!q.passes());
    outcome(
        Suite::Kmeans,
        instances,
        failures,
        q.worst_ratio - 1.0,
        format!(
            "within {:.0}% on {}/{} (need {:.0}%), monotone {}/{}",
            (KMEANS_QUALITY_FACTOR - 1.0) * 100.0,
            q.within_factor,
            q.instances,
            KMEANS_QUALITY_SHARE * 100.0,
            q.monotone,
            q.instances
        ),
    )
}
