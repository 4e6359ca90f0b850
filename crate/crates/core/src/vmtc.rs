//! Visual token compression inside the encoder.
//!
//! Patch tokens are ranked by the attention they share with the `[CLS]` token.
//! The top `k` are kept verbatim; the rest are grouped by spherical k-means and
//! each group collapses into one importance-weighted token. Spatial
//! down-sampling and last-layer pruning are provided as baselines.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{dot, norm, top_rank_indices, Matrix, Rng};

/// Which side of the `[CLS]` attention pair is read as the importance score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpsDirection {
    /// Row 0: `[CLS]` as query, patches as keys.
    #[default]
    ClsQuery,
    /// Column 0: patches as queries, `[CLS]` as key.
    ClsKey,
}

/// How redundant tokens are folded back in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Spherical k-means groups, one merged token per group.
    #[default]
    Cluster,
    /// All redundant tokens merged into a single token.
    Single,
    /// Redundant tokens are discarded.
    Drop,
}

/// Where and how the encoder reduces its visual tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionStrategy {
    /// Scheduled compression between attention and MLP of several blocks.
    #[default]
    Layerwise,
    /// Prune once after the final block, no merging.
    LastLayer,
    /// Block-average the patch grid after the final block.
    Spatial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KmeansParams {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for KmeansParams {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VmtcConfig {
    pub enabled: bool,
    pub strategy: CompressionStrategy,
    pub target_keep_ratio: f64,
    pub num_stages: usize,
    pub clusters_per_stage: usize,
    pub merge: MergeMode,
    pub normalize_merge: bool,
    pub insertion_layers: Option<Vec<usize>>,
    pub ips_direction: IpsDirection,
    pub kmeans: KmeansParams,
    pub spd_factor: usize,
}

impl Default for VmtcConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            strategy: CompressionStrategy::Layerwise,
            target_keep_ratio: 0.5,
            num_stages: 3,
            clusters_per_stage: 4,
            merge: MergeMode::Cluster,
            normalize_merge: false,
            insertion_layers: None,
            ips_direction: IpsDirection::ClsQuery,
            kmeans: KmeansParams::default(),
            spd_factor: 2,
        }
    }
}

impl VmtcConfig {
    /// Merged tokens produced per stage under the configured merge mode.
    pub fn effective_clusters(&self) -> usize {
        match self.merge {
            MergeMode::Cluster => self.clusters_per_stage,
            MergeMode::Single => 1,
            MergeMode::Drop => 0,
        }
    }

    /// Encoder block indices hosting a compression stage. Explicit layers win;
    /// otherwise stage `t` sits at `floor(depth·(t+1)/(S+1))`.
    pub fn insertion_layers(&self, depth: usize) -> Result<Vec<usize>> {
        let layers = match &self.insertion_layers {
            Some(l) => l.clone(),
            None => (0..self.num_stages)
                .map(|t| depth * (t + 1) / (self.num_stages + 1))
                .collect(),
        };
        if layers.len() != self.num_stages {
            return Err(Error::InvalidSchedule(format!(
                "{} insertion layers for {} stages",
                layers.len(),
                self.num_stages
            )));
        }
        if layers.windows(2).any(|w| w[0] >= w[1]) || layers.iter().any(|&l| l >= depth) {
            return Err(Error::InvalidSchedule(format!(
                "insertion layers {layers:?} must be strictly increasing and below depth {depth}"
            )));
        }
        Ok(layers)
    }
}

/// One importance value per patch token (the `[CLS]` token excluded).
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceScores(pub Vec<f64>);

impl ImportanceScores {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenPartition {
    pub primary: Vec<usize>,
    pub redundant: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub n_clusters: usize,
    /// Cluster id for each input row.
    pub labels: Vec<usize>,
    /// Unit-norm centroid per cluster, one per row.
    pub centroids: Matrix,
    /// Objective `Σ 1 − cos(token, centroid)` after initialization and after
    /// every completed iteration.
    pub objective_trace: Vec<f64>,
}

pub fn importance_scores(a_w: &Matrix) -> Result<ImportanceScores> {
    importance_scores_with(a_w, IpsDirection::ClsQuery)
}

pub fn importance_scores_with(a_w: &Matrix, direction: IpsDirection) -> Result<ImportanceScores> {
    if a_w.rows() != a_w.cols() || a_w.rows() == 0 {
        return Err(shape_err(format!("attention map {:?} is not square", a_w.shape())));
    }
    let n = a_w.rows() - 1;
    let values = match direction {
        IpsDirection::ClsQuery => a_w.row(0)[1..].to_vec(),
        IpsDirection::ClsKey => (1..=n).map(|i| a_w.get(i, 0)).collect(),
    };
    Ok(ImportanceScores(values))
}

pub fn partition_tokens(ips: &ImportanceScores, k: usize) -> Result<TokenPartition> {
    let primary = top_rank_indices(ips.values(), k)?;
    let mut is_primary = vec![false; ips.len()];
    for &i in &primary {
        is_primary[i] = true;
    }
    let redundant = (0..ips.len()).filter(|&i| !is_primary[i]).collect();
    Ok(TokenPartition { primary, redundant })
}

fn unit_rows(tokens: &Matrix) -> Result<Vec<Vec<f64>>> {
    (0..tokens.rows())
        .map(|r| {
            let row = tokens.row(r);
            let n = norm(row);
            if n == 0.0 {
                Err(Error::ZeroVector)
            } else {
                Ok(row.iter().map(|v| v / n).collect())
            }
        })
        .collect()
}

fn objective(unit: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    unit.iter()
        .zip(labels)
        .fold(0.0, |acc, (u, &l)| acc + (1.0 - dot(u, &centroids[l])))
}

/// Nearest centroid by cosine; ties go to the lower cluster id.
fn assign(unit: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    unit.iter()
        .map(|u| {
            let mut best = 0;
            let mut best_sim = f64::NEG_INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let s = dot(u, centroid);
                if s > best_sim {
                    best_sim = s;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Gives every empty cluster the member farthest from its own centroid,
/// taken from a cluster that has at least two members.
fn repair_empty(unit: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let s = centroids.len();
    loop {
        let mut sizes = vec![0usize; s];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&n| n == 0) else {
            return;
        };
        let mut far = None;
        let mut far_dist = f64::NEG_INFINITY;
        for (i, u) in unit.iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = 1.0 - dot(u, &centroids[labels[i]]);
            if d > far_dist {
                far_dist = d;
                far = Some(i);
            }
        }
        let i = far.expect("more tokens than clusters");
        centroids[empty] = unit[i].clone();
        labels[i] = empty;
    }
}

/// Cosine distance from each unit row to its nearest chosen center.
fn nearest_distances(unit: &[Vec<f64>], centers: &[usize]) -> Vec<f64> {
    unit.iter()
        .map(|u| {
            let best = centers
                .iter()
                .map(|&c| dot(u, &unit[c]))
                .fold(f64::NEG_INFINITY, f64::max);
            // ‖u − v‖² = 2(1 − cos) on the unit sphere, so the cosine
            // distance itself plays the role of the squared distance.
            (1.0 - best).max(0.0)
        })
        .collect()
}

/// Index drawn with probability proportional to `weights` (all non-negative,
/// positive total).
fn sample_weighted(weights: &[f64], total: f64, rng: &mut Rng) -> usize {
    let target = rng.next_f64() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if *w > 0.0 && acc > target {
            return i;
        }
    }
    // Rounding can leave target at the very top of the range.
    weights.iter().rposition(|&w| w > 0.0).unwrap()
}

/// Greedy k-means++: each new center is the best of `2 + ⌊ln s⌋` candidates
/// drawn by distance weight, judged by the resulting total distance.
fn kmeans_pp_init(unit: &[Vec<f64>], s: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let r = unit.len();
    let trials = 2 + (s as f64).ln().floor() as usize;
    let mut chosen = vec![rng.next_below(r)];
    let mut dist = nearest_distances(unit, &chosen);
    while chosen.len() < s {
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            chosen.push((0..r).find(|i| !chosen.contains(i)).unwrap());
            dist = nearest_distances(unit, &chosen);
            continue;
        }
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = sample_weighted(&dist, total, rng);
            let next: Vec<f64> = unit
                .iter()
                .zip(&dist)
                .map(|(u, &d)| d.min((1.0 - dot(u, &unit[cand])).max(0.0)))
                .collect();
            let potential: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, cand, next));
            }
        }
        let (_, cand, next) = best.unwrap();
        chosen.push(cand);
        dist = next;
    }
    chosen.into_iter().map(|i| unit[i].clone()).collect()
}

fn normalized_means(unit: &[Vec<f64>], labels: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = unit[0].len();
    let mut sums = vec![vec![0.0; d]; previous.len()];
    for (u, &l) in unit.iter().zip(labels) {
        for (s, v) in sums[l].iter_mut().zip(u) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(previous)
        .map(|(sum, prev)| {
            let n = norm(&sum);
            if n == 0.0 {
                prev.clone()
            } else {
                sum.iter().map(|v| v / n).collect()
            }
        })
        .collect()
}

/// Relabels clusters so ids ascend with each cluster's smallest member index.
fn canonicalize(labels: &mut [usize], centroids: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut remap = vec![usize::MAX; centroids.len()];
    let mut order = Vec::with_capacity(centroids.len());
    for l in labels.iter() {
        if remap[*l] == usize::MAX {
            remap[*l] = order.len();
            order.push(*l);
        }
    }
    for l in labels.iter_mut() {
        *l = remap[*l];
    }
    order.into_iter().map(|old| centroids[old].clone()).collect()
}

fn to_matrix(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows)
}

/// Spherical k-means with seeded k-means++ initialization on cosine distance.
///
/// With `r ≤ c` rows every token becomes its own cluster. Otherwise iterates
/// assign / re-center until the largest centroid move drops below `tol` or
/// `max_iter` is reached. An update that would raise the objective (possible
/// only through rounding) ends the iteration with the previous state.
pub fn spherical_kmeans(
    tokens: &Matrix,
    c: usize,
    rng: &mut Rng,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterAssignment> {
    let r = tokens.rows();
    if r == 0 {
        return Err(shape_err("k-means over zero tokens"));
    }
    if c == 0 {
        return Err(Error::InvalidCount {
            requested: 0,
            available: r,
        });
    }
    let unit = unit_rows(tokens)?;
    if r <= c {
        let labels: Vec<usize> = (0..r).collect();
        let obj = objective(&unit, &labels, &unit);
        return Ok(ClusterAssignment {
            n_clusters: r,
            labels,
            centroids: to_matrix(&unit),
            objective_trace: vec![obj],
        });
    }

    let mut centroids = kmeans_pp_init(&unit, c, rng);
    let mut labels = assign(&unit, &centroids);
    repair_empty(&unit, &mut labels, &mut centroids);
    let mut current = objective(&unit, &labels, &centroids);
    let mut trace = vec![current];

    for _ in 0..max_iter {
        let updated = normalized_means(&unit, &labels, &centroids);
        if objective(&unit, &labels, &updated) > current {
            break;
        }
        let movement = updated
            .iter()
            .zip(&centroids)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let mut next_centroids = updated;
        let mut next_labels = assign(&unit, &next_centroids);
        repair_empty(&unit, &mut next_labels, &mut next_centroids);
        let next = objective(&unit, &next_labels, &next_centroids);
        if next > current {
            break;
        }
        centroids = next_centroids;
        labels = next_labels;
        current = next;
        trace.push(current);
        if movement < tol {
            break;
        }
    }

    let centroids = canonicalize(&mut labels, centroids);
    Ok(ClusterAssignment {
        n_clusters: c,
        labels,
        centroids: to_matrix(&centroids),
        objective_trace: trace,
    })
}

/// One row per cluster: `Σ_{j∈C} IPS(j)·token_j`, optionally divided by
/// `Σ_{j∈C} IPS(j)` (plain mean when that sum is below 1e-12).
///
/// `assignment.labels[p]` is the cluster of token `redundant[p]`.
pub fn merge_clusters(
    tokens: &Matrix,
    redundant: &[usize],
    assignment: &ClusterAssignment,
    ips: &ImportanceScores,
    normalize: bool,
) -> Result<Matrix> {
    if assignment.labels.len() != redundant.len() {
        return Err(shape_err(format!(
            "{} labels for {} redundant tokens",
            assignment.labels.len(),
            redundant.len()
        )));
    }
    let d = tokens.cols();
    let s = assignment.n_clusters;
    let mut out = Matrix::zeros(s, d);
    let mut weight = vec![0.0; s];
    let mut count = vec![0usize; s];
    for (&j, &label) in redundant.iter().zip(&assignment.labels) {
        let w = ips.values()[j];
        weight[label] += w;
        count[label] += 1;
        for (o, &v) in out.row_mut(label).iter_mut().zip(tokens.row(j)) {
            *o += w * v;
        }
    }
    if normalize {
        for c in 0..s {
            if weight[c] >= 1e-12 {
                for o in out.row_mut(c) {
                    *o /= weight[c];
                }
            } else {
                let row = out.row_mut(c);
                row.fill(0.0);
                for (&j, &label) in redundant.iter().zip(&assignment.labels) {
                    if label != c {
                        continue;
                    }
                    for (o, &v) in row.iter_mut().zip(tokens.row(j)) {
                        *o += v;
                    }
                }
                for o in row {
                    *o /= count[c] as f64;
                }
            }
        }
    }
    Ok(out)
}

/// Result of one compression stage.
#[derive(Clone, Debug)]
pub struct CompressOutput {
    /// `[CLS]`, then primaries by ascending index, then merged rows.
    pub tokens: Matrix,
    pub partition: TokenPartition,
    pub ips: ImportanceScores,
    pub n_clusters: usize,
}

/// Keeps `[CLS]` and the `k` highest-importance patch tokens, merging the rest
/// into `min(c, n − k)` tokens per the merge mode.
pub fn compress(
    z_prime: &Matrix,
    a_w: &Matrix,
    k: usize,
    cfg: &VmtcConfig,
    rng: &mut Rng,
) -> Result<CompressOutput> {
    if z_prime.rows() == 0 || a_w.rows() != z_prime.rows() {
        return Err(shape_err(format!(
            "tokens {:?} vs attention {:?}",
            z_prime.shape(),
            a_w.shape()
        )));
    }
    let ips = importance_scores_with(a_w, cfg.ips_direction)?;
    let partition = partition_tokens(&ips, k)?;
    let n_red = partition.redundant.len();
    let s = cfg.effective_clusters().min(n_red);

    let patches = z_prime.slice(1..z_prime.rows(), 0..z_prime.cols());
    let cls = z_prime.select_rows(&[0]);
    let primary = patches.select_rows(&partition.primary);

    let merged = if s == 0 {
        Matrix::zeros(0, z_prime.cols())
    } else {
        let assignment = match cfg.merge {
            MergeMode::Cluster => {
                let red = patches.select_rows(&partition.redundant);
                spherical_kmeans(&red, s, rng, cfg.kmeans.max_iter, cfg.kmeans.tol)?
            }
            MergeMode::Single | MergeMode::Drop => ClusterAssignment {
                n_clusters: 1,
                labels: vec![0; n_red],
                centroids: Matrix::zeros(1, z_prime.cols()),
                objective_trace: Vec::new(),
            },
        };
        merge_clusters(&patches, &partition.redundant, &assignment, &ips, cfg.normalize_merge)?
    };

    Ok(CompressOutput {
        tokens: Matrix::vstack(&[&cls, &primary, &merged])?,
        n_clusters: merged.rows(),
        partition,
        ips,
    })
}

/// Planned sizes of one stage; all counts exclude `[CLS]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StagePlan {
    pub input: usize,
    pub keep: usize,
    pub clusters: usize,
    pub output: usize,
}

impl StagePlan {
    /// Stages with `output == input` leave the tokens untouched.
    pub fn is_identity(&self) -> bool {
        self.output == self.input
    }
}

/// Geometric per-stage schedule reaching `round(n0·ρ)` after the last stage.
pub fn schedule_stages(n0: usize, cfg: &VmtcConfig) -> Result<Vec<StagePlan>> {
    let rho = cfg.target_keep_ratio;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidSchedule(format!("keep ratio {rho} outside (0, 1]")));
    }
    if cfg.num_stages == 0 {
        return Err(Error::InvalidSchedule("zero stages".into()));
    }
    let per_stage = rho.powf(1.0 / cfg.num_stages as f64);
    let c = cfg.effective_clusters();
    let mut plans = Vec::with_capacity(cfg.num_stages);
    let mut prev = n0;
    for t in 0..cfg.num_stages {
        let out = if t + 1 == cfg.num_stages {
            (n0 as f64 * rho).round() as usize
        } else {
            (prev as f64 * per_stage).round() as usize
        };
        if out == 0 {
            return Err(Error::InvalidSchedule(format!(
                "stage {t} would leave no patch tokens ({n0} tokens, ratio {rho})"
            )));
        }
        if out > prev {
            return Err(Error::InvalidSchedule(format!("stage {t} grows {prev} to {out}")));
        }
        let clusters = if out == prev { 0 } else { c.min(out) };
        plans.push(StagePlan {
            input: prev,
            keep: out - clusters,
            clusters,
            output: out,
        });
        prev = out;
    }
    Ok(plans)
}

/// Averages each `factor × factor` block of a row-major `grid × grid` token map.
pub fn spatial_downsample(tokens: &Matrix, grid: usize, factor: usize) -> Result<Matrix> {
    if factor == 0 || grid % factor != 0 {
        return Err(Error::InvalidFactor { grid, factor });
    }
    if tokens.rows() != grid * grid {
        return Err(shape_err(format!(
            "{} tokens do not form a {grid}x{grid} grid",
            tokens.rows()
        )));
    }
    let out_side = grid / factor;
    let d = tokens.cols();
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = Matrix::zeros(out_side * out_side, d);
    for by in 0..out_side {
        for bx in 0..out_side {
            let row = out.row_mut(by * out_side + bx);
            for dy in 0..factor {
                for dx in 0..factor {
                    let src = tokens.row((by * factor + dy) * grid + bx * factor + dx);
                    for (o, v) in row.iter_mut().zip(src) {
                        *o += v;
                    }
                }
            }
            for o in row {
                *o *= inv;
            }
        }
    }
    Ok(out)
}

/// Keeps `[CLS]` plus the top `round(keep_ratio·n)` patch tokens by importance.
pub fn last_layer_prune(
    tokens: &Matrix,
    a_w: &Matrix,
    keep_ratio: f64,
    direction: IpsDirection,
) -> Result<Matrix> {
    if tokens.rows() == 0 || a_w.rows() != tokens.rows() {
        return Err(shape_err("token and attention counts differ"));
    }
    let ips = importance_scores_with(a_w, direction)?;
    let keep = (keep_ratio * ips.len() as f64).round() as usize;
    let primary = partition_tokens(&ips, keep)?.primary;
    let rows: Vec<usize> = std::iter::once(0).chain(primary.iter().map(|i| i + 1)).collect();
    Ok(tokens.select_rows(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_init;

    fn row_stochastic(rng: &mut Rng, n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for r in 0..n {
            let vals: Vec<f64> = (0..n).map(|_| rng.next_f64() + 1e-3).collect();
            let s: f64 = vals.iter().sum();
            for (c, v) in vals.iter().enumerate() {
                m.set(r, c, v / s);
            }
        }
        m
    }

    #[test]
    fn ips_read_off() {
        let mut a = Matrix::zeros(4, 4);
        a.row_mut(0).copy_from_slice(&[0.4, 0.3, 0.2, 0.1]);
        assert_eq!(importance_scores(&a).unwrap().0, vec![0.3, 0.2, 0.1]);
        let u = Matrix::filled(5, 5, 0.2);
        assert_eq!(importance_scores(&u).unwrap().0, vec![0.2; 4]);
        let mut col = Matrix::zeros(3, 3);
        col.set(1, 0, 0.7);
        col.set(2, 0, 0.1);
        assert_eq!(
            importance_scores_with(&col, IpsDirection::ClsKey).unwrap().0,
            vec![0.7, 0.1]
        );
    }

    #[test]
    fn ips_sum_is_one_minus_cls_self_weight() {
        let mut rng = Rng::new(4);
        for n in [2, 5, 17] {
            let a = row_stochastic(&mut rng, n);
            let ips = importance_scores(&a).unwrap();
            let total: f64 = ips.values().iter().sum();
            assert!((total - (1.0 - a.get(0, 0))).abs() < 1e-9);
        }
    }

    #[test]
    fn partition_examples() {
        let ips = ImportanceScores(vec![0.3, 0.2, 0.1]);
        let p = partition_tokens(&ips, 2).unwrap();
        assert_eq!((p.primary, p.redundant), (vec![0, 1], vec![2]));
        assert!(partition_tokens(&ips, 3).unwrap().redundant.is_empty());
        let tie = ImportanceScores(vec![0.2; 3]);
        assert_eq!(partition_tokens(&tie, 1).unwrap().primary, vec![0]);
    }

    #[test]
    fn kmeans_singletons_when_few_tokens() {
        let t = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let a = spherical_kmeans(&t, 2, &mut Rng::new(0), 50, 1e-6).unwrap();
        assert_eq!(a.n_clusters, 2);
        assert_eq!(a.labels, vec![0, 1]);
    }

    #[test]
    fn kmeans_separates_two_pairs() {
        let t = Matrix::from_rows(&[
            [1.0, 0.0],
            [0.995, 0.099_874_921_777_190_9],
            [0.0, 1.0],
            [0.099_874_921_777_190_9, 0.995],
        ]);
        for seed in 0..10 {
            let a = spherical_kmeans(&t, 2, &mut Rng::new(seed), 50, 1e-6).unwrap();
            assert_eq!(a.labels, vec![0, 0, 1, 1], "seed {seed}");
        }
    }

    #[test]
    fn kmeans_is_deterministic_and_unit_norm() {
        let t = gaussian_init(&mut Rng::new(9), 30, 6, 1.0);
        let a = spherical_kmeans(&t, 4, &mut Rng::new(77), 50, 1e-6).unwrap();
        let b = spherical_kmeans(&t, 4, &mut Rng::new(77), 50, 1e-6).unwrap();
        assert_eq!(a.labels, b.labels);
        assert!(a.centroids.bit_eq(&b.centroids));
        for c in 0..a.n_clusters {
            assert!((norm(a.centroids.row(c)) - 1.0).abs() < 1e-12);
            assert!(a.labels.contains(&c));
        }
        assert!(a.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        // ids ascend with first occurrence
        let mut seen = 0;
        for &l in &a.labels {
            assert!(l <= seen);
            if l == seen {
                seen += 1;
            }
        }
    }

    #[test]
    fn kmeans_handles_duplicate_tokens() {
        let t = Matrix::from_rows(&[[1.0, 0.0]; 6]);
        let a = spherical_kmeans(&t, 3, &mut Rng::new(1), 50, 1e-6).unwrap();
        for c in 0..3 {
            assert!(a.labels.contains(&c));
        }
    }

    #[test]
    fn kmeans_rejects_zero_token() {
        let t = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(
            spherical_kmeans(&t, 2, &mut Rng::new(0), 10, 1e-6),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn merge_by_hand() {
        let tokens = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let assignment = ClusterAssignment {
            n_clusters: 1,
            labels: vec![0, 0],
            centroids: Matrix::zeros(1, 2),
            objective_trace: vec![],
        };
        let ips = ImportanceScores(vec![0.2, 0.3]);
        let raw = merge_clusters(&tokens, &[0, 1], &assignment, &ips, false).unwrap();
        assert_eq!(raw.row(0), &[0.2, 0.3]);
        let norm = merge_clusters(&tokens, &[0, 1], &assignment, &ips, true).unwrap();
        assert!((norm.get(0, 0) - 0.4).abs() < 1e-15);
        assert!((norm.get(0, 1) - 0.6).abs() < 1e-15);

        let zero = ImportanceScores(vec![0.0, 0.0]);
        let mean = merge_clusters(&tokens, &[0, 1], &assignment, &zero, true).unwrap();
        assert_eq!(mean.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn compress_counts_and_passthrough() {
        let mut rng = Rng::new(12);
        let z = gaussian_init(&mut rng, 6, 4, 1.0);
        let a = row_stochastic(&mut rng, 6);
        let cfg = VmtcConfig {
            clusters_per_stage: 2,
            ..VmtcConfig::default()
        };
        let out = compress(&z, &a, 2, &cfg, &mut Rng::new(0)).unwrap();
        assert_eq!(out.tokens.rows(), 5);
        assert!(out.tokens.select_rows(&[0]).bit_eq(&z.select_rows(&[0])));
        let ips = importance_scores(&a).unwrap();
        let top = top_rank_indices(ips.values(), 2).unwrap();
        for (i, &p) in top.iter().enumerate() {
            assert_eq!(out.tokens.row(1 + i), z.row(1 + p));
        }

        let full = compress(&z, &a, 5, &cfg, &mut Rng::new(0)).unwrap();
        assert!(full.tokens.bit_eq(&z));
    }

    #[test]
    fn compress_single_redundant_token() {
        let mut rng = Rng::new(13);
        let z = gaussian_init(&mut rng, 5, 3, 1.0);
        let a = row_stochastic(&mut rng, 5);
        let cfg = VmtcConfig {
            clusters_per_stage: 8,
            ..VmtcConfig::default()
        };
        let out = compress(&z, &a, 3, &cfg, &mut Rng::new(0)).unwrap();
        assert_eq!(out.tokens.rows(), 5);
        assert_eq!(out.n_clusters, 1);
        let j = out.partition.redundant[0];
        let w = out.ips.values()[j];
        for c in 0..3 {
            assert_eq!(out.tokens.get(4, c), w * z.get(1 + j, c));
        }
    }

    #[test]
    fn schedule_examples() {
        let cfg = VmtcConfig::default();
        let plan = schedule_stages(576, &cfg).unwrap();
        let outs: Vec<usize> = plan.iter().map(|p| p.output).collect();
        assert_eq!(outs, vec![457, 363, 288]);
        assert_eq!(plan[0].keep + plan[0].clusters, 457);
        assert_eq!(plan[0].clusters, 4);

        let one = VmtcConfig {
            num_stages: 1,
            ..VmtcConfig::default()
        };
        assert_eq!(schedule_stages(100, &one).unwrap()[0].output, 50);

        let keep_all = VmtcConfig {
            target_keep_ratio: 1.0,
            ..VmtcConfig::default()
        };
        for p in schedule_stages(64, &keep_all).unwrap() {
            assert!(p.is_identity());
            assert_eq!((p.keep, p.clusters), (64, 0));
        }

        let tiny = VmtcConfig {
            target_keep_ratio: 0.01,
            ..VmtcConfig::default()
        };
        assert!(matches!(
            schedule_stages(10, &tiny),
            Err(Error::InvalidSchedule(_))
        ));
    }

    #[test]
    fn insertion_layers_equally_spaced() {
        let cfg = VmtcConfig::default();
        assert_eq!(cfg.insertion_layers(24).unwrap(), vec![6, 12, 18]);
        assert_eq!(cfg.insertion_layers(6).unwrap(), vec![1, 3, 4]);
        assert!(cfg.insertion_layers(2).is_err());
    }

    #[test]
    fn spatial_downsample_examples() {
        let t = Matrix::from_rows(&[[1.0], [2.0], [3.0], [6.0]]);
        assert_eq!(spatial_downsample(&t, 2, 2).unwrap().row(0), &[3.0]);
        let g = gaussian_init(&mut Rng::new(3), 576, 2, 1.0);
        assert_eq!(spatial_downsample(&g, 24, 2).unwrap().rows(), 144);
        assert!(spatial_downsample(&g, 24, 1).unwrap().bit_eq(&g));
        assert!(matches!(
            spatial_downsample(&g, 24, 5),
            Err(Error::InvalidFactor { grid: 24, factor: 5 })
        ));
    }

    #[test]
    fn downsample_of_replicated_grid_is_idempotent() {
        let g = gaussian_init(&mut Rng::new(31), 36, 3, 1.0);
        let small = spatial_downsample(&g, 6, 2).unwrap();
        let mut up = Matrix::zeros(36, 3);
        for y in 0..6 {
            for x in 0..6 {
                up.row_mut(y * 6 + x).copy_from_slice(small.row((y / 2) * 3 + x / 2));
            }
        }
        assert!(spatial_downsample(&up, 6, 2).unwrap().max_abs_diff(&small) < 1e-15);
    }

    #[test]
    fn last_layer_prune_matches_drop_compression() {
        let mut rng = Rng::new(40);
        let z = gaussian_init(&mut rng, 11, 4, 1.0);
        let a = row_stochastic(&mut rng, 11);
        assert!(last_layer_prune(&z, &a, 1.0, IpsDirection::ClsQuery).unwrap().bit_eq(&z));
        let pruned = last_layer_prune(&z, &a, 0.5, IpsDirection::ClsQuery).unwrap();
        assert_eq!(pruned.rows(), 6);
        let drop = VmtcConfig {
            merge: MergeMode::Drop,
            ..VmtcConfig::default()
        };
        let via_compress = compress(&z, &a, 5, &drop, &mut Rng::new(0)).unwrap();
        assert!(via_compress.tokens.bit_eq(&pruned));
    }
}
