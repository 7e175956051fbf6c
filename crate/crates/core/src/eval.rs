//! Reconstruction metrics, the cosine-geometry baseline and a permutation
//! test for differences of means.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityKind, HierarchyGraph, LinkKind};
use crate::poincare::{self, EmbeddingTable, Geometry, Optimizer, TrainConfig, TrainReport};

/// 1 − cos(u, v). A zero vector is at distance 1 from everything.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 1.0;
    }
    let s: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    1.0 - s / (nu * nv)
}

pub(crate) fn cosine_distance_with_grads(u: &[f64], v: &[f64], grad_u: &mut [f64], grad_v: &mut [f64]) -> f64 {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        grad_u.fill(0.0);
        grad_v.fill(0.0);
        return 1.0;
    }
    let s: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let cos = s / (nu * nv);
    for i in 0..u.len() {
        grad_u[i] = -(v[i] / (nu * nv) - cos * u[i] / (nu * nu));
        grad_v[i] = -(u[i] / (nu * nv) - cos * v[i] / (nv * nv));
    }
    1.0 - cos
}

fn sgd_step(point: &mut [f64], grad: &[f64], lr: f64, _eps: f64) {
    for (x, g) in point.iter_mut().zip(grad) {
        *x -= lr * g;
    }
}

const COSINE_OPTIMIZER: Optimizer = Optimizer {
    distance: cosine_distance_with_grads,
    step: sgd_step,
};

/// Trains unconstrained points on the same links and loss as
/// [`poincare::train`], with cosine distance and plain SGD.
pub fn euclidean_baseline_train(graph: &HierarchyGraph, config: &TrainConfig) -> Result<(EmbeddingTable, TrainReport)> {
    poincare::fit(graph, config, &COSINE_OPTIMIZER, Geometry::Cosine, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelTag {
    Hyperbolic,
    EuclideanBaseline,
}

impl From<Geometry> for ModelTag {
    fn from(g: Geometry) -> Self {
        match g {
            Geometry::Poincare => ModelTag::Hyperbolic,
            Geometry::Cosine => ModelTag::EuclideanBaseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub links: usize,
    /// Rank among same-kind candidates with the parent's other children removed.
    pub mean_rank: f64,
    /// Rank among all same-kind candidates.
    pub raw_mean_rank: f64,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelTag,
    #[serde(flatten)]
    pub overall: RankMetrics,
    pub per_link_kind: BTreeMap<LinkKind, RankMetrics>,
}

impl EvalReport {
    pub fn mean_rank(&self) -> f64 {
        self.overall.mean_rank
    }

    pub fn map(&self) -> f64 {
        self.overall.map
    }
}

#[derive(Default)]
struct Tally {
    links: usize,
    rank_sum: f64,
    raw_rank_sum: f64,
    groups: usize,
    ap_sum: f64,
}

impl Tally {
    fn metrics(&self) -> RankMetrics {
        RankMetrics {
            links: self.links,
            mean_rank: self.rank_sum / self.links as f64,
            raw_mean_rank: self.raw_rank_sum / self.links as f64,
            map: self.ap_sum / self.groups as f64,
        }
    }
}

/// Ranks each link's child by distance from its parent among all entities
/// of the child's kind (excluding the parent). Ties count in the child's
/// favour. Average precision is taken per (parent, child kind) group from
/// the unfiltered ranks.
pub fn evaluate_reconstruction(table: &EmbeddingTable, graph: &HierarchyGraph) -> Result<EvalReport> {
    if graph.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let missing: Vec<_> = graph.entities().into_iter().filter(|e| table.index_of(e).is_none()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingEntities(missing));
    }
    let mut by_kind: HashMap<EntityKind, Vec<usize>> = HashMap::new();
    for (i, id) in table.ids().iter().enumerate() {
        if graph.contains_entity(id) {
            by_kind.entry(id.kind()).or_default().push(i);
        }
    }
    let mut overall = Tally::default();
    let mut per_kind: BTreeMap<LinkKind, Tally> = BTreeMap::new();
    let mut dists = Vec::new();
    for parent in graph.entities() {
        let p = table.index_of(parent).expect("checked above");
        for kind in LinkKind::ALL {
            let Some(children) = graph.children_of_kind(parent, kind) else {
                continue;
            };
            let child_kind = kind.endpoints().1;
            let child_rows: Vec<usize> = children.iter().map(|c| table.index_of(c).expect("checked above")).collect();
            dists.clear();
            dists.extend(
                by_kind[&child_kind]
                    .iter()
                    .filter(|&&i| i != p)
                    .map(|&i| (table.distance(p, i), child_rows.contains(&i))),
            );
            let negatives: Vec<f64> = dists.iter().filter(|(_, pos)| !pos).map(|(d, _)| *d).collect();
            let mut child_dists: Vec<f64> = child_rows.iter().map(|&c| table.distance(p, c)).collect();
            child_dists.sort_by(f64::total_cmp);
            let tally = per_kind.entry(kind).or_default();
            let mut ap = 0.0;
            for (j, &d) in child_dists.iter().enumerate() {
                let filtered = 1 + negatives.iter().filter(|&&x| x < d).count();
                // j closer siblings are ahead in the unfiltered list
                let raw = filtered + j;
                ap += (j + 1) as f64 / raw as f64;
                for t in [&mut overall, &mut *tally] {
                    t.links += 1;
                    t.rank_sum += filtered as f64;
                    t.raw_rank_sum += raw as f64;
                }
            }
            ap /= child_dists.len() as f64;
            for t in [&mut overall, &mut *tally] {
                t.groups += 1;
                t.ap_sum += ap;
            }
        }
    }
    Ok(EvalReport {
        model: table.geometry().into(),
        overall: overall.metrics(),
        per_link_kind: per_kind.into_iter().map(|(k, t)| (k, t.metrics())).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    pub observed_diff: f64,
    pub permutation_diffs: Vec<f64>,
    pub p_value: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// One-sided test of mean(a) > mean(b) by random relabeling of the pooled
/// values, with the add-one p-value.
pub fn permutation_test(a: &[f64], b: &[f64], permutations: usize, seed: u64) -> Result<PermutationTestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let observed_diff = mean(a) - mean(b);
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let permutation_diffs: Vec<f64> = (0..permutations)
        .map(|_| {
            pooled.shuffle(&mut rng);
            let (x, y) = pooled.split_at(a.len());
            mean(x) - mean(y)
        })
        .collect();
    let hits = permutation_diffs.iter().filter(|&&d| d >= observed_diff).count();
    Ok(PermutationTestResult {
        observed_diff,
        p_value: (1 + hits) as f64 / (1 + permutations) as f64,
        permutation_diffs,
    })
}
