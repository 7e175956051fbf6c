//! Poincaré-ball embeddings trained with Riemannian SGD.
//!
//! Each directed link (parent, child) is a positive example. The loss for a
//! link is the softmax cross-entropy of the child against negatives drawn
//! uniformly from entities that are not children of the parent, with
//! logits −d(parent, ·) in hyperbolic distance. Euclidean gradients are
//! rescaled by the inverse metric (1 − ‖θ‖²)² / 4 and every updated point is
//! projected back inside the ball.
//!
//! Two execution modes share one code path: with `threads == 1` training is
//! single-threaded and bitwise reproducible for a seed; with more threads
//! workers update a shared table without locks (hogwild), which is
//! nondeterministic but keeps every point inside the ball.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, HierarchyGraph};

pub const DEFAULT_RANK: usize = 15;
pub const DEFAULT_BALL_EPS: f64 = 1e-5;

/// Smallest admissible arcosh argument above 1.
const ACOSH_FLOOR: f64 = 1.0 + 1e-15;
/// Lower bound on the conformal denominators 1 − ‖x‖².
const BOUNDARY_FLOOR: f64 = 1e-15;

/// Which distance an [`EmbeddingTable`] is searched with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Poincare,
    Cosine,
}

impl Geometry {
    pub fn distance(self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            Geometry::Poincare => hyperbolic_distance(u, v),
            Geometry::Cosine => crate::eval::cosine_distance(u, v),
        }
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// arcosh(1 + 2‖u−v‖² / ((1−‖u‖²)(1−‖v‖²))), without rank checks.
pub(crate) fn hyperbolic_distance(u: &[f64], v: &[f64]) -> f64 {
    let alpha = (1.0 - dot(u, u)).max(BOUNDARY_FLOOR);
    let beta = (1.0 - dot(v, v)).max(BOUNDARY_FLOOR);
    let gamma = 1.0 + 2.0 * sq_dist(u, v) / (alpha * beta);
    if gamma <= 1.0 {
        return 0.0;
    }
    gamma.max(ACOSH_FLOOR).acosh()
}

/// Hyperbolic distance between two points of the Poincaré ball.
pub fn poincare_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::RankMismatch(u.len(), v.len()));
    }
    Ok(hyperbolic_distance(u, v))
}

/// Distance and its Euclidean gradients with respect to both arguments.
fn distance_with_grads(u: &[f64], v: &[f64], grad_u: &mut [f64], grad_v: &mut [f64]) -> f64 {
    let sq_u = dot(u, u);
    let sq_v = dot(v, v);
    let uv = dot(u, v);
    let alpha = (1.0 - sq_u).max(BOUNDARY_FLOOR);
    let beta = (1.0 - sq_v).max(BOUNDARY_FLOOR);
    let diff = sq_dist(u, v);
    let gamma = 1.0 + 2.0 * diff / (alpha * beta);
    if diff == 0.0 || gamma <= ACOSH_FLOOR {
        grad_u.fill(0.0);
        grad_v.fill(0.0);
        return if gamma <= 1.0 { 0.0 } else { ACOSH_FLOOR.acosh() };
    }
    let root = (gamma * gamma - 1.0).sqrt();
    let cu = 4.0 / (beta * root);
    let cv = 4.0 / (alpha * root);
    let au = (sq_v - 2.0 * uv + 1.0) / (alpha * alpha);
    let av = (sq_u - 2.0 * uv + 1.0) / (beta * beta);
    for i in 0..u.len() {
        grad_u[i] = cu * (au * u[i] - v[i] / alpha);
        grad_v[i] = cv * (av * v[i] - u[i] / beta);
    }
    gamma.acosh()
}

/// Rescales `point` onto the sphere of radius 1 − `eps` if it lies on or
/// outside it.
pub fn project_to_ball(point: &mut [f64], eps: f64) {
    let bound = 1.0 - eps;
    let norm = dot(point, point).sqrt();
    if norm < bound {
        return;
    }
    let scale = bound / norm;
    point.iter_mut().for_each(|x| *x *= scale);
    // rounding can leave the norm an ulp above the bound
    let norm = dot(point, point).sqrt();
    if norm > bound {
        let scale = bound / norm * (1.0 - f64::EPSILON);
        point.iter_mut().for_each(|x| *x *= scale);
    }
}

/// θ − lr · ((1 − ‖θ‖²)² / 4) · ∇, projected back into the ball.
pub fn riemannian_step(point: &[f64], euclidean_grad: &[f64], lr: f64, eps: f64) -> Vec<f64> {
    let mut out = point.to_vec();
    apply_riemannian_step(&mut out, euclidean_grad, lr, eps);
    out
}

fn apply_riemannian_step(point: &mut [f64], grad: &[f64], lr: f64, eps: f64) {
    let metric = (1.0 - dot(point, point)).powi(2) / 4.0;
    for (x, g) in point.iter_mut().zip(grad) {
        *x -= lr * metric * g;
    }
    project_to_ball(point, eps);
}

/// Entity -> point table of fixed rank.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rank: usize,
    geometry: Geometry,
    ids: Vec<EntityId>,
    index: HashMap<EntityId, usize>,
    coords: Vec<f64>,
}

impl EmbeddingTable {
    /// Builds a table from ids and row-major coordinates. Poincaré tables
    /// must have every point strictly inside the unit ball.
    pub fn new(rank: usize, geometry: Geometry, ids: Vec<EntityId>, coords: Vec<f64>) -> Result<Self> {
        if rank == 0 || coords.len() != rank * ids.len() {
            return Err(Error::InvalidParameter(format!(
                "{} coordinates for {} entities of rank {rank}",
                coords.len(),
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate entity {id}")));
            }
        }
        let table = EmbeddingTable {
            rank,
            geometry,
            ids,
            index,
            coords,
        };
        if geometry == Geometry::Poincare {
            if let Some((id, norm)) = table.iter().map(|(id, p)| (id, dot(p, p).sqrt())).find(|(_, n)| !(*n < 1.0)) {
                return Err(Error::InvalidParameter(format!("{id} has norm {norm} outside the ball")));
            }
        }
        Ok(table)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[EntityId] {
        &self.ids
    }

    pub fn index_of(&self, id: &EntityId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.rank..(i + 1) * self.rank]
    }

    pub fn get(&self, id: &EntityId) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.point(i))
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EntityId, &[f64])> {
        self.ids.iter().zip(self.coords.chunks_exact(self.rank))
    }

    /// Distance between rows `i` and `j` in the table's geometry.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.geometry.distance(self.point(i), self.point(j))
    }

    pub fn norm(&self, i: usize) -> f64 {
        let p = self.point(i);
        dot(p, p).sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.len()).map(|i| self.norm(i)).fold(0.0, f64::max)
    }

    /// Writes `kind:key <TAB> f1,f2,…` lines with round-trip exact floats.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for (id, p) in self.iter() {
            let row: Vec<String> = p.iter().map(|x| format!("{x:?}")).collect();
            writeln!(out, "{id}\t{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R, geometry: Geometry, source: &str) -> Result<Self> {
        let mut ids = Vec::new();
        let mut coords = Vec::new();
        let mut rank = None;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (id, row) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(source, lineno, "expected `entity<TAB>coords`"))?;
            let id: EntityId = id.parse().map_err(|e: Error| Error::parse(source, lineno, e.to_string()))?;
            let before = coords.len();
            for field in row.split(',') {
                let x: f64 = field
                    .parse()
                    .map_err(|_| Error::parse(source, lineno, format!("bad coordinate {field:?}")))?;
                coords.push(x);
            }
            let r = coords.len() - before;
            if *rank.get_or_insert(r) != r {
                return Err(Error::parse(source, lineno, format!("rank {r} differs from earlier rows")));
            }
            ids.push(id);
        }
        let rank = rank.ok_or_else(|| Error::parse(source, 0, "no embeddings"))?;
        EmbeddingTable::new(rank, geometry, ids, coords)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub rank: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub burn_in_epochs: usize,
    pub burn_in_lr_factor: f64,
    pub negatives_per_positive: usize,
    pub init_scale: f64,
    pub rng_seed: u64,
    pub ball_eps: f64,
    /// Links per gradient update.
    pub batch_size: usize,
    /// 1 runs the deterministic single-threaded mode; more runs hogwild.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rank: DEFAULT_RANK,
            epochs: 50,
            learning_rate: 0.1,
            burn_in_epochs: 10,
            burn_in_lr_factor: 0.1,
            negatives_per_positive: 10,
            init_scale: 1e-3,
            rng_seed: 0,
            ball_eps: DEFAULT_BALL_EPS,
            batch_size: 10,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.rank < 2 {
            return bad("rank must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.burn_in_lr_factor > 0.0) {
            return bad("burn_in_lr_factor must be positive");
        }
        if self.negatives_per_positive < 1 {
            return bad("negatives_per_positive must be at least 1");
        }
        if !(self.init_scale > 0.0 && self.init_scale < 0.01) {
            return bad("init_scale must lie in (0, 0.01)");
        }
        if !(self.ball_eps > 0.0 && self.ball_eps < 1.0) {
            return bad("ball_eps must lie in (0, 1)");
        }
        if self.batch_size < 1 || self.threads < 1 {
            return bad("batch_size and threads must be at least 1");
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.burn_in_epochs {
            self.learning_rate * self.burn_in_lr_factor
        } else {
            self.learning_rate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-link loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

/// One positive link with its sampled negatives, as table row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub parent: usize,
    pub child: usize,
    pub negatives: Vec<usize>,
}

/// Sparse per-entity gradient accumulator.
#[derive(Debug, Default)]
pub(crate) struct GradAccum {
    rank: usize,
    slots: HashMap<usize, usize>,
    order: Vec<usize>,
    buf: Vec<f64>,
}

impl GradAccum {
    pub(crate) fn new(rank: usize) -> Self {
        GradAccum {
            rank,
            ..Default::default()
        }
    }

    pub(crate) fn add(&mut self, entity: usize, scale: f64, grad: &[f64]) {
        let rank = self.rank;
        let slot = *self.slots.entry(entity).or_insert_with(|| {
            self.order.push(entity);
            self.buf.extend(std::iter::repeat_n(0.0, rank));
            self.order.len() - 1
        });
        for (acc, g) in self.buf[slot * rank..(slot + 1) * rank].iter_mut().zip(grad) {
            *acc += scale * g;
        }
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.order.iter().copied().zip(self.buf.chunks_exact(self.rank))
    }

    pub(crate) fn clear(&mut self) {
        self.slots.clear();
        self.order.clear();
        self.buf.clear();
    }

    pub(crate) fn into_map(self) -> HashMap<usize, Vec<f64>> {
        self.iter().map(|(i, g)| (i, g.to_vec())).collect()
    }
}

/// Scratch buffers for one softmax sample.
pub(crate) struct SampleScratch {
    distances: Vec<f64>,
    grads_u: Vec<Vec<f64>>,
    grads_v: Vec<Vec<f64>>,
}

impl SampleScratch {
    pub(crate) fn new(rank: usize, candidates: usize) -> Self {
        SampleScratch {
            distances: Vec::with_capacity(candidates),
            grads_u: vec![vec![0.0; rank]; candidates],
            grads_v: vec![vec![0.0; rank]; candidates],
        }
    }

    fn ensure(&mut self, rank: usize, candidates: usize) {
        while self.grads_u.len() < candidates {
            self.grads_u.push(vec![0.0; rank]);
            self.grads_v.push(vec![0.0; rank]);
        }
    }
}

/// Softmax loss of one sample given per-candidate distances and their
/// gradients; returns the loss and fills `weights` with ∂loss/∂d.
fn softmax_loss(distances: &[f64], weights: &mut Vec<f64>) -> f64 {
    let max_logit = distances.iter().map(|d| -d).fold(f64::NEG_INFINITY, f64::max);
    weights.clear();
    weights.extend(distances.iter().map(|d| (-d - max_logit).exp()));
    let z: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= z;
    }
    let loss = distances[0] + max_logit + z.ln();
    // ∂loss/∂d_j = [j == 0] − softmax_j
    for (j, w) in weights.iter_mut().enumerate() {
        *w = if j == 0 { 1.0 - *w } else { -*w };
    }
    loss
}

/// Accumulates the loss and ambient gradients of one sample, reading points
/// through `point`.
pub(crate) fn accumulate_sample<'a>(
    point: impl Fn(usize) -> &'a [f64],
    distance: fn(&[f64], &[f64], &mut [f64], &mut [f64]) -> f64,
    sample: &Sample,
    scratch: &mut SampleScratch,
    weights: &mut Vec<f64>,
    grads: &mut GradAccum,
) -> f64 {
    let rank = point(sample.parent).len();
    let candidates = 1 + sample.negatives.len();
    scratch.ensure(rank, candidates);
    scratch.distances.clear();
    let u = point(sample.parent);
    for (j, &c) in std::iter::once(&sample.child).chain(&sample.negatives).enumerate() {
        let d = distance(u, point(c), &mut scratch.grads_u[j], &mut scratch.grads_v[j]);
        scratch.distances.push(d);
    }
    let loss = softmax_loss(&scratch.distances, weights);
    for (j, &c) in std::iter::once(&sample.child).chain(&sample.negatives).enumerate() {
        grads.add(sample.parent, weights[j], &scratch.grads_u[j]);
        grads.add(c, weights[j], &scratch.grads_v[j]);
    }
    loss
}

/// Total softmax loss of `batch` and the exact Euclidean gradient of that
/// loss with respect to every touched point.
pub fn loss_and_gradient(batch: &[Sample], table: &EmbeddingTable) -> (f64, HashMap<usize, Vec<f64>>) {
    let distance: fn(&[f64], &[f64], &mut [f64], &mut [f64]) -> f64 = match table.geometry {
        Geometry::Poincare => distance_with_grads,
        Geometry::Cosine => crate::eval::cosine_distance_with_grads,
    };
    let mut grads = GradAccum::new(table.rank);
    let mut scratch = SampleScratch::new(table.rank, 1);
    let mut weights = Vec::new();
    let loss = batch
        .iter()
        .map(|s| accumulate_sample(|i| table.point(i), distance, s, &mut scratch, &mut weights, &mut grads))
        .sum();
    (loss, grads.into_map())
}

/// Link list and per-parent child sets in row-index form.
pub(crate) struct IndexedLinks {
    pub ids: Vec<EntityId>,
    pub links: Vec<(usize, usize)>,
    /// Sorted child indices of each entity.
    pub children: Vec<Vec<usize>>,
}

impl IndexedLinks {
    pub(crate) fn new(graph: &HierarchyGraph) -> Self {
        let ids: Vec<EntityId> = graph.entities().into_iter().cloned().collect();
        let index: HashMap<&EntityId, usize> = ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
        let mut children = vec![Vec::new(); ids.len()];
        let links: Vec<(usize, usize)> = graph
            .links()
            .map(|l| {
                let (p, c) = (index[l.parent()], index[l.child()]);
                children[p].push(c);
                (p, c)
            })
            .collect();
        for list in &mut children {
            list.sort_unstable();
            list.dedup();
        }
        IndexedLinks { ids, links, children }
    }

    /// Draws up to `k` negatives for `parent`, uniformly from entities that
    /// are neither `parent` nor one of its children.
    pub(crate) fn sample_negatives(&self, parent: usize, k: usize, rng: &mut impl Rng, out: &mut Vec<usize>) {
        out.clear();
        let n = self.ids.len();
        let excluded = self.children[parent].len() + 1;
        if excluded >= n {
            return;
        }
        let mut attempts = 0;
        while out.len() < k && attempts < 100 * k {
            attempts += 1;
            let c = rng.random_range(0..n);
            if c != parent && self.children[parent].binary_search(&c).is_err() {
                out.push(c);
            }
        }
    }
}

/// Row-major coordinates shared between training workers. Each coordinate
/// is an independently loaded and stored `f64`; concurrent writers may
/// interleave at coordinate granularity.
pub(crate) struct SharedCoords {
    rank: usize,
    cells: Vec<AtomicU64>,
}

impl SharedCoords {
    pub(crate) fn new(rank: usize, coords: &[f64]) -> Self {
        SharedCoords {
            rank,
            cells: coords.iter().map(|x| AtomicU64::new(x.to_bits())).collect(),
        }
    }

    pub(crate) fn read(&self, i: usize, out: &mut [f64]) {
        for (o, cell) in out.iter_mut().zip(&self.cells[i * self.rank..(i + 1) * self.rank]) {
            *o = f64::from_bits(cell.load(Ordering::Relaxed));
        }
    }

    pub(crate) fn write(&self, i: usize, values: &[f64]) {
        for (v, cell) in values.iter().zip(&self.cells[i * self.rank..(i + 1) * self.rank]) {
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    pub(crate) fn snapshot(&self) -> Vec<f64> {
        self.cells.iter().map(|c| f64::from_bits(c.load(Ordering::Relaxed))).collect()
    }
}

/// Per-step hook used to inspect the table during training.
pub type StepObserver<'a> = &'a mut dyn FnMut(usize, &[f64]);

/// Geometry-specific parts of the training loop.
pub(crate) struct Optimizer {
    pub distance: fn(&[f64], &[f64], &mut [f64], &mut [f64]) -> f64,
    pub step: fn(&mut [f64], &[f64], f64, f64),
}

pub(crate) const POINCARE_OPTIMIZER: Optimizer = Optimizer {
    distance: distance_with_grads,
    step: apply_riemannian_step,
};

struct Worker<'a> {
    shared: &'a SharedCoords,
    links: &'a IndexedLinks,
    config: &'a TrainConfig,
    optimizer: &'a Optimizer,
}

impl Worker<'_> {
    /// Runs `order` through batched updates; returns the summed loss.
    fn run(
        &self,
        order: &[(usize, usize)],
        lr: f64,
        rng: &mut ChaCha8Rng,
        mut observer: Option<&mut (dyn FnMut(usize, &[f64]) + '_)>,
    ) -> f64 {
        let rank = self.config.rank;
        let mut grads = GradAccum::new(rank);
        let mut scratch = SampleScratch::new(rank, 1 + self.config.negatives_per_positive);
        let mut weights = Vec::new();
        let mut cache: HashMap<usize, Vec<f64>> = HashMap::new();
        let mut sample = Sample {
            parent: 0,
            child: 0,
            negatives: Vec::new(),
        };
        let mut point = vec![0.0; rank];
        let mut total = 0.0;
        for (step, batch) in order.chunks(self.config.batch_size).enumerate() {
            grads.clear();
            cache.clear();
            for &(p, c) in batch {
                sample.parent = p;
                sample.child = c;
                self.links
                    .sample_negatives(p, self.config.negatives_per_positive, rng, &mut sample.negatives);
                for &i in std::iter::once(&p).chain(std::iter::once(&c)).chain(&sample.negatives) {
                    cache.entry(i).or_insert_with(|| {
                        let mut buf = vec![0.0; rank];
                        self.shared.read(i, &mut buf);
                        buf
                    });
                }
                total += accumulate_sample(
                    |i| cache[&i].as_slice(),
                    self.optimizer.distance,
                    &sample,
                    &mut scratch,
                    &mut weights,
                    &mut grads,
                );
            }
            for (i, g) in grads.iter() {
                // reread so concurrent updates since the forward pass are kept
                self.shared.read(i, &mut point);
                (self.optimizer.step)(&mut point, g, lr, self.config.ball_eps);
                self.shared.write(i, &point);
            }
            if let Some(obs) = observer.as_mut() {
                obs(step, &self.shared.snapshot());
            }
        }
        total
    }
}

pub(crate) fn initial_coords(n: usize, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n * config.rank)
        .map(|_| rng.random_range(-config.init_scale..=config.init_scale))
        .collect()
}

/// Shared epoch loop for the hyperbolic model and the cosine baseline.
pub(crate) fn fit(
    graph: &HierarchyGraph,
    config: &TrainConfig,
    optimizer: &Optimizer,
    geometry: Geometry,
    mut observer: Option<StepObserver>,
) -> Result<(EmbeddingTable, TrainReport)> {
    config.validate()?;
    if graph.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let links = IndexedLinks::new(graph);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let shared = SharedCoords::new(config.rank, &initial_coords(links.ids.len(), config, &mut rng));
    let worker = Worker {
        shared: &shared,
        links: &links,
        config,
        optimizer,
    };
    let mut order = links.links.clone();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut rng);
        let total = if config.threads == 1 {
            worker.run(&order, lr, &mut rng, observer.as_deref_mut())
        } else {
            let chunk = order.len().div_ceil(config.threads);
            let seeds: Vec<u64> = (0..config.threads).map(|_| rng.random()).collect();
            std::thread::scope(|scope| {
                let handles: Vec<_> = order
                    .chunks(chunk)
                    .zip(&seeds)
                    .map(|(part, &seed)| {
                        let worker = &worker;
                        scope.spawn(move || {
                            let mut rng = ChaCha8Rng::seed_from_u64(seed);
                            worker.run(part, lr, &mut rng, None)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("training worker panicked")).sum()
            })
        };
        epoch_losses.push(total / order.len() as f64);
    }
    let mut coords = shared.snapshot();
    if geometry == Geometry::Poincare {
        // interleaved hogwild writes can combine coordinates of two
        // in-ball updates into an out-of-ball point
        for p in coords.chunks_exact_mut(config.rank) {
            project_to_ball(p, config.ball_eps);
        }
    }
    let final_loss = epoch_losses.last().copied().unwrap_or(f64::NAN);
    let table = EmbeddingTable::new(config.rank, geometry, links.ids, coords)?;
    Ok((
        table,
        TrainReport {
            epoch_losses,
            final_loss,
        },
    ))
}

/// Trains Poincaré embeddings for every entity of `graph`.
pub fn train(graph: &HierarchyGraph, config: &TrainConfig) -> Result<(EmbeddingTable, TrainReport)> {
    fit(graph, config, &POINCARE_OPTIMIZER, Geometry::Poincare, None)
}

/// [`train`], calling `observer(step, coords)` after every optimizer step.
/// Only honored in single-threaded mode.
pub fn train_observed(
    graph: &HierarchyGraph,
    config: &TrainConfig,
    observer: StepObserver,
) -> Result<(EmbeddingTable, TrainReport)> {
    fit(graph, config, &POINCARE_OPTIMIZER, Geometry::Poincare, Some(observer))
}
