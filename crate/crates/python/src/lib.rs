//! Python bindings for the embedding, prior and recommendation code.

use std::path::PathBuf;

use poincare_music::bayes::{self, BetaPosterior, BinomialObs, GammaPosterior, PoissonObs};
use poincare_music::graph::{EntityId, EntityKind};
use poincare_music::pipeline::{self, PipelineConfig, Stage};
use poincare_music::poincare::{self, TrainConfig};
use poincare_music::{eval, recommend};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyAny;

create_exception!(poincare_music, PoincareMusicError, PyException);

fn err(e: poincare_music::Error) -> PyErr {
    PoincareMusicError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = poincare_music::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn json<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PoincareMusicError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn synthetic_ids(n: usize) -> impl Iterator<Item = EntityId> {
    (0..n).map(|i| EntityId::new(EntityKind::Track, i.to_string()).expect("non-empty key"))
}

#[pyclass(name = "EmbeddingTable", module = "poincare_music", frozen)]
struct PyEmbeddingTable(poincare::EmbeddingTable);

#[pymethods]
impl PyEmbeddingTable {
    /// Load `embeddings.tsv`; the geometry comes from the sidecar JSON if present.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        pipeline::read_embeddings(&path).map(Self).map_err(err)
    }

    #[getter]
    fn rank(&self) -> usize {
        self.0.rank()
    }

    #[getter]
    fn geometry(&self) -> String {
        format!("{:?}", self.0.geometry()).to_lowercase()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __contains__(&self, entity: &str) -> bool {
        entity.parse::<EntityId>().is_ok_and(|id| self.0.index_of(&id).is_some())
    }

    fn ids(&self) -> Vec<String> {
        self.0.ids().iter().map(ToString::to_string).collect()
    }

    fn vector(&self, entity: &str) -> PyResult<Vec<f64>> {
        self.index(entity).map(|i| self.0.point(i).to_vec())
    }

    fn norm(&self, entity: &str) -> PyResult<f64> {
        Ok(self.0.norm(self.index(entity)?))
    }

    fn distance(&self, a: &str, b: &str) -> PyResult<f64> {
        Ok(self.0.distance(self.index(a)?, self.index(b)?))
    }

    /// Top `k` entities of `kind` by minimum distance to any seed, as `(id, distance)` pairs.
    #[pyo3(signature = (seeds, kind = "track", k = 10, include_seeds = false))]
    fn recommend(&self, seeds: Vec<String>, kind: &str, k: usize, include_seeds: bool) -> PyResult<Vec<(String, f64)>> {
        let seeds = seeds.iter().map(|s| parse(s)).collect::<PyResult<Vec<EntityId>>>()?;
        let mut query = recommend::Query::new(seeds, parse(kind)?, k).map_err(err)?;
        query.exclude_seeds = !include_seeds;
        Ok(recommend::recommend(&self.0, &query)
            .map_err(err)?
            .into_iter()
            .map(|r| (r.entity.to_string(), r.distance))
            .collect())
    }

    /// Reconstruction metrics against a `links.tsv` file.
    fn evaluate<'py>(&self, py: Python<'py>, links: PathBuf) -> PyResult<Bound<'py, PyAny>> {
        let graph = pipeline::read_graph(&links).map_err(err)?;
        json(py, &eval::evaluate_reconstruction(&self.0, &graph).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("EmbeddingTable(len={}, rank={}, geometry={})", self.0.len(), self.0.rank(), self.geometry())
    }
}

impl PyEmbeddingTable {
    fn index(&self, entity: &str) -> PyResult<usize> {
        let id: EntityId = parse(entity)?;
        self.0
            .index_of(&id)
            .ok_or_else(|| PoincareMusicError::new_err(format!("unknown entity {id}")))
    }
}

#[pyfunction]
fn poincare_distance(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    poincare::poincare_distance(&u, &v).map_err(err)
}

#[pyfunction]
fn beta_quantile(alpha: f64, beta: f64, q: f64) -> PyResult<f64> {
    BetaPosterior::new(alpha, beta).and_then(|p| p.quantile(q)).map_err(err)
}

#[pyfunction]
fn gamma_quantile(shape: f64, rate: f64, q: f64) -> PyResult<f64> {
    GammaPosterior::new(shape, rate).and_then(|p| p.quantile(q)).map_err(err)
}

/// Maximum-marginal-likelihood `(alpha, beta)` from paired trials and successes.
#[pyfunction]
fn fit_beta_prior(trials: Vec<u64>, successes: Vec<u64>) -> PyResult<(f64, f64)> {
    if trials.len() != successes.len() {
        return Err(PoincareMusicError::new_err("trials and successes differ in length"));
    }
    let obs = synthetic_ids(trials.len())
        .zip(trials.into_iter().zip(successes))
        .map(|(id, (n, k))| BinomialObs::new(id, n, k))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let prior = bayes::fit_beta_prior(&obs).map_err(err)?;
    Ok((prior.alpha, prior.beta))
}

/// Maximum-marginal-likelihood `(shape, rate)` from paired counts and exposures.
#[pyfunction]
fn fit_gamma_prior(counts: Vec<u64>, exposures: Vec<u64>) -> PyResult<(f64, f64)> {
    if counts.len() != exposures.len() {
        return Err(PoincareMusicError::new_err("counts and exposures differ in length"));
    }
    let obs = synthetic_ids(counts.len())
        .zip(counts.into_iter().zip(exposures))
        .map(|(id, (n, d))| PoissonObs::new(id, n, d))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let prior = bayes::fit_gamma_prior(&obs).map_err(err)?;
    Ok((prior.shape, prior.rate))
}

/// Train on a `links.tsv` file. Returns the table and per-epoch losses.
#[pyfunction]
#[pyo3(signature = (links, rank = 15, epochs = 50, learning_rate = 0.1, seed = 0, threads = 1, baseline = false))]
fn train(
    py: Python<'_>,
    links: PathBuf,
    rank: usize,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
    threads: usize,
    baseline: bool,
) -> PyResult<(PyEmbeddingTable, Vec<f64>)> {
    let graph = pipeline::read_graph(&links).map_err(err)?;
    let config = TrainConfig {
        rank,
        epochs,
        learning_rate,
        rng_seed: seed,
        threads,
        ..Default::default()
    };
    let (table, report) = py
        .detach(|| {
            if baseline {
                eval::euclidean_baseline_train(&graph, &config)
            } else {
                poincare::train(&graph, &config)
            }
        })
        .map_err(err)?;
    Ok((PyEmbeddingTable(table), report.epoch_losses))
}

#[pyfunction]
#[pyo3(signature = (a, b, permutations = 10_000, seed = 0))]
fn permutation_test(a: Vec<f64>, b: Vec<f64>, permutations: usize, seed: u64) -> PyResult<(f64, f64)> {
    let r = eval::permutation_test(&a, &b, permutations, seed).map_err(err)?;
    Ok((r.observed_diff, r.p_value))
}

/// Run the pipeline from a JSON config file and return the manifest.
#[pyfunction]
#[pyo3(signature = (config, start = "fit-priors", end = "train"))]
fn run_pipeline<'py>(py: Python<'py>, config: PathBuf, start: &str, end: &str) -> PyResult<Bound<'py, PyAny>> {
    let config = PipelineConfig::from_json_file(&config).map_err(err)?;
    let (from, to): (Stage, Stage) = (parse(start)?, parse(end)?);
    let manifest = py.detach(|| pipeline::run_stages(&config, from, to)).map_err(err)?;
    json(py, &manifest)
}

#[pymodule]
#[pyo3(name = "poincare_music")]
fn init_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PoincareMusicError", m.py().get_type::<PoincareMusicError>())?;
    m.add_class::<PyEmbeddingTable>()?;
    m.add_function(wrap_pyfunction!(poincare_distance, m)?)?;
    m.add_function(wrap_pyfunction!(beta_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(fit_beta_prior, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gamma_prior, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_test, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
