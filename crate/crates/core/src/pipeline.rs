//! JSONL ingestion and the staged prior -> score -> links -> embedding run.
//!
//! Every artifact is written to `<name>.partial` first and renamed into
//! place once complete, so an interrupted or failed stage never leaves a
//! truncated file under the final name.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bayes::{BinomialObs, ObservationGroup, Observations, PoissonObs, Prior, PriorRecord, PriorSource};
use crate::error::{Error, Result};
use crate::graph::{EntityId, EntityKind, HierarchyGraph, LinkKind, DEFAULT_MIN_LINKS};
use crate::links::{self, Authorship, DimensionalRecord, LinkConfig, StationScores};
use crate::poincare::{self, EmbeddingTable, Geometry, TrainConfig, TrainReport};

pub const DEFAULT_MAX_DAYS: u64 = 183;

pub const PRIORS_FILE: &str = "priors.jsonl";
pub const SCORES_FILE: &str = "scores.tsv";
pub const LINKS_FILE: &str = "links.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const EMBEDDINGS_META_FILE: &str = "embeddings.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Plays of one track on one broadcast station over the lookback window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpinRecord {
    pub station: String,
    pub track: String,
    /// Empty when the performing artist is unknown.
    #[serde(default)]
    pub artist: String,
    pub spins: u64,
    pub days_presented: u64,
}

/// Starts and completions of one track on a custom artist station.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub seed_artist: String,
    pub track: String,
    #[serde(default)]
    pub track_artist: String,
    pub starts: u64,
    pub completions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionLine {
    pub entity: EntityId,
    pub label: EntityId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub spin_records: usize,
    pub completion_records: usize,
    pub dimension_records: usize,
    pub live_stations: usize,
    pub custom_stations: usize,
    pub unfittable_stations: usize,
    pub entities: BTreeMap<EntityKind, usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ingested {
    /// Sorted by station id.
    pub groups: Vec<ObservationGroup>,
    pub authorship: Authorship,
    pub dims: Vec<DimensionalRecord>,
    pub report: IngestReport,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path, mut each: impl FnMut(T, usize) -> Result<()>) -> Result<usize> {
    let source = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::parse(&source, 0, e.to_string()))?;
    let mut n = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| Error::parse(&source, i + 1, e.to_string()))?;
        each(record, i + 1).map_err(|e| match e {
            e @ Error::Parse { .. } => e,
            e => Error::parse(&source, i + 1, e.to_string()),
        })?;
        n += 1;
    }
    Ok(n)
}

fn optional_artist(key: &str) -> Result<Option<EntityId>> {
    if key.is_empty() {
        Ok(None)
    } else {
        EntityId::new(EntityKind::Artist, key).map(Some)
    }
}

fn record_author(authorship: &mut Authorship, track: &EntityId, artist: Option<EntityId>) -> Result<()> {
    let Some(artist) = artist else {
        return Ok(());
    };
    match authorship.get(track) {
        Some(prev) if prev != &artist => Err(Error::InvalidParameter(format!(
            "{track} attributed to both {prev} and {artist}"
        ))),
        _ => {
            authorship.insert(track.clone(), artist);
            Ok(())
        }
    }
}

/// Reads the three JSONL inputs and groups observations per station.
/// `max_days` caps `days_presented` (the lookback window length).
pub fn ingest(spins: &Path, completions: &Path, dims: &Path, max_days: u64) -> Result<Ingested> {
    let mut poisson: BTreeMap<EntityId, Vec<PoissonObs>> = BTreeMap::new();
    let mut binomial: BTreeMap<EntityId, Vec<BinomialObs>> = BTreeMap::new();
    let mut seen: BTreeSet<(EntityId, EntityId)> = BTreeSet::new();
    let mut authorship = Authorship::new();
    let mut entities: BTreeSet<EntityId> = BTreeSet::new();

    let spin_records = read_jsonl(spins, |r: SpinRecord, _| {
        if r.days_presented > max_days {
            return Err(Error::InvalidParameter(format!(
                "days_presented {} exceeds the {max_days}-day window",
                r.days_presented
            )));
        }
        let station = EntityId::new(EntityKind::LiveStation, r.station)?;
        let track = EntityId::new(EntityKind::Track, r.track)?;
        let artist = optional_artist(&r.artist)?;
        let obs = PoissonObs::new(track.clone(), r.spins, r.days_presented)?;
        if !seen.insert((station.clone(), track.clone())) {
            return Err(Error::InvalidParameter(format!("duplicate record for {station}, {track}")));
        }
        entities.extend([station.clone(), track.clone()]);
        entities.extend(artist.clone());
        record_author(&mut authorship, &track, artist)?;
        poisson.entry(station).or_default().push(obs);
        Ok(())
    })?;

    let completion_records = read_jsonl(completions, |r: CompletionRecord, _| {
        let station = EntityId::new(EntityKind::Artist, r.seed_artist)?;
        let track = EntityId::new(EntityKind::Track, r.track)?;
        let artist = optional_artist(&r.track_artist)?;
        let obs = BinomialObs::new(track.clone(), r.starts, r.completions)?;
        if !seen.insert((station.clone(), track.clone())) {
            return Err(Error::InvalidParameter(format!("duplicate record for {station}, {track}")));
        }
        entities.extend([station.clone(), track.clone()]);
        entities.extend(artist.clone());
        record_author(&mut authorship, &track, artist)?;
        binomial.entry(station).or_default().push(obs);
        Ok(())
    })?;

    let mut dim_records = Vec::new();
    let dimension_records = read_jsonl(dims, |r: DimensionLine, _| {
        let rec = DimensionalRecord::new(r.entity, r.label)?;
        entities.extend([rec.entity.clone(), rec.label.clone()]);
        dim_records.push(rec);
        Ok(())
    })?;

    let live_stations = poisson.len();
    let custom_stations = binomial.len();
    let groups: Vec<ObservationGroup> = binomial
        .into_iter()
        .map(|(station, obs)| ObservationGroup {
            station,
            observations: Observations::Binomial(obs),
        })
        .chain(poisson.into_iter().map(|(station, obs)| ObservationGroup {
            station,
            observations: Observations::Poisson(obs),
        }))
        .collect();
    let unfittable_stations = groups.iter().filter(|g| !g.is_fittable()).count();
    let mut entity_counts = BTreeMap::new();
    for e in &entities {
        *entity_counts.entry(e.kind()).or_insert(0) += 1;
    }
    let report = IngestReport {
        spin_records,
        completion_records,
        dimension_records,
        live_stations,
        custom_stations,
        unfittable_stations,
        entities: entity_counts,
    };
    info!(
        "ingested {spin_records} spin, {completion_records} completion and {dimension_records} dimension records"
    );
    Ok(Ingested {
        groups,
        authorship,
        dims: dim_records,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub spins: PathBuf,
    pub completions: PathBuf,
    pub dims: PathBuf,
    pub output_dir: PathBuf,
    pub max_days_presented: u64,
    pub score_quantile: f64,
    pub quartile_level: f64,
    pub min_links: usize,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            spins: PathBuf::from("spins.jsonl"),
            completions: PathBuf::from("completions.jsonl"),
            dims: PathBuf::from("dims.jsonl"),
            output_dir: PathBuf::from("out"),
            max_days_presented: DEFAULT_MAX_DAYS,
            score_quantile: links::DEFAULT_SCORE_QUANTILE,
            quartile_level: links::DEFAULT_QUARTILE_LEVEL,
            min_links: DEFAULT_MIN_LINKS,
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut config: PipelineConfig = serde_json::from_str(&text)?;
        // relative input and output paths resolve against the config file
        if let Some(base) = path.parent() {
            for p in [&mut config.spins, &mut config.completions, &mut config.dims, &mut config.output_dir] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.score_quantile > 0.0 && self.score_quantile < 1.0) {
            return Err(Error::Domain(self.score_quantile));
        }
        if !(0.0..1.0).contains(&self.quartile_level) {
            return Err(Error::InvalidParameter(format!(
                "quartile_level {} is outside [0, 1)",
                self.quartile_level
            )));
        }
        if self.max_days_presented < 1 {
            return Err(Error::InvalidParameter("max_days_presented must be at least 1".into()));
        }
        self.train.validate()
    }

    pub fn link_config(&self) -> LinkConfig {
        LinkConfig {
            quartile_level: self.quartile_level,
            min_links: self.min_links,
        }
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    FitPriors,
    Score,
    BuildLinks,
    Train,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::FitPriors, Stage::Score, Stage::BuildLinks, Stage::Train];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::FitPriors => "fit-priors",
            Stage::Score => "score",
            Stage::BuildLinks => "build-links",
            Stage::Train => "train",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorCounts {
    pub stations: usize,
    pub maximum_likelihood: usize,
    pub method_of_moments: usize,
    pub default: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCounts {
    pub stations: usize,
    pub track_scores: usize,
    pub artist_scores: usize,
    pub unknown_artist_tracks: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkCounts {
    pub links_in: usize,
    pub entities_in: usize,
    pub links: usize,
    pub entities: usize,
    pub per_kind: BTreeMap<LinkKind, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCounts {
    pub entities: usize,
    pub rank: usize,
    pub final_loss: f64,
}

/// Run record: the configuration and the counts produced by each stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub start_stage: Stage,
    pub end_stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<PriorCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<LinkCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainCounts>,
    pub artifacts: Vec<String>,
}

/// Writes `path` via a `.partial` sibling that is renamed on success.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    let mut out = BufWriter::new(File::create(&partial)?);
    body(&mut out)?;
    out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    fs::rename(&partial, path)?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::parse(path.display().to_string(), 0, e.to_string()))
}

/// Fits every station's prior in parallel, in group order.
pub fn fit_priors(groups: &[ObservationGroup]) -> Vec<(PriorRecord, PriorSource)> {
    groups
        .par_iter()
        .map(|g| {
            let (prior, source) = g.fit_prior();
            (PriorRecord::new(g.station.clone(), prior, g.observations.len()), source)
        })
        .collect()
}

pub fn write_priors_jsonl<W: Write>(records: &[PriorRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_priors_jsonl(path: &Path) -> Result<Vec<PriorRecord>> {
    let mut out = Vec::new();
    read_jsonl(path, |r: PriorRecord, _| {
        r.prior()?;
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}

/// Scores all stations in parallel, in group order; returns the scores and
/// the number of tracks skipped for artist aggregation.
pub fn score_all(
    groups: &[ObservationGroup],
    priors: &[PriorRecord],
    authorship: &Authorship,
    quantile: f64,
) -> Result<(Vec<StationScores>, usize)> {
    let priors: HashMap<EntityId, Prior> = priors
        .iter()
        .map(|r| Ok((r.station.clone(), r.prior()?)))
        .collect::<Result<_>>()?;
    let scored: Vec<(StationScores, usize)> = groups
        .par_iter()
        .map(|g| links::score_station(g, &priors, authorship, quantile))
        .collect::<Result<_>>()?;
    let unknown = scored.iter().map(|(_, u)| u).sum();
    Ok((scored.into_iter().map(|(s, _)| s).collect(), unknown))
}

/// Serialized next to the embedding TSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub geometry: Geometry,
    pub entities: usize,
    pub config: TrainConfig,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

pub fn write_embeddings(dir: &Path, table: &EmbeddingTable, config: &TrainConfig, report: &TrainReport) -> Result<()> {
    write_atomic(&dir.join(EMBEDDINGS_FILE), |w| table.write_tsv(w))?;
    let meta = EmbeddingMeta {
        geometry: table.geometry(),
        entities: table.len(),
        config: config.clone(),
        final_loss: report.final_loss,
        epoch_losses: report.epoch_losses.clone(),
    };
    write_atomic(&dir.join(EMBEDDINGS_META_FILE), |w| {
        serde_json::to_writer_pretty(&mut *w, &meta)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Loads an embedding TSV, taking the geometry from its sidecar when present.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let meta_path = path.with_extension("json");
    let geometry = if meta_path.exists() {
        let meta: EmbeddingMeta = serde_json::from_reader(open(&meta_path)?)?;
        meta.geometry
    } else {
        Geometry::Poincare
    };
    EmbeddingTable::read_tsv(open(path)?, geometry, &path.display().to_string())
}

pub fn read_graph(path: &Path) -> Result<HierarchyGraph> {
    HierarchyGraph::read_tsv(open(path)?, &path.display().to_string())
}

/// Runs stages `from..=to`, reading upstream artifacts from the output
/// directory when starting past the first stage. Errors are tagged with the
/// failing stage.
pub fn run_stages(config: &PipelineConfig, from: Stage, to: Stage) -> Result<Manifest> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    if from > to {
        return Err(Error::InvalidParameter(format!("stage {from} comes after {to}")).in_stage("config"));
    }
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::from(e).in_stage("config"))?;
    let mut manifest = previous_manifest(config, from).unwrap_or_else(|| Manifest {
        config: config.clone(),
        seeds: BTreeMap::new(),
        start_stage: from,
        end_stage: to,
        ingest: None,
        priors: None,
        scores: None,
        links: None,
        train: None,
        artifacts: Vec::new(),
    });
    manifest.config = config.clone();
    manifest.start_stage = from;
    manifest.end_stage = to;
    let runs = |s: Stage| from <= s && s <= to;

    let ingested = if from <= Stage::BuildLinks {
        let ing = ingest(&config.spins, &config.completions, &config.dims, config.max_days_presented)
            .map_err(|e| e.in_stage("ingest"))?;
        manifest.ingest = Some(ing.report.clone());
        Some(ing)
    } else {
        None
    };

    let mut priors: Option<Vec<PriorRecord>> = None;
    if runs(Stage::FitPriors) {
        let stage = |e: Error| e.in_stage(Stage::FitPriors.as_str());
        let groups = &ingested.as_ref().expect("ingested before fitting").groups;
        let fitted = fit_priors(groups);
        let mut counts = PriorCounts {
            stations: fitted.len(),
            ..Default::default()
        };
        for (_, source) in &fitted {
            match source {
                PriorSource::MaximumLikelihood => counts.maximum_likelihood += 1,
                PriorSource::MethodOfMoments => counts.method_of_moments += 1,
                PriorSource::Default => counts.default += 1,
            }
        }
        let records: Vec<PriorRecord> = fitted.into_iter().map(|(r, _)| r).collect();
        write_atomic(&config.artifact(PRIORS_FILE), |w| write_priors_jsonl(&records, w)).map_err(stage)?;
        info!("fitted {} priors ({} by maximum likelihood)", counts.stations, counts.maximum_likelihood);
        manifest.priors = Some(counts);
        priors = Some(records);
    }

    let mut scores: Option<Vec<StationScores>> = None;
    if runs(Stage::Score) {
        let stage = |e: Error| e.in_stage(Stage::Score.as_str());
        let ing = ingested.as_ref().expect("ingested before scoring");
        let priors = match priors.take() {
            Some(p) => p,
            None => read_priors_jsonl(&config.artifact(PRIORS_FILE)).map_err(stage)?,
        };
        let (scored, unknown) =
            score_all(&ing.groups, &priors, &ing.authorship, config.score_quantile).map_err(stage)?;
        if unknown > 0 {
            warn!("{unknown} scored tracks have no known artist and were left out of artist scores");
        }
        write_atomic(&config.artifact(SCORES_FILE), |w| links::write_scores_tsv(&scored, w)).map_err(stage)?;
        manifest.scores = Some(ScoreCounts {
            stations: scored.len(),
            track_scores: scored.iter().map(|s| s.track_scores.len()).sum(),
            artist_scores: scored.iter().map(|s| s.artist_scores.len()).sum(),
            unknown_artist_tracks: unknown,
        });
        scores = Some(scored);
    }

    let mut graph: Option<HierarchyGraph> = None;
    if runs(Stage::BuildLinks) {
        let stage = |e: Error| e.in_stage(Stage::BuildLinks.as_str());
        let ing = ingested.as_ref().expect("ingested before link building");
        let scores = match scores.take() {
            Some(s) => s,
            None => {
                let path = config.artifact(SCORES_FILE);
                links::read_scores_tsv(open(&path).map_err(stage)?, &path.display().to_string()).map_err(stage)?
            }
        };
        let built = links::build_links(&scores, &ing.dims, &config.link_config()).map_err(stage)?;
        write_atomic(&config.artifact(LINKS_FILE), |w| built.graph.write_tsv(w)).map_err(stage)?;
        info!(
            "{} links before pruning, {} after",
            built.unpruned.link_count(),
            built.graph.link_count()
        );
        manifest.links = Some(LinkCounts {
            links_in: built.unpruned.link_count(),
            entities_in: built.unpruned.entity_count(),
            links: built.graph.link_count(),
            entities: built.graph.entity_count(),
            per_kind: built.graph.link_kind_counts(),
        });
        graph = Some(built.graph);
    }

    if runs(Stage::Train) {
        let stage = |e: Error| e.in_stage(Stage::Train.as_str());
        let graph = match graph.take() {
            Some(g) => g,
            None => read_graph(&config.artifact(LINKS_FILE)).map_err(stage)?,
        };
        let (table, report) = poincare::train(&graph, &config.train).map_err(stage)?;
        write_embeddings(dir, &table, &config.train, &report).map_err(stage)?;
        manifest.seeds.insert("train".into(), config.train.rng_seed);
        manifest.train = Some(TrainCounts {
            entities: table.len(),
            rank: table.rank(),
            final_loss: report.final_loss,
        });
    }

    manifest.artifacts = [PRIORS_FILE, SCORES_FILE, LINKS_FILE, EMBEDDINGS_FILE, EMBEDDINGS_META_FILE]
        .into_iter()
        .filter(|name| config.artifact(name).exists())
        .map(String::from)
        .collect();
    write_atomic(&config.artifact(MANIFEST_FILE), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        w.write_all(b"\n")?;
        Ok(())
    })
    .map_err(|e| e.in_stage("manifest"))?;
    Ok(manifest)
}

fn previous_manifest(config: &PipelineConfig, from: Stage) -> Option<Manifest> {
    if from == Stage::FitPriors {
        return None;
    }
    let text = fs::read_to_string(config.artifact(MANIFEST_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

/// All stages end to end.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Manifest> {
    run_stages(config, Stage::FitPriors, Stage::Train)
}
