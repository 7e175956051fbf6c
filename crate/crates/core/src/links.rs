//! Turns posterior scores into directed links.
//!
//! Every child of a station is scored by a lower quantile of its posterior.
//! Child artists additionally receive the sum of their track scores within
//! the station. A station links to the children whose score is strictly
//! above the station's upper-quartile threshold, computed separately for
//! tracks and for artists. Genre and format labels always link.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::bayes::{ObservationGroup, Observations, Prior};
use crate::error::{Error, Result};
use crate::graph::{DirectedLink, EntityId, EntityKind, HierarchyGraph, LinkKind, DEFAULT_MIN_LINKS};

/// Default posterior quantile used as a link score.
pub const DEFAULT_SCORE_QUANTILE: f64 = 0.05;
/// Default percentile a child must exceed to be linked.
pub const DEFAULT_QUARTILE_LEVEL: f64 = 0.75;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredChild {
    pub child: EntityId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationScores {
    pub station: EntityId,
    pub track_scores: Vec<ScoredChild>,
    pub artist_scores: Vec<ScoredChild>,
}

impl StationScores {
    pub fn new(station: EntityId) -> Self {
        StationScores {
            station,
            track_scores: Vec::new(),
            artist_scores: Vec::new(),
        }
    }
}

/// Primary genre of an artist, or programming format of a live station.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DimensionalRecord {
    pub entity: EntityId,
    pub label: EntityId,
}

impl DimensionalRecord {
    pub fn new(entity: EntityId, label: EntityId) -> Result<Self> {
        let rec = DimensionalRecord { entity, label };
        rec.link()?;
        Ok(rec)
    }

    /// The label -> entity link this record stands for.
    pub fn link(&self) -> Result<DirectedLink> {
        let kind = match (self.label.kind(), self.entity.kind()) {
            (EntityKind::Genre, EntityKind::Artist) => LinkKind::GenreToArtist,
            (EntityKind::Format, EntityKind::LiveStation) => LinkKind::FormatToStation,
            (parent, child) => return Err(Error::NoLinkKind { parent, child }),
        };
        DirectedLink::new(self.label.clone(), self.entity.clone(), kind)
    }
}

/// Track -> authoring artist lookup.
pub type Authorship = HashMap<EntityId, EntityId>;

/// Scores every observation of `group` and aggregates child-artist scores.
///
/// Tracks whose artist is unknown still receive a track score but do not
/// contribute to any artist score; they are counted in the returned total.
/// For custom artist stations the seed artist is never its own child.
pub fn score_station(
    group: &ObservationGroup,
    priors: &HashMap<EntityId, Prior>,
    authorship: &Authorship,
    quantile: f64,
) -> Result<(StationScores, usize)> {
    let station = &group.station;
    let prior = priors
        .get(station)
        .ok_or_else(|| Error::MissingPrior(station.clone()))?;
    let mut out = StationScores::new(station.clone());
    match (&group.observations, prior) {
        (Observations::Binomial(obs), Prior::Beta(prior)) => {
            expect_station_kind(station, EntityKind::Artist)?;
            for o in obs {
                let score = prior.update(o).quantile(quantile)?;
                out.track_scores.push(ScoredChild {
                    child: o.child.clone(),
                    score,
                });
            }
        }
        (Observations::Poisson(obs), Prior::Gamma(prior)) => {
            expect_station_kind(station, EntityKind::LiveStation)?;
            for o in obs {
                let score = prior.update(o).quantile(quantile)?;
                out.track_scores.push(ScoredChild {
                    child: o.child.clone(),
                    score,
                });
            }
        }
        (obs, prior) => {
            return Err(Error::InvalidParameter(format!(
                "{station}: {:?} observations with a {:?} prior",
                obs.model(),
                prior.model()
            )))
        }
    }
    let mut sums: BTreeMap<EntityId, f64> = BTreeMap::new();
    let mut unknown = 0;
    for scored in &out.track_scores {
        match authorship.get(&scored.child) {
            Some(artist) if artist == station => {}
            Some(artist) => *sums.entry(artist.clone()).or_insert(0.0) += scored.score,
            None => unknown += 1,
        }
    }
    out.artist_scores = sums
        .into_iter()
        .map(|(child, score)| ScoredChild { child, score })
        .collect();
    Ok((out, unknown))
}

fn expect_station_kind(station: &EntityId, kind: EntityKind) -> Result<()> {
    if station.kind() == kind {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{station}: expected a {kind} station")))
    }
}

/// Percentile of `values` by linear interpolation between the closest
/// order statistics (the "type 7" definition). `values` must be nonempty.
pub fn percentile(values: &[f64], level: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Children whose score is strictly above the `level` percentile of the
/// list, in input order. A level of 0 disables the threshold and keeps
/// every child.
pub fn top_quantile(children: &[ScoredChild], level: f64) -> Vec<ScoredChild> {
    if children.is_empty() {
        return Vec::new();
    }
    if level <= 0.0 {
        return children.to_vec();
    }
    let scores: Vec<f64> = children.iter().map(|c| c.score).collect();
    let threshold = percentile(&scores, level);
    children
        .iter()
        .filter(|c| c.score > threshold)
        .cloned()
        .collect()
}

/// [`top_quantile`] at the upper quartile.
pub fn top_quartile(children: &[ScoredChild]) -> Vec<ScoredChild> {
    top_quantile(children, DEFAULT_QUARTILE_LEVEL)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub quartile_level: f64,
    pub min_links: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            quartile_level: DEFAULT_QUARTILE_LEVEL,
            min_links: DEFAULT_MIN_LINKS,
        }
    }
}

/// Result of link building: the full link set and its pruned form.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkBuild {
    pub unpruned: HierarchyGraph,
    pub graph: HierarchyGraph,
}

/// Assembles the six link kinds and prunes low-degree entities.
pub fn build_links(
    stations: &[StationScores],
    dims: &[DimensionalRecord],
    config: &LinkConfig,
) -> Result<LinkBuild> {
    let mut graph = HierarchyGraph::new();
    for scores in stations {
        let station = &scores.station;
        let (track_kind, artist_kind) = match station.kind() {
            EntityKind::Artist => (LinkKind::ArtistToTrack, LinkKind::ArtistToArtist),
            EntityKind::LiveStation => (LinkKind::StationToTrack, LinkKind::StationToArtist),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "{station}: {other} entities do not own stations"
                )))
            }
        };
        for c in top_quantile(&scores.track_scores, config.quartile_level) {
            graph.add(station.clone(), c.child, track_kind)?;
        }
        for c in top_quantile(&scores.artist_scores, config.quartile_level) {
            graph.add(station.clone(), c.child, artist_kind)?;
        }
    }
    let mut labels: HashMap<&EntityId, &EntityId> = HashMap::new();
    for rec in dims {
        if let Some(prev) = labels.insert(&rec.entity, &rec.label) {
            if prev != &rec.label {
                return Err(Error::InvalidParameter(format!(
                    "{} has two labels: {prev} and {}",
                    rec.entity, rec.label
                )));
            }
        }
        graph.insert(rec.link()?);
    }
    let pruned = graph.prune_low_degree(config.min_links);
    Ok(LinkBuild {
        unpruned: graph,
        graph: pruned,
    })
}

/// Writes the audit file: `station <TAB> child <TAB> score`, tracks first.
pub fn write_scores_tsv<W: Write>(stations: &[StationScores], mut out: W) -> Result<()> {
    for s in stations {
        for c in s.track_scores.iter().chain(&s.artist_scores) {
            writeln!(out, "{}\t{}\t{:?}", s.station, c.child, c.score)?;
        }
    }
    Ok(())
}

/// Reads an audit file back into per-station scores, preserving the order
/// in which stations first appear. Track and artist children are told
/// apart by their kind.
pub fn read_scores_tsv<R: BufRead>(input: R, source: &str) -> Result<Vec<StationScores>> {
    let mut order: Vec<StationScores> = Vec::new();
    let mut index: HashMap<EntityId, usize> = HashMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let [station, child, score] = fields[..] else {
            return Err(Error::parse(source, lineno, "expected 3 tab-separated fields"));
        };
        let wrap = |e: Error| Error::parse(source, lineno, e.to_string());
        let station: EntityId = station.parse().map_err(wrap)?;
        let child: EntityId = child.parse().map_err(wrap)?;
        let score: f64 = score
            .parse()
            .map_err(|_| Error::parse(source, lineno, format!("bad score {score:?}")))?;
        let slot = *index.entry(station.clone()).or_insert_with(|| {
            order.push(StationScores::new(station));
            order.len() - 1
        });
        let scored = ScoredChild { child, score };
        match scored.child.kind() {
            EntityKind::Track => order[slot].track_scores.push(scored),
            EntityKind::Artist => order[slot].artist_scores.push(scored),
            other => return Err(Error::parse(source, lineno, format!("{other} cannot be a scored child"))),
        }
    }
    Ok(order)
}
