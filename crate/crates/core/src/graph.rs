//! Typed entity universe and the directed hierarchy graph.
//!
//! Five entity kinds are connected by six link kinds. Every link kind fixes
//! its (parent kind, child kind) pair, so a `(parent, child)` pair identifies
//! its link kind uniquely. The graph is an unweighted, deduplicated edge set
//! with adjacency indexes for constant-time degree and neighbor lookups.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default pruning threshold on total link degree.
pub const DEFAULT_MIN_LINKS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Format,
    LiveStation,
    Artist,
    Genre,
    Track,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [
        EntityKind::Format,
        EntityKind::LiveStation,
        EntityKind::Artist,
        EntityKind::Genre,
        EntityKind::Track,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Format => "format",
            EntityKind::LiveStation => "live_station",
            EntityKind::Artist => "artist",
            EntityKind::Genre => "genre",
            EntityKind::Track => "track",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidEntity(s.to_string()))
    }
}

/// A typed entity. Keys are namespaced by kind, so `track:42` and
/// `artist:42` are distinct entities.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId {
    kind: EntityKind,
    key: String,
}

impl EntityId {
    /// Builds an id, rejecting empty keys and keys containing tabs or
    /// newlines (which would corrupt the TSV artifacts).
    pub fn new(kind: EntityKind, key: impl Into<String>) -> Result<Self> {
        let key = key.into();
        if key.is_empty() || key.contains(['\t', '\n', '\r']) {
            return Err(Error::InvalidEntity(format!("{kind}:{key}")));
        }
        Ok(EntityId { kind, key })
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn key(&self) -> &str {
        &self.key
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.key)
    }
}

impl FromStr for EntityId {
    type Err = Error;

    /// Parses `kind:key`; the key may itself contain colons.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, key) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidEntity(s.to_string()))?;
        EntityId::new(kind.parse()?, key)
    }
}

impl Serialize for EntityId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinkKind {
    ArtistToTrack,
    ArtistToArtist,
    GenreToArtist,
    StationToTrack,
    StationToArtist,
    FormatToStation,
}

impl LinkKind {
    pub const ALL: [LinkKind; 6] = [
        LinkKind::ArtistToTrack,
        LinkKind::ArtistToArtist,
        LinkKind::GenreToArtist,
        LinkKind::StationToTrack,
        LinkKind::StationToArtist,
        LinkKind::FormatToStation,
    ];

    /// The (parent kind, child kind) pair this link kind connects.
    pub fn endpoints(self) -> (EntityKind, EntityKind) {
        use EntityKind::*;
        match self {
            LinkKind::ArtistToTrack => (Artist, Track),
            LinkKind::ArtistToArtist => (Artist, Artist),
            LinkKind::GenreToArtist => (Genre, Artist),
            LinkKind::StationToTrack => (LiveStation, Track),
            LinkKind::StationToArtist => (LiveStation, Artist),
            LinkKind::FormatToStation => (Format, LiveStation),
        }
    }

    /// Inverse of [`LinkKind::endpoints`].
    pub fn between(parent: EntityKind, child: EntityKind) -> Result<Self> {
        LinkKind::ALL
            .into_iter()
            .find(|k| k.endpoints() == (parent, child))
            .ok_or(Error::NoLinkKind { parent, child })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LinkKind::ArtistToTrack => "artist_to_track",
            LinkKind::ArtistToArtist => "artist_to_artist",
            LinkKind::GenreToArtist => "genre_to_artist",
            LinkKind::StationToTrack => "station_to_track",
            LinkKind::StationToArtist => "station_to_artist",
            LinkKind::FormatToStation => "format_to_station",
        }
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LinkKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownLinkKind(s.to_string()))
    }
}

impl Serialize for LinkKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LinkKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A validated parent -> child link.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DirectedLink {
    parent: EntityId,
    child: EntityId,
    kind: LinkKind,
}

impl DirectedLink {
    pub fn new(parent: EntityId, child: EntityId, kind: LinkKind) -> Result<Self> {
        let (expected_parent, expected_child) = kind.endpoints();
        if parent.kind != expected_parent || child.kind != expected_child {
            return Err(Error::KindPair {
                kind,
                expected_parent,
                expected_child,
                parent: parent.kind,
                child: child.kind,
            });
        }
        if parent == child {
            return Err(Error::SelfLink(parent));
        }
        Ok(DirectedLink {
            parent,
            child,
            kind,
        })
    }

    /// Builds a link, inferring the kind from the endpoint kinds.
    pub fn infer(parent: EntityId, child: EntityId) -> Result<Self> {
        let kind = LinkKind::between(parent.kind, child.kind)?;
        DirectedLink::new(parent, child, kind)
    }

    pub fn parent(&self) -> &EntityId {
        &self.parent
    }

    pub fn child(&self) -> &EntityId {
        &self.child
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Adjacency {
    children: BTreeMap<LinkKind, BTreeSet<EntityId>>,
    parents: BTreeMap<LinkKind, BTreeSet<EntityId>>,
    degree: usize,
}

/// Deduplicated set of directed links plus adjacency indexes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HierarchyGraph {
    links: BTreeSet<DirectedLink>,
    adjacency: HashMap<EntityId, Adjacency>,
}

impl HierarchyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a link. Returns `false` if it was already present.
    pub fn insert(&mut self, link: DirectedLink) -> bool {
        if self.links.contains(&link) {
            return false;
        }
        let parent = self.adjacency.entry(link.parent.clone()).or_default();
        parent
            .children
            .entry(link.kind)
            .or_default()
            .insert(link.child.clone());
        parent.degree += 1;
        let child = self.adjacency.entry(link.child.clone()).or_default();
        child
            .parents
            .entry(link.kind)
            .or_default()
            .insert(link.parent.clone());
        child.degree += 1;
        self.links.insert(link);
        true
    }

    /// Validates and inserts `parent -> child` as a link of `kind`.
    pub fn add(&mut self, parent: EntityId, child: EntityId, kind: LinkKind) -> Result<bool> {
        Ok(self.insert(DirectedLink::new(parent, child, kind)?))
    }

    /// Consuming form of [`HierarchyGraph::insert`].
    pub fn with_link(mut self, link: DirectedLink) -> Self {
        self.insert(link);
        self
    }

    /// Total number of links incident to `entity`, over all kinds and both
    /// directions. Zero for unknown entities.
    pub fn degree(&self, entity: &EntityId) -> usize {
        self.adjacency.get(entity).map_or(0, |a| a.degree)
    }

    pub fn contains(&self, link: &DirectedLink) -> bool {
        self.links.contains(link)
    }

    pub fn contains_entity(&self, entity: &EntityId) -> bool {
        self.adjacency.contains_key(entity)
    }

    pub fn links(&self) -> impl Iterator<Item = &DirectedLink> {
        self.links.iter()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn entity_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// All entities appearing in any link, in sorted order.
    pub fn entities(&self) -> Vec<&EntityId> {
        let mut out: Vec<_> = self.adjacency.keys().collect();
        out.sort();
        out
    }

    /// Children of `entity` reached through links of `kind`.
    pub fn children_of_kind(&self, entity: &EntityId, kind: LinkKind) -> Option<&BTreeSet<EntityId>> {
        self.adjacency.get(entity)?.children.get(&kind)
    }

    /// Parents of `entity` reached through links of `kind`.
    pub fn parents_of_kind(&self, entity: &EntityId, kind: LinkKind) -> Option<&BTreeSet<EntityId>> {
        self.adjacency.get(entity)?.parents.get(&kind)
    }

    /// All children of `entity`, over every link kind.
    pub fn children(&self, entity: &EntityId) -> impl Iterator<Item = &EntityId> {
        self.adjacency
            .get(entity)
            .into_iter()
            .flat_map(|a| a.children.values().flatten())
    }

    pub fn is_child(&self, parent: &EntityId, child: &EntityId) -> bool {
        LinkKind::between(parent.kind, child.kind)
            .ok()
            .and_then(|kind| self.children_of_kind(parent, kind))
            .is_some_and(|set| set.contains(child))
    }

    /// Number of entities of each kind.
    pub fn kind_counts(&self) -> BTreeMap<EntityKind, usize> {
        let mut counts = BTreeMap::new();
        for id in self.adjacency.keys() {
            *counts.entry(id.kind).or_insert(0) += 1;
        }
        counts
    }

    /// Number of links of each kind.
    pub fn link_kind_counts(&self) -> BTreeMap<LinkKind, usize> {
        let mut counts = BTreeMap::new();
        for link in &self.links {
            *counts.entry(link.kind).or_insert(0) += 1;
        }
        counts
    }

    /// Removes every entity whose degree in `self` is below `min_links`,
    /// together with all of its links.
    ///
    /// Degrees are computed once on the input graph and the removal is not
    /// repeated, so survivors may end up with degree below `min_links`.
    pub fn prune_low_degree(&self, min_links: usize) -> HierarchyGraph {
        let keep = |id: &EntityId| self.degree(id) >= min_links;
        let mut out = HierarchyGraph::new();
        for link in &self.links {
            if keep(&link.parent) && keep(&link.child) {
                out.insert(link.clone());
            }
        }
        out
    }

    /// Writes the link list as `parent <TAB> child <TAB> link_kind` lines.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for link in &self.links {
            writeln!(out, "{}\t{}\t{}", link.parent, link.child, link.kind)?;
        }
        Ok(())
    }

    /// Reads a link list written by [`HierarchyGraph::write_tsv`].
    /// `source` labels error messages.
    pub fn read_tsv<R: BufRead>(input: R, source: &str) -> Result<HierarchyGraph> {
        let mut graph = HierarchyGraph::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            let [parent, child, kind] = fields[..] else {
                return Err(Error::parse(source, lineno, "expected 3 tab-separated fields"));
            };
            let parse = || -> Result<DirectedLink> {
                DirectedLink::new(parent.parse()?, child.parse()?, kind.parse()?)
            };
            graph.insert(parse().map_err(|e| Error::parse(source, lineno, e.to_string()))?);
        }
        Ok(graph)
    }
}

impl FromIterator<DirectedLink> for HierarchyGraph {
    fn from_iter<I: IntoIterator<Item = DirectedLink>>(iter: I) -> Self {
        let mut graph = HierarchyGraph::new();
        for link in iter {
            graph.insert(link);
        }
        graph
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(kind: EntityKind, key: &str) -> EntityId {
        EntityId::new(kind, key).unwrap()
    }

    fn artist(key: &str) -> EntityId {
        id(EntityKind::Artist, key)
    }

    fn track(key: &str) -> EntityId {
        id(EntityKind::Track, key)
    }

    #[test]
    fn single_insertion() {
        let mut g = HierarchyGraph::new();
        assert!(g.add(artist("a"), track("x"), LinkKind::ArtistToTrack).unwrap());
        assert_eq!(g.link_count(), 1);
        assert_eq!(g.entity_count(), 2);
    }

    #[test]
    fn duplicate_link_is_idempotent() {
        let mut g = HierarchyGraph::new();
        g.add(artist("a"), track("x"), LinkKind::ArtistToTrack).unwrap();
        assert!(!g.add(artist("a"), track("x"), LinkKind::ArtistToTrack).unwrap());
        assert_eq!(g.link_count(), 1);
        assert_eq!(g.degree(&artist("a")), 1);
    }

    #[test]
    fn kind_pair_mismatch_names_kinds() {
        let err = DirectedLink::new(id(EntityKind::Genre, "g"), track("x"), LinkKind::GenreToArtist)
            .unwrap_err();
        let msg = err.to_string();
        assert!(matches!(
            err,
            Error::KindPair {
                child: EntityKind::Track,
                expected_child: EntityKind::Artist,
                ..
            }
        ));
        assert!(msg.contains("track") && msg.contains("artist"), "{msg}");
    }

    #[test]
    fn self_link_rejected() {
        assert!(matches!(
            DirectedLink::new(artist("a"), artist("a"), LinkKind::ArtistToArtist),
            Err(Error::SelfLink(_))
        ));
    }

    #[test]
    fn degree_counts() {
        let mut g = HierarchyGraph::new();
        assert_eq!(g.degree(&artist("nobody")), 0);
        for t in ["1", "2", "3"] {
            g.add(artist("a"), track(t), LinkKind::ArtistToTrack).unwrap();
        }
        g.add(id(EntityKind::Genre, "rock"), artist("a"), LinkKind::GenreToArtist)
            .unwrap();
        g.add(artist("b"), artist("a"), LinkKind::ArtistToArtist).unwrap();
        assert_eq!(g.degree(&artist("a")), 5);
    }

    #[test]
    fn cyclic_artist_links_count_both_directions() {
        let mut g = HierarchyGraph::new();
        g.add(artist("a"), artist("b"), LinkKind::ArtistToArtist).unwrap();
        g.add(artist("b"), artist("a"), LinkKind::ArtistToArtist).unwrap();
        assert_eq!(g.degree(&artist("a")), 2);
        assert!(g.is_child(&artist("a"), &artist("b")));
        assert!(g.is_child(&artist("b"), &artist("a")));
    }

    fn star(hub_key: &str, leaves: usize, prefix: &str) -> Vec<DirectedLink> {
        (0..leaves)
            .map(|i| {
                DirectedLink::new(artist(hub_key), track(&format!("{prefix}{i}")), LinkKind::ArtistToTrack)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn prune_boundary_19_vs_20() {
        // 21 mutually linked artists (degree 40 each) keep both tracks'
        // parents alive; the tracks themselves sit at degree 19 and 20.
        let mut g = HierarchyGraph::new();
        for a in 0..21 {
            for b in 0..21 {
                if a != b {
                    g.add(artist(&a.to_string()), artist(&b.to_string()), LinkKind::ArtistToArtist)
                        .unwrap();
                }
            }
        }
        for a in 0..20 {
            g.add(artist(&a.to_string()), track("t20"), LinkKind::ArtistToTrack).unwrap();
            if a < 19 {
                g.add(artist(&a.to_string()), track("t19"), LinkKind::ArtistToTrack).unwrap();
            }
        }
        assert_eq!(g.degree(&track("t19")), 19);
        assert_eq!(g.degree(&track("t20")), 20);
        let pruned = g.prune_low_degree(DEFAULT_MIN_LINKS);
        assert!(!pruned.contains_entity(&track("t19")));
        assert!(pruned.contains_entity(&track("t20")));
        assert_eq!(pruned.degree(&track("t20")), 20);
        assert_eq!(pruned.entity_count(), 22);
    }

    #[test]
    fn prune_zero_is_noop() {
        let g: HierarchyGraph = star("h", 5, "t").into_iter().collect();
        assert_eq!(g.prune_low_degree(0), g);
    }

    #[test]
    fn star_graph_prunes_to_empty() {
        let g: HierarchyGraph = star("hub", 25, "leaf").into_iter().collect();
        assert_eq!(g.degree(&artist("hub")), 25);
        let pruned = g.prune_low_degree(20);
        assert!(pruned.is_empty());
        assert_eq!(pruned.entity_count(), 0);
    }

    #[test]
    fn kind_pair_table_is_total_and_invertible() {
        for kind in LinkKind::ALL {
            let (p, c) = kind.endpoints();
            assert_eq!(LinkKind::between(p, c).unwrap(), kind);
        }
        let pairs: BTreeSet<_> = LinkKind::ALL.iter().map(|k| k.endpoints()).collect();
        assert_eq!(pairs.len(), 6);
    }

    #[test]
    fn entity_id_parsing() {
        let e: EntityId = "track:abc:def".parse().unwrap();
        assert_eq!(e.kind(), EntityKind::Track);
        assert_eq!(e.key(), "abc:def");
        assert!("track:".parse::<EntityId>().is_err());
        assert!("song:x".parse::<EntityId>().is_err());
        assert!("nokind".parse::<EntityId>().is_err());
        assert_ne!(artist("42"), track("42"));
    }

    #[test]
    fn tsv_round_trip() {
        let mut g = HierarchyGraph::new();
        g.add(artist("a"), track("x y"), LinkKind::ArtistToTrack).unwrap();
        g.add(id(EntityKind::Format, "CHR"), id(EntityKind::LiveStation, "KISS"), LinkKind::FormatToStation)
            .unwrap();
        let mut buf = Vec::new();
        g.write_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("artist:a\ttrack:x y\tartist_to_track\n"));
        let back = HierarchyGraph::read_tsv(&buf[..], "mem").unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn tsv_errors_carry_line_numbers() {
        let input = "artist:a\ttrack:x\tartist_to_track\ngenre:g\ttrack:x\tgenre_to_artist\n";
        let err = HierarchyGraph::read_tsv(input.as_bytes(), "links.tsv").unwrap_err();
        assert!(err.to_string().starts_with("links.tsv:2:"), "{err}");
    }

    fn arb_link() -> impl Strategy<Value = DirectedLink> {
        (0usize..6, 0u8..6, 0u8..6).prop_filter_map("self link", |(k, p, c)| {
            let kind = LinkKind::ALL[k];
            let (pk, ck) = kind.endpoints();
            DirectedLink::new(id(pk, &p.to_string()), id(ck, &c.to_string()), kind).ok()
        })
    }

    proptest! {
        #[test]
        fn add_is_idempotent(links in prop::collection::vec(arb_link(), 0..40), extra in arb_link()) {
            let g: HierarchyGraph = links.into_iter().collect();
            let once = g.clone().with_link(extra.clone());
            let twice = once.clone().with_link(extra);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn prune_keeps_only_high_degree(links in prop::collection::vec(arb_link(), 0..60), min in 0usize..6) {
            let g: HierarchyGraph = links.into_iter().collect();
            let pruned = g.prune_low_degree(min);
            for e in pruned.entities() {
                prop_assert!(g.degree(e) >= min);
            }
            prop_assert!(pruned.link_count() <= g.link_count());
            let total: usize = pruned.entities().iter().map(|e| pruned.degree(e)).sum();
            prop_assert_eq!(total, 2 * pruned.link_count());
        }
    }
}
