//! Exact nearest-neighbour queries over an [`EmbeddingTable`].

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, EntityKind};
use crate::poincare::EmbeddingTable;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub seeds: Vec<EntityId>,
    pub target_kind: EntityKind,
    pub k: usize,
    #[serde(default = "default_exclude")]
    pub exclude_seeds: bool,
}

fn default_exclude() -> bool {
    true
}

impl Query {
    pub fn new(seeds: Vec<EntityId>, target_kind: EntityKind, k: usize) -> Result<Self> {
        let q = Query {
            seeds,
            target_kind,
            k,
            exclude_seeds: true,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn including_seeds(mut self) -> Self {
        self.exclude_seeds = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("query needs at least one seed".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub entity: EntityId,
    pub distance: f64,
}

fn by_distance_then_id(a: &RankedResult, b: &RankedResult) -> Ordering {
    a.distance.total_cmp(&b.distance).then_with(|| a.entity.cmp(&b.entity))
}

/// The `k` entities of `target_kind` closest to `seed`, seed excluded.
pub fn nearest(table: &EmbeddingTable, seed: &EntityId, target_kind: EntityKind, k: usize) -> Result<Vec<RankedResult>> {
    recommend(table, &Query::new(vec![seed.clone()], target_kind, k)?)
}

/// Scores each candidate by its minimum distance to any seed and returns the
/// best `k`.
pub fn recommend(table: &EmbeddingTable, query: &Query) -> Result<Vec<RankedResult>> {
    recommend_filtered(table, query, |_| true)
}

/// [`recommend`] restricted to candidates accepted by `keep`.
pub fn recommend_filtered(
    table: &EmbeddingTable,
    query: &Query,
    keep: impl Fn(&EntityId) -> bool,
) -> Result<Vec<RankedResult>> {
    query.validate()?;
    let missing: Vec<EntityId> = query.seeds.iter().filter(|s| table.index_of(s).is_none()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingEntities(missing));
    }
    let seed_rows: Vec<usize> = query.seeds.iter().filter_map(|s| table.index_of(s)).collect();
    let mut results: Vec<RankedResult> = table
        .ids()
        .iter()
        .enumerate()
        .filter(|(i, id)| {
            id.kind() == query.target_kind && !(query.exclude_seeds && seed_rows.contains(i)) && keep(id)
        })
        .map(|(i, id)| RankedResult {
            entity: id.clone(),
            distance: seed_rows.iter().map(|&s| table.distance(s, i)).fold(f64::INFINITY, f64::min),
        })
        .collect();
    if results.len() > query.k {
        results.select_nth_unstable_by(query.k - 1, by_distance_then_id);
        results.truncate(query.k);
    }
    results.sort_by(by_distance_then_id);
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poincare::{poincare_distance, Geometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn id(kind: EntityKind, key: &str) -> EntityId {
        EntityId::new(kind, key).unwrap()
    }

    fn table(rows: &[(EntityId, [f64; 2])]) -> EmbeddingTable {
        EmbeddingTable::new(
            2,
            Geometry::Poincare,
            rows.iter().map(|(i, _)| i.clone()).collect(),
            rows.iter().flat_map(|(_, p)| *p).collect(),
        )
        .unwrap()
    }

    #[test]
    fn nearest_along_an_axis() {
        let seed = id(EntityKind::Artist, "s");
        let t = table(&[
            (seed.clone(), [0.0, 0.0]),
            (id(EntityKind::Track, "far"), [0.8, 0.0]),
            (id(EntityKind::Track, "near"), [0.2, 0.0]),
            (id(EntityKind::Track, "mid"), [0.5, 0.0]),
            (id(EntityKind::Artist, "x"), [0.1, 0.0]),
        ]);
        let r = nearest(&t, &seed, EntityKind::Track, 2).unwrap();
        let keys: Vec<&str> = r.iter().map(|x| x.entity.key()).collect();
        assert_eq!(keys, ["near", "mid"]);
        assert_eq!(nearest(&t, &seed, EntityKind::Track, 10).unwrap().len(), 3);
        assert!(nearest(&t, &seed, EntityKind::Genre, 3).unwrap().is_empty());
        assert!(matches!(
            nearest(&t, &id(EntityKind::Artist, "nope"), EntityKind::Track, 1),
            Err(Error::MissingEntities(_))
        ));
    }

    #[test]
    fn ties_break_by_key() {
        let seed = id(EntityKind::Artist, "s");
        let t = table(&[
            (seed.clone(), [0.0, 0.0]),
            (id(EntityKind::Track, "b"), [0.0, 0.3]),
            (id(EntityKind::Track, "a"), [0.3, 0.0]),
            (id(EntityKind::Track, "c"), [-0.3, 0.0]),
        ]);
        let r = nearest(&t, &seed, EntityKind::Track, 2).unwrap();
        assert_eq!(r[0].entity.key(), "a");
        assert_eq!(r[1].entity.key(), "b");
        assert_eq!(r[0].distance, r[1].distance);
    }

    #[test]
    fn two_seed_clusters_interleave() {
        let s1 = id(EntityKind::Artist, "s1");
        let s2 = id(EntityKind::Artist, "s2");
        let rows = [
            (s1.clone(), [0.5, 0.0]),
            (s2.clone(), [-0.5, 0.0]),
            (id(EntityKind::Track, "p1"), [0.5, 0.05]),
            (id(EntityKind::Track, "p2"), [0.5, 0.2]),
            (id(EntityKind::Track, "q1"), [-0.5, 0.1]),
            (id(EntityKind::Track, "q2"), [-0.5, -0.3]),
        ];
        let t = table(&rows);
        let query = Query::new(vec![s1, s2], EntityKind::Track, 4).unwrap();
        let got = recommend(&t, &query).unwrap();
        // hand-computed min-over-seeds distances
        let mut expected: Vec<(f64, &str)> = rows[2..]
            .iter()
            .map(|(e, p)| {
                let d = poincare_distance(p, &rows[0].1).unwrap().min(poincare_distance(p, &rows[1].1).unwrap());
                (d, e.key())
            })
            .collect();
        expected.sort_by(|a, b| a.0.total_cmp(&b.0));
        let keys: Vec<&str> = got.iter().map(|r| r.entity.key()).collect();
        assert_eq!(keys, ["p1", "q1", "p2", "q2"]);
        assert_eq!(keys, expected.iter().map(|e| e.1).collect::<Vec<_>>());
    }

    #[test]
    fn seeds_excluded_unless_asked() {
        let s = id(EntityKind::Track, "s");
        let t = table(&[(s.clone(), [0.1, 0.1]), (id(EntityKind::Track, "o"), [0.4, 0.1])]);
        let q = Query::new(vec![s.clone()], EntityKind::Track, 5).unwrap();
        assert!(recommend(&t, &q).unwrap().iter().all(|r| r.entity != s));
        let r = recommend(&t, &q.including_seeds()).unwrap();
        assert_eq!(r[0].entity, s);
        assert_eq!(r[0].distance, 0.0);
    }

    #[test]
    fn filter_hook_drops_candidates() {
        let s = id(EntityKind::Artist, "s");
        let t = table(&[
            (s.clone(), [0.0, 0.0]),
            (id(EntityKind::Track, "keep"), [0.4, 0.0]),
            (id(EntityKind::Track, "drop"), [0.1, 0.0]),
        ]);
        let q = Query::new(vec![s], EntityKind::Track, 5).unwrap();
        let r = recommend_filtered(&t, &q, |e| e.key() != "drop").unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].entity.key(), "keep");
    }

    #[test]
    fn single_seed_recommend_equals_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<(EntityId, [f64; 2])> = (0..60)
            .map(|i| {
                let kind = if i % 3 == 0 { EntityKind::Artist } else { EntityKind::Track };
                (id(kind, &format!("e{i}")), [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)])
            })
            .collect();
        let t = table(&rows);
        for (seed, _) in rows.iter().take(10) {
            let q = Query::new(vec![seed.clone()], EntityKind::Track, 7).unwrap();
            assert_eq!(recommend(&t, &q).unwrap(), nearest(&t, seed, EntityKind::Track, 7).unwrap());
        }
    }
}
