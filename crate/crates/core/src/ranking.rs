//! Turning strength-annotated comparisons into anchored ranking targets.
//!
//! Pipeline: normalize to (winner, loser), stratify by metadata, split each
//! stratum into tie-free partitions, sort each partition by ascending strength
//! signal. Rankings can additionally be packed into fixed-capacity batches.
//!
//! The partitioning and packing functions are generic over [`HasStrength`] so
//! they work for any strength-annotated record.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::synth::{Comparison, Item, Preference};

pub trait HasStrength {
    /// Strength signal; smaller values rank higher.
    fn strength(&self) -> f64;
}

/// A comparison reoriented so that the preferred item comes first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedComparison {
    pub winner: Item,
    pub loser: Item,
    pub strength: f64,
}

impl HasStrength for NormalizedComparison {
    fn strength(&self) -> f64 {
        self.strength
    }
}

impl HasStrength for Comparison {
    fn strength(&self) -> f64 {
        self.strength
    }
}

pub fn normalize(c: &Comparison) -> NormalizedComparison {
    let (winner, loser) = match c.preference {
        Preference::A => (c.a.clone(), c.b.clone()),
        Preference::B => (c.b.clone(), c.a.clone()),
    };
    NormalizedComparison {
        winner,
        loser,
        strength: c.strength,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratum<K, T> {
    pub key: K,
    pub members: Vec<T>,
}

/// Groups `items` by `key`, strata ordered by key, members in input order.
pub fn stratify<T, K, F>(items: Vec<T>, key: F) -> Vec<Stratum<K, T>>
where
    K: Ord,
    F: Fn(&T) -> K,
{
    let mut groups: BTreeMap<K, Vec<T>> = BTreeMap::new();
    for item in items {
        groups.entry(key(&item)).or_default().push(item);
    }
    groups
        .into_iter()
        .map(|(key, members)| Stratum { key, members })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T> {
    pub members: Vec<T>,
}

/// Splits into runs of bitwise-equal strength, in ascending strength order.
fn tie_groups<T: HasStrength>(mut members: Vec<T>) -> Vec<Vec<T>> {
    members.sort_by(|x, y| x.strength().total_cmp(&y.strength()));
    let mut groups: Vec<Vec<T>> = Vec::new();
    for m in members {
        match groups.last_mut() {
            Some(g) if g[0].strength().total_cmp(&m.strength()) == Ordering::Equal => g.push(m),
            _ => groups.push(vec![m]),
        }
    }
    groups
}

/// Splits a stratum into partitions that contain no two equal strengths.
///
/// With `max_size = Some(s)` there are `ceil(n / s)` partitions, otherwise as
/// many as the largest tie group. Tie groups are dealt round-robin over the
/// partitions with a cursor that carries over between groups.
pub fn partition_tie_aware<T: HasStrength>(
    members: Vec<T>,
    max_size: Option<usize>,
) -> Result<Vec<Partition<T>>> {
    if members.is_empty() {
        return Err(Error::Empty("stratum"));
    }
    let n = members.len();
    let groups = tie_groups(members);
    let largest = groups.iter().map(Vec::len).max().unwrap_or(0);
    let k = match max_size {
        Some(0) => return Err(Error::InvalidConfig("max_size must be at least 1".into())),
        Some(s) => n.div_ceil(s),
        None => largest,
    };
    if k < largest {
        let offending = groups.iter().find(|g| g.len() == largest).unwrap();
        return Err(Error::ResidualTie {
            strength: offending[0].strength(),
            group_size: largest,
            partitions: k,
        });
    }
    let mut partitions: Vec<Vec<T>> = (0..k).map(|_| Vec::new()).collect();
    let mut cursor = 0;
    for group in groups {
        for m in group {
            partitions[cursor].push(m);
            cursor = (cursor + 1) % k;
        }
    }
    Ok(partitions
        .into_iter()
        .map(|members| Partition { members })
        .collect())
}

/// Strength-sorted ranking, strongest (smallest signal) first. A virtual
/// anchor with score 0 is implicitly ranked below the last element.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingTarget<T> {
    ordered: Vec<T>,
}

impl<T> RankingTarget<T> {
    pub fn ordered(&self) -> &[T] {
        &self.ordered
    }

    pub fn len(&self) -> usize {
        self.ordered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.ordered
    }
}

/// Sorts a partition by ascending strength. Fails on ties.
pub fn sort_by_strength<T: HasStrength>(partition: Partition<T>) -> Result<RankingTarget<T>> {
    let mut ordered = partition.members;
    if ordered.is_empty() {
        return Err(Error::Empty("partition"));
    }
    ordered.sort_by(|x, y| x.strength().total_cmp(&y.strength()));
    if let Some(w) = ordered
        .windows(2)
        .find(|w| w[0].strength().total_cmp(&w[1].strength()) == Ordering::Equal)
    {
        return Err(Error::TiedStrengths(w[0].strength()));
    }
    Ok(RankingTarget { ordered })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedBatch<T> {
    pub rankings: Vec<RankingTarget<T>>,
    pub capacity: usize,
}

impl<T> PackedBatch<T> {
    pub fn len(&self) -> usize {
        self.rankings.iter().map(RankingTarget::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }
}

struct Fragment<T> {
    members: Vec<T>,
    seq: usize,
    shuffled: bool,
}

impl<T> PartialEq for Fragment<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T> Eq for Fragment<T> {}

impl<T> PartialOrd for Fragment<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Fragment<T> {
    // largest first, earliest insertion first among equal sizes
    fn cmp(&self, other: &Self) -> Ordering {
        self.members
            .len()
            .cmp(&other.members.len())
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Largest-first best-fit packing of rankings into batches of `capacity`
/// comparisons.
///
/// Batches are pre-sized so that all of them are full except possibly the
/// last. A fragment that fits nowhere is split: the batch with the most free
/// space receives the largest prefix that fits and the suffix goes back into
/// the heap. Each fragment is shuffled once before its first placement so that
/// split points are random; every emitted piece is re-sorted by strength.
pub fn pack_batches<T: HasStrength, R: Rng + ?Sized>(
    rankings: Vec<RankingTarget<T>>,
    capacity: usize,
    rng: &mut R,
) -> Result<Vec<PackedBatch<T>>> {
    if capacity == 0 {
        return Err(Error::InvalidConfig("batch capacity must be at least 1".into()));
    }
    let total: usize = rankings.iter().map(RankingTarget::len).sum();
    if total == 0 {
        return Ok(Vec::new());
    }
    let num_batches = total.div_ceil(capacity);
    let mut free: Vec<usize> = vec![capacity; num_batches];
    free[num_batches - 1] = total - (num_batches - 1) * capacity;
    let mut batches: Vec<PackedBatch<T>> = (0..num_batches)
        .map(|_| PackedBatch {
            rankings: Vec::new(),
            capacity,
        })
        .collect();

    let mut seq = 0;
    let mut heap: BinaryHeap<Fragment<T>> = rankings
        .into_iter()
        .filter(|r| !r.is_empty())
        .map(|r| {
            seq += 1;
            Fragment {
                members: r.ordered,
                seq,
                shuffled: false,
            }
        })
        .collect();

    while let Some(mut frag) = heap.pop() {
        if !frag.shuffled {
            frag.members.shuffle(rng);
            frag.shuffled = true;
        }
        let size = frag.members.len();
        let best_fit = free
            .iter()
            .enumerate()
            .filter(|(_, &f)| f >= size)
            .min_by_key(|(i, &f)| (f, *i))
            .map(|(i, _)| i);
        let (target, take) = match best_fit {
            Some(i) => (i, size),
            None => {
                let (i, &f) = free
                    .iter()
                    .enumerate()
                    .max_by(|(i, f), (j, g)| f.cmp(g).then(j.cmp(i)))
                    .expect("at least one batch");
                debug_assert!(f > 0, "free space always matches unplaced comparisons");
                (i, f)
            }
        };
        let suffix = frag.members.split_off(take);
        let mut piece = frag.members;
        piece.sort_by(|x, y| x.strength().total_cmp(&y.strength()));
        free[target] -= take;
        batches[target].rankings.push(RankingTarget { ordered: piece });
        if !suffix.is_empty() {
            seq += 1;
            heap.push(Fragment {
                members: suffix,
                seq,
                shuffled: true,
            });
        }
    }
    Ok(batches)
}

/// Full ranking construction: stratify by stratum id, tie-aware partitioning,
/// strength sort.
pub fn build_rankings(
    comparisons: &[Comparison],
    max_size: Option<usize>,
) -> Result<Vec<RankingTarget<NormalizedComparison>>> {
    let strata = stratify(comparisons.iter().collect(), |c| c.stratum);
    let mut rankings = Vec::new();
    for stratum in strata {
        let normalized: Vec<NormalizedComparison> =
            stratum.members.into_iter().map(normalize).collect();
        for partition in partition_tie_aware(normalized, max_size)? {
            rankings.push(sort_by_strength(partition)?);
        }
    }
    Ok(rankings)
}

/// Per-stratum partitioning statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumStats {
    pub stratum: usize,
    pub comparisons: usize,
    pub tie_groups: usize,
    pub largest_tie_group: usize,
    pub partitions: usize,
    pub smallest_partition: usize,
    pub largest_partition: usize,
}

pub fn stratum_stats(comparisons: &[Comparison], max_size: Option<usize>) -> Result<Vec<StratumStats>> {
    let strata = stratify(comparisons.iter().collect(), |c| c.stratum);
    strata
        .into_iter()
        .map(|s| {
            let n = s.members.len();
            let strengths: Vec<f64> = s.members.iter().map(|c| c.strength).collect();
            let groups = tie_groups(strengths.iter().map(|&x| Signal(x)).collect());
            let parts = partition_tie_aware(s.members, max_size)?;
            Ok(StratumStats {
                stratum: s.key,
                comparisons: n,
                tie_groups: groups.len(),
                largest_tie_group: groups.iter().map(Vec::len).max().unwrap_or(0),
                partitions: parts.len(),
                smallest_partition: parts.iter().map(|p| p.members.len()).min().unwrap_or(0),
                largest_partition: parts.iter().map(|p| p.members.len()).max().unwrap_or(0),
            })
        })
        .collect()
}

impl<T: HasStrength> HasStrength for &T {
    fn strength(&self) -> f64 {
        (**self).strength()
    }
}

/// Bare strength value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Signal(pub f64);

impl HasStrength for Signal {
    fn strength(&self) -> f64 {
        self.0
    }
}
