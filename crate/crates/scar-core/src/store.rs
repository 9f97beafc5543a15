//! In-memory embedding tables: validation, splitting, and subsampling.
//!
//! An [`EmbeddingTable`] is the single source of sample data for the whole
//! pipeline: an `n x d` matrix of `f32` vectors with unique ids, optional
//! class labels, and optional train/test tags. Tables are immutable after
//! construction; every derived table is a new value.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;

use crate::error::{Result, ScarError};
use crate::seed;

/// Per-sample train/test tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

/// An `n x d` table of embedding vectors with ids and optional metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<u64>,
    vectors: Vec<f32>,
    dim: usize,
    labels: Option<Vec<u32>>,
    num_classes: Option<usize>,
    split: Option<Vec<SplitTag>>,
    modality: String,
}

impl EmbeddingTable {
    /// Build a table and check every invariant: row dimensions, id
    /// uniqueness, finite components, and label range/occupancy.
    pub fn new(
        ids: Vec<u64>,
        vectors: Vec<f32>,
        dim: usize,
        labels: Option<(Vec<u32>, usize)>,
        split: Option<Vec<SplitTag>>,
        modality: impl Into<String>,
    ) -> Result<Self> {
        let n = ids.len();
        if dim == 0 {
            return Err(ScarError::DimensionMismatch {
                row: 0,
                expected: 1,
                got: 0,
            });
        }
        if vectors.len() != n * dim {
            let row = vectors.len() / dim;
            return Err(ScarError::DimensionMismatch {
                row,
                expected: dim,
                got: vectors.len() - row * dim,
            });
        }
        for (row, chunk) in vectors.chunks_exact(dim).enumerate() {
            if chunk.iter().any(|v| !v.is_finite()) {
                return Err(ScarError::NonFiniteValue { row });
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(*id) {
                return Err(ScarError::DuplicateId(*id));
            }
        }
        let (labels, num_classes) = match labels {
            Some((values, k)) => {
                if values.len() != n {
                    return Err(ScarError::LengthMismatch(format!(
                        "{} labels for {} rows",
                        values.len(),
                        n
                    )));
                }
                if k == 0 {
                    return Err(ScarError::InvalidLabels("declared k = 0".into()));
                }
                let mut occupied = vec![false; k];
                for (row, &c) in values.iter().enumerate() {
                    if c as usize >= k {
                        return Err(ScarError::InvalidLabels(format!(
                            "label {c} at row {row} outside [0, {k})"
                        )));
                    }
                    occupied[c as usize] = true;
                }
                if let Some(missing) = occupied.iter().position(|o| !o) {
                    return Err(ScarError::InvalidLabels(format!(
                        "declared class {missing} never occurs"
                    )));
                }
                (Some(values), Some(k))
            }
            None => (None, None),
        };
        if let Some(tags) = &split {
            if tags.len() != n {
                return Err(ScarError::LengthMismatch(format!(
                    "{} split tags for {n} rows",
                    tags.len()
                )));
            }
        }
        Ok(Self {
            ids,
            vectors,
            dim,
            labels,
            num_classes,
            split,
            modality: modality.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn split_tags(&self) -> Option<&[SplitTag]> {
        self.split.as_deref()
    }

    pub fn modality(&self) -> &str {
        &self.modality
    }

    /// Stable fingerprint of the table identity (ids and shape), used to tie
    /// a [`SubsetSelection`] back to its parent.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        mix(self.ids.len() as u64);
        mix(self.dim as u64);
        for id in &self.ids {
            mix(*id);
        }
        h
    }

    /// Number of samples per class. Errors if the table is unlabeled.
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let labels = self.labels.as_ref().ok_or(ScarError::MissingLabels)?;
        let k = self.num_classes.unwrap();
        let mut counts = vec![0usize; k];
        for &c in labels {
            counts[c as usize] += 1;
        }
        Ok(counts)
    }

    /// Row indices grouped by class, each group in table order.
    pub fn rows_by_class(&self) -> Result<Vec<Vec<usize>>> {
        let labels = self.labels.as_ref().ok_or(ScarError::MissingLabels)?;
        let k = self.num_classes.unwrap();
        let mut groups = vec![Vec::new(); k];
        for (row, &c) in labels.iter().enumerate() {
            groups[c as usize].push(row);
        }
        Ok(groups)
    }

    /// New table holding the given rows, in the given order.
    pub fn take_rows(&self, rows: &[usize]) -> Self {
        let mut ids = Vec::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            ids.push(self.ids[r]);
            vectors.extend_from_slice(self.row(r));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| l[r]).collect());
        let split = self
            .split
            .as_ref()
            .map(|s| rows.iter().map(|&r| s[r]).collect());
        Self {
            ids,
            vectors,
            dim: self.dim,
            labels,
            num_classes: self.num_classes,
            split,
            modality: self.modality.clone(),
        }
    }

    /// Copy with every row scaled to unit Euclidean norm. All-zero rows are
    /// kept as they are.
    pub fn l2_normalized(&self) -> Self {
        let mut out = self.clone();
        for row in out.vectors.chunks_exact_mut(self.dim) {
            let norm = row
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                for v in row {
                    *v = (f64::from(*v) / norm) as f32;
                }
            }
        }
        out
    }

    /// Same vectors and ids with labels replaced (e.g. by pseudo-labels).
    pub fn with_labels(&self, labels: Vec<u32>, k: usize) -> Result<Self> {
        Self::new(
            self.ids.clone(),
            self.vectors.clone(),
            self.dim,
            Some((labels, k)),
            self.split.clone(),
            self.modality.clone(),
        )
    }

    /// Split into (train, test) by the stored tags, or `None` if untagged.
    pub fn partition_by_split(&self) -> Option<(Self, Self)> {
        let tags = self.split.as_ref()?;
        let train: Vec<usize> = (0..self.len())
            .filter(|&i| tags[i] == SplitTag::Train)
            .collect();
        let test: Vec<usize> = (0..self.len())
            .filter(|&i| tags[i] == SplitTag::Test)
            .collect();
        Some((self.take_rows(&train), self.take_rows(&test)))
    }

    /// Append `other`'s rows to this table. Dimensions and label layouts
    /// must agree and ids must stay unique.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if other.dim != self.dim {
            return Err(ScarError::DimensionMismatch {
                row: 0,
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        let mut vectors = self.vectors.clone();
        vectors.extend_from_slice(&other.vectors);
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => {
                if self.num_classes != other.num_classes {
                    return Err(ScarError::InvalidLabels(
                        "tables declare different class counts".into(),
                    ));
                }
                let mut l = a.clone();
                l.extend_from_slice(b);
                Some((l, self.num_classes.unwrap()))
            }
            (None, None) => None,
            _ => {
                return Err(ScarError::InvalidLabels(
                    "cannot concatenate labeled with unlabeled table".into(),
                ))
            }
        };
        let split = match (&self.split, &other.split) {
            (Some(a), Some(b)) => {
                let mut s = a.clone();
                s.extend_from_slice(b);
                Some(s)
            }
            _ => None,
        };
        Self::new(ids, vectors, self.dim, labels, split, self.modality.clone())
    }

    /// Class-stratified split into `(primary, reserve)`.
    ///
    /// Per class `c`, the primary side receives `round(ratio * |c|)` samples
    /// (ties to even); the remainder goes to the reserve side. Deterministic
    /// under `seed`.
    pub fn stratified_split(&self, ratio: f64, seed: u64) -> Result<(Self, Self)> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(ScarError::RatioOutOfRange(ratio));
        }
        let groups = self.rows_by_class()?;
        for (c, g) in groups.iter().enumerate() {
            if g.len() < 2 {
                return Err(ScarError::ClassTooSmall(c as u32));
            }
        }
        let mut primary = Vec::new();
        let mut reserve = Vec::new();
        for (c, group) in groups.iter().enumerate() {
            let mut order = group.clone();
            order.shuffle(&mut seed::rng(seed, "stratified_split", c as u64));
            let take = (ratio * group.len() as f64).round_ties_even() as usize;
            primary.extend_from_slice(&order[..take]);
            reserve.extend_from_slice(&order[take..]);
        }
        primary.sort_unstable();
        reserve.sort_unstable();
        Ok((self.take_rows(&primary), self.take_rows(&reserve)))
    }

    /// Draw a subset of `round(ratio * n)` ids (within +/-1), stratified by
    /// label when labels exist and uniform otherwise.
    ///
    /// Selections for the same `(table, seed)` form a nested ladder: each
    /// class keeps one seeded shuffle and a selection is a prefix of it, so a
    /// smaller ratio's ids are a subset of a larger ratio's.
    pub fn subsample(&self, ratio: f64, seed: u64) -> Result<SubsetSelection> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(ScarError::RatioOutOfRange(ratio));
        }
        let groups = match self.labels {
            Some(_) => self.rows_by_class()?,
            None => vec![(0..self.len()).collect()],
        };
        let total = (ratio * self.len() as f64).round_ties_even() as usize;
        let counts = apportion(&groups.iter().map(Vec::len).collect::<Vec<_>>(), total);
        let mut rows = Vec::with_capacity(total);
        for (c, group) in groups.iter().enumerate() {
            let mut order = group.clone();
            order.shuffle(&mut seed::rng(seed, "subsample", c as u64));
            rows.extend_from_slice(&order[..counts[c]]);
        }
        rows.sort_unstable();
        Ok(SubsetSelection {
            parent: self.fingerprint(),
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            ratio,
            seed,
        })
    }

    /// Materialize a selection drawn from this table.
    pub fn take_selection(&self, selection: &SubsetSelection) -> Result<Self> {
        if selection.parent != self.fingerprint() {
            return Err(ScarError::InvalidConfig(
                "selection does not belong to this table".into(),
            ));
        }
        let index: HashMap<u64, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(row, &id)| (id, row))
            .collect();
        let rows: Vec<usize> = selection.ids.iter().map(|id| index[id]).collect();
        Ok(self.take_rows(&rows))
    }
}

/// A deterministic subset of a parent table.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSelection {
    /// Fingerprint of the parent table.
    pub parent: u64,
    /// Selected ids in parent row order.
    pub ids: Vec<u64>,
    /// Requested sampling ratio in (0, 1].
    pub ratio: f64,
    /// Seed that produced the selection.
    pub seed: u64,
}

/// Distribute `total` units across groups proportionally to their sizes.
///
/// Sainte-Lague (highest averages) rounding: house-monotone, so a selection
/// for a smaller total is always contained in one for a larger total, and the
/// grand total is met exactly. Ties go to the lowest group index; no group
/// exceeds its size.
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    debug_assert!(total <= sizes.iter().sum::<usize>());
    let mut counts = vec![0usize; sizes.len()];
    for _ in 0..total {
        let mut best: Option<(f64, usize)> = None;
        for (c, (&size, &have)) in sizes.iter().zip(counts.iter()).enumerate() {
            if have >= size {
                continue;
            }
            let priority = size as f64 / (2 * have + 1) as f64;
            if best.map_or(true, |(p, _)| priority > p) {
                best = Some((priority, c));
            }
        }
        let (_, c) = best.expect("total exceeds capacity");
        counts[c] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    pub(crate) fn toy_table(n: usize, k: usize, seed: u64) -> EmbeddingTable {
        use rand::Rng;
        let mut rng = seed::rng(seed, "toy", 0);
        let dim = 3;
        let ids = (0..n as u64).collect();
        let vectors = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|i| (i % k) as u32).collect();
        EmbeddingTable::new(ids, vectors, dim, Some((labels, k)), None, "toy").unwrap()
    }

    #[test]
    fn rejects_non_finite() {
        let err = EmbeddingTable::new(
            vec![0, 1, 2],
            vec![0.0, 1.0, 2.0, 3.0, f32::NAN, 5.0],
            2,
            None,
            None,
            "m",
        )
        .unwrap_err();
        assert!(matches!(err, ScarError::NonFiniteValue { row: 2 }));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let err =
            EmbeddingTable::new(vec![1, 1, 2], vec![0.0; 3], 1, None, None, "m").unwrap_err();
        assert!(matches!(err, ScarError::DuplicateId(1)));
    }

    #[test]
    fn rejects_unoccupied_class() {
        let err = EmbeddingTable::new(
            vec![0, 1],
            vec![0.0, 1.0],
            1,
            Some((vec![0, 0], 2)),
            None,
            "m",
        )
        .unwrap_err();
        assert!(matches!(err, ScarError::InvalidLabels(_)));
    }

    #[test]
    fn split_counts_balanced_two_class() {
        // 100 samples, 2 balanced classes, ratio 0.6 -> 30 primary + 20
        // reserve per class.
        let table = toy_table(100, 2, 1);
        let (primary, reserve) = table.stratified_split(0.6, 9).unwrap();
        assert_eq!(primary.class_counts().unwrap(), vec![30, 30]);
        assert_eq!(reserve.class_counts().unwrap(), vec![20, 20]);
    }

    #[test]
    fn split_is_partition_and_deterministic() {
        let table = toy_table(53, 3, 2);
        let (p1, r1) = table.stratified_split(0.6, 5).unwrap();
        let (p2, r2) = table.stratified_split(0.6, 5).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1, r2);
        let mut all: Vec<u64> = p1.ids().iter().chain(r1.ids()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, table.ids());
    }

    #[test]
    fn split_rejects_small_class() {
        let table = EmbeddingTable::new(
            vec![0, 1, 2],
            vec![0.0, 1.0, 2.0],
            1,
            Some((vec![0, 0, 1], 2)),
            None,
            "m",
        )
        .unwrap();
        let err = table.stratified_split(0.5, 1).unwrap_err();
        assert!(matches!(err, ScarError::ClassTooSmall(1)));
    }

    #[test]
    fn l2_normalization_scales_rows_to_unit_norm() {
        let table = EmbeddingTable::new(
            vec![0, 1, 2],
            vec![3.0, 4.0, 0.0, 0.0, 1.0, 0.0],
            2,
            None,
            None,
            "m",
        )
        .unwrap();
        let normalized = table.l2_normalized();
        assert!((normalized.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((normalized.row(0)[1] - 0.8).abs() < 1e-7);
        // Zero rows stay zero.
        assert_eq!(normalized.row(1), &[0.0, 0.0]);
        assert_eq!(normalized.row(2), &[1.0, 0.0]);
    }

    #[test]
    fn subsample_identity_and_errors() {
        let table = toy_table(10, 2, 3);
        let all = table.subsample(1.0, 4).unwrap();
        assert_eq!(all.ids.len(), 10);
        assert!(matches!(
            table.subsample(0.0, 4),
            Err(ScarError::RatioOutOfRange(_))
        ));
    }

    #[test]
    fn subsample_half_balanced() {
        let table = toy_table(10, 2, 3);
        let sel = table.subsample(0.5, 4).unwrap();
        assert_eq!(sel.ids.len(), 5);
        let sub = table.take_selection(&sel).unwrap();
        let counts = sub.class_counts().unwrap();
        assert!(counts.iter().all(|&c| c == 2 || c == 3));
    }

    #[test]
    fn subsample_total_within_one_of_rounded() {
        let table = toy_table(97, 5, 11);
        for ratio in [0.1, 0.25, 0.33, 0.5, 0.77, 1.0] {
            let sel = table.subsample(ratio, 8).unwrap();
            let want = (ratio * 97.0).round_ties_even() as i64;
            assert!((sel.ids.len() as i64 - want).abs() <= 1);
        }
    }

    #[test]
    fn subsample_ladder_is_nested() {
        let table = toy_table(61, 4, 6);
        let mut prev: Option<HashSet<u64>> = None;
        for ratio in [0.1, 0.2, 0.4, 0.6, 0.8, 1.0] {
            let sel = table.subsample(ratio, 21).unwrap();
            let cur: HashSet<u64> = sel.ids.iter().copied().collect();
            if let Some(p) = &prev {
                assert!(p.is_subset(&cur), "ladder not nested at ratio {ratio}");
            }
            prev = Some(cur);
        }
    }

    #[test]
    fn apportion_meets_total_exactly() {
        assert_eq!(apportion(&[10, 10, 10, 10, 10], 12), vec![3, 3, 2, 2, 2]);
        assert_eq!(apportion(&[5, 5], 5), vec![3, 2]);
        assert_eq!(apportion(&[3, 0, 7], 10).iter().sum::<usize>(), 10);
    }

    proptest::proptest! {
        #[test]
        fn subsample_ladders_nest_for_any_ratios(
            n in 10usize..120,
            k in 1usize..6,
            seed in proptest::prelude::any::<u64>(),
            mut raw in proptest::collection::vec(0.01f64..=1.0, 2..6),
        ) {
            let k = k.min(n);
            let table = toy_table(n, k, seed);
            raw.sort_by(f64::total_cmp);
            raw.dedup();
            let mut prev: Option<HashSet<u64>> = None;
            for &ratio in &raw {
                let sel = table.subsample(ratio, seed).unwrap();
                let want = (ratio * n as f64).round_ties_even() as i64;
                proptest::prop_assert!((sel.ids.len() as i64 - want).abs() <= 1);
                let cur: HashSet<u64> = sel.ids.iter().copied().collect();
                if let Some(p) = &prev {
                    proptest::prop_assert!(p.is_subset(&cur));
                }
                prev = Some(cur);
            }
        }
    }
}
