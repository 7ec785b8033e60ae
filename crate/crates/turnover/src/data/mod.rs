//! Dataset ingestion, label corruption, and score-based partitioning.
//!
//! Example ids are assigned once, at load, from canonical file order, and are
//! never renumbered by corruption, subsampling, or removal: turn-over masks and
//! memorization scores are keyed by id and must survive every pipeline stage.

mod cifar;
pub(crate) mod idx;
mod synth;

pub use cifar::{load_cifar10, parse_cifar10, write_cifar10_batch, CIFAR_RECORD_BYTES};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels};
pub use synth::{synth_images, synth_longtail, ImageSynthSpec, LongtailSpec};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: u64,
    /// Input values normalized to [0, 1], row-major over the dataset's input shape.
    pub pixels: Vec<f32>,
    pub observed_label: usize,
    pub original_label: usize,
    pub corrupted: bool,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    pub examples: Vec<Example>,
    /// Key-value trail (source digests, seeds) that fully determines the content.
    pub provenance: Vec<(String, String)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.examples.iter().map(|e| e.id).collect()
    }

    pub fn push_provenance(&mut self, key: &str, value: impl ToString) {
        self.provenance.push((key.to_string(), value.to_string()));
    }

    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.examples {
            if !seen.insert(e.id) {
                return Err(Error::input(format!("duplicate example id {}", e.id)));
            }
            if e.pixels.len() != self.input_len() {
                return Err(Error::input(format!("example {} has wrong input length", e.id)));
            }
            if e.observed_label >= self.classes || e.original_label >= self.classes {
                return Err(Error::input(format!("example {} label out of range", e.id)));
            }
            if e.corrupted != (e.observed_label != e.original_label) {
                return Err(Error::input(format!("example {} corrupted flag inconsistent", e.id)));
            }
        }
        Ok(())
    }
}

/// A named, disjoint-by-construction group of example ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSpec {
    pub tag: String,
    /// Ascending, deduplicated.
    pub member_ids: Vec<u64>,
}

impl SubsetSpec {
    pub fn new(tag: impl Into<String>, mut ids: Vec<u64>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        SubsetSpec {
            tag: tag.into(),
            member_ids: ids,
        }
    }

    pub fn contains(&self, id: u64) -> bool {
        self.member_ids.binary_search(&id).is_ok()
    }

    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }
}

/// Replaces the observed labels of a seeded uniform sample of `n_corrupt` examples
/// with labels drawn uniformly from the *other* classes, so every corrupted example
/// is genuinely mislabeled. Inputs and original labels are untouched.
pub fn corrupt_labels(dataset: &Dataset, n_corrupt: usize, seed: u64) -> Result<Dataset> {
    if n_corrupt > dataset.len() {
        return Err(Error::input(format!(
            "cannot corrupt {n_corrupt} of {} examples",
            dataset.len()
        )));
    }
    let mut out = dataset.clone();
    if n_corrupt == 0 {
        return Ok(out);
    }
    let mut rng = SplitMix64::new(seed);
    let picked = rng.sample_indices(dataset.len(), n_corrupt);
    for idx in picked {
        let e = &mut out.examples[idx];
        // Uniform over classes excluding the original label.
        let draw = rng.next_below(out.classes as u64 - 1) as usize;
        let wrong = if draw >= e.original_label { draw + 1 } else { draw };
        e.observed_label = wrong;
        e.corrupted = true;
    }
    out.push_provenance("corrupt_n", n_corrupt);
    out.push_provenance("corrupt_seed", seed);
    Ok(out)
}

/// Sorts by (score ascending, id ascending) and cuts the first `floor(f_e * N)` as
/// easy and the last `floor(f_d * N)` as difficult.
pub fn partition_by_score(
    scores: &[(u64, f64)],
    easy_fraction: f64,
    difficult_fraction: f64,
) -> Result<(SubsetSpec, SubsetSpec)> {
    if !(easy_fraction > 0.0 && difficult_fraction > 0.0) {
        return Err(Error::input("partition fractions must be positive"));
    }
    if easy_fraction + difficult_fraction > 1.0 + 1e-12 {
        return Err(Error::input(format!(
            "fractions {easy_fraction} + {difficult_fraction} exceed 1"
        )));
    }
    if scores.is_empty() {
        return Err(Error::input("no scores to partition"));
    }
    let n = scores.len();
    let mut order: Vec<(f64, u64)> = scores.iter().map(|&(id, s)| (s, id)).collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let n_easy = (easy_fraction * n as f64).floor() as usize;
    let n_difficult = (difficult_fraction * n as f64).floor() as usize;
    let easy = SubsetSpec::new("easy", order[..n_easy].iter().map(|x| x.1).collect());
    let difficult = SubsetSpec::new(
        "difficult",
        order[n - n_difficult..].iter().map(|x| x.1).collect(),
    );
    Ok((easy, difficult))
}

/// Seeded sample of `n` examples without replacement; ids preserved, canonical
/// (ascending-id) order retained.
pub fn subsample(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > dataset.len() {
        return Err(Error::input(format!(
            "cannot subsample {n} of {} examples",
            dataset.len()
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let picked = rng.sample_indices(dataset.len(), n);
    let examples = picked.iter().map(|&i| dataset.examples[i].clone()).collect();
    let mut out = Dataset {
        input_shape: dataset.input_shape.clone(),
        classes: dataset.classes,
        split: dataset.split,
        examples,
        provenance: dataset.provenance.clone(),
    };
    out.push_provenance("subsample_n", n);
    out.push_provenance("subsample_seed", seed);
    Ok(out)
}

/// Dataset restricted to the subset's members; ids preserved.
pub fn keep_subset(dataset: &Dataset, spec: &SubsetSpec) -> Result<Dataset> {
    let present: BTreeSet<u64> = dataset.examples.iter().map(|e| e.id).collect();
    for id in &spec.member_ids {
        if !present.contains(id) {
            return Err(Error::input(format!(
                "subset '{}' member {id} not present in dataset",
                spec.tag
            )));
        }
    }
    let examples: Vec<Example> = dataset
        .examples
        .iter()
        .filter(|e| spec.contains(e.id))
        .cloned()
        .collect();
    let mut out = Dataset {
        input_shape: dataset.input_shape.clone(),
        classes: dataset.classes,
        split: dataset.split,
        examples,
        provenance: dataset.provenance.clone(),
    };
    out.push_provenance("kept_subset", &spec.tag);
    Ok(out)
}

/// Dataset minus the subset's members; ids preserved.
pub fn remove_subset(dataset: &Dataset, spec: &SubsetSpec) -> Result<Dataset> {
    let present: BTreeSet<u64> = dataset.examples.iter().map(|e| e.id).collect();
    for id in &spec.member_ids {
        if !present.contains(id) {
            return Err(Error::input(format!(
                "subset '{}' member {id} not present in dataset",
                spec.tag
            )));
        }
    }
    let examples: Vec<Example> = dataset
        .examples
        .iter()
        .filter(|e| !spec.contains(e.id))
        .cloned()
        .collect();
    let mut out = Dataset {
        input_shape: dataset.input_shape.clone(),
        classes: dataset.classes,
        split: dataset.split,
        examples,
        provenance: dataset.provenance.clone(),
    };
    out.push_provenance("removed_subset", &spec.tag);
    out.push_provenance("removed_n", spec.len());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n: usize, classes: usize) -> Dataset {
        Dataset {
            input_shape: vec![2],
            classes,
            split: Split::Train,
            examples: (0..n)
                .map(|i| Example {
                    id: i as u64,
                    pixels: vec![i as f32, 0.5],
                    observed_label: i % classes,
                    original_label: i % classes,
                    corrupted: false,
                })
                .collect(),
            provenance: vec![],
        }
    }

    #[test]
    fn corrupt_zero_is_identity() {
        let ds = toy_dataset(10, 3);
        let out = corrupt_labels(&ds, 0, 7).unwrap();
        assert_eq!(out.examples, ds.examples);
        assert_eq!(out.examples.iter().filter(|e| e.corrupted).count(), 0);
    }

    #[test]
    fn corrupt_count_and_exclusion() {
        let ds = toy_dataset(100, 10);
        let out = corrupt_labels(&ds, 40, 3).unwrap();
        assert_eq!(out.examples.iter().filter(|e| e.corrupted).count(), 40);
        for e in &out.examples {
            if e.corrupted {
                assert_ne!(e.observed_label, e.original_label);
            } else {
                assert_eq!(e.observed_label, e.original_label);
            }
        }
        out.check_invariants().unwrap();
        // Pixels untouched.
        for (a, b) in ds.examples.iter().zip(&out.examples) {
            assert_eq!(a.pixels, b.pixels);
        }
    }

    #[test]
    fn corrupt_is_deterministic() {
        let ds = toy_dataset(50, 5);
        let a = corrupt_labels(&ds, 20, 11).unwrap();
        let b = corrupt_labels(&ds, 20, 11).unwrap();
        assert_eq!(a.examples, b.examples);
    }

    #[test]
    fn corrupt_rejects_overflow() {
        let ds = toy_dataset(5, 3);
        assert!(corrupt_labels(&ds, 6, 0).is_err());
    }

    #[test]
    fn partition_sizes_and_order() {
        let scores: Vec<(u64, f64)> = (0..60u64).map(|i| (i, i as f64 * 0.1)).collect();
        let (easy, difficult) = partition_by_score(&scores, 1.0 / 6.0, 1.0 / 6.0).unwrap();
        assert_eq!(easy.len(), 10);
        assert_eq!(difficult.len(), 10);
        assert!(easy.member_ids.iter().all(|id| *id < 10));
        assert!(difficult.member_ids.iter().all(|id| *id >= 50));
    }

    #[test]
    fn partition_all_equal_uses_id_tiebreak() {
        let scores: Vec<(u64, f64)> = (0..10u64).map(|i| (i, 1.0)).collect();
        let (easy, difficult) = partition_by_score(&scores, 0.3, 0.3).unwrap();
        assert_eq!(easy.member_ids, vec![0, 1, 2]);
        assert_eq!(difficult.member_ids, vec![7, 8, 9]);
    }

    #[test]
    fn partition_split_is_ordered() {
        let mut scores: Vec<(u64, f64)> = (0..40u64).map(|i| (i, ((i * 7919) % 13) as f64)).collect();
        scores.reverse();
        let (easy, difficult) = partition_by_score(&scores, 0.25, 0.25).unwrap();
        let by_id: std::collections::BTreeMap<u64, f64> = scores.iter().cloned().collect();
        let max_easy = easy.member_ids.iter().map(|id| by_id[id]).fold(f64::MIN, f64::max);
        let min_diff = difficult.member_ids.iter().map(|id| by_id[id]).fold(f64::MAX, f64::min);
        assert!(max_easy <= min_diff);
    }

    #[test]
    fn partition_rejects_overlapping_fractions() {
        let scores: Vec<(u64, f64)> = (0..10u64).map(|i| (i, i as f64)).collect();
        assert!(partition_by_score(&scores, 0.6, 0.6).is_err());
    }

    #[test]
    fn subsample_preserves_ids_and_is_deterministic() {
        let ds = toy_dataset(100, 4);
        let a = subsample(&ds, 30, 9).unwrap();
        let b = subsample(&ds, 30, 9).unwrap();
        assert_eq!(a.examples, b.examples);
        assert_eq!(a.len(), 30);
        for w in a.examples.windows(2) {
            assert!(w[0].id < w[1].id);
        }
        assert!(subsample(&ds, 101, 0).is_err());
    }

    #[test]
    fn remove_subset_drops_members() {
        let ds = toy_dataset(20, 4);
        let spec = SubsetSpec::new("difficult", vec![1, 5, 19]);
        let out = remove_subset(&ds, &spec).unwrap();
        assert_eq!(out.len(), 17);
        for e in &out.examples {
            assert!(!spec.contains(e.id));
        }
        let missing = SubsetSpec::new("x", vec![99]);
        assert!(remove_subset(&ds, &missing).is_err());
    }
}
