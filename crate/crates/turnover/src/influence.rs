//! Memorization and cross-influence estimation.
//!
//! The turn-over estimate of an example's memorization (self-influence) is the
//! loss gap between its muted sub-network (which never saw it) and its unmuted
//! sub-network (which was updated on it). Cross-influence of a source on a target
//! uses the source's two sub-networks evaluated at the target.
//!
//! The leave-one-out oracle retrains the model with and without one example from
//! the same initialization and measures the loss difference directly; it is the
//! exact (brute-force) quantity the turn-over gap approximates, usable only at
//! small scale and guarded accordingly.

use crate::data::{Dataset, Example, SubsetSpec, Split};
use crate::error::{Error, Result};
use crate::mask::{BatchMasks, KEEP_SCALE};
use crate::nn::{batch_from_examples, forward, per_example_losses, Network};
use crate::rng::derive_seed;
use crate::scalar::Scalar;

/// Hard guard on the leave-one-out oracle: retraining is O(N x training cost).
pub const LOO_MAX_N: usize = 2000;

const SCORE_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct MemorizationRecord {
    pub example_id: u64,
    pub split: Split,
    pub true_label: usize,
    pub observed_label: usize,
    pub corrupted: bool,
    pub loss_muted: f64,
    pub loss_unmuted: f64,
    /// loss_muted - loss_unmuted, exactly.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceRecord {
    pub source_example_id: u64,
    pub target_example_id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooRecord {
    pub example_id: u64,
    pub repeats: usize,
    pub mean_score: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// n_bins + 1 ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Number of contiguous bar groups rising above half of the tallest bar;
    /// 2 or more reads as visually separated modes.
    pub fn modes_above_half_max(&self) -> usize {
        let Some(&max) = self.counts.iter().max() else { return 0 };
        let threshold = max as f64 / 2.0;
        let mut groups = 0;
        let mut inside = false;
        for &c in &self.counts {
            let above = c as f64 > threshold;
            if above && !inside {
                groups += 1;
            }
            inside = above;
        }
        groups
    }
}

/// Loss (nats) of single examples under a shared mask construction.
fn losses_under_masks<S: Scalar>(
    net: &Network<S>,
    examples: &[&Example],
    input_shape: &[usize],
    mask_seed: u64,
    flip: bool,
    scale: f64,
) -> Result<Vec<f64>> {
    let (batch, labels, ids) = batch_from_examples::<S>(examples, input_shape);
    let masks = BatchMasks::for_ids(mask_seed, &ids, net.config(), flip, scale)?;
    let (logits, _) = forward(net, &batch, Some(&masks))?;
    per_example_losses(&logits, &labels)
}

/// Turn-over memorization estimate for one example of `dataset`.
pub fn memorization_score<S: Scalar>(
    net: &Network<S>,
    mask_seed: u64,
    dataset: &Dataset,
    index: usize,
    scale: f64,
) -> Result<MemorizationRecord> {
    let example = dataset
        .examples
        .get(index)
        .ok_or_else(|| Error::input(format!("example index {index} out of range")))?;
    let unmuted = losses_under_masks(net, &[example], &dataset.input_shape, mask_seed, false, scale)?[0];
    let muted = losses_under_masks(net, &[example], &dataset.input_shape, mask_seed, true, scale)?[0];
    Ok(MemorizationRecord {
        example_id: example.id,
        split: dataset.split,
        true_label: example.original_label,
        observed_label: example.observed_label,
        corrupted: example.corrupted,
        loss_muted: muted,
        loss_unmuted: unmuted,
        score: muted - unmuted,
    })
}

/// Turn-over influence of `source` on `target`: the loss gap of the *source's*
/// sub-networks evaluated at the target (which may come from another split).
pub fn influence_score<S: Scalar>(
    net: &Network<S>,
    mask_seed: u64,
    source: (&Dataset, usize),
    target: (&Dataset, usize),
    scale: f64,
) -> Result<InfluenceRecord> {
    let (src_ds, src_idx) = source;
    let (tgt_ds, tgt_idx) = target;
    let src = src_ds
        .examples
        .get(src_idx)
        .ok_or_else(|| Error::input(format!("source index {src_idx} out of range")))?;
    let tgt = tgt_ds
        .examples
        .get(tgt_idx)
        .ok_or_else(|| Error::input(format!("target index {tgt_idx} out of range")))?;
    // The masks are the source's: evaluate the target under them.
    let both = eval_target_under_source_masks(net, mask_seed, src.id, tgt, &tgt_ds.input_shape, scale)?;
    Ok(InfluenceRecord {
        source_example_id: src.id,
        target_example_id: tgt.id,
        score: both.1 - both.0,
    })
}

fn eval_target_under_source_masks<S: Scalar>(
    net: &Network<S>,
    mask_seed: u64,
    source_id: u64,
    target: &Example,
    input_shape: &[usize],
    scale: f64,
) -> Result<(f64, f64)> {
    let (batch, labels, _) = batch_from_examples::<S>(&[target], input_shape);
    let mut unmuted_masks = BatchMasks::for_ids(mask_seed, &[source_id], net.config(), false, scale)?;
    let (logits_u, _) = forward(net, &batch, Some(&unmuted_masks))?;
    let unmuted = per_example_losses(&logits_u, &labels)?[0];
    unmuted_masks.sets[0] = unmuted_masks.sets[0].flipped();
    let (logits_m, _) = forward(net, &batch, Some(&unmuted_masks))?;
    let muted = per_example_losses(&logits_m, &labels)?[0];
    Ok((unmuted, muted))
}

/// Memorization records for every example, ordered by example_id.
pub fn score_dataset<S: Scalar>(
    net: &Network<S>,
    mask_seed: u64,
    dataset: &Dataset,
    scale: f64,
) -> Result<Vec<MemorizationRecord>> {
    if dataset.is_empty() {
        return Err(Error::input("cannot score an empty dataset"));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&i| dataset.examples[i].id);
    let mut records = Vec::with_capacity(dataset.len());
    for chunk in order.chunks(SCORE_CHUNK) {
        let refs: Vec<&Example> = chunk.iter().map(|&i| &dataset.examples[i]).collect();
        let unmuted = losses_under_masks(net, &refs, &dataset.input_shape, mask_seed, false, scale)?;
        let muted = losses_under_masks(net, &refs, &dataset.input_shape, mask_seed, true, scale)?;
        for (i, e) in refs.iter().enumerate() {
            records.push(MemorizationRecord {
                example_id: e.id,
                split: dataset.split,
                true_label: e.original_label,
                observed_label: e.observed_label,
                corrupted: e.corrupted,
                loss_muted: muted[i],
                loss_unmuted: unmuted[i],
                score: muted[i] - unmuted[i],
            });
        }
    }
    Ok(records)
}

/// Default turn-over evaluation scale: sub-networks are evaluated exactly as
/// trained (inverted-dropout scale applied).
pub fn default_scale() -> f64 {
    KEEP_SCALE
}

/// Leave-one-out memorization by brute-force retraining.
///
/// `train_fn(dataset, seed)` must be a deterministic function of its arguments
/// and must derive all of its stochasticity (init, shuffling) from `seed`. For
/// each repeat, both the full and the leave-one-out model start from the same
/// seed, so the only difference is the removed example.
pub fn loo_memorization<S: Scalar>(
    train_fn: &dyn Fn(&Dataset, u64) -> Result<Network<S>>,
    dataset: &Dataset,
    example_index: usize,
    repeats: usize,
    base_seed: u64,
) -> Result<LooRecord> {
    let example = dataset
        .examples
        .get(example_index)
        .ok_or_else(|| Error::input(format!("example index {example_index} out of range")))?
        .clone();
    let scores = loo_scores(train_fn, dataset, example_index, (dataset, example_index), repeats, base_seed)?;
    let mean_score = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(LooRecord {
        example_id: example.id,
        repeats,
        mean_score,
        scores,
    })
}

/// Leave-one-out influence of removing `source_index` on an arbitrary target.
pub fn loo_influence<S: Scalar>(
    train_fn: &dyn Fn(&Dataset, u64) -> Result<Network<S>>,
    dataset: &Dataset,
    source_index: usize,
    target: (&Dataset, usize),
    repeats: usize,
    base_seed: u64,
) -> Result<f64> {
    let scores = loo_scores(train_fn, dataset, source_index, target, repeats, base_seed)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn loo_scores<S: Scalar>(
    train_fn: &dyn Fn(&Dataset, u64) -> Result<Network<S>>,
    dataset: &Dataset,
    source_index: usize,
    target: (&Dataset, usize),
    repeats: usize,
    base_seed: u64,
) -> Result<Vec<f64>> {
    if dataset.len() > LOO_MAX_N {
        return Err(Error::input(format!(
            "leave-one-out oracle refused: N = {} exceeds the guard of {LOO_MAX_N} \
             (each score costs two full retrainings)",
            dataset.len()
        )));
    }
    if repeats == 0 {
        return Err(Error::input("repeats must be >= 1"));
    }
    let source = dataset
        .examples
        .get(source_index)
        .ok_or_else(|| Error::input(format!("source index {source_index} out of range")))?;
    let (tgt_ds, tgt_idx) = target;
    let tgt = tgt_ds
        .examples
        .get(tgt_idx)
        .ok_or_else(|| Error::input(format!("target index {tgt_idx} out of range")))?
        .clone();
    let removed = crate::data::remove_subset(dataset, &SubsetSpec::new("loo", vec![source.id]))?;

    let mut scores = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let seed = derive_seed(base_seed, r as u64);
        let full = train_fn(dataset, seed)?;
        let without = train_fn(&removed, seed)?;
        let loss_full = plain_example_loss(&full, &tgt, &tgt_ds.input_shape)?;
        let loss_without = plain_example_loss(&without, &tgt, &tgt_ds.input_shape)?;
        scores.push(loss_without - loss_full);
    }
    Ok(scores)
}

fn plain_example_loss<S: Scalar>(net: &Network<S>, example: &Example, input_shape: &[usize]) -> Result<f64> {
    let (batch, labels, _) = batch_from_examples::<S>(&[example], input_shape);
    let (logits, _) = forward(net, &batch, None)?;
    Ok(per_example_losses(&logits, &labels)?[0])
}

/// Leave-one-out memorization for every example of the dataset, sharing the
/// full-dataset trainings across examples (one per repeat instead of one per
/// example per repeat). Each record is exactly what [`loo_memorization`] with the
/// same `base_seed` would produce.
pub fn loo_oracle_all<S: Scalar>(
    train_fn: &(dyn Fn(&Dataset, u64) -> Result<Network<S>> + Sync),
    dataset: &Dataset,
    repeats: usize,
    base_seed: u64,
) -> Result<Vec<LooRecord>> {
    if dataset.len() > LOO_MAX_N {
        return Err(Error::input(format!(
            "leave-one-out oracle refused: N = {} exceeds the guard of {LOO_MAX_N}",
            dataset.len()
        )));
    }
    if repeats == 0 {
        return Err(Error::input("repeats must be >= 1"));
    }
    let seeds: Vec<u64> = (0..repeats).map(|r| derive_seed(base_seed, r as u64)).collect();
    let full_models: Vec<Network<S>> = seeds
        .iter()
        .map(|&s| train_fn(dataset, s))
        .collect::<Result<_>>()?;

    use rayon::prelude::*;
    let mut records: Vec<LooRecord> = (0..dataset.len())
        .into_par_iter()
        .map(|idx| -> Result<LooRecord> {
            let example = dataset.examples[idx].clone();
            let removed = crate::data::remove_subset(dataset, &SubsetSpec::new("loo", vec![example.id]))?;
            let mut scores = Vec::with_capacity(repeats);
            for (r, &seed) in seeds.iter().enumerate() {
                let without = train_fn(&removed, seed)?;
                let loss_full = plain_example_loss(&full_models[r], &example, &dataset.input_shape)?;
                let loss_without = plain_example_loss(&without, &example, &dataset.input_shape)?;
                scores.push(loss_without - loss_full);
            }
            let mean_score = scores.iter().sum::<f64>() / scores.len() as f64;
            Ok(LooRecord {
                example_id: example.id,
                repeats,
                mean_score,
                scores,
            })
        })
        .collect::<Result<_>>()?;
    records.sort_by_key(|r| r.example_id);
    Ok(records)
}

/// Equal-width histogram spanning [min, max]; an all-equal input occupies one bin.
pub fn score_histogram(scores: &[f64], n_bins: usize) -> Result<Histogram> {
    if scores.is_empty() {
        return Err(Error::input("cannot histogram an empty score list"));
    }
    if n_bins == 0 {
        return Err(Error::input("n_bins must be >= 1"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &s in scores {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &s in scores {
        let idx = (((s - lo) / width) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    let edges = (0..=n_bins).map(|i| lo + i as f64 * width).collect();
    Ok(Histogram { edges, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::nn::{init_params, ModelConfig, Precision};

    fn toy_dataset(n: usize, dim: usize, classes: usize) -> Dataset {
        Dataset {
            input_shape: vec![dim],
            classes,
            split: Split::Train,
            examples: (0..n)
                .map(|i| Example {
                    id: i as u64,
                    pixels: (0..dim).map(|d| ((i * 3 + d) % 11) as f32 / 11.0).collect(),
                    observed_label: i % classes,
                    original_label: i % classes,
                    corrupted: false,
                })
                .collect(),
            provenance: vec![],
        }
    }

    fn zeroed_head_net(dim: usize, hidden: usize, classes: usize) -> Network<f64> {
        // Zero the output layer: logits are constant zero regardless of masks.
        let cfg = ModelConfig::mlp(dim, hidden, classes, 3, Precision::F64);
        let mut net = init_params::<f64>(&cfg).unwrap();
        net.with_params_mut(|params| {
            let head = params[2].as_mut().unwrap();
            head.weight.data_mut().fill(0.0);
            head.bias.fill(0.0);
        });
        net
    }

    #[test]
    fn mask_independent_predictor_scores_zero() {
        let ds = toy_dataset(6, 5, 10);
        let net = zeroed_head_net(5, 16, 10);
        for i in 0..ds.len() {
            let rec = memorization_score(&net, 7, &ds, i, KEEP_SCALE).unwrap();
            assert!((rec.loss_muted - (10.0f64).ln()).abs() < 1e-12);
            assert!((rec.loss_unmuted - (10.0f64).ln()).abs() < 1e-12);
            assert_eq!(rec.score, 0.0);
        }
    }

    #[test]
    fn influence_reduces_to_memorization_on_diagonal() {
        let ds = toy_dataset(8, 5, 4);
        let cfg = ModelConfig::mlp(5, 16, 4, 3, Precision::F64);
        let net = init_params::<f64>(&cfg).unwrap();
        for i in 0..ds.len() {
            let mem = memorization_score(&net, 7, &ds, i, KEEP_SCALE).unwrap();
            let inf = influence_score(&net, 7, (&ds, i), (&ds, i), KEEP_SCALE).unwrap();
            assert_eq!(inf.score, mem.score);
        }
    }

    #[test]
    fn influence_zero_for_mask_independent_predictor() {
        let ds = toy_dataset(5, 5, 10);
        let net = zeroed_head_net(5, 16, 10);
        let inf = influence_score(&net, 7, (&ds, 0), (&ds, 3), KEEP_SCALE).unwrap();
        assert_eq!(inf.score, 0.0);
    }

    #[test]
    fn score_dataset_ordered_and_side_effect_free() {
        let ds = toy_dataset(20, 5, 4);
        let cfg = ModelConfig::mlp(5, 16, 4, 3, Precision::F64);
        let net = init_params::<f64>(&cfg).unwrap();
        let snapshot = net.params().to_vec();
        let records = score_dataset(&net, 7, &ds, KEEP_SCALE).unwrap();
        assert_eq!(records.len(), 20);
        for w in records.windows(2) {
            assert!(w[0].example_id < w[1].example_id);
        }
        assert_eq!(net.params(), &snapshot[..]);
        // Batch scoring agrees exactly with single-example scoring.
        for i in [0usize, 7, 19] {
            let single = memorization_score(&net, 7, &ds, i, KEEP_SCALE).unwrap();
            assert_eq!(records[i], single);
        }
    }

    #[test]
    fn loo_guard_refuses_large_datasets() {
        let ds = toy_dataset(LOO_MAX_N + 1, 2, 2);
        let train_fn = |_: &Dataset, _: u64| -> Result<Network<f64>> {
            unreachable!("guard must fire before training")
        };
        let err = loo_memorization(&train_fn, &ds, 0, 1, 0).unwrap_err();
        assert!(err.to_string().contains("guard"), "{err}");
    }

    #[test]
    fn loo_single_repeat_mean_is_that_score() {
        let ds = toy_dataset(6, 3, 2);
        // A "training" that ignores data but varies with seed: enough to check plumbing.
        let train_fn = |_d: &Dataset, seed: u64| -> Result<Network<f64>> {
            let cfg = ModelConfig::mlp(3, 4, 2, seed, Precision::F64);
            init_params(&cfg)
        };
        let rec = loo_memorization(&train_fn, &ds, 2, 1, 9).unwrap();
        assert_eq!(rec.repeats, 1);
        assert_eq!(rec.scores.len(), 1);
        assert_eq!(rec.mean_score, rec.scores[0]);
        assert_eq!(rec.mean_score, 0.0); // same seed, same init, same loss
    }

    #[test]
    fn histogram_counts_conserved() {
        let scores: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = score_histogram(&scores, 7).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 100);
        assert_eq!(h.edges.len(), 8);
    }

    #[test]
    fn histogram_degenerate_single_bin() {
        let h = score_histogram(&[2.5; 30], 10).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 30);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn histogram_rejects_empty() {
        assert!(score_histogram(&[], 5).is_err());
        assert!(score_histogram(&[1.0], 0).is_err());
    }
}
