//! Config-driven experimental protocols producing reproducible trace files.
//!
//! Two-model pipeline, made explicit: memorization scores come from a model
//! trained *with* turn-over dropout (`run_score_pipeline`); all dynamics
//! experiments train a fresh plain model whose subsets are defined by those
//! scores or by corruption flags (`run_subset_dynamics` and friends). The run
//! functions assert this separation.

mod runner;
mod runs;

pub use runner::{
    cmd_control_removal, cmd_corrupt, cmd_cross_subset, cmd_dynamics, cmd_early_stop,
    cmd_loo_oracle, cmd_partition, cmd_score, cmd_sweep, cmd_train_turnover, loo_oracle_records,
    write_manifest, LOO_REPEATS,
};
pub use runs::{
    run_control_removal, run_corruption_sweep, run_cross_subset, run_early_stop_check,
    run_score_pipeline, run_subset_dynamics, score_with_model, train_turnover_model,
    DynamicsOutput, ScoreRun,
};

use std::path::{Path, PathBuf};

use crate::config::{DataSource, ModelKind, RunConfig, SubsetMode};
use crate::data::{
    self, load_cifar10, load_idx, parse_cifar10, parse_idx_images, parse_idx_labels, subsample,
    synth_images, synth_longtail, Dataset, Example, ImageSynthSpec, LongtailSpec, Split, SubsetSpec,
};
use crate::error::{Error, Result};
use crate::nn::{LRSchedule, ModelConfig, PerExampleEval};
use crate::rng::derive_seed;
use crate::train::{TrainOptions, TurnoverOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub subset: String,
    pub split: String,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubnetTraceRow {
    pub epoch: usize,
    pub unmuted_accuracy: f64,
    pub muted_accuracy: f64,
}

/// Seed streams: every consumer of data_seed gets its own label so corruption,
/// subsampling, and generation never share a stream.
const STREAM_TRAIN_SUBSAMPLE: u64 = 10;
const STREAM_TEST_SUBSAMPLE: u64 = 11;
const STREAM_CORRUPTION: u64 = 12;

/// Builds (train, test) without corruption applied.
pub fn build_base_datasets(cfg: &RunConfig) -> Result<(Dataset, Option<Dataset>)> {
    match cfg.dataset {
        DataSource::SynthMnist => {
            let train = materialize_idx(&ImageSynthSpec::grayscale(28, cfg.train_n, cfg.data_seed), Split::Train)?;
            let test = if cfg.test_n > 0 {
                Some(materialize_idx(
                    &ImageSynthSpec::grayscale(28, cfg.test_n, cfg.data_seed),
                    Split::Test,
                )?)
            } else {
                None
            };
            Ok((train, test))
        }
        DataSource::SynthCifar => {
            let train = materialize_cifar(&ImageSynthSpec::rgb(32, cfg.train_n, cfg.data_seed), Split::Train)?;
            let test = if cfg.test_n > 0 {
                Some(materialize_cifar(
                    &ImageSynthSpec::rgb(32, cfg.test_n, cfg.data_seed),
                    Split::Test,
                )?)
            } else {
                None
            };
            Ok((train, test))
        }
        DataSource::Mnist => {
            let dir = PathBuf::from(&cfg.data_dir);
            let mut train = load_idx(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
                Split::Train,
            )?;
            let mut test = load_idx(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
                Split::Test,
            )?;
            if cfg.train_n > 0 && cfg.train_n < train.len() {
                train = subsample(&train, cfg.train_n, derive_seed(cfg.data_seed, STREAM_TRAIN_SUBSAMPLE))?;
            }
            if cfg.test_n > 0 && cfg.test_n < test.len() {
                test = subsample(&test, cfg.test_n, derive_seed(cfg.data_seed, STREAM_TEST_SUBSAMPLE))?;
            }
            Ok((train, Some(test)))
        }
        DataSource::Cifar10 => {
            let dir = PathBuf::from(&cfg.data_dir);
            let batch_names = [
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ];
            let paths: Vec<PathBuf> = batch_names.iter().map(|n| dir.join(n)).collect();
            let refs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
            let mut train = load_cifar10(&refs, Split::Train)?;
            let test_path = dir.join("test_batch.bin");
            let mut test = load_cifar10(&[test_path.as_path()], Split::Test)?;
            if cfg.train_n > 0 && cfg.train_n < train.len() {
                train = subsample(&train, cfg.train_n, derive_seed(cfg.data_seed, STREAM_TRAIN_SUBSAMPLE))?;
            }
            if cfg.test_n > 0 && cfg.test_n < test.len() {
                test = subsample(&test, cfg.test_n, derive_seed(cfg.data_seed, STREAM_TEST_SUBSAMPLE))?;
            }
            Ok((train, Some(test)))
        }
        DataSource::Longtail => {
            let spec = longtail_spec(cfg.train_n, cfg.data_seed)?;
            Ok((synth_longtail(&spec)?, None))
        }
    }
}

/// Tail cluster sizes of the long-tail preset; the head takes the remainder,
/// split evenly over four classes. Sizes are graded so rarity (and with it the
/// expected memorization score) spans singletons up to mid-size clusters.
pub const LONGTAIL_TAIL_SIZES: [usize; 10] = [1, 1, 2, 2, 3, 3, 5, 5, 8, 10];
pub const LONGTAIL_CLASSES: usize = 4;

pub fn longtail_spec(train_n: usize, seed: u64) -> Result<LongtailSpec> {
    let tail_total: usize = LONGTAIL_TAIL_SIZES.iter().sum();
    if train_n < tail_total + LONGTAIL_CLASSES {
        return Err(Error::config(format!(
            "longtail needs at least {} examples",
            tail_total + LONGTAIL_CLASSES
        )));
    }
    Ok(LongtailSpec {
        n_head_classes: LONGTAIL_CLASSES,
        head_examples_per_class: (train_n - tail_total) / LONGTAIL_CLASSES,
        tail_cluster_sizes: LONGTAIL_TAIL_SIZES.to_vec(),
        dim: 8,
        noise_sigma: 0.03,
        seed,
    })
}

/// Generated images pass through the real IDX encoder/decoder, so training sees
/// exactly what it would see from files on disk (including u8 quantization).
fn materialize_idx(spec: &ImageSynthSpec, split: Split) -> Result<Dataset> {
    let raw = synth_images(spec, split)?;
    let side = spec.side;
    let mut pixels = Vec::with_capacity(raw.len() * side * side);
    let mut labels = Vec::with_capacity(raw.len());
    for e in &raw.examples {
        pixels.extend_from_slice(&e.pixels);
        labels.push(e.observed_label as u8);
    }
    let image_bytes = data::write_idx_images(raw.len(), side, side, &pixels);
    let label_bytes = data::write_idx_labels(&labels);
    let (count, rows, cols, parsed) = parse_idx_images(&image_bytes)?;
    let parsed_labels = parse_idx_labels(&label_bytes)?;
    let image_len = rows * cols;
    let examples = (0..count)
        .map(|i| Example {
            id: i as u64,
            pixels: parsed[i * image_len..(i + 1) * image_len].to_vec(),
            observed_label: parsed_labels[i] as usize,
            original_label: parsed_labels[i] as usize,
            corrupted: false,
        })
        .collect();
    let mut out = Dataset {
        input_shape: vec![image_len],
        classes: raw.classes,
        split,
        examples,
        provenance: raw.provenance,
    };
    out.push_provenance("materialized", "idx");
    Ok(out)
}

fn materialize_cifar(spec: &ImageSynthSpec, split: Split) -> Result<Dataset> {
    let raw = synth_images(spec, split)?;
    let records: Vec<(u8, Vec<f32>)> = raw
        .examples
        .iter()
        .map(|e| (e.observed_label as u8, e.pixels.clone()))
        .collect();
    let bytes = data::write_cifar10_batch(&records);
    let parsed = parse_cifar10(&bytes)?;
    let examples = parsed
        .into_iter()
        .enumerate()
        .map(|(i, (label, pixels))| Example {
            id: i as u64,
            pixels,
            observed_label: label as usize,
            original_label: label as usize,
            corrupted: false,
        })
        .collect();
    let mut out = Dataset {
        input_shape: raw.input_shape,
        classes: raw.classes,
        split,
        examples,
        provenance: raw.provenance,
    };
    out.push_provenance("materialized", "cifar10");
    Ok(out)
}

/// Builds (train, test) with the configured corruption applied to train.
pub fn build_datasets(cfg: &RunConfig) -> Result<(Dataset, Option<Dataset>)> {
    let (train, test) = build_base_datasets(cfg)?;
    let train = if cfg.n_corrupt > 0 {
        data::corrupt_labels(&train, cfg.n_corrupt, derive_seed(cfg.data_seed, STREAM_CORRUPTION))?
    } else {
        train
    };
    Ok((train, test))
}

pub fn apply_corruption(cfg: &RunConfig, base: &Dataset, n_corrupt: usize) -> Result<Dataset> {
    if n_corrupt == 0 {
        return Ok(base.clone());
    }
    data::corrupt_labels(base, n_corrupt, derive_seed(cfg.data_seed, STREAM_CORRUPTION))
}

pub fn build_model_config(cfg: &RunConfig, dataset: &Dataset) -> Result<ModelConfig> {
    match cfg.model {
        ModelKind::Mlp => {
            if dataset.input_shape.len() != 1 {
                return Err(Error::config(format!(
                    "mlp model needs flat inputs, dataset has shape {:?}",
                    dataset.input_shape
                )));
            }
            Ok(ModelConfig::mlp(
                dataset.input_shape[0],
                cfg.hidden,
                dataset.classes,
                cfg.init_seed,
                cfg.precision,
            ))
        }
        ModelKind::Conv => {
            if dataset.input_shape.len() != 3 || dataset.input_shape[1] != dataset.input_shape[2] {
                return Err(Error::config(format!(
                    "conv model needs [C, S, S] inputs, dataset has shape {:?}",
                    dataset.input_shape
                )));
            }
            Ok(ModelConfig::small_cnn(
                dataset.input_shape[0],
                dataset.input_shape[1],
                cfg.hidden,
                dataset.classes,
                cfg.init_seed,
                cfg.precision,
            ))
        }
    }
}

pub fn train_options(cfg: &RunConfig, turnover: bool) -> TrainOptions {
    TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        shuffle_seed: cfg.shuffle_seed,
        schedule: LRSchedule {
            base_lr: cfg.lr,
            milestones: cfg.lr_milestones.clone(),
            decay_factor: cfg.lr_decay,
        },
        momentum: cfg.momentum,
        turnover: turnover.then(|| TurnoverOptions {
            mask_seed: cfg.mask_seed,
        }),
        stats_stride: cfg.stats_stride,
    }
}

pub fn mask_eval_scale(cfg: &RunConfig) -> f64 {
    if cfg.eval_mask_scaled {
        crate::mask::KEEP_SCALE
    } else {
        1.0
    }
}

/// Tracked subsets are split-scoped: example ids number from zero within each
/// split's canonical file order, so a train subset must never be matched against
/// test ids.
#[derive(Debug, Clone, Default)]
pub struct TrackedSubsets {
    pub train: Vec<SubsetSpec>,
    pub test: Vec<SubsetSpec>,
}

/// Resolves the tracked subsets for dynamics runs. In percentile mode, test
/// records present in the scores CSV get their own percentile partition, so test
/// dynamics of easy/difficult subsets can be monitored as well.
pub fn resolve_subsets(cfg: &RunConfig, train: &Dataset) -> Result<TrackedSubsets> {
    match cfg.subset_mode {
        SubsetMode::None => Ok(TrackedSubsets::default()),
        SubsetMode::Corruption => {
            let clean: Vec<u64> = train.examples.iter().filter(|e| !e.corrupted).map(|e| e.id).collect();
            let corrupted: Vec<u64> = train.examples.iter().filter(|e| e.corrupted).map(|e| e.id).collect();
            if corrupted.is_empty() {
                return Err(Error::input(
                    "subset_mode=corruption requires a corrupted dataset (n_corrupt > 0)",
                ));
            }
            Ok(TrackedSubsets {
                train: vec![
                    SubsetSpec::new("clean", clean),
                    SubsetSpec::new("corrupted", corrupted),
                ],
                test: Vec::new(),
            })
        }
        SubsetMode::Percentile => {
            if cfg.scores_csv.is_empty() {
                return Err(Error::input(
                    "subset_mode=percentile requires scores_csv pointing at a scores file",
                ));
            }
            let records = crate::report::read_scores_csv(Path::new(&cfg.scores_csv))?;
            let mut out = TrackedSubsets::default();
            for (split, slot) in [(Split::Train, &mut out.train), (Split::Test, &mut out.test)] {
                let pairs: Vec<(u64, f64)> = records
                    .iter()
                    .filter(|r| r.split == split)
                    .map(|r| (r.example_id, r.score))
                    .collect();
                if pairs.is_empty() {
                    continue;
                }
                let (easy, difficult) =
                    data::partition_by_score(&pairs, cfg.easy_fraction, cfg.difficult_fraction)?;
                *slot = vec![easy, difficult];
            }
            if out.train.is_empty() {
                return Err(Error::input("scores_csv has no train records to partition"));
            }
            Ok(out)
        }
        SubsetMode::File => {
            if cfg.subsets_csv.is_empty() {
                return Err(Error::input("subset_mode=file requires subsets_csv"));
            }
            Ok(TrackedSubsets {
                train: crate::report::read_subsets_csv(Path::new(&cfg.subsets_csv))?,
                test: Vec::new(),
            })
        }
    }
}

/// Appends the full row plus one row per subset with members in this split.
pub fn trace_rows_for_epoch(
    trace: &mut TrainingTrace,
    epoch: usize,
    split: &str,
    evals: &[PerExampleEval],
    subsets: &[SubsetSpec],
) {
    let full = aggregate_group(evals.iter());
    trace.rows.push(TraceRow {
        epoch,
        subset: "full".into(),
        split: split.into(),
        accuracy: full.0,
        loss: full.1,
    });
    for spec in subsets {
        let members: Vec<&PerExampleEval> = evals.iter().filter(|e| spec.contains(e.example_id)).collect();
        if members.is_empty() {
            continue;
        }
        let (accuracy, loss) = aggregate_group(members.into_iter());
        trace.rows.push(TraceRow {
            epoch,
            subset: spec.tag.clone(),
            split: split.into(),
            accuracy,
            loss,
        });
    }
}

fn aggregate_group<'a>(rows: impl Iterator<Item = &'a PerExampleEval>) -> (f64, f64) {
    let mut n = 0usize;
    let mut correct = 0usize;
    let mut loss = 0.0f64;
    for r in rows {
        n += 1;
        if r.correct {
            correct += 1;
        }
        loss += r.loss;
    }
    (correct as f64 / n as f64, loss / n as f64)
}

/// Smallest epoch k from which both sub-network accuracy curves change by less
/// than `max_change` per epoch through the end of training.
pub fn subnet_plateau_epoch(rows: &[SubnetTraceRow], max_change: f64) -> Option<usize> {
    if rows.len() < 2 {
        return rows.first().map(|r| r.epoch);
    }
    let mut k = rows.len() - 1;
    for i in (0..rows.len() - 1).rev() {
        let du = (rows[i + 1].unmuted_accuracy - rows[i].unmuted_accuracy).abs();
        let dm = (rows[i + 1].muted_accuracy - rows[i].muted_accuracy).abs();
        if du < max_change && dm < max_change {
            k = i;
        } else {
            break;
        }
    }
    if k == rows.len() - 1 {
        None
    } else {
        Some(rows[k].epoch)
    }
}

/// Centered moving average; boundary windows shrink to what is available.
pub fn smooth(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::input(format!("smoothing window must be odd, got {window}")));
    }
    let half = window / 2;
    let n = series.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n.saturating_sub(1));
        let slice = &series[lo..=hi.min(n - 1)];
        out.push(slice.iter().sum::<f64>() / slice.len() as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_identity_window_one() {
        let s = vec![1.0, 2.0, 3.0];
        assert_eq!(smooth(&s, 1).unwrap(), s);
    }

    #[test]
    fn smooth_constant_unchanged() {
        let s = vec![2.5; 7];
        assert_eq!(smooth(&s, 5).unwrap(), s);
    }

    #[test]
    fn smooth_boundary_rule() {
        let out = smooth(&[0.0, 1.0, 0.0], 3).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-12);
        assert!((out[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((out[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn smooth_rejects_even_window() {
        assert!(smooth(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn synth_mnist_builds_and_quantizes() {
        let mut cfg = RunConfig::default();
        cfg.train_n = 50;
        cfg.test_n = 20;
        let (train, test) = build_datasets(&cfg).unwrap();
        assert_eq!(train.len(), 50);
        assert_eq!(test.unwrap().len(), 20);
        assert_eq!(train.input_shape, vec![784]);
        // Pixels went through u8 quantization: all multiples of 1/255.
        for &p in &train.examples[0].pixels {
            let scaled = p * 255.0;
            assert!((scaled - scaled.round()).abs() < 1e-4);
        }
    }

    #[test]
    fn corruption_mode_resolves_subsets() {
        let mut cfg = RunConfig::default();
        cfg.train_n = 60;
        cfg.test_n = 0;
        cfg.n_corrupt = 20;
        cfg.subset_mode = SubsetMode::Corruption;
        let (train, _) = build_datasets(&cfg).unwrap();
        let subsets = resolve_subsets(&cfg, &train).unwrap();
        assert_eq!(subsets.train.len(), 2);
        assert!(subsets.test.is_empty());
        assert_eq!(subsets.train[0].tag, "clean");
        assert_eq!(subsets.train[0].len(), 40);
        assert_eq!(subsets.train[1].tag, "corrupted");
        assert_eq!(subsets.train[1].len(), 20);
    }

    #[test]
    fn longtail_spec_counts() {
        let spec = longtail_spec(200, 1).unwrap();
        let total = spec.n_head_classes * spec.head_examples_per_class
            + spec.tail_cluster_sizes.iter().sum::<usize>();
        assert_eq!(total, 200);
    }
}
