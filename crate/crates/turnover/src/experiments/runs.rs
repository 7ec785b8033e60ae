//! The experimental protocols as in-memory computations; file emission lives in
//! the runner.

use std::collections::BTreeMap;

use crate::config::RunConfig;
use crate::data::{keep_subset, remove_subset, Dataset, SubsetSpec};
use crate::error::{Error, Result};
use crate::gradstats::{subset_stats, GradientStats};
use crate::influence::{score_dataset, MemorizationRecord};
use crate::model_io::{model_to_bytes, LoadedModel};
use crate::nn::{evaluate, evaluate_per_example, MaskMode, ModelConfig, Network, Precision};
use crate::scalar::Scalar;
use crate::train::train;

use super::{
    apply_corruption, build_base_datasets, build_datasets, build_model_config, mask_eval_scale,
    resolve_subsets, trace_rows_for_epoch, train_options, SubnetTraceRow, TraceRow, TrackedSubsets,
    TrainingTrace,
};

#[derive(Debug, Clone)]
pub struct ScoreRun {
    /// Train records first (by id), then test records when scored.
    pub records: Vec<MemorizationRecord>,
    pub subnet_trace: Vec<SubnetTraceRow>,
    pub model_bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct DynamicsOutput {
    pub trace: TrainingTrace,
    pub gradstats: Vec<GradientStats>,
}

/// Trains the turn-over model and tracks the muted/unmuted sub-network accuracy
/// per epoch (when enabled). Returns the serialized model and the trace.
pub fn train_turnover_model(cfg: &RunConfig) -> Result<(Vec<u8>, Vec<SubnetTraceRow>)> {
    match cfg.precision {
        Precision::F32 => {
            let (net, trace, _, _) = turnover_inner::<f32>(cfg)?;
            Ok((model_to_bytes(&net), trace))
        }
        Precision::F64 => {
            let (net, trace, _, _) = turnover_inner::<f64>(cfg)?;
            Ok((model_to_bytes(&net), trace))
        }
    }
}

fn turnover_inner<S: Scalar>(
    cfg: &RunConfig,
) -> Result<(Network<S>, Vec<SubnetTraceRow>, Dataset, Option<Dataset>)> {
    if !cfg.turnover {
        return Err(Error::config(
            "this protocol trains with turn-over dropout; set turnover=true",
        ));
    }
    let (train_ds, test_ds) = build_datasets(cfg)?;
    let model_cfg = build_model_config(cfg, &train_ds)?;
    let mut opts = train_options(cfg, true);
    opts.stats_stride = 0;
    let scale = mask_eval_scale(cfg);
    let mut subnet: Vec<SubnetTraceRow> = Vec::new();
    let net = train::<S>(
        &model_cfg,
        &train_ds,
        &opts,
        |_, _| Ok(()),
        |net, epoch| {
            if cfg.subnet_trace {
                let unmuted = evaluate(
                    net,
                    &train_ds,
                    MaskMode::Own { seed: cfg.mask_seed, flip: false, scale },
                )?;
                let muted = evaluate(
                    net,
                    &train_ds,
                    MaskMode::Own { seed: cfg.mask_seed, flip: true, scale },
                )?;
                subnet.push(SubnetTraceRow {
                    epoch,
                    unmuted_accuracy: unmuted.accuracy,
                    muted_accuracy: muted.accuracy,
                });
            }
            Ok(())
        },
    )?;
    Ok((net, subnet, train_ds, test_ds))
}

/// Trains with per-example masks and scores every train (and optionally test)
/// example through the muted/unmuted loss gap.
pub fn run_score_pipeline(cfg: &RunConfig) -> Result<ScoreRun> {
    match cfg.precision {
        Precision::F32 => score_pipeline_inner::<f32>(cfg),
        Precision::F64 => score_pipeline_inner::<f64>(cfg),
    }
}

fn score_pipeline_inner<S: Scalar>(cfg: &RunConfig) -> Result<ScoreRun> {
    let (net, subnet_trace, train_ds, test_ds) = turnover_inner::<S>(cfg)?;
    let scale = mask_eval_scale(cfg);
    let mut records = score_dataset(&net, cfg.mask_seed, &train_ds, scale)?;
    if cfg.score_test {
        if let Some(test) = &test_ds {
            records.extend(score_dataset(&net, cfg.mask_seed, test, scale)?);
        }
    }
    Ok(ScoreRun {
        records,
        subnet_trace,
        model_bytes: model_to_bytes(&net),
    })
}

/// Scores the configured datasets with an already-trained turn-over model.
pub fn score_with_model(cfg: &RunConfig, model: &LoadedModel) -> Result<Vec<MemorizationRecord>> {
    let (train_ds, test_ds) = build_datasets(cfg)?;
    let scale = mask_eval_scale(cfg);
    let mut records = match model {
        LoadedModel::F32(net) => score_dataset(net, cfg.mask_seed, &train_ds, scale)?,
        LoadedModel::F64(net) => score_dataset(net, cfg.mask_seed, &train_ds, scale)?,
    };
    if cfg.score_test {
        if let Some(test) = &test_ds {
            records.extend(match model {
                LoadedModel::F32(net) => score_dataset(net, cfg.mask_seed, test, scale)?,
                LoadedModel::F64(net) => score_dataset(net, cfg.mask_seed, test, scale)?,
            });
        }
    }
    Ok(records)
}

/// Per-epoch muted/unmuted sub-network accuracy curves.
pub fn run_early_stop_check(cfg: &RunConfig) -> Result<Vec<SubnetTraceRow>> {
    let mut cfg = cfg.clone();
    cfg.subnet_trace = true;
    let (_, trace) = train_turnover_model(&cfg)?;
    Ok(trace)
}

/// Plain-model training with per-epoch subset accuracy/loss rows and sampled
/// gradient statistics.
pub fn run_subset_dynamics(cfg: &RunConfig) -> Result<DynamicsOutput> {
    if cfg.turnover {
        return Err(Error::config(
            "dynamics runs train a plain model; set turnover=false",
        ));
    }
    let (train_ds, test_ds) = build_datasets(cfg)?;
    let model_cfg = build_model_config(cfg, &train_ds)?;
    let subsets = resolve_subsets(cfg, &train_ds)?;
    match cfg.precision {
        Precision::F32 => {
            dynamics_inner::<f32>(cfg, &model_cfg, &train_ds, &train_ds, test_ds.as_ref(), &subsets)
        }
        Precision::F64 => {
            dynamics_inner::<f64>(cfg, &model_cfg, &train_ds, &train_ds, test_ds.as_ref(), &subsets)
        }
    }
}

fn dynamics_inner<S: Scalar>(
    cfg: &RunConfig,
    model_cfg: &ModelConfig,
    training_data: &Dataset,
    eval_train: &Dataset,
    test: Option<&Dataset>,
    subsets: &TrackedSubsets,
) -> Result<DynamicsOutput> {
    let opts = train_options(cfg, false);
    let tag_of: BTreeMap<u64, &str> = subsets
        .train
        .iter()
        .flat_map(|s| s.member_ids.iter().map(move |&id| (id, s.tag.as_str())))
        .collect();
    let mut trace = TrainingTrace::default();
    let mut stats: Vec<GradientStats> = Vec::new();
    train::<S>(
        model_cfg,
        training_data,
        &opts,
        |net, ctx| {
            let tags: Vec<Option<&str>> = ctx.ids.iter().map(|id| tag_of.get(id).copied()).collect();
            stats.extend(subset_stats(net, ctx.batch, ctx.labels, &tags, ctx.step, ctx.epoch)?);
            Ok(())
        },
        |net, epoch| {
            let evals = evaluate_per_example(net, eval_train, MaskMode::None)?;
            trace_rows_for_epoch(&mut trace, epoch, "train", &evals, &subsets.train);
            if let Some(t) = test {
                let tevals = evaluate_per_example(net, t, MaskMode::None)?;
                trace_rows_for_epoch(&mut trace, epoch, "test", &tevals, &subsets.test);
            }
            Ok(())
        },
    )?;
    Ok(DynamicsOutput { trace, gradstats: stats })
}

/// Identical protocol to `run_subset_dynamics` with the tagged subset removed from
/// training; the removed subset is still evaluated every epoch.
pub fn run_control_removal(cfg: &RunConfig, remove_tag: &str) -> Result<DynamicsOutput> {
    if cfg.turnover {
        return Err(Error::config(
            "dynamics runs train a plain model; set turnover=false",
        ));
    }
    let (train_ds, test_ds) = build_datasets(cfg)?;
    let model_cfg = build_model_config(cfg, &train_ds)?;
    let subsets = resolve_subsets(cfg, &train_ds)?;
    let removed_spec = subsets
        .train
        .iter()
        .find(|s| s.tag == remove_tag)
        .ok_or_else(|| Error::input(format!("no tracked subset tagged '{remove_tag}'")))?
        .clone();
    let reduced = remove_subset(&train_ds, &removed_spec)?;
    // Held-out purity: no parameter update may consume a removed example.
    debug_assert!(reduced.examples.iter().all(|e| !removed_spec.contains(e.id)));
    match cfg.precision {
        Precision::F32 => {
            dynamics_inner::<f32>(cfg, &model_cfg, &reduced, &train_ds, test_ds.as_ref(), &subsets)
        }
        Precision::F64 => {
            dynamics_inner::<f64>(cfg, &model_cfg, &reduced, &train_ds, test_ds.as_ref(), &subsets)
        }
    }
}

/// Run A trains on the easy subset and validates on the difficult one; run B is
/// the mirror image. Subsets must be disjoint and equally sized.
pub fn run_cross_subset(cfg: &RunConfig) -> Result<(TrainingTrace, TrainingTrace)> {
    if cfg.turnover {
        return Err(Error::config(
            "cross-subset runs train a plain model; set turnover=false",
        ));
    }
    let (train_ds, _) = build_datasets(cfg)?;
    let model_cfg = build_model_config(cfg, &train_ds)?;
    let subsets = resolve_subsets(cfg, &train_ds)?;
    if subsets.train.len() != 2 {
        return Err(Error::input(format!(
            "cross-subset needs exactly two tracked subsets, got {}",
            subsets.train.len()
        )));
    }
    let (easy, difficult) = (&subsets.train[0], &subsets.train[1]);
    if easy.member_ids.iter().any(|id| difficult.contains(*id)) {
        return Err(Error::input("cross-subset subsets overlap"));
    }
    if easy.len() != difficult.len() {
        return Err(Error::input(format!(
            "cross-subset subsets must be equal size, got {} vs {}",
            easy.len(),
            difficult.len()
        )));
    }
    let easy_ds = keep_subset(&train_ds, easy)?;
    let difficult_ds = keep_subset(&train_ds, difficult)?;
    let run_a = match cfg.precision {
        Precision::F32 => cross_inner::<f32>(cfg, &model_cfg, &easy_ds, &difficult_ds, &easy.tag, &difficult.tag)?,
        Precision::F64 => cross_inner::<f64>(cfg, &model_cfg, &easy_ds, &difficult_ds, &easy.tag, &difficult.tag)?,
    };
    let run_b = match cfg.precision {
        Precision::F32 => cross_inner::<f32>(cfg, &model_cfg, &difficult_ds, &easy_ds, &difficult.tag, &easy.tag)?,
        Precision::F64 => cross_inner::<f64>(cfg, &model_cfg, &difficult_ds, &easy_ds, &difficult.tag, &easy.tag)?,
    };
    Ok((run_a, run_b))
}

fn cross_inner<S: Scalar>(
    cfg: &RunConfig,
    model_cfg: &ModelConfig,
    train_sub: &Dataset,
    heldout: &Dataset,
    train_tag: &str,
    heldout_tag: &str,
) -> Result<TrainingTrace> {
    debug_assert!({
        let held: std::collections::BTreeSet<u64> = heldout.examples.iter().map(|e| e.id).collect();
        train_sub.examples.iter().all(|e| !held.contains(&e.id))
    });
    let mut opts = train_options(cfg, false);
    opts.stats_stride = 0;
    let mut trace = TrainingTrace::default();
    train::<S>(
        model_cfg,
        train_sub,
        &opts,
        |_, _| Ok(()),
        |net, epoch| {
            let tr = evaluate(net, train_sub, MaskMode::None)?;
            trace.rows.push(TraceRow {
                epoch,
                subset: train_tag.into(),
                split: "train".into(),
                accuracy: tr.accuracy,
                loss: tr.mean_loss,
            });
            let held = evaluate(net, heldout, MaskMode::None)?;
            trace.rows.push(TraceRow {
                epoch,
                subset: heldout_tag.into(),
                split: "test".into(),
                accuracy: held.accuracy,
                loss: held.mean_loss,
            });
            Ok(())
        },
    )?;
    Ok(trace)
}

/// One full plain run per corruption level, sharing data seeds across levels.
pub fn run_corruption_sweep(cfg: &RunConfig, levels: &[f64]) -> Result<Vec<(f64, DynamicsOutput)>> {
    if cfg.turnover {
        return Err(Error::config("sweep runs train a plain model; set turnover=false"));
    }
    if levels.is_empty() {
        return Err(Error::input("sweep needs at least one corruption level"));
    }
    if !levels.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::input("sweep levels must be sorted ascending"));
    }
    if levels.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
        return Err(Error::input("sweep levels must be fractions in [0, 1]"));
    }
    let (base_train, test_ds) = build_base_datasets(cfg)?;
    let model_cfg = build_model_config(cfg, &base_train)?;
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let n_corrupt = (level * base_train.len() as f64).round() as usize;
        let train_ds = apply_corruption(cfg, &base_train, n_corrupt)?;
        let subsets = TrackedSubsets {
            train: if n_corrupt > 0 {
                vec![
                    SubsetSpec::new(
                        "clean",
                        train_ds.examples.iter().filter(|e| !e.corrupted).map(|e| e.id).collect(),
                    ),
                    SubsetSpec::new(
                        "corrupted",
                        train_ds.examples.iter().filter(|e| e.corrupted).map(|e| e.id).collect(),
                    ),
                ]
            } else {
                Vec::new()
            },
            test: Vec::new(),
        };
        let result = match cfg.precision {
            Precision::F32 => {
                dynamics_inner::<f32>(cfg, &model_cfg, &train_ds, &train_ds, test_ds.as_ref(), &subsets)?
            }
            Precision::F64 => {
                dynamics_inner::<f64>(cfg, &model_cfg, &train_ds, &train_ds, test_ds.as_ref(), &subsets)?
            }
        };
        out.push((level, result));
    }
    Ok(out)
}
