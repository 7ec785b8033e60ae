//! Command orchestration: run a protocol, write every artifact under one output
//! directory together with the run manifest. No timestamps or machine state go
//! into any artifact, so re-running a config reproduces files byte-for-byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{DataSource, RunConfig};
use crate::data::{partition_by_score, Dataset, Split};
use crate::error::{Error, Result};
use crate::influence::{loo_oracle_all, LooRecord};
use crate::model_io;
use crate::nn::{Network, Precision};
use crate::report::{
    dynamics_to_csv, gradstats_to_csv, loo_to_csv, read_scores_csv, scores_to_csv, subnet_to_csv,
    subsets_to_csv, CORRUPTION_HEADER,
};
use crate::rng::derive_seed;
use crate::train::train_plain;

use super::{
    build_datasets, build_model_config, run_control_removal, run_corruption_sweep,
    run_cross_subset, run_early_stop_check, run_score_pipeline, run_subset_dynamics,
    score_with_model, train_options, train_turnover_model,
};

/// Repeats used by the leave-one-out oracle command.
pub const LOO_REPEATS: usize = 3;

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    if cfg.out_dir.is_empty() {
        return Err(Error::config("missing required key 'out_dir'"));
    }
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Writes manifest.txt: command, every effective config value, input-file digests.
pub fn write_manifest(cfg: &RunConfig, dir: &Path, command: &str) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "command={command}").expect("write");
    for (k, v) in cfg.manifest_entries() {
        writeln!(out, "{k}={v}").expect("write");
    }
    for (k, v) in input_digest_entries(cfg)? {
        writeln!(out, "{k}={v}").expect("write");
    }
    std::fs::write(dir.join("manifest.txt"), out)?;
    Ok(())
}

fn input_digest_entries(cfg: &RunConfig) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut digest_of = |label: &str, path: PathBuf| -> Result<()> {
        let bytes = std::fs::read(&path)
            .map_err(|e| Error::input(format!("cannot read input {}: {e}", path.display())))?;
        out.push((
            format!("digest_{label}"),
            format!("{:016x}", crate::data::idx::fnv1a64(&bytes)),
        ));
        Ok(())
    };
    match cfg.dataset {
        DataSource::Mnist => {
            let dir = PathBuf::from(&cfg.data_dir);
            digest_of("train_images", dir.join("train-images-idx3-ubyte"))?;
            digest_of("train_labels", dir.join("train-labels-idx1-ubyte"))?;
            digest_of("test_images", dir.join("t10k-images-idx3-ubyte"))?;
            digest_of("test_labels", dir.join("t10k-labels-idx1-ubyte"))?;
        }
        DataSource::Cifar10 => {
            let dir = PathBuf::from(&cfg.data_dir);
            for i in 1..=5 {
                digest_of(&format!("batch_{i}"), dir.join(format!("data_batch_{i}.bin")))?;
            }
            digest_of("test_batch", dir.join("test_batch.bin"))?;
        }
        _ => {}
    }
    Ok(out)
}

/// Applies the configured corruption and records which labels changed.
pub fn cmd_corrupt(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = ensure_out_dir(cfg)?;
    let (train, _) = build_datasets(cfg)?;
    let mut csv = String::from(CORRUPTION_HEADER);
    csv.push('\n');
    for e in train.examples.iter().filter(|e| e.corrupted) {
        writeln!(csv, "{},{},{}", e.id, e.original_label, e.observed_label).expect("write");
    }
    std::fs::write(dir.join("corruption.csv"), csv)?;
    write_manifest(cfg, &dir, "corrupt")?;
    Ok(dir)
}

/// Trains the turn-over model; emits model.bin and the sub-network trace.
pub fn cmd_train_turnover(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = ensure_out_dir(cfg)?;
    let (model_bytes, subnet) = train_turnover_model(cfg)?;
    std::fs::write(dir.join("model.bin"), model_bytes)?;
    std::fs::write(dir.join("subnet_trace.csv"), subnet_to_csv(&subnet))?;
    write_manifest(cfg, &dir, "train-turnover")?;
    Ok(dir)
}

/// Full score pipeline (train + score), or score-only when model_path is set.
pub fn cmd_score(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = ensure_out_dir(cfg)?;
    if cfg.model_path.is_empty() {
        let run = run_score_pipeline(cfg)?;
        std::fs::write(dir.join("model.bin"), &run.model_bytes)?;
        std::fs::write(dir.join("subnet_trace.csv"), subnet_to_csv(&run.subnet_trace))?;
        std::fs::write(dir.join("scores.csv"), scores_to_csv(&run.records))?;
    } else {
        let model = model_io::load_model(Path::new(&cfg.model_path))?;
        let records = score_with_model(cfg, &model)?;
        std::fs::write(dir.join("scores.csv"), scores_to_csv(&records))?;
    }
    write_manifest(cfg, &dir, "score")?;
    Ok(dir)
}

/// Partitions a scores CSV into easy/difficult subsets.
pub fn cmd_partition(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = ensure_out_dir(cfg)?;
    if cfg.scores_csv.is_empty() {
        return Err(Error::input("partition requires scores_csv"));
    }
    let records = read_scores_csv(Path::new(&cfg.scores_csv))?;
    let pairs: Vec<(u64, f64)> = records
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| (r.example_id, r.score))
        .collect();
    let (easy, difficult) = partition_by_score(&pairs, cfg.easy_fraction, cfg.difficult_fraction)?;
    std::fs::write(dir.join("subsets.csv"), subsets_to_csv(&[easy, difficult]))?;
    write_manifest(cfg, &dir, "partition")?;
    Ok(dir)
}

/// Plain-model subset dynamics with sampled gradient statistics.
pub fn cmd_dynamics(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = ensure_out_dir(cfg)?;
    let out = run_subset_dynamics(cfg)?;
    std::fs::write(dir.join("dynamics.csv"), dynamics_to_csv(&out.trace))?;
    std::fs::write(dir.join("gradstats.csv"), gradstats_to_csv(&out.gradstats))?;
    write_manifest(cfg, &dir, "train-dynamics")?;
    Ok(dir)
}

/// Dynamics with the tagged subset removed from training (still evaluated).
pub fn cmd_control_removal(cfg: &RunConfig, remove_tag: &str) -> Result<PathBuf> {
    let dir = ensure_out_dir(cfg)?;
    let out = run_control_removal(cfg, remove_tag)?;
    std::fs::write(dir.join("dynamics.csv"), dynamics_to_csv(&out.trace))?;
    std::fs::write(dir.join("gradstats.csv"), gradstats_to_csv(&out.gradstats))?;
    write_manifest(cfg, &dir, "control-removal")?;
    Ok(dir)
}

/// Train-on-easy and train-on-difficult runs, each validating on the other subset.
pub fn cmd_cross_subset(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = ensure_out_dir(cfg)?;
    let (run_a, run_b) = run_cross_subset(cfg)?;
    for trace in [&run_a, &run_b] {
        let tag = trace
            .rows
            .iter()
            .find(|r| r.split == "train")
            .map(|r| r.subset.clone())
            .unwrap_or_else(|| "unknown".into());
        std::fs::write(dir.join(format!("cross_train_on_{tag}.csv")), dynamics_to_csv(trace))?;
    }
    write_manifest(cfg, &dir, "cross-subset")?;
    Ok(dir)
}

/// One dynamics run per corruption level.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = ensure_out_dir(cfg)?;
    let results = run_corruption_sweep(cfg, &cfg.sweep_levels)?;
    for (level, out) in &results {
        let name = format!("sweep_{}.csv", format!("{level}").replace('.', "_"));
        std::fs::write(dir.join(name), dynamics_to_csv(&out.trace))?;
    }
    write_manifest(cfg, &dir, "sweep")?;
    Ok(dir)
}

/// Sub-network convergence curves from a turn-over training run.
pub fn cmd_early_stop(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = ensure_out_dir(cfg)?;
    let rows = run_early_stop_check(cfg)?;
    std::fs::write(dir.join("subnet_trace.csv"), subnet_to_csv(&rows))?;
    write_manifest(cfg, &dir, "early-stop")?;
    Ok(dir)
}

/// Turn-over scores plus the brute-force leave-one-out oracle on a small dataset,
/// written side by side for agreement analysis.
pub fn cmd_loo_oracle(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = ensure_out_dir(cfg)?;
    let run = run_score_pipeline(cfg)?;
    std::fs::write(dir.join("scores.csv"), scores_to_csv(&run.records))?;

    let records = loo_oracle_records(cfg)?;
    std::fs::write(dir.join("loo.csv"), loo_to_csv(&records))?;
    write_manifest(cfg, &dir, "loo-oracle")?;
    Ok(dir)
}

/// The oracle always runs at 64-bit; finite tolerances are meaningless at f32.
pub fn loo_oracle_records(cfg: &RunConfig) -> Result<Vec<LooRecord>> {
    let (train_ds, _) = build_datasets(cfg)?;
    let mut oracle_model_cfg = build_model_config(cfg, &train_ds)?;
    oracle_model_cfg.precision = Precision::F64;
    let mut opts = train_options(cfg, false);
    opts.stats_stride = 0;
    let train_fn = move |ds: &Dataset, seed: u64| -> Result<Network<f64>> {
        let mut mc = oracle_model_cfg.clone();
        mc.init_seed = seed;
        let mut o = opts.clone();
        o.shuffle_seed = derive_seed(seed, 1);
        train_plain::<f64>(&mc, ds, &o)
    };
    loo_oracle_all(&train_fn, &train_ds, LOO_REPEATS, derive_seed(cfg.data_seed, 0x100))
}
