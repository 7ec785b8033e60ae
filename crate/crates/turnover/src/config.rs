//! Run configuration: flat `key=value` text files with `#` comments, strict
//! unknown-key rejection, and key=value command-line overrides applied last.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    /// Generated grayscale image corpus written to and re-read from IDX files.
    SynthMnist,
    /// Generated RGB image corpus written to and re-read from CIFAR binary batches.
    SynthCifar,
    /// Real MNIST IDX files under `data_dir`.
    Mnist,
    /// Real CIFAR-10 binary batches under `data_dir`.
    Cifar10,
    /// Synthetic long-tail vector clusters (oracle-scale).
    Longtail,
}

impl DataSource {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "synth-mnist" => Some(DataSource::SynthMnist),
            "synth-cifar" => Some(DataSource::SynthCifar),
            "mnist" => Some(DataSource::Mnist),
            "cifar10" => Some(DataSource::Cifar10),
            "longtail" => Some(DataSource::Longtail),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DataSource::SynthMnist => "synth-mnist",
            DataSource::SynthCifar => "synth-cifar",
            DataSource::Mnist => "mnist",
            DataSource::Cifar10 => "cifar10",
            DataSource::Longtail => "longtail",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mlp,
    Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsetMode {
    None,
    /// Tags from corruption flags: clean / corrupted.
    Corruption,
    /// Tags from a scores CSV percentile partition: easy / difficult.
    Percentile,
    /// Tags from an explicit subsets CSV.
    File,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DataSource,
    pub data_dir: String,
    pub train_n: usize,
    pub test_n: usize,
    pub n_corrupt: usize,
    pub data_seed: u64,

    pub model: ModelKind,
    pub hidden: usize,
    pub precision: Precision,
    pub init_seed: u64,

    pub lr: f64,
    pub momentum: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,

    pub turnover: bool,
    pub mask_seed: u64,
    pub eval_mask_scaled: bool,
    pub score_test: bool,
    pub subnet_trace: bool,

    pub stats_stride: usize,
    pub subset_mode: SubsetMode,
    pub scores_csv: String,
    pub subsets_csv: String,
    pub easy_fraction: f64,
    pub difficult_fraction: f64,

    pub sweep_levels: Vec<f64>,
    pub out_dir: String,
    pub model_path: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DataSource::SynthMnist,
            data_dir: String::new(),
            train_n: 10_000,
            test_n: 2_000,
            n_corrupt: 0,
            data_seed: 1,
            model: ModelKind::Mlp,
            hidden: 512,
            precision: Precision::F32,
            init_seed: 7,
            lr: 0.06,
            momentum: 0.0,
            lr_milestones: Vec::new(),
            lr_decay: 0.1,
            epochs: 10,
            batch_size: 256,
            shuffle_seed: 3,
            turnover: false,
            mask_seed: 42,
            eval_mask_scaled: true,
            score_test: false,
            subnet_trace: true,
            stats_stride: 10,
            subset_mode: SubsetMode::None,
            scores_csv: String::new(),
            subsets_csv: String::new(),
            easy_fraction: 1.0 / 6.0,
            difficult_fraction: 1.0 / 6.0,
            sweep_levels: vec![0.0, 0.2, 0.4],
            out_dir: String::new(),
            model_path: String::new(),
        }
    }
}

impl RunConfig {
    /// Named presets mirroring the paper's set-ups at desk scale.
    pub fn preset(name: &str) -> Option<RunConfig> {
        let base = RunConfig::default();
        match name {
            // Score pipeline on the uncorrupted image corpus (turn-over MLP,
            // short training per the early-stop observation). Width, lr, and
            // batch are sized so ten epochs suffice for per-example separation.
            "mnist-score" => Some(RunConfig {
                turnover: true,
                epochs: 10,
                lr: 0.12,
                hidden: 1024,
                batch_size: 128,
                // Inert within the 10-epoch scoring horizon; stabilizes the
                // longer early-stop runs.
                lr_milestones: vec![10],
                stats_stride: 0,
                ..base
            }),
            // Score pipeline with label corruption.
            "mnist-score-corrupt" => Some(RunConfig {
                n_corrupt: 2_000,
                ..RunConfig::preset("mnist-score")?
            }),
            // Plain-model dynamics on the corrupted corpus. Momentum and small
            // batches compensate for the desk-scale step deficit so label noise
            // starts being memorized within the first quarter of training.
            "mnist-dynamics-corrupt" => Some(RunConfig {
                n_corrupt: 3_333,
                epochs: 60,
                lr: 0.03,
                momentum: 0.9,
                batch_size: 64,
                subset_mode: SubsetMode::Corruption,
                stats_stride: 24,
                ..base
            }),
            // Plain-model dynamics on clean data, partitioned by scores.
            "mnist-dynamics" => Some(RunConfig {
                epochs: 60,
                lr: 0.03,
                momentum: 0.9,
                batch_size: 64,
                subset_mode: SubsetMode::Percentile,
                stats_stride: 0,
                ..base
            }),
            // Corruption sweep; the level list replaces n_corrupt per run.
            "mnist-sweep" => Some(RunConfig {
                epochs: 60,
                lr: 0.03,
                momentum: 0.9,
                batch_size: 64,
                subset_mode: SubsetMode::None,
                stats_stride: 0,
                ..base
            }),
            // Conv preset: score pipeline on the RGB corpus.
            "cifar-score" => Some(RunConfig {
                dataset: DataSource::SynthCifar,
                model: ModelKind::Conv,
                hidden: 128,
                train_n: 6_000,
                test_n: 1_000,
                turnover: true,
                epochs: 8,
                lr: 0.01,
                momentum: 0.9,
                stats_stride: 0,
                subnet_trace: false,
                ..base
            }),
            // Conv preset: cross-subset transfer runs.
            "cifar-cross" => Some(RunConfig {
                dataset: DataSource::SynthCifar,
                model: ModelKind::Conv,
                hidden: 128,
                train_n: 6_000,
                test_n: 1_000,
                epochs: 45,
                lr: 0.01,
                momentum: 0.9,
                batch_size: 64,
                lr_milestones: vec![25, 35],
                stats_stride: 0,
                subset_mode: SubsetMode::Percentile,
                ..base
            }),
            // Long-tail oracle comparison set. The oracle retrains at 64-bit;
            // the turn-over model gets enough width that mask asymmetry noise
            // stays below the rarity signal.
            "longtail-oracle" => Some(RunConfig {
                dataset: DataSource::Longtail,
                train_n: 200,
                test_n: 0,
                hidden: 128,
                precision: Precision::F64,
                turnover: true,
                epochs: 80,
                lr: 0.25,
                lr_milestones: vec![60],
                batch_size: 16,
                stats_stride: 0,
                subnet_trace: false,
                ..base
            }),
            _ => None,
        }
    }

    /// Every effective value, sorted by key, for the run manifest.
    pub fn manifest_entries(&self) -> Vec<(String, String)> {
        let mut m = BTreeMap::new();
        m.insert("dataset", self.dataset.as_str().to_string());
        m.insert("data_dir", self.data_dir.clone());
        m.insert("train_n", self.train_n.to_string());
        m.insert("test_n", self.test_n.to_string());
        m.insert("n_corrupt", self.n_corrupt.to_string());
        m.insert("data_seed", self.data_seed.to_string());
        m.insert(
            "model",
            match self.model {
                ModelKind::Mlp => "mlp".into(),
                ModelKind::Conv => "conv".into(),
            },
        );
        m.insert("hidden", self.hidden.to_string());
        m.insert(
            "precision",
            match self.precision {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
        );
        m.insert("init_seed", self.init_seed.to_string());
        m.insert("lr", self.lr.to_string());
        m.insert("momentum", self.momentum.to_string());
        m.insert(
            "lr_milestones",
            self.lr_milestones
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        m.insert("lr_decay", self.lr_decay.to_string());
        m.insert("epochs", self.epochs.to_string());
        m.insert("batch_size", self.batch_size.to_string());
        m.insert("shuffle_seed", self.shuffle_seed.to_string());
        m.insert("turnover", self.turnover.to_string());
        m.insert("mask_seed", self.mask_seed.to_string());
        m.insert("eval_mask_scaled", self.eval_mask_scaled.to_string());
        m.insert("score_test", self.score_test.to_string());
        m.insert("subnet_trace", self.subnet_trace.to_string());
        m.insert("stats_stride", self.stats_stride.to_string());
        m.insert(
            "subset_mode",
            match self.subset_mode {
                SubsetMode::None => "none".into(),
                SubsetMode::Corruption => "corruption".into(),
                SubsetMode::Percentile => "percentile".into(),
                SubsetMode::File => "file".into(),
            },
        );
        m.insert("scores_csv", self.scores_csv.clone());
        m.insert("subsets_csv", self.subsets_csv.clone());
        m.insert("easy_fraction", self.easy_fraction.to_string());
        m.insert("difficult_fraction", self.difficult_fraction.to_string());
        m.insert(
            "sweep_levels",
            self.sweep_levels
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        m.insert("out_dir", self.out_dir.clone());
        m.insert("model_path", self.model_path.clone());
        m.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    fn apply(&mut self, key: &str, value: &str, loc: &str) -> Result<()> {
        let bad = |what: &str| {
            Error::config(format!("{loc}: key '{key}': expected {what}, got '{value}'"))
        };
        match key {
            "dataset" => {
                self.dataset = DataSource::parse(value).ok_or_else(|| bad("a dataset source"))?
            }
            "data_dir" => self.data_dir = value.to_string(),
            "train_n" => self.train_n = value.parse().map_err(|_| bad("an integer"))?,
            "test_n" => self.test_n = value.parse().map_err(|_| bad("an integer"))?,
            "n_corrupt" => self.n_corrupt = value.parse().map_err(|_| bad("an integer"))?,
            "data_seed" => self.data_seed = value.parse().map_err(|_| bad("an integer"))?,
            "model" => {
                self.model = match value {
                    "mlp" => ModelKind::Mlp,
                    "conv" => ModelKind::Conv,
                    _ => return Err(bad("'mlp' or 'conv'")),
                }
            }
            "hidden" => self.hidden = value.parse().map_err(|_| bad("an integer"))?,
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(bad("'f32' or 'f64'")),
                }
            }
            "init_seed" => self.init_seed = value.parse().map_err(|_| bad("an integer"))?,
            "lr" => self.lr = value.parse().map_err(|_| bad("a number"))?,
            "momentum" => self.momentum = value.parse().map_err(|_| bad("a number"))?,
            "lr_milestones" => {
                self.lr_milestones = parse_list(value).map_err(|_| bad("a comma list of integers"))?
            }
            "lr_decay" => self.lr_decay = value.parse().map_err(|_| bad("a number"))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad("an integer"))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("an integer"))?,
            "shuffle_seed" => self.shuffle_seed = value.parse().map_err(|_| bad("an integer"))?,
            "turnover" => self.turnover = parse_bool(value).ok_or_else(|| bad("true/false"))?,
            "mask_seed" => self.mask_seed = value.parse().map_err(|_| bad("an integer"))?,
            "eval_mask_scaled" => {
                self.eval_mask_scaled = parse_bool(value).ok_or_else(|| bad("true/false"))?
            }
            "score_test" => self.score_test = parse_bool(value).ok_or_else(|| bad("true/false"))?,
            "subnet_trace" => {
                self.subnet_trace = parse_bool(value).ok_or_else(|| bad("true/false"))?
            }
            "stats_stride" => self.stats_stride = value.parse().map_err(|_| bad("an integer"))?,
            "subset_mode" => {
                self.subset_mode = match value {
                    "none" => SubsetMode::None,
                    "corruption" => SubsetMode::Corruption,
                    "percentile" => SubsetMode::Percentile,
                    "file" => SubsetMode::File,
                    _ => return Err(bad("none/corruption/percentile/file")),
                }
            }
            "scores_csv" => self.scores_csv = value.to_string(),
            "subsets_csv" => self.subsets_csv = value.to_string(),
            "easy_fraction" => self.easy_fraction = value.parse().map_err(|_| bad("a number"))?,
            "difficult_fraction" => {
                self.difficult_fraction = value.parse().map_err(|_| bad("a number"))?
            }
            "sweep_levels" => {
                self.sweep_levels = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse())
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|_| bad("a comma list of numbers"))?
            }
            "out_dir" => self.out_dir = value.to_string(),
            "model_path" => self.model_path = value.to_string(),
            _ => {
                return Err(Error::config(format!("{loc}: unknown key '{key}'")));
            }
        }
        Ok(())
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<usize>, std::num::ParseIntError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse())
        .collect()
}

/// Parses config text; `overrides` are `key=value` pairs applied last.
pub fn parse_config_str(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    parse_config_str_onto(RunConfig::default(), text, overrides)
}

/// Like [`parse_config_str`] but layering on top of an existing base (a preset).
pub fn parse_config_str_onto(
    base: RunConfig,
    text: &str,
    overrides: &[(String, String)],
) -> Result<RunConfig> {
    let mut cfg = base;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(format!(
                "line {}: expected key=value, got '{line}'",
                lineno + 1
            )));
        };
        cfg.apply(key.trim(), value.trim(), &format!("line {}", lineno + 1))?;
    }
    for (key, value) in overrides {
        cfg.apply(key.trim(), value.trim(), "override")?;
    }
    validate(&cfg)?;
    Ok(cfg)
}

pub fn parse_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_str(&text, overrides)
}

fn validate(cfg: &RunConfig) -> Result<()> {
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be >= 1"));
    }
    if cfg.epochs == 0 {
        return Err(Error::config("epochs must be >= 1"));
    }
    if !(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0) {
        return Err(Error::config("lr_decay must be in (0, 1]"));
    }
    if !cfg.lr_milestones.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::config("lr_milestones must be strictly increasing"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_basic_file() {
        let cfg = parse_config_str("lr = 0.06\nepochs=3 # short\n\n# comment\n", &[]).unwrap();
        assert_eq!(cfg.lr, 0.06);
        assert_eq!(cfg.epochs, 3);
    }

    #[test]
    fn override_beats_file() {
        let cfg = parse_config_str(
            "epochs=10\n",
            &[("epochs".to_string(), "3".to_string())],
        )
        .unwrap();
        assert_eq!(cfg.epochs, 3);
    }

    #[test]
    fn unknown_key_names_line() {
        let err = parse_config_str("lr=0.1\nbatchsize=256\n", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("batchsize"), "{msg}");
    }

    #[test]
    fn type_mismatch_names_key() {
        let err = parse_config_str("epochs=three\n", &[]).unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
    }

    #[test]
    fn milestones_parse_and_validate() {
        let cfg = parse_config_str("lr_milestones=30,45\n", &[]).unwrap();
        assert_eq!(cfg.lr_milestones, vec![30, 45]);
        assert!(parse_config_str("lr_milestones=45,30\n", &[]).is_err());
    }

    #[test]
    fn presets_exist() {
        for name in [
            "mnist-score",
            "mnist-score-corrupt",
            "mnist-dynamics-corrupt",
            "mnist-dynamics",
            "mnist-sweep",
            "cifar-score",
            "cifar-cross",
            "longtail-oracle",
        ] {
            assert!(RunConfig::preset(name).is_some(), "missing preset {name}");
        }
        assert!(RunConfig::preset("nope").is_none());
    }

    #[test]
    fn manifest_is_sorted_and_complete() {
        let cfg = RunConfig::default();
        let entries = cfg.manifest_entries();
        for w in entries.windows(2) {
            assert!(w[0].0 < w[1].0);
        }
        assert!(entries.iter().any(|(k, _)| k == "lr"));
        assert!(entries.iter().any(|(k, _)| k == "mask_seed"));
    }
}
