//! End-to-end runner checks at miniature scale: artifact schemas, byte-level
//! reproducibility, and report generation.

use std::path::Path;

use turnover::config::{RunConfig, SubsetMode};
use turnover::experiments::{self, cmd_dynamics, cmd_partition, cmd_score};
use turnover::report::{parse_subnet_csv, read_dynamics_csv, read_scores_csv, read_subsets_csv, report};

fn tiny_score_cfg(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::preset("mnist-score").unwrap();
    cfg.train_n = 300;
    cfg.test_n = 60;
    cfg.n_corrupt = 60;
    cfg.epochs = 4;
    cfg.batch_size = 64;
    cfg.hidden = 64;
    cfg.score_test = true;
    cfg.out_dir = out.display().to_string();
    cfg
}

fn tiny_dynamics_cfg(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::preset("mnist-dynamics-corrupt").unwrap();
    cfg.train_n = 300;
    cfg.test_n = 60;
    cfg.n_corrupt = 100;
    cfg.epochs = 5;
    cfg.batch_size = 64;
    cfg.hidden = 64;
    cfg.stats_stride = 3;
    cfg.out_dir = out.display().to_string();
    cfg
}

#[test]
fn score_run_emits_expected_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let run_a = dir.path().join("a");
    let cfg = tiny_score_cfg(&run_a);
    cmd_score(&cfg).unwrap();
    let names = ["manifest.txt", "model.bin", "scores.csv", "subnet_trace.csv"];
    let first: Vec<Vec<u8>> = names
        .iter()
        .map(|n| std::fs::read(run_a.join(n)).unwrap())
        .collect();
    cmd_score(&cfg).unwrap();
    for (name, a) in names.iter().zip(&first) {
        let b = std::fs::read(run_a.join(name)).unwrap();
        assert_eq!(a, &b, "{name} differs between identical runs");
        assert!(!a.is_empty());
    }

    let records = read_scores_csv(&run_a.join("scores.csv")).unwrap();
    assert_eq!(records.len(), 300 + 60);
    let train_corrupted = records
        .iter()
        .filter(|r| r.split == turnover::data::Split::Train && r.corrupted)
        .count();
    assert_eq!(train_corrupted, 60);
    for r in &records {
        assert_eq!(r.score, r.loss_muted - r.loss_unmuted);
        assert!(r.loss_muted >= 0.0 && r.loss_unmuted >= 0.0);
    }

    let subnet = parse_subnet_csv(&std::fs::read_to_string(run_a.join("subnet_trace.csv")).unwrap()).unwrap();
    assert_eq!(subnet.len(), 4);
}

#[test]
fn dynamics_run_schema_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let run_a = dir.path().join("a");
    let cfg = tiny_dynamics_cfg(&run_a);
    cmd_dynamics(&cfg).unwrap();
    let first: Vec<Vec<u8>> = ["dynamics.csv", "gradstats.csv"]
        .iter()
        .map(|n| std::fs::read(run_a.join(n)).unwrap())
        .collect();
    cmd_dynamics(&cfg).unwrap();
    for (name, a) in ["dynamics.csv", "gradstats.csv"].iter().zip(&first) {
        assert_eq!(
            &std::fs::read(run_a.join(name)).unwrap(),
            a,
            "{name} differs"
        );
    }

    let trace = read_dynamics_csv(&run_a.join("dynamics.csv")).unwrap();
    // Schema: epochs x (full + clean + corrupted on train; full on test).
    let epochs = 5;
    assert_eq!(trace.rows.len(), epochs * (3 + 1));
    for e in 0..epochs {
        let in_epoch: Vec<_> = trace.rows.iter().filter(|r| r.epoch == e).collect();
        assert_eq!(in_epoch.len(), 4);
        assert!(in_epoch
            .iter()
            .any(|r| r.subset == "full" && r.split == "train"));
        assert!(in_epoch
            .iter()
            .any(|r| r.subset == "clean" && r.split == "train"));
        assert!(in_epoch
            .iter()
            .any(|r| r.subset == "corrupted" && r.split == "train"));
        assert!(in_epoch.iter().any(|r| r.subset == "full" && r.split == "test"));
        for r in &in_epoch {
            assert!((0.0..=1.0).contains(&r.accuracy));
        }
    }

    // 300 examples / batch 64 = 5 steps per epoch, stride 3 -> steps 0,3,6,...
    let stats_text = std::fs::read_to_string(run_a.join("gradstats.csv")).unwrap();
    let stats = turnover::report::parse_gradstats_csv(&stats_text).unwrap();
    assert!(!stats.is_empty());
    let full_rows = stats.iter().filter(|s| s.subset_tag == "full").count();
    let sampled_steps: std::collections::BTreeSet<usize> = stats.iter().map(|s| s.step).collect();
    assert_eq!(full_rows, sampled_steps.len());
    for s in &stats {
        if let Some(c) = s.cosine_similarity {
            assert!((-1.0..=1.0).contains(&c));
        }
    }
}

#[test]
fn partition_command_then_percentile_dynamics() {
    let dir = tempfile::tempdir().unwrap();
    let score_dir = dir.path().join("scores");
    cmd_score(&tiny_score_cfg(&score_dir)).unwrap();

    let mut pcfg = RunConfig::default();
    pcfg.out_dir = dir.path().join("parts").display().to_string();
    pcfg.scores_csv = score_dir.join("scores.csv").display().to_string();
    pcfg.easy_fraction = 1.0 / 6.0;
    pcfg.difficult_fraction = 1.0 / 6.0;
    let part_dir = cmd_partition(&pcfg).unwrap();
    let subsets = read_subsets_csv(&part_dir.join("subsets.csv")).unwrap();
    assert_eq!(subsets.len(), 2);
    assert_eq!(subsets[0].tag, "easy");
    assert_eq!(subsets[1].tag, "difficult");
    // floor(300 / 6) per side, train records only.
    assert_eq!(subsets[0].len(), 50);
    assert_eq!(subsets[1].len(), 50);

    let mut dcfg = tiny_dynamics_cfg(&dir.path().join("dyn"));
    dcfg.n_corrupt = 0;
    dcfg.subset_mode = SubsetMode::Percentile;
    dcfg.scores_csv = score_dir.join("scores.csv").display().to_string();
    let out = experiments::run_subset_dynamics(&dcfg).unwrap();
    let tags: std::collections::BTreeSet<&str> =
        out.trace.rows.iter().map(|r| r.subset.as_str()).collect();
    assert!(tags.contains("easy") && tags.contains("difficult") && tags.contains("full"));
}

#[test]
fn report_summarizes_and_writes_svgs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    cmd_score(&tiny_score_cfg(&run)).unwrap();
    cmd_dynamics(&tiny_dynamics_cfg(&run)).unwrap();

    let summary1 = report(&run).unwrap();
    let svg1 = std::fs::read(run.join("scores_hist.svg")).unwrap();
    let dyn1 = std::fs::read(run.join("dynamics_accuracy.svg")).unwrap();
    let summary2 = report(&run).unwrap();
    let svg2 = std::fs::read(run.join("scores_hist.svg")).unwrap();
    assert_eq!(summary1, summary2);
    assert_eq!(svg1, svg2);
    assert!(!dyn1.is_empty());

    assert!(summary1.contains("scores.mean_corrupted"));
    assert!(summary1.contains("scores.mean_clean"));
    assert!(summary1.contains("dynamics.full.test.final_accuracy"));
    assert!(summary1.contains("subnet.final_unmuted_accuracy"));
    assert!(run.join("ranked_examples.csv").exists());
    assert!(run.join("gradstats_cosine.svg").exists());

    // Not a run directory -> error naming expectations.
    let err = report(dir.path()).unwrap_err();
    assert!(err.to_string().contains("manifest.txt"));
}

#[test]
fn protocol_separation_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_score_cfg(&dir.path().join("x"));
    cfg.turnover = false;
    assert!(turnover::experiments::run_score_pipeline(&cfg).is_err());

    let mut dcfg = tiny_dynamics_cfg(&dir.path().join("y"));
    dcfg.turnover = true;
    assert!(turnover::experiments::run_subset_dynamics(&dcfg).is_err());
}
