//! Run-directory reporting: headline metrics as text, SVG charts, and the
//! per-class top/bottom score ranking CSV.

mod csvio;
mod svg;

pub use csvio::{
    dynamics_to_csv, gradstats_to_csv, loo_to_csv, parse_dynamics_csv, parse_gradstats_csv,
    parse_loo_csv, parse_scores_csv, parse_subnet_csv, parse_subsets_csv, read_dynamics_csv,
    read_gradstats_csv, read_scores_csv, read_subsets_csv, scores_to_csv, subnet_to_csv,
    subsets_to_csv, CORRUPTION_HEADER, DYNAMICS_HEADER, GRADSTATS_HEADER, LOO_HEADER,
    SCORES_HEADER, SUBNET_HEADER, SUBSETS_HEADER,
};
pub use svg::{fmt_sig6, histogram_svg, lines_svg, LineSeries};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::Split;
use crate::error::{Error, Result};
use crate::influence::{score_histogram, MemorizationRecord};
use crate::stats;

/// Reads a run directory, prints headline metrics, writes all SVGs.
/// Side-effect free on its inputs; only `*.svg` and `ranked_examples.csv` are written.
pub fn report(run_dir: &Path) -> Result<String> {
    let manifest = run_dir.join("manifest.txt");
    if !manifest.exists() {
        return Err(Error::input(format!(
            "{} is not a run directory: expected manifest.txt plus any of scores.csv, \
             dynamics.csv, gradstats.csv, subnet_trace.csv, loo.csv",
            run_dir.display()
        )));
    }
    let mut out = String::new();
    writeln!(out, "run: {}", run_dir.display()).expect("write");

    let scores_path = run_dir.join("scores.csv");
    let mut scores = None;
    if scores_path.exists() {
        let records = read_scores_csv(&scores_path)?;
        summarize_scores(&mut out, &records);
        write_score_artifacts(run_dir, &records)?;
        scores = Some(records);
    }

    let dynamics_path = run_dir.join("dynamics.csv");
    if dynamics_path.exists() {
        let trace = read_dynamics_csv(&dynamics_path)?;
        summarize_dynamics(&mut out, &trace);
        write_dynamics_svg(run_dir, &trace)?;
    }

    let gradstats_path = run_dir.join("gradstats.csv");
    if gradstats_path.exists() {
        let stats_rows = read_gradstats_csv(&gradstats_path)?;
        summarize_gradstats(&mut out, &stats_rows);
        write_gradstats_svgs(run_dir, &stats_rows)?;
    }

    let subnet_path = run_dir.join("subnet_trace.csv");
    if subnet_path.exists() {
        let text = std::fs::read_to_string(&subnet_path)?;
        let rows = parse_subnet_csv(&text)?;
        summarize_subnet(&mut out, &rows);
        write_subnet_svg(run_dir, &rows)?;
    }

    let loo_path = run_dir.join("loo.csv");
    if loo_path.exists() {
        let text = std::fs::read_to_string(&loo_path)?;
        let loo = parse_loo_csv(&text)?;
        if let Some(records) = &scores {
            let by_id: BTreeMap<u64, f64> = records
                .iter()
                .filter(|r| r.split == Split::Train)
                .map(|r| (r.example_id, r.score))
                .collect();
            let mut a = Vec::new();
            let mut b = Vec::new();
            for rec in &loo {
                if let Some(&turnover) = by_id.get(&rec.example_id) {
                    a.push(rec.mean_score);
                    b.push(turnover);
                }
            }
            if let Some(rho) = stats::spearman(&a, &b) {
                writeln!(out, "oracle.spearman_turnover_vs_loo = {}", fmt_sig6(rho)).expect("write");
            }
        }
        writeln!(out, "oracle.n = {}", loo.len()).expect("write");
    }

    Ok(out)
}

fn summarize_scores(out: &mut String, records: &[MemorizationRecord]) {
    let train: Vec<&MemorizationRecord> = records.iter().filter(|r| r.split == Split::Train).collect();
    if train.is_empty() {
        return;
    }
    let all: Vec<f64> = train.iter().map(|r| r.score).collect();
    writeln!(out, "scores.n = {}", all.len()).expect("write");
    writeln!(out, "scores.mean = {}", fmt_sig6(stats::mean(&all))).expect("write");
    writeln!(out, "scores.median = {}", fmt_sig6(stats::median(&all))).expect("write");
    writeln!(out, "scores.skewness = {}", fmt_sig6(stats::skewness(&all))).expect("write");
    for (flag, name) in [(false, "clean"), (true, "corrupted")] {
        let sub: Vec<f64> = train.iter().filter(|r| r.corrupted == flag).map(|r| r.score).collect();
        if !sub.is_empty() {
            writeln!(out, "scores.mean_{name} = {}", fmt_sig6(stats::mean(&sub))).expect("write");
        }
    }
    let mut classes: Vec<usize> = train.iter().map(|r| r.true_label).collect();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        let sub: Vec<f64> = train.iter().filter(|r| r.true_label == c).map(|r| r.score).collect();
        writeln!(out, "scores.mean_class_{c} = {}", fmt_sig6(stats::mean(&sub))).expect("write");
    }
}

/// Per-class top/bottom ranking plus the score histogram SVG.
fn write_score_artifacts(run_dir: &Path, records: &[MemorizationRecord]) -> Result<()> {
    let train: Vec<&MemorizationRecord> = records.iter().filter(|r| r.split == Split::Train).collect();
    if train.is_empty() {
        return Ok(());
    }
    let scores: Vec<f64> = train.iter().map(|r| r.score).collect();
    let hist = score_histogram(&scores, 40)?;
    std::fs::write(
        run_dir.join("scores_hist.svg"),
        histogram_svg(&hist, "memorization scores", "score")?,
    )?;

    let mut ranked = String::from("class,kind,rank,example_id,score\n");
    let mut classes: Vec<usize> = train.iter().map(|r| r.true_label).collect();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        let mut members: Vec<&&MemorizationRecord> =
            train.iter().filter(|r| r.true_label == c).collect();
        members.sort_by(|a, b| {
            a.score
                .partial_cmp(&b.score)
                .unwrap()
                .then(a.example_id.cmp(&b.example_id))
        });
        let k = members.len().min(5);
        for (rank, r) in members.iter().take(k).enumerate() {
            writeln!(ranked, "{c},bottom,{},{},{}", rank + 1, r.example_id, r.score).expect("write");
        }
        for (rank, r) in members.iter().rev().take(k).enumerate() {
            writeln!(ranked, "{c},top,{},{},{}", rank + 1, r.example_id, r.score).expect("write");
        }
    }
    std::fs::write(run_dir.join("ranked_examples.csv"), ranked)?;
    Ok(())
}

fn summarize_dynamics(out: &mut String, trace: &crate::experiments::TrainingTrace) {
    let mut groups: BTreeMap<(String, String), Vec<(usize, f64)>> = BTreeMap::new();
    for row in &trace.rows {
        groups
            .entry((row.subset.clone(), row.split.clone()))
            .or_default()
            .push((row.epoch, row.accuracy));
    }
    for ((subset, split), mut points) in groups {
        points.sort_by_key(|p| p.0);
        let last = points.last().expect("non-empty");
        let peak = points
            .iter()
            .copied()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
            .expect("non-empty");
        writeln!(
            out,
            "dynamics.{subset}.{split}.final_accuracy = {}",
            fmt_sig6(last.1)
        )
        .expect("write");
        writeln!(
            out,
            "dynamics.{subset}.{split}.peak_accuracy = {} @epoch {}",
            fmt_sig6(peak.1),
            peak.0
        )
        .expect("write");
    }
}

fn write_dynamics_svg(run_dir: &Path, trace: &crate::experiments::TrainingTrace) -> Result<()> {
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for row in &trace.rows {
        groups
            .entry(format!("{}/{}", row.subset, row.split))
            .or_default()
            .push((row.epoch as f64, row.accuracy));
    }
    let series: Vec<LineSeries> = groups
        .into_iter()
        .map(|(name, mut points)| {
            points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            LineSeries { name, points }
        })
        .collect();
    std::fs::write(
        run_dir.join("dynamics_accuracy.svg"),
        lines_svg(&series, "accuracy dynamics", "epoch", "accuracy")?,
    )?;
    Ok(())
}

fn summarize_gradstats(out: &mut String, rows: &[crate::gradstats::GradientStats]) {
    let mut tags: Vec<&str> = rows.iter().map(|r| r.subset_tag.as_str()).collect();
    tags.sort_unstable();
    tags.dedup();
    for tag in tags {
        let cos: Vec<f64> = rows
            .iter()
            .filter(|r| r.subset_tag == tag)
            .filter_map(|r| r.cosine_similarity)
            .collect();
        if !cos.is_empty() {
            writeln!(out, "gradstats.{tag}.mean_cosine = {}", fmt_sig6(stats::mean(&cos)))
                .expect("write");
        }
        let contrib: Vec<f64> = rows
            .iter()
            .filter(|r| r.subset_tag == tag)
            .filter_map(|r| r.mean_contribution)
            .collect();
        if !contrib.is_empty() {
            writeln!(
                out,
                "gradstats.{tag}.mean_contribution = {}",
                fmt_sig6(stats::mean(&contrib))
            )
            .expect("write");
        }
    }
}

fn write_gradstats_svgs(run_dir: &Path, rows: &[crate::gradstats::GradientStats]) -> Result<()> {
    for (field, file, title) in [
        ("cosine", "gradstats_cosine.svg", "pairwise gradient cosine similarity"),
        ("contribution", "gradstats_contribution.svg", "gradient contribution"),
    ] {
        let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for r in rows {
            let v = match field {
                "cosine" => r.cosine_similarity,
                _ => r.mean_contribution,
            };
            if let Some(v) = v {
                groups
                    .entry(r.subset_tag.clone())
                    .or_default()
                    .push((r.step as f64, v));
            }
        }
        if groups.is_empty() {
            continue;
        }
        let series: Vec<LineSeries> = groups
            .into_iter()
            .map(|(name, mut points)| {
                points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                LineSeries { name, points }
            })
            .collect();
        std::fs::write(run_dir.join(file), lines_svg(&series, title, "step", field)?)?;
    }
    Ok(())
}

fn summarize_subnet(out: &mut String, rows: &[crate::experiments::SubnetTraceRow]) {
    if let Some(last) = rows.last() {
        writeln!(out, "subnet.final_unmuted_accuracy = {}", fmt_sig6(last.unmuted_accuracy))
            .expect("write");
        writeln!(out, "subnet.final_muted_accuracy = {}", fmt_sig6(last.muted_accuracy))
            .expect("write");
    }
    if let Some(k) = crate::experiments::subnet_plateau_epoch(rows, 0.01) {
        writeln!(out, "subnet.plateau_epoch = {k}").expect("write");
    }
}

fn write_subnet_svg(run_dir: &Path, rows: &[crate::experiments::SubnetTraceRow]) -> Result<()> {
    if rows.is_empty() {
        return Ok(());
    }
    let series = vec![
        LineSeries {
            name: "unmuted".into(),
            points: rows.iter().map(|r| (r.epoch as f64, r.unmuted_accuracy)).collect(),
        },
        LineSeries {
            name: "muted".into(),
            points: rows.iter().map(|r| (r.epoch as f64, r.muted_accuracy)).collect(),
        },
    ];
    std::fs::write(
        run_dir.join("subnet_trace.svg"),
        lines_svg(&series, "sub-network train accuracy", "epoch", "accuracy")?,
    )?;
    Ok(())
}
