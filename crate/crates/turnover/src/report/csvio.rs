//! CSV emission and ingestion for every run artifact. Floats are written with
//! Rust's shortest round-trip formatting, so files are byte-stable across runs
//! and parse back to identical values.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{Split, SubsetSpec};
use crate::error::{Error, Result};
use crate::experiments::{SubnetTraceRow, TraceRow, TrainingTrace};
use crate::gradstats::GradientStats;
use crate::influence::{LooRecord, MemorizationRecord};

pub const SCORES_HEADER: &str =
    "example_id,split,true_label,observed_label,corrupted,loss_unmuted,loss_muted,score";
pub const DYNAMICS_HEADER: &str = "epoch,subset,split,accuracy,loss";
pub const GRADSTATS_HEADER: &str =
    "step,epoch,subset,cosine_similarity,mean_contribution,mean_grad_norm,n";
pub const SUBSETS_HEADER: &str = "tag,example_id";
pub const SUBNET_HEADER: &str = "epoch,unmuted_accuracy,muted_accuracy";
pub const LOO_HEADER: &str = "example_id,repeats,mean_score,scores";
pub const CORRUPTION_HEADER: &str = "example_id,original_label,observed_label";

pub fn scores_to_csv(records: &[MemorizationRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 64);
    out.push_str(SCORES_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.example_id,
            r.split.as_str(),
            r.true_label,
            r.observed_label,
            r.corrupted,
            r.loss_unmuted,
            r.loss_muted,
            r.score
        )
        .expect("write to string");
    }
    out
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<MemorizationRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read scores csv {}: {e}", path.display())))?;
    parse_scores_csv(&text)
}

pub fn parse_scores_csv(text: &str) -> Result<Vec<MemorizationRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SCORES_HEADER => {}
        other => {
            return Err(Error::input(format!(
                "scores csv: bad header {:?}",
                other.map(|(_, h)| h)
            )))
        }
    }
    let mut out = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::input(format!(
                "scores csv line {}: expected 8 fields, got {}",
                lineno + 1,
                f.len()
            )));
        }
        let bad = |what: &str| Error::input(format!("scores csv line {}: bad {what}", lineno + 1));
        out.push(MemorizationRecord {
            example_id: f[0].parse().map_err(|_| bad("example_id"))?,
            split: match f[1] {
                "train" => Split::Train,
                "test" => Split::Test,
                _ => return Err(bad("split")),
            },
            true_label: f[2].parse().map_err(|_| bad("true_label"))?,
            observed_label: f[3].parse().map_err(|_| bad("observed_label"))?,
            corrupted: f[4].parse().map_err(|_| bad("corrupted"))?,
            loss_unmuted: f[5].parse().map_err(|_| bad("loss_unmuted"))?,
            loss_muted: f[6].parse().map_err(|_| bad("loss_muted"))?,
            score: f[7].parse().map_err(|_| bad("score"))?,
        });
    }
    Ok(out)
}

pub fn dynamics_to_csv(trace: &TrainingTrace) -> String {
    let mut out = String::new();
    out.push_str(DYNAMICS_HEADER);
    out.push('\n');
    for r in &trace.rows {
        writeln!(out, "{},{},{},{},{}", r.epoch, r.subset, r.split, r.accuracy, r.loss)
            .expect("write to string");
    }
    out
}

pub fn read_dynamics_csv(path: &Path) -> Result<TrainingTrace> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read dynamics csv {}: {e}", path.display())))?;
    parse_dynamics_csv(&text)
}

pub fn parse_dynamics_csv(text: &str) -> Result<TrainingTrace> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == DYNAMICS_HEADER => {}
        other => {
            return Err(Error::input(format!(
                "dynamics csv: bad header {:?}",
                other.map(|(_, h)| h)
            )))
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::input(format!(
                "dynamics csv line {}: expected 5 fields",
                lineno + 1
            )));
        }
        let bad = |what: &str| Error::input(format!("dynamics csv line {}: bad {what}", lineno + 1));
        rows.push(TraceRow {
            epoch: f[0].parse().map_err(|_| bad("epoch"))?,
            subset: f[1].to_string(),
            split: f[2].to_string(),
            accuracy: f[3].parse().map_err(|_| bad("accuracy"))?,
            loss: f[4].parse().map_err(|_| bad("loss"))?,
        });
    }
    Ok(TrainingTrace { rows })
}

pub fn gradstats_to_csv(stats: &[GradientStats]) -> String {
    let mut out = String::new();
    out.push_str(GRADSTATS_HEADER);
    out.push('\n');
    for s in stats {
        let cos = s.cosine_similarity.map(|v| v.to_string()).unwrap_or_default();
        let contrib = s.mean_contribution.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.step, s.epoch, s.subset_tag, cos, contrib, s.mean_grad_norm, s.n_examples
        )
        .expect("write to string");
    }
    out
}

pub fn parse_gradstats_csv(text: &str) -> Result<Vec<GradientStats>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == GRADSTATS_HEADER => {}
        other => {
            return Err(Error::input(format!(
                "gradstats csv: bad header {:?}",
                other.map(|(_, h)| h)
            )))
        }
    }
    let mut out = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::input(format!(
                "gradstats csv line {}: expected 7 fields",
                lineno + 1
            )));
        }
        let bad = |what: &str| Error::input(format!("gradstats csv line {}: bad {what}", lineno + 1));
        let opt = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                Ok(Some(s.parse().map_err(|_| bad(what))?))
            }
        };
        out.push(GradientStats {
            step: f[0].parse().map_err(|_| bad("step"))?,
            epoch: f[1].parse().map_err(|_| bad("epoch"))?,
            subset_tag: f[2].to_string(),
            cosine_similarity: opt(f[3], "cosine_similarity")?,
            mean_contribution: opt(f[4], "mean_contribution")?,
            mean_grad_norm: f[5].parse().map_err(|_| bad("mean_grad_norm"))?,
            n_examples: f[6].parse().map_err(|_| bad("n"))?,
        });
    }
    Ok(out)
}

pub fn read_gradstats_csv(path: &Path) -> Result<Vec<GradientStats>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read gradstats csv {}: {e}", path.display())))?;
    parse_gradstats_csv(&text)
}

pub fn subsets_to_csv(subsets: &[SubsetSpec]) -> String {
    let mut out = String::new();
    out.push_str(SUBSETS_HEADER);
    out.push('\n');
    for s in subsets {
        for id in &s.member_ids {
            writeln!(out, "{},{id}", s.tag).expect("write to string");
        }
    }
    out
}

pub fn read_subsets_csv(path: &Path) -> Result<Vec<SubsetSpec>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read subsets csv {}: {e}", path.display())))?;
    parse_subsets_csv(&text)
}

pub fn parse_subsets_csv(text: &str) -> Result<Vec<SubsetSpec>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SUBSETS_HEADER => {}
        other => {
            return Err(Error::input(format!(
                "subsets csv: bad header {:?}",
                other.map(|(_, h)| h)
            )))
        }
    }
    let mut groups: Vec<(String, Vec<u64>)> = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let Some((tag, id)) = line.split_once(',') else {
            return Err(Error::input(format!(
                "subsets csv line {}: expected tag,example_id",
                lineno + 1
            )));
        };
        let id: u64 = id.parse().map_err(|_| {
            Error::input(format!("subsets csv line {}: bad example_id", lineno + 1))
        })?;
        match groups.iter_mut().find(|(t, _)| t == tag) {
            Some((_, ids)) => ids.push(id),
            None => groups.push((tag.to_string(), vec![id])),
        }
    }
    let specs: Vec<SubsetSpec> = groups
        .into_iter()
        .map(|(tag, ids)| SubsetSpec::new(tag, ids))
        .collect();
    for (i, a) in specs.iter().enumerate() {
        for b in &specs[i + 1..] {
            if a.member_ids.iter().any(|id| b.contains(*id)) {
                return Err(Error::input(format!(
                    "subsets '{}' and '{}' overlap",
                    a.tag, b.tag
                )));
            }
        }
    }
    Ok(specs)
}

pub fn subnet_to_csv(rows: &[SubnetTraceRow]) -> String {
    let mut out = String::new();
    out.push_str(SUBNET_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{}", r.epoch, r.unmuted_accuracy, r.muted_accuracy)
            .expect("write to string");
    }
    out
}

pub fn parse_subnet_csv(text: &str) -> Result<Vec<SubnetTraceRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SUBNET_HEADER => {}
        other => {
            return Err(Error::input(format!(
                "subnet csv: bad header {:?}",
                other.map(|(_, h)| h)
            )))
        }
    }
    let mut out = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::input(format!(
                "subnet csv line {}: expected 3 fields",
                lineno + 1
            )));
        }
        let bad = |what: &str| Error::input(format!("subnet csv line {}: bad {what}", lineno + 1));
        out.push(SubnetTraceRow {
            epoch: f[0].parse().map_err(|_| bad("epoch"))?,
            unmuted_accuracy: f[1].parse().map_err(|_| bad("unmuted_accuracy"))?,
            muted_accuracy: f[2].parse().map_err(|_| bad("muted_accuracy"))?,
        });
    }
    Ok(out)
}

pub fn loo_to_csv(records: &[LooRecord]) -> String {
    let mut out = String::new();
    out.push_str(LOO_HEADER);
    out.push('\n');
    for r in records {
        let scores = r
            .scores
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(";");
        writeln!(out, "{},{},{},{}", r.example_id, r.repeats, r.mean_score, scores)
            .expect("write to string");
    }
    out
}

pub fn parse_loo_csv(text: &str) -> Result<Vec<LooRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == LOO_HEADER => {}
        other => {
            return Err(Error::input(format!(
                "loo csv: bad header {:?}",
                other.map(|(_, h)| h)
            )))
        }
    }
    let mut out = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::input(format!(
                "loo csv line {}: expected 4 fields",
                lineno + 1
            )));
        }
        let bad = |what: &str| Error::input(format!("loo csv line {}: bad {what}", lineno + 1));
        let scores: Vec<f64> = if f[3].is_empty() {
            Vec::new()
        } else {
            f[3].split(';')
                .map(|s| s.parse().map_err(|_| bad("scores")))
                .collect::<Result<_>>()?
        };
        out.push(LooRecord {
            example_id: f[0].parse().map_err(|_| bad("example_id"))?,
            repeats: f[1].parse().map_err(|_| bad("repeats"))?,
            mean_score: f[2].parse().map_err(|_| bad("mean_score"))?,
            scores,
        });
    }
    Ok(out)
}
