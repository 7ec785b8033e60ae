//! Per-example gradient coherence and contribution statistics.
//!
//! Coherence of a group is the average pairwise cosine similarity of its members'
//! per-example gradients; contribution of an example is the scalar projection of
//! its gradient onto the mini-batch mean gradient (taken before the learning rate
//! is applied).
//!
//! For dense-only architectures everything is computed from a layer-factorized
//! Gram matrix: with per-layer activations x and deltas d, the flat-gradient dot
//! of examples a and b is sum over dense layers of (d_a . d_b) * (1 + x_a . x_b),
//! since the weight-gradient part is an outer product and the bias part is the
//! delta itself. This is an exact algebraic identity, not an approximation, and is
//! equivalence-tested against materialized flat vectors. Networks with conv layers
//! fall back to the materialized route.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{
    per_example_backward, per_example_dlogits, Cache, GradientVector, LayerSpec, Network,
    PerExampleIntermediates,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientStats {
    pub step: usize,
    pub epoch: usize,
    pub subset_tag: String,
    /// Absent when the group has fewer than two usable (non-zero-norm) members.
    pub cosine_similarity: Option<f64>,
    /// Absent when the batch-mean gradient has zero norm.
    pub mean_contribution: Option<f64>,
    pub mean_grad_norm: f64,
    pub n_examples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineResult {
    pub value: Option<f64>,
    /// Zero-norm vectors excluded from the average.
    pub excluded_zero_norm: usize,
}

/// Mean pairwise cosine over all unordered pairs of the given vectors.
pub fn cosine_similarity(vectors: &[GradientVector]) -> CosineResult {
    let flats: Vec<&[f64]> = vectors.iter().map(|v| v.flat.as_slice()).collect();
    let n = flats.len();
    let mut gram = vec![0.0f64; n * n];
    for a in 0..n {
        for b in a..n {
            let d = dot_f64_slices(flats[a], flats[b]);
            gram[a * n + b] = d;
            gram[b * n + a] = d;
        }
    }
    cosine_from_gram(&gram, n, &(0..n).collect::<Vec<_>>())
}

/// Scalar projection of `v` onto `g`: (v . g) / ||g||.
pub fn contribution(v: &[f64], g: &[f64]) -> Option<f64> {
    let g_norm = dot_f64_slices(g, g).sqrt();
    if g_norm == 0.0 {
        return None;
    }
    Some(dot_f64_slices(v, g) / g_norm)
}

/// Per-tag coherence/contribution rows for one mini-batch, plus a "full" row.
/// The reference gradient g is the mean per-example gradient of the whole batch.
pub fn subset_stats<S: Scalar>(
    net: &Network<S>,
    batch: &Tensor<S>,
    labels: &[usize],
    tags: &[Option<&str>],
    step: usize,
    epoch: usize,
) -> Result<Vec<GradientStats>> {
    let n = batch.dim0();
    if tags.len() != n || labels.len() != n {
        return Err(Error::input("tags and labels must match the batch size"));
    }
    if n == 0 {
        return Err(Error::input("empty batch"));
    }
    let (logits, cache) = crate::nn::forward(net, batch, None)?;
    let pe = per_example_dlogits(&logits, labels)?;
    let inter = per_example_backward(net, &cache, &pe)?;

    let all_dense = net
        .config()
        .layers
        .iter()
        .all(|l| !matches!(l, LayerSpec::Conv2d { .. }));
    let gram = if all_dense {
        factorized_gram(net, &cache, &inter, n)
    } else {
        materialized_gram(net, &cache, &inter, n)?
    };

    Ok(stats_from_gram(&gram, n, tags, step, epoch))
}

fn stats_from_gram(
    gram: &[f64],
    n: usize,
    tags: &[Option<&str>],
    step: usize,
    epoch: usize,
) -> Vec<GradientStats> {
    let norms: Vec<f64> = (0..n).map(|i| gram[i * n + i].max(0.0).sqrt()).collect();
    // v_i . g = mean_j gram[i][j]; ||g||^2 = mean_i (v_i . g).
    let row_means: Vec<f64> = (0..n)
        .map(|i| gram[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    let g_norm_sq: f64 = row_means.iter().sum::<f64>() / n as f64;
    let g_norm = g_norm_sq.max(0.0).sqrt();

    let mut groups: Vec<(String, Vec<usize>)> = vec![("full".to_string(), (0..n).collect())];
    let mut tag_names: Vec<&str> = tags.iter().flatten().copied().collect();
    tag_names.sort_unstable();
    tag_names.dedup();
    for name in tag_names {
        let members: Vec<usize> = (0..n).filter(|&i| tags[i] == Some(name)).collect();
        groups.push((name.to_string(), members));
    }

    let mut out = Vec::with_capacity(groups.len());
    for (tag, members) in groups {
        if members.is_empty() {
            continue;
        }
        let cos = cosine_from_gram(gram, n, &members);
        let mean_contribution = if g_norm > 0.0 {
            Some(members.iter().map(|&i| row_means[i] / g_norm).sum::<f64>() / members.len() as f64)
        } else {
            None
        };
        let mean_grad_norm = members.iter().map(|&i| norms[i]).sum::<f64>() / members.len() as f64;
        out.push(GradientStats {
            step,
            epoch,
            subset_tag: tag,
            cosine_similarity: cos.value,
            mean_contribution,
            mean_grad_norm,
            n_examples: members.len(),
        });
    }
    out
}

fn cosine_from_gram(gram: &[f64], n: usize, members: &[usize]) -> CosineResult {
    let usable: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&i| gram[i * n + i] > 0.0)
        .collect();
    let excluded = members.len() - usable.len();
    if usable.len() < 2 {
        return CosineResult {
            value: None,
            excluded_zero_norm: excluded,
        };
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (ai, &a) in usable.iter().enumerate() {
        for &b in &usable[ai + 1..] {
            // sqrt of the squared-norm product keeps proportional vectors at
            // exactly 1 whenever the products are exact in fp.
            let cos = gram[a * n + b] / (gram[a * n + a] * gram[b * n + b]).sqrt();
            sum += cos.clamp(-1.0, 1.0);
            pairs += 1;
        }
    }
    CosineResult {
        value: Some(sum / pairs as f64),
        excluded_zero_norm: excluded,
    }
}

/// Exact Gram from per-layer activation and delta dot products (dense-only nets).
fn factorized_gram<S: Scalar>(
    net: &Network<S>,
    cache: &Cache<S>,
    inter: &PerExampleIntermediates<S>,
    n: usize,
) -> Vec<f64> {
    let mut gram = vec![0.0f64; n * n];
    for (i, layer) in net.config().layers.iter().enumerate() {
        if !matches!(layer, LayerSpec::Dense { .. }) {
            continue;
        }
        let x = cache.layer_input(i);
        let d = inter.deltas[i].as_ref().expect("dense delta");
        gram.par_chunks_mut(n).enumerate().for_each(|(a, row)| {
            let xa = x.row(a);
            let da = d.row(a);
            for (b, slot) in row.iter_mut().enumerate().skip(a) {
                let dd = dot_f64(da, d.row(b));
                let xx = dot_f64(xa, x.row(b));
                *slot += dd * (1.0 + xx);
            }
        });
    }
    mirror_upper(&mut gram, n);
    gram
}

fn materialized_gram<S: Scalar>(
    net: &Network<S>,
    cache: &Cache<S>,
    inter: &PerExampleIntermediates<S>,
    n: usize,
) -> Result<Vec<f64>> {
    let ids: Vec<u64> = (0..n as u64).collect();
    let vectors = crate::nn::assemble_per_example(net, cache, inter, &ids)?;
    let mut gram = vec![0.0f64; n * n];
    gram.par_chunks_mut(n).enumerate().for_each(|(a, row)| {
        for (b, slot) in row.iter_mut().enumerate().skip(a) {
            *slot = dot_f64_slices(&vectors[a].flat, &vectors[b].flat);
        }
    });
    mirror_upper(&mut gram, n);
    Ok(gram)
}

fn mirror_upper(gram: &mut [f64], n: usize) {
    for a in 0..n {
        for b in a + 1..n {
            gram[b * n + a] = gram[a * n + b];
        }
    }
}

fn dot_f64<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0f64, 0.0, 0.0, 0.0);
    for k in 0..chunks {
        let i = k * 4;
        s0 += a[i].to_f64() * b[i].to_f64();
        s1 += a[i + 1].to_f64() * b[i + 1].to_f64();
        s2 += a[i + 2].to_f64() * b[i + 2].to_f64();
        s3 += a[i + 3].to_f64() * b[i + 3].to_f64();
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i].to_f64() * b[i].to_f64();
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

fn dot_f64_slices(a: &[f64], b: &[f64]) -> f64 {
    dot_f64(a, b)
}
