//! Batched forward pass with optional per-example turn-over masks, plus the
//! softmax cross-entropy loss.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::{apply_row, BatchMasks};
use crate::scalar::{dot, Scalar};
use crate::tensor::Tensor;

use super::{LayerSpec, Network};

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Cache<S: Scalar> {
    /// Input to each layer; slot `n_layers` holds the logits.
    pub(crate) layer_inputs: Vec<Tensor<S>>,
    /// Flat input offsets of each pooled maximum, per MaxPool2d layer.
    pub(crate) pool_argmax: Vec<Option<Vec<u32>>>,
    /// im2col patch matrices, per Conv2d layer.
    pub(crate) patches: Vec<Option<Tensor<S>>>,
    pub(crate) masks: Option<BatchMasks>,
    pub(crate) version: u64,
    pub(crate) batch: usize,
}

impl<S: Scalar> Cache<S> {
    pub fn logits(&self) -> &Tensor<S> {
        self.layer_inputs.last().expect("cache has logits")
    }

    pub fn layer_input(&self, layer: usize) -> &Tensor<S> {
        &self.layer_inputs[layer]
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn has_masks(&self) -> bool {
        self.masks.is_some()
    }
}

/// Runs the network over a batch. With masks, each row is executed under its own
/// sub-network: dropped activations are exactly zero and kept ones scaled.
pub fn forward<S: Scalar>(
    net: &Network<S>,
    batch: &Tensor<S>,
    masks: Option<&BatchMasks>,
) -> Result<(Tensor<S>, Cache<S>)> {
    let shape = batch.shape();
    if shape.len() < 2 || shape[1..] != *net.config().input_shape {
        return Err(Error::input(format!(
            "batch shape {:?} does not match input shape {:?}",
            shape,
            net.config().input_shape
        )));
    }
    let b = batch.dim0();
    if let Some(m) = masks {
        if m.len() != b {
            return Err(Error::input(format!(
                "mask count {} does not match batch size {b}",
                m.len()
            )));
        }
    }

    let n_layers = net.config().layers.len();
    let mut layer_inputs = Vec::with_capacity(n_layers + 1);
    let mut pool_argmax = vec![None; n_layers];
    let mut patches = vec![None; n_layers];
    let mut current = batch.clone();
    layer_inputs.push(current.clone());

    for (i, layer) in net.config().layers.iter().enumerate() {
        let mut out = match layer {
            LayerSpec::Dense { output, .. } => {
                let p = net.params()[i].as_ref().expect("dense params");
                dense_forward(&current, &p.weight, &p.bias, b, *output)
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
                let p = net.params()[i].as_ref().expect("conv params");
                let in_shape = &layer_inputs[i].shape()[1..];
                let (h, w) = (in_shape[1], in_shape[2]);
                let oh = (h + 2 * pad - kernel) / stride + 1;
                let ow = (w + 2 * pad - kernel) / stride + 1;
                let cols = im2col(&current, *in_ch, h, w, *kernel, *stride, *pad, oh, ow);
                let out = conv_from_cols(&cols, &p.weight, &p.bias, b, *out_ch, oh, ow);
                patches[i] = Some(cols);
                out
            }
            LayerSpec::Relu => {
                let mut t = current.clone();
                for v in t.data_mut() {
                    if *v < S::ZERO {
                        *v = S::ZERO;
                    }
                }
                t
            }
            LayerSpec::MaxPool2d { k } => {
                let (out, argmax) = maxpool_forward(&current, *k);
                pool_argmax[i] = Some(argmax);
                out
            }
            LayerSpec::Flatten => {
                let flat: usize = current.shape()[1..].iter().product();
                Tensor::from_vec(&[b, flat], current.data().to_vec())?
            }
            LayerSpec::SoftmaxHead { .. } => current.clone(),
        };

        if let Some(bm) = masks {
            apply_layer_masks(&mut out, bm, i)?;
        }

        layer_inputs.push(out.clone());
        current = out;
    }

    let logits = current;
    Ok((
        logits,
        Cache {
            layer_inputs,
            pool_argmax,
            patches,
            masks: masks.cloned(),
            version: net.version(),
            batch: b,
        },
    ))
}

fn apply_layer_masks<S: Scalar>(out: &mut Tensor<S>, bm: &BatchMasks, layer: usize) -> Result<()> {
    let Some(first) = bm.sets.first() else { return Ok(()) };
    let Some(pos) = first.masks.iter().position(|m| m.layer_index() == layer) else {
        return Ok(());
    };
    // Spatial masks zero whole feature maps; the chunk is the plane size.
    let chunk = if out.shape().len() == 4 {
        out.shape()[2] * out.shape()[3]
    } else {
        1
    };
    for b in 0..out.dim0() {
        apply_row(out.row_mut(b), &bm.sets[b].masks[pos], chunk)?;
    }
    Ok(())
}

fn dense_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, bias: &[S], b: usize, out_dim: usize) -> Tensor<S> {
    let mut out = Tensor::zeros(&[b, out_dim]);
    let x_rows: Vec<&[S]> = (0..b).map(|i| x.row(i)).collect();
    out.data_mut()
        .par_chunks_mut(out_dim)
        .zip(x_rows.par_iter())
        .for_each(|(row, xr)| {
            for (o, slot) in row.iter_mut().enumerate() {
                *slot = dot(xr, w.row(o)) + bias[o];
            }
        });
    out
}

/// im2col: one row per output position, one column per (channel, ky, kx).
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    x: &Tensor<S>,
    in_ch: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Tensor<S> {
    let b = x.dim0();
    let cols_per_row = in_ch * k * k;
    let rows_per_example = oh * ow;
    let mut cols = Tensor::zeros(&[b * rows_per_example, cols_per_row]);
    let x_data = x.data();
    let example_len = in_ch * h * w;
    cols.data_mut()
        .par_chunks_mut(rows_per_example * cols_per_row)
        .enumerate()
        .for_each(|(bi, block)| {
            let xb = &x_data[bi * example_len..(bi + 1) * example_len];
            let mut idx = 0;
            for oy in 0..oh {
                for ox in 0..ow {
                    for c in 0..in_ch {
                        let plane = &xb[c * h * w..(c + 1) * h * w];
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                block[idx] = if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                    plane[iy as usize * w + ix as usize]
                                } else {
                                    S::ZERO
                                };
                                idx += 1;
                            }
                        }
                    }
                }
            }
        });
    cols
}

fn conv_from_cols<S: Scalar>(
    cols: &Tensor<S>,
    w: &Tensor<S>,
    bias: &[S],
    b: usize,
    out_ch: usize,
    oh: usize,
    ow: usize,
) -> Tensor<S> {
    let rows_per_example = oh * ow;
    let mut out = Tensor::zeros(&[b, out_ch, oh, ow]);
    let cols_data = cols.data();
    let col_w = cols.row_len();
    out.data_mut()
        .par_chunks_mut(out_ch * rows_per_example)
        .enumerate()
        .for_each(|(bi, block)| {
            for oc in 0..out_ch {
                let wrow = w.row(oc);
                for r in 0..rows_per_example {
                    let crow = &cols_data[(bi * rows_per_example + r) * col_w..(bi * rows_per_example + r + 1) * col_w];
                    block[oc * rows_per_example + r] = dot(crow, wrow) + bias[oc];
                }
            }
        });
    out
}

fn maxpool_forward<S: Scalar>(x: &Tensor<S>, k: usize) -> (Tensor<S>, Vec<u32>) {
    let shape = x.shape();
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow) = (h / k, w / k);
    debug_assert!(x.len() < u32::MAX as usize);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let mut argmax = vec![0u32; b * c * oh * ow];
    let x_data = x.data();
    let out_example = c * oh * ow;
    out.data_mut()
        .par_chunks_mut(out_example)
        .zip(argmax.par_chunks_mut(out_example))
        .enumerate()
        .for_each(|(bi, (out_block, arg_block))| {
            for ci in 0..c {
                let plane_base = (bi * c + ci) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = S::from_f64(f64::NEG_INFINITY);
                        let mut best_idx = 0u32;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy * k + ky;
                                let ix = ox * k + kx;
                                let idx = plane_base + iy * w + ix;
                                let v = x_data[idx];
                                // Strict > keeps the first maximum: deterministic ties.
                                if v > best {
                                    best = v;
                                    best_idx = idx as u32;
                                }
                            }
                        }
                        out_block[ci * oh * ow + oy * ow + ox] = best;
                        arg_block[ci * oh * ow + oy * ow + ox] = best_idx;
                    }
                }
            }
        });
    (out, argmax)
}

/// Mean softmax cross-entropy (natural log) and its exact logit gradient.
pub fn loss_and_grad<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<(f64, Tensor<S>)> {
    let b = logits.dim0();
    let classes = logits.row_len();
    check_labels(labels, b, classes)?;
    let mut dlogits = Tensor::zeros(&[b, classes]);
    let mut total = 0.0f64;
    for i in 0..b {
        let row = logits.row(i);
        let (lse, probs) = softmax_f64(row);
        total += lse - row[labels[i]].to_f64();
        let drow = dlogits.row_mut(i);
        for j in 0..classes {
            let indicator = if j == labels[i] { 1.0 } else { 0.0 };
            drow[j] = S::from_f64((probs[j] - indicator) / b as f64);
        }
    }
    Ok((total / b as f64, dlogits))
}

/// Cross-entropy per example, in nats, computed in f64.
pub fn per_example_losses<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<Vec<f64>> {
    let b = logits.dim0();
    let classes = logits.row_len();
    check_labels(labels, b, classes)?;
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let row = logits.row(i);
        let (lse, _) = softmax_f64(row);
        out.push(lse - row[labels[i]].to_f64());
    }
    Ok(out)
}

/// Per-example loss gradients without the 1/batch reduction: the gradient of each
/// example's individual loss.
pub fn per_example_dlogits<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<Tensor<S>> {
    let b = logits.dim0();
    let classes = logits.row_len();
    check_labels(labels, b, classes)?;
    let mut dlogits = Tensor::zeros(&[b, classes]);
    for i in 0..b {
        let row = logits.row(i);
        let (_, probs) = softmax_f64(row);
        let drow = dlogits.row_mut(i);
        for j in 0..classes {
            let indicator = if j == labels[i] { 1.0 } else { 0.0 };
            drow[j] = S::from_f64(probs[j] - indicator);
        }
    }
    Ok(dlogits)
}

fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::input(format!(
            "expected {batch} labels, got {}",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::input(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// (log-sum-exp, softmax probabilities) of one logit row, in f64.
fn softmax_f64<S: Scalar>(row: &[S]) -> (f64, Vec<f64>) {
    let mut maxv = f64::NEG_INFINITY;
    for v in row {
        maxv = maxv.max(v.to_f64());
    }
    let mut sum = 0.0;
    let mut probs: Vec<f64> = row
        .iter()
        .map(|v| {
            let e = (v.to_f64() - maxv).exp();
            sum += e;
            e
        })
        .collect();
    for p in &mut probs {
        *p /= sum;
    }
    (maxv + sum.ln(), probs)
}
