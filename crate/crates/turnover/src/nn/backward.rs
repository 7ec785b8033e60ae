//! Exact reverse-mode differentiation, batch-reduced and per-example variants.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::BatchMasks;
use crate::scalar::{axpy, dot, Scalar};
use crate::tensor::Tensor;

use super::forward::{per_example_dlogits, Cache};
use super::{LayerParams, LayerSpec, Network};

/// Per-layer gradient tensors mirroring the parameters.
#[derive(Debug, Clone)]
pub struct Gradients<S: Scalar> {
    pub layers: Vec<Option<LayerParams<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(net: &Network<S>) -> Self {
        Gradients {
            layers: net
                .params()
                .iter()
                .map(|p| p.as_ref().map(LayerParams::zeros_like))
                .collect(),
        }
    }

    /// Concatenation of all gradients in fixed layer order (weights then bias per layer).
    pub fn flatten_f64(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in self.layers.iter().flatten() {
            out.extend(layer.weight.data().iter().map(|v| v.to_f64()));
            out.extend(layer.bias.iter().map(|v| v.to_f64()));
        }
        out
    }

    pub fn scale(&mut self, c: f64) {
        let c = S::from_f64(c);
        for layer in self.layers.iter_mut().flatten() {
            for v in layer.weight.data_mut() {
                *v *= c;
            }
            for v in &mut layer.bias {
                *v *= c;
            }
        }
    }
}

/// Flattened gradient of one example's individual loss.
#[derive(Debug, Clone)]
pub struct GradientVector {
    pub example_id: u64,
    pub flat: Vec<f64>,
}

/// Per-parameter-layer delta tensors of a per-example sweep: `deltas[i]` is the
/// gradient of each example's own loss w.r.t. layer `i`'s pre-mask output.
#[derive(Debug, Clone)]
pub struct PerExampleIntermediates<S: Scalar> {
    pub deltas: Vec<Option<Tensor<S>>>,
}

/// Gradients of the mean-reduced loss w.r.t. every parameter.
pub fn backward<S: Scalar>(net: &Network<S>, cache: &Cache<S>, dlogits: &Tensor<S>) -> Result<Gradients<S>> {
    let mut grads = Gradients::zeros_like(net);
    reverse_sweep(net, cache, dlogits, Some(&mut grads), None)?;
    Ok(grads)
}

/// One [`GradientVector`] per batch row; their mean equals the batch gradient.
pub fn per_example_gradients<S: Scalar>(
    net: &Network<S>,
    batch: &Tensor<S>,
    labels: &[usize],
    ids: &[u64],
) -> Result<Vec<GradientVector>> {
    let (logits, cache) = super::forward::forward(net, batch, None)?;
    let pe = per_example_dlogits(&logits, labels)?;
    let inter = per_example_backward(net, &cache, &pe)?;
    assemble_per_example(net, &cache, &inter, ids)
}

/// Per-example sweep over an existing cache. The cache must come from an
/// unmasked forward (plain training), and `pe_dlogits` must hold the unreduced
/// per-example loss gradients.
pub fn per_example_backward<S: Scalar>(
    net: &Network<S>,
    cache: &Cache<S>,
    pe_dlogits: &Tensor<S>,
) -> Result<PerExampleIntermediates<S>> {
    if cache.has_masks() {
        return Err(Error::input(
            "per-example gradients are defined for plain (unmasked) training",
        ));
    }
    let mut deltas = vec![None; net.config().layers.len()];
    reverse_sweep(net, cache, pe_dlogits, None, Some(&mut deltas))?;
    Ok(PerExampleIntermediates { deltas })
}

pub(crate) fn assemble_per_example<S: Scalar>(
    net: &Network<S>,
    cache: &Cache<S>,
    inter: &PerExampleIntermediates<S>,
    ids: &[u64],
) -> Result<Vec<GradientVector>> {
    let b = cache.batch();
    if ids.len() != b {
        return Err(Error::input(format!("expected {b} ids, got {}", ids.len())));
    }
    let total = net.param_count();
    let mut out: Vec<GradientVector> = ids
        .iter()
        .map(|&id| GradientVector {
            example_id: id,
            flat: Vec::with_capacity(total),
        })
        .collect();
    for (i, layer) in net.config().layers.iter().enumerate() {
        match layer {
            LayerSpec::Dense { .. } => {
                let delta = inter.deltas[i].as_ref().expect("dense delta");
                let x = cache.layer_input(i);
                let out_dim = delta.row_len();
                for bi in 0..b {
                    let d = delta.row(bi);
                    let xr = x.row(bi);
                    let flat = &mut out[bi].flat;
                    for &dv in d.iter() {
                        let dvf = dv.to_f64();
                        flat.extend(xr.iter().map(|&xv| dvf * xv.to_f64()));
                    }
                    flat.extend(d.iter().take(out_dim).map(|v| v.to_f64()));
                }
            }
            LayerSpec::Conv2d { out_ch, .. } => {
                let delta = inter.deltas[i].as_ref().expect("conv delta");
                let patches = cache.patches[i].as_ref().expect("conv patches");
                let dshape = delta.shape();
                let positions = dshape[2] * dshape[3];
                let cols = patches.row_len();
                for bi in 0..b {
                    let dblock = delta.row(bi); // [OC * positions]
                    let flat = &mut out[bi].flat;
                    for oc in 0..*out_ch {
                        let drow = &dblock[oc * positions..(oc + 1) * positions];
                        let mut wrow = vec![0.0f64; cols];
                        for (r, &dv) in drow.iter().enumerate() {
                            let dvf = dv.to_f64();
                            if dvf != 0.0 {
                                let prow = patches.row(bi * positions + r);
                                for (w, &pv) in wrow.iter_mut().zip(prow) {
                                    *w += dvf * pv.to_f64();
                                }
                            }
                        }
                        flat.extend_from_slice(&wrow);
                    }
                    for oc in 0..*out_ch {
                        let drow = &dblock[oc * positions..(oc + 1) * positions];
                        flat.push(drow.iter().map(|v| v.to_f64()).sum());
                    }
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

fn transpose<S: Scalar>(src: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::ZERO; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

fn reverse_sweep<S: Scalar>(
    net: &Network<S>,
    cache: &Cache<S>,
    dlogits: &Tensor<S>,
    mut grads: Option<&mut Gradients<S>>,
    mut deltas: Option<&mut Vec<Option<Tensor<S>>>>,
) -> Result<()> {
    if cache.version != net.version() {
        return Err(Error::Internal(
            "stale cache: parameters changed since forward".into(),
        ));
    }
    if dlogits.shape() != cache.logits().shape() {
        return Err(Error::input("dlogits shape does not match logits"));
    }
    let b = cache.batch();
    let mut delta = dlogits.clone();

    for i in (0..net.config().layers.len()).rev() {
        if let Some(bm) = &cache.masks {
            mask_delta(&mut delta, bm, i)?;
        }
        match &net.config().layers[i] {
            LayerSpec::SoftmaxHead { .. } => {}
            LayerSpec::Relu => {
                let out = cache.layer_input(i + 1);
                for (d, &o) in delta.data_mut().iter_mut().zip(out.data()) {
                    if o <= S::ZERO {
                        *d = S::ZERO;
                    }
                }
            }
            LayerSpec::Flatten => {
                let pre_shape = cache.layer_input(i).shape().to_vec();
                delta = Tensor::from_vec(&pre_shape, delta.into_data())?;
            }
            LayerSpec::MaxPool2d { .. } => {
                let argmax = cache.pool_argmax[i].as_ref().expect("pool argmax");
                let in_shape = cache.layer_input(i).shape().to_vec();
                let example_len: usize = in_shape[1..].iter().product();
                let out_example: usize = delta.shape()[1..].iter().product();
                let mut dx = Tensor::zeros(&in_shape);
                let d_data = delta.data();
                dx.data_mut()
                    .par_chunks_mut(example_len)
                    .enumerate()
                    .for_each(|(bi, block)| {
                        let base = bi * example_len;
                        for j in 0..out_example {
                            let src = bi * out_example + j;
                            block[argmax[src] as usize - base] += d_data[src];
                        }
                    });
                delta = dx;
            }
            LayerSpec::Dense { input, output } => {
                let x = cache.layer_input(i);
                if let Some(g) = grads.as_deref_mut() {
                    let layer_grad = g.layers[i].as_mut().expect("dense grad slot");
                    let dt = transpose(delta.data(), b, *output); // [O, B]
                    let xt = transpose(x.data(), b, *input); // [I, B]
                    layer_grad
                        .weight
                        .data_mut()
                        .par_chunks_mut(*input)
                        .enumerate()
                        .for_each(|(o, wrow)| {
                            let drow = &dt[o * b..(o + 1) * b];
                            for (ii, w) in wrow.iter_mut().enumerate() {
                                *w = dot(drow, &xt[ii * b..(ii + 1) * b]);
                            }
                        });
                    for (o, bias) in layer_grad.bias.iter_mut().enumerate() {
                        let mut s = S::ZERO;
                        for &v in &dt[o * b..(o + 1) * b] {
                            s += v;
                        }
                        *bias = s;
                    }
                }
                if let Some(slots) = deltas.as_deref_mut() {
                    slots[i] = Some(delta.clone());
                }
                if i > 0 {
                    let p = net.params()[i].as_ref().expect("dense params");
                    let wt = transpose(p.weight.data(), *output, *input); // [I, O]
                    let mut dx = Tensor::zeros(&[b, *input]);
                    let d_data = delta.data();
                    dx.data_mut()
                        .par_chunks_mut(*input)
                        .enumerate()
                        .for_each(|(bi, row)| {
                            let drow = &d_data[bi * output..(bi + 1) * output];
                            for (ii, slot) in row.iter_mut().enumerate() {
                                *slot = dot(drow, &wt[ii * output..(ii + 1) * output]);
                            }
                        });
                    delta = dx;
                }
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
                let patches = cache.patches[i].as_ref().expect("conv patches");
                let dshape = delta.shape().to_vec();
                let (oh, ow) = (dshape[2], dshape[3]);
                let positions = oh * ow;
                let cols = patches.row_len();
                if let Some(g) = grads.as_deref_mut() {
                    let layer_grad = g.layers[i].as_mut().expect("conv grad slot");
                    let d_data = delta.data();
                    let p_data = patches.data();
                    layer_grad
                        .weight
                        .data_mut()
                        .par_chunks_mut(cols)
                        .enumerate()
                        .for_each(|(oc, wrow)| {
                            for bi in 0..b {
                                let dblock = &d_data[(bi * out_ch + oc) * positions..(bi * out_ch + oc + 1) * positions];
                                for (r, &dv) in dblock.iter().enumerate() {
                                    if dv != S::ZERO {
                                        let prow = &p_data[(bi * positions + r) * cols..(bi * positions + r + 1) * cols];
                                        axpy(dv, prow, wrow);
                                    }
                                }
                            }
                        });
                    for oc in 0..*out_ch {
                        let mut s = S::ZERO;
                        for bi in 0..b {
                            let dblock = &delta.data()[(bi * out_ch + oc) * positions..(bi * out_ch + oc + 1) * positions];
                            for &v in dblock {
                                s += v;
                            }
                        }
                        layer_grad.bias[oc] = s;
                    }
                }
                if let Some(slots) = deltas.as_deref_mut() {
                    slots[i] = Some(delta.clone());
                }
                if i > 0 {
                    let p = net.params()[i].as_ref().expect("conv params");
                    let in_shape = cache.layer_input(i).shape().to_vec();
                    let (h, w) = (in_shape[2], in_shape[3]);
                    // dP = delta x W, then col2im scatters back to dx.
                    let d_data = delta.data();
                    let w_data = p.weight.data();
                    let mut dx = Tensor::zeros(&in_shape);
                    let example_len = in_ch * h * w;
                    dx.data_mut()
                        .par_chunks_mut(example_len)
                        .enumerate()
                        .for_each(|(bi, xblock)| {
                            let mut dprow = vec![S::ZERO; cols];
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let r = oy * ow + ox;
                                    for v in dprow.iter_mut() {
                                        *v = S::ZERO;
                                    }
                                    for oc in 0..*out_ch {
                                        let dv = d_data[(bi * out_ch + oc) * positions + r];
                                        if dv != S::ZERO {
                                            axpy(dv, &w_data[oc * cols..(oc + 1) * cols], &mut dprow);
                                        }
                                    }
                                    // col2im for this output position.
                                    let mut idx = 0;
                                    for c in 0..*in_ch {
                                        for ky in 0..*kernel {
                                            let iy = (oy * stride + ky) as isize - *pad as isize;
                                            for kx in 0..*kernel {
                                                let ix = (ox * stride + kx) as isize - *pad as isize;
                                                if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                                    xblock[c * h * w + iy as usize * w + ix as usize] += dprow[idx];
                                                }
                                                idx += 1;
                                            }
                                        }
                                    }
                                }
                            }
                        });
                    delta = dx;
                }
            }
        }
    }
    Ok(())
}

/// Applies the mask stage's gradient (zero dropped, scale kept) to the deltas.
fn mask_delta<S: Scalar>(delta: &mut Tensor<S>, bm: &BatchMasks, layer: usize) -> Result<()> {
    let Some(first) = bm.sets.first() else { return Ok(()) };
    let Some(pos) = first.masks.iter().position(|m| m.layer_index() == layer) else {
        return Ok(());
    };
    let chunk = if delta.shape().len() == 4 {
        delta.shape()[2] * delta.shape()[3]
    } else {
        1
    };
    for bi in 0..delta.dim0() {
        crate::mask::apply_row(delta.row_mut(bi), &bm.sets[bi].masks[pos], chunk)?;
    }
    Ok(())
}
