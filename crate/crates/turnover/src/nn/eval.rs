//! Read-only dataset evaluation, optionally under each example's own sub-network.

use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::mask::BatchMasks;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::forward::{forward, per_example_losses};
use super::Network;

const EVAL_CHUNK: usize = 256;

/// How masks are applied while evaluating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskMode {
    /// Plain model.
    None,
    /// Each example under its own mask; `flip` selects the muted sub-network.
    /// `scale` is the multiplier for kept units (2 = as trained, 1 = unscaled).
    Own { seed: u64, flip: bool, scale: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct PerExampleEval {
    pub example_id: u64,
    pub loss: f64,
    pub correct: bool,
    pub predicted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub n: usize,
}

/// Builds a batch tensor (plus labels and ids) from a slice of examples.
pub fn batch_from_examples<S: Scalar>(
    examples: &[&Example],
    input_shape: &[usize],
) -> (Tensor<S>, Vec<usize>, Vec<u64>) {
    let row_len: usize = input_shape.iter().product();
    let mut data = Vec::with_capacity(examples.len() * row_len);
    let mut labels = Vec::with_capacity(examples.len());
    let mut ids = Vec::with_capacity(examples.len());
    for e in examples {
        data.extend(e.pixels.iter().map(|&p| S::from_f64(p as f64)));
        labels.push(e.observed_label);
        ids.push(e.id);
    }
    let mut shape = vec![examples.len()];
    shape.extend_from_slice(input_shape);
    (
        Tensor::from_vec(&shape, data).expect("batch shape"),
        labels,
        ids,
    )
}

/// Per-example loss and prediction over a dataset. Argmax ties break toward the
/// lowest class index. Read-only over parameters.
pub fn evaluate_per_example<S: Scalar>(
    net: &Network<S>,
    dataset: &Dataset,
    mask: MaskMode,
) -> Result<Vec<PerExampleEval>> {
    if dataset.is_empty() {
        return Err(Error::input("cannot evaluate an empty dataset"));
    }
    let mut out = Vec::with_capacity(dataset.len());
    let refs: Vec<&Example> = dataset.examples.iter().collect();
    for chunk in refs.chunks(EVAL_CHUNK) {
        let (batch, labels, ids) = batch_from_examples::<S>(chunk, &dataset.input_shape);
        let masks = match mask {
            MaskMode::None => None,
            MaskMode::Own { seed, flip, scale } => {
                Some(BatchMasks::for_ids(seed, &ids, net.config(), flip, scale)?)
            }
        };
        let (logits, _) = forward(net, &batch, masks.as_ref())?;
        let losses = per_example_losses(&logits, &labels)?;
        for (i, &id) in ids.iter().enumerate() {
            let row = logits.row(i);
            let predicted = argmax_lowest(row);
            out.push(PerExampleEval {
                example_id: id,
                loss: losses[i],
                correct: predicted == labels[i],
                predicted,
            });
        }
    }
    Ok(out)
}

/// Accuracy and mean loss over a dataset.
pub fn evaluate<S: Scalar>(net: &Network<S>, dataset: &Dataset, mask: MaskMode) -> Result<EvalResult> {
    let rows = evaluate_per_example(net, dataset, mask)?;
    Ok(aggregate(&rows))
}

pub fn aggregate(rows: &[PerExampleEval]) -> EvalResult {
    let n = rows.len();
    let correct = rows.iter().filter(|r| r.correct).count();
    let loss: f64 = rows.iter().map(|r| r.loss).sum();
    EvalResult {
        accuracy: correct as f64 / n as f64,
        mean_loss: loss / n as f64,
        n,
    }
}

fn argmax_lowest<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
