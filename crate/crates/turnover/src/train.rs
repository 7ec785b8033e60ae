//! Deterministic mini-batch training loop, plain or with turn-over dropout.
//!
//! Everything stochastic is derived from explicit seeds: initialization from the
//! model config, the per-epoch shuffle from (shuffle_seed, epoch), masks from the
//! mask seed. Two runs with identical inputs produce bit-identical parameters.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::{BatchMasks, KEEP_SCALE};
use crate::nn::{
    backward, batch_from_examples, forward, init_params, loss_and_grad, sgd_step, lr_at,
    LRSchedule, ModelConfig, Network, OptimizerState,
};
use crate::rng::{derive_seed, SplitMix64};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TurnoverOptions {
    pub mask_seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub schedule: LRSchedule,
    pub momentum: f64,
    /// Some = train each example under its own unmuted sub-network.
    pub turnover: Option<TurnoverOptions>,
    /// Call the step hook every `stats_stride`-th step (0 = never).
    pub stats_stride: usize,
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        self.schedule.validate()
    }
}

/// Context handed to the sampled-step hook, before the parameter update.
pub struct StepContext<'a, S: Scalar> {
    pub step: usize,
    pub epoch: usize,
    pub batch: &'a Tensor<S>,
    pub labels: &'a [usize],
    pub ids: &'a [u64],
}

/// Trains a fresh network on the dataset. The step hook fires on sampled steps
/// with pre-update parameters; the epoch hook fires after each epoch's updates.
pub fn train<S: Scalar>(
    config: &ModelConfig,
    dataset: &Dataset,
    opts: &TrainOptions,
    mut on_sampled_step: impl FnMut(&Network<S>, &StepContext<'_, S>) -> Result<()>,
    mut on_epoch_end: impl FnMut(&Network<S>, usize) -> Result<()>,
) -> Result<Network<S>> {
    opts.validate()?;
    if dataset.is_empty() {
        return Err(Error::input("cannot train on an empty dataset"));
    }
    dataset.check_invariants()?;

    let mut net: Network<S> = init_params(config)?;
    let mut opt = OptimizerState::new(&net, opts.momentum);
    let n = dataset.len();
    let mut global_step = 0usize;

    for epoch in 0..opts.epochs {
        let lr = lr_at(&opts.schedule, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        SplitMix64::new(derive_seed(opts.shuffle_seed, epoch as u64)).shuffle(&mut order);

        for chunk in order.chunks(opts.batch_size) {
            let refs: Vec<&crate::data::Example> =
                chunk.iter().map(|&i| &dataset.examples[i]).collect();
            let (batch, labels, ids) = batch_from_examples::<S>(&refs, &dataset.input_shape);

            if opts.stats_stride > 0 && global_step % opts.stats_stride == 0 {
                let ctx = StepContext {
                    step: global_step,
                    epoch,
                    batch: &batch,
                    labels: &labels,
                    ids: &ids,
                };
                on_sampled_step(&net, &ctx)?;
            }

            let masks = match &opts.turnover {
                Some(t) => Some(BatchMasks::for_ids(
                    t.mask_seed,
                    &ids,
                    config,
                    false,
                    KEEP_SCALE,
                )?),
                None => None,
            };
            let (logits, cache) = forward(&net, &batch, masks.as_ref())?;
            let (_, dlogits) = loss_and_grad(&logits, &labels)?;
            let grads = backward(&net, &cache, &dlogits)?;
            sgd_step(&mut net, &grads, &mut opt, lr)?;
            global_step += 1;
        }
        opt.epoch = epoch + 1;
        on_epoch_end(&net, epoch)?;
    }
    Ok(net)
}

/// Trains without hooks.
pub fn train_plain<S: Scalar>(
    config: &ModelConfig,
    dataset: &Dataset,
    opts: &TrainOptions,
) -> Result<Network<S>> {
    train(config, dataset, opts, |_, _| Ok(()), |_, _| Ok(()))
}
