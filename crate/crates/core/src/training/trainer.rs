use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{adam_step, clip_gradients, make_batches, sum_grads, OptimizerState, TrainConfig, TrainingExample};
use crate::error::{Error, Result};
use crate::model::{default_dummy_len, make_dummy_observation, CaptionModel, VideoFeatures};
use crate::numerics::Tensor;

/// One line of the training log. Epoch 0 is the untrained model.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!(
            "epoch {} train_loss {:.6} val_loss {:.6}",
            self.epoch, self.train_loss, self.val_loss
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: CaptionModel,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub log: Vec<EpochLog>,
}

/// The dummy observation used for sentence-only examples under `cfg`.
pub fn dummy_for(model: &CaptionModel, cfg: &TrainConfig) -> Result<VideoFeatures> {
    make_dummy_observation(
        model.kind(),
        model.dims().video_dim,
        default_dummy_len(model.kind(), cfg.window_length),
    )
}

fn check_examples(model: &CaptionModel, examples: &[TrainingExample]) -> Result<()> {
    let dims = model.dims();
    for ex in examples {
        if let Some(&t) = ex.sentence.tokens().iter().find(|&&t| t >= dims.vocab_size) {
            return Err(Error::IndexOutOfRange {
                op: "train_captioner",
                index: t,
                len: dims.vocab_size,
            });
        }
        if let super::ExampleVideo::Real(v) = &ex.video {
            if v.dim() != dims.video_dim {
                return Err(Error::dim("train_captioner", &[dims.video_dim], &[v.dim()]));
            }
        }
    }
    Ok(())
}

/// Per-example teacher-forced losses, in example order.
pub fn example_losses(
    model: &CaptionModel,
    examples: &[TrainingExample],
    dummy: &VideoFeatures,
) -> Result<Vec<f64>> {
    examples
        .par_iter()
        .map(|ex| model.sentence_nll(&*ex.observation(dummy)?, &ex.sentence))
        .collect()
}

/// Mean per-example loss.
pub fn mean_loss(model: &CaptionModel, examples: &[TrainingExample], dummy: &VideoFeatures) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty { op: "mean_loss" });
    }
    Ok(example_losses(model, examples, dummy)?.iter().sum::<f64>() / examples.len() as f64)
}

/// `exp` of the mean per-token loss, the terminator counted as a token.
pub fn perplexity(model: &CaptionModel, examples: &[TrainingExample], dummy: &VideoFeatures) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty { op: "perplexity" });
    }
    let total: f64 = example_losses(model, examples, dummy)?.iter().sum();
    let tokens: usize = examples.iter().map(|e| e.sentence.len() + 1).sum();
    Ok((total / tokens as f64).exp())
}

/// Minibatch Adam on mean sentence loss for `epochs` epochs, returning the
/// parameters with the lowest validation loss (the training examples stand
/// in when `val` is empty). Gradients of a batch are computed in parallel and
/// summed in batch order, so results do not depend on the worker count.
pub fn train_captioner(
    examples: &[TrainingExample],
    val: &[TrainingExample],
    init: CaptionModel,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty { op: "train_captioner" });
    }
    check_examples(&init, examples)?;
    check_examples(&init, val)?;
    let dummy = dummy_for(&init, cfg)?;
    let selection = if val.is_empty() { examples } else { val };

    let mut model = init;
    let mut opt = OptimizerState::new(model.params());
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = mean_loss(&model, selection, &dummy)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: mean_loss(&model, examples, &dummy)?,
        val_loss: initial,
    }];
    let mut best = (0, initial, model.clone());
    for epoch in 1..=epochs {
        let batches = make_batches(examples, cfg, seeds.random(), model.tokens());
        let mut seen = 0usize;
        let mut total = 0.0;
        for batch in &batches {
            let per: Vec<(f64, Vec<Tensor>)> = batch
                .members
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let ex = &examples[i];
                    model.masked_nll_with_grads(&*ex.observation(&dummy)?, &batch.targets[k], &batch.mask[k])
                })
                .collect::<Result<_>>()?;
            let n = per.len();
            total += per.iter().map(|p| p.0).sum::<f64>();
            seen += n;
            let mut grads = sum_grads(per.into_iter().map(|p| p.1), 1.0 / n as f64);
            if let Some(c) = cfg.clip() {
                clip_gradients(&mut grads, c);
            }
            adam_step(model.params_mut(), &grads, &mut opt, cfg.lr)?;
        }
        let val_loss = mean_loss(&model, selection, &dummy)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let entry = EpochLog {
            epoch,
            train_loss: total / seen.max(1) as f64,
            val_loss,
        };
        log::debug!("{}", entry.line());
        log.push(entry);
        if val_loss < best.1 {
            best = (epoch, val_loss, model.clone());
        }
    }
    Ok(TrainOutcome {
        model: best.2,
        best_epoch: best.0,
        best_val_loss: best.1,
        log,
    })
}
