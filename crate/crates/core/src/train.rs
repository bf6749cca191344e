//! Loss, one-example-per-step Adam training for either stage, and the
//! plateau learning-rate schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{ensure, DmnError, Result};
use crate::language::Vocabulary;
use crate::model::{Dmn, DmnConfig, Stage};
use crate::numeric::{Adam, Graph, PlateauScheduler, Tensor, Var};

/// Probability clip used by [`bce_loss`].
pub const PROB_CLIP: f64 = 1e-7;

/// Mean weighted binary cross-entropy of a probability map against a binary
/// mask at the same resolution.
pub fn bce_loss(g: &mut Graph, probs: Var, target: &Tensor, pos_weight: f64) -> Result<Var> {
    g.bce_prob(probs, target, pos_weight, PROB_CLIP)
}

/// One training pair with its target at the stage's resolution.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub image: Tensor,
    pub ids: Vec<usize>,
    pub target: Tensor,
}

pub fn prepare(model: &Dmn, examples: &[Example], stage: Stage) -> Result<Vec<Prepared>> {
    let factor = model.output_factor(stage);
    examples
        .iter()
        .map(|ex| {
            Ok(Prepared {
                image: ex.image.to_tensor(),
                ids: model.tokenize(&ex.query)?,
                target: ex.mask.downsample(factor)?.to_tensor(),
            })
        })
        .collect()
}

/// Vocabulary over the training queries.
pub fn build_vocab(train: &[Example]) -> Vocabulary {
    Vocabulary::build(train.iter().map(|e| e.query.as_str()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    pub epochs: Vec<EpochLog>,
}

/// Freezes everything the given stage does not train. Low resolution trains
/// all but the decoder; high resolution trains the decoder, or everything
/// except the low-resolution head when `end_to_end` is set.
pub fn set_trainable(model: &mut Dmn, stage: Stage) {
    let end_to_end = model.config().end_to_end;
    model.store_mut().freeze_except(|name| match stage {
        Stage::LowRes => !name.starts_with("um."),
        Stage::HighRes => name.starts_with("um.") || (end_to_end && !name.starts_with("low.")),
    });
}

fn example_loss(model: &Dmn, g: &mut Graph, p: &crate::numeric::BoundParams, ex: &Prepared, stage: Stage) -> Result<Var> {
    let x = g.constant(ex.image.clone());
    let out = model.forward(g, p, x, &ex.ids, stage)?;
    g.bce_with_logits(out.logits, &ex.target, model.config().pos_weight)
}

/// Mean loss over `examples` without touching gradients.
pub fn mean_loss(model: &Dmn, examples: &[Prepared], stage: Stage) -> Result<f64> {
    ensure!(!examples.is_empty(), "loss over an empty set");
    let mut total = 0.0;
    for ex in examples {
        let mut g = Graph::new();
        let p = model.store().bind_constants(&mut g);
        let loss = example_loss(model, &mut g, &p, ex, stage)?;
        total += g.value(loss).item();
    }
    Ok(total / examples.len() as f64)
}

/// Forward, backward and one Adam update on a single pair; returns the loss.
pub fn train_step(model: &mut Dmn, adam: &mut Adam, ex: &Prepared, stage: Stage) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.store().bind(&mut g);
    let loss = example_loss(model, &mut g, &p, ex, stage)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(DmnError::NonFinite(format!("training loss {value}")));
    }
    let grads = g.backward(loss)?;
    model.store_mut().accumulate(&p, &grads)?;
    adam.step(model.store_mut())?;
    Ok(value)
}

/// Trains `model` at its configured stage for `config.epochs` epochs,
/// visiting the training pairs in a seeded random order each epoch. The
/// plateau schedule watches validation loss when `val` is nonempty, training
/// loss otherwise.
pub fn train(model: &mut Dmn, train: &[Example], val: &[Example], mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainReport> {
    ensure!(!train.is_empty(), "training set is empty");
    let stage = model.config().stage;
    let train_set = prepare(model, train, stage)?;
    let val_set = prepare(model, val, stage)?;
    set_trainable(model, stage);
    let cfg = model.config().clone();
    let mut adam = Adam::new(cfg.optimizer);
    let mut sched = PlateauScheduler::new(cfg.scheduler);
    let stream = match stage {
        Stage::LowRes => 1,
        Stage::HighRes => 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let lr = adam.lr();
        let mut total = 0.0;
        for &i in &order {
            total += train_step(model, &mut adam, &train_set[i], stage)?;
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(mean_loss(model, &val_set, stage)?)
        };
        let log = EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
        };
        on_epoch(&log);
        adam.set_lr(sched.observe(val_loss.unwrap_or(train_loss), adam.lr()));
        epochs.push(log);
    }
    Ok(TrainReport { stage, epochs })
}

/// Builds the vocabulary and a fresh model from `config`, then trains it.
pub fn train_new(config: DmnConfig, train_set: &[Example], val: &[Example], on_epoch: impl FnMut(&EpochLog)) -> Result<(Dmn, TrainReport)> {
    ensure!(!train_set.is_empty(), "training set is empty");
    let mut model = Dmn::new(config, build_vocab(train_set))?;
    let report = train(&mut model, train_set, val, on_epoch)?;
    Ok((model, report))
}
