use super::features::PreparedInstance;
use super::metrics::{report, EvalReport};
use super::{RankerError, RankingModel, Result};
use crate::corpus::Corpus;
use crate::nn::{grad_check, Adam, GradBuffer, GradCheckReport, Gradients, Optimizer, Sgd, Tape};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Probability of replacing a training instance's user embedding with the
    /// OOV row, which also trains the row used for unseen users.
    pub user_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            user_dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean training loss before the first step.
    pub initial_loss: f64,
    /// Mean training loss over each epoch's minibatches.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
    /// `ε` after every optimizer step.
    pub epsilon_trace: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_loss.last().copied().unwrap_or(self.initial_loss)
    }
}

fn instance_gradients(
    model: &RankingModel,
    corpus: &Corpus,
    p: &PreparedInstance,
    drop_user: bool,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new(&model.store);
    let loss = model.loss_on_tape(&mut tape, corpus, &p.input, p.label, drop_user)?;
    let value = tape.value(loss)[0];
    Ok((value, tape.backward(loss)?))
}

/// Mean loss and its gradient over `batch`.
///
/// Per-instance gradients run in parallel; they are summed sequentially in
/// batch order so the result does not depend on the thread count.
pub fn batch_gradients(model: &RankingModel, corpus: &Corpus, batch: &[PreparedInstance]) -> Result<(f64, GradBuffer)> {
    let keep = vec![false; batch.len()];
    masked_batch_gradients(model, corpus, batch, &keep)
}

fn masked_batch_gradients(
    model: &RankingModel,
    corpus: &Corpus,
    batch: &[PreparedInstance],
    drop_user: &[bool],
) -> Result<(f64, GradBuffer)> {
    let parts = batch
        .par_iter()
        .zip(drop_user.par_iter())
        .map(|(p, &d)| instance_gradients(model, corpus, p, d))
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut buf = GradBuffer::zeros(&model.store);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        buf.accumulate(g, scale);
    }
    Ok((loss * scale, buf))
}

/// Same as [`batch_gradients`] but on one thread, instance by instance.
pub fn batch_gradients_sequential(
    model: &RankingModel,
    corpus: &Corpus,
    batch: &[PreparedInstance],
) -> Result<(f64, GradBuffer)> {
    let scale = 1.0 / batch.len() as f64;
    let mut buf = GradBuffer::zeros(&model.store);
    let mut loss = 0.0;
    for p in batch {
        let (l, g) = instance_gradients(model, corpus, p, false)?;
        loss += l;
        buf.accumulate(&g, scale);
    }
    Ok((loss * scale, buf))
}

pub fn batch_loss(model: &RankingModel, corpus: &Corpus, batch: &[PreparedInstance]) -> Result<f64> {
    let losses = batch
        .par_iter()
        .map(|p| model.loss(corpus, &p.input, p.label))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// Central-difference check of the mean batch loss gradient at the model's
/// current parameters.
pub fn check_gradients(
    model: &RankingModel,
    corpus: &Corpus,
    batch: &[PreparedInstance],
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(RankerError::EmptyTrainingSet);
    }
    let (_, analytic) = batch_gradients_sequential(model, corpus, batch)?;
    let loss = |store: &crate::nn::ParamStore| -> crate::nn::Result<f64> {
        let probe = model.with_store(store.clone());
        let mut total = 0.0;
        for p in batch {
            let mut tape = Tape::new(&probe.store);
            let l = probe
                .loss_on_tape(&mut tape, corpus, &p.input, p.label, false)
                .map_err(|e| match e {
                    RankerError::Nn(n) => n,
                    other => crate::nn::NnError::NonFinite(other.to_string()),
                })?;
            total += tape.value(l)[0];
        }
        Ok(total / batch.len() as f64)
    };
    Ok(grad_check(&model.store, &analytic, loss, tolerance, seed)?)
}

/// Minibatch training with cross-entropy loss; `ε` is projected after every step.
pub fn train(
    model: &mut RankingModel,
    corpus: &Corpus,
    data: &[PreparedInstance],
    config: &TrainConfig,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(RankerError::EmptyTrainingSet);
    }
    if config.batch_size == 0 {
        return Err(RankerError::InvalidConfig("batch_size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.user_dropout) {
        return Err(RankerError::InvalidConfig("user_dropout must lie in [0, 1]".into()));
    }
    for p in data {
        if let Some(u) = p.input.user {
            model.mark_seen(u);
        }
    }
    let mut optimizer: Box<dyn Optimizer> = match config.optimizer {
        OptimizerKind::Adam => Box::new(Adam::new(config.lr)),
        OptimizerKind::Sgd => Box::new(Sgd { lr: config.lr }),
    };
    let initial_loss = batch_loss(model, corpus, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport {
        initial_loss,
        epoch_loss: Vec::with_capacity(config.epochs),
        steps: 0,
        epsilon_trace: Vec::new(),
    };
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut drop = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            drop.clear();
            drop.extend(chunk.iter().map(|_| rng.random_bool(config.user_dropout)));
            let (loss, grads) = masked_batch_gradients(model, corpus, &batch, &drop)?;
            if !loss.is_finite() {
                return Err(RankerError::NonFiniteLoss { epoch, batch: b, loss });
            }
            optimizer.step(&mut model.store, &grads)?;
            let eps = model.epsilon();
            if eps > 0.0 {
                return Err(RankerError::ProjectionViolated(eps));
            }
            report.epsilon_trace.push(eps);
            report.steps += 1;
            total += loss;
            batches += 1;
        }
        report.epoch_loss.push(total / batches as f64);
    }
    Ok(report)
}

/// Click probabilities for each prepared instance, in order.
pub fn predict(model: &RankingModel, corpus: &Corpus, data: &[PreparedInstance]) -> Result<Vec<f64>> {
    data.par_iter().map(|p| model.score(corpus, &p.input)).collect()
}

pub fn evaluate(
    model: &RankingModel,
    corpus: &Corpus,
    data: &[PreparedInstance],
    threshold: f64,
) -> Result<EvalReport> {
    let scores = predict(model, corpus, data)?;
    let labels: Vec<u8> = data.iter().map(|p| p.label).collect();
    report(&scores, &labels, threshold)
}
