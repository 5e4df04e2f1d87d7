//! Supervised baseline training and held-out evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{stack, StereoSample};
use crate::error::{Error, Result};
use crate::model::{epe, prepare, run_trajectory, RefineModel, RolloutOptions};
use crate::tensor::{Optimizer, Scalar, Tape, Tensor, Var};

/// Endless deterministic minibatch indices, reshuffled every epoch.
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(len: usize, batch: usize, seed: u64) -> Result<Self> {
        if len == 0 || batch == 0 {
            return Err(Error::InvalidArgument(format!(
                "batch sampler needs samples and a positive batch (got {len} samples, batch {batch})"
            )));
        }
        let mut s = BatchSampler {
            order: (0..len).collect(),
            pos: 0,
            batch: batch.min(len),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Weight of step `t` is `gamma^(T-t)`; 0 supervises only the last.
    pub gamma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 8,
            lr: 2e-4,
            gamma: 0.8,
            seed: 0,
        }
    }
}

/// `Σ_t gamma^(T-t) · mean|d_t - gt|` over `d_1..d_T`.
pub fn sequence_l1<S: Scalar>(tape: &Tape<S>, estimates: &[Var<S>], gt: &Var<S>, gamma: f64) -> Result<Var<S>> {
    let n = estimates.len();
    let mut total: Option<Var<S>> = None;
    for (t, d) in estimates.iter().enumerate() {
        let weight = if t + 1 == n { 1.0 } else { gamma.powi((n - 1 - t) as i32) };
        if weight == 0.0 {
            continue;
        }
        let err = tape.mean(&tape.abs(&tape.sub(d, gt)?));
        let term = tape.scale(&err, S::of(weight));
        total = Some(match total {
            Some(acc) => tape.add(&acc, &term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("sequence loss over zero estimates".into()))
}

/// Trains every trainable parameter with Adam; `on_step(step, loss)` is
/// called after each update. Returns the loss series.
pub fn train_baseline(
    model: &mut RefineModel<f32>,
    train: &[StereoSample],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("training needs at least one step".into()));
    }
    let mut sampler = BatchSampler::new(train.len(), cfg.batch, cfg.seed)?;
    let mut opt = Optimizer::adam(cfg.lr);
    let iters = model.config.iterations;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = sampler.next_batch();
        let batch: Vec<&StereoSample> = idx.iter().map(|&i| &train[i]).collect();
        let [left, right, gt] = stack(&batch)?;
        let tape = Tape::new();
        let w = model.bind(&tape);
        let prep = prepare(&tape, &w, &model.config, &left, &right)?;
        let roll = run_trajectory(
            &tape,
            &w,
            &model.config,
            &prep,
            prep.initial_state(),
            iters,
            true,
            &RolloutOptions::default(),
        )?;
        let rec = roll.record.expect("recorded");
        let gt = tape.constant(gt);
        let loss = sequence_l1(&tape, &rec.disparities[1..], &gt, cfg.gamma)?;
        let value = loss.value().item()? as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite { index: step });
        }
        let grads = tape.backward(&loss)?;
        model.absorb_grads(&w, &grads)?;
        opt.step(model.params_mut())?;
        losses.push(value);
        on_step(step, value);
    }
    model.validate()?;
    Ok(losses)
}

fn batches(samples: &[StereoSample], batch: usize) -> impl Iterator<Item = Result<[Tensor<f32>; 3]>> + '_ {
    samples
        .chunks(batch.max(1))
        .map(|c| stack(&c.iter().collect::<Vec<_>>()))
}

/// Mean end-point error after `iterations` steps.
pub fn evaluate_epe(model: &RefineModel<f32>, samples: &[StereoSample], iterations: usize) -> Result<f64> {
    Ok(*epe_by_iteration(model, samples, iterations)?.last().expect("at least d_0"))
}

/// Mean end-point error of `d_0..d_T`, pixel-weighted over all samples.
pub fn epe_by_iteration(model: &RefineModel<f32>, samples: &[StereoSample], iterations: usize) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let mut sums = vec![0.0; iterations + 1];
    let mut count = 0usize;
    for b in batches(samples, 16) {
        let [left, right, gt] = b?;
        let rec = model.trajectory(&left, &right, iterations)?;
        for (s, d) in sums.iter_mut().zip(&rec.disparities) {
            *s += epe(d, &gt)? * gt.numel() as f64;
        }
        count += gt.numel();
    }
    Ok(sums.into_iter().map(|s| s / count as f64).collect())
}
