//! Progressive iteration pruning.
//!
//! A student running `S = T/r` steps is distilled from a frozen teacher
//! running `T` steps. The student is matched on three targets: the running
//! sum of its deltas against the running sum of the teacher's `r`-step
//! block means, its last delta against the teacher's last one, and its
//! hidden states against the teacher's hidden states at steps `r, 2r, …`.
//! Squared norms are summed over elements and divided by the batch size.

mod losses;

use crate::data::{stack, StereoSample};
use crate::error::{Error, Result};
use crate::model::{
    is_gru_param, is_head_param, prepare, run_trajectory, Prepared, RefineConfig, RefineModel,
    RefineWeights, RolloutOptions, TrajectoryRecord,
};
use crate::tensor::{Optimizer, Scalar, Tape, Tensor, Var};
use crate::train::{evaluate_epe, BatchSampler};

pub use losses::{block_aggregate, loss_cum, loss_final, loss_hid};

/// Successive division of the iteration count by `ratio`.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneSchedule {
    pub t0: usize,
    pub ratio: usize,
    pub stages: usize,
    pub steps_per_stage: usize,
    pub lr: f64,
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.ratio < 2 {
            return Err(Error::Schedule(format!("ratio must be at least 2, got {}", self.ratio)));
        }
        if self.stages == 0 {
            return Err(Error::Schedule("at least one stage is required".into()));
        }
        if self.steps_per_stage == 0 {
            return Err(Error::Schedule("stage budget must be positive".into()));
        }
        let div = self
            .ratio
            .checked_pow(self.stages as u32)
            .ok_or_else(|| Error::Schedule("ratio^stages overflows".into()))?;
        if self.t0 == 0 || self.t0 % div != 0 {
            return Err(Error::Schedule(format!(
                "T0 = {} is not divisible by {}^{} = {div}",
                self.t0, self.ratio, self.stages
            )));
        }
        Ok(())
    }

    /// Iteration counts after each stage, e.g. `[4, 2, 1]` for 8 / 2 / 3.
    pub fn stage_iterations(&self) -> Result<Vec<usize>> {
        self.validate()?;
        let mut t = self.t0;
        Ok((0..self.stages)
            .map(|_| {
                t /= self.ratio;
                t
            })
            .collect())
    }
}

/// Whether the last-step target is the teacher's delta or its final estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FinalTarget {
    Delta,
    Accumulated,
}

/// Which per-step output the block means and running sums are taken over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregate {
    /// Head outputs `Ψ(z_t)`.
    Deltas,
    /// Disparity estimates `d_t`.
    Estimates,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    /// Student step `s` looks up costs around the teacher's `d_{rs}`.
    pub teacher_forcing: bool,
    pub final_target: FinalTarget,
    pub aggregate: Aggregate,
}

impl LossOptions {
    /// Running sums and block means over estimates, final estimate target.
    pub fn estimates() -> Self {
        LossOptions {
            teacher_forcing: false,
            final_target: FinalTarget::Accumulated,
            aggregate: Aggregate::Estimates,
        }
    }
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            teacher_forcing: false,
            final_target: FinalTarget::Delta,
            aggregate: Aggregate::Deltas,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub unfreeze_head: bool,
    pub loss: LossOptions,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            steps: 2000,
            lr: 2e-4,
            batch: 8,
            seed: 0,
            unfreeze_head: false,
            loss: LossOptions::default(),
        }
    }
}

/// Per-step loss values; `total` is the graph's own sum of the three.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipLossReport {
    pub loss_cum: f64,
    pub loss_final: f64,
    pub loss_hid: f64,
    pub total: f64,
}

/// Loss terms still attached to the student's tape.
pub struct PipTerms<S: Scalar> {
    pub cum: Var<S>,
    pub last: Var<S>,
    pub hid: Var<S>,
    pub total: Var<S>,
}

impl<S: Scalar> PipTerms<S> {
    pub fn report(&self) -> Result<PipLossReport> {
        Ok(PipLossReport {
            loss_cum: self.cum.value().item()?.as_f64(),
            loss_final: self.last.value().item()?.as_f64(),
            loss_hid: self.hid.value().item()?.as_f64(),
            total: self.total.value().item()?.as_f64(),
        })
    }
}

/// Teacher features and recorded trajectory, computed without a graph.
pub fn teacher_rollout<S: Scalar>(
    teacher: &RefineModel<S>,
    left: &Tensor<S>,
    right: &Tensor<S>,
) -> Result<(Prepared<S>, TrajectoryRecord<Var<S>>)> {
    let tape = Tape::inference();
    let w = teacher.bind(&tape);
    let prep = prepare(&tape, &w, &teacher.config, left, right)?;
    let roll = run_trajectory(
        &tape,
        &w,
        &teacher.config,
        &prep,
        prep.initial_state(),
        teacher.config.iterations,
        true,
        &RolloutOptions::default(),
    )?;
    Ok((prep, roll.record.expect("recorded")))
}

/// Student rollout of `student_cfg.iterations` steps from the teacher's
/// prepared inputs, scored against the teacher trajectory.
pub fn pip_loss<S: Scalar>(
    tape: &Tape<S>,
    student: &RefineWeights<Var<S>>,
    student_cfg: &RefineConfig,
    prep: &Prepared<S>,
    teacher: &TrajectoryRecord<Var<S>>,
    opts: &LossOptions,
) -> Result<PipTerms<S>> {
    let t = teacher.iterations();
    let s = student_cfg.iterations;
    if s == 0 || t % s != 0 {
        return Err(Error::Schedule(format!(
            "teacher runs {t} steps, not a multiple of the student's {s}"
        )));
    }
    let r = t / s;
    let forced: Vec<Var<S>> = (0..s).map(|k| teacher.disparities[r * k].clone()).collect();
    let ropts = RolloutOptions {
        detach_lookup: true,
        forced: opts.teacher_forcing.then_some(&forced[..]),
    };
    let roll = run_trajectory(tape, student, student_cfg, prep, prep.initial_state(), s, true, &ropts)?;
    let rec = roll.record.expect("recorded");
    let (outputs, teacher_outputs) = match opts.aggregate {
        Aggregate::Deltas => (&rec.deltas[..], &teacher.deltas[..]),
        Aggregate::Estimates => (&rec.disparities[1..], &teacher.disparities[1..]),
    };
    let blocks = block_aggregate(tape, teacher_outputs, r)?;
    let cum = loss_cum(tape, outputs, &blocks)?;
    let last = match opts.final_target {
        FinalTarget::Delta => loss_final(tape, &rec.deltas[s - 1], &teacher.deltas[t - 1])?,
        FinalTarget::Accumulated => loss_final(tape, &rec.disparities[s], &teacher.disparities[t])?,
    };
    let hid = loss_hid(tape, &rec.hidden_states[1..], &teacher.hidden_states, r)?;
    let total = tape.add(&tape.add(&cum, &last)?, &hid)?;
    Ok(PipTerms { cum, last, hid, total })
}

/// Output of one stage.
#[derive(Clone, Debug)]
pub struct StageResult {
    pub model: RefineModel<f32>,
    pub reports: Vec<PipLossReport>,
}

fn trainable_for(unfreeze_head: bool) -> impl Fn(&str) -> bool {
    move |n: &str| is_gru_param(n) || (unfreeze_head && is_head_param(n))
}

/// Distils a student from a deep copy of `teacher` running `T/r` steps.
pub fn prune_stage(
    teacher: &RefineModel<f32>,
    train: &[StereoSample],
    r: usize,
    cfg: &StageConfig,
    on_step: impl FnMut(usize, &PipLossReport),
) -> Result<StageResult> {
    prune_stage_from(teacher, teacher.clone(), train, r, cfg, on_step)
}

/// Like [`prune_stage`], starting from an explicit student. The student
/// must share the teacher's encoder and hidden-state initialiser, which
/// stay frozen.
pub fn prune_stage_from(
    teacher: &RefineModel<f32>,
    mut student: RefineModel<f32>,
    train: &[StereoSample],
    r: usize,
    cfg: &StageConfig,
    mut on_step: impl FnMut(usize, &PipLossReport),
) -> Result<StageResult> {
    if cfg.steps == 0 {
        return Err(Error::Schedule("stage budget must be positive".into()));
    }
    let t = teacher.config.iterations;
    if r < 1 || t % r != 0 {
        return Err(Error::Schedule(format!(
            "teacher iterations {t} not divisible by ratio {r}"
        )));
    }
    if student.config.d_max != teacher.config.d_max || student.config.radius != teacher.config.radius {
        return Err(Error::InvalidArgument("student and teacher geometry differ".into()));
    }
    student.config.iterations = t / r;
    student.set_trainable(trainable_for(cfg.unfreeze_head));
    student.zero_grads();
    let mut sampler = BatchSampler::new(train.len(), cfg.batch, cfg.seed)?;
    let mut opt = Optimizer::adam(cfg.lr);
    let mut reports = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = sampler.next_batch();
        let batch: Vec<&StereoSample> = idx.iter().map(|&i| &train[i]).collect();
        let [left, right, _] = stack(&batch)?;
        let (prep, trec) = teacher_rollout(teacher, &left, &right)?;
        let tape = Tape::new();
        let w = student.bind(&tape);
        let terms = pip_loss(&tape, &w, &student.config, &prep, &trec, &cfg.loss)?;
        let report = terms.report()?;
        if !report.total.is_finite() {
            return Err(Error::NonFinite { index: step });
        }
        let grads = tape.backward(&terms.total)?;
        student.absorb_grads(&w, &grads)?;
        opt.step(student.params_mut())?;
        reports.push(report);
        on_step(step, &report);
    }
    student.validate()?;
    student.set_trainable(|_| true);
    Ok(StageResult {
        model: student,
        reports,
    })
}

/// Per-stage outcome of progressive pruning.
#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub iterations: usize,
    pub model: RefineModel<f32>,
    pub reports: Vec<PipLossReport>,
    /// Pruned model at its own iteration count.
    pub epe_heldout: f64,
    /// Original baseline cut to the same iteration count, no finetuning.
    pub epe_truncated: f64,
}

/// Chains stages, each student becoming the next teacher.
pub fn prune_progressive(
    baseline: &RefineModel<f32>,
    schedule: &PruneSchedule,
    train: &[StereoSample],
    heldout: &[StereoSample],
    cfg: &StageConfig,
    mut on_step: impl FnMut(usize, usize, &PipLossReport),
) -> Result<Vec<StageOutcome>> {
    schedule.validate()?;
    if baseline.config.iterations != schedule.t0 {
        return Err(Error::Schedule(format!(
            "baseline runs {} iterations, schedule starts at {}",
            baseline.config.iterations, schedule.t0
        )));
    }
    let stage_cfg = StageConfig {
        steps: schedule.steps_per_stage,
        lr: schedule.lr,
        ..cfg.clone()
    };
    let mut teacher = baseline.clone();
    let mut out = Vec::new();
    for (stage, s) in schedule.stage_iterations()?.into_iter().enumerate() {
        let cfg_k = StageConfig {
            seed: stage_cfg.seed.wrapping_add(stage as u64),
            ..stage_cfg.clone()
        };
        let res = prune_stage(&teacher, train, schedule.ratio, &cfg_k, |i, r| on_step(stage, i, r))?;
        let epe_heldout = evaluate_epe(&res.model, heldout, s)?;
        let epe_truncated = evaluate_epe(baseline, heldout, s)?;
        teacher = res.model.clone();
        out.push(StageOutcome {
            iterations: s,
            model: res.model,
            reports: res.reports,
            epe_heldout,
            epe_truncated,
        });
    }
    Ok(out)
}
