//! Recurrent disparity-refinement network.
//!
//! A shared conv encoder turns each grayscale view into features, a
//! correlation volume scores horizontal matches, and a ConvGRU driven by
//! cost lookups around the current estimate emits a disparity delta per
//! iteration through a small conv head.

mod forward;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Scalar, Tape, Tensor, Var};

pub use forward::{
    conv, disparity_head, gru_step, prepare, refine_step, run_trajectory, Prepared, RefineState,
    Rollout, RolloutOptions, TrajectoryRecord,
};

/// How the first disparity estimate is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    SoftArgmax,
    Zero,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::SoftArgmax => "soft_argmax",
            InitMode::Zero => "zero",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "soft_argmax" => Ok(InitMode::SoftArgmax),
            "zero" => Ok(InitMode::Zero),
            other => Err(Error::InvalidArgument(format!(
                "unknown init mode `{other}` (expected soft_argmax or zero)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub feature_channels: usize,
    pub hidden_channels: usize,
    pub kernel: usize,
    pub d_max: usize,
    pub radius: usize,
    pub iterations: usize,
    pub init: InitMode,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            feature_channels: 16,
            hidden_channels: 32,
            kernel: 3,
            d_max: 16,
            radius: 4,
            iterations: 8,
            init: InitMode::SoftArgmax,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.feature_channels == 0 || self.hidden_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.d_max == 0 {
            return bad("d_max must be at least 1".into());
        }
        if self.radius == 0 {
            return bad("lookup radius must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        Ok(())
    }

    /// Channels of the per-step GRU input: cost samples then left features.
    pub fn input_channels(&self) -> usize {
        2 * self.radius + 1 + self.feature_channels
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("feature_channels".into(), self.feature_channels.to_string()),
            ("hidden_channels".into(), self.hidden_channels.to_string()),
            ("kernel".into(), self.kernel.to_string()),
            ("d_max".into(), self.d_max.to_string()),
            ("radius".into(), self.radius.to_string()),
            ("iterations".into(), self.iterations.to_string()),
            ("init".into(), self.init.as_str().into()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            let v = pairs
                .get(k)
                .ok_or_else(|| Error::Format(format!("missing model key `{k}`")))?;
            v.parse()
                .map_err(|_| Error::Format(format!("model key `{k}` has non-integer value `{v}`")))
        };
        let init = match pairs.get("init") {
            Some(s) => InitMode::parse(s)?,
            None => InitMode::SoftArgmax,
        };
        let cfg = RefineConfig {
            feature_channels: get("feature_channels")?,
            hidden_channels: get("hidden_channels")?,
            kernel: get("kernel")?,
            d_max: get("d_max")?,
            radius: get("radius")?,
            iterations: get("iterations")?,
            init,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Weight and bias of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<P> {
    pub weight: P,
    pub bias: P,
}

impl<P> Conv<P> {
    fn map<Q>(&self, prefix: &str, f: &mut impl FnMut(&str, &P) -> Q) -> Conv<Q> {
        Conv {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }

    fn push<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn push_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut P)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

impl<S: Scalar> Conv<Tensor<S>> {
    /// PyTorch-style uniform init with bound `gain / sqrt(fan_in)`.
    pub fn init(out_c: usize, in_c: usize, k: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let bound = gain / ((in_c * k * k) as f64).sqrt();
        Conv {
            weight: Tensor::uniform(vec![out_c, in_c, k, k], bound, rng).with_requires_grad(true),
            bias: Tensor::uniform(vec![out_c], bound, rng).with_requires_grad(true),
        }
    }
}

/// Update, reset and candidate convolutions of a ConvGRU cell.
#[derive(Clone, Debug, PartialEq)]
pub struct GruWeights<P> {
    pub update: Conv<P>,
    pub reset: Conv<P>,
    pub candidate: Conv<P>,
}

impl<P> GruWeights<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut impl FnMut(&str, &P) -> Q) -> GruWeights<Q> {
        GruWeights {
            update: self.update.map(&format!("{prefix}.update"), f),
            reset: self.reset.map(&format!("{prefix}.reset"), f),
            candidate: self.candidate.map(&format!("{prefix}.candidate"), f),
        }
    }

    pub fn entries<'a>(&'a self, prefix: &str) -> Vec<(String, &'a P)> {
        let mut out = Vec::new();
        self.update.push(&format!("{prefix}.update"), &mut out);
        self.reset.push(&format!("{prefix}.reset"), &mut out);
        self.candidate.push(&format!("{prefix}.candidate"), &mut out);
        out
    }

    pub fn entries_mut<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut P)> {
        let mut out = Vec::new();
        self.update.push_mut(&format!("{prefix}.update"), &mut out);
        self.reset.push_mut(&format!("{prefix}.reset"), &mut out);
        self.candidate.push_mut(&format!("{prefix}.candidate"), &mut out);
        out
    }
}

impl<S: Scalar> GruWeights<Tensor<S>> {
    pub fn init(hidden: usize, input: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        GruWeights {
            update: Conv::init(hidden, hidden + input, k, 1.0, rng),
            reset: Conv::init(hidden, hidden + input, k, 1.0, rng),
            candidate: Conv::init(hidden, hidden + input, k, 1.0, rng),
        }
    }
}

/// All learned tensors of the refinement model. `P` is `Tensor` for stored
/// parameters and `Var` once bound to a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineWeights<P> {
    pub encoder: [Conv<P>; 3],
    pub hidden_init: Conv<P>,
    pub gru: GruWeights<P>,
    pub head: [Conv<P>; 2],
}

impl<P> RefineWeights<P> {
    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> RefineWeights<Q> {
        let f = &mut f;
        RefineWeights {
            encoder: [
                self.encoder[0].map("encoder.0", f),
                self.encoder[1].map("encoder.1", f),
                self.encoder[2].map("encoder.2", f),
            ],
            hidden_init: self.hidden_init.map("hidden_init", f),
            gru: self.gru.map("gru", f),
            head: [self.head[0].map("head.0", f), self.head[1].map("head.1", f)],
        }
    }

    /// `(name, tensor)` pairs in a fixed order.
    pub fn entries(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        for (i, c) in self.encoder.iter().enumerate() {
            c.push(&format!("encoder.{i}"), &mut out);
        }
        self.hidden_init.push("hidden_init", &mut out);
        out.extend(self.gru.entries("gru"));
        for (i, c) in self.head.iter().enumerate() {
            c.push(&format!("head.{i}"), &mut out);
        }
        out
    }

    pub fn entries_mut(&mut self) -> Vec<(String, &mut P)> {
        let mut out = Vec::new();
        for (i, c) in self.encoder.iter_mut().enumerate() {
            c.push_mut(&format!("encoder.{i}"), &mut out);
        }
        self.hidden_init.push_mut("hidden_init", &mut out);
        out.extend(self.gru.entries_mut("gru"));
        for (i, c) in self.head.iter_mut().enumerate() {
            c.push_mut(&format!("head.{i}"), &mut out);
        }
        out
    }
}

/// A parameter belongs to the recurrent cell.
pub fn is_gru_param(name: &str) -> bool {
    name.starts_with("gru.")
}

/// A parameter belongs to the disparity head.
pub fn is_head_param(name: &str) -> bool {
    name.starts_with("head.")
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineModel<S: Scalar = f32> {
    pub config: RefineConfig,
    pub weights: RefineWeights<Tensor<S>>,
}

impl<S: Scalar> RefineModel<S> {
    /// Randomly initialised model; every parameter starts trainable.
    pub fn new(config: RefineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, k) = (config.feature_channels, config.hidden_channels, config.kernel);
        let mut head1 = Conv::init(1, h, k, 1.0, &mut rng);
        // small output layer so the first rollouts stay near the initial estimate
        for v in head1.weight.data_mut().iter_mut().chain(head1.bias.data_mut()) {
            *v = *v * S::of(0.1);
        }
        let weights = RefineWeights {
            encoder: [
                Conv::init(c, 1, k, 1.0, &mut rng),
                Conv::init(c, c, k, 1.0, &mut rng),
                Conv::init(c, c, k, 1.0, &mut rng),
            ],
            hidden_init: Conv::init(h, c, k, 1.0, &mut rng),
            gru: GruWeights::init(h, config.input_channels(), k, &mut rng),
            head: [Conv::init(h, h, k, 1.0, &mut rng), head1],
        };
        Ok(RefineModel { config, weights })
    }

    /// Registers every parameter on `tape`.
    pub fn bind(&self, tape: &Tape<S>) -> RefineWeights<Var<S>> {
        self.weights.map(|_, t| tape.leaf(t))
    }

    /// Adds tape gradients into the stored parameters.
    pub fn absorb_grads(&mut self, bound: &RefineWeights<Var<S>>, grads: &Gradients<S>) -> Result<()> {
        let vars = bound.entries();
        for ((_, p), (_, v)) in self.weights.entries_mut().into_iter().zip(vars) {
            if let Some(g) = grads.get(v) {
                p.accumulate_grad(g.data())?;
            }
        }
        Ok(())
    }

    /// Sets `requires_grad` on each parameter from a name predicate.
    pub fn set_trainable(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, p) in self.weights.entries_mut() {
            p.set_requires_grad(pred(&name));
        }
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        self.weights.entries_mut()
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in self.weights.entries_mut() {
            p.clear_grad();
        }
    }

    pub fn cast<T: Scalar>(&self) -> RefineModel<T> {
        RefineModel {
            config: self.config.clone(),
            weights: self.weights.map(|_, t| t.cast()),
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.entries().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.entries().iter().try_for_each(|(_, t)| t.validate())
    }

    /// Final disparity after `iterations` steps, computed without recording.
    pub fn predict(&self, left: &Tensor<S>, right: &Tensor<S>, iterations: usize) -> Result<Tensor<S>> {
        let tape = Tape::inference();
        let w = self.bind(&tape);
        let prep = prepare(&tape, &w, &self.config, left, right)?;
        let roll = run_trajectory(
            &tape,
            &w,
            &self.config,
            &prep,
            prep.initial_state(),
            iterations,
            false,
            &RolloutOptions::default(),
        )?;
        Ok(roll.state.disparity.to_tensor())
    }

    /// Recorded inference trajectory as plain tensors.
    pub fn trajectory(
        &self,
        left: &Tensor<S>,
        right: &Tensor<S>,
        iterations: usize,
    ) -> Result<TrajectoryRecord<Tensor<S>>> {
        let tape = Tape::inference();
        let w = self.bind(&tape);
        let prep = prepare(&tape, &w, &self.config, left, right)?;
        let roll = run_trajectory(
            &tape,
            &w,
            &self.config,
            &prep,
            prep.initial_state(),
            iterations,
            true,
            &RolloutOptions::default(),
        )?;
        let rec = roll.record.expect("recording was requested");
        Ok(rec.map(|v| v.to_tensor()))
    }
}

/// Mean absolute disparity error.
pub fn epe<S: Scalar>(pred: &Tensor<S>, gt: &Tensor<S>) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(
            "epe",
            format!("{:?} vs {:?}", pred.shape(), gt.shape()),
        ));
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
        .sum();
    Ok(s / pred.numel().max(1) as f64)
}
