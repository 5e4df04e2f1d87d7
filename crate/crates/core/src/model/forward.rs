use super::{Conv, GruWeights, InitMode, RefineConfig, RefineWeights};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Same-size convolution.
pub fn conv<S: Scalar>(tape: &Tape<S>, c: &Conv<Var<S>>, x: &Var<S>) -> Result<Var<S>> {
    let k = c.weight.shape().get(2).copied().unwrap_or(1);
    tape.conv2d(x, &c.weight, &c.bias, k / 2)
}

/// One ConvGRU update:
/// `u = σ(Wu*[h‖x])`, `r = σ(Wr*[h‖x])`, `c = tanh(Wc*[r⊙h‖x])`,
/// `h' = (1-u)⊙h + u⊙c`.
pub fn gru_step<S: Scalar>(
    tape: &Tape<S>,
    g: &GruWeights<Var<S>>,
    h: &Var<S>,
    x: &Var<S>,
) -> Result<Var<S>> {
    let hx = tape.concat(&[h, x])?;
    let u = tape.sigmoid(&conv(tape, &g.update, &hx)?);
    let r = tape.sigmoid(&conv(tape, &g.reset, &hx)?);
    let rh = tape.mul(&r, h)?;
    let rhx = tape.concat(&[&rh, x])?;
    let c = tape.tanh(&conv(tape, &g.candidate, &rhx)?);
    let keep = tape.rsub_scalar(S::one(), &u);
    let kept = tape.mul(&keep, h)?;
    let fresh = tape.mul(&u, &c)?;
    tape.add(&kept, &fresh)
}

/// Ψ: conv, relu, conv down to one delta channel.
pub fn disparity_head<S: Scalar>(tape: &Tape<S>, head: &[Conv<Var<S>>; 2], h: &Var<S>) -> Result<Var<S>> {
    let mid = tape.relu(&conv(tape, &head[0], h)?);
    conv(tape, &head[1], &mid)
}

/// Per-pair quantities that stay fixed across iterations.
#[derive(Clone, Debug)]
pub struct Prepared<S: Scalar> {
    pub features: Var<S>,
    pub corr: Var<S>,
    pub hidden0: Var<S>,
    pub disparity0: Var<S>,
}

impl<S: Scalar> Prepared<S> {
    pub fn initial_state(&self) -> RefineState<S> {
        RefineState {
            hidden: self.hidden0.clone(),
            disparity: self.disparity0.clone(),
            iteration: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RefineState<S: Scalar> {
    pub hidden: Var<S>,
    pub disparity: Var<S>,
    pub iteration: usize,
}

/// Hidden states `z_0..z_T`, raw head outputs `Ψ(z_1)..Ψ(z_T)` and the
/// clamped estimates `d_0..d_T`.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord<P> {
    pub hidden_states: Vec<P>,
    pub deltas: Vec<P>,
    pub disparities: Vec<P>,
}

impl<P> TrajectoryRecord<P> {
    pub fn iterations(&self) -> usize {
        self.deltas.len()
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&P) -> Q) -> TrajectoryRecord<Q> {
        TrajectoryRecord {
            hidden_states: self.hidden_states.iter().map(&mut f).collect(),
            deltas: self.deltas.iter().map(&mut f).collect(),
            disparities: self.disparities.iter().map(&mut f).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Rollout<S: Scalar> {
    pub state: RefineState<S>,
    pub record: Option<TrajectoryRecord<Var<S>>>,
}

#[derive(Clone, Debug)]
pub struct RolloutOptions<'a, S: Scalar> {
    /// Cut the gradient through the disparity fed to the cost lookup.
    pub detach_lookup: bool,
    /// Step `t` looks up costs around `forced[t]` instead of its own estimate.
    pub forced: Option<&'a [Var<S>]>,
}

impl<S: Scalar> Default for RolloutOptions<'_, S> {
    fn default() -> Self {
        RolloutOptions {
            detach_lookup: true,
            forced: None,
        }
    }
}

fn encode<S: Scalar>(tape: &Tape<S>, enc: &[Conv<Var<S>>; 3], img: &Var<S>) -> Result<Var<S>> {
    let a = tape.relu(&conv(tape, &enc[0], img)?);
    let b = tape.relu(&conv(tape, &enc[1], &a)?);
    conv(tape, &enc[2], &b)
}

/// Features, cost volume, initial hidden state and initial disparity.
pub fn prepare<S: Scalar>(
    tape: &Tape<S>,
    w: &RefineWeights<Var<S>>,
    cfg: &RefineConfig,
    left: &Tensor<S>,
    right: &Tensor<S>,
) -> Result<Prepared<S>> {
    if left.shape() != right.shape() {
        return Err(Error::shape(
            "prepare",
            format!("left {:?} vs right {:?}", left.shape(), right.shape()),
        ));
    }
    let [b, c, h, wd] = left.dims4()?;
    if c != 1 {
        return Err(Error::shape("prepare", format!("images must have 1 channel, got {c}")));
    }
    let fl = encode(tape, &w.encoder, &tape.constant(left.detached()))?;
    let fr = encode(tape, &w.encoder, &tape.constant(right.detached()))?;
    let corr = tape.corr(&fl, &fr, cfg.d_max)?;
    let hidden0 = tape.tanh(&conv(tape, &w.hidden_init, &fl)?);
    let disparity0 = match cfg.init {
        InitMode::SoftArgmax => tape.soft_argmax(&corr)?,
        InitMode::Zero => tape.constant(Tensor::zeros(vec![b, 1, h, wd])),
    };
    Ok(Prepared {
        features: fl,
        corr,
        hidden0,
        disparity0,
    })
}

/// One refinement iteration; returns the new state and `Ψ(z_{t+1})`.
pub fn refine_step<S: Scalar>(
    tape: &Tape<S>,
    w: &RefineWeights<Var<S>>,
    cfg: &RefineConfig,
    prep: &Prepared<S>,
    state: &RefineState<S>,
    lookup_at: Option<&Var<S>>,
    detach_lookup: bool,
) -> Result<(RefineState<S>, Var<S>)> {
    let at = lookup_at.unwrap_or(&state.disparity);
    let at = if detach_lookup { tape.detach(at) } else { at.clone() };
    let costs = tape.lookup(&prep.corr, &at, cfg.radius)?;
    let x = tape.concat(&[&costs, &prep.features])?;
    let hidden = gru_step(tape, &w.gru, &state.hidden, &x)?;
    let delta = disparity_head(tape, &w.head, &hidden)?;
    let moved = tape.add(&state.disparity, &delta)?;
    let disparity = tape.clamp_pass(&moved, S::zero(), S::of(cfg.d_max as f64));
    let next = RefineState {
        hidden,
        disparity,
        iteration: state.iteration + 1,
    };
    Ok((next, delta))
}

/// Runs `iterations` refinement steps from `init`.
#[allow(clippy::too_many_arguments)]
pub fn run_trajectory<S: Scalar>(
    tape: &Tape<S>,
    w: &RefineWeights<Var<S>>,
    cfg: &RefineConfig,
    prep: &Prepared<S>,
    init: RefineState<S>,
    iterations: usize,
    record: bool,
    opts: &RolloutOptions<'_, S>,
) -> Result<Rollout<S>> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("trajectory needs at least one iteration".into()));
    }
    if let Some(f) = opts.forced {
        if f.len() < iterations {
            return Err(Error::InvalidArgument(format!(
                "{} forced lookup disparities for {iterations} iterations",
                f.len()
            )));
        }
    }
    let mut rec = record.then(|| TrajectoryRecord {
        hidden_states: vec![init.hidden.clone()],
        deltas: Vec::with_capacity(iterations),
        disparities: vec![init.disparity.clone()],
    });
    let mut state = init;
    for t in 0..iterations {
        let at = opts.forced.map(|f| &f[t]);
        let (next, delta) = refine_step(tape, w, cfg, prep, &state, at, opts.detach_lookup)?;
        if let Some(r) = rec.as_mut() {
            r.hidden_states.push(next.hidden.clone());
            r.deltas.push(delta);
            r.disparities.push(next.disparity.clone());
        }
        state = next;
    }
    Ok(Rollout { state, record: rec })
}
