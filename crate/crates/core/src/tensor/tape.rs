//! Reverse-mode gradient tape.
//!
//! A [`Tape`] records one forward pass. Values live in reference-counted
//! [`Var`] handles, so an inference tape (`Tape::inference`) records nothing
//! and intermediates are freed as soon as their handles drop. Untracked vars
//! are plain constants and may be shared between tapes.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::kernels::{conv2d_backward, conv2d_forward, ConvShape};
use super::{sigmoid, stereo, Scalar, Tensor};
use crate::error::{Error, Result};

const UNTRACKED: usize = usize::MAX;

/// Handle to a value computed on a tape.
pub struct Var<S: Scalar = f32> {
    id: usize,
    value: Rc<Tensor<S>>,
    tracked: bool,
}

impl<S: Scalar> Clone for Var<S> {
    fn clone(&self) -> Self {
        Var {
            id: self.id,
            value: Rc::clone(&self.value),
            tracked: self.tracked,
        }
    }
}

impl<S: Scalar> std::fmt::Debug for Var<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.value.shape())
            .field("tracked", &self.tracked)
            .finish()
    }
}

impl<S: Scalar> Var<S> {
    /// Untracked value usable on any tape.
    pub fn constant(value: Tensor<S>) -> Self {
        Var {
            id: UNTRACKED,
            value: Rc::new(value.detached()),
            tracked: false,
        }
    }

    pub fn value(&self) -> &Tensor<S> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.tracked
    }

    /// Owned copy of the value.
    pub fn to_tensor(&self) -> Tensor<S> {
        self.value.detached()
    }
}

struct Arg<S: Scalar> {
    id: Option<usize>,
    value: Rc<Tensor<S>>,
}

impl<S: Scalar> Arg<S> {
    fn of(v: &Var<S>) -> Self {
        Arg {
            id: v.tracked.then_some(v.id),
            value: Rc::clone(&v.value),
        }
    }

    fn data(&self) -> &[S] {
        self.value.data()
    }
}

enum Op<S: Scalar> {
    Conv2d { x: Arg<S>, w: Arg<S>, b: Arg<S>, geom: ConvShape },
    Add(Arg<S>, Arg<S>),
    Sub(Arg<S>, Arg<S>),
    Mul(Arg<S>, Arg<S>),
    Scale(Arg<S>, S),
    Shift(Arg<S>),
    Sigmoid(Arg<S>, Rc<Tensor<S>>),
    Tanh(Arg<S>, Rc<Tensor<S>>),
    Relu(Arg<S>),
    Abs(Arg<S>),
    Clamp(Arg<S>, S, S),
    ClampPass(Arg<S>),
    Concat(Vec<Arg<S>>),
    Sum(Arg<S>),
    Mean(Arg<S>),
    Mse(Arg<S>, Arg<S>),
    SqDist(Arg<S>, Arg<S>, f64),
    Corr(Arg<S>, Arg<S>, usize),
    Lookup(Arg<S>, Arg<S>, usize),
    SoftArgmax(Arg<S>, Rc<Tensor<S>>),
}

struct Node<S: Scalar> {
    out: usize,
    op: Op<S>,
}

struct TapeState<S: Scalar> {
    next_id: usize,
    nodes: Vec<Node<S>>,
    leaves: Vec<(usize, Vec<usize>)>,
    consumed: bool,
}

/// Append-only record of one forward pass.
pub struct Tape<S: Scalar = f32> {
    recording: bool,
    state: RefCell<TapeState<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients<S: Scalar = f32> {
    by_id: HashMap<usize, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, var: &Var<S>) -> Option<&Tensor<S>> {
        if !var.tracked {
            return None;
        }
        self.by_id.get(&var.id)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

fn same_or_scalar(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if b.numel() == 1 {
        Ok(a.shape().to_vec())
    } else if a.numel() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::shape(
            op,
            format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()),
        ))
    }
}

#[inline]
fn bcast<S: Copy>(v: &[S], i: usize) -> S {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

/// Sum-reduces a full-size gradient onto a possibly broadcast operand.
fn reduce_to<S: Scalar>(arg: &Arg<S>, g: Vec<S>) -> Vec<S> {
    if arg.value.numel() == g.len() {
        g
    } else {
        vec![S::of(g.iter().map(|v| v.as_f64()).sum())]
    }
}

impl<S: Scalar> Tape<S> {
    /// Recording tape for a training step.
    pub fn new() -> Self {
        Tape {
            recording: true,
            state: RefCell::new(TapeState {
                next_id: 0,
                nodes: Vec::new(),
                leaves: Vec::new(),
                consumed: false,
            }),
        }
    }

    /// Non-recording tape; every result is an untracked constant.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.state.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn fresh_id(&self) -> usize {
        let mut st = self.state.borrow_mut();
        let id = st.next_id;
        st.next_id += 1;
        id
    }

    /// Registers an input; it is tracked iff the tape records and the
    /// tensor has `requires_grad` set.
    pub fn leaf(&self, tensor: &Tensor<S>) -> Var<S> {
        let track = self.recording && tensor.requires_grad();
        let value = Rc::new(tensor.detached());
        if !track {
            return Var {
                id: UNTRACKED,
                value,
                tracked: false,
            };
        }
        let id = self.fresh_id();
        self.state
            .borrow_mut()
            .leaves
            .push((id, tensor.shape().to_vec()));
        Var {
            id,
            value,
            tracked: true,
        }
    }

    pub fn constant(&self, tensor: Tensor<S>) -> Var<S> {
        Var::constant(tensor)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self, v: &Var<S>) -> Var<S> {
        Var {
            id: UNTRACKED,
            value: Rc::clone(&v.value),
            tracked: false,
        }
    }

    fn emit(&self, value: Tensor<S>, tracked: bool, op: impl FnOnce() -> Op<S>) -> Var<S> {
        if !(self.recording && tracked) {
            return Var {
                id: UNTRACKED,
                value: Rc::new(value),
                tracked: false,
            };
        }
        let id = self.fresh_id();
        self.state.borrow_mut().nodes.push(Node { out: id, op: op() });
        Var {
            id,
            value: Rc::new(value),
            tracked: true,
        }
    }

    fn emit_saving_output(
        &self,
        value: Tensor<S>,
        tracked: bool,
        op: impl FnOnce(Rc<Tensor<S>>) -> Op<S>,
    ) -> Var<S> {
        let value = Rc::new(value);
        if !(self.recording && tracked) {
            return Var {
                id: UNTRACKED,
                value,
                tracked: false,
            };
        }
        let id = self.fresh_id();
        self.state.borrow_mut().nodes.push(Node {
            out: id,
            op: op(Rc::clone(&value)),
        });
        Var {
            id,
            value,
            tracked: true,
        }
    }

    pub fn conv2d(&self, x: &Var<S>, w: &Var<S>, b: &Var<S>, padding: usize) -> Result<Var<S>> {
        let geom = ConvShape::infer(x.shape(), w.shape(), b.shape(), padding)?;
        let out = conv2d_forward(&geom, x.value.data(), w.value.data(), b.value.data());
        let shape = vec![geom.batch, geom.out_channels, geom.out_height(), geom.out_width()];
        let value = Tensor::new(shape, out)?;
        Ok(self.emit(value, x.tracked || w.tracked || b.tracked, || Op::Conv2d {
            x: Arg::of(x),
            w: Arg::of(w),
            b: Arg::of(b),
            geom,
        }))
    }

    fn binary(
        &self,
        name: &'static str,
        a: &Var<S>,
        b: &Var<S>,
        f: impl Fn(S, S) -> S,
        op: fn(Arg<S>, Arg<S>) -> Op<S>,
    ) -> Result<Var<S>> {
        let shape = same_or_scalar(name, &a.value, &b.value)?;
        let (ad, bd) = (a.value.data(), b.value.data());
        let n = shape.iter().product();
        let data = (0..n).map(|i| f(bcast(ad, i), bcast(bd, i))).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.emit(value, a.tracked || b.tracked, || op(Arg::of(a), Arg::of(b))))
    }

    pub fn add(&self, a: &Var<S>, b: &Var<S>) -> Result<Var<S>> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, a: &Var<S>, b: &Var<S>) -> Result<Var<S>> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, a: &Var<S>, b: &Var<S>) -> Result<Var<S>> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(&self, x: &Var<S>, f: impl Fn(S) -> S, op: impl FnOnce(Arg<S>) -> Op<S>) -> Var<S> {
        let value = Tensor::from_fn(x.shape().to_vec(), |i| f(x.value.data()[i]));
        self.emit(value, x.tracked, || op(Arg::of(x)))
    }

    pub fn scale(&self, x: &Var<S>, c: S) -> Var<S> {
        self.unary(x, |v| v * c, |a| Op::Scale(a, c))
    }

    pub fn add_scalar(&self, x: &Var<S>, c: S) -> Var<S> {
        self.unary(x, |v| v + c, Op::Shift)
    }

    /// `c - x`.
    pub fn rsub_scalar(&self, c: S, x: &Var<S>) -> Var<S> {
        let neg = self.scale(x, -S::one());
        self.add_scalar(&neg, c)
    }

    pub fn relu(&self, x: &Var<S>) -> Var<S> {
        self.unary(x, |v| v.max(S::zero()), Op::Relu)
    }

    pub fn abs(&self, x: &Var<S>) -> Var<S> {
        self.unary(x, |v| v.abs(), Op::Abs)
    }

    pub fn clamp(&self, x: &Var<S>, lo: S, hi: S) -> Var<S> {
        self.unary(x, |v| v.max(lo).min(hi), |a| Op::Clamp(a, lo, hi))
    }

    /// Clamps the value but passes the gradient through unchanged, so
    /// estimates parked on a bound can still be pulled back inside.
    pub fn clamp_pass(&self, x: &Var<S>, lo: S, hi: S) -> Var<S> {
        self.unary(x, |v| v.max(lo).min(hi), Op::ClampPass)
    }

    pub fn sigmoid(&self, x: &Var<S>) -> Var<S> {
        let value = Tensor::from_fn(x.shape().to_vec(), |i| sigmoid(x.value.data()[i]));
        self.emit_saving_output(value, x.tracked, |out| Op::Sigmoid(Arg::of(x), out))
    }

    pub fn tanh(&self, x: &Var<S>) -> Var<S> {
        let value = Tensor::from_fn(x.shape().to_vec(), |i| x.value.data()[i].tanh());
        self.emit_saving_output(value, x.tracked, |out| Op::Tanh(Arg::of(x), out))
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat(&self, parts: &[&Var<S>]) -> Result<Var<S>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let [b, _, h, w] = first.value.dims4()?;
        let mut channels = 0;
        for p in parts {
            let [pb, pc, ph, pw] = p.value.dims4()?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(Error::shape(
                    "concat",
                    format!("batch/height/width {:?} differs from {:?}", p.shape(), first.shape()),
                ));
            }
            channels += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(b * channels * plane);
        for bi in 0..b {
            for p in parts {
                let pc = p.shape()[1];
                data.extend_from_slice(&p.value.data()[bi * pc * plane..][..pc * plane]);
            }
        }
        let value = Tensor::new(vec![b, channels, h, w], data)?;
        let tracked = parts.iter().any(|p| p.tracked);
        Ok(self.emit(value, tracked, || Op::Concat(parts.iter().map(|p| Arg::of(p)).collect())))
    }

    pub fn sum(&self, x: &Var<S>) -> Var<S> {
        let s: f64 = x.value.data().iter().map(|v| v.as_f64()).sum();
        self.emit(Tensor::scalar(S::of(s)), x.tracked, || Op::Sum(Arg::of(x)))
    }

    pub fn mean(&self, x: &Var<S>) -> Var<S> {
        let s: f64 = x.value.data().iter().map(|v| v.as_f64()).sum();
        let n = x.value.numel().max(1) as f64;
        self.emit(Tensor::scalar(S::of(s / n)), x.tracked, || Op::Mean(Arg::of(x)))
    }

    fn check_same(op: &'static str, a: &Var<S>, b: &Var<S>) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        Ok(())
    }

    /// Mean of squared differences.
    pub fn mse(&self, a: &Var<S>, b: &Var<S>) -> Result<Var<S>> {
        Self::check_same("mse", a, b)?;
        let s = sq_sum(a.value.data(), b.value.data());
        let n = a.value.numel().max(1) as f64;
        Ok(self.emit(Tensor::scalar(S::of(s / n)), a.tracked || b.tracked, || {
            Op::Mse(Arg::of(a), Arg::of(b))
        }))
    }

    /// Sum of squared differences divided by `divisor`.
    pub fn sq_dist(&self, a: &Var<S>, b: &Var<S>, divisor: f64) -> Result<Var<S>> {
        Self::check_same("sq_dist", a, b)?;
        if !(divisor > 0.0) {
            return Err(Error::InvalidArgument(format!("sq_dist divisor must be positive, got {divisor}")));
        }
        let s = sq_sum(a.value.data(), b.value.data());
        Ok(self.emit(Tensor::scalar(S::of(s / divisor)), a.tracked || b.tracked, || {
            Op::SqDist(Arg::of(a), Arg::of(b), divisor)
        }))
    }

    /// Correlation volume `[B, d_max+1, H, W]` of two feature maps.
    pub fn corr(&self, left: &Var<S>, right: &Var<S>, d_max: usize) -> Result<Var<S>> {
        Self::check_same("corr", left, right)?;
        let dims = left.value.dims4()?;
        if d_max >= dims[3] {
            return Err(Error::shape(
                "corr",
                format!("d_max {d_max} must be smaller than width {}", dims[3]),
            ));
        }
        let out = stereo::corr_forward(dims, left.value.data(), right.value.data(), d_max);
        let value = Tensor::new(vec![dims[0], d_max + 1, dims[2], dims[3]], out)?;
        Ok(self.emit(value, left.tracked || right.tracked, || {
            Op::Corr(Arg::of(left), Arg::of(right), d_max)
        }))
    }

    /// Linearly interpolated costs at `disp + o`, `o` in `-radius..=radius`.
    pub fn lookup(&self, corr: &Var<S>, disp: &Var<S>, radius: usize) -> Result<Var<S>> {
        let dims = corr.value.dims4()?;
        let dd = disp.value.dims4()?;
        if dd != [dims[0], 1, dims[2], dims[3]] {
            return Err(Error::shape(
                "lookup",
                format!("disparity {:?} does not match cost volume {:?}", disp.shape(), corr.shape()),
            ));
        }
        if radius == 0 {
            return Err(Error::InvalidArgument("lookup radius must be at least 1".into()));
        }
        let out = stereo::lookup_forward(dims, corr.value.data(), disp.value.data(), radius);
        let value = Tensor::new(vec![dims[0], 2 * radius + 1, dims[2], dims[3]], out)?;
        Ok(self.emit(value, corr.tracked || disp.tracked, || {
            Op::Lookup(Arg::of(corr), Arg::of(disp), radius)
        }))
    }

    /// Softmax-weighted mean disparity over the cost axis.
    pub fn soft_argmax(&self, corr: &Var<S>) -> Result<Var<S>> {
        let dims = corr.value.dims4()?;
        let out = stereo::soft_argmax_forward(dims, corr.value.data());
        let value = Tensor::new(vec![dims[0], 1, dims[2], dims[3]], out)?;
        Ok(self.emit_saving_output(value, corr.tracked, |out| Op::SoftArgmax(Arg::of(corr), out)))
    }

    /// Back-propagates from a scalar loss and consumes the tape.
    pub fn backward(&self, loss: &Var<S>) -> Result<Gradients<S>> {
        let (nodes, leaves) = {
            let mut st = self.state.borrow_mut();
            if st.consumed {
                return Err(Error::Tape(
                    "backward already ran on this tape; record a new forward pass".into(),
                ));
            }
            if loss.value.numel() != 1 {
                return Err(Error::Tape(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    loss.shape()
                )));
            }
            st.consumed = true;
            (std::mem::take(&mut st.nodes), std::mem::take(&mut st.leaves))
        };
        let mut grads: HashMap<usize, Vec<S>> = HashMap::new();
        if loss.tracked {
            grads.insert(loss.id, vec![S::one()]);
        }
        for node in nodes.into_iter().rev() {
            let Some(g) = grads.remove(&node.out) else {
                continue;
            };
            node.op.backward(&g, &mut |id, contrib| match grads.get_mut(&id) {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &c)| *a = *a + c),
                None => {
                    grads.insert(id, contrib);
                }
            })?;
        }
        let mut by_id = HashMap::new();
        for (id, shape) in leaves {
            if let Some(g) = grads.remove(&id) {
                by_id.insert(id, Tensor::new(shape, g)?);
            }
        }
        Ok(Gradients { by_id })
    }
}

fn sq_sum<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum()
}

type Push<'a, S> = dyn FnMut(usize, Vec<S>) + 'a;

impl<S: Scalar> Op<S> {
    fn backward(self, g: &[S], push: &mut Push<'_, S>) -> Result<()> {
        let mut send = |arg: &Arg<S>, make: &dyn Fn() -> Vec<S>| {
            if let Some(id) = arg.id {
                push(id, make());
            }
        };
        match self {
            Op::Conv2d { x, w, b, geom } => {
                let need = [x.id.is_some(), w.id.is_some(), b.id.is_some()];
                let gr = conv2d_backward(&geom, x.data(), w.data(), g, need);
                let mut push_opt = |arg: &Arg<S>, v: Option<Vec<S>>| {
                    if let (Some(id), Some(v)) = (arg.id, v) {
                        push(id, v);
                    }
                };
                push_opt(&x, gr.input);
                push_opt(&w, gr.weight);
                push_opt(&b, gr.bias);
            }
            Op::Add(a, b) => {
                send(&a, &|| reduce_to(&a, g.to_vec()));
                send(&b, &|| reduce_to(&b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                send(&a, &|| reduce_to(&a, g.to_vec()));
                send(&b, &|| reduce_to(&b, g.iter().map(|&v| -v).collect()));
            }
            Op::Mul(a, b) => {
                send(&a, &|| {
                    let bd = b.data();
                    reduce_to(&a, g.iter().enumerate().map(|(i, &v)| v * bcast(bd, i)).collect())
                });
                send(&b, &|| {
                    let ad = a.data();
                    reduce_to(&b, g.iter().enumerate().map(|(i, &v)| v * bcast(ad, i)).collect())
                });
            }
            Op::Scale(x, c) => send(&x, &|| g.iter().map(|&v| v * c).collect()),
            Op::Shift(x) => send(&x, &|| g.to_vec()),
            Op::Sigmoid(x, out) => send(&x, &|| {
                g.iter()
                    .zip(out.data())
                    .map(|(&gv, &s)| gv * s * (S::one() - s))
                    .collect()
            }),
            Op::Tanh(x, out) => send(&x, &|| {
                g.iter()
                    .zip(out.data())
                    .map(|(&gv, &t)| gv * (S::one() - t * t))
                    .collect()
            }),
            Op::Relu(x) => send(&x, &|| {
                g.iter()
                    .zip(x.data())
                    .map(|(&gv, &v)| if v > S::zero() { gv } else { S::zero() })
                    .collect()
            }),
            Op::Abs(x) => send(&x, &|| {
                g.iter()
                    .zip(x.data())
                    .map(|(&gv, &v)| {
                        if v > S::zero() {
                            gv
                        } else if v < S::zero() {
                            -gv
                        } else {
                            S::zero()
                        }
                    })
                    .collect()
            }),
            Op::Clamp(x, lo, hi) => send(&x, &|| {
                g.iter()
                    .zip(x.data())
                    .map(|(&gv, &v)| if v > lo && v < hi { gv } else { S::zero() })
                    .collect()
            }),
            Op::ClampPass(x) => send(&x, &|| g.to_vec()),
            Op::Concat(parts) => {
                let [b, _, h, w] = match parts[0].value.dims4() {
                    Ok(d) => d,
                    Err(e) => return Err(e),
                };
                let plane = h * w;
                let total: usize = parts.iter().map(|p| p.value.shape()[1]).sum();
                let mut offset = 0;
                for p in &parts {
                    let pc = p.value.shape()[1];
                    if let Some(id) = p.id {
                        let mut gp = Vec::with_capacity(b * pc * plane);
                        for bi in 0..b {
                            gp.extend_from_slice(&g[(bi * total + offset) * plane..][..pc * plane]);
                        }
                        push(id, gp);
                    }
                    offset += pc;
                }
            }
            Op::Sum(x) => send(&x, &|| vec![g[0]; x.value.numel()]),
            Op::Mean(x) => send(&x, &|| {
                let n = x.value.numel().max(1) as f64;
                vec![S::of(g[0].as_f64() / n); x.value.numel()]
            }),
            Op::Mse(a, b) => {
                let coef = 2.0 * g[0].as_f64() / a.value.numel().max(1) as f64;
                sq_grads(&a, &b, coef, push);
            }
            Op::SqDist(a, b, divisor) => {
                let coef = 2.0 * g[0].as_f64() / divisor;
                sq_grads(&a, &b, coef, push);
            }
            Op::Corr(l, r, d_max) => {
                let dims = l.value.dims4()?;
                let (gl, gr) = stereo::corr_backward(dims, l.data(), r.data(), d_max, g);
                if let Some(id) = l.id {
                    push(id, gl);
                }
                if let Some(id) = r.id {
                    push(id, gr);
                }
            }
            Op::Lookup(corr, disp, radius) => {
                let dims = corr.value.dims4()?;
                let (gc, gd) = stereo::lookup_backward(dims, corr.data(), disp.data(), radius, g);
                if let Some(id) = corr.id {
                    push(id, gc);
                }
                if let Some(id) = disp.id {
                    push(id, gd);
                }
            }
            Op::SoftArgmax(corr, out) => {
                let dims = corr.value.dims4()?;
                if let Some(id) = corr.id {
                    push(id, stereo::soft_argmax_backward(dims, corr.data(), out.data(), g));
                }
            }
        }
        Ok(())
    }
}

fn sq_grads<S: Scalar>(a: &Arg<S>, b: &Arg<S>, coef: f64, push: &mut Push<'_, S>) {
    let diff = || -> Vec<f64> {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| x.as_f64() - y.as_f64())
            .collect()
    };
    if let Some(id) = a.id {
        push(id, diff().into_iter().map(|d| S::of(coef * d)).collect());
    }
    if let Some(id) = b.id {
        push(id, diff().into_iter().map(|d| S::of(-coef * d)).collect());
    }
}
