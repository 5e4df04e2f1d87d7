//! Stereo-specific differentiable kernels: correlation volume, linear
//! cost lookup around the current disparity, and soft-argmax.

use super::Scalar;

/// Column sampled in the right view for disparity `d` at left column `x`.
#[inline]
fn shifted(x: usize, d: usize) -> usize {
    x.saturating_sub(d)
}

/// `cost[b,d,y,x] = <left[b,:,y,x], right[b,:,y,max(x-d,0)]> / sqrt(C)`.
pub fn corr_forward<S: Scalar>(dims: [usize; 4], left: &[S], right: &[S], d_max: usize) -> Vec<S> {
    let [bn, c, h, w] = dims;
    let nd = d_max + 1;
    let norm = 1.0 / (c as f64).sqrt();
    let mut out = vec![S::zero(); bn * nd * h * w];
    for b in 0..bn {
        for d in 0..nd {
            for y in 0..h {
                for x in 0..w {
                    let xr = shifted(x, d);
                    let mut acc = 0.0f64;
                    for ch in 0..c {
                        let base = ((b * c + ch) * h + y) * w;
                        acc += left[base + x].as_f64() * right[base + xr].as_f64();
                    }
                    out[((b * nd + d) * h + y) * w + x] = S::of(acc * norm);
                }
            }
        }
    }
    out
}

pub fn corr_backward<S: Scalar>(
    dims: [usize; 4],
    left: &[S],
    right: &[S],
    d_max: usize,
    grad_out: &[S],
) -> (Vec<S>, Vec<S>) {
    let [bn, c, h, w] = dims;
    let nd = d_max + 1;
    let norm = 1.0 / (c as f64).sqrt();
    let mut gl = vec![0.0f64; left.len()];
    let mut gr = vec![0.0f64; right.len()];
    for b in 0..bn {
        for d in 0..nd {
            for y in 0..h {
                for x in 0..w {
                    let g = grad_out[((b * nd + d) * h + y) * w + x].as_f64() * norm;
                    if g == 0.0 {
                        continue;
                    }
                    let xr = shifted(x, d);
                    for ch in 0..c {
                        let base = ((b * c + ch) * h + y) * w;
                        gl[base + x] += g * right[base + xr].as_f64();
                        gr[base + xr] += g * left[base + x].as_f64();
                    }
                }
            }
        }
    }
    (
        gl.into_iter().map(S::of).collect(),
        gr.into_iter().map(S::of).collect(),
    )
}

/// Interpolation knot for a sample position; positions are clamped to
/// `[0, d_max]` and the returned flag says whether clamping was active.
#[inline]
fn knot<S: Scalar>(pos: S, d_max: usize) -> (usize, S, bool) {
    let top = S::of(d_max as f64);
    let clamped = pos <= S::zero() || pos >= top;
    let p = pos.max(S::zero()).min(top);
    if d_max == 0 {
        return (0, S::zero(), true);
    }
    let lo = (p.floor().as_f64() as usize).min(d_max - 1);
    (lo, p - S::of(lo as f64), clamped)
}

/// Samples `corr` at `disp + o` for `o` in `-radius..=radius`.
pub fn lookup_forward<S: Scalar>(
    corr_dims: [usize; 4],
    corr: &[S],
    disp: &[S],
    radius: usize,
) -> Vec<S> {
    let [bn, nd, h, w] = corr_dims;
    let d_max = nd - 1;
    let taps = 2 * radius + 1;
    let mut out = vec![S::zero(); bn * taps * h * w];
    for b in 0..bn {
        for y in 0..h {
            for x in 0..w {
                let d0 = disp[(b * h + y) * w + x];
                let at = |d: usize| corr[((b * nd + d) * h + y) * w + x];
                for t in 0..taps {
                    let pos = d0 + S::of(t as f64 - radius as f64);
                    let (lo, f, _) = knot(pos, d_max);
                    let v = if d_max == 0 {
                        at(0)
                    } else {
                        (S::one() - f) * at(lo) + f * at(lo + 1)
                    };
                    out[((b * taps + t) * h + y) * w + x] = v;
                }
            }
        }
    }
    out
}

/// Returns (grad wrt corr, grad wrt disparity).
pub fn lookup_backward<S: Scalar>(
    corr_dims: [usize; 4],
    corr: &[S],
    disp: &[S],
    radius: usize,
    grad_out: &[S],
) -> (Vec<S>, Vec<S>) {
    let [bn, nd, h, w] = corr_dims;
    let d_max = nd - 1;
    let taps = 2 * radius + 1;
    let mut gc = vec![S::zero(); corr.len()];
    let mut gd = vec![S::zero(); disp.len()];
    for b in 0..bn {
        for y in 0..h {
            for x in 0..w {
                let di = (b * h + y) * w + x;
                let d0 = disp[di];
                let idx = |d: usize| ((b * nd + d) * h + y) * w + x;
                let mut acc_d = S::zero();
                for t in 0..taps {
                    let g = grad_out[((b * taps + t) * h + y) * w + x];
                    let pos = d0 + S::of(t as f64 - radius as f64);
                    if d_max == 0 {
                        gc[idx(0)] = gc[idx(0)] + g;
                        continue;
                    }
                    let (lo, f, clamped) = knot(pos, d_max);
                    gc[idx(lo)] = gc[idx(lo)] + g * (S::one() - f);
                    gc[idx(lo + 1)] = gc[idx(lo + 1)] + g * f;
                    if !clamped {
                        acc_d = acc_d + g * (corr[idx(lo + 1)] - corr[idx(lo)]);
                    }
                }
                gd[di] = acc_d;
            }
        }
    }
    (gc, gd)
}

/// Expected disparity under a softmax over the disparity axis.
pub fn soft_argmax_forward<S: Scalar>(corr_dims: [usize; 4], corr: &[S]) -> Vec<S> {
    let [bn, nd, h, w] = corr_dims;
    let mut out = vec![S::zero(); bn * h * w];
    let mut probs = vec![0.0f64; nd];
    for b in 0..bn {
        for y in 0..h {
            for x in 0..w {
                softmax_at(corr, [b, nd, h, w], y, x, &mut probs);
                let e: f64 = probs.iter().enumerate().map(|(d, p)| d as f64 * p).sum();
                out[(b * h + y) * w + x] = S::of(e);
            }
        }
    }
    out
}

pub fn soft_argmax_backward<S: Scalar>(
    corr_dims: [usize; 4],
    corr: &[S],
    out: &[S],
    grad_out: &[S],
) -> Vec<S> {
    let [bn, nd, h, w] = corr_dims;
    let mut gc = vec![S::zero(); corr.len()];
    let mut probs = vec![0.0f64; nd];
    for b in 0..bn {
        for y in 0..h {
            for x in 0..w {
                let pi = (b * h + y) * w + x;
                softmax_at(corr, [b, nd, h, w], y, x, &mut probs);
                let mean = out[pi].as_f64();
                let g = grad_out[pi].as_f64();
                for (d, p) in probs.iter().enumerate() {
                    gc[((b * nd + d) * h + y) * w + x] = S::of(g * p * (d as f64 - mean));
                }
            }
        }
    }
    gc
}

fn softmax_at<S: Scalar>(corr: &[S], [b, nd, h, w]: [usize; 4], y: usize, x: usize, probs: &mut [f64]) {
    let at = |d: usize| corr[((b * nd + d) * h + y) * w + x].as_f64();
    let m = (0..nd).map(at).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (d, p) in probs.iter_mut().enumerate() {
        *p = (at(d) - m).exp();
        z += *p;
    }
    probs.iter_mut().for_each(|p| *p /= z);
}
