//! Raw convolution kernels over NCHW slices.
//!
//! Each output element accumulates its products in `f64`, in the order
//! (input channel, kernel row, kernel column), and adds the bias last. The
//! sparse executor in `flash` reproduces exactly this order, which is what
//! lets packed and dense paths agree to the last bit.

use super::Scalar;
use crate::error::{Error, Result};

/// Geometry of one 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvShape {
    pub fn out_height(&self) -> usize {
        self.height + 2 * self.padding + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 2 * self.padding + 1 - self.kernel
    }

    /// Checks input/weight/bias shapes and derives the geometry.
    pub fn infer(input: &[usize], weight: &[usize], bias: &[usize], padding: usize) -> Result<Self> {
        let [b, cin, h, w] = match input {
            &[b, c, h, w] => [b, c, h, w],
            _ => return Err(Error::shape("conv2d", format!("input must be rank 4, got {input:?}"))),
        };
        let [cout, wcin, kh, kw] = match weight {
            &[o, i, kh, kw] => [o, i, kh, kw],
            _ => {
                return Err(Error::shape("conv2d", format!("weight must be rank 4, got {weight:?}")))
            }
        };
        if kh != kw {
            return Err(Error::shape("conv2d", format!("kernel must be square, got {kh}x{kw}")));
        }
        if kh % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel size must be odd, got {kh}")));
        }
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input channels: input has {cin}, weight expects {wcin}"),
            ));
        }
        if bias != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias must be [{cout}] for {cout} output channels, got {bias:?}"),
            ));
        }
        if h + 2 * padding < kh || w + 2 * padding < kh {
            return Err(Error::shape(
                "conv2d",
                format!("height/width {h}x{w} too small for kernel {kh} with padding {padding}"),
            ));
        }
        Ok(ConvShape {
            batch: b,
            in_channels: cin,
            out_channels: cout,
            height: h,
            width: w,
            kernel: kh,
            padding,
        })
    }

    /// Output columns `ox` for which `ox + kx - padding` is inside the input.
    #[inline]
    fn valid_range(&self, k: usize, out_len: usize, in_len: usize) -> (usize, usize) {
        let lo = self.padding.saturating_sub(k);
        let hi = (in_len + self.padding).saturating_sub(k).min(out_len);
        (lo, hi.max(lo))
    }
}

pub fn conv2d_forward<S: Scalar>(g: &ConvShape, input: &[S], weight: &[S], bias: &[S]) -> Vec<S> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (h, w, k, p) = (g.height, g.width, g.kernel, g.padding);
    let mut out = Vec::with_capacity(g.batch * g.out_channels * oh * ow);
    let mut acc = vec![0.0f64; oh * ow];
    for b in 0..g.batch {
        for co in 0..g.out_channels {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for ci in 0..g.in_channels {
                let plane = &input[(b * g.in_channels + ci) * h * w..][..h * w];
                let wbase = (co * g.in_channels + ci) * k * k;
                for ky in 0..k {
                    let (oy0, oy1) = g.valid_range(ky, oh, h);
                    for kx in 0..k {
                        let wv = weight[wbase + ky * k + kx].as_f64();
                        let (ox0, ox1) = g.valid_range(kx, ow, w);
                        for oy in oy0..oy1 {
                            let iy = oy + ky - p;
                            let src = &plane[iy * w + ox0 + kx - p..][..ox1 - ox0];
                            let dst = &mut acc[oy * ow + ox0..][..ox1 - ox0];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += wv * s.as_f64();
                            }
                        }
                    }
                }
            }
            let bv = bias[co].as_f64();
            out.extend(acc.iter().map(|&a| S::of(a + bv)));
        }
    }
    out
}

/// Gradients of a convolution with respect to its three operands.
pub struct ConvGrads<S> {
    pub input: Option<Vec<S>>,
    pub weight: Option<Vec<S>>,
    pub bias: Option<Vec<S>>,
}

pub fn conv2d_backward<S: Scalar>(
    g: &ConvShape,
    input: &[S],
    weight: &[S],
    grad_out: &[S],
    need: [bool; 3],
) -> ConvGrads<S> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (h, w, k, p) = (g.height, g.width, g.kernel, g.padding);
    let cin = g.in_channels;
    let cout = g.out_channels;

    let grad_input = need[0].then(|| {
        let mut gi = Vec::with_capacity(input.len());
        let mut acc = vec![0.0f64; h * w];
        for b in 0..g.batch {
            for ci in 0..cin {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for co in 0..cout {
                    let gplane = &grad_out[(b * cout + co) * oh * ow..][..oh * ow];
                    let wbase = (co * cin + ci) * k * k;
                    for ky in 0..k {
                        let (oy0, oy1) = g.valid_range(ky, oh, h);
                        for kx in 0..k {
                            let wv = weight[wbase + ky * k + kx].as_f64();
                            let (ox0, ox1) = g.valid_range(kx, ow, w);
                            for oy in oy0..oy1 {
                                let iy = oy + ky - p;
                                let src = &gplane[oy * ow + ox0..][..ox1 - ox0];
                                let dst = &mut acc[iy * w + ox0 + kx - p..][..ox1 - ox0];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d += wv * s.as_f64();
                                }
                            }
                        }
                    }
                }
                gi.extend(acc.iter().map(|&a| S::of(a)));
            }
        }
        gi
    });

    let grad_weight = need[1].then(|| {
        let mut gw = vec![S::zero(); weight.len()];
        for co in 0..cout {
            for ci in 0..cin {
                for ky in 0..k {
                    let (oy0, oy1) = g.valid_range(ky, oh, h);
                    for kx in 0..k {
                        let (ox0, ox1) = g.valid_range(kx, ow, w);
                        let mut acc = 0.0f64;
                        for b in 0..g.batch {
                            let plane = &input[(b * cin + ci) * h * w..][..h * w];
                            let gplane = &grad_out[(b * cout + co) * oh * ow..][..oh * ow];
                            for oy in oy0..oy1 {
                                let iy = oy + ky - p;
                                let src = &plane[iy * w + ox0 + kx - p..][..ox1 - ox0];
                                let go = &gplane[oy * ow + ox0..][..ox1 - ox0];
                                for (&s, &d) in src.iter().zip(go) {
                                    acc += s.as_f64() * d.as_f64();
                                }
                            }
                        }
                        gw[((co * cin + ci) * k + ky) * k + kx] = S::of(acc);
                    }
                }
            }
        }
        gw
    });

    let grad_bias = need[2].then(|| {
        (0..cout)
            .map(|co| {
                let mut acc = 0.0f64;
                for b in 0..g.batch {
                    acc += grad_out[(b * cout + co) * oh * ow..][..oh * ow]
                        .iter()
                        .map(|v| v.as_f64())
                        .sum::<f64>();
                }
                S::of(acc)
            })
            .collect()
    });

    ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    }
}
