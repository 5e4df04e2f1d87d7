//! Per-iteration update flags, consecutive hit ratios and updated-pixel
//! fractions of a refinement trajectory.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::TrajectoryRecord;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateFlagMap {
    pub shape: Vec<usize>,
    pub flags: Vec<bool>,
    pub epsilon: f64,
}

impl UpdateFlagMap {
    pub fn new(shape: Vec<usize>, flags: Vec<bool>, epsilon: f64) -> Result<Self> {
        if shape.iter().product::<usize>() != flags.len() {
            return Err(Error::shape("update flags", format!("{} flags for shape {shape:?}", flags.len())));
        }
        check_epsilon(epsilon)?;
        Ok(UpdateFlagMap { shape, flags, epsilon })
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// 8-bit binary PGM of the last two dimensions; updated pixels are white.
    /// Leading dimensions are stacked vertically.
    pub fn to_pgm(&self) -> Vec<u8> {
        let w = self.shape.last().copied().unwrap_or(1).max(1);
        let h = self.flags.len() / w;
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.extend(self.flags.iter().map(|&f| if f { 255u8 } else { 0 }));
        out
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    Ok(())
}

fn same_shape(a: &UpdateFlagMap, b: &UpdateFlagMap) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape("flag maps", format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

/// `|d_curr − d_prev| > epsilon` per pixel.
pub fn update_flags<S: Scalar>(prev: &Tensor<S>, curr: &Tensor<S>, epsilon: f64) -> Result<UpdateFlagMap> {
    check_epsilon(epsilon)?;
    if prev.shape() != curr.shape() {
        return Err(Error::shape(
            "update flags",
            format!("{:?} vs {:?}", prev.shape(), curr.shape()),
        ));
    }
    let flags = prev
        .data()
        .iter()
        .zip(curr.data())
        .map(|(a, b)| (b.as_f64() - a.as_f64()).abs() > epsilon)
        .collect();
    Ok(UpdateFlagMap {
        shape: prev.shape().to_vec(),
        flags,
        epsilon,
    })
}

/// Fraction of pixels whose flag agrees between the two maps.
pub fn hit_ratio(a: &UpdateFlagMap, b: &UpdateFlagMap) -> Result<f64> {
    same_shape(a, b)?;
    if a.flags.is_empty() {
        return Ok(1.0);
    }
    let agree = a.flags.iter().zip(&b.flags).filter(|(x, y)| x == y).count();
    Ok(agree as f64 / a.flags.len() as f64)
}

/// Intersection over union of the updated sets; 1 when both are empty.
pub fn iou(a: &UpdateFlagMap, b: &UpdateFlagMap) -> Result<f64> {
    same_shape(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.flags.iter().zip(&b.flags) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn updated_fraction(flags: &UpdateFlagMap) -> f64 {
    if flags.flags.is_empty() {
        return 0.0;
    }
    flags.count() as f64 / flags.flags.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceReport {
    pub epsilon: f64,
    pub flags: Vec<UpdateFlagMap>,
    /// Entry `t` is the fraction updated by step `t+1`.
    pub updated_fraction: Vec<f64>,
    /// Entry `t` compares steps `t+2` and `t+1`.
    pub hit_ratio: Vec<f64>,
    pub iou: Vec<f64>,
}

impl TraceReport {
    /// `iteration,updated_fraction,hit_ratio_vs_prev,iou_vs_prev`; the first
    /// iteration has no predecessor and leaves the last two empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,updated_fraction,hit_ratio_vs_prev,iou_vs_prev\n");
        for (t, f) in self.updated_fraction.iter().enumerate() {
            if t == 0 {
                let _ = writeln!(out, "{},{f:.6},,", t + 1);
            } else {
                let _ = writeln!(out, "{},{f:.6},{:.6},{:.6}", t + 1, self.hit_ratio[t - 1], self.iou[t - 1]);
            }
        }
        out
    }
}

/// Flags between consecutive estimates `d_{t-1} → d_t` for `t = 1..T`.
pub fn trajectory_report<S: Scalar>(record: &TrajectoryRecord<Tensor<S>>, epsilon: f64) -> Result<TraceReport> {
    trace_estimates(&record.disparities, epsilon)
}

/// Same as [`trajectory_report`] over a bare estimate sequence `d_0..d_T`.
pub fn trace_estimates<S: Scalar>(estimates: &[Tensor<S>], epsilon: f64) -> Result<TraceReport> {
    if estimates.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "trace analysis needs at least 2 iterations, got {}",
            estimates.len().saturating_sub(1)
        )));
    }
    let flags = estimates
        .windows(2)
        .map(|w| update_flags(&w[0], &w[1], epsilon))
        .collect::<Result<Vec<_>>>()?;
    let updated_fraction = flags.iter().map(updated_fraction).collect();
    let hit = flags.windows(2).map(|w| hit_ratio(&w[1], &w[0])).collect::<Result<Vec<_>>>()?;
    let ious = flags.windows(2).map(|w| iou(&w[1], &w[0])).collect::<Result<Vec<_>>>()?;
    Ok(TraceReport {
        epsilon,
        flags,
        updated_fraction,
        hit_ratio: hit,
        iou: ious,
    })
}
