//! Importance-driven pixel selection and the coarse-level mask hierarchy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Nonnegative per-pixel scores at the finest level.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceMap {
    pub height: usize,
    pub width: usize,
    pub scores: Vec<f32>,
}

impl ImportanceMap {
    pub fn new(height: usize, width: usize, scores: Vec<f32>) -> Result<Self> {
        if scores.len() != height * width {
            return Err(Error::shape(
                "importance",
                format!("{} scores for a {height}x{width} map", scores.len()),
            ));
        }
        if let Some(index) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if scores.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("importance scores must be nonnegative".into()));
        }
        Ok(ImportanceMap {
            height,
            width,
            scores,
        })
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        ImportanceMap {
            height,
            width,
            scores: vec![1.0; height * width],
        }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![1, 1, self.height, self.width], self.scores.clone()).expect("sized")
    }
}

/// `|last delta|` smoothed by a zero-padded 3×3 box mean; uniform when no
/// delta is available yet.
pub fn importance_proxy(deltas: &[Tensor<f32>]) -> Result<ImportanceMap> {
    let Some(last) = deltas.last() else {
        return Err(Error::InvalidArgument(
            "importance proxy needs a map size; use ImportanceMap::uniform when no delta exists".into(),
        ));
    };
    let [b, c, h, w] = last.dims4()?;
    if b != 1 || c != 1 {
        return Err(Error::shape("importance", format!("expected [1,1,H,W], got {:?}", last.shape())));
    }
    let a: Vec<f32> = last.data().iter().map(|v| v.abs()).collect();
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0f64;
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    s += a[yy * w + xx] as f64;
                }
            }
            out[y * w + x] = (s / 9.0) as f32;
        }
    }
    ImportanceMap::new(h, w, out)
}

/// Boolean activity map of one level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelMask {
    pub height: usize,
    pub width: usize,
    pub active: Vec<bool>,
}

impl LevelMask {
    pub fn full(height: usize, width: usize, value: bool) -> Self {
        LevelMask {
            height,
            width,
            active: vec![value; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Fraction of inactive pixels.
    pub fn sparsity(&self) -> f64 {
        if self.active.is_empty() {
            return 0.0;
        }
        1.0 - self.count() as f64 / self.active.len() as f64
    }

    /// Any-pool to half resolution.
    pub fn coarsen(&self) -> Result<LevelMask> {
        if self.height % 2 != 0 || self.width % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot coarsen a {}x{} mask (dimensions must be even)",
                self.height, self.width
            )));
        }
        let (h, w) = (self.height / 2, self.width / 2);
        let mut active = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                let at = |dy: usize, dx: usize| self.active[(2 * y + dy) * self.width + 2 * x + dx];
                active[y * w + x] = at(0, 0) || at(0, 1) || at(1, 0) || at(1, 1);
            }
        }
        Ok(LevelMask {
            height: h,
            width: w,
            active,
        })
    }
}

/// Per-level masks, finest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityMask {
    pub levels: Vec<LevelMask>,
}

impl SparsityMask {
    pub fn full(height: usize, width: usize, levels: usize, value: bool) -> Result<Self> {
        coarsen_mask(&LevelMask::full(height, width, value), levels)
    }

    /// Active count per level.
    pub fn counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.count()).collect()
    }

    /// Smallest per-level sparsity.
    pub fn min_sparsity(&self) -> f64 {
        self.levels.iter().map(|l| l.sparsity()).fold(f64::INFINITY, f64::min)
    }

    /// Checks that each coarse level is the any-pool of the level below.
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidArgument("mask hierarchy has no levels".into()));
        }
        for l in 1..self.levels.len() {
            if self.levels[l] != self.levels[l - 1].coarsen()? {
                return Err(Error::InvalidArgument(format!(
                    "mask level {l} is not the any-pool of level {}",
                    l - 1
                )));
            }
        }
        Ok(())
    }
}

/// Keeps the top `round((1-sparsity)·N)` pixels among those scoring at least
/// `threshold`; ties go to the smaller row-major index.
pub fn select_active(imp: &ImportanceMap, threshold: f32, sparsity: f64) -> Result<LevelMask> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument(format!(
            "sparsity target must be in [0, 1), got {sparsity}"
        )));
    }
    let n = imp.scores.len();
    let k = ((1.0 - sparsity) * n as f64).round() as usize;
    let mut cand: Vec<usize> = (0..n).filter(|&i| imp.scores[i] >= threshold).collect();
    if cand.len() > k {
        cand.sort_by(|&a, &b| imp.scores[b].total_cmp(&imp.scores[a]).then(a.cmp(&b)));
        cand.truncate(k);
    }
    let mut active = vec![false; n];
    for i in cand {
        active[i] = true;
    }
    Ok(LevelMask {
        height: imp.height,
        width: imp.width,
        active,
    })
}

/// Finest mask plus `levels - 1` any-pooled coarser masks.
pub fn coarsen_mask(fine: &LevelMask, levels: usize) -> Result<SparsityMask> {
    if levels == 0 {
        return Err(Error::InvalidArgument("need at least one level".into()));
    }
    let div = 1usize << (levels - 1);
    if fine.height % div != 0 || fine.width % div != 0 {
        return Err(Error::InvalidArgument(format!(
            "{}x{} is not divisible by 2^{} for {levels} levels",
            fine.height,
            fine.width,
            levels - 1
        )));
    }
    let mut out = vec![fine.clone()];
    for _ in 1..levels {
        let next = out.last().expect("non-empty").coarsen()?;
        out.push(next);
    }
    Ok(SparsityMask { levels: out })
}
