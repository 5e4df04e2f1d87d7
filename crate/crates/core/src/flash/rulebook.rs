//! Static index tables linking pixel coordinates, packed slots and the
//! frozen halo across the level hierarchy.
//!
//! Per level the *region* is every pixel whose input vector the fused loop
//! assembles: the active set, then ring 1 (inactive pixels adjacent to an
//! active one, whose reset gate feeds the candidate conv), then ring 2
//! (inactive pixels feeding ring 1's reset gate). Inactive pixels referenced
//! by a region node, by a pooled child or by an upsampled parent are
//! snapshotted into the halo.

use super::mask::SparsityMask;
use crate::error::{Error, Result};

/// Bytes reserved for per-step scratch, charged once regardless of mask.
pub const WORKSPACE_BYTES: usize = 4096;
pub const SCALAR_BYTES: usize = 4;

/// Source of one neighbour in an active pixel's 3×3 footprint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tap {
    /// Global arena slot.
    Active(u32),
    /// Global halo index of a frozen neighbour.
    Frozen(u32),
    Outside,
}

/// Where a hidden vector lives during the loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Src {
    Arena(u32),
    Halo(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelTable {
    pub height: usize,
    pub width: usize,
    /// Pixel → local slot.
    pub forward: Vec<Option<u32>>,
    /// Local slot → pixel, row-major ascending.
    pub inverse: Vec<u32>,
    pub slot_offset: usize,
    /// Per active slot, neighbours in (dy, dx) row-major order.
    pub gather: Vec<[Tap; 9]>,
    /// Region pixels: actives, then ring 1, then ring 2.
    pub region: Vec<u32>,
    pub ring1: usize,
    pub ring2: usize,
    /// For the first `active + ring1` region nodes: region indices of the
    /// 3×3 neighbours, `None` outside the map.
    pub region_taps: Vec<[Option<u32>; 9]>,
    pub src_hidden: Vec<Src>,
    /// Sources of the four finer children (levels above 0).
    pub src_children: Vec<[Src; 4]>,
    /// Source of the coarser parent (all but the coarsest level).
    pub src_parent: Vec<Src>,
    /// Global arena slot of the parent of each active pixel.
    pub parent_slot: Vec<u32>,
    /// Halo pixels, row-major ascending.
    pub halo: Vec<u32>,
    pub halo_offset: usize,
}

impl LevelTable {
    pub fn active(&self) -> usize {
        self.inverse.len()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Nodes whose reset gate is evaluated.
    pub fn gated(&self) -> usize {
        self.active() + self.ring1
    }

    pub fn slots(&self) -> std::ops::Range<usize> {
        self.slot_offset..self.slot_offset + self.active()
    }

    pub fn coord(&self, slot: usize) -> (usize, usize) {
        let p = self.inverse[slot] as usize;
        (p / self.width, p % self.width)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rulebook {
    pub levels: Vec<LevelTable>,
    pub hidden_channels: usize,
    pub total_slots: usize,
    pub total_halo: usize,
    pub arena_bytes: usize,
}

fn neighbours(h: usize, w: usize, p: usize) -> [Option<usize>; 9] {
    let (y, x) = ((p / w) as isize, (p % w) as isize);
    let mut out = [None; 9];
    for (i, o) in out.iter_mut().enumerate() {
        let (yy, xx) = (y + i as isize / 3 - 1, x + i as isize % 3 - 1);
        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
            *o = Some(yy as usize * w + xx as usize);
        }
    }
    out
}

fn children(w_coarse: usize, p: usize) -> [usize; 4] {
    let (y, x) = (p / w_coarse, p % w_coarse);
    let wf = 2 * w_coarse;
    [
        2 * y * wf + 2 * x,
        2 * y * wf + 2 * x + 1,
        (2 * y + 1) * wf + 2 * x,
        (2 * y + 1) * wf + 2 * x + 1,
    ]
}

fn parent(w_fine: usize, p: usize) -> usize {
    let (y, x) = (p / w_fine, p % w_fine);
    (y / 2) * (w_fine / 2) + x / 2
}

/// Pixels within Chebyshev distance 1 of `set` but not in it, row-major.
fn ring(h: usize, w: usize, set: &[bool]) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for p in (0..h * w).filter(|&p| set[p]) {
        for q in neighbours(h, w, p).into_iter().flatten() {
            if !set[q] {
                out[q] = true;
            }
        }
    }
    out
}

/// Builds the tables for `masks` with `hidden_channels` per pixel.
pub fn build_rulebook(masks: &SparsityMask, hidden_channels: usize) -> Result<Rulebook> {
    masks.validate()?;
    if hidden_channels == 0 {
        return Err(Error::InvalidArgument("hidden channel count must be positive".into()));
    }
    let nl = masks.levels.len();

    // Region membership per level.
    let mut region_px: Vec<Vec<u32>> = Vec::with_capacity(nl);
    let mut rings: Vec<(usize, usize)> = Vec::with_capacity(nl);
    for m in &masks.levels {
        let (h, w) = (m.height, m.width);
        let r1 = ring(h, w, &m.active);
        let inner: Vec<bool> = (0..h * w).map(|p| m.active[p] || r1[p]).collect();
        let r2 = ring(h, w, &inner);
        let pick = |s: &[bool]| (0..h * w).filter(|&p| s[p]).map(|p| p as u32).collect::<Vec<_>>();
        let (a, b, c) = (pick(&m.active), pick(&r1), pick(&r2));
        rings.push((b.len(), c.len()));
        region_px.push([a, b, c].concat());
    }

    // Frozen pixels each level must snapshot.
    let mut frozen: Vec<Vec<bool>> = masks.levels.iter().map(|m| vec![false; m.len()]).collect();
    for l in 0..nl {
        let m = &masks.levels[l];
        for &p in &region_px[l] {
            let p = p as usize;
            if !m.active[p] {
                frozen[l][p] = true;
            }
            if l > 0 {
                for c in children(m.width, p) {
                    if !masks.levels[l - 1].active[c] {
                        frozen[l - 1][c] = true;
                    }
                }
            }
            if l + 1 < nl {
                let q = parent(m.width, p);
                if !masks.levels[l + 1].active[q] {
                    frozen[l + 1][q] = true;
                }
            }
        }
    }

    let mut slot_offset = 0usize;
    let mut halo_offset = 0usize;
    let mut levels: Vec<LevelTable> = Vec::with_capacity(nl);
    for (l, m) in masks.levels.iter().enumerate() {
        let inverse: Vec<u32> = (0..m.len()).filter(|&p| m.active[p]).map(|p| p as u32).collect();
        let mut forward = vec![None; m.len()];
        for (s, &p) in inverse.iter().enumerate() {
            forward[p as usize] = Some(s as u32);
        }
        let halo: Vec<u32> = (0..m.len()).filter(|&p| frozen[l][p]).map(|p| p as u32).collect();
        let (ring1, ring2) = rings[l];
        levels.push(LevelTable {
            height: m.height,
            width: m.width,
            forward,
            inverse,
            slot_offset,
            gather: Vec::new(),
            region: std::mem::take(&mut region_px[l]),
            ring1,
            ring2,
            region_taps: Vec::new(),
            src_hidden: Vec::new(),
            src_children: Vec::new(),
            src_parent: Vec::new(),
            parent_slot: Vec::new(),
            halo,
            halo_offset,
        });
        slot_offset += levels[l].active();
        halo_offset += levels[l].halo.len();
    }

    let halo_index: Vec<Vec<Option<u32>>> = levels
        .iter()
        .map(|t| {
            let mut idx = vec![None; t.pixels()];
            for (i, &p) in t.halo.iter().enumerate() {
                idx[p as usize] = Some((t.halo_offset + i) as u32);
            }
            idx
        })
        .collect();
    let src = |levels: &[LevelTable], l: usize, p: usize| -> Src {
        match levels[l].forward[p] {
            Some(s) => Src::Arena((levels[l].slot_offset + s as usize) as u32),
            None => Src::Halo(halo_index[l][p].expect("frozen pixel is in the halo")),
        }
    };

    for l in 0..nl {
        let (h, w) = (levels[l].height, levels[l].width);
        let mut region_index = vec![None; h * w];
        for (i, &p) in levels[l].region.iter().enumerate() {
            region_index[p as usize] = Some(i as u32);
        }
        let gather: Vec<[Tap; 9]> = levels[l]
            .inverse
            .iter()
            .map(|&p| {
                neighbours(h, w, p as usize).map(|q| match q {
                    None => Tap::Outside,
                    Some(q) => match src(&levels, l, q) {
                        Src::Arena(s) => Tap::Active(s),
                        Src::Halo(i) => Tap::Frozen(i),
                    },
                })
            })
            .collect();
        let gated = levels[l].gated();
        let region_taps: Vec<[Option<u32>; 9]> = levels[l].region[..gated]
            .iter()
            .map(|&p| {
                neighbours(h, w, p as usize).map(|q| {
                    q.map(|q| region_index[q].expect("neighbour of a gated node lies in the region"))
                })
            })
            .collect();
        let src_hidden = levels[l].region.iter().map(|&p| src(&levels, l, p as usize)).collect();
        let src_children = if l > 0 {
            levels[l]
                .region
                .iter()
                .map(|&p| children(w, p as usize).map(|c| src(&levels, l - 1, c)))
                .collect()
        } else {
            Vec::new()
        };
        let (src_parent, parent_slot) = if l + 1 < nl {
            let sp = levels[l].region.iter().map(|&p| src(&levels, l + 1, parent(w, p as usize))).collect();
            let ps = levels[l]
                .inverse
                .iter()
                .map(|&p| match src(&levels, l + 1, parent(w, p as usize)) {
                    Src::Arena(s) => Ok(s),
                    Src::Halo(_) => Err(Error::InvalidArgument(format!(
                        "active pixel {p} at level {l} has an inactive parent"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            (sp, ps)
        } else {
            (Vec::new(), Vec::new())
        };
        let t = &mut levels[l];
        t.gather = gather;
        t.region_taps = region_taps;
        t.src_hidden = src_hidden;
        t.src_children = src_children;
        t.src_parent = src_parent;
        t.parent_slot = parent_slot;
    }

    Ok(Rulebook {
        hidden_channels,
        total_slots: slot_offset,
        total_halo: halo_offset,
        arena_bytes: slot_offset * hidden_channels * SCALAR_BYTES + WORKSPACE_BYTES,
        levels,
    })
}

impl Rulebook {
    /// Modeled bytes of the index tables themselves.
    pub fn table_bytes(&self) -> usize {
        let nl = self.levels.len();
        self.levels
            .iter()
            .enumerate()
            .map(|(l, t)| {
                let per_node = 1 + 4 * usize::from(l > 0) + usize::from(l + 1 < nl);
                SCALAR_BYTES
                    * (t.pixels() + t.active() + 9 * t.gated() + per_node * t.region.len() + t.halo.len())
            })
            .sum()
    }

    pub fn halo_bytes(&self) -> usize {
        self.total_halo * self.hidden_channels * SCALAR_BYTES
    }

    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.levels.iter().map(|t| (t.height, t.width)).collect()
    }
}
