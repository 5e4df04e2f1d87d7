//! Dense reference loop and the packed, temporally fused sparse loop.
//!
//! Levels are updated coarse to fine within a step. A level's input is
//! `[h ‖ static ‖ pool(finer h) ‖ up(coarser h)]`: the finer level has not
//! been updated yet in this step, the coarser one already has. Inactive
//! pixels keep their hidden state for the whole run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ledger::{
    charge_dense_step, charge_pack, charge_scatter, charge_sparse_step, charge_workspace, dense_peak_bytes,
    level_shapes, sparse_peak_bytes, AccessLedger, LevelShape, Phase, Traffic,
};
use super::mask::SparsityMask;
use super::rulebook::{Rulebook, Src};
use crate::error::{Error, Result};
use crate::model::{gru_step, GruWeights};
use crate::tensor::{sigmoid, Tape, Tensor};

/// ConvGRU weights of every level, finest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FlashParams {
    pub levels: Vec<GruWeights<Tensor<f32>>>,
    pub hidden: usize,
    pub statics: usize,
}

impl FlashParams {
    /// Random 3×3 weights for `levels` levels.
    pub fn random(levels: usize, hidden: usize, statics: usize, seed: u64) -> Result<Self> {
        if levels == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("need at least one level and one hidden channel".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = vec![(2, 2); levels];
        let shapes = level_shapes(&dims, hidden, statics);
        let levels = shapes
            .iter()
            .map(|s| GruWeights::init(hidden, s.input_channels() - hidden, 3, &mut rng))
            .collect();
        Ok(FlashParams {
            levels,
            hidden,
            statics,
        })
    }

    /// Lifts a single-level cell to `levels` levels; the cross-level input
    /// columns start at zero.
    pub fn from_gru(g: &GruWeights<Tensor<f32>>, hidden: usize, levels: usize) -> Result<Self> {
        let ws = g.update.weight.shape();
        if ws.len() != 4 || ws[0] != hidden || ws[2] != 3 || ws[3] != 3 || ws[1] <= hidden {
            return Err(Error::shape("flash params", format!("GRU weight {ws:?} for {hidden} hidden channels")));
        }
        let statics = ws[1] - hidden;
        let dims = vec![(2, 2); levels.max(1)];
        let shapes = level_shapes(&dims, hidden, statics);
        let widen = |w: &Tensor<f32>, cx: usize| -> Tensor<f32> {
            let cin = w.shape()[1];
            Tensor::from_fn(vec![hidden, cx, 3, 3], |i| {
                let (co, rest) = (i / (cx * 9), i % (cx * 9));
                let (ci, t) = (rest / 9, rest % 9);
                if ci < cin {
                    w.data()[(co * cin + ci) * 9 + t]
                } else {
                    0.0
                }
            })
        };
        let levels = shapes
            .iter()
            .map(|s| {
                let cx = s.input_channels();
                let mut out = g.clone();
                for (_, t) in out.entries_mut("") {
                    if t.shape().len() == 4 {
                        *t = widen(t, cx);
                    }
                }
                out
            })
            .collect();
        Ok(FlashParams {
            levels,
            hidden,
            statics,
        })
    }

    pub fn validate(&self, shapes: &[LevelShape]) -> Result<()> {
        if shapes.len() != self.levels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} levels of weights for {} levels of state",
                self.levels.len(),
                shapes.len()
            )));
        }
        for (l, (g, s)) in self.levels.iter().zip(shapes).enumerate() {
            for (name, t) in g.entries("gru") {
                let want: Vec<usize> = if name.ends_with("weight") {
                    vec![self.hidden, s.input_channels(), 3, 3]
                } else {
                    vec![self.hidden]
                };
                if t.shape() != want.as_slice() {
                    return Err(Error::shape(
                        "flash params",
                        format!("level {l} {name} is {:?}, expected {want:?}", t.shape()),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_state(hidden: &[Tensor<f32>], statics: &[Tensor<f32>], params: &FlashParams) -> Result<Vec<LevelShape>> {
    if hidden.is_empty() || hidden.len() != statics.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hidden levels and {} static levels",
            hidden.len(),
            statics.len()
        )));
    }
    let mut dims = Vec::with_capacity(hidden.len());
    for (l, (h, x)) in hidden.iter().zip(statics).enumerate() {
        let [b, c, hh, ww] = h.dims4()?;
        let [bx, cx, hx, wx] = x.dims4()?;
        if b != 1 || bx != 1 || c != params.hidden || cx != params.statics || (hh, ww) != (hx, wx) {
            return Err(Error::shape(
                "flash state",
                format!("level {l}: hidden {:?}, static {:?}", h.shape(), x.shape()),
            ));
        }
        if l > 0 && (2 * hh, 2 * ww) != dims[l - 1] {
            return Err(Error::shape(
                "flash state",
                format!("level {l} is {hh}x{ww}, finer level is {:?}", dims[l - 1]),
            ));
        }
        dims.push((hh, ww));
    }
    let shapes = level_shapes(&dims, params.hidden, params.statics);
    params.validate(&shapes)?;
    Ok(shapes)
}

/// 2×2 mean of a `[1,C,2h,2w]` map.
pub fn pool2(fine: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [_, c, h, w] = fine.dims4()?;
    let (ho, wo) = (h / 2, w / 2);
    let d = fine.data();
    Ok(Tensor::from_fn(vec![1, c, ho, wo], |i| {
        let (ch, p) = (i / (ho * wo), i % (ho * wo));
        let (y, x) = (p / wo, p % wo);
        let at = |dy: usize, dx: usize| d[ch * h * w + (2 * y + dy) * w + 2 * x + dx];
        pool_value(at(0, 0), at(0, 1), at(1, 0), at(1, 1))
    }))
}

#[inline]
fn pool_value(a: f32, b: f32, c: f32, d: f32) -> f32 {
    (((a + b) + c) + d) * 0.25
}

/// Nearest-neighbour 2× upsampling.
pub fn up2(coarse: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [_, c, h, w] = coarse.dims4()?;
    let (ho, wo) = (2 * h, 2 * w);
    let d = coarse.data();
    Ok(Tensor::from_fn(vec![1, c, ho, wo], |i| {
        let (ch, p) = (i / (ho * wo), i % (ho * wo));
        d[ch * h * w + (p / wo / 2) * w + (p % wo) / 2]
    }))
}

/// Unfused multi-level loop. With a mask, inactive pixels are restored
/// after every level update.
pub fn dense_reference_loop(
    hidden: &[Tensor<f32>],
    statics: &[Tensor<f32>],
    params: &FlashParams,
    iterations: usize,
    mask: Option<&SparsityMask>,
) -> Result<(Vec<Tensor<f32>>, AccessLedger)> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("the loop needs at least one iteration".into()));
    }
    let shapes = check_state(hidden, statics, params)?;
    if let Some(m) = mask {
        m.validate()?;
        if m.levels.len() != shapes.len()
            || m.levels.iter().zip(&shapes).any(|(a, s)| (a.height, a.width) != (s.height, s.width))
        {
            return Err(Error::shape("dense loop", "mask does not match the state pyramid".to_string()));
        }
    }
    let nl = shapes.len();
    let mut ledger = AccessLedger::new();
    ledger.reserve(dense_peak_bytes(&shapes));
    let mut state: Vec<Tensor<f32>> = hidden.iter().map(|h| h.detached()).collect();
    let tape = Tape::<f32>::inference();
    let weights: Vec<GruWeights<_>> = params.levels.iter().map(|g| g.map("gru", &mut |_, t| tape.constant(t.detached()))).collect();
    for _ in 0..iterations {
        for l in (0..nl).rev() {
            let mut parts = vec![tape.constant(statics[l].detached())];
            if l > 0 {
                parts.push(tape.constant(pool2(&state[l - 1])?));
            }
            if l + 1 < nl {
                parts.push(tape.constant(up2(&state[l + 1])?));
            }
            let x = tape.concat(&parts.iter().collect::<Vec<_>>())?;
            let h = tape.constant(state[l].clone());
            let mut next = gru_step(&tape, &weights[l], &h, &x)?.to_tensor();
            if let Some(m) = mask {
                let n = shapes[l].pixels();
                let old = state[l].data();
                let active = &m.levels[l].active;
                for (i, v) in next.data_mut().iter_mut().enumerate() {
                    if !active[i % n] {
                        *v = old[i];
                    }
                }
            }
            state[l] = next;
            charge_dense_step(&mut ledger, &shapes, l);
        }
    }
    Ok((state, ledger))
}

/// Arena, halo and region-packed static inputs of one fused run.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedState {
    pub arena: Vec<f32>,
    pub halo: Vec<f32>,
    pub inputs: Vec<Vec<f32>>,
}

/// Active pixels of one level, slot-major: `packed[s*C + c]`.
pub fn pack_level(rb: &Rulebook, level: usize, dense: &Tensor<f32>) -> Result<Vec<f32>> {
    let t = level_table(rb, level)?;
    let c = dense_channels(t, dense)?;
    let n = t.pixels();
    let d = dense.data();
    let mut out = Vec::with_capacity(t.active() * c);
    for &p in &t.inverse {
        out.extend((0..c).map(|ch| d[ch * n + p as usize]));
    }
    Ok(out)
}

/// Writes slot-major `packed` back to the active pixels of `dense`.
pub fn unpack_level(rb: &Rulebook, level: usize, packed: &[f32], dense: &mut Tensor<f32>) -> Result<()> {
    let t = level_table(rb, level)?;
    let c = dense_channels(t, dense)?;
    if packed.len() != t.active() * c {
        return Err(Error::shape(
            "unpack",
            format!("{} packed values for {} slots of {c} channels", packed.len(), t.active()),
        ));
    }
    let n = t.pixels();
    let d = dense.data_mut();
    for (s, &p) in t.inverse.iter().enumerate() {
        for ch in 0..c {
            d[ch * n + p as usize] = packed[s * c + ch];
        }
    }
    Ok(())
}

fn level_table(rb: &Rulebook, level: usize) -> Result<&super::rulebook::LevelTable> {
    rb.levels
        .get(level)
        .ok_or_else(|| Error::InvalidArgument(format!("rulebook has no level {level}")))
}

fn dense_channels(t: &super::rulebook::LevelTable, dense: &Tensor<f32>) -> Result<usize> {
    let [b, c, h, w] = dense.dims4()?;
    if b != 1 || (h, w) != (t.height, t.width) {
        return Err(Error::shape(
            "pack",
            format!("map {:?} for a {}x{} rulebook level", dense.shape(), t.height, t.width),
        ));
    }
    Ok(c)
}

fn gather_pixels(t: &super::rulebook::LevelTable, dense: &Tensor<f32>, pixels: &[u32]) -> Vec<f32> {
    let [_, c, _, _] = dense.dims4().expect("checked");
    let n = t.pixels();
    let d = dense.data();
    let mut out = Vec::with_capacity(pixels.len() * c);
    for &p in pixels {
        out.extend((0..c).map(|ch| d[ch * n + p as usize]));
    }
    out
}

fn check_rulebook(rb: &Rulebook, shapes: &[LevelShape]) -> Result<()> {
    if rb.hidden_channels != shapes[0].hidden
        || rb.levels.len() != shapes.len()
        || rb.levels.iter().zip(shapes).any(|(t, s)| (t.height, t.width) != (s.height, s.width))
    {
        return Err(Error::shape("pack", "rulebook was built for a different pyramid".to_string()));
    }
    Ok(())
}

/// Copies active hidden vectors into the arena, frozen ones into the halo
/// and static inputs of every region node into per-level buffers.
pub fn pack(
    rb: &Rulebook,
    hidden: &[Tensor<f32>],
    statics: &[Tensor<f32>],
    params: &FlashParams,
    ledger: &mut AccessLedger,
) -> Result<PackedState> {
    let shapes = check_state(hidden, statics, params)?;
    check_rulebook(rb, &shapes)?;
    let mut arena = Vec::with_capacity(rb.total_slots * rb.hidden_channels);
    let mut halo = Vec::with_capacity(rb.total_halo * rb.hidden_channels);
    let mut inputs = Vec::with_capacity(rb.levels.len());
    charge_workspace(ledger);
    for (l, t) in rb.levels.iter().enumerate() {
        arena.extend(pack_level(rb, l, &hidden[l])?);
        halo.extend(gather_pixels(t, &hidden[l], &t.halo));
        inputs.push(gather_pixels(t, &statics[l], &t.region));
        charge_pack(ledger, rb, params.statics, l);
    }
    ledger.reserve(sparse_peak_bytes(rb, params.statics));
    Ok(PackedState { arena, halo, inputs })
}

/// Writes the arena back to the active pixels of `hidden`.
pub fn scatter(rb: &Rulebook, state: &PackedState, hidden: &mut [Tensor<f32>], ledger: &mut AccessLedger) -> Result<()> {
    if hidden.len() != rb.levels.len() {
        return Err(Error::shape("scatter", format!("{} maps for {} levels", hidden.len(), rb.levels.len())));
    }
    let c = rb.hidden_channels;
    for (l, t) in rb.levels.iter().enumerate() {
        let range = t.slot_offset * c..(t.slot_offset + t.active()) * c;
        unpack_level(rb, l, &state.arena[range], &mut hidden[l])?;
        charge_scatter(ledger, rb, l);
    }
    Ok(())
}

#[inline]
fn fetch<'a>(state: &'a PackedState, src: Src, c: usize) -> &'a [f32] {
    match src {
        Src::Arena(s) => &state.arena[s as usize * c..][..c],
        Src::Halo(i) => &state.halo[i as usize * c..][..c],
    }
}

/// 3×3 conv at one node over a node-major buffer with `cx` channels, in
/// the same accumulation order as the dense kernel.
#[inline]
fn conv_node(weight: &[f32], bias: &[f32], cx: usize, taps: &[Option<u32>; 9], buf: &[f32], out: &mut [f32]) {
    for (co, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for ci in 0..cx {
            let w = &weight[(co * cx + ci) * 9..][..9];
            for (t, tap) in taps.iter().enumerate() {
                if let Some(j) = tap {
                    acc += w[t] as f64 * buf[*j as usize * cx + ci] as f64;
                }
            }
        }
        *o = (acc + bias[co] as f64) as f32;
    }
}

/// Runs `iterations` GRU steps on the packed state; only arena slots change.
pub fn fused_sparse_loop(
    rb: &Rulebook,
    state: &mut PackedState,
    params: &FlashParams,
    iterations: usize,
    ledger: &mut AccessLedger,
) -> Result<()> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("the loop needs at least one iteration".into()));
    }
    let c = params.hidden;
    if rb.hidden_channels != c
        || state.arena.len() != rb.total_slots * c
        || state.halo.len() != rb.total_halo * c
        || state.inputs.len() != rb.levels.len()
    {
        return Err(Error::ArenaOverflow(format!(
            "arena holds {} values, rulebook needs {}",
            state.arena.len(),
            rb.total_slots * c
        )));
    }
    let shapes = level_shapes(&rb.dims(), c, params.statics);
    params.validate(&shapes)?;
    let cs = params.statics;
    let nl = rb.levels.len();
    let mut xbuf = Vec::new();
    let mut rhx = Vec::new();
    let mut gate_r = Vec::new();
    let mut fresh = Vec::new();
    for _ in 0..iterations {
        for l in (0..nl).rev() {
            let t = &rb.levels[l];
            let g = &params.levels[l];
            let cx = shapes[l].input_channels();
            let (k, m, r) = (t.active(), t.gated(), t.region.len());
            if state.inputs[l].len() != r * cs {
                return Err(Error::ArenaOverflow(format!("level {l} input buffer has the wrong size")));
            }
            // assemble [h ‖ static ‖ pool ‖ up] per region node
            xbuf.clear();
            xbuf.resize(r * cx, 0.0f32);
            for j in 0..r {
                let row = &mut xbuf[j * cx..][..cx];
                row[..c].copy_from_slice(fetch(state, t.src_hidden[j], c));
                row[c..c + cs].copy_from_slice(&state.inputs[l][j * cs..][..cs]);
                let mut at = c + cs;
                if l > 0 {
                    let ch = t.src_children[j].map(|s| fetch(state, s, c));
                    for (i, v) in row[at..at + c].iter_mut().enumerate() {
                        *v = pool_value(ch[0][i], ch[1][i], ch[2][i], ch[3][i]);
                    }
                    at += c;
                }
                if l + 1 < nl {
                    row[at..at + c].copy_from_slice(fetch(state, t.src_parent[j], c));
                }
            }
            // reset gate on actives and ring 1, then [r ⊙ h ‖ x]
            gate_r.clear();
            gate_r.resize(m * c, 0.0f32);
            rhx.clear();
            rhx.resize(m * cx, 0.0f32);
            for j in 0..m {
                let out = &mut gate_r[j * c..][..c];
                conv_node(g.reset.weight.data(), g.reset.bias.data(), cx, &t.region_taps[j], &xbuf, out);
                for v in out.iter_mut() {
                    *v = sigmoid(*v);
                }
                let row = &mut rhx[j * cx..][..cx];
                for i in 0..c {
                    row[i] = gate_r[j * c + i] * xbuf[j * cx + i];
                }
                row[c..].copy_from_slice(&xbuf[j * cx + c..][..cx - c]);
            }
            // update gate, candidate and blend on actives
            fresh.clear();
            fresh.resize(k * c, 0.0f32);
            let mut u = vec![0.0f32; c];
            let mut cand = vec![0.0f32; c];
            for j in 0..k {
                let taps = &t.region_taps[j];
                conv_node(g.update.weight.data(), g.update.bias.data(), cx, taps, &xbuf, &mut u);
                conv_node(g.candidate.weight.data(), g.candidate.bias.data(), cx, taps, &rhx, &mut cand);
                let h = &xbuf[j * cx..][..c];
                for i in 0..c {
                    let ui = sigmoid(u[i]);
                    let ci = cand[i].tanh();
                    let keep = (ui * -1.0f32) + 1.0f32;
                    fresh[j * c + i] = keep * h[i] + ui * ci;
                }
            }
            state.arena[t.slot_offset * c..][..k * c].copy_from_slice(&fresh);
            charge_sparse_step(ledger, rb, cs, l);
        }
    }
    Ok(())
}

/// Pack, fused loop and scatter in one call; returns the updated maps.
pub fn sparse_run(
    rb: &Rulebook,
    hidden: &[Tensor<f32>],
    statics: &[Tensor<f32>],
    params: &FlashParams,
    iterations: usize,
) -> Result<(Vec<Tensor<f32>>, AccessLedger)> {
    let mut ledger = AccessLedger::new();
    let mut state = pack(rb, hidden, statics, params, &mut ledger)?;
    fused_sparse_loop(rb, &mut state, params, iterations, &mut ledger)?;
    let mut out: Vec<Tensor<f32>> = hidden.iter().map(|h| h.detached()).collect();
    scatter(rb, &state, &mut out, &mut ledger)?;
    Ok((out, ledger))
}

/// Hidden-map traffic of a ledger: the part fusion is meant to make
/// independent of the iteration count.
pub fn hidden_global_requests(ledger: &AccessLedger) -> u64 {
    ledger.traffic_requests(Traffic::Hidden)
}

/// Loop-phase requests of a ledger.
pub fn loop_requests(ledger: &AccessLedger) -> u64 {
    ledger.phase_requests(Phase::Loop)
}
