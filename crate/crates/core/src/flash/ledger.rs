//! Analytic global-memory access model.
//!
//! One request is one contiguous 128-byte segment (32 scalars) touched.
//! Weight traffic is excluded on both sides. Dense maps are planar per
//! channel, so touching pixel `p` of a level touches segment `p / 32` of
//! every channel plane read.

use super::rulebook::{Rulebook, SCALAR_BYTES, WORKSPACE_BYTES};

pub const SEGMENT_SCALARS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Pack,
    Loop,
    Scatter,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Pack, Phase::Loop, Phase::Scatter];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Traffic {
    /// Full-resolution hidden-state maps.
    Hidden,
    /// Arena and halo.
    Packed,
    /// Static per-pixel inputs, dense or packed.
    Input,
    /// Gate maps and concatenated inputs of the unfused loop.
    Intermediate,
    /// Rulebook tables.
    Index,
}

impl Traffic {
    pub const ALL: [Traffic; 5] = [
        Traffic::Hidden,
        Traffic::Packed,
        Traffic::Input,
        Traffic::Intermediate,
        Traffic::Index,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Contiguous run of `n` scalars.
pub fn segments(n: usize) -> u64 {
    n.div_ceil(SEGMENT_SCALARS) as u64
}

/// Distinct segments of one channel plane touched by `pixels`.
pub fn touched_segments(plane: usize, pixels: impl IntoIterator<Item = usize>) -> u64 {
    let mut seen = vec![false; plane.div_ceil(SEGMENT_SCALARS)];
    let mut n = 0;
    for p in pixels {
        let s = p / SEGMENT_SCALARS;
        if !seen[s] {
            seen[s] = true;
            n += 1;
        }
    }
    n
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccessLedger {
    loads: [[u64; 5]; 3],
    stores: [[u64; 5]; 3],
    pub peak_arena_bytes: u64,
}

impl AccessLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(&mut self, phase: Phase, traffic: Traffic, requests: u64) {
        self.loads[phase.index()][traffic.index()] += requests;
    }

    pub fn store(&mut self, phase: Phase, traffic: Traffic, requests: u64) {
        self.stores[phase.index()][traffic.index()] += requests;
    }

    pub fn reserve(&mut self, bytes: u64) {
        self.peak_arena_bytes = self.peak_arena_bytes.max(bytes);
    }

    pub fn loads(&self, phase: Phase, traffic: Traffic) -> u64 {
        self.loads[phase.index()][traffic.index()]
    }

    pub fn stores(&self, phase: Phase, traffic: Traffic) -> u64 {
        self.stores[phase.index()][traffic.index()]
    }

    pub fn global_load_requests(&self) -> u64 {
        self.loads.iter().flatten().sum()
    }

    pub fn global_store_requests(&self) -> u64 {
        self.stores.iter().flatten().sum()
    }

    pub fn total_requests(&self) -> u64 {
        self.global_load_requests() + self.global_store_requests()
    }

    pub fn phase_requests(&self, phase: Phase) -> u64 {
        let p = phase.index();
        self.loads[p].iter().chain(&self.stores[p]).sum()
    }

    /// Loads plus stores of one traffic class over all phases.
    pub fn traffic_requests(&self, traffic: Traffic) -> u64 {
        let t = traffic.index();
        (0..3).map(|p| self.loads[p][t] + self.stores[p][t]).sum()
    }

    pub fn merge(&mut self, other: &AccessLedger) {
        for p in 0..3 {
            for t in 0..5 {
                self.loads[p][t] += other.loads[p][t];
                self.stores[p][t] += other.stores[p][t];
            }
        }
        self.reserve(other.peak_arena_bytes);
    }
}

/// Channel layout shared by both executors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelShape {
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    pub statics: usize,
    pub has_finer: bool,
    pub has_coarser: bool,
}

impl LevelShape {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// `[h ‖ static ‖ pooled finer ‖ upsampled coarser]`.
    pub fn input_channels(&self) -> usize {
        self.hidden * (1 + usize::from(self.has_finer) + usize::from(self.has_coarser)) + self.statics
    }

    /// Source pointers per region node.
    pub fn sources_per_node(&self) -> usize {
        1 + 4 * usize::from(self.has_finer) + usize::from(self.has_coarser)
    }
}

/// Level shapes for a pyramid of `levels` finest-first dims.
pub fn level_shapes(dims: &[(usize, usize)], hidden: usize, statics: usize) -> Vec<LevelShape> {
    let n = dims.len();
    dims.iter()
        .enumerate()
        .map(|(l, &(height, width))| LevelShape {
            height,
            width,
            hidden,
            statics,
            has_finer: l > 0,
            has_coarser: l + 1 < n,
        })
        .collect()
}

/// Charges of one unfused step at level `l`.
pub fn charge_dense_step(ledger: &mut AccessLedger, shapes: &[LevelShape], l: usize) {
    let s = &shapes[l];
    let (c, cx, n) = (s.hidden, s.input_channels(), s.pixels());
    let seg = segments(n);
    let ph = Phase::Loop;
    // concat [h ‖ static ‖ pool ‖ up]
    ledger.load(ph, Traffic::Hidden, c as u64 * seg);
    if s.has_finer {
        ledger.load(ph, Traffic::Hidden, c as u64 * segments(shapes[l - 1].pixels()));
    }
    if s.has_coarser {
        ledger.load(ph, Traffic::Hidden, c as u64 * segments(shapes[l + 1].pixels()));
    }
    ledger.load(ph, Traffic::Input, s.statics as u64 * seg);
    ledger.store(ph, Traffic::Intermediate, cx as u64 * seg);
    // update and reset gates
    ledger.load(ph, Traffic::Intermediate, 2 * cx as u64 * seg);
    ledger.store(ph, Traffic::Intermediate, 2 * c as u64 * seg);
    // [r ⊙ h ‖ x]
    ledger.load(ph, Traffic::Hidden, c as u64 * seg);
    // r and the x part of the concatenated input
    ledger.load(ph, Traffic::Intermediate, cx as u64 * seg);
    ledger.store(ph, Traffic::Intermediate, cx as u64 * seg);
    // candidate
    ledger.load(ph, Traffic::Intermediate, cx as u64 * seg);
    ledger.store(ph, Traffic::Intermediate, c as u64 * seg);
    // blend
    ledger.load(ph, Traffic::Hidden, c as u64 * seg);
    ledger.load(ph, Traffic::Intermediate, 2 * c as u64 * seg);
    ledger.store(ph, Traffic::Hidden, c as u64 * seg);
}

/// Working set of the unfused loop: h, h', static, the two concatenated
/// inputs and the three gate maps per level.
pub fn dense_peak_bytes(shapes: &[LevelShape]) -> u64 {
    shapes
        .iter()
        .map(|s| (s.pixels() * (5 * s.hidden + s.statics + 2 * s.input_channels()) * SCALAR_BYTES) as u64)
        .sum()
}

/// Closed-form dense ledger for `iterations` steps.
pub fn plan_dense(shapes: &[LevelShape], iterations: usize) -> AccessLedger {
    let mut ledger = AccessLedger::new();
    for _ in 0..iterations {
        for l in (0..shapes.len()).rev() {
            charge_dense_step(&mut ledger, shapes, l);
        }
    }
    ledger.reserve(dense_peak_bytes(shapes));
    ledger
}

/// Dense maps that stay resident plus everything the rulebook allocates.
pub fn sparse_peak_bytes(rb: &Rulebook, statics: usize) -> u64 {
    let dense: usize = rb
        .levels
        .iter()
        .map(|t| t.pixels() * (rb.hidden_channels + statics) * SCALAR_BYTES)
        .sum();
    let packed_inputs: usize = rb.levels.iter().map(|t| t.region.len() * statics * SCALAR_BYTES).sum();
    (dense + rb.arena_bytes + rb.halo_bytes() + packed_inputs + rb.table_bytes()) as u64
}

pub fn charge_pack(ledger: &mut AccessLedger, rb: &Rulebook, statics: usize, l: usize) {
    let t = &rb.levels[l];
    let c = rb.hidden_channels as u64;
    let hidden_px = t.inverse.iter().chain(&t.halo).map(|&p| p as usize);
    ledger.load(Phase::Pack, Traffic::Hidden, c * touched_segments(t.pixels(), hidden_px));
    let region_px = t.region.iter().map(|&p| p as usize);
    ledger.load(Phase::Pack, Traffic::Input, statics as u64 * touched_segments(t.pixels(), region_px));
    ledger.load(
        Phase::Pack,
        Traffic::Index,
        segments(t.active()) + segments(t.halo.len()) + segments(t.region.len()),
    );
    let cs = rb.hidden_channels;
    ledger.store(Phase::Pack, Traffic::Packed, segments(t.active() * cs) + segments(t.halo.len() * cs));
    ledger.store(Phase::Pack, Traffic::Input, segments(t.region.len() * statics));
}

pub fn charge_workspace(ledger: &mut AccessLedger) {
    ledger.store(Phase::Pack, Traffic::Packed, segments(WORKSPACE_BYTES / SCALAR_BYTES));
}

pub fn charge_sparse_step(ledger: &mut AccessLedger, rb: &Rulebook, statics: usize, l: usize) {
    let t = &rb.levels[l];
    let nl = rb.levels.len();
    let c = rb.hidden_channels;
    let r = t.region.len();
    let ph = Phase::Loop;
    let (finer, coarser) = (l > 0, l + 1 < nl);
    ledger.load(ph, Traffic::Packed, segments(r * c));
    if finer {
        ledger.load(ph, Traffic::Packed, segments(4 * r * c));
    }
    if coarser {
        ledger.load(ph, Traffic::Packed, segments(r * c));
    }
    ledger.load(ph, Traffic::Input, segments(r * statics));
    let per_node = 1 + 4 * usize::from(finer) + usize::from(coarser);
    ledger.load(ph, Traffic::Index, segments(9 * t.gated()) + segments(per_node * r));
    ledger.store(ph, Traffic::Packed, segments(t.active() * c));
}

pub fn charge_scatter(ledger: &mut AccessLedger, rb: &Rulebook, l: usize) {
    let t = &rb.levels[l];
    let c = rb.hidden_channels as u64;
    ledger.load(Phase::Scatter, Traffic::Packed, segments(t.active() * rb.hidden_channels));
    ledger.load(Phase::Scatter, Traffic::Index, segments(t.active()));
    let px = t.inverse.iter().map(|&p| p as usize);
    ledger.store(Phase::Scatter, Traffic::Hidden, c * touched_segments(t.pixels(), px));
}

/// Ledger the sparse executor produces for `rb` over `iterations` steps.
pub fn plan_sparse(rb: &Rulebook, statics: usize, iterations: usize) -> AccessLedger {
    let mut ledger = AccessLedger::new();
    charge_workspace(&mut ledger);
    for l in 0..rb.levels.len() {
        charge_pack(&mut ledger, rb, statics, l);
    }
    for _ in 0..iterations {
        for l in (0..rb.levels.len()).rev() {
            charge_sparse_step(&mut ledger, rb, statics, l);
        }
    }
    for l in 0..rb.levels.len() {
        charge_scatter(&mut ledger, rb, l);
    }
    ledger.reserve(sparse_peak_bytes(rb, statics));
    ledger
}

/// Modeled comparison of a sparse run against a dense one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LedgerReport {
    pub dense_requests: u64,
    pub sparse_requests: u64,
    pub reduction_req_pct: f64,
    pub reduction_peak_pct: f64,
    /// `dense / sparse` requests; bandwidth-bound proxy, not a measurement.
    pub modeled_speedup: f64,
    /// The sparse run issued no requests at all.
    pub sparse_empty: bool,
}

pub fn ledger_report(sparse: &AccessLedger, dense: &AccessLedger) -> LedgerReport {
    let (d, s) = (dense.total_requests(), sparse.total_requests());
    let pct = |a: f64, b: f64| if b == 0.0 { 0.0 } else { 100.0 * (1.0 - a / b) };
    let (reduction_req_pct, modeled_speedup) = if s == 0 {
        (if d == 0 { 0.0 } else { f64::INFINITY }, f64::INFINITY)
    } else {
        (pct(s as f64, d as f64), d as f64 / s as f64)
    };
    LedgerReport {
        dense_requests: d,
        sparse_requests: s,
        reduction_req_pct,
        reduction_peak_pct: pct(sparse.peak_arena_bytes as f64, dense.peak_arena_bytes as f64),
        modeled_speedup,
        sparse_empty: s == 0,
    }
}
