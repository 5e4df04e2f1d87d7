//! Resolution × sparsity × iteration sweeps of the two executors.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::exec::{dense_reference_loop, sparse_run, FlashParams};
use super::ledger::{ledger_report, level_shapes, plan_dense, plan_sparse, AccessLedger};
use super::mask::{coarsen_mask, select_active, ImportanceMap, SparsityMask};
use super::rulebook::{build_rulebook, Rulebook};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// Image sizes; the recurrent state runs at `1/downsample`.
    pub resolutions: Vec<(usize, usize)>,
    pub sparsities: Vec<f64>,
    pub iterations: Vec<usize>,
    pub levels: usize,
    pub downsample: usize,
    pub hidden: usize,
    pub statics: usize,
    pub threshold: f32,
    pub seed: u64,
    /// Run both executors instead of only evaluating the cost model.
    pub execute: bool,
    /// Also compare against the masked dense oracle.
    pub check: bool,
    /// Emit host wall-clock columns.
    pub timing: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            resolutions: vec![(320, 736), (640, 1472), (1280, 2944)],
            sparsities: vec![0.7],
            iterations: vec![4],
            levels: 2,
            downsample: 4,
            hidden: 8,
            statics: 8,
            threshold: 0.0,
            seed: 0,
            execute: false,
            check: false,
            timing: false,
        }
    }
}

impl BenchConfig {
    pub fn state_dims(&self, (h, w): (usize, usize)) -> Result<(usize, usize)> {
        let div = self.downsample * (1 << (self.levels.max(1) - 1));
        if self.downsample == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::InvalidArgument(format!(
                "{h}x{w} is not divisible by {div} ({}x downsampling, {} levels)",
                self.downsample, self.levels
            )));
        }
        Ok((h / self.downsample, w / self.downsample))
    }
}

/// Smooth random field with a fixed number of lattice cells, so the
/// pattern's geometry scales with the map.
pub fn bench_importance(height: usize, width: usize, seed: u64) -> ImportanceMap {
    let (gy, gx) = (4usize, 8usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lattice: Vec<f32> = (0..(gy + 1) * (gx + 1)).map(|_| rng.gen::<f32>()).collect();
    let at = |y: usize, x: usize| lattice[y * (gx + 1) + x];
    let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
    let mut scores = Vec::with_capacity(height * width);
    for y in 0..height {
        let v = (y as f32 + 0.5) / height as f32 * gy as f32;
        let y0 = (v.floor() as usize).min(gy - 1);
        let ty = smooth((v - y0 as f32).clamp(0.0, 1.0));
        for x in 0..width {
            let u = (x as f32 + 0.5) / width as f32 * gx as f32;
            let x0 = (u.floor() as usize).min(gx - 1);
            let tx = smooth((u - x0 as f32).clamp(0.0, 1.0));
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            scores.push(top * (1.0 - ty) + bot * ty);
        }
    }
    ImportanceMap {
        height,
        width,
        scores,
    }
}

/// Mask pyramid for one bench cell.
pub fn bench_mask(cfg: &BenchConfig, dims: (usize, usize), sparsity: f64) -> Result<SparsityMask> {
    let imp = bench_importance(dims.0, dims.1, cfg.seed);
    coarsen_mask(&select_active(&imp, cfg.threshold, sparsity)?, cfg.levels)
}

/// Random hidden and static maps for a pyramid whose finest level is `dims`.
pub fn random_state(
    dims: (usize, usize),
    levels: usize,
    hidden: usize,
    statics: usize,
    seed: u64,
) -> (Vec<Tensor<f32>>, Vec<Tensor<f32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hs = Vec::with_capacity(levels);
    let mut xs = Vec::with_capacity(levels);
    for l in 0..levels {
        let (h, w) = (dims.0 >> l, dims.1 >> l);
        hs.push(Tensor::uniform(vec![1, hidden, h, w], 1.0, &mut rng));
        xs.push(Tensor::uniform(vec![1, statics, h, w], 1.0, &mut rng));
    }
    (hs, xs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub height: usize,
    pub width: usize,
    pub levels: usize,
    pub sparsity: f64,
    pub iterations: usize,
    pub dense_requests: u64,
    pub sparse_requests: u64,
    pub dense_peak_bytes: u64,
    pub sparse_peak_bytes: u64,
    pub reduction_req_pct: f64,
    pub reduction_peak_pct: f64,
    pub modeled_speedup: f64,
    /// Sparse result against the unmasked dense loop.
    pub max_abs_diff_dense: Option<f64>,
    /// Sparse result against the masked dense oracle.
    pub max_abs_diff_oracle: Option<f64>,
    pub wall_dense_ms: Option<f64>,
    pub wall_sparse_ms: Option<f64>,
}

fn max_diff(a: &[Tensor<f32>], b: &[Tensor<f32>]) -> Result<f64> {
    a.iter().zip(b).try_fold(0.0f64, |m, (x, y)| Ok(m.max(x.max_abs_diff(y)?)))
}

/// Largest difference on active pixels, or an error if any inactive pixel
/// differs at all.
pub fn oracle_diff(sparse: &[Tensor<f32>], oracle: &[Tensor<f32>], mask: &SparsityMask) -> Result<f64> {
    let mut worst = 0.0f64;
    for (l, (s, o)) in sparse.iter().zip(oracle).enumerate() {
        let active = &mask.levels[l].active;
        let n = active.len();
        for (i, (a, b)) in s.data().iter().zip(o.data()).enumerate() {
            if active[i % n] {
                worst = worst.max((a - b).abs() as f64);
            } else if a.to_bits() != b.to_bits() {
                return Err(Error::InvalidArgument(format!(
                    "inactive element {i} of level {l} changed: {a} vs {b}"
                )));
            }
        }
    }
    Ok(worst)
}

/// One grid cell. Ledgers come from the cost model; with `execute` they
/// are also produced by the executors and must agree with it.
pub fn bench_cell(
    cfg: &BenchConfig,
    params: &FlashParams,
    resolution: (usize, usize),
    sparsity: f64,
    iterations: usize,
) -> Result<BenchRow> {
    let dims = cfg.state_dims(resolution)?;
    let mask = bench_mask(cfg, dims, sparsity)?;
    let rb = build_rulebook(&mask, cfg.hidden)?;
    let shapes = level_shapes(&rb.dims(), cfg.hidden, cfg.statics);
    let mut dense = plan_dense(&shapes, iterations);
    let mut sparse = plan_sparse(&rb, cfg.statics, iterations);
    let (mut diff_dense, mut diff_oracle, mut wall_d, mut wall_s) = (None, None, None, None);
    if cfg.execute {
        let (hs, xs) = random_state(dims, cfg.levels, cfg.hidden, cfg.statics, cfg.seed ^ 0x5eed);
        let t0 = Instant::now();
        let (dense_out, dense_run) = dense_reference_loop(&hs, &xs, params, iterations, None)?;
        wall_d = Some(t0.elapsed().as_secs_f64() * 1e3);
        let t1 = Instant::now();
        let (sparse_out, sparse_ledger) = sparse_run(&rb, &hs, &xs, params, iterations)?;
        wall_s = Some(t1.elapsed().as_secs_f64() * 1e3);
        check_ledgers(&dense_run, &dense, "dense")?;
        check_ledgers(&sparse_ledger, &sparse, "sparse")?;
        dense = dense_run;
        sparse = sparse_ledger;
        diff_dense = Some(max_diff(&sparse_out, &dense_out)?);
        if cfg.check {
            let (oracle, _) = dense_reference_loop(&hs, &xs, params, iterations, Some(&mask))?;
            let d = oracle_diff(&sparse_out, &oracle, &mask)?;
            if d > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "sparse loop deviates from the masked oracle by {d:e}"
                )));
            }
            diff_oracle = Some(d);
        }
    }
    let rep = ledger_report(&sparse, &dense);
    Ok(BenchRow {
        height: resolution.0,
        width: resolution.1,
        levels: cfg.levels,
        sparsity,
        iterations,
        dense_requests: rep.dense_requests,
        sparse_requests: rep.sparse_requests,
        dense_peak_bytes: dense.peak_arena_bytes,
        sparse_peak_bytes: sparse.peak_arena_bytes,
        reduction_req_pct: rep.reduction_req_pct,
        reduction_peak_pct: rep.reduction_peak_pct,
        modeled_speedup: rep.modeled_speedup,
        max_abs_diff_dense: diff_dense,
        max_abs_diff_oracle: diff_oracle,
        wall_dense_ms: cfg.timing.then_some(wall_d).flatten(),
        wall_sparse_ms: cfg.timing.then_some(wall_s).flatten(),
    })
}

fn check_ledgers(run: &AccessLedger, plan: &AccessLedger, what: &str) -> Result<()> {
    if run != plan {
        return Err(Error::InvalidArgument(format!(
            "{what} executor ledger differs from the cost model ({} vs {} requests)",
            run.total_requests(),
            plan.total_requests()
        )));
    }
    Ok(())
}

/// Every cell of the grid, resolutions outermost.
pub fn bench_grid(cfg: &BenchConfig, params: &FlashParams) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &res in &cfg.resolutions {
        for &s in &cfg.sparsities {
            for &t in &cfg.iterations {
                rows.push(bench_cell(cfg, params, res, s, t)?);
            }
        }
    }
    Ok(rows)
}

/// Convenience for callers that only need the rulebook of a cell.
pub fn bench_rulebook(cfg: &BenchConfig, resolution: (usize, usize), sparsity: f64) -> Result<Rulebook> {
    let dims = cfg.state_dims(resolution)?;
    build_rulebook(&bench_mask(cfg, dims, sparsity)?, cfg.hidden)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_default()
}

pub fn bench_csv(rows: &[BenchRow], timing: bool) -> String {
    let mut out = String::from(
        "height,width,levels,sparsity,T,dense_requests,sparse_requests,dense_peak_bytes,sparse_peak_bytes,\
reduction_req_pct,reduction_peak_pct,modeled_speedup,max_abs_diff_dense,max_abs_diff_oracle",
    );
    if timing {
        out.push_str(",wall_dense_ms,wall_sparse_ms");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{:.4},{:.4},{:.4},{},{}",
            r.height,
            r.width,
            r.levels,
            r.sparsity,
            r.iterations,
            r.dense_requests,
            r.sparse_requests,
            r.dense_peak_bytes,
            r.sparse_peak_bytes,
            r.reduction_req_pct,
            r.reduction_peak_pct,
            r.modeled_speedup,
            opt(r.max_abs_diff_dense),
            opt(r.max_abs_diff_oracle),
        );
        if timing {
            let _ = write!(out, ",{},{}", opt(r.wall_dense_ms), opt(r.wall_sparse_ms));
        }
        out.push('\n');
    }
    out
}
