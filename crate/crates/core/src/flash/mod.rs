//! Structured-sparse execution of a multi-level ConvGRU.
//!
//! An importance map picks the pixels worth updating, a static rulebook
//! packs them (and their frozen neighbours) into contiguous buffers, and the
//! fused loop runs every recurrent step on those buffers before writing the
//! result back once. Both executors report their modeled global-memory
//! traffic in an [`AccessLedger`].

mod bench;
mod exec;
mod ledger;
mod mask;
mod rulebook;

pub use bench::{
    bench_cell, bench_csv, bench_grid, bench_importance, bench_mask, bench_rulebook, oracle_diff, random_state,
    BenchConfig, BenchRow,
};
pub use exec::{
    dense_reference_loop, fused_sparse_loop, hidden_global_requests, loop_requests, pack, pack_level, pool2,
    scatter, sparse_run, unpack_level, up2, FlashParams, PackedState,
};
pub use ledger::{
    dense_peak_bytes, ledger_report, level_shapes, plan_dense, plan_sparse, segments, sparse_peak_bytes,
    touched_segments, AccessLedger, LedgerReport, LevelShape, Phase, Traffic, SEGMENT_SCALARS,
};
pub use mask::{coarsen_mask, importance_proxy, select_active, ImportanceMap, LevelMask, SparsityMask};
pub use rulebook::{build_rulebook, LevelTable, Rulebook, Src, Tap, SCALAR_BYTES, WORKSPACE_BYTES};
