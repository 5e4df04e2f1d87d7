use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use flashpip_core::data::{
    load_checkpoint, model_from_checkpoint, model_to_checkpoint, save_checkpoint, stack, write_pfm, DatasetParams,
    Manifest, StereoSample,
};
use flashpip_core::flash::{bench_csv, bench_grid, BenchConfig, FlashParams};
use flashpip_core::model::{InitMode, RefineConfig, RefineModel};
use flashpip_core::pip::{prune_progressive, Aggregate, FinalTarget, LossOptions, PruneSchedule, StageConfig};
use flashpip_core::trace::trajectory_report;
use flashpip_core::train::{epe_by_iteration, train_baseline, TrainConfig};

use crate::config::{parse_resolution, Command, RunConfig};
use crate::error::{CliError, Result};

/// Files a subcommand wrote, for callers and tests.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

impl Outcome {
    fn write(&mut self, path: PathBuf, bytes: impl AsRef<[u8]>) -> Result<()> {
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn note(&mut self, line: String) {
        self.summary.push(line);
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Creates the output directory and echoes the effective config into it.
pub fn prepare_out(cfg: &RunConfig, out: &mut Outcome) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    out.write(dir.join(format!("{}.config.txt", cfg.command)), cfg.to_text())?;
    Ok(dir)
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let dir = prepare_out(cfg, &mut out)?;
    match cfg.command {
        Command::Gen => gen(cfg, &dir, &mut out)?,
        Command::Train => train(cfg, &dir, &mut out)?,
        Command::Prune => prune(cfg, &dir, &mut out)?,
        Command::Bench => bench(cfg, &dir, &mut out)?,
        Command::Analyze => analyze(cfg, &dir, &mut out)?,
    }
    Ok(out)
}

fn gen(cfg: &RunConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let params = DatasetParams {
        seed: cfg.get("seed")?,
        height: cfg.get("height")?,
        width: cfg.get("width")?,
        d_max: cfg.get("d_max")?,
        layers: cfg.get("layers")?,
        train: cfg.get("train")?,
        heldout: cfg.get("heldout")?,
    };
    let manifest = Manifest::new(params);
    if manifest.is_empty() {
        return Err(CliError::Config("dataset has no samples".into()));
    }
    // render one sample up front so bad geometry fails before anything is written
    let probe = manifest.train.first().or(manifest.heldout.first()).copied().unwrap_or(0);
    let p = &manifest.params;
    flashpip_core::data::generate_scene(probe, p.height, p.width, p.d_max, p.layers)?;
    out.write(dir.join("manifest.txt"), manifest.to_text())?;
    let dumps: usize = cfg.get("pfm")?;
    if dumps > 0 {
        let pdir = dir.join("pfm");
        fs::create_dir_all(&pdir).map_err(|e| io_err(&pdir, e))?;
        for (i, s) in manifest.heldout_samples()?.iter().take(dumps).enumerate() {
            for (name, t) in [("left", &s.left), ("right", &s.right), ("disparity", &s.gt_disparity)] {
                let path = pdir.join(format!("heldout_{i:04}_{name}.pfm"));
                write_pfm(&path, t)?;
                out.files.push(path);
            }
        }
    }
    out.note(format!(
        "manifest: {} train + {} held-out samples",
        manifest.train.len(),
        manifest.heldout.len()
    ));
    Ok(())
}

fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let path = cfg.path_or("manifest", "manifest.txt");
    if !path.exists() {
        return Err(CliError::Data(format!(
            "dataset manifest {} not found (run `flashpip gen` first)",
            path.display()
        )));
    }
    Ok(Manifest::load(&path)?)
}

fn load_model(cfg: &RunConfig) -> Result<RefineModel<f32>> {
    let path = cfg.path_or("checkpoint", "baseline.ckpt");
    if !path.exists() {
        return Err(CliError::Data(format!("checkpoint {} not found", path.display())));
    }
    Ok(model_from_checkpoint(&load_checkpoint(&path)?)?)
}

fn nonempty(samples: Vec<StereoSample>, what: &str) -> Result<Vec<StereoSample>> {
    if samples.is_empty() {
        return Err(CliError::Data(format!("dataset has no {what} samples")));
    }
    Ok(samples)
}

fn log_step(every: usize, step: usize, total: usize, what: &str, value: f64) {
    if every > 0 && ((step + 1) % every == 0 || step + 1 == total) {
        eprintln!("{what} step {}/{total}: loss {value:.6}", step + 1);
    }
}

fn train(cfg: &RunConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let seed: u64 = cfg.get("seed")?;
    let model_cfg = RefineConfig {
        feature_channels: cfg.get("feature_channels")?,
        hidden_channels: cfg.get("hidden_channels")?,
        kernel: 3,
        d_max: manifest.params.d_max,
        radius: cfg.get("radius")?,
        iterations: cfg.get("iterations")?,
        init: InitMode::parse(cfg.raw("init")).map_err(|e| CliError::Config(e.to_string()))?,
    };
    model_cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let tcfg = TrainConfig {
        steps: cfg.get("steps")?,
        batch: cfg.get("batch")?,
        lr: cfg.get("lr")?,
        gamma: cfg.get("gamma")?,
        seed: seed.wrapping_add(1),
    };
    let every: usize = cfg.get("log_every")?;
    let train = nonempty(manifest.train_samples()?, "training")?;
    let heldout = nonempty(manifest.heldout_samples()?, "held-out")?;
    let mut model = RefineModel::<f32>::new(model_cfg, seed)?;
    let losses = train_baseline(&mut model, &train, &tcfg, |i, l| log_step(every, i, tcfg.steps, "train", l))?;
    let ckpt = model_to_checkpoint(
        &model,
        &[("seed", seed.to_string()), ("steps", tcfg.steps.to_string()), ("stage", "0".into())],
    );
    let path = dir.join("baseline.ckpt");
    save_checkpoint(&path, &ckpt)?;
    out.files.push(path);
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", i + 1);
    }
    out.write(dir.join("train_loss.csv"), csv)?;
    let iters = model.config.iterations;
    let series = epe_by_iteration(&model, &heldout, iters)?;
    let mut csv = String::from("iteration,heldout_epe\n");
    for (t, e) in series.iter().enumerate() {
        let _ = writeln!(csv, "{t},{e}");
    }
    out.write(dir.join("train_eval.csv"), csv)?;
    out.note(format!("held-out EPE after {iters} iterations: {:.4}", series[iters]));
    Ok(())
}

fn loss_options(cfg: &RunConfig) -> Result<LossOptions> {
    let aggregate = match cfg.raw("aggregate") {
        "estimates" => Aggregate::Estimates,
        "deltas" => Aggregate::Deltas,
        v => return Err(CliError::Config(format!("`aggregate` must be estimates or deltas, got `{v}`"))),
    };
    let final_target = match cfg.raw("final_target") {
        "accumulated" => FinalTarget::Accumulated,
        "delta" => FinalTarget::Delta,
        v => {
            return Err(CliError::Config(format!(
                "`final_target` must be accumulated or delta, got `{v}`"
            )))
        }
    };
    Ok(LossOptions {
        teacher_forcing: cfg.flag("teacher_forcing")?,
        final_target,
        aggregate,
    })
}

fn prune(cfg: &RunConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    let baseline = load_model(cfg)?;
    let seed: u64 = cfg.get("seed")?;
    let schedule = PruneSchedule {
        t0: baseline.config.iterations,
        ratio: cfg.get("ratio")?,
        stages: cfg.get("stages")?,
        steps_per_stage: cfg.get("steps")?,
        lr: cfg.get("lr")?,
    };
    schedule.validate()?;
    let stage_cfg = StageConfig {
        steps: schedule.steps_per_stage,
        lr: schedule.lr,
        batch: cfg.get("batch")?,
        seed: seed.wrapping_add(2),
        unfreeze_head: cfg.flag("unfreeze_head")?,
        loss: loss_options(cfg)?,
    };
    let every: usize = cfg.get("log_every")?;
    let train = nonempty(manifest.train_samples()?, "training")?;
    let heldout = nonempty(manifest.heldout_samples()?, "held-out")?;
    let steps = schedule.steps_per_stage;
    let stages = prune_progressive(&baseline, &schedule, &train, &heldout, &stage_cfg, |k, i, r| {
        log_step(every, i, steps, &format!("prune stage {}", k + 1), r.total)
    })?;
    let mut summary = String::from("stage,iterations,pruned_epe,truncated_epe\n");
    for (k, st) in stages.iter().enumerate() {
        let stage = k + 1;
        let ckpt = model_to_checkpoint(
            &st.model,
            &[("seed", seed.to_string()), ("steps", steps.to_string()), ("stage", stage.to_string())],
        );
        let path = dir.join(format!("stage{stage}.ckpt"));
        save_checkpoint(&path, &ckpt)?;
        out.files.push(path);
        let mut csv = String::from("step,loss_cum,loss_final,loss_hid,total\n");
        for (i, r) in st.reports.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{},{},{}", i + 1, r.loss_cum, r.loss_final, r.loss_hid, r.total);
        }
        out.write(dir.join(format!("stage{stage}_loss.csv")), csv)?;
        let _ = writeln!(summary, "{stage},{},{},{}", st.iterations, st.epe_heldout, st.epe_truncated);
        out.note(format!(
            "stage {stage}: {} iterations, pruned EPE {:.4}, truncated EPE {:.4}",
            st.iterations, st.epe_heldout, st.epe_truncated
        ));
    }
    out.write(dir.join("prune_summary.csv"), summary)?;
    Ok(())
}

fn bench(cfg: &RunConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let levels: usize = cfg.get("levels")?;
    let seed: u64 = cfg.get("seed")?;
    let params = if cfg.flag("random")? {
        FlashParams::random(levels, cfg.get("hidden")?, cfg.get("statics")?, seed)?
    } else {
        let model = load_model(cfg)?;
        FlashParams::from_gru(&model.weights.gru, model.config.hidden_channels, levels)?
    };
    let check = cfg.flag("check")?;
    let bcfg = BenchConfig {
        resolutions: cfg
            .list::<String>("resolutions")?
            .iter()
            .map(|s| parse_resolution(s))
            .collect::<Result<_>>()?,
        sparsities: cfg.list("sparsities")?,
        iterations: cfg.list("bench_iterations")?,
        levels,
        downsample: cfg.get("downsample")?,
        hidden: params.hidden,
        statics: params.statics,
        threshold: cfg.get("threshold")?,
        seed,
        execute: check || cfg.flag("execute")?,
        check,
        timing: cfg.flag("timing")?,
    };
    if bcfg.iterations.contains(&0) {
        return Err(CliError::Config("`bench_iterations` entries must be at least 1".into()));
    }
    let rows = bench_grid(&bcfg, &params)?;
    out.write(dir.join("bench.csv"), bench_csv(&rows, bcfg.timing))?;
    for r in &rows {
        out.note(format!(
            "{}x{} s={} T={}: requests -{:.1}%, peak -{:.1}%",
            r.height, r.width, r.sparsity, r.iterations, r.reduction_req_pct, r.reduction_peak_pct
        ));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn analyze(cfg: &RunConfig, dir: &Path, out: &mut Outcome) -> Result<()> {
    let iters: usize = cfg.get("iterations")?;
    if iters < 2 {
        return Err(CliError::Config(format!("trace analysis needs iterations >= 2, got {iters}")));
    }
    let eps: f64 = cfg.get("epsilon")?;
    let n: usize = cfg.get("samples")?;
    let pgm = cfg.flag("pgm")?;
    let manifest = load_manifest(cfg)?;
    let model = load_model(cfg)?;
    let heldout = nonempty(manifest.heldout_samples()?, "held-out")?;
    let chosen = &heldout[..n.min(heldout.len())];
    if chosen.is_empty() {
        return Err(CliError::Config("`samples` must be at least 1".into()));
    }
    let mut agg = String::from("sample,seed,fraction_first,fraction_last,mean_fraction,mean_hit_ratio,mean_iou\n");
    let mut cols: [Vec<f64>; 5] = Default::default();
    for (i, s) in chosen.iter().enumerate() {
        let [l, r, _] = stack(&[s])?;
        let rec = model.trajectory(&l, &r, iters)?;
        let rep = trajectory_report(&rec, eps)?;
        out.write(dir.join(format!("trace_{i:04}.csv")), rep.to_csv())?;
        if pgm {
            let fdir = dir.join("flags");
            fs::create_dir_all(&fdir).map_err(|e| io_err(&fdir, e))?;
            for (t, f) in rep.flags.iter().enumerate() {
                out.write(fdir.join(format!("sample{i:04}_t{}.pgm", t + 1)), f.to_pgm())?;
            }
        }
        let f = &rep.updated_fraction;
        let row = [f[0], f[f.len() - 1], mean(f), mean(&rep.hit_ratio), mean(&rep.iou)];
        let _ = writeln!(
            agg,
            "{i},{},{},{},{},{},{}",
            s.seed, row[0], row[1], row[2], row[3], row[4]
        );
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(v);
        }
    }
    let m: Vec<f64> = cols.iter().map(|c| mean(c)).collect();
    let _ = writeln!(agg, "mean,,{},{},{},{},{}", m[0], m[1], m[2], m[3], m[4]);
    out.write(dir.join("trace_aggregate.csv"), agg)?;
    out.note(format!(
        "updated fraction: {:.4} at t=1, {:.4} at t={iters}; mean hit ratio {:.4}",
        m[0], m[1], m[3]
    ));
    Ok(())
}
