use flashpip_core::data::{DatasetParams, Manifest, StereoSample};
use flashpip_core::model::{is_gru_param, RefineConfig, RefineModel};
use flashpip_core::pip::{
    block_aggregate, loss_cum, loss_final, loss_hid, pip_loss, prune_progressive, prune_stage, teacher_rollout,
    LossOptions, PruneSchedule, StageConfig,
};
use flashpip_core::tensor::{Tape, Tensor, Var};
use flashpip_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalars(tape: &Tape<f64>, v: &[f64]) -> Vec<Var<f64>> {
    v.iter()
        .map(|&x| tape.constant(Tensor::new(vec![1], vec![x]).unwrap()))
        .collect()
}

fn item(v: &Var<f64>) -> f64 {
    v.value().item().unwrap()
}

fn rand_vars(tape: &Tape<f64>, n: usize, shape: &[usize], rng: &mut ChaCha8Rng) -> Vec<Var<f64>> {
    (0..n)
        .map(|_| tape.constant(Tensor::uniform(shape.to_vec(), 1.0, rng)))
        .collect()
}

/// `Σ(a-b)² / batch` by hand.
fn sq(a: &Var<f64>, b: &Var<f64>) -> f64 {
    let s: f64 = a.value().data().iter().zip(b.value().data()).map(|(x, y)| (x - y).powi(2)).sum();
    s / a.shape()[0] as f64
}

#[test]
fn block_aggregate_examples() {
    let tape = Tape::inference();
    let d = scalars(&tape, &[1.0, 3.0, 5.0, 7.0]);
    let b: Vec<f64> = block_aggregate(&tape, &d, 2).unwrap().iter().map(item).collect();
    assert_eq!(b, vec![2.0, 6.0]);
    let same: Vec<f64> = block_aggregate(&tape, &d, 1).unwrap().iter().map(item).collect();
    assert_eq!(same, vec![1.0, 3.0, 5.0, 7.0]);
    assert!(matches!(block_aggregate(&tape, &d, 3), Err(Error::Schedule(_))));
    assert!(block_aggregate(&tape, &d, 0).is_err());
}

#[test]
fn block_aggregate_matches_window_oracle() {
    let tape = Tape::inference();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = rand_vars(&tape, 8, &[2, 1, 3, 3], &mut rng);
    let got = block_aggregate(&tape, &d, 2).unwrap();
    for (s, blk) in got.iter().enumerate() {
        for i in 0..18 {
            let want = (d[2 * s].value().data()[i] + d[2 * s + 1].value().data()[i]) / 2.0;
            assert!((blk.value().data()[i] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn loss_cum_examples_and_oracle() {
    let tape = Tape::inference();
    let s = scalars(&tape, &[1.0, 1.0]);
    let t = scalars(&tape, &[1.0, 2.0]);
    assert_eq!(item(&loss_cum(&tape, &s, &t).unwrap()), 1.0);
    assert_eq!(item(&loss_cum(&tape, &t, &t).unwrap()), 0.0);
    assert!(loss_cum(&tape, &s, &t[..1]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (rand_vars(&tape, 4, &[2, 1, 2, 3], &mut rng), rand_vars(&tape, 4, &[2, 1, 2, 3], &mut rng));
    let mut want = 0.0;
    let (mut pa, mut pb) = (vec![0.0; 12], vec![0.0; 12]);
    for k in 0..4 {
        for i in 0..12 {
            pa[i] += a[k].value().data()[i];
            pb[i] += b[k].value().data()[i];
        }
        want += pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 2.0;
    }
    assert!((item(&loss_cum(&tape, &a, &b).unwrap()) - want).abs() < 1e-12);
}

#[test]
fn loss_final_and_hid_examples() {
    let tape = Tape::inference();
    let v = scalars(&tape, &[2.0, 5.0, 1.0, 4.0]);
    assert_eq!(item(&loss_final(&tape, &v[0], &v[1]).unwrap()), 9.0);
    assert_eq!(item(&loss_final(&tape, &v[0], &v[0]).unwrap()), 0.0);
    // teacher z_0, z_1 with S = 1, r = 1
    assert_eq!(item(&loss_hid(&tape, &v[2..3], &[v[0].clone(), v[3].clone()], 1).unwrap()), 9.0);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let teacher = rand_vars(&tape, 9, &[2, 3, 2, 2], &mut rng);
    let copied: Vec<_> = [2, 4, 6, 8].iter().map(|&i| teacher[i].clone()).collect();
    assert_eq!(item(&loss_hid(&tape, &copied, &teacher, 2).unwrap()), 0.0);
    let student = rand_vars(&tape, 4, &[2, 3, 2, 2], &mut rng);
    let want: f64 = (0..4).map(|s| sq(&student[s], &teacher[2 * (s + 1)])).sum();
    assert!((item(&loss_hid(&tape, &student, &teacher, 2).unwrap()) - want).abs() < 1e-12);
    assert!(loss_hid(&tape, &student, &teacher[..8], 2).is_err());
    let (x, y) = (&student[0], &student[1]);
    assert!((item(&loss_final(&tape, x, y).unwrap()) - sq(x, y)).abs() < 1e-12);
}

#[test]
fn schedule_validation() {
    let s = PruneSchedule {
        t0: 8,
        ratio: 2,
        stages: 3,
        steps_per_stage: 1,
        lr: 1e-3,
    };
    assert_eq!(s.stage_iterations().unwrap(), vec![4, 2, 1]);
    for bad in [
        PruneSchedule { stages: 4, ..s.clone() },
        PruneSchedule { ratio: 1, ..s.clone() },
        PruneSchedule { t0: 6, ..s.clone() },
        PruneSchedule { steps_per_stage: 0, ..s.clone() },
        PruneSchedule { stages: 0, ..s.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Schedule(_))), "{bad:?}");
    }
}

fn tiny_model(seed: u64) -> RefineModel<f32> {
    let cfg = RefineConfig {
        feature_channels: 4,
        hidden_channels: 4,
        d_max: 4,
        radius: 2,
        iterations: 8,
        ..RefineConfig::default()
    };
    RefineModel::new(cfg, seed).unwrap()
}

fn samples(n: usize) -> Vec<StereoSample> {
    Manifest::new(DatasetParams {
        seed: 3,
        height: 32,
        width: 32,
        d_max: 4,
        layers: 2,
        train: n,
        heldout: 0,
    })
    .train_samples()
    .unwrap()
}

fn stage_cfg(steps: usize) -> StageConfig {
    StageConfig {
        steps,
        lr: 1e-3,
        batch: 2,
        seed: 5,
        unfreeze_head: false,
        loss: LossOptions::estimates(),
    }
}

#[test]
fn stage_freezes_everything_but_the_gru() {
    let teacher = tiny_model(1);
    let train = samples(4);
    assert!(matches!(prune_stage(&teacher, &train, 2, &stage_cfg(0), |_, _| {}), Err(Error::Schedule(_))));
    assert!(prune_stage(&teacher, &train, 3, &stage_cfg(1), |_, _| {}).is_err());
    let mut seen = 0;
    let res = prune_stage(&teacher, &train, 2, &stage_cfg(1), |_, _| seen += 1).unwrap();
    assert_eq!(seen, 1);
    assert_eq!(res.model.config.iterations, 4);
    let mut gru_moved = false;
    for ((name, a), (_, b)) in teacher.weights.entries().into_iter().zip(res.model.weights.entries()) {
        if is_gru_param(&name) {
            gru_moved |= a.data() != b.data();
        } else {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b), "{name} changed");
        }
    }
    assert!(gru_moved);
}

#[test]
fn loss_total_is_sum_of_terms() {
    let teacher: RefineModel<f64> = tiny_model(2).cast();
    let train = samples(2);
    let [l, r, _] = flashpip_core::data::stack(&[&train[0], &train[1]]).unwrap();
    let (prep, rec) = teacher_rollout(&teacher, &l.cast(), &r.cast()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let student = RefineModel {
        config: RefineConfig {
            iterations: 2,
            ..teacher.config.clone()
        },
        weights: teacher.weights.map(|_, t| {
            Tensor::from_fn(t.shape().to_vec(), |i| t.data()[i] + rng.gen_range(-0.05..0.05))
        }),
    };
    for opts in [LossOptions::default(), LossOptions::estimates()] {
        let tape = Tape::inference();
        let w = student.bind(&tape);
        let rep = pip_loss(&tape, &w, &student.config, &prep, &rec, &opts).unwrap().report().unwrap();
        let sum = rep.loss_cum + rep.loss_final + rep.loss_hid;
        assert!((rep.total - sum).abs() <= 4.0 * f64::EPSILON * sum.abs(), "{rep:?}");
        assert!(rep.loss_cum > 0.0 && rep.loss_final > 0.0 && rep.loss_hid > 0.0);
    }
    let bad = RefineConfig {
        iterations: 3,
        ..student.config.clone()
    };
    let tape = Tape::inference();
    assert!(pip_loss(&tape, &student.bind(&tape), &bad, &prep, &rec, &LossOptions::default()).is_err());
}

#[test]
fn progressive_schedule_runs_each_stage() {
    let base = tiny_model(3);
    let train = samples(4);
    let held = samples(2);
    let sched = PruneSchedule {
        t0: 8,
        ratio: 2,
        stages: 3,
        steps_per_stage: 1,
        lr: 1e-3,
    };
    let out = prune_progressive(&base, &sched, &train, &held, &stage_cfg(99), |_, _, _| {}).unwrap();
    let iters: Vec<usize> = out.iter().map(|o| o.model.config.iterations).collect();
    assert_eq!(iters, vec![4, 2, 1]);
    assert!(out.iter().all(|o| o.reports.len() == 1 && o.epe_heldout.is_finite()));

    let one = PruneSchedule { stages: 1, ..sched.clone() };
    let prog = prune_progressive(&base, &one, &train, &held, &stage_cfg(99), |_, _, _| {}).unwrap();
    let single = prune_stage(&base, &train, 2, &stage_cfg(1), |_, _| {}).unwrap();
    assert_eq!(prog[0].model, single.model);
    assert_eq!(prog[0].reports, single.reports);

    let wrong = PruneSchedule { t0: 4, stages: 2, ..sched };
    assert!(prune_progressive(&base, &wrong, &train, &held, &stage_cfg(1), |_, _, _| {}).is_err());
}
