use flashpip_core::model::TrajectoryRecord;
use flashpip_core::tensor::Tensor;
use flashpip_core::trace::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn map(flags: Vec<bool>) -> UpdateFlagMap {
    let n = flags.len();
    UpdateFlagMap::new(vec![1, 1, 1, n], flags, DEFAULT_EPSILON).unwrap()
}

#[test]
fn flags_basic_cases() {
    let a = Tensor::from_fn(vec![1, 1, 3, 3], |i| i as f32);
    assert_eq!(update_flags(&a, &a, 1e-3).unwrap().count(), 0);
    let mut b = a.clone();
    b.data_mut()[4] += 2e-3;
    let f = update_flags(&a, &b, 1e-3).unwrap();
    assert_eq!(f.count(), 1);
    assert!(f.flags[4]);
    assert!(update_flags(&a, &Tensor::zeros(vec![1, 1, 3, 4]), 1e-3).is_err());
    assert!(update_flags(&a, &b, 0.0).is_err());
}

#[test]
fn flags_match_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = Tensor::<f64>::uniform(vec![2, 1, 4, 5], 1.0, &mut rng);
    let b = Tensor::<f64>::uniform(vec![2, 1, 4, 5], 1.0, &mut rng);
    let f = update_flags(&a, &b, 0.3).unwrap();
    for i in 0..a.numel() {
        assert_eq!(f.flags[i], (b.data()[i] - a.data()[i]).abs() > 0.3);
    }
}

#[test]
fn ratio_cases() {
    let a = map(vec![true, false, true, false]);
    let c = map(vec![false, true, false, true]);
    assert_eq!(hit_ratio(&a, &a).unwrap(), 1.0);
    assert_eq!(hit_ratio(&a, &c).unwrap(), 0.0);
    let mut x = vec![false; 100];
    let mut y = vec![false; 100];
    x[3] = true;
    y[3] = true;
    y[50] = true;
    assert!((hit_ratio(&map(x.clone()), &map(y.clone())).unwrap() - 0.99).abs() < 1e-12);
    assert!((iou(&map(x), &map(y)).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(iou(&map(vec![false; 4]), &map(vec![false; 4])).unwrap(), 1.0);
    assert!(hit_ratio(&a, &map(vec![true; 5])).is_err());
}

#[test]
fn fraction_cases() {
    assert_eq!(updated_fraction(&map(vec![false; 10])), 0.0);
    let mut v = vec![false; 100];
    v[7] = true;
    assert_eq!(updated_fraction(&map(v)), 0.01);
}

#[test]
fn counting_oracles_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let n = rng.gen_range(1..200);
        let a: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let b: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let agree = (0..n).filter(|&i| a[i] == b[i]).count();
        let (ma, mb) = (map(a.clone()), map(b));
        assert_eq!(hit_ratio(&ma, &mb).unwrap(), agree as f64 / n as f64);
        assert_eq!(hit_ratio(&ma, &mb).unwrap(), hit_ratio(&mb, &ma).unwrap());
        let ones = a.iter().filter(|&&f| f).count();
        assert_eq!(updated_fraction(&ma), ones as f64 / n as f64);
    }
}

fn constant_record(t: usize) -> TrajectoryRecord<Tensor<f32>> {
    let d = Tensor::full(vec![1, 1, 2, 3], 1.5f32);
    TrajectoryRecord {
        hidden_states: vec![d.clone(); t + 1],
        deltas: vec![Tensor::zeros(vec![1, 1, 2, 3]); t],
        disparities: vec![d; t + 1],
    }
}

#[test]
fn constant_trajectory() {
    let r = trajectory_report(&constant_record(4), DEFAULT_EPSILON).unwrap();
    assert_eq!(r.updated_fraction, vec![0.0; 4]);
    assert_eq!(r.hit_ratio, vec![1.0; 3]);
    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(csv.lines().nth(1).unwrap(), "1,0.000000,,");
    assert!(trajectory_report(&constant_record(1), DEFAULT_EPSILON).is_err());
}

#[test]
fn alternating_trajectory() {
    // full update, none, full update, none
    let lo = Tensor::zeros(vec![1, 1, 2, 2]);
    let hi = Tensor::full(vec![1, 1, 2, 2], 1.0f32);
    let seq = vec![lo.clone(), hi.clone(), hi.clone(), lo.clone(), lo];
    let r = trace_estimates(&seq, DEFAULT_EPSILON).unwrap();
    assert_eq!(r.updated_fraction, vec![1.0, 0.0, 1.0, 0.0]);
    assert_eq!(r.hit_ratio, vec![0.0; 3]);
}

#[test]
fn pgm_layout() {
    let m = UpdateFlagMap::new(vec![1, 1, 2, 2], vec![true, false, false, true], 1e-3).unwrap();
    let mut want = b"P5\n2 2\n255\n".to_vec();
    want.extend([255, 0, 0, 255]);
    assert_eq!(m.to_pgm(), want);
}
