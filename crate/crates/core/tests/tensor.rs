use flashpip_core::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), 1.0, rng)
}

#[test]
fn conv_identity_and_constant() {
    let tape = Tape::inference();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = tape.constant(rand_t(&[2, 1, 4, 5], &mut rng));
    let one = tape.constant(t(&[1, 1, 1, 1], vec![1.0]));
    let zero = tape.constant(t(&[1], vec![0.0]));
    let y = tape.conv2d(&x, &one, &zero, 0).unwrap();
    assert_eq!(y.value(), x.value());
    let w = tape.constant(Tensor::zeros(vec![2, 1, 3, 3]));
    let b = tape.constant(t(&[2], vec![0.25, -1.5]));
    let y = tape.conv2d(&x, &w, &b, 1).unwrap();
    for (i, v) in y.value().data().iter().enumerate() {
        assert_eq!(*v, if (i / 20) % 2 == 0 { 0.25 } else { -1.5 });
    }
}

#[test]
fn conv_center_is_full_dot_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_t(&[1, 1, 3, 3], &mut rng);
    let w = rand_t(&[1, 1, 3, 3], &mut rng);
    let tape = Tape::inference();
    let y = tape
        .conv2d(&tape.constant(x.clone()), &tape.constant(w.clone()), &tape.constant(t(&[1], vec![0.0])), 1)
        .unwrap();
    let dot: f64 = x.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
    assert!((y.value().data()[4] - dot).abs() < 1e-12);
    // corner sees only the overlapping 2x2 block
    let d = x.data();
    let k = w.data();
    let corner = d[0] * k[4] + d[1] * k[5] + d[3] * k[7] + d[4] * k[8];
    assert!((y.value().data()[0] - corner).abs() < 1e-12);
}

#[test]
fn elementwise_examples() {
    let tape = Tape::inference();
    let z = tape.constant(Tensor::zeros(vec![3]));
    assert!(tape.sigmoid(&z).value().data().iter().all(|&v| v == 0.5));
    assert!(tape.tanh(&z).value().data().iter().all(|&v| v == 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = tape.constant(rand_t(&[2, 3], &mut rng));
    let neg = tape.sub(&tape.constant(Tensor::zeros(vec![2, 3])), &x).unwrap();
    let s = tape.add(&x, &neg).unwrap();
    assert!(s.value().data().iter().all(|&v| v == 0.0));
    let r = tape.relu(&tape.constant(t(&[3], vec![-1.0, 0.0, 2.0])));
    assert_eq!(r.value().data(), &[0.0, 0.0, 2.0]);
    assert_eq!(tape.scale(&r, 0.5).value().data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn mse_examples_and_oracle() {
    let tape = Tape::inference();
    let a = tape.constant(t(&[2], vec![0.0, 0.0]));
    let b = tape.constant(t(&[2], vec![2.0, 0.0]));
    assert_eq!(tape.mse(&a, &b).unwrap().value().item().unwrap(), 2.0);
    assert_eq!(tape.mse(&b, &b).unwrap().value().item().unwrap(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, y) = (rand_t(&[3, 4], &mut rng), rand_t(&[3, 4], &mut rng));
    let mut acc = 0.0;
    for i in 0..12 {
        acc += (x.data()[i] - y.data()[i]).powi(2);
    }
    let got = tape.mse(&tape.constant(x), &tape.constant(y)).unwrap().value().item().unwrap();
    assert!((got - acc / 12.0).abs() < 1e-12);
}

/// Unit-norm random feature vectors per pixel, planar `[1,C,H,W]`.
fn unit_features(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut f: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for p in 0..h * w {
        let n = (0..c).map(|ch| f[ch * h * w + p].powi(2)).sum::<f64>().sqrt();
        for ch in 0..c {
            f[ch * h * w + p] /= n;
        }
    }
    f
}

fn argmax_d(corr: &Tensor<f64>, y: usize, x: usize) -> usize {
    let [_, nd, h, w] = corr.dims4().unwrap();
    (0..nd)
        .max_by(|&a, &b| {
            corr.data()[(a * h + y) * w + x]
                .partial_cmp(&corr.data()[(b * h + y) * w + x])
                .unwrap()
        })
        .unwrap()
}

#[test]
fn correlation_peaks_at_the_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (c, h, w, shift) = (16, 3, 12, 3);
    let left = unit_features(c, h, w, &mut rng);
    let tape = Tape::inference();
    let l = tape.constant(t(&[1, c, h, w], left.clone()));
    // interior columns, where no disparity clamps to column 0
    let same = tape.corr(&l, &l, 5).unwrap();
    for y in 0..h {
        for x in 5..w {
            assert_eq!(argmax_d(same.value(), y, x), 0);
        }
    }
    // right[x] = left[x + shift]
    let mut right = unit_features(c, h, w, &mut rng);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w - shift {
                right[(ch * h + y) * w + x] = left[(ch * h + y) * w + x + shift];
            }
        }
    }
    let cv = tape.corr(&l, &tape.constant(t(&[1, c, h, w], right)), 5).unwrap();
    for y in 0..h {
        for x in 5..w {
            assert_eq!(argmax_d(cv.value(), y, x), shift, "({y},{x})");
        }
    }
}

#[test]
fn orthogonal_features_have_zero_cost() {
    let tape = Tape::inference();
    let l = tape.constant(t(&[1, 2, 1, 1], vec![1.0, 0.0]));
    let r = tape.constant(t(&[1, 2, 1, 1], vec![0.0, 1.0]));
    assert_eq!(tape.corr(&l, &r, 0).unwrap().value().data(), &[0.0]);
}

#[test]
fn lookup_interpolates_costs() {
    let tape = Tape::inference();
    let corr = tape.constant(t(&[1, 5, 1, 1], vec![0.0, 2.0, 4.0, 6.0, 8.0]));
    let at = |d: f64, r: usize| -> Vec<f64> {
        let dv = tape.constant(t(&[1, 1, 1, 1], vec![d]));
        tape.lookup(&corr, &dv, r).unwrap().value().data().to_vec()
    };
    assert_eq!(at(2.0, 1), vec![2.0, 4.0, 6.0]);
    assert_eq!(at(2.5, 1)[1], 5.0);
    // taps past either end clamp to the boundary cost
    assert_eq!(at(0.5, 2), vec![0.0, 0.0, 1.0, 3.0, 5.0]);
}

#[test]
fn lookup_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (nd, h, w, radius) = (6, 3, 4, 2);
    let corr = rand_t(&[2, nd, h, w], &mut rng);
    let disp = Tensor::from_fn(vec![2, 1, h, w], |_| rng.gen_range(-1.0..7.0));
    let tape = Tape::inference();
    let out = tape.lookup(&tape.constant(corr.clone()), &tape.constant(disp.clone()), radius).unwrap();
    let taps = 2 * radius + 1;
    for b in 0..2 {
        for p in 0..h * w {
            let cost = |d: usize| corr.data()[(b * nd + d) * h * w + p];
            for k in 0..taps {
                let pos = (disp.data()[b * h * w + p] + k as f64 - radius as f64).clamp(0.0, (nd - 1) as f64);
                let lo = (pos.floor() as usize).min(nd - 2);
                let f = pos - lo as f64;
                let want = (1.0 - f) * cost(lo) + f * cost(lo + 1);
                let got = out.value().data()[(b * taps + k) * h * w + p];
                assert!((got - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn soft_argmax_examples() {
    let tape = Tape::inference();
    let mut spike = vec![-1e4; 8];
    spike[5] = 0.0;
    let c = tape.constant(t(&[1, 8, 1, 1], spike));
    assert!((tape.soft_argmax(&c).unwrap().value().data()[0] - 5.0).abs() < 1e-12);
    let u = tape.constant(Tensor::full(vec![1, 5, 2, 2], 0.3));
    assert!(tape.soft_argmax(&u).unwrap().value().data().iter().all(|&v| (v - 2.0).abs() < 1e-12));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let r = rand_t(&[1, 4, 1, 3], &mut rng);
    let got = tape.soft_argmax(&tape.constant(r.clone())).unwrap();
    for x in 0..3 {
        let e: Vec<f64> = (0..4).map(|d| r.data()[d * 3 + x].exp()).collect();
        let z: f64 = e.iter().sum();
        let want: f64 = e.iter().enumerate().map(|(d, v)| d as f64 * v / z).sum();
        assert!((got.value().data()[x] - want).abs() < 1e-12);
    }
}
