use super::*;
use proptest::prelude::*;

fn rng(tag: u64) -> StreamRng {
    SeedStream::new(tag).substream("nn-test", 0)
}

fn random_model(seed: u64) -> CnnModel {
    let mut m = CnnModel::init(&mut rng(seed));
    let mut r = rng(seed + 1000);
    for l in &mut m.layers {
        l.b.apply(|v| *v = r.random_range(-0.1..0.1));
    }
    m
}

fn random_images(seed: u64, b: usize) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(IMAGE_SIDE * IMAGE_SIDE, b, |_, _| r.random_range(0.0..1.0))
}

fn synthetic(n: usize, seed: u64) -> Dataset {
    let x = random_images(seed, n);
    let mut r = rng(seed + 7);
    Dataset { images: x.as_slice().to_vec(), labels: (0..n).map(|_| r.random_range(0..10u8)).collect() }
}

#[test]
fn im2col_first_layer_shape() {
    let m = im2col(&vec![0.0; 1024], 1, 32, 32, 5, 1).unwrap();
    assert_eq!(m.shape(), (25, 784));
}

#[test]
fn im2col_second_layer_shape() {
    let m = im2col(&vec![0.0; 6 * 196], 6, 14, 14, 5, 1).unwrap();
    assert_eq!(m.shape(), (150, 100));
}

#[test]
fn im2col_unit_kernel_is_identity() {
    let fm: Vec<f64> = (0..2 * 3 * 4).map(|v| v as f64).collect();
    let m = im2col(&fm, 2, 3, 4, 1, 1).unwrap();
    assert_eq!(m.shape(), (2, 12));
    for c in 0..2 {
        for p in 0..12 {
            assert_eq!(m[(c, p)], fm[c * 12 + p]);
        }
    }
}

#[test]
fn im2col_rejects_bad_shapes() {
    assert!(im2col(&[0.0; 10], 1, 4, 4, 3, 1).is_err());
    assert!(im2col(&[0.0; 16], 1, 4, 4, 5, 1).is_err());
}

fn direct_conv(fm: &[f64], c: usize, side: usize, w: &DMatrix<f64>) -> DMatrix<f64> {
    let o = side - 4;
    DMatrix::from_fn(w.nrows(), o * o, |f, p| {
        let (oy, ox) = (p / o, p % o);
        let mut s = 0.0;
        for ci in 0..c {
            for ky in 0..5 {
                for kx in 0..5 {
                    s += w[(f, ci * 25 + ky * 5 + kx)] * fm[ci * side * side + (oy + ky) * side + ox + kx];
                }
            }
        }
        s
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn conv_as_matmul_matches_sliding_window(seed in 0u64..1000, c in 1usize..4, side in 5usize..12) {
        let mut r = rng(seed);
        let fm: Vec<f64> = (0..c * side * side).map(|_| r.random_range(-1.0..1.0)).collect();
        let w = DMatrix::from_fn(3, c * 25, |_, _| r.random_range(-1.0..1.0));
        let got = &w * im2col(&fm, c, side, side, 5, 1).unwrap();
        let want = direct_conv(&fm, c, side, &w);
        prop_assert!((got - want).amax() < 1e-10);
    }
}

#[test]
fn col2im_is_adjoint_of_im2col() {
    let mut r = rng(3);
    let (c, side, b) = (3, 9, 2);
    let maps = DMatrix::from_fn(c, b * side * side, |_, _| r.random_range(-1.0..1.0));
    let cols = DMatrix::from_fn(c * 25, b * 25, |_, _| r.random_range(-1.0..1.0));
    let lhs = batch_im2col(&maps, c, side, b).dot(&cols);
    let rhs = maps.dot(&batch_col2im(&cols, c, side, b));
    assert!((lhs - rhs).abs() < 1e-10);
}

#[test]
fn unpool_is_adjoint_of_pool() {
    let mut r = rng(4);
    let maps = DMatrix::from_fn(2, 3 * 36, |_, _| r.random_range(-1.0..1.0));
    let g = DMatrix::from_fn(2, 3 * 9, |_, _| r.random_range(-1.0..1.0));
    let lhs = avg_pool(&maps, 6, 3).dot(&g);
    let rhs = maps.dot(&avg_unpool(&g, 6, 3));
    assert!((lhs - rhs).abs() < 1e-12);
}

#[test]
fn batched_forward_equals_per_image() {
    let m = random_model(1);
    let x = random_images(2, 3);
    let all = forward(&m, &x).unwrap();
    for n in 0..3 {
        let one = forward(&m, &x.columns(n, 1).into_owned()).unwrap();
        assert!((one.column(0) - all.column(n)).amax() < 1e-12);
    }
}

#[test]
fn weight_gradients_match_finite_differences() {
    let m = random_model(5);
    let x = random_images(6, 4);
    let y = [1u8, 7, 3, 3];
    let tape = forward_tape(&m, &x, None).unwrap();
    let (_, dl) = cross_entropy(tape.logits(), &y);
    let grads = weight_gradients(&tape, &backward(&m, &tape, dl));
    let loss = |m: &CnnModel| cross_entropy(&forward(m, &x).unwrap(), &y).0;
    let h = 1e-6;
    for (l, (i, j)) in [(0, (2, 7)), (1, (5, 100)), (2, (30, 222)), (3, (10, 50)), (4, (9, 83))] {
        let (mut up, mut dn) = (m.clone(), m.clone());
        up.layers[l].w[(i, j)] += h;
        dn.layers[l].w[(i, j)] -= h;
        let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
        let an = grads[l].0[(i, j)];
        assert!((fd - an).abs() <= 1e-5 * fd.abs().max(1e-3), "layer {l}: fd {fd} vs {an}");
        let (mut up, mut dn) = (m.clone(), m.clone());
        up.layers[l].b[i] += h;
        dn.layers[l].b[i] -= h;
        let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
        assert!((fd - grads[l].1[i]).abs() <= 1e-5 * fd.abs().max(1e-3));
    }
}

#[test]
fn zero_noise_is_clean_forward() {
    let m = random_model(8);
    let x = random_images(9, 5);
    let stats = CalibrationStats { s_ref: vec![1.0; 5] };
    let lv = NoiseLevels::uniform(&[0.0; 5], &stats, 5);
    let noisy = forward_noisy(&m, &x, &lv, &mut rng(1)).unwrap();
    assert_eq!(noisy, forward(&m, &x).unwrap());
}

#[test]
fn injected_noise_has_target_variance() {
    let m = random_model(10);
    let x = random_images(11, 1);
    let stats = CalibrationStats { s_ref: vec![0.3, 2.0, 1.5, 0.7, 4.0] };
    let eps = [0.2, 0.1, 0.3, 0.05, 0.5];
    let lv = NoiseLevels::uniform(&eps, &stats, 1);
    let mut r = rng(12);
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); 5];
    while samples.iter().any(|s| s.len() < 100_000) {
        let tape = forward_tape(&m, &x, Some((&lv, &mut r))).unwrap();
        for l in 0..5 {
            let bias = DMatrix::from_fn(tape.pre[l].nrows(), tape.pre[l].ncols(), |i, _| m.layers[l].b[i]);
            let n = &tape.pre[l] - &tape.mvm[l] - bias;
            samples[l].extend(n.iter().copied());
        }
    }
    for l in 0..5 {
        let s = &samples[l][..100_000];
        let var = s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
        let target = eps[l] * eps[l] * stats.s_ref[l];
        // Var of v² is 2σ⁴.
        let se = (2.0f64).sqrt() * target / (s.len() as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "layer {l}: {var} vs {target}");
    }
}

#[test]
fn sref_scales_quadratically() {
    let mut m = random_model(13);
    for l in &mut m.layers {
        l.b.fill(0.0);
    }
    let d = synthetic(20, 14);
    let mut d2 = d.clone();
    d2.images.iter_mut().for_each(|v| *v *= 2.0);
    let a = calibrate_sref(&m, &d).unwrap();
    let b = calibrate_sref(&m, &d2).unwrap();
    for (x, y) in a.s_ref.iter().zip(&b.s_ref) {
        assert!(*x > 0.0 && (y / x - 4.0).abs() < 1e-10);
    }
}

#[test]
fn zero_model_is_at_chance() {
    let d = synthetic(200, 15);
    let stats = CalibrationStats { s_ref: vec![1.0; 5] };
    let r = evaluate(&CnnModel::zeros(), &d, &EvalNoise::Clean, &stats, 1, &SeedStream::new(0)).unwrap();
    let first = d.labels.iter().filter(|y| **y == 0).count() as f64 / 200.0;
    assert!((r.accuracy - first).abs() < 1e-12);
    assert!((r.cross_entropy - 10f64.ln()).abs() < 1e-12);
}

#[test]
fn evaluation_is_seed_deterministic() {
    let m = random_model(16);
    let d = synthetic(300, 17);
    let stats = calibrate_sref(&m, &d).unwrap();
    let noise = EvalNoise::Uniform(vec![0.3; 5]);
    let a = evaluate(&m, &d, &noise, &stats, 2, &SeedStream::new(5)).unwrap();
    let b = evaluate(&m, &d, &noise, &stats, 2, &SeedStream::new(5)).unwrap();
    assert_eq!(a, b);
    let c = evaluate(&m, &d, &noise, &stats, 2, &SeedStream::new(6)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn weights_round_trip_bytes() {
    let mut m = random_model(18);
    for l in &mut m.layers {
        l.w.apply(|v| *v = *v as f32 as f64);
        l.b.apply(|v| *v = *v as f32 as f64);
    }
    let mut a = Vec::new();
    write_weights(&m, &mut a).unwrap();
    assert_eq!(&a[..4], MAGIC);
    assert_eq!(a.len(), 16 + 5 * 8 + 4 * SHAPES.iter().map(|(m, n)| m * n + m).sum::<usize>());
    let back = read_weights(&a[..]).unwrap();
    assert_eq!(back, m);
    let mut b = Vec::new();
    write_weights(&back, &mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn weights_reject_bad_magic() {
    assert!(matches!(read_weights(&b"NOPE\x01\0\0\0"[..]), Err(Error::Parse(_))));
}

#[test]
fn idx_reader_parses_plain_and_gzip() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = Vec::new();
    for v in [0x0000_0803u32, 2, 2, 3] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(&[0, 255, 10, 20, 30, 40, 1, 2, 3, 4, 5, 6]);
    std::fs::write(dir.path().join("imgs"), &img).unwrap();
    let (n, r, c, px) = read_idx_images(&dir.path().join("imgs")).unwrap();
    assert_eq!((n, r, c, px[1]), (2, 2, 3, 255));

    let mut lab = Vec::new();
    for v in [0x0000_0801u32, 2] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(&[7, 3]);
    let f = std::fs::File::create(dir.path().join("labs.gz")).unwrap();
    let mut gz = flate2::write::GzEncoder::new(f, flate2::Compression::default());
    std::io::Write::write_all(&mut gz, &lab).unwrap();
    gz.finish().unwrap();
    assert_eq!(read_idx_labels(&dir.path().join("labs")).unwrap(), vec![7, 3]);
    assert!(matches!(read_idx_labels(&dir.path().join("imgs")), Err(Error::Parse(_))));
    assert!(matches!(read_idx_labels(&dir.path().join("missing")), Err(Error::DataMissing(_))));
}
