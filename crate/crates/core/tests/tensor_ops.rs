use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smtk::gradcheck::{check, random_projection, GradcheckConfig, Selection};
use smtk::tensor::{Activation, Linear, Mlp, MlpLayer, ParamStore, Tape, Tensor};
use smtk::Error;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
    let d = a.max_abs_diff(b).expect("shapes differ");
    assert!(d <= tol, "max diff {d} > {tol}\n{a:?}\n{b:?}");
}

#[test]
fn matmul_identity_and_hand_example() {
    let mut tape = Tape::new();
    let m = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.5]]);
    let i = tape.constant(Tensor::eye(3));
    let mv = tape.constant(m.clone());
    let out = tape.matmul(i, mv).unwrap();
    assert_eq!(tape.value(out), &m);

    let a = tape.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = tape.constant(Tensor::from_rows(&[&[5.0], &[6.0]]));
    let out = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(out), &Tensor::from_rows(&[&[17.0], &[39.0]]));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 2]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn matmul_gradient_of_sum_is_ones_times_b_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&[4, 5], &mut rng);
    let b = random(&[5, 3], &mut rng);

    // Closed form: d sum(AB) / dA = 1_{4x3} B^T, i.e. every row holds the
    // row sums of B.
    let row_sums: Vec<f64> = (0..5).map(|r| b.row(r).iter().sum()).collect();
    let expected = Tensor::new(vec![4, 5], (0..4).flat_map(|_| row_sums.clone()).collect()).unwrap();

    let mut tape = Tape::new();
    let av = tape.leaf(a.clone(), true);
    let bv = tape.leaf(b.clone(), true);
    let out = tape.matmul(av, bv).unwrap();
    let loss = tape.sum(out);
    tape.backward(loss).unwrap();
    assert_close(&tape.grad(av).unwrap(), &expected, 1e-12);

    let mut store = ParamStore::new();
    let ia = store.insert("a", a).unwrap();
    let ib = store.insert("b", b).unwrap();
    let cfg = GradcheckConfig { rtol: 1e-6, ..Default::default() };
    let report = check("matmul", &store, None, Selection::All, cfg, |t, s| {
        let a = t.param(s, ia);
        let b = t.param(s, ib);
        let o = t.matmul(a, b)?;
        Ok(t.sum(o))
    })
    .unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn linear_examples_and_gradcheck() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[&[0.5, -2.0], &[3.0, 4.0]]));
    let w = tape.constant(Tensor::eye(2));
    let b = tape.constant(Tensor::zeros(&[2]));
    let y = tape.linear(x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y), tape.value(x));

    let x = tape.constant(Tensor::from_rows(&[&[1.0, 1.0]]));
    let w = tape.constant(Tensor::from_rows(&[&[2.0], &[3.0]]));
    let b = tape.constant(Tensor::new(vec![1], vec![-1.0]).unwrap());
    let y = tape.linear(x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0]);

    let bad = tape.constant(Tensor::zeros(&[3, 3]));
    assert!(matches!(tape.linear(x, bad, None), Err(Error::ShapeMismatch { .. })));

    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layer = Linear::new(&mut store, "lin", 4, 3, true, &mut rng).unwrap();
        store.set(layer.bias.unwrap(), random(&[3], &mut rng)).unwrap();
        let x = random(&[2, 5, 4], &mut rng);
        let report = check("linear", &store, None, Selection::All, GradcheckConfig::default(), |t, s| {
            let xv = t.constant(x.clone());
            let y = layer.forward(t, s, xv)?;
            random_projection(t, y, seed)
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}

#[test]
fn softmax_examples_and_gradcheck() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![4], vec![2.5; 4]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    for &v in tape.value(y).data() {
        assert!((v - 0.25).abs() < 1e-15);
    }
    let x = tape.constant(Tensor::new(vec![2], vec![0.0, 2f64.ln()]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    assert!((tape.value(y).data()[0] - 1.0 / 3.0).abs() < 1e-15);
    assert!((tape.value(y).data()[1] - 2.0 / 3.0).abs() < 1e-15);

    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = random(&[2, 5], &mut rng);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let y = t.softmax(xv, 1).unwrap();
        for r in 0..2 {
            let s: f64 = t.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let mut store = ParamStore::new();
        let id = store.insert("x", x).unwrap();
        let report = check("softmax", &store, None, Selection::All, GradcheckConfig::default(), |t, s| {
            let v = t.param(s, id);
            let y = t.softmax(v, 1)?;
            random_projection(t, y, seed)
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}

#[test]
fn softmax_is_stable_for_large_inputs() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![3], vec![1000.0, 1000.0, -1000.0]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    assert!(tape.value(y).is_finite());
    assert!((tape.value(y).data()[0] - 0.5).abs() < 1e-12);
}

#[test]
fn mlp_examples_and_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "id", 3, 3, true, &mut rng).unwrap();
    store.set(lin.weight, Tensor::eye(3)).unwrap();
    let mlp = Mlp::from_layers(vec![MlpLayer { linear: lin, norm: None, activation: Activation::Identity }]).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(random(&[4, 3], &mut rng));
    let y = mlp.forward(&mut tape, &store, x).unwrap();
    assert_eq!(tape.value(y), tape.value(x));

    let x = tape.constant(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &[0.0, 2.0]);

    // Widths that do not chain are rejected.
    let mut s2 = ParamStore::new();
    let a = Linear::new(&mut s2, "a", 3, 4, true, &mut rng).unwrap();
    let b = Linear::new(&mut s2, "b", 5, 2, true, &mut rng).unwrap();
    let layers = vec![
        MlpLayer { linear: a, norm: None, activation: Activation::Relu },
        MlpLayer { linear: b, norm: None, activation: Activation::Identity },
    ];
    assert!(matches!(Mlp::from_layers(layers), Err(Error::ShapeMismatch { .. })));

    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "mlp", &[4, 6, 3], &mut rng).unwrap();
        let x = random(&[10, 4], &mut rng);
        let xid = store.insert("input", x).unwrap();
        let report = check("mlp", &store, None, Selection::All, GradcheckConfig::default(), |t, s| {
            let xv = t.param(s, xid);
            let y = mlp.forward(t, s, xv)?;
            random_projection(t, y, seed)
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}

#[test]
fn backward_examples_and_accumulation() {
    let x0 = Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]);
    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone(), true);
    let loss = tape.sum(x);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), Tensor::ones(&[2, 2]));

    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone(), true);
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    let twice: Vec<f64> = x0.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(tape.grad(x).unwrap().data(), &twice[..]);

    // A second call without reset accumulates.
    tape.backward(loss).unwrap();
    let four: Vec<f64> = x0.data().iter().map(|v| 4.0 * v).collect();
    assert_eq!(tape.grad(x).unwrap().data(), &four[..]);
    tape.zero_grad();
    assert!(tape.grad(x).is_none());

    assert!(matches!(tape.backward(sq), Err(Error::NonScalarLoss { .. })));
}

#[test]
fn backward_visits_in_reverse_creation_order() {
    let mut tape = Tape::new();
    tape.record_visits();
    let a = tape.leaf(Tensor::ones(&[3]), true);
    let b = tape.relu(a);
    let c = tape.mul(a, b).unwrap();
    let d = tape.scale(c, 2.0);
    let l = tape.sum(d);
    tape.backward(l).unwrap();
    let visits = tape.visits().unwrap();
    assert_eq!(visits, &[l.index(), d.index(), c.index(), b.index(), a.index()]);
}

#[test]
fn elementwise_and_reduction_ops_gradcheck() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let mut store = ParamStore::new();
        let a = store.insert("a", random(&[3, 4, 5], &mut rng)).unwrap();
        let b = store.insert("b", random(&[3, 4, 5], &mut rng)).unwrap();
        let s = store.insert("s", random(&[3, 4], &mut rng)).unwrap();
        let c = store.insert("c", random(&[3, 4, 2], &mut rng)).unwrap();
        let g = store.insert("g", random(&[6, 5], &mut rng)).unwrap();
        let report = check("ops", &store, None, Selection::All, GradcheckConfig::default(), |t, st| {
            let (a, b, s, c, g) = (t.param(st, a), t.param(st, b), t.param(st, s), t.param(st, c), t.param(st, g));
            let sum = t.add(a, b)?;
            let diff = t.sub(sum, b)?;
            let prod = t.mul(diff, b)?;
            let rows = t.mul_rows(prod, s)?;
            let cat = t.concat(&[rows, c])?;
            let r = t.relu(cat);
            let mx = t.max_axis(r, 1)?;
            let nrm = t.norm(cat, 2)?;
            let mm = t.min_max_normalize(a, 1)?;
            let gathered = t.gather(g, vec![0usize, 5, 5, 2])?;
            let sa = t.sum_axis(mm, 0)?;
            let l1 = random_projection(t, mx, seed)?;
            let l2 = random_projection(t, nrm, seed + 1)?;
            let l3 = random_projection(t, sa, seed + 2)?;
            let l4 = random_projection(t, gathered, seed + 3)?;
            let x = t.add(l1, l2)?;
            let y = t.add(l3, l4)?;
            let z = t.add(x, y)?;
            Ok(t.scale(z, 0.5))
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}

#[test]
fn min_max_normalize_degenerate_slice_is_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_rows(&[&[2.0, 5.0], &[2.0, 1.0], &[2.0, 3.0]]), true);
    let y = tape.min_max_normalize(x, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.5]);
    let l = tape.sum(y);
    tape.backward(l).unwrap();
    assert!(tape.grad(x).unwrap().is_finite());
}

#[test]
fn channel_norm_and_cross_entropy_gradcheck() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let mut store = ParamStore::new();
        let x = store.insert("x", random(&[7, 3], &mut rng)).unwrap();
        let gamma = store.insert("gamma", random(&[3], &mut rng)).unwrap();
        let beta = store.insert("beta", random(&[3], &mut rng)).unwrap();
        let labels: Vec<usize> = (0..7).map(|i| i % 3).collect();
        let report = check("norm+ce", &store, None, Selection::All, GradcheckConfig::default(), |t, s| {
            let (x, g, b) = (t.param(s, x), t.param(s, gamma), t.param(s, beta));
            let y = t.channel_norm(x, g, b, 1e-5)?;
            t.cross_entropy(y, labels.clone())
        })
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 8, 8, 2], &mut rng).unwrap();
        let x = random(&[20, 3], &mut rng);
        let mut t = Tape::new();
        let xv = t.constant(x);
        let y = mlp.forward(&mut t, &store, xv).unwrap();
        let l = t.cross_entropy(y, (0..20).map(|i| i % 2).collect::<Vec<_>>()).unwrap();
        t.backward(l).unwrap();
        let grads: Vec<u64> = t
            .param_grads()
            .into_iter()
            .flat_map(|(_, g)| g.into_data())
            .map(f64::to_bits)
            .collect();
        (t.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), grads)
    };
    assert_eq!(run(), run());
}
