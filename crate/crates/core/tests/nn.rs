use latmap::nn::{
    conv_forward, load_model, load_optimizer, save_model, save_optimizer, BlockSpec, HeadSpec, Mode, ModelInfo, Network,
    NetworkSpec, ParameterStore,
};
use latmap::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn heads() -> Vec<HeadSpec> {
    vec![
        HeadSpec {
            name: "a".into(),
            channels: 1,
        },
        HeadSpec {
            name: "b".into(),
            channels: 2,
        },
    ]
}

fn small_spec(dim: usize, residual: bool) -> NetworkSpec {
    NetworkSpec {
        dim,
        input_channels: 2,
        stem_kernel: 5,
        stem_channels: 3,
        stem_batch_norm: true,
        body: vec![
            BlockSpec {
                channels: 3,
                kernel: 3,
                residual,
                batch_norm: true,
            },
            BlockSpec {
                channels: 3,
                kernel: 3,
                residual,
                batch_norm: !residual,
            },
        ],
        heads: heads(),
    }
}

fn random_tensor(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Perturbs every parameter so biases and shifts are not all zero.
fn jitter(store: &mut ParameterStore, rng: &mut ChaCha8Rng) {
    for i in 0..store.entries().len() {
        if !store.entries()[i].role.trainable() {
            continue;
        }
        let v: Vec<f64> = store.values(i).iter().map(|x| x + rng.random_range(-0.3..0.3)).collect();
        store.set_values(i, &v).unwrap();
    }
}

fn objective(outs: &[Tensor], w: &[Tensor]) -> f64 {
    outs.iter()
        .zip(w)
        .map(|(o, w)| o.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

struct Checked {
    compared: usize,
    skipped: usize,
}

fn close(fd: f64, an: f64) -> bool {
    (fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()) + 1e-6
}

fn gradient_check(dim: usize, residual: bool, mode: Mode) -> Checked {
    let mut rng = ChaCha8Rng::seed_from_u64(17 + dim as u64);
    let net = Network::new(small_spec(dim, residual)).unwrap();
    let mut store = net.init(4);
    jitter(&mut store, &mut rng);
    if mode == Mode::Eval {
        let idx: Vec<usize> = (0..store.entries().len())
            .filter(|&i| store.entries()[i].name.ends_with("running_var"))
            .collect();
        for i in idx {
            let v: Vec<f64> = store.values(i).iter().map(|_| rng.random_range(0.5..2.0)).collect();
            store.set_values(i, &v).unwrap();
        }
    }
    let mut dims = vec![3, 2];
    dims.extend(std::iter::repeat_n(if dim == 1 { 7 } else { 4 }, dim));
    let x = random_tensor(dims, &mut rng);
    let (outs, tape) = net.forward_frozen(&store, &x, mode).unwrap();
    let w: Vec<Tensor> = outs.iter().map(|o| random_tensor(o.dims().to_vec(), &mut rng)).collect();
    let g = net.backward(&store, &tape, &w).unwrap();
    let sig = tape.relu_signature();
    let mut res = Checked {
        compared: 0,
        skipped: 0,
    };

    let eval_at = |s: &ParameterStore, x: &Tensor| {
        let (o, t) = net.forward_frozen(s, x, mode).unwrap();
        (objective(&o, &w), t.relu_signature())
    };

    for i in 0..store.entries().len() {
        if !store.entries()[i].role.trainable() {
            continue;
        }
        let base = store.values(i);
        for k in 0..base.len() {
            let mut h = 1e-4;
            let mut done = false;
            for _ in 0..4 {
                let mut plus = store.clone();
                let mut minus = store.clone();
                let mut v = base.clone();
                v[k] = base[k] + h;
                plus.set_values(i, &v).unwrap();
                v[k] = base[k] - h;
                minus.set_values(i, &v).unwrap();
                let step = plus.values(i)[k] - minus.values(i)[k];
                let (fp, sp) = eval_at(&plus, &x);
                let (fm, sm) = eval_at(&minus, &x);
                if sp != sig || sm != sig {
                    h /= 10.0;
                    continue;
                }
                let fd = (fp - fm) / step;
                assert!(
                    close(fd, g.params[i][k]),
                    "{}[{k}]: finite difference {fd} vs analytic {}",
                    store.entries()[i].name,
                    g.params[i][k]
                );
                res.compared += 1;
                done = true;
                break;
            }
            if !done {
                res.skipped += 1;
            }
        }
    }

    for k in 0..x.len() {
        let mut h = 1e-5;
        let mut done = false;
        for _ in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data_mut()[k] += h;
            xm.data_mut()[k] -= h;
            let (fp, sp) = eval_at(&store, &xp);
            let (fm, sm) = eval_at(&store, &xm);
            if sp != sig || sm != sig {
                h /= 10.0;
                continue;
            }
            let fd = (fp - fm) / (2.0 * h);
            assert!(close(fd, g.input.data()[k]), "input[{k}]: {fd} vs {}", g.input.data()[k]);
            res.compared += 1;
            done = true;
            break;
        }
        if !done {
            res.skipped += 1;
        }
    }
    res
}

#[test]
fn gradients_match_finite_differences() {
    for (dim, residual) in [(1, true), (2, false)] {
        for mode in [Mode::Train, Mode::Eval] {
            let r = gradient_check(dim, residual, mode);
            assert!(r.compared > 100);
            assert!(
                r.skipped * 20 <= r.compared,
                "dim {dim} {mode:?}: {} coordinates sat on ReLU kinks",
                r.skipped
            );
        }
    }
}

fn roll(t: &Tensor, shift: &[usize]) -> Tensor {
    let d = t.dims();
    let ext = &d[2..];
    let s: usize = ext.iter().product();
    let mut out = Tensor::zeros(d.to_vec());
    for (bc, block) in t.data().chunks(s).enumerate() {
        for (p, &v) in block.iter().enumerate() {
            let q = if ext.len() == 1 {
                (p + shift[0]) % ext[0]
            } else {
                let (x0, x1) = (p / ext[1], p % ext[1]);
                ((x0 + shift[0]) % ext[0]) * ext[1] + (x1 + shift[1]) % ext[1]
            };
            out.data_mut()[bc * s + q] = v;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_commute_with_translations(seed in 0u64..1000, l in 3usize..11, s0 in 0usize..11, s1 in 0usize..11, two in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = if two { 2 } else { 1 };
        let net = Network::new(small_spec(dim, !two)).unwrap();
        let mut store = net.init(seed);
        jitter(&mut store, &mut rng);
        let mut dims = vec![2, 2];
        dims.extend(std::iter::repeat_n(l, dim));
        let shift = vec![s0 % l, s1 % l];
        let x = random_tensor(dims, &mut rng);
        let a = net.infer(&store, &roll(&x, &shift)).unwrap();
        let b = net.infer(&store, &x).unwrap();
        for (p, q) in a.iter().zip(&b) {
            let q = roll(q, &shift);
            for (u, v) in p.data().iter().zip(q.data()) {
                prop_assert!((u - v).abs() <= 1e-10 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn inference_is_per_item(seed in 0u64..1000, l in 4usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(small_spec(1, true)).unwrap();
        let store = net.init(seed);
        let x = random_tensor(vec![3, 2, l], &mut rng);
        let all = net.infer(&store, &x).unwrap();
        let one = Tensor::new(vec![1, 2, l], x.outer(1).to_vec()).unwrap();
        let single = net.infer(&store, &one).unwrap();
        for (a, s) in all.iter().zip(&single) {
            prop_assert_eq!(a.outer(1), s.data());
        }
    }
}

#[test]
fn training_updates_running_statistics_only_in_train_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Network::new(small_spec(1, true)).unwrap();
    let mut store = net.init(1);
    let x = random_tensor(vec![4, 2, 6], &mut rng);
    let before = store.clone();
    net.forward(&mut store, &x, Mode::Eval).unwrap();
    assert_eq!(store, before);
    net.forward(&mut store, &x, Mode::Train).unwrap();
    let i = store.index_of("stem.bn.running_mean").unwrap();
    assert_ne!(store.values(i), before.values(i));
    assert_eq!(store.version(), before.version());
}

#[test]
fn saved_model_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = Network::new(small_spec(2, false)).unwrap();
    let mut store = net.init(2);
    jitter(&mut store, &mut rng);
    let x = random_tensor(vec![2, 2, 4, 4], &mut rng);
    let (outs, tape) = net.forward(&mut store, &x, Mode::Train).unwrap();
    let g = net.backward(&store, &tape, &outs).unwrap();
    store.adam_step(&g.params, 1e-3, &Default::default()).unwrap();

    let path = dir.path().join("m.bin");
    save_model(&path, &net, &store, &ModelInfo::default()).unwrap();
    save_optimizer(&dir.path().join("m.opt"), &store).unwrap();
    let (net2, mut store2, _) = load_model(&path).unwrap();
    load_optimizer(&dir.path().join("m.opt"), &mut store2).unwrap();
    assert_eq!(store2.adam(), store.adam());
    assert_eq!(net2.infer(&store2, &x).unwrap(), net.infer(&store, &x).unwrap());

    let again = dir.path().join("again.bin");
    save_model(&again, &net2, &store2, &ModelInfo::default()).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn stem_only_network_with_identity_heads() {
    let spec = NetworkSpec {
        dim: 1,
        input_channels: 2,
        stem_kernel: 5,
        stem_channels: 3,
        stem_batch_norm: false,
        body: vec![],
        heads: vec![HeadSpec {
            name: "id".into(),
            channels: 3,
        }],
    };
    let net = Network::new(spec).unwrap();
    let mut store = net.init(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    jitter(&mut store, &mut rng);
    let hw = store.index_of("head.id.weight").unwrap();
    let eye: Vec<f64> = (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
    store.set_values(hw, &eye).unwrap();
    let hb = store.index_of("head.id.bias").unwrap();
    store.set_values(hb, &[0.0; 3]).unwrap();

    let x = random_tensor(vec![2, 2, 9], &mut rng);
    let w = store.entry("stem.conv.weight").unwrap();
    let w = Tensor::new(w.dims.clone(), store.values(store.index_of("stem.conv.weight").unwrap())).unwrap();
    let b = store.values(store.index_of("stem.conv.bias").unwrap());
    let stem = conv_forward(&x, &w, Some(&b)).unwrap();
    let relu: Vec<f64> = stem.data().iter().map(|v| v.max(0.0)).collect();

    let out = net.infer(&store, &x).unwrap();
    assert_eq!(out[0].dims(), stem.dims());
    for (a, b) in out[0].data().iter().zip(&relu) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(net.features(&store, &x).unwrap().data(), out[0].data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn one_parameter_set_serves_every_extent(l in 3usize..=64, seed in any::<u64>()) {
        let net = Network::new(small_spec(1, true)).unwrap();
        let store = net.init(21);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(vec![1, 2, l], &mut rng);
        let a = net.infer(&store, &x).unwrap();
        let b = net.infer(&store, &x).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a[0].dims(), &[1, 1, l][..]);
        prop_assert_eq!(a[1].dims(), &[1, 2, l][..]);
        prop_assert!(a.iter().all(|t| t.data().iter().all(|v| v.is_finite())));
    }
}
