mod common;

use common::*;
use image_transformer::numerics::gradcheck::{check_fn, primitive_suite, CheckOptions};
use image_transformer::numerics::{glu_fuse, lstm_cell, GluParams, Graph, LstmParams, ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn matmul_hand_product() {
    let g = Graph::new();
    let a = g.constant(&Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let b = g.constant(&Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap());
    assert_eq!(g.value(g.matmul(a, b).unwrap()).data(), &[2.0, 4.0]);
    let i = g.constant(&Tensor::identity(2));
    assert_eq!(g.value(g.matmul(i, i).unwrap()), Tensor::identity(2));
}

#[test]
fn matmul_gradient_is_ones_times_b_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Graph::new();
    let a = g.param(&Tensor::uniform(&[3, 4], 1.0, &mut rng));
    let bt = Tensor::uniform(&[4, 2], 1.0, &mut rng);
    let b = g.constant(&bt);
    let grads = g.backward(g.sum(g.matmul(a, b).unwrap())).unwrap();
    let ga = grads.get(a).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let want: f64 = (0..2).map(|j| bt.at(k, j)).sum();
            assert!((ga.at(i, k) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn backward_of_sum_and_of_softmax_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = Graph::new();
    let x = g.param(&Tensor::uniform(&[3, 4], 2.0, &mut rng));
    let gs = g.backward(g.sum(x)).unwrap();
    assert!(gs.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    let gs = g.backward(g.sum(g.softmax_rows(x))).unwrap();
    assert!(gs.get(x).unwrap().data().iter().all(|v| v.abs() < 1e-12));
    assert!(g.backward(x).is_err());
}

#[test]
fn layer_norm_examples() {
    let g = Graph::new();
    let ones = g.constant(&Tensor::ones(&[2]));
    let zeros = g.constant(&Tensor::zeros(&[2]));
    let x = g.constant(&Tensor::from_rows(&[vec![1.0, 3.0], vec![5.0, 5.0]]).unwrap());
    let y = g.value(g.layer_norm(x, ones, zeros).unwrap());
    let s = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((y.at(0, 0) + s).abs() < 1e-12 && (y.at(0, 1) - s).abs() < 1e-12);
    assert_eq!(&y.data()[2..], &[0.0, 0.0]);
    let b = g.constant(&Tensor::vector(vec![0.25, -1.5]));
    let y = g.value(g.layer_norm(x, zeros, b).unwrap());
    assert_eq!(y.data(), &[0.25, -1.5, 0.25, -1.5]);
    let narrow = g.constant(&Tensor::ones(&[2, 1]));
    let one = g.constant(&Tensor::ones(&[1]));
    assert!(g.layer_norm(narrow, one, one).is_err());
}

#[test]
fn softmax_uniform_and_shift() {
    let g = Graph::new();
    let z = g.constant(&Tensor::zeros(&[1, 3]));
    for v in g.value(g.softmax_rows(z)).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

fn lstm_oracle(store: &ParamStore, x: &[f64], h: &[f64], m: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = h.len();
    let pre = add_vec(
        &add_vec(&vm(x, &param(store, "l.w_x")), &vm(h, &param(store, "l.w_h"))),
        &vector(store, "l.b"),
    );
    let mut h_new = vec![0.0; d];
    let mut m_new = vec![0.0; d];
    for j in 0..d {
        let i = sigmoid(pre[j]);
        let f = sigmoid(pre[d + j]);
        let o = sigmoid(pre[2 * d + j]);
        let c = pre[3 * d + j].tanh();
        m_new[j] = f * m[j] + i * c;
        h_new[j] = o * m_new[j].tanh();
    }
    (h_new, m_new)
}

#[test]
fn lstm_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let params = LstmParams::new(&mut store, "l", 5, 3, &mut rng);
    for t in store.tensors_mut() {
        *t = Tensor::uniform(t.shape(), 1.0, &mut rng);
    }
    let x = Tensor::uniform(&[2, 5], 1.0, &mut rng);
    let h = Tensor::uniform(&[2, 3], 1.0, &mut rng);
    let m = Tensor::uniform(&[2, 3], 1.0, &mut rng);
    let g = Graph::new();
    let p = store.bind(&g);
    let (hv, mv) = lstm_cell(&g, &p, &params, g.constant(&x), g.constant(&h), g.constant(&m)).unwrap();
    let (hv, mv) = (g.value(hv), g.value(mv));
    for r in 0..2 {
        let (ho, mo) = lstm_oracle(&store, x.row(r), h.row(r), m.row(r));
        for j in 0..3 {
            assert!((hv.at(r, j) - ho[j]).abs() < 1e-12);
            assert!((mv.at(r, j) - mo[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn lstm_limit_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    let params = LstmParams::new(&mut store, "l", 2, 2, &mut rng);
    for t in store.tensors_mut() {
        *t = Tensor::zeros(t.shape());
    }
    let g = Graph::new();
    let p = store.bind(&g);
    let x = g.constant(&Tensor::uniform(&[1, 2], 1.0, &mut rng));
    let hm = g.constant(&Tensor::zeros(&[1, 2]));
    let (h, _) = lstm_cell(&g, &p, &params, x, hm, hm).unwrap();
    assert!(g.value(h).data().iter().all(|&v| v == 0.0));

    // gates forced open: m = m_prev + tanh(candidate)
    let b = store.find("l.b").unwrap();
    store.get_mut(b).data_mut()[..6].fill(50.0);
    let g = Graph::new();
    let p = store.bind(&g);
    let mp = Tensor::vector(vec![0.3, -0.2]).reshape(vec![1, 2]).unwrap();
    let x = g.constant(&Tensor::zeros(&[1, 2]));
    let (_, m) = lstm_cell(&g, &p, &params, x, g.constant(&Tensor::zeros(&[1, 2])), g.constant(&mp)).unwrap();
    assert!(g.value(m).max_abs_diff(&mp) < 1e-12);
    let bad = g.constant(&Tensor::zeros(&[1, 3]));
    assert!(lstm_cell(&g, &p, &params, bad, bad, bad).is_err());
}

#[test]
fn glu_matches_scalar_oracle_and_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let params = GluParams::new(&mut store, "glu", 3, 4, 5, &mut rng);
    for t in store.tensors_mut() {
        *t = Tensor::uniform(t.shape(), 1.0, &mut rng);
    }
    let q = Tensor::uniform(&[2, 3], 1.0, &mut rng);
    let v = Tensor::uniform(&[2, 4], 1.0, &mut rng);
    let g = Graph::new();
    let p = store.bind(&g);
    let out = g.value(glu_fuse(&g, &p, &params, g.constant(&q), g.constant(&v)).unwrap());
    for r in 0..2 {
        let joint: Vec<f64> = q.row(r).iter().chain(v.row(r)).copied().collect();
        let info = add_vec(&vm(&joint, &param(&store, "glu.info.w")), &vector(&store, "glu.info.b"));
        let gate = add_vec(&vm(&joint, &param(&store, "glu.gate.w")), &vector(&store, "glu.gate.b"));
        for j in 0..5 {
            assert!((out.at(r, j) - info[j] * sigmoid(gate[j])).abs() < 1e-12);
        }
    }

    // zero gate pre-activation halves the information vector
    let gw = store.find("glu.gate.w").unwrap();
    let gb = store.find("glu.gate.b").unwrap();
    *store.get_mut(gw) = Tensor::zeros(&[7, 5]);
    *store.get_mut(gb) = Tensor::zeros(&[5]);
    let g = Graph::new();
    let p = store.bind(&g);
    let out = g.value(glu_fuse(&g, &p, &params, g.constant(&q), g.constant(&v)).unwrap());
    let joint: Vec<f64> = q.row(0).iter().chain(v.row(0)).copied().collect();
    let info = add_vec(&vm(&joint, &param(&store, "glu.info.w")), &vector(&store, "glu.info.b"));
    for j in 0..5 {
        assert!((out.at(0, j) - 0.5 * info[j]).abs() < 1e-12);
    }
    *store.get_mut(gb) = Tensor::full(&[5], -800.0);
    let g = Graph::new();
    let p = store.bind(&g);
    let out = g.value(glu_fuse(&g, &p, &params, g.constant(&q), g.constant(&v)).unwrap());
    assert!(out.data().iter().all(|x| x.abs() < 1e-300));
    assert!(glu_fuse(&g, &p, &params, g.constant(&v), g.constant(&q)).is_err());
}

#[test]
fn every_primitive_passes_finite_differences() {
    for r in primitive_suite(5, CheckOptions::default()).unwrap() {
        assert!(r.passed, "{} max rel err {}", r.name, r.max_rel_error);
        assert!(r.entries > 0);
    }
}

#[test]
fn corrupted_gradient_is_caught() {
    let opts = CheckOptions {
        corrupt: true,
        ..CheckOptions::default()
    };
    let res = primitive_suite(5, opts).unwrap();
    assert!(res.iter().all(|r| !r.passed));
    let x = Tensor::vector(vec![0.5, -0.25]);
    let ok = check_fn("square", &[x], CheckOptions::default(), |g, v| Ok(g.sum(g.mul(v[0], v[0])?))).unwrap();
    assert!(ok.passed);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9, seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::uniform(&[rows, cols], 20.0, &mut rng);
        let g = Graph::new();
        let s = g.value(g.softmax_rows(g.constant(&t)));
        let shifted = g.value(g.softmax_rows(g.constant(&t.map(|x| x + shift))));
        for r in 0..rows {
            let sum: f64 = s.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(s.row(r).iter().all(|&x| x >= 0.0));
        }
        prop_assert!(s.max_abs_diff(&shifted) < 1e-9);
    }

    #[test]
    fn layer_norm_standardizes(d in 8usize..24, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::uniform(&[2, d], 3.0, &mut rng);
        let g = Graph::new();
        let y = g.value(g.layer_norm(g.constant(&t), g.constant(&Tensor::ones(&[d])), g.constant(&Tensor::zeros(&[d]))).unwrap());
        for r in 0..2 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
            prop_assert!(mean.abs() < 1e-7);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn log_softmax_is_finite_for_extreme_logits(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::uniform(&[2, 5], 1e4, &mut rng);
        let g = Graph::new();
        prop_assert!(g.value(g.log_softmax_rows(g.constant(&t))).is_finite());
        prop_assert!(g.value(g.ln(g.constant(&Tensor::zeros(&[3])))).is_finite());
    }
}
