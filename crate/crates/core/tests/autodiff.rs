use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trafficgen::encoder::{Encoder, EncoderConfig};
use trafficgen::tensor::{Graph, ParamStore, Tensor};
use trafficgen::vectorize::FEATURE_WIDTH;

fn random_features(rng: &mut ChaCha8Rng, rows: usize) -> Tensor<f64> {
    let data: Vec<f64> = (0..rows * FEATURE_WIDTH).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::new(&[rows, FEATURE_WIDTH], data)
}

fn encoder<T: trafficgen::tensor::Real>(width: usize, blocks: usize, seed: u64) -> (ParamStore<T>, Encoder) {
    let mut store = ParamStore::new();
    let cfg = EncoderConfig {
        width,
        blocks,
        hidden: vec![width],
    };
    let enc = Encoder::new(&mut store, "enc", cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    (store, enc)
}

/// Scalar objective mixing both encoder outputs so every path is exercised.
fn objective(enc: &Encoder, store: &ParamStore<f64>, x: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let (v, c) = enc.encode(&mut g, store, xv).unwrap();
    let w = g.input(weights.clone());
    let vt = g.tanh(v);
    let wv = g.matmul(vt, w).unwrap();
    let a = g.sum(wv);
    let b = g.square(c);
    let b = g.mean(b);
    let loss = g.add(a, b).unwrap();
    g.value(loss).item()
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[test]
fn five_block_encoder_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let (store, enc) = encoder::<f64>(6, 5, trial);
        let rows = rng.random_range(2..6);
        let x = random_features(&mut rng, rows);
        let weights = Tensor::new(&[6, 1], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect());

        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let (v, c) = enc.encode(&mut g, &store, xv).unwrap();
        let w = g.input(weights.clone());
        let vt = g.tanh(v);
        let wv = g.matmul(vt, w).unwrap();
        let a = g.sum(wv);
        let b = g.square(c);
        let b = g.mean(b);
        let loss = g.add(a, b).unwrap();
        let grads = g.backward(loss);

        let h = 1e-6;
        let analytic = grads.wrt(xv).unwrap().data().to_vec();
        let numeric: Vec<f64> = (0..x.len())
            .map(|i| {
                let mut up = x.clone();
                up.data_mut()[i] += h;
                let mut down = x.clone();
                down.data_mut()[i] -= h;
                (objective(&enc, &store, &up, &weights) - objective(&enc, &store, &down, &weights)) / (2.0 * h)
            })
            .collect();
        let err = rel_error(&analytic, &numeric);
        assert!(err < 1e-4, "trial {trial}: input gradient error {err}");

        let param_grads = grads.param_grads(&store);
        for id in store.ids().step_by(3) {
            let analytic = param_grads[id.index()].as_ref().map(|t| t.data().to_vec()).unwrap_or_default();
            let n = store.tensor(id).len();
            let numeric: Vec<f64> = (0..n)
                .map(|i| {
                    let mut up = store.clone();
                    up.tensor_mut(id).data_mut()[i] += h;
                    let mut down = store.clone();
                    down.tensor_mut(id).data_mut()[i] -= h;
                    (objective(&enc, &up, &x, &weights) - objective(&enc, &down, &x, &weights)) / (2.0 * h)
                })
                .collect();
            let analytic = if analytic.is_empty() { vec![0.0; n] } else { analytic };
            let err = rel_error(&analytic, &numeric);
            assert!(err < 1e-4, "trial {trial}: gradient of {} off by {err}", store.name(id));
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let (store, enc) = encoder::<f32>(16, 3, 9);
        let x = random_features(&mut ChaCha8Rng::seed_from_u64(1), 40).cast::<f32>();
        let mut g = Graph::new();
        let xv = g.input(x);
        let (v, c) = enc.encode(&mut g, &store, xv).unwrap();
        (g.value(v).clone(), g.value(c).clone())
    };
    let (v1, c1) = run();
    let (v2, c2) = run();
    assert_eq!(v1.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), v2.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    assert_eq!(c1.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), c2.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

#[test]
fn extreme_inputs_stay_finite() {
    let mut g: Graph<f32> = Graph::new();
    let x = g.input(Tensor::new(&[2, 3], vec![1e4, -1e4, 0.0, 80.0, 88.0, -1e30]));
    let sm = g.softmax(x);
    let lsm = g.log_softmax(x);
    let lse = g.logsumexp(x);
    let zero = g.input(Tensor::zeros(&[1, 3]));
    let log0 = g.log(zero);
    let parts = [sm, lsm, lse, log0];
    for v in parts {
        assert!(g.value(v).data().iter().all(|x| x.is_finite()), "{:?}", g.value(v));
    }
    let s1 = g.sum(lsm);
    let s2 = g.sum(log0);
    let total = g.add(s1, s2).unwrap();
    let grads = g.backward(total);
    assert!(grads.wrt(x).unwrap().all_finite());
    let rows = g.value(sm);
    for r in 0..2 {
        let s: f32 = rows.row_slice(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn duplicated_regions_encode_identically() {
    let (store, enc) = encoder::<f32>(16, 5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = random_features(&mut rng, 6).cast::<f32>();
    let mut data = base.data().to_vec();
    data.extend_from_slice(base.row_slice(2));
    let x = Tensor::new(&[7, FEATURE_WIDTH], data);
    let mut g = Graph::new();
    let xv = g.input(x);
    let (v, _) = enc.encode(&mut g, &store, xv).unwrap();
    assert_eq!(g.value(v).row_slice(2), g.value(v).row_slice(6));
}

#[test]
fn encoding_a_thousand_regions_is_fast() {
    let (store, enc) = encoder::<f32>(64, 5, 4);
    let x = random_features(&mut ChaCha8Rng::seed_from_u64(3), 1000).cast::<f32>();
    let mut best = Duration::MAX;
    for _ in 0..7 {
        let start = Instant::now();
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let (v, _) = enc.encode(&mut g, &store, xv).unwrap();
        std::hint::black_box(g.value(v));
        best = best.min(start.elapsed());
    }
    assert!(best < Duration::from_millis(50), "best of 7 runs took {best:?}");
}
