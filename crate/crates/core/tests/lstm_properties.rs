use std::sync::Mutex;

use brgemm_core::lstm::{lstm_forward, lstm_forward_observed, lstm_forward_reference, DenseLstmWeights, LstmParams, WorkEvent};
use brgemm_core::parallel::max_workers;
use brgemm_core::tensor::{max_rel_error, DenseTensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    dense: DenseLstmWeights,
    x: DenseTensor,
    h0: DenseTensor,
    s0: DenseTensor,
}

fn case(t: usize, n: usize, c: usize, k: usize, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |shape: &[usize]| DenseTensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0f32..=1.0)).unwrap();
    let mut dense = DenseLstmWeights::zeros(c, k).unwrap();
    for g in 0..4 {
        dense.w[g] = u(&[k, c]);
        dense.r[g] = u(&[k, k]);
        dense.bias[g] = u(&[k]);
    }
    Case {
        x: u(&[t, n, c]),
        h0: u(&[n, k]),
        s0: u(&[n, k]),
        dense,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matches_reference(t in 1usize..9, nb in 1usize..5, b_n in 1usize..5, cb in 1usize..5, kb in 1usize..5, b in prop::sample::select(vec![4usize, 8, 16, 32]), seed in any::<u64>()) {
        let (n, c, k) = (nb * b_n, cb * b, kb * b);
        prop_assume!(n <= 16 && c <= 128 && k <= 128);
        let cs = case(t, n, c, k, seed);
        let params = LstmParams::from_dense(&cs.dense, b_n, b, b).unwrap();
        let got = lstm_forward(&params, &cs.x, &cs.h0, &cs.s0, 2).unwrap();
        let want = lstm_forward_reference(&cs.dense, &cs.x, &cs.h0, &cs.s0).unwrap();
        prop_assert!(max_rel_error(&got.h, &want.h).unwrap() <= 1e-5);
        prop_assert!(max_rel_error(&got.s, &want.s).unwrap() <= 1e-5);
    }

    #[test]
    fn truncation_reproduces_prefix(t in 2usize..7, cut in 1usize..6, seed in any::<u64>()) {
        let cut = cut.min(t - 1);
        let (n, c, k) = (4, 8, 8);
        let cs = case(t, n, c, k, seed);
        let params = LstmParams::from_dense(&cs.dense, 2, 4, 4).unwrap();
        let full = lstm_forward(&params, &cs.x, &cs.h0, &cs.s0, 1).unwrap();
        let x_cut = DenseTensor::new([cut, n, c], cs.x.data()[..cut * n * c].to_vec()).unwrap();
        let part = lstm_forward(&params, &x_cut, &cs.h0, &cs.s0, 1).unwrap();
        prop_assert_eq!(part.h.data(), &full.h.data()[..cut * n * k]);
        prop_assert_eq!(part.s.data(), &full.s.data()[..cut * n * k]);
    }
}

#[test]
fn bit_identical_across_worker_counts() {
    let cs = case(5, 12, 48, 32, 11);
    let params = LstmParams::from_dense(&cs.dense, 4, 16, 8).unwrap();
    let base = lstm_forward(&params, &cs.x, &cs.h0, &cs.s0, 1).unwrap();
    for workers in [2, 3, 4, max_workers(), 7] {
        let other = lstm_forward(&params, &cs.x, &cs.h0, &cs.s0, workers).unwrap();
        assert_eq!(other.h, base.h, "workers={workers}");
        assert_eq!(other.s, base.s, "workers={workers}");
    }
}

#[test]
fn gates_and_outputs_are_bounded() {
    let mut cs = case(4, 8, 16, 16, 3);
    // large weights push gates into saturation
    for g in 0..4 {
        cs.dense.w[g] = cs.dense.w[g].map(|v| v * 40.0);
    }
    let params = LstmParams::from_dense(&cs.dense, 4, 8, 8).unwrap().with_retained_gates(true);
    let out = lstm_forward(&params, &cs.x, &cs.h0, &cs.s0, 2).unwrap();
    let [i, c, f, o] = out.gates.expect("gates retained");
    for (name, g, lo) in [("i", &i, 0.0), ("f", &f, 0.0), ("o", &o, 0.0), ("c", &c, -1.0)] {
        assert!(g.data().iter().all(|&v| (lo..=1.0).contains(&v)), "gate {name} out of range");
    }
    assert!(out.h.data().iter().all(|v| v.abs() <= 1.0));
    assert!(out.s.data().iter().chain(out.h.data()).all(|v| v.is_finite()));
}

#[test]
fn weight_blocks_reused_across_minibatch_range() {
    let cs = case(3, 16, 16, 32, 5);
    // K_b = 4, N_b = 4: 16 items per step over 3 workers
    let params = LstmParams::from_dense(&cs.dense, 4, 8, 8).unwrap();
    let events = Mutex::new(Vec::<WorkEvent>::new());
    lstm_forward_observed(&params, &cs.x, &cs.h0, &cs.s0, 3, &|e| events.lock().unwrap().push(e)).unwrap();
    let events = events.into_inner().unwrap();
    assert_eq!(events.len(), 3 * 16);
    for step in 0..3 {
        for worker in 0..3 {
            let mine: Vec<_> = events.iter().filter(|e| e.step == step && e.worker == worker).collect();
            // one fetch of a W/R block row per distinct ib_k: each ib_k is a single run
            let mut runs: Vec<(usize, Vec<usize>)> = Vec::new();
            for e in &mine {
                match runs.last_mut() {
                    Some((k, ns)) if *k == e.ib_k => ns.push(e.ib_n),
                    _ => runs.push((e.ib_k, vec![e.ib_n])),
                }
            }
            let mut ks: Vec<_> = runs.iter().map(|r| r.0).collect();
            ks.dedup();
            assert_eq!(ks.len(), runs.len(), "step {step} worker {worker}: ib_k revisited");
            for (_, ns) in &runs {
                assert!(ns.windows(2).all(|w| w[1] == w[0] + 1), "ib_n not swept in order");
            }
        }
    }
}

#[test]
fn zero_weights_stay_at_zero() {
    let (t, n, c, k) = (6, 4, 8, 8);
    let dense = DenseLstmWeights::zeros(c, k).unwrap();
    let x = case(t, n, c, k, 9).x;
    let zeros = DenseTensor::zeros([n, k]).unwrap();
    let params = LstmParams::from_dense(&dense, 2, 4, 4).unwrap();
    let out = lstm_forward(&params, &x, &zeros, &zeros, 2).unwrap();
    assert!(out.h.data().iter().chain(out.s.data()).all(|&v| v == 0.0));
}
