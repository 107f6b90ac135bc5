use std::sync::Mutex;

use brgemm_core::cnn::{
    conv2d_forward, conv2d_forward_observed, conv2d_forward_reference, ConvSpec, ParallelStrategy, Partitioning,
};
use brgemm_core::parallel::max_workers;
use brgemm_core::tensor::{block_conv_tensors, max_rel_error, DenseTensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STRATEGIES: [Partitioning; 3] = [Partitioning::MinibatchFirst, Partitioning::TaskGrid, Partitioning::FeatureMapFirst];

fn tensors(spec: &ConvSpec, seed: u64) -> (DenseTensor, DenseTensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |shape: [usize; 4]| DenseTensor::from_fn(shape, |_| rng.gen_range(-1.0f32..=1.0)).unwrap();
    (u([spec.n, spec.c, spec.h, spec.w]), u([spec.k, spec.c, spec.r, spec.s]))
}

fn forward(spec: &ConvSpec, i: &DenseTensor, w: &DenseTensor, strategy: ParallelStrategy) -> DenseTensor {
    let (bi, bw) = block_conv_tensors(i, w, spec.b_c, spec.b_k).unwrap();
    conv2d_forward(spec, &bi, &bw, strategy).unwrap().to_dense()
}

fn spec_strategy() -> impl Strategy<Value = ConvSpec> {
    (
        1usize..3,
        prop::sample::select(vec![1usize, 3, 7]),
        1usize..3,
        prop::sample::select(vec![(4usize, 4usize), (8, 8), (16, 8), (64, 16), (3, 64), (32, 32)]),
        prop::sample::select(vec![1usize, 2, 4]),
        1usize..=16,
        1usize..=16,
        any::<bool>(),
    )
        .prop_filter_map("filter larger than input", |(n, r, stride, (c, k), bdiv, h, w, pad)| {
            let spec = ConvSpec::new(n, c, k, h, w, r, r, stride).ok()?;
            let spec = if pad { spec } else { spec.with_padding(0, 0).ok()? };
            spec.with_blocking((c / bdiv).max(1), (k / bdiv).max(1)).ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_reference(spec in spec_strategy(), seed in any::<u64>()) {
        let (i, w) = tensors(&spec, seed);
        let got = forward(&spec, &i, &w, ParallelStrategy::new(Partitioning::TaskGrid, 2));
        let want = conv2d_forward_reference(&spec, &i, &w).unwrap();
        prop_assert!(max_rel_error(&got, &want).unwrap() <= 1e-5);
    }

    #[test]
    fn strategies_and_workers_agree(spec in spec_strategy(), seed in any::<u64>()) {
        let (i, w) = tensors(&spec, seed);
        let base = forward(&spec, &i, &w, ParallelStrategy::new(Partitioning::MinibatchFirst, 1));
        for p in STRATEGIES {
            for workers in [1, 2, 3, 4] {
                prop_assert_eq!(&forward(&spec, &i, &w, ParallelStrategy::new(p, workers)), &base);
            }
        }
    }

    #[test]
    fn scaling_input_scales_output(spec in spec_strategy(), a in prop::sample::select(vec![0.5f32, 2.0, -1.0, -0.25, 8.0]), seed in any::<u64>()) {
        let (i, w) = tensors(&spec, seed);
        let s = ParallelStrategy::new(Partitioning::TaskGrid, 1);
        let base = forward(&spec, &i, &w, s);
        let scaled = forward(&spec, &i.map(|v| a * v), &w, s);
        prop_assert_eq!(scaled, base.map(|v| a * v));
    }
}

#[test]
fn general_scalar_linearity() {
    let spec = ConvSpec::new(2, 16, 16, 9, 9, 3, 3, 1).unwrap().with_blocking(8, 8).unwrap();
    let (i, w) = tensors(&spec, 4);
    let s = ParallelStrategy::new(Partitioning::TaskGrid, 1);
    let base = forward(&spec, &i, &w, s);
    let a = 0.37f32;
    let scaled = forward(&spec, &i.map(|v| a * v), &w, s);
    // rounding a*I perturbs each product by <= 2^-24 relative, so bound the error
    // by that fraction of the absolute-value convolution
    let abs = forward(&spec, &i.map(f32::abs), &w.map(f32::abs), s);
    for ((got, b), mag) in scaled.data().iter().zip(base.data()).zip(abs.data()) {
        let want = f64::from(a) * f64::from(*b);
        let bound = 1e-6 * want.abs() + 2.0 * f64::from(a) * f64::from(*mag) * f64::from(f32::EPSILON);
        assert!((f64::from(*got) - want).abs() <= bound, "{got} vs {want}");
    }
}

#[test]
fn bit_identical_across_max_workers() {
    let spec = ConvSpec::new(3, 32, 64, 10, 10, 3, 3, 2).unwrap().with_blocking(16, 16).unwrap();
    let (i, w) = tensors(&spec, 8);
    let base = forward(&spec, &i, &w, ParallelStrategy::new(Partitioning::TaskGrid, 1));
    for p in STRATEGIES {
        assert_eq!(forward(&spec, &i, &w, ParallelStrategy::new(p, max_workers())), base);
    }
}

#[test]
fn every_call_hides_fma_latency_or_is_flagged() {
    for (spec, b_q) in [
        (ConvSpec::new(1, 16, 64, 7, 7, 3, 3, 1).unwrap(), None),
        (ConvSpec::new(1, 16, 16, 7, 7, 1, 1, 1).unwrap(), Some(5)),
        (ConvSpec::new(1, 8, 4, 5, 5, 3, 3, 2).unwrap(), None),
    ] {
        let spec = spec.with_b_q(b_q).unwrap();
        let (i, w) = tensors(&spec, 1);
        let (bi, bw) = block_conv_tensors(&i, &w, spec.b_c, spec.b_k).unwrap();
        let calls = Mutex::new(Vec::new());
        conv2d_forward_observed(&spec, &bi, &bw, ParallelStrategy::new(Partitioning::TaskGrid, 2), &|c| {
            calls.lock().unwrap().push(c)
        })
        .unwrap();
        let calls = calls.into_inner().unwrap();
        assert!(!calls.is_empty());
        for c in calls {
            assert!(c.plan.hides_fma_latency() || c.plan.degraded);
            assert_eq!(c.plan.degraded, !c.plan.hides_fma_latency());
            assert_eq!(c.batch, spec.r * spec.s * spec.bc_blocks);
        }
    }
}

#[test]
fn q_tail_blocks_match_reference() {
    // Q = 7 with b_q = 3 leaves a one-pixel tail per row
    let spec = ConvSpec::new(2, 8, 8, 7, 7, 3, 3, 1).unwrap().with_blocking(4, 4).unwrap().with_b_q(Some(3)).unwrap();
    let (i, w) = tensors(&spec, 2);
    let got = forward(&spec, &i, &w, ParallelStrategy::new(Partitioning::FeatureMapFirst, 3));
    let want = conv2d_forward_reference(&spec, &i, &w).unwrap();
    assert!(max_rel_error(&got, &want).unwrap() <= 1e-5);
    let whole_rows = forward(&spec.with_b_q(None).unwrap(), &i, &w, ParallelStrategy::new(Partitioning::TaskGrid, 1));
    assert_eq!(got, whole_rows);
}
