//! Sequential (one worker, inline path) against rayon-parallel runs of each
//! primitive, plus the kernel against its non-reducing baselines.

use std::hint::black_box;

use brgemm_core::activation::Activation;
use brgemm_core::brgemm::{batched_gemm, brgemm, plan_tiles, BrgemmSpec, Target};
use brgemm_core::cnn::{choose_strategy, conv2d_forward, conv2d_forward_per_block, ConvSpec};
use brgemm_core::fc::{fc_forward, FcParams};
use brgemm_core::lstm::{lstm_forward, DenseLstmWeights, LstmParams};
use brgemm_core::parallel::max_workers;
use brgemm_core::tensor::{block_conv_tensors, BlockedTensor, DenseTensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
    DenseTensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0f32..=1.0)).unwrap()
}

fn modes() -> [(&'static str, usize); 2] {
    [("sequential", 1), ("parallel", max_workers())]
}

fn conv(c: &mut Criterion) {
    let spec = ConvSpec::new(2, 64, 64, 28, 28, 3, 3, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = uniform(&mut rng, &[spec.n, spec.c, spec.h, spec.w]);
    let weight = uniform(&mut rng, &[spec.k, spec.c, spec.r, spec.s]);
    let (bi, bw) = block_conv_tensors(&input, &weight, spec.b_c, spec.b_k).unwrap();
    let flops = 2 * (spec.n * spec.k * spec.c * spec.r * spec.s * spec.p() * spec.q()) as u64;

    let mut g = c.benchmark_group("conv_3x3_c64_28x28_n2");
    g.throughput(Throughput::Elements(flops));
    for (name, workers) in modes() {
        let strategy = choose_strategy(&spec, workers);
        g.bench_function(BenchmarkId::new("batch_reduce", name), |b| {
            b.iter(|| black_box(conv2d_forward(&spec, &bi, &bw, strategy).unwrap()))
        });
    }
    let strategy = choose_strategy(&spec, 1);
    g.bench_function(BenchmarkId::new("per_block_gemm", "sequential"), |b| {
        b.iter(|| black_box(conv2d_forward_per_block(&spec, &bi, &bw, strategy).unwrap()))
    });
    g.finish();
}

fn lstm(c: &mut Criterion) {
    let (t, n, ck) = (4, 16, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut dense = DenseLstmWeights::zeros(ck, ck).unwrap();
    for gate in 0..4 {
        dense.w[gate] = uniform(&mut rng, &[ck, ck]);
        dense.r[gate] = uniform(&mut rng, &[ck, ck]);
        dense.bias[gate] = uniform(&mut rng, &[ck]);
    }
    let params = LstmParams::from_dense(&dense, 8, 64, 64).unwrap();
    let x = uniform(&mut rng, &[t, n, ck]);
    let h0 = DenseTensor::zeros([n, ck]).unwrap();

    let mut g = c.benchmark_group("lstm_t4_n16_c128");
    g.throughput(Throughput::Elements((2 * t * n * 8 * ck * ck) as u64));
    for (name, workers) in modes() {
        g.bench_function(name, |b| b.iter(|| black_box(lstm_forward(&params, &x, &h0, &h0, workers).unwrap())));
    }
    g.finish();
}

fn fc(c: &mut Criterion) {
    let (n, ck) = (64, 512);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = uniform(&mut rng, &[ck, ck]);
    let params = FcParams::from_dense(&w, 16, 64, 64, Activation::Relu).unwrap();
    let x = BlockedTensor::from_dense(&uniform(&mut rng, &[n, ck]), params.input_layout(n).unwrap()).unwrap();

    let mut g = c.benchmark_group("fc_n64_c512");
    g.throughput(Throughput::Elements((2 * n * ck * ck) as u64));
    for (name, workers) in modes() {
        g.bench_function(name, |b| b.iter(|| black_box(fc_forward(&params, &x, workers).unwrap())));
    }
    g.finish();
}

fn kernel(c: &mut Criterion) {
    let (m, n, k, batch) = (64, 48, 64, 16);
    let spec = BrgemmSpec::new(m, n, k).with_batch(batch).with_scaling(1.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a: Vec<Vec<f32>> = (0..batch).map(|_| (0..m * k).map(|_| rng.gen_range(-1.0..=1.0)).collect()).collect();
    let b: Vec<Vec<f32>> = (0..batch).map(|_| (0..k * n).map(|_| rng.gen_range(-1.0..=1.0)).collect()).collect();
    let al: Vec<&[f32]> = a.iter().map(Vec::as_slice).collect();
    let bl: Vec<&[f32]> = b.iter().map(Vec::as_slice).collect();
    let t = Target::default();
    let plan = plan_tiles(m, n, t.vlen, t.fma_latency, t.budget);

    let mut g = c.benchmark_group("brgemm_64x48x64_batch16");
    g.throughput(Throughput::Elements(spec.flops()));
    let mut out = vec![0f32; m * n];
    g.bench_function("batch_reduce", |bench| {
        bench.iter(|| {
            brgemm(&al, &bl, &mut out, &spec, &plan).unwrap();
            black_box(&out);
        })
    });
    let mut scratch = vec![0f32; batch * m * n];
    g.bench_function("batched_then_sum", |bench| {
        bench.iter(|| {
            let mut outs: Vec<&mut [f32]> = scratch.chunks_exact_mut(m * n).collect();
            batched_gemm(&al, &bl, &mut outs, &spec).unwrap();
            out.fill(0.0);
            for o in &outs {
                out.iter_mut().zip(o.iter()).for_each(|(c, v)| *c += v);
            }
            black_box(&out);
        })
    });
    g.finish();
}

criterion_group!(benches, conv, lstm, fc, kernel);
criterion_main!(benches);
