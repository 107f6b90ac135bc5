//! Workload runner: optional oracle check, timed loop, CSV rows.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use brgemm_core::activation::Activation;
use brgemm_core::brgemm::{batched_gemm, brgemm, brgemm_reference, BrgemmSpec, KernelConfig};
use brgemm_core::cnn::{choose_strategy, conv2d_forward, conv2d_forward_reference};
use brgemm_core::fc::{fc_forward, fc_forward_reference, FcParams};
use brgemm_core::lstm::{lstm_forward, lstm_forward_reference, DenseLstmWeights, LstmParams};
use brgemm_core::parallel::run_partitioned;
use brgemm_core::tensor::{block_conv_tensors, max_rel_error, max_rel_error_slices, BlockedLayout, BlockedTensor, DenseTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::flops::{flops_conv, flops_fc, flops_lstm_fwd};
use crate::table::resnet50_table;
use crate::BenchError;

/// Max relative error accepted by `--verify`.
pub const VERIFY_TOLERANCE: f64 = 1e-5;

pub const CSV_HEADER: [&str; 9] = [
    "workload",
    "id",
    "N",
    "workers",
    "flops",
    "seconds_mean",
    "seconds_min",
    "gflops",
    "verified",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Workload {
    /// ResNet-50 table rows by ID.
    Conv { layers: Vec<usize> },
    Lstm { c: usize, k: usize, t: usize },
    Fc { c: usize, k: usize, activation: Activation },
    /// `N` independent batch-reduce calls. With `baseline`, also the same sums through
    /// batched GEMM into per-pair outputs followed by an f32 add; that path rounds
    /// every partial product, so it is not expected to pass `--verify`.
    Brgemm { m: usize, n: usize, k: usize, batch: usize, baseline: bool },
}

impl Workload {
    pub fn name(&self) -> &'static str {
        match self {
            Workload::Conv { .. } => "conv",
            Workload::Lstm { .. } => "lstm",
            Workload::Fc { .. } => "fc",
            Workload::Brgemm { .. } => "brgemm",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub workload: Workload,
    pub minibatch: usize,
    pub workers: usize,
    /// Timed iterations; 0 skips timing entirely.
    pub iters: usize,
    pub verify: bool,
    /// Time layout conversions together with the primitive.
    pub include_reformat: bool,
    pub seed: u64,
    pub dump: Option<PathBuf>,
    pub kernel: KernelConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub workload: String,
    pub id: usize,
    pub n: usize,
    pub workers: usize,
    pub flops: u64,
    pub seconds_mean: f64,
    pub seconds_min: f64,
    pub iterations: usize,
    /// `None` when verification did not run.
    pub verified: Option<bool>,
}

impl BenchResult {
    /// FLOP/s over the mean time; 0 when nothing was timed.
    pub fn rate(&self) -> f64 {
        if self.seconds_mean > 0.0 {
            self.flops as f64 / self.seconds_mean
        } else {
            0.0
        }
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    workload: &'a str,
    id: usize,
    #[serde(rename = "N")]
    n: usize,
    workers: usize,
    flops: u64,
    seconds_mean: f64,
    seconds_min: f64,
    gflops: f64,
    verified: &'static str,
}

pub fn write_csv<W: Write>(results: &[BenchResult], out: W) -> Result<(), BenchError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in results {
        w.serialize(CsvRow {
            workload: &r.workload,
            id: r.id,
            n: r.n,
            workers: r.workers,
            flops: r.flops,
            seconds_mean: r.seconds_mean,
            seconds_min: r.seconds_min,
            gflops: r.rate() / 1e9,
            verified: match r.verified {
                Some(true) => "true",
                Some(false) => "false",
                None => "skipped",
            },
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every selected workload in `cfg` and returns one result per row.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<BenchResult>, BenchError> {
    if cfg.minibatch == 0 || cfg.workers == 0 {
        return Err(BenchError::InvalidConfig("minibatch and workers must be >= 1".into()));
    }
    if let Some(dir) = &cfg.dump {
        std::fs::create_dir_all(dir)?;
    }
    match &cfg.workload {
        Workload::Conv { layers } => layers.iter().map(|&id| run_conv(cfg, id)).collect(),
        &Workload::Lstm { c, k, t } => Ok(vec![run_lstm(cfg, c, k, t)?]),
        &Workload::Fc { c, k, activation } => Ok(vec![run_fc(cfg, c, k, activation)?]),
        &Workload::Brgemm { m, n, k, batch, baseline } => run_brgemm(cfg, m, n, k, batch, baseline),
    }
}

/// Largest divisor of `extent` not above `preferred`.
pub fn pick_block(extent: usize, preferred: usize) -> usize {
    (1..=preferred.min(extent).max(1)).rev().find(|d| extent.is_multiple_of(*d)).unwrap_or(1)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> DenseTensor {
    DenseTensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0f32..=1.0) * scale).expect("non-empty shape")
}

/// Mean and min seconds of `iters` timed runs after one untimed warm-up.
fn measure(iters: usize, mut f: impl FnMut() -> Result<(), BenchError>) -> Result<(f64, f64), BenchError> {
    if iters == 0 {
        return Ok((0.0, 0.0));
    }
    f()?;
    let (mut total, mut min) = (0f64, f64::INFINITY);
    for _ in 0..iters {
        let t0 = Instant::now();
        f()?;
        let dt = t0.elapsed().as_secs_f64();
        total += dt;
        min = min.min(dt);
    }
    Ok((total / iters as f64, min))
}

fn dump(dir: &Option<PathBuf>, tag: &str, tensors: &[(&str, &DenseTensor)]) -> Result<(), BenchError> {
    let Some(dir) = dir else { return Ok(()) };
    for (name, t) in tensors {
        let path: PathBuf = Path::new(dir).join(format!("{tag}_{name}.bin"));
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        t.write_to(&mut file)?;
        file.flush()?;
    }
    Ok(())
}

fn result(cfg: &SuiteConfig, workload: &str, id: usize, flops: u64, timing: (f64, f64), verified: Option<bool>) -> BenchResult {
    BenchResult {
        workload: workload.to_string(),
        id,
        n: cfg.minibatch,
        workers: cfg.workers,
        flops,
        seconds_mean: timing.0,
        seconds_min: timing.1,
        iterations: cfg.iters,
        verified,
    }
}

fn run_conv(cfg: &SuiteConfig, id: usize) -> Result<BenchResult, BenchError> {
    let rec = resnet50_table()
        .into_iter()
        .find(|r| r.id == id)
        .ok_or_else(|| BenchError::InvalidConfig(format!("no layer {id}")))?;
    let spec = rec.with_minibatch(cfg.minibatch)?.with_kernel(cfg.kernel);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(id as u64));
    let input = uniform(&mut rng, &[spec.n, spec.c, spec.h, spec.w], 1.0);
    let weight = uniform(&mut rng, &[spec.k, spec.c, spec.r, spec.s], 1.0);
    let (bi, bw) = block_conv_tensors(&input, &weight, spec.b_c, spec.b_k)?;
    let strategy = choose_strategy(&spec, cfg.workers);

    let mut verified = None;
    if cfg.verify || cfg.dump.is_some() {
        let out = conv2d_forward(&spec, &bi, &bw, strategy)?.to_dense();
        if cfg.verify {
            let want = conv2d_forward_reference(&spec, &input, &weight)?;
            verified = Some(max_rel_error(&out, &want)? <= VERIFY_TOLERANCE);
        }
        dump(&cfg.dump, &format!("conv_{id}"), &[("input", &input), ("weight", &weight), ("output", &out)])?;
    }

    let timing = measure(cfg.iters, || {
        if cfg.include_reformat {
            let (bi, bw) = block_conv_tensors(&input, &weight, spec.b_c, spec.b_k)?;
            std::hint::black_box(conv2d_forward(&spec, &bi, &bw, strategy)?.to_dense());
        } else {
            std::hint::black_box(conv2d_forward(&spec, &bi, &bw, strategy)?);
        }
        Ok(())
    })?;
    Ok(result(cfg, "conv", id, flops_conv(&spec, spec.n), timing, verified))
}

fn run_lstm(cfg: &SuiteConfig, c: usize, k: usize, t: usize) -> Result<BenchResult, BenchError> {
    let n = cfg.minibatch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 1.0 / ((c + k) as f32).sqrt();
    let mut dense = DenseLstmWeights::zeros(c, k)?;
    for g in 0..4 {
        dense.w[g] = uniform(&mut rng, &[k, c], scale);
        dense.r[g] = uniform(&mut rng, &[k, k], scale);
        dense.bias[g] = uniform(&mut rng, &[k], scale);
    }
    let x = uniform(&mut rng, &[t, n, c], 1.0);
    let h0 = uniform(&mut rng, &[n, k], 1.0);
    let s0 = uniform(&mut rng, &[n, k], 1.0);
    let (b_n, b_c, b_k) = (pick_block(n, 24), pick_block(c, 64), pick_block(k, 64));
    let params = LstmParams::from_dense(&dense, b_n, b_c, b_k)?.with_kernel(cfg.kernel);

    let mut verified = None;
    if cfg.verify || cfg.dump.is_some() {
        let out = lstm_forward(&params, &x, &h0, &s0, cfg.workers)?;
        if cfg.verify {
            let want = lstm_forward_reference(&dense, &x, &h0, &s0)?;
            let err = max_rel_error(&out.h, &want.h)?.max(max_rel_error(&out.s, &want.s)?);
            verified = Some(err <= VERIFY_TOLERANCE);
        }
        dump(&cfg.dump, "lstm", &[("x", &x), ("h", &out.h), ("s", &out.s)])?;
    }

    let timing = measure(cfg.iters, || {
        let p = if cfg.include_reformat {
            LstmParams::from_dense(&dense, b_n, b_c, b_k)?.with_kernel(cfg.kernel)
        } else {
            params.clone()
        };
        std::hint::black_box(lstm_forward(&p, &x, &h0, &s0, cfg.workers)?);
        Ok(())
    })?;
    Ok(result(cfg, "lstm", 0, flops_lstm_fwd(t, n, c, k), timing, verified))
}

fn run_fc(cfg: &SuiteConfig, c: usize, k: usize, activation: Activation) -> Result<BenchResult, BenchError> {
    let n = cfg.minibatch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = uniform(&mut rng, &[k, c], 1.0);
    let x_nc = uniform(&mut rng, &[n, c], 1.0);
    let (b_n, b_c, b_k) = (pick_block(n, 24), pick_block(c, 64), pick_block(k, 64));
    let params = FcParams::from_dense(&w, b_n, b_c, b_k, activation)?.with_kernel(cfg.kernel);
    let layout = BlockedLayout::fc_activation(n, c, b_n, b_c)?;
    let x = BlockedTensor::from_dense(&x_nc, layout.clone())?;

    let mut verified = None;
    if cfg.verify || cfg.dump.is_some() {
        let y = fc_forward(&params, &x, cfg.workers)?.to_dense().transpose2d()?;
        if cfg.verify {
            let want = fc_forward_reference(&w, &x_nc.transpose2d()?, activation)?;
            verified = Some(max_rel_error(&y, &want)? <= VERIFY_TOLERANCE);
        }
        dump(&cfg.dump, "fc", &[("weight", &w), ("x", &x_nc), ("y", &y)])?;
    }

    let timing = measure(cfg.iters, || {
        if cfg.include_reformat {
            let p = FcParams::from_dense(&w, b_n, b_c, b_k, activation)?.with_kernel(cfg.kernel);
            let x = BlockedTensor::from_dense(&x_nc, layout.clone())?;
            std::hint::black_box(fc_forward(&p, &x, cfg.workers)?.to_dense());
        } else {
            std::hint::black_box(fc_forward(&params, &x, cfg.workers)?);
        }
        Ok(())
    })?;
    Ok(result(cfg, "fc", 0, flops_fc(n, c, k), timing, verified))
}

fn run_brgemm(
    cfg: &SuiteConfig,
    m: usize,
    n: usize,
    k: usize,
    batch: usize,
    baseline: bool,
) -> Result<Vec<BenchResult>, BenchError> {
    let calls = cfg.minibatch;
    let spec = BrgemmSpec::new(m, n, k).with_batch(batch).with_scaling(1.0, 0.0);
    spec.validate()?;
    let plan = cfg.kernel.plan(m, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a: Vec<f32> = (0..batch * m * k).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
    let b: Vec<f32> = (0..calls * batch * k * n).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
    let a_blocks: Vec<&[f32]> = a.chunks_exact(m * k).collect();
    let b_lists: Vec<Vec<&[f32]>> = b.chunks_exact(batch * k * n).map(|blk| blk.chunks_exact(k * n).collect()).collect();
    let flops = spec.flops() * calls as u64;

    let reduce = |c: &mut [f32]| -> Result<(), BenchError> {
        let failed = std::sync::Mutex::new(None);
        let items: Vec<_> = c.chunks_exact_mut(m * n).zip(&b_lists).collect();
        run_partitioned(cfg.workers, items, |_, (c, bl)| {
            if let Err(e) = brgemm(&a_blocks, bl, c, &spec, &plan) {
                failed.lock().unwrap().get_or_insert(e);
            }
        });
        match failed.into_inner().unwrap() {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    };
    let batched = |c: &mut [f32], scratch: &mut [f32]| -> Result<(), BenchError> {
        let failed = std::sync::Mutex::new(None);
        let items: Vec<_> = c
            .chunks_exact_mut(m * n)
            .zip(scratch.chunks_exact_mut(batch * m * n))
            .zip(&b_lists)
            .collect();
        run_partitioned(cfg.workers, items, |_, ((c, scratch), bl)| {
            let mut outs: Vec<&mut [f32]> = scratch.chunks_exact_mut(m * n).collect();
            if let Err(e) = batched_gemm(&a_blocks, bl, &mut outs, &spec) {
                failed.lock().unwrap().get_or_insert(e);
                return;
            }
            c.fill(0.0);
            for o in &outs {
                c.iter_mut().zip(o.iter()).for_each(|(c, o)| *c += o);
            }
        });
        match failed.into_inner().unwrap() {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    };

    let mut c = vec![0f32; calls * m * n];
    let mut c_base = vec![0f32; calls * m * n];
    let mut scratch = vec![0f32; if baseline { calls * batch * m * n } else { 0 }];
    let (mut ok_reduce, mut ok_batched) = (None, None);
    if cfg.verify || cfg.dump.is_some() {
        reduce(&mut c)?;
        if baseline {
            batched(&mut c_base, &mut scratch)?;
        }
        if cfg.verify {
            let mut want = vec![0f32; calls * m * n];
            for (w, bl) in want.chunks_exact_mut(m * n).zip(&b_lists) {
                brgemm_reference(&a_blocks, bl, w, &spec)?;
            }
            ok_reduce = Some(max_rel_error_slices(&c, &want) <= VERIFY_TOLERANCE);
            if baseline {
                ok_batched = Some(max_rel_error_slices(&c_base, &want) <= VERIFY_TOLERANCE);
            }
        }
        let c_dense = DenseTensor::new([calls, n, m], c.clone())?;
        dump(&cfg.dump, "brgemm", &[("c", &c_dense)])?;
    }
    let t_reduce = measure(cfg.iters, || reduce(&mut c))?;
    let mut rows = vec![result(cfg, "brgemm", 0, flops, t_reduce, ok_reduce)];
    if baseline {
        let t_batched = measure(cfg.iters, || batched(&mut c_base, &mut scratch))?;
        rows.push(result(cfg, "batched_gemm", 0, flops, t_batched, ok_batched));
    }
    Ok(rows)
}
