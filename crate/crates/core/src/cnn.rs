//! Direct convolution forward pass over blocked layouts.
//!
//! Layouts: input `I[N][C_b][H][W][b_c]`, weight `W[K_b][C_b][R][S][b_c][b_k]`,
//! output `O[N][K_b][P][Q][b_k]`. Every output task `(n, k_b, oj, oib)` is one
//! `b_k x b_q` block of O produced by batch-reduce calls of length `R * S * B_c`
//! whose B blocks are input rows with leading dimension `stride * b_c`.

use crate::brgemm::{brgemm, BrgemmSpec, KernelConfig, TilePlan};
use crate::error::{Error, Result};
use crate::parallel::run_partitioned;
use crate::tensor::{pad_spatial, BlockedLayout, BlockedTensor, DenseTensor};

/// Default channel block.
pub const DEFAULT_BLOCK: usize = 64;
/// Cap on the collapsed pixel block of 1x1 unit-stride layers.
pub const MAX_COLLAPSED_BQ: usize = 256;
/// Opt-in per-call weight slice budget for [`ConvSpec::with_bc_cache_budget`].
pub const DEFAULT_BC_CACHE_BUDGET: usize = 512 << 10;
/// Weight size above which tasks are split by output feature maps first.
pub const DEFAULT_WEIGHT_CACHE_BUDGET: usize = 1 << 20;

/// Problem shape plus blocking of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub n: usize,
    pub c: usize,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub r: usize,
    pub s: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub b_c: usize,
    pub b_k: usize,
    /// Output pixels per batch-reduce call; `None` picks automatically.
    pub b_q: Option<usize>,
    /// Input-channel blocks folded into one batch-reduce call (`B_c`).
    pub bc_blocks: usize,
    /// Treat `P x Q` as one pixel dimension when `R = S = stride = 1` and no padding.
    pub collapse: bool,
    pub kernel: KernelConfig,
}

impl ConvSpec {
    /// Same padding (`(R-1)/2`, `(S-1)/2`) and default blocking.
    pub fn new(n: usize, c: usize, k: usize, h: usize, w: usize, r: usize, s: usize, stride: usize) -> Result<Self> {
        let b_c = DEFAULT_BLOCK.min(c).max(1);
        let b_k = DEFAULT_BLOCK.min(k).max(1);
        let spec = Self {
            n,
            c,
            k,
            h,
            w,
            r,
            s,
            stride,
            pad_h: r.saturating_sub(1) / 2,
            pad_w: s.saturating_sub(1) / 2,
            b_c,
            b_k,
            b_q: None,
            bc_blocks: if b_c > 0 { c / b_c } else { 0 },
            collapse: true,
            kernel: KernelConfig::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_padding(mut self, pad_h: usize, pad_w: usize) -> Result<Self> {
        self.pad_h = pad_h;
        self.pad_w = pad_w;
        self.validate()?;
        Ok(self)
    }

    /// Block factors, clamped to the channel extents; `B_c` resets to all of `C_b`.
    pub fn with_blocking(mut self, b_c: usize, b_k: usize) -> Result<Self> {
        self.b_c = b_c.min(self.c).max(1);
        self.b_k = b_k.min(self.k).max(1);
        self.bc_blocks = self.c / self.b_c;
        self.validate()?;
        Ok(self)
    }

    pub fn with_b_q(mut self, b_q: Option<usize>) -> Result<Self> {
        self.b_q = b_q;
        self.validate()?;
        Ok(self)
    }

    pub fn with_bc_blocks(mut self, bc_blocks: usize) -> Result<Self> {
        self.bc_blocks = bc_blocks;
        self.validate()?;
        Ok(self)
    }

    /// Largest `B_c` dividing `C_b` whose weight slice per call fits `bytes`.
    pub fn with_bc_cache_budget(self, bytes: usize) -> Result<Self> {
        let per_block = self.r * self.s * self.b_c * self.b_k * 4;
        let c_b = self.c_blocks();
        let bc = (1..=c_b)
            .rev()
            .find(|&d| c_b.is_multiple_of(d) && d * per_block <= bytes)
            .unwrap_or(1);
        self.with_bc_blocks(bc)
    }

    pub fn with_collapse(mut self, collapse: bool) -> Self {
        self.collapse = collapse;
        self
    }

    pub fn with_kernel(mut self, kernel: KernelConfig) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn p(&self) -> usize {
        (self.h + 2 * self.pad_h - self.r) / self.stride + 1
    }

    pub fn q(&self) -> usize {
        (self.w + 2 * self.pad_w - self.s) / self.stride + 1
    }

    pub fn c_blocks(&self) -> usize {
        self.c / self.b_c
    }

    pub fn k_blocks(&self) -> usize {
        self.k / self.b_k
    }

    pub fn weight_bytes(&self) -> usize {
        self.k * self.c * self.r * self.s * 4
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("N", self.n),
            ("C", self.c),
            ("K", self.k),
            ("H", self.h),
            ("W", self.w),
            ("R", self.r),
            ("S", self.s),
            ("stride", self.stride),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConv(format!("{name} must be >= 1")));
        }
        if self.h + 2 * self.pad_h < self.r || self.w + 2 * self.pad_w < self.s {
            return Err(Error::InvalidConv(format!(
                "{}x{} filter larger than padded {}x{} input",
                self.r,
                self.s,
                self.h + 2 * self.pad_h,
                self.w + 2 * self.pad_w
            )));
        }
        for (dim, extent, block) in [("C", self.c, self.b_c), ("K", self.k, self.b_k)] {
            if block == 0 || extent % block != 0 {
                return Err(Error::Divisibility { dim, extent, block });
            }
        }
        if self.bc_blocks == 0 || !self.c_blocks().is_multiple_of(self.bc_blocks) {
            return Err(Error::Divisibility {
                dim: "C_b",
                extent: self.c_blocks(),
                block: self.bc_blocks,
            });
        }
        if self.b_q == Some(0) {
            return Err(Error::InvalidConv("b_q must be >= 1".into()));
        }
        Ok(())
    }

    /// Register tile used for every batch-reduce call (`m = b_k`, `n = b_q`).
    pub fn tile_plan(&self) -> Result<TilePlan> {
        let loops = collapse_pixels(self);
        self.kernel.plan(self.b_k, loops.b_q)
    }

    pub fn input_layout(&self) -> Result<BlockedLayout> {
        BlockedLayout::conv_input(self.n, self.c, self.h, self.w, self.b_c)
    }

    pub fn weight_layout(&self) -> Result<BlockedLayout> {
        BlockedLayout::conv_weight(self.k, self.c, self.r, self.s, self.b_c, self.b_k)
    }

    pub fn output_layout(&self) -> Result<BlockedLayout> {
        BlockedLayout::conv_output(self.n, self.k, self.p(), self.q(), self.b_k)
    }
}

/// Effective output-pixel loop: `rows x cols` pixels, `cols` blocked by `b_q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelLoops {
    /// Whether `P x Q` was collapsed into one dimension.
    pub collapsed: bool,
    pub rows: usize,
    pub cols: usize,
    pub b_q: usize,
}

impl PixelLoops {
    pub fn col_blocks(&self) -> usize {
        self.cols.div_ceil(self.b_q)
    }
}

/// Collapses `P x Q` into a single pixel dimension of extent `P * Q` for 1x1,
/// unit-stride, unpadded layers (spatial accesses are then sequential). Any other
/// layer, or `spec.collapse == false`, gets the plain `P` rows of `Q` pixels.
pub fn collapse_pixels(spec: &ConvSpec) -> PixelLoops {
    let (p, q) = (spec.p(), spec.q());
    let eligible = spec.r == 1 && spec.s == 1 && spec.stride == 1 && spec.pad_h == 0 && spec.pad_w == 0;
    if spec.collapse && eligible {
        let cols = p * q;
        let b_q = spec.b_q.unwrap_or_else(|| {
            let n_b = spec
                .kernel
                .plan(spec.b_k, cols)
                .map(|plan| plan.n_b)
                .unwrap_or(1);
            (MAX_COLLAPSED_BQ / n_b * n_b).max(n_b).min(cols)
        });
        PixelLoops {
            collapsed: true,
            rows: 1,
            cols,
            b_q: b_q.min(cols),
        }
    } else {
        PixelLoops {
            collapsed: false,
            rows: p,
            cols: q,
            b_q: spec.b_q.unwrap_or(q).min(q),
        }
    }
}

/// How output tasks are assigned to workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partitioning {
    /// Whole images per worker.
    MinibatchFirst,
    /// All `N x K_b x P x Q_b` tasks, block-assigned in image-major order.
    TaskGrid,
    /// All tasks, block-assigned in feature-map-major order so each worker
    /// touches a slice of the weights.
    FeatureMapFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParallelStrategy {
    pub partitioning: Partitioning,
    pub workers: usize,
}

impl ParallelStrategy {
    pub fn new(partitioning: Partitioning, workers: usize) -> Self {
        Self {
            partitioning,
            workers: workers.max(1),
        }
    }
}

/// [`choose_strategy_with_budget`] with [`DEFAULT_WEIGHT_CACHE_BUDGET`].
pub fn choose_strategy(spec: &ConvSpec, workers: usize) -> ParallelStrategy {
    choose_strategy_with_budget(spec, workers, DEFAULT_WEIGHT_CACHE_BUDGET)
}

/// Mini-batch split when there is an image per worker; otherwise split by feature
/// maps if the weights exceed `weight_budget` bytes, else over the full task grid.
pub fn choose_strategy_with_budget(spec: &ConvSpec, workers: usize, weight_budget: usize) -> ParallelStrategy {
    let workers = workers.max(1);
    let partitioning = if spec.n >= workers {
        Partitioning::MinibatchFirst
    } else if spec.weight_bytes() > weight_budget {
        Partitioning::FeatureMapFirst
    } else {
        Partitioning::TaskGrid
    };
    ParallelStrategy::new(partitioning, workers)
}

/// One dispatched batch-reduce call, as reported to an observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvCall {
    pub worker: usize,
    pub n: usize,
    pub k_b: usize,
    pub oj: usize,
    pub oib: usize,
    pub c_b: usize,
    /// Batch length of the call (`R * S * B_c`).
    pub batch: usize,
    /// Output pixels in the call.
    pub pixels: usize,
    pub plan: TilePlan,
}

struct Task<'a> {
    n: usize,
    k_b: usize,
    oj: usize,
    oib: usize,
    pixels: usize,
    out: &'a mut [f32],
}

fn check_layout(what: &'static str, t: &BlockedTensor, want: BlockedLayout) -> Result<()> {
    if *t.layout() != want {
        return Err(Error::ShapeMismatch {
            context: what,
            expected: want.physical_shape(),
            actual: t.layout().physical_shape(),
        });
    }
    Ok(())
}

/// Convolution forward pass; returns `O[N][K_b][P][Q][b_k]`.
pub fn conv2d_forward(
    spec: &ConvSpec,
    input: &BlockedTensor,
    weight: &BlockedTensor,
    strategy: ParallelStrategy,
) -> Result<BlockedTensor> {
    conv2d_forward_observed(spec, input, weight, strategy, &|_| {})
}

/// [`conv2d_forward`] reporting every batch-reduce call to `observer`.
pub fn conv2d_forward_observed(
    spec: &ConvSpec,
    input: &BlockedTensor,
    weight: &BlockedTensor,
    strategy: ParallelStrategy,
    observer: &(dyn Fn(ConvCall) + Sync),
) -> Result<BlockedTensor> {
    spec.validate()?;
    check_layout("conv input", input, spec.input_layout()?)?;
    check_layout("conv weight", weight, spec.weight_layout()?)?;
    let loops = collapse_pixels(spec);
    let plan = spec.kernel.plan(spec.b_k, loops.b_q)?;

    let padded = pad_spatial(input, spec.pad_h, spec.pad_w)?;
    let (hp, wp) = (spec.h + 2 * spec.pad_h, spec.w + 2 * spec.pad_w);
    let (p, q) = (spec.p(), spec.q());
    let (b_c, b_k, stride) = (spec.b_c, spec.b_k, spec.stride);
    let (c_blocks, k_blocks) = (spec.c_blocks(), spec.k_blocks());
    let (r, s, bc) = (spec.r, spec.s, spec.bc_blocks);

    let mut output = BlockedTensor::zeros(spec.output_layout()?);

    // Tasks in memory order of O: (n, k_b, row, col block).
    let mut tasks = Vec::with_capacity(spec.n * k_blocks * loops.rows * loops.col_blocks());
    let mut rest = output.data_mut();
    for n in 0..spec.n {
        for k_b in 0..k_blocks {
            for oj in 0..loops.rows {
                for oib in 0..loops.col_blocks() {
                    let pixels = loops.b_q.min(loops.cols - oib * loops.b_q);
                    let (out, tail) = std::mem::take(&mut rest).split_at_mut(pixels * b_k);
                    rest = tail;
                    tasks.push(Task { n, k_b, oj, oib, pixels, out });
                }
            }
        }
    }
    debug_assert!(rest.is_empty());

    let groups: Vec<Vec<Task<'_>>> = match strategy.partitioning {
        Partitioning::MinibatchFirst => {
            let mut groups: Vec<Vec<Task<'_>>> = (0..spec.n).map(|_| Vec::new()).collect();
            for t in tasks {
                groups[t.n].push(t);
            }
            groups
        }
        Partitioning::TaskGrid => tasks.into_iter().map(|t| vec![t]).collect(),
        Partitioning::FeatureMapFirst => {
            tasks.sort_by_key(|t| (t.k_b, t.n, t.oj, t.oib));
            tasks.into_iter().map(|t| vec![t]).collect()
        }
    };

    let inp = padded.data();
    let wts = weight.data();
    let base_spec = BrgemmSpec::new(b_k, 0, b_c)
        .with_leading_dims(b_k, stride * b_c, b_k)
        .with_batch(r * s * bc);
    let failed = std::sync::Mutex::new(None);

    run_partitioned(strategy.workers, groups, |worker, group| {
        let mut a_ptrs: Vec<&[f32]> = Vec::with_capacity(r * s * bc);
        let mut b_ptrs: Vec<&[f32]> = Vec::with_capacity(r * s * bc);
        for task in group {
            let oi = task.oib * loops.b_q;
            let call = BrgemmSpec { n: task.pixels, ..base_spec };
            for c_b in (0..c_blocks).step_by(bc) {
                a_ptrs.clear();
                b_ptrs.clear();
                for rr in 0..r {
                    for ss in 0..s {
                        for cc in 0..bc {
                            let cb = c_b + cc;
                            a_ptrs.push(&wts[(((task.k_b * c_blocks + cb) * r + rr) * s + ss) * b_c * b_k..]);
                            let plane = (task.n * c_blocks + cb) * hp * wp;
                            let pix = if loops.collapsed {
                                oi
                            } else {
                                (task.oj * stride + rr) * wp + oi * stride + ss
                            };
                            b_ptrs.push(&inp[(plane + pix) * b_c..]);
                        }
                    }
                }
                let beta = if c_b == 0 { 0.0 } else { 1.0 };
                observer(ConvCall {
                    worker,
                    n: task.n,
                    k_b: task.k_b,
                    oj: task.oj,
                    oib: task.oib,
                    c_b,
                    batch: a_ptrs.len(),
                    pixels: task.pixels,
                    plan,
                });
                if let Err(e) = brgemm(&a_ptrs, &b_ptrs, task.out, &call.with_scaling(1.0, beta), &plan) {
                    failed.lock().unwrap().get_or_insert(e);
                    return;
                }
            }
        }
    });
    if let Some(e) = failed.into_inner().unwrap() {
        return Err(e);
    }
    debug_assert_eq!((p, q), (output.layout().outer_shape()[2], output.layout().outer_shape()[3]));
    Ok(output)
}

/// Baseline without the reduction: one single-product GEMM per `(r, s, c_b)` block,
/// reloading and storing the output block around each product.
pub fn conv2d_forward_per_block(
    spec: &ConvSpec,
    input: &BlockedTensor,
    weight: &BlockedTensor,
    strategy: ParallelStrategy,
) -> Result<BlockedTensor> {
    let single = ConvSpec {
        bc_blocks: 1,
        ..*spec
    };
    if spec.r == 1 && spec.s == 1 {
        return conv2d_forward(&single, input, weight, strategy);
    }
    // R*S > 1: split the filter taps into separate calls as well.
    spec.validate()?;
    check_layout("conv input", input, spec.input_layout()?)?;
    check_layout("conv weight", weight, spec.weight_layout()?)?;
    let padded = pad_spatial(input, spec.pad_h, spec.pad_w)?;
    let loops = collapse_pixels(&single);
    let plan = spec.kernel.plan(spec.b_k, loops.b_q)?;
    let (hp, wp) = (spec.h + 2 * spec.pad_h, spec.w + 2 * spec.pad_w);
    let (b_c, b_k, stride, r, s) = (spec.b_c, spec.b_k, spec.stride, spec.r, spec.s);
    let (c_blocks, k_blocks) = (spec.c_blocks(), spec.k_blocks());
    let mut output = BlockedTensor::zeros(spec.output_layout()?);
    let chunk = loops.rows * loops.cols * b_k;
    let items: Vec<_> = output.data_mut().chunks_exact_mut(chunk).enumerate().collect();
    let (inp, wts) = (padded.data(), weight.data());
    let call = BrgemmSpec::new(b_k, 0, b_c)
        .with_leading_dims(b_k, stride * b_c, b_k)
        .with_batch(1);
    let failed = std::sync::Mutex::new(None);
    run_partitioned(strategy.workers, items, |_, (idx, out)| {
        let (n, k_b) = (idx / k_blocks, idx % k_blocks);
        for oj in 0..loops.rows {
            for oib in 0..loops.col_blocks() {
                let oi = oib * loops.b_q;
                let pixels = loops.b_q.min(loops.cols - oi);
                let dst = &mut out[(oj * loops.cols + oi) * b_k..][..pixels * b_k];
                let mut first = true;
                for rr in 0..r {
                    for ss in 0..s {
                        for cb in 0..c_blocks {
                            let a = &wts[(((k_b * c_blocks + cb) * r + rr) * s + ss) * b_c * b_k..];
                            let plane = (n * c_blocks + cb) * hp * wp;
                            let b = &inp[(plane + (oj * stride + rr) * wp + oi * stride + ss) * b_c..];
                            let beta = if first { 0.0 } else { 1.0 };
                            first = false;
                            let spec = BrgemmSpec { n: pixels, ..call }.with_scaling(1.0, beta);
                            if let Err(e) = brgemm(&[a], &[b], dst, &spec, &plan) {
                                failed.lock().unwrap().get_or_insert(e);
                                return;
                            }
                        }
                    }
                }
            }
        }
    });
    if let Some(e) = failed.into_inner().unwrap() {
        return Err(e);
    }
    Ok(output)
}

/// Seven-loop direct convolution on `I[N][C][H][W]` and `W[K][C][R][S]`, FP64
/// accumulation, zero padding by bounds checks. Returns `O[N][K][P][Q]`.
pub fn conv2d_forward_reference(spec: &ConvSpec, input: &DenseTensor, weight: &DenseTensor) -> Result<DenseTensor> {
    spec.validate()?;
    let want_i = [spec.n, spec.c, spec.h, spec.w];
    let want_w = [spec.k, spec.c, spec.r, spec.s];
    if input.shape() != want_i {
        return Err(Error::ShapeMismatch {
            context: "conv reference input",
            expected: want_i.to_vec(),
            actual: input.shape().to_vec(),
        });
    }
    if weight.shape() != want_w {
        return Err(Error::ShapeMismatch {
            context: "conv reference weight",
            expected: want_w.to_vec(),
            actual: weight.shape().to_vec(),
        });
    }
    let (p, q) = (spec.p(), spec.q());
    let (x, w) = (input.data(), weight.data());
    let mut out = vec![0f32; spec.n * spec.k * p * q];
    for n in 0..spec.n {
        for k in 0..spec.k {
            for oj in 0..p {
                for oi in 0..q {
                    let mut acc = 0f64;
                    for c in 0..spec.c {
                        for r in 0..spec.r {
                            let y = (oj * spec.stride + r) as isize - spec.pad_h as isize;
                            if y < 0 || y >= spec.h as isize {
                                continue;
                            }
                            for s in 0..spec.s {
                                let xx = (oi * spec.stride + s) as isize - spec.pad_w as isize;
                                if xx < 0 || xx >= spec.w as isize {
                                    continue;
                                }
                                let iv = x[((n * spec.c + c) * spec.h + y as usize) * spec.w + xx as usize];
                                let wv = w[((k * spec.c + c) * spec.r + r) * spec.s + s];
                                acc += f64::from(iv) * f64::from(wv);
                            }
                        }
                    }
                    out[((n * spec.k + k) * p + oj) * q + oi] = acc as f32;
                }
            }
        }
    }
    DenseTensor::new([spec.n, spec.k, p, q], out)
}
