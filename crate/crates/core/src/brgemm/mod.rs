//! Batch-reduce GEMM: `C = beta*C + alpha * sum_{i<batch} A_i * B_i`.
//!
//! # Storage contract
//!
//! Every operand is column-major, addressed from the start of its block slice:
//!
//! * `A_i` is `m x k`: element `(i, p)` at `a[p * lda + i]`, `lda >= m`.
//!   Columns of A are contiguous, which is what the outer-product microkernel loads.
//! * `B_i` is `k x n`: element `(p, j)` at `b[j * ldb + p]`, `ldb >= k`.
//! * `C` is `m x n`: element `(i, j)` at `c[j * ldc + i]`, `ldc >= m`.
//!
//! Blocks are arbitrary slices, so the `A_i`/`B_i` lists play the role of pointer
//! arrays: they may alias, overlap or come from different tensors.

mod kernel;
mod plan;
mod reference;

pub use plan::{plan_tiles, Target, TilePlan};
pub use reference::brgemm_reference;

use crate::error::{Error, Result};
use kernel::{Operands, Store};

/// Element type of the C block. FP64 accumulators are rounded to it on store.
pub trait OutputElement: Copy + Send + Sync + 'static + sealed::Sealed {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

mod sealed {
    pub trait Sealed {}
    impl Sealed for f32 {}
    impl Sealed for f64 {}
}

impl OutputElement for f32 {
    #[inline(always)]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl OutputElement for f64 {
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Environment variable forcing the register tile, as `"m_b,n_b"`.
pub const TILE_OVERRIDE_ENV: &str = "BRGEMM_TILE_OVERRIDE";

/// Target model plus an optional forced tile, shared by the primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KernelConfig {
    pub target: Target,
    pub tile_override: Option<(usize, usize)>,
}

impl KernelConfig {
    /// Default target, tile override taken from [`TILE_OVERRIDE_ENV`] when set.
    pub fn from_env() -> Result<Self> {
        let tile_override = match std::env::var(TILE_OVERRIDE_ENV) {
            Ok(v) => Some(parse_tile_override(&v)?),
            Err(_) => None,
        };
        Ok(Self {
            tile_override,
            ..Self::default()
        })
    }

    /// Tile for an `m x n` output: the override if set, else [`plan_tiles`].
    pub fn plan(&self, m: usize, n: usize) -> Result<TilePlan> {
        match self.tile_override {
            Some((m_b, n_b)) => TilePlan::new(m_b, n_b, self.target),
            None => Ok(plan_tiles(m, n, self.target.vlen, self.target.fma_latency, self.target.budget)),
        }
    }
}

/// Parses `"m_b,n_b"`.
pub fn parse_tile_override(s: &str) -> Result<(usize, usize)> {
    let parsed = s
        .split_once(',')
        .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
    parsed.ok_or_else(|| Error::InvalidPlan(format!("tile override `{s}` is not `m_b,n_b`")))
}

/// Shape and scaling of one batch-reduce call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrgemmSpec {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub lda: usize,
    pub ldb: usize,
    pub ldc: usize,
    pub alpha: f32,
    pub beta: f32,
    pub batch: usize,
}

impl BrgemmSpec {
    /// Tightly packed operands, `alpha = beta = 1`, empty batch.
    pub fn new(m: usize, n: usize, k: usize) -> Self {
        Self {
            m,
            n,
            k,
            lda: m,
            ldb: k,
            ldc: m,
            alpha: 1.0,
            beta: 1.0,
            batch: 0,
        }
    }

    pub fn with_leading_dims(self, lda: usize, ldb: usize, ldc: usize) -> Self {
        Self { lda, ldb, ldc, ..self }
    }

    pub fn with_scaling(self, alpha: f32, beta: f32) -> Self {
        Self { alpha, beta, ..self }
    }

    pub fn with_batch(self, batch: usize) -> Self {
        Self { batch, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lda < self.m || self.ldb < self.k || self.ldc < self.m {
            return Err(Error::InvalidSpec(format!(
                "leading dims (lda={}, ldb={}, ldc={}) below (m={}, k={}, m={})",
                self.lda, self.ldb, self.ldc, self.m, self.k, self.m
            )));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::InvalidSpec("alpha and beta must be finite".into()));
        }
        Ok(())
    }

    /// Elements an A block must span.
    pub fn a_extent(&self) -> usize {
        span(self.k, self.lda, self.m)
    }

    pub fn b_extent(&self) -> usize {
        span(self.n, self.ldb, self.k)
    }

    pub fn c_extent(&self) -> usize {
        span(self.n, self.ldc, self.m)
    }

    /// Multiply-add FLOPs: `2 m n k batch`.
    pub fn flops(&self) -> u64 {
        2 * (self.m * self.n * self.k * self.batch) as u64
    }
}

fn span(cols: usize, ld: usize, rows: usize) -> usize {
    if cols == 0 || rows == 0 {
        0
    } else {
        (cols - 1) * ld + rows
    }
}

pub(crate) fn check_operands<T>(a: &[&[f32]], b: &[&[f32]], c: &[T], spec: &BrgemmSpec) -> Result<()> {
    spec.validate()?;
    if a.len() != spec.batch || b.len() != spec.batch {
        return Err(Error::InvalidSpec(format!(
            "batch is {} but got {} A blocks and {} B blocks",
            spec.batch,
            a.len(),
            b.len()
        )));
    }
    let (need_a, need_b, need_c) = (spec.a_extent(), spec.b_extent(), spec.c_extent());
    for (index, blk) in a.iter().enumerate() {
        if blk.len() < need_a {
            return Err(Error::OutOfBounds {
                operand: "A",
                index,
                needed: need_a,
                available: blk.len(),
            });
        }
    }
    for (index, blk) in b.iter().enumerate() {
        if blk.len() < need_b {
            return Err(Error::OutOfBounds {
                operand: "B",
                index,
                needed: need_b,
                available: blk.len(),
            });
        }
    }
    if c.len() < need_c {
        return Err(Error::OutOfBounds {
            operand: "C",
            index: 0,
            needed: need_c,
            available: c.len(),
        });
    }
    Ok(())
}

fn scale_only<T: OutputElement>(c: &mut [T], spec: &BrgemmSpec) {
    if spec.beta == 1.0 {
        return;
    }
    let beta = f64::from(spec.beta);
    for j in 0..spec.n {
        for v in &mut c[j * spec.ldc..j * spec.ldc + spec.m] {
            *v = T::from_f64(if beta == 0.0 { 0.0 } else { beta * v.to_f64() });
        }
    }
}

/// Register-tiled batch-reduce GEMM.
///
/// Loops over `n_b`-wide then `m_b`-tall tiles of C; each tile is accumulated over
/// every batch item and all of `k` before a single store. Partial tiles at the
/// m/n edges go through a runtime-extent kernel with the same summation order.
pub fn brgemm<T: OutputElement>(
    a_blocks: &[&[f32]],
    b_blocks: &[&[f32]],
    c: &mut [T],
    spec: &BrgemmSpec,
    plan: &TilePlan,
) -> Result<()> {
    check_operands(a_blocks, b_blocks, c, spec)?;
    if plan.m_b == 0 || plan.n_b == 0 || plan.vlen == 0 {
        return Err(Error::InvalidPlan(format!("empty tile {}x{}", plan.m_b, plan.n_b)));
    }
    if plan.registers() > plan.budget {
        return Err(Error::InvalidPlan(format!(
            "{}x{} tile exceeds the {}-register budget",
            plan.m_b, plan.n_b, plan.budget
        )));
    }
    if spec.m == 0 || spec.n == 0 {
        return Ok(());
    }
    if spec.batch == 0 || spec.k == 0 || spec.alpha == 0.0 {
        scale_only(c, spec);
        return Ok(());
    }

    let ops = Operands {
        a: a_blocks,
        b: b_blocks,
        k: spec.k,
        lda: spec.lda,
        ldb: spec.ldb,
    };
    let store = Store {
        alpha: f64::from(spec.alpha),
        beta: f64::from(spec.beta),
        ldc: spec.ldc,
    };
    let full = kernel::fixed_tile::<T>(plan.m_b, plan.n_b);
    let mut scratch = Vec::new();
    for col0 in (0..spec.n).step_by(plan.n_b) {
        let nb = plan.n_b.min(spec.n - col0);
        for row0 in (0..spec.m).step_by(plan.m_b) {
            let mb = plan.m_b.min(spec.m - row0);
            match full {
                Some(tile) if mb == plan.m_b && nb == plan.n_b => tile(&ops, row0, col0, c, store),
                _ => kernel::tile_dyn(&ops, row0, col0, mb, nb, &mut scratch, c, store),
            }
        }
    }
    Ok(())
}

/// Batch-reduce GEMM with blocks at fixed strides from two base slices:
/// `A_i = a_base[i * stride_a..]`, `B_i = b_base[i * stride_b..]`.
pub fn brgemm_strided<T: OutputElement>(
    a_base: &[f32],
    b_base: &[f32],
    stride_a: usize,
    stride_b: usize,
    c: &mut [T],
    spec: &BrgemmSpec,
) -> Result<()> {
    let a = strided_blocks("A", a_base, stride_a, spec.batch, spec.a_extent())?;
    let b = strided_blocks("B", b_base, stride_b, spec.batch, spec.b_extent())?;
    let t = Target::default();
    let plan = plan_tiles(spec.m, spec.n, t.vlen, t.fma_latency, t.budget);
    brgemm(&a, &b, c, spec, &plan)
}

fn strided_blocks<'a>(
    operand: &'static str,
    base: &'a [f32],
    stride: usize,
    batch: usize,
    extent: usize,
) -> Result<Vec<&'a [f32]>> {
    (0..batch)
        .map(|i| {
            let start = i * stride;
            if start + extent > base.len() {
                Err(Error::OutOfBounds {
                    operand,
                    index: i,
                    needed: start + extent,
                    available: base.len(),
                })
            } else {
                Ok(&base[start..])
            }
        })
        .collect()
}

/// Batched GEMM baseline: `C_i = beta*C_i + alpha*A_i*B_i` with one output per pair.
pub fn batched_gemm(
    a_blocks: &[&[f32]],
    b_blocks: &[&[f32]],
    c_blocks: &mut [&mut [f32]],
    spec: &BrgemmSpec,
) -> Result<()> {
    if c_blocks.len() != spec.batch {
        return Err(Error::InvalidSpec(format!(
            "batch is {} but got {} C blocks",
            spec.batch,
            c_blocks.len()
        )));
    }
    if a_blocks.len() != spec.batch || b_blocks.len() != spec.batch {
        return Err(Error::InvalidSpec(format!(
            "batch is {} but got {} A blocks and {} B blocks",
            spec.batch,
            a_blocks.len(),
            b_blocks.len()
        )));
    }
    let single = spec.with_batch(1);
    let t = Target::default();
    let plan = plan_tiles(spec.m, spec.n, t.vlen, t.fma_latency, t.budget);
    for ((a, b), c) in a_blocks.iter().zip(b_blocks).zip(c_blocks.iter_mut()) {
        brgemm(&[*a], &[*b], c, &single, &plan)?;
    }
    Ok(())
}
