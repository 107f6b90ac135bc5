//! Fully-connected layer `Y = g(W X)` on blocked activations.
//!
//! `X[N_b][C_b][b_n][b_c]` and `W[K_b][C_b][b_c][b_k]` produce `Y[N_b][K_b][b_n][b_k]`.
//! Each `(ib_n, ib_k)` output block is one batch-reduce call over the `C_b` pairs,
//! with `g` applied while the block is still hot.

use crate::activation::Activation;
use crate::brgemm::{brgemm, BrgemmSpec, KernelConfig};
use crate::error::{Error, Result};
use crate::parallel::run_partitioned;
use crate::tensor::{block_weight_2d, BlockedLayout, BlockedTensor, DenseTensor};

/// Blocked weights plus loop configuration.
#[derive(Debug, Clone)]
pub struct FcParams {
    /// `W[K_b][C_b][b_c][b_k]`.
    pub w: BlockedTensor,
    pub c: usize,
    pub k: usize,
    pub b_n: usize,
    pub b_c: usize,
    pub b_k: usize,
    pub activation: Activation,
    /// Apply `g` per block right after its GEMM; otherwise in a second pass.
    pub fused: bool,
    /// Feature-map blocks swept together across the mini-batch; `None` sweeps all.
    pub k_block: Option<usize>,
    /// Input-channel blocks per batch-reduce call; `None` reduces over all of them.
    pub c_block: Option<usize>,
    pub kernel: KernelConfig,
}

impl FcParams {
    /// Blocks dense `W[K][C]`; `b_c`/`b_k` are clamped to `C`/`K`.
    pub fn from_dense(w: &DenseTensor, b_n: usize, b_c: usize, b_k: usize, activation: Activation) -> Result<Self> {
        let &[k, c] = w.shape() else {
            return Err(Error::InvalidShape {
                shape: w.shape().to_vec(),
                reason: "FC weight must be [K][C]".into(),
            });
        };
        if b_n == 0 {
            return Err(Error::Divisibility { dim: "N", extent: 0, block: 0 });
        }
        let (b_c, b_k) = (b_c.min(c).max(1), b_k.min(k).max(1));
        Ok(Self {
            w: block_weight_2d(w, b_c, b_k)?,
            c,
            k,
            b_n,
            b_c,
            b_k,
            activation,
            fused: true,
            k_block: None,
            c_block: None,
            kernel: KernelConfig::default(),
        })
    }

    pub fn with_fused(mut self, fused: bool) -> Self {
        self.fused = fused;
        self
    }

    pub fn with_k_block(mut self, k_block: Option<usize>) -> Self {
        self.k_block = k_block;
        self
    }

    pub fn with_c_block(mut self, c_block: Option<usize>) -> Self {
        self.c_block = c_block;
        self
    }

    pub fn with_kernel(mut self, kernel: KernelConfig) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn c_blocks(&self) -> usize {
        self.c / self.b_c
    }

    pub fn k_blocks(&self) -> usize {
        self.k / self.b_k
    }

    /// Layout expected for `X` with mini-batch `n`.
    pub fn input_layout(&self, n: usize) -> Result<BlockedLayout> {
        BlockedLayout::fc_activation(n, self.c, self.b_n, self.b_c)
    }

    pub fn output_layout(&self, n: usize) -> Result<BlockedLayout> {
        BlockedLayout::fc_activation(n, self.k, self.b_n, self.b_k)
    }
}

/// One output block as seen by an observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcEvent {
    pub worker: usize,
    pub ib_n: usize,
    pub ib_k: usize,
}

/// Forward pass; `x` must use [`FcParams::input_layout`].
pub fn fc_forward(params: &FcParams, x: &BlockedTensor, workers: usize) -> Result<BlockedTensor> {
    fc_forward_observed(params, x, workers, &|_| {})
}

/// [`fc_forward`] reporting each output block to `observer` as it starts.
pub fn fc_forward_observed(
    params: &FcParams,
    x: &BlockedTensor,
    workers: usize,
    observer: &(dyn Fn(FcEvent) + Sync),
) -> Result<BlockedTensor> {
    let logical = x.layout().logical_shape();
    let &[n, xc] = logical.as_slice() else {
        return Err(Error::InvalidShape {
            shape: logical,
            reason: "FC input must be [N][C]".into(),
        });
    };
    let want = BlockedLayout::fc_activation(n, params.c, params.b_n, params.b_c)?;
    if *x.layout() != want {
        return Err(Error::ShapeMismatch {
            context: "FC input",
            expected: want.physical_shape(),
            actual: vec![n, xc],
        });
    }
    let (b_n, b_c, b_k) = (params.b_n, params.b_c, params.b_k);
    let (c_blocks, k_blocks, n_blocks) = (params.c_blocks(), params.k_blocks(), n / b_n);
    let chunk = params.c_block.unwrap_or(c_blocks).clamp(1, c_blocks);
    let k_group = params.k_block.unwrap_or(k_blocks).clamp(1, k_blocks);
    let plan = params.kernel.plan(b_k, b_n)?;

    let mut y = BlockedTensor::zeros(params.output_layout(n)?);
    let blk = b_n * b_k;
    // One item per (k group, ib_n): the group's Y blocks of one mini-batch block are
    // contiguous. Workers split the ib_n range of each group, so every W block of
    // the group is reused once per ib_n of the worker's range.
    let groups: Vec<(usize, usize)> = (0..k_blocks)
        .step_by(k_group)
        .map(|k0| (k0, (k0 + k_group).min(k_blocks)))
        .collect();
    let mut rows: Vec<Vec<&mut [f32]>> = Vec::with_capacity(n_blocks);
    for row in y.data_mut().chunks_exact_mut(k_blocks * blk) {
        let mut parts = Vec::with_capacity(groups.len());
        let mut rest = row;
        for &(k0, k1) in &groups {
            let (head, tail) = rest.split_at_mut((k1 - k0) * blk);
            parts.push(head);
            rest = tail;
        }
        rows.push(parts);
    }
    let mut items = Vec::with_capacity(groups.len() * n_blocks);
    let mut cols: Vec<_> = rows.into_iter().map(|r| r.into_iter()).collect();
    for &(k0, k1) in &groups {
        for (ib_n, col) in cols.iter_mut().enumerate() {
            items.push((ib_n, k0..k1, col.next().unwrap()));
        }
    }

    let (xd, wd) = (x.data(), params.w.data());
    let base = BrgemmSpec::new(b_k, b_n, b_c).with_leading_dims(b_k, b_c, b_k);
    let activation = params.activation;
    let fused = params.fused;
    let failed = std::sync::Mutex::new(None);
    run_partitioned(workers, items, |worker, (ib_n, k_range, out)| {
        let mut a = Vec::with_capacity(chunk);
        let mut b = Vec::with_capacity(chunk);
        for (ib_k, out) in k_range.zip(out.chunks_exact_mut(blk)) {
            observer(FcEvent { worker, ib_n, ib_k });
            for c0 in (0..c_blocks).step_by(chunk) {
                a.clear();
                b.clear();
                for ic in c0..(c0 + chunk).min(c_blocks) {
                    a.push(&wd[(ib_k * c_blocks + ic) * b_c * b_k..][..b_c * b_k]);
                    b.push(&xd[(ib_n * c_blocks + ic) * b_n * b_c..][..b_n * b_c]);
                }
                let beta = if c0 == 0 { 0.0 } else { 1.0 };
                let spec = base.with_batch(a.len()).with_scaling(1.0, beta);
                if let Err(e) = brgemm(&a, &b, out, &spec, &plan) {
                    failed.lock().unwrap().get_or_insert(e);
                    return;
                }
            }
            if fused {
                activation.apply_block(out);
            }
        }
    });
    if let Some(e) = failed.into_inner().unwrap() {
        return Err(e);
    }
    if !fused {
        activation.apply_block(y.data_mut());
    }
    Ok(y)
}

/// `Y[K][N] = g(W[K][C] X[C][N])` with FP64 accumulation.
pub fn fc_forward_reference(w: &DenseTensor, x: &DenseTensor, activation: Activation) -> Result<DenseTensor> {
    let (&[k, c], &[xc, n]) = (w.shape(), x.shape()) else {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "FC reference takes W[K][C] and X[C][N]".into(),
        });
    };
    if xc != c {
        return Err(Error::ShapeMismatch {
            context: "FC reference X",
            expected: vec![c, n],
            actual: x.shape().to_vec(),
        });
    }
    let (wd, xd) = (w.data(), x.data());
    let mut y = vec![0f32; k * n];
    for i in 0..k {
        for j in 0..n {
            let acc: f64 = (0..c).map(|p| f64::from(wd[i * c + p]) * f64::from(xd[p * n + j])).sum();
            y[i * n + j] = activation.apply_f64(acc) as f32;
        }
    }
    DenseTensor::new([k, n], y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::max_rel_error;

    fn rnd(shape: &[usize], seed: u64) -> DenseTensor {
        let mut st = seed | 1;
        DenseTensor::from_fn(shape.to_vec(), |_| {
            st = st.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (st >> 40) as f32 / (1u64 << 23) as f32 - 1.0
        })
        .unwrap()
    }

    fn run(params: &FcParams, x_cn: &DenseTensor, workers: usize) -> DenseTensor {
        let n = x_cn.shape()[1];
        let x = BlockedTensor::from_dense(&x_cn.transpose2d().unwrap(), params.input_layout(n).unwrap()).unwrap();
        fc_forward(params, &x, workers).unwrap().to_dense().transpose2d().unwrap()
    }

    #[test]
    fn identity_weight_passes_input() {
        let w = DenseTensor::from_fn([8, 8], |i| if i[0] == i[1] { 1.0 } else { 0.0 }).unwrap();
        let x = rnd(&[8, 6], 1);
        let p = FcParams::from_dense(&w, 2, 4, 4, Activation::Identity).unwrap();
        assert_eq!(run(&p, &x, 2), x);
    }

    #[test]
    fn relu_clamps_negatives() {
        let w = DenseTensor::from_fn([4, 4], |i| if i[0] == i[1] { -1.0 } else { 0.0 }).unwrap();
        let x = DenseTensor::full([4, 2], 1.0).unwrap();
        let p = FcParams::from_dense(&w, 2, 2, 2, Activation::Relu).unwrap();
        assert!(run(&p, &x, 1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let w = DenseTensor::zeros([4, 4]).unwrap();
        let p = FcParams::from_dense(&w, 2, 2, 2, Activation::Sigmoid).unwrap();
        assert!(run(&p, &rnd(&[4, 4], 2), 1).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn matches_reference_and_fusion_is_exact() {
        let w = rnd(&[32, 48], 3);
        let x = rnd(&[48, 12], 4);
        for g in [Activation::Identity, Activation::Relu, Activation::Sigmoid] {
            let p = FcParams::from_dense(&w, 4, 16, 8, g).unwrap();
            let want = fc_forward_reference(&w, &x, g).unwrap();
            let fused = run(&p, &x, 3);
            assert!(max_rel_error(&fused, &want).unwrap() <= 1e-5);
            assert_eq!(run(&p.clone().with_fused(false), &x, 2), fused);
            assert_eq!(run(&p.clone().with_k_block(Some(2)), &x, 2), fused);
            let chunked = run(&p.with_c_block(Some(1)), &x, 1);
            assert!(max_rel_error(&chunked, &want).unwrap() <= 1e-5);
        }
    }

    #[test]
    fn weights_reused_across_minibatch_blocks() {
        let w = rnd(&[16, 16], 5);
        let p = FcParams::from_dense(&w, 2, 8, 4, Activation::Identity)
            .unwrap()
            .with_k_block(Some(2));
        let x = BlockedTensor::zeros(p.input_layout(8).unwrap());
        let seen = std::sync::Mutex::new(Vec::new());
        fc_forward_observed(&p, &x, 1, &|e| seen.lock().unwrap().push((e.ib_k, e.ib_n))).unwrap();
        let seen = seen.into_inner().unwrap();
        // first group: k blocks 0..2 for every n block before any k block >= 2
        assert!(seen[..8].iter().all(|&(k, _)| k < 2));
        assert_eq!(seen[..4], [(0, 0), (1, 0), (0, 1), (1, 1)]);
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn rejects_bad_blocking() {
        let w = DenseTensor::zeros([6, 8]).unwrap();
        assert!(FcParams::from_dense(&w, 2, 3, 4, Activation::Identity).is_err());
        let p = FcParams::from_dense(&w, 4, 4, 3, Activation::Identity).unwrap();
        assert!(p.input_layout(6).is_err());
    }
}
