//! Fused data-flow LSTM forward cell.
//!
//! Each time step is one parallel region over `b_n x b_k` output blocks. A work
//! item initialises its four gate blocks with the bias, batch-reduces `W_* x_t`
//! over the `C_b` blocks and `R_* h_{t-1}` over the `K_b` blocks into them, applies
//! the gate nonlinearities and then the state update while the blocks are still
//! hot. Workers synchronise between steps because `h_t` feeds step `t + 1`.
//!
//! Gate pre-activations are FP64 blocks, so bias plus both products form one
//! unrounded chain; `h` and `s` are rounded to FP32 once per step.

use crate::activation::{sigmoid, sigmoid_block, tanh_block};
use crate::brgemm::{brgemm, BrgemmSpec, KernelConfig};
use crate::error::{Error, Result};
use crate::parallel::{grid_item, run_partitioned};
use crate::tensor::{block_weight_2d, BlockedTensor, DenseTensor};

/// Gate order used for every weight/bias array: input, candidate, forget, output.
pub const GATES: [&str; 4] = ["i", "c", "f", "o"];

/// Unblocked LSTM weights: `w[g]` is `[K][C]`, `r[g]` is `[K][K]`, `bias[g]` is `[K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLstmWeights {
    pub w: [DenseTensor; 4],
    pub r: [DenseTensor; 4],
    pub bias: [DenseTensor; 4],
}

impl DenseLstmWeights {
    pub fn zeros(c: usize, k: usize) -> Result<Self> {
        let z = |shape: &[usize]| DenseTensor::zeros(shape.to_vec());
        Ok(Self {
            w: [z(&[k, c])?, z(&[k, c])?, z(&[k, c])?, z(&[k, c])?],
            r: [z(&[k, k])?, z(&[k, k])?, z(&[k, k])?, z(&[k, k])?],
            bias: [z(&[k])?, z(&[k])?, z(&[k])?, z(&[k])?],
        })
    }

    /// `(C, K)` after checking all twelve tensors agree.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let &[k, c] = self.w[0].shape() else {
            return Err(Error::InvalidShape {
                shape: self.w[0].shape().to_vec(),
                reason: "W must be [K][C]".into(),
            });
        };
        for g in 0..4 {
            expect_shape("LSTM W", &self.w[g], &[k, c])?;
            expect_shape("LSTM R", &self.r[g], &[k, k])?;
            expect_shape("LSTM bias", &self.bias[g], &[k])?;
        }
        Ok((c, k))
    }
}

fn expect_shape(context: &'static str, t: &DenseTensor, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::ShapeMismatch {
            context,
            expected: shape.to_vec(),
            actual: t.shape().to_vec(),
        });
    }
    Ok(())
}

/// Blocked LSTM weights and the loop configuration around the kernel.
#[derive(Debug, Clone)]
pub struct LstmParams {
    /// `W_*[K_b][C_b][b_c][b_k]`.
    pub w: [BlockedTensor; 4],
    /// `R_*[K_b][K_b][b_k][b_k]`.
    pub r: [BlockedTensor; 4],
    pub bias: [DenseTensor; 4],
    pub c: usize,
    pub k: usize,
    pub b_n: usize,
    pub b_c: usize,
    pub b_k: usize,
    /// Blocks per chunk of the two reduce loops; `None` reduces over all of them at once.
    pub reduce_block: Option<usize>,
    /// Keep post-activation gates for every step.
    pub retain_gates: bool,
    pub kernel: KernelConfig,
}

impl LstmParams {
    /// Reformats dense weights into the blocked layout. `b_c`/`b_k` are clamped to `C`/`K`.
    pub fn from_dense(dense: &DenseLstmWeights, b_n: usize, b_c: usize, b_k: usize) -> Result<Self> {
        let (c, k) = dense.dims()?;
        let b_c = b_c.min(c).max(1);
        let b_k = b_k.min(k).max(1);
        if b_n == 0 {
            return Err(Error::Divisibility { dim: "N", extent: 0, block: 0 });
        }
        let block = |t: &DenseTensor, bc| block_weight_2d(t, bc, b_k);
        Ok(Self {
            w: [
                block(&dense.w[0], b_c)?,
                block(&dense.w[1], b_c)?,
                block(&dense.w[2], b_c)?,
                block(&dense.w[3], b_c)?,
            ],
            r: [
                block(&dense.r[0], b_k)?,
                block(&dense.r[1], b_k)?,
                block(&dense.r[2], b_k)?,
                block(&dense.r[3], b_k)?,
            ],
            bias: dense.bias.clone(),
            c,
            k,
            b_n,
            b_c,
            b_k,
            reduce_block: None,
            retain_gates: false,
            kernel: KernelConfig::default(),
        })
    }

    pub fn with_reduce_block(mut self, blocks: Option<usize>) -> Self {
        self.reduce_block = blocks;
        self
    }

    pub fn with_retained_gates(mut self, retain: bool) -> Self {
        self.retain_gates = retain;
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
}

/// Outputs of a forward pass: `h`, `s` and optionally gates, all `[T][N][K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStateSequence {
    pub h: DenseTensor,
    pub s: DenseTensor,
    /// Post-activation `i, c, f, o` when requested.
    pub gates: Option<[DenseTensor; 4]>,
}

/// One step's work item as seen by an observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkEvent {
    pub worker: usize,
    pub step: usize,
    pub ib_k: usize,
    pub ib_n: usize,
}

fn check_inputs(
    c: usize,
    k: usize,
    x: &DenseTensor,
    h_init: &DenseTensor,
    s_init: &DenseTensor,
) -> Result<(usize, usize)> {
    let &[t, n, xc] = x.shape() else {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "x must be [T][N][C]".into(),
        });
    };
    if xc != c {
        return Err(Error::ShapeMismatch {
            context: "LSTM x",
            expected: vec![t, n, c],
            actual: x.shape().to_vec(),
        });
    }
    expect_shape("LSTM h_init", h_init, &[n, k])?;
    expect_shape("LSTM s_init", s_init, &[n, k])?;
    Ok((t, n))
}

/// Forward pass over the whole sequence.
pub fn lstm_forward(
    params: &LstmParams,
    x: &DenseTensor,
    h_init: &DenseTensor,
    s_init: &DenseTensor,
    workers: usize,
) -> Result<LstmStateSequence> {
    lstm_forward_observed(params, x, h_init, s_init, workers, &|_| {})
}

/// [`lstm_forward`] reporting every work item to `observer` as it starts.
pub fn lstm_forward_observed(
    params: &LstmParams,
    x: &DenseTensor,
    h_init: &DenseTensor,
    s_init: &DenseTensor,
    workers: usize,
    observer: &(dyn Fn(WorkEvent) + Sync),
) -> Result<LstmStateSequence> {
    let (c, k) = (params.c, params.k);
    let (t_len, n) = check_inputs(c, k, x, h_init, s_init)?;
    let (b_n, b_c, b_k) = (params.b_n, params.b_c, params.b_k);
    for (dim, extent, block) in [("N", n, b_n), ("C", c, b_c), ("K", k, b_k)] {
        if block == 0 || extent % block != 0 {
            return Err(Error::Divisibility { dim, extent, block });
        }
    }
    let (n_blocks, c_blocks, k_blocks) = (n / b_n, c / b_c, k / b_k);
    let blk = b_n * b_k;
    let plan = params.kernel.plan(b_k, b_n)?;

    let rb = params.reduce_block.unwrap_or(c_blocks.max(k_blocks)).max(1);
    let chunks = c_blocks.div_ceil(rb).max(k_blocks.div_ceil(rb));

    // Working state in [K_b][N_b][b_n][b_k]; block (ib_k, ib_n) is column-major b_k x b_n.
    let to_blocked = |d: &DenseTensor| {
        let mut out = vec![0.0f32; n * k];
        scatter_blocks(&mut out, d.data(), n_blocks, b_n, b_k, k, true);
        out
    };
    let mut h_prev = to_blocked(h_init);
    let mut s_prev = to_blocked(s_init);
    let mut h_cur = vec![0.0f32; n * k];
    let mut s_cur = vec![0.0f32; n * k];
    // [K_b][N_b][gate][b_n][b_k]
    let mut gates = vec![0.0f64; 4 * n * k];

    let mut h_out = DenseTensor::zeros([t_len, n, k])?;
    let mut s_out = DenseTensor::zeros([t_len, n, k])?;
    let mut kept = if params.retain_gates {
        Some([0, 1, 2, 3].map(|_| vec![0.0f32; t_len * n * k]))
    } else {
        None
    };

    let w_spec = BrgemmSpec::new(b_k, b_n, b_c).with_leading_dims(b_k, c, b_k);
    let r_spec = BrgemmSpec::new(b_k, b_n, b_k).with_leading_dims(b_k, b_k, b_k);

    for step in 0..t_len {
        let x_t = x.slice_outer(step).expect("step < T");
        for chunk in 0..chunks {
            let c_range = (chunk * rb).min(c_blocks)..((chunk + 1) * rb).min(c_blocks);
            let k_range = (chunk * rb).min(k_blocks)..((chunk + 1) * rb).min(k_blocks);
            let last = chunk + 1 == chunks;

            let items: Vec<_> = gates
                .chunks_exact_mut(4 * blk)
                .zip(h_cur.chunks_exact_mut(blk).zip(s_cur.chunks_exact_mut(blk)))
                .enumerate()
                .collect();
            let (h_prev, s_prev) = (&h_prev, &s_prev);
            let failed = std::sync::Mutex::new(None);
            run_partitioned(workers, items, |worker, (item, (gate_blk, (h_blk, s_blk)))| {
                let (ib_k, ib_n) = grid_item(item, n_blocks);
                observer(WorkEvent { worker, step, ib_k, ib_n });
                let mut a_ptrs: Vec<&[f32]> = Vec::with_capacity(c_blocks.max(k_blocks));
                let mut b_ptrs: Vec<&[f32]> = Vec::with_capacity(c_blocks.max(k_blocks));
                for g in 0..4 {
                    let acc = &mut gate_blk[g * blk..(g + 1) * blk];
                    if chunk == 0 {
                        let bias = &params.bias[g].data()[ib_k * b_k..(ib_k + 1) * b_k];
                        for col in acc.chunks_exact_mut(b_k) {
                            for (a, &b) in col.iter_mut().zip(bias) {
                                *a = f64::from(b);
                            }
                        }
                    }

                    a_ptrs.clear();
                    b_ptrs.clear();
                    let w = params.w[g].data();
                    for ib_c in c_range.clone() {
                        a_ptrs.push(&w[(ib_k * c_blocks + ib_c) * b_c * b_k..]);
                        b_ptrs.push(&x_t[ib_n * b_n * c + ib_c * b_c..]);
                    }
                    let spec = w_spec.with_batch(a_ptrs.len());
                    let res = brgemm(&a_ptrs, &b_ptrs, acc, &spec, &plan);

                    a_ptrs.clear();
                    b_ptrs.clear();
                    let r = params.r[g].data();
                    for ib_j in k_range.clone() {
                        a_ptrs.push(&r[(ib_k * k_blocks + ib_j) * b_k * b_k..]);
                        b_ptrs.push(&h_prev[(ib_j * n_blocks + ib_n) * blk..]);
                    }
                    let spec = r_spec.with_batch(a_ptrs.len());
                    if let Err(e) = res.and_then(|_| brgemm(&a_ptrs, &b_ptrs, acc, &spec, &plan)) {
                        failed.lock().unwrap().get_or_insert(e);
                        return;
                    }
                }
                if !last {
                    return;
                }

                let (ig, rest) = gate_blk.split_at_mut(blk);
                let (cg, rest) = rest.split_at_mut(blk);
                let (fg, og) = rest.split_at_mut(blk);
                sigmoid_block(ig);
                tanh_block(cg);
                sigmoid_block(fg);
                sigmoid_block(og);
                let s_old = &s_prev[item * blk..(item + 1) * blk];
                for e in 0..blk {
                    let s_new = fg[e] * f64::from(s_old[e]) + ig[e] * cg[e];
                    s_blk[e] = s_new as f32;
                    h_blk[e] = (og[e] * s_new.tanh()) as f32;
                }
            });
            if let Some(e) = failed.into_inner().unwrap() {
                return Err(e);
            }
        }

        let base = step * n * k;
        scatter_blocks(&mut h_out.data_mut()[base..base + n * k], &h_cur, n_blocks, b_n, b_k, k, false);
        scatter_blocks(&mut s_out.data_mut()[base..base + n * k], &s_cur, n_blocks, b_n, b_k, k, false);
        if let Some(kept) = kept.as_mut() {
            for (g, dst) in kept.iter_mut().enumerate() {
                let dst = &mut dst[base..base + n * k];
                for (item, blkv) in gates.chunks_exact(4 * blk).enumerate() {
                    let (ib_k, ib_n) = grid_item(item, n_blocks);
                    for (col, vals) in blkv[g * blk..(g + 1) * blk].chunks_exact(b_k).enumerate() {
                        let row = (ib_n * b_n + col) * k + ib_k * b_k;
                        for (d, &v) in dst[row..row + b_k].iter_mut().zip(vals) {
                            *d = v as f32;
                        }
                    }
                }
            }
        }
        std::mem::swap(&mut h_prev, &mut h_cur);
        std::mem::swap(&mut s_prev, &mut s_cur);
    }

    let gates = match kept {
        Some(g) => {
            let [i, c, f, o] = g.map(|v| DenseTensor::new([t_len, n, k], v));
            Some([i?, c?, f?, o?])
        }
        None => None,
    };
    Ok(LstmStateSequence {
        h: h_out,
        s: s_out,
        gates,
    })
}

/// Copies between dense `[N][K]` and blocked `[K_b][N_b][b_n][b_k]`.
/// `to_blocked` selects the direction (`src` dense when true).
fn scatter_blocks(
    dst: &mut [f32],
    src: &[f32],
    n_blocks: usize,
    b_n: usize,
    b_k: usize,
    k: usize,
    to_blocked: bool,
) {
    let blk = b_n * b_k;
    let k_blocks = k / b_k;
    for ib_k in 0..k_blocks {
        for ib_n in 0..n_blocks {
            let blocked = (ib_k * n_blocks + ib_n) * blk;
            for col in 0..b_n {
                let dense = (ib_n * b_n + col) * k + ib_k * b_k;
                let bl = blocked + col * b_k;
                if to_blocked {
                    dst[bl..bl + b_k].copy_from_slice(&src[dense..dense + b_k]);
                } else {
                    dst[dense..dense + b_k].copy_from_slice(&src[bl..bl + b_k]);
                }
            }
        }
    }
}

/// Dense oracle: per step, whole-matrix products `W_* x_t` and `R_* h_{t-1}`
/// accumulated in FP64, then the cell equations elementwise.
pub fn lstm_forward_reference(
    weights: &DenseLstmWeights,
    x: &DenseTensor,
    h_init: &DenseTensor,
    s_init: &DenseTensor,
) -> Result<LstmStateSequence> {
    let (c, k) = weights.dims()?;
    let (t_len, n) = check_inputs(c, k, x, h_init, s_init)?;
    let mut h_prev = h_init.data().to_vec();
    let mut s_prev = s_init.data().to_vec();
    let mut h_out = Vec::with_capacity(t_len * n * k);
    let mut s_out = Vec::with_capacity(t_len * n * k);
    let mut gate_out: [Vec<f32>; 4] = Default::default();

    for step in 0..t_len {
        let x_t = x.slice_outer(step).expect("step < T");
        let mut pre = [0, 1, 2, 3].map(|_| vec![0f64; n * k]);
        for (g, z) in pre.iter_mut().enumerate() {
            let w = weights.w[g].data();
            let r = weights.r[g].data();
            let b = weights.bias[g].data();
            for nn in 0..n {
                for kk in 0..k {
                    let mut wx = 0f64;
                    for cc in 0..c {
                        wx += f64::from(w[kk * c + cc]) * f64::from(x_t[nn * c + cc]);
                    }
                    let mut rh = 0f64;
                    for j in 0..k {
                        rh += f64::from(r[kk * k + j]) * f64::from(h_prev[nn * k + j]);
                    }
                    z[nn * k + kk] = (wx + f64::from(b[kk])) + rh;
                }
            }
        }
        let mut h_t = vec![0f32; n * k];
        let mut s_t = vec![0f32; n * k];
        for e in 0..n * k {
            let i = sigmoid(pre[0][e]);
            let cand = pre[1][e].tanh();
            let f = sigmoid(pre[2][e]);
            let o = sigmoid(pre[3][e]);
            let s = f * f64::from(s_prev[e]) + i * cand;
            s_t[e] = s as f32;
            h_t[e] = (o * s.tanh()) as f32;
            for (buf, v) in gate_out.iter_mut().zip([i, cand, f, o]) {
                buf.push(v as f32);
            }
        }
        h_out.extend_from_slice(&h_t);
        s_out.extend_from_slice(&s_t);
        h_prev = h_t;
        s_prev = s_t;
    }

    let [i, cg, f, o] = gate_out.map(|v| DenseTensor::new([t_len, n, k], v));
    Ok(LstmStateSequence {
        h: DenseTensor::new([t_len, n, k], h_out)?,
        s: DenseTensor::new([t_len, n, k], s_out)?,
        gates: Some([i?, cg?, f?, o?]),
    })
}
