//! Outer-product tile kernels.
//!
//! Each kernel owns one `m_b x n_b` tile of C. Accumulators live in locals for the
//! whole batch and all of `k`; C is touched once, on the final store.
//! Accumulation is FP64 (FP32 products are exact in FP64), so the per-element
//! summation order (batch item, then k) is the only thing the tile shape could
//! change, and it does not.

use super::OutputElement;

pub(crate) struct Operands<'a> {
    pub a: &'a [&'a [f32]],
    pub b: &'a [&'a [f32]],
    pub k: usize,
    pub lda: usize,
    pub ldb: usize,
}

#[derive(Clone, Copy)]
pub(crate) struct Store {
    pub alpha: f64,
    pub beta: f64,
    pub ldc: usize,
}

impl Store {
    #[inline(always)]
    fn apply<T: OutputElement>(&self, acc: &[f64], dst: &mut [T]) {
        if self.beta == 0.0 {
            for (d, &v) in dst.iter_mut().zip(acc) {
                *d = T::from_f64(self.alpha * v);
            }
        } else {
            for (d, &v) in dst.iter_mut().zip(acc) {
                *d = T::from_f64(self.alpha * v + self.beta * d.to_f64());
            }
        }
    }
}

pub(crate) type TileFn<T> = fn(&Operands<'_>, usize, usize, &mut [T], Store);

#[inline(never)]
fn tile_fixed<T: OutputElement, const MB: usize, const NB: usize>(
    ops: &Operands<'_>,
    row0: usize,
    col0: usize,
    c: &mut [T],
    store: Store,
) {
    let mut acc = [[0f64; MB]; NB];
    for (a, b) in ops.a.iter().zip(ops.b) {
        for p in 0..ops.k {
            let col: &[f32; MB] = a[p * ops.lda + row0..][..MB].try_into().unwrap();
            for (j, accj) in acc.iter_mut().enumerate() {
                let bv = f64::from(b[(col0 + j) * ops.ldb + p]);
                for i in 0..MB {
                    accj[i] += f64::from(col[i]) * bv;
                }
            }
        }
    }
    for (j, accj) in acc.iter().enumerate() {
        let start = (col0 + j) * store.ldc + row0;
        store.apply(accj, &mut c[start..start + MB]);
    }
}

/// Runtime-extent tile; handles remainders and shapes outside the fixed family.
pub(crate) fn tile_dyn<T: OutputElement>(
    ops: &Operands<'_>,
    row0: usize,
    col0: usize,
    mb: usize,
    nb: usize,
    scratch: &mut Vec<f64>,
    c: &mut [T],
    store: Store,
) {
    scratch.clear();
    scratch.resize(mb * nb, 0.0);
    for (a, b) in ops.a.iter().zip(ops.b) {
        for p in 0..ops.k {
            let col = &a[p * ops.lda + row0..][..mb];
            for (j, accj) in scratch.chunks_exact_mut(mb).enumerate() {
                let bv = f64::from(b[(col0 + j) * ops.ldb + p]);
                for (acc, &av) in accj.iter_mut().zip(col) {
                    *acc += f64::from(av) * bv;
                }
            }
        }
    }
    for (j, accj) in scratch.chunks_exact(mb).enumerate() {
        let start = (col0 + j) * store.ldc + row0;
        store.apply(accj, &mut c[start..start + mb]);
    }
}

macro_rules! tile_family {
    ($mb:expr, $nb:expr; $( $m:literal => [$($n:literal),*] );* $(;)?) => {
        match ($mb, $nb) {
            $( $( ($m, $n) => Some(tile_fixed::<T, $m, $n> as TileFn<T>), )* )*
            _ => None,
        }
    };
}

/// Monomorphized kernel for a full `m_b x n_b` tile, if the family has one.
pub(crate) fn fixed_tile<T: OutputElement>(m_b: usize, n_b: usize) -> Option<TileFn<T>> {
    tile_family!(m_b, n_b;
        4 => [1, 2, 3, 4, 5, 6, 7, 8];
        8 => [1, 2, 3, 4, 5, 6, 7, 8];
        16 => [1, 2, 3, 4, 5, 6, 7, 8];
        32 => [1, 2, 3, 4, 5, 6, 7, 8];
        48 => [1, 2, 3, 4, 5, 6];
        64 => [1, 2, 3, 4, 5, 6];
    )
}
