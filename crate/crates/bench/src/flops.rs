//! Multiply-add FLOP counts used for rates (GEMM work only).

use brgemm_core::cnn::ConvSpec;

/// `2 N K C R S P Q`.
pub fn flops_conv(spec: &ConvSpec, n: usize) -> u64 {
    [n, spec.k, spec.c, spec.r, spec.s, spec.p(), spec.q()]
        .iter()
        .fold(2u64, |acc, &d| acc * d as u64)
}

/// `2 T N (4 K C + 4 K K)`; the elementwise gate math is not counted.
pub fn flops_lstm_fwd(t: usize, n: usize, c: usize, k: usize) -> u64 {
    let (t, n, c, k) = (t as u64, n as u64, c as u64, k as u64);
    2 * t * n * (4 * k * c + 4 * k * k)
}

/// `2 N C K`.
pub fn flops_fc(n: usize, c: usize, k: usize) -> u64 {
    2 * n as u64 * c as u64 * k as u64
}
