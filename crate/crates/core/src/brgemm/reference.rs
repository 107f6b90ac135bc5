use super::{check_operands, BrgemmSpec, OutputElement};
use crate::error::Result;

/// Scalar oracle: `C = beta*C + alpha * sum_i A_i B_i` by a plain triple loop,
/// accumulating in FP64 and rounding once per element.
pub fn brgemm_reference<T: OutputElement>(
    a_blocks: &[&[f32]],
    b_blocks: &[&[f32]],
    c: &mut [T],
    spec: &BrgemmSpec,
) -> Result<()> {
    check_operands(a_blocks, b_blocks, c, spec)?;
    let (alpha, beta) = (f64::from(spec.alpha), f64::from(spec.beta));
    for j in 0..spec.n {
        for i in 0..spec.m {
            let mut sum = 0f64;
            for (a, b) in a_blocks.iter().zip(b_blocks) {
                for p in 0..spec.k {
                    sum += f64::from(a[p * spec.lda + i]) * f64::from(b[j * spec.ldb + p]);
                }
            }
            let dst = &mut c[j * spec.ldc + i];
            let prev = if beta == 0.0 { 0.0 } else { beta * dst.to_f64() };
            *dst = T::from_f64(alpha * sum + prev);
        }
    }
    Ok(())
}
