use crate::suite::BenchResult;
use crate::BenchError;

/// `(sum n_i F_i) / (sum n_i t_i) / peak`, with `t_i` the mean time and `peak` in FLOP/s.
pub fn weighted_efficiency(results: &[(BenchResult, usize)], peak: f64) -> Result<f64, BenchError> {
    if !(peak > 0.0) {
        return Err(BenchError::InvalidConfig(format!("peak must be positive, got {peak}")));
    }
    Ok(weighted_rate(results)? / peak)
}

/// `(sum n_i F_i) / (sum n_i t_i)` in FLOP/s.
pub fn weighted_rate(results: &[(BenchResult, usize)]) -> Result<f64, BenchError> {
    if results.is_empty() {
        return Err(BenchError::Empty);
    }
    let (mut flops, mut secs) = (0f64, 0f64);
    for (r, n) in results {
        flops += *n as f64 * r.flops as f64;
        secs += *n as f64 * r.seconds_mean;
    }
    if secs <= 0.0 {
        return Err(BenchError::InvalidConfig("no timed layer has a positive weight".into()));
    }
    Ok(flops / secs)
}
