use crate::error::{Error, Result};

/// Vector/register model the tile planner targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    /// FP32 lanes per vector register.
    pub vlen: usize,
    /// Independent accumulators needed to hide FMA latency.
    pub fma_latency: usize,
    /// Vector registers available to the microkernel.
    pub budget: usize,
}

impl Default for Target {
    /// 32 registers of 16 FP32 lanes, FMA latency 5.
    fn default() -> Self {
        Self {
            vlen: 16,
            fma_latency: 5,
            budget: 32,
        }
    }
}

/// Register tile of the outer-product microkernel: `m_b` rows of C (along the
/// vector direction) by `n_b` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TilePlan {
    pub m_b: usize,
    pub n_b: usize,
    pub vlen: usize,
    pub fma_latency: usize,
    pub budget: usize,
    /// Set when no feasible tile reaches `fma_latency` accumulators.
    pub degraded: bool,
}

impl TilePlan {
    /// Explicit tile, e.g. from an override. Checks lane alignment and the register budget.
    pub fn new(m_b: usize, n_b: usize, target: Target) -> Result<Self> {
        if target.vlen == 0 {
            return Err(Error::InvalidPlan("vlen must be >= 1".into()));
        }
        if m_b == 0 || n_b == 0 {
            return Err(Error::InvalidPlan(format!("empty tile {m_b}x{n_b}")));
        }
        if m_b >= target.vlen && !m_b.is_multiple_of(target.vlen) {
            return Err(Error::InvalidPlan(format!(
                "m_b={m_b} is not a multiple of vlen={}",
                target.vlen
            )));
        }
        let plan = Self {
            m_b,
            n_b,
            vlen: target.vlen,
            fma_latency: target.fma_latency,
            budget: target.budget,
            degraded: false,
        };
        if plan.registers() > target.budget {
            return Err(Error::InvalidPlan(format!(
                "{m_b}x{n_b} tile needs {} registers, budget is {}",
                plan.registers(),
                target.budget
            )));
        }
        Ok(Self {
            degraded: plan.accumulators() < target.fma_latency,
            ..plan
        })
    }

    pub fn target(&self) -> Target {
        Target {
            vlen: self.vlen,
            fma_latency: self.fma_latency,
            budget: self.budget,
        }
    }

    /// Vector registers per m_b column.
    pub fn vectors(&self) -> usize {
        self.m_b.div_ceil(self.vlen)
    }

    pub fn accumulators(&self) -> usize {
        self.n_b * self.vectors()
    }

    /// Accumulators plus `n_b` B broadcasts plus one A column load.
    pub fn registers(&self) -> usize {
        self.accumulators() + self.n_b + 1
    }

    pub fn hides_fma_latency(&self) -> bool {
        self.accumulators() >= self.fma_latency
    }
}

/// Chooses the register tile for an `m x n` output.
///
/// Candidates have `m_b` a multiple of `vlen` (or `m_b = m` when `m < vlen`) and fit
/// the register budget. The winner maximises, in order: reaching `fma_latency`
/// accumulators, `m_b | m`, accumulator count, `m_b`, `n_b`.
pub fn plan_tiles(m: usize, n: usize, vlen: usize, fma_latency: usize, budget: usize) -> TilePlan {
    let (m, n, vlen, budget) = (m.max(1), n.max(1), vlen.max(1), budget.max(3));
    let candidates: Vec<usize> = if m < vlen {
        vec![m]
    } else {
        (1..=m / vlen).map(|v| v * vlen).collect()
    };

    let mut best: Option<((bool, bool, usize, usize, usize), TilePlan)> = None;
    for m_b in candidates {
        let vectors = m_b.div_ceil(vlen);
        // acc + n_b + 1 <= budget  with  acc = n_b * vectors
        let n_b = ((budget - 1) / (vectors + 1)).min(n);
        if n_b == 0 {
            continue;
        }
        let acc = n_b * vectors;
        let key = (acc >= fma_latency, m % m_b == 0, acc, m_b, n_b);
        if best.as_ref().is_none_or(|(k, _)| key > *k) {
            best = Some((
                key,
                TilePlan {
                    m_b,
                    n_b,
                    vlen,
                    fma_latency,
                    budget,
                    degraded: acc < fma_latency,
                },
            ));
        }
    }
    // m_b = min(m, vlen), n_b = 1 always fits a budget of 3.
    best.expect("a single-vector tile is always feasible").1
}
