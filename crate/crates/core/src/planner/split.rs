use super::allocate::{allocate_minmax, MinMaxAllocation, SplitProblem};
use crate::{Error, Result};

/// Best cut and the per-cut outcomes it was chosen from.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitChoice {
    pub cut: usize,
    pub allocation: MinMaxAllocation,
    /// Step latency per cut `0..=L`; `None` where the cut is infeasible.
    pub candidates: Vec<Option<f64>>,
}

/// Tries every cut `0..=L` with a min-max allocation and keeps the fastest.
/// Latencies within a relative `1e-12` count as ties and go to the smaller cut.
pub fn select_split_layer(p: &SplitProblem) -> Result<SplitChoice> {
    let l = p.profile.len();
    if l < 2 {
        return Err(Error::config("split selection needs at least 2 layers"));
    }
    let mut best: Option<MinMaxAllocation> = None;
    let mut first_err = None;
    let mut candidates = Vec::with_capacity(l + 1);
    for cut in 0..=l {
        match allocate_minmax(p, cut) {
            Ok(a) => {
                let t = a.step_latency();
                candidates.push(Some(t));
                let better = match &best {
                    None => true,
                    Some(b) => t < b.step_latency() * (1.0 - 1e-12),
                };
                if better {
                    best = Some(a);
                }
            }
            Err(e) => {
                candidates.push(None);
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some(allocation) => Ok(SplitChoice {
            cut: allocation.cut,
            allocation,
            candidates,
        }),
        None => Err(first_err.expect("at least one cut was tried")),
    }
}
