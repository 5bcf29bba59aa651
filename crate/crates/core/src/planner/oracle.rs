//! Brute-force counterparts of the planners, for testing on small instances.

use super::allocate::{client_demands, SplitProblem};
use super::hierarchical::{hierarchical_latency, HierarchyProblem};
use super::multihop::{Hop, RouteProblem};
use super::select::{selection_score, SelectionConfig};
use crate::Result;

/// Visits every split of `total` into `parts` non-negative shares on a grid of
/// `points` steps per dimension; the last share takes the remainder.
fn for_each_split(parts: usize, points: usize, total: f64, f: &mut impl FnMut(&[f64])) {
    fn rec(k: usize, parts: usize, left: usize, points: usize, total: f64, cur: &mut Vec<f64>, f: &mut impl FnMut(&[f64])) {
        if k + 1 == parts {
            cur.push(total * left as f64 / points as f64);
            f(cur);
            cur.pop();
            return;
        }
        for i in 0..=left {
            cur.push(total * i as f64 / points as f64);
            rec(k + 1, parts, left - i, points, total, cur, f);
            cur.pop();
        }
    }
    rec(0, parts, points, points, total, &mut Vec::with_capacity(parts), f);
}

/// Best `max_m(offsets[m] + work[m] / share[m])` over grid splits of `capacity`.
pub fn grid_phase(offsets: &[f64], work: &[f64], capacity: f64, points: usize) -> f64 {
    let mut best = f64::INFINITY;
    for_each_split(offsets.len(), points, capacity, &mut |shares| {
        let t = offsets
            .iter()
            .zip(work)
            .zip(shares)
            .map(|((&o, &w), &s)| {
                if w == 0.0 {
                    o
                } else if s > 0.0 {
                    o + w / s
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max);
        best = best.min(t);
    });
    best
}

/// Per-step latency of the best grid allocation at `cut`, searching each
/// pooled resource on a grid of `points` steps per client dimension.
pub fn grid_minmax(p: &SplitProblem, cut: usize, points: usize) -> Result<f64> {
    let d = client_demands(p, cut)?;
    let fwd: Vec<f64> = d.iter().map(|c| c.fwd).collect();
    let bwd: Vec<f64> = d.iter().map(|c| c.bwd).collect();
    let up: Vec<f64> = d.iter().map(|c| c.up_bits).collect();
    let down: Vec<f64> = d.iter().map(|c| c.down_bits).collect();
    let (tu, td) = match p.topology.pool {
        Some(pool) => {
            let cap = pool.total_hz * pool.spectral_efficiency;
            (grid_phase(&fwd, &up, cap, points), grid_phase(&bwd, &down, cap, points))
        }
        None => {
            let fixed = |off: &[f64], bits: &[f64], rate: &dyn Fn(usize) -> f64| {
                (0..off.len()).map(|m| off[m] + bits[m] / rate(m)).fold(0.0, f64::max)
            };
            (
                fixed(&fwd, &up, &|m| d[m].up_rate.expect("fixed rate")),
                fixed(&bwd, &down, &|m| d[m].down_rate.expect("fixed rate")),
            )
        }
    };
    let cycles: Vec<f64> = d.iter().map(|c| c.server_cycles).collect();
    let ts = grid_phase(&vec![0.0; d.len()], &cycles, p.topology.server()?.compute_rate, points);
    Ok(tu + ts + td)
}

/// Highest-scoring deadline-feasible subset by exhaustive search, as
/// candidate positions. Ties go to the subset enumerated first.
pub fn exhaustive_selection(cfg: &SelectionConfig) -> Result<(Vec<usize>, f64)> {
    let feasible: Vec<usize> = (0..cfg.candidates.len())
        .filter(|&i| cfg.candidates[i].latency <= cfg.deadline)
        .collect();
    let mut best = (Vec::new(), selection_score(cfg, &[])?);
    for mask in 1u64..(1 << feasible.len()) {
        let members: Vec<usize> = (0..feasible.len()).filter(|b| mask >> b & 1 == 1).map(|b| feasible[b]).collect();
        let s = selection_score(cfg, &members)?;
        if s > best.1 {
            best = (members, s);
        }
    }
    Ok(best)
}

/// Minimum over every `0 <= l1 <= l2 <= L`, visiting plans in plain
/// lexicographic order.
pub fn enumerate_hierarchical(p: &HierarchyProblem) -> Result<(usize, usize, f64)> {
    let l = p.profile.len();
    let mut best = (0, 0, f64::INFINITY);
    for l1 in 0..=l {
        for l2 in l1..=l {
            let t = hierarchical_latency(p, l1, l2)?;
            if t < best.2 {
                best = (l1, l2, t);
            }
        }
    }
    Ok(best)
}

/// Cheapest route by enumerating every walk. Ties go to the lexicographically
/// smallest hop sequence.
pub fn exhaustive_route(p: &RouteProblem) -> Result<Option<(f64, Vec<Hop>)>> {
    let (source, dests) = p.indices()?;
    let l = p.profile.len();
    let n = p.topology.nodes.len();
    let mut best: Option<(f64, Vec<Hop>)> = None;
    let mut stack: Vec<(f64, Vec<Hop>)> = Vec::new();
    for end in 0..=l {
        if let Some(c) = p.segment_cost(source, 0, end) {
            stack.push((c, vec![(source, end)]));
        }
    }
    while let Some((cost, hops)) = stack.pop() {
        let &(u, done) = hops.last().expect("non-empty walk");
        if done == l {
            if dests.contains(&u) {
                let wins = match &best {
                    None => true,
                    Some((c, h)) => cost < *c || (cost == *c && hops < *h),
                };
                if wins {
                    best = Some((cost, hops));
                }
            }
            continue;
        }
        for v in (0..n).filter(|&v| v != u) {
            let Some(t) = p.transfer_cost(u, v, done) else { continue };
            for to in done + 1..=l {
                if let Some(c) = p.segment_cost(v, done, to) {
                    let mut next = hops.clone();
                    next.push((v, to));
                    stack.push(((cost + t) + c, next));
                }
            }
        }
    }
    Ok(best)
}
