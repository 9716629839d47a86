//! Independent reference computations for the acceptance suite.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use micropack_core::dagsim::{Dag, MemoryEvent, MemoryReason};
use micropack_core::{Flops, GlobalBatch, ModelShape, PackPlan, RankPlan, Sample, SampleId};
use rand::Rng;

/// Forward FLOPs of tokens `[offset, offset + len)` written out term by term:
/// every token costs its linear projections, and query `q` attends to `q + 1` keys.
pub fn slice_flops_by_token(model: &ModelShape, offset: u64, len: u64) -> u128 {
    let (n, h, f) = (
        model.num_layers as u128,
        model.hidden_dim as u128,
        model.ffn_dim as u128,
    );
    let kv = model.kv_dim() as u128;
    let linear_per_token = 2 * n * (h * h + 2 * h * kv + h * h + 3 * h * f);
    (offset..offset + len)
        .map(|q| linear_per_token + 4 * n * h * (q as u128 + 1))
        .sum()
}

/// Heaviest path weight by enumerating every path from every vertex.
pub fn longest_path_brute(dag: &Dag) -> f64 {
    let n = dag.vertices.len();
    let mut succ = vec![Vec::new(); n];
    for e in &dag.edges {
        succ[e.from].push(e.to);
    }
    fn walk(v: usize, acc: f64, dag: &Dag, succ: &[Vec<usize>], best: &mut f64) {
        let acc = acc + dag.vertices[v].weight;
        *best = best.max(acc);
        for &w in &succ[v] {
            walk(w, acc, dag, succ, best);
        }
    }
    let mut best = 0.0;
    for v in 0..n {
        walk(v, 0.0, dag, &succ, &mut best);
    }
    best
}

/// Makespan of the best assignment of `costs` onto `dp` machines.
pub fn best_makespan(costs: &[Flops], dp: usize) -> Flops {
    fn go(i: usize, costs: &[Flops], loads: &mut Vec<Flops>, best: &mut Flops) {
        if i == costs.len() {
            *best = (*best).min(*loads.iter().max().unwrap());
            return;
        }
        let mut tried = BTreeSet::new();
        for r in 0..loads.len() {
            if !tried.insert(loads[r]) || loads[r] + costs[i] >= *best {
                continue;
            }
            loads[r] += costs[i];
            go(i + 1, costs, loads, best);
            loads[r] -= costs[i];
        }
    }
    let mut best = Flops::MAX;
    go(0, costs, &mut vec![0; dp], &mut best);
    best
}

/// Fewest forwards the last stage must add before each backward so that
/// backward `k` never waits for forward `ready[k]`.
pub fn minimal_last_stage_injections(ready: &[usize], mf: usize) -> usize {
    let mut issued = 0;
    let mut injected = 0;
    for (k, &r) in ready.iter().enumerate() {
        issued = issued.max((k + 1).min(mf));
        if r + 1 > issued {
            injected += r + 1 - issued;
            issued = r + 1;
        }
    }
    injected
}

/// Running byte count of a stage's events, allocations first at equal times.
/// Returns `(minimum, maximum)` of the prefix sums.
pub fn prefix_extremes(events: &[MemoryEvent]) -> (i128, i128) {
    let mut ev: Vec<&MemoryEvent> = events.iter().collect();
    ev.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then((a.delta_bytes < 0).cmp(&(b.delta_bytes < 0)))
    });
    let (mut live, mut lo, mut hi) = (0i128, 0i128, 0i128);
    for e in ev {
        live += e.delta_bytes;
        lo = lo.min(live);
        hi = hi.max(live);
    }
    (lo, hi)
}

pub fn is_static(e: &MemoryEvent) -> bool {
    e.reason == MemoryReason::Static
}

/// Every sample's tokens appear exactly once per stream, as a gapless cover of
/// `[0, len)`; forward slices ascend and backward slices descend in stream order.
pub fn check_rank_streams(r: &RankPlan) -> Result<(), String> {
    let lens: BTreeMap<SampleId, u64> = r.samples.iter().map(|s| (s.id, s.length)).collect();
    for (name, packs, backward) in [("fwd", &r.fwd_packs, false), ("bwd", &r.bwd_packs, true)] {
        let mut spans: BTreeMap<SampleId, Vec<(u64, u64)>> = BTreeMap::new();
        for p in packs.iter() {
            for s in &p.slices {
                spans.entry(s.sample_id).or_default().push((s.start, s.end));
            }
        }
        let tokens: u64 = spans.values().flatten().map(|(a, b)| b - a).sum();
        let want: u64 = lens.values().sum();
        if tokens != want {
            return Err(format!(
                "rank {} {name}: {tokens} tokens planned, {want} assigned",
                r.dp_rank
            ));
        }
        for (id, v) in &spans {
            let Some(&len) = lens.get(id) else {
                return Err(format!("rank {} {name}: unknown sample {id}", r.dp_rank));
            };
            let mut order = v.clone();
            if backward {
                order.reverse();
            }
            let mut at = 0;
            for (a, b) in order {
                if a != at || b <= a {
                    return Err(format!("rank {} {name}: sample {id} out of order at {a}", r.dp_rank));
                }
                at = b;
            }
            if at != len {
                return Err(format!(
                    "rank {} {name}: sample {id} covered to {at} of {len}",
                    r.dp_rank
                ));
            }
        }
        if spans.len() != lens.len() {
            return Err(format!("rank {} {name}: some samples never scheduled", r.dp_rank));
        }
    }
    Ok(())
}

/// Batch tokens equal the planned tokens, counting a merged sample's shares as
/// one sample.
pub fn check_token_conservation(plan: &PackPlan, batch: &GlobalBatch) -> Result<(), String> {
    let mut seen: BTreeMap<SampleId, u64> = BTreeMap::new();
    for r in &plan.ranks {
        for s in &r.samples {
            if *seen.entry(s.id).or_insert(s.length) != s.length {
                return Err(format!("sample {} has two lengths", s.id));
            }
        }
    }
    let want: BTreeMap<SampleId, u64> = batch.samples.iter().map(|s| (s.id, s.length)).collect();
    if seen != want {
        return Err("planned samples differ from the batch".into());
    }
    Ok(())
}

pub fn random_batch(rng: &mut impl Rng, n: usize) -> GlobalBatch {
    let samples = (0..n as u64)
        .map(|i| {
            let len = if rng.random_bool(0.05) {
                rng.random_range(16_384..=131_072)
            } else {
                rng.random_range(64..=4096)
            };
            Sample::new(i, len)
        })
        .collect();
    GlobalBatch {
        samples,
        source: "random".into(),
    }
}
