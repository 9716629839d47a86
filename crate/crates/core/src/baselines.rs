//! Sample-level packing strategies, adapted to the same plan format so they run
//! through the same schedule and simulator. Bins only ever hold whole samples, and
//! a bin's backward pass has the same composition as its forward pass.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostMultipliers, Flops, ModelShape};
use crate::plan::{pack_costs, PackPlan, RankPlan};
use crate::solver::ClusterConfig;
use crate::workload::{classify_state, GlobalBatch, MicroPack, Sample, SampleId, Slice};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("sample {id} has {len} tokens, more than max_len = {max_len}")]
    TooLong { id: SampleId, len: u64, max_len: u64 },
    #[error("{0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePackConfig {
    /// Token capacity of one bin.
    pub max_len: u64,
    /// FLOPs budget of one bin for FLOPs-based packing; the costliest sample when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_flops: Option<Flops>,
}

impl SamplePackConfig {
    /// Bins as long as the longest sample.
    pub fn for_batch(batch: &GlobalBatch) -> Self {
        Self {
            max_len: batch.lengths().max().unwrap_or(1),
            target_flops: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Slimpack,
    BestFit,
    Length,
    Tflops,
}

impl Strategy {
    pub const BASELINES: [Strategy; 3] = [Strategy::BestFit, Strategy::Length, Strategy::Tflops];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Slimpack => "slimpack",
            Strategy::BestFit => "best_fit",
            Strategy::Length => "length",
            Strategy::Tflops => "tflops",
        }
    }
}

fn check_lengths(batch: &GlobalBatch, cfg: &SamplePackConfig) -> Result<(), BaselineError> {
    match batch.samples.iter().find(|s| s.length > cfg.max_len) {
        Some(s) => Err(BaselineError::TooLong {
            id: s.id,
            len: s.length,
            max_len: cfg.max_len,
        }),
        None => Ok(()),
    }
}

fn by_length_desc(batch: &GlobalBatch) -> Vec<Sample> {
    let mut v = batch.samples.clone();
    v.sort_by_key(|s| (Reverse(s.length), s.id));
    v
}

/// Best-fit decreasing on token length.
pub fn best_fit_pack(batch: &GlobalBatch, cfg: &SamplePackConfig) -> Result<Vec<Vec<Sample>>, BaselineError> {
    check_lengths(batch, cfg)?;
    let mut bins: Vec<Vec<Sample>> = Vec::new();
    // (remaining capacity, bin index)
    let mut open: BTreeSet<(u64, usize)> = BTreeSet::new();
    for s in by_length_desc(batch) {
        let slot = open.range((s.length, 0)..).next().copied();
        match slot {
            Some((rem, b)) => {
                open.remove(&(rem, b));
                bins[b].push(s);
                open.insert((rem - s.length, b));
            }
            None => {
                open.insert((cfg.max_len - s.length, bins.len()));
                bins.push(vec![s]);
            }
        }
    }
    Ok(bins)
}

/// Next-fit over samples sorted by descending length.
pub fn length_pack(batch: &GlobalBatch, cfg: &SamplePackConfig) -> Result<Vec<Vec<Sample>>, BaselineError> {
    check_lengths(batch, cfg)?;
    let mut bins: Vec<Vec<Sample>> = Vec::new();
    let mut used = 0u64;
    for s in by_length_desc(batch) {
        match bins.last_mut() {
            Some(bin) if used + s.length <= cfg.max_len => {
                bin.push(s);
                used += s.length;
            }
            _ => {
                bins.push(vec![s]);
                used = s.length;
            }
        }
    }
    Ok(bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsPacking {
    pub bins: Vec<Vec<Sample>>,
    /// Bins holding a single sample costlier than the budget.
    pub oversized: Vec<bool>,
    pub target_flops: Flops,
}

/// First-fit decreasing on forward FLOPs under both the FLOPs budget and `max_len`.
pub fn tflops_pack(
    batch: &GlobalBatch,
    cfg: &SamplePackConfig,
    model: &ModelShape,
) -> Result<FlopsPacking, BaselineError> {
    check_lengths(batch, cfg)?;
    let mut samples: Vec<(Flops, Sample)> = batch.samples.iter().map(|s| (s.fwd_cost(model).total(), *s)).collect();
    samples.sort_by_key(|(c, s)| (Reverse(*c), s.id));
    let target = cfg
        .target_flops
        .unwrap_or_else(|| samples.first().map_or(0, |(c, _)| *c));
    let mut bins: Vec<Vec<Sample>> = Vec::new();
    let mut load: Vec<(Flops, u64)> = Vec::new();
    let mut oversized = Vec::new();
    for (c, s) in samples {
        if c > target {
            bins.push(vec![s]);
            load.push((Flops::MAX, cfg.max_len));
            oversized.push(true);
            continue;
        }
        let fit = load
            .iter()
            .position(|&(f, t)| f.saturating_add(c) <= target && t + s.length <= cfg.max_len);
        match fit {
            Some(b) => {
                bins[b].push(s);
                load[b].0 += c;
                load[b].1 += s.length;
            }
            None => {
                bins.push(vec![s]);
                load.push((c, s.length));
                oversized.push(false);
            }
        }
    }
    Ok(FlopsPacking {
        bins,
        oversized,
        target_flops: target,
    })
}

fn bin_cost(bin: &[Sample], model: &ModelShape) -> Flops {
    bin.iter().map(|s| s.fwd_cost(model).total()).sum()
}

/// Splits a multi-sample bin into two bins of similar cost.
fn halve(mut members: Vec<Sample>, model: &ModelShape) -> (Vec<Sample>, Vec<Sample>) {
    members.sort_by_key(|s| (Reverse(s.fwd_cost(model).total()), s.id));
    let (mut left, mut right) = (Vec::new(), Vec::new());
    let (mut lc, mut rc) = (0, 0);
    for s in members {
        let c = s.fwd_cost(model).total();
        if lc <= rc {
            left.push(s);
            lc += c;
        } else {
            right.push(s);
            rc += c;
        }
    }
    (left, right)
}

/// Costliest bin holding more than one sample, as `(rank, bin)`, among `ranks`.
fn heaviest_multi(
    per_rank: &[Vec<Vec<Sample>>],
    ranks: impl Iterator<Item = usize>,
    model: &ModelShape,
) -> Option<(usize, usize)> {
    ranks
        .flat_map(|r| {
            per_rank[r]
                .iter()
                .enumerate()
                .filter(|(_, b)| b.len() > 1)
                .map(move |(i, b)| (bin_cost(b, model), Reverse(r), Reverse(i)))
        })
        .max()
        .map(|(_, Reverse(r), Reverse(i))| (r, i))
}

/// Splits bins until every rank holds a positive multiple of `pp`. A rank with
/// only single-sample bins takes one half of the costliest multi-sample bin held
/// elsewhere. Every step adds a bin, so this ends after at most one step per
/// sample.
fn fit_pipeline_width(per_rank: &mut [Vec<Vec<Sample>>], pp: usize, model: &ModelShape) -> Result<(), BaselineError> {
    while let Some(r) = (0..per_rank.len()).find(|&r| per_rank[r].is_empty() || !per_rank[r].len().is_multiple_of(pp)) {
        if let Some((_, i)) = heaviest_multi(per_rank, std::iter::once(r), model) {
            let (left, right) = halve(std::mem::take(&mut per_rank[r][i]), model);
            per_rank[r][i] = left;
            per_rank[r].insert(i + 1, right);
        } else if let Some((d, i)) = heaviest_multi(per_rank, (0..per_rank.len()).filter(|&d| d != r), model) {
            let (left, right) = halve(std::mem::take(&mut per_rank[d][i]), model);
            per_rank[d][i] = left;
            per_rank[r].push(right);
        } else {
            return Err(BaselineError::Shape(format!(
                "rank {r} holds {} bins and no bin left anywhere can be split to reach a multiple of pp = {pp}",
                per_rank[r].len()
            )));
        }
    }
    Ok(())
}

fn whole_pack(index: usize, bin: &[Sample], model: &ModelShape, mult: &CostMultipliers) -> MicroPack {
    let slices: Vec<Slice> = bin.iter().map(Slice::whole).collect();
    let table = bin.iter().map(|s| (s.id, *s)).collect();
    let (fwd_cost, bwd_cost) = pack_costs(&slices, &table, model, mult);
    MicroPack {
        index,
        state: classify_state(&slices),
        slices,
        fwd_cost,
        bwd_cost,
    }
}

/// Spreads bins over DP ranks by LPT on bin cost, then splits bins until every
/// rank's count is a multiple of `pp`. Fails only once every bin is down to one
/// sample and some rank's count still is not a multiple of `pp`.
pub fn plan_from_sample_packs(
    packs: &[Vec<Sample>],
    cluster: &ClusterConfig,
    model: &ModelShape,
    mult: &CostMultipliers,
) -> Result<PackPlan, BaselineError> {
    let dp = cluster.dp.max(1);
    let pp = cluster.pp.max(1);
    let cp = cluster.cp_base.max(1);
    let mut bins: Vec<Vec<Sample>> = packs
        .iter()
        .filter(|b| !b.is_empty())
        .map(|b| {
            b.iter()
                .map(|s| Sample {
                    cp_degree: s.cp_degree * cp,
                    ..*s
                })
                .collect()
        })
        .collect();
    bins.sort_by_cached_key(|b| (Reverse(bin_cost(b, model)), b[0].id));
    let mut heap: BinaryHeap<Reverse<(Flops, usize)>> = (0..dp).map(|r| Reverse((0, r))).collect();
    let mut per_rank: Vec<Vec<Vec<Sample>>> = vec![Vec::new(); dp];
    for bin in bins {
        let Reverse((load, r)) = heap.pop().expect("dp >= 1");
        heap.push(Reverse((load + bin_cost(&bin, model), r)));
        per_rank[r].push(bin);
    }
    fit_pipeline_width(&mut per_rank, pp, model)?;
    let mut ranks = Vec::with_capacity(dp);
    for (r, rank_bins) in per_rank.into_iter().enumerate() {
        let samples: Vec<Sample> = rank_bins.iter().flatten().copied().collect();
        let fwd_packs: Vec<MicroPack> = rank_bins
            .iter()
            .enumerate()
            .map(|(i, b)| whole_pack(i, b, model, mult))
            .collect();
        let m = fwd_packs.len();
        let total_fwd: Flops = fwd_packs.iter().map(|p| p.fwd_cost.total()).sum();
        let total_bwd: Flops = fwd_packs.iter().map(|p| p.bwd_cost.total()).sum();
        ranks.push(RankPlan {
            dp_rank: r,
            samples,
            m,
            tau_fwd: total_fwd.div_ceil(m as Flops),
            tau_bwd: total_bwd.div_ceil(m as Flops),
            bwd_packs: fwd_packs.clone(),
            fwd_packs,
        });
    }
    Ok(PackPlan {
        ranks,
        merge_groups: Vec::new(),
    })
}

/// Bins of the named baseline strategy.
pub fn baseline_bins(
    strategy: Strategy,
    batch: &GlobalBatch,
    cfg: &SamplePackConfig,
    model: &ModelShape,
) -> Result<Vec<Vec<Sample>>, BaselineError> {
    match strategy {
        Strategy::BestFit => best_fit_pack(batch, cfg),
        Strategy::Length => length_pack(batch, cfg),
        Strategy::Tflops => Ok(tflops_pack(batch, cfg, model)?.bins),
        Strategy::Slimpack => Err(BaselineError::Shape("slimpack is not a sample-level baseline".into())),
    }
}
