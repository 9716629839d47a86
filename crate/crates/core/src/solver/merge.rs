use std::collections::BTreeSet;

use super::phase1::{lpt, sort_by_cost, DpAssignment};
use super::{SolverError, SolverOptions};
use crate::cost::{Flops, ModelShape};
use crate::plan::DpMergeGroup;
use crate::workload::SampleId;

const THRESHOLD_SCALE: f64 = 1e6;

/// Samples whose forward cost exceeds `outlier_threshold` times the mean rank
/// capacity, heaviest first. The comparison is exact: the threshold is read with six
/// decimals.
pub fn detect_outliers(assign: &DpAssignment, opts: &SolverOptions, model: &ModelShape) -> Vec<SampleId> {
    let total = assign.total();
    let dp = assign.dp() as Flops;
    let thr = (opts.outlier_threshold * THRESHOLD_SCALE).round() as Flops;
    let mut out: Vec<(Flops, SampleId)> = assign
        .per_rank_samples
        .iter()
        .flatten()
        .map(|s| (s.fwd_cost(model).total(), s.id))
        .filter(|&(f, _)| f * THRESHOLD_SCALE as Flops * dp > thr * total)
        .collect();
    out.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    out.into_iter().map(|(_, id)| id).collect()
}

pub fn plan_dp_merge(
    assign: &DpAssignment,
    outlier: SampleId,
    model: &ModelShape,
) -> Result<DpMergeGroup, SolverError> {
    plan_dp_merge_avoiding(assign, outlier, model, &BTreeSet::new())
}

/// Smallest `g` with `f / g <= min` capacity over the ranks left out of the group.
/// The group is the outlier's home plus the `g - 1` least-loaded ranks not in
/// `avoid`. With every rank merged there is nobody left to compare against, so the
/// even share `total / dp` stands in.
pub fn plan_dp_merge_avoiding(
    assign: &DpAssignment,
    outlier: SampleId,
    model: &ModelShape,
    avoid: &BTreeSet<usize>,
) -> Result<DpMergeGroup, SolverError> {
    let dp = assign.dp();
    let home = assign
        .home_rank(outlier)
        .ok_or_else(|| SolverError::Merge(format!("sample {outlier} is not assigned")))?;
    if dp < 2 {
        return Err(SolverError::Merge(format!(
            "sample {outlier} exceeds the rank capacity and dp = {dp} leaves no rank to merge with"
        )));
    }
    let sample = assign.per_rank_samples[home]
        .iter()
        .find(|s| s.id == outlier)
        .expect("home rank holds the sample");
    let f = sample.fwd_cost(model).total();
    let mut free: Vec<usize> = (0..dp).filter(|r| *r != home && !avoid.contains(r)).collect();
    free.sort_by_key(|&r| (assign.per_rank_capacity[r], r));
    for g in 2..=dp {
        if g - 1 > free.len() {
            break;
        }
        let mut members: Vec<usize> = free[..g - 1].to_vec();
        members.push(home);
        members.sort_unstable();
        let others_min = (0..dp)
            .filter(|r| !members.contains(r))
            .map(|r| assign.per_rank_capacity[r])
            .min()
            .unwrap_or(assign.total() / dp as Flops);
        if f <= g as Flops * others_min {
            return Ok(DpMergeGroup {
                member_ranks: members,
                cp_degree: g as u64,
                outlier_sample_id: outlier,
            });
        }
    }
    Err(SolverError::Merge(format!(
        "sample {outlier} cannot be spread thin enough over {dp} ranks; use a larger cluster or a smaller batch"
    )))
}

/// Gives every member a `1/g` share of the outlier and re-balances the members'
/// other samples around it.
pub fn apply_dp_merge(assign: &DpAssignment, group: &DpMergeGroup, model: &ModelShape) -> DpAssignment {
    let mut out = assign.clone();
    let members = &group.member_ranks;
    let mut pool = Vec::new();
    let mut outlier = None;
    for &r in members {
        for s in out.per_rank_samples[r].drain(..) {
            if s.id == group.outlier_sample_id {
                outlier = Some(s);
            } else {
                pool.push(s);
            }
        }
    }
    let mut share = outlier.expect("outlier lives on a member rank");
    share.cp_degree *= group.cp_degree;
    let share_cost = share.fwd_cost(model).total();
    let (placed, loads) = lpt(&pool, &vec![share_cost; members.len()], model);
    for ((&r, mut samples), load) in members.iter().zip(placed).zip(loads) {
        samples.push(share);
        sort_by_cost(&mut samples, model);
        out.per_rank_samples[r] = samples;
        out.per_rank_capacity[r] = load;
    }
    out
}

/// Detects outliers and merges a group for each, heaviest first. Groups never share
/// a rank, and a rank holding a pending outlier is not drafted into another group.
pub fn resolve_outliers(
    assign: DpAssignment,
    opts: &SolverOptions,
    model: &ModelShape,
) -> Result<(DpAssignment, Vec<DpMergeGroup>), SolverError> {
    let outliers = detect_outliers(&assign, opts, model);
    let mut assign = assign;
    let mut groups = Vec::new();
    let mut used = BTreeSet::new();
    for (i, &id) in outliers.iter().enumerate() {
        let home = assign.home_rank(id).expect("outlier is assigned");
        if used.contains(&home) {
            return Err(SolverError::Merge(format!(
                "outlier {id} sits on rank {home}, which already serves another merge group"
            )));
        }
        let mut avoid = used.clone();
        for &other in &outliers[i + 1..] {
            avoid.extend(assign.home_rank(other));
        }
        let group = plan_dp_merge_avoiding(&assign, id, model, &avoid)?;
        assign = apply_dp_merge(&assign, &group, model);
        used.extend(group.member_ranks.iter().copied());
        groups.push(group);
    }
    Ok((assign, groups))
}
