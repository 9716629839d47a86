//! Two-phase MicroPack planning.
//!
//! Phase 1 spreads samples over DP ranks by forward FLOPs. Samples too heavy for any
//! single rank are shared by a merged group of ranks under context parallelism.
//! Phase 2 cuts each rank's samples into `m` forward packs and, independently, `m`
//! backward packs. Every rank then sweeps `m = i * pp` and keeps the candidate with
//! the shortest simulated step that fits in memory.

mod merge;
mod oracle;
mod partition;
mod phase1;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostError, Flops};
use crate::plan::{PackPlan, RankPlan};
use crate::schedule::ScheduleError;
use crate::simulate::{simulate_rank, Pipeline};
use crate::workload::{GlobalBatch, Sample};

pub use merge::{apply_dp_merge, detect_outliers, plan_dp_merge, plan_dp_merge_avoiding, resolve_outliers};
pub use oracle::{exact_partition_oracle, ORACLE_MAX_PACKS, ORACLE_MAX_SAMPLES, ORACLE_MAX_UNITS};
pub use partition::{
    asymmetric_repartition, forward_completion_order, grid_slice_bound, partition_rank, phase2_partition,
    phase2_partition_with, reuse_forward_for_backward, sample_units, Pass,
};
pub use phase1::{phase1_assign, DpAssignment};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid cluster: {0}")]
    Cluster(String),
    #[error("invalid solver options: {0}")]
    Options(String),
    #[error("cannot partition: {0}")]
    Partition(String),
    #[error("DP-Merge failed: {0}")]
    Merge(String),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("rank {rank}: no candidate fits the memory budget of {budget} bytes (smallest peak {min_peak} bytes)")]
    Infeasible { rank: usize, budget: u64, min_peak: u128 },
    #[error("rank {rank}: no candidate could be planned: {reason}")]
    NoCandidate { rank: usize, reason: String },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub dp: usize,
    pub pp: usize,
    #[serde(default = "default_cp")]
    pub cp_base: u64,
    pub mem_budget_bytes: u64,
}

fn default_cp() -> u64 {
    1
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.dp == 0 || self.pp == 0 || self.cp_base == 0 {
            return Err(SolverError::Cluster("dp, pp and cp_base must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Token grid slice boundaries snap to.
    pub alignment: u64,
    /// Multipliers `i` of the pipeline width tried as pack counts.
    pub i_candidates: Vec<usize>,
    pub refinement_passes: usize,
    /// A sample is an outlier when its cost exceeds this multiple of the mean rank
    /// capacity.
    pub outlier_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            alignment: 64,
            i_candidates: vec![1, 2, 4, 8, 16],
            refinement_passes: 8,
            outlier_threshold: 1.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Options(m.to_string()));
        if self.alignment == 0 {
            return bad("alignment must be at least 1");
        }
        if self.i_candidates.is_empty() || self.i_candidates[0] == 0 {
            return bad("i_candidates must be a nonempty list of positive integers");
        }
        if self.i_candidates.windows(2).any(|w| w[0] >= w[1]) {
            return bad("i_candidates must be strictly increasing");
        }
        if !(self.outlier_threshold.is_finite() && self.outlier_threshold > 0.0) {
            return bad("outlier_threshold must be positive");
        }
        Ok(())
    }
}

pub fn sweep_candidates(pp: usize, opts: &SolverOptions) -> Vec<usize> {
    opts.i_candidates.iter().map(|i| i * pp).collect()
}

/// One simulated `(rank, m)` candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEval {
    pub dp_rank: usize,
    pub m: usize,
    /// `None` when no plan with this many packs exists.
    pub t_total: Option<f64>,
    pub peak_bytes: Option<u128>,
    pub feasible: bool,
    pub chosen: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub plan: PackPlan,
    pub candidates: Vec<CandidateEval>,
}

/// Relative margin below which two step times count as a tie. Keeps the choice
/// stable when every time is rescaled by the same factor.
const TIE_EPS: f64 = 1e-12;

/// Index of the fastest feasible candidate; ties go to the earliest.
pub fn argmin_candidate(cands: &[CandidateEval]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in cands.iter().enumerate() {
        let (true, Some(t)) = (c.feasible, c.t_total) else {
            continue;
        };
        if best.is_none_or(|(_, b)| t < b * (1.0 - TIE_EPS)) {
            best = Some((i, t));
        }
    }
    best.map(|(i, _)| i)
}

/// Samples of each rank after Phase 1 and DP-Merge, with the base context-parallel
/// degree applied.
pub fn assign_ranks(
    batch: &GlobalBatch,
    cluster: &ClusterConfig,
    pipe: &Pipeline,
    opts: &SolverOptions,
) -> Result<(DpAssignment, Vec<crate::plan::DpMergeGroup>), SolverError> {
    let scaled = GlobalBatch {
        samples: batch
            .samples
            .iter()
            .map(|s| Sample {
                cp_degree: s.cp_degree * cluster.cp_base,
                ..*s
            })
            .collect(),
        source: batch.source.clone(),
    };
    let assign = phase1_assign(&scaled, cluster.dp, &pipe.model);
    resolve_outliers(assign, opts, &pipe.model)
}

fn check_inputs(
    batch: &GlobalBatch,
    cluster: &ClusterConfig,
    pipe: &Pipeline,
    opts: &SolverOptions,
) -> Result<(), SolverError> {
    cluster.validate()?;
    opts.validate()?;
    pipe.model.validate()?;
    pipe.hw.validate()?;
    pipe.mult.validate()?;
    if pipe.pp != cluster.pp {
        return Err(SolverError::Cluster(format!(
            "pipeline has {} stages but the cluster has pp = {}",
            pipe.pp, cluster.pp
        )));
    }
    if batch.samples.is_empty() {
        return Err(SolverError::Partition("empty batch".into()));
    }
    Ok(())
}

/// Evaluates every `(rank, m)` candidate. Results come back in rank-major order
/// whatever the thread count.
pub fn evaluate_candidates(
    assign: &DpAssignment,
    cluster: &ClusterConfig,
    pipe: &Pipeline,
    opts: &SolverOptions,
) -> Vec<(CandidateEval, Option<RankPlan>)> {
    let ms = sweep_candidates(cluster.pp, opts);
    let jobs: Vec<(usize, usize)> = (0..cluster.dp).flat_map(|r| ms.iter().map(move |&m| (r, m))).collect();
    jobs.par_iter()
        .map(|&(r, m)| {
            let mut eval = CandidateEval {
                dp_rank: r,
                m,
                t_total: None,
                peak_bytes: None,
                feasible: false,
                chosen: false,
                error: None,
            };
            let samples = &assign.per_rank_samples[r];
            if samples.is_empty() {
                eval.error = Some("rank has no samples".into());
                return (eval, None);
            }
            let plan = match partition_rank(r, samples, m, &pipe.model, &pipe.mult, opts) {
                Ok(p) => p,
                Err(e) => {
                    eval.error = Some(e.to_string());
                    return (eval, None);
                }
            };
            match simulate_rank(&plan, pipe) {
                Ok(sim) => {
                    let peak = sim.peak_bytes();
                    eval.t_total = Some(sim.timeline.t_total);
                    eval.peak_bytes = Some(peak);
                    eval.feasible = peak <= cluster.mem_budget_bytes as u128;
                    (eval, Some(plan))
                }
                Err(e) => {
                    eval.error = Some(e.to_string());
                    (eval, None)
                }
            }
        })
        .collect()
}

pub fn solve(
    batch: &GlobalBatch,
    cluster: &ClusterConfig,
    pipe: &Pipeline,
    opts: &SolverOptions,
) -> Result<Solution, SolverError> {
    check_inputs(batch, cluster, pipe, opts)?;
    let (assign, merge_groups) = assign_ranks(batch, cluster, pipe, opts)?;
    let evaluated = evaluate_candidates(&assign, cluster, pipe, opts);
    let per_rank = sweep_candidates(cluster.pp, opts).len();
    let mut candidates: Vec<CandidateEval> = Vec::with_capacity(evaluated.len());
    let mut plans: Vec<Option<RankPlan>> = Vec::with_capacity(evaluated.len());
    for (e, p) in evaluated {
        candidates.push(e);
        plans.push(p);
    }
    let mut ranks = Vec::with_capacity(cluster.dp);
    for r in 0..cluster.dp {
        let lo = r * per_rank;
        let slot = &candidates[lo..lo + per_rank];
        match argmin_candidate(slot) {
            Some(i) => {
                candidates[lo + i].chosen = true;
                ranks.push(plans[lo + i].take().expect("feasible candidates keep their plan"));
            }
            None => {
                let min_peak = slot.iter().filter_map(|c| c.peak_bytes).min();
                return Err(match min_peak {
                    Some(min_peak) => SolverError::Infeasible {
                        rank: r,
                        budget: cluster.mem_budget_bytes,
                        min_peak,
                    },
                    None => SolverError::NoCandidate {
                        rank: r,
                        reason: slot
                            .iter()
                            .find_map(|c| c.error.clone())
                            .unwrap_or_else(|| "no candidates".into()),
                    },
                });
            }
        }
    }
    Ok(Solution {
        plan: PackPlan { ranks, merge_groups },
        candidates,
    })
}

/// Plan with a fixed pack count on every rank, without simulating.
pub fn plan_with_m(
    batch: &GlobalBatch,
    cluster: &ClusterConfig,
    pipe: &Pipeline,
    opts: &SolverOptions,
    m: usize,
) -> Result<PackPlan, SolverError> {
    check_inputs(batch, cluster, pipe, opts)?;
    if m == 0 || !m.is_multiple_of(cluster.pp) {
        return Err(SolverError::Options(format!(
            "m = {m} must be a positive multiple of pp"
        )));
    }
    let (assign, merge_groups) = assign_ranks(batch, cluster, pipe, opts)?;
    let ranks = (0..cluster.dp)
        .into_par_iter()
        .map(|r| partition_rank(r, &assign.per_rank_samples[r], m, &pipe.model, &pipe.mult, opts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PackPlan { ranks, merge_groups })
}

/// Largest forward cost among `samples`.
pub fn max_sample_cost(samples: &[Sample], model: &crate::cost::ModelShape) -> Flops {
    samples.iter().map(|s| s.fwd_cost(model).total()).max().unwrap_or(0)
}
