//! Plan -> program -> DAG -> timeline, memory and metrics for every DP rank.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{CostMultipliers, HardwareProfile, ModelShape};
use crate::dagsim::{
    build_dag, compute_metrics, compute_timeline, memory_trace, Dag, MemoryTrace, Metrics, SimOptions, Timeline,
};
use crate::plan::{PackPlan, RankPlan};
use crate::schedule::{build_program, RankProgram, ScheduleError, ScheduleKind};

/// Everything besides the plan that determines a simulated step.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub model: ModelShape,
    pub hw: HardwareProfile,
    pub mult: CostMultipliers,
    pub pp: usize,
    pub schedule: ScheduleKind,
    pub sim: SimOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankSimulation {
    pub dp_rank: usize,
    pub program: RankProgram,
    pub dag: Dag,
    pub timeline: Timeline,
    pub memory: MemoryTrace,
    pub metrics: Metrics,
}

impl RankSimulation {
    pub fn peak_bytes(&self) -> u128 {
        self.memory.peak_bytes()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanSimulation {
    pub ranks: Vec<RankSimulation>,
    /// DP ranks synchronize at the end of the step, so the slowest one sets it.
    pub t_total: f64,
    pub tokens_per_sec: f64,
    pub peak_bytes: u128,
}

/// Summary numbers of a simulated step, cheap to keep for many candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub t_total: f64,
    pub peak_bytes: u128,
}

pub fn simulate_rank(plan: &RankPlan, pipe: &Pipeline) -> Result<RankSimulation, ScheduleError> {
    let program = build_program(plan, pipe.pp, pipe.schedule)?;
    simulate_program(plan, program, pipe)
}

/// Simulates a caller-supplied program for `plan`.
pub fn simulate_program(
    plan: &RankPlan,
    program: RankProgram,
    pipe: &Pipeline,
) -> Result<RankSimulation, ScheduleError> {
    let dag = build_dag(plan, &program, pipe)?;
    let timeline = compute_timeline(&dag)?;
    let layers = pipe.sim.layers_per_stage(pipe.model.num_layers, pipe.pp)?;
    let memory = memory_trace(&dag, &timeline, &plan.sample_map(), &pipe.hw, &layers);
    let metrics = compute_metrics(&dag, &timeline, plan.total_tokens());
    Ok(RankSimulation {
        dp_rank: plan.dp_rank,
        program,
        dag,
        timeline,
        memory,
        metrics,
    })
}

/// Simulates every rank (in parallel; the result does not depend on the thread count).
pub fn simulate_plan(plan: &PackPlan, pipe: &Pipeline) -> Result<PlanSimulation, ScheduleError> {
    let ranks: Vec<RankSimulation> = plan
        .ranks
        .par_iter()
        .map(|r| simulate_rank(r, pipe))
        .collect::<Result<_, _>>()?;
    let t_total = ranks.iter().map(|r| r.timeline.t_total).fold(0.0, f64::max);
    let peak_bytes = ranks.iter().map(RankSimulation::peak_bytes).max().unwrap_or(0);
    let tokens = plan.batch_tokens();
    Ok(PlanSimulation {
        ranks,
        t_total,
        tokens_per_sec: if t_total > 0.0 { tokens as f64 / t_total } else { 0.0 },
        peak_bytes,
    })
}

impl PlanSimulation {
    pub fn summary(&self) -> StepSummary {
        StepSummary {
            t_total: self.t_total,
            peak_bytes: self.peak_bytes,
        }
    }
}
