//! Plan JSON, timeline JSON, vertex CSV and the compare and sweep reports.

use std::collections::HashMap;

use micropack_core::baselines::Strategy;
use micropack_core::cost::Flops;
use micropack_core::plan::pack_costs;
use micropack_core::solver::CandidateEval;
use micropack_core::stats::Summary;
use micropack_core::workload::classify_state;
use micropack_core::{
    Action, DpMergeGroup, MicroPack, PackPlan, PackState, PlanSimulation, RankPlan, RankSimulation, Sample, SampleId,
    Slice,
};
use serde::{Deserialize, Serialize};

use crate::config::{parse_versioned, RunConfig};
use crate::error::CliError;

pub const PLAN_VERSION: u32 = 1;
pub const TIMELINE_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDoc {
    pub version: u32,
    pub strategy: Strategy,
    pub config: RunConfig,
    pub ranks: Vec<RankDoc>,
    pub merge_groups: Vec<DpMergeGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankDoc {
    pub dp_rank: usize,
    pub m: usize,
    pub tau_fwd: Flops,
    pub tau_bwd: Flops,
    pub samples: Vec<Sample>,
    pub fwd_packs: Vec<PackDoc>,
    pub bwd_packs: Vec<PackDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackDoc {
    pub index: usize,
    pub state: PackState,
    /// `[sample_id, start, end]` token spans.
    pub slices: Vec<(SampleId, u64, u64)>,
    pub fwd_flops: Flops,
    pub bwd_flops: Flops,
}

impl PackDoc {
    fn from_pack(p: &MicroPack) -> Self {
        Self {
            index: p.index,
            state: p.state,
            slices: p.slices.iter().map(|s| (s.sample_id, s.start, s.end)).collect(),
            fwd_flops: p.fwd_cost.total(),
            bwd_flops: p.bwd_cost.total(),
        }
    }
}

impl PlanDoc {
    pub fn new(config: &RunConfig, strategy: Strategy, plan: &PackPlan) -> Self {
        let ranks = plan
            .ranks
            .iter()
            .map(|r| RankDoc {
                dp_rank: r.dp_rank,
                m: r.m,
                tau_fwd: r.tau_fwd,
                tau_bwd: r.tau_bwd,
                samples: r.samples.clone(),
                fwd_packs: r.fwd_packs.iter().map(PackDoc::from_pack).collect(),
                bwd_packs: r.bwd_packs.iter().map(PackDoc::from_pack).collect(),
            })
            .collect();
        Self {
            version: PLAN_VERSION,
            strategy,
            config: config.clone(),
            ranks,
            merge_groups: plan.merge_groups.clone(),
        }
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, CliError> {
        parse_versioned(bytes, "plan", PLAN_VERSION)
    }

    /// Rebuilds the plan, recomputing every pack cost from the embedded model and
    /// checking it against the recorded FLOPs.
    pub fn to_plan(&self) -> Result<PackPlan, CliError> {
        let model = &self.config.model;
        let mult = &self.config.multipliers;
        let mut ranks = Vec::with_capacity(self.ranks.len());
        for (ri, r) in self.ranks.iter().enumerate() {
            let table: HashMap<SampleId, Sample> = r.samples.iter().map(|s| (s.id, *s)).collect();
            let build = |stream: &str, docs: &[PackDoc]| -> Result<Vec<MicroPack>, CliError> {
                let mut packs = Vec::with_capacity(docs.len());
                for (pi, d) in docs.iter().enumerate() {
                    let at = format!("/ranks/{ri}/{stream}/{pi}");
                    let mut slices = Vec::with_capacity(d.slices.len());
                    for (si, &(id, start, end)) in d.slices.iter().enumerate() {
                        let Some(s) = table.get(&id) else {
                            return Err(CliError::Config(format!(
                                "plan at {at}/slices/{si}: unknown sample {id}"
                            )));
                        };
                        if start >= end || end > s.length {
                            return Err(CliError::Config(format!(
                                "plan at {at}/slices/{si}: span [{start}, {end}) outside sample {id} of {} tokens",
                                s.length
                            )));
                        }
                        slices.push(Slice {
                            sample_id: id,
                            start,
                            end,
                            sample_len: s.length,
                        });
                    }
                    let (fwd_cost, bwd_cost) = pack_costs(&slices, &table, model, mult);
                    if fwd_cost.total() != d.fwd_flops {
                        return Err(CliError::Config(format!(
                            "plan at {at}/fwd_flops: recorded {} but the slices cost {}",
                            d.fwd_flops,
                            fwd_cost.total()
                        )));
                    }
                    if bwd_cost.total() != d.bwd_flops {
                        return Err(CliError::Config(format!(
                            "plan at {at}/bwd_flops: recorded {} but the slices cost {}",
                            d.bwd_flops,
                            bwd_cost.total()
                        )));
                    }
                    if d.state != classify_state(&slices) {
                        return Err(CliError::Config(format!(
                            "plan at {at}/state: does not match the slices"
                        )));
                    }
                    packs.push(MicroPack {
                        index: d.index,
                        slices,
                        state: d.state,
                        fwd_cost,
                        bwd_cost,
                    });
                }
                Ok(packs)
            };
            ranks.push(RankPlan {
                dp_rank: r.dp_rank,
                samples: r.samples.clone(),
                m: r.m,
                tau_fwd: r.tau_fwd,
                tau_bwd: r.tau_bwd,
                fwd_packs: build("fwd_packs", &r.fwd_packs)?,
                bwd_packs: build("bwd_packs", &r.bwd_packs)?,
            });
        }
        let plan = PackPlan {
            ranks,
            merge_groups: self.merge_groups.clone(),
        };
        plan.validate(self.config.cluster.pp)
            .map_err(|e| CliError::Config(format!("plan: {e}")))?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineDoc {
    pub version: u32,
    pub strategy: Strategy,
    pub t_total: f64,
    pub tokens_per_sec: f64,
    pub peak_bytes: u128,
    pub ranks: Vec<RankTimeline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankTimeline {
    pub dp_rank: usize,
    pub t_total: f64,
    pub peak_bytes: u128,
    pub stages: Vec<StageDoc>,
    pub critical_path: Vec<usize>,
    pub vertices: Vec<VertexDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDoc {
    pub stage: usize,
    pub busy: f64,
    pub idle: f64,
    pub bubble_fraction: f64,
    pub peak_bytes: u128,
    pub peak_activation_bytes: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexDoc {
    pub id: usize,
    pub stage: usize,
    pub action: Action,
    /// Pack index, or `(pack, slice)` for a per-slice vertex.
    pub data_id: String,
    pub start: f64,
    pub finish: f64,
}

impl RankTimeline {
    pub fn new(sim: &RankSimulation) -> Self {
        let stages = sim
            .metrics
            .stages
            .iter()
            .zip(&sim.memory.stages)
            .map(|(m, mem)| StageDoc {
                stage: m.stage,
                busy: m.busy,
                idle: m.idle,
                bubble_fraction: m.bubble_fraction,
                peak_bytes: mem.peak_bytes,
                peak_activation_bytes: mem.peak_activation_bytes,
            })
            .collect();
        let vertices = sim
            .dag
            .vertices
            .iter()
            .enumerate()
            .map(|(id, v)| VertexDoc {
                id,
                stage: v.stage,
                action: v.action,
                data_id: v.data.to_string(),
                start: sim.timeline.start[id],
                finish: sim.timeline.finish[id],
            })
            .collect();
        Self {
            dp_rank: sim.dp_rank,
            t_total: sim.timeline.t_total,
            peak_bytes: sim.peak_bytes(),
            stages,
            critical_path: sim.metrics.critical_path.clone(),
            vertices,
        }
    }
}

impl TimelineDoc {
    pub fn new(strategy: Strategy, sim: &PlanSimulation) -> Self {
        Self {
            version: TIMELINE_VERSION,
            strategy,
            t_total: sim.t_total,
            tokens_per_sec: sim.tokens_per_sec,
            peak_bytes: sim.peak_bytes,
            ranks: sim.ranks.iter().map(RankTimeline::new).collect(),
        }
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, CliError> {
        parse_versioned(bytes, "timeline", TIMELINE_VERSION)
    }
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    vertex: usize,
    stage: usize,
    action: &'a str,
    pack: usize,
    slice: Option<usize>,
    start: f64,
    finish: f64,
    duration: f64,
}

/// One row per vertex of a rank.
pub fn vertex_csv(sim: &RankSimulation) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (id, v) in sim.dag.vertices.iter().enumerate() {
        let (start, finish) = (sim.timeline.start[id], sim.timeline.finish[id]);
        w.serialize(CsvRow {
            vertex: id,
            stage: v.stage,
            action: match v.action {
                Action::Forward => "F",
                Action::Backward => "B",
            },
            pack: v.data.pack,
            slice: v.data.slice,
            start,
            finish,
            duration: finish - start,
        })
        .map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareDoc {
    pub version: u32,
    pub strategies: Vec<StrategyReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub t_total: f64,
    pub tokens_per_sec: f64,
    pub peak_bytes: u128,
    /// This strategy's step time over SlimPack's.
    pub slimpack_speedup: f64,
    pub m_per_rank: Vec<usize>,
    /// Per-pack FLOPs over all ranks.
    pub fwd_cost: Summary,
    pub bwd_cost: Summary,
    /// Per-pack cost CV inside each rank.
    pub fwd_cv_per_rank: Vec<f64>,
    pub bwd_cv_per_rank: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDoc {
    pub version: u32,
    pub pp: usize,
    pub candidates: Vec<CandidateEval>,
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(doc: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(doc).expect("documents serialize");
    out.push(b'\n');
    out
}
