//! Command implementations. Each returns its artifacts as bytes; `main` decides
//! where they go.

use micropack_core::baselines::{baseline_bins, plan_from_sample_packs, SamplePackConfig, Strategy};
use micropack_core::simulate::simulate_plan;
use micropack_core::solver::{
    argmin_candidate, assign_ranks, evaluate_candidates, plan_with_m, solve, sweep_candidates,
};
use micropack_core::stats::{coefficient_of_variation, summarize};
use micropack_core::workload::{generate_synthetic, write_lengths, LengthDistributionSpec, ManifestFormat};
use micropack_core::{GlobalBatch, PackPlan, PlanSimulation};

use crate::config::{GanttOptions, RunConfig};
use crate::error::CliError;
use crate::formats::{to_json, vertex_csv, CompareDoc, PlanDoc, StrategyReport, SweepDoc, TimelineDoc, REPORT_VERSION};
use crate::gantt;

/// Plans `batch` with `strategy` and checks the result: structure, `pp | m`, and
/// that every batch sample is covered exactly once.
pub fn run_strategy(cfg: &RunConfig, strategy: Strategy, batch: &GlobalBatch) -> Result<PackPlan, CliError> {
    let pipe = cfg.pipeline();
    let plan = match strategy {
        Strategy::Slimpack => match cfg.fixed_m {
            Some(m) => plan_with_m(batch, &cfg.cluster, &pipe, &cfg.solver, m)?,
            None => solve(batch, &cfg.cluster, &pipe, &cfg.solver)?.plan,
        },
        baseline => {
            let pack_cfg = SamplePackConfig {
                max_len: cfg
                    .baseline_max_len
                    .unwrap_or_else(|| SamplePackConfig::for_batch(batch).max_len),
                target_flops: None,
            };
            let bins = baseline_bins(baseline, batch, &pack_cfg, &cfg.model)?;
            plan_from_sample_packs(&bins, &cfg.cluster, &cfg.model, &cfg.multipliers)?
        }
    };
    plan.validate(cfg.cluster.pp)?;
    plan.check_batch_coverage(batch, cfg.cluster.cp_base)?;
    for r in &plan.ranks {
        r.check_costs(&cfg.model, &cfg.multipliers)?;
    }
    Ok(plan)
}

pub fn cmd_plan(cfg: &RunConfig, batch: &GlobalBatch) -> Result<Vec<u8>, CliError> {
    let plan = run_strategy(cfg, cfg.strategy, batch)?;
    Ok(to_json(&PlanDoc::new(cfg, cfg.strategy, &plan)))
}

/// Timeline JSON, one vertex CSV per rank and the Gantt SVG.
pub struct SimArtifacts {
    pub timeline_json: Vec<u8>,
    pub rank_csv: Vec<Vec<u8>>,
    pub gantt_svg: String,
}

pub fn simulate_doc(doc: &PlanDoc) -> Result<SimArtifacts, CliError> {
    let plan = doc.to_plan()?;
    let sim = simulate_plan(&plan, &doc.config.pipeline())?;
    artifacts(doc.strategy, &sim, &doc.config.gantt)
}

fn artifacts(strategy: Strategy, sim: &PlanSimulation, gantt: &GanttOptions) -> Result<SimArtifacts, CliError> {
    let doc = TimelineDoc::new(strategy, sim);
    let rank_csv = sim.ranks.iter().map(vertex_csv).collect::<Result<_, _>>()?;
    Ok(SimArtifacts {
        timeline_json: to_json(&doc),
        rank_csv,
        gantt_svg: gantt::render(&doc, gantt),
    })
}

pub fn cmd_simulate(cfg: &RunConfig, batch: &GlobalBatch) -> Result<SimArtifacts, CliError> {
    let plan = run_strategy(cfg, cfg.strategy, batch)?;
    let sim = simulate_plan(&plan, &cfg.pipeline())?;
    artifacts(cfg.strategy, &sim, &cfg.gantt)
}

fn report(strategy: Strategy, plan: &PackPlan, sim: &PlanSimulation, base_t: f64) -> StrategyReport {
    let costs = |bwd: bool| -> Vec<Vec<f64>> {
        plan.ranks
            .iter()
            .map(|r| {
                let packs = if bwd { &r.bwd_packs } else { &r.fwd_packs };
                packs
                    .iter()
                    .map(|p| if bwd { p.bwd_cost.total() } else { p.fwd_cost.total() } as f64)
                    .collect()
            })
            .collect()
    };
    let (fwd, bwd) = (costs(false), costs(true));
    let pooled = |v: &[Vec<f64>]| summarize(&v.concat()).expect("plans have packs");
    StrategyReport {
        strategy,
        t_total: sim.t_total,
        tokens_per_sec: sim.tokens_per_sec,
        peak_bytes: sim.peak_bytes,
        slimpack_speedup: if base_t > 0.0 { sim.t_total / base_t } else { 1.0 },
        m_per_rank: plan.ranks.iter().map(|r| r.m).collect(),
        fwd_cost: pooled(&fwd),
        bwd_cost: pooled(&bwd),
        fwd_cv_per_rank: fwd.iter().map(|c| coefficient_of_variation(c)).collect(),
        bwd_cv_per_rank: bwd.iter().map(|c| coefficient_of_variation(c)).collect(),
    }
}

/// SlimPack first, then every sample-level baseline, on the same batch.
pub fn cmd_compare(cfg: &RunConfig, batch: &GlobalBatch) -> Result<CompareDoc, CliError> {
    let pipe = cfg.pipeline();
    let mut runs = Vec::new();
    for strategy in std::iter::once(Strategy::Slimpack).chain(Strategy::BASELINES) {
        let plan = run_strategy(cfg, strategy, batch)?;
        let sim = simulate_plan(&plan, &pipe)?;
        runs.push((strategy, plan, sim));
    }
    let base_t = runs[0].2.t_total;
    Ok(CompareDoc {
        version: REPORT_VERSION,
        strategies: runs.iter().map(|(s, p, sim)| report(*s, p, sim, base_t)).collect(),
    })
}

/// Every `(rank, m)` candidate of the SlimPack sweep with the argmin marked per
/// rank. Infeasible candidates are reported, not fatal.
pub fn cmd_sweep(cfg: &RunConfig, batch: &GlobalBatch) -> Result<SweepDoc, CliError> {
    let pipe = cfg.pipeline();
    let (assign, _) = assign_ranks(batch, &cfg.cluster, &pipe, &cfg.solver)?;
    let mut candidates: Vec<_> = evaluate_candidates(&assign, &cfg.cluster, &pipe, &cfg.solver)
        .into_iter()
        .map(|(c, _)| c)
        .collect();
    let per_rank = sweep_candidates(cfg.cluster.pp, &cfg.solver).len();
    for slot in candidates.chunks_mut(per_rank) {
        if let Some(i) = argmin_candidate(slot) {
            slot[i].chosen = true;
        }
    }
    Ok(SweepDoc {
        version: REPORT_VERSION,
        pp: cfg.cluster.pp,
        candidates,
    })
}

pub fn cmd_gen_data(
    spec: &LengthDistributionSpec,
    seed: u64,
    count: usize,
    format: ManifestFormat,
) -> Result<Vec<u8>, CliError> {
    let batch = generate_synthetic(spec, seed, count)?;
    let mut out = Vec::new();
    write_lengths(&batch, format, &mut out).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(out)
}
