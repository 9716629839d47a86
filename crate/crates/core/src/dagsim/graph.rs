use std::collections::HashMap;

use super::{Dag, DataId, Edge, EdgeKind, SimError, Vertex};
use crate::cost::{seconds_unchecked, vocab_projection_flops, SliceCost};
use crate::plan::RankPlan;
use crate::schedule::{Action, RankProgram};
use crate::simulate::Pipeline;
use crate::workload::{MicroPack, PackState, SampleId, Slice};

/// A data unit shared by all stages: one pack, or one slice of a `Slim` pack.
struct Unit {
    data: DataId,
    slices: Vec<Slice>,
}

/// Units of a stream in execution order. A `Slim` pack runs slice by slice, in
/// reverse listing order for the backward pass so that later tokens go first. Other
/// packs move through the pipeline as one micro-batch.
fn units(packs: &[MicroPack], action: Action) -> Vec<Unit> {
    let mut out = Vec::new();
    for p in packs {
        if p.state != PackState::Slim {
            out.push(Unit {
                data: DataId {
                    pack: p.index,
                    slice: None,
                },
                slices: p.slices.clone(),
            });
            continue;
        }
        let mut idx: Vec<usize> = (0..p.slices.len()).collect();
        if action == Action::Backward {
            idx.reverse();
        }
        out.extend(idx.into_iter().map(|j| Unit {
            data: DataId {
                pack: p.index,
                slice: Some(j),
            },
            slices: vec![p.slices[j]],
        }));
    }
    out
}

/// Per-sample list of `(start, end, unit)` in stream execution order.
fn spans_by_sample(units: &[Unit]) -> HashMap<SampleId, Vec<(u64, u64, usize)>> {
    let mut map: HashMap<SampleId, Vec<(u64, u64, usize)>> = HashMap::new();
    for (u, unit) in units.iter().enumerate() {
        for s in &unit.slices {
            map.entry(s.sample_id).or_default().push((s.start, s.end, u));
        }
    }
    map
}

/// Builds the dependency graph with caller-supplied vertex weights.
pub(crate) fn build_graph(
    plan: &RankPlan,
    program: &RankProgram,
    pp: usize,
    weigh: impl Fn(usize, Action, &[Slice]) -> f64,
    hop_latency: f64,
) -> Result<Dag, SimError> {
    if program.stages.len() != pp {
        return Err(SimError::Mismatch(format!(
            "program has {} stages, pipeline has {pp}",
            program.stages.len()
        )));
    }
    let fwd_units = units(&plan.fwd_packs, Action::Forward);
    let bwd_units = units(&plan.bwd_packs, Action::Backward);
    let first_unit = |packs: &[MicroPack], us: &[Unit]| {
        let mut first = vec![usize::MAX; packs.len()];
        for (i, u) in us.iter().enumerate().rev() {
            first[u.data.pack] = i;
        }
        first
    };
    let fwd_first = first_unit(&plan.fwd_packs, &fwd_units);
    let bwd_first = first_unit(&plan.bwd_packs, &bwd_units);
    let unit_count = |first: &[usize], total: usize, pack: usize| {
        let next = first.get(pack + 1).copied().unwrap_or(total);
        next - first[pack]
    };

    let mut dag = Dag::default();
    // vertex id of (stage, unit) per action
    let mut fwd_vid = vec![vec![usize::MAX; fwd_units.len()]; pp];
    let mut bwd_vid = vec![vec![usize::MAX; bwd_units.len()]; pp];
    let mut edges = Vec::new();

    for (s, tasks) in program.stages.iter().enumerate() {
        let mut prev: Option<usize> = None;
        for t in tasks {
            let (us, first, vids, limit) = match t.action {
                Action::Forward => (&fwd_units, &fwd_first, &mut fwd_vid, plan.fwd_packs.len()),
                Action::Backward => (&bwd_units, &bwd_first, &mut bwd_vid, plan.bwd_packs.len()),
            };
            if t.pack_index >= limit || t.stage != s {
                return Err(SimError::Mismatch(format!("task {t} on stage {s}")));
            }
            let start = first[t.pack_index];
            for u in start..start + unit_count(first, us.len(), t.pack_index) {
                if vids[s][u] != usize::MAX {
                    return Err(SimError::Mismatch(format!("task {t} issued twice")));
                }
                let id = dag.vertices.len();
                dag.vertices.push(Vertex {
                    stage: s,
                    action: t.action,
                    data: us[u].data,
                    weight: weigh(s, t.action, &us[u].slices),
                });
                dag.coverage.push(us[u].slices.clone());
                vids[s][u] = id;
                if let Some(p) = prev {
                    edges.push(Edge::new(p, id, EdgeKind::Schedule));
                }
                prev = Some(id);
            }
        }
    }
    let missing = fwd_vid.iter().chain(&bwd_vid).flatten().any(|&v| v == usize::MAX);
    if missing {
        return Err(SimError::Mismatch("program leaves a pack unscheduled".into()));
    }

    let hop = |from, to| Edge {
        from,
        to,
        kind: EdgeKind::InterStage,
        delay: hop_latency,
    };
    for s in 0..pp.saturating_sub(1) {
        for (&a, &b) in fwd_vid[s].iter().zip(&fwd_vid[s + 1]) {
            edges.push(hop(a, b));
        }
        for (&a, &b) in bwd_vid[s + 1].iter().zip(&bwd_vid[s]) {
            edges.push(hop(a, b));
        }
    }

    let fwd_spans = spans_by_sample(&fwd_units);
    let bwd_spans = spans_by_sample(&bwd_units);
    let last = pp - 1;
    for (sample, bspans) in &bwd_spans {
        let Some(fspans) = fwd_spans.get(sample) else {
            return Err(SimError::Mismatch(format!("sample {sample} has no forward slices")));
        };
        // the forward turn: a backward slice waits for every forward slice it overlaps
        for &(bs, be, bu) in bspans {
            let lo = fspans.partition_point(|&(_, fe, _)| fe <= bs);
            for &(fs, _, fu) in &fspans[lo..] {
                if fs >= be {
                    break;
                }
                edges.push(Edge::new(fwd_vid[last][fu], bwd_vid[last][bu], EdgeKind::InterStage));
            }
        }
    }
    for s in 0..pp {
        for (vids, spans) in [(&fwd_vid, &fwd_spans), (&bwd_vid, &bwd_spans)] {
            for list in spans.values() {
                for w in list.windows(2) {
                    if w[0].2 != w[1].2 {
                        edges.push(Edge::new(vids[s][w[0].2], vids[s][w[1].2], EdgeKind::InterSlice));
                    }
                }
            }
        }
    }
    edges.sort_by_key(|a| (a.from, a.to, a.kind));
    // a data edge wins over a parallel schedule edge; it also carries the hop delay
    edges.dedup_by(|a, b| (a.from, a.to) == (b.from, b.to));
    dag.edges = edges;
    Ok(dag)
}

/// Simulation graph with weights from the calibrated cost model: a vertex runs the
/// stage's share of layers for its token spans.
pub fn build_dag(plan: &RankPlan, program: &RankProgram, pipe: &Pipeline) -> Result<Dag, SimError> {
    pipe.hw.validate()?;
    if !(pipe.sim.hop_latency_sec >= 0.0 && pipe.sim.hop_latency_sec.is_finite()) {
        return Err(SimError::Options("hop_latency_sec must be >= 0".into()));
    }
    let layers = pipe.sim.layers_per_stage(pipe.model.num_layers, pipe.pp)?;
    let samples = plan.sample_map();
    for p in plan.fwd_packs.iter().chain(&plan.bwd_packs) {
        if let Some(s) = p.slices.iter().find(|s| !samples.contains_key(&s.sample_id)) {
            return Err(SimError::Mismatch(format!(
                "pack {} references unknown sample {}",
                p.index, s.sample_id
            )));
        }
    }
    let model = pipe.model;
    let total_layers = model.num_layers as f64;
    let last = pipe.pp - 1;
    let weigh = |stage: usize, action: Action, slices: &[Slice]| {
        let mut cost = SliceCost::ZERO;
        let mut vocab = 0u128;
        for s in slices {
            let sample = &samples[&s.sample_id];
            cost += match action {
                Action::Forward => sample.slice_fwd_cost(&model, s.start, s.end),
                Action::Backward => sample.slice_bwd_cost(&model, &pipe.mult, s.start, s.end),
            };
            if pipe.sim.vocab_projection && stage == last {
                let per_token = vocab_projection_flops(&model, 1);
                vocab += sample.span_share(per_token, s.start, s.end);
            }
        }
        let mut secs = seconds_unchecked(cost, &pipe.hw) * layers[stage] as f64 / total_layers;
        if vocab > 0 {
            let extra = SliceCost {
                attn_flops: 0,
                linear_flops: vocab,
            };
            let extra = match action {
                Action::Forward => extra,
                Action::Backward => crate::cost::backward_flops(extra, &pipe.mult),
            };
            secs += seconds_unchecked(extra, &pipe.hw);
        }
        secs
    };
    build_graph(plan, program, pipe.pp, weigh, pipe.sim.hop_latency_sec)
}
