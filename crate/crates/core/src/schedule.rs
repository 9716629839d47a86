//! Per-stage task programs for one DP rank's MicroPack streams.
//!
//! Forward packs are issued FIFO on every stage. Backward packs are issued in
//! ascending backward-stream index; slice-level FILO order inside a sample is carried
//! by the DAG's inter-slice edges. A backward pack may need the forward pass of a
//! pack beyond the regular 1F1B window (its samples finish their forward later);
//! the scheduler then issues the next forward packs early.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dagsim::{build_graph, topo_sort, SimError};
use crate::plan::RankPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "F")]
    Forward,
    #[serde(rename = "B")]
    Backward,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Forward => "F",
            Action::Backward => "B",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskRef {
    pub stage: usize,
    pub action: Action,
    pub pack_index: usize,
}

impl fmt::Display for TaskRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}@{}", self.action, self.pack_index, self.stage)
    }
}

/// Forward packs issued ahead of the regular 1F1B position so that a backward
/// pack's samples have finished their forward pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub stage: usize,
    pub before_backward: usize,
    pub forwards: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScheduleKind {
    #[serde(rename = "gpipe")]
    Gpipe,
    #[serde(rename = "1f1b")]
    OneFOneB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankProgram {
    pub kind: ScheduleKind,
    pub stages: Vec<Vec<TaskRef>>,
    pub injections: Vec<Injection>,
}

impl RankProgram {
    pub fn pp(&self) -> usize {
        self.stages.len()
    }

    /// Forwards issued on `stage` before its first backward.
    pub fn warmup_forwards(&self, stage: usize) -> usize {
        self.stages[stage]
            .iter()
            .take_while(|t| t.action == Action::Forward)
            .count()
    }

    pub fn injected_count(&self, stage: usize) -> usize {
        self.injections
            .iter()
            .filter(|i| i.stage == stage)
            .map(|i| i.forwards.len())
            .sum()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("malformed plan: {0}")]
    Malformed(String),
    #[error("stage {stage}: {msg}")]
    Coverage { stage: usize, msg: String },
    #[error("stage {stage}: forward packs out of FIFO order ({msg})")]
    Fifo { stage: usize, msg: String },
    #[error("dependency cycle through {vertex}")]
    Cycle { vertex: String, cycle: Vec<String> },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// For each backward pack `k`, the highest forward pack index whose completion
/// `k` (or any earlier backward pack) waits on.
pub fn backward_ready(plan: &RankPlan) -> Result<Vec<usize>, ScheduleError> {
    let last = plan.last_fwd_pack();
    let mut ready = Vec::with_capacity(plan.bwd_packs.len());
    let mut running = 0usize;
    for p in &plan.bwd_packs {
        for s in &p.slices {
            let f = *last.get(&s.sample_id).ok_or_else(|| {
                ScheduleError::Malformed(format!(
                    "backward pack {} needs sample {} which no forward pack contains",
                    p.index, s.sample_id
                ))
            })?;
            running = running.max(f);
        }
        ready.push(running);
    }
    Ok(ready)
}

fn task(stage: usize, action: Action, pack_index: usize) -> TaskRef {
    TaskRef {
        stage,
        action,
        pack_index,
    }
}

pub fn build_gpipe_program(plan: &RankPlan, pp: usize) -> Result<RankProgram, ScheduleError> {
    backward_ready(plan)?;
    let (mf, mb) = (plan.fwd_packs.len(), plan.bwd_packs.len());
    let stages = (0..pp)
        .map(|s| {
            (0..mf)
                .map(|i| task(s, Action::Forward, i))
                .chain((0..mb).map(|k| task(s, Action::Backward, k)))
                .collect()
        })
        .collect();
    Ok(RankProgram {
        kind: ScheduleKind::Gpipe,
        stages,
        injections: Vec::new(),
    })
}

/// 1F1B with readiness-driven forward injection.
///
/// `want[s][k]` is how many forwards stage `s` has issued before backward `k`. The
/// last stage needs `max(k, ready(k)) + 1`. An upstream stage must cover
/// `want[s + 1][k + d] - (d - 1)` for every `d >= 1`: a burst of demand downstream is
/// met by forwards issued ahead of time, one per backward, rather than by a round
/// trip through the pipeline. With no late readiness this is plain 1F1B: `pp - s`
/// warm-up forwards, then one forward after each backward. Forwards beyond the plain
/// count are recorded as injections.
pub fn build_1f1b_program(plan: &RankPlan, pp: usize) -> Result<RankProgram, ScheduleError> {
    let ready = backward_ready(plan)?;
    let (mf, mb) = (plan.fwd_packs.len(), plan.bwd_packs.len());
    if let Some(&r) = ready.last() {
        if r >= mf {
            return Err(ScheduleError::Malformed(format!(
                "backward needs forward pack {r} of {mf}"
            )));
        }
    }
    let mut want = vec![vec![0usize; mb]; pp];
    for s in (0..pp).rev() {
        // ahead[k] = max over k' > k of want[s + 1][k'] - k'
        let mut ahead = vec![None; mb];
        if s + 1 < pp {
            let mut best: Option<usize> = None;
            for k in (0..mb).rev() {
                ahead[k] = best;
                let v = want[s + 1][k] - k;
                best = Some(best.map_or(v, |b| b.max(v)));
            }
        }
        let mut floor = 0;
        for k in 0..mb {
            let own = if s + 1 == pp {
                k.max(ready[k]) + 1
            } else {
                ahead[k].map_or(mf, |a| a + k + 1)
            };
            floor = floor.max(own).max(k + pp - s).min(mf);
            want[s][k] = floor;
        }
    }
    let mut stages = Vec::with_capacity(pp);
    let mut injections = Vec::new();
    for (s, want_s) in want.iter().enumerate() {
        let mut tasks = Vec::with_capacity(mf + mb);
        let mut issued = 0usize;
        for (k, &target) in want_s.iter().enumerate().take(mb) {
            let plain = (k + pp - s).min(mf).max(issued);
            tasks.extend((issued..plain).map(|i| task(s, Action::Forward, i)));
            issued = plain;
            if issued < target {
                let extra: Vec<usize> = (issued..target).collect();
                tasks.extend(extra.iter().map(|&i| task(s, Action::Forward, i)));
                issued = target;
                injections.push(Injection {
                    stage: s,
                    before_backward: k,
                    forwards: extra,
                });
            }
            tasks.push(task(s, Action::Backward, k));
        }
        // forwards left over when the backward stream is shorter
        tasks.extend((issued..mf).map(|i| task(s, Action::Forward, i)));
        stages.push(tasks);
    }
    Ok(RankProgram {
        kind: ScheduleKind::OneFOneB,
        stages,
        injections,
    })
}

pub fn build_program(plan: &RankPlan, pp: usize, kind: ScheduleKind) -> Result<RankProgram, ScheduleError> {
    match kind {
        ScheduleKind::Gpipe => build_gpipe_program(plan, pp),
        ScheduleKind::OneFOneB => build_1f1b_program(plan, pp),
    }
}

pub fn validate_program(program: &RankProgram, plan: &RankPlan, pp: usize) -> Result<(), ScheduleError> {
    if program.stages.len() != pp {
        return Err(ScheduleError::Coverage {
            stage: program.stages.len().min(pp),
            msg: format!("program has {} stages, pipeline has {pp}", program.stages.len()),
        });
    }
    let (mf, mb) = (plan.fwd_packs.len(), plan.bwd_packs.len());
    for (s, tasks) in program.stages.iter().enumerate() {
        let mut fwd = BTreeSet::new();
        let mut bwd = BTreeSet::new();
        let mut last_fwd: Option<usize> = None;
        for t in tasks {
            let cov = |msg: String| ScheduleError::Coverage { stage: s, msg };
            if t.stage != s {
                return Err(cov(format!("task {t} listed on stage {s}")));
            }
            let (set, limit) = match t.action {
                Action::Forward => (&mut fwd, mf),
                Action::Backward => (&mut bwd, mb),
            };
            if t.pack_index >= limit {
                return Err(cov(format!("task {t} references a missing pack")));
            }
            if !set.insert(t.pack_index) {
                return Err(cov(format!("task {t} appears twice")));
            }
            if t.action == Action::Forward {
                if let Some(prev) = last_fwd {
                    if t.pack_index < prev {
                        return Err(ScheduleError::Fifo {
                            stage: s,
                            msg: format!("F{} issued after F{prev}", t.pack_index),
                        });
                    }
                }
                last_fwd = Some(t.pack_index);
            }
        }
        if fwd.len() != mf || bwd.len() != mb {
            return Err(ScheduleError::Coverage {
                stage: s,
                msg: format!(
                    "covers {}/{mf} forward and {}/{mb} backward packs",
                    fwd.len(),
                    bwd.len()
                ),
            });
        }
    }
    let dag = build_graph(plan, program, pp, |_, _, _| 0.0, 0.0)?;
    match topo_sort(&dag) {
        Ok(_) => Ok(()),
        Err(SimError::Cycle { vertices }) => {
            let cycle: Vec<String> = vertices.iter().map(|&v| dag.label(v)).collect();
            Err(ScheduleError::Cycle {
                vertex: cycle.first().cloned().unwrap_or_default(),
                cycle,
            })
        }
        Err(e) => Err(e.into()),
    }
}
