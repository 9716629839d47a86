//! DAG pipeline simulator.
//!
//! Every task is a vertex `(stage, action, data)` weighted by its estimated run
//! time. Edges are data dependencies (stage to stage, slice to slice inside a
//! sample) and schedule dependencies (program order on a stage). Start times follow
//! the longest-path recurrence over a topological order; the step time is the
//! critical path length.

mod graph;
mod memory;
mod metrics;
mod timeline;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostError;
use crate::schedule::Action;
use crate::workload::Slice;

pub use graph::build_dag;
pub(crate) use graph::build_graph;
pub use memory::{memory_trace, MemoryEvent, MemoryReason, MemoryTrace, StageMemory};
pub use metrics::{compute_metrics, Metrics, StageMetrics};
pub use timeline::{compute_timeline, compute_timeline_with_order, critical_path, topo_sort, Timeline};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("dependency cycle through vertices {vertices:?}")]
    Cycle { vertices: Vec<usize> },
    #[error("program does not match plan: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("invalid simulation options: {0}")]
    Options(String),
}

/// Data unit of a vertex: a whole pack, or one slice of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataId {
    pub pack: usize,
    pub slice: Option<usize>,
}

impl fmt::Display for DataId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slice {
            Some(s) => write!(f, "({}, {})", self.pack, s),
            None => write!(f, "{}", self.pack),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub stage: usize,
    pub action: Action,
    pub data: DataId,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    InterStage,
    InterSlice,
    Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
    /// Extra latency between `from` finishing and `to` starting (point-to-point hops).
    pub delay: f64,
}

impl Edge {
    pub fn new(from: usize, to: usize, kind: EdgeKind) -> Self {
        Self {
            from,
            to,
            kind,
            delay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dag {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    /// Token spans each vertex processes; empty for hand-built graphs.
    pub coverage: Vec<Vec<Slice>>,
}

impl Dag {
    pub fn from_parts(vertices: Vec<Vertex>, edges: Vec<Edge>) -> Self {
        let coverage = vec![Vec::new(); vertices.len()];
        Self {
            vertices,
            edges,
            coverage,
        }
    }

    pub fn label(&self, v: usize) -> String {
        let x = &self.vertices[v];
        format!("({}, {}, {})", x.stage, x.action, x.data)
    }

    pub fn num_stages(&self) -> usize {
        self.vertices.iter().map(|v| v.stage + 1).max().unwrap_or(0)
    }

    pub(crate) fn successors(&self) -> Vec<Vec<(usize, f64)>> {
        let mut succ = vec![Vec::new(); self.vertices.len()];
        for e in &self.edges {
            succ[e.from].push((e.to, e.delay));
        }
        succ
    }

    pub(crate) fn predecessors(&self) -> Vec<Vec<(usize, f64)>> {
        let mut pred = vec![Vec::new(); self.vertices.len()];
        for e in &self.edges {
            pred[e.to].push((e.from, e.delay));
        }
        pred
    }
}

/// Knobs of the simulator that are not part of the plan itself.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// Layers held by each stage; balanced split of the model when absent.
    pub stage_layers: Option<Vec<u64>>,
    /// Constant latency added to each stage-to-stage hop.
    pub hop_latency_sec: f64,
    /// Charge the output projection to the last stage.
    pub vocab_projection: bool,
}

impl SimOptions {
    pub fn layers_per_stage(&self, num_layers: u64, pp: usize) -> Result<Vec<u64>, SimError> {
        match &self.stage_layers {
            Some(map) => {
                if map.len() != pp || map.iter().sum::<u64>() != num_layers {
                    return Err(SimError::Options(format!(
                        "stage_layers must list {pp} stages summing to {num_layers} layers"
                    )));
                }
                Ok(map.clone())
            }
            None => {
                let pp64 = pp as u64;
                Ok((0..pp64)
                    .map(|s| num_layers / pp64 + u64::from(s < num_layers % pp64))
                    .collect())
            }
        }
    }
}
