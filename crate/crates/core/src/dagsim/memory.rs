use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Dag, Timeline};
use crate::cost::HardwareProfile;
use crate::schedule::Action;
use crate::workload::{Sample, SampleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryReason {
    Static,
    ActivationAlloc,
    KvAlloc,
    ActivationFree,
    KvFree,
}

impl MemoryReason {
    fn is_alloc(self) -> bool {
        matches!(self, Self::Static | Self::ActivationAlloc | Self::KvAlloc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryEvent {
    pub time: f64,
    pub delta_bytes: i128,
    pub reason: MemoryReason,
    pub vertex: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMemory {
    pub events: Vec<MemoryEvent>,
    pub peak_bytes: u128,
    /// Peak of activation and KV bytes alone, excluding static state.
    pub peak_activation_bytes: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryTrace {
    pub stages: Vec<StageMemory>,
}

impl MemoryTrace {
    pub fn peak_bytes(&self) -> u128 {
        self.stages.iter().map(|s| s.peak_bytes).max().unwrap_or(0)
    }
}

/// Chronological allocation/free events per stage. Forward vertices allocate the
/// activations and KV cache of their tokens when they finish; the backward vertex
/// covering the same tokens frees them when it finishes. Events at the same instant
/// apply allocations first, so the reported peak is an upper bound.
pub fn memory_trace(
    dag: &Dag,
    tl: &Timeline,
    samples: &HashMap<SampleId, Sample>,
    hw: &HardwareProfile,
    layers_per_stage: &[u64],
) -> MemoryTrace {
    let pp = layers_per_stage.len();
    let mut per_stage: Vec<Vec<MemoryEvent>> = (0..pp)
        .map(|_| {
            vec![MemoryEvent {
                time: 0.0,
                delta_bytes: hw.static_bytes_per_stage as i128,
                reason: MemoryReason::Static,
                vertex: None,
            }]
        })
        .collect();
    for (v, vertex) in dag.vertices.iter().enumerate() {
        let layers = layers_per_stage[vertex.stage] as u128;
        let act_per_token = hw.activation_bytes_per_token_per_layer as u128 * layers;
        let kv_per_token = hw.kv_bytes_per_token_per_layer as u128 * layers;
        let (mut act, mut kv) = (0u128, 0u128);
        for s in &dag.coverage[v] {
            let sample = &samples[&s.sample_id];
            act += sample.span_share(act_per_token, s.start, s.end);
            kv += sample.span_share(kv_per_token, s.start, s.end);
        }
        let (sign, act_reason, kv_reason) = match vertex.action {
            Action::Forward => (1i128, MemoryReason::ActivationAlloc, MemoryReason::KvAlloc),
            Action::Backward => (-1i128, MemoryReason::ActivationFree, MemoryReason::KvFree),
        };
        let events = &mut per_stage[vertex.stage];
        for (bytes, reason) in [(act, act_reason), (kv, kv_reason)] {
            if bytes > 0 {
                events.push(MemoryEvent {
                    time: tl.finish[v],
                    delta_bytes: sign * bytes as i128,
                    reason,
                    vertex: Some(v),
                });
            }
        }
    }
    let stages = per_stage
        .into_iter()
        .map(|mut events| {
            events.sort_by(|a, b| {
                a.time
                    .total_cmp(&b.time)
                    .then(b.reason.is_alloc().cmp(&a.reason.is_alloc()))
                    .then(a.vertex.cmp(&b.vertex))
                    .then(a.reason.cmp(&b.reason))
            });
            let (mut live, mut peak, mut act_live, mut act_peak) = (0i128, 0i128, 0i128, 0i128);
            for e in &events {
                live += e.delta_bytes;
                peak = peak.max(live);
                if e.reason != MemoryReason::Static {
                    act_live += e.delta_bytes;
                    act_peak = act_peak.max(act_live);
                }
            }
            StageMemory {
                events,
                peak_bytes: peak.max(0) as u128,
                peak_activation_bytes: act_peak.max(0) as u128,
            }
        })
        .collect();
    MemoryTrace { stages }
}
