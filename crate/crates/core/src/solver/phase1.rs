use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::cost::{Flops, ModelShape};
use crate::workload::{GlobalBatch, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpAssignment {
    /// Samples of each rank in descending forward cost.
    pub per_rank_samples: Vec<Vec<Sample>>,
    /// Forward FLOPs each rank ended up with.
    pub per_rank_capacity: Vec<Flops>,
    /// Even share of the batch, `total / dp` rounded down.
    pub target: Flops,
}

impl DpAssignment {
    pub fn dp(&self) -> usize {
        self.per_rank_samples.len()
    }

    pub fn total(&self) -> Flops {
        self.per_rank_capacity.iter().sum()
    }

    pub fn home_rank(&self, id: u64) -> Option<usize> {
        self.per_rank_samples.iter().position(|r| r.iter().any(|s| s.id == id))
    }
}

/// Descending cost, ascending id.
pub(crate) fn sort_by_cost(samples: &mut [Sample], model: &ModelShape) {
    samples.sort_by_cached_key(|s| (Reverse(s.fwd_cost(model).total()), s.id));
}

/// Longest-processing-time assignment onto ranks that may already carry `preload`.
/// Ties on load go to the lowest rank.
pub(crate) fn lpt(samples: &[Sample], preload: &[Flops], model: &ModelShape) -> (Vec<Vec<Sample>>, Vec<Flops>) {
    let mut sorted = samples.to_vec();
    sort_by_cost(&mut sorted, model);
    let mut heap: BinaryHeap<Reverse<(Flops, usize)>> =
        preload.iter().enumerate().map(|(r, &l)| Reverse((l, r))).collect();
    let mut per_rank = vec![Vec::new(); preload.len()];
    let mut loads = preload.to_vec();
    for s in sorted {
        let Reverse((load, r)) = heap.pop().expect("at least one rank");
        let c = s.fwd_cost(model).total();
        per_rank[r].push(s);
        loads[r] = load + c;
        heap.push(Reverse((loads[r], r)));
    }
    (per_rank, loads)
}

pub fn phase1_assign(batch: &GlobalBatch, dp: usize, model: &ModelShape) -> DpAssignment {
    let dp = dp.max(1);
    let (per_rank_samples, per_rank_capacity) = lpt(&batch.samples, &vec![0; dp], model);
    let total: Flops = per_rank_capacity.iter().sum();
    DpAssignment {
        per_rank_samples,
        per_rank_capacity,
        target: total / dp as Flops,
    }
}
