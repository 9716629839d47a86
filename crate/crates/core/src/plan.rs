//! Per-DP-rank MicroPack plans and the structural checks every plan must pass.
//!
//! The forward stream of a rank visits each sample front to back. The backward
//! stream visits each sample back to front: packs in ascending index, slices inside
//! a pack in reverse listing order. Slices inside one pack are always listed in
//! ascending start order.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostMultipliers, Flops, ModelShape, SliceCost};
use crate::workload::{classify_state, GlobalBatch, MicroPack, Sample, SampleId, Slice};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("rank {rank}: {stream} pack {pack} references unknown sample {sample}")]
    UnknownSample {
        rank: usize,
        stream: &'static str,
        pack: usize,
        sample: SampleId,
    },
    #[error("rank {rank}: {stream} stream breaks token order of sample {sample} at pack {pack}: {msg}")]
    Order {
        rank: usize,
        stream: &'static str,
        sample: SampleId,
        pack: usize,
        msg: String,
    },
    #[error("rank {rank}: {stream} stream leaves sample {sample} incomplete")]
    Incomplete {
        rank: usize,
        stream: &'static str,
        sample: SampleId,
    },
    #[error("rank {rank}: {msg}")]
    Shape { rank: usize, msg: String },
    #[error("rank {rank}: m = {m} is not a positive multiple of pp = {pp}")]
    Multiplicity { rank: usize, m: usize, pp: usize },
    #[error("batch coverage: {0}")]
    Coverage(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpMergeGroup {
    pub member_ranks: Vec<usize>,
    pub cp_degree: u64,
    pub outlier_sample_id: SampleId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPlan {
    pub dp_rank: usize,
    /// Samples this rank trains on, in forward stream order.
    pub samples: Vec<Sample>,
    pub m: usize,
    pub tau_fwd: Flops,
    pub tau_bwd: Flops,
    pub fwd_packs: Vec<MicroPack>,
    pub bwd_packs: Vec<MicroPack>,
}

impl RankPlan {
    pub fn sample_map(&self) -> HashMap<SampleId, Sample> {
        self.samples.iter().map(|s| (s.id, *s)).collect()
    }

    pub fn total_tokens(&self) -> u64 {
        self.samples.iter().map(|s| s.length).sum()
    }

    /// Index of the last forward pack touching each sample.
    pub fn last_fwd_pack(&self) -> HashMap<SampleId, usize> {
        let mut last = HashMap::new();
        for p in &self.fwd_packs {
            for s in &p.slices {
                last.insert(s.sample_id, p.index);
            }
        }
        last
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let rank = self.dp_rank;
        let shape = |msg: String| PlanError::Shape { rank, msg };
        if self.fwd_packs.len() != self.m || self.bwd_packs.len() != self.m {
            return Err(shape(format!(
                "expected {} forward and backward packs, found {} and {}",
                self.m,
                self.fwd_packs.len(),
                self.bwd_packs.len()
            )));
        }
        let samples = self.sample_map();
        if samples.len() != self.samples.len() {
            return Err(shape("duplicate sample ids".into()));
        }
        for (stream, packs) in [("forward", &self.fwd_packs), ("backward", &self.bwd_packs)] {
            for (i, p) in packs.iter().enumerate() {
                if p.index != i {
                    return Err(shape(format!("{stream} pack at position {i} has index {}", p.index)));
                }
                if p.slices.is_empty() {
                    return Err(shape(format!("{stream} pack {i} is empty")));
                }
                if p.state != classify_state(&p.slices) {
                    return Err(shape(format!("{stream} pack {i} has state {:?}", p.state)));
                }
                check_pack_layout(rank, stream, p)?;
            }
        }
        check_stream(rank, "forward", &self.fwd_packs, &samples, false)?;
        check_stream(rank, "backward", &self.bwd_packs, &samples, true)?;
        Ok(())
    }

    /// Plan from explicit pack contents; costs, states and budgets are filled in.
    /// `validate` is not run.
    pub fn from_slices(
        dp_rank: usize,
        samples: Vec<Sample>,
        fwd: Vec<Vec<Slice>>,
        bwd: Vec<Vec<Slice>>,
        model: &ModelShape,
        mult: &CostMultipliers,
    ) -> Self {
        let table: HashMap<SampleId, Sample> = samples.iter().map(|s| (s.id, *s)).collect();
        let build = |packs: Vec<Vec<Slice>>| -> Vec<MicroPack> {
            packs
                .into_iter()
                .enumerate()
                .map(|(index, slices)| {
                    let (fwd_cost, bwd_cost) = pack_costs(&slices, &table, model, mult);
                    MicroPack {
                        index,
                        state: classify_state(&slices),
                        slices,
                        fwd_cost,
                        bwd_cost,
                    }
                })
                .collect()
        };
        let (fwd_packs, bwd_packs) = (build(fwd), build(bwd));
        let m = fwd_packs.len();
        let budget = |total: Flops| total.div_ceil(m.max(1) as Flops);
        RankPlan {
            dp_rank,
            samples,
            m,
            tau_fwd: budget(fwd_packs.iter().map(|p| p.fwd_cost.total()).sum()),
            tau_bwd: budget(bwd_packs.iter().map(|p| p.bwd_cost.total()).sum()),
            fwd_packs,
            bwd_packs,
        }
    }

    /// Recomputes every pack's forward and backward cost from the sample table.
    pub fn check_costs(&self, model: &ModelShape, mult: &CostMultipliers) -> Result<(), PlanError> {
        let samples = self.sample_map();
        for (stream, packs) in [("forward", &self.fwd_packs), ("backward", &self.bwd_packs)] {
            for p in packs {
                let (f, b) = pack_costs(&p.slices, &samples, model, mult);
                if f != p.fwd_cost || b != p.bwd_cost {
                    return Err(PlanError::Shape {
                        rank: self.dp_rank,
                        msg: format!("{stream} pack {} carries stale costs", p.index),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Forward and backward cost of a pack's slices.
pub fn pack_costs(
    slices: &[Slice],
    samples: &HashMap<SampleId, Sample>,
    model: &ModelShape,
    mult: &CostMultipliers,
) -> (SliceCost, SliceCost) {
    slices.iter().fold((SliceCost::ZERO, SliceCost::ZERO), |(f, b), s| {
        let sample = &samples[&s.sample_id];
        (
            f + sample.slice_fwd_cost(model, s.start, s.end),
            b + sample.slice_bwd_cost(model, mult, s.start, s.end),
        )
    })
}

/// Slices of one sample inside a pack are adjacent and ascending.
fn check_pack_layout(rank: usize, stream: &'static str, p: &MicroPack) -> Result<(), PlanError> {
    let mut seen: Vec<SampleId> = Vec::new();
    for w in p.slices.windows(2) {
        if w[0].sample_id == w[1].sample_id && w[1].start != w[0].end {
            return Err(PlanError::Order {
                rank,
                stream,
                sample: w[0].sample_id,
                pack: p.index,
                msg: "slices of a sample inside a pack must be adjacent and ascending".into(),
            });
        }
    }
    for s in &p.slices {
        if seen.last() != Some(&s.sample_id) {
            if seen.contains(&s.sample_id) {
                return Err(PlanError::Order {
                    rank,
                    stream,
                    sample: s.sample_id,
                    pack: p.index,
                    msg: "slices of a sample are not contiguous inside the pack".into(),
                });
            }
            seen.push(s.sample_id);
        }
    }
    Ok(())
}

/// Walks the stream in execution order and checks that every sample is covered
/// exactly once, front to back (forward) or back to front (backward).
fn check_stream(
    rank: usize,
    stream: &'static str,
    packs: &[MicroPack],
    samples: &HashMap<SampleId, Sample>,
    reverse: bool,
) -> Result<(), PlanError> {
    // forward cursor: next expected start; backward cursor: next expected end
    let mut cursor: HashMap<SampleId, u64> = HashMap::new();
    for p in packs {
        let order: Box<dyn Iterator<Item = &Slice>> = if reverse {
            Box::new(p.slices.iter().rev())
        } else {
            Box::new(p.slices.iter())
        };
        for s in order {
            let sample = samples.get(&s.sample_id).ok_or(PlanError::UnknownSample {
                rank,
                stream,
                pack: p.index,
                sample: s.sample_id,
            })?;
            let err = |msg: String| PlanError::Order {
                rank,
                stream,
                sample: s.sample_id,
                pack: p.index,
                msg,
            };
            if s.sample_len != sample.length || s.start >= s.end || s.end > sample.length {
                return Err(err(format!(
                    "slice [{}, {}) of a {}-token sample",
                    s.start, s.end, sample.length
                )));
            }
            if reverse {
                let expect = *cursor.entry(s.sample_id).or_insert(sample.length);
                if s.end != expect {
                    return Err(err(format!(
                        "expected a slice ending at {expect}, got [{}, {})",
                        s.start, s.end
                    )));
                }
                cursor.insert(s.sample_id, s.start);
            } else {
                let expect = *cursor.entry(s.sample_id).or_insert(0);
                if s.start != expect {
                    return Err(err(format!(
                        "expected a slice starting at {expect}, got [{}, {})",
                        s.start, s.end
                    )));
                }
                cursor.insert(s.sample_id, s.end);
            }
        }
    }
    for sample in samples.values() {
        let done = if reverse { 0 } else { sample.length };
        if cursor.get(&sample.id) != Some(&done) {
            return Err(PlanError::Incomplete {
                rank,
                stream,
                sample: sample.id,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackPlan {
    pub ranks: Vec<RankPlan>,
    pub merge_groups: Vec<DpMergeGroup>,
}

impl PackPlan {
    /// Structural checks on every rank plus `pp | m`.
    pub fn validate(&self, pp: usize) -> Result<(), PlanError> {
        for (i, r) in self.ranks.iter().enumerate() {
            if r.dp_rank != i {
                return Err(PlanError::Shape {
                    rank: i,
                    msg: format!("rank plan at position {i} claims dp rank {}", r.dp_rank),
                });
            }
            r.validate()?;
            if r.m == 0 || r.m % pp.max(1) != 0 {
                return Err(PlanError::Multiplicity { rank: i, m: r.m, pp });
            }
        }
        Ok(())
    }

    /// Every batch sample is trained exactly once: on a single rank at the base
    /// context-parallel degree, or as a share on each member of its merge group.
    pub fn check_batch_coverage(&self, batch: &GlobalBatch, cp_base: u64) -> Result<(), PlanError> {
        let mut placed: BTreeMap<SampleId, Vec<(usize, Sample)>> = BTreeMap::new();
        for r in &self.ranks {
            for s in &r.samples {
                placed.entry(s.id).or_default().push((r.dp_rank, *s));
            }
        }
        let groups: HashMap<SampleId, &DpMergeGroup> =
            self.merge_groups.iter().map(|g| (g.outlier_sample_id, g)).collect();
        for s in &batch.samples {
            let Some(homes) = placed.remove(&s.id) else {
                return Err(PlanError::Coverage(format!("sample {} is not planned", s.id)));
            };
            if homes.iter().any(|(_, p)| p.length != s.length) {
                return Err(PlanError::Coverage(format!("sample {} changed length", s.id)));
            }
            match groups.get(&s.id) {
                Some(g) => {
                    let mut ranks: Vec<usize> = homes.iter().map(|(r, _)| *r).collect();
                    ranks.sort_unstable();
                    let mut members = g.member_ranks.clone();
                    members.sort_unstable();
                    let cp = cp_base * g.cp_degree;
                    if ranks != members || homes.iter().any(|(_, p)| p.cp_degree != cp) {
                        return Err(PlanError::Coverage(format!(
                            "merged sample {} must appear once per member at cp {cp}",
                            s.id
                        )));
                    }
                }
                None => {
                    if homes.len() != 1 || homes[0].1.cp_degree != cp_base {
                        return Err(PlanError::Coverage(format!(
                            "sample {} must appear on exactly one rank",
                            s.id
                        )));
                    }
                }
            }
        }
        if let Some((id, _)) = placed.into_iter().next() {
            return Err(PlanError::Coverage(format!("sample {id} is not in the batch")));
        }
        Ok(())
    }

    pub fn total_tokens(&self) -> u64 {
        self.ranks.iter().map(RankPlan::total_tokens).sum()
    }

    /// Tokens of the underlying batch; a merged sample counts once.
    pub fn batch_tokens(&self) -> u64 {
        let unique: BTreeMap<SampleId, u64> = self
            .ranks
            .iter()
            .flat_map(|r| r.samples.iter().map(|s| (s.id, s.length)))
            .collect();
        unique.values().sum()
    }
}
