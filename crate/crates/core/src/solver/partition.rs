//! Slice-level MicroPack formation.
//!
//! Packs are filled in stream order against cumulative targets
//! `ceil(total * (k + 1) / m)`: a whole sample goes in if it fits, otherwise the
//! sample is cut on the alignment grid at whichever admissible length leaves the
//! running total closest to the target, and the rest continues in the next pack.
//! Because targets are cumulative, an under- or overshoot is absorbed by the next
//! pack instead of piling up. A final pass moves or swaps whole samples between the
//! heaviest and lightest packs.
//!
//! Forward packs cut samples from the front. Backward packs visit samples in the
//! order their forward passes complete and cut from the back, so that every
//! backward stream runs each sample tail first.

use std::collections::HashMap;

use super::{SolverError, SolverOptions};
use crate::cost::{CostMultipliers, Flops, ModelShape, SliceLengths};
use crate::plan::{pack_costs, RankPlan};
use crate::workload::{classify_state, MicroPack, Sample, SampleId, Slice};

/// The pass whose work a partition balances.
#[derive(Debug, Clone, Copy)]
pub enum Pass<'a> {
    Forward,
    Backward(&'a CostMultipliers),
}

impl Pass<'_> {
    pub fn span_cost(&self, model: &ModelShape, s: &Sample, start: u64, end: u64) -> Flops {
        match self {
            Pass::Forward => s.slice_fwd_cost(model, start, end).total(),
            Pass::Backward(mult) => s.slice_bwd_cost(model, mult, start, end).total(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cut {
    Front,
    Back,
}

/// Remaining span of one sample while packs are being filled.
struct Cursor {
    lo: u64,
    hi: u64,
}

impl Cursor {
    fn lengths(&self, s: &Sample, cut: Cut, a: u64) -> SliceLengths {
        match cut {
            Cut::Front => SliceLengths::from_front(self.lo, s.length, a),
            Cut::Back => SliceLengths::from_back(self.hi, a),
        }
    }

    fn piece(&self, len: u64, cut: Cut) -> (u64, u64) {
        match cut {
            Cut::Front => (self.lo, self.lo + len),
            Cut::Back => (self.hi - len, self.hi),
        }
    }
}

fn slice_of(s: &Sample, (start, end): (u64, u64)) -> Slice {
    Slice {
        sample_id: s.id,
        start,
        end,
        sample_len: s.length,
    }
}

/// Number of minimum-size slices a sample can be cut into.
pub fn sample_units(s: &Sample, alignment: u64) -> u64 {
    SliceLengths::from_front(0, s.length, alignment).count()
}

enum Choice {
    Stop,
    Take(u64),
}

fn greedy(
    samples: &[Sample],
    m: usize,
    cost: &dyn Fn(&Sample, u64, u64) -> Flops,
    alignment: u64,
    cut: Cut,
) -> Result<Vec<Vec<Slice>>, SolverError> {
    if m == 0 || samples.is_empty() {
        return Err(SolverError::Partition("need m >= 1 and at least one sample".into()));
    }
    let a = alignment.max(1);
    let total: Flops = samples.iter().map(|s| cost(s, 0, s.length)).sum();
    let mut units_left: u64 = samples.iter().map(|s| sample_units(s, a)).sum();
    if units_left < m as u64 {
        return Err(SolverError::Partition(format!(
            "{m} packs requested but the samples only split into {units_left} aligned slices"
        )));
    }
    let mut packs = Vec::with_capacity(m);
    let mut acc: Flops = 0;
    let mut i = 0usize;
    let mut cur = Cursor {
        lo: 0,
        hi: samples[0].length,
    };
    let advance = |i: &mut usize, cur: &mut Cursor| {
        *i += 1;
        if let Some(s) = samples.get(*i) {
            *cur = Cursor { lo: 0, hi: s.length };
        }
    };
    for k in 0..m {
        let mut pack = Vec::new();
        if k + 1 == m {
            while i < samples.len() {
                let s = &samples[i];
                pack.push(slice_of(s, (cur.lo, cur.hi)));
                advance(&mut i, &mut cur);
            }
            packs.push(pack);
            break;
        }
        let target = (total * (k as Flops + 1)).div_ceil(m as Flops);
        let packs_after = (m - k - 1) as u64;
        while i < samples.len() {
            let s = &samples[i];
            let lens = cur.lengths(s, cut, a);
            let count = lens.count();
            let later = units_left - count;
            // keep at least one unit for every pack still to be filled
            let Some(cap) = (count - 1 + later).checked_sub(packs_after) else {
                break;
            };
            let max_idx = cap.min(count - 1);
            let c = |idx: u64| {
                let (lo, hi) = cur.piece(lens.len_at(idx), cut);
                cost(s, lo, hi)
            };
            let b = target as i128 - acc as i128;
            let fits = |idx: u64| (c(idx) as i128) <= b;
            let j = if fits(0) {
                let (mut lo, mut hi) = (0, max_idx);
                while lo < hi {
                    let mid = lo + (hi - lo).div_ceil(2);
                    if fits(mid) {
                        lo = mid;
                    } else {
                        hi = mid - 1;
                    }
                }
                Some(lo)
            } else {
                None
            };
            let choice = if j == Some(count - 1) {
                Choice::Take(count - 1)
            } else {
                let mut best: Option<(i128, Choice)> = None;
                let mut consider = |dev: i128, ch: Choice| {
                    if best.as_ref().is_none_or(|(d, _)| dev < *d) {
                        best = Some((dev, ch));
                    }
                };
                if !pack.is_empty() {
                    consider(b.abs(), Choice::Stop);
                }
                if let Some(j) = j {
                    consider(b - c(j) as i128, Choice::Take(j));
                }
                let next = j.map_or(0, |j| j + 1);
                if next <= max_idx {
                    consider(c(next) as i128 - b, Choice::Take(next));
                }
                best.map(|(_, ch)| ch).unwrap_or(Choice::Stop)
            };
            let Choice::Take(idx) = choice else {
                break;
            };
            let piece = cur.piece(lens.len_at(idx), cut);
            acc += cost(s, piece.0, piece.1);
            pack.push(slice_of(s, piece));
            units_left -= idx + 1;
            if idx + 1 == count {
                advance(&mut i, &mut cur);
                continue;
            }
            match cut {
                Cut::Front => cur.lo = piece.1,
                Cut::Back => cur.hi = piece.0,
            }
            // the grid count of the remainder shrinks by exactly idx + 1 units
            break;
        }
        if pack.is_empty() {
            return Err(SolverError::Partition(format!("pack {k} could not be filled")));
        }
        packs.push(pack);
    }
    Ok(packs)
}

/// Moves or swaps whole samples between the heaviest and the lightest pack while
/// that lowers the heavier of the two.
fn refine(
    packs: &mut [Vec<Slice>],
    samples: &HashMap<SampleId, Sample>,
    cost: &dyn Fn(&Sample, u64, u64) -> Flops,
    passes: usize,
) {
    let slice_cost = |s: &Slice| cost(&samples[&s.sample_id], s.start, s.end);
    let mut loads: Vec<Flops> = packs.iter().map(|p| p.iter().map(slice_cost).sum()).collect();
    for _ in 0..passes {
        let h = (0..loads.len()).max_by(|&x, &y| loads[x].cmp(&loads[y]).then(y.cmp(&x)));
        let l = (0..loads.len()).min_by(|&x, &y| loads[x].cmp(&loads[y]).then(x.cmp(&y)));
        let (Some(h), Some(l)) = (h, l) else { return };
        if loads[h] == loads[l] {
            return;
        }
        let (hl, ll) = (loads[h], loads[l]);
        // (new max of the pair, index in h, optional index in l)
        let mut best: Option<(Flops, usize, Option<usize>)> = None;
        let mut offer = |peak: Flops, x: usize, y: Option<usize>| {
            if peak < hl && best.is_none_or(|(p, _, _)| peak < p) {
                best = Some((peak, x, y));
            }
        };
        for (x, sx) in packs[h].iter().enumerate() {
            if !sx.is_whole() {
                continue;
            }
            let cx = slice_cost(sx);
            if packs[h].len() > 1 {
                offer((hl - cx).max(ll + cx), x, None);
            }
            for (y, sy) in packs[l].iter().enumerate() {
                let cy = slice_cost(sy);
                if sy.is_whole() && cy < cx {
                    offer((hl - cx + cy).max(ll + cx - cy), x, Some(y));
                }
            }
        }
        let Some((_, x, y)) = best else { return };
        let sx = packs[h].remove(x);
        let cx = slice_cost(&sx);
        match y {
            Some(y) => {
                let sy = packs[l].remove(y);
                let cy = slice_cost(&sy);
                packs[h].push(sy);
                loads[h] = hl - cx + cy;
                loads[l] = ll + cx - cy;
            }
            None => {
                loads[h] = hl - cx;
                loads[l] = ll + cx;
            }
        }
        packs[l].push(sx);
    }
}

fn finish_packs(
    packs: Vec<Vec<Slice>>,
    samples: &HashMap<SampleId, Sample>,
    model: &ModelShape,
    mult: &CostMultipliers,
) -> Vec<MicroPack> {
    packs
        .into_iter()
        .enumerate()
        .map(|(index, slices)| {
            let (fwd_cost, bwd_cost) = pack_costs(&slices, samples, model, mult);
            MicroPack {
                index,
                state: classify_state(&slices),
                slices,
                fwd_cost,
                bwd_cost,
            }
        })
        .collect()
}

fn partition(
    samples: &[Sample],
    m: usize,
    model: &ModelShape,
    mult: &CostMultipliers,
    opts: &SolverOptions,
    pass: Pass<'_>,
    cut: Cut,
) -> Result<Vec<MicroPack>, SolverError> {
    let cost = |s: &Sample, lo: u64, hi: u64| pass.span_cost(model, s, lo, hi);
    let mut packs = greedy(samples, m, &cost, opts.alignment, cut)?;
    let table: HashMap<SampleId, Sample> = samples.iter().map(|s| (s.id, *s)).collect();
    refine(&mut packs, &table, &cost, opts.refinement_passes);
    Ok(finish_packs(packs, &table, model, mult))
}

/// Forward MicroPacks for `samples` in stream order.
pub fn phase2_partition(
    samples: &[Sample],
    m: usize,
    model: &ModelShape,
    opts: &SolverOptions,
) -> Result<Vec<MicroPack>, SolverError> {
    phase2_partition_with(samples, m, model, &CostMultipliers::default(), opts)
}

/// [`phase2_partition`] with the multipliers used for the packs' backward costs.
pub fn phase2_partition_with(
    samples: &[Sample],
    m: usize,
    model: &ModelShape,
    mult: &CostMultipliers,
    opts: &SolverOptions,
) -> Result<Vec<MicroPack>, SolverError> {
    partition(samples, m, model, mult, opts, Pass::Forward, Cut::Front)
}

/// Samples in the order their forward passes complete: by the last forward pack
/// that touches them, then by position inside that pack.
pub fn forward_completion_order(fwd: &[MicroPack], samples: &[Sample]) -> Vec<Sample> {
    let mut done: HashMap<SampleId, (usize, usize)> = HashMap::new();
    for p in fwd {
        for (pos, s) in p.slices.iter().enumerate() {
            done.insert(s.sample_id, (p.index, pos));
        }
    }
    let mut out = samples.to_vec();
    out.sort_by_key(|s| (done.get(&s.id).copied().unwrap_or((usize::MAX, 0)), s.id));
    out
}

/// Backward MicroPacks balanced on backward cost. `samples` must be in forward
/// completion order; each sample is cut from its tail.
pub fn asymmetric_repartition(
    samples: &[Sample],
    m: usize,
    model: &ModelShape,
    mult: &CostMultipliers,
    opts: &SolverOptions,
) -> Result<Vec<MicroPack>, SolverError> {
    partition(samples, m, model, mult, opts, Pass::Backward(mult), Cut::Back)
}

/// Backward stream with the forward pack composition, run in reverse pack order so
/// that each sample still goes tail first. This is what a planner that does not
/// repartition would execute.
pub fn reuse_forward_for_backward(fwd: &[MicroPack]) -> Vec<MicroPack> {
    fwd.iter()
        .rev()
        .enumerate()
        .map(|(index, p)| MicroPack { index, ..p.clone() })
        .collect()
}

/// Forward and backward packs for one rank.
pub fn partition_rank(
    dp_rank: usize,
    samples: &[Sample],
    m: usize,
    model: &ModelShape,
    mult: &CostMultipliers,
    opts: &SolverOptions,
) -> Result<RankPlan, SolverError> {
    let fwd_packs = phase2_partition_with(samples, m, model, mult, opts)?;
    let order = forward_completion_order(&fwd_packs, samples);
    let bwd_packs = asymmetric_repartition(&order, m, model, mult, opts)?;
    let total_fwd: Flops = samples.iter().map(|s| s.fwd_cost(model).total()).sum();
    let total_bwd: Flops = bwd_packs.iter().map(|p| p.bwd_cost.total()).sum();
    Ok(RankPlan {
        dp_rank,
        samples: samples.to_vec(),
        m,
        tau_fwd: total_fwd.div_ceil(m as Flops),
        tau_bwd: total_bwd.div_ceil(m as Flops),
        fwd_packs,
        bwd_packs,
    })
}

/// Largest cost of one minimum slice anywhere in `samples`: the last grid unit of
/// each sample is the most expensive one it has.
pub fn grid_slice_bound(samples: &[Sample], alignment: u64, pass: Pass<'_>, model: &ModelShape) -> Flops {
    samples
        .iter()
        .map(|s| {
            let back = SliceLengths::from_back(s.length, alignment);
            pass.span_cost(model, s, s.length - back.min_len(), s.length)
        })
        .max()
        .unwrap_or(0)
}
