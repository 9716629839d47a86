use super::{SolverError, SolverOptions};
use crate::cost::{Flops, ModelShape, SliceLengths};
use crate::workload::Sample;

pub const ORACLE_MAX_SAMPLES: usize = 6;
pub const ORACLE_MAX_PACKS: usize = 3;
pub const ORACLE_MAX_UNITS: usize = 24;

/// Optimal bottleneck forward cost over every way of cutting the concatenated sample
/// stream into `m` nonempty contiguous packs at grid positions. Exhaustive; for
/// tiny instances only.
pub fn exact_partition_oracle(
    samples: &[Sample],
    m: usize,
    model: &ModelShape,
    opts: &SolverOptions,
) -> Result<Flops, SolverError> {
    if samples.is_empty() || m == 0 {
        return Err(SolverError::Oracle("need at least one sample and one pack".into()));
    }
    if samples.len() > ORACLE_MAX_SAMPLES || m > ORACLE_MAX_PACKS {
        return Err(SolverError::Oracle(format!(
            "instance too large: {} samples, m = {m}",
            samples.len()
        )));
    }
    // cost of each minimum slice, in stream order
    let mut units: Vec<Flops> = Vec::new();
    for s in samples {
        let lens = SliceLengths::from_front(0, s.length, opts.alignment);
        let n = lens.count();
        let mut start = 0;
        for k in 0..n {
            let end = if k + 1 == n { s.length } else { start + opts.alignment };
            units.push(s.slice_fwd_cost(model, start, end).total());
            start = end;
        }
        if units.len() > ORACLE_MAX_UNITS {
            return Err(SolverError::Oracle(format!(
                "instance too large: more than {ORACLE_MAX_UNITS} grid slices"
            )));
        }
    }
    if units.len() < m {
        return Err(SolverError::Oracle(format!(
            "{} grid slices cannot fill {m} packs",
            units.len()
        )));
    }
    let mut prefix = vec![0 as Flops];
    for u in &units {
        prefix.push(prefix.last().unwrap() + u);
    }
    Ok(search(&prefix, 0, m, Flops::MAX))
}

/// Best bottleneck for units `from..` split into `m` packs, pruned by `bound`.
fn search(prefix: &[Flops], from: usize, m: usize, bound: Flops) -> Flops {
    let n = prefix.len() - 1;
    if m == 1 {
        return prefix[n] - prefix[from];
    }
    let mut best = bound;
    for cut in from + 1..=n - (m - 1) {
        let head = prefix[cut] - prefix[from];
        if head >= best {
            break;
        }
        let rest = search(prefix, cut, m - 1, best);
        best = best.min(head.max(rest));
    }
    best
}
