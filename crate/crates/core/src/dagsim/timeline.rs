use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{Dag, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub start: Vec<f64>,
    pub finish: Vec<f64>,
    pub t_total: f64,
}

/// Kahn's algorithm, always releasing the smallest ready vertex id.
pub fn topo_sort(dag: &Dag) -> Result<Vec<usize>, SimError> {
    let n = dag.vertices.len();
    let succ = dag.successors();
    let mut indeg = vec![0usize; n];
    for e in &dag.edges {
        if e.from >= n || e.to >= n {
            return Err(SimError::Mismatch(format!(
                "edge ({}, {}) leaves the vertex set",
                e.from, e.to
            )));
        }
        indeg[e.to] += 1;
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&v| indeg[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(u)) = ready.pop() {
        order.push(u);
        for &(v, _) in &succ[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.push(Reverse(v));
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    Err(SimError::Cycle {
        vertices: find_cycle(dag, &indeg),
    })
}

/// Every vertex left with positive in-degree has a predecessor that is also left,
/// so walking predecessors must revisit a vertex.
fn find_cycle(dag: &Dag, indeg: &[usize]) -> Vec<usize> {
    let pred = dag.predecessors();
    let mut v = (0..indeg.len()).find(|&v| indeg[v] > 0).expect("a blocked vertex");
    let mut pos = vec![usize::MAX; indeg.len()];
    let mut walk = Vec::new();
    while pos[v] == usize::MAX {
        pos[v] = walk.len();
        walk.push(v);
        v = pred[v]
            .iter()
            .map(|&(u, _)| u)
            .filter(|&u| indeg[u] > 0)
            .min()
            .expect("blocked vertices have blocked predecessors");
    }
    let mut cycle = walk.split_off(pos[v]);
    cycle.reverse();
    cycle
}

/// Longest-path relaxation over a topological order.
pub fn compute_timeline(dag: &Dag) -> Result<Timeline, SimError> {
    let order = topo_sort(dag)?;
    Ok(compute_timeline_with_order(dag, &order))
}

/// Same as [`compute_timeline`] for a caller-chosen topological order.
pub fn compute_timeline_with_order(dag: &Dag, order: &[usize]) -> Timeline {
    let n = dag.vertices.len();
    let succ = dag.successors();
    let mut start = vec![0.0f64; n];
    let mut finish = vec![0.0f64; n];
    for &u in order {
        finish[u] = start[u] + dag.vertices[u].weight;
        for &(v, delay) in &succ[u] {
            start[v] = start[v].max(finish[u] + delay);
        }
    }
    let t_total = finish.iter().copied().fold(0.0, f64::max);
    Timeline { start, finish, t_total }
}

/// Walks back from the latest-finishing vertex through predecessors that released
/// it; ties go to the smallest vertex id.
pub fn critical_path(dag: &Dag, tl: &Timeline) -> Vec<usize> {
    let Some(mut v) = (0..dag.vertices.len()).fold(None, |best: Option<usize>, v| match best {
        Some(b) if tl.finish[b] >= tl.finish[v] => Some(b),
        _ => Some(v),
    }) else {
        return Vec::new();
    };
    let pred = dag.predecessors();
    let mut path = vec![v];
    loop {
        let next = pred[v]
            .iter()
            .filter(|&&(u, delay)| tl.finish[u] + delay == tl.start[v])
            .map(|&(u, _)| u)
            .min();
        match next {
            Some(u) => {
                path.push(u);
                v = u;
            }
            None => break,
        }
    }
    path.reverse();
    path
}
