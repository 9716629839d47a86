use serde::{Deserialize, Serialize};

use super::{critical_path, Dag, Timeline};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: usize,
    pub busy: f64,
    pub idle: f64,
    pub bubble_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub stages: Vec<StageMetrics>,
    pub t_total: f64,
    pub tokens_per_sec: f64,
    pub critical_path: Vec<usize>,
}

/// Busy and idle time per stage over the step, plus throughput for `tokens`.
pub fn compute_metrics(dag: &Dag, tl: &Timeline, tokens: u64) -> Metrics {
    let mut busy = vec![0.0f64; dag.num_stages()];
    for v in &dag.vertices {
        busy[v.stage] += v.weight;
    }
    let t = tl.t_total;
    let stages = busy
        .into_iter()
        .enumerate()
        .map(|(stage, busy)| {
            let idle = (t - busy).max(0.0);
            StageMetrics {
                stage,
                busy,
                idle,
                bubble_fraction: if t > 0.0 { (idle / t).clamp(0.0, 1.0) } else { 0.0 },
            }
        })
        .collect();
    Metrics {
        stages,
        t_total: t,
        tokens_per_sec: if t > 0.0 { tokens as f64 / t } else { 0.0 },
        critical_path: critical_path(dag, tl),
    }
}
