#![allow(dead_code)]

use std::path::PathBuf;

use micropack_core::schedule::Injection;
use micropack_core::solver::ClusterConfig;
use micropack_core::workload::{generate_synthetic, LengthDistributionSpec};
use micropack_core::*;
use rand::Rng;
use serde::Deserialize;

pub fn toy_model() -> ModelShape {
    ModelShape {
        hidden_dim: 4,
        num_layers: 1,
        num_heads: 1,
        num_kv_groups: 1,
        ffn_dim: 8,
        vocab_size: 16,
    }
}

pub fn pipeline(pp: usize, schedule: ScheduleKind) -> Pipeline {
    Pipeline {
        model: ModelShape::llama_7b(),
        hw: HardwareProfile::reference(),
        mult: CostMultipliers::default(),
        pp,
        schedule,
        sim: SimOptions::default(),
    }
}

pub const REFERENCE_SEED: u64 = 42;
pub const REFERENCE_COUNT: usize = 10_000;

pub fn reference_batch() -> GlobalBatch {
    generate_synthetic(&LengthDistributionSpec::reference(), REFERENCE_SEED, REFERENCE_COUNT).unwrap()
}

pub fn reference_cluster() -> ClusterConfig {
    ClusterConfig {
        dp: 4,
        pp: 4,
        cp_base: 1,
        mem_budget_bytes: u64::MAX,
    }
}

/// Random model small enough for exhaustive checks but with every field exercised.
pub fn random_model(rng: &mut impl Rng) -> ModelShape {
    let heads = [1u64, 2, 4, 8][rng.random_range(0..4)];
    let divisors: Vec<u64> = (1..=heads).filter(|g| heads.is_multiple_of(*g)).collect();
    let groups = divisors[rng.random_range(0..divisors.len())];
    ModelShape {
        hidden_dim: heads * rng.random_range(1..=64),
        num_layers: rng.random_range(1..=48),
        num_heads: heads,
        num_kv_groups: groups,
        ffn_dim: rng.random_range(1..=512),
        vocab_size: rng.random_range(1..=1024),
    }
}

pub fn random_batch(rng: &mut impl Rng, n: usize, max_len: u64) -> GlobalBatch {
    GlobalBatch {
        samples: (0..n as u64)
            .map(|i| Sample::new(i, rng.random_range(1..=max_len)))
            .collect(),
        source: "random".into(),
    }
}

#[derive(Debug, Deserialize)]
pub struct ScheduleFixture {
    pub name: String,
    pub pp: usize,
    pub samples: Vec<(u64, u64)>,
    pub fwd_packs: Vec<Vec<(u64, u64, u64)>>,
    pub bwd_packs: Vec<Vec<(u64, u64, u64)>>,
    pub expected: Expected,
    pub notes: Vec<String>,
}

#[derive(Debug, Deserialize)]
pub struct Expected {
    pub states_fwd: Vec<PackState>,
    pub ready: Vec<usize>,
    pub warmup: Vec<usize>,
    pub injections: Vec<Injection>,
    pub last_stage: Vec<String>,
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn load_fixture(name: &str) -> ScheduleFixture {
    let text = std::fs::read_to_string(fixture_path(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

impl ScheduleFixture {
    pub fn plan(&self, model: &ModelShape, mult: &CostMultipliers) -> RankPlan {
        let samples: Vec<Sample> = self.samples.iter().map(|&(id, len)| Sample::new(id, len)).collect();
        let len_of = |id: u64| samples.iter().find(|s| s.id == id).unwrap().length;
        let slices = |packs: &[Vec<(u64, u64, u64)>]| -> Vec<Vec<Slice>> {
            packs
                .iter()
                .map(|p| {
                    p.iter()
                        .map(|&(id, start, end)| Slice {
                            sample_id: id,
                            start,
                            end,
                            sample_len: len_of(id),
                        })
                        .collect()
                })
                .collect()
        };
        let fwd = slices(&self.fwd_packs);
        let bwd = slices(&self.bwd_packs);
        RankPlan::from_slices(0, samples, fwd, bwd, model, mult)
    }
}

pub fn task_names(tasks: &[TaskRef]) -> Vec<String> {
    tasks.iter().map(|t| format!("{}{}", t.action, t.pack_index)).collect()
}
