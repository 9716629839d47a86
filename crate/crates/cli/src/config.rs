//! Run configuration: one versioned JSON document.
//!
//! ```json
//! {
//!   "version": 1,
//!   "cluster": { "dp": 4, "pp": 4, "mem_budget_bytes": 80000000000 },
//!   "workload": { "source": "synthetic", "seed": 42, "count": 10000 }
//! }
//! ```
//!
//! Omitted sections take defaults: a 7B-class model, the reference hardware
//! profile, default multipliers and solver options, 1F1B and SlimPack. A manifest
//! workload is `{ "source": "manifest", "path": "...", "format": "plain" | "jsonl" }`
//! with `path` relative to the config file.

use std::path::{Path, PathBuf};

use micropack_core::baselines::Strategy;
use micropack_core::solver::{ClusterConfig, SolverOptions};
use micropack_core::workload::{generate_synthetic, load_lengths, LengthDistributionSpec, ManifestFormat};
use micropack_core::{CostMultipliers, GlobalBatch, HardwareProfile, ModelShape, ScheduleKind, SimOptions};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default = "ModelShape::llama_7b")]
    pub model: ModelShape,
    pub cluster: ClusterConfig,
    #[serde(default = "HardwareProfile::reference")]
    pub hardware: HardwareProfile,
    #[serde(default)]
    pub multipliers: CostMultipliers,
    #[serde(default)]
    pub solver: SolverOptions,
    pub workload: Workload,
    #[serde(default = "default_schedule")]
    pub schedule_kind: ScheduleKind,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub sim: SimOptions,
    /// Plan every rank with this many packs instead of sweeping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_m: Option<usize>,
    /// Bin capacity in tokens for the sample-level baselines; the longest sample
    /// when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_max_len: Option<u64>,
    #[serde(default)]
    pub gantt: GanttOptions,
}

fn default_schedule() -> ScheduleKind {
    ScheduleKind::OneFOneB
}

fn default_strategy() -> Strategy {
    Strategy::Slimpack
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum Workload {
    Manifest {
        path: PathBuf,
        format: ManifestFormat,
    },
    Synthetic {
        #[serde(default = "LengthDistributionSpec::reference")]
        spec: LengthDistributionSpec,
        seed: u64,
        count: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanttOptions {
    pub px_per_sec: f64,
    pub lane_height: u32,
}

impl Default for GanttOptions {
    fn default() -> Self {
        Self {
            px_per_sec: 100.0,
            lane_height: 24,
        }
    }
}

/// Scalar overrides from the command line. Flags beat the file, the file beats
/// defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub dp: Option<usize>,
    pub pp: Option<usize>,
    pub mem_budget_bytes: Option<u64>,
    pub alignment: Option<u64>,
    pub seed: Option<u64>,
    pub count: Option<usize>,
    pub strategy: Option<Strategy>,
    pub schedule_kind: Option<ScheduleKind>,
    pub fixed_m: Option<usize>,
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(v) = o.dp {
            self.cluster.dp = v;
        }
        if let Some(v) = o.pp {
            self.cluster.pp = v;
        }
        if let Some(v) = o.mem_budget_bytes {
            self.cluster.mem_budget_bytes = v;
        }
        if let Some(v) = o.alignment {
            self.solver.alignment = v;
        }
        if let Some(v) = o.strategy {
            self.strategy = v;
        }
        if let Some(v) = o.schedule_kind {
            self.schedule_kind = v;
        }
        if o.fixed_m.is_some() {
            self.fixed_m = o.fixed_m;
        }
        match &mut self.workload {
            Workload::Synthetic { seed, count, .. } => {
                if let Some(v) = o.seed {
                    *seed = v;
                }
                if let Some(v) = o.count {
                    *count = v;
                }
            }
            Workload::Manifest { .. } => {
                if o.seed.is_some() || o.count.is_some() {
                    return Err(CliError::Config(
                        "--seed and --count apply only to a synthetic workload".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Checks every nested invariant.
    pub fn validate(&self) -> Result<(), CliError> {
        let err = |field: &str, e: String| CliError::Config(format!("{field}: {e}"));
        self.model.validate().map_err(|e| err("model", e.to_string()))?;
        self.hardware.validate().map_err(|e| err("hardware", e.to_string()))?;
        self.multipliers
            .validate()
            .map_err(|e| err("multipliers", e.to_string()))?;
        self.cluster.validate().map_err(|e| err("cluster", e.to_string()))?;
        self.solver.validate().map_err(|e| err("solver", e.to_string()))?;
        self.sim
            .layers_per_stage(self.model.num_layers, self.cluster.pp)
            .map_err(|e| err("sim", e.to_string()))?;
        if let Workload::Synthetic { spec, count, .. } = &self.workload {
            spec.validate().map_err(|e| err("workload.spec", e.to_string()))?;
            if *count == 0 {
                return Err(err("workload.count", "must be at least 1".into()));
            }
        }
        if let Some(m) = self.fixed_m {
            if m == 0 || m % self.cluster.pp != 0 {
                return Err(err(
                    "fixed_m",
                    format!("{m} is not a positive multiple of pp = {}", self.cluster.pp),
                ));
            }
        }
        if !(self.gantt.px_per_sec.is_finite() && self.gantt.px_per_sec > 0.0) {
            return Err(err("gantt.px_per_sec", "must be positive".into()));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> micropack_core::Pipeline {
        micropack_core::Pipeline {
            model: self.model,
            hw: self.hardware,
            mult: self.multipliers,
            pp: self.cluster.pp,
            schedule: self.schedule_kind,
            sim: self.sim.clone(),
        }
    }

    /// Loads or generates the batch. Manifest paths resolve against `base_dir`.
    pub fn load_batch(&self, base_dir: &Path) -> Result<GlobalBatch, CliError> {
        match &self.workload {
            Workload::Synthetic { spec, seed, count } => Ok(generate_synthetic(spec, *seed, *count)?),
            Workload::Manifest { path, format } => {
                let full = base_dir.join(path);
                let file =
                    std::fs::File::open(&full).map_err(|e| CliError::Config(format!("{}: {e}", full.display())))?;
                Ok(load_lengths(
                    std::io::BufReader::new(file),
                    *format,
                    &path.display().to_string(),
                )?)
            }
        }
    }
}

/// Path of a serde error as a JSON pointer, e.g. `/cluster/dp`.
pub fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parses a versioned document. The `version` field is checked before anything
/// else so a newer schema is rejected rather than half-read.
pub fn parse_versioned<T: DeserializeOwned>(bytes: &[u8], what: &str, version: u32) -> Result<T, CliError> {
    #[derive(Deserialize)]
    struct Header {
        version: Option<serde_json::Value>,
    }
    let header: Header =
        serde_json::from_slice(bytes).map_err(|e| CliError::Config(format!("{what}: invalid JSON: {e}")))?;
    match header.version {
        Some(serde_json::Value::Number(n)) if n.as_u64() == Some(version as u64) => {}
        Some(v) => {
            return Err(CliError::Config(format!(
                "{what} at /version: unsupported schema version {v} (expected {version})"
            )))
        }
        None => return Err(CliError::Config(format!("{what} at /version: missing schema version"))),
    }
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::Config(format!("{what} at {}: {}", json_pointer(e.path()), e.inner())))
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_versioned(&bytes, &format!("config {}", path.display()), CONFIG_VERSION)
}
