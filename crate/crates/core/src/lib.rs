//! Planning and simulation of slice-level MicroPacks for pipeline-parallel training
//! on variable-length batches.
//!
//! The pieces, bottom up:
//!
//! - [`cost`]: exact FLOPs of token spans and the hardware calibration.
//! - [`workload`]: samples, slices, packs, length manifests and synthetic batches.
//! - [`solver`]: rank assignment, DP-Merge, forward and backward pack formation and
//!   the `m` sweep.
//! - [`baselines`]: sample-level packing strategies for comparison.
//! - [`schedule`]: per-stage GPipe and 1F1B task programs.
//! - [`dagsim`]: dependency graph, timeline, memory trace and metrics.
//! - [`simulate`]: glue from a plan to simulated step time and memory.

pub mod baselines;
pub mod cost;
pub mod dagsim;
pub mod plan;
pub mod schedule;
pub mod simulate;
pub mod solver;
pub mod stats;
pub mod workload;

pub use cost::{CostMultipliers, Flops, HardwareProfile, ModelShape, SliceCost};
pub use dagsim::SimOptions;
pub use plan::{DpMergeGroup, PackPlan, PlanError, RankPlan};
pub use schedule::{Action, RankProgram, ScheduleKind, TaskRef};
pub use simulate::{simulate_plan, simulate_rank, Pipeline, PlanSimulation, RankSimulation};
pub use solver::{ClusterConfig, SolverError, SolverOptions};
pub use workload::{GlobalBatch, MicroPack, PackState, Sample, SampleId, Slice};
