//! Integer FLOPs accounting for causal transformer layers at slice granularity.
//!
//! A slice `[a, a + l)` of a sample runs every query token `q` in the span against the
//! `q + 1` keys before it (causal mask, KV cache of the earlier slices). Attention
//! work is therefore quadratic in the sequence position while the projection and
//! FFN GEMMs are linear in the token count. All counts are exact `u128` so that the
//! sum over any contiguous partition of a sample equals the whole-sample count.

use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// FLOPs are exact integers; a 10k-sample long-context batch overflows `u64`.
pub type Flops = u128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("empty slice is not a cost unit")]
    EmptySlice,
    #[error("invalid model shape: {0}")]
    InvalidModel(String),
    #[error("invalid hardware profile: {0}")]
    InvalidHardware(String),
    #[error("invalid cost multipliers: {0}")]
    InvalidMultipliers(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelShape {
    pub hidden_dim: u64,
    pub num_layers: u64,
    pub num_heads: u64,
    /// Grouped-query attention groups; equals `num_heads` when GQA is unused.
    pub num_kv_groups: u64,
    pub ffn_dim: u64,
    pub vocab_size: u64,
}

impl ModelShape {
    /// Llama-2-7B-like shape used by the reference configuration.
    pub fn llama_7b() -> Self {
        Self {
            hidden_dim: 4096,
            num_layers: 32,
            num_heads: 32,
            num_kv_groups: 32,
            ffn_dim: 11008,
            vocab_size: 32000,
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let fields = [
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("num_kv_groups", self.num_kv_groups),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(CostError::InvalidModel(format!("{name} must be positive")));
        }
        if !self.num_heads.is_multiple_of(self.num_kv_groups) {
            return Err(CostError::InvalidModel("num_kv_groups must divide num_heads".into()));
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(CostError::InvalidModel(
                "hidden_dim must be divisible by num_heads".into(),
            ));
        }
        Ok(())
    }

    /// Width of the K and V projections.
    pub fn kv_dim(&self) -> u64 {
        self.hidden_dim * self.num_kv_groups / self.num_heads
    }

    /// Weight elements per layer: Q, K, V, O projections plus a 3-matrix SwiGLU FFN.
    pub fn params_per_layer(&self) -> u128 {
        let h = self.hidden_dim as u128;
        let kv = self.kv_dim() as u128;
        let ffn = self.ffn_dim as u128;
        h * h + 2 * h * kv + h * h + 3 * h * ffn
    }
}

/// Backward/forward cost ratios for the two kinds of work.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMultipliers {
    pub r_gemm: f64,
    pub r_attn: f64,
}

impl Default for CostMultipliers {
    fn default() -> Self {
        Self {
            r_gemm: 2.0,
            r_attn: 2.5,
        }
    }
}

impl CostMultipliers {
    pub const IDENTITY: Self = Self {
        r_gemm: 1.0,
        r_attn: 1.0,
    };

    pub fn validate(&self) -> Result<(), CostError> {
        for (name, r) in [("r_gemm", self.r_gemm), ("r_attn", self.r_attn)] {
            if !r.is_finite() || r < 1.0 {
                return Err(CostError::InvalidMultipliers(format!(
                    "{name} must be a finite ratio >= 1.0, got {r}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SliceCost {
    pub attn_flops: Flops,
    pub linear_flops: Flops,
}

impl SliceCost {
    pub const ZERO: Self = Self {
        attn_flops: 0,
        linear_flops: 0,
    };

    pub fn total(&self) -> Flops {
        self.attn_flops + self.linear_flops
    }
}

impl Add for SliceCost {
    type Output = SliceCost;

    fn add(self, rhs: Self) -> Self {
        Self {
            attn_flops: self.attn_flops + rhs.attn_flops,
            linear_flops: self.linear_flops + rhs.linear_flops,
        }
    }
}

impl AddAssign for SliceCost {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sum for SliceCost {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub peak_flops_per_sec: f64,
    pub util_gemm: f64,
    pub util_attn: f64,
    pub activation_bytes_per_token_per_layer: u64,
    pub kv_bytes_per_token_per_layer: u64,
    pub static_bytes_per_stage: u64,
}

impl HardwareProfile {
    /// Hopper-class accelerator running Llama-7B with full activation recomputation:
    /// only each layer's input is kept across the step, and key/value tensors stay
    /// resident while later slices of the same sample still need them.
    pub fn reference() -> Self {
        Self {
            peak_flops_per_sec: 989e12,
            util_gemm: 0.6,
            util_attn: 0.45,
            activation_bytes_per_token_per_layer: 8192,
            kv_bytes_per_token_per_layer: 4096,
            static_bytes_per_stage: 8_000_000_000,
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.peak_flops_per_sec.is_finite() && self.peak_flops_per_sec > 0.0) {
            return Err(CostError::InvalidHardware("peak_flops_per_sec must be positive".into()));
        }
        for (name, u) in [("util_gemm", self.util_gemm), ("util_attn", self.util_attn)] {
            if !(u > 0.0 && u <= 1.0) {
                return Err(CostError::InvalidHardware(format!(
                    "{name} must lie in (0, 1], got {u}"
                )));
            }
        }
        Ok(())
    }
}

/// Attention FLOPs of the causal slice `[offset, offset + len)` for all layers.
fn attention_flops(model: &ModelShape, offset: u64, len: u64) -> Flops {
    let (a, l) = (offset as u128, len as u128);
    let pairs = l * a + l * (l + 1) / 2;
    4 * model.num_layers as u128 * model.hidden_dim as u128 * pairs
}

fn linear_flops(model: &ModelShape, len: u64) -> Flops {
    2 * len as u128 * model.num_layers as u128 * model.params_per_layer()
}

pub fn slice_forward_flops(model: &ModelShape, offset: u64, len: u64) -> Result<SliceCost, CostError> {
    if len == 0 {
        return Err(CostError::EmptySlice);
    }
    Ok(SliceCost {
        attn_flops: attention_flops(model, offset, len),
        linear_flops: linear_flops(model, len),
    })
}

pub fn sample_forward_flops(model: &ModelShape, length: u64) -> Result<SliceCost, CostError> {
    slice_forward_flops(model, 0, length)
}

/// Cost of the prefix `[0, len)`; defined (as zero) for the empty prefix.
pub(crate) fn prefix_forward_flops(model: &ModelShape, len: u64) -> SliceCost {
    SliceCost {
        attn_flops: attention_flops(model, 0, len),
        linear_flops: linear_flops(model, len),
    }
}

/// Output-projection GEMM for `len` tokens, charged to the last stage when enabled.
pub fn vocab_projection_flops(model: &ModelShape, len: u64) -> Flops {
    2 * len as u128 * model.hidden_dim as u128 * model.vocab_size as u128
}

const RATIO_SCALE: u128 = 1_000_000;

/// `round(r * x)` in fixed point, exact for ratios with up to six decimals.
fn scale_flops(x: Flops, r: f64) -> Flops {
    let q = (r * RATIO_SCALE as f64).round() as u128;
    (x * q + RATIO_SCALE / 2) / RATIO_SCALE
}

pub fn backward_flops(fwd: SliceCost, m: &CostMultipliers) -> SliceCost {
    SliceCost {
        attn_flops: scale_flops(fwd.attn_flops, m.r_attn),
        linear_flops: scale_flops(fwd.linear_flops, m.r_gemm),
    }
}

pub fn flops_to_seconds(cost: SliceCost, hw: &HardwareProfile) -> Result<f64, CostError> {
    hw.validate()?;
    Ok(seconds_unchecked(cost, hw))
}

/// `flops_to_seconds` for a profile the caller has already validated.
pub(crate) fn seconds_unchecked(cost: SliceCost, hw: &HardwareProfile) -> f64 {
    cost.attn_flops as f64 / (hw.peak_flops_per_sec * hw.util_attn)
        + cost.linear_flops as f64 / (hw.peak_flops_per_sec * hw.util_gemm)
}

/// Admissible lengths for the next slice cut from one end of a sample.
///
/// Lengths are `first + i * step` for `i < grid_count`, followed by `whole` (the
/// entire remaining span). Grid lengths always leave at least one grid unit behind,
/// so no slice shorter than the alignment is ever produced except for samples that
/// are themselves shorter than one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceLengths {
    pub first: u64,
    pub step: u64,
    pub grid_count: u64,
    pub whole: u64,
}

impl SliceLengths {
    /// Slices cut from the front of `[offset, sample_len)`.
    pub fn from_front(offset: u64, sample_len: u64, alignment: u64) -> Self {
        let a = alignment.max(1);
        let whole = sample_len - offset;
        let first_end = (offset / a + 1) * a;
        let grid_count = if sample_len >= a && first_end + a <= sample_len {
            let last_end = (sample_len - a) / a * a;
            (last_end - first_end) / a + 1
        } else {
            0
        };
        Self {
            first: first_end - offset,
            step: a,
            grid_count,
            whole,
        }
    }

    /// Slices cut from the back of `[0, end)`.
    pub fn from_back(end: u64, alignment: u64) -> Self {
        let a = alignment.max(1);
        // largest aligned start that leaves a slice of at least one unit
        let (first, grid_count) = if end >= 2 * a {
            let last_start = (end - a) / a * a;
            (end - last_start, last_start / a)
        } else {
            (end, 0)
        };
        Self {
            first,
            step: a,
            grid_count,
            whole: end,
        }
    }

    pub fn count(&self) -> u64 {
        self.grid_count + 1
    }

    pub fn len_at(&self, i: u64) -> u64 {
        if i < self.grid_count {
            self.first + i * self.step
        } else {
            self.whole
        }
    }

    pub fn min_len(&self) -> u64 {
        self.len_at(0)
    }

    /// Largest admissible length whose cost fits `budget`, or 0 when none does.
    /// `cost` must be strictly increasing in the length.
    pub fn largest_fitting(&self, budget: Flops, cost: impl Fn(u64) -> Flops) -> u64 {
        if cost(self.len_at(0)) > budget {
            return 0;
        }
        let (mut lo, mut hi) = (0u64, self.count() - 1);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if cost(self.len_at(mid)) <= budget {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        self.len_at(lo)
    }
}

/// Number of minimum-size slices a sample of `len` tokens can be cut into.
pub fn max_slice_count(len: u64, alignment: u64) -> u64 {
    (len / alignment.max(1)).max(1)
}

pub fn max_slice_len_within_budget(
    model: &ModelShape,
    offset: u64,
    remaining: u64,
    budget: Flops,
    alignment: u64,
) -> u64 {
    if remaining == 0 {
        return 0;
    }
    SliceLengths::from_front(offset, offset + remaining, alignment)
        .largest_fitting(budget, |l| attention_flops(model, offset, l) + linear_flops(model, l))
}
