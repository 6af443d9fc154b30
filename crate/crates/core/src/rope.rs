//! Rotary position embedding: frequency schedules and rotation of head tensors.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// RoPE base used when a model config does not say otherwise.
pub const DEFAULT_BASE: f64 = 10_000.0;

/// Pipeline stage at which a query/key tensor was captured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PreNtk,
    PostNtk,
    PostRope,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::PreNtk, Stage::PostNtk, Stage::PostRope];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::PreNtk => "pre_ntk",
            Stage::PostNtk => "post_ntk",
            Stage::PostRope => "post_rope",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "pre_ntk" => Ok(Stage::PreNtk),
            "post_ntk" | "ntk" => Ok(Stage::PostNtk),
            "post_rope" => Ok(Stage::PostRope),
            other => Err(Error::Config(format!("unknown stage `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    Query,
    Key,
}

impl Indicator {
    pub const ALL: [Indicator; 2] = [Indicator::Query, Indicator::Key];

    pub fn as_str(self) -> &'static str {
        match self {
            Indicator::Query => "query",
            Indicator::Key => "key",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Indicator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "query" | "q" => Ok(Indicator::Query),
            "key" | "k" => Ok(Indicator::Key),
            other => Err(Error::Config(format!("unknown indicator `{other}`"))),
        }
    }
}

/// Which channels form a rotary band.
///
/// `Interleaved` pairs `(2f, 2f+1)`; `HalfSplit` pairs `(f, f + d_h/2)` as in
/// GPT-NeoX style implementations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    #[default]
    Interleaved,
    HalfSplit,
}

impl Pairing {
    pub fn band_columns(self, band: usize, d_h: usize) -> (usize, usize) {
        match self {
            Pairing::Interleaved => (2 * band, 2 * band + 1),
            Pairing::HalfSplit => (band, band + d_h / 2),
        }
    }
}

/// How a schedule's frequencies were derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleRecipe {
    Vanilla {
        base: f64,
    },
    DynamicNtk {
        base: f64,
        target_len: u64,
        original_len: u64,
    },
    NtkByParts {
        base: f64,
        target_len: u64,
        original_len: u64,
        low_factor: f64,
        high_factor: f64,
    },
}

impl ScheduleRecipe {
    pub fn base(&self) -> f64 {
        match *self {
            ScheduleRecipe::Vanilla { base }
            | ScheduleRecipe::DynamicNtk { base, .. }
            | ScheduleRecipe::NtkByParts { base, .. } => base,
        }
    }

    pub fn build(&self, d_h: usize) -> Result<FrequencySchedule> {
        match *self {
            ScheduleRecipe::Vanilla { base } => vanilla_schedule(base, d_h),
            ScheduleRecipe::DynamicNtk { base, target_len, original_len } => {
                dynamic_ntk_schedule(base, d_h, target_len, original_len)
            }
            ScheduleRecipe::NtkByParts { base, target_len, original_len, low_factor, high_factor } => {
                ntk_by_parts_schedule(base, d_h, target_len, original_len, low_factor, high_factor)
            }
        }
    }
}

/// Per-band rotation frequencies for one head dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySchedule {
    pub d_h: usize,
    /// Base the omegas were computed from (the rescaled base for Dynamic-NTK).
    pub base: f64,
    pub omegas: Vec<f64>,
    pub recipe: ScheduleRecipe,
}

impl FrequencySchedule {
    pub fn bands(&self) -> usize {
        self.omegas.len()
    }
}

fn check_dims(base: f64, d_h: usize) -> Result<()> {
    if d_h < 2 || d_h % 2 != 0 {
        return Err(Error::Config(format!("head dimension must be even and >= 2, got {d_h}")));
    }
    if !(base > 1.0) || !base.is_finite() {
        return Err(Error::Config(format!("RoPE base must be a finite value > 1, got {base}")));
    }
    Ok(())
}

fn omegas_from_base(base: f64, d_h: usize) -> Vec<f64> {
    (0..d_h / 2).map(|f| base.powf(-2.0 * f as f64 / d_h as f64)).collect()
}

fn scaling_factor(target_len: u64, original_len: u64) -> Result<f64> {
    if original_len == 0 || target_len < original_len {
        return Err(Error::Config(format!(
            "need target length >= original length >= 1, got {target_len} and {original_len}"
        )));
    }
    Ok(target_len as f64 / original_len as f64)
}

/// `ω_f = base^(-2f/d_h)`.
pub fn vanilla_schedule(base: f64, d_h: usize) -> Result<FrequencySchedule> {
    check_dims(base, d_h)?;
    Ok(FrequencySchedule {
        d_h,
        base,
        omegas: omegas_from_base(base, d_h),
        recipe: ScheduleRecipe::Vanilla { base },
    })
}

/// Dynamic-NTK: rescale the base to `base · α^(d_h/(d_h-2))` with
/// `α = target_len / original_len`, then use the vanilla formula.
pub fn dynamic_ntk_schedule(
    base: f64,
    d_h: usize,
    target_len: u64,
    original_len: u64,
) -> Result<FrequencySchedule> {
    check_dims(base, d_h)?;
    let alpha = scaling_factor(target_len, original_len)?;
    // With a single band the only frequency is ω_0 = 1 regardless of base.
    let scaled = if d_h == 2 { base } else { dynamic_ntk_base(base, d_h, alpha) };
    Ok(FrequencySchedule {
        d_h,
        base: scaled,
        omegas: omegas_from_base(scaled, d_h),
        recipe: ScheduleRecipe::DynamicNtk { base, target_len, original_len },
    })
}

pub fn dynamic_ntk_base(base: f64, d_h: usize, alpha: f64) -> f64 {
    base * alpha.powf(d_h as f64 / (d_h as f64 - 2.0))
}

/// Wavelength ratio `L_original · ω / 2π`: how many full turns the band makes
/// over the original context.
pub fn wavelength_ratio(omega: f64, original_len: u64) -> f64 {
    original_len as f64 * omega / (2.0 * PI)
}

/// Blend weight toward the unscaled frequency on the linear ramp between the
/// two factors; 0 means fully interpolated, 1 means kept.
pub fn by_parts_ramp(ratio: f64, low_factor: f64, high_factor: f64) -> f64 {
    ((ratio - low_factor) / (high_factor - low_factor)).clamp(0.0, 1.0)
}

/// NTK-by-parts: keep high-frequency bands, interpolate low-frequency bands by
/// `1/α`, blend linearly in between.
pub fn ntk_by_parts_schedule(
    base: f64,
    d_h: usize,
    target_len: u64,
    original_len: u64,
    low_factor: f64,
    high_factor: f64,
) -> Result<FrequencySchedule> {
    check_dims(base, d_h)?;
    if !(low_factor > 0.0 && low_factor < high_factor) {
        return Err(Error::Config(format!(
            "need 0 < low_factor < high_factor, got {low_factor} and {high_factor}"
        )));
    }
    let alpha = scaling_factor(target_len, original_len)?;
    let omegas = omegas_from_base(base, d_h)
        .into_iter()
        .map(|omega| {
            let keep = by_parts_ramp(wavelength_ratio(omega, original_len), low_factor, high_factor);
            (1.0 - keep) * omega / alpha + keep * omega
        })
        .collect();
    Ok(FrequencySchedule {
        d_h,
        base,
        omegas,
        recipe: ScheduleRecipe::NtkByParts { base, target_len, original_len, low_factor, high_factor },
    })
}

/// One head's query or key matrix, `n` positions by `d_h` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensor {
    pub values: Matrix,
    pub stage: Stage,
    pub indicator: Indicator,
    pub layer: usize,
    pub head: usize,
    pub pairing: Pairing,
}

impl HeadTensor {
    pub fn new(values: Matrix, stage: Stage, indicator: Indicator, layer: usize, head: usize) -> Result<Self> {
        if values.cols() < 2 || values.cols() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "head dimension must be even and >= 2, got {}",
                values.cols()
            )));
        }
        Ok(Self { values, stage, indicator, layer, head, pairing: Pairing::Interleaved })
    }

    pub fn with_pairing(mut self, pairing: Pairing) -> Self {
        self.pairing = pairing;
        self
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn d_h(&self) -> usize {
        self.values.cols()
    }

    pub fn bands(&self) -> usize {
        self.d_h() / 2
    }

    /// Same provenance, new values.
    pub fn with_values(&self, values: Matrix) -> HeadTensor {
        HeadTensor { values, ..self.clone() }
    }
}

/// Rotates every band pair of row `m` by `ω_f · position_m`.
pub fn apply_rope(x: &HeadTensor, schedule: &FrequencySchedule, positions: &[i64]) -> Result<HeadTensor> {
    if x.stage == Stage::PostRope {
        return Err(Error::DoubleRotation { layer: x.layer, head: x.head });
    }
    if positions.len() != x.n() {
        return Err(Error::Dimension(format!(
            "{} positions for {} rows",
            positions.len(),
            x.n()
        )));
    }
    if x.d_h() != schedule.d_h {
        return Err(Error::Dimension(format!(
            "tensor has d_h {} but schedule has {}",
            x.d_h(),
            schedule.d_h
        )));
    }
    let d_h = x.d_h();
    let mut out = x.values.clone();
    for (i, &pos) in positions.iter().enumerate() {
        let row = out.row_mut(i);
        for (f, &omega) in schedule.omegas.iter().enumerate() {
            let (a, b) = x.pairing.band_columns(f, d_h);
            let (sin, cos) = (omega * pos as f64).sin_cos();
            let (u, v) = (row[a], row[b]);
            row[a] = u * cos - v * sin;
            row[b] = u * sin + v * cos;
        }
    }
    Ok(HeadTensor { values: out, stage: Stage::PostRope, ..x.clone() })
}

/// Positions `start, start+1, …` for `n` rows.
pub fn contiguous_positions(start: i64, n: usize) -> Vec<i64> {
    (0..n as i64).map(|i| start + i).collect()
}
