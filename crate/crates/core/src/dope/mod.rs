//! Head selection and the positional-encoding denoising variants.
//!
//! Heads are ranked by the report score and the `k` lowest (`ASC`) or highest
//! (`DESC`) are denoised. Each variant implements [`Denoiser`] and is looked up
//! by name in a [`DenoiserRegistry`].

mod config;
mod pipeline;
mod variants;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub use config::{BandPolarity, DopeConfig, NoiseSigma, SortOrder};
pub use pipeline::{run_pipeline, run_pipeline_with, DopePlan, ScoreRow};
pub use variants::{ByAll, ByGaussian, ByParts};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::noise;
use crate::qkdp::QKDump;
use crate::registry::Registry;
use crate::rope::{FrequencySchedule, HeadTensor, Stage};
use crate::spectral::EntropyReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadRef {
    pub layer: usize,
    pub head: usize,
}

/// The `k` heads to denoise, in rank order. Ties fall back to `(layer, head)`.
pub fn select_heads(report: &EntropyReport, k: usize, order: SortOrder) -> Result<Vec<HeadRef>> {
    if k > report.heads.len() {
        return Err(Error::Config(format!(
            "cannot select {k} heads from {} scored heads",
            report.heads.len()
        )));
    }
    let mut ranked: Vec<(f64, HeadRef)> = report
        .heads
        .iter()
        .map(|h| (h.score, HeadRef { layer: h.layer, head: h.head }))
        .collect();
    ranked.sort_by(|(sa, ha), (sb, hb)| {
        let by_score = match order {
            SortOrder::Asc => sa.total_cmp(sb),
            SortOrder::Desc => sb.total_cmp(sa),
        };
        by_score.then(ha.cmp(hb))
    });
    Ok(ranked.into_iter().take(k).map(|(_, h)| h).collect())
}

/// Band threshold `θ = 2π/L`.
pub fn band_threshold(training_length: u64) -> f64 {
    2.0 * PI / training_length as f64
}

/// `mask[f] = ω_f <= 2π/L`.
pub fn band_mask(schedule: &FrequencySchedule, training_length: u64) -> Vec<bool> {
    band_mask_with(schedule, training_length, BandPolarity::KeepBelow)
}

pub fn band_mask_with(schedule: &FrequencySchedule, training_length: u64, polarity: BandPolarity) -> Vec<bool> {
    let theta = band_threshold(training_length);
    schedule
        .omegas
        .iter()
        .map(|&w| match polarity {
            BandPolarity::KeepBelow => w <= theta,
            BandPolarity::KeepAbove => w > theta,
        })
        .collect()
}

fn require_post_rope(x: &HeadTensor) -> Result<()> {
    if x.stage != Stage::PostRope {
        return Err(Error::Provenance(format!(
            "denoising applies to post_rope tensors, got {} for layer {} head {}",
            x.stage, x.layer, x.head
        )));
    }
    Ok(())
}

/// Zeroes the coordinates of every band whose mask entry is false.
pub fn dope_by_parts(x: &HeadTensor, mask: &[bool]) -> Result<HeadTensor> {
    require_post_rope(x)?;
    if mask.len() != x.bands() {
        return Err(Error::Dimension(format!(
            "band mask has {} entries for {} bands",
            mask.len(),
            x.bands()
        )));
    }
    let mut values = x.values.clone();
    let d_h = x.d_h();
    for (f, keep) in mask.iter().enumerate() {
        if *keep {
            continue;
        }
        let (a, b) = x.pairing.band_columns(f, d_h);
        for i in 0..x.n() {
            let row = values.row_mut(i);
            row[a] = 0.0;
            row[b] = 0.0;
        }
    }
    Ok(x.with_values(values))
}

/// `m_h · x`: identity when `keep`, zero tensor otherwise.
pub fn dope_by_all(x: &HeadTensor, keep: bool) -> Result<HeadTensor> {
    require_post_rope(x)?;
    if keep {
        return Ok(x.clone());
    }
    Ok(x.with_values(Matrix::zeros(x.n(), x.d_h())))
}

/// `m_h · x + (1 - m_h) · ε` with `ε ~ N(0, σ²)` drawn from the stream keyed
/// by `(seed, layer, head, indicator)`.
pub fn dope_by_gaussian(x: &HeadTensor, keep: bool, sigma: f64, seed: u64) -> Result<HeadTensor> {
    require_post_rope(x)?;
    if keep {
        return Ok(x.clone());
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    let draws = noise::gaussian(seed, x.layer, x.head, x.indicator, sigma, x.n() * x.d_h());
    Ok(x.with_values(Matrix::new(x.n(), x.d_h(), draws)?))
}

/// Pooled unbiased sample variance of every value in `tensors` (two-pass).
pub fn pooled_variance<'a>(tensors: impl Iterator<Item = &'a HeadTensor> + Clone) -> Option<f64> {
    let count: usize = tensors.clone().map(|t| t.values.data().len()).sum();
    if count < 2 {
        return None;
    }
    let mean = tensors.clone().flat_map(|t| t.values.data()).sum::<f64>() / count as f64;
    let ss: f64 = tensors.flat_map(|t| t.values.data()).map(|v| (v - mean) * (v - mean)).sum();
    Some(ss / (count - 1) as f64)
}

/// Per-head parameters resolved by a denoiser before application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadAction {
    pub layer: usize,
    pub head: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub band_mask: Option<Vec<bool>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noise: Option<NoiseParams>,
}

impl HeadAction {
    pub fn bare(h: HeadRef) -> Self {
        Self { layer: h.layer, head: h.head, band_mask: None, noise: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sigma_query: f64,
    pub sigma_key: f64,
    pub seed: u64,
}

/// Inputs a denoiser may consult while planning.
pub struct PlanContext<'a> {
    pub dump: &'a QKDump,
    pub config: &'a DopeConfig,
    pub schedule: &'a FrequencySchedule,
    pub selected: &'a [HeadRef],
}

pub trait Denoiser: Send + Sync {
    fn name(&self) -> &'static str;

    /// One action per selected head, in selection order.
    fn plan(&self, ctx: &PlanContext<'_>) -> Result<Vec<HeadAction>>;

    /// Denoises one post-rope tensor of a selected head.
    fn apply(&self, x: &HeadTensor, action: &HeadAction) -> Result<HeadTensor>;
}

pub type DenoiserFactory = fn(&DopeConfig) -> Box<dyn Denoiser>;

pub struct DenoiserRegistry(Registry<DenoiserFactory>);

impl DenoiserRegistry {
    pub fn empty() -> Self {
        Self(Registry::new())
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register("by-parts", |_| Box::new(ByParts));
        reg.register("by-all", |_| Box::new(ByAll));
        reg.register("by-gaussian", |_| Box::new(ByGaussian));
        reg
    }

    pub fn register(&mut self, name: &str, factory: DenoiserFactory) -> &mut Self {
        self.0.register(name, factory);
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.names()
    }

    pub fn create(&self, config: &DopeConfig) -> Result<Box<dyn Denoiser>> {
        let factory = self
            .0
            .get(&config.variant)
            .ok_or_else(|| Error::Config(format!("unknown variant `{}`", config.variant)))?;
        Ok(factory(config))
    }
}

impl Default for DenoiserRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
