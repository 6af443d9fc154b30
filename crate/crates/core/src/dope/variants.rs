use std::collections::BTreeSet;

use super::{
    band_mask_with, dope_by_all, dope_by_gaussian, dope_by_parts, pooled_variance, Denoiser, HeadAction, HeadRef,
    NoiseParams, NoiseSigma, PlanContext,
};
use crate::error::{Error, Result};
use crate::rope::{HeadTensor, Indicator, Stage};

/// Masks frequency bands of the selected heads.
pub struct ByParts;

impl Denoiser for ByParts {
    fn name(&self) -> &'static str {
        "by-parts"
    }

    fn plan(&self, ctx: &PlanContext<'_>) -> Result<Vec<HeadAction>> {
        let mask = band_mask_with(ctx.schedule, ctx.config.training_length, ctx.config.band_polarity);
        Ok(ctx
            .selected
            .iter()
            .map(|h| HeadAction { band_mask: Some(mask.clone()), ..HeadAction::bare(*h) })
            .collect())
    }

    fn apply(&self, x: &HeadTensor, action: &HeadAction) -> Result<HeadTensor> {
        let mask = action
            .band_mask
            .as_deref()
            .ok_or_else(|| Error::Config("by-parts action without a band mask".into()))?;
        dope_by_parts(x, mask)
    }
}

/// Zeroes the selected heads.
pub struct ByAll;

impl Denoiser for ByAll {
    fn name(&self) -> &'static str {
        "by-all"
    }

    fn plan(&self, ctx: &PlanContext<'_>) -> Result<Vec<HeadAction>> {
        Ok(ctx.selected.iter().map(|h| HeadAction::bare(*h)).collect())
    }

    fn apply(&self, x: &HeadTensor, _action: &HeadAction) -> Result<HeadTensor> {
        dope_by_all(x, false)
    }
}

/// Replaces the selected heads with Gaussian noise.
pub struct ByGaussian;

impl ByGaussian {
    fn matched_sigma(ctx: &PlanContext<'_>, indicator: Indicator) -> Result<f64> {
        let chosen: BTreeSet<HeadRef> = ctx.selected.iter().copied().collect();
        let grid = ctx.dump.require_stage(Stage::PostRope, indicator)?;
        let retained = grid
            .iter()
            .filter(|t| !chosen.contains(&HeadRef { layer: t.layer, head: t.head }));
        pooled_variance(retained)
            .map(f64::sqrt)
            .ok_or_else(|| Error::Config("matched noise needs at least one retained head".into()))
    }
}

impl Denoiser for ByGaussian {
    fn name(&self) -> &'static str {
        "by-gaussian"
    }

    fn plan(&self, ctx: &PlanContext<'_>) -> Result<Vec<HeadAction>> {
        let (sigma_query, sigma_key) = match ctx.config.noise_sigma {
            NoiseSigma::Fixed(s) => (s, s),
            NoiseSigma::Matched => (
                Self::matched_sigma(ctx, Indicator::Query)?,
                Self::matched_sigma(ctx, Indicator::Key)?,
            ),
        };
        let noise = NoiseParams { sigma_query, sigma_key, seed: ctx.config.seed };
        Ok(ctx
            .selected
            .iter()
            .map(|h| HeadAction { noise: Some(noise), ..HeadAction::bare(*h) })
            .collect())
    }

    fn apply(&self, x: &HeadTensor, action: &HeadAction) -> Result<HeadTensor> {
        let noise = action
            .noise
            .ok_or_else(|| Error::Config("by-gaussian action without noise parameters".into()))?;
        let sigma = match x.indicator {
            Indicator::Query => noise.sigma_query,
            Indicator::Key => noise.sigma_key,
        };
        dope_by_gaussian(x, false, sigma, noise.seed)
    }
}
