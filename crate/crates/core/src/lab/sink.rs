use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::attention::{causal_attention, sink_score};
use crate::dope::{dope_by_parts, HeadRef};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::noise;
use crate::qkdp::{DType, DumpMeta, QKDump};
use crate::rope::{
    apply_rope, contiguous_positions, FrequencySchedule, HeadTensor, Indicator, ScheduleRecipe, Stage, DEFAULT_BASE,
};

/// Keeps synthetic activations off the streams used for replacement noise.
const ACTIVATION_SALT: u64 = 0x51_4b_44_50_5f_61_63_74;

/// A head whose queries and keys are isotropic except for one low-frequency
/// band that is made coherent so that, after rotation, every query favours the
/// first key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkScenarioSpec {
    pub n: usize,
    pub d_h: usize,
    pub base: f64,
    /// Band to inject; defaults to the fastest band with `ω·(n-1) <= π`.
    pub band: Option<usize>,
    /// Peak score of the injected band in units of `1/ω²`.
    pub sharpness: f64,
    pub seed: u64,
}

impl Default for SinkScenarioSpec {
    fn default() -> Self {
        Self { n: 256, d_h: 64, base: DEFAULT_BASE, band: None, sharpness: 4.0, seed: 42 }
    }
}

impl SinkScenarioSpec {
    pub fn schedule(&self) -> Result<FrequencySchedule> {
        ScheduleRecipe::Vanilla { base: self.base }.build(self.d_h)
    }

    pub fn resolve_band(&self, schedule: &FrequencySchedule) -> Result<usize> {
        if self.n < 2 {
            return Err(Error::Config("sink scenario needs n >= 2".into()));
        }
        let limit = PI / (self.n - 1) as f64;
        match self.band {
            Some(f) if f >= schedule.bands() => Err(Error::BandIndex { band: f, bands: schedule.bands() }),
            Some(f) if schedule.omegas[f] == 0.0 || schedule.omegas[f] > limit => Err(Error::Config(format!(
                "band {f} has ω = {} outside (0, π/(n-1)]",
                schedule.omegas[f]
            ))),
            Some(f) => Ok(f),
            None => schedule
                .omegas
                .iter()
                .position(|&w| w > 0.0 && w <= limit)
                .ok_or_else(|| Error::Config(format!("no band is slow enough for n = {}", self.n))),
        }
    }

    /// Overwrites `band` of raw query/key rows with the coherent pattern.
    fn inject(&self, omega: f64, band: usize, q: &mut HeadTensor, k: &mut HeadTensor) {
        let peak = self.sharpness / (omega * omega);
        let amp = (peak * (self.d_h as f64).sqrt()).sqrt();
        let phi = -omega * (self.n - 1) as f64;
        let (a, b) = q.pairing.band_columns(band, self.d_h);
        for i in 0..self.n {
            let qr = q.values.row_mut(i);
            qr[a] = amp * phi.cos();
            qr[b] = amp * phi.sin();
            let kr = k.values.row_mut(i);
            kr[a] = amp;
            kr[b] = 0.0;
        }
    }
}

fn isotropic(seed: u64, layer: usize, head: usize, indicator: Indicator, n: usize, d_h: usize) -> Result<HeadTensor> {
    let values = noise::gaussian(seed ^ ACTIVATION_SALT, layer, head, indicator, 1.0, n * d_h);
    HeadTensor::new(Matrix::new(n, d_h, values)?, Stage::PreNtk, indicator, layer, head)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkScenario {
    pub spec: SinkScenarioSpec,
    pub band: usize,
    pub schedule: FrequencySchedule,
    /// Rotated isotropic queries and keys.
    pub baseline: (HeadTensor, HeadTensor),
    /// Rotated queries and keys with the coherent band.
    pub injected: (HeadTensor, HeadTensor),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkScores {
    pub baseline: f64,
    pub injected: f64,
    pub masked: f64,
}

impl SinkScenario {
    /// The injected pair with the coherent band zeroed in both tensors.
    pub fn masked(&self) -> Result<(HeadTensor, HeadTensor)> {
        let mut mask = vec![true; self.schedule.bands()];
        mask[self.band] = false;
        Ok((dope_by_parts(&self.injected.0, &mask)?, dope_by_parts(&self.injected.1, &mask)?))
    }

    /// Sink score on column 0 before injection, after it, and after masking.
    pub fn scores(&self) -> Result<SinkScores> {
        let score = |(q, k): &(HeadTensor, HeadTensor)| sink_score(&causal_attention(q, k)?, &[0]);
        Ok(SinkScores {
            baseline: score(&self.baseline)?,
            injected: score(&self.injected)?,
            masked: score(&self.masked()?)?,
        })
    }
}

pub fn sink_scenario(spec: &SinkScenarioSpec) -> Result<SinkScenario> {
    let schedule = spec.schedule()?;
    let band = spec.resolve_band(&schedule)?;
    if !(spec.sharpness > 0.0 && spec.sharpness.is_finite()) {
        return Err(Error::Config(format!("sharpness must be finite and > 0, got {}", spec.sharpness)));
    }
    let positions = contiguous_positions(0, spec.n);
    let q = isotropic(spec.seed, 0, 0, Indicator::Query, spec.n, spec.d_h)?;
    let k = isotropic(spec.seed, 0, 0, Indicator::Key, spec.n, spec.d_h)?;
    let (mut qi, mut ki) = (q.clone(), k.clone());
    spec.inject(schedule.omegas[band], band, &mut qi, &mut ki);
    let rot = |x: &HeadTensor| apply_rope(x, &schedule, &positions);
    Ok(SinkScenario {
        spec: *spec,
        band,
        baseline: (rot(&q)?, rot(&k)?),
        injected: (rot(&qi)?, rot(&ki)?),
        schedule,
    })
}

/// Layout of a synthetic multi-head dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub model_id: String,
    pub layers: usize,
    pub heads: usize,
    /// Shared sequence, band and seed settings.
    pub scenario: SinkScenarioSpec,
    /// Heads that receive the coherent band.
    pub sink_heads: Vec<HeadRef>,
    pub dtype: DType,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            model_id: "synthetic".into(),
            layers: 2,
            heads: 4,
            scenario: SinkScenarioSpec::default(),
            sink_heads: vec![HeadRef { layer: 0, head: 1 }],
            dtype: DType::F64,
        }
    }
}

/// Builds a dump with all three stages. Without learned projections the
/// frequency rescaling leaves the unrotated activations unchanged, so the
/// `pre_ntk` and `post_ntk` grids hold the same values.
pub fn synth_dump(spec: &SynthSpec) -> Result<QKDump> {
    let s = &spec.scenario;
    let recipe = ScheduleRecipe::Vanilla { base: s.base };
    let schedule = recipe.build(s.d_h)?;
    let band = s.resolve_band(&schedule)?;
    for h in &spec.sink_heads {
        if h.layer >= spec.layers || h.head >= spec.heads {
            return Err(Error::Config(format!("sink head ({}, {}) outside the grid", h.layer, h.head)));
        }
    }
    let mut meta = DumpMeta::new(spec.model_id.clone(), recipe);
    meta.provenance = Some(serde_json::json!({ "synthetic": spec }));
    let mut dump = QKDump::new(meta, spec.layers, spec.heads, s.n, s.d_h, spec.dtype)?;
    let positions = dump.positions();

    let mut raw = [Vec::new(), Vec::new()];
    for layer in 0..spec.layers {
        for head in 0..spec.heads {
            let mut q = isotropic(s.seed, layer, head, Indicator::Query, s.n, s.d_h)?;
            let mut k = isotropic(s.seed, layer, head, Indicator::Key, s.n, s.d_h)?;
            if spec.sink_heads.contains(&HeadRef { layer, head }) {
                s.inject(schedule.omegas[band], band, &mut q, &mut k);
            }
            raw[0].push(q);
            raw[1].push(k);
        }
    }
    for (grid, indicator) in raw.into_iter().zip(Indicator::ALL) {
        let rotated = grid
            .iter()
            .map(|t| apply_rope(t, &schedule, &positions))
            .collect::<Result<Vec<_>>>()?;
        dump.insert_stage(Stage::PreNtk, indicator, grid.clone())?;
        dump.insert_stage(Stage::PostNtk, indicator, grid)?;
        dump.insert_stage(Stage::PostRope, indicator, rotated)?;
    }
    Ok(dump)
}
