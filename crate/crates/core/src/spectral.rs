//! Band projection, band-wise Gram matrices, matrix entropy and truncated
//! effective rank, plus the head scorers built on them.
//!
//! Full matrix entropy is computed band by band (each band Gram is 2×2) and
//! averaged over the head. Truncated effective rank works on the head-level
//! `d_h × d_h` Gram spectrum, where truncation levels up to 64 are meaningful.
//! All logarithms are natural, so a single band's entropy lies in `[0, ln 2]`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigvals, Matrix, Spectrum};
use crate::registry::Registry;
use crate::rope::{HeadTensor, Indicator, Stage};

/// Truncation levels accepted for `trunc:R`.
pub const TRUNCATION_LEVELS: [usize; 6] = [1, 4, 8, 16, 32, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandLocation {
    pub layer: usize,
    pub head: usize,
    pub band: usize,
}

/// 2×2 Gram matrix of one rotary band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandGram {
    pub location: Option<BandLocation>,
    pub sigma: Matrix,
    pub spectrum: Spectrum,
    pub trace: f64,
}

/// Columns of band `band` as an `n × 2` matrix.
pub fn band_project(x: &HeadTensor, band: usize) -> Result<Matrix> {
    if band >= x.bands() {
        return Err(Error::BandIndex { band, bands: x.bands() });
    }
    let (a, b) = x.pairing.band_columns(band, x.d_h());
    let mut out = Matrix::zeros(x.n(), 2);
    for i in 0..x.n() {
        let row = x.values.row(i);
        out[(i, 0)] = row[a];
        out[(i, 1)] = row[b];
    }
    Ok(out)
}

pub fn band_gram(projected: &Matrix) -> Result<BandGram> {
    if projected.cols() != 2 || projected.rows() == 0 {
        return Err(Error::Dimension(format!(
            "band Gram needs an n x 2 matrix with n >= 1, got {}x{}",
            projected.rows(),
            projected.cols()
        )));
    }
    let sigma = projected.gram();
    let spectrum = sym_eigvals(&sigma)?;
    let trace = sigma.trace();
    Ok(BandGram { location: None, sigma, spectrum, trace })
}

pub fn band_gram_of(x: &HeadTensor, band: usize) -> Result<BandGram> {
    let mut g = band_gram(&band_project(x, band)?)?;
    g.location = Some(BandLocation { layer: x.layer, head: x.head, band });
    Ok(g)
}

/// Shannon entropy (nats) of `values` after normalizing them to sum to one.
/// `None` when the values sum to zero.
pub fn normalized_entropy(values: &[f64]) -> Option<f64> {
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    Some(
        values
            .iter()
            .map(|v| v / total)
            .filter(|p| *p > 0.0)
            .map(|p| -p * p.ln())
            .sum(),
    )
}

/// `-tr(Σ̃ log Σ̃)` with `Σ̃ = Σ / tr Σ`.
pub fn matrix_entropy(g: &BandGram) -> Result<f64> {
    normalized_entropy(&g.spectrum.values)
        .ok_or_else(|| Error::Degenerate("band Gram has zero trace".into()))
}

/// Mean of the per-band entropies of one head.
pub fn head_entropy(band_entropies: &[f64], d_h: usize) -> Result<f64> {
    if band_entropies.len() != d_h / 2 || band_entropies.is_empty() {
        return Err(Error::Dimension(format!(
            "expected {} band entropies, got {}",
            d_h / 2,
            band_entropies.len()
        )));
    }
    Ok(band_entropies.iter().sum::<f64>() / band_entropies.len() as f64)
}

/// `exp` of the entropy of the top-`r` values renormalized to sum to one.
/// Spectra shorter than `r` behave as if zero-padded.
pub fn truncated_effective_rank(spec: &Spectrum, r: usize) -> Result<f64> {
    if r == 0 {
        return Err(Error::Config("truncation level must be >= 1".into()));
    }
    let top = &spec.values[..spec.len().min(r)];
    let h = normalized_entropy(top)
        .ok_or_else(|| Error::Degenerate("spectrum has no positive mass in its top values".into()))?;
    Ok(h.exp())
}

/// Eigenvalues of the head-level Gram `xᵀx`, descending.
pub fn head_spectrum(x: &HeadTensor) -> Result<Spectrum> {
    if x.n() == 0 {
        return Err(Error::Dimension("head tensor has no positions".into()));
    }
    sym_eigvals(&x.values.gram())
}

/// Which entropy measure drives head selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EntropyType {
    Full,
    Trunc(usize),
}

impl EntropyType {
    pub fn family(&self) -> &'static str {
        match self {
            EntropyType::Full => "full",
            EntropyType::Trunc(_) => "trunc",
        }
    }
}

impl fmt::Display for EntropyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntropyType::Full => f.write_str("full"),
            EntropyType::Trunc(r) => write!(f, "trunc:{r}"),
        }
    }
}

impl FromStr for EntropyType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "full" || lower == "vanilla" {
            return Ok(EntropyType::Full);
        }
        let level = lower
            .strip_prefix("trunc:")
            .or_else(|| lower.strip_prefix("trunc-"))
            .ok_or_else(|| Error::Config(format!("unknown entropy type `{s}` (want full or trunc:R)")))?;
        let r: usize = level
            .parse()
            .map_err(|_| Error::Config(format!("bad truncation level in `{s}`")))?;
        if !TRUNCATION_LEVELS.contains(&r) {
            return Err(Error::Config(format!(
                "truncation level {r} not in {TRUNCATION_LEVELS:?}"
            )));
        }
        Ok(EntropyType::Trunc(r))
    }
}

impl TryFrom<String> for EntropyType {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EntropyType> for String {
    fn from(e: EntropyType) -> String {
        e.to_string()
    }
}

/// Scores and diagnostics for one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadScore {
    pub layer: usize,
    pub head: usize,
    /// Selection score for the report's entropy type.
    pub score: f64,
    pub band_entropies: Vec<f64>,
    pub head_entropy: f64,
    pub effective_rank: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub truncated_rank: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spectral_norm: Option<f64>,
    /// Bands with an all-zero projection; their entropy is reported as 0.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub degenerate_bands: Vec<usize>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub dead_head: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub entropy_type: EntropyType,
    pub score_stage: Stage,
    pub indicator: Indicator,
    pub heads: Vec<HeadScore>,
}

impl EntropyReport {
    pub fn scores(&self) -> Vec<f64> {
        self.heads.iter().map(|h| h.score).collect()
    }

    /// Hex SHA-256 of the report's JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("report serializes");
        hex_digest(&bytes)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Band-level entropy summary shared by every scorer.
fn band_summary(x: &HeadTensor) -> Result<HeadScore> {
    let mut band_entropies = Vec::with_capacity(x.bands());
    let mut degenerate_bands = Vec::new();
    for f in 0..x.bands() {
        let g = band_gram_of(x, f)?;
        match matrix_entropy(&g) {
            Ok(h) => band_entropies.push(h),
            Err(Error::Degenerate(_)) => {
                degenerate_bands.push(f);
                band_entropies.push(0.0);
            }
            Err(e) => return Err(e),
        }
    }
    let head_entropy = head_entropy(&band_entropies, x.d_h())?;
    Ok(HeadScore {
        layer: x.layer,
        head: x.head,
        score: head_entropy,
        effective_rank: head_entropy.exp(),
        head_entropy,
        band_entropies,
        truncated_rank: None,
        spectral_norm: None,
        dead_head: degenerate_bands.len() == x.bands(),
        degenerate_bands,
    })
}

/// A head-ranking strategy.
pub trait HeadScorer: Send + Sync {
    fn entropy_type(&self) -> EntropyType;
    fn score(&self, x: &HeadTensor) -> Result<HeadScore>;
}

/// Mean band-wise matrix entropy `𝓗_h`.
pub struct MatrixEntropyScorer;

impl HeadScorer for MatrixEntropyScorer {
    fn entropy_type(&self) -> EntropyType {
        EntropyType::Full
    }

    fn score(&self, x: &HeadTensor) -> Result<HeadScore> {
        band_summary(x)
    }
}

/// Truncated effective rank `ρ_h^r` of the head Gram spectrum, `r >= 2`.
pub struct TruncatedRankScorer {
    pub r: usize,
}

impl HeadScorer for TruncatedRankScorer {
    fn entropy_type(&self) -> EntropyType {
        EntropyType::Trunc(self.r)
    }

    fn score(&self, x: &HeadTensor) -> Result<HeadScore> {
        let mut s = band_summary(x)?;
        let spec = head_spectrum(x)?;
        let rho = match truncated_effective_rank(&spec, self.r) {
            Ok(rho) => rho,
            // All-zero head: no spectral mass, treated like a rank-one spike.
            Err(Error::Degenerate(_)) => {
                s.dead_head = true;
                1.0
            }
            Err(e) => return Err(e),
        };
        s.truncated_rank = Some(rho);
        s.spectral_norm = Some(spec.largest());
        s.score = rho;
        Ok(s)
    }
}

/// Trunc-1: the raw truncated rank is identically 1, so heads are ranked by
/// the largest eigenvalue of the head Gram instead.
pub struct SpectralNormScorer;

impl HeadScorer for SpectralNormScorer {
    fn entropy_type(&self) -> EntropyType {
        EntropyType::Trunc(1)
    }

    fn score(&self, x: &HeadTensor) -> Result<HeadScore> {
        let mut s = band_summary(x)?;
        let spec = head_spectrum(x)?;
        s.truncated_rank = Some(1.0);
        s.spectral_norm = Some(spec.largest());
        s.score = spec.largest();
        Ok(s)
    }
}

pub type ScorerFactory = fn(EntropyType) -> Result<Box<dyn HeadScorer>>;

/// Scorers keyed by entropy family (`full`, `trunc`).
pub struct ScorerRegistry(Registry<ScorerFactory>);

impl ScorerRegistry {
    pub fn empty() -> Self {
        Self(Registry::new())
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register("full", |_| Ok(Box::new(MatrixEntropyScorer)));
        reg.register("trunc", |e| match e {
            EntropyType::Trunc(1) => Ok(Box::new(SpectralNormScorer)),
            EntropyType::Trunc(r) => Ok(Box::new(TruncatedRankScorer { r })),
            EntropyType::Full => Err(Error::Config("trunc scorer needs a truncation level".into())),
        });
        reg
    }

    pub fn register(&mut self, family: &str, factory: ScorerFactory) -> &mut Self {
        self.0.register(family, factory);
        self
    }

    pub fn resolve(&self, entropy: EntropyType) -> Result<Box<dyn HeadScorer>> {
        let factory = self
            .0
            .get(entropy.family())
            .ok_or_else(|| Error::Config(format!("no scorer registered for `{}`", entropy.family())))?;
        factory(entropy)
    }
}

impl Default for ScorerRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

pub fn score_heads(tensors: &[HeadTensor], entropy: EntropyType) -> Result<EntropyReport> {
    score_heads_with(&ScorerRegistry::builtin(), tensors, entropy)
}

/// Scores every tensor in parallel; the report keeps the input order.
pub fn score_heads_with(
    registry: &ScorerRegistry,
    tensors: &[HeadTensor],
    entropy: EntropyType,
) -> Result<EntropyReport> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::Config("no head tensors to score".into()))?;
    if let Some(odd) = tensors
        .iter()
        .find(|t| t.stage != first.stage || t.indicator != first.indicator)
    {
        return Err(Error::Provenance(format!(
            "mixed provenance: {}/{} alongside {}/{}",
            first.stage, first.indicator, odd.stage, odd.indicator
        )));
    }
    let scorer = registry.resolve(entropy)?;
    let heads = tensors
        .par_iter()
        .map(|t| scorer.score(t))
        .collect::<Result<Vec<_>>>()?;
    Ok(EntropyReport { entropy_type: entropy, score_stage: first.stage, indicator: first.indicator, heads })
}
