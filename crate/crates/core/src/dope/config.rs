use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rope::{Indicator, Stage};
use crate::spectral::EntropyType;

use super::DenoiserRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SortOrder {
    /// Denoise the lowest-scored heads.
    #[serde(rename = "ASC", alias = "asc")]
    Asc,
    /// Denoise the highest-scored heads.
    #[serde(rename = "DESC", alias = "desc")]
    Desc,
}

impl std::str::FromStr for SortOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ASC" => Ok(SortOrder::Asc),
            "DESC" => Ok(SortOrder::Desc),
            other => Err(Error::Config(format!("unknown sort order `{other}`"))),
        }
    }
}

/// Standard deviation of the replacement noise for by-gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSigma {
    /// Pooled sample standard deviation of the retained heads.
    Matched,
    Fixed(f64),
}

impl Default for NoiseSigma {
    fn default() -> Self {
        NoiseSigma::Fixed(1.0)
    }
}

/// Which side of the `2π/L` threshold by-parts keeps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandPolarity {
    /// Keep bands with `ω_f <= 2π/L`.
    #[default]
    KeepBelow,
    /// Keep bands with `ω_f > 2π/L`.
    KeepAbove,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DopeConfig {
    /// Registered denoiser name: `by-parts`, `by-all` or `by-gaussian`.
    pub variant: String,
    pub indicator: Indicator,
    pub entropy_type: EntropyType,
    pub num_heads: usize,
    pub criterion_stage: Stage,
    pub sort_order: SortOrder,
    pub training_length: u64,
    #[serde(default)]
    pub noise_sigma: NoiseSigma,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub band_polarity: BandPolarity,
}

impl DopeConfig {
    /// Parses and validates against the builtin denoisers.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: DopeConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate(&DenoiserRegistry::builtin())?;
        Ok(cfg)
    }

    pub fn validate(&self, registry: &DenoiserRegistry) -> Result<()> {
        if self.num_heads == 0 {
            return Err(Error::Config("num_heads must be >= 1".into()));
        }
        if self.training_length == 0 {
            return Err(Error::Config("training_length must be >= 1".into()));
        }
        if !registry.contains(&self.variant) {
            let known: Vec<&str> = registry.names().collect();
            return Err(Error::Config(format!("unknown variant `{}` (known: {known:?})", self.variant)));
        }
        if let NoiseSigma::Fixed(s) = self.noise_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("fixed noise sigma must be finite and >= 0, got {s}")));
            }
        }
        Ok(())
    }

    /// Named configurations mirroring rows of the published experiment grid.
    pub fn preset(name: &str) -> Option<Self> {
        let base = |variant: &str, indicator, entropy_type, num_heads, criterion_stage, sort_order| DopeConfig {
            variant: variant.to_string(),
            indicator,
            entropy_type,
            num_heads,
            criterion_stage,
            sort_order,
            training_length: 8192,
            noise_sigma: NoiseSigma::Fixed(1.0),
            seed: 42,
            band_polarity: BandPolarity::KeepBelow,
        };
        Some(match name {
            "table1-best-gaussian" => base(
                "by-gaussian",
                Indicator::Key,
                EntropyType::Trunc(32),
                3,
                Stage::PostNtk,
                SortOrder::Asc,
            ),
            "table1-best-by-all" => base(
                "by-all",
                Indicator::Key,
                EntropyType::Trunc(8),
                1,
                Stage::PostNtk,
                SortOrder::Desc,
            ),
            "table1-best-by-parts" => base(
                "by-parts",
                Indicator::Query,
                EntropyType::Trunc(32),
                25,
                Stage::PostNtk,
                SortOrder::Asc,
            ),
            _ => return None,
        })
    }

    pub const PRESETS: [&'static str; 3] = ["table1-best-gaussian", "table1-best-by-all", "table1-best-by-parts"];
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROW: &str = r#"{"variant":"by-all","indicator":"key","entropy_type":"trunc:8","num_heads":1,
        "criterion_stage":"post_ntk","sort_order":"DESC","training_length":8192}"#;

    #[test]
    fn parses_with_defaults() {
        let c = DopeConfig::from_json(ROW).unwrap();
        assert_eq!(c.entropy_type, EntropyType::Trunc(8));
        assert_eq!(c.sort_order, SortOrder::Desc);
        assert_eq!(c.noise_sigma, NoiseSigma::Fixed(1.0));
        assert_eq!(c.seed, 42);
        assert_eq!(c.band_polarity, BandPolarity::KeepBelow);
    }

    #[test]
    fn zero_heads_rejected() {
        let text = ROW.replace("\"num_heads\":1", "\"num_heads\":0");
        assert!(matches!(DopeConfig::from_json(&text), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_variant_and_fields_rejected() {
        assert!(DopeConfig::from_json(&ROW.replace("by-all", "by-magic")).is_err());
        assert!(DopeConfig::from_json(&ROW.replace("\"num_heads\"", "\"heads\":2,\"num_heads\"")).is_err());
        assert!(DopeConfig::from_json(&ROW.replace("trunc:8", "trunc:7")).is_err());
    }

    #[test]
    fn noise_sigma_forms() {
        let m: NoiseSigma = serde_json::from_str("\"matched\"").unwrap();
        assert_eq!(m, NoiseSigma::Matched);
        let f: NoiseSigma = serde_json::from_str("{\"fixed\":0.5}").unwrap();
        assert_eq!(f, NoiseSigma::Fixed(0.5));
    }

    #[test]
    fn presets_validate() {
        for name in DopeConfig::PRESETS {
            DopeConfig::preset(name).unwrap().validate(&DenoiserRegistry::builtin()).unwrap();
        }
        let best = DopeConfig::preset("table1-best-gaussian").unwrap();
        assert_eq!(
            (best.indicator, best.entropy_type, best.num_heads, best.criterion_stage, best.sort_order),
            (Indicator::Key, EntropyType::Trunc(32), 3, Stage::PostNtk, SortOrder::Asc)
        );
    }
}
