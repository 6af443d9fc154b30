use serde::{Deserialize, Serialize};

use super::cone::{generate_cone_keys, ConeEnsembleSpec};
use crate::error::{Error, Result};
use crate::spectral::band_gram;

/// Ordinary least squares `y ≈ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl LinearFit {
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::Dimension(format!("fit needs >= 2 paired points, got {} and {}", x.len(), y.len())));
        }
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
        if sxx == 0.0 {
            return Err(Error::Degenerate("fit abscissae are all equal".into()));
        }
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
        let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
        Ok(Self { slope, intercept, r_squared })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub sigma1: f64,
    /// `(λ_max - λ_min)/N`: the per-position weight of the coherent direction.
    pub coherence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub template: ConeEnsembleSpec,
    pub rows: Vec<ScalingRow>,
    /// `λ_max` against `N`.
    pub lambda_fit: LinearFit,
    /// `σ₁` against `√N`.
    pub sigma_fit: LinearFit,
}

/// Regenerates `template` at each `N` and measures the band Gram spectrum.
pub fn scaling_study(template: &ConeEnsembleSpec, ns: &[usize]) -> Result<ScalingStudy> {
    let rows = ns
        .iter()
        .map(|&n| {
            let keys = generate_cone_keys(&ConeEnsembleSpec { n, ..*template })?;
            let g = band_gram(&keys)?;
            let (hi, lo) = (g.spectrum.values[0], g.spectrum.values[1]);
            Ok(ScalingRow { n, lambda_max: hi, lambda_min: lo, sigma1: hi.sqrt(), coherence: (hi - lo) / n as f64 })
        })
        .collect::<Result<Vec<_>>>()?;
    let n: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let root_n: Vec<f64> = n.iter().map(|v| v.sqrt()).collect();
    let lambda: Vec<f64> = rows.iter().map(|r| r.lambda_max).collect();
    let sigma: Vec<f64> = rows.iter().map(|r| r.sigma1).collect();
    Ok(ScalingStudy {
        template: *template,
        lambda_fit: LinearFit::fit(&n, &lambda)?,
        sigma_fit: LinearFit::fit(&root_n, &sigma)?,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let f = LinearFit::fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
        assert!(LinearFit::fit(&[1.0], &[1.0]).is_err());
        assert!(LinearFit::fit(&[2.0, 2.0], &[1.0, 3.0]).is_err());
    }

    #[test]
    fn coherent_ratio_constant() {
        let study = scaling_study(&ConeEnsembleSpec::coherent(1, 1.5, [0.6, 0.8]), &[256, 1024, 4096]).unwrap();
        let base = study.rows[0].lambda_max / 256.0;
        for r in &study.rows {
            assert!((r.lambda_max / r.n as f64 - base).abs() < 0.01 * base);
            assert!((r.coherence - 2.25).abs() < 1e-9);
        }
        assert!(study.lambda_fit.r_squared > 0.999_999);
    }

    #[test]
    fn isotropic_contrast_loses_coherence() {
        let ns = [256, 1024, 4096, 16384];
        let cone = ConeEnsembleSpec {
            n: 1,
            omega: 0.0,
            beta_min: 0.5,
            beta_max: 2.0,
            gamma: std::f64::consts::FRAC_PI_6,
            direction: [1.0, 0.0],
            seed: 5,
        };
        let iso = ConeEnsembleSpec { omega: 1.0, gamma: 0.0, ..cone };
        let c = scaling_study(&cone, &ns).unwrap();
        let i = scaling_study(&iso, &ns).unwrap();
        assert!(c.lambda_fit.r_squared >= 0.99 && c.sigma_fit.r_squared >= 0.99);
        let (c_last, i_first, i_last) = (c.rows[3].coherence, i.rows[0].coherence, i.rows[3].coherence);
        assert!(c_last > 0.5 * c.rows[0].coherence);
        assert!(i_last < 0.25 * i_first.max(1e-12) || i_last < 1e-3 * c_last);
    }
}
