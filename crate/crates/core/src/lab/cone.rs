use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// One rotary band observed over `n` positions: row `j` is
/// `β_j · R(ω·j + δ_j) · k` with `β_j ~ U[beta_min, beta_max]` and
/// `δ_j ~ U[-gamma, gamma]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeEnsembleSpec {
    pub n: usize,
    pub omega: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub gamma: f64,
    pub direction: [f64; 2],
    pub seed: u64,
}

impl ConeEnsembleSpec {
    pub fn coherent(n: usize, beta: f64, direction: [f64; 2]) -> Self {
        Self { n, omega: 0.0, beta_min: beta, beta_max: beta, gamma: 0.0, direction, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("cone ensemble needs n >= 1".into()));
        }
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta_max && self.beta_max.is_finite()) {
            return Err(Error::Config(format!(
                "amplitudes need 0 < beta_min <= beta_max, got [{}, {}]",
                self.beta_min, self.beta_max
            )));
        }
        if !(0.0..FRAC_PI_2).contains(&self.gamma) {
            return Err(Error::Config(format!("cone half-angle must lie in [0, π/2), got {}", self.gamma)));
        }
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return Err(Error::Config(format!("band frequency must be finite and >= 0, got {}", self.omega)));
        }
        let norm = self.direction_norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Config("cone direction must be a nonzero finite 2-vector".into()));
        }
        Ok(())
    }

    pub fn direction_norm(&self) -> f64 {
        self.direction[0].hypot(self.direction[1])
    }

    /// Half-angle of the cone that actually contains every row once the
    /// rotary drift `ω·(n-1)` is included.
    pub fn effective_half_angle(&self) -> f64 {
        self.gamma + 0.5 * self.omega * (self.n - 1) as f64
    }

    /// Unit axis of the effective cone.
    pub fn mean_direction(&self) -> [f64; 2] {
        let r = self.direction_norm();
        let k = [self.direction[0] / r, self.direction[1] / r];
        rotate(k, 0.5 * self.omega * (self.n - 1) as f64)
    }
}

pub(crate) fn rotate(v: [f64; 2], theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

pub fn generate_cone_keys(spec: &ConeEnsembleSpec) -> Result<Matrix> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(2 * spec.n);
    for j in 0..spec.n {
        let beta = if spec.beta_max > spec.beta_min {
            rng.random_range(spec.beta_min..=spec.beta_max)
        } else {
            spec.beta_min
        };
        let delta = if spec.gamma > 0.0 { rng.random_range(-spec.gamma..=spec.gamma) } else { 0.0 };
        let v = rotate(spec.direction, spec.omega * j as f64 + delta);
        data.push(beta * v[0]);
        data.push(beta * v[1]);
    }
    Matrix::new(spec.n, 2, data)
}
