use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cone::{generate_cone_keys, rotate, ConeEnsembleSpec};
use crate::error::{Error, Result};
use crate::linalg::{eig2_symmetric, top_singular_value, top_singular_value_of_product, Matrix};

/// Relative slack allowed on every inequality.
pub const WITNESS_REL_TOL: f64 = 1e-9;
/// Extra absolute slack for the angle containment check, in radians.
const ANGLE_ABS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundId {
    /// `λ_max(Σ_K) >= ‖S‖²/N`
    Rayleigh,
    /// `‖S‖ >= N·β_min·‖k‖·cos γ_K`
    SumNorm,
    /// `σ₁(K') >= β_min·‖k‖·√N·cos γ_K`
    Sigma1Key,
    /// `σ₁(Q') >= α_min·‖q‖·√M·cos γ_Q`
    Sigma1Query,
    /// `σ₁(A) >= σ₁(Q')·σ₁(K')·cos ψ / √d`
    Product,
    /// `max|A| >= α_min·β_min·‖q‖·‖k‖·cos γ_Q·cos γ_K·cos ψ / √d`
    Entry,
    /// `max|A| >= σ₁(A)/√(MN)`
    Lemma1,
    /// `σ₁(A) >= α_min·β_min·√(MN)·‖q‖·‖k‖·cos γ_Q·cos γ_K·cos ψ / √d`
    Corollary2,
    /// `γ_Q + γ_K >= |ψ - ψ̄|`
    PsiCone,
}

impl BoundId {
    pub const ALL: [BoundId; 9] = [
        BoundId::Rayleigh,
        BoundId::SumNorm,
        BoundId::Sigma1Key,
        BoundId::Sigma1Query,
        BoundId::Product,
        BoundId::Entry,
        BoundId::Lemma1,
        BoundId::Corollary2,
        BoundId::PsiCone,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundId::Rayleigh => "rayleigh",
            BoundId::SumNorm => "sum_norm",
            BoundId::Sigma1Key => "sigma1_key",
            BoundId::Sigma1Query => "sigma1_query",
            BoundId::Product => "product",
            BoundId::Entry => "entry",
            BoundId::Lemma1 => "lemma1",
            BoundId::Corollary2 => "corollary2",
            BoundId::PsiCone => "psi_cone",
        }
    }
}

impl fmt::Display for BoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One evaluated inequality `lhs >= rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundWitness {
    pub bound_id: BoundId,
    /// Key positions.
    pub n: usize,
    /// Query positions.
    pub m: usize,
    pub gamma: f64,
    pub omega: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl BoundWitness {
    fn new(bound_id: BoundId, params: &BoundParams, n: usize, m: usize, lhs: f64, rhs: f64) -> Self {
        let mut slack = WITNESS_REL_TOL * rhs.abs();
        if bound_id == BoundId::PsiCone {
            slack += ANGLE_ABS_TOL;
        }
        Self {
            bound_id,
            n,
            m,
            gamma: params.gamma,
            omega: params.omega,
            lhs,
            rhs,
            satisfied: lhs >= rhs - slack,
        }
    }

    /// `|lhs - rhs| <= 1e-9·|rhs|`.
    pub fn is_tight(&self) -> bool {
        (self.lhs - self.rhs).abs() <= WITNESS_REL_TOL * self.rhs.abs()
    }
}

/// Ensemble constants the inequalities are stated in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub alpha_min: f64,
    pub beta_min: f64,
    pub q_norm: f64,
    pub k_norm: f64,
    /// Half-angles of the cones that contain every query / key row.
    pub gamma_q: f64,
    pub gamma_k: f64,
    /// Unit axes of those cones.
    pub axis_q: [f64; 2],
    pub axis_k: [f64; 2],
    /// Score scale `√d`.
    pub d: usize,
    /// Echo of the nominal jitter half-angle and band frequency.
    pub gamma: f64,
    pub omega: f64,
}

impl BoundParams {
    pub fn for_ensembles(queries: &ConeEnsembleSpec, keys: &ConeEnsembleSpec, d: usize) -> Self {
        Self {
            alpha_min: queries.beta_min,
            beta_min: keys.beta_min,
            q_norm: queries.direction_norm(),
            k_norm: keys.direction_norm(),
            gamma_q: queries.effective_half_angle(),
            gamma_k: keys.effective_half_angle(),
            axis_q: queries.mean_direction(),
            axis_k: keys.mean_direction(),
            d,
            gamma: keys.gamma,
            omega: keys.omega,
        }
    }
}

fn angle_between(a: [f64; 2], b: [f64; 2]) -> f64 {
    let cross = a[0] * b[1] - a[1] * b[0];
    let dot = a[0] * b[0] + a[1] * b[1];
    cross.abs().atan2(dot)
}

struct BandStats {
    lambda_max: f64,
    sum_norm: f64,
    /// Principal direction, oriented toward the cone axis.
    principal: [f64; 2],
}

fn band_stats(x: &Matrix, axis: [f64; 2]) -> Result<BandStats> {
    if x.cols() != 2 || x.rows() == 0 {
        return Err(Error::Dimension(format!("band ensemble must be n×2 with n >= 1, got {:?}", x.shape())));
    }
    let (mut a, mut b, mut d, mut s0, mut s1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.rows() {
        let r = x.row(i);
        a += r[0] * r[0];
        b += r[0] * r[1];
        d += r[1] * r[1];
        s0 += r[0];
        s1 += r[1];
    }
    let (l1, _) = eig2_symmetric(a, b, d);
    let u = [b, l1 - a];
    let v = [l1 - d, b];
    let pick = if u[0].hypot(u[1]) >= v[0].hypot(v[1]) { u } else { v };
    let norm = pick[0].hypot(pick[1]);
    let mut principal = if norm > 0.0 { [pick[0] / norm, pick[1] / norm] } else { axis };
    if principal[0] * axis[0] + principal[1] * axis[1] < 0.0 {
        principal = [-principal[0], -principal[1]];
    }
    Ok(BandStats { lambda_max: l1.max(0.0), sum_norm: s0.hypot(s1), principal })
}

/// Exhaustive `max_ij |q_i · k_j|` over an m×2 and an n×2 band.
fn max_abs_score(queries: &Matrix, keys: &Matrix) -> f64 {
    let k0 = keys.column(0);
    let k1 = keys.column(1);
    let mut best = 0.0f64;
    for i in 0..queries.rows() {
        let q = queries.row(i);
        let (q0, q1) = (q[0], q[1]);
        let row_best = k0
            .iter()
            .zip(&k1)
            .fold(0.0f64, |acc, (a, b)| acc.max((q0 * a + q1 * b).abs()));
        best = best.max(row_best);
    }
    best
}

/// Evaluates every inequality of the coherent-band chain on one query/key
/// band pair, with `A = Q'K'ᵀ/√d`.
pub fn verify_lower_bounds(keys: &Matrix, queries: &Matrix, params: &BoundParams) -> Result<Vec<BoundWitness>> {
    if params.d == 0 {
        return Err(Error::Config("score scale dimension must be >= 1".into()));
    }
    let ks = band_stats(keys, params.axis_k)?;
    let qs = band_stats(queries, params.axis_q)?;
    let (n, m) = (keys.rows(), queries.rows());
    let (nf, mf) = (n as f64, m as f64);
    let sqrt_d = (params.d as f64).sqrt();

    let sigma_k = ks.lambda_max.sqrt();
    let sigma_q = qs.lambda_max.sqrt();
    let sigma_a = top_singular_value_of_product(queries, keys)? / sqrt_d;
    let max_a = max_abs_score(queries, keys) / sqrt_d;

    let cos_psi = ks.principal[0] * qs.principal[0] + ks.principal[1] * qs.principal[1];
    let psi = angle_between(qs.principal, ks.principal);
    let psi_bar = angle_between(params.axis_q, params.axis_k);
    let (cos_gq, cos_gk) = (params.gamma_q.cos(), params.gamma_k.cos());
    let coupling = params.alpha_min * params.beta_min * params.q_norm * params.k_norm * cos_gq * cos_gk * cos_psi / sqrt_d;

    let w = |id, lhs, rhs| BoundWitness::new(id, params, n, m, lhs, rhs);
    Ok(vec![
        w(BoundId::Rayleigh, ks.lambda_max, ks.sum_norm * ks.sum_norm / nf),
        w(BoundId::SumNorm, ks.sum_norm, nf * params.beta_min * params.k_norm * cos_gk),
        w(BoundId::Sigma1Key, sigma_k, params.beta_min * params.k_norm * nf.sqrt() * cos_gk),
        w(BoundId::Sigma1Query, sigma_q, params.alpha_min * params.q_norm * mf.sqrt() * cos_gq),
        w(BoundId::Product, sigma_a, sigma_q * sigma_k * cos_psi / sqrt_d),
        w(BoundId::Entry, max_a, coupling),
        w(BoundId::Lemma1, max_a, sigma_a / (mf * nf).sqrt()),
        w(BoundId::Corollary2, sigma_a, coupling * (mf * nf).sqrt()),
        w(BoundId::PsiCone, params.gamma_q + params.gamma_k, (psi - psi_bar).abs()),
    ])
}

/// `max|m_ij| >= σ₁(m)/√(rows·cols)` on an arbitrary matrix.
pub fn lemma1_check(m: &Matrix) -> Result<BoundWitness> {
    let sigma = top_singular_value(m)?;
    let (r, c) = m.shape();
    let lhs = m.max_abs();
    let rhs = sigma / ((r * c) as f64).sqrt();
    Ok(BoundWitness {
        bound_id: BoundId::Lemma1,
        n: c,
        m: r,
        gamma: 0.0,
        omega: 0.0,
        lhs,
        rhs,
        satisfied: lhs >= rhs - WITNESS_REL_TOL * rhs.abs(),
    })
}

/// Grid of seeded cone ensembles for the bound sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Number of random ensembles.
    pub ensembles: usize,
    pub ns: Vec<usize>,
    pub gammas: Vec<f64>,
    pub omegas: Vec<f64>,
    pub beta: [f64; 2],
    pub alpha: [f64; 2],
    pub d: usize,
    pub seed: u64,
    /// Adds one coherent (γ = 0, constant amplitude) ensemble per `N`.
    pub coherent: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            ensembles: 1000,
            ns: vec![256, 512, 1024, 2048, 4096, 8192],
            gammas: vec![0.0, PI / 8.0, PI / 4.0, 3.0 * PI / 8.0],
            omegas: vec![0.0, 2e-5],
            beta: [0.5, 2.0],
            alpha: [0.5, 2.0],
            d: 64,
            seed: 42,
            coherent: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub coherent: bool,
    pub queries: ConeEnsembleSpec,
    pub keys: ConeEnsembleSpec,
    pub d: usize,
}

impl SweepSpec {
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        let random = if self.ns.is_empty() || self.gammas.is_empty() { 0 } else { self.ensembles };
        if random == 0 && !(self.coherent && !self.ns.is_empty()) {
            return Err(Error::Config("sweep has no ensembles".into()));
        }
        if self.d == 0 || self.ns.contains(&0) {
            return Err(Error::Config("sweep sizes must be >= 1".into()));
        }
        let omegas = if self.omegas.is_empty() { vec![0.0] } else { self.omegas.clone() };
        let (nn, ng, no) = (self.ns.len(), self.gammas.len().max(1), omegas.len());
        let mut points = Vec::with_capacity(random + self.ns.len());
        for i in 0..random {
            let n = self.ns[i % nn];
            let gamma = self.gammas[(i / nn) % ng];
            let omega = omegas[(i / (nn * ng)) % no];
            let rectangular = (i / (nn * ng * no)) % 2 == 1;
            let m = if rectangular { (n / 2).max(1) } else { n };

            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(i as u64);
            let key_angle = rng.random_range(0.0..2.0 * PI);
            let offset = rng.random_range(0.0..PI / 3.0);
            let k_norm = rng.random_range(0.5..2.0);
            let q_norm = rng.random_range(0.5..2.0);
            let key_dir = rotate([k_norm, 0.0], key_angle);
            let query_dir = rotate([q_norm, 0.0], key_angle + offset);
            let keys = ConeEnsembleSpec {
                n,
                omega,
                beta_min: self.beta[0],
                beta_max: self.beta[1],
                gamma,
                direction: key_dir,
                seed: rng.random(),
            };
            let queries = ConeEnsembleSpec {
                n: m,
                beta_min: self.alpha[0],
                beta_max: self.alpha[1],
                direction: query_dir,
                seed: rng.random(),
                ..keys
            };
            points.push(SweepPoint { index: i, coherent: false, queries, keys, d: self.d });
        }
        if self.coherent {
            for (j, &n) in self.ns.iter().enumerate() {
                let keys = ConeEnsembleSpec::coherent(n, self.beta[0], [0.8, 0.6]);
                let queries = ConeEnsembleSpec::coherent(n, self.alpha[0], [1.0, 0.5]);
                points.push(SweepPoint { index: random + j, coherent: true, queries, keys, d: self.d });
            }
        }
        Ok(points)
    }
}

/// Generates and checks every sweep point, in parallel, in point order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<(SweepPoint, Vec<BoundWitness>)>> {
    spec.points()?
        .into_par_iter()
        .map(|p| {
            let keys = generate_cone_keys(&p.keys)?;
            let queries = generate_cone_keys(&p.queries)?;
            let params = BoundParams::for_ensembles(&p.queries, &p.keys, p.d);
            Ok((p, verify_lower_bounds(&keys, &queries, &params)?))
        })
        .collect()
}
