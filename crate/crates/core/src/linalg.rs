//! Dense linear-algebra substrate.
//!
//! Everything here works on row-major `f64` storage. Symmetric eigenproblems
//! use the closed form for 2×2 inputs and cyclic Jacobi rotations otherwise,
//! which is plenty for head dimensions up to a few hundred.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry pre-check.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Eigenvalues above `-PSD_CLAMP * trace` are rounding noise and clamp to zero.
pub const PSD_CLAMP: f64 = 1e-9;
/// Jacobi stops once the off-diagonal Frobenius norm drops below this times the trace.
pub const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 64;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (l, a) in self.row(i).iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(l)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`, i.e. all pairwise row dot products.
    pub fn matmul_transposed(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "cannot form {}x{} times ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j))))
    }

    /// Gram matrix `selfᵀ · self` (cols × cols).
    pub fn gram(&self) -> Matrix {
        let c = self.cols;
        let mut g = Matrix::zeros(c, c);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..c {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                for b in a..c {
                    g.data[a * c + b] += ra * r[b];
                }
            }
        }
        for a in 0..c {
            for b in 0..a {
                g.data[a * c + b] = g.data[b * c + a];
            }
        }
        g
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let tol = rel_tol * self.max_abs();
        (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(i)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    EigenSymmetric,
    Singular,
}

/// Eigenvalues or singular values, sorted non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub kind: SpectrumKind,
}

impl Spectrum {
    /// Sorts `values` descending. Callers are responsible for the sign invariant.
    pub fn new(mut values: Vec<f64>, kind: SpectrumKind) -> Self {
        values.sort_by(|a, b| b.total_cmp(a));
        Self { values, kind }
    }

    pub fn largest(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Closed-form eigenvalues of the symmetric 2×2 `[[a, b], [b, d]]`, larger first.
pub fn eig2_symmetric(a: f64, b: f64, d: f64) -> (f64, f64) {
    let mean = 0.5 * (a + d);
    let half_gap = 0.5 * (a - d);
    let disc = half_gap.hypot(b);
    (mean + disc, mean - disc)
}

/// Unit eigenvector of `[[a, b], [b, d]]` for eigenvalue `lambda`.
fn eigvec2_symmetric(a: f64, b: f64, d: f64, lambda: f64) -> [f64; 2] {
    let u = [b, lambda - a];
    let v = [lambda - d, b];
    let (nu, nv) = (u[0].hypot(u[1]), v[0].hypot(v[1]));
    if nu == 0.0 && nv == 0.0 {
        return if a >= d { [1.0, 0.0] } else { [0.0, 1.0] };
    }
    if nu >= nv {
        [u[0] / nu, u[1] / nu]
    } else {
        [v[0] / nv, v[1] / nv]
    }
}

/// Cyclic Jacobi on a symmetric matrix. Returns unsorted eigenvalues and the
/// eigenvector matrix (column `i` pairs with value `i`).
fn jacobi(m: &Matrix) -> (Vec<f64>, Matrix) {
    let n = m.rows;
    let mut a = m.data.clone();
    let mut v = Matrix::identity(n);
    let scale = m.trace().abs().max(m.frobenius_norm());
    let tol = JACOBI_TOL * scale;

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    off += a[p * n + q] * a[p * n + q];
                }
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

fn check_symmetric_square(m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.rows, m.cols
        )));
    }
    if !m.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::ShapeContract("matrix is not symmetric within 1e-9 relative".into()));
    }
    Ok(())
}

fn clamp_psd(values: &mut [f64], trace: f64) -> Result<()> {
    let floor = -PSD_CLAMP * trace.abs();
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < floor {
                return Err(Error::NotPsd(format!("eigenvalue {v:e} below clamp floor {floor:e}")));
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric positive-semidefinite matrix, descending.
pub fn sym_eigvals(m: &Matrix) -> Result<Spectrum> {
    check_symmetric_square(m)?;
    let mut values = match m.rows {
        0 => Vec::new(),
        1 => vec![m[(0, 0)]],
        2 => {
            let (l1, l2) = eig2_symmetric(m[(0, 0)], m[(0, 1)], m[(1, 1)]);
            vec![l1, l2]
        }
        _ => jacobi(m).0,
    };
    clamp_psd(&mut values, m.trace())?;
    Ok(Spectrum::new(values, SpectrumKind::EigenSymmetric))
}

/// Eigenpairs of a symmetric PSD matrix. Eigenvector `i` is column `i` of the
/// returned matrix and pairs with `spectrum.values[i]`.
pub fn sym_eigen(m: &Matrix) -> Result<(Spectrum, Matrix)> {
    check_symmetric_square(m)?;
    let n = m.rows;
    let (mut values, vectors) = if n == 2 {
        let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
        let (l1, l2) = eig2_symmetric(a, b, d);
        let v1 = eigvec2_symmetric(a, b, d, l1);
        let vecs = Matrix { rows: 2, cols: 2, data: vec![v1[0], -v1[1], v1[1], v1[0]] };
        (vec![l1, l2], vecs)
    } else {
        let (vals, vecs) = jacobi(m);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]));
        let sorted = order.iter().map(|&i| vals[i]).collect();
        let vecs = Matrix::from_fn(n, n, |r, c| vecs[(r, order[c])]);
        (sorted, vecs)
    };
    clamp_psd(&mut values, m.trace())?;
    Ok((Spectrum { values, kind: SpectrumKind::EigenSymmetric }, vectors))
}

/// Principal eigenvector (unit norm) of a symmetric PSD matrix.
pub fn principal_eigvec(m: &Matrix) -> Result<Vec<f64>> {
    let (_, vecs) = sym_eigen(m)?;
    Ok(vecs.column(0))
}

fn require_nonempty(m: &Matrix) -> Result<()> {
    if m.is_empty() {
        return Err(Error::Dimension(format!("empty {}x{} matrix", m.rows, m.cols)));
    }
    Ok(())
}

/// Singular values of `m`, descending, `min(rows, cols)` of them.
pub fn singular_values(m: &Matrix) -> Result<Spectrum> {
    require_nonempty(m)?;
    let g = if m.rows >= m.cols { m.gram() } else { m.transpose().gram() };
    let eig = sym_eigvals(&g)?;
    Ok(Spectrum::new(eig.values.into_iter().map(f64::sqrt).collect(), SpectrumKind::Singular))
}

/// Largest singular value σ₁(m).
pub fn top_singular_value(m: &Matrix) -> Result<f64> {
    Ok(singular_values(m)?.largest())
}

/// σ₁(left · rightᵀ) without forming the product.
///
/// With `G_L = leftᵀleft` and `G_R = rightᵀright`, the squared singular values
/// of `left · rightᵀ` are the eigenvalues of `G_L^{1/2} G_R G_L^{1/2}`, a
/// k×k problem for k shared columns.
pub fn top_singular_value_of_product(left: &Matrix, right: &Matrix) -> Result<f64> {
    require_nonempty(left)?;
    require_nonempty(right)?;
    if left.cols != right.cols {
        return Err(Error::Dimension(format!(
            "factor widths differ: {} vs {}",
            left.cols, right.cols
        )));
    }
    let (spec, vecs) = sym_eigen(&left.gram())?;
    let k = left.cols;
    let root = Matrix::from_fn(k, k, |i, j| {
        (0..k).map(|l| vecs[(i, l)] * spec.values[l].sqrt() * vecs[(j, l)]).sum()
    });
    let inner = root.matmul(&right.gram())?.matmul(&root)?;
    let sym = Matrix::from_fn(k, k, |i, j| 0.5 * (inner[(i, j)] + inner[(j, i)]));
    Ok(sym_eigvals(&sym)?.largest().sqrt())
}

/// Visibility pattern for attention scores; hidden entries act as `-inf`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    visible: Vec<bool>,
}

impl Mask {
    pub fn none(rows: usize, cols: usize) -> Self {
        Self { rows, cols, visible: vec![true; rows * cols] }
    }

    /// Lower-triangular mask: row `i` sees columns `0..=i`.
    pub fn causal(n: usize) -> Self {
        let mut visible = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                visible[i * n + j] = true;
            }
        }
        Self { rows: n, cols: n, visible }
    }

    pub fn from_visible(rows: usize, cols: usize, visible: Vec<bool>) -> Result<Self> {
        if visible.len() != rows * cols {
            return Err(Error::Dimension("mask length does not match its shape".into()));
        }
        Ok(Self { rows, cols, visible })
    }

    pub fn is_visible(&self, i: usize, j: usize) -> bool {
        self.visible[i * self.cols + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Row-wise softmax of `scores + mask`, stabilized by the per-row max.
pub fn row_softmax(scores: &Matrix, mask: &Mask) -> Result<Matrix> {
    if scores.shape() != mask.shape() {
        return Err(Error::Dimension(format!(
            "scores {:?} and mask {:?} differ in shape",
            scores.shape(),
            mask.shape()
        )));
    }
    let mut out = Matrix::zeros(scores.rows, scores.cols);
    for i in 0..scores.rows {
        let row = scores.row(i);
        let max = (0..scores.cols)
            .filter(|&j| mask.is_visible(i, j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Degenerate(format!("row {i} has no visible entries")));
        }
        let dst = out.row_mut(i);
        let mut total = 0.0;
        for j in 0..scores.cols {
            if mask.is_visible(i, j) {
                let e = (row[j] - max).exp();
                dst[j] = e;
                total += e;
            }
        }
        for v in dst.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Characteristic polynomial λ² − tr·λ + det solved by bisection; an
    /// independent route to the 2×2 eigenvalues.
    fn charpoly_roots(a: f64, b: f64, d: f64) -> (f64, f64) {
        let tr = a + d;
        let det = a * d - b * b;
        let p = |x: f64| x * x - tr * x + det;
        let vertex = tr / 2.0;
        let span = tr.abs() + det.abs().sqrt() + b.abs() + 1.0;
        let bisect = |mut lo: f64, mut hi: f64| {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if (p(mid) > 0.0) == (p(lo) > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        (bisect(vertex, vertex + span), bisect(vertex - span, vertex))
    }

    #[test]
    fn eigvals_identity_and_diagonal() {
        assert_eq!(sym_eigvals(&Matrix::identity(2)).unwrap().values, vec![1.0, 1.0]);
        assert_eq!(sym_eigvals(&Matrix::diag(&[3.0, 1.0])).unwrap().values, vec![3.0, 1.0]);
        assert_eq!(sym_eigvals(&Matrix::diag(&[1.0, 3.0])).unwrap().values, vec![3.0, 1.0]);
    }

    #[test]
    fn eigvals_two_by_two_matches_characteristic_polynomial() {
        let s = sym_eigvals(&m(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        let (r1, r2) = charpoly_roots(2.0, 1.0, 2.0);
        assert!((s.values[0] - 3.0).abs() < 1e-12 && (r1 - 3.0).abs() < 1e-9);
        assert!((s.values[1] - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn eigvals_errors() {
        let rect = Matrix::zeros(2, 3);
        assert!(matches!(sym_eigvals(&rect), Err(Error::Dimension(_))));
        let asym = m(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(sym_eigvals(&asym), Err(Error::ShapeContract(_))));
        let indefinite = m(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert!(matches!(sym_eigvals(&indefinite), Err(Error::NotPsd(_))));
    }

    #[test]
    fn tiny_negative_eigenvalue_is_clamped() {
        let g = m(&[&[1.0, 1.0], &[1.0, 1.0 + 1e-16]]);
        let s = sym_eigvals(&g).unwrap();
        assert!(s.values[1] >= 0.0);
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        // Q diag(5, 3, 1, 0) Qᵀ for a Householder Q.
        let v = [1.0, 2.0, -1.0, 0.5];
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let q = Matrix::from_fn(4, 4, |i, j| {
            (if i == j { 1.0 } else { 0.0 }) - 2.0 * v[i] * v[j] / vv
        });
        let d = Matrix::diag(&[5.0, 3.0, 1.0, 0.0]);
        let a = q.matmul(&d).unwrap().matmul(&q.transpose()).unwrap();
        let a = Matrix::from_fn(4, 4, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
        let s = sym_eigvals(&a).unwrap();
        for (got, want) in s.values.iter().zip([5.0, 3.0, 1.0, 0.0]) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn eigenvectors_reconstruct() {
        let a = m(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, 0.2], &[0.5, 0.2, 1.0]]);
        let (s, v) = sym_eigen(&a).unwrap();
        for c in 0..3 {
            let col = v.column(c);
            let av: Vec<f64> = (0..3).map(|i| dot(a.row(i), &col)).collect();
            for i in 0..3 {
                assert!((av[i] - s.values[c] * col[i]).abs() < 1e-10);
            }
        }
        let (s2, v2) = sym_eigen(&m(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert!((s2.values[0] - 3.0).abs() < 1e-12);
        assert!((v2[(0, 0)].abs() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((v2[(0, 0)] - v2[(1, 0)]).abs() < 1e-12);
    }

    #[test]
    fn top_singular_value_examples() {
        assert!((top_singular_value(&m(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(top_singular_value(&Matrix::zeros(3, 2)).unwrap(), 0.0);
        // MᵀM = diag(1, 4) by hand, so σ₁ = 2.
        let tall = m(&[&[1.0, 0.0], &[0.0, 2.0], &[0.0, 0.0]]);
        assert!((top_singular_value(&tall).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(top_singular_value(&Matrix::zeros(0, 0)), Err(Error::Dimension(_))));
    }

    #[test]
    fn product_route_matches_explicit_product() {
        let l = m(&[&[1.0, 0.5], &[0.3, -2.0], &[1.5, 0.1]]);
        let r = m(&[&[0.2, 1.0], &[-1.0, 0.4]]);
        let explicit = top_singular_value(&l.matmul_transposed(&r).unwrap()).unwrap();
        let factored = top_singular_value_of_product(&l, &r).unwrap();
        assert!((explicit - factored).abs() < 1e-10 * explicit);
        // rank-one factor
        let ones = m(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert!((top_singular_value_of_product(&ones, &ones).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_examples() {
        let n = 4;
        let a = row_softmax(&Matrix::zeros(n, n), &Mask::causal(n)).unwrap();
        for i in 0..n {
            for j in 0..n {
                let want = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
                assert!((a[(i, j)] - want).abs() < 1e-15);
            }
        }
        let spike = m(&[&[0.0, 1000.0, 0.0]]);
        let a = row_softmax(&spike, &Mask::none(1, 3)).unwrap();
        assert!((a[(0, 1)] - 1.0).abs() < 1e-12);
        let s = m(&[&[0.0, 2f64.ln(), 4f64.ln()]]);
        let a = row_softmax(&s, &Mask::none(1, 3)).unwrap();
        for (got, want) in a.row(0).iter().zip([1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(row_softmax(&Matrix::zeros(2, 2), &Mask::causal(3)).is_err());
    }

    fn arb_matrix(max: usize) -> impl Strategy<Value = Matrix> {
        (1..=max, 1..=max).prop_flat_map(|(r, c)| {
            prop::collection::vec(-10.0..10.0f64, r * c)
                .prop_map(move |d| Matrix::new(r, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn eigvals_sum_to_trace(x in arb_matrix(7)) {
            let g = x.gram();
            let s = sym_eigvals(&g).unwrap();
            let tr = g.trace();
            prop_assert!((s.sum() - tr).abs() <= 1e-8 * tr.max(1e-300));
            prop_assert!(s.values.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(s.values.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn two_by_two_matches_discriminant_form(a in 0.0..50.0f64, d in 0.0..50.0f64, t in -1.0..1.0f64) {
            let b = t * (a * d).sqrt();
            let s = sym_eigvals(&m(&[&[a, b], &[b, d]])).unwrap();
            let tr = a + d;
            let det = a * d - b * b;
            let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
            prop_assert!((s.values[0] - (tr + disc) / 2.0).abs() <= 1e-10 * tr.max(1.0));
            prop_assert!((s.values[1] - ((tr - disc) / 2.0).max(0.0)).abs() <= 1e-10 * tr.max(1.0));
        }

        #[test]
        fn sigma1_bounded_by_frobenius(x in arb_matrix(6)) {
            let s1 = top_singular_value(&x).unwrap();
            let fro = x.frobenius_norm();
            prop_assert!(s1 * s1 <= fro * fro * (1.0 + 1e-10) + 1e-12);
        }

        #[test]
        fn softmax_rows_are_distributions_and_shift_invariant(x in arb_matrix(6), shift in -50.0..50.0f64) {
            let mask = Mask::none(x.rows(), x.cols());
            let a = row_softmax(&x, &mask).unwrap();
            let shifted = Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] + if i == 0 { shift } else { 0.0 });
            let b = row_softmax(&shifted, &mask).unwrap();
            for i in 0..x.rows() {
                prop_assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for j in 0..x.cols() {
                    prop_assert!((a[(i, j)] - b[(i, j)]).abs() < 1e-12);
                }
            }
        }
    }
}
