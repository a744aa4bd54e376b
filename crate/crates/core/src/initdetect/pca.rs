//! Principal component projection used ahead of the initial detectors.
//!
//! The basis comes from a symmetric eigendecomposition, either of the D×D
//! covariance (D ≤ K) or of the K×K Gram matrix of the centred data (D > K).
//! Each component is signed so that its largest-magnitude coefficient is
//! positive, which makes the projection reproducible.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Default number of retained components.
pub const DEFAULT_COMPONENTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `n_components × dim`, row-major, orthonormal rows.
    components: Matrix,
    explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &Matrix {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.cols(),
            });
        }
        let m = self.n_components();
        let mut out = Matrix::zeros(x.rows(), m);
        let mut centred = vec![0.0; self.dim()];
        for (i, row) in x.iter_rows().enumerate() {
            for ((c, &v), &mu) in centred.iter_mut().zip(row).zip(&self.mean) {
                *c = v - mu;
            }
            let dst = out.row_mut(i);
            for (j, comp) in self.components.iter_rows().enumerate() {
                dst[j] = dot(comp, &centred);
            }
        }
        Ok(out)
    }

    /// Maps projected rows back into the input space.
    pub fn inverse_transform(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.n_components() {
            return Err(Error::DimensionMismatch {
                expected: self.n_components(),
                found: z.cols(),
            });
        }
        let mut out = Matrix::zeros(z.rows(), self.dim());
        for (i, coords) in z.iter_rows().enumerate() {
            let dst = out.row_mut(i);
            dst.copy_from_slice(&self.mean);
            for (&c, comp) in coords.iter().zip(self.components.iter_rows()) {
                for (d, &v) in dst.iter_mut().zip(comp) {
                    *d += c * v;
                }
            }
        }
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits the top `min(m_target, D, K)` components.
pub fn pca_fit(x: &Matrix, m_target: usize) -> Result<PcaModel> {
    let (k, d) = (x.rows(), x.cols());
    if k < 2 {
        return Err(Error::InsufficientData { needed: 2, have: k });
    }
    if d == 0 || m_target == 0 {
        return Err(Error::InvalidArgument("PCA needs at least one dimension and component".into()));
    }
    let m = m_target.min(d).min(k);

    let mut mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (mu, &v) in mean.iter_mut().zip(row) {
            *mu += v;
        }
    }
    for mu in &mut mean {
        *mu /= k as f64;
    }
    let centred = DMatrix::from_fn(k, d, |i, j| x.get(i, j) - mean[j]);
    let denom = (k - 1) as f64;

    let (mut basis, mut variance) = if d <= k {
        let cov = centred.transpose() * &centred / denom;
        let eig = SymmetricEigen::new(cov);
        let order = descending(eig.eigenvalues.as_slice());
        let basis: Vec<Vec<f64>> = order
            .iter()
            .take(m)
            .map(|&c| eig.eigenvectors.column(c).iter().copied().collect())
            .collect();
        let variance = order.iter().take(m).map(|&c| eig.eigenvalues[c].max(0.0)).collect();
        (basis, variance)
    } else {
        let gram = &centred * centred.transpose();
        let eig = SymmetricEigen::new(gram);
        let order = descending(eig.eigenvalues.as_slice());
        let top = eig.eigenvalues[order[0]].max(0.0);
        let mut basis = Vec::with_capacity(m);
        let mut variance = Vec::with_capacity(m);
        for &c in order.iter().take(m) {
            let lambda = eig.eigenvalues[c];
            if !(lambda > top * 1e-12) || lambda <= 0.0 {
                break;
            }
            let u = eig.eigenvectors.column(c);
            let v = centred.transpose() * u;
            let norm = v.norm();
            basis.push(v.iter().map(|x| x / norm).collect::<Vec<f64>>());
            variance.push(lambda / denom);
        }
        (basis, variance)
    };

    orthonormalize(&mut basis);
    complete_basis(&mut basis, &mut variance, d, m);
    for comp in &mut basis {
        fix_sign(comp);
    }
    let components = Matrix::from_rows(&basis);
    Ok(PcaModel {
        mean,
        components,
        explained_variance: variance,
    })
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Modified Gram-Schmidt; drops vectors that collapse numerically.
fn orthonormalize(basis: &mut Vec<Vec<f64>>) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for mut v in basis.drain(..) {
        for q in &out {
            let p = dot(q, &v);
            for (x, &y) in v.iter_mut().zip(q) {
                *x -= p * y;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-10 {
            v.iter_mut().for_each(|x| *x /= norm);
            out.push(v);
        }
    }
    *basis = out;
}

/// Extends a deficient basis with zero-variance directions taken from the
/// standard basis, so `m` orthonormal rows always exist.
fn complete_basis(basis: &mut Vec<Vec<f64>>, variance: &mut Vec<f64>, d: usize, m: usize) {
    variance.truncate(basis.len());
    let mut axis = 0;
    while basis.len() < m && axis < d {
        let mut v = vec![0.0; d];
        v[axis] = 1.0;
        axis += 1;
        for q in basis.iter() {
            let p = dot(q, &v);
            for (x, &y) in v.iter_mut().zip(q) {
                *x -= p * y;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
            variance.push(0.0);
        }
    }
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
