//! Vector helpers and a covariance-eigendecomposition PCA.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PcaError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("points have inconsistent dimensions")]
    RaggedInput,
    #[error("cannot reduce {dim}-dimensional data to {dims} components")]
    BadDims { dim: usize, dims: usize },
    #[error("all points coincide; covariance is zero")]
    DegenerateCovariance,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit length in place; zero vectors are left untouched.
pub fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Cosine similarity clamped to [-1, 1]; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        return 0.0;
    }
    (dot(a, b) / d).clamp(-1.0, 1.0)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Linear-interpolated percentile (`q` in [0, 100]) of unsorted data.
pub fn percentile(data: &[f64], q: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

/// Principal axes fitted on a point set.
///
/// Components are sorted by decreasing variance. Each component's sign is
/// fixed so that its largest-magnitude entry is positive, which makes the
/// projection reproducible across runs and platforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `dims` rows, each a unit-length axis in input space.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    pub fn fit(points: &[Vec<f64>], dims: usize) -> Result<Self, PcaError> {
        let n = points.len();
        if n < 2 {
            return Err(PcaError::TooFewPoints(n));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(PcaError::RaggedInput);
        }
        if dims == 0 || dims > dim {
            return Err(PcaError::BadDims { dim, dims });
        }
        let mut mean = vec![0.0; dim];
        for p in points {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered = DMatrix::from_fn(n, dim, |i, j| points[i][j] - mean[j]);
        let cov = centered.transpose() * &centered / (n - 1) as f64;
        if cov.iter().all(|&c| c == 0.0) {
            return Err(PcaError::DegenerateCovariance);
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = Vec::with_capacity(dims);
        let mut explained_variance = Vec::with_capacity(dims);
        for &k in order.iter().take(dims) {
            let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let pivot = axis
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            if axis[pivot] < 0.0 {
                axis.iter_mut().for_each(|x| *x = -*x);
            }
            components.push(axis);
            explained_variance.push(eig.eigenvalues[k].max(0.0));
        }
        Ok(Pca {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn dims(&self) -> usize {
        self.components.len()
    }

    pub fn transform_one(&self, p: &[f64]) -> Vec<f64> {
        let centered = DVector::from_iterator(p.len(), p.iter().zip(&self.mean).map(|(x, m)| x - m));
        self.components
            .iter()
            .map(|axis| axis.iter().zip(centered.iter()).map(|(a, c)| a * c).sum())
            .collect()
    }

    pub fn transform(&self, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        points.iter().map(|p| self.transform_one(p)).collect()
    }
}
