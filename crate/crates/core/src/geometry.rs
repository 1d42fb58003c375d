//! Isotropy diagnostics for embedding clouds: IsoScore and mean pairwise cosine.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, normalized, EmbeddingMatrix};
use crate::select::FeatureMask;

/// Pair budget above which [`mean_cosine`] samples instead of enumerating.
pub const DEFAULT_MAX_PAIRS: usize = 1_000_000;

/// Eigenvalues of the sample covariance (divisor `N - 1`), descending.
pub fn covariance_spectrum(points: &EmbeddingMatrix) -> Vec<f64> {
    let (n, d) = (points.rows(), points.cols());
    let mean = points.mean_row();
    let centered = DMatrix::from_fn(n, d, |i, j| points.row(i)[j] - mean[j]);
    let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    let mut eig: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .map(|&v| v.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

/// IsoScore of a point cloud: 1 for variance spread evenly over all `d`
/// directions, 0 when it lies on a single line.
///
/// The covariance is diagonalized by its principal components, the variance
/// vector is scaled to norm `sqrt(d)` and compared with the all-ones vector.
pub fn isoscore(points: &EmbeddingMatrix) -> Result<f64> {
    let (n, d) = (points.rows(), points.cols());
    if n < 2 || d < 2 {
        return Err(Error::DegenerateCloud(format!(
            "need at least 2 points in at least 2 dimensions, got {n} x {d}"
        )));
    }
    let spectrum = covariance_spectrum(points);
    let total: f64 = spectrum.iter().map(|v| v * v).sum::<f64>().sqrt();
    if total == 0.0 {
        return Err(Error::DegenerateCloud("zero variance".into()));
    }
    let df = d as f64;
    let scale = df.sqrt() / total;
    let dist: f64 = spectrum
        .iter()
        .map(|v| (v * scale - 1.0).powi(2))
        .sum::<f64>()
        .sqrt();
    let delta = dist / (2.0 * (df - df.sqrt())).sqrt();
    let phi = ((df - delta * delta * (df - df.sqrt())) / df).powi(2);
    Ok(((df * phi - 1.0) / (df - 1.0)).clamp(0.0, 1.0))
}

/// Maps a pair index in `0..n(n-1)/2` to `(i, j)` with `i < j`, row-major.
#[cfg(test)]
fn pair_at(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let in_row = n - 1 - i;
        if k < in_row {
            return (i, i + 1 + k);
        }
        k -= in_row;
        i += 1;
    }
}

/// Mean cosine over distinct pairs of rows. Exact when there are at most
/// `max_pairs` pairs, otherwise a seeded uniform sample of `max_pairs` distinct
/// pairs.
pub fn mean_cosine(points: &EmbeddingMatrix, max_pairs: usize, seed: u64) -> Result<f64> {
    let n = points.rows();
    if n < 2 {
        return Err(Error::DegenerateCloud("need at least 2 points".into()));
    }
    if max_pairs == 0 {
        return Err(Error::OutOfRange("max_pairs must be positive".into()));
    }
    let unit: Vec<Vec<f64>> = points
        .iter_rows()
        .enumerate()
        .map(|(i, r)| normalized(r).ok_or(Error::ZeroRow(i)))
        .collect::<Result<_>>()?;
    let total = n * (n - 1) / 2;
    if total <= max_pairs {
        let sums: Vec<f64> = (0..n - 1)
            .into_par_iter()
            .map(|i| (i + 1..n).map(|j| dot(&unit[i], &unit[j])).sum())
            .collect();
        return Ok(sums.iter().sum::<f64>() / total as f64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, total, max_pairs).into_vec();
    picks.sort_unstable();
    // walk rows once instead of solving for each index
    let mut sum = 0.0;
    let (mut row, mut row_start) = (0usize, 0usize);
    for k in picks {
        while k >= row_start + (n - 1 - row) {
            row_start += n - 1 - row;
            row += 1;
        }
        let j = row + 1 + (k - row_start);
        sum += dot(&unit[row], &unit[j]);
    }
    Ok(sum / max_pairs as f64)
}

fn centered(points: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mean = points.mean_row();
    points.map_rows(|r| r.iter().zip(&mean).map(|(a, b)| a - b).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct GeometryOptions {
    pub max_pairs: usize,
    pub seed: u64,
    /// Subtract the cloud mean before measuring cosines.
    pub center: bool,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        Self {
            max_pairs: DEFAULT_MAX_PAIRS,
            seed: 0,
            center: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropyReport {
    pub isoscore_before: f64,
    pub isoscore_after: f64,
    pub mean_cosine_before: f64,
    pub mean_cosine_after: f64,
    pub kept_dims: usize,
}

/// Isotropy of `points` on all coordinates and on the coordinates `mask` keeps.
pub fn isotropy_report(
    points: &EmbeddingMatrix,
    mask: &FeatureMask,
    opts: &GeometryOptions,
) -> Result<IsotropyReport> {
    if mask.original_dim != points.cols() {
        return Err(Error::dims(points.cols(), mask.original_dim, "mask vs points"));
    }
    let masked = points.select_columns(&mask.kept)?;
    let cos = |m: &EmbeddingMatrix| -> Result<f64> {
        if opts.center {
            mean_cosine(&centered(m)?, opts.max_pairs, opts.seed)
        } else {
            mean_cosine(m, opts.max_pairs, opts.seed)
        }
    };
    Ok(IsotropyReport {
        isoscore_before: isoscore(points)?,
        isoscore_after: isoscore(&masked)?,
        mean_cosine_before: cos(points)?,
        mean_cosine_after: cos(&masked)?,
        kept_dims: mask.kept.len(),
    })
}
