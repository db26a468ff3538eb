//! Dimensionality descriptors.
//!
//! `ppl` counts grow like `2^L`, `4^L` or `8^L` for lines, surfaces and
//! volumes, so per-level log2 growth gives a dimension estimate in `[0, 3]`
//! at every scale. Per-level values are fused into one estimate with either
//! a RANSAC line fit or a median/MAD filter. The covariance (structure
//! tensor) dimension is provided as a baseline.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::QuantCoord;

/// One per-level dimension value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelDim {
    pub level: u8,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    Simple,
    Diff,
    Ransac,
    Median,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimEstimate {
    pub per_level: Vec<LevelDim>,
    pub fused: f64,
    /// Slope of the fitted line; 0 for a scale-consistent patch.
    pub slope: Option<f64>,
    pub method: FusionMethod,
    /// Set when the fit rests on two abscissae or fewer than three inliers.
    pub low_confidence: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovDim {
    /// Probabilities of being 1D, 2D, 3D.
    pub p_dim: [f64; 3],
    pub dim: f64,
    /// Covariance eigenvalues, decreasing.
    pub eigenvalues: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    pub inlier_threshold: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { inlier_threshold: 0.3 }
    }
}

/// Median fusion keeps values within `MEDIAN_K` MADs of the median.
pub const MEDIAN_K: f64 = 2.5;

fn clamp_dim(v: f64) -> f64 {
    v.clamp(0.0, 3.0)
}

/// `log2(ppl[i]) / i` for every level `i >= 1` with at least one pick.
pub fn dim_lod_simple(ppl: &[u64]) -> Vec<LevelDim> {
    ppl.iter()
        .enumerate()
        .skip(1)
        .filter(|&(_, &n)| n >= 1)
        .map(|(i, &n)| LevelDim {
            level: i as u8,
            value: clamp_dim((n as f64).log2() / i as f64),
        })
        .collect()
}

/// `log2(ppl[i] / ppl[i-1])` for every level `i >= 1` where both are non-zero.
pub fn dim_lod_diff(ppl: &[u64]) -> Vec<LevelDim> {
    ppl.windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] >= 1 && w[1] >= 1)
        .map(|(i, w)| LevelDim {
            level: (i + 1) as u8,
            value: clamp_dim((w[1] as f64 / w[0] as f64).log2()),
        })
        .collect()
}

/// Union of the simple and difference values, the input of the fusions.
pub fn dim_lod_all(ppl: &[u64]) -> Vec<LevelDim> {
    let mut all = dim_lod_simple(ppl);
    all.extend(dim_lod_diff(ppl));
    all
}

/// Least squares line through `values`; `None` when all share one abscissa.
fn least_squares(values: &[LevelDim]) -> Option<(f64, f64)> {
    let n = values.len() as f64;
    let mx = values.iter().map(|v| f64::from(v.level)).sum::<f64>() / n;
    let my = values.iter().map(|v| v.value).sum::<f64>() / n;
    let sxx: f64 = values.iter().map(|v| (f64::from(v.level) - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = values.iter().map(|v| (f64::from(v.level) - mx) * (v.value - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Robust line fit over (level, value); the fused value is the line at the
/// middle of the level range.
///
/// Every pair of values with distinct levels is tried as a model (the input
/// is at most a few dozen values). The model with the most inliers wins,
/// ties going to the smaller inlier residual, and the line is then refit by
/// least squares on its inliers.
pub fn fuse_ransac(values: &[LevelDim], params: RansacParams) -> Result<DimEstimate> {
    if values.len() < 2 {
        return Err(Error::NotEnoughValues { needed: 2, got: values.len() });
    }
    let lo = values.iter().map(|v| v.level).min().unwrap_or(0);
    let hi = values.iter().map(|v| v.level).max().unwrap_or(0);
    let mid = (f64::from(lo) + f64::from(hi)) / 2.0;

    let mut best: Option<(usize, f64, Vec<LevelDim>)> = None;
    for a in 0..values.len() {
        for b in a + 1..values.len() {
            let (pa, pb) = (values[a], values[b]);
            if pa.level == pb.level {
                continue;
            }
            let slope = (pb.value - pa.value) / (f64::from(pb.level) - f64::from(pa.level));
            let icpt = pa.value - slope * f64::from(pa.level);
            let mut residual = 0.0;
            let inliers: Vec<LevelDim> = values
                .iter()
                .filter(|v| {
                    let r = (v.value - (slope * f64::from(v.level) + icpt)).abs();
                    let ok = r <= params.inlier_threshold;
                    if ok {
                        residual += r * r;
                    }
                    ok
                })
                .copied()
                .collect();
            let wins = match &best {
                None => true,
                Some((n, res, _)) => inliers.len() > *n || (inliers.len() == *n && residual < *res),
            };
            if wins {
                best = Some((inliers.len(), residual, inliers));
            }
        }
    }

    let Some((_, _, inliers)) = best else {
        // Every value sits on the same level: no line, report the mean.
        let mean = values.iter().map(|v| v.value).sum::<f64>() / values.len() as f64;
        return Ok(DimEstimate {
            per_level: values.to_vec(),
            fused: clamp_dim(mean),
            slope: Some(0.0),
            method: FusionMethod::Ransac,
            low_confidence: true,
        });
    };
    let (slope, icpt) = least_squares(&inliers).expect("model pair has two levels");
    let mut levels: Vec<u8> = inliers.iter().map(|v| v.level).collect();
    levels.dedup();
    Ok(DimEstimate {
        per_level: values.to_vec(),
        fused: clamp_dim(slope * mid + icpt),
        slope: Some(slope),
        method: FusionMethod::Ransac,
        low_confidence: inliers.len() < 3 || hi - lo < 2,
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Mean of the values within `MEDIAN_K` median absolute deviations of the
/// median.
pub fn fuse_median(values: &[LevelDim]) -> Result<DimEstimate> {
    if values.is_empty() {
        return Err(Error::NotEnoughValues { needed: 1, got: 0 });
    }
    let mut v: Vec<f64> = values.iter().map(|d| d.value).collect();
    v.sort_by(f64::total_cmp);
    let med = median(&v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad = median(&dev);
    let inliers: Vec<f64> = v.iter().copied().filter(|x| (x - med).abs() <= MEDIAN_K * mad).collect();
    let fused = inliers.iter().sum::<f64>() / inliers.len() as f64;
    Ok(DimEstimate {
        per_level: values.to_vec(),
        fused: clamp_dim(fused),
        slope: None,
        method: FusionMethod::Median,
        low_confidence: inliers.len() < 3,
    })
}

/// Dim_LOD of a ppl vector with the given fusion.
pub fn dim_lod(ppl: &[u64], method: FusionMethod) -> Result<DimEstimate> {
    match method {
        FusionMethod::Ransac => fuse_ransac(&dim_lod_all(ppl), RansacParams::default()),
        FusionMethod::Median => fuse_median(&dim_lod_all(ppl)),
        FusionMethod::Simple | FusionMethod::Diff => {
            let per_level = if method == FusionMethod::Simple { dim_lod_simple(ppl) } else { dim_lod_diff(ppl) };
            let est = fuse_median(&per_level)?;
            Ok(DimEstimate { method, ..est })
        }
    }
}

/// `sum(i * p_dim[i])` over dimensions 1, 2, 3.
pub fn dimension_from_probabilities(p_dim: [f64; 3]) -> f64 {
    p_dim[0] + 2.0 * p_dim[1] + 3.0 * p_dim[2]
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CovOptions {
    /// Rescale the second principal axis so the point extents along the two
    /// main axes match before computing the tensor.
    pub equalize_extent: bool,
}

fn covariance(points: &[[f64; 3]]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / n;
    points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = Vector3::from(*p) - mean;
        acc + d * d.transpose()
    }) / n
}

fn sorted_eigen(cov: Matrix3<f64>) -> ([f64; 3], Matrix3<f64>) {
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = idx.map(|i| eig.eigenvalues[i].max(0.0));
    let vecs = Matrix3::from_columns(&idx.map(|i| eig.eigenvectors.column(i).into_owned()));
    (vals, vecs)
}

/// Covariance dimensionality of a point set.
pub fn dim_cov(points: &[[f64; 3]]) -> Result<CovDim> {
    dim_cov_with(points, CovOptions::default())
}

pub fn dim_cov_with(points: &[[f64; 3]], opts: CovOptions) -> Result<CovDim> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no points"));
    }
    let (mut lambda, axes) = sorted_eigen(covariance(points));
    if opts.equalize_extent && lambda[1] > 0.0 {
        let local: Vec<Vector3<f64>> = points.iter().map(|p| axes.transpose() * Vector3::from(*p)).collect();
        let extent = |d: usize| {
            let (lo, hi) = local.iter().fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v[d]), hi.max(v[d])));
            hi - lo
        };
        let (e0, e1) = (extent(0), extent(1));
        if e1 > 0.0 {
            let s = e0 / e1;
            let stretched: Vec<[f64; 3]> = local.iter().map(|v| [v[0], v[1] * s, v[2]]).collect();
            lambda = sorted_eigen(covariance(&stretched)).0;
        }
    }
    let sigma = lambda.map(f64::sqrt);
    if sigma[0] <= 0.0 {
        return Err(Error::UndefinedDimension);
    }
    let raw = [
        (sigma[0] - sigma[1]) / sigma[0],
        (sigma[1] - sigma[2]) / sigma[0],
        sigma[2] / sigma[0],
    ];
    let total: f64 = raw.iter().sum();
    let p_dim = raw.map(|v| v / total);
    Ok(CovDim {
        p_dim,
        dim: dimension_from_probabilities(p_dim),
        eigenvalues: lambda,
    })
}

/// Number of occupied cells per level, from quantized coordinates.
/// Equals the octree occupancy, which bounds `ppl` from above.
pub fn occupancy_per_level(coords: &[QuantCoord], max_level: u8) -> Vec<u64> {
    let mut codes: Vec<u64> = coords.iter().map(|&q| crate::quant::morton_encode(q, max_level)).collect();
    codes.sort_unstable();
    (0..=max_level)
        .map(|level| {
            let shift = 3 * u32::from(max_level - level);
            let mut count = 0u64;
            let mut prev = None;
            for &c in &codes {
                let p = c >> shift;
                if prev != Some(p) {
                    count += 1;
                    prev = Some(p);
                }
            }
            count
        })
        .collect()
}
