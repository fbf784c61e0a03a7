//! Reconstruction metrics against rendered ground truth.
//!
//! Metrics are computed over decoded points only, looked up in the truth
//! maps at the nearest pixel, and reported both sparse (per decoded point)
//! and densified (interpolated onto every truth pixel). Depth errors stay
//! in scene units; report writers convert.

use nalgebra::Vector3;

use crate::codebook::ProjectorPattern;
use crate::decoder::Correspondence;
use crate::interp::{rbf_densify, InterpError};
use crate::simulator::GroundTruth;

/// Summary statistics of absolute errors.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub rms: f64,
    pub max: f64,
}

/// Reduce absolute error values; `None` when there are none.
pub fn error_stats(values: &[f64]) -> Option<ErrorStats> {
    if values.is_empty() {
        return None;
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let rms = (sorted.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    Some(ErrorStats {
        count: n,
        mean,
        median,
        rms,
        max: sorted[n - 1],
    })
}

fn truth_pixel(gt: &GroundTruth, c: &Correspondence) -> Option<usize> {
    let u = c.image_u.round();
    if !(0.0..gt.width as f64).contains(&u) || c.row >= gt.height {
        return None;
    }
    Some(gt.at(u as usize, c.row))
}

/// Absolute depth error of each decoded point with finite truth.
pub fn depth_errors(corrs: &[Correspondence], gt: &GroundTruth) -> Vec<f64> {
    corrs
        .iter()
        .filter_map(|c| {
            let z = gt.depth[truth_pixel(gt, c)?];
            z.is_finite().then(|| (c.depth - z).abs())
        })
        .collect()
}

/// Absolute projector-column error of each decoded point.
pub fn column_errors(corrs: &[Correspondence], gt: &GroundTruth) -> Vec<f64> {
    corrs
        .iter()
        .filter_map(|c| {
            let q = gt.proj_col[truth_pixel(gt, c)?];
            q.is_finite().then(|| (c.proj_col - q).abs())
        })
        .collect()
}

/// Angular error in degrees of supplied per-pixel normals, shading frame.
pub fn normal_errors_deg(normals: &[((usize, usize), [f64; 3])], gt: &GroundTruth) -> Vec<f64> {
    normals
        .iter()
        .filter_map(|&((x, y), n)| {
            if x >= gt.width || y >= gt.height {
                return None;
            }
            let t = gt.normal[gt.at(x, y)];
            if !t[0].is_finite() {
                return None;
            }
            let a = Vector3::new(n[0], n[1], n[2]).normalize();
            let b = Vector3::new(t[0], t[1], t[2]);
            Some(a.dot(&b).clamp(-1.0, 1.0).acos().to_degrees())
        })
        .collect()
}

/// Fraction of decoded points assigned to the code stripe the light truly
/// came from; `None` with no evaluable points.
pub fn stripe_accuracy(
    corrs: &[Correspondence],
    gt: &GroundTruth,
    pattern: &ProjectorPattern,
) -> Option<f64> {
    let w = pattern.params.stripe_width as f64;
    let n_stripes = pattern.symbols.len() as isize;
    let mut total = 0usize;
    let mut correct = 0usize;
    for c in corrs {
        let Some(px) = truth_pixel(gt, c) else {
            continue;
        };
        let q = gt.proj_col[px];
        if !q.is_finite() {
            continue;
        }
        let truth_stripe = (((q - pattern.offset_px) / w).floor() as isize).clamp(0, n_stripes - 1);
        total += 1;
        if truth_stripe == c.stripe as isize {
            correct += 1;
        }
    }
    (total > 0).then(|| correct as f64 / total as f64)
}

/// Pixels the projector actually lit, the denominator of decode density.
pub fn lit_pixel_count(gt: &GroundTruth) -> usize {
    gt.incident.iter().filter(|s| s[0] > 0.0).count()
}

/// Decoded points per lit truth pixel.
pub fn decode_density(corrs: &[Correspondence], gt: &GroundTruth) -> Option<f64> {
    let lit = lit_pixel_count(gt);
    (lit > 0).then(|| corrs.len() as f64 / lit as f64)
}

/// Interpolate decoded depths onto every finite-truth pixel and return the
/// absolute errors there. `sigma` and `neighbors` feed the interpolant.
pub fn densified_depth_errors(
    corrs: &[Correspondence],
    gt: &GroundTruth,
    sigma: f64,
    neighbors: usize,
) -> Result<Vec<f64>, InterpError> {
    let samples: Vec<([f64; 2], f64)> = corrs
        .iter()
        .map(|c| ([c.image_u, c.row as f64], c.depth))
        .collect();
    let mut queries = Vec::new();
    let mut truths = Vec::new();
    for y in 0..gt.height {
        for x in 0..gt.width {
            let z = gt.depth[gt.at(x, y)];
            if z.is_finite() && gt.incident[gt.at(x, y)][0] > 0.0 {
                queries.push([x as f64, y as f64]);
                truths.push(z);
            }
        }
    }
    let interp = rbf_densify(&samples, &queries, sigma, neighbors)?;
    Ok(interp
        .iter()
        .zip(&truths)
        .map(|(a, b)| (a - b).abs())
        .collect())
}
