//! Scattered-data densification with radial basis functions.
//!
//! Decoded clouds are sparse along scanlines; evaluation and visualization
//! want per-pixel maps. Each query point is interpolated from its nearest
//! samples with a Gaussian kernel plus an affine tail, so locally planar
//! fields are reproduced exactly and the interpolant degrades gracefully
//! to a plane fit where samples are thin.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpError {
    #[error("radial basis interpolation needs at least 3 points, got {got}")]
    TooFewPoints { got: usize },
    #[error("kernel width must be positive, got {got}")]
    BadSigma { got: f64 },
}

/// Uniform-cell spatial hash over sample positions. Nearest-neighbor
/// queries walk outward ring by ring; a ring strictly farther than the
/// current k-th distance terminates the search.
struct GridIndex {
    cell: f64,
    x0: f64,
    y0: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl GridIndex {
    fn build(points: &[[f64; 2]]) -> Self {
        let (mut xmin, mut ymin) = (f64::MAX, f64::MAX);
        let (mut xmax, mut ymax) = (f64::MIN, f64::MIN);
        for p in points {
            xmin = xmin.min(p[0]);
            xmax = xmax.max(p[0]);
            ymin = ymin.min(p[1]);
            ymax = ymax.max(p[1]);
        }
        let span = (xmax - xmin).max(ymax - ymin).max(1e-12);
        // Aim for one point per cell on average.
        let cell = span / (points.len() as f64).sqrt().max(1.0);
        let nx = ((xmax - xmin) / cell).floor() as usize + 1;
        let ny = ((ymax - ymin) / cell).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (i, p) in points.iter().enumerate() {
            let cx = (((p[0] - xmin) / cell) as usize).min(nx - 1);
            let cy = (((p[1] - ymin) / cell) as usize).min(ny - 1);
            buckets[cy * nx + cx].push(i as u32);
        }
        Self {
            cell,
            x0: xmin,
            y0: ymin,
            nx,
            ny,
            buckets,
        }
    }

    /// Indices of the `k` samples nearest to `q`, sorted by distance.
    fn nearest(&self, points: &[[f64; 2]], q: &[f64; 2], k: usize) -> Vec<usize> {
        let k = k.min(points.len());
        let qcx = ((q[0] - self.x0) / self.cell).floor() as isize;
        let qcy = ((q[1] - self.y0) / self.cell).floor() as isize;
        let mut found: Vec<(f64, u32)> = Vec::with_capacity(4 * k);
        // Enough rings to sweep the whole grid from any outside cell.
        let max_ring = qcx
            .abs()
            .max((self.nx as isize - 1 - qcx).abs())
            .max(qcy.abs())
            .max((self.ny as isize - 1 - qcy).abs());
        for ring in 0..=max_ring {
            if found.len() >= k {
                // Points in farther rings are at least (ring - 1) cells away.
                let guaranteed = (ring - 1).max(0) as f64 * self.cell;
                found.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                if found[k - 1].0 <= guaranteed * guaranteed {
                    break;
                }
            }
            for cy in (qcy - ring).max(0)..=(qcy + ring).min(self.ny as isize - 1) {
                for cx in (qcx - ring).max(0)..=(qcx + ring).min(self.nx as isize - 1) {
                    let on_ring = (cx - qcx).abs() == ring || (cy - qcy).abs() == ring;
                    if !on_ring {
                        continue;
                    }
                    for &i in &self.buckets[cy as usize * self.nx + cx as usize] {
                        let p = &points[i as usize];
                        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                        found.push((d2, i));
                    }
                }
            }
        }
        found.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        found.truncate(k);
        found.into_iter().map(|(_, i)| i as usize).collect()
    }
}

/// Solve the local kernel-plus-tail system for one neighborhood and
/// evaluate at the query. `ridge` is added to the kernel block.
///
/// Gaussian kernels over tightly spaced samples are monstrously
/// ill-conditioned; a pivoted solve of the raw saddle system then returns
/// enormous weights that cancel at the sites and oscillate between them.
/// Instead the tail is eliminated first: weights are confined to the
/// orthogonal complement of the tail columns, the reduced kernel system is
/// solved by truncated SVD, and the tail coefficients absorb the rest.
/// Polynomial data then lands exactly in the tail no matter how sick the
/// kernel is.
fn local_value(
    samples: &[([f64; 2], f64)],
    idx: &[usize],
    q: &[f64; 2],
    inv_two_sigma_sq: f64,
    ridge: f64,
    affine_tail: bool,
) -> Option<f64> {
    let k = idx.len();
    let t = if affine_tail { 3 } else { 1 };
    if k < t {
        return None;
    }
    let mut phi = DMatrix::<f64>::zeros(k, k);
    let mut f = DMatrix::<f64>::zeros(k, 1);
    // Tail columns padded with the identity; QR of the pad yields a full
    // orthogonal basis whose leading columns span the tail.
    let mut pad = DMatrix::<f64>::zeros(k, t + k);
    for (r, &i) in idx.iter().enumerate() {
        let (pi, fi) = (&samples[i].0, samples[i].1);
        for (c, &j) in idx.iter().enumerate() {
            let pj = &samples[j].0;
            let d2 = (pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2);
            phi[(r, c)] = (-d2 * inv_two_sigma_sq).exp();
        }
        phi[(r, r)] += ridge;
        f[(r, 0)] = fi;
        pad[(r, 0)] = 1.0;
        if affine_tail {
            pad[(r, 1)] = pi[0];
            pad[(r, 2)] = pi[1];
        }
        pad[(r, t + r)] = 1.0;
    }
    let p = pad.columns(0, t).into_owned();
    let qr = pad.qr();
    let qfull = qr.q();
    let r = qr.r();
    let tail_scale = (0..t).map(|i| r[(i, i)].abs()).fold(f64::MAX, f64::min);
    if tail_scale <= 1e-10 * (k as f64).sqrt() {
        // Degenerate sites (collinear or coincident) cannot carry this
        // tail; the caller retries with a shorter one.
        return None;
    }
    let q1 = qfull.columns(0, t);
    let q2 = qfull.columns(t, k - t);

    // Kernel weights w = Q2 z never excite the tail directions.
    let w = if k > t {
        let b = &q2.transpose() * &phi * &q2;
        let rhs2 = &q2.transpose() * &f;
        let svd = b.svd(true, true);
        let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
        let z = svd.solve(&rhs2, 1e-13 * smax).ok()?;
        &q2 * z
    } else {
        DMatrix::<f64>::zeros(k, 1)
    };
    // Back-substitute the tail: R1 c = Q1^T (f - Phi w).
    let resid = &f - &phi * &w;
    let rhs1 = &q1.transpose() * &resid;
    let r1 = r.view((0, 0), (t, t)).into_owned();
    let c = r1.solve_upper_triangular(&rhs1)?;

    let scale = 1.0 + f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let site_resid = &phi * &w + &p * &c - &f;
    if site_resid.iter().any(|r| r.abs() > 1e-7 * scale) {
        return None;
    }

    let mut value = c[(0, 0)];
    if affine_tail {
        value += c[(1, 0)] * q[0] + c[(2, 0)] * q[1];
    }
    for (r, &i) in idx.iter().enumerate() {
        let p = &samples[i].0;
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        value += w[(r, 0)] * (-d2 * inv_two_sigma_sq).exp();
    }
    value.is_finite().then_some(value)
}

/// Interpolate scattered samples onto query points. Each query solves a
/// Gaussian-kernel system over its `neighbors` nearest samples, augmented
/// with an affine tail so planes are reproduced exactly. A singular
/// neighborhood system falls back to a ridge-regularized solve (1e-8 on
/// the kernel diagonal), then to a constant tail, then to the
/// neighborhood mean, so every query yields a finite value.
pub fn rbf_densify(
    samples: &[([f64; 2], f64)],
    queries: &[[f64; 2]],
    sigma: f64,
    neighbors: usize,
) -> Result<Vec<f64>, InterpError> {
    if samples.len() < 3 {
        return Err(InterpError::TooFewPoints { got: samples.len() });
    }
    if !(sigma > 0.0) {
        return Err(InterpError::BadSigma { got: sigma });
    }
    let positions: Vec<[f64; 2]> = samples.iter().map(|s| s.0).collect();
    let index = GridIndex::build(&positions);
    let k = neighbors.max(3);
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    Ok(queries
        .par_iter()
        .map(|q| {
            let idx = index.nearest(&positions, q, k);
            local_value(samples, &idx, q, inv_two_sigma_sq, 0.0, true)
                .or_else(|| local_value(samples, &idx, q, inv_two_sigma_sq, 1e-8, true))
                .or_else(|| local_value(samples, &idx, q, inv_two_sigma_sq, 1e-8, false))
                .unwrap_or_else(|| {
                    let sum: f64 = idx.iter().map(|&i| samples[i].1).sum();
                    sum / idx.len() as f64
                })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn jittered_cloud(seed: u64, n: usize, f: impl Fn(f64, f64) -> f64) -> Vec<([f64; 2], f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x = rng.gen_range(-2.0..2.0);
                let y = rng.gen_range(-1.0..1.0);
                ([x, y], f(x, y))
            })
            .collect()
    }

    #[test]
    fn interpolation_is_exact_at_the_sample_sites() {
        let cloud = jittered_cloud(3, 60, |x, y| (1.3 * x).sin() + 0.5 * y * y);
        let queries: Vec<[f64; 2]> = cloud.iter().map(|s| s.0).collect();
        let out = rbf_densify(&cloud, &queries, 0.8, 16).unwrap();
        for (s, v) in cloud.iter().zip(&out) {
            assert!((s.1 - v).abs() < 1e-8, "site {:?}: {} vs {}", s.0, s.1, v);
        }
    }

    #[test]
    fn planes_are_reproduced_between_and_beyond_samples() {
        let plane = |x: f64, y: f64| 0.3 + 0.7 * x - 1.1 * y;
        let cloud = jittered_cloud(11, 80, plane);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let queries: Vec<[f64; 2]> = (0..200)
            .map(|_| [rng.gen_range(-2.2..2.2), rng.gen_range(-1.2..1.2)])
            .collect();
        let out = rbf_densify(&cloud, &queries, 0.6, 12).unwrap();
        for (q, v) in queries.iter().zip(&out) {
            let truth = plane(q[0], q[1]);
            assert!((truth - v).abs() < 1e-6, "query {q:?}: {v} vs {truth}");
        }
    }

    #[test]
    fn preconditions_are_enforced() {
        let two = vec![([0.0, 0.0], 1.0), ([1.0, 0.0], 2.0)];
        assert_eq!(
            rbf_densify(&two, &[[0.5, 0.0]], 1.0, 8),
            Err(InterpError::TooFewPoints { got: 2 })
        );
        let three = vec![([0.0, 0.0], 1.0), ([1.0, 0.0], 2.0), ([0.0, 1.0], 3.0)];
        assert_eq!(
            rbf_densify(&three, &[[0.5, 0.0]], 0.0, 8),
            Err(InterpError::BadSigma { got: 0.0 })
        );
    }

    #[test]
    fn degenerate_neighborhoods_still_produce_finite_values() {
        // Collinear points defeat the affine tail; duplicated points defeat
        // the kernel matrix. Both must fall through to a usable value.
        let cloud = vec![
            ([0.0, 0.0], 1.0),
            ([1.0, 0.0], 2.0),
            ([2.0, 0.0], 3.0),
            ([2.0, 0.0], 3.0),
        ];
        let out = rbf_densify(&cloud, &[[1.0, 0.5], [0.0, 0.0]], 1.0, 4).unwrap();
        for v in &out {
            assert!(v.is_finite());
            assert!((0.0..=4.0).contains(v), "{v}");
        }
    }

    proptest! {
        #[test]
        fn grid_search_agrees_with_brute_force(
            pts in prop::collection::vec(([-5.0f64..5.0, -5.0f64..5.0], 0.0f64..1.0), 3..40),
            q in [-6.0f64..6.0, -6.0f64..6.0],
            k in 1usize..8,
        ) {
            let cloud: Vec<([f64; 2], f64)> = pts.clone();
            let positions: Vec<[f64; 2]> = cloud.iter().map(|s| s.0).collect();
            let index = GridIndex::build(&positions);
            let got = index.nearest(&positions, &q, k);
            let mut brute: Vec<(f64, usize)> = positions
                .iter()
                .enumerate()
                .map(|(i, p)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2), i))
                .collect();
            brute.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let k = k.min(positions.len());
            prop_assert_eq!(got.len(), k);
            // Compare distances, not indices: ties may resolve either way.
            for (g, b) in got.iter().zip(&brute[..k]) {
                let dg = (positions[*g][0] - q[0]).powi(2) + (positions[*g][1] - q[1]).powi(2);
                prop_assert!((dg - b.0).abs() < 1e-12);
            }
        }
    }
}
