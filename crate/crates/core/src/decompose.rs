//! Recovery of the reduced surface Mueller matrix from stacks of
//! (incident, observed) Stokes pairs, and its split into specular and
//! polarimetric-diffuse reflection components.
//!
//! The surface matrix produced by [`crate::reflectance::surface_mueller`]
//! has four free elements once reciprocity and the near-coaxial geometry
//! collapse the rest:
//!
//! ```text
//! [ m00  m10 -m20  0   ]
//! [ m10  m11  0    0   ]
//! [ m20  0   -m11  0   ]
//! [ 0    0    0   -m11 ]
//! ```
//!
//! Each pair constrains (m10, m20, m11) through the two polarized output
//! components; stacking the pairs of one correspondence gives an
//! overdetermined linear system solved in least squares. m00 then follows
//! in closed form from the intensity row of the stack's own (center) pair.
//! The split is linear: `c_s = m11`, `c_d = m00 - m11`, and the diffuse
//! polarization direction comes from `m10/c_d`, `m20/c_d`.

use nalgebra::{DMatrix, DVector, Matrix4};
use rayon::prelude::*;
use thiserror::Error;

use crate::decoder::{Correspondence, StokesPair};
use crate::polarization::{apply_mueller, canonical_aolp_deg, MuellerMatrix};

/// Design matrices with a worse condition number than this are rejected;
/// beyond it the polarized rows no longer pin three unknowns.
pub const CONDITION_LIMIT: f64 = 1e8;

/// Fraction of m00 below which the diffuse lobe is treated as absent and
/// the normalized diffuse elements are undefined.
pub const DIFFUSE_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecomposeError {
    #[error("need at least 2 Stokes pairs, got {got}")]
    Underdetermined { got: usize },
    #[error("stack is degenerate (condition number {condition:.3e}); incident angles too similar")]
    DegenerateStack { condition: f64 },
    #[error("diffuse lobe vanishes (m00 {m00:.3e}, m11 {m11:.3e}); normalized diffuse elements undefined")]
    DiffuseDegenerate { m00: f64, m11: f64 },
}

/// The four free elements of the reduced surface matrix, plus the norm of
/// the least-squares residual over the polarized rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuellerEstimate {
    pub m00: f64,
    pub m10: f64,
    pub m20: f64,
    pub m11: f64,
    /// Euclidean norm of the stacked (s1, s2) reconstruction mismatch.
    pub residual: f64,
}

impl MuellerEstimate {
    /// Assemble the full 4x4 reduced matrix.
    pub fn matrix(&self) -> MuellerMatrix {
        MuellerMatrix::new(Matrix4::new(
            self.m00, self.m10, -self.m20, 0.0,
            self.m10, self.m11, 0.0, 0.0,
            self.m20, 0.0, -self.m11, 0.0,
            0.0, 0.0, 0.0, -self.m11,
        ))
    }
}

/// Where the intensity row used for m00 comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum M00Estimator {
    /// The stack's first pair, which the decoder fills with the stripe's own
    /// sample (spatial center of the stack).
    #[default]
    CenterPair,
    /// Mean over every pair with positive incident intensity.
    StackMean,
}

/// Reflection components extracted from a [`MuellerEstimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionSplit {
    /// Specular lobe coefficient.
    pub c_s: f64,
    /// Diffuse lobe coefficient.
    pub c_d: f64,
    /// Normalized diffuse elements: `rho_d * cos(2 phi_d)` and
    /// `rho_d * sin(2 phi_d)`.
    pub md10: f64,
    pub md20: f64,
    /// True when the diffuse lobe was too small to normalize and the split
    /// was substituted with a specular-only fallback.
    pub clamped: bool,
}

impl ReflectionSplit {
    /// Specular-only fallback for stacks whose diffuse lobe vanished; used
    /// by batch drivers that must not drop the point.
    pub fn specular_only(m: &MuellerEstimate) -> Self {
        Self {
            c_s: m.m11,
            c_d: 0.0,
            md10: 0.0,
            md20: 0.0,
            clamped: true,
        }
    }

    /// Degree of linear polarization of the diffuse lobe.
    pub fn diffuse_dolp(&self) -> f64 {
        self.md10.hypot(self.md20)
    }

    /// Angle of linear polarization of the diffuse lobe in degrees,
    /// canonical range; 0 when the lobe vanishes.
    pub fn diffuse_aolp_deg(&self) -> f64 {
        if self.md10 == 0.0 && self.md20 == 0.0 {
            return 0.0;
        }
        canonical_aolp_deg(0.5 * self.md20.atan2(self.md10).to_degrees())
    }
}

/// Solve the stacked polarized rows for (m10, m20, m11) in least squares,
/// then recover m00 from the center pair's intensity row.
pub fn solve_mueller(pairs: &[StokesPair]) -> Result<MuellerEstimate, DecomposeError> {
    solve_mueller_with(pairs, M00Estimator::CenterPair)
}

/// [`solve_mueller`] with an explicit choice of m00 estimator.
pub fn solve_mueller_with(
    pairs: &[StokesPair],
    estimator: M00Estimator,
) -> Result<MuellerEstimate, DecomposeError> {
    let n = pairs.len();
    if n < 2 {
        return Err(DecomposeError::Underdetermined { got: n });
    }

    // Two rows per pair: the observed s1 and s2 components as linear
    // functions of (m10, m20, m11).
    let mut a = DMatrix::<f64>::zeros(2 * n, 3);
    let mut b = DVector::<f64>::zeros(2 * n);
    for (q, pair) in pairs.iter().enumerate() {
        let si = pair.incident;
        let so = pair.observed;
        a[(2 * q, 0)] = si.s0;
        a[(2 * q, 2)] = si.s1;
        b[2 * q] = so.s1;
        a[(2 * q + 1, 1)] = si.s0;
        a[(2 * q + 1, 2)] = -si.s2;
        b[2 * q + 1] = so.s2;
    }

    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        return Err(DecomposeError::DegenerateStack { condition });
    }
    let x = svd.solve(&b, 0.0).expect("svd computed with both factors");
    let residual = (&a * &x - &b).norm();
    let (m10, m20, m11) = (x[0], x[1], x[2]);

    let m00_from = |pair: &StokesPair| -> Option<f64> {
        let si = pair.incident;
        if si.s0 <= 0.0 {
            return None;
        }
        Some((pair.observed.s0 - m10 * si.s1 + m20 * si.s2) / si.s0)
    };
    let m00 = match estimator {
        M00Estimator::CenterPair => m00_from(&pairs[0]),
        M00Estimator::StackMean => {
            let vals: Vec<f64> = pairs.iter().filter_map(m00_from).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        }
    };
    let Some(m00) = m00 else {
        return Err(DecomposeError::DegenerateStack {
            condition: f64::INFINITY,
        });
    };

    Ok(MuellerEstimate {
        m00,
        m10,
        m20,
        m11,
        residual,
    })
}

/// Split an estimate into specular and diffuse components. Fails when the
/// diffuse lobe is too small to carry its normalized elements; batch
/// callers substitute [`ReflectionSplit::specular_only`] in that case.
pub fn split_reflections(m: &MuellerEstimate) -> Result<ReflectionSplit, DecomposeError> {
    let c_s = m.m11;
    let c_d = m.m00 - m.m11;
    if !(c_d > DIFFUSE_FLOOR * m.m00) || c_d <= 0.0 {
        return Err(DecomposeError::DiffuseDegenerate {
            m00: m.m00,
            m11: m.m11,
        });
    }
    Ok(ReflectionSplit {
        c_s,
        c_d,
        md10: m.m10 / c_d,
        md20: m.m20 / c_d,
        clamped: false,
    })
}

/// One correspondence with its recovered matrix and reflection split.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedPoint {
    /// Index into the correspondence slice passed to the batch driver.
    pub index: usize,
    pub estimate: MuellerEstimate,
    pub split: ReflectionSplit,
}

/// Batch decomposition outcome. `skipped` counts stacks the solver
/// rejected; `clamped` counts points that fell back to a specular-only
/// split because their diffuse lobe vanished.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeSummary {
    pub points: Vec<DecomposedPoint>,
    pub skipped: usize,
    pub clamped: usize,
}

/// Decompose every correspondence independently (parallel over points).
pub fn decompose_correspondences(corrs: &[Correspondence]) -> DecomposeSummary {
    let results: Vec<Option<DecomposedPoint>> = corrs
        .par_iter()
        .enumerate()
        .map(|(index, corr)| {
            let estimate = solve_mueller(&corr.pairs).ok()?;
            let split = split_reflections(&estimate)
                .unwrap_or_else(|_| ReflectionSplit::specular_only(&estimate));
            Some(DecomposedPoint {
                index,
                estimate,
                split,
            })
        })
        .collect();

    let skipped = results.iter().filter(|r| r.is_none()).count();
    let points: Vec<DecomposedPoint> = results.into_iter().flatten().collect();
    let clamped = points.iter().filter(|p| p.split.clamped).count();
    DecomposeSummary {
        points,
        skipped,
        clamped,
    }
}

/// Norm of the (s1, s2) mismatch when re-applying the assembled matrix to
/// every incident Stokes in the stack; equals the reported residual.
pub fn reconstruction_residual(m: &MuellerEstimate, pairs: &[StokesPair]) -> f64 {
    let mat = m.matrix();
    pairs
        .iter()
        .map(|p| {
            let re = apply_mueller(&mat, &p.incident);
            let d1 = re.s1 - p.observed.s1;
            let d2 = re.s2 - p.observed.s2;
            d1 * d1 + d2 * d2
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{assemble_pattern, generate_sequence, CodeParams};
    use crate::decoder::{reconstruct_single_shot, DecodeConfig};
    use crate::polarization::StokesVector;
    use crate::reflectance::surface_mueller;
    use crate::simulator::{
        render_frame, test_rig, Material, MuellerOverride, RenderOptions, Scene, SceneObject,
        Surface,
    };
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reduced(m00: f64, m10: f64, m20: f64, m11: f64) -> MuellerMatrix {
        MuellerEstimate {
            m00,
            m10,
            m20,
            m11,
            residual: 0.0,
        }
        .matrix()
    }

    fn stack(m: &MuellerMatrix, angles_deg: &[f64]) -> Vec<StokesPair> {
        angles_deg
            .iter()
            .map(|&phi| {
                let incident = StokesVector::linear(1.0, 1.0, phi);
                StokesPair {
                    incident,
                    observed: apply_mueller(m, &incident),
                }
            })
            .collect()
    }

    #[test]
    fn two_pair_stack_recovers_the_matrix_exactly() {
        let m = reduced(1.0, 0.07, 0.02, 0.3);
        let pairs = stack(&m, &[0.0, 40.0]);
        let est = solve_mueller(&pairs).unwrap();
        assert!((est.m00 - 1.0).abs() < 1e-12);
        assert!((est.m10 - 0.07).abs() < 1e-12);
        assert!((est.m20 - 0.02).abs() < 1e-12);
        assert!((est.m11 - 0.3).abs() < 1e-12);
        assert!(est.residual < 1e-12);
    }

    #[test]
    fn single_pair_is_underdetermined() {
        let m = reduced(1.0, 0.07, 0.02, 0.3);
        let pairs = stack(&m, &[30.0]);
        assert_eq!(
            solve_mueller(&pairs),
            Err(DecomposeError::Underdetermined { got: 1 })
        );
    }

    #[test]
    fn identical_incident_angles_are_degenerate() {
        let m = reduced(1.0, 0.07, 0.02, 0.3);
        let pairs = stack(&m, &[25.0, 25.0]);
        match solve_mueller(&pairs) {
            Err(DecomposeError::DegenerateStack { condition }) => {
                assert!(condition > CONDITION_LIMIT);
            }
            other => panic!("expected degenerate stack, got {other:?}"),
        }
    }

    #[test]
    fn split_arithmetic_matches_the_closed_form() {
        let est = MuellerEstimate {
            m00: 1.0,
            m10: 0.07,
            m20: 0.0,
            m11: 0.3,
            residual: 0.0,
        };
        let split = split_reflections(&est).unwrap();
        assert!((split.c_s - 0.3).abs() < 1e-15);
        assert!((split.c_d - 0.7).abs() < 1e-15);
        assert!((split.md10 - 0.1).abs() < 1e-15);
        assert!(split.md20.abs() < 1e-15);
        assert!(!split.clamped);
        assert!((split.diffuse_dolp() - 0.1).abs() < 1e-15);
        assert!(split.diffuse_aolp_deg().abs() < 1e-12);
    }

    #[test]
    fn pure_specular_split_is_degenerate() {
        let est = MuellerEstimate {
            m00: 0.3,
            m10: 0.0,
            m20: 0.0,
            m11: 0.3,
            residual: 0.0,
        };
        assert!(matches!(
            split_reflections(&est),
            Err(DecomposeError::DiffuseDegenerate { .. })
        ));
        let fallback = ReflectionSplit::specular_only(&est);
        assert_eq!(fallback.c_s, 0.3);
        assert_eq!(fallback.c_d, 0.0);
        assert!(fallback.clamped);
        assert_eq!(fallback.diffuse_aolp_deg(), 0.0);
    }

    #[test]
    fn residual_matches_reapplying_the_estimate() {
        let m = reduced(1.0, 0.07, 0.02, 0.3);
        let mut pairs = stack(&m, &[0.0, 26.7, 53.3]);
        // Deterministic perturbation of the polarized components only.
        pairs[0].observed.s1 += 1e-3;
        pairs[1].observed.s2 -= 2e-3;
        pairs[2].observed.s1 -= 5e-4;
        let est = solve_mueller(&pairs).unwrap();
        assert!(est.residual > 1e-5);
        let recon = reconstruction_residual(&est, &pairs);
        assert!((recon - est.residual).abs() < 1e-12);
        // The center pair's intensity row is matched exactly by choice of m00.
        let re = apply_mueller(&est.matrix(), &pairs[0].incident);
        assert!((re.s0 - pairs[0].observed.s0).abs() < 1e-12);
    }

    #[test]
    fn stack_mean_agrees_on_clean_data() {
        let m = reduced(0.8, -0.05, 0.03, 0.25);
        let pairs = stack(&m, &[13.3, 40.0, 66.7]);
        let center = solve_mueller_with(&pairs, M00Estimator::CenterPair).unwrap();
        let mean = solve_mueller_with(&pairs, M00Estimator::StackMean).unwrap();
        assert!((center.m00 - mean.m00).abs() < 1e-12);
        assert!((center.m11 - mean.m11).abs() < 1e-12);
    }

    #[test]
    fn plane_pipeline_matches_the_rendered_lobes() {
        let params = CodeParams {
            k: 7,
            n: 4,
            aolp_min_deg: 0.0,
            aolp_max_deg: 80.0,
            stripe_width: 12,
        };
        let seq = generate_sequence(&params).unwrap();
        let pattern = assemble_pattern(&params, &seq).unwrap();
        let rig = test_rig();
        let truth = MuellerOverride {
            c_s: 0.2,
            c_d: 0.5,
            rho_d: 0.03,
            phi_d_deg: 20.0,
        };
        let scene = Scene {
            objects: vec![SceneObject {
                surface: Surface::Plane {
                    point: [0.0, 0.0, 1.0],
                    normal: [0.0, 0.0, -1.0],
                },
                material: Material {
                    mueller_override: Some(truth),
                    ..Material::default()
                },
                velocity: [0.0; 3],
            }],
        };
        let (image, _) = render_frame(&scene, &rig, &pattern, &RenderOptions::default());
        let result = reconstruct_single_shot(&image, &pattern, &rig, &DecodeConfig::default());
        assert!(result.correspondences.len() > 1000);

        let summary = decompose_correspondences(&result.correspondences);
        assert_eq!(summary.skipped, 0);
        assert_eq!(summary.clamped, 0);
        assert_eq!(summary.points.len(), result.correspondences.len());

        let want_md10 = truth.rho_d * (2.0 * truth.phi_d_deg.to_radians()).cos();
        let want_md20 = truth.rho_d * (2.0 * truth.phi_d_deg.to_radians()).sin();
        for p in &summary.points {
            assert_relative_eq!(p.split.c_s, truth.c_s, max_relative = 1e-6);
            assert_relative_eq!(p.split.c_d, truth.c_d, max_relative = 1e-6);
            assert_relative_eq!(p.split.md10, want_md10, max_relative = 1e-6);
            assert_relative_eq!(p.split.md20, want_md20, max_relative = 1e-6);
            assert_relative_eq!(p.split.diffuse_dolp(), truth.rho_d, max_relative = 1e-6);
            assert_relative_eq!(
                p.split.diffuse_aolp_deg(),
                truth.phi_d_deg,
                epsilon = 1e-6
            );
        }
    }

    fn level_angles() -> impl Strategy<Value = Vec<f64>> {
        proptest::sample::subsequence((0..7u8).collect::<Vec<_>>(), 2..=5)
            .prop_map(|levels| levels.iter().map(|&l| l as f64 * 80.0 / 6.0).collect())
    }

    proptest! {
        #[test]
        fn noiseless_round_trip_is_exact(
            c_s in 0.01f64..1.0,
            c_d in 0.01f64..2.0,
            rho_d in 0.0f64..0.5,
            phi_d in -90.0f64..90.0,
            angles in level_angles(),
        ) {
            let m = surface_mueller(c_s, c_d, rho_d, phi_d);
            let pairs = stack(&m, &angles);
            let est = solve_mueller(&pairs).unwrap();
            prop_assert!((est.m00 - (c_s + c_d)).abs() < 1e-10 * (1.0 + c_s + c_d));
            prop_assert!((est.m11 - c_s).abs() < 1e-10);
            prop_assert!(est.residual < 1e-10);
            let split = split_reflections(&est).unwrap();
            prop_assert!((split.c_d - c_d).abs() < 1e-9 * (1.0 + c_d));
            prop_assert!((split.diffuse_dolp() - rho_d).abs() < 1e-9);
        }

        #[test]
        fn scaling_observed_stokes_scales_the_matrix_not_the_split(
            lambda in 0.1f64..10.0,
            angles in level_angles(),
        ) {
            let m = reduced(1.0, 0.06, -0.03, 0.35);
            let pairs = stack(&m, &angles);
            let scaled: Vec<StokesPair> = pairs
                .iter()
                .map(|p| StokesPair {
                    incident: p.incident,
                    observed: StokesVector::new(
                        p.observed.s0 * lambda,
                        p.observed.s1 * lambda,
                        p.observed.s2 * lambda,
                        0.0,
                    ),
                })
                .collect();
            let base = solve_mueller(&pairs).unwrap();
            let big = solve_mueller(&scaled).unwrap();
            prop_assert!((big.m00 - lambda * base.m00).abs() < 1e-9 * lambda);
            prop_assert!((big.m10 - lambda * base.m10).abs() < 1e-9 * lambda);
            prop_assert!((big.m20 - lambda * base.m20).abs() < 1e-9 * lambda);
            prop_assert!((big.m11 - lambda * base.m11).abs() < 1e-9 * lambda);
            let split_a = split_reflections(&base).unwrap();
            let split_b = split_reflections(&big).unwrap();
            prop_assert!((split_a.md10 - split_b.md10).abs() < 1e-9);
            prop_assert!((split_a.md20 - split_b.md20).abs() < 1e-9);
        }
    }
}
