//! Stokes-vector and Mueller-matrix algebra.
//!
//! Light states are carried as Stokes vectors `(s0, s1, s2, s3)` or in the
//! equivalent `(mean intensity, DoLP, AoLP)` parameterization. Angles are
//! degrees at every public boundary and radians only inside trig evaluation.
//! The canonical AoLP range is `[-90, 90)`; AoLP is 180-degree periodic.

use nalgebra::Matrix4;
use thiserror::Error;

/// Absolute slack tolerated on the realizability bound, for round-off.
pub const REALIZABILITY_SLACK: f64 = 1e-9;

/// Errors raised by the polarization algebra.
#[derive(Debug, Error, PartialEq)]
pub enum PolError {
    #[error("negative filter intensity {value}")]
    NegativeIntensity { value: f64 },
    #[error("degenerate light: s0 <= 0")]
    DegenerateLight,
    #[error("mosaic requires even dimensions, got {width}x{height}")]
    OddDimensions { width: usize, height: usize },
    #[error("raw/polarimetric image dimension mismatch")]
    DimensionMismatch,
}

/// Reduce an AoLP in degrees to the canonical range `[-90, 90)`.
pub fn canonical_aolp_deg(phi_deg: f64) -> f64 {
    (phi_deg + 90.0).rem_euclid(180.0) - 90.0
}

/// 180-degree-periodic angular distance between two AoLPs, in `[0, 90]`.
pub fn aolp_distance_deg(a_deg: f64, b_deg: f64) -> f64 {
    let d = (a_deg - b_deg).rem_euclid(180.0);
    d.min(180.0 - d)
}

/// Stokes vector of partially polarized light.
///
/// `s0` is radiance, `s1`/`s2` the linear components and `s3` the circular
/// component. Every producer in this crate leaves `s3` at zero; a
/// division-of-focal-plane camera cannot observe it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StokesVector {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    pub fn new(s0: f64, s1: f64, s2: f64, s3: f64) -> Self {
        Self { s0, s1, s2, s3 }
    }

    pub fn unpolarized(s0: f64) -> Self {
        Self::new(s0, 0.0, 0.0, 0.0)
    }

    /// Fully described linear polarization state: intensity `s0`, degree
    /// `dolp` and angle `aolp_deg`.
    pub fn linear(s0: f64, dolp: f64, aolp_deg: f64) -> Self {
        let two_phi = 2.0 * aolp_deg.to_radians();
        Self::new(
            s0,
            s0 * dolp * two_phi.cos(),
            s0 * dolp * two_phi.sin(),
            0.0,
        )
    }

    /// Euclidean norm of the polarized part.
    pub fn polarized_norm(&self) -> f64 {
        (self.s1 * self.s1 + self.s2 * self.s2 + self.s3 * self.s3).sqrt()
    }

    /// Physical realizability: the polarized part cannot exceed `s0`.
    pub fn is_realizable(&self) -> bool {
        self.s0 >= 0.0 && self.polarized_norm() <= self.s0 + REALIZABILITY_SLACK
    }
}

/// `(mean intensity, DoLP, AoLP)` view of a linear polarization state.
///
/// `aolp_defined` is false for fully unpolarized light, where the angle is
/// meaningless; `aolp_deg` is reported as zero in that case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPolarizationState {
    pub mean_intensity: f64,
    pub dolp: f64,
    pub aolp_deg: f64,
    pub aolp_defined: bool,
}

/// 4x4 Mueller matrix acting on Stokes vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MuellerMatrix {
    pub m: Matrix4<f64>,
}

impl MuellerMatrix {
    pub fn new(m: Matrix4<f64>) -> Self {
        Self { m }
    }

    pub fn identity() -> Self {
        Self::new(Matrix4::identity())
    }

    /// Pure specular reflection block `diag(1, 1, -1, -1)`.
    pub fn specular_flip() -> Self {
        Self::new(Matrix4::from_diagonal(&nalgebra::Vector4::new(
            1.0, 1.0, -1.0, -1.0,
        )))
    }
}

/// Reconstruct a Stokes vector from four polarizer-filtered intensities at
/// 0, 45, 90 and 135 degrees.
///
/// If noise pushes the linear norm past `s0`, `(s1, s2)` are rescaled onto
/// the realizability boundary instead of rejecting the sample, so decoding
/// keeps running on noisy input.
pub fn stokes_from_intensities(
    i0: f64,
    i45: f64,
    i90: f64,
    i135: f64,
) -> Result<StokesVector, PolError> {
    for v in [i0, i45, i90, i135] {
        if v < 0.0 {
            return Err(PolError::NegativeIntensity { value: v });
        }
    }
    let s0 = i0 + i90;
    let mut s1 = i0 - i90;
    let mut s2 = i45 - i135;
    let norm = (s1 * s1 + s2 * s2).sqrt();
    if norm > s0 && norm > 0.0 {
        let scale = s0 / norm;
        s1 *= scale;
        s2 *= scale;
    }
    Ok(StokesVector::new(s0, s1, s2, 0.0))
}

/// Recover `(mean intensity, DoLP, AoLP)` from a Stokes vector.
pub fn to_linear_state(s: &StokesVector) -> Result<LinearPolarizationState, PolError> {
    if s.s0 <= 0.0 {
        return Err(PolError::DegenerateLight);
    }
    let norm = (s.s1 * s.s1 + s.s2 * s.s2).sqrt();
    let dolp = (norm / s.s0).min(1.0);
    if norm == 0.0 {
        return Ok(LinearPolarizationState {
            mean_intensity: s.s0 / 2.0,
            dolp: 0.0,
            aolp_deg: 0.0,
            aolp_defined: false,
        });
    }
    let aolp_deg = canonical_aolp_deg((0.5 * s.s2.atan2(s.s1)).to_degrees());
    Ok(LinearPolarizationState {
        mean_intensity: s.s0 / 2.0,
        dolp,
        aolp_deg,
        aolp_defined: true,
    })
}

/// Apply a Mueller matrix to a Stokes vector.
pub fn apply_mueller(m: &MuellerMatrix, s: &StokesVector) -> StokesVector {
    let v = m.m * nalgebra::Vector4::new(s.s0, s.s1, s.s2, s.s3);
    StokesVector::new(v[0], v[1], v[2], v[3])
}

/// Intensity behind an ideal linear polarizer at `filter_angle_deg`.
pub fn intensity_through_polarizer(state: &LinearPolarizationState, filter_angle_deg: f64) -> f64 {
    let arg = 2.0 * filter_angle_deg.to_radians() - 2.0 * state.aolp_deg.to_radians();
    state.mean_intensity * (1.0 + state.dolp * arg.cos())
}

/// Per-pixel, per-channel Stokes image; `s3` is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarimetricImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    data: Vec<[f64; 3]>,
}

impl PolarimetricImage {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![[0.0; 3]; width * height * channels],
        }
    }

    #[inline]
    fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn stokes(&self, x: usize, y: usize, c: usize) -> StokesVector {
        let [s0, s1, s2] = self.data[self.idx(x, y, c)];
        StokesVector::new(s0, s1, s2, 0.0)
    }

    #[inline]
    pub fn set_stokes(&mut self, x: usize, y: usize, c: usize, s: StokesVector) {
        let i = self.idx(x, y, c);
        self.data[i] = [s.s0, s.s1, s.s2];
    }

    /// Raw component access used by the file codecs.
    pub fn components(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn components_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.data
    }

    /// Maximum `s0` over all pixels and channels, the reference for
    /// radiance-floor thresholds.
    pub fn max_s0(&self) -> f64 {
        self.data.iter().map(|p| p[0]).fold(0.0, f64::max)
    }
}

/// Raw intensity image produced by [`mosaic`], one float per photosite.
#[derive(Debug, Clone, PartialEq)]
pub struct RawIntensityImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Polarizer angle of the photosite at `(x, y)` on the 2x2 mosaic.
///
/// Layout: `[[0, 45], [135, 90]]` degrees over `(y % 2, x % 2)`.
pub fn mosaic_filter_angle_deg(x: usize, y: usize) -> f64 {
    const ANGLES: [[f64; 2]; 2] = [[0.0, 45.0], [135.0, 90.0]];
    ANGLES[y % 2][x % 2]
}

/// Sample an ideal division-of-focal-plane sensor: each photosite sees its
/// own pixel's Stokes state through the mosaic polarizer.
pub fn mosaic(image: &PolarimetricImage) -> Result<RawIntensityImage, PolError> {
    if image.width % 2 != 0 || image.height % 2 != 0 {
        return Err(PolError::OddDimensions {
            width: image.width,
            height: image.height,
        });
    }
    let mut data = vec![0.0; image.width * image.height * image.channels];
    for y in 0..image.height {
        for x in 0..image.width {
            let angle = mosaic_filter_angle_deg(x, y);
            for c in 0..image.channels {
                let s = image.stokes(x, y, c);
                let state = match to_linear_state(&s) {
                    Ok(state) => state,
                    Err(PolError::DegenerateLight) => LinearPolarizationState {
                        mean_intensity: 0.0,
                        dolp: 0.0,
                        aolp_deg: 0.0,
                        aolp_defined: false,
                    },
                    Err(e) => return Err(e),
                };
                data[(y * image.width + x) * image.channels + c] =
                    intensity_through_polarizer(&state, angle);
            }
        }
    }
    Ok(RawIntensityImage {
        width: image.width,
        height: image.height,
        channels: image.channels,
        data,
    })
}

/// Reconstruct Stokes vectors from a mosaic image, one output pixel per 2x2
/// block (half resolution).
pub fn demosaic(raw: &RawIntensityImage) -> Result<PolarimetricImage, PolError> {
    if raw.width % 2 != 0 || raw.height % 2 != 0 {
        return Err(PolError::OddDimensions {
            width: raw.width,
            height: raw.height,
        });
    }
    let mut out = PolarimetricImage::zeros(raw.width / 2, raw.height / 2, raw.channels);
    let at = |x: usize, y: usize, c: usize| raw.data[(y * raw.width + x) * raw.channels + c];
    for by in 0..raw.height / 2 {
        for bx in 0..raw.width / 2 {
            let (x0, y0) = (2 * bx, 2 * by);
            for c in 0..raw.channels {
                let i0 = at(x0, y0, c);
                let i45 = at(x0 + 1, y0, c);
                let i135 = at(x0, y0 + 1, c);
                let i90 = at(x0 + 1, y0 + 1, c);
                let s = stokes_from_intensities(i0, i45, i90, i135)?;
                out.set_stokes(bx, by, c, s);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn stokes_from_intensities_spec_cases() {
        let s = stokes_from_intensities(1.0, 0.5, 0.0, 0.5).unwrap();
        assert_eq!((s.s0, s.s1, s.s2, s.s3), (1.0, 1.0, 0.0, 0.0));
        let s = stokes_from_intensities(0.5, 1.0, 0.5, 0.0).unwrap();
        assert_eq!((s.s0, s.s1, s.s2, s.s3), (1.0, 0.0, 1.0, 0.0));
        let s = stokes_from_intensities(0.5, 0.5, 0.5, 0.5).unwrap();
        assert_eq!((s.s0, s.s1, s.s2, s.s3), (1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn stokes_from_intensities_rejects_negative() {
        assert!(matches!(
            stokes_from_intensities(-0.1, 0.0, 0.0, 0.0),
            Err(PolError::NegativeIntensity { .. })
        ));
    }

    #[test]
    fn stokes_from_intensities_clamps_to_realizable() {
        // i45 + i135 much smaller than i0 + i90 drives |s| past s0.
        let s = stokes_from_intensities(1.0, 0.0, 0.0, 1.5).unwrap();
        assert!(s.is_realizable());
        assert_abs_diff_eq!(s.polarized_norm(), s.s0, epsilon = 1e-12);
    }

    #[test]
    fn to_linear_state_spec_cases() {
        let st = to_linear_state(&StokesVector::new(1.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!((st.mean_intensity, st.dolp, st.aolp_deg), (0.5, 1.0, 0.0));
        let st = to_linear_state(&StokesVector::new(2.0, 0.0, 2.0, 0.0)).unwrap();
        assert_eq!((st.mean_intensity, st.dolp, st.aolp_deg), (1.0, 1.0, 45.0));
        let st = to_linear_state(&StokesVector::unpolarized(1.0)).unwrap();
        assert!(!st.aolp_defined);
        assert_eq!(st.dolp, 0.0);
        assert!(matches!(
            to_linear_state(&StokesVector::unpolarized(0.0)),
            Err(PolError::DegenerateLight)
        ));
    }

    #[test]
    fn apply_mueller_spec_cases() {
        let s = StokesVector::linear(1.0, 0.8, 30.0);
        let out = apply_mueller(&MuellerMatrix::identity(), &s);
        assert_eq!(out, s);

        // Pure specular flips the sign of the AoLP, keeps the DoLP.
        let out = apply_mueller(&MuellerMatrix::specular_flip(), &s);
        let st = to_linear_state(&out).unwrap();
        assert_abs_diff_eq!(st.dolp, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(st.aolp_deg, -30.0, epsilon = 1e-12);

        // Diffuse-only first column acting on unpolarized light.
        let mut m = Matrix4::zeros();
        m[(0, 0)] = 1.0;
        m[(1, 0)] = 0.1;
        let out = apply_mueller(&MuellerMatrix::new(m), &StokesVector::unpolarized(1.0));
        let st = to_linear_state(&out).unwrap();
        assert_abs_diff_eq!(st.dolp, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(st.aolp_deg, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn polarizer_spec_cases() {
        let state = LinearPolarizationState {
            mean_intensity: 1.0,
            dolp: 1.0,
            aolp_deg: 0.0,
            aolp_defined: true,
        };
        assert_abs_diff_eq!(intensity_through_polarizer(&state, 0.0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(intensity_through_polarizer(&state, 90.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(intensity_through_polarizer(&state, 45.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mosaic_requires_even_dimensions() {
        let img = PolarimetricImage::zeros(3, 4, 1);
        assert!(matches!(mosaic(&img), Err(PolError::OddDimensions { .. })));
    }

    #[test]
    fn mosaic_of_unpolarized_field_is_flat() {
        let mut img = PolarimetricImage::zeros(4, 4, 1);
        for y in 0..4 {
            for x in 0..4 {
                img.set_stokes(x, y, 0, StokesVector::unpolarized(2.0));
            }
        }
        let raw = mosaic(&img).unwrap();
        for v in &raw.data {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mosaic_demosaic_uniform_round_trip() {
        let s = StokesVector::linear(1.3, 0.9, 27.0);
        let mut img = PolarimetricImage::zeros(6, 4, 1);
        for y in 0..4 {
            for x in 0..6 {
                img.set_stokes(x, y, 0, s);
            }
        }
        let back = demosaic(&mosaic(&img).unwrap()).unwrap();
        assert_eq!(back.width, 3);
        assert_eq!(back.height, 2);
        for y in 0..2 {
            for x in 0..3 {
                let r = back.stokes(x, y, 0);
                assert_abs_diff_eq!(r.s0, s.s0, epsilon = 1e-12);
                assert_abs_diff_eq!(r.s1, s.s1, epsilon = 1e-12);
                assert_abs_diff_eq!(r.s2, s.s2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn narrow_stripes_alias_under_mosaic() {
        // One-pixel-period stripes sit at the mosaic Nyquist limit. Each
        // filter pair samples only one of the two columns, so intensity
        // differences leak into s1/s2 and radiance is over-counted, where an
        // ideal full-Stokes sensor would average the block's Stokes directly.
        let (sa, sb) = (
            StokesVector::linear(1.0, 1.0, 0.0),
            StokesVector::linear(0.5, 1.0, 40.0),
        );
        let mut img = PolarimetricImage::zeros(8, 8, 1);
        for y in 0..8 {
            for x in 0..8 {
                img.set_stokes(x, y, 0, if x % 2 == 0 { sa } else { sb });
            }
        }
        let observed = demosaic(&mosaic(&img).unwrap()).unwrap();
        let ideal = StokesVector::new(
            (sa.s0 + sb.s0) / 2.0,
            (sa.s1 + sb.s1) / 2.0,
            (sa.s2 + sb.s2) / 2.0,
            0.0,
        );
        let ideal_aolp = to_linear_state(&ideal).unwrap().aolp_deg;
        let got = observed.stokes(0, 0, 0);
        let got_aolp = to_linear_state(&got).unwrap().aolp_deg;
        assert!(
            aolp_distance_deg(got_aolp, ideal_aolp) > 5.0,
            "expected visible AoLP aliasing, got {got_aolp} vs ideal {ideal_aolp}"
        );
        // Equal-radiance stripes keep the AoLP unbiased but inflate s0.
        let (sa, sb) = (
            StokesVector::linear(1.0, 1.0, 0.0),
            StokesVector::linear(1.0, 1.0, 40.0),
        );
        let mut img = PolarimetricImage::zeros(8, 8, 1);
        for y in 0..8 {
            for x in 0..8 {
                img.set_stokes(x, y, 0, if x % 2 == 0 { sa } else { sb });
            }
        }
        let observed = demosaic(&mosaic(&img).unwrap()).unwrap();
        let s0_err = (observed.stokes(0, 0, 0).s0 - 1.0).abs();
        assert!(s0_err > 0.3, "expected s0 aliasing, got error {s0_err}");
    }

    proptest! {
        #[test]
        fn aolp_canonicalization_is_180_periodic(phi in -720.0f64..720.0) {
            let a = canonical_aolp_deg(phi);
            let b = canonical_aolp_deg(phi + 180.0);
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((-90.0..90.0).contains(&a));
        }

        #[test]
        fn polarizer_sampling_reproduces_state(
            intensity in 0.01f64..10.0,
            dolp in 0.0f64..1.0,
            aolp in -90.0f64..90.0,
        ) {
            let state = LinearPolarizationState {
                mean_intensity: intensity,
                dolp,
                aolp_deg: aolp,
                aolp_defined: true,
            };
            let i0 = intensity_through_polarizer(&state, 0.0);
            let i45 = intensity_through_polarizer(&state, 45.0);
            let i90 = intensity_through_polarizer(&state, 90.0);
            let i135 = intensity_through_polarizer(&state, 135.0);
            let s = stokes_from_intensities(i0, i45, i90, i135).unwrap();
            let back = to_linear_state(&s).unwrap();
            prop_assert!((back.mean_intensity - intensity).abs() < 1e-9 * intensity.max(1.0));
            prop_assert!((back.dolp - dolp).abs() < 1e-9);
            if dolp > 1e-6 {
                prop_assert!(aolp_distance_deg(back.aolp_deg, aolp) < 1e-7);
            }
        }

        #[test]
        fn linear_state_round_trip(
            intensity in 0.01f64..10.0,
            dolp in 0.001f64..1.0,
            aolp in -90.0f64..90.0,
        ) {
            let s = StokesVector::linear(intensity, dolp, aolp);
            let st = to_linear_state(&s).unwrap();
            prop_assert!((st.mean_intensity - intensity / 2.0).abs() < 1e-12 * intensity.max(1.0));
            prop_assert!((st.dolp - dolp).abs() < 1e-12);
            prop_assert!(aolp_distance_deg(st.aolp_deg, aolp) < 1e-9);
        }
    }
}
