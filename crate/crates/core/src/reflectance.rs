//! Polarimetric reflectance: how a surface point turns incident polarized
//! light into observed Stokes vectors.
//!
//! The reflected light is a mix of two lobes. The specular lobe mirrors the
//! incident polarization with a sign flip on `s2` (the AoLP is negated). The
//! diffuse lobe forgets the incident angle and re-emits with a weak
//! polarization set by the exit zenith and the normal's image-plane azimuth.
//! Both effects live in a single surface Mueller matrix, linear in the two
//! lobe strengths `c_s` and `c_d`.

use nalgebra::{Matrix4, Vector3};

use crate::polarization::{canonical_aolp_deg, MuellerMatrix};

/// Material parameters of the surrogate reflectance model.
///
/// `mu` is the refractive index, `k_s` the specular gain, `alpha` the
/// roughness of the Beckmann lobe, `beta` a grazing-retro shaping term and
/// `k_b` the diffuse albedo (per channel scaling happens upstream).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BrdfParams {
    pub mu: f64,
    pub k_s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub k_b: f64,
}

impl Default for BrdfParams {
    fn default() -> Self {
        Self {
            mu: 1.5,
            k_s: 0.04,
            alpha: 0.3,
            beta: 0.0,
            k_b: 0.6,
        }
    }
}

/// Unit geometry around one shading event. `normal` points out of the
/// surface toward the camera half-space (`normal.z > 0` in the shading
/// frame), `view` from the point toward the camera, `light` from the point
/// toward the light.
#[derive(Debug, Clone, Copy)]
pub struct ShadingGeometry {
    pub normal: Vector3<f64>,
    pub view: Vector3<f64>,
    pub light: Vector3<f64>,
}

/// Per-point reflectance coefficients: lobe strengths plus the diffuse
/// polarization state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectanceSample {
    pub c_s: f64,
    pub c_d: f64,
    pub rho_d: f64,
    pub phi_d_deg: f64,
}

/// Degree of linear polarization of diffusely re-emitted light at exit
/// zenith `zenith_deg` for refractive index `mu`.
pub fn diffuse_dolp(zenith_deg: f64, mu: f64) -> f64 {
    let theta = zenith_deg.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let sin2 = sin_t * sin_t;
    let a = mu - 1.0 / mu;
    let b = mu + 1.0 / mu;
    let num = a * a * sin2;
    let den = 2.0 + 2.0 * mu * mu - b * b * sin2 + 4.0 * cos_t * (mu * mu - sin2).sqrt();
    num / den
}

/// AoLP of the diffuse lobe: the image-plane azimuth of the normal.
/// Antipodal normals give the same angle, so the result does not depend on
/// which side of the surface the normal was stored on.
pub fn diffuse_aolp_deg(normal: &Vector3<f64>) -> f64 {
    if normal.x == 0.0 && normal.y == 0.0 {
        return 0.0;
    }
    canonical_aolp_deg(normal.y.atan2(normal.x).to_degrees())
}

/// Surface Mueller matrix combining a polarization-preserving specular lobe
/// (with the `s2`/`s3` sign flips of mirror reflection) and a depolarizing
/// diffuse lobe that re-polarizes along the normal azimuth.
///
/// The diffuse block is reciprocal: the first row reads the incident
/// polarization with the same coefficients the first column uses to emit
/// it, up to the sign of the `s2` term.
pub fn surface_mueller(c_s: f64, c_d: f64, rho_d: f64, phi_d_deg: f64) -> MuellerMatrix {
    let two_phi = 2.0 * phi_d_deg.to_radians();
    let m10 = rho_d * two_phi.cos();
    let m20 = rho_d * two_phi.sin();
    let mut m = Matrix4::zeros();
    m[(0, 0)] = c_s + c_d;
    m[(1, 1)] = c_s;
    m[(2, 2)] = -c_s;
    m[(3, 3)] = -c_s;
    m[(0, 1)] = c_d * m10;
    m[(0, 2)] = -c_d * m20;
    m[(1, 0)] = c_d * m10;
    m[(2, 0)] = c_d * m20;
    MuellerMatrix::new(m)
}

/// Closed-form AoLP of the reflected light for a fully described mix of
/// lobes and incident state.
pub fn reflected_aolp_deg(
    c_s: f64,
    c_d: f64,
    rho_d: f64,
    phi_d_deg: f64,
    rho_i: f64,
    phi_i_deg: f64,
) -> f64 {
    let two_d = 2.0 * phi_d_deg.to_radians();
    let two_i = 2.0 * phi_i_deg.to_radians();
    let y = c_d * rho_d * two_d.sin() - c_s * rho_i * two_i.sin();
    let x = c_d * rho_d * two_d.cos() + c_s * rho_i * two_i.cos();
    canonical_aolp_deg((0.5 * y.atan2(x)).to_degrees())
}

/// Worst-case angular shift of the reflected AoLP away from the mirrored
/// incident AoLP, caused by the diffuse lobe's own polarization.
///
/// Requires the specular term to dominate: `rho_d_max * cd_over_cs < 1`.
pub fn max_aolp_modulation_deg(cd_over_cs: f64, rho_d_max: f64) -> f64 {
    let r = rho_d_max * cd_over_cs;
    assert!(
        (0.0..1.0).contains(&r),
        "diffuse polarization must stay below the specular signal"
    );
    0.5 * r.asin().to_degrees()
}

/// Exit zenith at which the diffuse DoLP reaches `target`, by bisection.
/// Returns `None` when the target is out of reach below 90 degrees.
pub fn zenith_for_dolp(mu: f64, target: f64) -> Option<f64> {
    let (mut lo, mut hi) = (0.0f64, 89.999f64);
    if diffuse_dolp(hi, mu) < target {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if diffuse_dolp(mid, mu) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Unpolarized Fresnel reflectance entering a dielectric of index `mu` at
/// incidence cosine `cos_i`.
pub fn fresnel_unpolarized(cos_i: f64, mu: f64) -> f64 {
    let cos_i = cos_i.clamp(0.0, 1.0);
    let sin2_t = (1.0 - cos_i * cos_i) / (mu * mu);
    if sin2_t >= 1.0 {
        return 1.0;
    }
    let cos_t = (1.0 - sin2_t).sqrt();
    let rs = (cos_i - mu * cos_t) / (cos_i + mu * cos_t);
    let rp = (mu * cos_i - cos_t) / (mu * cos_i + cos_t);
    0.5 * (rs * rs + rp * rp)
}

/// Microfacet slope density with a grazing shaping term:
/// `exp(-tan^2 h / a^2) / (pi a^2 cos^4 h) * (1 + beta sin^2 h)`.
pub fn facet_density(cos_h: f64, alpha: f64, beta: f64) -> f64 {
    if cos_h <= 1e-9 {
        return 0.0;
    }
    let cos2 = cos_h * cos_h;
    let sin2 = 1.0 - cos2;
    let tan2 = sin2 / cos2;
    (-tan2 / (alpha * alpha)).exp() / (std::f64::consts::PI * alpha * alpha * cos2 * cos2)
        * (1.0 + beta * sin2)
}

/// Evaluate the reflectance model at one shading event.
///
/// Returns zeroed coefficients when the light or the camera is below the
/// local horizon. The diffuse lobe is Lambertian in the view direction; its
/// polarization depends on the exit zenith only.
pub fn shade(geom: &ShadingGeometry, params: &BrdfParams) -> ReflectanceSample {
    let n = geom.normal;
    let cos_i = n.dot(&geom.light);
    let cos_v = n.dot(&geom.view);
    if cos_i <= 0.0 || cos_v <= 0.0 {
        return ReflectanceSample {
            c_s: 0.0,
            c_d: 0.0,
            rho_d: 0.0,
            phi_d_deg: 0.0,
        };
    }
    let h = (geom.light + geom.view).normalize();
    let cos_h = n.dot(&h).clamp(-1.0, 1.0);
    let cos_d = geom.light.dot(&h).clamp(0.0, 1.0);
    let d = facet_density(cos_h, params.alpha, params.beta);
    let f = fresnel_unpolarized(cos_d, params.mu);
    let c_s = params.k_s * f * d / (4.0 * cos_v);
    let c_d = params.k_b * cos_i;
    let zen = cos_v.clamp(-1.0, 1.0).acos().to_degrees();
    ReflectanceSample {
        c_s,
        c_d,
        rho_d: diffuse_dolp(zen, params.mu),
        phi_d_deg: diffuse_aolp_deg(&n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::{
        aolp_distance_deg, apply_mueller, to_linear_state, StokesVector,
    };
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn diffuse_dolp_reference_points() {
        assert_eq!(diffuse_dolp(0.0, 1.5), 0.0);
        assert_abs_diff_eq!(diffuse_dolp(45.0, 1.5), 0.04398, epsilon = 5e-5);
        // Grazing limit (mu^2 - 1) / (mu^2 + 1).
        assert_abs_diff_eq!(diffuse_dolp(90.0, 1.5), 1.25 / 3.25, epsilon = 1e-9);
        // Monotone over the working range.
        let mut prev = -1.0;
        for i in 0..=90 {
            let v = diffuse_dolp(i as f64, 1.5);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn zenith_solver_hits_target() {
        let z = zenith_for_dolp(1.5, 0.05).unwrap();
        assert_abs_diff_eq!(diffuse_dolp(z, 1.5), 0.05, epsilon = 1e-9);
        assert!(z > 45.0 && z < 50.0);
        assert!(zenith_for_dolp(1.5, 0.9).is_none());
    }

    #[test]
    fn diffuse_aolp_is_flip_invariant() {
        let n = Vector3::new(0.3, -0.2, 0.93).normalize();
        let a = diffuse_aolp_deg(&n);
        let b = diffuse_aolp_deg(&(-n));
        assert!(aolp_distance_deg(a, b) < 1e-9);
        assert_eq!(diffuse_aolp_deg(&Vector3::new(0.0, 0.0, 1.0)), 0.0);
        assert_abs_diff_eq!(
            diffuse_aolp_deg(&Vector3::new(0.0, 0.5, 0.8)),
            -90.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn mueller_reciprocity_structure() {
        let m = surface_mueller(0.2, 0.7, 0.04, 33.0).m;
        assert_abs_diff_eq!(m[(0, 1)], m[(1, 0)], epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 2)], -m[(2, 0)], epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 0)], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(2, 2)], -0.2, epsilon = 1e-15);
        // Lower-right diffuse block is zero.
        for r in 1..4 {
            for c in 1..4 {
                if r != c {
                    assert_eq!(m[(r, c)], 0.0);
                }
            }
        }
    }

    #[test]
    fn closed_form_aolp_matches_mueller_path() {
        let cases = [
            (0.3, 0.9, 0.05, 10.0, 1.0, 40.0),
            (0.08, 0.4, 0.02, -60.0, 1.0, 0.0),
            (1.0, 0.0, 0.0, 0.0, 1.0, 66.6),
        ];
        for (c_s, c_d, rho_d, phi_d, rho_i, phi_i) in cases {
            let closed = reflected_aolp_deg(c_s, c_d, rho_d, phi_d, rho_i, phi_i);
            let m = surface_mueller(c_s, c_d, rho_d, phi_d);
            let out = apply_mueller(&m, &StokesVector::linear(1.0, rho_i, phi_i));
            let st = to_linear_state(&out).unwrap();
            assert!(aolp_distance_deg(closed, st.aolp_deg) < 1e-9);
        }
    }

    #[test]
    fn modulation_bounds_for_lobe_ratios() {
        // Worst-case AoLP shift for diffuse/specular strength ratios 2, 3
        // and 5 at a diffuse DoLP cap of 0.05.
        let cases = [(2.0, 2.8696), (3.0, 4.3134), (5.0, 7.2388)];
        for (ratio, expected) in cases {
            let got = max_aolp_modulation_deg(ratio, 0.05);
            assert_abs_diff_eq!(got, expected, epsilon = 5e-4);
        }
    }

    #[test]
    fn modulation_bound_is_attained_on_grid() {
        // Exhaustive scan over incident and diffuse angles must approach but
        // never exceed the closed-form bound.
        let (c_s, c_d, rho_d) = (0.2, 0.6, 0.05);
        let bound = max_aolp_modulation_deg(c_d / c_s, rho_d);
        let mut max_seen = 0.0f64;
        let mut phi_i = 0.0;
        while phi_i < 180.0 {
            let mut phi_d = 0.0;
            while phi_d < 180.0 {
                let out = reflected_aolp_deg(c_s, c_d, rho_d, phi_d, 1.0, phi_i);
                let dev = aolp_distance_deg(out, -phi_i);
                max_seen = max_seen.max(dev);
                phi_d += 0.05;
            }
            phi_i += 1.0;
        }
        assert!(max_seen <= bound + 1e-6, "{max_seen} vs {bound}");
        assert!(max_seen >= bound - 0.02, "{max_seen} vs {bound}");
    }

    #[test]
    fn fresnel_reference_points() {
        assert_abs_diff_eq!(fresnel_unpolarized(1.0, 1.5), 0.04, epsilon = 1e-9);
        assert_abs_diff_eq!(fresnel_unpolarized(0.0, 1.5), 1.0, epsilon = 1e-9);
        // Monotone growth toward grazing.
        assert!(fresnel_unpolarized(0.3, 1.5) > fresnel_unpolarized(0.7, 1.5));
    }

    #[test]
    fn facet_density_peaks_at_normal() {
        let alpha = 0.3;
        let d0 = facet_density(1.0, alpha, 0.0);
        assert_abs_diff_eq!(d0, 1.0 / (std::f64::consts::PI * alpha * alpha), epsilon = 1e-12);
        assert!(facet_density(0.95, alpha, 0.0) < d0);
        assert_eq!(facet_density(0.0, alpha, 0.0), 0.0);
        // Projected-area normalization of the base lobe, by quadrature.
        let steps = 20000;
        let mut integral = 0.0;
        for i in 0..steps {
            let theta = (i as f64 + 0.5) / steps as f64 * std::f64::consts::FRAC_PI_2;
            let d = facet_density(theta.cos(), alpha, 0.0);
            integral += d * theta.cos() * theta.sin() * (std::f64::consts::FRAC_PI_2 / steps as f64);
        }
        integral *= 2.0 * std::f64::consts::PI;
        assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn shade_frontoparallel_case() {
        let geom = ShadingGeometry {
            normal: Vector3::new(0.0, 0.0, 1.0),
            view: Vector3::new(0.0, 0.0, 1.0),
            light: Vector3::new(0.0, 0.0, 1.0),
        };
        let p = BrdfParams::default();
        let s = shade(&geom, &p);
        assert_abs_diff_eq!(s.c_d, p.k_b, epsilon = 1e-12);
        assert_eq!(s.rho_d, 0.0);
        // k_s * F(0) * D(0) / 4 with F(0) = 0.04, D(0) = 1 / (pi a^2).
        let expected = p.k_s * 0.04 / (std::f64::consts::PI * p.alpha * p.alpha) / 4.0;
        assert_abs_diff_eq!(s.c_s, expected, epsilon = 1e-12);
    }

    #[test]
    fn shade_below_horizon_is_black() {
        let geom = ShadingGeometry {
            normal: Vector3::new(0.0, 0.0, 1.0),
            view: Vector3::new(0.0, 0.0, 1.0),
            light: Vector3::new(0.0, 0.0, -1.0),
        };
        let s = shade(&geom, &BrdfParams::default());
        assert_eq!((s.c_s, s.c_d), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn reflected_light_is_realizable_for_moderate_dolp(
            c_s in 0.0f64..2.0,
            c_d in 0.0f64..2.0,
            rho_d in 0.0f64..0.5,
            phi_d in -90.0f64..90.0,
            rho_i in 0.0f64..1.0,
            phi_i in -90.0f64..90.0,
            s0 in 0.01f64..10.0,
        ) {
            let m = surface_mueller(c_s, c_d, rho_d, phi_d);
            let out = apply_mueller(&m, &StokesVector::linear(s0, rho_i, phi_i));
            prop_assert!(out.is_realizable(), "{out:?}");
        }

        #[test]
        fn pure_specular_mirrors_the_aolp(
            phi_i in -90.0f64..90.0,
            c_s in 0.01f64..2.0,
        ) {
            let out = reflected_aolp_deg(c_s, 0.0, 0.0, 0.0, 1.0, phi_i);
            prop_assert!(aolp_distance_deg(out, -phi_i) < 1e-9);
        }

        #[test]
        fn modulation_never_exceeds_bound(
            phi_i in -90.0f64..90.0,
            phi_d in -90.0f64..90.0,
            cd_over_cs in 0.1f64..5.0,
            rho_d_frac in 0.0f64..1.0,
        ) {
            let rho_d = rho_d_frac * 0.05;
            let c_s = 0.17;
            let c_d = c_s * cd_over_cs;
            let bound = max_aolp_modulation_deg(cd_over_cs, 0.05);
            let out = reflected_aolp_deg(c_s, c_d, rho_d, phi_d, 1.0, phi_i);
            prop_assert!(aolp_distance_deg(out, -phi_i) <= bound + 1e-9);
        }
    }
}
