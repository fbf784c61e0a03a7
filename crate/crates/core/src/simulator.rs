//! Synthetic polarimetric renderer.
//!
//! Renders analytic scenes (planes, spheres, bumpy planes) under stripe
//! illumination from a rectified projector and produces per-pixel Stokes
//! images plus dense ground truth. The renderer exists so every stage of
//! the pipeline can be validated against exact geometry and exact surface
//! response, including sensor noise and frame-to-frame motion.
//!
//! Conventions. The camera sits at the origin looking along `+z`; all
//! geometry lives at `z > 0`. The projector sits at `(baseline, 0, 0)` with
//! a parallel optical axis, so a surface point maps to the projector column
//! `f_p (x - baseline) / z + cx_p`. Shading runs in a z-flipped frame where
//! camera-facing normals have `n_z > 0` and a frontoparallel plane has
//! normal `(0, 0, 1)`; flipping `z` on every direction leaves dot products
//! unchanged, and ground-truth normals are stored in this frame.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::ProjectorPattern;
use crate::polarization::{
    apply_mueller, intensity_through_polarizer, stokes_from_intensities, to_linear_state,
    PolarimetricImage, StokesVector,
};
use crate::reflectance::{shade, surface_mueller, BrdfParams, ReflectanceSample, ShadingGeometry};

/// Rectified camera plus projector rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub width: usize,
    pub height: usize,
    /// Camera focal length in pixels.
    pub f_c: f64,
    pub cx: f64,
    pub cy: f64,
    /// Projector focal length in pixels.
    pub f_p: f64,
    /// Projector principal column.
    pub cx_p: f64,
    /// Horizontal camera-projector offset in world units.
    pub baseline: f64,
}

impl Rig {
    /// Unnormalized ray direction through pixel `(u, v)`, z-depth form
    /// `(x_n, y_n, 1)`.
    pub fn camera_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.f_c, (v - self.cy) / self.f_c, 1.0)
    }

    /// Continuous projector column lit at world point `p`.
    pub fn projector_col(&self, p: &Vector3<f64>) -> f64 {
        self.f_p * (p.x - self.baseline) / p.z + self.cx_p
    }

    pub fn projector_pos(&self) -> Vector3<f64> {
        Vector3::new(self.baseline, 0.0, 0.0)
    }

    /// Depth from a camera column and a matched projector column,
    /// rectified-pair triangulation.
    pub fn triangulate_depth(&self, u: f64, proj_col: f64) -> f64 {
        let x_n = (u - self.cx) / self.f_c;
        let q_n = (proj_col - self.cx_p) / self.f_p;
        self.baseline / (x_n - q_n)
    }

    /// Depth quantization step at depth `z`: the change caused by a one
    /// column error in the projector coordinate.
    pub fn depth_quantum(&self, z: f64) -> f64 {
        z * z / (self.baseline * self.f_p)
    }
}

/// One raised plateau on a bumpy plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    /// Center in the plane's `(x, y)` at time zero.
    pub center: [f64; 2],
    /// Outer radius where the bump reaches zero.
    pub radius: f64,
    /// Height toward the camera (negative pushes away).
    pub height: f64,
    /// Center velocity in world units per frame.
    #[serde(default)]
    pub velocity: [f64; 2],
}

/// Analytic surface shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Surface {
    Plane { point: [f64; 3], normal: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
    /// Frontoparallel plane at `z = base_z` with plateau bumps toward the
    /// camera; the height field stays single-valued in `z`.
    BumpyPlane { base_z: f64, bumps: Vec<Bump> },
}

/// Diffuse albedo modulation over the surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Texture {
    Uniform,
    /// Checkerboard in world `(x, y)` with cells of `scale` units; dark
    /// cells multiply the albedo by `low`.
    CheckerXy { scale: f64, low: f64 },
    /// Smooth sinusoidal albedo sweep along `x`.
    GradientX { low: f64, high: f64, period: f64 },
}

impl Texture {
    pub fn factor(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Texture::Uniform => 1.0,
            Texture::CheckerXy { scale, low } => {
                let cx = (p.x / scale).floor() as i64;
                let cy = (p.y / scale).floor() as i64;
                if (cx + cy).rem_euclid(2) == 0 {
                    1.0
                } else {
                    *low
                }
            }
            Texture::GradientX { low, high, period } => {
                let s = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * p.x / period).sin();
                low + (high - low) * s
            }
        }
    }
}

/// Pins the surface response to one constant Mueller matrix, ignoring
/// geometry. Used for scenes that must expose an exactly uniform response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuellerOverride {
    pub c_s: f64,
    pub c_d: f64,
    pub rho_d: f64,
    pub phi_d_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    #[serde(default)]
    pub brdf: BrdfParams,
    #[serde(default = "default_texture")]
    pub texture: Texture,
    /// When set, shading uses exactly these lobe coefficients everywhere.
    #[serde(default)]
    pub mueller_override: Option<MuellerOverride>,
}

fn default_texture() -> Texture {
    Texture::Uniform
}

impl Default for Material {
    fn default() -> Self {
        Self {
            brdf: BrdfParams::default(),
            texture: Texture::Uniform,
            mueller_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub surface: Surface,
    #[serde(default)]
    pub material: Material,
    /// Rigid translation per frame.
    #[serde(default)]
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
}

/// Rendering controls. `time` is the frame index used for object motion;
/// noise draws are seeded per row so renders are reproducible under any
/// thread schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub projector_intensity: f64,
    /// Unpolarized veiling radiance reflected off the diffuse lobe.
    pub ambient: f64,
    /// Gaussian noise sigma on each virtual filter intensity.
    pub noise_sigma: f64,
    pub seed: u64,
    pub shadows: bool,
    pub time: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            projector_intensity: 1.0,
            ambient: 0.0,
            noise_sigma: 0.0,
            seed: 0,
            shadows: false,
            time: 0.0,
        }
    }
}

/// Dense per-pixel ground truth for one rendered frame. Pixels with no
/// surface are NaN. Normals are unit, shading frame.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub normal: Vec<[f64; 3]>,
    /// Continuous projector column per pixel.
    pub proj_col: Vec<f64>,
    /// Lobe coefficients per pixel: `(c_s, c_d, rho_d, phi_d_deg)`.
    pub lobes: Vec<[f64; 4]>,
    /// Incident Stokes per pixel (zero when unlit).
    pub incident: Vec<[f64; 3]>,
}

impl GroundTruth {
    fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::NAN; width * height],
            normal: vec![[f64::NAN; 3]; width * height],
            proj_col: vec![f64::NAN; width * height],
            lobes: vec![[f64::NAN; 4]; width * height],
            incident: vec![[0.0; 3]; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

struct Hit {
    z: f64,
    point: Vector3<f64>,
    /// Shading-frame unit normal, `n_z > 0` toward the camera.
    normal: Vector3<f64>,
    object: usize,
}

fn smootherstep(s: f64) -> (f64, f64) {
    let s = s.clamp(0.0, 1.0);
    let v = s * s * s * (s * (6.0 * s - 15.0) + 10.0);
    let d = 30.0 * s * s * (s - 1.0) * (s - 1.0);
    (v, d)
}

/// Plateau profile over normalized radius `u`: flat for `u <= 0.5`, smooth
/// descent to zero at `u = 1`. Returns `(value, d value / d u)`.
fn plateau(u: f64) -> (f64, f64) {
    if u >= 1.0 {
        (0.0, 0.0)
    } else if u <= 0.5 {
        (1.0, 0.0)
    } else {
        let (v, d) = smootherstep((u - 0.5) * 2.0);
        (1.0 - v, -2.0 * d)
    }
}

/// Height field of a bumpy plane: `z(x, y)` and its gradient.
fn bumpy_height(base_z: f64, bumps: &[Bump], time: f64, x: f64, y: f64) -> (f64, f64, f64) {
    let mut z = base_z;
    let mut gx = 0.0;
    let mut gy = 0.0;
    for b in bumps {
        let cx = b.center[0] + b.velocity[0] * time;
        let cy = b.center[1] + b.velocity[1] * time;
        let (dx, dy) = (x - cx, y - cy);
        let dist = (dx * dx + dy * dy).sqrt();
        let u = dist / b.radius;
        let (p, dp) = plateau(u);
        z -= b.height * p;
        if dist > 1e-12 {
            let scale = -b.height * dp / (b.radius * dist);
            gx += scale * dx;
            gy += scale * dy;
        }
    }
    (z, gx, gy)
}

impl Surface {
    /// Intersect the camera ray `z * dir` (depth-parameterized, `dir.z == 1`)
    /// with the surface translated by `time * velocity`.
    fn intersect(&self, dir: &Vector3<f64>, velocity: &[f64; 3], time: f64) -> Option<(f64, Vector3<f64>)> {
        let shift = Vector3::new(velocity[0], velocity[1], velocity[2]) * time;
        const Z_NEAR: f64 = 1e-3;
        match self {
            Surface::Plane { point, normal } => {
                let p = Vector3::new(point[0], point[1], point[2]) + shift;
                let n = Vector3::new(normal[0], normal[1], normal[2]);
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let z = n.dot(&p) / denom;
                if z <= Z_NEAR {
                    return None;
                }
                let mut n_out = n.normalize();
                if n_out.dot(dir) > 0.0 {
                    n_out = -n_out;
                }
                Some((z, flip_z(&n_out)))
            }
            Surface::Sphere { center, radius } => {
                let c = Vector3::new(center[0], center[1], center[2]) + shift;
                let a = dir.dot(dir);
                let b = -2.0 * dir.dot(&c);
                let cc = c.dot(&c) - radius * radius;
                let disc = b * b - 4.0 * a * cc;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let z1 = (-b - sq) / (2.0 * a);
                let z2 = (-b + sq) / (2.0 * a);
                let z = if z1 > Z_NEAR {
                    z1
                } else if z2 > Z_NEAR {
                    z2
                } else {
                    return None;
                };
                let p = dir * z;
                let n_out = (p - c).normalize();
                Some((z, flip_z(&n_out)))
            }
            Surface::BumpyPlane { base_z, bumps } => {
                // Depth fixed point: z = height(x(z), y(z)). Contracts when
                // slope * field-of-view stays below one; steeper fields are
                // reported as misses by the residual check.
                let mut z = *base_z;
                for _ in 0..200 {
                    let (h, _, _) = bumpy_height(*base_z + shift.z, bumps, time, z * dir.x - shift.x, z * dir.y - shift.y);
                    if (h - z).abs() < 1e-13 {
                        z = h;
                        break;
                    }
                    z = h;
                }
                let (h, gx, gy) =
                    bumpy_height(*base_z + shift.z, bumps, time, z * dir.x - shift.x, z * dir.y - shift.y);
                if (h - z).abs() > 1e-9 || z <= Z_NEAR {
                    return None;
                }
                // Outward normal of z = g(x, y) facing the camera is
                // (g_x, g_y, -1) normalized; flipped frame gives positive z.
                let n = Vector3::new(-gx, -gy, 1.0).normalize();
                Some((z, n))
            }
        }
    }

    /// Signed implicit value used for shadow tests; the surface is the zero
    /// set.
    fn implicit(&self, p: &Vector3<f64>, velocity: &[f64; 3], time: f64) -> f64 {
        let shift = Vector3::new(velocity[0], velocity[1], velocity[2]) * time;
        match self {
            Surface::Plane { point, normal } => {
                let pt = Vector3::new(point[0], point[1], point[2]) + shift;
                let n = Vector3::new(normal[0], normal[1], normal[2]).normalize();
                n.dot(&(p - pt))
            }
            Surface::Sphere { center, radius } => {
                let c = Vector3::new(center[0], center[1], center[2]) + shift;
                (p - c).norm() - radius
            }
            Surface::BumpyPlane { base_z, bumps } => {
                let (h, _, _) = bumpy_height(*base_z + shift.z, bumps, time, p.x - shift.x, p.y - shift.y);
                p.z - h
            }
        }
    }
}

/// World directions to the shading frame used by the reflectance model:
/// the z axis flips so camera-facing normals have positive z.
pub fn flip_z(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(v.x, v.y, -v.z)
}

fn cast_ray(scene: &Scene, dir: &Vector3<f64>, time: f64) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, obj) in scene.objects.iter().enumerate() {
        if let Some((z, normal)) = obj.surface.intersect(dir, &obj.velocity, time) {
            if best.as_ref().map_or(true, |h| z < h.z) {
                best = Some(Hit {
                    z,
                    point: dir * z,
                    normal,
                    object: i,
                });
            }
        }
    }
    best
}

/// Does the open segment from `p` to the projector cross any surface?
fn occluded(scene: &Scene, p: &Vector3<f64>, proj: &Vector3<f64>, time: f64) -> bool {
    const STEPS: usize = 96;
    for obj in &scene.objects {
        let mut prev = f64::NAN;
        for s in 1..STEPS {
            let t = s as f64 / STEPS as f64;
            // Keep clear of both endpoints so the surface itself never
            // occludes its own sample.
            let t = 0.02 + t * 0.96;
            let q = p + (proj - p) * t;
            let val = obj.surface.implicit(&q, &obj.velocity, time);
            if !prev.is_nan() && prev.signum() != val.signum() {
                return true;
            }
            prev = val;
        }
    }
    false
}

/// Render one frame and its ground truth.
pub fn render_frame(
    scene: &Scene,
    rig: &Rig,
    pattern: &ProjectorPattern,
    opts: &RenderOptions,
) -> (PolarimetricImage, GroundTruth) {
    let width = rig.width;
    let height = rig.height;
    let mut image = PolarimetricImage::zeros(width, height, 1);
    let mut gt = GroundTruth::empty(width, height);

    let rows: Vec<(Vec<[f64; 3]>, Vec<f64>, Vec<[f64; 3]>, Vec<f64>, Vec<[f64; 4]>, Vec<[f64; 3]>)> = (0..height)
        .into_par_iter()
        .map(|v| {
            let mut row_stokes = vec![[0.0f64; 3]; width];
            let mut row_depth = vec![f64::NAN; width];
            let mut row_normal = vec![[f64::NAN; 3]; width];
            let mut row_proj = vec![f64::NAN; width];
            let mut row_lobes = vec![[f64::NAN; 4]; width];
            let mut row_incident = vec![[0.0f64; 3]; width];
            let mut rng =
                ChaCha8Rng::seed_from_u64(opts.seed ^ (v as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            for u in 0..width {
                let dir = rig.camera_ray(u as f64, v as f64);
                let Some(hit) = cast_ray(scene, &dir, opts.time) else {
                    if opts.noise_sigma > 0.0 {
                        // Keep the per-pixel draw count fixed.
                        for _ in 0..4 {
                            let _: f64 = sample_gauss(&mut rng);
                        }
                    }
                    continue;
                };
                let obj = &scene.objects[hit.object];
                let q = rig.projector_col(&hit.point);
                row_depth[u] = hit.z;
                row_normal[u] = [hit.normal.x, hit.normal.y, hit.normal.z];
                row_proj[u] = q;

                let lit = q >= 0.0
                    && q <= (pattern.width() - 1) as f64
                    && !(opts.shadows && occluded(scene, &hit.point, &rig.projector_pos(), opts.time));

                let view = flip_z(&(-dir).normalize());
                let light_world = (rig.projector_pos() - hit.point).normalize();
                let light = flip_z(&light_world);
                let sample = match obj.material.mueller_override {
                    Some(ov) => ReflectanceSample {
                        c_s: ov.c_s,
                        c_d: ov.c_d,
                        rho_d: ov.rho_d,
                        phi_d_deg: ov.phi_d_deg,
                    },
                    None => {
                        let mut brdf = obj.material.brdf;
                        brdf.k_b *= obj.material.texture.factor(&hit.point);
                        shade(
                            &ShadingGeometry {
                                normal: hit.normal,
                                view,
                                light,
                            },
                            &brdf,
                        )
                    }
                };
                row_lobes[u] = [sample.c_s, sample.c_d, sample.rho_d, sample.phi_d_deg];

                let incident = if lit {
                    StokesVector::linear(opts.projector_intensity, 1.0, pattern.aolp_at(q))
                } else {
                    StokesVector::unpolarized(0.0)
                };
                row_incident[u] = [incident.s0, incident.s1, incident.s2];

                let m = surface_mueller(sample.c_s, sample.c_d, sample.rho_d, sample.phi_d_deg);
                let mut out = apply_mueller(&m, &incident);
                out.s0 += opts.ambient * sample.c_d;

                let out = if opts.noise_sigma > 0.0 {
                    perturb(&out, opts.noise_sigma, &mut rng)
                } else {
                    out
                };
                row_stokes[u] = [out.s0, out.s1, out.s2];
            }
            (row_stokes, row_depth, row_normal, row_proj, row_lobes, row_incident)
        })
        .collect();

    for (v, (row_stokes, row_depth, row_normal, row_proj, row_lobes, row_incident)) in
        rows.into_iter().enumerate()
    {
        for u in 0..width {
            let [s0, s1, s2] = row_stokes[u];
            image.set_stokes(u, v, 0, StokesVector::new(s0, s1, s2, 0.0));
            let i = gt.at(u, v);
            gt.depth[i] = row_depth[u];
            gt.normal[i] = row_normal[u];
            gt.proj_col[i] = row_proj[u];
            gt.lobes[i] = row_lobes[u];
            gt.incident[i] = row_incident[u];
        }
    }
    (image, gt)
}

fn sample_gauss(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    // Box-Muller on two uniform draws; one draw of the pair is discarded to
    // keep the per-sample cost fixed at two uniforms.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Noise model: perturb the four virtual filter intensities with Gaussian
/// noise, clamp negatives, and rebuild the Stokes vector (which rescales
/// onto the realizability boundary when needed).
fn perturb(s: &StokesVector, sigma: f64, rng: &mut ChaCha8Rng) -> StokesVector {
    let state = match to_linear_state(s) {
        Ok(st) => st,
        Err(_) => crate::polarization::LinearPolarizationState {
            mean_intensity: 0.0,
            dolp: 0.0,
            aolp_deg: 0.0,
            aolp_defined: false,
        },
    };
    let mut vals = [0.0f64; 4];
    for (slot, angle) in vals.iter_mut().zip([0.0, 45.0, 90.0, 135.0]) {
        let clean = intensity_through_polarizer(&state, angle);
        *slot = (clean + sigma * sample_gauss(rng)).max(0.0);
    }
    stokes_from_intensities(vals[0], vals[1], vals[2], vals[3])
        .expect("clamped intensities are non-negative")
}

/// Render `frames` consecutive frames, cycling through `patterns` and
/// advancing object motion by one time unit per frame. The noise stream is
/// reseeded per frame from `opts.seed` and the frame index.
pub fn render_sequence(
    scene: &Scene,
    rig: &Rig,
    patterns: &[&ProjectorPattern],
    frames: usize,
    opts: &RenderOptions,
) -> Vec<(PolarimetricImage, GroundTruth)> {
    assert!(!patterns.is_empty());
    (0..frames)
        .map(|t| {
            let frame_opts = RenderOptions {
                time: opts.time + t as f64,
                seed: opts.seed.wrapping_add((t as u64).wrapping_mul(0x517C_C1B7_2722_0A95)),
                ..opts.clone()
            };
            render_frame(scene, rig, patterns[t % patterns.len()], &frame_opts)
        })
        .collect()
}

/// A small default rig used across tests and the self-test command:
/// equal focal lengths and an integer-aligned principal point pair so a
/// frontoparallel plane at unit depth maps camera columns to projector
/// columns by an exact integer shift.
pub fn test_rig() -> Rig {
    Rig {
        width: 192,
        height: 120,
        f_c: 300.0,
        cx: 96.0,
        cy: 60.0,
        f_p: 300.0,
        cx_p: 1530.0,
        baseline: 0.2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{assemble_pattern, generate_sequence, CodeParams};
    use approx::assert_abs_diff_eq;

    fn pattern_7_4() -> ProjectorPattern {
        let params = CodeParams {
            k: 7,
            n: 4,
            aolp_min_deg: 0.0,
            aolp_max_deg: 80.0,
            stripe_width: 12,
        };
        let seq = generate_sequence(&params).unwrap();
        assemble_pattern(&params, &seq).unwrap()
    }

    fn plane_scene(z: f64) -> Scene {
        Scene {
            objects: vec![SceneObject {
                surface: Surface::Plane {
                    point: [0.0, 0.0, z],
                    normal: [0.0, 0.0, 1.0],
                },
                material: Material::default(),
                velocity: [0.0; 3],
            }],
        }
    }

    #[test]
    fn frontoparallel_plane_geometry() {
        let rig = test_rig();
        let (_, gt) = render_frame(&plane_scene(1.0), &rig, &pattern_7_4(), &RenderOptions::default());
        for v in [0usize, 60, 119] {
            for u in [0usize, 96, 191] {
                let i = gt.at(u, v);
                assert_abs_diff_eq!(gt.depth[i], 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(gt.normal[i][2], 1.0, epsilon = 1e-12);
                // Integer-aligned rig: q = u - 96 - 60 + 1530.
                assert_abs_diff_eq!(gt.proj_col[i], u as f64 + 1374.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn triangulation_inverts_projection() {
        let rig = test_rig();
        let scene = Scene {
            objects: vec![SceneObject {
                surface: Surface::Plane {
                    point: [0.0, 0.0, 1.3],
                    normal: [0.25, -0.1, 1.0],
                },
                material: Material::default(),
                velocity: [0.0; 3],
            }],
        };
        let (_, gt) = render_frame(&scene, &rig, &pattern_7_4(), &RenderOptions::default());
        for v in (0..rig.height).step_by(17) {
            for u in (0..rig.width).step_by(13) {
                let i = gt.at(u, v);
                if gt.depth[i].is_nan() {
                    continue;
                }
                let z = rig.triangulate_depth(u as f64, gt.proj_col[i]);
                assert_abs_diff_eq!(z, gt.depth[i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn sphere_silhouette_and_normals() {
        let rig = test_rig();
        let scene = Scene {
            objects: vec![SceneObject {
                surface: Surface::Sphere {
                    center: [0.0, 0.0, 1.0],
                    radius: 0.12,
                },
                material: Material::default(),
                velocity: [0.0; 3],
            }],
        };
        let (img, gt) = render_frame(&scene, &rig, &pattern_7_4(), &RenderOptions::default());
        // Corner pixel misses the sphere.
        assert!(gt.depth[gt.at(0, 0)].is_nan());
        assert_eq!(img.stokes(0, 0, 0).s0, 0.0);
        // Center pixel hits the front pole.
        let i = gt.at(96, 60);
        assert_abs_diff_eq!(gt.depth[i], 0.88, epsilon = 1e-12);
        assert_abs_diff_eq!(gt.normal[i][2], 1.0, epsilon = 1e-12);
        // Every normal is unit and camera-facing where defined.
        for i in 0..gt.depth.len() {
            if gt.depth[i].is_nan() {
                continue;
            }
            let n = gt.normal[i];
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            assert_abs_diff_eq!(len, 1.0, epsilon = 1e-9);
            assert!(n[2] > 0.0);
        }
    }

    #[test]
    fn bumpy_plane_matches_height_field() {
        let rig = test_rig();
        let bumps = vec![Bump {
            center: [0.02, -0.03],
            radius: 0.08,
            height: 0.05,
            velocity: [0.0, 0.0],
        }];
        let scene = Scene {
            objects: vec![SceneObject {
                surface: Surface::BumpyPlane {
                    base_z: 1.0,
                    bumps: bumps.clone(),
                },
                material: Material::default(),
                velocity: [0.0; 3],
            }],
        };
        let (_, gt) = render_frame(&scene, &rig, &pattern_7_4(), &RenderOptions::default());
        for v in (0..rig.height).step_by(7) {
            for u in (0..rig.width).step_by(7) {
                let i = gt.at(u, v);
                let z = gt.depth[i];
                assert!(!z.is_nan());
                let x = z * (u as f64 - rig.cx) / rig.f_c;
                let y = z * (v as f64 - rig.cy) / rig.f_c;
                let (h, _, _) = bumpy_height(1.0, &bumps, 0.0, x, y);
                assert_abs_diff_eq!(z, h, epsilon = 1e-9);
            }
        }
        // The bump top is closer than the base plane.
        let zc = {
            // Pixel looking at the bump center: x = 0.02, y = -0.03 at z ~ 0.95.
            let u = (rig.cx + rig.f_c * 0.02 / 0.95).round() as usize;
            let v = (rig.cy + rig.f_c * -0.03 / 0.95).round() as usize;
            gt.depth[gt.at(u, v)]
        };
        assert_abs_diff_eq!(zc, 0.95, epsilon = 1e-3);
    }

    #[test]
    fn rendered_stokes_match_surface_model() {
        let rig = test_rig();
        let pattern = pattern_7_4();
        let (img, gt) = render_frame(&plane_scene(1.0), &rig, &pattern, &RenderOptions::default());
        for v in (0..rig.height).step_by(11) {
            for u in (0..rig.width).step_by(11) {
                let i = gt.at(u, v);
                let s = img.stokes(u, v, 0);
                assert!(s.is_realizable(), "pixel {u},{v}: {s:?}");
                let [c_s, c_d, rho_d, phi_d] = gt.lobes[i];
                let m = surface_mueller(c_s, c_d, rho_d, phi_d);
                let inc = StokesVector::new(
                    gt.incident[i][0],
                    gt.incident[i][1],
                    gt.incident[i][2],
                    0.0,
                );
                let expect = apply_mueller(&m, &inc);
                assert_abs_diff_eq!(s.s0, expect.s0, epsilon = 1e-12);
                assert_abs_diff_eq!(s.s1, expect.s1, epsilon = 1e-12);
                assert_abs_diff_eq!(s.s2, expect.s2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mueller_override_is_constant() {
        let rig = test_rig();
        let ov = MuellerOverride {
            c_s: 0.15,
            c_d: 0.45,
            rho_d: 0.04,
            phi_d_deg: 25.0,
        };
        let mut scene = plane_scene(1.0);
        scene.objects[0].material.mueller_override = Some(ov);
        let pattern = pattern_7_4();
        let (img, gt) = render_frame(&scene, &rig, &pattern, &RenderOptions::default());
        let m = surface_mueller(ov.c_s, ov.c_d, ov.rho_d, ov.phi_d_deg);
        for v in (0..rig.height).step_by(13) {
            for u in (0..rig.width).step_by(13) {
                let i = gt.at(u, v);
                assert_eq!(gt.lobes[i], [ov.c_s, ov.c_d, ov.rho_d, ov.phi_d_deg]);
                let inc = StokesVector::new(
                    gt.incident[i][0],
                    gt.incident[i][1],
                    gt.incident[i][2],
                    0.0,
                );
                let expect = apply_mueller(&m, &inc);
                let s = img.stokes(u, v, 0);
                assert_abs_diff_eq!(s.s0, expect.s0, epsilon = 1e-12);
                assert_abs_diff_eq!(s.s1, expect.s1, epsilon = 1e-12);
                assert_abs_diff_eq!(s.s2, expect.s2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn noise_is_seeded_and_bounded() {
        let rig = test_rig();
        let pattern = pattern_7_4();
        let opts = RenderOptions {
            noise_sigma: 0.01,
            seed: 42,
            ..Default::default()
        };
        let (a, _) = render_frame(&plane_scene(1.0), &rig, &pattern, &opts);
        let (b, _) = render_frame(&plane_scene(1.0), &rig, &pattern, &opts);
        assert_eq!(a, b);
        let (clean, _) = render_frame(&plane_scene(1.0), &rig, &pattern, &RenderOptions::default());
        let mut max_dev = 0.0f64;
        let mut any_dev = false;
        for v in 0..rig.height {
            for u in 0..rig.width {
                let sn = a.stokes(u, v, 0);
                let sc = clean.stokes(u, v, 0);
                assert!(sn.is_realizable());
                let dev = (sn.s0 - sc.s0).abs();
                max_dev = max_dev.max(dev);
                if dev > 1e-9 {
                    any_dev = true;
                }
            }
        }
        assert!(any_dev);
        // s0 adds two intensity draws: 10 sigma tail bound.
        assert!(max_dev < 10.0 * 0.01 * 2.0f64.sqrt());
    }

    #[test]
    fn motion_shifts_depth() {
        let rig = test_rig();
        let pattern = pattern_7_4();
        let mut scene = plane_scene(1.0);
        scene.objects[0].velocity = [0.0, 0.0, 0.01];
        let frames = render_sequence(&scene, &rig, &[&pattern], 3, &RenderOptions::default());
        let i = frames[0].1.at(96, 60);
        assert_abs_diff_eq!(frames[0].1.depth[i], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(frames[1].1.depth[i], 1.01, epsilon = 1e-12);
        assert_abs_diff_eq!(frames[2].1.depth[i], 1.02, epsilon = 1e-12);
    }

    #[test]
    fn projector_shadowing() {
        let rig = test_rig();
        let pattern = pattern_7_4();
        // Sphere exactly halfway between a plane point and the projector.
        let scene = Scene {
            objects: vec![
                SceneObject {
                    surface: Surface::Plane {
                        point: [0.0, 0.0, 2.0],
                        normal: [0.0, 0.0, 1.0],
                    },
                    material: Material::default(),
                    velocity: [0.0; 3],
                },
                SceneObject {
                    surface: Surface::Sphere {
                        center: [0.1, 0.0, 1.0],
                        radius: 0.05,
                    },
                    material: Material::default(),
                    velocity: [0.0; 3],
                },
            ],
        };
        let opts = RenderOptions {
            shadows: true,
            ..Default::default()
        };
        let (_, gt) = render_frame(&scene, &rig, &pattern, &opts);
        // The plane point on the camera axis is behind the sphere as seen
        // from the projector: not lit.
        let i = gt.at(96, 60);
        assert_abs_diff_eq!(gt.depth[i], 2.0, epsilon = 1e-12);
        assert_eq!(gt.incident[i], [0.0; 3]);
        // A far-off plane point is lit.
        let j = gt.at(20, 20);
        assert_abs_diff_eq!(gt.depth[j], 2.0, epsilon = 1e-12);
        assert!(gt.incident[j][0] > 0.0);
    }
}
