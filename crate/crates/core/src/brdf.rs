//! Material and normal fitting against decomposed reflections, plus
//! relighting from the fitted model.
//!
//! The decomposition stage leaves one specular strength and one normalized
//! diffuse polarization pair per decoded point. Those observations pin a
//! global material (refractive index, specular gain, lobe shape) and,
//! weakly, each point's normal. The fit alternates a Levenberg step on the
//! shared material parameters with independent tangent-plane descent on
//! every normal, anchored to the initialization so the weakly constrained
//! normal directions stay put. Albedo then falls out per point in closed
//! form, and the fitted model can be re-rendered under a novel light.

use nalgebra::{Matrix4, Vector3, Vector4};
use rayon::prelude::*;
use thiserror::Error;

use crate::codebook::ProjectorPattern;
use crate::decoder::Correspondence;
use crate::decompose::DecomposedPoint;
use crate::polarization::{apply_mueller, StokesVector};
use crate::reflectance::{shade, surface_mueller, BrdfParams, ShadingGeometry};
use crate::simulator::{flip_z, Rig};

/// Smoothing width of the normal-anchor norm near zero. Below this
/// distance the anchor gradient fades linearly instead of staying at the
/// constant pull of a plain norm.
pub const HUBER_DELTA: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },
    #[error("k_neighbors must be at least 3, got {got}")]
    BadNeighborCount { got: usize },
    #[error("invalid fit configuration: {0}")]
    BadConfig(String),
}

/// Weights, stopping rules, parameter boxes and the starting material for
/// the specular fit. Box ends are inclusive clamps; open mathematical ends
/// carry a tiny interior margin.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Weight of the normalized diffuse polarization residuals.
    pub lambda_d: f64,
    /// Weight of the per-point normal anchor.
    pub lambda_n: f64,
    pub max_iters: usize,
    /// Relative objective improvement below which the fit stops.
    pub tol: f64,
    pub mu_range: (f64, f64),
    pub k_s_range: (f64, f64),
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
    pub init: BrdfParams,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda_d: 0.01,
            lambda_n: 0.001,
            max_iters: 150,
            tol: 1e-14,
            mu_range: (1.0 + 1e-9, 3.0),
            k_s_range: (0.0, f64::INFINITY),
            alpha_range: (1e-9, 2.0),
            beta_range: (0.0, 2.0),
            init: BrdfParams::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.lambda_d >= 0.0 && self.lambda_n >= 0.0) {
            return Err(FitError::BadConfig("weights must be nonnegative".into()));
        }
        for (name, (lo, hi)) in [
            ("mu", self.mu_range),
            ("k_s", self.k_s_range),
            ("alpha", self.alpha_range),
            ("beta", self.beta_range),
        ] {
            if !(lo <= hi) {
                return Err(FitError::BadConfig(format!("empty {name} range")));
            }
        }
        Ok(())
    }

    fn clamp(&self, p: BrdfParams) -> BrdfParams {
        BrdfParams {
            mu: p.mu.clamp(self.mu_range.0, self.mu_range.1),
            k_s: p.k_s.clamp(self.k_s_range.0, self.k_s_range.1),
            alpha: p.alpha.clamp(self.alpha_range.0, self.alpha_range.1),
            beta: p.beta.clamp(self.beta_range.0, self.beta_range.1),
            k_b: p.k_b,
        }
    }
}

/// One point's observations and geometry, ready for fitting. Directions
/// are unit vectors in the shading frame (z toward the camera).
#[derive(Debug, Clone, Copy)]
pub struct FitSample {
    pub point: Vector3<f64>,
    pub view: Vector3<f64>,
    pub light: Vector3<f64>,
    /// Observed specular strength.
    pub c_s: f64,
    /// Observed diffuse strength.
    pub c_d: f64,
    /// Observed normalized diffuse polarization elements.
    pub md10: f64,
    pub md20: f64,
    pub n_init: Vector3<f64>,
    /// False when the initial normal is unreliable and the anchor term
    /// must not apply.
    pub anchored: bool,
}

/// Per-point unit normals with degeneracy flags.
#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub normals: Vec<Vector3<f64>>,
    /// True where the neighborhood was too thin to define a plane.
    pub flagged: Vec<bool>,
}

/// Initial normals by principal component analysis of the k nearest
/// neighbors of every point. Normals are oriented toward the camera at the
/// origin and returned in the shading frame (positive z).
pub fn pca_normals(points: &[Vector3<f64>], k_neighbors: usize) -> Result<NormalEstimate, FitError> {
    if k_neighbors < 3 {
        return Err(FitError::BadNeighborCount { got: k_neighbors });
    }
    if points.len() < k_neighbors {
        return Err(FitError::TooFewPoints {
            got: points.len(),
            need: k_neighbors,
        });
    }

    let results: Vec<(Vector3<f64>, bool)> = points
        .par_iter()
        .map(|p| {
            let mut dists: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .map(|(j, q)| ((q - p).norm_squared(), j))
                .collect();
            dists.select_nth_unstable_by(k_neighbors - 1, |a, b| a.0.total_cmp(&b.0));
            let hood = &dists[..k_neighbors];

            let mut mean = Vector3::zeros();
            for &(_, j) in hood {
                mean += points[j];
            }
            mean /= k_neighbors as f64;
            let mut cov = nalgebra::Matrix3::<f64>::zeros();
            for &(_, j) in hood {
                let d = points[j] - mean;
                cov += d * d.transpose();
            }
            cov /= k_neighbors as f64;

            let eig = nalgebra::SymmetricEigen::new(cov);
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let [lo, mid, hi] = order;
            let degenerate =
                eig.eigenvalues[hi] <= 0.0 || eig.eigenvalues[mid] <= 1e-9 * eig.eigenvalues[hi];

            let mut n = eig.eigenvectors.column(lo).into_owned();
            // Toward the camera at the origin, then into the shading frame.
            if n.dot(p) > 0.0 {
                n = -n;
            }
            (flip_z(&n.normalize()), degenerate)
        })
        .collect();

    let (normals, flagged) = results.into_iter().unzip();
    Ok(NormalEstimate { normals, flagged })
}

/// Join decoded correspondences, their reflection splits and initial
/// normals into fit samples. Splits that collapsed to specular-only are
/// skipped; their diffuse observations carry no information.
pub fn collect_fit_samples(
    corrs: &[Correspondence],
    decomposed: &[DecomposedPoint],
    normals: &NormalEstimate,
    rig: &Rig,
) -> Vec<FitSample> {
    let proj = rig.projector_pos();
    decomposed
        .iter()
        .filter(|d| !d.split.clamped)
        .map(|d| {
            let corr = &corrs[d.index];
            let p = Vector3::new(corr.point[0], corr.point[1], corr.point[2]);
            FitSample {
                point: p,
                view: flip_z(&(-p).normalize()),
                light: flip_z(&(proj - p).normalize()),
                c_s: d.split.c_s,
                c_d: d.split.c_d,
                md10: d.split.md10,
                md20: d.split.md20,
                n_init: normals.normals[d.index],
                anchored: !normals.flagged[d.index],
            }
        })
        .collect()
}

/// Fit outcome: shared material, refined per-point normals, and the final
/// objective with its per-term breakdown. `converged` is false when the
/// iteration budget ran out first; the result is still the best visited.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: BrdfParams,
    pub normals: Vec<Vector3<f64>>,
    pub objective: f64,
    pub breakdown: ResidualBreakdown,
    /// Objective after the initial state and after every iteration;
    /// nonincreasing by construction.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Objective split by term, each already weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualBreakdown {
    pub specular: f64,
    pub diffuse10: f64,
    pub diffuse20: f64,
    pub anchor: f64,
}

fn huber(t: f64) -> f64 {
    if t <= HUBER_DELTA {
        t * t / (2.0 * HUBER_DELTA)
    } else {
        t - HUBER_DELTA / 2.0
    }
}

/// Model terms compared against one sample's observations.
fn rendered(params: &BrdfParams, s: &FitSample, n: &Vector3<f64>) -> (f64, f64, f64) {
    let out = shade(
        &ShadingGeometry {
            normal: *n,
            view: s.view,
            light: s.light,
        },
        params,
    );
    let two_phi = 2.0 * out.phi_d_deg.to_radians();
    (
        out.c_s,
        out.rho_d * two_phi.cos(),
        out.rho_d * two_phi.sin(),
    )
}

fn data_term(cfg: &FitConfig, s: &FitSample, params: &BrdfParams, n: &Vector3<f64>) -> f64 {
    let (cs, m10, m20) = rendered(params, s, n);
    let ds = cs - s.c_s;
    let d1 = m10 - s.md10;
    let d2 = m20 - s.md20;
    ds * ds + cfg.lambda_d * (d1 * d1 + d2 * d2)
}

fn anchor_term(cfg: &FitConfig, s: &FitSample, n: &Vector3<f64>) -> f64 {
    if !s.anchored {
        return 0.0;
    }
    cfg.lambda_n * huber((n - s.n_init).norm())
}

/// Full fitting objective at an explicit state.
pub fn fit_objective(
    samples: &[FitSample],
    params: &BrdfParams,
    normals: &[Vector3<f64>],
    cfg: &FitConfig,
) -> f64 {
    samples
        .par_iter()
        .zip(normals)
        .map(|(s, n)| data_term(cfg, s, params, n) + anchor_term(cfg, s, n))
        .sum()
}

fn breakdown(
    samples: &[FitSample],
    params: &BrdfParams,
    normals: &[Vector3<f64>],
    cfg: &FitConfig,
) -> ResidualBreakdown {
    let mut b = ResidualBreakdown {
        specular: 0.0,
        diffuse10: 0.0,
        diffuse20: 0.0,
        anchor: 0.0,
    };
    for (s, n) in samples.iter().zip(normals) {
        let (cs, m10, m20) = rendered(params, s, n);
        b.specular += (cs - s.c_s).powi(2);
        b.diffuse10 += cfg.lambda_d * (m10 - s.md10).powi(2);
        b.diffuse20 += cfg.lambda_d * (m20 - s.md20).powi(2);
        b.anchor += anchor_term(cfg, s, n);
    }
    b
}

fn params_to_vec(p: &BrdfParams) -> Vector4<f64> {
    Vector4::new(p.mu, p.k_s, p.alpha, p.beta)
}

fn vec_to_params(v: &Vector4<f64>, k_b: f64) -> BrdfParams {
    BrdfParams {
        mu: v[0],
        k_s: v[1],
        alpha: v[2],
        beta: v[3],
        k_b,
    }
}

/// Gradient of the objective with respect to (mu, k_s, alpha, beta) by
/// central differences with per-parameter steps of 1e-6 of scale.
pub fn material_gradient(
    samples: &[FitSample],
    params: &BrdfParams,
    normals: &[Vector3<f64>],
    cfg: &FitConfig,
) -> [f64; 4] {
    let base = params_to_vec(params);
    let mut g = [0.0f64; 4];
    for i in 0..4 {
        let h = 1e-6 * base[i].abs().max(1.0);
        let mut up = base;
        up[i] += h;
        let mut dn = base;
        dn[i] -= h;
        let fu = fit_objective(samples, &vec_to_params(&up, params.k_b), normals, cfg);
        let fd = fit_objective(samples, &vec_to_params(&dn, params.k_b), normals, cfg);
        g[i] = (fu - fd) / (2.0 * h);
    }
    g
}

/// Stacked residual vector of the material data terms (three entries per
/// sample, diffuse rows pre-scaled by sqrt(lambda_d)).
fn material_residuals(
    samples: &[FitSample],
    params: &BrdfParams,
    normals: &[Vector3<f64>],
    cfg: &FitConfig,
) -> Vec<f64> {
    let sqrt_ld = cfg.lambda_d.sqrt();
    samples
        .par_iter()
        .zip(normals)
        .flat_map_iter(|(s, n)| {
            let (cs, m10, m20) = rendered(params, s, n);
            [
                cs - s.c_s,
                sqrt_ld * (m10 - s.md10),
                sqrt_ld * (m20 - s.md20),
            ]
        })
        .collect()
}

fn sum_squares(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// One damped least-squares step on the material parameters. Only steps
/// that strictly decrease the data objective are accepted; the damping
/// factor is returned for the next call.
fn material_step(
    samples: &[FitSample],
    cfg: &FitConfig,
    params: BrdfParams,
    normals: &[Vector3<f64>],
    mut damping: f64,
) -> (BrdfParams, f64) {
    let r0 = material_residuals(samples, &params, normals, cfg);
    let f0 = sum_squares(&r0);
    let base = params_to_vec(&params);

    // Central-difference Jacobian columns.
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(4);
    for i in 0..4 {
        let h = 1e-6 * base[i].abs().max(1.0);
        let mut up = base;
        up[i] += h;
        let mut dn = base;
        dn[i] -= h;
        let rp = material_residuals(samples, &vec_to_params(&up, params.k_b), normals, cfg);
        let rm = material_residuals(samples, &vec_to_params(&dn, params.k_b), normals, cfg);
        cols.push(
            rp.iter()
                .zip(&rm)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect(),
        );
    }

    let mut jtj = Matrix4::<f64>::zeros();
    let mut jtr = Vector4::<f64>::zeros();
    for i in 0..4 {
        for j in i..4 {
            let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            jtj[(i, j)] = dot;
            jtj[(j, i)] = dot;
        }
        jtr[i] = cols[i].iter().zip(&r0).map(|(a, b)| a * b).sum();
    }

    for _ in 0..30 {
        let mut a = jtj;
        for i in 0..4 {
            a[(i, i)] += damping * jtj[(i, i)].max(1e-12);
        }
        let delta = match a.lu().solve(&(-jtr)) {
            Some(d) => d,
            None => {
                damping *= 4.0;
                continue;
            }
        };
        let cand = cfg.clamp(vec_to_params(&(base + delta), params.k_b));
        let f1 = sum_squares(&material_residuals(samples, &cand, normals, cfg));
        if f1 < f0 {
            return (cand, (damping / 3.0).max(1e-12));
        }
        damping *= 4.0;
        if damping > 1e12 {
            break;
        }
    }
    (params, damping.min(1e12))
}

fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Descend one point's term over a two-parameter tangent perturbation of
/// its normal, renormalizing every candidate. Accepts only decreases.
///
/// Damped Gauss-Newton on the per-point residuals: the specular wall and
/// the diffuse-orientation trough differ in curvature by orders of
/// magnitude, which defeats plain gradient descent.
fn refine_normal(
    cfg: &FitConfig,
    s: &FitSample,
    params: &BrdfParams,
    start: &Vector3<f64>,
) -> Vector3<f64> {
    let sqrt_ld = cfg.lambda_d.sqrt();
    let joint = |n: &Vector3<f64>| -> Vector3<f64> {
        let (cs, m10, m20) = rendered(params, s, n);
        Vector3::new(
            cs - s.c_s,
            sqrt_ld * (m10 - s.md10),
            sqrt_ld * (m20 - s.md20),
        )
    };
    // Diffuse-orientation residuals alone: (rho_d, 2 phi_d) against the
    // normal is locally bijective, so this system has a single basin and
    // makes a reliable seed when the joint term is multimodal.
    let md_only = |n: &Vector3<f64>| -> Vector3<f64> {
        let (_, m10, m20) = rendered(params, s, n);
        Vector3::new(m10 - s.md10, m20 - s.md20, 0.0)
    };
    let term = |n: &Vector3<f64>| data_term(cfg, s, params, n) + anchor_term(cfg, s, n);
    let descend = |start: Vector3<f64>,
                   residuals: &dyn Fn(&Vector3<f64>) -> Vector3<f64>,
                   anchored: bool,
                   rounds: usize|
     -> Vector3<f64> {
        let mut n = start;
        let objective = |n: &Vector3<f64>| {
            let r = residuals(n);
            r.norm_squared() + if anchored { anchor_term(cfg, s, n) } else { 0.0 }
        };
        let mut f0 = objective(&n);
        for _ in 0..rounds {
            let (t1, t2) = tangent_basis(&n);
            let r0 = residuals(&n);
            let h = 1e-7;
            let j1 = (residuals(&(n + h * t1).normalize())
                - residuals(&(n - h * t1).normalize()))
                / (2.0 * h);
            let j2 = (residuals(&(n + h * t2).normalize())
                - residuals(&(n - h * t2).normalize()))
                / (2.0 * h);
            // Gradient of the term: data part 2 J^T r plus the
            // Huber-smoothed anchor pull toward the initial normal.
            let mut g1 = 2.0 * j1.dot(&r0);
            let mut g2 = 2.0 * j2.dot(&r0);
            if anchored && s.anchored {
                let d = n - s.n_init;
                let w = cfg.lambda_n / (d.norm_squared() + HUBER_DELTA * HUBER_DELTA).sqrt();
                g1 += w * d.dot(&t1);
                g2 += w * d.dot(&t2);
            }
            if g1.hypot(g2) < 1e-15 {
                break;
            }
            let a11 = 2.0 * j1.dot(&j1);
            let a12 = 2.0 * j1.dot(&j2);
            let a22 = 2.0 * j2.dot(&j2);
            let scale = (a11 + a22).max(1e-12);
            let mut damping = 1e-8 * scale;
            let mut moved = false;
            for _ in 0..12 {
                let b11 = a11 + damping;
                let b22 = a22 + damping;
                let det = b11 * b22 - a12 * a12;
                if det > 0.0 {
                    let d1 = (-g1 * b22 + g2 * a12) / det;
                    let d2 = (g1 * a12 - g2 * b11) / det;
                    let len = d1.hypot(d2);
                    // Cap the tangent move; far candidates leave the
                    // local model's validity and can hop across the lobe.
                    let limit = 0.3;
                    let (d1, d2) = if len > limit {
                        (d1 * limit / len, d2 * limit / len)
                    } else {
                        (d1, d2)
                    };
                    let cand = (n + d1 * t1 + d2 * t2).normalize();
                    let f1 = objective(&cand);
                    if f1 < f0 {
                        n = cand;
                        f0 = f1;
                        moved = true;
                        break;
                    }
                }
                damping = (damping * 10.0).max(1e-10 * scale);
            }
            if !moved {
                break;
            }
        }
        n
    };
    let direct = descend(*start, &joint, true, 4);
    // Second candidate seeded by the single-basin diffuse solve; rescues
    // points whose joint descent stalled against the specular wall.
    let seeded = descend(descend(*start, &md_only, false, 4), &joint, true, 4);
    if term(&seeded) < term(&direct) {
        seeded
    } else {
        direct
    }
}

/// Joint fit of the shared material parameters and per-point normals.
///
/// Alternates one damped material step with an independent descent pass
/// over every normal. Accepted iterations never increase the objective;
/// the loop stops on relative improvement below `cfg.tol` or after
/// `cfg.max_iters` iterations (then `converged` is false).
pub fn fit_specular(samples: &[FitSample], cfg: &FitConfig) -> Result<FitResult, FitError> {
    cfg.validate()?;
    if samples.len() < 10 {
        return Err(FitError::TooFewPoints {
            got: samples.len(),
            need: 10,
        });
    }

    let mut params = cfg.clamp(cfg.init);
    let mut normals: Vec<Vector3<f64>> = samples.iter().map(|s| s.n_init.normalize()).collect();
    // Conservative trust-region start: early material steps stay tiny
    // until the normal refinement has settled against the initial
    // material, otherwise the material reshapes itself around normal
    // errors and drags the normals with it.
    let mut damping = 1e6;
    let mut history = vec![fit_objective(samples, &params, &normals, cfg)];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        iterations += 1;
        let (next, next_damping) = material_step(samples, cfg, params, &normals, damping);
        params = next;
        damping = next_damping;
        normals = samples
            .par_iter()
            .zip(&normals)
            .map(|(s, n)| refine_normal(cfg, s, &params, n))
            .collect();
        let f = fit_objective(samples, &params, &normals, cfg);
        let prev = *history.last().unwrap();
        history.push(f);
        if prev - f <= cfg.tol * prev.max(1e-30) {
            converged = true;
            break;
        }
    }

    let objective = *history.last().unwrap();
    Ok(FitResult {
        breakdown: breakdown(samples, &params, &normals, cfg),
        params,
        normals,
        objective,
        history,
        iterations,
        converged,
    })
}

/// Per-point diffuse albedo in closed form: the scale that minimizes the
/// squared gap between the observed diffuse strength and the rendered
/// diffuse term at unit albedo. Points with zero shading are undefined.
pub fn fit_albedo(samples: &[FitSample], fit: &FitResult) -> Vec<Option<f64>> {
    samples
        .iter()
        .zip(&fit.normals)
        .map(|(s, n)| {
            let unit = shade(
                &ShadingGeometry {
                    normal: *n,
                    view: s.view,
                    light: s.light,
                },
                &BrdfParams {
                    k_b: 1.0,
                    ..fit.params
                },
            )
            .c_d;
            if unit <= 0.0 {
                None
            } else {
                Some(s.c_d * unit / (unit * unit))
            }
        })
        .collect()
}

/// One reconstructed surface sample for relighting.
#[derive(Debug, Clone, Copy)]
pub struct SurfacePoint {
    /// Pixel that owns the sample.
    pub pixel: (usize, usize),
    pub point: Vector3<f64>,
    /// Shading-frame unit normal.
    pub normal: Vector3<f64>,
    /// Diffuse albedo at this point.
    pub k_b: f64,
}

/// A novel light for relighting. Unpolarized sources carry no falloff,
/// matching the projector model of the renderer.
#[derive(Debug, Clone, Copy)]
pub enum RelightSource<'a> {
    /// Parallel light; `toward_scene` is the propagation direction.
    Directional {
        toward_scene: Vector3<f64>,
        intensity: f64,
    },
    /// Unpolarized point source.
    Point {
        position: Vector3<f64>,
        intensity: f64,
    },
    /// The stripe projector itself: fully polarized per-column states from
    /// the rig's projector position.
    Projector {
        pattern: &'a ProjectorPattern,
        intensity: f64,
    },
}

/// Render the total-intensity image of the fitted surface under a novel
/// light. Pixels without a sample stay zero.
pub fn relight(
    points: &[SurfacePoint],
    material: &BrdfParams,
    source: &RelightSource,
    rig: &Rig,
) -> Vec<f64> {
    let mut image = vec![0.0f64; rig.width * rig.height];
    let shaded: Vec<(usize, usize, f64)> = points
        .par_iter()
        .map(|sp| {
            let p = sp.point;
            let view = flip_z(&(-p).normalize());
            let (light_world, incident) = match source {
                RelightSource::Directional {
                    toward_scene,
                    intensity,
                } => (
                    -toward_scene.normalize(),
                    StokesVector::unpolarized(*intensity),
                ),
                RelightSource::Point {
                    position,
                    intensity,
                } => (
                    (position - p).normalize(),
                    StokesVector::unpolarized(*intensity),
                ),
                RelightSource::Projector { pattern, intensity } => {
                    let q = rig.projector_col(&p);
                    let lit = q >= 0.0 && q <= (pattern.width() - 1) as f64;
                    let s = if lit {
                        StokesVector::linear(*intensity, 1.0, pattern.aolp_at(q))
                    } else {
                        StokesVector::unpolarized(0.0)
                    };
                    ((rig.projector_pos() - p).normalize(), s)
                }
            };
            let geom = ShadingGeometry {
                normal: sp.normal,
                view,
                light: flip_z(&light_world),
            };
            let out = shade(
                &geom,
                &BrdfParams {
                    k_b: sp.k_b,
                    ..*material
                },
            );
            let m = surface_mueller(out.c_s, out.c_d, out.rho_d, out.phi_d_deg);
            (sp.pixel.0, sp.pixel.1, apply_mueller(&m, &incident).s0)
        })
        .collect();
    for (u, v, s0) in shaded {
        if u < rig.width && v < rig.height {
            image[v * rig.width + u] = s0;
        }
    }
    image
}
