//! Command-line driver for the polarization structured-light pipeline.
//!
//! Subcommands mirror the pipeline stages: pattern generation, synthetic
//! rendering, single-shot and multi-frame decoding, reflection
//! decomposition, reflectance fitting, relighting, and evaluation. Every
//! artifact crosses stage boundaries through the file formats in
//! `spm_core::io`, so stages can be re-run, diffed, and swapped
//! independently.
//!
//! Exit codes: 0 on success, 2 for malformed inputs or files, 3 for
//! violated preconditions, 4 for numeric failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use spm_core::brdf::{
    collect_fit_samples, fit_albedo, fit_specular, pca_normals, relight, FitConfig, RelightSource,
    SurfacePoint,
};
use spm_core::codebook::{assemble_pattern, generate_sequence, CodeParams, ProjectorPattern};
use spm_core::decoder::{reconstruct_single_shot, DecodeConfig};
use spm_core::decompose::{
    decompose_correspondences, DecomposedPoint, MuellerEstimate, ReflectionSplit,
};
use spm_core::dense::{
    adaptive_decode, dense_decode, label_motion, make_shifted_patterns, ShiftedPatternSet,
};
use spm_core::eval::{
    column_errors, decode_density, densified_depth_errors, depth_errors, error_stats,
    lit_pixel_count, normal_errors_deg, ErrorStats,
};
use spm_core::io::{
    read_cloud, read_pattern, read_psi, read_truth, write_cloud, write_pattern, write_psi,
    write_truth, CloudFile, IoError, PatternFile,
};
use spm_core::polarization::{PolarimetricImage, StokesVector};
use spm_core::reflectance::BrdfParams;
use spm_core::simulator::{render_frame, RenderOptions, Rig, Scene};
use spm_core::Correspondence;

#[derive(Parser)]
#[command(name = "spm", about = "Polarization structured-light pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stripe pattern file, optionally a shifted multi-frame set.
    GenPattern(GenPatternArgs),
    /// Render a scene to Stokes frames plus ground-truth tables.
    Render(RenderArgs),
    /// Decode one frame to a point cloud (single-shot).
    Decode(DecodeArgs),
    /// Split each cloud point into specular and diffuse reflection.
    Decompose(DecomposeArgs),
    /// Fit shared reflectance parameters and per-point normals and albedo.
    FitBrdf(FitBrdfArgs),
    /// Render the fitted surface under a novel light.
    Relight(RelightArgs),
    /// Decode a shifted frame cycle to a per-pixel cloud.
    Dense(DenseArgs),
    /// Compare a cloud against rendered ground truth.
    Eval(EvalArgs),
    /// Run a built-in end-to-end pipeline check.
    Selftest,
}

#[derive(Args)]
struct GenPatternArgs {
    /// Number of AoLP levels.
    #[arg(long)]
    k: u8,
    /// Window length in stripes.
    #[arg(long)]
    n: usize,
    /// Stripe width in projector columns.
    #[arg(long)]
    width: usize,
    #[arg(long, default_value_t = 0.0)]
    aolp_min: f64,
    #[arg(long, default_value_t = 80.0)]
    aolp_max: f64,
    /// Emit a shifted set with this many slots instead of a single pattern.
    #[arg(long)]
    shifted: Option<usize>,
    /// Gaussian blur of the level image in columns (shifted sets).
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Seed for the relabeling draw (shifted sets).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Scene description, JSON.
    #[arg(long)]
    scene: PathBuf,
    /// Pattern file from gen-pattern.
    #[arg(long)]
    pattern: PathBuf,
    /// Rig geometry, JSON.
    #[arg(long)]
    rig: PathBuf,
    /// Gaussian noise sigma on every Stokes component.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Frame count; defaults to the pattern cycle length.
    #[arg(long)]
    frames: Option<usize>,
    /// Enable projector shadowing between objects.
    #[arg(long)]
    shadows: bool,
    /// Output directory for frame_NNNN.psi and truth_NNNN.csv.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    pattern: PathBuf,
    #[arg(long)]
    rig: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitBrdfArgs {
    /// Decomposed cloud (from `decompose`).
    #[arg(long)]
    cloud: PathBuf,
    /// Fit settings, JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the fitted parameters, normals, and albedo.
    #[arg(short, long)]
    out: PathBuf,
    /// Also write a copy of the cloud with normals and albedo filled in.
    #[arg(long)]
    cloud_out: Option<PathBuf>,
}

#[derive(Args)]
struct RelightArgs {
    /// Cloud providing geometry and the rig.
    #[arg(long)]
    geometry: PathBuf,
    /// Fit output from fit-brdf.
    #[arg(long)]
    brdf: PathBuf,
    /// Light spec: "dir=x,y,z;I=v", "pos=x,y,z;I=v", or "projector;I=v".
    #[arg(long)]
    light: String,
    /// Pattern file, required for "projector" lights.
    #[arg(long)]
    pattern: Option<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct DenseArgs {
    /// Directory holding one frame_NNNN.psi per cycle slot.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    pattern: PathBuf,
    #[arg(long)]
    rig: PathBuf,
    /// Label motion and decode moving pixels single-shot.
    #[arg(long)]
    adaptive: bool,
    /// Relative intensity step that counts as motion.
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// Truth CSV, or a render directory (its last truth_NNNN.csv is used).
    #[arg(long)]
    truth: PathBuf,
    /// Kernel width of the densifying interpolator, pixels.
    #[arg(long, default_value_t = 8.0)]
    sigma: f64,
    /// Neighborhood size of the densifying interpolator.
    #[arg(long, default_value_t = 16)]
    neighbors: usize,
    #[arg(short, long)]
    out: PathBuf,
}

/// Failure category; the numeric value is the process exit code.
#[derive(Debug)]
enum CliError {
    /// Malformed file or argument content.
    Parse(String),
    /// Structurally valid inputs that violate a stage precondition.
    Precondition(String),
    /// A solver or search failed on valid inputs.
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Parse(m) | CliError::Precondition(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Parse(e.to_string())
    }
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Parse(format!("{}: {e}", path.display()))
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let body = std::fs::read_to_string(path).map_err(|e| parse_err(path, e))?;
    serde_json::from_str(&body).map_err(|e| parse_err(path, e))
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numeric(format!("serialization failed: {e}")))?;
    body.push('\n');
    std::fs::write(path, body).map_err(|e| parse_err(path, e))?;
    Ok(())
}

fn load_pattern_file(
    path: &Path,
) -> Result<(ProjectorPattern, Option<ShiftedPatternSet>), CliError> {
    let file = read_pattern(path).map_err(|e| parse_err(path, e))?;
    file.into_pattern().map_err(|e| parse_err(path, e))
}

fn frame_name(t: usize) -> String {
    format!("frame_{t:04}.psi")
}

fn truth_name(t: usize) -> String {
    format!("truth_{t:04}.csv")
}

fn cmd_gen_pattern(args: &GenPatternArgs) -> Result<(), CliError> {
    let params = CodeParams {
        k: args.k,
        n: args.n,
        aolp_min_deg: args.aolp_min,
        aolp_max_deg: args.aolp_max,
        stripe_width: args.width,
    };
    let seq =
        generate_sequence(&params).map_err(|e| CliError::Precondition(e.to_string()))?;
    let pattern = assemble_pattern(&params, &seq)
        .map_err(|e| CliError::Precondition(e.to_string()))?;
    let file = match args.shifted {
        Some(p) => {
            let set = make_shifted_patterns(&pattern, p, args.sigma, args.seed)
                .map_err(|e| CliError::Numeric(e.to_string()))?;
            PatternFile::from_set(&set)
        }
        None => PatternFile::from_pattern(&pattern),
    };
    write_pattern(&args.out, &file)?;
    println!(
        "pattern: {} stripes over {} columns, {} slot(s) -> {}",
        pattern.symbols.len(),
        pattern.width(),
        file.shift_offsets_px.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_render(args: &RenderArgs) -> Result<(), CliError> {
    let scene: Scene = load_json(&args.scene)?;
    let rig: Rig = load_json(&args.rig)?;
    let (pattern, set) = load_pattern_file(&args.pattern)?;
    let slots = set.as_ref().map(|s| s.len()).unwrap_or(1);
    let frames = args.frames.unwrap_or(slots);
    if frames == 0 {
        return Err(CliError::Precondition("frame count must be positive".into()));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| parse_err(&args.out, e))?;
    for t in 0..frames {
        let slot_pattern = match &set {
            Some(s) => &s.patterns[t % s.len()],
            None => &pattern,
        };
        let opts = RenderOptions {
            noise_sigma: args.noise,
            seed: args.seed,
            shadows: args.shadows,
            time: t as f64,
            ..RenderOptions::default()
        };
        let (image, truth) = render_frame(&scene, &rig, slot_pattern, &opts);
        write_psi(&args.out.join(frame_name(t)), &image)?;
        write_truth(&args.out.join(truth_name(t)), &truth)?;
    }
    println!(
        "rendered {frames} frame(s) at {}x{} -> {}",
        rig.width,
        rig.height,
        args.out.display()
    );
    Ok(())
}

fn cmd_decode(args: &DecodeArgs) -> Result<(), CliError> {
    let image = read_psi(&args.image).map_err(|e| parse_err(&args.image, e))?;
    let rig: Rig = load_json(&args.rig)?;
    let (pattern, _) = load_pattern_file(&args.pattern)?;
    let result = reconstruct_single_shot(&image, &pattern, &rig, &DecodeConfig::default());
    let cloud = CloudFile::from_correspondences(&rig, &result.correspondences);
    write_cloud(&args.out, &cloud)?;
    println!(
        "decoded {} points ({} stripes detected, {} matched) -> {}",
        cloud.points.len(),
        result.detected,
        result.matched,
        args.out.display()
    );
    Ok(())
}

fn cmd_decompose(args: &DecomposeArgs) -> Result<(), CliError> {
    let mut cloud = read_cloud(&args.cloud).map_err(|e| parse_err(&args.cloud, e))?;
    let corrs = cloud.to_correspondences();
    let summary = decompose_correspondences(&corrs);
    for d in &summary.points {
        let p = &mut cloud.points[d.index];
        p.c_s = Some(d.split.c_s);
        p.c_d = Some(d.split.c_d);
        // A clamped split carries no diffuse orientation; its md fields are
        // undefined, not zero, and fitting must not see them.
        if !d.split.clamped {
            p.md10 = Some(d.split.md10);
            p.md20 = Some(d.split.md20);
        }
    }
    write_cloud(&args.out, &cloud)?;
    println!(
        "decomposed {} of {} points ({} skipped, {} clamped) -> {}",
        summary.points.len(),
        cloud.points.len(),
        summary.skipped,
        summary.clamped,
        args.out.display()
    );
    Ok(())
}

/// Fit settings file. Every field is optional; ranges stay at the library
/// defaults, which are deliberately wide.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FitSettings {
    lambda_d: f64,
    lambda_n: f64,
    max_iters: usize,
    tol: f64,
    init: BrdfParams,
    /// Neighborhood size for the initial PCA normals.
    k_neighbors: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        let base = FitConfig::default();
        Self {
            lambda_d: base.lambda_d,
            lambda_n: base.lambda_n,
            max_iters: base.max_iters,
            tol: base.tol,
            init: base.init,
            k_neighbors: 12,
        }
    }
}

impl FitSettings {
    fn to_config(&self) -> FitConfig {
        FitConfig {
            lambda_d: self.lambda_d,
            lambda_n: self.lambda_n,
            max_iters: self.max_iters,
            tol: self.tol,
            init: self.init,
            ..FitConfig::default()
        }
    }
}

/// Fit output: the shared material, and per-sample normals and albedo
/// aligned with `point_index` into the source cloud.
#[derive(Debug, Serialize, Deserialize)]
struct BrdfFile {
    params: BrdfParams,
    objective: f64,
    iterations: usize,
    converged: bool,
    point_index: Vec<usize>,
    normals: Vec<[f64; 3]>,
    k_b: Vec<Option<f64>>,
}

fn cmd_fit_brdf(args: &FitBrdfArgs) -> Result<(), CliError> {
    let mut cloud = read_cloud(&args.cloud).map_err(|e| parse_err(&args.cloud, e))?;
    let settings = match &args.config {
        Some(path) => load_json::<FitSettings>(path)?,
        None => FitSettings::default(),
    };
    let corrs = cloud.to_correspondences();

    // Rebuild the reflection splits stored by `decompose`. Points that were
    // never decomposed carry no diffuse observation and are left out.
    let decomposed: Vec<DecomposedPoint> = cloud
        .points
        .iter()
        .enumerate()
        .filter_map(|(index, p)| {
            let (c_s, c_d, md10, md20) = (p.c_s?, p.c_d?, p.md10?, p.md20?);
            Some(DecomposedPoint {
                index,
                estimate: MuellerEstimate {
                    m00: c_s + c_d,
                    m10: c_d * md10,
                    m20: c_d * md20,
                    m11: c_s,
                    residual: 0.0,
                },
                split: ReflectionSplit {
                    c_s,
                    c_d,
                    md10,
                    md20,
                    clamped: false,
                },
            })
        })
        .collect();
    if decomposed.is_empty() {
        return Err(CliError::Precondition(
            "cloud has no decomposed points; run decompose first".into(),
        ));
    }

    let positions: Vec<Vector3<f64>> = cloud
        .points
        .iter()
        .map(|p| Vector3::new(p.position[0], p.position[1], p.position[2]))
        .collect();
    let normals = pca_normals(&positions, settings.k_neighbors)
        .map_err(|e| CliError::Precondition(e.to_string()))?;
    let samples = collect_fit_samples(&corrs, &decomposed, &normals, &cloud.rig);
    let point_index: Vec<usize> = decomposed
        .iter()
        .filter(|d| !d.split.clamped)
        .map(|d| d.index)
        .collect();

    let fit = fit_specular(&samples, &settings.to_config()).map_err(|e| match e {
        spm_core::FitError::TooFewPoints { .. } | spm_core::FitError::BadNeighborCount { .. } => {
            CliError::Precondition(e.to_string())
        }
        other => CliError::Numeric(other.to_string()),
    })?;
    let k_b = fit_albedo(&samples, &fit);

    let out = BrdfFile {
        params: fit.params,
        objective: fit.objective,
        iterations: fit.iterations,
        converged: fit.converged,
        point_index: point_index.clone(),
        normals: fit.normals.iter().map(|n| [n.x, n.y, n.z]).collect(),
        k_b: k_b.clone(),
    };
    save_json(&args.out, &out)?;

    if let Some(cloud_out) = &args.cloud_out {
        for (s, &pi) in point_index.iter().enumerate() {
            let p = &mut cloud.points[pi];
            p.normal = Some(out.normals[s]);
            p.k_b = k_b[s];
        }
        write_cloud(cloud_out, &cloud)?;
    }
    println!(
        "fit {} samples: mu={} k_s={} alpha={} beta={} objective={} ({} iters, converged={}) -> {}",
        samples.len(),
        fit.params.mu,
        fit.params.k_s,
        fit.params.alpha,
        fit.params.beta,
        fit.objective,
        fit.iterations,
        fit.converged,
        args.out.display()
    );
    Ok(())
}

fn parse_vec3(body: &str, what: &str) -> Result<Vector3<f64>, CliError> {
    let parts: Vec<&str> = body.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Parse(format!(
            "{what}: want three comma-separated numbers, got {body:?}"
        )));
    }
    let mut v = [0.0; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| CliError::Parse(format!("{what}: bad number {part:?}")))?;
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

/// Parse a light spec such as `dir=0.3,0.2,1;I=2` into a source kind and
/// intensity. The projector variant needs the pattern supplied separately.
fn parse_light(spec: &str) -> Result<(LightKind, f64), CliError> {
    let mut kind: Option<LightKind> = None;
    let mut intensity: f64 = 1.0;
    for part in spec.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if part == "projector" {
            kind = Some(LightKind::Projector);
        } else if let Some(body) = part.strip_prefix("dir=") {
            kind = Some(LightKind::Directional(parse_vec3(body, "dir")?));
        } else if let Some(body) = part.strip_prefix("pos=") {
            kind = Some(LightKind::Point(parse_vec3(body, "pos")?));
        } else if let Some(body) = part.strip_prefix("I=") {
            intensity = body
                .trim()
                .parse()
                .map_err(|_| CliError::Parse(format!("I: bad number {body:?}")))?;
        } else {
            return Err(CliError::Parse(format!("unknown light term {part:?}")));
        }
    }
    let kind = kind.ok_or_else(|| {
        CliError::Parse("light spec names no source (dir=, pos=, or projector)".into())
    })?;
    if !(intensity.is_finite() && intensity >= 0.0) {
        return Err(CliError::Parse(format!(
            "light intensity must be finite and nonnegative, got {intensity}"
        )));
    }
    Ok((kind, intensity))
}

enum LightKind {
    Directional(Vector3<f64>),
    Point(Vector3<f64>),
    Projector,
}

fn cmd_relight(args: &RelightArgs) -> Result<(), CliError> {
    let cloud = read_cloud(&args.geometry).map_err(|e| parse_err(&args.geometry, e))?;
    let brdf: BrdfFile = load_json(&args.brdf)?;
    if brdf.point_index.len() != brdf.normals.len() || brdf.normals.len() != brdf.k_b.len() {
        return Err(CliError::Parse(format!(
            "{}: point_index, normals, and k_b lengths disagree",
            args.brdf.display()
        )));
    }
    let (kind, intensity) = parse_light(&args.light)?;

    let rig = cloud.rig.clone();
    let mut points = Vec::with_capacity(brdf.point_index.len());
    for ((&pi, n), k_b) in brdf.point_index.iter().zip(&brdf.normals).zip(&brdf.k_b) {
        let Some(k_b) = *k_b else { continue };
        let p = cloud.points.get(pi).ok_or_else(|| {
            CliError::Parse(format!(
                "{}: point_index {pi} outside the cloud",
                args.brdf.display()
            ))
        })?;
        let u = p.cam_u.round();
        if u < 0.0 || u >= rig.width as f64 || p.row >= rig.height {
            continue;
        }
        points.push(SurfacePoint {
            pixel: (u as usize, p.row),
            point: Vector3::new(p.position[0], p.position[1], p.position[2]),
            normal: Vector3::new(n[0], n[1], n[2]),
            k_b,
        });
    }

    let pattern_storage;
    let source = match kind {
        LightKind::Directional(d) => RelightSource::Directional {
            toward_scene: d,
            intensity,
        },
        LightKind::Point(p) => RelightSource::Point {
            position: p,
            intensity,
        },
        LightKind::Projector => {
            let path = args.pattern.as_ref().ok_or_else(|| {
                CliError::Precondition("projector light needs --pattern".into())
            })?;
            let (pattern, _) = load_pattern_file(path)?;
            pattern_storage = pattern;
            RelightSource::Projector {
                pattern: &pattern_storage,
                intensity,
            }
        }
    };

    let s0 = relight(&points, &brdf.params, &source, &rig);
    let mut image = PolarimetricImage::zeros(rig.width, rig.height, 1);
    for y in 0..rig.height {
        for x in 0..rig.width {
            let v = s0[y * rig.width + x];
            image.set_stokes(x, y, 0, StokesVector::new(v, 0.0, 0.0, 0.0));
        }
    }
    write_psi(&args.out, &image)?;
    println!(
        "relit {} surface points -> {}",
        points.len(),
        args.out.display()
    );
    Ok(())
}

fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| parse_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("frame_") && n.ends_with(".psi"))
                .unwrap_or(false)
        })
        .collect();
    frames.sort();
    Ok(frames)
}

fn cmd_dense(args: &DenseArgs) -> Result<(), CliError> {
    let rig: Rig = load_json(&args.rig)?;
    let (_, set) = load_pattern_file(&args.pattern)?;
    let set = set.ok_or_else(|| {
        CliError::Precondition(
            "dense decoding needs a shifted pattern file (gen-pattern --shifted)".into(),
        )
    })?;
    let paths = list_frames(&args.frames)?;
    if paths.len() != set.len() {
        return Err(CliError::Precondition(format!(
            "{} frames in {} but the pattern cycle has {} slots",
            paths.len(),
            args.frames.display(),
            set.len()
        )));
    }
    let mut frames = Vec::with_capacity(paths.len());
    for p in &paths {
        frames.push(read_psi(p).map_err(|e| parse_err(p, e))?);
    }
    let mut cfg = spm_core::DenseConfig::default();
    cfg.tau_rel = args.tau;

    let result = if args.adaptive {
        let mask = label_motion(&frames, cfg.tau_rel);
        println!(
            "motion: {} of {} pixel-frames labeled dynamic",
            mask.dynamic_count(),
            frames.len() * rig.width * rig.height
        );
        adaptive_decode(&frames, &set, &mask, &rig, &cfg)
    } else {
        dense_decode(&frames, &set, &rig, &cfg)
    }
    .map_err(|e| CliError::Precondition(e.to_string()))?;

    let cloud = CloudFile::from_correspondences(&rig, &result.correspondences);
    write_cloud(&args.out, &cloud)?;
    println!(
        "dense: {} points from {} scored pixels ({} matched, {} refined) -> {}",
        cloud.points.len(),
        result.scored,
        result.matched,
        result.refined,
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct StatsOut {
    count: usize,
    mean: f64,
    median: f64,
    rms: f64,
    max: f64,
}

impl StatsOut {
    fn scaled(stats: &ErrorStats, factor: f64) -> Self {
        Self {
            count: stats.count,
            mean: stats.mean * factor,
            median: stats.median * factor,
            rms: stats.rms * factor,
            max: stats.max * factor,
        }
    }
}

#[derive(Debug, Serialize)]
struct Report {
    points: usize,
    lit_pixels: usize,
    /// Decoded points per lit truth pixel.
    density: Option<f64>,
    depth_mm: Option<StatsOut>,
    depth_densified_mm: Option<StatsOut>,
    column_px: Option<StatsOut>,
    normal_deg: Option<StatsOut>,
}

fn find_truth(path: &Path) -> Result<PathBuf, CliError> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    let mut truths: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| parse_err(path, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("truth_") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    truths.sort();
    truths.pop().ok_or_else(|| {
        CliError::Precondition(format!("{}: no truth_NNNN.csv files", path.display()))
    })
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let cloud = read_cloud(&args.cloud).map_err(|e| parse_err(&args.cloud, e))?;
    let truth_path = find_truth(&args.truth)?;
    let gt = read_truth(&truth_path).map_err(|e| parse_err(&truth_path, e))?;
    let corrs: Vec<Correspondence> = cloud.to_correspondences();

    const M_TO_MM: f64 = 1000.0;
    let depth = error_stats(&depth_errors(&corrs, &gt));
    let cols = error_stats(&column_errors(&corrs, &gt));
    let densified = if corrs.len() >= 3 {
        densified_depth_errors(&corrs, &gt, args.sigma, args.neighbors)
            .ok()
            .and_then(|v| error_stats(&v))
    } else {
        None
    };
    let normals: Vec<((usize, usize), [f64; 3])> = cloud
        .points
        .iter()
        .filter_map(|p| {
            let n = p.normal?;
            let u = p.cam_u.round();
            (u >= 0.0 && u < gt.width as f64 && p.row < gt.height)
                .then(|| ((u as usize, p.row), n))
        })
        .collect();
    let normal = error_stats(&normal_errors_deg(&normals, &gt));

    let report = Report {
        points: cloud.points.len(),
        lit_pixels: lit_pixel_count(&gt),
        density: decode_density(&corrs, &gt),
        depth_mm: depth.as_ref().map(|s| StatsOut::scaled(s, M_TO_MM)),
        depth_densified_mm: densified.as_ref().map(|s| StatsOut::scaled(s, M_TO_MM)),
        column_px: cols.as_ref().map(|s| StatsOut::scaled(s, 1.0)),
        normal_deg: normal.as_ref().map(|s| StatsOut::scaled(s, 1.0)),
    };
    save_json(&args.out, &report)?;
    let fmt = |s: &Option<StatsOut>| {
        s.as_ref()
            .map(|s| format!("mean {:.4} median {:.4}", s.mean, s.median))
            .unwrap_or_else(|| "n/a".into())
    };
    println!(
        "eval: {} points, depth[mm] {}, densified[mm] {} -> {}",
        report.points,
        fmt(&report.depth_mm),
        fmt(&report.depth_densified_mm),
        args.out.display()
    );
    Ok(())
}

fn selftest() -> Result<(), CliError> {
    use spm_core::simulator::{Material, MuellerOverride, SceneObject, Surface};

    let fail = |msg: String| CliError::Numeric(msg);

    let params = CodeParams {
        k: 7,
        n: 3,
        aolp_min_deg: 0.0,
        aolp_max_deg: 80.0,
        stripe_width: 12,
    };
    let seq = generate_sequence(&params).map_err(|e| fail(e.to_string()))?;
    spm_core::codebook::validate_sequence(&seq, &params).map_err(|e| fail(e.to_string()))?;
    let pattern = assemble_pattern(&params, &seq).map_err(|e| fail(e.to_string()))?;
    println!("[ok] codebook: {} stripes, all windows unique", seq.len());

    let rig = Rig {
        width: 96,
        height: 32,
        f_c: 160.0,
        cx: 48.0,
        cy: 16.0,
        f_p: 160.0,
        cx_p: pattern.width() as f64 / 2.0,
        baseline: 0.2,
    };
    let truth_lobes = MuellerOverride {
        c_s: 0.25,
        c_d: 0.6,
        rho_d: 0.04,
        phi_d_deg: 25.0,
    };
    let scene = Scene {
        objects: vec![SceneObject {
            surface: Surface::Sphere {
                center: [0.0, 0.0, 1.4],
                radius: 0.6,
            },
            material: Material {
                mueller_override: Some(truth_lobes),
                ..Material::default()
            },
            velocity: [0.0; 3],
        }],
    };
    let (image, truth) = render_frame(&scene, &rig, &pattern, &RenderOptions::default());
    let lit = lit_pixel_count(&truth);
    if lit == 0 {
        return Err(fail("render produced no lit pixels".into()));
    }
    println!("[ok] render: {lit} lit pixels");

    let decoded = reconstruct_single_shot(&image, &pattern, &rig, &DecodeConfig::default());
    let depth = error_stats(&depth_errors(&decoded.correspondences, &truth))
        .ok_or_else(|| fail("decode produced no points".into()))?;
    let bound = 1.2 * rig.width as f64 / (rig.f_c * rig.baseline);
    if depth.max > bound {
        return Err(fail(format!(
            "decoded depth error {} exceeds the quantization bound {bound}",
            depth.max
        )));
    }
    println!(
        "[ok] decode: {} points, max depth error {:.2e} m",
        decoded.correspondences.len(),
        depth.max
    );

    let summary = decompose_correspondences(&decoded.correspondences);
    let mut worst = 0.0f64;
    for d in &summary.points {
        worst = worst
            .max((d.split.c_s - truth_lobes.c_s).abs())
            .max((d.split.c_d - truth_lobes.c_d).abs());
    }
    if summary.points.is_empty() || worst > 1e-6 {
        return Err(fail(format!(
            "decomposition drifted: worst lobe error {worst:.3e} over {} points",
            summary.points.len()
        )));
    }
    println!(
        "[ok] decompose: {} points, worst lobe error {worst:.2e}",
        summary.points.len()
    );

    let set = make_shifted_patterns(&pattern, 4, 0.8, 11).map_err(|e| fail(e.to_string()))?;
    let frames: Vec<PolarimetricImage> = (0..set.len())
        .map(|t| {
            render_frame(
                &scene,
                &rig,
                &set.patterns[t],
                &RenderOptions {
                    time: t as f64,
                    ..RenderOptions::default()
                },
            )
            .0
        })
        .collect();
    let dense = dense_decode(&frames, &set, &rig, &spm_core::DenseConfig::default())
        .map_err(|e| fail(e.to_string()))?;
    if dense.correspondences.len() < decoded.correspondences.len() {
        return Err(fail(format!(
            "dense decode found {} points, fewer than single-shot's {}",
            dense.correspondences.len(),
            decoded.correspondences.len()
        )));
    }
    println!(
        "[ok] dense: {} points from a {}-frame cycle",
        dense.correspondences.len(),
        set.len()
    );
    println!("selftest passed");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenPattern(args) => cmd_gen_pattern(args),
        Command::Render(args) => cmd_render(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Decompose(args) => cmd_decompose(args),
        Command::FitBrdf(args) => cmd_fit_brdf(args),
        Command::Relight(args) => cmd_relight(args),
        Command::Dense(args) => cmd_dense(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Selftest => selftest(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
