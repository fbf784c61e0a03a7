//! Multi-frame per-pixel decoding with shifted stripe patterns.
//!
//! A single pattern resolves the surface only per stripe. For a static
//! scene the projector cycles `P` copies of the pattern, each shifted by a
//! fraction of the stripe period, edge-smoothed, and relabeled so that
//! every projector column emits at least two distinct angles over the
//! cycle. Each camera pixel then collects a stack of polarized Stokes
//! components across the cycle, and matching that stack against the
//! per-column projected stacks yields pixel-wise correspondences with
//! sub-pixel refinement. The matched stacks double as decomposition input
//! at every pixel.
//!
//! The observed stack is an affine image of the projected stack at the
//! true column: the specular lobe scales both polarized components by one
//! factor and the diffuse lobe shifts s1 and s2 each by a constant. The
//! matching cost fits that map in closed form, in both directions so that
//! pixels with nearly unpolarized output still discriminate columns.
//!
//! When the scene moves, per-pixel motion labels pick the decoder per
//! region: dynamic spans fall back to single-shot stripe decoding of the
//! newest frame, static spans keep the multi-frame matcher, and one
//! monotone alignment per scanline spans both.

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::codebook::ProjectorPattern;
use crate::decoder::{
    build_row_correspondences, decode_row, detect_stripes_row, stripe_pair_score, Correspondence,
    DecodeConfig, StokesPair,
};
use crate::dp::align;
use crate::polarization::{aolp_distance_deg, canonical_aolp_deg, PolarimetricImage, StokesVector};
use crate::simulator::Rig;

/// Design matrices of per-column incident stacks must stay below this
/// condition number for the downstream decomposition to be well posed.
pub const COLUMN_CONDITION_LIMIT: f64 = 1e6;

/// Permutation redraws before pattern generation gives up.
const PERMUTATION_TRIES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DenseError {
    #[error("need at least 2 shifted patterns, got {got}")]
    TooFewPatterns { got: usize },
    #[error("{frames} frames vs {patterns} patterns; the cycle pairs them 1:1")]
    FrameCountMismatch { frames: usize, patterns: usize },
    #[error("motion mask covers {mask} frames, decode window has {frames}")]
    MaskMismatch { mask: usize, frames: usize },
    #[error("column {column} keeps a single incident angle in every draw ({tries} tried)")]
    PermutationSearchFailed { column: usize, tries: usize },
}

/// A cycle of shifted, smoothed, relabeled copies of one base pattern.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShiftedPatternSet {
    pub base: ProjectorPattern,
    /// One full pattern per cycle slot, ready for single-shot decoding.
    pub patterns: Vec<ProjectorPattern>,
    /// Shift of each pattern in projector columns.
    pub offsets_px: Vec<f64>,
    pub sigma_px: f64,
    /// Level relabeling per pattern: stripe symbol `s` projects level
    /// `perm[s]`. Drawn from the dihedral maps of the level cycle, which
    /// preserve the code's adjacency constraint and window uniqueness.
    pub level_perms: Vec<Vec<u8>>,
}

impl ShiftedPatternSet {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Rebuild a set from stored parts, enforcing the per-column angle
    /// diversity that decomposition needs. Deterministic, so a reloaded
    /// file reproduces the generated set exactly.
    pub fn from_parts(
        base: ProjectorPattern,
        level_perms: Vec<Vec<u8>>,
        offsets_px: Vec<f64>,
        sigma_px: f64,
    ) -> Result<Self, DenseError> {
        if level_perms.len() < 2 || level_perms.len() != offsets_px.len() {
            return Err(DenseError::TooFewPatterns {
                got: level_perms.len().min(offsets_px.len()),
            });
        }
        let patterns: Vec<ProjectorPattern> = level_perms
            .iter()
            .zip(&offsets_px)
            .map(|(perm, &off)| build_shifted(&base, perm, off, sigma_px))
            .collect();
        if let Some(column) = diversity_failure(&patterns) {
            return Err(DenseError::PermutationSearchFailed { column, tries: 1 });
        }
        Ok(Self {
            base,
            patterns,
            offsets_px,
            sigma_px,
            level_perms,
        })
    }
}

/// The relabelings that keep a constrained sequence valid: rotations of
/// the level cycle preserve cyclic level distances, reflections negate
/// them, and both preserve window uniqueness. Index 0 is the identity.
fn dihedral_maps(k: usize) -> Vec<Vec<u8>> {
    let mut maps = Vec::with_capacity(2 * k);
    for r in 0..k {
        maps.push((0..k).map(|s| ((s + r) % k) as u8).collect());
    }
    for r in 0..k {
        maps.push((0..k).map(|s| ((k - 1 - s + r) % k) as u8).collect());
    }
    maps
}

/// Smooth angles in the doubled-angle vector representation. Linear
/// averaging of wrapped angles is wrong; averaging (cos 2phi, sin 2phi)
/// and reading the angle back stays on the minor arc between neighbors.
fn smooth_angles(hard_deg: &[f64], sigma_px: f64) -> Vec<f64> {
    if sigma_px <= 0.0 {
        return hard_deg.to_vec();
    }
    let radius = (4.0 * sigma_px).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f64 / sigma_px).powi(2)).exp())
        .collect();
    let n = hard_deg.len() as isize;
    (0..n)
        .map(|c| {
            let mut x = 0.0;
            let mut y = 0.0;
            for (wi, d) in (-radius..=radius).enumerate() {
                let src = (c + d).clamp(0, n - 1) as usize;
                let a = 2.0 * hard_deg[src].to_radians();
                x += weights[wi] * a.cos();
                y += weights[wi] * a.sin();
            }
            canonical_aolp_deg((0.5 * y.atan2(x)).to_degrees())
        })
        .collect()
}

/// Expand one shifted, relabeled, smoothed copy of the base pattern.
/// Columns left of the shifted start replicate the first stripe.
fn build_shifted(
    base: &ProjectorPattern,
    perm: &[u8],
    offset_px: f64,
    sigma_px: f64,
) -> ProjectorPattern {
    let w = base.params.stripe_width as f64;
    let n_stripes = base.symbols.len() as isize;
    let symbols: Vec<u8> = base.symbols.iter().map(|&s| perm[s as usize]).collect();
    let width = base.width();
    let hard: Vec<f64> = (0..width)
        .map(|c| {
            let idx = (((c as f64 - offset_px) / w).floor() as isize).clamp(0, n_stripes - 1);
            base.levels[symbols[idx as usize] as usize]
        })
        .collect();
    ProjectorPattern {
        params: base.params.clone(),
        levels: base.levels.clone(),
        symbols,
        column_aolp_deg: smooth_angles(&hard, sigma_px),
        offset_px,
    }
}

/// First column whose incident stack is degenerate: fewer than two
/// distinct angles over the cycle, or a decomposition design matrix
/// conditioned at or beyond [`COLUMN_CONDITION_LIMIT`].
fn diversity_failure(patterns: &[ProjectorPattern]) -> Option<usize> {
    let width = patterns[0].width();
    (0..width).into_par_iter().find_first(|&c| {
        let first = patterns[0].column_aolp_deg[c];
        let distinct = patterns
            .iter()
            .any(|p| aolp_distance_deg(p.column_aolp_deg[c], first) > 1e-9);
        if !distinct {
            return true;
        }
        column_design_condition(patterns, c) >= COLUMN_CONDITION_LIMIT
    })
}

/// Condition number of the stacked per-column design matrix whose rows are
/// `[1, 0, s1]` and `[0, 1, -s2]` per cycle slot, the system that the
/// decomposition solves per pixel.
fn column_design_condition(patterns: &[ProjectorPattern], column: usize) -> f64 {
    let mut g: Matrix3<f64> = Matrix3::zeros();
    for p in patterns {
        let a = 2.0 * p.column_aolp_deg[column].to_radians();
        let (s1, s2) = (a.cos(), a.sin());
        g[(0, 0)] += 1.0;
        g[(0, 2)] += s1;
        g[(2, 0)] += s1;
        g[(1, 1)] += 1.0;
        g[(1, 2)] -= s2;
        g[(2, 1)] -= s2;
        g[(2, 2)] += s1 * s1 + s2 * s2;
    }
    let eigen = g.symmetric_eigenvalues();
    let max = eigen.iter().cloned().fold(f64::MIN, f64::max);
    let min = eigen.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        (max / min).sqrt()
    }
}

/// Generate `p` shifted patterns with offsets evenly spaced over one
/// stripe period and seeded level relabelings, redrawing until every
/// column sees at least two distinct incident angles over the cycle.
/// Pattern 0 keeps the identity relabeling at offset 0, so single-shot
/// decoding of the first frame matches the base pattern exactly.
pub fn make_shifted_patterns(
    base: &ProjectorPattern,
    p: usize,
    sigma_px: f64,
    seed: u64,
) -> Result<ShiftedPatternSet, DenseError> {
    if p < 2 {
        return Err(DenseError::TooFewPatterns { got: p });
    }
    let w = base.params.stripe_width as f64;
    let offsets_px: Vec<f64> = (0..p).map(|t| t as f64 * w / p as f64).collect();
    let maps = dihedral_maps(base.params.k as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_column = 0;
    for _ in 0..PERMUTATION_TRIES {
        let mut pool: Vec<usize> = (1..maps.len()).collect();
        pool.shuffle(&mut rng);
        let perms: Vec<Vec<u8>> = (0..p)
            .map(|t| {
                if t == 0 {
                    maps[0].clone()
                } else {
                    maps[pool[(t - 1) % pool.len()]].clone()
                }
            })
            .collect();
        match ShiftedPatternSet::from_parts(base.clone(), perms, offsets_px.clone(), sigma_px) {
            Ok(set) => return Ok(set),
            Err(DenseError::PermutationSearchFailed { column, .. }) => last_column = column,
            Err(other) => return Err(other),
        }
    }
    Err(DenseError::PermutationSearchFailed {
        column: last_column,
        tries: PERMUTATION_TRIES,
    })
}

/// Interleaved (s1, s2) components over one pattern cycle, at one camera
/// pixel or one projector column.
#[derive(Debug, Clone, PartialEq)]
pub struct StokesStack {
    values: Vec<f64>,
}

impl StokesStack {
    /// `values` interleaves (s1, s2) per cycle slot; at least two slots.
    pub fn new(values: Vec<f64>) -> Self {
        assert!(values.len() >= 4 && values.len() % 2 == 0);
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slots(&self) -> usize {
        self.values.len() / 2
    }
}

/// Scale and per-component offsets fitted by one directed matching term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub a: f64,
    pub b1: f64,
    pub b2: f64,
}

/// Per-stack sums reused across all pairings of the stack.
#[derive(Debug, Clone)]
struct StackStats {
    dot_self: f64,
    sum_s1: f64,
    sum_s2: f64,
    /// Inverse Gram of the regressors `[stack | s1 slots | s2 slots]`.
    inv: [[f64; 3]; 3],
}

fn stack_stats(v: &[f64]) -> StackStats {
    let slots = (v.len() / 2) as f64;
    let mut dot = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        dot += x * x;
        if i % 2 == 0 {
            s1 += x;
        } else {
            s2 += x;
        }
    }
    StackStats {
        dot_self: dot,
        sum_s1: s1,
        sum_s2: s2,
        inv: invert_gram(dot, s1, s2, slots),
    }
}

/// Inverse of `[[dot, s1, s2], [s1, n, 0], [s2, 0, n]]`. The matrix is
/// singular exactly when the stack is constant per slot; a tiny ridge on
/// the stack regressor then reproduces the minimum-norm fit (a = 0).
fn invert_gram(dot: f64, s1: f64, s2: f64, n: f64) -> [[f64; 3]; 3] {
    let mut d = dot;
    let scale = dot.max(n).max(1e-300);
    let mut det = n * (n * d - s1 * s1 - s2 * s2);
    if det.abs() <= 1e-12 * scale * n * n {
        d += 1e-9 * scale;
        det = n * (n * d - s1 * s1 - s2 * s2);
    }
    let inv_det = 1.0 / det;
    [
        [n * n * inv_det, -n * s1 * inv_det, -n * s2 * inv_det],
        [
            -n * s1 * inv_det,
            (n * d - s2 * s2) * inv_det,
            s1 * s2 * inv_det,
        ],
        [
            -n * s2 * inv_det,
            s1 * s2 * inv_det,
            (n * d - s1 * s1) * inv_det,
        ],
    ]
}

fn quad(m: &[[f64; 3]; 3], r: &[f64; 3]) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += r[i] * m[i][j] * r[j];
        }
    }
    acc
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One directed residual: distance from `target` to the affine span of
/// `basis` and the two slot indicators.
fn directed(target: &StackStats, basis: &StackStats, cross: f64) -> f64 {
    let r = [cross, target.sum_s1, target.sum_s2];
    (target.dot_self - quad(&basis.inv, &r)).max(0.0)
}

fn cost_with_stats(so: &StackStats, si: &StackStats, cross: f64) -> f64 {
    directed(so, si, cross) + directed(si, so, cross)
}

/// Closed-form minimizer of `|a basis + b1 odd + b2 even - target|^2` over
/// (a, b1, b2), and the residual evaluated at it. `odd` and `even` select
/// the interleaved s1 and s2 slots.
pub fn affine_fit(target: &StokesStack, basis: &StokesStack) -> (AffineFit, f64) {
    assert_eq!(target.values.len(), basis.values.len());
    let bs = stack_stats(&basis.values);
    let ts = stack_stats(&target.values);
    let r = [dot(&target.values, &basis.values), ts.sum_s1, ts.sum_s2];
    let beta: Vec<f64> = (0..3)
        .map(|i| (0..3).map(|j| bs.inv[i][j] * r[j]).sum())
        .collect();
    let fit = AffineFit {
        a: beta[0],
        b1: beta[1],
        b2: beta[2],
    };
    let mut residual = 0.0;
    for (i, (&t, &b)) in target.values.iter().zip(&basis.values).enumerate() {
        let offset = if i % 2 == 0 { fit.b1 } else { fit.b2 };
        let e = fit.a * b + offset - t;
        residual += e * e;
    }
    (fit, residual)
}

/// Symmetric matching cost between an observed and a projected stack: the
/// sum of both directed affine-fit residuals. Zero exactly when the two
/// stacks are affine images of each other.
pub fn match_cost(so: &StokesStack, si: &StokesStack) -> f64 {
    affine_fit(so, si).1 + affine_fit(si, so).1
}

/// Turn a per-scanline cost matrix into scores against the blended
/// threshold `c0 = (1 - t) min + t max`; positive scores mark costs below
/// the threshold.
pub fn score_and_threshold(costs: &[Vec<f64>], t: f64) -> (Vec<Vec<f64>>, f64) {
    assert!(!costs.is_empty() && !costs[0].is_empty());
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for row in costs {
        for &c in row {
            min = min.min(c);
            max = max.max(c);
        }
    }
    let c0 = (1.0 - t) * min + t * max;
    let scores = costs
        .iter()
        .map(|row| row.iter().map(|&c| c0 - c).collect())
        .collect();
    (scores, c0)
}

/// A parabola-refined peak column. `refined` is false when the triple was
/// flat or the peak had no usable neighbors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubpixelPeak {
    pub col: f64,
    pub refined: bool,
}

/// Vertex of the parabola through the peak and its neighbors. The caller
/// passes a local maximum; anything else (border peaks, flat triples)
/// returns the integer column unrefined.
pub fn subpixel_refine(scores: &[f64], j_peak: usize) -> SubpixelPeak {
    let unrefined = SubpixelPeak {
        col: j_peak as f64,
        refined: false,
    };
    if j_peak == 0 || j_peak + 1 >= scores.len() {
        return unrefined;
    }
    let (a, b, c) = (scores[j_peak - 1], scores[j_peak], scores[j_peak + 1]);
    if b < a || b < c {
        return unrefined;
    }
    let denom = a - 2.0 * b + c;
    if denom.abs() <= 1e-12 * (a.abs() + b.abs() + c.abs()).max(1e-300) {
        return unrefined;
    }
    SubpixelPeak {
        col: j_peak as f64 + 0.5 * (a - c) / denom,
        refined: true,
    }
}

/// Knobs of the multi-frame and adaptive decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseConfig {
    /// Blend weight of the per-scanline max cost in the score threshold.
    pub t_threshold: f64,
    /// Pixels dimmer than this fraction of the cycle's peak radiance in
    /// any frame do not enter the match.
    pub radiance_floor_frac: f64,
    /// Radiance of the projector, for reconstructing incident Stokes
    /// vectors in physical units.
    pub projector_intensity: f64,
    /// Relative s0 change between consecutive frames that labels a pixel
    /// dynamic.
    pub tau_rel: f64,
    /// Stripe decoding knobs for dynamic regions.
    pub single_shot: DecodeConfig,
}

impl Default for DenseConfig {
    fn default() -> Self {
        Self {
            t_threshold: 0.2,
            radiance_floor_frac: 1e-4,
            projector_intensity: 1.0,
            tau_rel: 0.1,
            single_shot: DecodeConfig::default(),
        }
    }
}

/// Output of the dense decoders.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DenseResult {
    pub correspondences: Vec<Correspondence>,
    /// Candidates (pixels or stripes) that entered a scanline alignment.
    pub scored: usize,
    pub matched: usize,
    /// Matches whose peak admitted parabola refinement.
    pub refined: usize,
}

/// Projected stacks and their reusable sums, one per projector column.
/// The s2 components carry the specular sign flip, so an observation
/// matches its column through a positive scale.
struct ColumnBank {
    values: Vec<Vec<f64>>,
    stats: Vec<StackStats>,
}

fn column_bank(patterns: &[&ProjectorPattern]) -> ColumnBank {
    let width = patterns[0].width();
    let values: Vec<Vec<f64>> = (0..width)
        .map(|c| {
            let mut v = Vec::with_capacity(2 * patterns.len());
            for p in patterns {
                let a = 2.0 * p.column_aolp_deg[c].to_radians();
                v.push(a.cos());
                v.push(-a.sin());
            }
            v
        })
        .collect();
    let stats = values.iter().map(|v| stack_stats(v)).collect();
    ColumnBank { values, stats }
}

fn observed_stack(frames: &[&PolarimetricImage], u: usize, row: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * frames.len());
    for f in frames {
        let s = f.stokes(u, row, 0);
        v.push(s.s1);
        v.push(s.s2);
    }
    v
}

fn global_max_s0(frames: &[&PolarimetricImage]) -> f64 {
    frames.iter().map(|f| f.max_s0()).fold(0.0, f64::max)
}

/// Pixels bright enough in every frame of the cycle, optionally restricted
/// to a span mask.
fn participating_pixels(
    frames: &[&PolarimetricImage],
    row: usize,
    floor: f64,
    keep: impl Fn(usize) -> bool,
) -> Vec<usize> {
    (0..frames[0].width)
        .filter(|&u| keep(u) && frames.iter().all(|f| f.stokes(u, row, 0).s0 >= floor))
        .collect()
}

fn row_cost_matrix(
    frames: &[&PolarimetricImage],
    row: usize,
    pixels: &[usize],
    bank: &ColumnBank,
) -> Vec<Vec<f64>> {
    pixels
        .iter()
        .map(|&u| {
            let so = observed_stack(frames, u, row);
            let sos = stack_stats(&so);
            bank.values
                .iter()
                .zip(&bank.stats)
                .map(|(si, sis)| cost_with_stats(&sos, sis, dot(&so, si)))
                .collect()
        })
        .collect()
}

/// Build one per-pixel correspondence. The pair stack reads the incident
/// angle at the matched integer column, which is the column whose light
/// the pixel actually integrated; the sub-pixel column only carries the
/// geometry.
#[allow(clippy::too_many_arguments)]
fn pixel_correspondence(
    frames: &[&PolarimetricImage],
    patterns: &[&ProjectorPattern],
    base: &ProjectorPattern,
    rig: &Rig,
    cfg: &DenseConfig,
    row: usize,
    u: usize,
    q: usize,
    col_star: f64,
) -> Option<Correspondence> {
    let depth = rig.triangulate_depth(u as f64, col_star);
    if !depth.is_finite() || depth <= 0.0 {
        return None;
    }
    let x_n = (u as f64 - rig.cx) / rig.f_c;
    let y_n = (row as f64 - rig.cy) / rig.f_c;
    let pairs: Vec<StokesPair> = patterns
        .iter()
        .zip(frames)
        .map(|(p, f)| StokesPair {
            incident: StokesVector::linear(
                cfg.projector_intensity,
                1.0,
                p.column_aolp_deg[q],
            ),
            observed: f.stokes(u, row, 0),
        })
        .collect();
    let stripe = (q / base.params.stripe_width).min(base.symbols.len() - 1);
    Some(Correspondence {
        row,
        image_u: u as f64,
        stripe,
        symbol: base.symbols[stripe],
        proj_col: col_star,
        depth,
        point: [x_n * depth, y_n * depth, depth],
        pairs,
    })
}

struct RowOutput {
    correspondences: Vec<Correspondence>,
    scored: usize,
    matched: usize,
    refined: usize,
}

impl RowOutput {
    fn empty() -> Self {
        Self {
            correspondences: Vec::new(),
            scored: 0,
            matched: 0,
            refined: 0,
        }
    }
}

/// Multi-frame matching of one scanline over the given pixels.
#[allow(clippy::too_many_arguments)]
fn dense_row(
    frames: &[&PolarimetricImage],
    patterns: &[&ProjectorPattern],
    base: &ProjectorPattern,
    bank: &ColumnBank,
    rig: &Rig,
    cfg: &DenseConfig,
    row: usize,
    pixels: &[usize],
) -> RowOutput {
    if pixels.is_empty() {
        return RowOutput::empty();
    }
    let costs = row_cost_matrix(frames, row, pixels, bank);
    let (scores, _c0) = score_and_threshold(&costs, cfg.t_threshold);
    let al = align(pixels.len(), bank.values.len(), |i, j| scores[i][j]);
    let mut out = RowOutput {
        correspondences: Vec::with_capacity(al.pairs.len()),
        scored: pixels.len(),
        matched: al.pairs.len(),
        refined: 0,
    };
    for &(i, j) in &al.pairs {
        let peak = subpixel_refine(&scores[i], j);
        if peak.refined {
            out.refined += 1;
        }
        if let Some(c) = pixel_correspondence(
            frames, patterns, base, rig, cfg, row, pixels[i], j, peak.col,
        ) {
            out.correspondences.push(c);
        }
    }
    out
}

fn merge_rows(rows: Vec<RowOutput>) -> DenseResult {
    let mut result = DenseResult::default();
    for r in rows {
        result.correspondences.extend(r.correspondences);
        result.scored += r.scored;
        result.matched += r.matched;
        result.refined += r.refined;
    }
    result
}

/// Decode a full static cycle: `frames[t]` was captured under
/// `set.patterns[t]`. Every sufficiently lit pixel becomes a match
/// candidate on its scanline.
pub fn dense_decode(
    frames: &[PolarimetricImage],
    set: &ShiftedPatternSet,
    rig: &Rig,
    cfg: &DenseConfig,
) -> Result<DenseResult, DenseError> {
    if frames.len() != set.patterns.len() {
        return Err(DenseError::FrameCountMismatch {
            frames: frames.len(),
            patterns: set.patterns.len(),
        });
    }
    let frames: Vec<&PolarimetricImage> = frames.iter().collect();
    let patterns: Vec<&ProjectorPattern> = set.patterns.iter().collect();
    let floor = cfg.radiance_floor_frac * global_max_s0(&frames);
    let bank = column_bank(&patterns);
    let rows: Vec<RowOutput> = (0..rig.height)
        .into_par_iter()
        .map(|row| {
            let pixels = participating_pixels(&frames, row, floor, |_| true);
            dense_row(&frames, &patterns, &set.base, &bank, rig, cfg, row, &pixels)
        })
        .collect();
    Ok(merge_rows(rows))
}

/// Per-pixel, per-frame motion labels from intensity differences.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionMask {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub tau_rel: f64,
    /// Row-major per frame; frame 0 has no predecessor and is static.
    dynamic: Vec<bool>,
}

impl MotionMask {
    pub fn is_dynamic(&self, frame: usize, x: usize, y: usize) -> bool {
        self.dynamic[(frame * self.height + y) * self.width + x]
    }

    /// True when no frame of the window flags the pixel.
    pub fn window_static(&self, x: usize, y: usize) -> bool {
        (0..self.frames).all(|t| !self.is_dynamic(t, x, y))
    }

    pub fn dynamic_count(&self) -> usize {
        self.dynamic.iter().filter(|&&d| d).count()
    }
}

/// Label each pixel of each frame dynamic when its intensity moved by more
/// than `tau_rel` relative to the brighter of the two frames. Pixels dim
/// in both frames stay static, so unlit noise never flips labels. The code
/// rides the polarization channel, so intensity is pattern-free and motion
/// is the only thing that changes it.
pub fn label_motion(frames: &[PolarimetricImage], tau_rel: f64) -> MotionMask {
    assert!(!frames.is_empty());
    let width = frames[0].width;
    let height = frames[0].height;
    let refs: Vec<&PolarimetricImage> = frames.iter().collect();
    let floor = 1e-4 * global_max_s0(&refs);
    let mut dynamic = vec![false; frames.len() * width * height];
    for t in 1..frames.len() {
        for y in 0..height {
            for x in 0..width {
                let a = frames[t].stokes(x, y, 0).s0;
                let b = frames[t - 1].stokes(x, y, 0).s0;
                let scale = a.max(b);
                if scale >= floor && (a - b).abs() > tau_rel * scale {
                    dynamic[(t * height + y) * width + x] = true;
                }
            }
        }
    }
    MotionMask {
        width,
        height,
        frames: frames.len(),
        tau_rel,
        dynamic,
    }
}

/// One scanline candidate of the hybrid alignment, ordered by image
/// column.
enum HybridCand {
    /// Index into the dynamic-region stripe list.
    Stripe(usize),
    /// Index into the static-pixel list.
    Pixel(usize),
}

/// Decode the newest frame of a cycle window adaptively: window-static
/// spans match per pixel over all frames, dynamic spans decode stripes of
/// the newest frame alone, and one monotone alignment per scanline covers
/// both. Stripe scores already live in `[-1 - cos 2t, 1 - cos 2t]`; dense
/// scores are divided by `|c0|` to put them on a comparable scale.
pub fn adaptive_decode(
    frames: &[PolarimetricImage],
    set: &ShiftedPatternSet,
    mask: &MotionMask,
    rig: &Rig,
    cfg: &DenseConfig,
) -> Result<DenseResult, DenseError> {
    if frames.len() != set.patterns.len() {
        return Err(DenseError::FrameCountMismatch {
            frames: frames.len(),
            patterns: set.patterns.len(),
        });
    }
    if mask.frames != frames.len() {
        return Err(DenseError::MaskMismatch {
            mask: mask.frames,
            frames: frames.len(),
        });
    }
    let frames: Vec<&PolarimetricImage> = frames.iter().collect();
    let patterns: Vec<&ProjectorPattern> = set.patterns.iter().collect();
    let current = frames.len() - 1;
    let cur_frame = frames[current];
    let cur_pattern = patterns[current];
    let floor_dense = cfg.radiance_floor_frac * global_max_s0(&frames);
    let floor_ss = cfg.single_shot.radiance_floor_frac * cur_frame.max_s0();
    let bank = column_bank(&patterns);
    let width_cols = bank.values.len();

    // Integer representative column of each code stripe of the newest
    // pattern, for placing stripe candidates on the column axis.
    let mut rep_of_col: Vec<Option<usize>> = vec![None; width_cols];
    for s in 0..cur_pattern.symbols.len() {
        let rep = cur_pattern.stripe_center(s).round().clamp(0.0, (width_cols - 1) as f64) as usize;
        rep_of_col[rep] = Some(s);
    }
    let cos_th = (2.0 * cfg.single_shot.aolp_threshold_deg.to_radians()).cos();

    let rows: Vec<RowOutput> = (0..rig.height)
        .into_par_iter()
        .map(|row| {
            let static_px: Vec<bool> = (0..rig.width)
                .map(|u| mask.window_static(u, row))
                .collect();
            if static_px.iter().all(|&s| s) {
                let pixels = participating_pixels(&frames, row, floor_dense, |_| true);
                return dense_row(
                    &frames, &patterns, &set.base, &bank, rig, cfg, row, &pixels,
                );
            }
            if static_px.iter().all(|&s| !s) {
                let stripes =
                    detect_stripes_row(cur_frame, row, cur_pattern, floor_ss, &cfg.single_shot);
                let matches = decode_row(&stripes, cur_pattern, &cfg.single_shot);
                let correspondences = build_row_correspondences(
                    &stripes,
                    &matches,
                    cur_pattern,
                    rig,
                    &cfg.single_shot,
                );
                return RowOutput {
                    scored: stripes.len(),
                    matched: matches.len(),
                    refined: 0,
                    correspondences,
                };
            }

            // Mixed scanline: stripes from dynamic spans of the newest
            // frame, pixel stacks from window-static spans, one alignment.
            let all_stripes =
                detect_stripes_row(cur_frame, row, cur_pattern, floor_ss, &cfg.single_shot);
            let stripes: Vec<_> = all_stripes
                .into_iter()
                .filter(|s| {
                    let center = (s.center_u.round() as usize).min(rig.width - 1);
                    !static_px[center]
                })
                .collect();
            let pixels = participating_pixels(&frames, row, floor_dense, |u| static_px[u]);

            let (norm_scores, raw_scores) = if pixels.is_empty() {
                (Vec::new(), Vec::new())
            } else {
                let costs = row_cost_matrix(&frames, row, &pixels, &bank);
                let (raw, c0) = score_and_threshold(&costs, cfg.t_threshold);
                let denom = c0.abs().max(1e-300);
                let norm = raw
                    .iter()
                    .map(|r| r.iter().map(|&s| s / denom).collect::<Vec<f64>>())
                    .collect();
                (norm, raw)
            };

            // Merge candidates in image order; both lists are already
            // sorted by column.
            let mut cands: Vec<HybridCand> = Vec::with_capacity(stripes.len() + pixels.len());
            let mut si = 0;
            let mut pi = 0;
            while si < stripes.len() || pi < pixels.len() {
                let take_stripe = match (stripes.get(si), pixels.get(pi)) {
                    (Some(s), Some(&p)) => s.center_u <= p as f64,
                    (Some(_), None) => true,
                    _ => false,
                };
                if take_stripe {
                    cands.push(HybridCand::Stripe(si));
                    si += 1;
                } else {
                    cands.push(HybridCand::Pixel(pi));
                    pi += 1;
                }
            }

            let al = align(cands.len(), width_cols, |i, j| match cands[i] {
                HybridCand::Pixel(p) => norm_scores[p][j],
                HybridCand::Stripe(s) => match rep_of_col[j] {
                    Some(code) => stripe_pair_score(
                        stripes[s].mean_aolp_deg,
                        cur_pattern.levels[cur_pattern.symbols[code] as usize],
                        cos_th,
                    ),
                    None => -1.0,
                },
            });

            let mut stripe_matches: Vec<(usize, usize)> = Vec::new();
            let mut pixel_matches: Vec<(usize, usize)> = Vec::new();
            for &(i, j) in &al.pairs {
                match cands[i] {
                    HybridCand::Stripe(s) => {
                        if let Some(code) = rep_of_col[j] {
                            stripe_matches.push((s, code));
                        }
                    }
                    HybridCand::Pixel(p) => pixel_matches.push((p, j)),
                }
            }

            let mut out = RowOutput {
                correspondences: Vec::new(),
                scored: cands.len(),
                matched: al.pairs.len(),
                refined: 0,
            };
            let mut stripe_corr = build_row_correspondences(
                &stripes,
                &stripe_matches,
                cur_pattern,
                rig,
                &cfg.single_shot,
            );
            let mut pixel_corr = Vec::with_capacity(pixel_matches.len());
            for (p, j) in pixel_matches {
                let peak = subpixel_refine(&raw_scores[p], j);
                if peak.refined {
                    out.refined += 1;
                }
                if let Some(c) = pixel_correspondence(
                    &frames, &patterns, &set.base, rig, cfg, row, pixels[p], j, peak.col,
                ) {
                    pixel_corr.push(c);
                }
            }
            out.correspondences.append(&mut stripe_corr);
            out.correspondences.append(&mut pixel_corr);
            out.correspondences
                .sort_by(|a, b| a.image_u.partial_cmp(&b.image_u).unwrap());
            out
        })
        .collect();
    Ok(merge_rows(rows))
}
