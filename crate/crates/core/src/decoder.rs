//! Single-shot stripe decoding.
//!
//! One polarimetric frame of a striped scene is decoded row by row: pixels
//! are classified into AoLP levels, consecutive equal labels form detected
//! stripes, and a monotone alignment against the code sequence identifies
//! each stripe's projector column. Matched stripes triangulate to 3D points
//! and carry small stacks of (incident, observed) Stokes pairs gathered
//! from neighboring stripes for later reflection decomposition.
//!
//! Decoding leans on the specular lobe, which preserves the projected
//! polarization with a sign flip; `flip_aolp` undoes that flip before
//! quantization. The diffuse lobe's own polarization only perturbs the
//! angle, bounded as long as its DoLP stays small.

use rayon::prelude::*;

use crate::codebook::{quantize_aolp, ProjectorPattern};
use crate::dp::align;
use crate::polarization::{canonical_aolp_deg, to_linear_state, PolarimetricImage, StokesVector};
use crate::simulator::Rig;

/// Knobs of the single-shot decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    /// AoLP disagreement at which an observed/code stripe pairing scores
    /// zero, degrees.
    pub aolp_threshold_deg: f64,
    /// Width of the sliding vote window, odd.
    pub window_w: usize,
    /// Votes a symbol needs inside the window to label a pixel.
    pub vote_min: usize,
    /// Pixels dimmer than this fraction of the frame's peak radiance are
    /// treated as unlit.
    pub radiance_floor_frac: f64,
    /// Drop runs clipped by the image border or by dark regions, whose
    /// centroid would be biased.
    pub boundary_guard: bool,
    /// Undo the specular sign flip before quantizing.
    pub flip_aolp: bool,
    /// How many matched neighbor stripes on each side contribute Stokes
    /// pairs to a correspondence.
    pub stack_radius: usize,
    /// Radiance of the projector, for reconstructing incident Stokes
    /// vectors in physical units.
    pub projector_intensity: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            aolp_threshold_deg: 30.0,
            window_w: 13,
            vote_min: 4,
            radiance_floor_frac: 1e-4,
            boundary_guard: true,
            flip_aolp: true,
            stack_radius: 2,
            projector_intensity: 1.0,
        }
    }
}

impl DecodeConfig {
    /// Derive the vote window from the rig: one stripe period in camera
    /// pixels (depth-free for a rectified pair), rounded odd, with a vote
    /// threshold of a third of the window so a third of the pixels in a
    /// stripe may be corrupted.
    pub fn for_rig(rig: &Rig, pattern: &ProjectorPattern) -> Self {
        let period = pattern.params.stripe_width as f64 * rig.f_c / rig.f_p;
        let mut window = period.round().max(3.0) as usize;
        if window % 2 == 0 {
            window += 1;
        }
        Self {
            window_w: window,
            vote_min: (window / 3).max(1),
            ..Default::default()
        }
    }
}

/// One detected stripe in a scanline.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectedStripe {
    pub row: usize,
    /// Pixel span `[start, end)`.
    pub start: usize,
    pub end: usize,
    /// Centroid column of the run.
    pub center_u: f64,
    pub symbol: u8,
    /// Mean AoLP of the run after the optional flip, degrees.
    pub mean_aolp_deg: f64,
    /// Mean observed Stokes vector over the run.
    pub mean_observed: StokesVector,
}

/// One (incident, observed) Stokes pair at a surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StokesPair {
    pub incident: StokesVector,
    pub observed: StokesVector,
}

/// A decoded stripe with its 3D point and decomposition stack. The first
/// pair belongs to this stripe itself; neighbors follow by increasing
/// distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub row: usize,
    pub image_u: f64,
    /// Stripe index within the code sequence.
    pub stripe: usize,
    pub symbol: u8,
    /// Projector column of the stripe center.
    pub proj_col: f64,
    pub depth: f64,
    pub point: [f64; 3],
    pub pairs: Vec<StokesPair>,
}

#[derive(Debug, Clone, PartialEq)]
enum PixelClass {
    /// Below the radiance floor.
    Dark,
    /// Lit but not classifiable (unpolarized or in the rejection band).
    Unusable,
    Symbol(u8),
}

fn classify_row(
    image: &PolarimetricImage,
    row: usize,
    levels: &[f64],
    floor: f64,
    flip: bool,
) -> Vec<PixelClass> {
    (0..image.width)
        .map(|u| {
            let s = image.stokes(u, row, 0);
            if !(s.s0 >= floor) || s.s0 <= 0.0 {
                return PixelClass::Dark;
            }
            let Ok(state) = to_linear_state(&s) else {
                return PixelClass::Dark;
            };
            if !state.aolp_defined {
                return PixelClass::Unusable;
            }
            let aolp = if flip {
                canonical_aolp_deg(-state.aolp_deg)
            } else {
                state.aolp_deg
            };
            match quantize_aolp(aolp, levels) {
                Some(sym) => PixelClass::Symbol(sym as u8),
                None => PixelClass::Unusable,
            }
        })
        .collect()
}

/// Label each pixel by the symbol winning a sliding-window vote. A pixel is
/// labeled when the winning symbol gathers at least `vote_min` votes in the
/// window; dark pixels never vote and are never labeled. Isolated corrupted
/// pixels inside a stripe are healed by their neighbors' votes.
fn vote_labels(classes: &[PixelClass], k: usize, window_w: usize, vote_min: usize) -> Vec<Option<u8>> {
    debug_assert!(window_w % 2 == 1);
    let half = window_w / 2;
    let width = classes.len();
    let mut hist = vec![0usize; k];
    let add = |hist: &mut [usize], u: usize, delta: isize| {
        if let PixelClass::Symbol(s) = classes[u] {
            let slot = &mut hist[s as usize];
            *slot = (*slot as isize + delta) as usize;
        }
    };
    for u in 0..=half.min(width - 1) {
        add(&mut hist, u, 1);
    }
    let mut out = vec![None; width];
    for u in 0..width {
        if classes[u] != PixelClass::Dark {
            let mut best_sym = 0usize;
            let mut best_votes = 0usize;
            for (sym, &votes) in hist.iter().enumerate() {
                if votes > best_votes {
                    best_votes = votes;
                    best_sym = sym;
                }
            }
            if best_votes >= vote_min {
                out[u] = Some(best_sym as u8);
            }
        }
        if u + 1 + half < width {
            add(&mut hist, u + 1 + half, 1);
        }
        if u >= half {
            add(&mut hist, u - half, -1);
        }
    }
    out
}

/// Detect stripes in one scanline.
pub fn detect_stripes_row(
    image: &PolarimetricImage,
    row: usize,
    pattern: &ProjectorPattern,
    floor: f64,
    cfg: &DecodeConfig,
) -> Vec<DetectedStripe> {
    let classes = classify_row(image, row, &pattern.levels, floor, cfg.flip_aolp);
    let labels = vote_labels(&classes, pattern.levels.len(), cfg.window_w, cfg.vote_min);
    let width = image.width;
    let mut out = Vec::new();
    let mut u = 0usize;
    while u < width {
        let Some(sym) = labels[u] else {
            u += 1;
            continue;
        };
        let start = u;
        while u < width && labels[u] == Some(sym) {
            u += 1;
        }
        let end = u;
        if cfg.boundary_guard {
            let clipped_left = start == 0 || classes[start - 1] == PixelClass::Dark;
            let clipped_right = end == width || classes[end] == PixelClass::Dark;
            if clipped_left || clipped_right {
                continue;
            }
        }
        // Centroid and mean Stokes over the pixels that actually voted for
        // the winning symbol, so healed pixels do not skew the estimates.
        let mut sum = [0.0f64; 3];
        let mut centroid = 0.0f64;
        let mut count = 0usize;
        for x in start..end {
            if classes[x] != PixelClass::Symbol(sym) {
                continue;
            }
            let s = image.stokes(x, row, 0);
            sum[0] += s.s0;
            sum[1] += s.s1;
            sum[2] += s.s2;
            centroid += x as f64;
            count += 1;
        }
        if count < cfg.vote_min {
            continue;
        }
        let n = count as f64;
        let mean = StokesVector::new(sum[0] / n, sum[1] / n, sum[2] / n, 0.0);
        let s2_eff = if cfg.flip_aolp { -mean.s2 } else { mean.s2 };
        let mean_aolp_deg = canonical_aolp_deg((0.5 * s2_eff.atan2(mean.s1)).to_degrees());
        out.push(DetectedStripe {
            row,
            start,
            end,
            center_u: centroid / n,
            symbol: sym,
            mean_aolp_deg,
            mean_observed: mean,
        });
    }
    out
}

/// Match one scanline's detected stripes to the code sequence. Returns
/// `(detected index, code stripe index)` pairs, monotone in both.
pub fn decode_row(
    stripes: &[DetectedStripe],
    pattern: &ProjectorPattern,
    cfg: &DecodeConfig,
) -> Vec<(usize, usize)> {
    if stripes.is_empty() {
        return Vec::new();
    }
    let cos_th = (2.0 * cfg.aolp_threshold_deg.to_radians()).cos();
    let score = |i: usize, j: usize| {
        stripe_pair_score(
            stripes[i].mean_aolp_deg,
            pattern.levels[pattern.symbols[j] as usize],
            cos_th,
        )
    };
    align(stripes.len(), pattern.symbols.len(), score).pairs
}

/// Score of pairing an observed stripe angle with a code level: positive
/// inside the disagreement threshold, negative outside, range
/// `[-1 - cos 2t, 1 - cos 2t]`.
pub(crate) fn stripe_pair_score(observed_aolp_deg: f64, level_deg: f64, cos_threshold: f64) -> f64 {
    let phi_d = observed_aolp_deg.to_radians();
    let phi_p = level_deg.to_radians();
    (2.0 * phi_d - 2.0 * phi_p).cos() - cos_threshold
}

/// Decode a full frame into triangulated correspondences.
#[derive(Debug, Clone, Default)]
pub struct DecodeResult {
    pub correspondences: Vec<Correspondence>,
    /// Stripes detected across all rows (after guards).
    pub detected: usize,
    /// Stripes matched to the code.
    pub matched: usize,
}

pub fn reconstruct_single_shot(
    image: &PolarimetricImage,
    pattern: &ProjectorPattern,
    rig: &Rig,
    cfg: &DecodeConfig,
) -> DecodeResult {
    let floor = cfg.radiance_floor_frac * image.max_s0();
    let rows: Vec<(Vec<Correspondence>, usize, usize)> = (0..image.height)
        .into_par_iter()
        .map(|row| {
            let stripes = detect_stripes_row(image, row, pattern, floor, cfg);
            let matches = decode_row(&stripes, pattern, cfg);
            let out = build_row_correspondences(&stripes, &matches, pattern, rig, cfg);
            (out, stripes.len(), matches.len())
        })
        .collect();

    let mut result = DecodeResult::default();
    for (corr, det, mat) in rows {
        result.correspondences.extend(corr);
        result.detected += det;
        result.matched += mat;
    }
    result
}

/// Triangulate one scanline's matched stripes and attach their Stokes-pair
/// stacks. `matches` holds `(detected index, code stripe)` pairs; neighbor
/// pairs join a stack only when their own match is consistent with a
/// contiguous run.
pub(crate) fn build_row_correspondences(
    stripes: &[DetectedStripe],
    matches: &[(usize, usize)],
    pattern: &ProjectorPattern,
    rig: &Rig,
    cfg: &DecodeConfig,
) -> Vec<Correspondence> {
    let mut matched_code: Vec<Option<usize>> = vec![None; stripes.len()];
    for &(i, j) in matches {
        matched_code[i] = Some(j);
    }
    let mut out = Vec::with_capacity(matches.len());
    for &(i, j) in matches {
        let row = stripes[i].row;
        let center_u = stripes[i].center_u;
        let proj_col = pattern.stripe_center(j);
        let depth = rig.triangulate_depth(center_u, proj_col);
        if !depth.is_finite() || depth <= 0.0 {
            continue;
        }
        let x_n = (center_u - rig.cx) / rig.f_c;
        let y_n = (row as f64 - rig.cy) / rig.f_c;
        let mut pairs = vec![stokes_pair(&stripes[i], pattern, j, cfg)];
        for d in 1..=cfg.stack_radius {
            for (di, dj) in [(i as isize - d as isize, j as isize - d as isize), (i as isize + d as isize, j as isize + d as isize)] {
                if di < 0 || di as usize >= stripes.len() || dj < 0 {
                    continue;
                }
                if matched_code[di as usize] == Some(dj as usize) {
                    pairs.push(stokes_pair(&stripes[di as usize], pattern, dj as usize, cfg));
                }
            }
        }
        out.push(Correspondence {
            row,
            image_u: center_u,
            stripe: j,
            symbol: pattern.symbols[j],
            proj_col,
            depth,
            point: [x_n * depth, y_n * depth, depth],
            pairs,
        });
    }
    out
}

fn stokes_pair(
    stripe: &DetectedStripe,
    pattern: &ProjectorPattern,
    code_stripe: usize,
    cfg: &DecodeConfig,
) -> StokesPair {
    let level = pattern.levels[pattern.symbols[code_stripe] as usize];
    StokesPair {
        incident: StokesVector::linear(cfg.projector_intensity, 1.0, level),
        observed: stripe.mean_observed,
    }
}
