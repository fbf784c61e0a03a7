//! Pattern file: JSON description of a stripe code and its projection.
//!
//! The file stores the code alphabet, the stripe sequence, and the shift
//! schedule. A single-shot pattern uses one zero offset with the identity
//! relabeling; a multi-frame set lists one offset and one level permutation
//! per cycle slot. Reloading reproduces the in-memory pattern exactly
//! because every derived quantity (levels, column angles, shifted variants)
//! is rebuilt by the same deterministic constructors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codebook::{assemble_pattern, validate_sequence, CodeParams, ProjectorPattern};
use crate::dense::ShiftedPatternSet;

use super::IoError;

pub const PATTERN_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternFile {
    pub version: u32,
    pub k_db: u8,
    pub n_db: usize,
    pub aolp_levels_deg: Vec<f64>,
    pub sequence: Vec<u8>,
    pub stripe_width_px: usize,
    pub projector_width_px: usize,
    pub projector_height_px: usize,
    pub gaussian_sigma_px: f64,
    pub shift_offsets_px: Vec<f64>,
    pub level_permutations: Vec<Vec<u8>>,
}

impl PatternFile {
    /// Describe a single-shot pattern: one zero offset, identity relabeling.
    pub fn from_pattern(pattern: &ProjectorPattern) -> Self {
        Self {
            version: PATTERN_VERSION,
            k_db: pattern.params.k,
            n_db: pattern.params.n,
            aolp_levels_deg: pattern.levels.clone(),
            sequence: pattern.symbols.clone(),
            stripe_width_px: pattern.params.stripe_width,
            projector_width_px: pattern.width(),
            projector_height_px: 1,
            gaussian_sigma_px: 0.0,
            shift_offsets_px: vec![0.0],
            level_permutations: vec![(0..pattern.params.k).collect()],
        }
    }

    /// Describe a shifted pattern set.
    pub fn from_set(set: &ShiftedPatternSet) -> Self {
        let mut file = Self::from_pattern(&set.base);
        file.gaussian_sigma_px = set.sigma_px;
        file.shift_offsets_px = set.offsets_px.clone();
        file.level_permutations = set.level_perms.clone();
        file
    }

    /// Rebuild the base pattern and, for multi-slot files, the shifted set.
    pub fn into_pattern(&self) -> Result<(ProjectorPattern, Option<ShiftedPatternSet>), IoError> {
        if self.version != PATTERN_VERSION {
            return Err(IoError::invalid(format!(
                "pattern file version {} unsupported, want {PATTERN_VERSION}",
                self.version
            )));
        }
        let k = self.k_db as usize;
        if self.aolp_levels_deg.len() != k {
            return Err(IoError::invalid(format!(
                "aolp_levels_deg lists {} levels, want k_db = {k}",
                self.aolp_levels_deg.len()
            )));
        }
        let params = CodeParams {
            k: self.k_db,
            n: self.n_db,
            aolp_min_deg: self.aolp_levels_deg[0],
            aolp_max_deg: self.aolp_levels_deg[k - 1],
            stripe_width: self.stripe_width_px,
        };
        let pattern = assemble_pattern(&params, &self.sequence)
            .map_err(|e| IoError::invalid(format!("pattern rebuild failed: {e}")))?;
        // Levels must match what the evenly spaced rebuild produces, or the
        // file header would disagree with the columns actually decoded.
        for (i, (&stored, &built)) in self
            .aolp_levels_deg
            .iter()
            .zip(pattern.levels.iter())
            .enumerate()
        {
            if (stored - built).abs() > 1e-9 {
                return Err(IoError::invalid(format!(
                    "aolp_levels_deg[{i}] = {stored} is not evenly spaced (want {built})"
                )));
            }
        }
        validate_sequence(&self.sequence, &params)
            .map_err(|e| IoError::invalid(format!("sequence invalid: {e}")))?;
        if self.projector_width_px != pattern.width() {
            return Err(IoError::invalid(format!(
                "projector_width_px = {} but the sequence spans {} columns",
                self.projector_width_px,
                pattern.width()
            )));
        }
        if self.projector_height_px == 0 {
            return Err(IoError::invalid("projector_height_px must be positive"));
        }
        if self.shift_offsets_px.len() != self.level_permutations.len() {
            return Err(IoError::invalid(format!(
                "{} shift offsets but {} level permutations",
                self.shift_offsets_px.len(),
                self.level_permutations.len()
            )));
        }
        for (i, perm) in self.level_permutations.iter().enumerate() {
            if !is_permutation(perm, self.k_db) {
                return Err(IoError::invalid(format!(
                    "level_permutations[{i}] is not a bijection on 0..{}",
                    self.k_db
                )));
            }
        }
        match self.shift_offsets_px.len() {
            0 => Err(IoError::invalid("pattern file lists no slots")),
            1 => {
                let identity: Vec<u8> = (0..self.k_db).collect();
                if self.shift_offsets_px[0] != 0.0 || self.level_permutations[0] != identity {
                    return Err(IoError::invalid(
                        "single-slot file must use offset 0 and the identity relabeling",
                    ));
                }
                Ok((pattern, None))
            }
            _ => {
                let set = ShiftedPatternSet::from_parts(
                    pattern.clone(),
                    self.level_permutations.clone(),
                    self.shift_offsets_px.clone(),
                    self.gaussian_sigma_px,
                )
                .map_err(|e| IoError::invalid(format!("shifted set rebuild failed: {e}")))?;
                Ok((pattern, Some(set)))
            }
        }
    }
}

fn is_permutation(perm: &[u8], k: u8) -> bool {
    if perm.len() != k as usize {
        return false;
    }
    let mut seen = vec![false; k as usize];
    for &s in perm {
        if s >= k || seen[s as usize] {
            return false;
        }
        seen[s as usize] = true;
    }
    true
}

pub fn write_pattern(path: &Path, file: &PatternFile) -> Result<(), IoError> {
    let mut body = serde_json::to_string_pretty(file)
        .map_err(|e| IoError::invalid(format!("pattern serialization failed: {e}")))?;
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

pub fn read_pattern(path: &Path) -> Result<PatternFile, IoError> {
    let body = fs::read_to_string(path)?;
    serde_json::from_str(&body).map_err(|e| IoError::text(e.line(), e.to_string()))
}
