//! Stripe codebooks: constrained de Bruijn sequences over AoLP levels.
//!
//! A pattern column carries one of `k` polarization angles. Decoding recovers
//! position from any window of `n` consecutive stripes, so every valid window
//! must appear at most once in the sequence. Two extra adjacency constraints
//! keep windows decodable from noisy AoLP estimates:
//!
//! * consecutive stripes differ by at least two levels cyclically, so a
//!   stripe boundary is always a visible AoLP jump and blur cannot produce
//!   an intermediate level that reads as a run of three equal symbols;
//! * a stripe never equals the one two positions back, so a window's symbol
//!   pairs stay locally distinctive.
//!
//! "Cyclically" is modulo `k`: level `k - 1` counts as adjacent to level 0.
//! With both constraints the window graph has `k(k-3)(k-4)^(n-3)` nodes of
//! uniform degree `k - 4` and `k(k-3)(k-4)^(n-2)` edges, and for `k >= 6`
//! it admits an eulerian circuit, which gives the longest usable sequence.

use std::collections::HashMap;

use thiserror::Error;

use crate::polarization::aolp_distance_deg;

/// Parameters of a stripe code.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CodeParams {
    /// Alphabet size (number of AoLP levels).
    pub k: u8,
    /// Window length in stripes needed to decode a position.
    pub n: usize,
    /// Lowest AoLP level in degrees.
    pub aolp_min_deg: f64,
    /// Highest AoLP level in degrees.
    pub aolp_max_deg: f64,
    /// Stripe width in projector columns.
    pub stripe_width: usize,
}

impl CodeParams {
    pub fn validate(&self) -> Result<(), CodebookError> {
        if self.k < 5 {
            return Err(CodebookError::AlphabetTooSmall { k: self.k });
        }
        if self.n < 3 {
            return Err(CodebookError::WindowTooShort { n: self.n });
        }
        let span = self.aolp_max_deg - self.aolp_min_deg;
        if !(span > 0.0 && span < 180.0) {
            return Err(CodebookError::BadLevelSpan);
        }
        if self.stripe_width == 0 {
            return Err(CodebookError::ZeroStripeWidth);
        }
        Ok(())
    }

    /// Spacing between adjacent AoLP levels in degrees.
    pub fn level_step_deg(&self) -> f64 {
        (self.aolp_max_deg - self.aolp_min_deg) / (self.k as f64 - 1.0)
    }
}

/// Errors raised while building or validating a codebook.
#[derive(Debug, Error, PartialEq)]
pub enum CodebookError {
    #[error("alphabet too small: k = {k}, need k >= 5")]
    AlphabetTooSmall { k: u8 },
    #[error("window too short: n = {n}, need n >= 3")]
    WindowTooShort { n: usize },
    #[error("AoLP level span must be positive and below 180 degrees")]
    BadLevelSpan,
    #[error("stripe width must be positive")]
    ZeroStripeWidth,
    #[error("constraint graph admits no eulerian circuit")]
    NotEulerian,
    #[error("sequence shorter than one window")]
    SequenceTooShort,
    #[error("symbol {symbol} at stripe {index} outside alphabet of size {k}")]
    SymbolOutOfRange { index: usize, symbol: u8, k: u8 },
    #[error("adjacency constraint violated at stripe {index}")]
    ConstraintViolation { index: usize },
    #[error("window starting at stripe {index} repeats an earlier window")]
    RepeatedWindow { index: usize },
    #[error("sequence covers {got} of {expected} windows")]
    IncompleteCoverage { got: usize, expected: usize },
}

/// The `k` AoLP levels, evenly spaced over `[aolp_min, aolp_max]`.
pub fn quantize_levels(params: &CodeParams) -> Vec<f64> {
    let step = params.level_step_deg();
    (0..params.k)
        .map(|i| params.aolp_min_deg + step * i as f64)
        .collect()
}

/// May `next` follow the two previous symbols?
///
/// `prev2` is `None` at the second position of a word, where only the
/// immediate-neighbor rule applies.
#[inline]
pub fn symbol_allowed(prev2: Option<u8>, prev1: u8, next: u8, k: u8) -> bool {
    let diff = (next + k - prev1) % k;
    if diff <= 1 || diff == k - 1 {
        return false;
    }
    if let Some(p2) = prev2 {
        if next == p2 {
            return false;
        }
    }
    true
}

/// Window-overlap graph of the constrained code. Nodes are valid words of
/// length `n - 1` in lexicographic order; each edge appends one symbol and
/// stands for one valid window of length `n`.
#[derive(Debug, Clone)]
pub struct ConstraintGraph {
    pub k: u8,
    pub n: usize,
    pub nodes: Vec<Vec<u8>>,
    /// Outgoing edges per node as `(appended symbol, target node)`,
    /// ascending by symbol.
    pub edges: Vec<Vec<(u8, usize)>>,
    pub edge_count: usize,
}

#[cfg(test)]
fn word_allowed(word: &[u8], k: u8) -> bool {
    for j in 1..word.len() {
        let prev2 = if j >= 2 { Some(word[j - 2]) } else { None };
        if !symbol_allowed(prev2, word[j - 1], word[j], k) {
            return false;
        }
    }
    true
}

fn build_graph_with<F>(k: u8, n: usize, allowed: &F) -> Result<ConstraintGraph, CodebookError>
where
    F: Fn(Option<u8>, u8, u8) -> bool,
{
    // Enumerate valid words of length n - 1 in lexicographic order.
    let mut nodes: Vec<Vec<u8>> = Vec::new();
    let mut stack: Vec<u8> = Vec::with_capacity(n - 1);
    fn rec<F: Fn(Option<u8>, u8, u8) -> bool>(
        k: u8,
        len: usize,
        stack: &mut Vec<u8>,
        allowed: &F,
        out: &mut Vec<Vec<u8>>,
    ) {
        if stack.len() == len {
            out.push(stack.clone());
            return;
        }
        for s in 0..k {
            let ok = match stack.len() {
                0 => true,
                1 => allowed(None, stack[0], s),
                l => allowed(Some(stack[l - 2]), stack[l - 1], s),
            };
            if ok {
                stack.push(s);
                rec(k, len, stack, allowed, out);
                stack.pop();
            }
        }
    }
    rec(k, n - 1, &mut stack, allowed, &mut nodes);

    let index: HashMap<&[u8], usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_slice(), i))
        .collect();

    let mut edges = Vec::with_capacity(nodes.len());
    let mut edge_count = 0;
    for w in &nodes {
        let mut out = Vec::new();
        let last = w[w.len() - 1];
        let prev2 = if w.len() >= 2 {
            Some(w[w.len() - 2])
        } else {
            None
        };
        for s in 0..k {
            if allowed(prev2, last, s) {
                let mut target = w[1..].to_vec();
                target.push(s);
                let t = index[target.as_slice()];
                out.push((s, t));
            }
        }
        edge_count += out.len();
        edges.push(out);
    }
    Ok(ConstraintGraph {
        k,
        n,
        nodes,
        edges,
        edge_count,
    })
}

/// Build the constraint graph for `params`.
pub fn build_constraint_graph(params: &CodeParams) -> Result<ConstraintGraph, CodebookError> {
    params.validate()?;
    let k = params.k;
    build_graph_with(k, params.n, &|p2, p1, s| symbol_allowed(p2, p1, s, k))
}

/// Deterministic Hierholzer walk over `graph`.
///
/// Starts at the lexicographically smallest node and consumes out-edges in
/// ascending symbol order, so the result is reproducible. The returned
/// sequence has length `edge_count + n - 1` and contains every valid window
/// exactly once.
pub fn eulerian_sequence(graph: &ConstraintGraph) -> Result<Vec<u8>, CodebookError> {
    if graph.nodes.is_empty() || graph.edge_count == 0 {
        return Err(CodebookError::NotEulerian);
    }
    let mut in_deg = vec![0usize; graph.nodes.len()];
    for out in &graph.edges {
        for &(_, t) in out {
            in_deg[t] += 1;
        }
    }
    for (v, out) in graph.edges.iter().enumerate() {
        if out.len() != in_deg[v] {
            return Err(CodebookError::NotEulerian);
        }
    }

    let start = 0usize;
    let mut cursor = vec![0usize; graph.nodes.len()];
    let mut node_stack = vec![start];
    let mut sym_stack: Vec<u8> = Vec::new();
    let mut circuit: Vec<u8> = Vec::with_capacity(graph.edge_count);
    while let Some(&v) = node_stack.last() {
        if cursor[v] < graph.edges[v].len() {
            let (s, t) = graph.edges[v][cursor[v]];
            cursor[v] += 1;
            node_stack.push(t);
            sym_stack.push(s);
        } else {
            node_stack.pop();
            if let Some(s) = sym_stack.pop() {
                circuit.push(s);
            }
        }
    }
    if circuit.len() != graph.edge_count {
        // Some edges were unreachable from the start node.
        return Err(CodebookError::NotEulerian);
    }
    circuit.reverse();

    let mut seq = graph.nodes[start].clone();
    seq.extend_from_slice(&circuit);
    Ok(seq)
}

/// Check a stripe sequence: symbols in range, both adjacency constraints,
/// no repeated window, and full coverage of the constraint graph.
pub fn validate_sequence(seq: &[u8], params: &CodeParams) -> Result<(), CodebookError> {
    params.validate()?;
    let (k, n) = (params.k, params.n);
    if seq.len() < n {
        return Err(CodebookError::SequenceTooShort);
    }
    for (i, &s) in seq.iter().enumerate() {
        if s >= k {
            return Err(CodebookError::SymbolOutOfRange {
                index: i,
                symbol: s,
                k,
            });
        }
    }
    for j in 1..seq.len() {
        let prev2 = if j >= 2 { Some(seq[j - 2]) } else { None };
        if !symbol_allowed(prev2, seq[j - 1], seq[j], k) {
            return Err(CodebookError::ConstraintViolation { index: j });
        }
    }
    let mut seen: HashMap<&[u8], usize> = HashMap::new();
    for i in 0..=seq.len() - n {
        if seen.insert(&seq[i..i + n], i).is_some() {
            return Err(CodebookError::RepeatedWindow { index: i });
        }
    }
    let expected = build_constraint_graph(params)?.edge_count;
    if seen.len() != expected {
        return Err(CodebookError::IncompleteCoverage {
            got: seen.len(),
            expected,
        });
    }
    Ok(())
}

/// Generate the full codebook sequence for `params`.
pub fn generate_sequence(params: &CodeParams) -> Result<Vec<u8>, CodebookError> {
    let graph = build_constraint_graph(params)?;
    let seq = eulerian_sequence(&graph)?;
    debug_assert!(validate_sequence(&seq, params).is_ok());
    Ok(seq)
}

/// Snap a measured AoLP to the nearest level index.
///
/// Comparison is 180-degree periodic. Returns `None` when the measurement
/// falls farther than half a level step from every level (the rejection
/// band between the last and first level on the periodic circle). Exact
/// ties go to the lower index.
pub fn quantize_aolp(aolp_deg: f64, levels: &[f64]) -> Option<usize> {
    debug_assert!(levels.len() >= 2);
    let mut best_i = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, &lv) in levels.iter().enumerate() {
        let d = aolp_distance_deg(aolp_deg, lv);
        if d < best_d - 1e-12 {
            best_d = d;
            best_i = i;
        }
    }
    let step = (levels[levels.len() - 1] - levels[0]) / (levels.len() - 1) as f64;
    if best_d <= step / 2.0 + 1e-9 {
        Some(best_i)
    } else {
        None
    }
}

/// A projector pattern: vertical stripes of constant AoLP, fully polarized.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProjectorPattern {
    pub params: CodeParams,
    pub levels: Vec<f64>,
    pub symbols: Vec<u8>,
    /// AoLP per projector column, degrees. Length `symbols.len() * stripe_width`.
    pub column_aolp_deg: Vec<f64>,
    /// Horizontal shift of this pattern relative to the base pattern, in
    /// columns. Zero for a single-shot pattern.
    pub offset_px: f64,
}

impl ProjectorPattern {
    pub fn width(&self) -> usize {
        self.column_aolp_deg.len()
    }

    /// AoLP at a continuous projector coordinate, nearest-column sampling.
    /// Out-of-range coordinates clamp to the border column.
    pub fn aolp_at(&self, q: f64) -> f64 {
        let col = q.round().clamp(0.0, (self.width() - 1) as f64) as usize;
        self.column_aolp_deg[col]
    }

    /// Center column of stripe `j`, the coordinate reported for a decoded
    /// stripe. Includes the pattern's shift.
    pub fn stripe_center(&self, j: usize) -> f64 {
        j as f64 * self.params.stripe_width as f64
            + (self.params.stripe_width as f64 - 1.0) / 2.0
            + self.offset_px
    }
}

/// Expand a symbol sequence into a full-resolution pattern. Each stripe is
/// `stripe_width` columns of the same AoLP; DoLP is one everywhere.
pub fn assemble_pattern(params: &CodeParams, seq: &[u8]) -> Result<ProjectorPattern, CodebookError> {
    params.validate()?;
    let levels = quantize_levels(params);
    for (i, &s) in seq.iter().enumerate() {
        if s >= params.k {
            return Err(CodebookError::SymbolOutOfRange {
                index: i,
                symbol: s,
                k: params.k,
            });
        }
    }
    let mut column_aolp_deg = Vec::with_capacity(seq.len() * params.stripe_width);
    for &s in seq {
        for _ in 0..params.stripe_width {
            column_aolp_deg.push(levels[s as usize]);
        }
    }
    Ok(ProjectorPattern {
        params: params.clone(),
        levels,
        symbols: seq.to_vec(),
        column_aolp_deg,
        offset_px: 0.0,
    })
}
