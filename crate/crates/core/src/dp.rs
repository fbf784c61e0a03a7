//! Monotone sequence alignment shared by the single-shot and adaptive
//! decoders.
//!
//! Observed stripes in a scanline and code stripes in the pattern are both
//! ordered left to right, so valid correspondences form a monotone matching.
//! Skipping an element on either side is free; a pairing contributes its
//! score only when that score is positive, which keeps implausible pairings
//! out of the solution instead of letting long rows of weak matches
//! accumulate.
//!
//! Ties in total score are real, not a corner case: with quantized angles,
//! an observed stripe scores identically against every code stripe of the
//! same level, and a short observed window fits as a scattered subsequence
//! in many places. Among maximum-score alignments this module returns one
//! that minimizes the number of code stripes skipped strictly between
//! matches. Code windows are locally unique, so the compact chain is the
//! true one, while genuinely occluded regions still appear as internal
//! gaps when no better placement exists.

/// One monotone alignment: matched index pairs (ascending in both
/// coordinates), the summed score, and the number of code indices skipped
/// between consecutive matches.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
    pub internal_gaps: usize,
}

#[derive(Clone, Copy)]
struct Key {
    total: f64,
    /// `neg_gap + j` of the chain's last match; maximizing this for a fixed
    /// next match minimizes accumulated internal gaps.
    shifted_gap: f64,
    cell: usize,
}

impl Key {
    const NONE: Key = Key {
        total: f64::NEG_INFINITY,
        shifted_gap: f64::NEG_INFINITY,
        cell: usize::MAX,
    };

    fn beats(&self, other: &Key) -> bool {
        self.total > other.total
            || (self.total == other.total && self.shifted_gap > other.shifted_gap)
    }
}

/// Maximum-score monotone matching between `0..m` (observed) and `0..n`
/// (code) with strictly increasing code indices; among score ties, minimal
/// internal code gaps. Deterministic.
pub fn align<S>(m: usize, n: usize, score: S) -> Alignment
where
    S: Fn(usize, usize) -> f64,
{
    align_impl(m, n, false, score)
}

/// Like [`align`], but consecutive observations may share one code index.
///
/// Per-pixel matching needs this: when the projector image is minified
/// relative to the camera, several adjacent pixels genuinely round to the
/// same projector column, and forbidding the reuse would make the true
/// assignment infeasible and push whole stretches onto lookalike columns
/// elsewhere in the code.
pub fn align_with_repeats<S>(m: usize, n: usize, score: S) -> Alignment
where
    S: Fn(usize, usize) -> f64,
{
    align_impl(m, n, true, score)
}

fn align_impl<S>(m: usize, n: usize, allow_repeats: bool, score: S) -> Alignment
where
    S: Fn(usize, usize) -> f64,
{
    if m == 0 || n == 0 {
        return Alignment {
            pairs: Vec::new(),
            total: 0.0,
            internal_gaps: 0,
        };
    }
    // chain[i * n + j]: best chain whose last match is (i, j), as
    // (total, neg internal gap) with a parent pointer for traceback.
    let mut chain_total = vec![f64::NEG_INFINITY; m * n];
    let mut chain_gap = vec![f64::NEG_INFINITY; m * n];
    let mut parent = vec![usize::MAX; m * n];
    // prefix[j]: best Key over chains ending at (i' < current i, j' <= j).
    let mut prefix = vec![Key::NONE; n];
    // exact[j]: best Key over chains ending exactly at column j, i' < i.
    let mut exact = vec![Key::NONE; n];
    let mut best = Key::NONE;

    for i in 0..m {
        // Compute this row against the prefix of earlier rows only, so the
        // i' < i, j' < j dominance is respected.
        for j in 0..n {
            let s = score(i, j);
            if s <= 0.0 {
                continue;
            }
            let cell = i * n + j;
            // Start a fresh chain.
            let mut total = s;
            let mut gap = 0.0;
            let mut par = usize::MAX;
            if j > 0 {
                let p = prefix[j - 1];
                if p.cell != usize::MAX {
                    let cand_total = p.total + s;
                    // neg_gap' - (j - j' - 1) with shifted_gap = neg_gap' + j'.
                    let cand_gap = p.shifted_gap - j as f64 + 1.0;
                    if cand_total > total || (cand_total == total && cand_gap > gap) {
                        total = cand_total;
                        gap = cand_gap;
                        par = p.cell;
                    }
                }
            }
            if allow_repeats {
                let p = exact[j];
                if p.cell != usize::MAX {
                    let cand_total = p.total + s;
                    // Staying on the same column skips nothing.
                    let cand_gap = p.shifted_gap - j as f64;
                    if cand_total > total || (cand_total == total && cand_gap > gap) {
                        total = cand_total;
                        gap = cand_gap;
                        par = p.cell;
                    }
                }
            }
            chain_total[cell] = total;
            chain_gap[cell] = gap;
            parent[cell] = par;
            let key = Key {
                total,
                shifted_gap: gap,
                cell,
            };
            if key.beats(&best) {
                best = key;
            }
        }
        // Fold this row into the prefix for the next one.
        let mut run = Key::NONE;
        for j in 0..n {
            let cell = i * n + j;
            let key = if chain_total[cell] > f64::NEG_INFINITY {
                Some(Key {
                    total: chain_total[cell],
                    shifted_gap: chain_gap[cell] + j as f64,
                    cell,
                })
            } else {
                None
            };
            if let Some(key) = key {
                if key.beats(&run) {
                    run = key;
                }
                if allow_repeats && key.beats(&exact[j]) {
                    exact[j] = key;
                }
            }
            if prefix[j].beats(&run) {
                run = prefix[j];
            }
            prefix[j] = run;
        }
    }

    if best.cell == usize::MAX {
        return Alignment {
            pairs: Vec::new(),
            total: 0.0,
            internal_gaps: 0,
        };
    }
    let mut pairs = Vec::new();
    let mut cell = best.cell;
    let internal_gaps = (-chain_gap[best.cell]) as usize;
    while cell != usize::MAX {
        pairs.push((cell / n, cell % n));
        cell = parent[cell];
    }
    pairs.reverse();
    Alignment {
        pairs,
        total: chain_total[best.cell],
        internal_gaps,
    }
}
