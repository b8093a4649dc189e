//! Lifting level-1 data to level m: coordinate-wise symmetry lifts with
//! their reflection partitions, foldings of a replacement graph onto a cell,
//! the m-folding of a path, and cubical coordinates.

use crate::error::{Error, Result};
use crate::graph::edge_query;
use crate::symmetry::{flippings_for_all_types, MapKind, SymbolMap};
use crate::system::{IgsSystem, Orientation, SymbolId, SystemClass};
use crate::words::{word_meet, Word};

/// A symbol permutation applied coordinate-wise to words of a fixed level.
#[derive(Debug, Clone)]
pub struct LiftedSymmetry {
    pub perm: Vec<SymbolId>,
    pub level: usize,
}

/// Which part of the lifted reflection partition a word falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReflectionPart {
    C,
    D,
    Delta,
}

impl LiftedSymmetry {
    pub fn apply_word(&self, w: &Word) -> Word {
        debug_assert_eq!(w.level(), self.level);
        Word::new(w.symbols().iter().map(|&s| self.perm[s as usize]).collect())
    }

    pub fn apply_vertex(&self, v: u64, n_symbols: usize) -> u64 {
        let mut digits = Vec::with_capacity(self.level);
        let mut x = v;
        for _ in 0..self.level {
            digits.push((x % n_symbols as u64) as usize);
            x /= n_symbols as u64;
        }
        let mut out = 0u64;
        for &d in digits.iter().rev() {
            out = out * n_symbols as u64 + self.perm[d] as u64;
        }
        out
    }
}

/// Lift a certified symbol map to level `m` (coordinate-wise application).
pub fn lift_map(base: &SymbolMap, m: usize) -> LiftedSymmetry {
    LiftedSymmetry {
        perm: base.perm.clone(),
        level: m,
    }
}

/// Classify a word in the lifted partition of a reflection: the first
/// coordinate escaping the diagonal decides the side.
pub fn reflection_part(base: &SymbolMap, w: &Word) -> Result<ReflectionPart> {
    let MapKind::Reflection { c, d, delta, .. } = &base.kind else {
        return Err(Error::HypothesisViolation(
            "symbol map is not a reflection".into(),
        ));
    };
    for &s in w.symbols() {
        if delta.contains(&s) {
            continue;
        }
        if c.contains(&s) {
            return Ok(ReflectionPart::C);
        }
        if d.contains(&s) {
            return Ok(ReflectionPart::D);
        }
        return Err(Error::HypothesisViolation(format!(
            "symbol {s} not covered by the partition"
        )));
    }
    Ok(ReflectionPart::Delta)
}

// ---------------------------------------------------------------------------
// Foldings onto a cell
// ---------------------------------------------------------------------------

/// Idempotent graph mapping of `G_{n + |target|}` onto `target · W_n`,
/// available for the structured classes.
#[derive(Debug, Clone)]
pub struct CellFolding {
    target: Word,
    n: usize,
    n_symbols: usize,
    plan: FoldPlan,
}

#[derive(Debug, Clone)]
enum FoldPlan {
    /// Per target symbol, the per-first-symbol suffix permutation
    /// (composition of coordinate flips).
    Cubical { step_perm: Vec<Vec<Vec<SymbolId>>> },
    /// Gasket / pentagon: reflection fold then per-first-symbol suffix
    /// permutation, per target symbol.
    Polygonal {
        reflections: Vec<ReflectionStep>,
    },
}

#[derive(Debug, Clone)]
struct ReflectionStep {
    /// The reflection permutation used to fold the far side in.
    refl: Vec<SymbolId>,
    /// Symbols on the kept side (C ∪ Δ of the reflection).
    kept: Vec<SymbolId>,
    /// For each first symbol on the kept side, the suffix permutation; the
    /// new first symbol is always the target symbol.
    suffix: Vec<Option<Vec<SymbolId>>>,
}

impl CellFolding {
    pub fn target(&self) -> &Word {
        &self.target
    }

    pub fn level(&self) -> usize {
        self.target.level() + self.n
    }

    /// Apply the folding to a word of level `n + |target|`.
    pub fn apply_word(&self, w: &Word) -> Word {
        debug_assert_eq!(w.level(), self.level());
        let mut symbols = w.symbols().to_vec();
        for step in 0..self.target.level() {
            let t0 = self.target.symbol(step);
            match &self.plan {
                FoldPlan::Cubical { step_perm } => {
                    let perm = &step_perm[step][symbols[step] as usize];
                    for s in symbols[step + 1..].iter_mut() {
                        *s = perm[*s as usize];
                    }
                    symbols[step] = t0;
                }
                FoldPlan::Polygonal { reflections } => {
                    let r = &reflections[step];
                    // Stage 1: reflect the whole tail if it lies on the far
                    // side of the diagonal (first non-fixed symbol decides).
                    let tail = &mut symbols[step..];
                    let far = tail.iter().find_map(|&s| {
                        if r.refl[s as usize] == s {
                            None
                        } else {
                            Some(!r.kept.contains(&s))
                        }
                    });
                    if far == Some(true) {
                        for s in tail.iter_mut() {
                            *s = r.refl[*s as usize];
                        }
                    }
                    // Stage 2: map the up-to-three remaining cells onto the
                    // target cell by a suffix permutation.
                    let first = symbols[step] as usize;
                    let perm = r.suffix[first]
                        .as_ref()
                        .expect("stage 1 leaves only kept cells");
                    for s in symbols[step + 1..].iter_mut() {
                        *s = perm[*s as usize];
                    }
                    symbols[step] = t0;
                }
            }
        }
        Word::new(symbols)
    }

    pub fn apply_vertex(&self, v: u64) -> u64 {
        let w = Word::decode(v, self.level(), self.n_symbols);
        self.apply_word(&w).encode(self.n_symbols)
    }
}

/// Build the folding of `G_{n + |target|}` onto `target · W_n`. Supported
/// for cubical systems (compositions of coordinate flips) and for the gasket
/// and pentagon (compositions of reflection foldings).
pub fn fold_onto_cell(sys: &IgsSystem, target: &Word, n: usize) -> Result<CellFolding> {
    match sys.class() {
        SystemClass::Cubical { dim, side, coords, .. } => {
            let flips = flippings_for_all_types(sys)?;
            let compose = |parities: &[bool]| -> Vec<SymbolId> {
                let mut perm: Vec<SymbolId> = (0..sys.n_symbols() as SymbolId).collect();
                for (j, &flip) in parities.iter().enumerate() {
                    if flip {
                        perm = perm.iter().map(|&s| flips[j][s as usize]).collect();
                    }
                }
                perm
            };
            let mut step_perm = Vec::with_capacity(target.level());
            for step in 0..target.level() {
                let tcoord = &coords[target.symbol(step) as usize].0;
                let per_symbol: Vec<Vec<SymbolId>> = (0..sys.n_symbols())
                    .map(|s| {
                        let c = &coords[s].0;
                        let parities: Vec<bool> = (0..*dim)
                            .map(|j| (tcoord[j] as i64 - c[j] as i64).rem_euclid(2) == 1)
                            .collect();
                        debug_assert!(*side >= 3 || parities.iter().all(|&p| !p));
                        compose(&parities)
                    })
                    .collect();
                step_perm.push(per_symbol);
            }
            Ok(CellFolding {
                target: target.clone(),
                n,
                n_symbols: sys.n_symbols(),
                plan: FoldPlan::Cubical { step_perm },
            })
        }
        SystemClass::Gasket => {
            let eta = |i: u8| -> Vec<SymbolId> {
                // Fixes i, swaps the other two symbols (mod 3).
                (0..3u8)
                    .map(|j| {
                        if j == i {
                            i
                        } else {
                            (3 + i + i - j) % 3 // 2i - j mod 3
                        }
                    })
                    .collect()
            };
            let mut reflections = Vec::new();
            for step in 0..target.level() {
                let i = target.symbol(step);
                // Fold by eta_{i+1} (C = {i}, Delta = {i+1}, D = {i+2}),
                // then map cell i+1 onto cell i with suffix eta_{i+2}.
                let refl = eta((i + 1) % 3);
                let kept = vec![i, (i + 1) % 3];
                let mut suffix: Vec<Option<Vec<SymbolId>>> = vec![None; 3];
                suffix[i as usize] = Some((0..3u8).collect());
                suffix[((i + 1) % 3) as usize] = Some(eta((i + 2) % 3));
                reflections.push(ReflectionStep { refl, kept, suffix });
            }
            Ok(CellFolding {
                target: target.clone(),
                n,
                n_symbols: 3,
                plan: FoldPlan::Polygonal { reflections },
            })
        }
        SystemClass::Pentagon => {
            let eta = |i: u8| -> Vec<SymbolId> {
                (0..5u8)
                    .map(|j| ((2 * i + 10 - j) % 5) as SymbolId) // 2i - j mod 5
                    .collect()
            };
            let mut reflections = Vec::new();
            for step in 0..target.level() {
                let i = target.symbol(step);
                // Fold by eta_{i+1} (C = {i, i-1}, Delta = {i+1}), then map
                // cells i-1 and i+1 onto cell i.
                let refl = eta((i + 1) % 5);
                let kept = vec![i, (i + 4) % 5, (i + 1) % 5];
                let mut suffix: Vec<Option<Vec<SymbolId>>> = vec![None; 5];
                suffix[i as usize] = Some((0..5u8).collect());
                suffix[((i + 4) % 5) as usize] = Some(eta((i + 2) % 5));
                suffix[((i + 1) % 5) as usize] = Some(eta((i + 3) % 5));
                reflections.push(ReflectionStep { refl, kept, suffix });
            }
            Ok(CellFolding {
                target: target.clone(),
                n,
                n_symbols: 5,
                plan: FoldPlan::Polygonal { reflections },
            })
        }
        SystemClass::Generic => Err(Error::UnsupportedClass(
            "foldings are only constructed for cubical, gasket and pentagon systems".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Path folding
// ---------------------------------------------------------------------------

/// Remove consecutive duplicates (the image of a path under a mapping).
fn dedup_path(path: Vec<Word>) -> Vec<Word> {
    let mut out: Vec<Word> = Vec::with_capacity(path.len());
    for w in path {
        if out.last() != Some(&w) {
            out.push(w);
        }
    }
    out
}

/// The m-folding of a path in `G_{n+m}`: project to `G_n`, split into
/// maximal blocks over the coarse vertices, shift each block to level m,
/// apply the running flip composition, and concatenate. Requires flipping
/// symmetries for every type.
pub fn fold_path(sys: &IgsSystem, theta: &[Word], m: usize) -> Result<Vec<Word>> {
    assert!(!theta.is_empty());
    let level = theta[0].level();
    assert!(level > m, "path level must exceed the folding level");
    let n = level - m;

    // Coarse path [v^(1), ..., v^(l)].
    let coarse = dedup_path(theta.iter().map(|w| w.prefix(n)).collect());
    if coarse.len() == 1 {
        return Ok(dedup_path(theta.iter().map(|w| w.suffix(m)).collect()));
    }

    let flips = flippings_for_all_types(sys)?;

    // Running composition eta^(i+1) = eta^(i) ∘ eta_{t_i}.
    let l = coarse.len();
    let mut etas: Vec<Vec<SymbolId>> = Vec::with_capacity(l);
    etas.push((0..sys.n_symbols() as SymbolId).collect());
    for i in 0..l - 1 {
        let (t, _) = edge_query(sys, &coarse[i], &coarse[i + 1])?
            .ok_or_else(|| Error::Disconnected("coarse projection is not a path".into()))?;
        let prev = &etas[i];
        let next: Vec<SymbolId> = flips[t].iter().map(|&x| prev[x as usize]).collect();
        etas.push(next);
    }

    // Block boundaries: m_l = k, m_{i-1} = max { j <= m_i : [w_j]_n = v^(i-1) }.
    let k = theta.len();
    let mut bounds = vec![0usize; l + 1];
    bounds[l] = k;
    for i in (1..l).rev() {
        let lim = bounds[i + 1];
        let target = &coarse[i - 1];
        let j = (0..lim)
            .rev()
            .find(|&j| theta[j].prefix(n) == *target)
            .expect("coarse vertex appears in its block");
        bounds[i] = j + 1;
    }

    // Assemble: eta^(i) applied to the shifted block i, concatenated.
    let mut folded: Vec<Word> = Vec::new();
    for i in 0..l {
        let block = &theta[bounds[i]..bounds[i + 1]];
        let eta = &etas[i];
        let mapped: Vec<Word> = block
            .iter()
            .map(|w| {
                let s = w.suffix(m);
                Word::new(s.symbols().iter().map(|&x| eta[x as usize]).collect())
            })
            .collect();
        for w in dedup_path(mapped) {
            if folded.last() == Some(&w) {
                continue;
            }
            if let Some(last) = folded.last() {
                // Concatenation is defined for equal or adjacent endpoints.
                debug_assert!(
                    edge_query(sys, last, &w).ok().flatten().is_some(),
                    "folding produced a non-path"
                );
            }
            folded.push(w);
        }
    }
    Ok(folded)
}

// ---------------------------------------------------------------------------
// Cubical coordinates
// ---------------------------------------------------------------------------

/// Evaluate the coordinate maps of a cubical system on a word: the base-L
/// digit expansion of each coordinate, in `[0, L^m - 1]`, plus the sheet of
/// every symbol along the word.
pub fn cubical_coordinates(sys: &IgsSystem, w: &Word) -> Result<(Vec<u64>, Vec<u32>)> {
    let SystemClass::Cubical { dim, side, coords, .. } = sys.class() else {
        return Err(Error::NotCubical);
    };
    let mut out = vec![0u64; *dim];
    let mut sheets = Vec::with_capacity(w.level());
    for &s in w.symbols() {
        let (c, sheet) = &coords[s as usize];
        for j in 0..*dim {
            out[j] = out[j] * *side as u64 + (c[j] - 1) as u64;
        }
        sheets.push(*sheet);
    }
    Ok((out, sheets))
}
