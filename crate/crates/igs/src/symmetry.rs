//! Symmetries of an iterated graph system: exact enumeration of symbol
//! permutations that are system automorphisms, classification into flipping
//! and reflection symmetries, and the group generated by the flips.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::system::{check_igs_morphism, IgsSystem, Orientation, SymbolId, TypeId};

/// How a certified symbol permutation is being used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapKind {
    /// A system automorphism with no further structure attached.
    Isomorphism,
    /// Flipping symmetry of the given type: swaps the two sides of `I_t`
    /// compatibly with the gluing pairs.
    Flipping { ty: TypeId },
    /// Involution with partition `C ∪ D ∪ Δ`; `separative` when no edge
    /// joins `C` to `D`.
    Reflection {
        c: Vec<SymbolId>,
        d: Vec<SymbolId>,
        delta: Vec<SymbolId>,
        separative: bool,
    },
}

/// A symbol permutation certified as a system automorphism.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolMap {
    pub perm: Vec<SymbolId>,
    pub kind: MapKind,
}

impl SymbolMap {
    pub fn apply(&self, s: SymbolId) -> SymbolId {
        self.perm[s as usize]
    }

    pub fn is_involution(&self) -> bool {
        self.perm
            .iter()
            .enumerate()
            .all(|(i, &img)| self.perm[img as usize] as usize == i)
    }
}

/// Everything [`find_symmetries`] discovers.
#[derive(Debug, Clone)]
pub struct SymmetrySet {
    /// All system automorphisms, sorted lexicographically by permutation.
    pub automorphisms: Vec<Vec<SymbolId>>,
    /// One flipping symmetry per type that admits one.
    pub flippings: Vec<Option<SymbolMap>>,
    /// All reflection symmetries found, with their partitions.
    pub reflections: Vec<SymbolMap>,
    /// Closure of the flippings under composition (the flip group).
    pub group: Vec<Vec<SymbolId>>,
}

impl SymmetrySet {
    pub fn flipping(&self, t: TypeId) -> Option<&SymbolMap> {
        self.flippings[t].as_ref()
    }

    /// Flip permutations for every type, or the first type missing one.
    pub fn all_flippings(&self, sys: &IgsSystem) -> Result<Vec<Vec<SymbolId>>> {
        (0..sys.n_types())
            .map(|t| {
                self.flippings[t]
                    .as_ref()
                    .map(|m| m.perm.clone())
                    .ok_or_else(|| {
                        Error::MissingFlippingSymmetry(sys.type_name(t).to_string())
                    })
            })
            .collect()
    }
}

fn compose(a: &[SymbolId], b: &[SymbolId]) -> Vec<SymbolId> {
    // (a ∘ b)(x) = a(b(x))
    b.iter().map(|&x| a[x as usize]).collect()
}

/// Enumerate all symbol permutations that are automorphisms of the system.
///
/// Backtracking over partial assignments with degree-signature and adjacency
/// pruning; complete permutations are certified with the full morphism check
/// in both directions. `node_budget` caps the number of search nodes.
pub fn enumerate_automorphisms(
    sys: &IgsSystem,
    node_budget: usize,
) -> Result<Vec<Vec<SymbolId>>> {
    let n = sys.n_symbols();
    if n > 64 {
        return Err(Error::SearchBudgetExceeded(format!(
            "symbol set too large: {n} > 64"
        )));
    }

    // Type-agnostic invariant per symbol: total degree plus the sorted
    // multiset of unordered per-type degree/side data. Automorphisms may
    // permute types and swap orientations, so only orientation- and
    // type-symmetric data can prune.
    let signature = |s: SymbolId| -> Vec<usize> {
        let mut per_type: Vec<Vec<usize>> = (0..sys.n_types())
            .map(|t| {
                let mut v = vec![
                    sys.deg_ts(t, Orientation::Plus, s),
                    sys.deg_ts(t, Orientation::Minus, s),
                ];
                v.sort_unstable();
                let mut b = vec![
                    sys.glue_multiplicity(t, Orientation::Plus, s),
                    sys.glue_multiplicity(t, Orientation::Minus, s),
                ];
                b.sort_unstable();
                v.extend(b);
                v
            })
            .collect();
        per_type.sort();
        let mut sig = vec![sys.neighbors(s).len()];
        sig.extend(per_type.into_iter().flatten());
        sig
    };
    let sigs: Vec<Vec<usize>> = (0..n as SymbolId).map(signature).collect();

    let mut result = Vec::new();
    let mut perm = vec![u8::MAX; n];
    let mut used = vec![false; n];
    let mut nodes = 0usize;

    fn backtrack(
        sys: &IgsSystem,
        sigs: &[Vec<usize>],
        perm: &mut Vec<SymbolId>,
        used: &mut Vec<bool>,
        depth: usize,
        nodes: &mut usize,
        budget: usize,
        result: &mut Vec<Vec<SymbolId>>,
    ) -> Result<()> {
        let n = sys.n_symbols();
        if depth == n {
            let report = check_igs_morphism(sys, sys, perm);
            if report.is_isomorphism {
                result.push(perm.clone());
            }
            return Ok(());
        }
        let s = depth as SymbolId;
        for img in 0..n as SymbolId {
            if used[img as usize] || sigs[depth] != sigs[img as usize] {
                continue;
            }
            // Adjacency consistency with everything already assigned.
            let ok = sys.neighbors(s).iter().all(|&(nb, _, _)| {
                (nb as usize) >= depth || {
                    let img_nb = perm[nb as usize];
                    sys.level_one_edge(img, img_nb).is_some()
                }
            }) && (0..depth).all(|prev| {
                sys.level_one_edge(s, prev as SymbolId).is_some()
                    == sys.level_one_edge(img, perm[prev]).is_some()
            });
            if !ok {
                continue;
            }
            *nodes += 1;
            if *nodes > budget {
                return Err(Error::SearchBudgetExceeded(format!(
                    "more than {budget} nodes at depth {depth}"
                )));
            }
            perm[depth] = img;
            used[img as usize] = true;
            backtrack(sys, sigs, perm, used, depth + 1, nodes, budget, result)?;
            used[img as usize] = false;
            perm[depth] = u8::MAX;
        }
        Ok(())
    }

    backtrack(
        sys,
        &sigs,
        &mut perm,
        &mut used,
        0,
        &mut nodes,
        node_budget,
        &mut result,
    )?;
    result.sort();
    Ok(result)
}

/// Is `perm` a flipping symmetry of type `t`? Requires `(w, perm(w)) ∈ I_t`
/// for every `w` on the plus side and `(perm(v), v) ∈ I_t` for every `v` on
/// the minus side.
pub fn is_flipping(sys: &IgsSystem, perm: &[SymbolId], t: TypeId) -> bool {
    sys.glue_side(t, Orientation::Plus)
        .iter()
        .all(|&w| sys.gluing(t).contains(&(w, perm[w as usize])))
        && sys
            .glue_side(t, Orientation::Minus)
            .iter()
            .all(|&v| sys.gluing(t).contains(&(perm[v as usize], v)))
}

/// Try to certify an involution as a reflection symmetry: find a partition
/// `C ∪ D ∪ Δ` satisfying the graph condition and the gluing conditions.
/// Returns the reflection with the lexicographically smallest valid `C`.
pub fn classify_reflection(sys: &IgsSystem, perm: &[SymbolId]) -> Option<SymbolMap> {
    let n = sys.n_symbols();
    let delta: Vec<SymbolId> = (0..n as SymbolId)
        .filter(|&s| perm[s as usize] == s)
        .collect();
    let moved: Vec<SymbolId> = (0..n as SymbolId)
        .filter(|&s| perm[s as usize] != s)
        .collect();
    if moved.is_empty() {
        return None;
    }

    // 2-coloring constraints on the moved vertices: x and perm(x) take
    // opposite colors; an edge between moved vertices that are not partners
    // forces equal colors (otherwise the reflection-edge condition fails).
    let idx = |s: SymbolId| moved.binary_search(&s).ok();
    let mut color = vec![-1i8; moved.len()];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for start in 0..moved.len() {
        if color[start] != -1 {
            continue;
        }
        let mut comp = vec![start];
        color[start] = 0;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let s = moved[i];
            let mut wanted: Vec<(usize, i8)> = Vec::new();
            let j = idx(perm[s as usize]).expect("partner moves too");
            wanted.push((j, 1 - color[i]));
            for &(nb, _, _) in sys.neighbors(s) {
                if let Some(k) = idx(nb) {
                    if perm[s as usize] != nb {
                        wanted.push((k, color[i])); // same side
                    }
                }
            }
            for (j, c) in wanted {
                if color[j] == -1 {
                    color[j] = c;
                    stack.push(j);
                    comp.push(j);
                } else if color[j] != c {
                    return None;
                }
            }
        }
        components.push(comp);
    }

    // Each component admits two colorings; try all combinations (components
    // are few for the systems at hand) and keep valid partitions.
    let ncomp = components.len();
    if ncomp > 16 {
        return None;
    }
    let mut best: Option<SymbolMap> = None;
    for mask in 0u32..(1 << ncomp) {
        let mut side = vec![0i8; moved.len()];
        for (ci, comp) in components.iter().enumerate() {
            let flipv = mask >> ci & 1 == 1;
            for &i in comp {
                side[i] = color[i] ^ if flipv { 1 } else { 0 };
            }
        }
        let c: Vec<SymbolId> = moved
            .iter()
            .enumerate()
            .filter(|&(i, _)| side[i] == 0)
            .map(|(_, &s)| s)
            .collect();
        let d: Vec<SymbolId> = moved
            .iter()
            .enumerate()
            .filter(|&(i, _)| side[i] == 1)
            .map(|(_, &s)| s)
            .collect();
        if let Some(refl) = check_reflection_conditions(sys, perm, &c, &d, &delta) {
            match &best {
                Some(b) => {
                    if let (
                        MapKind::Reflection { c: bc, .. },
                        MapKind::Reflection { c: rc, .. },
                    ) = (&b.kind, &refl.kind)
                    {
                        if rc < bc {
                            best = Some(refl);
                        }
                    }
                }
                None => best = Some(refl),
            }
        }
    }
    best
}

fn check_reflection_conditions(
    sys: &IgsSystem,
    perm: &[SymbolId],
    c: &[SymbolId],
    d: &[SymbolId],
    delta: &[SymbolId],
) -> Option<SymbolMap> {
    let cset: BTreeSet<SymbolId> = c.iter().copied().collect();
    let dset: BTreeSet<SymbolId> = d.iter().copied().collect();
    let dlset: BTreeSet<SymbolId> = delta.iter().copied().collect();
    // perm(C) = D.
    if !c.iter().all(|&s| dset.contains(&perm[s as usize])) {
        return None;
    }
    let mut separative = true;
    for e in sys.edges() {
        let (w, v) = (e.from, e.to);
        let in_c = |s: SymbolId| cset.contains(&s);
        let in_d = |s: SymbolId| dset.contains(&s);
        let in_delta = |s: SymbolId| dlset.contains(&s);
        let glue = sys.gluing(e.ty);
        let minus = sys.glue_side(e.ty, Orientation::Minus);
        let plus = sys.glue_side(e.ty, Orientation::Plus);
        // Basic reflection-edge condition: a C-D edge joins partners.
        let cd_edge = (in_c(w) && in_d(v)) || (in_d(w) && in_c(v));
        if cd_edge {
            separative = false;
            if perm[w as usize] != v {
                return None;
            }
            // Condition on gluings across a C-D edge: pairs join partners.
            if !glue.iter().all(|&(w2, v2)| perm[w2 as usize] == v2) {
                return None;
            }
        }
        // Side conditions for edges meeting the diagonal.
        let side_ok = |side: &[SymbolId], allowed: &dyn Fn(SymbolId) -> bool| {
            side.iter().all(|&s| allowed(s) || in_delta(s))
        };
        if in_delta(v) && (in_c(w) || in_d(w)) {
            let allowed: &dyn Fn(SymbolId) -> bool = if in_c(w) { &in_c } else { &in_d };
            if !side_ok(minus, allowed) {
                return None;
            }
        }
        if in_delta(w) && (in_c(v) || in_d(v)) {
            let allowed: &dyn Fn(SymbolId) -> bool = if in_c(v) { &in_c } else { &in_d };
            if !side_ok(plus, allowed) {
                return None;
            }
        }
        if in_delta(w) && in_delta(v) {
            // Gluing pairs across a diagonal edge stay within one part.
            let same_part = |a: SymbolId, b: SymbolId| {
                (in_c(a) && in_c(b)) || (in_d(a) && in_d(b)) || (in_delta(a) && in_delta(b))
            };
            if !glue.iter().all(|&(a, b)| same_part(a, b)) {
                return None;
            }
        }
    }
    Some(SymbolMap {
        perm: perm.to_vec(),
        kind: MapKind::Reflection {
            c: c.to_vec(),
            d: d.to_vec(),
            delta: delta.to_vec(),
            separative,
        },
    })
}

/// Enumerate automorphisms, classify flips and reflections, and close the
/// flips under composition.
pub fn find_symmetries(sys: &IgsSystem, node_budget: usize) -> Result<SymmetrySet> {
    let automorphisms = enumerate_automorphisms(sys, node_budget)?;

    let mut flippings: Vec<Option<SymbolMap>> = vec![None; sys.n_types()];
    for t in 0..sys.n_types() {
        for perm in &automorphisms {
            if is_flipping(sys, perm, t) {
                flippings[t] = Some(SymbolMap {
                    perm: perm.clone(),
                    kind: MapKind::Flipping { ty: t },
                });
                break;
            }
        }
    }

    let mut reflections = Vec::new();
    for perm in &automorphisms {
        let involution = perm
            .iter()
            .enumerate()
            .all(|(i, &img)| perm[img as usize] as usize == i);
        if !involution || perm.iter().enumerate().all(|(i, &img)| i == img as usize) {
            continue;
        }
        if let Some(r) = classify_reflection(sys, perm) {
            reflections.push(r);
        }
    }

    // Closure of the flips under composition.
    let mut group: BTreeSet<Vec<SymbolId>> = BTreeSet::new();
    group.insert((0..sys.n_symbols() as SymbolId).collect());
    for f in flippings.iter().flatten() {
        group.insert(f.perm.clone());
    }
    loop {
        let mut grew = false;
        let members: Vec<Vec<SymbolId>> = group.iter().cloned().collect();
        for a in &members {
            for b in &members {
                if group.insert(compose(a, b)) {
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
    }

    Ok(SymmetrySet {
        automorphisms,
        flippings,
        reflections,
        group: group.into_iter().collect(),
    })
}

/// Flipping permutations for all types, using the structured classes
/// directly and falling back to the symmetry search. Errors if some type
/// has no flipping symmetry.
pub fn flippings_for_all_types(sys: &IgsSystem) -> Result<Vec<Vec<SymbolId>>> {
    use crate::system::SystemClass;
    match sys.class() {
        SystemClass::Cubical { dim, side, coords, .. } => {
            let mut out = Vec::new();
            for j in 0..*dim {
                let perm: Option<Vec<SymbolId>> = coords
                    .iter()
                    .map(|(c, s)| {
                        let mut m = c.clone();
                        m[j] = side + 1 - c[j];
                        coords
                            .iter()
                            .position(|x| x == &(m.clone(), *s))
                            .map(|i| i as SymbolId)
                    })
                    .collect();
                match perm {
                    Some(p) => out.push(p),
                    None => {
                        return Err(Error::MissingFlippingSymmetry(
                            sys.type_name(j).to_string(),
                        ))
                    }
                }
            }
            Ok(out)
        }
        SystemClass::Gasket => {
            // Type t joins symbols t and t+1 (a: 0-1, b: 1-2) except c: 0-2;
            // the flip for each type is the transposition of its gluing pair.
            Ok(vec![
                vec![1, 0, 2], // a: swap 0, 1
                vec![0, 2, 1], // b: swap 1, 2
                vec![2, 1, 0], // c: swap 0, 2
            ])
        }
        SystemClass::Pentagon => {
            // eta_i fixes i and swaps i±1, i±2; the flip for the type of
            // edge (i, i+1) is eta_{i+3} (equivalently eta_{i-2}).
            let eta = |i: u8| -> Vec<SymbolId> {
                (0..5u8)
                    .map(|j| {
                        let r = (j + 5 - i) % 5;
                        match r {
                            0 => i,
                            1 => (i + 4) % 5,
                            4 => (i + 1) % 5,
                            2 => (i + 3) % 5,
                            _ => (i + 2) % 5,
                        }
                    })
                    .collect()
            };
            Ok((0..5u8).map(|t| eta((t + 3) % 5)).collect())
        }
        SystemClass::Generic => {
            let syms = find_symmetries(sys, 10_000_000)?;
            syms.all_flippings(sys)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{gasket, interval, pentagon, sierpinski_carpet};

    #[test]
    fn carpet_flip_group_has_order_four() {
        let sys = sierpinski_carpet();
        let syms = find_symmetries(&sys, 1_000_000).unwrap();
        assert!(syms.flippings.iter().all(|f| f.is_some()));
        assert_eq!(syms.group.len(), 4);
        // The full automorphism group is the dihedral group of the square.
        assert_eq!(syms.automorphisms.len(), 8);
        // eta_h mirrors the first coordinate: 0 <-> 2 among the bottom row.
        let h = sys.type_by_name("h").unwrap();
        let eta_h = syms.flipping(h).unwrap();
        assert_eq!(eta_h.apply(0), 2);
        assert_eq!(eta_h.apply(1), 1);
        assert_eq!(eta_h.apply(3), 4);
    }

    #[test]
    fn carpet_has_separative_diagonal_reflections() {
        let sys = sierpinski_carpet();
        let syms = find_symmetries(&sys, 1_000_000).unwrap();
        let separative: Vec<_> = syms
            .reflections
            .iter()
            .filter(|r| matches!(r.kind, MapKind::Reflection { separative: true, .. }))
            .collect();
        // Axis flips and both diagonals are separative reflections.
        assert!(separative.len() >= 4, "{:?}", separative.len());
        // The main diagonal fixes 0 and 7 and swaps 1 <-> 3.
        assert!(syms.reflections.iter().any(|r| {
            r.apply(1) == 3
                && r.apply(0) == 0
                && r.apply(7) == 7
                && matches!(r.kind, MapKind::Reflection { separative: true, .. })
        }));
    }

    #[test]
    fn pentagon_reflections_match_dihedral_structure() {
        let sys = pentagon();
        let syms = find_symmetries(&sys, 1_000_000).unwrap();
        assert_eq!(syms.automorphisms.len(), 10);
        assert_eq!(syms.group.len(), 10);
        let mut with_singleton_delta = 0;
        for r in &syms.reflections {
            if let MapKind::Reflection { c, d, delta, .. } = &r.kind {
                if delta.len() == 1 {
                    with_singleton_delta += 1;
                    assert_eq!(c.len(), 2);
                    assert_eq!(d.len(), 2);
                }
            }
        }
        assert_eq!(with_singleton_delta, 5);
        // eta_2 has C = {0, 1}, D = {3, 4}, Delta = {2} (up to C/D swap).
        assert!(syms.reflections.iter().any(|r| {
            matches!(
                &r.kind,
                MapKind::Reflection { c, d, delta, .. }
                if delta == &vec![2u8] && (c == &vec![0u8, 1] || d == &vec![0u8, 1])
            )
        }));
    }

    #[test]
    fn interval_has_a_single_mirror() {
        let sys = interval(3).unwrap();
        let syms = find_symmetries(&sys, 1_000_000).unwrap();
        assert_eq!(syms.group.len(), 2);
        let f = syms.flipping(0).unwrap();
        assert_eq!(f.perm, vec![2, 1, 0]);
    }

    #[test]
    fn gasket_flips_generate_the_full_triangle_group() {
        let sys = gasket();
        let syms = find_symmetries(&sys, 1_000_000).unwrap();
        assert_eq!(syms.automorphisms.len(), 6);
        assert_eq!(syms.group.len(), 6);
        for t in 0..3 {
            assert!(syms.flipping(t).is_some());
        }
    }

    #[test]
    fn class_flippings_agree_with_search() {
        for sys in [sierpinski_carpet(), gasket(), pentagon(), interval(3).unwrap()] {
            let fast = flippings_for_all_types(&sys).unwrap();
            for (t, perm) in fast.iter().enumerate() {
                assert!(is_flipping(&sys, perm, t), "{} type {t}", sys.name());
                assert!(check_igs_morphism(&sys, &sys, perm).is_isomorphism);
            }
        }
    }
}
