//! Iterated graph systems: the defining data, file format, validation and
//! the built-in example systems.
//!
//! An iterated graph system is a connected oriented graph on a finite symbol
//! set, a typing of its edges, and for every type a non-empty set of ordered
//! symbol pairs (the gluing rule) prescribing how copies of the graph are
//! joined across an edge of that type at the next level.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SymbolId = u8;
pub type TypeId = usize;

/// Side of a gluing rule / orientation of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Plus,
    Minus,
}

impl Orientation {
    pub fn flip(self) -> Orientation {
        match self {
            Orientation::Plus => Orientation::Minus,
            Orientation::Minus => Orientation::Plus,
        }
    }

    pub fn sign(self) -> &'static str {
        match self {
            Orientation::Plus => "+",
            Orientation::Minus => "-",
        }
    }
}

/// An oriented, typed level-1 edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct LevelOneEdge {
    pub from: SymbolId,
    pub to: SymbolId,
    pub ty: TypeId,
}

/// A boundary face: one of the distinct sets `I_{t,*}`, together with every
/// `(type, orientation)` pair that names it. Distinct pairs can name the same
/// vertex set (the gasket corners do), so faces are deduplicated by set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Face {
    /// Sorted member symbols.
    pub members: Vec<SymbolId>,
    /// All `(t, *)` pairs whose gluing side equals `members`, sorted.
    pub aliases: Vec<(TypeId, Orientation)>,
}

/// Structural class of a system; drives foldings and coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SystemClass {
    Generic,
    /// Sub-system of the full cubical rule with the given parameters;
    /// `coords[s] = (cell coordinates in 1..=side, sheet in 1..=sheets)`.
    Cubical {
        dim: usize,
        side: u32,
        sheets: u32,
        coords: Vec<(Vec<u32>, u32)>,
    },
    Gasket,
    Pentagon,
}

/// The immutable definition of an iterated graph system.
#[derive(Debug, Clone)]
pub struct IgsSystem {
    name: String,
    labels: Vec<String>,
    type_names: Vec<String>,
    edges: Vec<LevelOneEdge>,
    /// Gluing rule per type, sorted pairs.
    gluings: Vec<Vec<(SymbolId, SymbolId)>>,
    class: SystemClass,
    // Caches derived at construction.
    adjacency: Vec<Vec<(SymbolId, TypeId, Orientation)>>,
    glue_sides: Vec<[Vec<SymbolId>; 2]>,
    faces: Vec<Face>,
}

impl IgsSystem {
    /// Assemble a system from raw parts, building caches. Rejects the local
    /// inconsistencies a document can encode (the global growth conditions
    /// are the business of [`validate_structure`]).
    pub fn from_parts(
        name: String,
        labels: Vec<String>,
        type_names: Vec<String>,
        mut edges: Vec<LevelOneEdge>,
        gluings: Vec<Vec<(SymbolId, SymbolId)>>,
        class: SystemClass,
    ) -> Result<IgsSystem> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Schema("symbol set is empty".into()));
        }
        if n > u8::MAX as usize {
            return Err(Error::Schema(format!("too many symbols: {n} > 255")));
        }
        {
            let mut seen = BTreeSet::new();
            for l in &labels {
                if !seen.insert(l.clone()) {
                    return Err(Error::Semantic(format!("duplicate symbol label `{l}`")));
                }
            }
            let mut seen = BTreeSet::new();
            for t in &type_names {
                if !seen.insert(t.clone()) {
                    return Err(Error::Semantic(format!("duplicate type name `{t}`")));
                }
            }
        }
        if type_names.is_empty() {
            return Err(Error::Schema("type set is empty".into()));
        }
        if gluings.len() != type_names.len() {
            return Err(Error::Schema("gluings must cover every type".into()));
        }
        edges.sort();
        let mut used_types = vec![false; type_names.len()];
        let mut pairs = BTreeSet::new();
        for e in &edges {
            if e.from as usize >= n || e.to as usize >= n {
                return Err(Error::Semantic("edge references unknown symbol".into()));
            }
            if e.from == e.to {
                return Err(Error::Semantic(format!(
                    "self-loop at symbol `{}`",
                    labels[e.from as usize]
                )));
            }
            if e.ty >= type_names.len() {
                return Err(Error::Semantic("edge references unknown type".into()));
            }
            if !pairs.insert((e.from, e.to)) {
                return Err(Error::Semantic(format!(
                    "duplicate edge ({}, {})",
                    labels[e.from as usize], labels[e.to as usize]
                )));
            }
            if pairs.contains(&(e.to, e.from)) {
                return Err(Error::Semantic(format!(
                    "both orientations of {{{}, {}}} present",
                    labels[e.from as usize], labels[e.to as usize]
                )));
            }
            used_types[e.ty] = true;
        }
        if let Some(t) = used_types.iter().position(|u| !u) {
            return Err(Error::Semantic(format!(
                "type `{}` has no edges (typing must be surjective)",
                type_names[t]
            )));
        }
        for (t, pairs) in gluings.iter().enumerate() {
            if pairs.is_empty() {
                return Err(Error::Semantic(format!(
                    "empty gluing rule for type `{}`",
                    type_names[t]
                )));
            }
            for &(a, b) in pairs {
                if a as usize >= n || b as usize >= n {
                    return Err(Error::Semantic(
                        "gluing rule references unknown symbol".into(),
                    ));
                }
            }
        }
        let gluings: Vec<Vec<(SymbolId, SymbolId)>> = gluings
            .into_iter()
            .map(|mut g| {
                g.sort();
                g.dedup();
                g
            })
            .collect();

        let mut adjacency = vec![Vec::new(); n];
        for e in &edges {
            adjacency[e.from as usize].push((e.to, e.ty, Orientation::Plus));
            adjacency[e.to as usize].push((e.from, e.ty, Orientation::Minus));
        }
        for a in &mut adjacency {
            a.sort();
        }

        let glue_sides: Vec<[Vec<SymbolId>; 2]> = gluings
            .iter()
            .map(|pairs| {
                let plus: BTreeSet<SymbolId> = pairs.iter().map(|&(a, _)| a).collect();
                let minus: BTreeSet<SymbolId> = pairs.iter().map(|&(_, b)| b).collect();
                [
                    plus.into_iter().collect(),
                    minus.into_iter().collect(),
                ]
            })
            .collect();

        let mut face_map: BTreeMap<Vec<SymbolId>, Vec<(TypeId, Orientation)>> = BTreeMap::new();
        for (t, sides) in glue_sides.iter().enumerate() {
            face_map
                .entry(sides[0].clone())
                .or_default()
                .push((t, Orientation::Plus));
            face_map
                .entry(sides[1].clone())
                .or_default()
                .push((t, Orientation::Minus));
        }
        let faces = face_map
            .into_iter()
            .map(|(members, mut aliases)| {
                aliases.sort();
                Face { members, aliases }
            })
            .collect();

        Ok(IgsSystem {
            name,
            labels,
            type_names,
            edges,
            gluings,
            class,
            adjacency,
            glue_sides,
            faces,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_symbols(&self) -> usize {
        self.labels.len()
    }

    pub fn n_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, s: SymbolId) -> &str {
        &self.labels[s as usize]
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn type_name(&self, t: TypeId) -> &str {
        &self.type_names[t]
    }

    pub fn symbol_by_label(&self, label: &str) -> Option<SymbolId> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| i as SymbolId)
    }

    pub fn type_by_name(&self, name: &str) -> Option<TypeId> {
        self.type_names.iter().position(|t| t == name)
    }

    pub fn edges(&self) -> &[LevelOneEdge] {
        &self.edges
    }

    pub fn gluing(&self, t: TypeId) -> &[(SymbolId, SymbolId)] {
        &self.gluings[t]
    }

    pub fn class(&self) -> &SystemClass {
        &self.class
    }

    /// Neighbors of a symbol in the level-1 graph, with type and the
    /// orientation of the edge as seen from `s`.
    pub fn neighbors(&self, s: SymbolId) -> &[(SymbolId, TypeId, Orientation)] {
        &self.adjacency[s as usize]
    }

    /// Level-1 edge between two symbols, if present, with orientation as
    /// seen from `a`.
    pub fn level_one_edge(&self, a: SymbolId, b: SymbolId) -> Option<(TypeId, Orientation)> {
        self.adjacency[a as usize]
            .iter()
            .find(|&&(n, _, _)| n == b)
            .map(|&(_, t, o)| (t, o))
    }

    /// The gluing side `I_{t,*}` as a sorted symbol list.
    pub fn glue_side(&self, t: TypeId, star: Orientation) -> &[SymbolId] {
        match star {
            Orientation::Plus => &self.glue_sides[t][0],
            Orientation::Minus => &self.glue_sides[t][1],
        }
    }

    /// Number of gluing pairs with `s` on the given side of `I_t`.
    pub fn glue_multiplicity(&self, t: TypeId, star: Orientation, s: SymbolId) -> usize {
        self.gluings[t]
            .iter()
            .filter(|&&(a, b)| match star {
                Orientation::Plus => a == s,
                Orientation::Minus => b == s,
            })
            .count()
    }

    /// The unique partner of `s` across `I_t` (unique once GR1 holds): for
    /// the plus side the `v` with `(s, v) ∈ I_t`, for the minus side the `w`
    /// with `(w, s) ∈ I_t`.
    pub fn glue_partner(&self, t: TypeId, star: Orientation, s: SymbolId) -> Option<SymbolId> {
        self.gluings[t].iter().find_map(|&(a, b)| match star {
            Orientation::Plus if a == s => Some(b),
            Orientation::Minus if b == s => Some(a),
            _ => None,
        })
    }

    /// Per-symbol degree restricted to edges of one type and orientation.
    pub fn deg_ts(&self, t: TypeId, star: Orientation, s: SymbolId) -> usize {
        self.adjacency[s as usize]
            .iter()
            .filter(|&&(_, ty, o)| ty == t && o == star)
            .count()
    }

    /// Distinct boundary faces with their `(t, *)` aliases.
    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Index into [`IgsSystem::faces`] of the face named by `(t, *)`.
    pub fn face_of(&self, t: TypeId, star: Orientation) -> usize {
        let side = self.glue_side(t, star);
        self.faces
            .iter()
            .position(|f| f.members == side)
            .expect("every gluing side is a face")
    }

    /// Render a word as a label string; single-character alphabets
    /// concatenate, others separate labels with `.`.
    pub fn word_label(&self, symbols: &[SymbolId]) -> String {
        if self.labels.iter().all(|l| l.len() == 1) {
            symbols.iter().map(|&s| self.label(s)).collect()
        } else {
            symbols
                .iter()
                .map(|&s| self.label(s))
                .collect::<Vec<_>>()
                .join(".")
        }
    }

    /// Parse a word label produced by [`IgsSystem::word_label`].
    pub fn word_from_label(&self, text: &str) -> Result<Vec<SymbolId>> {
        let parts: Vec<&str> = if text.contains('.') {
            text.split('.').collect()
        } else if self.labels.iter().all(|l| l.len() == 1) {
            return text
                .chars()
                .map(|c| {
                    self.symbol_by_label(&c.to_string())
                        .ok_or_else(|| Error::Semantic(format!("unknown symbol `{c}`")))
                })
                .collect();
        } else {
            vec![text]
        };
        parts
            .iter()
            .map(|p| {
                self.symbol_by_label(p)
                    .ok_or_else(|| Error::Semantic(format!("unknown symbol `{p}`")))
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
struct MetaDoc {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    notes: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdgeDoc {
    from: String,
    to: String,
    #[serde(rename = "type")]
    ty: String,
}

/// On-disk document: `symbols`, `types`, `edges`, `gluings` and optional
/// `meta`, all by symbol / type label.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SystemDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<MetaDoc>,
    symbols: Vec<String>,
    types: Vec<String>,
    edges: Vec<EdgeDoc>,
    gluings: BTreeMap<String, Vec<(String, String)>>,
}

/// Parse a system document (JSON, UTF-8). Symbol ids are assigned densely in
/// the order of the `symbols` array.
pub fn parse_igs_system(input: &str) -> Result<IgsSystem> {
    let doc: SystemDoc =
        serde_json::from_str(input).map_err(|e| Error::Schema(format!("{e}")))?;
    let labels = doc.symbols;
    let type_names = doc.types;
    let lookup = |l: &str| -> Result<SymbolId> {
        labels
            .iter()
            .position(|x| x == l)
            .map(|i| i as SymbolId)
            .ok_or_else(|| Error::Semantic(format!("unknown symbol `{l}`")))
    };
    let tlookup = |t: &str| -> Result<TypeId> {
        type_names
            .iter()
            .position(|x| x == t)
            .ok_or_else(|| Error::Semantic(format!("unknown type `{t}`")))
    };
    let mut edges = Vec::new();
    for e in &doc.edges {
        edges.push(LevelOneEdge {
            from: lookup(&e.from)?,
            to: lookup(&e.to)?,
            ty: tlookup(&e.ty)?,
        });
    }
    let mut gluings = vec![Vec::new(); type_names.len()];
    for (tname, pairs) in &doc.gluings {
        let t = tlookup(tname)?;
        for (a, b) in pairs {
            gluings[t].push((lookup(a)?, lookup(b)?));
        }
    }
    let name = doc.meta.map(|m| m.name).unwrap_or_default();
    IgsSystem::from_parts(name, labels, type_names, edges, gluings, SystemClass::Generic)
}

/// Canonical serialization: symbols and edges sorted lexicographically,
/// gluing pairs sorted, stable key order. Byte-stable for a given system.
pub fn write_igs_system(sys: &IgsSystem) -> String {
    let mut symbols: Vec<String> = sys.labels().to_vec();
    symbols.sort();
    let mut edges: Vec<EdgeDoc> = sys
        .edges()
        .iter()
        .map(|e| EdgeDoc {
            from: sys.label(e.from).to_string(),
            to: sys.label(e.to).to_string(),
            ty: sys.type_name(e.ty).to_string(),
        })
        .collect();
    edges.sort_by(|a, b| (&a.from, &a.to, &a.ty).cmp(&(&b.from, &b.to, &b.ty)));
    let mut gluings = BTreeMap::new();
    for t in 0..sys.n_types() {
        let mut pairs: Vec<(String, String)> = sys
            .gluing(t)
            .iter()
            .map(|&(a, b)| (sys.label(a).to_string(), sys.label(b).to_string()))
            .collect();
        pairs.sort();
        gluings.insert(sys.type_name(t).to_string(), pairs);
    }
    let doc = SystemDoc {
        meta: if sys.name().is_empty() {
            None
        } else {
            Some(MetaDoc {
                name: sys.name().to_string(),
                notes: String::new(),
            })
        },
        symbols,
        types: sys.type_names().to_vec(),
        edges,
        gluings,
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("serialization cannot fail");
    out.push('\n');
    out
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Result of the structural checks on a system.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub gr1_ok: bool,
    /// `(type, orientation, symbol)` triples violating GR1.
    pub gr1_witnesses: Vec<(String, String, String)>,
    pub gr2_ok: bool,
    pub gr2_witnesses: Vec<(String, String, String)>,
    pub gr3_ok: bool,
    pub gr3_witnesses: Vec<String>,
    /// Corner condition: every face subfamily with empty intersection
    /// contains two faces with disjoint gluing sides.
    pub corner_ok: bool,
    pub corner_witness: Option<Vec<(String, String)>>,
    pub connectivity_ok: bool,
    /// Maximum vertex degree over all levels.
    pub c_deg: usize,
}

impl ValidationReport {
    pub fn all_ok(&self) -> bool {
        self.gr1_ok && self.gr2_ok && self.gr3_ok && self.corner_ok && self.connectivity_ok
    }
}

/// Check the growth conditions GR1-GR3, connectivity, the corner condition
/// and compute the degree bound. Failures are encoded in the report, never
/// as errors.
pub fn validate_structure(sys: &IgsSystem) -> ValidationReport {
    let orientations = [Orientation::Plus, Orientation::Minus];
    let mut gr1_witnesses = Vec::new();
    let mut gr2_witnesses = Vec::new();
    for t in 0..sys.n_types() {
        for &star in &orientations {
            for s in 0..sys.n_symbols() as SymbolId {
                let b = sys.glue_multiplicity(t, star, s);
                if b > 1 {
                    gr1_witnesses.push((
                        sys.type_name(t).to_string(),
                        star.sign().to_string(),
                        sys.label(s).to_string(),
                    ));
                }
                if b > 0 && sys.deg_ts(t, star, s) > 0 {
                    gr2_witnesses.push((
                        sys.type_name(t).to_string(),
                        star.sign().to_string(),
                        sys.label(s).to_string(),
                    ));
                }
            }
        }
    }
    let mut gr3_witnesses = Vec::new();
    for t in 0..sys.n_types() {
        let plus: BTreeSet<_> = sys.glue_side(t, Orientation::Plus).iter().collect();
        if sys
            .glue_side(t, Orientation::Minus)
            .iter()
            .any(|s| plus.contains(s))
        {
            gr3_witnesses.push(sys.type_name(t).to_string());
        }
    }

    // Corner condition: brute force over subfamilies of the distinct faces.
    let faces = sys.faces();
    let mut corner_ok = true;
    let mut corner_witness = None;
    let k = faces.len();
    'subsets: for mask in 1u32..(1 << k) {
        let chosen: Vec<&Face> = (0..k).filter(|i| mask >> i & 1 == 1).map(|i| &faces[i]).collect();
        let mut inter: BTreeSet<SymbolId> = chosen[0].members.iter().copied().collect();
        for f in &chosen[1..] {
            let set: BTreeSet<SymbolId> = f.members.iter().copied().collect();
            inter = inter.intersection(&set).copied().collect();
        }
        if !inter.is_empty() {
            continue;
        }
        for i in 0..chosen.len() {
            for j in i + 1..chosen.len() {
                let a: BTreeSet<SymbolId> = chosen[i].members.iter().copied().collect();
                if chosen[j].members.iter().all(|s| !a.contains(s)) {
                    continue 'subsets;
                }
            }
        }
        corner_ok = false;
        corner_witness = Some(
            chosen
                .iter()
                .flat_map(|f| {
                    f.aliases.iter().take(1).map(|&(t, o)| {
                        (sys.type_name(t).to_string(), o.sign().to_string())
                    })
                })
                .collect(),
        );
        break;
    }

    // Connectivity of the undirected level-1 graph.
    let n = sys.n_symbols();
    let mut seen = vec![false; n];
    let mut stack = vec![0u8];
    seen[0] = true;
    while let Some(s) = stack.pop() {
        for &(nb, _, _) in sys.neighbors(s) {
            if !seen[nb as usize] {
                seen[nb as usize] = true;
                stack.push(nb);
            }
        }
    }
    let connectivity_ok = seen.iter().all(|&x| x);

    // c_deg = sum over (t, *) of the per-symbol maximum, which bounds (and
    // for the built-ins equals) the maximum degree over all levels.
    let mut c_deg = 0;
    for t in 0..sys.n_types() {
        for &star in &orientations {
            c_deg += (0..sys.n_symbols() as SymbolId)
                .map(|s| sys.deg_ts(t, star, s))
                .max()
                .unwrap_or(0);
        }
    }

    ValidationReport {
        gr1_ok: gr1_witnesses.is_empty(),
        gr1_witnesses,
        gr2_ok: gr2_witnesses.is_empty(),
        gr2_witnesses,
        gr3_ok: gr3_witnesses.is_empty(),
        gr3_witnesses,
        corner_ok,
        corner_witness,
        connectivity_ok,
        c_deg,
    }
}

/// All unordered `(t, *)` pairs whose level-1 gluing sides are disjoint.
/// Empty output means GR3 failed upstream.
pub fn antipodal_pairs(
    sys: &IgsSystem,
) -> Vec<((TypeId, Orientation), (TypeId, Orientation))> {
    let orientations = [Orientation::Plus, Orientation::Minus];
    let mut keys: Vec<(TypeId, Orientation)> = Vec::new();
    for t in 0..sys.n_types() {
        for &o in &orientations {
            keys.push((t, o));
        }
    }
    keys.sort();
    let mut out = Vec::new();
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            let a: BTreeSet<_> = sys.glue_side(keys[i].0, keys[i].1).iter().collect();
            if sys
                .glue_side(keys[j].0, keys[j].1)
                .iter()
                .all(|s| !a.contains(s))
            {
                out.push((keys[i], keys[j]));
            }
        }
    }
    out
}

/// Antipodal pairs deduplicated by the underlying pair of face sets,
/// reported as indices into [`IgsSystem::faces`]. These are the distinct
/// modulus problems behind [`antipodal_pairs`].
pub fn antipodal_face_pairs(sys: &IgsSystem) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    for ((t1, o1), (t2, o2)) in antipodal_pairs(sys) {
        let a = sys.face_of(t1, o1);
        let b = sys.face_of(t2, o2);
        set.insert((a.min(b), a.max(b)));
    }
    set.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Morphisms
// ---------------------------------------------------------------------------

/// Outcome of checking a symbol function against the three gluing
/// compatibility conditions plus the graph-mapping property.
#[derive(Debug, Clone, Serialize)]
pub struct MorphismReport {
    pub is_graph_mapping: bool,
    pub is_mapping: bool,
    pub is_isomorphism: bool,
    /// First violated condition, for diagnostics.
    pub witness: Option<String>,
}

/// Verify whether `map` (total on the symbols of `a`) is a mapping of
/// iterated graph systems `a -> b`, and whether it is an isomorphism.
pub fn check_igs_morphism(a: &IgsSystem, b: &IgsSystem, map: &[SymbolId]) -> MorphismReport {
    let mut report = check_mapping_only(a, b, map);
    // Isomorphism: bijective with an inverse that is again a mapping.
    if report.is_mapping && a.n_symbols() == b.n_symbols() {
        let mut inverse = vec![u8::MAX; b.n_symbols()];
        let mut bijective = true;
        for (s, &img) in map.iter().enumerate() {
            if (img as usize) < b.n_symbols() && inverse[img as usize] == u8::MAX {
                inverse[img as usize] = s as SymbolId;
            } else {
                bijective = false;
                break;
            }
        }
        if bijective {
            report.is_isomorphism = check_mapping_only(b, a, &inverse).is_mapping;
        }
    }
    report
}

fn check_mapping_only(a: &IgsSystem, b: &IgsSystem, map: &[SymbolId]) -> MorphismReport {
    assert_eq!(map.len(), a.n_symbols(), "map must be total on the source");
    let mut witness = None;
    let mut is_graph_mapping = true;
    for e in a.edges() {
        let (fw, fv) = (map[e.from as usize], map[e.to as usize]);
        if fw != fv && b.level_one_edge(fw, fv).is_none() {
            is_graph_mapping = false;
            witness.get_or_insert(format!(
                "edge ({}, {}) maps to a non-edge",
                a.label(e.from),
                a.label(e.to)
            ));
            break;
        }
    }

    let mut ok = is_graph_mapping;
    if ok {
        'outer: for e in a.edges() {
            let (fw, fv) = (map[e.from as usize], map[e.to as usize]);
            if fw == fv {
                // Condition (1): a collapsed edge collapses its gluing rule.
                for &(w2, v2) in a.gluing(e.ty) {
                    if map[w2 as usize] != map[v2 as usize] {
                        ok = false;
                        witness.get_or_insert(format!(
                            "collapsed type-{} edge but gluing pair ({}, {}) not collapsed",
                            a.type_name(e.ty),
                            a.label(w2),
                            a.label(v2)
                        ));
                        break 'outer;
                    }
                }
            } else {
                match b.level_one_edge(fw, fv) {
                    Some((t2, Orientation::Plus)) => {
                        // Condition (2): orientation preserved.
                        for &(w2, v2) in a.gluing(e.ty) {
                            if !b
                                .gluing(t2)
                                .contains(&(map[w2 as usize], map[v2 as usize]))
                            {
                                ok = false;
                                witness.get_or_insert(format!(
                                    "gluing pair ({}, {}) of type {} not carried into I_{}",
                                    a.label(w2),
                                    a.label(v2),
                                    a.type_name(e.ty),
                                    b.type_name(t2)
                                ));
                                break 'outer;
                            }
                        }
                    }
                    Some((t2, Orientation::Minus)) => {
                        // Condition (3): orientation reversed.
                        for &(w2, v2) in a.gluing(e.ty) {
                            if !b
                                .gluing(t2)
                                .contains(&(map[v2 as usize], map[w2 as usize]))
                            {
                                ok = false;
                                witness.get_or_insert(format!(
                                    "reversed gluing pair ({}, {}) of type {} not in I_{}",
                                    a.label(w2),
                                    a.label(v2),
                                    a.type_name(e.ty),
                                    b.type_name(t2)
                                ));
                                break 'outer;
                            }
                        }
                    }
                    None => unreachable!("graph mapping checked above"),
                }
            }
        }
    }
    MorphismReport {
        is_graph_mapping,
        is_mapping: ok,
        is_isomorphism: false,
        witness,
    }
}

// ---------------------------------------------------------------------------
// Built-in systems
// ---------------------------------------------------------------------------

fn cubical_from_coords(
    name: &str,
    type_names: Vec<String>,
    dim: usize,
    side: u32,
    sheets: u32,
    coords: Vec<(Vec<u32>, u32)>,
    labels: Option<Vec<String>>,
) -> Result<IgsSystem> {
    let n = coords.len();
    let labels = labels.unwrap_or_else(|| (0..n).map(|i| i.to_string()).collect());
    let mut edges = Vec::new();
    let mut gluings = vec![Vec::new(); dim];
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let (ca, _sa) = &coords[a];
            let (cb, _sb) = &coords[b];
            for j in 0..dim {
                // Edge of type t_j: coordinate j increments, the rest agree
                // (sheets unconstrained for edges).
                if (0..dim).all(|i| {
                    if i == j {
                        cb[i] == ca[i] + 1
                    } else {
                        cb[i] == ca[i]
                    }
                }) {
                    edges.push(LevelOneEdge {
                        from: a as SymbolId,
                        to: b as SymbolId,
                        ty: j,
                    });
                }
                // Gluing of type t_j: coordinate j wraps from `side` to 1,
                // the rest agree, and the sheet is preserved.
                if coords[a].1 == coords[b].1
                    && ca[j] == side
                    && cb[j] == 1
                    && (0..dim).all(|i| i == j || cb[i] == ca[i])
                {
                    gluings[j].push((a as SymbolId, b as SymbolId));
                }
            }
        }
    }
    IgsSystem::from_parts(
        name.to_string(),
        labels,
        type_names,
        edges,
        gluings,
        SystemClass::Cubical {
            dim,
            side,
            sheets,
            coords,
        },
    )
}

/// The standard planar carpet on eight symbols and two edge types.
pub fn sierpinski_carpet() -> IgsSystem {
    let coords = [
        (1, 1),
        (2, 1),
        (3, 1),
        (1, 2),
        (3, 2),
        (1, 3),
        (2, 3),
        (3, 3),
    ];
    cubical_from_coords(
        "sierpinski-carpet",
        vec!["h".into(), "v".into()],
        2,
        3,
        1,
        coords.iter().map(|&(x, y)| (vec![x, y], 1)).collect(),
        None,
    )
    .expect("built-in is well-formed")
}

/// The three-dimensional sponge on twenty symbols and three edge types.
pub fn menger_sponge() -> IgsSystem {
    let coords: [(u32, u32, u32); 20] = [
        (1, 1, 1),
        (2, 1, 1),
        (3, 1, 1),
        (1, 2, 1),
        (3, 2, 1),
        (1, 3, 1),
        (2, 3, 1),
        (3, 3, 1),
        (1, 1, 2),
        (3, 1, 2),
        (1, 3, 2),
        (3, 3, 2),
        (1, 1, 3),
        (2, 1, 3),
        (3, 1, 3),
        (1, 2, 3),
        (3, 2, 3),
        (1, 3, 3),
        (2, 3, 3),
        (3, 3, 3),
    ];
    cubical_from_coords(
        "menger-sponge",
        vec!["x".into(), "y".into(), "z".into()],
        3,
        3,
        1,
        coords.iter().map(|&(x, y, z)| (vec![x, y, z], 1)).collect(),
        None,
    )
    .expect("built-in is well-formed")
}

/// The pillow: a 3x3 square grid with the central square doubled on a
/// second sheet.
pub fn pillow() -> IgsSystem {
    let mut coords: Vec<(Vec<u32>, u32)> = Vec::new();
    for y in 1..=3u32 {
        for x in 1..=3u32 {
            coords.push((vec![x, y], 1));
        }
    }
    coords.push((vec![2, 2], 2));
    cubical_from_coords(
        "pillow",
        vec!["t1".into(), "t2".into()],
        2,
        3,
        2,
        coords,
        None,
    )
    .expect("built-in is well-formed")
}

/// The triangle-based gasket on three symbols, one gluing pair per type.
pub fn gasket() -> IgsSystem {
    IgsSystem::from_parts(
        "gasket".into(),
        vec!["0".into(), "1".into(), "2".into()],
        vec!["a".into(), "b".into(), "c".into()],
        vec![
            LevelOneEdge { from: 0, to: 1, ty: 0 },
            LevelOneEdge { from: 1, to: 2, ty: 1 },
            LevelOneEdge { from: 0, to: 2, ty: 2 },
        ],
        vec![vec![(1, 0)], vec![(2, 1)], vec![(2, 0)]],
        SystemClass::Gasket,
    )
    .expect("built-in is well-formed")
}

/// The pentagonal carpet on five symbols, a five-cycle with two gluing
/// pairs per type.
pub fn pentagon() -> IgsSystem {
    IgsSystem::from_parts(
        "pentagon".into(),
        (0..5).map(|i| i.to_string()).collect(),
        vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into()],
        (0..5)
            .map(|i| LevelOneEdge {
                from: i as SymbolId,
                to: ((i + 1) % 5) as SymbolId,
                ty: i,
            })
            .collect(),
        vec![
            vec![(1, 0), (2, 4)],
            vec![(2, 1), (3, 0)],
            vec![(3, 2), (4, 1)],
            vec![(4, 3), (0, 2)],
            vec![(0, 4), (1, 3)],
        ],
        SystemClass::Pentagon,
    )
    .expect("built-in is well-formed")
}

/// One-dimensional subdivision into `side` intervals.
pub fn interval(side: u32) -> Result<IgsSystem> {
    if side < 2 {
        return Err(Error::CubicalViolation(
            "interval subdivision needs side >= 2".into(),
        ));
    }
    cubical_from_coords(
        &format!("interval-{side}"),
        vec!["t1".into()],
        1,
        side,
        1,
        (1..=side).map(|x| (vec![x], 1)).collect(),
        None,
    )
}

/// General cubical generator: keep the listed cells (indices into the
/// lexicographic enumeration of `{1..side}^dim x {1..sheets}`), derive edges
/// and gluings by restriction, and enforce the subrule conditions. An empty
/// `kept` keeps the full grid.
pub fn cubical(dim: usize, side: u32, sheets: u32, kept: &[usize]) -> Result<IgsSystem> {
    if dim < 1 || side < 3 || sheets < 1 {
        return Err(Error::CubicalViolation(format!(
            "parameters out of range: dim {dim} >= 1, side {side} >= 3, sheets {sheets} >= 1"
        )));
    }
    // Lexicographic enumeration of (coordinates, sheet).
    let mut all: Vec<(Vec<u32>, u32)> = Vec::new();
    let mut idx = vec![1u32; dim];
    loop {
        for s in 1..=sheets {
            all.push((idx.clone(), s));
        }
        let mut j = dim;
        loop {
            if j == 0 {
                break;
            }
            j -= 1;
            if idx[j] < side {
                idx[j] += 1;
                break;
            }
            idx[j] = 1;
            if j == 0 {
                j = usize::MAX;
                break;
            }
        }
        if j == usize::MAX {
            break;
        }
    }
    let coords: Vec<(Vec<u32>, u32)> = if kept.is_empty() {
        all.clone()
    } else {
        let mut sorted: Vec<usize> = kept.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != kept.len() {
            return Err(Error::CubicalViolation("duplicate kept indices".into()));
        }
        sorted
            .iter()
            .map(|&i| {
                all.get(i)
                    .cloned()
                    .ok_or_else(|| Error::CubicalViolation(format!("index {i} out of range")))
            })
            .collect::<Result<_>>()?
    };
    if coords.len() > u8::MAX as usize {
        return Err(Error::CubicalViolation(format!(
            "too many symbols: {}",
            coords.len()
        )));
    }

    // C1: the frame cells (all off-axis coordinates extreme, sheet 1) exist.
    let have: BTreeSet<(Vec<u32>, u32)> = coords.iter().cloned().collect();
    for j in 0..dim {
        let others: Vec<usize> = (0..dim).filter(|&i| i != j).collect();
        for mask in 0u32..(1 << others.len()) {
            let mut cell = vec![1u32; dim];
            for (bit, &i) in others.iter().enumerate() {
                cell[i] = if mask >> bit & 1 == 1 { side } else { 1 };
            }
            for v in 1..=side {
                cell[j] = v;
                if !have.contains(&(cell.clone(), 1)) {
                    return Err(Error::CubicalViolation(format!(
                        "C1 fails: frame cell {cell:?} (sheet 1) missing"
                    )));
                }
            }
        }
    }

    // C4: the flip/diagonal/anti-diagonal maps preserve the kept set.
    let apply = |c: &[u32], s: u32, f: &dyn Fn(&[u32]) -> Vec<u32>| (f(c), s);
    let mut generators: Vec<(String, Box<dyn Fn(&[u32]) -> Vec<u32>>)> = Vec::new();
    for j in 0..dim {
        generators.push((
            format!("flip axis {}", j + 1),
            Box::new(move |c: &[u32]| {
                let mut v = c.to_vec();
                v[j] = side + 1 - c[j];
                v
            }),
        ));
    }
    for j in 0..dim {
        for k in j + 1..dim {
            generators.push((
                format!("diagonal ({}, {})", j + 1, k + 1),
                Box::new(move |c: &[u32]| {
                    let mut v = c.to_vec();
                    v[j] = c[k];
                    v[k] = c[j];
                    v
                }),
            ));
            generators.push((
                format!("anti-diagonal ({}, {})", j + 1, k + 1),
                Box::new(move |c: &[u32]| {
                    let mut v = c.to_vec();
                    v[j] = side + 1 - c[k];
                    v[k] = side + 1 - c[j];
                    v
                }),
            ));
        }
    }
    for (name, g) in &generators {
        for (c, s) in &coords {
            if !have.contains(&apply(c, *s, g.as_ref())) {
                return Err(Error::CubicalViolation(format!(
                    "C4 fails: {name} maps cell {c:?} (sheet {s}) outside the kept set"
                )));
            }
        }
    }

    let type_names = (1..=dim).map(|j| format!("t{j}")).collect();
    cubical_from_coords(
        &format!("cubical-{dim}-{side}-{sheets}"),
        type_names,
        dim,
        side,
        sheets,
        coords,
        None,
    )
}

/// Look up a built-in system by name. `interval` takes one parameter (the
/// side), `cubical` takes `dim, side, sheets` followed by the kept cell
/// indices (none keeps the full grid).
pub fn builtin_system(name: &str, params: &[u64]) -> Result<IgsSystem> {
    match name {
        "sierpinski-carpet" | "carpet" => Ok(sierpinski_carpet()),
        "menger-sponge" | "menger" => Ok(menger_sponge()),
        "pillow" => Ok(pillow()),
        "gasket" => Ok(gasket()),
        "pentagon" => Ok(pentagon()),
        "interval" => {
            let side = *params.first().unwrap_or(&3);
            interval(side as u32)
        }
        "cubical" => {
            if params.len() < 3 {
                return Err(Error::CubicalViolation(
                    "cubical needs at least dim, side, sheets".into(),
                ));
            }
            let kept: Vec<usize> = params[3..].iter().map(|&x| x as usize).collect();
            cubical(params[0] as usize, params[1] as u32, params[2] as u32, &kept)
        }
        other => Err(Error::UnknownBuiltin(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn carpet_matches_published_data() {
        let sys = sierpinski_carpet();
        assert_eq!(sys.n_symbols(), 8);
        assert_eq!(sys.n_types(), 2);
        assert_eq!(sys.edges().len(), 8);
        let h = sys.type_by_name("h").unwrap();
        let v = sys.type_by_name("v").unwrap();
        let mut hedges: Vec<(u8, u8)> = sys
            .edges()
            .iter()
            .filter(|e| e.ty == h)
            .map(|e| (e.from, e.to))
            .collect();
        hedges.sort();
        assert_eq!(hedges, vec![(0, 1), (1, 2), (5, 6), (6, 7)]);
        let mut vedges: Vec<(u8, u8)> = sys
            .edges()
            .iter()
            .filter(|e| e.ty == v)
            .map(|e| (e.from, e.to))
            .collect();
        vedges.sort();
        assert_eq!(vedges, vec![(0, 3), (2, 4), (3, 5), (4, 7)]);
        assert_eq!(sys.gluing(h), &[(2, 0), (4, 3), (7, 5)]);
        assert_eq!(sys.gluing(v), &[(5, 0), (6, 1), (7, 2)]);
        assert_eq!(sys.glue_side(h, Orientation::Minus), &[0, 3, 5]);
        assert_eq!(sys.glue_side(h, Orientation::Plus), &[2, 4, 7]);
    }

    #[test]
    fn menger_matches_published_data() {
        let sys = menger_sponge();
        assert_eq!(sys.n_symbols(), 20);
        assert_eq!(sys.edges().len(), 24);
        assert_eq!(sys.n_types(), 3);
        for t in 0..3 {
            assert_eq!(sys.gluing(t).len(), 8);
        }
        let x = sys.type_by_name("x").unwrap();
        assert_eq!(
            sys.gluing(x),
            &[(2, 0), (4, 3), (7, 5), (9, 8), (11, 10), (14, 12), (16, 15), (19, 17)]
        );
        let z = sys.type_by_name("z").unwrap();
        assert_eq!(
            sys.gluing(z),
            &[
                (12, 0),
                (13, 1),
                (14, 2),
                (15, 3),
                (16, 4),
                (17, 5),
                (18, 6),
                (19, 7)
            ]
        );
    }

    #[test]
    fn pentagon_matches_published_data() {
        let sys = pentagon();
        assert_eq!(sys.n_symbols(), 5);
        let a = sys.type_by_name("a").unwrap();
        assert_eq!(sys.gluing(a), &[(1, 0), (2, 4)]);
        // L_4 = {1, 2} = I_{a,+}
        assert_eq!(sys.glue_side(a, Orientation::Plus), &[1, 2]);
    }

    #[test]
    fn pillow_has_ten_symbols_and_a_doubled_center() {
        let sys = pillow();
        assert_eq!(sys.n_symbols(), 10);
        assert_eq!(sys.edges().len(), 16);
        for t in 0..2 {
            assert_eq!(sys.gluing(t).len(), 3);
        }
    }

    #[test]
    fn validation_passes_on_builtins() {
        for sys in [
            sierpinski_carpet(),
            menger_sponge(),
            pillow(),
            gasket(),
            pentagon(),
            interval(3).unwrap(),
        ] {
            let report = validate_structure(&sys);
            assert!(report.all_ok(), "{}: {report:?}", sys.name());
        }
        assert_eq!(validate_structure(&sierpinski_carpet()).c_deg, 4);
        assert_eq!(validate_structure(&menger_sponge()).c_deg, 6);
        assert_eq!(validate_structure(&interval(3).unwrap()).c_deg, 2);
    }

    #[test]
    fn gr_violations_are_witnessed() {
        // Carpet with I_h augmented by (2, 3): b_h^+(2) = 2 breaks GR1.
        let base = sierpinski_carpet();
        let mut gluings: Vec<Vec<(u8, u8)>> =
            (0..base.n_types()).map(|t| base.gluing(t).to_vec()).collect();
        gluings[0].push((2, 3));
        let sys = IgsSystem::from_parts(
            "bad".into(),
            base.labels().to_vec(),
            base.type_names().to_vec(),
            base.edges().to_vec(),
            gluings,
            SystemClass::Generic,
        )
        .unwrap();
        let report = validate_structure(&sys);
        assert!(!report.gr1_ok);
        assert!(report
            .gr1_witnesses
            .contains(&("h".into(), "+".into(), "2".into())));

        // Carpet with I_h replaced by {(0, 2)}: symbol 0 has both a type-h
        // out-edge and a plus-side gluing, breaking GR2.
        let mut gluings: Vec<Vec<(u8, u8)>> =
            (0..base.n_types()).map(|t| base.gluing(t).to_vec()).collect();
        gluings[0] = vec![(0, 2)];
        let sys = IgsSystem::from_parts(
            "bad2".into(),
            base.labels().to_vec(),
            base.type_names().to_vec(),
            base.edges().to_vec(),
            gluings,
            SystemClass::Generic,
        )
        .unwrap();
        let report = validate_structure(&sys);
        assert!(report.gr3_ok);
        assert!(!report.gr2_ok);
        assert!(report
            .gr2_witnesses
            .contains(&("h".into(), "+".into(), "0".into())));
    }

    #[test]
    fn parse_rejects_self_loops_and_double_orientation() {
        let doc = r#"{
            "symbols": ["0", "1"],
            "types": ["t"],
            "edges": [{"from": "0", "to": "0", "type": "t"}],
            "gluings": {"t": [["1", "0"]]}
        }"#;
        assert!(matches!(parse_igs_system(doc), Err(Error::Semantic(_))));
        let doc = r#"{
            "symbols": ["0", "1"],
            "types": ["t"],
            "edges": [
                {"from": "0", "to": "1", "type": "t"},
                {"from": "1", "to": "0", "type": "t"}
            ],
            "gluings": {"t": [["1", "0"]]}
        }"#;
        assert!(matches!(parse_igs_system(doc), Err(Error::Semantic(_))));
    }

    #[test]
    fn canonical_serialization_round_trips() {
        for sys in [sierpinski_carpet(), gasket(), pentagon(), pillow()] {
            let text = write_igs_system(&sys);
            let back = parse_igs_system(&text).unwrap();
            assert_eq!(write_igs_system(&back), text);
            assert_eq!(back.n_symbols(), sys.n_symbols());
            assert_eq!(back.edges().len(), sys.edges().len());
        }
    }

    #[test]
    fn carpet_antipodal_pairs() {
        let sys = sierpinski_carpet();
        let pairs = antipodal_pairs(&sys);
        let h = sys.type_by_name("h").unwrap();
        let v = sys.type_by_name("v").unwrap();
        assert!(pairs.contains(&((h, Orientation::Plus), (h, Orientation::Minus)))
            || pairs.contains(&((h, Orientation::Minus), (h, Orientation::Plus))));
        assert!(pairs.contains(&((v, Orientation::Plus), (v, Orientation::Minus)))
            || pairs.contains(&((v, Orientation::Minus), (v, Orientation::Plus))));
        assert_eq!(pairs.len(), 2);
        assert_eq!(antipodal_face_pairs(&sys).len(), 2);
    }

    #[test]
    fn gasket_antipodal_pairs_dedup_to_three_problems() {
        let sys = gasket();
        let a = sys.type_by_name("a").unwrap();
        let pairs = antipodal_pairs(&sys);
        assert!(pairs
            .iter()
            .any(|&(x, y)| (x, y) == ((a, Orientation::Plus), (a, Orientation::Minus))
                || (y, x) == ((a, Orientation::Plus), (a, Orientation::Minus))));
        assert_eq!(antipodal_face_pairs(&sys).len(), 3);
    }

    #[test]
    fn cubical_generator_checks_subrule_conditions() {
        // Full 9-cell grid is a valid square subdivision.
        let full = cubical(2, 3, 1, &[]).unwrap();
        assert_eq!(full.n_symbols(), 9);
        assert!(validate_structure(&full).all_ok());
        // Dropping a corner cell breaks C1.
        let kept: Vec<usize> = (1..9).collect();
        assert!(matches!(
            cubical(2, 3, 1, &kept),
            Err(Error::CubicalViolation(_))
        ));
        // Dropping the center keeps C1-C4: that is the carpet shape.
        let kept = [0, 1, 2, 3, 5, 6, 7, 8];
        let carpet_like = cubical(2, 3, 1, &kept).unwrap();
        assert_eq!(carpet_like.n_symbols(), 8);
        assert!(validate_structure(&carpet_like).all_ok());
    }

    #[test]
    fn carpet_is_isomorphic_to_generated_cubical() {
        let a = sierpinski_carpet();
        let b = cubical(2, 3, 1, &[0, 1, 2, 3, 5, 6, 7, 8]).unwrap();
        // Match symbols by coordinates.
        let SystemClass::Cubical { coords: ca, .. } = a.class() else {
            panic!()
        };
        let SystemClass::Cubical { coords: cb, .. } = b.class() else {
            panic!()
        };
        let map: Vec<u8> = ca
            .iter()
            .map(|c| cb.iter().position(|d| d == c).unwrap() as u8)
            .collect();
        let report = check_igs_morphism(&a, &b, &map);
        assert!(report.is_isomorphism, "{report:?}");
    }

    #[test]
    fn collapsing_map_to_interval_is_a_mapping() {
        // First coordinate map carpet -> interval(3).
        let a = sierpinski_carpet();
        let b = interval(3).unwrap();
        let SystemClass::Cubical { coords, .. } = a.class() else {
            panic!()
        };
        let map: Vec<u8> = coords.iter().map(|(c, _)| (c[0] - 1) as u8).collect();
        let report = check_igs_morphism(&a, &b, &map);
        assert!(report.is_mapping, "{report:?}");
        assert!(!report.is_isomorphism);

        // Collapsing everything to one symbol is degenerate but legal:
        // every edge collapses and so does every gluing pair.
        let all_zero = vec![0u8; 8];
        assert!(check_igs_morphism(&a, &b, &all_zero).is_mapping);

        // Partial collapse c1 -> min(c1, 2) collapses the type-h edge
        // (1, 2) without collapsing the gluing pair (2, 0): condition (1)
        // fails.
        let map: Vec<u8> = coords
            .iter()
            .map(|(c, _)| (c[0].min(2) - 1) as u8)
            .collect();
        let report = check_igs_morphism(&a, &b, &map);
        assert!(!report.is_mapping, "{report:?}");
    }

    #[test]
    fn identity_is_an_isomorphism() {
        let a = sierpinski_carpet();
        let id: Vec<u8> = (0..8).collect();
        assert!(check_igs_morphism(&a, &a, &id).is_isomorphism);
    }
}
