//! Boundary-attached graphs and flow bases.
//!
//! The level-m graph is extended with one formal vertex per (face, member)
//! pair. A flow basis is a family of unit flows between all ordered pairs
//! of distinct faces on this extension, compatible in the sense that
//! attachment values agree across partners and flips. Bases are built from
//! a single optimal flow per symmetry class by exact permutation actions,
//! twisting across separative reflections, and (for the pentagon) the
//! symmetrize-and-splice construction; every condition is re-verified
//! numerically afterwards.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::flow::{solve_flow_on_edges, verify_flow, Flow, FlowOptions};
use crate::graph::{build_graph, ReplacementGraph};
use crate::lift::LiftedSymmetry;
use crate::symmetry::{MapKind, SymbolMap};
use crate::system::{IgsSystem, Orientation, SymbolId, SystemClass};
use crate::words::Word;

/// The boundary-attached graph at one level.
#[derive(Debug, Clone)]
pub struct TildeGraph {
    pub level: usize,
    pub n_base: usize,
    pub n_vertices: usize,
    /// Base edges first (same order as the replacement graph), then one
    /// attachment edge per (face, member), oriented `(attachment, member)`.
    pub edges: Arc<Vec<(u32, u32)>>,
    pub n_base_edges: usize,
    /// Per distinct face: sorted level-m members and the id of the first
    /// attachment vertex.
    pub face_members: Vec<Vec<u32>>,
    pub face_attach_start: Vec<u32>,
}

impl TildeGraph {
    /// Attachment vertex id of the k-th member of a face.
    pub fn attach_vertex(&self, face: usize, k: usize) -> u32 {
        self.face_attach_start[face] + k as u32
    }

    /// All attachment vertex ids of a face.
    pub fn attach_set(&self, face: usize) -> Vec<u32> {
        (0..self.face_members[face].len())
            .map(|k| self.attach_vertex(face, k))
            .collect()
    }

    /// Edge index of the attachment edge of the k-th member of a face.
    pub fn attach_edge(&self, face: usize, k: usize) -> usize {
        let mut offset = self.n_base_edges;
        for f in 0..face {
            offset += self.face_members[f].len();
        }
        offset + k
    }

    /// Index of a member vertex within its face.
    pub fn member_index(&self, face: usize, v: u32) -> Option<usize> {
        self.face_members[face].binary_search(&v).ok()
    }
}

/// Attach the formal boundary vertices to a built replacement graph.
pub fn build_tilde_graph(sys: &IgsSystem, g: &ReplacementGraph) -> TildeGraph {
    let m = g.level();
    let mut edges: Vec<(u32, u32)> = g.edges().iter().map(|e| (e.from, e.to)).collect();
    let n_base_edges = edges.len();
    let mut face_members = Vec::new();
    let mut face_attach_start = Vec::new();
    let mut next = g.n_vertices() as u32;
    for f in sys.faces() {
        let (t, star) = f.aliases[0];
        let members = crate::graph::boundary_set(sys, m, t, star);
        face_attach_start.push(next);
        for (k, &v) in members.iter().enumerate() {
            edges.push((next + k as u32, v));
        }
        next += members.len() as u32;
        face_members.push(members);
    }
    TildeGraph {
        level: m,
        n_base: g.n_vertices(),
        n_vertices: next as usize,
        edges: Arc::new(edges),
        n_base_edges,
        face_members,
        face_attach_start,
    }
}

// ---------------------------------------------------------------------------
// Exact symmetry action on tilde flows
// ---------------------------------------------------------------------------

/// A vertex permutation of the tilde graph induced by a symbol permutation.
pub struct TildeMap {
    vertex_map: Vec<u32>,
    /// Image face per face.
    pub face_map: Vec<usize>,
}

/// Lift a symbol permutation (an automorphism) to the tilde graph: words
/// map coordinate-wise and the attachment of `(L, v)` maps to the
/// attachment of `(alpha(L), alpha(v))`.
pub fn tilde_map(sys: &IgsSystem, tg: &TildeGraph, perm: &[SymbolId]) -> Result<TildeMap> {
    let m = tg.level;
    let lift = LiftedSymmetry {
        perm: perm.to_vec(),
        level: m,
    };
    // Face image: the level-1 side maps setwise onto another face's side.
    let mut face_map = Vec::with_capacity(sys.faces().len());
    for f in sys.faces() {
        let mut image: Vec<SymbolId> = f.members.iter().map(|&s| perm[s as usize]).collect();
        image.sort_unstable();
        let img = sys
            .faces()
            .iter()
            .position(|g| g.members == image)
            .ok_or_else(|| {
                Error::HypothesisViolation(
                    "permutation does not permute the boundary faces".into(),
                )
            })?;
        face_map.push(img);
    }
    let mut vertex_map = vec![0u32; tg.n_vertices];
    for v in 0..tg.n_base as u64 {
        vertex_map[v as usize] = lift.apply_vertex(v, sys.n_symbols()) as u32;
    }
    for (f, members) in tg.face_members.iter().enumerate() {
        for (k, &v) in members.iter().enumerate() {
            let img_v = lift.apply_vertex(v as u64, sys.n_symbols()) as u32;
            let img_f = face_map[f];
            let img_k = tg.member_index(img_f, img_v).ok_or_else(|| {
                Error::HypothesisViolation("face image member mismatch".into())
            })?;
            vertex_map[tg.attach_vertex(f, k) as usize] = tg.attach_vertex(img_f, img_k);
        }
    }
    Ok(TildeMap { vertex_map, face_map })
}

/// Sorted edge lookup: `(x, y) -> (index, sign)`.
pub struct EdgeIndex {
    table: Vec<(u32, u32, u32, f64)>,
}

impl EdgeIndex {
    pub fn new(edges: &[(u32, u32)]) -> Self {
        let mut table = Vec::with_capacity(2 * edges.len());
        for (i, &(a, b)) in edges.iter().enumerate() {
            table.push((a, b, i as u32, 1.0));
            table.push((b, a, i as u32, -1.0));
        }
        table.sort_unstable_by_key(|&(a, b, _, _)| (a, b));
        EdgeIndex { table }
    }

    pub fn get(&self, x: u32, y: u32) -> Option<(usize, f64)> {
        self.table
            .binary_search_by_key(&(x, y), |&(a, b, _, _)| (a, b))
            .ok()
            .map(|i| (self.table[i].2 as usize, self.table[i].3))
    }
}

/// `alpha(F)(x, y) = F(alpha^{-1} x, alpha^{-1} y)`, an exact permutation of
/// the value vector.
pub fn apply_map_to_flow(map: &TildeMap, index: &EdgeIndex, flow: &Flow) -> Flow {
    let inv = {
        let mut inv = vec![0u32; map.vertex_map.len()];
        for (v, &img) in map.vertex_map.iter().enumerate() {
            inv[img as usize] = v as u32;
        }
        inv
    };
    let values: Vec<f64> = flow
        .edges
        .iter()
        .map(|&(x, y)| {
            let (px, py) = (inv[x as usize], inv[y as usize]);
            match index.get(px, py) {
                Some((e, sign)) => sign * flow.values[e],
                None => 0.0,
            }
        })
        .collect();
    Flow {
        edges: flow.edges.clone(),
        values,
        source: flow.source.iter().map(|&v| map.vertex_map[v as usize]).collect(),
        target: flow.target.iter().map(|&v| map.vertex_map[v as usize]).collect(),
        q: flow.q,
    }
}

fn negate(flow: &Flow) -> Flow {
    Flow {
        edges: flow.edges.clone(),
        values: flow.values.iter().map(|v| -v).collect(),
        source: flow.target.clone(),
        target: flow.source.clone(),
        q: flow.q,
    }
}

fn combine(flows: &[(f64, &Flow)]) -> Flow {
    let first = flows[0].1;
    let mut values = vec![0.0; first.values.len()];
    for &(c, f) in flows {
        for (v, &x) in values.iter_mut().zip(&f.values) {
            *v += c * x;
        }
    }
    Flow {
        edges: first.edges.clone(),
        values,
        source: first.source.clone(),
        target: first.target.clone(),
        q: first.q,
    }
}

// ---------------------------------------------------------------------------
// Optimal boundary flows and twisting
// ---------------------------------------------------------------------------

/// The minimal-energy unit flow between the attachments of two faces, zero
/// on every other face's attachment edges.
pub fn optimal_boundary_flow(
    sys: &IgsSystem,
    tg: &TildeGraph,
    from_face: usize,
    to_face: usize,
    q: f64,
    opts: &FlowOptions,
) -> Result<Flow> {
    let mut zero_edges = Vec::new();
    for f in 0..sys.faces().len() {
        if f != from_face && f != to_face {
            for k in 0..tg.face_members[f].len() {
                zero_edges.push(tg.attach_edge(f, k));
            }
        }
    }
    solve_flow_on_edges(
        tg.n_vertices,
        &tg.edges,
        &tg.attach_set(from_face),
        &tg.attach_set(to_face),
        q,
        &zero_edges,
        opts,
    )
}

/// Classification of tilde vertices against a lifted reflection partition.
struct PartClass {
    /// 0 = C, 1 = D, 2 = Delta for base vertices; attachments get 3.
    part: Vec<u8>,
    /// Attachment vertices of the two faces the twist keeps.
    kept_attach: Vec<bool>,
}

/// Twist a flow across a separative reflection: keep it on the C side,
/// overlay the reflected copy, and redirect the target face to its mirror
/// image. The hypotheses of the construction are checked and named on
/// failure.
pub fn twist_flow(
    sys: &IgsSystem,
    tg: &TildeGraph,
    index: &EdgeIndex,
    flow: &Flow,
    from_face: usize,
    to_face: usize,
    reflection: &SymbolMap,
) -> Result<(Flow, usize)> {
    let MapKind::Reflection {
        c,
        d,
        delta,
        separative,
    } = &reflection.kind
    else {
        return Err(Error::HypothesisViolation("map is not a reflection".into()));
    };
    if !separative {
        return Err(Error::HypothesisViolation(
            "twisting needs a separative reflection".into(),
        ));
    }
    let map = tilde_map(sys, tg, &reflection.perm)?;
    let alpha_from = map.face_map[from_face];
    let alpha_to = map.face_map[to_face];
    // Hypothesis (1): the twisted pair is disjoint from the original.
    if alpha_from == from_face
        || alpha_from == to_face
        || alpha_to == from_face
        || alpha_to == to_face
    {
        return Err(Error::HypothesisViolation(
            "clause (1): the reflection must move both faces off the pair".into(),
        ));
    }
    // Hypothesis (2): source and mirrored target on one side, target and
    // mirrored source on the other. Sides are checked on the level-1 gluing
    // sides; C and D labels are interchangeable, so normalize to the
    // orientation with the source on the C side.
    let side_of = |face: usize, part: &[SymbolId], dl: &[SymbolId]| -> bool {
        sys.faces()[face]
            .members
            .iter()
            .all(|s| part.contains(s) || dl.contains(s))
    };
    let (cc, dd) = if side_of(from_face, c, delta) && side_of(alpha_to, c, delta)
        && side_of(to_face, d, delta)
        && side_of(alpha_from, d, delta)
    {
        (c.clone(), d.clone())
    } else if side_of(from_face, d, delta)
        && side_of(alpha_to, d, delta)
        && side_of(to_face, c, delta)
        && side_of(alpha_from, c, delta)
    {
        (d.clone(), c.clone())
    } else {
        return Err(Error::HypothesisViolation(
            "clause (2): faces are not separated by the reflection".into(),
        ));
    };

    // Classify base vertices by first escape from the diagonal.
    let n_sym = sys.n_symbols();
    let m = tg.level;
    let mut class = PartClass {
        part: vec![3u8; tg.n_vertices],
        kept_attach: vec![false; tg.n_vertices],
    };
    for v in 0..tg.n_base as u64 {
        let w = Word::decode(v, m, n_sym);
        let mut p = 2u8;
        for &s in w.symbols() {
            if delta.contains(&s) {
                continue;
            }
            p = if cc.contains(&s) { 0 } else { 1 };
            break;
        }
        class.part[v as usize] = p;
    }
    for f in [from_face, alpha_to] {
        for k in 0..tg.face_members[f].len() {
            class.kept_attach[tg.attach_vertex(f, k) as usize] = true;
        }
    }

    let reflected = apply_map_to_flow(&map, index, flow);
    let values: Vec<f64> = tg
        .edges
        .iter()
        .enumerate()
        .map(|(e, &(x, y))| {
            let (px, py) = (class.part[x as usize], class.part[y as usize]);
            if px == 2 && py == 2 {
                flow.values[e]
            } else if px == 0
                || py == 0
                || class.kept_attach[x as usize]
                || class.kept_attach[y as usize]
            {
                flow.values[e] + reflected.values[e]
            } else {
                0.0
            }
        })
        .collect();
    Ok((
        Flow {
            edges: tg.edges.clone(),
            values,
            source: tg.attach_set(from_face),
            target: tg.attach_set(alpha_to),
            q: flow.q,
        },
        alpha_to,
    ))
}

// ---------------------------------------------------------------------------
// Flow bases
// ---------------------------------------------------------------------------

/// A family of unit flows between all ordered pairs of distinct faces.
pub struct FlowBasis {
    pub level: usize,
    pub q: f64,
    pub tilde: TildeGraph,
    /// Flows keyed by ordered `(from, to)` face indices.
    pub flows: BTreeMap<(usize, usize), Flow>,
    /// Max member energy.
    pub energy: f64,
    /// Min antipodal-pair resistance on the plain graph.
    pub min_pair_resistance: f64,
    /// The basis-energy witness: `energy / min_pair_resistance`.
    pub energy_ratio: f64,
}

impl FlowBasis {
    pub fn flow(&self, from: usize, to: usize) -> &Flow {
        &self.flows[&(from, to)]
    }

    /// Attachment value `F_{[from->to]}(v_L, v)` for the k-th member of a
    /// face, taken on either end of the flow.
    pub fn attach_value(&self, from: usize, to: usize, face: usize, k: usize) -> f64 {
        let e = self.tilde.attach_edge(face, k);
        self.flows[&(from, to)].values[e]
    }
}

/// Group closure of a set of symbol permutations.
fn close_group(generators: &[Vec<SymbolId>], n: usize) -> Vec<Vec<SymbolId>> {
    let mut group: std::collections::BTreeSet<Vec<SymbolId>> =
        std::collections::BTreeSet::new();
    group.insert((0..n as SymbolId).collect());
    for g in generators {
        group.insert(g.clone());
    }
    loop {
        let members: Vec<Vec<SymbolId>> = group.iter().cloned().collect();
        let before = group.len();
        for x in &members {
            for y in &members {
                group.insert(y.iter().map(|&i| x[i as usize]).collect());
            }
        }
        if group.len() == before {
            break;
        }
    }
    group.into_iter().collect()
}

/// Average a flow over the subgroup stabilizing its unordered face pair
/// (reversing elements contribute negated); exact optima are fixed points,
/// so this only projects numerical noise onto the symmetric subspace.
fn symmetrize_over_stabilizer(
    sys: &IgsSystem,
    tg: &TildeGraph,
    index: &EdgeIndex,
    group: &[Vec<SymbolId>],
    flow: &Flow,
    from_face: usize,
    to_face: usize,
) -> Result<Flow> {
    let mut terms: Vec<Flow> = Vec::new();
    for perm in group {
        let map = tilde_map(sys, tg, perm)?;
        let (fi, ti) = (map.face_map[from_face], map.face_map[to_face]);
        if (fi, ti) == (from_face, to_face) {
            terms.push(apply_map_to_flow(&map, index, flow));
        } else if (fi, ti) == (to_face, from_face) {
            terms.push(negate(&apply_map_to_flow(&map, index, flow)));
        }
    }
    let weight = 1.0 / terms.len() as f64;
    let refs: Vec<(f64, &Flow)> = terms.iter().map(|f| (weight, f)).collect();
    let mut avg = combine(&refs);
    avg.source = flow.source.clone();
    avg.target = flow.target.clone();
    Ok(avg)
}

/// Build a flow basis for the structured classes. Unsupported systems error.
pub fn build_flow_basis(
    sys: &IgsSystem,
    m: usize,
    q: f64,
    opts: &FlowOptions,
) -> Result<FlowBasis> {
    let g = build_graph(sys, m, crate::graph::DEFAULT_VERTEX_BUDGET)?;
    let tg = build_tilde_graph(sys, &g);
    let index = EdgeIndex::new(&tg.edges);

    let mut flows: BTreeMap<(usize, usize), Flow> = BTreeMap::new();
    match sys.class() {
        SystemClass::Cubical { dim, side, coords, .. } => {
            let dim = *dim;
            let side = *side;
            // Symbol permutations of the hyperoctahedral generators.
            let perm_of = |f: &dyn Fn(&[u32]) -> Vec<u32>| -> Result<Vec<SymbolId>> {
                coords
                    .iter()
                    .map(|(cv, s)| {
                        let image = (f(cv), *s);
                        coords
                            .iter()
                            .position(|x| *x == image)
                            .map(|i| i as SymbolId)
                            .ok_or_else(|| {
                                Error::UnsupportedClass(
                                    "cell set is not closed under its symmetries".into(),
                                )
                            })
                    })
                    .collect()
            };
            let mut generators: Vec<Vec<SymbolId>> = Vec::new();
            for j in 0..dim {
                generators.push(perm_of(&move |c: &[u32]| {
                    let mut v = c.to_vec();
                    v[j] = side + 1 - c[j];
                    v
                })?);
            }
            for j in 0..dim {
                for k in j + 1..dim {
                    generators.push(perm_of(&move |c: &[u32]| {
                        let mut v = c.to_vec();
                        v[j] = c[k];
                        v[k] = c[j];
                        v
                    })?);
                }
            }
            let group = close_group(&generators, sys.n_symbols());

            let face_pm: Vec<(usize, usize)> = (0..dim)
                .map(|t| (sys.face_of(t, Orientation::Plus), sys.face_of(t, Orientation::Minus)))
                .collect();

            // One optimal flow along the first axis, symmetrized.
            let raw = optimal_boundary_flow(sys, &tg, face_pm[0].0, face_pm[0].1, q, opts)?;
            let base =
                symmetrize_over_stabilizer(sys, &tg, &index, &group, &raw, face_pm[0].0, face_pm[0].1)?;

            // Axis flows by exact diagonal images; reversals by negation.
            let mut axis_flow: Vec<Flow> = Vec::with_capacity(dim);
            axis_flow.push(base);
            for j in 1..dim {
                let diag = perm_of(&move |c: &[u32]| {
                    let mut v = c.to_vec();
                    v[0] = c[j];
                    v[j] = c[0];
                    v
                })?;
                let map = tilde_map(sys, &tg, &diag)?;
                axis_flow.push(apply_map_to_flow(&map, &index, &axis_flow[0]));
            }
            for (t, f) in axis_flow.iter().enumerate() {
                flows.insert((face_pm[t].0, face_pm[t].1), f.clone());
                flows.insert((face_pm[t].1, face_pm[t].0), negate(f));
            }

            // Cross flows by twisting across the diagonal reflections.
            for i in 0..dim {
                for j in 0..dim {
                    if i == j {
                        continue;
                    }
                    let (lo, hi) = (i.min(j), i.max(j));
                    let mk_refl = |anti: bool| -> Result<SymbolMap> {
                        let perm = perm_of(&move |c: &[u32]| {
                            let mut v = c.to_vec();
                            if anti {
                                v[lo] = side + 1 - c[hi];
                                v[hi] = side + 1 - c[lo];
                            } else {
                                v[lo] = c[hi];
                                v[hi] = c[lo];
                            }
                            v
                        })?;
                        let mut cset = Vec::new();
                        let mut dset = Vec::new();
                        let mut dl = Vec::new();
                        for (s, (cv, _)) in coords.iter().enumerate() {
                            let (x, y) = if anti {
                                (cv[lo] + cv[hi], side + 1)
                            } else {
                                (cv[lo], cv[hi])
                            };
                            match x.cmp(&y) {
                                std::cmp::Ordering::Less => cset.push(s as SymbolId),
                                std::cmp::Ordering::Greater => dset.push(s as SymbolId),
                                std::cmp::Ordering::Equal => dl.push(s as SymbolId),
                            }
                        }
                        Ok(SymbolMap {
                            perm,
                            kind: MapKind::Reflection {
                                c: cset,
                                d: dset,
                                delta: dl,
                                separative: true,
                            },
                        })
                    };
                    for (star, from) in [(Orientation::Plus, face_pm[i].0), (Orientation::Minus, face_pm[i].1)] {
                        let to = match star {
                            Orientation::Plus => face_pm[i].1,
                            Orientation::Minus => face_pm[i].0,
                        };
                        let f = flows[&(from, to)].clone();
                        // Diagonal sends (t_i, *) to (t_j, *): the twisted
                        // target is (t_j, -*); the anti-diagonal the other
                        // way around.
                        let (tw, tgt) = twist_flow(sys, &tg, &index, &f, from, to, &mk_refl(false)?)?;
                        flows.insert((from, tgt), tw);
                        let (tw, tgt) = twist_flow(sys, &tg, &index, &f, from, to, &mk_refl(true)?)?;
                        flows.insert((from, tgt), tw);
                    }
                }
            }
        }
        SystemClass::Gasket => {
            let rot: Vec<SymbolId> = vec![1, 2, 0];
            let f01 = optimal_boundary_flow(
                sys,
                &tg,
                sys.face_of(0, Orientation::Minus),
                sys.face_of(0, Orientation::Plus),
                q,
                opts,
            )?;
            // Corner faces {0}, {1}, {2} are faces 0, 1, 2 in sorted order.
            let rmap = tilde_map(sys, &tg, &rot)?;
            let f12 = apply_map_to_flow(&rmap, &index, &f01);
            let f20 = apply_map_to_flow(&rmap, &index, &f12);
            let face0 = sys.face_of(0, Orientation::Minus);
            let face1 = sys.face_of(0, Orientation::Plus);
            let face2 = sys.face_of(1, Orientation::Plus);
            flows.insert((face0, face1), f01.clone());
            flows.insert((face1, face0), negate(&f01));
            flows.insert((face1, face2), f12.clone());
            flows.insert((face2, face1), negate(&f12));
            flows.insert((face2, face0), f20.clone());
            flows.insert((face0, face2), negate(&f20));
        }
        SystemClass::Pentagon => {
            // Faces L_i = {i+2, i+3}; rotations and reflections act as
            // i -> i+k and j -> 2i-j on both symbols and face labels.
            let rot = |k: u8| -> Vec<SymbolId> { (0..5u8).map(|j| (j + k) % 5).collect() };
            let eta = |i: u8| -> Vec<SymbolId> { (0..5u8).map(|j| (2 * i + 10 - j) % 5).collect() };
            let face_l: Vec<usize> = (0..5u8)
                .map(|i| {
                    let mut side = vec![(i + 2) % 5, (i + 3) % 5];
                    side.sort_unstable();
                    sys.faces().iter().position(|f| f.members == side).unwrap()
                })
                .collect();

            // Raw optimal flow L_0 -> L_2 and its exact dihedral images.
            let f02 = optimal_boundary_flow(sys, &tg, face_l[0], face_l[2], q, opts)?;
            let mut plus2: Vec<Flow> = Vec::with_capacity(5); // F_{i,+2}
            for i in 0..5u8 {
                let map = tilde_map(sys, &tg, &rot(i))?;
                plus2.push(apply_map_to_flow(&map, &index, &f02));
            }
            let mut minus2: Vec<Flow> = Vec::with_capacity(5); // F_{i,-2}
            for i in 0..5usize {
                let map = tilde_map(sys, &tg, &eta(i as u8))?;
                minus2.push(apply_map_to_flow(&map, &index, &plus2[i]));
            }
            // Symmetrized outflow F_i from L_i to both opposite faces.
            let sym: Vec<Flow> = (0..5)
                .map(|i| combine(&[(0.5, &plus2[i]), (0.5, &minus2[i])]))
                .collect();

            // Part classification for the splice formulas.
            let part_tables: Vec<Vec<u8>> = (0..5u8)
                .map(|i| {
                    // eta_i partition: C = {i-1, i-2}, D = {i+1, i+2}.
                    let cset = [(i + 4) % 5, (i + 3) % 5];
                    let mut part = vec![3u8; tg.n_vertices];
                    for v in 0..tg.n_base as u64 {
                        let w = Word::decode(v, tg.level, 5);
                        let mut p = 2u8;
                        for &s in w.symbols() {
                            if s == i {
                                continue;
                            }
                            p = if cset.contains(&s) { 0 } else { 1 };
                            break;
                        }
                        part[v as usize] = p;
                    }
                    part
                })
                .collect();
            let attach_of = |fidx: usize| -> Vec<bool> {
                let mut mark = vec![false; tg.n_vertices];
                for k in 0..tg.face_members[fidx].len() {
                    mark[tg.attach_vertex(fidx, k) as usize] = true;
                }
                mark
            };

            // Splice: keep F on one side of a reflection, reflect-negate on
            // the other; `keep_c` selects which side is kept.
            let splice = |f: &Flow,
                          refl: u8,
                          keep_c: bool,
                          kept_attach: &[bool],
                          source: Vec<u32>,
                          target: Vec<u32>|
             -> Result<Flow> {
                let map = tilde_map(sys, &tg, &eta(refl))?;
                let reflected = negate(&apply_map_to_flow(&map, &index, f));
                let part = &part_tables[refl as usize];
                let values: Vec<f64> = tg
                    .edges
                    .iter()
                    .enumerate()
                    .map(|(e, &(x, y))| {
                        let keep = |v: u32| -> bool {
                            kept_attach[v as usize]
                                || part[v as usize] == u8::from(!keep_c)
                        };
                        if keep(x) || keep(y) {
                            f.values[e]
                        } else {
                            reflected.values[e]
                        }
                    })
                    .collect();
                Ok(Flow {
                    edges: tg.edges.clone(),
                    values,
                    source,
                    target,
                    q,
                })
            };

            for i in 0..5usize {
                let iu = i as u8;
                // F_{i,i-2}: splice F_i along eta_{i-1}, keeping the C side
                // (C_{eta_{i-1}} contains L_i) plus the attachments of
                // L_{i+1}.
                let f_im2 = splice(
                    &sym[i],
                    (iu + 4) % 5,
                    true,
                    &attach_of(face_l[(i + 1) % 5]),
                    tg.attach_set(face_l[i]),
                    tg.attach_set(face_l[(i + 3) % 5]),
                )?;
                // F_{i,i-1}: splice F_{i,i-2} along eta_{i-3}, keeping the
                // D side plus the attachments of L_i.
                let f_im1 = splice(
                    &f_im2,
                    (iu + 2) % 5,
                    false,
                    &attach_of(face_l[i]),
                    tg.attach_set(face_l[i]),
                    tg.attach_set(face_l[(i + 4) % 5]),
                )?;
                // Mirrors across eta_i.
                let map_i = tilde_map(sys, &tg, &eta(iu))?;
                let f_ip2 = apply_map_to_flow(&map_i, &index, &f_im2);
                let f_ip1 = apply_map_to_flow(&map_i, &index, &f_im1);
                flows.insert((face_l[i], face_l[(i + 3) % 5]), f_im2);
                flows.insert((face_l[i], face_l[(i + 4) % 5]), f_im1);
                flows.insert((face_l[i], face_l[(i + 2) % 5]), f_ip2);
                flows.insert((face_l[i], face_l[(i + 1) % 5]), f_ip1);
            }
        }
        _ => {
            return Err(Error::UnsupportedClass(format!(
                "no flow basis construction for `{}`",
                sys.name()
            )))
        }
    }

    // Energy and the witness ratio against the cheapest antipodal pair.
    let energy = flows.values().map(Flow::energy).fold(0.0f64, f64::max);
    let mut min_pair_resistance = f64::INFINITY;
    let plain_edges: Arc<Vec<(u32, u32)>> =
        Arc::new(g.edges().iter().map(|e| (e.from, e.to)).collect());
    for (fa, fb) in crate::system::antipodal_face_pairs(sys) {
        let a = &tg.face_members[fa];
        let b = &tg.face_members[fb];
        let f = solve_flow_on_edges(g.n_vertices(), &plain_edges, a, b, q, &[], opts)?;
        min_pair_resistance = min_pair_resistance.min(f.energy());
    }

    Ok(FlowBasis {
        level: m,
        q,
        tilde: tg,
        flows,
        energy,
        min_pair_resistance,
        energy_ratio: energy / min_pair_resistance,
    })
}

/// Numeric verification of the four basis conditions.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BasisReport {
    /// Worst unit-flow defect over the members.
    pub fb1_residual: f64,
    /// Worst value on an uninvolved attachment edge.
    pub fb2_residual: f64,
    /// Worst mismatch of attachment values across partners.
    pub fb3_residual: f64,
    /// Worst failure of the flip/reversal identities.
    pub fb4_residual: f64,
    /// Worst interior divergence.
    pub divergence_residual: f64,
    /// Scale used for the relative residuals.
    pub max_abs: f64,
    pub energy: f64,
    pub energy_ratio: f64,
}

impl BasisReport {
    pub fn max_residual(&self) -> f64 {
        self.fb1_residual
            .max(self.fb2_residual)
            .max(self.fb3_residual)
            .max(self.fb4_residual)
            .max(self.divergence_residual)
    }
}

/// Check FB1-FB4 and interior divergences of a basis, relative to the
/// largest flow value.
pub fn verify_flow_basis(sys: &IgsSystem, basis: &FlowBasis) -> Result<BasisReport> {
    let tg = &basis.tilde;
    let nf = sys.faces().len();
    let max_abs = basis
        .flows
        .values()
        .flat_map(|f| f.values.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-30);

    // FB1: one unit flow per ordered pair with the right terminals.
    let mut fb1 = 0.0f64;
    let mut divres = 0.0f64;
    for from in 0..nf {
        for to in 0..nf {
            if from == to {
                continue;
            }
            let flow = basis.flows.get(&(from, to)).ok_or_else(|| {
                Error::VerificationFailure(format!("missing flow for pair ({from}, {to})"))
            })?;
            let rep = verify_flow(flow, tg.n_vertices);
            fb1 = fb1.max(rep.unit_defect);
            divres = divres.max(rep.max_interior_div);
        }
    }

    // FB2: zero on uninvolved attachments.
    let mut fb2 = 0.0f64;
    for (&(from, to), flow) in &basis.flows {
        for f in 0..nf {
            if f == from || f == to {
                continue;
            }
            for k in 0..tg.face_members[f].len() {
                fb2 = fb2.max(flow.values[tg.attach_edge(f, k)].abs());
            }
        }
    }

    // FB3: attachment values at a shared face agree across partners.
    let mut fb3 = 0.0f64;
    for l in 0..nf {
        for k in 0..tg.face_members[l].len() {
            let e = tg.attach_edge(l, k);
            let outs: Vec<f64> = (0..nf)
                .filter(|&x| x != l)
                .map(|x| basis.flows[&(l, x)].values[e])
                .collect();
            let ins: Vec<f64> = (0..nf)
                .filter(|&x| x != l)
                .map(|x| basis.flows[&(x, l)].values[e])
                .collect();
            for w in outs.windows(2) {
                fb3 = fb3.max((w[0] - w[1]).abs());
            }
            for w in ins.windows(2) {
                fb3 = fb3.max((w[0] - w[1]).abs());
            }
        }
    }

    // FB4: flip equivariance and reversal between opposite faces.
    let mut fb4 = 0.0f64;
    let flips = crate::symmetry::flippings_for_all_types(sys)?;
    for t in 0..sys.n_types() {
        for star in [Orientation::Plus, Orientation::Minus] {
            let l1 = sys.face_of(t, star);
            let l2 = sys.face_of(t, star.flip());
            let flow12 = &basis.flows[&(l1, l2)];
            let flow21 = &basis.flows[&(l2, l1)];
            let lift = LiftedSymmetry {
                perm: flips[t].clone(),
                level: tg.level,
            };
            for (k, &v) in tg.face_members[l1].iter().enumerate() {
                let e1 = tg.attach_edge(l1, k);
                // F(v_L1, v) = F(eta(v), eta(v)_L2): the right side is the
                // negated stored value on (eta(v)_L2, eta(v)).
                let img = lift.apply_vertex(v as u64, sys.n_symbols()) as u32;
                let kk = tg.member_index(l2, img).ok_or_else(|| {
                    Error::VerificationFailure("flip does not map face members".into())
                })?;
                let e2 = tg.attach_edge(l2, kk);
                fb4 = fb4.max((flow12.values[e1] + flow12.values[e2]).abs());
                // Reversal: F_{[L1->L2]}(v_L1, v) = F_{[L2->L1]}(v, v_L1).
                fb4 = fb4.max((flow12.values[e1] + flow21.values[e1]).abs());
            }
        }
    }

    Ok(BasisReport {
        fb1_residual: fb1 / max_abs,
        fb2_residual: fb2 / max_abs,
        fb3_residual: fb3 / max_abs,
        fb4_residual: fb4 / max_abs,
        divergence_residual: divres / max_abs,
        max_abs,
        energy: basis.energy,
        energy_ratio: basis.energy_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{gasket, interval, pentagon, pillow, sierpinski_carpet};

    #[test]
    fn tilde_graph_attaches_the_right_counts() {
        let sys = sierpinski_carpet();
        let g = build_graph(&sys, 1, 1 << 20).unwrap();
        let tg = build_tilde_graph(&sys, &g);
        // 4 faces x 3 members = 12 attachments.
        assert_eq!(tg.n_vertices - tg.n_base, 12);
        assert_eq!(tg.edges.len() - tg.n_base_edges, 12);

        let sysi = interval(3).unwrap();
        let gi = build_graph(&sysi, 1, 1 << 20).unwrap();
        let ti = build_tilde_graph(&sysi, &gi);
        assert_eq!(ti.n_vertices - ti.n_base, 2);
    }

    #[test]
    fn interval_boundary_flow_energy() {
        let sys = interval(3).unwrap();
        let g = build_graph(&sys, 1, 1 << 20).unwrap();
        let tg = build_tilde_graph(&sys, &g);
        let f = optimal_boundary_flow(&sys, &tg, 0, 1, 2.0, &FlowOptions::default()).unwrap();
        // Unique path 0-1-2 plus two attachment edges: 4 unit edges.
        assert!((f.energy() - 4.0).abs() < 1e-10, "{}", f.energy());
    }

    #[test]
    fn carpet_optimal_flow_is_flip_antisymmetric() {
        let sys = sierpinski_carpet();
        let g = build_graph(&sys, 1, 1 << 20).unwrap();
        let tg = build_tilde_graph(&sys, &g);
        let index = EdgeIndex::new(&tg.edges);
        let h = sys.type_by_name("h").unwrap();
        let from = sys.face_of(h, Orientation::Minus);
        let to = sys.face_of(h, Orientation::Plus);
        let f = optimal_boundary_flow(&sys, &tg, from, to, 2.0, &FlowOptions::default()).unwrap();
        // eta_h maps the flow to its own reversal: -F = eta_h(F).
        let flips = crate::symmetry::flippings_for_all_types(&sys).unwrap();
        let map = tilde_map(&sys, &tg, &flips[h]).unwrap();
        let reflected = apply_map_to_flow(&map, &index, &f);
        for (a, b) in f.values.iter().zip(&reflected.values) {
            assert!((a + b).abs() < 1e-9, "flip antisymmetry fails: {a} vs {b}");
        }
    }

    #[test]
    fn basis_conditions_hold_on_the_small_classes() {
        for (sys, m) in [
            (sierpinski_carpet(), 1usize),
            (gasket(), 1),
            (gasket(), 2),
            (pentagon(), 1),
            (pillow(), 1),
            (interval(3).unwrap(), 1),
        ] {
            let basis = build_flow_basis(&sys, m, 2.0, &FlowOptions::default()).unwrap();
            let nf = sys.faces().len();
            assert_eq!(basis.flows.len(), nf * (nf - 1), "{} m={m}", sys.name());
            let report = verify_flow_basis(&sys, &basis).unwrap();
            assert!(
                report.max_residual() < 1e-8,
                "{} m={m}: {report:?}",
                sys.name()
            );
        }
    }

    #[test]
    fn carpet_basis_has_twelve_flows_and_gasket_six() {
        let basis = build_flow_basis(&sierpinski_carpet(), 1, 2.0, &FlowOptions::default())
            .unwrap();
        assert_eq!(basis.flows.len(), 12);
        let basis = build_flow_basis(&gasket(), 1, 2.0, &FlowOptions::default()).unwrap();
        assert_eq!(basis.flows.len(), 6);
        // All gasket pair flows have equal energy by symmetry.
        let energies: Vec<f64> = basis.flows.values().map(Flow::energy).collect();
        for e in &energies {
            assert!((e - energies[0]).abs() < 1e-12);
        }
        let basis = build_flow_basis(&pentagon(), 1, 2.0, &FlowOptions::default()).unwrap();
        assert_eq!(basis.flows.len(), 20);
    }

    #[test]
    fn twist_rejects_a_fixing_reflection() {
        let sys = sierpinski_carpet();
        let g = build_graph(&sys, 1, 1 << 20).unwrap();
        let tg = build_tilde_graph(&sys, &g);
        let index = EdgeIndex::new(&tg.edges);
        let h = sys.type_by_name("h").unwrap();
        let from = sys.face_of(h, Orientation::Minus);
        let to = sys.face_of(h, Orientation::Plus);
        let f = optimal_boundary_flow(&sys, &tg, from, to, 2.0, &FlowOptions::default()).unwrap();
        // eta_h itself fixes the pair {L1, L2}: hypothesis (1) fails.
        let syms = crate::symmetry::find_symmetries(&sys, 1 << 20).unwrap();
        let eta_h_refl = syms
            .reflections
            .iter()
            .find(|r| r.perm == syms.flipping(h).unwrap().perm)
            .expect("eta_h is a reflection");
        let err = twist_flow(&sys, &tg, &index, &f, from, to, eta_h_refl);
        assert!(matches!(err, Err(Error::HypothesisViolation(_))));
    }

    #[test]
    fn pentagon_basis_energy_within_the_joining_chain() {
        let basis = build_flow_basis(&pentagon(), 1, 2.0, &FlowOptions::default()).unwrap();
        // Energy ratio against the cheapest opposite-face resistance stays
        // within the 4 * C(join) chain, with C(join) = 3 deg^{1/(p-1)}.
        let bound = 4.0 * 3.0 * 2f64.powf(1.0 / (2.0 - 1.0));
        assert!(
            basis.energy_ratio <= bound,
            "ratio {} above {bound}",
            basis.energy_ratio
        );
    }
}
