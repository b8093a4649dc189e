//! Replacement graphs: recursive materialization, the O(m) edge oracle,
//! boundary faces, and shortest-path queries (hop count and vertex-weighted).

use crate::error::{Error, Result};
use crate::system::{IgsSystem, Orientation, TypeId};
use crate::words::Word;

/// A materialized level-`m` replacement graph.
///
/// Vertices are packed words (base `|S|`, first symbol most significant), so
/// vertex order equals lexicographic word order. Each unordered edge is
/// stored once, oriented as constructed, with its type and meet level.
#[derive(Debug, Clone)]
pub struct ReplacementGraph {
    level: usize,
    n_symbols: usize,
    n_vertices: usize,
    edges: Vec<GraphEdge>,
    /// CSR offsets into `incidence`, one slice per vertex.
    offsets: Vec<u32>,
    /// `(neighbor, edge index)` sorted by neighbor within each slice.
    incidence: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphEdge {
    pub from: u32,
    pub to: u32,
    pub ty: u8,
    /// Meet level `|w ∧ v|` of the endpoints (1-based).
    pub meet: u8,
}

impl ReplacementGraph {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    /// Neighbors of `v` as `(neighbor, edge index)`, sorted by neighbor.
    pub fn neighbors(&self, v: u32) -> &[(u32, u32)] {
        let lo = self.offsets[v as usize] as usize;
        let hi = self.offsets[v as usize + 1] as usize;
        &self.incidence[lo..hi]
    }

    pub fn degree(&self, v: u32) -> usize {
        self.neighbors(v).len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n_vertices as u32)
            .map(|v| self.degree(v))
            .max()
            .unwrap_or(0)
    }

    pub fn word(&self, v: u32) -> Word {
        Word::decode(v as u64, self.level, self.n_symbols)
    }

    pub fn vertex(&self, w: &Word) -> u32 {
        debug_assert_eq!(w.level(), self.level);
        w.encode(self.n_symbols) as u32
    }
}

/// Default cap on materialized vertices.
pub const DEFAULT_VERTEX_BUDGET: usize = 10_000_000;

/// Build `G_m` recursively: level-1 copies inside every cell plus one glued
/// edge per gluing pair across every coarse edge.
pub fn build_graph(sys: &IgsSystem, m: usize, vertex_budget: usize) -> Result<ReplacementGraph> {
    assert!(m >= 1);
    let s = sys.n_symbols();
    let mut n_vertices = 1usize;
    for _ in 0..m {
        n_vertices = n_vertices
            .checked_mul(s)
            .filter(|&n| n <= vertex_budget)
            .ok_or_else(|| {
                Error::BudgetExceeded(format!(
                    "{}^{} vertices exceed the budget of {}",
                    s, m, vertex_budget
                ))
            })?;
    }

    let mut edges: Vec<GraphEdge> = sys
        .edges()
        .iter()
        .map(|e| GraphEdge {
            from: e.from as u32,
            to: e.to as u32,
            ty: e.ty as u8,
            meet: 1,
        })
        .collect();

    for level in 2..=m {
        let cells = s.pow(level as u32 - 1) as u32;
        let mut next =
            Vec::with_capacity(cells as usize * sys.edges().len() + edges.len() * 4);
        // Type (1): a copy of the level-1 graph inside every cell.
        for cell in 0..cells {
            let base = cell * s as u32;
            for e in sys.edges() {
                next.push(GraphEdge {
                    from: base + e.from as u32,
                    to: base + e.to as u32,
                    ty: e.ty as u8,
                    meet: level as u8,
                });
            }
        }
        // Type (2): for every coarse edge of type t, one edge per gluing
        // pair of I_t; the meet level is inherited.
        for e in &edges {
            for &(a, b) in sys.gluing(e.ty as usize) {
                next.push(GraphEdge {
                    from: e.from * s as u32 + a as u32,
                    to: e.to * s as u32 + b as u32,
                    ty: e.ty,
                    meet: e.meet,
                });
            }
        }
        edges = next;
    }

    edges.sort_by_key(|e| (e.from, e.to));

    let mut degree = vec![0u32; n_vertices + 1];
    for e in &edges {
        degree[e.from as usize + 1] += 1;
        degree[e.to as usize + 1] += 1;
    }
    let mut offsets = degree;
    for i in 1..offsets.len() {
        offsets[i] += offsets[i - 1];
    }
    let mut cursor = offsets.clone();
    let mut incidence = vec![(0u32, 0u32); 2 * edges.len()];
    for (i, e) in edges.iter().enumerate() {
        incidence[cursor[e.from as usize] as usize] = (e.to, i as u32);
        cursor[e.from as usize] += 1;
        incidence[cursor[e.to as usize] as usize] = (e.from, i as u32);
        cursor[e.to as usize] += 1;
    }
    for v in 0..n_vertices {
        incidence[offsets[v] as usize..offsets[v + 1] as usize].sort_unstable();
    }

    Ok(ReplacementGraph {
        level: m,
        n_symbols: s,
        n_vertices,
        edges,
        offsets,
        incidence,
    })
}

/// O(m) edge test straight from the characterization of replacement edges:
/// `{w, v}` is an edge iff their symbols at the meet level form a level-1
/// edge and every later coordinate pair lies in that type's gluing rule with
/// matching orientation. Returns the type and the orientation seen from `w`.
pub fn edge_query(sys: &IgsSystem, w: &Word, v: &Word) -> Result<Option<(TypeId, Orientation)>> {
    let k = crate::words::word_meet(w, v)? - 1; // 0-based index
    let (t, orient) = match sys.level_one_edge(w.symbol(k), v.symbol(k)) {
        Some(x) => x,
        None => return Ok(None),
    };
    for i in k + 1..w.level() {
        let pair_ok = match orient {
            Orientation::Plus => sys.gluing(t).contains(&(w.symbol(i), v.symbol(i))),
            Orientation::Minus => sys.gluing(t).contains(&(v.symbol(i), w.symbol(i))),
        };
        if !pair_ok {
            return Ok(None);
        }
    }
    Ok(Some((t, orient)))
}

/// The boundary face `I_{t,*}^{(m)}`: all words with every coordinate in the
/// gluing side, as sorted packed vertices.
pub fn boundary_set(sys: &IgsSystem, m: usize, t: TypeId, star: Orientation) -> Vec<u32> {
    let side = sys.glue_side(t, star);
    let mut out = vec![0u64];
    for _ in 0..m {
        let mut next = Vec::with_capacity(out.len() * side.len());
        for &prefix in &out {
            for &s in side {
                next.push(prefix * sys.n_symbols() as u64 + s as u64);
            }
        }
        out = next;
    }
    out.into_iter().map(|x| x as u32).collect()
}

/// Union of all boundary faces of `G_m`, sorted and deduplicated.
pub fn full_boundary(sys: &IgsSystem, m: usize) -> Vec<u32> {
    let mut out = Vec::new();
    for f in sys.faces() {
        let (t, star) = f.aliases[0];
        out.extend(boundary_set(sys, m, t, star));
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Shortest-path answer with a witness.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    /// Hop count for the unweighted query, weighted length (both endpoints
    /// charged) for the weighted one.
    pub dist: f64,
    pub path: Vec<u32>,
}

/// Multi-source BFS distances from `sources`; `u32::MAX` marks unreachable.
pub fn bfs_distances(g: &ReplacementGraph, sources: &[u32]) -> Vec<u32> {
    let mut dist = vec![u32::MAX; g.n_vertices()];
    let mut queue = std::collections::VecDeque::new();
    let mut sorted = sources.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &s in &sorted {
        dist[s as usize] = 0;
        queue.push_back(s);
    }
    while let Some(v) = queue.pop_front() {
        let d = dist[v as usize];
        for &(nb, _) in g.neighbors(v) {
            if dist[nb as usize] == u32::MAX {
                dist[nb as usize] = d + 1;
                queue.push_back(nb);
            }
        }
    }
    dist
}

/// Unweighted set-to-set distance with a witness path.
pub fn bfs_path(g: &ReplacementGraph, sources: &[u32], targets: &[u32]) -> Result<PathResult> {
    assert!(!sources.is_empty() && !targets.is_empty());
    let mut target_mark = vec![false; g.n_vertices()];
    for &t in targets {
        target_mark[t as usize] = true;
    }
    let mut dist = vec![u32::MAX; g.n_vertices()];
    let mut parent = vec![u32::MAX; g.n_vertices()];
    let mut queue = std::collections::VecDeque::new();
    let mut sorted = sources.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &s in &sorted {
        dist[s as usize] = 0;
        queue.push_back(s);
        if target_mark[s as usize] {
            return Ok(PathResult {
                dist: 0.0,
                path: vec![s],
            });
        }
    }
    while let Some(v) = queue.pop_front() {
        for &(nb, _) in g.neighbors(v) {
            if dist[nb as usize] == u32::MAX {
                dist[nb as usize] = dist[v as usize] + 1;
                parent[nb as usize] = v;
                if target_mark[nb as usize] {
                    let mut path = vec![nb];
                    let mut cur = nb;
                    while parent[cur as usize] != u32::MAX {
                        cur = parent[cur as usize];
                        path.push(cur);
                    }
                    path.reverse();
                    return Ok(PathResult {
                        dist: (path.len() - 1) as f64,
                        path,
                    });
                }
                queue.push_back(nb);
            }
        }
    }
    Err(Error::Disconnected(
        "no path between the given sets".into(),
    ))
}

/// Vertex-weighted set-to-set shortest path. The length of a path charges
/// every vertex on it, endpoints included. Deterministic tie-breaking:
/// smaller distance, then fewer hops, then smaller vertex index.
pub fn weighted_path(
    g: &ReplacementGraph,
    sources: &[u32],
    targets: &[u32],
    rho: &[f64],
) -> Result<PathResult> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    #[derive(PartialEq)]
    struct Key(f64, u32, u32); // dist, hops, vertex
    impl Eq for Key {}
    impl PartialOrd for Key {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Key {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0
                .total_cmp(&other.0)
                .then(self.1.cmp(&other.1))
                .then(self.2.cmp(&other.2))
        }
    }

    assert_eq!(rho.len(), g.n_vertices());
    let mut target_mark = vec![false; g.n_vertices()];
    for &t in targets {
        target_mark[t as usize] = true;
    }
    let mut dist = vec![f64::INFINITY; g.n_vertices()];
    let mut hops = vec![u32::MAX; g.n_vertices()];
    let mut parent = vec![u32::MAX; g.n_vertices()];
    let mut done = vec![false; g.n_vertices()];
    let mut heap: BinaryHeap<Reverse<Key>> = BinaryHeap::new();
    let mut sorted = sources.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &s in &sorted {
        dist[s as usize] = rho[s as usize];
        hops[s as usize] = 0;
        heap.push(Reverse(Key(dist[s as usize], 0, s)));
    }
    while let Some(Reverse(Key(d, h, v))) = heap.pop() {
        if done[v as usize] {
            continue;
        }
        done[v as usize] = true;
        if target_mark[v as usize] {
            let mut path = vec![v];
            let mut cur = v;
            while parent[cur as usize] != u32::MAX {
                cur = parent[cur as usize];
                path.push(cur);
            }
            path.reverse();
            return Ok(PathResult { dist: d, path });
        }
        for &(nb, _) in g.neighbors(v) {
            if done[nb as usize] {
                continue;
            }
            let nd = d + rho[nb as usize];
            let better = nd < dist[nb as usize]
                || (nd == dist[nb as usize] && h + 1 < hops[nb as usize])
                || (nd == dist[nb as usize] && h + 1 == hops[nb as usize] && v < parent[nb as usize]);
            if better {
                dist[nb as usize] = nd;
                hops[nb as usize] = h + 1;
                parent[nb as usize] = v;
                heap.push(Reverse(Key(nd, h + 1, nb)));
            }
        }
    }
    Err(Error::Disconnected(
        "no path between the given sets".into(),
    ))
}

/// Combined distance query: BFS hops without weights, charged vertex
/// weights otherwise.
pub fn graph_distance(
    g: &ReplacementGraph,
    sources: &[u32],
    targets: &[u32],
    weights: Option<&[f64]>,
) -> Result<PathResult> {
    match weights {
        None => bfs_path(g, sources, targets),
        Some(rho) => weighted_path(g, sources, targets, rho),
    }
}

/// Graph diameter. Exact by all-pairs BFS up to `exact_budget` vertices;
/// beyond that a double-sweep lower bound is returned and flagged.
pub fn diameter(g: &ReplacementGraph, exact_budget: usize) -> (usize, bool) {
    let eccentricity = |v: u32| -> (usize, u32) {
        let dist = bfs_distances(g, &[v]);
        let mut best = (0usize, v);
        for (i, &d) in dist.iter().enumerate() {
            if d != u32::MAX && (d as usize) > best.0 {
                best = (d as usize, i as u32);
            }
        }
        best
    };
    if g.n_vertices() <= exact_budget {
        let mut best = 0;
        for v in 0..g.n_vertices() as u32 {
            best = best.max(eccentricity(v).0);
        }
        (best, true)
    } else {
        let (_, far) = eccentricity(0);
        let (d, _) = eccentricity(far);
        (d, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{gasket, interval, pentagon, sierpinski_carpet};

    #[test]
    fn carpet_vertex_and_edge_counts() {
        let sys = sierpinski_carpet();
        let g1 = build_graph(&sys, 1, 1 << 20).unwrap();
        assert_eq!(g1.n_vertices(), 8);
        assert_eq!(g1.edge_count(), 8);
        let g2 = build_graph(&sys, 2, 1 << 20).unwrap();
        assert_eq!(g2.n_vertices(), 64);
        assert_eq!(g2.edge_count(), 88);
    }

    #[test]
    fn interval_levels_are_paths() {
        let sys = interval(3).unwrap();
        let g = build_graph(&sys, 2, 1 << 20).unwrap();
        assert_eq!(g.n_vertices(), 9);
        assert_eq!(g.edge_count(), 8);
        // Path graph: endpoint distance 8 = 3^2 - 1.
        let r = bfs_path(&g, &[0], &[8]).unwrap();
        assert_eq!(r.dist, 8.0);
        assert_eq!(r.path, (0..9).collect::<Vec<u32>>());
    }

    #[test]
    fn edge_query_matches_published_cases() {
        let sys = sierpinski_carpet();
        let h = sys.type_by_name("h").unwrap();
        // (12, 20): level-1 edge (1, 2) of type h, (2, 0) in I_h.
        let w = Word::new(vec![1, 2]);
        let v = Word::new(vec![2, 0]);
        assert_eq!(
            edge_query(&sys, &w, &v).unwrap(),
            Some((h, Orientation::Plus))
        );
        // (00, 01): shared prefix, type-(1) edge.
        let w = Word::new(vec![0, 0]);
        let v = Word::new(vec![0, 1]);
        assert_eq!(
            edge_query(&sys, &w, &v).unwrap(),
            Some((h, Orientation::Plus))
        );
        // (05, 13): (0, 1) is an h-edge but (5, 3) is not in I_h.
        let w = Word::new(vec![0, 5]);
        let v = Word::new(vec![1, 3]);
        assert_eq!(edge_query(&sys, &w, &v).unwrap(), None);
    }

    #[test]
    fn built_graph_agrees_with_edge_oracle() {
        for sys in [sierpinski_carpet(), gasket(), pentagon(), interval(3).unwrap()] {
            for m in 1..=3 {
                let g = build_graph(&sys, m, 1 << 20).unwrap();
                let mut from_oracle = Vec::new();
                for a in 0..g.n_vertices() as u32 {
                    for b in a + 1..g.n_vertices() as u32 {
                        let w = g.word(a);
                        let v = g.word(b);
                        if let Some((t, o)) = edge_query(&sys, &w, &v).unwrap() {
                            let (from, to) = match o {
                                Orientation::Plus => (a, b),
                                Orientation::Minus => (b, a),
                            };
                            let meet =
                                crate::words::word_meet(&w, &v).unwrap() as u8;
                            from_oracle.push(GraphEdge {
                                from,
                                to,
                                ty: t as u8,
                                meet,
                            });
                        }
                    }
                }
                from_oracle.sort_by_key(|e| (e.from, e.to));
                assert_eq!(g.edges(), &from_oracle[..], "{} level {m}", sys.name());
            }
        }
    }

    #[test]
    fn boundary_sets_match_cartesian_powers() {
        let sys = sierpinski_carpet();
        let h = sys.type_by_name("h").unwrap();
        let minus = boundary_set(&sys, 2, h, Orientation::Minus);
        assert_eq!(minus.len(), 9);
        for &v in &minus {
            let w = Word::decode(v as u64, 2, 8);
            assert!(w.symbols().iter().all(|s| [0, 3, 5].contains(s)));
        }
        let sysg = gasket();
        let a = sysg.type_by_name("a").unwrap();
        let plus = boundary_set(&sysg, 3, a, Orientation::Plus);
        assert_eq!(plus, vec![Word::repeated(1, 3).encode(3) as u32]);
    }

    #[test]
    fn carpet_face_distance_and_weighted_paths() {
        let sys = sierpinski_carpet();
        let h = sys.type_by_name("h").unwrap();
        let g = build_graph(&sys, 2, 1 << 20).unwrap();
        let a = boundary_set(&sys, 2, h, Orientation::Minus);
        let b = boundary_set(&sys, 2, h, Orientation::Plus);
        let r = bfs_path(&g, &a, &b).unwrap();
        assert_eq!(r.dist, 8.0);

        // Uniform weights 1/9 across the interval: weighted length 1.
        let sysi = interval(3).unwrap();
        let gi = build_graph(&sysi, 2, 1 << 20).unwrap();
        let rho = vec![1.0 / 9.0; 9];
        let r = weighted_path(&gi, &[0], &[8], &rho).unwrap();
        assert!((r.dist - 1.0).abs() < 1e-12);
        assert_eq!(r.path.len(), 9);
    }

    #[test]
    fn diameter_exact_and_double_sweep_agree_on_paths() {
        let sys = interval(3).unwrap();
        let g = build_graph(&sys, 3, 1 << 20).unwrap();
        assert_eq!(diameter(&g, 10_000), (26, true));
        assert_eq!(diameter(&g, 1), (26, false));
    }
}
