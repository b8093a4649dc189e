//! Unit-capacity max-flow on the vertex-split network: minimum vertex cuts
//! (the exact 1-modulus) and maximum families of pairwise disjoint paths.

use crate::graph::ReplacementGraph;

const INF: u32 = u32::MAX / 2;

/// Dinic with a flat edge arena; edge `2k` and its reverse `2k + 1` are
/// stored adjacently, so the flow on edge `2k` is the capacity of `2k + 1`.
struct Dinic {
    to: Vec<u32>,
    cap: Vec<u32>,
    adj: Vec<Vec<u32>>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl Dinic {
    fn new(n: usize) -> Self {
        Dinic {
            to: Vec::new(),
            cap: Vec::new(),
            adj: vec![Vec::new(); n],
            level: vec![0; n],
            iter: vec![0; n],
        }
    }

    fn add_edge(&mut self, from: u32, to: u32, cap: u32) -> u32 {
        let id = self.to.len() as u32;
        self.to.push(to);
        self.cap.push(cap);
        self.to.push(from);
        self.cap.push(0);
        self.adj[from as usize].push(id);
        self.adj[to as usize].push(id + 1);
        id
    }

    fn flow_on(&self, id: u32) -> u32 {
        self.cap[id as usize + 1]
    }

    fn bfs(&mut self, s: u32, t: u32) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        let mut queue = std::collections::VecDeque::new();
        self.level[s as usize] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            for &id in &self.adj[v as usize] {
                let to = self.to[id as usize];
                if self.cap[id as usize] > 0 && self.level[to as usize] < 0 {
                    self.level[to as usize] = self.level[v as usize] + 1;
                    queue.push_back(to);
                }
            }
        }
        self.level[t as usize] >= 0
    }

    fn dfs(&mut self, v: u32, t: u32, f: u32) -> u32 {
        if v == t {
            return f;
        }
        while self.iter[v as usize] < self.adj[v as usize].len() {
            let id = self.adj[v as usize][self.iter[v as usize]];
            let to = self.to[id as usize];
            if self.cap[id as usize] > 0 && self.level[v as usize] < self.level[to as usize] {
                let d = self.dfs(to, t, f.min(self.cap[id as usize]));
                if d > 0 {
                    self.cap[id as usize] -= d;
                    self.cap[id as usize ^ 1] += d;
                    return d;
                }
            }
            self.iter[v as usize] += 1;
        }
        0
    }

    fn max_flow(&mut self, s: u32, t: u32) -> u32 {
        let mut flow = 0;
        while self.bfs(s, t) {
            self.iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let f = self.dfs(s, t, INF);
                if f == 0 {
                    break;
                }
                flow += f;
            }
        }
        flow
    }
}

/// Result of the vertex-cut computation between two vertex sets.
#[derive(Debug, Clone)]
pub struct VertexCut {
    /// Cut size = maximum number of pairwise vertex-disjoint paths.
    pub size: usize,
    /// A minimum vertex cut, sorted.
    pub cut: Vec<u32>,
    /// A maximum family of pairwise vertex-disjoint paths (endpoints
    /// included in the disjointness).
    pub paths: Vec<Vec<u32>>,
}

/// Minimum vertex cut separating `a` from `b`, every vertex (endpoints
/// included) with capacity one. By LP duality this is the exact 1-modulus of
/// the connecting path family, and the disjoint-path family certifies it.
pub fn min_vertex_cut(g: &ReplacementGraph, a: &[u32], b: &[u32]) -> VertexCut {
    let n = g.n_vertices();
    // Node v splits into in = 2v, out = 2v + 1; source 2n, sink 2n + 1.
    let (s, t) = ((2 * n) as u32, (2 * n + 1) as u32);
    let mut net = Dinic::new(2 * n + 2);
    for v in 0..n as u32 {
        net.add_edge(2 * v, 2 * v + 1, 1);
    }
    // For each undirected edge, both directions out-node -> in-node.
    let mut arc_ids = Vec::with_capacity(2 * g.edge_count());
    for e in g.edges() {
        arc_ids.push((e.from, e.to, net.add_edge(2 * e.from + 1, 2 * e.to, INF)));
        arc_ids.push((e.to, e.from, net.add_edge(2 * e.to + 1, 2 * e.from, INF)));
    }
    let mut bset = vec![false; n];
    for &x in b {
        bset[x as usize] = true;
    }
    // Terminal edges carry INF; the unit split edges already bound the
    // throughput of every vertex, endpoints included, so the minimum cut is
    // always realized on split edges and paths stay endpoint-disjoint.
    let mut source_ids = Vec::new();
    for &x in a {
        assert!(!bset[x as usize], "source and target sets must be disjoint");
        source_ids.push((x, net.add_edge(s, 2 * x, INF)));
    }
    for &x in b {
        net.add_edge(2 * x + 1, t, INF);
    }
    let size = net.max_flow(s, t) as usize;

    // Cut: vertices whose in-node is reachable in the residual network but
    // whose out-node is not.
    let mut reach = vec![false; 2 * n + 2];
    let mut stack = vec![s];
    reach[s as usize] = true;
    while let Some(v) = stack.pop() {
        for &id in &net.adj[v as usize] {
            let to = net.to[id as usize];
            if net.cap[id as usize] > 0 && !reach[to as usize] {
                reach[to as usize] = true;
                stack.push(to);
            }
        }
    }
    let mut cut: Vec<u32> = (0..n as u32)
        .filter(|&v| reach[2 * v as usize] && !reach[2 * v as usize + 1])
        .collect();
    cut.sort_unstable();

    // Path decomposition of the integral flow: out of every vertex at most
    // one unit leaves, so following positive-flow arcs is unambiguous.
    let mut out_arc: Vec<Option<u32>> = vec![None; n]; // next vertex
    for &(from, to, id) in &arc_ids {
        if net.flow_on(id) > 0 {
            debug_assert!(out_arc[from as usize].is_none());
            out_arc[from as usize] = Some(to);
        }
    }
    let mut paths = Vec::new();
    let mut starts: Vec<(u32, u32)> = source_ids;
    starts.sort_unstable();
    for (start, id) in starts {
        if net.flow_on(id) == 0 {
            continue;
        }
        let mut path = vec![start];
        let mut cur = start;
        let mut steps = 0;
        while !bset[cur as usize] && steps <= n {
            steps += 1;
            match out_arc[cur as usize] {
                Some(nv) => {
                    path.push(nv);
                    cur = nv;
                }
                None => break,
            }
        }
        if bset[cur as usize] {
            paths.push(path);
        }
    }
    paths.sort();

    VertexCut { size, cut, paths }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{boundary_set, build_graph};
    use crate::system::{gasket, sierpinski_carpet, Orientation};

    #[test]
    fn carpet_level_one_cut_is_two() {
        let sys = sierpinski_carpet();
        let g = build_graph(&sys, 1, 1 << 10).unwrap();
        let h = sys.type_by_name("h").unwrap();
        let a = boundary_set(&sys, 1, h, Orientation::Minus);
        let b = boundary_set(&sys, 1, h, Orientation::Plus);
        let r = min_vertex_cut(&g, &a, &b);
        assert_eq!(r.size, 2);
        assert_eq!(r.cut.len(), 2);
        assert_eq!(r.paths.len(), 2);
        // The cut really separates: no path avoids it.
        let cut: std::collections::BTreeSet<u32> = r.cut.iter().copied().collect();
        let mut reach = vec![false; g.n_vertices()];
        let mut stack: Vec<u32> = a.iter().copied().filter(|v| !cut.contains(v)).collect();
        for &v in &stack {
            reach[v as usize] = true;
        }
        while let Some(v) = stack.pop() {
            for &(nb, _) in g.neighbors(v) {
                if !cut.contains(&nb) && !reach[nb as usize] {
                    reach[nb as usize] = true;
                    stack.push(nb);
                }
            }
        }
        assert!(b.iter().all(|&v| !reach[v as usize]), "cut does not separate");
        // Paths are pairwise vertex-disjoint.
        let mut seen = std::collections::BTreeSet::new();
        for p in &r.paths {
            for &v in p {
                assert!(seen.insert(v), "paths share vertex {v}");
            }
        }
    }

    #[test]
    fn gasket_corner_to_corner_has_one_disjoint_path() {
        let sys = gasket();
        for m in 1..=3 {
            let g = build_graph(&sys, m, 1 << 10).unwrap();
            let a = boundary_set(&sys, m, 0, Orientation::Minus);
            let b = boundary_set(&sys, m, 0, Orientation::Plus);
            let r = min_vertex_cut(&g, &a, &b);
            assert_eq!(r.size, 1, "level {m}");
        }
    }

    #[test]
    fn carpet_level_two_cut_grows() {
        let sys = sierpinski_carpet();
        let g = build_graph(&sys, 2, 1 << 12).unwrap();
        let h = sys.type_by_name("h").unwrap();
        let a = boundary_set(&sys, 2, h, Orientation::Minus);
        let b = boundary_set(&sys, 2, h, Orientation::Plus);
        let r = min_vertex_cut(&g, &a, &b);
        assert_eq!(r.size, 4);
        assert_eq!(r.paths.len(), 4);
    }
}
