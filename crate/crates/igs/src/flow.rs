//! Unit flows of minimal q-energy between vertex sets: the dual side of the
//! modulus problem. The quadratic case is an exact electrical solve on the
//! terminal-contracted graph; general exponents run iteratively reweighted
//! electrical solves with an annealed smoothing, so every iterate satisfies
//! the divergence constraints to linear-solver precision.

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, DenseMatrix};

/// An antisymmetric edge function stored on an explicit oriented edge list;
/// `values[e]` is the flow from `edges[e].0` to `edges[e].1`.
#[derive(Debug, Clone)]
pub struct Flow {
    pub edges: std::sync::Arc<Vec<(u32, u32)>>,
    pub values: Vec<f64>,
    pub source: Vec<u32>,
    pub target: Vec<u32>,
    pub q: f64,
}

impl Flow {
    /// q-energy of the flow.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.abs().powf(self.q)).sum()
    }

    /// Signed value on the oriented pair `(x, y)`; zero off the edge list.
    pub fn value_between(&self, x: u32, y: u32) -> f64 {
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            if (a, b) == (x, y) {
                return self.values[e];
            }
            if (a, b) == (y, x) {
                return -self.values[e];
            }
        }
        0.0
    }

    /// Divergence at every vertex.
    pub fn divergence(&self, n_vertices: usize) -> Vec<f64> {
        let mut div = vec![0.0; n_vertices];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            div[a as usize] += self.values[e];
            div[b as usize] -= self.values[e];
        }
        div
    }

    /// Total flow out of the source set.
    pub fn total(&self, n_vertices: usize) -> f64 {
        let div = self.divergence(n_vertices);
        self.source.iter().map(|&v| div[v as usize]).sum()
    }
}

/// Residual report for a flow.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FlowReport {
    /// Largest absolute divergence outside source and target.
    pub max_interior_div: f64,
    /// `|I(F) - 1|`.
    pub unit_defect: f64,
    pub energy: f64,
    pub max_abs: f64,
}

/// Check the flow conditions; failures are encoded as residuals.
pub fn verify_flow(flow: &Flow, n_vertices: usize) -> FlowReport {
    let div = flow.divergence(n_vertices);
    let mut boundary = vec![false; n_vertices];
    for &v in flow.source.iter().chain(flow.target.iter()) {
        boundary[v as usize] = true;
    }
    let max_interior_div = div
        .iter()
        .enumerate()
        .filter(|&(v, _)| !boundary[v])
        .map(|(_, d)| d.abs())
        .fold(0.0f64, f64::max);
    let total: f64 = flow.source.iter().map(|&v| div[v as usize]).sum();
    FlowReport {
        max_interior_div,
        unit_defect: (total - 1.0).abs(),
        energy: flow.energy(),
        max_abs: flow.values.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    }
}

/// Options for the flow solver.
#[derive(Debug, Clone)]
pub struct FlowOptions {
    /// Target on the projected-gradient optimality residual, relative to
    /// the gradient scale.
    pub tol: f64,
    pub max_irls: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            tol: 1e-11,
            max_irls: 400,
        }
    }
}

/// Minimal q-energy unit flow from `a` to `b` on an explicit edge list.
/// `zero_edges` are forced to zero (removed from the problem). Parallel
/// edges are allowed and each keeps its own value.
pub fn solve_flow_on_edges(
    n_vertices: usize,
    edges: &std::sync::Arc<Vec<(u32, u32)>>,
    a: &[u32],
    b: &[u32],
    q: f64,
    zero_edges: &[usize],
    opts: &FlowOptions,
) -> Result<Flow> {
    if !(q > 1.0 && q.is_finite()) {
        return Err(Error::InvalidExponent(q));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Semantic("terminal sets must be non-empty".into()));
    }
    let aset: std::collections::BTreeSet<u32> = a.iter().copied().collect();
    let bset: std::collections::BTreeSet<u32> = b.iter().copied().collect();
    if aset.intersection(&bset).next().is_some() {
        return Err(Error::Semantic("terminal sets overlap".into()));
    }
    let mut dropped = vec![false; edges.len()];
    for &e in zero_edges {
        dropped[e] = true;
    }

    // Contract the terminals into two supernodes and relabel the vertices
    // reachable from the source supernode.
    let mut node_of = vec![u32::MAX; n_vertices];
    let s_node = 0u32;
    let t_node = 1u32;
    for &v in &aset {
        node_of[v as usize] = s_node;
    }
    for &v in &bset {
        node_of[v as usize] = t_node;
    }
    let mut n_nodes = 2usize;
    // Live edges with contracted endpoints (skipping intra-terminal ones).
    let mut live: Vec<(usize, u32, u32)> = Vec::new();
    {
        // Assign ids breadth-first from the source side for determinism.
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n_vertices];
        for (e, &(x, y)) in edges.iter().enumerate() {
            if !dropped[e] {
                adj[x as usize].push(y);
                adj[y as usize].push(x);
            }
        }
        let mut queue: std::collections::VecDeque<u32> = std::collections::VecDeque::new();
        let mut seen_s = vec![false; n_vertices];
        let mut seen_t = false;
        for &v in &aset {
            seen_s[v as usize] = true;
            queue.push_back(v);
        }
        while let Some(v) = queue.pop_front() {
            for &nb in &adj[v as usize] {
                if bset.contains(&nb) {
                    seen_t = true;
                    continue;
                }
                if !seen_s[nb as usize] {
                    seen_s[nb as usize] = true;
                    if node_of[nb as usize] == u32::MAX {
                        node_of[nb as usize] = n_nodes as u32;
                        n_nodes += 1;
                    }
                    queue.push_back(nb);
                }
            }
        }
        if !seen_t {
            return Err(Error::Disconnected(
                "terminals are in different components".into(),
            ));
        }
        for (e, &(x, y)) in edges.iter().enumerate() {
            if dropped[e] {
                continue;
            }
            let (nx, ny) = (node_of[x as usize], node_of[y as usize]);
            if nx == u32::MAX || ny == u32::MAX || nx == ny {
                continue; // unreachable part or intra-terminal edge
            }
            live.push((e, nx, ny));
        }
    }

    // Grounded Laplacian solver for a given conductance vector.
    let ground = t_node as usize;
    let reduced = n_nodes - 1;
    let red_of = |node: u32| -> Option<usize> {
        let node = node as usize;
        if node == ground {
            None
        } else if node > ground {
            Some(node - 1)
        } else {
            Some(node)
        }
    };
    let factor = |cond: &[f64]| -> Option<Cholesky> {
        let mut lap = DenseMatrix::zeros(reduced);
        for (k, &(_, x, y)) in live.iter().enumerate() {
            let c = cond[k];
            let rx = red_of(x);
            let ry = red_of(y);
            if let Some(i) = rx {
                *lap.at_mut(i, i) += c;
            }
            if let Some(j) = ry {
                *lap.at_mut(j, j) += c;
            }
            if let (Some(i), Some(j)) = (rx, ry) {
                *lap.at_mut(i, j) -= c;
                *lap.at_mut(j, i) -= c;
            }
        }
        Cholesky::new(&lap)
    };
    // Weighted electrical unit flow: potentials phi with injection +1 at
    // the source supernode, flow c * (phi_x - phi_y) on each live edge.
    let electrical = |cond: &[f64]| -> Option<Vec<f64>> {
        let chol = factor(cond)?;
        let mut rhs = vec![0.0; reduced];
        rhs[red_of(s_node).expect("source is not the ground")] = 1.0;
        let phi = chol.solve(&rhs);
        let phi_of = |node: u32| -> f64 {
            match red_of(node) {
                Some(i) => phi[i],
                None => 0.0,
            }
        };
        Some(
            live.iter()
                .enumerate()
                .map(|(k, &(_, x, y))| cond[k] * (phi_of(x) - phi_of(y)))
                .collect(),
        )
    };

    let ones = vec![1.0; live.len()];
    let mut f = electrical(&ones).ok_or_else(|| {
        Error::NoConvergence("electrical system is singular".into())
    })?;

    if (q - 2.0).abs() > 1e-15 {
        // IRLS with annealed smoothing; each iterate is exactly feasible.
        let energy = |f: &[f64]| -> f64 { f.iter().map(|v| v.abs().powf(q)).sum() };
        let fmax = f.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-30);
        let mut eps = 1e-2 * fmax;
        let mut best = f.clone();
        let mut best_energy = energy(&f);
        for _ in 0..opts.max_irls {
            let cond: Vec<f64> = f
                .iter()
                .map(|&v| (v * v + eps * eps).powf((2.0 - q) / 2.0))
                .collect();
            match electrical(&cond) {
                Some(next) => {
                    let e_next = energy(&next);
                    if e_next <= best_energy {
                        best_energy = e_next;
                        best = next.clone();
                    }
                    f = next;
                }
                None => break,
            }
            eps *= 0.5;
            if eps < 1e-14 * fmax {
                break;
            }
        }
        f = best;
    }

    // Optimality residual: the energy gradient must be a potential
    // difference on every live edge. Project it onto the cycle space with
    // the unweighted Laplacian and report the relative remainder; a few
    // final reweighted solves have already made this small.
    let grad: Vec<f64> = f
        .iter()
        .map(|&v| q * v.abs().powf(q - 1.0) * v.signum())
        .collect();
    {
        let chol = factor(&ones).ok_or_else(|| {
            Error::NoConvergence("electrical system is singular".into())
        })?;
        let mut rhs = vec![0.0; reduced];
        for (k, &(_, x, y)) in live.iter().enumerate() {
            if let Some(i) = red_of(x) {
                rhs[i] += grad[k];
            }
            if let Some(j) = red_of(y) {
                rhs[j] -= grad[k];
            }
        }
        let phi = chol.solve(&rhs);
        let phi_of = |node: u32| -> f64 {
            match red_of(node) {
                Some(i) => phi[i],
                None => 0.0,
            }
        };
        let scale = grad.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-30);
        let resid = live
            .iter()
            .enumerate()
            .map(|(k, &(_, x, y))| (grad[k] - (phi_of(x) - phi_of(y))).abs())
            .fold(0.0f64, f64::max);
        if resid > 1e-5 * scale {
            return Err(Error::NoConvergence(format!(
                "flow optimality residual {:.3e} (relative to {:.3e})",
                resid, scale
            )));
        }
    }

    let mut values = vec![0.0; edges.len()];
    for (k, &(e, _, _)) in live.iter().enumerate() {
        values[e] = f[k];
    }
    Ok(Flow {
        edges: edges.clone(),
        values,
        source: a.to_vec(),
        target: b.to_vec(),
        q,
    })
}

/// Duality sandwich between a modulus value and a flow energy at conjugate
/// exponents: the realized ratio `Mod_p * E_q^{p/q}` and whether it sits
/// inside `[1/C, C]` with `C = 2^p * deg(G)`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DualityGap {
    pub ratio: f64,
    pub c_dual: f64,
    pub within_bounds: bool,
}

pub fn duality_gap(mod_value: f64, flow_energy: f64, p: f64, q: f64, degree: usize) -> Result<DualityGap> {
    if ((p - 1.0) * (q - 1.0) - 1.0).abs() > 1e-9 {
        return Err(Error::ExponentMismatch { p, q });
    }
    let c_dual = 2f64.powf(p) * degree as f64;
    let ratio = mod_value * flow_energy.powf(p / q);
    Ok(DualityGap {
        ratio,
        c_dual,
        within_bounds: ratio >= 1.0 / c_dual && ratio <= c_dual,
    })
}

/// Extend a unit flow on a graph to the graph with one formal terminal
/// vertex attached to every source/target vertex, the new edge carrying the
/// old divergence. Returns the extension's edge list, its values, and the
/// energy ratio against the original (the joining estimate bounds it by
/// `3 deg^{1/(p-1)}`).
pub fn extend_to_hat(
    n_vertices: usize,
    flow: &Flow,
) -> (std::sync::Arc<Vec<(u32, u32)>>, Flow, f64) {
    let div = flow.divergence(n_vertices);
    let mut edges: Vec<(u32, u32)> = flow.edges.as_ref().clone();
    let mut values = flow.values.clone();
    let mut next = n_vertices as u32;
    let mut hat_sources = Vec::new();
    let mut hat_targets = Vec::new();
    for &v in flow.source.iter().chain(flow.target.iter()) {
        // Edge (x_v, v) carries div(F)(v).
        edges.push((next, v));
        values.push(div[v as usize]);
        if flow.source.contains(&v) {
            hat_sources.push(next);
        } else {
            hat_targets.push(next);
        }
        next += 1;
    }
    let edges = std::sync::Arc::new(edges);
    let old_energy = flow.energy();
    let hat = Flow {
        edges: edges.clone(),
        values,
        source: hat_sources,
        target: hat_targets,
        q: flow.q,
    };
    let ratio = if old_energy > 0.0 {
        hat.energy() / old_energy
    } else {
        1.0
    };
    (edges, hat, ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{boundary_set, build_graph};
    use crate::system::{interval, sierpinski_carpet, Orientation};

    fn edge_arc(g: &crate::graph::ReplacementGraph) -> std::sync::Arc<Vec<(u32, u32)>> {
        std::sync::Arc::new(g.edges().iter().map(|e| (e.from, e.to)).collect())
    }

    #[test]
    fn interval_unit_flow_is_one_on_every_edge() {
        let sys = interval(3).unwrap();
        let g = build_graph(&sys, 2, 1 << 20).unwrap();
        let edges = edge_arc(&g);
        for q in [2.0, 1.5, 3.0] {
            let f = solve_flow_on_edges(9, &edges, &[0], &[8], q, &[], &FlowOptions::default())
                .unwrap();
            assert!((f.energy() - 8.0).abs() < 1e-9, "q={q}: {}", f.energy());
            for &v in &f.values {
                assert!((v.abs() - 1.0).abs() < 1e-10);
            }
            let rep = verify_flow(&f, 9);
            assert!(rep.max_interior_div < 1e-12);
            assert!(rep.unit_defect < 1e-12);
        }
    }

    #[test]
    fn carpet_face_flow_matches_duality() {
        let sys = sierpinski_carpet();
        let g = build_graph(&sys, 1, 1 << 20).unwrap();
        let h = sys.type_by_name("h").unwrap();
        let a = boundary_set(&sys, 1, h, Orientation::Minus);
        let b = boundary_set(&sys, 1, h, Orientation::Plus);
        let edges = edge_arc(&g);
        let f = solve_flow_on_edges(8, &edges, &a, &b, 2.0, &[], &FlowOptions::default()).unwrap();
        // Two parallel 2-edge routes, each carrying 1/2: energy 4*(1/4) = 1.
        assert!((f.energy() - 1.0).abs() < 1e-10, "{}", f.energy());
        let r = solve_flow_on_edges(8, &edges, &b, &a, 2.0, &[], &FlowOptions::default()).unwrap();
        assert!((r.energy() - f.energy()).abs() < 1e-12);

        // Duality sandwich against the exact p = 2 modulus 2/3.
        let gap = duality_gap(2.0 / 3.0, f.energy(), 2.0, 2.0, 4).unwrap();
        assert!(gap.within_bounds, "{gap:?}");
        assert!((gap.ratio - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_faces_have_equal_energy() {
        let sys = sierpinski_carpet();
        let g = build_graph(&sys, 2, 1 << 20).unwrap();
        let edges = edge_arc(&g);
        let h = sys.type_by_name("h").unwrap();
        let v = sys.type_by_name("v").unwrap();
        for q in [2.0, 1.5] {
            let fh = solve_flow_on_edges(
                64,
                &edges,
                &boundary_set(&sys, 2, h, Orientation::Minus),
                &boundary_set(&sys, 2, h, Orientation::Plus),
                q,
                &[],
                &FlowOptions::default(),
            )
            .unwrap();
            let fv = solve_flow_on_edges(
                64,
                &edges,
                &boundary_set(&sys, 2, v, Orientation::Minus),
                &boundary_set(&sys, 2, v, Orientation::Plus),
                q,
                &[],
                &FlowOptions::default(),
            )
            .unwrap();
            assert!(
                (fh.energy() - fv.energy()).abs() <= 1e-8 * fh.energy(),
                "q={q}: {} vs {}",
                fh.energy(),
                fv.energy()
            );
        }
    }

    #[test]
    fn hat_extension_obeys_the_joining_bound() {
        let sys = interval(3).unwrap();
        let g = build_graph(&sys, 2, 1 << 20).unwrap();
        let edges = edge_arc(&g);
        let f =
            solve_flow_on_edges(9, &edges, &[0], &[8], 2.0, &[], &FlowOptions::default()).unwrap();
        let (_, hat, ratio) = extend_to_hat(9, &f);
        // Energies 8 -> 10: the two terminal edges carry +-1.
        assert!((hat.energy() - 10.0).abs() < 1e-9);
        assert!(ratio <= 3.0 * 2f64.powf(1.0 / (2.0 - 1.0)));
        let rep = verify_flow(&hat, 11);
        assert!(rep.max_interior_div < 1e-12);
    }

    #[test]
    fn zero_constrained_edges_stay_zero() {
        let sys = sierpinski_carpet();
        let g = build_graph(&sys, 1, 1 << 20).unwrap();
        let edges = edge_arc(&g);
        // Zero the edge (0, 1): all flow reroutes through the top.
        let zero_idx = g
            .edges()
            .iter()
            .position(|e| (e.from, e.to) == (0, 1))
            .unwrap();
        let f = solve_flow_on_edges(
            8,
            &edges,
            &[0, 3, 5],
            &[2, 4, 7],
            2.0,
            &[zero_idx],
            &FlowOptions::default(),
        )
        .unwrap();
        assert_eq!(f.values[zero_idx], 0.0);
        assert!((f.total(8) - 1.0).abs() < 1e-12);
        // Single remaining route 5-6-7 carries everything: energy 2.
        assert!((f.energy() - 2.0).abs() < 1e-9, "{}", f.energy());
    }
}
