//! Discrete vertex p-modulus between vertex sets.
//!
//! For p > 1 the solver is a cutting-plane scheme: keep a small active set
//! of paths, maximize the smooth concave dual over their multipliers, and
//! separate with a vertex-weighted shortest path. Admissible densities are
//! recovered from the multipliers in closed form. The p = 1 problem is the
//! minimum vertex cut and is solved exactly by max-flow.
//!
//! An independent brute-force oracle enumerates every simple connecting
//! path and solves the full program by cyclic coordinate ascent; it shares
//! no code path with the cutting-plane solver and is the ground truth in
//! tests.

use crate::error::{Error, Result};
use crate::graph::{bfs_path, weighted_path, ReplacementGraph};
use crate::maxflow::min_vertex_cut;
use crate::symmetry::flippings_for_all_types;
use crate::system::IgsSystem;

/// Tolerances and budgets for the modulus solver.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Admissibility slack for the separation oracle.
    pub eps_adm: f64,
    /// Target KKT residual (dimensionless: admissibility defects).
    pub eps_kkt: f64,
    /// Cap on outer (separation) rounds.
    pub max_outer: usize,
    /// Cap on inner ascent iterations per outer round.
    pub max_inner: usize,
    /// Violated paths added per separation round (vertex-disjoint batch).
    pub oracle_batch: usize,
    /// Largest supported exponent.
    pub p_max: f64,
    /// Deterministic work cap (path-slot operations); exceeding it returns
    /// the best iterate flagged as unconverged.
    pub work_budget: u64,
    /// Below this exponent the problem is routed to the min-cut solver.
    pub p_lp_threshold: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            eps_adm: 1e-9,
            eps_kkt: 1e-8,
            max_outer: 20_000,
            max_inner: 5_000,
            oracle_batch: 8,
            p_max: 16.0,
            work_budget: 2_000_000_000,
            p_lp_threshold: 1.05,
        }
    }
}

/// Outcome of a modulus computation.
#[derive(Debug, Clone)]
pub struct ModulusResult {
    /// The p-mass of the optimal density.
    pub value: f64,
    /// Optimal density per vertex.
    pub density: Vec<f64>,
    /// Active constraint paths.
    pub active_paths: Vec<Vec<u32>>,
    /// Multipliers of the active paths.
    pub multipliers: Vec<f64>,
    /// Final KKT residual (admissibility defect units).
    pub kkt_residual: f64,
    /// Total inner iterations.
    pub iterations: usize,
    pub p: f64,
    /// False when an iteration cap was hit; the best iterate is returned.
    pub converged: bool,
    /// True when p < the LP threshold and the min-cut value was used.
    pub lp_interpolated: bool,
}

fn check_sets(g: &ReplacementGraph, a: &[u32], b: &[u32]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Semantic("source and target sets must be non-empty".into()));
    }
    let bset: std::collections::BTreeSet<u32> = b.iter().copied().collect();
    if a.iter().any(|x| bset.contains(x)) {
        return Err(Error::Semantic("source and target sets overlap".into()));
    }
    let n = g.n_vertices() as u32;
    if a.iter().chain(b.iter()).any(|&x| x >= n) {
        return Err(Error::Semantic("vertex id out of range".into()));
    }
    Ok(())
}

/// Active-set state of the restricted dual: paths, their multipliers, and
/// the per-vertex multiplier sums on the compressed support.
struct DualState {
    paths: Vec<Vec<u32>>,
    path_slots: Vec<Vec<u32>>,
    lambda: Vec<f64>,
    /// Multiplier sum per support slot.
    s: Vec<f64>,
    support: Vec<u32>,
    slot_of: Vec<u32>,
    seen: std::collections::BTreeSet<Vec<u32>>,
    /// Consecutive outer rounds a path has sat at multiplier zero.
    idle: Vec<u32>,
}

impl DualState {
    fn new(n: usize) -> Self {
        DualState {
            paths: Vec::new(),
            path_slots: Vec::new(),
            lambda: Vec::new(),
            s: Vec::new(),
            support: Vec::new(),
            slot_of: vec![u32::MAX; n],
            seen: std::collections::BTreeSet::new(),
            idle: Vec::new(),
        }
    }

    /// Add a path with an initial multiplier; false when already present.
    fn add_path(&mut self, path: Vec<u32>, lam: f64) -> bool {
        if !self.seen.insert(path.clone()) {
            return false;
        }
        let mut slots = Vec::with_capacity(path.len());
        for &v in &path {
            let slot = if self.slot_of[v as usize] == u32::MAX {
                let k = self.support.len() as u32;
                self.slot_of[v as usize] = k;
                self.support.push(v);
                self.s.push(0.0);
                k
            } else {
                self.slot_of[v as usize]
            };
            slots.push(slot);
        }
        for &slot in &slots {
            self.s[slot as usize] += lam;
        }
        self.paths.push(path);
        self.lambda.push(lam);
        self.path_slots.push(slots);
        self.idle.push(0);
        true
    }

    /// Set a path's multiplier so the path becomes exactly tight under the
    /// current field (cheap warm start for freshly separated paths).
    fn tighten_last(&mut self, ex: &Exponents) {
        let k = self.paths.len() - 1;
        let slots = &self.path_slots[k];
        let length = |s: &[f64], shift: f64| -> f64 {
            slots.iter().map(|&i| ex.rho(s[i as usize] + shift)).sum()
        };
        if length(&self.s, 0.0) >= 1.0 {
            return;
        }
        let mut hi = ex.p * (slots.len() as f64).powf(1.0 - ex.p);
        while length(&self.s, hi) < 1.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if length(&self.s, mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lam = 0.5 * (lo + hi);
        for &i in slots {
            self.s[i as usize] += lam;
        }
        self.lambda[k] += lam;
    }

    /// Age the idle counters and drop paths whose multiplier has been zero
    /// for several rounds; dropped paths may be re-separated later.
    fn prune_idle(&mut self, max_age: u32) {
        for k in 0..self.paths.len() {
            if self.lambda[k] > 0.0 {
                self.idle[k] = 0;
            } else {
                self.idle[k] += 1;
            }
        }
        if !self.idle.iter().any(|&a| a > max_age) {
            return;
        }
        let keep: Vec<usize> = (0..self.paths.len())
            .filter(|&k| self.idle[k] <= max_age)
            .collect();
        let paths: Vec<Vec<u32>> = keep.iter().map(|&k| self.paths[k].clone()).collect();
        let lambda: Vec<f64> = keep.iter().map(|&k| self.lambda[k]).collect();
        let idle: Vec<u32> = keep.iter().map(|&k| self.idle[k]).collect();
        let n = self.slot_of.len();
        let save_lambda = lambda;
        *self = DualState::new(n);
        for (path, (lam, age)) in paths.into_iter().zip(save_lambda.into_iter().zip(idle)) {
            self.add_path(path, lam);
            *self.idle.last_mut().unwrap() = age;
        }
    }
}

struct Exponents {
    p: f64,
    q: f64,
    inv_pm1: f64,
}

impl Exponents {
    fn new(p: f64) -> Self {
        Exponents {
            p,
            q: p / (p - 1.0),
            inv_pm1: 1.0 / (p - 1.0),
        }
    }

    #[inline]
    fn rho(&self, s: f64) -> f64 {
        if s > 0.0 {
            (s / self.p).powf(self.inv_pm1)
        } else {
            0.0
        }
    }

    #[inline]
    fn drho(&self, s: f64) -> f64 {
        if s > 0.0 {
            self.inv_pm1 * (s / self.p).powf(self.inv_pm1 - 1.0) / self.p
        } else {
            0.0
        }
    }
}

fn dual_gradient(st: &DualState, ex: &Exponents) -> Vec<f64> {
    let rho: Vec<f64> = st.s.iter().map(|&x| ex.rho(x)).collect();
    st.path_slots
        .iter()
        .map(|slots| 1.0 - slots.iter().map(|&i| rho[i as usize]).sum::<f64>())
        .collect()
}

fn dual_residual(st: &DualState, grad: &[f64]) -> f64 {
    st.lambda
        .iter()
        .zip(grad)
        .map(|(&l, &g)| if l > 0.0 { g.abs() } else { g.max(0.0) })
        .fold(0.0f64, f64::max)
}

fn dual_objective(st: &DualState, ex: &Exponents) -> f64 {
    let lin: f64 = st.lambda.iter().sum();
    let mass: f64 = st
        .s
        .iter()
        .map(|&x| if x > 0.0 { x.powf(ex.q) } else { 0.0 })
        .sum();
    lin - (ex.p - 1.0) * ex.p.powf(-ex.q) * mass
}

/// One Newton step on the multipliers selected by positivity or a positive
/// gradient: solve the tightness system `M diag(rho'(s)) M^T delta = grad`
/// with a Levenberg-Marquardt ridge `mu` (relative to the largest diagonal)
/// and take the full step clipped at zero. Small systems use a dense LU,
/// large ones matrix-free conjugate gradient. Returns false when no move
/// was possible.
fn newton_step_active(st: &mut DualState, ex: &Exponents, grad: &[f64], mu: f64) -> bool {
    let active: Vec<usize> = (0..st.lambda.len())
        .filter(|&k| st.lambda[k] > 0.0 || grad[k] > 0.0)
        .collect();
    if active.is_empty() {
        return false;
    }
    let na = active.len();
    let rhs: Vec<f64> = active.iter().map(|&k| grad[k]).collect();
    let delta = if na <= 150 {
        let mut jac = crate::linalg::DenseMatrix::zeros(na);
        let mut slot_touch: std::collections::BTreeMap<u32, Vec<usize>> =
            std::collections::BTreeMap::new();
        for (ai, &k) in active.iter().enumerate() {
            for &i in &st.path_slots[k] {
                slot_touch.entry(i).or_default().push(ai);
            }
        }
        for (&slot, owners) in &slot_touch {
            let d = ex.drho(st.s[slot as usize]);
            for &ai in owners {
                for &aj in owners {
                    *jac.at_mut(ai, aj) += d;
                }
            }
        }
        let mut maxdiag = 0.0f64;
        for i in 0..na {
            maxdiag = maxdiag.max(jac.at(i, i));
        }
        for i in 0..na {
            *jac.at_mut(i, i) += mu * maxdiag.max(1e-300);
        }
        match crate::linalg::solve_lu(jac, rhs) {
            Some(d) => d,
            None => return false,
        }
    } else {
        // Matrix-free conjugate gradient; the matvec is two sparse passes
        // through the active paths' slots.
        let mut weights = vec![0.0f64; st.s.len()];
        let mut wmax = 0.0f64;
        for &k in &active {
            for &i in &st.path_slots[k] {
                let w = ex.drho(st.s[i as usize]);
                weights[i as usize] = w;
                wmax = wmax.max(w);
            }
        }
        let maxlen = active
            .iter()
            .map(|&k| st.path_slots[k].len())
            .max()
            .unwrap_or(1) as f64;
        let ridge = mu * wmax.max(1e-300) * maxlen;
        let matvec = |x: &[f64]| -> Vec<f64> {
            let mut field = vec![0.0f64; weights.len()];
            for (ai, &k) in active.iter().enumerate() {
                if x[ai] != 0.0 {
                    for &i in &st.path_slots[k] {
                        field[i as usize] += x[ai];
                    }
                }
            }
            for (v, &w) in field.iter_mut().zip(&weights) {
                *v *= w;
            }
            let mut y = vec![0.0; na];
            for (ai, &k) in active.iter().enumerate() {
                y[ai] = ridge * x[ai]
                    + st.path_slots[k]
                        .iter()
                        .map(|&i| field[i as usize])
                        .sum::<f64>();
            }
            y
        };
        let mut x = vec![0.0; na];
        let mut r = rhs.clone();
        let mut pdir = r.clone();
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let target = rr * 1e-20;
        for _ in 0..64 {
            if rr <= target {
                break;
            }
            let ap = matvec(&pdir);
            let pap: f64 = pdir.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rr / pap;
            for i in 0..na {
                x[i] += alpha * pdir[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..na {
                pdir[i] = r[i] + beta * pdir[i];
            }
        }
        x
    };
    let mut moved = false;
    for (ai, &k) in active.iter().enumerate() {
        let step = delta[ai].max(-st.lambda[k]);
        if step != 0.0 {
            for &i in &st.path_slots[k] {
                st.s[i as usize] += step;
            }
            st.lambda[k] += step;
            moved = true;
        }
    }
    moved
}

/// Maximize the restricted dual over the current active set.
///
/// Phase 1 is projected spectral-gradient ascent with a non-monotone
/// safeguard (identification of the active multipliers); phase 2 is
/// non-monotone projected Newton with a best-iterate watermark. Returns the
/// final residual in admissibility-defect units.
fn inner_solve(
    st: &mut DualState,
    ex: &Exponents,
    coarse_tol: f64,
    target: f64,
    bb_cap: usize,
    total_inner: &mut usize,
) -> f64 {
    // Phase 1: spectral ascent.
    let mut grad = dual_gradient(st, ex);
    let mut step = 1.0
        / st
            .path_slots
            .iter()
            .map(|sl| sl.len() as f64)
            .fold(1.0f64, f64::max);
    let mut history = std::collections::VecDeque::from([dual_objective(st, ex)]);
    for _ in 0..bb_cap {
        *total_inner += 1;
        if dual_residual(st, &grad) <= coarse_tol {
            break;
        }
        let floor = history.iter().copied().fold(f64::INFINITY, f64::min);
        let mut t = step;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = st
                .lambda
                .iter()
                .zip(&grad)
                .map(|(&l, &g)| (l + t * g).max(0.0))
                .collect();
            let mut s_cand = vec![0.0; st.s.len()];
            for (k, slots) in st.path_slots.iter().enumerate() {
                if cand[k] != 0.0 {
                    for &i in slots {
                        s_cand[i as usize] += cand[k];
                    }
                }
            }
            let prev_lambda = st.lambda.clone();
            let prev_grad = grad.clone();
            let obj = {
                let saved_l = std::mem::replace(&mut st.lambda, cand);
                let saved_s = std::mem::replace(&mut st.s, s_cand);
                let obj = dual_objective(st, ex);
                if obj >= floor - 1e-12 * floor.abs().max(1.0) {
                    // accept
                    Some(obj)
                } else {
                    st.lambda = saved_l;
                    st.s = saved_s;
                    None
                }
            };
            if let Some(obj) = obj {
                grad = dual_gradient(st, ex);
                history.push_back(obj);
                if history.len() > 8 {
                    history.pop_front();
                }
                let mut num = 0.0;
                let mut den = 0.0;
                for k in 0..st.lambda.len() {
                    let dl = st.lambda[k] - prev_lambda[k];
                    let dg = grad[k] - prev_grad[k];
                    num += dl * dl;
                    den += -dl * dg;
                }
                step = if den > 0.0 && num > 0.0 {
                    (num / den).clamp(1e-18, 1e18)
                } else {
                    t * 2.0
                };
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    // Phase 2: projected Newton with an adaptive Levenberg-Marquardt
    // ridge: shrink it after successful steps, escalate and retry from a
    // snapshot after overshoots.
    let mut grad = dual_gradient(st, ex);
    let mut res = dual_residual(st, &grad);
    let mut mu = 1e-10f64;
    for _ in 0..200 {
        if res <= target {
            return res;
        }
        let snapshot = (st.lambda.clone(), st.s.clone());
        let mut success = false;
        for _ in 0..12 {
            *total_inner += 1;
            if !newton_step_active(st, ex, &grad, mu) {
                break;
            }
            let res2 = dual_residual(st, &dual_gradient(st, ex));
            if res2 < res {
                res = res2;
                grad = dual_gradient(st, ex);
                mu = (mu * 0.25).max(1e-14);
                success = true;
                break;
            }
            st.lambda.clone_from(&snapshot.0);
            st.s.clone_from(&snapshot.1);
            mu *= 10.0;
            if mu > 1e6 {
                break;
            }
        }
        if !success {
            break;
        }
    }
    res
}

/// Compute `Mod_p(Theta(a, b), g)`.
pub fn solve_modulus(
    g: &ReplacementGraph,
    a: &[u32],
    b: &[u32],
    p: f64,
    opts: &SolveOptions,
) -> Result<ModulusResult> {
    check_sets(g, a, b)?;
    if !(1.0..=opts.p_max).contains(&p) {
        return Err(Error::InvalidExponent(p));
    }
    if p < opts.p_lp_threshold {
        // Exact LP / minimum vertex cut; for p slightly above 1 the cut
        // density stays admissible and the value is flagged interpolated.
        let cut = min_vertex_cut(g, a, b);
        let mut density = vec![0.0; g.n_vertices()];
        for &v in &cut.cut {
            density[v as usize] = 1.0;
        }
        return Ok(ModulusResult {
            value: cut.size as f64,
            density,
            multipliers: vec![1.0; cut.paths.len()],
            active_paths: cut.paths,
            kkt_residual: 0.0,
            iterations: 0,
            p,
            converged: true,
            lp_interpolated: p != 1.0,
        });
    }

    let ex = Exponents::new(p);
    let n = g.n_vertices();
    let mut st = DualState::new(n);

    // Seed with one unweighted shortest path, multiplier at its
    // single-constraint optimum.
    let seed = bfs_path(g, a, b)?;
    let len0 = seed.path.len() as f64;
    st.add_path(seed.path, p * len0.powf(1.0 - p));

    let mut total_inner = 0usize;
    let mut converged = false;
    let mut kkt = f64::INFINITY;
    let mut work: u64 = 0;

    for _outer in 0..opts.max_outer {
        if work > opts.work_budget {
            break;
        }
        let before_inner = total_inner;
        let coarse = (0.5 * opts.eps_kkt).max(1e-4);
        let mut inner_res = inner_solve(
            &mut st,
            &ex,
            coarse,
            0.5 * opts.eps_kkt,
            opts.max_inner.min(500),
            &mut total_inner,
        );

        let nnz: usize = st.path_slots.iter().map(|s| s.len()).sum();
        work += (total_inner - before_inner) as u64 * nnz as u64;

        // Separation: batch of vertex-disjoint violated paths.
        let mut rho_work = vec![0.0f64; n];
        for (k, &v) in st.support.iter().enumerate() {
            rho_work[v as usize] = ex.rho(st.s[k]);
        }
        let mut new_paths: Vec<Vec<u32>> = Vec::new();
        let mut violation = 0.0f64;
        for round in 0..opts.oracle_batch.max(1) {
            let r = weighted_path(g, a, b, &rho_work)?;
            if round == 0 {
                violation = (1.0 - r.dist).max(0.0);
            }
            if r.dist >= 1.0 - opts.eps_adm {
                break;
            }
            for &v in &r.path {
                rho_work[v as usize] = 2.0;
            }
            if !st.seen.contains(&r.path) {
                new_paths.push(r.path);
            } else {
                break;
            }
        }
        kkt = inner_res.max(violation);
        if new_paths.is_empty() && kkt <= opts.eps_kkt {
            converged = true;
            break;
        }
        if new_paths.is_empty() {
            // Every violated path is already active: grind the inner solve
            // to the full tolerance while it keeps making progress.
            for _ in 0..20 {
                inner_res = inner_solve(
                    &mut st,
                    &ex,
                    0.5 * opts.eps_kkt,
                    0.5 * opts.eps_kkt,
                    opts.max_inner,
                    &mut total_inner,
                );
                let mut rho_chk = vec![0.0f64; n];
                for (k, &v) in st.support.iter().enumerate() {
                    rho_chk[v as usize] = ex.rho(st.s[k]);
                }
                let chk = weighted_path(g, a, b, &rho_chk)?;
                let fresh = inner_res.max((1.0 - chk.dist).max(0.0));
                let improved = fresh < 0.7 * kkt;
                kkt = fresh;
                if kkt <= opts.eps_kkt || !improved {
                    break;
                }
            }
            converged = kkt <= opts.eps_kkt;
            break;
        }
        for path in new_paths {
            if st.add_path(path, 0.0) {
                st.tighten_last(&ex);
            }
        }
        st.prune_idle(3);
    }

    // Final density, rescaled so the returned iterate is exactly
    // admissible (the value then upper-bounds the modulus by at most a
    // kkt-sized relative margin).
    let mut density = vec![0.0f64; n];
    for (k, &v) in st.support.iter().enumerate() {
        density[v as usize] = ex.rho(st.s[k]);
    }
    let shortest = weighted_path(g, a, b, &density)?.dist;
    if shortest < 1.0 && shortest > 0.0 {
        for d in density.iter_mut() {
            *d /= shortest;
        }
    }
    let value: f64 = density
        .iter()
        .map(|&r| if r > 0.0 { r.powf(p) } else { 0.0 })
        .sum();

    // Keep only paths with positive multipliers in the report.
    let mut active_paths = Vec::new();
    let mut multipliers = Vec::new();
    for (k, path) in st.paths.into_iter().enumerate() {
        if st.lambda[k] > 0.0 {
            active_paths.push(path);
            multipliers.push(st.lambda[k]);
        }
    }

    Ok(ModulusResult {
        value,
        density,
        active_paths,
        multipliers,
        kkt_residual: kkt,
        iterations: total_inner,
        p,
        converged,
        lp_interpolated: false,
    })
}

/// Admissibility check for a finished result: the weighted shortest
/// connecting path under the returned density.
pub fn admissibility_defect(
    g: &ReplacementGraph,
    result: &ModulusResult,
    a: &[u32],
    b: &[u32],
) -> Result<f64> {
    let r = weighted_path(g, a, b, &result.density)?;
    Ok((1.0 - r.dist).max(0.0))
}

// ---------------------------------------------------------------------------
// Brute-force oracle
// ---------------------------------------------------------------------------

/// Enumerate all simple paths from `a` to `b`, capped.
fn enumerate_simple_paths(
    g: &ReplacementGraph,
    a: &[u32],
    b: &[u32],
    cap: usize,
) -> Result<Vec<Vec<u32>>> {
    let bset: std::collections::BTreeSet<u32> = b.iter().copied().collect();
    let mut out = Vec::new();
    let mut on_path = vec![false; g.n_vertices()];
    let mut stack_path: Vec<u32> = Vec::new();

    fn dfs(
        g: &ReplacementGraph,
        v: u32,
        bset: &std::collections::BTreeSet<u32>,
        on_path: &mut Vec<bool>,
        path: &mut Vec<u32>,
        out: &mut Vec<Vec<u32>>,
        cap: usize,
    ) -> Result<()> {
        path.push(v);
        on_path[v as usize] = true;
        if bset.contains(&v) {
            out.push(path.clone());
            if out.len() > cap {
                return Err(Error::TooLarge(format!("more than {cap} simple paths")));
            }
        } else {
            for &(nb, _) in g.neighbors(v) {
                if !on_path[nb as usize] {
                    dfs(g, nb, bset, on_path, path, out, cap)?;
                }
            }
        }
        on_path[v as usize] = false;
        path.pop();
        Ok(())
    }

    let mut starts = a.to_vec();
    starts.sort_unstable();
    for &start in &starts {
        dfs(g, start, &bset, &mut on_path, &mut stack_path, &mut out, cap)?;
    }
    Ok(out)
}

/// Ground-truth modulus on small instances: full path enumeration plus an
/// exact solve over the complete constraint set. For p = 1 the cut value is
/// found by exhausting vertex subsets. Accepts at most 12 vertices, or at
/// most 10^4 simple connecting paths when p > 1.
pub fn brute_force_modulus(g: &ReplacementGraph, a: &[u32], b: &[u32], p: f64) -> Result<f64> {
    check_sets(g, a, b)?;
    let n = g.n_vertices();
    let paths = enumerate_simple_paths(g, a, b, 10_000)?;
    if n > 12 && p <= 1.0 {
        return Err(Error::TooLarge(format!(
            "p = 1 exact cut enumeration needs <= 12 vertices, got {n}"
        )));
    }
    if paths.is_empty() {
        return Err(Error::Disconnected("no connecting path".into()));
    }

    if p == 1.0 {
        // Minimum vertex cut by subset enumeration.
        let mut best = usize::MAX;
        'subset: for mask in 0u32..(1 << n) {
            let size = mask.count_ones() as usize;
            if size >= best {
                continue;
            }
            for path in &paths {
                if path.iter().all(|&v| mask >> v & 1 == 0) {
                    continue 'subset;
                }
            }
            best = size;
        }
        return Ok(best as f64);
    }
    if p < 1.0 {
        return Err(Error::InvalidExponent(p));
    }

    // Cyclic coordinate ascent on the full dual: for each path in turn,
    // re-solve its multiplier exactly (1-D monotone root find).
    let inv_pm1 = 1.0 / (p - 1.0);
    let mut lambda = vec![0.0f64; paths.len()];
    let mut s = vec![0.0f64; n];
    let rho_of = |x: f64| if x > 0.0 { (x / p).powf(inv_pm1) } else { 0.0 };
    let length = |s: &[f64], path: &[u32], shift: f64| -> f64 {
        path.iter().map(|&v| rho_of(s[v as usize] + shift)).sum()
    };
    let tol = 1e-10;

    // One cyclic coordinate-ascent sweep: each multiplier is re-solved
    // exactly so its path becomes tight (or zero when already over-tight).
    let sweep = |lambda: &mut Vec<f64>, s: &mut Vec<f64>| {
        for (k, path) in paths.iter().enumerate() {
            for &v in path {
                s[v as usize] -= lambda[k];
            }
            let base = length(s, path, 0.0);
            let new_lambda = if base >= 1.0 {
                0.0
            } else {
                let mut hi = p * (path.len() as f64).powf(1.0 - p);
                while length(s, path, hi) < 1.0 {
                    hi *= 2.0;
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if length(s, path, mid) < 1.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-16 * hi.max(1e-300) {
                        break;
                    }
                }
                0.5 * (lo + hi)
            };
            for &v in path {
                s[v as usize] += new_lambda;
            }
            lambda[k] = new_lambda;
        }
    };
    // KKT residual: admissibility defects plus complementarity.
    let measure = |lambda: &[f64], s: &[f64]| -> f64 {
        let mut residual = 0.0f64;
        for (k, path) in paths.iter().enumerate() {
            let len = length(s, path, 0.0);
            residual = residual.max((1.0 - len).max(0.0));
            if lambda[k] > 0.0 {
                residual = residual.max((1.0 - len).abs());
            }
        }
        residual
    };

    let mut residual = f64::INFINITY;
    for _ in 0..2_000 {
        sweep(&mut lambda, &mut s);
        residual = measure(&lambda, &s);
        if residual <= 1e-6 {
            break;
        }
    }

    // Newton polish on the active set: solve for multipliers making the
    // active paths exactly tight. The tightness Jacobian M diag(rho') M^T
    // is PSD but can be singular on symmetric instances, so it is solved
    // with a tiny ridge; alternating with sweeps handles set changes.
    let dr = |x: f64| -> f64 {
        if x > 0.0 {
            inv_pm1 * (x / p).powf(inv_pm1 - 1.0) / p
        } else {
            0.0
        }
    };
    for _round in 0..500 {
        if residual <= tol {
            break;
        }
        let active: Vec<usize> = (0..paths.len()).filter(|&k| lambda[k] > 0.0).collect();
        if !active.is_empty() {
            let na = active.len();
            let mut jac = crate::linalg::DenseMatrix::zeros(na);
            let mut rhs = vec![0.0; na];
            let mut maxdiag = 0.0f64;
            for (ai, &k) in active.iter().enumerate() {
                rhs[ai] = 1.0 - length(&s, &paths[k], 0.0);
                for (aj, &l) in active.iter().enumerate() {
                    let lset: std::collections::BTreeSet<u32> =
                        paths[l].iter().copied().collect();
                    let mut acc = 0.0;
                    for &v in &paths[k] {
                        if lset.contains(&v) {
                            acc += dr(s[v as usize]);
                        }
                    }
                    *jac.at_mut(ai, aj) = acc;
                    if ai == aj {
                        maxdiag = maxdiag.max(acc);
                    }
                }
            }
            for i in 0..na {
                *jac.at_mut(i, i) += 1e-12 * maxdiag.max(1e-300);
            }
            if let Some(delta) = crate::linalg::solve_lu(jac, rhs) {
                let mut scale = 1.0f64;
                for (ai, &k) in active.iter().enumerate() {
                    if lambda[k] + delta[ai] < 0.0 {
                        scale = scale.min(0.95 * lambda[k] / -delta[ai]);
                    }
                }
                for (ai, &k) in active.iter().enumerate() {
                    let step = scale * delta[ai];
                    for &v in &paths[k] {
                        s[v as usize] += step;
                    }
                    lambda[k] += step;
                }
            }
        }
        for _ in 0..5 {
            sweep(&mut lambda, &mut s);
        }
        residual = measure(&lambda, &s);
    }

    if residual > tol {
        return Err(Error::NoConvergence(format!(
            "oracle residual {residual:.3e} above {tol:.0e}"
        )));
    }
    Ok(s.iter().map(|&x| rho_of(x).powf(p)).sum())
}

// ---------------------------------------------------------------------------
// Universal density
// ---------------------------------------------------------------------------

/// Universal density at one level: pointwise maximum of the optimal
/// antipodal-pair densities over the flip group, with its p-mass.
#[derive(Debug, Clone)]
pub struct UniversalDensity {
    pub level: usize,
    pub p: f64,
    pub density: Vec<f64>,
    /// `M_p^(m)`, the p-mass of the universal density.
    pub mass: f64,
    /// Face-pair moduli (indices into [`IgsSystem::faces`]).
    pub pair_values: Vec<((usize, usize), f64)>,
    pub converged: bool,
}

/// Solve every distinct antipodal face-pair modulus on `g`, take the
/// pointwise maximum over the flip group, and return the mass `M_p^(m)`.
pub fn universal_density(
    sys: &IgsSystem,
    g: &ReplacementGraph,
    p: f64,
    opts: &SolveOptions,
) -> Result<UniversalDensity> {
    let m = g.level();
    let pairs = crate::system::antipodal_face_pairs(sys);
    if pairs.is_empty() {
        return Err(Error::Semantic(
            "no antipodal face pairs; GR3 fails upstream".into(),
        ));
    }
    let flips = flippings_for_all_types(sys)?;
    // Closure of the flips under composition.
    let mut group: std::collections::BTreeSet<Vec<u8>> = std::collections::BTreeSet::new();
    group.insert((0..sys.n_symbols() as u8).collect());
    for f in &flips {
        group.insert(f.clone());
    }
    loop {
        let members: Vec<Vec<u8>> = group.iter().cloned().collect();
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

    let face_vertices = |face: usize| -> Vec<u32> {
        let (t, star) = sys.faces()[face].aliases[0];
        crate::graph::boundary_set(sys, m, t, star)
    };

    let mut density = vec![0.0f64; g.n_vertices()];
    let mut pair_values = Vec::new();
    let mut converged = true;
    for &(fa, fb) in &pairs {
        let a = face_vertices(fa);
        let b = face_vertices(fb);
        let sol = solve_modulus(g, &a, &b, p, opts)?;
        converged &= sol.converged;
        pair_values.push(((fa, fb), sol.value));
        for alpha in &group {
            let lift = crate::lift::LiftedSymmetry {
                perm: alpha.clone(),
                level: m,
            };
            for v in 0..g.n_vertices() as u64 {
                let img = lift.apply_vertex(v, sys.n_symbols()) as usize;
                let val = sol.density[img];
                if val > density[v as usize] {
                    density[v as usize] = val;
                }
            }
        }
    }
    let mass = density.iter().map(|&r| if r > 0.0 { r.powf(p) } else { 0.0 }).sum();
    Ok(UniversalDensity {
        level: m,
        p,
        density,
        mass,
        pair_values,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{boundary_set, build_graph};
    use crate::system::{gasket, interval, pentagon, sierpinski_carpet, Orientation};

    fn faces(sys: &IgsSystem, m: usize, t: &str) -> (Vec<u32>, Vec<u32>) {
        let ty = sys.type_by_name(t).unwrap();
        (
            boundary_set(sys, m, ty, Orientation::Minus),
            boundary_set(sys, m, ty, Orientation::Plus),
        )
    }

    #[test]
    fn interval_modulus_is_exact() {
        let sys = interval(3).unwrap();
        let opts = SolveOptions::default();
        for m in 1..=3 {
            let g = build_graph(&sys, m, 1 << 20).unwrap();
            let n = g.n_vertices() as f64;
            let (a, b) = faces(&sys, m, "t1");
            for p in [1.5, 2.0, 3.0] {
                let r = solve_modulus(&g, &a, &b, p, &opts).unwrap();
                assert!(r.converged);
                let expect = n.powf(1.0 - p);
                assert!(
                    (r.value - expect).abs() <= 1e-6 * expect,
                    "m={m} p={p}: {} vs {}",
                    r.value,
                    expect
                );
                // Uniform optimal density.
                for &d in &r.density {
                    assert!((d - 1.0 / n).abs() < 1e-6 / n);
                }
            }
        }
    }

    #[test]
    fn carpet_level_one_p1_cut() {
        let sys = sierpinski_carpet();
        let g = build_graph(&sys, 1, 1 << 20).unwrap();
        let (a, b) = faces(&sys, 1, "h");
        let r = solve_modulus(&g, &a, &b, 1.0, &SolveOptions::default()).unwrap();
        assert_eq!(r.value, 2.0);
        assert!(!r.lp_interpolated);
        let bf = brute_force_modulus(&g, &a, &b, 1.0).unwrap();
        assert_eq!(bf, 2.0);
    }

    #[test]
    fn triangle_two_path_program() {
        // Gasket level 1 from {0} to {1}: optimum 1/2 at rho = (1/2, 1/2, 0).
        let sys = gasket();
        let g = build_graph(&sys, 1, 1 << 20).unwrap();
        let bf = brute_force_modulus(&g, &[0], &[1], 2.0).unwrap();
        assert!((bf - 0.5).abs() < 1e-9, "{bf}");
        let r = solve_modulus(&g, &[0], &[1], 2.0, &SolveOptions::default()).unwrap();
        assert!((r.value - 0.5).abs() < 1e-7, "{}", r.value);
    }

    #[test]
    fn solver_matches_oracle_on_small_instances() {
        let opts = SolveOptions::default();
        for (sys, m, t) in [
            (sierpinski_carpet(), 1usize, "h"),
            (gasket(), 1, "a"),
            (gasket(), 2, "a"),
            (pentagon(), 1, "a"),
        ] {
            let g = build_graph(&sys, m, 1 << 20).unwrap();
            let (a, b) = faces(&sys, m, t);
            for p in [1.5, 2.0, 4.0] {
                let r = solve_modulus(&g, &a, &b, p, &opts).unwrap();
                let bf = brute_force_modulus(&g, &a, &b, p).unwrap();
                assert!(
                    (r.value - bf).abs() <= 1e-6 * bf.max(1e-12),
                    "{} m={m} p={p}: solver {} oracle {}",
                    sys.name(),
                    r.value,
                    bf
                );
                // Returned density is admissible.
                let defect = admissibility_defect(&g, &r, &a, &b).unwrap();
                assert!(defect <= 10.0 * opts.eps_adm, "defect {defect}");
            }
        }
    }

    #[test]
    fn mass_monotone_in_p_on_carpet() {
        let sys = sierpinski_carpet();
        let g = build_graph(&sys, 2, 1 << 20).unwrap();
        let opts = SolveOptions::default();
        let mut last = f64::INFINITY;
        for p in [1.2, 1.5, 2.0, 3.0, 4.0] {
            let u = universal_density(&sys, &g, p, &opts).unwrap();
            assert!(u.mass <= last + 1e-9, "mass not monotone at p={p}");
            last = u.mass;
        }
    }

    #[test]
    fn universal_density_interval_is_uniform() {
        let sys = interval(3).unwrap();
        let g = build_graph(&sys, 2, 1 << 20).unwrap();
        let u = universal_density(&sys, &g, 2.0, &SolveOptions::default()).unwrap();
        assert!((u.mass - 1.0 / 9.0).abs() < 1e-7, "{}", u.mass);
        for &d in &u.density {
            assert!((d - 1.0 / 9.0).abs() < 1e-7);
        }
        // Mirror invariance is exact by construction.
        for v in 0..9usize {
            assert_eq!(u.density[v], u.density[8 - v]);
        }
    }

    #[test]
    fn universal_density_sandwich_on_carpet() {
        let sys = sierpinski_carpet();
        let g = build_graph(&sys, 1, 1 << 20).unwrap();
        let opts = SolveOptions::default();
        let u = universal_density(&sys, &g, 2.0, &opts).unwrap();
        let single = u.pair_values[0].1;
        assert!(u.mass >= single - 1e-9);
        assert!(u.mass <= 256.0 * single);
    }

    #[test]
    fn gasket_universal_mass_bounded_at_p1() {
        let sys = gasket();
        let opts = SolveOptions::default();
        for m in 1..=4 {
            let g = build_graph(&sys, m, 1 << 20).unwrap();
            let u = universal_density(&sys, &g, 1.0, &opts).unwrap();
            assert!(u.mass <= 3.0 + 1e-9, "m={m}: {}", u.mass);
            assert!(u.mass >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let sys = interval(3).unwrap();
        let g = build_graph(&sys, 1, 1 << 20).unwrap();
        assert!(solve_modulus(&g, &[0], &[0], 2.0, &SolveOptions::default()).is_err());
        assert!(solve_modulus(&g, &[0], &[2], 99.0, &SolveOptions::default()).is_err());
        let big = build_graph(&sys, 3, 1 << 20).unwrap();
        assert!(matches!(
            brute_force_modulus(&big, &[0], &[26], 1.0),
            Err(Error::TooLarge(_))
        ));
    }
}
