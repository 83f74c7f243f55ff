//! Backward and forward Wasserstein-2 projections onto order cones.
//!
//! The backward convex projection is computed grid-free as a minimum-norm
//! point problem over the polytope of conditional-barycenter configurations;
//! every other variant is a single linear program over a candidate support.

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::duality::{self, DualCertificate, Multipliers};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{self, sq_dist};
use crate::lp::{self, LinearProgram, LpSolution, LpStatus, SolverOptions};
use crate::measure::{make_measure_with, mean, w2_squared, Coupling, DiscreteMeasure};
use crate::order::{self, OrderCertificate, OrderSpec};

pub const MERGE_TOL: f64 = 1e-9;
/// Candidate atoms carrying less mass than this are dropped from LP projections.
pub const MASS_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Backward,
    Forward,
}

/// Where the projected measure may put mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    /// Free barycenters (backward convex only).
    Barycenters,
    Points(Vec<Vec<f64>>),
    Grid(Grid),
}

impl Support {
    pub fn points(&self) -> Result<Vec<Vec<f64>>> {
        match self {
            Support::Barycenters => Err(Error::Unsupported("barycentric support has no fixed point set".into())),
            Support::Points(p) => {
                if p.is_empty() {
                    return Err(Error::Input("candidate support is empty".into()));
                }
                Ok(p.clone())
            }
            Support::Grid(g) => Ok(g.nodes()),
        }
    }

    pub fn grid(&self) -> Option<&Grid> {
        match self {
            Support::Grid(g) => Some(g),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionProblem {
    pub direction: Direction,
    pub order: OrderSpec,
    /// The measure being projected (μ backward, ν forward).
    pub source: DiscreteMeasure,
    /// The cone vertex (ν backward, μ forward).
    pub vertex: DiscreteMeasure,
    pub support: Support,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionResult {
    pub direction: Direction,
    pub method: &'static str,
    pub source: DiscreteMeasure,
    pub vertex: DiscreteMeasure,
    pub projection: DiscreteMeasure,
    /// Backward: source → projection. Forward: projection → source.
    pub coupling: Coupling,
    pub cost: f64,
    pub dual: Option<DualCertificate>,
    /// Primal cost minus the certified lower bound (the minimum-norm-point
    /// gap for the barycentric method, the recomputed dual value otherwise).
    pub duality_gap: f64,
    /// Projection against the vertex in the cone's order.
    pub certificate: OrderCertificate,
    pub iterations: usize,
}

impl ProjectionResult {
    pub fn dual_value(&self) -> Option<f64> {
        self.dual.as_ref().map(|d| d.dual_value)
    }
}

#[derive(Debug, Clone)]
pub struct BarycentricOptions {
    /// Stop once the Frank–Wolfe gap falls below `tol·F + 1e-14·scale`.
    pub tol: f64,
    pub max_iter: usize,
    pub merge_tol: f64,
    /// Shuffle the transport-oracle columns (changes which optimal vertex
    /// the simplex returns on ties).
    pub shuffle_seed: Option<u64>,
}

impl Default for BarycentricOptions {
    fn default() -> Self {
        BarycentricOptions { tol: 1e-10, max_iter: 10_000, merge_tol: MERGE_TOL, shuffle_seed: None }
    }
}

/// Outcome of the barycentric solve before merging.
#[derive(Debug, Clone)]
pub struct BarycentricSolution {
    /// Conditional barycenter of each μ-atom.
    pub barycenters: Vec<Vec<f64>>,
    /// Coupling of μ and ν realizing the barycenters.
    pub plan: Coupling,
    pub objective: f64,
    pub gap: f64,
    pub iterations: usize,
}

pub fn project_backward_convex(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<ProjectionResult> {
    project_backward_convex_with(mu, nu, &BarycentricOptions::default())
}

pub fn project_backward_convex_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    opts: &BarycentricOptions,
) -> Result<ProjectionResult> {
    let sol = barycentric_solve(mu, nu, opts)?;
    let raw = make_measure_with(sol.barycenters.clone(), mu.weights().to_vec(), 0.0)?;
    let projection = raw.merge_within(opts.merge_tol);
    let n_out = projection.len();
    let mut mass = vec![0.0; mu.len() * n_out];
    for (i, b) in sol.barycenters.iter().enumerate() {
        let c = projection
            .points()
            .iter()
            .position(|p| sq_dist(p, b).sqrt() <= opts.merge_tol)
            .expect("every barycenter belongs to a merged atom");
        mass[i * n_out + c] = mu.weights()[i];
    }
    let coupling = Coupling { source: mu.clone(), target: projection.clone(), mass };
    let certificate = order::check_convex_order(&projection, nu)?;
    Ok(ProjectionResult {
        direction: Direction::Backward,
        method: "barycentric",
        source: mu.clone(),
        vertex: nu.clone(),
        cost: coupling.transport_cost(),
        projection,
        coupling,
        dual: None,
        duality_gap: sol.gap,
        certificate,
        iterations: sol.iterations,
    })
}

/// Minimizes `Σ μ_i |x_i − b_i|²` over barycenter configurations
/// `b_i = Σ_j π_ij y_j / μ_i`, `π ∈ Π(μ, ν)`, by Wolfe's minimum-norm-point
/// method: the linear oracle is a transport LP with cost `(b_i − x_i)·y_j`
/// and each major step re-optimizes exactly over the affine hull of the
/// active vertices.
pub fn barycentric_solve(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    opts: &BarycentricOptions,
) -> Result<BarycentricSolution> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), found: nu.dim() });
    }
    let (m, n, d) = (mu.len(), nu.len(), mu.dim());
    let w = mu.weights();
    let x: Vec<f64> = mu.points().iter().flatten().copied().collect();
    let ip = |a: &[f64], b: &[f64]| -> f64 {
        (0..m).map(|i| w[i] * linalg::dot(&a[i * d..(i + 1) * d], &b[i * d..(i + 1) * d])).sum()
    };
    let scale = 1.0 + ip(&x, &x) + nu.integrate(linalg::sq_norm);

    let mut oracle = TransportOracle::new(mu, nu, opts.shuffle_seed)?;
    // start from the vertex maximizing correlation with x
    let start = oracle.solve(&x.iter().map(|v| -v).collect::<Vec<_>>())?;
    let mut verts: Vec<(Vec<f64>, Vec<f64>)> = vec![start];
    let mut lam = vec![1.0];
    let mut iterations = 0;
    let mut gap;
    loop {
        let b = combine(&verts, &lam, |v| &v.0);
        let p: Vec<f64> = b.iter().zip(&x).map(|(bi, xi)| bi - xi).collect();
        let f = ip(&p, &p);
        let (vb, vplan) = oracle.solve(&p)?;
        let diff: Vec<f64> = b.iter().zip(&vb).map(|(a, c)| a - c).collect();
        gap = ip(&p, &diff).max(0.0);
        iterations += 1;
        if gap <= opts.tol * f + 1e-14 * scale {
            break;
        }
        if iterations >= opts.max_iter {
            log::warn!("barycentric solve stopped at iteration cap with gap {gap:e}");
            break;
        }
        if verts.iter().any(|(v, _)| v.iter().zip(&vb).all(|(a, c)| (a - c).abs() <= 1e-15 * scale)) {
            break;
        }
        verts.push((vb, vplan));
        lam.push(0.0);
        // minor cycles
        loop {
            match affine_minimizer(&verts, &x, &ip) {
                Some(alpha) if alpha.iter().all(|&a| a > 1e-14) => {
                    lam = alpha;
                    break;
                }
                Some(alpha) => {
                    let mut theta = 1.0f64;
                    for (l, a) in lam.iter().zip(&alpha) {
                        if *a <= 1e-14 && l - a > 0.0 {
                            theta = theta.min(l / (l - a));
                        }
                    }
                    for (l, a) in lam.iter_mut().zip(&alpha) {
                        *l += theta * (a - *l);
                    }
                    prune_active(&mut verts, &mut lam);
                }
                None => {
                    // affinely dependent set: plain Frank–Wolfe line search
                    let last = verts.len() - 1;
                    let vb = &verts[last].0;
                    let b = combine(&verts[..last], &lam[..last], |v| &v.0);
                    let dir: Vec<f64> = vb.iter().zip(&b).map(|(a, c)| a - c).collect();
                    let denom = ip(&dir, &dir);
                    let pb: Vec<f64> = b.iter().zip(&x).map(|(a, c)| a - c).collect();
                    let gamma = if denom > 0.0 { (-ip(&pb, &dir) / denom).clamp(0.0, 1.0) } else { 0.0 };
                    lam.iter_mut().for_each(|l| *l *= 1.0 - gamma);
                    lam[last] = gamma;
                    prune_active(&mut verts, &mut lam);
                    break;
                }
            }
        }
    }
    let bflat = combine(&verts, &lam, |v| &v.0);
    let plan_mass = combine(&verts, &lam, |v| &v.1);
    let barycenters: Vec<Vec<f64>> = bflat.chunks(d).map(<[f64]>::to_vec).collect();
    let p: Vec<f64> = bflat.iter().zip(&x).map(|(a, c)| a - c).collect();
    let plan = Coupling { source: mu.clone(), target: nu.clone(), mass: plan_mass };
    debug_assert_eq!(plan.mass.len(), m * n);
    Ok(BarycentricSolution { barycenters, plan, objective: ip(&p, &p), gap, iterations })
}

fn combine<T>(verts: &[T], lam: &[f64], get: impl Fn(&T) -> &Vec<f64>) -> Vec<f64> {
    let len = get(&verts[0]).len();
    let mut out = vec![0.0; len];
    for (v, &l) in verts.iter().zip(lam) {
        for (o, a) in out.iter_mut().zip(get(v)) {
            *o += l * a;
        }
    }
    out
}

fn prune_active<T>(verts: &mut Vec<T>, lam: &mut Vec<f64>) {
    let mut k = 0;
    while k < lam.len() {
        if lam[k] <= 1e-14 && lam.len() > 1 {
            lam.remove(k);
            verts.remove(k);
        } else {
            k += 1;
        }
    }
    let s: f64 = lam.iter().sum();
    lam.iter_mut().for_each(|l| *l /= s);
}

/// Affine combination of the active vertices closest to `x`.
fn affine_minimizer(
    verts: &[(Vec<f64>, Vec<f64>)],
    x: &[f64],
    ip: &impl Fn(&[f64], &[f64]) -> f64,
) -> Option<Vec<f64>> {
    let k = verts.len();
    let shifted: Vec<Vec<f64>> = verts.iter().map(|(v, _)| v.iter().zip(x).map(|(a, b)| a - b).collect()).collect();
    let dim = k + 1;
    let mut a = vec![0.0; dim * dim];
    let mut gmax = 0.0f64;
    for i in 0..k {
        for j in 0..=i {
            let g = ip(&shifted[i], &shifted[j]);
            a[i * dim + j] = g;
            a[j * dim + i] = g;
            gmax = gmax.max(g.abs());
        }
        a[i * dim + k] = 1.0;
        a[k * dim + i] = 1.0;
    }
    let mut rhs = vec![0.0; dim];
    rhs[k] = 1.0;
    let sol = linalg::solve(&a, dim, &rhs, 1e-13 * gmax.max(1e-300))?;
    let alpha = sol[..k].to_vec();
    if alpha.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(alpha)
}

/// Transport LP between μ and ν whose cost is re-set for every query.
struct TransportOracle {
    lp: LinearProgram,
    order: Option<Vec<usize>>,
    ys: Vec<Vec<f64>>,
    w: Vec<f64>,
    m: usize,
    n: usize,
    d: usize,
}

impl TransportOracle {
    fn new(mu: &DiscreteMeasure, nu: &DiscreteMeasure, seed: Option<u64>) -> Result<Self> {
        let (m, n) = (mu.len(), nu.len());
        let mut lp = LinearProgram::with_vars(&vec![0.0; m * n]);
        for (i, w) in mu.weights().iter().enumerate() {
            lp.add_row(&(0..n).map(|j| (i * n + j, 1.0)).collect::<Vec<_>>(), *w);
        }
        for (j, w) in nu.weights().iter().enumerate() {
            lp.add_row(&(0..m).map(|i| (i * n + j, 1.0)).collect::<Vec<_>>(), *w);
        }
        let order = seed.map(|s| {
            let mut o: Vec<usize> = (0..m * n).collect();
            o.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
            o
        });
        Ok(TransportOracle {
            lp,
            order,
            ys: nu.points().to_vec(),
            w: mu.weights().to_vec(),
            m,
            n,
            d: mu.dim(),
        })
    }

    /// Vertex of the transport polytope minimizing `Σ π_ij p_i·y_j`;
    /// returns its barycenter configuration and plan.
    fn solve(&mut self, p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (m, n, d) = (self.m, self.n, self.d);
        for i in 0..m {
            for j in 0..n {
                self.lp.set_cost(i * n + j, linalg::dot(&p[i * d..(i + 1) * d], &self.ys[j]));
            }
        }
        let sol = solve_in_order(&self.lp, self.order.as_deref(), &unbounded_rows())?;
        if sol.status != LpStatus::Optimal {
            return Err(Error::Solver(format!("transport oracle returned {:?}", sol.status)));
        }
        let plan = sol.primal;
        let mut b = vec![0.0; m * d];
        for i in 0..m {
            for j in 0..n {
                let pij = plan[i * n + j];
                if pij != 0.0 {
                    for a in 0..d {
                        b[i * d + a] += pij * self.ys[j][a];
                    }
                }
            }
            for a in 0..d {
                b[i * d + a] /= self.w[i];
            }
        }
        Ok((b, plan))
    }
}

fn unbounded_rows() -> SolverOptions {
    SolverOptions { max_rows: usize::MAX, ..SolverOptions::default() }
}

/// Solves `lp` with its columns visited in `order`, mapping the primal back.
pub(crate) fn solve_in_order(lp: &LinearProgram, order: Option<&[usize]>, opts: &SolverOptions) -> Result<LpSolution> {
    match order {
        None => lp::solve_with(lp, opts),
        Some(o) => {
            let mut sol = lp::solve_with(&lp.permute_columns(o), opts)?;
            let mut primal = vec![0.0; sol.primal.len()];
            for (k, &j) in o.iter().enumerate() {
                primal[j] = sol.primal[k];
            }
            sol.primal = primal;
            Ok(sol)
        }
    }
}

/// Raw LP projection: everything needed to assemble a result and a dual.
#[derive(Debug, Clone)]
pub struct LpProjection {
    pub direction: Direction,
    pub candidates: Vec<Vec<f64>>,
    pub grid: Option<Grid>,
    /// Mass of the projection on each candidate.
    pub masses: Vec<f64>,
    /// Row-major transport plan: backward source × candidates, forward
    /// candidates × source.
    pub plan: Vec<f64>,
    pub objective: f64,
    pub lp_dual_objective: f64,
    pub multipliers: Multipliers,
    pub iterations: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LpOptions {
    pub solver: SolverOptions,
    /// Column visiting order seed (for probing non-unique optima).
    pub shuffle_seed: Option<u64>,
    /// Write the assembled LP as sparse triplets to this path.
    pub dump_path: Option<std::path::PathBuf>,
    /// Skip the tie-breaking re-solve and return whichever optimal vertex
    /// the simplex reaches first.
    pub raw_vertex: bool,
}

/// Columns with reduced cost below this (relative to the largest cost)
/// count as part of the optimal face.
pub const FACE_TOL: f64 = 1e-10;

fn run_lp(
    lp: &LinearProgram,
    opts: &LpOptions,
    candidates: &[Vec<f64>],
    candidate_of: impl Fn(usize) -> Option<usize>,
) -> Result<(LpSolution, Vec<f64>)> {
    if let Some(path) = &opts.dump_path {
        std::fs::write(path, lp.to_triplets()).map_err(|e| Error::Input(format!("cannot write LP dump: {e}")))?;
    }
    let order = opts.shuffle_seed.map(|s| {
        let mut o: Vec<usize> = (0..lp.num_vars()).collect();
        o.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
        o
    });
    let sol = solve_in_order(lp, order.as_deref(), &opts.solver)?;
    if sol.status != LpStatus::Optimal || opts.raw_vertex {
        let primal = sol.primal.clone();
        return Ok((sol, primal));
    }
    // Optimal projections need not be unique. Every optimum is
    // complementary to the dual just found, so the optimal face is the
    // feasible set restricted to zero-reduced-cost columns; on it, pick the
    // point minimizing a fixed generic functional of the candidate masses.
    let weights = tie_break_weights(candidates);
    let reduced = lp.reduced_costs(&sol.duals);
    let cmax = lp.cost().iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let keep: Vec<usize> = (0..lp.num_vars()).filter(|&j| reduced[j] <= FACE_TOL * (1.0 + cmax)).collect();
    let mut face = LinearProgram::new();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); lp.num_rows()];
    for (new, &j) in keep.iter().enumerate() {
        face.add_var(candidate_of(j).map_or(0.0, |k| weights[k]));
        for &(r, a) in lp.column(j) {
            rows[r].push((new, a));
        }
    }
    for (r, entries) in rows.iter().enumerate() {
        face.add_row(entries, lp.rhs()[r]);
    }
    match solve_in_order(&face, None, &opts.solver) {
        Ok(s2) if s2.status == LpStatus::Optimal => {
            let mut primal = vec![0.0; lp.num_vars()];
            for (new, &j) in keep.iter().enumerate() {
                primal[j] = s2.primal[new];
            }
            Ok((sol, primal))
        }
        other => {
            log::warn!("tie-breaking re-solve failed ({:?}); keeping the first optimal vertex", other.map(|s| s.status));
            let primal = sol.primal.clone();
            Ok((sol, primal))
        }
    }
}

/// `|z|²` plus a small fixed pseudo-random term, so that no two optimal
/// vertices tie.
fn tie_break_weights(candidates: &[Vec<f64>]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e1e);
    let scale = 1.0 + candidates.iter().map(|z| linalg::sq_norm(z)).fold(0.0, f64::max);
    candidates.iter().map(|z| linalg::sq_norm(z) + 1e-3 * scale * rng.random_range(0.0..1.0)).collect()
}

fn cone_empty_or(sol: &LpSolution) -> Result<()> {
    match sol.status {
        LpStatus::Optimal => Ok(()),
        LpStatus::Infeasible => Err(Error::ConeEmpty),
        LpStatus::Unbounded => Err(Error::Solver("projection LP reported unbounded".into())),
    }
}

/// Backward convex LP over a fixed candidate support: transport `π₁` from μ
/// to `μ̄` on the candidates, and a martingale `π₂` from `μ̄` to ν, with the
/// martingale condition written mass-wise.
pub fn backward_convex_lp(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    support: &Support,
    opts: &LpOptions,
) -> Result<LpProjection> {
    let z = support.points()?;
    check_dim(mu, nu, &z)?;
    let (m, n, k, d) = (mu.len(), nu.len(), z.len(), mu.dim());
    let mut lp = LinearProgram::new();
    for x in mu.points() {
        for zk in &z {
            lp.add_var(sq_dist(x, zk));
        }
    }
    let off2 = m * k;
    for _ in 0..k * n {
        lp.add_var(0.0);
    }
    for (i, w) in mu.weights().iter().enumerate() {
        lp.add_row(&(0..k).map(|c| (i * k + c, 1.0)).collect::<Vec<_>>(), *w);
    }
    for (j, w) in nu.weights().iter().enumerate() {
        lp.add_row(&(0..k).map(|c| (off2 + c * n + j, 1.0)).collect::<Vec<_>>(), *w);
    }
    let link0 = m + n;
    for c in 0..k {
        let mut row: Vec<(usize, f64)> = (0..m).map(|i| (i * k + c, 1.0)).collect();
        row.extend((0..n).map(|j| (off2 + c * n + j, -1.0)));
        lp.add_row(&row, 0.0);
    }
    let mart0 = link0 + k;
    for (c, zc) in z.iter().enumerate() {
        for a in 0..d {
            let row: Vec<(usize, f64)> =
                nu.points().iter().enumerate().map(|(j, y)| (off2 + c * n + j, y[a] - zc[a])).collect();
            lp.add_row(&row, 0.0);
        }
    }
    let (sol, x) = run_lp(&lp, opts, &z, |j| (j < m * k).then_some(j % k))?;
    cone_empty_or(&sol)?;
    let plan = x[..m * k].to_vec();
    let masses = column_sums(&plan, m, k);
    let y = &sol.duals;
    let multipliers = Multipliers::BackwardConvex {
        u: y[..m].to_vec(),
        t: y[link0..link0 + k].to_vec(),
        w: (0..k).map(|c| y[mart0 + c * d..mart0 + (c + 1) * d].to_vec()).collect(),
    };
    Ok(LpProjection {
        direction: Direction::Backward,
        candidates: z,
        grid: support.grid().cloned(),
        masses,
        plan,
        objective: lp.objective(&x),
        lp_dual_objective: sol.dual_objective,
        multipliers,
        iterations: sol.iterations,
    })
}

/// Forward convex LP: martingale `π₂` from μ to `η` on the candidates and
/// transport `π₁` from `η` to ν.
pub fn forward_convex_lp(
    nu: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    support: &Support,
    opts: &LpOptions,
) -> Result<LpProjection> {
    let z = support.points()?;
    check_dim(mu, nu, &z)?;
    let (m, n, k, d) = (mu.len(), nu.len(), z.len(), mu.dim());
    let mut lp = LinearProgram::with_vars(&vec![0.0; m * k]);
    let off1 = m * k;
    for zc in &z {
        for y in nu.points() {
            lp.add_var(sq_dist(zc, y));
        }
    }
    for (i, w) in mu.weights().iter().enumerate() {
        lp.add_row(&(0..k).map(|c| (i * k + c, 1.0)).collect::<Vec<_>>(), *w);
    }
    let mart0 = m;
    for (i, x) in mu.points().iter().enumerate() {
        for a in 0..d {
            let row: Vec<(usize, f64)> = z.iter().enumerate().map(|(c, zc)| (i * k + c, zc[a] - x[a])).collect();
            lp.add_row(&row, 0.0);
        }
    }
    let link0 = mart0 + m * d;
    for c in 0..k {
        let mut row: Vec<(usize, f64)> = (0..m).map(|i| (i * k + c, 1.0)).collect();
        row.extend((0..n).map(|j| (off1 + c * n + j, -1.0)));
        lp.add_row(&row, 0.0);
    }
    let nu0 = link0 + k;
    for (j, w) in nu.weights().iter().enumerate() {
        lp.add_row(&(0..k).map(|c| (off1 + c * n + j, 1.0)).collect::<Vec<_>>(), *w);
    }
    let (sol, x) = run_lp(&lp, opts, &z, |j| (j >= off1 && j < off1 + k * n).then(|| (j - off1) / n))?;
    cone_empty_or(&sol)?;
    let plan = x[off1..off1 + k * n].to_vec();
    let masses = (0..k).map(|c| plan[c * n..(c + 1) * n].iter().sum()).collect();
    let y = &sol.duals;
    let multipliers = Multipliers::ForwardConvex {
        alpha: y[..m].to_vec(),
        gamma: (0..m).map(|i| y[mart0 + i * d..mart0 + (i + 1) * d].to_vec()).collect(),
        t: y[link0..link0 + k].to_vec(),
        beta: y[nu0..nu0 + n].to_vec(),
    };
    Ok(LpProjection {
        direction: Direction::Forward,
        candidates: z,
        grid: support.grid().cloned(),
        masses,
        plan,
        objective: lp.objective(&x),
        lp_dual_objective: sol.dual_objective,
        multipliers,
        iterations: sol.iterations,
    })
}

/// Backward subharmonic LP on a grid: transport from μ to `μ̄` on the nodes
/// and `ν − μ̄ = Lᵀm`, `m ≥ 0` on interior nodes.
pub fn backward_subharmonic_lp(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    grid: &Grid,
    opts: &LpOptions,
) -> Result<LpProjection> {
    check_grid_dim(grid, mu)?;
    check_grid_dim(grid, nu)?;
    for (i, p) in mu.points().iter().enumerate() {
        if !grid.contains(p, 1e-9) {
            return Err(Error::OutsideDomain { index: i, point: p.clone() });
        }
    }
    let pn = grid.node_masses(nu.points(), nu.weights(), true)?;
    let nodes = grid.nodes();
    let (m, g) = (mu.len(), grid.len());
    let interior = grid.interior_indices();
    let mut lp = LinearProgram::new();
    for x in mu.points() {
        for z in &nodes {
            lp.add_var(sq_dist(x, z));
        }
    }
    let off_m = m * g;
    for _ in &interior {
        lp.add_var(0.0);
    }
    let slot = interior_slots(grid, &interior);
    for (i, w) in mu.weights().iter().enumerate() {
        lp.add_row(&(0..g).map(|c| (i * g + c, 1.0)).collect::<Vec<_>>(), *w);
    }
    for c in 0..g {
        let mut row: Vec<(usize, f64)> = (0..m).map(|i| (i * g + c, 1.0)).collect();
        row.extend(order::laplacian_transpose_row(grid, c, &slot, off_m));
        lp.add_row(&row, pn[c]);
    }
    let (sol, x) = run_lp(&lp, opts, &nodes, |j| (j < m * g).then_some(j % g))?;
    cone_empty_or(&sol)?;
    let plan = x[..m * g].to_vec();
    let masses = column_sums(&plan, m, g);
    let multipliers = Multipliers::BackwardSubharmonic { u: sol.duals[..m].to_vec(), t: sol.duals[m..m + g].to_vec() };
    Ok(LpProjection {
        direction: Direction::Backward,
        candidates: nodes,
        grid: Some(grid.clone()),
        masses,
        plan,
        objective: lp.objective(&x),
        lp_dual_objective: sol.dual_objective,
        multipliers,
        iterations: sol.iterations,
    })
}

/// Forward subharmonic LP on a grid: `η − μ = Lᵀm`, `m ≥ 0`, and transport
/// from `η` to ν. `η` may charge boundary nodes.
pub fn forward_subharmonic_lp(
    nu: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    grid: &Grid,
    opts: &LpOptions,
) -> Result<LpProjection> {
    check_grid_dim(grid, mu)?;
    check_grid_dim(grid, nu)?;
    for (i, p) in nu.points().iter().enumerate() {
        if !grid.contains(p, 1e-9) {
            return Err(Error::OutsideDomain { index: i, point: p.clone() });
        }
    }
    let pm = grid.node_masses(mu.points(), mu.weights(), true)?;
    let nodes = grid.nodes();
    let (n, g) = (nu.len(), grid.len());
    let interior = grid.interior_indices();
    let mut lp = LinearProgram::new();
    for z in &nodes {
        for y in nu.points() {
            lp.add_var(sq_dist(z, y));
        }
    }
    let off_m = g * n;
    for _ in &interior {
        lp.add_var(0.0);
    }
    let slot = interior_slots(grid, &interior);
    for c in 0..g {
        let mut row: Vec<(usize, f64)> = (0..n).map(|j| (c * n + j, 1.0)).collect();
        row.extend(order::laplacian_transpose_row(grid, c, &slot, off_m).into_iter().map(|(v, a)| (v, -a)));
        lp.add_row(&row, pm[c]);
    }
    for (j, w) in nu.weights().iter().enumerate() {
        lp.add_row(&(0..g).map(|c| (c * n + j, 1.0)).collect::<Vec<_>>(), *w);
    }
    let (sol, x) = run_lp(&lp, opts, &nodes, |j| (j < g * n).then(|| j / n))?;
    cone_empty_or(&sol)?;
    let plan = x[..g * n].to_vec();
    let masses = (0..g).map(|c| plan[c * n..(c + 1) * n].iter().sum()).collect();
    let multipliers = Multipliers::ForwardSubharmonic { t: sol.duals[..g].to_vec(), beta: sol.duals[g..g + n].to_vec() };
    Ok(LpProjection {
        direction: Direction::Forward,
        candidates: nodes,
        grid: Some(grid.clone()),
        masses,
        plan,
        objective: lp.objective(&x),
        lp_dual_objective: sol.dual_objective,
        multipliers,
        iterations: sol.iterations,
    })
}

fn interior_slots(grid: &Grid, interior: &[usize]) -> Vec<usize> {
    let mut slot = vec![usize::MAX; grid.len()];
    for (k, &node) in interior.iter().enumerate() {
        slot[node] = k;
    }
    slot
}

fn column_sums(plan: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..cols).map(|c| (0..rows).map(|r| plan[r * cols + c]).sum()).collect()
}

fn check_dim(mu: &DiscreteMeasure, nu: &DiscreteMeasure, z: &[Vec<f64>]) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), found: nu.dim() });
    }
    if let Some(p) = z.iter().find(|p| p.len() != mu.dim()) {
        return Err(Error::DimensionMismatch { expected: mu.dim(), found: p.len() });
    }
    Ok(())
}

fn check_grid_dim(grid: &Grid, m: &DiscreteMeasure) -> Result<()> {
    if grid.dim() != m.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), found: m.dim() });
    }
    Ok(())
}

impl LpProjection {
    /// Projected measure (candidates with mass above [`MASS_FLOOR`]) and, for
    /// each candidate, its atom index in that measure.
    pub fn projected_measure(&self) -> Result<(DiscreteMeasure, Vec<Option<usize>>)> {
        let mut pts = Vec::new();
        let mut ws = Vec::new();
        let mut index = vec![None; self.candidates.len()];
        for (c, (&w, p)) in self.masses.iter().zip(&self.candidates).enumerate() {
            if w > MASS_FLOOR {
                index[c] = Some(pts.len());
                pts.push(p.clone());
                ws.push(w);
            }
        }
        Ok((make_measure_with(pts, ws, 0.0)?, index))
    }

    /// Transport plan between the projection and the source measure.
    pub fn coupling(&self, source: &DiscreteMeasure) -> Result<Coupling> {
        let (proj, index) = self.projected_measure()?;
        let k = self.candidates.len();
        let s = source.len();
        match self.direction {
            Direction::Backward => {
                let mut mass = vec![0.0; s * proj.len()];
                for i in 0..s {
                    for c in 0..k {
                        if let Some(a) = index[c] {
                            mass[i * proj.len() + a] += self.plan[i * k + c];
                        }
                    }
                }
                Ok(Coupling { source: source.clone(), target: proj, mass })
            }
            Direction::Forward => {
                let mut mass = vec![0.0; proj.len() * s];
                for c in 0..k {
                    if let Some(a) = index[c] {
                        for j in 0..s {
                            mass[a * s + j] += self.plan[c * s + j];
                        }
                    }
                }
                Ok(Coupling { source: proj, target: source.clone(), mass })
            }
        }
    }
}

fn assemble(
    lpp: LpProjection,
    source: &DiscreteMeasure,
    vertex: &DiscreteMeasure,
    spec: &OrderSpec,
) -> Result<ProjectionResult> {
    let coupling = lpp.coupling(source)?;
    let (projection, _) = lpp.projected_measure()?;
    let certificate = match (lpp.direction, spec) {
        (Direction::Backward, OrderSpec::Subharmonic { grid }) => order::check_subharmonic_order(&projection, vertex, grid)?,
        (Direction::Forward, OrderSpec::Subharmonic { grid }) => {
            order::check_subharmonic_order_with(vertex, &projection, grid, true)?
        }
        (Direction::Backward, _) => order::check_convex_order(&projection, vertex)?,
        (Direction::Forward, _) => order::check_convex_order(vertex, &projection)?,
    };
    let (mu, nu) = match lpp.direction {
        Direction::Backward => (source, vertex),
        Direction::Forward => (vertex, source),
    };
    let dual = duality::certificate_from_lp(&lpp, mu, nu)?;
    let cost = coupling.transport_cost();
    Ok(ProjectionResult {
        direction: lpp.direction,
        method: "lp",
        source: source.clone(),
        vertex: vertex.clone(),
        projection,
        duality_gap: cost - dual.dual_value,
        dual: Some(dual),
        cost,
        coupling,
        certificate,
        iterations: lpp.iterations,
    })
}

pub fn project_backward_convex_lp(mu: &DiscreteMeasure, nu: &DiscreteMeasure, support: &Support) -> Result<ProjectionResult> {
    project_backward_convex_lp_with(mu, nu, support, &LpOptions::default())
}

pub fn project_backward_convex_lp_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    support: &Support,
    opts: &LpOptions,
) -> Result<ProjectionResult> {
    assemble(backward_convex_lp(mu, nu, support, opts)?, mu, nu, &OrderSpec::Convex)
}

pub fn project_forward_convex(nu: &DiscreteMeasure, mu: &DiscreteMeasure, support: &Support) -> Result<ProjectionResult> {
    project_forward_convex_with(nu, mu, support, &LpOptions::default())
}

pub fn project_forward_convex_with(
    nu: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    support: &Support,
    opts: &LpOptions,
) -> Result<ProjectionResult> {
    assemble(forward_convex_lp(nu, mu, support, opts)?, nu, mu, &OrderSpec::Convex)
}

pub fn project_backward_subharmonic(mu: &DiscreteMeasure, nu: &DiscreteMeasure, grid: &Grid) -> Result<ProjectionResult> {
    project_backward_subharmonic_with(mu, nu, grid, &LpOptions::default())
}

pub fn project_backward_subharmonic_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    grid: &Grid,
    opts: &LpOptions,
) -> Result<ProjectionResult> {
    let spec = OrderSpec::Subharmonic { grid: grid.clone() };
    assemble(backward_subharmonic_lp(mu, nu, grid, opts)?, mu, nu, &spec)
}

pub fn project_forward_subharmonic(nu: &DiscreteMeasure, mu: &DiscreteMeasure, grid: &Grid) -> Result<ProjectionResult> {
    project_forward_subharmonic_with(nu, mu, grid, &LpOptions::default())
}

pub fn project_forward_subharmonic_with(
    nu: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    grid: &Grid,
    opts: &LpOptions,
) -> Result<ProjectionResult> {
    let spec = OrderSpec::Subharmonic { grid: grid.clone() };
    assemble(forward_subharmonic_lp(nu, mu, grid, opts)?, nu, mu, &spec)
}

/// Projection onto the trivial-order cone `{vertex}`.
fn project_trivial(problem: &ProjectionProblem) -> Result<ProjectionResult> {
    let (cost, plan) = match problem.direction {
        Direction::Backward => w2_squared(&problem.source, &problem.vertex)?,
        Direction::Forward => w2_squared(&problem.vertex, &problem.source)?,
    };
    Ok(ProjectionResult {
        direction: problem.direction,
        method: "identity",
        source: problem.source.clone(),
        vertex: problem.vertex.clone(),
        projection: problem.vertex.clone(),
        coupling: plan,
        cost,
        dual: None,
        duality_gap: 0.0,
        certificate: order::check_trivial_order(&problem.vertex, &problem.vertex),
        iterations: 0,
    })
}

pub fn project(problem: &ProjectionProblem) -> Result<ProjectionResult> {
    project_with(problem, &LpOptions::default(), &BarycentricOptions::default())
}

pub fn project_with(problem: &ProjectionProblem, lp_opts: &LpOptions, bary: &BarycentricOptions) -> Result<ProjectionResult> {
    let (s, v) = (&problem.source, &problem.vertex);
    match (&problem.order, problem.direction) {
        (OrderSpec::Trivial, _) => project_trivial(problem),
        (OrderSpec::Convex, Direction::Backward) => match &problem.support {
            Support::Barycenters => project_backward_convex_with(s, v, bary),
            other => project_backward_convex_lp_with(s, v, other, lp_opts),
        },
        (OrderSpec::Convex, Direction::Forward) => project_forward_convex_with(s, v, &problem.support, lp_opts),
        (OrderSpec::Subharmonic { grid }, Direction::Backward) => project_backward_subharmonic_with(s, v, grid, lp_opts),
        (OrderSpec::Subharmonic { grid }, Direction::Forward) => project_forward_subharmonic_with(s, v, grid, lp_opts),
    }
}

/// Candidate grid for forward projections: the bounding box of both
/// supports, scaled about its center by `dilate`, with `n` nodes per axis.
pub fn default_forward_grid(mu: &DiscreteMeasure, nu: &DiscreteMeasure, dilate: f64, n: usize) -> Result<Grid> {
    let d = mu.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in mu.points().iter().chain(nu.points()) {
        for a in 0..d {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    for a in 0..d {
        let c = 0.5 * (lo[a] + hi[a]);
        let half = (0.5 * (hi[a] - lo[a]) * dilate).max(0.5);
        lo[a] = c - half;
        hi[a] = c + half;
    }
    Grid::new(lo, hi, vec![n; d])
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub trials: usize,
    pub costs: Vec<f64>,
    /// Largest pairwise W2 distance between returned projections.
    pub spread: f64,
}

/// Re-solves with shuffled column orders and measures how far apart the
/// returned projections are.
pub fn uniqueness_probe(problem: &ProjectionProblem, trials: usize, seed: u64) -> Result<UniquenessReport> {
    let mut projections = Vec::with_capacity(trials);
    let mut costs = Vec::with_capacity(trials);
    for t in 0..trials {
        let s = seed.wrapping_add(t as u64);
        let lp_opts = LpOptions { shuffle_seed: Some(s), raw_vertex: true, ..LpOptions::default() };
        let bary = BarycentricOptions { shuffle_seed: Some(s), ..BarycentricOptions::default() };
        let r = project_with(problem, &lp_opts, &bary)?;
        costs.push(r.cost);
        projections.push(r.projection);
    }
    let mut spread = 0.0f64;
    for a in 0..projections.len() {
        for b in a + 1..projections.len() {
            spread = spread.max(w2_squared(&projections[a], &projections[b])?.0.max(0.0).sqrt());
        }
    }
    Ok(UniquenessReport { trials, costs, spread })
}

#[derive(Debug, Clone, Serialize)]
pub struct GeodesicReport {
    pub mu: DiscreteMeasure,
    pub nu: DiscreteMeasure,
    /// Whether μ is dominated by ν (it is, by construction).
    pub endpoint_order_holds: bool,
    pub midpoint: DiscreteMeasure,
    pub order_holds: bool,
    /// μ-atoms outside the convex hull of the midpoint support.
    pub atoms_outside_hull: Vec<Vec<f64>>,
    pub certificate: OrderCertificate,
}

/// Forward convex cones are not closed under displacement interpolation.
///
/// μ has two atoms at `(±1, 0)`; ν splits each of them along the common
/// direction `(3, 3)`. The W2-optimal plan does not follow that martingale:
/// it sends each μ-atom to the two ν-atoms on its own side, so the McCann
/// midpoint has a support hull that misses both μ-atoms.
pub fn geodesic_demo() -> Result<GeodesicReport> {
    let mu = make_measure_with(vec![vec![-1.0, 0.0], vec![1.0, 0.0]], vec![0.5, 0.5], 0.0)?;
    let nu = make_measure_with(
        vec![vec![-4.0, -3.0], vec![2.0, 3.0], vec![-2.0, -3.0], vec![4.0, 3.0]],
        vec![0.25; 4],
        0.0,
    )?;
    let endpoint_order_holds = order::check_convex_order(&mu, &nu)?.holds;
    let midpoint = mccann_interpolant(&mu, &nu, 0.5)?;
    let certificate = order::check_convex_order(&mu, &midpoint)?;
    let mut atoms_outside_hull = Vec::new();
    for p in mu.points() {
        if !crate::measure::convex_hull_contains(midpoint.points(), p)? {
            atoms_outside_hull.push(p.clone());
        }
    }
    Ok(GeodesicReport {
        mu,
        nu,
        endpoint_order_holds,
        midpoint,
        order_holds: certificate.holds,
        atoms_outside_hull,
        certificate,
    })
}

/// Displacement interpolation `((1−s)x + s y)_# π` along an optimal plan.
pub fn mccann_interpolant(mu: &DiscreteMeasure, nu: &DiscreteMeasure, s: f64) -> Result<DiscreteMeasure> {
    let (_, plan) = w2_squared(mu, nu)?;
    let mut pts = Vec::new();
    let mut ws = Vec::new();
    for (i, j, m) in plan.triplets() {
        if m <= MASS_FLOOR {
            continue;
        }
        let x = &mu.points()[i];
        let y = &nu.points()[j];
        pts.push(x.iter().zip(y).map(|(a, b)| (1.0 - s) * a + s * b).collect());
        ws.push(m);
    }
    make_measure_with(pts, ws, 0.0)
}

/// `|x₀ − mean(ν)|²`, the backward and forward cost for a Dirac vertex or source.
pub fn dirac_cost(x0: &[f64], nu: &DiscreteMeasure) -> f64 {
    sq_dist(x0, &mean(nu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::make_measure;

    fn m1(points: &[f64], weights: &[f64]) -> DiscreteMeasure {
        make_measure(points.iter().map(|&p| vec![p]).collect(), weights.to_vec()).unwrap()
    }

    #[test]
    fn dirac_backward_goes_to_mean() {
        let mu = m1(&[2.0], &[1.0]);
        let nu = m1(&[-1.0, 1.0], &[0.5, 0.5]);
        let r = project_backward_convex(&mu, &nu).unwrap();
        assert_eq!(r.projection.len(), 1);
        assert!(r.projection.points()[0][0].abs() < 1e-12);
        assert!((r.cost - 4.0).abs() < 1e-12);
        assert!(r.certificate.holds);
    }

    #[test]
    fn dominated_measure_is_its_own_projection() {
        let mu = m1(&[-1.0, 0.0, 1.0], &[1.0, 1.0, 1.0]);
        let nu = m1(&[-2.0, 2.0], &[0.5, 0.5]);
        let r = project_backward_convex(&mu, &nu).unwrap();
        assert!(r.cost < 1e-12, "cost {}", r.cost);
        assert!(r.projection.approx_eq(&mu, 1e-9));
    }

    #[test]
    fn single_candidate_lp() {
        let mu = m1(&[2.0], &[1.0]);
        let nu = m1(&[-1.0, 1.0], &[0.5, 0.5]);
        let r = project_backward_convex_lp(&mu, &nu, &Support::Points(vec![vec![0.0]])).unwrap();
        assert!((r.cost - 4.0).abs() < 1e-12);
        let r = project_backward_convex_lp(&nu, &nu, &Support::Points(nu.points().to_vec())).unwrap();
        assert!(r.cost.abs() < 1e-12);
    }

    #[test]
    fn forward_dirac_translates() {
        let mu = m1(&[1.0], &[1.0]);
        let nu = m1(&[-1.0, 1.0], &[0.5, 0.5]);
        let grid = Grid::line(-3.0, 3.0, 13).unwrap();
        let r = project_forward_convex(&nu, &mu, &Support::Grid(grid)).unwrap();
        assert!((r.cost - 1.0).abs() < 1e-10, "cost {}", r.cost);
        assert!(r.projection.approx_eq(&m1(&[0.0, 2.0], &[0.5, 0.5]), 1e-9));
        assert!(r.duality_gap.abs() < 1e-9, "gap {}", r.duality_gap);
    }

    #[test]
    fn geodesic_midpoint_leaves_the_cone() {
        let rep = geodesic_demo().unwrap();
        assert!(rep.endpoint_order_holds);
        assert!(!rep.order_holds);
        assert_eq!(rep.atoms_outside_hull.len(), 2);
    }
}
