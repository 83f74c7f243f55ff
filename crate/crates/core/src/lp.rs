//! Dense revised simplex for linear programs in standard form
//! `min c·x  s.t.  A x = b,  0 <= x <= u`.
//!
//! The basis inverse is kept explicitly and updated by elementary row
//! operations, with a fresh Gauss-Jordan factorization every
//! `refactor_every` pivots. Pricing is Dantzig's rule; after a run of
//! degenerate pivots the solver switches to Bland's rule until the objective
//! moves again. Upper bounds are lowered to extra equality rows with slacks.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    /// Relative gap tolerance checked on every optimal solve.
    pub gap_tol: f64,
    pub refactor_every: usize,
    /// Degenerate pivots in a row before switching to Bland's rule.
    pub degenerate_limit: usize,
    pub max_restarts: usize,
    /// Cap on the basis dimension (rows after lowering upper bounds).
    pub max_rows: usize,
    pub max_vars: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feasibility_tol: 1e-9,
            optimality_tol: 1e-9,
            pivot_tol: 1e-7,
            gap_tol: 1e-8,
            refactor_every: 100,
            degenerate_limit: 50,
            max_restarts: 3,
            max_rows: 2000,
            max_vars: 2_000_000,
        }
    }
}

/// Sparse LP in standard form. Variables are nonnegative, optionally bounded
/// above; every row is an equality.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    cost: Vec<f64>,
    upper: Vec<f64>,
    cols: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    /// One multiplier per row, in the sign convention of the rows as given.
    pub duals: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// Phase-one residual (sum of artificial values) at termination.
    pub infeasibility: f64,
    /// For infeasible programs: `y` with `yᵀA <= 0` and `yᵀb > 0`.
    pub farkas: Option<Vec<f64>>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_vars(costs: &[f64]) -> Self {
        let mut lp = Self::new();
        for &c in costs {
            lp.add_var(c);
        }
        lp
    }

    pub fn add_var(&mut self, cost: f64) -> usize {
        self.cost.push(cost);
        self.upper.push(f64::INFINITY);
        self.cols.push(Vec::new());
        self.cost.len() - 1
    }

    pub fn set_cost(&mut self, var: usize, cost: f64) {
        self.cost[var] = cost;
    }

    pub fn set_upper(&mut self, var: usize, upper: f64) {
        self.upper[var] = upper;
    }

    /// Appends the equality row `Σ coef·x_var = rhs`; repeated variables are summed.
    pub fn add_row(&mut self, entries: &[(usize, f64)], rhs: f64) -> usize {
        let row = self.rhs.len();
        self.rhs.push(rhs);
        for &(var, coef) in entries {
            assert!(var < self.cols.len(), "row references unknown variable {var}");
            if coef == 0.0 {
                continue;
            }
            let col = &mut self.cols[var];
            match col.last_mut() {
                Some(last) if last.0 == row => last.1 += coef,
                _ => col.push((row, coef)),
            }
        }
        row
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn column(&self, var: usize) -> &[(usize, f64)] {
        &self.cols[var]
    }

    /// `‖Ax − b‖_∞`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let mut r: Vec<f64> = self.rhs.iter().map(|b| -b).collect();
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, a) in col {
                r[i] += a * x[j];
            }
        }
        r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Reduced costs `c − Aᵀy`.
    pub fn reduced_costs(&self, y: &[f64]) -> Vec<f64> {
        self.cols
            .iter()
            .zip(&self.cost)
            .map(|(col, c)| c - col.iter().map(|&(i, a)| a * y[i]).sum::<f64>())
            .collect()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        linalg::dot(&self.cost, x)
    }

    /// Plain-text sparse triplet dump: a header line, then `row col value`
    /// lines for A, `obj col value` for c and `rhs row value` for b.
    pub fn to_triplets(&self) -> String {
        let mut s = String::new();
        let nnz: usize = self.cols.iter().map(Vec::len).sum();
        let _ = writeln!(s, "# rows {} cols {} nnz {}", self.num_rows(), self.num_vars(), nnz);
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, a) in col {
                let _ = writeln!(s, "{i} {j} {a:.17e}");
            }
        }
        for (j, c) in self.cost.iter().enumerate() {
            if *c != 0.0 {
                let _ = writeln!(s, "obj {j} {c:.17e}");
            }
        }
        for (i, b) in self.rhs.iter().enumerate() {
            let _ = writeln!(s, "rhs {i} {b:.17e}");
        }
        for (j, u) in self.upper.iter().enumerate() {
            if u.is_finite() {
                let _ = writeln!(s, "ub {j} {u:.17e}");
            }
        }
        s
    }

    /// Returns a copy with columns reordered so that new column `k` is old
    /// column `order[k]`.
    pub fn permute_columns(&self, order: &[usize]) -> LinearProgram {
        assert_eq!(order.len(), self.num_vars());
        LinearProgram {
            cost: order.iter().map(|&j| self.cost[j]).collect(),
            upper: order.iter().map(|&j| self.upper[j]).collect(),
            cols: order.iter().map(|&j| self.cols[j].clone()).collect(),
            rhs: self.rhs.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        for (j, c) in self.cost.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::InvalidProgram(format!("non-finite cost on variable {j}")));
            }
        }
        for (i, b) in self.rhs.iter().enumerate() {
            if !b.is_finite() {
                return Err(Error::InvalidProgram(format!("non-finite rhs on row {i}")));
            }
        }
        for (j, col) in self.cols.iter().enumerate() {
            if col.iter().any(|(_, a)| !a.is_finite()) {
                return Err(Error::InvalidProgram(format!("non-finite entry in column {j}")));
            }
            if self.upper[j] < 0.0 || self.upper[j].is_nan() {
                return Err(Error::InvalidProgram(format!("negative upper bound on variable {j}")));
            }
        }
        Ok(())
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    solve_with(lp, &SolverOptions::default())
}

/// Phase one only.
pub fn feasible(lp: &LinearProgram) -> Result<bool> {
    Ok(phase_one(lp, &SolverOptions::default())?.status != LpStatus::Infeasible)
}

/// Runs phase one and returns the solution of the feasibility problem
/// (objective zero); `infeasibility` carries the final residual.
pub fn phase_one(lp: &LinearProgram, opts: &SolverOptions) -> Result<LpSolution> {
    let mut zero = lp.clone();
    zero.cost.iter_mut().for_each(|c| *c = 0.0);
    solve_with(&zero, opts)
}

pub fn solve_with(lp: &LinearProgram, opts: &SolverOptions) -> Result<LpSolution> {
    lp.validate()?;
    let mut restarts = 0;
    let mut bland = false;
    loop {
        match Simplex::new(lp, opts)?.run(bland) {
            Ok(sol) => return Ok(sol),
            Err(Error::NumericalBreakdown(msg)) if restarts < opts.max_restarts => {
                log::debug!("simplex restart {} after breakdown: {msg}", restarts + 1);
                restarts += 1;
                bland = true;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Internal standard-form working copy: original rows (dropped zero rows
/// removed, signs flipped so that b >= 0), followed by one row per finite
/// upper bound.
struct Simplex<'a> {
    opts: &'a SolverOptions,
    m: usize,
    /// Structural + bound-slack column count; artificials follow.
    n: usize,
    n_orig: usize,
    cols: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    b: Vec<f64>,
    /// internal row -> (original row, sign); `None` for bound rows.
    row_map: Vec<Option<(usize, f64)>>,
    orig_rows: usize,
    basis: Vec<usize>,
    pos: Vec<Option<usize>>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    since_refactor: usize,
    iterations: usize,
    early_infeasible: Option<usize>,
}

impl<'a> Simplex<'a> {
    fn new(lp: &LinearProgram, opts: &'a SolverOptions) -> Result<Self> {
        let n_orig = lp.num_vars();
        if n_orig > opts.max_vars {
            return Err(Error::TooLarge { what: "variables", size: n_orig, cap: opts.max_vars });
        }
        let orig_rows = lp.num_rows();
        let mut row_nnz = vec![0usize; orig_rows];
        for col in &lp.cols {
            for &(i, _) in col {
                row_nnz[i] += 1;
            }
        }
        let mut early_infeasible = None;
        let mut new_index = vec![usize::MAX; orig_rows];
        let mut row_map = Vec::new();
        let mut b = Vec::new();
        for i in 0..orig_rows {
            if row_nnz[i] == 0 {
                if lp.rhs[i].abs() > opts.feasibility_tol && early_infeasible.is_none() {
                    early_infeasible = Some(i);
                }
                continue;
            }
            let sign = if lp.rhs[i] < 0.0 { -1.0 } else { 1.0 };
            new_index[i] = row_map.len();
            row_map.push(Some((i, sign)));
            b.push(sign * lp.rhs[i]);
        }
        let mut cols: Vec<Vec<(usize, f64)>> = lp
            .cols
            .iter()
            .map(|col| {
                col.iter()
                    .filter(|(i, _)| new_index[*i] != usize::MAX)
                    .map(|&(i, a)| {
                        let r = new_index[i];
                        (r, a * row_map[r].unwrap().1)
                    })
                    .collect()
            })
            .collect();
        let mut cost = lp.cost.clone();
        for j in 0..n_orig {
            let u = lp.upper[j];
            if u.is_finite() {
                let r = row_map.len();
                row_map.push(None);
                b.push(u);
                cols[j].push((r, 1.0));
                cols.push(vec![(r, 1.0)]);
                cost.push(0.0);
            }
        }
        let m = b.len();
        if m > opts.max_rows {
            return Err(Error::TooLarge { what: "rows", size: m, cap: opts.max_rows });
        }
        let n = cols.len();
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = 1.0;
        }
        let mut pos = vec![None; n + m];
        for (i, p) in pos.iter_mut().skip(n).enumerate() {
            *p = Some(i);
        }
        Ok(Simplex {
            opts,
            m,
            n,
            n_orig,
            cols,
            cost,
            xb: b.clone(),
            b,
            row_map,
            orig_rows,
            basis: (n..n + m).collect(),
            pos,
            binv,
            since_refactor: 0,
            iterations: 0,
            early_infeasible,
        })
    }

    fn column_dot(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            self.cols[j].iter().map(|&(i, a)| a * y[i]).sum()
        } else {
            y[j - self.n]
        }
    }

    /// `B⁻¹ A_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        if j < self.n {
            for &(r, a) in &self.cols[j] {
                for (i, al) in alpha.iter_mut().enumerate() {
                    *al += self.binv[i * m + r] * a;
                }
            }
        } else {
            let r = j - self.n;
            for (i, al) in alpha.iter_mut().enumerate() {
                *al = self.binv[i * m + r];
            }
        }
        alpha
    }

    /// `c_Bᵀ B⁻¹`.
    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &bv) in self.basis.iter().enumerate() {
            let cb = cost[bv];
            if cb == 0.0 {
                continue;
            }
            let row = &self.binv[i * m..(i + 1) * m];
            for (yr, v) in y.iter_mut().zip(row) {
                *yr += cb * v;
            }
        }
        y
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut bmat = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            if j < self.n {
                for &(r, a) in &self.cols[j] {
                    bmat[r * m + k] = a;
                }
            } else {
                bmat[(j - self.n) * m + k] = 1.0;
            }
        }
        self.binv = match linalg::invert(&bmat, m, 1e-11) {
            Some(inv) => inv,
            None => {
                // swap dependent basis columns for artificials on uncovered rows
                let (dependent, free) = linalg::dependent_columns(&bmat, m, 1e-9);
                log::debug!("basis repair: replacing {} columns", dependent.len());
                for (&k, &r) in dependent.iter().zip(&free) {
                    let old = self.basis[k];
                    self.pos[old] = None;
                    if let Some(k2) = self.pos[self.n + r] {
                        // artificial r already basic elsewhere; should not happen
                        return Err(Error::NumericalBreakdown(format!(
                            "basis repair conflict at row {r} (position {k2})"
                        )));
                    }
                    self.basis[k] = self.n + r;
                    self.pos[self.n + r] = Some(k);
                    for i in 0..m {
                        bmat[i * m + k] = if i == r { 1.0 } else { 0.0 };
                    }
                }
                linalg::invert(&bmat, m, 1e-11).ok_or_else(|| {
                    Error::NumericalBreakdown("singular basis after repair".into())
                })?
            }
        };
        self.recompute_xb();
        self.since_refactor = 0;
        Ok(())
    }

    fn recompute_xb(&mut self) {
        let m = self.m;
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.xb[i] = linalg::dot(row, &self.b);
        }
        // one step of iterative refinement against the true basis
        let mut r = self.b.clone();
        for (k, &j) in self.basis.iter().enumerate() {
            let v = self.xb[k];
            if j < self.n {
                for &(row, a) in &self.cols[j] {
                    r[row] -= a * v;
                }
            } else {
                r[j - self.n] -= v;
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.xb[i] += linalg::dot(row, &r);
        }
    }

    fn pivot(&mut self, p: usize, q: usize, alpha: &[f64]) {
        let m = self.m;
        let ap = alpha[p];
        let theta = (self.xb[p].max(0.0) / ap).max(0.0);
        for (i, &ai) in alpha.iter().enumerate() {
            if i != p && ai != 0.0 {
                self.xb[i] -= theta * ai;
            }
        }
        self.xb[p] = theta;
        let (before, rest) = self.binv.split_at_mut(p * m);
        let (prow, after) = rest.split_at_mut(m);
        let inv = 1.0 / ap;
        prow.iter_mut().for_each(|v| *v *= inv);
        for (i, &ai) in alpha.iter().enumerate() {
            if i == p || ai == 0.0 {
                continue;
            }
            let row = if i < p {
                &mut before[i * m..(i + 1) * m]
            } else {
                &mut after[(i - p - 1) * m..(i - p) * m]
            };
            for (v, pv) in row.iter_mut().zip(prow.iter()) {
                *v -= ai * pv;
            }
        }
        let old = self.basis[p];
        self.pos[old] = None;
        self.basis[p] = q;
        self.pos[q] = Some(p);
        self.since_refactor += 1;
        self.iterations += 1;
    }

    /// Runs the simplex loop for `cost` until optimality. Returns `false` if
    /// an unbounded ray was found.
    fn optimize(&mut self, cost: &[f64], allow_artificial: bool, mut bland: bool) -> Result<bool> {
        let tol = self.opts.optimality_tol * (1.0 + cost.iter().fold(0.0f64, |a, c| a.max(c.abs())));
        let forced_bland = bland;
        let mut degenerate_run = 0usize;
        let limit = 50 * (self.m + self.n) + 10_000;
        let mut local_iters = 0usize;
        let mut y = self.duals(cost);
        let n_enter = if allow_artificial { self.n + self.m } else { self.n };
        loop {
            if self.since_refactor >= self.opts.refactor_every {
                self.refactor()?;
                y = self.duals(cost);
            }
            local_iters += 1;
            if local_iters > limit {
                return Err(Error::NumericalBreakdown(format!(
                    "iteration limit {limit} exceeded (bland = {bland})"
                )));
            }
            // pricing
            let mut entering = None;
            let mut best = -tol;
            for j in 0..n_enter {
                if self.pos[j].is_some() {
                    continue;
                }
                let d = cost[j] - self.column_dot(j, &y);
                if d < best {
                    entering = Some((j, d));
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some((q, dq)) = entering else {
                // confirm with fresh duals before declaring optimality
                if self.since_refactor > 0 {
                    self.refactor()?;
                    y = self.duals(cost);
                    let again = (0..n_enter)
                        .any(|j| self.pos[j].is_none() && cost[j] - self.column_dot(j, &y) < -tol);
                    if again {
                        continue;
                    }
                }
                return Ok(true);
            };
            let alpha = self.ftran(q);
            // Harris two-pass ratio test: relax the bound by the feasibility
            // tolerance, then take the largest pivot among rows within it.
            let amax = alpha.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let piv = self.opts.pivot_tol.max(1e-9 * amax);
            let delta = self.opts.feasibility_tol;
            let mut bound = f64::INFINITY;
            // in phase two, basic artificials are pinned at zero and block
            // movement in either direction
            let pinned = |i: usize| !allow_artificial && self.basis[i] >= self.n;
            let eff = |i: usize, a: f64| if pinned(i) { a.abs() } else { a };
            for (i, &a) in alpha.iter().enumerate() {
                let a = eff(i, a);
                if a > piv {
                    bound = bound.min((self.xb[i].max(0.0) + delta) / a);
                }
            }
            if !bound.is_finite() {
                return Ok(false);
            }
            let mut leave: Option<usize> = None;
            let mut min_ratio = f64::INFINITY;
            for (i, &a) in alpha.iter().enumerate() {
                let a = eff(i, a);
                if a <= piv {
                    continue;
                }
                let r = self.xb[i].max(0.0) / a;
                if r > bound {
                    continue;
                }
                min_ratio = min_ratio.min(r);
                leave = Some(match leave {
                    None => i,
                    Some(l) => {
                        let art_i = self.basis[i] >= self.n;
                        let art_l = self.basis[l] >= self.n;
                        if art_i != art_l {
                            if art_i { i } else { l }
                        } else if bland {
                            if self.basis[i] < self.basis[l] { i } else { l }
                        } else if a > eff(l, alpha[l]) {
                            i
                        } else {
                            l
                        }
                    }
                });
            }
            let p = leave.expect("ratio test found a finite minimum");
            let rho: Vec<f64> = self.binv[p * self.m..(p + 1) * self.m].to_vec();
            let ap = alpha[p];
            self.pivot(p, q, &alpha);
            // y' = y + (d_q / α_p) ρ_p
            let f = dq / ap;
            for (yr, r) in y.iter_mut().zip(&rho) {
                *yr += f * r;
            }
            if min_ratio <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run > self.opts.degenerate_limit {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = forced_bland;
            }
        }
    }

    fn run(mut self, bland: bool) -> Result<LpSolution> {
        let m = self.m;
        let n = self.n;
        if let Some(row) = self.early_infeasible {
            let mut farkas = vec![0.0; self.orig_rows];
            farkas[row] = 1.0;
            return Ok(self.infeasible_solution(farkas, f64::INFINITY));
        }
        // phase one
        let mut c1 = vec![0.0; n + m];
        c1[n..].iter_mut().for_each(|c| *c = 1.0);
        if m > 0 {
            self.optimize(&c1, true, bland)?;
            self.refactor()?;
        }
        let infeas: f64 = self
            .basis
            .iter()
            .zip(&self.xb)
            .filter(|(j, _)| **j >= n)
            .map(|(_, v)| v.max(0.0))
            .sum();
        let bscale = 1.0 + self.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if infeas > self.opts.feasibility_tol * bscale {
            let y = self.duals(&c1);
            let farkas = self.to_original_duals(&y);
            return Ok(self.infeasible_solution(farkas, infeas));
        }
        self.refactor()?;
        // phase two
        let mut c2 = vec![0.0; n + m];
        c2[..n].copy_from_slice(&self.cost);
        let bounded = self.optimize(&c2, false, bland)?;
        self.refactor()?;
        let residual_art = self
            .basis
            .iter()
            .zip(&self.xb)
            .filter(|(j, _)| **j >= n)
            .fold(0.0f64, |a, (_, v)| a.max(v.abs()));
        // callers may run with a zero feasibility tolerance; round-off still leaves a trace
        if residual_art > self.opts.feasibility_tol.max(1e-12) * bscale {
            return Err(Error::NumericalBreakdown(format!(
                "artificial left at level {residual_art:e} after basis repair"
            )));
        }
        let mut x_int = vec![0.0; n];
        for (k, &j) in self.basis.iter().enumerate() {
            if j < n {
                x_int[j] = self.xb[k];
            }
        }
        let primal: Vec<f64> = x_int[..self.n_orig]
            .iter()
            .map(|&v| if v < 0.0 && v > -1e-9 { 0.0 } else { v })
            .collect();
        let y = self.duals(&c2);
        let duals = self.to_original_duals(&y);
        if !bounded {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                primal,
                duals,
                primal_objective: f64::NEG_INFINITY,
                dual_objective: f64::NEG_INFINITY,
                infeasibility: infeas,
                farkas: None,
                iterations: self.iterations,
            });
        }
        let primal_objective: f64 = c2[..n].iter().zip(&x_int).map(|(c, x)| c * x).sum();
        let dual_objective: f64 = y.iter().zip(&self.b).map(|(a, b)| a * b).sum();
        let gap = (primal_objective - dual_objective).abs();
        if gap > self.opts.gap_tol * (1.0 + primal_objective.abs()) {
            return Err(Error::NumericalBreakdown(format!(
                "duality gap {gap:e} at optimum (primal {primal_objective}, dual {dual_objective})"
            )));
        }
        Ok(LpSolution {
            status: LpStatus::Optimal,
            primal,
            duals,
            primal_objective,
            dual_objective,
            infeasibility: infeas,
            farkas: None,
            iterations: self.iterations,
        })
    }

    /// Maps internal duals back to the caller's rows. Bound-row multipliers
    /// are folded into the dual objective but not reported per row.
    fn to_original_duals(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.orig_rows];
        for (r, map) in self.row_map.iter().enumerate() {
            if let Some((orig, sign)) = map {
                out[*orig] = sign * y[r];
            }
        }
        out
    }

    fn infeasible_solution(&self, farkas: Vec<f64>, infeas: f64) -> LpSolution {
        LpSolution {
            status: LpStatus::Infeasible,
            primal: vec![0.0; self.n_orig],
            duals: vec![0.0; self.orig_rows],
            primal_objective: f64::INFINITY,
            dual_objective: f64::INFINITY,
            infeasibility: infeas,
            farkas: Some(farkas),
            iterations: self.iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(cost: f64, coef: f64, rhs: f64) -> LinearProgram {
        let mut lp = LinearProgram::with_vars(&[cost]);
        lp.add_row(&[(0, coef)], rhs);
        lp
    }

    #[test]
    fn fixed_variable_is_optimal() {
        let sol = solve(&single(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.primal[0] - 1.0).abs() < 1e-12);
        assert!((sol.primal_objective - 1.0).abs() < 1e-12);
        assert!((sol.dual_objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_ray_detected() {
        // min -x, no rows
        let lp = LinearProgram::with_vars(&[-1.0]);
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Unbounded);
        // min -x s.t. x - y = 0
        let mut lp = LinearProgram::with_vars(&[-1.0, 0.0]);
        lp.add_row(&[(0, 1.0), (1, -1.0)], 0.0);
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn negative_rhs_is_infeasible_with_farkas_ray() {
        let lp = single(0.0, 1.0, -1.0);
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
        let y = sol.farkas.unwrap();
        assert!(y[0] * -1.0 > 0.0);
        assert!(y[0] * 1.0 <= 1e-12);
        assert!(!feasible(&lp).unwrap());
    }

    #[test]
    fn feasibility_examples() {
        assert!(feasible(&single(0.0, 1.0, 1.0)).unwrap());
        let mut lp = LinearProgram::with_vars(&[0.0, 0.0]);
        lp.add_row(&[(0, 1.0), (1, 1.0)], 1.0);
        assert!(feasible(&lp).unwrap());
    }

    #[test]
    fn upper_bounds_are_respected() {
        // min -x - y s.t. x + y + s = 3, x <= 1
        let mut lp = LinearProgram::with_vars(&[-1.0, -2.0, 0.0]);
        lp.add_row(&[(0, 1.0), (1, 1.0), (2, 1.0)], 3.0);
        lp.set_upper(1, 1.0);
        let sol = solve(&lp).unwrap();
        assert!((sol.primal_objective + 4.0).abs() < 1e-12, "{:?}", sol.primal);
        assert!((sol.primal[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        // transport 2x2 with its redundant marginal row
        let mut lp = LinearProgram::with_vars(&[0.0, 1.0, 1.0, 0.0]);
        lp.add_row(&[(0, 1.0), (1, 1.0)], 0.5);
        lp.add_row(&[(2, 1.0), (3, 1.0)], 0.5);
        lp.add_row(&[(0, 1.0), (2, 1.0)], 0.5);
        lp.add_row(&[(1, 1.0), (3, 1.0)], 0.5);
        let sol = solve(&lp).unwrap();
        assert!(sol.primal_objective.abs() < 1e-12);
        assert!(lp.residual(&sol.primal) < 1e-12);
    }

    #[test]
    fn zero_row_with_nonzero_rhs_is_infeasible() {
        let mut lp = LinearProgram::with_vars(&[1.0]);
        lp.add_row(&[], 2.0);
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn triplet_dump_lists_entries() {
        let dump = single(1.0, 2.0, 3.0).to_triplets();
        assert!(dump.starts_with("# rows 1 cols 1 nnz 1"));
        assert!(dump.contains("0 0 2.00000000000000000e0"));
    }
}
