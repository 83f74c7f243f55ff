//! Decision procedures for the convex, subharmonic and trivial orders, each
//! returning a certificate that can be re-checked without the solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::linalg::{dot, sq_dist};
use crate::lp::{self, LinearProgram, LpStatus, SolverOptions};
use crate::measure::{Coupling, DiscreteMeasure};

pub const MARTINGALE_TOL: f64 = 1e-8;
pub const SEPARATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrderSpec {
    Convex,
    Subharmonic { grid: Grid },
    Trivial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Witness {
    /// Coupling of μ and ν whose conditional barycenters are the μ-atoms.
    Martingale { coupling: Coupling },
    /// Nonnegative mass on interior nodes with `ν − μ = Lᵀm`.
    LaplacianMass { grid: Grid, mass: Vec<f64> },
    /// μ and ν coincide.
    Identity,
    /// A member of the defining class with `∫φ dμ > ∫φ dν`.
    Separator { separator: Separator },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Separator {
    /// `φ(y) = max_i a_i + s_i·y`.
    MaxAffine { intercepts: Vec<f64>, slopes: Vec<Vec<f64>> },
    /// Grid function with non-negative interior Laplacian.
    Subharmonic { function: GridFunction },
    /// Takes `values[k]` at `points[k]` and zero elsewhere.
    AtomTable { points: Vec<Vec<f64>>, values: Vec<f64> },
}

impl Separator {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Separator::MaxAffine { intercepts, slopes } => intercepts
                .iter()
                .zip(slopes)
                .map(|(a, s)| a + dot(s, x))
                .fold(f64::NEG_INFINITY, f64::max),
            Separator::Subharmonic { function } => function.eval(x).0,
            Separator::AtomTable { points, values } => points
                .iter()
                .zip(values)
                .find(|(p, _)| sq_dist(p, x) <= 1e-24)
                .map_or(0.0, |(_, v)| *v),
        }
    }

    /// `∫φ dμ − ∫φ dν`.
    pub fn gap(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        mu.integrate(|x| self.eval(x)) - nu.integrate(|x| self.eval(x))
    }

    /// Whether the function belongs to its defining class.
    pub fn in_class(&self) -> bool {
        match self {
            // a maximum of affine functions is convex by construction
            Separator::MaxAffine { intercepts, slopes } => {
                !intercepts.is_empty() && intercepts.iter().chain(slopes.iter().flatten()).all(|v| v.is_finite())
            }
            Separator::Subharmonic { function } => {
                let scale = 1.0 + function.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                function.is_subharmonic(1e-9 * scale * function.grid.laplacian_diagonal())
            }
            Separator::AtomTable { values, .. } => values.iter().all(|v| v.abs() <= 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderCertificate {
    pub holds: bool,
    pub witness: Witness,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub valid: bool,
    /// Martingale / mass-balance residual, or the separating gap.
    pub residual: f64,
    pub detail: String,
}

impl OrderCertificate {
    /// Re-checks the witness against the two measures by direct arithmetic.
    pub fn verify(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Verification {
        match &self.witness {
            Witness::Martingale { coupling } => {
                let marg = if coupling.source == *mu && coupling.target == *nu {
                    coupling.marginal_residual()
                } else {
                    f64::INFINITY
                };
                let bary = martingale_residual(coupling);
                let neg = (-coupling.min_entry()).max(0.0);
                let r = marg.max(bary);
                Verification {
                    valid: self.holds && r <= MARTINGALE_TOL && neg <= 1e-12,
                    residual: r,
                    detail: format!("marginal residual {marg:e}, barycenter residual {bary:e}"),
                }
            }
            Witness::LaplacianMass { grid, mass } => match laplacian_mass_residual(grid, mass, mu, nu) {
                Ok(r) => {
                    let neg = mass.iter().fold(0.0f64, |m, v| m.max(-v));
                    Verification {
                        valid: self.holds && r <= MARTINGALE_TOL && neg <= 1e-12,
                        residual: r,
                        detail: format!("mass-balance residual {r:e}, most negative mass {neg:e}"),
                    }
                }
                Err(e) => Verification { valid: false, residual: f64::INFINITY, detail: e.to_string() },
            },
            Witness::Identity => {
                let same = mu.approx_eq(nu, 1e-12);
                Verification { valid: self.holds && same, residual: 0.0, detail: "identical measures".into() }
            }
            Witness::Separator { separator } => {
                let gap = separator.gap(mu, nu);
                let class = separator.in_class();
                Verification {
                    valid: !self.holds && class && gap > SEPARATION_TOL,
                    residual: gap,
                    detail: format!("separating gap {gap:e}, in class: {class}"),
                }
            }
        }
    }
}

/// Largest distance between a source atom and the barycenter of its row.
pub fn martingale_residual(c: &Coupling) -> f64 {
    c.row_barycenters()
        .iter()
        .zip(c.source.points())
        .map(|(b, x)| sq_dist(b, x).sqrt())
        .fold(0.0, f64::max)
}

fn laplacian_mass_residual(grid: &Grid, mass: &[f64], mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    if mass.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), found: mass.len() });
    }
    let pm = grid.node_masses(mu.points(), mu.weights(), false)?;
    let pn = grid.node_masses(nu.points(), nu.weights(), false)?;
    let lt = apply_laplacian_transpose(grid, mass);
    Ok(lt
        .iter()
        .zip(pm.iter().zip(&pn))
        .map(|(l, (a, b))| (l - (b - a)).abs())
        .fold(0.0, f64::max))
}

/// `Lᵀm` for `m` supported on interior nodes.
pub fn apply_laplacian_transpose(grid: &Grid, mass: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for k in grid.interior_indices() {
        let m = mass[k];
        if m == 0.0 {
            continue;
        }
        for a in 0..grid.dim() {
            let w = 1.0 / (grid.h(a) * grid.h(a));
            out[grid.neighbor(k, a, 1).unwrap()] += w * m;
            out[grid.neighbor(k, a, -1).unwrap()] += w * m;
            out[k] -= 2.0 * w * m;
        }
    }
    out
}

pub fn check_order(mu: &DiscreteMeasure, nu: &DiscreteMeasure, spec: &OrderSpec) -> Result<OrderCertificate> {
    match spec {
        OrderSpec::Convex => check_convex_order(mu, nu),
        OrderSpec::Subharmonic { grid } => check_subharmonic_order(mu, nu, grid),
        OrderSpec::Trivial => Ok(check_trivial_order(mu, nu)),
    }
}

/// Convex order via feasibility of a martingale coupling. On infeasibility
/// the phase-one multipliers `(a, b, g)` of the source, target and
/// martingale rows give the convex separator `φ(y) = max_i a_i + g_i·(y − x_i)`.
pub fn check_convex_order(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<OrderCertificate> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), found: nu.dim() });
    }
    let (m, n, d) = (mu.len(), nu.len(), mu.dim());
    let mut lp = LinearProgram::with_vars(&vec![0.0; m * n]);
    for (i, w) in mu.weights().iter().enumerate() {
        lp.add_row(&(0..n).map(|j| (i * n + j, 1.0)).collect::<Vec<_>>(), *w);
    }
    for (j, w) in nu.weights().iter().enumerate() {
        lp.add_row(&(0..m).map(|i| (i * n + j, 1.0)).collect::<Vec<_>>(), *w);
    }
    for (i, x) in mu.points().iter().enumerate() {
        for a in 0..d {
            let row: Vec<(usize, f64)> = nu.points().iter().enumerate().map(|(j, y)| (i * n + j, y[a] - x[a])).collect();
            lp.add_row(&row, 0.0);
        }
    }
    let opts = SolverOptions { max_rows: usize::MAX, ..SolverOptions::default() };
    let sol = lp::phase_one(&lp, &opts)?;
    match sol.status {
        LpStatus::Optimal => {
            let coupling = Coupling { source: mu.clone(), target: nu.clone(), mass: sol.primal };
            Ok(OrderCertificate { holds: true, witness: Witness::Martingale { coupling } })
        }
        LpStatus::Infeasible => {
            let y = sol.farkas.expect("infeasible solve carries a Farkas ray");
            let alpha = &y[..m];
            let gamma = &y[m + n..];
            let mut intercepts = Vec::with_capacity(m);
            let mut slopes = Vec::with_capacity(m);
            for (i, x) in mu.points().iter().enumerate() {
                let g = gamma[i * d..(i + 1) * d].to_vec();
                intercepts.push(alpha[i] - dot(&g, x));
                slopes.push(g);
            }
            let separator = Separator::MaxAffine { intercepts, slopes };
            Ok(OrderCertificate { holds: false, witness: Witness::Separator { separator } })
        }
        LpStatus::Unbounded => Err(Error::Solver("feasibility problem reported unbounded".into())),
    }
}

/// Subharmonic order on `grid`: feasibility of `ν − μ = Lᵀm`, `m ≥ 0` on
/// interior nodes. The Farkas ray `y` yields the separator `ψ = −y`, which
/// has `Lψ ≥ 0` and `∫ψ dμ > ∫ψ dν`.
pub fn check_subharmonic_order(mu: &DiscreteMeasure, nu: &DiscreteMeasure, grid: &Grid) -> Result<OrderCertificate> {
    check_subharmonic_order_with(mu, nu, grid, false)
}

/// As [`check_subharmonic_order`], optionally letting the dominating
/// measure ν charge boundary nodes (μ must still be interior).
pub fn check_subharmonic_order_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    grid: &Grid,
    allow_boundary_upper: bool,
) -> Result<OrderCertificate> {
    let pm = grid.node_masses(mu.points(), mu.weights(), true)?;
    let pn = grid.node_masses(nu.points(), nu.weights(), !allow_boundary_upper)?;
    let rhs: Vec<f64> = pn.iter().zip(&pm).map(|(b, a)| b - a).collect();
    let interior = grid.interior_indices();
    let lp = laplacian_cone_program(grid, &interior, &rhs);
    let opts = SolverOptions { max_rows: usize::MAX, ..SolverOptions::default() };
    let sol = lp::phase_one(&lp, &opts)?;
    match sol.status {
        LpStatus::Optimal => {
            let s = laplacian_scale(grid);
            let mut mass = vec![0.0; grid.len()];
            for (k, &node) in interior.iter().enumerate() {
                mass[node] = s * sol.primal[k];
            }
            Ok(OrderCertificate { holds: true, witness: Witness::LaplacianMass { grid: grid.clone(), mass } })
        }
        LpStatus::Infeasible => {
            let y = sol.farkas.expect("infeasible solve carries a Farkas ray");
            let function = GridFunction::new(grid.clone(), y.iter().map(|v| -v).collect())?;
            let separator = Separator::Subharmonic { function };
            Ok(OrderCertificate { holds: false, witness: Witness::Separator { separator } })
        }
        LpStatus::Unbounded => Err(Error::Solver("feasibility problem reported unbounded".into())),
    }
}

/// One row per grid node, one nonnegative variable per interior node:
/// `(Lᵀm)_g = rhs_g`.
fn laplacian_cone_program(grid: &Grid, interior: &[usize], rhs: &[f64]) -> LinearProgram {
    let mut lp = LinearProgram::with_vars(&vec![0.0; interior.len()]);
    let mut slot = vec![usize::MAX; grid.len()];
    for (k, &node) in interior.iter().enumerate() {
        slot[node] = k;
    }
    for g in 0..grid.len() {
        lp.add_row(&laplacian_transpose_row(grid, g, &slot, 0), rhs[g]);
    }
    lp
}

/// Column scale applied to Laplacian mass variables so that their LP
/// entries are O(1): the variable stored is `m / laplacian_scale`.
pub(crate) fn laplacian_scale(grid: &Grid) -> f64 {
    (0..grid.dim()).map(|a| grid.h(a) * grid.h(a)).fold(f64::INFINITY, f64::min)
}

/// Entries of row `g` of `Lᵀ` restricted to interior-node columns, with
/// column `k` mapped to variable `offset + slot[k]` and scaled by
/// [`laplacian_scale`].
pub(crate) fn laplacian_transpose_row(grid: &Grid, g: usize, slot: &[usize], offset: usize) -> Vec<(usize, f64)> {
    let s = laplacian_scale(grid);
    let mut row = Vec::new();
    if slot[g] != usize::MAX {
        row.push((offset + slot[g], -s * grid.laplacian_diagonal()));
    }
    for a in 0..grid.dim() {
        let w = s / (grid.h(a) * grid.h(a));
        for step in [-1, 1] {
            if let Some(nb) = grid.neighbor(g, a, step) {
                if slot[nb] != usize::MAX {
                    row.push((offset + slot[nb], w));
                }
            }
        }
    }
    row
}

pub fn check_trivial_order(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> OrderCertificate {
    if mu.approx_eq(nu, 1e-12) {
        return OrderCertificate { holds: true, witness: Witness::Identity };
    }
    // φ = sign(μ({p}) − ν({p})) on the union of atoms
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut diff: Vec<f64> = Vec::new();
    for (sign, m) in [(1.0, mu), (-1.0, nu)] {
        for (p, w) in m.atoms() {
            match points.iter().position(|q| sq_dist(p, q) <= 1e-24) {
                Some(k) => diff[k] += sign * w,
                None => {
                    points.push(p.to_vec());
                    diff.push(sign * w);
                }
            }
        }
    }
    let values = diff.iter().map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }).collect();
    OrderCertificate {
        holds: false,
        witness: Witness::Separator { separator: Separator::AtomTable { points, values } },
    }
}

/// Reference decision for 1D convex order: equal means and
/// `∫(x − k)₊ dμ ≤ ∫(x − k)₊ dν` at every atom `k` of either measure.
pub fn call_function_check_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure, tol: f64) -> bool {
    let mean = |m: &DiscreteMeasure| m.integrate(|x| x[0]);
    if (mean(mu) - mean(nu)).abs() > tol {
        return false;
    }
    mu.points().iter().chain(nu.points()).all(|k| {
        let call = |m: &DiscreteMeasure| m.integrate(|x| (x[0] - k[0]).max(0.0));
        call(mu) <= call(nu) + tol
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::make_measure;

    fn m1(points: &[f64], weights: &[f64]) -> DiscreteMeasure {
        make_measure(points.iter().map(|&p| vec![p]).collect(), weights.to_vec()).unwrap()
    }

    #[test]
    fn dirac_at_mean_is_dominated() {
        let mu = m1(&[0.0], &[1.0]);
        let nu = m1(&[-1.0, 1.0], &[0.5, 0.5]);
        let cert = check_convex_order(&mu, &nu).unwrap();
        assert!(cert.holds);
        let Witness::Martingale { coupling } = &cert.witness else { panic!() };
        assert!((coupling.get(0, 0) - 0.5).abs() < 1e-12);
        assert!(cert.verify(&mu, &nu).valid);
    }

    #[test]
    fn reversed_pair_is_separated() {
        let mu = m1(&[-1.0, 1.0], &[0.5, 0.5]);
        let nu = m1(&[0.0], &[1.0]);
        let cert = check_convex_order(&mu, &nu).unwrap();
        assert!(!cert.holds);
        let v = cert.verify(&mu, &nu);
        assert!(v.valid, "{v:?}");
    }

    #[test]
    fn uniform_three_below_wide_pair() {
        let mu = m1(&[-1.0, 0.0, 1.0], &[1.0, 1.0, 1.0]);
        let nu = m1(&[-2.0, 2.0], &[0.5, 0.5]);
        assert!(call_function_check_1d(&mu, &nu, 1e-12));
        let cert = check_convex_order(&mu, &nu).unwrap();
        assert!(cert.holds && cert.verify(&mu, &nu).valid);
    }

    #[test]
    fn subharmonic_identity_and_center_spread() {
        let grid = Grid::square(-1.0, 1.0, 5).unwrap();
        let mu = make_measure(vec![vec![0.0, 0.0]], vec![1.0]).unwrap();
        let cert = check_subharmonic_order(&mu, &mu, &grid).unwrap();
        assert!(cert.holds);
        let Witness::LaplacianMass { mass, .. } = &cert.witness else { panic!() };
        assert!(mass.iter().all(|m| m.abs() < 1e-15));

        let nu = make_measure(
            vec![vec![0.5, 0.0], vec![-0.5, 0.0], vec![0.0, 0.5], vec![0.0, -0.5]],
            vec![1.0; 4],
        )
        .unwrap();
        let cert = check_subharmonic_order(&mu, &nu, &grid).unwrap();
        assert!(cert.holds && cert.verify(&mu, &nu).valid);
        let Witness::LaplacianMass { mass, .. } = &cert.witness else { panic!() };
        let h: f64 = 0.5;
        assert!((mass[12] - h * h / 4.0).abs() < 1e-12);

        let back = check_subharmonic_order(&nu, &mu, &grid).unwrap();
        assert!(!back.holds);
        assert!(back.verify(&nu, &mu).valid);
    }

    #[test]
    fn subharmonic_rejects_boundary_and_off_grid_atoms() {
        let grid = Grid::line(-1.0, 1.0, 5).unwrap();
        let edge = m1(&[-1.0], &[1.0]);
        let inside = m1(&[0.0], &[1.0]);
        assert!(matches!(check_subharmonic_order(&edge, &inside, &grid), Err(Error::OnBoundary { .. })));
        let off = m1(&[0.1], &[1.0]);
        assert!(matches!(check_subharmonic_order(&off, &inside, &grid), Err(Error::OffGrid { .. })));
        let out = m1(&[3.0], &[1.0]);
        assert!(matches!(check_subharmonic_order(&out, &inside, &grid), Err(Error::OutsideDomain { .. })));
    }

    #[test]
    fn trivial_order() {
        let a = m1(&[0.0], &[1.0]);
        assert!(check_trivial_order(&a, &a).holds);
        let b = m1(&[1.0], &[1.0]);
        let cert = check_trivial_order(&a, &b);
        assert!(!cert.holds && cert.verify(&a, &b).valid);
        let c = m1(&[0.0, 1.0], &[0.5, 0.5]);
        let d = m1(&[0.0, 1.0], &[0.5 + 1e-6, 0.5 - 1e-6]);
        let cert = check_trivial_order(&c, &d);
        assert!(!cert.holds && cert.verify(&c, &d).valid);
    }
}
