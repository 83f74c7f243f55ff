//! Discrete Legendre–Fenchel and quadratic-cost c-transforms, the discrete
//! subharmonic envelope and their composite.
//!
//! All transforms are exact over the finite node sets: `max`/`min` run over
//! every node, with `+∞` entries skipped and ties resolved to the lowest index.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::linalg::{self, dot, sq_dist, sq_norm};

/// `g*(y) = max_x x·y − f(x)` over the points `xs`; `−∞` if every `f` is `+∞`.
pub fn legendre_points(xs: &[Vec<f64>], f: &[f64], ys: &[Vec<f64>]) -> Vec<f64> {
    ys.iter()
        .map(|y| {
            let mut best = f64::NEG_INFINITY;
            for (x, &fx) in xs.iter().zip(f) {
                if fx == f64::INFINITY {
                    continue;
                }
                let v = dot(x, y) - fx;
                if v > best {
                    best = v;
                }
            }
            best
        })
        .collect()
}

pub fn legendre(f: &GridFunction, dual: &Grid) -> Result<GridFunction> {
    check_dims(&f.grid, dual)?;
    let values = legendre_points(&f.grid.nodes(), &f.values, &dual.nodes());
    GridFunction::new(dual.clone(), values)
}

/// `Q₂(g)(x) = min_y g(y) + |x − y|²`, evaluated through the Legendre form
/// `|x|² − 2 g₀*(x)` with `g₀ = ½|y|² + ½g`.
pub fn q2_points(ys: &[Vec<f64>], g: &[f64], xs: &[Vec<f64>]) -> Vec<f64> {
    let g0: Vec<f64> = ys.iter().zip(g).map(|(y, &v)| 0.5 * sq_norm(y) + 0.5 * v).collect();
    let conj = legendre_points(ys, &g0, xs);
    xs.iter().zip(conj).map(|(x, c)| sq_norm(x) - 2.0 * c).collect()
}

/// `Q₂̄(g)(y) = max_x g(x) − |x − y|²` via `2 ḡ₀*(y) − |y|²` with
/// `ḡ₀ = ½|x|² − ½g`.
pub fn q2bar_points(xs: &[Vec<f64>], g: &[f64], ys: &[Vec<f64>]) -> Vec<f64> {
    let g0: Vec<f64> = xs.iter().zip(g).map(|(x, &v)| 0.5 * sq_norm(x) - 0.5 * v).collect();
    let conj = legendre_points(xs, &g0, ys);
    ys.iter().zip(conj).map(|(y, c)| 2.0 * c - sq_norm(y)).collect()
}

/// Double-loop reference for [`q2_points`]; also returns the lowest-index minimizer.
pub fn q2_direct_points(ys: &[Vec<f64>], g: &[f64], xs: &[Vec<f64>]) -> Vec<(f64, Option<usize>)> {
    xs.iter()
        .map(|x| {
            let mut best = (f64::INFINITY, None);
            for (j, (y, &gy)) in ys.iter().zip(g).enumerate() {
                if gy == f64::INFINITY {
                    continue;
                }
                let v = gy + sq_dist(x, y);
                if v < best.0 {
                    best = (v, Some(j));
                }
            }
            best
        })
        .collect()
}

/// Double-loop reference for [`q2bar_points`] with the lowest-index maximizer.
pub fn q2bar_direct_points(xs: &[Vec<f64>], g: &[f64], ys: &[Vec<f64>]) -> Vec<(f64, Option<usize>)> {
    ys.iter()
        .map(|y| {
            let mut best = (f64::NEG_INFINITY, None);
            for (i, (x, &gx)) in xs.iter().zip(g).enumerate() {
                if gx == f64::NEG_INFINITY {
                    continue;
                }
                let v = gx - sq_dist(x, y);
                if v > best.0 {
                    best = (v, Some(i));
                }
            }
            best
        })
        .collect()
}

pub fn q2(g: &GridFunction, eval: &Grid) -> Result<GridFunction> {
    check_dims(&g.grid, eval)?;
    GridFunction::new(eval.clone(), q2_points(&g.grid.nodes(), &g.values, &eval.nodes()))
}

pub fn q2bar(g: &GridFunction, eval: &Grid) -> Result<GridFunction> {
    check_dims(&g.grid, eval)?;
    GridFunction::new(eval.clone(), q2bar_points(&g.grid.nodes(), &g.values, &eval.nodes()))
}

pub fn q2_direct(g: &GridFunction, eval: &Grid) -> Result<GridFunction> {
    check_dims(&g.grid, eval)?;
    let v = q2_direct_points(&g.grid.nodes(), &g.values, &eval.nodes());
    GridFunction::new(eval.clone(), v.into_iter().map(|p| p.0).collect())
}

pub fn q2bar_direct(g: &GridFunction, eval: &Grid) -> Result<GridFunction> {
    check_dims(&g.grid, eval)?;
    let v = q2bar_direct_points(&g.grid.nodes(), &g.values, &eval.nodes());
    GridFunction::new(eval.clone(), v.into_iter().map(|p| p.0).collect())
}

fn check_dims(a: &Grid, b: &Grid) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EnvelopeOptions {
    pub omega: f64,
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Finish with an exact active-set solve of the complementarity system.
    pub polish: bool,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        EnvelopeOptions { omega: 1.8, tolerance: 1e-10, max_sweeps: 100_000, polish: true }
    }
}

pub fn subharmonic_envelope(g: &GridFunction) -> Result<GridFunction> {
    subharmonic_envelope_with(g, &EnvelopeOptions::default())
}

/// Largest `v ≤ g` with non-negative discrete Laplacian at interior nodes;
/// boundary values follow `g`.
///
/// Projected SOR on `min(g − v, avg(v) − v) = 0`, where `avg` is the
/// stencil-weighted neighbor mean, followed by an active-set polish that
/// solves the Laplace equation off the contact set exactly.
pub fn subharmonic_envelope_with(g: &GridFunction, opts: &EnvelopeOptions) -> Result<GridFunction> {
    let grid = &g.grid;
    if grid.dim() > 2 {
        return Err(Error::Unsupported("subharmonic envelopes are implemented for d ≤ 2".into()));
    }
    if !g.is_finite() {
        return Err(Error::Input("envelope obstacle must be finite".into()));
    }
    let interior = grid.interior_indices();
    let stencils = neighbor_stencils(grid, &interior);
    let mut v = g.values.clone();
    let mut sweeps = 0;
    let mut residual = complementarity_residual(&v, &g.values, &interior, &stencils);
    while residual > opts.tolerance {
        if sweeps >= opts.max_sweeps {
            return Err(Error::NotConverged { sweeps, residual });
        }
        for (k, &i) in interior.iter().enumerate() {
            let avg: f64 = stencils[k].iter().map(|&(j, w)| w * v[j]).sum();
            let next = v[i] + opts.omega * (avg - v[i]);
            v[i] = next.min(g.values[i]);
        }
        sweeps += 1;
        residual = complementarity_residual(&v, &g.values, &interior, &stencils);
    }
    log::debug!("envelope: {sweeps} PSOR sweeps, residual {residual:e}");
    if opts.polish && !interior.is_empty() {
        if let Some(p) = polish(&v, &g.values, &interior, &stencils) {
            let r = complementarity_residual(&p, &g.values, &interior, &stencils);
            if r <= residual.max(1e-14) {
                v = p;
            }
        }
    }
    GridFunction::new(grid.clone(), v)
}

/// Neighbor weights such that `avg_i = Σ w_j v_j` and `L v_i = D (avg_i − v_i)`
/// with `D = Σ_a 2/h_a²`.
fn neighbor_stencils(grid: &Grid, interior: &[usize]) -> Vec<Vec<(usize, f64)>> {
    let diag = grid.laplacian_diagonal();
    interior
        .iter()
        .map(|&i| {
            let mut st = Vec::with_capacity(2 * grid.dim());
            for a in 0..grid.dim() {
                let w = 1.0 / (grid.h(a) * grid.h(a) * diag);
                st.push((grid.neighbor(i, a, 1).unwrap(), w));
                st.push((grid.neighbor(i, a, -1).unwrap(), w));
            }
            st
        })
        .collect()
}

fn complementarity_residual(v: &[f64], g: &[f64], interior: &[usize], st: &[Vec<(usize, f64)>]) -> f64 {
    let mut r = 0.0f64;
    for (k, &i) in interior.iter().enumerate() {
        let avg: f64 = st[k].iter().map(|&(j, w)| w * v[j]).sum();
        r = r.max((g[i] - v[i]).min(avg - v[i]).abs());
    }
    r
}

/// Active-set refinement: fix `v = g` on the contact set, solve the discrete
/// Laplace equation elsewhere, and update the contact set until consistent.
fn polish(v0: &[f64], g: &[f64], interior: &[usize], st: &[Vec<(usize, f64)>]) -> Option<Vec<f64>> {
    let scale = 1.0 + g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut contact: Vec<bool> = interior.iter().map(|&i| g[i] - v0[i] <= 1e-8 * scale).collect();
    let mut slot = vec![usize::MAX; g.len()];
    let mut best: Option<Vec<f64>> = None;
    for _ in 0..100 {
        let free: Vec<usize> = (0..interior.len()).filter(|&k| !contact[k]).collect();
        for (f, &k) in free.iter().enumerate() {
            slot[interior[k]] = f;
        }
        let nf = free.len();
        let mut v = g.to_vec();
        if nf > 0 {
            // v_i − Σ w_j v_j = 0 on free nodes; known values go to the rhs
            let mut a = vec![0.0; nf * nf];
            let mut b = vec![0.0; nf];
            for (f, &k) in free.iter().enumerate() {
                a[f * nf + f] = 1.0;
                for &(j, w) in &st[k] {
                    if slot[j] != usize::MAX {
                        a[f * nf + slot[j]] -= w;
                    } else {
                        b[f] += w * g[j];
                    }
                }
            }
            let x = linalg::solve(&a, nf, &b, 1e-14)?;
            for (f, &k) in free.iter().enumerate() {
                v[interior[k]] = x[f];
            }
        }
        for &k in &free {
            slot[interior[k]] = usize::MAX;
        }
        let mut changed = false;
        for (k, &i) in interior.iter().enumerate() {
            let avg: f64 = st[k].iter().map(|&(j, w)| w * v[j]).sum();
            if contact[k] && avg - v[i] < -1e-13 * scale {
                contact[k] = false;
                changed = true;
            } else if !contact[k] && v[i] - g[i] > 1e-13 * scale {
                contact[k] = true;
                changed = true;
            }
        }
        best = Some(v);
        if !changed {
            break;
        }
    }
    best
}

/// `Q₂ₑ(g)`: the subharmonic envelope of `Q₂(g)` on `eval`.
pub fn q2e(g: &GridFunction, eval: &Grid) -> Result<GridFunction> {
    subharmonic_envelope(&q2(g, eval)?)
}

/// Worst residuals of the transform identities for one grid function `g`,
/// with `X = Y = g.grid`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct IdentityResiduals {
    /// `Q₂Q̄₂Q₂ = Q₂` and `Q̄₂Q₂Q̄₂ = Q̄₂`.
    pub involution: f64,
    /// Legendre-form `Q₂`, `Q̄₂` against direct enumeration.
    pub legendre_form: f64,
    /// `Q̄₂(ψ) = Q̄₂Q₂ₑQ̄₂(ψ)` and `Q₂ₑ(ψ) = Q₂ₑQ̄₂Q₂ₑ(ψ)` for ψ the
    /// subharmonic envelope of `g`.
    pub envelope_fixed_point: f64,
}

pub fn identity_residuals(g: &GridFunction) -> Result<IdentityResiduals> {
    let grid = &g.grid;
    let q = q2(g, grid)?;
    let qb = q2bar(g, grid)?;
    let involution = q2(&q2bar(&q, grid)?, grid)?
        .max_abs_diff(&q)
        .max(q2bar(&q2(&qb, grid)?, grid)?.max_abs_diff(&qb));
    let legendre_form = q.max_abs_diff(&q2_direct(g, grid)?).max(qb.max_abs_diff(&q2bar_direct(g, grid)?));
    let psi = subharmonic_envelope(g)?;
    let a = q2bar(&psi, grid)?;
    let b = q2e(&psi, grid)?;
    let envelope_fixed_point = q2bar(&q2e(&a, grid)?, grid)?
        .max_abs_diff(&a)
        .max(q2e(&q2bar(&b, grid)?, grid)?.max_abs_diff(&b));
    Ok(IdentityResiduals { involution, legendre_form, envelope_fixed_point })
}

/// Lower convex envelope of the samples `(xs[i], vs[i])` evaluated at `xs`
/// (monotone chain; `xs` need not be sorted).
pub fn lower_convex_envelope_1d(xs: &[f64], vs: &[f64]) -> Vec<f64> {
    lower_convex_envelope_1d_at(xs, vs, xs)
}

/// As [`lower_convex_envelope_1d`], evaluated at arbitrary `queries`
/// (`+∞` outside the sample range).
pub fn lower_convex_envelope_1d_at(xs: &[f64], vs: &[f64], queries: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).filter(|&i| vs[i].is_finite()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(vs[a].total_cmp(&vs[b])));
    let mut hull: Vec<usize> = Vec::new();
    for &i in &order {
        if let Some(&last) = hull.last() {
            if xs[last] == xs[i] {
                continue;
            }
        }
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (xs[b] - xs[a]) * (vs[i] - vs[a]) - (vs[b] - vs[a]) * (xs[i] - xs[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    queries
        .iter()
        .map(|&x| {
            if hull.is_empty() {
                return f64::INFINITY;
            }
            let k = hull.partition_point(|&h| xs[h] < x);
            if k < hull.len() && xs[hull[k]] == x {
                return vs[hull[k]];
            }
            if k == 0 || k == hull.len() {
                return f64::INFINITY;
            }
            let (a, b) = (hull[k - 1], hull[k]);
            let t = (x - xs[a]) / (xs[b] - xs[a]);
            vs[a] + t * (vs[b] - vs[a])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(lo: f64, hi: f64, n: usize) -> Grid {
        Grid::line(lo, hi, n).unwrap()
    }

    #[test]
    fn legendre_of_half_square_is_self_dual() {
        let g = line(-2.0, 2.0, 41);
        let f = GridFunction::from_fn(&g, |x| 0.5 * x[0] * x[0]);
        let conj = legendre(&f, &g).unwrap();
        let h = g.h(0);
        for k in 0..g.len() {
            let y = g.node(k)[0];
            assert!((conj.values[k] - 0.5 * y * y).abs() <= 0.5 * h * h + 1e-12);
        }
    }

    #[test]
    fn legendre_of_abs() {
        let g = line(-2.0, 2.0, 41);
        let f = GridFunction::from_fn(&g, |x| x[0].abs());
        let conj = legendre(&f, &g).unwrap();
        for k in 0..g.len() {
            let y = g.node(k)[0];
            let expect = if y.abs() <= 1.0 { 0.0 } else { 2.0 * (y.abs() - 1.0) };
            assert!((conj.values[k] - expect).abs() < 1e-12, "y={y}");
        }
    }

    #[test]
    fn legendre_three_nodes() {
        let g = line(-1.0, 1.0, 3);
        let f = GridFunction::new(g.clone(), vec![1.0, 0.0, 1.0]).unwrap();
        assert_eq!(legendre(&f, &g).unwrap().values, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn q2_examples() {
        let g = line(-2.0, 2.0, 41);
        let zero = GridFunction::constant(&g, 0.0);
        assert!(q2(&zero, &g).unwrap().values.iter().all(|v| v.abs() < 1e-12));
        let sq = GridFunction::from_fn(&g, |y| y[0] * y[0]);
        let r = q2(&sq, &g).unwrap();
        let k = g.locate(&[1.0], 1e-9).unwrap();
        assert!((r.values[k] - 0.5).abs() < 1e-12);
        let mut one = vec![f64::INFINITY; g.len()];
        one[10] = 3.0;
        let single = GridFunction::new(g.clone(), one).unwrap();
        let r = q2(&single, &g).unwrap();
        let y0 = g.node(10)[0];
        for k in 0..g.len() {
            let x = g.node(k)[0];
            assert!((r.values[k] - (3.0 + (x - y0) * (x - y0))).abs() < 1e-12);
        }
    }

    #[test]
    fn q2bar_examples() {
        let g = line(-2.0, 2.0, 41);
        let zero = GridFunction::constant(&g, 0.0);
        assert!(q2bar(&zero, &g).unwrap().values.iter().all(|v| v.abs() < 1e-12));
        let k0 = g.locate(&[0.0], 1e-9).unwrap();
        let sq = GridFunction::from_fn(&g, |x| x[0] * x[0]);
        assert!(q2bar(&sq, &g).unwrap().values[k0].abs() < 1e-12);
        let lin = GridFunction::from_fn(&g, |x| 2.0 * x[0]);
        assert!((q2bar(&lin, &g).unwrap().values[k0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_examples() {
        let g = line(0.0, 2.0, 3);
        let bump = GridFunction::new(g.clone(), vec![0.0, 2.0, 0.0]).unwrap();
        let env = subharmonic_envelope(&bump).unwrap();
        assert!(env.values.iter().all(|v| v.abs() < 1e-10));

        let g2 = Grid::square(-1.0, 1.0, 3).unwrap();
        let mut vals = vec![0.0; 9];
        vals[4] = 1.0;
        let env = subharmonic_envelope(&GridFunction::new(g2.clone(), vals).unwrap()).unwrap();
        assert!(env.values.iter().all(|v| v.abs() < 1e-10));

        let sub = GridFunction::from_fn(&Grid::square(-1.0, 1.0, 9).unwrap(), |x| x[0] * x[0] - 0.5 * x[1] * x[1]);
        let env = subharmonic_envelope(&sub).unwrap();
        assert!(env.max_abs_diff(&sub) < 1e-10);
    }

    #[test]
    fn envelope_matches_convex_hull_in_1d() {
        let g = line(-1.0, 1.0, 31);
        let f = GridFunction::from_fn(&g, |x| (5.0 * x[0]).sin() + x[0] * x[0]);
        let env = subharmonic_envelope(&f).unwrap();
        let xs: Vec<f64> = g.nodes().into_iter().map(|p| p[0]).collect();
        let hull = lower_convex_envelope_1d(&xs, &f.values);
        for (a, b) in env.values.iter().zip(&hull) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn q2e_is_below_q2() {
        let g = line(-1.0, 1.0, 21);
        let f = GridFunction::from_fn(&g, |x| (3.0 * x[0]).cos());
        let a = q2e(&f, &g).unwrap();
        let b = q2(&f, &g).unwrap();
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| *x <= y + 1e-12));
        assert!(q2e(&GridFunction::constant(&g, 0.0), &g).unwrap().values.iter().all(|v| v.abs() < 1e-12));
    }
}
