//! Dual potentials, duality gaps and optimal-potential checks.
//!
//! Dual solutions are read off the multipliers of the projection LPs, then
//! turned into explicit potentials whose objective is recomputed from
//! scratch. The recomputed value never falls below the LP dual objective,
//! so a small gap is a certificate independent of the solver's bookkeeping.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::linalg::{dot, sq_dist, sq_norm};
use crate::lp::{self, LinearProgram, LpStatus};
use crate::measure::{mean, DiscreteMeasure};
use crate::order::OrderSpec;
use crate::projection::{self, Direction, LpOptions, LpProjection, ProjectionResult, Support};
use crate::transforms::{self, lower_convex_envelope_1d_at, q2_direct_points, q2bar_direct_points};

/// Multipliers of the projection LP rows that carry the potential.
#[derive(Debug, Clone)]
pub enum Multipliers {
    /// Source rows `u`, link rows `t`, martingale rows `w` (per candidate).
    BackwardConvex { u: Vec<f64>, t: Vec<f64>, w: Vec<Vec<f64>> },
    /// Vertex rows `alpha`, martingale rows `gamma`, link rows `t`, target rows `beta`.
    ForwardConvex { alpha: Vec<f64>, gamma: Vec<Vec<f64>>, t: Vec<f64>, beta: Vec<f64> },
    BackwardSubharmonic { u: Vec<f64>, t: Vec<f64> },
    ForwardSubharmonic { t: Vec<f64>, beta: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialClass {
    Convex,
    Subharmonic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Potential {
    /// `φ(y) = max_k values_k + slopes_k·(y − anchors_k)`.
    MaxAffine { anchors: Vec<Vec<f64>>, values: Vec<f64>, slopes: Vec<Vec<f64>> },
    /// Largest convex function below the samples (`+∞` outside their hull).
    ConvexEnvelope { points: Vec<Vec<f64>>, values: Vec<f64> },
    /// Grid values, multilinear in between.
    Grid { function: GridFunction },
}

impl Potential {
    /// Value at `x` and whether it had to be interpolated between nodes.
    pub fn eval(&self, x: &[f64]) -> (f64, bool) {
        match self {
            Potential::MaxAffine { anchors, values, slopes } => {
                let v = anchors
                    .iter()
                    .zip(values)
                    .zip(slopes)
                    .map(|((a, v), s)| v + s.iter().zip(x.iter().zip(a)).map(|(si, (xi, ai))| si * (xi - ai)).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                (v, false)
            }
            Potential::ConvexEnvelope { points, values } => (envelope_eval(points, values, x), false),
            Potential::Grid { function } => function.eval(x),
        }
    }

    pub fn shifted(&self, c: f64) -> Potential {
        match self {
            Potential::MaxAffine { anchors, values, slopes } => Potential::MaxAffine {
                anchors: anchors.clone(),
                values: values.iter().map(|v| v + c).collect(),
                slopes: slopes.clone(),
            },
            Potential::ConvexEnvelope { points, values } => {
                Potential::ConvexEnvelope { points: points.clone(), values: values.iter().map(|v| v + c).collect() }
            }
            Potential::Grid { function } => Potential::Grid { function: function.shifted(c) },
        }
    }
}

/// Lower convex envelope of `(points, values)` at `x`: a monotone chain in
/// 1D, a small LP over convex combinations otherwise.
pub fn envelope_eval(points: &[Vec<f64>], values: &[f64], x: &[f64]) -> f64 {
    if x.len() == 1 {
        let xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
        return lower_convex_envelope_1d_at(&xs, values, &[x[0]])[0];
    }
    let mut lp = LinearProgram::with_vars(values);
    lp.add_row(&(0..points.len()).map(|k| (k, 1.0)).collect::<Vec<_>>(), 1.0);
    for a in 0..x.len() {
        lp.add_row(&points.iter().enumerate().map(|(k, p)| (k, p[a])).collect::<Vec<_>>(), x[a]);
    }
    match lp::solve(&lp) {
        Ok(sol) if sol.status == LpStatus::Optimal => sol.primal_objective,
        _ => f64::INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualCertificate {
    pub direction: Direction,
    pub class: PotentialClass,
    pub potential: Potential,
    /// Points over which the quadratic transforms range.
    pub candidates: Vec<Vec<f64>>,
    /// Potential at the candidates.
    pub candidate_values: Vec<f64>,
    /// Potential sampled on the grid, when the support is a grid.
    pub sampled: Option<GridFunction>,
    /// `Q₂(φ)` (backward) or `Q₂̄(φ)` (forward) on the grid.
    pub transformed: Option<GridFunction>,
    /// The normalization node and the constant that was added.
    pub anchor: Vec<f64>,
    pub offset: f64,
    pub dual_value: f64,
    /// Objective of the LP the multipliers came from.
    pub lp_dual_objective: f64,
    /// Largest class-constraint violation of the sampled potential.
    pub class_defect: f64,
    pub mu: DiscreteMeasure,
    pub nu: DiscreteMeasure,
    pub fingerprint: u64,
}

impl DualCertificate {
    /// `∫Q₂(φ)dμ − ∫φdν` (backward) or `∫φdμ − ∫Q₂̄(φ)dν` (forward), from
    /// the stored potential and measures only.
    pub fn recompute_dual_value(&self) -> f64 {
        dual_objective(self.direction, &self.potential, &self.candidates, &self.candidate_values, &self.mu, &self.nu)
    }

    pub fn shifted(&self, c: f64) -> DualCertificate {
        let mut out = self.clone();
        out.potential = self.potential.shifted(c);
        out.candidate_values = self.candidate_values.iter().map(|v| v + c).collect();
        out.sampled = self.sampled.as_ref().map(|s| s.shifted(c));
        out.transformed = self.transformed.as_ref().map(|s| s.shifted(c));
        out.offset += c;
        out.dual_value = out.recompute_dual_value();
        out
    }
}

pub fn dual_objective(
    direction: Direction,
    potential: &Potential,
    candidates: &[Vec<f64>],
    candidate_values: &[f64],
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> f64 {
    match direction {
        Direction::Backward => {
            let q = q2_direct_points(candidates, candidate_values, mu.points());
            let a: f64 = q.iter().zip(mu.weights()).map(|(v, w)| w * v.0).sum();
            a - nu.integrate(|y| potential.eval(y).0)
        }
        Direction::Forward => {
            let q = q2bar_direct_points(candidates, candidate_values, nu.points());
            let b: f64 = q.iter().zip(nu.weights()).map(|(v, w)| w * v.0).sum();
            mu.integrate(|x| potential.eval(x).0) - b
        }
    }
}

/// Hash of the instance a certificate belongs to.
pub fn fingerprint(direction: Direction, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> u64 {
    let mut h = DefaultHasher::new();
    (direction == Direction::Backward).hash(&mut h);
    for m in [mu, nu] {
        m.len().hash(&mut h);
        for (p, w) in m.atoms() {
            for v in p {
                v.to_bits().hash(&mut h);
            }
            w.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

/// Builds the normalized dual certificate of a solved projection LP. `mu`
/// is the smaller measure of the order pair and `nu` the larger one.
pub fn certificate_from_lp(lpp: &LpProjection, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<DualCertificate> {
    let z = &lpp.candidates;
    let (direction, class, potential) = match &lpp.multipliers {
        Multipliers::BackwardConvex { t, w, .. } => {
            let values: Vec<f64> = t.iter().map(|v| -v).collect();
            (Direction::Backward, PotentialClass::Convex, Potential::MaxAffine { anchors: z.clone(), values, slopes: w.clone() })
        }
        Multipliers::ForwardConvex { t, .. } => {
            let raw: Vec<f64> = t.iter().map(|v| -v).collect();
            let values: Vec<f64> = z.iter().map(|p| envelope_eval(z, &raw, p).min(raw[index_of(z, p)])).collect();
            (Direction::Forward, PotentialClass::Convex, Potential::ConvexEnvelope { points: z.clone(), values })
        }
        Multipliers::BackwardSubharmonic { t, .. } => {
            let grid = lpp.grid.clone().expect("subharmonic LP lives on a grid");
            let function = GridFunction::new(grid, t.iter().map(|v| -v).collect())?;
            (Direction::Backward, PotentialClass::Subharmonic, Potential::Grid { function })
        }
        Multipliers::ForwardSubharmonic { t, .. } => {
            let grid = lpp.grid.clone().expect("subharmonic LP lives on a grid");
            let function = GridFunction::new(grid, t.clone())?;
            let function = forward_subharmonic_closure(&function, nu)?;
            (Direction::Forward, PotentialClass::Subharmonic, Potential::Grid { function })
        }
    };
    build_certificate(direction, class, potential, z.clone(), lpp.grid.as_ref(), lpp.lp_dual_objective, mu, nu)
}

fn index_of(z: &[Vec<f64>], p: &[f64]) -> usize {
    z.iter().position(|q| q.as_slice() == p).expect("point is a candidate")
}

#[allow(clippy::too_many_arguments)]
fn build_certificate(
    direction: Direction,
    class: PotentialClass,
    potential: Potential,
    candidates: Vec<Vec<f64>>,
    grid: Option<&Grid>,
    lp_dual_objective: f64,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<DualCertificate> {
    let values: Vec<f64> = candidates.iter().map(|p| potential.eval(p).0).collect();
    let target = mean(nu);
    let k = (0..candidates.len())
        .min_by(|&a, &b| sq_dist(&candidates[a], &target).total_cmp(&sq_dist(&candidates[b], &target)))
        .ok_or_else(|| Error::Input("empty candidate support".into()))?;
    let anchor = candidates[k].clone();
    // backward: φ(anchor) = 0; forward: Q₂̄(φ)(anchor) = 0, so φ ≤ |· − anchor|²
    let offset = match direction {
        Direction::Backward => -values[k],
        Direction::Forward => -q2bar_direct_points(&candidates, &values, std::slice::from_ref(&anchor))[0].0,
    };
    let potential = potential.shifted(offset);
    let candidate_values: Vec<f64> = values.iter().map(|v| v + offset).collect();
    let (sampled, transformed) = match grid {
        Some(g) => {
            let nodes = g.nodes();
            let s: Vec<f64> = nodes.iter().map(|p| potential.eval(p).0).collect();
            let tr: Vec<f64> = match direction {
                Direction::Backward => q2_direct_points(&candidates, &candidate_values, &nodes),
                Direction::Forward => q2bar_direct_points(&candidates, &candidate_values, &nodes),
            }
            .into_iter()
            .map(|v| v.0)
            .collect();
            (Some(GridFunction::new(g.clone(), s)?), Some(GridFunction::new(g.clone(), tr)?))
        }
        None => (None, None),
    };
    let class_defect = match (&sampled, class) {
        (Some(s), PotentialClass::Convex) => s.convexity_defect(),
        (Some(s), PotentialClass::Subharmonic) => (-s.min_laplacian()).max(0.0) * s.grid.max_spacing().powi(2),
        (None, _) => 0.0,
    };
    let dual_value = dual_objective(direction, &potential, &candidates, &candidate_values, mu, nu);
    Ok(DualCertificate {
        direction,
        class,
        potential,
        candidates,
        candidate_values,
        sampled,
        transformed,
        anchor,
        offset,
        dual_value,
        lp_dual_objective,
        class_defect,
        fingerprint: fingerprint(direction, mu, nu),
        mu: mu.clone(),
        nu: nu.clone(),
    })
}

/// The map `ψ ↦ env(Q₂(Q₂̄(ψ)))` for forward subharmonic potentials, with
/// the inner transform evaluated on the grid nodes and the atoms of ν.
pub fn forward_subharmonic_step(psi: &GridFunction, nu: &DiscreteMeasure) -> Result<GridFunction> {
    let nodes = psi.grid.nodes();
    let mut ys = nodes.clone();
    for p in nu.points() {
        if !nodes.iter().any(|q| sq_dist(p, q) <= 1e-24) {
            ys.push(p.clone());
        }
    }
    let inner = transforms::q2bar_points(&nodes, &psi.values, &ys);
    let outer = transforms::q2_points(&ys, &inner, &nodes);
    transforms::subharmonic_envelope(&GridFunction::new(psi.grid.clone(), outer)?)
}

/// Replaces an optimal forward subharmonic potential by its image under
/// [`forward_subharmonic_step`]. The image dominates the input and has the
/// same `Q₂̄` on the atoms of ν, so it is still optimal, and it is a fixed
/// point of the step.
fn forward_subharmonic_closure(phi: &GridFunction, nu: &DiscreteMeasure) -> Result<GridFunction> {
    let next = forward_subharmonic_step(phi, nu)?;
    // envelope round-off can leave it a hair below φ
    let values = next.values.iter().zip(&phi.values).map(|(a, b)| a.max(*b)).collect();
    GridFunction::new(phi.grid.clone(), values)
}

/// Dual of the backward projection of μ onto `{ρ ≤ ν}` with potentials
/// sampled on `grid` (the primal candidate support is the same grid).
pub fn solve_dual_backward(mu: &DiscreteMeasure, nu: &DiscreteMeasure, order: &OrderSpec, grid: &Grid) -> Result<DualCertificate> {
    let opts = LpOptions::default();
    let lpp = match order {
        OrderSpec::Convex => projection::backward_convex_lp(mu, nu, &Support::Grid(grid.clone()), &opts)?,
        OrderSpec::Subharmonic { grid: g } => {
            same_grid(g, grid)?;
            projection::backward_subharmonic_lp(mu, nu, grid, &opts)?
        }
        OrderSpec::Trivial => return Err(Error::Unsupported("trivial order has no potential class".into())),
    };
    certificate_from_lp(&lpp, mu, nu)
}

/// Dual of the forward projection of ν onto `{ρ ≥ μ}`.
pub fn solve_dual_forward(mu: &DiscreteMeasure, nu: &DiscreteMeasure, order: &OrderSpec, grid: &Grid) -> Result<DualCertificate> {
    let opts = LpOptions::default();
    let lpp = match order {
        OrderSpec::Convex => projection::forward_convex_lp(nu, mu, &Support::Grid(grid.clone()), &opts)?,
        OrderSpec::Subharmonic { grid: g } => {
            same_grid(g, grid)?;
            projection::forward_subharmonic_lp(nu, mu, grid, &opts)?
        }
        OrderSpec::Trivial => return Err(Error::Unsupported("trivial order has no potential class".into())),
    };
    certificate_from_lp(&lpp, mu, nu)
}

fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a != b {
        return Err(Error::Mismatch("order grid and potential grid differ".into()));
    }
    Ok(())
}

/// `primal.cost − dual.dual_value`; errors if they describe different instances.
pub fn duality_gap(primal: &ProjectionResult, dual: &DualCertificate) -> Result<f64> {
    let (mu, nu) = match primal.direction {
        Direction::Backward => (&primal.source, &primal.vertex),
        Direction::Forward => (&primal.vertex, &primal.source),
    };
    if fingerprint(primal.direction, mu, nu) != dual.fingerprint {
        return Err(Error::Mismatch("primal and dual were computed for different instances".into()));
    }
    Ok(primal.cost - dual.dual_value)
}

#[derive(Debug, Clone, Serialize)]
pub struct PotentialReport {
    pub projection_integral: f64,
    pub vertex_integral: f64,
    pub residual: f64,
    /// Some atom fell between grid nodes and was interpolated.
    pub interpolated: bool,
    pub optimal: bool,
}

pub const POTENTIAL_TOL: f64 = 1e-6;

/// `|∫φ d(projection) − ∫φ d(vertex)|`, which vanishes for an optimal
/// potential paired with an optimal projection.
pub fn verify_potential_property(dual: &DualCertificate, projection: &DiscreteMeasure, vertex: &DiscreteMeasure) -> PotentialReport {
    let mut interpolated = false;
    let mut integrate = |m: &DiscreteMeasure| -> f64 {
        m.atoms()
            .map(|(p, w)| {
                let (v, i) = dual.potential.eval(p);
                interpolated |= i;
                w * v
            })
            .sum()
    };
    let a = integrate(projection);
    let b = integrate(vertex);
    let residual = (a - b).abs();
    PotentialReport {
        projection_integral: a,
        vertex_integral: b,
        residual,
        interpolated,
        optimal: residual <= POTENTIAL_TOL,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheckReport {
    pub backward_value: f64,
    pub forward_value: f64,
    /// Backward objective at `Q₂̄(φ_forward)`.
    pub backward_at_forward: f64,
    /// Forward objective at `Q₂(φ_backward)`.
    pub forward_at_backward: f64,
    pub max_discrepancy: f64,
}

/// Solves both convex-order duals on `grid` and evaluates each objective at
/// the quadratic transform of the other direction's optimal potential.
pub fn crosscheck_dual_equivalence(mu: &DiscreteMeasure, nu: &DiscreteMeasure, grid: &Grid) -> Result<CrossCheckReport> {
    let b = solve_dual_backward(mu, nu, &OrderSpec::Convex, grid)?;
    let f = solve_dual_forward(mu, nu, &OrderSpec::Convex, grid)?;
    let z = &b.candidates;

    // backward objective at ψ = Q₂̄_Z(φ_f), a function defined everywhere
    let psi = |y: &[f64]| q2bar_direct_points(&f.candidates, &f.candidate_values, &[y.to_vec()])[0].0;
    let psi_z: Vec<f64> = z.iter().map(|p| psi(p)).collect();
    let q = q2_direct_points(z, &psi_z, mu.points());
    let backward_at_forward = q.iter().zip(mu.weights()).map(|(v, w)| w * v.0).sum::<f64>() - nu.integrate(psi);

    // forward objective at χ = Q₂_Z(φ_b)
    let chi = |x: &[f64]| q2_direct_points(&b.candidates, &b.candidate_values, &[x.to_vec()])[0].0;
    let chi_z: Vec<f64> = z.iter().map(|p| chi(p)).collect();
    let q = q2bar_direct_points(z, &chi_z, nu.points());
    let forward_at_backward = mu.integrate(chi) - q.iter().zip(nu.weights()).map(|(v, w)| w * v.0).sum::<f64>();

    let vals = [b.dual_value, f.dual_value, backward_at_forward, forward_at_backward];
    let max_discrepancy = vals.iter().flat_map(|a| vals.iter().map(move |c| (a - c).abs())).fold(0.0, f64::max);
    Ok(CrossCheckReport {
        backward_value: b.dual_value,
        forward_value: f.dual_value,
        backward_at_forward,
        forward_at_backward,
        max_discrepancy,
    })
}

/// `∫Q₂(φ)dμ − ∫φdν` for a max-affine backward potential with the infimum
/// in `Q₂` taken over all of ℝ^d instead of the candidates. Weak duality
/// makes this a lower bound on the exact backward cost for any convex φ,
/// so it stays below the cost when the potential comes from a coarse grid
/// (`dual_value` does not: it is the cost of the candidate-restricted problem).
pub fn backward_lower_bound(dual: &DualCertificate) -> Result<f64> {
    let Potential::MaxAffine { anchors, values, slopes } = &dual.potential else {
        return Err(Error::Unsupported("lower bound needs a max-affine backward potential".into()));
    };
    // φ(y) = max_k c_k + s_k·y
    let c: Vec<f64> = anchors.iter().zip(values).zip(slopes).map(|((a, v), s)| v - dot(s, a)).collect();
    let a: f64 = dual.mu.atoms().map(|(x, w)| w * moreau_lower(&c, slopes, x)).sum();
    Ok(a - dual.nu.integrate(|y| dual.potential.eval(y).0))
}

/// Lower estimate of `inf_y |x − y|² + max_k c_k + s_k·y` through its dual
/// `max_{λ ∈ Δ} λ·c + p·x − |p|²/4`, `p = Σ λ_k s_k`, by Frank-Wolfe with
/// exact line search. Every iterate is a valid lower bound.
fn moreau_lower(c: &[f64], s: &[Vec<f64>], x: &[f64]) -> f64 {
    let score = |k: usize, p: &[f64]| c[k] + dot(&s[k], x) - 0.5 * dot(&s[k], p);
    let start = (0..c.len()).max_by(|&i, &j| (c[i] + dot(&s[i], x) - 0.25 * sq_norm(&s[i])).total_cmp(&(c[j] + dot(&s[j], x) - 0.25 * sq_norm(&s[j])))).expect("non-empty potential");
    let mut p = s[start].clone();
    let mut lc = c[start];
    let value = |lc: f64, p: &[f64]| lc + dot(p, x) - 0.25 * sq_norm(p);
    for _ in 0..5000 {
        let j = (0..c.len()).max_by(|&i, &k| score(i, &p).total_cmp(&score(k, &p))).expect("non-empty potential");
        let dp: Vec<f64> = s[j].iter().zip(&p).map(|(a, b)| a - b).collect();
        let gap = (c[j] - lc) + dot(&dp, x) - 0.5 * dot(&p, &dp);
        let curv = 0.5 * sq_norm(&dp);
        if gap <= 1e-15 * (1.0 + value(lc, &p).abs()) || curv == 0.0 {
            break;
        }
        let gamma = (gap / curv).min(1.0);
        lc += gamma * (c[j] - lc);
        p.iter_mut().zip(&dp).for_each(|(a, d)| *a += gamma * d);
    }
    value(lc, &p)
}

/// Distance of a forward subharmonic potential from its own image under
/// [`forward_subharmonic_step`].
pub fn fixed_point_residual(dual: &DualCertificate) -> Result<f64> {
    let Potential::Grid { function } = &dual.potential else {
        return Err(Error::Unsupported("fixed-point check needs a grid potential".into()));
    };
    Ok(forward_subharmonic_step(function, &dual.nu)?.max_abs_diff(function))
}

/// Largest violation of `φ(z) ≤ |z − anchor|²` over the candidates.
pub fn quadratic_bound_violation(dual: &DualCertificate) -> f64 {
    dual.candidates
        .iter()
        .zip(&dual.candidate_values)
        .map(|(z, v)| v - sq_dist(z, &dual.anchor))
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0)
}
