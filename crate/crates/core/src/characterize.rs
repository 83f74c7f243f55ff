//! Checks on the structure of optimal maps: convex and Laplacian
//! contraction/expansion, volume growth of forward maps, and the inverse
//! relation between backward and forward convex projections.

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::duality::DualCertificate;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, SampledConvexFunction};
use crate::linalg::{dot, sq_dist, sq_norm};
use crate::measure::Coupling;
use crate::projection::{Direction, ProjectionResult};
use crate::transforms::legendre_points;

pub const CONVEX_TOL: f64 = 1e-8;
pub const LAPLACIAN_TOL: f64 = 1e-6;
pub const MONOTONE_TOL: f64 = 1e-8;
/// A coupling row counts as a map when one entry holds this share of its mass.
pub const DOMINANCE: f64 = 0.999;

/// Every directional second-difference quotient is at most 1.
pub fn check_convex_contraction(phi: &SampledConvexFunction) -> bool {
    phi.function().second_difference_quotients().iter().all(|(_, q)| *q <= 1.0 + CONVEX_TOL)
}

/// Every directional second-difference quotient is at least 1.
pub fn check_convex_expansion(phi: &SampledConvexFunction) -> bool {
    phi.function().second_difference_quotients().iter().all(|(_, q)| *q >= 1.0 - CONVEX_TOL)
}

/// Smallest second-difference quotient over nodes accepted by `keep`
/// (`+∞` when none is).
pub fn min_second_difference(phi: &GridFunction, keep: impl Fn(usize) -> bool) -> f64 {
    phi.second_difference_quotients().iter().filter(|(k, _)| keep(*k)).map(|(_, q)| *q).fold(f64::INFINITY, f64::min)
}

fn laplacian_values(phi: &GridFunction) -> Result<Vec<f64>> {
    if phi.grid.shape().iter().any(|&n| n < 3) {
        return Err(Error::InvalidGrid("need at least 3 nodes per axis".into()));
    }
    if !phi.is_finite() {
        return Err(Error::Input("grid function has non-finite values".into()));
    }
    Ok(phi.laplacian().into_iter().flatten().collect())
}

/// `Lφ ≥ d` at every interior node: `φ*` is then a Laplacian contraction.
pub fn check_laplacian_contraction(phi: &GridFunction) -> Result<bool> {
    let d = phi.grid.dim() as f64;
    Ok(laplacian_values(phi)?.iter().all(|l| *l >= d - LAPLACIAN_TOL))
}

/// `Lφ ≤ d` at every interior node: `φ*` is then a Laplacian expansion.
pub fn check_laplacian_expansion(phi: &GridFunction) -> Result<bool> {
    let d = phi.grid.dim() as f64;
    Ok(laplacian_values(phi)?.iter().all(|l| *l <= d + LAPLACIAN_TOL))
}

/// Source/image pairs read off a coupling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSample {
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    /// Rows left out because their mass was split.
    pub excluded: usize,
}

impl MapSample {
    /// Rows whose largest entry carries at least `dominance` of the row mass.
    pub fn from_coupling(c: &Coupling, dominance: f64) -> MapSample {
        let n = c.cols();
        let mut pairs = Vec::new();
        let mut excluded = 0;
        for i in 0..c.rows() {
            let row = &c.mass[i * n..(i + 1) * n];
            let tot: f64 = row.iter().sum();
            let (j, &best) = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty row");
            if tot > 0.0 && best >= dominance * tot {
                pairs.push((c.source.points()[i].clone(), c.target.points()[j].clone()));
            } else {
                excluded += 1;
            }
        }
        MapSample { pairs, excluded }
    }

    /// Every row mapped to its conditional barycenter.
    pub fn from_barycenters(c: &Coupling) -> MapSample {
        let pairs = c.source.points().iter().cloned().zip(c.row_barycenters()).collect();
        MapSample { pairs, excluded: 0 }
    }

    pub fn inverse(&self) -> MapSample {
        MapSample { pairs: self.pairs.iter().map(|(x, y)| (y.clone(), x.clone())).collect(), excluded: self.excluded }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn scale(&self) -> f64 {
        1.0 + self.pairs.iter().map(|(x, y)| sq_norm(x).max(sq_norm(y))).fold(0.0, f64::max)
    }

    /// Worst `Σ ⟨y_{σ(i)} − y_i, x_i⟩ / scale` over all 2-cycles and
    /// `samples` random cycles of length 3..=`max_len` (non-positive for the
    /// graph of a convex gradient).
    pub fn cyclical_monotonicity_defect(&self, max_len: usize, samples: usize, seed: u64) -> f64 {
        let n = self.pairs.len();
        let gain = |cycle: &[usize]| -> f64 {
            (0..cycle.len())
                .map(|k| {
                    let (x, y) = &self.pairs[cycle[k]];
                    let ynext = &self.pairs[cycle[(k + 1) % cycle.len()]].1;
                    dot(ynext, x) - dot(y, x)
                })
                .sum()
        };
        let mut worst = f64::NEG_INFINITY;
        for a in 0..n {
            for b in a + 1..n {
                worst = worst.max(gain(&[a, b]));
            }
        }
        if n >= 3 && max_len >= 3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = (0..n).collect();
            for _ in 0..samples {
                let len = rng.random_range(3..=max_len.min(n));
                idx.shuffle(&mut rng);
                worst = worst.max(gain(&idx[..len]));
            }
        }
        if worst == f64::NEG_INFINITY {
            return 0.0;
        }
        worst / self.scale()
    }

    pub fn is_cyclically_monotone(&self) -> bool {
        self.cyclical_monotonicity_defect(4, 2000, 0) <= MONOTONE_TOL
    }

    /// Worst `(|Tx − Tx'|² − ⟨Tx − Tx', x − x'⟩) / scale` over pairs; non-positive
    /// when the map is the gradient of a convex contraction.
    pub fn contraction_defect(&self) -> f64 {
        self.pairwise(|dx, dy| sq_norm(dy) - dot(dx, dy))
    }

    /// Worst `(|x − x'|² − ⟨Tx − Tx', x − x'⟩) / scale`; non-positive for the
    /// gradient of a convex expansion.
    pub fn expansion_defect(&self) -> f64 {
        self.pairwise(|dx, dy| sq_norm(dx) - dot(dx, dy))
    }

    fn pairwise(&self, f: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
        let mut worst = 0.0f64;
        for (a, (xa, ya)) in self.pairs.iter().enumerate() {
            for (xb, yb) in &self.pairs[a + 1..] {
                let dx: Vec<f64> = xa.iter().zip(xb).map(|(p, q)| p - q).collect();
                let dy: Vec<f64> = ya.iter().zip(yb).map(|(p, q)| p - q).collect();
                worst = worst.max(f(&dx, &dy));
            }
        }
        worst / self.scale()
    }
}

/// `g₀*` on `eval`, where `g₀ = ½|z|² + ½φ` over the candidates of a
/// backward convex certificate; its gradient is the backward map.
pub fn backward_map_potential(dual: &DualCertificate, eval: &Grid) -> Result<SampledConvexFunction> {
    expect(dual, Direction::Backward)?;
    let g0: Vec<f64> = dual.candidates.iter().zip(&dual.candidate_values).map(|(z, v)| 0.5 * sq_norm(z) + 0.5 * v).collect();
    let values = legendre_points(&dual.candidates, &g0, &eval.nodes());
    SampledConvexFunction::new(GridFunction::new(eval.clone(), values)?)
}

/// `ψ̄₀*` on `eval`, where `ψ̄₀ = ½|x|² − ½φ` over the candidates of a forward
/// certificate; its gradient is the forward map.
pub fn forward_map_potential(dual: &DualCertificate, eval: &Grid) -> Result<SampledConvexFunction> {
    expect(dual, Direction::Forward)?;
    let psi0: Vec<f64> = dual.candidates.iter().zip(&dual.candidate_values).map(|(x, v)| 0.5 * sq_norm(x) - 0.5 * v).collect();
    let values = legendre_points(&dual.candidates, &psi0, &eval.nodes());
    SampledConvexFunction::new(GridFunction::new(eval.clone(), values)?)
}

fn expect(dual: &DualCertificate, dir: Direction) -> Result<()> {
    if dual.direction != dir {
        return Err(Error::Mismatch(format!("expected a {dir:?} certificate")));
    }
    Ok(())
}

/// Nodes of `eval` at which the gradient of `max_x x·y − f(x)` is attained
/// away from the boundary of the candidates' bounding box, together with
/// all lattice neighbors (so the potential is not affine there by
/// running out of slopes).
pub fn reachable_slope_interior(candidates: &[Vec<f64>], f: &[f64], eval: &Grid) -> Vec<bool> {
    let d = eval.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in candidates {
        for a in 0..d {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let nodes = eval.nodes();
    let inner: Vec<bool> = nodes
        .iter()
        .map(|y| {
            let mut best = (f64::NEG_INFINITY, 0);
            for (k, (x, fx)) in candidates.iter().zip(f).enumerate() {
                let v = dot(x, y) - fx;
                if v > best.0 {
                    best = (v, k);
                }
            }
            let x = &candidates[best.1];
            (0..d).all(|a| x[a] > lo[a] + 1e-12 && x[a] < hi[a] - 1e-12)
        })
        .collect();
    (0..eval.len())
        .map(|k| {
            inner[k]
                && eval.directions().iter().all(|dir| {
                    let neg: Vec<isize> = dir.iter().map(|v| -v).collect();
                    [eval.offset(k, dir), eval.offset(k, &neg)].iter().all(|n| n.is_some_and(|n| inner[n]))
                })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeReport {
    /// Interior support nodes whose whole stencil lies in the support of ν
    /// and where `∇ψ` is single-valued.
    pub evaluable: usize,
    pub det_passing: usize,
    pub det_fraction: f64,
    pub min_det: f64,
    pub density_checked: usize,
    pub density_violations: usize,
    pub worst_density_ratio: f64,
    pub single_valued_fraction: f64,
    /// `None` when `∇ψ` is multi-valued on more than 20% of the support.
    pub passed: Option<bool>,
}

pub const DET_TOL: f64 = 0.1;
pub const DET_FRACTION: f64 = 0.95;
pub const DENSITY_SLACK: f64 = 0.1;
/// Stencil half-width, in grid steps, for the Hessian and for the blocks
/// over which densities are averaged. The potential is a discrete Legendre
/// transform whose slopes jump by one grid step, so unit-step differences
/// only see the quantization.
pub const VOLUME_STEP: usize = 2;

/// Volume growth of the forward map `∇ψ` on a 2D grid, with ψ sampled on
/// the grid (see [`forward_map_potential`]). `coupling` has rows on the
/// projection's atoms and columns on ν's atoms (as returned by the forward
/// projections); both must sit on nodes of the grid.
///
/// The determinant of the finite-difference Hessian of ψ is checked at
/// interior support nodes. Densities are compared on blocks of
/// `(2·VOLUME_STEP+1)²` nodes: the projection's mass around each image
/// atom against the largest ν mass around any of its preimages.
pub fn check_volume_expansion(psi: &GridFunction, coupling: &Coupling) -> Result<VolumeReport> {
    let grid = &psi.grid;
    if grid.dim() != 2 {
        return Err(Error::Unsupported("volume check is two-dimensional".into()));
    }
    let s = VOLUME_STEP as isize;
    let nu = &coupling.target;
    let proj = &coupling.source;
    let src_idx = grid.locate_all(nu.points(), false)?;
    let img_idx = grid.locate_all(proj.points(), false)?;
    let mut density = vec![0.0; grid.len()];
    for (&k, w) in src_idx.iter().zip(nu.weights()) {
        density[k] += w;
    }
    let mut pushed = vec![0.0; grid.len()];
    for (&k, w) in img_idx.iter().zip(proj.weights()) {
        pushed[k] += w;
    }

    let psi = &psi.values;
    // an atom of ν counts as single-valued when its images stay within one
    // stencil half-width of their barycenter
    let reach = s as f64 * grid.h(0).max(grid.h(1));
    let n = coupling.cols();
    let mut single = vec![false; grid.len()];
    for (j, &k) in src_idx.iter().enumerate() {
        let total: f64 = (0..proj.len()).map(|a| coupling.mass[a * n + j]).sum();
        let images: Vec<(usize, f64)> = (0..proj.len())
            .map(|a| (a, coupling.mass[a * n + j]))
            .filter(|(_, m)| *m > 1e-12 * total)
            .collect();
        let mut bary = [0.0; 2];
        for &(a, m) in &images {
            for (c, x) in bary.iter_mut().zip(&proj.points()[a]) {
                *c += m * x;
            }
        }
        let mass: f64 = images.iter().map(|(_, m)| m).sum();
        bary.iter_mut().for_each(|c| *c /= mass);
        single[k] = images.iter().all(|&(a, _)| sq_dist(&proj.points()[a], &bary).sqrt() <= reach + 1e-12);
    }
    let support: Vec<usize> = (0..grid.len()).filter(|&k| density[k] > 0.0).collect();
    let single_valued_fraction = support.iter().filter(|&&k| single[k]).count() as f64 / support.len().max(1) as f64;

    let block = |k: usize| -> Option<Vec<usize>> {
        (-s..=s).flat_map(|a| (-s..=s).map(move |b| [a, b])).map(|o| grid.offset(k, &o)).collect()
    };
    let (hx, hy) = (s as f64 * grid.h(0), s as f64 * grid.h(1));
    let mut evaluable = 0;
    let mut det_passing = 0;
    let mut min_det = f64::INFINITY;
    for &k in &support {
        let Some(stencil) = block(k) else { continue };
        if !single[k] || stencil.iter().any(|&n| density[n] <= 0.0) {
            continue;
        }
        let at = |o: [isize; 2]| psi[grid.offset(k, &o).unwrap()];
        let dxx = (at([s, 0]) - 2.0 * psi[k] + at([-s, 0])) / (hx * hx);
        let dyy = (at([0, s]) - 2.0 * psi[k] + at([0, -s])) / (hy * hy);
        let dxy = (at([s, s]) - at([s, -s]) - at([-s, s]) + at([-s, -s])) / (4.0 * hx * hy);
        let det = dxx * dyy - dxy * dxy;
        evaluable += 1;
        min_det = min_det.min(det);
        if det >= 1.0 - DET_TOL {
            det_passing += 1;
        }
    }

    // |T⁻¹(B)| ≤ |B| for an expansion, so the projection's mass on a block B
    // is at most |B| times the largest ν atom sending into B
    let mut atoms_at: Vec<Vec<usize>> = vec![Vec::new(); grid.len()];
    for (a, &ka) in img_idx.iter().enumerate() {
        atoms_at[ka].push(a);
    }
    let mut density_checked = 0;
    let mut density_violations = 0;
    let mut worst_density_ratio = 0.0f64;
    for &ka in img_idx.iter() {
        let nodes: Vec<usize> = (-s..=s)
            .flat_map(|a| (-s..=s).map(move |b| [a, b]))
            .filter_map(|o| grid.offset(ka, &o))
            .collect();
        let mut heaviest = 0.0f64;
        for &node in &nodes {
            for &a in &atoms_at[node] {
                for (j, &m) in coupling.mass[a * n..(a + 1) * n].iter().enumerate() {
                    if m > 1e-12 {
                        heaviest = heaviest.max(density[src_idx[j]]);
                    }
                }
            }
        }
        if heaviest <= 0.0 {
            continue;
        }
        density_checked += 1;
        let mass: f64 = nodes.iter().map(|&k| pushed[k]).sum();
        let ratio = mass / (nodes.len() as f64 * heaviest);
        worst_density_ratio = worst_density_ratio.max(ratio);
        if ratio > 1.0 + DENSITY_SLACK {
            density_violations += 1;
        }
    }
    let det_fraction = if evaluable > 0 { det_passing as f64 / evaluable as f64 } else { 0.0 };
    let passed = (single_valued_fraction >= 0.8)
        .then_some(evaluable > 0 && det_fraction >= DET_FRACTION && density_violations == 0);
    Ok(VolumeReport {
        evaluable,
        det_passing,
        det_fraction,
        min_det,
        density_checked,
        density_violations,
        worst_density_ratio,
        single_valued_fraction,
        passed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InverseReport {
    pub backward_monotone: bool,
    pub forward_monotone: bool,
    pub matched: usize,
    pub max_displacement: f64,
    /// `None` when no backward image sits on a ν-atom.
    pub passed: Option<bool>,
}

/// Backward map `μ → μ̄` and forward map `ν → ν̄` should be gradients of a
/// convex function and its conjugate: both monotone, and mutually inverse
/// wherever an atom of `μ̄` coincides (within `h`) with an atom of ν.
pub fn check_inverse_relation(backward: &ProjectionResult, forward: &ProjectionResult, h: f64) -> Result<InverseReport> {
    if backward.direction != Direction::Backward || forward.direction != Direction::Forward {
        return Err(Error::Mismatch("expected a backward and a forward result".into()));
    }
    if backward.source != forward.vertex || backward.vertex != forward.source {
        return Err(Error::Mismatch("results belong to different instances".into()));
    }
    Ok(inverse_relation_from_couplings(&backward.coupling, &forward.coupling, h))
}

/// Same check from the couplings alone: `backward` runs μ → μ̄, `forward`
/// runs ν̄ → ν.
pub fn inverse_relation_from_couplings(backward: &Coupling, forward: &Coupling, h: f64) -> InverseReport {
    let tb = MapSample::from_coupling(backward, DOMINANCE);
    let tf = MapSample::from_coupling(&forward.transpose(), DOMINANCE);
    let mut matched = 0;
    let mut max_displacement = 0.0f64;
    for (x, b) in &tb.pairs {
        for (y, xf) in &tf.pairs {
            if sq_dist(b, y).sqrt() <= h {
                matched += 1;
                max_displacement = max_displacement.max(sq_dist(xf, x).sqrt());
            }
        }
    }
    let backward_monotone = tb.is_cyclically_monotone();
    let forward_monotone = tf.is_cyclically_monotone();
    let passed = (matched > 0).then_some(backward_monotone && forward_monotone && max_displacement <= 5.0 * h);
    InverseReport { backward_monotone, forward_monotone, matched, max_displacement, passed }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn convex(n: usize, f: impl Fn(&[f64]) -> f64) -> SampledConvexFunction {
        SampledConvexFunction::new(GridFunction::from_fn(&Grid::line(-2.0, 2.0, n).unwrap(), f)).unwrap()
    }

    #[test]
    fn convex_contraction_and_expansion_verdicts() {
        let quarter = convex(41, |x| 0.25 * x[0] * x[0]);
        let half = convex(41, |x| 0.5 * x[0] * x[0]);
        let full = convex(41, |x| x[0] * x[0]);
        assert!(check_convex_contraction(&quarter));
        assert!(!check_convex_contraction(&full));
        assert!(check_convex_contraction(&half));
        assert!(check_convex_expansion(&full));
        assert!(!check_convex_expansion(&quarter));
        assert!(check_convex_expansion(&half));
    }

    #[test]
    fn laplacian_verdicts_in_2d() {
        let g = Grid::square(-1.0, 1.0, 11).unwrap();
        let f = |c: f64| GridFunction::from_fn(&g, move |x| c * sq_norm(x));
        assert!(check_laplacian_contraction(&f(0.5)).unwrap());
        assert!(check_laplacian_contraction(&f(1.0)).unwrap());
        assert!(!check_laplacian_contraction(&f(0.25)).unwrap());
        assert!(check_laplacian_expansion(&f(0.5)).unwrap());
        assert!(!check_laplacian_expansion(&f(1.0)).unwrap());
        assert!(check_laplacian_expansion(&f(0.25)).unwrap());
        let tiny = GridFunction::from_fn(&Grid::square(0.0, 1.0, 2).unwrap(), |_| 0.0);
        assert!(check_laplacian_contraction(&tiny).is_err());
    }

    #[test]
    fn monotone_maps() {
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..6).map(|k| (vec![k as f64], vec![0.5 * k as f64 + 1.0])).collect();
        let half = MapSample { pairs, excluded: 0 };
        assert!(half.is_cyclically_monotone());
        assert!(half.contraction_defect() <= 0.0);
        assert!(half.expansion_defect() > 0.0);
        assert!(half.inverse().expansion_defect() <= 1e-15);
        let flipped = MapSample { pairs: vec![(vec![0.0], vec![1.0]), (vec![1.0], vec![0.0])], excluded: 0 };
        assert!(!flipped.is_cyclically_monotone());
    }

    /// ν uniform on the nodes within radius 0.8, pushed by `x ↦ c·x` rounded
    /// to nodes; returns ψ = ½c|x|² and the coupling.
    fn pushed_by_scaling(c: f64) -> (GridFunction, Coupling) {
        let g = Grid::square(-2.0, 2.0, 41).unwrap();
        let src: Vec<usize> = (0..g.len()).filter(|&k| sq_norm(&g.node(k)) <= 0.64 + 1e-12).collect();
        let mut images: Vec<usize> = src.iter().map(|&k| g.nearest(&g.node(k).iter().map(|v| c * v).collect::<Vec<_>>())).collect();
        let targets = images.clone();
        images.sort_unstable();
        images.dedup();
        let w = 1.0 / src.len() as f64;
        let mut mass = vec![0.0; images.len() * src.len()];
        for (j, t) in targets.iter().enumerate() {
            let a = images.binary_search(t).unwrap();
            mass[a * src.len() + j] = w;
        }
        let row_w: Vec<f64> = (0..images.len()).map(|a| mass[a * src.len()..(a + 1) * src.len()].iter().sum()).collect();
        let coupling = Coupling {
            source: crate::measure::make_measure(images.iter().map(|&k| g.node(k)).collect(), row_w).unwrap(),
            target: crate::measure::make_measure(src.iter().map(|&k| g.node(k)).collect(), vec![w; src.len()]).unwrap(),
            mass,
        };
        (GridFunction::from_fn(&g, |x| 0.5 * c * sq_norm(x)), coupling)
    }

    #[test]
    fn volume_check_on_scalings() {
        let (psi, c) = pushed_by_scaling(1.0);
        let id = check_volume_expansion(&psi, &c).unwrap();
        assert_eq!(id.passed, Some(true));
        assert!((id.min_det - 1.0).abs() < 1e-9);
        let (psi, c) = pushed_by_scaling(2.0);
        let dil = check_volume_expansion(&psi, &c).unwrap();
        assert_eq!(dil.passed, Some(true));
        assert!((dil.min_det - 4.0).abs() < 1e-9);
        assert!(dil.worst_density_ratio < 0.5);
        let (psi, c) = pushed_by_scaling(0.5);
        let shrink = check_volume_expansion(&psi, &c).unwrap();
        assert_eq!(shrink.passed, Some(false));
        assert!(shrink.min_det < 0.5);
        assert!(shrink.density_violations > 0);
    }
}
