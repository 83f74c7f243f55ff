//! Finitely supported probability measures, couplings and exact quadratic
//! optimal transport between them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, sq_dist};
use crate::lp::{self, LinearProgram, LpStatus, SolverOptions};

pub const DEFAULT_PRUNE: f64 = 1e-14;
pub const MARGINAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct DiscreteMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<RawMeasure> for DiscreteMeasure {
    type Error = Error;

    fn try_from(raw: RawMeasure) -> Result<Self> {
        make_measure(raw.points, raw.weights)
    }
}

impl DiscreteMeasure {
    pub fn dirac(point: Vec<f64>) -> Self {
        DiscreteMeasure { points: vec![point], weights: vec![1.0] }
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.iter().map(Vec::as_slice).zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.atoms().map(|(x, w)| w * f(x)).sum()
    }

    pub fn map(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let pts = self.points.iter().map(|p| f(p)).collect();
        make_measure(pts, self.weights.clone())
    }

    pub fn translate(&self, shift: &[f64]) -> Result<Self> {
        self.map(|p| p.iter().zip(shift).map(|(a, b)| a + b).collect())
    }

    /// Merges atoms closer than `tol` (Euclidean) into the first one seen.
    pub fn merge_within(&self, tol: f64) -> Self {
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (p, w) in self.atoms() {
            match points.iter().position(|q| sq_dist(p, q).sqrt() <= tol) {
                Some(k) => weights[k] += w,
                None => {
                    points.push(p.to_vec());
                    weights.push(w);
                }
            }
        }
        DiscreteMeasure { points, weights }
    }

    /// Atom-by-atom comparison: same point set (within `tol`) carrying the
    /// same weights (within `tol`).
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        if self.len() != other.len() || self.dim() != other.dim() {
            return false;
        }
        self.atoms().all(|(p, w)| {
            other
                .atoms()
                .any(|(q, v)| (w - v).abs() <= tol && p.iter().zip(q).all(|(a, b)| (a - b).abs() <= tol))
        })
    }
}

/// Builds a normalized measure: weights are rescaled to unit mass, exact
/// duplicate points merged and atoms below [`DEFAULT_PRUNE`] dropped.
pub fn make_measure(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<DiscreteMeasure> {
    make_measure_with(points, weights, DEFAULT_PRUNE)
}

pub fn make_measure_with(points: Vec<Vec<f64>>, weights: Vec<f64>, prune: f64) -> Result<DiscreteMeasure> {
    if points.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: points.len(), found: weights.len() });
    }
    if points.is_empty() {
        return Err(Error::InvalidMeasure("no atoms".into()));
    }
    let d = points[0].len();
    if d == 0 {
        return Err(Error::InvalidMeasure("points must have dimension at least 1".into()));
    }
    for (i, p) in points.iter().enumerate() {
        if p.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: p.len() });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure(format!("atom {i} has a non-finite coordinate")));
        }
    }
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidMeasure(format!("weight {i} is negative or not finite ({w})")));
        }
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidMeasure("weights sum to zero".into()));
    }
    let mut merged_pts: Vec<Vec<f64>> = Vec::new();
    let mut merged_w: Vec<f64> = Vec::new();
    for (p, w) in points.into_iter().zip(weights) {
        match merged_pts.iter().position(|q| *q == p) {
            Some(k) => merged_w[k] += w,
            None => {
                merged_pts.push(p);
                merged_w.push(w);
            }
        }
    }
    let mut pts = Vec::new();
    let mut ws = Vec::new();
    for (p, w) in merged_pts.into_iter().zip(merged_w) {
        if w / total >= prune {
            pts.push(p);
            ws.push(w);
        }
    }
    if pts.is_empty() {
        return Err(Error::InvalidMeasure("every atom fell below the prune threshold".into()));
    }
    let kept: f64 = ws.iter().sum();
    ws.iter_mut().for_each(|w| *w /= kept);
    Ok(DiscreteMeasure { points: pts, weights: ws })
}

/// `∫ |x|^k dμ`.
pub fn moment(mu: &DiscreteMeasure, k: u32) -> f64 {
    mu.integrate(|x| dot(x, x).sqrt().powi(k as i32))
}

pub fn mean(mu: &DiscreteMeasure) -> Vec<f64> {
    let mut m = vec![0.0; mu.dim()];
    for (x, w) in mu.atoms() {
        for (mi, xi) in m.iter_mut().zip(x) {
            *mi += w * xi;
        }
    }
    m
}

/// Transport plan between two measures, stored densely in row-major order
/// (rows = source atoms).
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub source: DiscreteMeasure,
    pub target: DiscreteMeasure,
    pub mass: Vec<f64>,
}

impl Coupling {
    pub fn rows(&self) -> usize {
        self.source.len()
    }

    pub fn cols(&self) -> usize {
        self.target.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass[i * self.cols() + j]
    }

    pub fn transport_cost(&self) -> f64 {
        let n = self.cols();
        let mut c = 0.0;
        for (i, x) in self.source.points().iter().enumerate() {
            for (j, y) in self.target.points().iter().enumerate() {
                let m = self.mass[i * n + j];
                if m != 0.0 {
                    c += m * sq_dist(x, y);
                }
            }
        }
        c
    }

    /// Largest deviation of row/column sums from the marginal weights.
    pub fn marginal_residual(&self) -> f64 {
        let (m, n) = (self.rows(), self.cols());
        let mut worst = 0.0f64;
        for i in 0..m {
            let s: f64 = self.mass[i * n..(i + 1) * n].iter().sum();
            worst = worst.max((s - self.source.weights()[i]).abs());
        }
        for j in 0..n {
            let s: f64 = (0..m).map(|i| self.mass[i * n + j]).sum();
            worst = worst.max((s - self.target.weights()[j]).abs());
        }
        worst
    }

    pub fn min_entry(&self) -> f64 {
        self.mass.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Conditional mean of the target given each source atom.
    pub fn row_barycenters(&self) -> Vec<Vec<f64>> {
        let n = self.cols();
        let d = self.target.dim();
        (0..self.rows())
            .map(|i| {
                let row = &self.mass[i * n..(i + 1) * n];
                let tot: f64 = row.iter().sum();
                let mut b = vec![0.0; d];
                for (j, &m) in row.iter().enumerate() {
                    for (bk, yk) in b.iter_mut().zip(&self.target.points()[j]) {
                        *bk += m * yk;
                    }
                }
                if tot > 0.0 {
                    b.iter_mut().for_each(|v| *v /= tot);
                }
                b
            })
            .collect()
    }

    /// Nonzero entries as `(row, col, mass)`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let n = self.cols();
        self.mass
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > 0.0)
            .map(|(k, &m)| (k / n, k % n, m))
            .collect()
    }

    pub fn transpose(&self) -> Coupling {
        let (m, n) = (self.rows(), self.cols());
        let mut mass = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                mass[j * m + i] = self.mass[i * n + j];
            }
        }
        Coupling { source: self.target.clone(), target: self.source.clone(), mass }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,mass\n");
        for (i, j, m) in self.triplets() {
            s.push_str(&format!("{i},{j},{m:.16e}\n"));
        }
        s
    }
}

impl Serialize for Coupling {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Coupling", 3)?;
        st.serialize_field("source", &self.source)?;
        st.serialize_field("target", &self.target)?;
        st.serialize_field("triplets", &self.triplets())?;
        st.end()
    }
}

#[derive(Deserialize)]
struct RawCoupling {
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    triplets: Vec<(usize, usize, f64)>,
}

impl<'de> Deserialize<'de> for Coupling {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawCoupling::deserialize(d)?;
        let (m, n) = (raw.source.len(), raw.target.len());
        let mut mass = vec![0.0; m * n];
        for (i, j, v) in raw.triplets {
            if i >= m || j >= n {
                return Err(serde::de::Error::custom(format!("triplets: index ({i}, {j}) out of range")));
            }
            mass[i * n + j] += v;
        }
        Ok(Coupling { source: raw.source, target: raw.target, mass })
    }
}

/// Squared 2-Wasserstein distance and an optimal coupling.
pub fn w2_squared(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(f64, Coupling)> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), found: nu.dim() });
    }
    let (m, n) = (mu.len(), nu.len());
    let mut lp = LinearProgram::new();
    for x in mu.points() {
        for y in nu.points() {
            lp.add_var(sq_dist(x, y));
        }
    }
    for (i, w) in mu.weights().iter().enumerate() {
        let row: Vec<(usize, f64)> = (0..n).map(|j| (i * n + j, 1.0)).collect();
        lp.add_row(&row, *w);
    }
    for (j, w) in nu.weights().iter().enumerate() {
        let row: Vec<(usize, f64)> = (0..m).map(|i| (i * n + j, 1.0)).collect();
        lp.add_row(&row, *w);
    }
    let opts = SolverOptions { max_rows: usize::MAX, ..SolverOptions::default() };
    let sol = lp::solve_with(&lp, &opts)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Solver(format!("transport LP returned {:?}", sol.status)));
    }
    let coupling = Coupling { source: mu.clone(), target: nu.clone(), mass: sol.primal };
    Ok((coupling.transport_cost(), coupling))
}

/// Whether `query` lies in the closed convex hull of `points`, decided by
/// phase one of the barycentric-coordinates LP with residual tolerance 1e-9.
pub fn convex_hull_contains(points: &[Vec<f64>], query: &[f64]) -> Result<bool> {
    if points.is_empty() {
        return Err(Error::InvalidMeasure("empty point list".into()));
    }
    let d = query.len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: p.len() });
    }
    let mut lp = LinearProgram::with_vars(&vec![0.0; points.len()]);
    lp.add_row(&(0..points.len()).map(|k| (k, 1.0)).collect::<Vec<_>>(), 1.0);
    for a in 0..d {
        let row: Vec<(usize, f64)> = points.iter().enumerate().map(|(k, p)| (k, p[a])).collect();
        lp.add_row(&row, query[a]);
    }
    let opts = SolverOptions { feasibility_tol: 0.0, max_rows: usize::MAX, ..SolverOptions::default() };
    let sol = lp::phase_one(&lp, &opts)?;
    Ok(sol.infeasibility <= 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(points: &[f64], weights: &[f64]) -> DiscreteMeasure {
        make_measure(points.iter().map(|&p| vec![p]).collect(), weights.to_vec()).unwrap()
    }

    #[test]
    fn construction_normalizes_and_merges() {
        let a = m1(&[0.0], &[2.0]);
        assert_eq!(a.weights(), &[1.0]);
        let b = m1(&[1.0, 1.0], &[0.5, 0.5]);
        assert_eq!(b.len(), 1);
        assert_eq!(b.weights(), &[1.0]);
        let c = m1(&[-1.0, 1.0], &[1.0, 3.0]);
        assert_eq!(c.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn construction_errors() {
        assert!(make_measure(vec![vec![0.0], vec![0.0, 1.0]], vec![1.0, 1.0]).is_err());
        assert!(make_measure(vec![vec![0.0]], vec![0.0]).is_err());
        assert!(make_measure(vec![vec![0.0], vec![1.0]], vec![1.0, -0.5]).is_err());
        assert!(make_measure(vec![vec![0.0]], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn moments_and_means() {
        assert_eq!(moment(&m1(&[0.0], &[1.0]), 2), 0.0);
        let sym = m1(&[-1.0, 1.0], &[0.5, 0.5]);
        assert_eq!(moment(&sym, 2), 1.0);
        assert_eq!(moment(&sym, 1), 1.0);
        assert_eq!(mean(&sym), vec![0.0]);
        assert_eq!(mean(&m1(&[2.0], &[1.0])), vec![2.0]);
        assert_eq!(mean(&m1(&[-1.0, 1.0], &[0.25, 0.75])), vec![0.5]);
    }

    #[test]
    fn w2_examples() {
        let sym = m1(&[-1.0, 1.0], &[0.5, 0.5]);
        let (c, pi) = w2_squared(&sym, &sym).unwrap();
        assert!(c.abs() < 1e-14);
        assert!((pi.get(0, 0) - 0.5).abs() < 1e-14 && pi.get(0, 1).abs() < 1e-14);
        let (c, _) = w2_squared(&m1(&[2.0], &[1.0]), &sym).unwrap();
        assert!((c - 5.0).abs() < 1e-12);
        let (c, pi) = w2_squared(&m1(&[0.0, 1.0], &[0.5, 0.5]), &m1(&[1.0, 2.0], &[0.5, 0.5])).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        assert!(pi.marginal_residual() < 1e-12);
    }

    #[test]
    fn hull_membership() {
        let seg = vec![vec![-1.0], vec![1.0]];
        assert!(convex_hull_contains(&seg, &[0.0]).unwrap());
        assert!(!convex_hull_contains(&seg, &[2.0]).unwrap());
        assert!(convex_hull_contains(&seg, &[1.0 + 1e-12]).unwrap());
        assert!(!convex_hull_contains(&seg, &[1.0 + 1e-7]).unwrap());
        let tri = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(convex_hull_contains(&tri, &[0.25, 0.25]).unwrap());
        assert!(!convex_hull_contains(&tri, &[0.6, 0.6]).unwrap());
    }

    #[test]
    fn merge_within_combines_close_atoms() {
        let m = DiscreteMeasure { points: vec![vec![0.0], vec![1e-12], vec![1.0]], weights: vec![0.25, 0.25, 0.5] };
        let merged = m.merge_within(1e-9);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged.weights(), &[0.5, 0.5]);
    }
}
