//! Regular axis-aligned grids and functions sampled on their nodes.
//!
//! Nodes are ordered row-major with the last axis fastest.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: Vec<usize>,
}

impl TryFrom<RawGrid> for Grid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        Grid::new(raw.lo, raw.hi, raw.n)
    }
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n: Vec<usize>) -> Result<Self> {
        Self::with_budget(lo, hi, n, DEFAULT_NODE_BUDGET)
    }

    pub fn with_budget(lo: Vec<f64>, hi: Vec<f64>, n: Vec<usize>, budget: usize) -> Result<Self> {
        let d = lo.len();
        if d == 0 || hi.len() != d || n.len() != d {
            return Err(Error::InvalidGrid(format!(
                "lo/hi/n lengths disagree ({}, {}, {})",
                lo.len(),
                hi.len(),
                n.len()
            )));
        }
        for a in 0..d {
            if n[a] < 2 {
                return Err(Error::InvalidGrid(format!("axis {a} has fewer than 2 nodes")));
            }
            if !(lo[a].is_finite() && hi[a].is_finite() && hi[a] > lo[a]) {
                return Err(Error::InvalidGrid(format!("axis {a} has empty or non-finite extent")));
            }
        }
        let total = n.iter().try_fold(1usize, |acc, &k| acc.checked_mul(k)).unwrap_or(usize::MAX);
        if total > budget {
            return Err(Error::TooLarge { what: "grid nodes", size: total, cap: budget });
        }
        Ok(Grid { lo, hi, n })
    }

    /// 1D grid on `[lo, hi]` with `n` nodes.
    pub fn line(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![lo], vec![hi], vec![n])
    }

    /// Square grid `[lo, hi]^2` with `n` nodes per axis.
    pub fn square(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![lo, lo], vec![hi, hi], vec![n, n])
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn shape(&self) -> &[usize] {
        &self.n
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.n[axis] - 1) as f64
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.h(a)).fold(0.0, f64::max)
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.n[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.h(axis)
        }
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            out[a] = idx % self.n[a];
            idx /= self.n[a];
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.n).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx).iter().enumerate().map(|(a, &i)| self.coord(a, i)).collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        self.multi_index(idx).iter().zip(&self.n).all(|(&i, &n)| i > 0 && i + 1 < n)
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.is_interior(k)).collect()
    }

    /// Neighbor of `idx` one step along `axis` in direction `step` (±1).
    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        self.offset(idx, &unit(self.dim(), axis, step))
    }

    /// Node displaced by an integer offset, if it stays on the grid.
    pub fn offset(&self, idx: usize, off: &[isize]) -> Option<usize> {
        let mut m = self.multi_index(idx);
        for (a, &o) in off.iter().enumerate() {
            let v = m[a] as isize + o;
            if v < 0 || v >= self.n[a] as isize {
                return None;
            }
            m[a] = v as usize;
        }
        Some(self.flat_index(&m))
    }

    /// Closed-box membership with slack `tol` in units of grid spacing.
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.dim()
            && (0..self.dim()).all(|a| p[a] >= self.lo[a] - tol * self.h(a) && p[a] <= self.hi[a] + tol * self.h(a))
    }

    /// Node coinciding with `p` up to `rel_tol` grid spacings.
    pub fn locate(&self, p: &[f64], rel_tol: f64) -> Option<usize> {
        if p.len() != self.dim() {
            return None;
        }
        let mut m = Vec::with_capacity(self.dim());
        for a in 0..self.dim() {
            let t = (p[a] - self.lo[a]) / self.h(a);
            let i = t.round();
            if (t - i).abs() > rel_tol || i < 0.0 || i > (self.n[a] - 1) as f64 {
                return None;
            }
            m.push(i as usize);
        }
        Some(self.flat_index(&m))
    }

    /// Closest node, clamping to the box.
    pub fn nearest(&self, p: &[f64]) -> usize {
        let m: Vec<usize> = (0..self.dim())
            .map(|a| {
                let t = ((p[a] - self.lo[a]) / self.h(a)).round();
                t.clamp(0.0, (self.n[a] - 1) as f64) as usize
            })
            .collect();
        self.flat_index(&m)
    }

    /// Sum over axes of `2 / h_a²`, the diagonal of the negative Laplacian.
    pub fn laplacian_diagonal(&self) -> f64 {
        (0..self.dim()).map(|a| 2.0 / (self.h(a) * self.h(a))).sum()
    }

    /// Standard (2d+1)-point Laplacian at an interior node.
    pub fn laplacian(&self, values: &[f64], idx: usize) -> f64 {
        let mut s = 0.0;
        for a in 0..self.dim() {
            let h2 = self.h(a) * self.h(a);
            let up = self.neighbor(idx, a, 1).expect("interior node");
            let dn = self.neighbor(idx, a, -1).expect("interior node");
            s += (values[up] + values[dn] - 2.0 * values[idx]) / h2;
        }
        s
    }

    /// Lattice directions used for discrete convexity: the axes and, in 2D,
    /// the two diagonals.
    pub fn directions(&self) -> Vec<Vec<isize>> {
        let d = self.dim();
        let mut dirs: Vec<Vec<isize>> = (0..d).map(|a| unit(d, a, 1)).collect();
        if d == 2 {
            dirs.push(vec![1, 1]);
            dirs.push(vec![1, -1]);
        }
        dirs
    }

    pub fn step_length_sq(&self, dir: &[isize]) -> f64 {
        dir.iter().enumerate().map(|(a, &o)| (o as f64 * self.h(a)).powi(2)).sum()
    }

    /// Multilinear interpolation weights `(node, weight)` at `p`, which must
    /// lie in the closed box.
    pub fn interpolation_stencil(&self, p: &[f64]) -> Vec<(usize, f64)> {
        let d = self.dim();
        let mut base = Vec::with_capacity(d);
        let mut frac = Vec::with_capacity(d);
        for a in 0..d {
            let t = ((p[a] - self.lo[a]) / self.h(a)).clamp(0.0, (self.n[a] - 1) as f64);
            let i = (t.floor() as usize).min(self.n[a] - 2);
            base.push(i);
            frac.push(t - i as f64);
        }
        let mut out = Vec::with_capacity(1 << d);
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut m = base.clone();
            for a in 0..d {
                if corner >> a & 1 == 1 {
                    m[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                out.push((self.flat_index(&m), w));
            }
        }
        out
    }

    /// Node index of every point; points must sit on nodes (within 1e-9
    /// spacings) and, with `interior_only`, off the boundary.
    pub fn locate_all(&self, points: &[Vec<f64>], interior_only: bool) -> Result<Vec<usize>> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if p.len() != self.dim() {
                    return Err(Error::DimensionMismatch { expected: self.dim(), found: p.len() });
                }
                if !self.contains(p, 1e-9) {
                    return Err(Error::OutsideDomain { index: i, point: p.clone() });
                }
                let k = self.locate(p, 1e-9).ok_or_else(|| Error::OffGrid { index: i, point: p.clone() })?;
                if interior_only && !self.is_interior(k) {
                    return Err(Error::OnBoundary { index: i, point: p.clone() });
                }
                Ok(k)
            })
            .collect()
    }

    /// Weights of `points`/`weights` accumulated onto the nodes they occupy.
    pub fn node_masses(&self, points: &[Vec<f64>], weights: &[f64], interior_only: bool) -> Result<Vec<f64>> {
        let idx = self.locate_all(points, interior_only)?;
        let mut out = vec![0.0; self.len()];
        for (k, w) in idx.into_iter().zip(weights) {
            out[k] += w;
        }
        Ok(out)
    }

    /// Uniform refinement halving every spacing.
    pub fn refined(&self) -> Result<Grid> {
        Grid::new(self.lo.clone(), self.hi.clone(), self.n.iter().map(|&k| 2 * k - 1).collect())
    }
}

fn unit(d: usize, axis: usize, step: isize) -> Vec<isize> {
    let mut v = vec![0; d];
    v[axis] = step;
    v
}

/// Real values on the nodes of a grid; `+∞`/`−∞` are allowed as sentinels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGridFunction")]
pub struct GridFunction {
    pub grid: Grid,
    #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
    pub values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGridFunction {
    grid: Grid,
    #[serde(deserialize_with = "de_extended")]
    values: Vec<f64>,
}

impl TryFrom<RawGridFunction> for GridFunction {
    type Error = Error;

    fn try_from(raw: RawGridFunction) -> Result<Self> {
        GridFunction::new(raw.grid, raw.values)
    }
}

fn ser_extended<S: Serializer>(values: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for v in values {
        if v.is_finite() {
            seq.serialize_element(v)?;
        } else if *v > 0.0 {
            seq.serialize_element("inf")?;
        } else if *v < 0.0 {
            seq.serialize_element("-inf")?;
        } else {
            seq.serialize_element("nan")?;
        }
    }
    seq.end()
}

fn de_extended<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Entry {
        Num(f64),
        Text(String),
    }
    let raw = Vec::<Entry>::deserialize(d)?;
    raw.into_iter()
        .map(|e| match e {
            Entry::Num(v) => Ok(v),
            Entry::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("values: unrecognized entry {other:?}"))),
            },
        })
        .collect()
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), found: values.len() });
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Input("values: NaN entry".into()));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(&grid.node(k))).collect();
        GridFunction { grid: grid.clone(), values }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        GridFunction { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn shifted(&self, c: f64) -> Self {
        GridFunction { grid: self.grid.clone(), values: self.values.iter().map(|v| v + c).collect() }
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0f64, |m, (a, b)| {
            if a == b {
                m
            } else {
                m.max((a - b).abs())
            }
        })
    }

    /// Value at a point: exact at nodes, multilinear in between. The flag is
    /// `true` when interpolation was needed.
    pub fn eval(&self, p: &[f64]) -> (f64, bool) {
        if let Some(k) = self.grid.locate(p, 1e-9) {
            return (self.values[k], false);
        }
        let v = self.grid.interpolation_stencil(p).iter().map(|&(k, w)| w * self.values[k]).sum();
        (v, true)
    }

    /// Discrete Laplacian at every interior node (`None` elsewhere).
    pub fn laplacian(&self) -> Vec<Option<f64>> {
        (0..self.grid.len())
            .map(|k| self.grid.is_interior(k).then(|| self.grid.laplacian(&self.values, k)))
            .collect()
    }

    /// Minimum of the interior Laplacian; `+∞` when the grid has no interior.
    pub fn min_laplacian(&self) -> f64 {
        self.laplacian().into_iter().flatten().fold(f64::INFINITY, f64::min)
    }

    pub fn max_laplacian(&self) -> f64 {
        self.laplacian().into_iter().flatten().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_subharmonic(&self, tol: f64) -> bool {
        self.min_laplacian() >= -tol
    }

    /// Directional second-difference quotients `(v(x+s)+v(x−s)−2v(x))/|s|²`
    /// over the lattice directions, at every node where both neighbors exist.
    pub fn second_difference_quotients(&self) -> Vec<(usize, f64)> {
        let g = &self.grid;
        let mut out = Vec::new();
        for dir in g.directions() {
            let neg: Vec<isize> = dir.iter().map(|v| -v).collect();
            let len2 = g.step_length_sq(&dir);
            for k in 0..g.len() {
                if let (Some(up), Some(dn)) = (g.offset(k, &dir), g.offset(k, &neg)) {
                    let v = self.values[up] + self.values[dn] - 2.0 * self.values[k];
                    out.push((k, v / len2));
                }
            }
        }
        out
    }

    /// Largest relative convexity violation: the worst value of
    /// `−(v₊ + v₋ − 2v) / (1 + |v|)` over lattice directions (≤ 0 when convex).
    pub fn convexity_defect(&self) -> f64 {
        let g = &self.grid;
        let mut worst = f64::NEG_INFINITY;
        for dir in g.directions() {
            let neg: Vec<isize> = dir.iter().map(|v| -v).collect();
            for k in 0..g.len() {
                if let (Some(up), Some(dn)) = (g.offset(k, &dir), g.offset(k, &neg)) {
                    let v = self.values[up] + self.values[dn] - 2.0 * self.values[k];
                    worst = worst.max(-v / (1.0 + self.values[k].abs()));
                }
            }
        }
        worst
    }
}

pub const CONVEXITY_TOL: f64 = 1e-10;

/// A grid function whose discrete convexity (second differences along the
/// axes and, in 2D, the diagonals) has been checked.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledConvexFunction {
    #[serde(flatten)]
    func: GridFunction,
    verified: bool,
}

impl SampledConvexFunction {
    pub fn new(func: GridFunction) -> Result<Self> {
        Self::with_tolerance(func, CONVEXITY_TOL)
    }

    pub fn with_tolerance(func: GridFunction, tol: f64) -> Result<Self> {
        if func.grid.dim() > 2 {
            return Err(Error::Unsupported("sampled convex functions are 1D or 2D".into()));
        }
        if !func.is_finite() {
            return Err(Error::Input("convex sample must be finite".into()));
        }
        let defect = func.convexity_defect();
        if defect > tol {
            return Err(Error::Input(format!("function is not discretely convex (defect {defect:e})")));
        }
        Ok(SampledConvexFunction { func, verified: true })
    }

    pub fn function(&self) -> &GridFunction {
        &self.func
    }

    pub fn into_function(self) -> GridFunction {
        self.func
    }

    pub fn verified(&self) -> bool {
        self.verified
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_ordering_is_row_major() {
        let g = Grid::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![2, 3]).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.node(1), vec![0.0, 1.0]);
        assert_eq!(g.node(3), vec![1.0, 0.0]);
        assert_eq!(g.multi_index(5), vec![1, 2]);
        assert_eq!(g.flat_index(&[1, 2]), 5);
        assert_eq!(g.locate(&[1.0, 1.0], 1e-9), Some(4));
        assert_eq!(g.locate(&[0.5, 1.0], 1e-9), None);
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::line(0.0, 1.0, 1).is_err());
        assert!(Grid::line(1.0, 1.0, 3).is_err());
        assert!(Grid::with_budget(vec![0.0, 0.0], vec![1.0, 1.0], vec![100, 100], 1000).is_err());
    }

    #[test]
    fn interior_and_laplacian() {
        let g = Grid::square(-1.0, 1.0, 5).unwrap();
        assert_eq!(g.interior_indices().len(), 9);
        let f = GridFunction::from_fn(&g, |x| x[0] * x[0] + x[1] * x[1]);
        for l in f.laplacian().into_iter().flatten() {
            assert!((l - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_is_exact_for_bilinear() {
        let g = Grid::square(0.0, 1.0, 3).unwrap();
        let f = GridFunction::from_fn(&g, |x| 1.0 + 2.0 * x[0] - x[1] + x[0] * x[1]);
        let (v, flagged) = f.eval(&[0.3, 0.7]);
        assert!(flagged);
        assert!((v - (1.0 + 0.6 - 0.7 + 0.21)).abs() < 1e-14);
        assert_eq!(f.eval(&[0.5, 0.5]), (f.values[4], false));
    }

    #[test]
    fn json_round_trip_with_infinities() {
        let g = Grid::line(0.0, 1.0, 3).unwrap();
        let f = GridFunction::new(g, vec![1.0, f64::INFINITY, f64::NEG_INFINITY]).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("\"inf\"") && s.contains("\"-inf\""));
        let back: GridFunction = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn convexity_verification() {
        let g = Grid::square(-1.0, 1.0, 5).unwrap();
        assert!(SampledConvexFunction::new(GridFunction::from_fn(&g, |x| x[0] * x[0] + x[1] * x[1])).is_ok());
        // x·y is saddle-shaped: fails along the (1,-1) diagonal
        assert!(SampledConvexFunction::new(GridFunction::from_fn(&g, |x| x[0] * x[1])).is_err());
    }
}
