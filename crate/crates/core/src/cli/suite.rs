//! Seeded random instances and the invariant battery behind `suite`.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::duality::{self, verify_potential_property};
use crate::error::Result;
use crate::grid::{Grid, GridFunction};
use crate::measure::{convex_hull_contains, make_measure, DiscreteMeasure};
use crate::order::{self, OrderSpec};
use crate::projection::{self, Support};
use crate::transforms::identity_residuals;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` atoms with uniform coordinates in `[lo, hi)^d` and weights in `[0.1, 1)`.
pub fn random_measure(rng: &mut Rng, n: usize, d: usize, lo: f64, hi: f64) -> DiscreteMeasure {
    let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(lo..hi)).collect()).collect();
    let ws: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    make_measure(pts, ws).expect("generated measure is valid")
}

/// Up to `n` atoms on random interior nodes of `grid` (repeated nodes merge).
pub fn grid_measure(rng: &mut Rng, grid: &Grid, n: usize) -> DiscreteMeasure {
    let inner = grid.interior_indices();
    let pts: Vec<Vec<f64>> = (0..n).map(|_| grid.node(inner[rng.random_range(0..inner.len())])).collect();
    let ws: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    make_measure(pts, ws).expect("generated measure is valid")
}

/// Mean-preserving spread of a 1D measure: each atom is kept with
/// probability 0.3, otherwise split into two atoms on either side with
/// weights that keep its mean. The result dominates `mu` in convex order.
pub fn spread_1d(rng: &mut Rng, mu: &DiscreteMeasure) -> DiscreteMeasure {
    let mut pts = Vec::new();
    let mut ws = Vec::new();
    for (p, w) in mu.atoms() {
        if rng.random_range(0.0..1.0) < 0.3 {
            pts.push(p.to_vec());
            ws.push(w);
            continue;
        }
        let a = rng.random_range(0.05..1.0);
        let b = rng.random_range(0.05..1.0);
        pts.push(vec![p[0] - a]);
        ws.push(w * b / (a + b));
        pts.push(vec![p[0] + b]);
        ws.push(w * a / (a + b));
    }
    make_measure(pts, ws).expect("spread of a valid measure is valid")
}

/// Seeded 1D pair for order checks. Cycles through a spread (in the cone),
/// an independent pair (almost never in the cone), and an independent pair
/// shifted to a common mean (either verdict).
pub fn order_pair_1d(rng: &mut Rng, k: usize) -> (DiscreteMeasure, DiscreteMeasure) {
    let n = rng.random_range(1..=8);
    let mu = random_measure(rng, n, 1, -1.0, 1.0);
    let nu = match k % 3 {
        0 => spread_1d(rng, &mu),
        1 => {
            let m = rng.random_range(1..=8);
            random_measure(rng, m, 1, -2.0, 2.0)
        }
        _ => {
            let m = rng.random_range(2..=8);
            let nu = random_measure(rng, m, 1, -2.0, 2.0);
            let shift = crate::measure::mean(&mu)[0] - crate::measure::mean(&nu)[0];
            nu.translate(&[shift]).expect("translation keeps dimension")
        }
    };
    (mu, nu)
}

/// Grid used for the seeded projection instances of dimension `d`.
pub fn instance_grid(d: usize) -> Grid {
    if d == 1 {
        Grid::line(-1.0, 1.0, 41).expect("valid grid")
    } else {
        Grid::square(-1.0, 1.0, 11).expect("valid grid")
    }
}

/// Instance `k` of the projection suite: alternating 1D (up to 20 atoms)
/// and 2D (up to 10 atoms), both measures on interior nodes of
/// [`instance_grid`].
pub fn projection_instance(rng: &mut Rng, k: usize) -> (DiscreteMeasure, DiscreteMeasure, Grid) {
    let d = 1 + k % 2;
    let grid = instance_grid(d);
    let cap = if d == 1 { 20 } else { 10 };
    let n = rng.random_range(2..=cap);
    let m = rng.random_range(2..=cap);
    let mu = grid_measure(rng, &grid, n);
    let nu = grid_measure(rng, &grid, m);
    (mu, nu, grid)
}

/// Random grid function for the transform identities: 1D grids up to 101
/// nodes, 2D up to 21×21.
pub fn transform_instance(rng: &mut Rng, k: usize) -> GridFunction {
    let grid = if k % 2 == 0 {
        Grid::line(-1.0, 1.0, rng.random_range(5..=101)).expect("valid grid")
    } else {
        Grid::square(-1.0, 1.0, rng.random_range(3..=21)).expect("valid grid")
    };
    let vals = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    GridFunction::new(grid, vals).expect("values match grid")
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantRow {
    pub invariant: &'static str,
    pub passed: usize,
    pub total: usize,
    /// Largest residual seen (smallest gap for separator rows).
    pub worst: f64,
    pub tolerance: f64,
}

impl InvariantRow {
    fn new(invariant: &'static str, tolerance: f64, worst: f64) -> Self {
        InvariantRow { invariant, passed: 0, total: 0, worst, tolerance }
    }

    fn record(&mut self, ok: bool, residual: f64, keep_max: bool) {
        self.total += 1;
        self.passed += ok as usize;
        self.worst = if keep_max { self.worst.max(residual) } else { self.worst.min(residual) };
    }

    pub fn all_passed(&self) -> bool {
        self.passed == self.total
    }
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub seed: u64,
    pub order_pairs: usize,
    pub projections: usize,
    pub transforms: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { seed: 42, order_pairs: 100, projections: 20, transforms: 50 }
    }
}

pub const GAP_TOL: f64 = 1e-6;
pub const HULL_TOL: f64 = 1e-9;

pub fn order_battery(seed: u64, count: usize) -> Result<Vec<InvariantRow>> {
    let mut rng = rng(seed);
    let mut agree = InvariantRow::new("order_oracle_agreement", 0.0, 0.0);
    let mut witness = InvariantRow::new("order_witness_reverifies", order::MARTINGALE_TOL, 0.0);
    let mut separator = InvariantRow::new("order_separator_gap", order::SEPARATION_TOL, f64::INFINITY);
    for k in 0..count {
        let (mu, nu) = order_pair_1d(&mut rng, k);
        let cert = order::check_convex_order(&mu, &nu)?;
        let oracle = order::call_function_check_1d(&mu, &nu, 1e-9);
        agree.record(cert.holds == oracle, (cert.holds != oracle) as u8 as f64, true);
        let v = cert.verify(&mu, &nu);
        if cert.holds {
            witness.record(v.valid, v.residual, true);
        } else {
            separator.record(v.valid, v.residual, false);
        }
    }
    Ok(vec![agree, witness, separator])
}

pub fn projection_battery(seed: u64, count: usize) -> Result<Vec<InvariantRow>> {
    let mut rng = rng(seed);
    let mut gap_b = InvariantRow::new("duality_gap_backward", GAP_TOL, 0.0);
    let mut gap_f = InvariantRow::new("duality_gap_forward", GAP_TOL, 0.0);
    let mut potential = InvariantRow::new("optimal_potential_property", duality::POTENTIAL_TOL, 0.0);
    let mut hull = InvariantRow::new("backward_support_in_hull", HULL_TOL, 0.0);
    let mut cone = InvariantRow::new("projection_in_cone", 0.0, 0.0);
    for k in 0..count {
        let (mu, nu, grid) = projection_instance(&mut rng, k);
        let support = Support::Grid(grid.clone());

        let b = projection::project_backward_convex_lp(&mu, &nu, &support)?;
        let db = duality::solve_dual_backward(&mu, &nu, &OrderSpec::Convex, &grid)?;
        let g = duality::duality_gap(&b, &db)?.abs();
        gap_b.record(g <= GAP_TOL, g, true);
        let p = verify_potential_property(&db, &b.projection, &nu);
        potential.record(p.residual <= duality::POTENTIAL_TOL, p.residual, true);
        let mut outside = 0usize;
        for x in b.projection.points() {
            outside += !convex_hull_contains(nu.points(), x)? as usize;
        }
        hull.record(outside == 0, outside as f64, true);
        cone.record(b.certificate.holds, 0.0, true);

        let f = projection::project_forward_convex(&nu, &mu, &support)?;
        let df = duality::solve_dual_forward(&mu, &nu, &OrderSpec::Convex, &grid)?;
        let g = duality::duality_gap(&f, &df)?.abs();
        gap_f.record(g <= GAP_TOL, g, true);
        let p = verify_potential_property(&df, &f.projection, &mu);
        potential.record(p.residual <= duality::POTENTIAL_TOL, p.residual, true);
        cone.record(f.certificate.holds, 0.0, true);
    }
    Ok(vec![gap_b, gap_f, potential, hull, cone])
}

pub fn transform_battery(seed: u64, count: usize) -> Result<Vec<InvariantRow>> {
    let mut rng = rng(seed);
    let mut inv = InvariantRow::new("transform_involution", 1e-12, 0.0);
    let mut leg = InvariantRow::new("transform_legendre_form", 1e-12, 0.0);
    let mut fix = InvariantRow::new("transform_envelope_fixed_point", 1e-9, 0.0);
    for k in 0..count {
        let g = transform_instance(&mut rng, k);
        let r = identity_residuals(&g)?;
        inv.record(r.involution <= inv.tolerance, r.involution, true);
        leg.record(r.legendre_form <= leg.tolerance, r.legendre_form, true);
        fix.record(r.envelope_fixed_point <= fix.tolerance, r.envelope_fixed_point, true);
    }
    Ok(vec![inv, leg, fix])
}

/// Runs every battery; each gets its own stream derived from the seed.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<InvariantRow>> {
    let mut rows = order_battery(cfg.seed, cfg.order_pairs)?;
    rows.extend(projection_battery(cfg.seed.wrapping_add(1), cfg.projections)?);
    rows.extend(transform_battery(cfg.seed.wrapping_add(2), cfg.transforms)?);
    Ok(rows)
}

pub fn to_csv(rows: &[InvariantRow]) -> String {
    let mut out = String::from("invariant,passed,total,worst,tolerance\n");
    for r in rows {
        out += &format!("{},{},{},{:.6e},{:.1e}\n", r.invariant, r.passed, r.total, r.worst, r.tolerance);
    }
    out
}
