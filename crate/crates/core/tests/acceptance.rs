//! Acceptance battery. Runs every criterion, prints one PASS/FAIL line per
//! criterion, then fails if any did.

use std::time::Instant;

use rand::RngExt;
use stochproj::characterize::{self, check_volume_expansion, forward_map_potential, MapSample};
use stochproj::cli::suite::{self, grid_measure, projection_instance, random_measure, transform_instance};
use stochproj::duality::{self, fixed_point_residual, verify_potential_property};
use stochproj::grid::Grid;
use stochproj::measure::{convex_hull_contains, make_measure, mean, w2_squared, DiscreteMeasure};
use stochproj::order::OrderSpec;
use stochproj::projection::{self, default_forward_grid, dirac_cost, ProjectionResult, Support};
use stochproj::transforms::identity_residuals;
use stochproj::Result;

type Outcome = Result<(bool, String)>;

/// Backward projections solved along the way, for the support check.
#[derive(Default)]
struct Shared {
    backward: Vec<ProjectionResult>,
    /// Primal results and their duals from the duality suite.
    certified: Vec<(ProjectionResult, duality::DualCertificate)>,
}

fn duality_suite(sh: &mut Shared) -> Outcome {
    let t = Instant::now();
    let mut rng = suite::rng(101);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let (mu, nu, grid) = projection_instance(&mut rng, k);
        let support = Support::Grid(grid.clone());
        let b = projection::project_backward_convex_lp(&mu, &nu, &support)?;
        let db = duality::solve_dual_backward(&mu, &nu, &OrderSpec::Convex, &grid)?;
        worst = worst.max(duality::duality_gap(&b, &db)?.abs());
        let f = projection::project_forward_convex(&nu, &mu, &support)?;
        let df = duality::solve_dual_forward(&mu, &nu, &OrderSpec::Convex, &grid)?;
        worst = worst.max(duality::duality_gap(&f, &df)?.abs());
        sh.backward.push(b.clone());
        sh.certified.push((b, db));
        sh.certified.push((f, df));
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((worst <= 1e-6 && secs < 60.0, format!("40 solves, worst gap {worst:.2e}, {secs:.1} s")))
}

fn dirac_closed_forms(sh: &mut Shared) -> Outcome {
    let cases: Vec<(Vec<f64>, DiscreteMeasure)> = vec![
        (vec![2.0], make_measure(vec![vec![-1.0], vec![0.5], vec![1.0]], vec![0.2, 0.5, 0.3])?),
        (vec![-0.7], make_measure(vec![vec![0.0], vec![1.3]], vec![0.6, 0.4])?),
        (vec![0.4, -0.3], make_measure(vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.5, 1.0]], vec![0.3, 0.3, 0.4])?),
        (vec![-1.0, 1.0], make_measure(vec![vec![0.5, 0.0], vec![0.0, -0.5]], vec![0.5, 0.5])?),
    ];
    let mut ok = true;
    let (mut worst_b, mut worst_f) = (0.0f64, 0.0f64);
    for (x0, nu) in cases {
        let d = x0.len();
        let dirac = DiscreteMeasure::dirac(x0.clone());
        let exact = dirac_cost(&x0, &nu);

        let b = projection::project_backward_convex(&dirac, &nu)?;
        let to_mean = w2_squared(&b.projection, &DiscreteMeasure::dirac(mean(&nu)))?.0;
        worst_b = worst_b.max((b.cost - exact).abs()).max(to_mean.sqrt());
        ok &= (b.cost - exact).abs() <= 1e-8 && to_mean.sqrt() <= 1e-8;

        let grid = default_forward_grid(&dirac, &nu, 3.0, if d == 1 { 201 } else { 21 })?;
        let h = grid.max_spacing();
        let f = projection::project_forward_convex(&nu, &dirac, &Support::Grid(grid))?;
        let shift: Vec<f64> = x0.iter().zip(mean(&nu)).map(|(a, m)| a - m).collect();
        let translated = nu.translate(&shift)?;
        let dist = w2_squared(&f.projection, &translated)?.0.sqrt();
        worst_f = worst_f.max((f.cost - exact).abs() / (h * h));
        ok &= (f.cost - exact).abs() <= 2.0 * h * h && (f.cost - b.cost).abs() <= 2.0 * h * h && dist <= h;
        sh.backward.push(b);
    }
    Ok((ok, format!("backward worst error {worst_b:.1e}, forward cost error {worst_f:.2} h^2")))
}

fn refinement(sh: &mut Shared) -> Outcome {
    let mut rng = suite::rng(11);
    let sizes = [21usize, 41, 81, 161, 321];
    let mut ok = true;
    let mut min_order = f64::INFINITY;
    let mut worst_below = 0.0f64;
    for _ in 0..10 {
        let mu = random_measure(&mut rng, 6, 1, -1.0, 1.0);
        let nu = random_measure(&mut rng, 6, 1, -1.0, 1.0);
        let b = projection::project_backward_convex(&mu, &nu)?;
        let mut diffs = Vec::new();
        let mut hs = Vec::new();
        for n in sizes {
            let g = default_forward_grid(&mu, &nu, 3.0, n)?;
            hs.push(g.max_spacing());
            let f = projection::project_forward_convex(&nu, &mu, &Support::Grid(g))?;
            worst_below = worst_below.max(b.cost - f.cost);
            diffs.push((f.cost - b.cost).abs());
        }
        ok &= diffs.windows(2).all(|w| w[1] < w[0]);
        // least-squares slope of log|T_f − T_b| against log h
        let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = diffs.iter().map(|d| d.max(1e-300).ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 5.0, ys.iter().sum::<f64>() / 5.0);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        min_order = min_order.min(slope);
        sh.backward.push(b);
    }
    ok &= min_order >= 0.8 && worst_below <= 1e-8;
    Ok((ok, format!("smallest empirical order {min_order:.2}, worst T_b - T_f {worst_below:.1e}")))
}

fn transform_identities() -> Outcome {
    let mut rng = suite::rng(3);
    let mut worst = [0.0f64; 3];
    for k in 0..50 {
        let r = identity_residuals(&transform_instance(&mut rng, k))?;
        worst[0] = worst[0].max(r.involution);
        worst[1] = worst[1].max(r.legendre_form);
        worst[2] = worst[2].max(r.envelope_fixed_point);
    }
    let ok = worst[0] <= 1e-12 && worst[1] <= 1e-12 && worst[2] <= 1e-9;
    Ok((ok, format!("involution {:.1e}, legendre form {:.1e}, envelope fixed point {:.1e}", worst[0], worst[1], worst[2])))
}

fn cone_coincidence_1d(fixed_points: &mut Vec<f64>) -> Outcome {
    let mut rng = suite::rng(25);
    let grid = Grid::line(-1.0, 1.0, 41)?;
    let support = Support::Grid(grid.clone());
    let (mut cost, mut dist) = (0.0f64, 0.0f64);
    for _ in 0..25 {
        let n = rng.random_range(2..=10);
        let m = rng.random_range(2..=10);
        let mu = grid_measure(&mut rng, &grid, n);
        let nu = grid_measure(&mut rng, &grid, m);
        let bs = projection::project_backward_subharmonic(&mu, &nu, &grid)?;
        let bc = projection::project_backward_convex_lp(&mu, &nu, &support)?;
        cost = cost.max((bs.cost - bc.cost).abs());
        dist = dist.max(w2_squared(&bs.projection, &bc.projection)?.0.max(0.0).sqrt());
        let fs = projection::project_forward_subharmonic(&nu, &mu, &grid)?;
        let fc = projection::project_forward_convex(&nu, &mu, &support)?;
        cost = cost.max((fs.cost - fc.cost).abs());
        dist = dist.max(w2_squared(&fs.projection, &fc.projection)?.0.max(0.0).sqrt());
        fixed_points.push(fixed_point_residual(fs.dual.as_ref().expect("forward dual"))?);
    }
    Ok((cost <= 1e-8 && dist <= 1e-6, format!("50 pairs, cost difference {cost:.1e}, W2 {dist:.1e}")))
}

fn order_oracle() -> Outcome {
    let rows = suite::order_battery(42, 100)?;
    let ok = rows.iter().all(|r| r.all_passed()) && rows[0].total == 100;
    let detail = rows.iter().map(|r| format!("{} {}/{}", r.invariant, r.passed, r.total)).collect::<Vec<_>>().join(", ");
    Ok((ok, detail))
}

fn support_in_hull(sh: &Shared) -> Outcome {
    let mut outside = 0;
    let mut atoms = 0;
    for r in &sh.backward {
        for p in r.projection.points() {
            atoms += 1;
            outside += !convex_hull_contains(r.vertex.points(), p)? as usize;
        }
    }
    Ok((outside == 0, format!("{} projections, {atoms} atoms, {outside} outside", sh.backward.len())))
}

fn potential_property(sh: &Shared) -> Outcome {
    let mut worst = 0.0f64;
    for (r, dual) in &sh.certified {
        worst = worst.max(verify_potential_property(dual, &r.projection, &r.vertex).residual);
    }
    Ok((worst <= 1e-6, format!("{} certified solves, worst residual {worst:.1e}", sh.certified.len())))
}

/// `x ↦ A x + c` with `A` symmetric, eigenvalues `eig`, eigenbasis rotated by `angle`.
fn affine(m: &DiscreteMeasure, eig: [f64; 2], angle: f64, c: [f64; 2]) -> Result<DiscreteMeasure> {
    let (s, co) = angle.sin_cos();
    let a = [
        [co * co * eig[0] + s * s * eig[1], co * s * (eig[0] - eig[1])],
        [co * s * (eig[0] - eig[1]), s * s * eig[0] + co * co * eig[1]],
    ];
    m.map(|x| {
        if x.len() == 1 {
            vec![eig[0] * x[0] + c[0]]
        } else {
            vec![a[0][0] * x[0] + a[0][1] * x[1] + c[0], a[1][0] * x[0] + a[1][1] * x[1] + c[1]]
        }
    })
}

fn characterization_round_trips(fixed_points: &mut Vec<f64>) -> Outcome {
    let mut rng = suite::rng(5);
    let mut ok = true;
    let (mut worst_eq, mut min_neg) = (0.0f64, f64::INFINITY);
    for k in 0..10 {
        let d = 1 + k % 2;
        let ang = rng.random_range(0.0..3.0);
        let c = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];

        // contraction image: the backward projection is the vertex itself
        let mu = random_measure(&mut rng, 8, d, -1.0, 1.0);
        let eig = [rng.random_range(0.3..1.0), rng.random_range(0.3..1.0)];
        let nu = affine(&mu, eig, ang, c)?;
        let r = projection::project_backward_convex(&mu, &nu)?;
        let w = w2_squared(&r.projection, &nu)?.0;
        let map = MapSample::from_barycenters(&r.coupling);
        worst_eq = worst_eq.max(w);
        ok &= w <= 1e-10 && map.contraction_defect() <= 1e-8 && map.is_cyclically_monotone();
        let bad = affine(&mu, [eig[0] + 1.0, eig[1] + 1.0], ang, c)?;
        let rb = projection::project_backward_convex(&mu, &bad)?;
        let wb = w2_squared(&rb.projection, &bad)?.0;
        min_neg = min_neg.min(wb);
        ok &= wb > 1e-8;

        // expansion image: the forward projection is the vertex itself
        let nu = random_measure(&mut rng, 8, d, -1.0, 1.0);
        let eig = [rng.random_range(1.0..2.0), rng.random_range(1.0..2.0)];
        let mu = affine(&nu, eig, ang, c)?;
        let g = default_forward_grid(&mu, &nu, 3.0, if d == 1 { 201 } else { 15 })?;
        let mut cands = mu.points().to_vec();
        cands.extend(g.nodes());
        let f = projection::project_forward_convex(&nu, &mu, &Support::Points(cands))?;
        let w = w2_squared(&f.projection, &mu)?.0;
        let map = MapSample::from_coupling(&f.coupling.transpose(), characterize::DOMINANCE);
        worst_eq = worst_eq.max(w);
        ok &= w <= 1e-8 && map.excluded == 0 && map.expansion_defect() <= 1e-8 && map.is_cyclically_monotone();
        let bad = affine(&nu, [0.5, 0.6], ang, c)?;
        let mut cands = bad.points().to_vec();
        cands.extend(g.nodes());
        let fb = projection::project_forward_convex(&nu, &bad, &Support::Points(cands))?;
        let wb = w2_squared(&fb.projection, &bad)?.0;
        min_neg = min_neg.min(wb);
        ok &= wb > 1e-8;
    }

    for (n, sigma) in [(13usize, 0.3), (15, 0.25)] {
        let grid = Grid::square(-1.0, 1.0, n)?;
        let nu = gaussian_on(&grid, sigma, sigma);
        let mu = gaussian_on(&grid, sigma * 1.4, sigma * 0.8);
        let r = projection::project_forward_subharmonic(&nu, &mu, &grid)?;
        fixed_points.push(fixed_point_residual(r.dual.as_ref().expect("forward dual"))?);
    }
    let fp = fixed_points.iter().copied().fold(0.0, f64::max);
    ok &= fp <= 1e-6;
    Ok((
        ok,
        format!(
            "20 positive instances, worst W2^2 {worst_eq:.1e}; negatives min W2^2 {min_neg:.1e}; fixed point {fp:.1e} over {} duals",
            fixed_points.len()
        ),
    ))
}

fn geodesic_demo() -> Outcome {
    let a = projection::geodesic_demo()?;
    let b = projection::geodesic_demo()?;
    let same = a.midpoint == b.midpoint && a.order_holds == b.order_holds;
    let ok = a.endpoint_order_holds && !a.order_holds && same && a.certificate.verify(&a.mu, &a.midpoint).valid;
    Ok((ok, format!("endpoints ordered {}, midpoint ordered {}, repeatable {same}", a.endpoint_order_holds, a.order_holds)))
}

/// Gaussian weights on the interior nodes, dropping those below 5% of the peak.
fn gaussian_on(grid: &Grid, sx: f64, sy: f64) -> DiscreteMeasure {
    let mut pts = Vec::new();
    let mut ws = Vec::new();
    for k in grid.interior_indices() {
        let p = grid.node(k);
        let w = (-(p[0] * p[0] / (2.0 * sx * sx) + p[1] * p[1] / (2.0 * sy * sy))).exp();
        if w > 0.05 {
            pts.push(p);
            ws.push(w);
        }
    }
    make_measure(pts, ws).expect("non-empty measure")
}

fn volume_expansion() -> Outcome {
    let cases = [(17usize, 0.25, 0.35, 0.2), (21, 0.25, 0.35, 0.2), (21, 0.2, 0.3, 0.3), (17, 0.22, 0.35, 0.25), (21, 0.22, 0.4, 0.15)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (n, s_nu, sx, sy) in cases {
        let grid = Grid::square(-1.0, 1.0, n)?;
        let nu = gaussian_on(&grid, s_nu, s_nu);
        let mu = gaussian_on(&grid, sx, sy);
        let r = projection::project_forward_subharmonic(&nu, &mu, &grid)?;
        let psi = forward_map_potential(r.dual.as_ref().expect("forward dual"), &grid)?;
        let rep = check_volume_expansion(psi.function(), &r.coupling)?;
        ok &= rep.passed == Some(true);
        parts.push(format!("{:.0}% det ok, density ratio {:.2}", 100.0 * rep.det_fraction, rep.worst_density_ratio));
    }
    Ok((ok, parts.join("; ")))
}

#[test]
fn acceptance_criteria() {
    let mut sh = Shared::default();
    let mut fixed_points = Vec::new();
    let results: Vec<(&str, Outcome)> = vec![
        ("strong duality suite", duality_suite(&mut sh)),
        ("Dirac closed forms", dirac_closed_forms(&mut sh)),
        ("backward/forward refinement", refinement(&mut sh)),
        ("transform identities", transform_identities()),
        ("1D cone coincidence", cone_coincidence_1d(&mut fixed_points)),
        ("order oracle agreement", order_oracle()),
        ("support monotonicity", support_in_hull(&sh)),
        ("optimal potential property", potential_property(&sh)),
        ("characterization round-trips", characterization_round_trips(&mut fixed_points)),
        ("geodesic demo", geodesic_demo()),
        ("volume expansion", volume_expansion()),
    ];

    let mut failed = Vec::new();
    for (k, (name, outcome)) in results.iter().enumerate() {
        let (pass, detail) = match outcome {
            Ok((p, d)) => (*p, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        println!("criterion {:>2} {} {name}: {detail}", k + 1, if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
