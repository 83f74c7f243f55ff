use proptest::prelude::*;
use stochproj::cli::json::format_float;
use stochproj::grid::{Grid, GridFunction};
use stochproj::measure::{convex_hull_contains, make_measure, w2_squared, DiscreteMeasure};
use stochproj::order::{call_function_check_1d, check_convex_order};
use stochproj::projection::{self, Support};
use stochproj::transforms::{identity_residuals, q2, q2_direct, q2bar, q2bar_direct};

fn measure(d: usize, max_atoms: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((prop::collection::vec(-1.0f64..1.0, d), 0.1f64..1.0), 1..=max_atoms).prop_map(|atoms| {
        let (pts, ws): (Vec<_>, Vec<_>) = atoms.into_iter().unzip();
        make_measure(pts, ws).unwrap()
    })
}

fn grid_measure(grid: Grid, max_atoms: usize) -> impl Strategy<Value = DiscreteMeasure> {
    let inner = grid.interior_indices();
    prop::collection::vec((0..inner.len(), 0.1f64..1.0), 1..=max_atoms).prop_map(move |atoms| {
        let (pts, ws): (Vec<_>, Vec<_>) = atoms.into_iter().map(|(k, w)| (grid.node(inner[k]), w)).unzip();
        make_measure(pts, ws).unwrap()
    })
}

/// Each atom split into two with the same mean.
fn with_spread(d: usize) -> impl Strategy<Value = (DiscreteMeasure, DiscreteMeasure)> {
    measure(d, 5).prop_flat_map(move |mu| {
        let n = mu.len();
        (Just(mu), prop::collection::vec((prop::collection::vec(-0.5f64..0.5, d), 0.1f64..0.9), n))
    })
    .prop_map(|(mu, splits)| {
        let mut pts = Vec::new();
        let mut ws = Vec::new();
        for ((p, w), (dir, t)) in mu.atoms().zip(splits) {
            // x ± displacements with weights t, 1 − t balancing at x
            pts.push(p.iter().zip(&dir).map(|(a, v)| a + (1.0 - t) * v).collect::<Vec<f64>>());
            ws.push(w * t);
            pts.push(p.iter().zip(&dir).map(|(a, v)| a - t * v).collect::<Vec<f64>>());
            ws.push(w * (1.0 - t));
        }
        let nu = make_measure(pts, ws).unwrap();
        (mu, nu)
    })
}

fn grid_function(max_n: usize) -> impl Strategy<Value = GridFunction> {
    (3..=max_n, any::<bool>()).prop_flat_map(|(n, two_d)| {
        let grid = if two_d { Grid::square(-1.0, 1.0, n.min(9)).unwrap() } else { Grid::line(-1.0, 1.0, n).unwrap() };
        let len = grid.len();
        prop::collection::vec(-1.0f64..1.0, len).prop_map(move |v| GridFunction::new(grid.clone(), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn floats_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn w2_is_symmetric_and_vanishes_on_the_diagonal(mu in measure(2, 6), nu in measure(2, 6)) {
        let (a, _) = w2_squared(&mu, &nu).unwrap();
        let (b, _) = w2_squared(&nu, &mu).unwrap();
        prop_assert!(a >= -1e-12);
        prop_assert!((a - b).abs() <= 1e-10);
        prop_assert!(w2_squared(&mu, &mu).unwrap().0.abs() <= 1e-12);
    }

    #[test]
    fn spreads_dominate_in_convex_order((mu, nu) in with_spread(2)) {
        let cert = check_convex_order(&mu, &nu).unwrap();
        prop_assert!(cert.holds);
        prop_assert!(cert.verify(&mu, &nu).valid);
    }

    #[test]
    fn order_verdict_matches_call_functions((mu, nu) in with_spread(1), flip in any::<bool>()) {
        let (a, b) = if flip { (&nu, &mu) } else { (&mu, &nu) };
        let cert = check_convex_order(a, b).unwrap();
        prop_assert_eq!(cert.holds, call_function_check_1d(a, b, 1e-9));
        prop_assert!(cert.verify(a, b).valid);
    }

    #[test]
    fn backward_projection_is_feasible_and_no_worse_than_the_vertex(mu in measure(2, 5), nu in measure(2, 5)) {
        let r = projection::project_backward_convex(&mu, &nu).unwrap();
        prop_assert!(r.certificate.holds);
        prop_assert!(r.cost <= w2_squared(&mu, &nu).unwrap().0 + 1e-9);
        for p in r.projection.points() {
            prop_assert!(convex_hull_contains(nu.points(), p).unwrap());
        }
    }

    #[test]
    fn backward_projection_fixes_dominated_sources((mu, nu) in with_spread(1)) {
        let r = projection::project_backward_convex(&mu, &nu).unwrap();
        prop_assert!(r.cost <= 1e-9);
    }

    #[test]
    fn backward_cost_is_translation_invariant(mu in measure(2, 4), nu in measure(2, 4), s in prop::collection::vec(-3.0f64..3.0, 2)) {
        let a = projection::project_backward_convex(&mu, &nu).unwrap().cost;
        let b = projection::project_backward_convex(&mu.translate(&s).unwrap(), &nu.translate(&s).unwrap()).unwrap().cost;
        prop_assert!((a - b).abs() <= 1e-8 * (1.0 + a));
    }

    #[test]
    fn grid_forward_cost_dominates_backward(
        mu in grid_measure(Grid::line(-1.0, 1.0, 21).unwrap(), 6),
        nu in grid_measure(Grid::line(-1.0, 1.0, 21).unwrap(), 6),
    ) {
        let grid = Grid::line(-1.0, 1.0, 21).unwrap();
        let b = projection::project_backward_convex(&mu, &nu).unwrap();
        let f = projection::project_forward_convex(&nu, &mu, &Support::Grid(grid)).unwrap();
        prop_assert!(f.cost >= b.cost - 1e-8);
        prop_assert!(f.duality_gap.abs() <= 1e-6);
        prop_assert!(f.certificate.holds);
    }

    #[test]
    fn legendre_form_transforms_match_enumeration(g in grid_function(31)) {
        prop_assert!(q2(&g, &g.grid).unwrap().max_abs_diff(&q2_direct(&g, &g.grid).unwrap()) <= 1e-12);
        prop_assert!(q2bar(&g, &g.grid).unwrap().max_abs_diff(&q2bar_direct(&g, &g.grid).unwrap()) <= 1e-12);
    }

    #[test]
    fn transform_identities_hold(g in grid_function(25)) {
        let r = identity_residuals(&g).unwrap();
        prop_assert!(r.involution <= 1e-12);
        prop_assert!(r.envelope_fixed_point <= 1e-9);
    }
}
