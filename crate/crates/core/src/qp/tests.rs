use super::oracle::brute_force;
use super::*;
use proptest::prelude::*;

fn problem(m: usize, weights: Vec<f64>, rows: Vec<AffineConstraint>) -> QpProblem {
    QpProblem {
        m,
        slack_weights: weights,
        constraints: rows,
    }
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn halfline_projection() {
    let prob = problem(1, vec![], vec![AffineConstraint::hard(vec![1.0], 1.0)]);
    let sol = solve(&prob).unwrap();
    assert!(sol.is_optimal());
    assert_close(&sol.u, &[1.0], 1e-12);
    assert_eq!(sol.active, vec![0]);
}

#[test]
fn symmetric_split() {
    let prob = problem(2, vec![], vec![AffineConstraint::hard(vec![1.0, 1.0], 2.0)]);
    assert_close(&solve(&prob).unwrap().u, &[1.0, 1.0], 1e-12);
}

#[test]
fn empty_polyhedron() {
    let prob = problem(
        1,
        vec![],
        vec![
            AffineConstraint::hard(vec![1.0], 1.0).tagged("up"),
            AffineConstraint::hard(vec![-1.0], 1.0).tagged("down"),
        ],
    );
    let sol = solve(&prob).unwrap();
    assert_eq!(sol.status, QpStatus::Infeasible);
    assert!(
        sol.detail.contains("up") && sol.detail.contains("down"),
        "{}",
        sol.detail
    );
    assert_eq!(brute_force(&prob).unwrap().status, QpStatus::Infeasible);
}

#[test]
fn soft_against_hard() {
    let prob = problem(
        1,
        vec![100.0],
        vec![
            AffineConstraint::soft(vec![1.0], 1.0, 0),
            AffineConstraint::hard(vec![-1.0], 0.0),
        ],
    );
    let sol = solve(&prob).unwrap();
    let reference = brute_force(&prob).unwrap();
    assert_close(&sol.u, &reference.u, 1e-9);
    assert_close(&sol.eps, &reference.eps, 1e-9);
    assert_close(&sol.u, &[0.0], 1e-9);
    assert_close(&sol.eps, &[1.0], 1e-9);
}

#[test]
fn no_constraints_gives_zero() {
    let prob = problem(3, vec![5.0], vec![]);
    let sol = solve(&prob).unwrap();
    assert_eq!(sol.u, vec![0.0; 3]);
    assert_eq!(sol.eps, vec![0.0]);
    assert_eq!(sol.kkt_residual, 0.0);
}

#[test]
fn degenerate_rows() {
    let vacuous = problem(
        2,
        vec![],
        vec![AffineConstraint::hard(vec![0.0, 0.0], -1.0)],
    );
    assert_eq!(solve(&vacuous).unwrap().u, vec![0.0, 0.0]);
    let stuck = problem(
        2,
        vec![],
        vec![AffineConstraint::hard(vec![0.0, 1e-13], 0.5).tagged("goal A")],
    );
    let sol = solve(&stuck).unwrap();
    assert_eq!(sol.status, QpStatus::Infeasible);
    assert!(sol.detail.contains("goal A"));
}

#[test]
fn rejects_bad_input() {
    let nan = problem(1, vec![], vec![AffineConstraint::hard(vec![f64::NAN], 0.0)]);
    assert!(matches!(solve(&nan), Err(Error::Input(_))));
    let inf = problem(
        1,
        vec![],
        vec![AffineConstraint::hard(vec![1.0], f64::INFINITY)],
    );
    assert!(matches!(solve(&inf), Err(Error::Input(_))));
    let bad_slack = problem(1, vec![], vec![AffineConstraint::soft(vec![1.0], 0.0, 0)]);
    assert!(matches!(solve(&bad_slack), Err(Error::Input(_))));
    let wide = problem(2, vec![], vec![AffineConstraint::hard(vec![1.0], 0.0)]);
    assert!(matches!(solve(&wide), Err(Error::Dimension { .. })));
}

#[test]
fn oracle_size_limits() {
    let big = problem(7, vec![], vec![]);
    assert!(matches!(brute_force(&big), Err(Error::Size(_))));
    let many = problem(1, vec![], vec![AffineConstraint::hard(vec![1.0], 0.0); 13]);
    assert!(matches!(brute_force(&many), Err(Error::Size(_))));
}

#[test]
fn redundant_and_parallel_rows() {
    let prob = problem(
        2,
        vec![],
        vec![
            AffineConstraint::hard(vec![1.0, 0.0], 1.0),
            AffineConstraint::hard(vec![2.0, 0.0], 2.0),
            AffineConstraint::hard(vec![1.0, 1.0], 1.0),
            AffineConstraint::hard(vec![0.0, 1.0], -3.0),
        ],
    );
    assert_close(&solve(&prob).unwrap().u, &[1.0, 0.0], 1e-10);
}

#[test]
fn small_slacks_when_jointly_satisfiable() {
    let prob = problem(
        2,
        vec![1e4, 1e5],
        vec![
            AffineConstraint::soft(vec![1.0, 0.0], 0.5, 0),
            AffineConstraint::soft(vec![0.0, -1.0], 0.2, 1),
            AffineConstraint::hard(vec![1.0, 1.0], -1.0),
        ],
    );
    let sol = solve(&prob).unwrap();
    assert!(sol.eps.iter().all(|e| e.abs() <= 1e-3), "{:?}", sol.eps);
}

fn arb_problem() -> impl Strategy<Value = QpProblem> {
    (1usize..=4, 0usize..=2)
        .prop_filter("at most six variables", |(m, p)| m + p <= 6)
        .prop_flat_map(|(m, p)| {
            let row = (
                prop::collection::vec(-2.0f64..2.0, m),
                -2.0f64..2.0,
                0..=2 * p,
            )
                .prop_map(move |(a, b, s)| AffineConstraint {
                    a,
                    b,
                    slack_index: (s < p).then_some(s),
                    tag: String::new(),
                });
            (
                Just(m),
                prop::collection::vec(0.5f64..1e3, p),
                prop::collection::vec(row, 0..=8),
            )
        })
        .prop_map(|(m, w, rows)| problem(m, w, rows))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn agrees_with_oracle(prob in arb_problem()) {
        let sol = solve(&prob).unwrap();
        let reference = brute_force(&prob).unwrap();
        prop_assert_eq!(sol.status, reference.status);
        if sol.is_optimal() {
            let best = prob.objective(&reference.u, &reference.eps);
            let gap = (prob.objective(&sol.u, &sol.eps) - best).abs() / best.abs().max(1.0);
            prop_assert!(gap <= 1e-6, "objective gap {}", gap);
            for c in &prob.constraints {
                prop_assert!(c.margin(&sol.u, &sol.eps) >= -FEAS_TOL);
            }
            prop_assert!(sol.kkt_residual <= KKT_TOL);
        }
    }

    #[test]
    fn invariant_under_row_scaling(prob in arb_problem(), scale in 1e-3f64..1e3) {
        // slack terms are not scaled, so compare hard problems only
        let mut prob = prob;
        prob.slack_weights.clear();
        prob.constraints.iter_mut().for_each(|c| c.slack_index = None);
        let mut scaled = prob.clone();
        for c in &mut scaled.constraints {
            c.a.iter_mut().for_each(|v| *v *= scale);
            c.b *= scale;
        }
        let a = solve(&prob).unwrap();
        let b = solve(&scaled).unwrap();
        prop_assert_eq!(a.status, b.status);
        if a.is_optimal() {
            for (x, y) in a.u.iter().zip(&b.u) {
                prop_assert!((x - y).abs() <= 1e-8, "{:?} vs {:?}", a.u, b.u);
            }
        }
    }
}
