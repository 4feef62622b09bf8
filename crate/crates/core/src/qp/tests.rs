use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const TOL: f64 = 1e-6;

fn dense(q: DMatrix<f64>, c: &[f64], a: DMatrix<f64>, b: &[f64], lower: &[f64], upper: &[f64]) -> QpProblem {
    QpProblem {
        q,
        c: DVector::from_column_slice(c),
        a: ConstraintMatrix::Dense(a),
        b: DVector::from_column_slice(b),
        lower: DVector::from_column_slice(lower),
        upper: DVector::from_column_slice(upper),
    }
}

fn box_projection() -> QpProblem {
    // ‖z − t‖² = zᵀz − 2tᵀz + const
    let t = [1.3, -0.2, 0.5];
    dense(DMatrix::identity(3, 3) * 2.0, &t.map(|v| -2.0 * v), DMatrix::zeros(0, 3), &[], &[0.0; 3], &[1.0; 3])
}

#[test]
fn projection_onto_box() {
    let p = box_projection();
    let s = solve(&p, TOL, DEFAULT_MAX_ITER).unwrap();
    assert!(s.is_solved());
    for (z, e) in s.z.iter().zip([1.0, 0.0, 0.5]) {
        assert!((z - e).abs() < 1e-6, "{:?}", s.z);
    }
    assert!(s.residuals.max() <= TOL);
}

#[test]
fn single_active_inequality() {
    let inf = f64::INFINITY;
    let p = dense(DMatrix::from_element(1, 1, 2.0), &[0.0], DMatrix::from_element(1, 1, -1.0), &[-1.0], &[-inf], &[inf]);
    let s = solve(&p, 1e-9, DEFAULT_MAX_ITER).unwrap();
    assert!(s.is_solved());
    assert!((s.z[0] - 1.0).abs() < 1e-8);
    assert!((s.lambda[0] - 2.0).abs() < 1e-7);
}

#[test]
fn residuals_of_exact_and_perturbed_points() {
    let p = box_projection();
    let exact = QpSolution {
        status: QpStatus::Solved,
        z: vec![1.0, 0.0, 0.5],
        lambda: vec![],
        eta_lower: vec![0.0, 0.4, 0.0],
        eta_upper: vec![0.6, 0.0, 0.0],
        objective: 0.0,
        iterations: 0,
        residuals: KktResiduals::default(),
        mu_trace: vec![],
    };
    assert!(kkt_residuals(&p, &exact).unwrap().max() <= 1e-10);
    let mut moved = exact.clone();
    moved.z.iter_mut().for_each(|z| *z += 0.1);
    let r = kkt_residuals(&p, &moved).unwrap();
    assert!(r.primal >= 0.05 || r.stationarity >= 0.05, "{r:?}");

    let zero = QpProblem::unconstrained(DMatrix::zeros(2, 2), DVector::zeros(2));
    let s = solve(&zero, TOL, 10).unwrap();
    assert_eq!(s.z, vec![0.0, 0.0]);
    assert_eq!(kkt_residuals(&zero, &s).unwrap(), KktResiduals::default());
}

#[test]
fn matches_grid_search_in_two_dimensions() {
    // (z1 − 1)² + (z2 − 0.8)², z1 + z2 ≤ 1, box [0, 1]²
    let p = dense(DMatrix::identity(2, 2) * 2.0, &[-2.0, -1.6], DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), &[1.0], &[0.0, 0.0], &[1.0, 1.0]);
    let s = solve(&p, TOL, DEFAULT_MAX_ITER).unwrap();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let steps = 1000;
    for i in 0..=steps {
        for j in 0..=steps {
            let (a, b) = (i as f64 / steps as f64, j as f64 / steps as f64);
            if a + b <= 1.0 + 1e-12 {
                let f = (a - 1.0).powi(2) + (b - 0.8).powi(2);
                if f < best.0 {
                    best = (f, a, b);
                }
            }
        }
    }
    assert!((s.z[0] - best.1).abs() <= 2e-3 && (s.z[1] - best.2).abs() <= 2e-3, "{:?} vs {best:?}", s.z);
    assert!(s.lambda[0] > 0.0);
}

#[test]
fn detects_infeasibility() {
    let inf = f64::INFINITY;
    // z ≥ 1 and z ≤ 0
    let p = dense(DMatrix::from_element(1, 1, 1.0), &[0.0], DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]), &[-1.0, 0.0], &[-inf], &[inf]);
    let s = solve(&p, TOL, 500).unwrap();
    assert_eq!(s.status, QpStatus::Infeasible);
    let p = dense(DMatrix::from_element(1, 1, 1.0), &[0.0], DMatrix::from_element(1, 1, -1.0), &[-2.0], &[0.0], &[1.0]);
    let s = solve(&p, TOL, 500).unwrap();
    assert_eq!(s.status, QpStatus::Infeasible);
}

#[test]
fn rejects_bad_input() {
    let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    let p = QpProblem::unconstrained(q, DVector::zeros(2));
    assert!(matches!(solve(&p, TOL, 10), Err(Error::NotPsd(_))));
    let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    let p = QpProblem::unconstrained(q, DVector::zeros(2));
    assert!(matches!(solve(&p, TOL, 10), Err(Error::NotPsd(_))));
    let p = QpProblem::unconstrained(DMatrix::identity(3, 3), DVector::zeros(2));
    assert!(matches!(solve(&p, TOL, 10), Err(Error::Dimension(_))));
}

/// Random strictly convex problem that is feasible by construction.
fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QpProblem {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = &g * g.transpose() + DMatrix::identity(n, n) * 0.1;
    let c = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let z0 = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let b = &a * &z0 + DVector::from_fn(m, |_, _| rng.random_range(0.0..0.5));
    let lower = DVector::from_fn(n, |i, _| if i % 3 == 0 { f64::NEG_INFINITY } else { -1.0 });
    let upper = DVector::from_fn(n, |i, _| if i % 4 == 1 { f64::INFINITY } else { 1.0 });
    QpProblem { q, c, a: ConstraintMatrix::Dense(a), b, lower, upper }
}

#[test]
fn mu_is_nonincreasing_and_complementarity_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let p = random_problem(&mut rng, 6, 8);
        let s = solve(&p, TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(s.is_solved(), "{:?}", s.status);
        assert!(s.residuals.complementarity <= TOL);
        for pair in s.mu_trace.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "{:?}", s.mu_trace);
        }
    }
}

#[test]
fn row_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let p = random_problem(&mut rng, 5, 7);
        let a = p.a.to_dense();
        let perm: Vec<usize> = (0..a.nrows()).rev().collect();
        let mut permuted = p.clone();
        permuted.a = ConstraintMatrix::Dense(a.select_rows(&perm));
        permuted.b = p.b.select_rows(&perm);
        let s1 = solve(&p, TOL, DEFAULT_MAX_ITER).unwrap();
        let s2 = solve(&permuted, TOL, DEFAULT_MAX_ITER).unwrap();
        for (x, y) in s1.z.iter().zip(&s2.z) {
            assert!((x - y).abs() <= 10.0 * TOL, "{:?} {:?}", s1.z, s2.z);
        }
    }
}

#[test]
fn deterministic_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_problem(&mut rng, 7, 9);
    let a = solve(&p, TOL, DEFAULT_MAX_ITER).unwrap().to_json().unwrap();
    let b = solve(&p, TOL, DEFAULT_MAX_ITER).unwrap().to_json().unwrap();
    assert_eq!(a, b);
}

#[test]
fn json_round_trip_keeps_infinite_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = random_problem(&mut rng, 4, 3);
    let text = p.to_json().unwrap();
    assert!(text.contains("null"));
    assert_eq!(QpProblem::from_json(&text).unwrap(), p);
}

/// Problem with two site blocks (one dense, one identity) and per-row slacks.
fn site_problem(rng: &mut ChaCha8Rng) -> QpProblem {
    let (w1, s1) = (4, 6);
    let s2 = 3;
    let n_slack = 5;
    let n = w1 + s2 + n_slack;
    let v = DMatrix::from_fn(s1, w1, |_, _| rng.random_range(-1.0..1.0));
    let mut rows = Vec::new();
    let mut b = Vec::new();
    for r in 0..12 {
        let mut sites = vec![(rng.random_range(0..s1), rng.random_range(-1.0..1.0)), (s1 + rng.random_range(0..s2), 1.0)];
        if r % 3 == 0 {
            sites.push((rng.random_range(0..s1), 0.5));
        }
        let direct = if r < 10 { vec![(w1 + s2 + r / 2, -1.0)] } else { vec![] };
        rows.push(SiteRow { sites, direct });
        b.push(rng.random_range(0.0..1.0));
    }
    let mut q = DMatrix::zeros(n, n);
    for i in 0..w1 {
        q[(i, i)] = 1.0;
    }
    for i in w1..w1 + s2 {
        q[(i, i)] = 2.0;
    }
    let mut c = DVector::zeros(n);
    for i in w1 + s2..n {
        c[i] = 3.0;
    }
    for i in w1..w1 + s2 {
        c[i] = -rng.random_range(0.0..2.0);
    }
    let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(n, f64::INFINITY);
    for i in w1..w1 + s2 {
        lower[i] = 0.0;
        upper[i] = 1.0;
    }
    for i in w1 + s2..n {
        lower[i] = 0.0;
    }
    let sm = SiteMatrix {
        n_vars: n,
        blocks: vec![SiteBlock { var_offset: 0, basis: Basis::Dense(v) }, SiteBlock { var_offset: w1, basis: Basis::Identity(s2) }],
        rows,
    };
    QpProblem { q, c, a: ConstraintMatrix::Sites(sm), b: DVector::from_vec(b), lower, upper }
}

#[test]
fn site_factorization_agrees_with_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let p = site_problem(&mut rng);
        let mut d = p.clone();
        d.a = ConstraintMatrix::Dense(p.a.to_dense());
        let z = DVector::from_fn(p.n_vars(), |i, _| (i as f64 * 0.37).sin());
        let y = DVector::from_fn(p.n_rows(), |i, _| (i as f64 * 0.71).cos());
        assert!((p.a.mul(&z) - d.a.mul(&z)).amax() < 1e-12);
        assert!((p.a.tr_mul(&y) - d.a.tr_mul(&y)).amax() < 1e-12);
        let s1 = solve(&p, 1e-8, DEFAULT_MAX_ITER).unwrap();
        let s2 = solve(&d, 1e-8, DEFAULT_MAX_ITER).unwrap();
        assert!(s1.is_solved() && s2.is_solved(), "{:?} {:?}", s1.status, s2.status);
        assert!((s1.objective - s2.objective).abs() < 1e-6, "{} {}", s1.objective, s2.objective);
    }
}

#[test]
fn site_structure_is_validated() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut p = site_problem(&mut rng);
    if let ConstraintMatrix::Sites(s) = &mut p.a {
        s.rows[0].direct.push((0, 1.0));
    }
    assert!(matches!(solve(&p, TOL, 10), Err(Error::Structure(_))));
}
