//! Workloads shared by the benchmarks.

use lukconvex::experiment::{experiment_kb, ExperimentConfig, Variant};
use lukconvex::kernel::{assemble_primal, logic_constraints, KernelProblem, KernelSpec, PredicateData, TrainingSets};
use lukconvex::qp::{ConstraintMatrix, QpProblem};
use lukconvex::GroundOptions;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Concave formula over `n` variables: `(x0 ⊕ ¬x1 ⊕ x2) ∧ (x1 ⊕ ¬x2 ⊕ x3) ∧ …`.
pub fn clause_chain(n: usize) -> String {
    (0..n)
        .map(|i| format!("(x{} + ~x{} + x{})", i, (i + 1) % n, (i + 2) % n))
        .collect::<Vec<_>>()
        .join(" ^ ")
}

/// Strictly convex QP with `m` dense rows, feasible at the origin, and a
/// unit box.
pub fn random_qp(n: usize, m: usize, seed: u64) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = r.transpose() * r + DMatrix::identity(n, n);
    let c = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(m, |_, _| rng.random_range(0.1..1.0));
    QpProblem { q, c, a: ConstraintMatrix::Dense(a), b, lower: DVector::from_element(n, -1.0), upper: DVector::from_element(n, 1.0) }
}

/// The rectangles problem at full supervision on a grid of the given step.
pub fn rectangles(step: f64, variant: Variant) -> KernelProblem {
    let cfg = ExperimentConfig { step, ..Default::default() };
    let grid = cfg.grid();
    let c = &cfg.classes;
    let predicate = |name: &str, rect: &lukconvex::experiment::Rect, labeled: bool| {
        let pts = grid.iter().cloned();
        let (labeled, unlabeled) = if labeled {
            (pts.map(|p| { let y = if rect.contains(&p) { 1.0 } else { -1.0 }; (p, y) }).collect(), Vec::new())
        } else {
            (Vec::new(), pts.collect())
        };
        PredicateData { name: name.into(), kernel: KernelSpec::Gaussian { sigma: cfg.sigma }, labeled, unlabeled }
    };
    let data = TrainingSets {
        predicates: vec![predicate("A", &c.a, true), predicate("B", &c.b, true), predicate("C", &c.c, true), predicate("D", &c.d, false)],
        constants: grid.iter().enumerate().map(|(i, p)| (format!("g{i}"), p.clone())).collect(),
    };
    let kb = experiment_kb(grid.len(), variant).expect("experiment kb");
    let logic = logic_constraints(&kb, &data, GroundOptions::default()).expect("ground");
    assemble_primal(&data, &logic, cfg.c1, cfg.c2).expect("assemble")
}
