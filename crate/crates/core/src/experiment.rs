//! Synthetic rectangles experiment: four classes on a grid, the rule
//! `∀x (A ∧ B) → (C ∧ D)` in two fuzzy translations, F1 on classes C and D
//! as the supervision on C grows.

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraint::SoftConstraint;
use crate::error::{Error, Result};
use crate::formula::IndexedFormula;
use crate::ground::{ground_instances, GroundOptions};
use crate::kernel::{assemble_primal, logic_constraints, KernelProblem, KernelSpec, PredicateData, TrainingSets};
use crate::parser::{parse_kb, SourceKb};
use crate::qp;

pub const CSV_HEADER: &str = "fraction,rep,variant,class,f1";

/// Closed rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Rect {
    pub fn contains(&self, p: &[f64]) -> bool {
        (self.x[0]..=self.x[1]).contains(&p[0]) && (self.y[0]..=self.y[1]).contains(&p[1])
    }

    fn within(&self, outer: &Rect) -> bool {
        self.x[0] >= outer.x[0] && self.x[1] <= outer.x[1] && self.y[0] >= outer.y[0] && self.y[1] <= outer.y[1] && self.x[0] <= self.x[1] && self.y[0] <= self.y[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Classes {
    pub a: Rect,
    pub b: Rect,
    pub c: Rect,
    pub d: Rect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// No logical constraint.
    #[serde(rename = "none")]
    NoLogic,
    /// `(⊗, ⊕)` translation trained by subgradient descent.
    #[serde(rename = "1")]
    TNorm,
    /// `(∧, ⊕)` translation solved as a QP.
    #[serde(rename = "2")]
    Concave,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::NoLogic => "none",
            Variant::TNorm => "1",
            Variant::Concave => "2",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubgradientConfig {
    pub iterations: usize,
    /// Base step of the diagonally scaled update `θ_k −= η g_k / √(Σ g_k²)`.
    pub step: f64,
    /// Exact-penalty weight on `0 ≤ p ≤ 1`.
    pub penalty: f64,
    /// Standard deviation of the initial expansion weights.
    pub init_scale: f64,
}

impl Default for SubgradientConfig {
    fn default() -> Self {
        SubgradientConfig { iterations: 20_000, step: 0.1, penalty: 50.0, init_scale: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub domain: Rect,
    pub step: f64,
    pub classes: Classes,
    pub fractions: Vec<f64>,
    pub repetitions: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub seed: u64,
    pub variants: Vec<Variant>,
    pub tol: f64,
    pub max_iter: usize,
    pub subgradient: SubgradientConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            domain: Rect { x: [-3.0, 3.0], y: [-3.0, 3.0] },
            step: 0.5,
            classes: Classes {
                a: Rect { x: [-3.0, 1.0], y: [-2.0, 2.0] },
                b: Rect { x: [-1.0, 3.0], y: [-1.0, 1.0] },
                c: Rect { x: [-1.0, 1.0], y: [-3.0, 3.0] },
                d: Rect { x: [-1.0, 1.0], y: [-1.0, 1.0] },
            },
            fractions: (1..=10).map(|k| k as f64 / 10.0).collect(),
            repetitions: 5,
            sigma: 1.0,
            c1: 15.0,
            c2: 10.0,
            seed: 2017,
            variants: vec![Variant::NoLogic, Variant::TNorm, Variant::Concave],
            tol: 1e-6,
            max_iter: qp::DEFAULT_MAX_ITER,
            subgradient: SubgradientConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.step > 0.0) {
            return bad(format!("grid step must be positive, got {}", self.step));
        }
        if !(self.domain.x[0] < self.domain.x[1] && self.domain.y[0] < self.domain.y[1]) {
            return bad("domain box is empty".into());
        }
        for (name, r) in [("A", self.classes.a), ("B", self.classes.b), ("C", self.classes.c), ("D", self.classes.d)] {
            if !r.within(&self.domain) {
                return bad(format!("class {name} is not a rectangle inside the domain box"));
            }
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return bad(format!("fraction {f} is outside (0, 1]"));
        }
        if !(self.sigma > 0.0) || !(self.c1 > 0.0) || !(self.c2 > 0.0) || !(self.tol > 0.0) {
            return bad("sigma, c1, c2 and tol must be positive".into());
        }
        let s = &self.subgradient;
        if !(s.step > 0.0 && s.penalty > 0.0 && s.init_scale >= 0.0) {
            return bad("subgradient step and penalty must be positive".into());
        }
        Ok(())
    }

    /// Grid points, x slowest.
    pub fn grid(&self) -> Vec<Vec<f64>> {
        let axis = |r: [f64; 2]| {
            let n = ((r[1] - r[0]) / self.step + 1e-9).floor() as usize;
            (0..=n).map(|k| r[0] + k as f64 * self.step).collect::<Vec<_>>()
        };
        let xs = axis(self.domain.x);
        let ys = axis(self.domain.y);
        xs.iter().flat_map(|&x| ys.iter().map(move |&y| vec![x, y])).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct F1Row {
    pub fraction: f64,
    pub rep: usize,
    pub variant: Variant,
    pub class: char,
    pub f1: f64,
}

/// F1 of `predicted` against `truth`; 0 when there is no true positive.
pub fn f1_score(predicted: &[bool], truth: &[bool]) -> f64 {
    let tp = predicted.iter().zip(truth).filter(|(p, t)| **p && **t).count() as f64;
    let fp = predicted.iter().zip(truth).filter(|(p, t)| **p && !**t).count() as f64;
    let fn_ = predicted.iter().zip(truth).filter(|(p, t)| !**p && **t).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// Knowledge base with one constant per grid point and the rule in the
/// given translation.
pub fn experiment_kb(n_points: usize, variant: Variant) -> Result<SourceKb> {
    let constants: Vec<String> = (0..n_points).map(|i| format!("g{i}")).collect();
    let op = match variant {
        Variant::TNorm => "*",
        _ => "^",
    };
    let mut text = format!("domain G = {{{}}};\npred A(G); pred B(G); pred C(G); pred D(G);\n", constants.join(", "));
    if variant != Variant::NoLogic {
        text.push_str(&format!("rule r: forall x: (~A(x) + ~B(x) + C(x)) {op} (~A(x) + ~B(x) + D(x))\n"));
    }
    parse_kb(&text)
}

struct Setup {
    grid: Vec<Vec<f64>>,
    truth: [Vec<bool>; 4],
}

impl Setup {
    fn new(cfg: &ExperimentConfig) -> Self {
        let grid = cfg.grid();
        let c = &cfg.classes;
        let truth = [c.a, c.b, c.c, c.d].map(|r| grid.iter().map(|p| r.contains(p)).collect());
        Setup { grid, truth }
    }

    fn data(&self, sigma: f64, c_labels: &[usize]) -> TrainingSets {
        let kernel = KernelSpec::Gaussian { sigma };
        let label = |j: usize, i: usize| (self.grid[i].clone(), if self.truth[j][i] { 1.0 } else { -1.0 });
        let names = ["A", "B", "C", "D"];
        let labeled: [Vec<(Vec<f64>, f64)>; 4] = [
            (0..self.grid.len()).map(|i| label(0, i)).collect(),
            (0..self.grid.len()).map(|i| label(1, i)).collect(),
            c_labels.iter().map(|&i| label(2, i)).collect(),
            Vec::new(),
        ];
        let predicates = names
            .iter()
            .zip(labeled)
            .map(|(n, labeled)| PredicateData { name: n.to_string(), kernel, labeled, unlabeled: self.grid.clone() })
            .collect();
        let constants = self.grid.iter().enumerate().map(|(i, p)| (format!("g{i}"), p.clone())).collect();
        TrainingSets { predicates, constants }
    }
}

/// Per-grounding penalties `1 − f` of a (possibly non-convex) rule over
/// global site indices.
pub fn indexed_penalties(kb: &SourceKb, data: &TrainingSets) -> Result<Vec<(f64, IndexedFormula)>> {
    let mut sites = std::collections::BTreeMap::new();
    let mut offset = 0;
    for p in &data.predicates {
        let s = p.sites();
        for (i, x) in s.iter().enumerate() {
            sites.insert((p.name.clone(), x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()), offset + i);
        }
        offset += s.len();
    }
    let resolve = |name: &str| -> Option<usize> {
        let (pred, rest) = name.split_once('(')?;
        let point = data.constants.get(rest.strip_suffix(')')?)?;
        sites.get(&(pred.to_string(), point.iter().map(|v| v.to_bits()).collect::<Vec<_>>())).copied()
    };
    let mut out = Vec::new();
    for rule in &kb.rules {
        for (_, g) in ground_instances(&rule.formula, kb, GroundOptions::default())? {
            out.push((rule.weight, g.index_vars(&resolve)?));
        }
    }
    Ok(out)
}

/// Subgradient descent on
/// `½Σ‖β_j‖² + C₁Σξ_l + C₂Σ w_h (1 − f_h(p̄)) + ρ Σ_s dist(p_s, [0,1])`
/// from a random start with AdaGrad step sizes, keeping the best iterate. Returns the site values
/// and objective of that iterate.
pub fn train_subgradient(problem: &KernelProblem, penalties: &[(f64, IndexedFormula)], opts: &SubgradientConfig, rng: &mut impl Rng) -> (Vec<f64>, f64) {
    let n_theta = problem.pointwise_offset;
    let normal = Normal::new(0.0, opts.init_scale.max(f64::MIN_POSITIVE)).expect("finite scale");
    let mut theta = vec![0.0; n_theta];
    for b in &problem.blocks {
        for k in 0..b.rank() {
            theta[b.var_offset + k] = if opts.init_scale > 0.0 { normal.sample(rng) } else { 0.0 };
        }
        theta[b.bias_index()] = rng.random::<f64>();
    }
    let n_sites = problem.n_sites();
    let mut best = (f64::INFINITY, theta.clone());
    let mut gp = vec![0.0; n_sites];
    let mut clipped = vec![0.0; n_sites];
    let mut grad = vec![0.0; n_theta];
    let mut sq = vec![0.0; n_theta];
    for t in 1..=opts.iterations + 1 {
        let p = problem.site_values(&theta);
        gp.iter_mut().for_each(|g| *g = 0.0);
        let mut obj = 0.0;
        for b in &problem.blocks {
            obj += 0.5 * theta[b.var_offset..b.var_offset + b.rank()].iter().map(|v| v * v).sum::<f64>();
        }
        for &(_, s, y) in &problem.supervisions {
            let m = 1.0 - y * (2.0 * p[s] - 1.0);
            if m > 0.0 {
                obj += problem.c1 * m / 2.0;
                gp[s] -= problem.c1 * y;
            }
        }
        for s in 0..n_sites {
            if p[s] > 1.0 {
                obj += opts.penalty * (p[s] - 1.0);
                gp[s] += opts.penalty;
            } else if p[s] < 0.0 {
                obj -= opts.penalty * p[s];
                gp[s] -= opts.penalty;
            }
            clipped[s] = p[s].clamp(0.0, 1.0);
        }
        for (w, f) in penalties {
            obj += problem.c2 * w * (1.0 - f.eval(&clipped));
            f.backprop(&clipped, -problem.c2 * w, &mut gp);
        }
        if obj < best.0 {
            best = (obj, theta.clone());
        }
        if t > opts.iterations {
            break;
        }
        for b in &problem.blocks {
            let r = b.rank();
            let g = &gp[b.site_offset..b.site_offset + b.sites.len()];
            let lt = b.l.tr_mul(&DVector::from_column_slice(g));
            for k in 0..r {
                grad[b.var_offset + k] = theta[b.var_offset + k] + lt[k];
            }
            grad[b.bias_index()] = g.iter().sum();
        }
        for ((x, g), h) in theta.iter_mut().zip(&grad).zip(sq.iter_mut()) {
            *h += g * g;
            if *h > 0.0 {
                *x -= opts.step * g / h.sqrt();
            }
        }
    }
    (problem.site_values(&best.1), best.0)
}

fn solve_sites(problem: &KernelProblem, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let sol = qp::solve(&problem.qp, tol, max_iter)?.require_solved()?;
    Ok(problem.site_values(sol.z.as_slice()))
}

fn task_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One fraction of one repetition: F1 rows for every configured variant.
fn run_task(cfg: &ExperimentConfig, setup: &Setup, kbs: &[(Variant, SourceKb)], fi: usize, rep: usize) -> Result<Vec<F1Row>> {
    let n = setup.grid.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut task_rng(cfg.seed, rep as u64));
    let fraction = cfg.fractions[fi];
    let k = ((fraction * n as f64).round() as usize).clamp(1, n);
    let data = setup.data(cfg.sigma, &order[..k]);
    let mut rows = Vec::new();
    for (variant, kb) in kbs {
        let sites = match variant {
            Variant::NoLogic => solve_sites(&assemble_primal(&data, &[], cfg.c1, cfg.c2)?, cfg.tol, cfg.max_iter)?,
            Variant::Concave => {
                let logic: Vec<SoftConstraint> = logic_constraints(kb, &data, GroundOptions::default())?;
                solve_sites(&assemble_primal(&data, &logic, cfg.c1, cfg.c2)?, cfg.tol, cfg.max_iter)?
            }
            Variant::TNorm => {
                let problem = assemble_primal(&data, &[], cfg.c1, cfg.c2)?;
                let penalties = indexed_penalties(kb, &data)?;
                let stream = (1u64 << 32) | ((rep as u64) << 16) | fi as u64;
                train_subgradient(&problem, &penalties, &cfg.subgradient, &mut task_rng(cfg.seed, stream)).0
            }
        };
        // every predicate's sites are the grid, in grid order
        for (class, j) in [('C', 2usize), ('D', 3)] {
            let predicted: Vec<bool> = sites[j * n..(j + 1) * n].iter().map(|&p| p >= 0.5).collect();
            rows.push(F1Row { fraction, rep, variant: *variant, class, f1: f1_score(&predicted, &setup.truth[j]) });
        }
    }
    Ok(rows)
}

/// Runs every fraction × repetition. Rows are ordered by repetition,
/// fraction, variant, class regardless of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<F1Row>> {
    cfg.validate()?;
    let setup = Setup::new(cfg);
    let mut variants = cfg.variants.clone();
    variants.sort();
    variants.dedup();
    let kbs = variants.iter().map(|&v| Ok((v, experiment_kb(setup.grid.len(), v)?))).collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> = (0..cfg.repetitions).flat_map(|r| (0..cfg.fractions.len()).map(move |f| (r, f))).collect();
    let results: Vec<Result<Vec<F1Row>>> = tasks.par_iter().map(|&(rep, fi)| run_task(cfg, &setup, &kbs, fi, rep)).collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn write_csv(rows: &[F1Row], mut out: impl Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.fraction, r.rep, r.variant, r.class, r.f1)?;
    }
    Ok(())
}

/// Mean F1 per (fraction, variant, class).
pub fn mean_f1(rows: &[F1Row]) -> Vec<(f64, Variant, char, f64)> {
    let mut acc: Vec<(f64, Variant, char, f64, usize)> = Vec::new();
    for r in rows {
        match acc.iter_mut().find(|a| a.0 == r.fraction && a.1 == r.variant && a.2 == r.class) {
            Some(a) => {
                a.3 += r.f1;
                a.4 += 1;
            }
            None => acc.push((r.fraction, r.variant, r.class, r.f1, 1)),
        }
    }
    acc.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    acc.into_iter().map(|(f, v, c, s, n)| (f, v, c, s / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            domain: Rect { x: [-3.0, 3.0], y: [-3.0, 3.0] },
            step: 1.0,
            fractions: vec![0.5, 1.0],
            repetitions: 1,
            subgradient: SubgradientConfig { iterations: 2000, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn default_grid_is_13_by_13() {
        let g = ExperimentConfig::default().grid();
        assert_eq!(g.len(), 169);
        assert_eq!(g[0], vec![-3.0, -3.0]);
        assert_eq!(g[168], vec![3.0, 3.0]);
    }

    #[test]
    fn f1_values() {
        assert_eq!(f1_score(&[true, true, false], &[true, false, false]), 2.0 / 3.0);
        assert_eq!(f1_score(&[false, false], &[true, false]), 0.0);
        // everything predicted positive on the default grid gives 50/194 for D
        let cfg = ExperimentConfig::default();
        let truth: Vec<bool> = cfg.grid().iter().map(|p| cfg.classes.d.contains(p)).collect();
        assert!((f1_score(&vec![true; truth.len()], &truth) - 50.0 / 194.0).abs() < 1e-15);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(ExperimentConfig::from_toml("fractions = [0.0]").is_err());
        assert!(ExperimentConfig::from_toml("classes.a = { x = [-4.0, 1.0], y = [0.0, 1.0] }\nclasses.b = { x = [0.0, 1.0], y = [0.0, 1.0] }\nclasses.c = { x = [0.0, 1.0], y = [0.0, 1.0] }\nclasses.d = { x = [0.0, 1.0], y = [0.0, 1.0] }").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        let partial = ExperimentConfig::from_toml("repetitions = 2\nvariants = [\"2\"]").unwrap();
        assert_eq!(partial.variants, vec![Variant::Concave]);
        assert_eq!(partial.c1, 15.0);
    }

    #[test]
    fn translation_one_is_not_convex() {
        let kb = experiment_kb(3, Variant::TNorm).unwrap();
        let data = Setup { grid: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], truth: std::array::from_fn(|_| vec![false; 3]) }.data(1.0, &[]);
        assert!(matches!(logic_constraints(&kb, &data, GroundOptions::default()), Err(Error::NotInFragment(_))));
        let pens = indexed_penalties(&kb, &data).unwrap();
        assert_eq!(pens.len(), 3);
        // 1 − f = min{1, hC + hD}
        let mut x = vec![0.0; 12];
        for (j, v) in [1.0, 1.0, 0.8, 0.6].iter().enumerate() {
            x[j * 3] = *v;
        }
        assert!((1.0 - pens[0].1.eval(&x) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn subgradient_approaches_the_qp_optimum() {
        let cfg = small();
        let setup = Setup::new(&cfg);
        let data = setup.data(cfg.sigma, &(0..setup.grid.len()).step_by(2).collect::<Vec<_>>());
        let kb = experiment_kb(setup.grid.len(), Variant::Concave).unwrap();
        let logic = logic_constraints(&kb, &data, GroundOptions::default()).unwrap();
        let problem = assemble_primal(&data, &logic, cfg.c1, cfg.c2).unwrap();
        let sol = qp::solve(&problem.qp, 1e-8, qp::DEFAULT_MAX_ITER).unwrap();
        let penalties = indexed_penalties(&kb, &data).unwrap();
        let bare = assemble_primal(&data, &[], cfg.c1, cfg.c2).unwrap();
        let opts = SubgradientConfig { iterations: 20_000, ..Default::default() };
        let (_, obj) = train_subgradient(&bare, &penalties, &opts, &mut task_rng(1, 0));
        assert!(obj >= sol.objective - 1e-6);
        assert!(obj <= 1.1 * sol.objective, "{obj} vs {}", sol.objective);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = small();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&run_experiment(&cfg).unwrap(), &mut a).unwrap();
        write_csv(&run_experiment(&cfg).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(text.lines().count(), 1 + 2 * 3 * 2);
    }

    #[test]
    fn unsupervised_predicate_without_logic_solves() {
        // rep 0 at fraction 0.9 once stalled the interior-point corrector
        let cfg = ExperimentConfig::default();
        let setup = Setup::new(&cfg);
        let kbs = vec![(Variant::NoLogic, experiment_kb(169, Variant::NoLogic).unwrap())];
        let rows = run_task(&cfg, &setup, &kbs, 8, 0).unwrap();
        assert!(rows[0].f1 > 0.9);
    }

    #[test]
    fn zero_repetitions_give_header_only() {
        let cfg = ExperimentConfig { repetitions: 0, ..small() };
        let mut out = Vec::new();
        write_csv(&run_experiment(&cfg).unwrap(), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{CSV_HEADER}\n"));
    }
}
