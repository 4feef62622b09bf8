//! Łukasiewicz-logic knowledge bases compiled to convex optimization problems.
//!
//! Formulas in the concave fragment `(∧, ⊕)*` compile to a minimum of affine
//! functions with integer coefficients, so `1 − f` is a maximum of affine
//! functions and "`f` is satisfied up to slack `ξ`" is a set of linear rows.
//! Those rows feed a convex QP solver used by the kernel learner, collective
//! inference, and hinge-loss MAP inference.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod collective;
pub mod constraint;
pub mod error;
pub mod experiment;
pub mod formula;
pub mod ground;
pub mod kernel;
pub mod normal;
pub mod parser;
pub mod psl;
pub mod pwl;
pub mod qp;
pub mod values;

pub use error::{Error, Result};
pub use formula::{equivalent_on_grid, Assignment, Atom, Connective, Formula, IndexedFormula, SEMANTIC_TOL};
pub use normal::{classify, find_mixing, fuzzify_cnf, normalize, simplify, CnfTranslation, FragmentLabel, Literal};
pub use parser::{parse_formula, parse_kb, print, SourceKb};
pub use ground::{ground, ground_instances, GroundOptions, GroundingMap};
pub use pwl::{affine_to_formula, compile, negate_form, prune_dominated, AffinePiece, FormKind, PiecewiseLinearForm};
pub use qp::{kkt_residuals, solve, ConstraintMatrix, KktResiduals, QpProblem, QpSolution, QpStatus};
pub use constraint::{formula_rows, soft_constraints, LinearRow, SoftConstraint, VariableResolver};
pub use kernel::{assemble_primal, logic_constraints, predict, read_dataset, train, Dataset, KernelModel, KernelProblem, KernelSpec, PredicateData, TrainingSets};
pub use collective::{assemble_collective, manifold_rows, solve_collective, CollectiveSolution, ManifoldRelation, PriorTable};
pub use psl::{learn_weights, map_inference, split_training, weight_gradient, MapResult, Potential, WeightedRuleSet};
pub use values::{parse_values, write_values, ValueTable};
pub use experiment::{run_experiment, write_csv, ExperimentConfig, F1Row, Variant};
