//! Piecewise-linear forms with integer coefficients.
//!
//! A concave-fragment formula compiles to `min{1, a_1(x), …, a_k(x)}` and a
//! convex-fragment formula to `max{0, a_1(x), …, a_k(x)}`, where every `a_i`
//! is affine with integer coefficients.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formula::{Assignment, Formula};
use crate::normal::{classify, find_mixing, normalize, simplify, FragmentLabel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormKind {
    #[serde(rename = "min")]
    MinOfAffine,
    #[serde(rename = "max")]
    MaxOfAffine,
}

impl FormKind {
    pub fn flip(self) -> FormKind {
        match self {
            FormKind::MinOfAffine => FormKind::MaxOfAffine,
            FormKind::MaxOfAffine => FormKind::MinOfAffine,
        }
    }

    /// Constant of the bounding piece: the cap `1` of a min, the floor `0` of a max.
    pub fn bound(self) -> i64 {
        match self {
            FormKind::MinOfAffine => 1,
            FormKind::MaxOfAffine => 0,
        }
    }
}

/// `coeffs · x + constant`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AffinePiece {
    pub coeffs: Vec<i64>,
    pub constant: i64,
}

impl AffinePiece {
    pub fn constant(n: usize, q: i64) -> Self {
        AffinePiece { coeffs: vec![0; n], constant: q }
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut acc = self.constant as f64;
        for (&c, &xi) in self.coeffs.iter().zip(x) {
            if c != 0 {
                acc += c as f64 * xi;
            }
        }
        acc
    }

    /// Minimum over the unit cube.
    pub fn min_on_cube(&self) -> i64 {
        self.constant + self.coeffs.iter().map(|&c| c.min(0)).sum::<i64>()
    }

    /// Maximum over the unit cube.
    pub fn max_on_cube(&self) -> i64 {
        self.constant + self.coeffs.iter().map(|&c| c.max(0)).sum::<i64>()
    }

    fn checked_add(&self, other: &AffinePiece) -> Result<AffinePiece> {
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for (a, b) in self.coeffs.iter().zip(&other.coeffs) {
            coeffs.push(a.checked_add(*b).ok_or(Error::CoefficientOverflow)?);
        }
        let constant = self.constant.checked_add(other.constant).ok_or(Error::CoefficientOverflow)?;
        Ok(AffinePiece { coeffs, constant })
    }

    fn negated(&self) -> AffinePiece {
        AffinePiece {
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
            constant: 1 - self.constant,
        }
    }

    /// `self ≤ other` everywhere on the unit cube.
    fn below(&self, other: &AffinePiece) -> bool {
        let mut slack = self.constant - other.constant;
        for (a, b) in self.coeffs.iter().zip(&other.coeffs) {
            slack += (a - b).max(0);
        }
        slack <= 0
    }

    fn render(&self, vars: &[String]) -> String {
        let terms: Vec<(i64, &str)> = self.coeffs.iter().zip(vars).filter(|(c, _)| **c != 0).map(|(c, v)| (*c, v.as_str())).collect();
        let mut out = String::new();
        let lead_negative = terms.first().is_some_and(|t| t.0 < 0);
        let constant_first = self.constant > 0 && lead_negative;
        if terms.is_empty() || constant_first {
            out.push_str(&self.constant.to_string());
        }
        for (c, v) in &terms {
            let mag = c.unsigned_abs();
            let body = if mag == 1 { v.to_string() } else { format!("{mag}{v}") };
            if out.is_empty() {
                if *c < 0 {
                    out.push('-');
                }
                out.push_str(&body);
            } else {
                out.push_str(if *c < 0 { " - " } else { " + " });
                out.push_str(&body);
            }
        }
        if !terms.is_empty() && !constant_first && self.constant != 0 {
            out.push_str(if self.constant < 0 { " - " } else { " + " });
            out.push_str(&self.constant.unsigned_abs().to_string());
        }
        out
    }
}

/// A min or max of affine pieces over an ordered variable list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiecewiseLinearForm {
    pub kind: FormKind,
    pub vars: Vec<String>,
    pub pieces: Vec<AffinePiece>,
}

impl PiecewiseLinearForm {
    pub fn new(kind: FormKind, vars: Vec<String>, pieces: Vec<AffinePiece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidEnvelope("a form needs at least one piece".into()));
        }
        if let Some(p) = pieces.iter().find(|p| p.coeffs.len() != vars.len()) {
            return Err(Error::Dimension(format!("piece has {} coefficients for {} variables", p.coeffs.len(), vars.len())));
        }
        Ok(PiecewiseLinearForm { kind, vars, pieces })
    }

    /// Value of the envelope at `x`, given in variable order.
    pub fn envelope(&self, x: &[f64]) -> f64 {
        let values = self.pieces.iter().map(|p| p.value(x));
        match self.kind {
            FormKind::MinOfAffine => values.fold(f64::INFINITY, f64::min),
            FormKind::MaxOfAffine => values.fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn evaluate(&self, a: &Assignment) -> Result<f64> {
        let mut x = Vec::with_capacity(self.vars.len());
        for v in &self.vars {
            x.push(a.get(v).ok_or_else(|| Error::UnboundVariable(v.clone()))?);
        }
        Ok(self.envelope(&x))
    }

    /// Pieces other than the cap/floor constant.
    pub fn proper_pieces(&self) -> impl Iterator<Item = &AffinePiece> {
        let bound = self.kind.bound();
        self.pieces.iter().filter(move |p| !(p.is_constant() && p.constant == bound))
    }

    pub fn max_abs_coefficient(&self) -> i64 {
        self.pieces.iter().flat_map(|p| p.coeffs.iter()).map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PiecewiseLinearForm = serde_json::from_str(text)?;
        PiecewiseLinearForm::new(raw.kind, raw.vars, raw.pieces)
    }
}

impl fmt::Display for PiecewiseLinearForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            FormKind::MinOfAffine => "min",
            FormKind::MaxOfAffine => "max",
        };
        let parts: Vec<String> = self.pieces.iter().map(|p| p.render(&self.vars)).collect();
        write!(f, "{name}{{{}}}", parts.join(", "))
    }
}

/// Removes pieces that never attain the envelope. The cap (min) or floor
/// (max) constant piece is always kept; among equal pieces the first stays.
pub fn prune_dominated(form: &PiecewiseLinearForm) -> PiecewiseLinearForm {
    let bound = form.kind.bound();
    let is_bound = |p: &AffinePiece| p.is_constant() && p.constant == bound;
    let mut pieces: Vec<AffinePiece> = Vec::new();
    if form.pieces.iter().any(is_bound) {
        pieces.push(AffinePiece::constant(form.vars.len(), bound));
    }
    let others: Vec<&AffinePiece> = form.pieces.iter().filter(|p| !is_bound(p)).collect();
    let dominates = |j: &AffinePiece, i: &AffinePiece| match form.kind {
        FormKind::MinOfAffine => j.below(i),
        FormKind::MaxOfAffine => i.below(j),
    };
    for (i, p) in others.iter().enumerate() {
        if pieces.first().is_some_and(|cap| is_bound(cap) && dominates(cap, p)) {
            continue;
        }
        let beaten = others.iter().enumerate().any(|(j, q)| j != i && dominates(q, p) && (q != p || j < i));
        if !beaten {
            pieces.push((*p).clone());
        }
    }
    if pieces.is_empty() {
        pieces.push(AffinePiece::constant(form.vars.len(), bound));
    }
    PiecewiseLinearForm { kind: form.kind, vars: form.vars.clone(), pieces }
}

/// `1 − form`: a min of pieces becomes a max of `1 − piece` and vice versa.
pub fn negate_form(form: &PiecewiseLinearForm) -> PiecewiseLinearForm {
    PiecewiseLinearForm {
        kind: form.kind.flip(),
        vars: form.vars.clone(),
        pieces: form.pieces.iter().map(AffinePiece::negated).collect(),
    }
}

/// Compiles a formula of the requested fragment. The formula is normalized
/// first; variables are ordered by first occurrence.
pub fn compile(f: &Formula, label: FragmentLabel) -> Result<PiecewiseLinearForm> {
    if !f.is_propositional() {
        return Err(Error::NotPropositional(f.to_string()));
    }
    if !matches!(label, FragmentLabel::Concave | FragmentLabel::Convex) {
        return Err(Error::InvalidEnvelope(format!("cannot compile to the `{label}` label")));
    }
    let g = normalize(f);
    let found = classify(&g)?;
    if found == FragmentLabel::Neither {
        let detail = find_mixing(&g).map(|m| m.to_string()).unwrap_or_else(|| g.to_string());
        return Err(Error::NotInFragment(detail));
    }
    if !found.admits(label) {
        return Err(Error::LabelMismatch { requested: label, found });
    }
    let vars = g.variables();
    let form = match label {
        FragmentLabel::Concave => compile_concave(&simplify(&g), &vars)?,
        _ => negate_form(&compile_concave(&simplify(&normalize(&g.not())), &vars)?),
    };
    if form.max_abs_coefficient() > 1 {
        log::info!("compiled form has coefficients of magnitude {}", form.max_abs_coefficient());
    }
    Ok(form)
}

struct ConcaveCompiler<'a> {
    index: BTreeMap<&'a str, usize>,
    n: usize,
    memo: HashMap<&'a Formula, Rc<Vec<AffinePiece>>>,
}

fn compile_concave(g: &Formula, vars: &[String]) -> Result<PiecewiseLinearForm> {
    let mut c = ConcaveCompiler {
        index: vars.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect(),
        n: vars.len(),
        memo: HashMap::new(),
    };
    let body = c.pieces(g)?;
    let mut pieces = vec![AffinePiece::constant(vars.len(), 1)];
    pieces.extend(body.iter().cloned());
    Ok(PiecewiseLinearForm { kind: FormKind::MinOfAffine, vars: vars.to_vec(), pieces })
}

impl<'a> ConcaveCompiler<'a> {
    // Returns S with f = min(1, min S); S = ∅ means f ≡ 1. Every piece of S
    // is nonnegative on the cube, which makes ⊕ a plain cross-sum.
    fn pieces(&mut self, f: &'a Formula) -> Result<Rc<Vec<AffinePiece>>> {
        if let Some(hit) = self.memo.get(f) {
            return Ok(hit.clone());
        }
        let out = match f {
            Formula::Zero => vec![AffinePiece::constant(self.n, 0)],
            Formula::One => Vec::new(),
            Formula::Var(v) => {
                let mut p = AffinePiece::constant(self.n, 0);
                p.coeffs[self.index[v.as_str()]] = 1;
                vec![p]
            }
            Formula::Not(g) => match g.as_ref() {
                Formula::Var(v) => {
                    let mut p = AffinePiece::constant(self.n, 1);
                    p.coeffs[self.index[v.as_str()]] = -1;
                    vec![p]
                }
                _ => return Err(Error::NotNormalized),
            },
            Formula::Apply(op, args) => {
                use crate::formula::Connective::*;
                match op {
                    WeakAnd => {
                        let mut acc = Vec::new();
                        for a in args {
                            acc.extend(self.pieces(a)?.iter().cloned());
                        }
                        prune_set(acc)
                    }
                    StrongOr => {
                        let mut acc = vec![AffinePiece::constant(self.n, 0)];
                        for a in args {
                            let rhs = self.pieces(a)?;
                            let mut next = Vec::with_capacity(acc.len() * rhs.len());
                            for p in &acc {
                                for q in rhs.iter() {
                                    next.push(p.checked_add(q)?);
                                }
                            }
                            acc = prune_set(next);
                        }
                        acc
                    }
                    _ => return Err(Error::NotInFragment(f.to_string())),
                }
            }
            _ => return Err(Error::NotInFragment(f.to_string())),
        };
        let out = Rc::new(out);
        self.memo.insert(f, out.clone());
        Ok(out)
    }
}

// Pruning of S under an implicit cap of 1.
fn prune_set(pieces: Vec<AffinePiece>) -> Vec<AffinePiece> {
    let live: Vec<&AffinePiece> = pieces.iter().filter(|p| p.min_on_cube() < 1).collect();
    let mut out = Vec::new();
    for (i, p) in live.iter().enumerate() {
        let beaten = live.iter().enumerate().any(|(j, q)| j != i && q.below(p) && (q != p || j < i));
        if !beaten {
            out.push((*p).clone());
        }
    }
    out
}

/// Inverse construction: a formula of `(∧, ⊕)*` whose truth function is the
/// given min-of-affine envelope. Piece `Σ a_j x_j + b` becomes the strong
/// disjunction of `a_j` copies of `x_j` (or `|a_j|` copies of `¬x_j` when
/// negative) and `q = b − Σ_{a_j<0} |a_j|` copies of `1`.
pub fn affine_to_formula(form: &PiecewiseLinearForm) -> Result<Formula> {
    if form.kind != FormKind::MinOfAffine {
        return Err(Error::InvalidEnvelope("only min-of-affine forms map to the concave fragment".into()));
    }
    let mut parts = Vec::new();
    for piece in &form.pieces {
        let negative_mass: i64 = piece.coeffs.iter().filter(|c| **c < 0).map(|c| -c).sum();
        let q = piece.constant - negative_mass;
        if q < 0 {
            return Err(Error::InvalidEnvelope(format!("piece `{}` is negative on the unit cube", piece.render(&form.vars))));
        }
        if q >= 1 {
            // the piece is at least 1 on the cube: the clause is the constant 1
            continue;
        }
        let mut lits = Vec::new();
        for (c, v) in piece.coeffs.iter().zip(&form.vars) {
            let lit = if *c > 0 { Formula::var(v.clone()) } else { Formula::var(v.clone()).not() };
            for _ in 0..c.unsigned_abs() {
                lits.push(lit.clone());
            }
        }
        parts.push(if lits.is_empty() { Formula::Zero } else { Formula::strong_or(lits) });
    }
    Ok(if parts.is_empty() { Formula::One } else { Formula::weak_and(parts) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_formula;

    fn p(s: &str) -> Formula {
        parse_formula(s).unwrap()
    }

    fn piece(coeffs: &[i64], q: i64) -> AffinePiece {
        AffinePiece { coeffs: coeffs.to_vec(), constant: q }
    }

    fn form(kind: FormKind, vars: &[&str], pieces: Vec<AffinePiece>) -> PiecewiseLinearForm {
        PiecewiseLinearForm::new(kind, vars.iter().map(|v| v.to_string()).collect(), pieces).unwrap()
    }

    #[test]
    fn worked_example_three_variables() {
        let f = compile(&p("((x ^ y) + ~y + z) ^ ~z"), FragmentLabel::Concave).unwrap();
        assert_eq!(f.to_string(), "min{1, x - y + z + 1, 1 - z}");
        assert_eq!(f.pieces, vec![piece(&[0, 0, 0], 1), piece(&[1, -1, 1], 1), piece(&[0, 0, -1], 1)]);
    }

    #[test]
    fn worked_example_two_clauses() {
        let f = compile(&p("(x1 + ~x2) ^ (x1 + x2)"), FragmentLabel::Concave).unwrap();
        assert_eq!(f.to_string(), "min{1, x1 - x2 + 1, x1 + x2}");
    }

    #[test]
    fn literal_forms() {
        assert_eq!(compile(&p("x"), FragmentLabel::Concave).unwrap().to_string(), "min{1, x}");
        assert_eq!(compile(&p("x"), FragmentLabel::Convex).unwrap().to_string(), "max{0, x}");
        assert_eq!(compile(&p("~x"), FragmentLabel::Convex).unwrap().to_string(), "max{0, 1 - x}");
    }

    #[test]
    fn convex_compile_by_duality() {
        let f = p("(x * ~y) | (~x * y)");
        let c = compile(&f, FragmentLabel::Convex).unwrap();
        assert_eq!(c.kind, FormKind::MaxOfAffine);
        assert_eq!(c.to_string(), "max{0, x - y, -x + y}");
        assert!(crate::formula::equivalent_on_grid(&f, &f, 3).unwrap());
        for (a, b) in [(0.2, 0.9), (0.7, 0.1), (0.5, 0.5)] {
            let expected = f.evaluate(&Assignment::from_pairs([("x", a), ("y", b)]).unwrap()).unwrap();
            assert!((c.envelope(&[a, b]) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn compile_rejects_wrong_fragment() {
        assert!(matches!(compile(&p("x + (y * z)"), FragmentLabel::Concave), Err(Error::NotInFragment(_))));
        assert!(matches!(
            compile(&p("x ^ y"), FragmentLabel::Convex),
            Err(Error::LabelMismatch { requested: FragmentLabel::Convex, found: FragmentLabel::Concave })
        ));
        assert!(matches!(compile(&Formula::atom("p", &["a"]), FragmentLabel::Concave), Err(Error::NotPropositional(_))));
    }

    #[test]
    fn constants_compile() {
        assert_eq!(compile(&Formula::One, FragmentLabel::Concave).unwrap().to_string(), "min{1}");
        assert_eq!(compile(&Formula::Zero, FragmentLabel::Concave).unwrap().to_string(), "min{1, 0}");
        assert_eq!(compile(&Formula::Zero, FragmentLabel::Convex).unwrap().to_string(), "max{0}");
    }

    #[test]
    fn repeated_literal_gives_graded_coefficient() {
        let f = compile(&p("x + x + ~y"), FragmentLabel::Concave).unwrap();
        assert_eq!(f.to_string(), "min{1, 2x - y + 1}");
    }

    #[test]
    fn negate_examples() {
        let m = form(FormKind::MinOfAffine, &["z"], vec![piece(&[0], 1), piece(&[-1], 1)]);
        assert_eq!(negate_form(&m).to_string(), "max{0, z}");
        let zero = form(FormKind::MaxOfAffine, &[], vec![piece(&[], 0)]);
        assert_eq!(negate_form(&zero).to_string(), "min{1}");
        let m = form(FormKind::MinOfAffine, &["x", "y"], vec![piece(&[0, 0], 1), piece(&[1, -1], 1)]);
        assert_eq!(negate_form(&m).to_string(), "max{0, -x + y}");
        assert_eq!(negate_form(&negate_form(&m)), m);
    }

    #[test]
    fn prune_examples() {
        let f = form(FormKind::MinOfAffine, &["x"], vec![piece(&[0], 1), piece(&[1], 2)]);
        assert_eq!(prune_dominated(&f).to_string(), "min{1}");
        let f = form(FormKind::MinOfAffine, &["x"], vec![piece(&[0], 1), piece(&[1], 0)]);
        assert_eq!(prune_dominated(&f), f);
        let f = form(FormKind::MinOfAffine, &["x"], vec![piece(&[0], 1), piece(&[1], 0), piece(&[1], 1)]);
        assert_eq!(prune_dominated(&f).to_string(), "min{1, x}");
        let f = form(FormKind::MaxOfAffine, &["x", "y"], vec![piece(&[0, 0], 0), piece(&[1, -1], 0), piece(&[1, -1], -1), piece(&[1, -1], 0)]);
        assert_eq!(prune_dominated(&f).to_string(), "max{0, x - y}");
    }

    #[test]
    fn inverse_construction_examples() {
        let f = form(FormKind::MinOfAffine, &["x", "y"], vec![piece(&[0, 0], 1), piece(&[1, -1], 1)]);
        assert_eq!(affine_to_formula(&f).unwrap(), p("x + ~y"));
        let f = form(FormKind::MinOfAffine, &["x", "y"], vec![piece(&[0, 0], 1), piece(&[1, 1], 0)]);
        assert_eq!(affine_to_formula(&f).unwrap(), p("x + y"));
        let f = form(FormKind::MinOfAffine, &["x", "y", "z"], vec![piece(&[0, 0, 0], 1), piece(&[1, -1, 1], 1), piece(&[0, 0, -1], 1)]);
        let g = affine_to_formula(&f).unwrap();
        assert_eq!(g, p("(x + ~y + z) ^ ~z"));
        assert!(crate::formula::equivalent_on_grid(&g, &p("((x ^ y) + ~y + z) ^ ~z"), 7).unwrap());
    }

    #[test]
    fn inverse_rejects_negative_residual() {
        let f = form(FormKind::MinOfAffine, &["x"], vec![piece(&[-1], 0)]);
        assert!(matches!(affine_to_formula(&f), Err(Error::InvalidEnvelope(_))));
        let f = form(FormKind::MaxOfAffine, &["x"], vec![piece(&[1], 0)]);
        assert!(matches!(affine_to_formula(&f), Err(Error::InvalidEnvelope(_))));
    }

    #[test]
    fn json_is_exact() {
        let f = compile(&p("(x1 + ~x2) ^ (x1 + x2)"), FragmentLabel::Concave).unwrap();
        let text = f.to_json().unwrap();
        assert_eq!(
            text,
            r#"{"kind":"min","vars":["x1","x2"],"pieces":[{"coeffs":[0,0],"constant":1},{"coeffs":[1,-1],"constant":1},{"coeffs":[1,1],"constant":0}]}"#
        );
        assert_eq!(PiecewiseLinearForm::from_json(&text).unwrap(), f);
        assert!(PiecewiseLinearForm::from_json(r#"{"kind":"min","vars":["x"],"pieces":[{"coeffs":[0.5],"constant":1}]}"#).is_err());
    }
}
