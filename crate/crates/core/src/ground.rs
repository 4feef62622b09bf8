//! Quantifier elimination over finite domains.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formula::{Atom, Formula};
use crate::parser::{variable_domain, SourceKb};

/// Default cap on the number of leaves a grounding may produce.
pub const DEFAULT_LEAF_LIMIT: u128 = 1_000_000;

/// Name of the propositional variable standing for a grounded atom.
/// Nullary atoms keep their bare name.
pub fn ground_atom_name(predicate: &str, args: &[String]) -> String {
    if args.is_empty() {
        predicate.to_string()
    } else {
        format!("{predicate}({})", args.join(","))
    }
}

/// Groundings of one predicate and their slice of the flat vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredicateGroundings {
    pub predicate: String,
    pub domains: Vec<String>,
    pub offset: usize,
    pub tuples: Vec<Vec<String>>,
}

/// Index bookkeeping for the flat grounding vector `p̄ = (p̄_1, …, p̄_J)`.
///
/// Tuples of each predicate enumerate the product of its argument domains
/// lexicographically in declaration order; predicates occupy contiguous
/// slices in declaration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingMap {
    pub predicates: Vec<PredicateGroundings>,
    pub len: usize,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl GroundingMap {
    pub fn from_kb(kb: &SourceKb) -> Result<Self> {
        let mut predicates = Vec::new();
        let mut offset = 0;
        for sig in &kb.predicates {
            let mut domains = Vec::new();
            for d in &sig.domains {
                let dom = kb.domain(d).ok_or_else(|| Error::Grounding(format!("undeclared domain `{d}`")))?;
                domains.push(&dom.constants);
            }
            let tuples = cartesian(&domains);
            let n = tuples.len();
            predicates.push(PredicateGroundings {
                predicate: sig.name.clone(),
                domains: sig.domains.clone(),
                offset,
                tuples,
            });
            offset += n;
        }
        let mut props: Vec<String> = Vec::new();
        for rule in &kb.rules {
            for v in rule.formula.variables() {
                if kb.predicates.iter().any(|p| p.name == v) {
                    return Err(Error::Grounding(format!("`{v}` is declared as a predicate but used without arguments")));
                }
                if !props.contains(&v) {
                    props.push(v);
                }
            }
        }
        for name in props {
            predicates.push(PredicateGroundings { predicate: name, domains: Vec::new(), offset, tuples: vec![Vec::new()] });
            offset += 1;
        }
        Ok(Self::from_parts(predicates, offset))
    }

    /// Builds a map from explicit tuple lists, e.g. restricted to sample sites.
    pub fn from_tuples(entries: Vec<(String, Vec<String>, Vec<Vec<String>>)>) -> Self {
        let mut offset = 0;
        let mut predicates = Vec::new();
        for (predicate, domains, tuples) in entries {
            let n = tuples.len();
            predicates.push(PredicateGroundings { predicate, domains, offset, tuples });
            offset += n;
        }
        Self::from_parts(predicates, offset)
    }

    fn from_parts(predicates: Vec<PredicateGroundings>, len: usize) -> Self {
        let mut index = BTreeMap::new();
        for p in &predicates {
            for (u, t) in p.tuples.iter().enumerate() {
                index.insert(ground_atom_name(&p.predicate, t), p.offset + u);
            }
        }
        GroundingMap { predicates, len, index }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Flat index of a grounded variable name such as `p2(x1,y2)`.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn index_of_atom(&self, predicate: &str, args: &[String]) -> Option<usize> {
        self.index_of(&ground_atom_name(predicate, args))
    }

    /// Grounded variable names in flat order.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.len);
        for p in &self.predicates {
            for t in &p.tuples {
                out.push(ground_atom_name(&p.predicate, t));
            }
        }
        out
    }

    pub fn predicate(&self, name: &str) -> Option<&PredicateGroundings> {
        self.predicates.iter().find(|p| p.predicate == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: GroundingMap = serde_json::from_str(text)?;
        let mut expected = 0;
        for p in &raw.predicates {
            if p.offset != expected {
                return Err(Error::Grounding(format!("offsets of `{}` are not contiguous", p.predicate)));
            }
            expected += p.tuples.len();
        }
        if expected != raw.len {
            return Err(Error::Grounding(format!("length {} does not match {expected} groundings", raw.len)));
        }
        Ok(Self::from_parts(raw.predicates, raw.len))
    }
}

fn cartesian(domains: &[&Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = vec![Vec::new()];
    for dom in domains {
        let mut next = Vec::with_capacity(out.len() * dom.len());
        for prefix in &out {
            for c in dom.iter() {
                let mut t = prefix.clone();
                t.push(c.clone());
                next.push(t);
            }
        }
        out = next;
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct GroundOptions {
    pub leaf_limit: u128,
    pub override_guard: bool,
}

impl Default for GroundOptions {
    fn default() -> Self {
        GroundOptions { leaf_limit: DEFAULT_LEAF_LIMIT, override_guard: false }
    }
}

/// Number of leaves the grounded formula will have.
pub fn grounded_leaf_count(f: &Formula, kb: &SourceKb) -> Result<u128> {
    Ok(match f {
        Formula::Zero | Formula::One | Formula::Var(_) | Formula::Atom(_) => 1,
        Formula::Not(g) => grounded_leaf_count(g, kb)?,
        Formula::Implies(a, b) => grounded_leaf_count(a, kb)? + grounded_leaf_count(b, kb)?,
        Formula::Apply(_, args) => {
            let mut n = 0u128;
            for a in args {
                n = n.saturating_add(grounded_leaf_count(a, kb)?);
            }
            n
        }
        Formula::ForAll(v, body) | Formula::Exists(v, body) => {
            let size = domain_of(kb, v, body)?.len() as u128;
            size.saturating_mul(grounded_leaf_count(body, kb)?)
        }
    })
}

fn domain_of<'a>(kb: &'a SourceKb, var: &str, body: &Formula) -> Result<&'a [String]> {
    let name = variable_domain(kb, var, body).map_err(|_| Error::UnboundVariable(var.to_string()))?;
    let dom = kb.domain(&name).ok_or_else(|| Error::Grounding(format!("undeclared domain `{name}`")))?;
    if dom.constants.is_empty() {
        return Err(Error::Grounding(format!("domain `{name}` is empty")));
    }
    Ok(&dom.constants)
}

fn check_guard(f: &Formula, kb: &SourceKb, opts: GroundOptions) -> Result<()> {
    let leaves = grounded_leaf_count(f, kb)?;
    if leaves > opts.leaf_limit && !opts.override_guard {
        return Err(Error::GroundingTooLarge { leaves, limit: opts.leaf_limit });
    }
    Ok(())
}

/// Replaces `∀v` by a weak conjunction and `∃v` by a weak disjunction over
/// the domain of `v`, and every atom by its grounded variable.
pub fn ground(f: &Formula, kb: &SourceKb, opts: GroundOptions) -> Result<(Formula, GroundingMap)> {
    check_guard(f, kb, opts)?;
    let map = GroundingMap::from_kb(kb)?;
    let mut env = Vec::new();
    let g = expand(f, kb, &mut env)?;
    Ok((g, map))
}

/// One instance per binding of the outermost `∀` prefix, in lexicographic
/// order of the bindings. The weak conjunction of the instances is the
/// grounding of `f`.
pub fn ground_instances(f: &Formula, kb: &SourceKb, opts: GroundOptions) -> Result<Vec<(Vec<(String, String)>, Formula)>> {
    check_guard(f, kb, opts)?;
    let mut prefix = Vec::new();
    let mut body = f;
    while let Formula::ForAll(v, inner) = body {
        prefix.push((v.clone(), domain_of(kb, v, inner)?));
        body = inner;
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; prefix.len()];
    loop {
        let mut env: Vec<(String, String)> = prefix.iter().zip(&idx).map(|((v, dom), &i)| (v.clone(), dom[i].clone())).collect();
        let g = expand(body, kb, &mut env)?;
        out.push((env, g));
        // odometer, last variable fastest
        let mut k = prefix.len();
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < prefix[k].1.len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

fn expand(f: &Formula, kb: &SourceKb, env: &mut Vec<(String, String)>) -> Result<Formula> {
    Ok(match f {
        Formula::Zero | Formula::One | Formula::Var(_) => f.clone(),
        Formula::Atom(a) => Formula::Var(ground_atom(a, kb, env)?),
        Formula::Not(g) => expand(g, kb, env)?.not(),
        Formula::Implies(a, b) => expand(a, kb, env)?.implies(expand(b, kb, env)?),
        Formula::Apply(op, args) => {
            let mut out = Vec::with_capacity(args.len());
            for a in args {
                out.push(expand(a, kb, env)?);
            }
            Formula::apply(*op, out)
        }
        Formula::ForAll(v, body) | Formula::Exists(v, body) => {
            let dom = domain_of(kb, v, body)?;
            let mut parts = Vec::with_capacity(dom.len());
            for c in dom {
                env.push((v.clone(), c.clone()));
                let r = expand(body, kb, env);
                env.pop();
                parts.push(r?);
            }
            if matches!(f, Formula::ForAll(..)) {
                Formula::weak_and(parts)
            } else {
                Formula::weak_or(parts)
            }
        }
    })
}

fn ground_atom(a: &Atom, kb: &SourceKb, env: &[(String, String)]) -> Result<String> {
    let sig = kb
        .predicate(&a.predicate)
        .ok_or_else(|| Error::Grounding(format!("undeclared predicate `{}`", a.predicate)))?;
    let mut args = Vec::with_capacity(a.args.len());
    for (arg, dom) in a.args.iter().zip(&sig.domains) {
        if let Some((_, c)) = env.iter().rev().find(|(v, _)| v == arg) {
            args.push(c.clone());
        } else if kb.domain(dom).is_some_and(|d| d.constants.contains(arg)) {
            args.push(arg.clone());
        } else {
            return Err(Error::UnboundVariable(arg.clone()));
        }
    }
    Ok(ground_atom_name(&a.predicate, &args))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::{classify, normalize, FragmentLabel};
    use crate::parser::parse_kb;

    const EXAMPLE: &str = "domain U1 = {x1, x2}; domain U2 = {y1, y2};
        pred p1(U1); pred p2(U1, U2);
        rule phi: forall x: exists y: p1(x) -> p2(x, y)";

    fn v(s: &str) -> Formula {
        Formula::var(s)
    }

    #[test]
    fn two_predicate_example() {
        let kb = parse_kb(EXAMPLE).unwrap();
        let (g, map) = ground(&kb.rules[0].formula, &kb, GroundOptions::default()).unwrap();
        let (p11, p12) = (v("p1(x1)"), v("p1(x2)"));
        let p2: Vec<Formula> = ["p2(x1,y1)", "p2(x1,y2)", "p2(x2,y1)", "p2(x2,y2)"].map(v).into();
        let expected = Formula::weak_and([
            Formula::weak_or([p11.clone().implies(p2[0].clone()), p11.implies(p2[1].clone())]),
            Formula::weak_or([p12.clone().implies(p2[2].clone()), p12.implies(p2[3].clone())]),
        ]);
        assert_eq!(g, expected);
        assert_eq!(map.len(), 6);
        assert_eq!(map.index_of("p1(x2)"), Some(1));
        assert_eq!(map.index_of("p2(x1,y1)"), Some(2));
        assert_eq!(map.index_of("p2(x2,y2)"), Some(5));
    }

    #[test]
    fn singleton_and_existential() {
        let kb = parse_kb("domain D = {a}; domain E = {a, b}; pred p(D); pred q(E); rule r: forall x: p(x); rule s: exists x: q(x)").unwrap();
        let (g, _) = ground(&kb.rules[0].formula, &kb, GroundOptions::default()).unwrap();
        assert_eq!(g, v("p(a)"));
        let (g, _) = ground(&kb.rules[1].formula, &kb, GroundOptions::default()).unwrap();
        assert_eq!(g, Formula::weak_or([v("q(a)"), v("q(b)")]));
    }

    #[test]
    fn leaf_count_matches_domain_products() {
        let kb = parse_kb("domain U = {a, b, c}; domain V = {u, v}; pred p(U); pred q(U, V);
            rule r: forall x: forall y: p(x) -> (q(x, y) + ~p(x))")
        .unwrap();
        let f = &kb.rules[0].formula;
        let (g, _) = ground(f, &kb, GroundOptions::default()).unwrap();
        assert_eq!(g.leaf_count() as u128, 3 * 2 * 3);
        assert_eq!(grounded_leaf_count(f, &kb).unwrap(), 18);
    }

    #[test]
    fn universal_concave_body_stays_concave() {
        let kb = parse_kb("domain U = {a, b, c}; pred p(U); pred q(U); rule r: forall x: (p(x) -> q(x)) ^ (q(x) + p(x))").unwrap();
        let (g, _) = ground(&kb.rules[0].formula, &kb, GroundOptions::default()).unwrap();
        assert_eq!(classify(&normalize(&g)).unwrap(), FragmentLabel::Concave);
    }

    #[test]
    fn existential_example_is_neither() {
        let kb = parse_kb(EXAMPLE).unwrap();
        let (g, _) = ground(&kb.rules[0].formula, &kb, GroundOptions::default()).unwrap();
        assert_eq!(classify(&normalize(&g)).unwrap(), FragmentLabel::Neither);
    }

    #[test]
    fn instances_split_outer_universal() {
        let kb = parse_kb(EXAMPLE).unwrap();
        let inst = ground_instances(&kb.rules[0].formula, &kb, GroundOptions::default()).unwrap();
        let (whole, _) = ground(&kb.rules[0].formula, &kb, GroundOptions::default()).unwrap();
        assert_eq!(inst.len(), 2);
        assert_eq!(inst[1].0, vec![("x".to_string(), "x2".to_string())]);
        assert_eq!(Formula::weak_and(inst.into_iter().map(|(_, f)| f)), whole);
    }

    #[test]
    fn guard_refuses_large_groundings() {
        let consts: Vec<String> = (0..200).map(|i| format!("c{i}")).collect();
        let text = format!("domain U = {{{}}}; pred r(U, U, U); rule big: forall x: forall y: forall z: r(x, y, z)", consts.join(", "));
        let kb = parse_kb(&text).unwrap();
        let err = ground(&kb.rules[0].formula, &kb, GroundOptions::default()).unwrap_err();
        assert!(matches!(err, Error::GroundingTooLarge { leaves: 8_000_000, .. }));
        assert_eq!(grounded_leaf_count(&kb.rules[0].formula, &kb).unwrap(), 8_000_000);
    }

    #[test]
    fn empty_domain_is_rejected() {
        let kb = parse_kb("domain U = {}; pred p(U); rule r: forall x: p(x)").unwrap();
        assert!(matches!(ground(&kb.rules[0].formula, &kb, GroundOptions::default()), Err(Error::Grounding(_))));
    }

    #[test]
    fn map_json_round_trip() {
        let kb = parse_kb(EXAMPLE).unwrap();
        let map = GroundingMap::from_kb(&kb).unwrap();
        let back = GroundingMap::from_json(&map.to_json().unwrap()).unwrap();
        assert_eq!(back, map);
        assert_eq!(back.index_of("p2(x2,y1)"), Some(4));
    }

    #[test]
    fn propositional_variables_follow_predicates() {
        let kb = parse_kb("domain U = {a}; pred p(U); rule r: forall x: p(x); rule s: q + t").expect("kb");
        let map = GroundingMap::from_kb(&kb).unwrap();
        assert_eq!(map.names(), vec!["p(a)", "q", "t"]);
        assert!(parse_kb("domain U = {a}; pred p(U); rule r: p").map_or(true, |kb| GroundingMap::from_kb(&kb).is_err()));
    }
}
