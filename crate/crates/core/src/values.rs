//! Line-oriented value files keyed by grounded atom.
//!
//! ```text
//! # comment
//! p(a) = 0.7
//! fixed q(a,b) = 1
//! slack r[x=a] = 0.25
//! ```
//!
//! `fixed` marks evidence. `slack` lines appear in solver output and are
//! kept separately from atom values.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ground::GroundingMap;

#[derive(Clone, Debug, PartialEq)]
pub struct ValueEntry {
    pub atom: String,
    pub value: f64,
    pub fixed: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValueTable {
    pub entries: Vec<ValueEntry>,
    /// (rule, grounding, value)
    pub slacks: Vec<(String, String, f64)>,
}

/// Removes whitespace so `p(a, b)` and `p(a,b)` name the same atom.
pub fn canonical_atom(name: &str) -> String {
    name.chars().filter(|c| !c.is_whitespace()).collect()
}

impl ValueTable {
    pub fn get(&self, atom: &str) -> Option<&ValueEntry> {
        let key = canonical_atom(atom);
        self.entries.iter().find(|e| e.atom == key)
    }

    pub fn push(&mut self, atom: &str, value: f64, fixed: bool) {
        self.entries.push(ValueEntry { atom: canonical_atom(atom), value, fixed });
    }

    /// Values laid out along `map`, with the atoms not listed.
    pub fn align(&self, map: &GroundingMap) -> Result<(Vec<Option<f64>>, Vec<bool>)> {
        let mut values = vec![None; map.len()];
        let mut fixed = vec![false; map.len()];
        for e in &self.entries {
            let i = map.index_of(&e.atom).ok_or_else(|| Error::Grounding(format!("`{}` is not a grounded atom of the knowledge base", e.atom)))?;
            values[i] = Some(e.value);
            fixed[i] = e.fixed;
        }
        Ok((values, fixed))
    }

    /// One entry per atom of `map`, in grounding order.
    pub fn from_vector(map: &GroundingMap, values: &[f64], fixed: &[bool]) -> Self {
        let entries = map.names().into_iter().zip(values).zip(fixed).map(|((atom, &value), &fixed)| ValueEntry { atom, value, fixed }).collect();
        ValueTable { entries, slacks: Vec::new() }
    }
}

pub fn parse_values(text: &str) -> Result<ValueTable> {
    let mut table = ValueTable::default();
    let mut seen = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Values { line: line_no, message };
        let (lhs, rhs) = line.rsplit_once('=').ok_or_else(|| err(format!("expected `atom = value`, found `{line}`")))?;
        let value: f64 = rhs.trim().parse().map_err(|_| err(format!("`{}` is not a number", rhs.trim())))?;
        if !value.is_finite() {
            return Err(err(format!("value `{}` is not finite", rhs.trim())));
        }
        let lhs = lhs.trim();
        if let Some(rest) = lhs.strip_prefix("slack ") {
            let rest = rest.trim();
            let (rule, grounding) = match rest.split_once('[') {
                Some((r, g)) => (r.trim(), g.strip_suffix(']').ok_or_else(|| err("unclosed `[` in slack name".into()))?),
                None => (rest, ""),
            };
            table.slacks.push((rule.to_string(), grounding.to_string(), value));
            continue;
        }
        let (fixed, atom) = match lhs.strip_prefix("fixed ") {
            Some(a) => (true, a),
            None => (false, lhs),
        };
        let atom = canonical_atom(atom);
        if !valid_atom(&atom) {
            return Err(err(format!("`{atom}` is not a grounded atom")));
        }
        if let Some(prev) = seen.insert(atom.clone(), line_no) {
            return Err(err(format!("`{atom}` already given on line {prev}")));
        }
        table.entries.push(ValueEntry { atom, value, fixed });
    }
    Ok(table)
}

fn valid_atom(s: &str) -> bool {
    let ident = |t: &str| !t.is_empty() && t.chars().all(|c| c.is_alphanumeric() || c == '_');
    match s.split_once('(') {
        Some((pred, rest)) => ident(pred) && rest.strip_suffix(')').is_some_and(|args| args.split(',').all(ident)),
        None => ident(s),
    }
}

pub fn write_values(table: &ValueTable) -> String {
    let mut out = String::new();
    for e in &table.entries {
        let _ = writeln!(out, "{}{} = {}", if e.fixed { "fixed " } else { "" }, e.atom, e.value);
    }
    for (rule, grounding, v) in &table.slacks {
        if grounding.is_empty() {
            let _ = writeln!(out, "slack {rule} = {v}");
        } else {
            let _ = writeln!(out, "slack {rule}[{grounding}] = {v}");
        }
    }
    out
}
