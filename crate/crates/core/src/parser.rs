//! ASCII syntax for formulas and `.lkb` knowledge bases.
//!
//! ```text
//! kb      := (domain | pred | rule)*
//! domain  := "domain" IDENT "=" "{" IDENT ("," IDENT)* "}" [";"]
//! pred    := "pred" IDENT "(" IDENT ("," IDENT)* ")" [";"]
//! rule    := "rule" IDENT ["[" "w" "=" FLOAT "]"] ":" formula [";"]
//! formula := ("forall" IDENT ":" | "exists" IDENT ":")* impl
//! impl    := chain ["->" impl]
//! chain   := unary (OP unary)*        -- one operator per chain
//! unary   := "~" unary | IDENT ["(" args ")"] | "0" | "1" | "(" formula ")"
//! ```
//!
//! `OP` is one of `*` (⊗), `^` (∧), `+` (⊕), `|` (∨). Different operators
//! in the same chain must be parenthesised, so `a * b + c` is rejected.
//! `#` starts a comment that runs to the end of the line.

use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::formula::{Atom, Connective, Formula};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Op(Connective),
    Tilde,
    Arrow,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Semi,
    Eq,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Number(s) => write!(f, "`{s}`"),
            Tok::Op(op) => write!(f, "`{}`", op.symbol()),
            Tok::Tilde => f.write_str("`~`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

const KEYWORDS: [&str; 5] = ["forall", "exists", "domain", "pred", "rule"];

fn lex(text: &str) -> Result<Vec<Spanned>> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let mut push = |tok: Tok, len: usize, i: &mut usize, col: &mut usize| {
            out.push(Spanned { tok, line: start_line, column: start_col });
            *i += len;
            *col += len;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '*' => push(Tok::Op(Connective::StrongAnd), 1, &mut i, &mut col),
            '^' => push(Tok::Op(Connective::WeakAnd), 1, &mut i, &mut col),
            '+' => push(Tok::Op(Connective::StrongOr), 1, &mut i, &mut col),
            '|' => push(Tok::Op(Connective::WeakOr), 1, &mut i, &mut col),
            '~' => push(Tok::Tilde, 1, &mut i, &mut col),
            '(' => push(Tok::LParen, 1, &mut i, &mut col),
            ')' => push(Tok::RParen, 1, &mut i, &mut col),
            '{' => push(Tok::LBrace, 1, &mut i, &mut col),
            '}' => push(Tok::RBrace, 1, &mut i, &mut col),
            '[' => push(Tok::LBracket, 1, &mut i, &mut col),
            ']' => push(Tok::RBracket, 1, &mut i, &mut col),
            ',' => push(Tok::Comma, 1, &mut i, &mut col),
            ':' => push(Tok::Colon, 1, &mut i, &mut col),
            ';' => push(Tok::Semi, 1, &mut i, &mut col),
            '=' => push(Tok::Eq, 1, &mut i, &mut col),
            '-' if chars.get(i + 1) == Some(&'>') => push(Tok::Arrow, 2, &mut i, &mut col),
            c if c.is_ascii_digit() || c == '.' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_digit() || matches!(chars[j], '.' | 'e' | 'E')) {
                    // exponent sign
                    if matches!(chars[j], 'e' | 'E') && matches!(chars.get(j + 1), Some('-') | Some('+')) {
                        j += 1;
                    }
                    j += 1;
                }
                let s: String = chars[i..j].iter().collect();
                let len = j - i;
                push(Tok::Number(s), len, &mut i, &mut col);
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_alphanumeric() || matches!(chars[j], '_' | '\'')) {
                    j += 1;
                }
                let s: String = chars[i..j].iter().collect();
                let len = j - i;
                push(Tok::Ident(s), len, &mut i, &mut col);
            }
            other => {
                return Err(Error::Syntax { line, column: col, message: format!("unexpected character `{other}`") });
            }
        }
    }
    out.push(Spanned { tok: Tok::Eof, line, column: col });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Self> {
        Ok(Parser { toks: lex(text)?, pos: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        let t = &self.toks[self.pos];
        Err(Error::Syntax { line: t.line, column: t.column, message: message.into() })
    }

    fn expect(&mut self, tok: Tok) -> Result<()> {
        if *self.peek() == tok {
            self.next();
            Ok(())
        } else {
            self.error(format!("expected {tok}, found {}", self.peek()))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.next();
                Ok(s)
            }
            other => self.error(format!("expected identifier, found {other}")),
        }
    }

    fn formula(&mut self) -> Result<Formula> {
        match self.peek().clone() {
            Tok::Ident(kw) if kw == "forall" || kw == "exists" => {
                self.next();
                let var = self.ident()?;
                self.expect(Tok::Colon)?;
                let body = self.formula()?;
                Ok(if kw == "forall" { Formula::forall(var, body) } else { Formula::exists(var, body) })
            }
            _ => self.implication(),
        }
    }

    fn implication(&mut self) -> Result<Formula> {
        let lhs = self.chain()?;
        if *self.peek() == Tok::Arrow {
            self.next();
            let rhs = self.implication()?;
            Ok(lhs.implies(rhs))
        } else {
            Ok(lhs)
        }
    }

    fn chain(&mut self) -> Result<Formula> {
        let first = self.unary()?;
        let op = match self.peek() {
            Tok::Op(op) => *op,
            _ => return Ok(first),
        };
        let mut args = vec![first];
        while let Tok::Op(next) = self.peek().clone() {
            if next != op {
                return self.error(format!(
                    "`{}` and `{}` cannot be mixed without parentheses",
                    op.symbol(),
                    next.symbol()
                ));
            }
            self.next();
            args.push(self.unary()?);
        }
        Ok(Formula::Apply(op, args))
    }

    fn unary(&mut self) -> Result<Formula> {
        match self.peek().clone() {
            Tok::Tilde => {
                self.next();
                Ok(self.unary()?.not())
            }
            Tok::LParen => {
                self.next();
                let f = self.formula()?;
                self.expect(Tok::RParen)?;
                Ok(f)
            }
            Tok::Number(n) if n == "0" => {
                self.next();
                Ok(Formula::Zero)
            }
            Tok::Number(n) if n == "1" => {
                self.next();
                Ok(Formula::One)
            }
            Tok::Ident(kw) if kw == "forall" || kw == "exists" => {
                self.error("quantifiers inside an operand must be parenthesised")
            }
            Tok::Ident(_) => {
                let name = self.ident()?;
                if *self.peek() == Tok::LParen {
                    self.next();
                    let mut args = vec![self.ident()?];
                    while *self.peek() == Tok::Comma {
                        self.next();
                        args.push(self.ident()?);
                    }
                    self.expect(Tok::RParen)?;
                    Ok(Formula::Atom(Atom { predicate: name, args }))
                } else {
                    Ok(Formula::Var(name))
                }
            }
            other => self.error(format!("expected a formula, found {other}")),
        }
    }
}

/// Parses a single formula; the whole input must be consumed.
pub fn parse_formula(text: &str) -> Result<Formula> {
    let mut p = Parser::new(text)?;
    let f = p.formula()?;
    if *p.peek() != Tok::Eof {
        return p.error(format!("unexpected {} after formula", p.peek()));
    }
    Ok(f)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub name: String,
    pub constants: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredicateSig {
    pub name: String,
    pub domains: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub name: String,
    pub weight: f64,
    pub formula: Formula,
}

/// A parsed knowledge base. Declaration order is preserved; it fixes the
/// grounding order downstream.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SourceKb {
    pub domains: Vec<Domain>,
    pub predicates: Vec<PredicateSig>,
    pub rules: Vec<Rule>,
}

impl SourceKb {
    pub fn domain(&self, name: &str) -> Option<&Domain> {
        self.domains.iter().find(|d| d.name == name)
    }

    pub fn predicate(&self, name: &str) -> Option<&PredicateSig> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn rule(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }

    /// Checks signatures, constants and quantifier scoping of every rule.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for d in &self.domains {
            if !seen.insert(&d.name) {
                return Err(Error::Kb(format!("domain `{}` declared twice", d.name)));
            }
        }
        seen.clear();
        for p in &self.predicates {
            if !seen.insert(&p.name) {
                return Err(Error::Kb(format!("predicate `{}` declared twice", p.name)));
            }
            for d in &p.domains {
                if self.domain(d).is_none() {
                    return Err(Error::Kb(format!("predicate `{}` uses undeclared domain `{d}`", p.name)));
                }
            }
        }
        seen.clear();
        for r in &self.rules {
            if !seen.insert(&r.name) {
                return Err(Error::Kb(format!("rule `{}` declared twice", r.name)));
            }
            if !(r.weight >= 0.0) || !r.weight.is_finite() {
                return Err(Error::NegativeWeight { rule: r.name.clone(), weight: r.weight });
            }
            self.validate_formula(&r.name, &r.formula)
                .map_err(|e| Error::Kb(format!("rule `{}`: {e}", r.name)))?;
        }
        Ok(())
    }

    fn validate_formula(&self, rule: &str, f: &Formula) -> Result<()> {
        let first_order = f.has_atoms() || has_quantifier(f);
        if first_order && !f.variables().is_empty() {
            return Err(Error::Kb(format!(
                "first-order rule `{rule}` mixes in propositional variables {:?}",
                f.variables()
            )));
        }
        self.check_scope(f, &mut Vec::new())
    }

    fn check_scope(&self, f: &Formula, bound: &mut Vec<String>) -> Result<()> {
        match f {
            Formula::Zero | Formula::One | Formula::Var(_) => Ok(()),
            Formula::Atom(atom) => {
                let sig = self
                    .predicate(&atom.predicate)
                    .ok_or_else(|| Error::Kb(format!("undeclared predicate `{}`", atom.predicate)))?;
                if sig.domains.len() != atom.args.len() {
                    return Err(Error::Kb(format!(
                        "`{}` expects {} arguments, found {}",
                        atom.predicate,
                        sig.domains.len(),
                        atom.args.len()
                    )));
                }
                for (arg, dom) in atom.args.iter().zip(&sig.domains) {
                    if bound.contains(arg) {
                        continue;
                    }
                    let domain = self.domain(dom).expect("checked in validate");
                    if !domain.constants.contains(arg) {
                        return Err(Error::Kb(format!(
                            "`{arg}` is neither a bound variable nor a constant of domain `{dom}`"
                        )));
                    }
                }
                Ok(())
            }
            Formula::Not(g) => self.check_scope(g, bound),
            Formula::Implies(a, b) => {
                self.check_scope(a, bound)?;
                self.check_scope(b, bound)
            }
            Formula::Apply(_, args) => args.iter().try_for_each(|a| self.check_scope(a, bound)),
            Formula::ForAll(v, body) | Formula::Exists(v, body) => {
                if !uses_var(body, v) {
                    return Err(Error::Kb(format!("quantified variable `{v}` does not occur in any atom")));
                }
                variable_domain(self, v, body)?;
                bound.push(v.clone());
                let r = self.check_scope(body, bound);
                bound.pop();
                r
            }
        }
    }
}

fn has_quantifier(f: &Formula) -> bool {
    match f {
        Formula::ForAll(..) | Formula::Exists(..) => true,
        Formula::Zero | Formula::One | Formula::Var(_) | Formula::Atom(_) => false,
        Formula::Not(g) => has_quantifier(g),
        Formula::Implies(a, b) => has_quantifier(a) || has_quantifier(b),
        Formula::Apply(_, args) => args.iter().any(has_quantifier),
    }
}

/// Whether `var` occurs free in some atom of `f`.
fn uses_var(f: &Formula, var: &str) -> bool {
    match f {
        Formula::Atom(a) => a.args.iter().any(|x| x == var),
        Formula::Zero | Formula::One | Formula::Var(_) => false,
        Formula::Not(g) => uses_var(g, var),
        Formula::Implies(a, b) => uses_var(a, var) || uses_var(b, var),
        Formula::Apply(_, args) => args.iter().any(|a| uses_var(a, var)),
        Formula::ForAll(v, g) | Formula::Exists(v, g) => v != var && uses_var(g, var),
    }
}

/// Domain of a quantified variable, read off the argument positions where
/// it occurs free in `body`. All occurrences must agree.
pub fn variable_domain(kb: &SourceKb, var: &str, body: &Formula) -> Result<String> {
    let mut found: Option<String> = None;
    let mut conflict = None;
    collect_domains(kb, var, body, &mut |dom| match &found {
        None => found = Some(dom.to_string()),
        Some(d) if d != dom => conflict = Some((d.clone(), dom.to_string())),
        _ => {}
    });
    if let Some((a, b)) = conflict {
        return Err(Error::Kb(format!("variable `{var}` used with domains `{a}` and `{b}`")));
    }
    found.ok_or_else(|| Error::Kb(format!("cannot infer a domain for variable `{var}`")))
}

fn collect_domains(kb: &SourceKb, var: &str, f: &Formula, sink: &mut dyn FnMut(&str)) {
    match f {
        Formula::Atom(a) => {
            if let Some(sig) = kb.predicate(&a.predicate) {
                for (arg, dom) in a.args.iter().zip(&sig.domains) {
                    if arg == var {
                        sink(dom);
                    }
                }
            }
        }
        Formula::Zero | Formula::One | Formula::Var(_) => {}
        Formula::Not(g) => collect_domains(kb, var, g, sink),
        Formula::Implies(a, b) => {
            collect_domains(kb, var, a, sink);
            collect_domains(kb, var, b, sink);
        }
        Formula::Apply(_, args) => args.iter().for_each(|a| collect_domains(kb, var, a, sink)),
        Formula::ForAll(v, g) | Formula::Exists(v, g) => {
            if v != var {
                collect_domains(kb, var, g, sink)
            }
        }
    }
}

/// Parses and validates a knowledge base.
pub fn parse_kb(text: &str) -> Result<SourceKb> {
    let mut p = Parser::new(text)?;
    let mut kb = SourceKb::default();
    loop {
        match p.peek().clone() {
            Tok::Eof => break,
            Tok::Semi => {
                p.next();
            }
            Tok::Ident(kw) if kw == "domain" => {
                p.next();
                let name = p.ident()?;
                p.expect(Tok::Eq)?;
                p.expect(Tok::LBrace)?;
                let mut constants = Vec::new();
                if *p.peek() != Tok::RBrace {
                    constants.push(p.ident()?);
                    while *p.peek() == Tok::Comma {
                        p.next();
                        constants.push(p.ident()?);
                    }
                }
                p.expect(Tok::RBrace)?;
                let mut uniq = HashSet::new();
                if let Some(dup) = constants.iter().find(|c| !uniq.insert(*c)) {
                    return p.error(format!("constant `{dup}` repeated in domain `{name}`"));
                }
                kb.domains.push(Domain { name, constants });
            }
            Tok::Ident(kw) if kw == "pred" => {
                p.next();
                let name = p.ident()?;
                p.expect(Tok::LParen)?;
                let mut domains = vec![p.ident()?];
                while *p.peek() == Tok::Comma {
                    p.next();
                    domains.push(p.ident()?);
                }
                p.expect(Tok::RParen)?;
                kb.predicates.push(PredicateSig { name, domains });
            }
            Tok::Ident(kw) if kw == "rule" => {
                p.next();
                let name = p.ident()?;
                let mut weight = 1.0;
                if *p.peek() == Tok::LBracket {
                    p.next();
                    match p.next().tok {
                        Tok::Ident(w) if w == "w" => {}
                        other => return p.error(format!("expected `w`, found {other}")),
                    }
                    p.expect(Tok::Eq)?;
                    weight = match p.next().tok {
                        Tok::Number(n) => n.parse::<f64>().map_err(|_| Error::Kb(format!("bad weight `{n}`")))?,
                        other => return p.error(format!("expected a number, found {other}")),
                    };
                    p.expect(Tok::RBracket)?;
                }
                p.expect(Tok::Colon)?;
                let formula = p.formula()?;
                kb.rules.push(Rule { name, weight, formula });
            }
            other => return p.error(format!("expected `domain`, `pred` or `rule`, found {other}")),
        }
    }
    kb.validate()?;
    Ok(kb)
}

/// Prints a formula in the ASCII syntax accepted by [`parse_formula`].
pub fn print(f: &Formula) -> String {
    f.to_string()
}

fn needs_parens(f: &Formula) -> bool {
    matches!(f, Formula::Apply(..) | Formula::Implies(..) | Formula::ForAll(..) | Formula::Exists(..))
}

fn write_operand(f: &Formula, out: &mut fmt::Formatter<'_>) -> fmt::Result {
    if needs_parens(f) {
        write!(out, "({f})")
    } else {
        write!(out, "{f}")
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Zero => out.write_str("0"),
            Formula::One => out.write_str("1"),
            Formula::Var(name) => out.write_str(name),
            Formula::Atom(a) => write!(out, "{}({})", a.predicate, a.args.join(", ")),
            Formula::Not(g) => {
                out.write_str("~")?;
                write_operand(g, out)
            }
            Formula::Implies(a, b) => {
                write_operand(a, out)?;
                out.write_str(" -> ")?;
                match **b {
                    Formula::Implies(..) => write!(out, "{b}"),
                    _ => write_operand(b, out),
                }
            }
            Formula::Apply(op, args) => {
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        write!(out, " {} ", op.symbol())?;
                    }
                    write_operand(arg, out)?;
                }
                Ok(())
            }
            Formula::ForAll(v, body) => write!(out, "forall {v}: {body}"),
            Formula::Exists(v, body) => write!(out, "exists {v}: {body}"),
        }
    }
}

/// Renders `kb` back to `.lkb` text.
pub fn print_kb(kb: &SourceKb) -> String {
    let mut out = String::new();
    for d in &kb.domains {
        out.push_str(&format!("domain {} = {{{}}};\n", d.name, d.constants.join(", ")));
    }
    for p in &kb.predicates {
        out.push_str(&format!("pred {}({});\n", p.name, p.domains.join(", ")));
    }
    for r in &kb.rules {
        if r.weight == 1.0 {
            out.push_str(&format!("rule {}: {};\n", r.name, r.formula));
        } else {
            out.push_str(&format!("rule {} [w={}]: {};\n", r.name, r.weight, r.formula));
        }
    }
    out
}

/// Names of rules mapped to their weights.
pub fn rule_weights(kb: &SourceKb) -> HashMap<String, f64> {
    kb.rules.iter().map(|r| (r.name.clone(), r.weight)).collect()
}
