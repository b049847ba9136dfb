//! First-order integrity constraints: parsing, rectification, sort
//! relativization and translation into normal program clauses.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logic::{Atom, Literal, Term};
use crate::program::{Clause, Database, Origin};
use crate::syntax::{Parser, Tok};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Formula {
    Atom(Atom),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    ImpliedBy(Box<Formula>, Box<Formula>),
    Iff(Box<Formula>, Box<Formula>),
    Forall(String, Option<String>, Box<Formula>),
    Exists(String, Option<String>, Box<Formula>),
}

use Formula as F;

fn bx(f: Formula) -> Box<Formula> {
    Box::new(f)
}

impl Formula {
    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        F::Not(bx(f))
    }

    /// Free variables in first-occurrence order.
    pub fn free_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut Vec<String>) {
        match self {
            F::Atom(a) => {
                for v in a.vars() {
                    if !bound.contains(&v) && !out.contains(&v) {
                        out.push(v);
                    }
                }
            }
            F::Not(f) => f.collect_free(bound, out),
            F::And(a, b) | F::Or(a, b) | F::Implies(a, b) | F::ImpliedBy(a, b) | F::Iff(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            F::Forall(x, _, f) | F::Exists(x, _, f) => {
                bound.push(x.clone());
                f.collect_free(bound, out);
                bound.pop();
            }
        }
    }

    /// Every variable name occurring anywhere, bound or free.
    pub fn all_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk_vars(&mut out);
        out
    }

    fn walk_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            F::Atom(a) => out.extend(a.vars()),
            F::Not(f) => f.walk_vars(out),
            F::And(a, b) | F::Or(a, b) | F::Implies(a, b) | F::ImpliedBy(a, b) | F::Iff(a, b) => {
                a.walk_vars(out);
                b.walk_vars(out);
            }
            F::Forall(x, _, f) | F::Exists(x, _, f) => {
                out.insert(x.clone());
                f.walk_vars(out);
            }
        }
    }

    fn to_literal(&self) -> Option<Literal> {
        match self {
            F::Atom(a) => Some(Literal::pos(a.clone())),
            F::Not(f) => match &**f {
                F::Atom(a) => Some(Literal::neg(a.clone())),
                _ => None,
            },
            _ => None,
        }
    }

    fn rename_var(&self, from: &str, to: &str) -> Formula {
        let r = |v: &str| if v == from { to.to_string() } else { v.to_string() };
        match self {
            F::Atom(a) => F::Atom(a.map_vars(&r)),
            F::Not(f) => F::Not(bx(f.rename_var(from, to))),
            F::And(a, b) => F::And(bx(a.rename_var(from, to)), bx(b.rename_var(from, to))),
            F::Or(a, b) => F::Or(bx(a.rename_var(from, to)), bx(b.rename_var(from, to))),
            F::Implies(a, b) => F::Implies(bx(a.rename_var(from, to)), bx(b.rename_var(from, to))),
            F::ImpliedBy(a, b) => F::ImpliedBy(bx(a.rename_var(from, to)), bx(b.rename_var(from, to))),
            F::Iff(a, b) => F::Iff(bx(a.rename_var(from, to)), bx(b.rename_var(from, to))),
            F::Forall(x, s, f) if x == from => F::Forall(x.clone(), s.clone(), f.clone()),
            F::Exists(x, s, f) if x == from => F::Exists(x.clone(), s.clone(), f.clone()),
            F::Forall(x, s, f) => F::Forall(x.clone(), s.clone(), bx(f.rename_var(from, to))),
            F::Exists(x, s, f) => F::Exists(x.clone(), s.clone(), bx(f.rename_var(from, to))),
        }
    }
}

fn fmt_operand(f: &Formula, out: &mut fmt::Formatter<'_>) -> fmt::Result {
    match f {
        F::Atom(_) | F::Not(_) => write!(out, "{f}"),
        F::Forall(..) | F::Exists(..) => write!(out, "({f})"),
        _ => write!(out, "{f}"),
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bin = |out: &mut fmt::Formatter<'_>, a: &Formula, op: &str, b: &Formula| {
            write!(out, "(")?;
            fmt_operand(a, out)?;
            write!(out, " {op} ")?;
            fmt_operand(b, out)?;
            write!(out, ")")
        };
        match self {
            F::Atom(a) => write!(out, "{a}"),
            F::Not(f) => {
                write!(out, "not ")?;
                match **f {
                    F::Atom(ref a) if a.is_builtin() => write!(out, "({f})"),
                    F::Forall(..) | F::Exists(..) => write!(out, "({f})"),
                    _ => write!(out, "{f}"),
                }
            }
            F::And(a, b) => bin(out, a, "&", b),
            F::Or(a, b) => bin(out, a, "|", b),
            F::Implies(a, b) => bin(out, a, "->", b),
            F::ImpliedBy(a, b) => bin(out, a, "<-", b),
            F::Iff(a, b) => bin(out, a, "<->", b),
            F::Forall(x, s, f) | F::Exists(x, s, f) => {
                let q = if matches!(self, F::Forall(..)) { "forall" } else { "exists" };
                write!(out, "{q} {x}")?;
                if let Some(s) = s {
                    write!(out, ":{s}")?;
                }
                match **f {
                    F::And(..) | F::Or(..) | F::Implies(..) | F::ImpliedBy(..) | F::Iff(..) => write!(out, " {f}"),
                    _ => write!(out, " ({f})"),
                }
            }
        }
    }
}

struct FolParser {
    p: Parser,
}

impl FolParser {
    fn formula(&mut self) -> Result<Formula> {
        let lhs = self.disjunction()?;
        let mk: fn(Box<Formula>, Box<Formula>) -> Formula = match self.p.peek() {
            Some(Tok::Arrow) => F::Implies,
            Some(Tok::BackArrow) => F::ImpliedBy,
            Some(Tok::DoubleArrow) => F::Iff,
            _ => return Ok(lhs),
        };
        self.p.next();
        let rhs = self.formula()?;
        Ok(mk(bx(lhs), bx(rhs)))
    }

    fn disjunction(&mut self) -> Result<Formula> {
        let mut f = self.conjunction()?;
        while self.p.eat(&Tok::Bar) {
            f = F::Or(bx(f), bx(self.conjunction()?));
        }
        Ok(f)
    }

    fn conjunction(&mut self) -> Result<Formula> {
        let mut f = self.unary()?;
        while self.p.eat(&Tok::Amp) {
            f = F::And(bx(f), bx(self.unary()?));
        }
        Ok(f)
    }

    fn unary(&mut self) -> Result<Formula> {
        if self.p.is_keyword("not") {
            self.p.next();
            return Ok(F::not(self.unary()?));
        }
        if self.p.is_keyword("forall") || self.p.is_keyword("exists") {
            let universal = self.p.is_keyword("forall");
            self.p.next();
            let mut vars = Vec::new();
            loop {
                let x = match self.p.next() {
                    Some(Tok::Var(x)) => x,
                    _ => return Err(self.p.error("expected a quantified variable")),
                };
                let sort = if self.p.eat(&Tok::Colon) {
                    match self.p.next() {
                        Some(Tok::Ident(s)) => Some(s),
                        _ => return Err(self.p.error("expected a sort name")),
                    }
                } else {
                    None
                };
                vars.push((x, sort));
                if !self.p.eat(&Tok::Comma) {
                    break;
                }
            }
            self.p.eat(&Tok::Dot);
            let mut body = self.formula()?;
            for (x, s) in vars.into_iter().rev() {
                body = if universal { F::Forall(x, s, bx(body)) } else { F::Exists(x, s, bx(body)) };
            }
            return Ok(body);
        }
        if self.p.eat(&Tok::LParen) {
            let f = self.formula()?;
            self.p.expect(&Tok::RParen)?;
            return Ok(f);
        }
        Ok(F::Atom(self.p.atom()?))
    }
}

/// Parses a `.fol` file: one `.`-terminated formula per statement. Each
/// formula is rectified and must be closed.
pub fn parse_constraints(text: &str) -> Result<Vec<Formula>> {
    let mut fp = FolParser { p: Parser::new(text)? };
    let mut out = Vec::new();
    while !fp.p.at_end() {
        let f = fp.formula()?;
        let free = f.free_vars();
        if !free.is_empty() {
            return Err(fp.p.error(format!("unbound variable(s) {} in constraint", free.join(", "))));
        }
        fp.p.expect(&Tok::Dot)?;
        out.push(rectify(&f));
    }
    Ok(out)
}

/// Picks a fresh variable name `<base>_<k>` not in `used`.
fn fresh_var(base: &str, used: &mut BTreeSet<String>) -> String {
    let mut k = 1;
    loop {
        let n = format!("{base}_{k}");
        if !used.contains(&n) {
            used.insert(n.clone());
            return n;
        }
        k += 1;
    }
}

/// Renames quantified variables so that no variable is both free and bound
/// and none is quantified twice. The first binder of a name keeps it.
pub fn rectify(f: &Formula) -> Formula {
    let mut used = f.all_vars();
    let mut claimed: BTreeSet<String> = f.free_vars().into_iter().collect();
    rectify_in(f, &mut used, &mut claimed)
}

fn rectify_in(f: &Formula, used: &mut BTreeSet<String>, claimed: &mut BTreeSet<String>) -> Formula {
    let mut go = |g: &Formula| rectify_in(g, used, claimed);
    match f {
        F::Atom(_) => f.clone(),
        F::Not(g) => F::Not(bx(go(g))),
        F::And(a, b) => {
            let a = go(a);
            F::And(bx(a), bx(go(b)))
        }
        F::Or(a, b) => {
            let a = go(a);
            F::Or(bx(a), bx(go(b)))
        }
        F::Implies(a, b) => {
            let a = go(a);
            F::Implies(bx(a), bx(go(b)))
        }
        F::ImpliedBy(a, b) => {
            let a = go(a);
            F::ImpliedBy(bx(a), bx(go(b)))
        }
        F::Iff(a, b) => {
            let a = go(a);
            F::Iff(bx(a), bx(go(b)))
        }
        F::Forall(x, s, g) | F::Exists(x, s, g) => {
            let (name, body) = if claimed.contains(x) {
                let n = fresh_var(x, used);
                (n.clone(), g.rename_var(x, &n))
            } else {
                (x.clone(), (**g).clone())
            };
            claimed.insert(name.clone());
            let body = rectify_in(&body, used, claimed);
            if matches!(f, F::Forall(..)) {
                F::Forall(name, s.clone(), bx(body))
            } else {
                F::Exists(name, s.clone(), bx(body))
            }
        }
    }
}

/// Replaces sorted quantifiers by guards: `∀x:s φ` becomes `∀x (s(x) → φ)`
/// and `∃x:s φ` becomes `∃x (s(x) ∧ φ)`.
pub fn relativize(f: &Formula) -> Formula {
    match f {
        F::Atom(_) => f.clone(),
        F::Not(g) => F::not(relativize(g)),
        F::And(a, b) => F::And(bx(relativize(a)), bx(relativize(b))),
        F::Or(a, b) => F::Or(bx(relativize(a)), bx(relativize(b))),
        F::Implies(a, b) => F::Implies(bx(relativize(a)), bx(relativize(b))),
        F::ImpliedBy(a, b) => F::ImpliedBy(bx(relativize(a)), bx(relativize(b))),
        F::Iff(a, b) => F::Iff(bx(relativize(a)), bx(relativize(b))),
        F::Forall(x, None, g) => F::Forall(x.clone(), None, bx(relativize(g))),
        F::Exists(x, None, g) => F::Exists(x.clone(), None, bx(relativize(g))),
        F::Forall(x, Some(s), g) => {
            let guard = F::Atom(Atom::new(s, vec![Term::Var(x.clone())]));
            F::Forall(x.clone(), None, bx(F::Implies(bx(guard), bx(relativize(g)))))
        }
        F::Exists(x, Some(s), g) => {
            let guard = F::Atom(Atom::new(s, vec![Term::Var(x.clone())]));
            F::Exists(x.clone(), None, bx(F::And(bx(guard), bx(relativize(g)))))
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Polarity {
    Pos,
    Neg,
}

impl Polarity {
    fn flip(self) -> Polarity {
        match self {
            Polarity::Pos => Polarity::Neg,
            Polarity::Neg => Polarity::Pos,
        }
    }
}

type ToDo = Vec<(Atom, Formula)>;

/// Translation state: the fresh-predicate counter is shared by all
/// constraints compiled together.
pub struct Translator {
    next_aux: usize,
    reserved: BTreeSet<String>,
    used_vars: BTreeSet<String>,
}

impl Translator {
    /// `reserved` holds predicate names that fresh predicates must not use.
    pub fn new(reserved: BTreeSet<String>) -> Translator {
        Translator { next_aux: 1, reserved, used_vars: BTreeSet::new() }
    }

    fn new_pred(&mut self, f: &Formula) -> Result<Atom> {
        let name = format!("_aux{}", self.next_aux);
        self.next_aux += 1;
        if self.reserved.contains(&name) {
            return Err(Error::Compile(format!("fresh predicate {name} collides with a database predicate")));
        }
        Ok(Atom::new(&name, f.free_vars().into_iter().map(Term::Var).collect()))
    }

    /// Translates `f` into clauses defining `head`.
    pub fn translate(&mut self, head: &Atom, f: &Formula) -> Result<Vec<Clause>> {
        self.used_vars.extend(f.all_vars());
        let (disj, todo1) = self.disjunctions(Polarity::Pos, f)?;
        let (mut program, todo2) = self.clauses_for(head, &disj)?;
        for (a, g) in todo1.into_iter().chain(todo2) {
            program.extend(self.translate(&a, &g)?);
        }
        Ok(program)
    }

    fn clauses_for(&mut self, head: &Atom, disjuncts: &[Formula]) -> Result<(Vec<Clause>, ToDo)> {
        let mut rules = Vec::new();
        let mut todo = Vec::new();
        for d in disjuncts {
            let (conj, todo1) = self.conjunctions(Polarity::Pos, d)?;
            let (body, todo2) = self.body(&conj)?;
            let mut c = Clause::new(head.clone(), body);
            c.origin = Origin::Constraint;
            rules.push(c);
            todo.extend(todo1);
            todo.extend(todo2);
        }
        Ok((rules, todo))
    }

    fn body(&mut self, conjuncts: &[Formula]) -> Result<(Vec<Literal>, ToDo)> {
        let mut body = Vec::new();
        let mut todo = Vec::new();
        for c in conjuncts {
            if let Some(l) = c.to_literal() {
                body.push(l);
            } else {
                let p = self.new_pred(c)?;
                todo.push((p.clone(), c.clone()));
                body.push(Literal::pos(p));
            }
        }
        Ok((body, todo))
    }

    /// Renames every bound variable of `f` apart from all names seen so far.
    fn clone_renamed(&mut self, f: &Formula) -> Formula {
        match f {
            F::Atom(_) => f.clone(),
            F::Not(g) => F::not(self.clone_renamed(g)),
            F::And(a, b) => F::And(bx(self.clone_renamed(a)), bx(self.clone_renamed(b))),
            F::Or(a, b) => F::Or(bx(self.clone_renamed(a)), bx(self.clone_renamed(b))),
            F::Implies(a, b) => F::Implies(bx(self.clone_renamed(a)), bx(self.clone_renamed(b))),
            F::ImpliedBy(a, b) => F::ImpliedBy(bx(self.clone_renamed(a)), bx(self.clone_renamed(b))),
            F::Iff(a, b) => F::Iff(bx(self.clone_renamed(a)), bx(self.clone_renamed(b))),
            F::Forall(x, s, g) | F::Exists(x, s, g) => {
                let n = fresh_var(x, &mut self.used_vars);
                let body = self.clone_renamed(&g.rename_var(x, &n));
                if matches!(f, F::Forall(..)) {
                    F::Forall(n, s.clone(), bx(body))
                } else {
                    F::Exists(n, s.clone(), bx(body))
                }
            }
        }
    }

    fn disjunctions(&mut self, pol: Polarity, f: &Formula) -> Result<(Vec<Formula>, ToDo)> {
        use Polarity::*;
        let pair = |s: &mut Self, p1, f1: &Formula, p2, f2: &Formula| -> Result<(Vec<Formula>, ToDo)> {
            let (mut d1, mut t1) = s.disjunctions(p1, f1)?;
            let (d2, t2) = s.disjunctions(p2, f2)?;
            d1.extend(d2);
            t1.extend(t2);
            Ok((d1, t1))
        };
        match (pol, f) {
            (_, F::Not(g)) => self.disjunctions(pol.flip(), g),
            (Pos, F::Or(a, b)) => pair(self, Pos, a, Pos, b),
            (Neg, F::And(a, b)) => pair(self, Neg, a, Neg, b),
            (Pos, F::ImpliedBy(a, b)) => pair(self, Pos, a, Neg, b),
            (Pos, F::Implies(a, b)) => pair(self, Pos, b, Neg, a),
            (Neg, F::Iff(a, b)) => {
                let left = F::ImpliedBy(a.clone(), b.clone());
                let right = F::Implies(bx(self.clone_renamed(a)), bx(self.clone_renamed(b)));
                pair(self, Neg, &left, Neg, &right)
            }
            (Neg, F::Exists(_, _, g)) => {
                let p = self.new_pred(f)?;
                Ok((vec![F::not(F::Atom(p.clone()))], vec![(p, (**g).clone())]))
            }
            (Pos, F::Exists(_, _, g)) => self.disjunctions(Pos, g),
            (_, F::Forall(x, s, g)) => {
                let ex = F::Exists(x.clone(), s.clone(), bx(F::not((**g).clone())));
                self.disjunctions(pol.flip(), &ex)
            }
            (Pos, _) => Ok((vec![f.clone()], Vec::new())),
            (Neg, _) => Ok((vec![F::not(f.clone())], Vec::new())),
        }
    }

    fn conjunctions(&mut self, pol: Polarity, f: &Formula) -> Result<(Vec<Formula>, ToDo)> {
        use Polarity::*;
        let pair = |s: &mut Self, p1, f1: &Formula, p2, f2: &Formula| -> Result<(Vec<Formula>, ToDo)> {
            let (mut c1, mut t1) = s.conjunctions(p1, f1)?;
            let (c2, t2) = s.conjunctions(p2, f2)?;
            c1.extend(c2);
            t1.extend(t2);
            Ok((c1, t1))
        };
        match (pol, f) {
            (_, F::Not(g)) => self.conjunctions(pol.flip(), g),
            (Pos, F::And(a, b)) => pair(self, Pos, a, Pos, b),
            (Neg, F::Or(a, b)) => pair(self, Neg, a, Neg, b),
            (Neg, F::ImpliedBy(a, b)) => pair(self, Pos, b, Neg, a),
            (Neg, F::Implies(a, b)) => pair(self, Pos, a, Neg, b),
            (Pos, F::Iff(a, b)) => {
                let left = F::ImpliedBy(a.clone(), b.clone());
                let right = F::Implies(bx(self.clone_renamed(a)), bx(self.clone_renamed(b)));
                pair(self, Pos, &left, Pos, &right)
            }
            (Neg, F::Exists(_, _, g)) => {
                // The conjunct stands for ¬∃x F, so the fresh atom is negated.
                let p = self.new_pred(f)?;
                Ok((vec![F::not(F::Atom(p.clone()))], vec![(p, (**g).clone())]))
            }
            (Pos, F::Exists(_, _, g)) => self.conjunctions(Pos, g),
            (_, F::Forall(x, s, g)) => {
                let ex = F::Exists(x.clone(), s.clone(), bx(F::not((**g).clone())));
                self.conjunctions(pol.flip(), &ex)
            }
            (Pos, _) => Ok((vec![f.clone()], Vec::new())),
            (Neg, _) => Ok((vec![F::not(f.clone())], Vec::new())),
        }
    }
}

/// A constraint compiled to clauses; `← entry` has a refutation iff the
/// constraint holds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledConstraint {
    pub entry: Atom,
    pub clauses: Vec<Clause>,
    pub source: Formula,
}

/// Compiles constraints in order, naming entries `ic1, ic2, …` and fresh
/// predicates `_aux1, _aux2, …` across the whole list. Names already used
/// by `db` are rejected.
pub fn compile_constraints(formulas: &[Formula], db: Option<&Database>) -> Result<Vec<CompiledConstraint>> {
    let mut reserved: BTreeSet<String> = BTreeSet::new();
    if let Some(db) = db {
        reserved.extend(db.predicates().into_iter().map(|k| k.name));
    }
    let mut tr = Translator::new(reserved.clone());
    let mut out = Vec::new();
    for (i, f) in formulas.iter().enumerate() {
        let entry = Atom::prop(&format!("ic{}", i + 1));
        if reserved.contains(&entry.pred) {
            return Err(Error::Compile(format!("entry predicate {} collides with a database predicate", entry.pred)));
        }
        let prepared = relativize(&rectify(f));
        let clauses = tr.translate(&entry, &prepared)?;
        out.push(CompiledConstraint { entry, clauses, source: f.clone() });
    }
    if let Some(db) = db {
        for c in out.iter().flat_map(|c| &c.clauses) {
            for l in &c.body {
                let key = l.atom.key();
                if l.atom.is_builtin() {
                    continue;
                }
                let clash = db.predicates().iter().any(|k| k.name == key.name && k.arity != key.arity);
                if clash {
                    return Err(Error::Compile(format!("{key} is used with a different arity in the database")));
                }
            }
        }
    }
    Ok(out)
}

/// Renders compiled clauses in `.dl` syntax, one per line.
pub fn print_clauses(cs: &[CompiledConstraint]) -> String {
    let mut s = String::new();
    for c in cs {
        for cl in &c.clauses {
            s.push_str(&cl.to_string());
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn compile(text: &str) -> String {
        let fs = parse_constraints(text).unwrap();
        print_clauses(&compile_constraints(&fs, None).unwrap())
    }

    #[test]
    fn running_example_constraint() {
        assert_eq!(
            compile("forall E:employee access(E,menu)."),
            "ic1 :- not _aux1.\n_aux1 :- employee(E), not access(E,menu).\n"
        );
    }

    #[test]
    fn literal_and_existential() {
        assert_eq!(compile("p(a)."), "ic1 :- p(a).\n");
        assert_eq!(compile("exists X (s(X) & p(X))."), "ic1 :- s(X), p(X).\n");
        assert_eq!(compile("exists X:s p(X)."), "ic1 :- s(X), p(X).\n");
    }

    #[test]
    fn disjunction_in_consequent() {
        assert_eq!(
            compile("forall X (p(X) -> (q(X) | r(X)))."),
            "ic1 :- not _aux1.\n_aux1 :- p(X), not q(X), not r(X).\n"
        );
    }

    #[test]
    fn nested_existential_gets_negated_fresh_atom() {
        assert_eq!(
            compile("forall X:emp exists Y:dept works(X,Y)."),
            "ic1 :- not _aux1.\n_aux1 :- emp(X), not _aux2(X).\n_aux2(X) :- dept(Y), works(X,Y).\n"
        );
    }

    #[test]
    fn aux_counter_is_shared_across_constraints() {
        let out = compile("forall X:a b(X).\nforall X:c d(X).");
        assert!(out.contains("ic2 :- not _aux2."), "{out}");
    }

    #[test]
    fn relativize_examples() {
        let f = &parse_constraints("forall E:employee access(E,menu).").unwrap()[0];
        assert_eq!(relativize(f).to_string(), "forall E (employee(E) -> access(E,menu))");
        let g = &parse_constraints("forall X p(X).").unwrap()[0];
        assert_eq!(&relativize(g), g);
        let h = &parse_constraints("exists X:s p(X).").unwrap()[0];
        assert_eq!(relativize(h).to_string(), "exists X (s(X) & p(X))");
    }

    #[test]
    fn parse_shapes() {
        let f = &parse_constraints("forall E:employee access(E,menu).").unwrap()[0];
        assert!(matches!(f, F::Forall(x, Some(s), _) if x == "E" && s == "employee"));
        assert_eq!(parse_constraints("p(a).").unwrap()[0], F::Atom(Atom::new("p", vec![Term::constant("a")])));
        let f = &parse_constraints("forall X (p(X) -> exists Y q(X,Y)).").unwrap()[0];
        let again = &parse_constraints(&format!("{f}.")).unwrap()[0];
        assert_eq!(f, again);
    }

    #[test]
    fn precedence_and_rectification() {
        let f = &parse_constraints("forall X. p(X) & not q(X) | r(X) -> s(X).").unwrap()[0];
        assert_eq!(f.to_string(), "forall X (((p(X) & not q(X)) | r(X)) -> s(X))");
        let g = &parse_constraints("(forall X p(X)) & (exists X q(X)).").unwrap()[0];
        assert_eq!(g.to_string(), "((forall X (p(X))) & (exists X_1 (q(X_1))))");
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_constraints("p(X)."), Err(Error::Syntax { .. })));
        assert!(matches!(parse_constraints("forall X p(X"), Err(Error::Syntax { .. })));
        let db = crate::program::parse_database("_aux1(a).").unwrap();
        let fs = parse_constraints("forall X:a b(X).").unwrap();
        assert!(compile_constraints(&fs, Some(&db)).is_err());
        let db = crate::program::parse_database("b(a,c).").unwrap();
        assert!(compile_constraints(&fs, Some(&db)).is_err());
    }

    #[test]
    fn translation_is_deterministic() {
        let text = "forall X:p ((q(X) <-> r(X)) | exists Y:s t(X,Y)).";
        assert_eq!(compile(text), compile(text));
    }
}
