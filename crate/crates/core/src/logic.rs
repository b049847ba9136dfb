//! Terms, atoms, literals, substitutions and the substitution-set algebra.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// A first-order term. The database language only uses variables and
/// constants, but unification and substitution handle compound terms too.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Term {
    Var(String),
    Const(String),
    Int(i64),
    Compound(String, Vec<Term>),
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(name.to_string())
    }

    pub fn constant(name: &str) -> Term {
        Term::Const(name.to_string())
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::Const(_) | Term::Int(_) => true,
            Term::Compound(_, args) => args.iter().all(Term::is_ground),
        }
    }

    pub fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Term::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Term::Const(_) | Term::Int(_) => {}
            Term::Compound(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    fn occurs(&self, var: &str) -> bool {
        match self {
            Term::Var(v) => v == var,
            Term::Const(_) | Term::Int(_) => false,
            Term::Compound(_, args) => args.iter().any(|a| a.occurs(var)),
        }
    }

    /// Renames variables through `f`, leaving the structure untouched.
    pub fn map_vars(&self, f: &impl Fn(&str) -> String) -> Term {
        match self {
            Term::Var(v) => Term::Var(f(v)),
            Term::Const(_) | Term::Int(_) => self.clone(),
            Term::Compound(g, args) => Term::Compound(g.clone(), args.iter().map(|a| a.map_vars(f)).collect()),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) | Term::Const(v) => write!(f, "{v}"),
            Term::Int(i) => write!(f, "{i}"),
            Term::Compound(g, args) => {
                write!(f, "{g}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Comparison predicates evaluated by the engine instead of by resolution.
pub const BUILTINS: [&str; 4] = ["=", "\\=", "<", "<="];

pub fn is_builtin(pred: &str) -> bool {
    BUILTINS.contains(&pred)
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Atom {
    pub pred: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(pred: &str, args: Vec<Term>) -> Atom {
        Atom { pred: pred.to_string(), args }
    }

    pub fn prop(pred: &str) -> Atom {
        Atom::new(pred, Vec::new())
    }

    /// Predicate name and arity, the key used for EDB/IDB bookkeeping.
    pub fn key(&self) -> PredKey {
        PredKey { name: self.pred.clone(), arity: self.args.len() }
    }

    pub fn is_builtin(&self) -> bool {
        self.args.len() == 2 && is_builtin(&self.pred)
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(Term::is_ground)
    }

    pub fn vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.args.iter().for_each(|a| a.collect_vars(&mut out));
        out
    }

    pub fn map_vars(&self, f: &impl Fn(&str) -> String) -> Atom {
        Atom { pred: self.pred.clone(), args: self.args.iter().map(|a| a.map_vars(f)).collect() }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_builtin() {
            return write!(f, "{} {} {}", self.args[0], self.pred, self.args[1]);
        }
        write!(f, "{}", self.pred)?;
        if !self.args.is_empty() {
            write!(f, "(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{a}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct PredKey {
    pub name: String,
    pub arity: usize,
}

impl fmt::Display for PredKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arity)
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Literal {
    pub atom: Atom,
    pub positive: bool,
}

impl Literal {
    pub fn pos(atom: Atom) -> Literal {
        Literal { atom, positive: true }
    }

    pub fn neg(atom: Atom) -> Literal {
        Literal { atom, positive: false }
    }

    pub fn vars(&self) -> Vec<String> {
        self.atom.vars()
    }

    pub fn map_vars(&self, f: &impl Fn(&str) -> String) -> Literal {
        Literal { atom: self.atom.map_vars(f), positive: self.positive }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.positive {
            write!(f, "{}", self.atom)
        } else {
            write!(f, "not {}", self.atom)
        }
    }
}

/// Variables of a conjunction in first-occurrence order.
pub fn conj_vars(lits: &[Literal]) -> Vec<String> {
    let mut out = Vec::new();
    for l in lits {
        l.atom.args.iter().for_each(|a| a.collect_vars(&mut out));
    }
    out
}

pub fn fmt_conj(lits: &[Literal]) -> String {
    if lits.is_empty() {
        return "□".to_string();
    }
    lits.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", ")
}

/// A finite substitution kept in normal form: no binding `x/x`.
#[derive(Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Substitution(BTreeMap<String, Term>);

impl Substitution {
    pub fn empty() -> Substitution {
        Substitution(BTreeMap::new())
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, Term)>) -> Substitution {
        let mut s = Substitution::empty();
        for (v, t) in pairs {
            s.insert(v, t);
        }
        s
    }

    /// Inserts a binding, dropping it if it is the identity.
    pub fn insert(&mut self, var: &str, term: Term) {
        if term == Term::Var(var.to_string()) {
            self.0.remove(var);
        } else {
            self.0.insert(var.to_string(), term);
        }
    }

    pub fn get(&self, var: &str) -> Option<&Term> {
        self.0.get(var)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Term)> {
        self.0.iter()
    }

    pub fn dom(&self) -> BTreeSet<String> {
        self.0.keys().cloned().collect()
    }

    pub fn range_vars(&self) -> BTreeSet<String> {
        let mut out = Vec::new();
        self.0.values().for_each(|t| t.collect_vars(&mut out));
        out.into_iter().collect()
    }

    pub fn is_ground(&self) -> bool {
        self.0.values().all(Term::is_ground)
    }

    pub fn is_idempotent(&self) -> bool {
        let dom = self.dom();
        self.range_vars().is_disjoint(&dom)
    }

    pub fn apply_term(&self, t: &Term) -> Term {
        match t {
            Term::Var(v) => self.0.get(v).cloned().unwrap_or_else(|| t.clone()),
            Term::Const(_) | Term::Int(_) => t.clone(),
            Term::Compound(g, args) => Term::Compound(g.clone(), args.iter().map(|a| self.apply_term(a)).collect()),
        }
    }

    pub fn apply_atom(&self, a: &Atom) -> Atom {
        Atom { pred: a.pred.clone(), args: a.args.iter().map(|t| self.apply_term(t)).collect() }
    }

    pub fn apply_literal(&self, l: &Literal) -> Literal {
        Literal { atom: self.apply_atom(&l.atom), positive: l.positive }
    }

    pub fn apply_conj(&self, lits: &[Literal]) -> Vec<Literal> {
        lits.iter().map(|l| self.apply_literal(l)).collect()
    }

    /// Composition `σθ`: for every variable `x`, `x(σθ) = (xσ)θ`.
    pub fn compose(&self, theta: &Substitution) -> Substitution {
        let mut out = Substitution::empty();
        for (x, t) in &self.0 {
            out.insert(x, theta.apply_term(t));
        }
        for (y, t) in &theta.0 {
            if !self.0.contains_key(y) {
                out.insert(y, t.clone());
            }
        }
        out
    }

    pub fn restrict(&self, vars: &BTreeSet<String>) -> Substitution {
        Substitution(self.0.iter().filter(|(k, _)| vars.contains(*k)).map(|(k, v)| (k.clone(), v.clone())).collect())
    }

    /// Renames variables in keys and values through `f`.
    pub fn map_vars(&self, f: &impl Fn(&str) -> String) -> Substitution {
        let mut out = Substitution::empty();
        for (k, v) in &self.0 {
            out.insert(&f(k), v.map_vars(f));
        }
        out
    }

    /// `self ≥ other`: some θ with `self∘θ = other`.
    pub fn more_general(&self, other: &Substitution) -> bool {
        let mut vars: BTreeSet<String> = self.dom();
        vars.extend(other.dom());
        vars.extend(self.range_vars());
        vars.extend(other.range_vars());
        let mut theta = Substitution::empty();
        for v in &vars {
            let pattern = self.apply_term(&Term::Var(v.clone()));
            let target = other.apply_term(&Term::Var(v.clone()));
            if !match_term(&pattern, &target, &mut theta) {
                return false;
            }
        }
        true
    }

    /// Whether the two substitutions have a common instance.
    pub fn unifiable_with(&self, other: &Substitution) -> bool {
        let mut vars: BTreeSet<String> = self.dom();
        vars.extend(other.dom());
        vars.extend(self.range_vars());
        vars.extend(other.range_vars());
        // The instantiating substitutions are independent, so the right-hand
        // side is renamed apart before solving the equations jointly.
        let prime = |v: &str| format!("{v}'");
        let mut lhs = Vec::new();
        let mut rhs = Vec::new();
        for v in &vars {
            lhs.push(self.apply_term(&Term::Var(v.clone())));
            rhs.push(other.apply_term(&Term::Var(v.clone())).map_vars(&prime));
        }
        unify_lists(&lhs, &rhs).is_some()
    }
}

impl fmt::Display for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "ε");
        }
        write!(f, "{{")?;
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k}/{v}")?;
        }
        write!(f, "}}")
    }
}

/// One-sided matching: extends `theta` so that `pattern·theta = target`.
fn match_term(pattern: &Term, target: &Term, theta: &mut Substitution) -> bool {
    match (pattern, target) {
        (Term::Var(v), _) => match theta.0.get(v) {
            Some(bound) => bound == target,
            None => {
                theta.0.insert(v.clone(), target.clone());
                true
            }
        },
        (Term::Compound(g, xs), Term::Compound(h, ys)) => {
            g == h && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| match_term(x, y, theta))
        }
        _ => pattern == target,
    }
}

/// Unifies two equal-length term lists, preferring variables of the left
/// list as binding keys.
pub fn unify_lists(left: &[Term], right: &[Term]) -> Option<Substitution> {
    if left.len() != right.len() {
        return None;
    }
    let mut s = Substitution::empty();
    let mut work: Vec<(Term, Term)> = left.iter().cloned().zip(right.iter().cloned()).rev().collect();
    while let Some((a, b)) = work.pop() {
        let a = s.apply_term(&a);
        let b = s.apply_term(&b);
        if a == b {
            continue;
        }
        match (&a, &b) {
            (Term::Var(x), _) => {
                if b.occurs(x) {
                    return None;
                }
                s = s.compose(&Substitution::from_pairs([(x.as_str(), b.clone())]));
            }
            (_, Term::Var(y)) => {
                if a.occurs(y) {
                    return None;
                }
                s = s.compose(&Substitution::from_pairs([(y.as_str(), a.clone())]));
            }
            (Term::Compound(g, xs), Term::Compound(h, ys)) => {
                if g != h || xs.len() != ys.len() {
                    return None;
                }
                for (x, y) in xs.iter().zip(ys).rev() {
                    work.push((x.clone(), y.clone()));
                }
            }
            _ => return None,
        }
    }
    Some(s)
}

/// Most general unifier of two atoms; variables of `a` become keys when two
/// variables meet.
pub fn mgu(a: &Atom, b: &Atom) -> Option<Substitution> {
    if a.pred != b.pred || a.args.len() != b.args.len() {
        return None;
    }
    unify_lists(&a.args, &b.args)
}

/// A set of substitutions in canonical (sorted) order.
pub type SubstitutionSet = BTreeSet<Substitution>;

/// An ordered tuple of substitutions; positions carry meaning.
pub type SubstitutionTuple = Vec<Substitution>;

/// `S ≥ S'`: every member of `S'` has a more general member in `S`.
pub fn set_more_general(s: &SubstitutionSet, s2: &SubstitutionSet) -> bool {
    s2.iter().all(|b| s.iter().any(|a| a.more_general(b)))
}

/// `S − S'`: members of `S` that are not more general than any member of `S'`.
pub fn set_difference(s: &SubstitutionSet, s2: &SubstitutionSet) -> SubstitutionSet {
    s.iter().filter(|a| !s2.iter().any(|b| a.more_general(b))).cloned().collect()
}

pub fn restrict_set(s: &SubstitutionSet, vars: &BTreeSet<String>) -> SubstitutionSet {
    s.iter().map(|x| x.restrict(vars)).collect()
}

pub fn restrict_tuple(u: &[Substitution], vars: &BTreeSet<String>) -> SubstitutionTuple {
    u.iter().map(|x| x.restrict(vars)).collect()
}

pub fn tuple_more_general(u: &[Substitution], u2: &[Substitution]) -> bool {
    u.len() == u2.len() && u.iter().zip(u2).all(|(a, b)| a.more_general(b))
}

pub fn set_dom(s: &SubstitutionSet) -> BTreeSet<String> {
    s.iter().flat_map(|x| x.dom()).collect()
}

pub fn tuple_dom(u: &[Substitution]) -> BTreeSet<String> {
    u.iter().flat_map(|x| x.dom()).collect()
}

pub fn fmt_set(s: &SubstitutionSet) -> String {
    format!("{{{}}}", s.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "))
}

pub fn fmt_tuple(u: &[Substitution]) -> String {
    format!("⟨{}⟩", u.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> Term {
        Term::constant(s)
    }
    fn v(s: &str) -> Term {
        Term::var(s)
    }
    fn sub(pairs: &[(&str, Term)]) -> Substitution {
        Substitution::from_pairs(pairs.iter().map(|(k, t)| (*k, t.clone())))
    }

    #[test]
    fn mgu_examples() {
        let a = Atom::new("p", vec![v("x"), c("a")]);
        let b = Atom::new("p", vec![c("a"), c("a")]);
        assert_eq!(mgu(&a, &b), Some(sub(&[("x", c("a"))])));
        let px = Atom::new("p", vec![v("x")]);
        assert_eq!(mgu(&px, &px), Some(Substitution::empty()));
        let b2 = Atom::new("p", vec![c("b"), v("y")]);
        assert_eq!(mgu(&a, &b2), Some(sub(&[("x", c("b")), ("y", c("a"))])));
    }

    #[test]
    fn mgu_orientation_prefers_first_argument() {
        let a = Atom::new("p", vec![v("X")]);
        let b = Atom::new("p", vec![v("Y")]);
        assert_eq!(mgu(&a, &b), Some(sub(&[("X", v("Y"))])));
        assert_eq!(mgu(&b, &a), Some(sub(&[("Y", v("X"))])));
    }

    #[test]
    fn mgu_occurs_check_and_clash() {
        let a = Atom::new("p", vec![v("X")]);
        let b = Atom::new("p", vec![Term::Compound("f".into(), vec![v("X")])]);
        assert_eq!(mgu(&a, &b), None);
        assert_eq!(mgu(&Atom::new("p", vec![c("a")]), &Atom::new("p", vec![c("b")])), None);
        assert_eq!(mgu(&Atom::new("p", vec![c("a")]), &Atom::new("q", vec![c("a")])), None);
    }

    #[test]
    fn compose_examples() {
        assert_eq!(sub(&[("x", c("a"))]).compose(&sub(&[("y", c("b"))])), sub(&[("x", c("a")), ("y", c("b"))]));
        let s = sub(&[("x", c("a"))]);
        assert_eq!(Substitution::empty().compose(&s), s);
        assert_eq!(sub(&[("x", v("y"))]).compose(&sub(&[("y", c("c"))])), sub(&[("x", c("c")), ("y", c("c"))]));
    }

    #[test]
    fn restrict_examples() {
        let s = sub(&[("x", c("a")), ("y", c("b"))]);
        assert_eq!(s.restrict(&["x".to_string()].into()), sub(&[("x", c("a"))]));
        assert_eq!(sub(&[("x", c("a"))]).restrict(&BTreeSet::new()), Substitution::empty());
        let s = sub(&[("E", c("peter")), ("E2", c("hans"))]);
        assert_eq!(s.restrict(&["E".to_string()].into()), sub(&[("E", c("peter"))]));
    }

    #[test]
    fn more_general_examples() {
        let a = sub(&[("x", c("a"))]);
        let ab = sub(&[("x", c("a")), ("y", c("b"))]);
        assert!(a.more_general(&ab));
        assert!(ab.more_general(&ab));
        assert!(!a.more_general(&sub(&[("x", c("b"))])));
        assert!(!ab.more_general(&a));
        assert!(sub(&[("x", v("y"))]).more_general(&sub(&[("x", c("a")), ("y", c("a"))])));
        assert!(!sub(&[("x", v("y"))]).more_general(&sub(&[("x", c("a"))])));
    }

    #[test]
    fn set_difference_examples() {
        let e = |x: &str| sub(&[("x", c(x)), ("y", c("b")), ("z", c("c"))]);
        let s: SubstitutionSet = [e("e"), e("f"), e("a")].into();
        let d: SubstitutionSet = [e("a")].into();
        assert_eq!(set_difference(&s, &d), [e("e"), e("f")].into());
        assert_eq!(set_difference(&s, &SubstitutionSet::new()), s);
        // A member is dropped when it is more general than some member of the
        // subtrahend; a strictly more specific member survives.
        let a: SubstitutionSet = [sub(&[("x", c("a"))])].into();
        let ab: SubstitutionSet = [sub(&[("x", c("a")), ("y", c("b"))])].into();
        assert_eq!(set_difference(&a, &ab), SubstitutionSet::new());
        assert_eq!(set_difference(&ab, &a), ab);
    }

    #[test]
    fn unifiable_examples() {
        let a = sub(&[("x", c("a"))]);
        assert!(a.unifiable_with(&sub(&[("x", c("a")), ("y", c("b"))])));
        assert!(!sub(&[("E", c("hans"))]).unifiable_with(&sub(&[("E", c("peter"))])));
        assert!(Substitution::empty().unifiable_with(&a));
        assert!(sub(&[("x", c("a"))]).unifiable_with(&sub(&[("y", c("b"))])));
    }

    #[test]
    fn display_forms() {
        assert_eq!(sub(&[("E", c("peter")), ("E2", c("hans"))]).to_string(), "{E/peter, E2/hans}");
        assert_eq!(Substitution::empty().to_string(), "ε");
        let l = Literal::neg(Atom::new("access", vec![v("E"), c("menu")]));
        assert_eq!(l.to_string(), "not access(E,menu)");
        assert_eq!(Atom::new("<=", vec![v("C1"), v("C2")]).to_string(), "C1 <= C2");
    }
}
