//! Independent reference semantics: the stratified model of a function-free
//! database computed by naive bottom-up iteration, conjunctive query
//! evaluation against that model, and brute-force evaluation of first-order
//! constraints over the active domain.

use std::collections::{BTreeMap, BTreeSet};

use crate::compiler::Formula;
use crate::error::{Error, Result};
use crate::logic::{conj_vars, Atom, Literal, PredKey, Substitution, Term};
use crate::program::Database;

/// The set of ground atoms true in the stratified model.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Model {
    facts: BTreeMap<PredKey, BTreeSet<Vec<Term>>>,
}

impl Model {
    pub fn holds(&self, a: &Atom) -> bool {
        self.facts.get(&a.key()).is_some_and(|s| s.contains(&a.args))
    }

    pub fn extension(&self, key: &PredKey) -> impl Iterator<Item = &Vec<Term>> {
        self.facts.get(key).into_iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.facts.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn insert(&mut self, a: Atom) -> bool {
        self.facts.entry(a.key()).or_default().insert(a.args)
    }

    /// All ground atoms, sorted.
    pub fn atoms(&self) -> Vec<Atom> {
        self.facts
            .iter()
            .flat_map(|(k, s)| s.iter().map(move |args| Atom { pred: k.name.clone(), args: args.clone() }))
            .collect()
    }
}

/// Assigns each predicate its stratum: at least the stratum of positive
/// dependencies, strictly above negative ones.
pub fn strata(db: &Database) -> Result<BTreeMap<PredKey, usize>> {
    let preds = db.predicates();
    let mut level: BTreeMap<PredKey, usize> = preds.iter().map(|p| (p.clone(), 0)).collect();
    let limit = preds.len() + 1;
    loop {
        let mut changed = false;
        for c in db.clauses() {
            let h = c.head.key();
            for l in c.body.iter().filter(|l| !l.atom.is_builtin()) {
                let need = level[&l.atom.key()] + usize::from(!l.positive);
                if level[&h] < need {
                    level.insert(h.clone(), need);
                    changed = true;
                    if need > limit {
                        return Err(Error::Legality(format!("{h} is not stratified")));
                    }
                }
            }
        }
        if !changed {
            return Ok(level);
        }
    }
}

/// Computes the stratified model stratum by stratum, each by naive
/// iteration to a fixpoint.
pub fn stratified_model(db: &Database) -> Result<Model> {
    let level = strata(db)?;
    let top = level.values().copied().max().unwrap_or(0);
    let mut model = Model::default();
    for s in 0..=top {
        let rules: Vec<_> = db.clauses().iter().filter(|c| level[&c.head.key()] == s).collect();
        loop {
            let mut fresh = Vec::new();
            for c in &rules {
                for theta in solve(&model, &c.body, &Substitution::empty())? {
                    let head = theta.apply_atom(&c.head);
                    if !head.is_ground() {
                        return Err(Error::Legality(format!("clause {c} derives the non-ground {head}")));
                    }
                    if !model.holds(&head) {
                        fresh.push(head);
                    }
                }
            }
            let mut changed = false;
            for a in fresh {
                changed |= model.insert(a);
            }
            if !changed {
                break;
            }
        }
    }
    Ok(model)
}

fn compare(a: &Term, b: &Term) -> std::cmp::Ordering {
    match (a, b) {
        (Term::Int(x), Term::Int(y)) => x.cmp(y),
        (Term::Int(_), _) => std::cmp::Ordering::Less,
        (_, Term::Int(_)) => std::cmp::Ordering::Greater,
        _ => a.cmp(b),
    }
}

fn ready(l: &Literal) -> bool {
    if l.atom.is_builtin() {
        if l.positive && l.atom.pred == "=" {
            return l.atom.args.iter().any(Term::is_ground);
        }
        return l.atom.is_ground();
    }
    l.positive || l.atom.is_ground()
}

/// All substitutions θ extending `theta` with `body·θ` true in `model`,
/// processing literals in whatever order keeps them evaluable.
pub fn solve(model: &Model, body: &[Literal], theta: &Substitution) -> Result<Vec<Substitution>> {
    let lits = theta.apply_conj(body);
    let Some(i) = lits.iter().position(ready) else {
        if lits.is_empty() {
            return Ok(vec![theta.clone()]);
        }
        return Err(Error::Flounder(format!("cannot evaluate {}", crate::logic::fmt_conj(&lits))));
    };
    let l = &lits[i];
    let mut rest = lits.clone();
    rest.remove(i);
    let mut out = Vec::new();
    let extend = |s: Substitution, out: &mut Vec<Substitution>| -> Result<()> {
        let next = theta.compose(&s);
        out.extend(solve(model, &rest, &next)?);
        Ok(())
    };
    if l.atom.is_builtin() {
        let (a, b) = (&l.atom.args[0], &l.atom.args[1]);
        match l.atom.pred.as_str() {
            "=" if l.positive => {
                if let Some(s) = crate::logic::unify_lists(std::slice::from_ref(a), std::slice::from_ref(b)) {
                    extend(s, &mut out)?;
                }
            }
            p => {
                let truth = match p {
                    "=" => a == b,
                    "\\=" => a != b,
                    "<" => compare(a, b).is_lt(),
                    _ => compare(a, b).is_le(),
                };
                if truth == l.positive {
                    extend(Substitution::empty(), &mut out)?;
                }
            }
        }
    } else if l.positive {
        let rows: Vec<Vec<Term>> = model.extension(&l.atom.key()).cloned().collect();
        for row in rows {
            if let Some(s) = crate::logic::unify_lists(&l.atom.args, &row) {
                extend(s, &mut out)?;
            }
        }
    } else if !model.holds(&l.atom) {
        extend(Substitution::empty(), &mut out)?;
    }
    Ok(out)
}

/// Answers to `← goal·tau` in the model, restricted to the goal variables.
pub fn query(model: &Model, goal: &[Literal], tau: &Substitution) -> Result<BTreeSet<Substitution>> {
    let vars: BTreeSet<String> = conj_vars(goal).into_iter().collect();
    let g = tau.apply_conj(goal);
    Ok(solve(model, &g, &Substitution::empty())?.into_iter().map(|s| s.restrict(&vars)).collect())
}

/// Constants of the model together with those of `extra`.
pub fn active_domain(model: &Model, extra: &[Term]) -> BTreeSet<Term> {
    let mut d: BTreeSet<Term> = model.atoms().into_iter().flat_map(|a| a.args).collect();
    d.extend(extra.iter().cloned());
    d
}

fn formula_constants(f: &Formula, out: &mut Vec<Term>) {
    match f {
        Formula::Atom(a) => out.extend(a.args.iter().filter(|t| t.is_ground()).cloned()),
        Formula::Not(g) => formula_constants(g, out),
        Formula::And(a, b)
        | Formula::Or(a, b)
        | Formula::Implies(a, b)
        | Formula::ImpliedBy(a, b)
        | Formula::Iff(a, b) => {
            formula_constants(a, out);
            formula_constants(b, out);
        }
        Formula::Forall(_, _, g) | Formula::Exists(_, _, g) => formula_constants(g, out),
    }
}

/// Truth of a closed formula in the model, quantifiers ranging over the
/// active domain (restricted to the sort predicate when one is given).
pub fn eval_formula(model: &Model, f: &Formula) -> Result<bool> {
    let mut consts = Vec::new();
    formula_constants(f, &mut consts);
    let domain: Vec<Term> = active_domain(model, &consts).into_iter().collect();
    eval(model, f, &Substitution::empty(), &domain)
}

fn eval(model: &Model, f: &Formula, env: &Substitution, domain: &[Term]) -> Result<bool> {
    Ok(match f {
        Formula::Atom(a) => {
            let a = env.apply_atom(a);
            if !a.is_ground() {
                return Err(Error::Compile(format!("free variable in {a}")));
            }
            if a.is_builtin() {
                !solve(model, &[Literal::pos(a)], &Substitution::empty())?.is_empty()
            } else {
                model.holds(&a)
            }
        }
        Formula::Not(g) => !eval(model, g, env, domain)?,
        Formula::And(a, b) => eval(model, a, env, domain)? && eval(model, b, env, domain)?,
        Formula::Or(a, b) => eval(model, a, env, domain)? || eval(model, b, env, domain)?,
        Formula::Implies(a, b) => !eval(model, a, env, domain)? || eval(model, b, env, domain)?,
        Formula::ImpliedBy(a, b) => eval(model, a, env, domain)? || !eval(model, b, env, domain)?,
        Formula::Iff(a, b) => eval(model, a, env, domain)? == eval(model, b, env, domain)?,
        Formula::Forall(x, sort, g) => {
            for c in domain {
                let mut e = env.clone();
                e.insert(x, c.clone());
                if in_sort(model, sort, c) && !eval(model, g, &e, domain)? {
                    return Ok(false);
                }
            }
            true
        }
        Formula::Exists(x, sort, g) => {
            for c in domain {
                let mut e = env.clone();
                e.insert(x, c.clone());
                if in_sort(model, sort, c) && eval(model, g, &e, domain)? {
                    return Ok(true);
                }
            }
            false
        }
    })
}

fn in_sort(model: &Model, sort: &Option<String>, c: &Term) -> bool {
    match sort {
        Some(s) => model.holds(&Atom::new(s, vec![c.clone()])),
        None => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::parse_constraints;
    use crate::program::parse_database;

    #[test]
    fn stratified_negation() {
        let db = parse_database("p(X) :- q(X), not r(X). r(X) :- s(X). q(a). q(b). s(b).").unwrap();
        let m = stratified_model(&db).unwrap();
        assert!(m.holds(&Atom::new("p", vec![Term::constant("a")])));
        assert!(!m.holds(&Atom::new("p", vec![Term::constant("b")])));
        assert_eq!(m.len(), 5);
    }

    #[test]
    fn recursion_reaches_fixpoint() {
        let db = parse_database("tc(X,Y) :- e(X,Y). tc(X,Z) :- e(X,Y), tc(Y,Z). e(a,b). e(b,c). e(c,a).").unwrap();
        let m = stratified_model(&db).unwrap();
        assert_eq!(m.extension(&PredKey { name: "tc".into(), arity: 2 }).count(), 9);
    }

    #[test]
    fn unstratified_is_rejected() {
        let db = parse_database("p(X) :- d(X), not q(X). q(X) :- d(X), not p(X). d(a).").unwrap();
        assert!(stratified_model(&db).is_err());
    }

    #[test]
    fn formulas_over_active_domain() {
        let db = parse_database("employee(hans). employee(peter). access(hans,menu).").unwrap();
        let m = stratified_model(&db).unwrap();
        let fs = parse_constraints("forall E:employee access(E,menu). exists E access(E,menu).").unwrap();
        assert!(!eval_formula(&m, &fs[0]).unwrap());
        assert!(eval_formula(&m, &fs[1]).unwrap());
    }
}
