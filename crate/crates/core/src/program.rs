//! Normal programs, deductive databases, dependency analysis, legality checks
//! and database updates.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logic::{conj_vars, Atom, Literal, PredKey, Term};
use crate::syntax::{Parser, Tok};

pub type ClauseId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Origin {
    Base,
    Constraint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub id: ClauseId,
    pub head: Atom,
    pub body: Vec<Literal>,
    pub origin: Origin,
}

impl Clause {
    pub fn new(head: Atom, body: Vec<Literal>) -> Clause {
        Clause { id: 0, head, body, origin: Origin::Base }
    }

    pub fn is_fact(&self) -> bool {
        self.body.is_empty()
    }

    pub fn vars(&self) -> Vec<String> {
        let mut out = self.head.vars();
        for v in conj_vars(&self.body) {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }

    /// Head and body with variables numbered by first occurrence, so that
    /// clauses differing only in variable names compare equal.
    pub fn normalized(&self) -> (Atom, Vec<Literal>) {
        let vars = self.vars();
        let rename = |v: &str| format!("_{}", vars.iter().position(|w| w == v).unwrap_or(usize::MAX));
        (self.head.map_vars(&rename), self.body.iter().map(|l| l.map_vars(&rename)).collect())
    }

    pub fn same_clause(&self, other: &Clause) -> bool {
        self.normalized() == other.normalized()
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        if !self.body.is_empty() {
            write!(f, " :- ")?;
            for (i, l) in self.body.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{l}")?;
            }
        }
        write!(f, ".")
    }
}

/// Variables of the form `V_<n>_<n>` are produced by the engine when it
/// renames clauses apart, so user input may not contain them.
pub fn is_reserved_var(v: &str) -> bool {
    let parts: Vec<&str> = v.split('_').collect();
    parts.len() == 3
        && parts[0] == "V"
        && parts[1..].iter().all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_digit()))
}

/// Rewrites a rule so that every head argument is a distinct variable,
/// moving constants and repeated variables into leading `=` literals.
pub fn normalize_head(head: Atom, body: Vec<Literal>) -> (Atom, Vec<Literal>) {
    if body.is_empty() {
        return (head, body);
    }
    let mut used: BTreeSet<String> = head.vars().into_iter().collect();
    used.extend(conj_vars(&body));
    let mut seen = BTreeSet::new();
    let mut eqs = Vec::new();
    let mut late = Vec::new();
    let mut args = Vec::new();
    let mut counter = 0;
    for t in head.args {
        let fresh_needed = match &t {
            Term::Var(v) => !seen.insert(v.clone()),
            _ => true,
        };
        if fresh_needed {
            let name = loop {
                counter += 1;
                let n = format!("_H{counter}");
                if !used.contains(&n) {
                    break n;
                }
            };
            used.insert(name.clone());
            // A repeated variable is only bound once the body has run.
            let target = if t.is_ground() { &mut eqs } else { &mut late };
            target.push(Literal::pos(Atom::new("=", vec![Term::Var(name.clone()), t])));
            args.push(Term::Var(name));
        } else {
            args.push(t);
        }
    }
    eqs.extend(body);
    eqs.extend(late);
    (Atom { pred: head.pred, args }, eqs)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct DatabaseRepr {
    clauses: Vec<Clause>,
    next_id: ClauseId,
    permissive: bool,
}

/// A deductive database: clauses in textual order plus the derived
/// EDB/IDB partition and a per-predicate index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DatabaseRepr", into = "DatabaseRepr")]
pub struct Database {
    clauses: Vec<Clause>,
    next_id: ClauseId,
    permissive: bool,
    edb: BTreeSet<PredKey>,
    idb: BTreeSet<PredKey>,
    index: BTreeMap<PredKey, Vec<usize>>,
}

impl TryFrom<DatabaseRepr> for Database {
    type Error = Error;
    fn try_from(r: DatabaseRepr) -> Result<Database> {
        let mut db = Database {
            clauses: r.clauses,
            next_id: r.next_id,
            permissive: r.permissive,
            edb: BTreeSet::new(),
            idb: BTreeSet::new(),
            index: BTreeMap::new(),
        };
        db.rebuild()?;
        Ok(db)
    }
}

impl From<Database> for DatabaseRepr {
    fn from(db: Database) -> DatabaseRepr {
        DatabaseRepr { clauses: db.clauses, next_id: db.next_id, permissive: db.permissive }
    }
}

impl Default for Database {
    fn default() -> Database {
        Database::new()
    }
}

impl Database {
    pub fn new() -> Database {
        Database {
            clauses: Vec::new(),
            next_id: 0,
            permissive: false,
            edb: BTreeSet::new(),
            idb: BTreeSet::new(),
            index: BTreeMap::new(),
        }
    }

    /// Builds a database from clauses in order, assigning fresh ids and
    /// rejecting predicates defined by both facts and rules.
    pub fn from_clauses(clauses: Vec<Clause>) -> Result<Database> {
        let mut db = Database::new();
        for c in clauses {
            db.push(c);
        }
        db.rebuild()?;
        Ok(db)
    }

    /// Like `from_clauses` but allows a predicate to have both facts and
    /// rules. Such databases are only meant for exercising the engine.
    pub fn permissive(clauses: Vec<Clause>) -> Database {
        let mut db = Database::new();
        db.permissive = true;
        for c in clauses {
            db.push(c);
        }
        db.rebuild().expect("permissive rebuild cannot fail");
        db
    }

    fn push(&mut self, mut c: Clause) -> ClauseId {
        let (head, body) = normalize_head(c.head, c.body);
        c.head = head;
        c.body = body;
        c.id = self.next_id;
        self.next_id += 1;
        let id = c.id;
        self.clauses.push(c);
        id
    }

    fn rebuild(&mut self) -> Result<()> {
        self.edb.clear();
        self.idb.clear();
        self.index.clear();
        for (i, c) in self.clauses.iter().enumerate() {
            let key = c.head.key();
            self.index.entry(key.clone()).or_default().push(i);
            if c.is_fact() {
                self.edb.insert(key);
            } else {
                self.idb.insert(key);
            }
        }
        let clash: Vec<_> = self.edb.intersection(&self.idb).cloned().collect();
        if !clash.is_empty() && !self.permissive {
            let names: Vec<String> = clash.iter().map(|k| k.to_string()).collect();
            return Err(Error::Legality(format!("predicate(s) {} defined by both facts and rules", names.join(", "))));
        }
        for k in &clash {
            self.edb.remove(k);
        }
        Ok(())
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn clause(&self, id: ClauseId) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.id == id)
    }

    /// Clauses whose head predicate is `key`, in database order.
    pub fn definition(&self, key: &PredKey) -> impl Iterator<Item = &Clause> {
        self.index.get(key).into_iter().flatten().map(move |&i| &self.clauses[i])
    }

    pub fn edb(&self) -> &BTreeSet<PredKey> {
        &self.edb
    }

    pub fn idb(&self) -> &BTreeSet<PredKey> {
        &self.idb
    }

    pub fn is_idb(&self, key: &PredKey) -> bool {
        self.idb.contains(key)
    }

    /// EDB membership; predicates that are used but never defined count as
    /// extensional with an empty extension.
    pub fn is_edb(&self, key: &PredKey) -> bool {
        !self.idb.contains(key)
    }

    /// All predicate keys occurring anywhere, builtins excluded.
    pub fn predicates(&self) -> BTreeSet<PredKey> {
        let mut out = BTreeSet::new();
        for c in &self.clauses {
            out.insert(c.head.key());
            for l in &c.body {
                if !l.atom.is_builtin() {
                    out.insert(l.atom.key());
                }
            }
        }
        out
    }

    pub fn contains_fact(&self, a: &Atom) -> bool {
        self.definition(&a.key()).any(|c| c.is_fact() && &c.head == a)
    }

    /// Appends compiled constraint clauses.
    pub fn with_constraint_clauses(&self, clauses: &[Clause]) -> Result<Database> {
        let mut db = self.clone();
        for c in clauses {
            let mut c = c.clone();
            c.origin = Origin::Constraint;
            db.push(c);
        }
        db.rebuild()?;
        Ok(db)
    }

    /// Clauses of base origin only, in order.
    pub fn base_clauses(&self) -> impl Iterator<Item = &Clause> {
        self.clauses.iter().filter(|c| c.origin == Origin::Base)
    }
}

impl fmt::Display for Database {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.base_clauses() {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

fn check_user_vars(c: &Clause, p: &Parser) -> Result<()> {
    if let Some(v) = c.vars().into_iter().find(|v| is_reserved_var(v)) {
        return Err(p.error(format!("variable name {v} is reserved for renamed clause variables")));
    }
    Ok(())
}

/// Parses one clause `head.` or `head :- l1, ..., ln.` at the cursor.
pub fn parse_clause(p: &mut Parser) -> Result<Clause> {
    let head = p.atom()?;
    if head.is_builtin() {
        return Err(p.error("a comparison cannot be a clause head"));
    }
    let mut body = Vec::new();
    if p.eat(&Tok::Neck) {
        loop {
            body.push(p.literal()?);
            if !p.eat(&Tok::Comma) {
                break;
            }
        }
    }
    p.expect(&Tok::Dot)?;
    let c = Clause::new(head, body);
    if c.is_fact() && !c.head.is_ground() {
        return Err(p.error(format!("fact {} is not ground", c.head)));
    }
    check_user_vars(&c, p)?;
    Ok(c)
}

/// Parses clauses without building a database, so no legality conditions
/// are imposed.
pub fn parse_clauses(text: &str) -> Result<Vec<Clause>> {
    let mut p = Parser::new(text)?;
    let mut clauses = Vec::new();
    while !p.at_end() {
        clauses.push(parse_clause(&mut p)?);
    }
    Ok(clauses)
}

/// Parses a goal `L1, ..., Ln` with an optional final period.
pub fn parse_goal(text: &str) -> Result<Vec<Literal>> {
    let mut p = Parser::new(text)?;
    let mut goal = vec![p.literal()?];
    while p.eat(&Tok::Comma) {
        goal.push(p.literal()?);
    }
    p.eat(&Tok::Dot);
    if !p.at_end() {
        return Err(p.error("unexpected input after the goal"));
    }
    Ok(goal)
}

/// Parses a `.dl` database.
pub fn parse_database(text: &str) -> Result<Database> {
    Database::from_clauses(parse_clauses(text)?)
}

/// A database update `⟨Del, Add⟩`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub del: Vec<Clause>,
    pub add: Vec<Clause>,
}

impl Transaction {
    pub fn is_empty(&self) -> bool {
        self.del.is_empty() && self.add.is_empty()
    }

    pub fn inverse(&self) -> Transaction {
        Transaction { del: self.add.clone(), add: self.del.clone() }
    }
}

impl fmt::Display for Transaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.del {
            writeln!(f, "del {c}")?;
        }
        for c in &self.add {
            writeln!(f, "add {c}")?;
        }
        Ok(())
    }
}

/// Parses a `.txn` file: a sequence of `add <clause>` / `del <clause>`.
pub fn parse_transaction(text: &str) -> Result<Transaction> {
    let mut p = Parser::new(text)?;
    let mut t = Transaction::default();
    while !p.at_end() {
        let is_add = match p.peek() {
            Some(Tok::Ident(s)) if s == "add" => true,
            Some(Tok::Ident(s)) if s == "del" => false,
            _ => return Err(p.error("expected `add` or `del`")),
        };
        p.next();
        let c = parse_clause(&mut p)?;
        if is_add {
            t.add.push(c);
        } else {
            t.del.push(c);
        }
    }
    Ok(t)
}

/// Signed predicate dependencies and their transitive closure.
#[derive(Clone, Debug, Default)]
pub struct Dependencies {
    pub direct: BTreeMap<PredKey, BTreeSet<(PredKey, i8)>>,
    closure: BTreeMap<PredKey, BTreeSet<(PredKey, i8)>>,
}

impl Dependencies {
    /// `p >_{+1} q`
    pub fn positive(&self, p: &PredKey, q: &PredKey) -> bool {
        self.closure.get(p).is_some_and(|s| s.contains(&(q.clone(), 1)))
    }

    /// `p >_{-1} q`
    pub fn negative(&self, p: &PredKey, q: &PredKey) -> bool {
        self.closure.get(p).is_some_and(|s| s.contains(&(q.clone(), -1)))
    }

    pub fn depends(&self, p: &PredKey, q: &PredKey) -> bool {
        self.positive(p, q) || self.negative(p, q)
    }

    pub fn mutual(&self, p: &PredKey, q: &PredKey) -> bool {
        self.depends(p, q) && self.depends(q, p)
    }

    /// All `(q, sign)` with `p >_sign q`.
    pub fn reachable(&self, p: &PredKey) -> BTreeSet<(PredKey, i8)> {
        self.closure.get(p).cloned().unwrap_or_default()
    }

    pub fn preds(&self) -> impl Iterator<Item = &PredKey> {
        self.closure.keys()
    }
}

/// Computes the signed dependency relation: the sign of a path is the
/// product of its edge signs.
pub fn analyze_dependencies(db: &Database) -> Dependencies {
    let mut deps = Dependencies::default();
    for p in db.predicates() {
        deps.direct.entry(p).or_default();
    }
    for c in db.clauses() {
        let p = c.head.key();
        for l in &c.body {
            if l.atom.is_builtin() {
                continue;
            }
            let sign = if l.positive { 1 } else { -1 };
            deps.direct.entry(p.clone()).or_default().insert((l.atom.key(), sign));
        }
    }
    for p in deps.direct.keys() {
        let mut seen: BTreeSet<(PredKey, i8)> = BTreeSet::new();
        let mut queue: VecDeque<(PredKey, i8)> = deps.direct[p].iter().cloned().collect();
        while let Some((q, s)) = queue.pop_front() {
            if !seen.insert((q.clone(), s)) {
                continue;
            }
            for (r, s2) in deps.direct.get(&q).into_iter().flatten() {
                queue.push_back((r.clone(), s * s2));
            }
        }
        deps.closure.insert(p.clone(), seen);
    }
    deps
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegalityReport {
    pub stratified: bool,
    pub strict: bool,
    pub allowed: bool,
    pub violations: Vec<String>,
}

impl LegalityReport {
    pub fn ok(&self) -> bool {
        self.stratified && self.strict && self.allowed
    }
}

/// Variables bound by the positive, non-comparison body literals, extended
/// through `=` literals whose other side is already bound.
fn bound_vars(body: &[Literal]) -> BTreeSet<String> {
    let mut bound: BTreeSet<String> = BTreeSet::new();
    for l in body {
        if l.positive && !l.atom.is_builtin() {
            bound.extend(l.atom.vars());
        }
    }
    loop {
        let before = bound.len();
        for l in body {
            if l.positive && l.atom.pred == "=" && l.atom.is_builtin() {
                let side_bound = |t: &Term| match t {
                    Term::Var(v) => bound.contains(v),
                    _ => true,
                };
                let (a, b) = (&l.atom.args[0], &l.atom.args[1]);
                if side_bound(a) || side_bound(b) {
                    let mut vs = Vec::new();
                    a.collect_vars(&mut vs);
                    b.collect_vars(&mut vs);
                    bound.extend(vs);
                }
            }
        }
        if bound.len() == before {
            return bound;
        }
    }
}

/// Whether every variable of the clause is bound by its positive body
/// literals (facts must be ground).
pub fn clause_allowed(c: &Clause) -> bool {
    if c.is_fact() {
        return c.head.is_ground();
    }
    let bound = bound_vars(&c.body);
    c.vars().iter().all(|v| bound.contains(v))
}

/// Whether every clause variable occurs in the head or is bound by the body.
pub fn clause_admissible(c: &Clause) -> bool {
    let mut bound = bound_vars(&c.body);
    bound.extend(c.head.vars());
    c.vars().iter().all(|v| bound.contains(v))
}

pub fn check_legality(db: &Database) -> LegalityReport {
    let deps = analyze_dependencies(db);
    let mut violations = Vec::new();
    let mut stratified = true;
    let mut strict = true;
    for p in deps.preds() {
        for (q, _) in deps.reachable(p) {
            if deps.negative(p, &q) && deps.mutual(p, &q) {
                stratified = false;
                violations.push(format!("{p} depends negatively on {q} through recursion"));
            }
            if deps.negative(p, &q) && deps.positive(p, &q) {
                strict = false;
                violations.push(format!("{p} depends both positively and negatively on {q}"));
            }
        }
    }
    let mut allowed = true;
    for c in db.clauses() {
        let ok = match c.origin {
            Origin::Base => clause_allowed(c),
            Origin::Constraint => clause_admissible(c),
        };
        if !ok {
            allowed = false;
            violations.push(format!("clause `{c}` is not allowed"));
        }
    }
    violations.dedup();
    LegalityReport { stratified, strict, allowed, violations }
}

/// A transaction checked against a database, with the ids of the clauses
/// it deletes.
#[derive(Clone, Debug)]
pub struct ResolvedTransaction {
    pub txn: Transaction,
    pub del_ids: Vec<ClauseId>,
}

/// Checks the update conditions and returns the deleted clause ids.
pub fn validate_transaction(db: &Database, t: &Transaction) -> Result<ResolvedTransaction> {
    let mut del_ids = Vec::new();
    for d in &t.del {
        let found = db
            .base_clauses()
            .find(|c| c.same_clause(&normalized_clause(d)) && !del_ids.contains(&c.id))
            .ok_or_else(|| Error::Transaction(format!("clause `{d}` is not in the database")))?;
        del_ids.push(found.id);
    }
    for a in &t.add {
        let a = normalized_clause(a);
        if t.del.iter().any(|d| normalized_clause(d).same_clause(&a)) {
            return Err(Error::Transaction(format!("clause `{a}` is both added and deleted")));
        }
        if db.clauses().iter().any(|c| c.same_clause(&a)) {
            return Err(Error::Transaction(format!("clause `{a}` is already in the database")));
        }
        if t.add.iter().filter(|b| normalized_clause(b).same_clause(&a)).count() > 1 {
            return Err(Error::Transaction(format!("clause `{a}` is added twice")));
        }
        let key = a.head.key();
        let constraint_pred = db.definition(&key).any(|c| c.origin == Origin::Constraint);
        if constraint_pred {
            return Err(Error::Transaction(format!("{key} belongs to a compiled constraint")));
        }
        if a.is_fact() {
            if !a.head.is_ground() {
                return Err(Error::Transaction(format!("added fact `{a}` is not ground")));
            }
            if db.is_idb(&key) {
                return Err(Error::Transaction(format!("cannot add a fact to intensional predicate {key}")));
            }
        } else if db.edb().contains(&key) {
            return Err(Error::Transaction(format!("cannot add a rule to extensional predicate {key}")));
        }
        if !clause_allowed(&a) {
            return Err(Error::Transaction(format!("added clause `{a}` is not allowed")));
        }
    }
    Ok(ResolvedTransaction { txn: t.clone(), del_ids })
}

fn normalized_clause(c: &Clause) -> Clause {
    let (head, body) = normalize_head(c.head.clone(), c.body.clone());
    Clause { id: c.id, head, body, origin: c.origin }
}

/// `D' = (D \ Del) ∪ Add`. Added clauses go after the last clause of their
/// predicate, or at the end. Returns the new database and the added ids.
pub fn apply_transaction(db: &Database, t: &Transaction) -> Result<(Database, Vec<ClauseId>)> {
    let resolved = validate_transaction(db, t)?;
    let mut out = db.clone();
    out.clauses.retain(|c| !resolved.del_ids.contains(&c.id));
    let mut added = Vec::new();
    for a in &t.add {
        let mut c = normalized_clause(a);
        c.id = out.next_id;
        c.origin = Origin::Base;
        out.next_id += 1;
        added.push(c.id);
        let key = c.head.key();
        match out.clauses.iter().rposition(|x| x.head.key() == key) {
            Some(i) => out.clauses.insert(i + 1, c),
            None => {
                // Keep compiled constraint clauses at the end.
                let pos = out.clauses.iter().position(|x| x.origin == Origin::Constraint).unwrap_or(out.clauses.len());
                out.clauses.insert(pos, c)
            }
        }
    }
    out.rebuild().map_err(|e| Error::Transaction(e.to_string()))?;
    let report = check_legality(&out);
    if !report.ok() {
        return Err(Error::Transaction(format!("resulting database is illegal: {}", report.violations.join("; "))));
    }
    Ok((out, added))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const CH4: &str = "\
employee(hans).
employee(peter).
owner(hans,menu).
manager(peter,hans).
clearance(hans,1).
clearance(peter,2).
access(E,F) :- owner(E,F).
access(E,F) :- manager(E,E2), owner(E2,F).
access(E,F) :- classification(F,C1), clearance(E,C2), C1 <= C2.
";

    fn k(n: &str, a: usize) -> PredKey {
        PredKey { name: n.into(), arity: a }
    }

    #[test]
    fn partition_of_running_example() {
        let db = parse_database(CH4).unwrap();
        assert!(db.is_idb(&k("access", 2)));
        assert!(db.edb().contains(&k("owner", 2)));
        assert!(db.is_edb(&k("classification", 2)));
        assert_eq!(db.len(), 9);
    }

    #[test]
    fn empty_and_undefined() {
        let db = parse_database("").unwrap();
        assert!(db.is_empty() && db.edb().is_empty() && db.idb().is_empty());
        let db = parse_database("p(X) :- q(X,X).").unwrap();
        assert!(db.is_idb(&k("p", 1)) && db.is_edb(&k("q", 2)));
        let again = parse_database(&db.to_string()).unwrap();
        assert_eq!(again, db);
    }

    #[test]
    fn round_trip_print_parse() {
        let db = parse_database(CH4).unwrap();
        let printed = db.to_string();
        let again = parse_database(&printed).unwrap();
        assert_eq!(again, db);
        assert_eq!(again.to_string(), printed);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_database("p(X)."), Err(Error::Syntax { .. })));
        assert!(matches!(parse_database("p(a).\np(X) :- q(X)."), Err(Error::Legality(_))));
        match parse_database("p(a).\nq(b) :- .") {
            Err(Error::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_database("p(V_1_2) :- q(V_1_2).").is_err());
    }

    #[test]
    fn head_normalization() {
        let db = parse_database("p(a,X,X) :- q(X).").unwrap();
        assert_eq!(db.clauses()[0].to_string(), "p(_H1,X,_H2) :- _H1 = a, q(X), _H2 = X.");
    }

    #[test]
    fn dependency_examples() {
        let db = parse_database("p :- not q.\nq :- r.").unwrap();
        let d = analyze_dependencies(&db);
        let (p, q, r) = (k("p", 0), k("q", 0), k("r", 0));
        assert!(d.negative(&p, &q) && d.negative(&p, &r) && d.positive(&q, &r));
        assert!(!d.positive(&p, &r));
        let db = parse_database("p :- p.").unwrap();
        let d = analyze_dependencies(&db);
        assert!(d.mutual(&p, &p) && d.positive(&p, &p));
    }

    #[test]
    fn running_example_with_constraint_is_legal() {
        let db = parse_database(CH4).unwrap();
        let ic = parse_database("ic :- not p1.\np1 :- employee(E), not access(E,menu).").unwrap();
        let full = db.with_constraint_clauses(ic.clauses()).unwrap();
        let d = analyze_dependencies(&full);
        assert!(d.negative(&k("ic", 0), &k("p1", 0)));
        assert!(d.negative(&k("ic", 0), &k("employee", 1)));
        assert!(d.positive(&k("ic", 0), &k("access", 2)));
        let r = check_legality(&full);
        assert!(r.stratified && r.strict && r.allowed, "{:?}", r.violations);
    }

    #[test]
    fn legality_failures() {
        let r = check_legality(&parse_database("p :- not p.").unwrap());
        assert!(!r.stratified);
        let r = check_legality(&parse_database("p(X) :- not q(X).").unwrap());
        assert!(!r.allowed);
        let r = check_legality(&parse_database("p :- q.\np :- not q.").unwrap());
        assert!(!r.strict);
    }

    #[test]
    fn transactions() {
        let db = parse_database(CH4).unwrap();
        let t = parse_transaction("del clearance(hans,1).").unwrap();
        let (db2, _) = apply_transaction(&db, &t).unwrap();
        assert_eq!(db2.len(), db.len() - 1);
        assert!(!db2.contains_fact(&Atom::new("clearance", vec![Term::constant("hans"), Term::Int(1)])));
        let (same, _) = apply_transaction(&db, &Transaction::default()).unwrap();
        assert_eq!(same, db);
        let t = parse_transaction("del manager(peter,hans).\nadd classification(menu,1).").unwrap();
        let (db3, added) = apply_transaction(&db, &t).unwrap();
        assert_eq!(added.len(), 1);
        assert!(db3.is_edb(&k("classification", 2)));
        let (back, _) = apply_transaction(&db3, &t.inverse()).unwrap();
        let mut a: Vec<String> = back.clauses().iter().map(|c| c.to_string()).collect();
        let mut b: Vec<String> = db.clauses().iter().map(|c| c.to_string()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn transaction_errors() {
        let db = parse_database(CH4).unwrap();
        let bad = [
            "del owner(peter,menu).",
            "add owner(hans,menu).",
            "add access(karl,menu).",
            "add owner(X,Y) :- employee(X), employee(Y).",
            "del owner(hans,menu).\nadd owner(hans,menu).",
        ];
        for b in bad {
            let t = parse_transaction(b).unwrap();
            assert!(matches!(apply_transaction(&db, &t), Err(Error::Transaction(_))), "{b}");
        }
        let t = parse_transaction("del access(A,B) :- owner(A,B).").unwrap();
        assert!(apply_transaction(&db, &t).is_ok());
    }
}
