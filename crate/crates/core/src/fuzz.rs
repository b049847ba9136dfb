//! Random small databases, constraints and transactions, and the harness
//! that checks incremental verdicts against a full re-check.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compiler::{compile_constraints, parse_constraints, CompiledConstraint};
use crate::engine::Budget;
use crate::error::{Error, Result};
use crate::maintenance::{initial_tree, oracle_recheck, ueberpruefe_baum, Change, HitKind, Stats, Status};
use crate::oracle::{eval_formula, stratified_model};
use crate::program::{check_legality, parse_database, parse_transaction, Database, Transaction};
use crate::prooftree::validate;

/// Size bounds for generated cases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub max_predicates: usize,
    pub max_facts: usize,
    pub max_rules: usize,
    pub max_constants: usize,
}

impl Default for Bounds {
    fn default() -> Bounds {
        Bounds { max_predicates: 8, max_facts: 20, max_rules: 6, max_constants: 3 }
    }
}

const CONSTANTS: [&str; 3] = ["a", "b", "c"];
const VARS: [&str; 3] = ["X", "Y", "Z"];

#[derive(Clone, Debug)]
struct Pred {
    name: String,
    arity: usize,
}

struct Gen<'r> {
    rng: &'r mut ChaCha8Rng,
    consts: Vec<&'static str>,
    edb: Vec<Pred>,
    idb: Vec<Pred>,
}

impl Gen<'_> {
    fn constant(&mut self) -> &'static str {
        self.consts[self.rng.gen_range(0..self.consts.len())]
    }

    fn ground(&mut self, p: &Pred) -> String {
        let args: Vec<&str> = (0..p.arity).map(|_| self.constant()).collect();
        format!("{}({})", p.name, args.join(","))
    }

    fn pick<'a>(&mut self, ps: &'a [Pred]) -> &'a Pred {
        &ps[self.rng.gen_range(0..ps.len())]
    }

    /// Arguments drawn from `bound` variables and constants, or fresh
    /// variables when `fresh` is set.
    fn args(&mut self, arity: usize, bound: &mut Vec<&'static str>, fresh: bool) -> String {
        let mut out = Vec::new();
        for _ in 0..arity {
            let unused: Vec<&'static str> = VARS.iter().copied().filter(|v| !bound.contains(v)).collect();
            let roll = self.rng.gen_range(0..10);
            if fresh && !unused.is_empty() && (roll < 6 || bound.is_empty()) {
                bound.push(unused[0]);
                out.push(unused[0].to_string());
            } else if !bound.is_empty() && roll < 8 {
                out.push(bound[self.rng.gen_range(0..bound.len())].to_string());
            } else {
                out.push(self.constant().to_string());
            }
        }
        out.join(",")
    }

    /// A rule for IDB predicate number `i`, using EDB predicates and IDB
    /// predicates below `i`.
    fn rule(&mut self, i: usize) -> String {
        let head = self.idb[i].clone();
        let mut usable = self.edb.clone();
        usable.extend(self.idb[..i].iter().cloned());
        let mut bound = Vec::new();
        let mut body = Vec::new();
        let first = self.pick(&usable).clone();
        body.push(format!("{}({})", first.name, self.args(first.arity, &mut bound, true)));
        for _ in 0..self.rng.gen_range(0..3) {
            let p = self.pick(&usable).clone();
            if self.rng.gen_bool(0.4) {
                body.push(format!("not {}({})", p.name, self.args(p.arity, &mut bound, false)));
            } else {
                body.push(format!("{}({})", p.name, self.args(p.arity, &mut bound, true)));
            }
        }
        let head_args = self.args(head.arity, &mut bound, false);
        format!("{}({}) :- {}.", head.name, head_args, body.join(", "))
    }

    fn atom_over(&mut self, p: &Pred, var: &str) -> String {
        let mut args = vec![var.to_string()];
        for _ in 1..p.arity {
            args.push(if self.rng.gen_bool(0.5) { "Y".to_string() } else { self.constant().to_string() });
        }
        format!("{}({})", p.name, args.join(","))
    }

    fn constraint(&mut self) -> String {
        let sorts: Vec<Pred> = self.edb.iter().filter(|p| p.arity == 1).cloned().collect();
        let all: Vec<Pred> = self.edb.iter().chain(&self.idb).cloned().collect();
        let sort = self.pick(&sorts).name.clone();
        let q = self.pick(&all).clone();
        let inner = self.atom_over(&q, "X");
        let needs_y = inner.contains('Y');
        match self.rng.gen_range(0..5) {
            0 if !needs_y => format!("forall X:{sort} {inner}."),
            1 => {
                let body = if needs_y { format!("not (exists Y {inner})") } else { format!("not {inner}") };
                format!("forall X:{sort} {body}.")
            }
            2 => {
                let body = if needs_y { format!("exists Y {inner}") } else { inner };
                format!("forall X ({sort}(X) -> {body}).")
            }
            3 => {
                let body = if needs_y { format!("exists Y {inner}") } else { inner };
                format!("exists X ({sort}(X) & {body}).")
            }
            _ => {
                let r = self.pick(&all).clone();
                let guard = self.atom_over(&r, "X");
                let body = if needs_y || guard.contains('Y') {
                    format!("forall X ((exists Y {guard}) -> not (exists Y {inner}))")
                } else {
                    format!("forall X ({guard} -> not {inner})")
                };
                format!("{body}.")
            }
        }
    }
}

/// One generated test case in source form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub seed: u64,
    pub database: String,
    pub constraint: String,
    pub transaction: String,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "% seed {}", self.seed)?;
        writeln!(f, "% database")?;
        write!(f, "{}", self.database)?;
        writeln!(f, "% constraint")?;
        writeln!(f, "{}", self.constraint)?;
        writeln!(f, "% transaction")?;
        write!(f, "{}", self.transaction)
    }
}

/// A random allowed, stratified database within `bounds`, as `.dl` text.
fn database_text(g: &mut Gen<'_>, bounds: &Bounds) -> String {
    let mut lines = Vec::new();
    let mut facts = BTreeSet::new();
    for _ in 0..g.rng.gen_range(1..=bounds.max_facts) {
        let p = g.pick(&g.edb.clone()).clone();
        facts.insert(g.ground(&p));
    }
    for f in facts {
        lines.push(format!("{f}."));
    }
    let mut rules = 0;
    for i in 0..g.idb.len() {
        for _ in 0..g.rng.gen_range(1..=2) {
            if rules < bounds.max_rules {
                lines.push(g.rule(i));
                rules += 1;
            }
        }
    }
    lines.join("\n") + "\n"
}

fn transaction_text(g: &mut Gen<'_>, db: &Database) -> String {
    let mut ops = Vec::new();
    let facts: Vec<String> = db.clauses().iter().filter(|c| c.is_fact()).map(|c| c.to_string()).collect();
    let rules: Vec<String> = db.clauses().iter().filter(|c| !c.is_fact()).map(|c| c.to_string()).collect();
    for _ in 0..g.rng.gen_range(1..=3) {
        match g.rng.gen_range(0..10) {
            0..=3 if !facts.is_empty() => ops.push(format!("del {}", facts.choose(g.rng).cloned().unwrap_or_default())),
            4..=7 => {
                let p = g.pick(&g.edb.clone()).clone();
                ops.push(format!("add {}.", g.ground(&p)));
            }
            8 if !rules.is_empty() => ops.push(format!("del {}", rules.choose(g.rng).cloned().unwrap_or_default())),
            _ => {
                let i = g.rng.gen_range(0..g.idb.len());
                ops.push(format!("add {}", g.rule(i)));
            }
        }
    }
    ops.sort();
    ops.dedup();
    ops.join("\n") + "\n"
}

/// Prepared inputs of a case: base database, compiled constraint, and the
/// database with the constraint clauses.
pub struct Prepared {
    pub base: Database,
    pub constraint: CompiledConstraint,
    pub db: Database,
    pub txn: Transaction,
}

impl Case {
    pub fn prepare(&self) -> Result<Prepared> {
        let base = parse_database(&self.database)?;
        let fs = parse_constraints(&self.constraint)?;
        let cc = compile_constraints(&fs, Some(&base))?.remove(0);
        let db = base.with_constraint_clauses(&cc.clauses)?;
        let txn = parse_transaction(&self.transaction)?;
        Ok(Prepared { base, constraint: cc, db, txn })
    }
}

fn legal(db: &Database) -> bool {
    check_legality(db).ok()
}

fn signature<'r>(rng: &'r mut ChaCha8Rng, bounds: &Bounds) -> Gen<'r> {
    let nconst = rng.gen_range(1..=bounds.max_constants.clamp(1, CONSTANTS.len()));
    let total = rng.gen_range(3..=bounds.max_predicates.max(3));
    let nedb = rng.gen_range(2..total);
    let mut edb: Vec<Pred> =
        (0..nedb).map(|i| Pred { name: format!("e{i}"), arity: 1 + usize::from(i > 0 && rng.gen_bool(0.5)) }).collect();
    edb[0].arity = 1;
    let idb = (0..total - nedb).map(|i| Pred { name: format!("p{i}"), arity: rng.gen_range(1..=2) }).collect();
    Gen { rng, consts: CONSTANTS[..nconst].to_vec(), edb, idb }
}

/// Draws a legal function-free database from `seed`, as `.dl` text.
pub fn random_database(seed: u64, bounds: &Bounds) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut g = signature(&mut rng, bounds);
        let text = database_text(&mut g, bounds);
        if parse_database(&text).is_ok_and(|db| legal(&db)) {
            return text;
        }
    }
}

/// Draws a case from `seed`; cases whose database, constraint or updated
/// database is not legal are redrawn from the same stream.
pub fn random_case(seed: u64, bounds: &Bounds) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut g = signature(&mut rng, bounds);
        let database = database_text(&mut g, bounds);
        let constraint = g.constraint();
        let Ok(base) = parse_database(&database) else { continue };
        let transaction = transaction_text(&mut g, &base);
        let case = Case { seed, database, constraint, transaction };
        let Ok(p) = case.prepare() else { continue };
        if !legal(&p.db) {
            continue;
        }
        let Ok((post, _)) = Change::apply(&p.db, &p.txn) else { continue };
        if legal(&post) {
            return case;
        }
    }
}

/// How one case went.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    /// The constraint did not hold before the update, so there is no tree
    /// to maintain.
    InitiallyViolated,
    /// A budget ran out on either side.
    Budget,
    Agree {
        status: Status,
        kinds: Vec<HitKind>,
        stats: Stats,
        full_nodes: usize,
    },
    Disagree {
        incremental: Status,
        full: Status,
        detail: String,
    },
}

/// Runs the incremental check of a case and the full re-check it must
/// agree with. A repaired tree must also be a standard tree for the
/// updated database, and the re-check must agree with the bottom-up model.
pub fn run_case(case: &Case, budget: Budget) -> Result<Outcome> {
    let p = case.prepare()?;
    let tree = match initial_tree(&p.db, &p.constraint, budget) {
        Ok(Some(t)) => t,
        Ok(None) => return Ok(Outcome::InitiallyViolated),
        Err(Error::Budget(_)) => return Ok(Outcome::Budget),
        Err(e) => return Err(e),
    };
    let (post, change) = Change::apply(&p.db, &p.txn)?;
    let verdict = ueberpruefe_baum(&tree, &change, &post, budget)?;
    let full = oracle_recheck(&post, &p.constraint, budget)?;
    if verdict.status == Status::UnknownBudget || full.status == Status::UnknownBudget {
        return Ok(Outcome::Budget);
    }
    let disagree = |detail: String| Outcome::Disagree { incremental: verdict.status, full: full.status, detail };
    if verdict.status != full.status {
        return Ok(disagree("verdicts differ".into()));
    }
    let model = stratified_model(&Database::from_clauses(post.base_clauses().cloned().collect())?)?;
    let holds = eval_formula(&model, &p.constraint.source)?;
    if holds != (full.status == Status::Satisfied) {
        return Ok(disagree(format!("bottom-up model says {holds}")));
    }
    if let Some(t) = &verdict.tree {
        let report = validate(t, &post, budget);
        if !report.is_standard() {
            return Ok(disagree(format!("repaired tree is not standard: {:?}", report.violations)));
        }
    }
    let mut kinds: Vec<HitKind> = verdict.impact.conflicts.iter().map(|h| h.kind).collect();
    kinds.sort();
    kinds.dedup();
    Ok(Outcome::Agree { status: verdict.status, kinds, stats: verdict.stats, full_nodes: full.engine_nodes })
}

/// Totals over a fuzz run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub checked: usize,
    pub agreed: usize,
    pub initially_violated: usize,
    pub budget: usize,
    pub full_reproofs: usize,
    /// Counters summed over all agreeing cases.
    pub stats: Stats,
    /// Per conflict kind, cases where incremental checking ran fewer
    /// resolution steps than the full re-check.
    pub cheaper: Vec<(HitKind, usize)>,
    pub counterexamples: Vec<(Case, String)>,
}

impl Summary {
    pub fn cheaper_for(&self, kind: HitKind) -> usize {
        self.cheaper.iter().find(|(k, _)| *k == kind).map_or(0, |(_, n)| *n)
    }
}

/// Runs cases from consecutive seeds until `count` of them had a tree to
/// maintain (or `10 * count` seeds were tried).
pub fn fuzz(start: u64, count: usize, bounds: &Bounds, budget: Budget) -> Summary {
    let mut s = Summary { cheaper: HitKind::CONFLICTS.iter().map(|&k| (k, 0)).collect(), ..Summary::default() };
    let mut seed = start;
    while s.checked < count && seed < start + 10 * count as u64 {
        let case = random_case(seed, bounds);
        seed += 1;
        match run_case(&case, budget) {
            Ok(Outcome::InitiallyViolated) => s.initially_violated += 1,
            Ok(Outcome::Budget) => {
                s.budget += 1;
                s.checked += 1;
            }
            Ok(Outcome::Agree { kinds, stats, full_nodes, .. }) => {
                s.checked += 1;
                s.agreed += 1;
                s.full_reproofs += usize::from(stats.full_reproofs > 0);
                s.stats.add(&stats);
                if stats.engine_nodes < full_nodes && kinds.len() == 1 {
                    for (k, n) in s.cheaper.iter_mut() {
                        if *k == kinds[0] {
                            *n += 1;
                        }
                    }
                }
            }
            Ok(Outcome::Disagree { incremental, full, detail }) => {
                s.checked += 1;
                s.counterexamples.push((case, format!("incremental {incremental}, full {full}: {detail}")));
            }
            Err(e) => {
                s.checked += 1;
                s.counterexamples.push((case, format!("error: {e}")));
            }
        }
    }
    s
}

fn fails(case: &Case, budget: Budget) -> bool {
    let Ok(p) = case.prepare() else { return false };
    if !legal(&p.db) || !Change::apply(&p.db, &p.txn).is_ok_and(|(post, _)| legal(&post)) {
        return false;
    }
    matches!(run_case(case, budget), Ok(Outcome::Disagree { .. }) | Err(_))
}

/// Greedily drops database and transaction lines while the case still
/// fails.
pub fn shrink(case: &Case, budget: Budget) -> Case {
    let mut best = case.clone();
    loop {
        let mut progressed = false;
        for field in 0..2 {
            let text = if field == 0 { &best.database } else { &best.transaction };
            let lines: Vec<String> = text.lines().map(str::to_string).collect();
            for i in 0..lines.len() {
                let mut rest = lines.clone();
                rest.remove(i);
                let joined = rest.join("\n") + "\n";
                let mut cand = best.clone();
                if field == 0 {
                    cand.database = joined;
                } else {
                    cand.transaction = joined;
                }
                if fails(&cand, budget) {
                    best = cand;
                    progressed = true;
                    break;
                }
            }
        }
        if !progressed {
            return best;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_are_reproducible() {
        let b = Bounds::default();
        assert_eq!(random_case(7, &b), random_case(7, &b));
    }

    #[test]
    fn small_run_agrees() {
        let s = fuzz(0, 150, &Bounds::default(), Budget::default());
        assert!(
            s.counterexamples.is_empty(),
            "{}",
            s.counterexamples.iter().map(|(c, d)| format!("{c}{d}\n")).collect::<String>()
        );
    }

    #[test]
    fn broken_merge_is_caught() {
        crate::maintenance::BROKEN_MERGE.with(|b| b.set(true));
        let s = fuzz(1, 500, &Bounds::default(), Budget::default());
        crate::maintenance::BROKEN_MERGE.with(|b| b.set(false));
        assert!(!s.counterexamples.is_empty());
    }
}
