//! Acceptance run: prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prooftree_core::compiler::print_clauses;
use prooftree_core::engine::SldNode;
use prooftree_core::fuzz::{fuzz, random_case, random_database, run_case, Bounds, Outcome};
use prooftree_core::logic::{conj_vars, fmt_conj};
use prooftree_core::maintenance::initial_tree;
use prooftree_core::oracle::{query, stratified_model};
use prooftree_core::program::{parse_clauses, parse_goal};
use prooftree_core::prooftree::check_invariants;
use prooftree_core::{
    compile_constraints, compose_refutations, compose_trees, parse_constraints, parse_database, parse_transaction,
    prove, split_refutation, validate, Atom, Budget, Change, Database, Engine, HitKind, Literal, NodeKind, ProofTree,
    Status, Substitution, Term, Verdict,
};

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

const ACCESS_DL: &str = include_str!("data/access.dl");
const ACCESS_FOL: &str = include_str!("data/access.fol");

fn access() -> Result<(Database, ProofTree), String> {
    let base = parse_database(ACCESS_DL).map_err(fail)?;
    let cc = compile_constraints(&parse_constraints(ACCESS_FOL).map_err(fail)?, Some(&base)).map_err(fail)?;
    let db = base.with_constraint_clauses(&cc[0].clauses).map_err(fail)?;
    let tree = initial_tree(&db, &cc[0], Budget::default()).map_err(fail)?.ok_or("the constraint is violated")?;
    Ok((db, tree))
}

fn annotation(t: &ProofTree, kind: NodeKind, label: &str) -> Result<String, String> {
    let id = t.find(kind, label).ok_or_else(|| format!("no {kind} node {label}"))?;
    Ok(t.node(id).annotation.to_string())
}

fn standard(t: &ProofTree, db: &Database) -> Check {
    let report = validate(t, db, Budget::default());
    ensure(report.is_standard(), || format!("not a standard tree: {:?}", report.violations))?;
    let broken = check_invariants(t);
    ensure(broken.is_empty(), || format!("invariants: {broken:?}"))
}

fn criterion_1() -> Check {
    let fs = parse_constraints("forall E:employee access(E,menu).").map_err(fail)?;
    let printed = print_clauses(&compile_constraints(&fs, None).map_err(fail)?);
    let golden = include_str!("data/access.ic.dl");
    ensure(printed == golden, || format!("got {printed:?}"))?;
    let clauses = parse_clauses(golden).map_err(fail)?;
    ensure(clauses.len() == 2, || format!("{} clauses", clauses.len()))
}

fn criterion_2() -> Check {
    let (db, t) = access()?;
    let expected = [
        (NodeKind::NegOr, "employee(E)", "⟨{ε}, {{E/hans}, {E/peter}}⟩"),
        (NodeKind::PosOr, "access(E,menu)", "⟨⟨{E/hans}, {E/peter}⟩, ⟨{E/hans}, {E/peter}⟩⟩"),
        (NodeKind::PosOr, "manager(E,E2)", "⟨⟨{E/peter}⟩, ⟨{E/peter, E2/hans}⟩⟩"),
        (NodeKind::PosOr, "owner(E,menu)", "⟨⟨{E/hans}⟩, ⟨{E/hans}⟩⟩"),
    ];
    for (kind, label, want) in expected {
        let got = annotation(&t, kind, label)?;
        ensure(got == want, || format!("{label}: {got}"))?;
    }
    let root = t.root_answer().map_err(fail)?;
    ensure(root == vec![Substitution::empty()], || format!("root answer {root:?}"))?;
    standard(&t, &db)
}

fn update(db: &Database, tree: &ProofTree, txn: &str) -> Result<(Database, Verdict), String> {
    let (post, change) = Change::apply(db, &parse_transaction(txn).map_err(fail)?).map_err(fail)?;
    let v = prooftree_core::ueberpruefe_baum(tree, &change, &post, Budget::default()).map_err(fail)?;
    Ok((post, v))
}

fn criterion_3() -> Check {
    let (db, tree) = access()?;

    let (_, v) = update(&db, &tree, "del clearance(hans,1).")?;
    ensure(v.impact.is_empty(), || format!("scenario 1: hits {:?}", v.impact))?;
    ensure(v.tree.as_ref() == Some(&tree), || "scenario 1: tree changed".into())?;

    let (post, v) = update(&db, &tree, "del manager(peter,hans).\ndel employee(peter).")?;
    ensure(v.status == Status::Satisfied, || format!("scenario 2: {}", v.status))?;
    ensure(v.stats.reproof_calls + v.stats.full_reproofs + v.stats.merge_builds == 0, || {
        format!("scenario 2: engine calls {:?}", v.stats)
    })?;
    let t = v.tree.ok_or("scenario 2: no tree")?;
    let access = t.find(NodeKind::PosOr, "access(E,menu)").ok_or("scenario 2: no access node")?;
    let mut below = vec![access];
    while let Some(id) = below.pop() {
        ensure(!t.node(id).annotation.to_string().contains("E/peter"), || format!("scenario 2: E/peter at node {id}"))?;
        below.extend(t.node(id).children.iter().copied());
    }
    ensure(annotation(&t, NodeKind::PosOr, "access(E,menu)")? == "⟨⟨{E/hans}⟩, ⟨{E/hans}⟩⟩", || {
        "scenario 2: access".into()
    })?;
    ensure(annotation(&t, NodeKind::NegOr, "employee(E)")? == "⟨{ε}, {{E/hans}}⟩", || {
        "scenario 2: employee".into()
    })?;
    standard(&t, &post)?;
    let fresh = prove(&post, &[Literal::pos(Atom::prop("ic1"))], &Substitution::empty(), Budget::default())
        .map_err(fail)?
        .ok_or("scenario 2: no fresh tree")?;
    ensure(t.summary() == fresh.summary(), || format!("scenario 2: maintained tree\n{t}\ndiffers from\n{fresh}"))?;

    let (post, v) = update(&db, &tree, "del manager(peter,hans).\nadd classification(menu,1).")?;
    ensure(v.status == Status::Satisfied, || format!("scenario 3: {}", v.status))?;
    ensure(v.stats.conflicts == 1 && v.stats.reproof_calls == 1 && v.stats.full_reproofs == 0, || {
        format!("scenario 3: {:?}", v.stats)
    })?;
    let t = v.tree.ok_or("scenario 3: no tree")?;
    for label in ["classification(menu,C1)", "clearance(E,C2)"] {
        ensure(t.find(NodeKind::PosOr, label).is_some(), || format!("scenario 3: no {label} branch"))?;
    }
    ensure(t.find(NodeKind::PosOr, "manager(E,E2)").is_none(), || "scenario 3: manager branch kept".into())?;
    let got = annotation(&t, NodeKind::PosOr, "access(E,menu)")?;
    ensure(got == "⟨⟨{E/hans}, {E/peter}⟩, ⟨{E/hans}, {E/peter}⟩⟩", || {
        format!("scenario 3: access {got}")
    })?;
    standard(&t, &post)
}

const RESOLUTION_DL: &str = include_str!("data/resolution.dl");

fn outline(n: &SldNode, indent: usize, out: &mut Vec<String>) {
    let goal = if n.goal.is_empty() { "□".to_string() } else { format!("← {}", fmt_conj(&n.goal)) };
    let mark = if n.is_potential_success() && !n.goal.is_empty() {
        " [open]"
    } else if n.children.is_empty() && !n.goal.is_empty() {
        " [fail]"
    } else {
        ""
    };
    out.push(format!("{:indent$}{goal}{mark}", ""));
    for c in &n.children {
        outline(c, indent + 2, out);
    }
}

fn criterion_4() -> Check {
    let db = Database::permissive(parse_clauses(RESOLUTION_DL).map_err(fail)?);
    let mut e = Engine::new(&db, Budget::default());
    let g1 = parse_goal("p(X)").map_err(fail)?;
    let r1 = e.first_refutation(&g1, &Substitution::empty()).map_err(fail)?.ok_or("no refutation of p(X)")?;
    let g2 = parse_goal("r(X,Y)").map_err(fail)?;
    let r2 = e.first_refutation(&g2, &r1.answer()).map_err(fail)?.ok_or("no refutation of r(a,Y)")?;
    let r3 = compose_refutations(&r1, &g2, &r2).map_err(fail)?;
    ensure(r3.answer().to_string() == "{X/a, Y/b}", || format!("composed answer {}", r3.answer()))?;
    ensure(r3.root() == parse_goal("p(X), r(X,Y)").map_err(fail)?.as_slice(), || "composed root".into())?;

    // The incomplete tree for p(X): the branch through t(a) stops at the
    // open goal not s(a).
    let mut t = e.build_tree(&g1, &Substitution::empty()).map_err(fail)?;
    t.truncate_at(&[0, 1]).map_err(fail)?;
    let cover: Vec<String> = t.coverage().iter().map(|s| s.to_string()).collect();
    ensure(cover == ["{X/a}"], || format!("coverage {cover:?}"))?;

    let q = parse_goal("q(X,Y)").map_err(fail)?;
    let parts: BTreeMap<Substitution, SldNode> = t
        .coverage()
        .into_iter()
        .map(|s| e.build_tree(&q, &s).map(|tree| (s, tree)))
        .collect::<prooftree_core::Result<_>>()
        .map_err(fail)?;
    let composed = compose_trees(&t, &q, &parts, None).map_err(fail)?;
    ensure(composed.is_finitely_failed(), || "composed tree is not finitely failed".into())?;
    let mut lines = Vec::new();
    outline(&composed, 0, &mut lines);
    let expected = [
        "← p(X), q(X,Y)",
        "  ← t(X), not s(X), q(X,Y)",
        "    ← u(X), not s(X), q(X,Y)",
        "      ← not s(b), q(b,Y) [fail]",
        "    ← not s(a), q(a,Y)",
        "      ← not s(a), t(Y), u(a)",
        "        ← not s(a), u(Y), u(a)",
        "          ← not s(a), u(a) [fail]",
        "        ← not s(a), u(a) [fail]",
    ];
    ensure(lines == expected, || format!("composed tree:\n{}", lines.join("\n")))?;
    let grafted = &composed.children[0].children[1];
    ensure(grafted.selected == Some(1), || format!("grafted node selects {:?}", grafted.selected))
}

/// Predicates used in a database, with their arities.
fn predicates(db: &Database) -> Vec<(String, usize)> {
    let mut out = BTreeSet::new();
    for c in db.clauses() {
        out.insert((c.head.pred.clone(), c.head.args.len()));
        for l in &c.body {
            if !l.atom.is_builtin() {
                out.insert((l.atom.pred.clone(), l.atom.args.len()));
            }
        }
    }
    out.into_iter().collect()
}

fn open_atom(pred: &str, arity: usize, prefix: &str) -> Atom {
    Atom::new(pred, (0..arity).map(|i| Term::var(&format!("{prefix}{i}"))).collect())
}

/// A random goal of one or two literals over the database's predicates.
/// The second literal shares variables with the first and is negative only
/// when the first literal grounds it.
fn random_goal(rng: &mut ChaCha8Rng, db: &Database) -> (Vec<Literal>, Vec<Literal>) {
    let preds = predicates(db);
    let (p, n) = preds.choose(rng).cloned().unwrap();
    let first = open_atom(&p, n, "X");
    let (q, m) = preds.choose(rng).cloned().unwrap();
    let consts = ["a", "b", "c"];
    let mut fresh = 0;
    let args: Vec<Term> = (0..m)
        .map(|_| match rng.gen_range(0..3) {
            0 if n > 0 => Term::var(&format!("X{}", rng.gen_range(0..n))),
            1 => Term::constant(consts.choose(rng).unwrap()),
            _ => {
                fresh += 1;
                Term::var(&format!("Y{fresh}"))
            }
        })
        .collect();
    let second = Atom::new(&q, args);
    let bound: BTreeSet<String> = first.vars().into_iter().collect();
    let negate = second.vars().iter().all(|v| bound.contains(v)) && rng.gen_bool(0.4);
    let second = if negate { Literal::neg(second) } else { Literal::pos(second) };
    (vec![Literal::pos(first)], vec![second])
}

fn runner(seed: u8) -> TestRunner {
    let config = Config { cases: 200, failure_persistence: None, max_global_rejects: 100_000, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]))
}

fn property(seed: u8, name: &str, test: impl Fn(u64, u64) -> Result<(), TestCaseError>) -> Check {
    runner(seed)
        .run(&(0u64..1_000_000, any::<u64>()), |(db_seed, pick)| test(db_seed, pick))
        .map_err(|e| format!("{name}: {e}"))
}

fn reject<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, TestCaseError> {
    r.map_err(|e| TestCaseError::reject(e.to_string()))
}

fn db_and_goal(db_seed: u64, pick: u64) -> Result<(Database, Vec<Literal>, Vec<Literal>), TestCaseError> {
    let db = reject(parse_database(&random_database(db_seed, &Bounds::default())))?;
    let mut rng = ChaCha8Rng::seed_from_u64(pick);
    let (g1, g2) = random_goal(&mut rng, &db);
    Ok((db, g1, g2))
}

fn criterion_5() -> Check {
    property(1, "compose then split", |db_seed, pick| {
        let (db, g1, g2) = db_and_goal(db_seed, pick)?;
        let mut e = Engine::new(&db, Budget::default());
        let r1 = reject(e.first_refutation(&g1, &Substitution::empty()))?.ok_or(TestCaseError::reject("no r1"))?;
        let r2 = reject(e.first_refutation(&g2, &r1.answer()))?.ok_or(TestCaseError::reject("no r2"))?;
        let r3 = compose_refutations(&r1, &g2, &r2).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let split = split_refutation(&r3).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(split, (r1, r2));
        Ok(())
    })?;
    property(2, "split then compose", |db_seed, pick| {
        let (db, g1, g2) = db_and_goal(db_seed, pick)?;
        let goal: Vec<Literal> = g1.iter().chain(&g2).cloned().collect();
        let mut e = Engine::new(&db, Budget::default());
        let r =
            reject(e.first_refutation(&goal, &Substitution::empty()))?.ok_or(TestCaseError::reject("no refutation"))?;
        let (part, rest) = split_refutation(&r).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let again = compose_refutations(&part, &g2, &rest).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(again, r);
        Ok(())
    })?;
    property(3, "coverage of a complete composition", |db_seed, pick| {
        let (db, g1, g2) = db_and_goal(db_seed, pick)?;
        let mut e = Engine::new(&db, Budget::default());
        let mut t = reject(e.build_tree(&g1, &Substitution::empty()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(pick ^ 0x5eed);
        let mut inner = Vec::new();
        collect_paths(&t, &mut Vec::new(), &mut inner);
        if let Some(path) = inner.choose(&mut rng).filter(|_| rng.gen_bool(0.5)) {
            reject(t.truncate_at(path))?;
        }
        let mut parts = BTreeMap::new();
        for s in t.coverage() {
            let tree = reject(e.build_tree(&g2, &s))?;
            parts.insert(s, tree);
        }
        let composed = compose_trees(&t, &g2, &parts, None).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let vars: BTreeSet<String> = conj_vars(&[g1.clone(), g2.clone()].concat()).into_iter().collect();
        let expected: BTreeSet<Substitution> =
            parts.iter().flat_map(|(s, p)| p.coverage().into_iter().map(|th| s.compose(&th).restrict(&vars))).collect();
        let got: BTreeSet<Substitution> = composed.coverage().into_iter().map(|s| s.restrict(&vars)).collect();
        prop_assert_eq!(got, expected);
        Ok(())
    })?;
    property(4, "construct then validate", |db_seed, pick| {
        let tree = random_tree(db_seed, pick)?;
        let report = validate(&tree.1, &tree.0, Budget::default());
        prop_assert!(report.is_standard(), "{:?}", report.violations);
        Ok(())
    })?;
    property(5, "root answer of a proof tree", |db_seed, pick| {
        let (db, g1, g2) = db_and_goal(db_seed, pick)?;
        let goal: Vec<Literal> = g1.iter().chain(&g2).cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(pick);
        let mut tau = Substitution::empty();
        if !g1[0].atom.args.is_empty() && rng.gen_bool(0.5) {
            tau.insert("X0", Term::constant(["a", "b", "c"].choose(&mut rng).unwrap()));
        }
        let tree = reject(prove(&db, &goal, &tau, Budget::default()))?.ok_or(TestCaseError::reject("no proof"))?;
        let mut e = Engine::new(&db, Budget::default());
        let r = e.first_refutation(&goal, &tau).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let theta = r.ok_or(TestCaseError::fail("the engine finds no refutation"))?.answer();
        let vars: BTreeSet<String> = conj_vars(&goal).into_iter().collect();
        let root: Vec<Substitution> = tree
            .root_answer()
            .map_err(|e| TestCaseError::fail(e.to_string()))?
            .iter()
            .map(|s| s.restrict(&vars))
            .collect();
        prop_assert_eq!(root, vec![tau.compose(&theta).restrict(&vars)]);
        Ok(())
    })
}

fn collect_paths(n: &SldNode, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if !n.children.is_empty() {
        out.push(path.clone());
    }
    for (i, c) in n.children.iter().enumerate() {
        path.push(i);
        collect_paths(c, path, out);
        path.pop();
    }
}

/// A proof tree from a random database: either for a random goal or, on
/// odd picks, for a random constraint that holds.
fn random_tree(db_seed: u64, pick: u64) -> Result<(Database, ProofTree), TestCaseError> {
    if pick % 2 == 1 {
        let p = reject(random_case(db_seed, &Bounds::default()).prepare())?;
        let tree =
            reject(initial_tree(&p.db, &p.constraint, Budget::default()))?.ok_or(TestCaseError::reject("violated"))?;
        return Ok((p.db, tree));
    }
    let (db, g1, g2) = db_and_goal(db_seed, pick)?;
    let goal: Vec<Literal> = if pick.is_multiple_of(4) { g1 } else { g1.into_iter().chain(g2).collect() };
    let tree = reject(prove(&db, &goal, &Substitution::empty(), Budget::default()))?
        .ok_or(TestCaseError::reject("no proof"))?;
    Ok((db, tree))
}

fn criterion_6() -> Check {
    let mut trees = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    while trees < 200 {
        let Ok((_, tree)) = random_tree(rng.gen_range(0..1_000_000), rng.gen()) else { continue };
        let broken = check_invariants(&tree);
        ensure(broken.is_empty(), || format!("{broken:?}\n{tree}"))?;
        trees += 1;
    }
    Ok(())
}

const RECORDED: [(u64, HitKind); 4] = [
    (96, HitKind::DelPosLeaf),
    (50, HitKind::AddNegLeaf),
    (4727, HitKind::DelRulePosAnd),
    (821, HitKind::AddRuleNegOr),
];

fn criterion_7() -> Check {
    let summary = fuzz(1, 500, &Bounds::default(), Budget::default());
    ensure(summary.checked == 500, || format!("only {} cases checked", summary.checked))?;
    if let Some((case, why)) = summary.counterexamples.first() {
        return Err(format!("counterexample: {why}\n{case}"));
    }
    ensure(summary.agreed + summary.budget == 500, || format!("{} of 500 agree", summary.agreed))?;
    for (seed, kind) in RECORDED {
        let case = random_case(seed, &Bounds::default());
        match run_case(&case, Budget::default()).map_err(fail)? {
            Outcome::Agree { kinds, stats, full_nodes, .. } => {
                ensure(kinds == [kind], || format!("seed {seed}: conflicts {kinds:?}"))?;
                ensure(stats.engine_nodes < full_nodes, || {
                    format!("seed {seed}: {} incremental vs {full_nodes} full resolution steps", stats.engine_nodes)
                })?;
            }
            other => return Err(format!("seed {seed}: {other:?}")),
        }
    }
    Ok(())
}

fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..200 {
        let db = parse_database(&random_database(seed, &Bounds::default())).map_err(fail)?;
        let model = stratified_model(&db).map_err(fail)?;
        let mut e = Engine::new(&db, Budget::default());
        let mut goals: Vec<Vec<Literal>> =
            predicates(&db).iter().map(|(p, n)| vec![Literal::pos(open_atom(p, *n, "X"))]).collect();
        for _ in 0..3 {
            let (g1, g2) = random_goal(&mut rng, &db);
            goals.push(g1.into_iter().chain(g2).collect());
        }
        for goal in &goals {
            let answers: BTreeSet<Substitution> =
                e.answers(goal, &Substitution::empty()).map_err(fail)?.into_iter().map(|(_, a)| a).collect();
            let expected = query(&model, goal, &Substitution::empty()).map_err(fail)?;
            ensure(answers == expected, || format!("seed {seed}: answers of {} differ", fmt_conj(goal)))?;
        }
        let domain = prooftree_core::oracle::active_domain(&model, &[]);
        for (p, n) in predicates(&db) {
            for args in tuples(&domain.iter().cloned().collect::<Vec<_>>(), n) {
                let a = Atom::new(&p, args);
                let t = e.build_tree(&[Literal::pos(a.clone())], &Substitution::empty()).map_err(fail)?;
                ensure(t.is_finitely_failed() == !model.holds(&a), || format!("seed {seed}: verdict for {a}"))?;
            }
        }
    }
    Ok(())
}

fn tuples(domain: &[Term], n: usize) -> Vec<Vec<Term>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out.into_iter().flat_map(|t| domain.iter().map(move |d| [t.clone(), vec![d.clone()]].concat())).collect();
    }
    out
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("constraint compilation matches the golden clauses", criterion_1),
        ("proof tree annotations of the access example", criterion_2),
        ("update scenarios on the access example", criterion_3),
        ("composition and splitting on the resolution example", criterion_4),
        ("composition, construction and answer laws on random inputs", criterion_5),
        ("structural invariants of random proof trees", criterion_6),
        ("incremental verdicts agree with full re-checks", criterion_7),
        ("engine answers agree with the stratified model", criterion_8),
    ];
    let mut failed = false;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(()) => println!("criterion {}: PASS - {name}", i + 1),
            Err(why) => {
                failed = true;
                println!("criterion {}: FAIL - {name}: {why}", i + 1);
            }
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
