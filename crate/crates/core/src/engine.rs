//! SLDNF resolution with the standard (leftmost) computation rule:
//! complete and incomplete SLDNF trees, refutations, memoized negation as
//! failure, and the composition and splitting of refutations and trees.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logic::{conj_vars, fmt_conj, unify_lists, Atom, Literal, Substitution, SubstitutionSet, Term};
use crate::program::{ClauseId, Database};

/// Resource limits for one engine run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_depth: usize,
    pub max_nodes: usize,
}

impl Default for Budget {
    fn default() -> Budget {
        Budget { max_depth: 512, max_nodes: 1_000_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeStatus {
    /// A literal is selected and the node has been expanded.
    Inner,
    /// No resolvent exists, or the selected negative literal's atom succeeds.
    Failure,
    /// The empty goal.
    Success,
    /// A non-empty goal left unexpanded; only occurs in incomplete trees.
    Pending,
}

/// A node of a (possibly incomplete) SLDNF tree. `step` is the substitution
/// used to reach the node from its parent, so the relevant substitution of a
/// node is the composition of the steps on its path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SldNode {
    pub goal: Vec<Literal>,
    pub selected: Option<usize>,
    pub step: Substitution,
    pub clause: Option<ClauseId>,
    pub depth: usize,
    pub status: NodeStatus,
    pub children: Vec<SldNode>,
}

impl SldNode {
    /// An unexpanded node: □ is a success leaf, anything else is pending.
    pub fn leaf(goal: Vec<Literal>, step: Substitution, clause: Option<ClauseId>, depth: usize) -> SldNode {
        let status = if goal.is_empty() { NodeStatus::Success } else { NodeStatus::Pending };
        SldNode { goal, selected: None, step, clause, depth, status, children: Vec::new() }
    }

    pub fn is_potential_success(&self) -> bool {
        matches!(self.status, NodeStatus::Success | NodeStatus::Pending)
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(SldNode::node_count).sum::<usize>()
    }

    pub fn max_depth(&self) -> usize {
        self.children.iter().map(SldNode::max_depth).max().unwrap_or(self.depth).max(self.depth)
    }

    /// True when every leaf is a failure leaf.
    pub fn is_finitely_failed(&self) -> bool {
        match self.status {
            NodeStatus::Failure => true,
            NodeStatus::Success | NodeStatus::Pending => false,
            NodeStatus::Inner => self.children.iter().all(SldNode::is_finitely_failed),
        }
    }

    pub fn has_success(&self) -> bool {
        self.status == NodeStatus::Success || self.children.iter().any(SldNode::has_success)
    }

    /// Relevant substitutions of all potential-success leaves, restricted to
    /// the variables of the root goal.
    pub fn coverage(&self) -> SubstitutionSet {
        let vars: BTreeSet<String> = conj_vars(&self.goal).into_iter().collect();
        let mut out = SubstitutionSet::new();
        self.walk_leaves(&Substitution::empty(), &mut |node, theta| {
            if node.is_potential_success() {
                out.insert(theta.restrict(&vars));
            }
        });
        out
    }

    fn walk_leaves(&self, acc: &Substitution, f: &mut impl FnMut(&SldNode, &Substitution)) {
        let theta = acc.compose(&self.step);
        if self.children.is_empty() {
            f(self, &theta);
        }
        for c in &self.children {
            c.walk_leaves(&theta, f);
        }
    }

    /// All refutations contained in the tree, leftmost first.
    pub fn refutations(&self) -> Vec<Refutation> {
        let mut out = Vec::new();
        let mut path: Vec<&SldNode> = Vec::new();
        collect_refutations(self, &mut path, &mut out);
        out
    }

    /// Applies `f` to every variable in goals and step substitutions.
    pub fn map_vars(&self, f: &impl Fn(&str) -> String) -> SldNode {
        SldNode {
            goal: self.goal.iter().map(|l| l.map_vars(f)).collect(),
            selected: self.selected,
            step: self.step.map_vars(f),
            clause: self.clause,
            depth: self.depth,
            status: self.status,
            children: self.children.iter().map(|c| c.map_vars(f)).collect(),
        }
    }

    /// Shifts the renaming depth of engine variables and node depths by
    /// `offset`, which renames the tree apart from shallower trees.
    pub fn shift_depth(&self, offset: usize) -> SldNode {
        let mut t = self.map_vars(&|v| shift_var(v, offset));
        t.add_depth(offset);
        t
    }

    fn add_depth(&mut self, offset: usize) {
        self.depth += offset;
        for c in &mut self.children {
            c.add_depth(offset);
        }
    }

    /// Replaces the node at `path` (child indices from the root) by a pending
    /// leaf, turning a complete tree into an incomplete one.
    pub fn truncate_at(&mut self, path: &[usize]) -> Result<()> {
        let mut node = self;
        for &i in path {
            node = node.children.get_mut(i).ok_or_else(|| Error::Proof(format!("no child {i} on truncation path")))?;
        }
        node.children.clear();
        node.selected = None;
        node.status = if node.goal.is_empty() { NodeStatus::Success } else { NodeStatus::Pending };
        Ok(())
    }

    fn fmt_indent(&self, f: &mut fmt::Formatter<'_>, indent: usize) -> fmt::Result {
        let mark = match self.status {
            NodeStatus::Failure => " [fail]",
            NodeStatus::Pending => " [open]",
            _ => "",
        };
        writeln!(f, "{:indent$}← {}{}   {}", "", fmt_conj(&self.goal), mark, self.step, indent = indent)?;
        for c in &self.children {
            c.fmt_indent(f, indent + 2)?;
        }
        Ok(())
    }
}

impl fmt::Display for SldNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_indent(f, 0)
    }
}

fn collect_refutations<'a>(node: &'a SldNode, path: &mut Vec<&'a SldNode>, out: &mut Vec<Refutation>) {
    path.push(node);
    if node.status == NodeStatus::Success {
        let goals = path.iter().map(|n| n.goal.clone()).collect();
        let substs = path[1..].iter().map(|n| n.step.clone()).collect();
        let clauses = path[1..].iter().map(|n| n.clause).collect();
        out.push(Refutation { goals, substs, clauses });
    }
    for c in &node.children {
        collect_refutations(c, path, out);
    }
    path.pop();
}

/// Engine-generated variable for clause variable `k` renamed at depth `d`.
pub fn engine_var(depth: usize, k: usize) -> String {
    format!("V_{depth}_{k}")
}

fn parse_engine_var(v: &str) -> Option<(usize, usize)> {
    let rest = v.strip_prefix("V_")?;
    let (d, k) = rest.split_once('_')?;
    Some((d.parse().ok()?, k.parse().ok()?))
}

fn shift_var(v: &str, offset: usize) -> String {
    match parse_engine_var(v) {
        Some((d, k)) => engine_var(d + offset, k),
        None => v.to_string(),
    }
}

/// An SLDNF refutation under the standard rule: `goals[0]` is the query,
/// the last goal is □, and step `i` leads from `goals[i]` to `goals[i+1]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Refutation {
    pub goals: Vec<Vec<Literal>>,
    pub substs: Vec<Substitution>,
    pub clauses: Vec<Option<ClauseId>>,
}

impl Refutation {
    /// The refutation of □ consisting of the empty goal alone.
    pub fn trivial() -> Refutation {
        Refutation { goals: vec![Vec::new()], substs: Vec::new(), clauses: Vec::new() }
    }

    pub fn root(&self) -> &[Literal] {
        &self.goals[0]
    }

    pub fn steps(&self) -> usize {
        self.substs.len()
    }

    /// Relevant substitution of `goals[k]`: the composition of the first `k`
    /// steps.
    pub fn relevant(&self, k: usize) -> Substitution {
        self.substs[..k].iter().fold(Substitution::empty(), |acc, s| acc.compose(s))
    }

    /// Computed answer: all steps composed, restricted to the query variables.
    pub fn answer(&self) -> Substitution {
        let vars: BTreeSet<String> = conj_vars(self.root()).into_iter().collect();
        self.relevant(self.steps()).restrict(&vars)
    }

    /// The clause used in the first step, if that step resolved a program
    /// clause.
    pub fn first_clause(&self) -> Option<ClauseId> {
        self.clauses.first().copied().flatten()
    }

    /// The refutation without its first goal.
    pub fn tail(&self) -> Refutation {
        Refutation {
            goals: self.goals[1..].to_vec(),
            substs: self.substs[1..].to_vec(),
            clauses: self.clauses[1..].to_vec(),
        }
    }

    pub fn map_vars(&self, f: &impl Fn(&str) -> String) -> Refutation {
        Refutation {
            goals: self.goals.iter().map(|g| g.iter().map(|l| l.map_vars(f)).collect()).collect(),
            substs: self.substs.iter().map(|s| s.map_vars(f)).collect(),
            clauses: self.clauses.clone(),
        }
    }
}

impl fmt::Display for Refutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .goals
            .iter()
            .map(|g| if g.is_empty() { "□".to_string() } else { format!("← {}", fmt_conj(g)) })
            .collect();
        write!(f, "{}", parts.join(", "))
    }
}

/// Standard selection: the leftmost literal, provided it is executable
/// (positive, or a ground negative literal). `None` means the goal
/// flounders.
pub fn select(goal: &[Literal]) -> Option<usize> {
    let first = goal.first()?;
    let executable = if first.atom.is_builtin() {
        first.atom.pred == "=" && first.positive || first.atom.is_ground()
    } else {
        first.positive || first.atom.is_ground()
    };
    executable.then_some(0)
}

fn compare_terms(a: &Term, b: &Term) -> std::cmp::Ordering {
    match (a, b) {
        (Term::Int(x), Term::Int(y)) => x.cmp(y),
        (Term::Int(_), _) => std::cmp::Ordering::Less,
        (_, Term::Int(_)) => std::cmp::Ordering::Greater,
        _ => a.cmp(b),
    }
}

/// Evaluates a ground comparison. `=` on non-ground arguments is handled by
/// unification before this is called.
fn eval_builtin(a: &Atom) -> bool {
    let (l, r) = (&a.args[0], &a.args[1]);
    match a.pred.as_str() {
        "=" => l == r,
        "\\=" => l != r,
        "<" => compare_terms(l, r).is_lt(),
        "<=" => compare_terms(l, r).is_le(),
        _ => false,
    }
}

/// Result of evaluating a ground negative literal's atom.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegOutcome {
    /// The atom has a refutation, so the negative literal fails.
    Succeeds(Refutation),
    /// The atom's complete tree is finitely failed.
    Fails(SldNode),
}

/// Resolution engine over one database. Subsidiary negative queries are
/// memoized per ground atom for the lifetime of the engine.
pub struct Engine<'a> {
    db: &'a Database,
    budget: Budget,
    nodes: usize,
    memo: BTreeMap<Atom, NegOutcome>,
    active: Vec<Atom>,
}

impl<'a> Engine<'a> {
    pub fn new(db: &'a Database, budget: Budget) -> Engine<'a> {
        Engine { db, budget, nodes: 0, memo: BTreeMap::new(), active: Vec::new() }
    }

    pub fn database(&self) -> &Database {
        self.db
    }

    /// Number of tree nodes (resolution steps) built so far, including
    /// subsidiary trees.
    pub fn nodes_built(&self) -> usize {
        self.nodes
    }

    /// The complete SLDNF tree for `← goal·tau`.
    pub fn build_tree(&mut self, goal: &[Literal], tau: &Substitution) -> Result<SldNode> {
        let root = tau.apply_conj(goal);
        self.expand(root, Substitution::empty(), None, 0)
    }

    fn expand(
        &mut self,
        goal: Vec<Literal>,
        step: Substitution,
        clause: Option<ClauseId>,
        depth: usize,
    ) -> Result<SldNode> {
        self.nodes += 1;
        if self.nodes > self.budget.max_nodes {
            return Err(Error::Budget(format!(
                "more than {} nodes; frontier goal ← {}",
                self.budget.max_nodes,
                fmt_conj(&goal)
            )));
        }
        if depth > self.budget.max_depth {
            return Err(Error::Budget(format!(
                "depth {} exceeded; frontier goal ← {}",
                self.budget.max_depth,
                fmt_conj(&goal)
            )));
        }
        let mut node = SldNode::leaf(goal, step, clause, depth);
        if node.goal.is_empty() {
            return Ok(node);
        }
        let Some(sel) = select(&node.goal) else {
            return Err(Error::Flounder(format!("no executable literal in ← {}", fmt_conj(&node.goal))));
        };
        node.selected = Some(sel);
        let lit = node.goal[sel].clone();
        let rest: Vec<Literal> = node.goal[sel + 1..].to_vec();
        let mut children = Vec::new();
        if lit.atom.is_builtin() {
            let resolvent = if lit.positive && lit.atom.pred == "=" {
                unify_lists(&lit.atom.args[..1], &lit.atom.args[1..])
            } else {
                (eval_builtin(&lit.atom) == lit.positive).then(Substitution::empty)
            };
            if let Some(s) = resolvent {
                let next = s.apply_conj(&rest);
                children.push(self.expand(next, s, None, depth + 1)?);
            }
        } else if lit.positive {
            let candidates: Vec<_> = self.db.definition(&lit.atom.key()).cloned().collect();
            for c in candidates {
                let vars = c.vars();
                let rename = |v: &str| engine_var(depth + 1, vars.iter().position(|w| w == v).unwrap_or(0));
                let head = c.head.map_vars(&rename);
                if let Some(s) = unify_lists(&head.args, &lit.atom.args) {
                    let mut next: Vec<Literal> = c.body.iter().map(|l| l.map_vars(&rename)).collect();
                    next.extend(rest.iter().cloned());
                    let next = s.apply_conj(&next);
                    children.push(self.expand(next, s, Some(c.id), depth + 1)?);
                }
            }
        } else {
            match self.negation(&lit.atom)? {
                NegOutcome::Succeeds(_) => {}
                NegOutcome::Fails(_) => {
                    children.push(self.expand(rest, Substitution::empty(), None, depth + 1)?);
                }
            }
        }
        node.status = if children.is_empty() { NodeStatus::Failure } else { NodeStatus::Inner };
        node.children = children;
        Ok(node)
    }

    /// Decides a ground atom for negation as failure, building (and caching)
    /// either a refutation or a finitely failed tree.
    pub fn negation(&mut self, atom: &Atom) -> Result<NegOutcome> {
        if let Some(o) = self.memo.get(atom) {
            return Ok(o.clone());
        }
        if self.active.contains(atom) {
            return Err(Error::Proof(format!("negation of {atom} depends on itself")));
        }
        self.active.push(atom.clone());
        let tree = self.expand(vec![Literal::pos(atom.clone())], Substitution::empty(), None, 0);
        self.active.pop();
        let tree = tree?;
        let outcome = match tree.refutations().into_iter().next() {
            Some(r) => NegOutcome::Succeeds(r),
            None => NegOutcome::Fails(tree),
        };
        self.memo.insert(atom.clone(), outcome.clone());
        Ok(outcome)
    }

    /// Refutations of `← goal·tau` in depth-first left-to-right order, paired
    /// with their computed answers.
    pub fn answers(&mut self, goal: &[Literal], tau: &Substitution) -> Result<Vec<(Refutation, Substitution)>> {
        let tree = self.build_tree(goal, tau)?;
        Ok(tree.refutations().into_iter().map(|r| (r.answer(), r)).map(|(a, r)| (r, a)).collect())
    }

    /// The leftmost refutation of `← goal·tau`, if any.
    pub fn first_refutation(&mut self, goal: &[Literal], tau: &Substitution) -> Result<Option<Refutation>> {
        Ok(self.build_tree(goal, tau)?.refutations().into_iter().next())
    }

    /// An SLDNF proof for `← goal·tau`: the main refutation (or the finitely
    /// failed tree when there is none) closed under the subsidiary proofs of
    /// every selected negative literal.
    pub fn build_proof(&mut self, goal: &[Literal], tau: &Substitution) -> Result<SldnfProof> {
        let tree = self.build_tree(goal, tau)?;
        let main = match tree.refutations().into_iter().next() {
            Some(r) => MainProof::Refutation(r),
            None => MainProof::Failed(tree),
        };
        let support = match &main {
            MainProof::Refutation(r) => self.support(std::slice::from_ref(r), &[])?,
            MainProof::Failed(t) => self.support(&[], std::slice::from_ref(t))?,
        };
        Ok(SldnfProof {
            goal: goal.to_vec(),
            tau: tau.clone(),
            main,
            refutations: support.refutations,
            failed: support.failed,
        })
    }

    /// Closes refutations and (possibly incomplete) trees under subsidiary
    /// proofs: a finitely failed tree for every negative literal selected in
    /// a refutation, and a refutation for every negative literal selected at
    /// a failure leaf.
    pub fn support(&mut self, refs: &[Refutation], trees: &[SldNode]) -> Result<Support> {
        let mut out = Support::default();
        let mut pending_refs: Vec<Refutation> = refs.to_vec();
        let mut pending_trees: Vec<SldNode> = trees.to_vec();
        while !pending_refs.is_empty() || !pending_trees.is_empty() {
            if let Some(r) = pending_refs.pop() {
                for g in &r.goals {
                    if let Some(l) = g.first().filter(|l| !l.positive && !l.atom.is_builtin()) {
                        if out.failed.contains_key(&l.atom) {
                            continue;
                        }
                        match self.negation(&l.atom)? {
                            NegOutcome::Fails(t) => {
                                out.failed.insert(l.atom.clone(), t.clone());
                                pending_trees.push(t);
                            }
                            NegOutcome::Succeeds(_) => {
                                return Err(Error::Proof(format!("refutation selects not {} but it succeeds", l.atom)))
                            }
                        }
                    }
                }
            }
            if let Some(t) = pending_trees.pop() {
                let mut atoms = Vec::new();
                failure_negations(&t, &mut atoms);
                for a in atoms {
                    if out.refutations.contains_key(&a) {
                        continue;
                    }
                    match self.negation(&a)? {
                        NegOutcome::Succeeds(r) => {
                            out.refutations.insert(a, r.clone());
                            pending_refs.push(r);
                        }
                        NegOutcome::Fails(_) => {
                            return Err(Error::Proof(format!("failure leaf selects not {a} but it fails")))
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Subsidiary proofs keyed by ground atom.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Support {
    pub refutations: BTreeMap<Atom, Refutation>,
    pub failed: BTreeMap<Atom, SldNode>,
}

fn failure_negations(t: &SldNode, out: &mut Vec<Atom>) {
    if t.status == NodeStatus::Failure {
        if let Some(l) = t.selected.map(|i| &t.goal[i]).filter(|l| !l.positive && !l.atom.is_builtin()) {
            out.push(l.atom.clone());
        }
    }
    for c in &t.children {
        failure_negations(c, out);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MainProof {
    Refutation(Refutation),
    Failed(SldNode),
}

/// A closed set of refutations and finitely failed trees: one failed tree
/// per negative literal selected in a refutation, and one refutation per
/// negative literal selected at a failure leaf, keyed by ground atom.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SldnfProof {
    pub goal: Vec<Literal>,
    pub tau: Substitution,
    pub main: MainProof,
    pub refutations: BTreeMap<Atom, Refutation>,
    pub failed: BTreeMap<Atom, SldNode>,
}

impl SldnfProof {
    pub fn main_refutation(&self) -> Option<&Refutation> {
        match &self.main {
            MainProof::Refutation(r) => Some(r),
            MainProof::Failed(_) => None,
        }
    }
}

/// Splits a refutation of `← L1 ∧ … ∧ Ln` into the part-refutation for
/// `← L1` and the rest-refutation for `← (L2 ∧ … ∧ Ln)σ`.
pub fn split_refutation(r: &Refutation) -> Result<(Refutation, Refutation)> {
    let n = r.root().len();
    if n == 0 {
        return Err(Error::Proof("cannot split the refutation of □".into()));
    }
    let keep = n - 1;
    let cut = r
        .goals
        .iter()
        .position(|g| g.len() == keep)
        .ok_or_else(|| Error::Proof("refutation never reaches the remaining literals".into()))?;
    if r.goals[..cut].iter().any(|g| g.len() < keep) {
        return Err(Error::Proof("refutation is not shaped by the standard rule".into()));
    }
    let part = Refutation {
        goals: r.goals[..=cut].iter().map(|g| g[..g.len() - keep].to_vec()).collect(),
        substs: r.substs[..cut].to_vec(),
        clauses: r.clauses[..cut].to_vec(),
    };
    let rest = Refutation {
        goals: r.goals[cut..].to_vec(),
        substs: r.substs[cut..].to_vec(),
        clauses: r.clauses[cut..].to_vec(),
    };
    Ok((part, rest))
}

/// Composes a refutation `r1` of `← G1` with a refutation `r2` of `← G2σ1`,
/// where σ1 is the answer of `r1`, into a refutation of `← G1 ∧ G2`.
pub fn compose_refutations(r1: &Refutation, g2: &[Literal], r2: &Refutation) -> Result<Refutation> {
    let last = r1.steps();
    if r2.root() != r1.relevant(last).apply_conj(g2).as_slice() {
        return Err(Error::Proof(format!(
            "second refutation starts with ← {} instead of the instantiated ← {}",
            fmt_conj(r2.root()),
            fmt_conj(&r1.relevant(last).apply_conj(g2))
        )));
    }
    let mut goals = Vec::new();
    for k in 0..last {
        let mut g = r1.goals[k].clone();
        g.extend(r1.relevant(k).apply_conj(g2));
        goals.push(g);
    }
    goals.extend(r2.goals.iter().cloned());
    let mut substs = r1.substs.clone();
    substs.extend(r2.substs.iter().cloned());
    let mut clauses = r1.clauses.clone();
    clauses.extend(r2.clauses.iter().cloned());
    Ok(Refutation { goals, substs, clauses })
}

/// A rest tree produced by splitting: `theta` is the relevant substitution
/// of the node where the first literal was used up, restricted to that
/// literal's variables.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestTree {
    pub theta: Substitution,
    pub tree: SldNode,
}

/// Splits a standard-rule tree for `← L1 ∧ … ∧ Ln` into the part tree for
/// `← L1` and the rest trees for the remaining literals.
pub fn split_tree(t: &SldNode) -> (SldNode, Vec<RestTree>) {
    let n = t.goal.len();
    if n <= 1 {
        return (t.clone(), Vec::new());
    }
    let keep = n - 1;
    let vars: BTreeSet<String> = t.goal[0].vars().into_iter().collect();
    let mut rests = Vec::new();
    let part = split_node(t, keep, &Substitution::empty(), &vars, &mut rests, true);
    (part, rests)
}

fn split_node(
    node: &SldNode,
    keep: usize,
    acc: &Substitution,
    vars: &BTreeSet<String>,
    rests: &mut Vec<RestTree>,
    is_root: bool,
) -> SldNode {
    let theta = if is_root { Substitution::empty() } else { acc.compose(&node.step) };
    let step = if is_root { Substitution::empty() } else { node.step.clone() };
    if node.goal.len() <= keep {
        let mut tree = node.clone();
        tree.step = Substitution::empty();
        tree.clause = None;
        rests.push(RestTree { theta: theta.restrict(vars), tree });
        return SldNode::leaf(Vec::new(), step, node.clause, node.depth);
    }
    let goal = node.goal[..node.goal.len() - keep].to_vec();
    SldNode {
        goal,
        selected: node.selected,
        step,
        clause: node.clause,
        depth: node.depth,
        status: node.status,
        children: node.children.iter().map(|c| split_node(c, keep, &theta, vars, rests, false)).collect(),
    }
}

/// Composition of an incomplete tree `t` for `← G1` with trees for
/// `← G2σ`, one per `σ` in `parts`. Every potential-success leaf of `t`
/// whose restricted relevant substitution is a key of `parts` receives the
/// corresponding tree, unless `leaves` is given and does not contain the
/// leaf's path. With all of `coverage(t)` as keys and no leaf filter this is
/// the complete composition.
pub fn compose_trees(
    t: &SldNode,
    g2: &[Literal],
    parts: &BTreeMap<Substitution, SldNode>,
    leaves: Option<&BTreeSet<Vec<usize>>>,
) -> Result<SldNode> {
    let cover = t.coverage();
    for s in parts.keys() {
        if !cover.contains(s) {
            return Err(Error::Proof(format!("{s} is not in the coverage of the first tree")));
        }
    }
    for (s, tree) in parts {
        let expected = s.apply_conj(g2);
        if tree.goal != expected {
            return Err(Error::Proof(format!(
                "tree for {s} has root ← {} instead of ← {}",
                fmt_conj(&tree.goal),
                fmt_conj(&expected)
            )));
        }
    }
    let offset = t.max_depth();
    let shifted: BTreeMap<Substitution, SldNode> =
        parts.iter().map(|(s, p)| (s.clone(), p.shift_depth(offset))).collect();
    let vars: BTreeSet<String> = conj_vars(&t.goal).into_iter().collect();
    let mut path = Vec::new();
    Ok(compose_node(t, g2, &shifted, leaves, &vars, &Substitution::empty(), &mut path))
}

fn compose_node(
    k: &SldNode,
    g2: &[Literal],
    parts: &BTreeMap<Substitution, SldNode>,
    leaves: Option<&BTreeSet<Vec<usize>>>,
    vars: &BTreeSet<String>,
    acc: &Substitution,
    path: &mut Vec<usize>,
) -> SldNode {
    let theta = acc.compose(&k.step);
    if k.is_potential_success() {
        let sigma = theta.restrict(vars);
        let chosen = leaves.is_none_or(|ls| ls.contains(path));
        if let (Some(tree), true) = (parts.get(&sigma), chosen) {
            let mut grafted = graft(k, tree, &Substitution::empty());
            grafted.step = k.step.clone();
            grafted.clause = k.clause;
            return grafted;
        }
    }
    let mut goal = k.goal.clone();
    goal.extend(theta.apply_conj(g2));
    let status = match k.status {
        NodeStatus::Success if !goal.is_empty() => NodeStatus::Pending,
        s => s,
    };
    let mut children = Vec::new();
    for (i, c) in k.children.iter().enumerate() {
        path.push(i);
        children.push(compose_node(c, g2, parts, leaves, vars, &theta, path));
        path.pop();
    }
    SldNode { goal, selected: k.selected, step: k.step.clone(), clause: k.clause, depth: k.depth, status, children }
}

/// Every node `k'` of `tree` becomes `kθ ∧ k'`, with θ the relevant
/// substitution of `k'`; the selected literal stays the one from `tree`.
fn graft(k: &SldNode, node: &SldNode, acc: &Substitution) -> SldNode {
    let theta = acc.compose(&node.step);
    let prefix = theta.apply_conj(&k.goal);
    let shift = prefix.len();
    let mut goal = prefix;
    goal.extend(node.goal.iter().cloned());
    let status = match node.status {
        NodeStatus::Success if !goal.is_empty() => NodeStatus::Pending,
        s => s,
    };
    SldNode {
        goal,
        selected: node.selected.map(|i| i + shift),
        step: node.step.clone(),
        clause: node.clause,
        depth: k.depth + node.depth,
        status,
        children: node.children.iter().map(|c| graft(k, c, &theta)).collect(),
    }
}

/// A bijective variable renaming `ρ` with `fromρ = to`, if the two
/// conjunctions are variants of each other.
pub fn variant_renaming(from: &[Literal], to: &[Literal]) -> Option<BTreeMap<String, String>> {
    if from.len() != to.len() {
        return None;
    }
    let mut fwd: BTreeMap<String, String> = BTreeMap::new();
    let mut bwd: BTreeMap<String, String> = BTreeMap::new();
    for (a, b) in from.iter().zip(to) {
        if a.positive != b.positive || a.atom.pred != b.atom.pred || a.atom.args.len() != b.atom.args.len() {
            return None;
        }
        for (x, y) in a.atom.args.iter().zip(&b.atom.args) {
            if !variant_term(x, y, &mut fwd, &mut bwd) {
                return None;
            }
        }
    }
    Some(fwd)
}

fn variant_term(x: &Term, y: &Term, fwd: &mut BTreeMap<String, String>, bwd: &mut BTreeMap<String, String>) -> bool {
    match (x, y) {
        (Term::Var(a), Term::Var(b)) => {
            let ok_f = fwd.get(a).is_none_or(|v| v == b);
            let ok_b = bwd.get(b).is_none_or(|v| v == a);
            if ok_f && ok_b {
                fwd.insert(a.clone(), b.clone());
                bwd.insert(b.clone(), a.clone());
            }
            ok_f && ok_b
        }
        (Term::Compound(f, xs), Term::Compound(g, ys)) => {
            f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(a, b)| variant_term(a, b, fwd, bwd))
        }
        _ => x == y,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{parse_clause, Clause};
    use crate::syntax::Parser;

    const CH5: &str = "p(X) :- t(X), not s(X).
        r(X,Y) :- u(Y), not v(X).
        q(X,Y) :- t(Y), u(X).
        t(X) :- u(X).
        t(a).
        u(b).
        s(b).";

    pub(crate) fn ch5() -> Database {
        let mut p = Parser::new(CH5).unwrap();
        let mut cs: Vec<Clause> = Vec::new();
        while !p.at_end() {
            cs.push(parse_clause(&mut p).unwrap());
        }
        Database::permissive(cs)
    }

    fn goal(text: &str) -> Vec<Literal> {
        let mut p = Parser::new(text).unwrap();
        let mut out = vec![p.literal().unwrap()];
        while p.eat(&crate::syntax::Tok::Comma) {
            out.push(p.literal().unwrap());
        }
        out
    }

    #[test]
    fn selection_rule() {
        assert_eq!(select(&goal("employee(E), not access(E,menu)")), Some(0));
        assert_eq!(select(&goal("not p1")), Some(0));
        assert_eq!(select(&goal("not q(X)")), None);
        assert_eq!(select(&goal("X < 2")), None);
        assert_eq!(select(&goal("X = a")), Some(0));
    }

    #[test]
    fn refutation_for_p() {
        let db = ch5();
        let mut e = Engine::new(&db, Budget::default());
        let answers = e.answers(&goal("p(X)"), &Substitution::empty()).unwrap();
        assert_eq!(answers.len(), 1);
        assert_eq!(answers[0].1.to_string(), "{X/a}");
        let r = &answers[0].0;
        assert_eq!(r.to_string(), "← p(X), ← t(X), not s(X), ← not s(a), □");
    }

    #[test]
    fn empty_db_single_failure_leaf() {
        let db = Database::new();
        let mut e = Engine::new(&db, Budget::default());
        let t = e.build_tree(&goal("p(a)"), &Substitution::empty()).unwrap();
        assert_eq!(t.status, NodeStatus::Failure);
        assert!(t.children.is_empty());
        assert!(t.is_finitely_failed());
        assert!(t.coverage().is_empty());
    }

    #[test]
    fn empty_goal_is_trivially_refuted() {
        let db = Database::new();
        let mut e = Engine::new(&db, Budget::default());
        let answers = e.answers(&[], &Substitution::empty()).unwrap();
        assert_eq!(answers.len(), 1);
        assert!(answers[0].1.is_empty());
        assert_eq!(answers[0].0, Refutation::trivial());
    }

    #[test]
    fn floundering_is_an_error() {
        let db = Database::new();
        let mut e = Engine::new(&db, Budget::default());
        assert!(matches!(e.build_tree(&goal("not q(X)"), &Substitution::empty()), Err(Error::Flounder(_))));
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let mut p = Parser::new("loop(X) :- loop(X).").unwrap();
        let db = Database::from_clauses(vec![parse_clause(&mut p).unwrap()]).unwrap();
        let mut e = Engine::new(&db, Budget { max_depth: 20, max_nodes: 1000 });
        assert!(matches!(e.build_tree(&goal("loop(a)"), &Substitution::empty()), Err(Error::Budget(_))));
    }

    #[test]
    fn composition_of_example_refutations() {
        let db = ch5();
        let mut e = Engine::new(&db, Budget::default());
        let r1 = e.first_refutation(&goal("p(X)"), &Substitution::empty()).unwrap().unwrap();
        let s1 = r1.answer();
        let g2 = goal("r(X,Y)");
        let r2 = e.first_refutation(&g2, &s1).unwrap().unwrap();
        assert_eq!(r2.to_string(), "← r(a,Y), ← u(Y), not v(a), ← not v(a), □");
        let r3 = compose_refutations(&r1, &g2, &r2).unwrap();
        assert_eq!(
            r3.to_string(),
            "← p(X), r(X,Y), ← t(X), not s(X), r(X,Y), ← not s(a), r(a,Y), ← r(a,Y), ← u(Y), not v(a), ← not v(a), □"
        );
        assert_eq!(r3.answer().to_string(), "{X/a, Y/b}");
        assert_eq!(r3.answer(), s1.compose(&r2.answer()));
        let (part, rest) = split_refutation(&r3).unwrap();
        assert_eq!((part, rest), (r1, r2));
    }

    #[test]
    fn split_of_example_refutation() {
        let db = ch5();
        let mut e = Engine::new(&db, Budget::default());
        let r = e.first_refutation(&goal("p(X), r(X,Y)"), &Substitution::empty()).unwrap().unwrap();
        let (part, rest) = split_refutation(&r).unwrap();
        assert_eq!(part.to_string(), "← p(X), ← t(X), not s(X), ← not s(a), □");
        assert_eq!(part.answer().to_string(), "{X/a}");
        assert_eq!(rest.root(), goal("r(a,Y)").as_slice());
        assert_eq!(r.answer(), part.answer().compose(&rest.answer()));
        let (p1, r1) = split_refutation(&part).unwrap();
        assert_eq!(p1, part);
        assert_eq!(r1, Refutation::trivial());
    }

    fn abb51(db: &Database) -> SldNode {
        let mut e = Engine::new(db, Budget::default());
        let mut t = e.build_tree(&goal("p(X)"), &Substitution::empty()).unwrap();
        // p(X) → t(X), not s(X) → [u(X), not s(X) | not s(a)]; leave not s(a) open.
        t.truncate_at(&[0, 1]).unwrap();
        t
    }

    #[test]
    fn coverage_of_incomplete_tree() {
        let db = ch5();
        let t = abb51(&db);
        assert_eq!(t.children[0].children[1].goal, goal("not s(a)"));
        let cover = t.coverage();
        assert_eq!(cover.len(), 1);
        assert_eq!(cover.iter().next().unwrap().to_string(), "{X/a}");
        let single = SldNode::leaf(goal("q(a,Y)"), Substitution::empty(), None, 0);
        assert_eq!(single.coverage().into_iter().collect::<Vec<_>>(), vec![Substitution::empty()]);
    }

    #[test]
    fn composition_of_example_trees_is_finitely_failed() {
        let db = ch5();
        let t = abb51(&db);
        let g2 = goal("q(X,Y)");
        let sigma = t.coverage().into_iter().next().unwrap();
        let mut e = Engine::new(&db, Budget::default());
        let part = e.build_tree(&g2, &sigma).unwrap();
        assert!(part.is_finitely_failed());
        let parts: BTreeMap<_, _> = [(sigma, part)].into_iter().collect();
        let composed = compose_trees(&t, &g2, &parts, None).unwrap();
        assert!(composed.is_finitely_failed());
        assert_eq!(composed.goal, goal("p(X), q(X,Y)"));
        let grafted = &composed.children[0].children[1];
        assert_eq!(grafted.goal, goal("not s(a), q(a,Y)"));
        assert_eq!(grafted.selected, Some(1));
        let none = compose_trees(&t, &g2, &BTreeMap::new(), None).unwrap();
        assert_eq!(none.children[0].children[1].goal, goal("not s(a), q(a,Y)"));
        assert_eq!(none.children[0].children[1].status, NodeStatus::Pending);
    }

    #[test]
    fn split_of_example_tree() {
        let db = ch5();
        let mut e = Engine::new(&db, Budget::default());
        let f = e.build_tree(&goal("p(X), q(X,Y)"), &Substitution::empty()).unwrap();
        assert!(f.is_finitely_failed());
        let (part, rests) = split_tree(&f);
        assert_eq!(rests.len(), 1);
        assert_eq!(rests[0].theta.to_string(), "{X/a}");
        assert_eq!(rests[0].tree.goal, goal("q(a,Y)"));
        assert_eq!(part.goal, goal("p(X)"));
        assert_eq!(part.coverage().iter().map(|s| s.to_string()).collect::<Vec<_>>(), vec!["{X/a}"]);
    }

    #[test]
    fn proof_collects_subsidiaries() {
        let db = ch5();
        let mut e = Engine::new(&db, Budget::default());
        let proof = e.build_proof(&goal("p(X)"), &Substitution::empty()).unwrap();
        assert!(proof.main_refutation().is_some());
        let keys: Vec<String> = proof.failed.keys().map(|a| a.to_string()).collect();
        assert_eq!(keys, vec!["s(a)"]);
        assert!(proof.refutations.is_empty());
        let proof = e.build_proof(&goal("not p(b)"), &Substitution::empty()).unwrap();
        assert_eq!(proof.failed.keys().map(|a| a.to_string()).collect::<Vec<_>>(), vec!["p(b)"]);
        assert_eq!(proof.refutations.keys().map(|a| a.to_string()).collect::<Vec<_>>(), vec!["s(b)"]);
    }

    #[test]
    fn builtins_evaluate() {
        let mut p = Parser::new("ok(X) :- c(X,N), N <= 2, X \\= b.  c(a,1). c(b,2). c(d,3).").unwrap();
        let mut cs = Vec::new();
        while !p.at_end() {
            cs.push(parse_clause(&mut p).unwrap());
        }
        let db = Database::from_clauses(cs).unwrap();
        let mut e = Engine::new(&db, Budget::default());
        let a: Vec<String> =
            e.answers(&goal("ok(X)"), &Substitution::empty()).unwrap().iter().map(|(_, s)| s.to_string()).collect();
        assert_eq!(a, vec!["{X/a}"]);
    }

    #[test]
    fn variants() {
        let m = variant_renaming(&goal("p(V_1_0, X), q(X)"), &goal("p(E, Z), q(Z)")).unwrap();
        assert_eq!(m.get("V_1_0").map(String::as_str), Some("E"));
        assert!(variant_renaming(&goal("p(X, X)"), &goal("p(A, B)")).is_none());
    }
}
