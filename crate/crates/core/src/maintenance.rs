//! Incremental integrity checking on proof trees. A transaction is first
//! classified against the tree; maintenance situations shrink negative
//! annotations without any engine call, conflicts are cleaned up to the
//! next polarity switch, re-proved there against the updated database and
//! merged back in. Unresolved substitutions escalate towards the root, where
//! a full re-proof decides the verdict.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::compiler::CompiledConstraint;
use crate::engine::{Budget, Engine, SldNode};
use crate::error::{Error, Result};
use crate::logic::{mgu, restrict_set, Atom, Literal, Substitution, SubstitutionSet, SubstitutionTuple};
use crate::program::{apply_transaction, validate_transaction, Clause, ClauseId, Database, Transaction};
use crate::prooftree::{prove, Annotation, Builder, Evidence, Link, NodeId, NodeKind, ProofTree};

/// A transaction resolved against the database it applies to.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Change {
    pub del_facts: Vec<Clause>,
    pub add_facts: Vec<Clause>,
    /// Deleted rules with their ids in the old database.
    pub del_rules: BTreeMap<ClauseId, Clause>,
    /// Added rules with their ids in the new database.
    pub add_rules: BTreeMap<ClauseId, Clause>,
}

impl Change {
    /// Applies `txn` to `db`, returning the new database and the change.
    pub fn apply(db: &Database, txn: &Transaction) -> Result<(Database, Change)> {
        let resolved = validate_transaction(db, txn)?;
        let (post, added) = apply_transaction(db, txn)?;
        let mut change = Change::default();
        for id in resolved.del_ids {
            let c = db.clause(id).cloned().ok_or_else(|| Error::Transaction(format!("unknown clause {id}")))?;
            if c.is_fact() {
                change.del_facts.push(c);
            } else {
                change.del_rules.insert(id, c);
            }
        }
        for id in added {
            let c = post.clause(id).cloned().ok_or_else(|| Error::Transaction(format!("unknown clause {id}")))?;
            if c.is_fact() {
                change.add_facts.push(c);
            } else {
                change.add_rules.insert(id, c);
            }
        }
        Ok((post, change))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HitKind {
    /// A deleted fact was an answer at a negative leaf.
    DelNegLeaf,
    /// A deleted rule built a negative AND node.
    DelRuleNegAnd,
    /// A deleted fact was used at a positive leaf.
    DelPosLeaf,
    /// An added fact is a new answer at a negative leaf.
    AddNegLeaf,
    /// A deleted rule built a positive AND node.
    DelRulePosAnd,
    /// An added rule defines the atom of a negative OR node.
    AddRuleNegOr,
}

impl HitKind {
    pub fn is_conflict(self) -> bool {
        !matches!(self, HitKind::DelNegLeaf | HitKind::DelRuleNegAnd)
    }

    pub const CONFLICTS: [HitKind; 4] =
        [HitKind::DelPosLeaf, HitKind::AddNegLeaf, HitKind::DelRulePosAnd, HitKind::AddRuleNegOr];
}

impl fmt::Display for HitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            HitKind::DelNegLeaf => "del-neg-leaf",
            HitKind::DelRuleNegAnd => "del-rule-neg-AND",
            HitKind::DelPosLeaf => "del-pos-leaf",
            HitKind::AddNegLeaf => "add-neg-leaf",
            HitKind::DelRulePosAnd => "del-rule-pos-AND",
            HitKind::AddRuleNegOr => "add-rule-neg-OR",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hit {
    pub node: NodeId,
    pub clause: Clause,
    pub kind: HitKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub maintenance: Vec<Hit>,
    pub conflicts: Vec<Hit>,
}

impl ImpactReport {
    pub fn is_empty(&self) -> bool {
        self.maintenance.is_empty() && self.conflicts.is_empty()
    }
}

/// Answers σ' at a negative leaf with `aσ'` equal to a deleted fact.
fn deleted_answers(a: &Atom, end: &SubstitutionSet, facts: &[&Atom]) -> SubstitutionSet {
    end.iter().filter(|s| facts.contains(&&s.apply_atom(a))).cloned().collect()
}

/// Begin substitutions σ of a negative leaf that gain the added fact `f` as
/// a new answer.
fn gaining(a: &Atom, begin: &SubstitutionSet, end: &SubstitutionSet, f: &Atom) -> SubstitutionSet {
    let known = end.iter().any(|s| &s.apply_atom(a) == f);
    if known {
        return SubstitutionSet::new();
    }
    begin.iter().filter(|s| mgu(&s.apply_atom(a), f).is_some()).cloned().collect()
}

/// Classifies the effect of `change` on every reachable node of `tree`.
/// Conflicts are listed leaves first, each group in preorder.
pub fn detect(tree: &ProofTree, change: &Change) -> ImpactReport {
    let mut report = ImpactReport::default();
    for id in tree.preorder() {
        let n = tree.node(id);
        match (&n.annotation, n.is_leaf()) {
            (Annotation::NegOr { begin, end }, leaf) => {
                let a = n.atom().cloned().unwrap_or_else(|| Atom::prop("?"));
                if leaf {
                    for c in change.del_facts.iter().filter(|c| c.head.key() == a.key()) {
                        if !deleted_answers(&a, end, &[&c.head]).is_empty() {
                            report.maintenance.push(Hit { node: id, clause: c.clone(), kind: HitKind::DelNegLeaf });
                        }
                    }
                    for c in change.add_facts.iter().filter(|c| c.head.key() == a.key()) {
                        if !gaining(&a, begin, end, &c.head).is_empty() {
                            report.conflicts.push(Hit { node: id, clause: c.clone(), kind: HitKind::AddNegLeaf });
                        }
                    }
                }
                if !begin.is_empty() {
                    for (cid, c) in change.add_rules.iter().filter(|(_, c)| c.head.key() == a.key()) {
                        if !n.children.iter().any(|&k| tree.node(k).link == Link::Clause(*cid)) {
                            report.conflicts.push(Hit { node: id, clause: c.clone(), kind: HitKind::AddRuleNegOr });
                        }
                    }
                }
            }
            (Annotation::PosOr { end, .. }, true) => {
                let a = n.atom().cloned().unwrap_or_else(|| Atom::prop("?"));
                for c in change.del_facts.iter().filter(|c| c.head.key() == a.key()) {
                    if end.iter().any(|s| s.apply_atom(&a) == c.head) {
                        report.conflicts.push(Hit { node: id, clause: c.clone(), kind: HitKind::DelPosLeaf });
                    }
                }
            }
            (Annotation::NegAnd(_), _) | (Annotation::PosAnd(_), _) => {
                if let Link::Clause(cid) = n.link {
                    if let Some(c) = change.del_rules.get(&cid) {
                        let kind =
                            if n.kind() == NodeKind::NegAnd { HitKind::DelRuleNegAnd } else { HitKind::DelRulePosAnd };
                        let hit = Hit { node: id, clause: c.clone(), kind };
                        if kind.is_conflict() {
                            report.conflicts.push(hit);
                        } else {
                            report.maintenance.push(hit);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    report.conflicts.sort_by_key(|h| !tree.node(h.node).is_leaf());
    report
}

/// Where cleanup continues: positions of a positive node's tuples, or
/// substitutions of a negative node's sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Cursor {
    Pos(NodeId, BTreeSet<usize>),
    Neg(NodeId, SubstitutionSet),
}

/// Where cleanup stops: the root, or an OR node just below a polarity
/// switch together with the substitutions that lost their proof there.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Barrier {
    Root(BTreeSet<usize>),
    Pos(NodeId, SubstitutionTuple),
    Neg(NodeId, SubstitutionSet),
}

/// Counters reported with every verdict.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub maintenance_hits: usize,
    pub conflicts: usize,
    pub nodes_touched: usize,
    /// Sub-proofs attempted at barriers, one per substitution.
    pub reproof_calls: usize,
    pub full_reproofs: usize,
    /// Negative subtrees built during merging for substitutions that the
    /// other tree let pass without evidence.
    pub merge_builds: usize,
    /// Resolution steps of all engine runs.
    pub engine_nodes: usize,
}

impl Stats {
    pub fn add(&mut self, other: &Stats) {
        self.maintenance_hits += other.maintenance_hits;
        self.conflicts += other.conflicts;
        self.nodes_touched += other.nodes_touched;
        self.reproof_calls += other.reproof_calls;
        self.full_reproofs += other.full_reproofs;
        self.merge_builds += other.merge_builds;
        self.engine_nodes += other.engine_nodes;
    }
}

fn remove_positions<T: Clone>(v: &[T], positions: &BTreeSet<usize>) -> Vec<T> {
    v.iter().enumerate().filter(|(i, _)| !positions.contains(i)).map(|(_, x)| x.clone()).collect()
}

fn generalized_by(s: &SubstitutionSet, delta: &SubstitutionSet) -> SubstitutionSet {
    s.iter().filter(|x| delta.iter().any(|d| d.more_general(x))).cloned().collect()
}

#[cfg(test)]
thread_local! {
    /// Makes positive OR merges drop the other node's end tuple, so tests
    /// can check that the fuzz harness notices a broken merge.
    pub(crate) static BROKEN_MERGE: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Tree surgery that needs no engine: the maintenance procedures and the
/// cleanup ascent.
pub struct Surgery<'t> {
    pub tree: &'t mut ProofTree,
    pub touched: usize,
}

impl<'t> Surgery<'t> {
    pub fn new(tree: &'t mut ProofTree) -> Surgery<'t> {
        Surgery { tree, touched: 0 }
    }

    fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.tree.node(id).parent
    }

    fn child_pos(&self, id: NodeId) -> usize {
        let p = self.parent(id).unwrap_or(id);
        self.tree.node(p).children.iter().position(|&c| c == id).unwrap_or(0)
    }

    fn attached(&self, id: NodeId) -> bool {
        let mut cur = id;
        loop {
            if cur == self.tree.root {
                return true;
            }
            match self.parent(cur) {
                Some(p) if self.tree.node(p).children.contains(&cur) => cur = p,
                _ => return false,
            }
        }
    }

    /// Unhooks `id` from its parent, dropping its position map entry.
    fn detach(&mut self, id: NodeId) {
        let Some(p) = self.parent(id) else { return };
        let k = self.child_pos(id);
        let parent = self.tree.node_mut(p);
        parent.children.remove(k);
        if parent.pi.len() > k {
            parent.pi.remove(k);
        }
        self.tree.node_mut(id).parent = None;
        self.touched += 1;
    }

    fn neg_sets(&self, id: NodeId) -> (SubstitutionSet, SubstitutionSet) {
        match &self.tree.node(id).annotation {
            Annotation::NegOr { begin, end } => (begin.clone(), end.clone()),
            _ => Default::default(),
        }
    }

    fn sequence(&self, id: NodeId) -> Vec<SubstitutionSet> {
        match &self.tree.node(id).annotation {
            Annotation::NegAnd(ss) => ss.clone(),
            _ => Vec::new(),
        }
    }

    fn set_sequence(&mut self, id: NodeId, ss: Vec<SubstitutionSet>) {
        self.tree.node_mut(id).annotation = Annotation::NegAnd(ss);
        self.touched += 1;
    }

    fn pos_begin(&self, id: NodeId) -> SubstitutionTuple {
        match &self.tree.node(id).annotation {
            Annotation::PosOr { begin, .. } => begin.clone(),
            _ => Vec::new(),
        }
    }

    /// Removes tuple positions from a positive OR node and, through the
    /// position maps, from its subtree.
    pub fn top_down_pos_or(&mut self, id: NodeId, positions: &BTreeSet<usize>) {
        if positions.is_empty() {
            return;
        }
        self.touched += 1;
        let n = self.tree.node_mut(id);
        if let Annotation::PosOr { begin, end } = &mut n.annotation {
            *begin = remove_positions(begin, positions);
            *end = remove_positions(end, positions);
        }
        if let Evidence::Refutations(rs) = &mut n.evidence {
            *rs = remove_positions(rs, positions);
        }
        let children = n.children.clone();
        let pi = n.pi.clone();
        let shift = |pos: usize| pos - positions.range(..pos).count();
        let mut new_pi = Vec::new();
        for (k, &c) in children.iter().enumerate() {
            let map = pi.get(k).cloned().unwrap_or_default();
            let local: BTreeSet<usize> = (0..map.len()).filter(|&p| positions.contains(&map[p])).collect();
            self.top_down_pos_and(c, &local);
            let kept: Vec<usize> =
                map.iter().enumerate().filter(|(p, _)| !local.contains(p)).map(|(_, &pos)| shift(pos)).collect();
            new_pi.push(kept);
        }
        self.tree.node_mut(id).pi = new_pi;
        for &c in &children {
            let k = self.child_pos(c);
            if self.tree.node(id).pi[k].is_empty() {
                self.detach(c);
            }
        }
    }

    /// Removes tuple positions from a positive AND node and its subtree.
    pub fn top_down_pos_and(&mut self, id: NodeId, positions: &BTreeSet<usize>) {
        if positions.is_empty() {
            return;
        }
        self.touched += 1;
        let Annotation::PosAnd(us) = self.tree.node(id).annotation.clone() else { return };
        let children = self.tree.node(id).children.clone();
        for (j, &c) in children.iter().enumerate() {
            match self.tree.node(c).kind() {
                NodeKind::NegOr => {
                    let delta: SubstitutionSet = positions.iter().filter_map(|&i| us[j].get(i).cloned()).collect();
                    self.top_down_neg_or(c, &delta);
                }
                _ => self.top_down_pos_or(c, positions),
            }
        }
        let us: Vec<SubstitutionTuple> = us.iter().map(|u| remove_positions(u, positions)).collect();
        self.tree.node_mut(id).annotation = Annotation::PosAnd(us);
    }

    /// Removes begin substitutions `delta` (and the end substitutions they
    /// generalize) from a negative OR node and its subtree.
    pub fn top_down_neg_or(&mut self, id: NodeId, delta: &SubstitutionSet) {
        let (begin, end) = self.neg_sets(id);
        let delta: SubstitutionSet = begin.intersection(delta).cloned().collect();
        if delta.is_empty() {
            return;
        }
        self.touched += 1;
        let end_removed = generalized_by(&end, &delta);
        let n = self.tree.node_mut(id);
        n.annotation = Annotation::NegOr {
            begin: begin.difference(&delta).cloned().collect(),
            end: end.difference(&end_removed).cloned().collect(),
        };
        if let Evidence::Trees(ts) = &mut n.evidence {
            ts.retain(|(s, _)| !delta.contains(s));
        }
        let children = n.children.clone();
        for &c in &children {
            self.top_down_neg_and(c, &delta);
        }
        for &c in &children {
            if self.sequence(c).first().is_none_or(|s| s.is_empty()) {
                self.detach(c);
            }
        }
    }

    /// Removes `delta` from `S_0` of a negative AND node and propagates the
    /// removal along its sequence.
    pub fn top_down_neg_and(&mut self, id: NodeId, delta: &SubstitutionSet) {
        let ss = self.sequence(id);
        let Some(s0) = ss.first() else { return };
        let removed: SubstitutionSet = s0.intersection(delta).cloned().collect();
        if removed.is_empty() {
            return;
        }
        self.propagate(id, 0, removed);
    }

    /// Removes `removed` from `S_start` and, for every later `S_j`, the
    /// members generalized by what was removed from `S_{j-1}`; the children
    /// in between lose the same substitutions. Returns what was removed
    /// from the last set.
    fn propagate(&mut self, id: NodeId, start: usize, removed: SubstitutionSet) -> SubstitutionSet {
        let mut ss = self.sequence(id);
        let children = self.tree.node(id).children.clone();
        ss[start] = ss[start].difference(&removed).cloned().collect();
        let mut prev = removed;
        for j in start + 1..ss.len() {
            let dj = generalized_by(&ss[j], &prev);
            let c = children[j - 1];
            match self.tree.node(c).kind() {
                NodeKind::NegOr => self.top_down_neg_or(c, &prev),
                _ => {
                    let begin = self.pos_begin(c);
                    let positions: BTreeSet<usize> = (0..begin.len()).filter(|&p| prev.contains(&begin[p])).collect();
                    self.top_down_pos_or(c, &positions);
                }
            }
            ss[j] = ss[j].difference(&dj).cloned().collect();
            prev = dj;
        }
        self.set_sequence(id, ss);
        self.drop_stale(id);
        prev
    }

    /// Deletes children of a negative AND node that no longer filter.
    fn drop_stale(&mut self, id: NodeId) {
        let mut ss = self.sequence(id);
        let children = self.tree.node(id).children.clone();
        for j in (1..ss.len()).rev() {
            if ss[j] == ss[j - 1] {
                ss.remove(j);
                if let Some(&c) = children.get(j - 1) {
                    self.detach(c);
                }
            }
        }
        self.set_sequence(id, ss);
    }

    /// A deleted fact removed the answers `delta` at a negative leaf.
    fn start_neg_leaf(&mut self, id: NodeId, delta: SubstitutionSet) {
        let (begin, end) = self.neg_sets(id);
        self.touched += 1;
        let n = self.tree.node_mut(id);
        n.annotation = Annotation::NegOr { begin: begin.clone(), end: end.difference(&delta).cloned().collect() };
        if let Evidence::Trees(ts) = &mut n.evidence {
            ts.retain(|(s, _)| !delta.iter().any(|d| s.more_general(d)));
        }
        if let Some(p) = self.parent(id).filter(|&p| self.tree.node(p).kind() == NodeKind::NegAnd) {
            let k = self.child_pos(id);
            self.bottom_up_neg_and(p, delta, k);
        }
    }

    /// A deleted rule built the negative AND node `id`.
    fn start_neg_and(&mut self, id: NodeId) {
        let Some(a) = self.parent(id) else { return };
        let ss = self.sequence(id);
        let delta = restrict_set(ss.last().unwrap_or(&SubstitutionSet::new()), &self.end_vars(a, &ss));
        self.detach(id);
        self.bottom_up_neg_or(a, delta);
    }

    fn end_vars(&self, a: NodeId, ss: &[SubstitutionSet]) -> BTreeSet<String> {
        let mut vars: BTreeSet<String> = self.tree.node(a).label.vars().into_iter().collect();
        vars.extend(ss.first().into_iter().flatten().flat_map(|s| s.dom()));
        vars
    }

    /// `delta` was removed from the set after child `k` of a negative AND
    /// node.
    fn bottom_up_neg_and(&mut self, id: NodeId, delta: SubstitutionSet, k: usize) {
        let ss = self.sequence(id);
        let delta: SubstitutionSet = ss[k + 1].intersection(&delta).cloned().collect();
        if delta.is_empty() {
            return;
        }
        let last = self.propagate(id, k + 1, delta);
        if last.is_empty() {
            return;
        }
        let Some(a) = self.parent(id) else { return };
        let vars = self.end_vars(a, &ss);
        self.bottom_up_neg_or(a, restrict_set(&last, &vars));
    }

    /// `delta` may have left `S_E` of an inner negative OR node; members
    /// still produced by another child stay.
    fn bottom_up_neg_or(&mut self, id: NodeId, delta: SubstitutionSet) {
        let mut still = SubstitutionSet::new();
        for &c in &self.tree.node(id).children {
            let ss = self.sequence(c);
            still.extend(restrict_set(ss.last().unwrap_or(&SubstitutionSet::new()), &self.end_vars(id, &ss)));
        }
        let (begin, end) = self.neg_sets(id);
        let gone: SubstitutionSet = end.intersection(&delta).filter(|s| !still.contains(*s)).cloned().collect();
        if gone.is_empty() {
            return;
        }
        self.touched += 1;
        self.tree.node_mut(id).annotation = Annotation::NegOr { begin, end: end.difference(&gone).cloned().collect() };
        if let Some(p) = self.parent(id).filter(|&p| self.tree.node(p).kind() == NodeKind::NegAnd) {
            let k = self.child_pos(id);
            self.bottom_up_neg_and(p, gone, k);
        }
    }

    /// Handles every maintenance situation of `change`; returns the number
    /// of hits processed.
    pub fn pflege(&mut self, change: &Change) -> usize {
        let report = detect(self.tree, change);
        let mut done = 0;
        for hit in &report.maintenance {
            if !self.attached(hit.node) {
                continue;
            }
            match hit.kind {
                HitKind::DelNegLeaf => {
                    let a = self.tree.node(hit.node).atom().cloned().unwrap_or_else(|| Atom::prop("?"));
                    let (_, end) = self.neg_sets(hit.node);
                    let delta = deleted_answers(&a, &end, &[&hit.clause.head]);
                    if !delta.is_empty() {
                        self.start_neg_leaf(hit.node, delta);
                        done += 1;
                    }
                }
                HitKind::DelRuleNegAnd => {
                    self.start_neg_and(hit.node);
                    done += 1;
                }
                _ => {}
            }
        }
        done
    }

    /// Ascends from `cursor` to the next polarity switch or the root. At a
    /// barrier the affected substitutions are removed from the barrier's
    /// whole subtree.
    pub fn bereinige(&mut self, cursor: Cursor) -> Barrier {
        let mut cur = cursor;
        loop {
            cur = match cur {
                Cursor::Pos(id, positions) => match self.tree.node(id).kind() {
                    NodeKind::PosOr => {
                        let p = self.parent(id).unwrap_or(self.tree.root);
                        if self.tree.node(p).kind() == NodeKind::NegAnd {
                            let begin = self.pos_begin(id);
                            let residual = positions.iter().filter_map(|&i| begin.get(i).cloned()).collect();
                            self.top_down_pos_or(id, &positions);
                            return Barrier::Pos(id, residual);
                        }
                        Cursor::Pos(p, positions)
                    }
                    _ => {
                        let Some(p) = self.parent(id) else { return Barrier::Root(positions) };
                        let k = self.child_pos(id);
                        let map = self.tree.node(p).pi.get(k).cloned().unwrap_or_default();
                        Cursor::Pos(p, positions.iter().filter_map(|&i| map.get(i).copied()).collect())
                    }
                },
                Cursor::Neg(id, delta) => match self.tree.node(id).kind() {
                    NodeKind::NegOr => {
                        let p = self.parent(id).unwrap_or(self.tree.root);
                        if self.tree.node(p).kind() == NodeKind::PosAnd {
                            self.top_down_neg_or(id, &delta);
                            return Barrier::Neg(id, delta);
                        }
                        Cursor::Neg(p, delta)
                    }
                    _ => {
                        let s0 = self.sequence(id).first().cloned().unwrap_or_default();
                        let up: SubstitutionSet =
                            s0.iter().filter(|s| delta.iter().any(|d| s.more_general(d))).cloned().collect();
                        Cursor::Neg(self.parent(id).unwrap_or(self.tree.root), up)
                    }
                },
            }
        }
    }

    /// Removes nodes whose annotations emptied out.
    pub fn prune(&mut self) {
        for id in self.tree.postorder() {
            match self.tree.node(id).kind() {
                NodeKind::PosOr => {
                    for c in self.tree.node(id).children.clone() {
                        if matches!(&self.tree.node(c).annotation, Annotation::PosAnd(us) if us.first().is_none_or(|u| u.is_empty()))
                        {
                            self.detach(c);
                        }
                    }
                }
                NodeKind::NegOr => {
                    for c in self.tree.node(id).children.clone() {
                        if self.sequence(c).first().is_none_or(|s| s.is_empty()) {
                            self.detach(c);
                        }
                    }
                }
                NodeKind::NegAnd => self.drop_stale(id),
                NodeKind::PosAnd => {}
            }
        }
    }
}

/// The seed of cleanup for a conflict hit.
pub fn conflict_cursor(tree: &ProofTree, hit: &Hit) -> Option<Cursor> {
    let n = tree.node(hit.node);
    let a = n.atom().cloned();
    let cursor = match (hit.kind, &n.annotation) {
        (HitKind::DelPosLeaf, Annotation::PosOr { end, .. }) => {
            let a = a?;
            Cursor::Pos(hit.node, (0..end.len()).filter(|&i| end[i].apply_atom(&a) == hit.clause.head).collect())
        }
        (HitKind::AddNegLeaf, Annotation::NegOr { begin, end }) => {
            Cursor::Neg(hit.node, gaining(&a?, begin, end, &hit.clause.head))
        }
        (HitKind::DelRulePosAnd, Annotation::PosAnd(us)) => Cursor::Pos(hit.node, (0..us.first()?.len()).collect()),
        (HitKind::AddRuleNegOr, Annotation::NegOr { begin, .. }) => Cursor::Neg(hit.node, begin.clone()),
        _ => return None,
    };
    let empty = match &cursor {
        Cursor::Pos(_, p) => p.is_empty(),
        Cursor::Neg(_, d) => d.is_empty(),
    };
    (!empty).then_some(cursor)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Satisfied,
    Violated,
    UnknownBudget,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Satisfied => "satisfied",
            Status::Violated => "violated",
            Status::UnknownBudget => "unknown (budget exhausted)",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub status: Status,
    pub tree: Option<ProofTree>,
    pub impact: ImpactReport,
    pub stats: Stats,
}

enum Outcome {
    Repaired,
    Root,
}

/// Conflict resolution on one tree against the updated database.
pub struct Repair<'a> {
    pub tree: ProofTree,
    db: &'a Database,
    engine: Engine<'a>,
    pub stats: Stats,
}

impl<'a> Repair<'a> {
    pub fn new(tree: ProofTree, db: &'a Database, budget: Budget) -> Repair<'a> {
        Repair { tree, db, engine: Engine::new(db, budget), stats: Stats::default() }
    }

    fn surgery(&mut self) -> Surgery<'_> {
        Surgery::new(&mut self.tree)
    }

    fn with_surgery<T>(&mut self, f: impl FnOnce(&mut Surgery<'_>) -> T) -> T {
        let mut s = self.surgery();
        let out = f(&mut s);
        let touched = s.touched;
        self.stats.nodes_touched += touched;
        out
    }

    fn clause_rank(&self, link: Link) -> usize {
        match link {
            Link::Clause(id) => self.db.clauses().iter().position(|c| c.id == id).unwrap_or(usize::MAX),
            Link::Literal(i) => i,
            Link::Root => 0,
        }
    }

    /// Resolves the conflict seeded by `cursor`, escalating across polarity
    /// switches until every substitution is re-proved or the root is hit.
    fn resolve(&mut self, cursor: Cursor) -> Result<Outcome> {
        let mut cur = cursor;
        loop {
            match self.with_surgery(|s| s.bereinige(cur)) {
                Barrier::Root(_) => return Ok(Outcome::Root),
                Barrier::Pos(a, residual) => {
                    let failed = self.reprove_pos(a, &residual)?;
                    if failed.is_empty() {
                        return Ok(Outcome::Repaired);
                    }
                    let w = self.tree.node(a).parent.ok_or_else(|| Error::Proof("barrier without parent".into()))?;
                    cur = Cursor::Neg(w, failed);
                }
                Barrier::Neg(a, delta) => {
                    let failed = self.reprove_neg(a, &delta)?;
                    if failed.is_empty() {
                        return Ok(Outcome::Repaired);
                    }
                    let w = self.tree.node(a).parent.ok_or_else(|| Error::Proof("barrier without parent".into()))?;
                    let j = self.tree.node(w).children.iter().position(|&c| c == a).unwrap_or(0);
                    let Annotation::PosAnd(us) = &self.tree.node(w).annotation else {
                        return Err(Error::Proof("negative barrier below a non-AND node".into()));
                    };
                    let positions = (0..us[j].len()).filter(|&i| failed.contains(&us[j][i])).collect();
                    cur = Cursor::Pos(w, positions);
                }
            }
        }
    }

    fn placement(&self, a: NodeId) -> (Atom, Link, BTreeSet<String>, usize) {
        let n = self.tree.node(a);
        let atom = n.atom().cloned().unwrap_or_else(|| Atom::prop("?"));
        let scope = n.parent.map(|p| self.tree.scope(p)).unwrap_or_default();
        (atom, n.link, scope, self.tree.or_depth(a))
    }

    /// Tries a new proof of `aσ` for each residual σ and merges every
    /// success into `a`. Returns the substitutions without a proof.
    fn reprove_pos(&mut self, a: NodeId, residual: &[Substitution]) -> Result<SubstitutionSet> {
        let (atom, link, scope, depth) = self.placement(a);
        let mut failed = SubstitutionSet::new();
        for s in residual {
            self.stats.reproof_calls += 1;
            let before = self.engine.nodes_built();
            let proof = self.engine.build_proof(&[Literal::pos(atom.clone())], s);
            self.stats.engine_nodes += self.engine.nodes_built() - before;
            let proof = proof?;
            let Some(r) = proof.main_refutation().cloned() else {
                failed.insert(s.clone());
                continue;
            };
            let mut b = Builder::new(self.db, &proof);
            let id = b.pos_or(atom.clone(), vec![s.clone()], vec![r], link, None, &scope, depth)?;
            let other = b.tree;
            self.merge_pos_or(a, &other, id)?;
        }
        Ok(failed)
    }

    /// Tries a finitely failed tree for `← aσ` for each σ in `delta` and
    /// merges the successes into `a`. Returns the substitutions for which
    /// `aσ` holds.
    fn reprove_neg(&mut self, a: NodeId, delta: &SubstitutionSet) -> Result<SubstitutionSet> {
        let (atom, link, scope, depth) = self.placement(a);
        let mut failed = SubstitutionSet::new();
        let mut ok = SubstitutionSet::new();
        let mut trees = Vec::new();
        for s in delta {
            self.stats.reproof_calls += 1;
            let t = self.run(|e| e.build_tree(&[Literal::pos(atom.clone())], s))?;
            if t.has_success() {
                failed.insert(s.clone());
            } else {
                ok.insert(s.clone());
                trees.push((s.clone(), t));
            }
        }
        if !ok.is_empty() {
            let (other, id) = self.build_neg_or(&atom, ok, SubstitutionSet::new(), trees, link, &scope, depth)?;
            self.merge_neg_or(a, &other, id)?;
        }
        Ok(failed)
    }

    fn run<T>(&mut self, f: impl FnOnce(&mut Engine<'a>) -> Result<T>) -> Result<T> {
        let before = self.engine.nodes_built();
        let out = f(&mut self.engine);
        self.stats.engine_nodes += self.engine.nodes_built() - before;
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn build_neg_or(
        &mut self,
        atom: &Atom,
        sb: SubstitutionSet,
        se: SubstitutionSet,
        trees: Vec<(Substitution, SldNode)>,
        link: Link,
        scope: &BTreeSet<String>,
        depth: usize,
    ) -> Result<(ProofTree, NodeId)> {
        let raw: Vec<SldNode> = trees.iter().map(|(_, t)| t.clone()).collect();
        let support = self.run(|e| e.support(&[], &raw))?;
        let mut b = Builder::from_support(self.db, &support, Substitution::empty());
        let id = b.neg_or(atom.clone(), sb, se, trees, link, None, scope, depth)?;
        Ok((b.tree, id))
    }

    /// A negative OR subtree for `a` over `sb`, built from complete trees.
    fn fresh_neg_or(&mut self, a: NodeId, sb: &SubstitutionSet) -> Result<(ProofTree, NodeId)> {
        self.stats.merge_builds += 1;
        let (atom, link, scope, depth) = self.placement(a);
        let mut trees = Vec::new();
        let mut se = SubstitutionSet::new();
        for s in sb {
            let t = self.run(|e| e.build_tree(&[Literal::pos(atom.clone())], s))?;
            se.extend(t.coverage().iter().map(|th| s.compose(th)));
            trees.push((s.clone(), t));
        }
        self.build_neg_or(&atom, sb.clone(), se, trees, link, &scope, depth)
    }

    fn import_child(&mut self, parent: NodeId, other: &ProofTree, b: NodeId) -> NodeId {
        let id = self.tree.import(other, b);
        self.tree.node_mut(id).parent = Some(parent);
        self.stats.nodes_touched += 1;
        id
    }

    fn sort_children(&mut self, id: NodeId) {
        let n = self.tree.node(id);
        let mut order: Vec<usize> = (0..n.children.len()).collect();
        order.sort_by_key(|&k| self.clause_rank(self.tree.node(n.children[k]).link));
        let children = order.iter().map(|&k| n.children[k]).collect();
        let pi = if n.pi.len() == n.children.len() {
            order.iter().map(|&k| n.pi[k].clone()).collect()
        } else {
            n.pi.clone()
        };
        let n = self.tree.node_mut(id);
        n.children = children;
        n.pi = pi;
    }

    /// Merges the positive OR node `b` of `other` into `a`: tuples are
    /// concatenated and children are merged or grafted by clause.
    pub fn merge_pos_or(&mut self, a: NodeId, other: &ProofTree, b: NodeId) -> Result<()> {
        let nb = other.node(b);
        let (Annotation::PosOr { begin: ub, end: ue }, Annotation::PosOr { begin: ob, end: oe }) =
            (self.tree.node(a).annotation.clone(), nb.annotation.clone())
        else {
            return Err(Error::Proof("merging nodes of different kinds".into()));
        };
        if self.tree.node(a).label != nb.label {
            return Err(Error::Proof(format!("merging {} with {}", self.tree.node(a).label, nb.label)));
        }
        self.stats.nodes_touched += 1;
        let offset = ub.len();
        #[cfg(test)]
        let oe = if BROKEN_MERGE.with(|b| b.get()) { ob.clone() } else { oe };
        let n = self.tree.node_mut(a);
        n.annotation = Annotation::PosOr { begin: [ub, ob].concat(), end: [ue, oe].concat() };
        match (&mut n.evidence, &nb.evidence) {
            (Evidence::Refutations(rs), Evidence::Refutations(more)) => rs.extend(more.iter().cloned()),
            (e @ Evidence::None, more) => *e = more.clone(),
            _ => {}
        }
        for (k, &cb) in nb.children.iter().enumerate() {
            let map: Vec<usize> = nb.pi.get(k).into_iter().flatten().map(|p| p + offset).collect();
            let link = other.node(cb).link;
            let existing = self.tree.node(a).children.iter().position(|&c| self.tree.node(c).link == link);
            match existing {
                Some(i) => {
                    let ca = self.tree.node(a).children[i];
                    self.merge_pos_and(ca, other, cb)?;
                    self.tree.node_mut(a).pi[i].extend(map);
                }
                None => {
                    let id = self.import_child(a, other, cb);
                    let n = self.tree.node_mut(a);
                    n.children.push(id);
                    n.pi.push(map);
                }
            }
        }
        self.sort_children(a);
        Ok(())
    }

    /// Merges positive AND nodes position-wise.
    pub fn merge_pos_and(&mut self, w: NodeId, other: &ProofTree, wb: NodeId) -> Result<()> {
        let nb = other.node(wb);
        let (Annotation::PosAnd(us), Annotation::PosAnd(os)) = (self.tree.node(w).annotation.clone(), &nb.annotation)
        else {
            return Err(Error::Proof("merging nodes of different kinds".into()));
        };
        if self.tree.node(w).label != nb.label || us.len() != os.len() {
            return Err(Error::Proof(format!("merging {} with {}", self.tree.node(w).label, nb.label)));
        }
        self.stats.nodes_touched += 1;
        let merged = us.iter().zip(os).map(|(u, o)| [u.clone(), o.clone()].concat()).collect();
        self.tree.node_mut(w).annotation = Annotation::PosAnd(merged);
        let children = self.tree.node(w).children.clone();
        for (&ca, &cb) in children.iter().zip(&nb.children) {
            match self.tree.node(ca).kind() {
                NodeKind::PosOr => self.merge_pos_or(ca, other, cb)?,
                _ => self.merge_neg_or(ca, other, cb)?,
            }
        }
        Ok(())
    }

    /// Merges the negative OR node `b` of `other` into `a`: sets are united
    /// and children are merged by clause. A clause child present on only one
    /// side is completed for the other side's substitutions.
    pub fn merge_neg_or(&mut self, a: NodeId, other: &ProofTree, b: NodeId) -> Result<()> {
        let nb = other.node(b);
        let (Annotation::NegOr { begin: sb, end: se }, Annotation::NegOr { begin: ob, end: oe }) =
            (self.tree.node(a).annotation.clone(), nb.annotation.clone())
        else {
            return Err(Error::Proof("merging nodes of different kinds".into()));
        };
        if self.tree.node(a).label != nb.label {
            return Err(Error::Proof(format!("merging {} with {}", self.tree.node(a).label, nb.label)));
        }
        self.stats.nodes_touched += 1;
        let n = self.tree.node_mut(a);
        n.annotation =
            Annotation::NegOr { begin: sb.union(&ob).cloned().collect(), end: se.union(&oe).cloned().collect() };
        match (&mut n.evidence, &nb.evidence) {
            (Evidence::Trees(ts), Evidence::Trees(more)) => ts.extend(more.iter().cloned()),
            (e @ Evidence::None, more) => *e = more.clone(),
            _ => {}
        }
        let ours: Vec<NodeId> = self.tree.node(a).children.clone();
        let mut ours_missing = Vec::new();
        for &cb in &nb.children {
            let link = other.node(cb).link;
            match ours.iter().find(|&&c| self.tree.node(c).link == link) {
                Some(&ca) => self.merge_neg_and(ca, other, cb)?,
                None => {
                    let id = self.import_child(a, other, cb);
                    self.tree.node_mut(a).children.push(id);
                    if !sb.is_empty() {
                        ours_missing.push(id);
                    }
                }
            }
        }
        let theirs_missing: Vec<NodeId> = ours
            .iter()
            .copied()
            .filter(|&c| !ob.is_empty() && !nb.children.iter().any(|&cb| other.node(cb).link == self.tree.node(c).link))
            .collect();
        if !ours_missing.is_empty() || !theirs_missing.is_empty() {
            // Substitutions of one side have no evidence for a clause the
            // other side used; build it and merge it in.
            for (targets, sub) in [(ours_missing, &sb), (theirs_missing, &ob)] {
                if targets.is_empty() {
                    continue;
                }
                let (built, root) = self.fresh_neg_or(a, sub)?;
                for t in targets {
                    let link = self.tree.node(t).link;
                    if let Some(&cb) = built.node(root).children.iter().find(|&&c| built.node(c).link == link) {
                        self.merge_neg_and(t, &built, cb)?;
                    }
                }
            }
        }
        self.sort_children(a);
        Ok(())
    }

    /// Merges negative AND nodes for the same clause instance: children
    /// are aligned by literal index and each set is the union of the
    /// latest sets of both sides up to that literal.
    pub fn merge_neg_and(&mut self, w: NodeId, other: &ProofTree, wb: NodeId) -> Result<()> {
        let nb = other.node(wb);
        let (Annotation::NegAnd(ss), Annotation::NegAnd(os)) =
            (self.tree.node(w).annotation.clone(), nb.annotation.clone())
        else {
            return Err(Error::Proof("merging nodes of different kinds".into()));
        };
        if self.tree.node(w).label != nb.label {
            return Err(Error::Proof(format!("merging {} with {}", self.tree.node(w).label, nb.label)));
        }
        self.stats.nodes_touched += 1;
        let lits = self.tree.node(w).conj().map(<[Literal]>::to_vec).unwrap_or_default();
        let literal_of = |t: &ProofTree, c: NodeId| match t.node(c).link {
            Link::Literal(i) => i,
            _ => usize::MAX,
        };
        let ours: BTreeMap<usize, NodeId> =
            self.tree.node(w).children.iter().map(|&c| (literal_of(&self.tree, c), c)).collect();
        let theirs: BTreeMap<usize, NodeId> = nb.children.iter().map(|&c| (literal_of(other, c), c)).collect();
        let indices: BTreeSet<usize> = ours.keys().chain(theirs.keys()).copied().collect();
        let h = |k: usize| ours.keys().filter(|&&i| i <= k).count();
        let l = |k: usize| theirs.keys().filter(|&&j| j <= k).count();
        let mut merged = vec![ss[0].union(&os[0]).cloned().collect::<SubstitutionSet>()];
        let mut children = Vec::new();
        for &k in &indices {
            merged.push(ss[h(k)].union(&os[l(k)]).cloned().collect());
            let positive = lits.get(k).is_some_and(|lit| lit.positive);
            let child = match (ours.get(&k), theirs.get(&k)) {
                (Some(&ca), Some(&cb)) => {
                    match self.tree.node(ca).kind() {
                        NodeKind::PosOr => self.merge_pos_or(ca, other, cb)?,
                        _ => self.merge_neg_or(ca, other, cb)?,
                    }
                    ca
                }
                (Some(&ca), None) => {
                    if positive {
                        self.extend_neg_or(ca, &os[l(k)])?;
                    }
                    ca
                }
                (None, Some(&cb)) => {
                    let id = self.import_child(w, other, cb);
                    if positive {
                        self.extend_neg_or(id, &ss[h(k)])?;
                    }
                    id
                }
                (None, None) => continue,
            };
            children.push(child);
        }
        let n = self.tree.node_mut(w);
        n.annotation = Annotation::NegAnd(merged);
        n.children = children;
        Ok(())
    }

    /// Adds substitutions that pass the literal of negative OR node `c`
    /// unchanged.
    fn extend_neg_or(&mut self, c: NodeId, extra: &SubstitutionSet) -> Result<()> {
        if extra.is_empty() {
            return Ok(());
        }
        let n = self.tree.node(c);
        let leaf = n.atom().is_some_and(|a| a.is_builtin() || self.db.is_edb(&a.key()));
        if leaf {
            self.stats.nodes_touched += 1;
            if let Annotation::NegOr { begin, end } = &mut self.tree.node_mut(c).annotation {
                begin.extend(extra.iter().cloned());
                end.extend(extra.iter().cloned());
            }
            return Ok(());
        }
        let (built, root) = self.fresh_neg_or(c, extra)?;
        self.merge_neg_or(c, &built, root)
    }
}

/// Applies the maintenance procedures for `change` to `tree` in place and
/// returns the number of hits handled. Never calls the engine.
pub fn pflege(tree: &mut ProofTree, change: &Change) -> usize {
    let mut s = Surgery::new(tree);
    let n = s.pflege(change);
    s.prune();
    n
}

/// Cleans up from `cursor` to the next barrier.
pub fn bereinige(tree: &mut ProofTree, cursor: Cursor) -> Barrier {
    Surgery::new(tree).bereinige(cursor)
}

/// Merges node `b` of `other` into node `a` of `tree`; both must have the
/// same kind and label. Engine runs for missing evidence use `db`.
pub fn vereinige(
    tree: &mut ProofTree,
    a: NodeId,
    other: &ProofTree,
    b: NodeId,
    db: &Database,
    budget: Budget,
) -> Result<Stats> {
    let mut r = Repair::new(
        std::mem::replace(tree, ProofTree { nodes: Vec::new(), root: 0, tau: Default::default() }),
        db,
        budget,
    );
    let result = match tree_kind(&r.tree, a) {
        NodeKind::PosOr => r.merge_pos_or(a, other, b),
        NodeKind::NegOr => r.merge_neg_or(a, other, b),
        NodeKind::PosAnd => r.merge_pos_and(a, other, b),
        NodeKind::NegAnd => r.merge_neg_and(a, other, b),
    };
    *tree = r.tree;
    result.map(|_| r.stats)
}

fn tree_kind(t: &ProofTree, id: NodeId) -> NodeKind {
    t.node(id).kind()
}

fn budget_status(e: Error) -> Result<Status> {
    match e {
        Error::Budget(_) => Ok(Status::UnknownBudget),
        e => Err(e),
    }
}

/// Resolves one conflict on `tree`; `Ok(None)` means the root was reached.
pub fn loese_konflikt(repair: &mut Repair<'_>, hit: &Hit) -> Result<Option<()>> {
    let Some(cursor) = conflict_cursor(&repair.tree, hit) else { return Ok(Some(())) };
    match repair.resolve(cursor)? {
        Outcome::Repaired => {
            repair.with_surgery(|s| s.prune());
            Ok(Some(()))
        }
        Outcome::Root => Ok(None),
    }
}

/// Checks a standard proof tree for the old database against the change:
/// maintenance first, then every conflict in turn. The result carries the
/// repaired tree when the constraint still holds.
pub fn ueberpruefe_baum(tree: &ProofTree, change: &Change, db: &Database, budget: Budget) -> Result<Verdict> {
    let impact = detect(tree, change);
    let mut repair = Repair::new(tree.clone(), db, budget);
    repair.stats.maintenance_hits = impact.maintenance.len();
    repair.with_surgery(|s| {
        s.pflege(change);
        s.prune();
    });
    let limit = impact.conflicts.len() + tree.len() + 1;
    loop {
        let conflicts = detect(&repair.tree, change).conflicts;
        let Some(hit) = conflicts.into_iter().find(|h| conflict_cursor(&repair.tree, h).is_some()) else { break };
        repair.stats.conflicts += 1;
        if repair.stats.conflicts > limit {
            return full_reproof(tree, db, budget, impact, repair.stats);
        }
        match loese_konflikt(&mut repair, &hit) {
            Ok(Some(())) => {}
            Ok(None) => return full_reproof(tree, db, budget, impact, repair.stats),
            Err(e) => {
                let status = budget_status(e)?;
                return Ok(Verdict { status, tree: None, impact, stats: repair.stats });
            }
        }
    }
    let mut t = repair.tree;
    t.compact();
    Ok(Verdict { status: Status::Satisfied, tree: Some(t), impact, stats: repair.stats })
}

fn full_reproof(
    tree: &ProofTree,
    db: &Database,
    budget: Budget,
    impact: ImpactReport,
    mut stats: Stats,
) -> Result<Verdict> {
    stats.full_reproofs += 1;
    let goal = tree.node(tree.root).conj().map(<[Literal]>::to_vec).unwrap_or_default();
    let mut engine = Engine::new(db, budget);
    let result = engine.build_proof(&goal, &tree.tau);
    stats.engine_nodes += engine.nodes_built();
    let proof = match result {
        Ok(p) => p,
        Err(e) => return Ok(Verdict { status: budget_status(e)?, tree: None, impact, stats }),
    };
    if proof.main_refutation().is_none() {
        return Ok(Verdict { status: Status::Violated, tree: None, impact, stats });
    }
    let t = crate::prooftree::construct(db, &proof)?;
    Ok(Verdict { status: Status::Satisfied, tree: Some(t), impact, stats })
}

/// Result of checking a constraint from scratch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Recheck {
    pub status: Status,
    pub tree: Option<ProofTree>,
    pub engine_nodes: usize,
}

/// Full SLDNF run of `← entry` against `db`.
pub fn oracle_recheck(db: &Database, constraint: &CompiledConstraint, budget: Budget) -> Result<Recheck> {
    let goal = [Literal::pos(constraint.entry.clone())];
    let mut engine = Engine::new(db, budget);
    let result = engine.build_proof(&goal, &Substitution::empty());
    let engine_nodes = engine.nodes_built();
    let proof = match result {
        Ok(p) => p,
        Err(e) => return Ok(Recheck { status: budget_status(e)?, tree: None, engine_nodes }),
    };
    if proof.main_refutation().is_none() {
        return Ok(Recheck { status: Status::Violated, tree: None, engine_nodes });
    }
    let tree = crate::prooftree::construct(db, &proof)?;
    Ok(Recheck { status: Status::Satisfied, tree: Some(tree), engine_nodes })
}

/// The proof tree of a constraint, or `None` when it is violated.
pub fn initial_tree(db: &Database, constraint: &CompiledConstraint, budget: Budget) -> Result<Option<ProofTree>> {
    prove(db, &[Literal::pos(constraint.entry.clone())], &Substitution::empty(), budget)
}
