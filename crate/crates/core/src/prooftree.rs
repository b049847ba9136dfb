//! Substitution-annotated AND-OR proof trees: construction from an SLDNF
//! proof, validation, and export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::engine::{
    split_refutation, split_tree, variant_renaming, Budget, Engine, Refutation, SldNode, SldnfProof, Support,
};
use crate::error::{Error, Result};
use crate::logic::{
    conj_vars, fmt_conj, fmt_set, fmt_tuple, set_more_general, Atom, Literal, Substitution, SubstitutionSet,
    SubstitutionTuple, Term,
};
use crate::program::{is_reserved_var, Clause, ClauseId, Database};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    PosAnd,
    NegAnd,
    PosOr,
    NegOr,
}

impl NodeKind {
    pub fn is_and(self) -> bool {
        matches!(self, NodeKind::PosAnd | NodeKind::NegAnd)
    }

    pub fn is_positive(self) -> bool {
        matches!(self, NodeKind::PosAnd | NodeKind::PosOr)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeKind::PosAnd => "pos-AND",
            NodeKind::NegAnd => "neg-AND",
            NodeKind::PosOr => "pos-OR",
            NodeKind::NegOr => "neg-OR",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Conj(Vec<Literal>),
    Atom(Atom),
}

impl Label {
    pub fn vars(&self) -> Vec<String> {
        match self {
            Label::Conj(c) => conj_vars(c),
            Label::Atom(a) => a.vars(),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Conj(c) => f.write_str(&fmt_conj(c)),
            Label::Atom(a) => write!(f, "{a}"),
        }
    }
}

/// The `subst` annotation of a node, by kind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annotation {
    PosAnd(Vec<SubstitutionTuple>),
    NegAnd(Vec<SubstitutionSet>),
    PosOr { begin: SubstitutionTuple, end: SubstitutionTuple },
    NegOr { begin: SubstitutionSet, end: SubstitutionSet },
}

impl Annotation {
    pub fn kind(&self) -> NodeKind {
        match self {
            Annotation::PosAnd(_) => NodeKind::PosAnd,
            Annotation::NegAnd(_) => NodeKind::NegAnd,
            Annotation::PosOr { .. } => NodeKind::PosOr,
            Annotation::NegOr { .. } => NodeKind::NegOr,
        }
    }
}

impl fmt::Display for Annotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Annotation::PosAnd(us) => {
                let parts: Vec<String> = us.iter().map(|u| fmt_tuple(u)).collect();
                write!(f, "({})", parts.join(", "))
            }
            Annotation::NegAnd(ss) => {
                let parts: Vec<String> = ss.iter().map(fmt_set).collect();
                write!(f, "({})", parts.join(", "))
            }
            Annotation::PosOr { begin, end } => write!(f, "⟨{}, {}⟩", fmt_tuple(begin), fmt_tuple(end)),
            Annotation::NegOr { begin, end } => write!(f, "⟨{}, {}⟩", fmt_set(begin), fmt_set(end)),
        }
    }
}

/// Where a node comes from: the literal of its parent AND node, or the
/// program clause used to expand its parent OR node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Root,
    Literal(usize),
    Clause(ClauseId),
}

/// Evidence kept at OR leaves: refutations aligned with `begin` for
/// positive leaves, (σ, incomplete tree) pairs for negative leaves.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    None,
    Refutations(Vec<Refutation>),
    Trees(Vec<(Substitution, SldNode)>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofNode {
    pub label: Label,
    pub annotation: Annotation,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub link: Link,
    /// For positive OR nodes: per child, the positions in `begin` that the
    /// child's first tuple occupies.
    pub pi: Vec<Vec<usize>>,
    pub evidence: Evidence,
}

impl ProofNode {
    pub fn kind(&self) -> NodeKind {
        self.annotation.kind()
    }

    pub fn atom(&self) -> Option<&Atom> {
        match &self.label {
            Label::Atom(a) => Some(a),
            Label::Conj(_) => None,
        }
    }

    pub fn conj(&self) -> Option<&[Literal]> {
        match &self.label {
            Label::Conj(c) => Some(c),
            Label::Atom(_) => None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// A proof tree stored as an arena. Nodes detached from the root stay in
/// the arena until `compact` is called.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofTree {
    pub nodes: Vec<ProofNode>,
    pub root: NodeId,
    pub tau: Substitution,
}

impl ProofTree {
    pub fn node(&self, id: NodeId) -> &ProofNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut ProofNode {
        &mut self.nodes[id]
    }

    /// Reachable nodes in preorder.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[id].children.iter().rev());
        }
        out
    }

    /// Reachable nodes with every child listed before its parent.
    pub fn postorder(&self) -> Vec<NodeId> {
        let mut v = self.preorder();
        v.reverse();
        v
    }

    pub fn len(&self) -> usize {
        self.preorder().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Ancestors from the parent up to the root.
    pub fn ancestors(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = self.nodes[id].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].parent;
        }
        out
    }

    /// Variables of the labels of `id` and all its ancestors.
    pub fn scope(&self, id: NodeId) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.nodes[id].label.vars().into_iter().collect();
        for a in self.ancestors(id) {
            out.extend(self.nodes[a].label.vars());
        }
        out
    }

    /// Number of OR nodes on the path from the root to `id`, inclusive.
    pub fn or_depth(&self, id: NodeId) -> usize {
        let mut d = usize::from(!self.nodes[id].kind().is_and());
        for a in self.ancestors(id) {
            d += usize::from(!self.nodes[a].kind().is_and());
        }
        d
    }

    /// `U_n` of the root.
    pub fn root_answer(&self) -> Result<SubstitutionTuple> {
        match &self.nodes[self.root].annotation {
            Annotation::PosAnd(us) => Ok(us.last().cloned().unwrap_or_default()),
            _ => Err(Error::Proof("root is not a positive AND node".into())),
        }
    }

    /// First reachable node whose label prints as `label` and whose kind
    /// is `kind`.
    pub fn find(&self, kind: NodeKind, label: &str) -> Option<NodeId> {
        self.preorder()
            .into_iter()
            .find(|&id| self.nodes[id].kind() == kind && self.nodes[id].label.to_string() == label)
    }

    pub fn find_all(&self, kind: NodeKind, label: &str) -> Vec<NodeId> {
        self.preorder()
            .into_iter()
            .filter(|&id| self.nodes[id].kind() == kind && self.nodes[id].label.to_string() == label)
            .collect()
    }

    /// Drops unreachable nodes and renumbers the rest in preorder.
    pub fn compact(&mut self) {
        let order = self.preorder();
        let index: BTreeMap<NodeId, NodeId> = order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut nodes = Vec::with_capacity(order.len());
        for &id in &order {
            let mut n = self.nodes[id].clone();
            n.parent = n.parent.and_then(|p| index.get(&p).copied());
            n.children = n.children.iter().map(|c| index[c]).collect();
            nodes.push(n);
        }
        self.nodes = nodes;
        self.root = 0;
        self.nodes[0].parent = None;
    }

    /// Copies the subtree rooted at `id` of `other` into this arena and
    /// returns the new root id; the parent link is left unset.
    pub fn import(&mut self, other: &ProofTree, id: NodeId) -> NodeId {
        let new_id = self.nodes.len();
        let mut n = other.nodes[id].clone();
        n.parent = None;
        let kids = std::mem::take(&mut n.children);
        self.nodes.push(n);
        let mut new_kids = Vec::new();
        for k in kids {
            let c = self.import(other, k);
            self.nodes[c].parent = Some(new_id);
            new_kids.push(c);
        }
        self.nodes[new_id].children = new_kids;
        new_id
    }

    /// Kind, label and annotation of every reachable node in preorder; two
    /// trees with equal summaries are annotation-equal.
    pub fn summary(&self) -> Vec<(NodeKind, String, String)> {
        self.preorder()
            .into_iter()
            .map(|id| {
                let n = &self.nodes[id];
                (n.kind(), n.label.to_string(), n.annotation.to_string())
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        fn node(t: &ProofTree, id: NodeId) -> serde_json::Value {
            let n = &t.nodes[id];
            let link = match n.link {
                Link::Root => serde_json::Value::Null,
                Link::Literal(i) => serde_json::json!({ "literal": i }),
                Link::Clause(c) => serde_json::json!({ "clause": c }),
            };
            serde_json::json!({
                "kind": n.kind().to_string(),
                "label": n.label.to_string(),
                "annotation": serde_json::to_value(&n.annotation).unwrap_or_default(),
                "annotation_text": n.annotation.to_string(),
                "link": link,
                "children": n.children.iter().map(|&c| node(t, c)).collect::<Vec<_>>(),
            })
        }
        serde_json::json!({ "version": 1, "tau": self.tau.to_string(), "root": node(self, self.root) })
    }

    /// Graphviz rendering; edges into negative nodes below positive ones
    /// (and vice versa) are dashed.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph proof {\n  node [shape=box, fontname=\"monospace\"];\n");
        for id in self.preorder() {
            let n = &self.nodes[id];
            let shape = if n.kind().is_and() { "box" } else { "ellipse" };
            let text = format!("{}\\n{}\\n{}", n.kind(), n.label, n.annotation).replace('"', "\\\"");
            let _ = writeln!(s, "  n{id} [shape={shape}, label=\"{text}\"];");
            for &c in &n.children {
                let style =
                    if self.nodes[c].kind().is_positive() != n.kind().is_positive() { "dashed" } else { "solid" };
                let _ = writeln!(s, "  n{id} -> n{c} [style={style}];");
            }
        }
        s.push_str("}\n");
        s
    }

    fn fmt_node(&self, f: &mut fmt::Formatter<'_>, id: NodeId, indent: usize) -> fmt::Result {
        let n = &self.nodes[id];
        writeln!(f, "{:indent$}{} {}  {}", "", n.kind(), n.label, n.annotation, indent = indent)?;
        for &c in &n.children {
            self.fmt_node(f, c, indent + 2)?;
        }
        Ok(())
    }
}

impl fmt::Display for ProofTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_node(f, self.root, 0)
    }
}

/// Instantiates a rule body for an OR node labelled `a`: head variables
/// take `a`'s arguments, body-only variables keep their names unless they
/// clash with `scope`, in which case they get a depth suffix.
pub fn clause_instance(c: &Clause, a: &Atom, scope: &BTreeSet<String>, depth: usize) -> Option<Vec<Literal>> {
    if c.head.pred != a.pred || c.head.args.len() != a.args.len() {
        return None;
    }
    let head_vars: Vec<String> = c.head.vars();
    let mut used: BTreeSet<String> = scope.clone();
    used.extend(a.vars());
    let mut theta = Substitution::empty();
    let mut pending_eqs: Vec<(Term, Term)> = Vec::new();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for (h, t) in c.head.args.iter().zip(&a.args) {
        match h {
            Term::Var(v) if seen.insert(v) => theta.insert(v, t.clone()),
            _ => pending_eqs.push((h.clone(), t.clone())),
        }
    }
    for v in conj_vars(&c.body) {
        if head_vars.contains(&v) || theta.get(&v).is_some() {
            continue;
        }
        let name = if !used.contains(&v) && !is_reserved_var(&v) {
            v.clone()
        } else {
            let base = format!("{v}_{depth}");
            if !used.contains(&base) && !is_reserved_var(&base) {
                base
            } else {
                (1..)
                    .map(|n| format!("{v}_{depth}_{n}"))
                    .find(|n| !used.contains(n) && !is_reserved_var(n))
                    .unwrap_or_default()
            }
        };
        used.insert(name.clone());
        theta.insert(&v, Term::Var(name));
    }
    // Only facts have non-variable or repeated head arguments; they must
    // still match the atom.
    for (h, t) in pending_eqs {
        if theta.apply_term(&h) != t {
            return None;
        }
    }
    Some(theta.apply_conj(&c.body))
}

/// The AND-OR tree expansion of one node: the literals of an AND label
/// as (atom, negated) pairs, or the instantiated rule bodies of an OR
/// label, one per rule of its predicate.
pub fn and_or_children(
    db: &Database,
    label: &Label,
    scope: &BTreeSet<String>,
    depth: usize,
) -> Vec<(Label, Option<ClauseId>, bool)> {
    match label {
        Label::Conj(c) => c.iter().map(|l| (Label::Atom(l.atom.clone()), None, !l.positive)).collect(),
        Label::Atom(a) => {
            if a.is_builtin() || db.is_edb(&a.key()) {
                return Vec::new();
            }
            db.definition(&a.key())
                .filter(|c| !c.is_fact())
                .filter_map(|c| clause_instance(c, a, scope, depth).map(|w| (Label::Conj(w), Some(c.id), false)))
                .collect()
        }
    }
}

fn is_leaf_predicate(db: &Database, a: &Atom) -> bool {
    a.is_builtin() || db.is_edb(&a.key())
}

fn align_refutation(r: &Refutation, target: &[Literal]) -> Result<Refutation> {
    let map = variant_renaming(r.root(), target).ok_or_else(|| {
        Error::Proof(format!("refutation root ← {} is not a variant of ← {}", fmt_conj(r.root()), fmt_conj(target)))
    })?;
    Ok(r.map_vars(&|v| map.get(v).cloned().unwrap_or_else(|| v.to_string())))
}

fn align_tree(t: &SldNode, target: &[Literal]) -> Result<SldNode> {
    let map = variant_renaming(&t.goal, target).ok_or_else(|| {
        Error::Proof(format!("tree root ← {} is not a variant of ← {}", fmt_conj(&t.goal), fmt_conj(target)))
    })?;
    let mut t = t.map_vars(&|v| map.get(v).cloned().unwrap_or_else(|| v.to_string()));
    t.step = Substitution::empty();
    t.clause = None;
    Ok(t)
}

fn clause_rank(db: &Database, id: ClauseId) -> usize {
    db.clauses().iter().position(|c| c.id == id).unwrap_or(usize::MAX)
}

/// Builds proof-tree nodes from the refutations and failed trees of one
/// SLDNF proof.
pub struct Builder<'a> {
    db: &'a Database,
    refutations: &'a BTreeMap<Atom, Refutation>,
    failed: &'a BTreeMap<Atom, SldNode>,
    pub tree: ProofTree,
}

impl<'a> Builder<'a> {
    pub fn new(db: &'a Database, proof: &'a SldnfProof) -> Builder<'a> {
        Builder {
            db,
            refutations: &proof.refutations,
            failed: &proof.failed,
            tree: ProofTree { nodes: Vec::new(), root: 0, tau: proof.tau.clone() },
        }
    }

    /// A builder for subtrees whose subsidiary proofs are in `support`.
    pub fn from_support(db: &'a Database, support: &'a Support, tau: Substitution) -> Builder<'a> {
        Builder {
            db,
            refutations: &support.refutations,
            failed: &support.failed,
            tree: ProofTree { nodes: Vec::new(), root: 0, tau },
        }
    }

    fn push(&mut self, label: Label, annotation: Annotation, link: Link, parent: Option<NodeId>) -> NodeId {
        self.tree.nodes.push(ProofNode {
            label,
            annotation,
            parent,
            children: Vec::new(),
            link,
            pi: Vec::new(),
            evidence: Evidence::None,
        });
        self.tree.nodes.len() - 1
    }

    fn failed_tree(&self, atom: &Atom) -> Result<SldNode> {
        if !atom.is_ground() {
            return Err(Error::Flounder(format!("negative literal not {atom} is not ground")));
        }
        self.failed
            .get(atom)
            .cloned()
            .ok_or_else(|| Error::Proof(format!("proof has no finitely failed tree for {atom}")))
    }

    fn refutation(&self, atom: &Atom) -> Result<Refutation> {
        if !atom.is_ground() {
            return Err(Error::Flounder(format!("negative literal not {atom} is not ground")));
        }
        self.refutations.get(atom).cloned().ok_or_else(|| Error::Proof(format!("proof has no refutation for {atom}")))
    }

    /// A positive AND node with first tuple `u0` and refutations `ru0` of
    /// `label·σ` for each `σ` in `u0`.
    #[allow(clippy::too_many_arguments)]
    pub fn pos_and(
        &mut self,
        label: Vec<Literal>,
        u0: SubstitutionTuple,
        ru0: Vec<Refutation>,
        link: Link,
        parent: Option<NodeId>,
        scope: &BTreeSet<String>,
        depth: usize,
    ) -> Result<NodeId> {
        let id = self.push(Label::Conj(label.clone()), Annotation::PosAnd(Vec::new()), link, parent);
        let mut scope = scope.clone();
        scope.extend(conj_vars(&label));
        let mut us = vec![u0];
        let mut rus = ru0;
        let mut children = Vec::new();
        for (i, lit) in label.iter().enumerate() {
            let prev = us.last().cloned().unwrap_or_default();
            let mut parts = Vec::new();
            let mut rests = Vec::new();
            for r in &rus {
                let (p, rest) = split_refutation(r)?;
                parts.push(p);
                rests.push(rest);
            }
            let child = if lit.positive {
                let next: SubstitutionTuple = prev.iter().zip(&parts).map(|(s, p)| s.compose(&p.answer())).collect();
                let c = self.pos_or(lit.atom.clone(), prev, parts, Link::Literal(i), Some(id), &scope, depth + 1)?;
                us.push(next);
                c
            } else {
                let set: SubstitutionSet = prev.iter().cloned().collect();
                let mut trees = Vec::new();
                for s in &set {
                    trees.push((s.clone(), self.failed_tree(&s.apply_atom(&lit.atom))?));
                }
                let c = self.neg_or(
                    lit.atom.clone(),
                    set,
                    SubstitutionSet::new(),
                    trees,
                    Link::Literal(i),
                    Some(id),
                    &scope,
                    depth + 1,
                )?;
                us.push(prev);
                c
            };
            children.push(child);
            rus = rests;
        }
        let n = &mut self.tree.nodes[id];
        n.annotation = Annotation::PosAnd(us);
        n.children = children;
        Ok(id)
    }

    /// A positive OR node for `atom` with begin tuple `ub` and part
    /// refutations `refs` of `atom·σ` for each `σ` in `ub`.
    #[allow(clippy::too_many_arguments)]
    pub fn pos_or(
        &mut self,
        atom: Atom,
        ub: SubstitutionTuple,
        refs: Vec<Refutation>,
        link: Link,
        parent: Option<NodeId>,
        scope: &BTreeSet<String>,
        depth: usize,
    ) -> Result<NodeId> {
        for (s, r) in ub.iter().zip(&refs) {
            if r.root() != [Literal::pos(s.apply_atom(&atom))] {
                return Err(Error::Proof(format!(
                    "refutation of ← {} does not belong to {}",
                    fmt_conj(r.root()),
                    s.apply_atom(&atom)
                )));
            }
        }
        let end: SubstitutionTuple = ub.iter().zip(&refs).map(|(s, r)| s.compose(&r.answer())).collect();
        let id = self.push(Label::Atom(atom.clone()), Annotation::PosOr { begin: ub.clone(), end }, link, parent);
        if is_leaf_predicate(self.db, &atom) {
            self.tree.nodes[id].evidence = Evidence::Refutations(refs);
            return Ok(id);
        }
        let mut scope = scope.clone();
        scope.extend(atom.vars());
        let mut groups: BTreeMap<(usize, ClauseId), Vec<usize>> = BTreeMap::new();
        for (j, r) in refs.iter().enumerate() {
            let c = r
                .first_clause()
                .ok_or_else(|| Error::Proof(format!("refutation of {atom} starts without a clause")))?;
            groups.entry((clause_rank(self.db, c), c)).or_default().push(j);
        }
        let mut children = Vec::new();
        let mut pi = Vec::new();
        for ((_, cid), js) in groups {
            let clause = self.db.clause(cid).ok_or_else(|| Error::Proof(format!("unknown clause {cid}")))?.clone();
            let w = clause_instance(&clause, &atom, &scope, depth)
                .ok_or_else(|| Error::Proof(format!("clause {clause} does not match {atom}")))?;
            let mut u0 = Vec::new();
            let mut ru0 = Vec::new();
            for &j in &js {
                u0.push(ub[j].clone());
                ru0.push(align_refutation(&refs[j].tail(), &ub[j].apply_conj(&w))?);
            }
            children.push(self.pos_and(w, u0, ru0, Link::Clause(cid), Some(id), &scope, depth)?);
            pi.push(js);
        }
        let n = &mut self.tree.nodes[id];
        n.children = children;
        n.pi = pi;
        Ok(id)
    }

    /// A negative OR node for `atom` with sets `⟨sb, se⟩` and, for each
    /// `σ`, an incomplete tree for `← atom·σ`.
    #[allow(clippy::too_many_arguments)]
    pub fn neg_or(
        &mut self,
        atom: Atom,
        sb: SubstitutionSet,
        se: SubstitutionSet,
        trees: Vec<(Substitution, SldNode)>,
        link: Link,
        parent: Option<NodeId>,
        scope: &BTreeSet<String>,
        depth: usize,
    ) -> Result<NodeId> {
        let id = self.push(Label::Atom(atom.clone()), Annotation::NegOr { begin: sb.clone(), end: se }, link, parent);
        if is_leaf_predicate(self.db, &atom) {
            self.tree.nodes[id].evidence = Evidence::Trees(trees);
            return Ok(id);
        }
        let mut scope = scope.clone();
        scope.extend(atom.vars());
        let mut used: BTreeSet<(usize, ClauseId)> = BTreeSet::new();
        for (_, t) in &trees {
            for c in &t.children {
                let cid = c
                    .clause
                    .ok_or_else(|| Error::Proof(format!("tree for {atom} has a root step without a clause")))?;
                used.insert((clause_rank(self.db, cid), cid));
            }
        }
        let mut children = Vec::new();
        for (_, cid) in used {
            let clause = self.db.clause(cid).ok_or_else(|| Error::Proof(format!("unknown clause {cid}")))?.clone();
            if clause.is_fact() {
                return Err(Error::Proof(format!("predicate of {atom} mixes facts and rules")));
            }
            let w = clause_instance(&clause, &atom, &scope, depth)
                .ok_or_else(|| Error::Proof(format!("clause {clause} does not match {atom}")))?;
            let mut f0 = Vec::new();
            for (s, t) in &trees {
                for c in t.children.iter().filter(|c| c.clause == Some(cid)) {
                    f0.push((s.clone(), align_tree(c, &s.apply_conj(&w))?));
                }
            }
            children.push(self.neg_and(w, sb.clone(), f0, Link::Clause(cid), Some(id), &scope, depth)?);
        }
        self.tree.nodes[id].children = children;
        Ok(id)
    }

    /// A negative AND node with first set `s0` and, per `σ`, incomplete
    /// trees for `← label·σ`.
    #[allow(clippy::too_many_arguments)]
    pub fn neg_and(
        &mut self,
        label: Vec<Literal>,
        s0: SubstitutionSet,
        f0: Vec<(Substitution, SldNode)>,
        link: Link,
        parent: Option<NodeId>,
        scope: &BTreeSet<String>,
        depth: usize,
    ) -> Result<NodeId> {
        let id = self.push(Label::Conj(label.clone()), Annotation::NegAnd(Vec::new()), link, parent);
        let mut scope = scope.clone();
        scope.extend(conj_vars(&label));
        let mut sets = vec![s0];
        let mut forests = vec![f0];
        let mut part_forests: Vec<Vec<(Substitution, SldNode)>> = Vec::new();
        for _ in 0..label.len() {
            let mut next_s = SubstitutionSet::new();
            let mut next_f = Vec::new();
            let mut parts = Vec::new();
            for (s, t) in forests.last().map(Vec::as_slice).unwrap_or_default() {
                let (part, rests) = split_tree(t);
                for theta in part.coverage() {
                    next_s.insert(s.compose(&theta));
                }
                for r in rests {
                    next_f.push((s.compose(&r.theta), r.tree));
                }
                parts.push((s.clone(), part));
            }
            sets.push(next_s);
            forests.push(next_f);
            part_forests.push(parts);
        }
        let mut kept = vec![sets[0].clone()];
        let mut children = Vec::new();
        for j in 1..=label.len() {
            if sets[j] == sets[j - 1] {
                continue;
            }
            let lit = &label[j - 1];
            let child = if lit.positive {
                self.neg_or(
                    lit.atom.clone(),
                    sets[j - 1].clone(),
                    sets[j].clone(),
                    part_forests[j - 1].clone(),
                    Link::Literal(j - 1),
                    Some(id),
                    &scope,
                    depth + 1,
                )?
            } else {
                let ub: SubstitutionTuple = sets[j - 1].difference(&sets[j]).cloned().collect();
                let mut refs = Vec::new();
                for s in &ub {
                    refs.push(self.refutation(&s.apply_atom(&lit.atom))?);
                }
                self.pos_or(lit.atom.clone(), ub, refs, Link::Literal(j - 1), Some(id), &scope, depth + 1)?
            };
            children.push(child);
            kept.push(sets[j].clone());
        }
        let n = &mut self.tree.nodes[id];
        n.annotation = Annotation::NegAnd(kept);
        n.children = children;
        Ok(id)
    }
}

/// Builds the proof tree of an SLDNF proof whose main part is a refutation.
pub fn construct(db: &Database, proof: &SldnfProof) -> Result<ProofTree> {
    let r = proof
        .main_refutation()
        .ok_or_else(|| Error::Proof("the query has no refutation, so there is no proof tree".into()))?
        .clone();
    let mut b = Builder::new(db, proof);
    let root =
        b.pos_and(proof.goal.clone(), vec![proof.tau.clone()], vec![r], Link::Root, None, &BTreeSet::new(), 0)?;
    b.tree.root = root;
    Ok(b.tree)
}

/// Runs the engine on `← goal·tau` and builds the proof tree.
pub fn prove(db: &Database, goal: &[Literal], tau: &Substitution, budget: Budget) -> Result<Option<ProofTree>> {
    let mut engine = Engine::new(db, budget);
    let proof = engine.build_proof(goal, tau)?;
    if proof.main_refutation().is_none() {
        return Ok(None);
    }
    construct(db, &proof).map(Some)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: String,
    pub node: NodeId,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub is_proof_tree: bool,
    pub is_safe: bool,
    pub is_allowed: bool,
    pub is_complete: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    /// Proof tree that is safe, allowed and complete.
    pub fn is_standard(&self) -> bool {
        self.is_proof_tree && self.is_safe && self.is_allowed && self.is_complete
    }
}

fn subset(a: &SubstitutionSet, b: &SubstitutionSet) -> bool {
    a.is_subset(b)
}

struct Checker<'a> {
    tree: &'a ProofTree,
    db: &'a Database,
    engine: Engine<'a>,
    report: ValidationReport,
}

impl Checker<'_> {
    fn fail(&mut self, condition: &str, node: NodeId, message: String) {
        match condition {
            "safe" => self.report.is_safe = false,
            "allowed" => self.report.is_allowed = false,
            "complete" => self.report.is_complete = false,
            _ => self.report.is_proof_tree = false,
        }
        self.report.violations.push(Violation { condition: condition.into(), node, message });
    }

    fn child_annotation(&self, id: NodeId) -> &Annotation {
        &self.tree.nodes[id].annotation
    }

    fn check_pos_and(&mut self, id: NodeId) {
        let n = &self.tree.nodes[id];
        let Annotation::PosAnd(us) = &n.annotation else { return };
        let lits = n.conj().map(<[Literal]>::to_vec).unwrap_or_default();
        if us.len() != lits.len() + 1 {
            return self.fail("2", id, format!("{} tuples for {} literals", us.len(), lits.len()));
        }
        if us.iter().any(|u| u.len() != us[0].len()) {
            self.fail("2", id, "tuples of different lengths".into());
        }
        if n.children.len() != lits.len() {
            return self.fail("2", id, format!("{} children for {} literals", n.children.len(), lits.len()));
        }
        let children = n.children.clone();
        let us = us.clone();
        for (i, &c) in children.iter().enumerate() {
            let child = &self.tree.nodes[c];
            let lit = &lits[i];
            if child.link != Link::Literal(i) || child.atom() != Some(&lit.atom) {
                self.fail("2", c, format!("child {i} is not the OR node of literal {lit}"));
                continue;
            }
            match self.child_annotation(c).clone() {
                Annotation::PosOr { begin, end } if lit.positive => {
                    if begin != us[i] || end != us[i + 1] {
                        self.fail(
                            "2",
                            c,
                            format!("annotation differs from ⟨{}, {}⟩", fmt_tuple(&us[i]), fmt_tuple(&us[i + 1])),
                        );
                    }
                }
                Annotation::NegOr { begin, end } if !lit.positive => {
                    let set: SubstitutionSet = us[i].iter().cloned().collect();
                    if begin != set || !end.is_empty() || us[i] != us[i + 1] {
                        self.fail("2", c, "negative child must carry ⟨set(U_{i-1}), ∅⟩ with U_i = U_{i-1}".into());
                    }
                    for s in &us[i] {
                        if !s.apply_atom(&lit.atom).is_ground() {
                            self.fail("safe", c, format!("{} is not ground", s.apply_atom(&lit.atom)));
                        }
                    }
                }
                _ => self.fail("2", c, format!("child of literal {lit} has the wrong kind")),
            }
        }
    }

    fn check_neg_and(&mut self, id: NodeId) {
        let n = &self.tree.nodes[id];
        let Annotation::NegAnd(ss) = &n.annotation else { return };
        let lits = n.conj().map(<[Literal]>::to_vec).unwrap_or_default();
        let ss = ss.clone();
        let children = n.children.clone();
        let m = ss.len().saturating_sub(1);
        if children.is_empty() || m == 0 {
            return self.fail("3", id, "negative AND node without filtering children".into());
        }
        if m > lits.len() || children.len() != m {
            return self.fail(
                "3",
                id,
                format!("{} sets and {} children for {} literals", ss.len(), children.len(), lits.len()),
            );
        }
        let mut last_lit: Option<usize> = None;
        for i in 1..=m {
            if subset(&ss[i - 1], &ss[i]) {
                self.fail("3", id, format!("S_{} ⊆ S_{}", i - 1, i));
            }
            if !set_more_general(&ss[i - 1], &ss[i]) || ss[i - 1] == ss[i] {
                self.fail("3", id, format!("S_{} is not strictly more general than S_{}", i - 1, i));
            }
            let c = children[i - 1];
            let Link::Literal(j) = self.tree.nodes[c].link else {
                self.fail("3", c, "child is not linked to a literal".into());
                continue;
            };
            if j >= lits.len() || last_lit.is_some_and(|l| l >= j) || self.tree.nodes[c].atom() != Some(&lits[j].atom) {
                self.fail("3", c, "child does not follow the literal order".into());
                continue;
            }
            last_lit = Some(j);
            let lit = &lits[j];
            match self.child_annotation(c).clone() {
                Annotation::PosOr { begin, .. } if !lit.positive => {
                    let set: SubstitutionSet = begin.iter().cloned().collect();
                    if begin.is_empty() || !subset(&set, &ss[i - 1]) {
                        self.fail("3", c, "begin tuple is not a non-empty part of S_{i-1}".into());
                    }
                    let rest: SubstitutionSet = ss[i - 1].difference(&set).cloned().collect();
                    if rest != ss[i] {
                        self.fail("3", c, format!("S_{i} differs from S_{} without the begin tuple", i - 1));
                    }
                    for s in &begin {
                        if !s.apply_atom(&lit.atom).is_ground() {
                            self.fail("safe", c, format!("{} is not ground", s.apply_atom(&lit.atom)));
                        }
                    }
                }
                Annotation::NegOr { begin, end } if lit.positive => {
                    if begin != ss[i - 1] || end != ss[i] {
                        self.fail("3", c, format!("annotation differs from ⟨S_{}, S_{i}⟩", i - 1));
                    }
                }
                _ => self.fail("3", c, format!("child of literal {lit} has the wrong kind")),
            }
        }
    }

    fn check_clause_child(&mut self, id: NodeId, c: NodeId, scope: &BTreeSet<String>, depth: usize) -> Option<Clause> {
        let a = self.tree.nodes[id].atom().cloned()?;
        let Link::Clause(cid) = self.tree.nodes[c].link else {
            self.fail("structure", c, "child of an OR node is not linked to a clause".into());
            return None;
        };
        let Some(clause) = self.db.clause(cid).cloned() else {
            self.fail("structure", c, format!("clause {cid} is not in the database"));
            return None;
        };
        let expected = clause_instance(&clause, &a, scope, depth);
        if expected.as_deref() != self.tree.nodes[c].conj() {
            self.fail("structure", c, format!("label is not the body of {clause} instantiated for {a}"));
        }
        Some(clause)
    }

    fn check_pos_or(&mut self, id: NodeId) {
        let n = &self.tree.nodes[id];
        let Annotation::PosOr { begin, end } = n.annotation.clone() else { return };
        let a = n.atom().cloned().unwrap_or_else(|| Atom::prop("?"));
        for s in &end {
            if !s.apply_atom(&a).is_ground() {
                self.fail("allowed", id, format!("{} is not ground", s.apply_atom(&a)));
            }
        }
        if begin.len() != end.len() {
            return self.fail("4", id, "begin and end tuples differ in length".into());
        }
        if n.is_leaf() {
            if !is_leaf_predicate(self.db, &a) {
                self.fail("complete", id, format!("leaf {a} is not extensional"));
            }
            for (s, e) in begin.iter().zip(&end) {
                match self.engine.answers(&[Literal::pos(a.clone())], s) {
                    Ok(ans) => {
                        if !ans.iter().any(|(_, th)| &s.compose(th) == e) {
                            self.fail(
                                "7",
                                id,
                                format!("no refutation of {} with answer leading to {e}", s.apply_atom(&a)),
                            );
                        }
                    }
                    Err(err) => self.fail("7", id, format!("engine: {err}")),
                }
            }
            return;
        }
        let children = n.children.clone();
        let pi = n.pi.clone();
        if pi.len() != children.len() {
            return self.fail("4", id, "no position map for the children".into());
        }
        let scope = self.tree.scope(id);
        let depth = self.tree.or_depth(id);
        let mut dom: BTreeSet<String> = BTreeSet::new();
        for &c in &children {
            if let Annotation::PosAnd(us) = self.child_annotation(c) {
                dom.extend(us.first().into_iter().flatten().flat_map(|s| s.dom()));
            }
        }
        dom.extend(a.vars());
        let mut covered = vec![false; begin.len()];
        for (k, &c) in children.iter().enumerate() {
            self.check_clause_child(id, c, &scope, depth);
            let Annotation::PosAnd(us) = self.child_annotation(c).clone() else {
                self.fail("4", c, "child of a positive OR node is not a positive AND node".into());
                continue;
            };
            let u0 = us.first().cloned().unwrap_or_default();
            let um = us.last().cloned().unwrap_or_default();
            if u0.is_empty() {
                self.fail("4", c, "child has an empty first tuple".into());
            }
            if pi[k].len() != u0.len() {
                self.fail("4", c, "position map has the wrong length".into());
                continue;
            }
            for (p, &pos) in pi[k].iter().enumerate() {
                if pos >= begin.len() || covered[pos] {
                    self.fail("4", c, format!("position {pos} is not a permutation slot"));
                    continue;
                }
                covered[pos] = true;
                if begin[pos] != u0[p] {
                    self.fail("4", c, format!("U_B[{pos}] = {} but the child starts with {}", begin[pos], u0[p]));
                }
                if end[pos] != um[p].restrict(&dom) {
                    self.fail(
                        "4",
                        c,
                        format!("U_E[{pos}] = {} but the child ends with {}", end[pos], um[p].restrict(&dom)),
                    );
                }
            }
        }
        if covered.iter().any(|c| !c) {
            self.fail("4", id, "children do not cover every position".into());
        }
    }

    fn check_neg_or(&mut self, id: NodeId) {
        let n = &self.tree.nodes[id];
        let Annotation::NegOr { begin, end } = n.annotation.clone() else { return };
        let a = n.atom().cloned().unwrap_or_else(|| Atom::prop("?"));
        for s in &end {
            if !s.apply_atom(&a).is_ground() {
                self.fail("allowed", id, format!("{} is not ground", s.apply_atom(&a)));
            }
        }
        let condition = if n.is_leaf() { "6" } else { "5" };
        if subset(&begin, &end) {
            self.fail(condition, id, "S_B ⊆ S_E".into());
        }
        if n.is_leaf() {
            let leaf_pred = is_leaf_predicate(self.db, &a);
            if !leaf_pred {
                self.fail("complete", id, format!("leaf {a} is not extensional"));
            }
            let mut expected = SubstitutionSet::new();
            for s in &begin {
                match self.engine.answers(&[Literal::pos(a.clone())], s) {
                    Ok(ans) => expected.extend(ans.into_iter().map(|(_, th)| s.compose(&th))),
                    Err(err) => self.fail("6", id, format!("engine: {err}")),
                }
            }
            if leaf_pred && expected != end {
                self.fail("6", id, format!("S_E = {} but the answers give {}", fmt_set(&end), fmt_set(&expected)));
            } else if !leaf_pred && !set_more_general(&end, &expected) {
                self.fail(
                    "6",
                    id,
                    format!("S_E = {} does not cover the answers {}", fmt_set(&end), fmt_set(&expected)),
                );
            }
            return;
        }
        let children = n.children.clone();
        let scope = self.tree.scope(id);
        let depth = self.tree.or_depth(id);
        let mut union = SubstitutionSet::new();
        let mut used = BTreeSet::new();
        for &c in &children {
            if let Some(cl) = self.check_clause_child(id, c, &scope, depth) {
                used.insert(cl.id);
            }
            let Annotation::NegAnd(ss) = self.child_annotation(c).clone() else {
                self.fail("5", c, "child of a negative OR node is not a negative AND node".into());
                continue;
            };
            let s0 = ss.first().cloned().unwrap_or_default();
            if s0 != begin {
                self.fail("5", c, "S_0 differs from S_B".into());
            }
            let mut vars: BTreeSet<String> = s0.iter().flat_map(|s| s.dom()).collect();
            vars.extend(a.vars());
            union.extend(ss.last().into_iter().flatten().map(|s| s.restrict(&vars)));
        }
        if union != end {
            self.fail("5", id, format!("children end in {} instead of S_E = {}", fmt_set(&union), fmt_set(&end)));
        }
        let rules: BTreeSet<ClauseId> = self.db.definition(&a.key()).filter(|c| !c.is_fact()).map(|c| c.id).collect();
        if used != rules {
            self.fail("5", id, "children do not cover every rule of the predicate".into());
        }
    }
}

/// Checks the validity conditions of a proof tree against `db`, together
/// with safety, allowedness and completeness.
pub fn validate(tree: &ProofTree, db: &Database, budget: Budget) -> ValidationReport {
    let mut ck = Checker {
        tree,
        db,
        engine: Engine::new(db, budget),
        report: ValidationReport {
            is_proof_tree: true,
            is_safe: true,
            is_allowed: true,
            is_complete: true,
            violations: Vec::new(),
        },
    };
    let root = &tree.nodes[tree.root];
    match &root.annotation {
        Annotation::PosAnd(us) if us.first() == Some(&vec![tree.tau.clone()]) => {}
        _ => ck.fail("1", tree.root, "root must be a positive AND node starting with ⟨τ⟩".into()),
    }
    for id in tree.preorder() {
        for &c in &tree.nodes[id].children {
            if tree.nodes[c].parent != Some(id) {
                ck.fail("structure", c, "parent link is inconsistent".into());
            }
        }
        match tree.nodes[id].kind() {
            NodeKind::PosAnd => ck.check_pos_and(id),
            NodeKind::NegAnd => ck.check_neg_and(id),
            NodeKind::PosOr => ck.check_pos_or(id),
            NodeKind::NegOr => ck.check_neg_or(id),
        }
    }
    ck.report
}

/// Structural invariants of safe and allowed trees: distinct members of
/// every set or tuple are pairwise non-unifiable, every neg-AND sequence
/// falls strictly, and every OR end substitution grounds its atom.
pub fn check_invariants(tree: &ProofTree) -> Vec<String> {
    let mut out = Vec::new();
    let pairwise = |xs: &[Substitution], what: &str, id: NodeId, out: &mut Vec<String>| {
        for i in 0..xs.len() {
            for j in i + 1..xs.len() {
                if xs[i].unifiable_with(&xs[j]) {
                    out.push(format!("node {id}: {what} members {} and {} unify", xs[i], xs[j]));
                }
            }
        }
    };
    for id in tree.preorder() {
        let n = &tree.nodes[id];
        match &n.annotation {
            Annotation::PosAnd(us) => us.iter().for_each(|u| pairwise(u, "tuple", id, &mut out)),
            Annotation::NegAnd(ss) => {
                for s in ss {
                    pairwise(&s.iter().cloned().collect::<Vec<_>>(), "set", id, &mut out);
                }
                for w in ss.windows(2) {
                    if w[0] == w[1] || !set_more_general(&w[0], &w[1]) {
                        out.push(format!("node {id}: sequence does not fall strictly"));
                    }
                }
            }
            Annotation::PosOr { begin, end } => {
                pairwise(begin, "begin", id, &mut out);
                pairwise(end, "end", id, &mut out);
                if let Some(a) = n.atom() {
                    if end.iter().any(|s| !s.apply_atom(a).is_ground()) {
                        out.push(format!("node {id}: {a} is not ground under its end tuple"));
                    }
                }
            }
            Annotation::NegOr { begin, end } => {
                pairwise(&begin.iter().cloned().collect::<Vec<_>>(), "begin", id, &mut out);
                pairwise(&end.iter().cloned().collect::<Vec<_>>(), "end", id, &mut out);
                if let Some(a) = n.atom() {
                    if end.iter().any(|s| !s.apply_atom(a).is_ground()) {
                        out.push(format!("node {id}: {a} is not ground under its end set"));
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{compile_constraints, parse_constraints};
    use crate::program::parse_database;

    pub(crate) fn access_tree() -> (Database, ProofTree) {
        let base = parse_database(include_str!("../tests/data/access.dl")).unwrap();
        let fs = parse_constraints(include_str!("../tests/data/access.fol")).unwrap();
        let cc = compile_constraints(&fs, Some(&base)).unwrap();
        let db = base.with_constraint_clauses(&cc[0].clauses).unwrap();
        let goal = vec![Literal::pos(cc[0].entry.clone())];
        let tree = prove(&db, &goal, &Substitution::empty(), Budget::default()).unwrap().unwrap();
        (db, tree)
    }

    fn annotation(t: &ProofTree, kind: NodeKind, label: &str) -> String {
        let id = t.find(kind, label).unwrap_or_else(|| panic!("no {kind} {label} in\n{t}"));
        t.node(id).annotation.to_string()
    }

    #[test]
    fn walkthrough_annotations() {
        let (db, t) = access_tree();
        assert_eq!(annotation(&t, NodeKind::NegOr, "employee(E)"), "⟨{ε}, {{E/hans}, {E/peter}}⟩");
        assert_eq!(annotation(&t, NodeKind::PosOr, "access(E,menu)"), "⟨⟨{E/hans}, {E/peter}⟩, ⟨{E/hans}, {E/peter}⟩⟩");
        assert_eq!(annotation(&t, NodeKind::PosOr, "manager(E,E2)"), "⟨⟨{E/peter}⟩, ⟨{E/peter, E2/hans}⟩⟩");
        assert_eq!(annotation(&t, NodeKind::PosOr, "owner(E,menu)"), "⟨⟨{E/hans}⟩, ⟨{E/hans}⟩⟩");
        assert_eq!(t.root_answer().unwrap(), vec![Substitution::empty()]);
        let report = validate(&t, &db, Budget::default());
        assert!(report.is_standard(), "{:?}\n{t}", report.violations);
        assert!(check_invariants(&t).is_empty());
    }

    #[test]
    fn tampering_is_detected() {
        let (db, mut t) = access_tree();
        let id = t.find(NodeKind::NegOr, "employee(E)").unwrap();
        if let Annotation::NegOr { end, .. } = &mut t.node_mut(id).annotation {
            end.pop_first();
        }
        let report = validate(&t, &db, Budget::default());
        assert!(!report.is_proof_tree);
        assert!(report.violations.iter().any(|v| v.condition == "6"));
    }

    #[test]
    fn and_or_expansion() {
        let (db, t) = access_tree();
        let a = Atom::new("access", vec![Term::var("E"), Term::constant("menu")]);
        let kids = and_or_children(&db, &Label::Atom(a), &BTreeSet::from(["E".to_string()]), 3);
        assert_eq!(kids.len(), 3);
        assert_eq!(kids[1].0.to_string(), "manager(E,E2), owner(E2,menu)");
        let emp = Atom::new("employee", vec![Term::var("E")]);
        assert!(and_or_children(&db, &Label::Atom(emp), &BTreeSet::new(), 1).is_empty());
        assert!(t.to_dot().contains("dashed"));
        assert_eq!(t.to_json()["root"]["kind"], "pos-AND");
    }
}
