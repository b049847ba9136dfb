//! Deductive databases with SLDNF proof trees and incremental integrity
//! checking.

pub mod compiler;
pub mod engine;
pub mod error;
pub mod fuzz;
pub mod logic;
pub mod maintenance;
pub mod oracle;
pub mod program;
pub mod prooftree;
pub mod session;
pub mod syntax;

pub use compiler::{compile_constraints, parse_constraints, CompiledConstraint, Formula};
pub use engine::{
    compose_refutations, compose_trees, split_refutation, split_tree, Budget, Engine, MainProof, NodeStatus,
    Refutation, SldNode, SldnfProof,
};
pub use error::{Error, Result};
pub use logic::{mgu, Atom, Literal, PredKey, Substitution, SubstitutionSet, SubstitutionTuple, Term};
pub use maintenance::{
    detect, oracle_recheck, ueberpruefe_baum, Change, Hit, HitKind, ImpactReport, Stats, Status, Verdict,
};
pub use program::{
    analyze_dependencies, apply_transaction, check_legality, parse_database, parse_transaction, Clause, ClauseId,
    Database, Transaction,
};
pub use prooftree::{construct, prove, validate, Annotation, NodeKind, ProofTree, ValidationReport};
pub use session::SessionState;
