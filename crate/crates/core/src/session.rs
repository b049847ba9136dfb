//! Persisted checking state: the current database, the compiled
//! constraints and one proof tree per satisfied constraint.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compiler::{compile_constraints, parse_constraints, CompiledConstraint};
use crate::engine::Budget;
use crate::error::{Error, Result};
use crate::maintenance::{initial_tree, oracle_recheck, ueberpruefe_baum, Change, Stats, Status, Verdict};
use crate::program::{parse_database, Database, Transaction};
use crate::prooftree::ProofTree;

pub const FORMAT_VERSION: u32 = 1;

/// One constraint with its current verdict and, when it holds, its tree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub constraint: CompiledConstraint,
    pub status: Status,
    pub tree: Option<ProofTree>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub format_version: u32,
    /// SHA-256 of the database and constraint sources the session started
    /// from.
    pub source_hash: String,
    /// SHA-256 of the serialized database and entries, checked on load.
    pub content_hash: String,
    pub database: Database,
    pub entries: Vec<Entry>,
}

/// Hex SHA-256 of the two source texts.
pub fn source_hash(db_text: &str, fol_text: &str) -> String {
    let mut h = Sha256::new();
    h.update(db_text.as_bytes());
    h.update([0u8]);
    h.update(fol_text.as_bytes());
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn content_hash(db: &Database, entries: &[Entry]) -> Result<String> {
    let body = serde_json::to_vec(&(db, entries)).map_err(|e| Error::State(e.to_string()))?;
    Ok(hex(&Sha256::digest(&body)))
}

/// Parses the sources and compiles the constraints; the returned database
/// includes the constraint clauses.
pub fn prepare(db_text: &str, fol_text: &str) -> Result<(Database, Vec<CompiledConstraint>)> {
    let base = parse_database(db_text)?;
    let formulas = parse_constraints(fol_text)?;
    let compiled = compile_constraints(&formulas, Some(&base))?;
    let clauses: Vec<_> = compiled.iter().flat_map(|c| c.clauses.iter().cloned()).collect();
    let database = base.with_constraint_clauses(&clauses)?;
    Ok((database, compiled))
}

/// What checking one constraint after a transaction produced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApplyReport {
    pub entry: String,
    pub before: Status,
    pub status: Status,
    pub stats: Stats,
    /// The full re-check status, when requested.
    pub recheck: Option<Status>,
}

impl SessionState {
    /// Parses and compiles the sources and checks every constraint from
    /// scratch. Constraint clauses are added to the database.
    pub fn check(db_text: &str, fol_text: &str, budget: Budget) -> Result<SessionState> {
        let (database, compiled) = prepare(db_text, fol_text)?;
        let entries = compiled.into_iter().map(|c| Entry::check(c, &database, budget)).collect::<Result<Vec<_>>>()?;
        SessionState::new(source_hash(db_text, fol_text), database, entries)
    }

    pub fn new(source_hash: String, database: Database, entries: Vec<Entry>) -> Result<SessionState> {
        let content_hash = content_hash(&database, &entries)?;
        Ok(SessionState { format_version: FORMAT_VERSION, source_hash, content_hash, database, entries })
    }

    pub fn all_satisfied(&self) -> bool {
        self.entries.iter().all(|e| e.status == Status::Satisfied)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::State(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a state file, rejecting unknown versions and content that no
    /// longer matches its hash.
    pub fn from_json(text: &str) -> Result<SessionState> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::State(e.to_string()))?;
        let version = raw.get("format_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(FORMAT_VERSION)) {
            return Err(Error::State(format!("unsupported state format {version:?}, expected {FORMAT_VERSION}")));
        }
        let state: SessionState = serde_json::from_value(raw).map_err(|e| Error::State(e.to_string()))?;
        if content_hash(&state.database, &state.entries)? != state.content_hash {
            return Err(Error::State("state content does not match its hash".into()));
        }
        Ok(state)
    }

    pub fn load(path: &Path) -> Result<SessionState> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::State(format!("{}: {e}", path.display())))?;
        SessionState::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::State(format!("{}: {e}", path.display())))
    }

    /// Fails unless the session was started from exactly these sources.
    pub fn verify_sources(&self, db_text: &str, fol_text: &str) -> Result<()> {
        if source_hash(db_text, fol_text) != self.source_hash {
            return Err(Error::State("source files changed since the state was written".into()));
        }
        Ok(())
    }

    /// Applies a transaction, checking each constraint incrementally when
    /// it has a tree and from scratch otherwise. With `recheck`, every
    /// verdict is also recomputed in full. The state is only updated by the
    /// caller, from the returned successor.
    pub fn apply(&self, txn: &Transaction, budget: Budget, recheck: bool) -> Result<(SessionState, Vec<ApplyReport>)> {
        let (post, change) = Change::apply(&self.database, txn)?;
        let steps = self.entries.iter().map(|e| e.step(&change, &post, budget, recheck)).collect::<Result<Vec<_>>>()?;
        self.successor(post, steps)
    }

    /// Assembles the state after a transaction from per-entry results in
    /// constraint order.
    pub fn successor(
        &self,
        post: Database,
        steps: Vec<(Entry, ApplyReport)>,
    ) -> Result<(SessionState, Vec<ApplyReport>)> {
        let (entries, reports): (Vec<_>, Vec<_>) = steps.into_iter().unzip();
        Ok((SessionState::new(self.source_hash.clone(), post, entries)?, reports))
    }
}

impl Entry {
    /// The entry after `change` together with its report.
    pub fn step(
        &self,
        change: &Change,
        post: &Database,
        budget: Budget,
        recheck: bool,
    ) -> Result<(Entry, ApplyReport)> {
        let (next, stats) = self.after(change, post, budget)?;
        let full = if recheck { Some(oracle_recheck(post, &self.constraint, budget)?.status) } else { None };
        let report = ApplyReport {
            entry: self.constraint.entry.to_string(),
            before: self.status,
            status: next.status,
            stats,
            recheck: full,
        };
        Ok((next, report))
    }

    pub fn check(constraint: CompiledConstraint, db: &Database, budget: Budget) -> Result<Entry> {
        let (status, tree) = match initial_tree(db, &constraint, budget) {
            Ok(Some(t)) => (Status::Satisfied, Some(t)),
            Ok(None) => (Status::Violated, None),
            Err(Error::Budget(_)) => (Status::UnknownBudget, None),
            Err(e) => return Err(e),
        };
        Ok(Entry { constraint, status, tree })
    }

    /// The entry after `change`, which turned the database into `post`.
    pub fn after(&self, change: &Change, post: &Database, budget: Budget) -> Result<(Entry, Stats)> {
        let Some(tree) = &self.tree else {
            let r = oracle_recheck(post, &self.constraint, budget)?;
            let stats = Stats { full_reproofs: 1, engine_nodes: r.engine_nodes, ..Stats::default() };
            return Ok((Entry { constraint: self.constraint.clone(), status: r.status, tree: r.tree }, stats));
        };
        let Verdict { status, tree, stats, .. } = ueberpruefe_baum(tree, change, post, budget)?;
        Ok((Entry { constraint: self.constraint.clone(), status, tree }, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::parse_transaction;

    const DB: &str = include_str!("../tests/data/access.dl");
    const FOL: &str = include_str!("../tests/data/access.fol");

    #[test]
    fn save_load_save_is_identical() {
        let s = SessionState::check(DB, FOL, Budget::default()).unwrap();
        let first = s.to_json().unwrap();
        let again = SessionState::from_json(&first).unwrap().to_json().unwrap();
        assert_eq!(first, again);
        let txn = parse_transaction("del manager(peter,hans).\nadd classification(menu,1).").unwrap();
        let (next, _) = s.apply(&txn, Budget::default(), false).unwrap();
        let first = next.to_json().unwrap();
        assert_eq!(first, SessionState::from_json(&first).unwrap().to_json().unwrap());
    }

    #[test]
    fn tampering_and_stale_sources_are_errors() {
        let s = SessionState::check(DB, FOL, Budget::default()).unwrap();
        let text = s.to_json().unwrap().replace("\"peter\"", "\"petra\"");
        assert!(matches!(SessionState::from_json(&text), Err(Error::State(_))));
        let text = s.to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(SessionState::from_json(&text), Err(Error::State(_))));
        assert!(s.verify_sources(DB, FOL).is_ok());
        assert!(s.verify_sources(&format!("{DB}employee(karl).\n"), FOL).is_err());
    }

    #[test]
    fn successive_applies_match_a_fresh_check() {
        let s = SessionState::check(DB, FOL, Budget::default()).unwrap();
        let t1 = parse_transaction("del manager(peter,hans).\nadd classification(menu,1).").unwrap();
        let t2 = parse_transaction("del classification(menu,1).").unwrap();
        let (s1, r1) = s.apply(&t1, Budget::default(), true).unwrap();
        assert_eq!(r1[0].status, Status::Satisfied);
        assert_eq!(r1[0].recheck, Some(Status::Satisfied));
        let (s2, r2) = s1.apply(&t2, Budget::default(), true).unwrap();
        assert_eq!(r2[0].status, Status::Violated);
        assert_eq!(r2[0].recheck, Some(Status::Violated));
        assert!(!s2.all_satisfied());
    }
}
