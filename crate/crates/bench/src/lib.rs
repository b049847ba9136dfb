//! Scaled versions of the office access example for the benchmarks.

use prooftree_core::maintenance::initial_tree;
use prooftree_core::session::prepare;
use prooftree_core::{parse_transaction, Budget, Change, CompiledConstraint, Database, ProofTree, Result};

/// Every employee must be able to read the menu.
pub const CONSTRAINT: &str = "forall E:employee access(E,menu).\n";

/// An office with `n` employees (at least 2). Even employees own the menu;
/// each odd employee is managed by the even one before it.
pub fn office(n: usize) -> String {
    let mut out = String::from(
        "access(E,F) :- owner(E,F).\n\
         access(E,F) :- manager(E,E2), owner(E2,F).\n\
         access(E,F) :- classification(F,C1), clearance(E,C2), C1 <= C2.\n",
    );
    for i in 0..n.max(2) {
        out.push_str(&format!("employee(e{i}).\nclearance(e{i},{}).\n", 1 + i % 2));
        if i % 2 == 0 {
            out.push_str(&format!("owner(e{i},menu).\n"));
        } else {
            out.push_str(&format!("manager(e{i},e{}).\n", i - 1));
        }
    }
    out
}

/// The kinds of update measured.
pub const UPDATES: [(&str, &str); 3] = [
    ("unrelated", "del clearance(e0,1).\n"),
    ("maintenance", "del manager(e1,e0).\ndel employee(e1).\n"),
    ("conflict", "del manager(e1,e0).\nadd classification(menu,1).\n"),
];

/// A checked database with its constraint tree.
pub struct Fixture {
    pub db: Database,
    pub constraint: CompiledConstraint,
    pub tree: ProofTree,
}

pub fn fixture(n: usize) -> Result<Fixture> {
    let (db, mut compiled) = prepare(&office(n), CONSTRAINT)?;
    let constraint = compiled.remove(0);
    let tree = initial_tree(&db, &constraint, Budget::default())?.expect("the office constraint holds");
    Ok(Fixture { db, constraint, tree })
}

/// The database after `update` and the change it made.
pub fn updated(f: &Fixture, update: &str) -> Result<(Database, Change)> {
    Change::apply(&f.db, &parse_transaction(update)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use prooftree_core::{oracle_recheck, ueberpruefe_baum, Status};

    #[test]
    fn incremental_and_full_agree() {
        for n in [2, 7, 20] {
            let f = fixture(n).unwrap();
            for (name, update) in UPDATES {
                let (post, change) = updated(&f, update).unwrap();
                let v = ueberpruefe_baum(&f.tree, &change, &post, Budget::default()).unwrap();
                let full = oracle_recheck(&post, &f.constraint, Budget::default()).unwrap();
                assert_eq!(v.status, full.status, "{name} at {n}");
                assert_eq!(v.status, Status::Satisfied, "{name} at {n}");
            }
        }
    }
}
