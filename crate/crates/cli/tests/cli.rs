use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

fn ptcheck(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptcheck")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn checked(dir: &Path) {
    let (db, fol) = (data("access.dl"), data("access.fol"));
    let o = ptcheck(dir, &["check", db.to_str().unwrap(), fol.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("ic1 (forall E:employee (access(E,menu))): satisfied"));
}

#[test]
fn check_writes_state_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    checked(dir.path());
    let state = std::fs::read_to_string(dir.path().join("state.json")).unwrap();
    assert!(state.contains("\"format_version\": 1"));
    let o = ptcheck(
        dir.path(),
        &["check", data("access.dl").to_str().unwrap(), data("access.fol").to_str().unwrap(), "--dump", "json"],
    );
    assert!(stdout(&o).contains("access(E,menu)"));
}

#[test]
fn empty_constraints_and_violations() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "none.fol", "% nothing\n");
    let o = ptcheck(dir.path(), &["check", data("access.dl").to_str().unwrap(), &empty]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "");
    let db = std::fs::read_to_string(data("access.dl")).unwrap() + "employee(karl).\n";
    let db = write(dir.path(), "karl.dl", &db);
    let o = ptcheck(dir.path(), &["check", &db, data("access.fol").to_str().unwrap(), "--paranoid"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("violated"));
}

#[test]
fn apply_reports_incremental_work() {
    let dir = tempfile::tempdir().unwrap();
    checked(dir.path());
    let p1 = write(dir.path(), "p1.txn", "del clearance(hans,1).\n");
    let o = ptcheck(dir.path(), &["apply", "state.json", &p1]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("0 conflicts, 0 re-proofs, 0 engine calls"), "{}", stdout(&o));
    let p3 = write(dir.path(), "p3.txn", "del manager(peter,hans).\nadd classification(menu,1).\n");
    let o = ptcheck(dir.path(), &["apply", "state.json", &p3, "--paranoid", "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("1 conflict, 1 re-proof"), "{}", stdout(&o));
    assert!(stdout(&o).contains("transaction committed"));
}

#[test]
fn violating_transaction_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    checked(dir.path());
    let before = std::fs::read(dir.path().join("state.json")).unwrap();
    let t = write(dir.path(), "own.txn", "del owner(hans,menu).\n");
    let o = ptcheck(dir.path(), &["apply", "state.json", &t, "--paranoid"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("transaction rejected"));
    assert_eq!(std::fs::read(dir.path().join("state.json")).unwrap(), before);
}

#[test]
fn errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    checked(dir.path());
    let bad = write(dir.path(), "bad.txn", "del employee(nobody).\n");
    assert_eq!(ptcheck(dir.path(), &["apply", "state.json", &bad]).status.code(), Some(2));
    let ok = write(dir.path(), "ok.txn", "del clearance(hans,1).\n");
    let other = write(dir.path(), "other.fol", "exists E access(E,menu).\n");
    let o =
        ptcheck(dir.path(), &["apply", "state.json", &ok, "--sources", data("access.dl").to_str().unwrap(), &other]);
    assert_eq!(o.status.code(), Some(2));
    let tampered = std::fs::read_to_string(dir.path().join("state.json")).unwrap().replace("hans", "hanna");
    write(dir.path(), "state.json", &tampered);
    assert_eq!(ptcheck(dir.path(), &["apply", "state.json", &ok]).status.code(), Some(2));
    let broken = write(dir.path(), "broken.dl", "p(X :- q.\n");
    assert_eq!(ptcheck(dir.path(), &["check", &broken, data("access.fol").to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn translate_prints_clauses() {
    let dir = tempfile::tempdir().unwrap();
    let o = ptcheck(dir.path(), &["translate", data("access.fol").to_str().unwrap()]);
    assert_eq!(stdout(&o), "ic1 :- not _aux1.\n_aux1 :- employee(E), not access(E,menu).\n");
    let f = write(dir.path(), "fact.fol", "p(a).\n");
    assert_eq!(stdout(&ptcheck(dir.path(), &["translate", &f])), "ic1 :- p(a).\n");
}

#[test]
fn fuzz_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let o = ptcheck(dir.path(), &["fuzz", "--seed", "1", "--cases", "50"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("50 cases agree"));
    let o = ptcheck(dir.path(), &["fuzz", "--cases", "0"]);
    assert_eq!(o.status.code(), Some(0));
}
