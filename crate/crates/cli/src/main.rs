//! `ptcheck`: checks integrity constraints of a deductive database and
//! maintains their proof trees across transactions.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use prooftree_core::compiler::print_clauses;
use prooftree_core::fuzz::{random_case, run_case, shrink, Bounds, Outcome};
use prooftree_core::maintenance::Change;
use prooftree_core::oracle::{eval_formula, stratified_model};
use prooftree_core::program::{check_legality, Database};
use prooftree_core::session::{prepare, source_hash, ApplyReport, Entry, SessionState};
use prooftree_core::{compile_constraints, parse_constraints, parse_transaction, Budget, Status};
use rayon::prelude::*;

const EXIT_VIOLATED: u8 = 1;
const EXIT_ERROR: u8 = 2;
const EXIT_DISAGREE: u8 = 3;
const EXIT_COUNTEREXAMPLE: u8 = 4;

#[derive(Parser)]
#[command(name = "ptcheck", version, about = "Integrity checking with maintained SLDNF proof trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check all constraints from scratch and write a state file.
    Check {
        database: PathBuf,
        constraints: PathBuf,
        /// Where to write the state.
        #[arg(long, default_value = "state.json")]
        state: PathBuf,
        #[command(flatten)]
        opts: Opts,
        /// Accept databases that are not strict.
        #[arg(long)]
        force: bool,
    },
    /// Apply a transaction to a saved state, checking incrementally.
    Apply {
        state: PathBuf,
        transaction: PathBuf,
        /// Refuse to run unless the state was created from these files.
        #[arg(long, num_args = 2, value_names = ["DATABASE", "CONSTRAINTS"])]
        sources: Option<Vec<PathBuf>>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Print the clauses compiled from a constraint file.
    Translate { constraints: PathBuf },
    /// Compare incremental and full checking on random cases.
    Fuzz {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        cases: usize,
        /// Where the shrunk counterexample is written.
        #[arg(long, default_value = "counterexample.txt")]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        max_predicates: usize,
        #[arg(long, default_value_t = 20)]
        max_facts: usize,
        #[arg(long, default_value_t = 6)]
        max_rules: usize,
        #[arg(long, default_value_t = 3)]
        max_constants: usize,
        #[arg(long, default_value_t = Budget::default().max_depth)]
        max_depth: usize,
        #[arg(long, default_value_t = Budget::default().max_nodes)]
        max_nodes: usize,
    },
}

#[derive(Args)]
struct Opts {
    /// Print every proof tree after the report.
    #[arg(long, value_enum)]
    dump: Option<Dump>,
    /// Re-check every verdict from scratch and fail on disagreement.
    #[arg(long)]
    paranoid: bool,
    #[arg(long, default_value_t = Budget::default().max_depth)]
    max_depth: usize,
    #[arg(long, default_value_t = Budget::default().max_nodes)]
    max_nodes: usize,
    /// Worker threads for per-constraint checking.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl Opts {
    fn budget(&self) -> Budget {
        Budget { max_depth: self.max_depth, max_nodes: self.max_nodes }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new().num_threads(self.jobs.max(1)).build()?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Dump {
    Dot,
    Json,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn dump(entries: &[Entry], how: Option<Dump>) -> Result<()> {
    let Some(how) = how else { return Ok(()) };
    for e in entries {
        let Some(t) = &e.tree else { continue };
        match how {
            Dump::Dot => print!("{}", t.to_dot()),
            Dump::Json => println!("{}", serde_json::to_string_pretty(&t.to_json())?),
        }
    }
    Ok(())
}

fn plural(n: usize, word: &str) -> String {
    format!("{n} {word}{}", if n == 1 { "" } else { "s" })
}

fn exit_for(entries: &[Entry]) -> u8 {
    if entries.iter().all(|e| e.status == Status::Satisfied) {
        0
    } else {
        EXIT_VIOLATED
    }
}

fn check(database: &Path, constraints: &Path, state: &Path, opts: &Opts, force: bool) -> Result<u8> {
    let (db_text, fol_text) = (read(database)?, read(constraints)?);
    let (db, compiled) = prepare(&db_text, &fol_text)?;
    let legality = check_legality(&db);
    for v in &legality.violations {
        eprintln!("warning: {v}");
    }
    if !legality.stratified || !legality.allowed || (!legality.strict && !force) {
        bail!(
            "the database is not legal{}",
            if legality.stratified && legality.allowed { " (use --force to accept a non-strict database)" } else { "" }
        );
    }
    let budget = opts.budget();
    let entries: Vec<Entry> = opts.pool()?.install(|| {
        compiled.into_par_iter().map(|c| Entry::check(c, &db, budget)).collect::<prooftree_core::Result<_>>()
    })?;
    let mut code = exit_for(&entries);
    let model = if opts.paranoid {
        Some(stratified_model(&Database::from_clauses(db.base_clauses().cloned().collect())?)?)
    } else {
        None
    };
    for e in &entries {
        println!("{} ({}): {}", e.constraint.entry, e.constraint.source, e.status);
        if let Some(model) = model.as_ref().filter(|_| e.status != Status::UnknownBudget) {
            let holds = eval_formula(model, &e.constraint.source)?;
            if holds != (e.status == Status::Satisfied) {
                eprintln!("error: bottom-up evaluation disagrees for {}", e.constraint.entry);
                code = EXIT_DISAGREE;
            }
        }
    }
    let session = SessionState::new(source_hash(&db_text, &fol_text), db, entries)?;
    session.save(state)?;
    dump(&session.entries, opts.dump)?;
    Ok(code)
}

fn report_line(r: &ApplyReport) -> String {
    let s = &r.stats;
    let calls = s.reproof_calls + s.full_reproofs + s.merge_builds;
    format!(
        "{}: {} -> {}; {}, {}, {}, {}",
        r.entry,
        r.before,
        r.status,
        plural(s.maintenance_hits, "maintenance hit"),
        plural(s.conflicts, "conflict"),
        plural(s.reproof_calls, "re-proof"),
        plural(calls, "engine call"),
    )
}

fn apply(state_path: &Path, txn_path: &Path, sources: Option<&[PathBuf]>, opts: &Opts) -> Result<u8> {
    let state = SessionState::load(state_path)?;
    if let Some([db, fol]) = sources {
        state.verify_sources(&read(db)?, &read(fol)?)?;
    }
    let txn = parse_transaction(&read(txn_path)?)?;
    let (post, change) = Change::apply(&state.database, &txn)?;
    let legality = check_legality(&post);
    if !legality.stratified || !legality.allowed {
        bail!("the transaction makes the database illegal: {}", legality.violations.join("; "));
    }
    let budget = opts.budget();
    let steps = opts.pool()?.install(|| {
        state
            .entries
            .par_iter()
            .map(|e| e.step(&change, &post, budget, opts.paranoid))
            .collect::<prooftree_core::Result<Vec<_>>>()
    })?;
    let (next, reports) = state.successor(post, steps)?;
    let mut disagree = false;
    for r in &reports {
        println!("{}", report_line(r));
        if let Some(full) = r.recheck {
            if full != r.status {
                eprintln!("error: full re-check of {} says {full}", r.entry);
                disagree = true;
            }
        }
    }
    if disagree {
        return Ok(EXIT_DISAGREE);
    }
    let broken = reports.iter().any(|r| r.before == Status::Satisfied && r.status != Status::Satisfied);
    if broken {
        println!("transaction rejected; state unchanged");
    } else {
        next.save(state_path)?;
        println!("transaction committed");
    }
    dump(&next.entries, opts.dump)?;
    Ok(exit_for(&next.entries))
}

fn translate(constraints: &Path) -> Result<u8> {
    let fs = parse_constraints(&read(constraints)?)?;
    print!("{}", print_clauses(&compile_constraints(&fs, None)?));
    Ok(0)
}

fn fuzz(seed: u64, cases: usize, out: &Path, bounds: Bounds, budget: Budget) -> Result<u8> {
    let (mut checked, mut skipped, mut budgeted) = (0, 0, 0);
    let mut next = seed;
    while checked < cases {
        let case = random_case(next, &bounds);
        next += 1;
        let failure = match run_case(&case, budget) {
            Ok(Outcome::InitiallyViolated) => {
                skipped += 1;
                continue;
            }
            Ok(Outcome::Budget) => {
                budgeted += 1;
                None
            }
            Ok(Outcome::Agree { .. }) => None,
            Ok(Outcome::Disagree { incremental, full, detail }) => {
                Some(format!("incremental {incremental}, full {full}: {detail}"))
            }
            Err(e) => Some(format!("error: {e}")),
        };
        checked += 1;
        if let Some(why) = failure {
            let small = shrink(&case, budget);
            std::fs::write(out, format!("{small}% {why}\n"))
                .with_context(|| format!("cannot write {}", out.display()))?;
            println!("counterexample at seed {}: {why}", case.seed);
            println!("shrunk case written to {}", out.display());
            return Ok(EXIT_COUNTEREXAMPLE);
        }
    }
    println!("{checked} cases agree ({budgeted} over budget); {skipped} drawn cases started out violated");
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Check { database, constraints, state, opts, force } => {
            check(&database, &constraints, &state, &opts, force)
        }
        Command::Apply { state, transaction, sources, opts } => apply(&state, &transaction, sources.as_deref(), &opts),
        Command::Translate { constraints } => translate(&constraints),
        Command::Fuzz {
            seed,
            cases,
            out,
            max_predicates,
            max_facts,
            max_rules,
            max_constants,
            max_depth,
            max_nodes,
        } => fuzz(
            seed,
            cases,
            &out,
            Bounds { max_predicates, max_facts, max_rules, max_constants },
            Budget { max_depth, max_nodes },
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
