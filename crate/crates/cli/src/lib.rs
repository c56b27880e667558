//! `ffg` command line: run scenarios, re-check reports, replay the golden
//! corpus and audit conflicting finalizations.
//!
//! Exit codes: 0 pass, 1 usage or config error, 2 invariant failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ffg_core::sim::{run, RunReport, ScenarioConfig, World};
use ffg_core::{safety_audit, Checkpoint, SlashingError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

/// File in the corpus directory holding the committed digests.
pub const DIGESTS_FILE: &str = "digests.json";

#[derive(Debug, Parser)]
#[command(name = "ffg", about = "Checkpoint finality simulator")]
pub struct CliArgs {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Summary,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "summary")]
        format: Format,
        /// Fail if any interpretive heuristic influenced the run.
        #[arg(long)]
        strict: bool,
    },
    /// Validate a scenario file, or re-run a report and compare digests.
    Check {
        #[arg(long, conflicts_with = "report", required_unless_present = "report")]
        scenario: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
    /// Run every scenario in the golden corpus and compare digests.
    Corpus {
        /// Defaults to $FFG_CORPUS_DIR, then ./corpus.
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Rewrite the committed digests instead of comparing.
        #[arg(long)]
        update: bool,
        #[arg(long)]
        strict: bool,
    },
    /// Extract the slashable validators behind two conflicting finalized
    /// checkpoints of a report. Without `--a`/`--b`, audits the first
    /// reported conflict.
    Audit {
        #[arg(long)]
        report: PathBuf,
        /// Block id (hex, prefix allowed) of the first checkpoint.
        #[arg(long, requires = "b")]
        a: Option<String>,
        #[arg(long, requires = "a")]
        b: Option<String>,
    },
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

macro_rules! say {
    ($w:expr, $($t:tt)*) => { let _ = writeln!($w, $($t)*); };
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let mut io = Io { out, err };
    let args = match CliArgs::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let w = if e.use_stderr() { &mut *io.err } else { &mut *io.out };
            let _ = write!(w, "{}", e.render());
            return code;
        }
    };
    match args.command {
        Command::Run { scenario, seed, out, format, strict } => cmd_run(&mut io, &scenario, seed, out.as_deref(), format, strict),
        Command::Check { scenario, report, strict } => match (scenario, report) {
            (Some(s), _) => cmd_check_scenario(&mut io, &s),
            (None, Some(r)) => cmd_check_report(&mut io, &r, strict),
            (None, None) => EXIT_USAGE,
        },
        Command::Corpus { dir, update, strict } => {
            let dir = dir
                .or_else(|| std::env::var_os("FFG_CORPUS_DIR").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("corpus"));
            cmd_corpus(&mut io, &dir, update, strict)
        }
        Command::Audit { report, a, b } => cmd_audit(&mut io, &report, a.zip(b)),
    }
}

fn load_config(io: &mut Io, path: &Path) -> Result<ScenarioConfig, i32> {
    let text = fs::read_to_string(path).map_err(|e| {
        say!(io.err, "error: cannot read {}: {e}", path.display());
        EXIT_USAGE
    })?;
    ScenarioConfig::from_json(&text).map_err(|e| {
        say!(io.err, "error: {}: {e}", path.display());
        EXIT_USAGE
    })
}

fn load_report(io: &mut Io, path: &Path) -> Result<RunReport, i32> {
    let text = fs::read_to_string(path).map_err(|e| {
        say!(io.err, "error: cannot read {}: {e}", path.display());
        EXIT_USAGE
    })?;
    RunReport::from_json(&text).map_err(|e| {
        say!(io.err, "error: {}: {e}", path.display());
        EXIT_USAGE
    })
}

fn execute(io: &mut Io, cfg: &ScenarioConfig) -> Result<RunReport, i32> {
    run(cfg).map_err(|e| {
        say!(io.err, "error: {e}");
        EXIT_USAGE
    })
}

/// Exit code for a finished run.
fn verdict(io: &mut Io, report: &RunReport, strict: bool) -> i32 {
    for c in report.failed_checks() {
        say!(io.err, "invariant failed: {} ({})", c.name, c.detail);
    }
    if !report.passed() {
        return EXIT_FAIL;
    }
    if strict && !report.heuristics.is_empty() {
        say!(io.err, "strict: heuristics triggered: {}", report.heuristics.join(", "));
        return EXIT_FAIL;
    }
    EXIT_OK
}

fn cmd_run(io: &mut Io, path: &Path, seed: Option<u64>, out: Option<&Path>, format: Format, strict: bool) -> i32 {
    let mut cfg = match load_config(io, path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = match execute(io, &cfg) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let json = report.to_json();
    match out {
        Some(p) => {
            if let Err(e) = fs::write(p, &json) {
                say!(io.err, "error: cannot write {}: {e}", p.display());
                return EXIT_USAGE;
            }
        }
        None if format == Format::Json => {
            say!(io.out, "{json}");
        }
        None => {}
    }
    if format == Format::Summary {
        let _ = write!(io.out, "{}", report.summary());
    }
    verdict(io, &report, strict)
}

fn cmd_check_scenario(io: &mut Io, path: &Path) -> i32 {
    match load_config(io, path) {
        Ok(cfg) => {
            say!(io.out, "{}: valid scenario {:?} ({} validators)", path.display(), cfg.name, cfg.validators.len());
            EXIT_OK
        }
        Err(code) => code,
    }
}

fn cmd_check_report(io: &mut Io, path: &Path, strict: bool) -> i32 {
    let stored = match load_report(io, path) {
        Ok(r) => r,
        Err(code) => return code,
    };
    if stored.digest != stored.compute_digest() {
        say!(io.err, "{}: digest does not match the report contents", path.display());
        return EXIT_FAIL;
    }
    let fresh = match execute(io, &stored.config) {
        Ok(r) => r,
        Err(code) => return code,
    };
    if fresh.digest != stored.digest {
        say!(io.err, "{}: re-run digest {} differs from stored {}", path.display(), fresh.digest, stored.digest);
        return EXIT_FAIL;
    }
    say!(io.out, "{}: reproduced digest {}", path.display(), fresh.digest);
    verdict(io, &fresh, strict)
}

/// Scenario files of a corpus directory, sorted by name.
pub fn corpus_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != DIGESTS_FILE))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenEntry {
    pub digest: String,
    /// Whether every enabled invariant held.
    pub passed: bool,
}

fn cmd_corpus(io: &mut Io, dir: &Path, update: bool, strict: bool) -> i32 {
    let files = match corpus_files(dir) {
        Ok(f) if !f.is_empty() => f,
        Ok(_) => {
            say!(io.err, "error: no scenarios in {}", dir.display());
            return EXIT_USAGE;
        }
        Err(e) => {
            say!(io.err, "error: cannot read corpus {}: {e}", dir.display());
            return EXIT_USAGE;
        }
    };
    let digests_path = dir.join(DIGESTS_FILE);
    let golden: BTreeMap<String, GoldenEntry> = if update {
        BTreeMap::new()
    } else {
        let parsed = fs::read_to_string(&digests_path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()));
        match parsed {
            Ok(g) => g,
            Err(e) => {
                say!(io.err, "error: {}: {e}", digests_path.display());
                return EXIT_USAGE;
            }
        }
    };
    let mut fresh = BTreeMap::new();
    let mut mismatches = 0;
    for path in &files {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let cfg = match load_config(io, path) {
            Ok(c) => c,
            Err(code) => return code,
        };
        let report = match execute(io, &cfg) {
            Ok(r) => r,
            Err(code) => return code,
        };
        let entry = GoldenEntry {
            digest: report.digest.clone(),
            passed: report.passed() && !(strict && !report.heuristics.is_empty()),
        };
        let status = match golden.get(&name) {
            _ if update => "recorded",
            Some(g) if *g == entry => "ok",
            Some(_) => {
                mismatches += 1;
                "MISMATCH"
            }
            None => {
                mismatches += 1;
                "MISSING"
            }
        };
        say!(
            io.out,
            "{status:8} {name} {} invariants {}",
            &entry.digest[..16],
            if entry.passed { "pass" } else { "fail" }
        );
        fresh.insert(name, entry);
    }
    if update {
        let text = serde_json::to_string_pretty(&fresh).expect("digests serialize") + "\n";
        if let Err(e) = fs::write(&digests_path, text) {
            say!(io.err, "error: cannot write {}: {e}", digests_path.display());
            return EXIT_USAGE;
        }
        return EXIT_OK;
    }
    for stale in golden.keys().filter(|k| !fresh.contains_key(*k)) {
        say!(io.out, "STALE    {stale} has a digest but no scenario file");
        mismatches += 1;
    }
    if mismatches > 0 {
        say!(io.err, "{mismatches} corpus entries differ from the committed digests");
        return EXIT_FAIL;
    }
    say!(io.out, "{} scenarios match", files.len());
    EXIT_OK
}

/// The checkpoint whose block id starts with `prefix`, if exactly one does.
fn find_checkpoint(world: &World, prefix: &str) -> Result<Checkpoint, String> {
    let prefix = prefix.to_ascii_lowercase();
    let hits: Vec<Checkpoint> = world
        .tree
        .blocks()
        .filter(|b| b.id.to_hex().starts_with(&prefix))
        .filter_map(|b| world.tree.checkpoint(&b.id).ok())
        .collect();
    match hits.as_slice() {
        [c] => Ok(*c),
        [] => Err(format!("no checkpoint with id {prefix}")),
        _ => Err(format!("id prefix {prefix} is ambiguous")),
    }
}

fn cmd_audit(io: &mut Io, path: &Path, pair: Option<(String, String)>) -> i32 {
    let report = match load_report(io, path) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let world = match World::replay(&report) {
        Ok(w) => w,
        Err(e) => {
            say!(io.err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let (a, b) = match pair {
        Some((a, b)) => match (find_checkpoint(&world, &a), find_checkpoint(&world, &b)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                say!(io.err, "error: {e}");
                return EXIT_USAGE;
            }
        },
        None => match report.conflicts.first() {
            Some(&(a, b)) => (a, b),
            None => {
                say!(io.err, "error: NotConflicting: the report has no conflicting finalized checkpoints");
                return EXIT_USAGE;
            }
        },
    };
    let state = world.global_state();
    let audit = match safety_audit(&world.tree, &world.pool, &state, a, b, &world.genesis) {
        Ok(r) => r,
        Err(e @ (SlashingError::NotConflicting(..) | SlashingError::NotFinalized(..))) => {
            say!(io.err, "error: {e}");
            return EXIT_USAGE;
        }
        Err(e) => {
            say!(io.err, "error: {e}");
            return EXIT_FAIL;
        }
    };
    say!(io.out, "checkpoints {} (height {}) and {} (height {})", a.block.to_hex(), a.height, b.block.to_hex(), b.height);
    for (v, violation) in &audit.violators {
        say!(io.out, "  {v}: {:?} weight {}", violation.kind, world.genesis.weight_of(*v));
    }
    say!(
        io.out,
        "violator weight {}/{} (registry total {})",
        audit.violator_weight,
        audit.reference_total,
        audit.registry_total
    );
    if audit.meets_bound() {
        say!(io.out, "3w >= total: accountable");
        EXIT_OK
    } else {
        if audit.violators.is_empty() {
            say!(io.out, "no validator broke a slashing condition; the finalizations rest on different weights");
        }
        say!(io.out, "3w < total: not accountable");
        EXIT_FAIL
    }
}
