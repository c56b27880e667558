use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ffg_cli::{run_cli, GoldenEntry, DIGESTS_FILE, EXIT_FAIL, EXIT_OK, EXIT_USAGE};
use ffg_core::sim::RunReport;

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

fn scenario(name: &str) -> String {
    corpus().join(format!("{name}.json")).display().to_string()
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_cli(std::iter::once("ffg").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn run_to(name: &str, dir: &Path) -> (i32, PathBuf) {
    let out = dir.join(format!("{name}.report.json"));
    let (code, ..) = cli(&["run", "--scenario", &scenario(name), "--out", out.to_str().unwrap()]);
    (code, out)
}

fn report(path: &Path) -> RunReport {
    RunReport::from_json(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn honest_run_with_seed_override_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let (code, stdout, _) = cli(&["run", "--scenario", &scenario("all_honest"), "--seed", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("PASS"));
    let r = report(&out);
    assert_eq!(r.config.seed, 7);
    assert_eq!(r.digest, r.compute_digest());
    assert!(r.clients.iter().all(|c| c.finalized_on_head.len() > 3));
}

#[test]
fn json_format_goes_to_stdout() {
    let (code, stdout, _) = cli(&["run", "--scenario", &scenario("all_honest"), "--format", "json"]);
    assert_eq!(code, EXIT_OK);
    let r = RunReport::from_json(&stdout).unwrap();
    assert_eq!(r.config.name, "all_honest");
}

#[test]
fn unstitched_attack_exits_with_safety_failure() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_to("dyn_attack_nostitch", dir.path());
    assert_eq!(code, EXIT_FAIL);
    let r = report(&out);
    assert!(!r.check("safety").unwrap().passed);
    assert_eq!(r.conflicts.len(), 1);
    let (code, ..) = run_to("dyn_attack_stitch", dir.path());
    assert_eq!(code, EXIT_OK);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let (code, _, err) = cli(&["run", "--scenario", "/definitely/not/here.json"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("cannot read"));
    assert_eq!(cli(&[]).0, EXIT_USAGE);
    assert_eq!(cli(&["run"]).0, EXIT_USAGE);
    assert_eq!(cli(&["run", "--scenario", &scenario("all_honest"), "--format", "xml"]).0, EXIT_USAGE);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(scenario("all_honest")).unwrap()).unwrap();
    cfg["surprise"] = serde_json::json!(1);
    fs::write(&bad, cfg.to_string()).unwrap();
    assert_eq!(cli(&["run", "--scenario", bad.to_str().unwrap()]).0, EXIT_USAGE);
    assert_eq!(cli(&["check", "--scenario", bad.to_str().unwrap()]).0, EXIT_USAGE);
    cfg.as_object_mut().unwrap().remove("surprise");
    cfg["schema_version"] = serde_json::json!(99);
    fs::write(&bad, cfg.to_string()).unwrap();
    assert_eq!(cli(&["run", "--scenario", bad.to_str().unwrap()]).0, EXIT_USAGE);
}

#[test]
fn strict_turns_heuristics_into_failures() {
    let path = scenario("equivocation_healed");
    let (code, stdout, _) = cli(&["run", "--scenario", &path]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("heuristic:"));
    let (code, _, err) = cli(&["run", "--scenario", &path, "--strict"]);
    assert_eq!(code, EXIT_FAIL);
    assert!(err.contains("first_seen_preference"));
    assert_eq!(cli(&["run", "--scenario", &scenario("all_honest"), "--strict"]).0, EXIT_OK);
}

#[test]
fn check_reruns_reports_and_catches_tampering() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["check", "--scenario", &scenario("split_finality")]).0, EXIT_OK);
    let (_, out) = run_to("all_honest", dir.path());
    let (code, stdout, _) = cli(&["check", "--report", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{stdout}");

    let mut r = report(&out);
    r.clients[0].head_height += 1;
    fs::write(&out, r.to_json()).unwrap();
    assert_eq!(cli(&["check", "--report", out.to_str().unwrap()]).0, EXIT_FAIL);

    r.clients[0].head_height -= 1;
    r.config.seed += 1;
    r.digest = r.compute_digest();
    fs::write(&out, r.to_json()).unwrap();
    assert_eq!(cli(&["check", "--report", out.to_str().unwrap()]).0, EXIT_FAIL);
}

#[test]
fn audit_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let (_, eq) = run_to("equivocation", dir.path());
    let (code, stdout, _) = cli(&["audit", "--report", eq.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{stdout}");
    assert!(stdout.contains("3w >= total"));
    let r = report(&eq);
    let (a, b) = r.conflicts[0];
    let (code, stdout, _) = cli(&[
        "audit",
        "--report",
        eq.to_str().unwrap(),
        "--a",
        &a.block.to_hex()[..12],
        "--b",
        &b.block.to_hex(),
    ]);
    assert_eq!(code, EXIT_OK);
    let listed = stdout.lines().filter(|l| l.trim_start().starts_with('v')).count();
    assert!(listed > 0);

    let (_, honest) = run_to("all_honest", dir.path());
    let (code, _, err) = cli(&["audit", "--report", honest.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("NotConflicting"));
    // Two checkpoints on one chain do not conflict.
    let h = report(&honest);
    let f = &h.clients[0].finalized_on_head;
    let (code, ..) = cli(&[
        "audit",
        "--report",
        honest.to_str().unwrap(),
        "--a",
        &f[1].block.to_hex(),
        "--b",
        &f[2].block.to_hex(),
    ]);
    assert_eq!(code, EXIT_USAGE);

    let (_, open) = run_to("dyn_attack_nostitch", dir.path());
    let (code, stdout, _) = cli(&["audit", "--report", open.to_str().unwrap()]);
    assert_eq!(code, EXIT_FAIL);
    assert!(stdout.contains("no validator broke a slashing condition"));
    assert!(stdout.contains("violator weight 0/"));
}

#[test]
fn corpus_matches_committed_digests() {
    let exe = env!("CARGO_BIN_EXE_ffg");
    let out = Command::new(exe).arg("corpus").env("FFG_CORPUS_DIR", corpus()).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("scenarios match"));
}

#[test]
fn corpus_reports_drift() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["all_honest.json", "dyn_attack_stitch.json", DIGESTS_FILE] {
        fs::copy(corpus().join(name), dir.path().join(name)).unwrap();
    }
    let digests = dir.path().join(DIGESTS_FILE);
    let mut golden: BTreeMap<String, GoldenEntry> = serde_json::from_str(&fs::read_to_string(&digests).unwrap()).unwrap();
    golden.retain(|k, _| k == "all_honest.json" || k == "dyn_attack_stitch.json");
    fs::write(&digests, serde_json::to_string(&golden).unwrap()).unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(cli(&["corpus", "--dir", d]).0, EXIT_OK);

    golden.get_mut("all_honest.json").unwrap().digest = "00".repeat(32);
    fs::write(&digests, serde_json::to_string(&golden).unwrap()).unwrap();
    let (code, stdout, _) = cli(&["corpus", "--dir", d]);
    assert_eq!(code, EXIT_FAIL);
    assert!(stdout.contains("MISMATCH all_honest.json"));

    assert_eq!(cli(&["corpus", "--dir", d, "--update"]).0, EXIT_OK);
    assert_eq!(cli(&["corpus", "--dir", d]).0, EXIT_OK);
    fs::remove_file(dir.path().join("dyn_attack_stitch.json")).unwrap();
    assert_eq!(cli(&["corpus", "--dir", d]).0, EXIT_FAIL);
    assert_eq!(cli(&["corpus", "--dir", "/no/such/corpus"]).0, EXIT_USAGE);
}
