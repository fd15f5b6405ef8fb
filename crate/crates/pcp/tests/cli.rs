mod common;

use std::path::Path;

use common::*;
use pcp::http::{AppState, Server};
use serde_json::Value;
use tempfile::TempDir;

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn pcp(args: &[&str]) -> Output {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("pcp").chain(args.iter().copied()).map(Into::into);
    let code = pcp::cli::main_with(argv, &mut out, &mut err);
    Output { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn local(dir: &Path, args: &[&str]) -> Output {
    let mut full = vec!["--data-dir", dir.to_str().unwrap(), "--actor", "alice"];
    full.extend_from_slice(args);
    pcp(&full)
}

fn json(out: &Output) -> Value {
    assert_eq!(out.code, 0, "stderr: {}", out.stderr);
    serde_json::from_str(&out.stdout).unwrap()
}

fn get(url: &str) -> String {
    ureq::get(url).call().unwrap().body_mut().read_to_string().unwrap()
}

#[test]
fn export_matches_the_service_byte_for_byte() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(json(&local(d, &["instance", "create"]))["instance_id"], "pi-1");
    json(&local(d, &["instance", "start", "pi-1", "problem_identification"]));
    json(&local(
        d,
        &[
            "instance",
            "complete",
            "pi-1",
            "problem_identification",
            "--output",
            "problem_statement",
            "--comment",
            "scoped",
        ],
    ));
    json(&local(d, &["instance", "start", "pi-1", "plan_setting"]));
    json(&local(d, &["instance", "complete", "pi-1", "plan_setting", "--input", "ent:pi-1/problem_statement"]));
    let transition = json(&local(d, &["instance", "transition", "pi-1"]));
    assert_eq!(transition["events"].as_array().unwrap().last().unwrap()["type"], "DecisionRaised");
    json(&pcp(&[
        "--data-dir",
        d.to_str().unwrap(),
        "--actor",
        "bob",
        "decision",
        "resolve",
        "pi-1/d1",
        "challenges_opportunities_identification",
    ]));
    let cli_export = local(d, &["prov", "export", "pi-1"]);
    assert_eq!(cli_export.code, 0);

    let server = Server::spawn(AppState::new(open(&dir), tick_clock()), "127.0.0.1:0".parse().unwrap()).unwrap();
    let served = get(&format!("{}/prov/instances/pi-1/export", server.url()));
    assert_eq!(cli_export.stdout, served);
    let remote = pcp(&["--server", &server.url(), "prov", "export", "pi-1"]);
    assert_eq!(remote.stdout, served);

    let trail_local = local(d, &["prov", "trail", "pi-1"]);
    let trail_remote = pcp(&["--server", &server.url(), "prov", "trail", "pi-1"]);
    assert_eq!(trail_local.stdout, trail_remote.stdout);
}

#[test]
fn failures_exit_nonzero_with_the_error_body() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    json(&local(d, &["instance", "create"]));
    let out = local(d, &["instance", "start", "pi-1", "validation"]);
    assert_eq!(out.code, 1);
    assert!(out.stdout.is_empty());
    let body: Value = serde_json::from_str(&out.stderr).unwrap();
    assert_eq!(body["code"], "precedence-violation");

    let out = local(d, &["instance", "frobnicate"]);
    assert_eq!(out.code, 2);
    assert_eq!(pcp(&["--help"]).code, 0);
}

#[test]
fn model_validation_reports_every_violation() {
    let dir = TempDir::new().unwrap();
    let default = pcp(&["model", "default"]);
    assert_eq!(default.code, 0);
    let path = dir.path().join("model.json");
    std::fs::write(&path, &default.stdout).unwrap();
    let ok = pcp(&["model", "validate", path.to_str().unwrap()]);
    assert_eq!(ok.code, 0, "{}", ok.stderr);

    let mut doc: Value = serde_json::from_str(&default.stdout).unwrap();
    doc["phases"][0]["tasks"][0]["precedence"] = serde_json::json!(["ghost"]);
    doc["phases"][1]["ordinal"] = doc["phases"][0]["ordinal"].clone();
    std::fs::write(&path, doc.to_string()).unwrap();
    let bad = pcp(&["model", "validate", path.to_str().unwrap()]);
    assert_eq!(bad.code, 1);
    assert!(bad.stderr.lines().count() >= 2, "{}", bad.stderr);

    let missing = pcp(&["model", "validate", "/nonexistent/model.json"]);
    assert_eq!(missing.code, 2);
}

#[test]
fn registry_and_token_commands() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let models = json(&local(d, &["model", "list"]));
    assert_eq!(models["versions"].as_array().unwrap().len(), 1);
    json(&local(
        d,
        &[
            "stakeholder",
            "register",
            "--id",
            "panel",
            "--name",
            "Residents",
            "--department",
            "citizens",
            "--endpoint",
            "mail://panel",
            "--kind",
            "citizen-channel",
        ],
    ));
    assert_eq!(json(&local(d, &["stakeholder", "list"]))["stakeholders"][0]["kind"], "CitizenChannel");

    json(&local(d, &["instance", "create"]));
    json(&local(d, &["instance", "start", "pi-1", "problem_identification"]));
    let dispatched = json(&local(
        d,
        &["token", "dispatch", "pi-1", "problem_identification", "--to", "panel", "--text", "priorities?"],
    ));
    assert_eq!(dispatched["events"][0]["type"], "AwaitingExternal");

    let payload = d.join("payload.json");
    std::fs::write(&payload, r#"{"kind": "report", "content": "parking first"}"#).unwrap();
    let answered =
        json(&local(d, &["token", "respond", "pi-1/t1", "--file", payload.to_str().unwrap(), "--responder", "panel"]));
    assert_eq!(answered["events"][0]["type"], "ExternalReceived");
    let again = local(d, &["token", "respond", "pi-1/t1", "--file", payload.to_str().unwrap()]);
    assert_eq!(again.code, 1);

    let q = json(&local(d, &["prov", "query", "--type", "TokenReceipt"]));
    assert_eq!(q["activities"].as_array().unwrap().len(), 1, "{q}");
    let q = json(&local(d, &["prov", "query", "--agent", "panel"]));
    assert_eq!(q["activities"][0]["activity"]["type"], "TokenReceipt");
    let q = json(&local(d, &["prov", "query", "--agent", "alice", "--instance", "pi-1"]));
    assert_eq!(q["activities"].as_array().unwrap().len(), 4, "{q}");
    let events = json(&local(d, &["instance", "events", "pi-1", "--from", "3"]));
    assert_eq!(events["events"][0]["seq"], 3);
}
