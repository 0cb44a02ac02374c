mod common;

use std::path::Path;
use std::process::{Command, Output};

use ccs_core::datamodel::CsrRecord;
use ccs_core::fixtures::{ca_key, requester_key};
use ccs_core::policy::{CertificationPolicy, DomainRule};
use ccs_core::{Canonical, Timestamp};
use ccs_service::ServeConfig;

fn ccs(server: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccs")).arg("--server").arg(server).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(server: &str, args: &[&str]) -> String {
    let out = ccs(server, args);
    assert!(out.status.success(), "ccs {args:?} failed: {}{}", stdout(&out), stderr(&out));
    stdout(&out)
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_pfail() {
    let out = ok("http://unused", &["analyze", "pfail", "--n", "10", "--m", "3", "--v", "3"]);
    assert!(out.contains("= 1/120"), "{out}");
    assert!(out.contains("0.0083333333"), "{out}");
    let out = ok("http://unused", &["analyze", "pfail", "--n", "10", "--m", "3", "--v", "4", "--trials", "20000", "--seed", "9"]);
    assert!(out.contains("= 0 "), "{out}");
    assert!(out.contains("monte carlo: 0.000000 ± 0.000000"), "{out}");
    let bad = ccs("http://unused", &["analyze", "pfail", "--n", "3", "--m", "4", "--v", "1"]);
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("invalid-argument"), "{}", stderr(&bad));
}

#[test]
fn serve_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad-policy.ccs");
    std::fs::write(&bad, "garbage").unwrap();
    let out = ccs("http://unused", &["serve", "--policy", path(&bad), "--listen", "127.0.0.1:0"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("bad-policy.ccs"), "{}", stderr(&out));

    let out = ccs("http://unused", &["serve", "--nodes", "3", "--quorum", "4", "--listen", "127.0.0.1:0"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("invalid config"), "{}", stderr(&out));

    let toml = dir.path().join("ccs.toml");
    std::fs::write(&toml, "quorum = 9\n").unwrap();
    let out = ccs("http://unused", &["serve", "--config", path(&toml), "--listen", "127.0.0.1:0"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("quorum"), "{}", stderr(&out));
}

#[test]
fn policy_conversion_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("policy.json");
    let policy = CertificationPolicy::with_rules([DomainRule::new("x.example.org", 2, ["ra1", "ra2"], true)]);
    std::fs::write(&json, serde_json::to_string(&policy).unwrap()).unwrap();
    let canonical = dir.path().join("policy.ccs");
    ok("http://unused", &["policy", "from-json", path(&json), "--out", path(&canonical)]);
    assert_eq!(std::fs::read(&canonical).unwrap(), policy.canonical_bytes());
    let shown: CertificationPolicy = serde_json::from_str(&ok("http://unused", &["policy", "show", path(&canonical)])).unwrap();
    assert_eq!(shown, policy);
}

#[test]
fn role_based_workflow_over_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    let policy = CertificationPolicy::with_rules([
        DomainRule::new("x.example.org", 2, ["ra1", "ra2"], true),
        DomainRule::new("y.example.org", 1, ["ra3"], false),
    ]);
    std::fs::write(d("policy.ccs"), policy.canonical_bytes()).unwrap();
    let config = ServeConfig {
        policy: Some(d("policy.ccs")),
        chain_file: Some(d("chain.ccslog")),
        ..ServeConfig::default()
    };
    let (url, _) = common::spawn(&config);
    let url = url.as_str();

    for label in ["admin", "ca", "ra1", "ra2", "ra3", "alice"] {
        ok(url, &["key", "gen", "--label", label, "--out", path(&d(&format!("{label}.key")))]);
    }
    assert!(ok(url, &["key", "show", path(&d("ca.key"))]).contains(&hex::encode(ca_key().public_key)));
    let admin = d("admin.key");
    ok(url, &["admin", "register-user", "--key", path(&admin), "--user-id", "alice", "--name", "Alice", "--email", "alice@x.example.org"]);
    for (ra, domain) in [("ra1", "x.example.org"), ("ra2", "x.example.org"), ("ra3", "y.example.org")] {
        let public_key = ok(url, &["key", "show", path(&d(&format!("{ra}.key")))]);
        let public_key = public_key.split_whitespace().nth(1).unwrap().to_owned();
        ok(url, &[
            "admin", "register-ra", "--key", path(&admin), "--ra-id", ra, "--display-name", ra,
            "--public-key", &public_key, "--domain", domain,
        ]);
    }

    let submitted: serde_json::Value = serde_json::from_str(&ok(url, &[
        "requester", "submit-csr", "--key", path(&d("alice.key")), "--user-id", "alice", "--name", "Alice",
        "--email", "alice@x.example.org",
    ]))
    .unwrap();
    let csr_id = submitted["csr_id"].as_str().unwrap().to_owned();

    assert!(ok(url, &["ra", "list-pending", "--ra-id", "ra1"]).contains(&csr_id));
    assert!(!ok(url, &["ra", "list-pending", "--ra-id", "ra3"]).contains(&csr_id));
    assert!(ok(url, &["ra", "list-pending", "--ra-id", "ra3", "--all"]).contains("not permitted"));

    let endorse = |ra: &str| {
        ccs(url, &[
            "ra", "endorse", "--key", path(&d(&format!("{ra}.key"))), "--ra-id", ra, "--csr-id", &csr_id,
            "--name", "Alice", "--email", "alice@x.example.org", "--serial-suffix", "0815",
        ])
    };
    let refused = endorse("ra3");
    assert!(!refused.status.success());
    assert!(stderr(&refused).contains("not-permitted"), "{}", stderr(&refused));
    let first: serde_json::Value = serde_json::from_str(&stdout(&endorse("ra1"))).unwrap();
    assert_eq!(first["authorized"], false);

    let cert_file = d("alice.cert.json");
    let early = ccs(url, &["ca", "issue", "--key", path(&d("ca.key")), "--csr-id", &csr_id, "--serial", "7", "--out", path(&cert_file)]);
    assert!(!early.status.success());
    assert!(stderr(&early).contains("csr-not-authorized"), "{}", stderr(&early));

    let second: serde_json::Value = serde_json::from_str(&stdout(&endorse("ra2"))).unwrap();
    assert_eq!(second["authorized"], true);
    assert!(ok(url, &["ca", "list-authorized"]).contains(&csr_id));
    ok(url, &["ca", "issue", "--key", path(&d("ca.key")), "--csr-id", &csr_id, "--serial", "7", "--out", path(&cert_file)]);

    let history = ok(url, &["audit", "cert", path(&cert_file)]);
    assert!(history.contains("\"ra1\"") && history.contains("\"ra2\""), "{history}");
    assert!(ok(url, &["audit", "cert", "--serial", "7"]).contains("\"history\""));

    let forged = ccs_core::datamodel::CertificateRecord::issue_for(
        &ca_key(),
        &CsrRecord::create(&requester_key("mallory"), "Alice", "alice@x.example.org", Timestamp::now()),
        "8",
        Timestamp::now(),
    );
    std::fs::write(d("forged.json"), serde_json::to_string(&forged).unwrap()).unwrap();
    let audit = ccs(url, &["audit", "cert", path(&d("forged.json"))]);
    assert_eq!(audit.status.code(), Some(1));
    assert!(stdout(&audit).contains("no-history"), "{}", stdout(&audit));

    let chain = d("chain.ccslog");
    assert!(ok(url, &["verify-chain", path(&chain)]).starts_with("ok: 9 blocks"));
    let mut bytes = std::fs::read(&chain).unwrap();
    let middle = bytes.len() / 2;
    bytes[middle] ^= 1;
    std::fs::write(d("tampered.ccslog"), &bytes).unwrap();
    let verdict = ccs(url, &["verify-chain", path(&d("tampered.ccslog"))]);
    assert_eq!(verdict.status.code(), Some(1));
    assert!(stdout(&verdict).starts_with("invalid: first bad height"), "{}", stdout(&verdict));
}
