use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hzeq::baselines::MechanismReport;
use hzeq::verify::EquilibriumCertificate;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hzeq"))
}

fn file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const TWO_BY_TWO: &str = r#"{"n":2,"m":2,"values":[["2","1"],["0","1"]],"capacities":["1","1"]}"#;

#[test]
fn solve_fixed_agents_on_simple_market() {
    let dir = tempfile::tempdir().unwrap();
    let input = file(dir.path(), "ex.json", TWO_BY_TWO);
    let out = dir.path().join("certs.json");
    let o = run(&["solve", "--algo", "fixed-agents", "--input", input.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let certs: Vec<EquilibriumCertificate> = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(certs.iter().any(|c| c.prices.iter().all(|p| p.to_string() == "1")));
}

#[test]
fn solve_fixed_goods_single_item() {
    let dir = tempfile::tempdir().unwrap();
    let input = file(dir.path(), "one.json", r#"{"n":1,"m":1,"values":[["3"]],"capacities":["1"]}"#);
    let o = run(&["solve", "--algo", "fixed-goods", "--input", input.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
}

#[test]
fn tied_tops_are_a_precondition_failure() {
    let dir = tempfile::tempdir().unwrap();
    let input = file(dir.path(), "tie.json", r#"{"n":2,"m":2,"values":[["2","2"],["0","1"]],"capacities":["1","1"]}"#);
    let o = run(&["solve", "--algo", "fixed-agents", "--input", input.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
}

#[test]
fn malformed_instance_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = file(dir.path(), "bad.json", r#"{"n":2,"m":2,"values":[["2"]]}"#);
    assert_eq!(code(&run(&["solve", "--input", input.to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["solve", "--input", input.to_str().unwrap(), "--eps-bits", "4"])), 2);
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = file(dir.path(), "ex.json", TWO_BY_TWO);
    let check = |name: &str, cand: &str| {
        let c = file(dir.path(), name, cand);
        let out = dir.path().join(format!("{name}.cert"));
        let o = run(&["verify", "--input", input.to_str().unwrap(), "--candidate", c.to_str().unwrap(), "--output", out.to_str().unwrap()]);
        let cert = std::fs::read_to_string(&out).ok().map(|t| EquilibriumCertificate::from_json(&t).unwrap());
        (code(&o), cert)
    };
    let (c, cert) = check("bad.json", r#"{"prices":["1/2","3/2"],"allocation":[["1","0"],["0","1"]]}"#);
    assert_eq!(c, 1);
    let cert = cert.unwrap();
    let failed: Vec<_> = cert.verdicts.iter().filter(|v| !v.passed).collect();
    assert!(failed.iter().any(|v| v.witness.as_ref().and_then(|w| w.agent) == Some(1)), "{failed:?}");
    let (c, cert) = check("good.json", r#"{"prices":["1","1"],"allocation":[["1","0"],["0","1"]]}"#);
    assert_eq!(c, 0);
    assert!(cert.unwrap().equilibrium);
    let (c, _) = check("rows.json", r#"{"prices":["1","1"],"allocation":[["1","1/2"],["0","1"]]}"#);
    assert_eq!(c, 2);
    let (c, _) = check("wide.json", r#"{"prices":[["1/2","3/2"],"1"],"allocation":[["1","0"],["0","1"]]}"#);
    assert_eq!(c, 5);
}

#[test]
fn demos() {
    for name in ["gs-violation", "free-disposal", "rsd-inefficiency"] {
        let o = run(&["demo", name]);
        assert_eq!(code(&o), 0, "{name}");
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["demo"], name);
    }
    let o = run(&["demo", "rsd-inefficiency"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_ne!(v["four_agents"]["x_12"], "0");
    assert_ne!(v["four_agents"]["x_21"], "0");
    assert!(!v["three_agents"]["dominating_allocation"].is_null());
    let o = run(&["demo", "free-disposal"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["free_disposal"]["equilibrium"], true);
    assert_eq!(v["matching"]["equilibrium"], false);
    assert_eq!(code(&run(&["demo", "nope"])), 2);
}

#[test]
fn mechanisms_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = file(dir.path(), "eps.json", r#"{"n":3,"m":3,"values":[["1","1/4","0"],["1","3/4","0"],["1","3/4","0"]],"capacities":["1","1","1"]}"#);
    let out = dir.path().join("report.json");
    let o = run(&["mechanisms", "--input", input.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = MechanismReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(!r.rsd.pareto_efficient);
    assert!(r.equilibrium.pareto_efficient);
}

#[test]
fn outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = file(dir.path(), "ex.json", r#"{"n":3,"m":3,"values":[["3","1","0"],["1","3","2"],["2","2","3"]],"capacities":["1","1","1"]}"#);
    let mut runs = Vec::new();
    for k in 0..2 {
        let mut files = Vec::new();
        for (cmd, extra) in [("solve", vec!["--algo", "fixed-agents"]), ("solve", vec!["--algo", "fixed-goods"]), ("mechanisms", vec![])] {
            let out = dir.path().join(format!("{cmd}-{}-{k}.json", extra.join("")));
            let mut args = vec![cmd, "--input", input.to_str().unwrap(), "--output", out.to_str().unwrap(), "--seed", "3"];
            args.extend(extra);
            assert_eq!(code(&run(&args)), 0);
            files.push(std::fs::read(&out).unwrap());
        }
        files.push(run(&["demo", "rsd-inefficiency"]).stdout);
        runs.push(files);
    }
    assert_eq!(runs[0], runs[1]);
}
