use std::process::Command;

fn cutdarcy() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cutdarcy"))
}

#[test]
fn list_prints_registry() {
    let out = cutdarcy().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in cutdarcy::registry_names() {
        assert!(text.lines().any(|l| l == name), "{name} missing");
    }
}

#[test]
fn unknown_experiment_is_a_spec_error() {
    let out = cutdarcy().args(["run", "no-such-experiment"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn small_run_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = cutdarcy()
        .args(["run", "fullbox-exactness", "--degree", "0", "--nx", "4", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = dir.path().join("fullbox-exactness.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("k,nx,h"));
    assert!(lines.next().is_some());
}

#[test]
fn unsupported_degree_is_a_spec_error() {
    let out = cutdarcy()
        .args(["run", "circle-convergence", "--degree", "9", "--nx", "4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
