use std::path::PathBuf;
use std::process::Command;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn exported_names() -> Vec<String> {
    let src = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    src.lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap().trim().to_owned())
        .collect()
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/noncesuch.h")).unwrap();
    let names = exported_names();
    assert!(names.len() >= 20, "found only {names:?}");
    for name in names {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["typedef struct NsAudit NsAudit;", "typedef struct NsElection NsElection;", "NS_STATUS_OK = 0"] {
        assert!(header.contains(ty), "{ty} missing from header");
    }
}

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

fn static_lib() -> Option<PathBuf> {
    // Integration tests live in target/<profile>/deps.
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?;
    let lib = profile_dir.join("libnoncesuch_ffi.a");
    lib.exists().then_some(lib)
}

const PROGRAM: &str = r#"
#include <stdio.h>
#include "noncesuch.h"

int main(void) {
    NsRiskTest *t = NULL;
    if (ns_risk_new(1.0 / 0.9, 10000, false, 1.0 / 1.8, &t) != NS_STATUS_OK) return 1;
    double x = 0.0, risk = 1.0;
    if (ns_overstatement_value(1.0, 0.2, 1.0, 1.0, &x) != NS_STATUS_OK) return 2;
    int n = 0;
    while (risk > 0.05) {
        if (ns_risk_update(t, x, &risk) != NS_STATUS_OK) return 3;
        n++;
    }
    ns_risk_free(t);
    if (ns_risk_new(0.4, 10, false, 0.6, &t) != NS_STATUS_CONFIG) return 4;
    if (ns_last_error() == NULL) return 5;
    printf("%d\n", n);
    return 0;
}
"#;

fn run(cmd: &mut Command) -> std::process::Output {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn c_program_builds_against_header() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = crate_dir().join("include");
    let mut cmd = Command::new(&cc);
    cmd.arg("-std=c99").arg("-Wall").arg("-Werror").arg("-I").arg(&include);
    match static_lib() {
        Some(lib) => {
            let exe = dir.path().join("smoke");
            run(cmd.arg(&src).arg(&lib).args(["-lpthread", "-ldl", "-lm", "-o"]).arg(&exe));
            let out = run(&mut Command::new(&exe));
            assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "290");
        }
        None => {
            run(cmd.arg("-fsyntax-only").arg(&src));
        }
    }
}
