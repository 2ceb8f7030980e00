use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "ptfon.h"

int main(void) {
    PtfonConfig *cfg = ptfon_config_reference();
    double e[48];
    for (int t = 0; t < 48; t++) e[t] = (t >= 12 && t < 36) ? 20000.0 : 0.0;
    PtfonSchedule *s = NULL;
    if (ptfon_schedule_ptf(cfg, e, 48, &s) != PTFON_STATUS_OK) return 1;
    double u = 0.0;
    if (ptfon_schedule_utility(s, &u) != PTFON_STATUS_OK) return 2;
    double p = 0.0;
    if (ptfon_schedule_power(s, 99, &p) != PTFON_STATUS_INVALID_INPUT) return 3;
    printf("%.6f %s\n", u, ptfon_last_error_message());
    ptfon_schedule_free(s);
    ptfon_config_free(cfg);
    return 0;
}
"#;

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

/// `target/<profile>` holding the library artifacts.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_links_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let lib = artifact_dir().join("libptfon_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let out = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("C compiler available");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let text = String::from_utf8(run.stdout).unwrap();
    let u: f64 = text.split_whitespace().next().unwrap().parse().unwrap();
    assert!(u.is_finite() && u > 0.0, "{text}");
    assert!(text.contains("99"), "{text}");
}
