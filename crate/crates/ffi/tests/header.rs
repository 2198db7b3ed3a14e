//! Compiles and runs a C program against the generated header and the static
//! library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "wavemlp.h"

int main(void) {
    double a = 0, p = 0;
    if (wm_superpose(1.0, 1.0, 0.0, 0.0, &a, &p) != WM_STATUS_OK) return 1;
    if (fabs(a - 2.0) > 1e-12 || fabs(p) > 1e-12) return 2;
    WmModel *m = NULL;
    if (wm_model_from_preset("tiny", 0, &m) != WM_STATUS_OK) return 3;
    uint64_t n = 0;
    if (wm_model_param_count(m, &n) != WM_STATUS_OK || n != 29380) return 4;
    double img[1 * 8 * 8 * 3] = {0};
    double logits[4];
    if (wm_model_forward(m, img, 1, 8, 8, 3, logits, 4) != WM_STATUS_OK) return 5;
    wm_model_free(m);
    if (wm_model_from_preset("nope", 0, &m) != WM_STATUS_CONFIG || wm_last_error() == NULL) return 6;
    printf("ok %s\n", wm_version());
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("wavemlp.h").exists(), "header not generated");
    let lib = target_dir().join("libwavemlp_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let src = dir.join("smoke.c");
    let bin = dir.join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
