//! Compiles a small C program against the generated header and the static
//! library, then runs it.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "fedpews.h"

int main(void) {
    FpDataset *ds = NULL;
    if (fp_dataset_generate(32, 9, 0.35, &ds) != FP_STATUS_OK) return 10;
    if (fp_dataset_len(ds) != 32) return 11;
    double f[5];
    uint32_t label;
    if (fp_dataset_sample(ds, 31, f, 5, &label) != FP_STATUS_OK) return 12;
    if (label > 3) return 13;
    if (fp_dataset_sample(ds, 32, f, 5, &label) != FP_STATUS_OUT_OF_RANGE) return 14;
    if (fp_last_error() == NULL) return 15;
    fp_dataset_free(ds);

    const char *cfg = "algorithm = fedavg\nrounds = 3\nlocal_steps = 1\n"
                      "test_size = 160\nwidths = 5, 4, 4\n";
    FpRunLog *log = NULL;
    if (fp_run_experiment(cfg, 2, &log) != FP_STATUS_OK) return 20;
    if (fp_runlog_rounds(log) != 3) return 21;
    FpRoundRecord r;
    if (fp_runlog_record(log, 2, &r) != FP_STATUS_OK || r.round != 3 || !r.evaluated) return 22;
    char *digest = fp_runlog_digest(log);
    if (digest == NULL || strlen(digest) != 64) return 23;
    printf("%s\n", digest);
    fp_string_free(digest);
    fp_runlog_free(log);

    if (fp_run_experiment("bogus = 1\n", 1, &log) != FP_STATUS_CONFIG) return 30;
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // tests run from target/<profile>/deps
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libfedpews_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new("cc")
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("cc is available");
    assert!(out.status.success(), "cc failed: {}", String::from_utf8_lossy(&out.stderr));

    let run = Command::new(&exe).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let digest = String::from_utf8(run.stdout).unwrap();
    assert_eq!(digest.trim().len(), 64);
}
