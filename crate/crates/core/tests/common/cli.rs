//! Runs the `psm` binary.

use std::path::Path;
use std::process::{Command, Output};

pub fn psm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psm"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("spawn psm")
}

pub fn ok(args: &[&str]) -> Output {
    let out = psm(args);
    assert!(
        out.status.success(),
        "psm {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
