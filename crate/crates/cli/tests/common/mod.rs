#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    fn from(o: Output) -> Run {
        Run {
            code: o.status.code().unwrap_or(-1),
            stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
        }
    }
}

/// Runs the `shadekit` binary in `cwd`.
pub fn shadekit(cwd: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_shadekit"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs");
    Run::from(out)
}

/// Runs and requires exit code 0.
pub fn ok(cwd: &Path, args: &[&str]) -> Run {
    let r = shadekit(cwd, args);
    assert_eq!(r.code, 0, "shadekit {args:?} failed:\n{}", r.stderr);
    r
}

pub fn json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

pub fn bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Synthesizes `count` scenes into `cwd/name` and splits them 8:1:1.
pub fn corpus(cwd: &Path, name: &str, count: usize, seed: u64) {
    let (count, seed) = (count.to_string(), seed.to_string());
    ok(cwd, &["--quiet", "--seed", &seed, "synth", "--out", name, "--count", &count]);
    ok(cwd, &["--quiet", "--seed", &seed, "split", "--dataset", name, "--ratios", "8:1:1"]);
}
