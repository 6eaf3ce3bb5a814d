#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

pub const Q3_TOTAL: &str = "Find the total sales of all products in Q3";
pub const PRODUCTS_AB: &str = "Compare sales trends for Products A and B in Q2";
pub const SATISFACTION: &str =
    "Compare the average customer satisfaction ratings of products from different manufacturers \
                                that had a sales increase of more than 15% in the last quarter";
pub const LEGAL: &str = "Can I be sued for sharing a photo on social media?";
pub const FLU: &str = "What are common influenza symptoms?";

pub fn demo_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("demo-corpus")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

/// The binary with backend variables cleared, so runs stay offline.
pub fn hetquery() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hetquery"));
    for var in ["MODEL_BACKEND", "MODEL_ENDPOINT", "MODEL_API_KEY", "RUST_LOG"] {
        cmd.env_remove(var);
    }
    cmd
}

pub fn run(args: &[&str]) -> Output {
    hetquery().args(args).output().expect("binary runs")
}

pub fn run_with_stdin(args: &[&str], stdin: &str) -> Output {
    let mut child = hetquery()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Indexes the demo corpus into `dir/graph.jsonl`.
pub fn index_demo(dir: &Path) -> (PathBuf, Output) {
    let graph = dir.join("graph.jsonl");
    let out = run(&["index", "--corpus", demo_corpus().to_str().unwrap(), "--out", graph.to_str().unwrap()]);
    (graph, out)
}
