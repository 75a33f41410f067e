#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;

pub fn polar() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_polar"));
    cmd.env_remove("POLAR_THREADS");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    polar().args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).expect("write fixture");
    path
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Reads a headed numeric CSV.
pub fn read_csv(path: &Path) -> (Vec<String>, DMatrix<f64>) {
    let mut reader = csv::Reader::from_path(path).expect("open csv");
    let header: Vec<String> = reader
        .headers()
        .expect("header")
        .iter()
        .map(String::from)
        .collect();
    let rows: Vec<Vec<f64>> = reader
        .records()
        .map(|r| {
            r.expect("record")
                .iter()
                .map(|c| c.parse::<f64>().expect("numeric cell"))
                .collect()
        })
        .collect();
    let m = DMatrix::from_fn(rows.len(), header.len(), |i, j| rows[i][j]);
    (header, m)
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).expect("read json")).expect("valid json")
}
