#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use orthoscore::Dataset;

pub fn orthoscore() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_orthoscore"));
    c.env_remove("ORTHOSCORE_SEED");
    c
}

pub fn run(args: &[&str]) -> Output {
    orthoscore().args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// `y,d,z,x1..xp` with one row per observation.
pub fn export_csv(data: &Dataset, path: &Path) {
    let mut s = String::from("y,d,z");
    for j in 1..=data.p() {
        write!(s, ",x{j}").unwrap();
    }
    s.push('\n');
    let z = data.z().expect("instrument");
    for (i, zi) in z.iter().enumerate() {
        write!(s, "{},{},{zi}", data.y()[i], data.d()[i]).unwrap();
        for v in data.x_row(i) {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

pub const COVARIATES: &str = "x1,x2,x3,x4";
