#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fastmel"));
    c.env_remove("FASTMEL_SEED");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn fastmel")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Frame distance `sqrt(2 * sum (a - b)^2)`.
pub fn mcd(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += (x - y) * (x - y);
    }
    (2.0 * s).sqrt()
}

/// Minimum over every monotone lattice path from the first to the last
/// frame pair, by explicit enumeration. The first cell is charged with the
/// diagonal weight; costs accumulate in path order.
pub fn exhaustive_emcd(x: &[Vec<f64>], y: &[Vec<f64>], hor: f64, ver: f64, diag: f64) -> f64 {
    fn walk(
        x: &[Vec<f64>],
        y: &[Vec<f64>],
        w: (f64, f64, f64),
        i: usize,
        j: usize,
        acc: f64,
        best: &mut f64,
    ) {
        if i + 1 == x.len() && j + 1 == y.len() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < x.len() && j + 1 < y.len() {
            walk(
                x,
                y,
                w,
                i + 1,
                j + 1,
                acc + w.2 * mcd(&x[i + 1], &y[j + 1]),
                best,
            );
        }
        if i + 1 < x.len() {
            walk(x, y, w, i + 1, j, acc + w.1 * mcd(&x[i + 1], &y[j]), best);
        }
        if j + 1 < y.len() {
            walk(x, y, w, i, j + 1, acc + w.0 * mcd(&x[i], &y[j + 1]), best);
        }
    }
    let mut best = f64::INFINITY;
    walk(
        x,
        y,
        (hor, ver, diag),
        0,
        0,
        diag * mcd(&x[0], &y[0]),
        &mut best,
    );
    best
}
