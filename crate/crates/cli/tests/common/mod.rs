#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ibrkit::dataset::{log_space, sample_profile};
use ibrkit::ibr::{Catalog, OperatingPoint};

pub fn ibrkit(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ibrkit"))
        .arg("--store")
        .arg(store)
        .args(args)
        .env_remove("IBRKIT_STORE")
        .output()
        .expect("binary runs")
}

/// Runs and panics with stderr on a nonzero exit.
pub fn ok(store: &Path, args: &[&str]) -> String {
    let out = ibrkit(store, args);
    assert!(
        out.status.success(),
        "ibrkit {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Ten log-spaced `f_hz,g_dd,b_dd` points of a catalog device at one
/// operating point.
pub fn write_measurement(path: &Path, ibr: &str, v: f64, p: f64, q: f64) {
    let catalog = Catalog::canonical();
    let params = catalog.get(ibr).unwrap();
    let op = OperatingPoint::new(v, p, q).unwrap();
    let rows = sample_profile(params, &op, &log_space(1.0, 200.0, 10)).unwrap();
    let mut text = String::from("f_hz,g_dd,b_dd\n");
    for s in rows {
        text += &format!("{:.16e},{:.16e},{:.16e}\n", s.f, s.y[0], s.y[1]);
    }
    fs::write(path, text).unwrap();
}

/// Data rows of a report, skipping the seed comment and the header.
pub fn report_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}
