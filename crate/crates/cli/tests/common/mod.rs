#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use stochcoil::stochastic::RiskMode;
use stochcoil_cli::config::RunConfig;

/// Directory holding the desk instance files, written once per test binary.
pub fn instance_dir() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = scratch("instance");
        stochcoil_cli::init::run(&dir, RiskMode::RiskNeutral, false).unwrap();
        dir
    })
}

/// Fresh, empty directory under the cargo-provided scratch area.
pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"))
        .join(env!("CARGO_CRATE_NAME"))
        .join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Desk configuration of the given mode pointing at the shared instance,
/// adjusted by `edit`, written to `<dir>/config.json` with output `<dir>/run`.
pub fn config_file(dir: &Path, mode: RiskMode, edit: impl FnOnce(&mut RunConfig)) -> PathBuf {
    let mut c = stochcoil_cli::init::config(mode, false);
    let inst = instance_dir();
    c.coils = inst.join("coils.json");
    c.target = inst.join("target.json");
    c.output = "run".into();
    edit(&mut c);
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    path
}

pub fn stochcoil(args: &[&str], workers: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stochcoil"));
    cmd.args(args).env_remove(stochcoil_cli::WORKERS_ENV);
    if let Some(w) = workers {
        cmd.env(stochcoil_cli::WORKERS_ENV, w.to_string());
    }
    cmd.output().unwrap()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file below `root` as (relative path, bytes), sorted by path.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

/// Euclidean distance between two vectors.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
