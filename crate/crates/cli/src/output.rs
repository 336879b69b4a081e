//! Run artifacts: CSV tables, the check list and a plain-text summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use favsite::fmt17;
use favsite::io::{Table, TOOL_VERSION};

use crate::config::RunConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, threshold: f64, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), value, threshold, pass, detail: detail.into() }
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    /// Extra files as `(name, contents)`.
    pub files: Vec<(String, String)>,
}

impl Outcome {
    pub fn merge(&mut self, other: Outcome) {
        self.tables.extend(other.tables);
        self.checks.extend(other.checks);
        self.files.extend(other.files);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub const CHECK_COLUMNS: [&str; 5] = ["check", "value", "threshold", "pass", "detail"];

fn check_table(checks: &[Check]) -> Table {
    let mut t = Table::new("checks", 1, &CHECK_COLUMNS);
    for c in checks {
        t.push(vec![c.name.clone(), fmt17(c.value), fmt17(c.threshold), c.pass.to_string(), c.detail.clone()]);
    }
    t
}

pub fn summary(command: &str, cfg: &RunConfig, checks: &[Check], status: &str) -> String {
    let hash = cfg.hash();
    let mut s = String::new();
    let _ = writeln!(s, "tool = {TOOL_VERSION}");
    let _ = writeln!(s, "command = {command}");
    let _ = writeln!(s, "run_id = {}", &hash[..12]);
    let _ = writeln!(s, "config_hash = {hash}");
    let _ = writeln!(s, "family = {}", cfg.family);
    let _ = writeln!(s, "master_seed = {}", cfg.master_seed);
    let _ = writeln!(s, "status = {status}");
    let _ = writeln!(s);
    for c in checks {
        let _ = writeln!(s, "{} {} value={} threshold={} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold, c.detail);
    }
    s
}

pub fn write_all(dir: &Path, command: &str, cfg: &RunConfig, outcome: &Outcome) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    for t in &outcome.tables {
        t.write(dir, &hash)?;
    }
    check_table(&outcome.checks).write(dir, &hash)?;
    for (name, text) in &outcome.files {
        fs::write(dir.join(name), text)?;
    }
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let status = if outcome.passed() { "pass" } else { "fail" };
    fs::write(dir.join("summary.txt"), summary(command, cfg, &outcome.checks, status))?;
    Ok(())
}

/// Marks an interrupted run so that whatever was written is not mistaken for
/// a complete one.
pub fn write_failure(dir: &Path, command: &str, cfg: &RunConfig, kind: &str, msg: &str) {
    if fs::create_dir_all(dir).is_ok() {
        let mut s = summary(command, cfg, &[], &format!("error ({kind})"));
        let _ = writeln!(s, "error = {msg}");
        let _ = fs::write(dir.join("summary.txt"), s);
    }
}
