//! Versioned CSV tables.
//!
//! Every table starts with one comment line naming its schema and version,
//! the hash of the configuration that produced it and the tool version:
//!
//! ```text
//! # schema=excursion version=1 config_hash=3f1c… tool=favsite/0.1.0
//! vertex,depth,U,a,p,mean
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = concat!("favsite/", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub schema: String,
    pub version: u32,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Metadata parsed back from a table's comment line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableHeader {
    pub schema: String,
    pub version: u32,
    pub config_hash: String,
    pub tool: String,
}

impl Table {
    pub fn new(schema: &str, version: u32, columns: &[&str]) -> Self {
        Table {
            schema: schema.to_string(),
            version,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match schema `{}`", self.schema);
        self.rows.push(row);
    }

    pub fn to_csv(&self, config_hash: &str) -> Result<String> {
        let mut out = format!(
            "# schema={} version={} config_hash={} tool={}\n",
            self.schema, self.version, config_hash, TOOL_VERSION
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.columns).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        out.push_str(std::str::from_utf8(&bytes).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn write(&self, dir: &Path, config_hash: &str) -> Result<std::path::PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.csv", self.schema));
        fs::write(&path, self.to_csv(config_hash)?)?;
        Ok(path)
    }

    /// Parses a table written by [`Table::to_csv`].
    pub fn parse(text: &str) -> Result<(TableHeader, Table)> {
        let first = text.lines().next().ok_or_else(|| Error::Parse { line: 1, msg: "empty table".into() })?;
        let header = parse_header(first)?;
        let body = &text[first.len()..];
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(body.trim_start_matches('\n').as_bytes());
        let parse_err = |e: csv::Error| Error::Parse { line: e.position().map_or(0, |p| p.line() as usize + 1), msg: e.to_string() };
        let columns = r.headers().map_err(parse_err)?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec.map_err(parse_err)?.iter().map(str::to_string).collect());
        }
        let table = Table { schema: header.schema.clone(), version: header.version, columns, rows };
        Ok((header, table))
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

fn parse_header(line: &str) -> Result<TableHeader> {
    let err = |msg: &str| Error::Parse { line: 1, msg: msg.to_string() };
    let rest = line.strip_prefix("# ").ok_or_else(|| err("missing `# ` schema line"))?;
    let mut h = TableHeader { schema: String::new(), version: 0, config_hash: String::new(), tool: String::new() };
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| err("malformed key=value"))?;
        match k {
            "schema" => h.schema = v.to_string(),
            "version" => h.version = v.parse().map_err(|_| err("bad version"))?,
            "config_hash" => h.config_hash = v.to_string(),
            "tool" => h.tool = v.to_string(),
            _ => {}
        }
    }
    if h.schema.is_empty() || h.version == 0 {
        return Err(err("schema line lacks schema or version"));
    }
    Ok(h)
}
