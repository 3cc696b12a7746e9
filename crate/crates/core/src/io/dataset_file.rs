//! Dataset CSV: a `# prnf-dataset v1` line, `# key = value` provenance lines,
//! then one comma-separated row per sample (conditioning columns first).

use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_text};
use crate::autodiff::Matrix;
use crate::benchmarks::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::flow::Direction;

const HEADER: &str = "# prnf-dataset v1";

pub fn dataset_to_text(data: &Dataset) -> String {
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    writeln!(out, "# direction = {}", data.direction.as_str()).unwrap();
    writeln!(out, "# cond_dim = {}", data.cond_dim()).unwrap();
    writeln!(out, "# target_dim = {}", data.target_dim()).unwrap();
    if let Some(p) = &data.provenance {
        writeln!(out, "# generator_version = {}", p.generator_version).unwrap();
        writeln!(out, "# problem = {}", serde_json::to_string(&p.problem).expect("problem serializes")).unwrap();
        writeln!(out, "# n = {}", p.n).unwrap();
        writeln!(out, "# seed = {}", p.seed).unwrap();
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in 0..data.len() {
        let row = data.cond.row(r).iter().chain(data.target.row(r)).map(|v| format!("{v:?}"));
        w.write_record(row).expect("in-memory write");
    }
    out.push_str(std::str::from_utf8(&w.into_inner().expect("in-memory flush")).expect("ascii"));
    out
}

pub fn dataset_from_text(text: &str, path: &Path) -> Result<Dataset> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(perr(1, format!("expected `{HEADER}`")));
    }
    let mut keys = std::collections::BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let Some(rest) = line.strip_prefix("# ") else { break };
        let (k, v) = rest
            .split_once(" = ")
            .ok_or_else(|| perr(i + 1, format!("malformed header line `{line}`")))?;
        keys.insert(k.to_string(), (i + 1, v.to_string()));
    }
    let get = |k: &str| keys.get(k).cloned().ok_or_else(|| perr(0, format!("missing header `{k}`")));
    let int = |k: &str| -> Result<u64> {
        let (ln, v) = get(k)?;
        v.parse().map_err(|_| perr(ln, format!("`{k}` is not an integer")))
    };
    let (ln, dir) = get("direction")?;
    let direction: Direction = dir.parse().map_err(|e: Error| perr(ln, e.to_string()))?;
    let cond_dim = int("cond_dim")? as usize;
    let target_dim = int("target_dim")? as usize;
    let provenance = if keys.contains_key("problem") {
        let (ln, json) = get("problem")?;
        Some(Provenance {
            generator_version: int("generator_version")? as u32,
            problem: serde_json::from_str(&json).map_err(|e| perr(ln, e.to_string()))?,
            n: int("n")? as usize,
            seed: int("seed")?,
            direction,
        })
    } else {
        None
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let width = cond_dim + target_dim;
    let (mut cond, mut target) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            perr(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != width {
            return Err(perr(line, format!("expected {width} columns, got {}", rec.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| perr(line, format!("bad number `{field}`")))?;
            if !v.is_finite() {
                return Err(perr(line, "non-finite value".into()));
            }
            if j < cond_dim {
                cond.push(v);
            } else {
                target.push(v);
            }
        }
    }
    let n = cond.len() / cond_dim.max(1);
    if n == 0 {
        return Err(perr(0, "dataset has no rows".into()));
    }
    if let Some(p) = &provenance {
        if p.n != n {
            return Err(perr(0, format!("header says n = {} but file has {n} rows", p.n)));
        }
    }
    let mut data = Dataset::new(
        Matrix::new(n, cond_dim, cond)?,
        Matrix::new(n, target_dim, target)?,
        direction,
    )?;
    data.provenance = provenance;
    Ok(data)
}

pub fn write_dataset(path: &Path, data: &Dataset, force: bool) -> Result<()> {
    write_text(path, &dataset_to_text(data), force)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_text(&read_text(path)?, path)
}
