//! Line-oriented text checkpoints.
//!
//! ```text
//! # prnf checkpoint
//! [meta]
//! format_version = 1
//! ...
//! [norm]
//! cond_mean = <floats>
//! ...
//! [theta_h]
//! w1 = <rows> <cols>
//! <one matrix row per line>
//! ...
//! [theta_g]
//! ...
//! [checksum]
//! fnv1a64 = <16 hex digits>
//! ```
//!
//! Floats use 17 significant digits. The checksum is 64-bit FNV-1a over every
//! byte before the `[checksum]` line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_text};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::flow::{Direction, NormalizationStats, PrNfModel};
use crate::network::{MlpParams, MlpSpec};
use crate::training::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "# prnf checkpoint";

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: PrNfModel,
    pub train_config: Option<TrainConfig>,
    pub data_seed: Option<u64>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

fn write_matrix(out: &mut String, name: &str, m: &Matrix) {
    writeln!(out, "{name} = {} {}", m.rows(), m.cols()).unwrap();
    for r in 0..m.rows() {
        writeln!(out, "{}", fmt_vec(m.row(r))).unwrap();
    }
}

fn write_net(out: &mut String, net: &MlpParams) {
    write_matrix(out, "w1", &net.w1);
    write_matrix(out, "b1", &net.b1);
    write_matrix(out, "w2", &net.w2);
    write_matrix(out, "b2", &net.b2);
}

impl Checkpoint {
    pub fn new(model: PrNfModel) -> Self {
        Self {
            model,
            train_config: None,
            data_seed: None,
        }
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "[meta]").unwrap();
        writeln!(out, "format_version = {CHECKPOINT_VERSION}").unwrap();
        writeln!(out, "cond_dim = {}", m.cond_dim()).unwrap();
        writeln!(out, "target_dim = {}", m.target_dim()).unwrap();
        writeln!(out, "hidden_dim = {}", m.hidden_dim()).unwrap();
        writeln!(out, "direction = {}", m.direction.as_str()).unwrap();
        writeln!(out, "lambda = {}", fmt_f64(m.lambda)).unwrap();
        if let Some(seed) = self.data_seed {
            writeln!(out, "data_seed = {seed}").unwrap();
        }
        if let Some(cfg) = &self.train_config {
            writeln!(out, "train_seed = {}", cfg.seed).unwrap();
            writeln!(out, "train_config = {}", serde_json::to_string(cfg).expect("config serializes")).unwrap();
        }
        writeln!(out, "[norm]").unwrap();
        writeln!(out, "cond_mean = {}", fmt_vec(&m.norm.cond_mean)).unwrap();
        writeln!(out, "cond_std = {}", fmt_vec(&m.norm.cond_std)).unwrap();
        writeln!(out, "target_mean = {}", fmt_vec(&m.norm.target_mean)).unwrap();
        writeln!(out, "target_std = {}", fmt_vec(&m.norm.target_std)).unwrap();
        writeln!(out, "[theta_h]").unwrap();
        write_net(&mut out, &m.theta_h);
        writeln!(out, "[theta_g]").unwrap();
        write_net(&mut out, &m.theta_g);
        let sum = fnv1a64(out.as_bytes());
        writeln!(out, "[checksum]").unwrap();
        writeln!(out, "fnv1a64 = {sum:016x}").unwrap();
        out
    }

    /// Parses checkpoint text; `path` is only used in error messages.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let marker = text
            .find("\n[checksum]\n")
            .ok_or_else(|| perr(0, "missing [checksum] section".into()))?;
        let body = &text[..marker + 1];
        let computed = format!("{:016x}", fnv1a64(body.as_bytes()));
        let tail = &text[marker + 1..];
        let stored = tail
            .lines()
            .nth(1)
            .and_then(|l| l.strip_prefix("fnv1a64 = "))
            .map(str::trim)
            .ok_or_else(|| perr(0, "malformed [checksum] section".into()))?;
        if stored != computed {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
                stored: stored.to_string(),
                computed,
            });
        }

        let mut lines = body.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(perr(1, format!("expected `{MAGIC}`"))),
        }
        let mut section = String::new();
        let mut meta: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut norm: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut nets: BTreeMap<String, BTreeMap<String, Matrix>> = BTreeMap::new();
        while let Some((ln, line)) = lines.next() {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once(" = ")
                .ok_or_else(|| perr(ln, format!("expected `key = value`, got `{line}`")))?;
            match section.as_str() {
                "meta" => {
                    meta.insert(key.to_string(), (ln, value.to_string()));
                }
                "norm" => {
                    norm.insert(key.to_string(), (ln, value.to_string()));
                }
                "theta_h" | "theta_g" => {
                    let dims: Vec<usize> = value
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| perr(ln, format!("bad dimension `{t}`"))))
                        .collect::<Result<_>>()?;
                    let [rows, cols] = dims[..] else {
                        return Err(perr(ln, "matrix header needs `rows cols`".into()));
                    };
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (rl, row) = lines.next().ok_or_else(|| perr(ln, "truncated matrix".into()))?;
                        let vals = parse_floats(row).map_err(|m| perr(rl, m))?;
                        if vals.len() != cols {
                            return Err(perr(rl, format!("expected {cols} values, got {}", vals.len())));
                        }
                        data.extend(vals);
                    }
                    let m = Matrix::new(rows, cols, data).map_err(|e| perr(ln, e.to_string()))?;
                    nets.entry(section.clone()).or_default().insert(key.to_string(), m);
                }
                other => return Err(perr(ln, format!("unknown section `[{other}]`"))),
            }
        }

        let get = |map: &BTreeMap<String, (usize, String)>, key: &str| -> Result<(usize, String)> {
            map.get(key).cloned().ok_or_else(|| perr(0, format!("missing field `{key}`")))
        };
        let int = |key: &str| -> Result<u64> {
            let (ln, v) = get(&meta, key)?;
            v.parse().map_err(|_| perr(ln, format!("`{key}` is not an integer")))
        };
        let version = int("format_version")?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(perr(0, format!("unsupported format_version {version}")));
        }
        let cond_dim = int("cond_dim")? as usize;
        let target_dim = int("target_dim")? as usize;
        let hidden_dim = int("hidden_dim")? as usize;
        let (ln, dir) = get(&meta, "direction")?;
        let direction: Direction = dir.parse().map_err(|e: Error| perr(ln, e.to_string()))?;
        let (ln, lam) = get(&meta, "lambda")?;
        let lambda: f64 = lam.parse().map_err(|_| perr(ln, "`lambda` is not a number".into()))?;
        let data_seed = meta.contains_key("data_seed").then(|| int("data_seed")).transpose()?;
        let train_config = match meta.get("train_config") {
            Some((ln, json)) => Some(serde_json::from_str(json).map_err(|e| perr(*ln, e.to_string()))?),
            None => None,
        };
        let vec = |key: &str| -> Result<Vec<f64>> {
            let (ln, v) = get(&norm, key)?;
            parse_floats(&v).map_err(|m| perr(ln, m))
        };
        let stats = NormalizationStats {
            cond_mean: vec("cond_mean")?,
            cond_std: vec("cond_std")?,
            target_mean: vec("target_mean")?,
            target_std: vec("target_std")?,
        };
        let spec = MlpSpec::new(cond_dim + target_dim, hidden_dim, target_dim)?;
        let net = |name: &str| -> Result<MlpParams> {
            let parts = nets.get(name).ok_or_else(|| perr(0, format!("missing section [{name}]")))?;
            let take = |k: &str| parts.get(k).cloned().ok_or_else(|| perr(0, format!("missing [{name}] {k}")));
            MlpParams::from_parts(spec, take("w1")?, take("b1")?, take("w2")?, take("b2")?)
        };
        let model = PrNfModel::from_parts(net("theta_h")?, net("theta_g")?, lambda, stats, direction)?;
        Ok(Self {
            model,
            train_config,
            data_seed,
        })
    }

    pub fn save(&self, path: &Path, force: bool) -> Result<()> {
        write_text(path, &self.to_text(), force)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_text(path)?, path)
    }
}

fn parse_floats(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("bad number `{t}`")))
        .collect()
}
