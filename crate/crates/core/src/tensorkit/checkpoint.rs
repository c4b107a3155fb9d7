use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "mtdfl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Line-oriented text checkpoint.
///
/// ```text
/// mtdfl-checkpoint 1
/// kind gru-classifier
/// meta hidden 8
/// tensor cell.w 24 16
/// 0.1 -0.2 ...
/// ```
///
/// Values are written with Rust's shortest round-trip formatting, so a
/// save/load cycle is bit-exact.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            ..Default::default()
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing meta {key:?}")))?;
        v.parse()
            .map_err(|_| Error::Checkpoint(format!("meta {key:?} is not an integer: {v:?}")))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nkind {}\n",
            self.kind
        );
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {v}");
        }
        for t in &self.tensors {
            let _ = writeln!(s, "tensor {} {} {}", t.name, t.rows, t.cols);
            let vals: Vec<String> = t.data.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&vals.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty checkpoint".into()))?;
        let mut hp = header.split_whitespace();
        if hp.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("not a checkpoint file".into()));
        }
        let version: u32 = hp
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let kind = lines
            .next()
            .and_then(|l| l.strip_prefix("kind "))
            .ok_or_else(|| bad("missing kind line".into()))?
            .trim()
            .to_string();
        let mut ck = Checkpoint::new(&kind);
        while let Some(line) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ck.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(bad(format!("malformed tensor line {line:?}")));
                }
                let rows: usize = parts[1]
                    .parse()
                    .map_err(|_| bad(format!("bad rows in {line:?}")))?;
                let cols: usize = parts[2]
                    .parse()
                    .map_err(|_| bad(format!("bad cols in {line:?}")))?;
                let values = lines.next().unwrap_or("");
                let data: Vec<f64> = values
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(format!("tensor {}: {e}", parts[0])))?;
                if data.len() != rows * cols {
                    return Err(bad(format!(
                        "tensor {} declares {rows}x{cols} but has {} values",
                        parts[0],
                        data.len()
                    )));
                }
                ck.tensors.push(NamedTensor {
                    name: parts[0].to_string(),
                    rows,
                    cols,
                    data,
                });
            } else {
                return Err(bad(format!("unexpected line {line:?}")));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
