//! JSON-lines corpus ingestion, seeded train/valid/test splits and the
//! uniform mixture sampler.

pub mod synthetic;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, purpose};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("line {line}: malformed JSON: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: missing field \"{name}\"")]
    MissingField { line: usize, name: &'static str },
    #[error("line {line}: field \"{name}\" is empty")]
    EmptyField { line: usize, name: &'static str },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("split needs {needed} examples but only {available} are available")]
    SpecInfeasible { needed: usize, available: usize },
    #[error("mixture needs {requested} examples but the union has {available}")]
    InsufficientData { requested: usize, available: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    /// Dataset tag.
    pub source: String,
    pub document: String,
    pub summary: String,
}

const FIELDS: [&str; 4] = ["id", "source", "document", "summary"];

/// Parses one JSONL line; `line` is 1-based and only used in errors.
pub fn parse_line(text: &str, line: usize) -> Result<Example, DataError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| DataError::MalformedLine {
        line,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| DataError::MalformedLine {
        line,
        message: "expected a JSON object".into(),
    })?;
    let mut fields = FIELDS.iter().map(|&name| match obj.get(name) {
        None | Some(serde_json::Value::Null) => Err(DataError::MissingField { line, name }),
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(DataError::MalformedLine {
            line,
            message: format!("field \"{name}\" must be a string, got {other}"),
        }),
    });
    let mut next = || fields.next().expect("four fields");
    let ex = Example {
        id: next()?,
        source: next()?,
        document: next()?,
        summary: next()?,
    };
    for (name, value) in [("document", &ex.document), ("summary", &ex.summary)] {
        if value.trim().is_empty() {
            return Err(DataError::EmptyField { line, name });
        }
    }
    Ok(ex)
}

/// Order-preserving streaming reader. Blank lines are skipped.
pub struct JsonlReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> JsonlReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
        }
    }
}

impl<R: BufRead> Iterator for JsonlReader<R> {
    type Item = Result<Example, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(parse_line(&text, self.line));
        }
    }
}

pub fn load_jsonl(path: &Path) -> Result<JsonlReader<BufReader<File>>, DataError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::FileNotFound(path.to_path_buf()),
        _ => DataError::Io(e),
    })?;
    Ok(JsonlReader::new(BufReader::new(file)))
}

/// Reads every example. Strict mode stops at the first bad line; lenient
/// mode collects per-line errors and keeps going.
pub fn read_all(path: &Path, lenient: bool) -> Result<(Vec<Example>, Vec<DataError>), DataError> {
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for item in load_jsonl(path)? {
        match item {
            Ok(ex) => good.push(ex),
            Err(e @ DataError::Io(_)) => return Err(e),
            Err(e) if lenient => bad.push(e),
            Err(e) => return Err(e),
        }
    }
    Ok((good, bad))
}

pub fn write_jsonl(examples: &[Example], mut out: impl Write) -> std::io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_n: usize,
    pub valid_n: usize,
    pub test_n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

fn check_unique(examples: &[Example]) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for ex in examples {
        if !seen.insert(ex.id.as_str()) {
            return Err(DataError::DuplicateId(ex.id.clone()));
        }
    }
    Ok(())
}

/// Uniform sampling without replacement: one seeded shuffle, then the
/// first `train_n`, the next `valid_n` and the next `test_n`.
pub fn make_splits(examples: &[Example], spec: &SplitSpec) -> Result<Splits, DataError> {
    check_unique(examples)?;
    let needed = spec.train_n + spec.valid_n + spec.test_n;
    if needed > examples.len() {
        return Err(DataError::SpecInfeasible {
            needed,
            available: examples.len(),
        });
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng::stream(rng::derive_seed(spec.seed, purpose::SPLIT), 0));
    let pick = |range: std::ops::Range<usize>| order[range].iter().map(|&i| examples[i].clone()).collect();
    Ok(Splits {
        train: pick(0..spec.train_n),
        valid: pick(spec.train_n..spec.train_n + spec.valid_n),
        test: pick(spec.train_n + spec.valid_n..needed),
    })
}

/// `total_n` examples drawn uniformly without replacement from the union
/// of `datasets`, in shuffled order.
pub fn make_mix(datasets: &[Vec<Example>], total_n: usize, seed: u64) -> Result<Vec<Example>, DataError> {
    let pool: Vec<&Example> = datasets.iter().flatten().collect();
    if total_n > pool.len() {
        return Err(DataError::InsufficientData {
            requested: total_n,
            available: pool.len(),
        });
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng::stream(rng::derive_seed(seed, purpose::MIX), 0));
    Ok(order[..total_n].iter().map(|&i| pool[i].clone()).collect())
}

/// One id per line.
pub fn write_manifest(examples: &[Example], mut out: impl Write) -> std::io::Result<()> {
    for ex in examples {
        writeln!(out, "{}", ex.id)?;
    }
    Ok(())
}

pub fn read_manifest(reader: impl BufRead) -> std::io::Result<Vec<String>> {
    reader
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .collect()
}
