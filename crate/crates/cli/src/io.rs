//! Input readers shared by the commands.

use std::fs;
use std::path::Path;

use bartlab::data::{read_all, Example};
use serde_json::Value;

use crate::error::CliError;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

pub fn read_examples(path: &Path) -> Result<Vec<Example>, CliError> {
    Ok(read_all(path, false)?.0)
}

/// Documents from a `.jsonl` corpus, or one document per non-blank line.
pub fn read_documents(path: &Path) -> Result<Vec<String>, CliError> {
    if is_jsonl(path) {
        return Ok(read_examples(path)?.into_iter().map(|e| e.document).collect());
    }
    Ok(read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

/// Tokenizer training text: documents and summaries from `.jsonl`, or
/// plain lines.
pub fn read_tokenizer_corpus(path: &Path) -> Result<Vec<String>, CliError> {
    if is_jsonl(path) {
        return Ok(read_examples(path)?
            .into_iter()
            .flat_map(|e| [e.document, e.summary])
            .collect());
    }
    read_documents(path)
}

/// One text per line with an optional id. Lines that are JSON objects
/// supply the first present field of `fields`; other lines are raw text.
pub fn read_texts(path: &Path, fields: &[&str]) -> Result<Vec<(Option<String>, String)>, CliError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if is_jsonl(path) && line.trim().is_empty() {
            continue;
        }
        if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(line) {
            let value = fields
                .iter()
                .find_map(|f| obj.get(*f).and_then(Value::as_str))
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "{} line {}: none of the fields {fields:?} is present",
                        path.display(),
                        i + 1
                    ))
                })?;
            let id = obj.get("id").and_then(Value::as_str).map(str::to_string);
            out.push((id, value.to_string()));
        } else if is_jsonl(path) {
            return Err(CliError::Data(format!("{} line {}: malformed JSON", path.display(), i + 1)));
        } else {
            out.push((None, line.to_string()));
        }
    }
    Ok(out)
}
