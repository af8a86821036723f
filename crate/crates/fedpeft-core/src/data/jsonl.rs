//! JSONL ingestion and serialization.
//!
//! Input records carry `text`, `label`, `language`, and optionally a
//! pre-tokenised `tokens` array. When `tokens` is absent, words are
//! whitespace-split and mapped by FNV-1a 64 modulo the vocabulary, which is
//! platform-stable and reproducible across runs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Example;
use crate::rng::fnv1a64;

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    #[serde(default)]
    text: String,
    label: usize,
    language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<u32>>,
}

/// Maps one word to a token id: FNV-1a 64 of its UTF-8 bytes, modulo the
/// vocabulary.
pub fn tokenize_text(text: &str, vocab_size: usize) -> Vec<u32> {
    text.split_whitespace()
        .map(|w| (fnv1a64(w.as_bytes()) % vocab_size as u64) as u32)
        .collect()
}

/// Reads a JSONL dataset. Lines must parse and carry an in-range label and a
/// non-empty token sequence; violations report the 1-based line number. An
/// empty file is an empty dataset.
pub fn ingest_jsonl(
    path: impl AsRef<Path>,
    vocab_size: usize,
    num_classes: usize,
) -> Result<Vec<Example>> {
    if vocab_size == 0 {
        return Err(Error::config("vocab_size must be >= 1"));
    }
    if num_classes < 2 {
        return Err(Error::config("num_classes must be >= 2"));
    }
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| Error::parse(line_no, format!("malformed record: {e}")))?;
        if record.label >= num_classes {
            return Err(Error::parse(
                line_no,
                format!(
                    "label {} out of range for num_classes {num_classes}",
                    record.label
                ),
            ));
        }
        let tokens = match record.tokens {
            Some(tokens) => {
                if let Some(bad) = tokens.iter().find(|&&t| t as usize >= vocab_size) {
                    return Err(Error::parse(
                        line_no,
                        format!("token id {bad} out of range for vocab_size {vocab_size}"),
                    ));
                }
                tokens
            }
            None => tokenize_text(&record.text, vocab_size),
        };
        if tokens.is_empty() {
            return Err(Error::parse(line_no, "record yields no tokens"));
        }
        out.push(Example {
            tokens,
            label: record.label,
            language: record.language,
        });
    }
    Ok(out)
}

/// Writes a dataset as JSONL with an explicit `tokens` field, one record per
/// line, in dataset order.
pub fn write_jsonl(path: impl AsRef<Path>, dataset: &[Example]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    for ex in dataset {
        let record = Record {
            text: String::new(),
            label: ex.label,
            language: ex.language.clone(),
            tokens: Some(ex.tokens.clone()),
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
