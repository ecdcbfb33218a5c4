//! JSONL preference pairs: one object per line with integer-array fields
//! `prompt`, `chosen`, `rejected` and an optional integer `pair_id`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use slime_core::PreferencePair;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("line {line}: parse error: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },

    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        source: slime_core::Error,
    },

    #[error("line {line}: duplicate pair_id {pair_id}")]
    DuplicateId { line: usize, pair_id: u64 },
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    prompt: Vec<u32>,
    chosen: Vec<u32>,
    rejected: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pair_id: Option<u64>,
}

/// Reads pairs in file order. Blank lines are skipped; a missing `pair_id`
/// defaults to the record's 0-based position. Line numbers in errors are
/// 1-based.
pub fn load_jsonl(path: &Path, vocab_size: usize) -> Result<Vec<PreferencePair>, JsonlError> {
    let file = File::open(path).map_err(|source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_jsonl(BufReader::new(file), vocab_size).map_err(|e| match e {
        JsonlError::Io { source, .. } => JsonlError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn read_jsonl<R: BufRead>(reader: R, vocab_size: usize) -> Result<Vec<PreferencePair>, JsonlError> {
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|source| JsonlError::Io {
            path: String::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            line: line_no,
            source,
        })?;
        let pair_id = record.pair_id.unwrap_or(pairs.len() as u64);
        if !seen.insert(pair_id) {
            return Err(JsonlError::DuplicateId {
                line: line_no,
                pair_id,
            });
        }
        let pair = PreferencePair::new(
            pair_id,
            record.prompt,
            record.chosen,
            record.rejected,
            vocab_size,
        )
        .map_err(|source| JsonlError::Invalid {
            line: line_no,
            source,
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// One UTF-8 object per line with keys `prompt`, `chosen`, `rejected`,
/// `pair_id`, each line newline-terminated.
pub fn write_jsonl<W: Write>(mut writer: W, pairs: &[PreferencePair]) -> std::io::Result<()> {
    for pair in pairs {
        let record = PairRecord {
            prompt: pair.prompt.tokens().to_vec(),
            chosen: pair.chosen.tokens().to_vec(),
            rejected: pair.rejected.tokens().to_vec(),
            pair_id: Some(pair.pair_id),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_jsonl(path: &Path, pairs: &[PreferencePair]) -> std::io::Result<()> {
    write_jsonl(BufWriter::new(File::create(path)?), pairs)
}
