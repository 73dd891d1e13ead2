//! Line-delimited rollout logs.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::LogRecord;

pub const ROLLOUT_SCHEMA: &str = "toxprop.rollout.v1";

#[derive(Serialize)]
struct LineOut<'a> {
    schema: &'static str,
    #[serde(flatten)]
    record: &'a LogRecord,
}

#[derive(Deserialize)]
struct LineIn {
    schema: String,
    #[serde(flatten)]
    record: LogRecord,
}

pub fn to_jsonl(records: &[LogRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(
            &mut out,
            &LineOut {
                schema: ROLLOUT_SCHEMA,
                record,
            },
        )?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_log(path: impl AsRef<Path>, records: &[LogRecord]) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_jsonl(records)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

/// Parses log lines, rejecting any line whose schema tag differs from the
/// current version.
pub fn parse_log(content: &str) -> Result<Vec<LogRecord>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let probe: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        match probe.get("schema").and_then(|s| s.as_str()) {
            Some(ROLLOUT_SCHEMA) => {}
            Some(other) => {
                return Err(Error::Version(format!(
                    "line {} has schema `{other}`, expected `{ROLLOUT_SCHEMA}`",
                    i + 1
                )))
            }
            None => {
                return Err(Error::Version(format!("line {} has no schema tag", i + 1)));
            }
        }
        let parsed: LineIn = serde_json::from_value(probe).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        debug_assert_eq!(parsed.schema, ROLLOUT_SCHEMA);
        out.push(parsed.record);
    }
    Ok(out)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut content = String::new();
    for line in BufReader::new(f).lines() {
        content.push_str(&line.map_err(|e| Error::io(path, e))?);
        content.push('\n');
    }
    parse_log(&content).map_err(|e| match e {
        Error::Version(m) => Error::Version(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Reads several logs and concatenates their records in argument order.
pub fn read_logs<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<LogRecord>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_log(p)?);
    }
    Ok(all)
}
