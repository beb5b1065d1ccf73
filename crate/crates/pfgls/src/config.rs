//! Flat `key = value` configuration files.
//!
//! Keys are the long flag names of the chosen subcommand without the
//! leading dashes (`gamma = 0.7`, `x-cols = income,urban`). Blank lines and
//! lines starting with `#` are ignored. Boolean flags take `true` or
//! `false`. Unknown keys are rejected. Values from the file are placed
//! before the command-line arguments, so flags given on the command line
//! win.

use std::path::Path;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let Some((key, value)) = s.split_once('=') else {
            return Err(CliError::Config(format!("line {line}: expected `key = value`, got {s:?}")));
        };
        let key = key.trim().trim_start_matches("--").to_string();
        let value = value.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(CliError::Config(format!("line {line}: empty key")));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(CliError::Config(format!("line {line}: key {key:?} already set on line {}", prev.line)));
        }
        out.push(Entry { key, value, line });
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    parse(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Converts entries into flag tokens. `lookup` returns, for a known key,
/// whether the flag takes a value; `None` marks an unknown key.
pub fn to_args(entries: &[Entry], lookup: impl Fn(&str) -> Option<bool>) -> Result<Vec<String>> {
    let mut args = Vec::new();
    for e in entries {
        match lookup(&e.key) {
            None => return Err(CliError::Config(format!("line {}: unknown key {:?}", e.line, e.key))),
            Some(true) => {
                args.push(format!("--{}", e.key));
                args.push(e.value.clone());
            }
            Some(false) => match e.value.as_str() {
                "true" => args.push(format!("--{}", e.key)),
                "false" => {}
                other => {
                    return Err(CliError::Config(format!(
                        "line {}: flag {:?} takes true or false, got {other:?}",
                        e.line, e.key
                    )))
                }
            },
        }
    }
    Ok(args)
}
