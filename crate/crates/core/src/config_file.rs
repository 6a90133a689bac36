//! Flat `key = value` configuration files.
//!
//! Every key is the long name of a command-line flag (with `-` or `_`), so
//! a file is expanded into `--key=value` arguments placed before the ones
//! typed on the command line, which therefore take precedence.

use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse_config(text: &str, path: &Path) -> Result<Vec<ConfigEntry>> {
    let mut out: Vec<ConfigEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(err(format!("bad key {:?}", k.trim())));
        }
        if key == "config" {
            return Err(err("config files cannot include other config files".into()));
        }
        let value = v.trim().trim_matches('"').to_string();
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(err(format!("duplicate key {key:?} (first set on line {})", prev.line)));
        }
        out.push(ConfigEntry { key, value, line: i + 1 });
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<Vec<ConfigEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

/// Entries as `--key=value` arguments.
pub fn to_args(entries: &[ConfigEntry]) -> Vec<String> {
    entries.iter().map(|e| format!("--{}={}", e.key, e.value)).collect()
}

/// Replaces `--config FILE` (or `--config=FILE`) after the subcommand in
/// `argv` with the file's entries, inserted right after the subcommand
/// name. `argv[0]` is the program and `argv[1]` the subcommand.
pub fn expand_config(argv: &[String]) -> Result<Vec<String>> {
    let mut rest = Vec::new();
    let mut file = None;
    let mut i = 2;
    while i < argv.len() {
        let a = &argv[i];
        if a == "--" {
            rest.extend_from_slice(&argv[i..]);
            break;
        }
        if a == "--config" {
            let v = argv
                .get(i + 1)
                .ok_or_else(|| Error::Config("--config needs a file name".into()))?;
            file = Some(v.clone());
            i += 2;
            continue;
        }
        if let Some(v) = a.strip_prefix("--config=") {
            file = Some(v.to_string());
        } else {
            rest.push(a.clone());
        }
        i += 1;
    }
    let Some(file) = file else {
        return Ok(argv.to_vec());
    };
    let mut out = argv[..2.min(argv.len())].to_vec();
    out.extend(to_args(&read_config(Path::new(&file))?));
    out.extend(rest);
    Ok(out)
}
