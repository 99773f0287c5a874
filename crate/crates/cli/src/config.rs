//! `key = value` files: run configurations and the small manifests the CLI
//! writes next to its checkpoints.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use nai_core::{NaiError, Result};

/// Entries in file order. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(NaiError::Config(format!(
                "{origin} line {}: expected `key = value`",
                no + 1
            )));
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(NaiError::Config(format!(
                "{origin} line {}: empty key",
                no + 1
            )));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn lookup<'a>(entries: &'a [(String, String)], key: &str, origin: &str) -> Result<&'a str> {
    entries
        .iter()
        .rev()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| NaiError::Config(format!("{origin} lacks key {key:?}")))
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Turns a config file into flags placed right after the subcommand, so
/// flags given on the command line come later and win.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path)?;
    let entries = parse_kv(&text, &path.display().to_string())?;
    let mut injected = Vec::new();
    for (key, value) in entries {
        let flag = key.trim_start_matches('-').replace('_', "-");
        if flag == "config" {
            return Err(NaiError::Config(format!(
                "{}: config files cannot include others",
                path.display()
            )));
        }
        match value.as_str() {
            "true" => injected.push(format!("--{flag}").into()),
            "false" => {}
            _ => {
                injected.push(format!("--{flag}").into());
                injected.push(value.into());
            }
        }
    }
    let Some(sub) = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
    else {
        return Ok(args);
    };
    let at = sub + 2;
    let mut out = args[..at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}
