//! Config files are expanded into command-line flags before clap sees them.
//!
//! A file holds one table per subcommand (`[build]`, `[bench]`, ...) whose keys
//! are long flag names. Flags given on the command line win over the file.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;

/// Removes `--config FILE` from `argv` and splices the file's table for the
/// chosen subcommand in right after the subcommand name.
pub fn expand(mut argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some((at, path, width)) = find_config(&argv)? else {
        return Ok(argv);
    };
    argv.drain(at..at + width);
    let Some(cmd_at) = argv.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')) else {
        return Ok(argv);
    };
    let cmd_at = cmd_at + 1;
    let command = argv[cmd_at].to_string_lossy().into_owned();
    let table = load(Path::new(&path))?;
    let Some(section) = table.get(&command).or_else(|| table.get(&command.replace('-', "_"))) else {
        return Ok(argv);
    };
    let Value::Object(section) = section else {
        bail!("config: `{command}` must be a table");
    };
    let given: Vec<String> = argv[cmd_at + 1..]
        .iter()
        .map(|a| a.to_string_lossy().split('=').next().unwrap_or_default().to_owned())
        .collect();
    let mut extra = Vec::new();
    for (key, value) in section {
        let flag = format!("--{}", key.replace('_', "-"));
        if given.contains(&flag) {
            continue;
        }
        match value {
            Value::Bool(true) => extra.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let parts: Result<Vec<String>> = items.iter().map(|v| scalar(key, v)).collect();
                extra.push(flag);
                extra.push(parts?.join(","));
            }
            other => {
                extra.push(flag);
                extra.push(scalar(key, other)?);
            }
        }
    }
    argv.splice(cmd_at + 1..cmd_at + 1, extra.into_iter().map(OsString::from));
    Ok(argv)
}

fn find_config(argv: &[OsString]) -> Result<Option<(usize, String, usize)>> {
    for (i, a) in argv.iter().enumerate().skip(1) {
        let a = a.to_string_lossy();
        if a == "--" {
            break;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Ok(Some((i, p.to_owned(), 1)));
        }
        if a == "--config" {
            let Some(p) = argv.get(i + 1) else {
                bail!("--config needs a file");
            };
            return Ok(Some((i, p.to_string_lossy().into_owned(), 2)));
        }
    }
    Ok(None)
}

fn scalar(key: &str, v: &Value) -> Result<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        _ => bail!("config: `{key}` must be a scalar or a list of scalars"),
    })
}

fn load(path: &Path) -> Result<serde_json::Map<String, Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    let value: Value = if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        let t: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        serde_json::to_value(t)?
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => bail!("config {} must be a table", path.display()),
    }
}
