//! `key = value` config files. Each key is a long flag name; the file's
//! entries are spliced in front of the command-line flags so that explicit
//! flags win.

use anyhow::{bail, Context, Result};

/// Parses config text into flag tokens.
pub fn tokens(text: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`, got {raw:?}", n + 1);
        };
        let (k, v) = (k.trim().replace('_', "-"), v.trim());
        if k.is_empty() || k == "config" {
            bail!("config line {}: bad key {k:?}", n + 1);
        }
        match v {
            "true" => out.push(format!("--{k}")),
            "false" => {}
            _ => {
                out.push(format!("--{k}"));
                out.push(v.to_string());
            }
        }
    }
    Ok(out)
}

/// Expands `--config FILE` in an argument list.
pub fn expand(args: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let extra = tokens(&text)?;
    // Insert after the program name and the (sub)command words.
    let mut at = 1;
    while at < args.len() && !args[at].starts_with('-') {
        at += 1;
        if args[at - 1] != "calibrate" {
            break;
        }
    }
    let mut out = args[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}
