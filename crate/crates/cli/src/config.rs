//! `--config FILE` support: a `key = value` file whose keys are the long flag
//! names of the chosen subcommand. Lines are expanded into flags and placed
//! right after the subcommand, so anything given on the command line wins.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use crate::CliError;

pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut config = None;
    let mut sub_pos = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" {
            config = args.get(i + 1).cloned();
            i += 2;
            continue;
        }
        if let Some(path) = a.strip_prefix("--config=") {
            config = Some(OsString::from(path));
        } else if sub_pos.is_none() && !a.starts_with('-') {
            sub_pos = Some(i);
        }
        i += 1;
    }

    let (Some(path), Some(pos)) = (config, sub_pos) else {
        return Ok(args);
    };
    let text = fs::read_to_string(Path::new(&path)).map_err(|e| {
        CliError::Io(format!("cannot read config {}: {e}", path.to_string_lossy()))
    })?;
    let extra = parse(&text)?;
    let mut out = args;
    out.splice(pos + 1..pos + 1, extra);
    Ok(out)
}

fn parse(text: &str) -> Result<Vec<OsString>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "config line {}: expected key=value, got {line:?}",
                n + 1
            )));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", n + 1)));
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{key}").into());
                out.push(value.into());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[OsString]) -> Vec<String> {
        v.iter().map(|s| s.to_string_lossy().into_owned()).collect()
    }

    #[test]
    fn keys_become_flags() {
        let got = parse("# comment\nlayer_count = 8\ncenter=true\nfreeze-fine=false\n").unwrap();
        assert_eq!(strs(&got), ["--layer-count", "8", "--center"]);
    }

    #[test]
    fn missing_equals_is_rejected() {
        assert!(matches!(parse("k 5"), Err(CliError::Usage(_))));
    }

    #[test]
    fn without_config_args_are_untouched() {
        let args: Vec<OsString> = ["motionsub", "fit", "a.ltrj"].iter().map(OsString::from).collect();
        assert_eq!(expand_args(args.clone()).unwrap(), args);
    }
}
