//! Flat `key = value` configuration files. Keys are long flag names; values
//! fill in flags the command line leaves unset.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use clap::Command;

use crate::UsageError;

pub fn parse(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(UsageError(format!("{}: line {}: expected `key = value`", path.display(), i + 1)).into());
        };
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

const GLOBAL_WITH_VALUE: [&str; 3] = ["--config", "--seed", "--out-dir"];

/// Location of `--config` on the command line, if any.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
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

/// The (sub)command selected by `args`, found by walking subcommand names.
fn selected<'a>(root: &'a Command, args: &[OsString]) -> Vec<&'a Command> {
    let mut chain = vec![root];
    let mut skip_value = false;
    for a in args.iter().skip(1) {
        if skip_value {
            skip_value = false;
            continue;
        }
        let s = a.to_string_lossy();
        if s.starts_with('-') {
            skip_value = GLOBAL_WITH_VALUE.contains(&s.as_ref());
            continue;
        }
        let current = *chain.last().unwrap();
        match current.find_subcommand(s.as_ref()) {
            Some(sub) => chain.push(sub),
            None => break,
        }
    }
    chain
}

fn all_long_names(cmd: &Command, out: &mut BTreeSet<String>) {
    for a in cmd.get_arguments() {
        if let Some(l) = a.get_long() {
            out.insert(l.to_string());
        }
    }
    for s in cmd.get_subcommands() {
        all_long_names(s, out);
    }
}

fn given(args: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("--{long}=");
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&prefix)
    })
}

/// Appends values from the `--config` file for every flag of the selected
/// subcommand that the command line does not set.
pub fn merge(root: &Command, args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    let entries = parse(&text, path)?;

    let mut known = BTreeSet::new();
    all_long_names(root, &mut known);
    if let Some((k, _)) = entries.iter().find(|(k, _)| !known.contains(k)) {
        return Err(UsageError(format!("{}: unknown key `{k}`", path.display())).into());
    }

    let chain = selected(root, &args);
    let mut out = args.clone();
    for (key, value) in entries {
        if key == "config" || given(&args, &key) {
            continue;
        }
        let arg = chain
            .iter()
            .rev()
            .flat_map(|c| c.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()));
        let Some(arg) = arg else { continue };
        let flag = OsString::from(format!("--{key}"));
        if arg.get_action().takes_values() {
            let multi = arg.get_num_args().is_some_and(|n| n.max_values() > 1);
            out.push(flag);
            if multi {
                out.extend(value.split_whitespace().map(OsString::from));
            } else {
                out.push(value.into());
            }
        } else if matches!(value.as_str(), "true" | "1" | "yes") {
            out.push(flag);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{Arg, ArgAction};

    fn cmd() -> Command {
        Command::new("t")
            .arg(Arg::new("seed").long("seed").global(true))
            .arg(Arg::new("config").long("config").global(true))
            .subcommand(
                Command::new("parse").arg(Arg::new("workers").long("workers")).arg(
                    Arg::new("record-timings")
                        .long("record-timings")
                        .action(ArgAction::SetTrue),
                ),
            )
            .subcommand(Command::new("other").arg(Arg::new("n").long("n")))
    }

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn cli_flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.conf");
        fs::write(&p, "# comment\nworkers = 4\nrecord_timings = true\nn = 3\nseed = 9\n").unwrap();
        let p = p.to_str().unwrap();
        let merged = merge(&cmd(), os(&["t", "--config", p, "parse", "--seed", "1"])).unwrap();
        assert_eq!(
            merged,
            os(&[
                "t",
                "--config",
                p,
                "parse",
                "--seed",
                "1",
                "--workers",
                "4",
                "--record-timings"
            ])
        );
        fs::write(dir.path().join("bad.conf"), "wrkers = 4\n").unwrap();
        let bad = dir.path().join("bad.conf");
        let err = merge(&cmd(), os(&["t", "--config", bad.to_str().unwrap(), "parse"])).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
