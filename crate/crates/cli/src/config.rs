//! `key = value` config files merged under the command line.

use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches};

use crate::args::Cli;

pub enum ParseFailure {
    Clap(clap::Error),
    Config(String),
}

impl From<clap::Error> for ParseFailure {
    fn from(e: clap::Error) -> Self {
        ParseFailure::Clap(e)
    }
}

/// Parses `key = value` lines. Keys may use `-` or `_`.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", i + 1))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(format!("config line {}: empty key", i + 1));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// Parses `argv`; when `--config` is present, its entries are appended as
/// flags for every argument the command line left unset, and parsing runs
/// again.
pub fn parse_with_config<I, T>(argv: I) -> Result<Cli, ParseFailure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cmd = Cli::command();
    let lenient = cmd.clone().ignore_errors(true).try_get_matches_from(&argv)?;
    let path = lenient.get_one::<std::path::PathBuf>("config").cloned();
    let sub = lenient.subcommand();
    let (Some(path), Some((sub_name, sub_matches))) = (path, sub) else {
        return Ok(Cli::from_arg_matches(&cmd.try_get_matches_from(&argv)?)?);
    };
    let extra = config_args(&path, &cmd, sub_name, sub_matches)?;
    let mut merged = argv;
    merged.extend(extra);
    let matches = cmd.try_get_matches_from(&merged)?;
    Ok(Cli::from_arg_matches(&matches)?)
}

fn config_args(
    path: &Path,
    cmd: &clap::Command,
    sub_name: &str,
    sub_matches: &ArgMatches,
) -> Result<Vec<OsString>, ParseFailure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ParseFailure::Config(format!("cannot read config {}: {e}", path.display())))?;
    let entries = parse_config(&text).map_err(ParseFailure::Config)?;
    let sub = cmd.find_subcommand(sub_name).expect("matched subcommand exists");
    let mut extra = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            return Err(ParseFailure::Config("a config file cannot name another config file".into()));
        }
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| ParseFailure::Config(format!("config key `{key}` is not a flag of `{sub_name}`")))?;
        if sub_matches.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        if arg.get_action().takes_values() {
            extra.push(OsString::from(format!("--{key}={value}")));
        } else {
            match value.as_str() {
                "true" => extra.push(OsString::from(format!("--{key}"))),
                "false" => {}
                other => {
                    return Err(ParseFailure::Config(format!("config key `{key}` expects true or false, got `{other}`")))
                }
            }
        }
    }
    Ok(extra)
}
