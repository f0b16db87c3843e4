//! Generated reference page for flags and config keys.

use clap::CommandFactory;

use crate::config::RunConfig;
use crate::Cli;

fn arg_line(a: &clap::Arg) -> String {
    let name = match (a.get_long(), a.get_short()) {
        (Some(l), _) => format!("--{l}"),
        (None, Some(s)) => format!("-{s}"),
        (None, None) => format!("<{}>", a.get_id()),
    };
    let takes_value = a.get_action().takes_values() && a.get_long().is_some();
    let value = if takes_value {
        let v = a.get_value_names().and_then(|v| v.first()).map(|s| s.to_string()).unwrap_or_else(|| a.get_id().to_string().to_uppercase());
        format!(" {v}")
    } else {
        String::new()
    };
    let mut help = a.get_help().map(|h| h.to_string()).unwrap_or_default();
    let defaults: Vec<String> = a.get_default_values().iter().map(|v| v.to_string_lossy().into_owned()).collect();
    if !defaults.is_empty() {
        help.push_str(&format!(" (default: `{}`)", defaults.join(",")));
    }
    let values: Vec<String> = a.get_possible_values().iter().map(|v| v.get_name().to_string()).collect();
    if !values.is_empty() && !a.get_action().takes_values().eq(&false) {
        help = format!("{}. One of: {}.", help.trim_end_matches('.'), values.join(", "));
    }
    format!("| `{name}{value}` | {} |", help.trim())
}

pub fn reference_page() -> String {
    let cmd = Cli::command();
    let mut s = String::from("# condmon command reference\n\n");
    s.push_str("Generated by `condmon docs`. Every command writes its outputs and a `run.toml` snapshot into a timestamped directory under `--runs`.\n\n");
    s.push_str("Exit codes: `0` success, `2` input or configuration error, `3` numeric failure during training.\n\n");
    s.push_str("## Global flags\n\n| flag | meaning |\n|---|---|\n");
    for a in cmd.get_arguments().filter(|a| a.is_global_set()) {
        s.push_str(&arg_line(a));
        s.push('\n');
    }
    for sub in cmd.get_subcommands() {
        s.push_str(&format!("\n## `condmon {}`\n\n", sub.get_name()));
        if let Some(about) = sub.get_about() {
            s.push_str(&format!("{about}\n\n"));
        }
        let args: Vec<_> = sub.get_arguments().filter(|a| !a.is_global_set() && a.get_id() != "help").collect();
        if args.is_empty() {
            continue;
        }
        s.push_str("| flag | meaning |\n|---|---|\n");
        for a in args {
            s.push_str(&arg_line(a));
            s.push('\n');
        }
    }
    s.push_str("\n## Config keys\n\nA config file may set any subset of these keys; `--set key.path=value` overrides them, and command flags win over both. Defaults:\n\n```toml\n");
    s.push_str(&RunConfig::default().to_toml());
    s.push_str("```\n");
    s
}
