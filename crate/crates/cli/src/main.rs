//! `tu`: every experiment and utility of the workspace as a subcommand.
//!
//! Usage: `tu <subcommand> [--config FILE|default] [--seed N] [--out-dir DIR]
//! [--workers N] [--key value ...]`. Any `--key value` pair not listed above
//! overrides a config key (equivalently `--set key=value`).

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Arg, ArgAction, ArgMatches};
use serde_json::{json, Value};

use commands::{CliError, COMMANDS, COMMON_KEYS};
use config::RunConfig;

const FIXED_FLAGS: &[&str] = &["config", "seed", "out-dir", "workers", "set", "help", "version"];

/// Rewrites `--key value` and `--key=value` for unknown keys into `--set key=value`.
fn normalize_args(args: Vec<String>) -> Result<Vec<String>, String> {
    let mut out = Vec::with_capacity(args.len());
    let mut iter = args.into_iter();
    out.extend(iter.next());
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| !f.is_empty()) else {
            out.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        if FIXED_FLAGS.contains(&name) {
            out.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => iter.next().ok_or_else(|| format!("--{name} needs a value"))?,
        };
        out.push("--set".into());
        out.push(format!("{}={value}", name.replace('-', "_")));
    }
    Ok(out)
}

fn cli() -> clap::Command {
    let common = [
        Arg::new("config")
            .long("config")
            .default_value("default")
            .help("Flat key=value config file, or `default`"),
        Arg::new("seed").long("seed").value_parser(clap::value_parser!(u64)).help("Master seed"),
        Arg::new("out-dir").long("out-dir").help("Output directory [env: TU_OUT_DIR, default: .]"),
        Arg::new("workers")
            .long("workers")
            .value_parser(clap::value_parser!(usize))
            .help("Worker threads; results do not depend on it"),
        Arg::new("set")
            .long("set")
            .action(ArgAction::Append)
            .value_name("KEY=VALUE")
            .help("Override a config key; `--key value` is shorthand"),
    ];
    let mut cmd = clap::Command::new("tu")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Predictive-coding objectives, schedules and theorem checks")
        .subcommand_required(true);
    for c in COMMANDS {
        let keys = c.keys.iter().map(|k| format!("  {} = {}", k.name, k.default)).collect::<Vec<_>>().join("\n");
        cmd = cmd.subcommand(
            clap::Command::new(c.name)
                .about(c.about)
                .after_help(format!("Config keys and defaults:\n{keys}"))
                .args(common.clone()),
        );
    }
    cmd
}

struct Usage(String);

fn resolve(name: &str, m: &ArgMatches) -> Result<RunConfig, Usage> {
    let command = commands::find(name).expect("registered subcommand");
    let schema: Vec<config::Key> = command
        .keys
        .iter()
        .chain(COMMON_KEYS)
        .map(|k| config::key(k.name, k.default))
        .collect();
    let overrides = m
        .get_many::<String>("set")
        .into_iter()
        .flatten()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.to_string()))
                .ok_or_else(|| Usage(format!("--set expects KEY=VALUE, got `{kv}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let config = m.get_one::<String>("config").expect("has default");
    let mut cfg = RunConfig::resolve(name, &schema, config, &overrides).map_err(|e| Usage(e.to_string()))?;
    if let Some(seed) = m.get_one::<u64>("seed") {
        cfg.set("seed", seed.to_string());
    }
    if let Some(dir) = m.get_one::<String>("out-dir") {
        cfg.set("out_dir", dir.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    match cfg.str("out_dir") {
        "" => std::env::var_os("TU_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
        dir => PathBuf::from(dir),
    }
}

fn unix_seconds(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn emit(summary: Value) {
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
}

fn fail(command: &str, code: u8, message: String) -> ExitCode {
    eprintln!("tu {command}: {message}");
    emit(json!({ "command": command, "status": "error", "error": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let args = match normalize_args(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => return fail("", 1, e),
    };
    let matches = match cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let cfg = match resolve(name, sub) {
        Ok(c) => c,
        Err(Usage(e)) => return fail(name, 1, e),
    };
    if let Some(&workers) = sub.get_one::<usize>("workers") {
        if workers == 0 {
            return fail(name, 1, "--workers must be positive".into());
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            return fail(name, 1, e.to_string());
        }
    }

    let started = SystemTime::now();
    let clock = Instant::now();
    let command = commands::find(name).expect("registered subcommand");
    let mut outcome = match (command.run)(&cfg) {
        Ok(o) => o,
        Err(e @ (CliError::Config(_) | CliError::Usage(_))) => return fail(name, 1, e.to_string()),
        Err(e @ CliError::Core(_)) => return fail(name, 1, e.to_string()),
    };
    let dir = out_dir(&cfg);
    let meta = json!({
        "command": name,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": unix_seconds(started),
        "elapsed_seconds": clock.elapsed().as_secs_f64(),
        "workers": rayon::current_num_threads(),
        "out_dir": dir.display().to_string(),
    });
    outcome.file(format!("{name}.config"), cfg.echo());
    outcome.file(format!("{name}.meta.json"), serde_json::to_string_pretty(&meta).unwrap() + "\n");
    let written = match output::commit(&dir, &outcome.artifacts) {
        Ok(w) => w,
        Err(e) => return fail(name, 1, format!("writing outputs to {}: {e}", dir.display())),
    };

    let status = if outcome.failures.is_empty() { "pass" } else { "fail" };
    let mut summary = serde_json::Map::new();
    summary.insert("command".into(), json!(name));
    summary.insert("status".into(), json!(status));
    if !outcome.failures.is_empty() {
        summary.insert("failures".into(), json!(outcome.failures));
    }
    summary.extend(outcome.summary);
    summary.insert(
        "outputs".into(),
        json!(written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>()),
    );
    emit(Value::Object(summary));
    if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn unknown_flags_become_overrides() {
        let got = normalize_args(args("tu schedule --t 0 --seed 3 --total-iters=50 --config default")).unwrap();
        assert_eq!(
            got,
            args("tu schedule --set t=0 --seed 3 --set total_iters=50 --config default")
        );
        assert!(normalize_args(args("tu schedule --t")).is_err());
    }

    #[test]
    fn every_subcommand_is_registered() {
        cli().debug_assert();
        for c in COMMANDS {
            let m = cli().try_get_matches_from(["tu", c.name]).unwrap();
            assert_eq!(m.subcommand_name(), Some(c.name));
            assert!(c.keys.iter().all(|k| !COMMON_KEYS.iter().any(|ck| ck.name == k.name)));
        }
    }
}
