mod args;
mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Parser;

use args::{Cli, Command, ReplayArgs};
use commands::Outcome;
use manifest::{compare_outputs, with_out, FileRecord, RunManifest, MANIFEST_FILE, MANIFEST_VERSION};

const THREADS_VAR: &str = "TGV_THREADS";

fn out_dir(command: &Command) -> &Path {
    match command {
        Command::Synth(a) => &a.out,
        Command::Pretrain(a) => &a.out,
        Command::Embed(a) => &a.out,
        Command::Zeroshot(a) => &a.out,
        Command::Probe(a) => &a.out,
        Command::Eval(a) => &a.out,
        Command::Ablate(a) => &a.out,
        Command::Pairs(a) => &a.out,
        Command::Replay(_) => unreachable!("replay has no fixed output directory"),
    }
}

fn dispatch(command: &Command) -> Result<Outcome> {
    match command {
        Command::Synth(a) => commands::synth(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Embed(a) => commands::embed(a),
        Command::Zeroshot(a) => commands::zeroshot(a),
        Command::Probe(a) => commands::probe(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Pairs(a) => commands::pairs(a),
        Command::Replay(_) => unreachable!("replay is handled separately"),
    }
}

/// Runs one command and writes its manifest next to its outputs.
fn run_recorded(command: &Command, argv: Vec<String>) -> Result<RunManifest> {
    let out = out_dir(command).to_path_buf();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let started_at = chrono::Utc::now();
    let clock = Instant::now();
    let outcome = dispatch(command)?;
    let wall_seconds = clock.elapsed().as_secs_f64();

    let inputs =
        outcome.inputs.iter().map(|p| FileRecord::of(p, p.display().to_string())).collect::<Result<Vec<_>>>()?;
    let outputs =
        outcome.outputs.iter().map(|name| FileRecord::of(&out.join(name), name.clone())).collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        manifest_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: command.name().to_string(),
        argv,
        cwd: std::env::current_dir()?,
        out: out.clone(),
        config: outcome.config,
        seed: outcome.seed,
        threads: rayon::current_num_threads(),
        inputs,
        outputs,
        started_at: started_at.to_rfc3339(),
        finished_at: chrono::Utc::now().to_rfc3339(),
        wall_seconds,
    };
    manifest.save(&out)?;
    Ok(manifest)
}

fn replay(args: &ReplayArgs) -> Result<bool> {
    let recorded = RunManifest::load(&args.manifest)?;
    if recorded.subcommand == "replay" {
        bail!("cannot replay a replay");
    }
    let changed = recorded.changed_inputs()?;
    if !changed.is_empty() {
        bail!("inputs changed since the recorded run: {}", changed.join(", "));
    }
    // Resolve the new output directory before moving to the recorded cwd.
    let out: PathBuf = match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            dir.canonicalize()?
        }
        None => recorded.cwd.join(&recorded.out),
    };
    let argv = with_out(&recorded.argv, &out)?;
    std::env::set_current_dir(&recorded.cwd)
        .with_context(|| format!("entering recorded directory {}", recorded.cwd.display()))?;
    let cli = Cli::try_parse_from(std::iter::once("tgv".to_string()).chain(argv.iter().cloned()))
        .context("recorded arguments no longer parse")?;
    let rerun = run_recorded(&cli.command, argv)?;

    let comparison = compare_outputs(&recorded, &rerun);
    let identical = comparison.iter().all(|c| c.identical);
    for c in &comparison {
        println!("{} {}", if c.identical { "identical" } else { "DIFFERS  " }, c.path);
    }
    let report = serde_json::json!({
        "manifest": args.manifest.canonicalize()?,
        "identical": identical,
        "outputs": comparison,
    });
    std::fs::write(out.join("replay.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(identical)
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_VAR} must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| e.to_string())
}

fn report(err: &anyhow::Error) {
    match err.chain().find_map(|e| e.downcast_ref::<tgv::TgvError>()) {
        Some(kind) => eprintln!("error: {}: {err:#}", kind.name()),
        None => eprintln!("error: {err:#}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Replay(args) => replay(args).map(|same| {
            if same {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: replayed outputs differ from the recorded run ({MANIFEST_FILE})");
                ExitCode::from(1)
            }
        }),
        command => run_recorded(command, std::env::args().skip(1).collect()).map(|_| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|err| {
        report(&err);
        ExitCode::from(1)
    })
}
