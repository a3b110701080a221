use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use curation_ood::experiment::{cmd_eval, cmd_generate, cmd_heatmap, cmd_report, cmd_train, ExperimentConfig};
use curation_ood::Error;
use serde_json::json;

#[derive(Parser)]
#[command(version, about = "Curation-likelihood OOD detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the config's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write all datasets as CSV with a manifest.
    Generate(RunArgs),
    /// Train one method; writes parameters, ensemble and training log.
    Train(RunArgs),
    /// Score test sets and write metrics.
    Eval(RunArgs),
    /// Write the P(Undef) grid as CSV and PGM.
    Heatmap(RunArgs),
    /// Merge runs into one comparison table.
    Report {
        /// One config per run to merge; repeatable.
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf, Vec<u64>), Error> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let seeds = args.seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
    Ok((cfg, out, seeds))
}

fn run(command: Command) -> Result<serde_json::Value, Error> {
    let (name, value) = match command {
        Command::Generate(a) => {
            let (cfg, out, seeds) = resolve(&a)?;
            let m = cmd_generate(&cfg, &out, &seeds)?;
            ("generate", json!({ "seeds": seeds, "files": m.iter().map(|m| m.files.len()).sum::<usize>() }))
        }
        Command::Train(a) => {
            let (cfg, out, seeds) = resolve(&a)?;
            let r = cmd_train(&cfg, &out, &seeds)?;
            let final_c: Vec<_> = r.iter().map(|r| r.c_trajectory.last().copied()).collect();
            ("train", json!({ "seeds": seeds, "ensemble_size": r.first().map(|r| r.ensemble_size), "final_c": final_c }))
        }
        Command::Eval(a) => {
            let (cfg, out, seeds) = resolve(&a)?;
            let m = cmd_eval(&cfg, &out, &seeds)?;
            ("eval", json!({ "seeds": seeds, "reports": m.iter().map(|m| m.reports.len()).sum::<usize>() }))
        }
        Command::Heatmap(a) => {
            let (cfg, out, seeds) = resolve(&a)?;
            let m = cmd_heatmap(&cfg, &out, &seeds)?;
            let far: Vec<_> = m.iter().map(|m| m.far_mean_undef).collect();
            ("heatmap", json!({ "seeds": seeds, "far_mean_undef": far }))
        }
        Command::Report { config, out } => {
            let cfgs = config.iter().map(|p| ExperimentConfig::load(p)).collect::<Result<Vec<_>, _>>()?;
            let out = out.unwrap_or_else(|| cfgs[0].output_dir.clone());
            let r = cmd_report(&cfgs, &out)?;
            ("report", json!({ "experiment": r.experiment, "rows": r.rows.len() }))
        }
    };
    Ok(json!({ "command": name, "ok": true, "result": value }))
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string()),
    };
    match run(cli.command) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
