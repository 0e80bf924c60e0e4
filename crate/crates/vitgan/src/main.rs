//! Thin command-line front end; all behaviour lives in the library.
//!
//! Exit codes: 0 success, 2 config error, 3 data/IO error, 4 numeric
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use vitgan::cli::{cmd_eval, cmd_gen_data, cmd_infer, cmd_train, ExperimentConfig};
use vitgan::error::{Error, Result};
use vitgan::train::TrainMode;

const USAGE: &str = "\
usage: vitgan <command> [flags]

commands:
  gen-data  --config FILE [--count N] [--out DIR] [--seed S]
  train     --config FILE [--mode cgan_l1|l1_only] [--seed S] [--resume CKPT] [--out DIR]
  infer     <checkpoint> <input images...> [--out DIR]
  eval      <checkpoint|identity> --config FILE [--out DIR]

flags override config file values, which override built-in defaults.
";

struct Flags {
    config: Option<PathBuf>,
    seed: Option<u64>,
    mode: Option<String>,
    resume: Option<PathBuf>,
    out: Option<PathBuf>,
    count: Option<usize>,
    positional: Vec<String>,
}

fn parse_flags(args: &[String]) -> Result<Flags> {
    let mut f = Flags {
        config: None,
        seed: None,
        mode: None,
        resume: None,
        out: None,
        count: None,
        positional: Vec::new(),
    };
    let mut i = 0;
    let value = |i: &mut usize, name: &str| -> Result<String> {
        *i += 1;
        args.get(*i)
            .cloned()
            .ok_or_else(|| Error::Config(format!("flag {name} needs a value")))
    };
    while i < args.len() {
        match args[i].as_str() {
            "--config" => f.config = Some(PathBuf::from(value(&mut i, "--config")?)),
            "--seed" => {
                f.seed = Some(value(&mut i, "--seed")?.parse().map_err(|_| {
                    Error::Config("--seed must be an unsigned integer".into())
                })?)
            }
            "--mode" => f.mode = Some(value(&mut i, "--mode")?),
            "--resume" => f.resume = Some(PathBuf::from(value(&mut i, "--resume")?)),
            "--out" => f.out = Some(PathBuf::from(value(&mut i, "--out")?)),
            "--count" => {
                f.count = Some(value(&mut i, "--count")?.parse().map_err(|_| {
                    Error::Config("--count must be an unsigned integer".into())
                })?)
            }
            other if other.starts_with("--") => {
                return Err(Error::Config(format!("unknown flag {other}")))
            }
            other => f.positional.push(other.to_string()),
        }
        i += 1;
    }
    Ok(f)
}

fn load_config(flags: &Flags) -> Result<ExperimentConfig> {
    let mut cfg = match &flags.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::from_text(ExperimentConfig::default_text())?,
    };
    if let Some(seed) = flags.seed {
        cfg.training.seed = seed;
    }
    if let Some(mode) = &flags.mode {
        cfg.training.mode = TrainMode::parse(mode)?;
    }
    if let Some(out) = &flags.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = args.first() else {
        eprint!("{USAGE}");
        return Err(Error::Config("no command given".into()));
    };
    let flags = parse_flags(&args[1..])?;
    match command.as_str() {
        "gen-data" => {
            let cfg = load_config(&flags)?;
            let dir = cmd_gen_data(&cfg, flags.count)?;
            println!("wrote dataset to {}", dir.display());
        }
        "train" => {
            let cfg = load_config(&flags)?;
            let outcome = cmd_train(&cfg, flags.resume.as_deref())?;
            println!(
                "trained {} steps; final L1 {:.6}; checkpoint {}; metrics {}",
                outcome.steps_run,
                outcome.final_l1,
                outcome.checkpoint.display(),
                outcome.metrics_file.display()
            );
        }
        "infer" => {
            if flags.positional.is_empty() {
                return Err(Error::Config("infer: vitgan infer <checkpoint> <inputs...>".into()));
            }
            let checkpoint = PathBuf::from(&flags.positional[0]);
            let inputs: Vec<PathBuf> = flags.positional[1..].iter().map(PathBuf::from).collect();
            let out = flags.out.unwrap_or_else(|| PathBuf::from("out"));
            let outcome = cmd_infer(&checkpoint, &inputs, &out)?;
            println!(
                "wrote {} outputs and sheet {}",
                outcome.outputs.len(),
                outcome.sheet.display()
            );
        }
        "eval" => {
            let Some(checkpoint) = flags.positional.first() else {
                return Err(Error::Config("eval: vitgan eval <checkpoint> --config FILE".into()));
            };
            let cfg = load_config(&flags)?;
            let report = cmd_eval(&cfg, &PathBuf::from(checkpoint))?;
            print!("{}", report.render());
        }
        other => {
            eprint!("{USAGE}");
            return Err(Error::Config(format!("unknown command '{other}'")));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
