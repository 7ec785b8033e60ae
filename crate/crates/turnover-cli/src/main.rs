//! Command-line front end for the turnover toolkit.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 data/format error,
//! 3 numeric failure.

use std::path::Path;
use std::process::ExitCode;

use turnover::config::RunConfig;
use turnover::experiments as exp;
use turnover::Error;

const USAGE: &str = "\
usage: turnover <command> [--config <file>] [--preset <name>] [--set key=value]... [options]

commands:
  corrupt           apply label corruption, emit corruption.csv
  train-turnover    train the turn-over model, emit model.bin + subnet trace
  score             full score pipeline (or score-only with model_path=...)
  partition         split a scores CSV into easy/difficult subsets
  train-dynamics    plain-model subset dynamics + gradient statistics
  cross-subset      train-on-easy / train-on-difficult transfer runs
  control-removal   dynamics with the difficult subset removed from training
                    (--remove-tag <tag> selects the subset, default 'difficult')
  sweep             one dynamics run per corruption level
  loo-oracle        turn-over scores + leave-one-out oracle side by side
  early-stop        sub-network convergence curves
  report            summarize a run directory (--run <dir>) and write SVGs
  presets           list built-in preset names

Configuration comes from --preset and/or --config (key=value lines, '#' comments);
--set overrides apply last. The TURNOVER_OUT environment variable, when set,
overrides out_dir.";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

struct CliArgs {
    config_path: Option<String>,
    preset: Option<String>,
    overrides: Vec<(String, String)>,
    run_dir: Option<String>,
    remove_tag: String,
}

fn parse_cli(args: &[String]) -> Result<CliArgs, Error> {
    let mut out = CliArgs {
        config_path: None,
        preset: None,
        overrides: Vec::new(),
        run_dir: None,
        remove_tag: "difficult".to_string(),
    };
    let mut i = 0;
    while i < args.len() {
        let need_value = |i: usize| -> Result<&String, Error> {
            args.get(i + 1)
                .ok_or_else(|| Error::config(format!("{} needs a value", args[i])))
        };
        match args[i].as_str() {
            "--config" => {
                out.config_path = Some(need_value(i)?.clone());
                i += 2;
            }
            "--preset" => {
                out.preset = Some(need_value(i)?.clone());
                i += 2;
            }
            "--set" => {
                let kv = need_value(i)?;
                let Some((k, v)) = kv.split_once('=') else {
                    return Err(Error::config(format!("--set expects key=value, got '{kv}'")));
                };
                out.overrides.push((k.trim().to_string(), v.trim().to_string()));
                i += 2;
            }
            "--run" => {
                out.run_dir = Some(need_value(i)?.clone());
                i += 2;
            }
            "--remove-tag" => {
                out.remove_tag = need_value(i)?.clone();
                i += 2;
            }
            other => {
                return Err(Error::config(format!("unknown argument '{other}'")));
            }
        }
    }
    Ok(out)
}

fn load_config(cli: &CliArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.preset {
        Some(name) => RunConfig::preset(name)
            .ok_or_else(|| Error::config(format!("unknown preset '{name}'")))?,
        None => RunConfig::default(),
    };
    // Preset values first, then the file, then --set overrides.
    if let Some(path) = &cli.config_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {path}: {e}")))?;
        cfg = turnover::config::parse_config_str_onto(cfg, &text, &cli.overrides)?;
    } else {
        cfg = turnover::config::parse_config_str_onto(cfg, "", &cli.overrides)?;
    }
    if let Ok(root) = std::env::var("TURNOVER_OUT") {
        if !root.is_empty() {
            cfg.out_dir = root;
        }
    }
    Ok(cfg)
}

fn run(args: &[String]) -> Result<(), Error> {
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return Err(Error::config("missing command"));
    };
    if command == "--help" || command == "-h" || command == "help" {
        println!("{USAGE}");
        return Ok(());
    }
    let cli = parse_cli(&args[1..])?;

    match command.as_str() {
        "presets" => {
            for name in [
                "mnist-score",
                "mnist-score-corrupt",
                "mnist-dynamics-corrupt",
                "mnist-dynamics",
                "mnist-sweep",
                "cifar-score",
                "cifar-cross",
                "longtail-oracle",
            ] {
                println!("{name}");
            }
            Ok(())
        }
        "report" => {
            let dir = cli
                .run_dir
                .clone()
                .ok_or_else(|| Error::config("report needs --run <dir>"))?;
            let summary = turnover::report::report(Path::new(&dir))?;
            print!("{summary}");
            Ok(())
        }
        "corrupt" => done(exp::cmd_corrupt(&load_config(&cli)?)?),
        "train-turnover" => done(exp::cmd_train_turnover(&load_config(&cli)?)?),
        "score" => done(exp::cmd_score(&load_config(&cli)?)?),
        "partition" => done(exp::cmd_partition(&load_config(&cli)?)?),
        "train-dynamics" => done(exp::cmd_dynamics(&load_config(&cli)?)?),
        "cross-subset" => done(exp::cmd_cross_subset(&load_config(&cli)?)?),
        "control-removal" => done(exp::cmd_control_removal(&load_config(&cli)?, &cli.remove_tag)?),
        "sweep" => done(exp::cmd_sweep(&load_config(&cli)?)?),
        "loo-oracle" => done(exp::cmd_loo_oracle(&load_config(&cli)?)?),
        "early-stop" => done(exp::cmd_early_stop(&load_config(&cli)?)?),
        other => {
            eprintln!("{USAGE}");
            Err(Error::config(format!("unknown command '{other}'")))
        }
    }
}

fn done(dir: std::path::PathBuf) -> Result<(), Error> {
    println!("wrote {}", dir.display());
    Ok(())
}
