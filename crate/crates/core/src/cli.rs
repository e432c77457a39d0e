//! Command-line driver: subcommand dispatch, flag parsing, experiment
//! execution and deterministic output writing.
//!
//! Exit codes: 0 success, 1 acceptance failure (an invariant suite reported
//! violations), 2 fault (bad arguments, config errors, solver faults).

use std::path::PathBuf;

use crate::config::{echo_config, parse_config};
use crate::experiments::{run_experiment, ExperimentKind};
use crate::io::{write_outputs, OutputOptions};

const USAGE: &str = "usage: hjhomog <subcommand> [flags]

subcommands:
  metric        one metric-problem solve (field + slope metadata)
  hbar          effective Hamiltonian over the configured p list
  cell          corrector-rate experiment (|delta v + Hbar| vs delta)
  evolve        homogenization-rate experiment (sup error vs eps)
  fluctuations  variance and tail scaling of m(Re, 0)
  bias          mean-vs-limit scaling with a subadditive proxy
  invariants    the metric invariant suite across replicas
  straszewicz   exposed-point geometry sweep
  softmin-stats soft-min passage statistics

flags:
  --config <path>   config file (sectioned key = value)
  --seed <n>        override [experiment] seed
  --replicas <n>    override [experiment] replicas
  --threads <n>     override [experiment] threads (or HJHOMOG_THREADS)
  --out <dir>       output directory (default runs/<kind>)
  --force           overwrite an existing run directory
  --plot            also emit SVG plots
";

fn subcommand_kind(name: &str) -> Option<ExperimentKind> {
    Some(match name {
        "metric" => ExperimentKind::Metric,
        "hbar" => ExperimentKind::Hbar,
        "cell" => ExperimentKind::CellRate,
        "evolve" => ExperimentKind::EvolveRate,
        "fluctuations" => ExperimentKind::Fluctuations,
        "bias" => ExperimentKind::Bias,
        "invariants" => ExperimentKind::Invariants,
        "straszewicz" => ExperimentKind::Straszewicz,
        "softmin-stats" => ExperimentKind::SoftminStats,
        _ => return None,
    })
}

struct Flags {
    config: Option<PathBuf>,
    seed: Option<u64>,
    replicas: Option<usize>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    force: bool,
    plot: bool,
}

fn parse_flags(args: &[String]) -> Result<Flags, String> {
    let mut flags = Flags {
        config: None,
        seed: None,
        replicas: None,
        threads: None,
        out: None,
        force: false,
        plot: false,
    };
    let mut i = 0;
    while i < args.len() {
        let take_value = |i: &mut usize| -> Result<String, String> {
            *i += 1;
            args.get(*i)
                .cloned()
                .ok_or_else(|| format!("flag {} needs a value", args[*i - 1]))
        };
        match args[i].as_str() {
            "--config" => flags.config = Some(PathBuf::from(take_value(&mut i)?)),
            "--seed" => {
                flags.seed = Some(take_value(&mut i)?.parse().map_err(|_| "bad --seed".to_string())?)
            }
            "--replicas" => {
                flags.replicas =
                    Some(take_value(&mut i)?.parse().map_err(|_| "bad --replicas".to_string())?)
            }
            "--threads" => {
                flags.threads =
                    Some(take_value(&mut i)?.parse().map_err(|_| "bad --threads".to_string())?)
            }
            "--out" => flags.out = Some(PathBuf::from(take_value(&mut i)?)),
            "--force" => flags.force = true,
            "--plot" => flags.plot = true,
            other => return Err(format!("unknown flag `{other}`")),
        }
        i += 1;
    }
    Ok(flags)
}

/// Runs the tool on the given argument list (without the binary name).
pub fn dispatch(args: &[String]) -> i32 {
    let Some(sub) = args.first() else {
        eprint!("{USAGE}");
        return 2;
    };
    let Some(kind) = subcommand_kind(sub) else {
        eprintln!("unknown subcommand `{sub}`");
        eprint!("{USAGE}");
        return 2;
    };
    let flags = match parse_flags(&args[1..]) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            eprint!("{USAGE}");
            return 2;
        }
    };

    let mut cfg = match &flags.config {
        Some(path) => match parse_config(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return 2;
            }
        },
        None => crate::config::default_config(kind),
    };
    if cfg.kind != kind {
        eprintln!(
            "error: config kind `{}` does not match subcommand `{}`",
            cfg.kind.name(),
            sub
        );
        return 2;
    }
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
        cfg.env.seed = seed;
    }
    if let Some(n) = flags.replicas {
        cfg.n_replicas = n;
    }
    if let Some(t) = flags.threads {
        cfg.threads = t;
    } else if let Ok(t) = std::env::var("HJHOMOG_THREADS") {
        if let Ok(t) = t.parse::<usize>() {
            cfg.threads = t;
        }
    }

    let echo = echo_config(&cfg);
    print!("{echo}");
    let record = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    for w in &record.warnings {
        eprintln!("warning: {w}");
    }
    for (name, value) in &record.summary {
        println!("{name} = {value:.6}");
    }
    println!("wall_clock_s = {:.2}", record.wall_clock);

    let out_dir = flags
        .out
        .unwrap_or_else(|| PathBuf::from("runs").join(kind.name()));
    let opts = OutputOptions {
        force: flags.force,
        plot: flags.plot,
        config_echo: echo,
        seed: cfg.seed,
    };
    match write_outputs(&record, &out_dir, &opts) {
        Ok(manifest) => {
            println!("wrote {} files to {}", manifest.files.len() + 1, out_dir.display());
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    }
    match record.pass {
        Some(false) => 1,
        _ => 0,
    }
}
