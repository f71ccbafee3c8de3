use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use idbench::config::Config;
use idbench::gallery::{write_binary, write_text};
use idbench::pipeline::write_exam_meta;
use idbench::resample::{read_sig1, resample, write_sig1, FirSpec};
use idbench::runner::{self, has_fatal, RunOptions};
use idbench::synth;

/// Deterministic 1:N identification evaluation over precomputed embeddings.
#[derive(Debug, Parser)]
#[command(name = "idbench", version)]
struct Cli {
    /// Also write per-query outcomes, genuine scores and the impostor tail.
    #[arg(long, global = true)]
    dump_outcomes: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Replace the config's seed list, e.g. `--seed-override 0,1,2`.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_override: Option<Vec<u64>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every protocol in the config and write the report.
    Run { config: PathBuf },
    /// Static feasibility checks; exits nonzero on any fatal diagnostic.
    Validate { config: PathBuf },
    /// Write the synthetic population described by the config's [synth] table.
    Synth {
        config: PathBuf,
        /// Output directory (default: the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write embeddings in the binary format instead of text.
        #[arg(long)]
        binary: bool,
    },
    /// Anti-aliased integer-factor downsampling of a SIG1 signal file.
    Resample {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        target_hz: f64,
        /// Sampling rate of the input (SIG1 does not store it).
        #[arg(long, default_value_t = 1000.0)]
        source_hz: f64,
        #[arg(long, default_value_t = FirSpec::default().taps)]
        taps: usize,
    },
}

fn load(path: &Path, seeds: &Option<Vec<u64>>) -> idbench::Result<Config> {
    let mut cfg = Config::load(path)?;
    if let Some(s) = seeds {
        cfg.run.seeds = s.clone();
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> idbench::Result<ExitCode> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load(&config, &cli.seed_override)?;
            let out = runner::run(
                &cfg,
                RunOptions {
                    dump_outcomes: cli.dump_outcomes,
                },
            )?;
            println!("report written to {}", out.display());
        }
        Command::Validate { config } => {
            let cfg = load(&config, &cli.seed_override)?;
            let diags = runner::validate(&cfg);
            for d in &diags {
                println!("{d}");
            }
            if has_fatal(&diags) {
                return Ok(ExitCode::FAILURE);
            }
            if diags.is_empty() {
                println!("ok");
            }
        }
        Command::Synth {
            config,
            out,
            binary,
        } => {
            let cfg = load(&config, &cli.seed_override)?;
            let sc = cfg
                .synth
                .as_ref()
                .ok_or_else(|| idbench::Error::Config("config has no [synth] table".into()))?;
            let (records, metas) = synth::generate(sc)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir());
            std::fs::create_dir_all(&dir).map_err(|e| idbench::Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            let emb = if binary {
                let p = dir.join("embeddings.bin");
                write_binary(&p, &records)?;
                p
            } else {
                let p = dir.join("embeddings.txt");
                write_text(&p, &records)?;
                p
            };
            let meta = dir.join("exams.tsv");
            write_exam_meta(&meta, &metas)?;
            println!(
                "{} exams of {} subjects: {}, {}",
                records.len(),
                sc.n_subjects,
                emb.display(),
                meta.display()
            );
        }
        Command::Resample {
            input,
            output,
            target_hz,
            source_hz,
            taps,
        } => {
            let signal = read_sig1(&input, source_hz)?;
            let spec = FirSpec {
                taps,
                ..FirSpec::default()
            };
            let out = resample(&signal, target_hz, &spec)?;
            write_sig1(&output, &out)?;
            println!(
                "{} channels, {} -> {} samples ({} Hz -> {} Hz)",
                out.channels.len(),
                signal.n_samples(),
                out.n_samples(),
                source_hz,
                target_hz
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
