use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use superchan_cli::{execute, exit_code, load_config, outcome_code, Command};

#[derive(Parser)]
#[command(name = "superchan-cli", about = "Superchannel transceiver experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for training, channel and evaluation streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parallel workers across sweep points.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Pre-train the transceiver to mimic the baseline.
    Pretrain,
    /// Train end to end from the pre-trained start or `checkpoints.eval`.
    Train,
    /// Score the baseline and, if set, the checkpoint in `checkpoints.eval`.
    Eval,
    /// Single-channel SER against drive level.
    VpSweep,
    /// Magnitude responses of the learned pulse shapers.
    Freqresp,
    /// Superchannel SER against guard band.
    Guardband,
    /// SER as trainable blocks are unfrozen.
    Ablation,
    /// Learn the baseline constellation on AWGN.
    BaselineConstellation,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match cli.cmd {
        Cmd::Pretrain => Command::Pretrain,
        Cmd::Train => Command::Train,
        Cmd::Eval => Command::Eval,
        Cmd::VpSweep => Command::VpSweep,
        Cmd::Freqresp => Command::FreqResponse,
        Cmd::Guardband => Command::Guardband,
        Cmd::Ablation => Command::Ablation,
        Cmd::BaselineConstellation => Command::BaselineConstellation,
    };
    let run = load_config(cli.config.as_deref(), cli.seed, cli.out.as_deref(), cli.workers)
        .and_then(|cfg| execute(cmd, &cfg));
    let code = match run {
        Ok(out) => {
            for f in &out.files {
                println!("{}", f.display());
            }
            for e in &out.failures {
                eprintln!("error: {e}");
            }
            outcome_code(&out)
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
