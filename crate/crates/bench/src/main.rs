use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use brgemm_bench::{parse_layers, resnet50_table, run_suite, weighted_efficiency, weighted_rate, write_csv, SuiteConfig, Workload};
use brgemm_core::activation::Activation;
use brgemm_core::brgemm::KernelConfig;
use brgemm_core::parallel::max_workers;
use clap::{Args, Parser, Subcommand};

/// Benchmark and verify the batch-reduce GEMM primitives.
///
/// Set BRGEMM_TILE_OVERRIDE="m_b,n_b" to force the register tile.
#[derive(Parser)]
#[command(name = "bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// ResNet-50 forward convolutions.
    Conv {
        /// Layer IDs, e.g. "1-20" or "2,4,13-15".
        #[arg(long, default_value = "1-20")]
        layers: String,
        #[command(flatten)]
        common: Common,
    },
    /// LSTM cell forward over a sequence.
    Lstm {
        #[arg(long = "C", default_value_t = 256)]
        c: usize,
        #[arg(long = "K", default_value_t = 256)]
        k: usize,
        #[arg(long = "T", default_value_t = 50)]
        t: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Fully-connected layer.
    Fc {
        #[arg(long = "C", default_value_t = 512)]
        c: usize,
        #[arg(long = "K", default_value_t = 512)]
        k: usize,
        /// identity, relu or sigmoid.
        #[arg(long, default_value = "relu")]
        activation: Activation,
        #[command(flatten)]
        common: Common,
    },
    /// Raw kernel: --minibatch independent batch-reduce calls.
    Brgemm {
        #[arg(long, default_value_t = 64)]
        m: usize,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        k: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        /// Also time batched GEMM into per-pair outputs plus a sum (rounds each
        /// partial product, so it does not meet the --verify tolerance).
        #[arg(long)]
        baseline: bool,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Mini-batch size (conv 28, lstm 168, fc 1344, brgemm 64 calls by default).
    #[arg(long)]
    minibatch: Option<usize>,
    /// Worker threads (default: all).
    #[arg(long)]
    workers: Option<usize>,
    /// Timed iterations per workload.
    #[arg(long, default_value_t = 400)]
    iters: usize,
    /// Check every output against the dense oracle; exit nonzero on mismatch.
    #[arg(long)]
    verify: bool,
    /// Machine peak in GFLOPS, for efficiency reporting.
    #[arg(long)]
    peak_gflops: Option<f64>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Dump inputs and outputs as binary tensors into this directory.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Include layout conversions in the timed region.
    #[arg(long)]
    include_reformat: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    let kernel = KernelConfig::from_env().context("BRGEMM_TILE_OVERRIDE")?;
    let (workload, common, default_n) = match cli.command {
        Command::Conv { layers, common } => {
            let layers = parse_layers(&layers).map_err(anyhow::Error::msg)?;
            (Workload::Conv { layers }, common, 28)
        }
        Command::Lstm { c, k, t, common } => (Workload::Lstm { c, k, t }, common, 168),
        Command::Fc { c, k, activation, common } => (Workload::Fc { c, k, activation }, common, 1344),
        Command::Brgemm {
            m,
            n,
            k,
            batch,
            baseline,
            common,
        } => (Workload::Brgemm { m, n, k, batch, baseline }, common, 64),
    };
    if let Some(p) = common.peak_gflops {
        if !(p > 0.0) {
            bail!("--peak-gflops must be positive");
        }
    }
    let cfg = SuiteConfig {
        workload,
        minibatch: common.minibatch.unwrap_or(default_n),
        workers: common.workers.unwrap_or_else(max_workers),
        iters: common.iters,
        verify: common.verify,
        include_reformat: common.include_reformat,
        seed: common.seed,
        dump: common.dump,
        kernel,
    };
    let results = run_suite(&cfg)?;

    match &common.csv {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(&results, file)?;
        }
        None => write_csv(&results, std::io::stdout().lock())?,
    }

    if cfg.iters > 0 {
        for r in &results {
            eprintln!(
                "{} {:>2}: {:9.3} ms mean, {:9.3} ms min, {:8.2} GFLOPS",
                r.workload,
                r.id,
                r.seconds_mean * 1e3,
                r.seconds_min * 1e3,
                r.rate() / 1e9
            );
        }
        if let Workload::Conv { .. } = cfg.workload {
            let table = resnet50_table();
            let weighted: Vec<_> = results
                .iter()
                .map(|r| (r.clone(), table[r.id - 1].count))
                .collect();
            eprintln!("weighted rate: {:.2} GFLOPS", weighted_rate(&weighted)? / 1e9);
            if let Some(p) = common.peak_gflops {
                eprintln!("weighted efficiency: {:.1}%", 100.0 * weighted_efficiency(&weighted, p * 1e9)?);
            }
        } else if let Some(p) = common.peak_gflops {
            for r in &results {
                eprintln!("{} efficiency: {:.1}%", r.workload, 100.0 * r.rate() / (p * 1e9));
            }
        }
    }

    let failed: Vec<_> = results.iter().filter(|r| r.verified == Some(false)).collect();
    for r in &failed {
        eprintln!("verification failed: {} {}", r.workload, r.id);
    }
    Ok(failed.is_empty())
}
