use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bridgelab::config::RunConfig;
use bridgelab::harness::{self, RunContext, SampleOptions};
use bridgelab::training::Variant;
use bridgelab::{par, Error, Result};

/// Train, sample and diagnose desk-scale diffusion bridges on toy tasks.
#[derive(Parser)]
#[command(name = "bridgelab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the posterior-mean network M(x1) ≈ E[x0 | x1].
    TrainMean(Common),
    /// Train the bridge regressor of the selected variant.
    TrainBridge(Common),
    /// Restore the held-out split with a trained regressor.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Use the exact target with the clean sample revealed.
        #[arg(long)]
        oracle: bool,
        /// Also write the trajectory of the first held-out row.
        #[arg(long)]
        trajectory: bool,
    },
    /// Noise curves, endpoint probe, mean-network W2 check and metrics.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        oracle: bool,
    },
    /// Train and evaluate the aligned bridge for several exponents.
    SweepAlpha {
        #[command(flatten)]
        common: Common,
        /// Comma-separated exponents, e.g. `0.2,0.4,0.6`.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        alphas: Vec<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    nfe: Option<usize>,
    /// i2sb, nadb, i2sb-mean or nadb-nomean.
    #[arg(long)]
    variant: Option<Variant>,
    /// Bridge regressor checkpoint (default: <out>/bridge_<variant>.brlb).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Mean network checkpoint (default: <out>/mean.brlb).
    #[arg(long)]
    mean_checkpoint: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn context(&self) -> Result<RunContext> {
        let mut cfg = match &self.config {
            Some(p) if !p.exists() => return Err(Error::MissingFile(p.clone())),
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(nfe) = self.nfe {
            cfg.nfe = nfe;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
            cfg.kind = v.kind();
        }
        RunContext::new(cfg, &self.out)
    }

    fn options(&self) -> SampleOptions {
        SampleOptions {
            checkpoint: self.checkpoint.clone(),
            mean_checkpoint: self.mean_checkpoint.clone(),
            ..Default::default()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainMean(c) => {
            let ctx = c.context()?;
            let s = harness::train_mean(&ctx)?;
            println!("mean network: {} (final loss {:.6})", s.checkpoint.display(), s.final_loss);
            println!(
                "W2 before/after: {:.6} / {:.6} (se {:.2e})",
                s.endpoint_w2.w2_before, s.endpoint_w2.w2_after, s.endpoint_w2.w2_after_se
            );
        }
        Command::TrainBridge(c) => {
            let ctx = c.context()?;
            let s = harness::train_bridge(&ctx, c.mean_checkpoint.as_deref())?;
            println!("bridge: {} (final loss {:.6})", s.checkpoint.display(), s.final_loss);
            println!("log: {}", s.log.display());
        }
        Command::Sample {
            common,
            oracle,
            trajectory,
        } => {
            let ctx = common.context()?;
            let opts = SampleOptions {
                oracle,
                trajectory,
                ..common.options()
            };
            let s = harness::sample(&ctx, &opts)?;
            println!("samples: {}", s.samples.display());
            println!("mse {:.6} psnr {:.3} (input mse {:.6})", s.mse, s.psnr, s.input_mse);
        }
        Command::Diagnose { common, oracle } => {
            let ctx = common.context()?;
            let opts = SampleOptions {
                oracle,
                ..common.options()
            };
            let d = harness::diagnose(&ctx, &opts)?;
            for f in &d.files {
                println!("wrote {}", f.display());
            }
        }
        Command::SweepAlpha { common, alphas } => {
            let ctx = common.context()?;
            let (rows, path) = harness::sweep_alpha(&ctx, &alphas)?;
            for r in &rows {
                println!("alpha {:<6} loss {:.6} mse {:.6} psnr {:.3}", r.alpha, r.final_loss, r.mse, r.psnr);
            }
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    par::init_threads_from_env();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
