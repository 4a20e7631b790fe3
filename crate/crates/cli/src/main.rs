use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlmf_core::io::{pipeline, RunConfig};

#[derive(Parser)]
#[command(name = "nlmf", version, about = "Normalized latent measure factor models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults are used for anything it omits.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set sampler.iterations=2000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic data set with known group densities.
    Simulate(Common),
    /// Run the truncated Gibbs sampler and write the chain directory.
    Fit(Common),
    /// Solve for one unimodular transform per draw.
    Postprocess(Common),
    /// Match the latent measures of every draw to a template draw.
    Align(Common),
    /// Write loadings, scores, importance, densities and WAIC.
    Summarize(Common),
    /// Compare prior moment formulas with simulation.
    PriorAnalyze(Common),
    /// Print the resolved configuration as TOML.
    Config(Common),
}

fn run(cmd: Command) -> nlmf_core::Result<()> {
    let common = match &cmd {
        Command::Simulate(c)
        | Command::Fit(c)
        | Command::Postprocess(c)
        | Command::Align(c)
        | Command::Summarize(c)
        | Command::PriorAnalyze(c)
        | Command::Config(c) => c.clone(),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| nlmf_core::Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    match cmd {
        Command::Simulate(_) => {
            for p in pipeline::simulate(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Fit(_) => {
            let chain = pipeline::fit(&cfg)?;
            println!("wrote {} draws to {}", chain.len(), cfg.paths.run_dir.display());
        }
        Command::Postprocess(_) => {
            let t = pipeline::postprocess(&cfg)?;
            println!("solved {} draws, success rate {:.3}", t.len(), t.success_rate());
        }
        Command::Align(_) => {
            pipeline::align(&cfg)?;
            println!("wrote permutations to {}", pipeline::transforms_path(&cfg).display());
        }
        Command::Summarize(_) => {
            let dir = pipeline::summarize(&cfg)?;
            println!("wrote summaries to {}", dir.display());
        }
        Command::PriorAnalyze(_) => {
            for r in pipeline::prior_analyze(&cfg)? {
                println!("{:<28} formula {:>10.6}  mc {:>10.6} ± {:.6}  z {:>8.2}", r.experiment, r.formula, r.mc, r.se, r.z());
            }
        }
        Command::Config(_) => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
