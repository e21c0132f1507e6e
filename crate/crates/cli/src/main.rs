//! `voldiff` command-line front end.
//!
//! Every subcommand reads an optional JSON config (`--config`), writes its
//! artifacts into the config's `output_dir` (or `--out`), and exits with 2
//! on config errors and 3 on numerical failures.

mod config;
mod error;
mod output;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use config::*;
use error::CliError;
use output::OutDir;

pub const THREADS_ENV: &str = "DIFFDVR_THREADS";

#[derive(Parser, Debug)]
#[command(name = "voldiff", version, about = "Differentiable volume rendering experiments")]
struct Cli {
    /// Worker threads; falls back to DIFFDVR_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render one view of a volume.
    Render(Args),
    /// Compare forward-mode, adjoint and finite-difference gradients.
    Gradcheck(Args),
    /// Best-viewpoint search by entropy ascent.
    Viewpoint(Args),
    /// Transfer-function reconstruction from rendered references.
    TfRecon(Args),
    /// Density reconstruction, absorption-only or emission-absorption.
    DensityRecon(Args),
    /// Pre-shaded color volume reconstruction.
    ColorRecon(Args),
    /// Loss and gradient sweep of the one-dimensional Gaussian example.
    #[command(name = "demo-1d")]
    Demo1d(Args),
    /// Write a synthetic phantom volume.
    Phantom(Args),
}

#[derive(clap::Args, Debug)]
struct Args {
    /// JSON config; defaults are used for missing keys, unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Prints the resolved config and exits.
    #[arg(long)]
    print_config: bool,
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| CliError::Schema(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(CliError::Schema("thread count must be at least 1".into()));
    }
    Ok(n)
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Schema(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", p.display())))
        }
    }
}

trait RunConfig: Serialize + DeserializeOwned + Default {
    fn seed_mut(&mut self) -> &mut u64;
    fn output_dir_mut(&mut self) -> &mut PathBuf;
}

macro_rules! run_config {
    ($($t:ty),*) => {$(
        impl RunConfig for $t {
            fn seed_mut(&mut self) -> &mut u64 {
                &mut self.seed
            }
            fn output_dir_mut(&mut self) -> &mut PathBuf {
                &mut self.output_dir
            }
        }
    )*};
}

run_config!(RenderRun, GradcheckRun, ViewpointRun, TfReconRun, DensityReconRun, ColorReconRun, DemoRun, PhantomRun);

fn execute<T: RunConfig>(args: &Args, f: fn(&T, &mut OutDir) -> Result<(), CliError>) -> Result<(), CliError> {
    let mut cfg: T = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        *cfg.seed_mut() = s;
    }
    if let Some(o) = &args.out {
        *cfg.output_dir_mut() = o.clone();
    }
    if args.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let mut out = OutDir::create(cfg.output_dir_mut())?;
    f(&cfg, &mut out)?;
    out.json("config.json", &cfg)?;
    for name in out.written() {
        println!("{name}");
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = resolve_threads(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Schema(e.to_string()))?;
    }
    match &cli.command {
        Command::Render(a) => execute(a, run::render_cmd),
        Command::Gradcheck(a) => execute(a, run::gradcheck_cmd),
        Command::Viewpoint(a) => execute(a, run::viewpoint_cmd),
        Command::TfRecon(a) => execute(a, run::tf_recon_cmd),
        Command::DensityRecon(a) => execute(a, run::density_recon_cmd),
        Command::ColorRecon(a) => execute(a, run::color_recon_cmd),
        Command::Demo1d(a) => execute(a, run::demo_cmd),
        Command::Phantom(a) => execute(a, run::phantom_cmd),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("voldiff: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
