use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use born_series::bounds::k_from_optical;
use born_series::experiment::commands::default_ka_sweep;
use born_series::experiment::selftest::{run_selftest, SelftestScale};
use born_series::experiment::{
    cmd_forward, cmd_invert, cmd_radii, to_json, Blob, ExperimentConfig, ExperimentError, NormOrder,
};
use born_series::greens::WaveKind;
use born_series::inverse::Regularization;

#[derive(Parser)]
#[command(name = "born-series", version, about = "Forward and inverse Born series experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form convergence radii over a sweep of ka, as CSV.
    Radii {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated ka values (default: 31 log-spaced values in [0.1, 100]).
        #[arg(long, value_delimiter = ',')]
        ka: Vec<f64>,
    },
    /// Direct solve, Born partial sums and the remainder certificate, as JSON.
    Forward {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Synthetic data from the phantom, inverse series and diagnostics, as JSON.
    Invert {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Runs the invariant suite and prints one verdict per check.
    Selftest {
        /// Coarse grid instead of the desk configuration.
        #[arg(long)]
        quick: bool,
        /// Force the named check to fail.
        #[arg(long, value_name = "CHECK")]
        inject_fault: Option<String>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// JSON file with configuration keys; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    mode: Option<WaveKind>,
    #[arg(long)]
    k: Option<f64>,
    /// Background absorption; with --mu-s-prime sets k = sqrt(3 mu_a mu_s').
    #[arg(long, requires = "mu_s_prime", conflicts_with = "k")]
    mu_a: Option<f64>,
    #[arg(long, requires = "mu_a")]
    mu_s_prime: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    omega_radius: Option<f64>,
    /// Lattice spacing.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    n_src: Option<usize>,
    #[arg(long)]
    n_det: Option<usize>,
    /// Norm order in [2, inf]; "inf" is accepted.
    #[arg(long)]
    p: Option<NormOrder>,
    /// Keep this many singular triplets.
    #[arg(long, conflicts_with = "cutoff")]
    rank: Option<usize>,
    /// Keep singular values above this fraction of the largest.
    #[arg(long)]
    cutoff: Option<f64>,
    /// Series order N.
    #[arg(long)]
    order: Option<usize>,
    /// Phantom blob x,y,z,radius,amplitude; repeat for several blobs.
    #[arg(long = "blob", allow_hyphen_values = true)]
    blobs: Vec<Blob>,
    /// Rescale the phantom so that mu_inf ||eta||_inf equals this value.
    #[arg(long)]
    contraction: Option<f64>,
    /// Use the phantom's amplitudes as given.
    #[arg(long, conflicts_with = "contraction")]
    no_contraction: bool,
    /// Project the phantom onto the retained singular subspace.
    #[arg(long)]
    project: bool,
    /// Relative uniform noise amplitude.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the result here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<WaveKind, String> {
    match s {
        "diffuse" => Ok(WaveKind::Diffuse),
        "scalar" => Ok(WaveKind::Scalar),
        other => Err(format!("unknown mode {other:?}, expected diffuse or scalar")),
    }
}

impl CommonArgs {
    fn resolve(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let (Some(mu_a), Some(mu_s)) = (self.mu_a, self.mu_s_prime) {
            cfg.k = k_from_optical(mu_a, mu_s)?;
        }
        if let Some(v) = self.a {
            cfg.a = v;
        }
        if let Some(v) = self.omega_radius {
            cfg.omega_radius = v;
        }
        if let Some(v) = self.h {
            cfg.h = v;
        }
        if let Some(v) = self.n_src {
            cfg.n_src = v;
        }
        if let Some(v) = self.n_det {
            cfg.n_det = v;
        }
        if let Some(v) = self.p {
            cfg.p = v;
        }
        if let Some(r) = self.rank {
            cfg.regularization = Regularization::Rank(r);
        }
        if let Some(t) = self.cutoff {
            cfg.regularization = Regularization::RelativeCutoff(t);
        }
        if let Some(v) = self.order {
            cfg.order = v;
        }
        if !self.blobs.is_empty() {
            cfg.phantom.blobs = self.blobs.clone();
        }
        if let Some(c) = self.contraction {
            cfg.phantom.contraction = Some(c);
        }
        if self.no_contraction {
            cfg.phantom.contraction = None;
        }
        if self.project {
            cfg.phantom.project_to_subspace = true;
        }
        if let Some(v) = self.noise {
            cfg.noise = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = Some(v);
        }
        if let Some(v) = &self.output {
            cfg.output = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(cfg: &ExperimentConfig, text: &str) -> Result<(), ExperimentError> {
    match &cfg.output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Exit status: 0 success, 2 results produced but a hypothesis failed.
fn run(cli: Cli) -> Result<u8, ExperimentError> {
    match cli.command {
        Command::Radii { common, ka } => {
            let cfg = common.resolve()?;
            let sweep = if ka.is_empty() { default_ka_sweep() } else { ka };
            emit(&cfg, &cmd_radii(&cfg, &sweep)?)?;
            Ok(0)
        }
        Command::Forward { common } => {
            let cfg = common.resolve()?;
            let report = cmd_forward(&cfg)?;
            emit(&cfg, &to_json(&report)?)?;
            Ok(if report.hypotheses_hold() { 0 } else { 2 })
        }
        Command::Invert { common } => {
            let cfg = common.resolve()?;
            let report = cmd_invert(&cfg)?;
            emit(&cfg, &to_json(&report)?)?;
            Ok(if report.hypotheses_hold() { 0 } else { 2 })
        }
        Command::Selftest { quick, inject_fault } => {
            let scale = if quick { SelftestScale::Quick } else { SelftestScale::Desk };
            let results = run_selftest(scale, inject_fault.as_deref())?;
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed == 0 {
                println!("selftest: all {} checks passed", results.len());
                Ok(0)
            } else {
                println!("selftest: {failed} of {} checks failed", results.len());
                Ok(1)
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
