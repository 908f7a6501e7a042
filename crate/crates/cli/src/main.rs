mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Settings;

/// Search transformation parameters for worst-case margins of image
/// classifiers, or run the optimiser on closed-form test functions.
#[derive(Parser, Debug)]
#[command(name = "geoverify", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Minimise a closed-form test function and write its trace.
    Optimize(OptimizeArgs),
    /// Search each image's transformation box and report verdicts.
    Verify(VerifyArgs),
    /// Compare the optimiser with grid-search and random-pick oracles.
    Compare(CompareArgs),
    /// Write the synthetic fixture model, images, labels and a config.
    Fixture(FixtureArgs),
}

#[derive(Args, Debug, Default)]
struct SearchArgs {
    /// `key = value` config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Maximum trisections per dimension (D).
    #[arg(long)]
    depth: Option<u32>,
    /// Candidates per size group (α).
    #[arg(long)]
    alpha: Option<usize>,
    /// Relative improvement tolerance (τ).
    #[arg(long)]
    tau: Option<f64>,
    /// Iteration budget (T).
    #[arg(long)]
    max_iters: Option<usize>,
    /// Query budget (Q).
    #[arg(long)]
    max_queries: Option<usize>,
    /// Known Lipschitz constant; switches the lower bound to certified mode.
    #[arg(long)]
    lipschitz: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    /// Test function: abs1d, separable-abs-nd, quadratic-bowl, multi-basin.
    #[arg(long = "fn")]
    function: Option<String>,
    /// Search box, one `lo,hi` per dimension (repeat, or give one with --dim).
    #[arg(long, allow_hyphen_values = true)]
    bounds: Vec<String>,
    /// Dimension for functions that support several.
    #[arg(long)]
    dim: Option<usize>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Weight file.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Image list (one path per line, relative to the list) or a directory.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Label file, one zero-based class index per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Rotation range γ: angles in [-γ, γ] degrees.
    #[arg(long)]
    rotation: Option<f64>,
    /// Scaling range λ: factors in [1-λ, 1+λ].
    #[arg(long)]
    scale: Option<f64>,
    /// Translation ranges `a,b`: [-a, a] × [-b, b] pixels.
    #[arg(long)]
    translate: Option<String>,
    /// Matrix form: `cosine-scaled` (default) or `composed`.
    #[arg(long)]
    matrix: Option<String>,
    /// Report examples with clean margin ≤ 0 as clean errors without searching.
    #[arg(long)]
    skip_misclassified: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Grid points per dimension, endpoints included.
    #[arg(long)]
    oracle_grid: Option<usize>,
    /// Cap on total grid points; the per-dimension count shrinks to fit.
    #[arg(long)]
    oracle_grid_cap: Option<usize>,
    /// Random-pick samples.
    #[arg(long)]
    oracle_random: Option<usize>,
    /// Random-pick seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Tolerance of the match rule `method ≤ grid + tol`.
    #[arg(long)]
    match_tol: Option<f64>,
}

#[derive(Args, Debug)]
struct FixtureArgs {
    /// Directory to write into.
    #[arg(long)]
    out: PathBuf,
    /// Number of images.
    #[arg(long, default_value_t = 60)]
    count: usize,
    /// Image generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn base_settings(search: &SearchArgs) -> anyhow::Result<Settings> {
    let mut s = match &search.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    macro_rules! overlay {
        ($($key:literal => $value:expr),* $(,)?) => {
            $(if let Some(v) = &$value { s.set($key, v.to_string()); })*
        };
    }
    overlay! {
        "depth" => search.depth,
        "alpha" => search.alpha,
        "tau" => search.tau,
        "max-iters" => search.max_iters,
        "max-queries" => search.max_queries,
        "lipschitz" => search.lipschitz,
    }
    if let Some(out) = &search.out {
        s.set("out", out.display());
    }
    Ok(s)
}

fn data_settings(s: &mut Settings, data: &DataArgs) {
    for (key, value) in [("weights", &data.weights), ("images", &data.images), ("labels", &data.labels)] {
        if let Some(v) = value {
            s.set(key, v.display());
        }
    }
    if let Some(v) = data.rotation {
        s.set("rotation", v);
    }
    if let Some(v) = data.scale {
        s.set("scale", v);
    }
    if let Some(v) = &data.translate {
        s.set("translate", v);
    }
    if let Some(v) = &data.matrix {
        s.set("matrix", v);
    }
    if data.skip_misclassified {
        s.set("skip-misclassified", true);
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Optimize(args) => {
            let mut s = base_settings(&args.search)?;
            if let Some(f) = &args.function {
                s.set("fn", f);
            }
            if !args.bounds.is_empty() {
                s.set("bounds", args.bounds.join(";"));
            }
            if let Some(d) = args.dim {
                s.set("dim", d);
            }
            commands::optimize(s)
        }
        Command::Verify(args) => {
            let mut s = base_settings(&args.search)?;
            data_settings(&mut s, &args.data);
            commands::verify(s)
        }
        Command::Compare(args) => {
            let mut s = base_settings(&args.search)?;
            data_settings(&mut s, &args.data);
            if let Some(v) = args.oracle_grid {
                s.set("oracle-grid", v);
            }
            if let Some(v) = args.oracle_grid_cap {
                s.set("oracle-grid-cap", v);
            }
            if let Some(v) = args.oracle_random {
                s.set("oracle-random", v);
            }
            if let Some(v) = args.seed {
                s.set("seed", v);
            }
            if let Some(v) = args.match_tol {
                s.set("match-tol", v);
            }
            commands::compare(s)
        }
        Command::Fixture(args) => commands::fixture(&args.out, args.count, args.seed),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
