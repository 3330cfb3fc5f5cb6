mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "spatial-ident", version, about = "Identifiability checks and simulations for spatial confounding models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ModelGraph {
    /// Model spec (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Proximity matrix: dense CSV or `i j [w]` edge list.
    #[arg(long)]
    pub graph: PathBuf,
}

#[derive(Args, Clone)]
pub struct FitArgs {
    /// Directory written by `simulate` (Y.csv, Z.csv, dataset.json).
    #[arg(long)]
    pub data: PathBuf,
    /// Template spec: fixes the family and the values of fixed parameters.
    #[arg(long)]
    pub model: PathBuf,
    /// Overrides the graph recorded in the dataset sidecar.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated parameter names held at their template values.
    #[arg(long, value_delimiter = ',')]
    pub fixed: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Route a spec to its identifiability result and report the conditions.
    Check {
        #[command(flatten)]
        io: ModelGraph,
        /// Relative tolerance for counting distinct eigenvalues.
        #[arg(long)]
        tol_eig: Option<f64>,
        /// Relative tolerance for parameter (in)equalities.
        #[arg(long)]
        tol_param: Option<f64>,
        /// Treat Matérn smoothness parameters as known.
        #[arg(long)]
        known_smoothness: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build an observationally equivalent alternative with a different beta.
    Forge {
        #[command(flatten)]
        io: ModelGraph,
        #[arg(long)]
        construction: String,
        #[arg(long, allow_hyphen_values = true)]
        delta: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        zeta: Option<f64>,
        /// Scale parameter of the fully connected CAR construction.
        #[arg(long)]
        b: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        rho_tilde: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        beta_tilde: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw replicated fields from a spec.
    Simulate {
        #[command(flatten)]
        io: ModelGraph,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-start maximum likelihood.
    Fit(FitArgs),
    /// Profile log-likelihood of beta.
    Profile {
        #[command(flatten)]
        fit: FitArgs,
        /// `lo:hi:steps`.
        #[arg(long, allow_hyphen_values = true)]
        beta_grid: String,
    },
    /// Evaluate special functions.
    Specfun {
        #[command(subcommand)]
        func: SpecfunCommand,
    },
    /// Degrees, components and spectra of a proximity matrix.
    GraphInfo {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        tol_eig: Option<f64>,
    },
    /// CAR conditions on the four six-node example graphs, as CSV.
    Demo {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
pub enum SpecfunCommand {
    /// Modified Bessel function of the second kind.
    BesselK {
        #[arg(long)]
        nu: f64,
        #[arg(long, value_delimiter = ',')]
        x: Vec<f64>,
    },
    /// Matérn correlation.
    Matern {
        #[arg(long)]
        phi: f64,
        #[arg(long)]
        nu: f64,
        #[arg(long, value_delimiter = ',')]
        x: Vec<f64>,
    },
    /// Rank of the design matrix of K covariance functions.
    LinIndep {
        /// exponential, gaussian, spherical, wave or powered_exponential:C
        #[arg(long)]
        family: String,
        #[arg(long, value_delimiter = ',')]
        psi: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        x: Vec<f64>,
        #[arg(long)]
        intercept: bool,
        #[arg(long, default_value_t = 1e-10)]
        rank_tol: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.command {
        Command::Check { io, tol_eig, tol_param, known_smoothness, out } => {
            commands::check(&io, tol_eig, tol_param, known_smoothness, out.as_deref())
        }
        Command::Forge { io, construction, delta, zeta, b, rho_tilde, beta_tilde, out } => {
            let opts = spatial_ident::forge::ForgeOptions {
                delta,
                zeta,
                b,
                rho_tilde,
                beta_tilde,
                ..Default::default()
            };
            commands::forge(&io, &construction, &opts, out.as_deref())
        }
        Command::Simulate { io, replicates, seed, out } => commands::simulate(&io, replicates, seed, &out),
        Command::Fit(args) => commands::fit(&args),
        Command::Profile { fit, beta_grid } => commands::profile(&fit, &beta_grid),
        Command::Specfun { func } => commands::specfun(&func),
        Command::GraphInfo { graph, tol_eig } => commands::graph_info(&graph, tol_eig),
        Command::Demo { out } => commands::demo(out.as_deref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
