use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use daar::data::{split_list, ColumnRoles, InstrumentColumns};
use daar::simulation::{Family, FirstStage};
use daar::{Method, WeightLaw};

#[derive(Debug, Parser)]
#[command(name = "daar", version, about = "Bootstrap Anderson-Rubin inference with many instruments")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads for the numerical kernels (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Flat TOML file of `flag = value` defaults; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test H0: beta = beta0 on a CSV file.
    Test(TestArgs),
    /// Confidence set by inverting a test over a grid of beta0 values.
    Ci(CiArgs),
    /// Report the selected ridge penalty and its diagnostics.
    SelectLambda(SelectArgs),
    /// Monte Carlo size table or power curve.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long, value_name = "CSV")]
    pub data: PathBuf,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub endogenous: String,
    /// Comma-separated control columns.
    #[arg(long, default_value = "")]
    pub controls: String,
    /// `prefix:z_` or a comma-separated list of columns.
    #[arg(long)]
    pub instruments: String,
    /// Append an intercept to the controls.
    #[arg(long)]
    pub intercept: bool,
}

impl DataArgs {
    pub fn roles(&self) -> ColumnRoles {
        ColumnRoles {
            outcome: self.outcome.clone(),
            endogenous: self.endogenous.clone(),
            controls: split_list(&self.controls),
            instruments: InstrumentColumns::parse(&self.instruments),
            add_intercept: self.intercept,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Weights {
    Rademacher,
    Normal,
}

impl From<Weights> for WeightLaw {
    fn from(w: Weights) -> Self {
        match w {
            Weights::Rademacher => WeightLaw::Rademacher,
            Weights::Normal => WeightLaw::StandardNormal,
        }
    }
}

#[derive(Debug, Args)]
pub struct TestingArgs {
    /// bs, jar-std, jar-cf, ar, rjar, bcch or ct.
    #[arg(long, default_value = "bs", value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Bootstrap draws (BS and CT).
    #[arg(long, default_value_t = 2000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "rademacher")]
    pub weights: Weights,
    /// Fix the BS penalty instead of selecting it.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Use lambda = 0 when no penalty meets the leverage constraints.
    #[arg(long)]
    pub lambda_fallback: bool,
    /// Write JSON here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub testing: TestingArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub beta0: f64,
}

#[derive(Debug, Args)]
pub struct CiArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub testing: TestingArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub grid_lo: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub grid_hi: f64,
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
    /// Also write the per-point decisions as CSV.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = daar::regularizer::DEFAULT_GRID_SIZE)]
    pub grid_size: usize,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FamilyArg {
    Dkm,
    Hausman,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FirstStageArg {
    Sparse,
    Dense,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    #[arg(long)]
    pub k: usize,
    /// Concentration parameter (DKM only).
    #[arg(long, default_value_t = 180.0)]
    pub mu2: f64,
    #[arg(long, value_enum, default_value = "sparse")]
    pub first_stage: FirstStageArg,
    /// Sample size (default 100 for DKM, 200 for Hausman).
    #[arg(long)]
    pub n: Option<usize>,
    /// True coefficient (default 1 for DKM, 0 for Hausman).
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    /// Hypothesized coefficient (defaults to the true one).
    #[arg(long, allow_hyphen_values = true)]
    pub beta0: Option<f64>,
    /// Size experiment at beta0 = beta. This is the default without a grid.
    #[arg(long)]
    pub null: bool,
    /// Power curve over these true values, e.g. `0,0.5,1,1.5,2`.
    #[arg(long, allow_hyphen_values = true)]
    pub beta_grid: Option<String>,
    /// Comma-separated methods, or `all`.
    #[arg(long, default_value = "bs")]
    pub tests: String,
    #[arg(long, default_value_t = 2000)]
    pub replications: usize,
    #[arg(long, default_value_t = 2000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output prefix: writes PREFIX.csv and PREFIX.json.
    #[arg(long, value_name = "PREFIX")]
    pub out: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn family(&self) -> Family {
        match self.family {
            FamilyArg::Dkm => Family::Dkm,
            FamilyArg::Hausman => Family::Hausman,
        }
    }

    pub fn first_stage(&self) -> FirstStage {
        match self.first_stage {
            FirstStageArg::Sparse => FirstStage::Sparse,
            FirstStageArg::Dense => FirstStage::Dense,
        }
    }
}
