//! Flag definitions. Every option is optional so that values from a JSON
//! `--config` file can fill whatever the command line leaves out.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "grpiv", version, about = "Grouped panel IV estimation and simulation")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print more detail to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate grouped coefficients on a panel file.
    ///
    /// Writes estimates.csv (group, coefficient, pre_estimate, pre_se,
    /// post_estimate, post_se, group_size), membership.csv (unit, group) and
    /// manifest.json to --out. Groups are numbered from 1.
    Estimate(EstimateArgs),
    /// Choose the number of groups by an information criterion.
    ///
    /// Writes ic.csv (stage, candidate, fit, penalty, criterion, chosen) and
    /// manifest.json to --out. Stage is `first` for the first-stage K of
    /// tgfe and `second` for G.
    Select(SelectArgs),
    /// Run a Monte Carlo table or a custom grid.
    ///
    /// Writes <name>.csv (cell, dgp, n, t, sigma, mu_pi, sigma_pi, method,
    /// task, reps_ok, reps_failed, mean_ri, mean_pre_hausdorff,
    /// mean_post_hausdorff, pct_g1..pct_g<g_max>, mean_beta, sd_beta),
    /// <name>.txt and manifest.json to --out.
    Replicate(ReplicateArgs),
    /// Draw one simulated panel.
    ///
    /// Writes panel.csv (unit, period, y, x1, z1), truth.csv (unit, group,
    /// pi, rho) and manifest.json to --out.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct DataArgs {
    /// Long-format CSV with one row per (unit, period).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Unit id column [default: unit].
    #[arg(long)]
    pub unit_col: Option<String>,
    /// Period column [default: period].
    #[arg(long)]
    pub period_col: Option<String>,
    /// Outcome column [default: y].
    #[arg(long)]
    pub y_col: Option<String>,
    /// Regressor columns, comma separated [default: x1, x2, ...].
    #[arg(long, value_delimiter = ',')]
    pub x_cols: Option<Vec<String>>,
    /// Instrument columns, comma separated [default: z1, z2, ...].
    #[arg(long, value_delimiter = ',')]
    pub z_cols: Option<Vec<String>>,
    /// Fixed-effect transform: none, within or fd [default: none].
    #[arg(long)]
    pub transform: Option<String>,
    /// Treat the regressors as predetermined: first-difference the panel and
    /// instrument each period with the regressor levels of all earlier
    /// periods, collapsed by a cross-sectional regression per period.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dynamic_iv: Option<bool>,
    /// Group-specific period effects.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub time_effects: Option<bool>,
    /// Random starts of the grouping search [default: 100].
    #[arg(long)]
    pub starts: Option<usize>,
    /// Iteration cap per start [default: 1000].
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Master seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateArgs {
    /// JSON file with any of the options below; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory [default: .].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// 2sls, tgfe, ugfe, ig or rf.
    #[arg(long)]
    pub method: Option<String>,
    /// Second-stage groups G [default: 2].
    #[arg(long)]
    pub groups: Option<usize>,
    /// First-stage groups K (tgfe; period-effect groups for ugfe).
    #[arg(long)]
    pub fs_groups: Option<usize>,
    /// Scale clustered variances by N / (N - 1).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub cr1: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectArgs {
    /// JSON file with any of the options below; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory [default: .].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// 2sls, tgfe, ugfe, ig or rf.
    #[arg(long)]
    pub method: Option<String>,
    /// Largest second-stage G tried [default: 5].
    #[arg(long)]
    pub g_max: Option<usize>,
    /// Largest first-stage K tried [default: 5].
    #[arg(long)]
    pub k_max: Option<usize>,
    /// bm or pcp3 [default: pcp3].
    #[arg(long)]
    pub penalty: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplicateArgs {
    /// JSON file with any of the options below; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory [default: .].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Standard table: 1, 2, 3, c1 or c2.
    #[arg(long, conflicts_with = "grid")]
    pub table: Option<String>,
    /// JSON list of cells ({"dgp": {...}, "methods": [...], "task": ...}).
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Replications per cell [default: 100].
    #[arg(long)]
    pub reps: Option<usize>,
    /// Random starts per estimate [default: 100].
    #[arg(long)]
    pub starts: Option<usize>,
    /// Master seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest G in selection cells [default: 5].
    #[arg(long)]
    pub g_max: Option<usize>,
    /// Largest K in selection cells [default: 5].
    #[arg(long)]
    pub k_max: Option<usize>,
    /// bm or pcp3 [default: pcp3].
    #[arg(long)]
    pub penalty: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    /// JSON file with any of the options below; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory [default: .].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Design: 1, 2, 3, 4 or c1 [default: 1].
    #[arg(long)]
    pub dgp: Option<String>,
    /// Units (even) [default: 100].
    #[arg(long)]
    pub n: Option<usize>,
    /// Periods [default: 20].
    #[arg(long)]
    pub t: Option<usize>,
    /// Instrument and first-stage error scale [default: 0.5].
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Endogeneity correlation [default: -0.5].
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    /// Mean of the first-stage slope in design c1 [default: 1].
    #[arg(long, allow_negative_numbers = true)]
    pub mu_pi: Option<f64>,
    /// SD of the first-stage slope in design c1 [default: 1].
    #[arg(long)]
    pub sigma_pi: Option<f64>,
    /// Seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}
