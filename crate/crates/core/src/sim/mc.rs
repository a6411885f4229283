//! Monte Carlo driver.
//!
//! Every replication derives its own keys from
//! `(master_seed, cell index, replication, role)`, so results do not depend
//! on the parallel schedule. Per-replication outcomes are collected in order
//! and aggregated sequentially.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate, post_iv_coefficients, EstimatorConfig, Method};
use crate::gfe::GfeOptions;
use crate::metrics::{hausdorff, rand_index};
use crate::panel::{GroupTruth, PanelData};
use crate::rng::derive_seed;
use crate::selection::{select_groups, Penalty, SelectionOptions};

use super::dgp::{gen_dgp, DgpConfig, DgpId};

/// Estimator variants compared in the simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McMethod {
    Ig,
    #[serde(rename = "2sls")]
    TwoSls,
    /// TGFE with two first-stage groups (the first-stage count is selected
    /// in selection experiments).
    Tgfe2,
    /// TGFE with `N / 4` first-stage groups.
    TgfeQuarter,
    Ugfe,
    Rf,
}

impl McMethod {
    pub const ALL: [McMethod; 6] = [
        McMethod::Ig,
        McMethod::TwoSls,
        McMethod::Tgfe2,
        McMethod::TgfeQuarter,
        McMethod::Ugfe,
        McMethod::Rf,
    ];

    pub fn method(self) -> Method {
        match self {
            McMethod::Ig => Method::Ig,
            McMethod::TwoSls => Method::TwoSls,
            McMethod::Tgfe2 | McMethod::TgfeQuarter => Method::Tgfe,
            McMethod::Ugfe => Method::Ugfe,
            McMethod::Rf => Method::Rf,
        }
    }

    pub fn fs_groups(self, n: usize) -> Option<usize> {
        match self {
            McMethod::Tgfe2 => Some(2),
            McMethod::TgfeQuarter => Some((n / 4).max(1)),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            McMethod::Ig => "IG",
            McMethod::TwoSls => "2SLS",
            McMethod::Tgfe2 => "TGFE_2",
            McMethod::TgfeQuarter => "TGFE_N/4",
            McMethod::Ugfe => "UGFE",
            McMethod::Rf => "RF",
        }
    }

    fn key(self) -> &'static str {
        match self {
            McMethod::Ig => "ig",
            McMethod::TwoSls => "2sls",
            McMethod::Tgfe2 => "tgfe2",
            McMethod::TgfeQuarter => "tgfe_quarter",
            McMethod::Ugfe => "ugfe",
            McMethod::Rf => "rf",
        }
    }
}

impl fmt::Display for McMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for McMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        McMethod::ALL
            .into_iter()
            .find(|m| m.key() == s || m.label().to_ascii_lowercase() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown simulation method `{s}`")))
    }
}

/// What is measured in a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McTask {
    /// Two-group estimation: Rand index and Hausdorff distances.
    Classify,
    /// Frequency of each selected `G` in `1..=g_max`.
    Select,
    /// One-group estimation: mean and standard deviation of the estimate.
    Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    /// Design; its `seed` is replaced by the derived per-replication key.
    pub dgp: DgpConfig,
    pub methods: Vec<McMethod>,
    pub task: McTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McSpec {
    pub cells: Vec<McCell>,
    pub n_reps: usize,
    pub n_starts: usize,
    pub master_seed: u64,
    pub max_iter: usize,
    pub g_max: usize,
    pub k_max: usize,
    pub penalty: Penalty,
}

impl Default for McSpec {
    fn default() -> Self {
        McSpec {
            cells: Vec::new(),
            n_reps: 100,
            n_starts: 100,
            master_seed: 0,
            max_iter: 1000,
            g_max: 5,
            k_max: 5,
            penalty: Penalty::Pcp3,
        }
    }
}

/// Aggregates for one (cell, method) pair. Means are `None` when no
/// replication produced the quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub cell: usize,
    pub dgp: DgpId,
    pub n: usize,
    pub t: usize,
    pub sigma: f64,
    pub mu_pi: f64,
    pub sigma_pi: f64,
    pub method: McMethod,
    pub task: McTask,
    pub reps_ok: usize,
    pub reps_failed: usize,
    pub mean_ri: Option<f64>,
    pub mean_pre_hausdorff: Option<f64>,
    pub mean_post_hausdorff: Option<f64>,
    /// Percent of successful replications choosing `G = 1, 2, ...`.
    pub select_freq: Vec<f64>,
    pub mean_beta: Option<f64>,
    pub sd_beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub rows: Vec<McRow>,
    pub n_reps: usize,
    pub n_starts: usize,
    pub master_seed: u64,
    pub g_max: usize,
}

impl McReport {
    pub fn row(&self, dgp: DgpId, n: usize, t: usize, sigma: f64, method: McMethod) -> Option<&McRow> {
        self.rows
            .iter()
            .find(|r| r.dgp == dgp && r.n == n && r.t == t && r.sigma == sigma && r.method == method)
    }
}

#[derive(Debug, Clone, Default)]
struct Outcome {
    ri: Option<f64>,
    pre_h: Option<f64>,
    post_h: Option<f64>,
    chosen_g: Option<usize>,
    beta: Option<f64>,
}

const ROLE_DATA: u64 = 1;
const ROLE_METHOD: u64 = 2;

fn run_method(
    p: &PanelData,
    truth: &GroupTruth,
    method: McMethod,
    task: McTask,
    spec: &McSpec,
    seed: u64,
) -> Result<Outcome> {
    let gfe = GfeOptions {
        n_starts: spec.n_starts,
        max_iter: spec.max_iter,
        seed,
        ..GfeOptions::default()
    };
    match task {
        McTask::Select => {
            let opts = SelectionOptions {
                penalty: spec.penalty,
                g_max: spec.g_max,
                k_max: spec.k_max,
                time_effects: false,
                gfe,
            };
            let sel = select_groups(p, method.method(), &opts)?;
            Ok(Outcome {
                chosen_g: Some(sel.g()),
                ..Default::default()
            })
        }
        McTask::Classify | McTask::Moments => {
            let g = if task == McTask::Classify { truth.beta.len() } else { 1 };
            let cfg = EstimatorConfig {
                method: method.method(),
                n_groups: g,
                fs_groups: method.fs_groups(p.n_units()),
                gfe,
                ..Default::default()
            };
            let res = estimate(p, &cfg)?;
            if task == McTask::Moments {
                let b = match &res.pre {
                    Some(pre) => pre.estimate[0][0],
                    None => post_iv_coefficients(p, res.grouping(), false)?[0][0],
                };
                return Ok(Outcome {
                    beta: Some(b),
                    ..Default::default()
                });
            }
            let ri = rand_index(res.grouping(), &truth.grouping)?;
            let pre_h = match &res.pre {
                Some(pre) => Some(hausdorff(&pre.estimate, &truth.beta, None)?),
                None => None,
            };
            // a singular within-group IV leaves the post-estimate missing
            let post_h = match post_iv_coefficients(p, res.grouping(), false) {
                Ok(b) => Some(hausdorff(&b, &truth.beta, None)?),
                Err(e) if e.is_numerical() => None,
                Err(e) => return Err(e),
            };
            Ok(Outcome {
                ri: Some(ri),
                pre_h,
                post_h,
                ..Default::default()
            })
        }
    }
}

/// One replication of one cell: every method on the same draw; a method
/// that fails numerically is retried once on a perturbed draw.
fn run_rep(spec: &McSpec, cell_idx: usize, cell: &McCell, rep: usize) -> Result<Vec<Option<Outcome>>> {
    let key = |attempt: u64, role: u64, extra: u64| {
        derive_seed(&[spec.master_seed, cell_idx as u64, rep as u64, attempt, role, extra])
    };
    let draw = |attempt: u64| {
        gen_dgp(&DgpConfig {
            seed: key(attempt, ROLE_DATA, 0),
            ..cell.dgp.clone()
        })
    };
    let (panel, truth) = draw(0)?;
    let mut retry: Option<(PanelData, GroupTruth)> = None;
    let mut out = Vec::with_capacity(cell.methods.len());
    for (j, &m) in cell.methods.iter().enumerate() {
        match run_method(&panel, &truth, m, cell.task, spec, key(0, ROLE_METHOD, j as u64)) {
            Ok(o) => out.push(Some(o)),
            Err(e) if e.is_numerical() => {
                if retry.is_none() {
                    retry = Some(draw(1)?);
                }
                let (p2, t2) = retry.as_ref().expect("retry draw");
                match run_method(p2, t2, m, cell.task, spec, key(1, ROLE_METHOD, j as u64)) {
                    Ok(o) => out.push(Some(o)),
                    Err(e) if e.is_numerical() => out.push(None),
                    Err(e) => return Err(e),
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v)?;
    Some((v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

/// Run every cell of `spec` for `n_reps` replications.
pub fn run_monte_carlo(spec: &McSpec) -> Result<McReport> {
    if spec.cells.is_empty() {
        return Err(Error::InvalidInput("empty simulation grid".into()));
    }
    if spec.n_reps == 0 || spec.n_starts == 0 {
        return Err(Error::InvalidInput("n_reps and n_starts must be >= 1".into()));
    }
    for cell in &spec.cells {
        cell.dgp.validate()?;
        if cell.methods.is_empty() {
            return Err(Error::InvalidInput("a simulation cell lists no methods".into()));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..spec.cells.len())
        .flat_map(|c| (0..spec.n_reps).map(move |r| (c, r)))
        .collect();
    let results: Vec<Result<Vec<Option<Outcome>>>> = jobs
        .par_iter()
        .map(|&(c, r)| run_rep(spec, c, &spec.cells[c], r))
        .collect();

    let mut per_cell: Vec<Vec<Vec<Option<Outcome>>>> = vec![Vec::new(); spec.cells.len()];
    for ((c, _), res) in jobs.iter().zip(results) {
        per_cell[*c].push(res?);
    }

    let mut rows = Vec::new();
    for (c, cell) in spec.cells.iter().enumerate() {
        for (j, &m) in cell.methods.iter().enumerate() {
            let outcomes: Vec<&Outcome> = per_cell[c].iter().filter_map(|rep| rep[j].as_ref()).collect();
            let collect = |f: fn(&Outcome) -> Option<f64>| outcomes.iter().filter_map(|o| f(o)).collect::<Vec<f64>>();
            let ok = outcomes.len();
            let select_freq = if cell.task == McTask::Select {
                (1..=spec.g_max)
                    .map(|g| {
                        let hits = outcomes.iter().filter(|o| o.chosen_g == Some(g)).count();
                        if ok == 0 {
                            0.0
                        } else {
                            100.0 * hits as f64 / ok as f64
                        }
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let betas = collect(|o| o.beta);
            rows.push(McRow {
                cell: c,
                dgp: cell.dgp.dgp,
                n: cell.dgp.n,
                t: cell.dgp.t,
                sigma: cell.dgp.sigma,
                mu_pi: cell.dgp.mu_pi,
                sigma_pi: cell.dgp.sigma_pi,
                method: m,
                task: cell.task,
                reps_ok: ok,
                reps_failed: spec.n_reps - ok,
                mean_ri: mean(&collect(|o| o.ri)),
                mean_pre_hausdorff: mean(&collect(|o| o.pre_h)),
                mean_post_hausdorff: mean(&collect(|o| o.post_h)),
                select_freq,
                mean_beta: mean(&betas),
                sd_beta: sd(&betas),
            });
        }
    }
    Ok(McReport {
        rows,
        n_reps: spec.n_reps,
        n_starts: spec.n_starts,
        master_seed: spec.master_seed,
        g_max: spec.g_max,
    })
}
