//! Information criteria for the number of first-stage (`K`) and second-stage
//! (`G`) groups.
//!
//! `IC(c) = SSR(c) / NT + sigma2 * pen(c) / NT`, where `SSR` is the stage's
//! residual sum of squares, `sigma2` is the residual variance of the fit at
//! the largest candidate, and `pen` is one of the penalties below. The
//! second-stage criterion uses the residuals `y - x_hat' beta` of the
//! second-stage fit, not structural residuals.

use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{first_stage_seed, second_stage_seed, Method};
use crate::first_stage::{fs_grouped, fs_pooled, fs_unit_specific};
use crate::gfe::{gfe_fit, GfeOptions};
use crate::panel::PanelData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    /// `(m d K + N) log(NT)`
    Bm,
    /// `K log(min(N, T)) NT / min(N, T)`
    #[default]
    Pcp3,
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Penalty::Bm => "bm",
            Penalty::Pcp3 => "pcp3",
        })
    }
}

impl FromStr for Penalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bm" => Ok(Penalty::Bm),
            "pcp3" => Ok(Penalty::Pcp3),
            other => Err(Error::InvalidInput(format!("unknown penalty `{other}` (expected bm or pcp3)"))),
        }
    }
}

/// Penalty before multiplication by `sigma2`. Second-stage criteria pass
/// `m = 1` and the regressor width as `d`.
pub fn penalty(name: Penalty, n: usize, t: usize, d: usize, m: usize, count: usize) -> f64 {
    let (nf, tf) = (n as f64, t as f64);
    match name {
        Penalty::Bm => ((m * d * count) as f64 + nf) * (nf * tf).ln(),
        Penalty::Pcp3 => {
            let small = nf.min(tf);
            count as f64 * small.ln() * nf * tf / small
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ICResult {
    pub candidates: Vec<usize>,
    pub criterion: Vec<f64>,
    /// `SSR / NT` per candidate.
    pub fit: Vec<f64>,
    pub chosen: usize,
    pub sigma2_hat: f64,
    pub penalty: Penalty,
}

impl ICResult {
    fn build(candidates: Vec<usize>, fit: Vec<f64>, pen: Vec<f64>, sigma2_hat: f64, n_t: f64, penalty: Penalty) -> Self {
        let criterion: Vec<f64> = fit.iter().zip(&pen).map(|(f, c)| f + sigma2_hat * c / n_t).collect();
        ICResult {
            chosen: argmin(&candidates, &criterion),
            candidates,
            criterion,
            fit,
            sigma2_hat,
            penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub penalty: Penalty,
    pub g_max: usize,
    pub k_max: usize,
    pub time_effects: bool,
    pub gfe: GfeOptions,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions {
            penalty: Penalty::Pcp3,
            g_max: 5,
            k_max: 5,
            time_effects: false,
            gfe: GfeOptions::default(),
        }
    }
}

/// Choose `K` for the grouped first stage over `1..=k_max`.
pub fn select_k_first_stage(p: &PanelData, opts: &SelectionOptions) -> Result<ICResult> {
    if opts.k_max == 0 {
        return Err(Error::InvalidInput("k_max must be >= 1".into()));
    }
    let (n, t, d, m) = p.dims();
    let fs_opts = GfeOptions {
        seed: first_stage_seed(opts.gfe.seed),
        ..opts.gfe.clone()
    };
    let candidates: Vec<usize> = (1..=opts.k_max).collect();
    let fit = candidates
        .par_iter()
        .map(|&k| fs_grouped(p, k, &fs_opts, opts.time_effects).map(|f| f.objective()))
        .collect::<Result<Vec<f64>>>()?;
    let pen = candidates
        .iter()
        .map(|&k| penalty(opts.penalty, n, t, d, m, k))
        .collect();
    let sigma2 = fit[fit.len() - 1];
    Ok(ICResult::build(candidates, fit, pen, sigma2, (n * t) as f64, opts.penalty))
}

/// Second-stage regressors of `method` with `k` first-stage groups.
fn second_stage_regressors(p: &PanelData, method: Method, k: Option<usize>, opts: &SelectionOptions) -> Result<Array3<f64>> {
    let fs_opts = GfeOptions {
        seed: first_stage_seed(opts.gfe.seed),
        ..opts.gfe.clone()
    };
    let te = opts.time_effects;
    Ok(match method {
        Method::Ig => p.x().clone(),
        Method::Rf => p.z().clone(),
        Method::TwoSls => fs_pooled(p, &fs_opts, te)?.x_hat,
        Method::Tgfe => {
            let k = k.ok_or_else(|| Error::InvalidInput("tgfe selection needs K".into()))?;
            fs_grouped(p, k, &fs_opts, te)?.x_hat
        }
        Method::Ugfe => fs_unit_specific(p, te, k, &fs_opts)?.x_hat,
    })
}

fn second_stage_ssr(p: &PanelData, w: &Array3<f64>, candidates: &[usize], opts: &SelectionOptions) -> Result<Vec<f64>> {
    candidates
        .par_iter()
        .map(|&g| {
            let o = GfeOptions {
                n_groups: g,
                time_effects: opts.time_effects,
                seed: second_stage_seed(opts.gfe.seed),
                ..opts.gfe.clone()
            };
            gfe_fit(p.y(), w, &o).map(|f| f.objective)
        })
        .collect()
}

/// Choose `G` over `1..=g_max` for `method`. For TGFE, `k` is the
/// first-stage group count used for the candidate fits and `sigma2` comes
/// from the `(g_max, k_max)` fit; UGFE with period effects uses `k` for the
/// first-stage effects.
pub fn select_g_second_stage(
    p: &PanelData,
    method: Method,
    k: Option<usize>,
    opts: &SelectionOptions,
) -> Result<ICResult> {
    if opts.g_max == 0 {
        return Err(Error::InvalidInput("g_max must be >= 1".into()));
    }
    let (n, t) = (p.n_units(), p.n_periods());
    let w = second_stage_regressors(p, method, k, opts)?;
    let width = w.dim().2;
    let candidates: Vec<usize> = (1..=opts.g_max).collect();
    let fit = second_stage_ssr(p, &w, &candidates, opts)?;
    let sigma2 = if method == Method::Tgfe && k != Some(opts.k_max) {
        let w_max = second_stage_regressors(p, method, Some(opts.k_max), opts)?;
        second_stage_ssr(p, &w_max, &[opts.g_max], opts)?[0]
    } else {
        fit[fit.len() - 1]
    };
    let pen = candidates
        .iter()
        .map(|&g| penalty(opts.penalty, n, t, width, 1, g))
        .collect();
    Ok(ICResult::build(candidates, fit, pen, sigma2, (n * t) as f64, opts.penalty))
}

fn argmin(candidates: &[usize], criterion: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in criterion.iter().enumerate() {
        if *v < criterion[best] {
            best = j;
        }
    }
    candidates[best]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub method: Method,
    /// First-stage criterion (TGFE only).
    pub first_stage: Option<ICResult>,
    pub second_stage: ICResult,
}

impl Selection {
    pub fn g(&self) -> usize {
        self.second_stage.chosen
    }

    pub fn k(&self) -> Option<usize> {
        self.first_stage.as_ref().map(|ic| ic.chosen)
    }
}

/// Sequential selection: for TGFE first `K_hat`, then `G_hat(K_hat)`; for
/// UGFE with period effects the effects use `k_max` groups; other methods
/// select `G` only.
pub fn select_groups(p: &PanelData, method: Method, opts: &SelectionOptions) -> Result<Selection> {
    let (first_stage, k) = match method {
        Method::Tgfe => {
            let ic = select_k_first_stage(p, opts)?;
            let k = ic.chosen;
            (Some(ic), Some(k))
        }
        Method::Ugfe if opts.time_effects => (None, Some(opts.k_max)),
        _ => (None, None),
    };
    let second_stage = select_g_second_stage(p, method, k, opts)?;
    Ok(Selection {
        method,
        first_stage,
        second_stage,
    })
}
