//! End-to-end estimators: 2SLS, TGFE and UGFE (first stage, then grouped
//! fixed effects of `y` on the fitted regressors), IG (grouped fixed effects
//! of `y` on `x`) and RF (grouped fixed effects of `y` on `z`).
//!
//! Each result carries pre-estimates (the second-stage coefficients with
//! unit-clustered standard errors) and post-estimates (separate IV
//! regressions inside each estimated group).

mod gmm;
mod inference;

use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

pub use gmm::{
    group_moments, just_identified_beta, naive_gmm_objective, per_unit_gmm_objective, pseudo_true_beta,
    GmmWeighting,
};
pub use inference::{clustered_se_pre, post_iv_by_group, post_iv_coefficients, GroupCoefficients};

use crate::error::{Error, Result};
use crate::first_stage::{fs_grouped, fs_pooled, fs_unit_specific, FirstStageFit};
use crate::gfe::{gfe_fit, GfeOptions, GroupedLinearFit};
use crate::panel::{Grouping, PanelData, Transform};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "2sls")]
    TwoSls,
    #[serde(rename = "tgfe")]
    Tgfe,
    #[serde(rename = "ugfe")]
    Ugfe,
    #[serde(rename = "ig")]
    Ig,
    #[serde(rename = "rf")]
    Rf,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ig, Method::TwoSls, Method::Tgfe, Method::Ugfe, Method::Rf];

    pub fn name(self) -> &'static str {
        match self {
            Method::TwoSls => "2sls",
            Method::Tgfe => "tgfe",
            Method::Ugfe => "ugfe",
            Method::Ig => "ig",
            Method::Rf => "rf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown method `{s}` (expected 2sls, tgfe, ugfe, ig or rf)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub method: Method,
    /// Second-stage groups `G`.
    pub n_groups: usize,
    /// First-stage groups `K` for TGFE; groups of the period effects for
    /// UGFE with time effects.
    pub fs_groups: Option<usize>,
    pub time_effects: bool,
    pub transform: Transform,
    /// Scale clustered variances by `N / (N - 1)`.
    pub cr1: bool,
    /// Restart and iteration settings; `n_groups` and `time_effects` in here
    /// are overridden per stage.
    pub gfe: GfeOptions,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            method: Method::TwoSls,
            n_groups: 2,
            fs_groups: None,
            time_effects: false,
            transform: Transform::None,
            cr1: false,
            gfe: GfeOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub method: Method,
    pub first_stage: Option<FirstStageFit>,
    pub second_stage: GroupedLinearFit,
    /// Second-stage coefficients with clustered SEs; absent for RF, whose
    /// second-stage coefficients are reduced-form and live in
    /// `second_stage.beta`.
    pub pre: Option<GroupCoefficients>,
    pub post: Option<GroupCoefficients>,
    /// Why post-estimates are missing (e.g. a singleton group).
    pub post_error: Option<String>,
    pub group_sizes: Vec<usize>,
    pub config: EstimatorConfig,
}

impl EstimationResult {
    pub fn grouping(&self) -> &Grouping {
        &self.second_stage.grouping
    }

    pub fn n_groups(&self) -> usize {
        self.second_stage.n_groups()
    }

    /// Smallest first-stage F-type statistic, when there is a first stage.
    pub fn min_first_stage_f(&self) -> Option<f64> {
        self.first_stage.as_ref().map(|f| f.min_f_stat)
    }
}

/// Seed of the first-stage restarts derived from the user seed.
pub fn first_stage_seed(seed: u64) -> u64 {
    derive_seed(&[seed, 1])
}

/// Seed of the second-stage restarts derived from the user seed.
pub fn second_stage_seed(seed: u64) -> u64 {
    derive_seed(&[seed, 2])
}

fn stage_options(cfg: &EstimatorConfig, seed: u64) -> GfeOptions {
    GfeOptions {
        n_groups: cfg.n_groups,
        time_effects: cfg.time_effects,
        seed,
        ..cfg.gfe.clone()
    }
}

/// Transform the panel as configured, then estimate.
pub fn estimate(p: &PanelData, cfg: &EstimatorConfig) -> Result<EstimationResult> {
    match cfg.transform {
        Transform::None => estimate_prepared(p, cfg),
        t => estimate_prepared(&t.apply(p)?, cfg),
    }
}

fn estimate_prepared(p: &PanelData, cfg: &EstimatorConfig) -> Result<EstimationResult> {
    if cfg.n_groups == 0 {
        return Err(Error::InvalidInput("number of groups must be >= 1".into()));
    }
    let fs_opts = stage_options(cfg, first_stage_seed(cfg.gfe.seed));
    let ss_opts = stage_options(cfg, second_stage_seed(cfg.gfe.seed));
    let te = cfg.time_effects;
    let first_stage = match cfg.method {
        Method::TwoSls => Some(fs_pooled(p, &fs_opts, te)?),
        Method::Tgfe => {
            let k = cfg
                .fs_groups
                .ok_or_else(|| Error::InvalidInput("tgfe needs the number of first-stage groups".into()))?;
            Some(fs_grouped(p, k, &fs_opts, te)?)
        }
        Method::Ugfe => Some(fs_unit_specific(p, te, cfg.fs_groups, &fs_opts)?),
        Method::Ig | Method::Rf => None,
    };
    let w: &Array3<f64> = match (&first_stage, cfg.method) {
        (Some(fs), _) => &fs.x_hat,
        (None, Method::Rf) => p.z(),
        (None, _) => p.x(),
    };
    let second_stage = gfe_fit(p.y(), w, &ss_opts)?;
    let pre = if cfg.method == Method::Rf {
        None
    } else {
        let se = clustered_se_pre(p.y(), w, &second_stage, cfg.cr1)?;
        let estimate = (0..second_stage.n_groups()).map(|g| second_stage.coef(g)).collect();
        Some(GroupCoefficients { estimate, se })
    };
    let (post, post_error) = match post_iv_by_group(p, &second_stage.grouping, te, cfg.cr1) {
        Ok(c) => (Some(c), None),
        Err(e) if e.is_numerical() => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(EstimationResult {
        method: cfg.method,
        first_stage,
        group_sizes: second_stage.grouping.sizes(),
        second_stage,
        pre,
        post,
        post_error,
        config: cfg.clone(),
    })
}

fn config(method: Method, g: usize, fs_groups: Option<usize>, opts: &GfeOptions, te: bool) -> EstimatorConfig {
    EstimatorConfig {
        method,
        n_groups: g,
        fs_groups,
        time_effects: te,
        gfe: opts.clone(),
        ..Default::default()
    }
}

/// Homogeneous first stage, grouped second stage.
pub fn estimate_2sls(p: &PanelData, g: usize, opts: &GfeOptions, time_effects: bool) -> Result<EstimationResult> {
    estimate_prepared(p, &config(Method::TwoSls, g, None, opts, time_effects))
}

/// First stage grouped into `k` latent groups, independent of the `g`
/// second-stage groups.
pub fn estimate_tgfe(
    p: &PanelData,
    g: usize,
    k: usize,
    opts: &GfeOptions,
    time_effects: bool,
) -> Result<EstimationResult> {
    estimate_prepared(p, &config(Method::Tgfe, g, Some(k), opts, time_effects))
}

/// Unit-specific first stage; `k_for_mu` groups the first-stage period
/// effects when `time_effects` is set.
pub fn estimate_ugfe(
    p: &PanelData,
    g: usize,
    opts: &GfeOptions,
    time_effects: bool,
    k_for_mu: Option<usize>,
) -> Result<EstimationResult> {
    estimate_prepared(p, &config(Method::Ugfe, g, k_for_mu, opts, time_effects))
}

/// Grouped fixed effects of `y` on `x`, ignoring endogeneity.
pub fn estimate_ig(p: &PanelData, g: usize, opts: &GfeOptions, time_effects: bool) -> Result<EstimationResult> {
    estimate_prepared(p, &config(Method::Ig, g, None, opts, time_effects))
}

/// Grouped fixed effects of `y` on `z`; memberships feed the group IV.
pub fn estimate_rf(p: &PanelData, g: usize, opts: &GfeOptions, time_effects: bool) -> Result<EstimationResult> {
    estimate_prepared(p, &config(Method::Rf, g, None, opts, time_effects))
}
