//! Estimation of linear panel models whose coefficients follow a latent group
//! structure when regressors are endogenous.

pub mod error;
pub mod estimators;
pub mod first_stage;
pub mod gfe;
pub mod linalg;
pub mod metrics;
pub mod panel;
pub mod rng;
pub mod selection;
pub mod sim;

pub use error::{Error, Result};
pub use estimators::{
    estimate, estimate_2sls, estimate_ig, estimate_rf, estimate_tgfe, estimate_ugfe, EstimationResult,
    EstimatorConfig, GroupCoefficients, Method,
};
pub use first_stage::{FirstStageFit, FirstStageKind};
pub use gfe::{assign_groups, gfe_fit, gfe_fit_multi, group_ols, GfeOptions, GroupedLinearFit};
pub use metrics::{align_labels, hausdorff, rand_index, separation_statistic};
pub use panel::{
    first_difference, load_panel, save_panel, within_transform, GroupTruth, Grouping, PanelData,
    PanelSchema, Transform,
};
pub use selection::{select_groups, ICResult, Penalty, Selection, SelectionOptions};
