//! Simulation designs and the Monte Carlo harness.

mod dgp;
mod mc;
mod report;

pub use dgp::{gen_dgp, DgpConfig, DgpId};
pub use mc::{run_monte_carlo, McCell, McMethod, McReport, McRow, McSpec, McTask};
pub use report::{render_text, write_csv, Metric, TableId, C1_PI, NT_GRID, SIGMAS};
