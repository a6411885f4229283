//! Simulation designs with `d = m = 1` and two structural groups.
//!
//! `(z, v, u)` are independent across units and periods with `z ~ N(0, s^2)`
//! independent of `(v, u)`, `var(v) = s^2`, `var(u) = 1`,
//! `corr(v, u) = rho_i`. Then `x = Pi_i z + v` and `y = beta_i x + u` with
//! `beta_i = 1` for the first half of the units and `-1` for the second
//! (`1` for everyone in the homogeneous design).

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{GroupTruth, Grouping, PanelData};
use crate::rng::{normal, stream, uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DgpId {
    /// `Pi_i = 1`, `rho_i = rho`.
    #[serde(rename = "1")]
    D1,
    /// `Pi_i = 1` for odd units (1-based), `-1` for even.
    #[serde(rename = "2")]
    D2,
    /// `Pi_i ~ U[0.5, 1.5]` for the first half, `U[-1.5, -0.5]` after.
    #[serde(rename = "3")]
    D3,
    /// `Pi_i = 1`; `rho_i = rho` for the first half, `-rho` after.
    #[serde(rename = "4")]
    D4,
    /// `beta_i = 1` for all units, `Pi_i ~ N(mu_pi, sigma_pi^2)`.
    #[serde(rename = "c1")]
    C1,
}

impl DgpId {
    pub const GROUPED: [DgpId; 4] = [DgpId::D1, DgpId::D2, DgpId::D3, DgpId::D4];

    pub fn name(self) -> &'static str {
        match self {
            DgpId::D1 => "1",
            DgpId::D2 => "2",
            DgpId::D3 => "3",
            DgpId::D4 => "4",
            DgpId::C1 => "c1",
        }
    }
}

impl fmt::Display for DgpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DgpId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" => Ok(DgpId::D1),
            "2" => Ok(DgpId::D2),
            "3" => Ok(DgpId::D3),
            "4" => Ok(DgpId::D4),
            "c1" => Ok(DgpId::C1),
            other => Err(Error::InvalidInput(format!("unknown design `{other}` (expected 1, 2, 3, 4 or c1)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub dgp: DgpId,
    pub n: usize,
    pub t: usize,
    pub sigma: f64,
    pub rho: f64,
    pub mu_pi: f64,
    pub sigma_pi: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            dgp: DgpId::D1,
            n: 100,
            t: 20,
            sigma: 0.5,
            rho: -0.5,
            mu_pi: 1.0,
            sigma_pi: 1.0,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn new(dgp: DgpId, n: usize, t: usize, sigma: f64) -> Self {
        DgpConfig {
            dgp,
            n,
            t,
            sigma,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(Error::InvalidInput("designs need N >= 2 and T >= 1".into()));
        }
        if self.n % 2 == 1 {
            return Err(Error::OddN(self.n));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::InvalidInput(format!("|rho| must be below 1, got {}", self.rho)));
        }
        if self.dgp == DgpId::C1 && !(self.sigma_pi >= 0.0 && self.mu_pi.is_finite()) {
            return Err(Error::InvalidInput("sigma_pi must be nonnegative".into()));
        }
        Ok(())
    }
}

const ROLE_PI: u64 = 1;
const ROLE_ERRORS: u64 = 2;

/// Draw a panel and its ground truth. Coefficients come from the stream
/// `(seed, 1)`, errors and instruments from `(seed, 2)`, unit by unit and
/// period by period in the order `z`, `v`, `u`.
pub fn gen_dgp(cfg: &DgpConfig) -> Result<(PanelData, GroupTruth)> {
    cfg.validate()?;
    let (n, t, s) = (cfg.n, cfg.t, cfg.sigma);
    let half = n / 2;
    let grouped = cfg.dgp != DgpId::C1;

    let mut pi_rng = stream(&[cfg.seed, ROLE_PI]);
    let pi: Vec<f64> = (0..n)
        .map(|i| match cfg.dgp {
            DgpId::D1 | DgpId::D4 => 1.0,
            DgpId::D2 => {
                if i % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            DgpId::D3 => {
                let a = 0.5 + uniform(&mut pi_rng);
                if i < half {
                    a
                } else {
                    -a
                }
            }
            DgpId::C1 => cfg.mu_pi + cfg.sigma_pi * normal(&mut pi_rng),
        })
        .collect();
    let rho: Vec<f64> = (0..n)
        .map(|i| if cfg.dgp == DgpId::D4 && i >= half { -cfg.rho } else { cfg.rho })
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| usize::from(grouped && i >= half)).collect();
    let beta: Vec<Vec<f64>> = if grouped { vec![vec![1.0], vec![-1.0]] } else { vec![vec![1.0]] };

    let mut rng = stream(&[cfg.seed, ROLE_ERRORS]);
    let mut y = Array2::zeros((n, t));
    let mut x = Array3::zeros((n, t, 1));
    let mut z = Array3::zeros((n, t, 1));
    for i in 0..n {
        let r = rho[i];
        let b = beta[labels[i]][0];
        for u_t in 0..t {
            let zi = s * normal(&mut rng);
            let e1 = normal(&mut rng);
            let e2 = normal(&mut rng);
            let v = s * e1;
            let u = r * e1 + (1.0 - r * r).sqrt() * e2;
            let xi = pi[i] * zi + v;
            z[[i, u_t, 0]] = zi;
            x[[i, u_t, 0]] = xi;
            y[[i, u_t]] = b * xi + u;
        }
    }
    let panel = PanelData::from_arrays(y, x, z)?;
    let truth = GroupTruth {
        grouping: Grouping::new(labels, beta.len())?,
        beta,
        first_stage_pi: pi.iter().map(|&p| DMatrix::from_element(1, 1, p)).collect(),
        rho,
    };
    Ok((panel, truth))
}
