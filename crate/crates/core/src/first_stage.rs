//! First-stage fits of the endogenous regressors on the instruments.
//!
//! Three heterogeneity regimes are supported: one coefficient matrix for all
//! units, `K` latent groups of units (fitted with the grouped fixed-effects
//! engine under the Frobenius objective), and one matrix per unit. Grouped
//! and unit-specific fits may add group-by-period effects `mu_{k t}`.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gfe::{gfe_fit_multi, repair_empty_groups, Design, GfeOptions};
use crate::linalg::solve_normal;
use crate::panel::{unit_matrix, Grouping, PanelData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FirstStageKind {
    Homogeneous,
    Grouped(usize),
    UnitSpecific,
}

#[derive(Debug, Clone)]
pub struct FirstStageFit {
    pub kind: FirstStageKind,
    /// `m x d` coefficient matrices: one, `K`, or `N` of them.
    pub pi: Vec<DMatrix<f64>>,
    /// `K x T x d` period effects.
    pub mu: Option<Array3<f64>>,
    /// First-stage memberships (grouped kind, or unit-specific with period
    /// effects).
    pub kappa: Option<Grouping>,
    /// Fitted regressors, `N x T x d`.
    pub x_hat: Array3<f64>,
    /// `sum_i sum_t ||x_it - x_hat_it||^2`.
    pub residual_ss: f64,
    /// Smallest first-stage F-type statistic across the fitted blocks and
    /// regressors; small values flag weak instruments.
    pub min_f_stat: f64,
    pub rank_deficient: bool,
}

impl FirstStageFit {
    /// Coefficient matrix used for unit `i`.
    pub fn pi_for_unit(&self, i: usize) -> &DMatrix<f64> {
        match self.kind {
            FirstStageKind::Homogeneous => &self.pi[0],
            FirstStageKind::Grouped(_) => {
                &self.pi[self.kappa.as_ref().expect("grouped fit has kappa").label(i)]
            }
            FirstStageKind::UnitSpecific => &self.pi[i],
        }
    }

    /// Objective `residual_ss / (N T)`.
    pub fn objective(&self) -> f64 {
        let (n, t, _) = self.x_hat.dim();
        self.residual_ss / (n * t) as f64
    }
}

/// `x_hat_it = Pi_i' z_it + mu_{k_i t}`.
fn fitted_values(
    z: &Array3<f64>,
    pi_of: impl Fn(usize) -> usize,
    pi: &[DMatrix<f64>],
    mu: Option<(&Array3<f64>, &Grouping)>,
) -> Array3<f64> {
    let (n, t, m) = z.dim();
    let d = pi[0].ncols();
    Array3::from_shape_fn((n, t, d), |(i, s, j)| {
        let p = &pi[pi_of(i)];
        let mut v = 0.0;
        for a in 0..m {
            v += z[[i, s, a]] * p[(a, j)];
        }
        if let Some((mu, kappa)) = mu {
            v += mu[[kappa.label(i), s, j]];
        }
        v
    })
}

fn residual_ss(x: &Array3<f64>, x_hat: &Array3<f64>) -> f64 {
    x.iter().zip(x_hat.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Minimum over blocks of units and regressor columns of
/// `(sum x_hat^2 / m) / (sum (x - x_hat)^2 / (n_obs - m))`.
fn min_f_stat(x: &Array3<f64>, x_hat: &Array3<f64>, blocks: &[Vec<usize>], m: usize) -> f64 {
    let (_, t, d) = x.dim();
    let mut best = f64::INFINITY;
    for units in blocks {
        let n_obs = units.len() * t;
        let df = n_obs.saturating_sub(m).max(1) as f64;
        for j in 0..d {
            let (mut fit, mut res) = (0.0, 0.0);
            for &i in units {
                for s in 0..t {
                    let h = x_hat[[i, s, j]];
                    fit += h * h;
                    res += (x[[i, s, j]] - h).powi(2);
                }
            }
            let f = if res > 0.0 {
                (fit / m as f64) / (res / df)
            } else {
                f64::INFINITY
            };
            best = best.min(f);
        }
    }
    best
}

fn group_blocks(g: &Grouping) -> Vec<Vec<usize>> {
    (0..g.n_groups()).map(|k| g.members(k).collect()).collect()
}

/// Pooled regression of `x` on `z`: `Pi = (sum z z')^-1 sum z x'`.
pub fn fs_homogeneous(p: &PanelData) -> Result<FirstStageFit> {
    let design = Design::new(p.x().view(), p.z().view())?;
    let labels = vec![0; p.n_units()];
    let params = design.update(&labels, 1, false, true).map_err(|e| match e {
        Error::SingularDesign(_) => {
            Error::SingularDesign("pooled instrument moment matrix sum z z' is singular".into())
        }
        other => other,
    })?;
    let pi = params.into_beta();
    let x_hat = fitted_values(p.z(), |_| 0, &pi, None);
    let all: Vec<usize> = (0..p.n_units()).collect();
    Ok(FirstStageFit {
        kind: FirstStageKind::Homogeneous,
        residual_ss: residual_ss(p.x(), &x_hat),
        min_f_stat: min_f_stat(p.x(), &x_hat, &[all], p.n_instruments()),
        pi,
        mu: None,
        kappa: None,
        x_hat,
        rank_deficient: false,
    })
}

/// First stage shared by all units: [`fs_homogeneous`], or with period
/// effects `mu_t` the one-group fit of [`fs_grouped`].
pub fn fs_pooled(p: &PanelData, opts: &GfeOptions, time_effects: bool) -> Result<FirstStageFit> {
    if time_effects {
        fs_grouped(p, 1, opts, true)
    } else {
        fs_homogeneous(p)
    }
}

/// Grouped first stage with `k` latent groups; the regressor columns are
/// fitted jointly.
pub fn fs_grouped(p: &PanelData, k: usize, opts: &GfeOptions, time_effects: bool) -> Result<FirstStageFit> {
    if p.n_units() < k {
        return Err(Error::InvalidInput(format!(
            "{} units cannot form {k} first-stage groups",
            p.n_units()
        )));
    }
    let gopts = GfeOptions {
        n_groups: k,
        time_effects,
        ..opts.clone()
    };
    let fit = gfe_fit_multi(p.x(), p.z(), &gopts)?;
    let kappa = fit.grouping.clone();
    let x_hat = fitted_values(
        p.z(),
        |i| kappa.label(i),
        &fit.beta,
        fit.alpha.as_ref().map(|mu| (mu, &kappa)),
    );
    Ok(FirstStageFit {
        kind: FirstStageKind::Grouped(k),
        residual_ss: residual_ss(p.x(), &x_hat),
        min_f_stat: min_f_stat(p.x(), &x_hat, &group_blocks(&kappa), p.n_instruments()),
        pi: fit.beta,
        mu: fit.alpha,
        kappa: Some(kappa),
        x_hat,
        rank_deficient: fit.rank_deficient,
    })
}

/// Per-unit least squares of `target_i` (`T x d`) on `z_i`.
fn unit_coefficients(p: &PanelData, target: &Array3<f64>) -> Result<Vec<DMatrix<f64>>> {
    (0..p.n_units())
        .into_par_iter()
        .map(|i| {
            let z = p.z_unit(i);
            let x = unit_matrix(target, i);
            let sol = solve_normal(&(z.transpose() * &z), &(z.transpose() * &x), true, || {
                format!(
                    "instrument moment matrix of unit `{}` is singular",
                    p.unit_ids()[i]
                )
            })?;
            Ok(sol.coef)
        })
        .collect()
}

const UGFE_MAX_OUTER: usize = 200;
const UGFE_REL_TOL: f64 = 1e-10;

/// Unit-specific first stage. Without period effects each unit gets its own
/// closed-form regression. With period effects, `mu_{k t}` is shared within
/// `k_for_mu` latent groups. Starting from the grouped fit with the same `K`,
/// `Pi_i` is profiled out, `mu` is solved exactly given `kappa`, and units are
/// reassigned until `kappa` stops changing.
pub fn fs_unit_specific(
    p: &PanelData,
    time_effects: bool,
    k_for_mu: Option<usize>,
    opts: &GfeOptions,
) -> Result<FirstStageFit> {
    let all_units = || (0..p.n_units()).map(|i| vec![i]).collect::<Vec<_>>();
    if !time_effects {
        let pi = unit_coefficients(p, p.x())?;
        let x_hat = fitted_values(p.z(), |i| i, &pi, None);
        return Ok(FirstStageFit {
            kind: FirstStageKind::UnitSpecific,
            residual_ss: residual_ss(p.x(), &x_hat),
            min_f_stat: min_f_stat(p.x(), &x_hat, &all_units(), p.n_instruments()),
            pi,
            mu: None,
            kappa: None,
            x_hat,
            rank_deficient: false,
        });
    }

    let k = k_for_mu.ok_or_else(|| {
        Error::InvalidInput("unit-specific first stage with period effects needs a group count for mu".into())
    })?;
    let (n, t, d) = p.x().dim();
    let start = fs_grouped(p, k, opts, true)?;
    let mut labels = start.kappa.expect("grouped fit has kappa").labels().to_vec();
    // Pi_i is profiled out through M_i = I - Z_i (Z_i'Z_i)^-1 Z_i'
    let annihilators: Vec<DMatrix<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let z = p.z_unit(i);
            let sol = solve_normal(&(z.transpose() * &z), &z.transpose(), true, || {
                format!("instrument moment matrix of unit `{}` is singular", p.unit_ids()[i])
            })?;
            Ok(DMatrix::identity(t, t) - &z * sol.coef)
        })
        .collect::<Result<_>>()?;
    let xs: Vec<DMatrix<f64>> = (0..n).map(|i| p.x_unit(i)).collect();
    let mx: Vec<DMatrix<f64>> = annihilators.iter().zip(&xs).map(|(m, x)| m * x).collect();
    let mut previous = f64::INFINITY;
    for _ in 0..UGFE_MAX_OUTER {
        // mu_k minimizes sum_{i in k} ||M_i (x_i - mu_k)||^2
        let mut mus = Vec::with_capacity(k);
        let mut deficient = false;
        for g in 0..k {
            let mut a = DMatrix::zeros(t, t);
            let mut b = DMatrix::zeros(t, d);
            for i in (0..n).filter(|&i| labels[i] == g) {
                a += &annihilators[i];
                b += &mx[i];
            }
            let sol = solve_normal(&a, &b, false, String::new)?;
            deficient |= sol.deficient();
            mus.push(sol.coef);
        }
        let cost = |i: usize, g: usize| (&mx[i] - &annihilators[i] * &mus[g]).norm_squared();
        let current: f64 = (0..n).map(|i| cost(i, labels[i])).sum();
        let mut next: Vec<usize> = (0..n)
            .map(|i| {
                let mut best = (0, cost(i, 0));
                for g in 1..k {
                    let c = cost(i, g);
                    if c < best.1 {
                        best = (g, c);
                    }
                }
                best.0
            })
            .collect();
        let worst: Vec<f64> = (0..n).map(|i| cost(i, next[i])).collect();
        repair_empty_groups(&mut next, &worst, k);
        let done = next == labels || previous - current <= UGFE_REL_TOL * previous.abs();
        previous = current;
        if done {
            let kappa = Grouping::new(labels, k)?;
            let mu = Array3::from_shape_fn((k, t, d), |(g, s, j)| mus[g][(s, j)]);
            let shifted = Array3::from_shape_fn((n, t, d), |(i, s, j)| p.x()[[i, s, j]] - mu[[kappa.label(i), s, j]]);
            let pi = unit_coefficients(p, &shifted)?;
            let x_hat = fitted_values(p.z(), |i| i, &pi, Some((&mu, &kappa)));
            return Ok(FirstStageFit {
                kind: FirstStageKind::UnitSpecific,
                residual_ss: residual_ss(p.x(), &x_hat),
                min_f_stat: min_f_stat(p.x(), &x_hat, &all_units(), p.n_instruments()),
                pi,
                mu: Some(mu),
                kappa: Some(kappa),
                x_hat,
                rank_deficient: deficient,
            });
        }
        labels = next;
    }
    Err(Error::NoConvergence(UGFE_MAX_OUTER))
}

/// Instrument weights for the per-period combination.
#[derive(Debug, Clone)]
pub enum InstrumentWeights {
    /// `Gamma_t = (sum_i z z')^-1 sum_i z target'`, the cross-sectional
    /// regression of the target on the period's instruments.
    CrossSectional,
    /// One `m_t x d` matrix per period.
    Supplied(Vec<DMatrix<f64>>),
}

/// Collapse period-specific instrument sets of varying width `m_t` into a
/// fixed-width instrument `Gamma_t' z_it` of width `d`.
///
/// `z_by_period[t]` is `N x m_t`; `target` is `N x T x d` (for a panel AR(1)
/// in differences, the lagged differenced outcome). Returns the `N x T x d`
/// instrument panel and the weights used.
pub fn combine_dynamic_instruments(
    z_by_period: &[Array2<f64>],
    target: &Array3<f64>,
    weights: &InstrumentWeights,
) -> Result<(Array3<f64>, Vec<DMatrix<f64>>)> {
    let (n, t, d) = target.dim();
    if z_by_period.len() != t {
        return Err(Error::LengthMismatch(z_by_period.len(), t));
    }
    let mut gammas = Vec::with_capacity(t);
    for (s, zs) in z_by_period.iter().enumerate() {
        let (zn, ms) = zs.dim();
        if zn != n {
            return Err(Error::DimensionMismatch(format!(
                "period {} instruments have {zn} rows, expected {n}",
                s + 1
            )));
        }
        let gamma = match weights {
            InstrumentWeights::CrossSectional => {
                let zm = DMatrix::from_fn(n, ms, |i, a| zs[[i, a]]);
                let tm = DMatrix::from_fn(n, d, |i, j| target[[i, s, j]]);
                solve_normal(&(zm.transpose() * &zm), &(zm.transpose() * &tm), true, || {
                    format!("cross-sectional instrument matrix of period {} is singular", s + 1)
                })?
                .coef
            }
            InstrumentWeights::Supplied(g) => {
                let gs = g.get(s).ok_or(Error::LengthMismatch(g.len(), t))?;
                if gs.shape() != (ms, d) {
                    return Err(Error::DimensionMismatch(format!(
                        "weights for period {} are {:?}, expected {:?}",
                        s + 1,
                        gs.shape(),
                        (ms, d)
                    )));
                }
                gs.clone()
            }
        };
        gammas.push(gamma);
    }
    let out = Array3::from_shape_fn((n, t, d), |(i, s, j)| {
        let zs = &z_by_period[s];
        (0..zs.ncols()).map(|a| zs[[i, a]] * gammas[s][(a, j)]).sum()
    });
    Ok((out, gammas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn panel(x: Array3<f64>, z: Array3<f64>) -> PanelData {
        let (n, t, _) = x.dim();
        PanelData::from_arrays(Array2::zeros((n, t)), x, z).unwrap()
    }

    #[test]
    fn identity_relation() {
        let z = Array3::from_shape_fn((4, 3, 2), |(i, s, a)| ((i * 7 + s * 3 + a * 5) % 11) as f64 - 5.0);
        let fit = fs_homogeneous(&panel(z.clone(), z)).unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        assert!((&fit.pi[0] - eye).abs().max() < 1e-12);
        assert!(fit.residual_ss < 1e-20);
    }

    #[test]
    fn scalar_slope_two() {
        let z = Array3::from_shape_fn((3, 4, 1), |(i, s, _)| (i as f64) - (s as f64) * 0.5 + 0.1);
        let x = &z * 2.0;
        let fit = fs_homogeneous(&panel(x, z)).unwrap();
        assert!((fit.pi[0][(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_pooled_instruments() {
        let z = Array3::zeros((3, 2, 1));
        let x = Array3::ones((3, 2, 1));
        assert!(matches!(fs_homogeneous(&panel(x, z)), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn grouped_time_effects_with_zero_instruments_are_means() {
        let x = Array3::from_shape_fn((4, 2, 1), |(i, s, _)| if i < 2 { (i + s) as f64 } else { 10.0 + s as f64 });
        let z = Array3::zeros((4, 2, 1));
        let opts = GfeOptions { n_starts: 20, ..Default::default() };
        let fit = fs_grouped(&panel(x, z), 2, &opts, true).unwrap();
        let kappa = fit.kappa.as_ref().unwrap();
        let mu = fit.mu.as_ref().unwrap();
        let k0 = kappa.label(0);
        assert_eq!(kappa.label(1), k0);
        assert!((mu[[k0, 0, 0]] - 0.5).abs() < 1e-12);
        assert!((mu[[k0, 1, 0]] - 1.5).abs() < 1e-12);
        assert!((mu[[kappa.label(2), 1, 0]] - 11.0).abs() < 1e-12);
    }

    #[test]
    fn unit_singularity_names_the_unit() {
        let mut z = Array3::from_shape_fn((3, 3, 1), |(i, s, _)| (i + s) as f64 + 1.0);
        for s in 0..3 {
            z[[1, s, 0]] = 0.0;
        }
        let x = Array3::ones((3, 3, 1));
        match fs_unit_specific(&panel(x, z), false, None, &GfeOptions::default()) {
            Err(Error::SingularDesign(msg)) => assert!(msg.contains("`2`"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unit_specific_time_effects_need_k() {
        let z = Array3::from_shape_fn((3, 3, 1), |(i, s, _)| (i * s) as f64 + 1.0);
        let x = z.clone();
        assert!(matches!(
            fs_unit_specific(&panel(x, z), true, None, &GfeOptions::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn exact_dynamic_target_gives_unit_weights() {
        let zs: Vec<Array2<f64>> = (0..3)
            .map(|s| Array2::from_shape_fn((5, 1), |(i, _)| (i as f64) - 2.0 + 0.3 * s as f64))
            .collect();
        let target = Array3::from_shape_fn((5, 3, 1), |(i, s, _)| zs[s][[i, 0]]);
        let (out, gammas) =
            combine_dynamic_instruments(&zs, &target, &InstrumentWeights::CrossSectional).unwrap();
        for g in &gammas {
            assert!((g[(0, 0)] - 1.0).abs() < 1e-14);
        }
        for (a, b) in out.iter().zip(target.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn varying_instrument_width() {
        let zs: Vec<Array2<f64>> = (1..=3)
            .map(|w| Array2::from_shape_fn((6, w), |(i, a)| ((i + 1) as f64).powi(a as i32) + 0.1 * (i * i) as f64))
            .collect();
        let target = Array3::from_shape_fn((6, 3, 1), |(i, s, _)| (i as f64).sin() + s as f64);
        let (out, gammas) =
            combine_dynamic_instruments(&zs, &target, &InstrumentWeights::CrossSectional).unwrap();
        assert_eq!(out.dim(), (6, 3, 1));
        assert_eq!(gammas.iter().map(|g| g.nrows()).collect::<Vec<_>>(), vec![1, 2, 3]);
    }
}
