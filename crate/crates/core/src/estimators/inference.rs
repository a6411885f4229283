//! Cluster-robust standard errors and group-by-group IV re-estimation.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::gfe::GroupedLinearFit;
use crate::linalg::{pinv_psd, solve_normal};
use crate::panel::{Grouping, PanelData};

/// Coefficients and standard errors, `G x d` each.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCoefficients {
    pub estimate: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
}

fn sandwich_se(bread_gram: &DMatrix<f64>, meat: &DMatrix<f64>, factor: f64) -> Vec<f64> {
    let b = pinv_psd(bread_gram);
    let v = &b * meat * &b * factor;
    (0..v.nrows()).map(|k| v[(k, k)].max(0.0).sqrt()).collect()
}

/// Subtract per-(group, period) means across units.
fn demean_cells(a: &Array3<f64>, grouping: &Grouping) -> Array3<f64> {
    let (_, t, k) = a.dim();
    let g = grouping.n_groups();
    let mut sum = Array3::<f64>::zeros((g, t, k));
    let sizes = grouping.sizes();
    for (i, unit) in a.axis_iter(Axis(0)).enumerate() {
        let mut cell = sum.index_axis_mut(Axis(0), grouping.label(i));
        cell += &unit;
    }
    let mut out = a.clone();
    for (i, mut unit) in out.axis_iter_mut(Axis(0)).enumerate() {
        let l = grouping.label(i);
        let mean = sum.index_axis(Axis(0), l).mapv(|v| v / sizes[l] as f64);
        unit -= &mean;
    }
    out
}

/// Clustered (by unit) standard errors of second-stage coefficients.
///
/// The regressors are stacked as group-dummy interactions so the sandwich
/// `B^-1 (sum_i s_i s_i') B^-1`, `s_i = sum_t w~_it e_it`, `B = sum w~ w~'`,
/// is block diagonal by group. With period effects `w~` is demeaned within
/// (group, period) cells; otherwise `w~ = w`. `cr1` scales by `N / (N - 1)`.
pub fn clustered_se_pre(
    y: &Array2<f64>,
    w: &Array3<f64>,
    fit: &GroupedLinearFit,
    cr1: bool,
) -> Result<Vec<Vec<f64>>> {
    let (n, t, p) = w.dim();
    if n < 2 {
        return Err(Error::InsufficientClusters(n));
    }
    if y.dim() != (n, t) || fit.grouping.n_units() != n {
        return Err(Error::DimensionMismatch(format!(
            "y is {:?}, regressors {:?}, grouping covers {} units",
            y.dim(),
            (n, t, p),
            fit.grouping.n_units()
        )));
    }
    if let Some(&g) = fit.grouping.empty_groups().first() {
        return Err(Error::EmptyGroup(g));
    }
    let resid = fit.residuals(&y.view().insert_axis(Axis(2)).to_owned(), w);
    let wt = if fit.alpha.is_some() {
        demean_cells(w, &fit.grouping)
    } else {
        w.clone()
    };
    let g = fit.n_groups();
    let mut gram = vec![DMatrix::<f64>::zeros(p, p); g];
    let mut meat = vec![DMatrix::<f64>::zeros(p, p); g];
    for i in 0..n {
        let l = fit.grouping.label(i);
        let mut s = DMatrix::<f64>::zeros(p, 1);
        for u in 0..t {
            let e = resid[[i, u, 0]];
            for a in 0..p {
                s[(a, 0)] += wt[[i, u, a]] * e;
                for b in 0..p {
                    gram[l][(a, b)] += wt[[i, u, a]] * wt[[i, u, b]];
                }
            }
        }
        meat[l] += &s * s.transpose();
    }
    let factor = if cr1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
    Ok((0..g).map(|k| sandwich_se(&gram[k], &meat[k], factor)).collect())
}

/// Rows of one group's observations: `(Z, X, y, unit index per row block)`.
fn stack_group(
    p: &PanelData,
    members: &[usize],
    time_effects: bool,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (t, d, m) = (p.n_periods(), p.n_regressors(), p.n_instruments());
    let rows = members.len() * t;
    let mut z = DMatrix::from_fn(rows, m, |r, a| p.z()[[members[r / t], r % t, a]]);
    let mut x = DMatrix::from_fn(rows, d, |r, a| p.x()[[members[r / t], r % t, a]]);
    let mut y = DMatrix::from_fn(rows, 1, |r, _| p.y()[[members[r / t], r % t]]);
    if time_effects {
        let nk = members.len() as f64;
        for mat in [&mut z, &mut x, &mut y] {
            for c in 0..mat.ncols() {
                for s in 0..t {
                    let mean = (0..members.len()).map(|j| mat[(j * t + s, c)]).sum::<f64>() / nk;
                    for j in 0..members.len() {
                        mat[(j * t + s, c)] -= mean;
                    }
                }
            }
        }
    }
    (z, x, y)
}

fn group_iv(
    p: &PanelData,
    grouping: &Grouping,
    time_effects: bool,
    with_se: bool,
    cr1: bool,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if grouping.n_units() != p.n_units() {
        return Err(Error::LengthMismatch(grouping.n_units(), p.n_units()));
    }
    let t = p.n_periods();
    let d = p.n_regressors();
    let mut estimates = Vec::with_capacity(grouping.n_groups());
    let mut ses = Vec::new();
    for g in 0..grouping.n_groups() {
        let members: Vec<usize> = grouping.members(g).collect();
        if members.is_empty() {
            return Err(Error::EmptyGroup(g));
        }
        if with_se && members.len() < 2 {
            return Err(Error::GroupTooSmall {
                group: g,
                size: members.len(),
            });
        }
        let (z, x, y) = stack_group(p, &members, time_effects);
        let zt = z.transpose();
        let pi = solve_normal(&(&zt * &z), &(&zt * &x), true, || {
            format!("instrument moment matrix of group {} is singular", g + 1)
        })?
        .coef;
        let x_hat = &z * pi;
        let xht = x_hat.transpose();
        let gram = &xht * &x_hat;
        let beta = solve_normal(&gram, &(&xht * &y), true, || {
            format!("instruments of group {} do not identify its coefficients", g + 1)
        })?
        .coef;
        estimates.push(beta.column(0).iter().copied().collect());
        if with_se {
            let e = &y - &x * &beta;
            let mut meat = DMatrix::<f64>::zeros(d, d);
            for j in 0..members.len() {
                let rows = x_hat.rows(j * t, t);
                let s = rows.transpose() * e.rows(j * t, t);
                meat += &s * s.transpose();
            }
            let nk = members.len() as f64;
            let factor = if cr1 { nk / (nk - 1.0) } else { 1.0 };
            ses.push(sandwich_se(&gram, &meat, factor));
        }
    }
    Ok((estimates, ses))
}

/// Separate IV (2SLS when over-identified) regressions within each group of
/// `grouping`, with standard errors clustered by unit. With period effects,
/// `y`, `x` and `z` are demeaned within (group, period) cells first.
pub fn post_iv_by_group(
    p: &PanelData,
    grouping: &Grouping,
    time_effects: bool,
    cr1: bool,
) -> Result<GroupCoefficients> {
    let (estimate, se) = group_iv(p, grouping, time_effects, true, cr1)?;
    Ok(GroupCoefficients { estimate, se })
}

/// The coefficient half of [`post_iv_by_group`]; singleton groups allowed.
pub fn post_iv_coefficients(p: &PanelData, grouping: &Grouping, time_effects: bool) -> Result<Vec<Vec<f64>>> {
    Ok(group_iv(p, grouping, time_effects, false, false)?.0)
}
