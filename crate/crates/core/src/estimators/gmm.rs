//! Naive GMM objectives over groupings, the just-identified group IV
//! estimator that zeroes them, and the pseudo-true mixture coefficients of
//! the over-identified two-group case.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::panel::{Grouping, PanelData};

/// Positive-definite `m x m` weighting, shared or one per group.
#[derive(Debug, Clone)]
pub enum GmmWeighting {
    Common(DMatrix<f64>),
    PerGroup(Vec<DMatrix<f64>>),
}

fn check_weight(w: &DMatrix<f64>) -> Result<()> {
    if !w.is_square() {
        return Err(Error::DimensionMismatch(format!("weighting matrix is {:?}", w.shape())));
    }
    let scale = w.amax().max(1.0);
    if (w - w.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidInput("weighting matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(w.clone());
    if !eig.eigenvalues.iter().all(|&l| l > 0.0) {
        return Err(Error::InvalidInput("weighting matrix is not positive definite".into()));
    }
    Ok(())
}

impl GmmWeighting {
    pub fn common(w: DMatrix<f64>) -> Result<Self> {
        check_weight(&w)?;
        Ok(GmmWeighting::Common(w))
    }

    pub fn per_group(ws: Vec<DMatrix<f64>>) -> Result<Self> {
        for w in &ws {
            check_weight(w)?;
        }
        Ok(GmmWeighting::PerGroup(ws))
    }

    pub fn identity(m: usize) -> Self {
        GmmWeighting::Common(DMatrix::identity(m, m))
    }

    fn matrices(&self) -> &[DMatrix<f64>] {
        match self {
            GmmWeighting::Common(w) => std::slice::from_ref(w),
            GmmWeighting::PerGroup(ws) => ws,
        }
    }

    fn for_group(&self, g: usize) -> &DMatrix<f64> {
        match self {
            GmmWeighting::Common(w) => w,
            GmmWeighting::PerGroup(ws) => &ws[g],
        }
    }

    /// Largest eigenvalue over the stored matrices.
    pub fn max_eigenvalue(&self) -> f64 {
        self.matrices()
            .iter()
            .flat_map(|w| SymmetricEigen::new(w.clone()).eigenvalues.iter().copied().collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

fn check_beta(p: &PanelData, beta: &[Vec<f64>], grouping: &Grouping) -> Result<()> {
    if grouping.n_units() != p.n_units() {
        return Err(Error::LengthMismatch(grouping.n_units(), p.n_units()));
    }
    if beta.len() != grouping.n_groups() {
        return Err(Error::LengthMismatch(beta.len(), grouping.n_groups()));
    }
    if let Some(b) = beta.iter().find(|b| b.len() != p.n_regressors()) {
        return Err(Error::LengthMismatch(b.len(), p.n_regressors()));
    }
    Ok(())
}

/// `sum_t z_it (y_it - x_it' b)` for one unit.
fn unit_moment(p: &PanelData, i: usize, b: &[f64]) -> DVector<f64> {
    let (t, d, m) = (p.n_periods(), p.n_regressors(), p.n_instruments());
    let mut out = DVector::zeros(m);
    for s in 0..t {
        let mut r = p.y()[[i, s]];
        for a in 0..d {
            r -= p.x()[[i, s, a]] * b[a];
        }
        for a in 0..m {
            out[a] += p.z()[[i, s, a]] * r;
        }
    }
    out
}

/// Unscaled moment sums `sum_{g_i = g} sum_t z (y - x' beta_g)` per group.
pub fn group_moments(p: &PanelData, beta: &[Vec<f64>], grouping: &Grouping) -> Result<Vec<DVector<f64>>> {
    check_beta(p, beta, grouping)?;
    let mut out = vec![DVector::zeros(p.n_instruments()); grouping.n_groups()];
    for i in 0..p.n_units() {
        let g = grouping.label(i);
        out[g] += unit_moment(p, i, &beta[g]);
    }
    Ok(out)
}

/// Naive GMM objective with moments scaled by `1 / (N T)`.
///
/// `pooled` evaluates the quadratic form of the single pooled moment vector
/// (requires a common weighting); otherwise the per-group quadratic forms are
/// summed, each with its own weighting.
pub fn naive_gmm_objective(
    p: &PanelData,
    beta: &[Vec<f64>],
    grouping: &Grouping,
    w: &GmmWeighting,
    pooled: bool,
) -> Result<f64> {
    let m = p.n_instruments();
    let g = grouping.n_groups();
    for wm in w.matrices() {
        if wm.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!(
                "weighting matrix is {:?}, expected {m}x{m}",
                wm.shape()
            )));
        }
    }
    if let GmmWeighting::PerGroup(ws) = w {
        if pooled {
            return Err(Error::InvalidInput("the pooled objective takes one weighting matrix".into()));
        }
        if ws.len() != g {
            return Err(Error::LengthMismatch(ws.len(), g));
        }
    }
    let scale = 1.0 / (p.n_units() * p.n_periods()) as f64;
    let moments: Vec<DVector<f64>> = group_moments(p, beta, grouping)?
        .into_iter()
        .map(|v| v * scale)
        .collect();
    if pooled {
        let total = moments.iter().fold(DVector::zeros(m), |acc, v| acc + v);
        Ok((total.transpose() * w.for_group(0) * &total)[(0, 0)])
    } else {
        Ok(moments
            .iter()
            .enumerate()
            .map(|(k, v)| (v.transpose() * w.for_group(k) * v)[(0, 0)])
            .sum())
    }
}

/// Group IV estimator `(sum z x')^-1 sum z y` under a given grouping (`m = d`).
pub fn just_identified_beta(p: &PanelData, grouping: &Grouping) -> Result<Vec<Vec<f64>>> {
    let (d, m) = (p.n_regressors(), p.n_instruments());
    if m != d {
        return Err(Error::NotJustIdentified { m, d });
    }
    if grouping.n_units() != p.n_units() {
        return Err(Error::LengthMismatch(grouping.n_units(), p.n_units()));
    }
    let g = grouping.n_groups();
    let mut zx = vec![DMatrix::<f64>::zeros(m, d); g];
    let mut zy = vec![DVector::<f64>::zeros(m); g];
    for i in 0..p.n_units() {
        let l = grouping.label(i);
        for s in 0..p.n_periods() {
            for a in 0..m {
                let zv = p.z()[[i, s, a]];
                zy[l][a] += zv * p.y()[[i, s]];
                for b in 0..d {
                    zx[l][(a, b)] += zv * p.x()[[i, s, b]];
                }
            }
        }
    }
    let mut out = Vec::with_capacity(g);
    for k in 0..g {
        if grouping.members(k).next().is_none() {
            return Err(Error::EmptyGroup(k));
        }
        let sv = zx[k].clone().svd(false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        let singular = || Error::SingularDesign(format!("sum z x' of group {} is singular", k + 1));
        if !(smin > 0.0 && smax / smin <= crate::linalg::CONDITION_LIMIT) {
            return Err(singular());
        }
        let b = zx[k].clone().lu().solve(&zy[k]).ok_or_else(singular)?;
        out.push(b.iter().copied().collect());
    }
    Ok(out)
}

/// `sum_i m_i' (sum_t z z')^-1 m_i` with `m_i = sum_t z (y - x' beta_{g_i})`
/// (unscaled). Equals the unit-specific-first-stage second-stage SSR minus
/// `sum_i y_i'(I - P_i) y_i`.
pub fn per_unit_gmm_objective(p: &PanelData, beta: &[Vec<f64>], grouping: &Grouping) -> Result<f64> {
    check_beta(p, beta, grouping)?;
    let mut total = 0.0;
    for i in 0..p.n_units() {
        let z = p.z_unit(i);
        let mi = unit_moment(p, i, &beta[grouping.label(i)]);
        let sol = crate::linalg::solve_normal(
            &(z.transpose() * &z),
            &DMatrix::from_column_slice(mi.len(), 1, mi.as_slice()),
            true,
            || format!("instrument moment matrix of unit `{}` is singular", p.unit_ids()[i]),
        )?;
        total += (mi.transpose() * sol.coef)[(0, 0)];
    }
    Ok(total)
}

/// Pseudo-true two-group coefficients when a share `lambda11` of the
/// population is correctly placed in group 1 and `lambda22` in group 2, with
/// true group shares `lambda1` and `1 - lambda1`.
pub fn pseudo_true_beta(beta0: &[Vec<f64>], lambda1: f64, lambda11: f64, lambda22: f64) -> Result<[Vec<f64>; 2]> {
    if beta0.len() != 2 {
        return Err(Error::LengthMismatch(beta0.len(), 2));
    }
    if beta0[0].len() != beta0[1].len() {
        return Err(Error::LengthMismatch(beta0[0].len(), beta0[1].len()));
    }
    let lambda2 = 1.0 - lambda1;
    let in_unit = |v: f64| (0.0..=1.0).contains(&v);
    if !(in_unit(lambda1) && in_unit(lambda11) && in_unit(lambda22))
        || lambda11 > lambda1
        || lambda22 > lambda2
    {
        return Err(Error::InvalidInput(format!(
            "need 0 <= lambda11 <= lambda1 <= 1 and 0 <= lambda22 <= 1 - lambda1, got ({lambda1}, {lambda11}, {lambda22})"
        )));
    }
    let den1 = lambda11 + lambda2 - lambda22;
    let den2 = lambda22 + lambda1 - lambda11;
    if den1 == 0.0 || den2 == 0.0 {
        return Err(Error::DegenerateAssignment);
    }
    let mix = |w_own: f64, own: &[f64], w_other: f64, other: &[f64], den: f64| -> Vec<f64> {
        own.iter()
            .zip(other)
            .map(|(a, b)| (w_own * a + w_other * b) / den)
            .collect()
    };
    Ok([
        mix(lambda11, &beta0[0], lambda2 - lambda22, &beta0[1], den1),
        mix(lambda22, &beta0[1], lambda1 - lambda11, &beta0[0], den2),
    ])
}
