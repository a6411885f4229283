//! Grouped fixed-effects least squares.
//!
//! Minimises `sum_i sum_t || y_it - B_{g_i}' w_it - alpha_{g_i t} ||^2` jointly
//! over group coefficients `B_g` (`p x q`), optional group-by-period effects
//! `alpha_{g t}` (`q`-vectors) and the unit-to-group assignment, by
//! alternating group-wise least squares with per-unit reassignment from many
//! random starting assignments. The same engine runs every regression in the
//! crate: `y` on fitted regressors, regressors on instruments (`q = d`, with
//! the Frobenius objective), `y` on `x` and `y` on `z`.
//!
//! Labels are zero-based.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, ArrayView3, Axis};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_normal;
use crate::panel::Grouping;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GfeOptions {
    pub n_groups: usize,
    /// Estimate group-specific period effects `alpha_{g t}`.
    pub time_effects: bool,
    pub n_starts: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Stop early once the relative objective improvement of one full
    /// iteration drops to `tol` or below. Zero means: stop only at an
    /// assignment fixed point.
    pub tol: f64,
    /// Fail with `SingularDesign` on ill-conditioned group designs instead of
    /// falling back to the minimum-norm solution.
    pub strict: bool,
}

impl Default for GfeOptions {
    fn default() -> Self {
        GfeOptions {
            n_groups: 2,
            time_effects: false,
            n_starts: 100,
            max_iter: 1000,
            seed: 0,
            tol: 0.0,
            strict: false,
        }
    }
}

impl GfeOptions {
    pub fn with_groups(&self, n_groups: usize) -> Self {
        GfeOptions {
            n_groups,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_groups == 0 {
            return Err(Error::InvalidInput("number of groups must be >= 1".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::InvalidInput("n_starts must be >= 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be >= 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidInput("tol must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GroupedLinearFit {
    /// One `p x q` coefficient matrix per group.
    pub beta: Vec<DMatrix<f64>>,
    /// `G x T x q` period effects when fitted with time effects.
    pub alpha: Option<Array3<f64>>,
    pub grouping: Grouping,
    /// Sum of squared residuals divided by `N T`.
    pub objective: f64,
    pub n_iterations: usize,
    pub converged: bool,
    /// Index of the winning restart.
    pub start_index: usize,
    /// Some group design of the winning fit needed the minimum-norm solve.
    pub rank_deficient: bool,
}

impl GroupedLinearFit {
    pub fn n_groups(&self) -> usize {
        self.beta.len()
    }

    /// Coefficient vector of group `g` for a scalar response.
    pub fn coef(&self, g: usize) -> Vec<f64> {
        self.beta[g].column(0).iter().copied().collect()
    }

    /// `y - w'B_g - alpha_g` for every unit and period, shaped `(N, T, q)`.
    pub fn residuals(&self, y: &Array3<f64>, w: &Array3<f64>) -> Array3<f64> {
        let (n, t, q) = y.dim();
        let p = w.dim().2;
        let mut r = y.clone();
        for i in 0..n {
            let g = self.grouping.label(i);
            let b = &self.beta[g];
            for s in 0..t {
                for c in 0..q {
                    let mut v = 0.0;
                    for a in 0..p {
                        v += w[[i, s, a]] * b[(a, c)];
                    }
                    if let Some(alpha) = &self.alpha {
                        v += alpha[[g, s, c]];
                    }
                    r[[i, s, c]] -= v;
                }
            }
        }
        r
    }
}

/// Fit a scalar response `y` (`N x T`) on regressors `w` (`N x T x p`).
pub fn gfe_fit(y: &Array2<f64>, w: &Array3<f64>, opts: &GfeOptions) -> Result<GroupedLinearFit> {
    let y3 = y.view().insert_axis(Axis(2));
    gfe_fit_view(y3, w.view(), opts)
}

/// Fit a multivariate response `y` (`N x T x q`) on `w` (`N x T x p`) under
/// the Frobenius objective.
pub fn gfe_fit_multi(y: &Array3<f64>, w: &Array3<f64>, opts: &GfeOptions) -> Result<GroupedLinearFit> {
    gfe_fit_view(y.view(), w.view(), opts)
}

fn gfe_fit_view(y: ArrayView3<f64>, w: ArrayView3<f64>, opts: &GfeOptions) -> Result<GroupedLinearFit> {
    opts.validate()?;
    if w.dim().2 == 0 {
        return Err(Error::InvalidInput("at least one regressor is required".into()));
    }
    let design = Design::new(y, w)?;
    design.fit(opts)
}

/// Run the alternation once from the given starting labels, returning the
/// fit and the objective recorded after every update and assignment step.
pub fn gfe_run_from(
    y: &Array2<f64>,
    w: &Array3<f64>,
    start: &Grouping,
    opts: &GfeOptions,
) -> Result<(GroupedLinearFit, Vec<f64>)> {
    opts.validate()?;
    let design = Design::new(y.view().insert_axis(Axis(2)), w.view())?;
    if start.n_units() != design.n {
        return Err(Error::LengthMismatch(start.n_units(), design.n));
    }
    if !start.empty_groups().is_empty() {
        return Err(Error::EmptyGroup(start.empty_groups()[0]));
    }
    let mut trace = Vec::new();
    let run = design.run(
        start.labels().to_vec(),
        start.n_groups(),
        opts,
        Some(&mut trace),
    )?;
    Ok((design.finish(run, start.n_groups(), 0), trace))
}

/// Assign every unit to the group with the smallest sum of squared residuals
/// given fixed coefficients; ties go to the smallest label.
pub fn assign_groups(
    y: &Array2<f64>,
    w: &Array3<f64>,
    beta: &[DMatrix<f64>],
    alpha: Option<&Array3<f64>>,
) -> Result<Grouping> {
    let design = Design::new(y.view().insert_axis(Axis(2)), w.view())?;
    let params = Params::from_parts(&design, beta, alpha)?;
    let (labels, _) = design.assign(&params);
    Grouping::new(labels, beta.len())
}

/// Per-group least squares for a fixed grouping. With `time_effects`, the
/// coefficients are fitted on data demeaned within each (group, period) cell
/// and `alpha_{g t}` is the cell mean of `y - w'beta_g`. Collinear group
/// designs get the minimum-norm coefficients.
pub fn group_ols(
    y: &Array2<f64>,
    w: &Array3<f64>,
    grouping: &Grouping,
    time_effects: bool,
) -> Result<(Vec<DMatrix<f64>>, Option<Array3<f64>>)> {
    let design = Design::new(y.view().insert_axis(Axis(2)), w.view())?;
    if grouping.n_units() != design.n {
        return Err(Error::LengthMismatch(grouping.n_units(), design.n));
    }
    if let Some(&g) = grouping.empty_groups().first() {
        return Err(Error::EmptyGroup(g));
    }
    let params = design.update(grouping.labels(), grouping.n_groups(), time_effects, false)?;
    Ok((params.beta, params.alpha))
}

/// Objective `(N T)^-1 sum ||y - w'B_g - alpha||^2` of given parameters.
pub fn gfe_objective(
    y: &Array3<f64>,
    w: &Array3<f64>,
    beta: &[DMatrix<f64>],
    alpha: Option<&Array3<f64>>,
    grouping: &Grouping,
) -> Result<f64> {
    let design = Design::new(y.view(), w.view())?;
    let params = Params::from_parts(&design, beta, alpha)?;
    Ok(design.direct_objective(grouping.labels(), &params))
}

#[derive(Debug, Clone)]
pub(crate) struct Params {
    beta: Vec<DMatrix<f64>>,
    alpha: Option<Array3<f64>>,
    deficient: bool,
}

impl Params {
    pub(crate) fn into_beta(self) -> Vec<DMatrix<f64>> {
        self.beta
    }

    fn from_parts(design: &Design, beta: &[DMatrix<f64>], alpha: Option<&Array3<f64>>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidInput("need at least one group".into()));
        }
        for b in beta {
            if b.shape() != (design.p, design.q) {
                return Err(Error::DimensionMismatch(format!(
                    "coefficient is {:?}, expected {:?}",
                    b.shape(),
                    (design.p, design.q)
                )));
            }
        }
        if let Some(a) = alpha {
            if a.dim() != (beta.len(), design.t, design.q) {
                return Err(Error::DimensionMismatch(format!(
                    "alpha is {:?}, expected {:?}",
                    a.dim(),
                    (beta.len(), design.t, design.q)
                )));
            }
        }
        Ok(Params {
            beta: beta.to_vec(),
            alpha: alpha.cloned(),
            deficient: false,
        })
    }
}

struct Run {
    labels: Vec<usize>,
    params: Params,
    objective: f64,
    iterations: usize,
    converged: bool,
}

/// Response and regressors with per-unit sufficient statistics.
pub(crate) struct Design<'a> {
    y: ArrayView3<'a, f64>,
    w: ArrayView3<'a, f64>,
    n: usize,
    t: usize,
    p: usize,
    q: usize,
    /// `sum_t ||y_it||^2`
    yy: Vec<f64>,
    /// `sum_t w_it y_it'`, column-major `p x q` per unit.
    wy: Vec<f64>,
    /// `sum_t w_it w_it'`, column-major `p x p` per unit.
    ww: Vec<f64>,
}

impl<'a> Design<'a> {
    pub(crate) fn new(y: ArrayView3<'a, f64>, w: ArrayView3<'a, f64>) -> Result<Self> {
        let (n, t, q) = y.dim();
        let (wn, wt, p) = w.dim();
        if (wn, wt) != (n, t) {
            return Err(Error::DimensionMismatch(format!(
                "response is {n}x{t}, regressors are {wn}x{wt}"
            )));
        }
        if n == 0 || t == 0 || q == 0 {
            return Err(Error::InvalidInput("empty response".into()));
        }
        if !y.iter().chain(w.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteValue("regression data".into()));
        }
        let mut yy = vec![0.0; n];
        let mut wy = vec![0.0; n * p * q];
        let mut ww = vec![0.0; n * p * p];
        for i in 0..n {
            let wy_i = &mut wy[i * p * q..(i + 1) * p * q];
            let ww_i = &mut ww[i * p * p..(i + 1) * p * p];
            for s in 0..t {
                for c in 0..q {
                    let yv = y[[i, s, c]];
                    yy[i] += yv * yv;
                    for a in 0..p {
                        wy_i[a + c * p] += w[[i, s, a]] * yv;
                    }
                }
                for b in 0..p {
                    let wb = w[[i, s, b]];
                    for a in 0..p {
                        ww_i[a + b * p] += w[[i, s, a]] * wb;
                    }
                }
            }
        }
        Ok(Design {
            y,
            w,
            n,
            t,
            p,
            q,
            yy,
            wy,
            ww,
        })
    }

    fn fit(&self, opts: &GfeOptions) -> Result<GroupedLinearFit> {
        let g = opts.n_groups;
        if self.n < g {
            return Err(Error::InvalidInput(format!(
                "{} units cannot form {g} nonempty groups",
                self.n
            )));
        }
        // every start coincides when there is one group
        let n_starts = if g == 1 { 1 } else { opts.n_starts };
        let runs: Vec<Result<Run>> = (0..n_starts)
            .into_par_iter()
            .map(|s| {
                let labels = initial_labels(self.n, g, opts.seed, s as u64);
                self.run(labels, g, opts, None)
            })
            .collect();

        let mut best: Option<(usize, Run)> = None;
        let mut first_err = None;
        for (s, run) in runs.into_iter().enumerate() {
            match run {
                Ok(run) => {
                    let better = match &best {
                        None => true,
                        Some((_, b)) => run.objective < b.objective,
                    };
                    if better {
                        best = Some((s, run));
                    }
                }
                Err(e) => {
                    if first_err.is_none() {
                        first_err = Some(e);
                    }
                }
            }
        }
        match best {
            Some((s, run)) => Ok(self.finish(run, g, s)),
            None => Err(first_err.expect("at least one start")),
        }
    }

    fn finish(&self, run: Run, g: usize, start_index: usize) -> GroupedLinearFit {
        GroupedLinearFit {
            grouping: Grouping::new(run.labels, g).expect("labels within range"),
            rank_deficient: run.params.deficient,
            beta: run.params.beta,
            alpha: run.params.alpha,
            objective: run.objective,
            n_iterations: run.iterations,
            converged: run.converged,
            start_index,
        }
    }

    /// Alternate update and assignment steps from `labels` (no empty group).
    fn run(
        &self,
        mut labels: Vec<usize>,
        g: usize,
        opts: &GfeOptions,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<Run> {
        let te = opts.time_effects;
        let mut params = self.update(&labels, g, te, opts.strict)?;
        let mut current = self.cheap_objective(&labels, &params);
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(self.direct_objective(&labels, &params));
        }
        let slack = 1e-9 * (self.yy.iter().sum::<f64>() / (self.n * self.t) as f64 + 1e-300);
        let mut iterations = 0;
        let mut converged = false;
        while iterations < opts.max_iter {
            iterations += 1;
            let (assigned, ssr) = self.assign(&params);
            let after_assign = ssr.iter().sum::<f64>() / (self.n * self.t) as f64;
            debug_assert!(
                after_assign <= current + slack,
                "assignment step raised the objective: {current} -> {after_assign}"
            );
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(self.direct_objective(&assigned, &params));
            }
            if assigned == labels {
                converged = true;
                break;
            }
            labels = assigned;
            repair_empty_groups(&mut labels, &ssr, g);
            params = self.update(&labels, g, te, opts.strict)?;
            let after_update = self.cheap_objective(&labels, &params);
            debug_assert!(
                after_update <= after_assign + slack,
                "update step raised the objective: {after_assign} -> {after_update}"
            );
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(self.direct_objective(&labels, &params));
            }
            let improvement = current - after_update;
            current = after_update;
            if opts.tol > 0.0 && improvement <= opts.tol * current.abs() {
                converged = true;
                break;
            }
        }
        let objective = self.direct_objective(&labels, &params);
        Ok(Run {
            labels,
            params,
            objective,
            iterations,
            converged,
        })
    }

    /// Group-wise least squares for fixed labels; every group must be nonempty.
    pub(crate) fn update(&self, labels: &[usize], g: usize, te: bool, strict: bool) -> Result<Params> {
        let (p, q, t) = (self.p, self.q, self.t);
        let mut gram = vec![DMatrix::<f64>::zeros(p, p); g];
        let mut cross = vec![DMatrix::<f64>::zeros(p, q); g];
        let mut count = vec![0usize; g];
        for (i, &l) in labels.iter().enumerate() {
            count[l] += 1;
            let ww = &self.ww[i * p * p..(i + 1) * p * p];
            let wy = &self.wy[i * p * q..(i + 1) * p * q];
            for (dst, src) in gram[l].as_mut_slice().iter_mut().zip(ww) {
                *dst += src;
            }
            for (dst, src) in cross[l].as_mut_slice().iter_mut().zip(wy) {
                *dst += src;
            }
        }
        if let Some(empty) = count.iter().position(|&c| c == 0) {
            return Err(Error::EmptyGroup(empty));
        }

        // per (group, period) sums of w and y
        let (mut sw, mut sy) = (None, None);
        if te {
            let mut w_sum = Array3::<f64>::zeros((g, t, p));
            let mut y_sum = Array3::<f64>::zeros((g, t, q));
            for (i, &l) in labels.iter().enumerate() {
                for s in 0..t {
                    for a in 0..p {
                        w_sum[[l, s, a]] += self.w[[i, s, a]];
                    }
                    for c in 0..q {
                        y_sum[[l, s, c]] += self.y[[i, s, c]];
                    }
                }
            }
            for k in 0..g {
                let nk = count[k] as f64;
                for s in 0..t {
                    for b in 0..p {
                        for a in 0..p {
                            gram[k][(a, b)] -= w_sum[[k, s, a]] * w_sum[[k, s, b]] / nk;
                        }
                        for c in 0..q {
                            cross[k][(b, c)] -= w_sum[[k, s, b]] * y_sum[[k, s, c]] / nk;
                        }
                    }
                }
            }
            sw = Some(w_sum);
            sy = Some(y_sum);
        }

        let mut beta = Vec::with_capacity(g);
        let mut deficient = false;
        for k in 0..g {
            let sol = solve_normal(&gram[k], &cross[k], strict, || {
                format!("group {} design is ill-conditioned", k + 1)
            })?;
            deficient |= sol.deficient();
            beta.push(sol.coef);
        }

        let alpha = match (sw, sy) {
            (Some(w_sum), Some(y_sum)) => {
                let mut alpha = Array3::<f64>::zeros((g, t, q));
                for k in 0..g {
                    let nk = count[k] as f64;
                    for s in 0..t {
                        for c in 0..q {
                            let mut v = y_sum[[k, s, c]];
                            for a in 0..p {
                                v -= w_sum[[k, s, a]] * beta[k][(a, c)];
                            }
                            alpha[[k, s, c]] = v / nk;
                        }
                    }
                }
                Some(alpha)
            }
            _ => None,
        };
        Ok(Params {
            beta,
            alpha,
            deficient,
        })
    }

    /// Sum of squared residuals of unit `i` under group `k`.
    fn unit_ssr(&self, i: usize, k: usize, params: &Params) -> f64 {
        let (p, q) = (self.p, self.q);
        let b = params.beta[k].as_slice();
        match &params.alpha {
            None => {
                let wy = &self.wy[i * p * q..(i + 1) * p * q];
                let ww = &self.ww[i * p * p..(i + 1) * p * p];
                let mut ssr = self.yy[i];
                for c in 0..q {
                    let bc = &b[c * p..(c + 1) * p];
                    for a in 0..p {
                        ssr -= 2.0 * bc[a] * wy[a + c * p];
                        let mut wb = 0.0;
                        for e in 0..p {
                            wb += ww[a + e * p] * bc[e];
                        }
                        ssr += bc[a] * wb;
                    }
                }
                ssr
            }
            Some(alpha) => {
                let mut ssr = 0.0;
                for s in 0..self.t {
                    for c in 0..q {
                        let mut r = self.y[[i, s, c]] - alpha[[k, s, c]];
                        for a in 0..p {
                            r -= self.w[[i, s, a]] * b[a + c * p];
                        }
                        ssr += r * r;
                    }
                }
                ssr
            }
        }
    }

    pub(crate) fn assign(&self, params: &Params) -> (Vec<usize>, Vec<f64>) {
        let g = params.beta.len();
        let mut labels = vec![0; self.n];
        let mut ssr = vec![0.0; self.n];
        for i in 0..self.n {
            let mut best = self.unit_ssr(i, 0, params);
            let mut arg = 0;
            for k in 1..g {
                let v = self.unit_ssr(i, k, params);
                if v < best {
                    best = v;
                    arg = k;
                }
            }
            labels[i] = arg;
            ssr[i] = best;
        }
        (labels, ssr)
    }

    fn cheap_objective(&self, labels: &[usize], params: &Params) -> f64 {
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| self.unit_ssr(i, l, params))
            .sum();
        total / (self.n * self.t) as f64
    }

    pub(crate) fn direct_objective(&self, labels: &[usize], params: &Params) -> f64 {
        let (p, q) = (self.p, self.q);
        let mut total = 0.0;
        for (i, &k) in labels.iter().enumerate() {
            let b = params.beta[k].as_slice();
            for s in 0..self.t {
                for c in 0..q {
                    let mut r = self.y[[i, s, c]];
                    if let Some(alpha) = &params.alpha {
                        r -= alpha[[k, s, c]];
                    }
                    for a in 0..p {
                        r -= self.w[[i, s, a]] * b[a + c * p];
                    }
                    total += r * r;
                }
            }
        }
        total / (self.n * self.t) as f64
    }
}

/// Move the worst-fitting units of multi-member groups into empty groups.
pub(crate) fn repair_empty_groups(labels: &mut [usize], ssr: &[f64], g: usize) {
    let mut count = vec![0usize; g];
    for &l in labels.iter() {
        count[l] += 1;
    }
    for empty in 0..g {
        if count[empty] > 0 {
            continue;
        }
        let donor = (0..labels.len())
            .filter(|&i| count[labels[i]] > 1)
            .max_by(|&a, &b| ssr[a].total_cmp(&ssr[b]).then(b.cmp(&a)));
        if let Some(i) = donor {
            count[labels[i]] -= 1;
            labels[i] = empty;
            count[empty] = 1;
        }
    }
}

/// Counter-based stream for restart `start` under `seed`.
pub(crate) fn restart_rng(seed: u64, start: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start);
    rng
}

/// Uniform integer in `0..bound` by the multiply-shift map of a 64-bit draw.
pub(crate) fn uniform_index(rng: &mut impl RngCore, bound: usize) -> usize {
    ((rng.next_u64() as u128 * bound as u128) >> 64) as usize
}

/// I.i.d. uniform labels, redrawn until every group is used.
fn initial_labels(n: usize, g: usize, seed: u64, start: u64) -> Vec<usize> {
    let mut rng = restart_rng(seed, start);
    let mut labels = vec![0; n];
    for _ in 0..10_000 {
        for l in labels.iter_mut() {
            *l = uniform_index(&mut rng, g);
        }
        let mut used = vec![false; g];
        for &l in &labels {
            used[l] = true;
        }
        if used.iter().all(|&u| u) {
            return labels;
        }
    }
    // N close to G: fall back to a random permutation of a covering pattern
    for (i, l) in labels.iter_mut().enumerate() {
        *l = i % g;
    }
    for i in (1..n).rev() {
        let j = uniform_index(&mut rng, i + 1);
        labels.swap(i, j);
    }
    labels
}
