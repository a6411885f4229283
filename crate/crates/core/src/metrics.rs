//! Classification and coefficient accuracy metrics.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Grouping;

/// Pair counts of two partitions: `n11` pairs together in both, `n10`
/// together only in the first, `n01` together only in the second, `n00`
/// apart in both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandCounts {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
}

impl RandCounts {
    pub fn total(&self) -> u64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }

    pub fn index(&self) -> f64 {
        (self.n11 + self.n00) as f64 / self.total() as f64
    }
}

fn pairs(k: u64) -> u64 {
    k * k.saturating_sub(1) / 2
}

/// Pair counts from the contingency table of the two labelings.
pub fn rand_counts(g1: &Grouping, g2: &Grouping) -> Result<RandCounts> {
    let n = g1.n_units();
    if n != g2.n_units() {
        return Err(Error::LengthMismatch(n, g2.n_units()));
    }
    if n < 2 {
        return Err(Error::InvalidInput("the Rand index needs at least 2 units".into()));
    }
    let (a, b) = (g1.n_groups(), g2.n_groups());
    let mut table = vec![0u64; a * b];
    for i in 0..n {
        table[g1.label(i) * b + g2.label(i)] += 1;
    }
    let n11: u64 = table.iter().map(|&c| pairs(c)).sum();
    let same1: u64 = g1.sizes().iter().map(|&c| pairs(c as u64)).sum();
    let same2: u64 = g2.sizes().iter().map(|&c| pairs(c as u64)).sum();
    let n10 = same1 - n11;
    let n01 = same2 - n11;
    let n00 = pairs(n as u64) - n11 - n10 - n01;
    Ok(RandCounts { n11, n10, n01, n00 })
}

/// Share of unit pairs on which the two partitions agree.
pub fn rand_index(g1: &Grouping, g2: &Grouping) -> Result<f64> {
    Ok(rand_counts(g1, g2)?.index())
}

fn check_sets(beta: &[Vec<f64>], beta0: &[Vec<f64>]) -> Result<usize> {
    if beta.len() != beta0.len() {
        return Err(Error::LengthMismatch(beta.len(), beta0.len()));
    }
    if beta.is_empty() {
        return Err(Error::InvalidInput("empty coefficient set".into()));
    }
    let d = beta0[0].len();
    if let Some(b) = beta.iter().chain(beta0).find(|b| b.len() != d) {
        return Err(Error::DimensionMismatch(format!("coefficient of length {}, expected {d}", b.len())));
    }
    Ok(d)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Hausdorff distance between two sets of group coefficients.
///
/// Without period effects the inner distance is the Euclidean norm. With
/// `alpha = Some((a, a0))` (`G x T` each) it is the squared joint form
/// `||b_g - b0_h||^2 + T^-1 sum_t (a_gt - a0_ht)^2`.
pub fn hausdorff(
    beta: &[Vec<f64>],
    beta0: &[Vec<f64>],
    alpha: Option<(&Array2<f64>, &Array2<f64>)>,
) -> Result<f64> {
    check_sets(beta, beta0)?;
    let g = beta.len();
    if let Some((a, a0)) = alpha {
        if a.nrows() != g || a0.dim() != a.dim() {
            return Err(Error::DimensionMismatch(format!(
                "alpha shapes {:?} and {:?} for {g} groups",
                a.dim(),
                a0.dim()
            )));
        }
    }
    let dist = |i: usize, j: usize| match alpha {
        None => sq_dist(&beta[i], &beta0[j]).sqrt(),
        Some((a, a0)) => {
            let t = a.ncols() as f64;
            let da: f64 = a.row(i).iter().zip(a0.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            sq_dist(&beta[i], &beta0[j]) + da / t
        }
    };
    let directed = |forward: bool| {
        (0..g)
            .map(|i| {
                (0..g)
                    .map(|j| if forward { dist(i, j) } else { dist(j, i) })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    Ok(directed(true).max(directed(false)))
}

/// Relabeling `perm[estimated] = true` minimizing the summed Euclidean
/// distance between matched coefficient vectors.
pub fn align_labels(beta: &[Vec<f64>], beta0: &[Vec<f64>]) -> Result<Vec<usize>> {
    check_sets(beta, beta0)?;
    let g = beta.len();
    let cost: Vec<Vec<f64>> = (0..g)
        .map(|i| (0..g).map(|j| sq_dist(&beta[i], &beta0[j]).sqrt()).collect())
        .collect();
    Ok(min_cost_assignment(&cost))
}

/// Square min-cost assignment by the shortest augmenting path form of the
/// Hungarian method; returns the column of every row.
fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based potentials and matching, column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < min_to[j] {
                    min_to[j] = cur;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}

/// Average over units of the smallest squared distance, along the unit's
/// own regressor path, between the fitted values of two different groups:
/// `N^-1 sum_i min_{g != h} T^-1 sum_t (w_it'(b_g - b_h) + a_gt - a_ht)^2`.
pub fn separation_statistic(w: &Array3<f64>, beta: &[Vec<f64>], alpha: Option<&Array2<f64>>) -> Result<f64> {
    let (n, t, p) = w.dim();
    let g = beta.len();
    if g < 2 {
        return Err(Error::InvalidInput("separation needs at least 2 groups".into()));
    }
    if let Some(b) = beta.iter().find(|b| b.len() != p) {
        return Err(Error::DimensionMismatch(format!("coefficient of length {}, expected {p}", b.len())));
    }
    if let Some(a) = alpha {
        if a.dim() != (g, t) {
            return Err(Error::DimensionMismatch(format!("alpha is {:?}, expected {:?}", a.dim(), (g, t))));
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut best = f64::INFINITY;
        for a in 0..g {
            for b in 0..g {
                if a == b {
                    continue;
                }
                let mut acc = 0.0;
                for s in 0..t {
                    let mut diff: f64 = (0..p).map(|k| w[[i, s, k]] * (beta[a][k] - beta[b][k])).sum();
                    if let Some(al) = alpha {
                        diff += al[[a, s]] - al[[b, s]];
                    }
                    acc += diff * diff;
                }
                best = best.min(acc / t as f64);
            }
        }
        total += best;
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grp(labels: &[usize], g: usize) -> Grouping {
        Grouping::new(labels.to_vec(), g).unwrap()
    }

    #[test]
    fn hand_rand_index() {
        let ri = rand_index(&grp(&[0, 0, 1], 2), &grp(&[0, 1, 1], 2)).unwrap();
        assert!((ri - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn swapped_labels() {
        assert_eq!(rand_index(&grp(&[0, 1, 1, 0], 2), &grp(&[1, 0, 0, 1], 2)).unwrap(), 1.0);
    }

    #[test]
    fn rand_index_errors() {
        assert!(matches!(rand_index(&grp(&[0], 1), &grp(&[0], 1)), Err(Error::InvalidInput(_))));
        assert!(matches!(
            rand_index(&grp(&[0, 1], 2), &grp(&[0, 1, 1], 2)),
            Err(Error::LengthMismatch(2, 3))
        ));
    }

    #[test]
    fn hausdorff_cases() {
        let b = vec![vec![1.0], vec![-1.0]];
        assert_eq!(hausdorff(&b, &b, None).unwrap(), 0.0);
        assert_eq!(hausdorff(&b, &[vec![-1.0], vec![1.0]], None).unwrap(), 0.0);
        assert_eq!(hausdorff(&[vec![0.0], vec![0.0]], &b, None).unwrap(), 1.0);
    }

    #[test]
    fn hausdorff_with_alpha() {
        let b = vec![vec![0.0], vec![0.0]];
        let a = Array2::from_shape_vec((2, 2), vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let a0 = Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(hausdorff(&b, &b, Some((&a, &a0))).unwrap(), 0.0);
        let shifted = a0.mapv(|v| v + 2.0);
        // nearest pairs differ by 1 in both periods
        assert!((hausdorff(&b, &b, Some((&a, &shifted))).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn alignment() {
        let b0 = vec![vec![1.0], vec![-1.0]];
        assert_eq!(align_labels(&b0, &b0).unwrap(), vec![0, 1]);
        assert_eq!(align_labels(&[vec![-0.9], vec![1.1]], &b0).unwrap(), vec![1, 0]);
    }

    #[test]
    fn separation_hand() {
        let w = Array3::ones((3, 5, 1));
        assert_eq!(separation_statistic(&w, &[vec![1.0], vec![-1.0]], None).unwrap(), 4.0);
        assert_eq!(separation_statistic(&w, &[vec![0.5], vec![0.5]], None).unwrap(), 0.0);
        assert!(separation_statistic(&w, &[vec![1.0]], None).is_err());
    }
}
