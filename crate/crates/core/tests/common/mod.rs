#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use grpiv::{Grouping, PanelData};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unif(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let (a, b) = (unif(rng), unif(rng));
    (-2.0 * (1.0 - a).ln()).sqrt() * (std::f64::consts::TAU * b).cos()
}

pub fn below(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (unif(rng) * n as f64) as usize
}

pub fn random_array3(rng: &mut ChaCha8Rng, n: usize, t: usize, k: usize) -> Array3<f64> {
    Array3::from_shape_fn((n, t, k), |_| gauss(rng))
}

/// Endogenous panel: x loads on z, y on x, plus noise.
pub fn random_panel(rng: &mut ChaCha8Rng, n: usize, t: usize, d: usize, m: usize) -> PanelData {
    let z = random_array3(rng, n, t, m);
    let mix: Vec<f64> = (0..m * d).map(|_| gauss(rng)).collect();
    let x = Array3::from_shape_fn((n, t, d), |(i, s, k)| {
        (0..m).map(|a| z[[i, s, a]] * mix[a * d + k]).sum::<f64>() + 0.5 * gauss(rng)
    });
    let y = Array2::from_shape_fn((n, t), |(i, s)| (0..d).map(|k| x[[i, s, k]]).sum::<f64>() + gauss(rng));
    PanelData::from_arrays(y, x, z).unwrap()
}

/// Uniform labels, redrawn until every group is used.
pub fn random_grouping(rng: &mut ChaCha8Rng, n: usize, g: usize) -> Grouping {
    loop {
        let labels: Vec<usize> = (0..n).map(|_| below(rng, g)).collect();
        let gr = Grouping::new(labels, g).unwrap();
        if gr.empty_groups().is_empty() {
            return gr;
        }
    }
}

/// Rows `(i, t)` of a `N x T x k` array stacked into an `NT x k` matrix for
/// the units in `units`.
pub fn stack(a: &Array3<f64>, units: &[usize]) -> DMatrix<f64> {
    let (_, t, k) = a.dim();
    DMatrix::from_fn(units.len() * t, k, |r, c| a[[units[r / t], r % t, c]])
}

pub fn stack_y(y: &Array2<f64>, units: &[usize]) -> DMatrix<f64> {
    let t = y.dim().1;
    DMatrix::from_fn(units.len() * t, 1, |r, _| y[[units[r / t], r % t]])
}

/// `(X'X)^-1 X'Y` through an explicit inverse.
pub fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    (x.transpose() * x).try_inverse().expect("invertible gram") * x.transpose() * y
}

pub fn members(gr: &Grouping, g: usize) -> Vec<usize> {
    (0..gr.n_units()).filter(|&i| gr.label(i) == g).collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
