mod common;

use common::*;
use ndarray::{Array2, Array3};
use proptest::prelude::*;

use grpiv::metrics::rand_counts;
use grpiv::{align_labels, hausdorff, rand_index, separation_statistic, Grouping};

fn pairwise_ri(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let mut agree = 0;
    let mut total = 0;
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    agree as f64 / total as f64
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn labels_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, usize, usize)> {
    (2usize..30, 1usize..5, 1usize..5).prop_flat_map(|(n, g1, g2)| {
        (
            proptest::collection::vec(0..g1, n),
            proptest::collection::vec(0..g2, n),
            Just(g1),
            Just(g2),
        )
    })
}

fn coef_sets() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..6, 1usize..4).prop_flat_map(|(g, d)| {
        let set = proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, d), g);
        (set.clone(), set)
    })
}

#[test]
fn rand_index_hand_values() {
    let a = Grouping::new(vec![0, 0, 1, 1], 2).unwrap();
    let b = Grouping::new(vec![1, 1, 0, 0], 2).unwrap();
    let c = Grouping::new(vec![0, 1, 0, 1], 2).unwrap();
    assert_eq!(rand_index(&a, &b).unwrap(), 1.0);
    // only pairs {0,3} and {1,2} agree
    assert!((rand_index(&a, &c).unwrap() - 2.0 / 6.0).abs() < 1e-15);
    assert!(rand_index(&a, &Grouping::new(vec![0, 0, 1], 2).unwrap()).is_err());
}

#[test]
fn hausdorff_hand_value() {
    let b = vec![vec![1.0], vec![-1.0]];
    let b0 = vec![vec![1.5], vec![-0.8]];
    assert!((hausdorff(&b, &b0, None).unwrap() - 0.5).abs() < 1e-15);
    let a = Array2::zeros((2, 4));
    let a0 = Array2::from_elem((2, 4), 1.0);
    // joint squared form: 0.25 + 1
    assert!((hausdorff(&b, &b0, Some((&a, &a0))).unwrap() - 1.25).abs() < 1e-15);
}

#[test]
fn separation_hand_value() {
    let w = Array3::from_elem((3, 2, 1), 1.0);
    let sep = separation_statistic(&w, &[vec![1.0], vec![-1.0]], None).unwrap();
    assert!((sep - 4.0).abs() < 1e-15);
    assert!(separation_statistic(&w, &[vec![1.0]], None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rand_index_matches_pairwise((a, b, g1, g2) in labels_strategy(), seed in any::<u64>()) {
        let ga = Grouping::new(a.clone(), g1).unwrap();
        let gb = Grouping::new(b.clone(), g2).unwrap();
        let n = a.len() as u64;
        let counts = rand_counts(&ga, &gb).unwrap();
        prop_assert_eq!(counts.total(), n * (n - 1) / 2);
        let ri = rand_index(&ga, &gb).unwrap();
        prop_assert!((ri - pairwise_ri(&a, &b)).abs() < 1e-12);
        prop_assert!((ri - rand_index(&gb, &ga).unwrap()).abs() < 1e-15);
        prop_assert_eq!(rand_index(&ga, &ga).unwrap(), 1.0);

        let mut r = rng(seed);
        let mut perm: Vec<usize> = (0..g1).collect();
        for k in (1..g1).rev() {
            perm.swap(k, below(&mut r, k + 1));
        }
        let relabeled = Grouping::new(a.iter().map(|&l| perm[l]).collect(), g1).unwrap();
        prop_assert!((rand_index(&relabeled, &gb).unwrap() - ri).abs() < 1e-15);
    }

    #[test]
    fn hausdorff_is_a_set_distance((b, b0) in coef_sets(), seed in any::<u64>()) {
        let h = hausdorff(&b, &b0, None).unwrap();
        let oracle = {
            let dir = |p: &[Vec<f64>], q: &[Vec<f64>]| p.iter()
                .map(|x| q.iter().map(|y| dist(x, y)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max);
            dir(&b, &b0).max(dir(&b0, &b))
        };
        prop_assert!((h - oracle).abs() < 1e-12);
        prop_assert!((h - hausdorff(&b0, &b, None).unwrap()).abs() < 1e-15);
        prop_assert_eq!(hausdorff(&b, &b, None).unwrap(), 0.0);

        let mut r = rng(seed);
        let mut shuffled = b.clone();
        for k in (1..shuffled.len()).rev() {
            shuffled.swap(k, below(&mut r, k + 1));
        }
        prop_assert!((hausdorff(&shuffled, &b0, None).unwrap() - h).abs() < 1e-15);
    }

    #[test]
    fn alignment_is_optimal((b, b0) in coef_sets()) {
        let perm = align_labels(&b, &b0).unwrap();
        let g = b.len();
        let mut seen = perm.clone();
        seen.sort();
        prop_assert_eq!(seen, (0..g).collect::<Vec<_>>());
        let cost = |p: &[usize]| (0..g).map(|i| dist(&b[i], &b0[p[i]])).sum::<f64>();
        let best = permutations(g).iter().map(|p| cost(p)).fold(f64::INFINITY, f64::min);
        prop_assert!(cost(&perm) <= best + 1e-12);
    }
}
