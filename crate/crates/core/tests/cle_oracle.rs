//! Exhaustive check of the arborescence decoder on small random matrices.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subparse::parser::{decode_cle, tree_score};

/// Independent DFS check: every token reaches the root without revisiting.
fn is_arborescence(heads: &[usize], single_root: bool) -> bool {
    let n = heads.len();
    if single_root && heads.iter().filter(|&&h| h == 0).count() != 1 {
        return false;
    }
    for start in 1..=n {
        let mut seen = vec![false; n + 1];
        let mut v = start;
        while v != 0 {
            if seen[v] || heads[v - 1] == v || heads[v - 1] > n {
                return false;
            }
            seen[v] = true;
            v = heads[v - 1];
        }
    }
    true
}

fn brute_force(scores: &Array2<f64>, single_root: bool) -> f64 {
    let n = scores.nrows() - 1;
    let mut heads = vec![0usize; n];
    let mut best = f64::NEG_INFINITY;
    loop {
        if is_arborescence(&heads, single_root) {
            let s: f64 = heads.iter().enumerate().map(|(i, &h)| scores[(h, i + 1)]).sum();
            best = best.max(s);
        }
        // Odometer over all head vectors in [0, n]^n.
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            heads[i] += 1;
            if heads[i] <= n {
                break;
            }
            heads[i] = 0;
            i += 1;
        }
    }
}

fn with_root(heads: &[usize]) -> Vec<usize> {
    let mut v = vec![0];
    v.extend_from_slice(heads);
    v
}

#[test]
fn decoder_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 2..=6 {
        for _ in 0..200 {
            let scores = Array2::from_shape_fn((n + 1, n + 1), |_| rng.random_range(-10..=10) as f64);
            for single_root in [true, false] {
                let heads = decode_cle(&scores, single_root).unwrap();
                assert!(is_arborescence(&heads, single_root), "{heads:?}");
                let got = tree_score(&scores, &with_root(&heads));
                assert_eq!(got, brute_force(&scores, single_root), "n={n} single_root={single_root}\n{scores}");
            }
        }
    }
}

#[test]
fn uniform_shift_leaves_the_tree_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let n = rng.random_range(1..=8);
        let scores = Array2::from_shape_fn((n + 1, n + 1), |_| rng.random::<f64>());
        let shifted = &scores + 3.5;
        assert_eq!(decode_cle(&scores, true).unwrap(), decode_cle(&shifted, true).unwrap());
    }
}
