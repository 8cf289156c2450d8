//! Clustering metrics against brute-force references: pair scans for ARI
//! and F, per-sample frequency counts for NMI, exhaustive matchings for ACC.

use std::collections::BTreeMap;

use orient_core::metrics::{acc, ari, evaluate, hungarian, nmi, pairwise_f};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn freq(labels: &[usize]) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    for &l in labels {
        *out.entry(l).or_insert(0.0) += 1.0;
    }
    out
}

fn brute_nmi(p: &[usize], t: &[usize]) -> f64 {
    let n = p.len() as f64;
    let (fp, ft) = (freq(p), freq(t));
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&a, &b) in p.iter().zip(t) {
        *joint.entry((a, b)).or_insert(0.0) += 1.0;
    }
    let h = |f: &BTreeMap<usize, f64>| -f.values().map(|c| c / n * (c / n).ln()).sum::<f64>();
    let (hp, ht) = (h(&fp), h(&ft));
    if hp == 0.0 && ht == 0.0 {
        return 1.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(a, b), &c)| c / n * ((c / n) / ((fp[&a] / n) * (ft[&b] / n))).ln())
        .sum();
    (mi / (0.5 * (hp + ht))).clamp(0.0, 1.0)
}

/// (same-same, same-pred only, same-truth only, different-different)
fn pair_counts(p: &[usize], t: &[usize]) -> (f64, f64, f64, f64) {
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..p.len() {
        for j in (i + 1)..p.len() {
            match (p[i] == p[j], t[i] == t[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    (a, b, c, d)
}

fn brute_ari(p: &[usize], t: &[usize]) -> f64 {
    let (a, b, c, d) = pair_counts(p, t);
    let denom = (a + b) * (b + d) + (a + c) * (c + d);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (a * d - b * c) / denom
}

fn brute_f(p: &[usize], t: &[usize]) -> f64 {
    let (a, b, c, _) = pair_counts(p, t);
    if a + b == 0.0 && a + c == 0.0 {
        return 1.0;
    }
    if a == 0.0 {
        return 0.0;
    }
    let (prec, rec) = (a / (a + b), a / (a + c));
    2.0 * prec * rec / (prec + rec)
}

fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items];
    }
    let mut out = Vec::new();
    for k in 0..items.len() {
        let mut rest = items.clone();
        let head = rest.remove(k);
        for mut tail in permutations(rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Best one-to-one cluster-to-class map by trying every permutation.
fn brute_acc(p: &[usize], t: &[usize]) -> f64 {
    let pk: Vec<usize> = freq(p).keys().copied().collect();
    let tk: Vec<usize> = freq(t).keys().copied().collect();
    let size = pk.len().max(tk.len());
    let mut best = 0;
    for perm in permutations((0..size).collect()) {
        // predicted cluster pk[u] maps to class tk[perm[u]] when it exists
        let hits = p
            .iter()
            .zip(t)
            .filter(|&(a, b)| {
                let u = pk.iter().position(|x| x == a).unwrap();
                tk.get(perm[u]) == Some(b)
            })
            .count();
        best = best.max(hits);
    }
    best as f64 / p.len() as f64
}

fn random_partitions(seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=30);
    let (kp, kt) = (rng.random_range(1..=4), rng.random_range(1..=4));
    // sparse label values exercise relabeling
    let p = (0..n).map(|_| 3 * rng.random_range(0..kp) + 1).collect();
    let t = (0..n).map(|_| rng.random_range(0..kt) + 10).collect();
    (p, t)
}

#[test]
fn metrics_equal_brute_force_on_50_partition_pairs() {
    for seed in 0..50 {
        let (p, t) = random_partitions(seed);
        let m = evaluate(&p, &t).unwrap();
        assert!((m.nmi - brute_nmi(&p, &t)).abs() < 1e-9, "seed {seed}: nmi");
        assert!(
            (m.ari - brute_ari(&p, &t)).abs() < 1e-9,
            "seed {seed}: ari {} vs {}",
            m.ari,
            brute_ari(&p, &t)
        );
        assert!((m.f - brute_f(&p, &t)).abs() < 1e-9, "seed {seed}: f");
        assert!((m.acc - brute_acc(&p, &t)).abs() < 1e-9, "seed {seed}: acc");
    }
}

#[test]
fn acc_equals_factorial_enumeration_up_to_four_clusters() {
    for seed in 0..300 {
        let (p, t) = random_partitions(seed + 10_000);
        assert!((acc(&p, &t).unwrap() - brute_acc(&p, &t)).abs() < 1e-12, "seed {seed}");
    }
}

#[test]
fn hungarian_is_optimal_on_random_square_costs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.random_range(1..=6);
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(0..10) as f64).collect())
            .collect();
        let a = hungarian(&cost);
        let mut cols = a.clone();
        cols.sort_unstable();
        assert_eq!(cols, (0..n).collect::<Vec<_>>(), "assignment is a permutation");
        let got: f64 = a.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
        let best = permutations((0..n).collect())
            .into_iter()
            .map(|perm| perm.iter().enumerate().map(|(r, &c)| cost[r][c]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(got, best);
    }
}

proptest! {
    #[test]
    fn metrics_are_label_permutation_invariant(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..30),
        shift in 1usize..50,
    ) {
        let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let renamed: Vec<usize> = p.iter().map(|&x| (3 - x) * 7 + shift).collect();
        let a = evaluate(&p, &t).unwrap();
        let b = evaluate(&renamed, &t).unwrap();
        prop_assert!((a.nmi - b.nmi).abs() < 1e-12);
        prop_assert!((a.ari - b.ari).abs() < 1e-12);
        prop_assert_eq!(a.acc, b.acc);
        prop_assert!((a.f - b.f).abs() < 1e-12);
    }

    #[test]
    fn metrics_stay_in_range(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..30)) {
        let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        for v in [nmi(&p, &t).unwrap(), acc(&p, &t).unwrap(), pairwise_f(&p, &t).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(ari(&p, &t).unwrap() <= 1.0 + 1e-12);
    }
}
