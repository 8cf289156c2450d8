//! Constraint closure and indicator matrices against brute-force fixed
//! points computed from the raw edge lists.

use std::collections::BTreeSet;

use orient_core::constraints::{ConstraintSource, ConstraintStore, Link};
use orient_core::numerics::Matrix;
use orient_core::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Edge = (usize, usize);
type PairSet = BTreeSet<Edge>;

/// Dense must/cannot relations closed under the two inference rules.
struct Relations {
    must: Vec<Vec<bool>>,
    cannot: Vec<Vec<bool>>,
}

fn brute_closure(n: usize, must_edges: &[(usize, usize)], cannot_edges: &[(usize, usize)]) -> Relations {
    let mut must = vec![vec![false; n]; n];
    let mut cannot = vec![vec![false; n]; n];
    for (i, row) in must.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(a, b) in must_edges {
        must[a][b] = true;
        must[b][a] = true;
    }
    for &(a, b) in cannot_edges {
        cannot[a][b] = true;
        cannot[b][a] = true;
    }
    loop {
        let mut changed = false;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if must[a][b] && must[b][c] && !must[a][c] {
                        must[a][c] = true;
                        changed = true;
                    }
                    if must[a][b] && cannot[b][c] && !cannot[a][c] {
                        cannot[a][c] = true;
                        cannot[c][a] = true;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return Relations { must, cannot };
        }
    }
}

impl Relations {
    fn relation(&self, a: usize, b: usize) -> Option<Link> {
        match (self.must[a][b], self.cannot[a][b]) {
            (true, false) => Some(Link::MustLink),
            (false, true) => Some(Link::CannotLink),
            (false, false) => None,
            (true, true) => panic!("brute-force closure is inconsistent at ({a}, {b})"),
        }
    }

    /// Derived pairs over the nodes that appear in some edge.
    fn pairs(&self, touched: &BTreeSet<usize>) -> (PairSet, PairSet) {
        let (mut m, mut c) = (BTreeSet::new(), BTreeSet::new());
        for &a in touched {
            for &b in touched {
                if a < b {
                    if self.must[a][b] {
                        m.insert((a, b));
                    }
                    if self.cannot[a][b] {
                        c.insert((a, b));
                    }
                }
            }
        }
        (m, c)
    }
}

fn touched(edges: &[(usize, usize)]) -> BTreeSet<usize> {
    edges.iter().flat_map(|&(a, b)| [a, b]).collect()
}

/// Consistent answers: random pairs answered from random labels.
fn consistent_answers(seed: u64) -> (usize, Vec<(usize, usize, Link)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=20);
    let classes = rng.random_range(1..=4);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..rng.random_range(0..2 * n) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a == b || !seen.insert((a.min(b), a.max(b))) {
            continue;
        }
        let link = if labels[a] == labels[b] {
            Link::MustLink
        } else {
            Link::CannotLink
        };
        out.push((a, b, link));
    }
    (n, out)
}

/// Applies answers, skipping those the closure already implies.
fn record_all(n: usize, answers: &[(usize, usize, Link)]) -> (ConstraintStore, Vec<Edge>, Vec<Edge>) {
    let mut store = ConstraintStore::new(n);
    let (mut must, mut cannot) = (Vec::new(), Vec::new());
    for &(a, b, link) in answers {
        match store.record_answer(a, b, link, 0, ConstraintSource::Queried) {
            Ok(()) => match link {
                Link::MustLink => must.push((a, b)),
                Link::CannotLink => cannot.push((a, b)),
            },
            Err(Error::AlreadyConstrained(..)) => {}
            Err(e) => panic!("consistent answer refused: {e}"),
        }
    }
    (store, must, cannot)
}

#[test]
fn closure_equals_brute_force_on_100_random_graphs() {
    for seed in 0..100 {
        let (n, answers) = consistent_answers(seed);
        let (store, must, cannot) = record_all(n, &answers);
        let brute = brute_closure(n, &must, &cannot);
        let mut edges = must.clone();
        edges.extend(&cannot);
        let (bm, bc) = brute.pairs(&touched(&edges));
        let derived = store.transitive_close();
        assert_eq!(derived.must, bm, "seed {seed}: must closure");
        assert_eq!(derived.cannot, bc, "seed {seed}: cannot closure");
        for a in 0..n {
            for b in 0..n {
                assert_eq!(
                    store.relation(a, b),
                    brute.relation(a, b),
                    "seed {seed}: relation({a}, {b})"
                );
            }
        }
    }
}

#[test]
fn closure_is_independent_of_answer_order() {
    for seed in 0..100 {
        let (n, mut answers) = consistent_answers(seed + 1000);
        let (reference, _, _) = record_all(n, &answers);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..3 {
            answers.shuffle(&mut rng);
            let (store, _, _) = record_all(n, &answers);
            assert_eq!(store.transitive_close(), reference.transitive_close(), "seed {seed}");
        }
    }
}

/// Every edge of an error chain is a recorded constraint, and exactly one
/// of them is a cannot-link when the closure said "apart".
fn check_chain(chain: &[usize], i: usize, j: usize, must: &[(usize, usize)], cannot: &[(usize, usize)], apart: bool) {
    assert_eq!(chain.first(), Some(&i), "chain {chain:?} starts at {i}");
    assert_eq!(chain.last(), Some(&j), "chain {chain:?} ends at {j}");
    let has =
        |set: &[(usize, usize)], a: usize, b: usize| set.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a));
    let mut cannot_steps = 0;
    for w in chain.windows(2) {
        if w[0] == w[1] {
            continue;
        }
        if has(must, w[0], w[1]) {
            continue;
        }
        assert!(has(cannot, w[0], w[1]), "chain step {w:?} is not a recorded constraint");
        cannot_steps += 1;
    }
    assert_eq!(cannot_steps, usize::from(apart), "chain {chain:?}");
}

#[test]
fn contradictions_are_always_detected() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let n = rng.random_range(3..=20);
        let mut store = ConstraintStore::new(n);
        let (mut must, mut cannot) = (Vec::new(), Vec::new());
        for _ in 0..4 * n {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            if a == b {
                continue;
            }
            // arbitrary answers, so some contradict earlier ones
            let link = if rng.random_bool(0.5) {
                Link::MustLink
            } else {
                Link::CannotLink
            };
            let expected = brute_closure(n, &must, &cannot).relation(a, b);
            let result = store.record_answer(a, b, link, 0, ConstraintSource::Queried);
            match (expected, result) {
                (None, Ok(())) => match link {
                    Link::MustLink => must.push((a, b)),
                    Link::CannotLink => cannot.push((a, b)),
                },
                (Some(e), Err(Error::AlreadyConstrained(..))) if e == link => {}
                (Some(e), Err(Error::InconsistentOracle { chain, .. })) if e != link => {
                    check_chain(&chain, a, b, &must, &cannot, e == Link::CannotLink);
                }
                (e, r) => panic!("seed {seed}: answer ({a}, {b}, {link}) with closure {e:?} gave {r:?}"),
            }
        }
    }
}

#[test]
fn textbook_contradictions() {
    let mut s = ConstraintStore::new(6);
    s.record_answer(1, 2, Link::MustLink, 0, ConstraintSource::Queried)
        .unwrap();
    s.record_answer(2, 3, Link::MustLink, 1, ConstraintSource::Queried)
        .unwrap();
    assert!(matches!(
        s.record_answer(1, 3, Link::CannotLink, 2, ConstraintSource::Queried),
        Err(Error::InconsistentOracle { .. })
    ));
    s.record_answer(3, 4, Link::CannotLink, 3, ConstraintSource::Queried)
        .unwrap();
    s.record_answer(4, 5, Link::MustLink, 4, ConstraintSource::Queried)
        .unwrap();
    assert!(matches!(
        s.record_answer(1, 5, Link::MustLink, 5, ConstraintSource::Queried),
        Err(Error::InconsistentOracle { .. })
    ));
    // the refused answers left no trace
    assert_eq!(s.answer_count(), 4);
    assert_eq!(s.relation(1, 5), Some(Link::CannotLink));
}

/// Brute-force indicator matrices for a batch, from the raw edge lists.
fn brute_views(store: &ConstraintStore, batch: &[usize]) -> (Matrix, Matrix, Matrix, usize) {
    let n = store.len();
    let must: Vec<_> = store.must_links().iter().copied().collect();
    let pseudo: Vec<_> = store.pseudo_links().iter().copied().collect();
    let cannot: Vec<_> = store.cannot_links().iter().copied().collect();
    let mut all_must = must.clone();
    all_must.extend(&pseudo);
    let full = brute_closure(n, &all_must, &cannot);
    let oracle_only = brute_closure(n, &must, &[]);
    let b = batch.len();
    let sample = |r: usize| batch[r % b];
    let entry = |f: &dyn Fn(usize, usize) -> bool| {
        Matrix::from_fn(2 * b, 2 * b, |x, y| {
            let (sx, sy) = (sample(x), sample(y));
            f64::from(u8::from(x % b != y % b && f(sx, sy)))
        })
    };
    let plus = entry(&|a, c| full.must[a][c]);
    let minus = entry(&|a, c| full.cannot[a][c]);
    let aug = Matrix::from_fn(2 * b, 2 * b, |x, y| f64::from(u8::from(x != y && x % b == y % b)));
    let mut n_plus = 0;
    for x in 0..2 * b {
        for y in (x + 1)..2 * b {
            if x % b != y % b && oracle_only.must[sample(x)][sample(y)] {
                n_plus += 1;
            }
        }
    }
    (aug, plus, minus, n_plus)
}

fn random_store(seed: u64, with_pseudo: bool) -> ConstraintStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 30;
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let mut store = ConstraintStore::new(n);
    for step in 0..rng.random_range(0..40) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a == b || store.is_constrained(a, b) {
            continue;
        }
        let source = if with_pseudo && rng.random_bool(0.2) {
            ConstraintSource::Pseudo
        } else {
            ConstraintSource::Queried
        };
        let link = if source == ConstraintSource::Pseudo || labels[a] == labels[b] {
            Link::MustLink
        } else {
            Link::CannotLink
        };
        // pseudo links may be wrong; oracle answers then override them
        store.record_answer(a, b, link, step, source).unwrap();
    }
    store
}

#[test]
fn indicator_views_match_entrywise_predicates() {
    for seed in 0..100 {
        let store = random_store(seed, seed % 2 == 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
        let mut ids: Vec<usize> = (0..store.len()).collect();
        ids.shuffle(&mut rng);
        let batch = &ids[..rng.random_range(2..=12)];
        let views = store.indicator_views(batch).unwrap();
        let (aug, plus, minus, n_plus) = brute_views(&store, batch);
        assert_eq!(views.aug.to_matrix(), aug, "seed {seed}: aug");
        assert_eq!(views.plus.to_matrix(), plus, "seed {seed}: plus");
        assert_eq!(views.minus.to_matrix(), minus, "seed {seed}: minus");
        assert_eq!(views.n_plus, n_plus, "seed {seed}: n_plus");
    }
}

#[test]
fn oracle_answers_override_contradicted_pseudo_links() {
    let mut s = ConstraintStore::new(5);
    s.record_answer(0, 1, Link::MustLink, 0, ConstraintSource::Pseudo)
        .unwrap();
    s.record_answer(3, 4, Link::MustLink, 0, ConstraintSource::Pseudo)
        .unwrap();
    s.record_answer(1, 2, Link::MustLink, 1, ConstraintSource::Queried)
        .unwrap();
    assert_eq!(s.relation(0, 2), Some(Link::MustLink));
    // contradicts the closure only through the pseudo link (0, 1)
    s.record_answer(0, 2, Link::CannotLink, 2, ConstraintSource::Queried)
        .unwrap();
    assert_eq!(s.relation(0, 1), Some(Link::CannotLink));
    assert_eq!(s.pseudo_links().iter().copied().collect::<Vec<_>>(), vec![(3, 4)]);
    assert_eq!(s.relation(3, 4), Some(Link::MustLink));
    // oracle-only contradictions still fail
    assert!(matches!(
        s.record_answer(1, 0, Link::MustLink, 3, ConstraintSource::Queried),
        Err(Error::InconsistentOracle { .. })
    ));
    assert_eq!(s.answer_count(), 2);
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn high_confidence_extension_matches_exhaustive_scan() {
    let mut total_added = 0;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = 10;
        // three tight directions so many pairs are highly similar
        let centers: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let rows: Vec<Vec<f64>> = (0..2 * b)
            .map(|r| {
                let c = &centers[(r % b) % 3];
                c.iter().map(|x| x + rng.random_range(-0.05..0.05)).collect()
            })
            .collect();
        let z = Matrix::from_rows(&rows).unwrap();
        let mut store = ConstraintStore::new(b);
        if seed % 2 == 0 {
            store
                .record_answer(0, 3, Link::CannotLink, 0, ConstraintSource::Queried)
                .unwrap();
        }
        let ids: Vec<usize> = (0..b).collect();
        let max_new = rng.random_range(1..8);
        let threshold = 0.95;

        // exhaustive scan: sort by similarity, skip pairs already implied
        let mut cands = Vec::new();
        for x in 0..b {
            for y in (x + 1)..b {
                let s = 0.5
                    * (dot(&normalize(&rows[x]), &normalize(&rows[y]))
                        + dot(&normalize(&rows[x + b]), &normalize(&rows[y + b])));
                if s > threshold && store.relation(x, y).is_none() {
                    cands.push((s, (x, y)));
                }
            }
        }
        cands.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)));
        let mut must: Vec<(usize, usize)> = Vec::new();
        let cannot: Vec<(usize, usize)> = store.cannot_links().iter().copied().collect();
        let mut expected = Vec::new();
        for (_, (x, y)) in cands {
            if expected.len() == max_new {
                break;
            }
            if brute_closure(b, &must, &cannot).relation(x, y).is_some() {
                continue;
            }
            must.push((x, y));
            expected.push((x, y));
        }

        let added = store.high_confidence_extend(&ids, &z, threshold, max_new, 1).unwrap();
        assert_eq!(added, expected, "seed {seed}");
        total_added += added.len();
        assert_eq!(
            store.answer_count(),
            usize::from(seed % 2 == 0),
            "pseudo links are not answers"
        );
        let views = store.indicator_views(&ids).unwrap();
        assert_eq!(views.n_plus, 0, "pseudo links stay out of N+");
    }
    assert!(total_added > 50);
}

#[test]
fn extension_boundaries() {
    let z = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.01], [1.0, 0.0], [1.0, 0.0], [1.0, 0.01]]).unwrap();
    let mut s = ConstraintStore::new(3);
    assert!(s.high_confidence_extend(&[0, 1, 2], &z, 1.0, 10, 0).unwrap().is_empty());
    let added = s.high_confidence_extend(&[0, 1, 2], &z, 0.99, 1, 0).unwrap();
    assert_eq!(added, vec![(0, 1)]);
    assert!(s.high_confidence_extend(&[0, 1, 2], &z, 0.0, 1, 0).is_err());
}

proptest! {
    #[test]
    fn views_are_symmetric_and_disjoint(seed in 0u64..10_000, size in 2usize..10) {
        let store = random_store(seed, true);
        let batch: Vec<usize> = (0..size).map(|k| (k * 7 + seed as usize) % store.len()).collect::<BTreeSet<_>>().into_iter().collect();
        prop_assume!(batch.len() >= 2);
        let v = store.indicator_views(&batch).unwrap();
        let rows = v.rows();
        for x in 0..rows {
            prop_assert!(!v.plus.get(x, x) && !v.minus.get(x, x));
            for y in 0..rows {
                prop_assert_eq!(v.plus.get(x, y), v.plus.get(y, x));
                prop_assert_eq!(v.minus.get(x, y), v.minus.get(y, x));
                prop_assert!(!(v.plus.get(x, y) && v.minus.get(x, y)));
                prop_assert_eq!(v.aug.get(x, y), x != y && x % batch.len() == y % batch.len());
            }
        }
    }
}
