mod common;

use std::collections::BTreeMap;

use common::{bfs_components, forward, same_partition};
use cpac::admm::{shuffled_items, BatchItem};
use cpac::constraints::{apply_constraints, ConstraintKind, ConstraintSet};
use cpac::extract::extract_clusters;
use cpac::graph::{compute_lambda, DegreeMean, DistanceSpace, EdgeKind, MknnGraph};
use cpac::metrics::{acc, nmi};
use cpac::nn::MlpAutoencoder;
use cpac::penalty::{geman_mcclure, Deltas, PenaltySchedule};
use ndarray::Array2;
use proptest::prelude::*;

fn graph_strategy() -> impl Strategy<Value = (Array2<f64>, MknnGraph)> {
    (3usize..30, 1usize..4).prop_flat_map(|(n, d)| {
        let points = prop::collection::vec(-10.0f64..10.0, n * d);
        let pairs = prop::collection::vec((0..n, 0..n), 1..3 * n);
        (points, pairs).prop_map(move |(values, pairs)| {
            let u = Array2::from_shape_vec((n, d), values).unwrap();
            let mut pairs: Vec<_> = pairs
                .into_iter()
                .filter(|(p, q)| p != q)
                .map(|(p, q)| (p.min(q), p.max(q), EdgeKind::Mutual))
                .collect();
            pairs.sort_by_key(|&(p, q, _)| (p, q));
            pairs.dedup_by_key(|&mut (p, q, _)| (p, q));
            if pairs.is_empty() {
                pairs.push((0, 1, EdgeKind::Mutual));
            }
            let g = MknnGraph::from_pairs(n, 3, pairs, DistanceSpace::Loaded, DegreeMean::AllPoints)
                .unwrap();
            (u, g)
        })
    })
}

fn labels_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0usize..5, n),
            prop::collection::vec(0usize..9, n),
        )
    })
}

fn kind_strategy() -> impl Strategy<Value = ConstraintKind> {
    prop_oneof![Just(ConstraintKind::MustLink), Just(ConstraintKind::CannotLink)]
}

fn edge_map(g: &MknnGraph) -> BTreeMap<(usize, usize), (u64, EdgeKind)> {
    g.edges()
        .iter()
        .map(|e| (e.key(), (e.weight.to_bits(), e.kind)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_the_threshold_never_adds_clusters((u, g) in graph_strategy(), a in 0.0f64..20.0, b in 0.0f64..20.0) {
        let (lo, hi) = (a.min(b), a.max(b));
        let fine = extract_clusters(&u, &g, lo).unwrap();
        let coarse = extract_clusters(&u, &g, hi).unwrap();
        prop_assert!(coarse.count <= fine.count);
    }

    #[test]
    fn clusters_are_components_of_the_kept_edges((u, g) in graph_strategy(), tau in 0.0f64..20.0) {
        let got = extract_clusters(&u, &g, tau).unwrap();
        let lengths = g.edge_lengths(&u);
        let kept: Vec<(usize, usize)> = g
            .edges()
            .iter()
            .zip(&lengths)
            .filter(|(_, &l)| l <= tau)
            .map(|(e, _)| e.key())
            .collect();
        prop_assert!(same_partition(&got.labels, &bfs_components(g.n(), &kept)));
        // ψ ⊆ ε: every kept edge lies inside one cluster.
        for (e, &l) in g.edges().iter().zip(&lengths) {
            if l <= tau {
                prop_assert_eq!(got.labels[e.p], got.labels[e.q]);
            }
        }
    }

    #[test]
    fn extraction_commutes_with_point_permutation(
        (u, g) in graph_strategy(),
        tau in 0.0f64..20.0,
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let n = g.n();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut common::rng(seed));
        // Point i moves to position perm[i].
        let mut pu = Array2::zeros(u.raw_dim());
        for i in 0..n {
            pu.row_mut(perm[i]).assign(&u.row(i));
        }
        let pairs = g
            .edges()
            .iter()
            .map(|e| (perm[e.p].min(perm[e.q]), perm[e.p].max(perm[e.q]), e.kind))
            .collect();
        let pg = MknnGraph::from_pairs(n, g.k(), pairs, DistanceSpace::Loaded, DegreeMean::AllPoints).unwrap();
        let a = extract_clusters(&u, &g, tau).unwrap().labels;
        let b = extract_clusters(&pu, &pg, tau).unwrap().labels;
        let moved: Vec<usize> = (0..n).map(|i| b[perm[i]]).collect();
        prop_assert!(same_partition(&a, &moved));
    }

    #[test]
    fn constraints_apply_idempotently_and_locally(
        (_, g) in graph_strategy(),
        labels in prop::collection::vec((0usize..30, 0usize..30, kind_strategy()), 0..12),
    ) {
        let n = g.n();
        let mut cs = ConstraintSet::new();
        for (t, (a, b, kind)) in labels.into_iter().enumerate() {
            let (a, b) = (a % n, b % n);
            if a != b {
                cs.record(a, b, kind, t as u64).unwrap();
            }
        }
        let once = apply_constraints(&g, &cs).unwrap();
        let twice = apply_constraints(&once, &cs).unwrap();
        prop_assert_eq!(edge_map(&once), edge_map(&twice));
        prop_assert_eq!(once.unary_weights(), g.unary_weights());

        let before = edge_map(&g);
        let after = edge_map(&once);
        for key in before.keys().chain(after.keys()) {
            if cs.get(key.0, key.1).is_none() {
                prop_assert_eq!(before.get(key), after.get(key));
            }
        }
        for c in cs.entries() {
            match c.kind {
                ConstraintKind::CannotLink => prop_assert!(!after.contains_key(&(c.p, c.q))),
                ConstraintKind::MustLink => prop_assert!(after.contains_key(&(c.p, c.q))),
            }
        }
    }

    #[test]
    fn latest_label_wins(first in kind_strategy(), second in kind_strategy(), a in 0usize..20, b in 0usize..20) {
        prop_assume!(a != b);
        let mut cs = ConstraintSet::new();
        cs.record(a, b, first, 1).unwrap();
        cs.record(b, a, second, 2).unwrap();
        prop_assert_eq!(cs.len(), 1);
        prop_assert_eq!(cs.get(a, b).unwrap().kind, second);
    }

    #[test]
    fn lambda_scales_with_the_embedding((u, g) in graph_strategy(), c in 0.01f64..100.0) {
        prop_assume!(u.iter().any(|&v| v != 0.0));
        let base = compute_lambda(&u, &g).unwrap();
        let scaled = compute_lambda(&(&u * -c), &g).unwrap();
        prop_assert!((scaled - c * base).abs() <= 1e-9 * c * base);
    }

    #[test]
    fn metrics_stay_in_range_and_ignore_relabeling((truth, predicted) in labels_strategy(), shift in 1usize..50) {
        let n = nmi(&truth, &predicted).unwrap();
        let a = acc(&truth, &predicted).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        prop_assert!((0.0..=1.0).contains(&a));
        let renamed: Vec<usize> = predicted.iter().map(|&l| (l * 31 + shift) % 1000).collect();
        let renamed_truth: Vec<usize> = truth.iter().map(|&l| 4 - l).collect();
        prop_assert!((nmi(&renamed_truth, &renamed).unwrap() - n).abs() < 1e-12);
        prop_assert!((acc(&renamed_truth, &renamed).unwrap() - a).abs() < 1e-12);
        prop_assert!((nmi(&truth, &truth).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(acc(&truth, &truth).unwrap(), 1.0);
    }

    #[test]
    fn evaluation_encoding_ignores_dropout(seed in any::<u64>(), rate in 0.0f64..0.9, n in 1usize..12) {
        let mut r = common::rng(seed);
        let net = MlpAutoencoder::new(5, &[7, 3], rate, &mut r).unwrap();
        let x = common::normal_matrix(n, 5, &mut r);
        let (z, _) = forward(&net, &x);
        let got = net.encode(&x, None).unwrap();
        prop_assert!(got.iter().zip(z.iter()).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs())));
    }

    #[test]
    fn every_edge_is_visited_once_per_epoch((_, g) in graph_strategy(), seed in any::<u64>(), epoch in 0usize..500) {
        let items = shuffled_items(&g, seed, epoch);
        let mut seen = vec![0usize; g.edges().len()];
        let mut unary = vec![0.0; g.n()];
        for item in &items {
            match *item {
                BatchItem::Edge(i) => {
                    seen[i] += 1;
                    let e = &g.edges()[i];
                    unary[e.p] += g.unary_weights()[e.p];
                    unary[e.q] += g.unary_weights()[e.q];
                }
                BatchItem::Unary { point, weight } => unary[point] += weight,
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        // Every point's unary terms add up to at least one full visit.
        prop_assert!(unary.iter().all(|&w| w >= 1.0 - 1e-9));
    }

    #[test]
    fn schedule_follows_the_closed_form(
        mu1 in 1e-3f64..1e3,
        mu2 in 1e-3f64..1e3,
        d1 in 1e-4f64..10.0,
        d2 in 1e-4f64..10.0,
        interval in prop_oneof![Just(10usize), Just(60usize), 1usize..30],
        epochs in 0usize..400,
    ) {
        let deltas = Deltas { delta1: d1, delta2: d2 };
        let mut s = PenaltySchedule::new(mu1, mu2, deltas, interval).unwrap();
        let (start1, start2) = (s.mu1, s.mu2);
        let mut prev = (s.mu1, s.mu2);
        for t in 1..=epochs {
            s.step();
            let h = t / interval;
            prop_assert!(s.mu1 <= prev.0 && s.mu2 <= prev.1);
            prop_assert!(s.mu1 >= d1 && s.mu2 >= d2);
            prop_assert!((s.mu1 - PenaltySchedule::halved(start1, d1, h)).abs() <= 1e-12 * start1);
            prop_assert!((s.mu2 - PenaltySchedule::halved(start2, d2, h)).abs() <= 1e-12 * start2);
            prev = (s.mu1, s.mu2);
        }
    }

    #[test]
    fn penalty_is_bounded(s in 0.0f64..1e9, mu in 1e-6f64..1e6) {
        let v = geman_mcclure(s, mu).unwrap();
        prop_assert!(v >= 0.0 && v < mu);
        prop_assert!(v <= s);
    }
}
