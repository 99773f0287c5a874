mod common;

use common::*;
use nai_core::data::{read_features, write_features};
use nai_core::engine::{Engine, ExecutionMode, NapConfig};
use nai_core::graph::{
    build_graph, build_graph_with_report, connected_components, extend_graph, propagate_hop,
    NormKind, Support,
};
use nai_core::metering::{meter_macs, KernelEvent, MacsTrace};
use nai_core::propagation::{
    layered_support, precompute_stack, stationary_state, stationary_summary, update_summary,
    Backend,
};
use nai_core::train::tempered_softmax;
use nai_core::Matrix;
use proptest::prelude::*;
use rand::Rng;

fn norm_strategy() -> impl Strategy<Value = NormKind> {
    prop_oneof![
        Just(NormKind::REVERSE_TRANSITION),
        Just(NormKind::SYMMETRIC),
        Just(NormKind::TRANSITION),
        (0.0..=1.0f64).prop_map(|r| NormKind::new(r).unwrap()),
    ]
}

fn backend_strategy() -> impl Strategy<Value = Backend> {
    prop_oneof![Just(Backend::Sgc), Just(Backend::S2gc), Just(Backend::Sign)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn built_graphs_are_simple_and_symmetric(
        n in 1usize..30,
        raw in proptest::collection::vec((0usize..30, 0usize..30), 0..120),
    ) {
        let edges: Vec<(usize, usize)> = raw.into_iter().map(|(u, v)| (u % n, v % n)).collect();
        let (g, report) = build_graph_with_report(&edges, n).unwrap();
        let mut distinct: Vec<(usize, usize)> = edges.iter().filter(|(u, v)| u != v).map(|&(u, v)| (u.min(v), u.max(v))).collect();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert_eq!(g.m(), distinct.len());
        prop_assert_eq!(report.self_loops_dropped, edges.iter().filter(|(u, v)| u == v).count());
        for u in 0..n {
            let nb = g.neighbors(u);
            prop_assert!(nb.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(!nb.contains(&u));
            for &v in nb {
                prop_assert!(g.neighbors(v).contains(&u));
            }
        }
        prop_assert_eq!(g.edges().collect::<Vec<_>>(), distinct);
    }

    #[test]
    fn transition_rows_and_reverse_columns_are_stochastic(n in 2usize..25, p in 0.0..0.5f64, seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(n, p, &mut r);
        let ones = Matrix::from_vec(n, 1, vec![1.0; n]).unwrap();
        let row = propagate_hop(&g, NormKind::REVERSE_TRANSITION, &ones, Support::All).unwrap();
        for i in 0..n {
            prop_assert!((row.get(i, 0) - 1.0).abs() < 1e-12);
        }
        let x = uniform_matrix(n, 3, &mut r);
        let y = propagate_hop(&g, NormKind::TRANSITION, &x, Support::All).unwrap();
        for j in 0..3 {
            let before: f64 = (0..n).map(|i| x.get(i, j)).sum();
            let after: f64 = (0..n).map(|i| y.get(i, j)).sum();
            prop_assert!((before - after).abs() < 1e-10);
        }
    }

    #[test]
    fn one_hop_matches_the_dense_operator(n in 1usize..20, p in 0.0..0.6f64, norm in norm_strategy(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(n, p, &mut r);
        let x = uniform_matrix(n, 4, &mut r);
        let want = dense_operator(&g, norm.r()).matmul(&x);
        let got = propagate_hop(&g, norm, &x, Support::All).unwrap();
        prop_assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn restricted_hop_equals_full_rows(n in 1usize..25, p in 0.0..0.5f64, norm in norm_strategy(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(n, p, &mut r);
        let x = uniform_matrix(n, 3, &mut r);
        let mut nodes: Vec<usize> = (0..n).filter(|_| r.random::<bool>()).collect();
        if nodes.is_empty() {
            nodes.push(0);
        }
        let full = propagate_hop(&g, norm, &x, Support::All).unwrap();
        let part = propagate_hop(&g, norm, &x, Support::Nodes(&nodes)).unwrap();
        for v in 0..n {
            if nodes.contains(&v) {
                prop_assert_eq!(part.row(v), full.row(v));
            } else {
                prop_assert!(part.row(v).iter().all(|&z| z == 0.0));
            }
        }
    }

    #[test]
    fn support_layers_are_closed_neighborhoods(n in 1usize..30, p in 0.0..0.3f64, depth in 1usize..5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(n, p, &mut r);
        let batch: Vec<usize> = (0..n).filter(|_| r.random::<f64>() < 0.2).chain([n - 1]).collect();
        let layers = layered_support(&g, &batch, depth).unwrap();
        let mut sorted = batch.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(layers.targets(), sorted.as_slice());
        prop_assert_eq!(layers.depth(), depth);
        for l in 0..depth {
            let inner = layers.layer(l + 1);
            let mut want: Vec<usize> = inner.to_vec();
            for &u in inner {
                want.extend_from_slice(g.neighbors(u));
            }
            want.sort_unstable();
            want.dedup();
            prop_assert_eq!(layers.layer(l), want.as_slice());
        }
    }

    #[test]
    fn extension_equals_rebuild(n in 1usize..20, add in 0usize..8, p in 0.0..0.3f64, seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(n, p, &mut r);
        let total = n + add;
        let new_edges: Vec<(usize, usize)> = (0..r.random_range(0..12usize))
            .map(|_| (r.random_range(0..total), r.random_range(n.min(total - 1)..total)))
            .filter(|(u, v)| u != v)
            .collect();
        let ext = extend_graph(&g, add, &new_edges).unwrap();
        let all: Vec<(usize, usize)> = g.edges().chain(new_edges.iter().copied()).collect();
        let rebuilt = build_graph(&all, total).unwrap();
        prop_assert_eq!(&ext.graph, &rebuilt);
        prop_assert_eq!(ext.graph.components(), &connected_components(&rebuilt));
        prop_assert_eq!(ext.old_n, n);
        for &(v, before, after) in &ext.delta.changes {
            prop_assert_eq!(g.degree(v), before);
            prop_assert_eq!(ext.graph.degree(v), after);
        }
    }

    #[test]
    fn stationary_rows_are_fixed_points(n in 1usize..30, p in 0.0..0.4f64, norm in norm_strategy(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(n, p, &mut r);
        let x = uniform_matrix(n, 3, &mut r);
        let s = stationary_summary(&g, norm, &x).unwrap();
        let mut inf = Matrix::zeros(n, 3);
        for i in 0..n {
            inf.row_mut(i).copy_from_slice(&stationary_state(&s, i).unwrap());
        }
        let next = propagate_hop(&g, norm, &inf, Support::All).unwrap();
        prop_assert!(next.max_abs_diff(&inf) < 1e-10);
    }

    #[test]
    fn incremental_summary_equals_recomputation(n in 1usize..20, steps in 1usize..6, norm in norm_strategy(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut g = random_graph(n, 0.2, &mut r);
        let mut x = uniform_matrix(n, 2, &mut r);
        let mut s = stationary_summary(&g, norm, &x).unwrap();
        for _ in 0..steps {
            let add = r.random_range(0..4usize);
            let total = g.n() + add;
            let edges: Vec<(usize, usize)> = (0..r.random_range(0..6usize))
                .map(|_| (r.random_range(0..total), r.random_range(0..total)))
                .filter(|(u, v)| u != v)
                .collect();
            let ext = extend_graph(&g, add, &edges).unwrap();
            let mut data = x.as_slice().to_vec();
            data.extend((0..add * 2).map(|_| r.random_range(-1.0..1.0)));
            x = Matrix::from_vec(total, 2, data).unwrap();
            s = update_summary(&s, &ext, &x).unwrap();
            g = ext.graph;
        }
        let scratch = stationary_summary(&g, norm, &x).unwrap();
        prop_assert!(s.max_relative_diff(&scratch) < 1e-9);
    }

    #[test]
    fn tempered_softmax_is_a_distribution_with_a_stable_argmax(
        logits in proptest::collection::vec(-30.0..30.0f64, 2..8),
        t in 0.05..20.0f64,
    ) {
        let p = tempered_softmax(&logits, t).unwrap();
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let arg = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let best = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if logits.iter().filter(|&&z| z == best).count() == 1 {
            prop_assert_eq!(arg(&p), arg(&logits));
        }
    }

    #[test]
    fn feature_files_round_trip_bit_exactly(rows in 1usize..12, cols in 1usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| (r.random::<f32>() * 1e3 - 5e2) as f64).collect();
        let x = Matrix::from_vec(rows, cols, data).unwrap();
        let mut buf = Vec::new();
        write_features(&mut buf, &x).unwrap();
        prop_assert_eq!(buf.len(), 4 + 4 + 8 + 8 + rows * cols * 4);
        let back = read_features(buf.as_slice()).unwrap();
        prop_assert_eq!(back, x);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn batch_size_does_not_change_exits(
        n in 4usize..40,
        backend in backend_strategy(),
        norm in norm_strategy(),
        t_min in 1usize..4,
        extra in 0usize..3,
        seed in any::<u64>(),
        small in 1usize..7,
    ) {
        let mut r = rng(seed);
        let g = random_graph(n, 0.15, &mut r);
        let x = uniform_matrix(n, 3, &mut r);
        let k = t_min + extra;
        let bank = random_bank(backend, norm, 3, k, 3, seed ^ 1);
        let s = stationary_summary(&g, norm, &x).unwrap();
        let engine = Engine::new(&g, &x, &bank, &s).unwrap();
        let nodes: Vec<usize> = (0..n).rev().collect();
        let ts = engine.distance_profile(&nodes, k, Default::default()).unwrap()
            .iter().flatten().sum::<f64>() / (n * k) as f64;
        let cfg = NapConfig { batch_size: n, ..NapConfig::new(ts, t_min, k) };
        let whole = engine.infer(&cfg, &nodes, ExecutionMode::Sequential).unwrap();
        let split = engine.infer(&NapConfig { batch_size: small, ..cfg }, &nodes, ExecutionMode::Sequential).unwrap();
        let par = engine.infer(&NapConfig { batch_size: small, ..cfg }, &nodes, ExecutionMode::Parallel).unwrap();
        prop_assert_eq!(&whole.records, &split.records);
        prop_assert_eq!(&split.records, &par.records);
        prop_assert_eq!(split.macs, par.macs);
    }

    #[test]
    fn exit_records_respect_the_rule(
        n in 4usize..40,
        backend in backend_strategy(),
        t_min in 1usize..4,
        extra in 0usize..3,
        ts in 0.0..1.5f64,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let g = random_graph(n, 0.2, &mut r);
        let x = uniform_matrix(n, 3, &mut r);
        let k = t_min + extra;
        let norm = NormKind::SYMMETRIC;
        let bank = random_bank(backend, norm, 3, k, 4, seed);
        let s = stationary_summary(&g, norm, &x).unwrap();
        let engine = Engine::new(&g, &x, &bank, &s).unwrap();
        let nodes: Vec<usize> = (0..n).collect();
        let profile = engine.distance_profile(&nodes, k, Default::default()).unwrap();
        let out = engine.infer(&NapConfig::new(ts, t_min, k), &nodes, ExecutionMode::Sequential).unwrap();
        let looser = engine.infer(&NapConfig::new(ts * 2.0 + 0.1, t_min, k), &nodes, ExecutionMode::Sequential).unwrap();
        for (i, rec) in out.records.iter().enumerate() {
            prop_assert_eq!(rec.node, i);
            prop_assert!(rec.order >= t_min && rec.order <= k);
            let first = (t_min..k).find(|&l| profile[l - 1][i] < ts).unwrap_or(k);
            prop_assert_eq!(rec.order, first);
            match rec.distance {
                Some(d) => {
                    prop_assert!(d < ts);
                    prop_assert_eq!(d, profile[rec.order - 1][i]);
                }
                None => prop_assert_eq!(rec.order, k),
            }
            prop_assert!(looser.records[i].order <= rec.order);
            prop_assert!(rec.predicted < 4);
            prop_assert!(rec.confidence >= 0.25 - 1e-12 && rec.confidence <= 1.0);
        }
        prop_assert_eq!(out.histogram(k).iter().sum::<usize>(), n);
    }

    #[test]
    fn vanilla_macs_follow_the_support_layers(
        n in 2usize..40,
        p in 0.0..0.3f64,
        backend in backend_strategy(),
        k in 1usize..5,
        batch_size in 1usize..12,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let g = random_graph(n, p, &mut r);
        let f = 3;
        let x = uniform_matrix(n, f, &mut r);
        let norm = NormKind::SYMMETRIC;
        let bank = random_bank(backend, norm, f, k, 2, seed);
        let s = stationary_summary(&g, norm, &x).unwrap();
        let engine = Engine::new(&g, &x, &bank, &s).unwrap();
        let nodes: Vec<usize> = (0..n).filter(|_| r.random::<f64>() < 0.6).chain([n - 1]).collect();
        let mut nodes_sorted = nodes.clone();
        nodes_sorted.sort_unstable();
        nodes_sorted.dedup();
        let out = engine.infer_vanilla(k, &nodes_sorted, batch_size, ExecutionMode::Sequential).unwrap();
        let mut want = 0u64;
        for b in nodes_sorted.chunks(batch_size) {
            let layers = layered_support(&g, b, k).unwrap();
            for l in 1..=k {
                want += layers.layer(l).iter().map(|&v| (g.degree(v) + 1) as u64).sum::<u64>() * f as u64;
            }
        }
        prop_assert_eq!(out.macs.propagation, want);
        prop_assert_eq!(out.macs.stationary, 0);
        prop_assert_eq!(out.macs.distance, 0);
        let per_node = bank.classifier(k).unwrap().macs_per_node();
        prop_assert_eq!(out.macs.classification, per_node * nodes_sorted.len() as u64);
        prop_assert_eq!(out.macs.summary, (n * f) as u64);
        prop_assert_eq!(out.macs.total(), want + out.macs.classification);
    }

    #[test]
    fn metering_sums_events(rows in 1u64..100, extra in 0u64..400, dim in 1u64..50, comps in 0u64..100, per in 1u64..500) {
        let mut t = MacsTrace::default();
        t.push(KernelEvent::Propagation { rows, edge_terms: rows + extra, dim });
        t.push(KernelEvent::Stationary { nodes: rows, dim });
        t.push(KernelEvent::Distance { comparisons: comps, dim });
        t.push(KernelEvent::Classification { nodes: rows, macs_per_node: per });
        let m = meter_macs(&t, rows).unwrap();
        prop_assert_eq!(m.propagation, (rows + extra) * dim);
        prop_assert_eq!(m.feature_processing(), (rows + extra) * dim + comps * dim);
        prop_assert_eq!(m.total(), (rows + extra) * dim + rows * dim + comps * dim + rows * per);
    }

    #[test]
    fn stack_orders_match_repeated_hops(n in 1usize..20, p in 0.0..0.4f64, k in 1usize..5, norm in norm_strategy(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(n, p, &mut r);
        let x = uniform_matrix(n, 2, &mut r);
        let op = dense_operator(&g, norm.r());
        let sgc = precompute_stack(&g, norm, &x, k, Backend::Sgc).unwrap();
        let s2 = precompute_stack(&g, norm, &x, k, Backend::S2gc).unwrap();
        let sign = precompute_stack(&g, norm, &x, k, Backend::Sign).unwrap();
        let mut sum = Matrix::zeros(n, 2);
        let mut hops = vec![x.clone()];
        for l in 1..=k {
            let hop = dense_power_apply(&op, &x, l);
            prop_assert!(sgc.order_input(l).unwrap().max_abs_diff(&hop) < 1e-10);
            for (s, h) in sum.as_mut_slice().iter_mut().zip(hop.as_slice()) {
                *s += h;
            }
            let mut mean = sum.clone();
            for v in mean.as_mut_slice() {
                *v /= l as f64;
            }
            prop_assert!(s2.order_input(l).unwrap().max_abs_diff(&mean) < 1e-10);
            hops.push(hop.clone());
            let cat = Matrix::hconcat(&hops.iter().collect::<Vec<_>>()).unwrap();
            prop_assert!(sign.order_input(l).unwrap().max_abs_diff(&cat) < 1e-10);
        }
    }
}
