//! Property tests over generated corpora: serialization round-trips, graph
//! monotonicity, brute-force recomputation of count features, rule-order
//! independence, metric algebra, and attack determinism.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use webgraph_lab_core::attack::{
    compute_metrics, greedy_attack, pick_adversary, AdversaryScope, GreedyAttackConfig,
};
use webgraph_lab_core::corpus::{generate_page, CorpusSpec};
use webgraph_lab_core::domains::SuffixList;
use webgraph_lab_core::eventlog::{parse_trace_str, validate_trace, write_jsonl, PageTrace};
use webgraph_lab_core::features::{extract_matrix, FeatureConfig, FeatureSetId};
use webgraph_lab_core::graph::{build_graph, EdgeKind, GraphConfig, NodeId, NodeKind, PageGraph};
use webgraph_lab_core::labels::{match_url, parse_rules, RuleSet};
use webgraph_lab_core::model::{kfold_split, train, DataRow, Dataset, Hyperparams};

fn corpus_page(seed: u64, index: usize) -> PageTrace {
    let spec = CorpusSpec::small(index + 1, seed);
    generate_page(&spec, index).0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trace_roundtrip(seed in 0u64..1_000_000, index in 0usize..20) {
        let trace = corpus_page(seed, index);
        let reparsed = parse_trace_str(&write_jsonl(&trace)).expect("roundtrip parses");
        prop_assert_eq!(&reparsed, &trace);
        prop_assert!(validate_trace(&trace).is_empty());
    }

    #[test]
    fn graph_edges_respect_domains(seed in 0u64..1_000_000, index in 0usize..20) {
        let trace = corpus_page(seed, index);
        let graph = build_graph(&trace, &GraphConfig::default());
        prop_assert!(graph.check_edge_domains().is_ok());
    }

    #[test]
    fn graph_grows_monotonically(seed in 0u64..1_000_000, cut in 0.1f64..0.9) {
        let trace = corpus_page(seed, 3);
        let k = ((trace.events.len() as f64) * cut) as usize;
        let prefix = PageTrace {
            page_url: trace.page_url.clone(),
            first_party: trace.first_party.clone(),
            events: trace.events[..k].to_vec(),
        };
        let small = build_graph(&prefix, &GraphConfig::default());
        let full = build_graph(&trace, &GraphConfig::default());
        prop_assert!(small.nodes.len() <= full.nodes.len());
        // Node ids are assigned in event order, so the prefix graph's nodes
        // must reappear unchanged.
        for (a, b) in small.nodes.iter().zip(full.nodes.iter()) {
            prop_assert_eq!(a, b);
        }
        let count = |g: &PageGraph| {
            let mut m: BTreeMap<(NodeId, NodeId, String), usize> = BTreeMap::new();
            for e in &g.edges {
                *m.entry((e.src, e.dst, format!("{:?}", e.kind))).or_insert(0) += 1;
            }
            m
        };
        let small_edges = count(&small);
        let full_edges = count(&full);
        for (key, n) in &small_edges {
            prop_assert!(
                full_edges.get(key).copied().unwrap_or(0) >= *n,
                "edge {:?} lost when events were appended", key
            );
        }
    }

    #[test]
    fn rule_order_is_irrelevant(seed in 0u64..100_000, perm in 0usize..24) {
        let rules = parse_rules("||trk-a.com^\nbanner\n/sync$third-party\n||cdn-x.com^").unwrap();
        let mut order: Vec<usize> = (0..rules.rules.len()).collect();
        // Tiny fixed permutation schedule keeps the test deterministic.
        order.rotate_left(perm % rules.rules.len());
        if perm % 2 == 1 {
            order.reverse();
        }
        let shuffled = RuleSet { rules: order.iter().map(|&i| rules.rules[i].clone()).collect() };
        let trace = corpus_page(seed, 2);
        let graph = build_graph(&trace, &GraphConfig::default());
        for node in graph.network_nodes() {
            if let NodeKind::Network { url, .. } = &node.kind {
                for third in [false, true] {
                    prop_assert_eq!(
                        match_url(&rules, url, third).unwrap(),
                        match_url(&shuffled, url, third).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn kfold_is_a_partition(n_pages in 2usize..40, k in 2usize..10, seed in 0u64..10_000) {
        prop_assume!(k <= n_pages);
        let pages: Vec<String> = (0..n_pages).map(|i| format!("p{i}")).collect();
        let folds = kfold_split(&pages, k, seed).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<String> = folds.concat();
        all.sort();
        let mut expected = pages.clone();
        expected.sort();
        prop_assert_eq!(all, expected);
    }

    #[test]
    fn metric_algebra_recomputes_from_counts(
        flips in proptest::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 1..60),
        careless in any::<bool>(),
    ) {
        // Random pre/post labels and adversary membership per node.
        let pre: BTreeMap<NodeId, bool> =
            flips.iter().enumerate().map(|(i, (a, _, _))| (i, *a)).collect();
        let post: BTreeMap<NodeId, bool> =
            flips.iter().enumerate().map(|(i, (_, b, _))| (i, *b)).collect();
        let adversary: BTreeSet<NodeId> = flips
            .iter()
            .enumerate()
            .filter_map(|(i, (_, _, adv))| adv.then_some(i))
            .collect();
        let metrics = compute_metrics(&pre, &post, &adversary, careless);
        // Independent counting pass.
        let mut desired = 0;
        let mut undesired = 0;
        let mut neutral = 0;
        let mut ats_adv = 0;
        let mut non_ats_adv = 0;
        let mut ats_web = 0;
        let mut non_ats_web = 0;
        for (i, (was, is, adv)) in flips.iter().enumerate() {
            let _ = i;
            match (adv, was) {
                (true, true) => ats_adv += 1,
                (true, false) => non_ats_adv += 1,
                (false, true) => ats_web += 1,
                (false, false) => non_ats_web += 1,
            }
            if *was && !*is {
                if *adv { desired += 1 } else { neutral += 1 }
            }
            if !*was && *is {
                undesired += 1;
            }
        }
        let c = metrics.counts;
        prop_assert_eq!(
            (c.ats_adv, c.non_ats_adv, c.ats_web, c.non_ats_web),
            (ats_adv, non_ats_adv, ats_web, non_ats_web)
        );
        prop_assert_eq!((c.desired, c.undesired, c.neutral), (desired, undesired, neutral));
        if ats_adv > 0 {
            let expect = 100.0 * desired as f64 / ats_adv as f64;
            prop_assert!((metrics.success_rate_pct.unwrap() - expect).abs() < 1e-12);
        } else {
            prop_assert_eq!(metrics.success_rate_pct, None);
        }
        let den = if careless { non_ats_adv } else { non_ats_adv + non_ats_web };
        if den > 0 {
            let expect = 100.0 * undesired as f64 / den as f64;
            prop_assert!((metrics.collateral_damage_pct.unwrap() - expect).abs() < 1e-12);
        }
    }
}

/// Brute-force recomputation of every count feature on small corpus graphs.
#[test]
fn count_features_match_brute_force() {
    let fcfg = FeatureConfig::default();
    for seed in [3u64, 17, 92] {
        let trace = corpus_page(seed, 1);
        let graph = build_graph(&trace, &GraphConfig::default());
        assert!(graph.node_count() <= 120);
        let matrix = extract_matrix(&graph, FeatureSetId::WebgraphFull, &fcfg);
        let col = |name: &str| matrix.column_index(name).unwrap();
        // Scripts delivered by a node, for the attribution rule.
        let delivered: BTreeMap<NodeId, Vec<NodeId>> = graph
            .network_nodes()
            .map(|n| {
                let scripts = graph
                    .edges
                    .iter()
                    .filter(|e| e.kind == EdgeKind::ExecutesScript && e.src == n.id)
                    .map(|e| e.dst)
                    .collect();
                (n.id, scripts)
            })
            .collect();
        for row in &matrix.rows {
            let me = row.node_id;
            let mut group = vec![me];
            group.extend(delivered[&me].iter().copied());
            let count = |pred: &dyn Fn(&webgraph_lab_core::graph::Edge) -> bool| {
                graph.edges.iter().filter(|e| pred(e)).count() as f64
            };
            let in_group = |x: NodeId| group.contains(&x);
            assert_eq!(
                row.values[col("struct_in_degree")],
                count(&|e| !e.flow && e.dst == me)
            );
            assert_eq!(
                row.values[col("struct_out_degree")],
                count(&|e| !e.flow && e.src == me)
            );
            assert_eq!(
                row.values[col("flow_requests_sent")],
                count(&|e| e.kind == EdgeKind::InitiatesRequest && in_group(e.src))
            );
            assert_eq!(
                row.values[col("flow_requests_received")],
                count(&|e| e.kind == EdgeKind::InitiatesRequest && e.dst == me)
            );
            assert_eq!(
                row.values[col("flow_redirects_received")],
                count(&|e| e.kind == EdgeKind::Redirect && e.dst == me)
            );
            assert_eq!(
                row.values[col("flow_redirects_sent")],
                count(&|e| e.kind == EdgeKind::Redirect && e.src == me)
            );
            let is_cookie = |x: NodeId| {
                matches!(
                    graph.node(x).kind,
                    NodeKind::Storage { storage: webgraph_lab_core::eventlog::StorageKind::Cookie, .. }
                )
            };
            assert_eq!(
                row.values[col("flow_cookie_sets")],
                count(&|e| e.kind == EdgeKind::StorageSet && in_group(e.src) && is_cookie(e.dst))
            );
            assert_eq!(
                row.values[col("flow_cookie_gets")],
                count(&|e| e.kind == EdgeKind::StorageGet && in_group(e.dst) && is_cookie(e.src))
            );
            assert_eq!(
                row.values[col("flow_shared_in")],
                count(&|e| matches!(e.kind, EdgeKind::SharedValue { .. }) && e.dst == me)
            );
            assert_eq!(
                row.values[col("flow_shared_out")],
                count(&|e| matches!(e.kind, EdgeKind::SharedValue { .. }) && e.src == me)
            );
            assert_eq!(
                row.values[col("flow_common_storage")],
                count(&|e| e.kind == EdgeKind::CommonStorageAccess
                    && (in_group(e.src) || in_group(e.dst)))
            );
            // Shared-information ancestors: reverse DFS over flow edges,
            // common-storage edges walked both ways.
            let mut seen: BTreeSet<NodeId> = BTreeSet::new();
            let mut stack = vec![me];
            while let Some(cur) = stack.pop() {
                for e in graph.flow_edges() {
                    let back = match e.kind {
                        EdgeKind::CommonStorageAccess => {
                            if e.dst == cur {
                                Some(e.src)
                            } else if e.src == cur {
                                Some(e.dst)
                            } else {
                                None
                            }
                        }
                        _ => (e.dst == cur).then_some(e.src),
                    };
                    if let Some(prev) = back {
                        if prev != me && seen.insert(prev) {
                            stack.push(prev);
                        }
                    }
                }
            }
            assert_eq!(
                row.values[col("flow_shared_ancestors")],
                seen.len() as f64,
                "ancestors of node {me}"
            );
        }
    }
}

/// Shuffling labels destroys the signal: cross-validated accuracy falls to
/// roughly the majority-class rate of the corpus.
#[test]
fn shuffled_labels_score_near_majority_rate() {
    use rand::Rng;
    let corpus = webgraph_lab_core::corpus::generate_corpus(&CorpusSpec::small(40, 88));
    let fcfg = FeatureConfig::default();
    let mut rows = Vec::new();
    let mut names = Vec::new();
    for (idx, (trace, truth)) in corpus.pages.iter().enumerate() {
        let graph = build_graph(trace, &GraphConfig::default());
        let matrix = extract_matrix(&graph, FeatureSetId::WebgraphFull, &fcfg);
        names = matrix.names.clone();
        for row in matrix.rows {
            let request_id = match &graph.node(row.node_id).kind {
                NodeKind::Network { request_id, .. } => request_id.clone(),
                _ => unreachable!(),
            };
            rows.push(DataRow {
                page_id: format!("page_{idx}"),
                node_id: row.node_id,
                values: row.values,
                ats: truth.labels[&request_id],
            });
        }
    }
    // Independent oracle for the expected baseline: the majority-class rate.
    let ats = rows.iter().filter(|r| r.ats).count();
    let majority_rate = 100.0 * ats.max(rows.len() - ats) as f64 / rows.len() as f64;
    // Shuffle labels across rows, keeping the class balance.
    let mut labels: Vec<bool> = rows.iter().map(|r| r.ats).collect();
    let mut rng = webgraph_lab_core::seed::stream(1234, "shuffle", 0);
    for i in (1..labels.len()).rev() {
        let j = rng.gen_range(0..=i);
        labels.swap(i, j);
    }
    for (row, label) in rows.iter_mut().zip(labels) {
        row.ats = label;
    }
    let dataset =
        Dataset { feature_set: FeatureSetId::WebgraphFull, feature_names: names, rows };
    let (report, _) = webgraph_lab_core::model::cross_validate(
        &dataset,
        &Hyperparams { n_trees: 20, ..Default::default() },
        5,
        9,
    )
    .unwrap();
    assert!(
        (report.accuracy_mean_pct - majority_rate).abs() < 12.0,
        "shuffled-label accuracy {:.1}% should sit near the majority rate {:.1}%",
        report.accuracy_mean_pct,
        majority_rate
    );
    assert!(
        report.accuracy_mean_pct < 75.0,
        "shuffled labels should not be learnable, got {:.1}%",
        report.accuracy_mean_pct
    );
}

/// Domain renames leave query values intact, so nothing a flow-only model
/// sees can change: the attack must score exactly zero.
#[test]
fn domain_rename_cannot_evade_a_flow_model() {
    use webgraph_lab_core::attack::{run_content_attack, ContentAttackConfig, UrlMutationKind};
    let corpus = webgraph_lab_core::corpus::generate_corpus(&CorpusSpec::small(30, 55));
    let fcfg = FeatureConfig::default();
    let mut rows = Vec::new();
    let mut names = Vec::new();
    let mut graphs = Vec::new();
    for (idx, (trace, truth)) in corpus.pages.iter().enumerate() {
        let graph = build_graph(trace, &GraphConfig::default());
        let matrix = extract_matrix(&graph, FeatureSetId::WebgraphFlowonly, &fcfg);
        names = matrix.names.clone();
        for row in matrix.rows {
            let request_id = match &graph.node(row.node_id).kind {
                NodeKind::Network { request_id, .. } => request_id.clone(),
                _ => unreachable!(),
            };
            rows.push(DataRow {
                page_id: format!("page_{idx}"),
                node_id: row.node_id,
                values: row.values,
                ats: truth.labels[&request_id],
            });
        }
        graphs.push(graph);
    }
    let dataset =
        Dataset { feature_set: FeatureSetId::WebgraphFlowonly, feature_names: names, rows };
    let model = train(&dataset, &Hyperparams { n_trees: 20, ..Default::default() }, 6).unwrap();
    let mut attacked = 0;
    for graph in graphs.iter().take(10) {
        let pre = webgraph_lab_core::attack::predict_graph(graph, &model, &fcfg).unwrap();
        let Some(domain) = pick_adversary(graph, &pre, &fcfg.psl) else { continue };
        let scope = AdversaryScope::for_domain(graph, &domain, &fcfg.psl);
        let cfg = ContentAttackConfig {
            policy: [UrlMutationKind::Domain, UrlMutationKind::Subdomain].into_iter().collect(),
            collusion: false,
            careless: false,
            seed: 5,
        };
        let report = run_content_attack(graph, &model, &scope, &cfg, &fcfg).unwrap();
        if report.no_adversary_ats {
            continue;
        }
        assert_eq!(
            report.metrics.success_rate_pct,
            Some(0.0),
            "domain rename changed a flow-only prediction"
        );
        assert_eq!(report.metrics.counts.undesired, 0);
        attacked += 1;
    }
    assert!(attacked >= 5, "too few pages attacked ({attacked})");
}

/// An adversary with nothing classified ATS gets a flagged report instead of
/// a mutation run.
#[test]
fn attack_without_ats_nodes_is_flagged() {
    use webgraph_lab_core::attack::{run_content_attack, ContentAttackConfig, UrlMutationKind};
    let trace = corpus_page(9, 1);
    let graph = build_graph(&trace, &GraphConfig::default());
    let fcfg = FeatureConfig::default();
    let matrix = extract_matrix(&graph, FeatureSetId::WebgraphFlowonly, &fcfg);
    // Every realistic row is benign; one synthetic far-away ATS row keeps the
    // training set two-class while real nodes all predict Non-ATS.
    let mut rows: Vec<DataRow> = matrix
        .rows
        .iter()
        .map(|r| DataRow {
            page_id: "p".to_string(),
            node_id: r.node_id,
            values: r.values.clone(),
            ats: false,
        })
        .collect();
    rows.push(DataRow {
        page_id: "p".to_string(),
        node_id: 9999,
        values: vec![1e9; matrix.names.len()],
        ats: true,
    });
    let dataset = Dataset {
        feature_set: FeatureSetId::WebgraphFlowonly,
        feature_names: matrix.names.clone(),
        rows,
    };
    let model = train(&dataset, &Hyperparams { n_trees: 5, ..Default::default() }, 2).unwrap();
    let scope = AdversaryScope::for_domain(&graph, "trk-nonexistent.com", &fcfg.psl);
    let cfg = ContentAttackConfig {
        policy: [UrlMutationKind::Domain].into_iter().collect(),
        collusion: false,
        careless: false,
        seed: 1,
    };
    let report = run_content_attack(&graph, &model, &scope, &cfg, &fcfg).unwrap();
    assert!(report.no_adversary_ats);
    assert_eq!(report.mutated_nodes, 0);
    assert_eq!(report.metrics.counts.ats_adv, 0);
    assert_eq!(report.metrics.success_rate_pct, None);
}

/// The whole attack trajectory is a pure function of (graph, model, seed).
#[test]
fn greedy_attack_is_reproducible() {
    let trace = corpus_page(41, 2);
    let graph = build_graph(&trace, &GraphConfig::default());
    let fcfg = FeatureConfig::default();
    let matrix = extract_matrix(&graph, FeatureSetId::WebgraphFlowonly, &fcfg);
    let rows: Vec<DataRow> = matrix
        .rows
        .iter()
        .map(|r| DataRow {
            page_id: "p".to_string(),
            node_id: r.node_id,
            values: r.values.clone(),
            ats: {
                let url = graph.url_of(r.node_id).unwrap();
                url.contains("trk-")
            },
        })
        .collect();
    let dataset = Dataset {
        feature_set: FeatureSetId::WebgraphFlowonly,
        feature_names: matrix.names.clone(),
        rows,
    };
    let model = train(&dataset, &Hyperparams { n_trees: 10, ..Default::default() }, 4).unwrap();
    let pre = webgraph_lab_core::attack::predict_graph(&graph, &model, &fcfg).unwrap();
    let domain = pick_adversary(&graph, &pre, &fcfg.psl).expect("an adversary exists");
    let scope = AdversaryScope::for_domain(&graph, &domain, &fcfg.psl);
    let cfg = GreedyAttackConfig { max_iter: 5, seed: 77, ..Default::default() };
    let a = greedy_attack(&graph, &model, &scope, &cfg, &fcfg).unwrap();
    let b = greedy_attack(&graph, &model, &scope, &cfg, &fcfg).unwrap();
    assert_eq!(a, b);
    let different_seed =
        greedy_attack(&graph, &model, &scope, &GreedyAttackConfig { seed: 78, ..cfg }, &fcfg)
            .unwrap();
    // Same graph and model, other seed: the trajectory may differ, but the
    // no-deletion invariant still holds.
    for r in &different_seed.trajectory {
        assert!(r.node_count >= graph.node_count());
    }
}

/// Flow features separate the classes on held-out pages even when content
/// keywords cannot: lookalike resources defeat a content-keyword stump, while
/// the flow model generalizes.
#[test]
fn corpus_separability_knob() {
    let spec = CorpusSpec::small(60, 2218);
    let corpus = webgraph_lab_core::corpus::generate_corpus(&spec);
    let fcfg = FeatureConfig::default();
    let mut datasets: BTreeMap<&str, Dataset> = BTreeMap::new();
    for (key, set) in
        [("flow", FeatureSetId::WebgraphFlowonly), ("content", FeatureSetId::AdgraphFull)]
    {
        let mut rows = Vec::new();
        let mut names = Vec::new();
        for (idx, (trace, truth)) in corpus.pages.iter().enumerate() {
            let graph = build_graph(trace, &GraphConfig::default());
            let matrix = extract_matrix(&graph, set, &fcfg);
            names = matrix.names.clone();
            for row in matrix.rows {
                let request_id = match &graph.node(row.node_id).kind {
                    NodeKind::Network { request_id, .. } => request_id.clone(),
                    _ => unreachable!(),
                };
                rows.push(DataRow {
                    page_id: format!("page_{idx}"),
                    node_id: row.node_id,
                    values: row.values,
                    ats: truth.labels[&request_id],
                });
            }
        }
        datasets.insert(key, Dataset { feature_set: set, feature_names: names, rows });
    }
    // Content-keyword stump: a single shallow tree over the keyword column.
    let content = &datasets["content"];
    let keyword_col = content
        .feature_names
        .iter()
        .position(|n| n == "content_ad_keyword")
        .unwrap();
    let stump_ds = Dataset {
        feature_set: content.feature_set,
        feature_names: vec!["content_ad_keyword".to_string()],
        rows: content
            .rows
            .iter()
            .map(|r| DataRow {
                page_id: r.page_id.clone(),
                node_id: r.node_id,
                values: vec![r.values[keyword_col]],
                ats: r.ats,
            })
            .collect(),
    };
    let accuracy = |ds: &Dataset, hp: &Hyperparams| {
        // Hold out the last 15 pages.
        let holdout: BTreeSet<String> = (45..60).map(|i| format!("page_{i}")).collect();
        let train_ds = Dataset {
            feature_set: ds.feature_set,
            feature_names: ds.feature_names.clone(),
            rows: ds.rows.iter().filter(|r| !holdout.contains(&r.page_id)).cloned().collect(),
        };
        let model = train(&train_ds, hp, 11).unwrap();
        let test: Vec<&DataRow> =
            ds.rows.iter().filter(|r| holdout.contains(&r.page_id)).collect();
        let correct = test
            .iter()
            .filter(|r| {
                webgraph_lab_core::model::predict(&model, &r.values).unwrap().ats == r.ats
            })
            .count();
        correct as f64 / test.len() as f64
    };
    let flow_acc = accuracy(&datasets["flow"], &Hyperparams { n_trees: 30, ..Default::default() });
    let stump_acc = accuracy(
        &stump_ds,
        &Hyperparams { n_trees: 1, max_depth: 1, features_per_split: Some(1), ..Default::default() },
    );
    assert!(
        flow_acc > stump_acc + 0.10,
        "flow accuracy {flow_acc:.3} should clearly beat keyword stump {stump_acc:.3}"
    );
    assert!(flow_acc > 0.9, "flow model should generalize, got {flow_acc:.3}");
}
