mod common;

use common::{naive_aggregate, random_graph, seeded};
use mpart_core::config::{Hyperparams, ScoreMode, StrategyKind};
use mpart_core::datasets::{apportion, gen_blobs, LabeledSample};
use mpart_core::engine::{DatasetOracle, Engine, OracleAnswer};
use mpart_core::graph::{complement_code, match_degree, ClassId, FeatureVector, TopoGraph};
use mpart_core::inference::{
    aleatoric_uncertainty, class_probabilities, combined_score, density_weighted_score,
    epistemic_uncertainty,
};
use mpart_core::message_passing::{aggregate, InfoField};
use mpart_core::strategies::{
    explorer_decide, BudgetState, Candidate, ExplorerStats, QueryAction, QuerySelector,
};
use proptest::prelude::*;

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, dim)
}

fn fv(v: Vec<f64>) -> FeatureVector {
    FeatureVector::new(v).unwrap()
}

fn params(rho: f64, beta: f64) -> Hyperparams {
    Hyperparams {
        rho,
        beta,
        ..Hyperparams::default()
    }
}

fn assert_graph_bounds(g: &TopoGraph) {
    for (i, j, c) in g.edges().sorted() {
        let (di, dj) = (g.nodes()[i].d, g.nodes()[j].d);
        assert!(c <= di + dj, "c({i},{j}) = {c} > {di} + {dj}");
        let e = g.edge_weight(i, j).unwrap();
        assert!((0.0..=1.0).contains(&e));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn complement_norm_is_exact(r in (1usize..40).prop_flat_map(unit_vec)) {
        let n = r.len();
        let coded = complement_code(&fv(r));
        prop_assert_eq!(coded.l1_norm(), n as f64);
    }

    #[test]
    fn match_degree_in_unit_interval(r in unit_vec(5), w in unit_vec(10)) {
        let m = match_degree(&complement_code(&fv(r)), &w).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
    }

    #[test]
    fn weights_never_grow(
        inputs in prop::collection::vec(unit_vec(3), 1..120),
        rho in 0.0f64..0.99,
        beta in 0.01f64..=1.0,
    ) {
        let hp = params(rho, beta);
        let mut g = TopoGraph::new(3);
        for r in inputs {
            let before: Vec<Vec<f64>> = g.nodes().iter().map(|n| n.w.clone()).collect();
            g.learn_step(&complement_code(&fv(r)), &hp).unwrap();
            for (old, node) in before.iter().zip(g.nodes()) {
                for (a, b) in old.iter().zip(&node.w) {
                    prop_assert!(b <= a);
                }
            }
        }
        assert_graph_bounds(&g);
    }

    #[test]
    fn repeated_input_is_stable(r in unit_vec(4), k in 1u64..60, rho in 0.0f64..=1.0) {
        let hp = params(rho, 0.5);
        let mut g = TopoGraph::new(4);
        let input = complement_code(&fv(r));
        for _ in 0..k {
            g.learn_step(&input, &hp).unwrap();
        }
        prop_assert_eq!(g.len(), 1);
        prop_assert_eq!(g.nodes()[0].d, k);
    }

    #[test]
    fn label_mass_counts_calls(
        inputs in prop::collection::vec(unit_vec(2), 1..40),
        labels in prop::collection::vec((0usize..64, 0u32..5), 0..60),
    ) {
        let hp = Hyperparams::default();
        let mut g = TopoGraph::new(2);
        for r in inputs {
            g.learn_step(&complement_code(&fv(r)), &hp).unwrap();
        }
        let mut classes_seen = 0;
        for (k, (node, class)) in labels.iter().enumerate() {
            g.add_label(node % g.len(), ClassId(*class)).unwrap();
            prop_assert!(g.classes().len() >= classes_seen);
            classes_seen = g.classes().len();
            let mass: u64 = g.nodes().iter().map(|n| n.label_mass()).sum();
            prop_assert_eq!(mass, k as u64 + 1);
        }
    }

    #[test]
    fn learning_is_deterministic(inputs in prop::collection::vec(unit_vec(3), 1..80)) {
        let hp = params(0.8, 0.5);
        let run = || {
            let mut g = TopoGraph::new(3);
            for r in &inputs {
                g.learn_step(&complement_code(&fv(r.clone())), &hp).unwrap();
            }
            g.state_hash()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn aggregate_matches_naive(
        seed in any::<u64>(),
        n in 1usize..20,
        layers in 0usize..6,
        delta in prop::sample::select(vec![0.0, 0.1, 0.5, 1.0]),
    ) {
        let mut rng = seeded(seed);
        let g = random_graph(&mut rng, n, 2, 0.3);
        let data: Vec<f64> = (0..n * 2).map(|k| ((k * 7919 + seed as usize) % 13) as f64).collect();
        let target = (seed as usize) % n;
        let got = aggregate(&g, target, InfoField::Values { width: 2, data: &data }, layers, delta).unwrap();
        let want = naive_aggregate(&g, &data, 2, target, layers, delta);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn aggregate_is_linear_and_monotone(
        seed in any::<u64>(),
        n in 1usize..15,
        layers in 0usize..5,
        a in 0.0f64..3.0,
        b in 0.0f64..3.0,
    ) {
        let mut rng = seeded(seed);
        let g = random_graph(&mut rng, n, 1, 0.4);
        let x: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).fract()).collect();
        let y: Vec<f64> = (0..n).map(|k| (k as f64 * 0.71 + 0.2).fract()).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let t = (seed as usize) % n;
        let agg = |d: &[f64]| aggregate(&g, t, InfoField::Values { width: 1, data: d }, layers, 0.1).unwrap()[0];
        let (ax, ay, am) = (agg(&x), agg(&y), agg(&mix));
        prop_assert!((am - (a * ax + b * ay)).abs() <= 1e-9 * am.abs().max(1.0));
        prop_assert!(ax >= x[t]);
        if layers == 0 {
            prop_assert_eq!(ax, x[t]);
        }
    }

    #[test]
    fn score_bounds(
        q in prop::collection::vec(0.0f64..50.0, 0..8),
        d in 0.0f64..2000.0,
        tau in 0.0f64..=1.0,
        k_e in 0.0f64..3.0,
        k_d in 0.0f64..0.1,
    ) {
        let p = class_probabilities(&q);
        if !p.is_empty() {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let u_e = epistemic_uncertainty(&q, k_e);
        let u_a = aleatoric_uncertainty(&p, p.len());
        prop_assert!((0.0..=1.0).contains(&u_e) && (0.0..=1.0).contains(&u_a));
        let u_t = combined_score(u_e, u_a, tau);
        let s_t = density_weighted_score(d, u_t, k_d);
        prop_assert!(s_t <= u_t);
        prop_assert!(u_t <= u_e.max(u_a) + 1e-15);
        let mut reversed = p.clone();
        reversed.reverse();
        prop_assert_eq!(aleatoric_uncertainty(&reversed, p.len()), u_a);
        let mut more = q.clone();
        more.push(1.0);
        prop_assert!(epistemic_uncertainty(&more, k_e) <= u_e);
    }

    #[test]
    fn explorer_monotone_in_score(
        scores in prop::collection::vec(0.0f64..1.0, 1..30),
        s in 0.0f64..1.0,
        bump in 0.0f64..1.0,
        window in 2usize..200,
        budget in 1usize..4,
        offset_frac in 0.0f64..1.0,
    ) {
        let budget = budget.min(window);
        let mut stats = ExplorerStats::default();
        for x in scores {
            stats.update(x);
        }
        let mut b = BudgetState::new(budget, window).unwrap();
        b.offset = ((window - 1) as f64 * offset_frac) as usize;
        if explorer_decide(&stats, &b, s) {
            prop_assert!(explorer_decide(&stats, &b, s + bump));
        }
    }

    #[test]
    fn budget_is_hard(
        kind in prop::sample::select(vec![StrategyKind::Random, StrategyKind::Memory, StrategyKind::Explorer]),
        window in 1usize..60,
        budget in 1usize..5,
        scores in prop::collection::vec(0.0f64..1.0, 1..400),
        seed in any::<u64>(),
    ) {
        let budget = if kind == StrategyKind::Memory { 1 } else { budget.min(window) };
        let mut sel = QuerySelector::new(kind, budget, window, seed).unwrap();
        let mut in_window = 0;
        for (k, s) in scores.iter().enumerate() {
            let c = Candidate { sample: k as u64, node: 0, features: vec![] };
            let d = sel.observe(*s, c);
            if d.action == QueryAction::QueryNow {
                in_window += 1;
                prop_assert!(d.target.is_some());
            }
            prop_assert!(in_window <= budget);
            if d.window_rolled {
                if kind != StrategyKind::Explorer {
                    prop_assert_eq!(in_window, budget);
                }
                in_window = 0;
            }
        }
    }

    #[test]
    fn apportion_sums(n in 0usize..5000, raw in prop::collection::vec(0.0f64..1.0, 1..12)) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 0.0);
        let ratios: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let adjusted: f64 = ratios.iter().sum();
        prop_assume!((adjusted - 1.0).abs() < 1e-9);
        let sizes = apportion(n, &ratios).unwrap();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
    }
}

#[test]
fn random_offsets_are_uniform() {
    let (w, windows) = (10usize, 10_000usize);
    let mut sel = QuerySelector::new(StrategyKind::Random, 1, w, 99).unwrap();
    let mut hits = vec![0usize; w];
    for t in 0..w * windows {
        let c = Candidate {
            sample: t as u64,
            node: 0,
            features: vec![],
        };
        if sel.observe(0.5, c).action == QueryAction::QueryNow {
            hits[t % w] += 1;
        }
    }
    let expected = windows as f64 / w as f64;
    let sigma = (windows as f64 * 0.1 * 0.9).sqrt();
    for (k, &h) in hits.iter().enumerate() {
        assert!(
            (h as f64 - expected).abs() <= 3.0 * sigma,
            "offset {k}: {h}"
        );
    }
    assert_eq!(hits.iter().sum::<usize>(), windows);
}

fn stream(n: usize, seed: u64) -> Vec<LabeledSample> {
    gen_blobs(3, n, 0.08, 2, seed).unwrap()
}

#[test]
fn labels_land_in_queried_node() {
    let data = stream(600, 3);
    let mut oracle = DatasetOracle::new(&data);
    let mut engine = Engine::new(
        2,
        Hyperparams::default(),
        StrategyKind::Random,
        2,
        50,
        ScoreMode::Dw,
        1,
    )
    .unwrap();
    let mut classes = 0;
    for s in &data {
        let mass_before = engine.graph().label_total();
        let rec = engine
            .process_sample(s.id, &s.features, Some(s.label), &mut oracle)
            .unwrap();
        let gained = engine.graph().label_total() - mass_before;
        assert_eq!(
            gained,
            u64::from(matches!(rec.answer, Some(OracleAnswer::Label(_))))
        );
        assert!(engine.graph().classes().len() >= classes);
        classes = engine.graph().classes().len();
    }
    assert_eq!(engine.queries(), 600 / 50 * 2);
    assert_eq!(engine.graph().label_total(), 24);
}

#[test]
fn classify_is_pure() {
    let data = stream(300, 5);
    let mut oracle = DatasetOracle::new(&data);
    let mut engine = Engine::new(
        2,
        Hyperparams::default(),
        StrategyKind::Explorer,
        1,
        30,
        ScoreMode::Dw,
        0,
    )
    .unwrap();
    for s in &data {
        engine
            .process_sample(s.id, &s.features, Some(s.label), &mut oracle)
            .unwrap();
    }
    let before = engine.graph().state_hash();
    let probe = &data[17].features;
    let a = engine.classify(probe).unwrap();
    let b = engine.classify(probe).unwrap();
    assert_eq!(a, b);
    assert_eq!(engine.graph().state_hash(), before);
}

#[test]
fn plain_score_keeps_predictions_when_decisions_agree() {
    // Random ignores the score, so both runs query the same samples.
    let data = stream(800, 8);
    let run = |score| {
        let mut oracle = DatasetOracle::new(&data);
        let mut e = Engine::new(
            2,
            Hyperparams::default(),
            StrategyKind::Random,
            1,
            40,
            score,
            4,
        )
        .unwrap();
        let trace: Vec<_> = data
            .iter()
            .map(|s| {
                let r = e
                    .process_sample(s.id, &s.features, Some(s.label), &mut oracle)
                    .unwrap();
                (r.inference.y_hat, r.query_sample)
            })
            .collect();
        (trace, e.graph().state_hash())
    };
    assert_eq!(run(ScoreMode::Dw), run(ScoreMode::Plain));
}
