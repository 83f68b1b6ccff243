use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simra_core::geo::GeoPoint;
use simra_core::mapgraph::{EdgeId, ElementId, Intersection, MapGraph, NodeId, StreetSegment};
use simra_core::scoring::{
    hotspot_order, rank_hotspots, score_edge, score_graph, score_node, Exact, HotspotRanking, ScoreConfig, Selection,
};
use simra_core::synth::{street_fixture_graph, STREET_FIXTURES};
use simra_core::INCIDENT_CATEGORIES;

fn q(n: i64, d: i64) -> Exact {
    Exact(BigRational::new(BigInt::from(n), BigInt::from(d)))
}

fn alpha() -> Exact {
    Exact::from_decimal(4.4).unwrap()
}

fn random_edge(rng: &mut ChaCha8Rng, id: u64) -> StreetSegment {
    let max = rng.random_range(1..40);
    StreetSegment {
        id: EdgeId(id),
        endpoints: (None, None),
        way_id: id,
        name: None,
        centerline: vec![],
        polygon: vec![],
        length_m: rng.random_range(1..200_000) as f64 / 100.0,
        r: [rng.random_range(1..500), rng.random_range(1..500)],
        s: std::array::from_fn(|_| [rng.random_range(0..max), rng.random_range(0..max)]),
        n: std::array::from_fn(|_| [rng.random_range(0..max), rng.random_range(0..max)]),
    }
}

fn sum(values: impl IntoIterator<Item = Exact>) -> Exact {
    Exact(values.into_iter().fold(BigRational::from_integer(0.into()), |a, b| a + b.0))
}

#[test]
fn fixture_scores_are_exact_rates() {
    let g = street_fixture_graph();
    let a = alpha();
    let edison = score_edge(&g.edges[&EdgeId(0)], &a).unwrap();
    // (4.4 * 18 + 25) / 79 and the same divided by 230.
    assert_eq!(edison.scores.total, q(1042, 790));
    assert_eq!(edison.length_adjusted.unwrap().total, q(1042, 790 * 230));
    let leibniz = score_edge(&g.edges[&EdgeId(1)], &a).unwrap();
    assert_eq!(leibniz.scores.total, q(300, 1940));
    assert_eq!(leibniz.scores.by_category[0], q(1, 194));
    assert_eq!(leibniz.scores.by_category[1], q(44, 1940));
    assert_eq!(leibniz.scores.by_category[2], q(54, 1940));
    let paul = score_edge(&g.edges[&EdgeId(2)], &a).unwrap();
    assert_eq!(paul.scores.by_category[0], q(296, 1840));
    assert_eq!(paul.scores.total, q(356, 1840));
    assert_eq!(paul.length_adjusted.unwrap().total, q(356, 1840 * 600));
    assert_eq!(STREET_FIXTURES.len(), 3);
}

#[test]
fn fixture_ranking_with_length_adjustment() {
    let g = street_fixture_graph();
    let cfg = ScoreConfig { length_adjusted: true, ..ScoreConfig::default() };
    let (scores, _) = score_graph(&g, &cfg).unwrap();
    let HotspotRanking::Separate { nodes, edges } = rank_hotspots(&scores, &g, &cfg).unwrap() else { panic!() };
    assert!(nodes.is_empty());
    let order: Vec<ElementId> = edges.iter().map(|h| h.element).collect();
    assert_eq!(order, vec![ElementId::Edge(EdgeId(0)), ElementId::Edge(EdgeId(2)), ElementId::Edge(EdgeId(1))]);
}

#[test]
fn invariants_over_random_elements() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let a = alpha();
    let other_alpha = Exact::from_decimal(1.7).unwrap();
    for i in 0..10_000 {
        let e = random_edge(&mut rng, i);
        let s = score_edge(&e, &a).unwrap();
        let la = s.length_adjusted.clone().unwrap();
        let l = s.length_m.clone().unwrap();

        // Length-adjusted equals plain divided by length, cell by cell.
        for (row, la_row) in s.scores.cells.iter().zip(&la.cells) {
            for (c, lc) in row.iter().zip(la_row) {
                assert_eq!(Exact(&c.as_ref().unwrap().0 / &l.0), *lc.as_ref().unwrap());
            }
        }
        assert_eq!(Exact(&s.scores.total.0 / &l.0), la.total);

        // Aggregations are exact sums of the cells.
        assert_eq!(sum(s.scores.by_category.clone()), s.scores.total);
        assert_eq!(sum(s.scores.by_direction.iter().flatten().cloned()), s.scores.total);
        let cells = s.scores.cells.iter().flatten().flatten().cloned();
        assert_eq!(sum(cells), s.scores.total);

        // No scary incidents: alpha does not matter.
        let mut calm = e.clone();
        calm.s = [[0; 2]; INCIDENT_CATEGORIES];
        assert_eq!(score_edge(&calm, &a).unwrap().scores, score_edge(&calm, &other_alpha).unwrap().scores);

        // Uniform scaling of r, s and n leaves every score unchanged.
        let k = rng.random_range(2..9u64);
        let mut scaled = e.clone();
        scaled.r = e.r.map(|v| v * k);
        scaled.s = e.s.map(|row| row.map(|v| v * k));
        scaled.n = e.n.map(|row| row.map(|v| v * k));
        let ss = score_edge(&scaled, &a).unwrap();
        assert_eq!(ss.scores, s.scores);
        assert_eq!(ss.length_adjusted, s.length_adjusted);

        // Monotone in s, antitone in r.
        let c = rng.random_range(0..INCIDENT_CATEGORIES);
        let d = rng.random_range(0..2);
        let mut more = e.clone();
        more.s[c][d] += 1;
        assert!(score_edge(&more, &a).unwrap().scores.total > s.scores.total);
        let mut busier = e.clone();
        busier.r[d] += 1;
        let before = s.scores.by_direction[d].clone().unwrap();
        let after = score_edge(&busier, &a).unwrap().scores.by_direction[d].clone().unwrap();
        if before.0 > BigRational::from_integer(0.into()) {
            assert!(after < before);
        } else {
            assert_eq!(after, before);
        }
    }
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> MapGraph {
    let mut nodes = BTreeMap::new();
    let mut edges = BTreeMap::new();
    for i in 0..n as u64 {
        if rng.random_bool(0.4) {
            let node = Intersection {
                id: NodeId(i),
                position: GeoPoint { lat: 0.0, lon: 0.0 },
                polygon: vec![],
                r: rng.random_range(1..30),
                s: std::array::from_fn(|_| rng.random_range(0..3)),
                n: std::array::from_fn(|_| rng.random_range(0..3)),
            };
            nodes.insert(node.id, node);
        } else {
            let mut e = random_edge(rng, i);
            // Small counts so that ties actually occur.
            e.r = [rng.random_range(1..15), rng.random_range(0..15)];
            e.s = std::array::from_fn(|_| [rng.random_range(0..2), rng.random_range(0..2)]);
            e.n = std::array::from_fn(|_| [rng.random_range(0..2), rng.random_range(0..2)]);
            e.length_m = [50.0, 100.0][rng.random_range(0..2)];
            edges.insert(e.id, e);
        }
    }
    MapGraph { region: "x".into(), origin: GeoPoint { lat: 0.0, lon: 0.0 }, nodes, edges }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ranking_matches_full_sort_and_ignores_input_order(
        seed in any::<u64>(),
        k in 0usize..30,
        length_adjusted in any::<bool>(),
        min_rides in 1u64..20,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 40);
        let cfg = ScoreConfig { min_rides, length_adjusted, selection: Selection::TopK(k), ..ScoreConfig::default() };
        let (mut scores, _) = score_graph(&g, &cfg).unwrap();
        let ranking = rank_hotspots(&scores, &g, &cfg).unwrap();

        // Brute force: compare every pair with the documented order.
        let mut expected: Vec<_> = scores
            .iter()
            .filter(|s| s.total_rides >= min_rides)
            .map(|s| (s.key(length_adjusted).clone(), s.total_rides, s.element))
            .collect();
        expected.sort_by(|a, b| hotspot_order((&a.0, a.1, a.2), (&b.0, b.1, b.2)));
        let pick = |nodes: Option<bool>| -> Vec<ElementId> {
            expected
                .iter()
                .filter(|e| nodes.is_none_or(|n| matches!(e.2, ElementId::Node(_)) == n))
                .take(k)
                .map(|e| e.2)
                .collect()
        };
        match &ranking {
            HotspotRanking::Combined { elements } => {
                prop_assert!(!length_adjusted);
                prop_assert_eq!(elements.iter().map(|h| h.element).collect::<Vec<_>>(), pick(None));
            }
            HotspotRanking::Separate { nodes, edges } => {
                prop_assert!(length_adjusted);
                prop_assert_eq!(nodes.iter().map(|h| h.element).collect::<Vec<_>>(), pick(Some(true)));
                prop_assert_eq!(edges.iter().map(|h| h.element).collect::<Vec<_>>(), pick(Some(false)));
            }
        }

        use rand::seq::SliceRandom;
        scores.shuffle(&mut rng);
        prop_assert_eq!(rank_hotspots(&scores, &g, &cfg).unwrap(), ranking);
    }

    #[test]
    fn threshold_keeps_exactly_the_scores_above_it(seed in any::<u64>(), t in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 30);
        let cfg = ScoreConfig { selection: Selection::Threshold(t), min_rides: 1, ..ScoreConfig::default() };
        let (scores, _) = score_graph(&g, &cfg).unwrap();
        let ranking = rank_hotspots(&scores, &g, &cfg).unwrap();
        let threshold = Exact::from_decimal(t).unwrap();
        let expected = scores.iter().filter(|s| s.scores.total >= threshold).count();
        prop_assert_eq!(ranking.all().len(), expected);
        prop_assert!(ranking.all().iter().all(|h| h.score >= threshold));
    }

    #[test]
    fn argmax_survives_uniform_scaling(seed in any::<u64>(), k in 2u64..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 25);
        let mut scaled = g.clone();
        for n in scaled.nodes.values_mut() {
            n.r *= k;
            n.s = n.s.map(|v| v * k);
            n.n = n.n.map(|v| v * k);
        }
        for e in scaled.edges.values_mut() {
            e.r = e.r.map(|v| v * k);
            e.s = e.s.map(|row| row.map(|v| v * k));
            e.n = e.n.map(|row| row.map(|v| v * k));
        }
        // min_rides 1 so scaling does not change eligibility.
        let cfg = ScoreConfig { min_rides: 1, selection: Selection::TopK(usize::MAX), ..ScoreConfig::default() };
        let (a, _) = score_graph(&g, &cfg).unwrap();
        let (b, _) = score_graph(&scaled, &cfg).unwrap();
        let ra: Vec<_> = rank_hotspots(&a, &g, &cfg).unwrap().all().iter().map(|h| (h.element, h.score.clone())).collect();
        let rb: Vec<_> = rank_hotspots(&b, &scaled, &cfg).unwrap().all().iter().map(|h| (h.element, h.score.clone())).collect();
        // Ride-count tie-breaks scale uniformly too, so the order is unchanged.
        prop_assert_eq!(ra, rb);
    }
}

#[test]
fn node_scores_have_one_column() {
    let node = Intersection {
        id: NodeId(3),
        position: GeoPoint { lat: 0.0, lon: 0.0 },
        polygon: vec![],
        r: 10,
        s: [1, 0, 0, 0, 0, 0, 0, 2],
        n: [0, 0, 0, 5, 0, 0, 0, 0],
    };
    let s = score_node(&node, &alpha()).unwrap();
    assert_eq!(s.scores.by_direction.len(), 1);
    assert!(!s.partial && s.length_adjusted.is_none());
    // (4.4 + 2 * 4.4 + 5) / 10
    assert_eq!(s.scores.total, q(182, 100));
}
