use std::collections::HashSet;

use proptest::prelude::*;

use super::*;
use crate::evaluation::{evaluate, rasterize, OracleSegmenter};
use crate::sketch::{normalize_canvas, Preprocess};

fn pixels(s: &Stroke) -> Vec<(usize, usize)> {
    s.points.iter().map(|p| (p.x as usize, p.y as usize)).collect()
}

fn assert_neighbor_chain(s: &Sketch) {
    for st in &s.strokes {
        for w in pixels(st).windows(2) {
            assert!(w[0] != w[1] && w[0].0.abs_diff(w[1].0) <= 1 && w[0].1.abs_diff(w[1].1) <= 1, "{w:?}");
        }
    }
}

#[test]
fn parse_and_print() {
    let text = "4 3\n.12.\n....\n0...\n";
    let map = EdgeMap::parse(text).unwrap();
    assert_eq!((map.width, map.height, map.on_count()), (4, 3, 3));
    assert_eq!((map.get(1, 0), map.get(2, 0), map.get(0, 2), map.get(0, 0)), (Some(1), Some(2), Some(0), None));
    assert_eq!(map.to_text(), text);
    for bad in ["", "4\n....", "2 2\n..\n.", "2 1\n.x", "2 1\n...", "1 1\n.\n."] {
        assert!(matches!(EdgeMap::parse(bad), Err(Error::Parse(_))), "{bad:?}");
    }
}

#[test]
fn horizontal_run_is_one_stroke() {
    let map = EdgeMap::parse("12 3\n............\n.3333333333.\n............").unwrap();
    for seed in 0..20 {
        let s = trace_strokes(&map, seed).unwrap();
        assert_eq!(s.strokes.len(), 1);
        let xs: Vec<usize> = pixels(&s.strokes[0]).iter().map(|p| p.0).collect();
        assert_eq!(xs.len(), 10);
        assert!(xs.windows(2).all(|w| w[1] == w[0] + 1) || xs.windows(2).all(|w| w[0] == w[1] + 1), "{xs:?}");
        assert_eq!(s.strokes[0].labels, Some(vec![3; 10]));
    }
}

#[test]
fn l_shape_is_walked_around_the_corner() {
    let map = EdgeMap::parse("7 7\n.......\n.11111.\n.....1.\n.....2.\n.....2.\n.....2.\n.......").unwrap();
    // The only ordering that visits every pixel with 8-neighbor steps.
    let order: Vec<(usize, usize)> = (1..=5).map(|x| (x, 1)).chain((2..=5).map(|y| (5, y))).collect();
    let reversed: Vec<(usize, usize)> = order.iter().rev().copied().collect();
    for seed in 0..40 {
        let s = trace_strokes(&map, seed).unwrap();
        assert_eq!(s.strokes.len(), 1, "seed {seed}");
        let got = pixels(&s.strokes[0]);
        assert!(got == order || got == reversed, "seed {seed}: {got:?}");
    }
}

#[test]
fn disjoint_segments_give_two_strokes() {
    let map = EdgeMap::parse("8 4\n........\n.000....\n....111.\n........").unwrap();
    let map2 = EdgeMap::parse("8 4\n000.....\n........\n....1111\n........").unwrap();
    for seed in 0..10 {
        assert_eq!(trace_strokes(&map2, seed).unwrap().strokes.len(), 2);
        // Diagonally touching runs are connected and trace as one stroke.
        assert_eq!(trace_strokes(&map, seed).unwrap().strokes.len(), 1);
    }
}

#[test]
fn single_pixels() {
    let isolated = EdgeMap::parse("5 5\n.....\n.1...\n.....\n...22\n.....").unwrap();
    for seed in 0..10 {
        let s = trace_strokes(&isolated, seed).unwrap();
        assert_eq!(s.strokes.len(), 1);
        assert_eq!(s.point_count(), 2);
    }
    assert!(matches!(trace_strokes(&EdgeMap::parse("2 1\n1.").unwrap(), 0), Err(Error::DegenerateInput(_))));
    assert!(matches!(trace_strokes(&EdgeMap::new(3, 3), 0), Err(Error::DegenerateInput(_))));
}

#[test]
fn tracing_is_deterministic() {
    let map = EdgeMap::parse("6 6\n111...\n..1...\n..1111\n.....1\n..1111\n......").unwrap();
    assert_eq!(trace_strokes(&map, 8).unwrap(), trace_strokes(&map, 8).unwrap());
}

fn arb_map() -> impl Strategy<Value = EdgeMap> {
    (3usize..12, 3usize..12).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop::option::weighted(0.45, 0usize..4), w * h)
            .prop_map(move |labels| EdgeMap { width: w, height: h, labels })
    })
}

proptest! {
    #[test]
    fn tracing_partitions_connected_pixels(map in arb_map(), seed in 0u64..1000) {
        let on: Vec<(usize, usize)> = (0..map.labels.len())
            .filter(|&i| map.labels[i].is_some())
            .map(|i| (i % map.width, i / map.width))
            .collect();
        let connected: HashSet<(usize, usize)> = on
            .iter()
            .copied()
            .filter(|&(x, y)| map.neighbors(x, y).any(|(a, b)| map.get(a, b).is_some()))
            .collect();
        match trace_strokes(&map, seed) {
            Err(Error::DegenerateInput(_)) => prop_assert!(connected.is_empty()),
            Err(e) => prop_assert!(false, "{e}"),
            Ok(s) => {
                let mut seen = HashSet::new();
                for st in &s.strokes {
                    for ((x, y), l) in pixels(st).into_iter().zip(st.labels.as_ref().unwrap()) {
                        prop_assert!(seen.insert((x, y)), "pixel {x},{y} visited twice");
                        prop_assert_eq!(map.get(x, y), Some(*l));
                    }
                }
                prop_assert_eq!(seen, connected);
                assert_neighbor_chain(&s);
            }
        }
    }
}

#[test]
fn canonical_lollipop() {
    let s = &make_toy_dataset_with(ToyKind::Lollipop, 1, 0, Jitter::NONE).unwrap()[0];
    assert_eq!(s.category, "lollipop");
    assert_eq!(s.strokes.len(), 2);
    assert_eq!(s.strokes[0].points, vec![Point::new(128.0, 240.0), Point::new(128.0, 120.0)]);
    assert_eq!(s.strokes[0].labels, Some(vec![0, 0]));
    let head = &s.strokes[1];
    assert_eq!(head.len(), 16);
    assert_eq!(head.labels, Some(vec![1; 16]));
    assert_eq!(head.points[0], head.points[15]);
    for p in &head.points {
        assert!((p.dist(Point::new(128.0, 80.0)) - 40.0).abs() < 1e-9);
    }
    let many = make_toy_dataset_with(ToyKind::Lollipop, 3, 7, Jitter::NONE).unwrap();
    assert!(many.iter().all(|m| m == s));
}

#[test]
fn toy_datasets_are_seeded() {
    for kind in [ToyKind::Lollipop, ToyKind::TwoBars, ToyKind::Cross] {
        let a = make_toy_dataset(kind, 5, 3).unwrap();
        assert_eq!(a, make_toy_dataset(kind, 5, 3).unwrap());
        assert_ne!(a, make_toy_dataset(kind, 5, 4).unwrap());
        assert_ne!(a[0], a[1]);
        assert!(a.iter().all(|s| s.validate_classes(kind.num_classes()).is_ok()));
    }
    assert!(make_toy_dataset(ToyKind::Cross, 0, 0).is_err());
    assert_eq!("two_bars".parse::<ToyKind>().unwrap(), ToyKind::TwoBars);
}

#[test]
fn two_bars_pixel_share_is_even() {
    let s = &make_toy_dataset_with(ToyKind::TwoBars, 1, 0, Jitter::NONE).unwrap()[0];
    let r = rasterize(s, s).unwrap();
    let count = |c| r.gt.iter().filter(|g| **g == Some(c)).count();
    assert_eq!(count(0), count(1));
    let n = normalize_canvas(s);
    let r = rasterize(&n, &n).unwrap();
    assert_eq!(r.gt.iter().filter(|g| **g == Some(0)).count(), r.gt.iter().filter(|g| **g == Some(1)).count());
}

#[test]
fn oracle_labels_score_perfectly_on_toys() {
    for kind in [ToyKind::Lollipop, ToyKind::TwoBars, ToyKind::Cross] {
        let data = make_toy_dataset(kind, 10, 11).unwrap();
        let report = evaluate(&data, &OracleSegmenter, &Preprocess::new(64), None, 0).unwrap();
        assert_eq!((report.p_metric, report.c_metric), (1.0, 1.0), "{kind:?}");
    }
}

#[test]
fn densify_bounds_spacing_and_keeps_labels() {
    let s = Sketch::new("t", vec![Stroke::labeled(vec![Point::new(0.0, 0.0), Point::new(10.0, 0.0), Point::new(10.0, 3.0)], vec![0, 1, 1])]);
    let d = densify(&s, 4.0).unwrap();
    let third = 10.0 / 3.0;
    let expect = [(0.0, 0.0), (third, 0.0), (2.0 * third, 0.0), (10.0, 0.0), (10.0, 3.0)];
    assert_eq!(d.strokes[0].len(), expect.len());
    for (p, (x, y)) in d.strokes[0].points.iter().zip(expect) {
        assert!((p.x - x).abs() < 1e-12 && (p.y - y).abs() < 1e-12, "{p:?}");
    }
    assert_eq!(d.strokes[0].labels, Some(vec![0, 0, 0, 1, 1]));
    assert!(densify(&s, 0.0).is_err());
    assert_eq!(densify(&s, 100.0).unwrap(), s);
}
