use std::collections::HashMap;

use proptest::prelude::*;

use super::*;
use crate::sketch::{Point, Stroke};

fn stroke(pts: &[(f64, f64)], labels: &[usize]) -> Stroke {
    Stroke::labeled(pts.iter().map(|&(x, y)| Point::new(x, y)).collect(), labels.to_vec())
}

fn raster_from(cells: &[(usize, usize, usize, usize, usize)], strokes: usize) -> RasterLabels {
    let mut r = RasterLabels::empty(RASTER_SIZE, RASTER_SIZE);
    for &(x, y, g, p, s) in cells {
        r.set(x, y, g, p, s);
    }
    r.stroke_point_accuracy = vec![0.0; strokes];
    r
}

#[test]
fn horizontal_stroke_pixels() {
    let s = Sketch::new("t", vec![stroke(&[(0.0, 100.0), (9.0, 100.0)], &[1, 1])]);
    let r = rasterize(&s, &s).unwrap();
    let drawn: Vec<usize> = (0..r.owner.len()).filter(|&i| r.owner[i].is_some()).collect();
    assert_eq!(drawn, (0..10).map(|x| 100 * RASTER_SIZE + x).collect::<Vec<_>>());
    assert_eq!(r.gt, r.pred);
}

#[test]
fn coordinates_floor_and_clamp() {
    let s = Sketch::new("t", vec![stroke(&[(255.7, 256.0)], &[0]), stroke(&[(-3.0, 0.9)], &[1])]);
    let r = rasterize(&s, &s).unwrap();
    assert_eq!(r.owner[255 * RASTER_SIZE + 255], Some(0));
    assert_eq!(r.owner[0], Some(1));
    assert_eq!(r.drawn_pixels(), 2);
}

#[test]
fn crossing_strokes_match_pixel_walk() {
    let s = Sketch::new(
        "t",
        vec![
            stroke(&[(10.0, 50.0), (40.0, 50.0), (40.0, 60.0)], &[0, 1, 1]),
            stroke(&[(25.0, 40.0), (25.0, 70.0)], &[2, 2]),
        ],
    );
    let pred = s.with_labels(&[1, 1, 0, 2, 0]).unwrap();
    let r = rasterize(&s, &pred).unwrap();

    // Axis-aligned segments: walk every pixel directly, later segments win.
    let mut expect: HashMap<(usize, usize), (usize, usize, usize)> = HashMap::new();
    let segments = [((10, 50), (40, 50), 0, 1, 0), ((40, 50), (40, 60), 1, 1, 0), ((25, 40), (25, 70), 2, 2, 1)];
    for &((x0, y0), (x1, y1), g, p, st) in &segments {
        for x in x0.min(x1)..=x0.max(x1) {
            for y in y0.min(y1)..=y0.max(y1) {
                expect.insert((x, y), (g, p, st));
            }
        }
    }
    for y in 0..RASTER_SIZE {
        for x in 0..RASTER_SIZE {
            let i = y * RASTER_SIZE + x;
            let got = r.owner[i].map(|o| (r.gt[i].unwrap(), r.pred[i].unwrap(), o));
            assert_eq!(got, expect.get(&(x, y)).copied(), "pixel {x},{y}");
        }
    }
    assert_eq!(r.stroke_point_accuracy, vec![1.0 / 3.0, 0.5]);
}

#[test]
fn rasterize_rejects_bad_input() {
    let s = Sketch::new("t", vec![stroke(&[(0.0, 0.0), (5.0, 5.0)], &[0, 0])]);
    assert!(matches!(rasterize(&s, &s.without_labels()), Err(Error::Validation(_))));
    let mut moved = s.clone();
    moved.strokes[0].points[1].x = 6.0;
    assert!(rasterize(&s, &moved).is_err());
}

#[test]
fn p_metric_counts() {
    let cells: Vec<_> = (0..10).map(|x| (x, 0, 1, if x < 7 { 1 } else { 0 }, 0)).collect();
    assert!((p_metric(&raster_from(&cells, 1)).unwrap() - 0.7).abs() < 1e-15);
    let same: Vec<_> = (0..10).map(|x| (x, 3, 2, 2, 0)).collect();
    assert_eq!(p_metric(&raster_from(&same, 1)).unwrap(), 1.0);
    let wrong: Vec<_> = (0..10).map(|x| (x, 3, 2, 0, 0)).collect();
    assert_eq!(p_metric(&raster_from(&wrong, 1)).unwrap(), 0.0);
    assert!(matches!(p_metric(&RasterLabels::empty(256, 256)), Err(Error::DegenerateInput(_))));
}

#[test]
fn c_metric_threshold_and_counts() {
    // Stroke 0: 3 of 4 correct, exactly the threshold. Stroke 1: 2 of 4.
    let mut cells: Vec<_> = (0..4).map(|x| (x, 0, 0, if x < 3 { 0 } else { 1 }, 0)).collect();
    cells.extend((0..4).map(|x| (x, 1, 0, if x < 2 { 0 } else { 1 }, 1)));
    assert_eq!(c_metric(&raster_from(&cells, 2)).unwrap(), 0.5);

    let mut cells = Vec::new();
    for s in 0..4 {
        cells.extend((0..8).map(|x| (x, s, 1, if s == 3 && x < 3 { 0 } else { 1 }, s)));
    }
    assert_eq!(c_metric(&raster_from(&cells, 4)).unwrap(), 0.75);

    let all: Vec<_> = (0..5).map(|x| (x, 0, 1, 1, 0)).collect();
    assert_eq!(c_metric(&raster_from(&all, 1)).unwrap(), 1.0);
}

#[test]
fn c_metric_falls_back_to_points() {
    // Stroke 0 is fully covered by stroke 1.
    let s = Sketch::new(
        "t",
        vec![stroke(&[(10.0, 10.0), (20.0, 10.0)], &[0, 0]), stroke(&[(5.0, 10.0), (30.0, 10.0)], &[1, 1])],
    );
    let good = rasterize(&s, &s).unwrap();
    assert!(good.owner.iter().all(|o| *o != Some(0)));
    assert_eq!(c_metric(&good).unwrap(), 1.0);
    let bad = rasterize(&s, &s.with_labels(&[1, 1, 1, 1]).unwrap()).unwrap();
    assert_eq!(c_metric(&bad).unwrap(), 0.5);
}

fn brute_metrics(r: &RasterLabels) -> (f64, f64) {
    let mut per: HashMap<usize, Vec<bool>> = HashMap::new();
    let mut all = Vec::new();
    for y in 0..r.height {
        for x in 0..r.width {
            let i = y * r.width + x;
            if let Some(o) = r.owner[i] {
                let ok = r.gt[i] == r.pred[i];
                all.push(ok);
                per.entry(o).or_default().push(ok);
            }
        }
    }
    let p = all.iter().filter(|&&b| b).count() as f64 / all.len() as f64;
    let passing = (0..r.stroke_count())
        .filter(|s| match per.get(s) {
            Some(v) => v.iter().filter(|&&b| b).count() as f64 / v.len() as f64 >= 0.75,
            None => r.stroke_point_accuracy[*s] >= 0.75,
        })
        .count();
    (p, passing as f64 / r.stroke_count() as f64)
}

fn arb_sketch() -> impl Strategy<Value = (Sketch, Vec<usize>)> {
    prop::collection::vec(prop::collection::vec((0.0f64..256.0, 0.0f64..256.0, 0usize..3, 0usize..3), 1..8), 1..6)
        .prop_map(|strokes| {
            let mut pred = Vec::new();
            let strokes = strokes
                .into_iter()
                .map(|pts| {
                    pred.extend(pts.iter().map(|p| p.3));
                    stroke(&pts.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(), &pts.iter().map(|p| p.2).collect::<Vec<_>>())
                })
                .collect();
            (Sketch::new("t", strokes), pred)
        })
}

proptest! {
    #[test]
    fn metrics_match_brute_force((s, pred) in arb_sketch()) {
        let r = rasterize(&s, &s.with_labels(&pred).unwrap()).unwrap();
        let (p, c) = brute_metrics(&r);
        prop_assert!((p_metric(&r).unwrap() - p).abs() < 1e-12);
        prop_assert!((c_metric(&r).unwrap() - c).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_relabeling((s, pred) in arb_sketch(), perm in Just([2usize, 0, 1])) {
        let r = rasterize(&s, &s.with_labels(&pred).unwrap()).unwrap();
        let relabel = |l: &[usize]| l.iter().map(|&c| perm[c]).collect::<Vec<_>>();
        let s2 = s.with_labels(&relabel(&s.labels().unwrap())).unwrap();
        let r2 = rasterize(&s2, &s2.with_labels(&relabel(&pred)).unwrap()).unwrap();
        prop_assert_eq!(p_metric(&r).unwrap(), p_metric(&r2).unwrap());
        prop_assert_eq!(c_metric(&r).unwrap(), c_metric(&r2).unwrap());
    }

    #[test]
    fn bresenham_is_connected(x0 in 0i64..256, y0 in 0i64..256, x1 in 0i64..256, y1 in 0i64..256) {
        let line = bresenham((x0, y0), (x1, y1));
        prop_assert_eq!(line[0], (x0, y0));
        prop_assert_eq!(*line.last().unwrap(), (x1, y1));
        prop_assert_eq!(line.len() as i64, (x1 - x0).abs().max((y1 - y0).abs()) + 1);
        for w in line.windows(2) {
            prop_assert!((w[0].0 - w[1].0).abs() <= 1 && (w[0].1 - w[1].1).abs() <= 1);
        }
    }
}

fn two_bar_sketches() -> Vec<Sketch> {
    (0..6)
        .map(|i| {
            let y = 40.0 + 10.0 * i as f64;
            Sketch::new(
                "bars",
                vec![
                    stroke(&[(20.0, y), (120.0, y), (220.0, y)], &[0, 0, 0]),
                    stroke(&[(20.0, y + 100.0), (120.0, y + 100.0), (220.0, y + 100.0)], &[1, 1, 1]),
                ],
            )
        })
        .collect()
}

#[test]
fn oracle_backend_is_perfect() {
    let report = evaluate(&two_bar_sketches(), &OracleSegmenter, &Preprocess::new(16), None, 0).unwrap();
    assert!(report.per_sketch.iter().all(|s| s.p_metric == 1.0 && s.c_metric == 1.0));
    assert_eq!((report.p_metric, report.c_metric), (1.0, 1.0));
    assert_eq!(report.category, "bars");
}

#[test]
fn constant_backend_scores_class_share() {
    let report = evaluate(&two_bar_sketches(), &ConstantSegmenter(0), &Preprocess::new(16), None, 0).unwrap();
    // Both bars span the full canvas width after normalization, so each owns half the pixels.
    for s in &report.per_sketch {
        assert!((s.p_metric - 0.5).abs() < 1e-12, "{}", s.p_metric);
        assert_eq!(s.c_metric, 0.5);
    }
}

#[test]
fn zero_noise_equals_clean_evaluation() {
    let data = two_bar_sketches();
    let model = Model::new(crate::model::ModelConfig { sample_points: 16, ..Default::default() }, 1).unwrap();
    let clean = evaluate(&data, &model, &Preprocess::new(16), None, 5).unwrap();
    let zero = evaluate(&data, &model, &Preprocess::new(16), Some(&PerturbationSpec::PointNoise { sigma: 0.0 }), 5).unwrap();
    assert_eq!(clean.per_sketch, zero.per_sketch);
    assert_eq!((clean.p_metric.to_bits(), clean.c_metric.to_bits()), (zero.p_metric.to_bits(), zero.c_metric.to_bits()));
}

#[test]
fn checkpoint_category_must_match() {
    let config = crate::model::ModelConfig { sample_points: 16, ..Default::default() };
    let model = Model::new(config.clone(), 1).unwrap();
    let ckpt = Checkpoint {
        meta: crate::model::CheckpointMeta {
            model: config,
            training: None,
            rdp_epsilon: 2.0,
            seed: 1,
            category: "cats".into(),
            classes: vec!["a".into(), "b".into()],
            best_epoch: None,
        },
        params: model.params,
    };
    assert!(matches!(evaluate_checkpoint(&two_bar_sketches(), &ckpt, None, 0), Err(Error::InvalidArgument(_))));
    let mut ok = ckpt.clone();
    ok.meta.category = "bars".into();
    let report = evaluate_checkpoint(&two_bar_sketches(), &ok, None, 0).unwrap();
    assert_eq!(report.checkpoint, ok.id());
    let reports = sweep(&two_bar_sketches(), &ok, &[PerturbationSpec::PointNoise { sigma: 0.0 }], 0).unwrap();
    assert_eq!(reports[0].per_sketch, report.per_sketch);
    let json = serde_json::to_string(&reports).unwrap();
    assert_eq!(serde_json::from_str::<Vec<EvalReport>>(&json).unwrap(), reports);
}

#[test]
fn unlabeled_evaluation_fails() {
    let s = two_bar_sketches()[0].without_labels();
    assert!(matches!(evaluate(&[s], &OracleSegmenter, &Preprocess::new(16), None, 0), Err(Error::Validation(_))));
}
