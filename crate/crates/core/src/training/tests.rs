use proptest::prelude::*;

use super::*;
use crate::sketch::{normalize_canvas, Point, Stroke};

fn bars(offset: f64) -> Sketch {
    let line = |y: f64, label: usize| {
        let pts: Vec<Point> = (0..8).map(|i| Point::new(30.0 + 25.0 * i as f64 + offset, y)).collect();
        Stroke::labeled(pts, vec![label; 8])
    };
    Sketch::new("bars", vec![line(60.0 + offset, 0), line(180.0 - offset, 1)])
}

fn tiny_config() -> TrainConfig {
    TrainConfig { epochs: 3, batch_size: 2, n_points: 16, ..TrainConfig::default() }
}

fn tiny_split() -> DatasetSplit {
    DatasetSplit {
        train: (0..4).map(|i| bars(i as f64 * 3.0)).collect(),
        validation: vec![bars(1.5)],
        test: vec![],
        seed: 0,
    }
}

#[test]
fn lr_halves_at_interval() {
    let c = TrainConfig::default();
    assert_eq!(c.lr_at(0), 0.002);
    assert_eq!(c.lr_at(49), 0.002);
    assert_eq!(c.lr_at(50), 0.001);
    assert_eq!(c.lr_at(99), 0.001);
    assert_eq!(lr_schedule(0.01, 0.1, 10, 25), 0.01 * 0.1f64.powi(2));
}

proptest! {
    #[test]
    fn lr_schedule_is_closed_form(epoch in 0usize..1000, interval in 1usize..100) {
        let mut expected = 0.002;
        for _ in 0..epoch / interval {
            expected *= 0.5;
        }
        prop_assert!((lr_schedule(0.002, 0.5, interval, epoch) - expected).abs() <= 1e-18);
    }

    #[test]
    fn break_strokes_keeps_points_and_labels(psi in 1u32..7, seed in 0u64..50) {
        let s = crate::model::random_two_stroke_sketch(40, 3, seed);
        let out = perturb(&s, &PerturbationSpec::BreakStrokes { psi }, seed).unwrap();
        let flat = |s: &Sketch| s.points().zip(s.labels().unwrap()).map(|(p, l)| (p.x.to_bits(), p.y.to_bits(), l)).collect::<Vec<_>>();
        prop_assert_eq!(flat(&out), flat(&s));
        let size = break_piece_size(40, 2, psi);
        prop_assert!(out.strokes.iter().all(|st| st.len() <= size && !st.is_empty()));
    }

    #[test]
    fn rotation_stays_on_canvas(degrees in 0.0f64..180.0, seed in 0u64..100) {
        let s = crate::model::random_two_stroke_sketch(30, 2, seed);
        let out = perturb(&s, &PerturbationSpec::Rotate { max_degrees: degrees }, seed).unwrap();
        prop_assert!(out.points().all(|p| (0.0..=256.0).contains(&p.x) && (0.0..=256.0).contains(&p.y)));
    }
}

#[test]
fn piece_size_examples() {
    assert_eq!(break_piece_size(256, 4, 6), 10);
    assert_eq!(break_piece_size(256, 4, 1), 320);
    assert_eq!(break_piece_size(10, 5, 6), 1);
}

#[test]
fn break_with_large_pieces_keeps_structure() {
    let s = bars(0.0);
    // 10 * 16 / (2 * 2) = 40 points per piece, longer than either stroke.
    assert_eq!(perturb(&s, &PerturbationSpec::BreakStrokes { psi: 1 }, 0).unwrap(), s);
    let out = perturb(&s, &PerturbationSpec::BreakStrokes { psi: 4 }, 0).unwrap();
    assert_eq!(out.strokes.iter().map(Stroke::len).collect::<Vec<_>>(), vec![5, 3, 5, 3]);
}

#[test]
fn zero_magnitude_perturbations_are_identity() {
    let s = normalize_canvas(&bars(2.0));
    for spec in [
        PerturbationSpec::Rotate { max_degrees: 0.0 },
        PerturbationSpec::PointNoise { sigma: 0.0 },
        PerturbationSpec::StrokeOffset { eta: 0.0 },
        PerturbationSpec::Scribble { count: 0, label: ScribbleLabel::Existing },
    ] {
        assert_eq!(perturb(&s, &spec, 9).unwrap(), s, "{spec}");
    }
}

#[test]
fn point_noise_statistics() {
    let pts: Vec<Point> = (0..4000).map(|_| Point::new(128.0, 128.0)).collect();
    let s = Sketch::new("x", vec![Stroke::new(pts)]);
    let out = perturb(&s, &PerturbationSpec::PointNoise { sigma: 5.0 }, 3).unwrap();
    let dx: Vec<f64> = out.points().map(|p| p.x - 128.0).collect();
    let mean = dx.iter().sum::<f64>() / dx.len() as f64;
    let var = dx.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / dx.len() as f64;
    assert!(mean.abs() < 0.3, "{mean}");
    assert!((var.sqrt() - 5.0).abs() < 0.3, "{var}");
}

#[test]
fn stroke_offset_is_shared_within_stroke() {
    let s = bars(0.0);
    let out = perturb(&s, &PerturbationSpec::StrokeOffset { eta: 0.08 }, 4).unwrap();
    for (a, b) in s.strokes.iter().zip(&out.strokes) {
        let d0 = (b.points[0].x - a.points[0].x, b.points[0].y - a.points[0].y);
        assert!(d0.0.abs() <= 0.08 * 256.0 && d0.1.abs() <= 0.08 * 256.0);
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((q.x - p.x - d0.0).abs() < 1e-9 && (q.y - p.y - d0.1).abs() < 1e-9);
        }
    }
}

#[test]
fn scribble_strokes() {
    let s = bars(0.0);
    let out = perturb(&s, &PerturbationSpec::Scribble { count: 3, label: ScribbleLabel::NewClass(2) }, 5).unwrap();
    assert_eq!(out.strokes.len(), 5);
    for st in &out.strokes[2..] {
        assert!((8..=24).contains(&st.len()));
        assert!(st.labels.as_ref().unwrap().iter().all(|&l| l == 2));
        assert!(st.points.iter().all(|p| (0.0..=256.0).contains(&p.x) && (0.0..=256.0).contains(&p.y)));
        for w in st.points.windows(2) {
            assert!(w[0].dist(w[1]) <= 12.0 + 1e-9);
        }
    }
    let out = perturb(&s, &PerturbationSpec::Scribble { count: 4, label: ScribbleLabel::Existing }, 6).unwrap();
    assert!(out.strokes[2..].iter().all(|st| st.labels.as_ref().unwrap().iter().all(|&l| l < 2)));
}

#[test]
fn spec_text_round_trip() {
    for text in [
        "kind=rotate,degrees=30",
        "kind=point_noise,sigma=10",
        "kind=break_strokes,psi=6",
        "kind=stroke_offset,eta=0.32",
        "kind=scribble,count=2,label=existing",
        "kind=scribble,count=1,label=4",
    ] {
        let spec: PerturbationSpec = text.parse().unwrap();
        assert_eq!(spec.to_string(), text);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<PerturbationSpec>(&json).unwrap(), spec);
    }
    assert!("kind=point_noise".parse::<PerturbationSpec>().is_err());
    assert!("kind=melt,x=1".parse::<PerturbationSpec>().is_err());
    assert!("kind=point_noise,sigma=-1".parse::<PerturbationSpec>().is_err());
    assert!("kind=point_noise,sigma=1,eta=2".parse::<PerturbationSpec>().is_err());
}

#[test]
fn config_file_keys() {
    let text = "\
# toy run
epochs = 30
batch_size = 8
lr = 0.001
lr_decay_interval = 10
lr_decay_factor = 0.1
seed = 42
n_points = 64
k = 4
dilations = 1, 2, 4
rdp_epsilon = 1.5
augment_fraction = 0.25
augmentation = kind=point_noise,sigma=10
augmentation = kind=rotate,degrees=15  # second one
";
    let c = TrainConfig::parse(text).unwrap();
    assert_eq!((c.epochs, c.batch_size, c.seed, c.n_points, c.k), (30, 8, 42, 64, 4));
    assert_eq!((c.lr, c.lr_decay_interval, c.lr_decay_factor), (0.001, 10, 0.1));
    assert_eq!(c.dilations, vec![1, 2, 4]);
    assert_eq!((c.rdp_epsilon, c.augment_fraction), (1.5, 0.25));
    assert_eq!(c.augmentation.len(), 2);
    let m = c.model_config(3);
    assert_eq!((m.units_per_branch, m.sample_points, m.k, m.num_classes), (3, 64, 4, 3));

    assert_eq!(TrainConfig::parse("").unwrap(), TrainConfig::default());
    assert!(matches!(TrainConfig::parse("epoch = 3"), Err(Error::Parse(_))));
    assert!(matches!(TrainConfig::parse("epochs"), Err(Error::Parse(_))));
    assert!(matches!(TrainConfig::parse("epochs = 0"), Err(Error::InvalidArgument(_))));
    assert!(matches!(TrainConfig::parse("lr = -1"), Err(Error::InvalidArgument(_))));
}

#[test]
fn split_sizes_and_determinism() {
    let sketches: Vec<Sketch> = (0..800).map(|i| Sketch::new(format!("s{i}"), vec![])).collect();
    let a = split_dataset(&sketches, (650, 50, 100), 3).unwrap();
    assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (650, 50, 100));
    let mut names: Vec<&str> = a.train.iter().chain(&a.validation).chain(&a.test).map(|s| s.category.as_str()).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), 800);
    assert_eq!(split_dataset(&sketches, (650, 50, 100), 3).unwrap(), a);
    assert_ne!(split_dataset(&sketches, (650, 50, 100), 4).unwrap(), a);

    let all = split_dataset(&sketches[..10], (10, 0, 0), 1).unwrap();
    assert_eq!((all.train.len(), all.validation.len(), all.test.len()), (10, 0, 0));
    assert!(matches!(split_dataset(&sketches[..10], (8, 2, 1), 1), Err(Error::InvalidArgument(_))));
}

#[test]
fn best_epoch_selection() {
    let rec = |epoch, val| EpochRecord { epoch, train_loss: 1.0, val_loss: val, lr: 0.1 };
    assert_eq!(select_best_epoch(&[rec(0, Some(0.5)), rec(1, Some(0.3)), rec(2, Some(0.3)), rec(3, Some(0.4))]), Some(1));
    assert_eq!(select_best_epoch(&[rec(0, None), rec(1, None)]), Some(1));
    assert_eq!(select_best_epoch(&[]), None);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let config = TrainConfig { lr: 0.0, ..tiny_config() };
    let model_config = config.model_config(2);
    let out = train(&tiny_split(), &model_config, &config).unwrap();
    let init = Model::new(model_config, config.seed).unwrap();
    assert_eq!(out.checkpoint.params, init.params);
    assert_eq!(out.history.len(), 3);
}

#[test]
fn training_is_deterministic_and_selects_best() {
    let config = TrainConfig { augmentation: vec![PerturbationSpec::PointNoise { sigma: 3.0 }], ..tiny_config() };
    let model_config = config.model_config(2);
    let a = train(&tiny_split(), &model_config, &config).unwrap();
    let b = train(&tiny_split(), &model_config, &config).unwrap();
    assert_eq!(a.checkpoint.to_json(), b.checkpoint.to_json());
    assert_eq!(a.history, b.history);
    assert_eq!(a.checkpoint.meta.best_epoch, select_best_epoch(&a.history));

    let mut buf = Vec::new();
    write_history(&mut buf, &a.history).unwrap();
    let lines: Vec<EpochRecord> =
        String::from_utf8(buf).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines, a.history);
}

#[test]
fn training_rejects_unlabeled_or_out_of_range() {
    let config = tiny_config();
    let mut split = tiny_split();
    split.train[1] = split.train[1].without_labels();
    assert!(matches!(train(&split, &config.model_config(2), &config), Err(Error::Validation(_))));

    let split = tiny_split();
    let mut bad = split.clone();
    bad.validation[0].strokes[0].labels = Some(vec![5; 8]);
    assert!(matches!(train(&bad, &config.model_config(2), &config), Err(Error::Validation(_))));
}

#[test]
fn training_reduces_loss() {
    let config = TrainConfig { epochs: 30, ..tiny_config() };
    let out = train(&tiny_split(), &config.model_config(2), &config).unwrap();
    let first = out.history[0].train_loss;
    let last = out.history.last().unwrap().train_loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
    let model = out.checkpoint.model().unwrap();
    assert!(point_accuracy(&model, &tiny_split().train, &config.preprocess()).unwrap() > 0.9);
}
