use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sketch::{Point, Sketch, Stroke};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    /// Stick (0) and round head (1).
    Lollipop,
    /// Top bar (0) and bottom bar (1).
    TwoBars,
    /// Horizontal bar (0), vertical bar (1) and a ring around the center (2).
    Cross,
}

impl ToyKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Lollipop => "lollipop",
            Self::TwoBars => "two_bars",
            Self::Cross => "cross",
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Self::Lollipop | Self::TwoBars => 2,
            Self::Cross => 3,
        }
    }
}

impl std::str::FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lollipop" => Ok(Self::Lollipop),
            "two_bars" => Ok(Self::TwoBars),
            "cross" => Ok(Self::Cross),
            other => Err(Error::InvalidArgument(format!("unknown toy dataset '{other}'"))),
        }
    }
}

/// Uniform jitter magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    /// Translation in pixels per axis.
    pub position: f64,
    /// Relative change of overall size.
    pub scale: f64,
    /// Rotation in degrees about the canvas center.
    pub rotation_degrees: f64,
    /// Relative change of each part's size.
    pub part: f64,
}

impl Jitter {
    pub const NONE: Jitter = Jitter { position: 0.0, scale: 0.0, rotation_degrees: 0.0, part: 0.0 };
}

impl Default for Jitter {
    fn default() -> Self {
        Self { position: 20.0, scale: 0.15, rotation_degrees: 10.0, part: 0.2 }
    }
}

fn sym(rng: &mut ChaCha8Rng, r: f64) -> f64 {
    if r > 0.0 {
        rng.random_range(-r..=r)
    } else {
        0.0
    }
}

/// Closed 16-point circle: 15 distinct points and the first repeated.
fn circle(cx: f64, cy: f64, r: f64) -> Vec<Point> {
    (0..16)
        .map(|i| {
            let t = std::f64::consts::TAU * (i % 15) as f64 / 15.0;
            Point::new(cx + r * t.cos(), cy + r * t.sin())
        })
        .collect()
}

fn part(points: Vec<Point>, label: usize) -> Stroke {
    let n = points.len();
    Stroke::labeled(points, vec![label; n])
}

fn canonical(kind: ToyKind, rng: &mut ChaCha8Rng, jitter: f64) -> Vec<Stroke> {
    let mut size = |base: f64| base * (1.0 + sym(rng, jitter));
    match kind {
        ToyKind::Lollipop => {
            let (stick, radius) = (size(120.0), size(40.0));
            vec![
                part(vec![Point::new(128.0, 240.0), Point::new(128.0, 240.0 - stick)], 0),
                part(circle(128.0, 240.0 - stick - radius, radius), 1),
            ]
        }
        ToyKind::TwoBars => {
            let (half, gap) = (size(80.0), size(38.0));
            vec![
                part(vec![Point::new(128.0 - half, 128.0 - gap), Point::new(128.0 + half, 128.0 - gap)], 0),
                part(vec![Point::new(128.0 - half, 128.0 + gap), Point::new(128.0 + half, 128.0 + gap)], 1),
            ]
        }
        ToyKind::Cross => {
            let (h, v, r) = (size(80.0), size(80.0), size(40.0));
            vec![
                part(vec![Point::new(128.0 - h, 128.0), Point::new(128.0 + h, 128.0)], 0),
                part(vec![Point::new(128.0, 128.0 - v), Point::new(128.0, 128.0 + v)], 1),
                part(circle(128.0, 128.0, r), 2),
            ]
        }
    }
}

/// Labeled toy sketches with the default jitter.
pub fn make_toy_dataset(kind: ToyKind, count: usize, seed: u64) -> Result<Vec<Sketch>> {
    make_toy_dataset_with(kind, count, seed, Jitter::default())
}

/// Labeled toy sketches. With [`Jitter::NONE`] every sketch is the canonical
/// instance.
pub fn make_toy_dataset_with(kind: ToyKind, count: usize, seed: u64, jitter: Jitter) -> Result<Vec<Sketch>> {
    if count == 0 {
        return Err(Error::InvalidArgument("toy dataset count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let mut strokes = canonical(kind, &mut rng, jitter.part);
            let scale = 1.0 + sym(&mut rng, jitter.scale);
            let (sin, cos) = sym(&mut rng, jitter.rotation_degrees).to_radians().sin_cos();
            let (dx, dy) = (sym(&mut rng, jitter.position), sym(&mut rng, jitter.position));
            for p in strokes.iter_mut().flat_map(|s| s.points.iter_mut()) {
                let (x, y) = ((p.x - 128.0) * scale, (p.y - 128.0) * scale);
                *p = Point::new(128.0 + x * cos - y * sin + dx, 128.0 + x * sin + y * cos + dy);
            }
            Sketch::new(kind.name(), strokes)
        })
        .collect())
}

/// Insert evenly spaced points so consecutive points are at most `spacing`
/// apart. Inserted points take the label of their segment's start.
pub fn densify(sketch: &Sketch, spacing: f64) -> Result<Sketch> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::InvalidArgument(format!("densify spacing must be positive, got {spacing}")));
    }
    let strokes = sketch
        .strokes
        .iter()
        .map(|s| {
            let mut points = Vec::new();
            let mut labels = Vec::new();
            for (i, &p) in s.points.iter().enumerate() {
                points.push(p);
                labels.push(s.label(i));
                if let Some(&q) = s.points.get(i + 1) {
                    let pieces = (p.dist(q) / spacing).ceil().max(1.0) as usize;
                    for t in 1..pieces {
                        let f = t as f64 / pieces as f64;
                        points.push(Point::new(p.x + (q.x - p.x) * f, p.y + (q.y - p.y) * f));
                        labels.push(s.label(i));
                    }
                }
            }
            Stroke { points, labels: labels.into_iter().collect() }
        })
        .collect();
    Ok(Sketch::new(sketch.category.clone(), strokes))
}
