use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sketch::{normalize_canvas, Point, Sketch, Stroke, CANVAS_SIZE};

/// Label given to scribbled strokes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScribbleLabel {
    /// A fixed class index, normally one past the model's classes.
    NewClass(usize),
    /// A label drawn uniformly from the sketch's own point labels.
    Existing,
}

/// A sketch-, stroke- or point-level perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationSpec {
    /// Rotation about the canvas center by an angle uniform in `±max_degrees`.
    Rotate { max_degrees: f64 },
    /// Gaussian offset with standard deviation `sigma` pixels on each coordinate.
    PointNoise { sigma: f64 },
    /// Split strokes into pieces of at most `break_piece_size` points.
    BreakStrokes { psi: u32 },
    /// One uniform offset in `±eta * 256` per stroke and axis.
    StrokeOffset { eta: f64 },
    /// Append random-walk strokes.
    Scribble { count: usize, label: ScribbleLabel },
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("perturbation: {m}")));
        match *self {
            Self::Rotate { max_degrees } if !(max_degrees.is_finite() && max_degrees >= 0.0) => {
                bad("max_degrees must be finite and non-negative")
            }
            Self::PointNoise { sigma } if !(sigma.is_finite() && sigma >= 0.0) => {
                bad("sigma must be finite and non-negative")
            }
            Self::StrokeOffset { eta } if !(eta.is_finite() && eta >= 0.0) => bad("eta must be finite and non-negative"),
            Self::BreakStrokes { psi } if psi > 30 => bad("psi must be at most 30"),
            _ => Ok(()),
        }
    }

    /// Short name of the kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Rotate { .. } => "rotate",
            Self::PointNoise { .. } => "point_noise",
            Self::BreakStrokes { .. } => "break_strokes",
            Self::StrokeOffset { .. } => "stroke_offset",
            Self::Scribble { .. } => "scribble",
        }
    }
}

impl std::fmt::Display for PerturbationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Self::Rotate { max_degrees } => write!(f, "kind=rotate,degrees={max_degrees}"),
            Self::PointNoise { sigma } => write!(f, "kind=point_noise,sigma={sigma}"),
            Self::BreakStrokes { psi } => write!(f, "kind=break_strokes,psi={psi}"),
            Self::StrokeOffset { eta } => write!(f, "kind=stroke_offset,eta={eta}"),
            Self::Scribble { count, label: ScribbleLabel::Existing } => {
                write!(f, "kind=scribble,count={count},label=existing")
            }
            Self::Scribble { count, label: ScribbleLabel::NewClass(c) } => {
                write!(f, "kind=scribble,count={count},label={c}")
            }
        }
    }
}

/// Parses `kind=point_noise,sigma=10` style specs.
impl std::str::FromStr for PerturbationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("perturbation field '{part}' is not key=value")))?;
            fields.insert(k.trim(), v.trim());
        }
        let kind = fields.remove("kind").ok_or_else(|| Error::Parse(format!("perturbation '{s}' has no kind")))?;
        let mut take = |key: &str| {
            fields.remove(key).ok_or_else(|| Error::Parse(format!("perturbation {kind} needs {key}")))
        };
        let num = |key: &str, v: &str| {
            v.parse::<f64>().map_err(|_| Error::Parse(format!("perturbation {key}: bad number '{v}'")))
        };
        let int = |key: &str, v: &str| {
            v.parse::<usize>().map_err(|_| Error::Parse(format!("perturbation {key}: bad integer '{v}'")))
        };
        let spec = match kind {
            "rotate" => Self::Rotate { max_degrees: num("degrees", take("degrees")?)? },
            "point_noise" => Self::PointNoise { sigma: num("sigma", take("sigma")?)? },
            "break_strokes" => Self::BreakStrokes { psi: int("psi", take("psi")?)? as u32 },
            "stroke_offset" => Self::StrokeOffset { eta: num("eta", take("eta")?)? },
            "scribble" => {
                let count = int("count", take("count")?)?;
                let label = match take("label")? {
                    "existing" => ScribbleLabel::Existing,
                    v => ScribbleLabel::NewClass(int("label", v)?),
                };
                Self::Scribble { count, label }
            }
            other => return Err(Error::Parse(format!("unknown perturbation kind '{other}'"))),
        };
        if let Some(extra) = fields.keys().next() {
            return Err(Error::Parse(format!("perturbation {kind}: unknown field '{extra}'")));
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Maximum points per piece when breaking strokes:
/// `floor(10 * n / (2^psi * strokes))`, at least 1.
pub fn break_piece_size(n: usize, strokes: usize, psi: u32) -> usize {
    let denom = (1u64 << psi) * strokes.max(1) as u64;
    ((10 * n as u64) / denom).max(1) as usize
}

/// Apply one perturbation, seeded.
pub fn perturb(sketch: &Sketch, spec: &PerturbationSpec, seed: u64) -> Result<Sketch> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sketch.clone();
    match *spec {
        PerturbationSpec::Rotate { max_degrees } => {
            let angle = if max_degrees > 0.0 { rng.random_range(-max_degrees..=max_degrees) } else { 0.0 };
            if angle != 0.0 {
                let (sin, cos) = angle.to_radians().sin_cos();
                let c = CANVAS_SIZE / 2.0;
                for p in out.strokes.iter_mut().flat_map(|s| s.points.iter_mut()) {
                    let (dx, dy) = (p.x - c, p.y - c);
                    *p = Point::new(c + dx * cos - dy * sin, c + dx * sin + dy * cos);
                }
            }
            out = normalize_canvas(&out);
        }
        PerturbationSpec::PointNoise { sigma } => {
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                for p in out.strokes.iter_mut().flat_map(|s| s.points.iter_mut()) {
                    p.x += normal.sample(&mut rng);
                    p.y += normal.sample(&mut rng);
                }
            }
        }
        PerturbationSpec::BreakStrokes { psi } => {
            let size = break_piece_size(sketch.point_count(), sketch.strokes.len(), psi);
            out.strokes = sketch.strokes.iter().flat_map(|s| split_stroke(s, size)).collect();
        }
        PerturbationSpec::StrokeOffset { eta } => {
            if eta > 0.0 {
                let r = eta * CANVAS_SIZE;
                for s in &mut out.strokes {
                    let (dx, dy) = (rng.random_range(-r..=r), rng.random_range(-r..=r));
                    for p in &mut s.points {
                        p.x += dx;
                        p.y += dy;
                    }
                }
            }
        }
        PerturbationSpec::Scribble { count, label } => {
            let existing = sketch.labels();
            for _ in 0..count {
                let points = random_walk(&mut rng);
                let n = points.len();
                let stroke = match (&existing, label) {
                    (Some(_), ScribbleLabel::NewClass(c)) => Stroke::labeled(points, vec![c; n]),
                    (Some(l), ScribbleLabel::Existing) if !l.is_empty() => {
                        let c = *l.choose(&mut rng).expect("nonempty");
                        Stroke::labeled(points, vec![c; n])
                    }
                    _ => Stroke::new(points),
                };
                out.strokes.push(stroke);
            }
        }
    }
    Ok(out)
}

fn split_stroke(stroke: &Stroke, size: usize) -> Vec<Stroke> {
    let mut pieces = Vec::new();
    for start in (0..stroke.len()).step_by(size) {
        let end = (start + size).min(stroke.len());
        pieces.push(Stroke {
            points: stroke.points[start..end].to_vec(),
            labels: stroke.labels.as_ref().map(|l| l[start..end].to_vec()),
        });
    }
    pieces
}

/// Smooth random walk of 8 to 24 points with 4 to 12 px steps, reflected at
/// the canvas borders.
fn random_walk(rng: &mut ChaCha8Rng) -> Vec<Point> {
    let count = rng.random_range(8..=24);
    let mut p = Point::new(rng.random_range(0.0..CANVAS_SIZE), rng.random_range(0.0..CANVAS_SIZE));
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut points = Vec::with_capacity(count);
    points.push(p);
    for _ in 1..count {
        heading += rng.random_range(-0.5..0.5);
        let step = rng.random_range(4.0..=12.0);
        let (mut x, mut y) = (p.x + step * heading.cos(), p.y + step * heading.sin());
        if !(0.0..=CANVAS_SIZE).contains(&x) {
            x = reflect(x);
            heading = std::f64::consts::PI - heading;
        }
        if !(0.0..=CANVAS_SIZE).contains(&y) {
            y = reflect(y);
            heading = -heading;
        }
        p = Point::new(x, y);
        points.push(p);
    }
    points
}

fn reflect(v: f64) -> f64 {
    if v < 0.0 {
        -v
    } else if v > CANVAS_SIZE {
        2.0 * CANVAS_SIZE - v
    } else {
        v
    }
}
