use super::{Point, Sketch, Stroke};
use crate::error::{Error, Result};

/// Side length of the square drawing canvas.
pub const CANVAS_SIZE: f64 = 256.0;

/// Simplification tolerance in canvas pixels.
pub const DEFAULT_RDP_EPSILON: f64 = 2.0;

/// Normalize, simplify and resample, in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocess {
    pub rdp_epsilon: f64,
    pub n_points: usize,
}

impl Preprocess {
    pub fn new(n_points: usize) -> Self {
        Self { rdp_epsilon: DEFAULT_RDP_EPSILON, n_points }
    }

    pub fn apply(&self, sketch: &Sketch) -> Result<Sketch> {
        let normalized = normalize_canvas(sketch);
        let simplified = Sketch {
            strokes: normalized
                .strokes
                .iter()
                .map(|s| rdp_simplify(s, self.rdp_epsilon))
                .collect(),
            category: normalized.category,
        };
        resample_points(&simplified, self.n_points)
    }
}

/// Uniformly scale and translate so the tight bounding box fits the canvas,
/// touching it along the longer axis and centered along the shorter one.
///
/// A sketch whose points all coincide is translated to the canvas center
/// without scaling.
pub fn normalize_canvas(sketch: &Sketch) -> Sketch {
    let mut min = Point::new(f64::INFINITY, f64::INFINITY);
    let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in sketch.points() {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    let (w, h) = (max.x - min.x, max.y - min.y);
    let extent = w.max(h);

    let map: Box<dyn Fn(Point) -> Point> = if extent > 0.0 {
        let scale = CANVAS_SIZE / extent;
        let ox = (CANVAS_SIZE - w * scale) / 2.0;
        let oy = (CANVAS_SIZE - h * scale) / 2.0;
        Box::new(move |p: Point| {
            Point::new(
                ((p.x - min.x) * scale + ox).clamp(0.0, CANVAS_SIZE),
                ((p.y - min.y) * scale + oy).clamp(0.0, CANVAS_SIZE),
            )
        })
    } else {
        let c = CANVAS_SIZE / 2.0;
        Box::new(move |_| Point::new(c, c))
    };

    Sketch {
        strokes: sketch
            .strokes
            .iter()
            .map(|s| Stroke { points: s.points.iter().map(|&p| map(p)).collect(), labels: s.labels.clone() })
            .collect(),
        category: sketch.category.clone(),
    }
}

fn segment_dist2(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist2(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist2(Point::new(a.x + t * dx, a.y + t * dy))
}

/// Ramer-Douglas-Peucker simplification. Keeps both endpoints; every dropped
/// point is within `epsilon` of the segment that replaced it.
pub fn rdp_simplify(stroke: &Stroke, epsilon: f64) -> Stroke {
    let pts = &stroke.points;
    if pts.len() <= 2 {
        return stroke.clone();
    }
    let eps2 = epsilon * epsilon;
    let mut keep = vec![false; pts.len()];
    keep[0] = true;
    keep[pts.len() - 1] = true;

    let mut stack = vec![(0usize, pts.len() - 1)];
    while let Some((first, last)) = stack.pop() {
        if last <= first + 1 {
            continue;
        }
        let (mut best, mut best_d2) = (first, -1.0);
        for i in first + 1..last {
            let d2 = segment_dist2(pts[i], pts[first], pts[last]);
            if d2 > best_d2 {
                best = i;
                best_d2 = d2;
            }
        }
        if best_d2 > eps2 {
            keep[best] = true;
            stack.push((best, last));
            stack.push((first, best));
        }
    }

    let points = pts.iter().zip(&keep).filter(|(_, &k)| k).map(|(&p, _)| p).collect();
    let labels = stroke
        .labels
        .as_ref()
        .map(|l| l.iter().zip(&keep).filter(|(_, &k)| k).map(|(&c, _)| c).collect());
    Stroke { points, labels }
}

/// Number of points each stroke receives when resampling to `n` total.
///
/// Single-point strokes get exactly one point. The rest share the remaining
/// budget in proportion to arc length, rounded by largest remainder, with at
/// least two points each.
pub fn resample_allocation(sketch: &Sketch, n: usize) -> Result<Vec<usize>> {
    let single = sketch.strokes.iter().filter(|s| s.len() == 1).count();
    let multi: Vec<usize> = (0..sketch.strokes.len()).filter(|&r| sketch.strokes[r].len() > 1).collect();
    let minimum = single + 2 * multi.len();
    if n < minimum || (multi.is_empty() && n != single) {
        return Err(Error::InvalidArgument(format!(
            "cannot resample {} strokes to {n} points (minimum {minimum})",
            sketch.strokes.len()
        )));
    }

    let mut alloc = vec![1usize; sketch.strokes.len()];
    let lengths: Vec<f64> = sketch.strokes.iter().map(Stroke::arc_length).collect();
    let mut pinned = vec![false; sketch.strokes.len()];
    loop {
        let active: Vec<usize> = multi.iter().copied().filter(|&r| !pinned[r]).collect();
        let pinned_count = multi.len() - active.len();
        let budget = n - single - 2 * pinned_count;
        if active.is_empty() {
            break;
        }
        let total: f64 = active.iter().map(|&r| lengths[r]).sum();
        let weight = |r: usize| if total > 0.0 { lengths[r] / total } else { 1.0 / active.len() as f64 };

        let mut assigned = 0;
        let mut remainders = Vec::with_capacity(active.len());
        for &r in &active {
            let quota = budget as f64 * weight(r);
            let base = quota.floor() as usize;
            alloc[r] = base;
            assigned += base;
            remainders.push((quota - base as f64, r));
        }
        // Largest remainder first, lower stroke index on ties.
        remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, r) in remainders.iter().take(budget.saturating_sub(assigned)) {
            alloc[r] += 1;
        }

        let short: Vec<usize> = active.iter().copied().filter(|&r| alloc[r] < 2).collect();
        if short.is_empty() {
            break;
        }
        for r in short {
            pinned[r] = true;
            alloc[r] = 2;
        }
    }
    Ok(alloc)
}

fn resample_stroke(stroke: &Stroke, m: usize) -> Stroke {
    let pts = &stroke.points;
    if pts.len() == 1 || m == 1 {
        return Stroke { points: vec![pts[0]; m], labels: stroke.labels.as_ref().map(|l| vec![l[0]; m]) };
    }
    let mut cumulative = Vec::with_capacity(pts.len());
    cumulative.push(0.0);
    for w in pts.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + w[0].dist(w[1]));
    }
    let total = *cumulative.last().unwrap();

    let mut points = Vec::with_capacity(m);
    let mut seg = 0;
    for t in 0..m {
        let p = if t == 0 {
            pts[0]
        } else if t == m - 1 {
            pts[pts.len() - 1]
        } else if total == 0.0 {
            pts[0]
        } else {
            let target = total * t as f64 / (m - 1) as f64;
            while seg + 2 < pts.len() && cumulative[seg + 1] < target {
                seg += 1;
            }
            let span = cumulative[seg + 1] - cumulative[seg];
            let u = if span > 0.0 { ((target - cumulative[seg]) / span).clamp(0.0, 1.0) } else { 0.0 };
            let (a, b) = (pts[seg], pts[seg + 1]);
            Point::new(a.x + u * (b.x - a.x), a.y + u * (b.y - a.y))
        };
        points.push(p);
    }

    let labels = stroke.labels.as_ref().map(|l| {
        points.iter().map(|&p| l[nearest_index(p, pts)]).collect()
    });
    Stroke { points, labels }
}

/// Index of the nearest point, lowest index on ties.
fn nearest_index(p: Point, candidates: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d2 = f64::INFINITY;
    for (i, &c) in candidates.iter().enumerate() {
        let d2 = p.dist2(c);
        if d2 < best_d2 {
            best = i;
            best_d2 = d2;
        }
    }
    best
}

/// Resample to exactly `n` points at uniform arc-length spacing per stroke.
pub fn resample_points(sketch: &Sketch, n: usize) -> Result<Sketch> {
    let alloc = resample_allocation(sketch, n)?;
    Ok(Sketch {
        strokes: sketch.strokes.iter().zip(alloc).map(|(s, m)| resample_stroke(s, m)).collect(),
        category: sketch.category.clone(),
    })
}

/// Transfer per-point predictions on `resampled` back to every point of
/// `original` by nearest neighbor.
pub fn map_labels_back(original: &Sketch, resampled: &Sketch, predicted: &[usize]) -> Result<Sketch> {
    if predicted.len() != resampled.point_count() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} resampled points",
            predicted.len(),
            resampled.point_count()
        )));
    }
    let anchors: Vec<Point> = resampled.points().collect();
    let labels: Vec<usize> = original.points().map(|p| predicted[nearest_index(p, &anchors)]).collect();
    original.with_labels(&labels)
}
