//! Sketch data types, file formats and the preprocessing chain.

mod io;
mod preprocess;

pub use io::{parse_sketch, read_sketches, to_native_line, write_sketches, Format, LabelMap};
pub use preprocess::{
    map_labels_back, normalize_canvas, rdp_simplify, resample_allocation, resample_points,
    Preprocess, CANVAS_SIZE, DEFAULT_RDP_EPSILON,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(self, other: Point) -> f64 {
        self.dist2(other).sqrt()
    }
}

/// An ordered polyline with optional per-point class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    pub points: Vec<Point>,
    pub labels: Option<Vec<usize>>,
}

impl Stroke {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points, labels: None }
    }

    pub fn labeled(points: Vec<Point>, labels: Vec<usize>) -> Self {
        Self { points, labels: Some(labels) }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total polyline length.
    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }
}

/// One drawing: an ordered list of strokes belonging to a category.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    pub strokes: Vec<Stroke>,
    pub category: String,
}

impl Sketch {
    pub fn new(category: impl Into<String>, strokes: Vec<Stroke>) -> Self {
        Self { strokes, category: category.into() }
    }

    /// Total number of points over all strokes.
    pub fn point_count(&self) -> usize {
        self.strokes.iter().map(Stroke::len).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.strokes.iter().flat_map(|s| s.points.iter().copied())
    }

    pub fn is_labeled(&self) -> bool {
        self.strokes.iter().all(|s| s.labels.is_some())
    }

    /// Flattened labels in point order, or `None` if any stroke is unlabeled.
    pub fn labels(&self) -> Option<Vec<usize>> {
        let mut out = Vec::with_capacity(self.point_count());
        for s in &self.strokes {
            out.extend_from_slice(s.labels.as_ref()?);
        }
        Some(out)
    }

    /// Stroke index of each point, in point order.
    pub fn stroke_of(&self) -> Vec<usize> {
        self.strokes
            .iter()
            .enumerate()
            .flat_map(|(r, s)| std::iter::repeat_n(r, s.len()))
            .collect()
    }

    /// Replace labels from a flat per-point list.
    pub fn with_labels(&self, labels: &[usize]) -> Result<Sketch> {
        if labels.len() != self.point_count() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} points",
                labels.len(),
                self.point_count()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for s in &mut out.strokes {
            s.labels = Some(labels[offset..offset + s.len()].to_vec());
            offset += s.len();
        }
        Ok(out)
    }

    pub fn without_labels(&self) -> Sketch {
        let mut out = self.clone();
        for s in &mut out.strokes {
            s.labels = None;
        }
        out
    }

    /// Largest label present plus one, or 0 when unlabeled.
    pub fn class_bound(&self) -> usize {
        self.strokes
            .iter()
            .filter_map(|s| s.labels.as_ref())
            .flat_map(|l| l.iter().copied())
            .max()
            .map_or(0, |m| m + 1)
    }

    /// Check structural invariants: at least one stroke, no empty strokes,
    /// label lists matching point counts, finite coordinates.
    pub fn validate(&self) -> Result<()> {
        if self.strokes.is_empty() {
            return Err(Error::Validation("sketch has no strokes".into()));
        }
        for (r, s) in self.strokes.iter().enumerate() {
            if s.points.is_empty() {
                return Err(Error::Validation(format!("stroke {r} is empty")));
            }
            if let Some(labels) = &s.labels {
                if labels.len() != s.points.len() {
                    return Err(Error::Validation(format!(
                        "stroke {r} has {} labels for {} points",
                        labels.len(),
                        s.points.len()
                    )));
                }
            }
            if s.points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                return Err(Error::Validation(format!("stroke {r} has non-finite coordinates")));
            }
        }
        Ok(())
    }

    /// Validate and additionally require every label to be below `classes`.
    pub fn validate_classes(&self, classes: usize) -> Result<()> {
        self.validate()?;
        for (r, s) in self.strokes.iter().enumerate() {
            match &s.labels {
                None => return Err(Error::Validation(format!("stroke {r} is unlabeled"))),
                Some(l) => {
                    if let Some(&bad) = l.iter().find(|&&c| c >= classes) {
                        return Err(Error::Validation(format!(
                            "stroke {r} has class {bad}, expected < {classes}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Train/validation/test partition of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Sketch>,
    pub validation: Vec<Sketch>,
    pub test: Vec<Sketch>,
    pub seed: u64,
}
