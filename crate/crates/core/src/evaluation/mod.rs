//! Rasterization, pixel and stroke accuracy metrics, and batch evaluation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Checkpoint, Model};
use crate::sketch::{map_labels_back, normalize_canvas, Preprocess, Sketch};
use crate::training::{perturb, PerturbationSpec};

pub const RASTER_SIZE: usize = 256;

/// Anything that labels every point of a preprocessed sketch.
pub trait Segmenter: Sync {
    fn segment(&self, sketch: &Sketch) -> Result<Vec<usize>>;
}

impl Segmenter for Model {
    fn segment(&self, sketch: &Sketch) -> Result<Vec<usize>> {
        Ok(self.predict(sketch)?.labels)
    }
}

/// Returns the sketch's own labels.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSegmenter;

impl Segmenter for OracleSegmenter {
    fn segment(&self, sketch: &Sketch) -> Result<Vec<usize>> {
        sketch.labels().ok_or_else(|| Error::Validation("oracle needs a labeled sketch".into()))
    }
}

/// Predicts one class everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantSegmenter(pub usize);

impl Segmenter for ConstantSegmenter {
    fn segment(&self, sketch: &Sketch) -> Result<Vec<usize>> {
        Ok(vec![self.0; sketch.point_count()])
    }
}

/// Per-pixel ground truth, prediction and owning stroke on the square canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterLabels {
    pub width: usize,
    pub height: usize,
    pub gt: Vec<Option<usize>>,
    pub pred: Vec<Option<usize>>,
    pub owner: Vec<Option<usize>>,
    /// Fraction of each stroke's points whose predicted label is correct.
    pub stroke_point_accuracy: Vec<f64>,
}

impl RasterLabels {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            gt: vec![None; width * height],
            pred: vec![None; width * height],
            owner: vec![None; width * height],
            stroke_point_accuracy: Vec::new(),
        }
    }

    pub fn stroke_count(&self) -> usize {
        self.stroke_point_accuracy.len()
    }

    pub fn set(&mut self, x: usize, y: usize, gt: usize, pred: usize, stroke: usize) {
        let i = y * self.width + x;
        self.gt[i] = Some(gt);
        self.pred[i] = Some(pred);
        self.owner[i] = Some(stroke);
    }

    pub fn drawn_pixels(&self) -> usize {
        self.owner.iter().filter(|o| o.is_some()).count()
    }
}

fn pixel(v: f64) -> i64 {
    (v.floor() as i64).clamp(0, RASTER_SIZE as i64 - 1)
}

/// Integer line from `a` to `b`, both ends included.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x, y));
        if (x, y) == b {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draw `truth` and `pred` (same geometry) as 1-px polylines. Strokes and
/// segments are drawn in order and later ones overwrite earlier pixels; a
/// segment carries the labels of its starting point.
pub fn rasterize(truth: &Sketch, pred: &Sketch) -> Result<RasterLabels> {
    if truth.strokes.len() != pred.strokes.len()
        || truth.strokes.iter().zip(&pred.strokes).any(|(a, b)| a.points != b.points)
    {
        return Err(Error::InvalidArgument("rasterize: sketches differ in geometry".into()));
    }
    let gt = truth.labels().ok_or_else(|| Error::Validation("rasterize: ground truth is unlabeled".into()))?;
    let pr = pred.labels().ok_or_else(|| Error::Validation("rasterize: prediction is unlabeled".into()))?;

    let mut r = RasterLabels::empty(RASTER_SIZE, RASTER_SIZE);
    let mut offset = 0;
    for (s, stroke) in truth.strokes.iter().enumerate() {
        let pts: Vec<(i64, i64)> = stroke.points.iter().map(|p| (pixel(p.x), pixel(p.y))).collect();
        let (g, p) = (&gt[offset..offset + pts.len()], &pr[offset..offset + pts.len()]);
        if pts.len() == 1 {
            r.set(pts[0].0 as usize, pts[0].1 as usize, g[0], p[0], s);
        }
        for i in 0..pts.len().saturating_sub(1) {
            for (x, y) in bresenham(pts[i], pts[i + 1]) {
                r.set(x as usize, y as usize, g[i], p[i], s);
            }
        }
        let hits = g.iter().zip(p).filter(|(a, b)| a == b).count();
        r.stroke_point_accuracy.push(hits as f64 / pts.len().max(1) as f64);
        offset += pts.len();
    }
    Ok(r)
}

/// Fraction of drawn pixels whose prediction matches the ground truth.
pub fn p_metric(r: &RasterLabels) -> Result<f64> {
    let (mut drawn, mut hit) = (0usize, 0usize);
    for (g, p) in r.gt.iter().zip(&r.pred) {
        if let (Some(g), Some(p)) = (g, p) {
            drawn += 1;
            hit += usize::from(g == p);
        }
    }
    if drawn == 0 {
        return Err(Error::DegenerateInput("no drawn pixels".into()));
    }
    Ok(hit as f64 / drawn as f64)
}

/// Fraction of strokes with at least 75% of their owned pixels correct.
/// A stroke that owns no pixels is judged by its point labels instead.
pub fn c_metric(r: &RasterLabels) -> Result<f64> {
    let strokes = r.stroke_count();
    if strokes == 0 {
        return Err(Error::DegenerateInput("no strokes".into()));
    }
    let mut owned = vec![0usize; strokes];
    let mut hit = vec![0usize; strokes];
    for ((o, g), p) in r.owner.iter().zip(&r.gt).zip(&r.pred) {
        if let Some(s) = *o {
            owned[s] += 1;
            hit[s] += usize::from(g == p);
        }
    }
    let correct = (0..strokes)
        .filter(|&s| if owned[s] > 0 { 4 * hit[s] >= 3 * owned[s] } else { r.stroke_point_accuracy[s] >= 0.75 })
        .count();
    Ok(correct as f64 / strokes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SketchScore {
    pub p_metric: f64,
    pub c_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub category: String,
    pub checkpoint: String,
    pub perturbation: Option<PerturbationSpec>,
    pub per_sketch: Vec<SketchScore>,
    pub p_metric: f64,
    pub c_metric: f64,
}

/// Scores one labeled sketch: optional perturbation, preprocessing,
/// segmentation, label transfer to the normalized drawing, rasterization.
pub fn score_sketch(
    sketch: &Sketch,
    backend: &impl Segmenter,
    preprocess: &Preprocess,
    perturbation: Option<&PerturbationSpec>,
    seed: u64,
) -> Result<SketchScore> {
    if !sketch.is_labeled() {
        return Err(Error::Validation("evaluation sketch is unlabeled".into()));
    }
    let perturbed = match perturbation {
        Some(spec) => perturb(sketch, spec, seed)?,
        None => sketch.clone(),
    };
    let truth = normalize_canvas(&perturbed);
    let sampled = preprocess.apply(&perturbed)?;
    let labels = backend.segment(&sampled)?;
    let predicted = map_labels_back(&truth, &sampled, &labels)?;
    let raster = rasterize(&truth, &predicted)?;
    Ok(SketchScore { p_metric: p_metric(&raster)?, c_metric: c_metric(&raster)? })
}

/// Evaluate every sketch and average. Per-sketch perturbation seeds are
/// drawn in input order from `seed`.
pub fn evaluate(
    sketches: &[Sketch],
    backend: &impl Segmenter,
    preprocess: &Preprocess,
    perturbation: Option<&PerturbationSpec>,
    seed: u64,
) -> Result<EvalReport> {
    if sketches.is_empty() {
        return Err(Error::InvalidArgument("no sketches to evaluate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = sketches.iter().map(|_| rng.next_u64()).collect();
    let per_sketch: Vec<SketchScore> = sketches
        .par_iter()
        .zip(&seeds)
        .map(|(s, &sd)| score_sketch(s, backend, preprocess, perturbation, sd))
        .collect::<Result<_>>()?;
    let n = per_sketch.len() as f64;
    Ok(EvalReport {
        category: sketches[0].category.clone(),
        checkpoint: String::new(),
        perturbation: perturbation.cloned(),
        p_metric: per_sketch.iter().map(|s| s.p_metric).sum::<f64>() / n,
        c_metric: per_sketch.iter().map(|s| s.c_metric).sum::<f64>() / n,
        per_sketch,
    })
}

/// Evaluate with a trained checkpoint, checking that its category matches.
pub fn evaluate_checkpoint(
    sketches: &[Sketch],
    checkpoint: &Checkpoint,
    perturbation: Option<&PerturbationSpec>,
    seed: u64,
) -> Result<EvalReport> {
    let category = &checkpoint.meta.category;
    if let Some(s) = sketches.iter().find(|s| !category.is_empty() && !s.category.is_empty() && &s.category != category)
    {
        return Err(Error::InvalidArgument(format!(
            "checkpoint is for '{category}', sketch is '{}'",
            s.category
        )));
    }
    let model = checkpoint.model()?;
    let mut report = evaluate(sketches, &model, &checkpoint.preprocess(), perturbation, seed)?;
    report.category = category.clone();
    report.checkpoint = checkpoint.id();
    Ok(report)
}

/// One report per perturbation, in order.
pub fn sweep(
    sketches: &[Sketch],
    checkpoint: &Checkpoint,
    perturbations: &[PerturbationSpec],
    seed: u64,
) -> Result<Vec<EvalReport>> {
    perturbations.iter().map(|p| evaluate_checkpoint(sketches, checkpoint, Some(p), seed)).collect()
}

#[cfg(test)]
mod tests;
