//! The two-branch segmentation network.
//!
//! A static branch runs graph convolutions over the stroke chain graph only;
//! a dynamic branch adds per-layer dilated KNN edges in feature space. The
//! dynamic branch output feeds sketch-level and stroke-level max pooling, and
//! the concatenation of point, stroke and sketch features is classified per
//! point by a small MLP head.

mod checkpoint;
mod network;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use network::{
    conv_unit, dynamic_branch, edge_conv, forward, mix_pool, static_branch, EdgeSource, ForwardOutput,
    NetworkInput, ParamVars, UnitVars,
};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DynamicEdgeSet, KnnMode};
use crate::numerics::{glorot_uniform, Differentiable, GradCheckOptions, Tape, Tensor};
use crate::sketch::{Point, Sketch, Stroke};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Graph convolution units in each branch.
    pub units_per_branch: usize,
    pub conv_width: usize,
    /// Neighbors per node in the dynamic branch.
    pub k: usize,
    /// Dilation of each dynamic unit.
    pub dilations: Vec<usize>,
    pub pool_width: usize,
    /// Hidden widths of the point classifier; the output layer adds `num_classes`.
    pub head_hidden: Vec<usize>,
    pub num_classes: usize,
    pub sample_points: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            units_per_branch: 4,
            conv_width: 32,
            k: 8,
            dilations: vec![1, 4, 8, 16],
            pool_width: 128,
            head_hidden: vec![128, 64],
            num_classes: 2,
            sample_points: 256,
        }
    }
}

impl ModelConfig {
    pub fn with_classes(num_classes: usize) -> Self {
        Self { num_classes, ..Self::default() }
    }

    /// Head layer widths including the output layer.
    pub fn head_widths(&self) -> Vec<usize> {
        let mut w = self.head_hidden.clone();
        w.push(self.num_classes);
        w
    }

    /// Width of the concatenated point, stroke and sketch features.
    pub fn feature_width(&self) -> usize {
        self.conv_width + 2 * self.pool_width
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(format!("model config: {m}")));
        if self.units_per_branch == 0 {
            return fail("at least one unit per branch".into());
        }
        if self.dilations.len() != self.units_per_branch {
            return fail(format!(
                "{} dilations for {} units",
                self.dilations.len(),
                self.units_per_branch
            ));
        }
        if self.dilations.contains(&0) || self.k == 0 {
            return fail("k and dilations must be positive".into());
        }
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.sample_points < 8 {
            return fail(format!("need at least 8 sample points, got {}", self.sample_points));
        }
        if self.conv_width == 0 || self.pool_width == 0 || self.head_hidden.contains(&0) {
            return fail("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Every parameter name with its shape.
    pub fn param_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let w = self.conv_width;
        let mut shapes = BTreeMap::new();
        for branch in ["sconv", "dconv"] {
            for l in 0..self.units_per_branch {
                let d_in = if l == 0 { 2 } else { w };
                shapes.insert(format!("{branch}.{l}.weight"), vec![2 * d_in, w]);
                shapes.insert(format!("{branch}.{l}.bias"), vec![w]);
            }
            if w != 2 {
                shapes.insert(format!("{branch}.0.proj.weight"), vec![2, w]);
                shapes.insert(format!("{branch}.0.proj.bias"), vec![w]);
            }
        }
        for pool in ["sk", "st"] {
            shapes.insert(format!("pool.{pool}.weight"), vec![w, self.pool_width]);
            shapes.insert(format!("pool.{pool}.bias"), vec![self.pool_width]);
        }
        let mut fan_in = self.feature_width();
        for (i, out) in self.head_widths().into_iter().enumerate() {
            shapes.insert(format!("head.{i}.weight"), vec![fan_in, out]);
            shapes.insert(format!("head.{i}.bias"), vec![out]);
            fan_in = out;
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().values().map(|s| s.iter().product::<usize>()).sum()
    }
}

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases, drawn in name order.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with("weight") {
                    glorot_uniform(shape[0], shape[1], &mut rng)
                } else {
                    Tensor::zeros(&shape)
                };
                (name, t)
            })
            .collect();
        Self { tensors }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        Self { tensors: config.param_shapes().into_iter().map(|(n, s)| (n, Tensor::zeros(&s))).collect() }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Tensors in name order.
    pub fn to_vec(&self) -> Vec<Tensor> {
        self.tensors.values().cloned().collect()
    }

    /// Replace tensors in name order.
    pub fn set_from_slice(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::Shape(format!("{} tensors for {} parameters", values.len(), self.tensors.len())));
        }
        for ((name, t), v) in self.tensors.iter_mut().zip(values) {
            if !t.same_shape(v) {
                return Err(Error::Shape(format!("{name}: {:?} vs {:?}", t.shape(), v.shape())));
            }
            *t = v.clone();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Check names and shapes against a configuration.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let expected = config.param_shapes();
        for (name, shape) in &expected {
            match self.tensors.get(name) {
                None => return Err(Error::Validation(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Validation(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::Validation(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }
}

/// Per-point predictions for one preprocessed sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Tensor,
    pub labels: Vec<usize>,
}

/// Loss and parameter gradients for one sketch.
#[derive(Debug, Clone)]
pub struct SketchGradient {
    /// Mean cross-entropy over the sketch's points.
    pub loss: f64,
    /// Gradients in parameter name order, scaled by the requested weight.
    pub grads: Vec<Tensor>,
    pub correct: usize,
    pub points: usize,
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, seed);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check(&config)?;
        Ok(Self { config, params })
    }

    fn record(&self, input: &NetworkInput, edges: EdgeSource<'_>) -> Result<(Tape, ParamVars, ForwardOutput)> {
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, &self.params)?;
        let out = forward(&mut tape, &vars, input, &self.config, edges)?;
        Ok((tape, vars, out))
    }

    /// Raw per-point logits `[N, C]`.
    pub fn logits(&self, input: &NetworkInput, edges: EdgeSource<'_>) -> Result<Tensor> {
        let (tape, _, out) = self.record(input, edges)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Eval-mode prediction on a preprocessed sketch.
    pub fn predict(&self, sketch: &Sketch) -> Result<Prediction> {
        let input = NetworkInput::from_sketch(sketch)?;
        let logits = self.logits(&input, EdgeSource::Knn(KnnMode::Eval))?;
        let labels = (0..logits.rows()).map(|r| argmax(logits.row(r))).collect();
        Ok(Prediction { logits, labels })
    }

    /// Mean cross-entropy and its gradient scaled by `weight`.
    pub fn loss_and_grads(
        &self,
        input: &NetworkInput,
        targets: &[usize],
        edges: EdgeSource<'_>,
        weight: f64,
    ) -> Result<SketchGradient> {
        let (mut tape, vars, out) = self.record(input, edges)?;
        let logits = tape.value(out.logits);
        let correct = targets.iter().enumerate().filter(|&(r, &t)| argmax(logits.row(r)) == t).count();
        let loss = tape.cross_entropy(out.logits, targets)?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss, weight)?;
        Ok(SketchGradient {
            loss: value,
            grads: vars.in_order().map(|v| grads.get_or_zeros(&tape, v)).collect(),
            correct,
            points: targets.len(),
        })
    }

    /// Mean cross-entropy without gradients.
    pub fn loss(&self, input: &NetworkInput, targets: &[usize], edges: EdgeSource<'_>) -> Result<f64> {
        let (mut tape, _, out) = self.record(input, edges)?;
        let loss = tape.cross_entropy(out.logits, targets)?;
        Ok(tape.value(loss).data()[0])
    }
}

/// Full-model loss with dynamic edges frozen, as a function of the parameters.
pub struct FrozenModelLoss<'a> {
    pub config: &'a ModelConfig,
    pub input: &'a NetworkInput,
    pub targets: &'a [usize],
    pub edges: &'a [DynamicEdgeSet],
    pub names: Vec<String>,
}

impl FrozenModelLoss<'_> {
    fn model(&self, params: &[Tensor]) -> Model {
        let map = self.names.iter().cloned().zip(params.iter().cloned()).collect();
        Model { config: self.config.clone(), params: ModelParams::from_map(map) }
    }
}

impl Differentiable for FrozenModelLoss<'_> {
    fn value(&self, params: &[Tensor]) -> Result<f64> {
        self.model(params).loss(self.input, self.targets, EdgeSource::Frozen(self.edges))
    }

    fn value_and_grad(&self, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        let g = self.model(params).loss_and_grads(self.input, self.targets, EdgeSource::Frozen(self.edges), 1.0)?;
        Ok((g.loss, g.grads))
    }
}

/// Two-stroke random sketch with `n` points and random labels below `classes`.
pub fn random_two_stroke_sketch(n: usize, classes: usize, seed: u64) -> Sketch {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = n / 2;
    let mut strokes = Vec::new();
    for count in [first, n - first] {
        let mut p = Point::new(rng.random_range(40.0..216.0), rng.random_range(40.0..216.0));
        let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let mut points = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            points.push(p);
            labels.push(rng.random_range(0..classes));
            heading += rng.random_range(-0.6..0.6);
            let step = rng.random_range(4.0..10.0);
            p = Point::new((p.x + step * heading.cos()).clamp(0.0, 256.0), (p.y + step * heading.sin()).clamp(0.0, 256.0));
        }
        strokes.push(Stroke::labeled(points, labels));
    }
    crate::sketch::normalize_canvas(&Sketch::new("gradcheck", strokes))
}

/// Finite-difference check of the full model loss on a random two-stroke
/// sketch of `n` points, with dynamic edges frozen to those of a train-mode
/// forward pass. Returns the max relative error.
pub fn full_model_gradient_check(n: usize, seed: u64, opts: GradCheckOptions) -> Result<f64> {
    let config = ModelConfig { sample_points: n, num_classes: 3, ..ModelConfig::default() };
    let model = Model::new(config.clone(), seed)?;
    let sketch = random_two_stroke_sketch(n, config.num_classes, seed);
    let input = NetworkInput::from_sketch(&sketch)?;
    let targets = sketch.labels().expect("labeled");
    let (_, _, out) = model.record(&input, EdgeSource::Knn(KnnMode::Train { seed }))?;
    let check = FrozenModelLoss {
        config: &config,
        input: &input,
        targets: &targets,
        edges: &out.dynamic_edges,
        names: model.params.names().map(String::from).collect(),
    };
    crate::numerics::gradient_check(&check, &model.params.to_vec(), opts)
}
