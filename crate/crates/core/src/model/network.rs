use std::collections::BTreeMap;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::graph::{build_static_graph, knn_dilated, layer_edges, DynamicEdgeSet, Edge, Graph, KnnMode};
use crate::numerics::{Tape, Tensor, Var};
use crate::sketch::{Sketch, CANVAS_SIZE};

/// Network input for one preprocessed sketch: coordinates mapped from the
/// canvas to `[-1, 1]` and the static chain graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInput {
    pub coords: Tensor,
    pub graph: Graph,
}

impl NetworkInput {
    pub fn from_sketch(sketch: &Sketch) -> Result<Self> {
        sketch.validate()?;
        let half = CANVAS_SIZE / 2.0;
        let data = sketch.points().flat_map(|p| [p.x / half - 1.0, p.y / half - 1.0]).collect();
        Ok(Self { coords: Tensor::new(vec![sketch.point_count(), 2], data)?, graph: build_static_graph(sketch) })
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count
    }
}

/// Where the dynamic branch gets its per-layer KNN edges.
#[derive(Debug, Clone, Copy)]
pub enum EdgeSource<'a> {
    /// Recompute from the previous layer's features. In train mode, layer `l`
    /// samples with a seed derived from the given seed and `l`.
    Knn(KnnMode),
    /// Reuse previously selected edges, one set per unit.
    Frozen(&'a [DynamicEdgeSet]),
}

fn layer_seed(seed: u64, layer: usize) -> u64 {
    seed ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Parameters registered as tape leaves, keyed by name.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (name, t) in params.iter() {
            vars.insert(name.to_string(), tape.leaf(t.clone())?);
        }
        Ok(Self { vars })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Validation(format!("missing parameter {name}")))
    }

    /// Vars in parameter name order.
    pub fn in_order(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.values().copied()
    }

    pub fn unit(&self, branch: &str, l: usize) -> Result<UnitVars> {
        let proj = if l == 0 && self.vars.contains_key(&format!("{branch}.0.proj.weight")) {
            Some((self.get(&format!("{branch}.0.proj.weight"))?, self.get(&format!("{branch}.0.proj.bias"))?))
        } else {
            None
        };
        Ok(UnitVars {
            weight: self.get(&format!("{branch}.{l}.weight"))?,
            bias: self.get(&format!("{branch}.{l}.bias"))?,
            proj,
        })
    }

    fn layer(&self, prefix: &str) -> Result<(Var, Var)> {
        Ok((self.get(&format!("{prefix}.weight"))?, self.get(&format!("{prefix}.bias"))?))
    }
}

/// One graph convolution unit's parameters.
#[derive(Debug, Clone, Copy)]
pub struct UnitVars {
    /// `[2 * d_in, width]`, acting on `concat(f_i, f_j - f_i)`.
    pub weight: Var,
    pub bias: Var,
    /// Shortcut projection when the input width differs from the unit width.
    pub proj: Option<(Var, Var)>,
}

/// EdgeConv: for each edge `(j, i)`, `ReLU(W · concat(f_i, f_j - f_i) + b)`,
/// max-aggregated into node `i`.
///
/// The linear map splits as `f_i · (W_top - W_bot) + b + f_j · W_bot`. The
/// first term is shared by all edges into `i` and both it and ReLU are
/// monotone, so only the neighbor term is max-aggregated.
pub fn edge_conv(tape: &mut Tape, features: Var, edges: &[Edge], weight: Var, bias: Var) -> Result<Var> {
    let d_in = tape.value(features).cols();
    let n = tape.value(features).rows();
    if tape.value(weight).rows() != 2 * d_in {
        return Err(Error::Shape(format!(
            "edge_conv: weight {:?} for input width {d_in}",
            tape.value(weight).shape()
        )));
    }
    let top = tape.slice_rows(weight, 0..d_in)?;
    let bottom = tape.slice_rows(weight, d_in..2 * d_in)?;
    let center = tape.sub(top, bottom)?;
    let own = tape.linear(features, center, bias)?;
    let neighbor = tape.matmul(features, bottom)?;

    let (src, dst): (Vec<usize>, Vec<usize>) = edges.iter().copied().unzip();
    let neighbor_e = tape.gather_rows(neighbor, &src)?;
    let pooled = tape.max_aggregate(neighbor_e, &dst, n)?;
    let pre = tape.add(own, pooled)?;
    tape.relu(pre)
}

/// EdgeConv plus a residual shortcut (identity, or a learned projection when
/// widths differ).
pub fn conv_unit(tape: &mut Tape, features: Var, edges: &[Edge], unit: &UnitVars) -> Result<Var> {
    let conv = edge_conv(tape, features, edges, unit.weight, unit.bias)?;
    let shortcut = match unit.proj {
        Some((w, b)) => tape.linear(features, w, b)?,
        None => features,
    };
    tape.add(conv, shortcut)
}

/// Units applied in sequence over the fixed chain graph.
pub fn static_branch(tape: &mut Tape, coords: Var, graph: &Graph, units: &[UnitVars]) -> Result<Var> {
    let mut x = coords;
    for unit in units {
        x = conv_unit(tape, x, &graph.edges, unit)?;
    }
    Ok(x)
}

/// Units applied in sequence, each over the chain graph plus dilated KNN
/// edges computed from its own input features.
pub fn dynamic_branch(
    tape: &mut Tape,
    coords: Var,
    graph: &Graph,
    config: &ModelConfig,
    units: &[UnitVars],
    source: EdgeSource<'_>,
) -> Result<(Var, Vec<DynamicEdgeSet>)> {
    let mut x = coords;
    let mut used = Vec::with_capacity(units.len());
    for (l, unit) in units.iter().enumerate() {
        let dynamic = match source {
            EdgeSource::Knn(mode) => {
                let mode = match mode {
                    KnnMode::Eval => KnnMode::Eval,
                    KnnMode::Train { seed } => KnnMode::Train { seed: layer_seed(seed, l) },
                };
                knn_dilated(tape.value(x), config.k, config.dilations[l], mode, l)
            }
            EdgeSource::Frozen(sets) => sets
                .get(l)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("no frozen edges for layer {l}")))?,
        };
        let edges = layer_edges(graph, &dynamic);
        x = conv_unit(tape, x, &edges, unit)?;
        used.push(dynamic);
    }
    Ok((x, used))
}

/// Sketch-level and stroke-level max pooling of transformed dynamic-branch
/// features, each broadcast back to every point.
pub fn mix_pool(
    tape: &mut Tape,
    dynamic_features: Var,
    stroke_of: &[usize],
    sketch_layer: (Var, Var),
    stroke_layer: (Var, Var),
) -> Result<(Var, Var)> {
    let n = stroke_of.len();
    let strokes = stroke_of.iter().max().map_or(0, |&m| m + 1);

    let sk = tape.linear(dynamic_features, sketch_layer.0, sketch_layer.1)?;
    let sk = tape.relu(sk)?;
    let everyone = vec![0usize; n];
    let pooled = tape.max_aggregate(sk, &everyone, 1)?;
    let sketch_features = tape.gather_rows(pooled, &everyone)?;

    let st = tape.linear(dynamic_features, stroke_layer.0, stroke_layer.1)?;
    let st = tape.relu(st)?;
    let pooled = tape.max_aggregate(st, stroke_of, strokes)?;
    let stroke_features = tape.gather_rows(pooled, stroke_of)?;

    Ok((sketch_features, stroke_features))
}

/// Intermediate and final values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Var,
    pub point_features: Var,
    pub dynamic_features: Var,
    pub stroke_features: Var,
    pub sketch_features: Var,
    pub dynamic_edges: Vec<DynamicEdgeSet>,
}

pub fn forward(
    tape: &mut Tape,
    vars: &ParamVars,
    input: &NetworkInput,
    config: &ModelConfig,
    source: EdgeSource<'_>,
) -> Result<ForwardOutput> {
    if input.node_count() != config.sample_points {
        return Err(Error::InvalidArgument(format!(
            "sketch has {} points, model expects {}",
            input.node_count(),
            config.sample_points
        )));
    }
    let coords = tape.leaf(input.coords.clone())?;
    let sconv = (0..config.units_per_branch).map(|l| vars.unit("sconv", l)).collect::<Result<Vec<_>>>()?;
    let dconv = (0..config.units_per_branch).map(|l| vars.unit("dconv", l)).collect::<Result<Vec<_>>>()?;

    let point_features = static_branch(tape, coords, &input.graph, &sconv)?;
    let (dynamic_features, dynamic_edges) = dynamic_branch(tape, coords, &input.graph, config, &dconv, source)?;
    let (sketch_features, stroke_features) = mix_pool(
        tape,
        dynamic_features,
        &input.graph.stroke_of,
        vars.layer("pool.sk")?,
        vars.layer("pool.st")?,
    )?;

    let mut h = tape.concat(&[point_features, stroke_features, sketch_features])?;
    let layers = config.head_widths().len();
    for i in 0..layers {
        let (w, b) = vars.layer(&format!("head.{i}"))?;
        h = tape.linear(h, w, b)?;
        if i + 1 < layers {
            h = tape.relu(h)?;
        }
    }
    Ok(ForwardOutput {
        logits: h,
        point_features,
        dynamic_features,
        stroke_features,
        sketch_features,
        dynamic_edges,
    })
}
