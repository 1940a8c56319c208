//! PointNet-style shared encoder with three heads: shape classification on
//! the global feature, per-point part segmentation and the per-point puzzle
//! solver. The encoder applies one shared MLP to every point and aggregates
//! with a feature-wise max over points, so the global feature is exactly
//! permutation invariant and per-point outputs are exactly equivariant.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamGroup, Parameter, Tensor, Var};
use crate::pointcloud::PointCloud;
use crate::rng;

/// Main task of a model instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Segmentation,
}

fn default_mlp_widths() -> Vec<usize> {
    vec![64, 64, 64, 128, 1024]
}
fn default_cls_widths() -> Vec<usize> {
    vec![512, 256]
}
fn default_point_widths() -> Vec<usize> {
    vec![512, 256, 128]
}
fn default_local_layer() -> usize {
    1
}
fn default_dropout() -> f64 {
    0.3
}
fn default_true() -> bool {
    true
}

/// Architecture hyperparameters. Widths are configurable so desk-scale tests
/// can shrink the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default = "default_mlp_widths")]
    pub per_point_mlp_widths: Vec<usize>,
    /// Which encoder layer's activations feed the per-point heads.
    #[serde(default = "default_local_layer")]
    pub local_feature_layer: usize,
    #[serde(default = "default_cls_widths")]
    pub head_widths_classification: Vec<usize>,
    #[serde(default = "default_point_widths")]
    pub head_widths_per_point: Vec<usize>,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    pub num_classes: usize,
    #[serde(default)]
    pub num_parts: Option<usize>,
    /// Output width of the puzzle head (`l^3`).
    pub num_voxels: usize,
    /// Optional per-feature batch standardization after each encoder layer.
    #[serde(default)]
    pub use_batch_std: bool,
    /// Share the first per-point head layer between the segmentation and
    /// puzzle branches; the shared layer then belongs to the feature group.
    #[serde(default = "default_true")]
    pub share_first_point_layer: bool,
    /// Whether the puzzle branch exists at all (off for the plain baseline).
    #[serde(default = "default_true")]
    pub with_puzzle_head: bool,
}

impl EncoderConfig {
    /// Defaults mirroring the reference backbone, sized by the label spaces.
    pub fn standard(num_classes: usize, num_parts: Option<usize>, num_voxels: usize) -> Self {
        Self {
            per_point_mlp_widths: default_mlp_widths(),
            local_feature_layer: default_local_layer(),
            head_widths_classification: default_cls_widths(),
            head_widths_per_point: default_point_widths(),
            dropout_rate: default_dropout(),
            num_classes,
            num_parts,
            num_voxels,
            use_batch_std: false,
            share_first_point_layer: true,
            with_puzzle_head: true,
        }
    }

    pub fn validate(&self, task: TaskKind) -> Result<()> {
        if self.per_point_mlp_widths.is_empty() || self.per_point_mlp_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("encoder widths must be >= 1".into()));
        }
        if self.local_feature_layer >= self.per_point_mlp_widths.len() {
            return Err(Error::Config(format!(
                "local_feature_layer {} out of range for {} layers",
                self.local_feature_layer,
                self.per_point_mlp_widths.len()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        if task == TaskKind::Classification && self.num_classes < 2 {
            return Err(Error::Config("classification needs num_classes >= 2".into()));
        }
        if task == TaskKind::Segmentation {
            match self.num_parts {
                Some(q) if q >= 2 => {}
                _ => return Err(Error::Config("segmentation needs num_parts >= 2".into())),
            }
        }
        if self.with_puzzle_head {
            let l = (self.num_voxels as f64).cbrt().round() as usize;
            if l < 2 || l * l * l != self.num_voxels {
                return Err(Error::Config(format!(
                    "num_voxels {} is not a cube of l >= 2",
                    self.num_voxels
                )));
            }
        }
        if (self.with_puzzle_head || task == TaskKind::Segmentation)
            && self.head_widths_per_point.is_empty()
        {
            return Err(Error::Config("per-point head needs at least one layer".into()));
        }
        Ok(())
    }

    pub fn global_dim(&self) -> usize {
        *self.per_point_mlp_widths.last().unwrap()
    }

    pub fn local_dim(&self) -> usize {
        self.per_point_mlp_widths[self.local_feature_layer]
    }
}

/// Running statistics of one standardization layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

/// All trainable parameters, partitioned into feature / main-head /
/// puzzle-head groups, plus non-trainable normalization state.
#[derive(Debug, Clone)]
pub struct ModelParams {
    params: Vec<Parameter>,
    pub norm_state: BTreeMap<String, RunningNorm>,
}

impl ModelParams {
    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn iter_groups_mut(&mut self, groups: &[ParamGroup]) -> impl Iterator<Item = &mut Parameter> + '_ {
        let set: Vec<ParamGroup> = groups.to_vec();
        self.params.iter_mut().filter(move |p| set.contains(&p.group))
    }

    pub fn get(&self, index: usize) -> &Parameter {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Parameter {
        &mut self.params[index]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Fold freshly observed batch statistics into the running state.
    pub fn update_norm(&mut self, name: &str, mean: &[f64], var: &[f64]) {
        if let Some(state) = self.norm_state.get_mut(name) {
            let m = state.momentum;
            for (r, &b) in state.mean.iter_mut().zip(mean) {
                *r = m * *r + (1.0 - m) * b;
            }
            for (r, &b) in state.var.iter_mut().zip(var) {
                *r = m * *r + (1.0 - m) * b;
            }
        }
    }
}

/// Index of a linear layer's weight/bias inside `ModelParams`.
#[derive(Debug, Clone, Copy)]
struct LayerRef {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormRef {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, Default)]
struct Layout {
    encoder: Vec<LayerRef>,
    encoder_norm: Vec<Option<NormRef>>,
    shared_point: Option<LayerRef>,
    cls_hidden: Vec<LayerRef>,
    cls_out: Option<LayerRef>,
    seg_hidden: Vec<LayerRef>,
    seg_out: Option<LayerRef>,
    puzzle_hidden: Vec<LayerRef>,
    puzzle_out: Option<LayerRef>,
}

/// Encoder plus heads; owns the parameters and runs forward passes.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: EncoderConfig,
    pub task: TaskKind,
    pub params: ModelParams,
    layout: Layout,
}

/// Per-forward context: train vs eval, plus collected batch statistics.
pub struct ForwardCtx<'r> {
    pub training: bool,
    pub dropout_rng: Option<&'r mut ChaCha8Rng>,
    pub collected_norm: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl<'r> ForwardCtx<'r> {
    pub fn train(dropout_rng: &'r mut ChaCha8Rng) -> Self {
        Self { training: true, dropout_rng: Some(dropout_rng), collected_norm: Vec::new() }
    }

    pub fn eval() -> Self {
        Self { training: false, dropout_rng: None, collected_norm: Vec::new() }
    }
}

/// Output of the shared encoder.
pub struct Encoded {
    pub per_point: Var,
    pub global: Var,
}

struct ParamBuilder {
    seed: u64,
    params: Vec<Parameter>,
    norm_state: BTreeMap<String, RunningNorm>,
}

impl ParamBuilder {
    /// He-uniform weight, zero bias, seeded by parameter name alone so that
    /// adding or removing other parameters never shifts the draws.
    fn linear(&mut self, name: &str, d_in: usize, d_out: usize, group: ParamGroup) -> LayerRef {
        let limit = (6.0 / d_in as f64).sqrt();
        let mut r = rng::stream(self.seed, &format!("init/{name}"));
        let data: Vec<f64> = (0..d_in * d_out).map(|_| r.gen_range(-limit..limit)).collect();
        let w = Tensor::new(vec![d_in, d_out], data).expect("finite init");
        let widx = self.params.len();
        self.params.push(Parameter::new(format!("{name}.weight"), w, group));
        self.params.push(Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![d_out]), group));
        LayerRef { w: widx, b: widx + 1 }
    }

    fn norm(&mut self, name: &str, dim: usize, group: ParamGroup) -> NormRef {
        let gamma = Tensor::new(vec![dim], vec![1.0; dim]).unwrap();
        let gidx = self.params.len();
        self.params.push(Parameter::new(format!("{name}.gamma"), gamma, group));
        self.params.push(Parameter::new(format!("{name}.beta"), Tensor::zeros(vec![dim]), group));
        self.norm_state.insert(
            name.to_string(),
            RunningNorm { mean: vec![0.0; dim], var: vec![1.0; dim], momentum: 0.9 },
        );
        NormRef { gamma: gidx, beta: gidx + 1 }
    }
}

impl Model {
    pub fn new(config: EncoderConfig, task: TaskKind, seed: u64) -> Result<Self> {
        config.validate(task)?;
        let mut b = ParamBuilder { seed, params: Vec::new(), norm_state: BTreeMap::new() };
        let mut layout = Layout::default();

        let mut d = 3;
        for (i, &w) in config.per_point_mlp_widths.iter().enumerate() {
            layout.encoder.push(b.linear(&format!("encoder.mlp{i}"), d, w, ParamGroup::Feature));
            layout.encoder_norm.push(
                config
                    .use_batch_std
                    .then(|| b.norm(&format!("encoder.norm{i}"), w, ParamGroup::Feature)),
            );
            d = w;
        }
        let global_dim = config.global_dim();
        let point_in = config.local_dim() + global_dim;

        // When the segmentation and puzzle branches share their first
        // per-point layer, both losses flow through it: it belongs to the
        // feature group.
        let share = task == TaskKind::Segmentation
            && config.share_first_point_layer
            && config.with_puzzle_head;
        if share {
            layout.shared_point = Some(b.linear(
                "pointhead.shared0",
                point_in,
                config.head_widths_per_point[0],
                ParamGroup::Feature,
            ));
        }
        let point_rest_in = if share { config.head_widths_per_point[0] } else { point_in };
        let rest_widths: &[usize] =
            if share { &config.head_widths_per_point[1..] } else { &config.head_widths_per_point };

        match task {
            TaskKind::Classification => {
                let mut d = global_dim;
                for (i, &w) in config.head_widths_classification.iter().enumerate() {
                    layout.cls_hidden.push(b.linear(&format!("cls.fc{i}"), d, w, ParamGroup::MainHead));
                    d = w;
                }
                layout.cls_out = Some(b.linear("cls.out", d, config.num_classes, ParamGroup::MainHead));
            }
            TaskKind::Segmentation => {
                let mut d = point_rest_in;
                for (i, &w) in rest_widths.iter().enumerate() {
                    layout.seg_hidden.push(b.linear(&format!("seg.fc{i}"), d, w, ParamGroup::MainHead));
                    d = w;
                }
                let q = config.num_parts.expect("validated");
                layout.seg_out = Some(b.linear("seg.out", d, q, ParamGroup::MainHead));
            }
        }

        if config.with_puzzle_head {
            let mut d = point_rest_in;
            for (i, &w) in rest_widths.iter().enumerate() {
                layout.puzzle_hidden.push(b.linear(&format!("puz.fc{i}"), d, w, ParamGroup::PuzzleHead));
                d = w;
            }
            layout.puzzle_out = Some(b.linear("puz.out", d, config.num_voxels, ParamGroup::PuzzleHead));
        }

        Ok(Self {
            config,
            task,
            params: ModelParams { params: b.params, norm_state: b.norm_state },
            layout,
        })
    }

    fn layer(&self, graph: &mut Graph, x: Var, layer: LayerRef) -> Result<Var> {
        let w = graph.param(layer.w, &self.params.get(layer.w).tensor)?;
        let b = graph.param(layer.b, &self.params.get(layer.b).tensor)?;
        graph.linear(x, w, b)
    }

    fn standardize(
        &self,
        graph: &mut Graph,
        ctx: &mut ForwardCtx,
        x: Var,
        norm: NormRef,
        name: &str,
    ) -> Result<Var> {
        let gamma = graph.param(norm.gamma, &self.params.get(norm.gamma).tensor)?;
        let beta = graph.param(norm.beta, &self.params.get(norm.beta).tensor)?;
        if ctx.training {
            let (y, stats) = graph.standardize(x, gamma, beta, None)?;
            if let Some(s) = stats {
                ctx.collected_norm.push((name.to_string(), s.mean, s.var));
            }
            Ok(y)
        } else {
            let state = self
                .params
                .norm_state
                .get(name)
                .ok_or_else(|| Error::State(format!("missing running stats for {name}")))?;
            let (y, _) = graph.standardize(x, gamma, beta, Some((&state.mean, &state.var)))?;
            Ok(y)
        }
    }

    /// Shared per-point MLP + max aggregation.
    ///
    /// `input` is `[b, k, 3]`; returns per-point features `[b, k, d_local]`
    /// (the configured intermediate layer) and the global feature
    /// `[b, d_global]`.
    pub fn encode(&self, graph: &mut Graph, ctx: &mut ForwardCtx, input: Var) -> Result<Encoded> {
        let shape = graph.shape(input).to_vec();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(Error::Shape {
                op: "encode",
                detail: format!("expected [b, k, 3], got {:?}", shape),
            });
        }
        let mut x = input;
        let mut per_point = None;
        for (i, layer) in self.layout.encoder.iter().enumerate() {
            x = self.layer(graph, x, *layer)?;
            if let Some(norm) = self.layout.encoder_norm[i] {
                x = self.standardize(graph, ctx, x, norm, &format!("encoder.norm{i}"))?;
            }
            x = graph.relu(x)?;
            if i == self.config.local_feature_layer {
                per_point = Some(x);
            }
        }
        let (global, _) = graph.max_points(x)?;
        Ok(Encoded { per_point: per_point.expect("validated layer index"), global })
    }

    /// Classification head on the global feature: logits `[b, c]`. Dropout is
    /// applied to the last hidden activation in training mode.
    pub fn classify(&self, graph: &mut Graph, ctx: &mut ForwardCtx, global: Var) -> Result<Var> {
        let mut h = global;
        for layer in &self.layout.cls_hidden {
            h = self.layer(graph, h, *layer)?;
            h = graph.relu(h)?;
        }
        if ctx.training && self.config.dropout_rate > 0.0 {
            let rng = ctx
                .dropout_rng
                .as_mut()
                .ok_or_else(|| Error::Config("training forward needs a dropout rng".into()))?;
            h = graph.dropout(h, self.config.dropout_rate, true, rng)?;
        }
        let out = self
            .layout
            .cls_out
            .ok_or_else(|| Error::Config("model has no classification head".into()))?;
        self.layer(graph, h, out)
    }

    fn point_head(
        &self,
        graph: &mut Graph,
        per_point: Var,
        global: Var,
        hidden: &[LayerRef],
        out: LayerRef,
    ) -> Result<Var> {
        let mut h = graph.concat_points_global(per_point, global)?;
        if let Some(shared) = self.layout.shared_point {
            h = self.layer(graph, h, shared)?;
            h = graph.relu(h)?;
        }
        for layer in hidden {
            h = self.layer(graph, h, *layer)?;
            h = graph.relu(h)?;
        }
        self.layer(graph, h, out)
    }

    /// Puzzle head: per-point original-voxel logits `[b, k, l^3]`.
    pub fn solve_puzzle(&self, graph: &mut Graph, per_point: Var, global: Var) -> Result<Var> {
        let out = self
            .layout
            .puzzle_out
            .ok_or_else(|| Error::Config("model has no puzzle head".into()))?;
        let hidden = self.layout.puzzle_hidden.clone();
        self.point_head(graph, per_point, global, &hidden, out)
    }

    /// Segmentation head: per-point part logits `[b, k, q]`.
    pub fn segment(&self, graph: &mut Graph, per_point: Var, global: Var) -> Result<Var> {
        let out = self
            .layout
            .seg_out
            .ok_or_else(|| Error::Config("model has no segmentation head".into()))?;
        let hidden = self.layout.seg_hidden.clone();
        self.point_head(graph, per_point, global, &hidden, out)
    }

    /// Apply collected batch statistics to the running normalization state.
    pub fn absorb_norm_stats(&mut self, ctx: ForwardCtx) {
        for (name, mean, var) in ctx.collected_norm {
            self.params.update_norm(&name, &mean, &var);
        }
    }

    /// Credit graph gradients back to the owning parameters.
    pub fn accumulate_grads(&mut self, grads: Vec<(usize, Vec<f64>)>) {
        for (slot, g) in grads {
            self.params.get_mut(slot).tensor.accumulate_grad(&g);
        }
    }
}

/// Stack equal-sized clouds into a `[b, k, 3]` tensor.
pub fn batch_points(points: &[&[[f64; 3]]]) -> Result<Tensor> {
    if points.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let k = points[0].len();
    if points.iter().any(|p| p.len() != k) {
        return Err(Error::Config(
            "all clouds in a batch must have the same number of points".into(),
        ));
    }
    let mut data = Vec::with_capacity(points.len() * k * 3);
    for cloud in points {
        for p in *cloud {
            data.extend_from_slice(p);
        }
    }
    Tensor::new(vec![points.len(), k, 3], data)
}

/// Convenience for a batch of labeled clouds.
pub fn batch_clouds(clouds: &[PointCloud]) -> Result<Tensor> {
    let views: Vec<&[[f64; 3]]> = clouds.iter().map(|c| c.points.as_slice()).collect();
    batch_points(&views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradient_check;
    use crate::rng;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn small_config(c: usize, voxels: usize) -> EncoderConfig {
        EncoderConfig {
            per_point_mlp_widths: vec![8, 8, 16],
            local_feature_layer: 1,
            head_widths_classification: vec![8],
            head_widths_per_point: vec![8, 8],
            dropout_rate: 0.3,
            num_classes: c,
            num_parts: Some(4),
            num_voxels: voxels,
            use_batch_std: false,
            share_first_point_layer: true,
            with_puzzle_head: true,
        }
    }

    fn random_batch(seed: u64, b: usize, k: usize) -> Tensor {
        let mut r = rng::stream(seed, "batch");
        let data: Vec<f64> = (0..b * k * 3).map(|_| r.gen_range(0.0..1.0)).collect();
        Tensor::new(vec![b, k, 3], data).unwrap()
    }

    fn permute_rows(base: &Tensor, order: &[usize]) -> Tensor {
        let k = order.len();
        let mut data = vec![0.0; k * 3];
        for (dst, &src) in order.iter().enumerate() {
            data[dst * 3..dst * 3 + 3].copy_from_slice(&base.data()[src * 3..src * 3 + 3]);
        }
        Tensor::new(vec![1, k, 3], data).unwrap()
    }

    #[test]
    fn shape_contracts() {
        let model = Model::new(small_config(3, 8), TaskKind::Classification, 0).unwrap();
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::eval();
        let x = g.input(&random_batch(1, 2, 5)).unwrap();
        let enc = model.encode(&mut g, &mut ctx, x).unwrap();
        assert_eq!(g.shape(enc.per_point), &[2, 5, 8]);
        assert_eq!(g.shape(enc.global), &[2, 16]);
        let logits = model.classify(&mut g, &mut ctx, enc.global).unwrap();
        assert_eq!(g.shape(logits), &[2, 3]);
        let puz = model.solve_puzzle(&mut g, enc.per_point, enc.global).unwrap();
        assert_eq!(g.shape(puz), &[2, 5, 8]);
    }

    #[test]
    fn default_config_dimensions() {
        let cfg = EncoderConfig::standard(40, None, 27);
        assert_eq!(cfg.global_dim(), 1024);
        assert_eq!(cfg.local_dim(), 64);
        assert_eq!(cfg.per_point_mlp_widths, vec![64, 64, 64, 128, 1024]);
    }

    #[test]
    fn segmentation_supports_fifty_parts() {
        let mut cfg = small_config(4, 27);
        cfg.num_parts = Some(50);
        let model = Model::new(cfg, TaskKind::Segmentation, 0).unwrap();
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::eval();
        let x = g.input(&random_batch(2, 1, 6)).unwrap();
        let enc = model.encode(&mut g, &mut ctx, x).unwrap();
        let seg = model.segment(&mut g, enc.per_point, enc.global).unwrap();
        assert_eq!(g.shape(seg), &[1, 6, 50]);
    }

    #[test]
    fn global_feature_bitwise_permutation_invariant() {
        let model = Model::new(small_config(3, 8), TaskKind::Classification, 7).unwrap();
        let k = 12;
        let base = random_batch(3, 1, k);
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng::stream(4, "perm"));
        let permuted = permute_rows(&base, &order);

        let run = |input: &Tensor| {
            let mut g = Graph::new();
            let mut ctx = ForwardCtx::eval();
            let x = g.input(input).unwrap();
            let enc = model.encode(&mut g, &mut ctx, x).unwrap();
            g.value(enc.global).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(&base), run(&permuted));
    }

    #[test]
    fn per_point_heads_are_equivariant() {
        let model = Model::new(small_config(3, 8), TaskKind::Classification, 9).unwrap();
        let k = 10;
        let base = random_batch(5, 1, k);
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng::stream(6, "perm2"));
        let permuted = permute_rows(&base, &order);

        let run = |input: &Tensor| {
            let mut g = Graph::new();
            let mut ctx = ForwardCtx::eval();
            let x = g.input(input).unwrap();
            let enc = model.encode(&mut g, &mut ctx, x).unwrap();
            let puz = model.solve_puzzle(&mut g, enc.per_point, enc.global).unwrap();
            let d = g.shape(puz)[2];
            (g.value(puz).to_vec(), d)
        };
        let (base_out, d) = run(&base);
        let (perm_out, _) = run(&permuted);
        for (dst, &src) in order.iter().enumerate() {
            let a = &perm_out[dst * d..(dst + 1) * d];
            let b = &base_out[src * d..(src + 1) * d];
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            );
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let model = Model::new(small_config(3, 8), TaskKind::Classification, 11).unwrap();
        let batch = random_batch(8, 2, 6);
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::eval();
        let x = g.input(&batch).unwrap();
        let enc = model.encode(&mut g, &mut ctx, x).unwrap();
        let logits = model.classify(&mut g, &mut ctx, enc.global).unwrap();
        let joint = g.value(logits).to_vec();

        for row in 0..2 {
            let single =
                Tensor::new(vec![1, 6, 3], batch.data()[row * 18..(row + 1) * 18].to_vec()).unwrap();
            let mut g = Graph::new();
            let mut ctx = ForwardCtx::eval();
            let x = g.input(&single).unwrap();
            let enc = model.encode(&mut g, &mut ctx, x).unwrap();
            let l = model.classify(&mut g, &mut ctx, enc.global).unwrap();
            for (a, b) in g.value(l).iter().zip(&joint[row * 3..(row + 1) * 3]) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gradient_groups_are_disjoint() {
        let model = Model::new(small_config(3, 8), TaskKind::Classification, 13).unwrap();
        let batch = random_batch(10, 2, 6);

        // Pure classification loss: puzzle-head gradients must be absent.
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::eval();
        let x = g.input(&batch).unwrap();
        let enc = model.encode(&mut g, &mut ctx, x).unwrap();
        let logits = model.classify(&mut g, &mut ctx, enc.global).unwrap();
        let loss = g.softmax_cross_entropy(logits, &[0, 2]).unwrap();
        let grads = g.backward_param_grads(loss).unwrap();
        let mut feature_hit = false;
        let mut main_hit = false;
        for (slot, gv) in &grads {
            match model.params.get(*slot).group {
                ParamGroup::PuzzleHead => panic!("puzzle head grad from classification loss"),
                ParamGroup::Feature => feature_hit |= gv.iter().any(|&v| v != 0.0),
                ParamGroup::MainHead => main_hit |= gv.iter().any(|&v| v != 0.0),
            }
        }
        assert!(feature_hit && main_hit);

        // Pure puzzle loss: main-head gradients must be absent.
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::eval();
        let x = g.input(&batch).unwrap();
        let enc = model.encode(&mut g, &mut ctx, x).unwrap();
        let puz = model.solve_puzzle(&mut g, enc.per_point, enc.global).unwrap();
        let flat = g.reshape(puz, vec![12, 8]).unwrap();
        let loss = g.softmax_cross_entropy(flat, &[0; 12]).unwrap();
        let grads = g.backward_param_grads(loss).unwrap();
        for (slot, _) in &grads {
            assert_ne!(model.params.get(*slot).group, ParamGroup::MainHead);
        }
    }

    #[test]
    fn full_model_gradient_check() {
        // Joint classification + puzzle loss at desk scale, train mode with a
        // deterministic dropout mask per rebuild.
        let model = Model::new(small_config(3, 8), TaskKind::Classification, 21).unwrap();
        let batch = random_batch(17, 2, 16);
        let puzzle_batch = random_batch(18, 2, 16);
        let targets = [0usize, 2];
        let puzzle_targets: Vec<usize> = (0..32).map(|i| i % 8).collect();

        let mut params: Vec<Parameter> = model.params.iter().cloned().collect();
        let task_model = model.clone();
        let err = gradient_check(&mut params, 1e-5, 4, move |g, ps| {
            let mut m = task_model.clone();
            for (i, p) in ps.iter().enumerate() {
                m.params.get_mut(i).tensor = p.tensor.clone();
            }
            let mut rng = rng::stream(99, "dropcheck");
            let mut ctx = ForwardCtx::train(&mut rng);
            let x = g.input(&batch)?;
            let enc = m.encode(g, &mut ctx, x)?;
            let logits = m.classify(g, &mut ctx, enc.global)?;
            let lm = g.softmax_cross_entropy(logits, &targets)?;
            let xz = g.input(&puzzle_batch)?;
            let encz = m.encode(g, &mut ctx, xz)?;
            let puz = m.solve_puzzle(g, encz.per_point, encz.global)?;
            let flat = g.reshape(puz, vec![32, 8])?;
            let lp = g.softmax_cross_entropy(flat, &puzzle_targets)?;
            g.add_scaled(lm, lp, 0.6)
        })
        .unwrap();
        assert!(err < 1e-3, "full model gradient error {err}");
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let model = Model::new(small_config(3, 8), TaskKind::Classification, 23).unwrap();
        let batch = random_batch(24, 2, 6);
        let run = || {
            let mut g = Graph::new();
            let mut ctx = ForwardCtx::eval();
            let x = g.input(&batch).unwrap();
            let enc = model.encode(&mut g, &mut ctx, x).unwrap();
            let l = model.classify(&mut g, &mut ctx, enc.global).unwrap();
            g.value(l).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn batch_std_trains_and_tracks_running_stats() {
        let mut cfg = small_config(3, 8);
        cfg.use_batch_std = true;
        let mut model = Model::new(cfg, TaskKind::Classification, 31).unwrap();
        let batch = random_batch(32, 4, 6);
        let before = model.params.norm_state.get("encoder.norm0").unwrap().mean.clone();
        let mut rng = rng::stream(1, "drop");
        let mut ctx = ForwardCtx::train(&mut rng);
        let mut g = Graph::new();
        let x = g.input(&batch).unwrap();
        let _ = model.encode(&mut g, &mut ctx, x).unwrap();
        assert_eq!(ctx.collected_norm.len(), 3);
        model.absorb_norm_stats(ctx);
        let after = model.params.norm_state.get("encoder.norm0").unwrap().mean.clone();
        assert_ne!(before, after);
    }

    #[test]
    fn init_is_per_name_stable() {
        let a = Model::new(small_config(3, 8), TaskKind::Classification, 5).unwrap();
        let mut cfg = small_config(3, 8);
        cfg.with_puzzle_head = false;
        let b = Model::new(cfg, TaskKind::Classification, 5).unwrap();
        for p in b.params.iter() {
            let q = a.params.by_name(&p.name).expect("shared names");
            assert_eq!(p.tensor.data(), q.tensor.data(), "{}", p.name);
        }
        assert!(a.params.len() > b.params.len());
    }

    #[test]
    fn shared_point_layer_is_feature_group() {
        let model = Model::new(small_config(4, 27), TaskKind::Segmentation, 3).unwrap();
        let shared = model.params.by_name("pointhead.shared0.weight").unwrap();
        assert_eq!(shared.group, ParamGroup::Feature);
        // Branch-specific layers keep their own groups.
        assert_eq!(model.params.by_name("seg.out.weight").unwrap().group, ParamGroup::MainHead);
        assert_eq!(model.params.by_name("puz.out.weight").unwrap().group, ParamGroup::PuzzleHead);
    }

    #[test]
    fn batching_helpers_validate() {
        let a = PointCloud::new(vec![[0.0; 3], [1.0; 3]], "a").unwrap();
        let b = PointCloud::new(vec![[0.5; 3]], "b").unwrap();
        assert!(batch_clouds(&[a.clone(), b]).is_err());
        let t = batch_clouds(&[a.clone(), a]).unwrap();
        assert_eq!(t.shape(), &[2, 2, 3]);
    }
}
