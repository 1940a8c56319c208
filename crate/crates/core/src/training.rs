//! Joint training: the combined objective `L_m + alpha * L_p`, step learning
//! rate schedules, the two-stream epoch loop and evaluation.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    category_miou, overall_accuracy, per_part_accuracy, shape_miou, ConfusionTally, IoUReport,
    PerPartAccuracy,
};
use crate::model::{batch_clouds, batch_points, ForwardCtx, Model, TaskKind};
use crate::numerics::{argmax, Graph, OptimAlgo, Optimizer, ParamGroup, Var};
use crate::pointcloud::{jitter, rotate_y, Dataset, PointCloud, UnlabeledCloud};
use crate::puzzle::{apply_puzzle, puzzle_accuracy, PuzzleConfig};
use crate::rng;

/// Optimizer choice plus its step-decay schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    #[serde(flatten)]
    pub algo: OptimAlgo,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl OptimizerSpec {
    /// Adam, lr 0.001, divided by 4 every 20 epochs (classification recipe).
    pub fn adam_classification() -> Self {
        Self { algo: OptimAlgo::adam(), base_lr: 0.001, decay_factor: 4.0, decay_every: 20 }
    }

    /// SGD momentum 0.9, lr 0.01, divided by 2 every 20 epochs.
    pub fn sgd_momentum() -> Self {
        Self { algo: OptimAlgo::sgd_momentum(0.9), base_lr: 0.01, decay_factor: 2.0, decay_every: 20 }
    }

    /// Adam, lr 0.001, divided by 2 every 20 epochs (segmentation recipe).
    pub fn adam_segmentation() -> Self {
        Self { algo: OptimAlgo::adam(), base_lr: 0.001, decay_factor: 2.0, decay_every: 20 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 || self.decay_factor < 1.0 || self.decay_every == 0 {
            return Err(Error::Config(format!(
                "bad optimizer schedule: lr {}, factor {}, every {}",
                self.base_lr, self.decay_factor, self.decay_every
            )));
        }
        Ok(())
    }
}

/// Step schedule: `base_lr / factor^(epoch / every)`.
pub fn lr_at_epoch(spec: &OptimizerSpec, epoch: usize) -> f64 {
    spec.base_lr / spec.decay_factor.powi((epoch / spec.decay_every) as i32)
}

fn default_jitter_sigma() -> f64 {
    0.01
}
fn default_jitter_clip() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}

/// Training-time augmentation toggles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Gaussian jitter std; 0 disables.
    #[serde(default = "default_jitter_sigma")]
    pub jitter_sigma: f64,
    #[serde(default = "default_jitter_clip")]
    pub jitter_clip: f64,
    /// Random rotation about the up axis.
    #[serde(default = "default_true")]
    pub random_rotation: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { jitter_sigma: 0.01, jitter_clip: 0.05, random_rotation: true }
    }
}

impl AugmentConfig {
    pub fn off() -> Self {
        Self { jitter_sigma: 0.0, jitter_clip: 0.05, random_rotation: false }
    }
}

fn default_alpha() -> f64 {
    0.6
}
fn default_l() -> usize {
    3
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    60
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the puzzle loss.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_l")]
    pub puzzle_l: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    pub optimizer: OptimizerSpec,
    pub task: TaskKind,
    #[serde(default)]
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        self.optimizer.validate()?;
        PuzzleConfig::new(self.puzzle_l)?;
        Ok(())
    }
}

/// Aggregated statistics of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub main_loss: f64,
    pub puzzle_loss: f64,
    pub total_loss: f64,
    /// Training-stream main-task metric (accuracy over samples for
    /// classification, over points for segmentation).
    pub main_metric: f64,
    pub puzzle_accuracy: f64,
}

/// The combined objective's graph nodes.
pub struct JointLoss {
    pub total: Var,
    pub main: Var,
    pub puzzle: Option<Var>,
}

/// Cross-entropy main loss plus `alpha` times the cross-entropy puzzle loss.
///
/// `main_logits` may be `[n, c]` or per-point `[b, k, q]` (flattened against
/// the targets); puzzle logits are always per-point and averaged over all
/// `b * k` predictions. With `alpha == 0` the puzzle term is skipped outright
/// so no gradient ever reaches the puzzle branch.
pub fn joint_loss(
    graph: &mut Graph,
    main_logits: Var,
    main_targets: &[usize],
    puzzle: Option<(Var, &[usize])>,
    alpha: f64,
) -> Result<JointLoss> {
    if alpha < 0.0 {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let main_flat = flatten_logits(graph, main_logits)?;
    let main = graph.softmax_cross_entropy(main_flat, main_targets)?;
    match puzzle {
        Some((logits, targets)) if alpha > 0.0 => {
            let flat = flatten_logits(graph, logits)?;
            let lp = graph.softmax_cross_entropy(flat, targets)?;
            let total = graph.add_scaled(main, lp, alpha)?;
            Ok(JointLoss { total, main, puzzle: Some(lp) })
        }
        _ => Ok(JointLoss { total: main, main, puzzle: None }),
    }
}

fn flatten_logits(graph: &mut Graph, logits: Var) -> Result<Var> {
    let shape = graph.shape(logits).to_vec();
    match shape.len() {
        2 => Ok(logits),
        3 => graph.reshape(logits, vec![shape[0] * shape[1], shape[2]]),
        _ => Err(Error::Shape {
            op: "joint_loss",
            detail: format!("logits must be 2- or 3-dimensional, got {:?}", shape),
        }),
    }
}

/// Cycling, independently shuffled view over the puzzle stream.
#[derive(Debug, Clone)]
pub struct PuzzleStream {
    items: Vec<UnlabeledCloud>,
    order: Vec<usize>,
    pos: usize,
    draws: usize,
    rng: ChaCha8Rng,
}

impl PuzzleStream {
    pub fn new(items: Vec<UnlabeledCloud>, seed: u64) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Config("puzzle stream is empty".into()));
        }
        let mut stream = Self {
            order: (0..items.len()).collect(),
            items,
            pos: 0,
            draws: 0,
            rng: rng::stream(seed, "puzzle-stream"),
        };
        stream.reshuffle();
        Ok(stream)
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom;
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total items handed out so far.
    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Next `n` clouds, cycling (with a fresh shuffle) as needed.
    pub fn next_batch(&mut self, n: usize) -> Vec<UnlabeledCloud> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.items[self.order[self.pos]].clone());
            self.pos += 1;
            self.draws += 1;
        }
        out
    }
}

/// Named RNG streams of a trainer; each concern draws independently.
#[derive(Debug, Clone)]
pub struct TrainerRngs {
    pub shuffle: ChaCha8Rng,
    pub augment: ChaCha8Rng,
    pub puzzle: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

impl TrainerRngs {
    fn new(seed: u64) -> Self {
        Self {
            shuffle: rng::stream(seed, "shuffle"),
            augment: rng::stream(seed, "augment"),
            puzzle: rng::stream(seed, "puzzle"),
            dropout: rng::stream(seed, "dropout"),
        }
    }
}

/// Drives epochs of joint training over a model.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: Optimizer,
    pub config: TrainConfig,
    pub rngs: TrainerRngs,
    puzzle_cfg: PuzzleConfig,
}

fn augment_points(cloud: &PointCloud, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    use rand::Rng;
    let mut out = cloud.clone();
    if cfg.random_rotation {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        out = rotate_y(&out, angle);
    }
    if cfg.jitter_sigma > 0.0 {
        out = jitter(&out, cfg.jitter_sigma, cfg.jitter_clip, rng)?;
    }
    Ok(out)
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.alpha > 0.0 && model.config.with_puzzle_head {
            let expected = config.puzzle_l.pow(3);
            if model.config.num_voxels != expected {
                return Err(Error::Config(format!(
                    "model puzzle head has {} outputs but l={} needs {}",
                    model.config.num_voxels, config.puzzle_l, expected
                )));
            }
        }
        if config.alpha > 0.0 && !model.config.with_puzzle_head {
            return Err(Error::Config("alpha > 0 requires a puzzle head".into()));
        }
        if config.task != model.task {
            return Err(Error::Config("trainer task differs from model task".into()));
        }
        let optimizer = Optimizer::new(config.optimizer.algo, config.optimizer.base_lr);
        let rngs = TrainerRngs::new(config.seed);
        let puzzle_cfg = PuzzleConfig::new(config.puzzle_l)?;
        Ok(Self { model, optimizer, config, rngs, puzzle_cfg })
    }

    fn main_targets(&self, batch: &[PointCloud]) -> Result<Vec<usize>> {
        match self.config.task {
            TaskKind::Classification => batch
                .iter()
                .map(|s| {
                    s.class_label.ok_or_else(|| {
                        Error::Config(format!("sample {} has no class label", s.source_id))
                    })
                })
                .collect(),
            TaskKind::Segmentation => {
                let mut out = Vec::new();
                for s in batch {
                    let parts = s.part_labels.as_ref().ok_or_else(|| {
                        Error::Config(format!("sample {} has no part labels", s.source_id))
                    })?;
                    out.extend_from_slice(parts);
                }
                Ok(out)
            }
        }
    }

    /// One pass over the main stream: shuffled main batches, a same-size
    /// puzzle batch per main batch (cycling independently), fresh puzzles per
    /// sample, one optimizer step per batch.
    pub fn train_epoch(
        &mut self,
        main_stream: &[PointCloud],
        mut puzzle_stream: Option<&mut PuzzleStream>,
        epoch: usize,
    ) -> Result<EpochStats> {
        if main_stream.is_empty() {
            return Err(Error::Config("main stream is empty".into()));
        }
        let alpha = self.config.alpha;
        if alpha > 0.0 && puzzle_stream.is_none() {
            return Err(Error::Config("alpha > 0 requires a puzzle stream".into()));
        }
        let lr = lr_at_epoch(&self.config.optimizer, epoch);

        let mut order: Vec<usize> = (0..main_stream.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut self.rngs.shuffle);

        let mut main_loss_sum = 0.0;
        let mut main_weight = 0.0;
        let mut puzzle_loss_sum = 0.0;
        let mut puzzle_weight = 0.0;
        let mut main_correct = 0usize;
        let mut main_total = 0usize;
        let mut puzzle_correct = 0usize;
        let mut puzzle_total = 0usize;

        for chunk in order.chunks(self.config.batch_size) {
            let mut mains = Vec::with_capacity(chunk.len());
            for &i in chunk {
                mains.push(augment_points(&main_stream[i], &self.config.augment, &mut self.rngs.augment)?);
            }
            let main_input = batch_clouds(&mains)?;
            let main_targets = self.main_targets(&mains)?;

            let mut graph = Graph::new();
            let mut ctx = ForwardCtx::train(&mut self.rngs.dropout);
            let x = graph.input(&main_input)?;
            let enc = self.model.encode(&mut graph, &mut ctx, x)?;
            let main_logits = match self.config.task {
                TaskKind::Classification => self.model.classify(&mut graph, &mut ctx, enc.global)?,
                TaskKind::Segmentation => self.model.segment(&mut graph, enc.per_point, enc.global)?,
            };

            let mut puzzle_part: Option<(Var, Vec<usize>)> = None;
            if alpha > 0.0 {
                let stream = puzzle_stream.as_deref_mut().expect("checked above");
                let batch = stream.next_batch(chunk.len());
                let mut clouds = Vec::with_capacity(batch.len());
                let mut labels = Vec::new();
                for item in &batch {
                    let cloud = augment_points(&item.to_cloud(), &self.config.augment, &mut self.rngs.puzzle)?;
                    let puzzled = apply_puzzle(&cloud, self.puzzle_cfg, &mut self.rngs.puzzle)?;
                    labels.extend_from_slice(&puzzled.voxel_labels);
                    clouds.push(puzzled.shuffled_points);
                }
                let views: Vec<&[[f64; 3]]> = clouds.iter().map(|c| c.as_slice()).collect();
                let pz_input = batch_points(&views)?;
                let xz = graph.input(&pz_input)?;
                let encz = self.model.encode(&mut graph, &mut ctx, xz)?;
                let pz_logits = self.model.solve_puzzle(&mut graph, encz.per_point, encz.global)?;
                puzzle_part = Some((pz_logits, labels));
            }

            let jl = joint_loss(
                &mut graph,
                main_logits,
                &main_targets,
                puzzle_part.as_ref().map(|(v, t)| (*v, t.as_slice())),
                alpha,
            )?;

            let grads = graph.backward_param_grads(jl.total)?;
            self.model.accumulate_grads(grads);
            self.model.absorb_norm_stats(ctx);

            let groups: &[ParamGroup] = if alpha > 0.0 {
                &[ParamGroup::Feature, ParamGroup::MainHead, ParamGroup::PuzzleHead]
            } else {
                &[ParamGroup::Feature, ParamGroup::MainHead]
            };
            // Parameters outside the stepped groups carry no grads this step;
            // clear any stale buffers rather than tripping the optimizer.
            self.optimizer.step(self.model.params.iter_groups_mut(groups), lr)?;

            // Batch statistics.
            let w = main_targets.len() as f64;
            main_loss_sum += graph.value(jl.main)[0] * w;
            main_weight += w;
            let logits_vals = graph.value(main_logits).to_vec();
            let c = *graph.shape(main_logits).last().unwrap();
            for (row, &t) in main_targets.iter().enumerate() {
                let pred = argmax(&logits_vals[row * c..(row + 1) * c]);
                main_correct += usize::from(pred == t);
                main_total += 1;
            }
            if let (Some(lp), Some((pz_logits, labels))) = (jl.puzzle, &puzzle_part) {
                let w = labels.len() as f64;
                puzzle_loss_sum += graph.value(lp)[0] * w;
                puzzle_weight += w;
                let vals = graph.value(*pz_logits);
                let v = *graph.shape(*pz_logits).last().unwrap();
                let mut preds = Vec::with_capacity(labels.len());
                for row in 0..labels.len() {
                    preds.push(argmax(&vals[row * v..(row + 1) * v]));
                }
                puzzle_correct += preds.iter().zip(labels).filter(|(p, t)| p == t).count();
                puzzle_total += labels.len();
                let _ = puzzle_accuracy(&preds, labels)?;
            }
        }

        let main_loss = main_loss_sum / main_weight;
        let puzzle_loss = if puzzle_weight > 0.0 { puzzle_loss_sum / puzzle_weight } else { 0.0 };
        Ok(EpochStats {
            epoch,
            lr,
            main_loss,
            puzzle_loss,
            total_loss: main_loss + alpha * puzzle_loss,
            main_metric: main_correct as f64 / main_total as f64,
            puzzle_accuracy: if puzzle_total > 0 {
                puzzle_correct as f64 / puzzle_total as f64
            } else {
                0.0
            },
        })
    }
}

/// Evaluation outcome for either task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum MetricReport {
    Classification {
        overall_accuracy: f64,
        per_class_accuracy: Vec<Option<f64>>,
        confusion: ConfusionTally,
    },
    Segmentation {
        iou: IoUReport,
        per_part: PerPartAccuracy,
        overall_point_accuracy: f64,
    },
}

impl MetricReport {
    /// The headline number: accuracy, or instance-average mIoU.
    pub fn primary_metric(&self) -> f64 {
        match self {
            MetricReport::Classification { overall_accuracy, .. } => *overall_accuracy,
            MetricReport::Segmentation { iou, .. } => iou.instance_average,
        }
    }
}

/// Eval-mode pass over a labeled dataset.
pub fn evaluate(model: &Model, dataset: &Dataset, batch_size: usize) -> Result<MetricReport> {
    if dataset.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    let uniform_k = dataset.samples.iter().all(|s| s.len() == dataset.samples[0].len());
    let chunk_size = if uniform_k { batch_size.max(1) } else { 1 };

    match model.task {
        TaskKind::Classification => {
            let mut tally = ConfusionTally::new(model.config.num_classes);
            for chunk in dataset.samples.chunks(chunk_size) {
                let input = batch_clouds(chunk)?;
                let mut graph = Graph::new();
                let mut ctx = ForwardCtx::eval();
                let x = graph.input(&input)?;
                let enc = model.encode(&mut graph, &mut ctx, x)?;
                let logits = model.classify(&mut graph, &mut ctx, enc.global)?;
                let vals = graph.value(logits);
                let c = model.config.num_classes;
                for (row, sample) in chunk.iter().enumerate() {
                    let truth = sample.class_label.ok_or_else(|| {
                        Error::Config(format!("sample {} has no class label", sample.source_id))
                    })?;
                    tally.record(truth, argmax(&vals[row * c..(row + 1) * c]))?;
                }
            }
            Ok(MetricReport::Classification {
                overall_accuracy: tally.accuracy(),
                per_class_accuracy: tally.per_class_accuracy(),
                confusion: tally,
            })
        }
        TaskKind::Segmentation => {
            let q = model
                .config
                .num_parts
                .ok_or_else(|| Error::Config("segmentation model without num_parts".into()))?;
            let mut shapes: Vec<(String, f64)> = Vec::new();
            let mut all_pred = Vec::new();
            let mut all_truth = Vec::new();
            for chunk in dataset.samples.chunks(chunk_size) {
                let input = batch_clouds(chunk)?;
                let mut graph = Graph::new();
                let mut ctx = ForwardCtx::eval();
                let x = graph.input(&input)?;
                let enc = model.encode(&mut graph, &mut ctx, x)?;
                let logits = model.segment(&mut graph, enc.per_point, enc.global)?;
                let vals = graph.value(logits);
                let k = chunk[0].len();
                for (row, sample) in chunk.iter().enumerate() {
                    let truth = sample.part_labels.as_ref().ok_or_else(|| {
                        Error::Config(format!("sample {} has no part labels", sample.source_id))
                    })?;
                    let mut pred = Vec::with_capacity(k);
                    for p in 0..k {
                        let base = (row * k + p) * q;
                        pred.push(argmax(&vals[base..base + q]));
                    }
                    let class = sample.class_label;
                    let category_parts: Vec<usize> = match (class, &dataset.parts_per_class) {
                        (Some(c), Some(ppc)) if c < ppc.len() => ppc[c].clone(),
                        _ => (0..q).collect(),
                    };
                    let miou = shape_miou(&pred, truth, &category_parts)?;
                    let category = class
                        .and_then(|c| dataset.class_names.get(c).cloned())
                        .unwrap_or_else(|| "uncategorized".to_string());
                    shapes.push((category, miou));
                    all_pred.extend_from_slice(&pred);
                    all_truth.extend_from_slice(truth);
                }
            }
            let iou = category_miou(&shapes)?;
            let per_part = per_part_accuracy(&all_pred, &all_truth, q)?;
            let overall_point_accuracy = overall_accuracy(&all_pred, &all_truth)?;
            Ok(MetricReport::Segmentation { iou, per_part, overall_point_accuracy })
        }
    }
}
