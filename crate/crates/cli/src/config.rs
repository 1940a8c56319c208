//! Experiment configuration: one JSON document describing data, scenario,
//! model and training. Unknown keys are rejected and `schema_version` is
//! checked so stale configs fail loudly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use puzzlecloud::datagen::{
    default_recipes, default_recipes_small, generate_dataset, split, DomainProfile, ShapeRecipe,
};
use puzzlecloud::error::{Error, Result};
use puzzlecloud::model::{EncoderConfig, TaskKind};
use puzzlecloud::pointcloud::{io as pcio, Dataset};
use puzzlecloud::settings::ScenarioKind;
use puzzlecloud::training::{AugmentConfig, OptimizerSpec, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

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
fn default_fraction() -> f64 {
    1.0
}
fn default_k_points() -> usize {
    64
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_repeats() -> usize {
    3
}

/// Training hyperparameters as written in the config file; `task` and `seed`
/// live at the top level.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_l")]
    pub puzzle_l: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Defaults to the per-task recipe when omitted.
    #[serde(default)]
    pub optimizer: Option<OptimizerSpec>,
    #[serde(default)]
    pub augment: AugmentConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            puzzle_l: default_l(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            optimizer: None,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, task: TaskKind, seed: u64) -> TrainConfig {
        let optimizer = self.optimizer.unwrap_or(match task {
            TaskKind::Classification => OptimizerSpec::adam_classification(),
            TaskKind::Segmentation => OptimizerSpec::adam_segmentation(),
        });
        TrainConfig {
            alpha: self.alpha,
            puzzle_l: self.puzzle_l,
            batch_size: self.batch_size,
            epochs: self.epochs,
            optimizer,
            task,
            augment: self.augment,
            seed,
        }
    }
}

/// Architecture overrides; anything omitted uses the standard widths.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub per_point_mlp_widths: Option<Vec<usize>>,
    #[serde(default)]
    pub local_feature_layer: Option<usize>,
    #[serde(default)]
    pub head_widths_classification: Option<Vec<usize>>,
    #[serde(default)]
    pub head_widths_per_point: Option<Vec<usize>>,
    #[serde(default)]
    pub dropout_rate: Option<f64>,
    #[serde(default)]
    pub use_batch_std: Option<bool>,
    #[serde(default)]
    pub share_first_point_layer: Option<bool>,
}

impl ModelSection {
    pub fn to_encoder_config(
        &self,
        num_classes: usize,
        num_parts: Option<usize>,
        num_voxels: usize,
        with_puzzle_head: bool,
    ) -> EncoderConfig {
        let mut cfg = EncoderConfig::standard(num_classes, num_parts, num_voxels);
        if let Some(v) = &self.per_point_mlp_widths {
            cfg.per_point_mlp_widths = v.clone();
        }
        if let Some(v) = self.local_feature_layer {
            cfg.local_feature_layer = v;
        }
        if let Some(v) = &self.head_widths_classification {
            cfg.head_widths_classification = v.clone();
        }
        if let Some(v) = &self.head_widths_per_point {
            cfg.head_widths_per_point = v.clone();
        }
        if let Some(v) = self.dropout_rate {
            cfg.dropout_rate = v;
        }
        if let Some(v) = self.use_batch_std {
            cfg.use_batch_std = v;
        }
        if let Some(v) = self.share_first_point_layer {
            cfg.share_first_point_layer = v;
        }
        cfg.with_puzzle_head = with_puzzle_head;
        cfg
    }
}

/// Recipe list: a named preset or inline recipes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecipeSpec {
    Preset(String),
    Inline(Vec<ShapeRecipe>),
}

impl RecipeSpec {
    pub fn recipes(&self) -> Result<Vec<ShapeRecipe>> {
        match self {
            RecipeSpec::Preset(name) => match name.as_str() {
                "default4" => Ok(default_recipes()),
                "default2" => Ok(default_recipes_small()),
                other => Err(Error::Config(format!("unknown recipe preset {other:?}"))),
            },
            RecipeSpec::Inline(recipes) => Ok(recipes.clone()),
        }
    }
}

fn default_recipe_spec() -> RecipeSpec {
    RecipeSpec::Preset("default4".into())
}

/// Domain profile: a named preset or explicit values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Named(String),
    Custom(DomainProfile),
}

impl ProfileSpec {
    pub fn profile(&self) -> Result<DomainProfile> {
        match self {
            ProfileSpec::Named(name) => match name.as_str() {
                "clean" => Ok(DomainProfile::clean()),
                "corrupted" => Ok(DomainProfile::corrupted()),
                other => Err(Error::Config(format!("unknown profile preset {other:?}"))),
            },
            ProfileSpec::Custom(p) => Ok(p.clone()),
        }
    }
}

fn default_profile_spec() -> ProfileSpec {
    ProfileSpec::Named("clean".into())
}

/// Where a dataset comes from: generated on the fly, or a directory of PLY
/// files with a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Datagen {
        #[serde(default = "default_recipe_spec")]
        recipes: RecipeSpec,
        samples_per_class: usize,
        #[serde(default = "default_k_points")]
        k_points: usize,
        #[serde(default = "default_profile_spec")]
        profile: ProfileSpec,
        seed: u64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    Dir {
        path: PathBuf,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        split_seed: u64,
    },
}

impl DataSource {
    /// All samples, unsplit.
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Datagen { recipes, samples_per_class, k_points, profile, seed, .. } => {
                generate_dataset(&recipes.recipes()?, *samples_per_class, *k_points, &profile.profile()?, *seed)
            }
            DataSource::Dir { path, .. } => load_dataset_dir(path),
        }
    }

    /// Stratified (train, test) split.
    pub fn load_split(&self) -> Result<(Dataset, Dataset)> {
        let dataset = self.load()?;
        let (fraction, seed) = match self {
            DataSource::Datagen { test_fraction, seed, .. } => (*test_fraction, *seed),
            DataSource::Dir { test_fraction, split_seed, .. } => (*test_fraction, *split_seed),
        };
        split(&dataset, fraction, seed)
    }
}

/// Scenario routing as written in the config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
    #[serde(default = "default_fraction")]
    pub labeled_fraction: f64,
    #[serde(default)]
    pub tl_include_source: bool,
    /// Target/extra class names remapped into the source label space.
    #[serde(default)]
    pub class_map: Option<BTreeMap<String, String>>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::SD,
            labeled_fraction: 1.0,
            tl_include_source: false,
            class_map: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    #[serde(default)]
    pub extra_unlabeled: Option<DataSource>,
    #[serde(default)]
    pub target: Option<DataSource>,
}

/// Ablation grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub alphas: Vec<f64>,
    pub ls: Vec<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Override of `train.epochs` for sweep cells.
    #[serde(default)]
    pub epochs: Option<usize>,
}

/// The whole experiment document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub task: TaskKind,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    pub data: DataSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {})",
                self.schema_version, SCHEMA_VERSION
            )));
        }
        Ok(())
    }
}

/// Manifest written next to persisted PLY datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub class_names: Vec<String>,
    pub num_parts: Option<usize>,
    pub parts_per_class: Option<Vec<Vec<usize>>>,
    pub samples: Vec<ManifestSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub file: String,
    pub class_label: Option<usize>,
}

/// Write a dataset as one PLY per sample plus `manifest.json`.
pub fn save_dataset_dir(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut samples = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let file = format!("{}.ply", s.source_id);
        pcio::write_ply_points(dir.join(&file), s)?;
        samples.push(ManifestSample { file, class_label: s.class_label });
    }
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        class_names: dataset.class_names.clone(),
        num_parts: dataset.num_parts,
        parts_per_class: dataset.parts_per_class.clone(),
        samples,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Load a dataset directory written by `save_dataset_dir`.
pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "manifest schema_version {} unsupported",
            manifest.schema_version
        )));
    }
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for m in &manifest.samples {
        let mut cloud = pcio::read_ply_points(dir.join(&m.file))?;
        cloud.source_id = m.file.trim_end_matches(".ply").to_string();
        if let Some(c) = m.class_label {
            cloud = cloud.with_class(c);
        }
        samples.push(cloud);
    }
    let dataset = Dataset {
        samples,
        class_names: manifest.class_names,
        num_parts: manifest.num_parts,
        parts_per_class: manifest.parts_per_class,
    };
    dataset.validate()?;
    Ok(dataset)
}
