//! JSON checkpoint: config echo, parameters, optimizer and RNG state.
//! Floats serialize as shortest-round-trip decimals, so a reloaded model
//! reproduces forward outputs bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use puzzlecloud::error::{Error, Result};
use puzzlecloud::model::{Model, RunningNorm};
use puzzlecloud::numerics::{OptimAlgo, Optimizer, ParamGroup, Slot, Tensor};
use puzzlecloud::training::{Trainer, TrainerRngs};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerRecord {
    #[serde(flatten)]
    pub algo: OptimAlgo,
    pub base_lr: f64,
    pub step_count: u64,
    pub slots: BTreeMap<String, Slot>,
}

/// Serializable ChaCha state: seed, stream and 128-bit word position (as a
/// decimal string; JSON numbers cap at 64 bits).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavedRng {
    pub seed: Vec<u8>,
    pub stream: u64,
    pub word_pos: String,
}

pub fn save_rng(rng: &ChaCha8Rng) -> SavedRng {
    SavedRng {
        seed: rng.get_seed().to_vec(),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos().to_string(),
    }
}

pub fn load_rng(saved: &SavedRng) -> Result<ChaCha8Rng> {
    let seed: [u8; 32] = saved
        .seed
        .as_slice()
        .try_into()
        .map_err(|_| Error::Config("rng seed must be 32 bytes".into()))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(saved.stream);
    let pos: u128 = saved
        .word_pos
        .parse()
        .map_err(|_| Error::Config(format!("bad rng word_pos {:?}", saved.word_pos)))?;
    rng.set_word_pos(pos);
    Ok(rng)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub epoch: usize,
    pub class_names: Vec<String>,
    pub num_parts: Option<usize>,
    pub parts_per_class: Option<Vec<Vec<usize>>>,
    pub params: Vec<ParamRecord>,
    pub norm_state: BTreeMap<String, RunningNorm>,
    pub optimizer: OptimizerRecord,
    pub rng: BTreeMap<String, SavedRng>,
}

impl Checkpoint {
    pub fn capture(
        config: &ExperimentConfig,
        trainer: &Trainer,
        epoch: usize,
        class_names: &[String],
        num_parts: Option<usize>,
        parts_per_class: Option<&Vec<Vec<usize>>>,
        extra_rngs: &[(&str, &ChaCha8Rng)],
    ) -> Self {
        let params = trainer
            .model
            .params
            .iter()
            .map(|p| ParamRecord {
                name: p.name.clone(),
                group: p.group,
                shape: p.tensor.shape().to_vec(),
                data: p.tensor.data().to_vec(),
            })
            .collect();
        let mut rng = BTreeMap::new();
        rng.insert("shuffle".to_string(), save_rng(&trainer.rngs.shuffle));
        rng.insert("augment".to_string(), save_rng(&trainer.rngs.augment));
        rng.insert("puzzle".to_string(), save_rng(&trainer.rngs.puzzle));
        rng.insert("dropout".to_string(), save_rng(&trainer.rngs.dropout));
        for (name, r) in extra_rngs {
            rng.insert((*name).to_string(), save_rng(r));
        }
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            epoch,
            class_names: class_names.to_vec(),
            num_parts,
            parts_per_class: parts_per_class.cloned(),
            params,
            norm_state: trainer.model.params.norm_state.clone(),
            optimizer: OptimizerRecord {
                algo: trainer.optimizer.algo,
                base_lr: trainer.optimizer.base_lr,
                step_count: trainer.optimizer.step_count,
                slots: trainer.optimizer.slots.clone(),
            },
            rng,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "checkpoint schema_version {} unsupported",
                ck.schema_version
            )));
        }
        Ok(ck)
    }

    /// Rebuild the model exactly: architecture from the config echo, weights
    /// and normalization state from the records.
    pub fn restore_model(&self) -> Result<Model> {
        let encoder = self.config.model.to_encoder_config(
            self.class_names.len(),
            self.num_parts,
            self.config.train.puzzle_l.pow(3),
            self.config.train.alpha > 0.0 || self.params.iter().any(|p| p.group == ParamGroup::PuzzleHead),
        );
        let mut model = Model::new(encoder, self.config.task, self.config.seed)?;
        let expected = model.params.len();
        if expected != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, model needs {}",
                self.params.len(),
                expected
            )));
        }
        for record in &self.params {
            let param = model
                .params
                .by_name_mut(&record.name)
                .ok_or_else(|| Error::Config(format!("unknown parameter {}", record.name)))?;
            if param.tensor.shape() != record.shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {} shape {:?} != checkpoint {:?}",
                    record.name,
                    param.tensor.shape(),
                    record.shape
                )));
            }
            param.tensor = Tensor::new(record.shape.clone(), record.data.clone())?.with_requires_grad();
        }
        model.params.norm_state = self.norm_state.clone();
        Ok(model)
    }

    pub fn restore_optimizer(&self) -> Optimizer {
        let mut opt = Optimizer::new(self.optimizer.algo, self.optimizer.base_lr);
        opt.step_count = self.optimizer.step_count;
        opt.slots = self.optimizer.slots.clone();
        opt
    }

    pub fn restore_trainer_rngs(&self) -> Result<TrainerRngs> {
        let get = |name: &str| -> Result<ChaCha8Rng> {
            self.rng
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint missing rng stream {name}")))
                .and_then(load_rng)
        };
        Ok(TrainerRngs {
            shuffle: get("shuffle")?,
            augment: get("augment")?,
            puzzle: get("puzzle")?,
            dropout: get("dropout")?,
        })
    }
}
