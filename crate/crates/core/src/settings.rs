//! The six experimental protocols: which labeled data feeds the main loss,
//! which (stripped) data feeds the puzzle loss, and what is evaluated.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{Dataset, PointCloud, UnlabeledCloud};
use crate::rng;

/// Data-availability scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// Single domain: train and test on one labeled source.
    SD,
    /// Few-shot: only a fraction of the source labels is available.
    FS,
    /// Semi-supervised: the unlabeled remainder still feeds the puzzle.
    SS,
    /// Transfer learning: an extra unlabeled set feeds the puzzle.
    TL,
    /// Domain generalization: evaluate on an unseen target domain.
    DG,
    /// Domain adaptation: unlabeled target data joins the puzzle stream.
    DA,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::SD,
        ScenarioKind::FS,
        ScenarioKind::SS,
        ScenarioKind::TL,
        ScenarioKind::DG,
        ScenarioKind::DA,
    ];
}

/// Declarative description of one experiment's data routing.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub source_train: Dataset,
    pub source_test: Dataset,
    pub extra_unlabeled: Option<Dataset>,
    pub target: Option<Dataset>,
    /// Fraction of source labels kept (FS/SS).
    pub labeled_fraction: f64,
    /// TL only: also route the labeled source through the puzzle stream.
    pub tl_include_source: bool,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, source_train: Dataset, source_test: Dataset, seed: u64) -> Self {
        Self {
            kind,
            source_train,
            source_test,
            extra_unlabeled: None,
            target: None,
            labeled_fraction: 1.0,
            tl_include_source: false,
            seed,
        }
    }

    pub fn with_fraction(mut self, fraction: f64) -> Self {
        self.labeled_fraction = fraction;
        self
    }

    pub fn with_extra(mut self, extra: Dataset) -> Self {
        self.extra_unlabeled = Some(extra);
        self
    }

    pub fn with_target(mut self, target: Dataset) -> Self {
        self.target = Some(target);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.source_train.is_empty() || self.source_test.is_empty() {
            return Err(Error::Config("source train/test must be nonempty".into()));
        }
        let train_ids: std::collections::BTreeSet<&String> =
            self.source_train.samples.iter().map(|s| &s.source_id).collect();
        if self.source_test.samples.iter().any(|s| train_ids.contains(&s.source_id)) {
            return Err(Error::Config("source train and test overlap".into()));
        }
        match self.kind {
            ScenarioKind::FS | ScenarioKind::SS => {
                if !(0.0..1.0).contains(&self.labeled_fraction) || self.labeled_fraction == 0.0 {
                    return Err(Error::Config(format!(
                        "{:?} needs labeled_fraction in (0, 1), got {}",
                        self.kind, self.labeled_fraction
                    )));
                }
            }
            ScenarioKind::TL => {
                if self.extra_unlabeled.as_ref().map_or(true, |d| d.is_empty()) {
                    return Err(Error::Config("TL needs a nonempty extra_unlabeled dataset".into()));
                }
            }
            ScenarioKind::DG | ScenarioKind::DA => {
                if self.target.as_ref().map_or(true, |d| d.is_empty()) {
                    return Err(Error::Config(format!("{:?} needs a nonempty target dataset", self.kind)));
                }
            }
            ScenarioKind::SD => {}
        }
        Ok(())
    }
}

/// Concrete data streams for one run. The puzzle stream is label-stripped by
/// type: an `UnlabeledCloud` has no label fields to read.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub main_stream: Vec<PointCloud>,
    pub puzzle_stream: Vec<UnlabeledCloud>,
    pub eval_set: Dataset,
}

fn strip(samples: &[PointCloud]) -> Vec<UnlabeledCloud> {
    samples.iter().map(UnlabeledCloud::from).collect()
}

/// Per-class sampling of `round(fraction * n_c)` (at least 1) samples.
/// Returns (kept, remainder); their union is the dataset.
pub fn stratified_subsample(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<PointCloud>, Vec<PointCloud>)> {
    if !(0.0..=1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        let c = s
            .class_label
            .ok_or_else(|| Error::Dataset(format!("sample {} is unlabeled", s.source_id)))?;
        by_class.entry(c).or_default().push(i);
    }
    if by_class.values().any(|v| v.is_empty()) {
        return Err(Error::Dataset("a class has no samples".into()));
    }
    let mut kept_idx = Vec::new();
    let mut rest_idx = Vec::new();
    for (&c, members) in &by_class {
        let mut order = members.clone();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::stream_indexed(seed, "fewshot", c as u64));
        let n = (((members.len() as f64) * fraction).round() as usize).clamp(1, members.len());
        kept_idx.extend_from_slice(&order[..n]);
        rest_idx.extend_from_slice(&order[n..]);
    }
    kept_idx.sort_unstable();
    rest_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset.samples[i].clone()).collect();
    Ok((pick(&kept_idx), pick(&rest_idx)))
}

/// Remap a dataset's class labels into the source label space through a
/// class-name table (`target name -> source name`). Samples of unmapped
/// classes are dropped.
pub fn remap_class_labels(
    dataset: &Dataset,
    source_class_names: &[String],
    mapping: &BTreeMap<String, String>,
) -> Result<Dataset> {
    let source_index = |name: &str| source_class_names.iter().position(|n| n == name);
    let mut samples = Vec::new();
    for s in &dataset.samples {
        let Some(label) = s.class_label else {
            samples.push(s.clone());
            continue;
        };
        let name = dataset
            .class_names
            .get(label)
            .ok_or_else(|| Error::Dataset(format!("class label {label} out of range")))?;
        let mapped = mapping.get(name).map(String::as_str).unwrap_or(name);
        match source_index(mapped) {
            Some(idx) => {
                let mut out = s.clone();
                out.class_label = Some(idx);
                samples.push(out);
            }
            None => continue,
        }
    }
    if samples.is_empty() {
        return Err(Error::Dataset("no samples left after class remapping".into()));
    }
    Ok(Dataset {
        samples,
        class_names: source_class_names.to_vec(),
        num_parts: dataset.num_parts,
        parts_per_class: dataset.parts_per_class.clone(),
    })
}

/// Build the concrete streams for a scenario.
pub fn resolve(spec: &ScenarioSpec) -> Result<ResolvedScenario> {
    spec.validate()?;
    let train = &spec.source_train.samples;
    let resolved = match spec.kind {
        ScenarioKind::SD => ResolvedScenario {
            main_stream: train.clone(),
            puzzle_stream: strip(train),
            eval_set: spec.source_test.clone(),
        },
        ScenarioKind::FS => {
            let (kept, _) = stratified_subsample(&spec.source_train, spec.labeled_fraction, spec.seed)?;
            ResolvedScenario {
                puzzle_stream: strip(&kept),
                main_stream: kept,
                eval_set: spec.source_test.clone(),
            }
        }
        ScenarioKind::SS => {
            let (kept, remainder) =
                stratified_subsample(&spec.source_train, spec.labeled_fraction, spec.seed)?;
            let mut puzzle = strip(&kept);
            puzzle.extend(strip(&remainder));
            ResolvedScenario {
                main_stream: kept,
                puzzle_stream: puzzle,
                eval_set: spec.source_test.clone(),
            }
        }
        ScenarioKind::TL => {
            let extra = spec.extra_unlabeled.as_ref().expect("validated");
            let mut puzzle = Vec::new();
            if spec.tl_include_source {
                puzzle.extend(strip(train));
            }
            puzzle.extend(strip(&extra.samples));
            ResolvedScenario {
                main_stream: train.clone(),
                puzzle_stream: puzzle,
                eval_set: spec.source_test.clone(),
            }
        }
        ScenarioKind::DG => {
            let target = spec.target.as_ref().expect("validated");
            ResolvedScenario {
                main_stream: train.clone(),
                puzzle_stream: strip(train),
                eval_set: target.clone(),
            }
        }
        ScenarioKind::DA => {
            let target = spec.target.as_ref().expect("validated");
            let mut puzzle = strip(train);
            puzzle.extend(strip(&target.samples));
            ResolvedScenario {
                main_stream: train.clone(),
                puzzle_stream: puzzle,
                eval_set: target.clone(),
            }
        }
    };
    let main_ids: std::collections::BTreeSet<&String> =
        resolved.main_stream.iter().map(|s| &s.source_id).collect();
    if resolved.eval_set.samples.iter().any(|s| main_ids.contains(&s.source_id)) {
        return Err(Error::Config("eval set overlaps the main stream".into()));
    }
    Ok(resolved)
}
