//! The declarative run file: JSON with every field defaulted and unknown
//! keys rejected, plus `a.b=value` overrides applied before validation.

use std::fs;
use std::path::{Path, PathBuf};

use cka_core::amalgamation::{AmalgamationConfig, PretrainConfig, TargetMode, TeacherView};
use cka_core::data::{AugmentationPolicy, BlobConfig};
use cka_core::losses::{KlDirection, LossWeights, Metric, Reduction};
use cka_core::models::{AdamConfig, ADAPTER_WIDTH, COMMON_WIDTH};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    #[default]
    Blobs,
    /// Two independently generated blob sets with disjoint classes.
    CrossBlobs,
    Idx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub num_classes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    pub blobs: BlobConfig,
    /// Second generator for `cross-blobs`.
    pub second: Option<BlobConfig>,
    pub idx: Option<IdxPaths>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub teacher_count: usize,
    /// Explicit class subsets, one per teacher; overrides the seeded split.
    pub subsets: Option<Vec<Vec<usize>>>,
    pub seed: u64,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            teacher_count: 2,
            subsets: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Hidden widths per teacher; teacher `i` uses entry `i mod len`.
    pub teacher_widths: Vec<Vec<usize>>,
    pub student_widths: Vec<usize>,
    pub projection_hidden: usize,
    pub projection_output: usize,
    pub adapter_width: usize,
    pub common_width: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            teacher_widths: vec![vec![64, 64], vec![128, 128]],
            student_widths: vec![128, 128],
            projection_hidden: 128,
            projection_output: 64,
            adapter_width: ADAPTER_WIDTH,
            common_width: COMMON_WIDTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Intra-model similarity margin.
    pub alpha: f64,
    pub lambda_intra: f64,
    pub lambda_inter: f64,
    pub lambda_a: f64,
    pub lambda_d: f64,
    pub distill_temperature: f64,
    pub inter_metric: Metric,
    pub spatial_channels: Option<usize>,
    pub reduction: Reduction,
    pub kl_direction: KlDirection,
    pub teacher_view: TeacherView,
    pub target_mode: TargetMode,
    pub freeze_adapters: bool,
    pub grad_clip: Option<f64>,
    pub augmentation: AugmentationPolicy,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let w = LossWeights::default();
        let a = AdamConfig::default();
        let c = AmalgamationConfig::default();
        Self {
            lr: a.lr,
            weight_decay: a.weight_decay,
            batch_size: c.batch_size,
            epochs: c.epochs,
            alpha: w.margin,
            lambda_intra: w.lambda_intra,
            lambda_inter: w.lambda_inter,
            lambda_a: w.lambda_align,
            lambda_d: w.lambda_std,
            distill_temperature: w.distill_temperature,
            inter_metric: c.metric,
            spatial_channels: None,
            reduction: c.reduction,
            kl_direction: c.kl_direction,
            teacher_view: c.teacher_view,
            target_mode: c.target_mode,
            freeze_adapters: false,
            grad_clip: None,
            augmentation: AugmentationPolicy::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub tasks: TaskSection,
    pub model: ModelSection,
    pub pretrain: PretrainConfig,
    pub train: TrainSection,
    /// Seeds swept by `ablate`.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSection::default(),
            tasks: TaskSection::default(),
            model: ModelSection::default(),
            pretrain: PretrainConfig::default(),
            train: TrainSection::default(),
            seeds: vec![0],
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    /// The blob benchmark at a size that trains in seconds: ten epochs, and
    /// a softened teacher-first distillation target.
    pub fn desk_preset() -> Self {
        let mut c = Self::default();
        c.train.epochs = 10;
        c.train.distill_temperature = 4.0;
        c.train.kl_direction = KlDirection::TeacherFirst;
        c.output_dir = PathBuf::from("runs/desk");
        c
    }

    /// Points every stochastic component at `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.blobs.seed = seed;
        if let Some(s) = self.data.second.as_mut() {
            s.seed = seed.wrapping_add(1);
        }
        self.tasks.seed = seed;
        self.pretrain.seed = seed;
        self.train.seed = seed;
        self.train.augmentation.seed = seed;
        self
    }

    pub fn amalgamation(&self) -> AmalgamationConfig {
        let t = &self.train;
        AmalgamationConfig {
            weights: LossWeights {
                lambda_intra: t.lambda_intra,
                lambda_inter: t.lambda_inter,
                lambda_align: t.lambda_a,
                lambda_std: t.lambda_d,
                margin: t.alpha,
                distill_temperature: t.distill_temperature,
                ..LossWeights::default()
            },
            metric: t.inter_metric,
            spatial_channels: t.spatial_channels,
            adam: AdamConfig {
                lr: t.lr,
                weight_decay: t.weight_decay,
                ..AdamConfig::default()
            },
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            reduction: t.reduction,
            kl_direction: t.kl_direction,
            teacher_view: t.teacher_view,
            target_mode: t.target_mode,
            freeze_adapters: t.freeze_adapters,
            grad_clip: t.grad_clip,
            augmentation: t.augmentation.clone(),
            adapter_width: self.model.adapter_width,
            common_width: self.model.common_width,
        }
    }

    /// Semantic checks the schema cannot express; errors carry the key path.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |path: &str, msg: String| Err(CliError::config(path, msg));
        match self.data.source {
            DataSource::Idx if self.data.idx.is_none() => return bad("data.idx", "source `idx` needs data.idx paths".into()),
            DataSource::CrossBlobs if self.data.second.is_none() => {
                return bad("data.second", "source `cross-blobs` needs a second generator".into())
            }
            _ => {}
        }
        if self.tasks.teacher_count == 0 {
            return bad("tasks.teacher_count", "must be at least 1".into());
        }
        if let Some(s) = &self.tasks.subsets {
            if s.len() != self.tasks.teacher_count {
                return bad(
                    "tasks.subsets",
                    format!("{} subsets for {} teachers", s.len(), self.tasks.teacher_count),
                );
            }
        }
        if self.model.teacher_widths.is_empty() || self.model.teacher_widths.iter().any(|w| w.is_empty()) {
            return bad("model.teacher_widths", "every teacher needs at least one hidden width".into());
        }
        if self.model.student_widths.is_empty() {
            return bad("model.student_widths", "needs at least one hidden width".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds", "needs at least one seed".into());
        }
        let t = &self.train;
        for (key, v) in [
            ("lambda_intra", t.lambda_intra),
            ("lambda_inter", t.lambda_inter),
            ("lambda_a", t.lambda_a),
            ("lambda_d", t.lambda_d),
            ("weight_decay", t.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("train.{key}"), format!("must be finite and non-negative, got {v}"));
            }
        }
        for (key, v) in [("lr", t.lr), ("distill_temperature", t.distill_temperature)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("train.{key}"), format!("must be positive, got {v}"));
            }
        }
        if !(-1.0..=1.0).contains(&t.alpha) {
            return bad("train.alpha", format!("similarity margin must lie in [-1, 1], got {}", t.alpha));
        }
        if t.batch_size < 2 {
            return bad("train.batch_size", "must be at least 2".into());
        }
        if t.epochs == 0 {
            return bad("train.epochs", "must be at least 1".into());
        }
        if let Err(e) = self.amalgamation().validate() {
            return bad("train", e.to_string());
        }
        Ok(())
    }
}

/// Sets `a.b.c` in a JSON tree, creating objects on the way. The value is
/// parsed as JSON when possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> CliResult<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(assignment, "override must look like key.path=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::config(path, "empty key in override path"));
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                return Err(CliError::config(keys[..i].join("."), "cannot set a field inside a non-object"));
            }
        }
        let map = node.as_object_mut().expect("object");
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

pub fn parse_config(mut tree: Value, overrides: &[String]) -> CliResult<RunConfig> {
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(tree).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(if path == "." { String::new() } else { path }, e.inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    let tree = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::config("", format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::config("", format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    parse_config(tree, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn empty_file_takes_every_default() {
        let c = parse_config(json!({}), &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.lr, 5e-4);
        assert_eq!(c.train.weight_decay, 5e-4);
        assert_eq!(c.train.alpha, 0.4);
        assert_eq!(c.train.lambda_a, 10.0);
        assert_eq!((c.train.batch_size, c.train.epochs), (64, 100));
        assert_eq!((c.model.adapter_width, c.model.common_width), (256, 128));
    }

    #[test]
    fn unknown_keys_report_their_path() {
        match parse_config(json!({"train": {"alpah": 0.3}}), &[]) {
            Err(CliError::Config { path, message }) => {
                assert_eq!(path, "train.alpah");
                assert!(message.contains("alpah"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        match parse_config(json!({"train": {"lr": "fast"}}), &[]) {
            Err(CliError::Config { path, .. }) => assert_eq!(path, "train.lr"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_apply_before_validation() {
        let c = parse_config(json!({}), &["train.alpha=0.3".into(), "train.inter_metric=cosine".into()]).unwrap();
        assert_eq!(c.train.alpha, 0.3);
        assert_eq!(c.train.inter_metric, Metric::Cosine);
        let e = parse_config(json!({}), &["tasks.teacher_count=0".into()]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_json_line().contains("tasks.teacher_count"));
        assert!(parse_config(json!({}), &["noequals".into()]).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::desk_preset().with_seed(3);
        let back = parse_config(serde_json::to_value(&c).unwrap(), &[]).unwrap();
        assert_eq!(back, c);
    }
}
