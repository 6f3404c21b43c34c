//! Flat `key = value` configuration files with `#` comments.
//!
//! Unknown keys are hard errors: a typo in an ablation config must fail
//! loudly rather than silently fall back to a default.

use std::collections::BTreeMap;
use std::path::Path;

use dtl_core::model::Task;
use dtl_core::repr::ReprKind;
use dtl_core::sim::SceneConfig;
use dtl_core::train::{Arm, TrainConfig};

use crate::error::{CliError, Result};

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::config(format!(
                "config line {}: expected `key = value`, got {raw:?}",
                idx + 1
            )));
        };
        let key = key.trim().to_string();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::config(format!(
                "config line {}: duplicate key {key}",
                idx + 1
            )));
        }
    }
    Ok(map)
}

pub fn read_kv_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    parse_kv(&text)
}

struct KvReader {
    map: BTreeMap<String, String>,
}

impl KvReader {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| CliError::config(format!("config key {key}: invalid value {raw:?}"))),
        }
    }

    fn finish(self, context: &str) -> Result<()> {
        if let Some(key) = self.map.keys().next() {
            return Err(CliError::config(format!(
                "unknown {context} config key: {key}"
            )));
        }
        Ok(())
    }
}

/// A train config file plus harness sizing knobs that are not part of the
/// model configuration proper.
#[derive(Debug, Clone)]
pub struct TrainFile {
    pub train: TrainConfig,
    pub train_samples: Option<usize>,
    pub test_samples: Option<usize>,
    pub teacher_epochs: usize,
    pub teacher_learning_rate: f64,
    pub teacher_batch_size: usize,
    pub teacher_samples: Option<usize>,
}

pub fn train_file_from_map(map: BTreeMap<String, String>, seed_override: Option<u64>) -> Result<TrainFile> {
    let mut kv = KvReader { map };
    let defaults = TrainConfig::default();

    let task = match kv.take("task").as_deref() {
        None | Some("segmentation") => Task::Segmentation,
        Some("depth") => Task::Depth,
        Some(other) => {
            return Err(CliError::config(format!(
                "config key task: expected segmentation|depth, got {other:?}"
            )))
        }
    };
    let representation = match kv.take("representation").as_deref() {
        None | Some("multichannel") => ReprKind::MultiChannel,
        Some("voxel") => ReprKind::VoxelGrid,
        Some("sixchannel") => ReprKind::SixChannel,
        Some(other) => {
            return Err(CliError::config(format!(
                "config key representation: expected multichannel|voxel|sixchannel, got {other:?}"
            )))
        }
    };
    let arm = match kv.take("arm") {
        None => Arm::Full,
        Some(raw) => Arm::parse(&raw).ok_or_else(|| {
            CliError::config(format!(
                "config key arm: expected ce|ce+eit|ce+eit+sc|ce+eit+fl|full, got {raw:?}"
            ))
        })?,
    };

    let file_seed = kv.parse("seed", defaults.seed)?;
    let train = TrainConfig {
        task,
        representation,
        arm,
        bins: kv.parse("bins", defaults.bins)?,
        window: kv.parse("window", defaults.window)?,
        lambdas: [
            kv.parse("lambda1", defaults.lambdas[0])?,
            kv.parse("lambda2", defaults.lambdas[1])?,
            kv.parse("lambda3", defaults.lambdas[2])?,
            kv.parse("lambda4", defaults.lambdas[3])?,
        ],
        learning_rate: kv.parse("learning_rate", defaults.learning_rate)?,
        weight_decay: kv.parse("weight_decay", defaults.weight_decay)?,
        epochs: kv.parse("epochs", defaults.epochs)?,
        batch_size: kv.parse("batch_size", defaults.batch_size)?,
        // the command line wins over the file value
        seed: seed_override.unwrap_or(file_seed),
        fl_stop_gradient: kv.parse("fl_stop_gradient", defaults.fl_stop_gradient)?,
    };

    let file = TrainFile {
        train_samples: optional_usize(&mut kv, "train_samples")?,
        test_samples: optional_usize(&mut kv, "test_samples")?,
        teacher_epochs: kv.parse("teacher_epochs", 4)?,
        teacher_learning_rate: kv.parse("teacher_learning_rate", 0.1)?,
        teacher_batch_size: kv.parse("teacher_batch_size", 4)?,
        teacher_samples: optional_usize(&mut kv, "teacher_samples")?,
        train,
    };
    kv.finish("train")?;
    Ok(file)
}

fn optional_usize(kv: &mut KvReader, key: &str) -> Result<Option<usize>> {
    match kv.take(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| CliError::config(format!("config key {key}: invalid value {raw:?}"))),
    }
}

pub fn load_train_file(path: &Path, seed_override: Option<u64>) -> Result<TrainFile> {
    train_file_from_map(read_kv_file(path)?, seed_override)
}

/// Scene config file for the simulator. The `window` key sets the sample
/// spacing that frames are rendered at.
#[derive(Debug, Clone)]
pub struct SceneFile {
    pub scene: SceneConfig,
    pub window: f64,
}

pub fn load_scene_file(path: &Path, seed_override: Option<u64>) -> Result<SceneFile> {
    let mut kv = KvReader {
        map: read_kv_file(path)?,
    };
    let defaults = SceneConfig::default();
    let file_seed = kv.parse("seed", defaults.seed)?;
    let scene = SceneConfig {
        seed: seed_override.unwrap_or(file_seed),
        width: kv.parse("width", defaults.width)?,
        height: kv.parse("height", defaults.height)?,
        shape_count: kv.parse("shape_count", defaults.shape_count)?,
        frame_rate: kv.parse("frame_rate", defaults.frame_rate)?,
        duration: kv.parse("duration", defaults.duration)?,
        contrast: kv.parse("contrast", defaults.contrast)?,
        background_gray: kv.parse("background_gray", defaults.background_gray)?,
        noise_amp: kv.parse("noise_amp", defaults.noise_amp)?,
        speed_scale: kv.parse("speed_scale", defaults.speed_scale)?,
    };
    let window = kv.parse("window", 0.05)?;
    kv.finish("scene")?;
    if window <= 0.0 || scene.duration <= 0.0 {
        return Err(CliError::config("window and duration must be positive"));
    }
    let ratio = scene.duration / window;
    if (ratio - ratio.round()).abs() > 1e-9 {
        return Err(CliError::config(format!(
            "window {window} must divide duration {}",
            scene.duration
        )));
    }
    Ok(SceneFile { scene, window })
}

/// Materialized `key = value` lines for manifests.
pub fn train_config_lines(file: &TrainFile) -> Vec<(String, String)> {
    let t = &file.train;
    let mut v = vec![
        ("task".into(), t.task.name().into()),
        ("representation".into(), t.representation.name().into()),
        ("bins".into(), t.bins.to_string()),
        ("window".into(), format!("{}", t.window)),
        ("lambda1".into(), format!("{}", t.lambdas[0])),
        ("lambda2".into(), format!("{}", t.lambdas[1])),
        ("lambda3".into(), format!("{}", t.lambdas[2])),
        ("lambda4".into(), format!("{}", t.lambdas[3])),
        ("learning_rate".into(), format!("{}", t.learning_rate)),
        ("weight_decay".into(), format!("{}", t.weight_decay)),
        ("epochs".into(), t.epochs.to_string()),
        ("batch_size".into(), t.batch_size.to_string()),
        ("fl_stop_gradient".into(), t.fl_stop_gradient.to_string()),
        ("arm".into(), t.arm.name().into()),
        ("teacher_epochs".into(), file.teacher_epochs.to_string()),
        (
            "teacher_learning_rate".into(),
            format!("{}", file.teacher_learning_rate),
        ),
        (
            "teacher_batch_size".into(),
            file.teacher_batch_size.to_string(),
        ),
    ];
    if let Some(n) = file.train_samples {
        v.push(("train_samples".into(), n.to_string()));
    }
    if let Some(n) = file.test_samples {
        v.push(("test_samples".into(), n.to_string()));
    }
    if let Some(n) = file.teacher_samples {
        v.push(("teacher_samples".into(), n.to_string()));
    }
    v
}

pub fn scene_config_lines(file: &SceneFile) -> Vec<(String, String)> {
    let s = &file.scene;
    vec![
        ("width".into(), s.width.to_string()),
        ("height".into(), s.height.to_string()),
        ("shape_count".into(), s.shape_count.to_string()),
        ("frame_rate".into(), format!("{}", s.frame_rate)),
        ("duration".into(), format!("{}", s.duration)),
        ("contrast".into(), format!("{}", s.contrast)),
        ("background_gray".into(), format!("{}", s.background_gray)),
        ("noise_amp".into(), format!("{}", s.noise_amp)),
        ("speed_scale".into(), format!("{}", s.speed_scale)),
        ("window".into(), format!("{}", file.window)),
    ]
}
