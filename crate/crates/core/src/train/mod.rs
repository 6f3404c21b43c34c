//! Optimization and evaluation: SGD over the combined objective, teacher
//! pretraining, the per-arm ablation runner, and checkpoint I/O.
//!
//! Training is a pure function of (seed, config, data): batch order,
//! weight init and every loss are drawn from named sub-streams of the run
//! seed, and all arithmetic is sequential f64, so checkpoints reproduce
//! bit-for-bit.

mod checkpoint;
mod metrics;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use metrics::{depth_metrics, miou, ConfusionMatrix, DepthMetrics, MetricError};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::autodiff::{no_grad, Tensor};
use crate::loss::{self, LossBreakdown, LossError};
use crate::model::{
    self, eel_decoder_forward, encoder_forward, eit_decoder_forward, init_params,
    student_manifest, teacher_forward, ModelError, ModelParams, Task,
};
use crate::repr::{embed, ReprKind};
use crate::rng;
use crate::sim::{make_dataset, DatasetSample, SceneConfig, SceneSpec, NUM_CLASSES};

/// Label value marking unsupervised pixels.
pub const IGNORE_LABEL: u8 = 255;

/// Which subset of the objective a run trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Ce,
    CeEit,
    CeEitSc,
    CeEitFl,
    Full,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::Ce, Arm::CeEit, Arm::CeEitSc, Arm::CeEitFl, Arm::Full];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Ce => "ce",
            Arm::CeEit => "ce+eit",
            Arm::CeEitSc => "ce+eit+sc",
            Arm::CeEitFl => "ce+eit+fl",
            Arm::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Arm> {
        Arm::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Does this arm train the translation branch?
    pub fn uses_eit(self) -> bool {
        !matches!(self, Arm::Ce)
    }

    pub fn uses_sc(self) -> bool {
        matches!(self, Arm::CeEitSc | Arm::Full)
    }

    pub fn uses_fl(self) -> bool {
        matches!(self, Arm::CeEitFl | Arm::Full)
    }

    pub fn uses_pl(self) -> bool {
        matches!(self, Arm::Full)
    }

    pub fn needs_teacher(self) -> bool {
        self.uses_sc() || self.uses_pl()
    }

    /// Zero the weights of the loss terms this arm does not train.
    pub fn mask_lambdas(self, base: [f64; 4]) -> [f64; 4] {
        [
            if self.uses_eit() { base[0] } else { 0.0 },
            if self.uses_sc() { base[1] } else { 0.0 },
            if self.uses_fl() { base[2] } else { 0.0 },
            if self.uses_pl() { base[3] } else { 0.0 },
        ]
    }
}

/// Full description of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub task: Task,
    pub representation: ReprKind,
    pub bins: usize,
    pub window: f64,
    pub lambdas: [f64; 4],
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub fl_stop_gradient: bool,
    pub arm: Arm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::Segmentation,
            representation: ReprKind::MultiChannel,
            bins: 4,
            window: 0.05,
            lambdas: [1.0, 1.0, 0.1, 1.0],
            learning_rate: 1e-3,
            weight_decay: 5e-6,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            fl_stop_gradient: false,
            arm: Arm::Full,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in parameter {path}")]
    NonFiniteGradient { path: String },
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("arm {0} requires a teacher checkpoint")]
    MissingTeacher(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset geometry {got:?} does not match {want:?}")]
    GeometryMismatch {
        want: (usize, usize),
        got: (usize, usize),
    },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Repr(#[from] crate::repr::ReprError),
    #[error(transparent)]
    Tensor(#[from] crate::autodiff::TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// One SGD step over every trainable parameter:
/// `w <- w - lr * (g + wd * w)`, gradients cleared afterwards. A non-finite
/// gradient aborts before any parameter is touched.
pub fn sgd_step(params: &ModelParams, lr: f64, weight_decay: f64) -> Result<()> {
    for (path, t) in params.iter() {
        if !t.requires_grad() {
            continue;
        }
        if let Some(g) = t.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGradient { path: path.clone() });
            }
        }
    }
    for (_, t) in params.iter() {
        t.apply_sgd(lr, weight_decay);
    }
    Ok(())
}

/// Task-level evaluation of a trained end-task model.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub miou: Option<f64>,
    pub accuracy: Option<f64>,
    pub per_class_iou: Vec<Option<f64>>,
    pub depth: Option<DepthMetrics>,
}

/// Evaluation plus the training trace of one run.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub task: Task,
    pub outcome: EvalOutcome,
    /// Mean loss breakdown per epoch.
    pub loss_curve: Vec<LossBreakdown>,
    pub wall_clock_secs: f64,
    pub seed: u64,
}

struct PreparedSample {
    input: Vec<f64>,
    labels: Vec<u8>,
    aps: Vec<f64>,
    depth: Vec<f64>,
    log_depth: Vec<f64>,
}

struct PreparedData {
    samples: Vec<PreparedSample>,
    height: usize,
    width: usize,
    c_in: usize,
}

fn prepare(config: &TrainConfig, data: &[DatasetSample]) -> Result<PreparedData> {
    let first = data.first().ok_or(TrainError::EmptyDataset)?;
    let (w, h) = (first.window.sensor_width, first.window.sensor_height);
    let c_in = config.representation.channels(config.bins);
    let mut samples = Vec::with_capacity(data.len());
    for s in data {
        if (s.window.sensor_width, s.window.sensor_height) != (w, h) {
            return Err(TrainError::GeometryMismatch {
                want: (w, h),
                got: (s.window.sensor_width, s.window.sensor_height),
            });
        }
        let tensor = embed(config.representation, &s.window, config.bins, h, w)?;
        samples.push(PreparedSample {
            input: tensor.data,
            labels: s.frame.labels.clone(),
            aps: s.frame.intensity.clone(),
            depth: s.frame.depth.clone(),
            log_depth: s.frame.depth.iter().map(|d| d.ln()).collect(),
        });
    }
    Ok(PreparedData {
        samples,
        height: h,
        width: w,
        c_in,
    })
}

fn head_channels(task: Task) -> usize {
    match task {
        Task::Segmentation => NUM_CLASSES,
        Task::Depth => 1,
    }
}

/// Supervision loss: pixel-wise cross-entropy for segmentation, mean
/// absolute log-depth difference for depth.
fn supervision_loss(
    task: Task,
    prediction: &Tensor,
    sample: &PreparedSample,
    shape: &[usize],
) -> Result<Tensor> {
    match task {
        Task::Segmentation => Ok(loss::cross_entropy(prediction, &sample.labels, IGNORE_LABEL)?),
        Task::Depth => {
            let target = Tensor::constant(shape, sample.log_depth.clone());
            Ok(prediction
                .log_eps(loss::LOG_EPS)
                .sub(&target)?
                .abs()
                .mean())
        }
    }
}

/// Forward pass and combined loss of one sample under one arm.
fn sample_loss(
    config: &TrainConfig,
    params: &ModelParams,
    teacher: Option<&ModelParams>,
    teacher_on_frame: Option<&Tensor>,
    sample: &PreparedSample,
    dims: (usize, usize, usize),
) -> Result<(Tensor, LossBreakdown)> {
    let (c_in, h, w) = dims;
    let arm = config.arm;
    let lambdas = arm.mask_lambdas(config.lambdas);
    let zero = Tensor::scalar(0.0);

    let input = Tensor::constant(&[c_in, h, w], sample.input.clone());
    let latent = encoder_forward(params, &input)?;
    let eel = eel_decoder_forward(params, &latent, config.task)?;
    let image_shape = [1usize, h, w];
    let ce = supervision_loss(config.task, &eel.prediction, sample, &image_shape)?;

    let mut eit_loss = zero.clone();
    let mut sc_loss = zero.clone();
    let mut fl_loss = zero.clone();
    let mut pl_loss = zero.clone();

    let eit_out = if arm.uses_eit() {
        let out = eit_decoder_forward(params, &eel.penultimate)?;
        let target = Tensor::constant(&image_shape, sample.aps.clone());
        eit_loss = loss::eit_reconstruction(&out.image, &target)?;
        Some((out, target))
    } else {
        None
    };

    if arm.uses_sc() {
        let (eit, target) = eit_out.as_ref().expect("sc arms include eit");
        let teacher = teacher.ok_or(TrainError::MissingTeacher(arm.name()))?;
        let on_generated = teacher_forward(teacher, &eit.image, config.task)?;
        let on_frame = match teacher_on_frame {
            Some(t) => t.clone(),
            None => no_grad(|| teacher_forward(teacher, target, config.task))?,
        };
        sc_loss = match config.task {
            Task::Segmentation => loss::semantic_consistency(&on_generated, &on_frame)?,
            Task::Depth => loss::semantic_consistency_depth(&on_generated, &on_frame)?,
        };
    }

    if arm.uses_fl() {
        let (eit, _) = eit_out.as_ref().expect("fl arms include eit");
        let eit_features = if config.fl_stop_gradient {
            eit.penultimate.detach()
        } else {
            eit.penultimate.clone()
        };
        let graph_eit = loss::affinity_graph(&eit_features, loss::SIGMA)?;
        let graph_eel = loss::affinity_graph(&eel.penultimate, loss::SIGMA)?;
        fl_loss = loss::feature_transfer(&graph_eit, &graph_eel)?;
    }

    if arm.uses_pl() {
        let teacher_probs = teacher_on_frame.expect("pl arms cache the teacher output");
        pl_loss = match config.task {
            Task::Segmentation => loss::prediction_transfer(&eel.prediction, teacher_probs)?,
            Task::Depth => loss::prediction_transfer_depth(&eel.prediction, teacher_probs)?,
        };
    }

    let (total, breakdown) = loss::total_loss(&ce, &eit_loss, &sc_loss, &fl_loss, &pl_loss, lambdas)
        .map_err(|e| match e {
            LossError::NonFinite { name, value } => {
                TrainError::Divergence(format!("loss term {name} became {value}"))
            }
            other => TrainError::Loss(other),
        })?;
    Ok((total, breakdown))
}

/// Evaluate the end-task branch on a dataset. Only encoder and end-task
/// decoder parameters are read; translation and teacher weights never
/// affect the outputs.
pub fn evaluate(
    params: &ModelParams,
    config: &TrainConfig,
    data: &[DatasetSample],
) -> Result<EvalOutcome> {
    let prepared = prepare(config, data)?;
    let (h, w) = (prepared.height, prepared.width);
    match config.task {
        Task::Segmentation => {
            let mut cm = ConfusionMatrix::new(NUM_CLASSES)?;
            for sample in &prepared.samples {
                let pred = predict_labels(params, config, sample, (prepared.c_in, h, w))?;
                cm.record(&pred, &sample.labels, IGNORE_LABEL)?;
            }
            let (per_class, miou, accuracy) = cm.summarize();
            Ok(EvalOutcome {
                miou: Some(miou),
                accuracy: Some(accuracy),
                per_class_iou: per_class,
                depth: None,
            })
        }
        Task::Depth => {
            let mut preds = Vec::new();
            let mut gts = Vec::new();
            for sample in &prepared.samples {
                let depth = predict_depth(params, config, sample, (prepared.c_in, h, w))?;
                preds.extend_from_slice(&depth);
                gts.extend_from_slice(&sample.depth);
            }
            Ok(EvalOutcome {
                miou: None,
                accuracy: None,
                per_class_iou: Vec::new(),
                depth: Some(depth_metrics(&preds, &gts)?),
            })
        }
    }
}

fn forward_prediction(
    params: &ModelParams,
    config: &TrainConfig,
    sample: &PreparedSample,
    dims: (usize, usize, usize),
) -> Result<Vec<f64>> {
    let (c_in, h, w) = dims;
    no_grad(|| -> Result<Vec<f64>> {
        let input = Tensor::constant(&[c_in, h, w], sample.input.clone());
        let latent = encoder_forward(params, &input)?;
        let eel = eel_decoder_forward(params, &latent, config.task)?;
        Ok(eel.prediction.values())
    })
}

fn predict_labels(
    params: &ModelParams,
    config: &TrainConfig,
    sample: &PreparedSample,
    dims: (usize, usize, usize),
) -> Result<Vec<u8>> {
    let logits = forward_prediction(params, config, sample, dims)?;
    let (h, w) = (dims.1, dims.2);
    let pixels = h * w;
    let mut out = vec![0u8; pixels];
    for pix in 0..pixels {
        let mut best = 0usize;
        let mut best_v = logits[pix];
        for k in 1..NUM_CLASSES {
            let v = logits[k * pixels + pix];
            if v > best_v {
                best_v = v;
                best = k;
            }
        }
        out[pix] = best as u8;
    }
    Ok(out)
}

fn predict_depth(
    params: &ModelParams,
    config: &TrainConfig,
    sample: &PreparedSample,
    dims: (usize, usize, usize),
) -> Result<Vec<f64>> {
    forward_prediction(params, config, sample, dims)
}

/// Train the frozen teacher on clean frames (not events): the same
/// backbone with a single input channel, supervised by the end-task loss.
/// Returns the frozen parameters and the held-out score (MIoU for
/// segmentation, negated AbsRel for depth — higher is better for both).
pub fn train_teacher(
    config: &TrainConfig,
    data: &[DatasetSample],
) -> Result<(ModelParams, f64)> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (w, h) = (data[0].window.sensor_width, data[0].window.sensor_height);
    let head = head_channels(config.task);
    let params = init_params(
        &model::teacher_manifest(head),
        rng::sub_seed(config.seed, "teacher-init"),
    );

    // hold out every fifth frame
    let train_idx: Vec<usize> = (0..data.len()).filter(|i| i % 5 != 0).collect();
    let held_out: Vec<usize> = (0..data.len()).filter(|i| i % 5 == 0).collect();

    let prepared: Vec<PreparedSample> = data
        .iter()
        .map(|s| PreparedSample {
            input: s.frame.intensity.clone(),
            labels: s.frame.labels.clone(),
            aps: s.frame.intensity.clone(),
            depth: s.frame.depth.clone(),
            log_depth: s.frame.depth.iter().map(|d| d.ln()).collect(),
        })
        .collect();

    let mut order_rng = rng::stream(config.seed, "teacher-batches");
    let image_shape = [1usize, h, w];
    for _ in 0..config.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut order_rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            for &i in batch {
                let sample = &prepared[i];
                let input = Tensor::constant(&image_shape, sample.input.clone());
                let latent = encoder_forward(&params, &input)?;
                let eel = eel_decoder_forward(&params, &latent, config.task)?;
                let sup = supervision_loss(config.task, &eel.prediction, sample, &image_shape)?;
                if !sup.item().is_finite() {
                    return Err(TrainError::Divergence(format!(
                        "teacher loss became {}",
                        sup.item()
                    )));
                }
                sup.mul_scalar(1.0 / batch.len() as f64).backward()?;
            }
            sgd_step(&params, config.learning_rate, config.weight_decay)?;
        }
    }

    // held-out score with the teacher's own input pipeline
    let score = match config.task {
        Task::Segmentation => {
            let mut cm = ConfusionMatrix::new(NUM_CLASSES)?;
            for &i in &held_out {
                let sample = &prepared[i];
                let logits = no_grad(|| -> Result<Vec<f64>> {
                    let input = Tensor::constant(&image_shape, sample.input.clone());
                    let latent = encoder_forward(&params, &input)?;
                    Ok(eel_decoder_forward(&params, &latent, config.task)?
                        .prediction
                        .values())
                })?;
                let pixels = h * w;
                let mut pred = vec![0u8; pixels];
                for pix in 0..pixels {
                    let mut best = 0usize;
                    for k in 1..NUM_CLASSES {
                        if logits[k * pixels + pix] > logits[best * pixels + pix] {
                            best = k;
                        }
                    }
                    pred[pix] = best as u8;
                }
                cm.record(&pred, &sample.labels, IGNORE_LABEL)?;
            }
            cm.summarize().1
        }
        Task::Depth => {
            let mut preds = Vec::new();
            let mut gts = Vec::new();
            for &i in &held_out {
                let sample = &prepared[i];
                let depth = no_grad(|| -> Result<Vec<f64>> {
                    let input = Tensor::constant(&image_shape, sample.input.clone());
                    let latent = encoder_forward(&params, &input)?;
                    Ok(eel_decoder_forward(&params, &latent, config.task)?
                        .prediction
                        .values())
                })?;
                preds.extend_from_slice(&depth);
                gts.extend_from_slice(&sample.depth);
            }
            -depth_metrics(&preds, &gts)?.abs_rel
        }
    };

    Ok((params.frozen_clone(), score))
}

/// Train the student under the configured arm. The teacher is required by
/// arms using consistency or prediction transfer. Evaluation runs with the
/// translation decoder and teacher fully detached.
pub fn train_dtl(
    config: &TrainConfig,
    train_data: &[DatasetSample],
    test_data: &[DatasetSample],
    teacher: Option<&ModelParams>,
) -> Result<(ModelParams, EvalReport)> {
    let start = std::time::Instant::now();
    if config.arm.needs_teacher() && teacher.is_none() {
        return Err(TrainError::MissingTeacher(config.arm.name()));
    }
    let prepared = prepare(config, train_data)?;
    let (c_in, h, w) = (prepared.c_in, prepared.height, prepared.width);
    let head = head_channels(config.task);
    let params = init_params(
        &student_manifest(c_in, head),
        rng::sub_seed(config.seed, "student-init"),
    );

    // teacher outputs on real frames are constant; compute them once
    let teacher_on_frame: Vec<Option<Tensor>> = if config.arm.uses_sc() || config.arm.uses_pl() {
        let teacher = teacher.expect("checked above");
        prepared
            .samples
            .iter()
            .map(|s| {
                let frame = Tensor::constant(&[1, h, w], s.aps.clone());
                no_grad(|| teacher_forward(teacher, &frame, config.task))
                    .map(Some)
                    .map_err(TrainError::from)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; prepared.samples.len()]
    };

    let mut order_rng = rng::stream(config.seed, "batches");
    let mut loss_curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut order: Vec<usize> = (0..prepared.samples.len()).collect();
        order.shuffle(&mut order_rng);
        let mut epoch_sum = LossBreakdown::zero(config.arm.mask_lambdas(config.lambdas));
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut batch_sum = LossBreakdown::zero(epoch_sum.lambdas);
            for &i in batch {
                let (total, breakdown) = sample_loss(
                    config,
                    &params,
                    teacher,
                    teacher_on_frame[i].as_ref(),
                    &prepared.samples[i],
                    (c_in, h, w),
                )?;
                total.mul_scalar(1.0 / batch.len() as f64).backward()?;
                batch_sum.add_assign(&breakdown);
            }
            batch_sum.scale(1.0 / batch.len() as f64);
            epoch_sum.add_assign(&batch_sum);
            batches += 1;
            sgd_step(&params, config.learning_rate, config.weight_decay)?;
        }
        epoch_sum.scale(1.0 / batches.max(1) as f64);
        loss_curve.push(epoch_sum);
    }

    let outcome = evaluate(&params, config, test_data)?;
    let report = EvalReport {
        task: config.task,
        outcome,
        loss_curve,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        seed: config.seed,
    };
    Ok((params, report))
}

/// A single ablation measurement.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub arm: Arm,
    pub seed: u64,
    pub miou: f64,
    pub accuracy: f64,
}

/// All rows of an ablation plus per-arm means.
#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub arm_means: Vec<(Arm, f64, f64)>,
}

impl AblationTable {
    pub fn mean_miou(&self, arm: Arm) -> f64 {
        self.arm_means
            .iter()
            .find(|(a, _, _)| *a == arm)
            .map(|(_, m, _)| *m)
            .expect("arm present")
    }

    /// Machine-readable rows: `arm,seed,miou,accuracy`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("arm,seed,miou,accuracy\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                r.arm.name(),
                r.seed,
                r.miou,
                r.accuracy
            ));
        }
        s
    }

    pub fn means_csv(&self) -> String {
        let mut s = String::from("arm,mean_miou,mean_accuracy\n");
        for (arm, m, a) in &self.arm_means {
            s.push_str(&format!("{},{:.6},{:.6}\n", arm.name(), m, a));
        }
        s
    }
}

/// Dataset sizing for ablation runs: deterministic, evenly spaced
/// subsampling of the scene's windows, plus the teacher's own budget.
#[derive(Debug, Clone)]
pub struct AblationOptions {
    pub train_samples: Option<usize>,
    pub test_samples: Option<usize>,
    pub teacher_epochs: usize,
    pub teacher_lr: f64,
    pub teacher_batch: usize,
}

impl Default for AblationOptions {
    fn default() -> Self {
        AblationOptions {
            train_samples: None,
            test_samples: None,
            teacher_epochs: 2,
            teacher_lr: 0.05,
            teacher_batch: 8,
        }
    }
}

/// Evenly spaced deterministic subsample.
pub fn subsample(data: &[DatasetSample], target: Option<usize>) -> Vec<DatasetSample> {
    match target {
        Some(n) if n < data.len() && n > 0 => (0..n)
            .map(|i| data[i * data.len() / n].clone())
            .collect(),
        _ => data.to_vec(),
    }
}

/// The default scene pair for a run seed: 60 s of training content and
/// 10 s of test content from disjoint sub-seeds.
pub fn default_scene_pair(seed: u64) -> (SceneSpec, SceneSpec) {
    let train = SceneSpec::generate(SceneConfig {
        seed: rng::sub_seed(seed, "scene-train"),
        ..SceneConfig::default()
    });
    let test = SceneSpec::generate(SceneConfig {
        seed: rng::sub_seed(seed, "scene-test"),
        duration: 10.0,
        ..SceneConfig::default()
    });
    (train, test)
}

/// Train all five arms for every seed on the default synthetic
/// segmentation task and tabulate MIoU/accuracy. The teacher is trained
/// once per seed and shared by the arms that need it.
pub fn run_ablation(
    base: &TrainConfig,
    seeds: &[u64],
    options: &AblationOptions,
) -> Result<AblationTable> {
    if base.task != Task::Segmentation {
        return Err(TrainError::Unsupported(
            "the ablation table is defined for the segmentation task".into(),
        ));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        let (train_scene, test_scene) = default_scene_pair(seed);
        let train_full = make_dataset(&train_scene, base.window);
        let test_full = make_dataset(&test_scene, base.window);
        let train_data = subsample(&train_full, options.train_samples);
        let test_data = subsample(&test_full, options.test_samples);
        drop(train_full);
        drop(test_full);

        let teacher_config = TrainConfig {
            seed,
            epochs: options.teacher_epochs,
            learning_rate: options.teacher_lr,
            batch_size: options.teacher_batch,
            ..base.clone()
        };
        let (teacher, _) = train_teacher(&teacher_config, &train_data)?;

        for arm in Arm::ALL {
            let config = TrainConfig {
                arm,
                seed,
                ..base.clone()
            };
            let teacher_ref = arm.needs_teacher().then_some(&teacher);
            let (_, report) = train_dtl(&config, &train_data, &test_data, teacher_ref)?;
            rows.push(AblationRow {
                arm,
                seed,
                miou: report.outcome.miou.expect("segmentation"),
                accuracy: report.outcome.accuracy.expect("segmentation"),
            });
        }
    }

    let arm_means = Arm::ALL
        .into_iter()
        .map(|arm| {
            let of_arm: Vec<&AblationRow> = rows.iter().filter(|r| r.arm == arm).collect();
            let n = of_arm.len() as f64;
            (
                arm,
                of_arm.iter().map(|r| r.miou).sum::<f64>() / n,
                of_arm.iter().map(|r| r.accuracy).sum::<f64>() / n,
            )
        })
        .collect();
    Ok(AblationTable { rows, arm_means })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scene(seed: u64, duration: f64) -> SceneSpec {
        SceneSpec::generate(SceneConfig {
            seed,
            width: 16,
            height: 16,
            duration,
            ..SceneConfig::default()
        })
    }

    fn tiny_config(arm: Arm) -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 0.02,
            arm,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn ce_arm_reports_zero_auxiliary_losses() {
        let data = make_dataset(&tiny_scene(1, 0.5), 0.05);
        let (_, report) = train_dtl(&tiny_config(Arm::Ce), &data, &data, None).unwrap();
        for epoch in &report.loss_curve {
            assert_eq!(epoch.eit, 0.0);
            assert_eq!(epoch.sc, 0.0);
            assert_eq!(epoch.fl, 0.0);
            assert_eq!(epoch.pl, 0.0);
            assert!(epoch.ce > 0.0);
            assert!(epoch.total.is_finite());
        }
    }

    #[test]
    fn sc_and_pl_arms_require_a_teacher() {
        let data = make_dataset(&tiny_scene(2, 0.25), 0.05);
        for arm in [Arm::CeEitSc, Arm::Full] {
            assert!(matches!(
                train_dtl(&tiny_config(arm), &data, &data, None),
                Err(TrainError::MissingTeacher(_))
            ));
        }
        // fl needs no teacher
        assert!(train_dtl(&tiny_config(Arm::CeEitFl), &data, &data, None).is_ok());
    }

    #[test]
    fn training_is_bit_deterministic() {
        let data = make_dataset(&tiny_scene(3, 0.25), 0.05);
        let config = tiny_config(Arm::CeEit);
        let (p1, _) = train_dtl(&config, &data, &data, None).unwrap();
        let (p2, _) = train_dtl(&config, &data, &data, None).unwrap();
        for (name, t) in p1.iter() {
            let a: Vec<u64> = t.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = p2.get(name).unwrap().values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "parameter {name}");
        }
    }

    #[test]
    fn full_arm_trains_and_reports_finite_losses() {
        let data = make_dataset(&tiny_scene(4, 0.5), 0.05);
        let teacher_cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let (teacher, _) = train_teacher(&teacher_cfg, &data).unwrap();
        let (_, report) = train_dtl(&tiny_config(Arm::Full), &data, &data, Some(&teacher)).unwrap();
        for epoch in &report.loss_curve {
            assert!(epoch.total.is_finite());
            assert!(epoch.eit > 0.0);
            assert!(epoch.pl >= 0.0);
        }
        assert!(report.outcome.miou.is_some());
    }

    #[test]
    fn zero_epoch_training_returns_the_initialization() {
        let data = make_dataset(&tiny_scene(5, 0.25), 0.05);
        let config = TrainConfig {
            epochs: 0,
            ..tiny_config(Arm::Ce)
        };
        let (params, _) = train_dtl(&config, &data, &data, None).unwrap();
        let fresh = init_params(
            &student_manifest(8, NUM_CLASSES),
            rng::sub_seed(config.seed, "student-init"),
        );
        for (name, t) in fresh.iter() {
            assert_eq!(params.get(name).unwrap().values(), t.values(), "{name}");
        }
    }

    #[test]
    fn evaluation_ignores_translation_parameters() {
        let data = make_dataset(&tiny_scene(6, 0.25), 0.05);
        let config = tiny_config(Arm::CeEit);
        let (params, _) = train_dtl(&config, &data, &data, None).unwrap();
        let with = evaluate(&params, &config, &data).unwrap();
        let mut stripped = params.trainable_clone();
        stripped.remove_prefix("eit.");
        let without = evaluate(&stripped, &config, &data).unwrap();
        assert_eq!(with.miou.unwrap().to_bits(), without.miou.unwrap().to_bits());
        assert_eq!(
            with.accuracy.unwrap().to_bits(),
            without.accuracy.unwrap().to_bits()
        );
    }

    #[test]
    fn depth_task_trains_and_evaluates() {
        let data = make_dataset(&tiny_scene(7, 0.25), 0.05);
        let config = TrainConfig {
            task: Task::Depth,
            ..tiny_config(Arm::Ce)
        };
        let (_, report) = train_dtl(&config, &data, &data, None).unwrap();
        let depth = report.outcome.depth.unwrap();
        assert!(depth.abs_rel.is_finite() && depth.abs_rel >= 0.0);
    }

    #[test]
    fn ablation_runner_emits_all_rows() {
        // shrunk far below defaults to stay fast: structure only
        let base = TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 0.02,
            ..TrainConfig::default()
        };
        let options = AblationOptions {
            train_samples: Some(6),
            test_samples: Some(4),
            teacher_epochs: 1,
            ..AblationOptions::default()
        };
        let table = run_ablation(&base, &[0, 1, 2], &options).unwrap();
        assert_eq!(table.rows.len(), 15);
        assert_eq!(table.arm_means.len(), 5);
        let csv = table.to_csv();
        assert!(csv.starts_with("arm,seed,miou,accuracy\n"));
        assert_eq!(csv.lines().count(), 16);

        // the ce arm rows match standalone runs with the same seeds
        let (train_scene, test_scene) = default_scene_pair(1);
        let train_data = subsample(&make_dataset(&train_scene, base.window), Some(6));
        let test_data = subsample(&make_dataset(&test_scene, base.window), Some(4));
        let config = TrainConfig {
            arm: Arm::Ce,
            seed: 1,
            ..base.clone()
        };
        let (_, report) = train_dtl(&config, &train_data, &test_data, None).unwrap();
        let row = table
            .rows
            .iter()
            .find(|r| r.arm == Arm::Ce && r.seed == 1)
            .unwrap();
        assert_eq!(row.miou.to_bits(), report.outcome.miou.unwrap().to_bits());
    }

    #[test]
    fn ablation_rejects_depth_task() {
        let base = TrainConfig {
            task: Task::Depth,
            ..TrainConfig::default()
        };
        assert!(matches!(
            run_ablation(&base, &[0, 1, 2], &AblationOptions::default()),
            Err(TrainError::Unsupported(_))
        ));
    }
}
