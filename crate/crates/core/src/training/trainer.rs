//! The toy self-supervised training loop.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::augment::{augment, AugmentSettings};
use super::metrics::{eigen_metrics, spearman, DepthMetrics, EvalSettings};
use super::optim::{cosine_lr, AdamW};
use super::synthetic::{Image, SceneSettings, SyntheticScene};
use crate::config::ModelConfig;
use crate::depth::{disp_to_depth, total_loss, CameraIntrinsics, LossInputs, LossSettings, Model, PoseBatch};
use crate::error::{arg_err, Error, Result};
use crate::io::checkpoint;
use crate::nn::Ctx;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// Held-out evaluation period in steps (0 disables periodic evaluation;
    /// the first and final evaluations always run).
    pub eval_every: usize,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    /// Seed of the scene set, kept apart from the training seed so different
    /// runs can share data.
    pub data_seed: u64,
    /// Seed of initialization, batch order, augmentation and dropout.
    pub seed: u64,
    pub scene: SceneSettings,
    pub augment: AugmentSettings,
    pub loss: LossSettings,
    pub eval: EvalSettings,
    pub checkpoint: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            batch_size: 4,
            base_lr: 1e-3,
            weight_decay: 0.01,
            eval_every: 100,
            train_scenes: 8,
            eval_scenes: 2,
            data_seed: 0,
            seed: 0,
            scene: SceneSettings::default(),
            augment: AugmentSettings::default(),
            loss: LossSettings::default(),
            eval: EvalSettings::default(),
            checkpoint: None,
            trace: None,
        }
    }
}

/// One training example: frames t−1, t, t+1 with the depth of frame t.
#[derive(Clone, Debug)]
pub struct Sample {
    pub frames: [Image; 3],
    pub depth: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
}

/// Rendered training and held-out samples.
pub struct Dataset {
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

impl Dataset {
    /// Scenes are drawn from one generator; the last `eval_scenes` are held out.
    pub fn build(data_seed: u64, train_scenes: usize, eval_scenes: usize, settings: &SceneSettings) -> Result<Self> {
        if train_scenes == 0 || eval_scenes == 0 {
            return Err(arg_err!("need at least one training and one held-out scene"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
        let mut samples = Vec::new();
        for _ in 0..train_scenes + eval_scenes {
            let scene = SyntheticScene::generate(rng.gen(), settings)?;
            let triplets = (1..scene.camera_track.len() - 1)
                .map(|t| {
                    let r = scene.render_triplet(t)?;
                    Ok(Sample { frames: [r.prev, r.current, r.next], depth: r.depth, intrinsics: scene.intrinsics })
                })
                .collect::<Result<Vec<_>>>()?;
            samples.push(triplets);
        }
        let eval = samples.split_off(train_scenes).into_iter().flatten().collect();
        Ok(Dataset { train: samples.into_iter().flatten().collect(), eval })
    }
}

pub fn stack_images<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
    let (h, w) = (images[0].height, images[0].width);
    if images.iter().any(|i| i.height != h || i.width != w) {
        return Err(crate::error::dim_err!("images in a batch must share one size"));
    }
    let data = images.iter().flat_map(|i| i.data.iter().map(|&v| T::c(v))).collect();
    Tensor::from_vec(&[images.len(), 3, h, w], data)
}

fn forward<T: Scalar>(
    model: &Model<T>,
    batch: &[Sample],
    ctx: &Ctx,
    settings: &LossSettings,
) -> Result<(crate::depth::LossReport<T>, Vec<Tensor<T>>)> {
    let frames: Vec<Tensor<T>> = (0..3)
        .map(|f| stack_images(&batch.iter().map(|s| &s.frames[f]).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let disparities = model.disparities(&frames[1], ctx)?;
    let motions = [model.motion(&frames[1], &frames[0], ctx)?, model.motion(&frames[1], &frames[2], ctx)?];
    for (what, t) in [("disparity", &disparities[0]), ("pose", &motions[0]), ("pose", &motions[1])] {
        if let Some(index) = t.data().iter().position(|v| !v.f64().is_finite()) {
            return Err(Error::Numeric { index, message: format!("non-finite {what} prediction") });
        }
    }
    let poses = [PoseBatch::from_vector(&motions[0])?, PoseBatch::from_vector(&motions[1])?];
    let intrinsics: Vec<CameraIntrinsics> = batch.iter().map(|s| s.intrinsics).collect();
    let sources = [frames[0].clone(), frames[2].clone()];
    let inputs = LossInputs { target: &frames[1], sources: &sources, poses: &poses, disparities: &disparities, intrinsics: &intrinsics };
    Ok((total_loss(&inputs, settings)?, disparities))
}

/// Held-out loss and depth quality in evaluation mode.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub total: f64,
    pub photometric: f64,
    pub smoothness: f64,
    pub mask_fraction: f64,
    /// Per-image metrics averaged over the held-out samples.
    pub metrics: DepthMetrics,
    /// Mean per-image rank correlation of predicted disparity with true inverse depth.
    pub spearman: f64,
}

pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[Sample], loss: &LossSettings, eval: &EvalSettings) -> Result<EvalReport> {
    let ctx = Ctx::eval();
    let n = samples.len() as f64;
    let (mut total, mut photometric, mut smoothness, mut mask_fraction, mut rho) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut metrics = [0.0; 7];
    for sample in samples {
        let (report, disparities) = forward(model, std::slice::from_ref(sample), &ctx, loss)?;
        total += report.total.item().f64() / n;
        photometric += report.photometric / n;
        smoothness += report.smoothness / n;
        mask_fraction += report.mask_fraction / n;
        let pred: Vec<f64> = disp_to_depth(&disparities[0], loss.min_depth, loss.max_depth)?.data().iter().map(|v| v.f64()).collect();
        let m = eigen_metrics(&pred, &sample.depth, eval)?;
        metrics.iter_mut().zip(m.as_array()).for_each(|(acc, v)| *acc += v / n);
        let disp: Vec<f64> = disparities[0].data().iter().map(|v| v.f64()).collect();
        let inverse: Vec<f64> = sample.depth.iter().map(|d| 1.0 / d).collect();
        rho += spearman(&disp, &inverse).unwrap_or(0.0) / n;
    }
    let [abs_rel, sq_rel, rmse, rmse_log, delta1, delta2, delta3] = metrics;
    Ok(EvalReport {
        total,
        photometric,
        smoothness,
        mask_fraction,
        metrics: DepthMetrics { abs_rel, sq_rel, rmse, rmse_log, delta1, delta2, delta3 },
        spearman: rho,
    })
}

/// Mean training objective over `samples` in consecutive batches, with batch
/// statistics for normalization, no dropout and no augmentation. This is the
/// quantity the optimizer descends, free of sampling noise. Normalization
/// running statistics are left as they were.
pub fn objective<T: Scalar>(model: &Model<T>, samples: &[Sample], batch_size: usize, loss: &LossSettings) -> Result<f64> {
    if samples.is_empty() || batch_size == 0 {
        return Err(arg_err!("objective needs samples and a positive batch size"));
    }
    let saved = model.store.snapshot();
    let ctx = Ctx::train_deterministic();
    let mut sum = 0.0;
    for chunk in samples.chunks(batch_size) {
        let (report, _) = forward(model, chunk, &ctx, loss)?;
        sum += report.total.item().f64() * chunk.len() as f64;
    }
    model.store.restore(&saved)?;
    Ok(sum / samples.len() as f64)
}

/// One CSV row. Evaluation columns are empty on steps without evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub photometric: f64,
    pub smoothness: f64,
    pub mask_fraction: f64,
    pub eval_total: Option<f64>,
    pub abs_rel: Option<f64>,
    pub sq_rel: Option<f64>,
    pub rmse: Option<f64>,
    pub rmse_log: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub delta3: Option<f64>,
    pub spearman: Option<f64>,
}

impl TraceRow {
    fn with_eval(mut self, e: &EvalReport) -> Self {
        let m = &e.metrics;
        self.eval_total = Some(e.total);
        (self.abs_rel, self.sq_rel, self.rmse, self.rmse_log) = (Some(m.abs_rel), Some(m.sq_rel), Some(m.rmse), Some(m.rmse_log));
        (self.delta1, self.delta2, self.delta3) = (Some(m.delta1), Some(m.delta2), Some(m.delta3));
        self.spearman = Some(e.spearman);
        self
    }
}

pub fn trace_to_csv(rows: &[TraceRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub struct TrainOutcome {
    /// Held-out objective before the first and after the last update.
    pub initial_objective: f64,
    pub final_objective: f64,
    pub initial: EvalReport,
    pub last: EvalReport,
    pub trace: Vec<TraceRow>,
}

fn blank_row(step: usize) -> TraceRow {
    TraceRow {
        step,
        lr: 0.0,
        total: f64::NAN,
        photometric: f64::NAN,
        smoothness: f64::NAN,
        mask_fraction: f64::NAN,
        eval_total: None,
        abs_rel: None,
        sq_rel: None,
        rmse: None,
        rmse_log: None,
        delta1: None,
        delta2: None,
        delta3: None,
        spearman: None,
    }
}

fn roll_back<T: Scalar>(model: &Model<T>, good: &[Vec<T>], config: &TrainConfig, step: usize, reason: &str) -> Error {
    let saved = model.store.restore(good).and_then(|_| match &config.checkpoint {
        Some(path) => checkpoint::save(path, &model.store),
        None => Ok(()),
    });
    match saved {
        Ok(()) => Error::Numeric { index: step, message: format!("{reason} at step {step}; parameters restored to the last finite step") },
        Err(e) => e,
    }
}

/// Trains `model` in place on `data`.
///
/// Each step draws a batch uniformly with replacement, augments it, runs the
/// depth and pose networks in training mode, and applies AdamW under the
/// cosine schedule. A non-finite loss restores the parameters of the last
/// good step, writes them to the checkpoint path if one is set, and returns a
/// numeric error naming the step.
pub fn train<T: Scalar>(model: &Model<T>, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    if config.batch_size == 0 || config.steps == 0 {
        return Err(arg_err!("batch size and step count must be positive"));
    }
    let mut optimizer = AdamW::new(&model.store, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let initial_objective = objective(model, &data.eval, config.batch_size, &config.loss)?;
    let initial = evaluate(model, &data.eval, &config.loss, &config.eval)?;
    let mut trace = Vec::with_capacity(config.steps + 1);
    let mut last_good = model.store.snapshot();
    for step in 0..config.steps {
        let lr = cosine_lr(step, config.steps, config.base_lr)?;
        let batch: Vec<Sample> = (0..config.batch_size)
            .map(|_| {
                let mut s = data.train[rng.gen_range(0..data.train.len())].clone();
                augment(&mut s.frames, &mut s.intrinsics, &config.augment, &mut rng);
                s
            })
            .collect();
        let ctx = Ctx::train(rng.gen());
        model.store.zero_grad();
        let outcome = match forward(model, &batch, &ctx, &config.loss) {
            Ok((report, _)) if report.total.item().f64().is_finite() => Ok(report),
            Ok((report, _)) => Err(format!("loss became {}", report.total.item().f64())),
            Err(Error::Numeric { message, .. }) => Err(message),
            Err(e) => return Err(e),
        };
        let report = match outcome {
            Ok(report) => report,
            Err(reason) => return Err(roll_back(model, &last_good, config, step, &reason)),
        };
        let total = report.total.item().f64();
        report.total.backward()?;
        optimizer.step(&model.store, lr)?;
        if model.store.params().iter().any(|p| p.tensor.data().iter().any(|v| !v.f64().is_finite())) {
            return Err(roll_back(model, &last_good, config, step, "update produced non-finite parameters"));
        }
        last_good = model.store.snapshot();
        let mut row = TraceRow {
            lr,
            total,
            photometric: report.photometric,
            smoothness: report.smoothness,
            mask_fraction: report.mask_fraction,
            ..blank_row(step)
        };
        if step == 0 {
            row = row.with_eval(&initial);
        } else if config.eval_every > 0 && step % config.eval_every == 0 {
            row = row.with_eval(&evaluate(model, &data.eval, &config.loss, &config.eval)?);
        }
        trace.push(row);
    }
    let final_objective = objective(model, &data.eval, config.batch_size, &config.loss)?;
    let last = evaluate(model, &data.eval, &config.loss, &config.eval)?;
    trace.push(blank_row(config.steps).with_eval(&last));
    if let Some(path) = &config.trace {
        std::fs::write(path, trace_to_csv(&trace)?)?;
    }
    if let Some(path) = &config.checkpoint {
        checkpoint::save(path, &model.store)?;
    }
    Ok(TrainOutcome { initial_objective, final_objective, initial, last, trace })
}

/// Builds the data and a fresh model, then trains.
pub fn train_from_scratch<T: Scalar>(model_config: &ModelConfig, config: &TrainConfig) -> Result<(Model<T>, TrainOutcome)> {
    let model_config = ModelConfig { seed: config.seed, ..model_config.clone() };
    let model = Model::new(&model_config)?;
    let data = Dataset::build(config.data_seed, config.train_scenes, config.eval_scenes, &config.scene)?;
    let outcome = train(&model, &data, config)?;
    Ok((model, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (ModelConfig, TrainConfig) {
        let model = ModelConfig { input_size: (32, 32), ..ModelConfig::toy() };
        let train = TrainConfig {
            steps: 3,
            batch_size: 2,
            eval_every: 2,
            train_scenes: 1,
            eval_scenes: 1,
            scene: SceneSettings { height: 32, width: 32, frames: 4, ..Default::default() },
            ..Default::default()
        };
        (model, train)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters_bit_identical() {
        let (mc, tc) = tiny();
        let tc = TrainConfig { base_lr: 0.0, ..tc };
        let model = Model::<f64>::new(&ModelConfig { seed: tc.seed, ..mc }).unwrap();
        let before: Vec<Vec<f64>> = model.store.params().iter().map(|p| p.tensor.to_vec()).collect();
        let data = Dataset::build(0, 1, 1, &tc.scene).unwrap();
        train(&model, &data, &tc).unwrap();
        let after: Vec<Vec<f64>> = model.store.params().iter().map(|p| p.tensor.to_vec()).collect();
        assert!(before.iter().zip(&after).all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())));
    }

    #[test]
    fn same_seed_same_trace() {
        let (mc, tc) = tiny();
        let a = trace_to_csv(&train_from_scratch::<f32>(&mc, &tc).unwrap().1.trace).unwrap();
        let b = trace_to_csv(&train_from_scratch::<f32>(&mc, &tc).unwrap().1.trace).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 1 + tc.steps + 1);
        assert!(a.starts_with("step,lr,total,photometric,smoothness,mask_fraction,eval_total,abs_rel"));
    }

    #[test]
    fn non_finite_loss_rolls_back_and_checkpoints() {
        let (mc, tc) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rollback.ckpt");
        let tc = TrainConfig { checkpoint: Some(path.clone()), ..tc };
        let model = Model::<f64>::new(&mc).unwrap();
        let mut data = Dataset::build(0, 1, 1, &tc.scene).unwrap();
        let good = model.store.snapshot();
        for s in &mut data.train {
            s.frames[1].data[5] = f64::NAN;
        }
        match train(&model, &data, &tc) {
            Err(Error::Numeric { index: 0, .. }) => {}
            other => panic!("expected a numeric error, got {:?}", other.map(|_| ())),
        }
        let params = model.store.params().len();
        assert_eq!(model.store.snapshot()[..params], good[..params]);
        let restored = Model::<f64>::new(&ModelConfig { seed: 99, ..mc }).unwrap();
        checkpoint::load(&path, &restored.store).unwrap();
        assert_eq!(restored.store.snapshot()[..params], good[..params]);
    }

    #[test]
    fn dataset_holds_out_whole_scenes() {
        let settings = SceneSettings { height: 16, width: 16, frames: 5, ..Default::default() };
        let d = Dataset::build(3, 2, 1, &settings).unwrap();
        assert_eq!((d.train.len(), d.eval.len()), (6, 3));
        assert!(d.train.iter().all(|s| s.depth.iter().all(|&z| z > 0.0)));
    }
}
