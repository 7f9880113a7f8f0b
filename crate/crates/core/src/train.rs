//! Patch-wise SGD training at one pyramid level with plateau-driven
//! learning-rate drops and best-validation checkpointing.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::dataset::sampler::{load_split, LoadedImage};
use crate::dataset::{
    image_to_tensor, patches_to_batch, ChannelStats, DatasetManifest, Patch, PatchSampler, SamplingMode, Split,
};
use crate::error::{FcnaError, Result};
use crate::eval::{argmax, mean_class_accuracy, per_class_accuracy, predict_image};
use crate::network::{Mode, ModelState, NetworkSpec};
use crate::ops::cross_entropy;
use crate::optim::{plateau_update, sgd_step, OptimConfig, OptimState, PlateauSignal};
use crate::rng::{derive_seed, stream, Purpose};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub scale: u32,
    pub batch_size: usize,
    /// Validation runs every this many steps and after the last step.
    pub steps_per_validation: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub optim: OptimConfig,
    pub sampling: SamplingMode,
    /// Mirror each patch left-right with probability 1/2.
    pub flip: bool,
}

impl TrainConfig {
    pub fn new(scale: u32) -> Self {
        TrainConfig {
            scale,
            batch_size: 32,
            steps_per_validation: 100,
            max_steps: 10_000,
            seed: 0,
            optim: OptimConfig::default(),
            sampling: SamplingMode::ClassUniform,
            flip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(FcnaError::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.steps_per_validation == 0 {
            return Err(FcnaError::InvalidConfig("steps per validation must be >= 1".into()));
        }
        self.optim.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxSteps,
    Plateau,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxSteps => "max_steps",
            StopReason::Plateau => "plateau",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationRow {
    pub step: usize,
    pub loss: f64,
    pub mca: f64,
    pub lr: f64,
    pub signal: PlateauSignal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    /// Training loss of every step, in order.
    pub step_losses: Vec<f64>,
    pub validations: Vec<ValidationRow>,
    pub stop: StopReason,
    /// Step whose weights were returned; 0 means the initial weights.
    pub best_step: usize,
}

impl TrainLog {
    /// CSV with columns `step,kind,loss,mca,lr,note`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,kind,loss,mca,lr,note\n");
        for (i, loss) in self.step_losses.iter().enumerate() {
            out.push_str(&format!("{},train,{loss:?},,,\n", i + 1));
        }
        for v in &self.validations {
            let note = match v.signal {
                PlateauSignal::Continue => "",
                PlateauSignal::DroppedLr => "lr_drop",
                PlateauSignal::Stop => "stop",
            };
            out.push_str(&format!("{},validation,{:?},{:?},{:?},{note}\n", v.step, v.loss, v.mca, v.lr));
        }
        out.push_str(&format!("{},end,,,,stop={} best_step={}\n", self.step_losses.len(), self.stop, self.best_step));
        let mut f = std::fs::File::create(path).map_err(|e| FcnaError::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| FcnaError::io(path, e))
    }
}

fn flip_horizontal(t: &Tensor) -> Tensor {
    let [c, h, w] = t.shape()[..] else { unreachable!("patches are rank 3") };
    Tensor::from_fn(&[c, h, w], |i| {
        let x = i % w;
        t.data()[i - x + (w - 1 - x)]
    })
}

/// Mean cross-entropy and mean class accuracy over preloaded whole images.
fn score_images(
    model: &ModelState,
    images: &[LoadedImage],
    num_classes: usize,
    stats: ChannelStats,
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let (mut labels, mut predicted) = (Vec::new(), Vec::new());
    for img in images {
        let probs = predict_image(model, &image_to_tensor(&img.image), stats)?;
        loss += cross_entropy(&probs.cast::<f64>(), &[img.class_label])?;
        labels.push(img.class_label);
        predicted.push(argmax(probs.data()));
    }
    let (acc, _) = per_class_accuracy(&labels, &predicted, num_classes)?;
    Ok((loss / images.len() as f64, mean_class_accuracy(&acc)))
}

/// Validation loss and mean class accuracy on whole images of one split.
pub fn validate(model: &ModelState, manifest: &DatasetManifest, split: Split, scale: u32) -> Result<(f64, f64)> {
    let images = load_split(manifest, split, scale)?;
    if images.is_empty() {
        return Err(FcnaError::Manifest(format!("split {split} is empty")));
    }
    score_images(model, &images, manifest.num_classes, manifest.channel_stats)
}

/// One SGD step on a fixed batch; returns the batch loss before the update.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut ModelState,
    state: &mut OptimState,
    cfg: &OptimConfig,
    batch: &Tensor,
    labels: &[usize],
    rng: &mut R,
) -> Result<f64> {
    let out = model.forward(batch, Mode::Train, rng)?;
    let loss = cross_entropy(&out.prediction, labels)? as f64;
    if !loss.is_finite() {
        return Err(FcnaError::Diverged(format!("training loss is {loss}")));
    }
    let grads = model.backward(&out.cache, labels)?;
    sgd_step(&mut model.params, &grads, state, cfg)?;
    Ok(loss)
}

/// Trains a fresh model on random crops of the train split at `cfg.scale` and
/// returns the weights with the lowest validation loss.
pub fn train(manifest: &DatasetManifest, spec: &NetworkSpec, cfg: &TrainConfig) -> Result<(ModelState, TrainLog)> {
    cfg.validate()?;
    spec.validate()?;
    if spec.num_classes != manifest.num_classes {
        return Err(FcnaError::InvalidConfig(format!(
            "network has {} classes, manifest has {}",
            spec.num_classes, manifest.num_classes
        )));
    }
    let crop = spec.train_crop;
    let min = spec.min_input_size()?;
    if crop < min {
        return Err(FcnaError::CropBelowMinimum { crop, min });
    }
    let sampler = PatchSampler::new(manifest, Split::Train, cfg.scale, cfg.sampling)?;
    sampler.check_crop(crop)?;
    let val_images = load_split(manifest, Split::Validation, cfg.scale)?;
    if val_images.is_empty() {
        return Err(FcnaError::Manifest("validation split is empty".into()));
    }
    for img in &val_images {
        spec.check_input(img.image.height() as usize, img.image.width() as usize)?;
    }

    let mut model = ModelState::init(spec.clone(), derive_seed(cfg.seed, Purpose::Init, cfg.scale as u64))?;
    model.scale = Some(cfg.scale);
    let mut log =
        TrainLog { step_losses: Vec::new(), validations: Vec::new(), stop: StopReason::MaxSteps, best_step: 0 };
    if cfg.max_steps == 0 {
        return Ok((model, log));
    }

    let mut state = OptimState::new(&model.params, &cfg.optim);
    let mut sampling_rng = stream(cfg.seed, Purpose::Sampling, cfg.scale as u64);
    let mut dropout_rng = stream(cfg.seed, Purpose::Dropout, cfg.scale as u64);
    let stats = manifest.channel_stats;
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;

    for step in 1..=cfg.max_steps {
        let patches = (0..cfg.batch_size)
            .map(|_| {
                let mut p = sampler.sample(crop, &mut sampling_rng)?;
                if cfg.flip && sampling_rng.gen_bool(0.5) {
                    p.pixels = flip_horizontal(&p.pixels);
                }
                Ok(p)
            })
            .collect::<Result<Vec<Patch>>>()?;
        let labels: Vec<usize> = patches.iter().map(|p| p.class_label).collect();
        let batch = patches_to_batch(&patches, stats)?;
        let loss = train_step(&mut model, &mut state, &cfg.optim, &batch, &labels, &mut dropout_rng)?;
        log.step_losses.push(loss);

        if step % cfg.steps_per_validation == 0 || step == cfg.max_steps {
            let (val_loss, mca) = score_images(&model, &val_images, manifest.num_classes, stats)?;
            let lr = state.current_lr;
            let signal = plateau_update(&mut state, &cfg.optim, val_loss)?;
            if val_loss < best_loss {
                best_loss = val_loss;
                best = model.clone();
                log.best_step = step;
            }
            log.validations.push(ValidationRow { step, loss: val_loss, mca, lr, signal });
            if signal == PlateauSignal::Stop {
                log.stop = StopReason::Plateau;
                break;
            }
        }
    }
    Ok((best, log))
}
