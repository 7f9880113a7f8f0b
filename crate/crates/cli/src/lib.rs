//! Argument parsing, configuration merging and the pipeline commands behind
//! the `fcna` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use fcna_core::dataset::synth::{load_cues, synth_generate, SynthConfig};
use fcna_core::dataset::{
    build_manifest, image_to_tensor, load_rgb, normalize_image, DatasetManifest, IngestConfig, SamplingMode, Split,
    SplitRatios,
};
use fcna_core::eval::{argmax, evaluate_scale, predict_image, CorrelationMethod};
use fcna_core::network::{load_checkpoint, save_checkpoint};
use fcna_core::optim::OptimConfig;
use fcna_core::report::EvalReport;
use fcna_core::saliency::{guided_backprop_with, overlay_file_name, render_overlay, ChannelReduction, SaliencySeed};
use fcna_core::train::{train, TrainConfig};
use fcna_core::{desk_preset, table1_preset, FcnaError, ModelState, NetworkSpec};

pub mod error;

pub use error::{CliError, ErrorKind};

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  success
  1  internal error
  2  invalid arguments or configuration
  3  missing input (dataset, checkpoint, report)
  4  dimension error (input smaller than the network or the crop)
  5  file or image I/O error
  6  training diverged
  7  checkpoint unreadable or inconsistent with the requested spec/scale
  8  dataset or evaluation error

Errors are printed as one line: `error[<kind>]: <message>`.

Configuration files (--config) are TOML with one `key = value` per flag,
using underscores for dashes, e.g. `max_steps = 500` or `scales = [64, 256]`.
Unknown keys are rejected. Flags override file values.

Randomness: every draw derives from --seed. Each consumer opens a separate
ChaCha8 stream selected by a purpose tag and an index (the scale, for
per-scale training), so changing one stage never perturbs another.

FCNA_THREADS caps the number of worker threads.";

#[derive(Parser, Debug)]
#[command(name = "fcna", version, about = "Multi-scale fully convolutional attribution experiments", after_help = EXIT_CODES_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic multi-scale dataset with planted cues.
    Synth(Opts),
    /// Build a manifest and pyramid from `<data>/<class>/*.png`.
    Ingest(Opts),
    /// Train one model per scale; writes `model_<scale>.fcna` and `train_<scale>.csv`.
    Train(Opts),
    /// Evaluate per-scale checkpoints on the test split; writes `report.txt`.
    Eval(Opts),
    /// Write guided-backpropagation overlays for test images.
    Visualize(Opts),
    /// Print the summary table of a stored report.
    Report(Opts),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Table1,
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Class,
    Image,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pearson,
    Spearman,
}

/// Saliency target: the predicted class, the true class, or every class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Predicted,
    True,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    MaxAbs,
    SumAbs,
}

/// Every option of every command. Options a command does not use are ignored.
#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Opts {
    /// TOML file with default values for any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset directory (image tree for `ingest`, manifest directory otherwise).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (dataset for `synth`/`ingest`, run directory otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Single scale (long-side pixels).
    #[arg(long)]
    pub scale: Option<u32>,
    /// Comma-separated scales.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<u32>>,
    /// Network preset.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Number of classes (synth; checked against the manifest elsewhere).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Synthetic images per class.
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Training crop side.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Width multiplier for the desk preset.
    #[arg(long)]
    pub width: Option<f64>,
    /// Patches per SGD step.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Non-improving validations before a learning-rate drop.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Learning-rate divisor at each drop.
    #[arg(long)]
    pub lr_drop_factor: Option<f64>,
    /// Drops allowed before a plateau stops training.
    #[arg(long)]
    pub max_drops: Option<usize>,
    /// Smallest validation-loss decrease that counts as improvement.
    #[arg(long)]
    pub min_delta: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Steps between validations.
    #[arg(long)]
    pub val_every: Option<usize>,
    /// Patch sampling: class-uniform or image-uniform.
    #[arg(long, value_enum)]
    pub sampling: Option<Sampling>,
    /// Random left-right mirroring of training patches.
    #[arg(long)]
    pub flip: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated train,validation,test fractions.
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<f64>>,
    /// Smallest class accepted by `ingest`.
    #[arg(long)]
    pub min_per_class: Option<usize>,
    /// Slope threshold for the Invariant trend label.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Correlation of per-class accuracies across scales.
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Evaluate the single checkpoint of this scale at every scale.
    #[arg(long)]
    pub model_scale: Option<u32>,
    /// Test images per class to visualize.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Class whose evidence is visualized.
    #[arg(long, value_enum)]
    pub target: Option<Target>,
    /// Per-pixel combination of the channel gradients.
    #[arg(long, value_enum)]
    pub reduction: Option<Reduction>,
    /// Start the backward pass at one class-map cell `ROW,COL` instead of the pooled score.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub location: Option<Vec<usize>>,
    /// Report file for `report` (default `<out>/report.txt`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

macro_rules! merge_fields {
    ($flags:expr, $file:expr, $($f:ident),*) => {
        Opts { config: $flags.config.clone(), $($f: $flags.$f.clone().or($file.$f.clone()),)* }
    };
}

impl Opts {
    /// Flag values, falling back to the `--config` file.
    pub fn merged(&self) -> Result<Opts, CliError> {
        let Some(path) = &self.config else {
            return Ok(self.clone());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::from(FcnaError::Io { path: path.clone(), source: e }))?;
        let file: Opts = toml::from_str(&text)
            .map_err(|e| CliError::new(ErrorKind::Config, format!("{}: {}", path.display(), e.message())))?;
        Ok(merge_fields!(
            self,
            file,
            data,
            out,
            scale,
            scales,
            preset,
            classes,
            per_class,
            crop,
            width,
            batch,
            lr,
            momentum,
            weight_decay,
            patience,
            lr_drop_factor,
            max_drops,
            min_delta,
            max_steps,
            val_every,
            sampling,
            flip,
            seed,
            split,
            min_per_class,
            epsilon,
            method,
            model_scale,
            limit,
            target,
            reduction,
            location,
            report
        ))
    }

    fn require<T: Clone>(value: &Option<T>, flag: &str) -> Result<T, CliError> {
        value.clone().ok_or_else(|| CliError::new(ErrorKind::Usage, format!("--{flag} is required")))
    }

    fn data(&self) -> Result<PathBuf, CliError> {
        Self::require(&self.data, "data")
    }

    fn out(&self) -> Result<PathBuf, CliError> {
        Self::require(&self.out, "out")
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// `--scales`, else `--scale`, else `fallback`; sorted and deduplicated.
    fn scale_list(&self, fallback: Option<&[u32]>) -> Result<Vec<u32>, CliError> {
        let mut v = match (&self.scales, self.scale, fallback) {
            (Some(s), _, _) => s.clone(),
            (None, Some(s), _) => vec![s],
            (None, None, Some(f)) => f.to_vec(),
            (None, None, None) => return Err(CliError::new(ErrorKind::Usage, "--scale or --scales is required")),
        };
        if v.contains(&0) {
            return Err(CliError::new(ErrorKind::Config, "scales must be positive"));
        }
        v.sort_unstable();
        v.dedup();
        Ok(v)
    }

    fn split_ratios(&self) -> Result<SplitRatios, CliError> {
        let Some(s) = &self.split else {
            return Ok(SplitRatios::default());
        };
        let [train, validation, test] = s[..] else {
            return Err(CliError::new(ErrorKind::Config, format!("--split needs three fractions, got {}", s.len())));
        };
        let r = SplitRatios { train, validation, test };
        r.validate().map_err(|e| CliError::new(ErrorKind::Config, e.to_string()))?;
        Ok(r)
    }

    fn optim(&self) -> Result<OptimConfig, CliError> {
        let d = OptimConfig::default();
        let cfg = OptimConfig {
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            momentum: self.momentum.unwrap_or(d.momentum),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            lr_drop_factor: self.lr_drop_factor.unwrap_or(d.lr_drop_factor),
            patience: self.patience.unwrap_or(d.patience),
            min_delta: self.min_delta.unwrap_or(d.min_delta),
            max_drops: self.max_drops.unwrap_or(d.max_drops),
        };
        cfg.validate().map_err(|e| CliError::new(ErrorKind::Config, e.to_string()))?;
        Ok(cfg)
    }

    fn spec(&self, num_classes: usize) -> Result<NetworkSpec, CliError> {
        if let Some(k) = self.classes {
            if k != num_classes {
                return Err(CliError::new(
                    ErrorKind::Config,
                    format!("--classes {k} does not match the dataset's {num_classes} classes"),
                ));
            }
        }
        let spec = match self.preset.unwrap_or(Preset::Desk) {
            Preset::Table1 => {
                if self.width.is_some_and(|w| w != 1.0) {
                    return Err(CliError::new(ErrorKind::Config, "--width applies to the desk preset only"));
                }
                let mut spec = table1_preset(num_classes)?;
                if let Some(c) = self.crop {
                    spec.train_crop = c;
                }
                spec
            }
            Preset::Desk => desk_preset(num_classes, self.crop.unwrap_or(DESK_CROP), self.width.unwrap_or(DESK_WIDTH))?,
        };
        let min = spec.min_input_size()?;
        if spec.train_crop < min {
            return Err(FcnaError::CropBelowMinimum { crop: spec.train_crop, min }.into());
        }
        Ok(spec)
    }
}

pub const DESK_CROP: usize = 64;
pub const DESK_WIDTH: f64 = 1.0 / 16.0;

pub fn checkpoint_path(run_dir: &Path, scale: u32) -> PathBuf {
    run_dir.join(format!("model_{scale}.fcna"))
}

pub fn train_log_path(run_dir: &Path, scale: u32) -> PathBuf {
    run_dir.join(format!("train_{scale}.csv"))
}

pub const REPORT_FILE: &str = "report.txt";

fn load_manifest(dir: &Path) -> Result<DatasetManifest, CliError> {
    if !dir.join(fcna_core::dataset::MANIFEST_CSV).exists() {
        return Err(CliError::new(ErrorKind::MissingInput, format!("no dataset manifest in {}", dir.display())));
    }
    Ok(DatasetManifest::load(dir)?)
}

/// Loads `model_<scale>.fcna` and checks it was trained at `scale` for this dataset.
fn load_model(run_dir: &Path, scale: u32, manifest: &DatasetManifest) -> Result<ModelState, CliError> {
    let path = checkpoint_path(run_dir, scale);
    if !path.exists() {
        return Err(CliError::new(ErrorKind::MissingCheckpoint, format!("missing checkpoint {}", path.display())));
    }
    let model = load_checkpoint(&path)?;
    if model.scale != Some(scale) {
        return Err(CliError::new(
            ErrorKind::Checkpoint,
            format!("{} was trained at scale {:?}, expected {scale}", path.display(), model.scale),
        ));
    }
    if model.spec.num_classes != manifest.num_classes {
        return Err(CliError::new(
            ErrorKind::Checkpoint,
            format!("{} has {} classes, dataset has {}", path.display(), model.spec.num_classes, manifest.num_classes),
        ));
    }
    Ok(model)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| FcnaError::Io { path: dir.to_path_buf(), source: e }.into())
}

pub fn cmd_synth(o: &Opts) -> Result<String, CliError> {
    let out = o.out()?;
    let cfg = SynthConfig {
        num_classes: o.classes.unwrap_or(4),
        per_class: o.per_class.unwrap_or(32),
        scales: o.scale_list(Some(&[64, 256]))?,
        seed: o.seed(),
        split_ratios: o.split_ratios()?,
    };
    cfg.validate().map_err(|e| CliError::new(ErrorKind::Config, e.to_string()))?;
    ensure_dir(&out)?;
    let (m, _) = synth_generate(&cfg, &out)?;
    Ok(format!("wrote {} images x {} scales to {}", m.records.len(), m.scales.len(), out.display()))
}

pub fn cmd_ingest(o: &Opts) -> Result<String, CliError> {
    let data = o.data()?;
    let out = o.out()?;
    if !data.is_dir() {
        return Err(CliError::new(ErrorKind::MissingInput, format!("image directory {} not found", data.display())));
    }
    let d = IngestConfig::default();
    let cfg = IngestConfig {
        split_ratios: o.split_ratios()?,
        seed: o.seed(),
        scales: o.scale_list(Some(&d.scales))?,
        min_per_class: o.min_per_class.unwrap_or(d.min_per_class),
    };
    ensure_dir(&out)?;
    let m = build_manifest(&data, &out, &cfg)?;
    Ok(format!("ingested {} images in {} classes to {}", m.records.len(), m.num_classes, out.display()))
}

pub fn cmd_train(o: &Opts) -> Result<String, CliError> {
    let data = o.data()?;
    let out = o.out()?;
    let manifest = load_manifest(&data)?;
    let scales = o.scale_list(Some(&manifest.scales))?;
    let spec = o.spec(manifest.num_classes)?;
    let optim = o.optim()?;
    for &s in &scales {
        if !manifest.has_scale(s) {
            return Err(CliError::new(
                ErrorKind::Config,
                format!("scale {s} is not in the dataset (has {:?})", manifest.scales),
            ));
        }
    }
    let base = TrainConfig::new(0);
    let template = TrainConfig {
        scale: 0,
        batch_size: o.batch.unwrap_or(base.batch_size),
        steps_per_validation: o.val_every.unwrap_or(base.steps_per_validation),
        max_steps: o.max_steps.unwrap_or(base.max_steps),
        seed: o.seed(),
        optim,
        sampling: match o.sampling.unwrap_or(Sampling::Class) {
            Sampling::Class => SamplingMode::ClassUniform,
            Sampling::Image => SamplingMode::ImageUniform,
        },
        flip: o.flip.unwrap_or(false),
    };
    template.validate().map_err(|e| CliError::new(ErrorKind::Config, e.to_string()))?;
    ensure_dir(&out)?;
    let mut lines = Vec::new();
    for scale in scales {
        let cfg = TrainConfig { scale, ..template.clone() };
        let (model, log) = train(&manifest, &spec, &cfg)?;
        save_checkpoint(&model, &checkpoint_path(&out, scale))?;
        log.write_csv(&train_log_path(&out, scale))?;
        let last = log.validations.last();
        lines.push(format!(
            "scale {scale}: {} steps, stop {}, best step {}, validation loss {}, validation MCA {}",
            log.step_losses.len(),
            log.stop,
            log.best_step,
            last.map_or("-".into(), |v| format!("{:.4}", v.loss)),
            last.map_or("-".into(), |v| format!("{:.4}", v.mca)),
        ));
    }
    Ok(lines.join("\n"))
}

pub fn cmd_eval(o: &Opts) -> Result<String, CliError> {
    let data = o.data()?;
    let out = o.out()?;
    let manifest = load_manifest(&data)?;
    let scales = o.scale_list(Some(&manifest.scales))?;
    if scales.len() < 2 {
        return Err(CliError::new(ErrorKind::Config, "eval needs at least two scales"));
    }
    let epsilon = o.epsilon.unwrap_or(0.01);
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(CliError::new(ErrorKind::Config, format!("--epsilon must be non-negative, got {epsilon}")));
    }
    let method = match o.method.unwrap_or(Method::Pearson) {
        Method::Pearson => CorrelationMethod::Pearson,
        Method::Spearman => CorrelationMethod::Spearman,
    };
    for &s in &scales {
        if !manifest.has_scale(s) {
            return Err(CliError::new(ErrorKind::Config, format!("scale {s} is not in the dataset")));
        }
    }
    let shared = o.model_scale.map(|s| load_model(&out, s, &manifest)).transpose()?;
    // Load every checkpoint before any inference so a missing one fails fast.
    let models = scales
        .iter()
        .map(|&s| match &shared {
            Some(m) => Ok(m.clone()),
            None => load_model(&out, s, &manifest),
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let results = scales
        .iter()
        .zip(&models)
        .map(|(&s, m)| evaluate_scale(m, &manifest, s))
        .collect::<Result<Vec<_>, FcnaError>>()?;
    let report = EvalReport::build(results, method, epsilon)?;
    let path = out.join(REPORT_FILE);
    report.write(&path)?;
    Ok(format!("{}\nwrote {}", report.summary().trim_end(), path.display()))
}

pub fn cmd_visualize(o: &Opts) -> Result<String, CliError> {
    let data = o.data()?;
    let out = o.out()?;
    let manifest = load_manifest(&data)?;
    let scales = o.scale_list(Some(&manifest.scales))?;
    let limit = o.limit.unwrap_or(2);
    let target = o.target.unwrap_or(Target::Predicted);
    let reduction = match o.reduction.unwrap_or(Reduction::MaxAbs) {
        Reduction::MaxAbs => ChannelReduction::MaxAbs,
        Reduction::SumAbs => ChannelReduction::SumAbs,
    };
    let seed = match o.location.as_deref() {
        None => SaliencySeed::Pooled,
        Some(&[row, col]) => SaliencySeed::Location { row, col },
        Some(_) => return Err(CliError::new(ErrorKind::Usage, "--location takes ROW,COL")),
    };
    let dir = out.join("saliency");
    ensure_dir(&dir)?;
    let cues = load_cues(&data).ok();
    let mut written = 0;
    let mut lines = Vec::new();
    for scale in scales {
        let model = load_model(&out, scale, &manifest)?;
        let mut per_class = vec![0usize; manifest.num_classes];
        for r in manifest.records_in(Split::Test) {
            if per_class[r.class_label] >= limit {
                continue;
            }
            per_class[r.class_label] += 1;
            let img = load_rgb(&manifest.resolve(r, scale)?)?;
            let pixels = image_to_tensor(&img);
            let input = normalize_image(&pixels, manifest.channel_stats)?;
            let predicted = argmax(predict_image(&model, &pixels, manifest.channel_stats)?.data());
            let targets: Vec<usize> = match target {
                Target::Predicted => vec![predicted],
                Target::True => vec![r.class_label],
                Target::All => (0..manifest.num_classes).collect(),
            };
            for t in targets {
                let map = guided_backprop_with(&model, &input, t, seed, reduction)?;
                render_overlay(&img, &map, &dir.join(overlay_file_name(&r.id, scale, t)))?;
                written += 1;
                if let Some(cue) = cues.as_ref().and_then(|c| c.iter().find(|c| c.id == r.id)) {
                    let (r0, r1, c0, c1) = cue.region.pixel_bounds(map.height(), map.width());
                    lines.push(format!(
                        "{} scale {scale} class {t}: {:.1}% of saliency inside the planted cue region",
                        r.id,
                        100.0 * map.mass_in(r0..r1, c0..c1)
                    ));
                }
            }
        }
    }
    lines.push(format!("wrote {written} overlays to {}", dir.display()));
    Ok(lines.join("\n"))
}

pub fn cmd_report(o: &Opts) -> Result<String, CliError> {
    let path = match (&o.report, &o.out) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.join(REPORT_FILE),
        (None, None) => return Err(CliError::new(ErrorKind::Usage, "--report or --out is required")),
    };
    if !path.exists() {
        return Err(CliError::new(ErrorKind::MissingInput, format!("report {} not found", path.display())));
    }
    Ok(EvalReport::read(&path)?.summary().trim_end().to_string())
}

/// Caps the global worker pool at `FCNA_THREADS` when set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("FCNA_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::new(ErrorKind::Config, format!("FCNA_THREADS must be a positive integer, got {v:?}"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::new(ErrorKind::Internal, e.to_string()))
}

pub fn run(cli: Cli) -> Result<String, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synth(o) => cmd_synth(&o.merged()?),
        Command::Ingest(o) => cmd_ingest(&o.merged()?),
        Command::Train(o) => cmd_train(&o.merged()?),
        Command::Eval(o) => cmd_eval(&o.merged()?),
        Command::Visualize(o) => cmd_visualize(&o.merged()?),
        Command::Report(o) => cmd_report(&o.merged()?),
    }
}
