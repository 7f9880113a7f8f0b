//! Synthetic multi-scale dataset with classes whose evidence lives at
//! different spatial frequencies.
//!
//! Classes `0..K/2` are *fine-cue* classes: they share a neutral layout and
//! differ only in the orientation of a period-4 px sinusoidal hatching planted
//! in a random rectangle. At a 4× reduction the triangle filter removes the
//! hatching entirely, so these classes become indistinguishable.
//!
//! Classes `K/2..K` are *coarse-cue* classes: they differ in the orientation
//! of wide bands (period a quarter of the image side) that survive every
//! scale. They also carry a hatching distractor of a random fine-class
//! orientation, which makes them locally resemble the fine-cue classes at
//! full resolution.
//!
//! Images are rendered at the largest scale and pyramided down.

use std::f64::consts::PI;
use std::path::Path;

use image::RgbImage;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::manifest::{stratified_split, ChannelStats, DatasetManifest, Record, Split, SplitRatios};
use crate::dataset::pyramid::{build_pyramid, save_png};
use crate::error::{FcnaError, Result};
use crate::rng::{stream, Purpose};

pub const CUES_CSV: &str = "cues.csv";

/// Hatching period in pixels at the largest scale.
pub const FINE_PERIOD_PX: f64 = 4.0;
const HATCH_AMPLITUDE: f64 = 0.2;
const BAND_AMPLITUDE: f64 = 0.2;
const BACKGROUND_AMPLITUDE: f64 = 0.05;
const NOISE_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CueKind {
    Fine,
    Coarse,
}

impl CueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CueKind::Fine => "fine",
            CueKind::Coarse => "coarse",
        }
    }
}

/// Per-class generator parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassCue {
    pub kind: CueKind,
    /// Angle of the wave vector in degrees (0 varies along columns).
    pub orientation_deg: f64,
    /// Wave period in pixels at the largest scale.
    pub period_px: f64,
    pub amplitude: f64,
}

impl ClassCue {
    pub fn describe(&self) -> String {
        format!(
            "kind={} orientation_deg={} period_px={} amplitude={}",
            self.kind.as_str(),
            self.orientation_deg,
            self.period_px,
            self.amplitude
        )
    }
}

/// Axis-aligned rectangle in fractions of image height/width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CueRegion {
    pub top: f64,
    pub left: f64,
    pub bottom: f64,
    pub right: f64,
}

impl CueRegion {
    /// Pixel bounds `[row0, row1) × [col0, col1)` for an image of the given size.
    pub fn pixel_bounds(&self, height: usize, width: usize) -> (usize, usize, usize, usize) {
        let r = |f: f64, n: usize| ((f * n as f64).round() as usize).min(n);
        (r(self.top, height), r(self.bottom, height), r(self.left, width), r(self.right, width))
    }

    pub fn contains(&self, row: usize, col: usize, height: usize, width: usize) -> bool {
        let (r0, r1, c0, c1) = self.pixel_bounds(height, width);
        (r0..r1).contains(&row) && (c0..c1).contains(&col)
    }
}

/// Where the hatching was planted in one image and with which orientation.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedCue {
    pub id: String,
    pub class_label: usize,
    pub kind: CueKind,
    pub hatch_orientation_deg: f64,
    pub region: CueRegion,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub scales: Vec<u32>,
    pub seed: u64,
    pub split_ratios: SplitRatios,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FcnaError::Manifest(m));
        if self.num_classes < 2 || !self.num_classes.is_multiple_of(2) {
            return bad(format!("num_classes must be even and >= 2, got {}", self.num_classes));
        }
        if self.per_class == 0 {
            return bad("per_class must be >= 1".into());
        }
        if self.scales.is_empty() || self.scales.windows(2).any(|w| w[0] >= w[1]) || self.scales[0] < 8 {
            return bad(format!("scales must be ascending and >= 8, got {:?}", self.scales));
        }
        self.split_ratios.validate()
    }

    pub fn max_scale(&self) -> u32 {
        *self.scales.last().expect("validated scales")
    }
}

pub fn class_cues(num_classes: usize, max_scale: u32) -> Vec<ClassCue> {
    let half = num_classes / 2;
    (0..num_classes)
        .map(|c| {
            let (kind, i) = if c < half { (CueKind::Fine, c) } else { (CueKind::Coarse, c - half) };
            ClassCue {
                kind,
                orientation_deg: 180.0 * i as f64 / half as f64,
                period_px: match kind {
                    CueKind::Fine => FINE_PERIOD_PX,
                    CueKind::Coarse => max_scale as f64 / 4.0,
                },
                amplitude: match kind {
                    CueKind::Fine => HATCH_AMPLITUDE,
                    CueKind::Coarse => BAND_AMPLITUDE,
                },
            }
        })
        .collect()
}

fn wave(x: f64, y: f64, orientation_deg: f64, period: f64, phase: f64) -> f64 {
    let (s, c) = orientation_deg.to_radians().sin_cos();
    (2.0 * PI * (x * c + y * s) / period + phase).sin()
}

fn random_region<R: Rng>(rng: &mut R) -> CueRegion {
    let h = rng.gen_range(0.45..0.65);
    let w = rng.gen_range(0.45..0.65);
    let top = rng.gen_range(0.0..1.0 - h);
    let left = rng.gen_range(0.0..1.0 - w);
    CueRegion { top, left, bottom: top + h, right: left + w }
}

/// Renders image `index` of `class` at `side × side`, deterministically from `seed`.
pub fn render_image(num_classes: usize, class: usize, index: usize, side: u32, seed: u64) -> (RgbImage, PlantedCue) {
    render(num_classes, class, index, side, seed, true)
}

/// As [`render_image`]; `with_hatch = false` leaves out the hatching while
/// consuming the same random numbers.
fn render(
    num_classes: usize,
    class: usize,
    index: usize,
    side: u32,
    seed: u64,
    with_hatch: bool,
) -> (RgbImage, PlantedCue) {
    let cues = class_cues(num_classes, side);
    let cue = &cues[class];
    let mut rng = stream(seed, Purpose::Synth, (class as u64) << 24 | index as u64);
    let n = side as f64;

    let bg: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| (rng.gen_range(0.0..360.0), n / rng.gen_range(1.0..2.0), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let band_phase = rng.gen_range(0.0..2.0 * PI);
    let hatch_phase = rng.gen_range(0.0..2.0 * PI);
    let hatch_orientation = match cue.kind {
        CueKind::Fine => cue.orientation_deg,
        CueKind::Coarse => cues[rng.gen_range(0..num_classes / 2)].orientation_deg,
    };
    let region = random_region(&mut rng);
    let tint: [f64; 3] = std::array::from_fn(|_| 1.0 + rng.gen_range(-0.08..0.08));
    let noise = Normal::new(0.0, NOISE_STD).expect("finite std");
    let (r0, r1, c0, c1) = region.pixel_bounds(side as usize, side as usize);

    let img = RgbImage::from_fn(side, side, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let mut v = 0.5;
        for &(angle, period, phase) in &bg {
            v += BACKGROUND_AMPLITUDE * wave(xf, yf, angle, period, phase);
        }
        if cue.kind == CueKind::Coarse {
            v += cue.amplitude * wave(xf, yf, cue.orientation_deg, cue.period_px, band_phase);
        }
        let (row, col) = (y as usize, x as usize);
        if with_hatch && (r0..r1).contains(&row) && (c0..c1).contains(&col) {
            v += HATCH_AMPLITUDE * wave(xf, yf, hatch_orientation, FINE_PERIOD_PX, hatch_phase);
        }
        let px: [u8; 3] = std::array::from_fn(|ch| {
            let p = v * tint[ch] + noise.sample(&mut rng);
            (p.clamp(0.0, 1.0) * 255.0).round() as u8
        });
        image::Rgb(px)
    });
    let planted = PlantedCue {
        id: record_id(class, index),
        class_label: class,
        kind: cue.kind,
        hatch_orientation_deg: hatch_orientation,
        region,
    };
    (img, planted)
}

pub fn record_id(class: usize, index: usize) -> String {
    format!("c{class:02}_{index:04}")
}

/// Per-channel mean and standard deviation over the train split at the
/// smallest scale. A flat channel keeps unit scale.
pub(crate) fn channel_stats(manifest: &DatasetManifest) -> Result<ChannelStats> {
    let scale = manifest.scales[0];
    let mut sums = [0f64; 3];
    let mut squares = [0f64; 3];
    let mut count = 0usize;
    for r in manifest.records_in(Split::Train) {
        let img = crate::dataset::pyramid::load_rgb(&manifest.resolve(r, scale)?)?;
        for p in img.pixels() {
            for c in 0..3 {
                let v = p[c] as f64 / 255.0;
                sums[c] += v;
                squares[c] += v * v;
            }
        }
        count += img.pixels().len();
    }
    if count == 0 {
        return Ok(ChannelStats::default());
    }
    let n = count as f64;
    let mean = sums.map(|s| s / n);
    let std: [f64; 3] = std::array::from_fn(|c| (squares[c] / n - mean[c] * mean[c]).max(0.0).sqrt());
    Ok(ChannelStats { mean: mean.map(|m| m as f32), std: std.map(|s| if s > 1e-6 { s as f32 } else { 1.0 }) })
}

/// Renders the whole dataset into `out_dir` and writes its manifest and cue log.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<(DatasetManifest, Vec<PlantedCue>)> {
    cfg.validate()?;
    let max = cfg.max_scale();
    let cues = class_cues(cfg.num_classes, max);
    let labels: Vec<usize> = (0..cfg.num_classes).flat_map(|c| std::iter::repeat_n(c, cfg.per_class)).collect();
    let splits = stratified_split(&labels, cfg.split_ratios, cfg.seed)?;

    let mut records = Vec::with_capacity(labels.len());
    let mut planted = Vec::with_capacity(labels.len());
    for (i, (&class, &split)) in labels.iter().zip(&splits).enumerate() {
        let index = i % cfg.per_class;
        let (img, cue) = render_image(cfg.num_classes, class, index, max, cfg.seed);
        let pyramid = build_pyramid(&img, &cfg.scales, &cue.id)?;
        let mut paths = std::collections::BTreeMap::new();
        for (scale, level) in cfg.scales.iter().zip(&pyramid) {
            let rel = Path::new("images").join(scale.to_string()).join(format!("{}.png", cue.id));
            save_png(level, &out_dir.join(&rel))?;
            paths.insert(*scale, rel);
        }
        records.push(Record { id: cue.id.clone(), class_label: class, split, paths });
        planted.push(cue);
    }

    let mut manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        records,
        scales: cfg.scales.clone(),
        num_classes: cfg.num_classes,
        class_names: cues.iter().enumerate().map(|(c, cue)| format!("{}{c}", cue.kind.as_str())).collect(),
        channel_stats: ChannelStats::default(),
        pixels_per_mm: None,
        class_cues: cues.iter().enumerate().map(|(c, cue)| (c, cue.describe())).collect(),
    };
    manifest.channel_stats = channel_stats(&manifest)?;
    manifest.write()?;
    write_cues(&planted, &out_dir.join(CUES_CSV))?;
    Ok((manifest, planted))
}

fn write_cues(cues: &[PlantedCue], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "class_label", "kind", "hatch_orientation_deg", "top", "left", "bottom", "right"])?;
    for c in cues {
        w.write_record([
            c.id.clone(),
            c.class_label.to_string(),
            c.kind.as_str().to_string(),
            format!("{:?}", c.hatch_orientation_deg),
            format!("{:?}", c.region.top),
            format!("{:?}", c.region.left),
            format!("{:?}", c.region.bottom),
            format!("{:?}", c.region.right),
        ])?;
    }
    w.flush().map_err(|e| FcnaError::io(path, e))
}

pub fn load_cues(root: &Path) -> Result<Vec<PlantedCue>> {
    let path = root.join(CUES_CSV);
    if !path.exists() {
        return Err(FcnaError::io(&path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let mut reader = csv::Reader::from_path(&path)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let f = |i: usize| -> Result<f64> {
            row.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| FcnaError::Manifest(format!("bad cue row {row:?}")))
        };
        out.push(PlantedCue {
            id: row.get(0).unwrap_or_default().to_string(),
            class_label: f(1)? as usize,
            kind: match row.get(2) {
                Some("fine") => CueKind::Fine,
                Some("coarse") => CueKind::Coarse,
                other => return Err(FcnaError::Manifest(format!("bad cue kind {other:?}"))),
            },
            hatch_orientation_deg: f(3)?,
            region: CueRegion { top: f(4)?, left: f(5)?, bottom: f(6)?, right: f(7)? },
        });
    }
    Ok(out)
}

/// Gradient-orientation contrast `(E|∂x| − E|∂y|) / (E|∂x| + E|∂y|)` of the
/// luminance, in `[-1, 1]`. Hatching varying along columns pushes it positive.
pub fn orientation_statistic(img: &RgbImage) -> f64 {
    let (w, h) = img.dimensions();
    let lum = |x: u32, y: u32| {
        let p = img.get_pixel(x, y);
        (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0
    };
    let (mut gx, mut gy) = (0.0, 0.0);
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            gx += (lum(x + 1, y) - lum(x, y)).abs();
            gy += (lum(x, y + 1) - lum(x, y)).abs();
        }
    }
    if gx + gy == 0.0 {
        0.0
    } else {
        (gx - gy) / (gx + gy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::pyramid::resize_long_side;

    fn mean_abs_diff(a: &RgbImage, b: &RgbImage) -> f64 {
        let total: f64 = a.as_raw().iter().zip(b.as_raw()).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum();
        total / a.as_raw().len() as f64
    }

    #[test]
    fn hatching_vanishes_after_fourfold_reduction() {
        for class in 0..4 {
            for i in 0..3 {
                let (with, _) = render(4, class, i, 256, 3, true);
                let (without, _) = render(4, class, i, 256, 3, false);
                let full = mean_abs_diff(&with, &without);
                let small = mean_abs_diff(&resize_long_side(&with, 64), &resize_long_side(&without, 64));
                assert!(full > 5.0, "class {class}: full-resolution difference {full}");
                assert!(small < 0.5, "class {class}: downsampled difference {small}");
            }
        }
    }

    #[test]
    fn fine_orientations_are_separable_at_full_resolution() {
        let stat = |class: usize| -> f64 {
            (0..6).map(|i| orientation_statistic(&render_image(4, class, i, 256, 3).0)).sum::<f64>() / 6.0
        };
        let gap = (stat(0) - stat(1)).abs();
        assert!(gap > 0.3, "full-resolution distance {gap}");
    }

    #[test]
    fn rendering_is_deterministic() {
        let (a, ca) = render_image(4, 2, 5, 64, 11);
        let (b, cb) = render_image(4, 2, 5, 64, 11);
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        let (c, _) = render_image(4, 2, 5, 64, 12);
        assert_ne!(a, c);
    }

    #[test]
    fn odd_class_count_is_rejected() {
        let cfg = SynthConfig {
            num_classes: 3,
            per_class: 2,
            scales: vec![32],
            seed: 0,
            split_ratios: SplitRatios::default(),
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cue_table_alternates_kinds() {
        let cues = class_cues(4, 256);
        assert_eq!(cues[0].kind, CueKind::Fine);
        assert_eq!(cues[1].orientation_deg, 90.0);
        assert_eq!(cues[2].kind, CueKind::Coarse);
        assert_eq!(cues[3].period_px, 64.0);
    }

    #[test]
    fn region_bounds() {
        let r = CueRegion { top: 0.25, left: 0.5, bottom: 0.75, right: 1.0 };
        assert_eq!(r.pixel_bounds(8, 8), (2, 6, 4, 8));
        assert!(r.contains(2, 4, 8, 8));
        assert!(!r.contains(6, 4, 8, 8));
    }
}
