//! Browser bindings: synthetic previews, shape traces, and a small trainer
//! whose guided backprop overlay is drawn onto a canvas.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use fcna_core::dataset::synth::{class_cues, render_image};
use fcna_core::dataset::{crop_to_tensor, image_to_tensor, normalize_image, patches_to_batch, ChannelStats, Patch};
use fcna_core::optim::{OptimConfig, OptimState};
use fcna_core::saliency::{guided_backprop, overlay, SaliencySeed};
use fcna_core::train::train_step;
use fcna_core::{desk_preset, table1_preset, Mode, ModelState};

const CLASSES: usize = 4;
const IMAGES_PER_CLASS: usize = 12;

fn js_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn rgba(img: &RgbImage) -> Vec<u8> {
    img.pixels().flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

/// RGBA pixels of one synthetic image, `side × side`.
#[wasm_bindgen]
pub fn synth_preview(class: usize, index: usize, side: u32, seed: u64) -> Result<Vec<u8>, String> {
    if class >= CLASSES || side < 8 {
        return Err(js_err(format!("class must be below {CLASSES} and side at least 8")));
    }
    Ok(rgba(&render_image(CLASSES, class, index, side, seed).0))
}

#[wasm_bindgen]
pub fn describe_class(class: usize, side: u32) -> String {
    class_cues(CLASSES, side).get(class).map(|c| c.describe()).unwrap_or_default()
}

/// One line per convolution with its output size, then the parameter count.
#[wasm_bindgen]
pub fn shape_trace(preset: &str, input: usize, crop: usize, width: f64) -> Result<String, String> {
    let spec = match preset {
        "table1" => table1_preset(210),
        "desk" => desk_preset(CLASSES, crop, width),
        other => return Err(js_err(format!("unknown preset {other}"))),
    }
    .map_err(js_err)?;
    let trace = spec.shape_trace(input, input).map_err(js_err)?;
    let mut out = String::new();
    for ((name, h, w), (_, shape)) in trace.stages.iter().zip(spec.filter_shapes()) {
        out.push_str(&format!("{name:<11} {h:>4} x {w:<4} filters {shape:?}\n"));
    }
    let (h, w) = trace.class_map();
    out.push_str(&format!("class map {h} x {w}, {} parameters", spec.parameter_count()));
    Ok(out)
}

/// Desk network trained on random crops of in-memory synthetic images.
#[wasm_bindgen]
pub struct Trainer {
    model: ModelState,
    state: OptimState,
    cfg: OptimConfig,
    images: Vec<(RgbImage, usize)>,
    stats: ChannelStats,
    rng: ChaCha8Rng,
    side: u32,
    crop: usize,
    seed: u64,
    steps: usize,
}

#[wasm_bindgen]
impl Trainer {
    #[wasm_bindgen(constructor)]
    pub fn new(side: u32, seed: u64) -> Result<Trainer, String> {
        let crop = (side / 2) as usize;
        let spec = desk_preset(CLASSES, crop, 1.0 / 16.0).map_err(js_err)?;
        let model = ModelState::init(spec, seed).map_err(js_err)?;
        let cfg = OptimConfig { learning_rate: 0.003, ..OptimConfig::default() };
        let images: Vec<(RgbImage, usize)> = (0..CLASSES)
            .flat_map(|c| (0..IMAGES_PER_CLASS).map(move |i| (c, i)))
            .map(|(c, i)| (render_image(CLASSES, c, i, side, seed).0, c))
            .collect();
        let stats = channel_stats(&images);
        Ok(Trainer {
            state: OptimState::new(&model.params, &cfg),
            model,
            cfg,
            images,
            stats,
            rng: ChaCha8Rng::seed_from_u64(seed),
            side,
            crop,
            seed,
            steps: 0,
        })
    }

    /// Runs `n` steps of batch 8 and returns the last loss.
    pub fn train(&mut self, n: usize) -> Result<f64, String> {
        let mut loss = f64::NAN;
        for _ in 0..n {
            let patches: Vec<Patch> = (0..8)
                .map(|_| {
                    let (img, label) = &self.images[self.rng.gen_range(0..self.images.len())];
                    let span = self.side as usize - self.crop + 1;
                    let (r, c) = (self.rng.gen_range(0..span), self.rng.gen_range(0..span));
                    Patch {
                        pixels: crop_to_tensor(img, r, c, self.crop),
                        class_label: *label,
                        source_id: String::new(),
                        scale: self.side,
                        top_left: (r, c),
                    }
                })
                .collect();
            let labels: Vec<usize> = patches.iter().map(|p| p.class_label).collect();
            let batch = patches_to_batch(&patches, self.stats).map_err(js_err)?;
            loss = train_step(&mut self.model, &mut self.state, &self.cfg, &batch, &labels, &mut self.rng)
                .map_err(js_err)?;
            self.steps += 1;
        }
        Ok(loss)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn side(&self) -> u32 {
        self.side
    }

    /// Class probabilities for an unseen image of `class`.
    pub fn predict(&self, class: usize, index: usize) -> Result<Vec<f32>, String> {
        let x = self.held_out(class, index)?.1;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.model.forward(&x, Mode::Eval, &mut rng).map_err(js_err)?;
        Ok(out.prediction.data().to_vec())
    }

    /// Side-by-side RGBA overlay (`2·side × side`) of guided backprop for `target`.
    pub fn saliency(&self, class: usize, index: usize, target: usize) -> Result<Vec<u8>, String> {
        if target >= CLASSES {
            return Err(js_err(format!("target must be below {CLASSES}")));
        }
        let (img, x) = self.held_out(class, index)?;
        let map = guided_backprop(&self.model, &x, target, SaliencySeed::Pooled).map_err(js_err)?;
        Ok(rgba(&overlay(&img, &map).map_err(js_err)?))
    }
}

impl Trainer {
    fn held_out(&self, class: usize, index: usize) -> Result<(RgbImage, fcna_core::Tensor), String> {
        if class >= CLASSES {
            return Err(js_err(format!("class must be below {CLASSES}")));
        }
        // Indices past the training range are never seen during training.
        let img = render_image(CLASSES, class, IMAGES_PER_CLASS + index, self.side, self.seed).0;
        let x = normalize_image(&image_to_tensor(&img), self.stats).map_err(js_err)?;
        Ok((img, x))
    }
}

fn channel_stats(images: &[(RgbImage, usize)]) -> ChannelStats {
    let mut sum = [0f64; 3];
    let mut sq = [0f64; 3];
    let mut n = 0f64;
    for (img, _) in images {
        for p in img.pixels() {
            for ch in 0..3 {
                let v = p[ch] as f64 / 255.0;
                sum[ch] += v;
                sq[ch] += v * v;
            }
            n += 1.0;
        }
    }
    let mean = sum.map(|s| s / n);
    let std: [f64; 3] = std::array::from_fn(|ch| (sq[ch] / n - mean[ch] * mean[ch]).max(0.0).sqrt());
    ChannelStats { mean: mean.map(|m| m as f32), std: std.map(|s| if s > 1e-6 { s as f32 } else { 1.0 }) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preview_is_rgba() {
        assert_eq!(synth_preview(0, 0, 16, 1).unwrap().len(), 16 * 16 * 4);
        assert!(synth_preview(9, 0, 16, 1).is_err());
    }

    #[test]
    fn trace_reports_class_map() {
        assert!(shape_trace("table1", 256, 0, 0.0).unwrap().contains("class map 7 x 7"));
        assert!(shape_trace("desk", 4, 64, 0.0625).is_err());
    }

    #[test]
    fn trainer_runs_and_overlays() {
        let mut t = Trainer::new(32, 3).unwrap();
        assert!(t.train(2).unwrap().is_finite());
        let p = t.predict(1, 0).unwrap();
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-4);
        assert_eq!(t.saliency(1, 0, 1).unwrap().len(), 64 * 32 * 4);
    }
}
