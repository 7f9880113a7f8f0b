//! Random crops for patch-wise training.

use image::RgbImage;
use rand::Rng;

use crate::dataset::manifest::{ChannelStats, DatasetManifest, Split};
use crate::dataset::pyramid::{crop_to_tensor, load_rgb};
use crate::error::{FcnaError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// Class uniformly, then an image of that class uniformly.
    #[default]
    ClassUniform,
    /// Image uniformly over the split.
    ImageUniform,
}

#[derive(Clone, Debug)]
pub struct Patch {
    /// `3 × crop × crop`, values in `[0, 1]`.
    pub pixels: Tensor,
    pub class_label: usize,
    pub source_id: String,
    pub scale: u32,
    pub top_left: (usize, usize),
}

pub(crate) struct LoadedImage {
    pub id: String,
    pub class_label: usize,
    pub image: RgbImage,
}

/// Images of one split at one scale, held in memory.
pub struct PatchSampler {
    images: Vec<LoadedImage>,
    by_class: Vec<Vec<usize>>,
    scale: u32,
    mode: SamplingMode,
}

pub(crate) fn load_split(manifest: &DatasetManifest, split: Split, scale: u32) -> Result<Vec<LoadedImage>> {
    if !manifest.has_scale(scale) {
        return Err(FcnaError::Manifest(format!("scale {scale} not in manifest scales {:?}", manifest.scales)));
    }
    manifest
        .records_in(split)
        .map(|r| {
            Ok(LoadedImage {
                id: r.id.clone(),
                class_label: r.class_label,
                image: load_rgb(&manifest.resolve(r, scale)?)?,
            })
        })
        .collect()
}

impl PatchSampler {
    pub fn new(manifest: &DatasetManifest, split: Split, scale: u32, mode: SamplingMode) -> Result<Self> {
        let images = load_split(manifest, split, scale)?;
        Self::from_images(images, manifest.num_classes, scale, mode)
    }

    pub(crate) fn from_images(
        images: Vec<LoadedImage>,
        num_classes: usize,
        scale: u32,
        mode: SamplingMode,
    ) -> Result<Self> {
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, img) in images.iter().enumerate() {
            by_class[img.class_label].push(i);
        }
        if images.is_empty() {
            return Err(FcnaError::Manifest("split has no records".into()));
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            if mode == SamplingMode::ClassUniform {
                return Err(FcnaError::EmptyClass(c));
            }
        }
        Ok(PatchSampler { images, by_class, scale, mode })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Fails with the first record whose image cannot hold a `crop × crop` window.
    pub fn check_crop(&self, crop: usize) -> Result<()> {
        for img in &self.images {
            let (w, h) = (img.image.width() as usize, img.image.height() as usize);
            if h < crop || w < crop {
                return Err(FcnaError::ImageSmallerThanCrop { record: img.id.clone(), height: h, width: w, crop });
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, crop: usize, rng: &mut R) -> Result<Patch> {
        let index = match self.mode {
            SamplingMode::ClassUniform => {
                let class = rng.gen_range(0..self.by_class.len());
                let members = &self.by_class[class];
                members[rng.gen_range(0..members.len())]
            }
            SamplingMode::ImageUniform => rng.gen_range(0..self.images.len()),
        };
        let src = &self.images[index];
        let (w, h) = (src.image.width() as usize, src.image.height() as usize);
        if h < crop || w < crop {
            return Err(FcnaError::ImageSmallerThanCrop { record: src.id.clone(), height: h, width: w, crop });
        }
        let row = rng.gen_range(0..=h - crop);
        let col = rng.gen_range(0..=w - crop);
        Ok(Patch {
            pixels: crop_to_tensor(&src.image, row, col, crop),
            class_label: src.class_label,
            source_id: src.id.clone(),
            scale: self.scale,
            top_left: (row, col),
        })
    }
}

/// Stacks patches into a standardized `batch × 3 × crop × crop` input.
pub fn patches_to_batch(patches: &[Patch], stats: ChannelStats) -> Result<Tensor> {
    let items = patches.iter().map(|p| normalize_image(&p.pixels, stats)).collect::<Result<Vec<_>>>()?;
    Tensor::stack(&items)
}

/// Turns a `3 × h × w` image in `[0, 1]` into a standardized
/// `1 × 3 × h × w` network input.
pub fn normalize_image(pixels: &Tensor, stats: ChannelStats) -> Result<Tensor> {
    let [3, h, w] = pixels.shape()[..] else {
        return Err(FcnaError::shape("normalize_image", "3 x h x w", crate::tensor::shape_str(pixels.shape())));
    };
    let mut data = pixels.data().to_vec();
    for (c, plane) in data.chunks_mut(h * w).enumerate() {
        for v in plane {
            *v = (*v - stats.mean[c]) / stats.std[c];
        }
    }
    Tensor::new(vec![1, 3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(id: &str, class: usize, w: u32, h: u32) -> LoadedImage {
        LoadedImage {
            id: id.into(),
            class_label: class,
            image: RgbImage::from_fn(w, h, |x, y| image::Rgb([x as u8, y as u8, 200])),
        }
    }

    #[test]
    fn full_size_crop_is_anchored_at_origin() {
        let s = PatchSampler::from_images(vec![img("a", 0, 16, 16)], 1, 16, SamplingMode::ClassUniform).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(s.sample(16, &mut rng).unwrap().top_left, (0, 0));
        }
    }

    #[test]
    fn offsets_reach_both_extremes() {
        let s = PatchSampler::from_images(vec![img("a", 0, 20, 30)], 1, 30, SamplingMode::ClassUniform).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut lo, mut hi) = (usize::MAX, 0);
        for _ in 0..100_000 {
            let p = s.sample(12, &mut rng).unwrap();
            lo = lo.min(p.top_left.0);
            hi = hi.max(p.top_left.0);
            assert!(p.top_left.1 <= 8);
        }
        assert_eq!((lo, hi), (0, 18));
    }

    #[test]
    fn class_uniform_counts_stay_within_three_sigma() {
        // Class 0 has 5 images, class 1 has 1, class 2 has 2.
        let mut images: Vec<_> = (0..5).map(|i| img(&format!("a{i}"), 0, 8, 8)).collect();
        images.push(img("b", 1, 8, 8));
        images.extend((0..2).map(|i| img(&format!("c{i}"), 2, 8, 8)));
        let s = PatchSampler::from_images(images, 3, 8, SamplingMode::ClassUniform).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[s.sample(4, &mut rng).unwrap().class_label] += 1;
        }
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn crop_larger_than_image_names_record() {
        let s = PatchSampler::from_images(vec![img("tiny", 0, 10, 6)], 1, 10, SamplingMode::ClassUniform).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match s.sample(8, &mut rng) {
            Err(FcnaError::ImageSmallerThanCrop { record, .. }) => assert_eq!(record, "tiny"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(s.check_crop(8).is_err());
        assert!(s.check_crop(6).is_ok());
    }

    #[test]
    fn patch_pixels_are_unit_range() {
        let s = PatchSampler::from_images(vec![img("a", 0, 32, 32)], 1, 32, SamplingMode::ImageUniform).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = s.sample(9, &mut rng).unwrap();
            assert_eq!(p.pixels.shape(), &[3, 9, 9]);
            assert!(p.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    /// Expected fraction of pixels never covered by `n` uniform crops.
    fn analytic_unvisited(side: usize, crop: usize, n: u32) -> f64 {
        let positions = side - crop + 1;
        let cover = |i: usize| {
            // Top-left offsets t with t <= i < t + crop.
            let lo = i.saturating_sub(crop - 1);
            let hi = i.min(positions - 1);
            (hi - lo + 1) as f64 / positions as f64
        };
        let mut total = 0.0;
        for r in 0..side {
            for c in 0..side {
                total += (1.0 - cover(r) * cover(c)).powi(n as i32);
            }
        }
        total / (side * side) as f64
    }

    #[test]
    fn coverage_matches_analytic_expectation() {
        let (side, crop, n, trials) = (24usize, 8usize, 10u32, 2000usize);
        let s = PatchSampler::from_images(
            vec![img("a", 0, side as u32, side as u32)],
            1,
            side as u32,
            SamplingMode::ClassUniform,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut fractions = Vec::with_capacity(trials);
        for _ in 0..trials {
            let mut seen = vec![false; side * side];
            for _ in 0..n {
                let (r0, c0) = s.sample(crop, &mut rng).unwrap().top_left;
                for r in r0..r0 + crop {
                    for c in c0..c0 + crop {
                        seen[r * side + c] = true;
                    }
                }
            }
            fractions.push(seen.iter().filter(|&&v| !v).count() as f64 / (side * side) as f64);
        }
        let mean = fractions.iter().sum::<f64>() / trials as f64;
        let var = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let stderr = (var / trials as f64).sqrt();
        let expected = analytic_unvisited(side, crop, n);
        assert!((mean - expected).abs() < 4.0 * stderr, "mc {mean} vs analytic {expected} (se {stderr})");
    }
}
