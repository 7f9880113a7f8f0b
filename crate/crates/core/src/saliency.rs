//! Input-space attribution maps: guided backpropagation and plain gradients,
//! plus side-by-side overlay rendering.

use std::path::Path;

use image::RgbImage;
use rand::SeedableRng;

use crate::dataset::save_png;
use crate::error::{FcnaError, Result};
use crate::network::{Mode, ModelState, ReluRule};
use crate::tensor::{shape_str, Scalar, Tensor};

/// Where the backward pass starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SaliencySeed {
    /// The spatially pooled logit of the target class.
    #[default]
    Pooled,
    /// One cell of the target channel of the class map.
    Location { row: usize, col: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientRule {
    /// ReLUs pass only positive gradients at positive inputs.
    Guided,
    /// The ordinary chain rule.
    Vanilla,
}

/// How the three input-channel gradients collapse to one value per pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ChannelReduction {
    #[default]
    MaxAbs,
    SumAbs,
}

impl ChannelReduction {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelReduction::MaxAbs => "max-abs",
            ChannelReduction::SumAbs => "sum-abs",
        }
    }
}

impl std::str::FromStr for ChannelReduction {
    type Err = FcnaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-abs" => Ok(ChannelReduction::MaxAbs),
            "sum-abs" => Ok(ChannelReduction::SumAbs),
            other => Err(FcnaError::InvalidConfig(format!("unknown channel reduction {other:?}"))),
        }
    }
}

/// Non-negative `h × w` attribution, scaled so its maximum is 1 unless all zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub values: Tensor,
    pub target: usize,
}

impl SaliencyMap {
    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    /// Fraction of total attribution inside `[r0, r1) × [c0, c1)`.
    pub fn mass_in(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> f64 {
        let w = self.width();
        let (mut inside, mut total) = (0.0f64, 0.0f64);
        for (i, &v) in self.values.data().iter().enumerate() {
            total += v as f64;
            if rows.contains(&(i / w)) && cols.contains(&(i % w)) {
                inside += v as f64;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            inside / total
        }
    }
}

/// Gradient of the seeded target score with respect to a `1 × C × H × W`
/// input, computed under eval-mode inference.
pub fn input_gradient<T: Scalar>(
    model: &ModelState<T>,
    input: &Tensor<T>,
    target: usize,
    seed: SaliencySeed,
    rule: GradientRule,
) -> Result<Tensor<T>> {
    let (n, _, _, _) = input.dims4()?;
    if n != 1 {
        return Err(FcnaError::shape("saliency input batch", 1, n));
    }
    let k = model.spec.num_classes;
    if target >= k {
        return Err(FcnaError::LabelOutOfRange { label: target, num_classes: k });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(input, Mode::Eval, &mut rng)?;
    let (_, _, h, w) = out.class_map.dims4()?;
    let mut g = Tensor::<T>::zeros(out.class_map.shape());
    let plane = &mut g.data_mut()[target * h * w..(target + 1) * h * w];
    match seed {
        SaliencySeed::Pooled => {
            let v = T::one() / T::from_f64((h * w) as f64);
            plane.iter_mut().for_each(|x| *x = v);
        }
        SaliencySeed::Location { row, col } => {
            if row >= h || col >= w {
                return Err(FcnaError::Eval(format!("class-map location ({row}, {col}) outside {h} x {w}")));
            }
            plane[row * w + col] = T::one();
        }
    }
    let relu = match rule {
        GradientRule::Guided => ReluRule::Guided,
        GradientRule::Vanilla => ReluRule::Standard,
    };
    let (_, gi) = model.backprop(&out.cache, g, relu, true)?;
    Ok(gi.expect("input gradient requested"))
}

/// Max-abs over channels of a `1 × C × H × W` gradient, divided by its maximum.
pub fn reduce_channels<T: Scalar>(grad: &Tensor<T>) -> Result<Tensor> {
    reduce_channels_with(grad, ChannelReduction::MaxAbs)
}

pub fn reduce_channels_with<T: Scalar>(grad: &Tensor<T>, reduction: ChannelReduction) -> Result<Tensor> {
    let (n, c, h, w) = grad.dims4()?;
    if n != 1 {
        return Err(FcnaError::shape("reduce_channels", "1 x C x H x W", shape_str(grad.shape())));
    }
    let plane = h * w;
    let mut out: Vec<f32> = (0..plane)
        .map(|i| {
            let abs = (0..c).map(|ch| grad.data()[ch * plane + i].abs());
            let v = match reduction {
                ChannelReduction::MaxAbs => abs.fold(T::zero(), T::max),
                ChannelReduction::SumAbs => abs.fold(T::zero(), |a, b| a + b),
            };
            v.to_f32().unwrap_or(0.0)
        })
        .collect();
    let max = out.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v /= max);
    }
    Tensor::new(vec![h, w], out)
}

pub fn guided_backprop(model: &ModelState, input: &Tensor, target: usize, seed: SaliencySeed) -> Result<SaliencyMap> {
    guided_backprop_with(model, input, target, seed, ChannelReduction::MaxAbs)
}

pub fn guided_backprop_with(
    model: &ModelState,
    input: &Tensor,
    target: usize,
    seed: SaliencySeed,
    reduction: ChannelReduction,
) -> Result<SaliencyMap> {
    let g = input_gradient(model, input, target, seed, GradientRule::Guided)?;
    Ok(SaliencyMap { values: reduce_channels_with(&g, reduction)?, target })
}

pub fn vanilla_gradient(model: &ModelState, input: &Tensor, target: usize, seed: SaliencySeed) -> Result<SaliencyMap> {
    let g = input_gradient(model, input, target, seed, GradientRule::Vanilla)?;
    Ok(SaliencyMap { values: reduce_channels(&g)?, target })
}

/// Original on the left; on the right the original blended toward red by the
/// map value, so an all-zero map reproduces the original.
pub fn overlay(image: &RgbImage, map: &SaliencyMap) -> Result<RgbImage> {
    let (w, h) = image.dimensions();
    if (map.height(), map.width()) != (h as usize, w as usize) {
        return Err(FcnaError::shape("overlay", format!("{h} x {w}"), shape_str(map.values.shape())));
    }
    let mut out = RgbImage::new(2 * w, h);
    for (x, y, px) in image.enumerate_pixels() {
        out.put_pixel(x, y, *px);
        let a = map.values.data()[(y * w + x) as usize].clamp(0.0, 1.0);
        let blend = |v: u8, toward: f32| {
            if a == 0.0 {
                v
            } else {
                ((1.0 - a) * v as f32 + a * toward).round() as u8
            }
        };
        out.put_pixel(w + x, y, image::Rgb([blend(px[0], 255.0), blend(px[1], 0.0), blend(px[2], 0.0)]));
    }
    Ok(out)
}

pub fn render_overlay(image: &RgbImage, map: &SaliencyMap, path: &Path) -> Result<()> {
    save_png(&overlay(image, map)?, path)
}

/// `<id>_<scale>_<class>_gbp.png`
pub fn overlay_file_name(id: &str, scale: u32, class: usize) -> String {
    format!("{id}_{scale}_{class}_gbp.png")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::desk_preset;

    #[test]
    fn sum_abs_adds_channel_magnitudes() {
        let g = Tensor::new(vec![1, 3, 1, 2], vec![1.0f32, 0.0, -2.0, 0.5, 1.0, 1.5]).unwrap();
        let max = reduce_channels_with(&g, ChannelReduction::MaxAbs).unwrap();
        let sum = reduce_channels_with(&g, ChannelReduction::SumAbs).unwrap();
        // Pixel magnitudes (1, 2, 1) and (0, 0.5, 1.5).
        assert_eq!(max.data(), &[1.0, 0.75]);
        assert_eq!(sum.data(), &[1.0, 0.5]);
        assert_eq!("sum-abs".parse::<ChannelReduction>().unwrap(), ChannelReduction::SumAbs);
        assert!("l2".parse::<ChannelReduction>().is_err());
    }

    fn model() -> ModelState {
        ModelState::init(desk_preset(3, 24, 1.0 / 16.0).unwrap(), 4).unwrap()
    }

    fn input(side: usize) -> Tensor {
        Tensor::from_fn(&[1, 3, side, side], |i| ((i * 7919) % 101) as f32 / 101.0 - 0.5)
    }

    #[test]
    fn map_matches_input_and_is_normalised() {
        let m = model();
        for side in [24, 37] {
            let s = guided_backprop(&m, &input(side), 1, SaliencySeed::Pooled).unwrap();
            assert_eq!(s.values.shape(), &[side, side]);
            assert!(s.values.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let max = s.values.data().iter().copied().fold(0.0, f32::max);
            assert!(max == 0.0 || max == 1.0);
        }
    }

    #[test]
    fn target_out_of_range() {
        assert!(matches!(
            guided_backprop(&model(), &input(24), 3, SaliencySeed::Pooled),
            Err(FcnaError::LabelOutOfRange { label: 3, num_classes: 3 })
        ));
    }

    #[test]
    fn vanilla_matches_finite_differences_in_f64() {
        let m = model().cast::<f64>();
        let x = input(24).cast::<f64>();
        let g = input_gradient(&m, &x, 2, SaliencySeed::Pooled, GradientRule::Vanilla).unwrap();
        let score = |x: &Tensor<f64>| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            m.forward(x, Mode::Eval, &mut rng).unwrap().pooled.data()[2]
        };
        let eps = 1e-5;
        for idx in [0, 100, 700, 1500] {
            let mut plus = x.clone();
            plus.data_mut()[idx] += eps;
            let mut minus = x.clone();
            minus.data_mut()[idx] -= eps;
            let fd = (score(&plus) - score(&minus)) / (2.0 * eps);
            assert!((fd - g.data()[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "{idx}: {fd} vs {}", g.data()[idx]);
        }
    }

    #[test]
    fn location_seed_is_local() {
        let m = model();
        let s = guided_backprop(&m, &input(40), 0, SaliencySeed::Location { row: 0, col: 0 }).unwrap();
        // The top-left class-map cell cannot see the bottom-right corner.
        assert_eq!(s.values.get(&[39, 39]), 0.0);
        assert!(guided_backprop(&m, &input(40), 0, SaliencySeed::Location { row: 99, col: 0 }).is_err());
    }

    #[test]
    fn zero_map_leaves_original() {
        let img = RgbImage::from_fn(5, 4, |x, y| image::Rgb([x as u8 * 30, y as u8 * 50, 77]));
        let map = SaliencyMap { values: Tensor::zeros(&[4, 5]), target: 0 };
        let o = overlay(&img, &map).unwrap();
        assert_eq!(o.dimensions(), (10, 4));
        for (x, y, p) in img.enumerate_pixels() {
            assert_eq!(o.get_pixel(x, y), p);
            assert_eq!(o.get_pixel(x + 5, y), p);
        }
        let bad = SaliencyMap { values: Tensor::zeros(&[5, 4]), target: 0 };
        assert!(overlay(&img, &bad).is_err());
        assert_eq!(overlay_file_name("c00_0001", 256, 2), "c00_0001_256_2_gbp.png");
    }
}
