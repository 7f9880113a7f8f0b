//! Multi-resolution copies of a source image and pixel conversions.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;

use crate::error::{FcnaError, Result};
use crate::tensor::Tensor;

/// Output size when the long side is resized to `scale`, preserving aspect.
pub fn scaled_dims(width: u32, height: u32, scale: u32) -> (u32, u32) {
    let long = width.max(height) as f64;
    let fit = |side: u32| ((side as f64 * scale as f64 / long).round() as u32).max(1);
    if width >= height {
        (scale, fit(height))
    } else {
        (fit(width), scale)
    }
}

/// Resizes with a bilinear (triangle) filter whose support widens with the
/// reduction factor, so downsampling averages rather than aliases.
pub fn resize_long_side(source: &RgbImage, scale: u32) -> RgbImage {
    let (w, h) = scaled_dims(source.width(), source.height(), scale);
    if (w, h) == source.dimensions() {
        return source.clone();
    }
    imageops::resize(source, w, h, FilterType::Triangle)
}

/// One image per scale; refuses to upsample.
pub fn build_pyramid(source: &RgbImage, scales: &[u32], name: &str) -> Result<Vec<RgbImage>> {
    let long = source.width().max(source.height());
    scales
        .iter()
        .map(|&scale| {
            if scale > long {
                return Err(FcnaError::UpsampleRefused { path: name.to_string(), long_side: long, scale });
            }
            Ok(resize_long_side(source, scale))
        })
        .collect()
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| FcnaError::Image { path: path.to_path_buf(), source })?;
    Ok(img.to_rgb8())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| FcnaError::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| FcnaError::Image { path: path.to_path_buf(), source })
}

/// `3 × h × w` tensor with values in `[0, 1]`.
pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    let data = t.data_mut();
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    t
}

/// Crops a `3 × crop × crop` window with top-left `(row, col)`.
pub fn crop_to_tensor(img: &RgbImage, row: usize, col: usize, crop: usize) -> Tensor {
    let mut t = Tensor::zeros(&[3, crop, crop]);
    let data = t.data_mut();
    for y in 0..crop {
        for x in 0..crop {
            let px = img.get_pixel((col + x) as u32, (row + y) as u32);
            for c in 0..3 {
                data[(c * crop + y) * crop + x] = px[c] as f32 / 255.0;
            }
        }
    }
    t
}

/// Quantises a `3 × h × w` tensor in `[0, 1]` to 8-bit RGB.
pub fn tensor_to_image(t: &Tensor) -> Result<RgbImage> {
    let [3, h, w] = t.shape()[..] else {
        return Err(FcnaError::shape("tensor_to_image", "3 x h x w", crate::tensor::shape_str(t.shape())));
    };
    let data = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| {
            let v = data[(c * h + y as usize) * w + x as usize];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([at(0), at(1), at(2)])
    }))
}
