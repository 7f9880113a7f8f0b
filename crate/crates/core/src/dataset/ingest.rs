//! Builds a manifest and pyramid from a directory of per-class subdirectories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::manifest::{stratified_split, ChannelStats, DatasetManifest, Record, SplitRatios};
use crate::dataset::pyramid::{build_pyramid, load_rgb, save_png};
use crate::dataset::synth::channel_stats;
use crate::error::{FcnaError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct IngestConfig {
    pub split_ratios: SplitRatios,
    pub seed: u64,
    pub scales: Vec<u32>,
    /// Classes with fewer images are rejected.
    pub min_per_class: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            split_ratios: SplitRatios::default(),
            seed: 0,
            scales: vec![256, 512, 1024, 2048],
            min_per_class: 96,
        }
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| FcnaError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| FcnaError::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn is_png(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Scans `image_dir/<class>/*.png`, splits each class, and writes one resized
/// copy per scale plus the manifest into `out_dir`.
pub fn build_manifest(image_dir: &Path, out_dir: &Path, cfg: &IngestConfig) -> Result<DatasetManifest> {
    cfg.split_ratios.validate()?;
    let mut scales = cfg.scales.clone();
    scales.sort_unstable();
    scales.dedup();
    if scales.is_empty() {
        return Err(FcnaError::Manifest("no scales requested".into()));
    }

    let mut class_names = Vec::new();
    let mut files: Vec<(usize, PathBuf)> = Vec::new();
    for dir in sorted_entries(image_dir)?.into_iter().filter(|p| p.is_dir()) {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().to_string();
        if name.contains(',') {
            return Err(FcnaError::Manifest(format!("class name {name:?} contains a comma")));
        }
        let images: Vec<PathBuf> = sorted_entries(&dir)?.into_iter().filter(|p| is_png(p)).collect();
        if images.len() < cfg.min_per_class {
            return Err(FcnaError::ClassTooSmall { class: name, count: images.len(), floor: cfg.min_per_class });
        }
        let label = class_names.len();
        class_names.push(name);
        files.extend(images.into_iter().map(|p| (label, p)));
    }
    if class_names.is_empty() {
        return Err(FcnaError::Manifest(format!("{} has no class subdirectories", image_dir.display())));
    }

    let labels: Vec<usize> = files.iter().map(|(l, _)| *l).collect();
    let splits = stratified_split(&labels, cfg.split_ratios, cfg.seed)?;
    let mut records = Vec::with_capacity(files.len());
    for ((label, path), split) in files.iter().zip(splits) {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        let id = format!("{}_{}", sanitize(&class_names[*label]), sanitize(&stem));
        let source = load_rgb(path)?;
        let pyramid = build_pyramid(&source, &scales, &path.display().to_string())?;
        let mut paths = BTreeMap::new();
        for (scale, level) in scales.iter().zip(&pyramid) {
            let rel = Path::new("images").join(scale.to_string()).join(format!("{id}.png"));
            save_png(level, &out_dir.join(&rel))?;
            paths.insert(*scale, rel);
        }
        records.push(Record { id, class_label: *label, split, paths });
    }
    let mut manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        records,
        scales,
        num_classes: class_names.len(),
        class_names,
        channel_stats: ChannelStats::default(),
        pixels_per_mm: None,
        class_cues: BTreeMap::new(),
    };
    manifest.channel_stats = channel_stats(&manifest)?;
    manifest.write()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::manifest::Split;
    use crate::dataset::pyramid::save_png;
    use image::RgbImage;

    fn corpus(per_class: &[usize]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                let img = RgbImage::from_pixel(40 + i as u32, 30, image::Rgb([c as u8 * 50, i as u8, 9]));
                save_png(&img, &dir.path().join(format!("artist{c}")).join(format!("img{i:02}.png"))).unwrap();
            }
        }
        dir
    }

    fn cfg(min: usize) -> IngestConfig {
        IngestConfig { split_ratios: SplitRatios::default(), seed: 3, scales: vec![16, 32], min_per_class: min }
    }

    #[test]
    fn splits_ten_per_class() {
        let src = corpus(&[10, 10]);
        let out = tempfile::tempdir().unwrap();
        let m = build_manifest(src.path(), out.path(), &cfg(5)).unwrap();
        assert_eq!(m.records.len(), 20);
        assert_eq!(m.class_counts(Split::Train), vec![7, 7]);
        assert_eq!(m.class_counts(Split::Validation), vec![1, 1]);
        assert_eq!(m.class_counts(Split::Test), vec![2, 2]);
        let reloaded = DatasetManifest::load(out.path()).unwrap();
        assert_eq!(reloaded, m);
        let first = &m.records[0];
        let img = load_rgb(&m.resolve(first, 32).unwrap()).unwrap();
        assert_eq!(img.width(), 32);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let src = corpus(&[10, 10]);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = build_manifest(src.path(), a.path(), &cfg(5)).unwrap();
        let mb = build_manifest(src.path(), b.path(), &cfg(5)).unwrap();
        assert_eq!(ma.records, mb.records);
        let read = |d: &Path| fs::read(d.join("manifest.csv")).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn small_class_is_rejected() {
        let src = corpus(&[10, 3]);
        let out = tempfile::tempdir().unwrap();
        match build_manifest(src.path(), out.path(), &cfg(96)) {
            Err(FcnaError::ClassTooSmall { count, floor: 96, .. }) => assert_eq!(count, 10),
            other => panic!("unexpected {other:?}"),
        }
        match build_manifest(src.path(), out.path(), &cfg(5)) {
            Err(FcnaError::ClassTooSmall { class, count: 3, .. }) => assert_eq!(class, "artist1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unreadable_image_is_an_error() {
        let src = corpus(&[6]);
        fs::write(src.path().join("artist0").join("broken.png"), b"not a png").unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(matches!(build_manifest(src.path(), out.path(), &cfg(1)), Err(FcnaError::Image { .. })));
    }
}
