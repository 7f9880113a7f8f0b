//! Labeled image records with split assignment and per-scale paths.
//!
//! On disk a manifest is two files in its root directory:
//!
//! * `manifest.csv` with header `id,class_label,split,scale,path`, one row per
//!   (record, scale); paths are relative to the root.
//! * `manifest.meta`, `key = value` lines (`#` starts a comment):
//!   `num_classes`, `scales` (comma list), `class_names` (comma list),
//!   `channel_means` and `channel_stds` (three floats each), optional `pixels_per_mm`, and free-form
//!   `cue.<class>` lines describing synthetic class cues.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{FcnaError, Result};

pub const MANIFEST_CSV: &str = "manifest.csv";
pub const MANIFEST_META: &str = "manifest.meta";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = FcnaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(FcnaError::Manifest(format!("unknown split {other:?}"))),
        }
    }
}

/// Fractions of each class assigned to train, validation and test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.7, validation: 0.1, test: 0.2 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(FcnaError::Manifest(format!("split ratios must be in [0, 1] and sum to 1, got {parts:?}")));
        }
        Ok(())
    }

    /// Per-split counts for `n` items by largest remainder, so every count is
    /// within one item of its exact share.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let exact = [self.train, self.validation, self.test].map(|r| r * n as f64);
        let mut counts = exact.map(|e| e.floor() as usize);
        let mut left = n - counts.iter().sum::<usize>();
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: String,
    pub class_label: usize,
    pub split: Split,
    /// Scale → path relative to the manifest root.
    pub paths: BTreeMap<u32, PathBuf>,
}

/// Per-channel statistics of the train split used to standardize inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for ChannelStats {
    fn default() -> Self {
        ChannelStats { mean: [0.0; 3], std: [1.0; 3] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<Record>,
    pub scales: Vec<u32>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub channel_stats: ChannelStats,
    /// Physical sampling density, recorded but not used.
    pub pixels_per_mm: Option<f64>,
    /// Free-form per-class cue descriptions (synthetic data only).
    pub class_cues: BTreeMap<usize, String>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FcnaError::Manifest(m));
        if self.num_classes == 0 || self.class_names.len() != self.num_classes {
            return bad(format!("{} class names for {} classes", self.class_names.len(), self.num_classes));
        }
        if self.scales.is_empty() || self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("scales must be strictly ascending, got {:?}", self.scales));
        }
        for r in &self.records {
            if r.class_label >= self.num_classes {
                return bad(format!("record {} has label {} >= {}", r.id, r.class_label, self.num_classes));
            }
            if r.id.is_empty() || r.id.contains(',') {
                return bad(format!("invalid record id {:?}", r.id));
            }
            for s in &self.scales {
                if !r.paths.contains_key(s) {
                    return bad(format!("record {} lacks a path for scale {s}", r.id));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, record: &Record, scale: u32) -> Result<PathBuf> {
        record
            .paths
            .get(&scale)
            .map(|p| self.root.join(p))
            .ok_or_else(|| FcnaError::Manifest(format!("record {} has no scale {scale}", record.id)))
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for r in self.records_in(split) {
            counts[r.class_label] += 1;
        }
        counts
    }

    pub fn has_scale(&self, scale: u32) -> bool {
        self.scales.contains(&scale)
    }

    pub fn write(&self) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(&self.root).map_err(|e| FcnaError::io(&self.root, e))?;
        let csv_path = self.root.join(MANIFEST_CSV);
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(["id", "class_label", "split", "scale", "path"])?;
        for r in &self.records {
            for (scale, path) in &r.paths {
                let path = path.to_string_lossy().replace('\\', "/");
                w.write_record([
                    r.id.as_str(),
                    &r.class_label.to_string(),
                    r.split.as_str(),
                    &scale.to_string(),
                    &path,
                ])?;
            }
        }
        w.flush().map_err(|e| FcnaError::io(&csv_path, e))?;
        let meta_path = self.root.join(MANIFEST_META);
        fs::write(&meta_path, self.meta_text()).map_err(|e| FcnaError::io(&meta_path, e))
    }

    fn meta_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let mut s = String::from("# fcna dataset manifest metadata\n");
        s += &format!("num_classes = {}\n", self.num_classes);
        s += &format!("scales = {}\n", join(self.scales.iter().map(u32::to_string).collect()));
        s += &format!("class_names = {}\n", self.class_names.join(","));
        s += &format!("channel_means = {}\n", join(self.channel_stats.mean.iter().map(|v| format!("{v:?}")).collect()));
        s += &format!("channel_stds = {}\n", join(self.channel_stats.std.iter().map(|v| format!("{v:?}")).collect()));
        if let Some(ppm) = self.pixels_per_mm {
            s += &format!("pixels_per_mm = {ppm:?}\n");
        }
        for (c, cue) in &self.class_cues {
            s += &format!("cue.{c} = {cue}\n");
        }
        s
    }

    pub fn load(root: &Path) -> Result<Self> {
        let meta_path = root.join(MANIFEST_META);
        let meta = fs::read_to_string(&meta_path).map_err(|e| FcnaError::io(&meta_path, e))?;
        let mut manifest = parse_meta(root, &meta)?;

        let csv_path = root.join(MANIFEST_CSV);
        let mut reader = csv::Reader::from_path(&csv_path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["id", "class_label", "split", "scale", "path"] {
            return Err(FcnaError::Manifest(format!("unexpected csv header {headers:?}")));
        }
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for row in reader.records() {
            let row = row?;
            let field = |i: usize| row.get(i).unwrap_or_default();
            let parse_err = |what: &str| FcnaError::Manifest(format!("bad {what} in row {row:?}"));
            let label: usize = field(1).parse().map_err(|_| parse_err("class_label"))?;
            let split: Split = field(2).parse()?;
            let scale: u32 = field(3).parse().map_err(|_| parse_err("scale"))?;
            let id = field(0).to_string();
            let i = *index.entry(id.clone()).or_insert_with(|| {
                manifest.records.push(Record { id, class_label: label, split, paths: BTreeMap::new() });
                manifest.records.len() - 1
            });
            let rec = &mut manifest.records[i];
            if rec.class_label != label || rec.split != split {
                return Err(FcnaError::Manifest(format!("record {} has inconsistent rows", rec.id)));
            }
            rec.paths.insert(scale, PathBuf::from(field(4)));
        }
        manifest.validate()?;
        Ok(manifest)
    }
}

fn parse_list<T: FromStr>(v: &str, key: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|p| p.trim().parse().map_err(|_| FcnaError::Manifest(format!("bad value {p:?} for {key}"))))
        .collect()
}

fn parse_meta(root: &Path, text: &str) -> Result<DatasetManifest> {
    let mut m = DatasetManifest {
        root: root.to_path_buf(),
        records: Vec::new(),
        scales: Vec::new(),
        num_classes: 0,
        class_names: Vec::new(),
        channel_stats: ChannelStats::default(),
        pixels_per_mm: None,
        class_cues: BTreeMap::new(),
    };
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| FcnaError::Manifest(format!("expected key = value, got {line:?}")))?;
        match key {
            "num_classes" => m.num_classes = parse_list(value, key)?[0],
            "scales" => m.scales = parse_list(value, key)?,
            "class_names" => m.class_names = value.split(',').map(|s| s.trim().to_string()).collect(),
            "channel_means" | "channel_stds" => {
                let v: [f32; 3] = parse_list(value, key)?
                    .try_into()
                    .map_err(|_| FcnaError::Manifest(format!("{key} needs three values")))?;
                if key == "channel_means" {
                    m.channel_stats.mean = v;
                } else {
                    m.channel_stats.std = v;
                }
            }
            "pixels_per_mm" => m.pixels_per_mm = Some(parse_list(value, key)?[0]),
            k if k.starts_with("cue.") => {
                let class = k[4..].parse().map_err(|_| FcnaError::Manifest(format!("bad cue key {k:?}")))?;
                m.class_cues.insert(class, value.to_string());
            }
            other => return Err(FcnaError::Manifest(format!("unknown metadata key {other:?}"))),
        }
    }
    Ok(m)
}

/// Per-class stratified assignment of `labels` to splits, deterministic for a
/// given seed. Returns one split per input index.
pub fn stratified_split(labels: &[usize], ratios: SplitRatios, seed: u64) -> Result<Vec<Split>> {
    use rand::seq::SliceRandom;

    ratios.validate()?;
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![Split::Train; labels.len()];
    for class in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let mut rng = crate::rng::stream(seed, crate::rng::Purpose::Split, class as u64);
        members.shuffle(&mut rng);
        let [train, validation, _] = ratios.counts(members.len());
        for (j, &i) in members.iter().enumerate() {
            out[i] = if j < train {
                Split::Train
            } else if j < train + validation {
                Split::Validation
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}
