//! Declarative architecture descriptions and the built-in presets.

use std::fmt;
use std::str::FromStr;

use crate::error::{FcnaError, Result};
use crate::ops::ConvGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    /// 1×1 per-position abstraction.
    ConvP,
    /// Stride-2 convolution standing in for a pooling layer.
    ConvPool,
    GlobalPool,
    Softmax,
}

impl LayerKind {
    pub fn is_conv(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::ConvP | LayerKind::ConvPool)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::ConvP => "conv-p",
            LayerKind::ConvPool => "conv-pool",
            LayerKind::GlobalPool => "global-pool",
            LayerKind::Softmax => "softmax",
        }
    }
}

impl FromStr for LayerKind {
    type Err = FcnaError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "conv" => LayerKind::Conv,
            "conv-p" => LayerKind::ConvP,
            "conv-pool" => LayerKind::ConvPool,
            "global-pool" => LayerKind::GlobalPool,
            "softmax" => LayerKind::Softmax,
            other => return Err(FcnaError::InvalidSpec(format!("unknown layer kind {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub filters: usize,
    pub geometry: ConvGeometry,
    pub activation: Activation,
    pub dropout_rate: f64,
}

impl LayerSpec {
    pub fn conv(name: &str, filters: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Conv,
            filters,
            geometry: ConvGeometry::square(kernel, stride, pad),
            activation: Activation::Relu,
            dropout_rate: 0.0,
        }
    }

    pub fn conv_p(name: &str, filters: usize) -> Self {
        LayerSpec { kind: LayerKind::ConvP, ..Self::conv(name, filters, 1, 1, 0) }
    }

    pub fn conv_pool(name: &str, filters: usize, kernel: usize, pad: usize) -> Self {
        LayerSpec { kind: LayerKind::ConvPool, ..Self::conv(name, filters, kernel, 2, pad) }
    }

    pub fn global_pool() -> Self {
        LayerSpec {
            name: "global-pool".into(),
            kind: LayerKind::GlobalPool,
            filters: 0,
            geometry: ConvGeometry::square(1, 1, 0),
            activation: Activation::None,
            dropout_rate: 0.0,
        }
    }

    pub fn softmax() -> Self {
        LayerSpec { name: "softmax".into(), kind: LayerKind::Softmax, ..Self::global_pool() }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
    pub train_crop: usize,
    pub input_channels: usize,
}

/// Spatial size after each convolutional layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeTrace {
    pub stages: Vec<(String, usize, usize)>,
}

impl ShapeTrace {
    pub fn class_map(&self) -> (usize, usize) {
        let (_, h, w) = self.stages.last().expect("trace of a validated spec");
        (*h, *w)
    }
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, num_classes: usize, train_crop: usize) -> Result<Self> {
        let spec = NetworkSpec { layers, num_classes, train_crop, input_channels: 3 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.kind.is_conv())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FcnaError::InvalidSpec(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.input_channels == 0 {
            return bad("input_channels must be >= 1".into());
        }
        let n = self.layers.len();
        if n < 3 {
            return bad("need at least one convolution, a global pool and a softmax".into());
        }
        if self.layers[n - 2].kind != LayerKind::GlobalPool || self.layers[n - 1].kind != LayerKind::Softmax {
            return bad("stack must end with global-pool followed by softmax".into());
        }
        for (i, l) in self.layers[..n - 2].iter().enumerate() {
            if !l.kind.is_conv() {
                return bad(format!("layer {i} ({}) must be convolutional", l.name));
            }
            if l.filters == 0 {
                return bad(format!("layer {} has zero filters", l.name));
            }
            l.geometry.validate()?;
            if !(0.0..1.0).contains(&l.dropout_rate) {
                return bad(format!("layer {} dropout {} outside [0, 1)", l.name, l.dropout_rate));
            }
            match l.kind {
                LayerKind::ConvP if l.geometry != ConvGeometry::square(1, 1, 0) => {
                    return bad(format!("conv-p layer {} must be 1x1, stride 1, pad 0", l.name));
                }
                LayerKind::ConvPool if l.geometry.stride != (2, 2) => {
                    return bad(format!("conv-pool layer {} must have stride 2", l.name));
                }
                _ => {}
            }
            if self.layers[..i].iter().any(|o| o.name == l.name) {
                return bad(format!("duplicate layer name {}", l.name));
            }
        }
        let last = &self.layers[n - 3];
        if last.filters != self.num_classes {
            return bad(format!(
                "last convolution {} has {} filters, expected num_classes = {}",
                last.name, last.filters, self.num_classes
            ));
        }
        let min = self.min_input_size()?;
        if self.train_crop < min {
            return Err(FcnaError::CropBelowMinimum { crop: self.train_crop, min });
        }
        Ok(())
    }

    pub fn shape_trace(&self, height: usize, width: usize) -> Result<ShapeTrace> {
        let (mut h, mut w) = (height, width);
        let mut stages = Vec::new();
        for l in self.conv_layers() {
            (h, w) = l.geometry.out_dims((h, w), &l.name)?;
            stages.push((l.name.clone(), h, w));
        }
        Ok(ShapeTrace { stages })
    }

    /// Smallest square input side for which every layer has at least one
    /// output position.
    pub fn min_input_size(&self) -> Result<usize> {
        const LIMIT: usize = 1 << 16;
        (1..=LIMIT)
            .find(|&s| self.shape_trace(s, s).is_ok())
            .ok_or_else(|| FcnaError::InvalidSpec(format!("no input up to {LIMIT} fits the stack")))
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<ShapeTrace> {
        self.shape_trace(height, width).map_err(|_| FcnaError::InputTooSmall {
            height,
            width,
            min: self.min_input_size().unwrap_or(usize::MAX),
        })
    }

    /// Filter tensor shapes `(filters, in_channels, kh, kw)` per convolution.
    pub fn filter_shapes(&self) -> Vec<(String, [usize; 4])> {
        let mut c = self.input_channels;
        self.conv_layers()
            .map(|l| {
                let s = [l.filters, c, l.geometry.kernel.0, l.geometry.kernel.1];
                c = l.filters;
                (l.name.clone(), s)
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.filter_shapes().iter().map(|(_, s)| s.iter().product::<usize>() + s[0]).sum()
    }

    pub fn to_canonical_text(&self) -> String {
        self.to_string()
    }

    pub fn parse_canonical_text(text: &str) -> Result<Self> {
        text.parse()
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "fcna-spec 1")?;
        writeln!(f, "num_classes {}", self.num_classes)?;
        writeln!(f, "train_crop {}", self.train_crop)?;
        writeln!(f, "input_channels {}", self.input_channels)?;
        for l in &self.layers {
            if l.kind.is_conv() {
                let g = &l.geometry;
                writeln!(
                    f,
                    "layer {} {} {} {}x{} {}x{} {}x{} {} {}",
                    l.name,
                    l.kind.as_str(),
                    l.filters,
                    g.kernel.0,
                    g.kernel.1,
                    g.stride.0,
                    g.stride.1,
                    g.pad.0,
                    g.pad.1,
                    match l.activation {
                        Activation::Relu => "relu",
                        Activation::None => "none",
                    },
                    l.dropout_rate
                )?;
            } else {
                writeln!(f, "layer {} {}", l.name, l.kind.as_str())?;
            }
        }
        Ok(())
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let err = || FcnaError::InvalidSpec(format!("expected AxB, got {s:?}"));
    let (a, b) = s.split_once('x').ok_or_else(err)?;
    Ok((a.parse().map_err(|_| err())?, b.parse().map_err(|_| err())?))
}

fn parse_num<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| FcnaError::InvalidSpec(format!("bad {what}: {s:?}")))
}

impl FromStr for NetworkSpec {
    type Err = FcnaError;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("fcna-spec 1") {
            return Err(FcnaError::InvalidSpec("missing 'fcna-spec 1' header".into()));
        }
        let (mut num_classes, mut train_crop, mut input_channels) = (None, None, 3);
        let mut layers = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts[..] {
                ["num_classes", v] => num_classes = Some(parse_num(v, "num_classes")?),
                ["train_crop", v] => train_crop = Some(parse_num(v, "train_crop")?),
                ["input_channels", v] => input_channels = parse_num(v, "input_channels")?,
                ["layer", name, kind] => {
                    let kind: LayerKind = kind.parse()?;
                    let base = match kind {
                        LayerKind::GlobalPool => LayerSpec::global_pool(),
                        LayerKind::Softmax => LayerSpec::softmax(),
                        _ => return Err(FcnaError::InvalidSpec(format!("layer {name} lacks parameters"))),
                    };
                    layers.push(LayerSpec { name: name.to_string(), ..base });
                }
                ["layer", name, kind, filters, kernel, stride, pad, act, dropout] => {
                    let kind: LayerKind = kind.parse()?;
                    if !kind.is_conv() {
                        return Err(FcnaError::InvalidSpec(format!("layer {name}: unexpected parameters")));
                    }
                    layers.push(LayerSpec {
                        name: name.to_string(),
                        kind,
                        filters: parse_num(filters, "filters")?,
                        geometry: ConvGeometry {
                            kernel: parse_pair(kernel)?,
                            stride: parse_pair(stride)?,
                            pad: parse_pair(pad)?,
                        },
                        activation: match act {
                            "relu" => Activation::Relu,
                            "none" => Activation::None,
                            other => return Err(FcnaError::InvalidSpec(format!("unknown activation {other:?}"))),
                        },
                        dropout_rate: parse_num(dropout, "dropout")?,
                    });
                }
                _ => return Err(FcnaError::InvalidSpec(format!("unrecognised line {line:?}"))),
            }
        }
        let spec = NetworkSpec {
            layers,
            num_classes: num_classes.ok_or_else(|| FcnaError::InvalidSpec("missing num_classes".into()))?,
            train_crop: train_crop.ok_or_else(|| FcnaError::InvalidSpec("missing train_crop".into()))?,
            input_channels,
        };
        spec.validate()?;
        Ok(spec)
    }
}

const TABLE1_CROP: usize = 224;

/// The twelve-convolution all-convolutional stack trained on 224×224 crops.
pub fn table1_preset(num_classes: usize) -> Result<NetworkSpec> {
    NetworkSpec::new(stack([96, 256, 384, 1024], num_classes, 11, 4), num_classes, TABLE1_CROP)
}

fn stack(widths: [usize; 4], num_classes: usize, k1: usize, s1: usize) -> Vec<LayerSpec> {
    let [a, b, c, d] = widths;
    vec![
        LayerSpec::conv("conv1", a, k1, s1, 0),
        LayerSpec::conv_p("conv-p1", a),
        LayerSpec::conv_pool("conv-pool1", a, 3, 1),
        LayerSpec::conv("conv2", b, 5, 1, 2),
        LayerSpec::conv_p("conv-p2", b),
        LayerSpec::conv_pool("conv-pool2", b, 3, 0),
        LayerSpec::conv("conv3", c, 3, 1, 1),
        LayerSpec::conv_p("conv-p3", c),
        LayerSpec::conv_pool("conv-pool3", c, 3, 0).with_dropout(0.5),
        LayerSpec::conv("conv4", d, 1, 1, 0),
        LayerSpec::conv("conv5", d, 1, 1, 0),
        LayerSpec::conv("conv6", num_classes, 1, 1, 0),
        LayerSpec::global_pool(),
        LayerSpec::softmax(),
    ]
}

/// Scaled-down analog of [`table1_preset`] for small crops.
///
/// With `r = train_crop / 224`:
/// * every hidden width becomes `max(1, round(width · width_multiplier))`;
/// * the first kernel becomes the odd integer nearest `11·r`, at least 3;
/// * the first stride becomes `max(1, round(4·r))`.
///
/// All other layers keep their kernel, stride and padding. At
/// `train_crop = 224` and `width_multiplier = 1` this reproduces the full stack.
pub fn desk_preset(num_classes: usize, train_crop: usize, width_multiplier: f64) -> Result<NetworkSpec> {
    if !(width_multiplier > 0.0 && width_multiplier.is_finite()) {
        return Err(FcnaError::InvalidSpec(format!("width multiplier must be positive, got {width_multiplier}")));
    }
    let r = train_crop as f64 / TABLE1_CROP as f64;
    let k1 = (2.0 * ((11.0 * r - 1.0) / 2.0).round() + 1.0).max(3.0) as usize;
    let s1 = (4.0 * r).round().max(1.0) as usize;
    let scale = |w: usize| ((w as f64 * width_multiplier).round() as usize).max(1);
    let layers = stack([scale(96), scale(256), scale(384), scale(1024)], num_classes, k1, s1);
    NetworkSpec::new(layers, num_classes, train_crop)
}
