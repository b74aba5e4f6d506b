//! Declarative model description, its canonical text form, shape
//! propagation, and the built-in presets.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ops::conv_output_size;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2,
    Relu,
    Flatten,
    Dense {
        units: usize,
    },
    Dropout {
        rate: f64,
    },
    SoftmaxOutput,
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec::Dropout { rate }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. })
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    /// Piecewise-linear layers (zero second derivative almost everywhere).
    pub fn is_piecewise_linear(&self) -> bool {
        !matches!(self, LayerSpec::SoftmaxOutput)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => write!(f, "conv({out_channels},{kernel},{stride},{padding})"),
            LayerSpec::MaxPool2 => write!(f, "maxpool2"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::Dense { units } => write!(f, "dense({units})"),
            LayerSpec::Dropout { rate } => write!(f, "dropout({rate})"),
            LayerSpec::SoftmaxOutput => write!(f, "softmax"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) => {
                let close = s
                    .strip_suffix(')')
                    .ok_or_else(|| Error::InvalidSpec(format!("unclosed `(` in `{s}`")))?;
                (&s[..open], close[open + 1..].split(',').map(str::trim).collect::<Vec<_>>())
            }
            None => (s, Vec::new()),
        };
        let ints = |n: usize| -> Result<Vec<usize>> {
            if args.len() != n {
                return Err(Error::InvalidSpec(format!("`{s}` takes {n} argument(s)")));
            }
            args.iter()
                .map(|a| {
                    a.parse::<usize>()
                        .map_err(|_| Error::InvalidSpec(format!("bad integer `{a}` in `{s}`")))
                })
                .collect()
        };
        let no_args = |layer: LayerSpec| -> Result<LayerSpec> {
            if args.is_empty() {
                Ok(layer)
            } else {
                Err(Error::InvalidSpec(format!("`{name}` takes no arguments")))
            }
        };
        match name.trim().to_ascii_lowercase().as_str() {
            "conv" => {
                let v = ints(4)?;
                Ok(LayerSpec::conv(v[0], v[1], v[2], v[3]))
            }
            "dense" => Ok(LayerSpec::dense(ints(1)?[0])),
            "dropout" => {
                if args.len() != 1 {
                    return Err(Error::InvalidSpec(format!("`{s}` takes 1 argument")));
                }
                let rate = args[0]
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidSpec(format!("bad rate in `{s}`")))?;
                Ok(LayerSpec::dropout(rate))
            }
            "maxpool2" => no_args(LayerSpec::MaxPool2),
            "relu" => no_args(LayerSpec::Relu),
            "flatten" => no_args(LayerSpec::Flatten),
            "softmax" => no_args(LayerSpec::SoftmaxOutput),
            other => Err(Error::InvalidSpec(format!("unknown layer `{other}`"))),
        }
    }
}

/// Output shape of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl Shape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Spatial {
                channels,
                height,
                width,
            } => vec![channels, height, width],
            Shape::Flat(n) => vec![n],
        }
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// `(channels, height, width)`
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub class_names: Vec<String>,
}

pub const DEFAULT_CLASSES: [&str; 3] = ["glioma", "menin", "tumor"];
pub const PRESETS: [&str; 2] = ["vgg-nano", "vgg-micro"];

/// VGG-style presets sized for 1×128×128 input and the three default classes.
///
/// `vgg-nano` has two conv blocks (8 and 16 channels); `vgg-micro` adds a
/// third block of 32 channels. Both share the head
/// `flatten, dense(128), relu, dropout(0.5), dense(K), softmax`.
pub fn preset(name: &str) -> Result<ModelSpec> {
    let blocks: &[usize] = match name {
        "vgg-nano" => &[8, 16],
        "vgg-micro" => &[8, 16, 32],
        _ => {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
                valid: PRESETS.join(", "),
            })
        }
    };
    let mut layers = Vec::new();
    for &ch in blocks {
        layers.extend([
            LayerSpec::conv(ch, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::conv(ch, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::MaxPool2,
        ]);
    }
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::dense(128),
        LayerSpec::Relu,
        LayerSpec::dropout(0.5),
        LayerSpec::dense(DEFAULT_CLASSES.len()),
        LayerSpec::SoftmaxOutput,
    ]);
    Ok(ModelSpec {
        input_shape: (1, 128, 128),
        layers,
        class_names: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
    })
}

impl ModelSpec {
    pub fn with_input_shape(mut self, channels: usize, height: usize, width: usize) -> Self {
        self.input_shape = (channels, height, width);
        self
    }

    /// Replaces the class list and resizes the last dense layer to match.
    pub fn with_classes<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        self.class_names = names.iter().map(|s| s.as_ref().to_string()).collect();
        let k = self.class_names.len();
        if let Some(LayerSpec::Dense { units }) = self
            .layers
            .iter_mut()
            .rev()
            .find(|l| matches!(l, LayerSpec::Dense { .. }))
        {
            *units = k;
        }
        self
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Index of the deepest convolution.
    pub fn last_conv(&self) -> Option<usize> {
        self.layers.iter().rposition(LayerSpec::is_conv)
    }

    /// One-line text that identifies the architecture; stored in weight
    /// files and accepted by [`str::parse`].
    pub fn canonical(&self) -> String {
        let (c, h, w) = self.input_shape;
        let layers: Vec<String> = self.layers.iter().map(ToString::to_string).collect();
        format!(
            "input={c}x{h}x{w};layers={};classes={}",
            layers.join(","),
            self.class_names.join(",")
        )
    }

    /// Propagates shapes through every layer and returns each layer's
    /// output shape; errors name the first offending layer.
    pub fn output_shapes(&self) -> Result<Vec<Shape>> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidSpec(format!("input shape {c}x{h}x{w} has a zero dimension")));
        }
        if self.class_names.is_empty() {
            return Err(Error::InvalidSpec("no class names".into()));
        }
        for name in &self.class_names {
            if name.is_empty() || name.contains([',', ';', '\n', '=']) {
                return Err(Error::InvalidSpec(format!("bad class name {name:?}")));
            }
        }
        let mut shape = Shape::Spatial {
            channels: c,
            height: h,
            width: w,
        };
        let mut seen_conv = false;
        let mut shapes = Vec::with_capacity(self.layers.len());
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |reason: String| Error::InvalidLayer { layer: i, reason };
            shape = match (*layer, shape) {
                (
                    LayerSpec::Conv {
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    },
                    Shape::Spatial { height, width, .. },
                ) => {
                    if out_channels == 0 {
                        return Err(bad("conv needs at least one output channel".into()));
                    }
                    let oh = conv_output_size(height, kernel, stride, padding);
                    let ow = conv_output_size(width, kernel, stride, padding);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => {
                            seen_conv = true;
                            Shape::Spatial {
                                channels: out_channels,
                                height: oh,
                                width: ow,
                            }
                        }
                        _ => {
                            return Err(bad(format!(
                                "kernel {kernel} (stride {stride}, pad {padding}) does not fit {height}x{width}"
                            )))
                        }
                    }
                }
                (LayerSpec::Conv { .. }, Shape::Flat(_)) => {
                    return Err(bad("conv after flatten".into()))
                }
                (
                    LayerSpec::MaxPool2,
                    Shape::Spatial {
                        channels,
                        height,
                        width,
                    },
                ) => {
                    if height % 2 != 0 || width % 2 != 0 {
                        return Err(bad(format!("maxpool2 on odd spatial size {height}x{width}")));
                    }
                    Shape::Spatial {
                        channels,
                        height: height / 2,
                        width: width / 2,
                    }
                }
                (LayerSpec::MaxPool2, Shape::Flat(_)) => {
                    return Err(bad("maxpool2 after flatten".into()))
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::Dropout { rate }, s) => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(bad(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    s
                }
                (LayerSpec::Flatten, s @ Shape::Spatial { .. }) => {
                    if !seen_conv {
                        return Err(bad("flatten needs a convolution before it".into()));
                    }
                    Shape::Flat(s.numel())
                }
                (LayerSpec::Flatten, Shape::Flat(_)) => {
                    return Err(bad("input is already flat".into()))
                }
                (LayerSpec::Dense { units }, Shape::Flat(_)) => {
                    if units == 0 {
                        return Err(bad("dense needs at least one unit".into()));
                    }
                    Shape::Flat(units)
                }
                (LayerSpec::Dense { .. }, Shape::Spatial { .. }) => {
                    return Err(bad("dense needs a flattened input (missing flatten)".into()))
                }
                (LayerSpec::SoftmaxOutput, s) => {
                    if i != last {
                        return Err(bad("softmax must be the last layer".into()));
                    }
                    match s {
                        Shape::Flat(k) if k == self.class_names.len() => s,
                        Shape::Flat(k) => {
                            return Err(bad(format!(
                                "{k} outputs but {} class names",
                                self.class_names.len()
                            )))
                        }
                        Shape::Spatial { .. } => {
                            return Err(bad("softmax needs a flattened input".into()))
                        }
                    }
                }
            };
            shapes.push(shape);
        }
        if self.layers.last() != Some(&LayerSpec::SoftmaxOutput) {
            return Err(Error::InvalidSpec("last layer must be softmax".into()));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.output_shapes().map(|_| ())
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    /// Parses the canonical form. Whitespace, newlines and `#` comment lines
    /// are ignored so the same text works as a spec file.
    fn from_str(s: &str) -> Result<Self> {
        let text: String = s
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(|l| l.chars())
            .filter(|c| !c.is_whitespace())
            .collect();
        let mut input = None;
        let mut layers = None;
        let mut classes = None;
        for part in text.split(';').filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidSpec(format!("expected key=value, got `{part}`")))?;
            match key {
                "input" => {
                    let dims: Vec<usize> = value
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::InvalidSpec(format!("bad input shape `{value}`")))?;
                    if dims.len() != 3 {
                        return Err(Error::InvalidSpec(format!("input must be CxHxW, got `{value}`")));
                    }
                    input = Some((dims[0], dims[1], dims[2]));
                }
                "layers" => {
                    // split on commas outside parentheses
                    let mut items = Vec::new();
                    let mut depth = 0usize;
                    let mut start = 0;
                    for (i, ch) in value.char_indices() {
                        match ch {
                            '(' => depth += 1,
                            ')' => depth = depth.saturating_sub(1),
                            ',' if depth == 0 => {
                                items.push(&value[start..i]);
                                start = i + 1;
                            }
                            _ => {}
                        }
                    }
                    items.push(&value[start..]);
                    layers = Some(
                        items
                            .into_iter()
                            .filter(|s| !s.is_empty())
                            .map(str::parse)
                            .collect::<Result<Vec<LayerSpec>>>()?,
                    );
                }
                "classes" => {
                    classes = Some(value.split(',').map(str::to_string).collect::<Vec<_>>());
                }
                other => return Err(Error::InvalidSpec(format!("unknown key `{other}`"))),
            }
        }
        Ok(ModelSpec {
            input_shape: input.ok_or_else(|| Error::InvalidSpec("missing input=".into()))?,
            layers: layers.ok_or_else(|| Error::InvalidSpec("missing layers=".into()))?,
            class_names: classes.ok_or_else(|| Error::InvalidSpec("missing classes=".into()))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelSpec {
        ModelSpec {
            input_shape: (1, 8, 8),
            layers: vec![
                LayerSpec::conv(2, 3, 1, 1),
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::dense(3),
                LayerSpec::SoftmaxOutput,
            ],
            class_names: vec!["a".into(), "b".into(), "c".into()],
        }
    }

    #[test]
    fn toy_shapes() {
        let shapes = toy().output_shapes().unwrap();
        assert_eq!(shapes[2].dims(), vec![2, 4, 4]);
        assert_eq!(shapes[3], Shape::Flat(32));
        assert_eq!(shapes[5], Shape::Flat(3));
    }

    #[test]
    fn dense_without_flatten_names_layer() {
        let mut spec = toy();
        spec.layers.remove(3);
        match spec.validate() {
            Err(Error::InvalidLayer { layer, reason }) => {
                assert_eq!(layer, 3);
                assert!(reason.contains("flatten"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flatten_requires_prior_conv() {
        let spec = ModelSpec {
            input_shape: (1, 4, 4),
            layers: vec![LayerSpec::Flatten, LayerSpec::dense(2), LayerSpec::SoftmaxOutput],
            class_names: vec!["a".into(), "b".into()],
        };
        assert!(matches!(spec.validate(), Err(Error::InvalidLayer { layer: 0, .. })));
    }

    #[test]
    fn softmax_must_be_last_and_present() {
        let mut spec = toy();
        spec.layers.insert(4, LayerSpec::SoftmaxOutput);
        assert!(matches!(spec.validate(), Err(Error::InvalidLayer { layer: 4, .. })));
        let mut spec = toy();
        spec.layers.pop();
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn class_count_must_match_units() {
        let mut spec = toy();
        spec.class_names.pop();
        assert!(matches!(spec.validate(), Err(Error::InvalidLayer { layer: 5, .. })));
    }

    #[test]
    fn vgg_nano_flatten_size() {
        let spec = preset("vgg-nano").unwrap();
        let shapes = spec.output_shapes().unwrap();
        let flatten = spec.layers.iter().position(|l| *l == LayerSpec::Flatten).unwrap();
        assert_eq!(shapes[flatten], Shape::Flat(16 * 32 * 32));
        assert_eq!(spec.num_classes(), 3);
    }

    #[test]
    fn vgg_micro_has_third_block() {
        let spec = preset("vgg-micro").unwrap();
        let convs: Vec<usize> = spec
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { out_channels, .. } => Some(*out_channels),
                _ => None,
            })
            .collect();
        assert_eq!(convs, vec![8, 8, 16, 16, 32, 32]);
        spec.validate().unwrap();
    }

    #[test]
    fn unknown_preset_lists_valid_names() {
        let err = preset("resnet").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("vgg-nano") && msg.contains("vgg-micro"), "{msg}");
    }

    #[test]
    fn canonical_text_parses_back() {
        for spec in [toy(), preset("vgg-micro").unwrap().with_classes(&["x", "y"])] {
            let text = spec.canonical();
            let parsed: ModelSpec = text.parse().unwrap();
            assert_eq!(parsed, spec);
        }
        let multi = "# toy\ninput = 1x8x8;\nlayers = conv(2,3,1,1), relu, maxpool2,\n flatten, dense(3), softmax;\nclasses=a,b,c\n";
        assert_eq!(multi.parse::<ModelSpec>().unwrap(), toy());
    }

    #[test]
    fn with_classes_resizes_head() {
        let spec = preset("vgg-nano").unwrap().with_classes(&["p", "q"]);
        spec.validate().unwrap();
        assert_eq!(spec.layers[spec.layers.len() - 2], LayerSpec::dense(2));
    }
}
