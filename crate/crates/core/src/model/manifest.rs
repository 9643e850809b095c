//! Network architecture as an ordered list of layer specs, with a
//! canonical `key = value` text form.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::nn::{self, Activation, LayerKind, LayerSpec, Padding, ParamCount};

use super::{ModelError, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// The full-size reference architecture on 256x256 inputs.
    Table1,
    /// Same layout at a quarter of the channel width, 64x64 inputs and a
    /// 256-unit hidden dense layer.
    Desk,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Table1 => "table1",
            Profile::Desk => "desk",
        }
    }

    pub fn input_size(self) -> usize {
        match self {
            Profile::Table1 => 256,
            Profile::Desk => 64,
        }
    }

    pub fn manifest(self, classes: usize) -> ArchitectureManifest {
        match self {
            Profile::Table1 => build_table1_with(classes),
            Profile::Desk => build_desk(classes),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Profile::Table1),
            "desk" => Ok(Profile::Desk),
            other => Err(ModelError::Manifest(format!("unknown profile {other:?} (expected table1 or desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureManifest {
    pub format_version: u32,
    pub profile: Profile,
    /// Per-sample `[height, width, channels]`.
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// One row of an architecture summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub kind: &'static str,
    pub output_shape: Vec<usize>,
    pub params: ParamCount,
}

fn conv(name: &str, filters: usize, padding: Padding) -> LayerSpec {
    LayerSpec::new(
        name,
        LayerKind::Conv2d {
            filters,
            kernel: (3, 3),
            padding,
            stride: (1, 1),
            activation: Activation::Relu,
        },
    )
}

fn pool(name: &str) -> LayerSpec {
    LayerSpec::new(name, LayerKind::MaxPool2d { window: (2, 2), stride: (2, 2) })
}

fn dropout(name: &str, rate: f64) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Dropout { rate })
}

fn dense(name: &str, units: usize, activation: Activation) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Dense { units, activation })
}

/// Shared layout; `widths` are the six conv widths.
fn layout(widths: [usize; 6], hidden: usize, classes: usize) -> Vec<LayerSpec> {
    vec![
        conv("conv2d_6", widths[0], Padding::Valid),
        LayerSpec::new("batch_normalization_1", LayerKind::BatchNorm { epsilon: BN_EPSILON, momentum: BN_MOMENTUM }),
        pool("max_pooling2d_5"),
        conv("conv2d_7", widths[1], Padding::Same),
        dropout("dropout_5", 0.25),
        pool("max_pooling2d_6"),
        conv("conv2d_8", widths[2], Padding::Same),
        dropout("dropout_6", 0.25),
        pool("max_pooling2d_7"),
        conv("conv2d_9", widths[3], Padding::Same),
        conv("conv2d_10", widths[4], Padding::Same),
        dropout("dropout_7", 0.25),
        pool("max_pooling2d_8"),
        conv("conv2d_11", widths[5], Padding::Same),
        dropout("dropout_8", 0.25),
        pool("max_pooling2d_9"),
        LayerSpec::new("flatten_1", LayerKind::Flatten),
        dense("dense_2", hidden, Activation::Relu),
        dropout("dropout_9", 0.4),
        dense("dense_3", classes, Activation::Softmax),
    ]
}

/// The full-size 35-class reference architecture.
pub fn build_table1() -> ArchitectureManifest {
    build_table1_with(35)
}

pub fn build_table1_with(classes: usize) -> ArchitectureManifest {
    ArchitectureManifest {
        format_version: MANIFEST_VERSION,
        profile: Profile::Table1,
        input_shape: vec![256, 256, 1],
        classes,
        layers: layout([24, 64, 64, 128, 128, 256], 2352, classes),
    }
}

pub fn build_desk(classes: usize) -> ArchitectureManifest {
    ArchitectureManifest {
        format_version: MANIFEST_VERSION,
        profile: Profile::Desk,
        input_shape: vec![64, 64, 1],
        classes,
        layers: layout([6, 16, 16, 32, 32, 64], 256, classes),
    }
}

impl ArchitectureManifest {
    /// Checks the shape chain and that the network ends in a softmax dense
    /// layer over `classes` units.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(ModelError::Manifest("manifest has no layers".into()));
        }
        let shapes = self.infer_shapes()?;
        match self.layers.last().map(|l| &l.kind) {
            Some(LayerKind::Dense { units, activation: Activation::Softmax }) if *units == self.classes => {}
            _ => {
                return Err(ModelError::Manifest(format!(
                    "last layer must be dense({}) with softmax",
                    self.classes
                )))
            }
        }
        debug_assert_eq!(shapes.last().map(|(_, s)| s.clone()), Some(vec![self.classes]));
        let mut names: Vec<&str> = self.layers.iter().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(ModelError::Manifest("layer names must be unique".into()));
        }
        Ok(())
    }

    /// Per-layer output shapes; errors name the first inconsistent layer.
    pub fn infer_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let shapes = nn::infer_shapes(&self.layers, &self.input_shape)?;
        Ok(self.layers.iter().map(|l| l.name.clone()).zip(shapes).collect())
    }

    pub fn count_params(&self) -> Result<ParamCount> {
        let (_, trainable, non_trainable) = nn::count_params(&self.layers, &self.input_shape)?;
        Ok(ParamCount { trainable, non_trainable })
    }

    pub fn summary(&self) -> Result<Vec<SummaryRow>> {
        let mut shape = self.input_shape.clone();
        let mut rows = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let params = l.param_count(&shape).map_err(|e| e.in_layer(&l.name))?;
            shape = l.output_shape(&shape).map_err(|e| e.in_layer(&l.name))?;
            rows.push(SummaryRow { name: l.name.clone(), kind: l.kind.name(), output_shape: shape.clone(), params });
        }
        Ok(rows)
    }

    /// Canonical text: fixed key order, one `layer` line per layer.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "format_version = {}", self.format_version).unwrap();
        writeln!(s, "profile = {}", self.profile).unwrap();
        writeln!(s, "input = {}", join_dims(&self.input_shape)).unwrap();
        writeln!(s, "classes = {}", self.classes).unwrap();
        for l in &self.layers {
            writeln!(s, "layer = {}", layer_to_text(l)).unwrap();
        }
        s
    }

    /// Parses the output of [`to_text`](Self::to_text). Unknown keys,
    /// duplicates and malformed values are errors naming the line.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let m = Self::from_key_values(&mut kv)?;
        kv.finish()?;
        Ok(m)
    }

    pub(crate) fn from_key_values(kv: &mut KeyValues) -> Result<Self> {
        let format_version: u32 = kv.parse_required("format_version")?;
        if format_version > MANIFEST_VERSION {
            return Err(ModelError::UnsupportedVersion { found: format_version, supported: MANIFEST_VERSION });
        }
        let profile: Profile = kv.required("profile")?.parse()?;
        let input_shape = parse_dims(&kv.required("input")?)?;
        let classes = kv.parse_required("classes")?;
        let layers = kv.take_all("layer").iter().map(|(line, v)| parse_layer(v).map_err(|e| at_line(*line, e))).collect::<Result<Vec<_>>>()?;
        let m = Self { format_version, profile, input_shape, classes, layers };
        m.validate()?;
        Ok(m)
    }
}

fn at_line(line: usize, e: ModelError) -> ModelError {
    match e {
        ModelError::Manifest(msg) => ModelError::Manifest(format!("line {line}: {msg}")),
        other => other,
    }
}

pub(crate) fn join_dims(d: &[usize]) -> String {
    d.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

pub(crate) fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|_| ModelError::Manifest(format!("bad dimensions {s:?}"))))
        .collect()
}

fn pair(s: &str) -> Result<(usize, usize)> {
    match parse_dims(s)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(ModelError::Manifest(format!("expected AxB, got {s:?}"))),
    }
}

fn layer_to_text(l: &LayerSpec) -> String {
    let attrs = match &l.kind {
        LayerKind::Conv2d { filters, kernel, padding, stride, activation } => format!(
            " filters={filters} kernel={}x{} padding={padding} stride={}x{} activation={activation}",
            kernel.0, kernel.1, stride.0, stride.1
        ),
        LayerKind::MaxPool2d { window, stride } => {
            format!(" window={}x{} stride={}x{}", window.0, window.1, stride.0, stride.1)
        }
        LayerKind::BatchNorm { epsilon, momentum } => format!(" epsilon={epsilon:e} momentum={momentum}"),
        LayerKind::Dropout { rate } => format!(" rate={rate}"),
        LayerKind::Dense { units, activation } => format!(" units={units} activation={activation}"),
        LayerKind::Flatten | LayerKind::Relu | LayerKind::Softmax => String::new(),
    };
    format!("{} {}{attrs}", l.name, l.kind.name())
}

fn parse_layer(s: &str) -> Result<LayerSpec> {
    let mut parts = s.split_whitespace();
    let (Some(name), Some(kind)) = (parts.next(), parts.next()) else {
        return Err(ModelError::Manifest(format!("layer line needs a name and a kind: {s:?}")));
    };
    let mut attrs: Vec<(&str, &str)> = Vec::new();
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| ModelError::Manifest(format!("bad attribute {p:?}")))?;
        attrs.push((k, v));
    }
    let mut get = |key: &str| -> Result<String> {
        let i = attrs
            .iter()
            .position(|(k, _)| *k == key)
            .ok_or_else(|| ModelError::Manifest(format!("{kind} layer {name} lacks {key}")))?;
        Ok(attrs.remove(i).1.to_string())
    };
    let bad = |what: &str, v: &str| ModelError::Manifest(format!("bad {what} {v:?} in layer {name}"));
    let kind = match kind {
        "conv2d" => {
            let filters = get("filters")?;
            let kernel = pair(&get("kernel")?)?;
            let padding = get("padding")?;
            let stride = pair(&get("stride")?)?;
            let activation = get("activation")?;
            LayerKind::Conv2d {
                filters: filters.parse().map_err(|_| bad("filters", &filters))?,
                kernel,
                padding: padding.parse().map_err(|_| bad("padding", &padding))?,
                stride,
                activation: activation.parse().map_err(|_| bad("activation", &activation))?,
            }
        }
        "maxpool2d" => LayerKind::MaxPool2d { window: pair(&get("window")?)?, stride: pair(&get("stride")?)? },
        "batchnorm" => {
            let e = get("epsilon")?;
            let m = get("momentum")?;
            LayerKind::BatchNorm {
                epsilon: e.parse().map_err(|_| bad("epsilon", &e))?,
                momentum: m.parse().map_err(|_| bad("momentum", &m))?,
            }
        }
        "dropout" => {
            let r = get("rate")?;
            LayerKind::Dropout { rate: r.parse().map_err(|_| bad("rate", &r))? }
        }
        "flatten" => LayerKind::Flatten,
        "dense" => {
            let u = get("units")?;
            let a = get("activation")?;
            LayerKind::Dense {
                units: u.parse().map_err(|_| bad("units", &u))?,
                activation: a.parse().map_err(|_| bad("activation", &a))?,
            }
        }
        "relu" => LayerKind::Relu,
        "softmax" => LayerKind::Softmax,
        other => return Err(ModelError::Manifest(format!("unknown layer kind {other:?}"))),
    };
    if let Some((k, _)) = attrs.first() {
        return Err(ModelError::Manifest(format!("unexpected attribute {k:?} in layer {name}")));
    }
    let spec = LayerSpec::new(name, kind);
    spec.validate().map_err(|e| ModelError::Manifest(format!("layer {name}: {e}")))?;
    Ok(spec)
}

/// Ordered `key = value` lines; `#` starts a comment line.
pub(crate) struct KeyValues {
    entries: Vec<(usize, String, String)>,
}

impl KeyValues {
    pub(crate) fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Manifest(format!("line {}: expected key = value", i + 1)))?;
            entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub(crate) fn take(&mut self, key: &str) -> Result<Option<String>> {
        let found: Vec<usize> = self.entries.iter().enumerate().filter(|(_, e)| e.1 == key).map(|(i, _)| i).collect();
        match found.as_slice() {
            [] => Ok(None),
            [i] => Ok(Some(self.entries.remove(*i).2)),
            [_, second, ..] => Err(ModelError::Manifest(format!(
                "line {}: duplicate key {key}",
                self.entries[*second].0
            ))),
        }
    }

    pub(crate) fn required(&mut self, key: &str) -> Result<String> {
        self.take(key)?.ok_or_else(|| ModelError::Manifest(format!("missing key {key}")))
    }

    pub(crate) fn parse_required<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.required(key)?;
        v.parse().map_err(|_| ModelError::Manifest(format!("bad value {v:?} for {key}")))
    }

    pub(crate) fn take_all(&mut self, key: &str) -> Vec<(usize, String)> {
        let (taken, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.entries).into_iter().partition(|e| e.1 == key);
        self.entries = rest;
        taken.into_iter().map(|(line, _, v)| (line, v)).collect()
    }

    pub(crate) fn finish(self) -> Result<()> {
        match self.entries.first() {
            None => Ok(()),
            Some((line, k, _)) => Err(ModelError::Manifest(format!("line {line}: unknown key {k}"))),
        }
    }
}
