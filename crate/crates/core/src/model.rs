//! Feedforward network representation and its two on-disk formats.
//!
//! A [`ModelIR`] is an ordered list of dense layers. Each neuron computes an
//! affine potential `u = Σ w·x + b` followed by an activation. Weights are kept
//! in double precision; quantization happens later, once, when a network is
//! lowered to a concrete numeric semantics.
//!
//! Two text formats are supported:
//!
//! - NNET (the ACAS Xu interchange format): comma separated, with a header
//!   carrying layer sizes and per-input normalization constants.
//! - A JSON interchange document (`format_version` 1) produced by the model
//!   exporter.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Activation functions supported by dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    /// Exact real-valued evaluation.
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Relu => u.max(0.0),
            Activation::Sigmoid => sigmoid(u),
            Activation::Tanh => u.tanh(),
            Activation::Linear => u,
        }
    }

    /// Whether this activation needs a lookup table in quantized semantics.
    pub fn needs_table(self) -> bool {
        matches!(self, Activation::Sigmoid | Activation::Tanh)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(ModelError::UnknownActivation(other.to_string())),
        }
    }
}

pub(crate) fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: non-numeric token {token:?}")]
    NonNumeric { line: usize, token: String },
    #[error("unexpected end of input: {0}")]
    Truncated(String),
    #[error("line {line}: trailing data after the last layer")]
    TrailingData { line: usize },
    #[error("unknown activation {0:?}")]
    UnknownActivation(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("layer {layer}: jagged weight matrix (row {row} has {found} columns, expected {expected})")]
    Jagged { layer: usize, row: usize, expected: usize, found: usize },
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("network has no layers")]
    Empty,
    #[error("input has {found} values, network expects {expected}")]
    InputDimension { expected: usize, found: usize },
}

/// One fully connected layer. `weights[i]` is the row of output neuron `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self, ModelError> {
        let layer = DenseLayer { weights, bias, activation };
        layer.check(0)?;
        Ok(layer)
    }

    pub fn rows(&self) -> usize {
        self.weights.len()
    }

    pub fn cols(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn check(&self, index: usize) -> Result<(), ModelError> {
        if self.weights.is_empty() {
            return Err(ModelError::InvalidLayer { layer: index, reason: "layer has no neurons".into() });
        }
        let cols = self.cols();
        if cols == 0 {
            return Err(ModelError::InvalidLayer { layer: index, reason: "layer has no inputs".into() });
        }
        for (row, w) in self.weights.iter().enumerate() {
            if w.len() != cols {
                return Err(ModelError::Jagged { layer: index, row, expected: cols, found: w.len() });
            }
        }
        if self.bias.len() != self.weights.len() {
            return Err(ModelError::InvalidLayer {
                layer: index,
                reason: format!("bias has {} entries for {} neurons", self.bias.len(), self.weights.len()),
            });
        }
        let finite = self.weights.iter().flatten().chain(&self.bias).all(|v| v.is_finite());
        if !finite {
            return Err(ModelError::InvalidLayer { layer: index, reason: "non-finite parameter".into() });
        }
        Ok(())
    }
}

/// Input normalization constants carried by NNET headers.
///
/// `means` and `ranges` may carry one extra trailing entry describing the
/// output scaling (ACAS Xu convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub means: Vec<f64>,
    pub ranges: Vec<f64>,
}

/// An immutable feedforward network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelIR {
    layers: Vec<DenseLayer>,
    normalization: Option<Normalization>,
}

impl ModelIR {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, ModelError> {
        Self::with_normalization(layers, None)
    }

    pub fn with_normalization(
        layers: Vec<DenseLayer>,
        normalization: Option<Normalization>,
    ) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::Empty);
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.check(i)?;
            if i > 0 && layer.cols() != layers[i - 1].rows() {
                return Err(ModelError::InvalidLayer {
                    layer: i,
                    reason: format!(
                        "expects {} inputs but previous layer has {} neurons",
                        layer.cols(),
                        layers[i - 1].rows()
                    ),
                });
            }
        }
        if let Some(n) = &normalization {
            let dim = layers[0].cols();
            let ok = n.mins.len() == dim
                && n.maxs.len() == dim
                && (n.means.len() == dim || n.means.len() == dim + 1)
                && n.ranges.len() == n.means.len();
            if !ok {
                return Err(ModelError::Schema("normalization vectors do not match the input dimension".into()));
            }
        }
        Ok(ModelIR { layers, normalization })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::rows).sum()
    }

    /// Folds the stored normalization into the network so that it accepts raw
    /// (physical) inputs: `x_norm = (x - mean) / range`. When an output mean and
    /// range are present, outputs are de-normalized as `y * range + mean`.
    ///
    /// Input clamping to `[min, max]` is not folded; state it in the property.
    pub fn apply_normalization(&self) -> ModelIR {
        let Some(norm) = &self.normalization else {
            return self.clone();
        };
        let dim = self.input_dim();
        let mut layers = self.layers.clone();
        let first = &mut layers[0];
        for (row, bias) in first.weights.iter_mut().zip(first.bias.iter_mut()) {
            for ((r, &range), &mean) in row.iter_mut().zip(&norm.ranges).zip(&norm.means).take(dim) {
                let range = if range == 0.0 { 1.0 } else { range };
                let w = *r / range;
                *bias -= w * mean;
                *r = w;
            }
        }
        if norm.means.len() == dim + 1 {
            let (mean, range) = (norm.means[dim], norm.ranges[dim]);
            let last = layers.last_mut().expect("non-empty");
            if last.activation == Activation::Linear {
                for (row, bias) in last.weights.iter_mut().zip(last.bias.iter_mut()) {
                    row.iter_mut().for_each(|w| *w *= range);
                    *bias = *bias * range + mean;
                }
            }
        }
        ModelIR { layers, normalization: None }
    }

    /// Double-precision forward pass with exact activations.
    pub fn forward_real(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::InputDimension { expected: self.input_dim(), found: x.len() });
        }
        let mut current = x.to_vec();
        for layer in &self.layers {
            current = layer
                .weights
                .iter()
                .zip(&layer.bias)
                .map(|(row, b)| {
                    let u = row.iter().zip(&current).map(|(w, x)| w * x).sum::<f64>() + b;
                    layer.activation.apply(u)
                })
                .collect();
        }
        Ok(current)
    }

    pub fn to_json(&self) -> String {
        let doc = JsonModel {
            format_version: 1,
            layers: self
                .layers
                .iter()
                .map(|l| JsonLayer {
                    kind: "dense".into(),
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                    activation: l.activation.name().into(),
                })
                .collect(),
            normalization: self.normalization.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("model serialization cannot fail")
    }

    /// Writes the network in NNET layout. Hidden layers must be ReLU and the
    /// output layer linear, which is all NNET can express.
    pub fn to_nnet(&self) -> Result<String, ModelError> {
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            let want = if i + 1 == n { Activation::Linear } else { Activation::Relu };
            if l.activation != want {
                return Err(ModelError::InvalidLayer {
                    layer: i,
                    reason: format!("NNET cannot express a {} layer here", l.activation),
                });
            }
        }
        let dim = self.input_dim();
        let mut sizes = vec![dim];
        sizes.extend(self.layers.iter().map(DenseLayer::rows));
        let max = sizes.iter().copied().max().unwrap_or(0);
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let mut out = String::from("// written by qnnv\n");
        out += &format!("{},{},{},{},\n", n, dim, self.output_dim(), max);
        out += &sizes.iter().map(|s| format!("{s},")).collect::<String>();
        out += "\n0,\n";
        let norm = self.normalization.clone().unwrap_or_else(|| Normalization {
            mins: vec![f64::MIN; dim],
            maxs: vec![f64::MAX; dim],
            means: vec![0.0; dim + 1],
            ranges: vec![1.0; dim + 1],
        });
        for v in [&norm.mins, &norm.maxs, &norm.means, &norm.ranges] {
            out += &join(v);
            out += ",\n";
        }
        for l in &self.layers {
            for row in &l.weights {
                out += &join(row);
                out += ",\n";
            }
            for b in &l.bias {
                out += &format!("{b:?},\n");
            }
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonModel {
    format_version: u32,
    layers: Vec<JsonLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<Normalization>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonLayer {
    #[serde(rename = "type")]
    kind: String,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: String,
}

/// Parses the JSON interchange format.
pub fn parse_json_model(text: &str) -> Result<ModelIR, ModelError> {
    let doc: JsonModel = serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))?;
    json_to_model(doc)
}

fn json_to_model(doc: JsonModel) -> Result<ModelIR, ModelError> {
    if doc.format_version != 1 {
        return Err(ModelError::Schema(format!("unsupported format_version {}", doc.format_version)));
    }
    let layers = doc
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            if l.kind != "dense" {
                return Err(ModelError::Schema(format!("layer {i}: unsupported layer type {:?}", l.kind)));
            }
            let activation = l.activation.parse()?;
            let layer = DenseLayer { weights: l.weights, bias: l.bias, activation };
            layer.check(i)?;
            Ok(layer)
        })
        .collect::<Result<Vec<_>, _>>()?;
    ModelIR::with_normalization(layers, doc.normalization)
}

/// One input/output pair recorded by the exporter using the source
/// framework's own float32 forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

/// Exporter output: the model plus reference fixtures.
#[derive(Debug, Clone)]
pub struct ExportBundle {
    pub model: ModelIR,
    pub fixtures: Vec<Fixture>,
    pub source_format: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonBundle {
    model: JsonModel,
    fixtures: Vec<Fixture>,
    source_format: String,
}

pub fn parse_export_bundle(text: &str) -> Result<ExportBundle, ModelError> {
    let doc: JsonBundle = serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))?;
    let model = json_to_model(doc.model)?;
    for (i, f) in doc.fixtures.iter().enumerate() {
        if f.input.len() != model.input_dim() || f.output.len() != model.output_dim() {
            return Err(ModelError::Schema(format!("fixture {i} has wrong dimensions")));
        }
    }
    Ok(ExportBundle { model, fixtures: doc.fixtures, source_format: doc.source_format })
}

/// Non-comment, non-blank lines with their 1-based line numbers.
struct NnetLines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last_line: usize,
}

impl<'a> NnetLines<'a> {
    fn new(text: &'a str) -> Self {
        NnetLines { inner: text.lines().enumerate(), last_line: 0 }
    }

    fn next_values(&mut self, what: &str) -> Result<(usize, Vec<f64>), ModelError> {
        for (idx, raw) in self.inner.by_ref() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            self.last_line = idx + 1;
            let values = line
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| ModelError::NonNumeric { line: idx + 1, token: t.to_string() }))
                .collect::<Result<Vec<_>, _>>()?;
            return Ok((idx + 1, values));
        }
        Err(ModelError::Truncated(format!("expected {what} after line {}", self.last_line)))
    }

    fn next_exact(&mut self, what: &str, n: usize) -> Result<Vec<f64>, ModelError> {
        let (line, values) = self.next_values(what)?;
        if values.len() != n {
            return Err(ModelError::DimensionMismatch { line, expected: n, found: values.len() });
        }
        Ok(values)
    }
}

fn as_count(line: usize, v: f64, what: &str) -> Result<usize, ModelError> {
    if v.fract() != 0.0 || !(1.0..=1e9).contains(&v) {
        return Err(ModelError::MalformedHeader {
            line,
            reason: format!("{what} must be a positive integer, got {v}"),
        });
    }
    Ok(v as usize)
}

/// Parses NNET text. Hidden layers are ReLU, the last layer is linear.
/// Normalization constants are retained in the metadata, not applied.
pub fn parse_nnet(text: &str) -> Result<ModelIR, ModelError> {
    let mut lines = NnetLines::new(text);

    let (line, head) = lines.next_values("header")?;
    if head.len() < 3 {
        return Err(ModelError::MalformedHeader {
            line,
            reason: "expected numLayers, inputSize, outputSize, maxLayerSize".into(),
        });
    }
    let num_layers = as_count(line, head[0], "layer count")?;
    let input_size = as_count(line, head[1], "input size")?;
    let output_size = as_count(line, head[2], "output size")?;

    let (line, sizes) = lines.next_values("layer sizes")?;
    if sizes.len() != num_layers + 1 {
        return Err(ModelError::DimensionMismatch { line, expected: num_layers + 1, found: sizes.len() });
    }
    let sizes = sizes.iter().map(|&s| as_count(line, s, "layer size")).collect::<Result<Vec<_>, _>>()?;
    if sizes[0] != input_size || sizes[num_layers] != output_size {
        return Err(ModelError::MalformedHeader {
            line,
            reason: "layer sizes disagree with declared input/output sizes".into(),
        });
    }

    // Deprecated "symmetric" flag line.
    lines.next_values("symmetric flag")?;
    let mins = lines.next_exact("input minimums", input_size)?;
    let maxs = lines.next_exact("input maximums", input_size)?;
    let (line, means) = lines.next_values("input means")?;
    if means.len() != input_size && means.len() != input_size + 1 {
        return Err(ModelError::DimensionMismatch { line, expected: input_size + 1, found: means.len() });
    }
    let ranges = lines.next_exact("input ranges", means.len())?;

    let mut layers = Vec::with_capacity(num_layers);
    for k in 0..num_layers {
        let (cols, rows) = (sizes[k], sizes[k + 1]);
        let weights = (0..rows).map(|_| lines.next_exact("weight row", cols)).collect::<Result<Vec<_>, _>>()?;
        let bias = (0..rows).map(|_| lines.next_exact("bias", 1).map(|v| v[0])).collect::<Result<Vec<_>, _>>()?;
        let activation = if k + 1 == num_layers { Activation::Linear } else { Activation::Relu };
        layers.push(DenseLayer { weights, bias, activation });
    }
    if let Ok((line, _)) = lines.next_values("") {
        return Err(ModelError::TrailingData { line });
    }
    ModelIR::with_normalization(layers, Some(Normalization { mins, maxs, means, ranges }))
}
