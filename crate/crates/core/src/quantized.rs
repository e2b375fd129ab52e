//! A network lowered to a concrete numeric semantics.
//!
//! This is the single quantization point: weights and biases are converted
//! once (fixed-point conversion or binary32 rounding) and activation lookup
//! tables are turned into step functions over the quantized domain. The
//! interpreter, the SMT encoder, and invariant inference all read the same
//! [`QuantizedNetwork`], so they cannot disagree on constants.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::fixedpoint::{self, FxpConfig, FxpError, QuantSpec};
use crate::lut::{self, LookupTable, LutError};
use crate::model::{Activation, ModelIR};
use crate::property::f32_down;

#[derive(Debug, Error)]
pub enum QuantizeError {
    #[error("no lookup table supplied for {0} activations")]
    MissingTable(Activation),
    #[error(transparent)]
    Fxp(#[from] FxpError),
    #[error(transparent)]
    Lut(#[from] LutError),
}

/// Lookup tables by activation.
#[derive(Debug, Clone, Default)]
pub struct TableSet {
    tables: HashMap<Activation, Arc<LookupTable>>,
}

impl TableSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Shipped sigmoid and tanh tables (ε = 0.002).
    pub fn defaults() -> Result<Self, LutError> {
        let mut set = Self::new();
        for act in [Activation::Sigmoid, Activation::Tanh] {
            set.insert(act, lut::default_lut(act)?);
        }
        Ok(set)
    }

    /// Shipped tables for just the activations `model` uses.
    pub fn for_model(model: &ModelIR) -> Result<Self, LutError> {
        let mut set = Self::new();
        for layer in model.layers() {
            let act = layer.activation;
            if act.needs_table() && set.get(act).is_none() {
                set.insert(act, lut::default_lut(act)?);
            }
        }
        Ok(set)
    }

    pub fn insert(&mut self, act: Activation, table: LookupTable) {
        self.tables.insert(act, Arc::new(table));
    }

    pub fn get(&self, act: Activation) -> Option<&LookupTable> {
        self.tables.get(&act).map(Arc::as_ref)
    }
}

/// Step function `u ↦ outputs[#{t ∈ thresholds : t < u}]`.
/// Thresholds are strictly increasing; consecutive outputs differ.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTable<V> {
    pub thresholds: Vec<V>,
    pub outputs: Vec<V>,
}

impl<V: Copy + PartialOrd> StepTable<V> {
    pub fn lookup(&self, u: V) -> V {
        self.outputs[self.thresholds.partition_point(|t| *t < u)]
    }

    /// Builds the compressed step function from sorted thresholds, with
    /// thresholds below every representable input (`always`) removed first.
    fn compress(thresholds: Vec<V>, outputs: Vec<V>, always: usize) -> Self {
        let mut ts = Vec::new();
        let mut os = vec![outputs[always]];
        for (j, t) in thresholds.into_iter().enumerate() {
            let out = outputs[always + j + 1];
            if ts.last() == Some(&t) {
                *os.last_mut().expect("non-empty") = out;
                // Merging may make the previous step redundant.
                if os.len() >= 2 && os[os.len() - 2] == out {
                    os.pop();
                    ts.pop();
                }
            } else if *os.last().expect("non-empty") != out {
                ts.push(t);
                os.push(out);
            }
        }
        StepTable { thresholds: ts, outputs: os }
    }
}

fn fixed_table(table: &LookupTable, cfg: &FxpConfig) -> Result<StepTable<i64>, FxpError> {
    let scale = (cfg.frac_bits() as f64).exp2();
    let (min, max) = (cfg.min_raw(), cfg.max_raw());
    // m < u·2^-F  ⇔  floor(m·2^F) < u  for integer u.
    let floors: Vec<f64> = table.midpoints().iter().map(|m| (m * scale).floor()).collect();
    let always = floors.iter().take_while(|&&t| t < min as f64).count();
    let thresholds: Vec<i64> = floors[always..].iter().take_while(|&&t| t < max as f64).map(|&t| t as i64).collect();
    let outputs = table
        .outputs()
        .iter()
        .map(|&y| fixedpoint::float_to_fxp(y, cfg).map(|v| v.raw()))
        .collect::<Result<Vec<_>, _>>()?;
    let outputs = outputs[..always + thresholds.len() + 1].to_vec();
    Ok(StepTable::compress(thresholds, outputs, always))
}

fn float_table(table: &LookupTable) -> StepTable<f32> {
    // m < u  ⇔  f32_down(m) < u  for binary32 u.
    let thresholds: Vec<f32> = table.midpoints().iter().map(|&m| f32_down(m) as f32).collect();
    let outputs: Vec<f32> = table.outputs().iter().map(|&y| y as f32).collect();
    StepTable::compress(thresholds, outputs, 0)
}

#[derive(Debug, Clone)]
pub struct QLayer<V> {
    pub weights: Vec<Vec<V>>,
    pub bias: Vec<V>,
    pub activation: Activation,
    pub table: Option<StepTable<V>>,
}

/// Layers with constants in the target semantics.
#[derive(Debug, Clone)]
pub enum QLayers {
    Fixed(FxpConfig, Vec<QLayer<i64>>),
    Float(Vec<QLayer<f32>>),
}

/// A quantized value: raw bits (fixed-point raw integer, or the binary32
/// bit pattern) and the real number it denotes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QValue {
    pub raw: i64,
    pub value: f64,
}

impl QValue {
    pub fn fixed(raw: i64, cfg: &FxpConfig) -> QValue {
        QValue { raw, value: cfg.denote(raw) }
    }

    pub fn float(v: f32) -> QValue {
        QValue { raw: v.to_bits() as i64, value: v as f64 }
    }

    pub fn as_f32(&self) -> f32 {
        f32::from_bits(self.raw as u32)
    }
}

#[derive(Debug, Clone)]
pub struct QuantizedNetwork {
    model: Arc<ModelIR>,
    quant: QuantSpec,
    layers: QLayers,
}

impl QuantizedNetwork {
    pub fn new(model: Arc<ModelIR>, quant: QuantSpec, tables: &TableSet) -> Result<Self, QuantizeError> {
        for l in model.layers() {
            if l.activation.needs_table() && tables.get(l.activation).is_none() {
                return Err(QuantizeError::MissingTable(l.activation));
            }
        }
        let layers = match quant {
            QuantSpec::Fixed(cfg) => {
                let q = |x: f64| fixedpoint::float_to_fxp(x, &cfg).map(|v| v.raw());
                let layers = model
                    .layers()
                    .iter()
                    .map(|l| {
                        Ok(QLayer {
                            weights: l
                                .weights
                                .iter()
                                .map(|row| row.iter().map(|&w| q(w)).collect::<Result<Vec<_>, _>>())
                                .collect::<Result<Vec<_>, _>>()?,
                            bias: l.bias.iter().map(|&b| q(b)).collect::<Result<Vec<_>, _>>()?,
                            activation: l.activation,
                            table: match tables.get(l.activation) {
                                Some(t) if l.activation.needs_table() => Some(fixed_table(t, &cfg)?),
                                _ => None,
                            },
                        })
                    })
                    .collect::<Result<Vec<_>, QuantizeError>>()?;
                QLayers::Fixed(cfg, layers)
            }
            QuantSpec::Float32 => QLayers::Float(
                model
                    .layers()
                    .iter()
                    .map(|l| QLayer {
                        weights: l.weights.iter().map(|row| row.iter().map(|&w| w as f32).collect()).collect(),
                        bias: l.bias.iter().map(|&b| b as f32).collect(),
                        activation: l.activation,
                        table: match tables.get(l.activation) {
                            Some(t) if l.activation.needs_table() => Some(float_table(t)),
                            _ => None,
                        },
                    })
                    .collect(),
            ),
        };
        Ok(QuantizedNetwork { model, quant, layers })
    }

    pub fn model(&self) -> &ModelIR {
        &self.model
    }

    pub fn model_arc(&self) -> &Arc<ModelIR> {
        &self.model
    }

    pub fn quant(&self) -> &QuantSpec {
        &self.quant
    }

    pub fn layers(&self) -> &QLayers {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.model.output_dim()
    }

    /// Denoted weights, biases and (for tabulated activations) the step table
    /// as `(thresholds, outputs)` in real values, per layer.
    pub fn denoted_layers(&self) -> Vec<DenotedLayer> {
        match &self.layers {
            QLayers::Fixed(cfg, layers) => layers
                .iter()
                .map(|l| DenotedLayer {
                    weights: l.weights.iter().map(|r| r.iter().map(|&w| cfg.denote(w)).collect()).collect(),
                    bias: l.bias.iter().map(|&b| cfg.denote(b)).collect(),
                    activation: l.activation,
                    table: l.table.as_ref().map(|t| StepTable {
                        thresholds: t.thresholds.iter().map(|&v| cfg.denote(v)).collect(),
                        outputs: t.outputs.iter().map(|&v| cfg.denote(v)).collect(),
                    }),
                })
                .collect(),
            QLayers::Float(layers) => layers
                .iter()
                .map(|l| DenotedLayer {
                    weights: l.weights.iter().map(|r| r.iter().map(|&w| w as f64).collect()).collect(),
                    bias: l.bias.iter().map(|&b| b as f64).collect(),
                    activation: l.activation,
                    table: l.table.as_ref().map(|t| StepTable {
                        thresholds: t.thresholds.iter().map(|&v| v as f64).collect(),
                        outputs: t.outputs.iter().map(|&v| v as f64).collect(),
                    }),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenotedLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub table: Option<StepTable<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DenseLayer;

    #[test]
    fn compress_merges_duplicates_and_flat_steps() {
        let t = StepTable::compress(vec![1, 1, 2, 3, 5], vec![0, 1, 2, 2, 2, 7], 0);
        assert_eq!(t.thresholds, vec![1, 5]);
        assert_eq!(t.outputs, vec![0, 2, 7]);
        for u in -3..8 {
            let full = [1, 1, 2, 3, 5].iter().filter(|&&x| x < u).count();
            assert_eq!(t.lookup(u), [0, 1, 2, 2, 2, 7][full]);
        }
    }

    #[test]
    fn fixed_sigmoid_table_matches_definition() {
        let table = lut::default_lut(Activation::Sigmoid).unwrap();
        for (i, f) in [(2, 4), (4, 4), (3, 9)] {
            let cfg = FxpConfig::new(i, f).unwrap();
            let step = fixed_table(&table, &cfg).unwrap();
            for raw in cfg.min_raw()..=cfg.max_raw() {
                let expect = fixedpoint::float_to_fxp(table.eval(cfg.denote(raw)), &cfg).unwrap().raw();
                assert_eq!(step.lookup(raw), expect, "Q({i},{f}) raw {raw}");
            }
        }
        let cfg = FxpConfig::new(4, 4).unwrap();
        assert_eq!(fixed_table(&table, &cfg).unwrap().lookup(0), 8);
    }

    #[test]
    fn float_table_matches_definition() {
        let table = lut::default_lut(Activation::Tanh).unwrap();
        let step = float_table(&table);
        let mut probes: Vec<f32> = table
            .midpoints()
            .iter()
            .flat_map(|&m| {
                let f = m as f32;
                [f.next_down(), f, f.next_up()]
            })
            .collect();
        probes.extend([f32::NAN, f32::INFINITY, f32::NEG_INFINITY, 0.0, -0.0, 1e-40]);
        for u in probes {
            assert_eq!(step.lookup(u).to_bits(), (table.eval(u as f64) as f32).to_bits(), "{u}");
        }
    }

    #[test]
    fn missing_table_is_reported() {
        let m = ModelIR::new(vec![DenseLayer::new(vec![vec![1.0]], vec![0.0], Activation::Tanh).unwrap()]).unwrap();
        let r = QuantizedNetwork::new(Arc::new(m), QuantSpec::Float32, &TableSet::new());
        assert!(matches!(r, Err(QuantizeError::MissingTable(Activation::Tanh))));
    }
}
