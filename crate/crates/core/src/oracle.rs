//! Bit-exact interpreter and brute-force verifier.
//!
//! [`interpret_quantized`] is the executable semantics of a
//! [`QuantizedNetwork`]; the SMT encoding mirrors it term for term, and every
//! solver counterexample is replayed through it. [`brute_force_verify`]
//! decides small instances by enumerating every quantized input in the box.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::fixedpoint::{add_raw, mul_raw, FxpConfig, QuantSpec};
use crate::interval::Box as IBox;
use crate::model::{Activation, ModelIR};
use crate::property::{CompiledProperty, Property, PropertyError};
use crate::quantized::{QLayer, QLayers, QValue, QuantizedNetwork};
use crate::verdict::{Counterexample, NeuronValue, Status, Trace, Verdict};

/// Default cap on the number of enumerated grid points.
pub const DEFAULT_GRID_LIMIT: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("expected {expected} inputs, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("input {index}: raw value {raw} is not representable")]
    RawOutOfRange { index: usize, raw: i64 },
    #[error("grid of {size} points exceeds the limit of {limit}")]
    GridTooLarge { size: u128, limit: u64 },
    #[error(transparent)]
    Property(#[from] PropertyError),
}

/// Runs the network on quantized inputs and records every neuron.
pub fn interpret_quantized(net: &QuantizedNetwork, input: &[QValue]) -> Result<Trace, OracleError> {
    if input.len() != net.input_dim() {
        return Err(OracleError::Dimension { expected: net.input_dim(), found: input.len() });
    }
    let layers = match net.layers() {
        QLayers::Fixed(cfg, layers) => {
            for (index, v) in input.iter().enumerate() {
                if v.raw < cfg.min_raw() || v.raw > cfg.max_raw() {
                    return Err(OracleError::RawOutOfRange { index, raw: v.raw });
                }
            }
            let mut x: Vec<i64> = input.iter().map(|v| v.raw).collect();
            let mut out = Vec::with_capacity(layers.len());
            for l in layers {
                let (next, neurons) = fixed_layer(l, &x, cfg);
                out.push(neurons);
                x = next;
            }
            out
        }
        QLayers::Float(layers) => {
            for (index, v) in input.iter().enumerate() {
                if v.raw < 0 || v.raw > u32::MAX as i64 {
                    return Err(OracleError::RawOutOfRange { index, raw: v.raw });
                }
            }
            let mut x: Vec<f32> = input.iter().map(|v| v.as_f32()).collect();
            let mut out = Vec::with_capacity(layers.len());
            for l in layers {
                let (next, neurons) = float_layer(l, &x);
                out.push(neurons);
                x = next;
            }
            out
        }
    };
    let inputs = match net.quant() {
        QuantSpec::Fixed(cfg) => input.iter().map(|v| QValue::fixed(v.raw, cfg)).collect(),
        QuantSpec::Float32 => input.iter().map(|v| QValue::float(v.as_f32())).collect(),
    };
    Ok(Trace { inputs, layers })
}

fn fixed_layer(l: &QLayer<i64>, x: &[i64], cfg: &FxpConfig) -> (Vec<i64>, Vec<NeuronValue>) {
    let mut ys = Vec::with_capacity(l.bias.len());
    let mut neurons = Vec::with_capacity(l.bias.len());
    for (row, &b) in l.weights.iter().zip(&l.bias) {
        let mut acc = 0;
        for (&w, &xi) in row.iter().zip(x) {
            acc = add_raw(acc, mul_raw(w, xi, cfg), cfg);
        }
        let u = add_raw(acc, b, cfg);
        let y = match (l.activation, &l.table) {
            (Activation::Relu, _) => u.max(0),
            (Activation::Linear, _) => u,
            (_, Some(t)) => t.lookup(u),
            (act, None) => unreachable!("{act} layer without a table"),
        };
        neurons.push(NeuronValue { pre: QValue::fixed(u, cfg), post: QValue::fixed(y, cfg) });
        ys.push(y);
    }
    (ys, neurons)
}

fn float_layer(l: &QLayer<f32>, x: &[f32]) -> (Vec<f32>, Vec<NeuronValue>) {
    let mut ys = Vec::with_capacity(l.bias.len());
    let mut neurons = Vec::with_capacity(l.bias.len());
    for (row, &b) in l.weights.iter().zip(&l.bias) {
        let u = float_potential(row, x, b);
        let y = match (l.activation, &l.table) {
            (Activation::Relu, _) => float_relu(u),
            (Activation::Linear, _) => u,
            (_, Some(t)) => t.lookup(u),
            (act, None) => unreachable!("{act} layer without a table"),
        };
        neurons.push(NeuronValue { pre: QValue::float(u), post: QValue::float(y) });
        ys.push(y);
    }
    (ys, neurons)
}

fn float_potential(row: &[f32], x: &[f32], b: f32) -> f32 {
    let mut acc = 0.0f32;
    for (&w, &xi) in row.iter().zip(x) {
        acc += w * xi;
    }
    acc + b
}

// Keeps -0 and NaN as they are, like the encoded `ite (u < 0) 0 u`.
fn float_relu(u: f32) -> f32 {
    if u < 0.0 {
        0.0
    } else {
        u
    }
}

/// Binary32 forward pass with the activations evaluated exactly (in binary64
/// and rounded) instead of through lookup tables.
pub fn interpret_float_exact(model: &ModelIR, x: &[f32]) -> Result<Vec<f32>, OracleError> {
    if x.len() != model.input_dim() {
        return Err(OracleError::Dimension { expected: model.input_dim(), found: x.len() });
    }
    let mut x = x.to_vec();
    for l in model.layers() {
        x = l
            .weights
            .iter()
            .zip(&l.bias)
            .map(|(row, &b)| {
                let row: Vec<f32> = row.iter().map(|&w| w as f32).collect();
                let u = float_potential(&row, &x, b as f32);
                match l.activation {
                    Activation::Relu => float_relu(u),
                    Activation::Linear => u,
                    act => act.apply(u as f64) as f32,
                }
            })
            .collect();
    }
    Ok(x)
}

/// Replays `input` and checks that it is a genuine counterexample: every
/// assume holds and some assert fails.
pub fn replay(net: &QuantizedNetwork, property: &CompiledProperty, input: &[QValue]) -> Result<Counterexample, String> {
    let trace = interpret_quantized(net, input).map_err(|e| e.to_string())?;
    if !property.assumes_hold(&trace.inputs) {
        return Err("witness violates an assume".into());
    }
    let outputs = trace.outputs();
    match property.first_violation(&trace.inputs, &outputs) {
        Some(violated_assert) => Ok(Counterexample { input_values: trace.inputs.clone(), violated_assert, trace }),
        None => Err("witness satisfies every assert".into()),
    }
}

/// One input coordinate of the enumeration grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridDim {
    /// Raw fixed-point values `lo..=hi`.
    Fixed { lo: i64, hi: i64 },
    /// Binary32 values in ascending order, by [`float_key`] `lo..=hi`.
    Float { lo: i64, hi: i64 },
}

impl GridDim {
    pub fn len(&self) -> u64 {
        match *self {
            GridDim::Fixed { lo, hi } | GridDim::Float { lo, hi } => (hi - lo + 1) as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn value(&self, i: u64, cfg: Option<&FxpConfig>) -> QValue {
        match *self {
            GridDim::Fixed { lo, .. } => QValue::fixed(lo + i as i64, cfg.expect("fixed grid")),
            GridDim::Float { lo, .. } => QValue::float(float_from_key(lo + i as i64)),
        }
    }
}

/// Order-preserving integer key of a binary32 value; `-0` sorts just below
/// `+0`.
pub fn float_key(x: f32) -> i64 {
    let b = x.to_bits();
    if b >> 31 == 1 {
        -((b & 0x7fff_ffff) as i64) - 1
    } else {
        b as i64
    }
}

pub fn float_from_key(k: i64) -> f32 {
    if k < 0 {
        f32::from_bits(((-(k + 1)) as u32) | 0x8000_0000)
    } else {
        f32::from_bits(k as u32)
    }
}

/// Every quantized point of a box, in lexicographic order (first coordinate
/// most significant).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantGrid {
    pub dims: Vec<GridDim>,
    config: Option<FxpConfig>,
}

impl QuantGrid {
    pub fn new(input: &IBox, quant: &QuantSpec) -> QuantGrid {
        let dims = input
            .dims()
            .iter()
            .map(|d| match quant {
                QuantSpec::Fixed(cfg) => {
                    let scale = (cfg.frac_bits() as f64).exp2();
                    GridDim::Fixed {
                        lo: ((d.lo * scale).ceil() as i64).max(cfg.min_raw()),
                        hi: ((d.hi * scale).floor() as i64).min(cfg.max_raw()),
                    }
                }
                QuantSpec::Float32 => {
                    let lo = if d.lo == 0.0 { float_key(-0.0) } else { float_key(d.lo as f32) };
                    GridDim::Float { lo, hi: float_key(d.hi as f32) }
                }
            })
            .collect();
        QuantGrid {
            dims,
            config: match quant {
                QuantSpec::Fixed(cfg) => Some(*cfg),
                QuantSpec::Float32 => None,
            },
        }
    }

    pub fn size(&self) -> u128 {
        self.dims.iter().map(|d| d.len() as u128).product()
    }

    /// The `index`-th point in lexicographic order.
    pub fn point(&self, mut index: u64) -> Vec<QValue> {
        let mut out = vec![QValue { raw: 0, value: 0.0 }; self.dims.len()];
        for (k, d) in self.dims.iter().enumerate().rev() {
            let n = d.len();
            out[k] = d.value(index % n, self.config.as_ref());
            index /= n;
        }
        out
    }
}

/// Decides `property` on `net` by exhaustive enumeration. Returns the first
/// lexicographic counterexample, or SAFE. Refuses grids above `limit`.
pub fn brute_force_verify(net: &QuantizedNetwork, property: &Property, limit: u64) -> Result<Verdict, OracleError> {
    let start = Instant::now();
    property.validate(net.input_dim(), net.output_dim())?;
    let compiled = property.compile(net.quant())?;
    let bx = match property.extract_box(net.input_dim(), net.quant()) {
        Ok(b) => b,
        Err(PropertyError::Vacuous(i)) => {
            let mut v = Verdict::new(Status::Safe, "oracle", start.elapsed());
            v.warnings.push(format!("vacuous property: no representable x[{i}] satisfies the assumes"));
            return Ok(v);
        }
        Err(e) => return Err(e.into()),
    };
    let grid = QuantGrid::new(&bx, net.quant());
    let size = grid.size();
    if size > limit as u128 {
        return Err(OracleError::GridTooLarge { size, limit });
    }
    let feasible = AtomicU64::new(0);
    let found = (0..size as u64).into_par_iter().find_map_first(|i| {
        let x = grid.point(i);
        if !compiled.assumes_hold(&x) {
            return None;
        }
        feasible.fetch_add(1, Ordering::Relaxed);
        let trace = interpret_quantized(net, &x).expect("grid points are representable");
        let outputs = trace.outputs();
        compiled.first_violation(&trace.inputs, &outputs).map(|violated_assert| Counterexample {
            input_values: trace.inputs.clone(),
            violated_assert,
            trace,
        })
    });
    let mut v = Verdict::new(if found.is_some() { Status::Unsafe } else { Status::Safe }, "oracle", start.elapsed());
    if found.is_none() && feasible.load(Ordering::Relaxed) == 0 {
        v.warnings.push("vacuous property: no grid point satisfies the assumes".into());
    }
    v.counterexample = found;
    Ok(v)
}
