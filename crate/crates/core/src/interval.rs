//! Interval invariant inference.
//!
//! Propagates an input box through the network layer by layer and yields a
//! sound `[lo, hi]` for every neuron's potential and activation. Arithmetic
//! is done in binary64 with outward rounding. For quantized semantics the
//! bounds additionally absorb rounding in the quantized arithmetic, and fall
//! back to the full representable range wherever overflow cannot be ruled
//! out, so they hold for the values the quantized interpreter computes.
//!
//! The resulting bounds are injected into the SMT encoding as redundant
//! assumptions that prune the solver's search.

use std::fmt::Write as _;

use thiserror::Error;

use crate::fixedpoint::FxpConfig;
use crate::lut::LookupTable;
use crate::model::{Activation, ModelIR};
use crate::quantized::{QLayers, QuantizedNetwork, StepTable};

#[derive(Debug, Error, PartialEq)]
pub enum IntervalError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("no lookup table for {0}")]
    MissingTable(Activation),
}

/// Closed interval with finite endpoints.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Interval {
        assert!(lo <= hi && lo.is_finite() && hi.is_finite(), "invalid interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    /// `None` when the endpoints are not a finite, ordered pair.
    pub fn checked(lo: f64, hi: f64) -> Option<Interval> {
        (lo <= hi && lo.is_finite() && hi.is_finite()).then_some(Interval { lo, hi })
    }

    pub fn point(x: f64) -> Interval {
        Interval::new(x, x)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn widen(&self, by: f64) -> Option<Interval> {
        Interval::checked((self.lo - by).next_down(), (self.hi + by).next_up())
    }

    fn scale(&self, w: f64) -> (f64, f64) {
        let (a, b) = (w * self.lo, w * self.hi);
        (a.min(b).next_down(), a.max(b).next_up())
    }

    pub fn magnitude(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

/// Per-dimension box.
#[derive(Debug, Clone, PartialEq)]
pub struct Box {
    dims: Vec<Interval>,
}

impl Box {
    pub fn new(dims: Vec<Interval>) -> Box {
        assert!(!dims.is_empty(), "a box needs at least one dimension");
        Box { dims }
    }

    pub fn dims(&self) -> &[Interval] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims.len() && self.dims.iter().zip(x).all(|(d, v)| d.contains(*v))
    }
}

/// Real-semantics affine bounds by endpoint analysis per weight sign.
pub fn affine_bounds(w: &[Vec<f64>], b: &[f64], input: &Box) -> Result<Box, IntervalError> {
    if w.len() != b.len() {
        return Err(IntervalError::Dimension { expected: w.len(), found: b.len() });
    }
    let dims = w
        .iter()
        .zip(b)
        .map(|(row, &bias)| {
            if row.len() != input.len() {
                return Err(IntervalError::Dimension { expected: row.len(), found: input.len() });
            }
            let (mut lo, mut hi) = (bias, bias);
            for (wj, x) in row.iter().zip(input.dims()) {
                let (a, c) = x.scale(*wj);
                lo = (lo + a).next_down();
                hi = (hi + c).next_up();
            }
            Ok(Interval::new(lo, hi))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Box::new(dims))
}

/// Real-semantics activation bounds. Tabulated activations go through the
/// table and are widened by its ε; without a table the exact function is
/// evaluated at the endpoints.
pub fn activation_bounds(act: Activation, input: Interval, table: Option<&LookupTable>) -> Interval {
    match act {
        Activation::Linear => input,
        Activation::Relu => Interval::new(input.lo.max(0.0), input.hi.max(0.0)),
        Activation::Sigmoid | Activation::Tanh => match table {
            Some(t) => {
                let (lo, hi) = t.output_range(input.lo, input.hi);
                Interval::new(lo, hi).widen(t.epsilon()).expect("finite table outputs")
            }
            None => Interval::new(act.apply(input.lo).next_down(), act.apply(input.hi).next_up()),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronBounds {
    /// Potential `u`.
    pub pre: Option<Interval>,
    /// Activation output `y`.
    pub post: Option<Interval>,
}

/// Per-layer, per-neuron bounds. `None` means no finite bound is known.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InvariantMap {
    pub layers: Vec<Vec<NeuronBounds>>,
}

impl InvariantMap {
    pub fn neuron(&self, layer: usize, neuron: usize) -> &NeuronBounds {
        &self.layers[layer][neuron]
    }

    /// Mean width of the finite post-activation intervals.
    pub fn mean_width(&self) -> Option<f64> {
        let widths: Vec<f64> = self.layers.iter().flatten().filter_map(|n| n.post).map(|i| i.width()).collect();
        (!widths.is_empty()).then(|| widths.iter().sum::<f64>() / widths.len() as f64)
    }

    /// Human-readable audit report, one assume line per neuron.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for (k, layer) in self.layers.iter().enumerate() {
            for (j, n) in layer.iter().enumerate() {
                match n.post {
                    Some(i) => {
                        let _ = writeln!(
                            out,
                            "__ESBMC_assume((layer{l}[{j}] >= {lo:?}) && (layer{l}[{j}] <= {hi:?}));",
                            l = k + 1,
                            lo = i.lo,
                            hi = i.hi
                        );
                    }
                    None => {
                        let _ = writeln!(out, "// layer{}[{j}]: unbounded", k + 1);
                    }
                }
            }
        }
        out
    }
}

/// Which value of a neuron a constraint bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Potential,
    Output,
}

/// Two-sided bound on one neuron value, destined for the assume set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronConstraint {
    pub layer: usize,
    pub neuron: usize,
    pub stage: Stage,
    pub bounds: Interval,
}

/// One two-sided constraint per bounded neuron value.
pub fn emit_invariant_constraints(inv: &InvariantMap) -> Vec<NeuronConstraint> {
    let mut out = Vec::new();
    for (layer, neurons) in inv.layers.iter().enumerate() {
        for (neuron, n) in neurons.iter().enumerate() {
            for (stage, b) in [(Stage::Potential, n.pre), (Stage::Output, n.post)] {
                if let Some(bounds) = b {
                    out.push(NeuronConstraint { layer, neuron, stage, bounds });
                }
            }
        }
    }
    out
}

/// Real-semantics propagation through `model` (no quantization effects).
pub fn infer_invariants_real(
    model: &ModelIR,
    input: &Box,
    tables: Option<&crate::quantized::TableSet>,
) -> Result<InvariantMap, IntervalError> {
    if input.len() != model.input_dim() {
        return Err(IntervalError::Dimension { expected: model.input_dim(), found: input.len() });
    }
    let mut current = input.clone();
    let mut map = InvariantMap::default();
    for layer in model.layers() {
        let pre = affine_bounds(&layer.weights, &layer.bias, &current)?;
        let table = match tables {
            Some(t) if layer.activation.needs_table() => {
                Some(t.get(layer.activation).ok_or(IntervalError::MissingTable(layer.activation))?)
            }
            _ => None,
        };
        let post: Vec<Interval> = pre.dims().iter().map(|&u| activation_bounds(layer.activation, u, table)).collect();
        map.layers
            .push(pre.dims().iter().zip(&post).map(|(&u, &y)| NeuronBounds { pre: Some(u), post: Some(y) }).collect());
        current = Box::new(post);
    }
    Ok(map)
}

/// Bounds valid for the quantized semantics of `net` over every quantized
/// input in `input`.
pub fn infer_invariants(net: &QuantizedNetwork, input: &Box) -> Result<InvariantMap, IntervalError> {
    if input.len() != net.input_dim() {
        return Err(IntervalError::Dimension { expected: net.input_dim(), found: input.len() });
    }
    let layers = net.denoted_layers();
    let mut current: Vec<Option<Interval>> = input.dims().iter().copied().map(Some).collect();
    let mut map = InvariantMap::default();
    for layer in &layers {
        let neurons: Vec<NeuronBounds> = layer
            .weights
            .iter()
            .zip(&layer.bias)
            .map(|(row, &b)| {
                let pre = match net.layers() {
                    QLayers::Fixed(cfg, _) => fixed_potential(row, b, &current, cfg),
                    QLayers::Float(_) => float_potential(row, b, &current),
                };
                let post = quantized_activation(layer.activation, pre, layer.table.as_ref());
                NeuronBounds { pre, post }
            })
            .collect();
        current = neurons.iter().map(|n| n.post).collect();
        map.layers.push(neurons);
    }
    Ok(map)
}

fn full_range(cfg: &FxpConfig) -> Interval {
    Interval::new(cfg.min_value(), cfg.max_value())
}

/// Snaps an interval inward onto the fixed-point grid.
fn snap(i: Interval, cfg: &FxpConfig) -> Interval {
    let s = (cfg.frac_bits() as f64).exp2();
    let lo = ((i.lo * s).ceil() / s).max(cfg.min_value());
    let hi = ((i.hi * s).floor() / s).min(cfg.max_value());
    if lo > hi {
        // Only reachable through rounding slack; keep the grid point nearest.
        Interval::point(lo.min(cfg.max_value()))
    } else {
        Interval::new(lo, hi)
    }
}

fn fixed_potential(row: &[f64], bias: f64, inputs: &[Option<Interval>], cfg: &FxpConfig) -> Option<Interval> {
    let range = full_range(cfg);
    let ulp = cfg.ulp();
    let inputs: Vec<Interval> = inputs.iter().map(|i| i.unwrap_or(range)).collect();
    // Products round by at most one ulp; sums are exact while in range.
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for (k, (w, x)) in row.iter().zip(&inputs).enumerate() {
        let (a, c) = x.scale(*w);
        let prod_ok = range.contains((a - ulp).next_down()) && range.contains((c + ulp).next_up());
        lo = (lo + a).next_down();
        hi = (hi + c).next_up();
        let slack = (k + 1) as f64 * ulp;
        let sum_ok = range.contains((lo - slack).next_down()) && range.contains((hi + slack).next_up());
        if !(prod_ok && sum_ok) {
            return Some(range);
        }
    }
    let slack = (row.len() + 1) as f64 * ulp;
    let lo = ((lo + bias).next_down() - slack).next_down();
    let hi = ((hi + bias).next_up() + slack).next_up();
    if !(range.contains(lo) && range.contains(hi)) {
        return Some(range);
    }
    Some(snap(Interval::new(lo, hi), cfg))
}

fn float_potential(row: &[f64], bias: f64, inputs: &[Option<Interval>]) -> Option<Interval> {
    const LIMIT: f64 = (f32::MAX as f64) / 4.0;
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    let mut magnitude = bias.abs();
    for (w, x) in row.iter().zip(inputs) {
        let x = (*x)?;
        let (a, c) = x.scale(*w);
        lo = (lo + a).next_down();
        hi = (hi + c).next_up();
        magnitude += w.abs() * x.magnitude();
    }
    // Also rejects NaN.
    if magnitude.is_nan() || magnitude >= LIMIT {
        return None;
    }
    // Each of the 2n+1 roundings contributes at most 2^-24 of a partial
    // magnitude bounded by `magnitude`, plus a subnormal absolute error.
    let ops = (2 * row.len() + 2) as f64;
    let slack = ops * (magnitude * f32::EPSILON as f64 + f64::from(f32::from_bits(1)));
    Interval::checked(((lo + bias).next_down() - slack).next_down(), ((hi + bias).next_up() + slack).next_up())
}

fn table_range(table: &StepTable<f64>, u: Option<Interval>) -> Interval {
    let (a, b) = match u {
        Some(u) => (table.thresholds.partition_point(|t| *t < u.lo), table.thresholds.partition_point(|t| *t < u.hi)),
        None => (0, table.outputs.len() - 1),
    };
    let slice = &table.outputs[a..=b];
    let lo = slice.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Interval::new(lo, hi)
}

fn quantized_activation(act: Activation, pre: Option<Interval>, table: Option<&StepTable<f64>>) -> Option<Interval> {
    match act {
        Activation::Linear => pre,
        Activation::Relu => pre.map(|u| Interval::new(u.lo.max(0.0), u.hi.max(0.0))),
        // Lookup only ever returns table outputs, so the full output range
        // bounds it even when the potential is unbounded (or NaN).
        Activation::Sigmoid | Activation::Tanh => {
            let table = table.expect("quantized network carries tables for tabulated activations");
            Some(table_range(table, pre))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lut;

    #[test]
    fn affine_examples() {
        let r = affine_bounds(&[vec![2.0]], &[1.0], &Box::new(vec![Interval::new(-1.0, 1.0)])).unwrap();
        let d = r.dims()[0];
        assert!(d.lo <= -1.0 && d.lo > -1.0 - 1e-12);
        assert!(d.hi >= 3.0 && d.hi < 3.0 + 1e-12);
        let r = affine_bounds(&[vec![1.0, -1.0]], &[0.0], &Box::new(vec![Interval::new(0.0, 1.0); 2])).unwrap();
        assert!(r.dims()[0].contains(-1.0) && r.dims()[0].contains(1.0));
        assert!(r.dims()[0].width() < 2.0 + 1e-12);
        assert!(affine_bounds(&[vec![1.0]], &[0.0, 1.0], &Box::new(vec![Interval::point(0.0)])).is_err());
        assert!(affine_bounds(&[vec![1.0, 2.0]], &[0.0], &Box::new(vec![Interval::point(0.0)])).is_err());
    }

    #[test]
    fn activation_examples() {
        assert_eq!(activation_bounds(Activation::Relu, Interval::new(-1.0, 1.0), None), Interval::new(0.0, 1.0));
        let i = Interval::new(-2.5, 0.75);
        assert_eq!(activation_bounds(Activation::Linear, i, None), i);
        let t = lut::default_lut(Activation::Sigmoid).unwrap();
        let s = activation_bounds(Activation::Sigmoid, Interval::new(0.0, 2.0), Some(&t));
        let eps = t.epsilon();
        assert!((s.lo - (0.5 - eps)).abs() < 1e-12);
        assert!(s.hi >= crate::model::sigmoid(2.0) && s.hi <= crate::model::sigmoid(2.0) + 2.0 * eps);
        assert!((s.hi - (0.88080 + eps)).abs() < eps);
    }

    #[test]
    fn emits_one_pair_per_bounded_value() {
        assert!(emit_invariant_constraints(&InvariantMap::default()).is_empty());
        let inv = InvariantMap {
            layers: vec![vec![NeuronBounds {
                pre: Some(Interval::new(-1.0, 0.2564)),
                post: Some(Interval::new(0.0, 0.2564)),
            }]],
        };
        let c = emit_invariant_constraints(&inv);
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].stage, Stage::Output);
        assert_eq!(c[1].bounds, Interval::new(0.0, 0.2564));
        assert_eq!(inv.report(), "__ESBMC_assume((layer1[0] >= 0.0) && (layer1[0] <= 0.2564));\n");
    }
}
