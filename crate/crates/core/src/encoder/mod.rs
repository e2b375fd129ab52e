//! SMT-LIB2 encoding of a quantized network and a property.
//!
//! Fixed-point networks become `QF_BV` scripts whose terms replay the
//! interpreter's raw arithmetic bit for bit; binary32 networks become
//! `QF_FPBV` scripts with round-nearest-even operations in the same
//! accumulation order. Symbols are `in_<i>` for inputs and
//! `l<layer>_n<j>_u` / `l<layer>_n<j>_y` for potentials and outputs, with
//! layers numbered from 1.

mod c;
mod sexpr;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use thiserror::Error;

pub use c::emit_c;
pub use sexpr::{decode_inputs, decode_model, parse_assignments, DecodeError, SmtValue};

use crate::fixedpoint::{smt, FxpConfig};
use crate::interval::{Interval, InvariantMap};
use crate::model::Activation;
use crate::property::{
    f32_down, f32_up, Comparator, CompiledProperty, FxpForm, LinearConstraint, Property, PropertyError, Tier, Var,
};
use crate::quantized::{QLayer, QLayers, QValue, QuantizedNetwork, StepTable};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error(transparent)]
    Property(#[from] PropertyError),
    #[error("invariant map has shape {found:?}, network has {expected:?}")]
    InvariantShape { expected: Vec<usize>, found: Vec<usize> },
    #[error("expected {expected} input values, got {found}")]
    Dimension { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Logic {
    QfBv,
    QfFpbv,
}

impl Logic {
    pub fn name(self) -> &'static str {
        match self {
            Logic::QfBv => "QF_BV",
            Logic::QfFpbv => "QF_FPBV",
        }
    }
}

/// What an SMT symbol stands for. Layer and neuron indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Symbol {
    Input(usize),
    Potential { layer: usize, neuron: usize },
    Output { layer: usize, neuron: usize },
}

/// Which negated asserts the goal contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalMode {
    /// Disjunction over every assert.
    Any,
    /// Only the given assert.
    Single(usize),
}

#[derive(Debug, Clone)]
pub struct SmtScript {
    pub logic: Logic,
    /// `declare-const` commands, one per input.
    pub declarations: Vec<String>,
    /// `define-fun` commands, one per neuron value.
    pub definitions: Vec<String>,
    /// Assertions for the input domain, the assumes and the invariants.
    pub assumptions: Vec<String>,
    /// Negated asserts as boolean terms.
    pub goal: Vec<String>,
    pub symbol_table: BTreeMap<String, Symbol>,
    net: Arc<QuantizedNetwork>,
    property: CompiledProperty,
}

pub fn input_symbol(i: usize) -> String {
    format!("in_{i}")
}

pub fn potential_symbol(layer: usize, neuron: usize) -> String {
    format!("l{}_n{neuron}_u", layer + 1)
}

pub fn output_symbol(layer: usize, neuron: usize) -> String {
    format!("l{}_n{neuron}_y", layer + 1)
}

impl SmtScript {
    pub fn network(&self) -> &QuantizedNetwork {
        &self.net
    }

    pub fn network_arc(&self) -> &Arc<QuantizedNetwork> {
        &self.net
    }

    pub fn property(&self) -> &CompiledProperty {
        &self.property
    }

    pub fn input_symbols(&self) -> Vec<String> {
        (0..self.net.input_dim()).map(input_symbol).collect()
    }

    fn preamble(&self, out: &mut String) {
        let _ = writeln!(out, "(set-logic {})", self.logic.name());
        out.push_str("(set-option :produce-models true)\n");
        for line in self.declarations.iter().chain(&self.definitions) {
            out.push_str(line);
            out.push('\n');
        }
    }

    pub fn render(&self) -> String {
        self.render_goal(GoalMode::Any)
    }

    /// Full script: domain, assumptions, goal, `check-sat`, input values
    /// and the model.
    pub fn render_goal(&self, mode: GoalMode) -> String {
        let mut out = String::new();
        self.preamble(&mut out);
        for a in &self.assumptions {
            out.push_str(a);
            out.push('\n');
        }
        let goal = match mode {
            GoalMode::Any if self.goal.len() == 1 => self.goal[0].clone(),
            GoalMode::Any => format!("(or {})", self.goal.join(" ")),
            GoalMode::Single(i) => self.goal[i].clone(),
        };
        let _ = writeln!(out, "(assert {goal})");
        out.push_str("(check-sat)\n");
        let _ = writeln!(out, "(get-value ({}))", self.input_symbols().join(" "));
        out.push_str("(get-model)\n");
        out
    }

    /// Script that pins the inputs to `inputs` and asks for every neuron
    /// value; no assumptions or goal.
    pub fn render_probe(&self, inputs: &[QValue]) -> Result<String, EncodeError> {
        if inputs.len() != self.net.input_dim() {
            return Err(EncodeError::Dimension { expected: self.net.input_dim(), found: inputs.len() });
        }
        let mut out = String::new();
        self.preamble(&mut out);
        for (i, v) in inputs.iter().enumerate() {
            let lit = match self.net.layers() {
                QLayers::Fixed(cfg, _) => smt::literal(v.raw as i128, cfg.width()),
                QLayers::Float(_) => f32_literal(v.as_f32()),
            };
            let _ = writeln!(out, "(assert (= {} {lit}))", input_symbol(i));
        }
        out.push_str("(check-sat)\n");
        let names: Vec<&str> =
            self.symbol_table.iter().filter(|(_, s)| !matches!(s, Symbol::Input(_))).map(|(n, _)| n.as_str()).collect();
        let _ = writeln!(out, "(get-value ({}))", names.join(" "));
        Ok(out)
    }
}

/// Encodes `property` over `net`, optionally injecting invariant bounds.
pub fn encode(
    net: Arc<QuantizedNetwork>,
    property: &Property,
    invariants: Option<&InvariantMap>,
) -> Result<SmtScript, EncodeError> {
    property.validate(net.input_dim(), net.output_dim())?;
    let compiled = property.compile(net.quant())?;
    if let Some(inv) = invariants {
        let expected: Vec<usize> = net.model().layers().iter().map(|l| l.rows()).collect();
        let found: Vec<usize> = inv.layers.iter().map(|l| l.len()).collect();
        if expected != found {
            return Err(EncodeError::InvariantShape { expected, found });
        }
    }
    let mut script = SmtScript {
        logic: Logic::QfBv,
        declarations: Vec::new(),
        definitions: Vec::new(),
        assumptions: Vec::new(),
        goal: Vec::new(),
        symbol_table: BTreeMap::new(),
        net: net.clone(),
        property: compiled,
    };
    for i in 0..net.input_dim() {
        script.symbol_table.insert(input_symbol(i), Symbol::Input(i));
    }
    match net.layers() {
        QLayers::Fixed(cfg, layers) => encode_fxp(&mut script, cfg, layers, property, invariants),
        QLayers::Float(layers) => {
            script.logic = Logic::QfFpbv;
            encode_float(&mut script, layers, property, invariants)
        }
    }
    Ok(script)
}

/// Optional lower and upper bound of a neuron value, in the target domain.
type Bounds<V> = (Option<V>, Option<V>);

/// Restricts a step table to the thresholds that can separate values in
/// `[lo, hi]`; the rest are decided by the asserted bounds.
fn prune<V: Copy + PartialOrd>(t: &StepTable<V>, (lo, hi): Bounds<V>) -> StepTable<V> {
    let start = lo.map_or(0, |l| t.thresholds.partition_point(|x| *x < l));
    let end = hi.map_or(t.thresholds.len(), |h| t.thresholds.partition_point(|x| *x < h)).max(start);
    StepTable { thresholds: t.thresholds[start..end].to_vec(), outputs: t.outputs[start..=end].to_vec() }
}

fn neuron_bounds<V>(
    inv: Option<&InvariantMap>,
    layer: usize,
    neuron: usize,
    to_bounds: impl Fn(Interval) -> Bounds<V>,
) -> Bounds<V> {
    inv.and_then(|m| m.layers[layer][neuron].pre).map_or((None, None), to_bounds)
}

fn fixed_bounds(cfg: &FxpConfig, i: Interval) -> Bounds<i64> {
    let scale = (cfg.frac_bits() as f64).exp2();
    let lo = ((i.lo * scale).ceil() as i64).max(cfg.min_raw());
    let hi = ((i.hi * scale).floor() as i64).min(cfg.max_raw());
    ((lo > cfg.min_raw()).then_some(lo), (hi < cfg.max_raw()).then_some(hi))
}

fn float_bounds(i: Interval) -> Bounds<f32> {
    let max = f32::MAX as f64;
    ((i.lo > -max).then(|| f32_down(i.lo) as f32), (i.hi < max).then(|| f32_up(i.hi) as f32))
}

fn define_neurons<V>(
    script: &mut SmtScript,
    layers: &[QLayer<V>],
    sort: &str,
    pre_bounds: impl Fn(usize, usize) -> Bounds<V>,
    mut potential: impl FnMut(&[V], &[String], &V) -> String,
    mut activation: impl FnMut(Activation, Option<&StepTable<V>>, &str) -> String,
) where
    V: Copy + PartialOrd,
{
    let mut prev: Vec<String> = (0..script.net.input_dim()).map(input_symbol).collect();
    for (k, l) in layers.iter().enumerate() {
        let mut next = Vec::with_capacity(l.bias.len());
        for (j, (row, b)) in l.weights.iter().zip(&l.bias).enumerate() {
            let (u, y) = (potential_symbol(k, j), output_symbol(k, j));
            let pterm = potential(row, &prev, b);
            let table = l.table.as_ref().map(|t| prune(t, pre_bounds(k, j)));
            let yterm = activation(l.activation, table.as_ref(), &u);
            script.definitions.push(format!("(define-fun {u} () {sort} {pterm})"));
            script.definitions.push(format!("(define-fun {y} () {sort} {yterm})"));
            script.symbol_table.insert(u, Symbol::Potential { layer: k, neuron: j });
            script.symbol_table.insert(y.clone(), Symbol::Output { layer: k, neuron: j });
            next.push(y);
        }
        prev = next;
    }
}

/// Balanced comparison tree over `#{t : t < u}`.
fn step_tree<V: Copy>(t: &StepTable<V>, u: &str, lit: &impl Fn(V) -> String, lt: &str) -> String {
    fn go<V: Copy>(ts: &[V], os: &[V], u: &str, lit: &impl Fn(V) -> String, lt: &str) -> String {
        if ts.is_empty() {
            return lit(os[0]);
        }
        let mid = ts.len() / 2;
        format!(
            "(ite ({lt} {} {u}) {} {})",
            lit(ts[mid]),
            go(&ts[mid + 1..], &os[mid + 1..], u, lit, lt),
            go(&ts[..mid], &os[..=mid], u, lit, lt)
        )
    }
    go(&t.thresholds, &t.outputs, u, lit, lt)
}

fn encode_fxp(
    script: &mut SmtScript,
    cfg: &FxpConfig,
    layers: &[QLayer<i64>],
    property: &Property,
    invariants: Option<&InvariantMap>,
) {
    let w = cfg.width();
    let sort = smt::sort(w);
    script.declarations =
        (0..script.net.input_dim()).map(|i| format!("(declare-const {} {sort})", input_symbol(i))).collect();
    let lit = |r: i64| smt::literal(r as i128, w);
    define_neurons(
        script,
        layers,
        &sort,
        |k, j| neuron_bounds(invariants, k, j, |i| fixed_bounds(cfg, i)),
        |row, prev, b| {
            let mut acc = lit(0);
            for (wt, x) in row.iter().zip(prev) {
                acc = smt::add(&acc, &smt::mul(&lit(*wt), x, cfg), cfg);
            }
            smt::add(&acc, &lit(*b), cfg)
        },
        |act, table, u| match (act, table) {
            (Activation::Relu, _) => format!("(ite (bvslt {u} {z}) {z} {u})", z = lit(0)),
            (Activation::Linear, _) => u.to_string(),
            (_, Some(t)) => step_tree(t, u, &lit, "bvslt"),
            (act, None) => unreachable!("{act} layer without a table"),
        },
    );
    let last = layers.len() - 1;
    let var_term = |v: Var| match v.tier {
        Tier::Input => input_symbol(v.index),
        Tier::Output => output_symbol(last, v.index),
    };
    let form_term = |f: &FxpForm| {
        let e = f.eval_width(w);
        let terms: Vec<String> = f
            .terms
            .iter()
            .map(|(c, v)| format!("(bvmul {} {})", big_literal(c, e), smt::sign_extend(&var_term(*v), e - w)))
            .collect();
        let sum = match terms.len() {
            0 => big_literal(&BigInt::zero(), e),
            1 => terms[0].clone(),
            _ => format!("(bvadd {})", terms.join(" ")),
        };
        let op = match f.cmp {
            Comparator::Lt => "bvslt",
            Comparator::Le => "bvsle",
            Comparator::Gt => "bvsgt",
            Comparator::Ge => "bvsge",
        };
        format!("({op} {sum} {})", big_literal(&f.bound, e))
    };
    let frac = cfg.frac_bits();
    for c in &property.assumes {
        let f = c.fxp_form(frac).expect("compiled above");
        script.assumptions.push(format!("(assert {})", form_term(&f)));
    }
    for c in &property.asserts {
        let f = c.fxp_form(frac).expect("compiled above");
        script.goal.push(format!("(not {})", form_term(&f)));
    }
    if let Some(inv) = invariants {
        push_invariants(
            script,
            inv,
            |i| fixed_bounds(cfg, i),
            |sym, (lo, hi)| {
                let parts =
                    [lo.map(|l| format!("(bvsle {} {sym})", lit(l))), hi.map(|h| format!("(bvsle {sym} {})", lit(h)))];
                conj(parts.into_iter().flatten().collect())
            },
        );
    }
}

fn conj(parts: Vec<String>) -> Option<String> {
    match parts.len() {
        0 => None,
        1 => Some(format!("(assert {})", parts[0])),
        _ => Some(format!("(assert (and {}))", parts.join(" "))),
    }
}

fn push_invariants<V>(
    script: &mut SmtScript,
    inv: &InvariantMap,
    to_bounds: impl Fn(Interval) -> Bounds<V>,
    render: impl Fn(&str, Bounds<V>) -> Option<String>,
) {
    for (k, layer) in inv.layers.iter().enumerate() {
        for (j, n) in layer.iter().enumerate() {
            for (sym, b) in [(potential_symbol(k, j), n.pre), (output_symbol(k, j), n.post)] {
                if let Some(line) = b.and_then(|i| render(&sym, to_bounds(i))) {
                    script.assumptions.push(line);
                }
            }
        }
    }
}

fn big_literal(v: &BigInt, width: u32) -> String {
    let modulus = BigInt::one() << width as usize;
    let bits = ((v % &modulus) + &modulus) % &modulus;
    format!("(_ bv{bits} {width})")
}

const FP32: &str = "(_ FloatingPoint 8 24)";

pub fn f32_literal(x: f32) -> String {
    let b = x.to_bits();
    format!("(fp #b{} #b{:08b} #b{:023b})", b >> 31, (b >> 23) & 0xff, b & 0x7f_ffff)
}

pub fn f64_literal(x: f64) -> String {
    let b = x.to_bits();
    format!("(fp #b{} #b{:011b} #b{:052b})", b >> 63, (b >> 52) & 0x7ff, b & ((1u64 << 52) - 1))
}

fn encode_float(
    script: &mut SmtScript,
    layers: &[QLayer<f32>],
    property: &Property,
    invariants: Option<&InvariantMap>,
) {
    script.declarations =
        (0..script.net.input_dim()).map(|i| format!("(declare-const {} {FP32})", input_symbol(i))).collect();
    for i in 0..script.net.input_dim() {
        let x = input_symbol(i);
        script.assumptions.push(format!("(assert (not (or (fp.isNaN {x}) (fp.isInfinite {x}))))"));
    }
    define_neurons(
        script,
        layers,
        FP32,
        |k, j| neuron_bounds(invariants, k, j, float_bounds),
        |row, prev, b| {
            let mut acc = "(_ +zero 8 24)".to_string();
            for (wt, x) in row.iter().zip(prev) {
                acc = format!("(fp.add RNE {acc} (fp.mul RNE {} {x}))", f32_literal(*wt));
            }
            format!("(fp.add RNE {acc} {})", f32_literal(*b))
        },
        |act, table, u| match (act, table) {
            (Activation::Relu, _) => format!("(ite (fp.lt {u} (_ +zero 8 24)) (_ +zero 8 24) {u})"),
            (Activation::Linear, _) => u.to_string(),
            (_, Some(t)) => step_tree(t, u, &|v| f32_literal(v), "fp.lt"),
            (act, None) => unreachable!("{act} layer without a table"),
        },
    );
    let last = layers.len() - 1;
    let term = |c: &LinearConstraint| {
        let mut acc: Option<String> = None;
        for (coef, v) in &c.terms {
            let sym = match v.tier {
                Tier::Input => input_symbol(v.index),
                Tier::Output => output_symbol(last, v.index),
            };
            let t = format!("(fp.mul RNE {} ((_ to_fp 11 53) RNE {sym}))", f64_literal(*coef));
            acc = Some(match acc {
                None => t,
                Some(a) => format!("(fp.add RNE {a} {t})"),
            });
        }
        let lhs = acc.unwrap_or_else(|| f64_literal(0.0));
        let op = match c.cmp {
            Comparator::Lt => "fp.lt",
            Comparator::Le => "fp.leq",
            Comparator::Gt => "fp.gt",
            Comparator::Ge => "fp.geq",
        };
        format!("({op} {lhs} {})", f64_literal(c.bound))
    };
    for c in &property.assumes {
        script.assumptions.push(format!("(assert {})", term(c)));
    }
    for c in &property.asserts {
        script.goal.push(format!("(not {})", term(c)));
    }
    if let Some(inv) = invariants {
        push_invariants(script, inv, float_bounds, |sym, (lo, hi)| {
            let parts = [
                lo.map(|l| format!("(fp.leq {} {sym})", f32_literal(l))),
                hi.map(|h| format!("(fp.leq {sym} {})", f32_literal(h))),
            ];
            conj(parts.into_iter().flatten().collect())
        });
    }
}
