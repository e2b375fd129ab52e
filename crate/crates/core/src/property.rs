//! Safety properties `x ∈ H ⇒ y ∈ G` as assume/assert constraint sets.
//!
//! # DSL
//!
//! ```text
//! # comment
//! name acas_phi1;
//! assume x[0] >= 0 && x[0] <= 2;
//! assume x[1] >= -0.5; assume x[1] < 0.5;
//! assert y[1] > y[0];
//! assert 2*y[0] - 0.5 y[1] + 1 <= 3;
//! ```
//!
//! Both sides of a comparison are ±-separated sums of constants and
//! optionally scaled `x[i]` / `y[j]` terms; they are normalized to
//! `Σ c·v ⋈ b`. Assumes may only mention inputs, asserts only outputs.
//! Multiple asserts must all hold; a counterexample violates at least one.
//!
//! # Semantics on quantized values
//!
//! Fixed point: the constraint is decided exactly over the real values the
//! raw inputs/outputs denote (all coefficients are dyadic rationals, so this
//! reduces to big-integer arithmetic, see [`LinearConstraint::fxp_form`]).
//! A strict `x < 0.5` therefore behaves as `x ≤ 0.5 − 2^-F`.
//!
//! Float32: each value is widened to binary64, multiplied by its coefficient
//! and summed left to right in binary64 with round-nearest-even, then
//! compared with the bound. NaN never satisfies a comparison.

use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::fixedpoint::QuantSpec;
use crate::interval::{Box as IBox, Interval};
use crate::quantized::QValue;

/// Largest shift used when aligning dyadic coefficients to a common scale.
pub const MAX_ALIGN_SHIFT: i64 = 2048;

#[derive(Debug, Error, PartialEq)]
pub enum PropertyError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: assumes may only constrain inputs x[i]")]
    AssumeOnOutput { line: usize, col: usize },
    #[error("{line}:{col}: asserts may only constrain outputs y[j]")]
    AssertOnInput { line: usize, col: usize },
    #[error("{line}:{col}: constraint has no variable terms")]
    NoTerms { line: usize, col: usize },
    #[error("property has no assert")]
    NoAssert,
    #[error("variable {var} out of range (dimension {dim})")]
    IndexOutOfRange { var: Var, dim: usize },
    #[error("target class {target} out of range for {outputs} outputs")]
    InvalidTarget { target: usize, outputs: usize },
    #[error("invalid robustness radius {0}")]
    InvalidRadius(f64),
    #[error("vacuous property: assumes on x[{0}] admit no value")]
    Vacuous(usize),
    #[error("constraint coefficients span too wide a dynamic range")]
    DynamicRange,
    #[error("non-finite constant in constraint")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tier {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub tier: Tier,
    pub index: usize,
}

impl Var {
    pub fn x(index: usize) -> Var {
        Var { tier: Tier::Input, index }
    }

    pub fn y(index: usize) -> Var {
        Var { tier: Tier::Output, index }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = match self.tier {
            Tier::Input => 'x',
            Tier::Output => 'y',
        };
        write!(f, "{t}[{}]", self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }

    pub fn flip(self) -> Comparator {
        match self {
            Comparator::Lt => Comparator::Gt,
            Comparator::Le => Comparator::Ge,
            Comparator::Gt => Comparator::Lt,
            Comparator::Ge => Comparator::Le,
        }
    }

    pub fn holds<T: PartialOrd>(self, lhs: T, rhs: T) -> bool {
        match self {
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Ge => lhs >= rhs,
        }
    }
}

/// `Σ coeff·var ⋈ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(f64, Var)>,
    pub cmp: Comparator,
    pub bound: f64,
}

/// Integer form of a constraint over raw fixed-point values:
/// `Σ coeff·raw ⋈ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct FxpForm {
    pub terms: Vec<(BigInt, Var)>,
    pub cmp: Comparator,
    pub bound: BigInt,
}

impl FxpForm {
    pub fn holds(&self, value: impl Fn(Var) -> i64) -> bool {
        let lhs: BigInt = self.terms.iter().map(|(c, v)| c * BigInt::from(value(*v))).sum();
        self.cmp.holds(&lhs, &self.bound)
    }

    /// Bits needed to evaluate the sum without overflow given `width`-bit
    /// operands.
    pub fn eval_width(&self, width: u32) -> u32 {
        let coeff_bits = self.terms.iter().map(|(c, _)| c.bits()).max().unwrap_or(0) as u32;
        let sum_bits = coeff_bits + width + (usize::BITS - self.terms.len().leading_zeros()) + 1;
        sum_bits.max(self.bound.bits() as u32 + 1) + 1
    }
}

/// `x = mantissa · 2^exp` exactly, with an odd mantissa (or zero).
pub(crate) fn dyadic(x: f64) -> (i64, i64) {
    if x == 0.0 {
        return (0, 0);
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { -1 } else { 1 };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let frac = (bits & ((1u64 << 52) - 1)) as i64;
    let (mut m, mut e) = if exp_bits == 0 { (frac, -1074) } else { (frac | (1 << 52), exp_bits - 1075) };
    let tz = m.trailing_zeros() as i64;
    m >>= tz;
    e += tz;
    (sign * m, e)
}

impl LinearConstraint {
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.terms.iter().map(|(_, v)| *v)
    }

    /// Exact integer form over raw values with `frac_bits` fractional bits.
    pub fn fxp_form(&self, frac_bits: u32) -> Result<FxpForm, PropertyError> {
        let f = frac_bits as i64;
        let parts: Vec<(i64, i64, Var)> = self
            .terms
            .iter()
            .map(|(c, v)| {
                let (m, e) = dyadic(*c);
                (m, e - f, *v)
            })
            .filter(|(m, _, _)| *m != 0)
            .collect();
        let (mb, eb) = dyadic(self.bound);
        let base = parts.iter().map(|p| p.1).chain((mb != 0).then_some(eb)).min().unwrap_or(0);
        let top = parts.iter().map(|p| p.1).chain((mb != 0).then_some(eb)).max().unwrap_or(0);
        if top - base > MAX_ALIGN_SHIFT {
            return Err(PropertyError::DynamicRange);
        }
        let scale = |m: i64, e: i64| BigInt::from(m) << (e - base) as usize;
        Ok(FxpForm {
            terms: parts.iter().map(|&(m, e, v)| (scale(m, e), v)).collect(),
            cmp: self.cmp,
            bound: if mb == 0 { BigInt::zero() } else { scale(mb, eb) },
        })
    }

    /// Float32 semantics: binary64 left-to-right evaluation.
    pub fn holds_f32(&self, value: impl Fn(Var) -> f32) -> bool {
        let mut acc: Option<f64> = None;
        for (c, v) in &self.terms {
            let t = c * value(*v) as f64;
            acc = Some(match acc {
                None => t,
                Some(a) => a + t,
            });
        }
        self.cmp.holds(acc.unwrap_or(0.0), self.bound)
    }

    /// Idealized real-valued check.
    pub fn holds_real(&self, value: impl Fn(Var) -> f64) -> bool {
        let lhs: f64 = self.terms.iter().map(|(c, v)| c * value(*v)).sum();
        self.cmp.holds(lhs, self.bound)
    }

    /// Single-variable constraints bound one coordinate.
    pub fn as_interval(&self) -> Option<(f64, Var)> {
        match self.terms.as_slice() {
            [(c, v)] if *c != 0.0 => Some((*c, *v)),
            _ => None,
        }
    }
}

impl fmt::Display for LinearConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (c, v)) in self.terms.iter().enumerate() {
            let neg = c.is_sign_negative();
            match (i, neg) {
                (0, false) => {}
                (0, true) => f.write_str("-")?,
                (_, false) => f.write_str(" + ")?,
                (_, true) => f.write_str(" - ")?,
            }
            let a = c.abs();
            if a == 1.0 {
                write!(f, "{v}")?;
            } else {
                write!(f, "{a:?}*{v}")?;
            }
        }
        write!(f, " {} {:?}", self.cmp.symbol(), self.bound)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub name: String,
    pub assumes: Vec<LinearConstraint>,
    pub asserts: Vec<LinearConstraint>,
}

impl Property {
    /// Checks variable indices against a model's dimensions.
    pub fn validate(&self, input_dim: usize, output_dim: usize) -> Result<(), PropertyError> {
        if self.asserts.is_empty() {
            return Err(PropertyError::NoAssert);
        }
        for var in self.assumes.iter().chain(&self.asserts).flat_map(|c| c.vars()) {
            let dim = match var.tier {
                Tier::Input => input_dim,
                Tier::Output => output_dim,
            };
            if var.index >= dim {
                return Err(PropertyError::IndexOutOfRange { var, dim });
            }
        }
        Ok(())
    }

    /// Tightest per-dimension box implied by single-variable assumes,
    /// intersected with the representable range of `quant`. The box contains
    /// every quantized point that satisfies those assumes; general linear
    /// assumes do not shrink it.
    pub fn extract_box(&self, input_dim: usize, quant: &QuantSpec) -> Result<IBox, PropertyError> {
        match quant {
            QuantSpec::Fixed(cfg) => {
                let mut lo = vec![cfg.min_raw() as i128; input_dim];
                let mut hi = vec![cfg.max_raw() as i128; input_dim];
                for c in &self.assumes {
                    let Some((_, var)) = c.as_interval() else { continue };
                    let form = c.fxp_form(cfg.frac_bits())?;
                    let (coef, _) = &form.terms[0];
                    // coef·raw ⋈ bound  ⇔  raw ⋈' bound/coef
                    let cmp = if coef.is_negative() { form.cmp.flip() } else { form.cmp };
                    let (num, den) =
                        if coef.is_negative() { (-&form.bound, -coef) } else { (form.bound.clone(), coef.clone()) };
                    let floor = floor_div(&num, &den);
                    let exact = (&floor * &den) == num;
                    let i = var.index;
                    let clamp = |v: BigInt| -> i128 {
                        let lim = BigInt::one() << 100usize;
                        if v > lim {
                            1i128 << 100
                        } else if v < -&lim {
                            -(1i128 << 100)
                        } else {
                            i128::try_from(v).expect("clamped")
                        }
                    };
                    match cmp {
                        Comparator::Ge => {
                            let ceil = if exact { floor.clone() } else { floor.clone() + 1 };
                            lo[i] = lo[i].max(clamp(ceil));
                        }
                        Comparator::Gt => lo[i] = lo[i].max(clamp(floor + 1)),
                        Comparator::Le => hi[i] = hi[i].min(clamp(floor)),
                        Comparator::Lt => {
                            let below = if exact { floor - 1 } else { floor };
                            hi[i] = hi[i].min(clamp(below));
                        }
                    }
                }
                let dims = (0..input_dim)
                    .map(|i| {
                        if lo[i] > hi[i] {
                            return Err(PropertyError::Vacuous(i));
                        }
                        Ok(Interval::new(cfg.denote(lo[i] as i64), cfg.denote(hi[i] as i64)))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(IBox::new(dims))
            }
            QuantSpec::Float32 => {
                let max = f32::MAX as f64;
                let mut lo = vec![-max; input_dim];
                let mut hi = vec![max; input_dim];
                for c in &self.assumes {
                    let Some((coef, var)) = c.as_interval() else { continue };
                    if !c.bound.is_finite() {
                        return Err(PropertyError::NonFinite);
                    }
                    let cmp = if coef < 0.0 { c.cmp.flip() } else { c.cmp };
                    // Outward by a few ulps: containment, not exactness.
                    let t = c.bound / coef;
                    let i = var.index;
                    match cmp {
                        Comparator::Ge | Comparator::Gt => lo[i] = lo[i].max(f32_down(t.next_down().next_down())),
                        Comparator::Le | Comparator::Lt => hi[i] = hi[i].min(f32_up(t.next_up().next_up())),
                    }
                }
                // Values strictly between adjacent float32 numbers are not
                // inputs; shrink to the float32 grid and detect emptiness.
                let dims = (0..input_dim)
                    .map(|i| {
                        let (l, h) = (f32_up(lo[i]), f32_down(hi[i]));
                        if l > h || !self.float_dim_feasible(i, l, h) {
                            return Err(PropertyError::Vacuous(i));
                        }
                        Ok(Interval::new(l, h))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(IBox::new(dims))
            }
        }
    }

    /// Within the widened float box `[l, h]` for dimension `i`, confirms at
    /// least one float32 value satisfies every single-variable assume on it.
    fn float_dim_feasible(&self, i: usize, l: f64, h: f64) -> bool {
        let cons: Vec<&LinearConstraint> =
            self.assumes.iter().filter(|c| matches!(c.as_interval(), Some((_, v)) if v.index == i)).collect();
        if cons.is_empty() {
            return true;
        }
        let ok = |x: f32| cons.iter().all(|c| c.holds_f32(|_| x));
        // The satisfying set is an interval of the float32 grid; scan a few
        // values near each end of the widened box.
        let mut a = l as f32;
        let mut b = h as f32;
        for _ in 0..8 {
            if ok(a) || ok(b) {
                return true;
            }
            if a >= b {
                return false;
            }
            a = a.next_up();
            b = b.next_down();
        }
        // Widening added at most a couple of ulps at each end, so a
        // satisfying value would have been reached by now.
        false
    }
}

fn floor_div(n: &BigInt, d: &BigInt) -> BigInt {
    // d > 0
    let q = n / d;
    if (n % d).is_negative() {
        q - 1
    } else {
        q
    }
}

/// A constraint in the executable form of one quantization.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckForm {
    Fixed(FxpForm),
    Float(LinearConstraint),
}

impl CheckForm {
    pub fn holds(&self, inputs: &[QValue], outputs: &[QValue]) -> bool {
        let pick = |v: Var| match v.tier {
            Tier::Input => inputs[v.index],
            Tier::Output => outputs[v.index],
        };
        match self {
            CheckForm::Fixed(f) => f.holds(|v| pick(v).raw),
            CheckForm::Float(c) => c.holds_f32(|v| pick(v).as_f32()),
        }
    }
}

/// A property lowered to [`CheckForm`]s for concrete evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledProperty {
    pub assumes: Vec<CheckForm>,
    pub asserts: Vec<CheckForm>,
}

impl CompiledProperty {
    pub fn assumes_hold(&self, inputs: &[QValue]) -> bool {
        self.assumes.iter().all(|c| c.holds(inputs, &[]))
    }

    /// Index of the first assert that fails.
    pub fn first_violation(&self, inputs: &[QValue], outputs: &[QValue]) -> Option<usize> {
        self.asserts.iter().position(|c| !c.holds(inputs, outputs))
    }
}

impl Property {
    pub fn compile(&self, quant: &QuantSpec) -> Result<CompiledProperty, PropertyError> {
        let lower = |c: &LinearConstraint| -> Result<CheckForm, PropertyError> {
            match quant {
                QuantSpec::Fixed(cfg) => Ok(CheckForm::Fixed(c.fxp_form(cfg.frac_bits())?)),
                QuantSpec::Float32 => Ok(CheckForm::Float(c.clone())),
            }
        };
        Ok(CompiledProperty {
            assumes: self.assumes.iter().map(lower).collect::<Result<_, _>>()?,
            asserts: self.asserts.iter().map(lower).collect::<Result<_, _>>()?,
        })
    }
}

/// Largest float32 value `<= x`, as f64.
pub(crate) fn f32_down(x: f64) -> f64 {
    let f = x as f32;
    let f = if (f as f64) > x { f.next_down() } else { f };
    (f.max(-f32::MAX)) as f64
}

/// Smallest float32 value `>= x`, as f64.
pub(crate) fn f32_up(x: f64) -> f64 {
    let f = x as f32;
    let f = if (f as f64) < x { f.next_up() } else { f };
    (f.min(f32::MAX)) as f64
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.name.is_empty() {
            writeln!(f, "name {};", self.name)?;
        }
        for c in &self.assumes {
            writeln!(f, "assume {c};")?;
        }
        for c in &self.asserts {
            writeln!(f, "assert {c};")?;
        }
        Ok(())
    }
}

/// L∞ robustness around `x0`: every input in the ball must keep
/// `target` as the strict arg-max.
pub fn robustness_property(
    x0: &[f64],
    radius: f64,
    target: usize,
    num_outputs: usize,
) -> Result<Property, PropertyError> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(PropertyError::InvalidRadius(radius));
    }
    if target >= num_outputs {
        return Err(PropertyError::InvalidTarget { target, outputs: num_outputs });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(PropertyError::NonFinite);
    }
    let assumes = x0
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| {
            [
                LinearConstraint { terms: vec![(1.0, Var::x(i))], cmp: Comparator::Ge, bound: c - radius },
                LinearConstraint { terms: vec![(1.0, Var::x(i))], cmp: Comparator::Le, bound: c + radius },
            ]
        })
        .collect();
    let asserts = (0..num_outputs)
        .filter(|&j| j != target)
        .map(|j| LinearConstraint {
            terms: vec![(1.0, Var::y(target)), (-1.0, Var::y(j))],
            cmp: Comparator::Gt,
            bound: 0.0,
        })
        .collect();
    Ok(Property {
        // Radius digits with `_` for the point, so the name stays a DSL word.
        name: format!("robust_t{target}_r{}", radius.to_string().replace(['.', '-', '+'], "_")),
        assumes,
        asserts,
    })
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Num(f64),
    LBracket,
    RBracket,
    Plus,
    Minus,
    Star,
    AndAnd,
    Cmp(Comparator),
    Semi,
    Eof,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, PropertyError> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let (ln, col) = (li + 1, i + 1);
            let push = |out: &mut Vec<Spanned>, tok| out.push(Spanned { tok, line: ln, col });
            match c {
                '#' => break,
                c if c.is_whitespace() => i += 1,
                '[' => {
                    push(&mut out, Tok::LBracket);
                    i += 1
                }
                ']' => {
                    push(&mut out, Tok::RBracket);
                    i += 1
                }
                '+' => {
                    push(&mut out, Tok::Plus);
                    i += 1
                }
                '-' => {
                    push(&mut out, Tok::Minus);
                    i += 1
                }
                '*' => {
                    push(&mut out, Tok::Star);
                    i += 1
                }
                ';' => {
                    push(&mut out, Tok::Semi);
                    i += 1
                }
                '&' if chars.get(i + 1) == Some(&'&') => {
                    push(&mut out, Tok::AndAnd);
                    i += 2
                }
                '<' | '>' => {
                    let eq = chars.get(i + 1) == Some(&'=');
                    let cmp = match (c, eq) {
                        ('<', false) => Comparator::Lt,
                        ('<', true) => Comparator::Le,
                        ('>', false) => Comparator::Gt,
                        _ => Comparator::Ge,
                    };
                    push(&mut out, Tok::Cmp(cmp));
                    i += if eq { 2 } else { 1 };
                }
                c if c.is_ascii_digit() || c == '.' => {
                    let start = i;
                    while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                        i += 1;
                    }
                    if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                        let mut j = i + 1;
                        if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                            j += 1;
                        }
                        if j < chars.len() && chars[j].is_ascii_digit() {
                            i = j;
                            while i < chars.len() && chars[i].is_ascii_digit() {
                                i += 1;
                            }
                        }
                    }
                    let s: String = chars[start..i].iter().collect();
                    let v: f64 = s.parse().map_err(|_| PropertyError::Syntax {
                        line: ln,
                        col,
                        msg: format!("bad number {s:?}"),
                    })?;
                    if !v.is_finite() {
                        return Err(PropertyError::Syntax { line: ln, col, msg: format!("number {s:?} out of range") });
                    }
                    push(&mut out, Tok::Num(v));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = i;
                    while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                        i += 1;
                    }
                    push(&mut out, Tok::Word(chars[start..i].iter().collect()));
                }
                other => {
                    return Err(PropertyError::Syntax { line: ln, col, msg: format!("unexpected character {other:?}") })
                }
            }
        }
    }
    let (line, col) = out.last().map_or((1, 1), |s| (s.line, s.col + 1));
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

/// One side of a comparison: variable terms plus a constant.
struct Side {
    terms: Vec<(f64, Var, usize, usize)>,
    constant: f64,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, msg: impl Into<String>) -> Result<T, PropertyError> {
        let s = self.peek();
        Err(PropertyError::Syntax { line: s.line, col: s.col, msg: msg.into() })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), PropertyError> {
        if self.peek().tok == tok {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected {what}"))
        }
    }

    fn var(&mut self) -> Result<Option<Var>, PropertyError> {
        let tier = match &self.peek().tok {
            Tok::Word(w) if w == "x" => Tier::Input,
            Tok::Word(w) if w == "y" => Tier::Output,
            _ => return Ok(None),
        };
        self.bump();
        self.expect(Tok::LBracket, "'['")?;
        let index = match self.peek().tok {
            Tok::Num(v) if v.fract() == 0.0 && (0.0..1e9).contains(&v) => v as usize,
            _ => return self.error("expected a non-negative integer index"),
        };
        self.bump();
        self.expect(Tok::RBracket, "']'")?;
        Ok(Some(Var { tier, index }))
    }

    fn number(&mut self) -> Option<f64> {
        if let Tok::Num(v) = self.peek().tok {
            self.bump();
            Some(v)
        } else {
            None
        }
    }

    fn term(&mut self, sign: f64, side: &mut Side) -> Result<(), PropertyError> {
        let (line, col) = (self.peek().line, self.peek().col);
        if let Some(c) = self.number() {
            if self.peek().tok == Tok::Star {
                self.bump();
                match self.var()? {
                    Some(v) => side.terms.push((sign * c, v, line, col)),
                    None => return self.error("expected x[i] or y[j] after '*'"),
                }
            } else if let Some(v) = self.var()? {
                side.terms.push((sign * c, v, line, col));
            } else {
                side.constant += sign * c;
            }
            return Ok(());
        }
        match self.var()? {
            Some(v) => {
                let mut c = 1.0;
                if self.peek().tok == Tok::Star {
                    self.bump();
                    match self.number() {
                        Some(k) => c = k,
                        None => return self.error("expected a number after '*'"),
                    }
                }
                side.terms.push((sign * c, v, line, col));
                Ok(())
            }
            None => self.error("expected a term"),
        }
    }

    fn side(&mut self) -> Result<Side, PropertyError> {
        let mut side = Side { terms: Vec::new(), constant: 0.0 };
        let mut sign = 1.0;
        match self.peek().tok {
            Tok::Minus => {
                self.bump();
                sign = -1.0;
            }
            Tok::Plus => {
                self.bump();
            }
            _ => {}
        }
        self.term(sign, &mut side)?;
        loop {
            sign = match self.peek().tok {
                Tok::Plus => 1.0,
                Tok::Minus => -1.0,
                _ => break,
            };
            self.bump();
            self.term(sign, &mut side)?;
        }
        Ok(side)
    }

    fn constraint(&mut self, tier: Tier) -> Result<LinearConstraint, PropertyError> {
        let (line, col) = (self.peek().line, self.peek().col);
        let lhs = self.side()?;
        let cmp = match self.peek().tok {
            Tok::Cmp(c) => c,
            _ => return self.error("expected a comparison (<, <=, >, >=)"),
        };
        self.bump();
        let rhs = self.side()?;

        let mut terms: Vec<(f64, Var)> = Vec::new();
        let all = lhs.terms.into_iter().chain(rhs.terms.into_iter().map(|(c, v, l, k)| (-c, v, l, k)));
        for (c, v, l, k) in all {
            if v.tier != tier {
                return Err(match tier {
                    Tier::Input => PropertyError::AssumeOnOutput { line: l, col: k },
                    Tier::Output => PropertyError::AssertOnInput { line: l, col: k },
                });
            }
            match terms.iter_mut().find(|(_, w)| *w == v) {
                Some(t) => t.0 += c,
                None => terms.push((c, v)),
            }
        }
        terms.retain(|(c, _)| *c != 0.0);
        if terms.is_empty() {
            return Err(PropertyError::NoTerms { line, col });
        }
        let bound = rhs.constant - lhs.constant;
        if !bound.is_finite() || terms.iter().any(|(c, _)| !c.is_finite()) {
            return Err(PropertyError::NonFinite);
        }
        Ok(LinearConstraint { terms, cmp, bound })
    }

    fn property(&mut self) -> Result<Property, PropertyError> {
        let mut prop = Property { name: String::new(), assumes: Vec::new(), asserts: Vec::new() };
        loop {
            let kw = match &self.peek().tok {
                Tok::Eof => break,
                Tok::Word(w) => w.clone(),
                _ => return self.error("expected `assume`, `assert` or `name`"),
            };
            self.bump();
            match kw.as_str() {
                "name" => match self.bump().tok {
                    Tok::Word(n) => prop.name = n,
                    _ => {
                        self.pos -= 1;
                        return self.error("expected an identifier");
                    }
                },
                "assume" | "assert" => {
                    let tier = if kw == "assume" { Tier::Input } else { Tier::Output };
                    loop {
                        let c = self.constraint(tier)?;
                        if tier == Tier::Input {
                            prop.assumes.push(c);
                        } else {
                            prop.asserts.push(c);
                        }
                        if self.peek().tok != Tok::AndAnd {
                            break;
                        }
                        self.bump();
                    }
                }
                other => {
                    self.pos -= 1;
                    return self.error(format!("unknown statement {other:?}"));
                }
            }
            self.expect(Tok::Semi, "';'")?;
        }
        if prop.asserts.is_empty() {
            return Err(PropertyError::NoAssert);
        }
        Ok(prop)
    }
}

/// Parses the property DSL. Index ranges are checked by
/// [`Property::validate`] once the model is known.
pub fn parse_property(text: &str) -> Result<Property, PropertyError> {
    let toks = lex(text)?;
    Parser { toks, pos: 0 }.property()
}
