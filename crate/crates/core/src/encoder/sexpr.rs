//! Reading solver models back into quantized values.
//!
//! Accepts the model shapes produced by common solvers: `get-value` pairs
//! `((sym val) ...)`, `define-fun` models (optionally wrapped in `model`),
//! and `(= sym val)` assignments. Values may be `#x`/`#b` literals,
//! `(_ bvN W)`, `(fp s e m)`, `((_ to_fp 8 24) bv)` or the special
//! `(_ +zero 8 24)` family.

use std::collections::HashMap;

use thiserror::Error;

use super::{SmtScript, Symbol};
use crate::oracle;
use crate::quantized::{QLayers, QValue};
use crate::verdict::Counterexample;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("malformed model text: {0}")]
    Syntax(String),
    #[error("model has no value for `{0}`")]
    MissingSymbol(String),
    #[error("value of `{symbol}` has {found} bits, expected {expected}")]
    Width { symbol: String, expected: u32, found: u32 },
    #[error("witness failed replay: {0}")]
    Replay(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize(text: &str) -> Result<Vec<String>, DecodeError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '(' | ')' => {
                out.push(c.to_string());
                chars.next();
            }
            ';' => while chars.next().is_some_and(|c| c != '\n') {},
            '"' | '|' => {
                chars.next();
                let mut s = String::from(c);
                loop {
                    match chars.next() {
                        Some(d) if d == c => {
                            // Doubled quotes escape inside strings.
                            if c == '"' && chars.peek() == Some(&'"') {
                                chars.next();
                                s.push(d);
                                continue;
                            }
                            break;
                        }
                        Some(d) => s.push(d),
                        None => return Err(DecodeError::Syntax("unterminated literal".into())),
                    }
                }
                if c == '|' {
                    // Quoted symbols denote their contents.
                    out.push(s[1..].to_string());
                } else {
                    out.push(s);
                }
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            _ => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_whitespace() || d == '(' || d == ')' || d == ';' {
                        break;
                    }
                    s.push(d);
                    chars.next();
                }
                out.push(s);
            }
        }
    }
    Ok(out)
}

fn parse_all(text: &str) -> Result<Vec<Sexp>, DecodeError> {
    let tokens = tokenize(text)?;
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    for t in tokens {
        match t.as_str() {
            "(" => stack.push(Vec::new()),
            ")" => {
                let done = stack.pop().expect("non-empty");
                stack.last_mut().ok_or_else(|| DecodeError::Syntax("unbalanced `)`".into()))?.push(Sexp::List(done));
            }
            _ => stack.last_mut().expect("non-empty").push(Sexp::Atom(t)),
        }
    }
    if stack.len() != 1 {
        return Err(DecodeError::Syntax("unbalanced `(`".into()));
    }
    Ok(stack.pop().expect("root"))
}

/// A bit-level value from a model. Floating-point values are stored as
/// their IEEE bit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmtValue {
    pub width: u32,
    pub bits: u128,
}

impl SmtValue {
    /// Two's-complement reading of the bits.
    pub fn signed(&self) -> i128 {
        let shift = 128 - self.width;
        ((self.bits << shift) as i128) >> shift
    }
}

fn bit_literal(s: &str) -> Option<SmtValue> {
    if let Some(h) = s.strip_prefix("#x") {
        let bits = u128::from_str_radix(h, 16).ok()?;
        Some(SmtValue { width: 4 * h.len() as u32, bits })
    } else if let Some(b) = s.strip_prefix("#b") {
        let bits = u128::from_str_radix(b, 2).ok()?;
        Some(SmtValue { width: b.len() as u32, bits })
    } else {
        None
    }
}

fn float_special(name: &str, eb: u32, sb: u32) -> Option<SmtValue> {
    let width = eb + sb;
    let exp_all = ((1u128 << eb) - 1) << (sb - 1);
    let sign = 1u128 << (width - 1);
    let bits = match name {
        "+zero" => 0,
        "-zero" => sign,
        "+oo" => exp_all,
        "-oo" => sign | exp_all,
        "NaN" => exp_all | (1u128 << (sb - 2)),
        _ => return None,
    };
    Some(SmtValue { width, bits })
}

fn value(e: &Sexp) -> Option<SmtValue> {
    match e {
        Sexp::Atom(a) => bit_literal(a),
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(u), Sexp::Atom(bv), Sexp::Atom(w)] if u == "_" && bv.starts_with("bv") => {
                let width: u32 = w.parse().ok()?;
                let bits: u128 = bv[2..].parse().ok()?;
                Some(SmtValue { width, bits })
            }
            [Sexp::Atom(u), Sexp::Atom(name), Sexp::Atom(eb), Sexp::Atom(sb)] if u == "_" => {
                float_special(name, eb.parse().ok()?, sb.parse().ok()?)
            }
            [Sexp::Atom(fp), s, e, m] if fp == "fp" => {
                let (s, e, m) = (value(s)?, value(e)?, value(m)?);
                Some(SmtValue {
                    width: s.width + e.width + m.width,
                    bits: (s.bits << (e.width + m.width)) | (e.bits << m.width) | m.bits,
                })
            }
            [Sexp::List(head), inner] if matches!(head.first(), Some(Sexp::Atom(u)) if u == "_") => {
                // ((_ to_fp eb sb) bv)
                value(inner)
            }
            _ => None,
        },
    }
}

fn collect(e: &Sexp, out: &mut HashMap<String, Sexp>) {
    let Sexp::List(items) = e else { return };
    match items.as_slice() {
        [Sexp::Atom(df), Sexp::Atom(name), Sexp::List(args), _sort, val] if df == "define-fun" && args.is_empty() => {
            out.insert(name.clone(), val.clone());
        }
        [Sexp::Atom(eq), Sexp::Atom(name), val] if eq == "=" => {
            out.insert(name.clone(), val.clone());
        }
        [Sexp::Atom(name), val] if !name.starts_with('#') && value(val).is_some() => {
            out.insert(name.clone(), val.clone());
        }
        _ => {
            for i in items {
                collect(i, out);
            }
        }
    }
}

/// Every `symbol ↦ value` assignment found in the solver output.
pub fn parse_assignments(text: &str) -> Result<HashMap<String, SmtValue>, DecodeError> {
    let mut raw = HashMap::new();
    for e in parse_all(text)? {
        collect(&e, &mut raw);
    }
    Ok(raw.into_iter().filter_map(|(k, v)| value(&v).map(|v| (k, v))).collect())
}

/// Input assignment of a `sat` answer, in input order.
pub fn decode_inputs(script: &SmtScript, model: &str) -> Result<Vec<QValue>, DecodeError> {
    let values = parse_assignments(model)?;
    let mut inputs = Vec::new();
    for (name, sym) in &script.symbol_table {
        if let Symbol::Input(i) = sym {
            let v = values.get(name).ok_or_else(|| DecodeError::MissingSymbol(name.clone()))?;
            inputs.push((*i, to_qvalue(script, name, v)?));
        }
    }
    inputs.sort_by_key(|(i, _)| *i);
    Ok(inputs.into_iter().map(|(_, v)| v).collect())
}

pub(crate) fn to_qvalue(script: &SmtScript, name: &str, v: &SmtValue) -> Result<QValue, DecodeError> {
    let expected = match script.network().layers() {
        QLayers::Fixed(cfg, _) => cfg.width(),
        QLayers::Float(_) => 32,
    };
    if v.width != expected {
        return Err(DecodeError::Width { symbol: name.to_string(), expected, found: v.width });
    }
    Ok(match script.network().layers() {
        QLayers::Fixed(cfg, _) => QValue::fixed(v.signed() as i64, cfg),
        QLayers::Float(_) => QValue::float(f32::from_bits(v.bits as u32)),
    })
}

/// Decodes the witness and replays it; the result is a validated
/// counterexample.
pub fn decode_model(script: &SmtScript, model: &str) -> Result<Counterexample, DecodeError> {
    let inputs = decode_inputs(script, model)?;
    oracle::replay(script.network(), script.property(), &inputs).map_err(DecodeError::Replay)
}
