//! Lookup-table discretization of non-linear activation functions.
//!
//! A table holds one or more pieces. Each piece samples the function at `N`
//! uniformly spaced points with `N = ceil(λ·(hi−lo) / 2ε) + 1`, which bounds
//! the spacing `h` by `λ·h/2 ≤ ε`. Lookup returns the output of the nearest
//! sample (ties go to the lower sample) and clamps outside the sampled range,
//! so with a Lipschitz constant `λ` the lookup error is at most `ε`.
//!
//! Lookup over the whole table is a step function: the output is
//! `outputs[k]` where `k` counts the midpoints between consecutive samples that
//! lie strictly below the query. Quantized semantics reuse that view.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{sigmoid, Activation};

/// Points in the post-construction audit sweep.
pub const AUDIT_POINTS: usize = 1_000_000;

pub const SIGMOID_LIPSCHITZ: f64 = 0.25;
pub const TANH_LIPSCHITZ: f64 = 1.0;
pub const DEFAULT_EPSILON: f64 = 0.002;

#[derive(Debug, Error, PartialEq)]
pub enum LutError {
    #[error("{0} is exact and does not need a lookup table")]
    NotTabulated(String),
    #[error("no Lipschitz constant known for {0}; supply one explicitly")]
    MissingLipschitz(String),
    #[error("invalid table parameters: {0}")]
    InvalidParameters(String),
    #[error("audit failed: max error {max_error} exceeds epsilon {epsilon}")]
    AuditFailed { max_error: f64, epsilon: f64 },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Function a table was built from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SourceTag {
    Sigmoid,
    Tanh,
    Custom(String),
}

impl SourceTag {
    pub fn name(&self) -> &str {
        match self {
            SourceTag::Sigmoid => "sigmoid",
            SourceTag::Tanh => "tanh",
            SourceTag::Custom(n) => n,
        }
    }

    fn from_name(name: &str) -> SourceTag {
        match name {
            "sigmoid" => SourceTag::Sigmoid,
            "tanh" => SourceTag::Tanh,
            other => SourceTag::Custom(other.to_string()),
        }
    }

    /// Known monotone non-decreasing sources.
    pub fn is_monotone(&self) -> bool {
        matches!(self, SourceTag::Sigmoid | SourceTag::Tanh)
    }

    pub fn function(&self) -> Option<fn(f64) -> f64> {
        match self {
            SourceTag::Sigmoid => Some(sigmoid),
            SourceTag::Tanh => Some(f64::tanh),
            SourceTag::Custom(_) => None,
        }
    }
}

/// Result of the dense audit sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub points: usize,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub lipschitz: f64,
    /// `(input, output)` pairs, ascending, uniformly spaced, first at `lo`
    /// and last at `hi`.
    pub samples: Vec<(f64, f64)>,
}

impl Piece {
    pub fn spacing(&self) -> f64 {
        if self.samples.len() < 2 {
            0.0
        } else {
            (self.hi - self.lo) / (self.samples.len() - 1) as f64
        }
    }
}

/// Requested piece: domain and Lipschitz constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PieceSpec {
    pub lo: f64,
    pub hi: f64,
    pub lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    pieces: Vec<Piece>,
    epsilon: f64,
    source: SourceTag,
    certificate: Option<Certificate>,
    // Flattened view: all sample outputs and the midpoints between them.
    outputs: Vec<f64>,
    midpoints: Vec<f64>,
}

/// Sample count guaranteeing `λ·h/2 ≤ ε` on `[lo, hi]`.
pub fn sample_count(lo: f64, hi: f64, lipschitz: f64, epsilon: f64) -> usize {
    let q = lipschitz * (hi - lo) / (2.0 * epsilon);
    let mut n = q.ceil();
    // Absorb representation noise such as 1000.0000000000001.
    if n - q > 1.0 - 1e-9 * q.max(1.0) {
        n -= 1.0;
    }
    n.max(1.0) as usize + 1
}

/// Default table domain and Lipschitz constant for a shipped activation.
pub fn default_piece(act: Activation) -> Result<PieceSpec, LutError> {
    match act {
        Activation::Sigmoid => Ok(PieceSpec { lo: -8.0, hi: 8.0, lipschitz: SIGMOID_LIPSCHITZ }),
        Activation::Tanh => Ok(PieceSpec { lo: -4.0, hi: 4.0, lipschitz: TANH_LIPSCHITZ }),
        Activation::Relu | Activation::Linear => Err(LutError::NotTabulated(act.name().into())),
    }
}

/// Builds and audits a table for a shipped activation. `lipschitz` overrides
/// the shipped constant when given.
pub fn build_lut(
    act: Activation,
    domain: (f64, f64),
    lipschitz: Option<f64>,
    epsilon: f64,
) -> Result<LookupTable, LutError> {
    let default = default_piece(act)?;
    let source = match act {
        Activation::Sigmoid => SourceTag::Sigmoid,
        _ => SourceTag::Tanh,
    };
    let f = source.function().expect("shipped activation");
    LookupTable::build(
        source,
        f,
        &[PieceSpec { lo: domain.0, hi: domain.1, lipschitz: lipschitz.unwrap_or(default.lipschitz) }],
        epsilon,
    )
}

/// Shipped table for `act` with default domain and `ε = 0.002`.
pub fn default_lut(act: Activation) -> Result<LookupTable, LutError> {
    let p = default_piece(act)?;
    build_lut(act, (p.lo, p.hi), None, DEFAULT_EPSILON)
}

fn validate_params(pieces: &[PieceSpec], epsilon: f64) -> Result<(), LutError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(LutError::InvalidParameters(format!("epsilon {epsilon} must be positive")));
    }
    if pieces.is_empty() {
        return Err(LutError::InvalidParameters("no pieces".into()));
    }
    for (i, p) in pieces.iter().enumerate() {
        if !(p.lo.is_finite() && p.hi.is_finite() && p.hi > p.lo) {
            return Err(LutError::InvalidParameters(format!(
                "piece {i}: domain [{}, {}] must satisfy lo < hi",
                p.lo, p.hi
            )));
        }
        if !(p.lipschitz > 0.0 && p.lipschitz.is_finite()) {
            return Err(LutError::InvalidParameters(format!("piece {i}: Lipschitz constant must be positive")));
        }
        if i > 0 && p.lo <= pieces[i - 1].hi {
            return Err(LutError::InvalidParameters(format!("piece {i} overlaps or precedes piece {}", i - 1)));
        }
    }
    Ok(())
}

impl LookupTable {
    /// Builds a (possibly multi-piece) table for an arbitrary function and
    /// runs the dense audit over every piece.
    pub fn build(
        source: SourceTag,
        f: impl Fn(f64) -> f64,
        pieces: &[PieceSpec],
        epsilon: f64,
    ) -> Result<LookupTable, LutError> {
        validate_params(pieces, epsilon)?;
        let pieces = pieces
            .iter()
            .map(|p| {
                let n = sample_count(p.lo, p.hi, p.lipschitz, epsilon);
                let step = (p.hi - p.lo) / (n - 1) as f64;
                let samples = (0..n)
                    .map(|i| {
                        let x = if i + 1 == n { p.hi } else { p.lo + i as f64 * step };
                        (x, f(x))
                    })
                    .collect();
                Piece { lo: p.lo, hi: p.hi, lipschitz: p.lipschitz, samples }
            })
            .collect();
        let mut table = Self::assemble(source, pieces, epsilon);
        let cert = table.audit(&f, AUDIT_POINTS);
        if cert.max_error > epsilon {
            return Err(LutError::AuditFailed { max_error: cert.max_error, epsilon });
        }
        table.certificate = Some(cert);
        Ok(table)
    }

    fn assemble(source: SourceTag, pieces: Vec<Piece>, epsilon: f64) -> LookupTable {
        let inputs: Vec<f64> = pieces.iter().flat_map(|p| p.samples.iter().map(|s| s.0)).collect();
        let outputs = pieces.iter().flat_map(|p| p.samples.iter().map(|s| s.1)).collect();
        let midpoints = inputs.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect();
        LookupTable { pieces, epsilon, source, certificate: None, outputs, midpoints }
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn source(&self) -> &SourceTag {
        &self.source
    }

    pub fn certificate(&self) -> Option<Certificate> {
        self.certificate
    }

    pub fn clamp_low(&self) -> f64 {
        self.outputs[0]
    }

    pub fn clamp_high(&self) -> f64 {
        self.outputs[self.outputs.len() - 1]
    }

    pub fn lo(&self) -> f64 {
        self.pieces[0].lo
    }

    pub fn hi(&self) -> f64 {
        self.pieces[self.pieces.len() - 1].hi
    }

    pub fn sample_count(&self) -> usize {
        self.outputs.len()
    }

    /// Sample outputs in input order.
    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    /// Decision thresholds: `lookup(u) = outputs[#{m in midpoints : m < u}]`.
    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    /// Index of the sample selected for `u`.
    pub fn index_of(&self, u: f64) -> usize {
        self.midpoints.partition_point(|&m| m < u)
    }

    /// Nearest-sample lookup with clamping. NaN selects the first sample.
    pub fn eval(&self, u: f64) -> f64 {
        self.outputs[self.index_of(u)]
    }

    /// Smallest and largest sample output reachable from inputs in `[lo, hi]`.
    pub fn output_range(&self, lo: f64, hi: f64) -> (f64, f64) {
        let (a, b) = (self.index_of(lo), self.index_of(hi));
        if self.source.is_monotone() {
            return (self.outputs[a], self.outputs[b]);
        }
        self.outputs[a..=b].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), &v| (mn.min(v), mx.max(v)))
    }

    /// Dense uniform sweep of every piece; returns the worst absolute error.
    pub fn audit(&self, f: impl Fn(f64) -> f64, points: usize) -> Certificate {
        let per_piece = (points / self.pieces.len()).max(2);
        let max_error = self
            .pieces
            .iter()
            .flat_map(|p| {
                let step = (p.hi - p.lo) / (per_piece - 1) as f64;
                (0..per_piece).map(move |i| if i + 1 == per_piece { p.hi } else { p.lo + i as f64 * step })
            })
            .map(|u| (self.eval(u) - f(u)).abs())
            .fold(0.0, f64::max);
        Certificate { points: per_piece * self.pieces.len(), max_error }
    }

    /// Versioned text export: a header with ε and the source, then one block
    /// per piece (`piece lo hi λ n`) followed by `n` sample lines `x y`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("qnnv-lut 1\n");
        let _ = writeln!(out, "source {}", self.source.name());
        let _ = writeln!(out, "epsilon {:?}", self.epsilon);
        for p in &self.pieces {
            let _ = writeln!(out, "piece {:?} {:?} {:?} {}", p.lo, p.hi, p.lipschitz, p.samples.len());
            for (x, y) in &p.samples {
                let _ = writeln!(out, "{x:?} {y:?}");
            }
        }
        out
    }

    /// Parses a table written by [`LookupTable::to_text`] or by hand, and
    /// checks its structural invariants including `λ·h/2 ≤ ε` per piece. The
    /// function itself is unknown here, so no audit is run.
    pub fn from_text(text: &str) -> Result<LookupTable, LutError> {
        let err = |line: usize, reason: String| LutError::Parse { line, reason };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut next =
            |what: &str| lines.next().ok_or_else(|| err(0, format!("unexpected end of input, expected {what}")));
        let num = |line: usize, tok: &str| -> Result<f64, LutError> {
            let v: f64 = tok.parse().map_err(|_| err(line, format!("bad number {tok:?}")))?;
            if !v.is_finite() {
                return Err(err(line, format!("non-finite number {tok:?}")));
            }
            Ok(v)
        };

        let (line, header) = next("header")?;
        if header != "qnnv-lut 1" {
            return Err(err(line, format!("unsupported header {header:?}")));
        }
        let (line, src) = next("source")?;
        let source = match src.split_once(' ') {
            Some(("source", name)) if !name.trim().is_empty() => SourceTag::from_name(name.trim()),
            _ => return Err(err(line, "expected `source <name>`".into())),
        };
        let (line, eps) = next("epsilon")?;
        let epsilon = match eps.split_once(' ') {
            Some(("epsilon", v)) => num(line, v.trim())?,
            _ => return Err(err(line, "expected `epsilon <value>`".into())),
        };

        let mut pieces = Vec::new();
        let mut specs = Vec::new();
        while let Ok((line, head)) = next("piece") {
            let toks: Vec<&str> = head.split_whitespace().collect();
            if toks.len() != 5 || toks[0] != "piece" {
                return Err(err(line, "expected `piece <lo> <hi> <lipschitz> <n>`".into()));
            }
            let (lo, hi, lipschitz) = (num(line, toks[1])?, num(line, toks[2])?, num(line, toks[3])?);
            let n: usize = toks[4].parse().map_err(|_| err(line, format!("bad sample count {:?}", toks[4])))?;
            if n < 2 {
                return Err(err(line, "a piece needs at least two samples".into()));
            }
            let mut samples = Vec::with_capacity(n);
            for _ in 0..n {
                let (line, s) = next("sample")?;
                let mut it = s.split_whitespace();
                let (Some(x), Some(y), None) = (it.next(), it.next(), it.next()) else {
                    return Err(err(line, "expected `<input> <output>`".into()));
                };
                samples.push((num(line, x)?, num(line, y)?));
            }
            let piece = Piece { lo, hi, lipschitz, samples };
            check_piece(&piece, epsilon).map_err(|r| err(line, r))?;
            specs.push(PieceSpec { lo, hi, lipschitz });
            pieces.push(piece);
        }
        validate_params(&specs, epsilon).map_err(|e| err(0, e.to_string()))?;
        Ok(Self::assemble(source, pieces, epsilon))
    }
}

fn check_piece(p: &Piece, epsilon: f64) -> Result<(), String> {
    let n = p.samples.len();
    if p.samples[0].0 != p.lo || p.samples[n - 1].0 != p.hi {
        return Err("first/last sample must sit at the piece bounds".into());
    }
    let h = p.spacing();
    let tol = 1e-9 * (p.hi - p.lo).abs().max(1.0);
    for (i, w) in p.samples.windows(2).enumerate() {
        if (w[1].0 - w[0].0 - h).abs() > tol {
            return Err(format!("sample {} breaks uniform spacing", i + 1));
        }
    }
    if p.lipschitz * h / 2.0 > epsilon * (1.0 + 1e-9) {
        return Err(format!("spacing {h} too coarse for epsilon {epsilon} with Lipschitz {}", p.lipschitz));
    }
    Ok(())
}
