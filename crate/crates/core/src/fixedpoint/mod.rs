//! Bit-exact fixed-point arithmetic.
//!
//! A value in `Q(I, F)` is a signed two's-complement integer `raw` of width
//! `1 + I + F` denoting `raw * 2^-F`. Products and quotients are computed in
//! 128-bit intermediates, rescaled under the configured [`RoundingMode`] and
//! then brought back into range under the configured [`OverflowMode`].
//!
//! [`smt`] emits SMT-LIB2 bit-vector terms with identical semantics.

pub mod smt;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_WIDTH: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowMode {
    Wrap,
    Saturate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingMode {
    /// Round to nearest, ties to even.
    NearestEven,
    /// Floor (arithmetic shift right).
    TruncateTowardNegative,
}

#[derive(Debug, Error, PartialEq)]
pub enum FxpError {
    #[error("invalid format Q({int_bits},{frac_bits}): {reason}")]
    InvalidFormat { int_bits: u32, frac_bits: u32, reason: &'static str },
    #[error("operands use different fixed-point formats")]
    ConfigMismatch,
    #[error("division by zero")]
    DivisionByZero,
    #[error("cannot convert non-finite value {0} to fixed point")]
    NonFinite(f64),
    #[error("length mismatch: {weights} weights, {inputs} inputs")]
    LengthMismatch { weights: usize, inputs: usize },
    #[error("raw value {raw} does not fit in {width} bits")]
    RawOutOfRange { raw: i64, width: u32 },
    #[error("bad quantization spec {0:?}")]
    BadSpec(String),
}

/// Fixed-point format descriptor.
///
/// `rounding` governs the rescaling step of multiplication and division;
/// `conversion` governs real-to-fixed conversion of constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FxpConfig {
    int_bits: u32,
    frac_bits: u32,
    pub overflow: OverflowMode,
    pub rounding: RoundingMode,
    pub conversion: RoundingMode,
}

impl FxpConfig {
    /// `Q(int_bits, frac_bits)` with the default modes: wrap on overflow,
    /// floor rescaling, round-nearest-even conversion.
    pub fn new(int_bits: u32, frac_bits: u32) -> Result<Self, FxpError> {
        if int_bits == 0 {
            return Err(FxpError::InvalidFormat {
                int_bits,
                frac_bits,
                reason: "at least one integer bit is required",
            });
        }
        if 1 + int_bits as u64 + frac_bits as u64 > MAX_WIDTH as u64 {
            return Err(FxpError::InvalidFormat { int_bits, frac_bits, reason: "total width exceeds 64 bits" });
        }
        Ok(FxpConfig {
            int_bits,
            frac_bits,
            overflow: OverflowMode::Wrap,
            rounding: RoundingMode::TruncateTowardNegative,
            conversion: RoundingMode::NearestEven,
        })
    }

    pub fn with_overflow(mut self, mode: OverflowMode) -> Self {
        self.overflow = mode;
        self
    }

    pub fn with_rounding(mut self, mode: RoundingMode) -> Self {
        self.rounding = mode;
        self
    }

    pub fn with_conversion(mut self, mode: RoundingMode) -> Self {
        self.conversion = mode;
        self
    }

    pub fn int_bits(&self) -> u32 {
        self.int_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn width(&self) -> u32 {
        1 + self.int_bits + self.frac_bits
    }

    pub fn min_raw(&self) -> i64 {
        (-(1i128 << (self.width() - 1))) as i64
    }

    pub fn max_raw(&self) -> i64 {
        ((1i128 << (self.width() - 1)) - 1) as i64
    }

    /// Value of one unit in the last place, `2^-F`.
    pub fn ulp(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn min_value(&self) -> f64 {
        self.denote(self.min_raw())
    }

    pub fn max_value(&self) -> f64 {
        self.denote(self.max_raw())
    }

    pub fn denote(&self, raw: i64) -> f64 {
        raw as f64 * self.ulp()
    }

    /// Applies the overflow mode to an unbounded intermediate.
    pub fn fit(&self, wide: i128) -> i64 {
        match self.overflow {
            OverflowMode::Saturate => wide.clamp(self.min_raw() as i128, self.max_raw() as i128) as i64,
            OverflowMode::Wrap => wrap_to_width(wide, self.width()),
        }
    }

    pub fn value(&self, raw: i64) -> Result<FxpValue, FxpError> {
        if raw < self.min_raw() || raw > self.max_raw() {
            return Err(FxpError::RawOutOfRange { raw, width: self.width() });
        }
        Ok(FxpValue { raw, config: *self })
    }

    pub fn zero(&self) -> FxpValue {
        FxpValue { raw: 0, config: *self }
    }
}

impl fmt::Display for FxpConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fxp:{}.{}", self.int_bits, self.frac_bits)?;
        f.write_str(match self.overflow {
            OverflowMode::Wrap => ":wrap",
            OverflowMode::Saturate => ":sat",
        })?;
        f.write_str(match self.rounding {
            RoundingMode::NearestEven => ":rne",
            RoundingMode::TruncateTowardNegative => ":tn",
        })
    }
}

/// Numeric semantics selected by a quantization spec string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuantSpec {
    Fixed(FxpConfig),
    Float32,
}

impl fmt::Display for QuantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantSpec::Fixed(cfg) => cfg.fmt(f),
            QuantSpec::Float32 => f.write_str("float32"),
        }
    }
}

impl FromStr for QuantSpec {
    type Err = FxpError;

    /// `fxp:<int>.<frac>[:wrap|sat][:rne|tn]` or `float32`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FxpError::BadSpec(s.to_string());
        if s == "float32" {
            return Ok(QuantSpec::Float32);
        }
        let mut parts = s.split(':');
        if parts.next() != Some("fxp") {
            return Err(bad());
        }
        let (i, f) = parts.next().and_then(|p| p.split_once('.')).ok_or_else(bad)?;
        let mut cfg = FxpConfig::new(i.parse().map_err(|_| bad())?, f.parse().map_err(|_| bad())?)?;
        let mut seen_overflow = false;
        let mut seen_rounding = false;
        for opt in parts {
            match opt {
                "wrap" | "sat" if !seen_overflow => {
                    seen_overflow = true;
                    cfg.overflow = if opt == "wrap" { OverflowMode::Wrap } else { OverflowMode::Saturate };
                }
                "rne" | "tn" if !seen_rounding => {
                    seen_rounding = true;
                    cfg.rounding =
                        if opt == "rne" { RoundingMode::NearestEven } else { RoundingMode::TruncateTowardNegative };
                }
                _ => return Err(bad()),
            }
        }
        Ok(QuantSpec::Fixed(cfg))
    }
}

/// A fixed-point value: raw two's-complement integer plus its format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FxpValue {
    raw: i64,
    config: FxpConfig,
}

impl FxpValue {
    pub fn raw(&self) -> i64 {
        self.raw
    }

    pub fn config(&self) -> &FxpConfig {
        &self.config
    }

    pub fn to_f64(&self) -> f64 {
        self.config.denote(self.raw)
    }
}

impl fmt::Display for FxpValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (raw {})", self.to_f64(), self.raw)
    }
}

/// Reduces `v` modulo `2^width` into the signed range.
pub(crate) fn wrap_to_width(v: i128, width: u32) -> i64 {
    let shift = 128 - width;
    ((v << shift) >> shift) as i64
}

/// `n / d` rounded per `mode`. `d` must be non-zero.
pub(crate) fn round_div(n: i128, d: i128, mode: RoundingMode) -> i128 {
    let (n, d) = if d < 0 { (-n, -d) } else { (n, d) };
    let q = n.div_euclid(d);
    let r = n.rem_euclid(d);
    match mode {
        RoundingMode::TruncateTowardNegative => q,
        RoundingMode::NearestEven => {
            let twice = 2 * r;
            if twice > d || (twice == d && q & 1 == 1) {
                q + 1
            } else {
                q
            }
        }
    }
}

/// Rounds `x * 2^frac_bits` to an integer and applies the overflow mode.
pub fn float_to_fxp(x: f64, cfg: &FxpConfig) -> Result<FxpValue, FxpError> {
    Ok(FxpValue { raw: quantize_raw(x, cfg, cfg.conversion)?, config: *cfg })
}

pub(crate) fn quantize_raw(x: f64, cfg: &FxpConfig, mode: RoundingMode) -> Result<i64, FxpError> {
    if !x.is_finite() {
        return Err(FxpError::NonFinite(x));
    }
    // Scaling by a power of two is exact unless it overflows to infinity,
    // which the saturate/wrap logic below treats as "huge".
    let scaled = x * (cfg.frac_bits as f64).exp2();
    let rounded = match mode {
        RoundingMode::NearestEven => scaled.round_ties_even(),
        RoundingMode::TruncateTowardNegative => scaled.floor(),
    };
    const LIMIT: f64 = 1.0e38; // < 2^127
    Ok(match cfg.overflow {
        OverflowMode::Saturate => {
            if rounded >= cfg.max_raw() as f64 {
                cfg.max_raw()
            } else if rounded <= cfg.min_raw() as f64 {
                cfg.min_raw()
            } else {
                rounded as i64
            }
        }
        OverflowMode::Wrap => {
            if rounded.abs() < LIMIT {
                wrap_to_width(rounded as i128, cfg.width())
            } else {
                // Every finite double above 2^126 is a multiple of 2^73,
                // hence zero modulo 2^64.
                0
            }
        }
    })
}

fn same_config(a: &FxpValue, b: &FxpValue) -> Result<FxpConfig, FxpError> {
    if a.config != b.config {
        return Err(FxpError::ConfigMismatch);
    }
    Ok(a.config)
}

pub fn fxp_add(a: FxpValue, b: FxpValue) -> Result<FxpValue, FxpError> {
    let cfg = same_config(&a, &b)?;
    Ok(FxpValue { raw: cfg.fit(a.raw as i128 + b.raw as i128), config: cfg })
}

pub fn fxp_sub(a: FxpValue, b: FxpValue) -> Result<FxpValue, FxpError> {
    let cfg = same_config(&a, &b)?;
    Ok(FxpValue { raw: cfg.fit(a.raw as i128 - b.raw as i128), config: cfg })
}

pub fn fxp_mult(a: FxpValue, b: FxpValue) -> Result<FxpValue, FxpError> {
    let cfg = same_config(&a, &b)?;
    Ok(FxpValue { raw: mul_raw(a.raw, b.raw, &cfg), config: cfg })
}

pub fn fxp_div(a: FxpValue, b: FxpValue) -> Result<FxpValue, FxpError> {
    let cfg = same_config(&a, &b)?;
    if b.raw == 0 {
        return Err(FxpError::DivisionByZero);
    }
    let q = round_div((a.raw as i128) << cfg.frac_bits, b.raw as i128, cfg.rounding);
    Ok(FxpValue { raw: cfg.fit(q), config: cfg })
}

pub fn mul_raw(a: i64, b: i64, cfg: &FxpConfig) -> i64 {
    let wide = a as i128 * b as i128;
    cfg.fit(round_div(wide, 1i128 << cfg.frac_bits, cfg.rounding))
}

pub fn add_raw(a: i64, b: i64, cfg: &FxpConfig) -> i64 {
    cfg.fit(a as i128 + b as i128)
}

/// Fixed-point activation potential: weights are quantized, products are
/// accumulated left to right starting from zero, and the quantized bias is
/// added last.
pub fn fxp_potential(w: &[f64], x: &[FxpValue], b: f64, cfg: &FxpConfig) -> Result<FxpValue, FxpError> {
    if w.len() != x.len() {
        return Err(FxpError::LengthMismatch { weights: w.len(), inputs: x.len() });
    }
    let mut acc = cfg.zero();
    for (wi, xi) in w.iter().zip(x) {
        let wq = float_to_fxp(*wi, cfg)?;
        acc = fxp_add(acc, fxp_mult(wq, *xi)?)?;
    }
    fxp_add(acc, float_to_fxp(b, cfg)?)
}
