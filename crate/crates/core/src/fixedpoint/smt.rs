//! SMT-LIB2 bit-vector terms mirroring the concrete fixed-point operations.
//!
//! Every emitter references each operand exactly once, so nesting emitted
//! terms never duplicates subterms. Intermediates that are needed more than
//! once are bound with `let`; operands are closed terms, so reusing the same
//! binder names in nested lets is safe.

use num_bigint::BigInt;
use num_traits::One;

use super::{FxpConfig, OverflowMode, RoundingMode};

/// Bit-vector sort of the given width.
pub fn sort(width: u32) -> String {
    format!("(_ BitVec {width})")
}

/// Two's-complement literal of `raw` at `width` bits.
pub fn literal(raw: i128, width: u32) -> String {
    if width < 128 {
        let bits = (raw as u128) & ((1u128 << width) - 1);
        return format!("(_ bv{bits} {width})");
    }
    let mut bits = BigInt::from(raw);
    if raw < 0 {
        bits += BigInt::one() << width as usize;
    }
    format!("(_ bv{bits} {width})")
}

pub fn sign_extend(term: &str, extra: u32) -> String {
    if extra == 0 {
        term.to_string()
    } else {
        format!("((_ sign_extend {extra}) {term})")
    }
}

/// Brings a `wide`-bit intermediate back to the configured width.
fn fit(term: &str, wide: u32, cfg: &FxpConfig) -> String {
    let w = cfg.width();
    match cfg.overflow {
        OverflowMode::Wrap => {
            if wide == w {
                term.to_string()
            } else {
                format!("((_ extract {} 0) {term})", w - 1)
            }
        }
        OverflowMode::Saturate => format!(
            "(let ((_f {term})) (ite (bvsgt _f {maxw}) {max} (ite (bvslt _f {minw}) {min} ((_ extract {hi} 0) _f))))",
            maxw = literal(cfg.max_raw() as i128, wide),
            minw = literal(cfg.min_raw() as i128, wide),
            max = literal(cfg.max_raw() as i128, w),
            min = literal(cfg.min_raw() as i128, w),
            hi = w - 1,
        ),
    }
}

pub fn add(a: &str, b: &str, cfg: &FxpConfig) -> String {
    match cfg.overflow {
        OverflowMode::Wrap => format!("(bvadd {a} {b})"),
        OverflowMode::Saturate => {
            fit(&format!("(bvadd {} {})", sign_extend(a, 1), sign_extend(b, 1)), cfg.width() + 1, cfg)
        }
    }
}

pub fn sub(a: &str, b: &str, cfg: &FxpConfig) -> String {
    match cfg.overflow {
        OverflowMode::Wrap => format!("(bvsub {a} {b})"),
        OverflowMode::Saturate => {
            fit(&format!("(bvsub {} {})", sign_extend(a, 1), sign_extend(b, 1)), cfg.width() + 1, cfg)
        }
    }
}

/// Floor or nearest-even shift of a `wide`-bit term right by `frac_bits`.
fn rescale(term: &str, wide: u32, cfg: &FxpConfig) -> String {
    let f = cfg.frac_bits();
    if f == 0 {
        return term.to_string();
    }
    let shift = literal(f as i128, wide);
    match cfg.rounding {
        RoundingMode::TruncateTowardNegative => format!("(bvashr {term} {shift})"),
        RoundingMode::NearestEven => format!(
            "(let ((_p {term})) (let ((_q (bvashr _p {shift})) (_r ((_ extract {fm1} 0) _p))) \
             (ite (or (bvugt _r {half}) (and (= _r {half}) (= ((_ extract 0 0) _q) #b1))) (bvadd _q {one}) _q)))",
            fm1 = f - 1,
            half = literal(1i128 << (f - 1), f),
            one = literal(1, wide),
        ),
    }
}

pub fn mul(a: &str, b: &str, cfg: &FxpConfig) -> String {
    let w = cfg.width();
    let wide = 2 * w;
    let product = format!("(bvmul {} {})", sign_extend(a, w), sign_extend(b, w));
    fit(&rescale(&product, wide, cfg), wide, cfg)
}

/// Quotient term. The divisor must be constrained non-zero by the caller.
pub fn div(a: &str, b: &str, cfg: &FxpConfig) -> String {
    let w = cfg.width();
    let wide = 2 * w + 1;
    let zero = literal(0, wide);
    let one = literal(1, wide);
    let num = format!("(bvshl {} {})", sign_extend(a, wide - w), literal(cfg.frac_bits() as i128, wide));
    // Floor quotient _q and remainder _m, where _m has the divisor's sign.
    let floor = format!(
        "(let ((_n {num}) (_d {den})) (let ((_t (bvsdiv _n _d)) (_s (bvsrem _n _d))) \
         (let ((_adj (and (not (= _s {zero})) (not (= (bvslt _s {zero}) (bvslt _d {zero})))))) \
         (let ((_q (ite _adj (bvsub _t {one}) _t)) (_m (ite _adj (bvadd _s _d) _s))) {{BODY}}))))",
        den = sign_extend(b, wide - w),
    );
    let body = match cfg.rounding {
        RoundingMode::TruncateTowardNegative => "_q".to_string(),
        RoundingMode::NearestEven => format!(
            "(let ((_tw (bvshl (ite (bvslt _m {zero}) (bvneg _m) _m) {one})) (_ad (ite (bvslt _d {zero}) (bvneg _d) _d))) \
             (ite (or (bvugt _tw _ad) (and (= _tw _ad) (= ((_ extract 0 0) _q) #b1))) (bvadd _q {one}) _q))"
        ),
    };
    fit(&floor.replace("{BODY}", &body), wide, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_are_twos_complement() {
        assert_eq!(literal(-1, 5), "(_ bv31 5)");
        assert_eq!(literal(3, 5), "(_ bv3 5)");
        assert_eq!(literal(-128, 8), "(_ bv128 8)");
        assert_eq!(literal(i64::MIN as i128, 64), "(_ bv9223372036854775808 64)");
        assert_eq!(literal(-1, 129), format!("(_ bv{} 129)", (BigInt::one() << 129usize) - 1));
        assert_eq!(literal(-1, 128), format!("(_ bv{} 128)", u128::MAX));
    }

    #[test]
    fn wrap_add_is_plain_bvadd() {
        let cfg = FxpConfig::new(2, 2).unwrap();
        assert_eq!(add("a", "b", &cfg), "(bvadd a b)");
    }

    #[test]
    fn operands_appear_once() {
        let cfg = FxpConfig::new(3, 4)
            .unwrap()
            .with_overflow(OverflowMode::Saturate)
            .with_rounding(RoundingMode::NearestEven);
        for term in [add("OPA", "OPB", &cfg), mul("OPA", "OPB", &cfg), div("OPA", "OPB", &cfg)] {
            assert_eq!(term.matches("OPA").count(), 1);
            assert_eq!(term.matches("OPB").count(), 1);
            assert_eq!(term.matches('(').count(), term.matches(')').count());
        }
    }
}
