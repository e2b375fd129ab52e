//! Serialization round trips and decoding examples.

mod common;

use std::sync::Arc;

use proptest::prelude::*;
use qnnv::encoder::{decode_inputs, encode, DecodeError};
use qnnv::fixedpoint::{float_to_fxp, FxpConfig, OverflowMode, QuantSpec, RoundingMode};
use qnnv::lut::{build_lut, LookupTable};
use qnnv::model::{parse_json_model, parse_nnet, Activation, DenseLayer, ModelIR};
use qnnv::property::{parse_property, Comparator, LinearConstraint, Property, Var};

fn act(relu_only: bool) -> BoxedStrategy<Activation> {
    if relu_only {
        return Just(Activation::Relu).boxed();
    }
    prop_oneof![Just(Activation::Relu), Just(Activation::Sigmoid), Just(Activation::Tanh), Just(Activation::Linear)]
        .boxed()
}

fn model(relu_only: bool) -> impl Strategy<Value = ModelIR> {
    (1usize..4, prop::collection::vec(1usize..4, 1..4)).prop_flat_map(move |(inputs, widths)| {
        let mut dims = vec![inputs];
        dims.extend(&widths);
        let n = widths.len();
        let layers: Vec<_> = (0..n)
            .map(|k| {
                let (c, r) = (dims[k], dims[k + 1]);
                (
                    prop::collection::vec(prop::collection::vec(-1e3f64..1e3, c), r),
                    prop::collection::vec(-1e3f64..1e3, r),
                    if k + 1 == n { Just(Activation::Linear).boxed() } else { act(relu_only) },
                )
            })
            .collect();
        layers.prop_map(|ls| {
            ModelIR::new(ls.into_iter().map(|(w, b, a)| DenseLayer::new(w, b, a).unwrap()).collect()).unwrap()
        })
    })
}

fn constraint(tier_input: bool, dim: usize) -> impl Strategy<Value = LinearConstraint> {
    let cmp = prop_oneof![Just(Comparator::Lt), Just(Comparator::Le), Just(Comparator::Gt), Just(Comparator::Ge)];
    let coeff = prop_oneof![Just(1.0), Just(-1.0), -100.0f64..100.0];
    (
        prop::collection::vec(coeff, dim),
        prop::sample::subsequence((0..dim).collect::<Vec<_>>(), 1..=dim.min(3)).prop_shuffle(),
        cmp,
        -1e4f64..1e4,
    )
        .prop_map(move |(coeffs, vars, cmp, bound)| LinearConstraint {
            // Distinct variables: the parser folds repeated ones.
            terms: vars.into_iter().map(|i| (coeffs[i], if tier_input { Var::x(i) } else { Var::y(i) })).collect(),
            cmp,
            bound,
        })
}

fn property() -> impl Strategy<Value = Property> {
    (
        "[a-z_][a-z0-9_]{0,8}",
        prop::collection::vec(constraint(true, 4), 0..4),
        prop::collection::vec(constraint(false, 3), 1..4),
    )
        .prop_map(|(name, assumes, asserts)| Property { name, assumes, asserts })
}

proptest! {
    #[test]
    fn json_model_round_trip(m in model(false)) {
        prop_assert_eq!(parse_json_model(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn nnet_round_trip(m in model(true)) {
        let back = parse_nnet(&m.to_nnet().unwrap()).unwrap();
        prop_assert_eq!(back.layers(), m.layers());
    }

    #[test]
    fn property_text_round_trip(p in property()) {
        prop_assert_eq!(parse_property(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn fixed_point_values_round_trip(int_bits in 1u32..20, frac_bits in 0u32..30, seed in any::<u64>(), sat in any::<bool>()) {
        let cfg = FxpConfig::new(int_bits, frac_bits).unwrap()
            .with_overflow(if sat { OverflowMode::Saturate } else { OverflowMode::Wrap });
        let span = (cfg.max_raw() as i128 - cfg.min_raw() as i128 + 1) as u128;
        let raw = (cfg.min_raw() as i128 + (seed as u128 % span) as i128) as i64;
        prop_assert_eq!(float_to_fxp(cfg.denote(raw), &cfg).unwrap().raw(), raw);
    }

    #[test]
    fn quant_spec_round_trip(int_bits in 1u32..32, frac_bits in 0u32..32, sat in any::<bool>(), rne in any::<bool>()) {
        let cfg = FxpConfig::new(int_bits, frac_bits).unwrap()
            .with_overflow(if sat { OverflowMode::Saturate } else { OverflowMode::Wrap })
            .with_rounding(if rne { RoundingMode::NearestEven } else { RoundingMode::TruncateTowardNegative });
        let spec = QuantSpec::Fixed(cfg);
        prop_assert_eq!(spec.to_string().parse::<QuantSpec>().unwrap(), spec);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn table_text_round_trip(lo in -6.0f64..0.0, width in 0.5f64..6.0, eps in 0.002f64..0.05, u in -20.0f64..20.0) {
        let t = build_lut(Activation::Tanh, (lo, lo + width), None, eps).unwrap();
        let back = LookupTable::from_text(&t.to_text()).unwrap();
        prop_assert_eq!(back.eval(u), t.eval(u));
        prop_assert_eq!(back.sample_count(), t.sample_count());
    }
}

fn q34_script() -> qnnv::encoder::SmtScript {
    let m = parse_json_model(
        r#"{"format_version": 1, "layers": [{"type": "dense", "weights": [[1.0]], "bias": [0.0], "activation": "linear"}]}"#,
    )
    .unwrap();
    let net = common::quantize(m, "fxp:3.4");
    encode(Arc::clone(&net), &parse_property("assert y[0] <= 1;").unwrap(), None).unwrap()
}

#[test]
fn decodes_hex_input() {
    let s = q34_script();
    let x = decode_inputs(&s, "((in_0 #x08))").unwrap();
    assert_eq!((x[0].raw, x[0].value), (8, 0.5));
    let x = decode_inputs(&s, "((in_0 #xf8))").unwrap();
    assert_eq!(x[0].value, -0.5);
    let x = decode_inputs(&s, "(model (define-fun in_0 () (_ BitVec 8) (_ bv24 8)))").unwrap();
    assert_eq!(x[0].value, 1.5);
}

#[test]
fn decode_errors() {
    let s = q34_script();
    assert_eq!(decode_inputs(&s, "((l1_n0_y #x08))"), Err(DecodeError::MissingSymbol("in_0".into())));
    assert!(matches!(decode_inputs(&s, "((in_0 #x008))"), Err(DecodeError::Width { expected: 8, found: 12, .. })));
    assert!(matches!(decode_inputs(&s, "((in_0 #x08)"), Err(DecodeError::Syntax(_))));
}
