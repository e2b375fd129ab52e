//! SMT terms evaluated by a solver agree with the interpreter on every
//! neuron.

mod common;

use std::time::Duration;

use qnnv::encoder::{encode, parse_assignments, Symbol};
use qnnv::fixedpoint::QuantSpec;
use qnnv::model::Activation;
use qnnv::oracle::{float_from_key, interpret_quantized};
use qnnv::property::parse_property;
use qnnv::quantized::QValue;
use qnnv::solver::run_text;
use rand::Rng;

const QUANTS: [&str; 6] = ["fxp:2.4", "fxp:4.4:sat", "fxp:3.5:wrap:rne", "fxp:4.8:sat:rne", "fxp:2.3", "float32"];

#[test]
fn neuron_terms_match_interpreter() {
    let z3 = common::z3();
    let mut rng = common::rng(11);
    let mut checked = 0;
    let acts = [Activation::Relu, Activation::Sigmoid, Activation::Tanh, Activation::Linear];
    for n in 0..24 {
        let quant = QUANTS[n % QUANTS.len()];
        let inputs = rng.gen_range(1..=3);
        let widths: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..=4)).collect();
        let scale = if n % 4 == 0 { 6.0 } else { 1.5 };
        let net = common::quantize(common::random_model(&mut rng, inputs, &widths, &acts, scale), quant);
        let p = parse_property("assert y[0] >= 0;").unwrap();
        let script = encode(net.clone(), &p, None).unwrap();
        for _ in 0..10 {
            let x: Vec<QValue> = (0..inputs)
                .map(|_| match net.quant() {
                    QuantSpec::Fixed(cfg) => QValue::fixed(rng.gen_range(cfg.min_raw()..=cfg.max_raw()), cfg),
                    QuantSpec::Float32 => {
                        if rng.gen_bool(0.5) {
                            QValue::float(rng.gen_range(-8.0f32..8.0))
                        } else {
                            QValue::float(float_from_key(rng.gen_range(-2_139_095_040i64..2_139_095_040)))
                        }
                    }
                })
                .collect();
            let trace = interpret_quantized(&net, &x).unwrap();
            let text = script.render_probe(&x).unwrap();
            let out = run_text(&z3, &text, Duration::from_secs(60)).unwrap();
            assert!(out.stdout.starts_with("sat"), "net {n} ({quant}): {}\n{}", out.stdout, out.stderr);
            let values = parse_assignments(&out.stdout["sat".len()..]).unwrap();
            for (name, sym) in &script.symbol_table {
                let (want, got) = match *sym {
                    Symbol::Input(_) => continue,
                    Symbol::Potential { layer, neuron } => (trace.layers[layer][neuron].pre, values[name]),
                    Symbol::Output { layer, neuron } => (trace.layers[layer][neuron].post, values[name]),
                };
                let got_raw = match net.quant() {
                    QuantSpec::Fixed(_) => got.signed() as i64,
                    QuantSpec::Float32 => {
                        let f = f32::from_bits(got.bits as u32);
                        // Any NaN payload is the same value.
                        if f.is_nan() && want.as_f32().is_nan() {
                            continue;
                        }
                        got.bits as i64
                    }
                };
                assert_eq!(got_raw, want.raw, "net {n} ({quant}) {name} at {x:?}");
                checked += 1;
            }
        }
    }
    assert!(checked > 1000, "only {checked} neuron values compared");
}
