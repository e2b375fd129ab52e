//! Solver verdicts agree with exhaustive enumeration on small instances.

mod common;

use qnnv::model::Activation;
use qnnv::oracle::{brute_force_verify, replay, DEFAULT_GRID_LIMIT};
use qnnv::property::parse_property;
use qnnv::verdict::Status;
use rand::Rng;

fn check(quant: &str, seed: u64, count: usize) {
    let z3 = common::z3();
    let mut rng = common::rng(seed);
    let acts = [Activation::Relu, Activation::Sigmoid, Activation::Tanh];
    let mut statuses = Vec::new();
    for n in 0..count {
        let inputs = rng.gen_range(1..=2);
        let widths: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..=4)).collect();
        let net = common::quantize(common::random_model(&mut rng, inputs, &widths, &acts, 1.5), quant);
        let p = if n % 3 == 2 && net.output_dim() >= 2 {
            common::random_robustness(&mut rng, &net)
        } else {
            common::random_box_property(&mut rng, &net)
        };
        let oracle = brute_force_verify(&net, &p, DEFAULT_GRID_LIMIT).unwrap();
        for inv in [false, true] {
            let v = common::smt_verdict(&net, &p, inv, &z3);
            assert_eq!(v.status, oracle.status, "instance {n} ({quant}, invariants {inv}):\n{p}\n{:?}", v.diagnostics);
            if let Some(cex) = &v.counterexample {
                let again = replay(&net, &p.compile(net.quant()).unwrap(), &cex.input_values).unwrap();
                assert_eq!(again.trace, cex.trace);
            }
        }
        statuses.push(oracle.status);
    }
    assert!(statuses.contains(&Status::Safe) && statuses.contains(&Status::Unsafe));
}

#[test]
fn q2_4_random() {
    check("fxp:2.4", 1, 30);
}

#[test]
fn q4_4_saturating_rne() {
    check("fxp:4.4:sat:rne", 2, 20);
}

#[test]
fn q2_2_example_property() {
    let z3 = common::z3();
    let m = qnnv::model::ModelIR::new(vec![
        qnnv::model::DenseLayer::new(vec![vec![1.0, -0.5], vec![0.75, 1.0]], vec![0.25, 0.0], Activation::Relu)
            .unwrap(),
        qnnv::model::DenseLayer::new(vec![vec![1.0, -1.0], vec![-0.5, 1.0]], vec![0.0, 0.0], Activation::Linear)
            .unwrap(),
    ])
    .unwrap();
    let net = common::quantize(m, "fxp:2.2");
    let p = parse_property(
        "assume x[0] >= -1 && x[0] <= 1 && x[1] >= -1 && x[1] <= 1;\nassert y[0] - y[1] >= -2.5;\nassert y[1] <= 2;",
    )
    .unwrap();
    let oracle = brute_force_verify(&net, &p, DEFAULT_GRID_LIMIT).unwrap();
    let smt = common::smt_verdict(&net, &p, true, &z3);
    assert_eq!(smt.status, oracle.status);
}

#[test]
fn identity_examples() {
    let z3 = common::z3();
    let id = |q: &str, w: f64| {
        common::quantize(
            qnnv::model::ModelIR::new(vec![
                qnnv::model::DenseLayer::new(vec![vec![w]], vec![0.0], Activation::Relu).unwrap()
            ])
            .unwrap(),
            q,
        )
    };
    let safe = parse_property("assume x[0] >= 0 && x[0] <= 1; assert y[0] >= 0;").unwrap();
    assert_eq!(common::smt_verdict(&id("fxp:3.4", 1.0), &safe, false, &z3).status, Status::Safe);
    let unsafe_ = parse_property("assume x[0] >= 0 && x[0] <= 1; assert y[0] > 0.5;").unwrap();
    let v = common::smt_verdict(&id("fxp:3.4", 1.0), &unsafe_, false, &z3);
    assert_eq!(v.status, Status::Unsafe);
    let o = brute_force_verify(&id("fxp:3.4", 1.0), &unsafe_, DEFAULT_GRID_LIMIT).unwrap();
    assert_eq!(o.counterexample.unwrap().input_values[0].value, 0.0);

    let f = parse_property("assume x[0] >= 0 && x[0] <= 1; assert y[0] <= 1;").unwrap();
    assert_eq!(common::smt_verdict(&id("float32", 1.0), &f, true, &z3).status, Status::Safe);
    let g = parse_property("assume x[0] >= 0 && x[0] <= 1; assert y[0] <= 2;").unwrap();
    let v = common::smt_verdict(&id("float32", 3.0), &g, true, &z3);
    assert_eq!(v.status, Status::Unsafe);
    let x = v.counterexample.unwrap().input_values[0].as_f32();
    assert!(3.0 * x > 2.0);
}

#[test]
fn float_narrow_boxes() {
    // Boxes holding at most 2^16 binary32 values are enumerated exactly.
    let z3 = common::z3();
    let mut rng = common::rng(5);
    let acts = [Activation::Relu, Activation::Tanh];
    let mut seen = Vec::new();
    for _ in 0..12 {
        let net = common::quantize(common::random_model(&mut rng, 1, &[2, 1], &acts, 1.5), "float32");
        let c: f32 = rng.gen_range(-2.0..2.0);
        let hi = qnnv::oracle::float_from_key(qnnv::oracle::float_key(c) + rng.gen_range(0..60_000));
        let probe = qnnv::oracle::interpret_quantized(&net, &[qnnv::quantized::QValue::float(c)]).unwrap();
        let y = probe.outputs()[0].value + rng.gen_range(-1e-4..1e-4);
        let text = format!("assume x[0] >= {c:?} && x[0] <= {hi:?}; assert y[0] <= {y:?};");
        let p = parse_property(&text).unwrap();
        let oracle = brute_force_verify(&net, &p, 1 << 16).unwrap();
        // Without invariants the full tanh table is too slow for binary32.
        let relu = net.model().layers()[0].activation == Activation::Relu;
        for inv in [true, false] {
            if inv || relu {
                let smt = common::smt_verdict(&net, &p, inv, &z3);
                assert_eq!(smt.status, oracle.status, "{text}");
            }
        }
        seen.push(oracle.status);
    }
    assert!(seen.contains(&Status::Safe) && seen.contains(&Status::Unsafe));
}
