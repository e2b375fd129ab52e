//! Checked-in interchange fixtures: the exporter bundle and an
//! AcasXu-style NNET file.

use std::path::Path;

use qnnv::model::{parse_export_bundle, parse_json_model, parse_nnet, Activation, ModelError};
use qnnv::oracle::interpret_float_exact;

fn read(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)).unwrap()
}

#[test]
fn bundle_fixtures_replay() {
    let b = parse_export_bundle(&read("dense_bundle.json")).unwrap();
    assert_eq!(b.source_format, "keras");
    assert_eq!(b.fixtures.len(), 16);
    let acts: Vec<Activation> = b.model.layers().iter().map(|l| l.activation).collect();
    assert_eq!(acts, [Activation::Tanh, Activation::Sigmoid]);
    let mut worst32 = 0.0f64;
    let mut worst64 = 0.0f64;
    for f in &b.fixtures {
        let x32: Vec<f32> = f.input.iter().map(|&v| v as f32).collect();
        let y32 = interpret_float_exact(&b.model, &x32).unwrap();
        let y64 = b.model.forward_real(&f.input).unwrap();
        for ((a, r), e) in y32.iter().zip(&y64).zip(&f.output) {
            worst32 = worst32.max((*a as f64 - e).abs());
            worst64 = worst64.max((r - e).abs());
        }
    }
    assert!(worst32 <= 1e-5, "float32 replay deviates by {worst32}");
    assert!(worst64 <= 1e-4, "real replay deviates by {worst64}");
}

#[test]
fn bundle_model_round_trips_through_json() {
    let b = parse_export_bundle(&read("dense_bundle.json")).unwrap();
    assert_eq!(parse_json_model(&b.model.to_json()).unwrap(), b.model);
}

#[test]
fn bundle_rejections() {
    let text = read("dense_bundle.json");
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["fixtures"][3]["input"] = serde_json::json!([0.0]);
    assert!(matches!(parse_export_bundle(&doc.to_string()), Err(ModelError::Schema(_))));

    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["model"]["layers"][1]["type"] = serde_json::json!("conv2d");
    match parse_export_bundle(&doc.to_string()) {
        Err(ModelError::Schema(m)) => assert!(m.contains("layer 1") && m.contains("conv2d"), "{m}"),
        other => panic!("expected a schema error, got {other:?}"),
    }
}

#[test]
#[allow(clippy::approx_constant)]
fn acasxu_style_nnet() {
    let m = parse_nnet(&read("acasxu_style.nnet")).unwrap();
    assert_eq!((m.input_dim(), m.output_dim()), (5, 5));
    assert_eq!(m.layers().len(), 3);
    let norm = m.normalization().unwrap();
    assert_eq!(norm.mins, [0.0, -3.141592, -3.141592, 100.0, 0.0]);
    assert_eq!(norm.maxs, [60760.0, 3.141592, 3.141592, 1200.0, 1200.0]);
    assert_eq!(norm.means.len(), 6);

    // The folded network computes range * f((x - mean) / range) + mean.
    let n = m.apply_normalization();
    let x = [30000.0, 1.0, -2.0, 500.0, 700.0];
    let xn: Vec<f64> = x.iter().enumerate().map(|(i, v)| (v - norm.means[i]) / norm.ranges[i]).collect();
    let want: Vec<f64> = m.forward_real(&xn).unwrap().iter().map(|y| y * norm.ranges[5] + norm.means[5]).collect();
    let got = n.forward_real(&x).unwrap();
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }
}
