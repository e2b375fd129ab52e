//! Bit-vector terms evaluated by z3 against the concrete operations.

mod common;

use qnnv::encoder::parse_assignments;
use qnnv::fixedpoint::{self, smt, FxpConfig, OverflowMode, RoundingMode};
use qnnv::solver::run_text;
use rand::Rng;
use std::fmt::Write as _;
use std::time::Duration;

type Op = fn(&str, &str, &FxpConfig) -> String;

const OPS: [(&str, Op); 4] = [("add", smt::add), ("sub", smt::sub), ("mul", smt::mul), ("div", smt::div)];

fn configs(int_bits: u32, frac_bits: u32) -> Vec<FxpConfig> {
    let mut out = Vec::new();
    for o in [OverflowMode::Wrap, OverflowMode::Saturate] {
        for r in [RoundingMode::TruncateTowardNegative, RoundingMode::NearestEven] {
            out.push(FxpConfig::new(int_bits, frac_bits).unwrap().with_overflow(o).with_rounding(r));
        }
    }
    out
}

fn concrete(op: &str, a: i64, b: i64, cfg: &FxpConfig) -> Option<i64> {
    let v = |r| cfg.value(r).unwrap();
    let r = match op {
        "add" => fixedpoint::fxp_add(v(a), v(b)),
        "sub" => fixedpoint::fxp_sub(v(a), v(b)),
        "mul" => fixedpoint::fxp_mult(v(a), v(b)),
        _ => fixedpoint::fxp_div(v(a), v(b)),
    };
    r.ok().map(|x| x.raw())
}

/// Evaluates every (op, a, b) term in one z3 call and compares.
fn check(cfg: &FxpConfig, pairs: &[(i64, i64)]) -> usize {
    let w = cfg.width();
    let mut script = String::from("(set-logic QF_BV)\n");
    let mut expected = Vec::new();
    for (name, op) in OPS {
        for &(a, b) in pairs {
            let Some(want) = concrete(name, a, b, cfg) else { continue };
            let sym = format!("r{}", expected.len());
            let term = op(&smt::literal(a as i128, w), &smt::literal(b as i128, w), cfg);
            let _ = writeln!(script, "(define-fun {sym} () {} {term})", smt::sort(w));
            expected.push((sym, name, a, b, want));
        }
    }
    script += "(check-sat)\n(get-value (";
    for e in &expected {
        script += &e.0;
        script.push(' ');
    }
    script += "))\n";
    let out = run_text(&common::z3(), &script, Duration::from_secs(300)).unwrap();
    assert!(out.stdout.starts_with("sat"), "{}", out.stderr);
    let values = parse_assignments(out.stdout.trim_start_matches("sat")).unwrap();
    for (sym, name, a, b, want) in &expected {
        let got = values[sym].signed() as i64;
        assert_eq!(got, *want, "{name}({a}, {b}) in {cfg:?}");
    }
    expected.len()
}

#[test]
fn q2_2_exhaustive() {
    let mut total = 0;
    for cfg in configs(2, 2) {
        let raws: Vec<i64> = (cfg.min_raw()..=cfg.max_raw()).collect();
        let pairs: Vec<(i64, i64)> = raws.iter().flat_map(|&a| raws.iter().map(move |&b| (a, b))).collect();
        assert_eq!(pairs.len(), 1024);
        total += check(&cfg, &pairs);
    }
    // Division by zero is the only excluded case: 32 per config.
    assert_eq!(total, 4 * (4 * 1024 - 32));
}

#[test]
fn q8_8_random() {
    let mut rng = common::rng(21);
    for cfg in configs(8, 8) {
        let pairs: Vec<(i64, i64)> = (0..1500)
            .map(|_| {
                let mut pick = || {
                    if rng.gen_bool(0.1) {
                        [cfg.min_raw(), cfg.max_raw(), 0, 1, -1][rng.gen_range(0..5)]
                    } else {
                        rng.gen_range(cfg.min_raw()..=cfg.max_raw())
                    }
                };
                (pick(), pick())
            })
            .collect();
        check(&cfg, &pairs);
    }
}

#[test]
fn wide_formats_random() {
    let mut rng = common::rng(22);
    for (i, f) in [(15, 16), (20, 40), (1, 62)] {
        for cfg in configs(i, f) {
            let pairs: Vec<(i64, i64)> = (0..200)
                .map(|_| (rng.gen_range(cfg.min_raw()..=cfg.max_raw()), rng.gen_range(cfg.min_raw()..=cfg.max_raw())))
                .collect();
            check(&cfg, &pairs);
        }
    }
}
