#![allow(dead_code)]

use std::sync::Arc;

use qnnv::fixedpoint::QuantSpec;
use qnnv::model::{Activation, DenseLayer, ModelIR};
use qnnv::oracle::{interpret_quantized, QuantGrid};
use qnnv::property::{Comparator, LinearConstraint, Property, Var};
use qnnv::quantized::{QuantizedNetwork, TableSet};
use qnnv::solver::SolverSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn z3() -> SolverSpec {
    let dir = std::env::var_os("QNNV_SOLVER_DIR").map(std::path::PathBuf::from);
    SolverSpec::discover("z3", dir.as_deref()).expect("z3 must be installed for solver tests")
}

/// Dense layers of the given widths; hidden activations drawn from `acts`,
/// the last layer linear.
pub fn random_model(rng: &mut ChaCha8Rng, inputs: usize, widths: &[usize], acts: &[Activation], scale: f64) -> ModelIR {
    let mut prev = inputs;
    let mut layers = Vec::new();
    for (k, &w) in widths.iter().enumerate() {
        let act = if k + 1 == widths.len() { Activation::Linear } else { acts[rng.gen_range(0..acts.len())] };
        let weights = (0..w).map(|_| (0..prev).map(|_| rng.gen_range(-scale..scale)).collect()).collect();
        let bias = (0..w).map(|_| rng.gen_range(-scale / 2.0..scale / 2.0)).collect();
        layers.push(DenseLayer::new(weights, bias, act).unwrap());
        prev = w;
    }
    ModelIR::new(layers).unwrap()
}

pub fn quantize(model: ModelIR, quant: &str) -> Arc<QuantizedNetwork> {
    let m = Arc::new(model);
    let tables = TableSet::for_model(&m).unwrap();
    Arc::new(QuantizedNetwork::new(m, quant.parse().unwrap(), &tables).unwrap())
}

fn le(terms: Vec<(f64, Var)>, cmp: Comparator, bound: f64) -> LinearConstraint {
    LinearConstraint { terms, cmp, bound }
}

const CMPS: [Comparator; 4] = [Comparator::Lt, Comparator::Le, Comparator::Gt, Comparator::Ge];

/// Box assumes over the inputs plus one or two output asserts whose bounds
/// are taken near sampled outputs, so both verdicts occur.
pub fn random_box_property(rng: &mut ChaCha8Rng, net: &QuantizedNetwork) -> Property {
    let (lo_lim, hi_lim, step) = match net.quant() {
        QuantSpec::Fixed(cfg) => (cfg.min_value(), cfg.max_value(), cfg.ulp()),
        QuantSpec::Float32 => (-4.0, 4.0, 1.0 / 64.0),
    };
    let mut assumes = Vec::new();
    for i in 0..net.input_dim() {
        let a = rng.gen_range(lo_lim..=hi_lim);
        let b = rng.gen_range(lo_lim..=hi_lim);
        let (lo, hi) = (a.min(b), a.max(b));
        // Occasionally off-grid bounds and strict comparisons.
        let lo = if rng.gen_bool(0.3) { lo + step / 3.0 } else { lo };
        assumes.push(le(vec![(1.0, Var::x(i))], if rng.gen_bool(0.2) { Comparator::Gt } else { Comparator::Ge }, lo));
        assumes.push(le(vec![(1.0, Var::x(i))], if rng.gen_bool(0.2) { Comparator::Lt } else { Comparator::Le }, hi));
    }
    if net.input_dim() >= 2 && rng.gen_bool(0.2) {
        assumes.push(le(
            vec![(1.0, Var::x(0)), (-1.0, Var::x(1))],
            CMPS[rng.gen_range(0..4)],
            rng.gen_range(-1.0..1.0),
        ));
    }
    let probe = sample_output(rng, net, &assumes);
    let mut asserts = Vec::new();
    for _ in 0..rng.gen_range(1..=2) {
        let j = rng.gen_range(0..net.output_dim());
        let (terms, center) = if net.output_dim() >= 2 && rng.gen_bool(0.3) {
            let k = (j + 1) % net.output_dim();
            (vec![(1.0, Var::y(j)), (-1.0, Var::y(k))], probe.as_ref().map(|p| p[j] - p[k]))
        } else {
            (vec![(1.0, Var::y(j))], probe.as_ref().map(|p| p[j]))
        };
        let c = center.unwrap_or(0.0) + rng.gen_range(-1.0..1.0) * 4.0 * step * rng.gen_range(1.0..4.0);
        asserts.push(le(terms, CMPS[rng.gen_range(0..4)], c));
    }
    Property { name: "random".into(), assumes, asserts }
}

fn sample_output(rng: &mut ChaCha8Rng, net: &QuantizedNetwork, assumes: &[LinearConstraint]) -> Option<Vec<f64>> {
    let p = Property { name: String::new(), assumes: assumes.to_vec(), asserts: vec![] };
    let bx = p.extract_box(net.input_dim(), net.quant()).ok()?;
    let grid = QuantGrid::new(&bx, net.quant());
    let size = grid.size().min(u64::MAX as u128) as u64;
    if size == 0 {
        return None;
    }
    let x = grid.point(rng.gen_range(0..size));
    let t = interpret_quantized(net, &x).ok()?;
    Some(t.outputs().iter().map(|v| v.value).collect())
}

/// Robustness property around a random grid point.
pub fn random_robustness(rng: &mut ChaCha8Rng, net: &QuantizedNetwork) -> Property {
    let (lo, hi, step) = match net.quant() {
        QuantSpec::Fixed(cfg) => (cfg.min_value(), cfg.max_value(), cfg.ulp()),
        QuantSpec::Float32 => (-2.0, 2.0, 1.0 / 64.0),
    };
    let x0: Vec<f64> = (0..net.input_dim()).map(|_| (rng.gen_range(lo..=hi) / step).round() * step).collect();
    let radius = step * rng.gen_range(0..6) as f64;
    let target = rng.gen_range(0..net.output_dim());
    qnnv::property::robustness_property(&x0, radius, target, net.output_dim()).unwrap()
}

/// Encodes and solves with z3, optionally with inferred invariants.
pub fn smt_verdict(
    net: &Arc<QuantizedNetwork>,
    p: &Property,
    invariants: bool,
    solver: &SolverSpec,
) -> qnnv::verdict::Verdict {
    let inv = if invariants {
        p.extract_box(net.input_dim(), net.quant()).ok().map(|b| qnnv::interval::infer_invariants(net, &b).unwrap())
    } else {
        None
    };
    let script = Arc::new(qnnv::encoder::encode(net.clone(), p, inv.as_ref()).unwrap());
    qnnv::solver::run_solver(&script, solver, std::time::Duration::from_secs(120))
}
