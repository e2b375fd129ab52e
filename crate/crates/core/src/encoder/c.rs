//! Annotated C translation for software model checkers.
//!
//! Inputs come from `nondet_float()` / `nondet_fxp()`, assumes and asserts
//! become `__ESBMC_assume` / `__ESBMC_assert`, and every bounded neuron gets
//! an invariant line `__ESBMC_assume((layerK[j] >= lo) && (layerK[j] <= hi));`
//! right after its assignment. Fixed-point arithmetic goes through
//! `fxp_add` / `fxp_mult` helpers with the configured overflow and rounding.

use std::fmt::Write as _;

use crate::fixedpoint::{FxpConfig, OverflowMode, RoundingMode};
use crate::interval::InvariantMap;
use crate::model::Activation;
use crate::property::{f32_down, f32_up, Comparator, Property, Tier, Var};
use crate::quantized::{QLayer, QLayers, QuantizedNetwork};

fn cmp_c(c: Comparator) -> &'static str {
    match c {
        Comparator::Lt => "<",
        Comparator::Le => "<=",
        Comparator::Gt => ">",
        Comparator::Ge => ">=",
    }
}

fn var_c(v: Var, layers: usize) -> String {
    match v.tier {
        Tier::Input => format!("x{}", v.index),
        Tier::Output => format!("layer{layers}[{}]", v.index),
    }
}

fn f32_c(x: f32) -> String {
    format!("{x:?}f")
}

fn f64_c(x: f64) -> String {
    format!("{x:?}")
}

/// C99 translation of `net` with `property`, optionally annotated with
/// invariants.
pub fn emit_c(net: &QuantizedNetwork, property: &Property, invariants: Option<&InvariantMap>) -> String {
    let mut out = String::new();
    let n_layers = net.model().layers().len();
    let _ = writeln!(out, "/* property {} */", property.name);
    out.push_str("#include <stdint.h>\n\n");
    match net.layers() {
        QLayers::Fixed(cfg, layers) => {
            fxp_prelude(&mut out, cfg);
            tables(&mut out, layers, "fxp_t", |v| format!("{v}"));
            out.push_str("int main(void)\n{\n");
            for i in 0..net.input_dim() {
                let _ = writeln!(out, "  fxp_t x{i} = nondet_fxp();");
                let _ = writeln!(out, "  __ESBMC_assume(x{i} >= FXP_MIN && x{i} <= FXP_MAX);");
            }
            let frac = cfg.frac_bits();
            for c in &property.assumes {
                let _ = writeln!(out, "  __ESBMC_assume({});", fxp_constraint(c, frac, n_layers));
            }
            body(
                &mut out,
                layers,
                "fxp_t",
                invariants,
                |row, prev, b, acc| {
                    let mut s = format!("  {acc} = 0;\n");
                    for (w, x) in row.iter().zip(prev) {
                        let _ = writeln!(s, "  {acc} = fxp_add({acc}, fxp_mult({w}, {x}));");
                    }
                    let _ = writeln!(s, "  {acc} = fxp_add({acc}, {b});");
                    s
                },
                |i| {
                    let scale = (frac as f64).exp2();
                    (
                        ((i.lo * scale).ceil() as i64).max(cfg.min_raw()).to_string(),
                        ((i.hi * scale).floor() as i64).min(cfg.max_raw()).to_string(),
                    )
                },
            );
            for (k, c) in property.asserts.iter().enumerate() {
                let _ = writeln!(out, "  __ESBMC_assert({}, \"assert {k}\");", fxp_constraint(c, frac, n_layers));
            }
        }
        QLayers::Float(layers) => {
            out.push_str("#pragma STDC FP_CONTRACT OFF\n\n");
            out.push_str("float nondet_float(void);\n");
            out.push_str("void __ESBMC_assume(_Bool cond);\n");
            out.push_str("void __ESBMC_assert(_Bool cond, const char *msg);\n\n");
            tables(&mut out, layers, "float", |v: f32| f32_c(v));
            out.push_str("int main(void)\n{\n");
            for i in 0..net.input_dim() {
                let _ = writeln!(out, "  float x{i} = nondet_float();");
                let _ = writeln!(out, "  __ESBMC_assume(x{i} - x{i} == 0.0f);");
            }
            for c in &property.assumes {
                let _ = writeln!(out, "  __ESBMC_assume({});", float_constraint(c, n_layers));
            }
            body(
                &mut out,
                layers,
                "float",
                invariants,
                |row, prev, b, acc| {
                    let mut s = format!("  {acc} = 0.0f;\n");
                    for (w, x) in row.iter().zip(prev) {
                        let _ = writeln!(s, "  {acc} = {acc} + {} * {x};", f32_c(*w));
                    }
                    let _ = writeln!(s, "  {acc} = {acc} + {};", f32_c(*b));
                    s
                },
                |i| (f32_c(f32_down(i.lo) as f32), f32_c(f32_up(i.hi) as f32)),
            );
            for (k, c) in property.asserts.iter().enumerate() {
                let _ = writeln!(out, "  __ESBMC_assert({}, \"assert {k}\");", float_constraint(c, n_layers));
            }
        }
    }
    out.push_str("  return 0;\n}\n");
    out
}

fn fxp_prelude(out: &mut String, cfg: &FxpConfig) {
    let w = cfg.width();
    let f = cfg.frac_bits();
    let _ = writeln!(out, "typedef int64_t fxp_t;\n__extension__ typedef __int128 fxp_wide_t;\n");
    let _ = writeln!(out, "#define FXP_WIDTH {w}\n#define FXP_FRAC {f}");
    let _ = writeln!(out, "#define FXP_MIN ((fxp_t)({} - 1))", cfg.min_raw() + 1);
    let _ = writeln!(out, "#define FXP_MAX ((fxp_t){})\n", cfg.max_raw());
    out.push_str("fxp_t nondet_fxp(void);\n");
    out.push_str("void __ESBMC_assume(_Bool cond);\n");
    out.push_str("void __ESBMC_assert(_Bool cond, const char *msg);\n\n");
    out.push_str("static fxp_t fxp_fit(fxp_wide_t v)\n{\n");
    match cfg.overflow {
        OverflowMode::Wrap => {
            out.push_str("  uint64_t m = (uint64_t)v;\n");
            if w < 64 {
                let _ = writeln!(out, "  m &= (((uint64_t)1) << {w}) - 1;");
                let _ = writeln!(out, "  if (m >> {}) m |= ~((((uint64_t)1) << {w}) - 1);", w - 1);
            }
            out.push_str("  return (fxp_t)m;\n");
        }
        OverflowMode::Saturate => {
            out.push_str("  return v > FXP_MAX ? FXP_MAX : v < FXP_MIN ? FXP_MIN : (fxp_t)v;\n");
        }
    }
    out.push_str("}\n\n");
    out.push_str("static fxp_wide_t fxp_rescale(fxp_wide_t p)\n{\n");
    let _ = writeln!(out, "  const fxp_wide_t d = ((fxp_wide_t)1) << FXP_FRAC;");
    out.push_str("  fxp_wide_t q = p / d;\n  fxp_wide_t r = p % d;\n");
    out.push_str("  if (r < 0) { q -= 1; r += d; }\n");
    if cfg.rounding == RoundingMode::NearestEven {
        out.push_str("  if (2 * r > d || (2 * r == d && (q & 1))) q += 1;\n");
    }
    out.push_str("  return q;\n}\n\n");
    out.push_str("static fxp_t fxp_add(fxp_t a, fxp_t b)\n{\n  return fxp_fit((fxp_wide_t)a + b);\n}\n\n");
    out.push_str(
        "static fxp_t fxp_mult(fxp_t a, fxp_t b)\n{\n  return fxp_fit(fxp_rescale((fxp_wide_t)a * b));\n}\n\n",
    );
}

fn tables<V: Copy>(out: &mut String, layers: &[QLayer<V>], ty: &str, lit: impl Fn(V) -> String) {
    let mut done = Vec::new();
    for l in layers {
        let Some(t) = &l.table else { continue };
        if done.contains(&l.activation) {
            continue;
        }
        done.push(l.activation);
        let name = l.activation.name();
        let list = |vs: &[V]| vs.iter().map(|&v| lit(v)).collect::<Vec<_>>().join(", ");
        let _ = writeln!(
            out,
            "static const {ty} {name}_t[{}] = {{{}}};",
            t.thresholds.len().max(1),
            if t.thresholds.is_empty() { lit(t.outputs[0]) } else { list(&t.thresholds) }
        );
        let _ = writeln!(out, "static const {ty} {name}_y[{}] = {{{}}};", t.outputs.len(), list(&t.outputs));
        let _ = writeln!(
            out,
            "static {ty} {name}_lut({ty} u)\n{{\n  int i, k = 0;\n  for (i = 0; i < {}; i++)\n    if ({name}_t[i] < u) k++;\n  return {name}_y[k];\n}}\n",
            t.thresholds.len()
        );
    }
    if layers.iter().any(|l| l.activation == Activation::Relu) {
        let _ = writeln!(out, "static {ty} relu({ty} u)\n{{\n  return u < 0 ? 0 : u;\n}}\n");
    }
}

fn body<V: Copy>(
    out: &mut String,
    layers: &[QLayer<V>],
    ty: &str,
    invariants: Option<&InvariantMap>,
    potential: impl Fn(&[V], &[String], &V, &str) -> String,
    bounds: impl Fn(crate::interval::Interval) -> (String, String),
) {
    let mut prev: Vec<String> =
        (0..layers[0].weights.first().map_or(0, |r| r.len())).map(|i| format!("x{i}")).collect();
    for (k, l) in layers.iter().enumerate() {
        let n = l.bias.len();
        let lname = format!("layer{}", k + 1);
        let _ = writeln!(out, "  {ty} {lname}_u[{n}], {lname}[{n}];");
        for (j, (row, b)) in l.weights.iter().zip(&l.bias).enumerate() {
            let acc = format!("{lname}_u[{j}]");
            out.push_str(&potential(row, &prev, b, &acc));
            let rhs = match l.activation {
                Activation::Relu => format!("relu({acc})"),
                Activation::Linear => acc.clone(),
                act => format!("{}_lut({acc})", act.name()),
            };
            let _ = writeln!(out, "  {lname}[{j}] = {rhs};");
            if let Some(i) = invariants.and_then(|inv| inv.layers[k][j].post) {
                let (lo, hi) = bounds(i);
                let _ = writeln!(out, "  __ESBMC_assume(({lname}[{j}] >= {lo}) && ({lname}[{j}] <= {hi}));");
            }
        }
        prev = (0..n).map(|j| format!("{lname}[{j}]")).collect();
    }
}

/// Exact integer form when it fits 64-bit coefficients, otherwise a
/// binary64 approximation.
fn fxp_constraint(c: &crate::property::LinearConstraint, frac: u32, layers: usize) -> String {
    if let Ok(form) = c.fxp_form(frac) {
        let small = |v: &num_bigint::BigInt| i64::try_from(v).ok();
        let coeffs: Option<Vec<i64>> = form.terms.iter().map(|(c, _)| small(c)).collect();
        if let (Some(coeffs), Some(bound)) = (coeffs, small(&form.bound)) {
            if form.eval_width(64) <= 127 {
                let lhs: Vec<String> = coeffs
                    .iter()
                    .zip(&form.terms)
                    .map(|(k, (_, v))| format!("(fxp_wide_t){k} * {}", var_c(*v, layers)))
                    .collect();
                let lhs = if lhs.is_empty() { "(fxp_wide_t)0".to_string() } else { lhs.join(" + ") };
                return format!("{lhs} {} (fxp_wide_t){bound}", cmp_c(form.cmp));
            }
        }
    }
    let scale = format!("{:?}", (-(frac as f64)).exp2());
    let lhs: Vec<String> =
        c.terms.iter().map(|(k, v)| format!("{} * ((double){} * {scale})", f64_c(*k), var_c(*v, layers))).collect();
    format!("{} {} {}", lhs.join(" + "), cmp_c(c.cmp), f64_c(c.bound))
}

fn float_constraint(c: &crate::property::LinearConstraint, layers: usize) -> String {
    let lhs: Vec<String> =
        c.terms.iter().map(|(k, v)| format!("{} * (double){}", f64_c(*k), var_c(*v, layers))).collect();
    let lhs = if lhs.is_empty() { "0.0".to_string() } else { lhs.join(" + ") };
    format!("{lhs} {} {}", cmp_c(c.cmp), f64_c(c.bound))
}
