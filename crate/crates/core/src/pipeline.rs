//! End-to-end run: load model and properties, infer invariants, encode,
//! solve (or enumerate), and report.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::encoder::{emit_c, encode, SmtScript};
use crate::fixedpoint::QuantSpec;
use crate::interval::{infer_invariants, InvariantMap};
use crate::lut::{LookupTable, SourceTag};
use crate::model::{parse_export_bundle, parse_json_model, parse_nnet, Activation, ModelIR};
use crate::oracle::brute_force_verify;
use crate::property::{parse_property, robustness_property, Property, PropertyError};
use crate::quantized::{QuantizedNetwork, TableSet};
use crate::solver::{run_batch, Job, SolverSpec};
use crate::verdict::{Status, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Model,
    Property,
    Invariants,
    Encode,
    Solve,
    Oracle,
    Output,
}

#[derive(Debug, Error)]
#[error("{stage:?} stage: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    fn new(stage: Stage, message: impl ToString) -> PipelineError {
        PipelineError { stage, message: message.to_string() }
    }

    /// 1 for bad input or configuration, 2 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self.stage {
            Stage::Config | Stage::Model | Stage::Property | Stage::Encode | Stage::Oracle => 1,
            Stage::Invariants | Stage::Solve | Stage::Output => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelFormat {
    #[default]
    Auto,
    Json,
    Nnet,
    Bundle,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropertySource {
    File(PathBuf),
    /// One property per non-empty line of a CSV file of reference points.
    Robustness {
        points: PathBuf,
        radius: f64,
        target: usize,
    },
    Inline(Property),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EmitTargets {
    pub smt2: bool,
    pub c: bool,
    pub invariants: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Solve,
    Oracle { limit: u64 },
    EmitOnly,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: PathBuf,
    pub format: ModelFormat,
    pub properties: Vec<PropertySource>,
    pub quant: QuantSpec,
    pub solvers: Vec<SolverSpec>,
    pub timeout: Duration,
    pub parallelism: usize,
    pub emit: EmitTargets,
    pub out_dir: PathBuf,
    pub invariants: bool,
    pub apply_normalization: bool,
    pub keep_artifacts: bool,
    pub luts: Vec<PathBuf>,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Timing {
    pub parse: f64,
    pub invariants: f64,
    pub encode: f64,
    pub solve: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Entry {
    pub property: String,
    pub solver: Option<String>,
    pub verdict: Option<Verdict>,
    pub timing: Timing,
    pub invariant_mean_width: Option<f64>,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Report {
    pub entries: Vec<Entry>,
}

impl Report {
    /// 0 all SAFE, 10 any UNSAFE, 20 any UNKNOWN/TIMEOUT, 2 any solver error.
    pub fn exit_code(&self) -> i32 {
        let statuses: Vec<Status> = self.entries.iter().filter_map(|e| e.verdict.as_ref()).map(|v| v.status).collect();
        if statuses.contains(&Status::SolverError) {
            2
        } else if statuses.contains(&Status::Unsafe) {
            10
        } else if statuses.iter().any(|s| matches!(s, Status::Unknown | Status::Timeout)) {
            20
        } else {
            0
        }
    }

    pub fn to_jsonl(&self) -> String {
        self.entries.iter().map(|e| serde_json::to_string(e).expect("serializable") + "\n").collect()
    }

    pub fn table(&self) -> String {
        let mut rows = vec![[
            "property".to_string(),
            "solver".into(),
            "status".into(),
            "solve s".into(),
            "encode s".into(),
            "inv width".into(),
            "witness".into(),
        ]];
        for e in &self.entries {
            let status = e.verdict.as_ref().map_or("EMITTED".to_string(), |v| v.status.to_string());
            let witness = e
                .verdict
                .as_ref()
                .and_then(|v| v.counterexample.as_ref())
                .map(|c| {
                    let xs: Vec<String> = c.input_values.iter().map(|v| format!("{}", v.value)).collect();
                    format!("x=[{}] violates assert {}", xs.join(", "), c.violated_assert)
                })
                .unwrap_or_default();
            rows.push([
                e.property.clone(),
                e.solver.clone().unwrap_or_else(|| "-".into()),
                status,
                format!("{:.3}", e.timing.solve),
                format!("{:.3}", e.timing.encode),
                e.invariant_mean_width.map_or("-".into(), |w| format!("{w:.4}")),
                witness,
            ]);
        }
        let widths: Vec<usize> = (0..7).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            let line: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 12));
            }
        }
        out
    }
}

pub fn load_model(path: &Path, format: ModelFormat) -> Result<ModelIR, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::new(Stage::Model, format!("{}: {e}", path.display())))?;
    let format = match format {
        ModelFormat::Auto if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("nnet")) => ModelFormat::Nnet,
        ModelFormat::Auto => match serde_json::from_str::<serde_json::Value>(&text) {
            Ok(v) if v.get("model").is_some() => ModelFormat::Bundle,
            _ => ModelFormat::Json,
        },
        f => f,
    };
    let parsed = match format {
        ModelFormat::Nnet => parse_nnet(&text),
        ModelFormat::Bundle => parse_export_bundle(&text).map(|b| b.model),
        _ => parse_json_model(&text),
    };
    parsed.map_err(|e| PipelineError::new(Stage::Model, format!("{}: {e}", path.display())))
}

fn load_tables(model: &ModelIR, luts: &[PathBuf]) -> Result<TableSet, PipelineError> {
    let mut tables = TableSet::for_model(model).map_err(|e| PipelineError::new(Stage::Config, e))?;
    for path in luts {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        let table = LookupTable::from_text(&text)
            .map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        let act = match table.source() {
            SourceTag::Sigmoid => Activation::Sigmoid,
            SourceTag::Tanh => Activation::Tanh,
            SourceTag::Custom(name) => {
                return Err(PipelineError::new(
                    Stage::Config,
                    format!("{}: table for `{name}` matches no activation", path.display()),
                ))
            }
        };
        tables.insert(act, table);
    }
    Ok(tables)
}

fn load_properties(sources: &[PropertySource], model: &ModelIR) -> Result<Vec<Property>, PipelineError> {
    let perr = |m: String| PipelineError::new(Stage::Property, m);
    let mut out = Vec::new();
    for src in sources {
        match src {
            PropertySource::Inline(p) => out.push(p.clone()),
            PropertySource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| perr(format!("{}: {e}", path.display())))?;
                let mut p = parse_property(&text).map_err(|e| perr(format!("{}: {e}", path.display())))?;
                if p.name.is_empty() {
                    p.name = path.file_stem().map_or("property".into(), |s| s.to_string_lossy().into_owned());
                }
                out.push(p);
            }
            PropertySource::Robustness { points, radius, target } => {
                let text = std::fs::read_to_string(points).map_err(|e| perr(format!("{}: {e}", points.display())))?;
                for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    let x0 = line
                        .split(',')
                        .map(|t| t.trim().parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| perr(format!("{}:{}: {e}", points.display(), n + 1)))?;
                    if x0.len() != model.input_dim() {
                        return Err(perr(format!(
                            "{}:{}: {} values for a {}-input network",
                            points.display(),
                            n + 1,
                            x0.len(),
                            model.input_dim()
                        )));
                    }
                    let mut p = robustness_property(&x0, *radius, *target, model.output_dim())
                        .map_err(|e| perr(e.to_string()))?;
                    p.name = format!("{}_p{}", p.name, n + 1);
                    out.push(p);
                }
            }
        }
    }
    if out.is_empty() {
        return Err(perr("no property given".into()));
    }
    for p in &out {
        p.validate(model.input_dim(), model.output_dim()).map_err(|e| perr(format!("{}: {e}", p.name)))?;
    }
    Ok(out)
}

/// File-system friendly, unique stems for property names.
fn stems(props: &[Property]) -> Vec<String> {
    let mut seen = HashSet::new();
    props
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let base: String =
                p.name.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect();
            let base = if base.is_empty() { "property".to_string() } else { base };
            let stem = if seen.contains(&base) { format!("{base}_{i}") } else { base };
            seen.insert(stem.clone());
            stem
        })
        .collect()
}

struct Prepared {
    property: Property,
    stem: String,
    invariants: Option<InvariantMap>,
    script: Option<Arc<SmtScript>>,
    timing: Timing,
    artifacts: Vec<PathBuf>,
}

pub fn run_pipeline(rc: &RunConfig) -> Result<Report, PipelineError> {
    let t0 = Instant::now();
    let mut model = load_model(&rc.model, rc.format)?;
    if rc.apply_normalization {
        model = model.apply_normalization();
    }
    let properties = load_properties(&rc.properties, &model)?;
    let tables = load_tables(&model, &rc.luts)?;
    let net = Arc::new(
        QuantizedNetwork::new(Arc::new(model), rc.quant, &tables).map_err(|e| PipelineError::new(Stage::Config, e))?,
    );
    let parse_time = t0.elapsed().as_secs_f64();
    let write = |path: &Path, text: &str| {
        std::fs::write(path, text).map_err(|e| PipelineError::new(Stage::Output, format!("{}: {e}", path.display())))
    };
    std::fs::create_dir_all(&rc.out_dir)
        .map_err(|e| PipelineError::new(Stage::Output, format!("{}: {e}", rc.out_dir.display())))?;

    let mut prepared = Vec::new();
    for (property, stem) in properties.iter().zip(stems(&properties)) {
        let mut timing = Timing { parse: parse_time, ..Timing::default() };
        let t = Instant::now();
        let invariants = match property.extract_box(net.input_dim(), net.quant()) {
            Ok(b) if rc.invariants => {
                Some(infer_invariants(&net, &b).map_err(|e| PipelineError::new(Stage::Invariants, e))?)
            }
            Ok(_) | Err(PropertyError::Vacuous(_)) => None,
            Err(e) => return Err(PipelineError::new(Stage::Property, format!("{}: {e}", property.name))),
        };
        timing.invariants = t.elapsed().as_secs_f64();
        let mut artifacts = Vec::new();
        let script = if matches!(rc.mode, Mode::Oracle { .. }) && !rc.emit.smt2 {
            None
        } else {
            let t = Instant::now();
            let s = encode(net.clone(), property, invariants.as_ref())
                .map_err(|e| PipelineError::new(Stage::Encode, format!("{}: {e}", property.name)))?;
            timing.encode = t.elapsed().as_secs_f64();
            Some(Arc::new(s))
        };
        if rc.emit.smt2 {
            let p = rc.out_dir.join(format!("{stem}.smt2"));
            write(&p, &script.as_ref().expect("encoded").render())?;
            artifacts.push(p);
        }
        if rc.emit.c {
            let p = rc.out_dir.join(format!("{stem}.c"));
            write(&p, &emit_c(&net, property, invariants.as_ref()))?;
            artifacts.push(p);
        }
        if rc.emit.invariants {
            let p = rc.out_dir.join(format!("{stem}.invariants.txt"));
            let text = invariants.as_ref().map_or_else(|| "// no invariants\n".to_string(), InvariantMap::report);
            write(&p, &text)?;
            artifacts.push(p);
        }
        prepared.push(Prepared { property: property.clone(), stem, invariants, script, timing, artifacts });
    }

    let mut report = Report::default();
    match rc.mode {
        Mode::EmitOnly => {
            for p in &prepared {
                report.entries.push(entry(p, None, None));
            }
        }
        Mode::Oracle { limit } => {
            for p in &prepared {
                let v = brute_force_verify(&net, &p.property, limit)
                    .map_err(|e| PipelineError::new(Stage::Oracle, format!("{}: {e}", p.property.name)))?;
                report.entries.push(entry(p, Some("oracle".into()), Some(v)));
            }
        }
        Mode::Solve => {
            if rc.solvers.is_empty() {
                return Err(PipelineError::new(Stage::Config, "no solver configured"));
            }
            let mut jobs = Vec::new();
            for p in &prepared {
                for s in &rc.solvers {
                    let mut job = Job::new(p.script.clone().expect("encoded"), s.clone(), rc.timeout);
                    if rc.keep_artifacts {
                        job.artifacts = Some(rc.out_dir.join(format!("{}.{}", p.stem, s.name)));
                    }
                    jobs.push(job);
                }
            }
            let verdicts = run_batch(&jobs, rc.parallelism);
            let mut it = verdicts.into_iter();
            for p in &prepared {
                for s in &rc.solvers {
                    let v = it.next().expect("one verdict per job");
                    let mut e = entry(p, Some(s.name.clone()), Some(v));
                    if rc.keep_artifacts {
                        for ext in ["out", "err"] {
                            e.artifacts.push(rc.out_dir.join(format!("{}.{}.{ext}", p.stem, s.name)));
                        }
                    }
                    report.entries.push(e);
                }
            }
        }
    }
    for e in &mut report.entries {
        let Some(v) = &e.verdict else { continue };
        if let Some(cex) = &v.counterexample {
            let stem = stems_lookup(&prepared, &e.property);
            let p = rc.out_dir.join(format!("{stem}.{}.cex.json", v.solver));
            write(&p, &serde_json::to_string_pretty(cex).expect("serializable"))?;
            e.artifacts.push(p);
        }
    }
    write(&rc.out_dir.join("report.jsonl"), &report.to_jsonl())?;
    write(&rc.out_dir.join("report.txt"), &report.table())?;
    Ok(report)
}

fn stems_lookup<'a>(prepared: &'a [Prepared], name: &str) -> &'a str {
    prepared.iter().find(|p| p.property.name == name).map_or("property", |p| p.stem.as_str())
}

fn entry(p: &Prepared, solver: Option<String>, verdict: Option<Verdict>) -> Entry {
    let mut timing = p.timing;
    timing.solve = verdict.as_ref().map_or(0.0, |v| v.wall_time.as_secs_f64());
    Entry {
        property: p.property.name.clone(),
        solver,
        verdict,
        timing,
        invariant_mean_width: p.invariants.as_ref().and_then(InvariantMap::mean_width),
        artifacts: p.artifacts.clone(),
    }
}
