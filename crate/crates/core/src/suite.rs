//! Seeded benchmark suites: instance generation, certification, solving and
//! network compilation for a list of recipes, written to a fixed artifact
//! tree, plus an offline verifier for that tree.
//!
//! Layout under the output directory:
//!
//! ```text
//! instances/<id>.json            certificates/<id>.json
//! certificates/<id>.checks.json  traces/<id>.<solver>.csv (+ .svg)
//! networks/<id>.<solver>.json    summary.csv
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coherence::CoherenceMode;
use crate::error::{DscError, Result};
use crate::guarantees::{certify_instance, coincidence_hypotheses, InstanceCertificate};
use crate::io::{fmt_f64, read_instance, read_json, write_instance, write_json, MatrixStorage};
use crate::lista::{lista_general_run, schedule_from_certificate, Activation, EnvelopeRule, ScheduleFile, ScheduleOptions};
use crate::model::{generate_instance, random_sparse_vector, seeded_rng, DscInstance, InstanceRecipe};
use crate::network::{compile, relative_deviation, NetworkFile};
use crate::pipeline::{layer_certificates, layer_class, solve_layered_with, LayeredRun, Method, SolveOptions};
use crate::pursuit::{basis_pursuit, brute_force_l0};

/// Largest number of supports the coincidence check will enumerate.
pub const COINCIDENCE_BUDGET: u128 = 200_000;

/// Below this final error a noiseless ReLU LISTA run counts as converged.
pub const NOISELESS_TARGET: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub structural: f64,
    pub equivalence: f64,
    pub coincidence: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            structural: 1e-9,
            equivalence: 1e-10,
            coincidence: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeEntry {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(flatten)]
    pub recipe: InstanceRecipe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSpec {
    pub method: Method,
    /// `relu` or `bneg:β,L,m`.
    pub activation: String,
    pub iters: usize,
    pub rule: EnvelopeRule,
    pub gamma: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            method: Method::Lista,
            activation: "relu".into(),
            iters: 30,
            rule: EnvelopeRule::SupportAware,
            gamma: 1e-3,
        }
    }
}

impl SolverSpec {
    pub fn activation(&self) -> Result<Activation> {
        self.activation.parse()
    }

    /// File-name friendly label, e.g. `lista-relu-k30`.
    pub fn label(&self) -> String {
        let act: String = self
            .activation
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect();
        match self.method {
            Method::Lista => format!("lista-{act}-k{}", self.iters),
            Method::Ista => format!("ista-k{}", self.iters),
            Method::Bp | Method::L0 => self.method.to_string(),
        }
    }

    fn options(&self) -> Result<SolveOptions> {
        Ok(SolveOptions {
            method: self.method,
            iters: self.iters,
            activation: self.activation()?,
            rule: self.rule,
            coherence: CoherenceMode::Exact,
            gamma: self.gamma,
            envelope_tol: 1e-9,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub recipes: Vec<RecipeEntry>,
    pub solvers: Vec<SolverSpec>,
    pub tolerances: Tolerances,
    /// Random in-class inputs per compiled network, on top of the instance's `y`.
    pub network_trials: usize,
    pub svg: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            recipes: Vec::new(),
            solvers: vec![SolverSpec::default()],
            tolerances: Tolerances::default(),
            network_trials: 20,
            svg: false,
        }
    }
}

fn config_error(field: impl Into<String>, message: impl Into<String>) -> DscError {
    DscError::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl SuiteConfig {
    /// Recipe ids, defaulting to `r000`, `r001`, …
    pub fn ids(&self) -> Vec<String> {
        self.recipes
            .iter()
            .enumerate()
            .map(|(i, r)| r.id.clone().unwrap_or_else(|| format!("r{i:03}")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut seeds = HashSet::new();
        for (i, (entry, id)) in self.recipes.iter().zip(self.ids()).enumerate() {
            let field = |name: &str| format!("recipes[{i}].{name}");
            if id.is_empty() || id.contains(['/', '\\']) {
                return Err(config_error(field("id"), format!("{id:?} is not a usable file name")));
            }
            if !ids.insert(id.clone()) {
                return Err(config_error(field("id"), format!("duplicate id {id:?}")));
            }
            if !seeds.insert(entry.recipe.seed) {
                return Err(config_error(field("seed"), format!("seed {} is reused", entry.recipe.seed)));
            }
            if entry.recipe.shape.is_empty() {
                return Err(config_error(field("shape"), "needs at least one layer"));
            }
            if entry.recipe.lambda.len() != entry.recipe.shape.len() {
                return Err(config_error(
                    field("lambda"),
                    format!("{} budgets for {} layers", entry.recipe.lambda.len(), entry.recipe.shape.len()),
                ));
            }
        }
        let mut labels = HashSet::new();
        for (i, s) in self.solvers.iter().enumerate() {
            s.activation()
                .map_err(|e| config_error(format!("solvers[{i}].activation"), e.to_string()))?;
            if s.iters == 0 && s.method != Method::Bp && s.method != Method::L0 {
                return Err(config_error(format!("solvers[{i}].iters"), "must be positive"));
            }
            if !labels.insert(s.label()) {
                return Err(config_error(format!("solvers[{i}]"), format!("duplicate solver {}", s.label())));
            }
        }
        for (name, v) in [
            ("structural", self.tolerances.structural),
            ("equivalence", self.tolerances.equivalence),
            ("coincidence", self.tolerances.coincidence),
        ] {
            if !(v >= 0.0) {
                return Err(config_error(format!("tolerances.{name}"), format!("{v} is not a tolerance")));
            }
        }
        Ok(())
    }
}

/// Parses and validates a suite; JSON errors carry line and column.
pub fn parse_suite_config(text: &str) -> Result<SuiteConfig> {
    let config: SuiteConfig = serde_json::from_str(text).map_err(|e| {
        config_error(format!("line {}, column {}", e.line(), e.column()), e.to_string())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn read_suite_config(path: &Path) -> Result<SuiteConfig> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DscError::MissingArtifact(path.to_path_buf()),
        _ => e.into(),
    })?;
    parse_suite_config(&text)
}

/// ℓ0 and ℓ1 solutions of layer 1, stored beside the certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceCheck {
    pub max_abs_diff: f64,
    pub agree: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecipeChecks {
    pub coincidence: Option<CoincidenceCheck>,
}

/// Compiled layer-1 network together with what is needed to re-check it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkArtifact {
    pub instance: String,
    pub solver: String,
    pub trials: usize,
    pub seed: u64,
    pub network: NetworkFile,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub id: String,
    pub solver: String,
    pub status: String,
    pub depth: usize,
    pub c_hat: Vec<Option<f64>>,
    pub final_error: Vec<Option<f64>>,
    pub envelope_violations: usize,
    pub network_max_dev: Option<f64>,
    pub coincidence: Option<bool>,
    pub violations: usize,
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "id",
    "solver",
    "status",
    "depth",
    "c_hat",
    "final_error",
    "envelope_violations",
    "network_max_dev",
    "coincidence",
    "violations",
];

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn join(values: &[Option<f64>]) -> String {
    values.iter().map(|v| opt_f64(*v)).collect::<Vec<_>>().join(";")
}

impl SummaryRow {
    fn failed(id: &str, solver: &str, err: &DscError) -> Self {
        Self {
            id: id.to_string(),
            solver: solver.to_string(),
            status: format!("failed: {err}"),
            depth: 0,
            c_hat: Vec::new(),
            final_error: Vec::new(),
            envelope_violations: 0,
            network_max_dev: None,
            coincidence: None,
            violations: 0,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.status != "ok"
    }

    pub fn record(&self) -> Vec<String> {
        vec![
            self.id.clone(),
            self.solver.clone(),
            self.status.clone(),
            self.depth.to_string(),
            join(&self.c_hat),
            join(&self.final_error),
            self.envelope_violations.to_string(),
            opt_f64(self.network_max_dev),
            self.coincidence.map(|b| b.to_string()).unwrap_or_default(),
            self.violations.to_string(),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub rows: Vec<SummaryRow>,
    pub summary: PathBuf,
}

impl SuiteReport {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.is_failed()).count()
    }

    pub fn violations(&self) -> usize {
        self.rows.iter().map(|r| r.violations).sum()
    }

    /// Exit-code contract: every recipe ran and no invariant was violated.
    pub fn success(&self) -> bool {
        self.failed() == 0 && self.violations() == 0
    }
}

const SUBDIRS: [&str; 4] = ["instances", "certificates", "traces", "networks"];

/// Runs every recipe in parallel; a failing recipe or solver only marks its own rows.
pub fn run_suite(config: &SuiteConfig, out: &Path) -> Result<SuiteReport> {
    config.validate()?;
    for sub in SUBDIRS {
        fs::create_dir_all(out.join(sub))?;
    }
    let ids = config.ids();
    let rows: Vec<Vec<SummaryRow>> = config
        .recipes
        .par_iter()
        .zip(ids.par_iter())
        .map(|(entry, id)| {
            run_recipe(config, &entry.recipe, id, out)
                .unwrap_or_else(|e| vec![SummaryRow::failed(id, "-", &e)])
        })
        .collect();
    let rows: Vec<SummaryRow> = rows.into_iter().flatten().collect();
    let summary = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in &rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(SuiteReport { rows, summary })
}

fn is_noiseless(inst: &DscInstance) -> bool {
    inst.noise0.is_none() && inst.eps.iter().all(|&e| e == 0.0)
}

fn support_count(n: usize, k: usize) -> u128 {
    (0..=k.min(n))
        .map(|s| (0..s).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1)))
        .sum()
}

/// Compares the ℓ0 oracle with basis pursuit on layer 1 when the coincidence
/// hypotheses hold and the enumeration is affordable.
pub fn coincidence_check(inst: &DscInstance, cert: &InstanceCertificate, tol: f64) -> Result<Option<CoincidenceCheck>> {
    let d1 = inst.dicts.layer(1);
    let hyp = coincidence_hypotheses(d1.matrix());
    let unique = cert
        .uniqueness
        .as_ref()
        .is_some_and(|u| u.layers[0].code_unique && u.layers[0].lambda_unique);
    let affordable = support_count(d1.cols(), inst.lambda[0]) <= COINCIDENCE_BUDGET;
    if !is_noiseless(inst) || !hyp.full_rank || !hyp.wide || !unique || !affordable {
        return Ok(None);
    }
    let l0 = brute_force_l0(d1, &inst.y, inst.lambda[0], 0.0)?.vector();
    let l1 = basis_pursuit(d1, &inst.y)?.vector();
    let max_abs_diff = (l0 - l1).amax();
    Ok(Some(CoincidenceCheck {
        max_abs_diff,
        agree: max_abs_diff <= tol,
    }))
}

/// Largest relative stage-readout deviation between the network and the
/// iterative solver it was compiled from, over `y` and `trials` random
/// in-class inputs.
pub fn network_deviation(file: &NetworkFile, y: &DVector<f64>, trials: usize, seed: u64) -> Result<f64> {
    let net = file.network()?;
    let (schedule, dict) = file.source.clone().into_parts()?;
    if net.depth() != schedule.iterations() {
        return Err(DscError::ShapeMismatch(format!(
            "network has {} stages, schedule has {} iterations",
            net.depth(),
            schedule.iterations()
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut inputs = vec![y.clone()];
    for _ in 0..trials {
        let x = random_sparse_vector(&mut rng, dict.cols(), schedule.class.sparsity, schedule.class.bound);
        inputs.push(dict.matrix() * x);
    }
    let mut worst = 0.0_f64;
    for input in &inputs {
        let iterates = lista_general_run(&schedule, &dict, input, &schedule.activation)?;
        let fwd = net.forward(input)?;
        for (readout, it) in fwd.stage_readouts.iter().zip(&iterates[1..]) {
            worst = worst.max(relative_deviation(readout, it));
        }
    }
    Ok(worst)
}

/// Largest entrywise difference between the stored network blocks and a
/// fresh compilation of the schedule they claim to come from.
pub fn network_block_drift(file: &NetworkFile) -> Result<f64> {
    let stored = file.network()?;
    let (schedule, dict) = file.source.clone().into_parts()?;
    let fresh = compile(&schedule, &dict, &schedule.class)?;
    if stored.depth() != fresh.depth() {
        return Ok(f64::INFINITY);
    }
    let mut worst = (stored.carry - fresh.carry).abs();
    for (a, b) in stored.stages.iter().zip(&fresh.stages) {
        worst = worst
            .max((&a.a - &b.a).amax())
            .max((&a.b - &b.b).amax())
            .max((&a.c - &b.c).amax())
            .max((&a.e - &b.e).amax());
    }
    Ok(worst)
}

fn run_recipe(config: &SuiteConfig, recipe: &InstanceRecipe, id: &str, out: &Path) -> Result<Vec<SummaryRow>> {
    let tol = config.tolerances;
    let inst = generate_instance(recipe)?;
    write_instance(&inst, &out.join("instances").join(format!("{id}.json")), MatrixStorage::Inline)?;
    let cert = certify_instance(&inst, true)?;
    write_json(&out.join("certificates").join(format!("{id}.json")), &cert)?;
    let checks = RecipeChecks {
        coincidence: coincidence_check(&inst, &cert, tol.coincidence)?,
    };
    write_json(&out.join("certificates").join(format!("{id}.checks.json")), &checks)?;
    let coincidence = checks.coincidence.as_ref().map(|c| c.agree);
    let coincidence_violation = usize::from(coincidence == Some(false));

    let needs_lp = config.solvers.iter().any(|s| s.method == Method::Lista);
    let certs = if needs_lp {
        Some(layer_certificates(&inst, CoherenceMode::Exact)?)
    } else {
        None
    };

    let mut rows = Vec::with_capacity(config.solvers.len());
    for spec in &config.solvers {
        let label = spec.label();
        let attempt = || -> Result<SummaryRow> {
            let opts = spec.options()?;
            let run = solve_layered_with(&inst, certs.as_deref(), &opts)?;
            let stem = format!("{id}.{label}");
            write_trace(&run, &out.join("traces").join(format!("{stem}.csv")))?;
            if config.svg {
                fs::write(out.join("traces").join(format!("{stem}.svg")), error_plot_svg(&run))?;
            }
            let mut violations = run.envelope_violations() + coincidence_violation;
            if spec.method == Method::Lista && opts.activation.is_relu() && spec.iters >= 30 && is_noiseless(&inst) {
                violations += run
                    .layers
                    .iter()
                    .filter(|l| l.final_error().is_some_and(|e| e >= NOISELESS_TARGET))
                    .count();
            }
            let network_max_dev = if spec.method == Method::Lista {
                let cert1 = &certs.as_ref().expect("certificates computed for lista")[0];
                let dict = inst.dicts.layer(1);
                let class = layer_class(&inst, 1, 0.0)?;
                let rule = if opts.activation.is_relu() { spec.rule } else { EnvelopeRule::Standard };
                let schedule = schedule_from_certificate(
                    dict,
                    cert1,
                    class,
                    spec.iters,
                    ScheduleOptions {
                        mode: cert1.mode,
                        rule,
                        activation: opts.activation,
                    },
                )?;
                let net = compile(&schedule, dict, &class)?;
                let artifact = NetworkArtifact {
                    instance: id.to_string(),
                    solver: label.clone(),
                    trials: config.network_trials,
                    seed: inst.seed,
                    network: NetworkFile::new(&net, ScheduleFile::new(&schedule, dict)),
                };
                write_json(&out.join("networks").join(format!("{stem}.json")), &artifact)?;
                let dev = network_deviation(&artifact.network, &inst.y, artifact.trials, artifact.seed)?;
                if dev > tol.equivalence {
                    violations += 1;
                }
                Some(dev)
            } else {
                None
            };
            Ok(SummaryRow {
                id: id.to_string(),
                solver: label.clone(),
                status: "ok".into(),
                depth: run.layers.len(),
                c_hat: run.layers.iter().map(|l| l.c_hat).collect(),
                final_error: run.layers.iter().map(|l| l.final_error()).collect(),
                envelope_violations: run.envelope_violations(),
                network_max_dev,
                coincidence,
                violations,
            })
        };
        rows.push(attempt().unwrap_or_else(|e| SummaryRow::failed(id, &label, &e)));
    }
    if rows.is_empty() {
        rows.push(SummaryRow {
            id: id.to_string(),
            solver: "-".into(),
            status: "ok".into(),
            depth: inst.depth(),
            c_hat: Vec::new(),
            final_error: Vec::new(),
            envelope_violations: 0,
            network_max_dev: None,
            coincidence,
            violations: coincidence_violation,
        });
    }
    Ok(rows)
}

/// One row per iterate `k`, five columns per layer; blanks where a layer has
/// no value. The envelope column is named for the norm it bounds:
/// `envelope_l2_j` for the ℓ0 pipeline, `envelope_l1_j` otherwise.
pub fn write_trace(run: &LayeredRun, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let envelope = if run.method == Method::L0 { "envelope_l2" } else { "envelope_l1" };
    let mut header = vec!["k".to_string()];
    for l in &run.layers {
        header.extend(
            ["err_l2", "err_l1", "residual", "theta", envelope]
                .iter()
                .map(|c| format!("{c}_{}", l.layer)),
        );
    }
    w.write_record(&header)?;
    let len = run.layers.iter().map(|l| l.iterates.len()).max().unwrap_or(0);
    let cell = |v: Option<&f64>| v.map(|x| fmt_f64(*x)).unwrap_or_default();
    for k in 0..len {
        let mut rec = vec![k.to_string()];
        for l in &run.layers {
            rec.push(cell(l.errors_l2.as_ref().and_then(|e| e.get(k))));
            rec.push(cell(l.errors_l1.as_ref().and_then(|e| e.get(k))));
            rec.push(cell(l.residuals.get(k)));
            rec.push(cell(if k == 0 { None } else { l.thresholds.get(k - 1) }));
            rec.push(cell(l.envelope.get(k)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Envelope violations recorded in a trace file: entries where `err_lp_j`
/// exceeds `envelope_lp_j`.
pub fn trace_violations(path: &Path, tol: f64) -> Result<usize> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let pairs: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let rest = h.strip_prefix("err_")?;
            let env = header.iter().position(|g| g == format!("envelope_{rest}"))?;
            Some((i, env))
        })
        .collect();
    let parse = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| DscError::Parse(format!("bad number {s:?} in {}", path.display())))
        }
    };
    let mut count = 0;
    for rec in r.records() {
        let rec = rec?;
        for &(e, b) in &pairs {
            if let (Some(err), Some(env)) = (parse(&rec[e])?, parse(&rec[b])?) {
                if err > env * (1.0 + tol) + tol {
                    count += 1;
                }
            }
        }
    }
    Ok(count)
}

/// Minimal SVG of `log10` of the layer-wise ℓ2 error against `k`.
pub fn error_plot_svg(run: &LayeredRun) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let series: Vec<Vec<(f64, f64)>> = run
        .layers
        .iter()
        .map(|l| {
            l.errors_l2
                .as_deref()
                .unwrap_or(&[])
                .iter()
                .enumerate()
                .map(|(k, e)| (k as f64, e.max(1e-16).log10()))
                .collect()
        })
        .collect();
    let all = series.iter().flatten();
    let (kmax, lo, hi) = all.fold((1.0_f64, f64::INFINITY, f64::NEG_INFINITY), |(k, lo, hi), p| {
        (k.max(p.0), lo.min(p.1), hi.max(p.1))
    });
    let (lo, hi) = if lo.is_finite() { (lo.floor(), hi.ceil().max(lo.floor() + 1.0)) } else { (-1.0, 0.0) };
    let sx = |k: f64| PAD + k / kmax * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{PAD}\" y=\"{ty}\">k (0..{kmax})</text>\n\
         <text x=\"4\" y=\"{PAD}\">1e{hi}</text>\n\
         <text x=\"4\" y=\"{b}\">1e{lo}</text>\n",
        b = H - PAD,
        r = W - PAD,
        ty = H - 10.0,
    );
    for (j, pts) in series.iter().enumerate() {
        let coords: Vec<String> = pts.iter().map(|&(k, v)| format!("{:.2},{:.2}", sx(k), sy(v))).collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" points=\"{}\"/>\n<text x=\"{}\" y=\"{}\" fill=\"{}\">layer {}</text>\n",
            COLORS[j % COLORS.len()],
            coords.join(" "),
            W - PAD - 50.0,
            PAD + 14.0 * j as f64,
            COLORS[j % COLORS.len()],
            j + 1
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub instances: usize,
    pub networks: usize,
    pub traces: usize,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn clean(&self) -> bool {
        self.failures.is_empty()
    }
}

fn json_files(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(DscError::MissingArtifact(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)))
        .collect();
    files.sort();
    Ok(files)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn ledger_mismatch(stored: &InstanceCertificate, fresh: &InstanceCertificate, tol: f64) -> Option<String> {
    let pairs = |a: &[Option<f64>], b: &[Option<f64>]| {
        a.len() == b.len()
            && a.iter().zip(b).all(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => close(*x, *y, tol),
                (None, None) => true,
                _ => false,
            })
    };
    let plain = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y, tol));
    if !plain(&stored.mu, &fresh.mu) {
        return Some("coherence values differ".into());
    }
    if !pairs(&stored.ledger.delta, &fresh.ledger.delta) {
        return Some("stability ledger differs".into());
    }
    if stored.ledger.feasible != fresh.ledger.feasible {
        return Some("ledger feasibility flags differ".into());
    }
    if !pairs(&stored.relaxed, &fresh.relaxed) {
        return Some("relaxed bounds differ".into());
    }
    if stored.uniqueness.as_ref().map(|u| u.all_unique) != fresh.uniqueness.as_ref().map(|u| u.all_unique) {
        return Some("uniqueness verdict differs".into());
    }
    if stored.coincidence != fresh.coincidence {
        return Some("coincidence hypotheses differ".into());
    }
    None
}

/// Re-derives every recorded invariant from the artifact tree alone.
pub fn verify(dir: &Path, tol: &Tolerances) -> Result<VerifyReport> {
    let summary = dir.join("summary.csv");
    if !summary.is_file() {
        return Err(DscError::MissingArtifact(summary));
    }
    let mut report = VerifyReport::default();
    let instance_files = json_files(&dir.join("instances"), ".json")?;
    let mut instances = std::collections::HashMap::new();
    for path in instance_files {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let inst = read_instance(&path)?;
        let cert_path = dir.join("certificates").join(format!("{id}.json"));
        let stored: InstanceCertificate = read_json(&cert_path)?;
        let with_lp = stored.mu_tilde.iter().any(Option::is_some);
        let fresh = certify_instance(&inst, with_lp)?;
        if let Some(msg) = ledger_mismatch(&stored, &fresh, tol.structural) {
            report.failures.push(format!("{id}: {msg}"));
        }
        let checks: RecipeChecks = read_json(&dir.join("certificates").join(format!("{id}.checks.json")))?;
        if let Some(recorded) = checks.coincidence {
            match coincidence_check(&inst, &fresh, tol.coincidence)? {
                Some(now) if now.agree && recorded.agree => {}
                Some(now) => report.failures.push(format!(
                    "{id}: l0 and l1 solutions differ by {:e} (recorded agree = {})",
                    now.max_abs_diff, recorded.agree
                )),
                None => report.failures.push(format!("{id}: coincidence check no longer applies")),
            }
        }
        report.instances += 1;
        instances.insert(id, inst);
    }
    for path in json_files(&dir.join("networks"), ".json")? {
        let artifact: NetworkArtifact = read_json(&path)?;
        let name = path.display();
        let Some(inst) = instances.get(&artifact.instance) else {
            return Err(DscError::MissingArtifact(
                dir.join("instances").join(format!("{}.json", artifact.instance)),
            ));
        };
        match network_block_drift(&artifact.network) {
            Ok(drift) if drift <= tol.equivalence => {}
            Ok(drift) => report
                .failures
                .push(format!("{name}: stored blocks differ from the recompiled schedule by {drift:e}")),
            Err(e) => report.failures.push(format!("{name}: {e}")),
        }
        match network_deviation(&artifact.network, &inst.y, artifact.trials, artifact.seed) {
            Ok(dev) if dev <= tol.equivalence => {}
            Ok(dev) => report
                .failures
                .push(format!("{name}: network deviates from the iterative solver by {dev:e}")),
            Err(e) => report.failures.push(format!("{name}: {e}")),
        }
        report.networks += 1;
    }
    for path in json_files(&dir.join("traces"), ".csv")? {
        let n = trace_violations(&path, tol.structural)?;
        if n > 0 {
            report.failures.push(format!("{}: {n} envelope violations", path.display()));
        }
        report.traces += 1;
    }
    Ok(report)
}
