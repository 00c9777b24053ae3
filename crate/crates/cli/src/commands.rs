use std::path::Path;

use serde::Serialize;

use dsc_core::coherence::{generalized_mutual_coherence, STAGE2_SLACKS};
use dsc_core::guarantees::certify_instance;
use dsc_core::io::{read_instance, read_json, read_matrix, write_instance, write_json, write_matrix, MatrixStorage};
use dsc_core::lista::{lista_cp_run, lista_general_run, predicted_error, Activation, EnvelopeRule, ScheduleFile};
use dsc_core::model::{generate_instance, normalize_columns, Dictionary, InstanceRecipe, SparseCode};
use dsc_core::network::NetworkFile;
use dsc_core::pipeline::{fit_rate, layer_class, solve_layered, SolveOptions, RATE_FLOOR};
use dsc_core::pursuit::cosparsity_solve;
use dsc_core::suite::{network_block_drift, network_deviation, read_suite_config};
use dsc_core::{compile, compute_schedule, run_suite, verify, DscError, Method, Result, ScheduleOptions, Tolerances};

use crate::{
    BenchArgs, CertifyArgs, Cli, CoherenceArgs, Command, CompileArgs, GenArgs, Global, ListaArgs, MethodArg,
    SolveArgs, VerifyArgs, VerifyNetArgs,
};

/// Relative and absolute slack when comparing errors to their envelope.
const ENVELOPE_TOL: f64 = 1e-9;

/// Runs one subcommand; `Ok(false)` means it ran but an invariant failed.
pub fn run(cli: &Cli) -> Result<bool> {
    let g = &cli.global;
    match &cli.command {
        Command::Gen(a) => gen(g, a),
        Command::Coherence(a) => coherence(g, a),
        Command::Certify(a) => certify(g, a),
        Command::Solve(a) => solve(g, a),
        Command::Lista(a) => lista(g, a),
        Command::Compile(a) => compile_net(g, a),
        Command::VerifyNet(a) => verify_net(g, a),
        Command::Bench(a) => bench(g, a),
        Command::Verify(a) => verify_tree(g, a),
    }
}

fn need_out<'a>(g: &'a Global, cmd: &str) -> Result<&'a Path> {
    g.out
        .as_deref()
        .ok_or_else(|| DscError::InvalidArgument(format!("{cmd} needs --out")))
}

/// Writes JSON to `--out` when given, otherwise to stdout.
fn emit<T: Serialize>(g: &Global, value: &T) -> Result<()> {
    match &g.out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn parse_shape(text: &str) -> Result<(usize, usize)> {
    let bad = || DscError::Parse(format!("shape {text:?} is not ROWSxCOLS"));
    let (r, c) = text.trim().split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?))
}

fn gen(g: &Global, a: &GenArgs) -> Result<bool> {
    let out = need_out(g, "gen")?;
    let recipe = InstanceRecipe {
        shape: a.shape.iter().map(|s| parse_shape(s)).collect::<Result<_>>()?,
        lambda: a.lambda.clone(),
        bound: a.bound,
        mode: a.mode.into(),
        noise0_norm: a.noise,
        dictionary: a.dictionary.into(),
        seed: g.seed,
    };
    let inst = generate_instance(&recipe)?;
    let storage = if a.inline { MatrixStorage::Inline } else { MatrixStorage::Files };
    write_instance(&inst, out, storage)?;
    println!("wrote {} ({} layers, dims {:?})", out.display(), inst.depth(), inst.dicts.dims());
    Ok(true)
}

#[derive(Serialize)]
struct CoherenceReport {
    mu: f64,
    mu_tilde: f64,
    #[serde(rename = "C_W")]
    c_w: f64,
    mode: dsc_core::CoherenceMode,
    off_diagonal_max: f64,
    diag_violation: f64,
    w_file: Option<String>,
}

fn coherence(g: &Global, a: &CoherenceArgs) -> Result<bool> {
    let tol = g.tolerances(Tolerances::default());
    let raw = Dictionary::new(read_matrix(&a.input)?)?;
    let dict = if raw.is_normalized() {
        raw
    } else {
        log::warn!("{} is not column-normalized; normalizing", a.input.display());
        normalize_columns(&raw)?
    };
    let cert = generalized_mutual_coherence(&dict, a.mode.into())?;
    let d = dict.matrix();
    let w_file = match &g.out {
        Some(out) => {
            let name = format!("{}.W.mat.txt", stem(out));
            write_matrix(&dsc_core::io::parent_dir(out).join(&name), &cert.w)?;
            Some(name)
        }
        None => None,
    };
    let report = CoherenceReport {
        mu: cert.mu,
        mu_tilde: cert.mu_tilde,
        c_w: cert.c_w,
        mode: cert.mode,
        off_diagonal_max: cert.off_diagonal_max(d),
        diag_violation: cert.diag_violation(d),
        w_file,
    };
    emit(g, &report)?;
    eprintln!("mu {:e}  mu_tilde {:e}  C_W {:e}", report.mu, report.mu_tilde, report.c_w);
    let slack = STAGE2_SLACKS[STAGE2_SLACKS.len() - 1] + tol.structural;
    Ok(report.mu_tilde <= report.mu + tol.structural
        && report.diag_violation <= tol.structural
        && report.off_diagonal_max <= report.mu_tilde + slack)
}

fn stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(".json").unwrap_or(&name).to_string()
}

fn certify(g: &Global, a: &CertifyArgs) -> Result<bool> {
    let inst = read_instance(&a.instance)?;
    let cert = certify_instance(&inst, !a.no_lp)?;
    emit(g, &cert)?;
    for (j, delta) in cert.ledger.delta.iter().enumerate() {
        let delta = delta.map_or("undefined".to_string(), |d| format!("{d:e}"));
        eprintln!("layer {j}: delta {delta}");
    }
    if let Some(u) = &cert.uniqueness {
        eprintln!("unique: {}", u.all_unique);
    }
    Ok(true)
}

#[derive(Serialize)]
struct SolveReport {
    method: String,
    codes: Vec<SparseCode>,
    /// `‖x_j − x̂_j‖₂` per layer, when the instance carries its codes.
    final_errors: Vec<Option<f64>>,
    envelope_violations: usize,
}

fn solve(g: &Global, a: &SolveArgs) -> Result<bool> {
    let inst = read_instance(&a.instance)?;
    let truth = inst.truth.clone();
    let error = |j: usize, code: &SparseCode| {
        truth.as_ref().map(|t| (t[j].vector() - code.vector()).norm())
    };
    let report = if a.method == MethodArg::Cosparse {
        let t = truth.as_ref().ok_or(DscError::MissingCodes)?;
        let supports: Vec<Vec<usize>> = t.iter().map(|c| c.support.clone()).collect();
        let res = cosparsity_solve(&inst.dicts, &inst.y, &supports)?;
        SolveReport {
            method: "cosparse".into(),
            final_errors: res.codes.iter().enumerate().map(|(j, c)| error(j, c)).collect(),
            codes: res.codes,
            envelope_violations: 0,
        }
    } else {
        let method = match a.method {
            MethodArg::Lista => Method::Lista,
            MethodArg::Ista => Method::Ista,
            MethodArg::Bp => Method::Bp,
            MethodArg::L0 => Method::L0,
            MethodArg::Cosparse => unreachable!("handled above"),
        };
        let opts = SolveOptions {
            method,
            iters: a.iters,
            activation: a.activation.parse()?,
            gamma: a.gamma,
            ..SolveOptions::default()
        };
        let run = solve_layered(&inst, &opts)?;
        let codes = run.codes();
        SolveReport {
            method: method.to_string(),
            final_errors: codes.iter().enumerate().map(|(j, c)| error(j, c)).collect(),
            codes,
            envelope_violations: run.envelope_violations(),
        }
    };
    emit(g, &report)?;
    for (j, e) in report.final_errors.iter().enumerate() {
        match e {
            Some(e) => eprintln!("layer {}: error {e:e}", j + 1),
            None => eprintln!("layer {}: solved", j + 1),
        }
    }
    Ok(report.envelope_violations == 0)
}

fn lista(g: &Global, a: &ListaArgs) -> Result<bool> {
    let inst = read_instance(&a.instance)?;
    let dict = inst.dicts.layer(1);
    let act: Activation = a.activation.parse()?;
    let rule = match a.rule {
        Some(r) => r.into(),
        None if act.is_relu() => EnvelopeRule::SupportAware,
        None => EnvelopeRule::Standard,
    };
    let class = layer_class(&inst, 1, 0.0)?;
    let opts = ScheduleOptions {
        mode: a.mode.into(),
        rule,
        activation: act,
    };
    let schedule = compute_schedule(dict, class, a.iters, opts)?;
    let iterates = if act.is_relu() {
        lista_cp_run(&schedule, dict, &inst.y)?
    } else {
        lista_general_run(&schedule, dict, &inst.y, &act)?
    };
    let truth = inst.truth.as_ref().map(|t| t[0].vector());
    let bounds: Option<Vec<f64>> = (0..=a.iters)
        .map(|k| predicted_error(&schedule, &act, k).map(|b| b.l1))
        .collect::<Result<_>>()
        .ok();
    let mut violations = 0;
    let mut errors_l2 = Vec::new();
    let mut writer = match &a.trace {
        Some(p) => Some(csv::Writer::from_path(p)?),
        None => None,
    };
    if let Some(w) = writer.as_mut() {
        w.write_record(["k", "err_l2", "err_l1", "s_hat", "theta", "bound"])?;
    }
    for (k, x) in iterates.iter().enumerate() {
        let (l2, l1) = match &truth {
            Some(t) => {
                let diff = x - t;
                (Some(diff.norm()), Some(dsc_core::linalg::l1_norm(&diff)))
            }
            None => (None, None),
        };
        let bound = bounds.as_ref().map(|b| b[k]);
        if let (Some(e), Some(b)) = (l1, bound) {
            if e > b * (1.0 + ENVELOPE_TOL) + ENVELOPE_TOL {
                violations += 1;
            }
        }
        if let Some(e) = l2 {
            errors_l2.push(e);
        }
        if let Some(w) = writer.as_mut() {
            let cell = |v: Option<f64>| v.map(dsc_core::io::fmt_f64).unwrap_or_default();
            w.write_record([
                k.to_string(),
                cell(l2),
                cell(l1),
                cell(schedule.s_hat.get(k).copied()),
                cell(schedule.theta.get(k).copied()),
                cell(bound),
            ])?;
        }
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }
    if let Some(out) = &g.out {
        write_json(out, &ScheduleFile::new(&schedule, dict))?;
    }
    if let Some(last) = errors_l2.last() {
        let rate = fit_rate(&errors_l2)
            .map(|(c, _)| format!("{c:.4}"))
            .unwrap_or_else(|_| format!("n/a (errors below {RATE_FLOOR:e})"));
        println!("final err_l2 {last:e}  c_hat {rate}  envelope violations {violations}");
    } else {
        println!("ran {} iterations (no codes to compare against)", a.iters);
    }
    if bounds.is_none() {
        log::warn!("envelope is not contractive; no bound column");
    }
    Ok(violations == 0)
}

fn compile_net(g: &Global, a: &CompileArgs) -> Result<bool> {
    let out = need_out(g, "compile")?;
    let file: ScheduleFile = read_json(&a.schedule)?;
    let (schedule, dict) = file.clone().into_parts()?;
    let net = compile(&schedule, &dict, &schedule.class)?;
    write_json(out, &NetworkFile::new(&net, file))?;
    println!("{} stages, {} parameters, carry {:e}", net.depth(), net.param_count(), net.carry);
    Ok(true)
}

fn verify_net(g: &Global, a: &VerifyNetArgs) -> Result<bool> {
    let tol = g.tolerances(Tolerances::default());
    let file: NetworkFile = read_json(&a.net)?;
    let inst = read_instance(&a.instance)?;
    let dev = network_deviation(&file, &inst.y, a.trials, g.seed)?;
    let drift = network_block_drift(&file)?;
    println!("max relative deviation {dev:e}");
    println!("max block drift {drift:e}");
    Ok(dev <= tol.equivalence && drift <= tol.structural)
}

fn bench(g: &Global, a: &BenchArgs) -> Result<bool> {
    let out = need_out(g, "bench")?;
    let mut config = read_suite_config(&a.suite)?;
    config.tolerances = g.tolerances(config.tolerances);
    config.svg |= a.svg;
    let report = run_suite(&config, out)?;
    for row in report.rows.iter().filter(|r| r.is_failed() || r.violations > 0) {
        eprintln!("{} {}: {} ({} violations)", row.id, row.solver, row.status, row.violations);
    }
    println!(
        "{} rows, {} failed, {} violations; summary at {}",
        report.rows.len(),
        report.failed(),
        report.violations(),
        report.summary.display()
    );
    Ok(report.success())
}

fn verify_tree(g: &Global, a: &VerifyArgs) -> Result<bool> {
    let tol = g.tolerances(Tolerances::default());
    let report = verify(&a.dir, &tol)?;
    if let Some(out) = &g.out {
        write_json(out, &report)?;
    }
    for f in &report.failures {
        eprintln!("FAIL {f}");
    }
    println!(
        "{} instances, {} networks, {} traces checked; {} failures",
        report.instances,
        report.networks,
        report.traces,
        report.failures.len()
    );
    Ok(report.clean())
}
