//! Top-down layered pursuit with per-layer error envelopes and rate fits.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coherence::{generalized_mutual_coherence, mutual_coherence, CoherenceCertificate, CoherenceMode};
use crate::error::{DscError, Result};
use crate::guarantees::layer_factor;
use crate::linalg::l1_norm;
use crate::lista::{
    lista_general_run, predicted_error, schedule_from_certificate, Activation, EnvelopeRule,
    ScheduleOptions,
};
use crate::model::{DscInstance, SignalClass, SparseCode};
use crate::pursuit::{basis_pursuit, brute_force_l0, ista_objective, ista_path, Step};

/// Errors at or below this are floating-point noise for rate fitting.
pub const RATE_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Lista,
    Ista,
    Bp,
    L0,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lista => "lista",
            Method::Ista => "ista",
            Method::Bp => "bp",
            Method::L0 => "l0",
        })
    }
}

impl FromStr for Method {
    type Err = DscError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lista" => Ok(Method::Lista),
            "ista" => Ok(Method::Ista),
            "bp" => Ok(Method::Bp),
            "l0" => Ok(Method::L0),
            other => Err(DscError::Parse(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub method: Method,
    pub iters: usize,
    pub activation: Activation,
    /// Ignored for non-ReLU activations, which always use the standard envelope.
    pub rule: EnvelopeRule,
    pub coherence: CoherenceMode,
    /// ℓ1 weight for ISTA.
    pub gamma: f64,
    pub envelope_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            method: Method::Lista,
            iters: 30,
            activation: Activation::relu(),
            rule: EnvelopeRule::SupportAware,
            coherence: CoherenceMode::Exact,
            gamma: 1e-3,
            envelope_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer: usize,
    /// `x^(0) … x^(K)`.
    pub iterates: Vec<Vec<f64>>,
    /// `‖x^(k) − x_j‖₂`, absent without truth.
    pub errors_l2: Option<Vec<f64>>,
    pub errors_l1: Option<Vec<f64>>,
    /// `‖input − D_j x^(k)‖₂`.
    pub residuals: Vec<f64>,
    /// `θ_k` for LISTA, empty otherwise.
    pub thresholds: Vec<f64>,
    /// Certified ℓ1 error bound per iterate, empty when the method has none.
    pub envelope: Vec<f64>,
    pub class: Option<SignalClass>,
    /// Noise this layer's class absorbs from the layer above.
    pub upstream: f64,
    pub c_hat: Option<f64>,
    pub r2: Option<f64>,
    pub code: SparseCode,
    pub envelope_violations: usize,
}

impl LayerTrace {
    pub fn final_error(&self) -> Option<f64> {
        self.errors_l2.as_ref().and_then(|e| e.last().copied())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayeredRun {
    pub method: Method,
    pub iters: usize,
    pub layers: Vec<LayerTrace>,
    /// `Σ_{i≤j} δ_i` over the instance's own noise, before upstream inflation.
    pub noise_accumulation: Vec<f64>,
}

impl LayeredRun {
    pub fn envelope_violations(&self) -> usize {
        self.layers.iter().map(|l| l.envelope_violations).sum()
    }

    pub fn codes(&self) -> Vec<SparseCode> {
        self.layers.iter().map(|l| l.code.clone()).collect()
    }
}

fn errors_against(iterates: &[DVector<f64>], truth: Option<&SparseCode>) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    match truth {
        None => (None, None),
        Some(t) => {
            let tv = t.vector();
            let diffs: Vec<DVector<f64>> = iterates.iter().map(|x| x - &tv).collect();
            (
                Some(diffs.iter().map(|d| d.norm()).collect()),
                Some(diffs.iter().map(l1_norm).collect()),
            )
        }
    }
}

fn count_violations(errors: Option<&Vec<f64>>, envelope: &[f64], tol: f64) -> usize {
    match errors {
        Some(e) if !envelope.is_empty() => e
            .iter()
            .zip(envelope)
            .filter(|(err, env)| **err > **env * (1.0 + tol) + tol)
            .count(),
        _ => 0,
    }
}

/// ℓ1 noise layer `j` sees from the instance itself: `ε_0` on layer 1 plus
/// `√d_{j−1} ε_j`.
pub fn own_noise_l1(instance: &DscInstance, j: usize) -> f64 {
    let first = if j == 1 { instance.noise0_l1() } else { 0.0 };
    first + (instance.dicts.dims()[j - 1] as f64).sqrt() * instance.eps[j - 1]
}

/// Signal class `(B_j, λ_j, δ_j + upstream)` for layer `j`.
pub fn layer_class(instance: &DscInstance, j: usize, upstream: f64) -> Result<SignalClass> {
    SignalClass::new(
        instance.layer_bound(j),
        instance.lambda[j - 1],
        own_noise_l1(instance, j) + upstream,
    )
}

/// Per-layer certificates for LISTA, one LP pass per dictionary.
pub fn layer_certificates(instance: &DscInstance, mode: CoherenceMode) -> Result<Vec<CoherenceCertificate>> {
    instance
        .dicts
        .layers()
        .iter()
        .map(|d| generalized_mutual_coherence(d, mode))
        .collect()
}

/// Solves layer 1 from `y` and layer `j` from layer `j − 1`'s output.
pub fn solve_layered(instance: &DscInstance, opts: &SolveOptions) -> Result<LayeredRun> {
    let certs = match opts.method {
        Method::Lista => Some(layer_certificates(instance, opts.coherence)?),
        _ => None,
    };
    solve_layered_with(instance, certs.as_deref(), opts)
}

/// As [`solve_layered`], reusing precomputed certificates for LISTA.
pub fn solve_layered_with(
    instance: &DscInstance,
    certs: Option<&[CoherenceCertificate]>,
    opts: &SolveOptions,
) -> Result<LayeredRun> {
    let depth = instance.depth();
    let truth = instance.truth.as_ref();
    let mut input = instance.y.clone();
    let mut layers = Vec::with_capacity(depth);
    let mut noise_accumulation = Vec::with_capacity(depth);
    let mut acc = 0.0;
    // Certified bound on the previous layer's output error: ℓ1 for LISTA, ℓ2 for ℓ0.
    let mut upstream = 0.0;
    for j in 1..=depth {
        let dict = instance.dicts.layer(j);
        let d = dict.matrix();
        let lambda = instance.lambda[j - 1];
        let eps = instance.eps[j - 1];
        acc += own_noise_l1(instance, j);
        noise_accumulation.push(acc);
        let layer_truth = truth.map(|t| &t[j - 1]);

        let (iterates, thresholds, envelope, class, absorbed) = match opts.method {
            Method::Lista => {
                let cert = certs
                    .and_then(|c| c.get(j - 1))
                    .ok_or_else(|| DscError::InvalidArgument(format!("no certificate for layer {j}")))?;
                let rule = if opts.activation.is_relu() { opts.rule } else { EnvelopeRule::Standard };
                let class = layer_class(instance, j, upstream)?;
                let schedule = schedule_from_certificate(
                    dict,
                    cert,
                    class,
                    opts.iters,
                    ScheduleOptions {
                        mode: cert.mode,
                        rule,
                        activation: opts.activation,
                    },
                )?;
                let iterates = lista_general_run(&schedule, dict, &input, &opts.activation)?;
                let envelope = (0..=opts.iters)
                    .map(|k| predicted_error(&schedule, &opts.activation, k).map(|b| b.l1))
                    .collect::<Result<Vec<_>>>()?;
                let absorbed = upstream;
                upstream = *envelope.last().unwrap_or(&class.bound);
                (iterates, schedule.theta, envelope, Some(class), absorbed)
            }
            Method::Ista => {
                let (_, path) = ista_path(dict, &input, opts.gamma, opts.iters, Step::Auto)?;
                (path, Vec::new(), Vec::new(), None, 0.0)
            }
            Method::Bp => {
                let x = basis_pursuit(dict, &input)?.vector();
                (vec![DVector::zeros(d.ncols()), x], Vec::new(), Vec::new(), None, 0.0)
            }
            Method::L0 => {
                let own_l2 = if j == 1 { instance.noise0_l2() } else { 0.0 } + eps;
                let tol = own_l2 + upstream;
                let x = brute_force_l0(dict, &input, lambda, tol)?.vector();
                let f = layer_factor(lambda, mutual_coherence(dict)?);
                if f <= 0.0 {
                    return Err(DscError::InfeasibleLayer(j));
                }
                // Truth and candidate both fit within `tol`, and their difference is 2λ-sparse.
                let bound = 2.0 * tol / f.sqrt();
                let absorbed = upstream;
                upstream = bound;
                let zero = DVector::zeros(d.ncols());
                let start = layer_truth.map_or(0.0, |t| t.vector().norm());
                (vec![zero, x], Vec::new(), vec![start.max(bound), bound], None, absorbed)
            }
        };

        let residuals = iterates.iter().map(|x| (&input - d * x).norm()).collect();
        let (errors_l2, errors_l1) = errors_against(&iterates, layer_truth);
        let violations = match opts.method {
            Method::L0 => count_violations(errors_l2.as_ref(), &envelope, opts.envelope_tol),
            _ => count_violations(errors_l1.as_ref(), &envelope, opts.envelope_tol),
        };
        let (c_hat, r2) = match errors_l2.as_ref().map(|e| fit_rate(e)) {
            Some(Ok((c, r))) => (Some(c), Some(r)),
            _ => (None, None),
        };
        let last = iterates.last().cloned().unwrap_or_else(|| DVector::zeros(d.ncols()));
        layers.push(LayerTrace {
            layer: j,
            iterates: iterates.iter().map(|x| x.as_slice().to_vec()).collect(),
            errors_l2,
            errors_l1,
            residuals,
            thresholds,
            envelope,
            class,
            upstream: absorbed,
            c_hat,
            r2,
            code: SparseCode::new(last.clone(), lambda),
            envelope_violations: violations,
        });
        input = last;
    }
    Ok(LayeredRun {
        method: opts.method,
        iters: opts.iters,
        layers,
        noise_accumulation,
    })
}

/// Least-squares slope of `−ln e_k` against `k` over entries above
/// [`RATE_FLOOR`]; returns `(ĉ, r²)`.
pub fn fit_rate(errors: &[f64]) -> Result<(f64, f64)> {
    let points: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .filter(|(_, e)| **e > RATE_FLOOR && e.is_finite())
        .map(|(k, e)| (k as f64, -e.ln()))
        .collect();
    if points.len() < 3 {
        return Err(DscError::TooFewPoints(points.len()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = points
            .iter()
            .map(|p| (p.1 - (my + slope * (p.0 - mx))).powi(2))
            .sum();
        1.0 - ss_res / syy
    };
    Ok((slope, r2))
}

/// `L(x̃) − L(x*)` with `L(x) = ‖x_prev − D x‖₂² + γ‖x‖₁`.
pub fn l2l1_gap(
    x_tilde: &DVector<f64>,
    x_star: &DVector<f64>,
    d: &DMatrix<f64>,
    x_prev: &DVector<f64>,
    gamma: f64,
) -> Result<f64> {
    if x_tilde.len() != d.ncols() || x_star.len() != d.ncols() || x_prev.len() != d.nrows() {
        return Err(DscError::ShapeMismatch(format!(
            "codes of length {} and {}, input of length {}, D is {:?}",
            x_tilde.len(),
            x_star.len(),
            x_prev.len(),
            d.shape()
        )));
    }
    Ok(ista_objective(d, x_prev, x_tilde, gamma) - ista_objective(d, x_prev, x_star, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_instance, ChainMode, Dictionary, DictionaryKind, InstanceRecipe, LayeredDictionary};
    use proptest::prelude::*;

    fn recipe(shape: Vec<(usize, usize)>, lambda: Vec<usize>, seed: u64) -> InstanceRecipe {
        InstanceRecipe {
            shape,
            lambda,
            bound: 1.0,
            mode: ChainMode::ExactChain,
            noise0_norm: 0.0,
            dictionary: DictionaryKind::Incoherent,
            seed,
        }
    }

    #[test]
    fn orthonormal_layer_recovers_at_first_iterate() {
        let x = DVector::from_column_slice(&[0.0, 0.7, 0.0, -0.4]);
        let inst = DscInstance {
            y: x.clone(),
            dicts: LayeredDictionary::single(Dictionary::identity(4)),
            lambda: vec![2],
            eps: vec![0.0],
            truth: Some(vec![SparseCode::new(x, 2)]),
            noise0: None,
            seed: 0,
            mode: ChainMode::ExactChain,
            bound: 1.0,
        };
        let opts = SolveOptions { iters: 5, rule: EnvelopeRule::Standard, ..Default::default() };
        let run = solve_layered(&inst, &opts).unwrap();
        let errs = run.layers[0].errors_l2.as_ref().unwrap();
        assert_eq!(errs.len(), 6);
        assert!(errs[1..].iter().all(|e| *e == 0.0), "{errs:?}");
    }

    #[test]
    fn two_layer_lista_stays_inside_composed_envelope() {
        let inst = generate_instance(&recipe(vec![(16, 32), (32, 16)], vec![2, 1], 7)).unwrap();
        let run = solve_layered(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(run.envelope_violations(), 0);
        let l2 = &run.layers[1];
        assert!(l2.upstream > 0.0);
        let err = *l2.errors_l1.as_ref().unwrap().last().unwrap();
        assert!(err <= *l2.envelope.last().unwrap());
        for layer in &run.layers {
            assert!(layer.final_error().unwrap() < 1e-6, "{:?}", layer.final_error());
        }
    }

    #[test]
    fn l0_recovers_small_planted_instance() {
        let inst = generate_instance(&recipe(vec![(6, 9), (9, 4)], vec![2, 1], 1)).unwrap();
        let run = solve_layered(&inst, &SolveOptions { method: Method::L0, ..Default::default() }).unwrap();
        for layer in &run.layers {
            assert!(layer.final_error().unwrap() < 1e-8);
        }
        assert_eq!(run.envelope_violations(), 0);
    }

    #[test]
    fn ista_and_bp_produce_traces_of_expected_length() {
        let inst = generate_instance(&recipe(vec![(8, 12)], vec![1], 2)).unwrap();
        let ista = solve_layered(
            &inst,
            &SolveOptions { method: Method::Ista, iters: 50, gamma: 1e-4, ..Default::default() },
        )
        .unwrap();
        assert_eq!(ista.layers[0].errors_l2.as_ref().unwrap().len(), 51);
        let bp = solve_layered(&inst, &SolveOptions { method: Method::Bp, ..Default::default() }).unwrap();
        assert!(bp.layers[0].final_error().unwrap() < 1e-8);
    }

    #[test]
    fn missing_truth_keeps_residuals_only() {
        let mut inst = generate_instance(&recipe(vec![(8, 12)], vec![1], 4)).unwrap();
        inst.truth = None;
        let run = solve_layered(&inst, &SolveOptions::default()).unwrap();
        assert!(run.layers[0].errors_l2.is_none());
        assert_eq!(run.layers[0].residuals.len(), 31);
        assert!(*run.layers[0].residuals.last().unwrap() < 1e-6);
    }

    #[test]
    fn lista_fitted_rate_matches_schedule() {
        let inst = generate_instance(&recipe(vec![(16, 32)], vec![2], 11)).unwrap();
        let opts = SolveOptions { rule: EnvelopeRule::Standard, ..Default::default() };
        let run = solve_layered(&inst, &opts).unwrap();
        let cert = &layer_certificates(&inst, CoherenceMode::Exact).unwrap()[0];
        let mu = cert.effective_mu_tilde(inst.dicts.layer(1).matrix());
        let c_hat = run.layers[0].c_hat.unwrap();
        assert!(c_hat >= -(2.0 * mu * 2.0).ln() - 0.2, "{c_hat} vs mu {mu}");
    }

    #[test]
    fn fit_rate_examples() {
        let (c, r2) = fit_rate(&[1.0, 0.1, 0.01]).unwrap();
        assert!((c - 10f64.ln()).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
        let (c, r2) = fit_rate(&[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(c, 0.0);
        assert_eq!(r2, 1.0);
        assert!(matches!(fit_rate(&[1.0, 1e-15, 1e-16, 0.1]), Err(DscError::TooFewPoints(_))));
        let (c, _) = fit_rate(&[1.0, 0.5, 0.25, 1e-20, 0.0625]).unwrap();
        assert!((c - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn l2l1_gap_examples() {
        let d = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.0, 1.0, 0.5]);
        let prev = DVector::from_column_slice(&[1.0, 2.0]);
        let a = DVector::from_column_slice(&[1.0, 1.0, 0.0]);
        let b = DVector::from_column_slice(&[0.0, 0.0, 1.0]);
        assert_eq!(l2l1_gap(&a, &a, &d, &prev, 0.3).unwrap(), 0.0);
        let r = |x: &DVector<f64>| (&prev - &d * x).norm_squared();
        assert!((l2l1_gap(&a, &b, &d, &prev, 0.0).unwrap() - (r(&a) - r(&b))).abs() < 1e-15);
        assert!(l2l1_gap(&a, &DVector::zeros(2), &d, &prev, 0.1).is_err());
    }

    #[test]
    fn l2l1_gap_shrinks_along_lista_trace() {
        let inst = generate_instance(&recipe(vec![(16, 32)], vec![2], 5)).unwrap();
        let run = solve_layered(&inst, &SolveOptions::default()).unwrap();
        let d = inst.dicts.layer(1).matrix();
        let star = inst.truth.as_ref().unwrap()[0].vector();
        let gaps: Vec<f64> = run.layers[0]
            .iterates
            .iter()
            .map(|x| l2l1_gap(&DVector::from_column_slice(x), &star, d, &inst.y, 1e-3).unwrap().abs())
            .collect();
        assert!(gaps[30] < 1e-3 * gaps[1], "{gaps:?}");
    }

    #[test]
    fn method_parsing() {
        for m in [Method::Lista, Method::Ista, Method::Bp, Method::L0] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("fista".parse::<Method>().is_err());
    }

    proptest! {
        #[test]
        fn fit_rate_recovers_geometric_decay(c in 0.01f64..3.0, n in 3usize..12, a in 1e-3f64..1e3) {
            let errs: Vec<f64> = (0..n).map(|k| a * (-c * k as f64).exp()).collect();
            let (chat, r2) = fit_rate(&errs).unwrap();
            let kept = errs.iter().filter(|e| **e > RATE_FLOOR).count();
            prop_assume!(kept >= 3);
            prop_assert!((chat - c).abs() < 1e-8 * c.max(1.0));
            prop_assert!(r2 > 1.0 - 1e-9);
        }
    }
}
