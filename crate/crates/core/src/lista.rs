//! LISTA-CP: analytic schedules, the ReLU (soft-threshold) iteration, the
//! generalized-activation iteration and predicted error envelopes.
//!
//! Thresholds must dominate `μ̃‖x^(k) − x*‖₁ + C_W δ` over the whole signal
//! class. Rather than that supremum the schedule propagates an analytic upper
//! bound `ŝ_k` on `‖x^(k) − x*‖₁` and sets `θ_k = μ̃ ŝ_k + C_W δ`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coherence::{generalized_mutual_coherence, CoherenceCertificate, CoherenceMode};
use crate::error::{DscError, Result};
use crate::model::{Dictionary, SignalClass};
use crate::pursuit::soft_threshold;

/// Relative inflation of `μ̃` under [`EnvelopeRule::SupportAware`], which is
/// tight enough that rounding could otherwise leak past a threshold.
pub const SUPPORT_AWARE_GUARD: f64 = 1e-9;

/// Absolute threshold margin under [`EnvelopeRule::SupportAware`]: a generous
/// bound on the rounding error of `Wᵀ(y − D x)` for codes in the class.
pub fn rounding_margin(rows: usize, cols: usize, c_w: f64, class: &SignalClass) -> f64 {
    let scale = (class.sparsity as f64 * class.bound + class.noise_l1).max(1.0);
    64.0 * f64::EPSILON * (rows + cols) as f64 * c_w.max(1.0) * scale
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Relu,
    BoundedNegative,
}

/// `ρ(x) = x` for `x ≥ 0`; on the negative side ReLU gives 0 and the
/// bounded-negative family gives `max(L x, −β)`. Applied as `ρ^m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub kind: ActivationKind,
    pub beta: f64,
    /// Lipschitz constant on the negative half-line.
    pub lipschitz: f64,
    pub power: u32,
}

impl Default for Activation {
    fn default() -> Self {
        Self::relu()
    }
}

impl Activation {
    pub fn relu() -> Self {
        Self {
            kind: ActivationKind::Relu,
            beta: 0.0,
            lipschitz: 0.0,
            power: 1,
        }
    }

    pub fn bounded_negative(beta: f64, lipschitz: f64, power: u32) -> Result<Self> {
        if !(beta >= 0.0) || !(lipschitz >= 0.0) || power == 0 {
            return Err(DscError::InvalidArgument(format!(
                "bounded-negative activation needs beta >= 0, L >= 0, m >= 1 (got {beta}, {lipschitz}, {power})"
            )));
        }
        Ok(Self {
            kind: ActivationKind::BoundedNegative,
            beta,
            lipschitz,
            power,
        })
    }

    pub fn is_relu(&self) -> bool {
        self.kind == ActivationKind::Relu
    }

    #[inline]
    fn once(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            ActivationKind::BoundedNegative => {
                if x >= 0.0 {
                    x
                } else {
                    let lx = self.lipschitz * x;
                    if lx > -self.beta {
                        lx
                    } else {
                        -self.beta
                    }
                }
            }
        }
    }

    /// `ρ^m(x)`, by literal iteration.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        let mut v = x;
        for _ in 0..self.power {
            v = self.once(v);
        }
        v
    }

    /// `L^m`, zero for ReLU.
    pub fn l_pow_m(&self) -> f64 {
        match self.kind {
            ActivationKind::Relu => 0.0,
            ActivationKind::BoundedNegative => self.lipschitz.powi(self.power as i32),
        }
    }

    /// `L^{m−1} β`, the bound on `|ρ^m(x)|` for `x < 0`.
    pub fn negative_floor(&self) -> f64 {
        match self.kind {
            ActivationKind::Relu => 0.0,
            ActivationKind::BoundedNegative => {
                self.lipschitz.powi(self.power as i32 - 1) * self.beta
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ActivationKind::Relu => write!(f, "relu"),
            ActivationKind::BoundedNegative => {
                write!(f, "bneg:{},{},{}", self.beta, self.lipschitz, self.power)
            }
        }
    }
}

impl FromStr for Activation {
    type Err = DscError;

    /// `relu` or `bneg:β,L,m`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "relu" {
            return Ok(Self::relu());
        }
        let Some(args) = s.strip_prefix("bneg:") else {
            return Err(DscError::Parse(format!("unknown activation {s:?}")));
        };
        let parts: Vec<&str> = args.split(',').collect();
        if parts.len() != 3 {
            return Err(DscError::Parse(format!("expected bneg:beta,L,m, got {s:?}")));
        }
        let bad = |e: &dyn fmt::Display| DscError::Parse(format!("{s:?}: {e}"));
        let beta: f64 = parts[0].trim().parse().map_err(|e| bad(&e))?;
        let l: f64 = parts[1].trim().parse().map_err(|e| bad(&e))?;
        let m: u32 = parts[2].trim().parse().map_err(|e| bad(&e))?;
        Self::bounded_negative(beta, l, m)
    }
}

/// How the ℓ1 error bound `ŝ_k` is propagated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeRule {
    /// `ŝ_{k+1} = a (μ̃ ŝ_k + C_W δ) + 2 s L^{m−1} β` with
    /// `a = 2 L^m d + (2 − 2 L^m) s`; for ReLU this is `2 s (μ̃ ŝ_k + C_W δ)`.
    #[default]
    Standard,
    /// ReLU only: `ŝ_{k+1} = (2s − 1) μ̃ ŝ_k + 2 s C_W δ`, valid because the
    /// error stays inside a support of size `s` and the diagonal term of
    /// `Wᵀ D` cancels.
    SupportAware,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOptions {
    pub mode: CoherenceMode,
    pub rule: EnvelopeRule,
    pub activation: Activation,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self {
            mode: CoherenceMode::Exact,
            rule: EnvelopeRule::Standard,
            activation: Activation::relu(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ListaSchedule {
    pub weights: Vec<DMatrix<f64>>,
    pub theta: Vec<f64>,
    pub class: SignalClass,
    pub mu_tilde: f64,
    pub c_w: f64,
    /// `ŝ_0 … ŝ_K`.
    pub s_hat: Vec<f64>,
    pub rule: EnvelopeRule,
    pub activation: Activation,
    pub mode: CoherenceMode,
    /// Absolute slack added to every threshold, zero under the standard rule.
    pub margin: f64,
}

impl ListaSchedule {
    pub fn iterations(&self) -> usize {
        self.theta.len()
    }

    /// Code dimension `d`.
    pub fn code_dim(&self) -> usize {
        self.weights.first().map_or(0, |w| w.ncols())
    }

    /// Contraction factor and additive constant of the envelope recursion.
    pub fn recursion(&self) -> (f64, f64) {
        recursion_terms(
            self.rule,
            &self.activation,
            self.mu_tilde,
            self.c_w,
            &self.class,
            self.code_dim(),
            self.margin,
        )
    }
}

fn recursion_terms(
    rule: EnvelopeRule,
    act: &Activation,
    mu_tilde: f64,
    c_w: f64,
    class: &SignalClass,
    d: usize,
    margin: f64,
) -> (f64, f64) {
    let s = class.sparsity as f64;
    match rule {
        EnvelopeRule::SupportAware => (
            (2.0 * s - 1.0).max(0.0) * mu_tilde,
            2.0 * s * (c_w * class.noise_l1 + margin),
        ),
        EnvelopeRule::Standard => {
            let lm = act.l_pow_m();
            let a = 2.0 * lm * d as f64 + (2.0 - 2.0 * lm) * s;
            (
                mu_tilde * a,
                a * c_w * class.noise_l1 + 2.0 * s * act.negative_floor(),
            )
        }
    }
}

/// Largest `s` for which the support-recovery result applies: `½(1 + 1/μ̃)`.
pub fn support_recovery_bound(mu_tilde: f64) -> f64 {
    if mu_tilde == 0.0 {
        f64::INFINITY
    } else {
        0.5 * (1.0 + 1.0 / mu_tilde)
    }
}

pub fn compute_schedule(
    dict: &Dictionary,
    class: SignalClass,
    iters: usize,
    opts: ScheduleOptions,
) -> Result<ListaSchedule> {
    let cert = generalized_mutual_coherence(dict, opts.mode)?;
    schedule_from_certificate(dict, &cert, class, iters, opts)
}

/// Builds a schedule from an existing certificate, so one LP solve can serve
/// many signal classes.
pub fn schedule_from_certificate(
    dict: &Dictionary,
    cert: &CoherenceCertificate,
    class: SignalClass,
    iters: usize,
    opts: ScheduleOptions,
) -> Result<ListaSchedule> {
    if cert.w.shape() != dict.matrix().shape() {
        return Err(DscError::ShapeMismatch(format!(
            "certificate W is {:?}, dictionary is {:?}",
            cert.w.shape(),
            dict.matrix().shape()
        )));
    }
    if opts.rule == EnvelopeRule::SupportAware && !opts.activation.is_relu() {
        return Err(DscError::InvalidArgument(
            "the support-aware envelope needs the ReLU activation".into(),
        ));
    }
    let mut mu_tilde = match cert.mode {
        CoherenceMode::Exact => cert.effective_mu_tilde(dict.matrix()),
        CoherenceMode::Fast => cert.mu,
    };
    let bound = support_recovery_bound(mu_tilde);
    if class.sparsity as f64 >= bound {
        return Err(DscError::SparsityTooHigh {
            s: class.sparsity,
            bound,
        });
    }
    if opts.rule == EnvelopeRule::SupportAware {
        mu_tilde *= 1.0 + SUPPORT_AWARE_GUARD;
    }
    let s = class.sparsity as f64;
    if 2.0 * mu_tilde * s >= 1.0 {
        log::warn!("2 mu_tilde s = {} >= 1: geometric decay is not guaranteed", 2.0 * mu_tilde * s);
    }
    let margin = match opts.rule {
        EnvelopeRule::Standard => 0.0,
        EnvelopeRule::SupportAware => rounding_margin(dict.rows(), dict.cols(), cert.c_w, &class),
    };
    let (alpha, constant) = recursion_terms(
        opts.rule,
        &opts.activation,
        mu_tilde,
        cert.c_w,
        &class,
        dict.cols(),
        margin,
    );
    if alpha >= 1.0 {
        log::warn!("envelope rate {alpha} >= 1");
    }
    let noise_term = cert.c_w * class.noise_l1 + margin;
    let mut s_hat = Vec::with_capacity(iters + 1);
    let mut theta = Vec::with_capacity(iters);
    s_hat.push(s * class.bound);
    for k in 0..iters {
        theta.push(mu_tilde * s_hat[k] + noise_term);
        s_hat.push(alpha * s_hat[k] + constant);
    }
    Ok(ListaSchedule {
        weights: vec![cert.w.clone(); iters],
        theta,
        class,
        mu_tilde,
        c_w: cert.c_w,
        s_hat,
        rule: opts.rule,
        activation: opts.activation,
        mode: cert.mode,
        margin,
    })
}

fn check_shapes(schedule: &ListaSchedule, d: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if y.len() != d.nrows() {
        return Err(DscError::ShapeMismatch(format!(
            "y has length {}, D has {} rows",
            y.len(),
            d.nrows()
        )));
    }
    if let Some(w) = schedule.weights.iter().find(|w| w.shape() != d.shape()) {
        return Err(DscError::ShapeMismatch(format!(
            "schedule weight is {:?}, D is {:?}",
            w.shape(),
            d.shape()
        )));
    }
    if schedule.weights.len() != schedule.theta.len() {
        return Err(DscError::ShapeMismatch(format!(
            "{} weights but {} thresholds",
            schedule.weights.len(),
            schedule.theta.len()
        )));
    }
    Ok(())
}

/// `x^(k+1) = τ_{θ_k}(x^(k) + W_kᵀ(y − D x^(k)))` from `x^(0) = 0`; returns
/// `x^(0) … x^(K)`.
pub fn lista_cp_run(
    schedule: &ListaSchedule,
    dict: &Dictionary,
    y: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    let d = dict.matrix();
    check_shapes(schedule, d, y)?;
    let mut iterates = Vec::with_capacity(schedule.iterations() + 1);
    let mut x = DVector::zeros(d.ncols());
    iterates.push(x.clone());
    for (w, &theta) in schedule.weights.iter().zip(&schedule.theta) {
        let z = &x + w.transpose() * (y - d * &x);
        x = soft_threshold(&z, theta);
        iterates.push(x.clone());
    }
    Ok(iterates)
}

/// `x^(k+1) = ρ^m(z − θ_k) − ρ^m(−z − θ_k)` with `z = x^(k) + W_kᵀ(y − D x^(k))`.
pub fn lista_general_run(
    schedule: &ListaSchedule,
    dict: &Dictionary,
    y: &DVector<f64>,
    act: &Activation,
) -> Result<Vec<DVector<f64>>> {
    let d = dict.matrix();
    check_shapes(schedule, d, y)?;
    let mut iterates = Vec::with_capacity(schedule.iterations() + 1);
    let mut x = DVector::zeros(d.ncols());
    iterates.push(x.clone());
    for (w, &theta) in schedule.weights.iter().zip(&schedule.theta) {
        let z = &x + w.transpose() * (y - d * &x);
        x = z.map(|v| act.apply(v - theta) - act.apply(-v - theta));
        iterates.push(x.clone());
    }
    Ok(iterates)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub l1: f64,
    pub l2: f64,
    pub alpha: f64,
    pub constant: f64,
}

impl ErrorBound {
    /// `const / (1 − α)`, the bound as `k → ∞`.
    pub fn limit(&self) -> f64 {
        self.constant / (1.0 - self.alpha)
    }

    /// `c = −ln α`.
    pub fn rate(&self) -> f64 {
        -self.alpha.ln()
    }
}

/// `α^k ŝ_0 + const (1 − α^k)/(1 − α)`; the ℓ2 bound reuses the ℓ1 value.
pub fn predicted_error(schedule: &ListaSchedule, act: &Activation, k: usize) -> Result<ErrorBound> {
    let rule = if act.is_relu() {
        schedule.rule
    } else {
        EnvelopeRule::Standard
    };
    let (alpha, constant) = recursion_terms(
        rule,
        act,
        schedule.mu_tilde,
        schedule.c_w,
        &schedule.class,
        schedule.code_dim(),
        if rule == schedule.rule { schedule.margin } else { 0.0 },
    );
    if alpha >= 1.0 {
        return Err(DscError::RateNotContractive(alpha));
    }
    let s0 = schedule.class.sparsity as f64 * schedule.class.bound;
    let ak = alpha.powi(k as i32);
    let geometric = if alpha == 0.0 {
        if k == 0 {
            0.0
        } else {
            1.0
        }
    } else {
        (1.0 - ak) / (1.0 - alpha)
    };
    let l1 = ak * s0 + constant * geometric;
    Ok(ErrorBound {
        l1,
        l2: l1,
        alpha,
        constant,
    })
}

/// Closed forms `(c, C) = (−ln α, 2 s C_W / (1 − α))` read off the envelope.
pub fn rate_constants(schedule: &ListaSchedule) -> (f64, f64) {
    let (alpha, _) = schedule.recursion();
    let s = schedule.class.sparsity as f64;
    (-alpha.ln(), 2.0 * s * schedule.c_w / (1.0 - alpha))
}

/// Serialized schedule; carries `D` so a network can be compiled from the file alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub dictionary: Vec<Vec<f64>>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub theta: Vec<f64>,
    pub class: SignalClass,
    pub mu_tilde: f64,
    pub c_w: f64,
    pub s_hat: Vec<f64>,
    pub rule: EnvelopeRule,
    pub activation: Activation,
    pub mode: CoherenceMode,
    #[serde(default)]
    pub margin: f64,
}

impl ScheduleFile {
    pub fn new(schedule: &ListaSchedule, dict: &Dictionary) -> Self {
        Self {
            dictionary: crate::io::to_rows(dict.matrix()),
            weights: schedule.weights.iter().map(crate::io::to_rows).collect(),
            theta: schedule.theta.clone(),
            class: schedule.class,
            mu_tilde: schedule.mu_tilde,
            c_w: schedule.c_w,
            s_hat: schedule.s_hat.clone(),
            rule: schedule.rule,
            activation: schedule.activation,
            mode: schedule.mode,
            margin: schedule.margin,
        }
    }

    pub fn into_parts(self) -> Result<(ListaSchedule, Dictionary)> {
        let dict = Dictionary::new(crate::io::from_rows(&self.dictionary)?)?;
        let weights = self
            .weights
            .iter()
            .map(|w| crate::io::from_rows(w))
            .collect::<Result<Vec<_>>>()?;
        if self.s_hat.len() != self.theta.len() + 1 {
            return Err(DscError::Parse(format!(
                "{} thresholds need {} envelope values, found {}",
                self.theta.len(),
                self.theta.len() + 1,
                self.s_hat.len()
            )));
        }
        let schedule = ListaSchedule {
            weights,
            theta: self.theta,
            class: self.class,
            mu_tilde: self.mu_tilde,
            c_w: self.c_w,
            s_hat: self.s_hat,
            rule: self.rule,
            activation: self.activation,
            mode: self.mode,
            margin: self.margin,
        };
        check_shapes(&schedule, dict.matrix(), &DVector::zeros(dict.rows()))?;
        Ok((schedule, dict))
    }
}
