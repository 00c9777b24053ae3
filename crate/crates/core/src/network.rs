//! Compilation of a LISTA schedule into affine + activation stages.
//!
//! Every stage maps `state ↦ A ρ(B state − c) + e`. Stage 1 reads `y`; later
//! stages read `(x^(k), y)`. The code is split into positive and negative
//! parts, `ρ(z − θ) − ρ(−z − θ)`, and `y` rides along through the activation
//! shifted by the class-wide constant `M`, so `ρ(y + M) − M = y` whenever
//! `y ≥ −M` entrywise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DscError, Result};
use crate::io::{from_rows, to_rows};
use crate::lista::{Activation, ListaSchedule, ScheduleFile};
use crate::model::{Dictionary, SignalClass};

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub e: DVector<f64>,
}

impl Stage {
    pub fn apply(&self, state: &DVector<f64>, act: &Activation) -> DVector<f64> {
        let pre = &self.b * state - &self.c;
        &self.a * pre.map(|v| act.apply(v)) + &self.e
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len() + self.c.len() + self.e.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineNetwork {
    pub stages: Vec<Stage>,
    pub activation: Activation,
    /// Observation dimension `m`.
    pub input_dim: usize,
    /// Code dimension `d`; the readout is the first `d` state entries.
    pub code_dim: usize,
    /// Carry shift `M`.
    pub carry: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardResult {
    /// `x^(K)`.
    pub output: DVector<f64>,
    /// Readout after each stage, `x^(1) … x^(K)`.
    pub stage_readouts: Vec<DVector<f64>>,
    pub carry_clipped: bool,
}

/// `M = s B max|D_ij| + δ`, an entrywise bound on `y` over the class.
pub fn carry_constant(dict: &Dictionary, class: &SignalClass) -> f64 {
    class.sparsity as f64 * class.bound * crate::linalg::max_abs(dict.matrix()) + class.noise_l1
}

fn split_readout(d: usize, m: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(d + m, 2 * d + m);
    for i in 0..d {
        a[(i, i)] = 1.0;
        a[(i, d + i)] = -1.0;
    }
    for i in 0..m {
        a[(d + i, 2 * d + i)] = 1.0;
    }
    a
}

fn shifts(d: usize, m: usize, theta: f64, carry: f64) -> (DVector<f64>, DVector<f64>) {
    let c = DVector::from_fn(2 * d + m, |i, _| if i < 2 * d { theta } else { -carry });
    let e = DVector::from_fn(d + m, |i, _| if i < d { 0.0 } else { -carry });
    (c, e)
}

pub fn compile(
    schedule: &ListaSchedule,
    dict: &Dictionary,
    class: &SignalClass,
) -> Result<AffineNetwork> {
    let dm = dict.matrix();
    let (m, d) = dm.shape();
    if let Some(w) = schedule.weights.iter().find(|w| w.shape() != (m, d)) {
        return Err(DscError::ShapeMismatch(format!(
            "schedule weight is {:?}, D is {:?}",
            w.shape(),
            (m, d)
        )));
    }
    let carry = carry_constant(dict, class);
    let mut stages = Vec::with_capacity(schedule.iterations());
    for (k, (w, &theta)) in schedule.weights.iter().zip(&schedule.theta).enumerate() {
        let wt = w.transpose();
        let b = if k == 0 {
            let mut b = DMatrix::zeros(2 * d + m, m);
            b.view_mut((0, 0), (d, m)).copy_from(&wt);
            b.view_mut((d, 0), (d, m)).copy_from(&(-&wt));
            b.view_mut((2 * d, 0), (m, m)).fill_with_identity();
            b
        } else {
            let g = DMatrix::identity(d, d) - &wt * dm;
            let mut b = DMatrix::zeros(2 * d + m, d + m);
            b.view_mut((0, 0), (d, d)).copy_from(&g);
            b.view_mut((0, d), (d, m)).copy_from(&wt);
            b.view_mut((d, 0), (d, d)).copy_from(&(-&g));
            b.view_mut((d, d), (d, m)).copy_from(&(-&wt));
            b.view_mut((2 * d, d), (m, m)).fill_with_identity();
            b
        };
        let (c, e) = shifts(d, m, theta, carry);
        stages.push(Stage {
            a: split_readout(d, m),
            b,
            c,
            e,
        });
    }
    Ok(AffineNetwork {
        stages,
        activation: schedule.activation,
        input_dim: m,
        code_dim: d,
        carry,
    })
}

impl AffineNetwork {
    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(Stage::param_count).sum()
    }

    pub fn forward(&self, y: &DVector<f64>) -> Result<ForwardResult> {
        if y.len() != self.input_dim {
            return Err(DscError::ShapeMismatch(format!(
                "input has length {}, network expects {}",
                y.len(),
                self.input_dim
            )));
        }
        let carry_clipped = y.iter().any(|&v| v < -self.carry);
        if carry_clipped {
            log::warn!(
                "input entry below -M = {}: carried observation is clipped",
                -self.carry
            );
        }
        let d = self.code_dim;
        let mut state = y.clone();
        let mut stage_readouts = Vec::with_capacity(self.depth());
        for stage in &self.stages {
            state = stage.apply(&state, &self.activation);
            stage_readouts.push(state.rows(0, d).into_owned());
        }
        let output = stage_readouts
            .last()
            .cloned()
            .unwrap_or_else(|| DVector::zeros(d));
        Ok(ForwardResult {
            output,
            stage_readouts,
            carry_clipped,
        })
    }
}

pub fn forward(net: &AffineNetwork, y: &DVector<f64>) -> Result<ForwardResult> {
    net.forward(y)
}

/// `‖a − b‖₂ / ‖b‖₂`, with identical vectors always at zero.
pub fn relative_deviation(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let diff = (a - b).norm();
    if diff == 0.0 {
        0.0
    } else {
        diff / b.norm().max(f64::MIN_POSITIVE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    /// `K log_s Π (d_{j−1} + d_j)`.
    pub depth_estimate: f64,
    /// `K Π (d_{j−1} + d_j)²`.
    pub weight_estimate: f64,
    /// Stored entries of the dense compiled stages, summed over layers.
    pub exact_param_count: usize,
}

/// Entries of one dense compiled network for a `m × d` dictionary.
pub fn dense_param_count(m: usize, d: usize, iters: usize) -> usize {
    if iters == 0 {
        return 0;
    }
    let a = (d + m) * (2 * d + m);
    let ce = (2 * d + m) + (d + m);
    let first = a + (2 * d + m) * m + ce;
    let later = a + (2 * d + m) * (d + m) + ce;
    first + (iters - 1) * later
}

pub fn size_report(dims: &[usize], iters: usize, kernel: usize) -> SizeReport {
    let k = iters as f64;
    let sums: Vec<f64> = dims.windows(2).map(|p| (p[0] + p[1]) as f64).collect();
    let log_prod: f64 = sums.iter().map(|v| v.ln()).sum();
    let depth_estimate = if kernel >= 2 {
        k * log_prod / (kernel as f64).ln()
    } else {
        f64::INFINITY
    };
    let weight_estimate = k * sums.iter().map(|v| v * v).product::<f64>();
    let exact_param_count = dims
        .windows(2)
        .map(|p| dense_param_count(p[0], p[1], iters))
        .sum();
    SizeReport {
        depth_estimate: if iters == 0 { 0.0 } else { depth_estimate },
        weight_estimate,
        exact_param_count,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFile {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub e: Vec<f64>,
}

/// Network JSON: dense stage blocks plus the schedule they were compiled from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub input_dim: usize,
    pub code_dim: usize,
    pub carry: f64,
    pub activation: Activation,
    pub stages: Vec<StageFile>,
    pub source: ScheduleFile,
}

impl NetworkFile {
    pub fn new(net: &AffineNetwork, source: ScheduleFile) -> Self {
        Self {
            input_dim: net.input_dim,
            code_dim: net.code_dim,
            carry: net.carry,
            activation: net.activation,
            stages: net
                .stages
                .iter()
                .map(|s| StageFile {
                    a: to_rows(&s.a),
                    b: to_rows(&s.b),
                    c: s.c.iter().copied().collect(),
                    e: s.e.iter().copied().collect(),
                })
                .collect(),
            source,
        }
    }

    pub fn network(&self) -> Result<AffineNetwork> {
        let (d, m) = (self.code_dim, self.input_dim);
        let mut stages = Vec::with_capacity(self.stages.len());
        for (k, s) in self.stages.iter().enumerate() {
            let stage = Stage {
                a: from_rows(&s.a)?,
                b: from_rows(&s.b)?,
                c: DVector::from_column_slice(&s.c),
                e: DVector::from_column_slice(&s.e),
            };
            let in_dim = if k == 0 { m } else { d + m };
            let ok = stage.b.shape() == (2 * d + m, in_dim)
                && stage.a.shape() == (d + m, 2 * d + m)
                && stage.c.len() == 2 * d + m
                && stage.e.len() == d + m;
            if !ok {
                return Err(DscError::ShapeMismatch(format!("stage {} blocks do not chain", k + 1)));
            }
            stages.push(stage);
        }
        Ok(AffineNetwork {
            stages,
            activation: self.activation,
            input_dim: m,
            code_dim: d,
            carry: self.carry,
        })
    }
}
