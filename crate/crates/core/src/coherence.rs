//! Mutual coherence `μ(D)`, generalized mutual coherence `μ̃(D)` and the
//! weight set `𝒳(D)` that supplies LISTA-CP weights.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DscError, Result};
use crate::lp::{LinearProgram, Relation};
use crate::model::{layer_product, Dictionary, LayeredDictionary, ZERO_COLUMN_TOL};

/// Slacks tried, in order, on the second-stage off-diagonal bound when
/// holding it at `μ̃` exactly is infeasible.
pub const STAGE2_SLACKS: [f64; 3] = [1e-9, 1e-8, 1e-7];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CoherenceMode {
    /// Two-stage linear programs.
    #[default]
    Exact,
    /// `W = D` and `μ` in place of `μ̃`.
    Fast,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceCertificate {
    pub mu: f64,
    pub mu_tilde: f64,
    /// `W` with columns `w_i`, same shape as `D`.
    pub w: DMatrix<f64>,
    pub c_w: f64,
    pub mode: CoherenceMode,
}

impl CoherenceCertificate {
    /// `max_i |w_iᵀ d_i − 1|`.
    pub fn diag_violation(&self, d: &DMatrix<f64>) -> f64 {
        let g = self.w.transpose() * d;
        (0..g.ncols()).map(|i| (g[(i, i)] - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `μ̃` raised to what the stored `W` actually attains, for bounds that
    /// must hold for this particular `W`.
    pub fn effective_mu_tilde(&self, d: &DMatrix<f64>) -> f64 {
        self.mu_tilde.max(self.off_diagonal_max(d))
    }

    /// `max_{i≠j} |w_iᵀ d_j|`.
    pub fn off_diagonal_max(&self, d: &DMatrix<f64>) -> f64 {
        off_diagonal_max(&self.w, d)
    }
}

pub fn off_diagonal_max(w: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let g = w.transpose() * d;
    let mut best = 0.0_f64;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            if i != j {
                best = best.max(g[(i, j)].abs());
            }
        }
    }
    best
}

fn unit_columns(d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = d.clone();
    for (i, mut c) in out.column_iter_mut().enumerate() {
        let n = c.norm();
        if n < ZERO_COLUMN_TOL {
            return Err(DscError::ZeroColumn(i));
        }
        c /= n;
    }
    Ok(out)
}

/// `max_{i≠j} |d_iᵀ d_j| / (‖d_i‖ ‖d_j‖)`.
pub fn mutual_coherence(dict: &Dictionary) -> Result<f64> {
    mutual_coherence_of(dict.matrix())
}

pub fn mutual_coherence_of(d: &DMatrix<f64>) -> Result<f64> {
    if d.ncols() < 2 {
        return Err(DscError::TooFewColumns);
    }
    let u = unit_columns(d)?;
    Ok(off_diagonal_max(&u, &u))
}

/// Stage one for column `i`: `min_w max_{j≠i} |wᵀ d_j|` s.t. `wᵀ d_i = 1`.
fn stage1_column(d: &DMatrix<f64>, i: usize) -> Result<(f64, DVector<f64>)> {
    let (m, n) = d.shape();
    // Variables: w (free, m), t (>= 0).
    let mut lp = LinearProgram::new(m + 1);
    lp.objective[m] = 1.0;
    for k in 0..m {
        lp.free[k] = true;
    }
    for j in 0..n {
        let col = d.column(j);
        if j == i {
            let mut row: Vec<f64> = col.iter().copied().collect();
            row.push(0.0);
            lp.add(row, Relation::Eq, 1.0);
        } else {
            let mut pos: Vec<f64> = col.iter().copied().collect();
            pos.push(-1.0);
            lp.add(pos, Relation::Le, 0.0);
            let mut neg: Vec<f64> = col.iter().map(|v| -v).collect();
            neg.push(-1.0);
            lp.add(neg, Relation::Le, 0.0);
        }
    }
    let sol = lp.solve()?;
    let w = DVector::from_column_slice(&sol.x[..m]);
    Ok((sol.objective.max(0.0), w))
}

/// Stage two for column `i`: `min max_k |w_k|` with off-diagonals held at `bound`.
fn stage2_column(d: &DMatrix<f64>, i: usize, bound: f64) -> Result<DVector<f64>> {
    let (m, n) = d.shape();
    let mut lp = LinearProgram::new(m + 1);
    lp.objective[m] = 1.0;
    for k in 0..m {
        lp.free[k] = true;
        let mut up = vec![0.0; m + 1];
        up[k] = 1.0;
        up[m] = -1.0;
        lp.add(up, Relation::Le, 0.0);
        let mut lo = vec![0.0; m + 1];
        lo[k] = -1.0;
        lo[m] = -1.0;
        lp.add(lo, Relation::Le, 0.0);
    }
    for j in 0..n {
        let col = d.column(j);
        let mut row: Vec<f64> = col.iter().copied().collect();
        row.push(0.0);
        if j == i {
            lp.add(row, Relation::Eq, 1.0);
        } else {
            lp.add(row, Relation::Le, bound);
            let neg: Vec<f64> = col.iter().map(|v| -v).chain([0.0]).collect();
            lp.add(neg, Relation::Le, bound);
        }
    }
    let sol = lp.solve()?;
    Ok(DVector::from_column_slice(&sol.x[..m]))
}

/// Stage two at `μ̃` exactly, then at `μ̃ + slack` for each entry of
/// `STAGE2_SLACKS` when rounding in stage one leaves the band empty.
fn stage2_with_retry(d: &DMatrix<f64>, i: usize, mu_tilde: f64) -> Result<DVector<f64>> {
    let mut last = Err(DscError::LpInfeasible);
    for slack in std::iter::once(0.0).chain(STAGE2_SLACKS) {
        if slack > 0.0 {
            log::debug!("stage two infeasible for column {i}, retrying at slack {slack:e}");
        }
        last = stage2_column(d, i, mu_tilde + slack);
        if !matches!(last, Err(DscError::LpInfeasible)) {
            break;
        }
    }
    last
}

/// Per-column optima of the first-stage program; `μ̃` is their maximum.
pub fn column_optima(d: &DMatrix<f64>) -> Result<Vec<f64>> {
    (0..d.ncols())
        .into_par_iter()
        .map(|i| stage1_column(d, i).map(|(t, _)| t))
        .collect()
}

/// Computes `μ`, `μ̃` and a member `W` of `𝒳(D)`.
///
/// After stage two each `w_i` is rescaled so `w_iᵀ d_i = 1` holds to
/// rounding. The off-diagonals of `W` may exceed `μ̃` by the stage-two slack;
/// see [`CoherenceCertificate::effective_mu_tilde`].
pub fn generalized_mutual_coherence(
    dict: &Dictionary,
    mode: CoherenceMode,
) -> Result<CoherenceCertificate> {
    let d = dict.matrix();
    let mu = mutual_coherence(dict)?;
    if mode == CoherenceMode::Fast {
        return Ok(CoherenceCertificate {
            mu,
            mu_tilde: mu,
            w: d.clone(),
            c_w: crate::linalg::max_abs(d),
            mode,
        });
    }
    if !dict.is_normalized() {
        return Err(DscError::ShapeMismatch(
            "generalized coherence requires column-normalized dictionaries".into(),
        ));
    }
    let stage1: Vec<(f64, DVector<f64>)> = (0..d.ncols())
        .into_par_iter()
        .map(|i| stage1_column(d, i))
        .collect::<Result<_>>()?;
    let mu_tilde_lp = stage1.iter().map(|(t, _)| *t).fold(0.0, f64::max);
    let columns: Vec<DVector<f64>> = (0..d.ncols())
        .into_par_iter()
        .map(|i| stage2_with_retry(d, i, mu_tilde_lp))
        .collect::<Result<_>>()?;
    let mut w = DMatrix::zeros(d.nrows(), d.ncols());
    for (i, mut col) in columns.into_iter().enumerate() {
        let diag = col.dot(&d.column(i));
        if diag.abs() < 0.5 {
            return Err(DscError::LpNumericalFailure(format!(
                "column {i}: diagonal correlation {diag}"
            )));
        }
        col /= diag;
        w.set_column(i, &col);
    }
    Ok(CoherenceCertificate {
        mu,
        mu_tilde: mu_tilde_lp,
        c_w: crate::linalg::max_abs(&w),
        w,
        mode,
    })
}

/// Coherences needed by the relaxed per-layer uniqueness bound.
#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceProfile {
    /// `μ(D_j)`, index `j − 1`.
    pub layer: Vec<f64>,
    /// `μ(D_[j])`, index `j − 1`.
    pub prefix: Vec<f64>,
    /// `μ(D_[j,j0])` for `j < j0`, keyed by `(j, j0)`.
    pub segment: BTreeMap<(usize, usize), f64>,
}

impl CoherenceProfile {
    pub fn depth(&self) -> usize {
        self.layer.len()
    }
}

pub fn coherence_profile(dicts: &LayeredDictionary) -> Result<CoherenceProfile> {
    let depth = dicts.depth();
    let mut layer = Vec::with_capacity(depth);
    let mut prefix = Vec::with_capacity(depth);
    let mut segment = BTreeMap::new();
    for j0 in 1..=depth {
        layer.push(mutual_coherence(dicts.layer(j0))?);
        prefix.push(mutual_coherence_of(&layer_product(dicts, 1, j0)?)?);
        for j in 1..j0 {
            segment.insert((j, j0), mutual_coherence_of(&layer_product(dicts, j, j0)?)?);
        }
    }
    Ok(CoherenceProfile {
        layer,
        prefix,
        segment,
    })
}
