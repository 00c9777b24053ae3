//! Domain types for layered sparse coding and the synthetic instance generator.
//!
//! A layered model `y ≈ D_1 x_1`, `x_{j-1} ≈ D_j x_j` is described by a
//! [`LayeredDictionary`] and per-layer sparsity budgets. [`generate_instance`]
//! plants codes whose supports are known, so every recovery claim can be
//! checked against ground truth.
//!
//! All randomness comes from a single `u64` seed feeding a ChaCha8 stream
//! (a counter-based generator), so equal seeds give bit-identical instances.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DscError, Result};

/// Column norms below this are treated as zero.
pub const ZERO_COLUMN_TOL: f64 = 1e-12;

pub type Rng64 = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A dense dictionary `D ∈ R^{rows × cols}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    data: DMatrix<f64>,
    normalized: bool,
}

impl Dictionary {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(DscError::ShapeMismatch("dictionary must be non-empty".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(DscError::NonFinite);
        }
        let normalized = data
            .column_iter()
            .all(|c| (c.norm() - 1.0).abs() <= 1e-9);
        Ok(Self { data, normalized })
    }

    /// Builds and column-normalizes in one step.
    pub fn normalized(data: DMatrix<f64>) -> Result<Self> {
        normalize_columns(&Self::new(data)?)
    }

    pub fn from_row_slice(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(rows, cols, values))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            data: DMatrix::identity(n, n),
            normalized: true,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Scales each column to unit Euclidean norm.
pub fn normalize_columns(dict: &Dictionary) -> Result<Dictionary> {
    let mut data = dict.data.clone();
    for (i, mut col) in data.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm < ZERO_COLUMN_TOL {
            return Err(DscError::ZeroColumn(i));
        }
        col /= norm;
    }
    Ok(Dictionary {
        data,
        normalized: true,
    })
}

/// Chain `D_1 … D_J` with `cols(D_j) = rows(D_{j+1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredDictionary {
    layers: Vec<Dictionary>,
}

impl LayeredDictionary {
    pub fn new(layers: Vec<Dictionary>) -> Result<Self> {
        if layers.is_empty() {
            return Err(DscError::ShapeMismatch("need at least one layer".into()));
        }
        for (j, pair) in layers.windows(2).enumerate() {
            if pair[0].cols() != pair[1].rows() {
                return Err(DscError::ShapeMismatch(format!(
                    "layer {} has {} columns but layer {} has {} rows",
                    j + 1,
                    pair[0].cols(),
                    j + 2,
                    pair[1].rows()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn single(d: Dictionary) -> Self {
        Self { layers: vec![d] }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Layer `j`, 1-based.
    pub fn layer(&self, j: usize) -> &Dictionary {
        &self.layers[j - 1]
    }

    pub fn layers(&self) -> &[Dictionary] {
        &self.layers
    }

    /// `(d_0, d_1, …, d_J)`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].rows()];
        dims.extend(self.layers.iter().map(|d| d.cols()));
        dims
    }

    /// `D_[j]` = `D_1 ⋯ D_j`.
    pub fn prefix(&self, j: usize) -> Result<DMatrix<f64>> {
        layer_product(self, 1, j)
    }
}

/// Segment product `D_j ⋯ D_{j0}` (1-based, inclusive).
pub fn layer_product(dicts: &LayeredDictionary, j: usize, j0: usize) -> Result<DMatrix<f64>> {
    let depth = dicts.depth();
    if j < 1 || j > j0 || j0 > depth {
        return Err(DscError::IndexOutOfRange { j, j0, depth });
    }
    let mut acc = dicts.layer(j).matrix().clone();
    for k in (j + 1)..=j0 {
        acc = &acc * dicts.layer(k).matrix();
    }
    Ok(acc)
}

/// A code vector together with its exact support and sparsity budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseCode {
    pub values: Vec<f64>,
    pub support: Vec<usize>,
    pub budget: usize,
}

impl SparseCode {
    pub fn new(values: DVector<f64>, budget: usize) -> Self {
        let values: Vec<f64> = values.iter().copied().collect();
        let support = support_of(&values);
        Self {
            values,
            support,
            budget,
        }
    }

    pub fn zeros(len: usize, budget: usize) -> Self {
        Self::new(DVector::zeros(len), budget)
    }

    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn l0(&self) -> usize {
        self.support.len()
    }

    pub fn is_feasible(&self) -> bool {
        self.support.len() <= self.budget
    }
}

pub fn support_of(values: &[f64]) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Signal class `𝕏(B, δ)` restricted to `s`-sparse codes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalClass {
    /// Per-entry magnitude bound `B`.
    pub bound: f64,
    /// Sparsity level `s`.
    pub sparsity: usize,
    /// ℓ1 bound `δ` on the observation noise.
    pub noise_l1: f64,
}

impl SignalClass {
    pub fn new(bound: f64, sparsity: usize, noise_l1: f64) -> Result<Self> {
        if !(bound > 0.0) || !(noise_l1 >= 0.0) {
            return Err(DscError::Parse(format!(
                "signal class needs B > 0 and delta >= 0 (got B={bound}, delta={noise_l1})"
            )));
        }
        Ok(Self {
            bound,
            sparsity,
            noise_l1,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ChainMode {
    #[default]
    ExactChain,
    ToleranceChain,
}

/// How dense dictionary layers are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DictionaryKind {
    /// i.i.d. Gaussian entries, then column-normalized.
    Gaussian,
    /// Gaussian start refined by descent on a high-power frame potential,
    /// which drives the largest column correlations down.
    #[default]
    Incoherent,
}

/// Recipe for [`generate_instance`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecipe {
    /// `(d_{j-1}, d_j)` per layer.
    pub shape: Vec<(usize, usize)>,
    pub lambda: Vec<usize>,
    #[serde(default = "default_bound")]
    pub bound: f64,
    #[serde(default)]
    pub mode: ChainMode,
    #[serde(default)]
    pub noise0_norm: f64,
    #[serde(default)]
    pub dictionary: DictionaryKind,
    pub seed: u64,
}

fn default_bound() -> f64 {
    1.0
}

/// A layered sparse-coding problem with optional planted solution.
#[derive(Clone, Debug, PartialEq)]
pub struct DscInstance {
    pub y: DVector<f64>,
    pub dicts: LayeredDictionary,
    pub lambda: Vec<usize>,
    pub eps: Vec<f64>,
    pub truth: Option<Vec<SparseCode>>,
    pub noise0: Option<DVector<f64>>,
    pub seed: u64,
    pub mode: ChainMode,
    pub bound: f64,
}

impl DscInstance {
    pub fn depth(&self) -> usize {
        self.dicts.depth()
    }

    /// Entry-magnitude bound for the layer-`j` code (1-based).
    ///
    /// Exact-chain intermediates are images `D_{j+1} x_{j+1}` of sparser
    /// codes, so their entries are bounded by `λ_{j+1} B_{j+1} max|D_{j+1}|`.
    pub fn layer_bound(&self, j: usize) -> f64 {
        let depth = self.depth();
        if self.mode == ChainMode::ToleranceChain || j == depth {
            return self.bound;
        }
        let next = self.dicts.layer(j + 1).matrix();
        let max_entry = crate::linalg::max_abs(next);
        self.lambda[j] as f64 * self.layer_bound(j + 1) * max_entry
    }

    pub fn noise0_l1(&self) -> f64 {
        self.noise0.as_ref().map(crate::linalg::l1_norm).unwrap_or(0.0)
    }

    pub fn noise0_l2(&self) -> f64 {
        self.noise0.as_ref().map(|n| n.norm()).unwrap_or(0.0)
    }
}

/// Draws a `s`-sparse vector with magnitudes uniform in `[B/2, B]` and random signs.
pub fn random_sparse_vector(rng: &mut Rng64, len: usize, s: usize, bound: f64) -> DVector<f64> {
    let mut v = DVector::zeros(len);
    let support = rand::seq::index::sample(rng, len, s.min(len));
    for i in support.iter() {
        let mag = rng.random_range(bound / 2.0..=bound);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        v[i] = sign * mag;
    }
    v
}

pub fn gaussian_matrix(rng: &mut Rng64, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Gaussian dictionary with unit columns.
pub fn gaussian_dictionary(rng: &mut Rng64, rows: usize, cols: usize) -> Result<Dictionary> {
    Dictionary::normalized(gaussian_matrix(rng, rows, cols))
}

/// Low-coherence dictionary: projected descent on `Σ_{i≠j} |g_ij / g_max|^p`.
pub fn incoherent_dictionary(rng: &mut Rng64, rows: usize, cols: usize) -> Result<Dictionary> {
    const POWER: i32 = 16;
    const ITERS: usize = 600;
    let mut d = normalize_columns(&Dictionary::new(gaussian_matrix(rng, rows, cols))?)?.data;
    if cols < 2 || rows >= cols {
        // Square or tall: a Gram-Schmidt-style orthonormal frame is optimal.
        if rows >= cols {
            let qr = d.clone().qr();
            let q = qr.q();
            d = q.columns(0, cols).into_owned();
        }
        return Dictionary::normalized(d);
    }
    let mut lr = 0.05;
    for _ in 0..ITERS {
        let mut g = d.transpose() * &d;
        g.fill_diagonal(0.0);
        let gmax = crate::linalg::max_abs(&g);
        if gmax == 0.0 {
            break;
        }
        let r = g.map(|v| (v / gmax).powi(POWER - 1));
        let mut grad = &d * (&r + r.transpose());
        for (mut gc, dc) in grad.column_iter_mut().zip(d.column_iter()) {
            let along = gc.dot(&dc);
            gc.axpy(-along, &dc, 1.0);
        }
        let gnorm = grad.norm();
        if gnorm == 0.0 {
            break;
        }
        d -= &grad * (lr / gnorm);
        for mut c in d.column_iter_mut() {
            let n = c.norm();
            c /= n;
        }
        lr *= 0.995;
    }
    Dictionary::normalized(d)
}

pub fn draw_dictionary(
    rng: &mut Rng64,
    rows: usize,
    cols: usize,
    kind: DictionaryKind,
) -> Result<Dictionary> {
    match kind {
        DictionaryKind::Gaussian => gaussian_dictionary(rng, rows, cols),
        DictionaryKind::Incoherent => incoherent_dictionary(rng, rows, cols),
    }
}

/// Column-sparse layer: every column carries `per_col` nonzeros. Supports are
/// pairwise disjoint when `cols * per_col <= rows`, otherwise wrapped
/// cyclically over a shuffled row order.
fn column_sparse_dictionary(
    rng: &mut Rng64,
    rows: usize,
    cols: usize,
    per_col: usize,
) -> Result<Dictionary> {
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(rng);
    let mut m = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        for k in 0..per_col {
            let r = order[(c * per_col + k) % rows];
            let mag = rng.random_range(0.5..=1.0);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            m[(r, c)] = sign * mag;
        }
    }
    Dictionary::normalized(m)
}

/// Gaussian direction scaled to ℓ2 norm `norm`.
pub fn random_noise(rng: &mut Rng64, len: usize, norm: f64) -> DVector<f64> {
    let mut v = DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = v.norm();
    if n > 0.0 {
        v *= norm / n;
    }
    v
}

/// Builds a synthetic layered instance, deterministic in `recipe.seed`.
pub fn generate_instance(recipe: &InstanceRecipe) -> Result<DscInstance> {
    let depth = recipe.shape.len();
    if depth == 0 || recipe.lambda.len() != depth {
        return Err(DscError::ShapeMismatch(format!(
            "{} layer shapes but {} budgets",
            depth,
            recipe.lambda.len()
        )));
    }
    for pair in recipe.shape.windows(2) {
        if pair[0].1 != pair[1].0 {
            return Err(DscError::ShapeMismatch(format!(
                "shapes {:?} and {:?} do not chain",
                pair[0], pair[1]
            )));
        }
    }
    if let Some(j) = recipe.lambda.iter().position(|&l| l == 0) {
        return Err(DscError::InfeasibleBudget {
            layer: j + 1,
            reason: "budgets must be >= 1".into(),
        });
    }
    if let Some(j) = (0..depth).find(|&j| recipe.lambda[j] > recipe.shape[j].1) {
        return Err(DscError::InfeasibleBudget {
            layer: j + 1,
            reason: format!(
                "lambda_{} = {} exceeds the code dimension {}",
                j + 1,
                recipe.lambda[j],
                recipe.shape[j].1
            ),
        });
    }
    if !(recipe.bound > 0.0) {
        return Err(DscError::Parse("bound must be positive".into()));
    }
    let mut rng = seeded_rng(recipe.seed);

    let (layers, codes, eps) = match recipe.mode {
        ChainMode::ExactChain => {
            let mut per_col = Vec::with_capacity(depth);
            for j in 1..depth {
                let k = recipe.lambda[j - 1] / recipe.lambda[j];
                if k == 0 {
                    return Err(DscError::InfeasibleBudget {
                        layer: j + 1,
                        reason: format!(
                            "lambda_{} = {} < lambda_{} = {}",
                            j,
                            recipe.lambda[j - 1],
                            j + 1,
                            recipe.lambda[j]
                        ),
                    });
                }
                per_col.push(k.min(recipe.shape[j].0));
            }
            let mut layers = Vec::with_capacity(depth);
            let (r0, c0) = recipe.shape[0];
            layers.push(draw_dictionary(&mut rng, r0, c0, recipe.dictionary)?);
            for j in 1..depth {
                let (r, c) = recipe.shape[j];
                layers.push(column_sparse_dictionary(&mut rng, r, c, per_col[j - 1])?);
            }
            let (_, d_last) = recipe.shape[depth - 1];
            let mut codes = vec![DVector::zeros(0); depth];
            codes[depth - 1] =
                random_sparse_vector(&mut rng, d_last, recipe.lambda[depth - 1], recipe.bound);
            for j in (0..depth - 1).rev() {
                codes[j] = layers[j + 1].matrix() * &codes[j + 1];
            }
            (layers, codes, vec![0.0; depth])
        }
        ChainMode::ToleranceChain => {
            let mut layers = Vec::with_capacity(depth);
            for &(r, c) in &recipe.shape {
                layers.push(draw_dictionary(&mut rng, r, c, recipe.dictionary)?);
            }
            let codes: Vec<DVector<f64>> = recipe
                .shape
                .iter()
                .zip(&recipe.lambda)
                .map(|(&(_, c), &l)| random_sparse_vector(&mut rng, c, l, recipe.bound))
                .collect();
            let mut eps = vec![0.0; depth];
            for j in 1..depth {
                eps[j] = (&codes[j - 1] - layers[j].matrix() * &codes[j]).norm();
            }
            (layers, codes, eps)
        }
    };

    let clean = layers[0].matrix() * &codes[0];
    let noise0 = if recipe.noise0_norm > 0.0 {
        Some(random_noise(&mut rng, clean.len(), recipe.noise0_norm))
    } else {
        None
    };
    let y = match &noise0 {
        Some(n) => &clean + n,
        None => clean,
    };
    let truth = codes
        .into_iter()
        .zip(&recipe.lambda)
        .map(|(c, &l)| SparseCode::new(c, l))
        .collect();
    Ok(DscInstance {
        y,
        dicts: LayeredDictionary::new(layers)?,
        lambda: recipe.lambda.clone(),
        eps,
        truth: Some(truth),
        noise0,
        seed: recipe.seed,
        mode: recipe.mode,
        bound: recipe.bound,
    })
}
