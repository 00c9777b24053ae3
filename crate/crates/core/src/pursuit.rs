//! Reference pursuit solvers: soft thresholding, ISTA, basis pursuit, the
//! exhaustive ℓ0 oracle and the known-support null-space method.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DscError, Result};
use crate::linalg::{least_squares, null_space, select_columns, spectral_norm};
use crate::lp::{LinearProgram, Relation};
use crate::model::{layer_product, Dictionary, LayeredDictionary, SparseCode};

/// Largest number of candidate supports the ℓ0 oracle will enumerate.
pub const L0_BUDGET: u128 = 10_000_000;

/// Residual below which `ε = 0` counts as attained.
pub const L0_EXACT_TOL: f64 = 1e-9;

/// Range test for basis pursuit.
pub const RANGE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PursuitResult {
    pub code: SparseCode,
    pub residual: f64,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
}

#[inline]
pub fn soft_threshold_scalar(a: f64, t: f64) -> f64 {
    if a > t {
        a - t
    } else if a < -t {
        a + t
    } else {
        0.0
    }
}

/// `τ_α(x)_i = sign(x_i) (|x_i| − α)_+`.
pub fn soft_threshold(x: &DVector<f64>, alpha: f64) -> DVector<f64> {
    x.map(|a| soft_threshold_scalar(a, alpha))
}

/// ISTA step size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Step {
    /// `1 / ‖D‖₂²`.
    Auto,
    Fixed(f64),
}

/// `‖y − Dx‖₂² + γ‖x‖₁`.
pub fn ista_objective(d: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>, gamma: f64) -> f64 {
    (y - d * x).norm_squared() + gamma * crate::linalg::l1_norm(x)
}

/// Proximal gradient on `½‖y − Dx‖₂² + (γ/2)‖x‖₁`, i.e. on half the
/// objective, so each step is `x ← τ_{γ·step/2}(x − step·Dᵀ(Dx − y))`.
pub fn ista(
    dict: &Dictionary,
    y: &DVector<f64>,
    gamma: f64,
    iters: usize,
    step: Step,
) -> Result<PursuitResult> {
    ista_path(dict, y, gamma, iters, step).map(|(r, _)| r)
}

/// ISTA that also returns the iterates `x^(0) … x^(K)`.
pub fn ista_path(
    dict: &Dictionary,
    y: &DVector<f64>,
    gamma: f64,
    iters: usize,
    step: Step,
) -> Result<(PursuitResult, Vec<DVector<f64>>)> {
    let d = dict.matrix();
    if y.len() != d.nrows() {
        return Err(DscError::ShapeMismatch(format!(
            "y has length {}, D has {} rows",
            y.len(),
            d.nrows()
        )));
    }
    if !(gamma > 0.0) {
        return Err(DscError::InvalidArgument(format!("gamma must be > 0, got {gamma}")));
    }
    let step = match step {
        Step::Auto => {
            let l = spectral_norm(d);
            if l == 0.0 {
                1.0
            } else {
                1.0 / (l * l)
            }
        }
        Step::Fixed(s) if s > 0.0 => s,
        Step::Fixed(s) => {
            return Err(DscError::InvalidArgument(format!("step must be > 0, got {s}")))
        }
    };
    let dt = d.transpose();
    let mut x = DVector::zeros(d.ncols());
    let mut trace = Vec::with_capacity(iters);
    let mut path = vec![x.clone()];
    let mut prev = ista_objective(d, y, &x, gamma);
    let mut rising = 0;
    for _ in 0..iters {
        let grad = &dt * (d * &x - y);
        x = soft_threshold(&(&x - grad * step), gamma * step / 2.0);
        let obj = ista_objective(d, y, &x, gamma);
        trace.push(obj);
        path.push(x.clone());
        if obj > prev {
            rising += 1;
            if rising >= 3 {
                return Err(DscError::DivergingStep);
            }
        } else {
            rising = 0;
        }
        prev = obj;
    }
    let residual = (y - d * &x).norm();
    Ok((
        PursuitResult {
            code: SparseCode::new(x, d.ncols()),
            residual,
            iterations: iters,
            objective_trace: trace,
        },
        path,
    ))
}

/// `min ‖x‖₁ s.t. Dx = y` through the split `x = u − v`, `u, v ≥ 0`.
pub fn basis_pursuit(dict: &Dictionary, y: &DVector<f64>) -> Result<SparseCode> {
    let d = dict.matrix();
    let (m, n) = d.shape();
    if y.len() != m {
        return Err(DscError::ShapeMismatch(format!(
            "y has length {}, D has {m} rows",
            y.len()
        )));
    }
    let ls = least_squares(d, y);
    let resid = (y - d * &ls).norm();
    if resid >= RANGE_TOL * y.norm().max(1.0) {
        return Err(DscError::Infeasible(resid));
    }
    if y.iter().all(|&v| v == 0.0) {
        return Ok(SparseCode::zeros(n, n));
    }
    let mut lp = LinearProgram::new(2 * n);
    lp.objective = vec![1.0; 2 * n];
    for r in 0..m {
        let mut row = Vec::with_capacity(2 * n);
        row.extend(d.row(r).iter().copied());
        row.extend(d.row(r).iter().map(|v| -v));
        lp.add(row, Relation::Eq, y[r]);
    }
    let sol = lp.solve()?;
    let scale = y.amax().max(f64::MIN_POSITIVE);
    let x = DVector::from_fn(n, |i, _| {
        let v = sol.x[i] - sol.x[n + i];
        if v.abs() < 1e-13 * scale {
            0.0
        } else {
            v
        }
    });
    Ok(SparseCode::new(x, n))
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Advances `idx` to the next `k`-subset of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for pos in (0..k).rev() {
        if idx[pos] < n - k + pos {
            idx[pos] += 1;
            for q in pos + 1..k {
                idx[q] = idx[q - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exhaustive ℓ0 oracle: the first support (by size, then lexicographic)
/// whose least-squares fit reaches `‖y − Dx‖₂ ≤ ε`.
pub fn brute_force_l0(
    dict: &Dictionary,
    y: &DVector<f64>,
    lambda_max: usize,
    eps: f64,
) -> Result<SparseCode> {
    let d = dict.matrix();
    let (m, n) = d.shape();
    if y.len() != m {
        return Err(DscError::ShapeMismatch(format!(
            "y has length {}, D has {m} rows",
            y.len()
        )));
    }
    let lambda_max = lambda_max.min(n);
    let total: u128 = (0..=lambda_max).map(|k| binomial(n, k)).sum();
    if total > L0_BUDGET {
        return Err(DscError::BudgetExceeded(total));
    }
    let tol = if eps > 0.0 { eps } else { L0_EXACT_TOL };
    if y.norm() <= tol {
        return Ok(SparseCode::zeros(n, lambda_max));
    }
    for k in 1..=lambda_max {
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            let sub = select_columns(d, &idx);
            let coef = least_squares(&sub, y);
            if (y - &sub * &coef).norm() <= tol {
                let mut x = DVector::zeros(n);
                for (c, &i) in coef.iter().zip(&idx) {
                    x[i] = *c;
                }
                return Ok(SparseCode::new(x, lambda_max));
            }
            if !next_combination(&mut idx, n) {
                break;
            }
        }
    }
    Err(DscError::NoSolution(lambda_max))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CosparsityResult {
    /// `x_1 … x_J`.
    pub codes: Vec<SparseCode>,
    /// Set when only the zero code satisfies the co-support constraints.
    pub empty_null_space: bool,
}

/// Off-support magnitude tolerated before supports are declared inconsistent.
pub const SUPPORT_TOL: f64 = 1e-8;

/// Known-support solve: search `x_J` in the null space of the stacked
/// co-support rows, fit `y` by least squares, then push back `x_{j−1} = D_j x_j`.
pub fn cosparsity_solve(
    dicts: &LayeredDictionary,
    y: &DVector<f64>,
    supports: &[Vec<usize>],
) -> Result<CosparsityResult> {
    let depth = dicts.depth();
    let dims = dicts.dims();
    if supports.len() != depth {
        return Err(DscError::ShapeMismatch(format!(
            "{} supports for {depth} layers",
            supports.len()
        )));
    }
    for (j, s) in supports.iter().enumerate() {
        if s.iter().any(|&i| i >= dims[j + 1]) {
            return Err(DscError::ShapeMismatch(format!(
                "support {} indexes past dimension {}",
                j + 1,
                dims[j + 1]
            )));
        }
    }
    if y.len() != dims[0] {
        return Err(DscError::ShapeMismatch(format!(
            "y has length {}, D_1 has {} rows",
            y.len(),
            dims[0]
        )));
    }
    let d_last = dims[depth];
    let complement = |j: usize| -> Vec<usize> {
        (0..dims[j]).filter(|i| !supports[j - 1].contains(i)).collect()
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for j in 1..depth {
        let seg = layer_product(dicts, j + 1, depth)?;
        for r in complement(j) {
            rows.push(seg.row(r).iter().copied().collect());
        }
    }
    for r in complement(depth) {
        let mut e = vec![0.0; d_last];
        e[r] = 1.0;
        rows.push(e);
    }
    let op = DMatrix::from_fn(rows.len(), d_last, |r, c| rows[r][c]);
    let basis = null_space(&op);

    let zero_codes = || -> Vec<SparseCode> {
        (1..=depth)
            .map(|j| SparseCode::zeros(dims[j], supports[j - 1].len()))
            .collect()
    };
    if basis.ncols() == 0 {
        return Ok(CosparsityResult {
            codes: zero_codes(),
            empty_null_space: true,
        });
    }
    let full = layer_product(dicts, 1, depth)?;
    let z = least_squares(&(&full * &basis), y);
    let mut x = &basis * z;

    let mut raw = vec![DVector::zeros(0); depth];
    raw[depth - 1] = x.clone();
    for j in (1..depth).rev() {
        x = dicts.layer(j + 1).matrix() * &x;
        raw[j - 1] = x.clone();
    }
    let mut codes = Vec::with_capacity(depth);
    for (j, mut v) in raw.into_iter().enumerate() {
        let scale = v.amax().max(1.0);
        for i in 0..v.len() {
            if !supports[j].contains(&i) {
                if v[i].abs() > SUPPORT_TOL * scale {
                    return Err(DscError::InconsistentSupports(v[i].abs()));
                }
                v[i] = 0.0;
            }
        }
        codes.push(SparseCode::new(v, supports[j].len()));
    }
    Ok(CosparsityResult {
        codes,
        empty_null_space: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        gaussian_dictionary, gaussian_matrix, generate_instance, random_sparse_vector, seeded_rng,
        ChainMode, DictionaryKind, InstanceRecipe,
    };
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(&v(&[1.0, -0.3, 0.0]), 0.5), v(&[0.5, 0.0, 0.0]));
        let x = v(&[1.0, -2.5, 0.0, 3.25]);
        assert_eq!(soft_threshold(&x, 0.0), x);
        assert_eq!(soft_threshold(&v(&[1.5, -1.5]), 2.0), v(&[0.0, 0.0]));
    }

    #[test]
    fn ista_zero_observation_stays_zero() {
        let mut rng = seeded_rng(1);
        let d = gaussian_dictionary(&mut rng, 8, 16).unwrap();
        let r = ista(&d, &DVector::zeros(8), 0.1, 20, Step::Auto).unwrap();
        assert!(r.code.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ista_one_step_on_orthonormal_is_closed_form() {
        let mut rng = seeded_rng(2);
        let q = gaussian_matrix(&mut rng, 4, 4).qr().q();
        let d = Dictionary::new(q.clone()).unwrap();
        let y = v(&[0.3, -1.2, 0.7, 0.05]);
        let gamma = 0.4;
        let r = ista(&d, &y, gamma, 1, Step::Fixed(1.0)).unwrap();
        let expected = soft_threshold(&(q.transpose() * &y), gamma / 2.0);
        assert!((r.code.vector() - expected).norm() < 1e-14);
    }

    #[test]
    fn ista_trace_is_monotone_on_planted_instance() {
        let inst = generate_instance(&InstanceRecipe {
            shape: vec![(8, 16)],
            lambda: vec![2],
            bound: 1.0,
            mode: ChainMode::ExactChain,
            noise0_norm: 0.0,
            dictionary: DictionaryKind::Gaussian,
            seed: 6,
        })
        .unwrap();
        let r = ista(inst.dicts.layer(1), &inst.y, 0.01, 300, Step::Auto).unwrap();
        for w in r.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let recomputed = (&inst.y - inst.dicts.layer(1).matrix() * r.code.vector()).norm();
        assert!((recomputed - r.residual).abs() < 1e-9);
    }

    #[test]
    fn ista_flags_oversized_step() {
        let mut rng = seeded_rng(3);
        let d = gaussian_dictionary(&mut rng, 8, 16).unwrap();
        let y = gaussian_matrix(&mut rng, 8, 1).column(0).into_owned();
        let err = ista(&d, &y, 1e-3, 50, Step::Fixed(10.0));
        assert!(matches!(err, Err(DscError::DivergingStep)));
    }

    #[test]
    fn basis_pursuit_trivial_cases() {
        let mut rng = seeded_rng(4);
        let q = gaussian_matrix(&mut rng, 5, 5).qr().q();
        let d = Dictionary::new(q.clone()).unwrap();
        let y = v(&[1.0, 0.0, -2.0, 0.5, 0.25]);
        let x = basis_pursuit(&d, &y).unwrap();
        assert!((x.vector() - q.transpose() * &y).norm() < 1e-10);
        assert_eq!(basis_pursuit(&d, &DVector::zeros(5)).unwrap().l0(), 0);
    }

    #[test]
    fn basis_pursuit_recovers_a_column() {
        let mut rng = seeded_rng(5);
        let d = crate::model::incoherent_dictionary(&mut rng, 8, 12).unwrap();
        let y = d.matrix().column(1).into_owned();
        let bp = basis_pursuit(&d, &y).unwrap();
        let l0 = brute_force_l0(&d, &y, 2, 0.0).unwrap();
        assert_eq!(l0.support, vec![1]);
        assert!((bp.vector() - l0.vector()).amax() < 1e-9);
    }

    #[test]
    fn basis_pursuit_rejects_out_of_range() {
        let d = Dictionary::from_row_slice(2, 1, &[1.0, 0.0]).unwrap();
        assert!(matches!(basis_pursuit(&d, &v(&[0.0, 1.0])), Err(DscError::Infeasible(_))));
    }

    #[test]
    fn l0_trivial_cases() {
        let mut rng = seeded_rng(6);
        let d = gaussian_dictionary(&mut rng, 6, 9).unwrap();
        let x = brute_force_l0(&d, &d.matrix().column(2).into_owned(), 2, 0.0).unwrap();
        assert_eq!(x.support, vec![2]);
        assert!((x.values[2] - 1.0).abs() < 1e-12);
        assert_eq!(brute_force_l0(&d, &DVector::zeros(6), 2, 0.0).unwrap().l0(), 0);
    }

    #[test]
    fn l0_budget_is_guarded() {
        let mut rng = seeded_rng(7);
        let d = gaussian_dictionary(&mut rng, 10, 60).unwrap();
        let y = d.matrix().column(0).into_owned();
        assert!(matches!(brute_force_l0(&d, &y, 8, 0.0), Err(DscError::BudgetExceeded(_))));
    }

    #[test]
    fn l0_reports_no_solution() {
        let mut rng = seeded_rng(8);
        let d = gaussian_dictionary(&mut rng, 6, 9).unwrap();
        let y = gaussian_matrix(&mut rng, 6, 1).column(0).into_owned();
        assert!(matches!(brute_force_l0(&d, &y, 1, 0.0), Err(DscError::NoSolution(1))));
    }

    #[test]
    fn l0_recovers_planted_unique_support() {
        let mut rng = seeded_rng(9);
        let d = crate::model::incoherent_dictionary(&mut rng, 8, 12).unwrap();
        let mu = crate::coherence::mutual_coherence(&d).unwrap();
        assert!(2.0 < 0.5 * (1.0 + 1.0 / mu));
        let x = random_sparse_vector(&mut rng, 12, 2, 1.0);
        let found = brute_force_l0(&d, &(d.matrix() * &x), 2, 0.0).unwrap();
        assert!((found.vector() - x).amax() < 1e-9);
    }

    #[test]
    fn combinations_are_lexicographic() {
        let mut idx = vec![0, 1];
        let mut seen = vec![idx.clone()];
        while next_combination(&mut idx, 4) {
            seen.push(idx.clone());
        }
        assert_eq!(
            seen,
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        assert_eq!(binomial(12, 2), 66);
    }

    #[test]
    fn cosparsity_recovers_exact_chain() {
        let inst = generate_instance(&InstanceRecipe {
            shape: vec![(10, 16), (16, 8)],
            lambda: vec![2, 1],
            bound: 1.0,
            mode: ChainMode::ExactChain,
            noise0_norm: 0.0,
            dictionary: DictionaryKind::Incoherent,
            seed: 31,
        })
        .unwrap();
        let truth = inst.truth.as_ref().unwrap();
        let supports: Vec<Vec<usize>> = truth.iter().map(|c| c.support.clone()).collect();
        let r = cosparsity_solve(&inst.dicts, &inst.y, &supports).unwrap();
        assert!(!r.empty_null_space);
        for (got, want) in r.codes.iter().zip(truth) {
            assert!((got.vector() - want.vector()).amax() < 1e-8);
        }
    }

    #[test]
    fn cosparsity_full_support_is_least_squares() {
        let mut rng = seeded_rng(10);
        let d = gaussian_dictionary(&mut rng, 6, 4).unwrap();
        let y = gaussian_matrix(&mut rng, 6, 1).column(0).into_owned();
        let chain = LayeredDictionary::single(d.clone());
        let r = cosparsity_solve(&chain, &y, &[vec![0, 1, 2, 3]]).unwrap();
        let ls = least_squares(d.matrix(), &y);
        assert!((r.codes[0].vector() - ls).norm() < 1e-12);
    }

    #[test]
    fn cosparsity_zero_observation_and_empty_support() {
        let mut rng = seeded_rng(11);
        let d = gaussian_dictionary(&mut rng, 6, 8).unwrap();
        let chain = LayeredDictionary::single(d);
        let r = cosparsity_solve(&chain, &DVector::zeros(6), &[vec![1, 5]]).unwrap();
        assert!(r.codes[0].values.iter().all(|&x| x == 0.0));
        let e = cosparsity_solve(&chain, &DVector::zeros(6), &[vec![]]).unwrap();
        assert!(e.empty_null_space);
    }

    proptest! {
        #[test]
        fn soft_threshold_is_nonexpansive(
            a in proptest::collection::vec(-5.0f64..5.0, 6),
            b in proptest::collection::vec(-5.0f64..5.0, 6),
            alpha in 0.0f64..3.0,
        ) {
            let (a, b) = (v(&a), v(&b));
            let lhs = (soft_threshold(&a, alpha) - soft_threshold(&b, alpha)).norm();
            prop_assert!(lhs <= (a - b).norm() + 1e-15);
        }

        #[test]
        fn basis_pursuit_beats_least_norm_in_l1(seed in 0u64..200) {
            let mut rng = seeded_rng(seed);
            let d = gaussian_dictionary(&mut rng, 5, 8).unwrap();
            let y = gaussian_matrix(&mut rng, 5, 1).column(0).into_owned();
            let bp = basis_pursuit(&d, &y).unwrap();
            // Any exact representation is feasible; the minimum-norm one is easy.
            let ls = least_squares(d.matrix(), &y);
            let bp_l1 = crate::linalg::l1_norm(&bp.vector());
            prop_assert!(bp_l1 <= crate::linalg::l1_norm(&ls) + 1e-9);
            prop_assert!((d.matrix() * bp.vector() - &y).norm() < 1e-9);
        }
    }
}
