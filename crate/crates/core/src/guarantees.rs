//! Checkable certificates: uniqueness thresholds, relaxed per-layer bounds,
//! stability ledgers and the comparison with earlier bounds.
//!
//! Every layer factor below is `f_j = 1 − (2λ_j − 1) μ_j`; a layer with
//! `f_j ≤ 0` is flagged infeasible and nothing downstream of it is bounded.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coherence::{coherence_profile, mutual_coherence_of, CoherenceProfile};
use crate::error::{DscError, Result};
use crate::linalg::{rank, submatrix};
use crate::model::{layer_product, DscInstance, LayeredDictionary, SparseCode};

/// `½(1 + 1/μ)`, infinite for `μ = 0`.
pub fn uniqueness_bound(mu: f64) -> f64 {
    if mu <= 0.0 {
        f64::INFINITY
    } else {
        0.5 * (1.0 + 1.0 / mu)
    }
}

/// Largest sparsity strictly below `bound`, capped at the dimension.
pub fn sparsity_budget(bound: f64, dim: usize) -> usize {
    if !bound.is_finite() {
        return dim;
    }
    let below = bound.ceil() - 1.0;
    (below.max(0.0) as usize).min(dim)
}

/// `1 − (2λ − 1) μ`.
pub fn layer_factor(lambda: usize, mu: f64) -> f64 {
    1.0 - (2.0 * lambda as f64 - 1.0) * mu
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerVerdict {
    pub layer: usize,
    pub l0: usize,
    pub lambda: usize,
    pub mu: f64,
    /// Largest admissible sparsity, `None` when unbounded before capping.
    pub bound: Option<f64>,
    pub budget: usize,
    /// `‖x_j‖₀` is below the bound.
    pub code_unique: bool,
    /// `λ_j` is below the bound.
    pub lambda_unique: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub layers: Vec<LayerVerdict>,
    pub all_unique: bool,
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Per-layer `‖x_j‖₀ < ½(1 + 1/μ(D_j))`, with the same test on `λ_j` reported alongside.
pub fn check_uniqueness_codes(
    codes: &[SparseCode],
    lambda: &[usize],
    mus: &[f64],
    dims: &[usize],
) -> Result<UniquenessReport> {
    if codes.len() != mus.len() || lambda.len() != mus.len() || dims.len() != mus.len() {
        return Err(DscError::ShapeMismatch(format!(
            "{} codes, {} budgets, {} coherences, {} dimensions",
            codes.len(),
            lambda.len(),
            mus.len(),
            dims.len()
        )));
    }
    let layers: Vec<LayerVerdict> = codes
        .iter()
        .enumerate()
        .map(|(j, code)| {
            let bound = uniqueness_bound(mus[j]);
            let budget = sparsity_budget(bound, dims[j]);
            LayerVerdict {
                layer: j + 1,
                l0: code.l0(),
                lambda: lambda[j],
                mu: mus[j],
                bound: finite_or_none(bound),
                budget,
                code_unique: code.l0() <= budget,
                lambda_unique: lambda[j] <= budget,
            }
        })
        .collect();
    let all_unique = layers.iter().all(|v| v.code_unique);
    Ok(UniquenessReport { layers, all_unique })
}

pub fn check_uniqueness(instance: &DscInstance, mus: &[f64]) -> Result<UniquenessReport> {
    let codes = instance.truth.as_ref().ok_or(DscError::MissingCodes)?;
    let dims: Vec<usize> = instance.dicts.layers().iter().map(|d| d.cols()).collect();
    check_uniqueness_codes(codes, &instance.lambda, mus, &dims)
}

/// `½ max{1 + 1/μ(D_{j0}), 1 + 1/μ(D_[j0]), 1 + 1/μ(D_[j,j0]) : j < j0}`.
pub fn relaxed_bound(profile: &CoherenceProfile, j0: usize) -> Result<f64> {
    if j0 == 0 || j0 > profile.depth() {
        return Err(DscError::IndexOutOfRange {
            j: j0,
            j0,
            depth: profile.depth(),
        });
    }
    let mut best = uniqueness_bound(profile.layer[j0 - 1]).max(uniqueness_bound(profile.prefix[j0 - 1]));
    for j in 1..j0 {
        best = best.max(uniqueness_bound(profile.segment[&(j, j0)]));
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityLedger {
    /// `δ_0 … δ_J`; `None` at and after the first infeasible layer.
    pub delta: Vec<Option<f64>>,
    pub eps0: f64,
    pub eps: Vec<f64>,
    pub lambda: Vec<usize>,
    pub mu: Vec<f64>,
    /// `f_j > 0` per layer.
    pub feasible: Vec<bool>,
}

impl StabilityLedger {
    pub fn depth(&self) -> usize {
        self.eps.len()
    }

    /// `δ_j` for `j ≥ 1`.
    pub fn layer_delta(&self, j: usize) -> Option<f64> {
        self.delta[j]
    }

    pub fn all_feasible(&self) -> bool {
        self.feasible.iter().all(|&f| f)
    }
}

fn check_lengths(eps: &[f64], lambda: &[usize], mu: &[f64]) -> Result<()> {
    if eps.len() != lambda.len() || lambda.len() != mu.len() {
        return Err(DscError::ShapeMismatch(format!(
            "{} tolerances, {} budgets, {} coherences",
            eps.len(),
            lambda.len(),
            mu.len()
        )));
    }
    Ok(())
}

/// `δ_0 = ‖ε_0‖₂`, `δ_j = (ε_j + δ_{j−1}) / √f_j`.
pub fn stability_ledger(eps0: f64, eps: &[f64], lambda: &[usize], mu: &[f64]) -> Result<StabilityLedger> {
    check_lengths(eps, lambda, mu)?;
    let mut delta = vec![Some(eps0)];
    let mut feasible = Vec::with_capacity(eps.len());
    for j in 0..eps.len() {
        let f = layer_factor(lambda[j], mu[j]);
        feasible.push(f > 0.0);
        let next = match (delta[j], f > 0.0) {
            (Some(prev), true) => Some((eps[j] + prev) / f.sqrt()),
            _ => None,
        };
        delta.push(next);
    }
    Ok(StabilityLedger {
        delta,
        eps0,
        eps: eps.to_vec(),
        lambda: lambda.to_vec(),
        mu: mu.to_vec(),
        feasible,
    })
}

/// Squared-error bounds for layer `j` under the two noise specializations,
/// together with the earlier bounds they improve on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorollaryBounds {
    pub layer: usize,
    /// `‖ε_0‖² / Π_{i≤j} f_i` (all `ε_j = 0`).
    pub noiseless: f64,
    /// `Σ_{i≤j} ε_i Π_{m<i} √f_m / Π_{i≤j} √f_i` (`ε_0 = 0`), not squared.
    pub var0: f64,
    /// `4 ‖ε_0‖² / Π_{i≤j} f_i`.
    pub papyan: f64,
    /// `4 ‖ε_0‖² / Π_{i≤j} 4^{1−i} f_i`.
    pub sulam: f64,
    pub ratio_papyan: f64,
    pub ratio_sulam: f64,
}

/// Bounds for every layer up to the first infeasible one.
pub fn corollary_bounds(
    eps0: f64,
    eps: &[f64],
    lambda: &[usize],
    mu: &[f64],
) -> Result<Vec<CorollaryBounds>> {
    check_lengths(eps, lambda, mu)?;
    let e2 = eps0 * eps0;
    let mut out = Vec::new();
    let mut prod_f = 1.0;
    let mut prod_sulam = 1.0;
    let mut numer = 0.0;
    let mut prefix_sqrt = 1.0;
    for j in 0..eps.len() {
        let f = layer_factor(lambda[j], mu[j]);
        if f <= 0.0 {
            break;
        }
        numer += eps[j] * prefix_sqrt;
        prefix_sqrt *= f.sqrt();
        prod_f *= f;
        prod_sulam *= 4.0_f64.powi(-(j as i32)) * f;
        let noiseless = e2 / prod_f;
        let papyan = 4.0 * e2 / prod_f;
        let sulam = 4.0 * e2 / prod_sulam;
        let ratio = |ours: f64, prior: f64| if prior == 0.0 { 0.25 } else { ours / prior };
        out.push(CorollaryBounds {
            layer: j + 1,
            noiseless,
            var0: numer / prefix_sqrt,
            papyan,
            sulam,
            ratio_papyan: ratio(noiseless, papyan),
            ratio_sulam: if sulam == 0.0 { 0.0 } else { noiseless / sulam },
        });
    }
    Ok(out)
}

/// `(ε_seg + δ_j) / √(1 − (2λ_{j0} − 1) μ_seg)`.
pub fn noncumulative_bound(delta_j: f64, eps_seg: f64, lambda_j0: usize, mu_seg: f64) -> Result<f64> {
    let f = layer_factor(lambda_j0, mu_seg);
    if f <= 0.0 {
        return Err(DscError::InfeasibleCondition(f));
    }
    Ok((eps_seg + delta_j) / f.sqrt())
}

/// `ε ‖block‖₂ / √(1 − (2λ_J − 1) μ_S)` for the known-support variant.
pub fn known_support_bound(eps: f64, block_norm: f64, lambda_last: usize, mu_support: f64) -> Result<f64> {
    let f = layer_factor(lambda_last, mu_support);
    if f <= 0.0 {
        return Err(DscError::InfeasibleCondition(f));
    }
    Ok(eps * block_norm / f.sqrt())
}

/// Known-support bound for layer `j` given supports `S_1 … S_J`: the block maps
/// `x_{J,S_J}` to `x_{j,S_j}`, and `μ_S` is the coherence of `D_[J]` on `S_J`.
pub fn known_support_layer_bound(
    dicts: &LayeredDictionary,
    supports: &[Vec<usize>],
    j: usize,
    eps: f64,
) -> Result<f64> {
    let depth = dicts.depth();
    let s_last = &supports[depth - 1];
    let full = layer_product(dicts, 1, depth)?;
    let restricted = crate::linalg::select_columns(&full, s_last);
    let mu_s = if s_last.len() < 2 {
        0.0
    } else {
        mutual_coherence_of(&restricted)?
    };
    let map = if j == depth {
        DMatrix::identity(dicts.dims()[depth], dicts.dims()[depth])
    } else {
        layer_product(dicts, j + 1, depth)?
    };
    let block = submatrix(&map, &supports[j - 1], s_last);
    let norm = if block.is_empty() {
        0.0
    } else {
        block.clone().singular_values().max()
    };
    known_support_bound(eps, norm, s_last.len(), mu_s)
}

/// `(1 / (2 − 2L^m)) (1/μ̃ − 2 L^m d)`.
pub fn relutype_sparsity_bound(mu_tilde: f64, lipschitz: f64, power: u32, d: usize) -> Result<f64> {
    let lm = lipschitz.powi(power as i32);
    if lm >= 1.0 {
        return Err(DscError::UndefinedForL(lm));
    }
    if mu_tilde <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((1.0 / (2.0 - 2.0 * lm)) * (1.0 / mu_tilde - 2.0 * lm * d as f64))
}

/// Full-rank and wide hypotheses of the ℓ0/ℓ1 coincidence result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceHypotheses {
    pub full_rank: bool,
    pub wide: bool,
}

pub fn coincidence_hypotheses(d: &DMatrix<f64>) -> CoincidenceHypotheses {
    CoincidenceHypotheses {
        full_rank: rank(d) == d.nrows().min(d.ncols()),
        wide: d.nrows() < d.ncols(),
    }
}

/// `‖x_j − x̃_j‖₂ ≤ δ_j` for each layer; candidates over budget are refused.
pub fn ledger_holds(
    ledger: &StabilityLedger,
    truth: &[SparseCode],
    candidate: &[SparseCode],
    slack: f64,
) -> Result<Vec<bool>> {
    if truth.len() != ledger.depth() || candidate.len() != ledger.depth() {
        return Err(DscError::ShapeMismatch("code lists must match ledger depth".into()));
    }
    for (j, c) in candidate.iter().enumerate() {
        if c.l0() > ledger.lambda[j] {
            return Err(DscError::InvalidArgument(format!(
                "candidate layer {} has {} nonzeros, budget {}",
                j + 1,
                c.l0(),
                ledger.lambda[j]
            )));
        }
    }
    Ok((0..ledger.depth())
        .map(|j| {
            let err = (truth[j].vector() - candidate[j].vector()).norm();
            match ledger.delta[j + 1] {
                Some(bound) => err <= bound * (1.0 + slack) + slack,
                None => true,
            }
        })
        .collect())
}

/// Everything the certify command reports for one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceCertificate {
    pub mu: Vec<f64>,
    pub mu_tilde: Vec<Option<f64>>,
    pub prefix_mu: Vec<f64>,
    pub uniqueness: Option<UniquenessReport>,
    /// Relaxed bound per layer, `None` when unbounded.
    pub relaxed: Vec<Option<f64>>,
    pub ledger: StabilityLedger,
    pub corollaries: Vec<CorollaryBounds>,
    pub coincidence: Vec<CoincidenceHypotheses>,
}

/// Bundles coherence, uniqueness, ledger and comparison numbers. `μ̃` is
/// computed only when `with_lp` is set, as it costs one LP per column.
pub fn certify_instance(instance: &DscInstance, with_lp: bool) -> Result<InstanceCertificate> {
    let profile = coherence_profile(&instance.dicts)?;
    let mu = profile.layer.clone();
    let mu_tilde = instance
        .dicts
        .layers()
        .iter()
        .map(|d| {
            if with_lp && d.is_normalized() {
                crate::coherence::generalized_mutual_coherence(d, crate::coherence::CoherenceMode::Exact)
                    .map(|c| Some(c.mu_tilde))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let uniqueness = match &instance.truth {
        Some(_) => Some(check_uniqueness(instance, &mu)?),
        None => None,
    };
    let relaxed = (1..=instance.depth())
        .map(|j0| relaxed_bound(&profile, j0).map(finite_or_none))
        .collect::<Result<Vec<_>>>()?;
    let ledger = stability_ledger(instance.noise0_l2(), &instance.eps, &instance.lambda, &mu)?;
    let corollaries = corollary_bounds(instance.noise0_l2(), &instance.eps, &instance.lambda, &mu)?;
    let coincidence = instance
        .dicts
        .layers()
        .iter()
        .map(|d| coincidence_hypotheses(d.matrix()))
        .collect();
    Ok(InstanceCertificate {
        mu,
        mu_tilde,
        prefix_mu: profile.prefix,
        uniqueness,
        relaxed,
        ledger,
        corollaries,
        coincidence,
    })
}

/// `‖D x‖₂² ≥ (1 − (s − 1) μ) ‖x‖₂²` for an `s`-sparse `x`.
pub fn key_inequality_holds(d: &DMatrix<f64>, x: &DVector<f64>, mu: f64) -> bool {
    let s = x.iter().filter(|v| **v != 0.0).count() as f64;
    let lhs = (d * x).norm_squared();
    let rhs = (1.0 - (s - 1.0).max(0.0) * mu) * x.norm_squared();
    lhs >= rhs - 1e-12 * x.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        gaussian_dictionary, generate_instance, incoherent_dictionary, random_sparse_vector,
        seeded_rng, ChainMode, Dictionary, DictionaryKind, InstanceRecipe,
    };
    use proptest::prelude::*;

    #[test]
    fn uniqueness_bound_examples() {
        assert_eq!(uniqueness_bound(0.5), 1.5);
        assert_eq!(uniqueness_bound(1.0), 1.0);
        assert!(uniqueness_bound(0.0).is_infinite());
        assert_eq!(sparsity_budget(1.5, 10), 1);
        assert_eq!(sparsity_budget(1.0, 10), 0);
        assert_eq!(sparsity_budget(2.0000001, 10), 2);
        assert_eq!(sparsity_budget(f64::INFINITY, 7), 7);
    }

    #[test]
    fn orthonormal_layers_are_always_unique() {
        let ids = LayeredDictionary::new(vec![Dictionary::identity(4), Dictionary::identity(4)]).unwrap();
        let codes = vec![
            SparseCode::new(DVector::from_element(4, 1.0), 4),
            SparseCode::new(DVector::from_element(4, 1.0), 4),
        ];
        let r = check_uniqueness_codes(&codes, &[4, 4], &[0.0, 0.0], &ids.dims()[1..]).unwrap();
        assert!(r.all_unique);
    }

    #[test]
    fn single_sparse_layer_with_half_coherence_passes() {
        let code = SparseCode::new(DVector::from_column_slice(&[0.0, 1.0, 0.0]), 1);
        let r = check_uniqueness_codes(&[code], &[1], &[0.5], &[3]).unwrap();
        assert!(r.all_unique && r.layers[0].lambda_unique);
    }

    #[test]
    fn violating_layer_is_flagged() {
        let inst = generate_instance(&InstanceRecipe {
            shape: vec![(8, 12), (12, 6)],
            lambda: vec![4, 1],
            bound: 1.0,
            mode: ChainMode::ExactChain,
            noise0_norm: 0.0,
            dictionary: DictionaryKind::Incoherent,
            seed: 3,
        })
        .unwrap();
        let mus: Vec<f64> = coherence_profile(&inst.dicts).unwrap().layer;
        let bound = uniqueness_bound(mus[0]);
        assert!(bound.ceil() as usize <= 4);
        let r = check_uniqueness(&inst, &mus).unwrap();
        assert!(!r.layers[0].lambda_unique);
        assert!(r.layers[1].code_unique);
    }

    #[test]
    fn missing_codes_are_reported() {
        let mut inst = generate_instance(&InstanceRecipe {
            shape: vec![(4, 6)],
            lambda: vec![1],
            bound: 1.0,
            mode: ChainMode::ExactChain,
            noise0_norm: 0.0,
            dictionary: DictionaryKind::Gaussian,
            seed: 1,
        })
        .unwrap();
        inst.truth = None;
        assert!(matches!(check_uniqueness(&inst, &[0.3]), Err(DscError::MissingCodes)));
    }

    #[test]
    fn relaxed_bound_cases() {
        let mut rng = seeded_rng(4);
        let d1 = gaussian_dictionary(&mut rng, 5, 8).unwrap();
        let single = coherence_profile(&LayeredDictionary::single(d1.clone())).unwrap();
        assert_eq!(relaxed_bound(&single, 1).unwrap(), uniqueness_bound(single.layer[0]));

        // D_2 with two nearly parallel columns has high coherence, while the
        // product through an orthonormal D_1 keeps the same Gram matrix; pad
        // D_1 so the product mixes columns and lowers the coherence.
        let s = 0.6_f64;
        let d2 = Dictionary::normalized(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, s, 0.0, 0.0, (1.0 - s * s).sqrt(), 0.0, 0.0, 0.0, 1.0],
        ))
        .unwrap();
        let d1 = Dictionary::normalized(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, -0.6, 0.0, 0.0, 0.8, 0.0, 0.0, 0.0, 1.0],
        ))
        .unwrap();
        let chain = LayeredDictionary::new(vec![d1, d2]).unwrap();
        let p = coherence_profile(&chain).unwrap();
        assert!(p.prefix[1] < p.layer[1], "{:?}", p);
        assert!(relaxed_bound(&p, 2).unwrap() > uniqueness_bound(p.layer[1]));

        let ids = coherence_profile(
            &LayeredDictionary::new(vec![Dictionary::identity(3), Dictionary::identity(3)]).unwrap(),
        )
        .unwrap();
        assert_eq!(relaxed_bound(&ids, 2).unwrap(), uniqueness_bound(0.0));
    }

    #[test]
    fn ledger_examples() {
        let l = stability_ledger(0.1, &[0.0], &[1], &[0.5]).unwrap();
        assert!((l.delta[1].unwrap() - 0.1 / 0.5_f64.sqrt()).abs() < 1e-15);
        assert!((l.delta[1].unwrap() - 0.141421).abs() < 1e-6);

        let z = stability_ledger(0.0, &[0.0, 0.0], &[1, 1], &[0.3, 0.2]).unwrap();
        assert!(z.delta.iter().all(|d| *d == Some(0.0)));

        let bad = stability_ledger(0.1, &[0.0, 0.0], &[3, 1], &[0.5, 0.1]).unwrap();
        assert_eq!(bad.feasible, vec![false, true]);
        assert_eq!(bad.delta[1], None);
        assert_eq!(bad.delta[2], None);
    }

    #[test]
    fn ledger_expands_to_var0_closed_form() {
        let (eps, lambda, mu) = ([0.03, 0.05], [2, 1], [0.2, 0.3]);
        let l = stability_ledger(0.0, &eps, &lambda, &mu).unwrap();
        let f1: f64 = 1.0 - 3.0 * 0.2;
        let f2: f64 = 1.0 - 1.0 * 0.3;
        // δ_2 = (ε_2 + ε_1/√f1)/√f2 = (ε_1 + ε_2 √f1) / (√f1 √f2).
        let closed = (0.03 + 0.05 * f1.sqrt()) / (f1.sqrt() * f2.sqrt());
        assert!((l.delta[2].unwrap() - closed).abs() < 1e-15);
        let c = corollary_bounds(0.0, &eps, &lambda, &mu).unwrap();
        assert!((c[1].var0 - closed).abs() < 1e-15);
    }

    #[test]
    fn corollary_numbers_match_direct_evaluation() {
        let (e0, lambda, mu) = (0.2, [2, 1], [0.1, 0.25]);
        let c = corollary_bounds(e0, &[0.0, 0.0], &lambda, &mu).unwrap();
        let f1: f64 = 1.0 - 3.0 * 0.1;
        let f2: f64 = 1.0 - 0.25;
        assert!((c[0].noiseless - 0.04 / f1).abs() < 1e-15);
        assert!((c[1].noiseless - 0.04 / (f1 * f2)).abs() < 1e-15);
        assert!((c[1].papyan - 0.16 / (f1 * f2)).abs() < 1e-15);
        assert!((c[1].sulam - 0.16 / (f1 * 0.25 * f2)).abs() < 1e-15);
        assert_eq!(c[0].papyan, c[0].sulam);
        for b in &c {
            assert_eq!(b.ratio_papyan, 0.25);
        }
    }

    #[test]
    fn noncumulative_cases() {
        assert_eq!(noncumulative_bound(0.0, 0.0, 2, 0.1).unwrap(), 0.0);
        let l = stability_ledger(0.1, &[0.02], &[2], &[0.2]).unwrap();
        let n = noncumulative_bound(0.1, 0.02, 2, 0.2).unwrap();
        assert!((n - l.delta[1].unwrap()).abs() < 1e-15);
        assert!(matches!(
            noncumulative_bound(0.1, 0.0, 3, 0.5),
            Err(DscError::InfeasibleCondition(_))
        ));
    }

    #[test]
    fn segment_coherence_beats_cumulative_ledger() {
        // Two layers: the segment product is less coherent than D_2, so the
        // one-shot bound over the segment is below the cumulative ledger.
        let (eps0, lambda, mu) = (0.1, [1, 2], [0.3, 0.3]);
        let cumulative = stability_ledger(eps0, &[0.0, 0.0], &lambda, &mu).unwrap();
        let one_shot = noncumulative_bound(eps0, 0.0, 2, 0.05).unwrap();
        assert!(one_shot < cumulative.delta[2].unwrap());
    }

    #[test]
    fn known_support_bound_on_exact_chain() {
        let inst = generate_instance(&InstanceRecipe {
            shape: vec![(10, 16), (16, 8)],
            lambda: vec![2, 1],
            bound: 1.0,
            mode: ChainMode::ExactChain,
            noise0_norm: 0.0,
            dictionary: DictionaryKind::Incoherent,
            seed: 2,
        })
        .unwrap();
        let supports: Vec<Vec<usize>> =
            inst.truth.as_ref().unwrap().iter().map(|c| c.support.clone()).collect();
        let b2 = known_support_layer_bound(&inst.dicts, &supports, 2, 0.1).unwrap();
        assert!((b2 - 0.1).abs() < 1e-12);
        assert!(known_support_layer_bound(&inst.dicts, &supports, 1, 0.1).unwrap() > 0.0);
    }

    #[test]
    fn relutype_bound_cases() {
        assert!((relutype_sparsity_bound(0.1, 0.0, 1, 16).unwrap() - 5.0).abs() < 1e-12);
        assert!(relutype_sparsity_bound(0.0, 0.3, 1, 16).unwrap().is_infinite());
        assert!((relutype_sparsity_bound(0.02, 0.5, 2, 16).unwrap() - 28.0).abs() < 1e-12);
        assert!(matches!(
            relutype_sparsity_bound(0.1, 1.0, 3, 16),
            Err(DscError::UndefinedForL(_))
        ));
    }

    #[test]
    fn coincidence_hypotheses_detect_shape_and_rank() {
        let mut rng = seeded_rng(5);
        let d = gaussian_dictionary(&mut rng, 4, 8).unwrap();
        assert_eq!(
            coincidence_hypotheses(d.matrix()),
            CoincidenceHypotheses { full_rank: true, wide: true }
        );
        let mut r = d.matrix().clone();
        let row0 = r.row(0).into_owned();
        r.set_row(1, &row0);
        assert!(!coincidence_hypotheses(&r).full_rank);
    }

    #[test]
    fn ledger_rejects_over_budget_candidates() {
        let l = stability_ledger(0.0, &[0.0], &[1], &[0.2]).unwrap();
        let t = vec![SparseCode::new(DVector::from_column_slice(&[1.0, 0.0]), 1)];
        let c = vec![SparseCode::new(DVector::from_column_slice(&[1.0, 1.0]), 1)];
        assert!(ledger_holds(&l, &t, &c, 0.0).is_err());
        assert_eq!(ledger_holds(&l, &t, &t, 0.0).unwrap(), vec![true]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn key_inequality_on_random_sparse_vectors(seed in any::<u64>(), s in 1usize..4) {
            let mut rng = seeded_rng(seed);
            let d = incoherent_dictionary(&mut rng, 8, 12).unwrap();
            let mu = crate::coherence::mutual_coherence(&d).unwrap();
            let x = random_sparse_vector(&mut rng, 12, s, 1.0);
            prop_assert!(key_inequality_holds(d.matrix(), &x, mu));
        }

        #[test]
        fn ledger_is_monotone(
            eps0 in 0.0f64..1.0,
            eps in proptest::collection::vec(0.0f64..0.5, 3),
            mu in proptest::collection::vec(0.0f64..0.3, 3),
        ) {
            let l = stability_ledger(eps0, &eps, &[1, 1, 1], &mu).unwrap();
            for w in l.delta.windows(2) {
                prop_assert!(w[1].unwrap() >= w[0].unwrap());
            }
            let c = corollary_bounds(eps0, &eps, &[1, 1, 1], &mu).unwrap();
            for b in c {
                prop_assert_eq!(b.ratio_papyan, 0.25);
            }
        }
    }
}
