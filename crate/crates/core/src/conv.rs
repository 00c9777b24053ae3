//! Strided convolutions and multi-channel DCNN forward passes.
//!
//! Out-of-range input entries read as zero, so a length-`d` input convolved
//! with stride `t` has length `⌈d/t⌉` regardless of the filter size.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DscError, Result};
use crate::lista::Activation;

/// `(w *_t x)_i = Σ_k w_k x_{i t + k}` (0-based).
pub fn conv1d(w: &[f64], x: &DVector<f64>, stride: usize) -> DVector<f64> {
    let stride = stride.max(1);
    let d = x.len();
    let out_len = d.div_ceil(stride);
    DVector::from_fn(out_len, |i, _| {
        let base = i * stride;
        w.iter()
            .enumerate()
            .filter(|(k, _)| base + k < d)
            .map(|(k, wk)| wk * x[base + k])
            .sum()
    })
}

/// 2-D analogue on square or rectangular inputs; output is `⌈r/t⌉ × ⌈c/t⌉`.
pub fn conv2d(w: &DMatrix<f64>, x: &DMatrix<f64>, stride: usize) -> DMatrix<f64> {
    let stride = stride.max(1);
    let (r, c) = x.shape();
    DMatrix::from_fn(r.div_ceil(stride), c.div_ceil(stride), |i, j| {
        let mut acc = 0.0;
        for k in 0..w.nrows() {
            for l in 0..w.ncols() {
                let (p, q) = (i * stride + k, j * stride + l);
                if p < r && q < c {
                    acc += w[(k, l)] * x[(p, q)];
                }
            }
        }
        acc
    })
}

/// Architecture of a multi-channel DCNN; `channels[0]` is the input channel count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filter_sizes: Vec<usize>,
    pub strides: Vec<usize>,
    pub channels: Vec<usize>,
}

impl ConvSpec {
    pub fn new(filter_sizes: Vec<usize>, strides: Vec<usize>, channels: Vec<usize>) -> Result<Self> {
        let depth = filter_sizes.len();
        if strides.len() != depth || channels.len() != depth + 1 {
            return Err(DscError::ShapeMismatch(format!(
                "{depth} filter sizes, {} strides, {} channel counts",
                strides.len(),
                channels.len()
            )));
        }
        if filter_sizes.iter().any(|&s| s < 1)
            || strides.iter().any(|&t| t < 1)
            || channels.iter().any(|&n| n < 1)
        {
            return Err(DscError::InvalidArgument(
                "filter sizes, strides and channels must be positive".into(),
            ));
        }
        Ok(Self {
            filter_sizes,
            strides,
            channels,
        })
    }

    pub fn depth(&self) -> usize {
        self.filter_sizes.len()
    }

    /// `d_j = ⌈d_{j−1} / t_j⌉`.
    pub fn widths(&self, d0: usize) -> Vec<usize> {
        let mut w = vec![d0];
        for &t in &self.strides {
            let prev = *w.last().unwrap();
            w.push(prev.div_ceil(t));
        }
        w
    }
}

/// `filters[j][ℓ][i]` maps input channel `i` to output channel `ℓ` of layer `j + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub filters: Vec<Vec<Vec<Vec<f64>>>>,
    pub biases: Vec<Vec<f64>>,
}

fn check_params(spec: &ConvSpec, params: &ConvParams, inputs: usize) -> Result<()> {
    let depth = spec.depth();
    if params.filters.len() != depth || params.biases.len() != depth {
        return Err(DscError::ShapeMismatch(format!(
            "parameters for {} layers, spec has {depth}",
            params.filters.len()
        )));
    }
    if inputs != spec.channels[0] {
        return Err(DscError::ShapeMismatch(format!(
            "{inputs} input channels, spec expects {}",
            spec.channels[0]
        )));
    }
    for j in 0..depth {
        let (n_in, n_out) = (spec.channels[j], spec.channels[j + 1]);
        let f = &params.filters[j];
        if f.len() != n_out || params.biases[j].len() != n_out {
            return Err(DscError::ShapeMismatch(format!(
                "layer {} needs {n_out} output channels",
                j + 1
            )));
        }
        if f.iter().any(|per_in| per_in.len() != n_in) {
            return Err(DscError::ShapeMismatch(format!(
                "layer {} needs {n_in} filters per output channel",
                j + 1
            )));
        }
        if f.iter().flatten().any(|w| w.len() != spec.filter_sizes[j]) {
            return Err(DscError::ShapeMismatch(format!(
                "layer {} filters must have length {}",
                j + 1,
                spec.filter_sizes[j]
            )));
        }
    }
    Ok(())
}

/// `h_{j,ℓ} = ρ(Σ_i w_{ℓ,i} *_{t_j} h_{j−1,i} + b_ℓ 1)`; returns `h_1 … h_J`.
pub fn dcnn_forward(
    spec: &ConvSpec,
    params: &ConvParams,
    x: &[DVector<f64>],
    act: &Activation,
) -> Result<Vec<Vec<DVector<f64>>>> {
    check_params(spec, params, x.len())?;
    if x.windows(2).any(|p| p[0].len() != p[1].len()) {
        return Err(DscError::ShapeMismatch("input channels differ in length".into()));
    }
    let mut layers = Vec::with_capacity(spec.depth());
    let mut h: Vec<DVector<f64>> = x.to_vec();
    for j in 0..spec.depth() {
        let t = spec.strides[j];
        let width = h.first().map_or(0, |c| c.len()).div_ceil(t);
        let next: Vec<DVector<f64>> = params.filters[j]
            .iter()
            .zip(&params.biases[j])
            .map(|(per_in, &b)| {
                let mut acc = DVector::from_element(width, b);
                for (w, hi) in per_in.iter().zip(&h) {
                    acc += conv1d(w, hi, t);
                }
                acc.map(|v| act.apply(v))
            })
            .collect();
        layers.push(next.clone());
        h = next;
    }
    Ok(layers)
}

/// 2-D filters: `filters[j][ℓ][i]` is a `s_j × s_j` kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dParams {
    pub filters: Vec<Vec<Vec<DMatrix<f64>>>>,
    pub biases: Vec<Vec<f64>>,
}

pub fn dcnn2d_forward(
    spec: &ConvSpec,
    params: &Conv2dParams,
    x: &[DMatrix<f64>],
    act: &Activation,
) -> Result<Vec<Vec<DMatrix<f64>>>> {
    let depth = spec.depth();
    if params.filters.len() != depth || params.biases.len() != depth || x.len() != spec.channels[0]
    {
        return Err(DscError::ShapeMismatch("2-D parameters do not match spec".into()));
    }
    let mut layers = Vec::with_capacity(depth);
    let mut h: Vec<DMatrix<f64>> = x.to_vec();
    for j in 0..depth {
        let (n_in, n_out) = (spec.channels[j], spec.channels[j + 1]);
        let s = spec.filter_sizes[j];
        let f = &params.filters[j];
        if f.len() != n_out
            || params.biases[j].len() != n_out
            || f.iter().any(|p| p.len() != n_in || p.iter().any(|w| w.shape() != (s, s)))
        {
            return Err(DscError::ShapeMismatch(format!("layer {} 2-D filters", j + 1)));
        }
        let t = spec.strides[j];
        let (r, c) = h.first().map_or((0, 0), |m| m.shape());
        let next: Vec<DMatrix<f64>> = f
            .iter()
            .zip(&params.biases[j])
            .map(|(per_in, &b)| {
                let mut acc = DMatrix::from_element(r.div_ceil(t), c.div_ceil(t), b);
                for (w, hi) in per_in.iter().zip(&h) {
                    acc += conv2d(w, hi, t);
                }
                acc.map(|v| act.apply(v))
            })
            .collect();
        layers.push(next.clone());
        h = next;
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gaussian_matrix, seeded_rng};
    use proptest::prelude::*;
    use rand::Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn conv1d_examples() {
        let x = v(&[2.0, -1.0, 5.0]);
        assert_eq!(conv1d(&[1.0, 0.0], &x, 1), x);
        assert_eq!(conv1d(&[1.0, 1.0], &v(&[1.0, 2.0, 3.0, 4.0]), 2), v(&[3.0, 7.0]));
        assert_eq!(conv1d(&[1.0], &x, 1), x);
        assert_eq!(conv1d(&[1.0, 1.0], &v(&[1.0, 2.0, 3.0]), 2).len(), 2);
    }

    #[test]
    fn conv2d_stride_and_shape() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let y = conv2d(&w, &x, 2);
        assert_eq!(y.shape(), (2, 2));
        assert_eq!(y[(0, 0)], 12.0);
        assert_eq!(y[(0, 1)], 9.0);
        assert_eq!(y[(1, 0)], 15.0);
        assert_eq!(y[(1, 1)], 9.0);
    }

    #[test]
    fn delta_filter_relu_passes_nonnegative_input() {
        let spec = ConvSpec::new(vec![2], vec![1], vec![1, 1]).unwrap();
        let params = ConvParams {
            filters: vec![vec![vec![vec![1.0, 0.0]]]],
            biases: vec![vec![0.0]],
        };
        let x = v(&[0.5, 2.0, 0.0, 3.0]);
        let h = dcnn_forward(&spec, &params, std::slice::from_ref(&x), &Activation::relu()).unwrap();
        assert_eq!(h[0][0], x);
        let neg = ConvParams {
            filters: params.filters.clone(),
            biases: vec![vec![-10.0]],
        };
        let h = dcnn_forward(&spec, &neg, &[x], &Activation::relu()).unwrap();
        assert_eq!(h[0][0].amax(), 0.0);
    }

    /// Double-loop evaluation straight from the definition, 1-based indices.
    fn naive_layer(
        filters: &[Vec<Vec<f64>>],
        biases: &[f64],
        h: &[Vec<f64>],
        t: usize,
        act: &Activation,
    ) -> Vec<Vec<f64>> {
        let d_prev = h[0].len();
        let d = d_prev.div_ceil(t);
        let mut out = Vec::new();
        for (l, per_in) in filters.iter().enumerate() {
            let mut ch = Vec::new();
            for i in 1..=d {
                let mut acc = biases[l];
                for (c, w) in per_in.iter().enumerate() {
                    for k in 1..=w.len() {
                        let idx = (i - 1) * t + k;
                        if idx <= d_prev {
                            acc += w[k - 1] * h[c][idx - 1];
                        }
                    }
                }
                ch.push(act.apply(acc));
            }
            out.push(ch);
        }
        out
    }

    #[test]
    fn random_dcnn_matches_naive_reference() {
        let mut rng = seeded_rng(19);
        let spec = ConvSpec::new(vec![3, 2], vec![2, 1], vec![2, 3, 2]).unwrap();
        let mut filters = Vec::new();
        let mut biases = Vec::new();
        for j in 0..2 {
            filters.push(
                (0..spec.channels[j + 1])
                    .map(|_| {
                        (0..spec.channels[j])
                            .map(|_| (0..spec.filter_sizes[j]).map(|_| rng.random_range(-1.0..1.0)).collect())
                            .collect()
                    })
                    .collect::<Vec<Vec<Vec<f64>>>>(),
            );
            biases.push((0..spec.channels[j + 1]).map(|_| rng.random_range(-0.3..0.3)).collect::<Vec<f64>>());
        }
        let params = ConvParams { filters, biases };
        let x: Vec<DVector<f64>> = (0..2)
            .map(|_| DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let act = Activation::bounded_negative(0.2, 0.1, 1).unwrap();
        let got = dcnn_forward(&spec, &params, &x, &act).unwrap();
        let mut h: Vec<Vec<f64>> = x.iter().map(|c| c.iter().copied().collect()).collect();
        for j in 0..2 {
            h = naive_layer(&params.filters[j], &params.biases[j], &h, spec.strides[j], &act);
            for (a, b) in got[j].iter().zip(&h) {
                assert!((a - DVector::from_column_slice(b)).amax() < 1e-14);
            }
        }
        assert_eq!(spec.widths(9), vec![9, 5, 5]);
    }

    #[test]
    fn dcnn2d_single_delta_layer() {
        let spec = ConvSpec::new(vec![2], vec![1], vec![1, 1]).unwrap();
        let mut delta = DMatrix::zeros(2, 2);
        delta[(0, 0)] = 1.0;
        let params = Conv2dParams {
            filters: vec![vec![vec![delta]]],
            biases: vec![vec![0.0]],
        };
        let x = DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64);
        let h = dcnn2d_forward(&spec, &params, std::slice::from_ref(&x), &Activation::relu()).unwrap();
        assert_eq!(h[0][0], x);
    }

    #[test]
    fn shape_errors_are_reported() {
        let spec = ConvSpec::new(vec![2], vec![1], vec![1, 1]).unwrap();
        let params = ConvParams {
            filters: vec![vec![vec![vec![1.0]]]],
            biases: vec![vec![0.0]],
        };
        let err = dcnn_forward(&spec, &params, &[v(&[1.0, 2.0])], &Activation::relu());
        assert!(matches!(err, Err(DscError::ShapeMismatch(_))));
        assert!(ConvSpec::new(vec![2], vec![0], vec![1, 1]).is_err());
    }

    proptest! {
        #[test]
        fn stride_one_matches_banded_matrix(seed in any::<u64>(), s in 1usize..5, d in 1usize..12) {
            let mut rng = seeded_rng(seed);
            let w: Vec<f64> = gaussian_matrix(&mut rng, s, 1).iter().copied().collect();
            let x = gaussian_matrix(&mut rng, d, 1).column(0).into_owned();
            let t = DMatrix::from_fn(d, d, |i, j| if j >= i && j - i < s { w[j - i] } else { 0.0 });
            prop_assert!((conv1d(&w, &x, 1) - t * &x).amax() < 1e-12);
        }
    }
}
