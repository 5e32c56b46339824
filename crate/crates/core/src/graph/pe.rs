//! Scaled sinusoidal positional encoding.

use crate::error::{shape_err, Result};
use crate::graph::spec::PositionalEncodingSpec;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `PE(pos, 2k) = sin(pos / base^(2k/dim))`, `PE(pos, 2k+1) = cos(..)`.
#[inline]
pub fn pe_value(pos: usize, row: usize, dim: usize, base: f64) -> f64 {
    let k2 = (row - row % 2) as f64;
    let angle = pos as f64 / base.powf(k2 / dim as f64);
    if row % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

pub fn positional_encoding<T: Scalar>(
    t_len: usize,
    dim: usize,
    pe: &PositionalEncodingSpec,
) -> Result<Tensor<T>> {
    if dim % 2 != 0 {
        return Err(shape_err(format!(
            "positional encoding needs an even dim, got {dim}"
        )));
    }
    Ok(Tensor::from_fn2(dim, t_len, |r, t| {
        T::lit(pe_value(t, r, dim, pe.base))
    }))
}

/// `x + alpha * PE` for `x: [dim, T]`, with positions starting at `start`.
pub fn add_positional<T: Scalar>(
    x: &Tensor<T>,
    alpha: f64,
    base: f64,
    start: usize,
) -> Result<Tensor<T>> {
    let dim = x.rows();
    if dim % 2 != 0 {
        return Err(shape_err(format!(
            "positional encoding needs an even dim, got {dim}"
        )));
    }
    let mut y = x.clone();
    let t_len = x.cols();
    for r in 0..dim {
        for (t, v) in y.row_mut(r).iter_mut().enumerate() {
            *v += pe_term(start + t, r, dim, alpha, base);
        }
    }
    debug_assert_eq!(y.cols(), t_len);
    Ok(y)
}

/// The scaled term added to element `(row, pos)`.
#[inline]
pub fn pe_term<T: Scalar>(pos: usize, row: usize, dim: usize, alpha: f64, base: f64) -> T {
    T::lit(alpha) * T::lit(pe_value(pos, row, dim, base))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero() {
        let pe = positional_encoding::<f64>(1, 6, &PositionalEncodingSpec::default()).unwrap();
        for r in 0..6 {
            assert_eq!(pe.at2(r, 0), if r % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn first_frequency_at_pos_one() {
        let pe = positional_encoding::<f64>(2, 4, &PositionalEncodingSpec::default()).unwrap();
        assert!((pe.at2(0, 1) - 0.841471).abs() < 1e-6);
        assert!((pe.at2(2, 1) - (1.0f64 / 100.0).sin()).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_is_identity() {
        let x = Tensor::from_fn2(4, 3, |r, c| (r * 3 + c) as f32);
        assert_eq!(add_positional(&x, 0.0, 10000.0, 0).unwrap(), x);
    }

    #[test]
    fn odd_dim_rejected() {
        assert!(positional_encoding::<f32>(3, 5, &PositionalEncodingSpec::default()).is_err());
    }
}
