//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Model code is written once against the [`Backend`] trait and runs either
//! eagerly on plain [`Tensor`]s ([`Eager`]) or on a define-by-run [`Tape`]
//! that records every primitive for a later [`Tape::backward`] pass.
//! Broadcasting is limited to scalar-vs-tensor plus the explicit row ops
//! (`add_row`, `mul_row`) used for bias vectors.

mod tape;

pub use tape::{Gradients, Tape, Var};

use crate::math::LN_2PI;
use crate::{Error, Result, Tensor};

/// Tensor operations shared by the eager and taped evaluators.
pub trait Backend {
    type Value: Clone;

    /// Lifts a tensor that should not receive gradients.
    fn constant(&self, t: Tensor) -> Self::Value;
    /// Lifts a learnable parameter (gradient-tracked on a tape).
    fn param(&self, t: &Tensor) -> Self::Value;
    fn with_value<R>(&self, v: &Self::Value, f: impl FnOnce(&Tensor) -> R) -> R;

    fn value(&self, v: &Self::Value) -> Tensor {
        self.with_value(v, Tensor::clone)
    }

    fn matmul(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn div(&self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&self, a: &Self::Value, c: f64) -> Result<Self::Value>;
    fn add_scalar(&self, a: &Self::Value, c: f64) -> Result<Self::Value>;
    fn sum(&self, a: &Self::Value) -> Result<Self::Value>;
    fn mean(&self, a: &Self::Value) -> Result<Self::Value>;
    fn tanh(&self, a: &Self::Value) -> Result<Self::Value>;
    fn relu(&self, a: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&self, a: &Self::Value) -> Result<Self::Value>;
    fn exp(&self, a: &Self::Value) -> Result<Self::Value>;
    fn log(&self, a: &Self::Value) -> Result<Self::Value>;
    fn square(&self, a: &Self::Value) -> Result<Self::Value>;
    fn reshape(&self, a: &Self::Value, shape: &[usize]) -> Result<Self::Value>;
    fn add_row(&self, a: &Self::Value, row: &Self::Value) -> Result<Self::Value>;
    fn mul_row(&self, a: &Self::Value, row: &Self::Value) -> Result<Self::Value>;
    fn rowwise_matvec(&self, g: &Self::Value, w: &Self::Value) -> Result<Self::Value>;
    fn slice_cols(&self, a: &Self::Value, start: usize, len: usize) -> Result<Self::Value>;

    fn neg(&self, a: &Self::Value) -> Result<Self::Value> {
        self.scale(a, -1.0)
    }
}

/// Plain forward evaluation, no recording.
#[derive(Debug, Clone, Copy, Default)]
pub struct Eager;

impl Backend for Eager {
    type Value = Tensor;

    fn constant(&self, t: Tensor) -> Tensor {
        t
    }
    fn param(&self, t: &Tensor) -> Tensor {
        t.clone()
    }
    fn with_value<R>(&self, v: &Tensor, f: impl FnOnce(&Tensor) -> R) -> R {
        f(v)
    }
    fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.matmul(b)
    }
    fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }
    fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.sub(b)
    }
    fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.mul(b)
    }
    fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.div(b)
    }
    fn scale(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        Ok(a.scale(c))
    }
    fn add_scalar(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        Ok(a.add_scalar(c))
    }
    fn sum(&self, a: &Tensor) -> Result<Tensor> {
        Ok(a.sum())
    }
    fn mean(&self, a: &Tensor) -> Result<Tensor> {
        a.mean()
    }
    fn tanh(&self, a: &Tensor) -> Result<Tensor> {
        Ok(a.tanh())
    }
    fn relu(&self, a: &Tensor) -> Result<Tensor> {
        Ok(a.relu())
    }
    fn sigmoid(&self, a: &Tensor) -> Result<Tensor> {
        Ok(a.sigmoid())
    }
    fn exp(&self, a: &Tensor) -> Result<Tensor> {
        Ok(a.exp())
    }
    fn log(&self, a: &Tensor) -> Result<Tensor> {
        a.log()
    }
    fn square(&self, a: &Tensor) -> Result<Tensor> {
        Ok(a.square())
    }
    fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        a.reshape(shape)
    }
    fn add_row(&self, a: &Tensor, row: &Tensor) -> Result<Tensor> {
        a.add_row(row)
    }
    fn mul_row(&self, a: &Tensor, row: &Tensor) -> Result<Tensor> {
        a.mul_row(row)
    }
    fn rowwise_matvec(&self, g: &Tensor, w: &Tensor) -> Result<Tensor> {
        g.rowwise_matvec(w)
    }
    fn slice_cols(&self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        a.slice_cols(start, len)
    }
}

/// `Σ_i [−½ log 2π − log σ_i − (x_i − μ_i)² / (2σ_i²)]` as a scalar.
///
/// `mu` and `sigma` may be full tensors shaped like `x` or row vectors
/// broadcast over the rows of `x`.
pub fn gaussian_log_density<B: Backend>(
    b: &B,
    x: &B::Value,
    mu: &B::Value,
    sigma: &B::Value,
) -> Result<B::Value> {
    let positive = b.with_value(sigma, |s| s.data().iter().all(|&v| v > 0.0));
    if !positive {
        return Err(Error::Domain {
            op: "gaussian_log_density",
            detail: "sigma must be strictly positive".into(),
        });
    }
    let (x_shape, mu_shape, sigma_shape) = (
        b.with_value(x, |t| t.shape().to_vec()),
        b.with_value(mu, |t| t.shape().to_vec()),
        b.with_value(sigma, |t| t.shape().to_vec()),
    );
    let rows = b.with_value(x, |t| t.dims2().0);
    let n = b.with_value(x, Tensor::numel) as f64;

    let centred = if mu_shape == x_shape {
        b.sub(x, mu)?
    } else {
        let neg_mu = b.neg(mu)?;
        b.add_row(x, &neg_mu)?
    };
    let z = if sigma_shape == x_shape {
        b.div(&centred, sigma)?
    } else {
        let one = b.constant(Tensor::full(&sigma_shape, 1.0));
        let inv = b.div(&one, sigma)?;
        b.mul_row(&centred, &inv)?
    };
    let quad = b.scale(&b.sum(&b.square(&z)?)?, -0.5)?;
    let log_sigma = b.sum(&b.log(sigma)?)?;
    // A row-broadcast σ contributes once per row of x.
    let repeats = if sigma_shape == x_shape { 1.0 } else { rows as f64 };
    let log_norm = b.scale(&log_sigma, -repeats)?;
    let total = b.add(&quad, &log_norm)?;
    b.add_scalar(&total, -0.5 * LN_2PI * n)
}

/// `μ + σ ⊙ noise`; `noise` is treated as a constant.
pub fn reparam_sample<B: Backend>(
    b: &B,
    mu: &B::Value,
    sigma: &B::Value,
    noise: &Tensor,
) -> Result<B::Value> {
    let mu_shape = b.with_value(mu, |t| t.shape().to_vec());
    let sigma_shape = b.with_value(sigma, |t| t.shape().to_vec());
    if mu_shape != sigma_shape {
        return Err(Error::Dimension {
            op: "reparam_sample",
            lhs: mu_shape,
            rhs: sigma_shape,
        });
    }
    if b.with_value(sigma, |s| s.data().iter().any(|&v| v < 0.0)) {
        return Err(Error::Domain {
            op: "reparam_sample",
            detail: "sigma must be non-negative".into(),
        });
    }
    let eps = b.constant(noise.clone());
    if noise.shape() == mu_shape.as_slice() {
        let scaled = b.mul(sigma, &eps)?;
        b.add(mu, &scaled)
    } else {
        // Rows of noise share the same (μ, σ) vectors.
        let scaled = b.mul_row(&eps, sigma)?;
        b.add_row(&scaled, mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn standard_normal_at_zero() {
        let b = Eager;
        let v = gaussian_log_density(
            &b,
            &Tensor::scalar(0.0),
            &Tensor::scalar(0.0),
            &Tensor::scalar(1.0),
        )
        .unwrap();
        assert!(close(v.item().unwrap(), -0.918_938_533_204_672_7, 1e-12));
    }

    #[test]
    fn x_equals_mu_leaves_normaliser() {
        let b = Eager;
        for s in [0.1, 0.5, 2.0, 7.0] {
            let v = gaussian_log_density(
                &b,
                &Tensor::scalar(0.4),
                &Tensor::scalar(0.4),
                &Tensor::scalar(s),
            )
            .unwrap()
            .item()
            .unwrap();
            assert!(close(v, -0.5 * LN_2PI - s.ln(), 1e-12));
        }
    }

    #[test]
    fn off_centre_value() {
        // −½ln(2π) − ln 2 − 1/8, evaluated independently.
        let v = gaussian_log_density(
            &Eager,
            &Tensor::scalar(1.0),
            &Tensor::scalar(0.0),
            &Tensor::scalar(2.0),
        )
        .unwrap()
        .item()
        .unwrap();
        assert!(close(v, -1.737_085_713_764_618, 1e-7));
    }

    #[test]
    fn row_broadcast_matches_full() {
        let x = Tensor::matrix(2, 2, vec![0.3, -1.0, 2.0, 0.5]);
        let mu = Tensor::vector(vec![0.1, 0.2]);
        let s = Tensor::vector(vec![0.5, 1.5]);
        let full_mu = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.1, 0.2]);
        let full_s = Tensor::matrix(2, 2, vec![0.5, 1.5, 0.5, 1.5]);
        let a = gaussian_log_density(&Eager, &x, &mu, &s).unwrap();
        let bb = gaussian_log_density(&Eager, &x, &full_mu, &full_s).unwrap();
        assert!(close(a.item().unwrap(), bb.item().unwrap(), 1e-12));
    }

    #[test]
    fn non_positive_sigma_is_domain_error() {
        let r = gaussian_log_density(
            &Eager,
            &Tensor::scalar(0.0),
            &Tensor::scalar(0.0),
            &Tensor::scalar(0.0),
        );
        assert!(matches!(r, Err(Error::Domain { .. })));
    }

    #[test]
    fn reparam_cases() {
        let mu = Tensor::vector(vec![0.3, -1.0]);
        let s = Tensor::vector(vec![0.1, 2.0]);
        let z = reparam_sample(&Eager, &mu, &s, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(z, mu);

        let n = Tensor::vector(vec![0.7, -0.2]);
        let id = reparam_sample(
            &Eager,
            &Tensor::zeros(&[2]),
            &Tensor::full(&[2], 1.0),
            &n,
        )
        .unwrap();
        assert_eq!(id, n);

        let v = reparam_sample(
            &Eager,
            &Tensor::scalar(0.3),
            &Tensor::scalar(0.1),
            &Tensor::scalar(1.5),
        )
        .unwrap();
        assert!(close(v.item().unwrap(), 0.45, 1e-15));
    }

    #[test]
    fn reparam_shape_mismatch() {
        let r = reparam_sample(
            &Eager,
            &Tensor::zeros(&[2]),
            &Tensor::zeros(&[3]),
            &Tensor::zeros(&[2]),
        );
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }
}
