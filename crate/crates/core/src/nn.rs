//! Fully connected networks whose parameters live in an external flat list.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::Backend;
use crate::rng::{self, Rng};
use crate::{math, Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl core::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::contract(format!("unknown activation {other:?}"))),
        }
    }
}

impl core::fmt::Display for Activation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

/// Where an MLP's weights sit in the model's parameter list, plus its
/// architecture. Layer `l` owns `params[first + 2l]` (weight, `[in, out]`)
/// and `params[first + 2l + 1]` (bias, `[out]`). The last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub first: usize,
    pub widths: Vec<usize>,
    pub hidden: Activation,
}

impl Mlp {
    pub fn new(first: usize, widths: Vec<usize>, hidden: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::contract(format!("invalid MLP widths {widths:?}")));
        }
        Ok(Mlp {
            first,
            widths,
            hidden,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        2 * self.n_layers()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Glorot-normal weights, zero biases.
    pub fn init(&self, rng: &mut Rng) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let std = math::sqrt(2.0 / (fan_in + fan_out) as f64);
            let w = rng::normals(rng, fan_in * fan_out)
                .into_iter()
                .map(|v| v * std)
                .collect();
            out.push(Tensor::matrix(fan_in, fan_out, w));
            out.push(Tensor::zeros(&[fan_out]));
        }
        out
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_params());
        for l in 0..self.n_layers() {
            names.push(format!("{prefix}.{l}.weight"));
            names.push(format!("{prefix}.{l}.bias"));
        }
        names
    }

    pub fn check_shapes(&self, params: &[Tensor]) -> Result<()> {
        for l in 0..self.n_layers() {
            let w = &params[self.first + 2 * l];
            let b = &params[self.first + 2 * l + 1];
            let want_w = [self.widths[l], self.widths[l + 1]];
            if w.shape() != want_w || b.shape() != [self.widths[l + 1]] {
                return Err(Error::Dimension {
                    op: "mlp",
                    lhs: want_w.to_vec(),
                    rhs: w.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// `x` is `[rows, in]`; returns `[rows, out]`.
    pub fn forward<B: Backend>(&self, b: &B, params: &[B::Value], x: &B::Value) -> Result<B::Value> {
        let mut h = x.clone();
        for l in 0..self.n_layers() {
            let w = &params[self.first + 2 * l];
            let bias = &params[self.first + 2 * l + 1];
            h = b.add_row(&b.matmul(&h, w)?, bias)?;
            if l + 1 < self.n_layers() {
                h = match self.hidden {
                    Activation::Tanh => b.tanh(&h)?,
                    Activation::Relu => b.relu(&h)?,
                    Activation::Identity => h,
                };
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Eager;
    use alloc::vec;

    #[test]
    fn zero_weights_give_bias() {
        let mlp = Mlp::new(0, vec![3, 4, 2], Activation::Tanh).unwrap();
        let params = vec![
            Tensor::zeros(&[3, 4]),
            Tensor::zeros(&[4]),
            Tensor::zeros(&[4, 2]),
            Tensor::vector(vec![0.5, -1.0]),
        ];
        mlp.check_shapes(&params).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = mlp.forward(&Eager, &params, &x).unwrap();
        assert_eq!(y.data(), &[0.5, -1.0, 0.5, -1.0]);
    }

    #[test]
    fn init_is_seeded() {
        let mlp = Mlp::new(0, vec![2, 5, 1], Activation::Tanh).unwrap();
        let a = mlp.init(&mut rng::stream(1, 0));
        let b = mlp.init(&mut rng::stream(1, 0));
        assert_eq!(a, b);
        mlp.check_shapes(&a).unwrap();
    }
}
