//! Dense row-major `f64` arrays and the forward kernels shared by the eager
//! and taped backends.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(rows, cols)` view: a vector `[n]` is one row, a scalar is `1×1`.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.data.len() / cols.max(1), cols)
            }
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise binary op with scalar-vs-tensor broadcasting only.
    pub fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            Ok(Tensor {
                shape: self.shape.clone(),
                data,
            })
        } else if other.is_scalar() {
            let b = other.data[0];
            Ok(self.map(|a| f(a, b)))
        } else if self.is_scalar() {
            let a = self.data[0];
            Ok(other.map(|b| f(a, b)))
        } else {
            Err(Error::Dimension {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            })
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if other.data.contains(&0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.zip_with(other, "div", |a, b| a / b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|a| a * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(|a| a + c)
    }

    pub fn sum(&self) -> Tensor {
        Tensor::scalar(self.data.iter().sum())
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.data.is_empty() {
            return Err(Error::contract("mean of empty tensor"));
        }
        Ok(Tensor::scalar(
            self.data.iter().sum::<f64>() / self.data.len() as f64,
        ))
    }

    pub fn tanh(&self) -> Tensor {
        self.map(math::tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|a| if a > 0.0 { a } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(math::sigmoid)
    }

    pub fn exp(&self) -> Tensor {
        self.map(math::exp)
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(v) = self.data.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("log of non-positive value {v}"),
            });
        }
        Ok(self.map(math::ln))
    }

    pub fn square(&self) -> Tensor {
        self.map(|a| a * a)
    }

    /// Matrix product of 2-D operands (vectors are treated as single rows).
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (n, k) = self.dims2();
        let (k2, m) = other.dims2();
        if self.shape.len() > 2 || other.shape.len() > 2 || k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = self.dims2();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }

    fn row_op(
        &self,
        row: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (r, c) = self.dims2();
        if row.numel() != c || self.shape.len() > 2 {
            return Err(Error::Dimension {
                op,
                lhs: self.shape.clone(),
                rhs: row.shape.clone(),
            });
        }
        let mut data = self.data.clone();
        for i in 0..r {
            for (v, &b) in data[i * c..(i + 1) * c].iter_mut().zip(&row.data) {
                *v = f(*v, b);
            }
        }
        Ok(Tensor {
            shape: vec![r, c],
            data,
        })
    }

    /// Adds `row` (length = number of columns) to every row.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        self.row_op(row, "add_row", |a, b| a + b)
    }

    /// Multiplies every row elementwise by `row`.
    pub fn mul_row(&self, row: &Tensor) -> Result<Tensor> {
        self.row_op(row, "mul_row", |a, b| a * b)
    }

    /// Column sums of a 2-D tensor, as a vector.
    pub fn sum_rows(&self) -> Tensor {
        let (r, c) = self.dims2();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(&self.data[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        Tensor::vector(out)
    }

    /// Per-row matrix–vector product. `g` is `[n, p·m]`, each row holding a
    /// row-major `p×m` matrix; `w` is `[n, m]`. Returns `[n, p]`.
    pub fn rowwise_matvec(&self, w: &Tensor) -> Result<Tensor> {
        let (n, pm) = self.dims2();
        let (n2, m) = w.dims2();
        if n != n2 || m == 0 || pm % m != 0 {
            return Err(Error::Dimension {
                op: "rowwise_matvec",
                lhs: self.shape.clone(),
                rhs: w.shape.clone(),
            });
        }
        let p = pm / m;
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let wi = &w.data[i * m..(i + 1) * m];
            for r in 0..p {
                let gi = &self.data[i * pm + r * m..i * pm + (r + 1) * m];
                out[i * p + r] = gi.iter().zip(wi).map(|(a, b)| a * b).sum();
            }
        }
        Ok(Tensor {
            shape: vec![n, p],
            data: out,
        })
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = self.dims2();
        if start + len > c {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: self.shape.clone(),
                rhs: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + start + len]);
        }
        Ok(Tensor {
            shape: vec![r, len],
            data,
        })
    }

    /// Rows of a 2-D tensor picked by index (repeats allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims2();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::contract(format!("row {i} out of range {r}")));
            }
            data.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        Ok(Tensor {
            shape: vec![idx.len(), c],
            data,
        })
    }
}
