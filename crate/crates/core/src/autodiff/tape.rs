use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::sync::atomic::{AtomicU64, Ordering};

use super::Backend;
use crate::{Error, Result, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf { param: bool },
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sum(usize),
    Mean(usize),
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Reshape(usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    RowwiseMatvec(usize, usize),
    SliceCols(usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of primitive operations. Nodes only ever reference
/// earlier nodes, so the insertion order is a topological order.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl core::fmt::Debug for Tape {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("len", &self.len())
            .finish()
    }
}

/// Gradients of a scalar root with respect to the parameters that reach it.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    tape: u64,
    grads: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(&v.idx)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self.id,
            idx: nodes.len() - 1,
        }
    }

    fn check(&self, v: &Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::contract(format!(
                "value from tape {} used on tape {}",
                v.tape, self.id
            )));
        }
        Ok(v.idx)
    }

    fn unary(&self, a: &Var, f: impl FnOnce(&Tensor) -> Result<Tensor>, op: impl FnOnce(usize) -> Op) -> Result<Var> {
        let ia = self.check(a)?;
        let value = f(&self.nodes.borrow()[ia].value)?;
        Ok(self.push(value, op(ia)))
    }

    fn binary(
        &self,
        a: &Var,
        b: &Var,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[ia].value, &nodes[ib].value)?
        };
        Ok(self.push(value, op(ia, ib)))
    }

    /// Reverse sweep from a scalar `root`, visiting each node once.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let r = self.check(&root)?;
        let nodes = self.nodes.borrow();
        if !nodes[r].value.is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                nodes[r].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; r + 1];
        grads[r] = Some(Tensor::full(nodes[r].value.shape(), 1.0));
        let mut out = BTreeMap::new();

        for i in (0..=r).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match node.op {
                Op::Leaf { param } => {
                    if param {
                        out.insert(i, g);
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a].value, &nodes[b].value);
                    let ga = g.matmul(&vb.transpose())?;
                    let gb = va.transpose().matmul(&g)?;
                    acc(&mut grads, a, ga.reshape(va.shape())?)?;
                    acc(&mut grads, b, gb.reshape(vb.shape())?)?;
                }
                Op::Add(a, b) => {
                    acc(&mut grads, a, reduce_to(&g, &nodes[a].value)?)?;
                    acc(&mut grads, b, reduce_to(&g, &nodes[b].value)?)?;
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, a, reduce_to(&g, &nodes[a].value)?)?;
                    acc(&mut grads, b, reduce_to(&g.scale(-1.0), &nodes[b].value)?)?;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a].value, &nodes[b].value);
                    acc(&mut grads, a, reduce_to(&g.mul(vb)?, va)?)?;
                    acc(&mut grads, b, reduce_to(&g.mul(va)?, vb)?)?;
                }
                Op::Div(a, b) => {
                    let (va, vb) = (&nodes[a].value, &nodes[b].value);
                    acc(&mut grads, a, reduce_to(&g.div(vb)?, va)?)?;
                    // d(a/b)/db = −a/b² = −out/b
                    let gb = g.mul(&node.value)?.div(vb)?.scale(-1.0);
                    acc(&mut grads, b, reduce_to(&gb, vb)?)?;
                }
                Op::Scale(a, c) => acc(&mut grads, a, g.scale(c))?,
                Op::AddScalar(a) => acc(&mut grads, a, g)?,
                Op::Sum(a) => {
                    let va = &nodes[a].value;
                    acc(&mut grads, a, Tensor::full(va.shape(), g.item()?))?;
                }
                Op::Mean(a) => {
                    let va = &nodes[a].value;
                    let n = va.numel() as f64;
                    acc(&mut grads, a, Tensor::full(va.shape(), g.item()? / n))?;
                }
                Op::Tanh(a) => {
                    let d = node.value.map(|y| 1.0 - y * y);
                    acc(&mut grads, a, g.mul(&d)?)?;
                }
                Op::Relu(a) => {
                    let d = nodes[a].value.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, a, g.mul(&d)?)?;
                }
                Op::Sigmoid(a) => {
                    let d = node.value.map(|y| y * (1.0 - y));
                    acc(&mut grads, a, g.mul(&d)?)?;
                }
                Op::Exp(a) => acc(&mut grads, a, g.mul(&node.value)?)?,
                Op::Log(a) => acc(&mut grads, a, g.div(&nodes[a].value)?)?,
                Op::Square(a) => {
                    let d = nodes[a].value.scale(2.0);
                    acc(&mut grads, a, g.mul(&d)?)?;
                }
                Op::Reshape(a) => {
                    let ga = g.reshape(nodes[a].value.shape())?;
                    acc(&mut grads, a, ga)?;
                }
                Op::AddRow(a, row) => {
                    let vr = &nodes[row].value;
                    acc(&mut grads, a, g.reshape(nodes[a].value.shape())?)?;
                    acc(&mut grads, row, g.sum_rows().reshape(vr.shape())?)?;
                }
                Op::MulRow(a, row) => {
                    let (va, vr) = (&nodes[a].value, &nodes[row].value);
                    let ga = g.mul_row(vr)?.reshape(va.shape())?;
                    let ya = va.reshape(g.shape())?;
                    let gr = g.mul(&ya)?.sum_rows().reshape(vr.shape())?;
                    acc(&mut grads, a, ga)?;
                    acc(&mut grads, row, gr)?;
                }
                Op::RowwiseMatvec(gm, w) => {
                    let (vg, vw) = (&nodes[gm].value, &nodes[w].value);
                    let (n, pm) = vg.dims2();
                    let m = vw.dims2().1;
                    let p = pm / m;
                    let mut dg = vec![0.0; n * pm];
                    let mut dw = vec![0.0; n * m];
                    let (gd, gv, wv) = (g.data(), vg.data(), vw.data());
                    for i in 0..n {
                        for r in 0..p {
                            let up = gd[i * p + r];
                            for j in 0..m {
                                dg[i * pm + r * m + j] += up * wv[i * m + j];
                                dw[i * m + j] += up * gv[i * pm + r * m + j];
                            }
                        }
                    }
                    acc(&mut grads, gm, Tensor::new(vg.shape().to_vec(), dg)?)?;
                    acc(&mut grads, w, Tensor::new(vw.shape().to_vec(), dw)?)?;
                }
                Op::SliceCols(a, start) => {
                    let va = &nodes[a].value;
                    let (rows, cols) = va.dims2();
                    let len = g.dims2().1;
                    let mut da = vec![0.0; rows * cols];
                    for i in 0..rows {
                        da[i * cols + start..i * cols + start + len]
                            .copy_from_slice(&g.data()[i * len..(i + 1) * len]);
                    }
                    acc(&mut grads, a, Tensor::new(va.shape().to_vec(), da)?)?;
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }
}

fn acc(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) -> Result<()> {
    match &mut grads[idx] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
    Ok(())
}

/// Undo scalar broadcasting: sums the upstream gradient when the operand was
/// a scalar stretched to a larger shape.
fn reduce_to(g: &Tensor, operand: &Tensor) -> Result<Tensor> {
    if g.shape() == operand.shape() {
        Ok(g.clone())
    } else if operand.is_scalar() {
        g.sum().reshape(operand.shape())
    } else {
        Err(Error::Dimension {
            op: "backward",
            lhs: g.shape().to_vec(),
            rhs: operand.shape().to_vec(),
        })
    }
}

impl Backend for Tape {
    type Value = Var;

    fn constant(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: false })
    }

    fn param(&self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf { param: true })
    }

    fn with_value<R>(&self, v: &Var, f: impl FnOnce(&Tensor) -> R) -> R {
        assert_eq!(v.tape, self.id, "value from a different tape");
        f(&self.nodes.borrow()[v.idx].value)
    }

    fn matmul(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.matmul(y), Op::MatMul)
    }
    fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.add(y), Op::Add)
    }
    fn sub(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.sub(y), Op::Sub)
    }
    fn mul(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.mul(y), Op::Mul)
    }
    fn div(&self, a: &Var, b: &Var) -> Result<Var> {
        self.binary(a, b, |x, y| x.div(y), Op::Div)
    }
    fn scale(&self, a: &Var, c: f64) -> Result<Var> {
        self.unary(a, |x| Ok(x.scale(c)), |i| Op::Scale(i, c))
    }
    fn add_scalar(&self, a: &Var, c: f64) -> Result<Var> {
        self.unary(a, |x| Ok(x.add_scalar(c)), Op::AddScalar)
    }
    fn sum(&self, a: &Var) -> Result<Var> {
        self.unary(a, |x| Ok(x.sum()), Op::Sum)
    }
    fn mean(&self, a: &Var) -> Result<Var> {
        self.unary(a, Tensor::mean, Op::Mean)
    }
    fn tanh(&self, a: &Var) -> Result<Var> {
        self.unary(a, |x| Ok(x.tanh()), Op::Tanh)
    }
    fn relu(&self, a: &Var) -> Result<Var> {
        self.unary(a, |x| Ok(x.relu()), Op::Relu)
    }
    fn sigmoid(&self, a: &Var) -> Result<Var> {
        self.unary(a, |x| Ok(x.sigmoid()), Op::Sigmoid)
    }
    fn exp(&self, a: &Var) -> Result<Var> {
        self.unary(a, |x| Ok(x.exp()), Op::Exp)
    }
    fn log(&self, a: &Var) -> Result<Var> {
        self.unary(a, Tensor::log, Op::Log)
    }
    fn square(&self, a: &Var) -> Result<Var> {
        self.unary(a, |x| Ok(x.square()), Op::Square)
    }
    fn reshape(&self, a: &Var, shape: &[usize]) -> Result<Var> {
        self.unary(a, |x| x.reshape(shape), Op::Reshape)
    }
    fn add_row(&self, a: &Var, row: &Var) -> Result<Var> {
        self.binary(a, row, |x, r| x.add_row(r), Op::AddRow)
    }
    fn mul_row(&self, a: &Var, row: &Var) -> Result<Var> {
        self.binary(a, row, |x, r| x.mul_row(r), Op::MulRow)
    }
    fn rowwise_matvec(&self, g: &Var, w: &Var) -> Result<Var> {
        self.binary(g, w, |x, y| x.rowwise_matvec(y), Op::RowwiseMatvec)
    }
    fn slice_cols(&self, a: &Var, start: usize, len: usize) -> Result<Var> {
        self.unary(a, |x| x.slice_cols(start, len), |i| Op::SliceCols(i, start))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_root_has_no_gradients() {
        let t = Tape::new();
        let c = t.constant(Tensor::scalar(3.0));
        assert!(t.backward(c).unwrap().is_empty());
    }

    #[test]
    fn square_at_three() {
        let t = Tape::new();
        let p = t.param(&Tensor::scalar(3.0));
        let y = t.square(&p).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(p).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn sum_of_squares() {
        let t = Tape::new();
        let x = t.param(&Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = t.sum(&t.square(&x).unwrap()).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn reuse_accumulates() {
        let t = Tape::new();
        let x = t.param(&Tensor::scalar(1.7));
        let xx = t.mul(&x, &x).unwrap();
        let g1 = t.backward(xx).unwrap().get(x).unwrap().item().unwrap();
        let sq = t.square(&x).unwrap();
        let g2 = t.backward(sq).unwrap().get(x).unwrap().item().unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g1, 3.4);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let t = Tape::new();
        let x = t.param(&Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn foreign_var_rejected() {
        let a = Tape::new();
        let b = Tape::new();
        let x = a.param(&Tensor::scalar(1.0));
        assert!(matches!(b.exp(&x), Err(Error::Contract(_))));
    }
}
