//! Tensor-level Wengert tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the indices
//! of its operands. [`Tape::backward`] walks the list in reverse and
//! accumulates adjoints. Nodes that cannot reach a trainable leaf are marked
//! `needs_grad = false` and skipped, so frozen networks (constants) cost
//! nothing on the way back while still passing gradients to their inputs.
//!
//! Operands are identified by [`Var`], a copyable index into the tape. A
//! `Var` is only meaningful for the tape that produced it.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `x · wᵀ + b`
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `alpha * a + beta`
    Affine {
        a: Var,
        alpha: f64,
    },
    /// `a[i, j] * scale[j] + shift[j]`
    ColAffine {
        a: Var,
        scale: Vec<f64>,
    },
    Square(Var),
    Tanh(Var),
    Sin(Var),
    Cos(Var),
    /// Multiplication by a fixed tensor (no gradient to the mask).
    Mask {
        a: Var,
        mask: Tensor,
    },
    Sum(Var),
    Mean(Var),
    /// `[r, c] -> [r, 1]`
    RowSum(Var),
    GatherRows {
        a: Var,
        index: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    /// Affine layer `x · wᵀ + b` with `x: [batch, in]`, `w: [out, in]`,
    /// `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (batch, fan_in) = self.shape2(x);
        let (fan_out, w_in) = self.shape2(w);
        if w_in != fan_in {
            return Err(Error::Dimension(format!(
                "linear: input width {fan_in} does not match weight [{fan_out}, {w_in}]"
            )));
        }
        let mut out = vec![0.0; batch * fan_out];
        gemm(
            batch,
            fan_in,
            fan_out,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            false,
        );
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.len() != fan_out {
                return Err(Error::Dimension(format!(
                    "linear: bias length {} does not match output width {fan_out}",
                    bias.len()
                )));
            }
            for row in out.chunks_exact_mut(fan_out) {
                for (o, bv) in row.iter_mut().zip(bias.data()) {
                    *o += bv;
                }
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.grad_any(&deps);
        Ok(self.push(
            Tensor::new(vec![batch, fan_out], out)?,
            Op::Linear { x, w, b },
            ng,
        ))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.value(a)
            .zip_map(self.value(b), f)
            .map_err(|e| Error::Dimension(format!("{name}: {e}")))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        let ng = self.grad_any(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        let ng = self.grad_any(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        let ng = self.grad_any(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    /// `alpha * a + beta`, elementwise.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let v = self.value(a).map(|x| alpha * x + beta);
        let ng = self.grad_any(&[a]);
        self.push(v, Op::Affine { a, alpha }, ng)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.affine(a, alpha, 0.0)
    }

    /// Per-column `a[i, j] * scale[j] + shift[j]`.
    pub fn col_affine(&mut self, a: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let cols = self.value(a).cols();
        if scale.len() != cols || shift.len() != cols {
            return Err(Error::Dimension(format!(
                "col_affine: {cols} columns but {} scales / {} shifts",
                scale.len(),
                shift.len()
            )));
        }
        let mut v = self.value(a).clone();
        for row in v.data_mut().chunks_exact_mut(cols) {
            for ((x, s), t) in row.iter_mut().zip(scale).zip(shift) {
                *x = *x * s + t;
            }
        }
        let ng = self.grad_any(&[a]);
        Ok(self.push(
            v,
            Op::ColAffine {
                a,
                scale: scale.to_vec(),
            },
            ng,
        ))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let ng = self.grad_any(&[a]);
        self.push(v, Op::Square(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let ng = self.grad_any(&[a]);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sin);
        let ng = self.grad_any(&[a]);
        self.push(v, Op::Sin(a), ng)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::cos);
        let ng = self.grad_any(&[a]);
        self.push(v, Op::Cos(a), ng)
    }

    /// Elementwise product with a fixed tensor.
    pub fn mask(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        let v = self.value(a).zip_map(&mask, |x, m| x * m)?;
        let ng = self.grad_any(&[a]);
        Ok(self.push(v, Op::Mask { a, mask }, ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        self.mask(a, mask).expect("mask shape derived from operand")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.grad_any(&[a]);
        self.push(v, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        let ng = self.grad_any(&[a]);
        self.push(v, Op::Mean(a), ng)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let sums: Vec<f64> = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let v = Tensor::column(&sums);
        let ng = self.grad_any(&[a]);
        self.push(v, Op::RowSum(a), ng)
    }

    /// Row-wise dot product of two `[r, c]` tensors, giving `[r, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.row_sum(p))
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::Dimension(format!(
                "gather_rows: index {bad} out of {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            data.extend_from_slice(t.row_slice(i));
        }
        let v = Tensor::new(vec![index.len(), cols], data)?;
        let ng = self.grad_any(&[a]);
        Ok(self.push(
            v,
            Op::GatherRows {
                a,
                index: index.to_vec(),
            },
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(Error::Contract("concat_cols of nothing".into())),
        };
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Dimension("concat_cols: row counts differ".into()));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let v = Tensor::new(vec![rows, total], data)?;
        let ng = self.grad_any(parts);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.is_finite() {
            return Err(Error::Numeric(format!("loss is {}", lv.data()[0])));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    adj[i] = Some(g);
                }
                Op::Linear { x, w, b } => {
                    let (batch, fan_in) = self.shape2(*x);
                    let fan_out = node.value.cols();
                    if self.needs_grad(*x) {
                        let mut dx = vec![0.0; batch * fan_in];
                        gemm(
                            batch,
                            fan_out,
                            fan_in,
                            g.data(),
                            false,
                            self.value(*w).data(),
                            false,
                            &mut dx,
                            false,
                        );
                        accumulate(&mut adj, *x, Tensor::new(vec![batch, fan_in], dx)?);
                    }
                    if self.needs_grad(*w) {
                        let mut dw = vec![0.0; fan_out * fan_in];
                        gemm(
                            fan_out,
                            batch,
                            fan_in,
                            g.data(),
                            true,
                            self.value(*x).data(),
                            false,
                            &mut dw,
                            false,
                        );
                        accumulate(&mut adj, *w, Tensor::new(vec![fan_out, fan_in], dw)?);
                    }
                    if let Some(b) = b.filter(|b| self.needs_grad(*b)) {
                        let mut db = vec![0.0; fan_out];
                        for row in g.data().chunks_exact(fan_out) {
                            for (d, gv) in db.iter_mut().zip(row) {
                                *d += gv;
                            }
                        }
                        let shape = self.value(b).shape().to_vec();
                        accumulate(&mut adj, b, Tensor::new(shape, db)?);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs_grad(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.needs_grad(*b) {
                        accumulate(&mut adj, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs_grad(*b) {
                        accumulate(&mut adj, *b, g.map(|v| -v));
                    }
                    if self.needs_grad(*a) {
                        accumulate(&mut adj, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs_grad(*a) {
                        accumulate(&mut adj, *a, g.zip_map(self.value(*b), |gv, bv| gv * bv)?);
                    }
                    if self.needs_grad(*b) {
                        accumulate(&mut adj, *b, g.zip_map(self.value(*a), |gv, av| gv * av)?);
                    }
                }
                Op::Affine { a, alpha } => {
                    let alpha = *alpha;
                    accumulate(&mut adj, *a, g.map(|v| alpha * v));
                }
                Op::ColAffine { a, scale } => {
                    let mut d = g;
                    let cols = scale.len();
                    for row in d.data_mut().chunks_exact_mut(cols) {
                        for (x, s) in row.iter_mut().zip(scale) {
                            *x *= s;
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::Square(a) => {
                    accumulate(
                        &mut adj,
                        *a,
                        g.zip_map(self.value(*a), |gv, av| 2.0 * gv * av)?,
                    );
                }
                Op::Tanh(a) => {
                    accumulate(
                        &mut adj,
                        *a,
                        g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))?,
                    );
                }
                Op::Sin(a) => {
                    accumulate(
                        &mut adj,
                        *a,
                        g.zip_map(self.value(*a), |gv, x| gv * x.cos())?,
                    );
                }
                Op::Cos(a) => {
                    accumulate(
                        &mut adj,
                        *a,
                        g.zip_map(self.value(*a), |gv, x| -gv * x.sin())?,
                    );
                }
                Op::Mask { a, mask } => {
                    accumulate(&mut adj, *a, g.zip_map(mask, |gv, m| gv * m)?);
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    accumulate(&mut adj, *a, Tensor::filled(self.value(*a).shape(), gv));
                }
                Op::Mean(a) => {
                    let t = self.value(*a);
                    let gv = g.data()[0] / t.len() as f64;
                    accumulate(&mut adj, *a, Tensor::filled(t.shape(), gv));
                }
                Op::RowSum(a) => {
                    let t = self.value(*a);
                    let cols = t.cols();
                    let data: Vec<f64> = g
                        .data()
                        .iter()
                        .flat_map(|&gv| std::iter::repeat_n(gv, cols))
                        .collect();
                    accumulate(&mut adj, *a, Tensor::new(t.shape().to_vec(), data)?);
                }
                Op::GatherRows { a, index } => {
                    let t = self.value(*a);
                    let cols = t.cols();
                    let mut d = Tensor::zeros(t.shape());
                    for (k, &r) in index.iter().enumerate() {
                        let src = &g.data()[k * cols..(k + 1) * cols];
                        let dst = &mut d.data_mut()[r * cols..(r + 1) * cols];
                        for (o, s) in dst.iter_mut().zip(src) {
                            *o += s;
                        }
                    }
                    accumulate(&mut adj, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.needs_grad(p) {
                            let mut data = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                let start = r * total + offset;
                                data.extend_from_slice(&g.data()[start..start + w]);
                            }
                            accumulate(&mut adj, p, Tensor::new(vec![rows, w], data)?);
                        }
                        offset += w;
                    }
                }
            }
        }
        Ok(Gradients { adj })
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Adjoints produced by [`Tape::backward`]; only leaves keep theirs.
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to a leaf, or `None` if the loss does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adj.get(v.0).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(3.0));
        let l = tape.square(w);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[6.0]);
    }

    #[test]
    fn linear_sum_gradient_is_input_per_row() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[1.0, 2.0]));
        let w = tape.leaf(Tensor::from_rows(&[vec![0.3, -0.1], vec![2.0, 5.0]]).unwrap());
        let y = tape.linear(x, w, None).unwrap();
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(f64::NAN));
        let l = tape.square(w);
        assert!(matches!(tape.backward(l), Err(Error::Numeric(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let w = tape.leaf(Tensor::scalar(3.0));
        let p = tape.mul(c, w).unwrap();
        let g = tape.backward(p).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[2.0]);
    }

    #[test]
    fn gather_and_concat_route_gradients() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
        let b = tape
            .leaf(Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap());
        let ga = tape.gather_rows(a, &[1, 1, 0]).unwrap();
        let c = tape.concat_cols(&[ga, b]).unwrap();
        assert_eq!(
            tape.value(c).data(),
            &[2.0, 3.0, 4.0, 2.0, 5.0, 6.0, 1.0, 7.0, 8.0]
        );
        let sq = tape.square(c);
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap();
        // d/da0 = 2*1 ; d/da1 = 2*2 + 2*2
        assert_eq!(g.get(a).unwrap().data(), &[2.0, 8.0]);
        assert_eq!(
            g.get(b).unwrap().data(),
            &[6.0, 8.0, 10.0, 12.0, 14.0, 16.0]
        );
    }
}
