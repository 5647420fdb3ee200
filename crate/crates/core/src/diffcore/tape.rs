//! Array-level Wengert tape.
//!
//! Each primitive evaluates eagerly, stores its output on the tape together
//! with whatever the reverse pass needs, and returns a [`Var`] handle.
//! [`Tape::backward`] walks the records in exact reverse order and sums every
//! contribution a node receives.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use super::array::{gemm, DenseArray, Real};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// Differentiable primitives understood by [`Tape::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// `[m, k] @ [k, n]`
    MatMul,
    /// Elementwise; the right operand may match the left's trailing shape.
    Add,
    Sub,
    ScalarMul(f64),
    ElementwiseMul,
    Tanh,
    /// Exact Gaussian-CDF gelu, `x * Phi(x)`.
    Gelu,
    Sum,
    Mean,
    Square,
    Concat { axis: usize },
    /// Row selection along the leading axis; repeated rows are allowed.
    GatherRows(Vec<usize>),
}

enum Op<T> {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Add(usize, usize, bool),
    Sub(usize, usize, bool),
    Scale(usize, T),
    Mul(usize, usize, bool),
    Tanh(usize),
    Gelu(usize, Vec<T>),
    Sum(usize),
    Mean(usize),
    Square(usize),
    Concat(Vec<usize>, usize),
    GatherRows(usize, Vec<usize>),
}

struct Node<'a, T: Real> {
    value: Cow<'a, DenseArray<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records primitive evaluations for one forward/backward pass.
///
/// Parameters can be borrowed for the tape's lifetime so that inference
/// passes do not copy weights.
pub struct Tape<'a, T: Real = f32> {
    id: u64,
    nodes: Vec<Node<'a, T>>,
}

impl<'a, T: Real> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, DenseArray<T>>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Borrowed trainable leaf.
    pub fn param(&mut self, value: &'a DenseArray<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Owned trainable leaf.
    pub fn leaf(&mut self, value: DenseArray<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn constant(&mut self, value: DenseArray<T>) -> Var {
        self.push(Cow::Owned(value), Op::Constant, false)
    }

    pub fn constant_ref(&mut self, value: &'a DenseArray<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Constant, false)
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    /// Value of a recorded variable.
    ///
    /// # Panics
    /// If `v` was produced by a different tape.
    pub fn value(&self, v: Var) -> &DenseArray<T> {
        let i = self.index(v).expect("variable from another tape");
        &self.nodes[i].value
    }

    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let idx = inputs
            .iter()
            .map(|&v| self.index(v))
            .collect::<Result<Vec<_>>>()?;
        let arity = |n: usize, name: &'static str| -> Result<()> {
            if idx.len() == n {
                Ok(())
            } else {
                Err(Error::shape(name, format!("expected {n} inputs, got {}", idx.len())))
            }
        };
        match prim {
            Primitive::MatMul => {
                arity(2, "matmul")?;
                self.matmul_idx(idx[0], idx[1])
            }
            Primitive::Add => {
                arity(2, "add")?;
                self.binary(idx[0], idx[1], BinKind::Add)
            }
            Primitive::Sub => {
                arity(2, "sub")?;
                self.binary(idx[0], idx[1], BinKind::Sub)
            }
            Primitive::ElementwiseMul => {
                arity(2, "mul")?;
                self.binary(idx[0], idx[1], BinKind::Mul)
            }
            Primitive::ScalarMul(s) => {
                arity(1, "scalar_mul")?;
                let s = T::lit(s);
                let out = self.nodes[idx[0]].value.data().iter().map(|&v| v * s).collect();
                self.finish_unary(idx[0], out, Op::Scale(idx[0], s), "scalar_mul")
            }
            Primitive::Tanh => {
                arity(1, "tanh")?;
                let out = self.nodes[idx[0]].value.data().iter().map(|v| v.tanh()).collect();
                self.finish_unary(idx[0], out, Op::Tanh(idx[0]), "tanh")
            }
            Primitive::Gelu => {
                arity(1, "gelu")?;
                let x = self.nodes[idx[0]].value.data();
                let half = T::lit(0.5);
                let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
                let cdf: Vec<T> = x
                    .iter()
                    .map(|&v| half * (T::one() + (v * inv_sqrt2).erf()))
                    .collect();
                let out = x.iter().zip(&cdf).map(|(&v, &c)| v * c).collect();
                self.finish_unary(idx[0], out, Op::Gelu(idx[0], cdf), "gelu")
            }
            Primitive::Square => {
                arity(1, "square")?;
                let out = self.nodes[idx[0]].value.data().iter().map(|&v| v * v).collect();
                self.finish_unary(idx[0], out, Op::Square(idx[0]), "square")
            }
            Primitive::Sum | Primitive::Mean => {
                arity(1, "reduce")?;
                let x = self.nodes[idx[0]].value.data();
                let s: T = x.iter().copied().sum();
                let (v, op, name) = if prim == Primitive::Sum {
                    (s, Op::Sum(idx[0]), "sum")
                } else {
                    (s / T::lit(x.len() as f64), Op::Mean(idx[0]), "mean")
                };
                let grad = self.nodes[idx[0]].needs_grad;
                self.finish(vec![1], vec![v], op, grad, name)
            }
            Primitive::Concat { axis } => self.concat_idx(&idx, axis),
            Primitive::GatherRows(rows) => {
                arity(1, "gather_rows")?;
                let value = self.nodes[idx[0]].value.select_rows(&rows)?;
                let grad = self.nodes[idx[0]].needs_grad;
                Ok(self.push(Cow::Owned(value), Op::GatherRows(idx[0], rows), grad))
            }
        }
    }

    fn finish(
        &mut self,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        needs_grad: bool,
        name: &'static str,
    ) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let value = DenseArray::from_parts_unchecked(shape, data);
        Ok(self.push(Cow::Owned(value), op, needs_grad))
    }

    fn finish_unary(&mut self, input: usize, data: Vec<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        let shape = self.nodes[input].value.shape().to_vec();
        let grad = self.nodes[input].needs_grad;
        self.finish(shape, data, op, grad, name)
    }

    fn matmul_idx(&mut self, ia: usize, ib: usize) -> Result<Var> {
        let (a, b) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} @ {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), &mut out, false);
        let grad = self.nodes[ia].needs_grad || self.nodes[ib].needs_grad;
        self.finish(vec![m, n], out, Op::MatMul(ia, ib), grad, "matmul")
    }

    fn binary(&mut self, ia: usize, ib: usize, kind: BinKind) -> Result<Var> {
        let (a, b) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let broadcast = if a.shape() == b.shape() {
            false
        } else if a.shape().len() >= 2 && &a.shape()[1..] == b.shape() {
            true
        } else {
            return Err(Error::shape(
                kind.name(),
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        };
        let bd = b.data();
        let w = bd.len();
        let f = kind.func::<T>();
        let out: Vec<T> = if broadcast {
            a.data()
                .chunks_exact(w.max(1))
                .flat_map(|row| row.iter().zip(bd).map(|(&x, &y)| f(x, y)))
                .collect()
        } else {
            a.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
        };
        let shape = a.shape().to_vec();
        let grad = self.nodes[ia].needs_grad || self.nodes[ib].needs_grad;
        let op = match kind {
            BinKind::Add => Op::Add(ia, ib, broadcast),
            BinKind::Sub => Op::Sub(ia, ib, broadcast),
            BinKind::Mul => Op::Mul(ia, ib, broadcast),
        };
        self.finish(shape, out, op, grad, kind.name())
    }

    fn concat_idx(&mut self, idx: &[usize], axis: usize) -> Result<Var> {
        let first = idx
            .first()
            .map(|&i| self.nodes[i].value.shape().to_vec())
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} for rank {}", first.len())));
        }
        let mut total = 0;
        for &i in idx {
            let s = self.nodes[i].value.shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in idx {
                let v = &self.nodes[i].value;
                let block = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let grad = idx.iter().any(|&i| self.nodes[i].needs_grad);
        self.finish(shape, out, Op::Concat(idx.to_vec(), axis), grad, "concat")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Primitive::ScalarMul(s), &[a])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::ElementwiseMul, &[a, b])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Gelu, &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Square, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Concat { axis }, parts)
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::GatherRows(rows), &[a])
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every trainable leaf gets `d loss / d leaf`; leaves the loss does not
    /// depend on report zeros through [`Gradients::wrt`].
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let li = self.index(loss)?;
        let lv = &self.nodes[li].value;
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(vec![T::one()]);

        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let leaves = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| match (&n.op, g) {
                (Op::Leaf, Some(g)) => Some(DenseArray::from_parts_unchecked(n.value.shape().to_vec(), g)),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads: leaves,
            shapes,
        })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |j: usize| self.nodes[j].value.data();
        let wants = |j: usize| self.nodes[j].needs_grad;
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[*a].value.shape(), self.nodes[*b].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if wants(*a) {
                    // dA = G @ B^T
                    let mut d = vec![T::zero(); m * k];
                    gemm(m, n, k, g, (n, 1), val(*b), (1, n), &mut d, false);
                    accumulate(grads, *a, d);
                }
                if wants(*b) {
                    // dB = A^T @ G
                    let mut d = vec![T::zero(); k * n];
                    gemm(k, m, n, val(*a), (1, k), g, (n, 1), &mut d, false);
                    accumulate(grads, *b, d);
                }
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let neg = matches!(self.nodes[i].op, Op::Sub(..));
                if wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if wants(*b) {
                    let mut d = if *bc {
                        row_sum(g, self.nodes[*b].value.len())
                    } else {
                        g.to_vec()
                    };
                    if neg {
                        d.iter_mut().for_each(|v| *v = -*v);
                    }
                    accumulate(grads, *b, d);
                }
            }
            Op::Mul(a, b, bc) => {
                let (av, bv) = (val(*a), val(*b));
                let w = bv.len();
                if wants(*a) {
                    let d = if *bc {
                        g.chunks_exact(w.max(1))
                            .flat_map(|row| row.iter().zip(bv).map(|(&gv, &y)| gv * y))
                            .collect()
                    } else {
                        g.iter().zip(bv).map(|(&gv, &y)| gv * y).collect()
                    };
                    accumulate(grads, *a, d);
                }
                if wants(*b) {
                    let prod: Vec<T> = g.iter().zip(av).map(|(&gv, &x)| gv * x).collect();
                    let d = if *bc { row_sum(&prod, w) } else { prod };
                    accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    accumulate(grads, *a, g.iter().map(|&v| v * *s).collect());
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    let y = self.nodes[i].value.data();
                    let d = g.iter().zip(y).map(|(&gv, &yv)| gv * (T::one() - yv * yv)).collect();
                    accumulate(grads, *a, d);
                }
            }
            Op::Gelu(a, cdf) => {
                if wants(*a) {
                    let inv_sqrt_2pi = T::lit(0.398_942_280_401_432_7);
                    let half = T::lit(0.5);
                    let d = g
                        .iter()
                        .zip(val(*a))
                        .zip(cdf)
                        .map(|((&gv, &x), &c)| gv * (c + x * inv_sqrt_2pi * (-half * x * x).exp()))
                        .collect();
                    accumulate(grads, *a, d);
                }
            }
            Op::Square(a) => {
                if wants(*a) {
                    let two = T::lit(2.0);
                    let d = g.iter().zip(val(*a)).map(|(&gv, &x)| two * x * gv).collect();
                    accumulate(grads, *a, d);
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                if wants(*a) {
                    let n = self.nodes[*a].value.len();
                    let v = if matches!(self.nodes[i].op, Op::Mean(_)) {
                        g[0] / T::lit(n as f64)
                    } else {
                        g[0]
                    };
                    accumulate(grads, *a, vec![v; n]);
                }
            }
            Op::Concat(parts, axis) => {
                let shape = self.nodes[i].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut pieces: Vec<Vec<T>> = parts
                    .iter()
                    .map(|&p| Vec::with_capacity(self.nodes[p].value.len()))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (k, &p) in parts.iter().enumerate() {
                        let block = self.nodes[p].value.shape()[*axis] * inner;
                        pieces[k].extend_from_slice(&g[off..off + block]);
                        off += block;
                    }
                }
                for (p, d) in parts.iter().zip(pieces) {
                    if wants(*p) {
                        accumulate(grads, *p, d);
                    }
                }
            }
            Op::GatherRows(a, rows) => {
                if wants(*a) {
                    let src = &self.nodes[*a].value;
                    let w = src.row_len();
                    let mut d = vec![T::zero(); src.len()];
                    for (k, &r) in rows.iter().enumerate() {
                        for (dst, &gv) in d[r * w..(r + 1) * w].iter_mut().zip(&g[k * w..(k + 1) * w]) {
                            *dst = *dst + gv;
                        }
                    }
                    accumulate(grads, *a, d);
                }
            }
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], i: usize, d: Vec<T>) {
    match &mut grads[i] {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, v)| *a = *a + v),
        slot @ None => *slot = Some(d),
    }
}

fn row_sum<T: Real>(g: &[T], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); width];
    for row in g.chunks(width) {
        out.iter_mut().zip(row).for_each(|(o, &v)| *o = *o + v);
    }
    out
}

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

impl BinKind {
    fn name(self) -> &'static str {
        match self {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
        }
    }

    fn func<T: Real>(self) -> fn(T, T) -> T {
        match self {
            BinKind::Add => |a, b| a + b,
            BinKind::Sub => |a, b| a - b,
            BinKind::Mul => |a, b| a * b,
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T: Real = f32> {
    tape: u64,
    grads: Vec<Option<DenseArray<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf, or `None` if the loss did not reach it.
    pub fn get(&self, v: Var) -> Option<&DenseArray<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Gradient of a leaf, with zeros for leaves the loss does not touch.
    pub fn wrt(&self, v: Var) -> Result<DenseArray<T>> {
        if v.tape != self.tape || v.index >= self.shapes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(self
            .get(v)
            .cloned()
            .unwrap_or_else(|| DenseArray::zeros(&self.shapes[v.index])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(shape: &[usize], data: &[f64]) -> DenseArray<f64> {
        DenseArray::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_example() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(arr(&[2, 2], &[1., 2., 3., 4.]));
        let b = tape.constant(arr(&[2, 1], &[1., 1.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3., 7.]);
        assert_eq!(tape.value(c).shape(), &[2, 1]);
    }

    #[test]
    fn add_zero_is_identity_and_gelu_fixes_origin() {
        let mut tape = Tape::<f64>::new();
        let x = arr(&[3], &[0.5, -1.0, 2.0]);
        let a = tape.constant(x.clone());
        let z = tape.constant(DenseArray::zeros(&[3]));
        let s = tape.add(a, z).unwrap();
        assert!(tape.value(s).bitwise_eq(&x));
        let o = tape.constant(arr(&[1], &[0.0]));
        let g = tape.gelu(o).unwrap();
        assert_eq!(tape.value(g).data(), &[0.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(arr(&[1], &[3.0]));
        let sq = tape.square(x).unwrap();
        let l = tape.sum(sq).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(arr(&[4], &[1., 2., 3., 4.]));
        let l = tape.mean(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn reuse_accumulates_contributions() {
        // f = sum(x * x + x) => df/dx = 2x + 1
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(arr(&[2], &[1.0, -2.0]));
        let xx = tape.mul(x, x).unwrap();
        let s = tape.add(xx, x).unwrap();
        let l = tape.sum(s).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, -3.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(arr(&[2], &[1.0, 2.0]));
        let unused = tape.leaf(arr(&[3], &[1.0, 2.0, 3.0]));
        let l = tape.sum(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(arr(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
        let mut other = Tape::<f64>::new();
        let y = other.leaf(arr(&[1], &[1.0]));
        assert!(matches!(tape.backward(y), Err(Error::ForeignVar)));
    }

    #[test]
    fn shape_mismatch_and_non_finite_are_errors() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(arr(&[2, 3], &[1.; 6]));
        let b = tape.constant(arr(&[2, 3], &[1.; 6]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { .. })));
        let c = tape.constant(arr(&[2], &[1.; 2]));
        assert!(matches!(tape.add(a, c), Err(Error::Shape { .. })));
        let big = tape.constant(arr(&[1], &[1e100]));
        let sq = tape.square(big).unwrap();
        assert!(matches!(tape.square(sq), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn row_broadcast_add_sums_bias_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(arr(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let b = tape.leaf(arr(&[2], &[0.5, -0.5]));
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, 1.5, 3.5, 3.5, 5.5, 5.5]);
        let l = tape.sum(y).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn concat_and_gather_route_gradients() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(arr(&[2, 1], &[1., 2.]));
        let b = tape.leaf(arr(&[2, 2], &[3., 4., 5., 6.]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1., 3., 4., 2., 5., 6.]);
        let r = tape.gather_rows(c, vec![1, 1, 0]).unwrap();
        assert_eq!(tape.value(r).shape(), &[3, 3]);
        let l = tape.sum(r).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1., 2.]);
        assert_eq!(g.get(b).unwrap().data(), &[1., 1., 2., 2.]);
    }
}
