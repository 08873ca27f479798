//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each call appends a
//! node holding the computed value and the primitive that produced it;
//! [`Tape::backward`] walks the nodes in reverse creation order, so a node's
//! gradient only ever depends on operations recorded after it.

use crate::error::{Result, TensorError};
use crate::nn::{self, Conv1dGeom, LayerNormCache};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulConst(Var, Tensor<T>),
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
    },
    BatchTranspose(Var),
    Transpose(Var),
    Relu(Var),
    Sqrt(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        cache: LayerNormCache<T>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv1dGeom,
    },
    AvgPool1d {
        x: Var,
        window: usize,
        stride: usize,
    },
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    Concat(Vec<Var>),
    SelectCols(Var, Vec<usize>),
    StackRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by one reverse sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` when no path from `v` reached the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v` shaped like `like`, zeros when unreached.
    pub fn or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Copies `v` into a fresh constant, cutting every gradient path through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.derived(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.derived(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.derived(y, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), "div", |x, y| x / y)?;
        Ok(self.derived(y, Op::Div(a, b), &[a, b]))
    }

    /// `m + v` with `v` broadcast over the rows of `m`.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (rows, cols) = self.value(m).dims2("add_row")?;
        let bias = self.value(v);
        if bias.len() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                dim: "cols",
                expected: cols,
                got: bias.len(),
            });
        }
        let mut y = self.value(m).clone();
        for r in 0..rows {
            for (o, &b) in y.data_mut()[r * cols..(r + 1) * cols]
                .iter_mut()
                .zip(bias.data())
            {
                *o += b;
            }
        }
        Ok(self.derived(y, Op::AddRow(m, v), &[m, v]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let y = self.value(a).scale(s);
        self.derived(y, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let y = self.value(a).map(|v| v + s);
        self.derived(y, Op::AddScalar(a), &[a])
    }

    /// Elementwise product with a constant tensor (masks, dropout, weights).
    pub fn mul_const(&mut self, a: Var, c: Tensor<T>) -> Result<Var> {
        let y = self.value(a).zip_map(&c, "mul_const", |x, y| x * y)?;
        Ok(self.derived(y, Op::MulConst(a, c), &[a]))
    }

    /// Adds a constant tensor; gradient passes through unchanged.
    pub fn add_const(&mut self, a: Var, c: &Tensor<T>) -> Result<Var> {
        let y = self.value(a).zip_map(c, "add_const", |x, y| x + y)?;
        Ok(self.derived(y, Op::AddScalar(a), &[a]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).matmul(self.value(b))?;
        Ok(self.derived(y, Op::MatMul(a, b), &[a, b]))
    }

    /// `op(a[i]) · op(b[i])` for every leading index `i`; see
    /// [`nn::batch_matmul`].
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let y = nn::batch_matmul(self.value(a), self.value(b), trans_a, trans_b)?;
        Ok(self.derived(
            y,
            Op::BatchMatMul {
                a,
                b,
                trans_a,
                trans_b,
            },
            &[a, b],
        ))
    }

    /// `[batch × m × n] → [batch × n × m]`.
    pub fn batch_transpose(&mut self, a: Var) -> Result<Var> {
        let y = nn::batch_transpose(self.value(a))?;
        Ok(self.derived(y, Op::BatchTranspose(a), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).transpose()?;
        Ok(self.derived(y, Op::Transpose(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|v| v.max(T::zero()));
        self.derived(y, Op::Relu(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let y = self.value(a).map(T::sqrt);
        self.derived(y, Op::Sqrt(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same shape")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let y = nn::softmax_rows(self.value(a))?;
        Ok(self.derived(y, Op::SoftmaxRows(a), &[a]))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let y = nn::log_softmax_rows(self.value(a))?;
        Ok(self.derived(y, Op::LogSoftmaxRows(a), &[a]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (y, cache) = nn::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.derived(
            y,
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            },
            &[x, gain, bias],
        ))
    }

    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let bias = b.map(|b| self.value(b));
        let geom = Conv1dGeom::check(self.value(x), self.value(w), bias, stride, padding)?;
        let y = nn::conv1d(self.value(x), self.value(w), bias, stride, padding)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(y, Op::Conv1d { x, w, b, geom }, &inputs))
    }

    pub fn avg_pool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let y = nn::avg_pool1d(self.value(x), window, stride)?;
        Ok(self.derived(y, Op::AvgPool1d { x, window, stride }, &[x]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let y = Tensor::scalar(self.value(a).sum());
        self.derived(y, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let y = Tensor::scalar(t.sum() / T::lit(t.len() as f64));
        self.derived(y, Op::Mean(a), &[a])
    }

    /// Column sums of a matrix: `[n × m] → [m]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let y = column_sums(self.value(a))?;
        Ok(self.derived(y, Op::SumRows(a), &[a]))
    }

    /// Column means of a matrix: `[n × m] → [m]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).dims2("mean_rows")?.0;
        let y = column_sums(self.value(a))?.scale(T::one() / T::lit(n as f64));
        Ok(self.derived(y, Op::MeanRows(a), &[a]))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).dims2("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_cols")?;
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    dim: "rows",
                    expected: rows,
                    got: r,
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let y = Tensor::new([rows, total], out)?;
        Ok(self.derived(y, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Concatenation of flat vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 1 {
                return Err(TensorError::Rank {
                    op: "concat",
                    expected: 1,
                    got: t.shape().to_vec(),
                });
            }
            out.extend_from_slice(t.data());
        }
        let n = out.len();
        let y = Tensor::new([n], out)?;
        Ok(self.derived(y, Op::Concat(parts.to_vec()), parts))
    }

    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let (rows, width) = self.value(a).dims2("select_cols")?;
        if let Some(&bad) = cols.iter().find(|&&c| c >= width) {
            return Err(TensorError::ShapeMismatch {
                op: "select_cols",
                dim: "column index",
                expected: width,
                got: bad,
            });
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(rows * cols.len());
        for r in 0..rows {
            out.extend(cols.iter().map(|&c| src.at2(r, c)));
        }
        let y = Tensor::new([rows, cols.len()], out)?;
        Ok(self.derived(y, Op::SelectCols(a, cols.to_vec()), &[a]))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let width = self.value(rows[0]).len();
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            let t = self.value(r);
            if t.len() != width {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    dim: "width",
                    expected: width,
                    got: t.len(),
                });
            }
            out.extend_from_slice(t.data());
        }
        let y = Tensor::new([rows.len(), width], out)?;
        Ok(self.derived(y, Op::StackRows(rows.to_vec()), rows))
    }

    /// Picks `m[i, idx[i]]` for every row: `[n × c] → [n]`.
    pub fn gather(&mut self, m: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(m).dims2("gather")?;
        if idx.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "gather",
                dim: "rows",
                expected: rows,
                got: idx.len(),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&c| c >= cols) {
            return Err(TensorError::ShapeMismatch {
                op: "gather",
                dim: "class index",
                expected: cols,
                got: bad,
            });
        }
        let src = self.value(m);
        let y = Tensor::new([rows], idx.iter().enumerate().map(|(r, &c)| src.at2(r, c)).collect())?;
        Ok(self.derived(y, Op::Gather(m, idx.to_vec()), &[m]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(a).reshape(shape.to_vec())?;
        Ok(self.derived(y, Op::Reshape(a), &[a]))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// The tape is not modified, so calling this twice re-derives identical
    /// gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lt.shape().to_vec(), T::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, delta: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(val(*b), "mul", |x, y| x * y).expect("shape");
                let gb = g.zip_map(val(*a), "mul", |x, y| x * y).expect("shape");
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                let ga = g.zip_map(bv, "div", |x, y| x / y).expect("shape");
                let q = node.value.zip_map(bv, "div", |y, b| y / b).expect("shape");
                let gb = g.zip_map(&q, "div", |x, q| -x * q).expect("shape");
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::AddRow(m, v) => {
                acc(*m, g.clone());
                let shape = val(*v).shape().to_vec();
                let cs = column_sums(g).expect("rank 2").reshape(shape).expect("len");
                acc(*v, cs);
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MulConst(a, c) => acc(*a, g.zip_map(c, "mul", |x, y| x * y).expect("shape")),
            Op::MatMul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    acc(*a, g.matmul_t(val(*b)).expect("shape"));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, val(*a).t_matmul(g).expect("shape"));
                }
            }
            Op::BatchMatMul {
                a,
                b,
                trans_a,
                trans_b,
            } => {
                let (ta, tb) = (*trans_a, *trans_b);
                if self.nodes[a.0].requires_grad {
                    let da = if ta {
                        nn::batch_matmul(val(*b), g, tb, true)
                    } else {
                        nn::batch_matmul(g, val(*b), false, !tb)
                    };
                    acc(*a, da.expect("shape"));
                }
                if self.nodes[b.0].requires_grad {
                    let db = if tb {
                        nn::batch_matmul(g, val(*a), true, ta)
                    } else {
                        nn::batch_matmul(val(*a), g, !ta, false)
                    };
                    acc(*b, db.expect("shape"));
                }
            }
            Op::BatchTranspose(a) => acc(*a, nn::batch_transpose(g).expect("rank 3")),
            Op::Transpose(a) => acc(*a, g.transpose().expect("rank 2")),
            Op::Relu(a) => {
                let ga = g
                    .zip_map(val(*a), "relu", |x, y| if y > T::zero() { x } else { T::zero() })
                    .expect("shape");
                acc(*a, ga);
            }
            Op::Sqrt(a) => {
                let two = T::lit(2.0);
                let ga = g
                    .zip_map(&node.value, "sqrt", |x, y| x / (two * y))
                    .expect("shape");
                acc(*a, ga);
            }
            Op::SoftmaxRows(a) => acc(*a, nn::softmax_rows_backward(&node.value, g)),
            Op::LogSoftmaxRows(a) => acc(*a, nn::log_softmax_rows_backward(&node.value, g)),
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            } => {
                let (dx, dg, db) = nn::layer_norm_backward(cache, val(*gain), g);
                acc(*x, dx);
                acc(*gain, dg);
                acc(*bias, db);
            }
            Op::Conv1d { x, w, b, geom } => {
                let (dx, dw, db) = nn::conv1d_backward(val(*x), val(*w), geom, g);
                acc(*x, dx);
                acc(*w, dw);
                if let Some(b) = b {
                    let shape = val(*b).shape().to_vec();
                    acc(*b, db.reshape(shape).expect("bias"));
                }
            }
            Op::AvgPool1d { x, window, stride } => {
                acc(*x, nn::avg_pool1d_backward(val(*x).shape(), *window, *stride, g));
            }
            Op::Sum(a) => {
                let shape = val(*a).shape().to_vec();
                acc(*a, Tensor::full(shape, g.item()));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let v = g.item() / T::lit(t.len() as f64);
                acc(*a, Tensor::full(t.shape().to_vec(), v));
            }
            Op::SumRows(a) | Op::MeanRows(a) => {
                let (rows, cols) = val(*a).dims2("sum_rows").expect("rank 2");
                let s = if matches!(node.op, Op::MeanRows(_)) {
                    T::one() / T::lit(rows as f64)
                } else {
                    T::one()
                };
                let data = (0..rows * cols).map(|i| g.data()[i % cols] * s).collect();
                acc(*a, Tensor::new([rows, cols], data).expect("shape"));
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = g.dims2("concat_cols").expect("rank 2");
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).shape()[1];
                    let mut out = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        out.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    acc(p, Tensor::new([rows, w], out).expect("shape"));
                    offset += w;
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    acc(p, Tensor::new([n], g.data()[offset..offset + n].to_vec()).expect("shape"));
                    offset += n;
                }
            }
            Op::SelectCols(a, cols) => {
                let (rows, width) = val(*a).dims2("select_cols").expect("rank 2");
                let mut out = Tensor::zeros([rows, width]);
                let k = cols.len();
                for r in 0..rows {
                    for (j, &c) in cols.iter().enumerate() {
                        out.data_mut()[r * width + c] += g.data()[r * k + j];
                    }
                }
                acc(*a, out);
            }
            Op::StackRows(rows) => {
                for (i, &r) in rows.iter().enumerate() {
                    let shape = val(r).shape().to_vec();
                    let w = val(r).len();
                    acc(r, Tensor::new(shape, g.data()[i * w..(i + 1) * w].to_vec()).expect("shape"));
                }
            }
            Op::Gather(m, idx) => {
                let (rows, cols) = val(*m).dims2("gather").expect("rank 2");
                let mut out = Tensor::zeros([rows, cols]);
                for (r, &c) in idx.iter().enumerate() {
                    out.data_mut()[r * cols + c] = g.data()[r];
                }
                acc(*m, out);
            }
            Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                acc(*a, g.reshape(shape).expect("len"));
            }
        }
    }
}

fn column_sums<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cols) = m.dims2("sum_rows")?;
    let mut out = vec![T::zero(); cols];
    for r in 0..rows {
        for (o, &v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    Tensor::new([cols], out)
}
