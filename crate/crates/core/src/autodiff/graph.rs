use crate::error::{Error, Result};
use crate::loss;
use crate::tensor::{gemm, ParamVector, Real, Tensor};

use super::kernels::{self, UnaryFn};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Param(usize),
    Constant,
    /// `op(a) @ op(b)` per batch; `a` is `[batch, m, k]` (or `[batch, k, m]` when
    /// transposed) and likewise for `b`. Two-dimensional operands use batch 1.
    MatMul {
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    /// `x + r` with `r` broadcast over the rows of `x`.
    AddRow(Var, Var),
    /// `x * r` with `r` broadcast over the rows of `x`.
    MulRow(Var, Var),
    Scale(Var, T),
    Unary(Var, UnaryFn),
    RowSum(Var),
    SumAll(Var),
    Softmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SwapAxes12 {
        x: Var,
        dims: [usize; 4],
    },
    Reshape(Var),
    /// Mean softmax cross-entropy over the rows of `logits`.
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
    },
}

#[derive(Clone, Debug)]
pub(crate) struct Node<T> {
    pub(crate) op: Op<T>,
    pub(crate) value: Tensor<T>,
    /// Whether the node depends on any parameter.
    pub(crate) active: bool,
}

/// Recorded computation over a fixed parameter point.
///
/// Nodes are appended in evaluation order and keep the primal values needed
/// by the tangent and adjoint passes. Every operation has a tangent (JVP)
/// rule, an adjoint (VJP) rule and a rule for the tangent of its adjoint,
/// which is what Hessian-vector products run on.
#[derive(Clone, Debug)]
pub struct Graph<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) layout: ParamVector<T>,
    pub(crate) param_vars: Vec<Var>,
    names: Vec<String>,
}

impl<T: Real> Graph<T> {
    /// Starts a graph whose parameter nodes hold a copy of `params`.
    pub fn new(params: &ParamVector<T>) -> Self {
        let mut g = Graph {
            nodes: Vec::new(),
            layout: params.zeros_like(),
            param_vars: Vec::with_capacity(params.num_entries()),
            names: Vec::with_capacity(params.num_entries()),
        };
        for (i, (name, value)) in params.iter().enumerate() {
            let v = g.push(Op::Param(i), value.clone(), true);
            g.param_vars.push(v);
            g.names.push(name.clone());
        }
        g
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, active: bool) -> Var {
        self.nodes.push(Node { op, value, active });
        Var(self.nodes.len() - 1)
    }

    fn active(&self, v: Var) -> bool {
        self.nodes[v.0].active
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameter layout (zero-valued) this graph was built over.
    pub fn layout(&self) -> &ParamVector<T> {
        &self.layout
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        self.names
            .binary_search_by(|n| n.as_str().cmp(name))
            .map(|i| self.param_vars[i])
            .map_err(|_| Error::UnknownParam(name.to_string()))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bmm(a, b, false, false)
    }

    /// Batched matrix product `op(a) @ op(b)`; see [`Op::MatMul`].
    pub fn bmm(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (batch, ra, ca, rb, cb) = match (sa.as_slice(), sb.as_slice()) {
            ([ra, ca], [rb, cb]) => (1, *ra, *ca, *rb, *cb),
            ([ba, ra, ca], [bb, rb, cb]) if ba == bb => (*ba, *ra, *ca, *rb, *cb),
            _ => return Err(Error::shape("matmul operands", &sa, &sb)),
        };
        let (m, k) = if trans_a { (ca, ra) } else { (ra, ca) };
        let (k2, n) = if trans_b { (cb, rb) } else { (rb, cb) };
        if k != k2 {
            return Err(Error::shape("matmul inner dimension", &sa, &sb));
        }
        let mut out = vec![T::zero(); batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    trans_a,
                    &bv[i * k * n..(i + 1) * k * n],
                    trans_b,
                    &mut out[i * m * n..(i + 1) * m * n],
                    T::zero(),
                );
            }
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let active = self.active(a) || self.active(b);
        Ok(self.push(
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
                batch,
                m,
                k,
                n,
            },
            Tensor::new(shape, out)?,
            active,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let active = self.active(a) || self.active(b);
        Ok(self.push(Op::Add(a, b), value, active))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let active = self.active(a) || self.active(b);
        Ok(self.push(Op::Mul(a, b), value, active))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let width = self.row_operand("add_row", x, row)?;
        let r = self.value(row).data().to_vec();
        let mut value = self.value(x).clone();
        for chunk in value.data_mut().chunks_mut(width) {
            for (v, &b) in chunk.iter_mut().zip(&r) {
                *v += b;
            }
        }
        let active = self.active(x) || self.active(row);
        Ok(self.push(Op::AddRow(x, row), value, active))
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let width = self.row_operand("mul_row", x, row)?;
        let r = self.value(row).data().to_vec();
        let mut value = self.value(x).clone();
        for chunk in value.data_mut().chunks_mut(width) {
            for (v, &g) in chunk.iter_mut().zip(&r) {
                *v *= g;
            }
        }
        let active = self.active(x) || self.active(row);
        Ok(self.push(Op::MulRow(x, row), value, active))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let c = T::of(factor);
        let value = self.value(x).map(|v| v * c);
        let active = self.active(x);
        self.push(Op::Scale(x, c), value, active)
    }

    pub fn unary(&mut self, x: Var, f: UnaryFn) -> Var {
        let value = self.value(x).map(|v| f.value(v));
        let active = self.active(x);
        self.push(Op::Unary(x, f), value, active)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryFn::Gelu)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryFn::Relu)
    }

    /// Sums over the trailing axis.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let width = t.last_dim();
        let data: Vec<T> = t.data().chunks(width).map(|r| r.iter().copied().sum()).collect();
        let mut shape = t.shape().to_vec();
        shape.pop();
        let value = Tensor::new(shape, data).expect("row_sum shape");
        let active = self.active(x);
        self.push(Op::RowSum(x), value, active)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let active = self.active(x);
        self.push(Op::SumAll(x), Tensor::scalar(s), active)
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        self.softmax_impl(x, false).expect("plain softmax has no shape constraint")
    }

    /// Softmax over the trailing axis of `[.., t, t]` score blocks where row
    /// `i` only attends to columns `0..=i`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, true)
    }

    fn softmax_impl(&mut self, x: Var, causal: bool) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        if causal && (shape.len() < 2 || shape[shape.len() - 1] != shape[shape.len() - 2]) {
            return Err(Error::shape("causal softmax (square trailing block)", &[], &shape));
        }
        let y = kernels::softmax_rows(t.data(), t.last_dim(), causal);
        let active = self.active(x);
        Ok(self.push(Op::Softmax { x }, Tensor::new(shape, y)?, active))
    }

    /// Layer normalization over the trailing axis, without affine terms.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let t = self.value(x);
        let (y, inv_std) = kernels::layer_norm_rows(t.data(), t.last_dim(), T::of(eps));
        let value = Tensor::new(t.shape().to_vec(), y).expect("layer norm shape");
        let active = self.active(x);
        self.push(Op::LayerNorm { x, inv_std }, value, active)
    }

    /// Gathers rows `ids` of a `[vocab, width]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let shape = t.shape();
        if shape.len() != 2 {
            return Err(Error::shape("embedding table", &[0, 0], shape));
        }
        let (vocab, width) = (shape[0], shape[1]);
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= vocab {
                return Err(Error::TokenOutOfRange { id, vocab });
            }
            out.extend_from_slice(&t.data()[id * width..(id + 1) * width]);
        }
        let value = Tensor::new(vec![ids.len(), width], out)?;
        let active = self.active(table);
        Ok(self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            value,
            active,
        ))
    }

    /// `[a, b, c, d] -> [a, c, b, d]`
    pub fn swap_axes_12(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let dims: [usize; 4] = shape
            .as_slice()
            .try_into()
            .map_err(|_| Error::shape("swap_axes_12 (rank 4)", &[0, 0, 0, 0], &shape))?;
        let data = kernels::swap_axes_12(self.value(x).data(), dims);
        let value = Tensor::new(vec![dims[0], dims[2], dims[1], dims[3]], data)?;
        let active = self.active(x);
        Ok(self.push(Op::SwapAxes12 { x, dims }, value, active))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let active = self.active(x);
        Ok(self.push(Op::Reshape(x), value, active))
    }

    /// Mean softmax cross-entropy of `logits` rows against class `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let l = loss::ce_loss(self.value(logits), targets)?;
        let active = self.active(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            Tensor::scalar(T::of(l)),
            active,
        ))
    }

    fn same_shape(&self, context: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(context, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn row_operand(&self, context: &'static str, x: Var, row: Var) -> Result<usize> {
        let width = self.value(x).last_dim();
        if self.shape(row) != [width] {
            return Err(Error::shape(context, &[width], self.shape(row)));
        }
        Ok(width)
    }
}
