//! Tangent propagation, adjoint propagation and the tangent of the adjoint
//! pass (forward-over-reverse).

use crate::error::{Error, Result};
use crate::loss;
use crate::tensor::{gemm, ParamVector, Real, Tensor};

use super::graph::{Graph, Op, Var};
use super::kernels;

/// Per-node tangents from a forward-mode replay; `None` means zero.
pub struct Tangents<T> {
    pub(crate) per_node: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Tangents<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.per_node[v.0].as_ref()
    }
}

fn add_opt<T: Real>(a: Option<Tensor<T>>, b: Option<Tensor<T>>) -> Option<Tensor<T>> {
    match (a, b) {
        (Some(mut a), Some(b)) => {
            a.add_assign(&b);
            Some(a)
        }
        (a, None) => a,
        (None, b) => b,
    }
}

fn with_shape<T: Real>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape.to_vec(), data).expect("rule output shape")
}

fn hadamard<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    a.zip_map(b, |x, y| x * y)
}

fn broadcast_rows<T: Real>(x: &Tensor<T>, row: &[T], f: impl Fn(T, T) -> T) -> Tensor<T> {
    let width = row.len();
    let mut out = x.clone();
    for chunk in out.data_mut().chunks_mut(width) {
        for (v, &r) in chunk.iter_mut().zip(row) {
            *v = f(*v, r);
        }
    }
    out
}

struct MatMulDims {
    trans_a: bool,
    trans_b: bool,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
}

impl MatMulDims {
    /// `out (+)= op(a) @ op(b)` batched.
    fn product<T: Real>(&self, a: &[T], b: &[T], out: &mut [T], beta: T) {
        let (m, k, n) = (self.m, self.k, self.n);
        for i in 0..self.batch {
            gemm(
                m,
                k,
                n,
                &a[i * m * k..(i + 1) * m * k],
                self.trans_a,
                &b[i * k * n..(i + 1) * k * n],
                self.trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                beta,
            );
        }
    }

    /// Adjoint w.r.t. `a` in `a`'s storage layout: `cbar @ op(b)^T`.
    fn grad_a<T: Real>(&self, cbar: &[T], b: &[T], out: &mut [T], beta: T) {
        let (m, k, n) = (self.m, self.k, self.n);
        for i in 0..self.batch {
            let c = &cbar[i * m * n..(i + 1) * m * n];
            let bs = &b[i * k * n..(i + 1) * k * n];
            let o = &mut out[i * m * k..(i + 1) * m * k];
            if self.trans_a {
                gemm(k, n, m, bs, self.trans_b, c, true, o, beta);
            } else {
                gemm(m, n, k, c, false, bs, !self.trans_b, o, beta);
            }
        }
    }

    /// Adjoint w.r.t. `b` in `b`'s storage layout: `op(a)^T @ cbar`.
    fn grad_b<T: Real>(&self, a: &[T], cbar: &[T], out: &mut [T], beta: T) {
        let (m, k, n) = (self.m, self.k, self.n);
        for i in 0..self.batch {
            let c = &cbar[i * m * n..(i + 1) * m * n];
            let as_ = &a[i * m * k..(i + 1) * m * k];
            let o = &mut out[i * k * n..(i + 1) * k * n];
            if self.trans_b {
                gemm(n, m, k, c, true, as_, self.trans_a, o, beta);
            } else {
                gemm(k, m, n, as_, !self.trans_a, c, false, o, beta);
            }
        }
    }
}

impl<T: Real> Graph<T> {
    fn check_tangent_layout(&self, tangent: &ParamVector<T>) -> Result<()> {
        self.layout.check_layout(tangent)
    }

    /// Forward-mode replay: tangents of every node along the parameter
    /// direction `tangent`, evaluated at the recorded primal point.
    pub fn tangents(&self, tangent: &ParamVector<T>) -> Result<Tangents<T>> {
        self.check_tangent_layout(tangent)?;
        let param_tangents: Vec<&Tensor<T>> = tangent.iter().map(|(_, t)| t).collect();
        let mut per_node: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let t = if !node.active {
                None
            } else {
                let tan = |v: Var| per_node[v.0].as_ref();
                let val = |v: Var| &self.nodes[v.0].value;
                let shape = node.value.shape();
                match &node.op {
                    Op::Param(i) => Some(param_tangents[*i].clone()),
                    Op::Constant => None,
                    Op::MatMul {
                        a,
                        b,
                        trans_a,
                        trans_b,
                        batch,
                        m,
                        k,
                        n,
                    } => {
                        let dims = MatMulDims {
                            trans_a: *trans_a,
                            trans_b: *trans_b,
                            batch: *batch,
                            m: *m,
                            k: *k,
                            n: *n,
                        };
                        let mut out = vec![T::zero(); node.value.len()];
                        let mut any = false;
                        if let Some(at) = tan(*a) {
                            dims.product(at.data(), val(*b).data(), &mut out, T::zero());
                            any = true;
                        }
                        if let Some(bt) = tan(*b) {
                            let beta = if any { T::one() } else { T::zero() };
                            dims.product(val(*a).data(), bt.data(), &mut out, beta);
                            any = true;
                        }
                        any.then(|| with_shape(shape, out))
                    }
                    Op::Add(a, b) => add_opt(tan(*a).cloned(), tan(*b).cloned()),
                    Op::Mul(a, b) => add_opt(
                        tan(*a).map(|at| hadamard(at, val(*b))),
                        tan(*b).map(|bt| hadamard(val(*a), bt)),
                    ),
                    Op::AddRow(x, r) => add_opt(
                        tan(*x).cloned(),
                        tan(*r).map(|rt| {
                            broadcast_rows(&Tensor::zeros(shape), rt.data(), |_, b| b)
                        }),
                    ),
                    Op::MulRow(x, r) => add_opt(
                        tan(*x).map(|xt| broadcast_rows(xt, val(*r).data(), |a, b| a * b)),
                        tan(*r).map(|rt| broadcast_rows(val(*x), rt.data(), |a, b| a * b)),
                    ),
                    Op::Scale(x, c) => tan(*x).map(|xt| xt.map(|v| v * *c)),
                    Op::Unary(x, f) => tan(*x).map(|xt| val(*x).zip_map(xt, |xv, tv| f.d1(xv) * tv)),
                    Op::RowSum(x) => tan(*x).map(|xt| {
                        let w = xt.last_dim();
                        with_shape(shape, xt.data().chunks(w).map(|r| r.iter().copied().sum()).collect())
                    }),
                    Op::SumAll(x) => tan(*x).map(|xt| Tensor::scalar(xt.data().iter().copied().sum())),
                    Op::Softmax { x, .. } => tan(*x).map(|xt| {
                        with_shape(
                            shape,
                            kernels::softmax_jvp_rows(node.value.data(), xt.data(), node.value.last_dim()),
                        )
                    }),
                    Op::LayerNorm { x, inv_std } => tan(*x).map(|xt| {
                        with_shape(
                            shape,
                            kernels::layer_norm_apply_rows(
                                node.value.data(),
                                inv_std,
                                xt.data(),
                                node.value.last_dim(),
                            ),
                        )
                    }),
                    Op::Embedding { table, ids } => tan(*table).map(|tt| {
                        let width = tt.last_dim();
                        let mut out = Vec::with_capacity(ids.len() * width);
                        for &id in ids {
                            out.extend_from_slice(&tt.data()[id * width..(id + 1) * width]);
                        }
                        with_shape(shape, out)
                    }),
                    Op::SwapAxes12 { x, dims } => {
                        tan(*x).map(|xt| with_shape(shape, kernels::swap_axes_12(xt.data(), *dims)))
                    }
                    Op::Reshape(x) => tan(*x).map(|xt| with_shape(shape, xt.data().to_vec())),
                    Op::CrossEntropy { logits, targets } => match tan(*logits) {
                        Some(lt) => {
                            let g = loss::ce_logit_grad(val(*logits), targets)?;
                            Some(Tensor::scalar(T::of(g.dot(lt))))
                        }
                        None => None,
                    },
                }
            };
            per_node.push(t);
        }
        Ok(Tangents { per_node })
    }

    /// Jacobian-vector product of node `out` along the parameter direction.
    pub fn jvp(&self, out: Var, tangent: &ParamVector<T>) -> Result<Tensor<T>> {
        let tangents = self.tangents(tangent)?;
        Ok(tangents
            .per_node
            .into_iter()
            .nth(out.0)
            .flatten()
            .unwrap_or_else(|| Tensor::zeros(self.shape(out))))
    }

    /// Vector-Jacobian product `(d out / d params)^T cotangent`.
    pub fn vjp(&self, out: Var, cotangent: &Tensor<T>) -> Result<ParamVector<T>> {
        if cotangent.shape() != self.shape(out) {
            return Err(Error::shape("vjp cotangent", self.shape(out), cotangent.shape()));
        }
        let (grad, _) = self.reverse(out, cotangent.clone(), None, None)?;
        Ok(grad)
    }

    /// Gradient of a scalar node.
    pub fn gradient(&self, loss: Var) -> Result<ParamVector<T>> {
        let seed = self.scalar_seed(loss)?;
        let (grad, _) = self.reverse(loss, seed, None, None)?;
        Ok(grad)
    }

    /// Hessian-vector product of a scalar node, by differentiating the
    /// adjoint pass along the tangent replay of `v`.
    pub fn hvp(&self, loss: Var, v: &ParamVector<T>) -> Result<ParamVector<T>> {
        let seed = self.scalar_seed(loss)?;
        let tangents = self.tangents(v)?;
        let (_, hv) = self.reverse(loss, seed, None, Some(&tangents))?;
        Ok(hv.expect("dual reverse pass yields tangents"))
    }

    /// Gradient together with its directional derivative along `v`.
    pub fn gradient_and_hvp(&self, loss: Var, v: &ParamVector<T>) -> Result<(ParamVector<T>, ParamVector<T>)> {
        let seed = self.scalar_seed(loss)?;
        let tangents = self.tangents(v)?;
        let (g, hv) = self.reverse(loss, seed, None, Some(&tangents))?;
        Ok((g, hv.expect("dual reverse pass yields tangents")))
    }

    fn scalar_seed(&self, loss: Var) -> Result<Tensor<T>> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        Ok(Tensor::full(shape, T::one()))
    }

    /// Reverse sweep from `out`. With `tangents`, also propagates the
    /// tangent of every adjoint, seeded with `seed_tangent` (zero if absent).
    pub(crate) fn reverse(
        &self,
        out: Var,
        seed: Tensor<T>,
        seed_tangent: Option<Tensor<T>>,
        tangents: Option<&Tangents<T>>,
    ) -> Result<(ParamVector<T>, Option<ParamVector<T>>)> {
        let n = self.nodes.len();
        let dual = tangents.is_some();
        let mut adj: Vec<Option<Tensor<T>>> = vec![None; n];
        let mut adj_t: Vec<Option<Tensor<T>>> = vec![None; n];
        adj[out.0] = Some(seed);
        adj_t[out.0] = seed_tangent;

        let mut param_grads: Vec<Option<Tensor<T>>> = vec![None; self.param_vars.len()];
        let mut param_grads_t: Vec<Option<Tensor<T>>> = vec![None; self.param_vars.len()];

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.active {
                continue;
            }
            let ybar_t = adj_t[idx].take();
            let ybar = match adj[idx].take() {
                Some(g) => g,
                None if ybar_t.is_some() => Tensor::zeros(node.value.shape()),
                None => continue,
            };
            let tan = |v: Var| tangents.and_then(|t| t.get(v));
            let val = |v: Var| &self.nodes[v.0].value;
            let active = |v: Var| self.nodes[v.0].active;

            // Collected (input, adjoint contribution, tangent contribution).
            let mut contrib: Vec<(Var, Option<Tensor<T>>, Option<Tensor<T>>)> = Vec::with_capacity(2);

            match &node.op {
                Op::Param(i) => {
                    param_grads[*i] = add_opt(param_grads[*i].take(), Some(ybar));
                    param_grads_t[*i] = add_opt(param_grads_t[*i].take(), ybar_t);
                    continue;
                }
                Op::Constant => continue,
                Op::MatMul {
                    a,
                    b,
                    trans_a,
                    trans_b,
                    batch,
                    m,
                    k,
                    n,
                } => {
                    let dims = MatMulDims {
                        trans_a: *trans_a,
                        trans_b: *trans_b,
                        batch: *batch,
                        m: *m,
                        k: *k,
                        n: *n,
                    };
                    let (av, bv) = (val(*a), val(*b));
                    if active(*a) {
                        let mut ga = vec![T::zero(); av.len()];
                        dims.grad_a(ybar.data(), bv.data(), &mut ga, T::zero());
                        let mut ga_t = None;
                        if dual {
                            let mut buf = vec![T::zero(); av.len()];
                            let mut any = false;
                            if let Some(yt) = &ybar_t {
                                dims.grad_a(yt.data(), bv.data(), &mut buf, T::zero());
                                any = true;
                            }
                            if let Some(bt) = tan(*b) {
                                let beta = if any { T::one() } else { T::zero() };
                                dims.grad_a(ybar.data(), bt.data(), &mut buf, beta);
                                any = true;
                            }
                            ga_t = any.then(|| with_shape(av.shape(), buf));
                        }
                        contrib.push((*a, Some(with_shape(av.shape(), ga)), ga_t));
                    }
                    if active(*b) {
                        let mut gb = vec![T::zero(); bv.len()];
                        dims.grad_b(av.data(), ybar.data(), &mut gb, T::zero());
                        let mut gb_t = None;
                        if dual {
                            let mut buf = vec![T::zero(); bv.len()];
                            let mut any = false;
                            if let Some(yt) = &ybar_t {
                                dims.grad_b(av.data(), yt.data(), &mut buf, T::zero());
                                any = true;
                            }
                            if let Some(at) = tan(*a) {
                                let beta = if any { T::one() } else { T::zero() };
                                dims.grad_b(at.data(), ybar.data(), &mut buf, beta);
                                any = true;
                            }
                            gb_t = any.then(|| with_shape(bv.shape(), buf));
                        }
                        contrib.push((*b, Some(with_shape(bv.shape(), gb)), gb_t));
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    contrib.push((
                        *a,
                        Some(hadamard(&ybar, bv)),
                        dual.then(|| {
                            add_opt(
                                ybar_t.as_ref().map(|yt| hadamard(yt, bv)),
                                tan(*b).map(|bt| hadamard(&ybar, bt)),
                            )
                        })
                        .flatten(),
                    ));
                    contrib.push((
                        *b,
                        Some(hadamard(&ybar, av)),
                        dual.then(|| {
                            add_opt(
                                ybar_t.as_ref().map(|yt| hadamard(yt, av)),
                                tan(*a).map(|at| hadamard(&ybar, at)),
                            )
                        })
                        .flatten(),
                    ));
                }
                Op::MulRow(x, r) => {
                    let (xv, rv) = (val(*x), val(*r));
                    let width = rv.len();
                    let gx = broadcast_rows(&ybar, rv.data(), |a, b| a * b);
                    let gx_t = dual
                        .then(|| {
                            add_opt(
                                ybar_t.as_ref().map(|yt| broadcast_rows(yt, rv.data(), |a, b| a * b)),
                                tan(*r).map(|rt| broadcast_rows(&ybar, rt.data(), |a, b| a * b)),
                            )
                        })
                        .flatten();
                    contrib.push((*x, Some(gx), gx_t));
                    if active(*r) {
                        let gr = kernels::column_sums(hadamard(&ybar, xv).data(), width);
                        let gr_t = dual
                            .then(|| {
                                let prod = add_opt(
                                    ybar_t.as_ref().map(|yt| hadamard(yt, xv)),
                                    tan(*x).map(|xt| hadamard(&ybar, xt)),
                                );
                                prod.map(|p| with_shape(&[width], kernels::column_sums(p.data(), width)))
                            })
                            .flatten();
                        contrib.push((*r, Some(with_shape(&[width], gr)), gr_t));
                    }
                }
                Op::Unary(x, f) => {
                    let xv = val(*x);
                    let gx = xv.zip_map(&ybar, |a, g| f.d1(a) * g);
                    let gx_t = dual
                        .then(|| {
                            add_opt(
                                ybar_t.as_ref().map(|yt| xv.zip_map(yt, |a, g| f.d1(a) * g)),
                                tan(*x).map(|xt| {
                                    let mut t = xv.zip_map(xt, |a, d| f.d2(a) * d);
                                    for (o, &g) in t.data_mut().iter_mut().zip(ybar.data()) {
                                        *o *= g;
                                    }
                                    t
                                }),
                            )
                        })
                        .flatten();
                    contrib.push((*x, Some(gx), gx_t));
                }
                Op::Softmax { x, .. } => {
                    let y = &node.value;
                    let w = y.last_dim();
                    let gx = with_shape(y.shape(), kernels::softmax_jvp_rows(y.data(), ybar.data(), w));
                    let gx_t = if dual {
                        let y_t = tan(Var(idx)).map(|t| t.data());
                        let g_t = ybar_t.as_ref().map(|t| t.data());
                        (y_t.is_some() || g_t.is_some()).then(|| {
                            with_shape(
                                y.shape(),
                                kernels::softmax_adjoint_tangent_rows(y.data(), y_t, ybar.data(), g_t, w),
                            )
                        })
                    } else {
                        None
                    };
                    contrib.push((*x, Some(gx), gx_t));
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = &node.value;
                    let w = y.last_dim();
                    let gx = with_shape(
                        y.shape(),
                        kernels::layer_norm_apply_rows(y.data(), inv_std, ybar.data(), w),
                    );
                    let gx_t = if dual {
                        let x_t = tan(*x).map(|t| t.data());
                        let y_t = tan(Var(idx)).map(|t| t.data());
                        let g_t = ybar_t.as_ref().map(|t| t.data());
                        (x_t.is_some() || g_t.is_some()).then(|| {
                            with_shape(
                                y.shape(),
                                kernels::layer_norm_adjoint_tangent_rows(
                                    y.data(),
                                    inv_std,
                                    ybar.data(),
                                    x_t,
                                    y_t,
                                    g_t,
                                    w,
                                ),
                            )
                        })
                    } else {
                        None
                    };
                    contrib.push((*x, Some(gx), gx_t));
                }
                Op::CrossEntropy { logits, targets } => {
                    let lv = val(*logits);
                    let g = loss::ce_logit_grad(lv, targets)?;
                    let s = ybar.data()[0];
                    let gx = g.map(|v| v * s);
                    let gx_t = if dual {
                        let first = ybar_t.as_ref().map(|yt| {
                            let st = yt.data()[0];
                            g.map(|v| v * st)
                        });
                        let second = match tan(*logits) {
                            Some(lt) => Some(loss::ce_logit_hvp(lv, lt)?.map(|v| v * s)),
                            None => None,
                        };
                        add_opt(first, second)
                    } else {
                        None
                    };
                    contrib.push((*logits, Some(gx), gx_t));
                }
                // Linear operations: the tangent of the adjoint is the same
                // transpose applied to the adjoint tangent.
                op => {
                    for (v, g) in self.linear_transpose(op, &ybar) {
                        contrib.push((v, Some(g), None));
                    }
                    if let Some(yt) = &ybar_t {
                        let mut i = 0;
                        for (v, g) in self.linear_transpose(op, yt) {
                            // Same order of inputs as above.
                            debug_assert_eq!(contrib[i].0, v);
                            contrib[i].2 = Some(g);
                            i += 1;
                        }
                    }
                }
            }

            for (v, g, gt) in contrib {
                if !active(v) {
                    continue;
                }
                adj[v.0] = add_opt(adj[v.0].take(), g);
                if dual {
                    adj_t[v.0] = add_opt(adj_t[v.0].take(), gt);
                }
            }
        }

        let collect = |grads: Vec<Option<Tensor<T>>>| -> ParamVector<T> {
            self.layout
                .iter()
                .zip(grads)
                .map(|((name, zero), g)| (name.clone(), g.unwrap_or_else(|| zero.clone())))
                .collect()
        };
        let grad = collect(param_grads);
        let grad_t = dual.then(|| collect(param_grads_t));
        Ok((grad, grad_t))
    }

    /// Transpose of a linear op applied to `g`, one entry per input.
    fn linear_transpose(&self, op: &Op<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let shape_of = |v: Var| self.shape(v);
        match op {
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRow(x, r) => {
                let width = g.last_dim();
                vec![
                    (*x, g.clone()),
                    (*r, with_shape(&[width], kernels::column_sums(g.data(), width))),
                ]
            }
            Op::Scale(x, c) => vec![(*x, g.map(|v| v * *c))],
            Op::RowSum(x) => {
                let shape = shape_of(*x);
                let width = *shape.last().expect("row_sum input rank");
                let mut out = Vec::with_capacity(g.len() * width);
                for &v in g.data() {
                    out.extend(std::iter::repeat_n(v, width));
                }
                vec![(*x, with_shape(shape, out))]
            }
            Op::SumAll(x) => vec![(*x, Tensor::full(shape_of(*x), g.data()[0]))],
            Op::Embedding { table, ids } => {
                let shape = shape_of(*table);
                let width = shape[1];
                let mut out = vec![T::zero(); shape[0] * width];
                for (row, &id) in g.data().chunks(width).zip(ids) {
                    for (o, &v) in out[id * width..(id + 1) * width].iter_mut().zip(row) {
                        *o += v;
                    }
                }
                vec![(*table, with_shape(shape, out))]
            }
            Op::SwapAxes12 { x, dims } => {
                let [a, b, c, d] = *dims;
                vec![(*x, with_shape(shape_of(*x), kernels::swap_axes_12(g.data(), [a, c, b, d])))]
            }
            Op::Reshape(x) => vec![(*x, with_shape(shape_of(*x), g.data().to_vec()))],
            _ => unreachable!("non-linear op routed to linear_transpose"),
        }
    }
}
