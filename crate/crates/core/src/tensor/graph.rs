use super::kernels::{col2im, gemm, im2col, split_axis, ConvGeom};
use super::Tensor;
use crate::error::{dim_err, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddBroadcast {
        x: Var,
        b: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    MulBroadcast {
        x: Var,
        b: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Softmax {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    Normalize {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
        rstd: Vec<f32>,
    },
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        sizes: Vec<usize>,
        inner: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Patchify {
        x: Var,
        grid: usize,
    },
    Unpatchify {
        x: Var,
        grid: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    L1Loss(Var, Var),
    MseLoss(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddBroadcast { .. } => "add_broadcast",
            Op::MulBroadcast { .. } => "mul_broadcast",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul { .. } => "bmm",
            Op::Softmax { .. } => "softmax",
            Op::Normalize { .. } => "normalize",
            Op::Concat { .. } => "concat",
            Op::Reshape(_) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Patchify { .. } => "patchify",
            Op::Unpatchify { .. } => "unpatchify",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::L1Loss(..) => "l1_loss",
            Op::MseLoss(..) => "mse_loss",
        }
    }
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f32>,
    op: Op,
    requires_grad: bool,
    // Reductions also keep their value in double precision.
    exact: Option<f64>,
}

/// Define-by-run tape. Nodes are appended in evaluation order, so the node
/// list is already a topological order of the computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Grads {
    grads: Vec<Option<Vec<f32>>>,
    lens: Vec<usize>,
}

impl Grads {
    /// Gradient with respect to `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `v`; zeros for leaves the loss does not use.
    pub fn wrt(&self, v: Var) -> Vec<f32> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.lens.get(v.0).copied().unwrap_or(0)],
        }
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

fn permuted_shape(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    perm.iter().map(|&p| shape[p]).collect()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// `out[i_0..i_r] = x[idx]` where output axis `a` walks input axis `perm[a]`.
fn permute_data(data: &[f32], shape: &[usize], perm: &[usize]) -> Vec<f32> {
    let out_shape = permuted_shape(shape, perm);
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for a in (0..rank).rev() {
            idx[a] += 1;
            if idx[a] < out_shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    out
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Patch layout: patch `p = gy * grid + gx`, feature `f = (c * ph + py) * pw + px`.
fn patch_index(
    shape: (usize, usize, usize, usize),
    grid: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let (b, c, h, w) = shape;
    let (ph, pw) = (h / grid, w / grid);
    let feat = c * ph * pw;
    (0..b).flat_map(move |bi| {
        (0..c).flat_map(move |ci| {
            (0..h).flat_map(move |y| {
                (0..w).map(move |x| {
                    let src = ((bi * c + ci) * h + y) * w + x;
                    let p = (y / ph) * grid + x / pw;
                    let f = (ci * ph + y % ph) * pw + x % pw;
                    (src, (bi * grid * grid + p) * feat + f)
                })
            })
        })
    })
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Op names in recording order, leaves excluded.
    pub fn op_trace(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .map(|n| n.op.name())
            .collect()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f32>, op: Op, inputs: &[Var]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite())
                || inputs.iter().any(|v| self.nodes[v.0].data.iter().any(|x| !x.is_finite())),
            "{} produced a non-finite value from finite inputs",
            op.name()
        );
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
            exact: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Place a tensor on the tape, honoring its `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            data: t.into_data(),
            op: Op::Leaf,
            requires_grad,
            exact: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.data.clone()).expect("node shape consistent")
    }

    /// Scalar value of a one-element node, in double precision when the op kept it.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        n.exact.unwrap_or(n.data[0] as f64)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Vec<f32>> {
        same_shape(name, self.shape(a), self.shape(b))?;
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(self.shape(a).to_vec(), data, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(self.shape(a).to_vec(), data, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(self.shape(a).to_vec(), data, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let data = self.value(x).iter().map(|v| v * c).collect();
        self.push(self.shape(x).to_vec(), data, Op::Scale(x, c), &[x])
    }

    fn broadcast_dims(&self, name: &'static str, x: Var, b: Var, axis: usize) -> Result<(usize, usize, usize)> {
        let xs = self.shape(x);
        let bs = self.shape(b);
        if axis + bs.len() > xs.len() || xs[axis..axis + bs.len()] != *bs {
            return dim_err(
                name,
                format!("operand {bs:?} does not match {xs:?} at axis {axis}"),
            );
        }
        let outer = xs[..axis].iter().product();
        let n = bs.iter().product();
        let inner = xs[axis + bs.len()..].iter().product();
        Ok((outer, n, inner))
    }

    /// `x + b` where `b`'s shape equals `x.shape[axis..axis + b.rank]`.
    pub fn add_broadcast(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        let (outer, n, inner) = self.broadcast_dims("add_broadcast", x, b, axis)?;
        let bv = self.value(b);
        let mut data = self.value(x).to_vec();
        for o in 0..outer {
            for (j, &bj) in bv.iter().enumerate() {
                let base = (o * n + j) * inner;
                data[base..base + inner].iter_mut().for_each(|v| *v += bj);
            }
        }
        let op = Op::AddBroadcast { x, b, outer, n, inner };
        Ok(self.push(self.shape(x).to_vec(), data, op, &[x, b]))
    }

    /// `x * b` with the same broadcasting rule as [`Graph::add_broadcast`].
    pub fn mul_broadcast(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        let (outer, n, inner) = self.broadcast_dims("mul_broadcast", x, b, axis)?;
        let bv = self.value(b);
        let mut data = self.value(x).to_vec();
        for o in 0..outer {
            for (j, &bj) in bv.iter().enumerate() {
                let base = (o * n + j) * inner;
                data[base..base + inner].iter_mut().for_each(|v| *v *= bj);
            }
        }
        let op = Op::MulBroadcast { x, b, outer, n, inner };
        Ok(self.push(self.shape(x).to_vec(), data, op, &[x, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        self.push(self.shape(x).to_vec(), data, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self
            .value(x)
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        self.push(self.shape(x).to_vec(), data, Op::Sigmoid(x), &[x])
    }

    /// 2-D matrix product `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut data, false);
        Ok(self.push(vec![m, n], data, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched product: `a` is `[N, m, k]`, `b` is `[N, k, n]` (or `[N, n, k]` with `trans_b`).
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || Error::ShapeMismatch {
            op: "bmm",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(bad());
        }
        let mut data = vec![0.0; batch * m * n];
        let (av, bv) = (self.value(a), self.value(b));
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &av[i * m * k..],
                false,
                &bv[i * k * n..],
                trans_b,
                &mut data[i * m * n..],
                false,
            );
        }
        Ok(self.push(vec![batch, m, n], data, Op::BatchMatMul { a, b, trans_b }, &[a, b]))
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        let rank = self.shape(x).len();
        if axis >= rank {
            return dim_err(op, format!("axis {axis} out of range for rank {rank}"));
        }
        Ok(())
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let (outer, n, inner) = split_axis(self.shape(x), axis);
        let xv = self.value(x);
        let mut data = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let mx = (0..n).map(|j| xv[at(j)]).fold(f32::NEG_INFINITY, f32::max);
                let mut sum = 0.0f64;
                for j in 0..n {
                    let e = (xv[at(j)] - mx).exp();
                    data[at(j)] = e;
                    sum += e as f64;
                }
                let inv = (1.0 / sum) as f32;
                for j in 0..n {
                    data[at(j)] *= inv;
                }
            }
        }
        let op = Op::Softmax { x, outer, n, inner };
        Ok(self.push(self.shape(x).to_vec(), data, op, &[x]))
    }

    /// Zero-mean, unit-variance normalization along `axis` (no affine part).
    pub fn normalize(&mut self, x: Var, axis: usize, eps: f32) -> Result<Var> {
        self.check_axis("layer_norm", x, axis)?;
        let (outer, n, inner) = split_axis(self.shape(x), axis);
        let xv = self.value(x);
        let mut data = vec![0.0; xv.len()];
        let mut rstd = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let mean = (0..n).map(|j| xv[at(j)] as f64).sum::<f64>() / n as f64;
                let var = (0..n)
                    .map(|j| {
                        let d = xv[at(j)] as f64 - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / n as f64;
                let r = 1.0 / (var + eps as f64).sqrt();
                for j in 0..n {
                    data[at(j)] = ((xv[at(j)] as f64 - mean) * r) as f32;
                }
                rstd.push(r as f32);
            }
        }
        let op = Op::Normalize {
            x,
            outer,
            n,
            inner,
            rstd,
        };
        Ok(self.push(self.shape(x).to_vec(), data, op, &[x]))
    }

    /// Layer normalization along `axis` followed by learnable scale and shift
    /// (`gamma`, `beta` of shape `[x.shape[axis]]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, axis: usize, eps: f32) -> Result<Var> {
        let y = self.normalize(x, axis, eps)?;
        let y = self.mul_broadcast(y, gamma, axis)?;
        self.add_broadcast(y, beta, axis)
    }

    /// `x @ w + b` applied over the last axis of `x`. `w` is `[d_in, d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.is_empty() || ws.len() != 2 || *xs.last().unwrap() != ws[0] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: xs,
                rhs: ws,
            });
        }
        let rows = xs[..xs.len() - 1].iter().product();
        let flat = if xs.len() == 2 { x } else { self.reshape(x, &[rows, ws[0]])? };
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add_broadcast(y, b, 1)?;
        }
        if xs.len() == 2 {
            Ok(y)
        } else {
            let mut out = xs.clone();
            *out.last_mut().unwrap() = ws[1];
            self.reshape(y, &out)
        }
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return dim_err("concat", "no inputs");
        };
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let sizes: Vec<usize> = xs.iter().map(|&v| self.shape(v)[axis]).collect();
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &n) in xs.iter().zip(&sizes) {
                data.extend_from_slice(&self.value(v)[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let op = Op::Concat {
            inputs: xs.to_vec(),
            outer,
            sizes,
            inner,
        };
        Ok(self.push(shape, data, op, xs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x), &[x]))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return dim_err("permute", format!("{perm:?} is not a permutation of rank {}", shape.len()));
        }
        let data = permute_data(self.value(x), &shape, perm);
        let out = permuted_shape(&shape, perm);
        Ok(self.push(out, data, Op::Permute { x, perm: perm.to_vec() }, &[x]))
    }

    fn nchw(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize, usize)> {
        match *self.shape(x) {
            [b, c, h, w] => Ok((b, c, h, w)),
            ref s => dim_err(op, format!("expected [B, C, H, W], got {s:?}")),
        }
    }

    /// Split `[B, C, H, W]` into a `grid x grid` array of patches: `[B, grid^2, C*ph*pw]`.
    pub fn patchify(&mut self, x: Var, grid: usize) -> Result<Var> {
        let dims @ (b, c, h, w) = self.nchw("patchify", x)?;
        if grid == 0 || h % grid != 0 || w % grid != 0 {
            return dim_err("patchify", format!("{h}x{w} not divisible by patch grid {grid}"));
        }
        let xv = self.value(x);
        let mut data = vec![0.0; xv.len()];
        for (src, dst) in patch_index(dims, grid) {
            data[dst] = xv[src];
        }
        let feat = c * (h / grid) * (w / grid);
        Ok(self.push(vec![b, grid * grid, feat], data, Op::Patchify { x, grid }, &[x]))
    }

    /// Inverse of [`Graph::patchify`], reassembling `[B, grid^2, C*ph*pw]` into `[B, C, H, W]`.
    pub fn unpatchify(&mut self, x: Var, grid: usize, channels: usize, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let ok = grid > 0
            && h % grid == 0
            && w % grid == 0
            && s.len() == 3
            && s[1] == grid * grid
            && s[2] == channels * (h / grid) * (w / grid);
        if !ok {
            return dim_err(
                "unpatchify",
                format!("{s:?} cannot form [_, {channels}, {h}, {w}] with grid {grid}"),
            );
        }
        let xv = self.value(x);
        let mut data = vec![0.0; xv.len()];
        for (dst, src) in patch_index((s[0], channels, h, w), grid) {
            data[dst] = xv[src];
        }
        Ok(self.push(vec![s[0], channels, h, w], data, Op::Unpatchify { x, grid }, &[x]))
    }

    fn conv_geom(
        op: &'static str,
        (c, h, w): (usize, usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<ConvGeom> {
        if stride == 0 {
            return dim_err(op, "stride must be at least 1");
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return dim_err(
                op,
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad),
            );
        }
        Ok(ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    /// Cross-correlation of `x` `[B, C, H, W]` with `w` `[F, C, kh, kw]`, plus optional bias `[F]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (b, c, h, wd) = self.nchw("conv2d", x)?;
        let (f, wc, kh, kw) = self.nchw("conv2d", w)?;
        if wc != c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(w).to_vec(),
            });
        }
        let g = Self::conv_geom("conv2d", (c, h, wd), (kh, kw), stride, pad)?;
        let (rows, cols_n) = (g.col_rows(), g.col_cols());
        let mut out = vec![0.0; b * f * cols_n];
        let mut cols = vec![0.0; rows * cols_n];
        let (xv, wv) = (self.value(x), self.value(w));
        for bi in 0..b {
            im2col(&xv[bi * c * h * wd..(bi + 1) * c * h * wd], &g, &mut cols);
            gemm(f, rows, cols_n, wv, false, &cols, false, &mut out[bi * f * cols_n..], false);
        }
        let y = self.push(
            vec![b, f, g.oh, g.ow],
            out,
            Op::Conv2d { x, w, stride, pad },
            &[x, w],
        );
        match bias {
            Some(bv) => self.add_broadcast(y, bv, 1),
            None => Ok(y),
        }
    }

    /// Transposed convolution (adjoint of `conv2d`). `w` is `[C_in, C_out, kh, kw]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (b, cin, h, wd) = self.nchw("conv_transpose2d", x)?;
        let (wcin, cout, kh, kw) = self.nchw("conv_transpose2d", w)?;
        if wcin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(w).to_vec(),
            });
        }
        if stride == 0 {
            return dim_err("conv_transpose2d", "stride must be at least 1");
        }
        let full_h = (h - 1) * stride + kh;
        let full_w = (wd - 1) * stride + kw;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return dim_err("conv_transpose2d", format!("padding {pad} consumes the whole output"));
        }
        let (oh, ow) = (full_h - 2 * pad, full_w - 2 * pad);
        // Geometry of the forward conv that maps the output back onto the input grid.
        let g = ConvGeom {
            c: cout,
            h: oh,
            w: ow,
            kh,
            kw,
            stride,
            pad,
            oh: h,
            ow: wd,
        };
        let (rows, cols_n) = (g.col_rows(), g.col_cols());
        let mut out = vec![0.0; b * cout * oh * ow];
        let mut cols = vec![0.0; rows * cols_n];
        let (xv, wv) = (self.value(x), self.value(w));
        for bi in 0..b {
            gemm(rows, cin, cols_n, wv, true, &xv[bi * cin * cols_n..], false, &mut cols, false);
            col2im(&cols, &g, &mut out[bi * cout * oh * ow..(bi + 1) * cout * oh * ow]);
        }
        let y = self.push(
            vec![b, cout, oh, ow],
            out,
            Op::ConvTranspose2d { x, w, stride, pad },
            &[x, w],
        );
        match bias {
            Some(bv) => self.add_broadcast(y, bv, 1),
            None => Ok(y),
        }
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (b, c, h, w) = self.nchw("maxpool2d", x)?;
        if k == 0 || stride == 0 || k > h || k > w {
            return dim_err("maxpool2d", format!("window {k} exceeds input {h}x{w}"));
        }
        let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..k {
                        for kx in 0..k {
                            let i = base + (oy * stride + ky) * w + ox * stride + kx;
                            if xv[i] > xv[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(vec![b, c, oh, ow], out, Op::MaxPool2d { x, argmax }, &[x]))
    }

    fn push_scalar(&mut self, value: f64, op: Op, inputs: &[Var]) -> Var {
        let v = self.push(vec![], vec![value as f32], op, inputs);
        self.nodes[v.0].exact = Some(value);
        v
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().map(|&v| v as f64).sum();
        self.push_scalar(s, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.iter().map(|&v| v as f64).sum::<f64>() / xv.len().max(1) as f64;
        self.push_scalar(s, Op::Mean(x), &[x])
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape("l1_loss", self.shape(pred), self.shape(target))?;
        let n = self.value(pred).len().max(1) as f64;
        let s: f64 = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .map(|(&p, &t)| (p as f64 - t as f64).abs())
            .sum();
        Ok(self.push_scalar(s / n, Op::L1Loss(pred, target), &[pred, target]))
    }

    /// Mean squared difference.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape("mse_loss", self.shape(pred), self.shape(target))?;
        let n = self.value(pred).len().max(1) as f64;
        let s: f64 = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
            .sum();
        Ok(self.push_scalar(s / n, Op::MseLoss(pred, target), &[pred, target]))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let node = &self.nodes[loss.0];
        if node.data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &gy, &mut grads);
            }
            grads[i] = Some(gy);
        }
        // Only nodes that depend on a trainable leaf carry meaningful gradients.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Grads {
            grads,
            lens: self.nodes.iter().map(|n| n.data.len()).collect(),
        })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f32>>], v: Var) -> Option<&'a mut Vec<f32>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].data.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, i: usize, gy: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let y = &node.data;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = self.slot(grads, v) {
                        g.iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = self.slot(grads, *a) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
                if let Some(g) = self.slot(grads, *b) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g -= d);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(g) = self.slot(grads, *a) {
                    for ((g, d), o) in g.iter_mut().zip(gy).zip(bv) {
                        *g += d * o;
                    }
                }
                if let Some(g) = self.slot(grads, *b) {
                    for ((g, d), o) in g.iter_mut().zip(gy).zip(av) {
                        *g += d * o;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(g) = self.slot(grads, *x) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += c * d);
                }
            }
            Op::AddBroadcast { x, b, outer, n, inner } => {
                if let Some(g) = self.slot(grads, *x) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
                if let Some(g) = self.slot(grads, *b) {
                    for o in 0..*outer {
                        for (j, gj) in g.iter_mut().enumerate() {
                            let base = (o * n + j) * inner;
                            *gj += gy[base..base + inner].iter().sum::<f32>();
                        }
                    }
                }
            }
            Op::MulBroadcast { x, b, outer, n, inner } => {
                let (xv, bv) = (self.value(*x), self.value(*b));
                if let Some(g) = self.slot(grads, *x) {
                    for o in 0..*outer {
                        for (j, &bj) in bv.iter().enumerate() {
                            let base = (o * n + j) * inner;
                            for t in base..base + inner {
                                g[t] += gy[t] * bj;
                            }
                        }
                    }
                }
                if let Some(g) = self.slot(grads, *b) {
                    for o in 0..*outer {
                        for (j, gj) in g.iter_mut().enumerate() {
                            let base = (o * n + j) * inner;
                            *gj += (base..base + inner).map(|t| gy[t] * xv[t]).sum::<f32>();
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(g) = self.slot(grads, *x) {
                    for ((g, d), o) in g.iter_mut().zip(gy).zip(y) {
                        if *o > 0.0 {
                            *g += d;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(g) = self.slot(grads, *x) {
                    for ((g, d), o) in g.iter_mut().zip(gy).zip(y) {
                        *g += d * o * (1.0 - o);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(g) = self.slot(grads, *a) {
                    gemm(m, n, k, gy, false, bv, true, g, true);
                }
                if let Some(g) = self.slot(grads, *b) {
                    gemm(k, m, n, av, true, gy, false, g, true);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let sa = self.shape(*a);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.shape[2];
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(g) = self.slot(grads, *a) {
                    for i in 0..batch {
                        let gyi = &gy[i * m * n..];
                        gemm(m, n, k, gyi, false, &bv[i * k * n..], !trans_b, &mut g[i * m * k..], true);
                    }
                }
                if let Some(g) = self.slot(grads, *b) {
                    for i in 0..batch {
                        let gyi = &gy[i * m * n..];
                        let ai = &av[i * m * k..];
                        let gi = &mut g[i * k * n..];
                        if *trans_b {
                            gemm(n, m, k, gyi, true, ai, false, gi, true);
                        } else {
                            gemm(k, m, n, ai, true, gyi, false, gi, true);
                        }
                    }
                }
            }
            Op::Softmax { x, outer, n, inner } => {
                if let Some(g) = self.slot(grads, *x) {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let dot: f32 = (0..*n).map(|j| gy[at(j)] * y[at(j)]).sum();
                            for j in 0..*n {
                                g[at(j)] += y[at(j)] * (gy[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Normalize { x, outer, n, inner, rstd } => {
                if let Some(g) = self.slot(grads, *x) {
                    let nf = *n as f32;
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let mean_g: f32 = (0..*n).map(|j| gy[at(j)]).sum::<f32>() / nf;
                            let mean_gy: f32 = (0..*n).map(|j| gy[at(j)] * y[at(j)]).sum::<f32>() / nf;
                            let r = rstd[o * inner + i];
                            for j in 0..*n {
                                g[at(j)] += r * (gy[at(j)] - mean_g - y[at(j)] * mean_gy);
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs, outer, sizes, inner } => {
                let total: usize = sizes.iter().sum();
                let mut offset = 0;
                for (&v, &n) in inputs.iter().zip(sizes) {
                    if let Some(g) = self.slot(grads, v) {
                        for o in 0..*outer {
                            let src = &gy[(o * total + offset) * inner..][..n * inner];
                            let dst = &mut g[o * n * inner..][..n * inner];
                            dst.iter_mut().zip(src).for_each(|(g, d)| *g += d);
                        }
                    }
                    offset += n;
                }
            }
            Op::Reshape(x) => {
                if let Some(g) = self.slot(grads, *x) {
                    g.iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
            }
            Op::Permute { x, perm } => {
                if let Some(g) = self.slot(grads, *x) {
                    let back = permute_data(gy, &node.shape, &inverse_perm(perm));
                    g.iter_mut().zip(back).for_each(|(g, d)| *g += d);
                }
            }
            Op::Patchify { x, grid } => {
                let s = self.shape(*x);
                let dims = (s[0], s[1], s[2], s[3]);
                if let Some(g) = self.slot(grads, *x) {
                    for (src, dst) in patch_index(dims, *grid) {
                        g[src] += gy[dst];
                    }
                }
            }
            Op::Unpatchify { x, grid } => {
                let s = &node.shape;
                let dims = (s[0], s[1], s[2], s[3]);
                if let Some(g) = self.slot(grads, *x) {
                    for (dst, src) in patch_index(dims, *grid) {
                        g[src] += gy[dst];
                    }
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let (b, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let (f, kh, kw) = (ws[0], ws[2], ws[3]);
                let g = ConvGeom {
                    c,
                    h,
                    w: wd,
                    kh,
                    kw,
                    stride: *stride,
                    pad: *pad,
                    oh: node.shape[2],
                    ow: node.shape[3],
                };
                let (rows, cols_n) = (g.col_rows(), g.col_cols());
                let (xv, wv) = (self.value(*x), self.value(*w));
                let want_x = self.nodes[x.0].requires_grad;
                let want_w = self.nodes[w.0].requires_grad;
                let mut cols = vec![0.0; rows * cols_n];
                if want_w {
                    let gw = self.slot(grads, *w).expect("requires grad");
                    for bi in 0..b {
                        im2col(&xv[bi * c * h * wd..(bi + 1) * c * h * wd], &g, &mut cols);
                        gemm(f, cols_n, rows, &gy[bi * f * cols_n..], false, &cols, true, gw, true);
                    }
                }
                if want_x {
                    let gx = self.slot(grads, *x).expect("requires grad");
                    for bi in 0..b {
                        gemm(rows, f, cols_n, wv, true, &gy[bi * f * cols_n..], false, &mut cols, false);
                        col2im(&cols, &g, &mut gx[bi * c * h * wd..(bi + 1) * c * h * wd]);
                    }
                }
            }
            Op::ConvTranspose2d { x, w, stride, pad } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let (b, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
                let (oh, ow) = (node.shape[2], node.shape[3]);
                let g = ConvGeom {
                    c: cout,
                    h: oh,
                    w: ow,
                    kh,
                    kw,
                    stride: *stride,
                    pad: *pad,
                    oh: h,
                    ow: wd,
                };
                let (rows, cols_n) = (g.col_rows(), g.col_cols());
                let (xv, wv) = (self.value(*x), self.value(*w));
                let want_x = self.nodes[x.0].requires_grad;
                let want_w = self.nodes[w.0].requires_grad;
                let mut cols = vec![0.0; rows * cols_n];
                for bi in 0..b {
                    im2col(&gy[bi * cout * oh * ow..(bi + 1) * cout * oh * ow], &g, &mut cols);
                    if want_x {
                        let gx = self.slot(grads, *x).expect("requires grad");
                        gemm(cin, rows, cols_n, wv, false, &cols, false, &mut gx[bi * cin * cols_n..], true);
                    }
                    if want_w {
                        let gw = self.slot(grads, *w).expect("requires grad");
                        gemm(cin, cols_n, rows, &xv[bi * cin * cols_n..], false, &cols, true, gw, true);
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                if let Some(g) = self.slot(grads, *x) {
                    for (&src, d) in argmax.iter().zip(gy) {
                        g[src] += d;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(g) = self.slot(grads, *x) {
                    g.iter_mut().for_each(|g| *g += gy[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(g) = self.slot(grads, *x) {
                    let s = gy[0] / g.len().max(1) as f32;
                    g.iter_mut().for_each(|g| *g += s);
                }
            }
            Op::L1Loss(p, t) | Op::MseLoss(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let scale = gy[0] / pv.len().max(1) as f32;
                let l1 = matches!(node.op, Op::L1Loss(..));
                let dpred: Vec<f32> = pv
                    .iter()
                    .zip(tv)
                    .map(|(&a, &b)| {
                        let d = a - b;
                        if l1 {
                            if d > 0.0 {
                                scale
                            } else if d < 0.0 {
                                -scale
                            } else {
                                0.0
                            }
                        } else {
                            2.0 * d * scale
                        }
                    })
                    .collect();
                if let Some(g) = self.slot(grads, *p) {
                    g.iter_mut().zip(&dpred).for_each(|(g, d)| *g += d);
                }
                if let Some(g) = self.slot(grads, *t) {
                    g.iter_mut().zip(&dpred).for_each(|(g, d)| *g -= d);
                }
            }
        }
    }
}
