use super::{gemm, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        b_batched: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        s: f64,
    },
    AddScalar {
        a: Var,
    },
    Relu {
        a: Var,
    },
    Gelu {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    MeanAxis {
        a: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Concat {
        parts: Vec<(Var, usize)>,
        outer: usize,
        inner: usize,
    },
    Slice {
        a: Var,
        outer: usize,
        len_in: usize,
        start: usize,
        len_out: usize,
        inner: usize,
    },
    Transpose {
        a: Var,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    Reshape {
        a: Var,
    },
    Softmax {
        a: Var,
    },
    BceWithLogits {
        logits: Var,
        targets: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// An append-only tape of tensor ops.
///
/// Nodes are stored in creation order, which is a topological order of the
/// dataflow graph. Leaf gradients persist across [`Graph::backward`] calls and
/// accumulate until [`Graph::zero_grad`] clears them.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) element counts.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::Axis {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn is_suffix(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor { shape, data },
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Matrix product. Accepts `[m,k]·[k,n]`, `[B,m,k]·[k,n]` (shared right
    /// operand) and `[B,m,k]·[B,k,n]` (batched).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let (batch, m, k, n, b_batched) = match (sa.len(), sb.len()) {
            (2, 2) => (1, sa[0], sa[1], sb[1], false),
            (3, 2) => (sa[0], sa[1], sa[2], sb[1], false),
            (3, 3) if sa[0] == sb[0] => (sa[0], sa[1], sa[2], sb[2], true),
            _ => return Err(mismatch()),
        };
        let kb = if b_batched { sb[1] } else { sb[0] };
        if k != kb {
            return Err(mismatch());
        }
        let mut out = vec![0.0; batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            if b_batched {
                for i in 0..batch {
                    gemm(
                        m,
                        k,
                        n,
                        &av[i * m * k..(i + 1) * m * k],
                        false,
                        &bv[i * k * n..(i + 1) * k * n],
                        false,
                        &mut out[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
            } else {
                gemm(batch * m, k, n, av, false, bv, false, &mut out, false);
            }
        }
        check_finite("matmul", &out)?;
        let shape = if sa.len() == 3 { vec![batch, m, n] } else { vec![m, n] };
        Ok(self.push(
            shape,
            out,
            &[a, b],
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                b_batched,
            },
        ))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if is_suffix(sa, sb) {
            Ok(())
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    /// Elementwise `a + b`; `b` may broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("add", a, b)?;
        let bv = self.value(b).data();
        let nb = bv.len();
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % nb])
            .collect();
        check_finite("add", &out)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, &[a, b], Op::Add { a, b }))
    }

    /// Elementwise `a * b`; `b` may broadcast over leading axes of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("mul", a, b)?;
        let bv = self.value(b).data();
        let nb = bv.len();
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * bv[i % nb])
            .collect();
        check_finite("mul", &out)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, &[a, b], Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x * s).collect();
        check_finite("scale", &out)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, &[a], Op::Scale { a, s }))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x + s).collect();
        check_finite("add_scalar", &out)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, &[a], Op::AddScalar { a }))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, &[a], Op::Relu { a }))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
            .collect();
        check_finite("gelu", &out)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, &[a], Op::Gelu { a }))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta` of
    /// shape `[n]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let n = *sx.last().expect("tensors have rank >= 1");
        for p in [gamma, beta] {
            if self.shape(p) != [n] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: sx,
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xv.len() / n;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = g[j] * h + b[j];
            }
        }
        check_finite("layer_norm", &out)?;
        Ok(self.push(
            sx,
            out,
            &[x, gamma, beta],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        check_finite("sum", &[s])?;
        Ok(self.push(vec![1], vec![s], &[a], Op::Sum { a }))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).data();
        let s = v.iter().sum::<f64>() / v.len() as f64;
        check_finite("mean", &[s])?;
        Ok(self.push(vec![1], vec![s], &[a], Op::Mean { a }))
    }

    /// Mean along `axis`, removing it from the shape (a rank-1 input yields shape `[1]`).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis(&sa, axis)?;
        let av = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &av[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = sa;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.push(shape, out, &[a], Op::MeanAxis { a, outer, len, inner }))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| TensorError::InvalidShape {
            shape: vec![],
            reason: "concat of zero tensors".into(),
        })?);
        let first = first.to_vec();
        let (outer, _, inner) = split_axis(&first, axis)?;
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let same_rank = s.len() == first.len();
            if !same_rank || s[..axis] != first[..axis] || s[axis + 1..] != first[axis + 1..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            lens.push(s[axis]);
        }
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&lens) {
                let v = self.value(p).data();
                out.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let parts_info = parts.iter().copied().zip(lens).collect();
        Ok(self.push(
            shape,
            out,
            parts,
            Op::Concat {
                parts: parts_info,
                outer,
                inner,
            },
        ))
    }

    /// Takes `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let (outer, len_in, inner) = split_axis(&sa, axis)?;
        if start >= end || end > len_in {
            return Err(TensorError::InvalidShape {
                shape: sa,
                reason: format!("slice {start}..{end} on axis {axis}"),
            });
        }
        let len_out = end - start;
        let av = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len_out * inner);
        for o in 0..outer {
            out.extend_from_slice(&av[(o * len_in + start) * inner..(o * len_in + end) * inner]);
        }
        let mut shape = sa;
        shape[axis] = len_out;
        Ok(self.push(
            shape,
            out,
            &[a],
            Op::Slice {
                a,
                outer,
                len_in,
                start,
                len_out,
                inner,
            },
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() < 2 {
            return Err(TensorError::InvalidShape {
                shape: sa,
                reason: "transpose needs rank >= 2".into(),
            });
        }
        let r = sa.len();
        let (rows, cols) = (sa[r - 2], sa[r - 1]);
        let batch = sa[..r - 2].iter().product();
        let av = self.value(a).data();
        let mut out = vec![0.0; av.len()];
        for bi in 0..batch {
            let base = bi * rows * cols;
            for i in 0..rows {
                for j in 0..cols {
                    out[base + j * rows + i] = av[base + i * cols + j];
                }
            }
        }
        let mut shape = sa;
        shape.swap(r - 2, r - 1);
        Ok(self.push(shape, out, &[a], Op::Transpose { a, batch, rows, cols }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        let (shape, data) = (t.shape, t.data);
        Ok(self.push(shape, data, &[a], Op::Reshape { a }))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let n = *sa.last().expect("rank >= 1");
        let av = self.value(a).data();
        let mut out = vec![0.0; av.len()];
        for (src, dst) in av.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (s - max).exp();
                z += *d;
            }
            dst.iter_mut().for_each(|d| *d /= z);
        }
        check_finite("softmax", &out)?;
        Ok(self.push(sa, out, &[a], Op::Softmax { a }))
    }

    /// Mean binary cross-entropy on logits:
    /// `mean(max(z,0) - z*t + ln(1 + exp(-|z|)))`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var> {
        let (sl, st) = (self.shape(logits), self.shape(targets));
        if sl != st {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: sl.to_vec(),
                rhs: st.to_vec(),
            });
        }
        let z = self.value(logits).data();
        let t = self.value(targets).data();
        if let Some(&bad) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(TensorError::TargetOutOfRange(bad));
        }
        let total: f64 = z
            .iter()
            .zip(t)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let loss = total / z.len() as f64;
        check_finite("bce_with_logits", &[loss])?;
        Ok(self.push(
            vec![1],
            vec![loss],
            &[logits, targets],
            Op::BceWithLogits { logits, targets },
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients of leaves that
    /// require them are added to any gradient already stored.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.nodes[i].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.needs(v) {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                b_batched,
            } => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if b_batched {
                    acc(a, &mut |ga| {
                        for bi in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &g[bi * m * n..(bi + 1) * m * n],
                                false,
                                &bv[bi * k * n..(bi + 1) * k * n],
                                true,
                                &mut ga[bi * m * k..(bi + 1) * m * k],
                                true,
                            );
                        }
                    });
                    acc(b, &mut |gb| {
                        for bi in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &av[bi * m * k..(bi + 1) * m * k],
                                true,
                                &g[bi * m * n..(bi + 1) * m * n],
                                false,
                                &mut gb[bi * k * n..(bi + 1) * k * n],
                                true,
                            );
                        }
                    });
                } else {
                    let rows = batch * m;
                    acc(a, &mut |ga| gemm(rows, n, k, g, false, bv, true, ga, true));
                    acc(b, &mut |gb| gemm(k, rows, n, av, true, g, false, gb, true));
                }
            }
            &Op::Add { a, b } => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(b, &mut |gb| {
                    let nb = gb.len();
                    for (j, y) in g.iter().enumerate() {
                        gb[j % nb] += y;
                    }
                });
            }
            &Op::Mul { a, b } => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let nb = bv.len();
                acc(a, &mut |ga| {
                    for (j, x) in ga.iter_mut().enumerate() {
                        *x += g[j] * bv[j % nb];
                    }
                });
                acc(b, &mut |gb| {
                    for (j, y) in g.iter().enumerate() {
                        gb[j % nb] += y * av[j];
                    }
                });
            }
            &Op::Scale { a, s } => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y));
            }
            &Op::AddScalar { a } => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            &Op::Relu { a } => {
                let av = self.value(a).data();
                acc(a, &mut |ga| {
                    for (j, x) in ga.iter_mut().enumerate() {
                        if av[j] > 0.0 {
                            *x += g[j];
                        }
                    }
                });
            }
            &Op::Gelu { a } => {
                let av = self.value(a).data();
                acc(a, &mut |ga| {
                    for (j, x) in ga.iter_mut().enumerate() {
                        let v = av[j];
                        let th = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *x += g[j] * d;
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma).data();
                let n = gv.len();
                acc(*x, &mut |gx| {
                    for (r, &is) in inv_std.iter().enumerate() {
                        let row = r * n..(r + 1) * n;
                        let gr = &g[row.clone()];
                        let hr = &xhat[row.clone()];
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for j in 0..n {
                            let d = gr[j] * gv[j];
                            sum_d += d;
                            sum_dh += d * hr[j];
                        }
                        let nf = n as f64;
                        for j in 0..n {
                            let d = gr[j] * gv[j];
                            gx[r * n + j] += is / nf * (nf * d - sum_d - hr[j] * sum_dh);
                        }
                    }
                });
                acc(*gamma, &mut |gg| {
                    for (j, y) in g.iter().enumerate() {
                        gg[j % n] += y * xhat[j];
                    }
                });
                acc(*beta, &mut |gb| {
                    for (j, y) in g.iter().enumerate() {
                        gb[j % n] += y;
                    }
                });
            }
            &Op::Sum { a } => {
                acc(a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            &Op::Mean { a } => {
                acc(a, &mut |ga| {
                    let s = g[0] / ga.len() as f64;
                    ga.iter_mut().for_each(|x| *x += s);
                });
            }
            &Op::MeanAxis { a, outer, len, inner } => {
                let inv = 1.0 / len as f64;
                acc(a, &mut |ga| {
                    for o in 0..outer {
                        for l in 0..len {
                            for j in 0..inner {
                                ga[(o * len + l) * inner + j] += g[o * inner + j] * inv;
                            }
                        }
                    }
                });
            }
            Op::Concat { parts, outer, inner } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(p, len) in parts {
                    acc(p, &mut |gp| {
                        for o in 0..*outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            gp[dst..dst + len * inner]
                                .iter_mut()
                                .zip(&g[src..src + len * inner])
                                .for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += len;
                }
            }
            &Op::Slice {
                a,
                outer,
                len_in,
                start,
                len_out,
                inner,
            } => {
                acc(a, &mut |ga| {
                    for o in 0..outer {
                        let dst = (o * len_in + start) * inner;
                        let src = o * len_out * inner;
                        ga[dst..dst + len_out * inner]
                            .iter_mut()
                            .zip(&g[src..src + len_out * inner])
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            &Op::Transpose { a, batch, rows, cols } => {
                acc(a, &mut |ga| {
                    for bi in 0..batch {
                        let base = bi * rows * cols;
                        for i in 0..rows {
                            for j in 0..cols {
                                ga[base + i * cols + j] += g[base + j * rows + i];
                            }
                        }
                    }
                });
            }
            &Op::Reshape { a } => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            &Op::Softmax { a } => {
                let n = *self.shape(a).last().expect("rank >= 1");
                acc(a, &mut |ga| {
                    for ((gs, ys), dst) in g.chunks_exact(n).zip(out.chunks_exact(n)).zip(ga.chunks_exact_mut(n)) {
                        let dot: f64 = gs.iter().zip(ys).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dst[j] += ys[j] * (gs[j] - dot);
                        }
                    }
                });
            }
            &Op::BceWithLogits { logits, targets } => {
                let z = self.value(logits).data();
                let t = self.value(targets).data();
                let scale = g[0] / z.len() as f64;
                acc(logits, &mut |gz| {
                    for (j, x) in gz.iter_mut().enumerate() {
                        *x += scale * (sigmoid(z[j]) - t[j]);
                    }
                });
                acc(targets, &mut |gt| {
                    for (j, x) in gt.iter_mut().enumerate() {
                        *x -= scale * z[j];
                    }
                });
            }
        }
    }
}

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Pseudo-random values in [-1, 1) from a tiny LCG, for test inputs only.
    fn values(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    /// Central finite-difference check of `f` w.r.t. every input coordinate.
    /// `f` builds a scalar loss from leaf vars on a fresh graph.
    fn grad_check<F>(inputs: &[Tensor], f: F, tol: f64)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
        let loss = f(&mut g, &vars);
        g.backward(loss).unwrap();
        let h = 1e-5;
        let eval = |xs: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
            let l = f(&mut g, &vars);
            g.value(l).item()
        };
        for (idx, x) in inputs.iter().enumerate() {
            let analytic = g.grad(vars[idx]).map(|s| s.to_vec()).unwrap_or(vec![0.0; x.len()]);
            for (j, &a) in analytic.iter().enumerate() {
                let mut plus = inputs.to_vec();
                plus[idx].data_mut()[j] += h;
                let mut minus = inputs.to_vec();
                minus[idx].data_mut()[j] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                let rel = (a - numeric).abs() / denom;
                assert!(
                    rel < tol,
                    "input {idx} coord {j}: analytic {a} numeric {numeric} rel {rel}"
                );
            }
        }
    }

    /// Contracts an output with fixed weights so every output coordinate
    /// contributes to the loss.
    fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Var {
        let shape = g.shape(y).to_vec();
        let n = g.value(y).len();
        let w = g.constant(t(&shape, &values(n, seed)));
        let p = g.mul(y, w).unwrap();
        g.sum(p).unwrap()
    }

    #[test]
    fn matmul_identity_and_fixture() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i2 = g.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = g.constant(Tensor::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]));
        let ai = g.matmul(a, i2).unwrap();
        assert_eq!(g.value(ai).data(), g.value(a).data());
        let ab = g.matmul(a, b).unwrap();
        assert_eq!(g.value(ab).data(), &[19.0, 22.0, 43.0, 50.0]);
        let z = g.constant(Tensor::zeros(&[3, 4]));
        let any = g.constant(t(&[4, 2], &values(8, 3)));
        let zz = g.matmul(z, any).unwrap();
        assert_eq!(g.shape(zz), &[3, 2]);
        assert!(g.value(zz).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            g.matmul(a, b),
            Err(TensorError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn softmax_fixtures() {
        let mut g = Graph::new();
        let c = g.constant(t(&[4], &[2.5; 4]));
        let s = g.softmax(c).unwrap();
        assert!(g.value(s).data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let x = g.constant(t(&[2], &[0.0, 3f64.ln()]));
        let s = g.softmax(x).unwrap();
        let v = g.value(s).data();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[1000.0, 999.0, -1000.0]));
        let s = g.softmax(x).unwrap();
        assert!(g.value(s).all_finite());
    }

    #[test]
    fn bce_fixtures() {
        let mut g = Graph::new();
        let z = g.constant(t(&[1], &[0.0]));
        let one = g.constant(t(&[1], &[1.0]));
        let zero = g.constant(t(&[1], &[0.0]));
        let l1 = g.bce_with_logits(z, one).unwrap();
        let l0 = g.bce_with_logits(z, zero).unwrap();
        assert!((g.value(l1).item() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g.value(l0).item() - std::f64::consts::LN_2).abs() < 1e-15);
        let big = g.constant(t(&[1], &[40.0]));
        let l = g.bce_with_logits(big, one).unwrap();
        assert!(g.value(l).item() < 1e-12);
        let huge = g.constant(t(&[1], &[-800.0]));
        let l = g.bce_with_logits(huge, one).unwrap();
        assert!((g.value(l).item() - 800.0).abs() < 1e-9);
    }

    #[test]
    fn bce_errors() {
        let mut g = Graph::new();
        let z = g.constant(t(&[2], &[0.0, 1.0]));
        let bad = g.constant(t(&[2], &[0.5, 1.5]));
        assert_eq!(g.bce_with_logits(z, bad), Err(TensorError::TargetOutOfRange(1.5)));
        let short = g.constant(t(&[1], &[0.5]));
        assert!(g.bce_with_logits(z, short).is_err());
    }

    #[test]
    fn backward_sum_and_mean() {
        let mut g = Graph::new();
        let x = g.param(t(&[2, 3], &values(6, 1)));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);

        let mut g = Graph::new();
        let x = g.param(t(&[4], &values(4, 2)));
        let m = g.mean(x).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn backward_accumulates_until_zero_grad() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, 2.0, 3.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0; 3]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 3]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, 2.0, 3.0]));
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[3.0, 4.0]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn nonfinite_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1], &[f64::MAX]));
        assert_eq!(g.scale(x, 10.0), Err(TensorError::NonFinite { op: "scale" }));
    }

    #[test]
    fn grad_matmul_all_modes() {
        let a2 = t(&[3, 4], &values(12, 1));
        let b2 = t(&[4, 2], &values(8, 2));
        grad_check(
            &[a2, b2.clone()],
            |g, v| {
                let y = g.matmul(v[0], v[1]).unwrap();
                weighted_sum(g, y, 9)
            },
            1e-6,
        );
        let a3 = t(&[2, 3, 4], &values(24, 3));
        grad_check(
            &[a3.clone(), b2],
            |g, v| {
                let y = g.matmul(v[0], v[1]).unwrap();
                weighted_sum(g, y, 10)
            },
            1e-6,
        );
        let b3 = t(&[2, 4, 5], &values(40, 4));
        grad_check(
            &[a3, b3],
            |g, v| {
                let y = g.matmul(v[0], v[1]).unwrap();
                weighted_sum(g, y, 11)
            },
            1e-6,
        );
    }

    #[test]
    fn grad_elementwise_and_broadcast() {
        let a = t(&[2, 3, 4], &values(24, 5));
        let b = t(&[3, 4], &values(12, 6));
        grad_check(
            &[a.clone(), b.clone()],
            |g, v| {
                let y = g.add(v[0], v[1]).unwrap();
                weighted_sum(g, y, 12)
            },
            1e-6,
        );
        grad_check(
            &[a.clone(), b],
            |g, v| {
                let y = g.mul(v[0], v[1]).unwrap();
                weighted_sum(g, y, 13)
            },
            1e-6,
        );
        grad_check(
            &[a],
            |g, v| {
                let y = g.scale(v[0], -1.7).unwrap();
                let y = g.add_scalar(y, 0.3).unwrap();
                weighted_sum(g, y, 14)
            },
            1e-6,
        );
    }

    #[test]
    fn grad_activations() {
        // Keep relu inputs away from the kink.
        let x: Vec<f64> = values(10, 7)
            .into_iter()
            .map(|v| if v.abs() < 0.1 { v + 0.3 } else { v })
            .collect();
        grad_check(
            &[t(&[10], &x)],
            |g, v| {
                let y = g.relu(v[0]).unwrap();
                weighted_sum(g, y, 15)
            },
            1e-6,
        );
        let x: Vec<f64> = values(12, 8).iter().map(|v| v * 3.0).collect();
        grad_check(
            &[t(&[12], &x)],
            |g, v| {
                let y = g.gelu(v[0]).unwrap();
                weighted_sum(g, y, 16)
            },
            1e-6,
        );
    }

    #[test]
    fn grad_layer_norm() {
        let x = t(&[3, 5], &values(15, 9));
        let gamma = t(&[5], &values(5, 10));
        let beta = t(&[5], &values(5, 11));
        grad_check(
            &[x, gamma, beta],
            |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
                weighted_sum(g, y, 17)
            },
            1e-6,
        );
    }

    #[test]
    fn grad_reductions_and_shape_ops() {
        let x = t(&[2, 3, 4], &values(24, 12));
        grad_check(
            std::slice::from_ref(&x),
            |g, v| {
                let y = g.mean_axis(v[0], 1).unwrap();
                weighted_sum(g, y, 18)
            },
            1e-6,
        );
        grad_check(
            std::slice::from_ref(&x),
            |g, v| {
                let y = g.transpose(v[0]).unwrap();
                weighted_sum(g, y, 19)
            },
            1e-6,
        );
        grad_check(
            std::slice::from_ref(&x),
            |g, v| {
                let y = g.slice(v[0], 2, 1, 3).unwrap();
                let z = g.slice(v[0], 0, 1, 2).unwrap();
                let a = weighted_sum(g, y, 20);
                let b = weighted_sum(g, z, 21);
                let s = g.add(a, b).unwrap();
                g.mean(s).unwrap()
            },
            1e-6,
        );
        let y = t(&[2, 3, 2], &values(12, 13));
        grad_check(
            &[x, y],
            |g, v| {
                let c = g.concat(&[v[0], v[1]], 2).unwrap();
                let r = g.reshape(c, &[6, 6]).unwrap();
                weighted_sum(g, r, 22)
            },
            1e-6,
        );
    }

    #[test]
    fn grad_softmax_and_bce() {
        let x = t(&[3, 4], &values(12, 14));
        grad_check(
            std::slice::from_ref(&x),
            |g, v| {
                let y = g.softmax(v[0]).unwrap();
                weighted_sum(g, y, 23)
            },
            1e-6,
        );
        let targets: Vec<f64> = values(12, 15).iter().map(|v| (v + 1.0) / 2.0).collect();
        let logits: Vec<f64> = values(12, 16).iter().map(|v| v * 4.0).collect();
        grad_check(
            &[t(&[3, 4], &logits), t(&[3, 4], &targets)],
            |g, v| g.bce_with_logits(v[0], v[1]).unwrap(),
            1e-6,
        );
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(
            rows in prop::collection::vec(prop::collection::vec(-15.0f64..15.0, 5), 1..6),
            shift in -50.0f64..50.0,
        ) {
            let n = rows.len();
            let flat: Vec<f64> = rows.concat();
            let mut g = Graph::new();
            let x = g.constant(t(&[n, 5], &flat));
            let s = g.softmax(x).unwrap();
            let shifted: Vec<f64> = flat.iter().map(|v| v + shift).collect();
            let xs = g.constant(t(&[n, 5], &shifted));
            let ss = g.softmax(xs).unwrap();
            for (row, srow) in g.value(s).data().chunks(5).zip(g.value(ss).data().chunks(5)) {
                let total: f64 = row.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
                for (a, b) in row.iter().zip(srow) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn matmul_is_associative(seed in 0u64..10_000, m in 1usize..5, k in 1usize..5, n in 1usize..5, p in 1usize..5) {
            let mut g = Graph::new();
            let a = g.constant(t(&[m, k], &values(m * k, seed)));
            let b = g.constant(t(&[k, n], &values(k * n, seed + 1)));
            let c = g.constant(t(&[n, p], &values(n * p, seed + 2)));
            let ab = g.matmul(a, b).unwrap();
            let ab_c = g.matmul(ab, c).unwrap();
            let bc = g.matmul(b, c).unwrap();
            let a_bc = g.matmul(a, bc).unwrap();
            for (x, y) in g.value(ab_c).data().iter().zip(g.value(a_bc).data()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
