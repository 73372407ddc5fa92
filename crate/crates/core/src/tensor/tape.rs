use super::kernels::{axpy, dot, gemm_nn, gemm_nt, gemm_tn};
use super::{broadcast_index_map, broadcast_shapes, Tensor};
use crate::error::{contract, Error, Result};

const SQRT_2_OVER_PI: f32 = 0.797_884_6;
const GELU_CUBIC: f32 = 0.044_715;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
        transpose_b: bool,
        /// (a offset, b offset) per output batch entry.
        batches: Vec<(usize, usize)>,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: Var,
        b: Var,
        map_a: Option<Vec<usize>>,
        map_b: Option<Vec<usize>>,
    },
    Mul {
        a: Var,
        b: Var,
        map_a: Option<Vec<usize>>,
        map_b: Option<Vec<usize>>,
    },
    Scale {
        x: Var,
        factor: f32,
    },
    Sum {
        x: Var,
        total: f64,
    },
    Reshape {
        x: Var,
    },
    /// out[i] = x[index[i]]; covers permutes and gathers.
    Select {
        x: Var,
        index: Vec<usize>,
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    MaskedSoftmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Gelu {
        x: Var,
    },
    GatedGelu {
        x: Var,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        selected: Vec<bool>,
        probs: Vec<f32>,
        count: usize,
        loss: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records tensor operations for reverse-mode differentiation.
///
/// Leaf gradients accumulate across [`Tape::backward`] calls until
/// [`Tape::zero_grad`] clears them. Intermediate gradients are transient.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn gelu_scalar(x: f32) -> f32 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_derivative(x: f32) -> f32 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

/// Scalar tanh-approximation GELU, exposed for reference checks.
pub fn gelu_value(x: f32) -> f32 {
    gelu_scalar(x)
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

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf; gradients flow into it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of `v` in `f64`. Reductions keep their 64-bit
    /// accumulator; other scalars are widened from `f32`.
    pub fn item_f64(&self, v: Var) -> f64 {
        match &self.nodes[v.0].op {
            Op::Sum { total, .. } => *total,
            Op::CrossEntropy { loss, .. } => *loss,
            _ => self.nodes[v.0].value.item() as f64,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    /// Matrix product over the last two axes; leading axes broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` over the last two axes of `b`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let err = || Error::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if transpose_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if k != kb {
            return Err(err());
        }
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];

        let (batches, m_eff, out_shape) = if batch_b.is_empty() {
            // A shared weight matrix: fold every leading axis of `a` into rows.
            let rows: usize = sa[..sa.len() - 1].iter().product();
            let mut out = sa[..sa.len() - 1].to_vec();
            out.push(n);
            (vec![(0, 0)], rows, out)
        } else {
            let batch = broadcast_shapes(batch_a, batch_b).ok_or_else(err)?;
            let map_a = broadcast_index_map(batch_a, &batch);
            let map_b = broadcast_index_map(batch_b, &batch);
            let batches = map_a
                .iter()
                .zip(&map_b)
                .map(|(&ia, &ib)| (ia * m * k, ib * k * n))
                .collect();
            let mut out = batch;
            out.extend([m, n]);
            (batches, m, out)
        };

        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut c = vec![0.0f32; batches.len() * m_eff * n];
        for (bi, &(oa, ob)) in batches.iter().enumerate() {
            let cs = &mut c[bi * m_eff * n..(bi + 1) * m_eff * n];
            let asl = &av[oa..oa + m_eff * k];
            let bsl = &bv[ob..ob + k * n];
            if transpose_b {
                gemm_nt(asl, bsl, cs, m_eff, k, n);
            } else {
                gemm_nn(asl, bsl, cs, m_eff, k, n);
            }
        }
        let rg = self.needs(a) || self.needs(b);
        let value = Tensor::new(out_shape, c)?;
        Ok(self.push(
            value,
            rg,
            Op::MatMul {
                a,
                b,
                transpose_b,
                batches,
                m: m_eff,
                k,
                n,
            },
        ))
    }

    fn binary_maps(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<(Vec<usize>, Option<Vec<usize>>, Option<Vec<usize>>)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let out = broadcast_shapes(sa, sb).ok_or_else(|| Error::Shape {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let map_a = (sa != out.as_slice()).then(|| broadcast_index_map(sa, &out));
        let map_b = (sb != out.as_slice()).then(|| broadcast_index_map(sb, &out));
        Ok((out, map_a, map_b))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, map_a, map_b) = self.binary_maps("add", a, b)?;
        let n: usize = shape.iter().product();
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data = (0..n)
            .map(|i| {
                let x = map_a.as_ref().map_or(av[i], |m| av[m[i]]);
                let y = map_b.as_ref().map_or_else(|| bv[i], |m| bv[m[i]]);
                x + y
            })
            .collect();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(shape, data)?,
            rg,
            Op::Add { a, b, map_a, map_b },
        ))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, map_a, map_b) = self.binary_maps("mul", a, b)?;
        let n: usize = shape.iter().product();
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data = (0..n)
            .map(|i| {
                let x = map_a.as_ref().map_or(av[i], |m| av[m[i]]);
                let y = map_b.as_ref().map_or_else(|| bv[i], |m| bv[m[i]]);
                x * y
            })
            .collect();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(shape, data)?,
            rg,
            Op::Mul { a, b, map_a, map_b },
        ))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(x);
        self.push(value, rg, Op::Scale { x, factor })
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(total as f32), rg, Op::Sum { x, total })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        let rg = self.needs(x);
        Ok(self.push(value, rg, Op::Reshape { x }))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(contract(format!(
                "invalid permutation {axes:?} for shape {shape:?}"
            )));
        }
        let in_strides = row_major_strides(&shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let total: usize = shape.iter().product();
        let mut index = Vec::with_capacity(total);
        let mut idx = vec![0usize; out_shape.len()];
        let mut src = 0usize;
        for _ in 0..total {
            index.push(src);
            for d in (0..out_shape.len()).rev() {
                idx[d] += 1;
                src += strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                src -= strides[d] * idx[d];
                idx[d] = 0;
            }
        }
        self.select(x, index, out_shape)
    }

    /// Gathers along the last axis: out[.., i..] = x[.., index[i..]], where the
    /// output replaces the last axis of `x` with `index_shape`.
    pub fn gather_last(&mut self, x: Var, index: &[usize], index_shape: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let last = *shape.last().ok_or_else(|| contract("gather on a scalar"))?;
        if index_shape.iter().product::<usize>() != index.len() {
            return Err(Error::Shape {
                op: "gather_last",
                lhs: index_shape.to_vec(),
                rhs: vec![index.len()],
            });
        }
        if let Some((pos, &bad)) = index.iter().enumerate().find(|(_, &i)| i >= last) {
            return Err(Error::Index {
                index: bad,
                bound: last,
                position: pos,
            });
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let full: Vec<usize> = (0..rows)
            .flat_map(|r| index.iter().map(move |&i| r * last + i))
            .collect();
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        out_shape.extend_from_slice(index_shape);
        self.select(x, full, out_shape)
    }

    fn select(&mut self, x: Var, index: Vec<usize>, out_shape: Vec<usize>) -> Result<Var> {
        let src = self.value(x).data();
        let data = index.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(out_shape, data)?;
        let rg = self.needs(x);
        Ok(self.push(value, rg, Op::Select { x, index }))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(contract(format!(
                "softmax axis {axis} invalid for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0f32; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len)
                    .map(|j| src[at(j)])
                    .fold(f32::NEG_INFINITY, f32::max);
                let mut total = 0.0f32;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let rg = self.needs(x);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
        ))
    }

    /// Softmax over the last axis restricted to entries where `allowed` is
    /// true. `allowed` has shape `mask_shape`, which must broadcast to the
    /// shape of `x`. Rows with no allowed entry produce zeros.
    pub fn masked_softmax(
        &mut self,
        x: Var,
        allowed: &[bool],
        mask_shape: &[usize],
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if mask_shape.iter().product::<usize>() != allowed.len()
            || broadcast_shapes(mask_shape, &shape).as_deref() != Some(shape.as_slice())
        {
            return Err(Error::Shape {
                op: "masked_softmax",
                lhs: shape,
                rhs: mask_shape.to_vec(),
            });
        }
        let len = *shape
            .last()
            .ok_or_else(|| contract("softmax on a scalar"))?;
        let map = broadcast_index_map(mask_shape, &shape);
        let src = self.value(x).data();
        let mut out = vec![0.0f32; src.len()];
        for (r, row) in out.chunks_mut(len).enumerate() {
            let base = r * len;
            let ok = |j: usize| allowed[map[base + j]];
            let max = (0..len)
                .filter(|&j| ok(j))
                .map(|j| src[base + j])
                .fold(f32::NEG_INFINITY, f32::max);
            if max == f32::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0f32;
            for j in 0..len {
                if ok(j) {
                    let e = (src[base + j] - max).exp();
                    row[j] = e;
                    total += e;
                }
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::MaskedSoftmax { x }))
    }

    /// Layer normalization over the last axis with affine `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f32) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| contract("layer_norm on a scalar"))?;
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        if eps <= 0.0 {
            return Err(contract("layer_norm eps must be positive"));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.len() / d;
        let mut xhat = vec![0.0f32; src.len()];
        let mut rstd = vec![0.0f32; rows];
        let mut out = vec![0.0f32; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| gelu_scalar(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(x);
        self.push(value, rg, Op::Gelu { x })
    }

    /// Splits the last axis into halves `[gate | value]` and returns
    /// `gelu(gate) * value`.
    pub fn gated_gelu(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let two_i = *shape
            .last()
            .ok_or_else(|| contract("gated_gelu on a scalar"))?;
        if two_i % 2 != 0 {
            return Err(contract(format!(
                "gated_gelu needs an even last axis, got {shape:?}"
            )));
        }
        let half = two_i / 2;
        let src = self.value(x).data();
        let data: Vec<f32> = src
            .chunks(two_i)
            .flat_map(|row| (0..half).map(move |j| gelu_scalar(row[j]) * row[half + j]))
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = half;
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(out_shape, data)?, rg, Op::GatedGelu { x }))
    }

    /// Row gather from `table[V, d]` by `ids` laid out as `ids_shape`.
    pub fn embedding(&mut self, table: Var, ids: &[u32], ids_shape: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 || ids_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::Shape {
                op: "embedding",
                lhs: shape,
                rhs: ids_shape.to_vec(),
            });
        }
        let (vocab, d) = (shape[0], shape[1]);
        if let Some((pos, &bad)) = ids.iter().enumerate().find(|(_, &i)| i as usize >= vocab) {
            return Err(Error::Index {
                index: bad as usize,
                bound: vocab,
                position: pos,
            });
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i as usize * d..(i as usize + 1) * d]);
        }
        let mut out_shape = ids_shape.to_vec();
        out_shape.push(d);
        let rg = self.needs(table);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            rg,
            Op::Embedding {
                table,
                ids: ids.iter().map(|&i| i as usize).collect(),
            },
        ))
    }

    /// Mean negative log-likelihood over selected rows of `logits[.., V]`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[u32],
        selected: &[bool],
    ) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let vocab = *shape
            .last()
            .ok_or_else(|| contract("cross_entropy on a scalar"))?;
        let rows = self.value(logits).numel() / vocab;
        if targets.len() != rows || selected.len() != rows {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len(), selected.len()],
            });
        }
        let count = selected.iter().filter(|&&s| s).count();
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0f32; src.len()];
        let mut total = 0.0f64;
        for r in 0..rows {
            if !selected[r] {
                continue;
            }
            let t = targets[r] as usize;
            if t >= vocab {
                return Err(Error::Index {
                    index: t,
                    bound: vocab,
                    position: r,
                });
            }
            let row = &src[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let sum: f32 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            let sum64: f64 = row.iter().map(|&v| (v as f64 - max as f64).exp()).sum();
            total += max as f64 + sum64.ln() - row[t] as f64;
            for (p, v) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
        }
        let loss = total / count as f64;
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss as f32),
            rg,
            Op::CrossEntropy {
                logits,
                targets: targets.iter().map(|&t| t as usize).collect(),
                selected: selected.to_vec(),
                probs,
                count,
                loss,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.needs(loss) {
            return Err(contract("loss does not depend on any trainable leaf"));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn grad_buf<'a>(&self, grads: &'a mut [Option<Vec<f32>>], v: Var) -> Option<&'a mut [f32]> {
        if !self.needs(v) {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(
            grads[v.0]
                .get_or_insert_with(|| vec![0.0; n])
                .as_mut_slice(),
        )
    }

    fn propagate(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::MatMul {
                a,
                b,
                transpose_b,
                batches,
                m,
                k,
                n,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if let Some(da) = self.grad_buf(grads, *a) {
                    for (bi, &(oa, ob)) in batches.iter().enumerate() {
                        let gs = &g[bi * m * n..(bi + 1) * m * n];
                        let bsl = &bv[ob..ob + k * n];
                        let dsl = &mut da[oa..oa + m * k];
                        if *transpose_b {
                            // b is [n,k]: dA += dC · b
                            gemm_nn(gs, bsl, dsl, m, n, k);
                        } else {
                            // b is [k,n]: dA += dC · bᵀ
                            gemm_nt(gs, bsl, dsl, m, n, k);
                        }
                    }
                }
                if let Some(db) = self.grad_buf(grads, *b) {
                    for (bi, &(oa, ob)) in batches.iter().enumerate() {
                        let gs = &g[bi * m * n..(bi + 1) * m * n];
                        let asl = &av[oa..oa + m * k];
                        let dsl = &mut db[ob..ob + k * n];
                        if *transpose_b {
                            // dB[n,k] += dCᵀ · A
                            gemm_tn(gs, asl, dsl, m, n, k);
                        } else {
                            gemm_tn(asl, gs, dsl, m, k, n);
                        }
                    }
                }
            }
            Op::Add { a, b, map_a, map_b } => {
                for (v, map) in [(*a, map_a), (*b, map_b)] {
                    if let Some(d) = self.grad_buf(grads, v) {
                        match map {
                            None => d.iter_mut().zip(g).for_each(|(x, y)| *x += y),
                            Some(m) => m.iter().zip(g).for_each(|(&j, y)| d[j] += y),
                        }
                    }
                }
            }
            Op::Mul { a, b, map_a, map_b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let at = |m: &Option<Vec<usize>>, i: usize| m.as_ref().map_or(i, |m| m[i]);
                if let Some(d) = self.grad_buf(grads, *a) {
                    for (i, gi) in g.iter().enumerate() {
                        d[at(map_a, i)] += gi * bv[at(map_b, i)];
                    }
                }
                if let Some(d) = self.grad_buf(grads, *b) {
                    for (i, gi) in g.iter().enumerate() {
                        d[at(map_b, i)] += gi * av[at(map_a, i)];
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(d) = self.grad_buf(grads, *x) {
                    axpy(*factor, g, d);
                }
            }
            Op::Sum { x, .. } => {
                if let Some(d) = self.grad_buf(grads, *x) {
                    d.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Reshape { x } => {
                if let Some(d) = self.grad_buf(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Select { x, index } => {
                if let Some(d) = self.grad_buf(grads, *x) {
                    index.iter().zip(g).for_each(|(&j, y)| d[j] += y);
                }
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = node.value.data();
                let (outer, len, inner) = (*outer, *len, *inner);
                if let Some(d) = self.grad_buf(grads, *x) {
                    for o in 0..outer {
                        for c in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + c;
                            let s: f32 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                d[at(j)] += y[at(j)] * (g[at(j)] - s);
                            }
                        }
                    }
                }
            }
            Op::MaskedSoftmax { x } => {
                let y = node.value.data();
                let len = *node.value.shape().last().unwrap();
                if let Some(d) = self.grad_buf(grads, *x) {
                    for ((yr, gr), dr) in y.chunks(len).zip(g.chunks(len)).zip(d.chunks_mut(len)) {
                        let s = dot(yr, gr);
                        for j in 0..len {
                            dr[j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.value(*gain).numel();
                let gv = self.value(*gain).data();
                if let Some(dg) = self.grad_buf(grads, *gain) {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(db) = self.grad_buf(grads, *bias) {
                    for gr in g.chunks(d) {
                        db.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                    }
                }
                if let Some(dx) = self.grad_buf(grads, *x) {
                    let mut dxhat = vec![0.0f32; d];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let mean_d = dxhat.iter().sum::<f32>() / d as f32;
                        let mean_dh = dot(&dxhat, hr) / d as f32;
                        for j in 0..d {
                            dx[r * d + j] += rs * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                let xv = self.value(*x).data();
                if let Some(d) = self.grad_buf(grads, *x) {
                    for ((di, &gi), &xi) in d.iter_mut().zip(g).zip(xv) {
                        *di += gi * gelu_derivative(xi);
                    }
                }
            }
            Op::GatedGelu { x } => {
                let xv = self.value(*x).data();
                let half = *node.value.shape().last().unwrap();
                if let Some(d) = self.grad_buf(grads, *x) {
                    for ((xr, gr), dr) in xv
                        .chunks(2 * half)
                        .zip(g.chunks(half))
                        .zip(d.chunks_mut(2 * half))
                    {
                        for j in 0..half {
                            let (gate, val) = (xr[j], xr[half + j]);
                            dr[j] += gr[j] * val * gelu_derivative(gate);
                            dr[half + j] += gr[j] * gelu_scalar(gate);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let dim = self.shape(*table)[1];
                if let Some(d) = self.grad_buf(grads, *table) {
                    for (p, &id) in ids.iter().enumerate() {
                        axpy(
                            1.0,
                            &g[p * dim..(p + 1) * dim],
                            &mut d[id * dim..(id + 1) * dim],
                        );
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                selected,
                probs,
                count,
                ..
            } => {
                let vocab = *self.shape(*logits).last().unwrap();
                let scale = g[0] / *count as f32;
                if let Some(d) = self.grad_buf(grads, *logits) {
                    for (r, (&t, &s)) in targets.iter().zip(selected).enumerate() {
                        if !s {
                            continue;
                        }
                        let dr = &mut d[r * vocab..(r + 1) * vocab];
                        axpy(scale, &probs[r * vocab..(r + 1) * vocab], dr);
                        dr[t] -= scale;
                    }
                }
            }
        }
    }
}
