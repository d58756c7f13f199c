use super::kernels::{self, ConvGeometry};
use super::{ensure_finite, Tensor};
use crate::error::{Error, Result};
use crate::par::Exec;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geometry: ConvGeometry,
    },
    Relu(Var),
    AddBias(Var, Var),
    Reshape(Var),
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        /// softmax(logits) - target, already divided by the batch size.
        residual: Vec<f32>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations in execution order. Because a node can only refer to
/// nodes created before it, the node list is already topologically sorted.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    exec: Exec,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_exec(exec: Exec) -> Self {
        Self {
            nodes: Vec::new(),
            exec,
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.needs_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Shorthand for a leaf that requires a gradient.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.requires_grad(true))
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn grad(&self, var: Var) -> Option<&[f32]> {
        self.nodes[var.0].value.grad()
    }

    /// Removes and returns the tensor stored at a leaf (including its
    /// gradient), leaving an empty placeholder behind.
    pub fn take(&mut self, var: Var) -> Tensor {
        let node = &mut self.nodes[var.0];
        std::mem::replace(&mut node.value, Tensor::scalar(0.0))
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(
            self.exec,
            self.value(a).data(),
            self.value(b).data(),
            m,
            k,
            n,
        );
        ensure_finite("matmul", &out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), needs))
    }

    /// Cross-correlation of `input [N,C,H,W]` with `kernel [F,C,kh,kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (si, sk) = (self.shape(input), self.shape(kernel));
        let mismatch = || Error::Dimension {
            op: "conv2d",
            lhs: si.to_vec(),
            rhs: sk.to_vec(),
        };
        if si.len() != 4 || sk.len() != 4 || si[1] != sk[1] {
            return Err(mismatch());
        }
        if stride == 0 {
            return Err(Error::contract("conv2d stride must be at least 1"));
        }
        if sk[2] > si[2] + 2 * padding || sk[3] > si[3] + 2 * padding {
            return Err(mismatch());
        }
        let geometry = ConvGeometry {
            batch: si[0],
            in_channels: si[1],
            height: si[2],
            width: si[3],
            filters: sk[0],
            kernel_h: sk[2],
            kernel_w: sk[3],
            stride,
            padding,
        };
        let out = kernels::conv2d(
            self.exec,
            self.value(input).data(),
            self.value(kernel).data(),
            &geometry,
        );
        ensure_finite("conv2d", &out)?;
        let shape = vec![
            geometry.batch,
            geometry.filters,
            geometry.out_height(),
            geometry.out_width(),
        ];
        let needs = self.needs(input) || self.needs(kernel);
        let op = Op::Conv2d {
            input,
            kernel,
            geometry,
        };
        Ok(self.push(Tensor::from_parts(shape, out), op, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = v.data().iter().map(|&a| a.max(0.0)).collect();
        let shape = v.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::from_parts(shape, out), Op::Relu(x), needs)
    }

    /// Adds `bias [F]` along dimension 1 of `x [N,F,...]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let inner: usize = sx[2..].iter().product();
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for (i, chunk) in out.chunks_mut(inner).enumerate() {
            let bv = b[i % b.len()];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        ensure_finite("add_bias", &out)?;
        let shape = sx.to_vec();
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddBias(x, bias), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().requires_grad(false).reshape(shape)?;
        let value = Tensor::from_parts(value.shape().to_vec(), value.into_data());
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f32 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum(x), needs)
    }

    /// Mean cross-entropy of `logits [N,K]` against one-hot targets smoothed
    /// towards the uniform distribution: the true class gets
    /// `1 - smoothing + smoothing/K`, every other class `smoothing/K`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], smoothing: f32) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                lhs: s.to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::contract(format!(
                "label smoothing {smoothing} outside [0, 1)"
            )));
        }
        let (n, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                bound: k,
            });
        }
        let off = smoothing / k as f32;
        let on = 1.0 - smoothing + off;
        let data = self.value(logits).data();
        let mut residual = vec![0.0f32; n * k];
        let mut total = 0.0f64;
        for (row_idx, (row, res)) in data.chunks(k).zip(residual.chunks_mut(k)).enumerate() {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let denom: f32 = row.iter().map(|&z| (z - max).exp()).sum();
            let log_denom = denom.ln();
            let mut loss = 0.0f32;
            for (j, (&z, r)) in row.iter().zip(res.iter_mut()).enumerate() {
                let target = if j == labels[row_idx] { on } else { off };
                let log_p = z - max - log_denom;
                loss -= target * log_p;
                *r = (log_p.exp() - target) / n as f32;
            }
            total += f64::from(loss);
        }
        let loss = (total / n as f64) as f32;
        ensure_finite("softmax_cross_entropy", &[loss])?;
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, residual },
            needs,
        ))
    }

    /// Reverse pass from a scalar `loss`. Gradients of leaves that require
    /// them are added to whatever those leaves already hold.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adjoints: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(adj) = adjoints[idx].take() else {
                continue;
            };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            for (input, delta) in self.local_grads(idx, &adj) {
                match &mut adjoints[input.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot => *slot = Some(delta),
                }
            }
            let node = &mut self.nodes[idx];
            if matches!(node.op, Op::Leaf) && node.value.needs_grad() {
                node.value.accumulate_grad(&adj);
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` for each input that needs one.
    fn local_grads(&self, idx: usize, adj: &[f32]) -> Vec<(Var, Vec<f32>)> {
        let mut out = Vec::new();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(a) {
                    let g = kernels::matmul_grad_lhs(self.exec, adj, self.value(b).data(), m, k, n);
                    out.push((a, g));
                }
                if self.needs(b) {
                    let g = kernels::matmul_grad_rhs(self.exec, self.value(a).data(), adj, m, k, n);
                    out.push((b, g));
                }
            }
            &Op::Conv2d {
                input,
                kernel,
                ref geometry,
            } => {
                if self.needs(input) {
                    let g = kernels::conv2d_grad_input(self.exec, adj, self.value(kernel).data(), geometry);
                    out.push((input, g));
                }
                if self.needs(kernel) {
                    let g = kernels::conv2d_grad_kernel(self.exec, self.value(input).data(), adj, geometry);
                    out.push((kernel, g));
                }
            }
            &Op::Relu(x) => {
                let g = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(adj)
                    .map(|(&v, &a)| if v > 0.0 { a } else { 0.0 })
                    .collect();
                out.push((x, g));
            }
            &Op::AddBias(x, bias) => {
                if self.needs(x) {
                    out.push((x, adj.to_vec()));
                }
                if self.needs(bias) {
                    let sx = self.shape(x);
                    let inner: usize = sx[2..].iter().product();
                    let features = sx[1];
                    let mut g = vec![0.0f32; features];
                    for (i, chunk) in adj.chunks(inner).enumerate() {
                        g[i % features] += chunk.iter().sum::<f32>();
                    }
                    out.push((bias, g));
                }
            }
            &Op::Reshape(x) => out.push((x, adj.to_vec())),
            &Op::Sum(x) => out.push((x, vec![adj[0]; self.value(x).numel()])),
            Op::SoftmaxCrossEntropy { logits, residual } => {
                let scale = adj[0];
                out.push((*logits, residual.iter().map(|r| r * scale).collect()));
            }
        }
        out.retain(|(v, _)| self.needs(*v));
        out
    }
}
