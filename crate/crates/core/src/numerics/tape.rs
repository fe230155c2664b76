use super::{NumericsError, Phase};
use crate::numerics::{RngState, Tensor};

/// Handle to a value stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Deliberately corrupted gradient rules, used as negative controls for the
/// finite-difference verification suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultInjection {
    /// Drop the `x·pdf(x)` term from the GELU derivative.
    GeluGradient,
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    is_leaf: bool,
}

enum Op {
    /// `a` viewed as `[rows, k]` (leading dims flattened) times `b: [k, n]`.
    Matmul { a: Var, b: Var },
    /// Per-batch product of `a: [B, m, k]` with `b: [B, k, n]`, or with the
    /// rows of `b: [B, n, k]` when `transpose_b`.
    BatchMatmul { a: Var, b: Var, transpose_b: bool },
    Add { a: Var, b: Var },
    /// `x: [..., d]` plus `bias: [d]` broadcast over leading dims.
    AddBias { x: Var, bias: Var },
    /// `x: [b, l, d]` plus `rows: [l, d]` broadcast over the batch dim.
    AddRows { x: Var, rows: Var },
    Scale { x: Var, c: f64 },
    Mul { a: Var, b: Var },
    Gelu { x: Var },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    /// Mask entries are 0.0 or 1/(1-p); identity in eval mode never records.
    Dropout { x: Var, mask: Vec<f64> },
    SoftmaxLastDim { x: Var },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    EmbedLookup { table: Var, ids: Vec<usize> },
    Reshape { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    /// `x: [b, l, d]` -> `[b, d]` at sequence position `pos`.
    SelectPos { x: Var, pos: usize },
    /// `x: [r, d]` -> `[len, d]`, rows `start..start+len`.
    SliceRows { x: Var, start: usize, len: usize },
    Sum { x: Var },
}

struct OpRecord {
    op: Op,
    out: Var,
    name: &'static str,
}

/// Record of primitive operations forming one differentiable forward pass.
///
/// Ops are appended in execution order, so inputs of every op precede it;
/// [`Tape::backward`] replays them once in reverse, accumulating gradients.
/// A tape is single-use: running backward twice is an error.
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<OpRecord>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    fault: Option<FaultInjection>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn ensure_finite(name: &'static str, phase: Phase, data: &[f64]) -> Result<(), NumericsError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite { op: name, phase })
    }
}

/// out[m,n] = sum_k a[m,k] * b[k,n]
fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// out[m,n] = sum_k a[m,k] * b[n,k]   (b used transposed)
fn matmul_nt_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// out[k,n] = sum_m a[m,k] * g[m,n]   (a used transposed)
fn matmul_tn_kernel(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for r in 0..m {
        let a_row = &a[r * k..(r + 1) * k];
        let g_row = &g[r * n..(r + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
    out
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF via the exact error function.
fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            fault: None,
        }
    }

    /// Tape with a corrupted gradient rule, for negative-control checks.
    pub fn with_fault(fault: FaultInjection) -> Self {
        let mut t = Tape::new();
        t.fault = Some(fault);
        t
    }

    // ---- leaves ---------------------------------------------------------

    fn push_leaf(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            data,
            shape,
            requires_grad,
            is_leaf: true,
        });
        self.grads.push(None);
        Var(id)
    }

    /// Registers a tensor as a leaf, respecting its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad)
    }

    /// Registers a tensor as a differentiable parameter leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), true)
    }

    /// Registers a tensor as a non-differentiable constant leaf.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn constant_from(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Var, NumericsError> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(self.constant(&t))
    }

    // ---- accessors ------------------------------------------------------

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a one-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    /// Gradient accumulated for `v`, if any flowed to it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::from_vec(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
            .expect("tape nodes always hold consistent shapes")
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Node values in registration order. Lets tests confirm that parameter
    /// registration and traversal agree on ordering.
    pub fn node_values(&self) -> impl Iterator<Item = &[f64]> {
        self.nodes.iter().map(|n| n.data.as_slice())
    }

    /// Handle to the node registered at `index`, counting from tape start.
    pub fn var(&self, index: usize) -> Option<Var> {
        (index < self.nodes.len()).then_some(Var(index))
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_op(
        &mut self,
        name: &'static str,
        op: Op,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
    ) -> Result<Var, NumericsError> {
        ensure_finite(name, Phase::Forward, &data)?;
        let id = self.nodes.len();
        self.nodes.push(Node {
            data,
            shape,
            requires_grad,
            is_leaf: false,
        });
        self.grads.push(None);
        self.ops.push(OpRecord {
            op,
            out: Var(id),
            name,
        });
        Ok(Var(id))
    }

    // ---- forward ops ----------------------------------------------------

    /// Matrix product. `a` may carry extra leading dims, which are treated
    /// as rows: `[..., k] x [k, n] -> [..., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ashape.len() < 2 || bshape.len() != 2 || ashape[ashape.len() - 1] != bshape[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: ashape,
                rhs: bshape,
            });
        }
        let k = bshape[0];
        let n = bshape[1];
        let rows = self.nodes[a.0].data.len() / k;
        let data = matmul_kernel(&self.nodes[a.0].data, &self.nodes[b.0].data, rows, k, n);
        let mut out_shape = ashape[..ashape.len() - 1].to_vec();
        out_shape.push(n);
        let rg = self.requires(a) || self.requires(b);
        self.push_op("matmul", Op::Matmul { a, b }, out_shape, data, rg)
    }

    /// Batched matrix product over equal leading batch dims.
    pub fn batch_matmul(
        &mut self,
        a: Var,
        b: Var,
        transpose_b: bool,
    ) -> Result<Var, NumericsError> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || NumericsError::ShapeMismatch {
            op: "batch_matmul",
            lhs: ashape.clone(),
            rhs: bshape.clone(),
        };
        if ashape.len() != 3 || bshape.len() != 3 || ashape[0] != bshape[0] {
            return Err(mismatch());
        }
        let (batch, m, k) = (ashape[0], ashape[1], ashape[2]);
        let n = if transpose_b {
            if bshape[2] != k {
                return Err(mismatch());
            }
            bshape[1]
        } else {
            if bshape[1] != k {
                return Err(mismatch());
            }
            bshape[2]
        };
        let mut data = Vec::with_capacity(batch * m * n);
        for bi in 0..batch {
            let a_slab = &self.nodes[a.0].data[bi * m * k..(bi + 1) * m * k];
            let b_slab = &self.nodes[b.0].data[bi * bshape[1] * bshape[2]..];
            let b_slab = &b_slab[..bshape[1] * bshape[2]];
            let prod = if transpose_b {
                matmul_nt_kernel(a_slab, b_slab, m, k, n)
            } else {
                matmul_kernel(a_slab, b_slab, m, k, n)
            };
            data.extend_from_slice(&prod);
        }
        let rg = self.requires(a) || self.requires(b);
        self.push_op(
            "batch_matmul",
            Op::BatchMatmul { a, b, transpose_b },
            vec![batch, m, n],
            data,
            rg,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericsError::ShapeMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires(a) || self.requires(b);
        self.push_op("add", Op::Add { a, b }, shape, data, rg)
    }

    /// Adds `bias: [d]` to every length-`d` row of `x: [..., d]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let xshape = self.shape(x).to_vec();
        let bshape = self.shape(bias).to_vec();
        let d = *xshape.last().unwrap_or(&0);
        if bshape.len() != 1 || bshape[0] != d || xshape.is_empty() {
            return Err(NumericsError::ShapeMismatch {
                op: "add_bias",
                lhs: xshape,
                rhs: bshape,
            });
        }
        let bdata = self.nodes[bias.0].data.clone();
        let data: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + bdata[i % d])
            .collect();
        let rg = self.requires(x) || self.requires(bias);
        self.push_op("add_bias", Op::AddBias { x, bias }, xshape, data, rg)
    }

    /// Adds `rows: [l, d]` to every batch slab of `x: [b, l, d]`.
    pub fn add_rows(&mut self, x: Var, rows: Var) -> Result<Var, NumericsError> {
        let xshape = self.shape(x).to_vec();
        let rshape = self.shape(rows).to_vec();
        if xshape.len() != 3 || rshape.len() != 2 || xshape[1] != rshape[0] || xshape[2] != rshape[1]
        {
            return Err(NumericsError::ShapeMismatch {
                op: "add_rows",
                lhs: xshape,
                rhs: rshape,
            });
        }
        let slab = rshape[0] * rshape[1];
        let rdata = self.nodes[rows.0].data.clone();
        let data: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + rdata[i % slab])
            .collect();
        let rg = self.requires(x) || self.requires(rows);
        self.push_op("add_rows", Op::AddRows { x, rows }, xshape, data, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, NumericsError> {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires(x);
        self.push_op("scale", Op::Scale { x, c }, shape, data, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericsError::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires(a) || self.requires(b);
        self.push_op("mul", Op::Mul { a, b }, shape, data, rg)
    }

    /// Exact GELU, `y = x * cdf(x)` with the error-function CDF (no tanh
    /// approximation).
    pub fn gelu(&mut self, x: Var) -> Result<Var, NumericsError> {
        let data: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| v * normal_cdf(v))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires(x);
        self.push_op("gelu", Op::Gelu { x }, shape, data, rg)
    }

    /// Mean-0/var-1 normalization over the last dim followed by an affine
    /// gain/bias, both of shape `[d]`. Variance is the biased (1/d) estimate.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, NumericsError> {
        let xshape = self.shape(x).to_vec();
        let d = *xshape.last().unwrap_or(&0);
        if d == 0 {
            return Err(NumericsError::EmptyDimension {
                op: "layer_norm",
                shape: xshape,
            });
        }
        for (side, v) in [("gain", gain), ("bias", bias)] {
            let s = self.shape(v);
            if s != [d] {
                let _ = side;
                return Err(NumericsError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: xshape,
                    rhs: s.to_vec(),
                });
            }
        }
        let rows = self.nodes[x.0].data.len() / d;
        let mut normalized = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut data = vec![0.0; rows * d];
        {
            let xd = &self.nodes[x.0].data;
            let g = &self.nodes[gain.0].data;
            let b = &self.nodes[bias.0].data;
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..d {
                    let nh = (row[j] - mean) * is;
                    normalized[r * d + j] = nh;
                    data[r * d + j] = nh * g[j] + b[j];
                }
            }
        }
        let rg = self.requires(x) || self.requires(gain) || self.requires(bias);
        self.push_op(
            "layer_norm",
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            xshape,
            data,
            rg,
        )
    }

    /// Inverted dropout: with `training`, zeroes each element with
    /// probability `p` and scales survivors by `1/(1-p)`. In eval mode it is
    /// the exact identity and records nothing.
    pub fn dropout(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut RngState,
    ) -> Result<Var, NumericsError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::InvalidProbability { p });
        }
        if !training {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.nodes[x.0].data.len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep_scale })
            .collect();
        let data: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires(x);
        self.push_op("dropout", Op::Dropout { x, mask }, shape, data, rg)
    }

    /// Row-wise softmax over the last dim, stabilized by max subtraction.
    pub fn softmax_last_dim(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xshape = self.shape(x).to_vec();
        let d = *xshape.last().unwrap_or(&0);
        if d == 0 {
            return Err(NumericsError::EmptyDimension {
                op: "softmax",
                shape: xshape,
            });
        }
        let rows = self.nodes[x.0].data.len() / d;
        let mut data = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &self.nodes[x.0].data[r * d..(r + 1) * d];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..d {
                let e = (row[j] - max).exp();
                data[r * d + j] = e;
                sum += e;
            }
            for j in 0..d {
                data[r * d + j] /= sum;
            }
        }
        let rg = self.requires(x);
        self.push_op("softmax", Op::SoftmaxLastDim { x }, xshape, data, rg)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, stabilized by
    /// max subtraction. Returns a scalar.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<Var, NumericsError> {
        let lshape = self.shape(logits).to_vec();
        if lshape.len() != 2 {
            return Err(NumericsError::BadRank {
                op: "softmax_cross_entropy",
                shape: lshape,
            });
        }
        let (b, classes) = (lshape[0], lshape[1]);
        if labels.len() != b {
            return Err(NumericsError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: lshape,
                rhs: vec![labels.len()],
            });
        }
        for (row, &lab) in labels.iter().enumerate() {
            if lab >= classes {
                return Err(NumericsError::LabelOutOfRange {
                    label: lab,
                    classes,
                    row,
                });
            }
        }
        let mut probs = vec![0.0; b * classes];
        let mut total = 0.0;
        for r in 0..b {
            let row = &self.nodes[logits.0].data[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..classes {
                let e = (row[j] - max).exp();
                probs[r * classes + j] = e;
                sum += e;
            }
            for j in 0..classes {
                probs[r * classes + j] /= sum;
            }
            // -log p[label] computed from the stabilized log-sum-exp, which
            // stays exact even when p underflows.
            total += max + sum.ln() - row[labels[r]];
        }
        let loss = total / b as f64;
        let rg = self.requires(logits);
        self.push_op(
            "softmax_cross_entropy",
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            vec![],
            vec![loss],
            rg,
        )
    }

    /// Row lookup: `out[i, :] = table[ids[i], :]`, reshaped to
    /// `leading_shape x [d]`.
    pub fn embed_lookup(
        &mut self,
        table: Var,
        ids: &[usize],
        leading_shape: &[usize],
    ) -> Result<Var, NumericsError> {
        let tshape = self.shape(table).to_vec();
        if tshape.len() != 2 {
            return Err(NumericsError::BadRank {
                op: "embed_lookup",
                shape: tshape,
            });
        }
        let (vocab, d) = (tshape[0], tshape[1]);
        let count: usize = leading_shape.iter().product();
        if count != ids.len() {
            return Err(NumericsError::DataLength {
                op: "embed_lookup",
                len: ids.len(),
                shape: leading_shape.to_vec(),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(NumericsError::IndexOutOfRange {
                    op: "embed_lookup",
                    index: id,
                    extent: vocab,
                });
            }
            data.extend_from_slice(&self.nodes[table.0].data[id * d..(id + 1) * d]);
        }
        let mut out_shape = leading_shape.to_vec();
        out_shape.push(d);
        let rg = self.requires(table);
        self.push_op(
            "embed_lookup",
            Op::EmbedLookup {
                table,
                ids: ids.to_vec(),
            },
            out_shape,
            data,
            rg,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].data.len() || shape.iter().any(|&d| d == 0) {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let data = self.nodes[x.0].data.clone();
        let rg = self.requires(x);
        self.push_op("reshape", Op::Reshape { x }, shape, data, rg)
    }

    /// Axis permutation: `out_shape[j] = in_shape[perm[j]]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var, NumericsError> {
        let in_shape = self.shape(x).to_vec();
        let valid = perm.len() == in_shape.len() && {
            let mut seen = vec![false; perm.len()];
            perm.iter().all(|&p| {
                p < in_shape.len() && !std::mem::replace(&mut seen[p], true)
            })
        };
        if !valid {
            return Err(NumericsError::ShapeMismatch {
                op: "permute",
                lhs: in_shape,
                rhs: perm.to_vec(),
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let data = permute_data(&self.nodes[x.0].data, &in_shape, perm);
        let rg = self.requires(x);
        self.push_op(
            "permute",
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            out_shape,
            data,
            rg,
        )
    }

    /// Extracts sequence position `pos`: `x: [b, l, d] -> [b, d]`.
    pub fn select_position(&mut self, x: Var, pos: usize) -> Result<Var, NumericsError> {
        let xshape = self.shape(x).to_vec();
        if xshape.len() != 3 {
            return Err(NumericsError::BadRank {
                op: "select_position",
                shape: xshape,
            });
        }
        let (b, l, d) = (xshape[0], xshape[1], xshape[2]);
        if pos >= l {
            return Err(NumericsError::IndexOutOfRange {
                op: "select_position",
                index: pos,
                extent: l,
            });
        }
        let mut data = Vec::with_capacity(b * d);
        for bi in 0..b {
            let off = (bi * l + pos) * d;
            data.extend_from_slice(&self.nodes[x.0].data[off..off + d]);
        }
        let rg = self.requires(x);
        self.push_op(
            "select_position",
            Op::SelectPos { x, pos },
            vec![b, d],
            data,
            rg,
        )
    }

    /// Rows `start..start+len` of a matrix `x: [r, d]`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let xshape = self.shape(x).to_vec();
        if xshape.len() != 2 {
            return Err(NumericsError::BadRank {
                op: "slice_rows",
                shape: xshape,
            });
        }
        let (r, d) = (xshape[0], xshape[1]);
        if start + len > r || len == 0 {
            return Err(NumericsError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                extent: r,
            });
        }
        let data = self.nodes[x.0].data[start * d..(start + len) * d].to_vec();
        let rg = self.requires(x);
        self.push_op(
            "slice_rows",
            Op::SliceRows { x, start, len },
            vec![len, d],
            data,
            rg,
        )
    }

    /// Sum of all elements; returns a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let total: f64 = self.nodes[x.0].data.iter().sum();
        let rg = self.requires(x);
        self.push_op("sum", Op::Sum { x }, vec![], vec![total], rg)
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep seeding `d loss / d loss = 1`. Populates gradients for
    /// every leaf that requires one; leaves outside the loss's data path get
    /// explicit zeros. Errors if the loss is not scalar or if this tape has
    /// already run backward.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.backward_done {
            return Err(NumericsError::BackwardAlreadyRun);
        }
        self.backward_done = true;
        if self.nodes[loss.0].data.len() != 1 {
            return Err(NumericsError::NotScalar {
                op: "backward",
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..self.ops.len()).rev() {
            let out = self.ops[idx].out;
            if self.grads[out.0].is_none() {
                continue;
            }
            self.backward_op(idx)?;
        }
        for i in 0..self.nodes.len() {
            if self.nodes[i].is_leaf && self.nodes[i].requires_grad && self.grads[i].is_none() {
                self.grads[i] = Some(vec![0.0; self.nodes[i].data.len()]);
            }
        }
        Ok(())
    }

    fn accumulate(
        &mut self,
        name: &'static str,
        v: Var,
        contribution: Vec<f64>,
    ) -> Result<(), NumericsError> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        ensure_finite(name, Phase::Backward, &contribution)?;
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(&contribution) {
                    *a += c;
                }
            }
            None => self.grads[v.0] = Some(contribution),
        }
        Ok(())
    }

    fn backward_op(&mut self, idx: usize) -> Result<(), NumericsError> {
        let out = self.ops[idx].out;
        let name = self.ops[idx].name;
        let g = self.grads[out.0].clone().expect("checked by caller");
        match &self.ops[idx].op {
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let k = self.shape(b)[0];
                let n = self.shape(b)[1];
                let rows = self.nodes[a.0].data.len() / k;
                if self.requires(a) {
                    let da = matmul_nt_kernel(&g, &self.nodes[b.0].data, rows, n, k);
                    self.accumulate(name, a, da)?;
                }
                if self.requires(b) {
                    let db = matmul_tn_kernel(&self.nodes[a.0].data, &g, rows, k, n);
                    self.accumulate(name, b, db)?;
                }
            }
            Op::BatchMatmul { a, b, transpose_b } => {
                let (a, b, tb) = (*a, *b, *transpose_b);
                let (batch, m, k) = {
                    let s = self.shape(a);
                    (s[0], s[1], s[2])
                };
                let n = self.shape(out)[2];
                let b_slab_len = self.shape(b)[1] * self.shape(b)[2];
                let mut da = vec![0.0; batch * m * k];
                let mut db = vec![0.0; batch * b_slab_len];
                for bi in 0..batch {
                    let g_s = &g[bi * m * n..(bi + 1) * m * n];
                    let a_s = &self.nodes[a.0].data[bi * m * k..(bi + 1) * m * k];
                    let b_s = &self.nodes[b.0].data[bi * b_slab_len..(bi + 1) * b_slab_len];
                    if tb {
                        // out = A Bᵀ: dA = G B, dB = Gᵀ A
                        da[bi * m * k..(bi + 1) * m * k]
                            .copy_from_slice(&matmul_kernel(g_s, b_s, m, n, k));
                        db[bi * b_slab_len..(bi + 1) * b_slab_len]
                            .copy_from_slice(&matmul_tn_kernel(g_s, a_s, m, n, k));
                    } else {
                        // out = A B: dA = G Bᵀ, dB = Aᵀ G
                        da[bi * m * k..(bi + 1) * m * k]
                            .copy_from_slice(&matmul_nt_kernel(g_s, b_s, m, n, k));
                        db[bi * b_slab_len..(bi + 1) * b_slab_len]
                            .copy_from_slice(&matmul_tn_kernel(a_s, g_s, m, k, n));
                    }
                }
                if self.requires(a) {
                    self.accumulate(name, a, da)?;
                }
                if self.requires(b) {
                    self.accumulate(name, b, db)?;
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                if self.requires(a) {
                    self.accumulate(name, a, g.clone())?;
                }
                if self.requires(b) {
                    self.accumulate(name, b, g)?;
                }
            }
            Op::AddBias { x, bias } => {
                let (x, bias) = (*x, *bias);
                let d = self.shape(bias)[0];
                if self.requires(bias) {
                    let mut db = vec![0.0; d];
                    for (i, gv) in g.iter().enumerate() {
                        db[i % d] += gv;
                    }
                    self.accumulate(name, bias, db)?;
                }
                if self.requires(x) {
                    self.accumulate(name, x, g)?;
                }
            }
            Op::AddRows { x, rows } => {
                let (x, rows) = (*x, *rows);
                let slab = self.nodes[rows.0].data.len();
                if self.requires(rows) {
                    let mut dr = vec![0.0; slab];
                    for (i, gv) in g.iter().enumerate() {
                        dr[i % slab] += gv;
                    }
                    self.accumulate(name, rows, dr)?;
                }
                if self.requires(x) {
                    self.accumulate(name, x, g)?;
                }
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                if self.requires(x) {
                    let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    self.accumulate(name, x, dx)?;
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.requires(a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[b.0].data)
                        .map(|(gv, bv)| gv * bv)
                        .collect();
                    self.accumulate(name, a, da)?;
                }
                if self.requires(b) {
                    let db: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].data)
                        .map(|(gv, av)| gv * av)
                        .collect();
                    self.accumulate(name, b, db)?;
                }
            }
            Op::Gelu { x } => {
                let x = *x;
                if self.requires(x) {
                    let corrupt = self.fault == Some(FaultInjection::GeluGradient);
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[x.0].data)
                        .map(|(gv, &xv)| {
                            let slope = if corrupt {
                                normal_cdf(xv)
                            } else {
                                normal_cdf(xv) + xv * normal_pdf(xv)
                            };
                            gv * slope
                        })
                        .collect();
                    self.accumulate(name, x, dx)?;
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let d = self.shape(gain)[0];
                let rows = normalized.len() / d;
                let gain_data = self.nodes[gain.0].data.clone();
                let normalized = normalized.clone();
                let inv_std = inv_std.clone();
                if self.requires(gain) {
                    let mut dg = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g[r * d + j] * normalized[r * d + j];
                        }
                    }
                    self.accumulate(name, gain, dg)?;
                }
                if self.requires(bias) {
                    let mut db = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            db[j] += g[r * d + j];
                        }
                    }
                    self.accumulate(name, bias, db)?;
                }
                if self.requires(x) {
                    let mut dx = vec![0.0; rows * d];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let nr = &normalized[r * d..(r + 1) * d];
                        let mut mean_h = 0.0;
                        let mut mean_hn = 0.0;
                        for j in 0..d {
                            let h = gr[j] * gain_data[j];
                            mean_h += h;
                            mean_hn += h * nr[j];
                        }
                        mean_h /= d as f64;
                        mean_hn /= d as f64;
                        for j in 0..d {
                            let h = gr[j] * gain_data[j];
                            dx[r * d + j] = inv_std[r] * (h - mean_h - nr[j] * mean_hn);
                        }
                    }
                    self.accumulate(name, x, dx)?;
                }
            }
            Op::Dropout { x, mask } => {
                let x = *x;
                if self.requires(x) {
                    let dx: Vec<f64> = g.iter().zip(mask).map(|(gv, m)| gv * m).collect();
                    self.accumulate(name, x, dx)?;
                }
            }
            Op::SoftmaxLastDim { x } => {
                let x = *x;
                if self.requires(x) {
                    let p = self.nodes[out.0].data.clone();
                    let d = *self.shape(out).last().unwrap();
                    let rows = p.len() / d;
                    let mut dx = vec![0.0; p.len()];
                    for r in 0..rows {
                        let base = r * d;
                        let dot: f64 = (0..d).map(|j| g[base + j] * p[base + j]).sum();
                        for j in 0..d {
                            dx[base + j] = p[base + j] * (g[base + j] - dot);
                        }
                    }
                    self.accumulate(name, x, dx)?;
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let logits = *logits;
                if self.requires(logits) {
                    let b = labels.len();
                    let classes = probs.len() / b;
                    let gs = g[0];
                    let mut dl = vec![0.0; probs.len()];
                    for (r, &lab) in labels.iter().enumerate() {
                        for j in 0..classes {
                            let indicator = if j == lab { 1.0 } else { 0.0 };
                            dl[r * classes + j] =
                                gs * (probs[r * classes + j] - indicator) / b as f64;
                        }
                    }
                    self.accumulate(name, logits, dl)?;
                }
            }
            Op::EmbedLookup { table, ids } => {
                let table = *table;
                if self.requires(table) {
                    let d = self.shape(table)[1];
                    let mut dt = vec![0.0; self.nodes[table.0].data.len()];
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] += g[i * d + j];
                        }
                    }
                    self.accumulate(name, table, dt)?;
                }
            }
            Op::Reshape { x } => {
                let x = *x;
                if self.requires(x) {
                    self.accumulate(name, x, g)?;
                }
            }
            Op::Permute { x, perm } => {
                let (x, perm) = (*x, perm.clone());
                if self.requires(x) {
                    let in_shape = self.shape(x).to_vec();
                    let mut dx = vec![0.0; g.len()];
                    scatter_permuted(&g, &mut dx, &in_shape, &perm);
                    self.accumulate(name, x, dx)?;
                }
            }
            Op::SelectPos { x, pos } => {
                let (x, pos) = (*x, *pos);
                if self.requires(x) {
                    let s = self.shape(x).to_vec();
                    let (b, l, d) = (s[0], s[1], s[2]);
                    let mut dx = vec![0.0; b * l * d];
                    for bi in 0..b {
                        let off = (bi * l + pos) * d;
                        dx[off..off + d].copy_from_slice(&g[bi * d..(bi + 1) * d]);
                    }
                    self.accumulate(name, x, dx)?;
                }
            }
            Op::SliceRows { x, start, len } => {
                let (x, start, len) = (*x, *start, *len);
                if self.requires(x) {
                    let d = self.shape(x)[1];
                    let mut dx = vec![0.0; self.nodes[x.0].data.len()];
                    dx[start * d..(start + len) * d].copy_from_slice(&g);
                    self.accumulate(name, x, dx)?;
                }
            }
            Op::Sum { x } => {
                let x = *x;
                if self.requires(x) {
                    let dx = vec![g[0]; self.nodes[x.0].data.len()];
                    self.accumulate(name, x, dx)?;
                }
            }
        }
        Ok(())
    }
}

fn permute_data(data: &[f64], in_shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    scatter(data, &mut out, in_shape, perm, false);
    out
}

fn scatter_permuted(g: &[f64], dx: &mut [f64], in_shape: &[usize], perm: &[usize]) {
    scatter(g, dx, in_shape, perm, true);
}

/// Walks every output coordinate of the permuted view. With
/// `reverse = false` copies input into the permuted output; with
/// `reverse = true` copies the (gradient) output back into input layout.
fn scatter(src: &[f64], dst: &mut [f64], in_shape: &[usize], perm: &[usize], reverse: bool) {
    let rank = in_shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let numel = src.len();
    let mut out_coords = vec![0usize; rank];
    for out_flat in 0..numel {
        // decompose out_flat into out coords
        let mut rem = out_flat;
        for j in (0..rank).rev() {
            out_coords[j] = rem % out_shape[j];
            rem /= out_shape[j];
        }
        let mut in_flat = 0;
        for j in 0..rank {
            in_flat += out_coords[j] * in_strides[perm[j]];
        }
        if reverse {
            dst[in_flat] += src[out_flat];
        } else {
            dst[out_flat] = src[in_flat];
        }
    }
}
