//! Tape-based reverse-mode differentiation over 2-D tensors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, Params};
use super::tensor::{gemm, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Const,
    Param(ParamId),
    MatMul { a: Var, b: Var, tb: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    Im2Col { x: Var, kernel: usize, dilation: usize },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, index: Vec<usize> },
    MulConst(Var, Vec<f64>),
    Mse { pred: Var, target: Vec<f64> },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    /// Empty for parameter nodes, whose values live in [`Params`].
    value: Tensor,
    op: Op,
}

/// One recorded computation. Dropout is active only when built with an RNG.
pub struct Graph<'p> {
    params: &'p Params,
    nodes: Vec<Node>,
    rng: Option<ChaCha8Rng>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p Params) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            rng: None,
        }
    }

    pub fn training(params: &'p Params, rng: ChaCha8Rng) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tensor(v)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        match self.nodes[v.0].op {
            Op::Param(id) => {
                let b = self.params.get(id);
                (b.rows, b.cols)
            }
            _ => self.nodes[v.0].value.shape(),
        }
    }

    fn data(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.params.get(id).data,
            _ => &self.nodes[v.0].value.data,
        }
    }

    fn tensor(&self, v: Var) -> &Tensor {
        assert!(
            !matches!(self.nodes[v.0].op, Op::Param(_)),
            "parameter nodes have no owned tensor"
        );
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Tensor::zeros(0, 0), Op::Param(id))
    }

    /// Value copy of any node, parameters included.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        let (rows, cols) = self.shape(v);
        Tensor {
            rows,
            cols,
            data: self.data(v).to_vec(),
        }
    }

    /// `a * b`, or `a * b^T` when `tb`.
    pub fn matmul(&mut self, a: Var, b: Var, tb: bool) -> Var {
        let (m, k) = self.shape(a);
        let (br, bc) = self.shape(b);
        let (kb, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(k, kb, "matmul inner dimensions {m}x{k} * {kb}x{n}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), tb, 0.0, &mut out);
        self.push(Tensor { rows: m, cols: n, data: out }, Op::MatMul { a, b, tb })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let (rows, cols) = self.shape(a);
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        self.push(Tensor { rows, cols, data }, Op::Add(a, b))
    }

    /// Adds a `1 x cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (rows, cols) = self.shape(x);
        assert_eq!(self.shape(row), (1, cols), "add_row shapes");
        let r = self.data(row);
        let data = self
            .data(x)
            .chunks(cols.max(1))
            .flat_map(|xr| xr.iter().zip(r).map(|(a, b)| a + b))
            .collect();
        self.push(Tensor { rows, cols, data }, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let (rows, cols) = self.shape(x);
        let data = self.data(x).iter().map(|v| v * c).collect();
        self.push(Tensor { rows, cols, data }, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let data = self.data(x).iter().map(|v| v.max(0.0)).collect();
        self.push(Tensor { rows, cols, data }, Op::Relu(x))
    }

    /// Row-wise layer normalization with learned scale and shift (`1 x cols`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (rows, cols) = self.shape(x);
        let (g, b) = (self.data(gamma), self.data(beta));
        let mut xhat = Vec::with_capacity(rows * cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * cols);
        for r in self.data(x).chunks(cols) {
            let mean = r.iter().sum::<f64>() / cols as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in r.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        self.push(
            Tensor { rows, cols, data: out },
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let mut data = Vec::with_capacity(rows * cols);
        for r in self.data(x).chunks(cols) {
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            data.extend(e.into_iter().map(|v| v / s));
        }
        self.push(Tensor { rows, cols, data }, Op::SoftmaxRows(x))
    }

    /// Same-padded dilated patches: row `t` holds rows
    /// `t + (j - (kernel - 1) / 2) * dilation` for `j in 0..kernel`, zero outside.
    pub fn im2col(&mut self, x: Var, kernel: usize, dilation: usize) -> Var {
        assert!(kernel % 2 == 1, "odd kernels only");
        let (rows, cols) = self.shape(x);
        let half = (kernel - 1) / 2;
        let src = self.data(x);
        let mut out = vec![0.0; rows * kernel * cols];
        for t in 0..rows {
            for j in 0..kernel {
                let s = t as isize + (j as isize - half as isize) * dilation as isize;
                if s >= 0 && (s as usize) < rows {
                    let s = s as usize;
                    let dst = t * kernel * cols + j * cols;
                    out[dst..dst + cols].copy_from_slice(&src[s * cols..(s + 1) * cols]);
                }
            }
        }
        self.push(
            Tensor {
                rows,
                cols: kernel * cols,
                data: out,
            },
            Op::Im2Col { x, kernel, dilation },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.shape(p);
                assert_eq!(r, rows, "concat_cols rows");
                c
            })
            .collect();
        let cols: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        self.push(Tensor { rows, cols, data }, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.shape(x);
        assert!(start + len <= cols, "slice_cols range");
        let data = self
            .data(x)
            .chunks(cols)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        self.push(Tensor { rows, cols: len, data }, Op::SliceCols { x, start })
    }

    /// Output row `i` is row `index[i]` of `x`. Used for lookups and upsampling.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Var {
        let (rows, cols) = self.shape(x);
        let src = self.data(x);
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in &index {
            assert!(i < rows, "gather_rows index {i} >= {rows}");
            data.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        self.push(
            Tensor {
                rows: index.len(),
                cols,
                data,
            },
            Op::GatherRows { x, index },
        )
    }

    /// Inverted dropout; identity outside training or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if p <= 0.0 {
            return x;
        }
        if self.rng.is_none() {
            return x;
        }
        let (rows, cols) = self.shape(x);
        let rng = self.rng.as_mut().expect("training graph");
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..rows * cols)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.push(Tensor { rows, cols, data }, Op::MulConst(x, mask))
    }

    /// Mean squared error against a constant target, as a `1 x 1` node.
    pub fn mse(&mut self, pred: Var, target: Vec<f64>) -> Var {
        let p = self.data(pred);
        assert_eq!(p.len(), target.len(), "mse lengths");
        let n = p.len().max(1) as f64;
        let v = p.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        self.push(Tensor::scalar(v), Op::Mse { pred, target })
    }

    /// `sum_i w_i * x_i` over `1 x 1` nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let v = terms.iter().map(|&(x, w)| w * self.data(x)[0]).sum();
        self.push(Tensor::scalar(v), Op::WeightedSum(terms.to_vec()))
    }

    /// Gradients of the `1 x 1` node `loss` with respect to every parameter
    /// block, indexed like [`Params::blocks`]. Unused blocks get zeros.
    pub fn backward(&self, loss: Var) -> Vec<Vec<f64>> {
        assert_eq!(self.shape(loss), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = self.params.zeros_like();

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => {
                    for (o, v) in out[id.index()].iter_mut().zip(&g) {
                        *o += v;
                    }
                }
                &Op::MatMul { a, b, tb } => {
                    let (m, k) = self.shape(a);
                    let n = node.value.cols;
                    let (ad, bd) = (self.data(a), self.data(b));
                    let ga = acc(&mut grads, a, m * k);
                    // dA = dC * op(B)^T
                    gemm(m, n, k, &g, false, bd, !tb, 1.0, ga);
                    let gb = acc(&mut grads, b, k * n);
                    if tb {
                        // C = A B^T: dB = dC^T A  (n x k)
                        gemm(n, m, k, &g, true, ad, false, 1.0, gb);
                    } else {
                        // dB = A^T dC  (k x n)
                        gemm(k, m, n, ad, true, &g, false, 1.0, gb);
                    }
                }
                &Op::Add(a, b) => {
                    for v in [a, b] {
                        let t = acc(&mut grads, v, g.len());
                        for (o, x) in t.iter_mut().zip(&g) {
                            *o += x;
                        }
                    }
                }
                &Op::AddRow(x, row) => {
                    let cols = node.value.cols;
                    let t = acc(&mut grads, x, g.len());
                    for (o, v) in t.iter_mut().zip(&g) {
                        *o += v;
                    }
                    let r = acc(&mut grads, row, cols);
                    for gr in g.chunks(cols) {
                        for (o, v) in r.iter_mut().zip(gr) {
                            *o += v;
                        }
                    }
                }
                &Op::Scale(x, c) => {
                    let t = acc(&mut grads, x, g.len());
                    for (o, v) in t.iter_mut().zip(&g) {
                        *o += c * v;
                    }
                }
                &Op::Relu(x) => {
                    let xd = self.data(x);
                    let t = acc(&mut grads, x, g.len());
                    for ((o, v), xv) in t.iter_mut().zip(&g).zip(xd) {
                        if *xv > 0.0 {
                            *o += v;
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let cols = node.value.cols;
                    let gd = self.data(*gamma);
                    let mut dgamma = vec![0.0; cols];
                    let mut dbeta = vec![0.0; cols];
                    let mut dx = vec![0.0; g.len()];
                    let nf = cols as f64;
                    for (r, (gr, hr)) in g.chunks(cols).zip(xhat.chunks(cols)).enumerate() {
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for j in 0..cols {
                            dgamma[j] += gr[j] * hr[j];
                            dbeta[j] += gr[j];
                            let d = gr[j] * gd[j];
                            sum_d += d;
                            sum_dh += d * hr[j];
                        }
                        let is = inv_std[r];
                        for j in 0..cols {
                            let d = gr[j] * gd[j];
                            dx[r * cols + j] = is / nf * (nf * d - sum_d - hr[j] * sum_dh);
                        }
                    }
                    for (v, d) in [(*x, dx), (*gamma, dgamma), (*beta, dbeta)] {
                        let t = acc(&mut grads, v, d.len());
                        for (o, x) in t.iter_mut().zip(&d) {
                            *o += x;
                        }
                    }
                }
                &Op::SoftmaxRows(x) => {
                    let cols = node.value.cols;
                    let t = acc(&mut grads, x, g.len());
                    for ((tr, gr), yr) in t.chunks_mut(cols).zip(g.chunks(cols)).zip(node.value.data.chunks(cols)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            tr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                &Op::Im2Col { x, kernel, dilation } => {
                    let (rows, cols) = self.shape(x);
                    let half = (kernel - 1) / 2;
                    let t = acc(&mut grads, x, rows * cols);
                    for r in 0..rows {
                        for j in 0..kernel {
                            let s = r as isize + (j as isize - half as isize) * dilation as isize;
                            if s >= 0 && (s as usize) < rows {
                                let s = s as usize;
                                let src = r * kernel * cols + j * cols;
                                for c in 0..cols {
                                    t[s * cols + c] += g[src + c];
                                }
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = node.value.rows;
                    let cols = node.value.cols;
                    let mut off = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        let t = acc(&mut grads, p, rows * w);
                        for r in 0..rows {
                            for c in 0..w {
                                t[r * w + c] += g[r * cols + off + c];
                            }
                        }
                        off += w;
                    }
                }
                &Op::SliceCols { x, start } => {
                    let (rows, cols) = self.shape(x);
                    let w = node.value.cols;
                    let t = acc(&mut grads, x, rows * cols);
                    for r in 0..rows {
                        for c in 0..w {
                            t[r * cols + start + c] += g[r * w + c];
                        }
                    }
                }
                Op::GatherRows { x, index } => {
                    let (rows, cols) = self.shape(*x);
                    let t = acc(&mut grads, *x, rows * cols);
                    for (i, &src) in index.iter().enumerate() {
                        for c in 0..cols {
                            t[src * cols + c] += g[i * cols + c];
                        }
                    }
                }
                Op::MulConst(x, mask) => {
                    let t = acc(&mut grads, *x, g.len());
                    for ((o, v), m) in t.iter_mut().zip(&g).zip(mask) {
                        *o += v * m;
                    }
                }
                Op::Mse { pred, target } => {
                    let p = self.data(*pred);
                    let n = p.len().max(1) as f64;
                    let scale = 2.0 * g[0] / n;
                    let t = acc(&mut grads, *pred, p.len());
                    for ((o, a), b) in t.iter_mut().zip(p).zip(target) {
                        *o += scale * (a - b);
                    }
                }
                Op::WeightedSum(terms) => {
                    for &(x, w) in terms {
                        acc(&mut grads, x, 1)[0] += w * g[0];
                    }
                }
            }
        }
        out
    }
}
