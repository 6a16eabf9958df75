//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records operations as they are evaluated. Parameters are read
//! in place from the borrowed parameter slice; [`Graph::backward`] returns
//! gradients for them only. One graph is built per sequence and discarded
//! after its backward pass.

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};

pub type NodeId = usize;

const LAYER_NORM_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Param(usize),
    Constant,
    Gather {
        param: usize,
        ids: Vec<u32>,
    },
    Add(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulBT(NodeId, NodeId),
    Scale(NodeId, f64),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Tensor,
        rstd: Vec<f64>,
    },
    Gelu(NodeId),
    Softmax(NodeId),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    SliceRows {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    /// Per row: `x[r, targets[r]] - logsumexp(x[r])`; keeps the softmax.
    LogSoftmaxPick {
        x: NodeId,
        targets: Vec<u32>,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match (&self.nodes[id].value, &self.nodes[id].op) {
            (Some(v), _) => v,
            (None, Op::Param(i)) => &self.params[*i],
            _ => unreachable!("only parameter nodes borrow their value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        self.nodes.len() - 1
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        if let Some(id) = self.param_nodes[index] {
            return id;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(index),
        });
        let id = self.nodes.len() - 1;
        self.param_nodes[index] = Some(id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// Rows of parameter `param` selected by `ids`.
    pub fn gather(&mut self, param: usize, ids: &[u32]) -> NodeId {
        let table = &self.params[param];
        let mut out = Tensor::zeros(ids.len(), table.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(table.row(id as usize));
        }
        self.push(
            out,
            Op::Gather {
                param,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(av.rows, bv.cols);
        matmul_acc(av, bv, &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(av.rows, bv.rows);
        matmul_bt_acc(av, bv, &mut out);
        self.push(out, Op::MatMulBT(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let mut out = self.value(a).clone();
        out.scale_assign(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let n = xv.cols as f64;
        let mut xhat = Tensor::zeros(xv.rows, xv.cols);
        let mut out = Tensor::zeros(xv.rows, xv.cols);
        let mut rstd = Vec::with_capacity(xv.rows);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(s);
            for c in 0..xv.cols {
                let h = (row[c] - mean) * s;
                xhat.data[r * xv.cols + c] = h;
                out.data[r * xv.cols + c] = h * g.data[c] + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            let x = *v;
            *v = 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh());
        }
        self.push(out, Op::Gelu(x))
    }

    /// Row-wise softmax. Entries equal to `-inf` (masked) get probability 0.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(out, Op::Softmax(x))
    }

    /// Adds a constant mask (typically 0 / `-inf`) to `x`.
    pub fn add_mask(&mut self, x: NodeId, mask: Tensor) -> NodeId {
        let m = self.constant(mask);
        self.add(x, m)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.rows, len);
        for r in 0..xv.rows {
            out.row_mut(r)
                .copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xv = self.value(x);
        let out = Tensor::from_vec(
            len,
            xv.cols,
            xv.data[start * xv.cols..(start + len) * xv.cols].to_vec(),
        );
        self.push(out, Op::SliceRows { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let pv = self.value(p);
                out.row_mut(r)[c0..c0 + pv.cols].copy_from_slice(pv.row(r));
                c0 += pv.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Column vector of `log softmax(x[r])[targets[r]]`.
    pub fn log_softmax_pick(&mut self, x: NodeId, targets: &[u32]) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.rows, targets.len());
        let mut probs = Tensor::zeros(xv.rows, xv.cols);
        let mut out = Tensor::zeros(xv.rows, 1);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
            out.data[r] = row[targets[r] as usize] - lse;
        }
        self.push(
            out,
            Op::LogSoftmaxPick {
                x,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Back-propagates the given output gradients. Returns one entry per
    /// parameter, `None` where the parameter was not reached.
    pub fn backward(&self, seeds: &[(NodeId, Tensor)]) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            accumulate(&mut grads[*id], g.clone());
        }
        let mut param_grads: Vec<Option<Tensor>> = (0..self.params.len()).map(|_| None).collect();

        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Param(i) => accumulate(&mut param_grads[*i], g),
                Op::Constant => {}
                Op::Gather { param, ids } => {
                    let table = &self.params[*param];
                    let pg = param_grads[*param]
                        .get_or_insert_with(|| Tensor::zeros(table.rows, table.cols));
                    for (r, &tok) in ids.iter().enumerate() {
                        for (a, b) in pg.row_mut(tok as usize).iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*b], g.clone());
                    accumulate(&mut grads[*a], g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = Tensor::zeros(av.rows, av.cols);
                    matmul_bt_acc(&g, bv, &mut ga);
                    let mut gb = Tensor::zeros(bv.rows, bv.cols);
                    matmul_at_acc(av, &g, &mut gb);
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::MatMulBT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = Tensor::zeros(av.rows, av.cols);
                    matmul_acc(&g, bv, &mut ga);
                    let mut gb = Tensor::zeros(bv.rows, bv.cols);
                    matmul_at_acc(&g, av, &mut gb);
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::Scale(a, s) => {
                    let mut ga = g;
                    ga.scale_assign(*s);
                    accumulate(&mut grads[*a], ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain);
                    let cols = xhat.cols;
                    let n = cols as f64;
                    let mut ggain = Tensor::zeros(1, cols);
                    let mut gbias = Tensor::zeros(1, cols);
                    let mut gx = Tensor::zeros(xhat.rows, cols);
                    for r in 0..xhat.rows {
                        let (gr, hr) = (g.row(r), xhat.row(r));
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for c in 0..cols {
                            ggain.data[c] += gr[c] * hr[c];
                            gbias.data[c] += gr[c];
                            let d = gr[c] * gv.data[c];
                            mean_d += d;
                            mean_dh += d * hr[c];
                        }
                        mean_d /= n;
                        mean_dh /= n;
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            let d = gr[c] * gv.data[c];
                            out[c] = rstd[r] * (d - mean_d - hr[c] * mean_dh);
                        }
                    }
                    accumulate(&mut grads[*gain], ggain);
                    accumulate(&mut grads[*bias], gbias);
                    accumulate(&mut grads[*x], gx);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    for (gd, &v) in gx.data.iter_mut().zip(&xv.data) {
                        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *gd *= 0.5 * (1.0 + t) + 0.5 * v * dt;
                    }
                    accumulate(&mut grads[*x], gx);
                }
                Op::Softmax(x) => {
                    let y = self.value(id);
                    let mut gx = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (yv, gv)) in gx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - inner);
                        }
                    }
                    accumulate(&mut grads[*x], gx);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut gx = Tensor::zeros(xv.rows, xv.cols);
                    for r in 0..g.rows {
                        gx.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[*x], gx);
                }
                Op::SliceRows { x, start } => {
                    let xv = self.value(*x);
                    let mut gx = Tensor::zeros(xv.rows, xv.cols);
                    gx.data[start * xv.cols..(start + g.rows) * xv.cols].copy_from_slice(&g.data);
                    accumulate(&mut grads[*x], gx);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let mut gp = Tensor::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + cols]);
                        }
                        c0 += cols;
                        accumulate(&mut grads[p], gp);
                    }
                }
                Op::LogSoftmaxPick { x, targets, probs } => {
                    let mut gx = Tensor::zeros(probs.rows, probs.cols);
                    for r in 0..probs.rows {
                        let gr = g.data[r];
                        for (o, p) in gx.row_mut(r).iter_mut().zip(probs.row(r)) {
                            *o = -gr * p;
                        }
                        gx.data[r * probs.cols + targets[r] as usize] += gr;
                    }
                    accumulate(&mut grads[*x], gx);
                }
            }
        }
        param_grads
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}
