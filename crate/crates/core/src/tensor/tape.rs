//! Reverse-mode differentiation over vector-valued nodes.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep that
//! visits every node once. Only nodes that depend on a variable carry a
//! gradient buffer.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `W x + b` with `W` of shape `rows × cols`.
    Affine { w: NodeId, b: NodeId, x: NodeId, cols: usize },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Tanh(NodeId),
    Scale(NodeId, f64),
    /// Elementwise product with a constant vector.
    MulConst(NodeId, Vec<f64>),
    Concat(Vec<NodeId>),
    Slice { x: NodeId, start: usize },
    /// `long` with `short` added onto its leading coordinates.
    AddPrefix { long: NodeId, short: NodeId },
    /// Euclidean norm, a scalar.
    Norm(NodeId),
    Square(NodeId),
    /// Sum of all entries of all inputs, a scalar.
    SumAll(Vec<NodeId>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradient buffers indexed by node; nodes that do not depend on any
/// variable have no buffer.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        let g = &self.grads[id.0];
        (!g.is_empty()).then_some(g.as_slice())
    }

    /// Takes a gradient out, returning zeros of length `len` if the node
    /// received none.
    pub fn take(&mut self, id: NodeId, len: usize) -> Vec<f64> {
        let g = std::mem::take(&mut self.grads[id.0]);
        if g.is_empty() {
            vec![0.0; len]
        } else {
            g
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorises.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
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

    fn push(&mut self, value: Vec<f64>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is wanted.
    pub fn variable(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let (wv, bv, xv) = (self.value(w), self.value(b), self.value(x));
        let cols = xv.len();
        let rows = bv.len();
        if wv.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "affine map with {} weights, {rows} outputs and {cols} inputs",
                wv.len()
            )));
        }
        let out: Vec<f64> = wv
            .chunks_exact(cols)
            .zip(bv)
            .map(|(row, bias)| bias + dot(row, xv))
            .collect();
        let rg = self.needs(w) || self.needs(b) || self.needs(x);
        Ok(self.push(out, Op::Affine { w, b, x, cols }, rg))
    }

    fn same_len(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(Error::ShapeMismatch(format!("{what} of lengths {la} and {lb}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b, "sub")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let rg = self.needs(x);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let out = self.value(x).iter().map(|v| v * s).collect();
        let rg = self.needs(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn mul_const(&mut self, x: NodeId, c: Vec<f64>) -> Result<NodeId> {
        if c.len() != self.value(x).len() {
            return Err(Error::ShapeMismatch(format!(
                "elementwise product of lengths {} and {}",
                self.value(x).len(),
                c.len()
            )));
        }
        let out = self.value(x).iter().zip(&c).map(|(a, b)| a * b).collect();
        let rg = self.needs(x);
        Ok(self.push(out, Op::MulConst(x, c), rg))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let out = parts.iter().flat_map(|&p| self.value(p).iter().copied()).collect();
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::Concat(parts.to_vec()), rg)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        if start + len > v.len() {
            return Err(Error::ShapeMismatch(format!(
                "slice {start}..{} of a length-{} node",
                start + len,
                v.len()
            )));
        }
        let out = v[start..start + len].to_vec();
        let rg = self.needs(x);
        Ok(self.push(out, Op::Slice { x, start }, rg))
    }

    pub fn add_prefix(&mut self, long: NodeId, short: NodeId) -> Result<NodeId> {
        let (l, s) = (self.value(long), self.value(short));
        if s.len() > l.len() {
            return Err(Error::ShapeMismatch(format!(
                "prefix of length {} onto a length-{} node",
                s.len(),
                l.len()
            )));
        }
        let mut out = l.to_vec();
        out.iter_mut().zip(s).for_each(|(o, v)| *o += v);
        let rg = self.needs(long) || self.needs(short);
        Ok(self.push(out, Op::AddPrefix { long, short }, rg))
    }

    pub fn norm(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        let rg = self.needs(x);
        self.push(vec![n], Op::Norm(x), rg)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).iter().map(|v| v * v).collect();
        let rg = self.needs(x);
        self.push(out, Op::Square(x), rg)
    }

    pub fn sum_all(&mut self, parts: &[NodeId]) -> NodeId {
        let s = parts.iter().map(|&p| self.value(p).iter().sum::<f64>()).sum();
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(vec![s], Op::SumAll(parts.to_vec()), rg)
    }

    /// Propagates `upstream` (the gradient of some scalar with respect to
    /// `output`) back to every node. A tape supports a single backward pass.
    pub fn backward(&mut self, output: NodeId, upstream: &[f64]) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if upstream.len() != self.value(output).len() {
            return Err(Error::ShapeMismatch(format!(
                "upstream of length {} for an output of length {}",
                upstream.len(),
                self.value(output).len()
            )));
        }
        if upstream.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("upstream gradient".into()));
        }
        self.consumed = true;
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[output.0] = upstream.to_vec();

        for i in (0..=output.0).rev() {
            if grads[i].is_empty() || !self.nodes[i].requires_grad {
                continue;
            }
            let node = &self.nodes[i];
            // Leaves keep their gradient; everything else hands it on.
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            let nodes = &self.nodes;
            let mut accumulate = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
                if !nodes[id.0].requires_grad {
                    return;
                }
                let buf = &mut grads[id.0];
                if buf.is_empty() {
                    *buf = vec![0.0; nodes[id.0].value.len()];
                }
                f(buf);
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Affine { w, b, x, cols } => {
                    let cols = *cols;
                    let xv = &nodes[x.0].value;
                    let wv = &nodes[w.0].value;
                    accumulate(*w, &mut |gw| {
                        for (row, gr) in gw.chunks_exact_mut(cols).zip(&g) {
                            row.iter_mut().zip(xv).for_each(|(a, xi)| *a += gr * xi);
                        }
                    });
                    accumulate(*b, &mut |gb| gb.iter_mut().zip(&g).for_each(|(a, gi)| *a += gi));
                    accumulate(*x, &mut |gx| {
                        for (row, gr) in wv.chunks_exact(cols).zip(&g) {
                            gx.iter_mut().zip(row).for_each(|(a, wi)| *a += gr * wi);
                        }
                    });
                }
                Op::Add(a, b) => {
                    accumulate(*a, &mut |ga| ga.iter_mut().zip(&g).for_each(|(x, gi)| *x += gi));
                    accumulate(*b, &mut |gb| gb.iter_mut().zip(&g).for_each(|(x, gi)| *x += gi));
                }
                Op::Sub(a, b) => {
                    accumulate(*a, &mut |ga| ga.iter_mut().zip(&g).for_each(|(x, gi)| *x += gi));
                    accumulate(*b, &mut |gb| gb.iter_mut().zip(&g).for_each(|(x, gi)| *x -= gi));
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    accumulate(*x, &mut |gx| {
                        for ((a, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                            *a += gi * (1.0 - yi * yi);
                        }
                    });
                }
                Op::Scale(x, s) => {
                    accumulate(*x, &mut |gx| gx.iter_mut().zip(&g).for_each(|(a, gi)| *a += gi * s));
                }
                Op::MulConst(x, c) => {
                    accumulate(*x, &mut |gx| {
                        for ((a, gi), ci) in gx.iter_mut().zip(&g).zip(c) {
                            *a += gi * ci;
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        let seg = &g[offset..offset + len];
                        accumulate(*p, &mut |gp| gp.iter_mut().zip(seg).for_each(|(a, gi)| *a += gi));
                        offset += len;
                    }
                }
                Op::Slice { x, start } => {
                    let start = *start;
                    accumulate(*x, &mut |gx| {
                        gx[start..start + g.len()].iter_mut().zip(&g).for_each(|(a, gi)| *a += gi)
                    });
                }
                Op::AddPrefix { long, short } => {
                    accumulate(*long, &mut |gl| gl.iter_mut().zip(&g).for_each(|(a, gi)| *a += gi));
                    accumulate(*short, &mut |gs| gs.iter_mut().zip(&g).for_each(|(a, gi)| *a += gi));
                }
                Op::Norm(x) => {
                    let n = node.value[0];
                    // The norm is not differentiable at 0; use the zero subgradient.
                    if n > 0.0 {
                        let xv = &nodes[x.0].value;
                        accumulate(*x, &mut |gx| {
                            gx.iter_mut().zip(xv).for_each(|(a, xi)| *a += g[0] * xi / n)
                        });
                    }
                }
                Op::Square(x) => {
                    let xv = &nodes[x.0].value;
                    accumulate(*x, &mut |gx| {
                        for ((a, gi), xi) in gx.iter_mut().zip(&g).zip(xv) {
                            *a += 2.0 * gi * xi;
                        }
                    });
                }
                Op::SumAll(parts) => {
                    for p in parts {
                        accumulate(*p, &mut |gp| gp.iter_mut().for_each(|a| *a += g[0]));
                    }
                }
            }
        }
        if grads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok(Gradients { grads })
    }
}
