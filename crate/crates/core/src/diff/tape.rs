//! Reverse-mode automatic differentiation over flat f64 vectors.
//!
//! A [`Tape`] records primitive operations as they execute; [`Tape::backward`]
//! replays them in reverse to accumulate adjoints. Nodes hold plain `Vec<f64>`
//! values (a scalar is a length-1 vector) and there is no broadcasting: the
//! few shape-changing operations that calibration needs (`mat_vec`, `slice`,
//! `concat`, `repeat`, `index`) are explicit. Shape mismatches are contract
//! violations and panic. A tape is built per minibatch and dropped; nothing
//! is cached across steps.

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Exp(usize),
    Ln(usize),
    Square(usize),
    Abs(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Scale(usize, f64),
    Offset(usize),
    Sum(usize),
    Dot(usize, usize),
    MatVec {
        w: usize,
        x: usize,
        rows: usize,
        cols: usize,
    },
    Slice {
        v: usize,
        start: usize,
    },
    Index {
        v: usize,
        i: usize,
    },
    Concat(Vec<usize>),
    Repeat(usize),
    Softmax(usize),
    LogSumExp(usize),
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Append-only record of primitive operations and their inputs.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_values(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| (x - m).exp()).collect();
    let total: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= total;
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value recorded for `v`.
    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record an input node. Leaves accumulate gradients like any other node;
    /// whether they are parameters or constants is the caller's business.
    pub fn leaf(&mut self, values: Vec<f64>) -> Var {
        self.push(values, Op::Leaf)
    }

    pub fn leaf_scalar(&mut self, value: f64) -> Var {
        self.push(vec![value], Op::Leaf)
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            va.len(),
            vb.len(),
            "shape mismatch in {op}: {} vs {}",
            va.len(),
            vb.len()
        );
        va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip("add", a, b, |x, y| x + y);
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip("sub", a, b, |x, y| x - y);
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip("mul", a, b, |x, y| x * y);
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip("div", a, b, |x, y| x / y);
        self.push(v, Op::Div(a.0, b.0))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(v, op)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.map(a, Op::Neg(a.0), |x| -x)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a.0), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, Op::Ln(a.0), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a.0), |x| x * x)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, Op::Abs(a.0), f64::abs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a.0), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a.0), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a.0), stable_sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, Op::Softplus(a.0), stable_softplus)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, Op::Scale(a.0, k), |x| k * x)
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        self.map(a, Op::Offset(a.0), |x| x + k)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(vec![s], Op::Sum(a.0))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip("dot", a, b, |x, y| x * y);
        self.push(vec![v.iter().sum()], Op::Dot(a.0, b.0))
    }

    /// w is a row-major (rows × cols) matrix stored flat; x has length cols.
    pub fn mat_vec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Var {
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        assert_eq!(wv.len(), rows * cols, "mat_vec: bad weight length");
        assert_eq!(xv.len(), cols, "mat_vec: bad input length");
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let row = &wv[r * cols..(r + 1) * cols];
            out[r] = row.iter().zip(xv).map(|(&wij, &xj)| wij * xj).sum();
        }
        self.push(
            out,
            Op::MatVec {
                w: w.0,
                x: x.0,
                rows,
                cols,
            },
        )
    }

    pub fn slice(&mut self, v: Var, start: usize, len: usize) -> Var {
        let vv = &self.nodes[v.0].value;
        assert!(start + len <= vv.len(), "slice out of range");
        let out = vv[start..start + len].to_vec();
        self.push(out, Op::Slice { v: v.0, start })
    }

    pub fn index(&mut self, v: Var, i: usize) -> Var {
        let x = self.nodes[v.0].value[i];
        self.push(vec![x], Op::Index { v: v.0, i })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(out, Op::Concat(parts.iter().map(|p| p.0).collect()))
    }

    /// Replicate a scalar into an n-vector.
    pub fn repeat(&mut self, v: Var, n: usize) -> Var {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        let x = self.nodes[v.0].value[0];
        self.push(vec![x; n], Op::Repeat(v.0))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_values(&self.nodes[a.0].value);
        self.push(out, Op::Softmax(a.0))
    }

    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
        self.push(vec![m + s.ln()], Op::LogSumExp(a.0))
    }

    /// Mean of a vector node.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Accumulate adjoints of every node with respect to a scalar output.
    pub fn backward(&self, out: Var) -> Grads {
        assert_eq!(self.nodes[out.0].value.len(), 1, "backward needs a scalar");
        let mut adj: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        adj[out.0][0] = 1.0;

        for idx in (0..=out.0).rev() {
            // Nothing reaches nodes recorded after the output.
            let g = std::mem::take(&mut adj[idx]);
            if g.iter().all(|&x| x == 0.0) {
                adj[idx] = g;
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    for (t, &gi) in adj[*a].iter_mut().zip(&g) {
                        *t += gi;
                    }
                    for (t, &gi) in adj[*b].iter_mut().zip(&g) {
                        *t += gi;
                    }
                }
                Op::Sub(a, b) => {
                    for (t, &gi) in adj[*a].iter_mut().zip(&g) {
                        *t += gi;
                    }
                    for (t, &gi) in adj[*b].iter_mut().zip(&g) {
                        *t -= gi;
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    for i in 0..g.len() {
                        adj[*a][i] += g[i] * vb[i];
                    }
                    for i in 0..g.len() {
                        adj[*b][i] += g[i] * va[i];
                    }
                }
                Op::Div(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    for i in 0..g.len() {
                        adj[*a][i] += g[i] / vb[i];
                    }
                    for i in 0..g.len() {
                        adj[*b][i] -= g[i] * va[i] / (vb[i] * vb[i]);
                    }
                }
                Op::Neg(a) => {
                    for (t, &gi) in adj[*a].iter_mut().zip(&g) {
                        *t -= gi;
                    }
                }
                Op::Exp(a) => {
                    for i in 0..g.len() {
                        adj[*a][i] += g[i] * node.value[i];
                    }
                }
                Op::Ln(a) => {
                    let va = &self.nodes[*a].value;
                    for i in 0..g.len() {
                        adj[*a][i] += g[i] / va[i];
                    }
                }
                Op::Square(a) => {
                    let va = &self.nodes[*a].value;
                    for i in 0..g.len() {
                        adj[*a][i] += 2.0 * va[i] * g[i];
                    }
                }
                Op::Abs(a) => {
                    let va = &self.nodes[*a].value;
                    for i in 0..g.len() {
                        adj[*a][i] += g[i] * if va[i] > 0.0 { 1.0 } else if va[i] < 0.0 { -1.0 } else { 0.0 };
                    }
                }
                Op::Relu(a) => {
                    let va = &self.nodes[*a].value;
                    for i in 0..g.len() {
                        if va[i] > 0.0 {
                            adj[*a][i] += g[i];
                        }
                    }
                }
                Op::Tanh(a) => {
                    for i in 0..g.len() {
                        adj[*a][i] += g[i] * (1.0 - node.value[i] * node.value[i]);
                    }
                }
                Op::Sigmoid(a) => {
                    for i in 0..g.len() {
                        let s = node.value[i];
                        adj[*a][i] += g[i] * s * (1.0 - s);
                    }
                }
                Op::Softplus(a) => {
                    let va = &self.nodes[*a].value;
                    for i in 0..g.len() {
                        adj[*a][i] += g[i] * stable_sigmoid(va[i]);
                    }
                }
                Op::Scale(a, k) => {
                    for (t, &gi) in adj[*a].iter_mut().zip(&g) {
                        *t += k * gi;
                    }
                }
                Op::Offset(a) => {
                    for (t, &gi) in adj[*a].iter_mut().zip(&g) {
                        *t += gi;
                    }
                }
                Op::Sum(a) => {
                    for t in adj[*a].iter_mut() {
                        *t += g[0];
                    }
                }
                Op::Dot(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    for i in 0..va.len() {
                        adj[*a][i] += g[0] * vb[i];
                    }
                    for i in 0..vb.len() {
                        adj[*b][i] += g[0] * va[i];
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let wv = &self.nodes[*w].value;
                    let xv = &self.nodes[*x].value;
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let wadj = &mut adj[*w][r * cols..(r + 1) * cols];
                        for c in 0..*cols {
                            wadj[c] += gr * xv[c];
                        }
                    }
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = &wv[r * cols..(r + 1) * cols];
                        for c in 0..*cols {
                            adj[*x][c] += gr * row[c];
                        }
                    }
                }
                Op::Slice { v, start } => {
                    for (i, &gi) in g.iter().enumerate() {
                        adj[*v][start + i] += gi;
                    }
                }
                Op::Index { v, i } => {
                    adj[*v][*i] += g[0];
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[*p].value.len();
                        for i in 0..len {
                            adj[*p][i] += g[offset + i];
                        }
                        offset += len;
                    }
                }
                Op::Repeat(v) => {
                    adj[*v][0] += g.iter().sum::<f64>();
                }
                Op::Softmax(a) => {
                    let w = &node.value;
                    let inner: f64 = w.iter().zip(&g).map(|(&wi, &gi)| wi * gi).sum();
                    for i in 0..g.len() {
                        adj[*a][i] += w[i] * (g[i] - inner);
                    }
                }
                Op::LogSumExp(a) => {
                    let w = softmax_values(&self.nodes[*a].value);
                    for i in 0..w.len() {
                        adj[*a][i] += g[0] * w[i];
                    }
                }
            }
            adj[idx] = g;
        }
        Grads { adj }
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Grads {
    adj: Vec<Vec<f64>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> &[f64] {
        &self.adj[v.0]
    }

    pub fn wrt_scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.adj[v.0].len(), 1);
        self.adj[v.0][0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences on a scalar-valued builder.
    pub(crate) fn finite_diff_check(
        build: impl Fn(&mut Tape, &[Vec<f64>]) -> (Vec<Var>, Var),
        inputs: &[Vec<f64>],
        tol: f64,
    ) {
        let h = 1e-5;
        let mut tape = Tape::new();
        let (vars, out) = build(&mut tape, inputs);
        let grads = tape.backward(out);
        for (vi, input) in inputs.iter().enumerate() {
            for ci in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[vi][ci] += h;
                let mut minus = inputs.to_vec();
                minus[vi][ci] -= h;
                let mut tp = Tape::new();
                let (_, op) = build(&mut tp, &plus);
                let fp = tp.scalar(op);
                let mut tm = Tape::new();
                let (_, om) = build(&mut tm, &minus);
                let fm = tm.scalar(om);
                let fd = (fp - fm) / (2.0 * h);
                let an = grads.wrt(vars[vi])[ci];
                let err = (an - fd).abs() / an.abs().max(fd.abs()).max(1.0);
                assert!(
                    err < tol,
                    "grad mismatch input {vi}[{ci}]: analytic {an}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn arithmetic_chain_gradients() {
        finite_diff_check(
            |t, ins| {
                let a = t.leaf(ins[0].clone());
                let b = t.leaf(ins[1].clone());
                let prod = t.mul(a, b);
                let e = t.exp(prod);
                let d = t.div(e, b);
                let s = t.sum(d);
                (vec![a, b], s)
            },
            &[vec![0.3, -0.7, 1.2], vec![1.1, 0.4, -0.9]],
            1e-6,
        );
    }

    #[test]
    fn activation_gradients() {
        finite_diff_check(
            |t, ins| {
                let a = t.leaf(ins[0].clone());
                let th = t.tanh(a);
                let sg = t.sigmoid(th);
                let sp = t.softplus(sg);
                let sq = t.square(sp);
                let s = t.sum(sq);
                (vec![a], s)
            },
            &[vec![-1.5, -0.2, 0.0, 0.4, 2.0]],
            1e-6,
        );
    }

    #[test]
    fn matvec_slice_concat_gradients() {
        finite_diff_check(
            |t, ins| {
                let theta = t.leaf(ins[0].clone());
                let x = t.leaf(ins[1].clone());
                // theta = 2x3 matrix followed by a 2-bias
                let w = t.slice(theta, 0, 6);
                let b = t.slice(theta, 6, 2);
                let h = t.mat_vec(w, x, 2, 3);
                let z = t.add(h, b);
                let r = t.relu(z);
                let i0 = t.index(r, 0);
                let cat = t.concat(&[r, i0]);
                let s = t.sum(cat);
                (vec![theta, x], s)
            },
            &[
                vec![0.5, -0.3, 0.8, 0.1, 0.9, -0.4, 0.2, -0.6],
                vec![1.0, -2.0, 0.5],
            ],
            1e-6,
        );
    }

    #[test]
    fn softmax_and_lse_gradients() {
        finite_diff_check(
            |t, ins| {
                let a = t.leaf(ins[0].clone());
                let w = t.softmax(a);
                let lse = t.log_sum_exp(a);
                let rep = t.repeat(lse, 4);
                let diff = t.sub(rep, a);
                let d = t.dot(w, diff);
                (vec![a], d)
            },
            &[vec![0.2, -1.0, 0.7, 1.5]],
            1e-6,
        );
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let mut t = Tape::new();
        let a = t.leaf(vec![1.0, 2.0]);
        let c = t.leaf(vec![5.0, 5.0]);
        let s = t.sum(a);
        let grads = t.backward(s);
        assert_eq!(grads.wrt(c), &[0.0, 0.0]);
        assert_eq!(grads.wrt(a), &[1.0, 1.0]);
    }

    #[test]
    fn repeated_use_accumulates() {
        // f = a·a + a·a has gradient 4a.
        let mut t = Tape::new();
        let a = t.leaf(vec![3.0]);
        let p1 = t.mul(a, a);
        let p2 = t.mul(a, a);
        let s0 = t.add(p1, p2);
        let s = t.sum(s0);
        let grads = t.backward(s);
        assert!((grads.wrt(a)[0] - 12.0).abs() < 1e-12);
    }
}
