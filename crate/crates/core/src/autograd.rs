//! Minimal reverse-mode differentiation over row-major `f32` matrices.
//!
//! A [`Tape`] records each operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and accumulates gradients for every parameter that was
//! read. Tapes borrow the parameter set immutably, so any number of them can
//! run concurrently against the same weights.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::nn::{ParamGrads, ParamId, ParamSet};

pub type Mat = Array2<f32>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Mat),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Softplus(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Gather { x: Var, idx: Vec<usize> },
    GroupMax { x: Var, argmax: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Interp { x: Var, k: usize, idx: Vec<usize>, w: Vec<f32> },
    RowScale { x: Var, s: Var },
    BroadcastRow { x: Var },
    PointAffine { p: Var, m: Var, b: Var },
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f32> {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m.view(),
            Value::Param(id) => self.params.get(*id).view(),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Mat, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|&p| self.needs(p));
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives gradient.
    pub fn constant(&mut self, m: Mat) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(m),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x W + b` with `b` a single row broadcast over `x`'s rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let mut y = self.value(x).dot(&self.value(w));
        y += &self.value(b);
        self.push(y, Op::Linear { x, w, b }, &[x, w, b])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(|v| v.max(0.0));
        self.push(y, Op::Relu(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(|v| v.max(0.0) + (-v.abs()).exp().ln_1p());
        self.push(y, Op::Softplus(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = &self.value(a) + &self.value(b);
        self.push(y, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = &self.value(a) - &self.value(b);
        self.push(y, Op::Sub(a, b), &[a, b])
    }

    /// Row `i` of the result is row `idx[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let src = self.value(x);
        let y = src.select(Axis(0), &idx);
        self.push(y, Op::Gather { x, idx }, &[x])
    }

    /// Column-wise max over consecutive blocks of `group` rows.
    pub fn group_max(&mut self, x: Var, group: usize) -> Var {
        let src = self.value(x);
        let (rows, cols) = src.dim();
        assert!(group > 0 && rows % group == 0, "group_max: {rows} rows not divisible by {group}");
        let groups = rows / group;
        let mut y = Mat::zeros((groups, cols));
        let mut argmax = vec![0usize; groups * cols];
        for g in 0..groups {
            let base = g * group;
            for c in 0..cols {
                let mut best = src[[base, c]];
                let mut arg = base;
                for r in base + 1..base + group {
                    let v = src[[r, c]];
                    if v > best {
                        best = v;
                        arg = r;
                    }
                }
                y[[g, c]] = best;
                argmax[g * cols + c] = arg;
            }
        }
        self.push(y, Op::GroupMax { x, argmax }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(y, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(y, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Fixed-weight blend: output row `t` is `sum_s w[t*k+s] * x[idx[t*k+s]]`.
    pub fn interpolate(&mut self, x: Var, k: usize, idx: Vec<usize>, w: Vec<f32>) -> Var {
        assert_eq!(idx.len(), w.len());
        let src = self.value(x);
        let rows = idx.len() / k;
        let mut y = Mat::zeros((rows, src.ncols()));
        for (t, mut row) in y.rows_mut().into_iter().enumerate() {
            for s in 0..k {
                row.scaled_add(w[t * k + s], &src.row(idx[t * k + s]));
            }
        }
        self.push(y, Op::Interp { x, k, idx, w }, &[x])
    }

    /// Multiplies each row of `x` by the matching entry of the column `s`.
    pub fn row_scale(&mut self, x: Var, s: Var) -> Var {
        let y = &self.value(x) * &self.value(s);
        self.push(y, Op::RowScale { x, s }, &[x, s])
    }

    /// Repeats a single-row `x` to `n` rows.
    pub fn broadcast_row(&mut self, x: Var, n: usize) -> Var {
        let src = self.value(x);
        assert_eq!(src.nrows(), 1, "broadcast_row expects one row");
        let y = src.broadcast((n, src.ncols())).unwrap().to_owned();
        self.push(y, Op::BroadcastRow { x }, &[x])
    }

    /// `p M + b` for an N x 3 point block, a 1 x 9 row-major matrix and a 1 x 3 offset.
    pub fn point_affine(&mut self, p: Var, m: Var, b: Var) -> Var {
        let mat = self.value(m).to_shape((3, 3)).unwrap().to_owned();
        let mut y = self.value(p).dot(&mat);
        y += &self.value(b);
        self.push(y, Op::PointAffine { p, m, b }, &[p, m, b])
    }

    /// Back-propagates the given output gradients and returns parameter gradients.
    pub fn backward(&self, seeds: Vec<(Var, Mat)>) -> ParamGrads {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(g.dim(), self.shape(v), "seed gradient shape mismatch");
            accumulate(&mut grads[v.0], g);
        }
        let mut out = self.params.zero_grads();
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::Linear { x, w, b } => {
                    if self.needs(*x) {
                        let gx = g.dot(&self.value(*w).t());
                        self.send(&mut grads, *x, gx);
                    }
                    if self.needs(*w) {
                        let gw = self.value(*x).t().dot(&g);
                        self.send(&mut grads, *w, gw);
                    }
                    if self.needs(*b) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.send(&mut grads, *b, gb);
                    }
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    let y = self.value(Var(i));
                    Zip::from(&mut gx).and(&y).for_each(|gv, &yv| {
                        if yv <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    self.send(&mut grads, *x, gx);
                }
                Op::Softplus(x) => {
                    let mut gx = g;
                    let xv = self.value(*x);
                    Zip::from(&mut gx).and(&xv).for_each(|gv, &v| {
                        *gv *= 1.0 / (1.0 + (-v).exp());
                    });
                    self.send(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        self.send(&mut grads, *b, g.clone());
                    }
                    self.send(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        self.send(&mut grads, *b, -&g);
                    }
                    self.send(&mut grads, *a, g);
                }
                Op::Gather { x, idx } => {
                    let mut gx = Mat::zeros(self.shape(*x));
                    for (r, &src) in idx.iter().enumerate() {
                        let mut dst = gx.row_mut(src);
                        dst += &g.row(r);
                    }
                    self.send(&mut grads, *x, gx);
                }
                Op::GroupMax { x, argmax } => {
                    let mut gx = Mat::zeros(self.shape(*x));
                    let cols = g.ncols();
                    for (k, &src) in argmax.iter().enumerate() {
                        gx[[src, k % cols]] += g[[k / cols, k % cols]];
                    }
                    self.send(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        if self.needs(p) {
                            let gp = g.slice(s![.., col..col + w]).to_owned();
                            self.send(&mut grads, p, gp);
                        }
                        col += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        if self.needs(p) {
                            let gp = g.slice(s![row..row + h, ..]).to_owned();
                            self.send(&mut grads, p, gp);
                        }
                        row += h;
                    }
                }
                Op::Interp { x, k, idx, w } => {
                    let mut gx = Mat::zeros(self.shape(*x));
                    for (t, grow) in g.rows().into_iter().enumerate() {
                        for s in 0..*k {
                            gx.row_mut(idx[t * k + s]).scaled_add(w[t * k + s], &grow);
                        }
                    }
                    self.send(&mut grads, *x, gx);
                }
                Op::RowScale { x, s } => {
                    if self.needs(*s) {
                        let gs = (&g * &self.value(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        self.send(&mut grads, *s, gs);
                    }
                    if self.needs(*x) {
                        let gx = &g * &self.value(*s);
                        self.send(&mut grads, *x, gx);
                    }
                }
                Op::BroadcastRow { x } => {
                    let gx = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.send(&mut grads, *x, gx);
                }
                Op::PointAffine { p, m, b } => {
                    let mat = self.value(*m).to_shape((3, 3)).unwrap().to_owned();
                    if self.needs(*p) {
                        let gp = g.dot(&mat.t());
                        self.send(&mut grads, *p, gp);
                    }
                    if self.needs(*m) {
                        let gm = self.value(*p).t().dot(&g);
                        let gm = gm.into_shape_with_order((1, 9)).unwrap();
                        self.send(&mut grads, *m, gm);
                    }
                    if self.needs(*b) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.send(&mut grads, *b, gb);
                    }
                }
            }
        }
        out
    }

    fn send(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if self.needs(v) {
            accumulate(&mut grads[v.0], g);
        }
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(existing) => *existing += &g,
        None => *slot = Some(g),
    }
}
