//! Minimal reverse-mode autodiff over row-major matrices.
//!
//! Parameters live in one flat slice; ops that read weights hold offsets into
//! it, and their gradients are accumulated into a slice of the same length.

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Mat {
        assert_eq!(data.len(), rows * cols, "shape mismatch");
        Mat { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub type Var = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `x · W + b` with `W` stored `[din × dout]` at `w` and `b` at `b`.
    Linear { x: Var, w: usize, b: usize },
    Add(Var, Var),
    Gelu(Var),
    LayerNorm { x: Var, g: usize, b: usize, stats: Vec<(f64, f64)> },
    /// `a · bᵀ`.
    MatMulNT(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    MeanRows(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Var, Var),
}

struct Node {
    op: Op,
    val: Mat,
}

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(64),
        }
    }

    fn push(&mut self, op: Op, val: Mat) -> Var {
        self.nodes.push(Node { op, val });
        self.nodes.len() - 1
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v].val
    }

    pub fn leaf(&mut self, m: Mat) -> Var {
        self.push(Op::Leaf, m)
    }

    pub fn linear(&mut self, x: Var, w: usize, b: usize, dout: usize) -> Var {
        let xv = &self.nodes[x].val;
        let din = xv.cols;
        let wm = &self.params[w..w + din * dout];
        let bias = &self.params[b..b + dout];
        let mut out = Mat::zeros(xv.rows, dout);
        for i in 0..xv.rows {
            let y = &mut out.data[i * dout..(i + 1) * dout];
            y.copy_from_slice(bias);
            for (k, &xk) in xv.row(i).iter().enumerate() {
                if xk == 0.0 {
                    continue;
                }
                let wr = &wm[k * dout..(k + 1) * dout];
                for (yo, &wo) in y.iter_mut().zip(wr) {
                    *yo += xk * wo;
                }
            }
        }
        self.push(Op::Linear { x, w, b }, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a].val, &self.nodes[b].val);
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols));
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        let out = Mat::from_vec(av.rows, av.cols, data);
        self.push(Op::Add(a, b), out)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let av = &self.nodes[a].val;
        let out = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|&x| gelu(x)).collect());
        self.push(Op::Gelu(a), out)
    }

    pub fn layer_norm(&mut self, x: Var, g: usize, b: usize) -> Var {
        let xv = &self.nodes[x].val;
        let d = xv.cols;
        let gamma = &self.params[g..g + d];
        let beta = &self.params[b..b + d];
        let mut out = Mat::zeros(xv.rows, d);
        let mut stats = Vec::with_capacity(xv.rows);
        for i in 0..xv.rows {
            let r = xv.row(i);
            let mean = r.iter().sum::<f64>() / d as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            for j in 0..d {
                out.data[i * d + j] = (r[j] - mean) * rstd * gamma[j] + beta[j];
            }
            stats.push((mean, rstd));
        }
        self.push(Op::LayerNorm { x, g, b, stats }, out)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a].val, &self.nodes[b].val);
        assert_eq!(av.cols, bv.cols);
        let mut out = Mat::zeros(av.rows, bv.rows);
        for i in 0..av.rows {
            let ar = av.row(i);
            for j in 0..bv.rows {
                out.data[i * bv.rows + j] = ar.iter().zip(bv.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        self.push(Op::MatMulNT(a, b), out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a].val, &self.nodes[b].val);
        assert_eq!(av.cols, bv.rows);
        let mut out = Mat::zeros(av.rows, bv.cols);
        for i in 0..av.rows {
            let y = &mut out.data[i * bv.cols..(i + 1) * bv.cols];
            for (k, &x) in av.row(i).iter().enumerate() {
                for (yo, &bo) in y.iter_mut().zip(bv.row(k)) {
                    *yo += x * bo;
                }
            }
        }
        self.push(Op::MatMul(a, b), out)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let av = &self.nodes[a].val;
        let out = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|x| x * s).collect());
        self.push(Op::Scale(a, s), out)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = &self.nodes[a].val;
        let mut out = av.clone();
        for i in 0..av.rows {
            let r = &mut out.data[i * av.cols..(i + 1) * av.cols];
            softmax_in_place(r);
        }
        self.push(Op::SoftmaxRows(a), out)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = &self.nodes[a].val;
        let mut out = Mat::zeros(1, av.cols);
        for i in 0..av.rows {
            for (o, x) in out.data.iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        let n = av.rows.max(1) as f64;
        out.data.iter_mut().for_each(|o| *o /= n);
        self.push(Op::MeanRows(a), out)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = &self.nodes[x].val;
        let mut out = Mat::zeros(xv.rows, len);
        for i in 0..xv.rows {
            out.data[i * len..(i + 1) * len].copy_from_slice(&xv.row(i)[start..start + len]);
        }
        self.push(Op::SliceCols { x, start }, out)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a].val, &self.nodes[b].val);
        assert_eq!(av.rows, bv.rows);
        let cols = av.cols + bv.cols;
        let mut out = Mat::zeros(av.rows, cols);
        for i in 0..av.rows {
            out.data[i * cols..i * cols + av.cols].copy_from_slice(av.row(i));
            out.data[i * cols + av.cols..(i + 1) * cols].copy_from_slice(bv.row(i));
        }
        self.push(Op::ConcatCols(a, b), out)
    }

    /// Propagates the seeded output gradients back to the parameters,
    /// accumulating into `grad`.
    pub fn backward(&self, seeds: &[(Var, &[f64])], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let mut g: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (v, s) in seeds {
            assert_eq!(s.len(), self.nodes[*v].val.data.len(), "seed shape");
            accumulate(&mut g[*v], s);
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[*x].val;
                    let (din, dout) = (xv.cols, node.val.cols);
                    let wm = &self.params[*w..*w + din * dout];
                    let mut dx = vec![0.0; xv.rows * din];
                    for i in 0..xv.rows {
                        let dyr = &dy[i * dout..(i + 1) * dout];
                        for (gb, d) in grad[*b..*b + dout].iter_mut().zip(dyr) {
                            *gb += d;
                        }
                        let xr = xv.row(i);
                        for k in 0..din {
                            let wr = &wm[k * dout..(k + 1) * dout];
                            dx[i * din + k] = wr.iter().zip(dyr).map(|(a, b)| a * b).sum();
                            let xk = xr[k];
                            if xk != 0.0 {
                                let gw = &mut grad[*w + k * dout..*w + (k + 1) * dout];
                                for (gwo, d) in gw.iter_mut().zip(dyr) {
                                    *gwo += xk * d;
                                }
                            }
                        }
                    }
                    accumulate(&mut g[*x], &dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut g[*a], &dy);
                    accumulate(&mut g[*b], &dy);
                }
                Op::Gelu(a) => {
                    let av = &self.nodes[*a].val;
                    let dx: Vec<f64> = av.data.iter().zip(&dy).map(|(&x, d)| d * gelu_grad(x)).collect();
                    accumulate(&mut g[*a], &dx);
                }
                Op::LayerNorm { x, g: go, b, stats } => {
                    let xv = &self.nodes[*x].val;
                    let d = xv.cols;
                    let gamma = &self.params[*go..*go + d];
                    let mut dx = vec![0.0; xv.data.len()];
                    for (i, &(mean, rstd)) in stats.iter().enumerate() {
                        let r = xv.row(i);
                        let dyr = &dy[i * d..(i + 1) * d];
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for j in 0..d {
                            let xhat = (r[j] - mean) * rstd;
                            grad[*go + j] += dyr[j] * xhat;
                            grad[*b + j] += dyr[j];
                            let dxhat = dyr[j] * gamma[j];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                        let inv_d = 1.0 / d as f64;
                        for j in 0..d {
                            let xhat = (r[j] - mean) * rstd;
                            let dxhat = dyr[j] * gamma[j];
                            dx[i * d + j] = rstd * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                        }
                    }
                    accumulate(&mut g[*x], &dx);
                }
                Op::MatMulNT(a, b) => {
                    let (av, bv) = (&self.nodes[*a].val, &self.nodes[*b].val);
                    let (n, m, k) = (av.rows, bv.rows, av.cols);
                    let mut da = vec![0.0; n * k];
                    let mut db = vec![0.0; m * k];
                    for i in 0..n {
                        for j in 0..m {
                            let d = dy[i * m + j];
                            if d == 0.0 {
                                continue;
                            }
                            let (ar, br) = (av.row(i), bv.row(j));
                            for t in 0..k {
                                da[i * k + t] += d * br[t];
                                db[j * k + t] += d * ar[t];
                            }
                        }
                    }
                    accumulate(&mut g[*a], &da);
                    accumulate(&mut g[*b], &db);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].val, &self.nodes[*b].val);
                    let (n, k, m) = (av.rows, av.cols, bv.cols);
                    let mut da = vec![0.0; n * k];
                    let mut db = vec![0.0; k * m];
                    for i in 0..n {
                        let dyr = &dy[i * m..(i + 1) * m];
                        let ar = av.row(i);
                        for t in 0..k {
                            let br = bv.row(t);
                            da[i * k + t] = br.iter().zip(dyr).map(|(x, y)| x * y).sum();
                            let at = ar[t];
                            if at != 0.0 {
                                for (dbo, d) in db[t * m..(t + 1) * m].iter_mut().zip(dyr) {
                                    *dbo += at * d;
                                }
                            }
                        }
                    }
                    accumulate(&mut g[*a], &da);
                    accumulate(&mut g[*b], &db);
                }
                Op::Scale(a, s) => {
                    let dx: Vec<f64> = dy.iter().map(|d| d * s).collect();
                    accumulate(&mut g[*a], &dx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.val;
                    let mut dx = vec![0.0; y.data.len()];
                    for i in 0..y.rows {
                        let yr = y.row(i);
                        let dyr = &dy[i * y.cols..(i + 1) * y.cols];
                        let dot: f64 = yr.iter().zip(dyr).map(|(p, d)| p * d).sum();
                        for j in 0..y.cols {
                            dx[i * y.cols + j] = yr[j] * (dyr[j] - dot);
                        }
                    }
                    accumulate(&mut g[*a], &dx);
                }
                Op::MeanRows(a) => {
                    let av = &self.nodes[*a].val;
                    let n = av.rows.max(1) as f64;
                    let mut dx = vec![0.0; av.data.len()];
                    for i in 0..av.rows {
                        for j in 0..av.cols {
                            dx[i * av.cols + j] = dy[j] / n;
                        }
                    }
                    accumulate(&mut g[*a], &dx);
                }
                Op::SliceCols { x, start } => {
                    let xv = &self.nodes[*x].val;
                    let len = node.val.cols;
                    let mut dx = vec![0.0; xv.data.len()];
                    for i in 0..xv.rows {
                        dx[i * xv.cols + start..i * xv.cols + start + len].copy_from_slice(&dy[i * len..(i + 1) * len]);
                    }
                    accumulate(&mut g[*x], &dx);
                }
                Op::ConcatCols(a, b) => {
                    let (ac, bc) = (self.nodes[*a].val.cols, self.nodes[*b].val.cols);
                    let rows = node.val.rows;
                    let cols = ac + bc;
                    let mut da = vec![0.0; rows * ac];
                    let mut db = vec![0.0; rows * bc];
                    for i in 0..rows {
                        da[i * ac..(i + 1) * ac].copy_from_slice(&dy[i * cols..i * cols + ac]);
                        db[i * bc..(i + 1) * bc].copy_from_slice(&dy[i * cols + ac..(i + 1) * cols]);
                    }
                    accumulate(&mut g[*a], &da);
                    accumulate(&mut g[*b], &db);
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, d: &[f64]) {
    match slot {
        Some(v) => v.iter_mut().zip(d).for_each(|(a, b)| *a += b),
        None => *slot = Some(d.to_vec()),
    }
}

pub fn softmax_in_place(r: &mut [f64]) {
    let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in r.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    r.iter_mut().for_each(|x| *x /= s);
}

pub fn log_softmax(r: &[f64]) -> Vec<f64> {
    let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + r.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    r.iter().map(|x| x - lse).collect()
}
