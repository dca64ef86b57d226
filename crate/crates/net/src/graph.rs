//! Tape-based reverse-mode differentiation. Every op appends a node holding
//! its value; `backward` walks the tape once in reverse.

use crate::conv::{conv2d_backward, conv2d_forward};
use crate::error::{NetError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var, f64),
    Affine(Var, f64),
    Square(Var),
    Sqrt(Var),
    Abs(Var),
    SignedPow(Var, f64),
    LeakyRelu(Var, f64),
    Mean(Var),
    MeanPerSample(Var),
    Sum(Var),
    SpatialMean(Var),
    Conv2d(Var, Var, Var),
    Linear(Var, Var, Var),
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Var, Var),
    Select(Vec<bool>, Var, Var),
    FilterValid(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient of one scalar with respect to every node that needs it.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn broadcast_shape(a: [usize; 4], b: [usize; 4]) -> Result<[usize; 4]> {
    let mut out = [0; 4];
    for k in 0..4 {
        out[k] = match (a[k], b[k]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(NetError::Shape(format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

/// Row-major strides of `shape` as seen from `out`, zero along broadcast axes.
fn bstrides(shape: [usize; 4], out: [usize; 4]) -> [usize; 4] {
    let full = [shape[1] * shape[2] * shape[3], shape[2] * shape[3], shape[3], 1];
    let mut s = [0; 4];
    for k in 0..4 {
        s[k] = if shape[k] == out[k] { full[k] } else { 0 };
    }
    s
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn for_each_bcast(out: [usize; 4], a: [usize; 4], b: [usize; 4], mut f: impl FnMut(usize, usize, usize)) {
    let (sa, sb) = (bstrides(a, out), bstrides(b, out));
    let mut o = 0;
    for i0 in 0..out[0] {
        for i1 in 0..out[1] {
            for i2 in 0..out[2] {
                let ba = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let bb = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..out[3] {
                    f(o, ba + i3 * sa[3], bb + i3 * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

fn filter_valid_plane(src: &[f64], h: usize, w: usize, taps: &[f64], dst: &mut [f64]) {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().zip(&src[y * w + x..y * w + x + k]).map(|(t, v)| t * v).sum();
        }
    }
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, tv) in taps.iter().enumerate() {
                acc += tv * tmp[(y + t) * ow + x];
            }
            dst[y * ow + x] = acc;
        }
    }
}

fn filter_valid_plane_adjoint(g: &[f64], h: usize, w: usize, taps: &[f64], dx: &mut [f64]) {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..oh {
        for x in 0..ow {
            let gv = g[y * ow + x];
            for (t, tv) in taps.iter().enumerate() {
                tmp[(y + t) * ow + x] += tv * gv;
            }
        }
    }
    for y in 0..h {
        for x in 0..ow {
            let gv = tmp[y * ow + x];
            for (t, tv) in taps.iter().enumerate() {
                dx[y * w + x + t] += tv * gv;
            }
        }
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    dst.get_or_insert_with(|| vec![0.0; len])
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        debug_assert!(
            matches!(op, Op::Leaf) || value.is_finite() || !self.inputs_finite(&op),
            "non-finite value from {op:?}"
        );
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_finite(&self, op: &Op) -> bool {
        let check = |v: &Var| self.nodes[v.0].value.is_finite();
        match op {
            Op::Leaf => true,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b, _) | Op::Concat(a, b) | Op::Select(_, a, b) => {
                check(a) && check(b)
            }
            Op::Conv2d(a, b, c) | Op::Linear(a, b, c) => check(a) && check(b) && check(c),
            Op::Affine(a, _)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Abs(a)
            | Op::SignedPow(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Mean(a)
            | Op::MeanPerSample(a)
            | Op::Sum(a)
            | Op::SpatialMean(a)
            | Op::AvgPool2(a)
            | Op::Upsample2(a)
            | Op::FilterValid(a, _) => check(a),
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false).expect("leaf")
    }

    /// A leaf that gradients are taken with respect to.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true).expect("leaf")
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = broadcast_shape(ta.shape(), tb.shape())?;
        let mut out = vec![0.0; shape.iter().product()];
        for_each_bcast(shape, ta.shape(), tb.shape(), |o, i, j| out[o] = f(ta.data()[i], tb.data()[j]));
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, out)?, op, rg)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.nodes[a.0].value.map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `a / b`, with denominators smaller than `eps` in magnitude replaced by
    /// `±eps` (zero counts as positive).
    pub fn div(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b, eps), move |x, y| x / guard(y, eps))
    }

    /// `scale·a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        self.unary(a, Op::Affine(a, scale), move |x| scale * x + shift)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.nodes[a.0].value.data().iter().any(|&v| v < 0.0) {
            return Err(NetError::Domain("sqrt of a negative value".into()));
        }
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    /// `sign(a)·|a|^p`.
    pub fn signed_pow(&mut self, a: Var, p: f64) -> Result<Var> {
        self.unary(a, Op::SignedPow(a, p), move |x| x.signum() * x.abs().powf(p))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(a, Op::LeakyRelu(a, slope), move |x| if x > 0.0 { x } else { slope * x })
    }

    /// Mean of all elements, as a `(1,1,1,1)` tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.data().iter().sum::<f64>();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean over everything but the batch axis: `(n,1,1,1)`.
    pub fn mean_per_sample(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        let n = t.shape()[0];
        let per = t.len() / n;
        let data = t.data().chunks(per).map(|c| c.iter().sum::<f64>() / per as f64).collect();
        let rg = self.rg(a);
        self.push(Tensor::new([n, 1, 1, 1], data)?, Op::MeanPerSample(a), rg)
    }

    /// Global average pool: `(n,c,1,1)`.
    pub fn spatial_mean(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        let [n, c, h, w] = t.shape();
        let data = t.data().chunks(h * w).map(|p| p.iter().sum::<f64>() / (h * w) as f64).collect();
        let rg = self.rg(a);
        self.push(Tensor::new([n, c, 1, 1], data)?, Op::SpatialMean(a), rg)
    }

    /// 3×3 convolution with replicate padding. `w: (co, ci, 3, 3)`, `b: (1, co, 1, 1)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (&self.nodes[x.0].value, &self.nodes[w.0].value, &self.nodes[b.0].value);
        let [co, ci, kh, kw] = tw.shape();
        if tx.shape()[1] != ci || kh != 3 || kw != 3 || tb.shape() != [1, co, 1, 1] {
            return Err(NetError::Shape(format!(
                "conv2d input {:?}, weight {:?}, bias {:?}",
                tx.shape(),
                tw.shape(),
                tb.shape()
            )));
        }
        let out = conv2d_forward(tx, tw, tb);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(out, Op::Conv2d(x, w, b), rg)
    }

    /// Fully connected map on `(n, ci, 1, 1)`: `w: (co, ci, 1, 1)`, `b: (1, co, 1, 1)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (&self.nodes[x.0].value, &self.nodes[w.0].value, &self.nodes[b.0].value);
        let [n, ci, h, wd] = tx.shape();
        let [co, wci, _, _] = tw.shape();
        if h != 1 || wd != 1 || wci != ci || tw.len() != co * ci || tb.shape() != [1, co, 1, 1] {
            return Err(NetError::Shape(format!(
                "linear input {:?}, weight {:?}, bias {:?}",
                tx.shape(),
                tw.shape(),
                tb.shape()
            )));
        }
        let mut out = vec![0.0; n * co];
        for s in 0..n {
            for o in 0..co {
                out[s * co + o] = tb.data()[o]
                    + (0..ci).map(|i| tw.data()[o * ci + i] * tx.data()[s * ci + i]).sum::<f64>();
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Tensor::new([n, co, 1, 1], out)?, Op::Linear(x, w, b), rg)
    }

    /// 2×2 average pooling; odd trailing rows/columns are dropped.
    pub fn avgpool2(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        let [n, c, h, w] = t.shape();
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(NetError::Shape(format!("cannot pool {h}x{w}")));
        }
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            let src = &t.data()[p * h * w..];
            for y in 0..oh {
                for x in 0..ow {
                    let i = 2 * y * w + 2 * x;
                    out[(p * oh + y) * ow + x] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::new([n, c, oh, ow], out)?, Op::AvgPool2(a), rg)
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        let [n, c, h, w] = t.shape();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            for y in 0..oh {
                for x in 0..ow {
                    out[(p * oh + y) * ow + x] = t.data()[(p * h + y / 2) * w + x / 2];
                }
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::new([n, c, oh, ow], out)?, Op::Upsample2(a), rg)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let [n, ca, h, w] = ta.shape();
        let [nb, cb, hb, wb] = tb.shape();
        if (n, h, w) != (nb, hb, wb) {
            return Err(NetError::Shape(format!("concat {:?} with {:?}", ta.shape(), tb.shape())));
        }
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(n * (sa + sb));
        for s in 0..n {
            out.extend_from_slice(&ta.data()[s * sa..(s + 1) * sa]);
            out.extend_from_slice(&tb.data()[s * sb..(s + 1) * sb]);
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new([n, ca + cb, h, w], out)?, Op::Concat(a, b), rg)
    }

    /// Elementwise `mask ? a : b` for same-shaped `a` and `b`.
    pub fn select(&mut self, mask: Vec<bool>, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() || mask.len() != ta.len() {
            return Err(NetError::Shape(format!("select over {:?} and {:?}", ta.shape(), tb.shape())));
        }
        let data = mask
            .iter()
            .zip(ta.data().iter().zip(tb.data()))
            .map(|(&m, (&x, &y))| if m { x } else { y })
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Select(mask, a, b), rg)
    }

    /// Separable valid-mode filtering of every channel with `taps` along both
    /// axes (no padding; each side shrinks by `taps.len() - 1`).
    pub fn filter_valid(&mut self, a: Var, taps: &[f64]) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        let [n, c, h, w] = t.shape();
        let k = taps.len();
        if k == 0 || k > h || k > w {
            return Err(NetError::Shape(format!("{k}-tap window on {h}x{w}")));
        }
        let (oh, ow) = (h + 1 - k, w + 1 - k);
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            filter_valid_plane(&t.data()[p * h * w..(p + 1) * h * w], h, w, taps, &mut out[p * oh * ow..(p + 1) * oh * ow]);
        }
        let rg = self.rg(a);
        self.push(Tensor::new([n, c, oh, ow], out)?, Op::FilterValid(a, taps.to_vec()), rg)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NetError::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let out_shape = node.value.shape();
        // Accumulate `g·d(out)/d(in)` for a broadcast binary op.
        let mut bin = |a: Var, b: Var, da: &dyn Fn(f64, f64) -> f64, db: &dyn Fn(f64, f64) -> f64| {
            let (ta, tb) = (val(a), val(b));
            if self.rg(a) {
                let mut acc = grads[a.0].take().unwrap_or_else(|| vec![0.0; ta.len()]);
                for_each_bcast(out_shape, ta.shape(), tb.shape(), |o, i, j| acc[i] += g[o] * da(ta.data()[i], tb.data()[j]));
                grads[a.0] = Some(acc);
            }
            if self.rg(b) {
                let mut acc = grads[b.0].take().unwrap_or_else(|| vec![0.0; tb.len()]);
                for_each_bcast(out_shape, ta.shape(), tb.shape(), |o, i, j| acc[j] += g[o] * db(ta.data()[i], tb.data()[j]));
                grads[b.0] = Some(acc);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => bin(*a, *b, &|_, _| 1.0, &|_, _| 1.0),
            Op::Sub(a, b) => bin(*a, *b, &|_, _| 1.0, &|_, _| -1.0),
            Op::Mul(a, b) => bin(*a, *b, &|_, y| y, &|x, _| x),
            Op::Div(a, b, eps) => {
                let eps = *eps;
                bin(
                    *a,
                    *b,
                    &move |_, y| 1.0 / guard(y, eps),
                    &move |x, y| if y.abs() < eps { 0.0 } else { -x / (y * y) },
                )
            }
            _ => self.propagate_unary(node, g, grads),
        }
    }

    fn propagate_unary(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let elementwise = |a: Var, grads: &mut [Option<Vec<f64>>], d: &dyn Fn(f64, f64) -> f64| {
            if !self.rg(a) {
                return;
            }
            let x = val(a).data();
            let y = node.value.data();
            let acc = add_into(&mut grads[a.0], x.len());
            for i in 0..x.len() {
                acc[i] += g[i] * d(x[i], y[i]);
            }
        };
        match &node.op {
            Op::Affine(a, s) => elementwise(*a, grads, &|_, _| *s),
            Op::Square(a) => elementwise(*a, grads, &|x, _| 2.0 * x),
            Op::Sqrt(a) => elementwise(*a, grads, &|_, y| if y > 0.0 { 0.5 / y } else { 0.0 }),
            Op::Abs(a) => elementwise(*a, grads, &|x, _| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 }),
            Op::SignedPow(a, p) => {
                elementwise(*a, grads, &|x, _| if x == 0.0 { 0.0 } else { p * x.abs().powf(p - 1.0) })
            }
            Op::LeakyRelu(a, s) => elementwise(*a, grads, &|x, _| if x > 0.0 { 1.0 } else { *s }),
            Op::Mean(a) | Op::Sum(a) => {
                if self.rg(*a) {
                    let n = val(*a).len();
                    let scale = if matches!(node.op, Op::Mean(_)) { g[0] / n as f64 } else { g[0] };
                    add_into(&mut grads[a.0], n).iter_mut().for_each(|v| *v += scale);
                }
            }
            Op::MeanPerSample(a) | Op::SpatialMean(a) => {
                if self.rg(*a) {
                    let t = val(*a);
                    let per = t.len() / node.value.len();
                    let acc = add_into(&mut grads[a.0], t.len());
                    for (k, chunk) in acc.chunks_mut(per).enumerate() {
                        let s = g[k] / per as f64;
                        chunk.iter_mut().for_each(|v| *v += s);
                    }
                }
            }
            Op::Conv2d(x, w, b) => {
                let (dx, dw, db) = conv2d_backward(val(*x), val(*w), g, self.rg(*x));
                if let Some(dx) = dx {
                    accumulate(&mut grads[x.0], &dx);
                }
                if self.rg(*w) {
                    accumulate(&mut grads[w.0], &dw);
                }
                if self.rg(*b) {
                    accumulate(&mut grads[b.0], &db);
                }
            }
            Op::Linear(x, w, b) => {
                let (tx, tw) = (val(*x), val(*w));
                let [n, ci, _, _] = tx.shape();
                let co = tw.shape()[0];
                if self.rg(*x) {
                    let acc = add_into(&mut grads[x.0], tx.len());
                    for s in 0..n {
                        for o in 0..co {
                            for i in 0..ci {
                                acc[s * ci + i] += g[s * co + o] * tw.data()[o * ci + i];
                            }
                        }
                    }
                }
                if self.rg(*w) {
                    let acc = add_into(&mut grads[w.0], tw.len());
                    for s in 0..n {
                        for o in 0..co {
                            for i in 0..ci {
                                acc[o * ci + i] += g[s * co + o] * tx.data()[s * ci + i];
                            }
                        }
                    }
                }
                if self.rg(*b) {
                    let acc = add_into(&mut grads[b.0], co);
                    for s in 0..n {
                        for o in 0..co {
                            acc[o] += g[s * co + o];
                        }
                    }
                }
            }
            Op::AvgPool2(a) => {
                if self.rg(*a) {
                    let [n, c, h, w] = val(*a).shape();
                    let [_, _, oh, ow] = node.value.shape();
                    let acc = add_into(&mut grads[a.0], n * c * h * w);
                    for p in 0..n * c {
                        for y in 0..oh {
                            for x in 0..ow {
                                let q = 0.25 * g[(p * oh + y) * ow + x];
                                let i = p * h * w + 2 * y * w + 2 * x;
                                acc[i] += q;
                                acc[i + 1] += q;
                                acc[i + w] += q;
                                acc[i + w + 1] += q;
                            }
                        }
                    }
                }
            }
            Op::Upsample2(a) => {
                if self.rg(*a) {
                    let [n, c, h, w] = val(*a).shape();
                    let (oh, ow) = (2 * h, 2 * w);
                    let acc = add_into(&mut grads[a.0], n * c * h * w);
                    for p in 0..n * c {
                        for y in 0..oh {
                            for x in 0..ow {
                                acc[(p * h + y / 2) * w + x / 2] += g[(p * oh + y) * ow + x];
                            }
                        }
                    }
                }
            }
            Op::Concat(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let n = ta.shape()[0];
                let (sa, sb) = (ta.len() / n, tb.len() / n);
                for s in 0..n {
                    let gs = &g[s * (sa + sb)..(s + 1) * (sa + sb)];
                    if self.rg(*a) {
                        let acc = add_into(&mut grads[a.0], ta.len());
                        for (d, v) in acc[s * sa..(s + 1) * sa].iter_mut().zip(&gs[..sa]) {
                            *d += v;
                        }
                    }
                    if self.rg(*b) {
                        let acc = add_into(&mut grads[b.0], tb.len());
                        for (d, v) in acc[s * sb..(s + 1) * sb].iter_mut().zip(&gs[sa..]) {
                            *d += v;
                        }
                    }
                }
            }
            Op::Select(mask, a, b) => {
                for (v, keep) in [(*a, true), (*b, false)] {
                    if self.rg(v) {
                        let acc = add_into(&mut grads[v.0], mask.len());
                        for i in 0..mask.len() {
                            if mask[i] == keep {
                                acc[i] += g[i];
                            }
                        }
                    }
                }
            }
            Op::FilterValid(a, taps) => {
                if self.rg(*a) {
                    let [n, c, h, w] = val(*a).shape();
                    let [_, _, oh, ow] = node.value.shape();
                    let acc = add_into(&mut grads[a.0], n * c * h * w);
                    for p in 0..n * c {
                        filter_valid_plane_adjoint(
                            &g[p * oh * ow..(p + 1) * oh * ow],
                            h,
                            w,
                            taps,
                            &mut acc[p * h * w..(p + 1) * h * w],
                        );
                    }
                }
            }
            Op::Leaf | Op::Add(..) | Op::Sub(..) | Op::Mul(..) | Op::Div(..) => unreachable!("handled by propagate"),
        }
    }
}

fn guard(y: f64, eps: f64) -> f64 {
    if y.abs() >= eps {
        y
    } else if y < 0.0 {
        -eps
    } else {
        eps
    }
}

fn accumulate(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}
