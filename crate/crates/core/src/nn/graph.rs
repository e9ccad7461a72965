//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value. `backward` walks
//! the tape once in reverse and pushes vector-Jacobian products into the
//! operation inputs. Signal tensors use the layout `[batch, 2, samples]` with
//! channel 0 holding I and channel 1 holding Q.

use num_complex::Complex64;
use rand::Rng;

use super::gemm::{gemm, View};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::modem::PulseShape;
use crate::signal::fft_in_place;

/// Boundary handling for [`Graph::conv1d_padded`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Zero,
    /// Wraps around: the input is treated as one period of a cyclic sequence.
    Circular,
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Vec<f64>),
    ScaleRows(Var, Vec<f64>),
    Relu(Var),
    Tanh(Var),
    Square(Var),
    Huber(Var, f64),
    Clamp(Var, f64, f64),
    NegLogOneMinus(Var, f64),
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        padding: Padding,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Softmax(Var),
    CrossEntropy(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    RowMean(Var),
    Dropout(Var, Vec<f64>),
    Fft(Var),
    ComplexAbs(Var),
    MatchedSymbols(Var, PulseShape),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Recorded computation. Single-threaded; one backward pass per graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

const PROB_FLOOR: f64 = 1e-12;

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn signal_dims(t: &Tensor, op: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [b, 2, n] => Ok((*b, *n)),
        s => Err(Error::shape(format!(
            "{op}: expected [batch, 2, n], got {s:?}"
        ))),
    }
}

fn rows_cols(t: &Tensor) -> (usize, usize) {
    let rows = t.shape()[0];
    (rows, t.numel() / rows)
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

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("forward {name}")));
        }
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, false, Op::Leaf, "input")
    }

    /// Trainable leaf; its gradient is available after [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, true, Op::Leaf, "param")
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, name)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(v, rg, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(v, rg, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(v, rg, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.unary(a, |x| x * factor);
        let rg = self.rg(a);
        self.push(v, rg, Op::Scale(a, factor), "scale")
    }

    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        same_shape(self.value(a), c, "add_const")?;
        let t = self.value(a);
        let data = t.data().iter().zip(c.data()).map(|(x, y)| x + y).collect();
        let v = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(a);
        self.push(v, rg, Op::AddConst(a), "add_const")
    }

    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        same_shape(self.value(a), c, "mul_const")?;
        let t = self.value(a);
        let data = t.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let v = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(a);
        self.push(v, rg, Op::MulConst(a, c.data().to_vec()), "mul_const")
    }

    /// Multiplies row `b` (everything under the leading index) by `factors[b]`.
    pub fn scale_rows(&mut self, a: Var, factors: &[f64]) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = rows_cols(t);
        if factors.len() != rows {
            return Err(Error::shape(format!(
                "scale_rows: {} factors for {rows} rows",
                factors.len()
            )));
        }
        let mut data = t.data().to_vec();
        for (r, f) in factors.iter().enumerate() {
            data[r * cols..(r + 1) * cols]
                .iter_mut()
                .for_each(|x| *x *= f);
        }
        let v = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(a);
        self.push(v, rg, Op::ScaleRows(a, factors.to_vec()), "scale_rows")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.unary(a, |x| x.max(0.0));
        let rg = self.rg(a);
        self.push(v, rg, Op::Relu(a), "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.unary(a, f64::tanh);
        let rg = self.rg(a);
        self.push(v, rg, Op::Tanh(a), "tanh")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.unary(a, |x| x * x);
        let rg = self.rg(a);
        self.push(v, rg, Op::Square(a), "square")
    }

    /// Elementwise Huber penalty with threshold `delta`.
    pub fn huber(&mut self, a: Var, delta: f64) -> Result<Var> {
        if delta.is_nan() || delta <= 0.0 {
            return Err(Error::invalid(format!(
                "huber delta {delta} must be positive"
            )));
        }
        let v = self.unary(a, |x| huber_value(x, delta));
        let rg = self.rg(a);
        self.push(v, rg, Op::Huber(a, delta), "huber")
    }

    /// Clamps into `[lo, hi]`; gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = self.unary(a, |x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(v, rg, Op::Clamp(a, lo, hi), "clamp")
    }

    /// `-ln(1 - min(x, cap))` elementwise.
    pub fn neg_log_one_minus(&mut self, a: Var, cap: f64) -> Result<Var> {
        let v = self.unary(a, |x| -(1.0 - x.min(cap)).ln());
        let rg = self.rg(a);
        self.push(v, rg, Op::NegLogOneMinus(a, cap), "neg_log_one_minus")
    }

    /// Same-length 1-D convolution with zero padding. `input` is
    /// `[batch, c_in, len]`, `weight` `[c_out, c_in, width]`, `bias` `[c_out]`.
    /// Padding `(width - 1) / 2` on the left puts kernel tap `(width - 1) / 2`
    /// on the current sample.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.conv1d_padded(input, weight, bias, Padding::Zero)
    }

    /// [`Graph::conv1d`] with a choice of boundary handling.
    pub fn conv1d_padded(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        padding: Padding,
    ) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (batch, c_in, len) = match x.shape() {
            [b, c, l] => (*b, *c, *l),
            s => return Err(Error::shape(format!("conv1d input {s:?} is not rank 3"))),
        };
        let (c_out, width) = match w.shape() {
            [o, c, k] if *c == c_in => (*o, *k),
            s => {
                return Err(Error::shape(format!(
                    "conv1d weight {s:?} does not match {c_in} input channels"
                )))
            }
        };
        if b.shape() != [c_out] {
            return Err(Error::shape(format!("conv1d bias {:?}", b.shape())));
        }
        let ck = c_in * width;
        let mut out = vec![0.0; batch * c_out * len];
        let mut col = vec![0.0; ck * len];
        for bi in 0..batch {
            im2col(
                &x.data()[bi * c_in * len..(bi + 1) * c_in * len],
                c_in,
                len,
                width,
                padding,
                &mut col,
            );
            let o = &mut out[bi * c_out * len..(bi + 1) * c_out * len];
            for (oc, row) in o.chunks_mut(len).enumerate() {
                row.fill(b.data()[oc]);
            }
            gemm(
                1.0,
                View::row_major(w.data(), c_out, ck),
                View::row_major(&col, ck, len),
                1.0,
                o,
            );
        }
        let v = Tensor::new(vec![batch, c_out, len], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        self.push(
            v,
            rg,
            Op::Conv1d {
                input,
                weight,
                bias,
                padding,
            },
            "conv1d",
        )
    }

    /// Fully connected layer on `[batch, ...]` (trailing dims flattened),
    /// `weight` `[out, in]`, `bias` `[out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (batch, fan_in) = rows_cols(x);
        let fan_out = match w.shape() {
            [o, i] if *i == fan_in => *o,
            s => {
                return Err(Error::shape(format!(
                    "dense weight {s:?} does not accept {fan_in} features"
                )))
            }
        };
        if b.shape() != [fan_out] {
            return Err(Error::shape(format!("dense bias {:?}", b.shape())));
        }
        let mut out: Vec<f64> = (0..batch).flat_map(|_| b.data().iter().copied()).collect();
        gemm(
            1.0,
            View::row_major(x.data(), batch, fan_in),
            View::row_major(w.data(), fan_out, fan_in).t(),
            1.0,
            &mut out,
        );
        let v = Tensor::new(vec![batch, fan_out], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        self.push(
            v,
            rg,
            Op::Dense {
                input,
                weight,
                bias,
            },
            "dense",
        )
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let cols = *t.shape().last().unwrap();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(cols) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        let v = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(a);
        self.push(v, rg, Op::Softmax(a), "softmax")
    }

    /// Mean of `-ln p[label]` over rows of a `[batch, classes]` probability tensor.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let picked = self.picked_values(probs, labels, "cross_entropy")?;
        let loss =
            picked.iter().map(|p| -p.max(PROB_FLOOR).ln()).sum::<f64>() / labels.len() as f64;
        let rg = self.rg(probs);
        self.push(
            Tensor::scalar(loss),
            rg,
            Op::CrossEntropy(probs, labels.to_vec()),
            "cross_entropy",
        )
    }

    /// Selects `probs[b, labels[b]]` into a `[batch]` tensor.
    pub fn pick(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let picked = self.picked_values(probs, labels, "pick")?;
        let v = Tensor::new(vec![labels.len()], picked)?;
        let rg = self.rg(probs);
        self.push(v, rg, Op::Pick(probs, labels.to_vec()), "pick")
    }

    fn picked_values(&self, probs: Var, labels: &[usize], op: &str) -> Result<Vec<f64>> {
        let t = self.value(probs);
        let (rows, cols) = match t.shape() {
            [r, c] => (*r, *c),
            s => {
                return Err(Error::shape(format!(
                    "{op}: expected [batch, classes], got {s:?}"
                )))
            }
        };
        if labels.len() != rows || labels.iter().any(|&l| l >= cols) {
            return Err(Error::shape(format!(
                "{op}: labels do not fit {rows}x{cols}"
            )));
        }
        Ok(labels
            .iter()
            .enumerate()
            .map(|(r, &l)| t.data()[r * cols + l])
            .collect())
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), rg, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), rg, Op::Mean(a), "mean")
    }

    /// Mean over all non-leading dimensions: `[batch, ...] -> [batch]`.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = rows_cols(t);
        let data = t
            .data()
            .chunks(cols)
            .map(|r| r.iter().sum::<f64>() / cols as f64)
            .collect();
        let v = Tensor::new(vec![rows], data)?;
        let rg = self.rg(a);
        self.push(v, rg, Op::RowMean(a), "row_mean")
    }

    /// Inverted dropout with drop probability `rate`. `rate == 0` is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        let n = self.value(a).numel();
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if rate > 0.0 && rng.gen::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let t = self.value(a);
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let v = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(a);
        self.push(v, rg, Op::Dropout(a, mask), "dropout")
    }

    /// Unnormalized DFT of each `[2, n]` row.
    pub fn fft(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (batch, n) = signal_dims(t, "fft")?;
        let mut out = vec![0.0; t.numel()];
        for b in 0..batch {
            let mut buf = unpack(t.data(), b, n);
            fft_in_place(&mut buf, false)?;
            pack(&buf, &mut out, b, n);
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(a);
        self.push(v, rg, Op::Fft(a), "fft")
    }

    /// `[batch, 2, n] -> [batch, n]` modulus of each complex entry.
    pub fn complex_abs(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (batch, n) = signal_dims(t, "complex_abs")?;
        let mut out = vec![0.0; batch * n];
        for b in 0..batch {
            let base = b * 2 * n;
            for k in 0..n {
                out[b * n + k] = t.data()[base + k].hypot(t.data()[base + n + k]);
            }
        }
        let v = Tensor::new(vec![batch, n], out)?;
        let rg = self.rg(a);
        self.push(v, rg, Op::ComplexAbs(a), "complex_abs")
    }

    /// Matched filter sampled at symbol instants: `[batch, 2, n] -> [batch, 2, n / sps]`.
    pub fn matched_symbols(&mut self, a: Var, shape: &PulseShape) -> Result<Var> {
        let t = self.value(a);
        let (batch, n) = signal_dims(t, "matched_symbols")?;
        let m = n / shape.sps();
        let mut out = vec![0.0; batch * 2 * m];
        for b in 0..batch {
            let syms = shape.matched_symbols(&unpack(t.data(), b, n))?;
            pack(&syms, &mut out, b, m);
        }
        let v = Tensor::new(vec![batch, 2, m], out)?;
        let rg = self.rg(a);
        self.push(
            v,
            rg,
            Op::MatchedSymbols(a, shape.clone()),
            "matched_symbols",
        )
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("backward at node {id}")));
            }
            self.propagate(id, &g, &mut grads)?;
            if matches!(self.nodes[id].op, Op::Leaf) {
                let shape = self.nodes[id].value.shape().to_vec();
                self.nodes[id].grad = Some(Tensor::new(shape, g)?);
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[id];
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[v.0].requires_grad {
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
                f(slot);
            }
        };
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| zip3(s, g, vb, |gy, y| gy * y));
                acc(*b, &mut |s| zip3(s, g, va, |gy, x| gy * x));
            }
            Op::Scale(a, f) => acc(*a, &mut |s| {
                s.iter_mut().zip(g).for_each(|(x, y)| *x += y * f)
            }),
            Op::AddConst(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::MulConst(a, c) => acc(*a, &mut |s| zip3(s, g, c, |gy, k| gy * k)),
            Op::ScaleRows(a, f) => {
                let cols = g.len() / f.len();
                acc(*a, &mut |s| {
                    for (i, (x, y)) in s.iter_mut().zip(g).enumerate() {
                        *x += y * f[i / cols];
                    }
                })
            }
            Op::Relu(a) => {
                let x = val(*a);
                acc(*a, &mut |s| {
                    zip3(s, g, x, |gy, v| if v > 0.0 { gy } else { 0.0 })
                })
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |s| zip3(s, g, y, |gy, t| gy * (1.0 - t * t)))
            }
            Op::Square(a) => {
                let x = val(*a);
                acc(*a, &mut |s| zip3(s, g, x, |gy, v| 2.0 * gy * v))
            }
            Op::Huber(a, delta) => {
                let x = val(*a);
                let d = *delta;
                acc(*a, &mut |s| {
                    zip3(s, g, x, |gy, v| {
                        if v.abs() <= d {
                            gy * v
                        } else {
                            gy * d * v.signum()
                        }
                    })
                })
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                acc(*a, &mut |s| {
                    zip3(s, g, x, |gy, v| if v >= *lo && v <= *hi { gy } else { 0.0 })
                })
            }
            Op::NegLogOneMinus(a, cap) => {
                let x = val(*a);
                acc(*a, &mut |s| {
                    zip3(s, g, x, |gy, v| if v < *cap { gy / (1.0 - v) } else { 0.0 })
                })
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                padding,
            } => self.conv1d_backward(*input, *weight, *bias, *padding, g, grads),
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let (x, w) = (&nodes[input.0].value, &nodes[weight.0].value);
                let (batch, fan_in) = rows_cols(x);
                let fan_out = w.shape()[0];
                acc(*input, &mut |s| {
                    gemm(
                        1.0,
                        View::row_major(g, batch, fan_out),
                        View::row_major(w.data(), fan_out, fan_in),
                        1.0,
                        s,
                    )
                });
                acc(*weight, &mut |s| {
                    gemm(
                        1.0,
                        View::row_major(g, batch, fan_out).t(),
                        View::row_major(x.data(), batch, fan_in),
                        1.0,
                        s,
                    )
                });
                acc(*bias, &mut |s| {
                    for row in g.chunks(fan_out) {
                        add_into(s, row);
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let cols = *node.value.shape().last().unwrap();
                acc(*a, &mut |s| {
                    for ((srow, grow), yrow) in
                        s.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for i in 0..cols {
                            srow[i] += yrow[i] * (grow[i] - dot);
                        }
                    }
                })
            }
            Op::CrossEntropy(a, labels) => {
                let p = val(*a);
                let cols = p.len() / labels.len();
                let scale = g[0] / labels.len() as f64;
                acc(*a, &mut |s| {
                    for (r, &l) in labels.iter().enumerate() {
                        let pv = p[r * cols + l];
                        if pv > PROB_FLOOR {
                            s[r * cols + l] -= scale / pv;
                        }
                    }
                })
            }
            Op::Pick(a, labels) => {
                let cols = val(*a).len() / labels.len();
                acc(*a, &mut |s| {
                    for (r, &l) in labels.iter().enumerate() {
                        s[r * cols + l] += g[r];
                    }
                })
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0] / n))
            }
            Op::RowMean(a) => {
                let cols = val(*a).len() / g.len();
                acc(*a, &mut |s| {
                    for (i, x) in s.iter_mut().enumerate() {
                        *x += g[i / cols] / cols as f64;
                    }
                })
            }
            Op::Dropout(a, mask) => acc(*a, &mut |s| zip3(s, g, mask, |gy, m| gy * m)),
            Op::Fft(a) => {
                let (batch, n) = signal_dims(&node.value, "fft")?;
                let mut out = vec![0.0; g.len()];
                for b in 0..batch {
                    // Adjoint of the DFT is n times the inverse DFT.
                    let mut buf = unpack(g, b, n);
                    fft_in_place(&mut buf, true)?;
                    buf.iter_mut().for_each(|z| *z *= n as f64);
                    pack(&buf, &mut out, b, n);
                }
                acc(*a, &mut |s| add_into(s, &out));
            }
            Op::ComplexAbs(a) => {
                let x = val(*a);
                let n = node.value.shape()[1];
                let y = node.value.data();
                acc(*a, &mut |s| {
                    for (i, (&gy, &m)) in g.iter().zip(y).enumerate() {
                        if m > 0.0 {
                            let (b, k) = (i / n, i % n);
                            let re = b * 2 * n + k;
                            let im = re + n;
                            s[re] += gy * x[re] / m;
                            s[im] += gy * x[im] / m;
                        }
                    }
                })
            }
            Op::MatchedSymbols(a, shape) => {
                let (batch, n) = signal_dims(&nodes[a.0].value, "matched_symbols")?;
                let m = node.value.shape()[2];
                let mut out = vec![0.0; batch * 2 * n];
                for b in 0..batch {
                    let back = shape.matched_symbols_adjoint(&unpack(g, b, m), n);
                    pack(&back, &mut out, b, n);
                }
                acc(*a, &mut |s| add_into(s, &out));
            }
        }
        Ok(())
    }

    fn conv1d_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Var,
        padding: Padding,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[weight.0].value;
        let (batch, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (c_out, width) = (w.shape()[0], w.shape()[2]);
        let ck = c_in * width;
        let need_x = self.rg(input);
        let need_w = self.rg(weight);
        let need_b = self.rg(bias);
        let mut dw = need_w.then(|| vec![0.0; w.numel()]);
        let mut db = need_b.then(|| vec![0.0; c_out]);
        let mut dx = need_x.then(|| vec![0.0; x.numel()]);
        let mut col = vec![0.0; ck * len];
        let mut dcol = vec![0.0; ck * len];
        for bi in 0..batch {
            let gb = &g[bi * c_out * len..(bi + 1) * c_out * len];
            if let Some(dw) = dw.as_mut() {
                im2col(
                    &x.data()[bi * c_in * len..(bi + 1) * c_in * len],
                    c_in,
                    len,
                    width,
                    padding,
                    &mut col,
                );
                gemm(
                    1.0,
                    View::row_major(gb, c_out, len),
                    View::row_major(&col, ck, len).t(),
                    1.0,
                    dw,
                );
            }
            if let Some(db) = db.as_mut() {
                for (oc, row) in gb.chunks(len).enumerate() {
                    db[oc] += row.iter().sum::<f64>();
                }
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    1.0,
                    View::row_major(w.data(), c_out, ck).t(),
                    View::row_major(gb, c_out, len),
                    0.0,
                    &mut dcol,
                );
                col2im_add(
                    &dcol,
                    c_in,
                    len,
                    width,
                    padding,
                    &mut dx[bi * c_in * len..(bi + 1) * c_in * len],
                );
            }
        }
        for (v, d) in [(weight, dw), (bias, db), (input, dx)] {
            if let Some(d) = d {
                match grads[v.0].as_mut() {
                    Some(slot) => add_into(slot, &d),
                    None => grads[v.0] = Some(d),
                }
            }
        }
    }
}

pub fn huber_value(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        0.5 * x * x
    } else {
        delta * x.abs() - 0.5 * delta * delta
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn zip3(dst: &mut [f64], g: &[f64], other: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((d, &gy), &o) in dst.iter_mut().zip(g).zip(other) {
        *d += f(gy, o);
    }
}

fn pad_left(width: usize) -> usize {
    (width - 1) / 2
}

// col[(c * width + j) * len + t] = x[c, t - j + pad]
/// Source index for output `t`, kernel tap `j`; `None` falls in the zero padding.
fn tap_source(t: usize, j: usize, len: usize, width: usize, padding: Padding) -> Option<usize> {
    let src = t as isize + pad_left(width) as isize - j as isize;
    match padding {
        Padding::Zero => (src >= 0 && (src as usize) < len).then_some(src as usize),
        Padding::Circular => Some(src.rem_euclid(len as isize) as usize),
    }
}

fn im2col(x: &[f64], c_in: usize, len: usize, width: usize, padding: Padding, col: &mut [f64]) {
    for c in 0..c_in {
        let xc = &x[c * len..(c + 1) * len];
        for j in 0..width {
            let row = &mut col[(c * width + j) * len..(c * width + j + 1) * len];
            for (t, slot) in row.iter_mut().enumerate() {
                *slot = tap_source(t, j, len, width, padding).map_or(0.0, |s| xc[s]);
            }
        }
    }
}

fn col2im_add(
    col: &[f64],
    c_in: usize,
    len: usize,
    width: usize,
    padding: Padding,
    dx: &mut [f64],
) {
    for c in 0..c_in {
        for j in 0..width {
            let row = &col[(c * width + j) * len..(c * width + j + 1) * len];
            for (t, &v) in row.iter().enumerate() {
                if let Some(s) = tap_source(t, j, len, width, padding) {
                    dx[c * len + s] += v;
                }
            }
        }
    }
}

fn unpack(data: &[f64], b: usize, n: usize) -> Vec<Complex64> {
    let base = b * 2 * n;
    (0..n)
        .map(|k| Complex64::new(data[base + k], data[base + n + k]))
        .collect()
}

fn pack(z: &[Complex64], out: &mut [f64], b: usize, n: usize) {
    let base = b * 2 * n;
    for (k, v) in z.iter().enumerate() {
        out[base + k] = v.re;
        out[base + n + k] = v.im;
    }
}

/// Packs complex frames into a `[batch, 2, n]` tensor.
pub fn frames_to_tensor(frames: &[&[Complex64]]) -> Result<Tensor> {
    let n = frames.first().map(|f| f.len()).unwrap_or(0);
    if frames.iter().any(|f| f.len() != n) {
        return Err(Error::shape("frames of unequal length"));
    }
    let mut out = vec![0.0; frames.len() * 2 * n];
    for (b, f) in frames.iter().enumerate() {
        pack(f, &mut out, b, n);
    }
    Tensor::new(vec![frames.len(), 2, n], out)
}

/// Unpacks row `b` of a `[batch, 2, n]` tensor.
pub fn tensor_frame(t: &Tensor, b: usize) -> Vec<Complex64> {
    unpack(t.data(), b, t.shape()[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 5.0])).unwrap();
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0])).unwrap();
        let sq = g.square(x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn softmax_uniform() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 5])).unwrap();
        let p = g.softmax(x).unwrap();
        for v in g.value(p).data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_of_confident_prediction() {
        let mut g = Graph::new();
        let p = g.input(t(&[1, 3], &[1.0 - 2e-12, 1e-12, 1e-12])).unwrap();
        let l = g.cross_entropy(p, &[0]).unwrap();
        assert!(g.value(l).item() < 1e-11);
    }

    #[test]
    fn conv_reproduces_kernel_at_impulse() {
        let mut g = Graph::new();
        let mut x = vec![0.0; 16];
        x[7] = 1.0;
        let x = g.input(t(&[1, 1, 16], &x)).unwrap();
        let k = [0.5, -1.0, 2.0, 3.0, -0.25];
        let w = g.input(t(&[1, 1, 5], &k)).unwrap();
        let b = g.input(Tensor::zeros(&[1])).unwrap();
        let y = g.conv1d(x, w, b).unwrap();
        let out = g.value(y).data();
        // tap (width-1)/2 lands on the impulse
        assert_eq!(&out[5..10], &k);
        assert!(out[..5].iter().chain(&out[10..]).all(|&v| v == 0.0));
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(x), Err(Error::NotScalar(_))));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::GraphConsumed)));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2])).unwrap();
        let b = g.input(Tensor::zeros(&[3])).unwrap();
        assert!(matches!(g.add(a, b), Err(Error::Shape(_))));
        let w = g.input(Tensor::zeros(&[4, 3, 5])).unwrap();
        let x = g.input(Tensor::zeros(&[1, 2, 8])).unwrap();
        let bias = g.input(Tensor::zeros(&[4])).unwrap();
        assert!(g.conv1d(x, w, bias).is_err());
    }

    #[test]
    fn nan_is_rejected_in_forward() {
        let mut g = Graph::new();
        let x = g.input(t(&[1], &[2.0])).unwrap();
        // -ln(1 - 2) is NaN
        assert!(matches!(
            g.neg_log_one_minus(x, 3.0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let x = g.input(t(&[4], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let y = g.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
