//! Elementwise, reduction, linear and layout operations.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Probability clamp used by [`Graph::bce`].
pub const BCE_EPS: f64 = 1e-7;

impl<T: Scalar> Graph<T> {
    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let rg = self.requires_grad(x);
        self.push(value, rg, op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, rg, op))
    }

    /// `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, T::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| {
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            Op::Sigmoid(x),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.requires_grad(x);
        self.push(value, rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::of(self.value(x).len().max(1) as f64);
        let value = Tensor::scalar(self.value(x).sum() / n);
        let rg = self.requires_grad(x);
        self.push(value, rg, Op::Mean(x))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let total: T = av.iter().zip(bv).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let value = Tensor::scalar(total / T::of(av.len().max(1) as f64));
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, rg, Op::Mse(a, b)))
    }

    /// Binary cross-entropy of probabilities against a constant 0/1 label,
    /// averaged over elements. Probabilities are clamped to `[eps, 1-eps]`.
    pub fn bce(&mut self, p: Var, target: T) -> Var {
        let eps = T::of(BCE_EPS);
        let one = T::one();
        let pv = self.value(p).data();
        let total: T = pv
            .iter()
            .map(|&x| {
                let q = clamp_prob(x, eps);
                -(target * q.ln() + (one - target) * (one - q).ln())
            })
            .sum();
        let value = Tensor::scalar(total / T::of(pv.len().max(1) as f64));
        let rg = self.requires_grad(p);
        self.push(
            value,
            rg,
            Op::Bce {
                input: p,
                target,
                eps,
            },
        )
    }

    pub(crate) fn bce_backward(
        &self,
        p: Var,
        target: T,
        eps: T,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let pv = self.value(p).data();
        let s = g.data()[0] / T::of(pv.len() as f64);
        self.accumulate_with(grads, p, |i| {
            let x = pv[i];
            if x < eps || x > T::one() - eps {
                T::zero()
            } else {
                s * (x - target) / (x * (T::one() - x))
            }
        });
    }

    /// `weight · input + bias` for `[n]` or `[batch, n]` inputs and a `[m, n]` weight.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let (batched, rows, n) = match xs.as_slice() {
            [n] => (false, 1, *n),
            [b, n] => (true, *b, *n),
            _ => {
                return Err(Error::shape(
                    "fully_connected",
                    format!("input must be 1-D or 2-D, got {xs:?}"),
                ))
            }
        };
        if ws.len() != 2 || ws[1] != n {
            return Err(Error::shape(
                "fully_connected",
                format!("weight {ws:?} incompatible with input {xs:?}"),
            ));
        }
        let m = ws[0];
        if let Some(b) = bias {
            if self.shape(b) != [m] {
                return Err(Error::shape(
                    "fully_connected",
                    format!("bias {:?} must be [{m}]", self.shape(b)),
                ));
            }
        }
        let mut out = vec![T::zero(); rows * m];
        T::gemm(
            rows,
            n,
            m,
            T::one(),
            self.value(input).data(),
            (n as isize, 1),
            self.value(weight).data(),
            (1, n as isize),
            T::zero(),
            &mut out,
            (m as isize, 1),
        );
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_mut(m) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let shape = if batched { vec![rows, m] } else { vec![m] };
        let rg = self.requires_grad(input)
            || self.requires_grad(weight)
            || bias.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            rg,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    pub(crate) fn linear_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let [m, n] = [self.shape(weight)[0], self.shape(weight)[1]];
        let rows = self.value(input).len() / n;
        let gd = g.data();
        if self.requires_grad(input) {
            let w = self.value(weight).data();
            let dx = self.grad_slot(grads, input).data_mut();
            T::gemm(
                rows,
                m,
                n,
                T::one(),
                gd,
                (m as isize, 1),
                w,
                (n as isize, 1),
                T::one(),
                dx,
                (n as isize, 1),
            );
        }
        if self.requires_grad(weight) {
            let x = self.value(input).data();
            let dw = self.grad_slot(grads, weight).data_mut();
            T::gemm(
                m,
                rows,
                n,
                T::one(),
                gd,
                (1, m as isize),
                x,
                (n as isize, 1),
                T::one(),
                dw,
                (n as isize, 1),
            );
        }
        if let Some(b) = bias.filter(|&b| self.requires_grad(b)) {
            let db = self.grad_slot(grads, b).data_mut();
            for row in gd.chunks(m) {
                for (d, &v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
    }

    /// Concatenation along `axis`. Parts of zero extent along `axis` are skipped.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let kept: Vec<Var> = parts
            .iter()
            .copied()
            .filter(|&v| !self.value(v).is_empty())
            .collect();
        if kept.is_empty() {
            return Err(Error::InvalidArgument(
                "concat needs at least one non-empty tensor".into(),
            ));
        }
        if kept.len() == 1 {
            return Ok(kept[0]);
        }
        let refs: Vec<&Tensor<T>> = kept.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::concat(&refs, axis)?;
        let rg = kept.iter().any(|&v| self.requires_grad(v));
        Ok(self.push(value, rg, Op::Concat { inputs: kept, axis }))
    }

    /// Channel concatenation of batched `[N, C, ...]` tensors (axis 1).
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        self.concat(&[a, b], 1)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).slice_axis(axis, start, len)?;
        let rg = self.requires_grad(x);
        Ok(self.push(
            value,
            rg,
            Op::Slice {
                input: x,
                axis,
                start,
            },
        ))
    }

    pub(crate) fn slice_backward(
        &self,
        x: Var,
        axis: usize,
        start: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let shape = self.shape(x);
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let (dim, len) = (shape[axis], g.shape()[axis]);
        let dx = self.grad_slot(grads, x).data_mut();
        for o in 0..outer {
            let src = &g.data()[o * len * inner..(o + 1) * len * inner];
            let dst = &mut dx[(o * dim + start) * inner..(o * dim + start + len) * inner];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, rg, Op::Reshape(x)))
    }

    /// `[N, L*C, H, W]` frame block to a `[N, C, L, H, W]` volume.
    pub fn frames_to_volume(&mut self, x: Var, frames: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 || frames == 0 || !shape[1].is_multiple_of(frames) {
            return Err(Error::shape(
                "frames_to_volume",
                format!("{shape:?} is not a block of {frames} frames"),
            ));
        }
        let (n, c, plane) = (shape[0], shape[1] / frames, shape[2] * shape[3]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for s in 0..n {
            for f in 0..frames {
                for ch in 0..c {
                    let from = ((s * frames + f) * c + ch) * plane;
                    let to = ((s * c + ch) * frames + f) * plane;
                    out[to..to + plane].copy_from_slice(&src[from..from + plane]);
                }
            }
        }
        let value = Tensor::new(&[n, c, frames, shape[2], shape[3]], out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(
            value,
            rg,
            Op::FramesToVolume {
                input: x,
                frames,
                channels: c,
            },
        ))
    }

    pub(crate) fn volume_backward(
        &self,
        x: Var,
        frames: usize,
        c: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let shape = self.shape(x);
        let (n, plane) = (shape[0], shape[2] * shape[3]);
        let gd = g.data();
        let dx = self.grad_slot(grads, x).data_mut();
        for s in 0..n {
            for f in 0..frames {
                for ch in 0..c {
                    let to = ((s * frames + f) * c + ch) * plane;
                    let from = ((s * c + ch) * frames + f) * plane;
                    for (d, &v) in dx[to..to + plane].iter_mut().zip(&gd[from..from + plane]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

pub(crate) fn clamp_prob<T: Scalar>(p: T, eps: T) -> T {
    p.max(eps).min(T::one() - eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn relu_values_and_subgradient() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::from_f64(&[3], &[-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[4], -3.0));
        let y = g.relu(x);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fully_connected_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[2], &[1.0, 1.0]).unwrap());
        let w = g.constant(Tensor::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap());
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.fully_connected(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 7.0]);

        let ident = g.constant(Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap());
        let xv = g.constant(Tensor::from_f64(&[2], &[-0.5, 4.0]).unwrap());
        let y = g.fully_connected(xv, ident, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[-0.5, 4.0]);

        let zw = g.constant(Tensor::zeros(&[3, 2]));
        let bias = g.constant(Tensor::from_f64(&[3], &[1., 2., 3.]).unwrap());
        let y = g.fully_connected(x, zw, Some(bias)).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);

        assert!(g.fully_connected(bias, w, None).is_err());
    }

    #[test]
    fn concat_shapes_and_empty_parts() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 4, 4]));
        let b = g.constant(Tensor::zeros(&[3, 4, 4]));
        let c = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.shape(c), &[5, 4, 4]);

        let e = g.constant(Tensor::zeros(&[0, 4, 4]));
        assert_eq!(g.concat(&[a, e], 0).unwrap(), a);

        let bad = g.constant(Tensor::zeros(&[1, 4, 3]));
        assert!(g.concat(&[a, bad], 0).is_err());
    }

    #[test]
    fn concat_backward_splits_ones() {
        let mut g = Graph::<f64>::new();
        let a = g.variable(Tensor::full(&[1, 2, 3], 0.5));
        let b = g.variable(Tensor::full(&[1, 1, 3], -2.0));
        let c = g.concat_channels(a, b).unwrap();
        let s = g.sum(c);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &Tensor::full(&[1, 2, 3], 1.0));
        assert_eq!(g.grad(b).unwrap(), &Tensor::full(&[1, 1, 3], 1.0));
    }

    #[test]
    fn backward_simple_sums() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::from_f64(&[3], &[1.0, -2.0, 7.0]).unwrap());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn bce_examples() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::scalar(1.0 - BCE_EPS));
        let l = g.bce(p, 1.0);
        assert!(g.scalar(l) < 1e-6);

        let half = g.constant(Tensor::scalar(0.5));
        for t in [0.0, 1.0] {
            let l = g.bce(half, t);
            assert!(approx(g.scalar(l), std::f64::consts::LN_2, 1e-12));
        }

        let p = g.constant(Tensor::scalar(0.9));
        let l = g.bce(p, 0.0);
        assert!(approx(g.scalar(l), std::f64::consts::LN_10, 1e-9));

        // clamping keeps saturated probabilities finite
        let p = g.constant(Tensor::from_f64(&[2], &[0.0, 1.0]).unwrap());
        let l = g.bce(p, 1.0);
        assert!(g.scalar(l).is_finite());
    }

    #[test]
    fn frames_to_volume_layout() {
        let mut g = Graph::<f64>::new();
        // N=1, L=2, C=2, 1x1
        let x = g.variable(Tensor::from_f64(&[1, 4, 1, 1], &[0., 1., 2., 3.]).unwrap());
        let v = g.frames_to_volume(x, 2).unwrap();
        assert_eq!(g.shape(v), &[1, 2, 2, 1, 1]);
        // volume[c][l] = frame l channel c
        assert_eq!(g.value(v).data(), &[0., 2., 1., 3.]);
    }
}
