use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Per-output-index interpolation taps `(lo, hi, weight_of_hi)` along one axis.
pub(crate) type Taps<T> = Vec<(usize, usize, T)>;

/// Corner-aligned sampling: output sample `i` reads source coordinate
/// `i * (src - 1) / (dst - 1)`, so the first and last samples coincide.
fn taps<T: Scalar>(src: usize, dst: usize) -> Taps<T> {
    (0..dst)
        .map(|i| {
            if dst == 1 || src == 1 {
                return (0, 0, T::zero());
            }
            let num = i * (src - 1);
            let den = dst - 1;
            let lo = num / den;
            let rem = num % den;
            if rem == 0 {
                (lo, lo, T::zero())
            } else {
                (lo, lo + 1, T::of(rem as f64) / T::of(den as f64))
            }
        })
        .collect()
}

fn resize_planes<T: Scalar>(
    src: &[T],
    planes: usize,
    h: usize,
    w: usize,
    rows: &Taps<T>,
    cols: &Taps<T>,
) -> Vec<T> {
    let (th, tw) = (rows.len(), cols.len());
    let mut out = Vec::with_capacity(planes * th * tw);
    for p in 0..planes {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for &(r0, r1, fr) in rows {
            for &(c0, c1, fc) in cols {
                let top = plane[r0 * w + c0] * (T::one() - fc) + plane[r0 * w + c1] * fc;
                let bottom = plane[r1 * w + c0] * (T::one() - fc) + plane[r1 * w + c1] * fc;
                out.push(top * (T::one() - fr) + bottom * fr);
            }
        }
    }
    out
}

/// Bilinear, corner-aligned resize of the last two axes of a plain tensor.
pub fn resize_tensor<T: Scalar>(
    x: &Tensor<T>,
    target_h: usize,
    target_w: usize,
) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() < 2 || target_h == 0 || target_w == 0 {
        return Err(Error::shape(
            "resize_bilinear",
            format!("cannot resize {shape:?} to {target_h}x{target_w}"),
        ));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h == target_h && w == target_w {
        return Ok(x.clone());
    }
    let planes = x.len() / (h * w).max(1);
    let data = resize_planes(
        x.data(),
        planes,
        h,
        w,
        &taps(h, target_h),
        &taps(w, target_w),
    );
    let mut out_shape = shape.to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = target_h;
    out_shape[n - 1] = target_w;
    Tensor::new(&out_shape, data)
}

impl<T: Scalar> Graph<T> {
    /// Differentiable bilinear resize of the last two axes (corner-aligned).
    pub fn resize_bilinear(&mut self, x: Var, target_h: usize, target_w: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || target_h == 0 || target_w == 0 {
            return Err(Error::shape(
                "resize_bilinear",
                format!("cannot resize {shape:?} to {target_h}x{target_w}"),
            ));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if h == target_h && w == target_w {
            return Ok(x);
        }
        let rows = taps::<T>(h, target_h);
        let cols = taps::<T>(w, target_w);
        let value = resize_tensor(self.value(x), target_h, target_w)?;
        let rg = self.requires_grad(x);
        Ok(self.push(
            value,
            rg,
            Op::Resize {
                input: x,
                rows,
                cols,
            },
        ))
    }

    pub(crate) fn resize_backward(
        &self,
        x: Var,
        rows: &Taps<T>,
        cols: &Taps<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let shape = self.shape(x);
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let (th, tw) = (rows.len(), cols.len());
        let planes = g.len() / (th * tw);
        let gd = g.data();
        let dx = self.grad_slot(grads, x).data_mut();
        for p in 0..planes {
            let plane = &mut dx[p * h * w..(p + 1) * h * w];
            let src = &gd[p * th * tw..(p + 1) * th * tw];
            for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
                for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                    let v = src[i * tw + j];
                    let top = v * (T::one() - fr);
                    let bottom = v * fr;
                    plane[r0 * w + c0] += top * (T::one() - fc);
                    plane[r0 * w + c1] += top * fc;
                    plane[r1 * w + c0] += bottom * (T::one() - fc);
                    plane[r1 * w + c1] += bottom * fc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 5], |i| i as f64 * 0.1);
        assert_eq!(resize_tensor(&x, 3, 5).unwrap(), x);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f64>::full(&[1, 4, 4], 0.375);
        for (h, w) in [(1, 1), (2, 7), (9, 3), (16, 16)] {
            let y = resize_tensor(&x, h, w).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.375).abs() < 1e-15));
        }
    }

    #[test]
    fn corner_aligned_two_to_three() {
        let x = Tensor::<f64>::from_f64(&[1, 2, 2], &[0., 2., 4., 6.]).unwrap();
        let y = resize_tensor(&x, 3, 3).unwrap();
        assert_eq!(y.data(), &[0., 1., 2., 2., 3., 4., 4., 5., 6.]);
    }

    #[test]
    fn graph_resize_matches_plain() {
        let xv = Tensor::<f64>::from_fn(&[2, 1, 4, 6], |i| (i as f64).sin());
        let mut g = Graph::new();
        let x = g.variable(xv.clone());
        let y = g.resize_bilinear(x, 7, 3).unwrap();
        assert_eq!(g.value(y), &resize_tensor(&xv, 7, 3).unwrap());
        assert!(g.resize_bilinear(x, 0, 3).is_err());
    }
}
