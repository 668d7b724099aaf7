//! Convolution, transposed convolution and volumetric convolution via im2col + GEMM.
//!
//! Every variant is lowered onto a 3-D geometry; 2-D layers use a depth of one.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Output length of a strided, zero-padded convolution along one axis.
pub fn conv_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if stride == 0 || kernel == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

/// Output length of a transposed convolution along one axis.
pub fn deconv_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    if stride == 0 || kernel == 0 || input == 0 || output_padding >= stride {
        return None;
    }
    let full = (input - 1) * stride + kernel + output_padding;
    full.checked_sub(2 * padding).filter(|&n| n > 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl Conv2dOptions {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride: [stride; 2],
            padding: [padding; 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Deconv2dOptions {
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    /// Extra rows/columns appended to the output, `< stride`.
    pub output_padding: [usize; 2],
}

impl Deconv2dOptions {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride: [stride; 2],
            padding: [padding; 2],
            output_padding: [0; 2],
        }
    }
}

/// Geometry of one convolution: `input` spatial extent is read through
/// `kernel` windows to produce `output`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn col_cols(&self) -> usize {
        self.output.iter().product()
    }

    fn input_len(&self) -> usize {
        self.channels * self.input.iter().product::<usize>()
    }
}

pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, src: &[T], cols: &mut [T]) {
    let [idp, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let [od, oh, ow] = g.output;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &src[c * idp * ih * iw..(c + 1) * idp * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for z in 0..od {
                        let zi = (z * sd + a) as isize - pd as isize;
                        for y in 0..oh {
                            let yi = (y * sh + b) as isize - ph as isize;
                            let out = &mut dst[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                            if zi < 0 || zi >= idp as isize || yi < 0 || yi >= ih as isize {
                                out.fill(T::zero());
                                continue;
                            }
                            let start = (zi as usize * ih + yi as usize) * iw;
                            let srow = &plane[start..start + iw];
                            for (x, o) in out.iter_mut().enumerate() {
                                let xi = (x * sw + e) as isize - pw as isize;
                                *o = if xi >= 0 && xi < iw as isize {
                                    srow[xi as usize]
                                } else {
                                    T::zero()
                                };
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dst`.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dst: &mut [T]) {
    let [idp, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let [od, oh, ow] = g.output;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut dst[c * idp * ih * iw..(c + 1) * idp * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &cols[row * p..(row + 1) * p];
                    for z in 0..od {
                        let zi = (z * sd + a) as isize - pd as isize;
                        if zi < 0 || zi >= idp as isize {
                            continue;
                        }
                        for y in 0..oh {
                            let yi = (y * sh + b) as isize - ph as isize;
                            if yi < 0 || yi >= ih as isize {
                                continue;
                            }
                            let start = (zi as usize * ih + yi as usize) * iw;
                            let drow = &mut plane[start..start + iw];
                            let srow = &src[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                            for (x, &v) in srow.iter().enumerate() {
                                let xi = (x * sw + e) as isize - pw as isize;
                                if xi >= 0 && xi < iw as isize {
                                    drow[xi as usize] += v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Normalises `[N?, C, spatial...]` to `(batched, N, C, [d,h,w])`.
fn split_input(
    op: &'static str,
    shape: &[usize],
    rank: usize,
) -> Result<(bool, usize, usize, [usize; 3])> {
    let batched = match shape.len() {
        n if n == rank + 2 => true,
        n if n == rank + 1 => false,
        _ => {
            return Err(Error::shape(
                op,
                format!(
                    "input must have {} or {} dims, got {shape:?}",
                    rank + 1,
                    rank + 2
                ),
            ))
        }
    };
    let (n, rest) = if batched {
        (shape[0], &shape[1..])
    } else {
        (1, shape)
    };
    let mut spatial = [1usize; 3];
    spatial[3 - rank..].copy_from_slice(&rest[1..]);
    Ok((batched, n, rest[0], spatial))
}

fn kernel_dims(
    op: &'static str,
    shape: &[usize],
    rank: usize,
) -> Result<(usize, usize, [usize; 3])> {
    if shape.len() != rank + 2 {
        return Err(Error::shape(
            op,
            format!("kernel must have {} dims, got {shape:?}", rank + 2),
        ));
    }
    let mut k = [1usize; 3];
    k[3 - rank..].copy_from_slice(&shape[2..]);
    Ok((shape[0], shape[1], k))
}

fn check_bias<T: Scalar>(
    g: &Graph<T>,
    op: &'static str,
    bias: Option<Var>,
    channels: usize,
) -> Result<()> {
    if let Some(b) = bias {
        if g.shape(b) != [channels] {
            return Err(Error::shape(
                op,
                format!("bias {:?} must be [{channels}]", g.shape(b)),
            ));
        }
    }
    Ok(())
}

fn lift<const R: usize>(v: [usize; R], fill: usize) -> [usize; 3] {
    let mut out = [fill; 3];
    out[3 - R..].copy_from_slice(&v);
    out
}

fn output_shape(batched: bool, n: usize, c: usize, spatial: [usize; 3], rank: usize) -> Vec<usize> {
    let mut shape = Vec::with_capacity(rank + 2);
    if batched {
        shape.push(n);
    }
    shape.push(c);
    shape.extend_from_slice(&spatial[3 - rank..]);
    shape
}

impl<T: Scalar> Graph<T> {
    /// 2-D convolution on `[C,H,W]` or `[N,C,H,W]` with a `[O,C,KH,KW]` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.conv2d_with(input, kernel, bias, Conv2dOptions::new(stride, padding))
    }

    pub fn conv2d_with(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        opts: Conv2dOptions,
    ) -> Result<Var> {
        self.conv_nd(
            "conv2d",
            2,
            input,
            kernel,
            bias,
            lift(opts.stride, 1),
            lift(opts.padding, 0),
        )
    }

    /// 3-D convolution on `[C,L,H,W]` or `[N,C,L,H,W]` with a `[O,C,KL,KH,KW]` kernel.
    pub fn conv3d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var> {
        self.conv_nd("conv3d", 3, input, kernel, bias, stride, padding)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_nd(
        &mut self,
        op: &'static str,
        rank: usize,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var> {
        let (batched, n, c, spatial) = split_input(op, self.shape(input), rank)?;
        let (o, kc, k) = kernel_dims(op, self.shape(kernel), rank)?;
        if kc != c {
            return Err(Error::shape(
                op,
                format!(
                    "input has {c} channels but kernel {:?} expects {kc}",
                    self.shape(kernel)
                ),
            ));
        }
        check_bias(self, op, bias, o)?;
        let mut out_spatial = [0usize; 3];
        for ax in 0..3 {
            out_spatial[ax] = conv_output_size(spatial[ax], k[ax], stride[ax], padding[ax])
                .ok_or_else(|| {
                    Error::shape(
                        op,
                        format!(
                            "kernel {:?} with stride {:?} and padding {:?} does not fit input {:?}",
                            &k[3 - rank..],
                            &stride[3 - rank..],
                            &padding[3 - rank..],
                            &spatial[3 - rank..]
                        ),
                    )
                })?;
        }
        let geom = ConvGeom {
            batch: n,
            channels: c,
            input: spatial,
            kernel: k,
            stride,
            padding,
            output: out_spatial,
        };
        let (r, p) = (geom.col_rows(), geom.col_cols());
        let keep_cols = self.requires_grad(kernel);
        let mut saved = if keep_cols {
            vec![T::zero(); n * r * p]
        } else {
            Vec::new()
        };
        let mut scratch = if keep_cols {
            Vec::new()
        } else {
            vec![T::zero(); r * p]
        };
        let mut out = vec![T::zero(); n * o * p];
        {
            let x = self.value(input).data();
            let w = self.value(kernel).data();
            for s in 0..n {
                let cols = if keep_cols {
                    &mut saved[s * r * p..(s + 1) * r * p]
                } else {
                    &mut scratch[..]
                };
                im2col(
                    &geom,
                    &x[s * geom.input_len()..(s + 1) * geom.input_len()],
                    cols,
                );
                let dst = &mut out[s * o * p..(s + 1) * o * p];
                T::gemm(
                    o,
                    r,
                    p,
                    T::one(),
                    w,
                    (r as isize, 1),
                    cols,
                    (p as isize, 1),
                    T::zero(),
                    dst,
                    (p as isize, 1),
                );
                if let Some(b) = bias {
                    add_channel_bias(dst, self.value(b).data(), p);
                }
            }
        }
        let rg = self.requires_grad(input)
            || self.requires_grad(kernel)
            || bias.is_some_and(|b| self.requires_grad(b));
        let value = Tensor::new(&output_shape(batched, n, o, out_spatial, rank), out)?;
        Ok(self.push(
            value,
            rg,
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
                cols: keep_cols.then_some(saved),
            },
        ))
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn conv_backward(
        &self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: &ConvGeom,
        cols: Option<&[T]>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (r, p) = (geom.col_rows(), geom.col_cols());
        let o = self.shape(kernel)[0];
        let gd = g.data();
        if let (true, Some(cols)) = (self.requires_grad(kernel), cols) {
            let dw = self.grad_slot(grads, kernel).data_mut();
            for s in 0..geom.batch {
                let dy = &gd[s * o * p..(s + 1) * o * p];
                let cs = &cols[s * r * p..(s + 1) * r * p];
                T::gemm(
                    o,
                    p,
                    r,
                    T::one(),
                    dy,
                    (p as isize, 1),
                    cs,
                    (1, p as isize),
                    T::one(),
                    dw,
                    (r as isize, 1),
                );
            }
        }
        if self.requires_grad(input) {
            let w = self.value(kernel).data();
            let mut dcols = vec![T::zero(); r * p];
            let len = geom.input_len();
            let dx = self.grad_slot(grads, input).data_mut();
            for s in 0..geom.batch {
                let dy = &gd[s * o * p..(s + 1) * o * p];
                T::gemm(
                    r,
                    o,
                    p,
                    T::one(),
                    w,
                    (1, r as isize),
                    dy,
                    (p as isize, 1),
                    T::zero(),
                    &mut dcols,
                    (p as isize, 1),
                );
                col2im(geom, &dcols, &mut dx[s * len..(s + 1) * len]);
            }
        }
        if let Some(b) = bias.filter(|&b| self.requires_grad(b)) {
            let db = self.grad_slot(grads, b).data_mut();
            accumulate_channel_bias_grad(db, gd, geom.batch, o, p);
        }
    }

    /// Transposed 2-D convolution with a `[C_in,C_out,KH,KW]` kernel.
    pub fn deconv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.deconv2d_with(input, kernel, bias, Deconv2dOptions::new(stride, padding))
    }

    pub fn deconv2d_with(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        opts: Deconv2dOptions,
    ) -> Result<Var> {
        const OP: &str = "deconv2d";
        let (batched, n, c_in, spatial) = split_input(OP, self.shape(input), 2)?;
        let (kc_in, c_out, k) = kernel_dims(OP, self.shape(kernel), 2)?;
        if kc_in != c_in {
            return Err(Error::shape(
                OP,
                format!(
                    "input has {c_in} channels but kernel {:?} expects {kc_in}",
                    self.shape(kernel)
                ),
            ));
        }
        check_bias(self, OP, bias, c_out)?;
        let stride = lift(opts.stride, 1);
        let padding = lift(opts.padding, 0);
        let output_padding = lift(opts.output_padding, 0);
        let mut out_spatial = [1usize; 3];
        for ax in 1..3 {
            out_spatial[ax] = deconv_output_size(spatial[ax], k[ax], stride[ax], padding[ax], output_padding[ax])
                .ok_or_else(|| {
                    Error::shape(
                        OP,
                        format!(
                            "kernel {:?}, stride {:?}, padding {:?}, output padding {:?} invalid for input {:?}",
                            &k[1..],
                            opts.stride,
                            opts.padding,
                            opts.output_padding,
                            &spatial[1..]
                        ),
                    )
                })?;
        }
        // the adjoint convolution maps the deconv output back onto its input
        let geom = ConvGeom {
            batch: n,
            channels: c_out,
            input: out_spatial,
            kernel: k,
            stride,
            padding,
            output: spatial,
        };
        let (r, p) = (geom.col_rows(), geom.col_cols());
        let out_len = geom.input_len();
        let mut out = vec![T::zero(); n * out_len];
        {
            let x = self.value(input).data();
            let w = self.value(kernel).data();
            let mut cols = vec![T::zero(); r * p];
            for s in 0..n {
                let xs = &x[s * c_in * p..(s + 1) * c_in * p];
                T::gemm(
                    r,
                    c_in,
                    p,
                    T::one(),
                    w,
                    (1, r as isize),
                    xs,
                    (p as isize, 1),
                    T::zero(),
                    &mut cols,
                    (p as isize, 1),
                );
                let dst = &mut out[s * out_len..(s + 1) * out_len];
                col2im(&geom, &cols, dst);
                if let Some(b) = bias {
                    add_channel_bias(dst, self.value(b).data(), out_len / c_out);
                }
            }
        }
        let rg = self.requires_grad(input)
            || self.requires_grad(kernel)
            || bias.is_some_and(|b| self.requires_grad(b));
        let value = Tensor::new(&output_shape(batched, n, c_out, out_spatial, 2), out)?;
        Ok(self.push(
            value,
            rg,
            Op::Deconv {
                input,
                kernel,
                bias,
                geom,
            },
        ))
    }

    pub(crate) fn deconv_backward(
        &self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: &ConvGeom,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (r, p) = (geom.col_rows(), geom.col_cols());
        let c_in = self.shape(kernel)[0];
        let out_len = geom.input_len();
        let gd = g.data();
        let need_x = self.requires_grad(input);
        let need_w = self.requires_grad(kernel);
        if need_x || need_w {
            let x = self.value(input).data();
            let w = self.value(kernel).data();
            let mut dcols = vec![T::zero(); r * p];
            let mut dx_all = need_x.then(|| vec![T::zero(); geom.batch * c_in * p]);
            let mut dw_all = need_w.then(|| vec![T::zero(); c_in * r]);
            for s in 0..geom.batch {
                im2col(geom, &gd[s * out_len..(s + 1) * out_len], &mut dcols);
                if let Some(dx) = dx_all.as_mut() {
                    let dst = &mut dx[s * c_in * p..(s + 1) * c_in * p];
                    T::gemm(
                        c_in,
                        r,
                        p,
                        T::one(),
                        w,
                        (r as isize, 1),
                        &dcols,
                        (p as isize, 1),
                        T::zero(),
                        dst,
                        (p as isize, 1),
                    );
                }
                if let Some(dw) = dw_all.as_mut() {
                    let xs = &x[s * c_in * p..(s + 1) * c_in * p];
                    T::gemm(
                        c_in,
                        p,
                        r,
                        T::one(),
                        xs,
                        (p as isize, 1),
                        &dcols,
                        (1, p as isize),
                        T::one(),
                        dw,
                        (r as isize, 1),
                    );
                }
            }
            if let Some(dx) = dx_all {
                self.accumulate_with(grads, input, |i| dx[i]);
            }
            if let Some(dw) = dw_all {
                self.accumulate_with(grads, kernel, |i| dw[i]);
            }
        }
        if let Some(b) = bias.filter(|&b| self.requires_grad(b)) {
            let c_out = geom.channels;
            let db = self.grad_slot(grads, b).data_mut();
            accumulate_channel_bias_grad(db, gd, geom.batch, c_out, out_len / c_out);
        }
    }
}

fn add_channel_bias<T: Scalar>(dst: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in dst.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

fn accumulate_channel_bias_grad<T: Scalar>(
    db: &mut [T],
    g: &[T],
    batch: usize,
    channels: usize,
    plane: usize,
) {
    for s in 0..batch {
        for (c, d) in db.iter_mut().enumerate().take(channels) {
            let start = (s * channels + c) * plane;
            *d += g[start..start + plane].iter().copied().sum::<T>();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 3]));
        let k = g.constant(Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64 - 1.5));
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.conv2d(x, k, Some(b), 1, 0).unwrap();
        assert_eq!(g.shape(y), &[2, 2, 2]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut g = Graph::<f64>::new();
        let xv = Tensor::from_fn(&[1, 5, 4], |i| (i as f64).cos());
        let x = g.constant(xv.clone());
        let k = g.constant(t(&[1, 1, 3, 3], &[0., 0., 0., 0., 1., 0., 0., 0., 0.]));
        let y = g.conv2d(x, k, None, 1, 1).unwrap();
        assert_eq!(g.value(y), &xv);
    }

    #[test]
    fn strided_ramp_window_sums() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[1, 4, 4], |i| i as f64));
        let k = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, Some(b), 2, 0).unwrap();
        assert_eq!(g.value(y).data(), &[10.0, 18.0, 42.0, 50.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch_with_dimensions() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 4, 4]));
        let k = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let err = g.conv2d(x, k, None, 1, 1).unwrap_err().to_string();
        assert!(
            err.contains("2 channels") && err.contains("[1, 3, 3, 3]"),
            "{err}"
        );
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 2]));
        let k = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(g.conv2d(x, k, None, 1, 0).is_err());
    }

    #[test]
    fn deconv_single_pixel_broadcast() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 1], &[2.5]));
        let k = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let y = g.deconv2d(x, k, None, 2, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 2]);
        assert!(g.value(y).data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn deconv_zero_kernel_gives_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 3], |i| i as f64));
        let k = g.constant(Tensor::zeros(&[2, 3, 3, 3]));
        let b = g.constant(Tensor::zeros(&[3]));
        let y = g.deconv2d(x, k, Some(b), 2, 1).unwrap();
        assert_eq!(g.shape(y), &[3, 5, 5]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deconv_block_scatter() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 2, 2], &[1., 2., 3., 4.]));
        let k = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let y = g.deconv2d(x, k, None, 2, 0).unwrap();
        #[rustfmt::skip]
        let expected = [
            1., 1., 2., 2.,
            1., 1., 2., 2.,
            3., 3., 4., 4.,
            3., 3., 4., 4.,
        ];
        assert_eq!(g.value(y).data(), &expected);
    }

    #[test]
    fn deconv_output_padding_doubles_size() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 8, 8]));
        let k = g.constant(Tensor::zeros(&[2, 3, 3, 3]));
        let opts = Deconv2dOptions {
            stride: [2, 2],
            padding: [1, 1],
            output_padding: [1, 1],
        };
        let y = g.deconv2d_with(x, k, None, opts).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 16, 16]);
    }

    #[test]
    fn deconv_input_gradient_is_conv_of_upstream() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(Tensor::from_fn(&[2, 3, 3], |i| (i as f64 * 0.7).sin()));
        let kv = Tensor::from_fn(&[2, 3, 3, 3], |i| (i as f64 * 0.3).cos());
        let k = g.constant(kv.clone());
        let y = g.deconv2d(x, k, None, 2, 1).unwrap();
        let up = Tensor::from_fn(g.shape(y), |i| (i as f64 * 1.1).sin());
        let upv = g.constant(up.clone());
        let prod = g.mul(y, upv).unwrap();
        let loss = g.sum(prod);
        g.backward(loss).unwrap();
        let dx = g.grad(x).unwrap().clone();

        let mut h = Graph::<f64>::new();
        let u = h.constant(up);
        let kk = h.constant(kv);
        let c = h.conv2d(u, kk, None, 2, 1).unwrap();
        assert!(h.value(c).max_abs_diff(&dx) < 1e-12);
    }

    #[test]
    fn conv3d_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 2, 2, 2], 1.0));
        let k = g.constant(Tensor::full(&[1, 1, 2, 2, 2], 1.0));
        let y = g.conv3d(x, k, None, [1; 3], [0; 3]).unwrap();
        assert_eq!(g.value(y).data(), &[8.0]);

        let xv = Tensor::from_fn(&[1, 3, 2, 4], |i| i as f64 - 7.0);
        let x = g.constant(xv.clone());
        let k = g.constant(Tensor::full(&[1, 1, 1, 1, 1], 1.0));
        let y = g.conv3d(x, k, None, [1; 3], [0; 3]).unwrap();
        assert_eq!(g.value(y), &xv);

        let x = g.constant(Tensor::zeros(&[2, 3, 4, 4]));
        let k = g.constant(Tensor::full(&[4, 2, 3, 3, 3], 0.3));
        let y = g.conv3d(x, k, None, [1, 2, 2], [1; 3]).unwrap();
        assert_eq!(g.shape(y), &[4, 3, 2, 2]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn size_rules_are_mutually_inverse() {
        for n in 1..40 {
            for (k, s, p) in [
                (3, 1, 1),
                (5, 1, 2),
                (3, 2, 1),
                (5, 2, 2),
                (4, 2, 1),
                (2, 2, 0),
            ] {
                let Some(o) = conv_output_size(n, k, s, p) else {
                    continue;
                };
                let op = (n + 2 * p - k) % s;
                assert_eq!(
                    deconv_output_size(o, k, s, p, op),
                    Some(n),
                    "n={n} k={k} s={s} p={p}"
                );
            }
        }
    }
}
