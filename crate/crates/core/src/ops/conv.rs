//! 2-D cross-correlation without bias, NCHW layout.
//!
//! The production path lowers each image to a column matrix (im2col) and
//! multiplies by the flattened weight with a tuned GEMM. The direct
//! nested-loop versions are kept as the reference the GEMM path is tested
//! against.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Resolved sizes of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_image(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    fn out_image(&self) -> usize {
        self.out_channels * self.out_plane()
    }

    /// 1x1, stride 1, no padding: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// `floor((size + 2 * padding - kernel) / stride) + 1`.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::config("kernel and stride must be positive"));
    }
    let padded = size + 2 * padding;
    if padded < kernel {
        return Err(Error::config(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let (batch, in_channels, in_h, in_w) = input.dims4()?;
    let (out_channels, w_in, kh, kw) = weight.dims4()?;
    if w_in != in_channels {
        return Err(Error::config(format!(
            "conv weight expects {w_in} input channels, input has {in_channels}"
        )));
    }
    if kh != kw {
        return Err(Error::config(format!("non-square kernel {kh}x{kw}")));
    }
    Ok(ConvGeometry {
        batch,
        in_channels,
        out_channels,
        in_h,
        in_w,
        kernel: kh,
        stride,
        padding,
        out_h: conv_output_size(in_h, kh, stride, padding)?,
        out_w: conv_output_size(in_w, kw, stride, padding)?,
    })
}

fn im2col<T: Scalar>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let plane = g.out_plane();
    for c in 0..g.in_channels {
        let src = &image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let plane = g.out_plane();
    for c in 0..g.in_channels {
        let dst = &mut image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, stride, padding)?;
    let mut out = Tensor::zeros([g.batch, g.out_channels, g.out_h, g.out_w]);
    let w = MatRef::new(weight.data(), g.out_channels, g.col_rows());
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * g.out_plane()]
    };
    for n in 0..g.batch {
        let image = &input.data()[n * g.in_image()..(n + 1) * g.in_image()];
        let dst = &mut out.data_mut()[n * g.out_image()..(n + 1) * g.out_image()];
        let cols_ref = if g.is_pointwise() {
            image
        } else {
            im2col(&g, image, &mut cols);
            &cols
        };
        gemm(
            T::one(),
            w,
            MatRef::new(cols_ref, g.col_rows(), g.out_plane()),
            T::zero(),
            dst,
        );
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weight)`.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = conv_geometry(input, weight, stride, padding)?;
    check_grad_shape(grad_out, &g)?;
    let mut grad_input = Tensor::zeros(input.shape().to_vec());
    let mut grad_weight = Tensor::zeros(weight.shape().to_vec());
    let (rows, plane) = (g.col_rows(), g.out_plane());
    let mut cols = vec![T::zero(); rows * plane];
    let mut grad_cols = vec![T::zero(); rows * plane];
    for n in 0..g.batch {
        let image = &input.data()[n * g.in_image()..(n + 1) * g.in_image()];
        let gout = &grad_out.data()[n * g.out_image()..(n + 1) * g.out_image()];
        let gout = MatRef::new(gout, g.out_channels, plane);
        let gin = &mut grad_input.data_mut()[n * g.in_image()..(n + 1) * g.in_image()];
        if g.is_pointwise() {
            gemm(T::one(), gout, MatRef::t(image, plane, rows), T::one(), grad_weight.data_mut());
            gemm(T::one(), MatRef::t(weight.data(), rows, g.out_channels), gout, T::zero(), gin);
        } else {
            im2col(&g, image, &mut cols);
            gemm(T::one(), gout, MatRef::t(&cols, plane, rows), T::one(), grad_weight.data_mut());
            gemm(
                T::one(),
                MatRef::t(weight.data(), rows, g.out_channels),
                gout,
                T::zero(),
                &mut grad_cols,
            );
            col2im(&g, &grad_cols, gin);
        }
    }
    Ok((grad_input, grad_weight))
}

fn check_grad_shape<T: Scalar>(grad_out: &Tensor<T>, g: &ConvGeometry) -> Result<()> {
    let want = [g.batch, g.out_channels, g.out_h, g.out_w];
    if grad_out.shape() != want {
        return Err(Error::config(format!(
            "conv grad_out shape {:?}, expected {want:?}",
            grad_out.shape()
        )));
    }
    Ok(())
}

/// Nested-loop cross-correlation. Slow; used as the reference for
/// [`conv2d_forward`].
pub fn conv2d_forward_direct<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, stride, padding)?;
    let mut out = Tensor::zeros([g.batch, g.out_channels, g.out_h, g.out_w]);
    let x = input.data();
    let w = weight.data();
    let k = g.kernel;
    let o = out.data_mut();
    for n in 0..g.batch {
        for co in 0..g.out_channels {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = T::zero();
                    for ci in 0..g.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                    continue;
                                }
                                let xv = x[((n * g.in_channels + ci) * g.in_h + iy as usize) * g.in_w
                                    + ix as usize];
                                let wv = w[((co * g.in_channels + ci) * k + ky) * k + kx];
                                acc = acc + xv * wv;
                            }
                        }
                    }
                    o[((n * g.out_channels + co) * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Nested-loop reference for [`conv2d_backward`].
pub fn conv2d_backward_direct<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = conv_geometry(input, weight, stride, padding)?;
    check_grad_shape(grad_out, &g)?;
    let mut gi = Tensor::zeros(input.shape().to_vec());
    let mut gw = Tensor::zeros(weight.shape().to_vec());
    let (x, w, go) = (input.data(), weight.data(), grad_out.data());
    let k = g.kernel;
    for n in 0..g.batch {
        for co in 0..g.out_channels {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let gv = go[((n * g.out_channels + co) * g.out_h + oy) * g.out_w + ox];
                    for ci in 0..g.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                    continue;
                                }
                                let xi = ((n * g.in_channels + ci) * g.in_h + iy as usize) * g.in_w
                                    + ix as usize;
                                let wi = ((co * g.in_channels + ci) * k + ky) * k + kx;
                                gi.data_mut()[xi] = gi.data()[xi] + gv * w[wi];
                                gw.data_mut()[wi] = gw.data()[wi] + gv * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((gi, gw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random(shape: &[usize], rng: &mut RngStream) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.uniform_in(-1.0, 1.0))
    }

    #[test]
    fn three_by_three_all_ones_kernel() {
        let x = Tensor::new([1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let w = Tensor::full([1, 1, 3, 3], 1.0);
        for y in [
            conv2d_forward(&x, &w, 1, 1).unwrap(),
            conv2d_forward_direct(&x, &w, 1, 1).unwrap(),
        ] {
            assert_eq!(y.shape(), &[1, 1, 3, 3]);
            assert_eq!(y.data()[4], 45.0);
            assert_eq!(y.data()[0], 12.0);
        }
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut rng = RngStream::new(3);
        let x = random(&[2, 1, 5, 4], &mut rng);
        let w = Tensor::full([1, 1, 1, 1], 1.0);
        assert_eq!(conv2d_forward(&x, &w, 1, 0).unwrap().data(), x.data());
        let (gi, _) = conv2d_backward(&x, &x, &w, 1, 0).unwrap();
        assert_eq!(gi.data(), x.data());
    }

    #[test]
    fn full_scale_shape_is_preserved_with_same_padding() {
        let x = Tensor::<f32>::zeros([1, 64, 32, 32]);
        let w = Tensor::<f32>::zeros([64, 64, 3, 3]);
        assert_eq!(conv2d_forward(&x, &w, 1, 1).unwrap().shape(), &[1, 64, 32, 32]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = RngStream::new(5);
        let x = random(&[1, 2, 4, 4], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let go = Tensor::zeros([1, 3, 4, 4]);
        let (gi, gw) = conv2d_backward(&go, &x, &w, 1, 1).unwrap();
        assert!(gi.data().iter().chain(gw.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let x = Tensor::<f64>::zeros([1, 2, 4, 4]);
        let w = Tensor::<f64>::zeros([3, 4, 3, 3]);
        assert!(matches!(conv2d_forward(&x, &w, 1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn gemm_path_matches_direct_path() {
        let mut rng = RngStream::new(11);
        for &(cin, cout, h, k, s, p) in &[
            (2, 3, 5, 3, 1, 1),
            (3, 4, 8, 3, 2, 1),
            (4, 2, 7, 1, 2, 0),
            (2, 2, 6, 5, 1, 2),
            (3, 5, 4, 1, 1, 0),
        ] {
            let x = random(&[2, cin, h, h], &mut rng);
            let w = random(&[cout, cin, k, k], &mut rng);
            let fast = conv2d_forward(&x, &w, s, p).unwrap();
            let slow = conv2d_forward_direct(&x, &w, s, p).unwrap();
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-6);
            }
            let go = random(fast.shape(), &mut rng);
            let (gi, gw) = conv2d_backward(&go, &x, &w, s, p).unwrap();
            let (gi2, gw2) = conv2d_backward_direct(&go, &x, &w, s, p).unwrap();
            for (a, b) in gi.data().iter().zip(gi2.data()).chain(gw.data().iter().zip(gw2.data())) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
