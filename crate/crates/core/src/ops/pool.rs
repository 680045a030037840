use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Non-overlapping `kernel x kernel` average pooling.
pub fn avgpool_forward<T: Scalar>(input: &Tensor<T>, kernel: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if kernel == 0 || h % kernel != 0 || w % kernel != 0 {
        return Err(Error::config(format!(
            "pool kernel {kernel} does not divide {h}x{w}"
        )));
    }
    let (oh, ow) = (h / kernel, w / kernel);
    let area = T::lit((kernel * kernel) as f64);
    let x = input.data();
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for (plane_idx, dst) in out.data_mut().chunks_mut(oh * ow).enumerate() {
        let src = &x[plane_idx * h * w..(plane_idx + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for y in oy * kernel..(oy + 1) * kernel {
                    for v in &src[y * w + ox * kernel..y * w + (ox + 1) * kernel] {
                        acc = acc + *v;
                    }
                }
                dst[oy * ow + ox] = acc / area;
            }
        }
    }
    Ok(out)
}

/// Spreads each output gradient evenly over its `kernel x kernel` patch.
pub fn avgpool_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize], kernel: usize) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = grad_out.dims4()?;
    let [_, _, h, w] = *input_shape else {
        return Err(Error::config("avgpool input must be rank 4"));
    };
    if kernel == 0 || h != oh * kernel || w != ow * kernel || input_shape[..2] != [n, c] {
        return Err(Error::config(format!(
            "avgpool grad shape {:?} inconsistent with input {input_shape:?}",
            grad_out.shape()
        )));
    }
    let area = T::lit((kernel * kernel) as f64);
    let mut grad_in = Tensor::zeros(input_shape.to_vec());
    let g = grad_out.data();
    for (plane_idx, dst) in grad_in.data_mut().chunks_mut(h * w).enumerate() {
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = g[plane_idx * oh * ow + (y / kernel) * ow + x / kernel] / area;
            }
        }
    }
    Ok(grad_in)
}

/// Mean over each `H x W` plane, `[N,C,H,W] -> [N,C]`.
pub fn global_avgpool_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let area = T::lit((h * w) as f64);
    let data = input
        .data()
        .chunks(h * w)
        .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) / area)
        .collect();
    Tensor::new([n, c], data)
}

pub fn global_avgpool_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let [n, c, h, w] = *input_shape else {
        return Err(Error::config("global pool input must be rank 4"));
    };
    if grad_out.shape() != [n, c] {
        return Err(Error::config("global pool grad shape mismatch"));
    }
    let area = T::lit((h * w) as f64);
    let g = grad_out.data();
    Ok(Tensor::from_fn(input_shape.to_vec(), |i| g[i / (h * w)] / area))
}
