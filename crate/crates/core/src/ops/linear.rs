use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

fn check<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, d) = input.dims2()?;
    let (wd, m) = weight.dims2()?;
    if wd != d {
        return Err(Error::config(format!(
            "linear weight expects {wd} features, input has {d}"
        )));
    }
    if bias.numel() != m {
        return Err(Error::config(format!("linear bias has {} entries, expected {m}", bias.numel())));
    }
    Ok((n, d, m))
}

/// `input[N,D] · weight[D,M] + bias[M]`.
pub fn linear_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d, m) = check(input, weight, bias)?;
    let mut out = Tensor::from_fn([n, m], |i| bias.data()[i % m]);
    gemm(
        T::one(),
        MatRef::new(input.data(), n, d),
        MatRef::new(weight.data(), d, m),
        T::one(),
        out.data_mut(),
    );
    Ok(out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn linear_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d) = input.dims2()?;
    let (_, m) = weight.dims2()?;
    if grad_out.shape() != [n, m] {
        return Err(Error::config(format!(
            "linear grad_out shape {:?}, expected [{n}, {m}]",
            grad_out.shape()
        )));
    }
    let mut grad_input = Tensor::zeros([n, d]);
    let mut grad_weight = Tensor::zeros([d, m]);
    let go = MatRef::new(grad_out.data(), n, m);
    gemm(T::one(), go, MatRef::t(weight.data(), m, d), T::zero(), grad_input.data_mut());
    gemm(T::one(), MatRef::t(input.data(), d, n), go, T::zero(), grad_weight.data_mut());
    let mut grad_bias = Tensor::zeros([m]);
    for row in grad_out.data().chunks(m) {
        for (b, &g) in grad_bias.data_mut().iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    Ok((grad_input, grad_weight, grad_bias))
}
