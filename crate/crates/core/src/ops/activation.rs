use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the forward input was strictly positive; the
/// derivative at exactly zero is taken as 0.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(grad_out, input)?;
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *gv = T::zero();
        }
    }
    Ok(g)
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// `grad * s * (1 - s)` given the forward output `s`.
pub fn sigmoid_backward<T: Scalar>(grad_out: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(grad_out, output)?;
    let mut g = grad_out.clone();
    for (gv, &s) in g.data_mut().iter_mut().zip(output.data()) {
        *gv = *gv * s * (T::one() - s);
    }
    Ok(g)
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!(
            "gradient shape {:?} does not match {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}
