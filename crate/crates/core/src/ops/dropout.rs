use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Mode, Scalar, Tensor};

/// Inverted dropout. In train mode each element is zeroed with probability
/// `p` and survivors are scaled by `1 / (1 - p)`; eval mode is the identity.
///
/// Returns the output and the applied mask (`None` when nothing was dropped
/// or scaled, i.e. eval mode or `p == 0`).
pub fn dropout_forward<T: Scalar>(
    input: &Tensor<T>,
    p: f64,
    rng: Option<&mut RngStream>,
    mode: Mode,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("dropout probability {p} outside [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((input.clone(), None));
    }
    let rng = rng.ok_or_else(|| Error::Usage("train-mode dropout needs an rng".into()))?;
    let keep = T::lit(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..input.numel())
        .map(|_| if rng.uniform() < p { T::zero() } else { keep })
        .collect();
    let out = dropout_apply(input, &mask)?;
    Ok((out, Some(mask)))
}

/// Multiplies by a fixed mask; also the backward pass.
pub fn dropout_apply<T: Scalar>(input: &Tensor<T>, mask: &[T]) -> Result<Tensor<T>> {
    if mask.len() != input.numel() {
        return Err(Error::config("dropout mask length mismatch"));
    }
    let mut out = input.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(mask) {
        *v = *v * m;
    }
    Ok(out)
}

pub fn dropout_backward<T: Scalar>(grad_out: &Tensor<T>, mask: Option<&[T]>) -> Result<Tensor<T>> {
    match mask {
        Some(m) => dropout_apply(grad_out, m),
        None => Ok(grad_out.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_and_eval_are_identity() {
        let mut rng = RngStream::new(1);
        let x = Tensor::from_fn([4, 5], |i| i as f32 - 3.0);
        let (y, m) = dropout_forward(&x, 0.0, Some(&mut rng), Mode::Train).unwrap();
        assert_eq!(y, x);
        assert!(m.is_none());
        let (y, _) = dropout_forward(&x, 0.7, None, Mode::Eval).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn probability_one_is_rejected() {
        let x = Tensor::<f32>::zeros([2]);
        assert!(matches!(dropout_forward(&x, 1.0, None, Mode::Eval), Err(Error::Config(_))));
    }

    #[test]
    fn half_dropout_zero_fraction() {
        let mut rng = RngStream::new(123);
        let x = Tensor::<f32>::full([1_000_000], 1.0);
        let (y, _) = dropout_forward(&x, 0.5, Some(&mut rng), Mode::Train).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e6;
        assert!((zeros - 0.5).abs() < 0.005, "{zeros}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn same_seed_same_mask() {
        let x = Tensor::<f32>::full([1000], 1.0);
        let run = || {
            let mut rng = RngStream::new(9);
            dropout_forward(&x, 0.3, Some(&mut rng), Mode::Train).unwrap().1.unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
