use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax - onehot) / N`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::Data(format!("{} labels for {n} logit rows", labels.len())));
    }
    let inv_n = T::one() / T::lit(n as f64);
    let mut grad = Tensor::zeros([n, k]);
    let mut total = T::zero();
    for (i, (row, &label)) in logits.data().chunks(k).zip(labels).enumerate() {
        if label >= k {
            return Err(Error::Data(format!("label {label} outside 0..{k}")));
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_sum = sum.ln();
        total = total + (log_sum - (row[label] - max));
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (j, (gv, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v - max).exp() / sum;
            let target = if j == label { T::one() } else { T::zero() };
            *gv = (p - target) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

/// Index of the largest logit in each row (first on ties).
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<usize>> {
    let (_, k) = logits.dims2()?;
    Ok(logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect())
}
