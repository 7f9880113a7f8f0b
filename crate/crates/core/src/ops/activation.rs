use rand::Rng;

use crate::error::{FcnaError, Result};
use crate::tensor::{shape_str, Scalar, Tensor};

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    // Written so that NaN passes through instead of being clamped to zero.
    x.map(|v| if v < T::zero() { T::zero() } else { v })
}

/// Gradient of ReLU given its forward input `x`.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad.shape() {
        return Err(FcnaError::shape("relu_backward", shape_str(x.shape()), shape_str(grad.shape())));
    }
    let data = x.data().iter().zip(grad.data()).map(|(&v, &g)| if v > T::zero() { g } else { T::zero() }).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Per-element multipliers drawn by a train-mode dropout pass:
/// either `0` or `1 / (1 − rate)`.
#[derive(Clone, Debug)]
pub struct DropoutMask<T: Scalar = f32> {
    scale: Vec<T>,
}

impl<T: Scalar> DropoutMask<T> {
    pub fn multipliers(&self) -> &[T] {
        &self.scale
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(FcnaError::InvalidSpec(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted dropout. In eval mode (or at rate 0) the input is returned unchanged
/// and no mask is drawn.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut R,
    train: bool,
) -> Result<(Tensor<T>, Option<DropoutMask<T>>)> {
    check_rate(rate)?;
    if !train || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let scale: Vec<T> = (0..x.len()).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect();
    let data = x.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Some(DropoutMask { scale })))
}

pub fn dropout_backward<T: Scalar>(grad: &Tensor<T>, mask: Option<&DropoutMask<T>>) -> Result<Tensor<T>> {
    let Some(mask) = mask else {
        return Ok(grad.clone());
    };
    if mask.scale.len() != grad.len() {
        return Err(FcnaError::shape("dropout_backward", mask.scale.len(), grad.len()));
    }
    let data = grad.data().iter().zip(&mask.scale).map(|(&g, &s)| g * s).collect();
    Tensor::new(grad.shape().to_vec(), data)
}

fn batch_classes<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match t.shape()[..] {
        [n, k] => Ok((n, k)),
        _ => Err(FcnaError::shape(op, "rank 2 (batch x classes)", shape_str(t.shape()))),
    }
}

/// Row-wise softmax over the class axis of a `batch × classes` tensor.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = batch_classes(logits, "softmax")?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(out)
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(FcnaError::shape("labels", n, labels.len()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(FcnaError::LabelOutOfRange { label, num_classes: k });
    }
    Ok(())
}

/// Mean of `−ln p[label]` over the batch.
pub fn cross_entropy<T: Scalar>(probabilities: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let (n, k) = batch_classes(probabilities, "cross_entropy")?;
    check_labels(labels, n, k)?;
    let tiny = T::min_positive_value();
    let total: T = probabilities
        .data()
        .chunks(k)
        .zip(labels)
        .map(|(row, &l)| if row[l].is_nan() { row[l] } else { -(row[l].max(tiny)).ln() })
        .sum();
    Ok(total / T::from_f64(n as f64))
}

/// Gradient of the mean cross-entropy with respect to the pre-softmax logits.
pub fn softmax_cross_entropy_backward<T: Scalar>(probabilities: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (n, k) = batch_classes(probabilities, "softmax_cross_entropy_backward")?;
    check_labels(labels, n, k)?;
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut grad = probabilities.clone();
    for (row, &l) in grad.data_mut().chunks_mut(k).zip(labels) {
        row[l] = row[l] - T::one();
        for v in row.iter_mut() {
            *v = *v * inv_n;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_basics() {
        let x = Tensor::<f32>::new(vec![4], vec![-2.0, -0.0, 0.5, 3.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 0.5, 3.0]);
        let g = Tensor::full(&[4], 1.0);
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn softmax_of_constant_row_is_uniform() {
        let x = Tensor::<f64>::full(&[2, 5], 3.7);
        let p = softmax(&x).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn softmax_handles_large_logits() {
        let x = Tensor::<f32>::new(vec![1, 3], vec![1000.0, 0.0, -1000.0]).unwrap();
        let p = softmax(&x).unwrap();
        assert!(p.data().iter().all(|v| v.is_finite()));
        assert!((p.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_of_uniform() {
        let p = Tensor::<f64>::full(&[3, 4], 0.25);
        let loss = cross_entropy(&p, &[0, 1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let p = Tensor::<f32>::full(&[1, 2], 0.5);
        assert!(matches!(cross_entropy(&p, &[2]), Err(FcnaError::LabelOutOfRange { label: 2, num_classes: 2 })));
        assert!(softmax_cross_entropy_backward(&p, &[5]).is_err());
    }

    #[test]
    fn eval_dropout_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f32>::from_fn(&[1, 2, 3, 3], |i| i as f32 - 4.5);
        let (y, mask) = dropout_forward(&x, 0.5, &mut rng, false).unwrap();
        assert!(mask.is_none());
        assert_eq!(
            y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn dropout_rate_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f32>::zeros(&[4]);
        assert!(dropout_forward(&x, 1.0, &mut rng, true).is_err());
        assert!(dropout_forward(&x, -0.1, &mut rng, true).is_err());
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f32>::full(&[1_000_000], 1.0);
        let (y, mask) = dropout_forward(&x, 0.5, &mut rng, true).unwrap();
        let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / 1e6;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let g = dropout_backward(&Tensor::full(&[1_000_000], 1.0), mask.as_ref()).unwrap();
        assert_eq!(g, y);
    }
}
