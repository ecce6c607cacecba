//! Scalar losses returning `(value, d value / d prediction)`.

use crate::error::{NnError, Result};
use crate::tensor::{Real, Tensor};

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NnError::ShapeMismatch {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn grad_tensor<T: Real>(like: &Tensor<T>, data: Vec<T>) -> Tensor<T> {
    Tensor::new(like.shape().to_vec(), data).expect("same length as prediction")
}

/// Mean squared error over all elements.
pub fn mse<T: Real>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    same_shape(prediction, target)?;
    let n = T::lit(prediction.len() as f64);
    let diff: Vec<T> = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| p - t)
        .collect();
    let value = diff.iter().map(|&d| d * d).sum::<T>() / n;
    let two = T::lit(2.0);
    let grad = diff.iter().map(|&d| two * d / n).collect();
    Ok((value, grad_tensor(prediction, grad)))
}

/// Mean absolute error. The subgradient at a zero residual is 0.
pub fn l1<T: Real>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    same_shape(prediction, target)?;
    let n = T::lit(prediction.len() as f64);
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(prediction.len());
    for (&p, &t) in prediction.data().iter().zip(target.data()) {
        let d = p - t;
        value += d.abs();
        grad.push(if d > T::zero() {
            T::one() / n
        } else if d < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        });
    }
    Ok((value / n, grad_tensor(prediction, grad)))
}

pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy of probabilities against a constant label,
/// with probabilities clamped to `[1e-7, 1 - 1e-7]` before the log.
pub fn bce<T: Real>(probabilities: &Tensor<T>, label: f64) -> Result<(T, Tensor<T>)> {
    if !(0.0..=1.0).contains(&label) {
        return Err(NnError::Config(format!("label {label} outside [0, 1]")));
    }
    let n = probabilities.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(probabilities.len());
    for &p in probabilities.data() {
        let raw = p.as_f64();
        if !(0.0..=1.0).contains(&raw) {
            return Err(NnError::Config(format!("probability {raw} outside [0, 1]")));
        }
        let q = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        value -= label * q.ln() + (1.0 - label) * (1.0 - q).ln();
        let clamped = q != raw;
        let g = if clamped {
            0.0
        } else {
            -(label / q - (1.0 - label) / (1.0 - q)) / n
        };
        grad.push(T::lit(g));
    }
    Ok((T::lit(value / n), grad_tensor(probabilities, grad)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[v.len()], v).unwrap()
    }

    #[test]
    fn l1_basics() {
        let a = t(&[0.1, 0.5, 0.9]);
        assert_eq!(l1(&a, &a).unwrap().0, 0.0);
        assert!(l1(&a, &a).unwrap().1.data().iter().all(|&g| g == 0.0));
        let b = t(&[0.35, 0.75, 1.15]);
        assert!((l1(&a, &b).unwrap().0 - 0.25).abs() < 1e-15);
        assert_eq!(l1(&a, &b).unwrap().0, l1(&b, &a).unwrap().0);
    }

    #[test]
    fn mse_gradient_is_scaled_residual() {
        let (v, g) = mse(&t(&[1.0, 3.0]), &t(&[0.0, 1.0])).unwrap();
        assert_eq!(v, 2.5);
        assert_eq!(g.data(), &[1.0, 2.0]);
    }

    #[test]
    fn bce_at_half_is_log_two() {
        let (v, _) = bce(&t(&[0.5, 0.5]), 1.0).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(mse(&t(&[1.0]), &t(&[1.0, 2.0])).is_err());
    }
}
