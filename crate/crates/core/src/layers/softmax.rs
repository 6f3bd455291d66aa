use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone)]
pub struct SoftmaxXent<S> {
    /// Mean negative log-likelihood over the batch.
    pub loss: f64,
    pub probs: Tensor<S>,
    pub grad_logits: Tensor<S>,
    /// Samples whose top-1 logit matches the label.
    pub correct: usize,
}

/// Row-wise softmax of `(n, K, 1, 1)` logits, max-subtracted for stability.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::shape("softmax", Shape::new(s.n, s.c, 1, 1), s));
    }
    let mut probs = logits.clone();
    for row in probs.data_mut().chunks_mut(s.c.max(1)) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut total = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    probs.finite("softmax")
}

/// Index of the first maximum.
pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn softmax_xent<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<SoftmaxXent<S>> {
    let s = logits.shape();
    if labels.len() != s.n {
        return Err(Error::Data(format!("{} labels for a batch of {}", labels.len(), s.n)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s.c) {
        return Err(Error::Data(format!("label {bad} out of range for {} classes", s.c)));
    }
    let probs = softmax(logits)?;
    let inv_n = S::one() / S::from_usize(s.n).unwrap();
    let mut grad = probs.clone();
    let mut loss = 0.0f64;
    let mut correct = 0;
    for (n, &label) in labels.iter().enumerate() {
        let row = &logits.data()[n * s.c..(n + 1) * s.c];
        if argmax(row) == label {
            correct += 1;
        }
        // log p = (x - max) - ln(sum exp(x - max)), evaluated without
        // going through the rounded probability.
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        loss -= (row[label] - max - lse).as_f64();
        let g = &mut grad.data_mut()[n * s.c..(n + 1) * s.c];
        g[label] -= S::one();
        for v in g.iter_mut() {
            *v *= inv_n;
        }
    }
    Ok(SoftmaxXent {
        loss: loss / s.n.max(1) as f64,
        probs,
        grad_logits: grad,
        correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[&[f64]]) -> Tensor<f64> {
        let k = rows[0].len();
        Tensor::new([rows.len(), k, 1, 1], rows.concat()).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let out = softmax_xent(&logits(&[&[0.3; 10]]), &[4]).unwrap();
        assert!(out.probs.data().iter().all(|&p| (p - 0.1).abs() < 1e-15));
        assert!((out.loss - 10f64.ln()).abs() < 1e-12);
        assert!((out.loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn two_class_closed_form() {
        let p = softmax(&logits(&[&[0.0, 2f64.ln()]])).unwrap();
        assert!((p.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.data()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shift_invariant() {
        let x = logits(&[&[0.5, -1.0, 2.0, 0.1]]);
        let shifted = x.map(|v| v + 1000.0);
        assert!(softmax(&x).unwrap().max_abs_diff(&softmax(&shifted).unwrap()) < 1e-12);
        let f32_shifted = softmax(&shifted.cast::<f32>()).unwrap();
        assert!(f32_shifted.is_finite());
    }

    #[test]
    fn rows_sum_to_one_and_argmax_agrees() {
        let x = logits(&[&[0.5, -1.0, 2.0, 0.1], &[-3.0, 4.0, 4.5, 0.0], &[9.0, 8.0, -7.0, 1.0]]);
        let p = softmax(&x).unwrap();
        for n in 0..3 {
            let row = &p.data()[n * 4..(n + 1) * 4];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert_eq!(argmax(row), argmax(&x.data()[n * 4..(n + 1) * 4]));
        }
    }

    #[test]
    fn gradient_is_probs_minus_onehot_over_n() {
        let x = logits(&[&[0.5, -1.0, 2.0], &[1.0, 1.0, 0.0]]);
        let out = softmax_xent(&x, &[2, 0]).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let num = (softmax_xent(&p, &[2, 0]).unwrap().loss - softmax_xent(&m, &[2, 0]).unwrap().loss) / (2.0 * h);
            assert!((out.grad_logits.data()[i] - num).abs() < 1e-8);
        }
        assert_eq!(out.correct, 2);
    }

    #[test]
    fn label_out_of_range_is_data_error() {
        let err = softmax_xent(&logits(&[&[0.0, 1.0]]), &[2]).unwrap_err();
        assert_eq!(err.category(), "data");
    }
}
