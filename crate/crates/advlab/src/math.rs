//! Probability functions shared by the classifiers and the attack objective.

use crate::tensor::Scalar;

/// Floor applied inside the log of [`cross_entropy`] so the objective stays
/// finite when a class probability underflows.
pub const LOG_CLAMP: f64 = 1e-30;

/// A normalized probability vector, one entry per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<T>(Vec<T>);

impl<T: Scalar> ProbVector<T> {
    /// Wraps raw probabilities, checking normalization to 1e-9.
    pub fn new(p: Vec<T>) -> Self {
        let sum = p.iter().copied().sum::<T>().to_f64_lossy();
        debug_assert!((sum - 1.0).abs() <= 1e-9, "probabilities sum to {sum}");
        ProbVector(p)
    }

    pub fn one_hot(class: usize, n_classes: usize) -> Self {
        assert!(class < n_classes);
        let mut p = vec![T::zero(); n_classes];
        p[class] = T::one();
        ProbVector(p)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> ProbVector<T> {
    assert!(!logits.is_empty());
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    ProbVector(exps.into_iter().map(|e| e / sum).collect())
}

/// `−Σᵢ targetᵢ·log pᵢ`, with each `log pᵢ` clamped below at `log(1e-30)`.
pub fn cross_entropy<T: Scalar>(p: &ProbVector<T>, target: &ProbVector<T>) -> T {
    assert_eq!(p.len(), target.len());
    let floor = T::from_f64_lossy(LOG_CLAMP);
    let mut acc = T::zero();
    for (&pi, &ti) in p.as_slice().iter().zip(target.as_slice()) {
        if ti > T::zero() {
            acc = acc - ti * pi.max(floor).ln();
        }
    }
    acc
}

/// `min(max(x, lower), upper)`.
pub fn clamp<T: Scalar>(x: T, lower: T, upper: T) -> T {
    debug_assert!(lower <= upper);
    x.max(lower).min(upper)
}
