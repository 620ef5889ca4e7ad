//! Descriptive statistics of distortion pixels.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Mean, standard deviation, skewness and excess kurtosis of a sample.
///
/// Central moments use the population (n-denominator) convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSummary<T> {
    pub mean: T,
    pub sd: T,
    pub skewness: T,
    pub excess_kurtosis: T,
    pub n: usize,
}

/// Single-pass mean, then central moments m2..m4 over the sample.
pub fn moments<T: Scalar>(samples: &[T]) -> Result<MomentSummary<T>> {
    assert!(samples.len() >= 2, "moments require n >= 2");
    let n = T::from_usize(samples.len()).unwrap();
    let mean = samples.iter().copied().sum::<T>() / n;
    let mut m2 = T::zero();
    let mut m3 = T::zero();
    let mut m4 = T::zero();
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 = m2 / n;
    m3 = m3 / n;
    m4 = m4 / n;
    let sd = m2.sqrt();
    if sd == T::zero() {
        return Err(Error::DegenerateSample);
    }
    Ok(MomentSummary {
        mean,
        sd,
        skewness: m3 / m2.powf(T::from_f64_lossy(1.5)),
        excess_kurtosis: m4 / (m2 * m2) - T::from_f64_lossy(3.0),
        n: samples.len(),
    })
}

/// Sample mean and population variance, defined for any n >= 1.
pub fn mean_variance<T: Scalar>(samples: &[T]) -> (T, T) {
    assert!(!samples.is_empty());
    let n = T::from_usize(samples.len()).unwrap();
    let mean = samples.iter().copied().sum::<T>() / n;
    let var = samples.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Four-pass reference: mean, then each central moment separately.
    fn reference(samples: &[f64]) -> MomentSummary<f64> {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let central = |k: i32| samples.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / n;
        let m2 = central(2);
        MomentSummary {
            mean,
            sd: m2.sqrt(),
            skewness: central(3) / m2.powf(1.5),
            excess_kurtosis: central(4) / (m2 * m2) - 3.0,
            n: samples.len(),
        }
    }

    #[test]
    fn symmetric_sample_has_zero_skew() {
        let m = moments(&[1.0f64, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(m.mean, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.skewness, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_sample_is_degenerate() {
        assert!(matches!(
            moments(&[5.0f64, 5.0, 5.0]),
            Err(Error::DegenerateSample)
        ));
    }

    #[test]
    fn bernoulli_draws_match_analytic_moments() {
        // Bernoulli(0.1) as empirical resampling from a 1-in-10 pool.
        // Analytic: skew = (1-2p)/sqrt(pq) = 2.667, exkurt = (1-6pq)/(pq) = 5.111.
        let mut pool = vec![0.0f64; 10];
        pool[0] = 1.0;
        let mut stream = RandomStream::new(42, 0);
        let draws = stream.draw_empirical(&pool, 1_000_000).unwrap();
        let m = moments(&draws).unwrap();
        let p: f64 = 0.1;
        let q = 1.0 - p;
        assert_abs_diff_eq!(m.skewness, (1.0 - 2.0 * p) / (p * q).sqrt(), epsilon = 0.05);
        assert_abs_diff_eq!(m.excess_kurtosis, (1.0 - 6.0 * p * q) / (p * q), epsilon = 0.05);
    }

    proptest! {
        #[test]
        fn matches_four_pass_reference(
            samples in proptest::collection::vec(-100f64..100.0, 2..200)
        ) {
            if let Ok(m) = moments(&samples) {
                let r = reference(&samples);
                prop_assert!((m.mean - r.mean).abs() <= 1e-10 * r.mean.abs().max(1.0));
                prop_assert!((m.sd - r.sd).abs() <= 1e-10 * r.sd.abs().max(1.0));
                prop_assert!((m.skewness - r.skewness).abs() <= 1e-10 * r.skewness.abs().max(1.0));
                prop_assert!(
                    (m.excess_kurtosis - r.excess_kurtosis).abs()
                        <= 1e-10 * r.excess_kurtosis.abs().max(1.0)
                );
            }
        }
    }
}
