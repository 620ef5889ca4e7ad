//! Noise probing around attack results: perturbs an image (the original or
//! its adversarial counterpart) with pixel noise matched to the distortion's
//! moments and measures how often the classifier keeps or changes its label.

use rayon::prelude::*;

use crate::dataset::Classify;
use crate::error::{Error, Result};
use crate::math::clamp;
use crate::rng::RandomStream;
use crate::stats::mean_variance;

pub const DEFAULT_N_PROBES: usize = 100;
pub const PROBE_SALT: u64 = 0x9b;

/// Pixel mean and population variance of a distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionStats {
    pub mu: f64,
    pub var: f64,
}

impl DistortionStats {
    pub fn from_distortion(d: &[f64]) -> Self {
        let (mu, var) = mean_variance(d);
        DistortionStats { mu, var }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Departing {
    Original,
    Adversarial,
}

impl Departing {
    pub fn as_str(self) -> &'static str {
        match self {
            Departing::Original => "original",
            Departing::Adversarial => "adversarial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "original" => Some(Departing::Original),
            "adversarial" => Some(Departing::Adversarial),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    Gaussian,
    Empirical,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Empirical => "empirical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" => Some(NoiseKind::Gaussian),
            "empirical" => Some(NoiseKind::Empirical),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSelection {
    Gaussian,
    Empirical,
    Both,
}

impl NoiseSelection {
    fn gaussian(self) -> bool {
        matches!(self, NoiseSelection::Gaussian | NoiseSelection::Both)
    }

    fn empirical(self) -> bool {
        matches!(self, NoiseSelection::Empirical | NoiseSelection::Both)
    }
}

/// Probe plan: variance scales, probe count, noise families, RNG seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSpec {
    pub lambdas: Vec<f64>,
    pub n_probes: usize,
    pub noise: NoiseSelection,
    pub seed: u64,
}

impl ProbeSpec {
    pub fn new(seed: u64) -> Self {
        ProbeSpec {
            lambdas: default_lambdas(),
            n_probes: DEFAULT_N_PROBES,
            noise: NoiseSelection::Both,
            seed,
        }
    }
}

/// Powers of two from 2^-5 through 2^5.
pub fn default_lambdas() -> Vec<f64> {
    (-5..=5).map(|e| (e as f64).exp2()).collect()
}

/// Probing input for one successful attack case.
#[derive(Debug, Clone)]
pub struct ProbeCase {
    pub case_id: usize,
    pub correct_label: u8,
    pub adversarial_label: u8,
    pub original: Vec<f64>,
    pub adversarial: Vec<f64>,
    pub distortion: Vec<f64>,
}

/// One row of the probe table.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub case_id: usize,
    pub departing: Departing,
    pub noise: NoiseKind,
    /// Variance scale; `None` for empirical noise.
    pub lambda: Option<f64>,
    pub n_probes: usize,
    pub frac_correct: f64,
    pub frac_adversarial: f64,
    pub frac_other: f64,
}

impl ProbeOutcome {
    /// Fraction of probes keeping the label the departing image carries.
    pub fn keep_fraction(&self) -> f64 {
        match self.departing {
            Departing::Original => self.frac_correct,
            Departing::Adversarial => self.frac_adversarial,
        }
    }
}

fn tally(
    model: &dyn Classify,
    base: &[f64],
    correct: u8,
    adversarial: u8,
    n_probes: usize,
    mut noisy: impl FnMut() -> Vec<f64>,
) -> (f64, f64, f64) {
    let mut n_correct = 0usize;
    let mut n_adv = 0usize;
    for _ in 0..n_probes {
        let eps = noisy();
        let probe: Vec<f64> = base
            .iter()
            .zip(&eps)
            .map(|(&b, &e)| clamp(b + e, 0.0, 255.0))
            .collect();
        let label = model.predict(&probe);
        if label == correct as usize {
            n_correct += 1;
        } else if label == adversarial as usize {
            n_adv += 1;
        }
    }
    let n = n_probes as f64;
    (
        n_correct as f64 / n,
        n_adv as f64 / n,
        (n_probes - n_correct - n_adv) as f64 / n,
    )
}

/// Probes with i.i.d. pixel noise N(mu, lambda * var).
pub fn gaussian_probe(
    model: &dyn Classify,
    base: &[f64],
    correct: u8,
    adversarial: u8,
    stats: DistortionStats,
    lambda: f64,
    n_probes: usize,
    stream: &mut RandomStream,
) -> (f64, f64, f64) {
    let n = base.len();
    tally(model, base, correct, adversarial, n_probes, || {
        stream.draw_gaussian(stats.mu, lambda * stats.var, n)
    })
}

/// Probes with pixel noise resampled from the distortion values themselves.
pub fn empirical_probe(
    model: &dyn Classify,
    base: &[f64],
    correct: u8,
    adversarial: u8,
    pool: &[f64],
    n_probes: usize,
    stream: &mut RandomStream,
) -> Result<(f64, f64, f64)> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let n = base.len();
    Ok(tally(model, base, correct, adversarial, n_probes, || {
        stream
            .draw_empirical(pool, n)
            .expect("pool checked non-empty")
    }))
}

/// The stream for one probe row. The empirical row uses the index one past
/// the lambda grid so it never collides with a Gaussian row.
fn row_stream(seed: u64, case_id: usize, departing: Departing, lambda_index: usize) -> RandomStream {
    RandomStream::new(seed, 0)
        .derive(PROBE_SALT)
        .derive(case_id as u64)
        .derive(match departing {
            Departing::Original => 0,
            Departing::Adversarial => 1,
        })
        .derive(lambda_index as u64)
}

/// Runs the full probe grid over the given cases. Rows are emitted in a
/// fixed order (case, then departing, then lambda grid, then empirical), and
/// every row draws from its own stream, so the output is independent of the
/// rayon thread count.
pub fn run_probe_suite(
    model: &(dyn Classify + Sync),
    cases: &[ProbeCase],
    spec: &ProbeSpec,
) -> Result<Vec<ProbeOutcome>> {
    if cases.is_empty() {
        return Err(Error::NoSuccessfulCases);
    }
    assert!(spec.n_probes > 0);
    let mut plan: Vec<(usize, Departing, Option<usize>)> = Vec::new();
    for (ci, _) in cases.iter().enumerate() {
        for departing in [Departing::Original, Departing::Adversarial] {
            if spec.noise.gaussian() {
                for li in 0..spec.lambdas.len() {
                    plan.push((ci, departing, Some(li)));
                }
            }
            if spec.noise.empirical() {
                plan.push((ci, departing, None));
            }
        }
    }
    plan.par_iter()
        .map(|&(ci, departing, li)| {
            let case = &cases[ci];
            let base = match departing {
                Departing::Original => &case.original,
                Departing::Adversarial => &case.adversarial,
            };
            let lambda_index = li.unwrap_or(spec.lambdas.len());
            let mut stream = row_stream(spec.seed, case.case_id, departing, lambda_index);
            let ((fc, fa, fo), noise, lambda) = match li {
                Some(li) => {
                    let stats = DistortionStats::from_distortion(&case.distortion);
                    (
                        gaussian_probe(
                            model,
                            base,
                            case.correct_label,
                            case.adversarial_label,
                            stats,
                            spec.lambdas[li],
                            spec.n_probes,
                            &mut stream,
                        ),
                        NoiseKind::Gaussian,
                        Some(spec.lambdas[li]),
                    )
                }
                None => (
                    empirical_probe(
                        model,
                        base,
                        case.correct_label,
                        case.adversarial_label,
                        &case.distortion,
                        spec.n_probes,
                        &mut stream,
                    )?,
                    NoiseKind::Empirical,
                    None,
                ),
            };
            Ok(ProbeOutcome {
                case_id: case.case_id,
                departing,
                noise,
                lambda,
                n_probes: spec.n_probes,
                frac_correct: fc,
                frac_adversarial: fa,
                frac_other: fo,
            })
        })
        .collect()
}

/// Per-case keep-label fractions sorted in descending order, with their mean.
pub fn sorted_fraction_curve(rows: &[ProbeOutcome]) -> Result<(Vec<f64>, f64)> {
    if rows.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut fracs: Vec<f64> = rows.iter().map(ProbeOutcome::keep_fraction).collect();
    fracs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mean = fracs.iter().sum::<f64>() / fracs.len() as f64;
    Ok((fracs, mean))
}

/// Mean outcome fractions at one variance scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaAverage {
    pub lambda: f64,
    pub mean_correct: f64,
    pub mean_adversarial: f64,
    pub mean_other: f64,
    pub n_cases: usize,
}

/// Averages Gaussian rows of one departing kind across cases, per lambda.
/// Every case must contribute the same lambda grid.
pub fn stacked_average(rows: &[ProbeOutcome], departing: Departing) -> Result<Vec<LambdaAverage>> {
    let selected: Vec<&ProbeOutcome> = rows
        .iter()
        .filter(|r| r.noise == NoiseKind::Gaussian && r.departing == departing)
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut lambdas: Vec<f64> = Vec::new();
    for r in &selected {
        let l = r.lambda.expect("gaussian rows carry a lambda");
        if !lambdas.contains(&l) {
            lambdas.push(l);
        }
    }
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = Vec::with_capacity(lambdas.len());
    let mut expected = None;
    for &l in &lambdas {
        let group: Vec<&&ProbeOutcome> =
            selected.iter().filter(|r| r.lambda == Some(l)).collect();
        let n = group.len();
        if *expected.get_or_insert(n) != n {
            return Err(Error::InconsistentGrid);
        }
        let inv = 1.0 / n as f64;
        out.push(LambdaAverage {
            lambda: l,
            mean_correct: group.iter().map(|r| r.frac_correct).sum::<f64>() * inv,
            mean_adversarial: group.iter().map(|r| r.frac_adversarial).sum::<f64>() * inv,
            mean_other: group.iter().map(|r| r.frac_other).sum::<f64>() * inv,
            n_cases: n,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1-D threshold classifier lifted to a fixed-size pixel vector: class 1
    /// when the first pixel exceeds the threshold, else class 0.
    struct Threshold {
        t: f64,
    }

    impl Classify for Threshold {
        fn predict(&self, image: &[f64]) -> usize {
            usize::from(image[0] > self.t)
        }
    }

    fn case(case_id: usize) -> ProbeCase {
        ProbeCase {
            case_id,
            correct_label: 0,
            adversarial_label: 1,
            original: vec![100.0, 0.0],
            adversarial: vec![140.0, 0.0],
            distortion: vec![40.0, 0.0],
        }
    }

    #[test]
    fn default_grid_is_eleven_powers_of_two() {
        let l = default_lambdas();
        assert_eq!(l.len(), 11);
        assert_eq!(l[0], 1.0 / 32.0);
        assert_eq!(l[5], 1.0);
        assert_eq!(l[10], 32.0);
    }

    #[test]
    fn gaussian_flip_rate_matches_normal_tail() {
        // threshold at 120, base at 100, additive noise N(0, s^2) on the
        // deciding pixel: P(flip) = P(Z > 20 / s)
        let model = Threshold { t: 120.0 };
        let stats = DistortionStats { mu: 0.0, var: 625.0 }; // s = 25
        let mut stream = RandomStream::new(9, 4);
        let (fc, fa, fo) = gaussian_probe(
            &model,
            &[100.0, 0.0],
            0,
            1,
            stats,
            1.0,
            20_000,
            &mut stream,
        );
        // Phi(20/25) = Phi(0.8) ~ 0.7881
        assert!((fc - 0.7881).abs() < 0.01, "fc = {fc}");
        assert!((fa - 0.2119).abs() < 0.01, "fa = {fa}");
        assert_eq!(fo, 0.0);
    }

    #[test]
    fn fractions_sum_to_one_and_are_multiples_of_probe_count() {
        let model = Threshold { t: 120.0 };
        let cases = vec![case(0), case(1)];
        let spec = ProbeSpec {
            n_probes: 64,
            ..ProbeSpec::new(3)
        };
        let rows = run_probe_suite(&model, &cases, &spec).unwrap();
        assert_eq!(rows.len(), 2 * 2 * (11 + 1));
        for r in &rows {
            let total = r.frac_correct + r.frac_adversarial + r.frac_other;
            assert!((total - 1.0).abs() < 1e-12);
            for f in [r.frac_correct, r.frac_adversarial, r.frac_other] {
                let scaled = f * 64.0;
                assert!((scaled - scaled.round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn suite_is_deterministic_and_thread_independent() {
        let model = Threshold { t: 120.0 };
        let cases = vec![case(0), case(7)];
        let spec = ProbeSpec::new(42);
        let a = run_probe_suite(&model, &cases, &spec).unwrap();
        let b = run_probe_suite(&model, &cases, &spec).unwrap();
        assert_eq!(a, b);
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_probe_suite(&model, &cases, &spec).unwrap());
        assert_eq!(a, single);
    }

    #[test]
    fn empty_case_list_is_rejected() {
        let model = Threshold { t: 120.0 };
        assert!(matches!(
            run_probe_suite(&model, &[], &ProbeSpec::new(1)),
            Err(Error::NoSuccessfulCases)
        ));
    }

    #[test]
    fn sorted_curve_descends_and_means() {
        let mk = |id, fc| ProbeOutcome {
            case_id: id,
            departing: Departing::Original,
            noise: NoiseKind::Gaussian,
            lambda: Some(1.0),
            n_probes: 10,
            frac_correct: fc,
            frac_adversarial: 0.0,
            frac_other: 1.0 - fc,
        };
        let rows = vec![mk(0, 0.2), mk(1, 0.8), mk(2, 0.5)];
        let (curve, mean) = sorted_fraction_curve(&rows).unwrap();
        assert_eq!(curve, vec![0.8, 0.5, 0.2]);
        assert!((mean - 0.5).abs() < 1e-12);
        assert!(matches!(
            sorted_fraction_curve(&[]),
            Err(Error::EmptySelection)
        ));
    }

    #[test]
    fn stacked_average_groups_by_lambda() {
        let model = Threshold { t: 120.0 };
        let cases = vec![case(0), case(1), case(2)];
        let spec = ProbeSpec::new(5);
        let rows = run_probe_suite(&model, &cases, &spec).unwrap();
        let avg = stacked_average(&rows, Departing::Adversarial).unwrap();
        assert_eq!(avg.len(), 11);
        for (w, lam) in avg.iter().zip(default_lambdas()) {
            assert_eq!(w.lambda, lam);
            assert_eq!(w.n_cases, 3);
            let total = w.mean_correct + w.mean_adversarial + w.mean_other;
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stacked_average_detects_inconsistent_grid() {
        let mk = |id, lam| ProbeOutcome {
            case_id: id,
            departing: Departing::Original,
            noise: NoiseKind::Gaussian,
            lambda: Some(lam),
            n_probes: 10,
            frac_correct: 1.0,
            frac_adversarial: 0.0,
            frac_other: 0.0,
        };
        let rows = vec![mk(0, 1.0), mk(0, 2.0), mk(1, 1.0)];
        assert!(matches!(
            stacked_average(&rows, Departing::Original),
            Err(Error::InconsistentGrid)
        ));
    }

    #[test]
    fn empirical_probe_rejects_empty_pool() {
        let model = Threshold { t: 120.0 };
        let mut stream = RandomStream::new(1, 0);
        assert!(matches!(
            empirical_probe(&model, &[1.0], 0, 1, &[], 5, &mut stream),
            Err(Error::EmptyPool)
        ));
    }
}
