//! Distortion statistics and run-level report tables.
//!
//! `stats.csv` carries per-case moment summaries of the distortion, once
//! over the signed pixel values and once over their absolute values, plus
//! run-level mean/sd rows over the successful cases. `summary.csv` stacks
//! the probe fractions per variance scale, and `curves.csv` holds the
//! per-case keep-label fractions sorted in descending order.

use crate::error::{Error, Result};
use crate::probing::{
    sorted_fraction_curve, stacked_average, Departing, NoiseKind, ProbeOutcome,
};
use crate::runio::CaseRecord;
use crate::stats::{mean_variance, moments, MomentSummary};

pub const STATS_HEADER: &str = "case_id,variant,mean,sd,skewness,ex_kurtosis";
pub const SUMMARY_HEADER: &str =
    "noise,departing,lambda,n_cases,mean_frac_correct,mean_frac_adversarial,mean_frac_other";
pub const CURVES_HEADER: &str = "departing,noise,rank,keep_fraction";

/// Moment summaries of one case's distortion.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseDistortionStats {
    pub case_id: usize,
    pub signed: MomentSummary<f64>,
    pub absolute: MomentSummary<f64>,
}

/// Per-case distortion moments for every successful case of a run.
pub fn distortion_statistics(records: &[CaseRecord]) -> Result<Vec<CaseDistortionStats>> {
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.success) {
        let d = r.distortion.as_ref().expect("successful case has distortion");
        let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        out.push(CaseDistortionStats {
            case_id: r.case_id,
            signed: moments(d)?,
            absolute: moments(&abs)?,
        });
    }
    if out.is_empty() {
        return Err(Error::NoSuccessfulCases);
    }
    Ok(out)
}

/// Mean and (population) standard deviation of one statistic across cases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateStat {
    pub mean: f64,
    pub sd: f64,
}

fn aggregate(values: &[f64]) -> AggregateStat {
    let (mean, var) = mean_variance(values);
    AggregateStat {
        mean,
        sd: var.sqrt(),
    }
}

/// Run-level mean/sd of each per-case moment, signed and absolute.
/// Index order: mean, sd, skewness, excess kurtosis.
#[derive(Debug, Clone, PartialEq)]
pub struct RunAggregate {
    pub signed: [AggregateStat; 4],
    pub absolute: [AggregateStat; 4],
    pub n_cases: usize,
}

fn fields(s: &MomentSummary<f64>) -> [f64; 4] {
    [s.mean, s.sd, s.skewness, s.excess_kurtosis]
}

pub fn summarize_run(stats: &[CaseDistortionStats]) -> Result<RunAggregate> {
    if stats.is_empty() {
        return Err(Error::NoSuccessfulCases);
    }
    let collect = |pick: fn(&CaseDistortionStats) -> &MomentSummary<f64>| {
        let mut agg = [AggregateStat { mean: 0.0, sd: 0.0 }; 4];
        for (i, slot) in agg.iter_mut().enumerate() {
            let values: Vec<f64> = stats.iter().map(|c| fields(pick(c))[i]).collect();
            *slot = aggregate(&values);
        }
        agg
    };
    Ok(RunAggregate {
        signed: collect(|c| &c.signed),
        absolute: collect(|c| &c.absolute),
        n_cases: stats.len(),
    })
}

fn push_stats_row(out: &mut String, case_id: &str, variant: &str, m: [f64; 4]) {
    out.push_str(&format!(
        "{},{},{:.6},{:.6},{:.6},{:.6}\n",
        case_id, variant, m[0], m[1], m[2], m[3]
    ));
}

pub fn stats_csv_bytes(stats: &[CaseDistortionStats], agg: &RunAggregate) -> Vec<u8> {
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for c in stats {
        let id = c.case_id.to_string();
        push_stats_row(&mut out, &id, "signed", fields(&c.signed));
        push_stats_row(&mut out, &id, "abs", fields(&c.absolute));
    }
    let means = |a: &[AggregateStat; 4]| [a[0].mean, a[1].mean, a[2].mean, a[3].mean];
    let sds = |a: &[AggregateStat; 4]| [a[0].sd, a[1].sd, a[2].sd, a[3].sd];
    push_stats_row(&mut out, "run_mean", "signed", means(&agg.signed));
    push_stats_row(&mut out, "run_sd", "signed", sds(&agg.signed));
    push_stats_row(&mut out, "run_mean", "abs", means(&agg.absolute));
    push_stats_row(&mut out, "run_sd", "abs", sds(&agg.absolute));
    out.into_bytes()
}

fn empirical_mean_row(rows: &[ProbeOutcome], departing: Departing) -> Option<(usize, f64, f64, f64)> {
    let picked: Vec<&ProbeOutcome> = rows
        .iter()
        .filter(|r| r.noise == NoiseKind::Empirical && r.departing == departing)
        .collect();
    if picked.is_empty() {
        return None;
    }
    let inv = 1.0 / picked.len() as f64;
    Some((
        picked.len(),
        picked.iter().map(|r| r.frac_correct).sum::<f64>() * inv,
        picked.iter().map(|r| r.frac_adversarial).sum::<f64>() * inv,
        picked.iter().map(|r| r.frac_other).sum::<f64>() * inv,
    ))
}

/// Stacked per-lambda averages (both departing kinds) followed by the
/// empirical averages when empirical rows are present.
pub fn summary_csv_bytes(rows: &[ProbeOutcome]) -> Result<Vec<u8>> {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for departing in [Departing::Original, Departing::Adversarial] {
        for avg in stacked_average(rows, departing)? {
            out.push_str(&format!(
                "gaussian,{},{:.6},{},{:.6},{:.6},{:.6}\n",
                departing.as_str(),
                avg.lambda,
                avg.n_cases,
                avg.mean_correct,
                avg.mean_adversarial,
                avg.mean_other,
            ));
        }
    }
    for departing in [Departing::Original, Departing::Adversarial] {
        if let Some((n, fc, fa, fo)) = empirical_mean_row(rows, departing) {
            out.push_str(&format!(
                "empirical,{},,{},{:.6},{:.6},{:.6}\n",
                departing.as_str(),
                n,
                fc,
                fa,
                fo,
            ));
        }
    }
    Ok(out.into_bytes())
}

/// Sorted keep-fraction curves at unit variance scale (and for empirical
/// rows when present), one row per rank.
pub fn curves_csv_bytes(rows: &[ProbeOutcome]) -> Result<Vec<u8>> {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for departing in [Departing::Original, Departing::Adversarial] {
        for noise in [NoiseKind::Gaussian, NoiseKind::Empirical] {
            let selected: Vec<ProbeOutcome> = rows
                .iter()
                .filter(|r| {
                    r.departing == departing
                        && r.noise == noise
                        && (noise == NoiseKind::Empirical || r.lambda == Some(1.0))
                })
                .cloned()
                .collect();
            if selected.is_empty() {
                continue;
            }
            let (curve, _) = sorted_fraction_curve(&selected)?;
            for (rank, frac) in curve.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{:.6}\n",
                    departing.as_str(),
                    noise.as_str(),
                    rank,
                    frac
                ));
            }
        }
    }
    Ok(out.into_bytes())
}

/// FNV-1a over a byte stream; used to fingerprint model files in run
/// metadata.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// `key=value` metadata lines.
pub fn meta_bytes(entries: &[(String, String)]) -> Vec<u8> {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(&format!("{k}={v}\n"));
    }
    out.into_bytes()
}
