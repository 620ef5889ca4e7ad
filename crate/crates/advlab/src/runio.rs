//! On-disk layout of an attack run and the probe table.
//!
//! A run directory holds `attacks.csv` plus, for every successful case
//! `NNN`: the original and adversarial images as binary PGM (`orig_NNN.pgm`,
//! `adv_NNN.pgm`), the exact distortion as raw little-endian f32
//! (`dist_NNN.f32`), and a min-max normalized rendering of the distortion
//! (`dist_vis_NNN.pgm`).

use std::fs;
use std::path::{Path, PathBuf};

use crate::adversarial::AttackResult;
use crate::dataset::AttackCase;
use crate::error::{Error, Result};
use crate::math::clamp;
use crate::probing::{Departing, NoiseKind, ProbeCase, ProbeOutcome};

pub const ATTACKS_CSV: &str = "attacks.csv";
pub const PROBE_CSV: &str = "probe.csv";
pub const ATTACKS_HEADER: &str =
    "case_id,orig_index,correct_label,adv_label,C_star,l2_norm,linf_norm,iterations,success";
pub const PROBE_HEADER: &str =
    "case_id,departing,noise,lambda,n_probes,frac_correct,frac_adversarial,frac_other";

const PGM_SIDE: usize = 28;

/// Binary PGM (P5, maxval 255); pixels are rounded to the nearest level.
pub fn pgm_bytes(pixels: &[f64]) -> Vec<u8> {
    assert_eq!(pixels.len(), PGM_SIDE * PGM_SIDE);
    let mut out = format!("P5\n{PGM_SIDE} {PGM_SIDE}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&p| clamp(p.round(), 0.0, 255.0) as u8));
    out
}

/// Min-max normalization of the distortion onto the full 8-bit range; a
/// constant distortion renders as all zeros.
pub fn distortion_vis_bytes(distortion: &[f64]) -> Vec<u8> {
    let lo = distortion.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = distortion.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let scaled: Vec<f64> = distortion
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span * 255.0 } else { 0.0 })
        .collect();
    pgm_bytes(&scaled)
}

fn distortion_f32_bytes(distortion: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(distortion.len() * 4);
    for &v in distortion {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn read_distortion_f32(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::TruncatedFile {
            needed: bytes.len() + 4 - bytes.len() % 4,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect())
}

fn attacks_row(case_id: usize, r: &AttackResult) -> String {
    format!(
        "{},{},{},{},{:.6},{:.6},{:.6},{},{}\n",
        case_id,
        r.case.original_index,
        r.case.correct_label,
        r.case.adversarial_label,
        r.c_star,
        r.l2_norm,
        r.linf_norm,
        r.solver_iterations,
        u8::from(r.success),
    )
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a whole attack run. `results` are indexed by case id; per-case
/// artifacts are emitted only for successful cases.
pub fn write_attack_run(dir: &Path, results: &[(AttackCase, Option<AttackResult>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from(ATTACKS_HEADER);
    csv.push('\n');
    for (case_id, (case, result)) in results.iter().enumerate() {
        match result {
            Some(r) => {
                csv.push_str(&attacks_row(case_id, r));
                if r.success {
                    let original: Vec<f64> = r
                        .adversarial_image
                        .iter()
                        .zip(r.distortion.data())
                        .map(|(&a, &d)| a - d)
                        .collect();
                    write_file(&dir.join(format!("orig_{case_id:03}.pgm")), &pgm_bytes(&original))?;
                    write_file(
                        &dir.join(format!("adv_{case_id:03}.pgm")),
                        &pgm_bytes(&r.adversarial_image),
                    )?;
                    write_file(
                        &dir.join(format!("dist_{case_id:03}.f32")),
                        &distortion_f32_bytes(r.distortion.data()),
                    )?;
                    write_file(
                        &dir.join(format!("dist_vis_{case_id:03}.pgm")),
                        &distortion_vis_bytes(r.distortion.data()),
                    )?;
                }
            }
            // the penalty search hit its cap: record the case as failed
            None => {
                csv.push_str(&format!(
                    "{},{},{},{},{:.6},{:.6},{:.6},{},{}\n",
                    case_id,
                    case.original_index,
                    case.correct_label,
                    case.adversarial_label,
                    0.0,
                    0.0,
                    0.0,
                    0,
                    0
                ));
            }
        }
    }
    write_file(&dir.join(ATTACKS_CSV), csv.as_bytes())
}

/// One parsed `attacks.csv` row plus (for successful cases) the exact
/// distortion loaded back from disk.
#[derive(Debug, Clone)]
pub struct CaseRecord {
    pub case_id: usize,
    pub case: AttackCase,
    pub c_star: f64,
    pub l2_norm: f64,
    pub linf_norm: f64,
    pub iterations: usize,
    pub success: bool,
    pub distortion: Option<Vec<f64>>,
}

fn schema_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::SchemaMismatch {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| schema_err(path, format!("line {line}: bad {name} value {s:?}")))
}

/// Reads `attacks.csv` and the per-case distortion files.
pub fn load_attack_run(dir: &Path) -> Result<Vec<CaseRecord>> {
    let path = dir.join(ATTACKS_CSV);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == ATTACKS_HEADER => {}
        Some((_, header)) => {
            return Err(schema_err(&path, format!("unexpected header {header:?}")))
        }
        None => return Err(schema_err(&path, "empty file")),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(schema_err(&path, format!("line {}: expected 9 fields", i + 1)));
        }
        let case_id: usize = parse_field(&path, i + 1, "case_id", fields[0])?;
        let success = match fields[8] {
            "1" => true,
            "0" => false,
            other => return Err(schema_err(&path, format!("line {}: bad success flag {other:?}", i + 1))),
        };
        let distortion = if success {
            Some(read_distortion_f32(&dir.join(format!("dist_{case_id:03}.f32")))?)
        } else {
            None
        };
        records.push(CaseRecord {
            case_id,
            case: AttackCase {
                original_index: parse_field(&path, i + 1, "orig_index", fields[1])?,
                correct_label: parse_field(&path, i + 1, "correct_label", fields[2])?,
                adversarial_label: parse_field(&path, i + 1, "adv_label", fields[3])?,
            },
            c_star: parse_field(&path, i + 1, "C_star", fields[4])?,
            l2_norm: parse_field(&path, i + 1, "l2_norm", fields[5])?,
            linf_norm: parse_field(&path, i + 1, "linf_norm", fields[6])?,
            iterations: parse_field(&path, i + 1, "iterations", fields[7])?,
            success,
            distortion,
        });
    }
    Ok(records)
}

/// Probing inputs for the successful cases of a loaded run. `original_of`
/// maps a test-set index to its raw image.
pub fn probe_cases<'a>(
    records: &[CaseRecord],
    mut original_of: impl FnMut(usize) -> &'a [f64],
) -> Vec<ProbeCase> {
    records
        .iter()
        .filter(|r| r.success)
        .map(|r| {
            let original = original_of(r.case.original_index).to_vec();
            let distortion = r.distortion.clone().expect("successful case has distortion");
            let adversarial: Vec<f64> = original
                .iter()
                .zip(&distortion)
                .map(|(&x, &d)| clamp(x + d, 0.0, 255.0))
                .collect();
            ProbeCase {
                case_id: r.case_id,
                correct_label: r.case.correct_label,
                adversarial_label: r.case.adversarial_label,
                original,
                adversarial,
                distortion,
            }
        })
        .collect()
}

fn lambda_field(lambda: Option<f64>) -> String {
    match lambda {
        Some(l) => format!("{l:.6}"),
        None => String::new(),
    }
}

pub fn probe_csv_bytes(rows: &[ProbeOutcome]) -> Vec<u8> {
    let mut out = String::from(PROBE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6}\n",
            r.case_id,
            r.departing.as_str(),
            r.noise.as_str(),
            lambda_field(r.lambda),
            r.n_probes,
            r.frac_correct,
            r.frac_adversarial,
            r.frac_other,
        ));
    }
    out.into_bytes()
}

pub fn write_probe_csv(path: &Path, rows: &[ProbeOutcome]) -> Result<()> {
    write_file(path, &probe_csv_bytes(rows))
}

pub fn read_probe_csv(path: &Path) -> Result<Vec<ProbeOutcome>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == PROBE_HEADER => {}
        Some((_, header)) => return Err(schema_err(path, format!("unexpected header {header:?}"))),
        None => return Err(schema_err(path, "empty file")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(schema_err(path, format!("line {}: expected 8 fields", i + 1)));
        }
        let departing = Departing::parse(fields[1])
            .ok_or_else(|| schema_err(path, format!("line {}: bad departing {:?}", i + 1, fields[1])))?;
        let noise = NoiseKind::parse(fields[2])
            .ok_or_else(|| schema_err(path, format!("line {}: bad noise {:?}", i + 1, fields[2])))?;
        let lambda = if fields[3].is_empty() {
            None
        } else {
            Some(parse_field(path, i + 1, "lambda", fields[3])?)
        };
        if (noise == NoiseKind::Gaussian) != lambda.is_some() {
            return Err(schema_err(path, format!("line {}: lambda/noise mismatch", i + 1)));
        }
        rows.push(ProbeOutcome {
            case_id: parse_field(path, i + 1, "case_id", fields[0])?,
            departing,
            noise,
            lambda,
            n_probes: parse_field(path, i + 1, "n_probes", fields[4])?,
            frac_correct: parse_field(path, i + 1, "frac_correct", fields[5])?,
            frac_adversarial: parse_field(path, i + 1, "frac_adversarial", fields[6])?,
            frac_other: parse_field(path, i + 1, "frac_other", fields[7])?,
        });
    }
    Ok(rows)
}

/// Returns the run directory paths of every per-case artifact for `case_id`.
pub fn case_artifacts(dir: &Path, case_id: usize) -> [PathBuf; 4] {
    [
        dir.join(format!("orig_{case_id:03}.pgm")),
        dir.join(format!("adv_{case_id:03}.pgm")),
        dir.join(format!("dist_{case_id:03}.f32")),
        dir.join(format!("dist_vis_{case_id:03}.pgm")),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::ProbVector;
    use crate::Tensor64;
    use tempfile::tempdir;

    fn fake_result(success: bool) -> (AttackCase, Option<AttackResult>) {
        let case = AttackCase {
            original_index: 17,
            correct_label: 3,
            adversarial_label: 8,
        };
        let distortion: Vec<f64> = (0..784).map(|i| ((i % 11) as f64 - 5.0) as f32 as f64).collect();
        let original: Vec<f64> = (0..784).map(|i| (i % 256) as f64).collect();
        let adversarial: Vec<f64> = original
            .iter()
            .zip(&distortion)
            .map(|(&x, &d)| clamp(x + d, 0.0, 255.0))
            .collect();
        let d = Tensor64::from_vec(distortion);
        let result = AttackResult {
            case,
            l2_norm: d.l2_norm(),
            linf_norm: d.linf_norm(),
            distortion: d,
            adversarial_image: adversarial,
            c_star: 1.28,
            c_low: 1.279,
            c_high: 1.28,
            success,
            solver_iterations: 42,
            evaluations: 99,
            final_probs: ProbVector::one_hot(8, 10),
            audit: Vec::new(),
        };
        (case, Some(result))
    }

    #[test]
    fn attack_run_round_trip() {
        let dir = tempdir().unwrap();
        let results = vec![fake_result(true), fake_result(false)];
        write_attack_run(dir.path(), &results).unwrap();
        let records = load_attack_run(dir.path()).unwrap();
        assert_eq!(records.len(), 2);
        assert!(records[0].success);
        assert!(!records[1].success);
        let want = results[0].1.as_ref().unwrap();
        assert_eq!(records[0].distortion.as_deref().unwrap(), want.distortion.data());
        assert_eq!(records[0].case, want.case);
        assert!((records[0].c_star - 1.28).abs() < 1e-9);
        assert!(records[1].distortion.is_none());
        for p in case_artifacts(dir.path(), 0) {
            assert!(p.exists(), "{p:?}");
        }
        for p in case_artifacts(dir.path(), 1) {
            assert!(!p.exists(), "{p:?}");
        }
    }

    #[test]
    fn pgm_header_and_rounding() {
        let mut px = vec![0.0; 784];
        px[0] = 254.6; // rounds up
        px[1] = 300.0; // clamps
        px[2] = -3.0; // clamps
        let bytes = pgm_bytes(&px);
        assert!(bytes.starts_with(b"P5\n28 28\n255\n"));
        let body = &bytes[b"P5\n28 28\n255\n".len()..];
        assert_eq!(body.len(), 784);
        assert_eq!(body[0], 255);
        assert_eq!(body[1], 255);
        assert_eq!(body[2], 0);
    }

    #[test]
    fn distortion_vis_normalizes_min_max() {
        let mut d = vec![0.0; 784];
        d[0] = -10.0;
        d[1] = 10.0;
        let bytes = distortion_vis_bytes(&d);
        let body = &bytes[b"P5\n28 28\n255\n".len()..];
        assert_eq!(body[0], 0);
        assert_eq!(body[1], 255);
        assert_eq!(body[2], 128); // 0 maps to midscale
        let flat = distortion_vis_bytes(&vec![3.0; 784]);
        assert!(flat[b"P5\n28 28\n255\n".len()..].iter().all(|&b| b == 0));
    }

    #[test]
    fn probe_csv_round_trip_and_header() {
        let rows = vec![
            ProbeOutcome {
                case_id: 4,
                departing: Departing::Adversarial,
                noise: NoiseKind::Gaussian,
                lambda: Some(0.03125),
                n_probes: 100,
                frac_correct: 0.12,
                frac_adversarial: 0.8,
                frac_other: 0.08,
            },
            ProbeOutcome {
                case_id: 4,
                departing: Departing::Original,
                noise: NoiseKind::Empirical,
                lambda: None,
                n_probes: 100,
                frac_correct: 1.0,
                frac_adversarial: 0.0,
                frac_other: 0.0,
            },
        ];
        let bytes = probe_csv_bytes(&rows);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with(PROBE_HEADER));
        assert!(text.contains("4,adversarial,gaussian,0.031250,100,0.120000,0.800000,0.080000"));
        assert!(text.contains("4,original,empirical,,100,1.000000,0.000000,0.000000"));

        let dir = tempdir().unwrap();
        let path = dir.path().join(PROBE_CSV);
        std::fs::write(&path, &bytes).unwrap();
        let back = read_probe_csv(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn bad_headers_are_schema_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join(ATTACKS_CSV);
        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(matches!(
            load_attack_run(dir.path()),
            Err(Error::SchemaMismatch { .. })
        ));
        let ppath = dir.path().join(PROBE_CSV);
        std::fs::write(&ppath, "nope\n").unwrap();
        assert!(matches!(
            read_probe_csv(&ppath),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn probe_cases_reconstruct_adversarial_images() {
        let dir = tempdir().unwrap();
        let results = vec![fake_result(true)];
        write_attack_run(dir.path(), &results).unwrap();
        let records = load_attack_run(dir.path()).unwrap();
        let original: Vec<f64> = (0..784).map(|i| (i % 256) as f64).collect();
        let cases = probe_cases(&records, |idx| {
            assert_eq!(idx, 17);
            &original
        });
        assert_eq!(cases.len(), 1);
        let want = results[0].1.as_ref().unwrap();
        assert_eq!(cases[0].adversarial, want.adversarial_image);
        assert_eq!(cases[0].distortion, want.distortion.data());
    }
}
