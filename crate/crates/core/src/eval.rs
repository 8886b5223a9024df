//! Accuracy, SDR, noisy-test evaluation and report formatting.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::predict;
use crate::signal::{mix_at_snr, Waveform};

/// SDR reported for a numerically perfect estimate.
pub const SDR_CAP_DB: f64 = 100.0;

pub fn accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: truths.len() });
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Scale-invariant SDR of `estimate` against `reference`, in dB.
pub fn sdr(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    sdr_samples(estimate.samples(), reference.samples())
}

pub fn sdr_samples(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::LengthMismatch { left: estimate.len(), right: reference.len() });
    }
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if ref_energy == 0.0 {
        return Err(Error::ZeroReference);
    }
    let gain = estimate.iter().zip(reference).map(|(e, r)| e * r).sum::<f64>() / ref_energy;
    let mut target = 0.0;
    let mut residual = 0.0;
    for (e, r) in estimate.iter().zip(reference) {
        let t = gain * r;
        target += t * t;
        residual += (e - t) * (e - t);
    }
    if residual < 1e-20 * target {
        return Ok(SDR_CAP_DB);
    }
    Ok((10.0 * (target / residual).log10()).min(SDR_CAP_DB))
}

/// Argmax of `phi_a + phi_b`.
pub fn ensemble_scores(phi_a: ArrayView1<f64>, phi_b: ArrayView1<f64>) -> Result<usize> {
    if phi_a.len() != phi_b.len() {
        return Err(Error::LengthMismatch { left: phi_a.len(), right: phi_b.len() });
    }
    Ok(predict((&phi_a + &phi_b).view()))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdrStats {
    pub mean: f64,
    pub median: f64,
    pub per_mixture: Vec<f64>,
}

impl SdrStats {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let median = median(&values).ok_or(Error::EmptyInput)?;
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Ok(Self { mean, median, per_mixture: values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    /// Rows are truths, columns predictions.
    pub confusion: Array2<usize>,
    pub sdr: Option<SdrStats>,
}

impl EvalReport {
    pub fn from_predictions(predictions: &[usize], truths: &[usize], classes: usize) -> Result<Self> {
        let accuracy = accuracy(predictions, truths)?;
        let mut confusion = Array2::zeros((classes, classes));
        for (&p, &t) in predictions.iter().zip(truths) {
            if p >= classes || t >= classes {
                return Err(Error::UnknownLabel(format!("class index {}", p.max(t))));
            }
            confusion[[t, p]] += 1;
        }
        let per_class = (0..classes)
            .map(|c| {
                let total: usize = confusion.row(c).sum();
                if total == 0 {
                    f64::NAN
                } else {
                    confusion[[c, c]] as f64 / total as f64
                }
            })
            .collect();
        Ok(Self { accuracy, per_class, confusion, sdr: None })
    }
}

/// Deterministic noise file chosen for each test file.
pub fn noise_assignment(seed: u64, files: usize, noise_files: usize) -> Result<Vec<usize>> {
    if noise_files == 0 {
        return Err(Error::EmptyNoiseCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..files).map(|_| rng.gen_range(0..noise_files)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub snr_db: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

/// Classifies every test file corrupted at each SNR level.
///
/// Each file keeps the same noise file across levels. `f64::INFINITY` means no
/// corruption. `score` maps the clip index and corrupted waveform to class scores.
pub fn evaluate_noisy<F>(
    clips: &[(Waveform, usize)],
    noise: &[Waveform],
    snr_levels: &[f64],
    seed: u64,
    score: F,
) -> Result<Vec<LevelResult>>
where
    F: Fn(usize, &Waveform) -> Result<Array1<f64>> + Sync,
{
    if clips.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let assignment = noise_assignment(seed, clips.len(), noise.len())?;
    let truths: Vec<usize> = clips.iter().map(|(_, t)| *t).collect();
    snr_levels
        .iter()
        .map(|&snr_db| {
            let scores = clips
                .par_iter()
                .zip(&assignment)
                .enumerate()
                .map(|(i, ((clean, _), &n))| score(i, &corrupt(clean, &noise[n], snr_db)?))
                .collect::<Result<Vec<_>>>()?;
            let predictions: Vec<usize> = scores.iter().map(|phi| predict(phi.view())).collect();
            Ok(LevelResult {
                snr_db,
                accuracy: accuracy(&predictions, &truths)?,
                predictions,
                scores: scores.into_iter().map(|phi| phi.to_vec()).collect(),
            })
        })
        .collect()
}

/// Mixes `noise` into `clean` at `snr_db`; infinity returns the clean clip.
pub fn corrupt(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    if snr_db == f64::INFINITY {
        return Ok(clean.clone());
    }
    mix_at_snr(clean, noise, snr_db)
}

/// One line of a per-file JSON-lines report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileRecord {
    pub id: String,
    pub truth: Option<usize>,
    pub prediction: usize,
    pub scores: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sdr: Option<f64>,
}

pub fn to_json_lines<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Numeric(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn snr_label(snr_db: f64) -> String {
    if snr_db.is_infinite() {
        "clean".into()
    } else {
        format!("{snr_db} dB")
    }
}

/// System name and accuracy per row.
pub fn classification_table(rows: &[(String, f64)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("System".len());
    let mut out = format!("{:<width$} | Accuracy (%)\n", "System");
    out.push_str(&format!("{}-+-------------\n", "-".repeat(width)));
    for (name, acc) in rows {
        let _ = writeln!(out, "{name:<width$} | {:>12.1}", 100.0 * acc);
    }
    out
}

/// Rows are SNR levels, columns systems.
pub fn noise_table(systems: &[(String, Vec<LevelResult>)]) -> String {
    let mut out = format!("{:<8}", "SNR");
    for (name, _) in systems {
        let _ = write!(out, " | {name:>14}");
    }
    out.push('\n');
    let levels = systems.first().map(|(_, l)| l.len()).unwrap_or(0);
    for i in 0..levels {
        let _ = write!(out, "{:<8}", snr_label(systems[0].1[i].snr_db));
        for (_, results) in systems {
            let _ = write!(out, " | {:>14.1}", 100.0 * results[i].accuracy);
        }
        out.push('\n');
    }
    out
}

/// Median and mean SDR for each mask mode under both label modes.
pub struct SdrRow {
    pub mode: String,
    pub label_known: SdrStats,
    pub label_unknown: SdrStats,
}

pub fn sdr_table(mixture: &SdrStats, rows: &[SdrRow]) -> String {
    let mut out = format!("{:<14} | {:>24} | {:>24}\n", "Mask", "Label known (med/mean)", "Label unknown (med/mean)");
    let _ = writeln!(
        out,
        "{:<14} | {:>11.2} / {:>10.2} | {:>11.2} / {:>10.2}",
        "mixture", mixture.median, mixture.mean, mixture.median, mixture.mean
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<14} | {:>11.2} / {:>10.2} | {:>11.2} / {:>10.2}",
            r.mode, r.label_known.median, r.label_known.mean, r.label_unknown.median, r.label_unknown.mean
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 0], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 3], &[0, 1, 2, 3]).unwrap(), 0.75);
        assert!(matches!(accuracy(&[], &[]), Err(Error::EmptyInput)));
        assert!(matches!(accuracy(&[1], &[1, 2]), Err(Error::LengthMismatch { .. })));
    }

    fn wave(v: Vec<f64>) -> Waveform {
        Waveform::from_samples(v).unwrap()
    }

    #[test]
    fn sdr_examples() {
        let s: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.05).sin()).collect();
        assert_eq!(sdr(&wave(s.clone()), &wave(s.clone())).unwrap(), 100.0);
        assert_eq!(sdr(&wave(s.iter().map(|v| 2.0 * v).collect()), &wave(s.clone())).unwrap(), 100.0);

        let s = vec![1.0, 1.0, 1.0, 1.0];
        let n = [1.0, -1.0, 1.0, -1.0];
        let mix: Vec<f64> = s.iter().zip(n).map(|(a, b)| a + b).collect();
        assert_abs_diff_eq!(sdr(&wave(mix), &wave(s)).unwrap(), 0.0, epsilon = 1e-12);

        assert!(matches!(sdr(&wave(vec![1.0]), &wave(vec![0.0])), Err(Error::ZeroReference)));
        assert!(matches!(sdr(&wave(vec![1.0]), &wave(vec![1.0, 2.0])), Err(Error::LengthMismatch { .. })));
    }

    proptest! {
        #[test]
        fn sdr_is_scale_invariant(
            est in proptest::collection::vec(-1.0f64..1.0, 64),
            reference in proptest::collection::vec(-1.0f64..1.0, 64),
            k in 0.01f64..100.0,
        ) {
            prop_assume!(reference.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let base = sdr_samples(&est, &reference).unwrap();
            let scaled: Vec<f64> = est.iter().map(|v| v * k).collect();
            prop_assert!((sdr_samples(&scaled, &reference).unwrap() - base).abs() < 1e-9);
            let both_ref: Vec<f64> = reference.iter().map(|v| v * k).collect();
            prop_assert!((sdr_samples(&scaled, &both_ref).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn ensemble_examples() {
        assert_eq!(ensemble_scores(array![0.6, 0.4].view(), array![0.1, 0.5].view()).unwrap(), 1);
        assert_eq!(ensemble_scores(array![0.2, 0.9, 0.1].view(), array![0.0, 0.0, 0.0].view()).unwrap(), 1);
        assert!(ensemble_scores(array![0.2].view(), array![0.0, 0.0].view()).is_err());
    }

    #[test]
    fn report_confusion() {
        let r = EvalReport::from_predictions(&[0, 1, 1, 2, 2], &[0, 1, 2, 2, 2], 3).unwrap();
        assert_eq!(r.accuracy, 0.8);
        let trace: usize = (0..3).map(|c| r.confusion[[c, c]]).sum();
        assert_eq!(trace as f64 / r.confusion.sum() as f64, r.accuracy);
        assert_eq!(r.confusion.row(2).sum(), 3);
        assert_abs_diff_eq!(r.per_class[2], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn infinite_snr_is_identity() {
        let clean = wave(vec![0.1, -0.2, 0.3]);
        let noise = wave(vec![1.0, 1.0]);
        assert_eq!(corrupt(&clean, &noise, f64::INFINITY).unwrap(), clean);
        assert!(matches!(noise_assignment(0, 3, 0), Err(Error::EmptyNoiseCorpus)));
        let levels =
            evaluate_noisy(&[(clean, 0)], &[noise], &[f64::INFINITY, 0.0], 1, |_, _| Ok(array![1.0, 0.0])).unwrap();
        assert_eq!(levels.len(), 2);
        assert_eq!(levels[0].accuracy, 1.0);
    }

    #[test]
    fn tables_have_expected_rows() {
        let level = |snr_db| LevelResult { snr_db, accuracy: 0.5, predictions: vec![], scores: vec![] };
        let t = noise_table(&[("A (TSP)".into(), vec![level(0.0), level(-10.0), level(-20.0)])]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0 dB") && lines[3].starts_with("-20 dB"));
        let c = classification_table(&[("A (TSP)".into(), 0.9)]);
        assert!(c.contains("90.0"));
    }

    #[test]
    fn json_lines_records() {
        let r = FileRecord {
            id: "a".into(),
            truth: Some(1),
            prediction: 0,
            scores: vec![0.5, 0.25],
            snr_db: None,
            sdr: None,
        };
        assert_eq!(to_json_lines(&[r]).unwrap(), "{\"id\":\"a\",\"truth\":1,\"prediction\":0,\"scores\":[0.5,0.25]}\n");
    }
}
