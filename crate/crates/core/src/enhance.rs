//! Source enhancement from per-component relevance scores.
//!
//! The scores each NCP row receives for a class are gathered per component,
//! reduced to one relevance value by a max over time, min-max scaled, and used
//! to weight the components' Wiener masks.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::model::{predict, BagScores, Model, VideoInput};
use crate::nmf::{NmfConfig, NmfModel, EPS_FLOOR};
use crate::proposals::{analyze, AudioAnalysis, Origin, ProposalKinds};
use crate::signal::{istft, ComplexSpectrogram, Waveform};

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentScores {
    /// K x T scores of the target class, one per NCP.
    pub beta: Array2<f64>,
    pub alpha: Vec<f64>,
    pub alpha_prime: Vec<f64>,
}

impl ComponentScores {
    pub fn from_beta(beta: Array2<f64>) -> Result<Self> {
        if beta.nrows() == 0 || beta.ncols() == 0 {
            return Err(Error::NoNcpRows);
        }
        let alpha: Vec<f64> = beta.rows().into_iter().map(|r| r.fold(f64::NEG_INFINITY, |m, &v| m.max(v))).collect();
        let alpha_prime = min_max_scale(&alpha);
        Ok(Self { beta, alpha, alpha_prime })
    }

    pub fn num_components(&self) -> usize {
        self.alpha.len()
    }
}

/// Maps to `[0, 1]`; a constant input maps to all ones.
pub fn min_max_scale(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
    } else {
        vec![1.0; values.len()]
    }
}

/// Collects `E[row(k, t), class]` for every NCP row. TSP and visual rows are skipped.
pub fn aggregate_scores(
    e: ArrayView2<f64>,
    class: usize,
    origins: &[Origin],
    n_components: usize,
) -> Result<ComponentScores> {
    if e.nrows() != origins.len() {
        return Err(Error::LengthMismatch { left: e.nrows(), right: origins.len() });
    }
    if class >= e.ncols() {
        return Err(Error::UnknownLabel(format!("class index {class}")));
    }
    let ncp: Vec<(usize, usize, f64)> = origins
        .iter()
        .zip(e.column(class))
        .filter_map(|(o, &v)| match *o {
            Origin::Ncp { component, segment } => Some((component, segment, v)),
            _ => None,
        })
        .collect();
    if ncp.is_empty() {
        return Err(Error::NoNcpRows);
    }
    let segments = ncp.iter().map(|&(_, t, _)| t).max().unwrap() + 1;
    let mut beta = Array2::from_elem((n_components, segments), f64::NAN);
    for &(k, t, v) in &ncp {
        if k >= n_components {
            return Err(Error::MissingComponent(k));
        }
        beta[[k, t]] = v;
    }
    for (k, row) in beta.rows().into_iter().enumerate() {
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::MissingComponent(k));
        }
    }
    ComponentScores::from_beta(beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskMode {
    Soft,
    /// Component weights become `1[α′ ≥ τ]`.
    Threshold(f64),
}

impl MaskMode {
    pub fn from_tau(tau: Option<f64>) -> Result<Self> {
        match tau {
            None => Ok(MaskMode::Soft),
            Some(t) if (0.0..=1.0).contains(&t) => Ok(MaskMode::Threshold(t)),
            Some(t) => Err(Error::Domain(format!("tau must lie in [0, 1], got {t}"))),
        }
    }

    pub fn weights(self, alpha_prime: &[f64]) -> Vec<f64> {
        match self {
            MaskMode::Soft => alpha_prime.to_vec(),
            MaskMode::Threshold(tau) => alpha_prime.iter().map(|&a| if a >= tau { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn label(self) -> String {
        match self {
            MaskMode::Soft => "soft".into(),
            MaskMode::Threshold(t) => format!("tau={t}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnhancementResult {
    pub source: Waveform,
    pub noise: Waveform,
    pub source_spec: ComplexSpectrogram,
    pub noise_spec: ComplexSpectrogram,
    pub mode: MaskMode,
    /// Per-component weights actually applied.
    pub weights: Vec<f64>,
}

/// Source mask `Σ_k w_k W_k H_k / WH`; the noise mask is its complement.
pub fn source_mask(m: &NmfModel, weights: &[f64]) -> Array2<f64> {
    let full = m.reconstruction();
    let weighted = m.weighted_reconstruction(weights);
    let mut mask = Array2::zeros(full.dim());
    Zip::from(&mut mask).and(&weighted).and(&full).for_each(|out, &num, &den| {
        *out = (num / den.max(EPS_FLOOR)).clamp(0.0, 1.0);
    });
    mask
}

pub fn reconstruct(
    m: &NmfModel,
    x: &ComplexSpectrogram,
    scores: &ComponentScores,
    mode: MaskMode,
) -> Result<EnhancementResult> {
    if m.w.nrows() != x.num_bins() || m.h.ncols() != x.num_frames() {
        return Err(Error::ShapeMismatch(format!(
            "model is {}x{}, spectrogram is {}x{}",
            m.w.nrows(),
            m.h.ncols(),
            x.num_bins(),
            x.num_frames()
        )));
    }
    if scores.num_components() != m.num_components() {
        return Err(Error::ShapeMismatch(format!(
            "{} component scores for {} components",
            scores.num_components(),
            m.num_components()
        )));
    }
    if let MaskMode::Threshold(t) = mode {
        MaskMode::from_tau(Some(t))?;
    }
    let weights = mode.weights(&scores.alpha_prime);
    let s_mask = source_mask(m, &weights);
    let n_mask = s_mask.mapv(|v| 1.0 - v);
    let source_spec = x.masked(&s_mask.view())?;
    let noise_spec = x.masked(&n_mask.view())?;
    Ok(EnhancementResult {
        source: istft(&source_spec)?,
        noise: istft(&noise_spec)?,
        source_spec,
        noise_spec,
        mode,
        weights,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    Known(usize),
    Unknown,
}

/// A mixture analysed and scored once, ready to be enhanced under any mode.
#[derive(Debug, Clone)]
pub struct ScoredMixture {
    pub analysis: AudioAnalysis,
    pub audio: BagScores,
    pub phi: ndarray::Array1<f64>,
    pub predicted: usize,
}

pub fn score_mixture(
    mixture: &Waveform,
    model: &Model,
    kinds: ProposalKinds,
    nmf_cfg: &NmfConfig,
    visual: Option<Array2<f64>>,
) -> Result<ScoredMixture> {
    if !kinds.uses_ncp() {
        return Err(Error::NoNcpRows);
    }
    let analysis = analyze(mixture, "mixture", kinds, nmf_cfg)?;
    let input = VideoInput { audio: Some(analysis.bag.feature_matrix()), visual };
    let (audio, _, video) = model.score(&input)?;
    let audio = audio.ok_or_else(|| Error::InvalidConfig("model has no audio stream".into()))?;
    let predicted = predict(video.phi.view());
    Ok(ScoredMixture { analysis, audio, phi: video.phi, predicted })
}

impl ScoredMixture {
    pub fn class_for(&self, label: LabelMode) -> usize {
        match label {
            LabelMode::Known(c) => c,
            LabelMode::Unknown => self.predicted,
        }
    }

    pub fn component_scores(&self, label: LabelMode) -> Result<ComponentScores> {
        let nmf = self.analysis.nmf.as_ref().ok_or(Error::NoNcpRows)?;
        aggregate_scores(self.audio.e.view(), self.class_for(label), &self.analysis.bag.origins(), nmf.num_components())
    }

    pub fn enhance(&self, label: LabelMode, mode: MaskMode) -> Result<(ComponentScores, EnhancementResult)> {
        let scores = self.component_scores(label)?;
        let nmf = self.analysis.nmf.as_ref().ok_or(Error::NoNcpRows)?;
        let result = reconstruct(nmf, &self.analysis.spectrogram, &scores, mode)?;
        Ok((scores, result))
    }
}

pub fn enhance_pipeline(
    mixture: &Waveform,
    model: &Model,
    kinds: ProposalKinds,
    nmf_cfg: &NmfConfig,
    label: LabelMode,
    mode: MaskMode,
) -> Result<EnhancementResult> {
    Ok(score_mixture(mixture, model, kinds, nmf_cfg, None)?.enhance(label, mode)?.1)
}
