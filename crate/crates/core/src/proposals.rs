//! Proposal bags: temporal segments of the mixture log-mel (TSP) and
//! non-overlapping segments of each NMF component's log-mel (NCP).

use std::collections::HashSet;
use std::fmt;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::nmf::{component_magnitudes, nmf_decompose, NmfConfig, NmfModel};
use crate::signal::NUM_MEL_BANDS;
use crate::signal::{log_floor, log_mel, stft, ComplexSpectrogram, LogMel, MagnitudeSpectrogram, Waveform};

pub const PATCH_FRAMES: usize = 96;
pub const TSP_STRIDE: usize = 48;
pub const PATCH_LEN: usize = PATCH_FRAMES * NUM_MEL_BANDS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    Tsp(usize),
    Ncp { component: usize, segment: usize },
    Visual(usize),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Tsp(t) => write!(f, "TSP({t})"),
            Origin::Ncp { component, segment } => write!(f, "NCP({component},{segment})"),
            Origin::Visual(r) => write!(f, "VISUAL({r})"),
        }
    }
}

/// A 96 x 64 log-mel patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    values: Array2<f64>,
    pub origin: Origin,
}

impl Patch {
    pub fn new(values: Array2<f64>, origin: Origin) -> Result<Self> {
        if values.dim() != (PATCH_FRAMES, NUM_MEL_BANDS) {
            return Err(Error::ShapeMismatch(format!(
                "patch is {:?}, expected ({PATCH_FRAMES}, {NUM_MEL_BANDS})",
                values.dim()
            )));
        }
        Ok(Self { values, origin })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalBag {
    pub video_id: String,
    patches: Vec<Patch>,
}

impl ProposalBag {
    pub fn new(video_id: impl Into<String>, patches: Vec<Patch>) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::EmptyBag);
        }
        let mut seen = HashSet::with_capacity(patches.len());
        for p in &patches {
            if !seen.insert(p.origin) {
                return Err(Error::DuplicateOrigin(p.origin.to_string()));
            }
        }
        Ok(Self { video_id: video_id.into(), patches })
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn origins(&self) -> Vec<Origin> {
        self.patches.iter().map(|p| p.origin).collect()
    }

    /// Joins two bags of the same video into one, `self` first.
    pub fn concat(mut self, other: ProposalBag) -> Result<Self> {
        self.patches.extend(other.patches);
        Self::new(self.video_id, self.patches)
    }

    /// Flattens each patch row-major into one row of a `P x 6144` matrix.
    pub fn feature_matrix(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.patches.len(), PATCH_LEN));
        for (mut row, p) in out.rows_mut().into_iter().zip(&self.patches) {
            row.iter_mut().zip(p.values.iter()).for_each(|(d, &v)| *d = v);
        }
        out
    }
}

/// Number of overlapping TSP windows for `n_frames` log-mel frames.
pub fn tsp_count(n_frames: usize) -> usize {
    if n_frames <= PATCH_FRAMES {
        1
    } else {
        (n_frames - PATCH_FRAMES).div_ceil(TSP_STRIDE) + 1
    }
}

pub fn make_tsp(lm: &LogMel, video_id: &str) -> Result<ProposalBag> {
    let n = lm.num_frames();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let floor = log_floor();
    let patches = (0..tsp_count(n))
        .map(|t| {
            let start = t * TSP_STRIDE;
            let end = (start + PATCH_FRAMES).min(n);
            let mut values = Array2::from_elem((PATCH_FRAMES, NUM_MEL_BANDS), floor);
            values.slice_mut(s![..end - start, ..]).assign(&lm.values.slice(s![start..end, ..]));
            Patch::new(values, Origin::Tsp(t))
        })
        .collect::<Result<Vec<_>>>()?;
    ProposalBag::new(video_id, patches)
}

pub fn make_ncp(tracks: &[ComplexSpectrogram], video_id: &str) -> Result<ProposalBag> {
    let mags: Vec<MagnitudeSpectrogram> = tracks.iter().map(|t| t.magnitude()).collect();
    make_ncp_from_magnitudes(&mags, video_id)
}

/// NCP bag from component magnitude spectrograms; incomplete tail windows are dropped.
pub fn make_ncp_from_magnitudes(tracks: &[MagnitudeSpectrogram], video_id: &str) -> Result<ProposalBag> {
    if tracks.is_empty() {
        return Err(Error::EmptyTrackList);
    }
    let geometry = tracks[0].geometry;
    let mut patches = Vec::new();
    for (k, track) in tracks.iter().enumerate() {
        if track.geometry != geometry || track.values.dim() != tracks[0].values.dim() {
            return Err(Error::InconsistentGeometry(format!("track {k} differs from track 0")));
        }
        let lm = log_mel(track)?;
        for t in 0..lm.num_frames() / PATCH_FRAMES {
            let start = t * PATCH_FRAMES;
            let values = lm.values.slice(s![start..start + PATCH_FRAMES, ..]).to_owned();
            patches.push(Patch::new(values, Origin::Ncp { component: k, segment: t })?);
        }
    }
    ProposalBag::new(video_id, patches)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKinds {
    Tsp,
    Ncp,
    Both,
}

impl ProposalKinds {
    pub fn uses_tsp(self) -> bool {
        matches!(self, ProposalKinds::Tsp | ProposalKinds::Both)
    }

    pub fn uses_ncp(self) -> bool {
        matches!(self, ProposalKinds::Ncp | ProposalKinds::Both)
    }

    pub fn from_flags(tsp: bool, ncp: bool) -> Option<Self> {
        match (tsp, ncp) {
            (true, true) => Some(ProposalKinds::Both),
            (true, false) => Some(ProposalKinds::Tsp),
            (false, true) => Some(ProposalKinds::Ncp),
            (false, false) => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProposalKinds::Tsp => "tsp",
            ProposalKinds::Ncp => "ncp",
            ProposalKinds::Both => "both",
        }
    }
}

impl std::str::FromStr for ProposalKinds {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsp" => Ok(ProposalKinds::Tsp),
            "ncp" => Ok(ProposalKinds::Ncp),
            "both" | "ncp,tsp" | "tsp,ncp" => Ok(ProposalKinds::Both),
            other => Err(Error::InvalidConfig(format!("unknown proposal kind `{other}`"))),
        }
    }
}

/// Everything the audio frontend derives from one waveform.
#[derive(Debug, Clone)]
pub struct AudioAnalysis {
    pub spectrogram: ComplexSpectrogram,
    pub nmf: Option<NmfModel>,
    /// NCP rows first (when enabled), then TSP rows.
    pub bag: ProposalBag,
}

pub fn analyze(w: &Waveform, video_id: &str, kinds: ProposalKinds, nmf_cfg: &NmfConfig) -> Result<AudioAnalysis> {
    let spectrogram = stft(w)?;
    let magnitude = spectrogram.magnitude();
    let mut bag = None;
    let mut nmf = None;
    if kinds.uses_ncp() {
        let model = nmf_decompose(magnitude.values.view(), nmf_cfg)?;
        let tracks = component_magnitudes(&model, &magnitude)?;
        bag = Some(make_ncp_from_magnitudes(&tracks, video_id)?);
        nmf = Some(model);
    }
    if kinds.uses_tsp() {
        let tsp = make_tsp(&log_mel(&magnitude)?, video_id)?;
        bag = Some(match bag {
            Some(ncp) => ncp.concat(tsp)?,
            None => tsp,
        });
    }
    Ok(AudioAnalysis { spectrogram, nmf, bag: bag.expect("at least one proposal kind") })
}
