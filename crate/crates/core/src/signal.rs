//! Signal-processing frontend: STFT/iSTFT, mel filterbank, log-mel frames and
//! SNR-controlled mixing.
//!
//! Geometry is fixed at 16 kHz with 25 ms Hann frames (400 samples) zero-padded
//! to a 512-point FFT and a 10 ms hop (160 samples), giving 257 frequency bins.

use std::f64::consts::PI;
use std::sync::OnceLock;

use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex64;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW_LEN: usize = 400;
pub const HOP: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const NUM_BINS: usize = FFT_SIZE / 2 + 1;
pub const NUM_MEL_BANDS: usize = 64;
pub const MEL_LOW_HZ: f64 = 125.0;
pub const MEL_HIGH_HZ: f64 = 7500.0;
pub const LOG_OFFSET: f64 = 0.01;
/// Fraction of the peak summed squared window below which iSTFT stops dividing by it.
pub const WSS_FLOOR_RATIO: f64 = 0.1;

/// Mono 16 kHz audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::WrongSampleRate { expected: SAMPLE_RATE, found: sample_rate });
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean power (mean of squared samples).
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftGeometry {
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    /// Length of the analysed signal; iSTFT restores exactly this many samples.
    pub num_samples: usize,
}

impl StftGeometry {
    pub fn for_length(num_samples: usize) -> Self {
        Self { window_len: WINDOW_LEN, hop: HOP, fft_size: FFT_SIZE, num_samples }
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// `1 + floor((len - window) / hop)`; signals shorter than one window are
    /// zero-padded to a single frame.
    pub fn num_frames(&self) -> usize {
        frame_count(self.num_samples, self.window_len, self.hop)
    }
}

pub fn frame_count(num_samples: usize, window_len: usize, hop: usize) -> usize {
    if num_samples <= window_len {
        1
    } else {
        1 + (num_samples - window_len) / hop
    }
}

/// Complex STFT, bins along rows and frames along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: Array2<Complex64>,
    pub geometry: StftGeometry,
}

impl ComplexSpectrogram {
    pub fn new(values: Array2<Complex64>, geometry: StftGeometry) -> Result<Self> {
        let spec = Self { values, geometry };
        spec.check_geometry()?;
        Ok(spec)
    }

    pub fn check_geometry(&self) -> Result<()> {
        let g = &self.geometry;
        if g.window_len == 0 || g.hop == 0 || g.window_len > g.fft_size {
            return Err(Error::InconsistentGeometry(format!(
                "window {} / hop {} / fft {}",
                g.window_len, g.hop, g.fft_size
            )));
        }
        let (rows, cols) = self.values.dim();
        if rows != g.num_bins() || cols != g.num_frames() || g.num_samples == 0 {
            return Err(Error::InconsistentGeometry(format!(
                "{rows}x{cols} values for {} bins x {} frames",
                g.num_bins(),
                g.num_frames()
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn magnitude(&self) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram { values: self.values.mapv(|c| c.norm()), geometry: self.geometry }
    }

    /// Applies a real-valued mask elementwise.
    pub fn masked(&self, mask: &ArrayView2<f64>) -> Result<Self> {
        if mask.dim() != self.values.dim() {
            return Err(Error::ShapeMismatch(format!("mask {:?} vs spectrogram {:?}", mask.dim(), self.values.dim())));
        }
        let mut values = self.values.clone();
        values.zip_mut_with(mask, |v, &m| *v *= m);
        Ok(Self { values, geometry: self.geometry })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub values: Array2<f64>,
    pub geometry: StftGeometry,
}

/// Log-mel frames, one row per STFT frame and one column per mel band.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMel {
    pub values: Array2<f64>,
}

impl LogMel {
    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos()).collect()
}

pub fn stft(w: &Waveform) -> Result<ComplexSpectrogram> {
    if w.is_empty() {
        return Err(Error::EmptyInput);
    }
    if w.sample_rate() != SAMPLE_RATE {
        return Err(Error::WrongSampleRate { expected: SAMPLE_RATE, found: w.sample_rate() });
    }
    let geometry = StftGeometry::for_length(w.len());
    let frames = geometry.num_frames();
    let window = hann_window(WINDOW_LEN);
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(FFT_SIZE);
    let mut input = fft.make_input_vec();
    let mut output = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();
    let samples = w.samples();

    let mut values = Array2::<Complex64>::zeros((NUM_BINS, frames));
    for n in 0..frames {
        input.iter_mut().for_each(|v| *v = 0.0);
        let start = n * HOP;
        let end = (start + WINDOW_LEN).min(samples.len());
        for (i, (dst, &x)) in input.iter_mut().zip(&samples[start..end]).enumerate() {
            *dst = x * window[i];
        }
        fft.process_with_scratch(&mut input, &mut output, &mut scratch).expect("buffer sizes come from the plan");
        for (f, c) in output.iter().enumerate() {
            values[[f, n]] = *c;
        }
    }
    Ok(ComplexSpectrogram { values, geometry })
}

/// Weighted overlap-add inverse with a Hann synthesis window, normalized by the
/// summed squared window. Samples with no window support come out as zero.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    s.check_geometry()?;
    let g = s.geometry;
    let window = hann_window(g.window_len);
    let ifft = RealFftPlanner::<f64>::new().plan_fft_inverse(g.fft_size);
    let mut spectrum = ifft.make_input_vec();
    let mut frame = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();
    let scale = 1.0 / g.fft_size as f64;

    let out_len = g.num_samples;
    let mut output = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    for n in 0..s.num_frames() {
        for (f, dst) in spectrum.iter_mut().enumerate() {
            *dst = s.values[[f, n]];
        }
        // DC and Nyquist bins of a real frame carry no imaginary part.
        spectrum[0].im = 0.0;
        let last = spectrum.len() - 1;
        spectrum[last].im = 0.0;
        ifft.process_with_scratch(&mut spectrum, &mut frame, &mut scratch).expect("buffer sizes come from the plan");
        let start = n * g.hop;
        for i in 0..g.window_len {
            let t = start + i;
            if t >= out_len {
                break;
            }
            output[t] += frame[i] * scale * window[i];
            norm[t] += window[i] * window[i];
        }
    }
    // Near the edges the summed window goes to zero, and dividing by it would
    // blow up anything a mask did to those frames.
    let floor = WSS_FLOOR_RATIO * norm.iter().copied().fold(0.0, f64::max);
    for (y, &wss) in output.iter_mut().zip(&norm) {
        *y = if wss > 0.0 { *y / wss.max(floor) } else { 0.0 };
    }
    Waveform::from_samples(output)
}

fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// 64 triangular filters, rows summing to one, triangles laid out uniformly on
/// the mel scale between 125 Hz and 7.5 kHz. Shape is bands x bins.
pub fn mel_filterbank() -> &'static Array2<f64> {
    static BANK: OnceLock<Array2<f64>> = OnceLock::new();
    BANK.get_or_init(build_mel_filterbank)
}

/// Mel-scale centre frequency of each band, in Hz.
pub fn mel_band_centers_hz() -> Vec<f64> {
    let edges = mel_edges();
    edges[1..=NUM_MEL_BANDS].iter().map(|&m| 700.0 * ((m / 1127.0).exp() - 1.0)).collect()
}

fn mel_edges() -> Vec<f64> {
    let lo = hz_to_mel(MEL_LOW_HZ);
    let hi = hz_to_mel(MEL_HIGH_HZ);
    let step = (hi - lo) / (NUM_MEL_BANDS + 1) as f64;
    (0..NUM_MEL_BANDS + 2).map(|i| lo + step * i as f64).collect()
}

fn build_mel_filterbank() -> Array2<f64> {
    let edges = mel_edges();
    let bin_mel: Vec<f64> = (0..NUM_BINS).map(|k| hz_to_mel(k as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64)).collect();
    let mut bank = Array2::<f64>::zeros((NUM_MEL_BANDS, NUM_BINS));
    for b in 0..NUM_MEL_BANDS {
        let (lo, center, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        for (k, &m) in bin_mel.iter().enumerate() {
            let rising = (m - lo) / (center - lo);
            let falling = (hi - m) / (hi - center);
            bank[[b, k]] = rising.min(falling).max(0.0);
        }
        let area: f64 = bank.row(b).sum();
        debug_assert!(area > 0.0, "mel band {b} covers no FFT bin");
        bank.row_mut(b).mapv_inplace(|v| v / area);
    }
    bank
}

pub fn log_mel(m: &MagnitudeSpectrogram) -> Result<LogMel> {
    if m.values.nrows() != NUM_BINS {
        return Err(Error::WrongBinCount { expected: NUM_BINS, found: m.values.nrows() });
    }
    let energies = m.values.t().dot(&mel_filterbank().t());
    Ok(LogMel { values: energies.mapv(|e| (e + LOG_OFFSET).ln()) })
}

/// Log-mel value of a silent frame.
pub fn log_floor() -> f64 {
    LOG_OFFSET.ln()
}

/// Returns `clean + g * noise` with `g` chosen so the clean-to-scaled-noise power
/// ratio equals `snr_db`. Noise is looped or truncated to the clean length. An
/// SNR of `+inf` returns the clean signal unchanged.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    let (mixed, _) = mix_at_snr_with_gain(clean, noise, snr_db)?;
    Ok(mixed)
}

/// Same as [`mix_at_snr`], also returning the applied noise gain.
pub fn mix_at_snr_with_gain(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<(Waveform, f64)> {
    if clean.is_empty() || noise.is_empty() {
        return Err(Error::EmptyInput);
    }
    let p_clean = clean.power();
    if p_clean <= 0.0 {
        return Err(Error::ZeroPowerClean);
    }
    if snr_db == f64::INFINITY {
        return Ok((clean.clone(), 0.0));
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidConfig("SNR is NaN".into()));
    }
    if snr_db == f64::NEG_INFINITY {
        return Err(Error::Domain("an SNR of -inf dB has no finite noise gain".into()));
    }
    let fitted: Vec<f64> = noise.samples().iter().copied().cycle().take(clean.len()).collect();
    let p_noise = mean_power(&fitted);
    if p_noise <= 0.0 {
        return Err(Error::ZeroPowerNoise);
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mixed = clean.samples().iter().zip(&fitted).map(|(c, n)| c + gain * n).collect();
    Ok((Waveform::from_samples(mixed)?, gain))
}

/// Mean over frames of each mel band; handy for diagnostics.
pub fn band_means(lm: &LogMel) -> Vec<f64> {
    lm.values.mean_axis(Axis(0)).map(|a| a.to_vec()).unwrap_or_default()
}
