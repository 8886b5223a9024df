//! WAV I/O, JSON-lines manifests, visual feature files and the synthetic
//! weakly-labeled corpus generator.

use std::collections::{BTreeSet, HashSet};
use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::signal::{Waveform, SAMPLE_RATE};

const PCM_SCALE: f64 = 32768.0;
const WRITE_PEAK: f64 = 0.99;

fn open_error(path: &Path, e: std::io::Error) -> Error {
    match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    }
}

fn hound_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => open_error(path, io),
        hound::Error::FormatError(msg) => Error::CorruptHeader(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported | hound::Error::TooWide | hound::Error::InvalidSampleFormat => {
            Error::UnsupportedFormat(format!("{}: {e}", path.display()))
        }
        hound::Error::UnfinishedSample => Error::TruncatedFile,
    }
}

fn open_wav(path: &Path) -> Result<hound::WavReader<BufReader<File>>> {
    let reader = hound::WavReader::open(path).map_err(|e| hound_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!("{}: {} channels", path.display(), spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedFormat(format!("{}: {} Hz", path.display(), spec.sample_rate)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!("{}: not 16-bit PCM", path.display())));
    }
    Ok(reader)
}

/// Reads a mono 16 kHz 16-bit PCM file into `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = open_wav(path)?;
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| hound_error(path, e))?;
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    Waveform::new(samples, SAMPLE_RATE)
}

/// Writes 16-bit PCM, peak-normalizing to 0.99 when any sample exceeds 1.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let peak = w.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 1.0 { WRITE_PEAK / peak } else { 1.0 };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| hound_error(path, e))?;
    for &v in w.samples() {
        let q = (v * scale * PCM_SCALE).round().clamp(-PCM_SCALE, PCM_SCALE - 1.0) as i16;
        writer.write_sample(q).map_err(|e| hound_error(path, e))?;
    }
    writer.finalize().map_err(|e| hound_error(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    /// Paths as written, relative to the manifest directory unless absolute.
    pub audio: PathBuf,
    pub labels: Vec<String>,
    /// Indices into the sorted vocabulary.
    pub label_ids: Vec<usize>,
    pub split: Split,
    pub visual: Option<PathBuf>,
    pub clean: Option<PathBuf>,
}

impl ManifestEntry {
    /// First label, used as the single-label ground truth.
    pub fn primary_label(&self) -> usize {
        self.label_ids[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    /// Sorted class vocabulary.
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct RawHeader {
    classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    id: String,
    audio: String,
    labels: Vec<String>,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    visual: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clean: Option<String>,
}

impl Manifest {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.root.join(path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes.iter().position(|c| c == name).ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    /// Writes a header line with the vocabulary followed by one line per entry.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = RawHeader { classes: self.classes.clone() };
        writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for e in &self.entries {
            let raw = RawEntry {
                id: e.id.clone(),
                audio: path_string(&e.audio),
                labels: e.labels.clone(),
                split: e.split,
                visual: e.visual.as_deref().map(path_string),
                clean: e.clean.as_deref().map(path_string),
            };
            writeln!(w, "{}", serde_json::to_string(&raw).expect("entry serializes"))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

/// Loads and validates a manifest. Every referenced file must exist and every
/// audio file must carry a valid WAV header.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = File::open(path).map_err(|e| open_error(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut header: Option<Vec<String>> = None;
    let mut raw = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let invalid = |reason: String| Error::InvalidManifest { line: line_no, reason };
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        if value.get("id").is_none() && value.get("classes").is_some() {
            if header.is_some() || !raw.is_empty() {
                return Err(invalid("class header must be the first record".into()));
            }
            let h: RawHeader = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
            header = Some(h.classes);
            continue;
        }
        let entry: RawEntry = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
        if entry.labels.is_empty() {
            return Err(invalid(format!("entry `{}` has no labels", entry.id)));
        }
        raw.push(entry);
    }

    let classes: Vec<String> = match header {
        Some(declared) => {
            let set: BTreeSet<String> = declared.iter().cloned().collect();
            if set.len() != declared.len() {
                return Err(Error::InvalidManifest { line: 1, reason: "duplicate class names".into() });
            }
            set.into_iter().collect()
        }
        None => raw.iter().flat_map(|e| e.labels.iter().cloned()).collect::<BTreeSet<_>>().into_iter().collect(),
    };

    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(raw.len());
    for e in raw {
        if !seen.insert(e.id.clone()) {
            return Err(Error::DuplicateId(e.id));
        }
        let label_ids = e
            .labels
            .iter()
            .map(|l| classes.iter().position(|c| c == l).ok_or_else(|| Error::UnknownLabel(l.clone())))
            .collect::<Result<Vec<_>>>()?;
        let entry = ManifestEntry {
            id: e.id,
            audio: PathBuf::from(e.audio),
            labels: e.labels,
            label_ids,
            split: e.split,
            visual: e.visual.map(PathBuf::from),
            clean: e.clean.map(PathBuf::from),
        };
        open_wav(&root.join(&entry.audio))?;
        if let Some(clean) = &entry.clean {
            open_wav(&root.join(clean))?;
        }
        if let Some(visual) = &entry.visual {
            let p = root.join(visual);
            if !p.is_file() {
                return Err(Error::MissingFile(p));
            }
        }
        entries.push(entry);
    }
    Ok(Manifest { root, classes, entries })
}

const FEAT_MAGIC: &[u8; 11] = b"WSAIL-FEAT\0";
const FEAT_VERSION: u32 = 1;

/// Layout: magic, version (u32), M and d_v (u64), then M x d_v f64, all little-endian.
pub fn write_visual_features(path: &Path, features: &Array2<f64>) -> Result<()> {
    if features.nrows() == 0 || features.ncols() == 0 {
        return Err(Error::DimMismatch("visual features need at least one row and column".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    binio::write_header(&mut w, FEAT_MAGIC, FEAT_VERSION)?;
    binio::write_u64(&mut w, features.nrows() as u64)?;
    binio::write_u64(&mut w, features.ncols() as u64)?;
    binio::write_f64s(&mut w, &features.iter().copied().collect::<Vec<_>>())?;
    w.flush()?;
    Ok(())
}

pub fn load_visual_features(path: &Path) -> Result<Array2<f64>> {
    let mut r = BufReader::new(File::open(path).map_err(|e| open_error(path, e))?);
    let version = binio::read_header(&mut r, FEAT_MAGIC)?;
    if version != FEAT_VERSION {
        return Err(Error::CorruptHeader(format!("unsupported feature file version {version}")));
    }
    let rows = binio::read_len(&mut r)?;
    let dim = binio::read_len(&mut r)?;
    if rows == 0 || dim == 0 {
        return Err(Error::DimMismatch(format!("declared {rows}x{dim} features")));
    }
    let count = rows.checked_mul(dim).ok_or_else(|| Error::DimMismatch("feature size overflows".into()))?;
    let data = binio::read_f64s(&mut r, count)?;
    binio::expect_eof(&mut r)?;
    Ok(Array2::from_shape_vec((rows, dim), data).expect("length checked"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTemplate {
    pub name: String,
    pub fundamental_hz: f64,
    /// Amplitude ratio between consecutive partials.
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: Vec<ClassTemplate>,
    pub clip_seconds: f64,
    pub train_clips: usize,
    pub test_clips: usize,
    pub noise_scenes: usize,
    pub noise_seconds: f64,
    /// Range of the tone-to-scene SNR of each clip, dB.
    pub snr_range_db: (f64, f64),
    pub seed: u64,
    /// Dimension of generated visual region features, if any.
    pub visual_dim: Option<usize>,
    pub visual_regions: usize,
}

impl SynthConfig {
    /// `count` classes with fundamentals spaced by a factor of 1.6 from 150 Hz.
    pub fn with_classes(count: usize) -> Self {
        let classes = (0..count)
            .map(|i| ClassTemplate {
                name: format!("class{i:02}"),
                fundamental_hz: 150.0 * 1.6f64.powi(i as i32),
                decay: [0.45, 0.85, 0.6, 0.75, 0.5][i % 5],
            })
            .collect();
        Self {
            classes,
            clip_seconds: 10.0,
            train_clips: 100,
            test_clips: 50,
            noise_scenes: 10,
            noise_seconds: 10.0,
            snr_range_db: (5.0, 20.0),
            seed: 0,
            visual_dim: None,
            visual_regions: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        let mut seen = Vec::new();
        for c in &self.classes {
            if !(c.fundamental_hz > 0.0 && c.fundamental_hz < 4000.0) || !(0.0..1.0).contains(&c.decay) {
                return Err(Error::InvalidConfig(format!("class `{}` has an invalid template", c.name)));
            }
            if seen.iter().any(|&f: &f64| (f - c.fundamental_hz).abs() < 1e-9) {
                return Err(Error::InvalidConfig("class fundamentals must be distinct".into()));
            }
            seen.push(c.fundamental_hz);
        }
        let names: BTreeSet<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        if names.len() != self.classes.len() {
            return Err(Error::InvalidConfig("class names must be distinct".into()));
        }
        if self.clip_seconds <= 1.0 || self.noise_seconds <= 1.0 {
            return Err(Error::InvalidConfig("durations must exceed one second".into()));
        }
        if self.train_clips == 0 || self.test_clips == 0 || self.noise_scenes == 0 {
            return Err(Error::InvalidConfig("clip and scene counts must be positive".into()));
        }
        let (lo, hi) = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidConfig("bad SNR range".into()));
        }
        if self.visual_dim == Some(0) || self.visual_regions == 0 {
            return Err(Error::InvalidConfig("visual features need a positive size".into()));
        }
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::with_classes(5)
    }
}

/// One generated clip, before quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub id: String,
    pub class: usize,
    pub split: Split,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    /// The scene exactly as added to `clean` to form `noisy`.
    pub scene: Vec<f64>,
    pub snr_db: f64,
    pub visual: Option<Array2<f64>>,
}

const SCENE_STREAM_BASE: u64 = 1 << 32;
const CENTROID_STREAM: u64 = 1 << 40;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Harmonic notes with random onsets, durations and amplitudes.
fn tone_sequence(rng: &mut ChaCha8Rng, template: &ClassTemplate, len: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0; len];
    let mut t = (rng.gen_range(0.0..0.3) * sr) as usize;
    while t < len {
        let dur = (rng.gen_range(0.3..1.2) * sr) as usize;
        let f0 = template.fundamental_hz * (1.0 + rng.gen_range(-0.02..0.02));
        let amp = rng.gen_range(0.5..1.0);
        let tau = dur as f64 / 3.0;
        let attack = 0.01 * sr;
        let partials: Vec<(f64, f64, f64)> = (1..)
            .map(|p| (p as f64 * f0, template.decay.powi(p - 1), rng.gen_range(0.0..2.0 * PI)))
            .take_while(|&(f, _, _)| f < 7000.0)
            .collect();
        for (i, sample) in out.iter_mut().skip(t).take(dur).enumerate() {
            let x = i as f64;
            let env = (x / attack).min(1.0) * (-x / tau).exp();
            let time = x / sr;
            let v: f64 = partials.iter().map(|&(f, a, ph)| a * (2.0 * PI * f * time + ph).sin()).sum();
            *sample += amp * env * v;
        }
        t += dur + (rng.gen_range(0.05..0.5) * sr) as usize;
    }
    out
}

fn one_pole_lowpass(x: &[f64], cutoff_hz: f64) -> Vec<f64> {
    let a = (-2.0 * PI * cutoff_hz / SAMPLE_RATE as f64).exp();
    let mut y = 0.0;
    x.iter()
        .map(|&v| {
            y = a * y + (1.0 - a) * v;
            y
        })
        .collect()
}

/// Sum of a few random noise bands with a slow amplitude wobble.
fn noise_scene(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let white: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut scene = vec![0.0; len];
    for _ in 0..rng.gen_range(2..=4) {
        let lo = (rng.gen_range(100f64.ln()..3000f64.ln())).exp();
        let hi = (lo * rng.gen_range(1.5..6.0)).min(7500.0);
        let gain = rng.gen_range(0.3..1.0);
        let upper = one_pole_lowpass(&white, hi);
        let lower = one_pole_lowpass(&white, lo);
        for (s, (u, l)) in scene.iter_mut().zip(upper.iter().zip(&lower)) {
            *s += gain * (u - l);
        }
    }
    let rate = rng.gen_range(0.1..2.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let depth = rng.gen_range(0.0..0.5);
    for (i, s) in scene.iter_mut().enumerate() {
        *s *= 1.0 + depth * (2.0 * PI * rate * i as f64 / SAMPLE_RATE as f64 + phase).sin();
    }
    scene
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Deterministic clip `index` of `split`; classes cycle so splits stay balanced.
pub fn synth_clip(cfg: &SynthConfig, split: Split, index: usize) -> Result<SynthClip> {
    cfg.validate()?;
    let (prefix, global) = match split {
        Split::Train => ("train", index),
        Split::Test => ("test", cfg.train_clips + index),
    };
    let class = index % cfg.classes.len();
    let len = (cfg.clip_seconds * SAMPLE_RATE as f64).round() as usize;
    let mut rng = rng_for(cfg.seed, 1 + global as u64);
    let tone = tone_sequence(&mut rng, &cfg.classes[class], len);
    let raw_scene = noise_scene(&mut rng, len);
    let snr_db = rng.gen_range(cfg.snr_range_db.0..=cfg.snr_range_db.1);
    let gain = (power(&tone) / (power(&raw_scene) * 10f64.powf(snr_db / 10.0))).sqrt();
    let mixed: Vec<f64> = tone.iter().zip(&raw_scene).map(|(t, s)| t + gain * s).collect();
    let peak = mixed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = 0.9 / peak;
    let clean: Vec<f64> = tone.iter().map(|v| v * scale).collect();
    let scene: Vec<f64> = raw_scene.iter().map(|v| v * gain * scale).collect();
    let noisy: Vec<f64> = mixed.iter().map(|v| v * scale).collect();
    let visual = match cfg.visual_dim {
        None => None,
        Some(dim) => {
            let centroid = class_centroids(cfg, dim).row(class).to_owned();
            Some(Array2::from_shape_fn((cfg.visual_regions, dim), |(_, j)| centroid[j] + rng.gen_range(-0.5..0.5)))
        }
    };
    Ok(SynthClip { id: format!("{prefix}-{index:04}"), class, split, clean, noisy, scene, snr_db, visual })
}

fn class_centroids(cfg: &SynthConfig, dim: usize) -> Array2<f64> {
    let mut rng = rng_for(cfg.seed, CENTROID_STREAM);
    Array2::from_shape_simple_fn((cfg.classes.len(), dim), || rng.gen_range(-1.0..1.0))
}

/// Standalone background scene `index` of the noise corpus, peak 0.5.
pub fn synth_noise_scene(cfg: &SynthConfig, index: usize) -> Result<Waveform> {
    cfg.validate()?;
    let len = (cfg.noise_seconds * SAMPLE_RATE as f64).round() as usize;
    let mut rng = rng_for(cfg.seed, SCENE_STREAM_BASE + index as u64);
    let scene = noise_scene(&mut rng, len);
    let peak = scene.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Waveform::from_samples(scene.iter().map(|v| 0.5 * v / peak).collect())
}

pub const NOISE_DIR: &str = "noise";
pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Writes `audio/`, `clean/`, `noise/`, optional `visual/` and `manifest.jsonl`
/// under `out_dir` and returns the loaded manifest.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    for sub in ["audio", "clean", NOISE_DIR] {
        fs::create_dir_all(out_dir.join(sub))?;
    }
    if cfg.visual_dim.is_some() {
        fs::create_dir_all(out_dir.join("visual"))?;
    }
    let mut entries = Vec::with_capacity(cfg.train_clips + cfg.test_clips);
    let jobs = (0..cfg.train_clips).map(|i| (Split::Train, i)).chain((0..cfg.test_clips).map(|i| (Split::Test, i)));
    for (split, i) in jobs {
        let clip = synth_clip(cfg, split, i)?;
        let audio = PathBuf::from(format!("audio/{}.wav", clip.id));
        let clean = PathBuf::from(format!("clean/{}.wav", clip.id));
        write_wav(&out_dir.join(&audio), &Waveform::from_samples(clip.noisy)?)?;
        write_wav(&out_dir.join(&clean), &Waveform::from_samples(clip.clean)?)?;
        let visual = match &clip.visual {
            Some(v) => {
                let p = PathBuf::from(format!("visual/{}.feat", clip.id));
                write_visual_features(&out_dir.join(&p), v)?;
                Some(p)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id: clip.id,
            audio,
            labels: vec![cfg.classes[clip.class].name.clone()],
            label_ids: vec![],
            split,
            visual,
            clean: Some(clean),
        });
    }
    for j in 0..cfg.noise_scenes {
        write_wav(&out_dir.join(NOISE_DIR).join(format!("scene-{j:03}.wav")), &synth_noise_scene(cfg, j)?)?;
    }
    let mut classes: Vec<String> = cfg.classes.iter().map(|c| c.name.clone()).collect();
    classes.sort();
    let manifest = Manifest { root: out_dir.to_path_buf(), classes, entries };
    let path = out_dir.join(MANIFEST_NAME);
    manifest.write(&path)?;
    load_manifest(&path)
}

/// Sorted `*.wav` files of a noise corpus directory.
pub fn list_noise_corpus(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| open_error(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyNoiseCorpus);
    }
    Ok(files)
}
