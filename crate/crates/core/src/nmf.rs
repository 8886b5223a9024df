//! KL-divergence NMF with multiplicative updates, Wiener-filter component
//! tracks, and the supervised (fixed dictionary) separation baseline.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio;
use crate::error::{Error, Result};
use crate::signal::{istft, ComplexSpectrogram, MagnitudeSpectrogram, Waveform};

pub const DEFAULT_COMPONENTS: usize = 20;
pub const DEFAULT_ITERATIONS: usize = 200;
pub const EPS_FLOOR: f64 = 1e-12;
pub const DEFAULT_DICT_SIZE: usize = 100;
pub const DEFAULT_NOISE_ATOMS: usize = 10;

const DICT_MAGIC: &[u8; 11] = b"WSAIL-DICT\0";
const DICT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmfConfig {
    pub components: usize,
    pub iterations: usize,
    pub seed: u64,
    pub eps_floor: f64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self { components: DEFAULT_COMPONENTS, iterations: DEFAULT_ITERATIONS, seed: 0, eps_floor: EPS_FLOOR }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 || self.iterations == 0 {
            return Err(Error::InvalidConfig("NMF needs K >= 1 and iterations >= 1".into()));
        }
        if self.eps_floor.is_nan() || self.eps_floor <= 0.0 {
            return Err(Error::InvalidConfig("eps_floor must be positive".into()));
        }
        Ok(())
    }
}

/// `Q ≈ W H` with spectral patterns in the columns of `w` and activations in
/// the rows of `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfModel {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
}

impl NmfModel {
    pub fn num_components(&self) -> usize {
        self.w.ncols()
    }

    pub fn reconstruction(&self) -> Array2<f64> {
        self.w.dot(&self.h)
    }

    /// `W_k H_k`, the rank-one contribution of component `k`.
    pub fn component(&self, k: usize) -> Array2<f64> {
        outer(&self.w.column(k).to_owned(), &self.h.row(k).to_owned())
    }

    /// Sum of `weights[k] * W_k H_k` over components.
    pub fn weighted_reconstruction(&self, weights: &[f64]) -> Array2<f64> {
        let scaled = &self.w * &Array1::from(weights.to_vec());
        scaled.dot(&self.h)
    }
}

fn outer(col: &Array1<f64>, row: &Array1<f64>) -> Array2<f64> {
    let c = col.view().insert_axis(Axis(1));
    let r = row.view().insert_axis(Axis(0));
    c.dot(&r)
}

/// Generalized KL divergence `Σ q log(q/v) - q + v` with `0 log 0 = 0`.
pub fn kl_divergence(q: ArrayView2<f64>, approx: ArrayView2<f64>) -> Result<f64> {
    if q.dim() != approx.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", q.dim(), approx.dim())));
    }
    let mut total = 0.0;
    for (&a, &b) in q.iter().zip(approx.iter()) {
        if a < 0.0 || b < 0.0 {
            return Err(Error::Domain("negative entry in KL divergence".into()));
        }
        if a > 0.0 {
            if b == 0.0 {
                return Err(Error::Domain("approximation is zero where target is positive".into()));
            }
            total += a * (a / b).ln() - a + b;
        } else {
            total += b;
        }
    }
    Ok(total)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, eps: f64) -> Array2<f64> {
    // gen::<f64>() is in [0, 1); flip it into (0, 1].
    Array2::from_shape_simple_fn((rows, cols), || (1.0 - rng.gen::<f64>()).max(eps))
}

fn ratio(q: &ArrayView2<f64>, wh: &Array2<f64>, eps: f64) -> Array2<f64> {
    let mut r = Array2::zeros(q.dim());
    Zip::from(&mut r).and(q).and(wh).for_each(|r, &q, &v| *r = q / v.max(eps));
    r
}

/// `H <- H ⊙ (Wᵀ (Q ⊘ WH)) ⊘ (Wᵀ 1)`, given `wh = W H`.
fn update_h(q: &ArrayView2<f64>, w: &Array2<f64>, h: &mut Array2<f64>, wh: &Array2<f64>, eps: f64) {
    let num = w.t().dot(&ratio(q, wh, eps));
    let den = w.sum_axis(Axis(0));
    Zip::from(h.rows_mut()).and(num.rows()).and(&den).for_each(|mut h_row, num_row, &d| {
        Zip::from(&mut h_row).and(&num_row).for_each(|h, &n| *h = (*h * n / d.max(eps)).max(eps));
    });
}

/// `W <- W ⊙ ((Q ⊘ WH) Hᵀ) ⊘ (1 Hᵀ)` restricted to the columns in `free`.
fn update_w(q: &ArrayView2<f64>, w: &mut Array2<f64>, h: &Array2<f64>, wh: &Array2<f64>, free: Range<usize>, eps: f64) {
    if free.is_empty() {
        return;
    }
    let h_free = h.slice(s![free.clone(), ..]);
    let num = ratio(q, wh, eps).dot(&h_free.t());
    let den = h_free.sum_axis(Axis(1));
    let mut w_free = w.slice_mut(s![.., free]);
    Zip::from(w_free.columns_mut()).and(num.columns()).and(&den).for_each(|mut col, num_col, &d| {
        Zip::from(&mut col).and(&num_col).for_each(|w, &n| *w = (*w * n / d.max(eps)).max(eps));
    });
}

fn check_target(q: &ArrayView2<f64>) -> Result<()> {
    if q.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Domain("NMF target must be finite and non-negative".into()));
    }
    if !q.iter().any(|&v| v > 0.0) {
        return Err(Error::AllZeroInput);
    }
    Ok(())
}

/// Runs `iterations` alternating H/W updates; W columns outside `free_w` stay fixed.
/// When `trace` is given it receives the objective at the start and after every iteration.
fn run_updates(
    q: &ArrayView2<f64>,
    w: &mut Array2<f64>,
    h: &mut Array2<f64>,
    free_w: Range<usize>,
    iterations: usize,
    eps: f64,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<()> {
    let mut wh = w.dot(&*h);
    for _ in 0..iterations {
        if let Some(t) = trace.as_deref_mut() {
            t.push(kl_divergence(q.view(), wh.view())?);
        }
        update_h(q, w, h, &wh, eps);
        wh = w.dot(&*h);
        update_w(q, w, h, &wh, free_w.clone(), eps);
        wh = w.dot(&*h);
    }
    if let Some(t) = trace {
        t.push(kl_divergence(q.view(), wh.view())?);
    }
    if wh.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("NMF reconstruction diverged".into()));
    }
    Ok(())
}

pub fn nmf_decompose(q: ArrayView2<f64>, cfg: &NmfConfig) -> Result<NmfModel> {
    decompose(q, cfg, None)
}

/// Like [`nmf_decompose`], also returning the KL objective before the first
/// and after every iteration (`iterations + 1` values).
pub fn nmf_decompose_traced(q: ArrayView2<f64>, cfg: &NmfConfig) -> Result<(NmfModel, Vec<f64>)> {
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let model = decompose(q, cfg, Some(&mut trace))?;
    Ok((model, trace))
}

fn decompose(q: ArrayView2<f64>, cfg: &NmfConfig, trace: Option<&mut Vec<f64>>) -> Result<NmfModel> {
    cfg.validate()?;
    check_target(&q)?;
    let (f, n) = q.dim();
    let k = cfg.components;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = random_matrix(&mut rng, f, k, cfg.eps_floor);
    let mut h = random_matrix(&mut rng, k, n, cfg.eps_floor);
    run_updates(&q, &mut w, &mut h, 0..k, cfg.iterations, cfg.eps_floor, trace)?;
    Ok(NmfModel { w, h })
}

fn check_model_shape(m: &NmfModel, dim: (usize, usize)) -> Result<()> {
    if m.w.nrows() != dim.0 || m.h.ncols() != dim.1 || m.w.ncols() != m.h.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "model W {:?} H {:?} vs spectrogram {:?}",
            m.w.dim(),
            m.h.dim(),
            dim
        )));
    }
    Ok(())
}

/// Wiener mask of component `k`: `W_k H_k ⊘ max(WH, eps)`.
pub fn component_mask(m: &NmfModel, wh: &Array2<f64>, k: usize, eps: f64) -> Array2<f64> {
    let mut mask = m.component(k);
    Zip::from(&mut mask).and(wh).for_each(|v, &d| *v /= d.max(eps));
    mask
}

pub fn component_tracks(m: &NmfModel, x: &ComplexSpectrogram) -> Result<Vec<ComplexSpectrogram>> {
    check_model_shape(m, x.values.dim())?;
    let wh = m.reconstruction();
    (0..m.num_components()).map(|k| x.masked(&component_mask(m, &wh, k, EPS_FLOOR).view())).collect()
}

/// Magnitudes of the component tracks, computed without materializing the
/// complex tracks (`|mask ⊙ X| = mask ⊙ |X|` for non-negative masks).
pub fn component_magnitudes(m: &NmfModel, q: &MagnitudeSpectrogram) -> Result<Vec<MagnitudeSpectrogram>> {
    check_model_shape(m, q.values.dim())?;
    let wh = m.reconstruction();
    Ok((0..m.num_components())
        .map(|k| MagnitudeSpectrogram {
            values: component_mask(m, &wh, k, EPS_FLOOR) * &q.values,
            geometry: q.geometry,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DictionaryConfig {
    pub dict_size: usize,
    /// Passes over the training files, each in a freshly shuffled order.
    pub passes: usize,
    pub nmf: NmfConfig,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        Self { dict_size: DEFAULT_DICT_SIZE, passes: 1, nmf: NmfConfig::default() }
    }
}

/// Learns a class dictionary with one-file mini-batches: the dictionary is
/// carried across files while activations are re-drawn and refit per file.
pub fn train_class_dictionary(spectrograms: &[ArrayView2<f64>], cfg: &DictionaryConfig) -> Result<Array2<f64>> {
    let first = spectrograms.first().ok_or(Error::EmptyTrainingSet)?;
    if cfg.dict_size == 0 || cfg.passes == 0 {
        return Err(Error::InvalidConfig("dictionary size and passes must be positive".into()));
    }
    let f = first.nrows();
    for q in spectrograms {
        if q.nrows() != f {
            return Err(Error::ShapeMismatch(format!("{} vs {} frequency bins", q.nrows(), f)));
        }
        check_target(q)?;
    }
    let nmf = NmfConfig { components: cfg.dict_size, ..cfg.nmf };
    nmf.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(nmf.seed);
    let mut order_rng = ChaCha8Rng::seed_from_u64(nmf.seed);
    order_rng.set_stream(1);
    let mut w = random_matrix(&mut rng, f, cfg.dict_size, nmf.eps_floor);
    let mut order: Vec<usize> = (0..spectrograms.len()).collect();
    for _ in 0..cfg.passes {
        order.shuffle(&mut order_rng);
        for &i in &order {
            let q = &spectrograms[i];
            let mut h = random_matrix(&mut rng, cfg.dict_size, q.ncols(), nmf.eps_floor);
            run_updates(q, &mut w, &mut h, 0..cfg.dict_size, nmf.iterations, nmf.eps_floor, None)?;
        }
    }
    Ok(w)
}

#[derive(Debug, Clone)]
pub struct SupervisedSeparation {
    pub source: Waveform,
    pub noise: Waveform,
    pub source_mask: Array2<f64>,
    pub noise_mask: Array2<f64>,
}

/// Projects the mixture onto `[dict | noise atoms]` with the dictionary frozen
/// and `noise_atoms` free columns learned, then splits it with Wiener masks.
pub fn supervised_nmf_separate(
    x: &ComplexSpectrogram,
    dict: &Array2<f64>,
    noise_atoms: usize,
    cfg: &NmfConfig,
) -> Result<SupervisedSeparation> {
    cfg.validate()?;
    let q = x.magnitude().values;
    let (f, n) = q.dim();
    if dict.nrows() != f {
        return Err(Error::ShapeMismatch(format!("dictionary has {} rows, spectrogram {f} bins", dict.nrows())));
    }
    if dict.iter().any(|&v| !v.is_finite() || v <= 0.0) {
        return Err(Error::Domain("dictionary entries must be strictly positive".into()));
    }
    let d = dict.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise_w = random_matrix(&mut rng, f, noise_atoms, cfg.eps_floor);
    let mut w = ndarray::concatenate(Axis(1), &[dict.view(), noise_w.view()]).expect("row counts match");
    let mut h = random_matrix(&mut rng, d + noise_atoms, n, cfg.eps_floor);
    if q.iter().any(|&v| v > 0.0) {
        run_updates(&q.view(), &mut w, &mut h, d..d + noise_atoms, cfg.iterations, cfg.eps_floor, None)?;
    }

    let source_part = w.slice(s![.., ..d]).dot(&h.slice(s![..d, ..]));
    let noise_part = w.slice(s![.., d..]).dot(&h.slice(s![d.., ..]));
    let mut source_mask = Array2::zeros((f, n));
    let mut noise_mask = Array2::zeros((f, n));
    Zip::from(&mut source_mask).and(&mut noise_mask).and(&source_part).and(&noise_part).for_each(|sm, nm, &sp, &np| {
        let total = (sp + np).max(cfg.eps_floor);
        *sm = sp / total;
        *nm = np / total;
    });
    let source = istft(&x.masked(&source_mask.view())?)?;
    let noise = istft(&x.masked(&noise_mask.view())?)?;
    Ok(SupervisedSeparation { source, noise, source_mask, noise_mask })
}

pub fn write_dictionary(path: &Path, dict: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    binio::write_header(&mut w, DICT_MAGIC, DICT_VERSION)?;
    binio::write_u64(&mut w, dict.nrows() as u64)?;
    binio::write_u64(&mut w, dict.ncols() as u64)?;
    binio::write_f64s(&mut w, &dict.iter().copied().collect::<Vec<_>>())?;
    w.flush()?;
    Ok(())
}

pub fn read_dictionary(path: &Path) -> Result<Array2<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let version = binio::read_header(&mut r, DICT_MAGIC)?;
    if version != DICT_VERSION {
        return Err(Error::CorruptHeader(format!("unsupported dictionary version {version}")));
    }
    let rows = binio::read_len(&mut r)?;
    let cols = binio::read_len(&mut r)?;
    let data = binio::read_f64s(&mut r, rows.checked_mul(cols).ok_or(Error::TruncatedFile)?)?;
    binio::expect_eof(&mut r)?;
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::DimMismatch(e.to_string()))
}
