//! Embedding network, two-stream MIL scoring head, l2 fusion, multi-label
//! hinge loss with hand-derived gradients, and the Adam training loop.
//!
//! Per modality, a bag of proposal features `X` (one row per proposal) flows
//! through
//!
//! ```text
//! Z = relu(X W1 + b1) W2 + b2
//! A = Z Wcls + bcls,  B = Z Wloc + bloc
//! E = A ⊙ softmax_rows(B),  s = Σ_p E[p, :]
//! ```
//!
//! and the video score is the sum of the l2-normalized `s` of each present
//! modality.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binio;
use crate::error::{Error, Result};
use crate::proposals::{Patch, PATCH_LEN};

pub const EMBED_HIDDEN: usize = 256;
pub const EMBED_DIM: usize = 128;
pub const DEFAULT_LR: f64 = 1e-5;
pub const DEFAULT_EPOCHS: usize = 10;
const NORM_GUARD: f64 = 1e-12;

/// Two fully connected layers with a ReLU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-bound..=bound))
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: glorot(rng, input, hidden),
            b1: Array1::zeros(hidden),
            w2: glorot(rng, hidden, output),
            b2: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: Array2::zeros((input, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, output)),
            b2: Array1::zeros(output),
        }
    }

    /// The audio embedding network: 6144 -> 256 -> 128.
    pub fn audio_embedding(rng: &mut ChaCha8Rng) -> Self {
        Self::new(PATCH_LEN, EMBED_HIDDEN, EMBED_DIM, rng)
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.ncols()
    }

    fn forward(&self, x: ArrayView2<f64>) -> MlpCache {
        let pre = x.dot(&self.w1) + &self.b1;
        let act = pre.mapv(|v| v.max(0.0));
        let out = act.dot(&self.w2) + &self.b2;
        MlpCache { pre, act, out }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "features have {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(self.forward(x).out)
    }
}

struct MlpCache {
    pre: Array2<f64>,
    act: Array2<f64>,
    out: Array2<f64>,
}

/// Embeds a single log-mel patch.
pub fn embed(p: &Patch, net: &Mlp) -> Result<Array1<f64>> {
    let row = p.values().view().into_shape_with_order((1, PATCH_LEN)).expect("patches are contiguous");
    Ok(net.apply(row)?.row(0).to_owned())
}

/// Parallel classification and localization linear maps.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStreamHead {
    pub w_cls: Array2<f64>,
    pub b_cls: Array1<f64>,
    pub w_loc: Array2<f64>,
    pub b_loc: Array1<f64>,
}

impl TwoStreamHead {
    pub fn new(input: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w_cls: glorot(rng, input, classes),
            b_cls: Array1::zeros(classes),
            w_loc: glorot(rng, input, classes),
            b_loc: Array1::zeros(classes),
        }
    }

    pub fn zeros(input: usize, classes: usize) -> Self {
        Self {
            w_cls: Array2::zeros((input, classes)),
            b_cls: Array1::zeros(classes),
            w_loc: Array2::zeros((input, classes)),
            b_loc: Array1::zeros(classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_cls.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.w_cls.ncols()
    }
}

/// Softmax over the proposal axis (rows), independently for every class column.
pub fn softmax_over_proposals(b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = b.to_owned();
    for mut col in out.columns_mut() {
        let max = col.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        col.mapv_inplace(|v| (v - max).exp());
        let sum = col.sum();
        col.mapv_inplace(|v| v / sum);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagScores {
    /// Classification stream output.
    pub a: Array2<f64>,
    /// Softmaxed localization stream output.
    pub sigma_b: Array2<f64>,
    /// `A ⊙ σ(B)`, per-proposal weighted scores.
    pub e: Array2<f64>,
    /// Sum of `e` over proposals.
    pub s: Array1<f64>,
}

pub fn score_bag(z: ArrayView2<f64>, head: &TwoStreamHead) -> Result<BagScores> {
    if z.ncols() != head.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "bag features have {} columns, head expects {}",
            z.ncols(),
            head.input_dim()
        )));
    }
    if z.nrows() == 0 {
        return Err(Error::EmptyBag);
    }
    let a = z.dot(&head.w_cls) + &head.b_cls;
    let sigma_b = softmax_over_proposals((z.dot(&head.w_loc) + &head.b_loc).view());
    let e = &a * &sigma_b;
    let s = e.sum_axis(Axis(0));
    Ok(BagScores { a, sigma_b, e, s })
}

pub fn l2_normalize(s: ArrayView1<f64>) -> Array1<f64> {
    let norm = s.dot(&s).sqrt();
    if norm > NORM_GUARD {
        s.mapv(|v| v / norm)
    } else {
        Array1::zeros(s.len())
    }
}

/// Vector-Jacobian product of [`l2_normalize`]: `(I - ŝŝᵀ) g / ‖s‖`.
pub fn l2_normalize_backward(s: ArrayView1<f64>, upstream: ArrayView1<f64>) -> Array1<f64> {
    let norm = s.dot(&s).sqrt();
    if norm <= NORM_GUARD {
        return Array1::zeros(s.len());
    }
    let unit = s.mapv(|v| v / norm);
    let proj = unit.dot(&upstream);
    (&upstream - &(unit * proj)) / norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoScore {
    pub phi: Array1<f64>,
    pub audio: Option<Array1<f64>>,
    pub visual: Option<Array1<f64>>,
}

/// `φ = l2(s_v) + l2(s_a)`; an absent modality contributes nothing.
pub fn fuse(s_v: Option<ArrayView1<f64>>, s_a: Option<ArrayView1<f64>>) -> Result<VideoScore> {
    let visual = s_v.map(l2_normalize);
    let audio = s_a.map(l2_normalize);
    let phi = match (&visual, &audio) {
        (Some(v), Some(a)) => {
            if v.len() != a.len() {
                return Err(Error::LengthMismatch { left: v.len(), right: a.len() });
            }
            v + a
        }
        (Some(v), None) => v.clone(),
        (None, Some(a)) => a.clone(),
        (None, None) => return Err(Error::EmptyInput),
    };
    Ok(VideoScore { phi, audio, visual })
}

/// Multi-label target in `{-1, +1}^C`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector(Vec<f64>);

impl LabelVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidConfig("label entries must be -1 or +1".into()));
        }
        Ok(Self(values))
    }

    pub fn from_classes(classes: &[usize], num_classes: usize) -> Result<Self> {
        let mut y = vec![-1.0; num_classes];
        for &c in classes {
            *y.get_mut(c).ok_or(Error::UnknownLabel(c.to_string()))? = 1.0;
        }
        if classes.is_empty() {
            return Err(Error::InvalidConfig("at least one positive label required".into()));
        }
        Ok(Self(y))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `(1 / CN) Σ_n Σ_c max(0, 1 - y_c φ_c)`.
pub fn hinge_loss(phis: &[Array1<f64>], ys: &[LabelVector]) -> Result<f64> {
    if phis.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if phis.len() != ys.len() {
        return Err(Error::LengthMismatch { left: phis.len(), right: ys.len() });
    }
    let classes = phis[0].len();
    let mut total = 0.0;
    for (phi, y) in phis.iter().zip(ys) {
        if phi.len() != classes || y.len() != classes {
            return Err(Error::LengthMismatch { left: phi.len(), right: y.len() });
        }
        total += phi.iter().zip(y.values()).map(|(p, y)| (1.0 - y * p).max(0.0)).sum::<f64>();
    }
    Ok(total / (classes * phis.len()) as f64)
}

/// Argmax with ties going to the lowest index.
pub fn predict(phi: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in phi.iter().enumerate() {
        if v > phi[best] {
            best = i;
        }
    }
    best
}

/// Embedding network plus scoring head for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub embed: Mlp,
    pub head: TwoStreamHead,
}

impl Stream {
    fn zeros_like(&self) -> Self {
        Stream {
            embed: Mlp::zeros(self.embed.input_dim(), self.embed.w1.ncols(), self.embed.output_dim()),
            head: TwoStreamHead::zeros(self.head.input_dim(), self.head.num_classes()),
        }
    }

    /// Scores a bag of raw proposal features (one row per proposal).
    pub fn score(&self, x: ArrayView2<f64>) -> Result<BagScores> {
        let z = self.embed.apply(x)?;
        score_bag(z.view(), &self.head)
    }

    fn forward(&self, x: ArrayView2<f64>) -> Result<StreamCache> {
        if x.ncols() != self.embed.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "features have {} columns, stream expects {}",
                x.ncols(),
                self.embed.input_dim()
            )));
        }
        let mlp = self.embed.forward(x);
        let scores = score_bag(mlp.out.view(), &self.head)?;
        Ok(StreamCache { mlp, scores })
    }

    /// Accumulates parameter gradients given `ds = ∂L/∂s`.
    fn backward(&self, x: ArrayView2<f64>, cache: &StreamCache, ds: ArrayView1<f64>, grad: &mut Stream) {
        let BagScores { a, sigma_b, .. } = &cache.scores;
        let d_a = sigma_b * &ds;
        let d_sigma = a * &ds;
        // softmax Jacobian per column: σ ⊙ (g - Σ_p σ g)
        let inner = (sigma_b * &d_sigma).sum_axis(Axis(0));
        let d_b = sigma_b * &(d_sigma - &inner);

        let z = &cache.mlp.out;
        general_mat_mul(1.0, &z.t(), &d_a, 1.0, &mut grad.head.w_cls);
        grad.head.b_cls += &d_a.sum_axis(Axis(0));
        general_mat_mul(1.0, &z.t(), &d_b, 1.0, &mut grad.head.w_loc);
        grad.head.b_loc += &d_b.sum_axis(Axis(0));

        let d_z = d_a.dot(&self.head.w_cls.t()) + d_b.dot(&self.head.w_loc.t());
        general_mat_mul(1.0, &cache.mlp.act.t(), &d_z, 1.0, &mut grad.embed.w2);
        grad.embed.b2 += &d_z.sum_axis(Axis(0));
        let mut d_pre = d_z.dot(&self.embed.w2.t());
        Zip::from(&mut d_pre).and(&cache.mlp.pre).for_each(|g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        general_mat_mul(1.0, &x.t(), &d_pre, 1.0, &mut grad.embed.w1);
        grad.embed.b1 += &d_pre.sum_axis(Axis(0));
    }
}

struct StreamCache {
    mlp: MlpCache,
    scores: BagScores,
}

/// Features of one video, per modality.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VideoInput {
    pub audio: Option<Array2<f64>>,
    pub visual: Option<Array2<f64>>,
}

impl VideoInput {
    pub fn audio(features: Array2<f64>) -> Self {
        Self { audio: Some(features), visual: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub input: VideoInput,
    pub labels: LabelVector,
}

/// Layer sizes of a full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub classes: usize,
    /// `(input, hidden, embedding)` of the audio stream.
    pub audio: Option<(usize, usize, usize)>,
    /// `(d_v, hidden, embedding)` of the visual stream.
    pub visual: Option<(usize, usize, usize)>,
}

impl ModelDims {
    pub fn audio_only(classes: usize) -> Self {
        Self { classes, audio: Some((PATCH_LEN, EMBED_HIDDEN, EMBED_DIM)), visual: None }
    }

    pub fn with_visual(mut self, d_v: usize) -> Self {
        self.visual = Some((d_v, EMBED_HIDDEN, EMBED_DIM));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub classes: usize,
    pub audio: Option<Stream>,
    pub visual: Option<Stream>,
}

impl Model {
    /// Glorot-uniform weights and zero biases, drawn from one seeded stream
    /// (audio embedding, audio head, visual embedding, visual head).
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        if dims.classes < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        if dims.audio.is_none() && dims.visual.is_none() {
            return Err(Error::InvalidConfig("model needs at least one modality".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stream = |(input, hidden, out): (usize, usize, usize)| Stream {
            embed: Mlp::new(input, hidden, out, &mut rng),
            head: TwoStreamHead::new(out, dims.classes, &mut rng),
        };
        let audio = dims.audio.map(&mut stream);
        let visual = dims.visual.map(&mut stream);
        Ok(Self { classes: dims.classes, audio, visual })
    }

    pub fn dims(&self) -> ModelDims {
        let d = |s: &Stream| (s.embed.input_dim(), s.embed.w1.ncols(), s.embed.output_dim());
        ModelDims { classes: self.classes, audio: self.audio.as_ref().map(d), visual: self.visual.as_ref().map(d) }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            classes: self.classes,
            audio: self.audio.as_ref().map(Stream::zeros_like),
            visual: self.visual.as_ref().map(Stream::zeros_like),
        }
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        for (prefix, stream) in [("audio", &self.audio), ("visual", &self.visual)] {
            if let Some(s) = stream {
                stream_tensors(prefix, s, &mut out);
            }
        }
        out
    }

    /// Mutable parameter slices, same order as [`Model::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for s in [&mut self.audio, &mut self.visual].into_iter().flatten() {
            out.push(s.embed.w1.as_slice_mut().unwrap());
            out.push(s.embed.b1.as_slice_mut().unwrap());
            out.push(s.embed.w2.as_slice_mut().unwrap());
            out.push(s.embed.b2.as_slice_mut().unwrap());
            out.push(s.head.w_cls.as_slice_mut().unwrap());
            out.push(s.head.b_cls.as_slice_mut().unwrap());
            out.push(s.head.w_loc.as_slice_mut().unwrap());
            out.push(s.head.b_loc.as_slice_mut().unwrap());
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t, _)| t.len()).sum()
    }

    fn check_input(&self, input: &VideoInput) -> Result<()> {
        if input.audio.is_some() != self.audio.is_some() || input.visual.is_some() != self.visual.is_some() {
            return Err(Error::ShapeMismatch("input modalities do not match the model".into()));
        }
        Ok(())
    }

    /// Per-modality bag scores plus the fused video score.
    pub fn score(&self, input: &VideoInput) -> Result<(Option<BagScores>, Option<BagScores>, VideoScore)> {
        self.check_input(input)?;
        let audio = match (&self.audio, &input.audio) {
            (Some(s), Some(x)) => Some(s.score(x.view())?),
            _ => None,
        };
        let visual = match (&self.visual, &input.visual) {
            (Some(s), Some(x)) => Some(s.score(x.view())?),
            _ => None,
        };
        let video = fuse(visual.as_ref().map(|v| v.s.view()), audio.as_ref().map(|a| a.s.view()))?;
        Ok((audio, visual, video))
    }

    pub fn phi(&self, input: &VideoInput) -> Result<Array1<f64>> {
        Ok(self.score(input)?.2.phi)
    }

    pub fn predict(&self, input: &VideoInput) -> Result<usize> {
        Ok(predict(self.phi(input)?.view()))
    }

    /// Hinge loss of a batch and the gradient of every parameter.
    pub fn loss_and_gradients(&self, batch: &[&Example]) -> Result<(f64, Model)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut grad = self.zeros_like();
        let scale = 1.0 / (self.classes * batch.len()) as f64;
        let mut total = 0.0;
        for ex in batch {
            self.check_input(&ex.input)?;
            if ex.labels.len() != self.classes {
                return Err(Error::LengthMismatch { left: ex.labels.len(), right: self.classes });
            }
            let audio = match (&self.audio, &ex.input.audio) {
                (Some(s), Some(x)) => Some(s.forward(x.view())?),
                _ => None,
            };
            let visual = match (&self.visual, &ex.input.visual) {
                (Some(s), Some(x)) => Some(s.forward(x.view())?),
                _ => None,
            };
            let video = fuse(visual.as_ref().map(|c| c.scores.s.view()), audio.as_ref().map(|c| c.scores.s.view()))?;
            let mut d_phi = Array1::zeros(self.classes);
            for (c, (&p, &y)) in video.phi.iter().zip(ex.labels.values()).enumerate() {
                let margin = 1.0 - y * p;
                if margin > 0.0 {
                    total += margin;
                    d_phi[c] = -y * scale;
                }
            }
            if let (Some(s), Some(cache), Some(x), Some(g)) =
                (&self.audio, &audio, &ex.input.audio, grad.audio.as_mut())
            {
                let ds = l2_normalize_backward(cache.scores.s.view(), d_phi.view());
                s.backward(x.view(), cache, ds.view(), g);
            }
            if let (Some(s), Some(cache), Some(x), Some(g)) =
                (&self.visual, &visual, &ex.input.visual, grad.visual.as_mut())
            {
                let ds = l2_normalize_backward(cache.scores.s.view(), d_phi.view());
                s.backward(x.view(), cache, ds.view(), g);
            }
        }
        Ok((total * scale, grad))
    }
}

type NamedTensor<'a> = (String, &'a [f64], Vec<usize>);

fn stream_tensors<'a>(prefix: &str, s: &'a Stream, out: &mut Vec<NamedTensor<'a>>) {
    let mut push = |name: &str, data: &'a [f64], shape: &[usize]| {
        out.push((format!("{prefix}.{name}"), data, shape.to_vec()));
    };
    push("embed.w1", s.embed.w1.as_slice().unwrap(), s.embed.w1.shape());
    push("embed.b1", s.embed.b1.as_slice().unwrap(), s.embed.b1.shape());
    push("embed.w2", s.embed.w2.as_slice().unwrap(), s.embed.w2.shape());
    push("embed.b2", s.embed.b2.as_slice().unwrap(), s.embed.b2.shape());
    push("head.w_cls", s.head.w_cls.as_slice().unwrap(), s.head.w_cls.shape());
    push("head.b_cls", s.head.b_cls.as_slice().unwrap(), s.head.b_cls.shape());
    push("head.w_loc", s.head.w_loc.as_slice().unwrap(), s.head.w_loc.shape());
    push("head.b_loc", s.head.b_loc.as_slice().unwrap(), s.head.b_loc.shape());
}

/// Mean hinge loss over a dataset, computed in parallel but summed in order.
pub fn dataset_loss(model: &Model, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let phis = data.par_iter().map(|ex| model.phi(&ex.input)).collect::<Result<Vec<_>>>()?;
    let ys: Vec<LabelVector> = data.iter().map(|ex| ex.labels.clone()).collect();
    hinge_loss(&phis, &ys)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &Model, lr: f64) -> Self {
        let sizes: Vec<usize> = model.tensors().iter().map(|(_, t, _)| t.len()).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(&mut self, model: &mut Model, grads: &Model) {
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        let step_size = self.lr / correction1;
        let grads = grads.tensors();
        for (i, params) in model.tensors_mut().into_iter().enumerate() {
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            let moments = self.m[i].iter_mut().zip(self.v[i].iter_mut());
            for ((p, &g), (m, v)) in params.iter_mut().zip(grads[i].1).zip(moments) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / ((*v / correction2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: DEFAULT_EPOCHS, lr: DEFAULT_LR, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean of the per-step losses seen during the epoch.
    pub mean_step_loss: f64,
    /// Loss over the whole training set after the epoch.
    pub dataset_loss: f64,
}

/// Batch-of-one Adam training with a seeded shuffle per epoch.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    pub cfg: TrainConfig,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Self {
        let adam = Adam::new(&model, cfg.lr);
        Self { model, adam, cfg, epoch: 0 }
    }

    pub fn resume(model: Model, adam: Adam, epoch: usize, cfg: TrainConfig) -> Self {
        Self { model, adam, cfg, epoch }
    }

    /// Visiting order for a given 0-based epoch; depends only on the seed.
    pub fn epoch_order(seed: u64, epoch: usize, len: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        order
    }

    pub fn run_epoch(&mut self, data: &[Example]) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut sum = 0.0;
        for i in Self::epoch_order(self.cfg.seed, self.epoch, data.len()) {
            let (loss, grads) = self.model.loss_and_gradients(&[&data[i]])?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss became {loss} on `{}`", data[i].id)));
            }
            sum += loss;
            self.adam.update(&mut self.model, &grads);
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            mean_step_loss: sum / data.len() as f64,
            dataset_loss: dataset_loss(&self.model, data)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub initial_loss: f64,
    pub epochs: Vec<EpochStats>,
}

pub fn train(model: Model, data: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let initial_loss = dataset_loss(&model, data)?;
    let mut trainer = Trainer::new(model, *cfg);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let stats = trainer.run_epoch(data)?;
        log::debug!("epoch {} loss {:.6}", stats.epoch, stats.dataset_loss);
        epochs.push(stats);
    }
    Ok(TrainOutcome { model: trainer.model, initial_loss, epochs })
}

const CKPT_MAGIC: &[u8; 11] = b"WSAIL-CKPT\0";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: Option<Adam>,
    /// Completed epochs.
    pub epoch: usize,
    /// Free-form metadata stored alongside the parameters.
    pub metadata: String,
}

/// Layout: magic, version (u32), C and head input dim l (u64), epoch (u64),
/// metadata (u32 length + UTF-8), block count (u32), then per block a name
/// (u32 length + UTF-8), rank (u32), dims (u64 each) and f64 data, and finally
/// an Adam flag byte followed by step, lr, betas, eps and the first/second
/// moment vectors in block order. All little-endian.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let model = &ckpt.model;
    let head_dim = model.audio.as_ref().or(model.visual.as_ref()).map(|s| s.head.input_dim()).unwrap_or(0);
    binio::write_header(&mut w, CKPT_MAGIC, CKPT_VERSION)?;
    binio::write_u64(&mut w, model.classes as u64)?;
    binio::write_u64(&mut w, head_dim as u64)?;
    binio::write_u64(&mut w, ckpt.epoch as u64)?;
    write_str(&mut w, &ckpt.metadata)?;
    let tensors = model.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, data, shape) in &tensors {
        write_str(&mut w, name)?;
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            binio::write_u64(&mut w, d as u64)?;
        }
        binio::write_f64s(&mut w, data)?;
    }
    match &ckpt.adam {
        None => w.write_all(&[0])?,
        Some(adam) => {
            w.write_all(&[1])?;
            binio::write_u64(&mut w, adam.step)?;
            binio::write_f64s(&mut w, &[adam.lr, adam.beta1, adam.beta2, adam.eps])?;
            for (m, v) in adam.m.iter().zip(&adam.v) {
                binio::write_f64s(&mut w, m)?;
                binio::write_f64s(&mut w, v)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = binio::read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    binio::read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::CorruptHeader("invalid UTF-8 string".into()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut r = BufReader::new(file);
    let version = binio::read_header(&mut r, CKPT_MAGIC)?;
    if version != CKPT_VERSION {
        return Err(Error::CorruptHeader(format!("unsupported checkpoint version {version}")));
    }
    let classes = binio::read_len(&mut r)?;
    let head_dim = binio::read_len(&mut r)?;
    let epoch = binio::read_len(&mut r)?;
    let metadata = read_str(&mut r)?;
    let count = binio::read_u32(&mut r)? as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_str(&mut r)?;
        let rank = binio::read_u32(&mut r)? as usize;
        if rank == 0 || rank > 2 {
            return Err(Error::CorruptHeader(format!("block `{name}` has rank {rank}")));
        }
        let shape = (0..rank).map(|_| binio::read_len(&mut r)).collect::<Result<Vec<_>>>()?;
        let data = binio::read_f64s(&mut r, shape.iter().product())?;
        blocks.push((name, shape, data));
    }
    let model = model_from_blocks(classes, &blocks)?;
    if model.audio.as_ref().or(model.visual.as_ref()).map(|s| s.head.input_dim()) != Some(head_dim) {
        return Err(Error::DimMismatch("head input dimension disagrees with header".into()));
    }
    let mut flag = [0u8; 1];
    binio::read_exact(&mut r, &mut flag)?;
    let adam = match flag[0] {
        0 => None,
        1 => {
            let step = binio::read_u64(&mut r)?;
            let h = binio::read_f64s(&mut r, 4)?;
            let mut m = Vec::with_capacity(count);
            let mut v = Vec::with_capacity(count);
            for (_, shape, _) in &blocks {
                let n = shape.iter().product();
                m.push(binio::read_f64s(&mut r, n)?);
                v.push(binio::read_f64s(&mut r, n)?);
            }
            Some(Adam { lr: h[0], beta1: h[1], beta2: h[2], eps: h[3], step, m, v })
        }
        other => return Err(Error::CorruptHeader(format!("bad optimizer flag {other}"))),
    };
    binio::expect_eof(&mut r)?;
    Ok(Checkpoint { model, adam, epoch, metadata })
}

fn model_from_blocks(classes: usize, blocks: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Model> {
    let find = |name: &str| blocks.iter().find(|(n, _, _)| n == name);
    let matrix = |name: &str| -> Result<Array2<f64>> {
        let (_, shape, data) = find(name).ok_or_else(|| Error::CorruptHeader(format!("missing block `{name}`")))?;
        if shape.len() != 2 {
            return Err(Error::DimMismatch(format!("`{name}` should be a matrix")));
        }
        Array2::from_shape_vec((shape[0], shape[1]), data.clone()).map_err(|e| Error::DimMismatch(e.to_string()))
    };
    let vector = |name: &str| -> Result<Array1<f64>> {
        let (_, shape, data) = find(name).ok_or_else(|| Error::CorruptHeader(format!("missing block `{name}`")))?;
        if shape.len() != 1 {
            return Err(Error::DimMismatch(format!("`{name}` should be a vector")));
        }
        Ok(Array1::from(data.clone()))
    };
    let stream = |prefix: &str| -> Result<Option<Stream>> {
        if find(&format!("{prefix}.embed.w1")).is_none() {
            return Ok(None);
        }
        let s = Stream {
            embed: Mlp {
                w1: matrix(&format!("{prefix}.embed.w1"))?,
                b1: vector(&format!("{prefix}.embed.b1"))?,
                w2: matrix(&format!("{prefix}.embed.w2"))?,
                b2: vector(&format!("{prefix}.embed.b2"))?,
            },
            head: TwoStreamHead {
                w_cls: matrix(&format!("{prefix}.head.w_cls"))?,
                b_cls: vector(&format!("{prefix}.head.b_cls"))?,
                w_loc: matrix(&format!("{prefix}.head.w_loc"))?,
                b_loc: vector(&format!("{prefix}.head.b_loc"))?,
            },
        };
        let e = &s.embed;
        let h = &s.head;
        let consistent = e.b1.len() == e.w1.ncols()
            && e.w2.nrows() == e.w1.ncols()
            && e.b2.len() == e.w2.ncols()
            && h.w_cls.nrows() == e.w2.ncols()
            && h.w_loc.dim() == h.w_cls.dim()
            && h.w_cls.ncols() == classes
            && h.b_cls.len() == classes
            && h.b_loc.len() == classes;
        if !consistent {
            return Err(Error::DimMismatch(format!("{prefix} stream blocks have inconsistent shapes")));
        }
        Ok(Some(s))
    };
    let model = Model { classes, audio: stream("audio")?, visual: stream("visual")? };
    if model.audio.is_none() && model.visual.is_none() {
        return Err(Error::CorruptHeader("checkpoint holds no stream".into()));
    }
    let expected = model.tensors().len();
    if expected != blocks.len() {
        return Err(Error::CorruptHeader(format!("{} blocks, expected {expected}", blocks.len())));
    }
    Ok(model)
}
