use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use wsail::data::{
    list_noise_corpus, load_manifest, load_visual_features, read_wav, synth_dataset, write_wav, Manifest,
    ManifestEntry, Split, SynthConfig, NOISE_DIR,
};
use wsail::enhance::{score_mixture, LabelMode, MaskMode};
use wsail::eval::{
    classification_table, corrupt, evaluate_noisy, noise_assignment, noise_table, sdr, sdr_table, snr_label,
    to_json_lines, EvalReport, FileRecord, SdrRow, SdrStats,
};
use wsail::model::{
    dataset_loss, load_checkpoint, predict, save_checkpoint, Checkpoint, Example, LabelVector, Model, ModelDims,
    TrainConfig, Trainer, VideoInput,
};
use wsail::nmf::{component_magnitudes, kl_divergence, nmf_decompose_traced, NmfConfig};
use wsail::proposals::{analyze, ProposalKinds, PATCH_LEN};
use wsail::signal::{stft, Waveform};

use crate::config::{parse_snr, ConfigError, ModeSetting, RunConfig};
use crate::{Cli, Command, ModeArg, ProposalArg, SplitArg};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(p) = cli.proposals {
        cfg.proposals = match p {
            ProposalArg::Tsp => ProposalKinds::Tsp,
            ProposalArg::Ncp => ProposalKinds::Ncp,
            ProposalArg::Both => ProposalKinds::Both,
        };
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(ConfigError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("thread pool")?;
    }

    match cli.command {
        Command::Synth { out, classes, train, test, noise_scenes, seconds, visual_dim } => {
            let s = &mut cfg.synth;
            s.classes = classes.unwrap_or(s.classes);
            s.train = train.unwrap_or(s.train);
            s.test = test.unwrap_or(s.test);
            s.noise_scenes = noise_scenes.unwrap_or(s.noise_scenes);
            s.seconds = seconds.unwrap_or(s.seconds);
            s.visual_dim = visual_dim.or(s.visual_dim);
            cfg.validate()?;
            synth(&cfg, &out)
        }
        Command::Train { manifest, out, epochs, lr, visual } => {
            cfg.model.epochs = epochs.unwrap_or(cfg.model.epochs);
            cfg.model.lr = lr.unwrap_or(cfg.model.lr);
            cfg.model.visual |= visual;
            cfg.validate()?;
            train(&cfg, &manifest, &out)
        }
        Command::Classify { checkpoint, manifest, split, out, inputs } => {
            classify(&checkpoint, manifest.as_deref(), split, &inputs, out.as_deref(), &cfg)
        }
        Command::Enhance { checkpoint, input, out, mode, label, tau } => {
            if let Some(m) = mode {
                cfg.enhance.mode = match m {
                    ModeArg::LabelKnown => ModeSetting::LabelKnown,
                    ModeArg::LabelUnknown => ModeSetting::LabelUnknown,
                };
            }
            cfg.enhance.tau = tau.or(cfg.enhance.tau);
            cfg.validate()?;
            enhance(&cfg, &checkpoint, &input, &out, label.as_deref())
        }
        Command::EvalCls { checkpoint, manifest, out } => eval_cls(&cfg, &checkpoint, &manifest, &out),
        Command::EvalNoisy { checkpoint, manifest, noise_dir, snr, out } => {
            if let Some(levels) = snr {
                cfg.eval.snr_levels =
                    levels.split(',').map(parse_snr).collect::<Result<_, _>>().map_err(ConfigError)?;
            }
            cfg.validate()?;
            eval_noisy(&cfg, &checkpoint, &manifest, noise_dir.as_deref(), &out)
        }
        Command::EvalSdr { checkpoint, manifest, noise_dir, snr, out } => {
            if let Some(level) = snr {
                cfg.eval.sdr_snr = parse_snr(&level).map_err(ConfigError)?;
            }
            eval_sdr(&cfg, &checkpoint, &manifest, noise_dir.as_deref(), &out)
        }
        Command::NmfInspect { input, components, iterations } => {
            cfg.nmf.components = components.unwrap_or(cfg.nmf.components);
            cfg.nmf.iterations = iterations.unwrap_or(cfg.nmf.iterations);
            cfg.validate()?;
            nmf_inspect(&cfg, &input)
        }
    }
}

fn write_snapshot(cfg: &RunConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.to_ini()).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let s = &cfg.synth;
    let synth_cfg = SynthConfig {
        train_clips: s.train,
        test_clips: s.test,
        noise_scenes: s.noise_scenes,
        clip_seconds: s.seconds,
        noise_seconds: s.seconds,
        seed: s.seed,
        visual_dim: s.visual_dim,
        ..SynthConfig::with_classes(s.classes)
    };
    create_dir(out)?;
    let manifest = synth_dataset(&synth_cfg, out)?;
    write_snapshot(cfg, &out.join("config.ini"))?;
    println!(
        "wrote {} clips ({} classes) and {} noise scenes to {}",
        manifest.entries.len(),
        manifest.num_classes(),
        s.noise_scenes,
        out.display()
    );
    Ok(())
}

/// Everything needed to featurize audio the way a checkpoint was trained.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    classes: Vec<String>,
    proposals: String,
    nmf_components: usize,
    nmf_iterations: usize,
    nmf_seed: u64,
}

impl CheckpointMeta {
    fn kinds(&self) -> Result<ProposalKinds> {
        Ok(self.proposals.parse()?)
    }

    fn nmf(&self) -> NmfConfig {
        NmfConfig {
            components: self.nmf_components,
            iterations: self.nmf_iterations,
            seed: self.nmf_seed,
            ..NmfConfig::default()
        }
    }

    fn system_name(&self) -> String {
        match self.proposals.parse() {
            Ok(ProposalKinds::Tsp) => "A (TSP)".into(),
            Ok(ProposalKinds::Ncp) => "A (NCP)".into(),
            Ok(ProposalKinds::Both) => "A (NCP, TSP)".into(),
            Err(_) => self.proposals.clone(),
        }
    }
}

struct Loaded {
    model: Model,
    meta: CheckpointMeta,
}

fn load(path: &Path) -> Result<Loaded> {
    let ckpt = match load_checkpoint(path) {
        Err(e @ wsail::Error::MissingFile(_)) => {
            return Err(e).with_context(|| format!("missing checkpoint {}", path.display()))
        }
        other => other.with_context(|| format!("loading checkpoint {}", path.display()))?,
    };
    let meta: CheckpointMeta = serde_json::from_str(&ckpt.metadata)
        .map_err(|e| wsail::Error::CorruptHeader(format!("checkpoint metadata: {e}")))?;
    if meta.classes.len() != ckpt.model.classes {
        bail!(wsail::Error::DimMismatch("checkpoint metadata disagrees with its class count".into()));
    }
    Ok(Loaded { model: ckpt.model, meta })
}

fn audio_features(w: &Waveform, id: &str, kinds: ProposalKinds, nmf: &NmfConfig) -> wsail::Result<Array2<f64>> {
    Ok(analyze(w, id, kinds, nmf)?.bag.feature_matrix())
}

fn visual_features(manifest: &Manifest, entry: &ManifestEntry) -> wsail::Result<Array2<f64>> {
    let path = entry
        .visual
        .as_ref()
        .ok_or_else(|| wsail::Error::MissingFile(PathBuf::from(format!("visual features of `{}`", entry.id))))?;
    load_visual_features(&manifest.resolve(path))
}

fn entry_input(
    manifest: &Manifest,
    entry: &ManifestEntry,
    audio: &Waveform,
    kinds: ProposalKinds,
    nmf: &NmfConfig,
    visual: bool,
) -> Result<VideoInput> {
    Ok(VideoInput {
        audio: Some(
            audio_features(audio, &entry.id, kinds, nmf).with_context(|| format!("featurizing `{}`", entry.id))?,
        ),
        visual: if visual { Some(visual_features(manifest, entry)?) } else { None },
    })
}

fn train(cfg: &RunConfig, manifest_path: &Path, out: &Path) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let entries: Vec<&ManifestEntry> = manifest.split(Split::Train).collect();
    if entries.is_empty() {
        bail!(wsail::Error::EmptyTrainingSet);
    }
    let classes = manifest.num_classes();
    info!("featurizing {} training clips", entries.len());
    let examples = entries
        .par_iter()
        .map(|e| {
            let audio = read_wav(&manifest.resolve(&e.audio))?;
            Ok(Example {
                id: e.id.clone(),
                input: entry_input(&manifest, e, &audio, cfg.proposals, &cfg.nmf, cfg.model.visual)?,
                labels: LabelVector::from_classes(&e.label_ids, classes)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let m = &cfg.model;
    let visual_dim = examples[0].input.visual.as_ref().map(|v| v.ncols());
    let dims = ModelDims {
        classes,
        audio: Some((PATCH_LEN, m.hidden, m.embedding)),
        visual: visual_dim.map(|d| (d, m.hidden, m.embedding)),
    };
    let model = Model::new(dims, m.seed)?;
    let train_cfg = TrainConfig { epochs: m.epochs, lr: m.lr, seed: m.seed };
    let initial = dataset_loss(&model, &examples)?;
    let mut log = format!("epoch\tmean_step_loss\tdataset_loss\n0\t\t{initial:.12e}\n");
    let mut trainer = Trainer::new(model, train_cfg);
    for _ in 0..m.epochs {
        let stats = trainer.run_epoch(&examples)?;
        info!("epoch {} loss {:.6}", stats.epoch, stats.dataset_loss);
        let _ = writeln!(log, "{}\t{:.12e}\t{:.12e}", stats.epoch, stats.mean_step_loss, stats.dataset_loss);
    }

    create_dir(out)?;
    let meta = CheckpointMeta {
        classes: manifest.classes.clone(),
        proposals: cfg.proposals.name().into(),
        nmf_components: cfg.nmf.components,
        nmf_iterations: cfg.nmf.iterations,
        nmf_seed: cfg.nmf.seed,
    };
    let ckpt = Checkpoint {
        model: trainer.model,
        adam: Some(trainer.adam),
        epoch: trainer.epoch,
        metadata: serde_json::to_string(&meta)?,
    };
    save_checkpoint(&out.join("model.ckpt"), &ckpt)?;
    fs::write(out.join("loss.tsv"), &log)?;
    write_snapshot(cfg, &out.join("config.ini"))?;
    print!("{log}");
    Ok(())
}

struct Scored {
    id: String,
    truth: Option<usize>,
    phi: Array1<f64>,
}

fn score_entries(loaded: &Loaded, manifest: &Manifest, entries: &[&ManifestEntry]) -> Result<Vec<Scored>> {
    let kinds = loaded.meta.kinds()?;
    let nmf = loaded.meta.nmf();
    let visual = loaded.model.visual.is_some();
    entries
        .par_iter()
        .map(|e| {
            let audio = read_wav(&manifest.resolve(&e.audio))?;
            let truth = loaded.meta.classes.iter().position(|c| *c == e.labels[0]);
            let input = entry_input(manifest, e, &audio, kinds, &nmf, visual)?;
            Ok(Scored { id: e.id.clone(), truth, phi: loaded.model.phi(&input)? })
        })
        .collect()
}

fn select(manifest: &Manifest, split: SplitArg) -> Vec<&ManifestEntry> {
    manifest
        .entries
        .iter()
        .filter(|e| match split {
            SplitArg::All => true,
            SplitArg::Train => e.split == Split::Train,
            SplitArg::Test => e.split == Split::Test,
        })
        .collect()
}

fn records(scored: &[Scored]) -> Vec<FileRecord> {
    scored
        .iter()
        .map(|s| FileRecord {
            id: s.id.clone(),
            truth: s.truth,
            prediction: predict(s.phi.view()),
            scores: s.phi.to_vec(),
            snr_db: None,
            sdr: None,
        })
        .collect()
}

fn classify(
    checkpoint: &Path,
    manifest: Option<&Path>,
    split: SplitArg,
    inputs: &[PathBuf],
    out: Option<&Path>,
    cfg: &RunConfig,
) -> Result<()> {
    let loaded = load(checkpoint)?;
    let scored = match manifest {
        Some(path) => {
            let manifest = load_manifest(path)?;
            score_entries(&loaded, &manifest, &select(&manifest, split))?
        }
        None => {
            if inputs.is_empty() {
                return Err(ConfigError("give --manifest or at least one WAV file".into()).into());
            }
            if loaded.model.visual.is_some() {
                bail!(wsail::Error::InvalidConfig("visual checkpoints need a manifest".into()));
            }
            let kinds = loaded.meta.kinds()?;
            let nmf = loaded.meta.nmf();
            inputs
                .par_iter()
                .map(|p| {
                    let id = p.display().to_string();
                    let features = audio_features(&read_wav(p)?, &id, kinds, &nmf)?;
                    Ok(Scored { id, truth: None, phi: loaded.model.phi(&VideoInput::audio(features))? })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let recs = records(&scored);
    let text = to_json_lines(&recs)?;
    match out {
        Some(path) => {
            fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
            write_snapshot(cfg, &path.with_extension("config.ini"))?;
        }
        None => print!("{text}"),
    }
    let labelled: Vec<&FileRecord> = recs.iter().filter(|r| r.truth.is_some()).collect();
    if !labelled.is_empty() {
        let hits = labelled.iter().filter(|r| r.truth == Some(r.prediction)).count();
        eprintln!("accuracy {:.4} over {} labelled files", hits as f64 / labelled.len() as f64, labelled.len());
    }
    Ok(())
}

fn test_entries(manifest: &Manifest) -> Result<Vec<&ManifestEntry>> {
    let entries: Vec<&ManifestEntry> = manifest.split(Split::Test).collect();
    if entries.is_empty() {
        bail!(wsail::Error::EmptyDataset);
    }
    Ok(entries)
}

fn truths(loaded: &Loaded, entries: &[&ManifestEntry]) -> Result<Vec<usize>> {
    entries
        .iter()
        .map(|e| {
            loaded
                .meta
                .classes
                .iter()
                .position(|c| *c == e.labels[0])
                .ok_or_else(|| wsail::Error::UnknownLabel(e.labels[0].clone()).into())
        })
        .collect()
}

fn confusion_text(name: &str, report: &EvalReport, classes: &[String]) -> String {
    let mut out = format!("\n{name}: confusion (rows truth, columns prediction)\n");
    for (c, row) in report.confusion.rows().into_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>4}")).collect();
        let _ = writeln!(out, "{:<12}{}  {:>6.1}%", classes[c], cells.join(""), 100.0 * report.per_class[c]);
    }
    out
}

/// Summed scores, truths and class names across checkpoints.
type Ensemble = (Vec<Array1<f64>>, Vec<usize>, Vec<String>);

fn eval_cls(cfg: &RunConfig, checkpoints: &[PathBuf], manifest_path: &Path, out: &Path) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let entries = test_entries(&manifest)?;
    create_dir(out)?;
    let mut rows = Vec::new();
    let mut details = String::new();
    let mut ensemble: Option<Ensemble> = None;
    for (i, path) in checkpoints.iter().enumerate() {
        let loaded = load(path)?;
        let truth = truths(&loaded, &entries)?;
        let scored = score_entries(&loaded, &manifest, &entries)?;
        let preds: Vec<usize> = scored.iter().map(|s| predict(s.phi.view())).collect();
        let report = EvalReport::from_predictions(&preds, &truth, loaded.meta.classes.len())?;
        let name = format!("({}) {}", (b'a' + i as u8) as char, loaded.meta.system_name());
        details.push_str(&confusion_text(&name, &report, &loaded.meta.classes));
        rows.push((name, report.accuracy));
        fs::write(out.join(format!("records-{i}.jsonl")), to_json_lines(&records(&scored))?)?;
        ensemble = Some(match ensemble {
            None => (scored.iter().map(|s| s.phi.clone()).collect(), truth, loaded.meta.classes.clone()),
            Some((sum, t, classes)) => {
                if classes != loaded.meta.classes {
                    bail!(wsail::Error::DimMismatch("checkpoints use different class vocabularies".into()));
                }
                (sum.into_iter().zip(&scored).map(|(a, s)| a + &s.phi).collect(), t, classes)
            }
        });
    }
    if checkpoints.len() > 1 {
        let (sum, truth, classes) = ensemble.expect("at least one checkpoint");
        let preds: Vec<usize> = sum.iter().map(|phi| predict(phi.view())).collect();
        let report = EvalReport::from_predictions(&preds, &truth, classes.len())?;
        let letters: Vec<String> = (0..checkpoints.len()).map(|i| format!("({})", (b'a' + i as u8) as char)).collect();
        let name = format!("ensemble {}", letters.join(" + "));
        details.push_str(&confusion_text(&name, &report, &classes));
        rows.push((name, report.accuracy));
    }
    let report = classification_table(&rows) + &details;
    fs::write(out.join("report.txt"), &report)?;
    write_snapshot(cfg, &out.join("config.ini"))?;
    print!("{report}");
    Ok(())
}

fn noise_corpus(manifest: &Manifest, dir: Option<&Path>) -> Result<Vec<Waveform>> {
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| manifest.root.join(NOISE_DIR));
    list_noise_corpus(&dir)?.iter().map(|p| Ok(read_wav(p)?)).collect()
}

fn eval_noisy(
    cfg: &RunConfig,
    checkpoints: &[PathBuf],
    manifest_path: &Path,
    noise_dir: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let entries = test_entries(&manifest)?;
    let noise = noise_corpus(&manifest, noise_dir)?;
    create_dir(out)?;
    let mut systems = Vec::new();
    for (i, path) in checkpoints.iter().enumerate() {
        let loaded = load(path)?;
        let kinds = loaded.meta.kinds()?;
        let nmf = loaded.meta.nmf();
        let visual = loaded.model.visual.is_some();
        let clips = entries
            .iter()
            .zip(truths(&loaded, &entries)?)
            .map(|(e, t)| Ok((read_wav(&manifest.resolve(&e.audio))?, t)))
            .collect::<Result<Vec<_>>>()?;
        let levels = evaluate_noisy(&clips, &noise, &cfg.eval.snr_levels, cfg.eval.noise_seed, |j, w| {
            let input = VideoInput {
                audio: Some(audio_features(w, &entries[j].id, kinds, &nmf)?),
                visual: if visual { Some(visual_features(&manifest, entries[j])?) } else { None },
            };
            loaded.model.phi(&input)
        })?;
        let mut recs = Vec::new();
        for level in &levels {
            for (j, e) in entries.iter().enumerate() {
                recs.push(FileRecord {
                    id: e.id.clone(),
                    truth: Some(clips[j].1),
                    prediction: level.predictions[j],
                    scores: level.scores[j].clone(),
                    snr_db: Some(level.snr_db),
                    sdr: None,
                });
            }
        }
        fs::write(out.join(format!("records-{i}.jsonl")), to_json_lines(&recs)?)?;
        systems.push((format!("({}) {}", (b'a' + i as u8) as char, loaded.meta.system_name()), levels));
    }
    let report = noise_table(&systems);
    fs::write(out.join("report.txt"), &report)?;
    write_snapshot(cfg, &out.join("config.ini"))?;
    print!("{report}");
    Ok(())
}

#[derive(Serialize)]
struct SdrRecord {
    id: String,
    truth: usize,
    prediction: usize,
    scores: Vec<f64>,
    mixture_sdr: f64,
    /// Keyed by `<mask>/<label mode>`.
    sdr: std::collections::BTreeMap<String, f64>,
}

const SDR_MODES: [MaskMode; 3] = [MaskMode::Soft, MaskMode::Threshold(0.1), MaskMode::Threshold(0.2)];

fn eval_sdr(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest_path: &Path,
    noise_dir: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let loaded = load(checkpoint)?;
    let kinds = loaded.meta.kinds()?;
    if !kinds.uses_ncp() {
        bail!(wsail::Error::NoNcpRows);
    }
    if loaded.model.visual.is_some() {
        bail!(wsail::Error::InvalidConfig("SDR evaluation expects an audio-only checkpoint".into()));
    }
    let nmf = loaded.meta.nmf();
    let manifest = load_manifest(manifest_path)?;
    let entries: Vec<&ManifestEntry> = test_entries(&manifest)?.into_iter().filter(|e| e.clean.is_some()).collect();
    if entries.is_empty() {
        bail!(wsail::Error::EmptyDataset);
    }
    let truth = truths(&loaded, &entries)?;
    let noise = noise_corpus(&manifest, noise_dir)?;
    let assignment = noise_assignment(cfg.eval.noise_seed, entries.len(), noise.len())?;
    let snr_db = cfg.eval.sdr_snr;

    let recs = entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let clean = read_wav(&manifest.resolve(e.clean.as_ref().expect("filtered")))?;
            let mixture = corrupt(&clean, &noise[assignment[i]], snr_db)?;
            let scored = score_mixture(&mixture, &loaded.model, kinds, &nmf, None)
                .with_context(|| format!("scoring `{}`", e.id))?;
            let mut sdrs = std::collections::BTreeMap::new();
            for mode in SDR_MODES {
                for (label, name) in
                    [(LabelMode::Known(truth[i]), "label-known"), (LabelMode::Unknown, "label-unknown")]
                {
                    let (_, result) = scored.enhance(label, mode)?;
                    sdrs.insert(format!("{}/{name}", mode.label()), sdr(&result.source, &clean)?);
                }
            }
            Ok(SdrRecord {
                id: e.id.clone(),
                truth: truth[i],
                prediction: scored.predicted,
                scores: scored.phi.to_vec(),
                mixture_sdr: sdr(&mixture, &clean)?,
                sdr: sdrs,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let stats = |key: &str| SdrStats::from_values(recs.iter().map(|r| r.sdr[key]).collect());
    let rows = SDR_MODES
        .iter()
        .map(|m| {
            Ok(SdrRow {
                mode: m.label(),
                label_known: stats(&format!("{}/label-known", m.label()))?,
                label_unknown: stats(&format!("{}/label-unknown", m.label()))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mixture = SdrStats::from_values(recs.iter().map(|r| r.mixture_sdr).collect())?;
    let hits = recs.iter().filter(|r| r.truth == r.prediction).count();
    let mut report = format!("{} mixtures at {}\n", recs.len(), snr_label(snr_db));
    report += &sdr_table(&mixture, &rows);
    let _ = writeln!(report, "classification accuracy on mixtures: {:.1}%", 100.0 * hits as f64 / recs.len() as f64);
    create_dir(out)?;
    fs::write(out.join("records.jsonl"), to_json_lines(&recs)?)?;
    fs::write(out.join("report.txt"), &report)?;
    write_snapshot(cfg, &out.join("config.ini"))?;
    print!("{report}");
    Ok(())
}

fn enhance(cfg: &RunConfig, checkpoint: &Path, input: &Path, out: &Path, label: Option<&str>) -> Result<()> {
    let loaded = load(checkpoint)?;
    let kinds = loaded.meta.kinds()?;
    if loaded.model.visual.is_some() {
        bail!(wsail::Error::InvalidConfig("enhancement expects an audio-only checkpoint".into()));
    }
    let label_mode = match (cfg.enhance.mode, label) {
        (ModeSetting::LabelKnown, Some(name)) => LabelMode::Known(
            loaded
                .meta
                .classes
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| wsail::Error::UnknownLabel(name.to_string()))?,
        ),
        (ModeSetting::LabelKnown, None) => return Err(ConfigError("label-known mode needs --label".into()).into()),
        (ModeSetting::LabelUnknown, _) => LabelMode::Unknown,
    };
    let mask = MaskMode::from_tau(cfg.enhance.tau)?;
    let mixture = read_wav(input)?;
    let scored = score_mixture(&mixture, &loaded.model, kinds, &loaded.meta.nmf(), None)?;
    let (scores, result) = scored.enhance(label_mode, mask)?;
    create_dir(out)?;
    write_wav(&out.join("source.wav"), &result.source)?;
    write_wav(&out.join("noise.wav"), &result.noise)?;
    let class = scored.class_for(label_mode);
    let mut report = format!(
        "class {} ({}), mask {}\ncomponent\talpha\talpha_prime\tweight\n",
        loaded.meta.classes[class],
        cfg.enhance.mode.name(),
        mask.label()
    );
    for k in 0..scores.num_components() {
        let _ = writeln!(report, "{k}\t{:.6}\t{:.6}\t{:.6}", scores.alpha[k], scores.alpha_prime[k], result.weights[k]);
    }
    fs::write(out.join("alpha.txt"), &report)?;
    write_snapshot(cfg, &out.join("config.ini"))?;
    print!("{report}");
    Ok(())
}

fn nmf_inspect(cfg: &RunConfig, input: &Path) -> Result<()> {
    let w = read_wav(input)?;
    let mag = stft(&w)?.magnitude();
    let (model, trace) = nmf_decompose_traced(mag.values.view(), &cfg.nmf)?;
    let tracks = component_magnitudes(&model, &mag)?;
    let total = model.reconstruction().sum().max(f64::MIN_POSITIVE);
    println!(
        "{} bins x {} frames, K = {}, KL {:.6e} -> {:.6e}",
        mag.values.nrows(),
        mag.values.ncols(),
        model.num_components(),
        trace[0],
        trace[trace.len() - 1]
    );
    println!("component\tenergy_share\tkl_track");
    for (k, track) in tracks.iter().enumerate() {
        let part = model.component(k);
        let kl = kl_divergence(track.values.view(), part.view())?;
        println!("{k}\t{:.6}\t{:.6e}", part.sum() / total, kl);
    }
    Ok(())
}
