//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wsail::data::{list_noise_corpus, load_manifest, read_wav, synth_dataset, Manifest, Split, SynthConfig, NOISE_DIR};
use wsail::enhance::{reconstruct, score_mixture, ComponentScores, LabelMode, MaskMode};
use wsail::eval::{
    classification_table, corrupt, median, noise_assignment, sdr, sdr_samples, to_json_lines, FileRecord,
};
use wsail::model::{
    hinge_loss, predict, save_checkpoint, train, Checkpoint, Example, LabelVector, Model, ModelDims, TrainConfig,
    VideoInput,
};
use wsail::nmf::{component_tracks, kl_divergence, nmf_decompose, nmf_decompose_traced, NmfConfig};
use wsail::proposals::{analyze, Origin, ProposalKinds};
use wsail::signal::{istft, stft, Waveform};

const SEEDS: u64 = 5;

#[derive(Default)]
struct Verdicts {
    failed: Vec<u32>,
}

impl Verdicts {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        println!("{} {id}. {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id);
        }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn random_positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(0.01..1.0))
}

fn nmf_monotonicity(v: &mut Verdicts) {
    let start = Instant::now();
    let mut worst_rise = f64::NEG_INFINITY;
    let mut monotone = true;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_positive(&mut rng, 40, 60);
        let cfg = NmfConfig { components: 5, iterations: 200, seed, ..NmfConfig::default() };
        let (_, trace) = nmf_decompose_traced(q.view(), &cfg).expect("nmf");
        for pair in trace.windows(2) {
            worst_rise = worst_rise.max(pair[1] - pair[0]);
            monotone &= pair[1] <= pair[0] + 1e-9;
        }
    }
    let mut worst_rank_one = 0.0f64;
    let mut worst_overcomplete = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let col = Array1::from_shape_simple_fn(40, || rng.gen_range(0.01..1.0));
        let row = Array1::from_shape_simple_fn(60, || rng.gen_range(0.01..1.0));
        let q = Array2::from_shape_fn((40, 60), |(i, j)| col[i] * row[j]);
        let rank_one = |components, iterations| {
            let cfg = NmfConfig { components, iterations, seed, ..NmfConfig::default() };
            let model = nmf_decompose(q.view(), &cfg).expect("nmf");
            kl_divergence(q.view(), model.reconstruction().view()).expect("kl") / q.sum()
        };
        worst_rank_one = worst_rank_one.max(rank_one(1, 500));
        worst_overcomplete = worst_overcomplete.max(rank_one(5, 200));
    }
    let elapsed = start.elapsed();
    let pass = monotone && worst_rank_one < 1e-6 && elapsed < Duration::from_secs(10);
    v.record(
        1,
        "NMF monotonicity",
        pass,
        format!(
            "largest KL increase {worst_rise:.3e} (limit 1e-9), worst rank-1 KL/sum with K=1, 500 iterations {worst_rank_one:.3e} (limit 1e-6; K=5, 200 iterations reaches {worst_overcomplete:.1e}), {}",
            secs(elapsed)
        ),
    );
}

fn relative_error(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    diff / norm.max(f64::MIN_POSITIVE)
}

fn mask_conservation(v: &mut Verdicts) {
    let mut worst_tracks = 0.0f64;
    let mut worst_split = 0.0f64;
    let mut worst_wave = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.gen_range(4000..12000);
        let mixture = Waveform::from_samples((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap();
        let x = stft(&mixture).unwrap();
        let k = rng.gen_range(2..9);
        let cfg = NmfConfig { components: k, iterations: 30, seed, ..NmfConfig::default() };
        let model = nmf_decompose(x.magnitude().values.view(), &cfg).unwrap();

        let tracks = component_tracks(&model, &x).unwrap();
        let mut total = Array2::<Complex64>::zeros(x.values.dim());
        for t in &tracks {
            total += &t.values;
        }
        worst_tracks = worst_tracks.max(relative_error(&total, &x.values));

        let beta = Array2::from_shape_simple_fn((k, 3), || rng.gen_range(-1.0..1.0));
        let scores = ComponentScores::from_beta(beta).unwrap();
        let reference = istft(&x).unwrap();
        for mode in [MaskMode::Soft, MaskMode::Threshold(0.1), MaskMode::Threshold(0.2)] {
            let r = reconstruct(&model, &x, &scores, mode).unwrap();
            let sum = &r.source_spec.values + &r.noise_spec.values;
            worst_split = worst_split.max(relative_error(&sum, &x.values));
            let diff: f64 = r
                .source
                .samples()
                .iter()
                .zip(r.noise.samples())
                .zip(reference.samples())
                .map(|((s, n), x)| (s + n - x).powi(2))
                .sum();
            let norm: f64 = reference.samples().iter().map(|x| x * x).sum();
            worst_wave = worst_wave.max((diff / norm).sqrt());
        }
    }
    let pass = worst_tracks < 1e-6 && worst_split < 1e-6 && worst_wave < 1e-6;
    v.record(
        2,
        "Mask conservation",
        pass,
        format!(
            "worst relative error: tracks {worst_tracks:.2e}, S+N {worst_split:.2e}, waveforms {worst_wave:.2e} (limit 1e-6; soft, tau 0.1, tau 0.2)"
        ),
    );
}

fn tiny_example(rng: &mut ChaCha8Rng, id: usize, classes: usize) -> Example {
    let proposals = rng.gen_range(2..6);
    let regions = rng.gen_range(1..4);
    let mut labels = vec![-1.0; classes];
    labels[rng.gen_range(0..classes)] = 1.0;
    if rng.gen_bool(0.3) {
        labels[rng.gen_range(0..classes)] = 1.0;
    }
    Example {
        id: format!("tiny-{id}"),
        input: VideoInput {
            audio: Some(Array2::from_shape_simple_fn((proposals, 7), || rng.gen_range(-1.0..1.0))),
            visual: Some(Array2::from_shape_simple_fn((regions, 5), || rng.gen_range(-1.0..1.0))),
        },
        labels: LabelVector::new(labels).unwrap(),
    }
}

fn batch_loss(model: &Model, batch: &[&Example]) -> f64 {
    let phis: Vec<Array1<f64>> = batch.iter().map(|e| model.phi(&e.input).unwrap()).collect();
    let ys: Vec<LabelVector> = batch.iter().map(|e| e.labels.clone()).collect();
    hinge_loss(&phis, &ys).unwrap()
}

fn gradient_check(v: &mut Verdicts) {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let step = 1e-5;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let classes = rng.gen_range(2..5);
        let dims = ModelDims { classes, audio: Some((7, 6, 4)), visual: Some((5, 6, 4)) };
        let model = Model::new(dims, seed).unwrap();
        let data: Vec<Example> = (0..3).map(|i| tiny_example(&mut rng, i, classes)).collect();
        let batch: Vec<&Example> = data.iter().collect();
        let (_, grads) = model.loss_and_gradients(&batch).unwrap();
        for (ti, (name, analytic, _)) in grads.tensors().into_iter().enumerate() {
            let numeric: Vec<f64> = (0..analytic.len())
                .map(|j| {
                    let mut plus = model.clone();
                    plus.tensors_mut()[ti][j] += step;
                    let mut minus = model.clone();
                    minus.tensors_mut()[ti][j] -= step;
                    (batch_loss(&plus, &batch) - batch_loss(&minus, &batch)) / (2.0 * step)
                })
                .collect();
            let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
            let scale = analytic
                .iter()
                .map(|a| a * a)
                .sum::<f64>()
                .sqrt()
                .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
            // A tensor whose true gradient vanishes is checked in absolute terms.
            let err = if scale < 1e-8 { diff } else { diff / scale };
            if err > worst {
                worst = err;
                worst_at = format!("model {seed} {name}");
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-4 && elapsed < Duration::from_secs(30);
    v.record(
        3,
        "Gradient correctness",
        pass,
        format!("20 models, worst relative error {worst:.2e} at {worst_at} (limit 1e-4), {}", secs(elapsed)),
    );
}

fn proposal_geometry(v: &mut Verdicts) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = Waveform::from_samples((0..160_000).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap();
    let analysis = analyze(&w, "ten-seconds", ProposalKinds::Both, &NmfConfig::default()).unwrap();
    let origins = analysis.bag.origins();
    let tsp = origins.iter().filter(|o| matches!(o, Origin::Tsp(_))).count();
    let ncp = origins.iter().filter(|o| matches!(o, Origin::Ncp { .. })).count();
    v.record(
        4,
        "Proposal geometry",
        tsp == 20 && ncp == 200,
        format!("10 s input: {tsp} TSPs, {ncp} NCPs with K = 20"),
    );
}

fn orthogonal_noise(clean: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..clean.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dot: f64 = raw.iter().zip(clean).map(|(a, b)| a * b).sum();
    let energy: f64 = clean.iter().map(|c| c * c).sum();
    raw.iter().zip(clean).map(|(r, c)| r - dot / energy * c).collect()
}

fn metric_sanity(v: &mut Verdicts) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let clean: Vec<f64> = (0..16_000).map(|i| (i as f64 * 0.05).sin() + 0.3 * rng.gen_range(-1.0..1.0)).collect();
    let clean_energy: f64 = clean.iter().map(|c| c * c).sum();
    let mut worst_level = 0.0f64;
    for level in [0.0, -10.0, -20.0] {
        let noise = orthogonal_noise(&clean, &mut rng);
        let noise_energy: f64 = noise.iter().map(|n| n * n).sum();
        let gain = (clean_energy / (noise_energy * 10f64.powf(level / 10.0))).sqrt();
        let mixture: Vec<f64> = clean.iter().zip(&noise).map(|(c, n)| c + gain * n).collect();
        worst_level = worst_level.max((sdr_samples(&mixture, &clean).unwrap() - level).abs());
    }
    let estimate: Vec<f64> = clean.iter().map(|c| c + 0.2 * rng.gen_range(-1.0..1.0)).collect();
    let base = sdr_samples(&estimate, &clean).unwrap();
    let mut worst_scale = 0.0f64;
    for factor in [1e-3, 0.37, 2.0, 1e3] {
        let scaled: Vec<f64> = estimate.iter().map(|e| e * factor).collect();
        worst_scale = worst_scale.max((sdr_samples(&scaled, &clean).unwrap() - base).abs());
    }
    let pass = worst_level <= 0.1 && worst_scale <= 1e-9;
    v.record(
        8,
        "Metric sanity",
        pass,
        format!("orthogonal noise at 0/-10/-20 dB off by at most {worst_level:.2e} dB, scale change moves SDR by {worst_scale:.2e} dB"),
    );
}

struct Corpus {
    manifest: Manifest,
    train: Vec<(String, Waveform, usize)>,
    test: Vec<(String, Waveform, usize)>,
    clean_test: Vec<Waveform>,
    noise: Vec<Waveform>,
}

fn load_corpus(dir: &Path) -> Corpus {
    let manifest = load_manifest(&dir.join("manifest.jsonl")).expect("manifest");
    let clips = |split| -> Vec<(String, Waveform, usize)> {
        manifest
            .split(split)
            .map(|e| (e.id.clone(), read_wav(&manifest.resolve(&e.audio)).unwrap(), e.primary_label()))
            .collect()
    };
    let train = clips(Split::Train);
    let test = clips(Split::Test);
    let clean_test = manifest
        .split(Split::Test)
        .map(|e| read_wav(&manifest.resolve(e.clean.as_ref().expect("clean copy"))).unwrap())
        .collect();
    let noise = list_noise_corpus(&dir.join(NOISE_DIR)).unwrap().iter().map(|p| read_wav(p).unwrap()).collect();
    Corpus { manifest, train, test, clean_test, noise }
}

fn featurize(clips: &[(String, Waveform, usize)], kinds: ProposalKinds, classes: usize) -> Vec<Example> {
    clips
        .iter()
        .map(|(id, w, class)| Example {
            id: id.clone(),
            input: VideoInput::audio(analyze(w, id, kinds, &NmfConfig::default()).unwrap().bag.feature_matrix()),
            labels: LabelVector::from_classes(&[*class], classes).unwrap(),
        })
        .collect()
}

fn test_accuracy(model: &Model, test: &[Example]) -> (f64, Vec<FileRecord>) {
    let records: Vec<FileRecord> = test
        .iter()
        .map(|e| {
            let phi = model.phi(&e.input).unwrap();
            FileRecord {
                id: e.id.clone(),
                truth: e.labels.values().iter().position(|&y| y > 0.0),
                prediction: predict(phi.view()),
                scores: phi.to_vec(),
                snr_db: None,
                sdr: None,
            }
        })
        .collect();
    let hits = records.iter().filter(|r| r.truth == Some(r.prediction)).count();
    (hits as f64 / records.len() as f64, records)
}

fn checkpoint_bytes(model: &Model, dir: &Path, name: &str) -> Vec<u8> {
    let path = dir.join(name);
    let ckpt = Checkpoint { model: model.clone(), adam: None, epoch: 10, metadata: "tsp".into() };
    save_checkpoint(&path, &ckpt).unwrap();
    fs::read(path).unwrap()
}

fn fmt_accs(accs: &[f64]) -> String {
    accs.iter().map(|a| format!("{:.0}", 100.0 * a)).collect::<Vec<_>>().join("/")
}

struct TspOutcome {
    models: Vec<Model>,
    report: String,
    checkpoint: Vec<u8>,
}

fn tsp_classification(v: &mut Verdicts, corpus: &Corpus, scratch: &Path) -> TspOutcome {
    let start = Instant::now();
    let classes = corpus.manifest.num_classes();
    let train_set = featurize(&corpus.train, ProposalKinds::Tsp, classes);
    let test_set = featurize(&corpus.test, ProposalKinds::Tsp, classes);
    let mut models = Vec::new();
    let mut accs = Vec::new();
    let mut report = String::new();
    for seed in 0..SEEDS {
        let model = Model::new(ModelDims::audio_only(classes), seed).unwrap();
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let model = train(model, &train_set, &cfg).unwrap().model;
        let (acc, records) = test_accuracy(&model, &test_set);
        if seed == 0 {
            report = to_json_lines(&records).unwrap();
        }
        accs.push(acc);
        models.push(model);
    }
    let rows: Vec<(String, f64)> = accs.iter().enumerate().map(|(s, a)| (format!("A (TSP) seed {s}"), *a)).collect();
    report = classification_table(&rows) + &report;
    let elapsed = start.elapsed();
    let med = median(&accs).unwrap();
    let pass = med >= 0.9 && elapsed < Duration::from_secs(600);
    v.record(
        5,
        "End-to-end classification",
        pass,
        format!(
            "A (TSP) test accuracy per seed {} %, median {:.1}% (need >= 90%), {}",
            fmt_accs(&accs),
            100.0 * med,
            secs(elapsed)
        ),
    );
    let checkpoint = checkpoint_bytes(&models[0], scratch, "tsp-0.ckpt");
    TspOutcome { models, report, checkpoint }
}

const LEVELS: [f64; 3] = [f64::INFINITY, 0.0, -20.0];
const NOISE_SEED: u64 = 0;

fn noise_robustness(v: &mut Verdicts, corpus: &Corpus, tsp_models: &[Model]) -> Vec<Model> {
    let start = Instant::now();
    let classes = corpus.manifest.num_classes();
    let train_set = featurize(&corpus.train, ProposalKinds::Both, classes);
    let both_models: Vec<Model> = (0..SEEDS)
        .map(|seed| {
            let model = Model::new(ModelDims::audio_only(classes), seed).unwrap();
            train(model, &train_set, &TrainConfig { seed, ..TrainConfig::default() }).unwrap().model
        })
        .collect();
    drop(train_set);

    let assignment = noise_assignment(NOISE_SEED, corpus.test.len(), corpus.noise.len()).unwrap();
    // hits[system][level][seed]
    let mut hits = vec![vec![vec![0usize; SEEDS as usize]; LEVELS.len()]; 2];
    for (j, (id, clip, truth)) in corpus.test.iter().enumerate() {
        for (li, &level) in LEVELS.iter().enumerate() {
            let w = corrupt(clip, &corpus.noise[assignment[j]], level).unwrap();
            let inputs = [
                VideoInput::audio(
                    analyze(&w, id, ProposalKinds::Tsp, &NmfConfig::default()).unwrap().bag.feature_matrix(),
                ),
                VideoInput::audio(
                    analyze(&w, id, ProposalKinds::Both, &NmfConfig::default()).unwrap().bag.feature_matrix(),
                ),
            ];
            for (system, models) in [tsp_models, &both_models[..]].into_iter().enumerate() {
                for (s, model) in models.iter().enumerate() {
                    if model.predict(&inputs[system]).unwrap() == *truth {
                        hits[system][li][s] += 1;
                    }
                }
            }
        }
    }
    let n = corpus.test.len() as f64;
    let medians: Vec<Vec<f64>> = hits
        .iter()
        .map(|levels| {
            levels
                .iter()
                .map(|seeds| median(&seeds.iter().map(|&h| h as f64 / n).collect::<Vec<_>>()).unwrap())
                .collect()
        })
        .collect();
    let (tsp, both) = (&medians[0], &medians[1]);
    let ordered = |m: &Vec<f64>| m[2] <= m[1] && m[1] <= m[0];
    let pass = both[1] >= tsp[1] && ordered(tsp) && ordered(both);
    let show =
        |m: &Vec<f64>| format!("clean {:.0} / 0 dB {:.0} / -20 dB {:.0}", 100.0 * m[0], 100.0 * m[1], 100.0 * m[2]);
    v.record(
        6,
        "Noise-robustness direction",
        pass,
        format!("median accuracy %: A (TSP) {}; A (NCP, TSP) {}; {}", show(tsp), show(both), secs(start.elapsed())),
    );
    both_models
}

struct SdrOutcome {
    first: Vec<BTreeMap<String, f64>>,
}

fn sdr_of_file(corpus: &Corpus, model: &Model, i: usize, assignment: &[usize]) -> (BTreeMap<String, f64>, bool) {
    let clean = &corpus.clean_test[i];
    let truth = corpus.test[i].2;
    let mixture = corrupt(clean, &corpus.noise[assignment[i]], 0.0).unwrap();
    let scored = score_mixture(&mixture, model, ProposalKinds::Both, &NmfConfig::default(), None).unwrap();
    let mut out = BTreeMap::new();
    out.insert("mixture".to_string(), sdr(&mixture, clean).unwrap());
    for (name, label) in [("known", LabelMode::Known(truth)), ("unknown", LabelMode::Unknown)] {
        let (_, result) = scored.enhance(label, MaskMode::Soft).unwrap();
        out.insert(name.to_string(), sdr(&result.source, clean).unwrap());
    }
    (out, scored.predicted == truth)
}

fn enhancement_direction(v: &mut Verdicts, corpus: &Corpus, model: &Model) -> SdrOutcome {
    let start = Instant::now();
    let assignment = noise_assignment(NOISE_SEED, corpus.test.len(), corpus.noise.len()).unwrap();
    let mut rows = Vec::new();
    let mut correct = 0;
    let mut forced = true;
    for i in 0..corpus.test.len() {
        let (row, right) = sdr_of_file(corpus, model, i, &assignment);
        if right {
            correct += 1;
            forced &= row["known"] == row["unknown"];
        }
        rows.push(row);
    }
    let med = |key: &str| median(&rows.iter().map(|r| r[key]).collect::<Vec<_>>()).unwrap();
    let (mixture, known, unknown) = (med("mixture"), med("known"), med("unknown"));
    let all_correct = correct == rows.len();
    let modes_agree = !all_correct || (known - unknown).abs() <= 0.5;
    let pass = known - mixture >= 3.0 && modes_agree && forced;
    v.record(
        7,
        "Enhancement direction",
        pass,
        format!(
            "{} mixtures at 0 dB, median SDR mixture {mixture:.2} dB, soft source {known:.2} dB label-known / {unknown:.2} dB label-unknown (gain {:.2} dB, need >= 3), accuracy {correct}/{}, {}",
            rows.len(),
            known - mixture,
            rows.len(),
            secs(start.elapsed())
        ),
    );
    SdrOutcome { first: rows }
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism(
    v: &mut Verdicts,
    corpus_dir: &Path,
    scratch: &Path,
    corpus: &Corpus,
    tsp: &TspOutcome,
    both_seed0: &Model,
    sdr: &SdrOutcome,
) {
    let start = Instant::now();
    let again = scratch.join("corpus-again");
    synth_dataset(&SynthConfig::default(), &again).unwrap();
    let (a, b) = (tree_bytes(corpus_dir), tree_bytes(&again));
    let corpora = a == b;

    let classes = corpus.manifest.num_classes();
    let train_set = featurize(&corpus.train, ProposalKinds::Tsp, classes);
    let test_set = featurize(&corpus.test, ProposalKinds::Tsp, classes);
    let model = train(Model::new(ModelDims::audio_only(classes), 0).unwrap(), &train_set, &TrainConfig::default())
        .unwrap()
        .model;
    let checkpoints = checkpoint_bytes(&model, scratch, "tsp-0-again.ckpt") == tsp.checkpoint;

    let mut rows = Vec::new();
    let mut accs = Vec::new();
    let mut records = String::new();
    for (seed, m) in tsp.models.iter().enumerate() {
        let m = if seed == 0 { &model } else { m };
        let (acc, recs) = test_accuracy(m, &test_set);
        if seed == 0 {
            records = to_json_lines(&recs).unwrap();
        }
        accs.push(acc);
        rows.push((format!("A (TSP) seed {seed}"), acc));
    }
    let classification = classification_table(&rows) + &records == tsp.report;
    let assignment = noise_assignment(NOISE_SEED, corpus.test.len(), corpus.noise.len()).unwrap();
    let sdr_rows = (0..5).all(|i| sdr_of_file(corpus, both_seed0, i, &assignment).0 == sdr.first[i]);

    let pass = corpora && checkpoints && classification && sdr_rows;
    v.record(
        9,
        "Determinism",
        pass,
        format!(
            "corpus ({} files) identical: {corpora}, checkpoint identical: {checkpoints}, classification report identical: {classification}, SDR records identical: {sdr_rows}, {}",
            a.len(),
            secs(start.elapsed())
        ),
    );
}

fn main() -> ExitCode {
    let total = Instant::now();
    let mut v = Verdicts::default();
    nmf_monotonicity(&mut v);
    mask_conservation(&mut v);
    gradient_check(&mut v);
    proposal_geometry(&mut v);
    metric_sanity(&mut v);

    let scratch = tempfile::tempdir().expect("scratch dir");
    let corpus_dir = scratch.path().join("corpus");
    synth_dataset(&SynthConfig::default(), &corpus_dir).expect("default corpus");
    let corpus = load_corpus(&corpus_dir);

    let tsp = tsp_classification(&mut v, &corpus, scratch.path());
    let both = noise_robustness(&mut v, &corpus, &tsp.models);
    let sdr = enhancement_direction(&mut v, &corpus, &both[0]);
    determinism(&mut v, &corpus_dir, scratch.path(), &corpus, &tsp, &both[0], &sdr);

    println!("acceptance finished in {}", secs(total.elapsed()));
    if v.failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {:?}", v.failed);
        ExitCode::FAILURE
    }
}
