use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use super::{CliError, Command, DatasetShard, LabelArg, RunConfig, ShardConfidence, SplitArg};
use crate::confidence::{ConfidenceSummary, JsdEstimate};
use crate::dcnet::{
    infer, standardise, train, Checkpoint, EmbeddingNetwork, InferenceConfig, TrainingConfig,
    TrainingExample,
};
use crate::ensemble::{calibrate_threshold, select, Candidate, Choice, EnsemblePolicy, PolicyKind};
use crate::experiment::{LabelSource, MixtureAnalysis};
use crate::gmm::EmTrace;
use crate::metrics::{confidence_sdr_report, label_quality, si_sir_sar, Correlation, LabelQualityReport, MixtureQuality};
use crate::mixgen::{make_corpus, make_mixture, ManifestRecord, MixtureRecord, Split};
use crate::pipeline::separate_spectrogram;
use crate::rng::{derive_seed, stream_id};
use crate::separation::apply_masks;
use crate::signal::{read_wav, stft, write_wav, WavFormat, Waveform};
use crate::spatial::log_mag_db;

const MANIFEST: &str = "manifest.jsonl";

pub(super) fn dispatch(command: &Command, config: &RunConfig, out: &Path) -> Result<(), CliError> {
    match command {
        Command::Mixgen { .. } => mixgen(config, out),
        Command::Separate { input: Some(input), .. } => separate_file(config, input, out),
        Command::Separate { corpus: Some(corpus), split, .. } => separate_corpus(config, corpus, *split, out),
        Command::Separate { .. } => Err(CliError::Usage("separate needs --input or --corpus".into())),
        Command::Pseudolabel { corpus, split, labels, .. } => pseudolabel(config, corpus, *split, *labels, out),
        Command::Train { shards, validation, .. } => train_cmd(config, shards, validation, out),
        Command::Infer { checkpoint, input: Some(input), sources, .. } => {
            infer_file(config, checkpoint, input, *sources, out)
        }
        Command::Infer { checkpoint, corpus: Some(corpus), split, sources, .. } => {
            infer_corpus(config, checkpoint, corpus, *split, *sources, out)
        }
        Command::Infer { .. } => Err(CliError::Usage("infer needs --input or --corpus".into())),
        Command::Evaluate { shards: Some(shards), .. } => evaluate_shards(shards, out),
        Command::Evaluate { estimates: Some(estimates), corpus: Some(corpus), split, .. } => {
            evaluate_estimates(corpus, *split, estimates, out)
        }
        Command::Evaluate { .. } => Err(CliError::Usage("evaluate needs --shards or --estimates with --corpus".into())),
        Command::Ensemble { corpus, checkpoint, split, .. } => ensemble(config, corpus, checkpoint, *split, out),
        Command::Report { corpus, split, .. } => report(config, corpus, *split, out),
    }
}

fn split_of(arg: SplitArg) -> Split {
    match arg {
        SplitArg::Train => Split::Train,
        SplitArg::Validation => Split::Validation,
        SplitArg::Test => Split::Test,
    }
}

/// Per-mixture seed for everything the CLI does to mixture `id`.
pub fn mixture_run_seed(seed: u64, id: &str) -> u64 {
    derive_seed(seed, stream_id(id))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_stems(dir: &Path, prefix: &str, stems: &[Waveform]) -> Result<(), CliError> {
    for (j, s) in stems.iter().enumerate() {
        write_wav(dir.join(format!("{prefix}{j}.wav")), s, WavFormat::Float32)?;
    }
    Ok(())
}

fn mixgen(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let entries = make_corpus(&config.corpus)?;
    for split in Split::ALL {
        fs::create_dir_all(out.join(split.name()))?;
    }
    let records = entries
        .par_iter()
        .map(|entry| -> Result<ManifestRecord, CliError> {
            let mix = make_mixture(&entry.spec)?;
            let record = ManifestRecord::for_entry(entry);
            write_wav(out.join(&record.mixture), &mix.mixture, WavFormat::Float32)?;
            for (path, stem) in record.stems.iter().zip(&mix.stems) {
                write_wav(out.join(path), stem, WavFormat::Float32)?;
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut w = BufWriter::new(File::create(out.join(MANIFEST))?);
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    fs::write(out.join("config.toml"), config.to_toml())?;
    Ok(())
}

fn read_manifest(corpus: &Path, split: Split) -> Result<Vec<ManifestRecord>, CliError> {
    let path = corpus.join(MANIFEST);
    let file = File::open(&path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), n + 1)))?;
        if rec.split == split {
            out.push(rec);
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{} has no {} mixtures", path.display(), split.name())));
    }
    Ok(out)
}

fn load_record(corpus: &Path, rec: &ManifestRecord) -> Result<MixtureRecord, CliError> {
    let stems = rec.stems.iter().map(|p| read_wav(corpus.join(p))).collect::<Result<Vec<_>, _>>()?;
    Ok(MixtureRecord { mixture: read_wav(corpus.join(&rec.mixture))?, stems, spec: rec.spec.clone() })
}

fn analyse(config: &RunConfig, corpus: &Path, rec: &ManifestRecord) -> Result<MixtureAnalysis, CliError> {
    let record = load_record(corpus, rec)?;
    if record.mixture.num_channels() != 2 {
        return Err(CliError::Data(format!("{}: mixture is not stereo", rec.id)));
    }
    Ok(MixtureAnalysis::new(&record, &config.stft, &config.spatial, config.alpha, mixture_run_seed(config.seed, &rec.id))?)
}

#[derive(Serialize)]
struct SeparateReport {
    confidence: ConfidenceSummary,
    jsd: JsdEstimate,
    trace: Option<EmTrace>,
}

fn separate_file(config: &RunConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    let w = read_wav(input)?;
    if w.num_channels() != 2 {
        return Err(CliError::Data(format!("{} has {} channels, expected 2", input.display(), w.num_channels())));
    }
    let x = stft(&w, &config.stft)?;
    let sep = separate_spectrogram(&x, &config.spatial, config.alpha, config.seed)?;
    let stems = apply_masks(&x.downmix(), &sep.masks, 0)?;
    write_stems(out, "stem", &stems)?;
    let report = SeparateReport { confidence: sep.confidence.summary(), jsd: sep.jsd, trace: sep.trace.clone() };
    write_json(&out.join("confidence.json"), &report)
}

#[derive(Serialize)]
struct ConfidenceRow {
    mixture_id: String,
    c_cluster: f64,
    c_jsd: f64,
    mean_confidence: f64,
}

fn separate_corpus(config: &RunConfig, corpus: &Path, split: SplitArg, out: &Path) -> Result<(), CliError> {
    let records = read_manifest(corpus, split_of(split))?;
    let rows = records
        .par_iter()
        .map(|rec| -> Result<ConfidenceRow, CliError> {
            let a = analyse(config, corpus, rec)?;
            let stems = apply_masks(&a.mono, &a.spatial.masks, 0)?;
            write_stems(out, &format!("{}.s", rec.id), &stems)?;
            let c = &a.spatial.confidence;
            Ok(ConfidenceRow {
                mixture_id: rec.id.clone(),
                c_cluster: c.c_cluster,
                c_jsd: c.c_jsd,
                mean_confidence: c.mean_confidence,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_csv(&out.join("confidence.csv"), &rows)
}

fn to_f32(a: &Array2<f64>) -> Vec<f32> {
    a.iter().map(|&v| v as f32).collect()
}

fn to_u8(a: &Array2<usize>) -> Result<Vec<u8>, CliError> {
    a.iter()
        .map(|&l| u8::try_from(l).map_err(|_| CliError::Data(format!("label {l} does not fit in a byte"))))
        .collect()
}

fn pseudolabel(config: &RunConfig, corpus: &Path, split: SplitArg, labels: LabelArg, out: &Path) -> Result<(), CliError> {
    let records = read_manifest(corpus, split_of(split))?;
    records.par_iter().try_for_each(|rec| -> Result<(), CliError> {
        let a = analyse(config, corpus, rec)?;
        let source = match labels {
            LabelArg::Spatial => LabelSource::Spatial { alpha: config.alpha },
            LabelArg::GroundTruth => LabelSource::GroundTruth,
        };
        let mono = a.mono.channel(0)?;
        let (confidence, c_post, combined) = match labels {
            LabelArg::Spatial => {
                let c = a.spatial.confidence_with_alpha(config.alpha)?;
                let stats = ShardConfidence { c_cluster: c.c_cluster, c_jsd: c.c_jsd, mean_confidence: c.mean_confidence };
                (Some(stats), Some(to_f32(&c.c_post)), Some(to_f32(&c.combined)))
            }
            LabelArg::GroundTruth => (None, None, None),
        };
        let shard = DatasetShard {
            mixture_id: rec.id.clone(),
            frames: mono.nrows(),
            freqs: mono.ncols(),
            alpha: matches!(labels, LabelArg::Spatial).then_some(config.alpha),
            label_source: match labels {
                LabelArg::Spatial => "spatial".into(),
                LabelArg::GroundTruth => "ground_truth".into(),
            },
            confidence,
            log_mag: mono.iter().map(|v| log_mag_db(v.norm()) as f32).collect(),
            labels: to_u8(a.labels(source))?,
            weights: to_f32(&a.weights(source)?),
            true_labels: Some(to_u8(&a.true_labels)?),
            magnitude_weights: Some(to_f32(&a.weights(LabelSource::GroundTruth)?)),
            c_post,
            combined,
        };
        shard.save(&out.join(format!("{}.shard", rec.id)))?;
        Ok(())
    })
}

fn shard_paths(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::Data(format!("cannot read {}: {e}", dir.display())))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "shard") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no .shard files in {}", dir.display())));
    }
    Ok(paths)
}

fn load_shards(dir: &Path) -> Result<Vec<DatasetShard>, CliError> {
    shard_paths(dir)?.par_iter().map(|p| Ok(DatasetShard::load(p)?)).collect()
}

fn training_example(shard: &DatasetShard) -> Result<TrainingExample, CliError> {
    let db = Array2::from_shape_vec((shard.frames, shard.freqs), shard.log_mag.iter().map(|&v| v as f64).collect())
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(TrainingExample::new(
        standardise(db),
        shard.labels.iter().map(|&l| l as usize).collect(),
        shard.weights.iter().map(|&w| w as f64).collect(),
    )?)
}

#[derive(Serialize)]
struct CurveRow {
    epoch: usize,
    train_loss: f64,
    val_loss: f64,
    lr: f64,
}

fn train_cmd(config: &RunConfig, shards: &Path, validation: &Path, out: &Path) -> Result<(), CliError> {
    let train_set = load_shards(shards)?.iter().map(training_example).collect::<Result<Vec<_>, _>>()?;
    let val_set = load_shards(validation)?.iter().map(training_example).collect::<Result<Vec<_>, _>>()?;
    let freqs = train_set[0].features.ncols();
    if train_set.iter().chain(&val_set).any(|e| e.features.ncols() != freqs) {
        return Err(CliError::Data("shards disagree on the number of frequency bins".into()));
    }
    let net = EmbeddingNetwork::new(config.network, freqs, derive_seed(config.seed, stream_id("network")))?;
    let tc = TrainingConfig { seed: derive_seed(config.seed, config.training.seed), ..config.training };
    let outcome = train(net, &train_set, &val_set, &tc)?;
    let ckpt = Checkpoint {
        network: outcome.network,
        seed: config.seed,
        best_epoch: outcome.best_epoch,
        curve: outcome.curve.clone(),
    };
    ckpt.save(out.join("model.ckpt"))?;
    let rows: Vec<CurveRow> = outcome
        .curve
        .iter()
        .map(|r| CurveRow { epoch: r.epoch, train_loss: r.train_loss, val_loss: r.val_loss, lr: r.lr })
        .collect();
    write_csv(&out.join("loss_curve.csv"), &rows)
}

fn inference_config(config: &RunConfig, seed: u64) -> InferenceConfig {
    InferenceConfig { seed: derive_seed(seed, config.inference.seed), ..config.inference }
}

fn infer_file(config: &RunConfig, checkpoint: &Path, input: &Path, sources: usize, out: &Path) -> Result<(), CliError> {
    let net = Checkpoint::load(checkpoint)?.network;
    let w = read_wav(input)?;
    let mono = if w.num_channels() == 1 { w } else { w.downmix() };
    let stems = infer(&net, &mono, &config.stft, sources, &inference_config(config, config.seed))?;
    write_stems(out, "stem", &stems)
}

fn infer_corpus(
    config: &RunConfig,
    checkpoint: &Path,
    corpus: &Path,
    split: SplitArg,
    sources: usize,
    out: &Path,
) -> Result<(), CliError> {
    let net = Checkpoint::load(checkpoint)?.network;
    let records = read_manifest(corpus, split_of(split))?;
    records.par_iter().try_for_each(|rec| -> Result<(), CliError> {
        let mono = read_wav(corpus.join(&rec.mixture))?.downmix();
        let seed = mixture_run_seed(config.seed, &rec.id);
        let stems = infer(&net, &mono, &config.stft, sources, &inference_config(config, seed))?;
        write_stems(out, &format!("{}.s", rec.id), &stems)
    })
}

#[derive(Serialize)]
struct ScoreRow {
    mixture_id: String,
    estimate: usize,
    reference: usize,
    si_sdr: f64,
    si_sir: f64,
    si_sar: f64,
}

fn evaluate_estimates(corpus: &Path, split: SplitArg, estimates: &Path, out: &Path) -> Result<(), CliError> {
    let records = read_manifest(corpus, split_of(split))?;
    let per_mixture = records
        .par_iter()
        .map(|rec| -> Result<Vec<ScoreRow>, CliError> {
            let refs: Vec<Waveform> =
                rec.stems.iter().map(|p| Ok(read_wav(corpus.join(p))?.downmix())).collect::<Result<_, CliError>>()?;
            let ests = (0..refs.len())
                .map(|j| Ok(read_wav(estimates.join(format!("{}.s{j}.wav", rec.id)))?.downmix()))
                .collect::<Result<Vec<_>, CliError>>()?;
            let e: Vec<&[f64]> = ests.iter().map(|w| w.channel(0)).collect();
            let r: Vec<&[f64]> = refs.iter().map(|w| w.channel(0)).collect();
            let s = si_sir_sar(&e, &r)?;
            Ok((0..e.len())
                .map(|i| ScoreRow {
                    mixture_id: rec.id.clone(),
                    estimate: i,
                    reference: s.permutation[i],
                    si_sdr: s.si_sdr[i],
                    si_sir: s.si_sir[i],
                    si_sar: s.si_sar[i],
                })
                .collect())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<ScoreRow> = per_mixture.into_iter().flatten().collect();
    write_csv(&out.join("scores.csv"), &rows)
}

fn evaluate_shards(dir: &Path, out: &Path) -> Result<(), CliError> {
    let shards = load_shards(dir)?;
    let alpha = shards[0].alpha;
    let mut per_mixture = Vec::with_capacity(shards.len());
    for s in &shards {
        if s.alpha != alpha {
            return Err(CliError::Data(format!("{}: shards mix confidence exponents", s.mixture_id)));
        }
        let (Some(truth), Some(mag)) = (&s.true_labels, &s.magnitude_weights) else {
            return Err(CliError::Data(format!("{}: shard lacks ground-truth labels or magnitude weights", s.mixture_id)));
        };
        let weights: Vec<f64> = s.weights.iter().map(|&w| w as f64).collect();
        let weight_sum: f64 = weights.iter().sum();
        let quality = if weight_sum > 0.0 {
            let t: Vec<usize> = truth.iter().map(|&l| l as usize).collect();
            let e: Vec<usize> = s.labels.iter().map(|&l| l as usize).collect();
            let k = |v: &[usize]| v.iter().max().map_or(2, |&m| (m + 1).max(2));
            label_quality(&t, &e, &weights, k(&t), k(&e))?
        } else {
            0.0
        };
        per_mixture.push(MixtureQuality {
            mixture_id: s.mixture_id.clone(),
            quality,
            weight_sum,
            magnitude_weight_sum: mag.iter().map(|&w| w as f64).sum(),
        });
    }
    let report = LabelQualityReport::from_mixtures(alpha.unwrap_or(0.0), per_mixture)?;
    write_json(&out.join("quality.json"), &report)
}

#[derive(Serialize)]
struct EnsembleRow {
    mixture_id: String,
    mean_confidence: f64,
    spatial_si_sdr: f64,
    dc_si_sdr: f64,
    choice: &'static str,
    ensemble_si_sdr: f64,
}

#[derive(Serialize)]
struct EnsembleSummary {
    policy: PolicyKind,
    threshold: f64,
    mixtures: usize,
    mean_spatial: f64,
    mean_dc: f64,
    mean_ensemble: f64,
    mean_oracle: f64,
    mean_random: f64,
    mean_confidence_policy: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn ensemble(config: &RunConfig, corpus: &Path, checkpoint: &Path, split: SplitArg, out: &Path) -> Result<(), CliError> {
    let net = Checkpoint::load(checkpoint)?.network;
    let records = read_manifest(corpus, split_of(split))?;
    let threshold = match config.ensemble.threshold {
        Some(t) => t,
        None => {
            let validation = read_manifest(corpus, Split::Validation)?;
            let conf = validation
                .par_iter()
                .map(|rec| Ok(analyse(config, corpus, rec)?.spatial.confidence.mean_confidence))
                .collect::<Result<Vec<f64>, CliError>>()?;
            calibrate_threshold(&conf)?
        }
    };
    let scored = records
        .par_iter()
        .map(|rec| -> Result<(String, f64, f64, f64), CliError> {
            let a = analyse(config, corpus, rec)?;
            let seed = mixture_run_seed(config.seed, &rec.id);
            let masks = a.dc_separation(&net, &inference_config(config, seed))?;
            Ok((
                rec.id.clone(),
                a.spatial.confidence.mean_confidence,
                a.spatial_scores()?.mean_si_sdr(),
                a.score_masks(&masks)?.mean_si_sdr(),
            ))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let policy_seed = derive_seed(config.seed, config.ensemble.seed);
    let policy_of = |kind: PolicyKind| EnsemblePolicy { kind, threshold, seed: policy_seed };
    let pick = |policy: &EnsemblePolicy| -> Result<Vec<(Choice, f64)>, CliError> {
        scored
            .iter()
            .enumerate()
            .map(|(i, (_, conf, sp, dc))| {
                let c = Candidate { index: i as u64, mean_confidence: *conf, true_scores: Some((*sp, *dc)) };
                Ok(match select(policy, &c)? {
                    Choice::Spatial => (Choice::Spatial, *sp),
                    Choice::Dc => (Choice::Dc, *dc),
                })
            })
            .collect()
    };
    let chosen = pick(&policy_of(config.ensemble.policy))?;
    let rows: Vec<EnsembleRow> = scored
        .iter()
        .zip(&chosen)
        .map(|((id, conf, sp, dc), (choice, score))| EnsembleRow {
            mixture_id: id.clone(),
            mean_confidence: *conf,
            spatial_si_sdr: *sp,
            dc_si_sdr: *dc,
            choice: choice.tag(),
            ensemble_si_sdr: *score,
        })
        .collect();
    write_csv(&out.join("ensemble.csv"), &rows)?;
    let policy_mean = |kind| -> Result<f64, CliError> { Ok(mean(pick(&policy_of(kind))?.iter().map(|c| c.1))) };
    let summary = EnsembleSummary {
        policy: config.ensemble.policy,
        threshold,
        mixtures: scored.len(),
        mean_spatial: mean(scored.iter().map(|s| s.2)),
        mean_dc: mean(scored.iter().map(|s| s.3)),
        mean_ensemble: mean(chosen.iter().map(|c| c.1)),
        mean_oracle: policy_mean(PolicyKind::Oracle)?,
        mean_random: policy_mean(PolicyKind::Random)?,
        mean_confidence_policy: policy_mean(PolicyKind::Confidence)?,
    };
    write_json(&out.join("summary.json"), &summary)
}

#[derive(Serialize)]
struct ReportSummary {
    mixtures: usize,
    mean_si_sdr: f64,
    correlation: Option<Correlation>,
    correlation_error: Option<String>,
}

fn report(config: &RunConfig, corpus: &Path, split: SplitArg, out: &Path) -> Result<(), CliError> {
    let records = read_manifest(corpus, split_of(split))?;
    let entries = records
        .par_iter()
        .map(|rec| -> Result<(String, f64, f64), CliError> {
            let a = analyse(config, corpus, rec)?;
            Ok((rec.id.clone(), a.spatial.confidence.mean_confidence, a.spatial_scores()?.mean_si_sdr()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = confidence_sdr_report(&entries);
    write_csv(&out.join("confidence_sdr.csv"), &report.rows)?;
    let summary = ReportSummary {
        mixtures: entries.len(),
        mean_si_sdr: mean(entries.iter().map(|e| e.2)),
        correlation: report.correlation,
        correlation_error: report.correlation_error,
    };
    write_json(&out.join("summary.json"), &summary)
}
