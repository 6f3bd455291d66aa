use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::metrics::{MetricsRow, MetricsWriter};
use crate::data::{batch_iter, data_dir, split_holdout, Dataset, DatasetKind, Normalization, Split, ValSource};
use crate::error::{Error, Result};
use crate::layers::{argmax, GraphBuilder, InputShape, LayerGraph, LayerKind, Mode};
use crate::models::{build_model, ModelConfig};
use crate::tensor::{ConvSpec, Padding};
use crate::train::{apply_l2, init_baseline, lsuv_init, LsuvReport, Optimizer};

pub const CHECKPOINT_FILE: &str = "checkpoint.ircn";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Independent generator seeds derived from the run seed.
fn sub_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const DROPOUT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const HOLDOUT_STREAM: u64 = 3;
const PROBE_STREAM: u64 = 4;
const SYNTHETIC_STREAM: u64 = 5;

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub data_dir: Option<PathBuf>,
    /// Continue from out_dir's checkpoint when one exists.
    pub resume: bool,
    /// Checked after every batch; when set the run stops and keeps the last
    /// epoch checkpoint.
    pub interrupt: Option<Arc<AtomicBool>>,
    /// Stop cleanly after this many completed epochs, as if interrupted.
    pub stop_after_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub epoch: usize,
    pub batch: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub status: String,
    pub epochs_completed: usize,
    pub params: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub final_metrics: Option<String>,
    pub lsuv: Option<LsuvReport>,
    pub failure: Option<Failure>,
}

fn subset(ds: Dataset, n: Option<usize>) -> Dataset {
    match n {
        Some(n) if n < ds.len() => ds.subset(&(0..n).collect::<Vec<_>>()),
        _ => ds,
    }
}

fn load_split(cfg: &RunConfig, dir: Option<&Path>, split: Split) -> Result<Dataset> {
    let model = cfg.model();
    let ds = match cfg.dataset.name {
        DatasetKind::Synthetic => {
            let InputShape { channels, height, width } = model.input;
            if height != width {
                return Err(Error::Config("synthetic data needs a square input".into()));
            }
            let (n, stream) = match split {
                Split::Train => (cfg.dataset.synthetic[0], SYNTHETIC_STREAM),
                Split::Test => (cfg.dataset.synthetic[1], SYNTHETIC_STREAM + 1),
            };
            Dataset::synthetic(n, channels, height, model.classes, sub_seed(cfg.seed, stream))?
        }
        kind => {
            let dir = data_dir(dir, cfg.dataset.dir.as_deref());
            kind.load(&dir, split)?
        }
    };
    let ds = match split {
        Split::Train => subset(ds, cfg.dataset.train_subset),
        Split::Test => subset(ds, cfg.dataset.test_subset),
    };
    check_compatible(model, &ds)?;
    Ok(ds)
}

fn check_compatible(model: &ModelConfig, ds: &Dataset) -> Result<()> {
    let s = ds.images.shape();
    let want = model.input;
    if (s.c, s.h, s.w) != (want.channels, want.height, want.width) {
        return Err(Error::Config(format!(
            "dataset '{}' has samples of {}x{}x{} but the model expects {}x{}x{}",
            ds.name, s.c, s.h, s.w, want.channels, want.height, want.width
        )));
    }
    if ds.classes != model.classes {
        return Err(Error::Config(format!("dataset '{}' has {} classes, model has {}", ds.name, ds.classes, model.classes)));
    }
    Ok(())
}

/// Training and validation sets, normalized with training statistics.
pub fn load_train_val(cfg: &RunConfig, dir: Option<&Path>) -> Result<(Dataset, Dataset, Option<Normalization>)> {
    let full = load_split(cfg, dir, Split::Train)?;
    let (mut train, mut val) = match cfg.dataset.val {
        ValSource::TestAsVal => (full, load_split(cfg, dir, Split::Test)?),
        ValSource::Holdout { fraction } => split_holdout(&full, fraction, sub_seed(cfg.seed, HOLDOUT_STREAM))?,
    };
    let norm = cfg.dataset.normalize.then(|| Normalization::fit(&train));
    if let Some(n) = &norm {
        n.apply(&mut train)?;
        n.apply(&mut val)?;
    }
    Ok((train, val, norm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub samples: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// `(samples, correct)` per class.
    pub per_class: Vec<(usize, usize)>,
}

/// One inference pass (dropout off) over `ds` in file order.
pub fn evaluate(graph: &mut LayerGraph<f32>, ds: &Dataset, batch: usize) -> Result<EvalStats> {
    let mut loss = 0.0;
    let mut correct = 0;
    let mut per_class = vec![(0, 0); ds.classes];
    for b in batch_iter(ds, batch, 0, 0, Default::default(), Mode::Infer)? {
        let out = graph.run(&b.images, &b.labels, Mode::Infer)?;
        loss += out.loss * b.labels.len() as f64;
        correct += out.correct;
        let k = out.logits.shape().c;
        for (row, &label) in out.logits.data().chunks(k).zip(&b.labels) {
            per_class[label].0 += 1;
            if argmax(row) == label {
                per_class[label].1 += 1;
            }
        }
    }
    let n = ds.len().max(1) as f64;
    Ok(EvalStats { samples: ds.len(), loss: loss / n, accuracy: correct as f64 / n, per_class })
}

struct EpochOutcome {
    loss: f64,
    accuracy: f64,
    effective_lr: f64,
    eve_d: Option<f64>,
    interrupted: bool,
}

#[allow(clippy::too_many_arguments)]
fn train_epoch(
    graph: &mut LayerGraph<f32>,
    opt: &mut Optimizer,
    ds: &Dataset,
    cfg: &RunConfig,
    epoch: usize,
    l2: f64,
    interrupt: Option<&AtomicBool>,
) -> std::result::Result<EpochOutcome, (usize, Error)> {
    let batches = batch_iter(ds, cfg.batch_size, sub_seed(cfg.seed, BATCH_STREAM), epoch as u64, cfg.dataset.augment, Mode::Train)
        .map_err(|e| (0, e))?;
    let (mut loss, mut correct) = (0.0, 0);
    let mut effective_lr = opt.current_lr();
    let mut eve_d = None;
    for (i, b) in batches.enumerate() {
        if interrupt.is_some_and(|f| f.load(Ordering::SeqCst)) {
            return Ok(EpochOutcome { loss: 0.0, accuracy: 0.0, effective_lr, eve_d, interrupted: true });
        }
        let step = (|| {
            let out = graph.run(&b.images, &b.labels, Mode::Train)?;
            let mut grads = out.grads.expect("train mode yields gradients");
            apply_l2(&mut grads, graph.params(), l2);
            let info = opt.step(graph.params_mut(), &grads, out.loss)?;
            Ok::<_, Error>((out.loss, out.correct, info))
        })();
        let (l, c, info) = step.map_err(|e| (i + 1, e))?;
        loss += l * b.labels.len() as f64;
        correct += c;
        effective_lr = info.effective_lr;
        eve_d = info.eve_d;
    }
    let n = ds.len().max(1) as f64;
    Ok(EpochOutcome { loss: loss / n, accuracy: correct as f64 / n, effective_lr, eve_d, interrupted: false })
}

fn checkpoint_of(cfg: &RunConfig, graph: &LayerGraph<f32>, opt: &Optimizer, norm: &Option<Normalization>, epoch: usize) -> Checkpoint {
    Checkpoint {
        config_json: cfg.to_json(),
        epoch: epoch as u64,
        tensors: graph.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        optimizer: opt.state().clone(),
        normalization: norm.clone(),
        rng: graph.rng_state(),
    }
}

fn restore_params(graph: &mut LayerGraph<f32>, ck: &Checkpoint) -> Result<()> {
    if ck.tensors.len() != graph.params().len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model has {} parameters",
            ck.tensors.len(),
            graph.params().len()
        )));
    }
    for (p, (name, t)) in graph.params_mut().iter_mut().zip(&ck.tensors) {
        if &p.name != name || p.value.shape() != t.shape() {
            return Err(Error::Format(format!("checkpoint tensor '{name}' {} does not match '{}' {}", t.shape(), p.name, p.value.shape())));
        }
        p.value = t.clone();
    }
    Ok(())
}

fn write_summary(out_dir: &Path, summary: &TrainSummary) -> Result<()> {
    let path = out_dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Runs (or resumes) training as described by `cfg`, writing metrics.csv,
/// checkpoint.ircn and summary.json under `cfg.out_dir`.
pub fn cmd_train(cfg: &RunConfig, opts: &TrainOptions, on_epoch: &mut dyn FnMut(&MetricsRow)) -> Result<TrainSummary> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ck_path = out.join(CHECKPOINT_FILE);
    let metrics_path = out.join(METRICS_FILE);

    let (train, val, norm) = load_train_val(cfg, opts.data_dir.as_deref())?;
    let mut graph: LayerGraph<f32> = build_model(cfg.model())?;
    let mut summary = TrainSummary {
        status: "running".into(),
        epochs_completed: 0,
        params: graph.param_count(),
        train_samples: train.len(),
        val_samples: val.len(),
        final_metrics: None,
        lsuv: None,
        failure: None,
    };

    let resume_from = if opts.resume && ck_path.exists() { Some(Checkpoint::load(&ck_path)?) } else { None };
    let (mut opt, start, mut metrics) = match resume_from {
        Some(ck) => {
            let saved = RunConfig::from_json(&ck.config_json)?;
            if !saved.same_run(cfg) {
                return Err(Error::Config(format!("{} was written by a different run config", ck_path.display())));
            }
            if ck.normalization != norm {
                return Err(Error::Data("normalization statistics differ from the checkpoint's".into()));
            }
            restore_params(&mut graph, &ck)?;
            graph.set_rng_state(ck.rng);
            let opt = Optimizer::from_state(cfg.optimizer, graph.params(), ck.optimizer)?;
            let epoch = ck.epoch as usize;
            (opt, epoch, MetricsWriter::resume(&metrics_path, epoch)?)
        }
        None => {
            match cfg.init {
                super::InitConfig::Baseline => init_baseline(&mut graph, cfg.seed),
                super::InitConfig::Lsuv { probe, lsuv } => {
                    let mut order: Vec<usize> = (0..train.len()).collect();
                    order.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, PROBE_STREAM)));
                    if train.len() < probe {
                        return Err(Error::Config(format!("LSUV probe of {probe} exceeds {} training samples", train.len())));
                    }
                    let batch = train.images.select_samples(&order[..probe]);
                    summary.lsuv = Some(lsuv_init(&mut graph, &batch, lsuv, cfg.seed)?);
                }
            }
            graph.reseed(sub_seed(cfg.seed, DROPOUT_STREAM));
            let opt = Optimizer::new(cfg.optimizer, graph.params())?;
            // Epoch 0: an interrupt before the first epoch ends still leaves
            // a resumable checkpoint.
            checkpoint_of(cfg, &graph, &opt, &norm, 0).save(&ck_path)?;
            (opt, 0, MetricsWriter::create(&metrics_path)?)
        }
    };
    summary.epochs_completed = start;

    let interrupt = opts.interrupt.as_deref();
    for epoch in start + 1..=cfg.epochs {
        let t0 = Instant::now();
        let outcome = match train_epoch(&mut graph, &mut opt, &train, cfg, epoch, cfg.l2, interrupt) {
            Ok(o) => o,
            Err((batch, e)) => {
                summary.status = "failed".into();
                summary.failure = Some(Failure { epoch, batch, message: e.to_string() });
                write_summary(out, &summary)?;
                return Err(match e {
                    Error::NonFinite(m) | Error::Training(m) => Error::Training(format!("epoch {epoch} batch {batch}: {m}")),
                    other => other,
                });
            }
        };
        if outcome.interrupted {
            summary.status = "interrupted".into();
            write_summary(out, &summary)?;
            return Ok(summary);
        }
        let stats = evaluate(&mut graph, &val, cfg.batch_size)?;
        let elapsed = t0.elapsed().as_secs_f64();
        let row = MetricsRow {
            epoch,
            train_loss: outcome.loss,
            train_acc: outcome.accuracy,
            val_loss: stats.loss,
            val_acc: stats.accuracy,
            epoch_time_s: cfg.record_epoch_time.then_some(elapsed),
            effective_lr: outcome.effective_lr,
            eve_d: outcome.eve_d,
        };
        checkpoint_of(cfg, &graph, &opt, &norm, epoch).save(&ck_path)?;
        metrics.append(&row)?;
        summary.epochs_completed = epoch;
        summary.final_metrics = Some(row.to_csv());
        on_epoch(&row);
        if opts.stop_after_epoch == Some(epoch) && epoch < cfg.epochs {
            summary.status = "interrupted".into();
            write_summary(out, &summary)?;
            return Ok(summary);
        }
    }
    summary.status = "completed".into();
    write_summary(out, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: EvalSplit,
    pub epoch: u64,
    #[serde(flatten)]
    pub stats: EvalStats,
    pub error_pct: f64,
}

/// Evaluates a checkpoint on the run's validation split (rebuilt exactly as
/// training built it) or on the test split, with the checkpoint's
/// normalization statistics.
pub fn cmd_eval(checkpoint: &Path, split: EvalSplit, data_dir: Option<&Path>) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = RunConfig::from_json(&ck.config_json)?;
    let mut ds = match (split, cfg.dataset.val) {
        (EvalSplit::Test, _) | (EvalSplit::Val, ValSource::TestAsVal) => load_split(&cfg, data_dir, Split::Test)?,
        (EvalSplit::Val, ValSource::Holdout { fraction }) => {
            split_holdout(&load_split(&cfg, data_dir, Split::Train)?, fraction, sub_seed(cfg.seed, HOLDOUT_STREAM))?.1
        }
    };
    if let Some(n) = &ck.normalization {
        n.apply(&mut ds)?;
    }
    let mut graph: LayerGraph<f32> = build_model(cfg.model())?;
    restore_params(&mut graph, &ck)?;
    let stats = evaluate(&mut graph, &ds, cfg.batch_size)?;
    let error_pct = 100.0 * (1.0 - stats.accuracy);
    Ok(EvalReport { split, epoch: ck.epoch, stats, error_pct })
}

/// Multinomial logistic regression on raw (normalized) pixels, trained with
/// the run's optimizer, epochs, batches and seed on the same splits. Returns
/// its validation accuracy; a reference point for the CNN.
pub fn linear_baseline(cfg: &RunConfig, data_dir: Option<&Path>) -> Result<f64> {
    let (train, val, _) = load_train_val(cfg, data_dir)?;
    let input = cfg.model().input;
    let mut b = GraphBuilder::new();
    b.add("input", LayerKind::Input, &[]);
    let spec = ConvSpec {
        kernel: (input.height, input.width),
        stride: (1, 1),
        padding: Padding::Valid,
        out_channels: cfg.model().classes,
    };
    b.add("logits", LayerKind::Conv { spec, bias: true }, &["input"]);
    b.add("loss", LayerKind::SoftmaxXent, &["logits"]);
    let mut graph: LayerGraph<f32> = b.build(input)?;
    init_baseline(&mut graph, cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, graph.params())?;
    for epoch in 1..=cfg.epochs {
        train_epoch(&mut graph, &mut opt, &train, cfg, epoch, 0.0, None).map_err(|(_, e)| e)?;
    }
    Ok(evaluate(&mut graph, &val, cfg.batch_size)?.accuracy)
}
