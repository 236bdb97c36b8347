use std::time::Instant;

use rayon::prelude::*;

use super::adam::Adam;
use super::config::{Inputs, ModelConfig};
use super::kfold::{kfold_split, Fold};
use super::metrics::{argmax_prediction, evaluate_metrics, Metrics};
use super::model::{Batch, Model};
use super::report::{FoldEntry, RunReport};
use crate::audio::IMAGE_SIZE;
use crate::error::{Error, Result};
use crate::moe::Mode;
use crate::tensor::{ParamStore, RngStream, Tape, Tensor};

/// One subject: a label (0 control, 1 depression) and its feature images.
#[derive(Clone, Debug)]
pub struct Subject {
    pub id: String,
    pub label: usize,
    /// `[3, 224, 224]` images; a branch may be absent when unused.
    pub reading: Option<Tensor>,
    pub interview: Option<Tensor>,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
}

const IMAGE_LEN: usize = 3 * IMAGE_SIZE * IMAGE_SIZE;

impl Dataset {
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    /// A copy with labels replaced, e.g. for permutation tests.
    pub fn with_labels(&self, labels: &[usize]) -> Self {
        let mut d = self.clone();
        for (s, &l) in d.subjects.iter_mut().zip(labels) {
            s.label = l;
        }
        d
    }

    /// Stacks the images of `indices` into a batch for the given input mode.
    pub fn batch(&self, indices: &[usize], inputs: Inputs) -> Result<Batch> {
        let stack = |pick: fn(&Subject) -> &Option<Tensor>, name: &str| -> Result<Tensor> {
            let mut data = Vec::with_capacity(indices.len() * IMAGE_LEN);
            for &i in indices {
                let s = &self.subjects[i];
                let img = pick(s).as_ref().ok_or_else(|| {
                    Error::InvalidArgument(format!("subject {} has no {name} features", s.id))
                })?;
                if img.shape() != [3, IMAGE_SIZE, IMAGE_SIZE] {
                    return Err(Error::shape(
                        "dataset",
                        format!("subject {} {name} image {:?}", s.id, img.shape()),
                    ));
                }
                data.extend_from_slice(img.data());
            }
            Tensor::new(vec![indices.len(), 3, IMAGE_SIZE, IMAGE_SIZE], data)
        };
        let reading = match inputs {
            Inputs::Both | Inputs::ReadOnly => Some(stack(|s| &s.reading, "reading")?),
            Inputs::InterviewOnly => None,
        };
        let interview = match inputs {
            Inputs::Both | Inputs::InterviewOnly => Some(stack(|s| &s.interview, "interview")?),
            Inputs::ReadOnly => None,
        };
        Ok(Batch {
            reading,
            interview,
            labels: indices.iter().map(|&i| self.subjects[i].label).collect(),
        })
    }
}

/// Loss terms recorded at one optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub total: f64,
    pub ce: f64,
    /// `(L_imp, L_load)` for the sparse head.
    pub aux: Option<(f64, f64)>,
}

/// A trained parameter set and its training history.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model,
    pub store: ParamStore,
    /// Mean total loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: Vec<StepLog>,
}

/// Random streams used while fitting one model.
#[derive(Clone, Debug)]
pub struct FitStreams {
    pub init: RngStream,
    pub shuffle: RngStream,
    pub noise: RngStream,
}

impl FitStreams {
    /// Streams for fold `fold` of a run, split from the run stream.
    pub fn for_fold(run_stream: &RngStream, fold: usize) -> Self {
        let f = fold as u64;
        Self {
            init: run_stream.split(0x100 + f),
            shuffle: run_stream.split(0x200 + f),
            noise: run_stream.split(0x300 + f),
        }
    }
}

/// Trains a fresh model on `train` with Adam on shuffled mini-batches.
pub fn fit(
    cfg: &ModelConfig,
    data: &Dataset,
    train: &[usize],
    mut streams: FitStreams,
) -> Result<Trained> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    for class in 0..2 {
        if !train.iter().any(|&i| data.subjects[i].label == class) {
            return Err(Error::InvalidArgument(format!(
                "training set has no subject of class {class}"
            )));
        }
    }
    let mut store = ParamStore::new();
    let model = Model::build(cfg, &mut store, &mut streams.init)?;
    let mut adam = Adam::new(&store, cfg.lr);
    let mut order = train.to_vec();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps = Vec::new();
    for epoch in 0..cfg.epochs {
        streams.shuffle.shuffle(&mut order);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch(chunk, cfg.inputs)?;
            let (grads, log) = {
                let mut tape = Tape::new(&store);
                let loss = model.loss(&mut tape, &batch, Mode::Train, &mut streams.noise)?;
                let total = tape.item(loss.total);
                if !total.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss at epoch {epoch}, step {}",
                        steps.len()
                    )));
                }
                let log = StepLog {
                    epoch,
                    step: steps.len(),
                    total,
                    ce: tape.item(loss.ce),
                    aux: loss
                        .aux
                        .map(|a| (tape.item(a.importance), tape.item(a.load))),
                };
                (tape.backward(loss.total)?, log)
            };
            store.zero_grad();
            store.accumulate(&grads);
            adam.step(&mut store);
            sum += log.total * chunk.len() as f64;
            count += chunk.len();
            steps.push(log);
        }
        epoch_losses.push(sum / count as f64);
    }
    Ok(Trained {
        model,
        store,
        epoch_losses,
        steps,
    })
}

/// Eval-mode predictions (0 or 1) for `indices`.
pub fn predict(
    model: &Model,
    store: &ParamStore,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(indices.len());
    // Eval mode draws no noise; the stream is only a placeholder.
    let mut rng = RngStream::new(0, 0);
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk, model.cfg.inputs)?;
        let mut tape = Tape::new(store);
        let (logits, _) = model.forward(&mut tape, &batch, Mode::Eval, &mut rng)?;
        let l = tape.value(logits);
        if !l.all_finite() {
            return Err(Error::NonFinite("evaluation logits".into()));
        }
        preds.extend(l.data().chunks(2).map(argmax_prediction));
    }
    Ok(preds)
}

pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<Metrics> {
    let preds = predict(model, store, data, indices, batch_size)?;
    let labels: Vec<usize> = indices.iter().map(|&i| data.subjects[i].label).collect();
    evaluate_metrics(&preds, &labels)
}

/// Everything produced for one (run, fold) cell.
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub entry: FoldEntry,
    pub epoch_losses: Vec<f64>,
    pub steps: Vec<StepLog>,
    pub test: Vec<usize>,
    pub predictions: Vec<usize>,
}

/// Stream of run `run`: seed `base + run`.
pub fn run_stream(seed: u64, run: usize) -> RngStream {
    RngStream::new(seed.wrapping_add(run as u64), 0)
}

/// Folds of run `run`, drawn from the run stream.
pub fn run_folds(cfg: &ModelConfig, data: &Dataset, run: usize) -> Result<Vec<Fold>> {
    let mut rng = run_stream(cfg.seed, run).split(0x10);
    kfold_split(&data.labels(), cfg.folds, &mut rng)
}

fn run_cell(
    cfg: &ModelConfig,
    data: &Dataset,
    run: usize,
    fold_idx: usize,
    fold: &Fold,
) -> Result<FoldOutcome> {
    let streams = FitStreams::for_fold(&run_stream(cfg.seed, run), fold_idx);
    let wrap = |e: Error| Error::Training {
        run,
        fold: fold_idx,
        detail: e.to_string(),
    };
    let trained = fit(cfg, data, &fold.train, streams).map_err(wrap)?;
    let predictions = predict(
        &trained.model,
        &trained.store,
        data,
        &fold.test,
        cfg.batch_size,
    )
    .map_err(wrap)?;
    let labels: Vec<usize> = fold.test.iter().map(|&i| data.subjects[i].label).collect();
    let metrics = evaluate_metrics(&predictions, &labels).map_err(wrap)?;
    Ok(FoldOutcome {
        entry: FoldEntry {
            run,
            fold: fold_idx,
            metrics,
            final_loss: *trained.epoch_losses.last().expect("at least one epoch"),
        },
        epoch_losses: trained.epoch_losses,
        steps: trained.steps,
        test: fold.test.clone(),
        predictions,
    })
}

/// Runs `cfg.runs × cfg.folds` cross-validation on up to `workers` threads.
/// Results do not depend on `workers`: every cell owns its parameters and
/// random streams, and outcomes are collected in (run, fold) order.
pub fn cross_validate(
    cfg: &ModelConfig,
    data: &Dataset,
    workers: usize,
) -> Result<(RunReport, Vec<FoldOutcome>)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut cells = Vec::with_capacity(cfg.runs * cfg.folds);
    for run in 0..cfg.runs {
        for (f, fold) in run_folds(cfg, data, run)?.into_iter().enumerate() {
            cells.push((run, f, fold));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<FoldOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|(run, f, fold)| run_cell(cfg, data, *run, *f, fold))
            .collect::<Result<Vec<_>>>()
    })?;
    let report = RunReport {
        config: cfg.clone(),
        seed: cfg.seed,
        runs: cfg.runs,
        folds: cfg.folds,
        entries: outcomes.iter().map(|o| o.entry.clone()).collect(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((report, outcomes))
}

/// Fits one model on every subject, for exporting weights.
pub fn fit_all(cfg: &ModelConfig, data: &Dataset) -> Result<Trained> {
    let all: Vec<usize> = (0..data.len()).collect();
    let streams = FitStreams::for_fold(&run_stream(cfg.seed, 0).split(0xa11), 0);
    fit(cfg, data, &all, streams)
}
