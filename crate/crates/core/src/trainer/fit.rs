use std::path::Path;

use super::{
    adam_step, log_epoch, save_checkpoint, Checkpoint, EpochRecord, OptimizerState, Result,
    TrainConfig, TrainError,
};
use crate::dataio::{make_batches, LabeledDataset, SplitIndices};
use crate::rng::{derive_seed, stream};
use crate::tensor::{Graph, Tensor, Var};
use crate::vit::{forward, init_params, ModelConfig, ParamVars, ViTParams};

pub const TRAIN_LOG: &str = "train_log.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Mean over the batch of `-log p[label]`, the log clamped at 1e-12.
pub fn cross_entropy(g: &mut Graph, probs: Var, labels: &[usize]) -> Result<Var> {
    let (rows, classes) = match g.shape(probs) {
        [r, c] => (*r, *c),
        s => {
            return Err(TrainError::Contract(format!(
                "cross_entropy expects [B, C] probabilities, got {s:?}"
            )))
        }
    };
    if labels.len() != rows {
        return Err(TrainError::Contract(format!(
            "cross_entropy: {rows} rows but {} labels",
            labels.len()
        )));
    }
    let mut onehot = vec![0.0; rows * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(TrainError::Contract(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        onehot[i * classes + l] = 1.0;
    }
    let y = g.input(Tensor::new(vec![rows, classes], onehot)?)?;
    let logp = g.log(probs)?;
    let picked = g.mul(logp, y)?;
    let total = g.sum(picked)?;
    Ok(g.scale(total, -1.0 / rows as f64)?)
}

/// Index of the largest value; the lowest index wins an exact tie.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
    /// In the order the samples were visited.
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

fn check_split(indices: &[usize], ds: &LabeledDataset, what: &str) -> Result<()> {
    if indices.is_empty() {
        return Err(TrainError::Contract(format!("{what} split is empty")));
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= ds.len()) {
        return Err(TrainError::Contract(format!(
            "{what} index {i} outside dataset of {}",
            ds.len()
        )));
    }
    Ok(())
}

/// One pass over the training indices. Batches are reshuffled per epoch
/// from `derive_seed(cfg.seed, EPOCH_BASE + epoch)` when `cfg.shuffle` is on.
pub fn train_epoch(
    params: &mut ViTParams,
    opt: &mut OptimizerState,
    ds: &LabeledDataset,
    train_idx: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    check_split(train_idx, ds, "training")?;
    let shuffle_seed = cfg
        .shuffle
        .then(|| derive_seed(cfg.seed, stream::EPOCH_BASE + epoch as u64));
    let adam = cfg.adam();
    let model_cfg = params.config().clone();
    let mut loss_sum = 0.0;
    let mut stats = EpochStats {
        loss: 0.0,
        accuracy: 0.0,
        predictions: Vec::with_capacity(train_idx.len()),
        labels: Vec::with_capacity(train_idx.len()),
    };
    for batch in make_batches(train_idx, cfg.batch_size, shuffle_seed)? {
        let images: Vec<_> = batch.iter().map(|&i| ds.image(i)).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| ds.label(i)).collect();
        let mut g = Graph::new();
        let pv = ParamVars::register(&mut g, params, true)?;
        let out = forward(&mut g, &pv, &model_cfg, &images)?;
        let loss = cross_entropy(&mut g, out.probs, &labels)?;
        g.backward(loss)?;

        loss_sum += g.value(loss).item() * batch.len() as f64;
        let probs = g.value(out.probs);
        for (r, &l) in labels.iter().enumerate() {
            stats.predictions.push(argmax(probs.row(r)));
            stats.labels.push(l);
        }
        let grads: Vec<Tensor> = pv
            .vars()
            .iter()
            .map(|&v| g.grad(v).unwrap_or_else(|| Tensor::zeros(g.shape(v))))
            .collect();
        adam_step(&mut params.tensors_mut(), &grads, opt, &adam)?;
    }
    let n = stats.labels.len() as f64;
    stats.loss = loss_sum / n;
    stats.accuracy = correct(&stats.predictions, &stats.labels) as f64 / n;
    Ok(stats)
}

fn correct(preds: &[usize], labels: &[usize]) -> usize {
    preds.iter().zip(labels).filter(|(p, l)| p == l).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// Probability of class 1 per sample, for ROC analysis.
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Forward-only pass over `indices` in order, chunked by the batch size.
pub fn evaluate(
    params: &ViTParams,
    ds: &LabeledDataset,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<Evaluation> {
    check_split(indices, ds, "evaluation")?;
    let model_cfg = params.config();
    let mut out = Evaluation {
        loss: 0.0,
        accuracy: 0.0,
        predictions: Vec::with_capacity(indices.len()),
        scores: Vec::with_capacity(indices.len()),
        labels: Vec::with_capacity(indices.len()),
    };
    let mut loss_sum = 0.0;
    for chunk in indices.chunks(cfg.batch_size.max(1)) {
        let images: Vec<_> = chunk.iter().map(|&i| ds.image(i)).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| ds.label(i)).collect();
        let mut g = Graph::new();
        let pv = ParamVars::register(&mut g, params, false)?;
        let f = forward(&mut g, &pv, model_cfg, &images)?;
        let loss = cross_entropy(&mut g, f.probs, &labels)?;
        loss_sum += g.value(loss).item() * chunk.len() as f64;
        let probs = g.value(f.probs);
        for (r, &l) in labels.iter().enumerate() {
            let row = probs.row(r);
            out.predictions.push(argmax(row));
            out.scores.push(row.get(1).copied().unwrap_or(0.0));
            out.labels.push(l);
        }
    }
    let n = indices.len() as f64;
    out.loss = loss_sum / n;
    out.accuracy = correct(&out.predictions, &out.labels) as f64 / n;
    Ok(out)
}

/// Patience counter on a monitored accuracy. Only a strictly higher value
/// counts as an improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    max_epochs: usize,
    best: Option<(usize, f64)>,
    counter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        EarlyStopping {
            patience,
            max_epochs,
            best: None,
            counter: 0,
        }
    }

    /// Feeds the accuracy of `epoch` (1-based).
    pub fn observe(&mut self, epoch: usize, accuracy: f64) -> Observation {
        let improved = self.best.map_or(true, |(_, b)| accuracy > b);
        if improved {
            self.best = Some((epoch, accuracy));
            self.counter = 0;
        } else {
            self.counter += 1;
        }
        Observation {
            improved,
            stop: self.counter >= self.patience || epoch >= self.max_epochs,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn counter(&self) -> usize {
        self.counter
    }
}

/// What the epoch loop drives: one epoch of work, and a hook for a new best.
pub trait EpochRunner {
    fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord>;
    fn on_improvement(&mut self, record: &EpochRecord) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopSummary {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub stop_epoch: usize,
}

/// Runs epochs 1, 2, ... until the patience counter or `max_epochs` stops
/// the loop, monitoring `test_accuracy`.
pub fn run_loop(
    runner: &mut dyn EpochRunner,
    max_epochs: usize,
    patience: usize,
) -> Result<LoopSummary> {
    if max_epochs == 0 || patience == 0 {
        return Err(TrainError::Config(
            "max_epochs and patience must be at least 1".into(),
        ));
    }
    let mut es = EarlyStopping::new(patience, max_epochs);
    let mut records = Vec::new();
    for epoch in 1..=max_epochs {
        let record = runner.run_epoch(epoch)?;
        let obs = es.observe(epoch, record.test_accuracy);
        if obs.improved {
            runner.on_improvement(&record)?;
        }
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, test loss {:.4} acc {:.4}{}",
            record.train_loss,
            record.train_accuracy,
            record.test_loss,
            record.test_accuracy,
            if obs.improved { " *" } else { "" }
        );
        records.push(record);
        if obs.stop {
            break;
        }
    }
    let (best_epoch, best_accuracy) = es.best().expect("at least one epoch ran");
    Ok(LoopSummary {
        stop_epoch: records.len(),
        records,
        best_epoch,
        best_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub best: Checkpoint,
    pub records: Vec<EpochRecord>,
    pub stop_epoch: usize,
}

struct FitRunner<'a> {
    params: ViTParams,
    opt: OptimizerState,
    ds: &'a LabeledDataset,
    split: &'a SplitIndices,
    cfg: &'a TrainConfig,
    log_path: std::path::PathBuf,
    ckpt_path: std::path::PathBuf,
    best: Option<Checkpoint>,
}

impl EpochRunner for FitRunner<'_> {
    fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let train = train_epoch(
            &mut self.params,
            &mut self.opt,
            self.ds,
            &self.split.train,
            self.cfg,
            epoch,
        )?;
        let test = evaluate(&self.params, self.ds, &self.split.test, self.cfg)?;
        let record = EpochRecord {
            epoch,
            train_loss: train.loss,
            train_accuracy: train.accuracy,
            test_loss: test.loss,
            test_accuracy: test.accuracy,
        };
        log_epoch(&record, &self.log_path)?;
        Ok(record)
    }

    fn on_improvement(&mut self, record: &EpochRecord) -> Result<()> {
        let ckpt = Checkpoint {
            params: self.params.clone(),
            best_accuracy: record.test_accuracy,
            best_epoch: record.epoch,
        };
        save_checkpoint(&ckpt, &self.ckpt_path)?;
        self.best = Some(ckpt);
        Ok(())
    }
}

/// Trains from a fresh initialisation seeded by `train_cfg.seed`,
/// logging every epoch to `out_dir/train_log.csv` and keeping the best test
/// accuracy model in `out_dir/best.ckpt`.
pub fn fit(
    dataset: &LabeledDataset,
    split: &SplitIndices,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<FitOutcome> {
    train_cfg.validate()?;
    model_cfg.validate()?;
    check_split(&split.train, dataset, "training")?;
    check_split(&split.test, dataset, "test")?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TrainError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let log_path = out_dir.join(TRAIN_LOG);
    std::fs::File::create(&log_path).map_err(io(&log_path))?;

    let params = init_params(model_cfg, train_cfg.seed)?;
    let opt = OptimizerState::zeros_like(params.tensors());
    let mut runner = FitRunner {
        params,
        opt,
        ds: dataset,
        split,
        cfg: train_cfg,
        log_path,
        ckpt_path: out_dir.join(BEST_CHECKPOINT),
        best: None,
    };
    let summary = run_loop(&mut runner, train_cfg.max_epochs, train_cfg.patience)?;
    Ok(FitOutcome {
        best: runner.best.expect("first epoch always improves"),
        records: summary.records,
        stop_epoch: summary.stop_epoch,
    })
}
