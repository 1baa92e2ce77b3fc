use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;

use super::checkpoint::{save_checkpoint, CheckpointMeta};
use super::config::TrainConfig;
use super::model::GaitModel;
use crate::data::ClipRecord;
use crate::error::{Error, Result};
use crate::numerics::{Adam, Rng, SchedulerState};

mod stream {
    pub const SPLIT: u64 = 10;
    pub const ORDER: u64 = 11;
    pub const DROPOUT: u64 = 12;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

pub const CURVES_HEADER: &str = "epoch\tlr\ttrain_loss\ttrain_acc\tval_loss\tval_acc";

pub fn format_curves(curves: &[EpochStats]) -> String {
    let opt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
    let mut s = format!("{CURVES_HEADER}\n");
    for e in curves {
        s.push_str(&format!(
            "{}\t{:e}\t{:.6}\t{:.6}\t{}\t{}\n",
            e.epoch,
            e.lr,
            e.train_loss,
            e.train_acc,
            opt(e.val_loss),
            opt(e.val_acc)
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation loss.
    pub model: GaitModel,
    pub meta: CheckpointMeta,
    pub curves: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Class index of every training subject, in ascending id order.
pub fn label_map(records: &[ClipRecord]) -> BTreeMap<u32, usize> {
    let mut ids: Vec<u32> = records.iter().map(|r| r.subject).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter().enumerate().map(|(i, s)| (s, i)).collect()
}

/// Per-subject stratified hold-out: `round(n · fraction)` clips of each
/// subject go to validation, always leaving at least one for training.
pub fn stratified_split(records: &[ClipRecord], fraction: f64, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let mut by_subject: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_subject.entry(r.subject).or_default().push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_subject {
        rng.shuffle(&mut idx);
        let k = ((idx.len() as f64 * fraction).round() as usize).min(idx.len() - 1);
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(RunFiles { dir: dir.to_path_buf() })
    }

    pub fn best(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }

    pub fn last_good(&self) -> PathBuf {
        self.dir.join("last_good.ckpt")
    }

    pub fn curves(&self) -> PathBuf {
        self.dir.join("curves.tsv")
    }
}

fn evaluate_loss(model: &GaitModel, clips: &[&ClipRecord], labels: &[usize], batch: usize) -> Result<(f64, f64)> {
    let (mut loss, mut correct) = (0.0, 0);
    let mut rng = Rng::new(0);
    for (cs, ls) in clips.chunks(batch).zip(labels.chunks(batch)) {
        let (out, _) = model.forward_batch(cs, ls, false, &mut rng)?;
        loss += out.loss * cs.len() as f64;
        correct += out.correct;
    }
    let n = clips.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains one model on `records` (all from training subjects).
pub fn train(cfg: &TrainConfig, records: &[ClipRecord], files: Option<&RunFiles>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labels = label_map(records);
    if labels.len() < 2 {
        return Err(Error::Data(format!("training needs at least 2 identities, got {}", labels.len())));
    }
    let root = Rng::new(cfg.seed);
    let (train_idx, val_idx) = stratified_split(records, cfg.val_fraction, &mut root.split(stream::SPLIT));
    let label_of = |i: usize| labels[&records[i].subject];
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); labels.len()];
    for &i in &train_idx {
        by_class[label_of(i)].push(i);
    }
    let class_pool: Vec<usize> = (0..labels.len()).filter(|&c| !by_class[c].is_empty()).collect();
    let val_clips: Vec<&ClipRecord> = val_idx.iter().map(|&i| &records[i]).collect();
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| label_of(i)).collect();

    let mut model = GaitModel::new(cfg, labels.len())?;
    let mut meta = CheckpointMeta { config: cfg.clone(), labels: labels.keys().copied().collect(), epoch: 0 };
    if let Some(f) = files {
        save_checkpoint(&f.best(), &model, &meta)?;
    }
    let mut best = (model.clone(), 0usize);
    let mut adam = Adam::new(cfg.lr);
    let mut sched = SchedulerState::new(cfg.lr);
    sched.factor = cfg.lr_factor;
    sched.plateau_patience = cfg.plateau_patience;
    sched.stop_patience = cfg.stop_patience;
    sched.min_lr = cfg.min_lr;
    sched.threshold = cfg.improvement_threshold;
    let mut order_rng = root.split(stream::ORDER);
    let mut drop_rng = root.split(stream::DROPOUT);
    let steps = if cfg.steps_per_epoch > 0 { cfg.steps_per_epoch } else { train_idx.len().div_ceil(cfg.batch_size) };
    let mut curves = Vec::new();
    let mut stopped_early = false;
    let mut step_count = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for _ in 0..steps {
            let picks: Vec<usize> = (0..cfg.batch_size)
                .map(|_| {
                    let c = class_pool[order_rng.below(class_pool.len())];
                    by_class[c][order_rng.below(by_class[c].len())]
                })
                .collect();
            let clips: Vec<&ClipRecord> = picks.iter().map(|&i| &records[i]).collect();
            let ys: Vec<usize> = picks.iter().map(|&i| label_of(i)).collect();
            let (out, cache) = model.forward_batch(&clips, &ys, true, &mut drop_rng)?;
            step_count += 1;
            if !out.loss.is_finite() {
                return Err(diverged(files, &best, &meta, format!("loss {} at epoch {epoch}, step {step_count}", out.loss)));
            }
            model.backward_batch(&cache)?;
            model.update_running_stats(&cache);
            adam.lr = sched.lr;
            if let Err(e) = adam.step(&mut model) {
                return Err(diverged(files, &best, &meta, e.to_string()));
            }
            loss_sum += out.loss * clips.len() as f64;
            correct += out.correct;
            seen += clips.len();
        }
        let (val_loss, val_acc) = if val_clips.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_loss(&model, &val_clips, &val_labels, cfg.batch_size)?;
            (Some(l), Some(a))
        };
        let train_loss = loss_sum / seen.max(1) as f64;
        let stats = EpochStats {
            epoch,
            lr: sched.lr,
            train_loss,
            train_acc: correct as f64 / seen.max(1) as f64,
            val_loss,
            val_acc,
        };
        info!(
            "{} epoch {epoch}: loss {:.4} acc {:.3} val {:?} lr {:e}",
            cfg.head, stats.train_loss, stats.train_acc, stats.val_loss, stats.lr
        );
        curves.push(stats);
        let monitored = val_loss.unwrap_or(train_loss);
        if !monitored.is_finite() {
            return Err(diverged(files, &best, &meta, format!("validation loss {monitored} at epoch {epoch}")));
        }
        let decision = sched.step(monitored);
        if decision.improved {
            best = (model.clone(), epoch);
            meta.epoch = epoch;
            if let Some(f) = files {
                save_checkpoint(&f.best(), &best.0, &meta)?;
            }
        }
        if let Some(f) = files {
            std::fs::write(f.curves(), format_curves(&curves))?;
        }
        if decision.stop {
            stopped_early = true;
            break;
        }
    }
    if let Some(f) = files {
        std::fs::write(f.curves(), format_curves(&curves))?;
    }
    meta.epoch = best.1;
    Ok(TrainOutcome { model: best.0, meta, curves, best_epoch: best.1, stopped_early })
}

fn diverged(files: Option<&RunFiles>, best: &(GaitModel, usize), meta: &CheckpointMeta, why: String) -> Error {
    let mut meta = meta.clone();
    meta.epoch = best.1;
    match files {
        Some(f) => match save_checkpoint(&f.last_good(), &best.0, &meta) {
            Ok(()) => Error::NonFinite(format!(
                "training diverged ({why}); last good checkpoint (epoch {}) at {}",
                best.1,
                f.last_good().display()
            )),
            Err(e) => Error::NonFinite(format!("training diverged ({why}); saving last good checkpoint failed: {e}")),
        },
        None => Error::NonFinite(format!("training diverged ({why}); last good epoch {}", best.1)),
    }
}
