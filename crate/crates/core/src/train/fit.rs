use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use depthgaze_autograd::{Float, ParamStore};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::eval::evaluate_prepared;
use super::{prepare, MetricReport, Selection, TrainBatch, TrainConfig, Trainer};
use crate::error::{GazeError, Result};
use crate::metrics::Baselines;
use crate::types::{ModelConfig, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Plain,
    Da,
}

/// Datasets for one training run. `target` is only read in DA mode and
/// its labels are ignored.
#[derive(Clone, Copy, Debug)]
pub struct FitData<'a> {
    pub train: &'a [Sample],
    pub val: &'a [Sample],
    pub target: Option<&'a [Sample]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of every reported loss quantity over the epoch's steps.
    pub losses: BTreeMap<String, f64>,
    pub val_auc: Option<f64>,
    pub val_avg_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub mode: TrainMode,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub final_metrics: MetricReport,
    pub wall_clock_secs: f64,
    pub checkpoint_path: Option<PathBuf>,
}

impl ExperimentRecord {
    /// Per-epoch mean of the weighted total loss.
    pub fn total_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.losses["total"]).collect()
    }
}

/// Trains a fresh model and returns it together with the run record.
pub fn fit<T: Float>(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    data: FitData<'_>,
    mode: TrainMode,
    checkpoint_dir: Option<&Path>,
) -> Result<(Trainer<T>, ExperimentRecord)> {
    let mut trainer = Trainer::new(model_config, train_config)?;
    let record = fit_with(&mut trainer, data, mode, checkpoint_dir)?;
    Ok((trainer, record))
}

fn accumulate(acc: &mut BTreeMap<String, f64>, report: &crate::losses::LossReport) {
    *acc.entry("total".into()).or_default() += report.total;
    for (t, v) in &report.terms {
        *acc.entry(t.as_str().to_string()).or_default() += v;
    }
    for (k, v) in &report.extras {
        *acc.entry(k.clone()).or_default() += v;
    }
}

/// Continues training from the trainer's current epoch up to `config.epochs`.
pub fn fit_with<T: Float>(
    trainer: &mut Trainer<T>,
    data: FitData<'_>,
    mode: TrainMode,
    checkpoint_dir: Option<&Path>,
) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let cfg = trainer.config.clone();
    let mcfg = trainer.model.config().clone();
    if data.train.is_empty() {
        return Err(GazeError::Config("training set is empty".into()));
    }
    let target = match mode {
        TrainMode::Da => {
            let t = data
                .target
                .filter(|t| !t.is_empty())
                .ok_or_else(|| GazeError::Config("DA training needs a non-empty target set".into()))?;
            Some(prepare(t, &mcfg)?)
        }
        TrainMode::Plain => None,
    };
    let train = prepare(data.train, &mcfg)?;
    let val = prepare(data.val, &mcfg)?;
    let baselines = Baselines::fit(data.train, mcfg.heatmap_size, cfg.seed);
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| GazeError::io(dir, e))?;
    }

    let mut logs = Vec::new();
    let mut best: Option<(usize, f64, ParamStore<T>)> = None;
    let mut last_report = None;
    for epoch in trainer.epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut trainer.source_rng);
        let mut target_order: Vec<usize> = Vec::new();
        if let Some(t) = &target {
            let needed = order.len();
            while target_order.len() < needed {
                let mut o: Vec<usize> = (0..t.len()).collect();
                o.shuffle(&mut trainer.target_rng);
                target_order.extend(o);
            }
        }
        let mut acc = BTreeMap::new();
        let mut steps = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = TrainBatch::<T>::from_prepared(&chunk.iter().map(|&i| &train[i]).collect::<Vec<_>>())?;
            let report = match &target {
                None => trainer.train_step(&batch)?,
                Some(t) => {
                    let lo = b * cfg.batch_size;
                    let idx = &target_order[lo..lo + chunk.len()];
                    let tb = TrainBatch::<T>::from_prepared(&idx.iter().map(|&i| &t[i]).collect::<Vec<_>>())?;
                    trainer.da_train_step(&batch, &tb)?
                }
            };
            accumulate(&mut acc, &report);
            steps += 1;
        }
        for v in acc.values_mut() {
            *v /= steps as f64;
        }
        trainer.epoch = epoch + 1;

        let mut log = EpochLog {
            epoch: epoch + 1,
            losses: acc,
            val_auc: None,
            val_avg_distance: None,
        };
        let is_last = epoch + 1 == cfg.epochs;
        if !data.val.is_empty() && ((epoch + 1) % cfg.eval_every == 0 || is_last) {
            let report = evaluate_prepared(&trainer.model, data.val, &val, &baselines)?;
            log.val_auc = Some(report.auc);
            log.val_avg_distance = Some(report.avg_distance);
            let improved = best.as_ref().is_none_or(|b| report.auc > b.1)
                && trainer.best_auc.is_none_or(|(_, a)| report.auc > a);
            if improved {
                trainer.best_auc = Some((epoch + 1, report.auc));
                best = Some((epoch + 1, report.auc, trainer.model.params.clone()));
                if let Some(dir) = checkpoint_dir {
                    save_checkpoint(trainer, &dir.join("best.ckpt"))?;
                }
            }
            last_report = Some(report);
        }
        if let Some(dir) = checkpoint_dir {
            save_checkpoint(trainer, &dir.join("last.ckpt"))?;
        }
        log::info!(
            "epoch {}/{}: loss {:.5}{}",
            epoch + 1,
            cfg.epochs,
            log.losses.get("total").copied().unwrap_or(f64::NAN),
            log.val_auc.map(|a| format!(", val AUC {a:.4}")).unwrap_or_default()
        );
        logs.push(log);
    }

    let mut selected_is_last = true;
    if cfg.selection == Selection::BestAuc {
        if let Some((epoch, _, params)) = best {
            if epoch != trainer.epoch {
                trainer.model.params = params;
                selected_is_last = false;
            }
        } else if let (Some((epoch, _)), Some(dir)) = (trainer.best_auc, checkpoint_dir) {
            // best parameters from before a resume
            if epoch != trainer.epoch {
                let saved: Trainer<T> = load_checkpoint(&dir.join("best.ckpt"))?;
                trainer.model.params = saved.model.params;
                selected_is_last = false;
            }
        }
    }
    let final_metrics = match (selected_is_last, last_report) {
        (true, Some(r)) => r,
        _ => evaluate_prepared(&trainer.model, data.val, &val, &baselines)?,
    };
    let checkpoint_path = checkpoint_dir.map(|d| {
        if cfg.selection == Selection::BestAuc && trainer.best_auc.is_some() {
            d.join("best.ckpt")
        } else {
            d.join("last.ckpt")
        }
    });
    Ok(ExperimentRecord {
        model_config: mcfg,
        train_config: cfg,
        mode,
        epochs: logs,
        best_epoch: trainer.best_auc.map(|b| b.0),
        final_metrics,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        checkpoint_path,
    })
}
