use depthgaze_autograd::Float;
use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::fit::{fit, ExperimentRecord, FitData, TrainMode};
use super::TrainConfig;
use crate::error::{GazeError, Result};
use crate::types::{ModelConfig, Sample};

#[derive(Clone, Copy, Debug)]
pub struct CrossDomainData<'a> {
    pub source_train: &'a [Sample],
    pub source_val: &'a [Sample],
    /// Unlabeled target images used by DA training.
    pub target_train: &'a [Sample],
    pub target_eval: &'a [Sample],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainScores {
    pub auc: f64,
    pub avg_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainReport {
    pub source_domain: String,
    pub target_domain: String,
    pub source_only: RunScores,
    pub with_da: Option<RunScores>,
    pub table: String,
    pub records: Vec<ExperimentRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub source: DomainScores,
    pub target: DomainScores,
}

fn domain_name(samples: &[Sample], what: &str) -> Result<String> {
    samples
        .first()
        .map(|s| s.domain.name.clone())
        .ok_or_else(|| GazeError::Config(format!("{what} set is empty")))
}

fn delta(v: f64, reference: f64) -> String {
    let d = v - reference;
    let arrow = if d > 0.0 {
        "↑"
    } else if d < 0.0 {
        "↓"
    } else {
        "="
    };
    format!("{v:.3} ({:.3}{arrow})", d.abs())
}

fn render_table(source: &str, target: &str, plain: &RunScores, da: Option<&RunScores>) -> String {
    let mut s = format!("{source} -> {target}\n");
    s.push_str("| Training | Source AUC | Source Avg.Dist. | Target AUC | Target Avg.Dist. |\n");
    s.push_str("|---|---|---|---|---|\n");
    s.push_str(&format!(
        "| source only | {:.3} | {:.3} | {} | {} |\n",
        plain.source.auc,
        plain.source.avg_distance,
        delta(plain.target.auc, plain.source.auc),
        delta(plain.target.avg_distance, plain.source.avg_distance),
    ));
    if let Some(da) = da {
        s.push_str(&format!(
            "| with DA | {:.3} | {:.3} | {} | {} |\n",
            da.source.auc,
            da.source.avg_distance,
            delta(da.target.auc, plain.target.auc),
            delta(da.target.avg_distance, plain.target.avg_distance),
        ));
    }
    s
}

/// Trains on the source domain and scores on both domains; with `with_da`
/// also trains with domain adaptation against the unlabeled target images.
/// Model selection only looks at the source validation set.
pub fn cross_domain_experiment<T: Float>(
    data: CrossDomainData<'_>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    with_da: bool,
) -> Result<CrossDomainReport> {
    let source = domain_name(data.source_train, "source training")?;
    let target = domain_name(data.target_eval, "target evaluation")?;
    if source == target {
        return Err(GazeError::Config(format!(
            "source and target carry the same domain label `{source}`"
        )));
    }
    let seed = train_config.seed;
    let run = |cfg: &ModelConfig, mode: TrainMode| -> Result<(RunScores, ExperimentRecord)> {
        let fit_data = FitData {
            train: data.source_train,
            val: data.source_val,
            target: Some(data.target_train),
        };
        let (trainer, record) = fit::<T>(cfg, train_config, fit_data, mode, None)?;
        let tgt = evaluate(&trainer.model, data.target_eval, data.source_train, seed)?;
        let scores = RunScores {
            source: DomainScores {
                auc: record.final_metrics.auc,
                avg_distance: record.final_metrics.avg_distance,
            },
            target: DomainScores {
                auc: tgt.auc,
                avg_distance: tgt.avg_distance,
            },
        };
        Ok((scores, record))
    };
    let mut plain_cfg = model_config.clone();
    plain_cfg.da_enabled = false;
    let (source_only, plain_record) = run(&plain_cfg, TrainMode::Plain)?;
    let mut records = vec![plain_record];
    let with_da_scores = if with_da {
        let mut da_cfg = model_config.clone();
        da_cfg.da_enabled = true;
        let (scores, record) = run(&da_cfg, TrainMode::Da)?;
        records.push(record);
        Some(scores)
    } else {
        None
    };
    Ok(CrossDomainReport {
        table: render_table(&source, &target, &source_only, with_da_scores.as_ref()),
        source_domain: source,
        target_domain: target,
        source_only,
        with_da: with_da_scores,
        records,
    })
}
