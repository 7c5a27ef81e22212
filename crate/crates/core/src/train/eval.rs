use depthgaze_autograd::Float;
use serde::{Deserialize, Serialize};

use super::{prepare, Prepared};
use crate::error::Result;
use crate::metrics::{avg_distance, heatmap_auc, BaselineKind, Baselines};
use crate::model::{Model, ModelBatch};
use crate::types::{HeatmapGrid, Sample};

const EVAL_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: String,
    pub auc: f64,
    pub avg_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub kind: BaselineKind,
    pub auc: f64,
    pub avg_distance: f64,
}

/// Aggregate and per-sample scores on one dataset, with baseline rows.
///
/// Only samples whose gaze target is inside the frame are scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub evaluated: usize,
    pub auc: f64,
    pub avg_distance: f64,
    pub baselines: Vec<BaselineRow>,
    pub baseline_seed: u64,
    pub per_sample: Vec<SampleMetrics>,
}

impl MetricReport {
    pub fn baseline(&self, kind: BaselineKind) -> Option<&BaselineRow> {
        self.baselines.iter().find(|b| b.kind == kind)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Scores precomputed heatmaps (`preds[i]` belongs to `samples[i]`).
pub fn evaluate_predictions(preds: &[HeatmapGrid], samples: &[Sample], baselines: &Baselines) -> MetricReport {
    let scored: Vec<(usize, &Sample)> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.annotation.is_inside() && !s.annotation.points.is_empty())
        .collect();
    let per_sample: Vec<SampleMetrics> = scored
        .iter()
        .map(|&(i, s)| SampleMetrics {
            sample_id: s.sample_id.clone(),
            auc: heatmap_auc(&preds[i], &s.annotation),
            avg_distance: avg_distance(&preds[i], &s.annotation),
        })
        .collect();
    let rows = BaselineKind::ALL
        .iter()
        .map(|&kind| {
            let scores: Vec<(f64, f64)> = scored
                .iter()
                .map(|&(_, s)| {
                    let p = baselines.predict(kind, s);
                    (heatmap_auc(&p, &s.annotation), avg_distance(&p, &s.annotation))
                })
                .collect();
            BaselineRow {
                kind,
                auc: mean(scores.iter().map(|x| x.0)),
                avg_distance: mean(scores.iter().map(|x| x.1)),
            }
        })
        .collect();
    MetricReport {
        samples: samples.len(),
        evaluated: per_sample.len(),
        auc: mean(per_sample.iter().map(|m| m.auc)),
        avg_distance: mean(per_sample.iter().map(|m| m.avg_distance)),
        baselines: rows,
        baseline_seed: baselines.seed,
        per_sample,
    }
}

pub(crate) fn predict_prepared<T: Float>(model: &Model<T>, prepared: &[Prepared]) -> Result<Vec<HeatmapGrid>> {
    let mut out = Vec::with_capacity(prepared.len());
    for chunk in prepared.chunks(EVAL_BATCH) {
        let batch = ModelBatch::<T>::from_inputs(&chunk.iter().map(|p| &p.input).collect::<Vec<_>>())?;
        out.extend(model.predict(&batch)?.into_iter().map(|o| o.heatmap));
    }
    Ok(out)
}

pub(crate) fn evaluate_prepared<T: Float>(
    model: &Model<T>,
    samples: &[Sample],
    prepared: &[Prepared],
    baselines: &Baselines,
) -> Result<MetricReport> {
    let preds = predict_prepared(model, prepared)?;
    Ok(evaluate_predictions(&preds, samples, baselines))
}

/// Runs a frozen model over `samples`; `fixed_bias` is fitted on `train`.
pub fn evaluate<T: Float>(model: &Model<T>, samples: &[Sample], train: &[Sample], seed: u64) -> Result<MetricReport> {
    let prepared = prepare(samples, model.config())?;
    let baselines = Baselines::fit(train, model.config().heatmap_size, seed);
    evaluate_prepared(model, samples, &prepared, &baselines)
}
