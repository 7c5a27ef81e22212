//! Optimization loops, evaluation, checkpoints and experiment drivers.

mod checkpoint;
mod eval;
mod experiment;
mod fit;

use std::collections::BTreeMap;

use depthgaze_autograd::{Bound, Float, Graph, Init, NodeId, Optimizer, OptimizerKind, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain_adapt::GrlSchedule;
use crate::error::{GazeError, Result};
use crate::losses::{total_loss, total_loss_graph, LossReport, LossTerm, LossWeights, WeightNode};
use crate::model::{Model, ModelBatch};
use crate::preprocess::{build_model_input, render_gt_heatmap, ModelInput};
use crate::types::{LossWeighting, ModelConfig, Sample};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use eval::{evaluate, evaluate_predictions, BaselineRow, MetricReport, SampleMetrics};
pub use experiment::{cross_domain_experiment, CrossDomainData, CrossDomainReport, DomainScores, RunScores};
pub use fit::{fit, fit_with, EpochLog, ExperimentRecord, FitData, TrainMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    AdamLike,
    SgdMomentum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// 32-bit floats.
    Standard,
    /// 64-bit floats, for gradient checks.
    High,
}

/// Model selection at the end of `fit`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Keep the parameters with the best validation AUC.
    BestAuc,
    /// Keep the parameters after the last epoch.
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerChoice,
    pub precision: Precision,
    pub eval_every: usize,
    pub seed: u64,
    pub selection: Selection,
    /// Fixed weights per loss term (used when the model config asks for fixed weighting).
    pub fixed_weights: BTreeMap<LossTerm, f64>,
    pub grl_schedule: GrlSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 70,
            batch_size: 16,
            learning_rate: 2.5e-4,
            optimizer: OptimizerChoice::AdamLike,
            precision: Precision::Standard,
            eval_every: 1,
            seed: 0,
            selection: Selection::BestAuc,
            fixed_weights: BTreeMap::new(),
            grl_schedule: GrlSchedule::Fixed,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.epochs == 0 {
            v.push("epochs must be positive".to_string());
        }
        if self.batch_size == 0 {
            v.push("batch_size must be positive".to_string());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            v.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.eval_every == 0 {
            v.push("eval_every must be positive".to_string());
        }
        for (t, w) in &self.fixed_weights {
            if !(w.is_finite() && *w >= 0.0) {
                v.push(format!("fixed_weights.{t} must be finite and >= 0, got {w}"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(GazeError::Config(v.join("; ")))
        }
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer {
            OptimizerChoice::AdamLike => OptimizerKind::adam(self.learning_rate),
            OptimizerChoice::SgdMomentum => OptimizerKind::sgd_momentum(self.learning_rate),
        }
    }

    pub fn with_weight(mut self, term: LossTerm, w: f64) -> Self {
        self.fixed_weights.insert(term, w);
        self
    }
}

/// A preprocessed sample ready for batching.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub sample_id: String,
    pub input: ModelInput,
    /// `[1, G, G]`
    pub gt: Tensor<f32>,
    pub inside: bool,
    pub labeled: bool,
}

pub fn prepare(samples: &[Sample], config: &ModelConfig) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            let g = config.heatmap_size;
            let gt = render_gt_heatmap(&s.annotation, g);
            Ok(Prepared {
                sample_id: s.sample_id.clone(),
                input: build_model_input(s, config)?,
                gt: Tensor::new(&[1, g, g], gt.data().iter().map(|&v| v as f32).collect())?,
                inside: s.annotation.is_inside(),
                labeled: !s.annotation.points.is_empty(),
            })
        })
        .collect()
}

/// Stacked inputs plus supervision for one step.
#[derive(Clone, Debug)]
pub struct TrainBatch<T> {
    pub inputs: ModelBatch<T>,
    /// `[N, 1, G, G]`
    pub gt: Tensor<T>,
    pub inside: Vec<bool>,
    pub labeled: bool,
}

impl<T: Float> TrainBatch<T> {
    pub fn from_prepared(items: &[&Prepared]) -> Result<Self> {
        let inputs = ModelBatch::from_inputs(&items.iter().map(|p| &p.input).collect::<Vec<_>>())?;
        let gt = Tensor::stack(&items.iter().map(|p| &p.gt).collect::<Vec<_>>())?.cast::<T>();
        Ok(Self {
            inputs,
            gt,
            inside: items.iter().map(|p| p.inside).collect(),
            labeled: items.iter().any(|p| p.labeled),
        })
    }

    pub fn len(&self) -> usize {
        self.inside.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inside.is_empty()
    }
}

fn loss_param_name(t: LossTerm) -> String {
    format!("loss.log_var.{}", t.as_str())
}

/// A model together with its optimizer, loss-weight state and data-order RNGs.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: Model<T>,
    pub config: TrainConfig,
    /// Learnable log-variances `s_k`, one `[1]` tensor per loss term.
    pub loss_params: ParamStore<T>,
    pub(crate) optimizer: Optimizer<T>,
    pub(crate) loss_optimizer: Optimizer<T>,
    pub(crate) source_rng: ChaCha8Rng,
    pub(crate) target_rng: ChaCha8Rng,
    pub(crate) epoch: usize,
    pub(crate) step: u64,
    pub(crate) best_auc: Option<(usize, f64)>,
    warned_target_labels: bool,
}

impl<T: Float> Trainer<T> {
    pub fn new(model_config: &ModelConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(model_config)?;
        Ok(Self::with_model(model, config))
    }

    pub fn with_model(model: Model<T>, config: &TrainConfig) -> Self {
        let mut loss_params = ParamStore::new(config.seed);
        for t in LossTerm::ALL {
            loss_params.add(&loss_param_name(t), &[1], Init::Zeros);
        }
        let optimizer = Optimizer::new(config.optimizer_kind(), &model.params);
        let loss_optimizer = Optimizer::new(config.optimizer_kind(), &loss_params);
        let mut source_rng = ChaCha8Rng::seed_from_u64(config.seed);
        source_rng.set_stream(1);
        let mut target_rng = ChaCha8Rng::seed_from_u64(config.seed);
        target_rng.set_stream(2);
        Self {
            model,
            config: config.clone(),
            loss_params,
            optimizer,
            loss_optimizer,
            source_rng,
            target_rng,
            epoch: 0,
            step: 0,
            best_auc: None,
            warned_target_labels: false,
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Current weighting as a plain value (for reports).
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            mode: self.model.config().loss_weighting,
            fixed: self.config.fixed_weights.clone(),
            log_vars: LossTerm::ALL
                .iter()
                .map(|&t| {
                    let id = self.loss_params.lookup(&loss_param_name(t)).expect("loss parameter");
                    (t, self.loss_params.get(id).data()[0].as_f64())
                })
                .collect(),
        }
    }

    /// GRL coefficient at the current point of training.
    pub fn current_lambda(&self) -> f64 {
        let cfg = crate::domain_adapt::GrlConfig {
            lambda: self.model.config().grl_lambda,
            schedule: self.config.grl_schedule,
        };
        let progress = self.epoch as f64 / self.config.epochs.max(1) as f64;
        cfg.lambda_at(progress)
    }

    fn weight_node(&self, loss_bound: &Bound, t: LossTerm) -> WeightNode {
        match self.model.config().loss_weighting {
            LossWeighting::Fixed => WeightNode::Fixed(self.config.fixed_weights.get(&t).copied().unwrap_or(1.0)),
            LossWeighting::LearnableUncertainty => {
                let id = self.loss_params.lookup(&loss_param_name(t)).expect("loss parameter");
                WeightNode::LogVar(loss_bound.node(id))
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_step(
        &mut self,
        g: &Graph<T>,
        total: NodeId,
        bound: &Bound,
        loss_bound: &Bound,
        terms: &[(LossTerm, NodeId)],
        weights: LossWeights,
        extras: BTreeMap<String, f64>,
        da_mode: bool,
    ) -> Result<LossReport> {
        for &(t, n) in terms {
            if !g.value(n).all_finite() {
                return Err(GazeError::NonFiniteLoss {
                    term: t.as_str().to_string(),
                    step: self.step,
                });
            }
        }
        if !g.value(total).all_finite() {
            return Err(GazeError::NonFiniteLoss {
                term: "total".into(),
                step: self.step,
            });
        }
        let mut grads = g.backward(total)?;
        let model_grads = bound.gradients(&mut grads);
        let loss_grads = loss_bound.gradients(&mut grads);
        self.optimizer.step(&mut self.model.params, &model_grads)?;
        if self.model.config().loss_weighting == LossWeighting::LearnableUncertainty {
            self.loss_optimizer.step(&mut self.loss_params, &loss_grads)?;
        }
        let raw: BTreeMap<LossTerm, f64> = terms.iter().map(|&(t, n)| (t, g.value(n).data()[0].as_f64())).collect();
        let (_, mut report) = total_loss(&raw, &weights, da_mode)?;
        report.total = g.value(total).data()[0].as_f64();
        report.extras = extras;
        self.step += 1;
        Ok(report)
    }

    /// One supervised update on a labeled batch.
    pub fn train_step(&mut self, batch: &TrainBatch<T>) -> Result<LossReport> {
        let weights = self.loss_weights();
        let mut g = Graph::new();
        let bound = self.model.params.bind(&mut g);
        let loss_bound = self.loss_params.bind(&mut g);
        let out = self.model.forward_graph(&mut g, &bound, &batch.inputs)?;
        let mask: Vec<T> = batch.inside.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        let heat = g.mse_loss(out.heatmap, &batch.gt, &mask)?;
        let ones = vec![T::one(); batch.len()];
        let inout = g.bce_with_logits(out.inout_logit, &mask, &ones)?;
        let terms = [(LossTerm::Heatmap, heat), (LossTerm::InOut, inout)];
        let weighted: Vec<_> = terms
            .iter()
            .map(|&(t, n)| (t, n, self.weight_node(&loss_bound, t)))
            .collect();
        let total = total_loss_graph(&mut g, &weighted, false)?;
        self.finish_step(&g, total, &bound, &loss_bound, &terms, weights, BTreeMap::new(), false)
    }

    /// One domain-adaptation update: a labeled source batch and an unlabeled
    /// target batch share a graph, a backward pass and an optimizer step.
    pub fn da_train_step(&mut self, source: &TrainBatch<T>, target: &TrainBatch<T>) -> Result<LossReport> {
        if !self.model.has_da() {
            return Err(GazeError::Config("da_train_step needs a model built with da_enabled".into()));
        }
        if target.labeled && !self.warned_target_labels {
            log::warn!("target batch carries gaze labels; they are ignored");
            self.warned_target_labels = true;
        }
        let weights = self.loss_weights();
        let lambda = self.current_lambda();
        let mut g = Graph::new();
        let bound = self.model.params.bind(&mut g);
        let loss_bound = self.loss_params.bind(&mut g);

        let fs = self.model.forward_graph(&mut g, &bound, &source.inputs)?;
        let mask: Vec<T> = source.inside.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        let heat = g.mse_loss(fs.heatmap, &source.gt, &mask)?;
        let ds = self.model.da_forward(&mut g, &bound, &fs, lambda)?;
        let ft = self.model.forward_graph(&mut g, &bound, &target.inputs)?;
        let dt = self.model.da_forward(&mut g, &bound, &ft, lambda)?;

        let (ns, nt) = (source.len(), target.len());
        let grl_s = g.bce_with_logits(ds.domain_logit, &vec![T::zero(); ns], &vec![T::one(); ns])?;
        let grl_t = g.bce_with_logits(dt.domain_logit, &vec![T::one(); nt], &vec![T::one(); nt])?;
        let r2d_s = g.mse_loss(ds.recon_depth, &source.inputs.depth_target(), &vec![T::one(); ns])?;
        let r2d_t = g.mse_loss(dt.recon_depth, &target.inputs.depth_target(), &vec![T::one(); nt])?;
        let d2r_s = g.mse_loss(ds.recon_rgb, &source.inputs.rgb_target(), &vec![T::one(); ns])?;
        let d2r_t = g.mse_loss(dt.recon_rgb, &target.inputs.rgb_target(), &vec![T::one(); nt])?;
        let mut pooled = |a: NodeId, b: NodeId| -> Result<NodeId> {
            let n = T::of((ns + nt) as f64);
            let sa = g.scale(a, T::of(ns as f64) / n);
            let sb = g.scale(b, T::of(nt as f64) / n);
            Ok(g.add(sa, sb)?)
        };
        let grl = pooled(grl_s, grl_t)?;
        let r2d = pooled(r2d_s, r2d_t)?;
        let d2r = pooled(d2r_s, d2r_t)?;

        let terms = [
            (LossTerm::Heatmap, heat),
            (LossTerm::Grl, grl),
            (LossTerm::RgbToDepth, r2d),
            (LossTerm::DepthToRgb, d2r),
        ];
        let weighted: Vec<_> = terms
            .iter()
            .map(|&(t, n)| (t, n, self.weight_node(&loss_bound, t)))
            .collect();
        let total = total_loss_graph(&mut g, &weighted, true)?;
        let v = |n: NodeId| g.value(n).data()[0].as_f64();
        let extras = BTreeMap::from([
            ("grl_source".to_string(), v(grl_s)),
            ("grl_target".to_string(), v(grl_t)),
            ("rgb_to_depth_source".to_string(), v(r2d_s)),
            ("rgb_to_depth_target".to_string(), v(r2d_t)),
            ("depth_to_rgb_source".to_string(), v(d2r_s)),
            ("depth_to_rgb_target".to_string(), v(d2r_t)),
            ("heatmap_target".to_string(), 0.0),
            ("lambda".to_string(), lambda),
        ]);
        self.finish_step(&g, total, &bound, &loss_bound, &terms, weights, extras, true)
    }
}
