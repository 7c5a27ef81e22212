//! Training losses and their weighting.
//!
//! Terms combine either with fixed weights, `Σ w_k L_k`, or with learnable
//! uncertainty weights, `Σ exp(-s_k) L_k + s_k`.

use std::collections::BTreeMap;
use std::fmt;

use depthgaze_autograd::{bce_logit, Float, Graph, NodeId};
use serde::{Deserialize, Serialize};

use crate::error::{GazeError, Result};
use crate::types::{HeatmapGrid, LossWeighting};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Heatmap,
    #[serde(rename = "inout")]
    InOut,
    Grl,
    RgbToDepth,
    DepthToRgb,
}

impl LossTerm {
    pub const ALL: [LossTerm; 5] = [
        LossTerm::Heatmap,
        LossTerm::InOut,
        LossTerm::Grl,
        LossTerm::RgbToDepth,
        LossTerm::DepthToRgb,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossTerm::Heatmap => "heatmap",
            LossTerm::InOut => "inout",
            LossTerm::Grl => "grl",
            LossTerm::RgbToDepth => "rgb_to_depth",
            LossTerm::DepthToRgb => "depth_to_rgb",
        }
    }

    /// Terms a mode must supply.
    pub fn required(da_mode: bool) -> &'static [LossTerm] {
        if da_mode {
            &[LossTerm::Heatmap, LossTerm::Grl, LossTerm::RgbToDepth, LossTerm::DepthToRgb]
        } else {
            &[LossTerm::Heatmap, LossTerm::InOut]
        }
    }
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mean squared difference over pixels.
pub fn heatmap_loss(pred: &HeatmapGrid, gt: &HeatmapGrid) -> Result<f64> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(GazeError::Loss(format!(
            "heatmap shape mismatch: {}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let n = pred.data().len() as f64;
    Ok(pred.data().iter().zip(gt.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
}

/// Logistic cross-entropy on a logit.
pub fn inout_loss(logit: f64, label: bool) -> f64 {
    bce_logit(logit, if label { 1.0 } else { 0.0 })
}

/// Per-term weighting state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mode: LossWeighting,
    /// Fixed weights; absent terms weigh 1.
    #[serde(default)]
    pub fixed: BTreeMap<LossTerm, f64>,
    /// Learnable log-variances `s_k`; absent terms start at 0.
    #[serde(default)]
    pub log_vars: BTreeMap<LossTerm, f64>,
}

impl LossWeights {
    pub fn fixed_all(w: f64) -> Self {
        Self {
            mode: LossWeighting::Fixed,
            fixed: LossTerm::ALL.iter().map(|&t| (t, w)).collect(),
            log_vars: BTreeMap::new(),
        }
    }

    pub fn learnable() -> Self {
        Self {
            mode: LossWeighting::LearnableUncertainty,
            fixed: BTreeMap::new(),
            log_vars: BTreeMap::new(),
        }
    }

    pub fn with_fixed(mut self, term: LossTerm, w: f64) -> Self {
        self.fixed.insert(term, w);
        self
    }

    pub fn fixed_weight(&self, term: LossTerm) -> f64 {
        self.fixed.get(&term).copied().unwrap_or(1.0)
    }

    pub fn log_var(&self, term: LossTerm) -> f64 {
        self.log_vars.get(&term).copied().unwrap_or(0.0)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (t, w) in &self.fixed {
            if !(w.is_finite() && *w >= 0.0) {
                v.push(format!("fixed weight for {t} must be finite and >= 0, got {w}"));
            }
        }
        for (t, s) in &self.log_vars {
            if !s.is_finite() {
                v.push(format!("log-variance for {t} must be finite, got {s}"));
            }
        }
        v
    }

    /// `(effective multiplier, additive penalty)` of a term.
    pub fn factors(&self, term: LossTerm) -> (f64, f64) {
        match self.mode {
            LossWeighting::Fixed => (self.fixed_weight(term), 0.0),
            LossWeighting::LearnableUncertainty => {
                let s = self.log_var(term);
                ((-s).exp(), s)
            }
        }
    }
}

/// Itemized loss of one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub terms: BTreeMap<LossTerm, f64>,
    pub weights: BTreeMap<LossTerm, f64>,
    pub penalties: BTreeMap<LossTerm, f64>,
    /// Per-domain diagnostics such as `grl_source` / `grl_target`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, f64>,
}

impl LossReport {
    /// Total rebuilt from the itemized parts.
    pub fn recompute(&self) -> f64 {
        self.terms
            .iter()
            .map(|(t, l)| self.weights[t] * l + self.penalties[t])
            .sum()
    }

    pub fn term(&self, t: LossTerm) -> Option<f64> {
        self.terms.get(&t).copied()
    }
}

fn check_terms(terms: &[LossTerm], da_mode: bool) -> Result<()> {
    if da_mode && terms.contains(&LossTerm::InOut) {
        return Err(GazeError::Loss("in/out excluded under DA".into()));
    }
    for req in LossTerm::required(da_mode) {
        if !terms.contains(req) {
            return Err(GazeError::Loss(format!(
                "missing loss term `{req}` for {} mode",
                if da_mode { "DA" } else { "plain" }
            )));
        }
    }
    Ok(())
}

/// Weighted total of raw term values.
pub fn total_loss(terms: &BTreeMap<LossTerm, f64>, weights: &LossWeights, da_mode: bool) -> Result<(f64, LossReport)> {
    check_terms(&terms.keys().copied().collect::<Vec<_>>(), da_mode)?;
    let mut report = LossReport {
        terms: terms.clone(),
        ..LossReport::default()
    };
    let mut total = 0.0;
    for (&t, &l) in terms {
        let (w, pen) = weights.factors(t);
        total += w * l + pen;
        report.weights.insert(t, w);
        report.penalties.insert(t, pen);
    }
    report.total = total;
    Ok((total, report))
}

/// How a term enters the differentiable total.
#[derive(Clone, Copy, Debug)]
pub enum WeightNode {
    Fixed(f64),
    /// Scalar log-variance parameter node.
    LogVar(NodeId),
}

/// Differentiable weighted total; returns the scalar node.
pub fn total_loss_graph<T: Float>(
    g: &mut Graph<T>,
    terms: &[(LossTerm, NodeId, WeightNode)],
    da_mode: bool,
) -> Result<NodeId> {
    check_terms(&terms.iter().map(|t| t.0).collect::<Vec<_>>(), da_mode)?;
    let mut total: Option<NodeId> = None;
    for &(_, l, w) in terms {
        let part = match w {
            WeightNode::Fixed(w) => g.scale(l, T::of(w)),
            WeightNode::LogVar(s) => {
                let neg = g.scale(s, -T::one());
                let e = g.exp(neg);
                let wl = g.mul(e, l)?;
                g.add(wl, s)?
            }
        };
        total = Some(match total {
            Some(t) => g.add(t, part)?,
            None => part,
        });
    }
    total.ok_or_else(|| GazeError::Loss("no loss terms".into()))
}
