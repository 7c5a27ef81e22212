//! Heatmap AUC, average distance and reference baselines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::preprocess::{pixel_to_point, point_to_pixel, render_gt_heatmap};
use crate::types::{GazeAnnotation, HeatmapGrid, Sample};

/// Row-major indices of the pixels nearest each annotation point (deduplicated).
pub fn positive_pixels(grid: &HeatmapGrid, annotation: &GazeAnnotation) -> Vec<usize> {
    let mut idx: Vec<usize> = annotation
        .points
        .iter()
        .map(|p| point_to_pixel(p[1], grid.height()) * grid.width() + point_to_pixel(p[0], grid.width()))
        .collect();
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// Mann–Whitney AUC of the prediction scores, annotated pixels against all
/// others, with average ranks for ties. Degenerate cases (no positives or
/// no negatives) give 0.5.
pub fn heatmap_auc(pred: &HeatmapGrid, annotation: &GazeAnnotation) -> f64 {
    let pos = positive_pixels(pred, annotation);
    let n = pred.data().len();
    let (np, nn) = (pos.len(), n - pos.len());
    if np == 0 || nn == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pred.data()[a].total_cmp(&pred.data()[b]));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pred.data()[order[j + 1]] == pred.data()[order[i]] {
            j += 1;
        }
        // ranks are 1-based; a tie group i..=j shares the mean rank
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    let rank_sum: f64 = pos.iter().map(|&k| ranks[k]).sum();
    let u = rank_sum - (np * (np + 1)) as f64 / 2.0;
    u / (np * nn) as f64
}

/// Normalized `(x, y)` of the argmax pixel (lowest row-major index on ties).
pub fn predicted_point(pred: &HeatmapGrid) -> [f64; 2] {
    let (r, c) = pred.argmax();
    [pixel_to_point(c, pred.width()), pixel_to_point(r, pred.height())]
}

/// Euclidean distance from the predicted point to the mean annotation point.
pub fn avg_distance(pred: &HeatmapGrid, annotation: &GazeAnnotation) -> f64 {
    let p = predicted_point(pred);
    let Some(m) = annotation.mean_point() else {
        return f64::NAN;
    };
    ((p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    Center,
    FixedBias,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Random, BaselineKind::Center, BaselineKind::FixedBias];

    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineKind::Random => "random",
            BaselineKind::Center => "center",
            BaselineKind::FixedBias => "fixed_bias",
        }
    }
}

/// Mean training heatmap per head-center quadrant.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedBias {
    quadrants: [Option<HeatmapGrid>; 4],
    global: HeatmapGrid,
}

fn quadrant(sample: &Sample) -> usize {
    let (x, y) = sample.head_box.center();
    usize::from(x >= 0.5) + 2 * usize::from(y >= 0.5)
}

impl FixedBias {
    pub fn fit(train: &[Sample], grid: usize) -> Self {
        let mut sums = vec![vec![0.0f64; grid * grid]; 4];
        let mut counts = [0usize; 4];
        for s in train {
            if !s.annotation.is_inside() {
                continue;
            }
            let q = quadrant(s);
            let gt = render_gt_heatmap(&s.annotation, grid);
            for (a, v) in sums[q].iter_mut().zip(gt.data()) {
                *a += v;
            }
            counts[q] += 1;
        }
        let total: usize = counts.iter().sum();
        let mut global = vec![0.0f64; grid * grid];
        for s in &sums {
            for (g, v) in global.iter_mut().zip(s) {
                *g += v;
            }
        }
        let norm = |v: &[f64], n: usize| {
            HeatmapGrid::new(grid, grid, v.iter().map(|x| x / n.max(1) as f64).collect()).expect("grid shape")
        };
        let quadrants = std::array::from_fn(|q| (counts[q] > 0).then(|| norm(&sums[q], counts[q])));
        Self {
            quadrants,
            global: norm(&global, total),
        }
    }

    pub fn predict(&self, sample: &Sample) -> HeatmapGrid {
        self.quadrants[quadrant(sample)].clone().unwrap_or_else(|| self.global.clone())
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Per-pixel standard-normal scores, seeded by `(seed, sample_id)`.
pub fn random_baseline(seed: u64, sample_id: &str, grid: usize) -> HeatmapGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(sample_id));
    let data = (0..grid * grid).map(|_| StandardNormal.sample(&mut rng)).collect();
    HeatmapGrid::new(grid, grid, data).expect("grid shape")
}

pub fn center_baseline(grid: usize) -> HeatmapGrid {
    render_gt_heatmap(&GazeAnnotation::single(0.5, 0.5), grid)
}

/// Reference predictions that ignore the image content.
#[derive(Clone, Debug)]
pub struct Baselines {
    pub seed: u64,
    pub grid: usize,
    pub fixed_bias: FixedBias,
}

impl Baselines {
    pub fn fit(train: &[Sample], grid: usize, seed: u64) -> Self {
        Self {
            seed,
            grid,
            fixed_bias: FixedBias::fit(train, grid),
        }
    }

    pub fn predict(&self, kind: BaselineKind, sample: &Sample) -> HeatmapGrid {
        match kind {
            BaselineKind::Random => random_baseline(self.seed, &sample.sample_id, self.grid),
            BaselineKind::Center => center_baseline(self.grid),
            BaselineKind::FixedBias => self.fixed_bias.predict(sample),
        }
    }
}

/// One baseline prediction; `fixed_bias` fits on `train` each call.
pub fn baseline_predictions(kind: BaselineKind, train: &[Sample], sample: &Sample, grid: usize, seed: u64) -> HeatmapGrid {
    match kind {
        BaselineKind::FixedBias => FixedBias::fit(train, grid).predict(sample),
        _ => Baselines {
            seed,
            grid,
            fixed_bias: FixedBias::fit(&[], grid),
        }
        .predict(kind, sample),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, v: Vec<f64>) -> HeatmapGrid {
        HeatmapGrid::new(n, n, v).unwrap()
    }

    #[test]
    fn auc_examples() {
        // 2x2 grid: positive at (row 1, col 1)
        let p = grid(2, vec![0.9, 0.1, 0.4, 0.6]);
        let a = GazeAnnotation::single(1.0, 1.0);
        assert!((heatmap_auc(&p, &a) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(heatmap_auc(&grid(4, vec![0.3; 16]), &a), 0.5);
        let mut one_hot = vec![0.0; 16];
        one_hot[15] = 1.0;
        assert_eq!(heatmap_auc(&grid(4, one_hot), &a), 1.0);
    }

    #[test]
    fn distance_examples() {
        let mut v = vec![0.0; 64 * 64];
        v[0] = 1.0;
        let d = avg_distance(&grid(64, v), &GazeAnnotation::single(1.0, 1.0));
        assert!((d - 2f64.sqrt()).abs() < 1e-9);
        let mut v = vec![0.0; 64 * 64];
        v[16 * 64 + 16] = 1.0;
        let d = avg_distance(&grid(64, v), &GazeAnnotation::single(0.75, 0.75));
        let c = 16.0 / 63.0;
        assert!((d - ((0.75 - c) * 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn center_baseline_peaks_at_center() {
        let c = center_baseline(64);
        assert_eq!(c.argmax(), (32, 32));
        assert_eq!(c.max(), 1.0);
    }

    #[test]
    fn random_baseline_is_seeded() {
        assert_eq!(random_baseline(1, "a", 8), random_baseline(1, "a", 8));
        assert_ne!(random_baseline(1, "a", 8), random_baseline(1, "b", 8));
    }
}
