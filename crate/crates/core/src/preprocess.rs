//! Sample → model tensors: bilinear resizing, head crop and mask, depth
//! colorization and ground-truth heatmaps.
//!
//! Bilinear sampling uses the half-pixel (align-corners = false) convention
//! with edge clamping everywhere. Nothing here is random.

use std::sync::OnceLock;

use depthgaze_autograd::Tensor;

use crate::error::{GazeError, Result};
use crate::types::{validate_sample, GazeAnnotation, HeadBox, HeatmapGrid, ImagePlane, ModelConfig, Sample};

/// Raw bytes of the shipped colormap table.
pub const MAGMA_LUT_V1: &str = include_str!("../data/magma_lut_v1.txt");

/// The 256-entry magma lookup table, parsed once.
pub fn magma_lut() -> &'static [[f32; 3]; 256] {
    static LUT: OnceLock<[[f32; 3]; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [[0.0f32; 3]; 256];
        let rows = MAGMA_LUT_V1
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let mut n = 0;
        for (i, line) in rows.enumerate() {
            for (j, v) in line.split_whitespace().enumerate() {
                lut[i][j] = v.parse().expect("magma table is well formed");
            }
            n = i + 1;
        }
        assert_eq!(n, 256, "magma table must have 256 rows");
        lut
    })
}

/// Model-ready tensors for one sample (`S = input_size`).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    /// `[4, S, S]`: RGB scene then head mask.
    pub scene_plus_mask: Tensor<f32>,
    /// `[4, S, S]`: magma-colored depth then the same head mask.
    pub depth_plus_mask: Tensor<f32>,
    /// `[3, S, S]`: head crop.
    pub head_crop: Tensor<f32>,
    /// `[1, S, S]`: min-max normalized grayscale depth (used by ablations).
    pub depth_gray: Tensor<f32>,
}

impl ModelInput {
    pub fn size(&self) -> usize {
        self.head_crop.dim(1)
    }

    pub fn mask(&self) -> &[f32] {
        let n = self.size() * self.size();
        &self.scene_plus_mask.data()[3 * n..4 * n]
    }
}

/// Bilinearly samples the pixel-space rectangle `[x0, x1) × [y0, y1)` of
/// `plane` onto an `out_h × out_w` grid.
pub fn sample_region(
    plane: &ImagePlane,
    (x0, y0, x1, y1): (f64, f64, f64, f64),
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let (h, w) = (plane.height(), plane.width());
    let axis = |o: usize, start: f64, end: f64, n_out: usize, n_in: usize| {
        let s = start + (o as f64 + 0.5) * (end - start) / n_out as f64 - 0.5;
        let s = s.clamp(0.0, (n_in - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|o| axis(o, x0, x1, out_w, w)).collect();
    let ys: Vec<_> = (0..out_h).map(|o| axis(o, y0, y1, out_h, h)).collect();
    let mut out = Vec::with_capacity(plane.channels() * out_h * out_w);
    for c in 0..plane.channels() {
        let src = plane.channel(c);
        for &(ylo, yhi, wy) in &ys {
            for &(xlo, xhi, wx) in &xs {
                let v00 = src[ylo * w + xlo] as f64;
                let v01 = src[ylo * w + xhi] as f64;
                let v10 = src[yhi * w + xlo] as f64;
                let v11 = src[yhi * w + xhi] as f64;
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                out.push((top + (bot - top) * wy) as f32);
            }
        }
    }
    out
}

pub fn resize_bilinear(plane: &ImagePlane, out_h: usize, out_w: usize) -> ImagePlane {
    let data = sample_region(
        plane,
        (0.0, 0.0, plane.width() as f64, plane.height() as f64),
        out_h,
        out_w,
    );
    ImagePlane::new(plane.channels(), out_h, out_w, data).expect("sizes agree")
}

/// Binary `size × size` head mask: 1 where the pixel center lies strictly
/// inside the scaled box. A box too small to cover any center marks the
/// single pixel containing its center.
pub fn render_head_mask(head: &HeadBox, size: usize) -> Vec<f32> {
    let s = size as f64;
    let (x0, x1) = (head.x_min * s, head.x_max * s);
    let (y0, y1) = (head.y_min * s, head.y_max * s);
    let mut mask = vec![0.0f32; size * size];
    let mut any = false;
    for i in 0..size {
        let cy = i as f64 + 0.5;
        if cy <= y0 || cy >= y1 {
            continue;
        }
        for j in 0..size {
            let cx = j as f64 + 0.5;
            if cx > x0 && cx < x1 {
                mask[i * size + j] = 1.0;
                any = true;
            }
        }
    }
    if !any {
        let (cx, cy) = head.center();
        let px = ((cx * s).floor() as usize).min(size - 1);
        let py = ((cy * s).floor() as usize).min(size - 1);
        mask[py * size + px] = 1.0;
    }
    mask
}

/// Bilinear crop of the head box resized to `out_size²`.
pub fn crop_head(scene: &ImagePlane, head: &HeadBox, out_size: usize) -> Vec<f32> {
    let (w, h) = (scene.width() as f64, scene.height() as f64);
    sample_region(
        scene,
        (head.x_min * w, head.y_min * h, head.x_max * w, head.y_max * h),
        out_size,
        out_size,
    )
}

/// Per-image min-max normalization; a constant plane maps to all zeros.
pub fn normalize_depth(depth: &ImagePlane) -> Vec<f64> {
    let (lo, hi) = depth
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v as f64), b.max(v as f64))
        });
    let range = hi - lo;
    depth
        .data()
        .iter()
        .map(|&v| if range > 0.0 { (v as f64 - lo) / range } else { 0.0 })
        .collect()
}

/// Lookup-table index of a normalized depth value.
pub fn lut_index(normalized: f64) -> usize {
    (normalized * 255.0).round().clamp(0.0, 255.0) as usize
}

/// Min-max normalizes a depth plane and maps it through the magma table.
pub fn colorize_depth(depth: &ImagePlane) -> ImagePlane {
    let lut = magma_lut();
    let n = depth.height() * depth.width();
    let norm = normalize_depth(depth);
    let mut data = vec![0.0f32; 3 * n];
    for (i, v) in norm.iter().take(n).enumerate() {
        let rgb = lut[lut_index(*v)];
        for c in 0..3 {
            data[c * n + i] = rgb[c];
        }
    }
    ImagePlane::new(3, depth.height(), depth.width(), data).expect("sizes agree")
}

/// Gaussian ground-truth heatmap with unit peak.
///
/// The Gaussian is centered on pixel `round(p · (grid − 1))` of the mean
/// annotation point `p`, with σ = 3 px at a 64-pixel grid (scaled
/// proportionally). Out-of-frame annotations give an all-zero grid.
pub fn render_gt_heatmap(annotation: &GazeAnnotation, grid: usize) -> HeatmapGrid {
    let Some(p) = annotation.mean_point().filter(|_| annotation.is_inside()) else {
        return HeatmapGrid::zeros(grid, grid);
    };
    let (cx, cy) = (point_to_pixel(p[0], grid), point_to_pixel(p[1], grid));
    let sigma = 3.0 * grid as f64 / 64.0;
    let denom = 2.0 * sigma * sigma;
    let mut data = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            let dy = i as f64 - cy as f64;
            let dx = j as f64 - cx as f64;
            data.push((-(dx * dx + dy * dy) / denom).exp());
        }
    }
    HeatmapGrid::new(grid, grid, data).expect("sizes agree")
}

/// Grid index of a normalized coordinate (corner-aligned: 0 → 0, 1 → grid − 1).
pub fn point_to_pixel(v: f64, grid: usize) -> usize {
    (v.clamp(0.0, 1.0) * (grid - 1) as f64).round() as usize
}

/// Normalized coordinate of a grid index (inverse of [`point_to_pixel`]).
pub fn pixel_to_point(i: usize, grid: usize) -> f64 {
    if grid <= 1 {
        0.5
    } else {
        i as f64 / (grid - 1) as f64
    }
}

pub fn build_model_input(sample: &Sample, config: &ModelConfig) -> Result<ModelInput> {
    let violations = validate_sample(sample);
    if !violations.is_empty() {
        return Err(GazeError::InvalidSample {
            id: sample.sample_id.clone(),
            violations,
        });
    }
    let s = config.input_size;
    let n = s * s;
    let mask = render_head_mask(&sample.head_box, s);

    let scene = resize_bilinear(&sample.scene, s, s);
    let mut scene_plus_mask = scene.data().to_vec();
    scene_plus_mask.extend_from_slice(&mask);

    let colored = resize_bilinear(&colorize_depth(&sample.depth), s, s);
    let mut depth_plus_mask = colored.data().to_vec();
    depth_plus_mask.extend_from_slice(&mask);

    let norm = normalize_depth(&sample.depth);
    let norm_plane = ImagePlane::new(
        1,
        sample.depth.height(),
        sample.depth.width(),
        norm.iter().map(|&v| v as f32).collect(),
    )?;
    let gray = resize_bilinear(&norm_plane, s, s);

    let crop = crop_head(&sample.scene, &sample.head_box, s);
    debug_assert_eq!(crop.len(), 3 * n);
    Ok(ModelInput {
        scene_plus_mask: Tensor::new(&[4, s, s], scene_plus_mask)?,
        depth_plus_mask: Tensor::new(&[4, s, s], depth_plus_mask)?,
        head_crop: Tensor::new(&[3, s, s], crop)?,
        depth_gray: Tensor::new(&[1, s, s], gray.data().to_vec())?,
    })
}
