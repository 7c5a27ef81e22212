use depthgaze::preprocess::resize_bilinear;
use depthgaze::{HeatmapGrid, ImagePlane};

/// Scene with the heatmap blended in red and a white cross at the argmax.
pub fn render_overlay(scene: &ImagePlane, heatmap: &HeatmapGrid) -> ImagePlane {
    let (h, w) = (scene.height(), scene.width());
    let max = heatmap.max().max(f64::MIN_POSITIVE);
    let hm = ImagePlane::new(
        1,
        heatmap.height(),
        heatmap.width(),
        heatmap
            .data()
            .iter()
            .map(|&v| (v / max).clamp(0.0, 1.0) as f32)
            .collect(),
    )
    .expect("heatmap sizes agree");
    let hm = resize_bilinear(&hm, h, w);
    let mut out = scene.clone();
    for y in 0..h {
        for x in 0..w {
            let a = 0.6 * hm.get(0, y, x);
            out.set(0, y, x, (1.0 - a) * scene.get(0, y, x) + a);
            for c in 1..3 {
                out.set(c, y, x, (1.0 - a) * scene.get(c, y, x));
            }
        }
    }
    let (r, c) = heatmap.argmax();
    let py = (r as f64 / (heatmap.height() - 1).max(1) as f64 * (h - 1) as f64).round() as i64;
    let px = (c as f64 / (heatmap.width() - 1).max(1) as f64 * (w - 1) as f64).round() as i64;
    let arm = (w.min(h) / 32).max(2) as i64;
    for d in -arm..=arm {
        for (y, x) in [(py + d, px), (py, px + d)] {
            if (0..h as i64).contains(&y) && (0..w as i64).contains(&x) {
                for ch in 0..3 {
                    out.set(ch, y as usize, x as usize, 1.0);
                }
            }
        }
    }
    out
}
