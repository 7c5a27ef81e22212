use depthgaze::preprocess::{
    colorize_depth, magma_lut, pixel_to_point, point_to_pixel, render_gt_heatmap, MAGMA_LUT_V1,
};
use depthgaze::{GazeAnnotation, ImagePlane};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

#[test]
fn lookup_table_is_pinned() {
    let digest = Sha256::digest(MAGMA_LUT_V1.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(hex, "f8ad6f03e83911593cb524b0d94be73a90f1ad16d0078ef6ca368a45090ff287");
    assert_eq!(magma_lut().len(), 256);
}

#[test]
fn gt_heatmap_peak_and_falloff() {
    for (x, y) in [(0.5, 0.5), (0.1, 0.9), (0.73, 0.21)] {
        let h = render_gt_heatmap(&GazeAnnotation::single(x, y), 64);
        let (r, c) = h.argmax();
        assert_eq!((r, c), (point_to_pixel(y, 64), point_to_pixel(x, 64)));
        assert_eq!(h.max(), 1.0);
        let off = if c + 3 < 64 { c + 3 } else { c - 3 };
        assert!((h.get(r, off) - (-0.5f64).exp()).abs() < 1e-6);
    }
}

#[test]
fn out_of_frame_heatmap_is_zero() {
    let ann = GazeAnnotation {
        points: vec![[0.5, 0.5]],
        inside_frame: Some(false),
    };
    assert!(render_gt_heatmap(&ann, 32).data().iter().all(|&v| v == 0.0));
}

proptest! {
    #[test]
    fn pixel_round_trip_within_half_pixel(v in 0.0f64..=1.0, grid in 2usize..200) {
        let back = pixel_to_point(point_to_pixel(v, grid), grid);
        prop_assert!((back - v).abs() <= 0.5 / (grid - 1) as f64 + 1e-12);
    }

    #[test]
    fn colorize_is_invariant_to_positive_affine_depth(
        k in prop::collection::vec(0u8..=255, 34),
        a in 0.5f32..4.0,
        b in -2.0f32..2.0,
    ) {
        // full range present and every value on a table bin center
        let mut d = vec![0.0f32, 1.0];
        d.extend(k.iter().map(|&v| f32::from(v) / 255.0));
        let base = ImagePlane::new(1, 6, 6, d.clone()).unwrap();
        let moved = ImagePlane::new(1, 6, 6, d.iter().map(|v| a * v + b).collect()).unwrap();
        prop_assert_eq!(colorize_depth(&base), colorize_depth(&moved));
    }
}
