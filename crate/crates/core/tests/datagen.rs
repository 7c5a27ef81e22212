use depthgaze::datagen::{
    generate_synthetic, generate_synthetic_scenes, load_annotations, write_dataset, DomainStyle,
    SyntheticDepthProvider, SynthSpec, HEAD_DEPTH, TARGET_DEPTH,
};
use depthgaze::{validate_sample, DomainRole};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_samples_are_valid_and_reproducible(seed in 0u64..10_000, b in any::<bool>()) {
        let style = if b { DomainStyle::StyleA } else { DomainStyle::StyleB };
        let spec = SynthSpec::new(32, 6, seed, style);
        let a = generate_synthetic_scenes(&spec).unwrap();
        let again = generate_synthetic_scenes(&spec).unwrap();
        prop_assert_eq!(&a, &again);
        for s in &a {
            prop_assert!(validate_sample(&s.sample).is_empty());
            prop_assert_eq!(&s.sample.domain.name, style.name());
            let [tx, ty] = s.meta.target;
            let [hx, hy] = s.meta.head_center;
            // the head faces its target
            let (dx, dy) = (tx - hx, ty - hy);
            let (ox, oy) = (s.meta.orientation.cos(), s.meta.orientation.sin());
            prop_assert!(((dx * ox + dy * oy) / dx.hypot(dy) - 1.0).abs() < 1e-9);
            prop_assert_eq!(s.sample.annotation.points[0], s.meta.target);
        }
    }
}

#[test]
fn depth_planes_separate_head_and_target() {
    let scenes = generate_synthetic_scenes(&SynthSpec::new(64, 4, 3, DomainStyle::StyleA)).unwrap();
    for s in scenes {
        let d = &s.sample.depth;
        let at = |p: [f64; 2]| {
            let x = (p[0] * (d.width() - 1) as f64).round() as usize;
            let y = (p[1] * (d.height() - 1) as f64).round() as usize;
            d.get(0, y, x) as f64
        };
        assert!((at(s.meta.head_center) - HEAD_DEPTH).abs() < 1e-3);
        assert!((at(s.meta.target) - TARGET_DEPTH).abs() < 1e-3);
    }
}

#[test]
fn styles_differ_for_the_same_seed() {
    let a = generate_synthetic(&SynthSpec::new(32, 1, 5, DomainStyle::StyleA)).unwrap();
    let b = generate_synthetic(&SynthSpec::new(32, 1, 5, DomainStyle::StyleB)).unwrap();
    assert_ne!(a[0].scene, b[0].scene);
}

#[test]
fn written_dataset_loads_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate_synthetic(&SynthSpec::new(32, 5, 9, DomainStyle::StyleB)).unwrap();
    let ann = write_dataset(&samples, dir.path()).unwrap();
    let provider = SyntheticDepthProvider::new();
    provider.register_samples(&samples);
    let loaded = load_annotations(&ann, dir.path(), DomainRole::Source, &provider).unwrap();
    assert_eq!(loaded.len(), samples.len());
    for (l, s) in loaded.iter().zip(&samples) {
        assert_eq!(l.scene, s.scene);
        assert_eq!(l.annotation, s.annotation);
        assert_eq!(l.head_box, s.head_box);
    }
}
