//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! `ACCEPTANCE_ONLY=1,4,7` restricts the run to the listed criteria.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use depthgaze::datagen::{generate_synthetic, DomainStyle, SynthSpec};
use depthgaze::domain_adapt::grl;
use depthgaze::losses::LossTerm;
use depthgaze::metrics::{avg_distance, heatmap_auc, positive_pixels, BaselineKind};
use depthgaze::model::{apply_attention, channel_product, Model, ModelBatch};
use depthgaze::preprocess::{point_to_pixel, render_gt_heatmap};
use depthgaze::train::{
    evaluate, fit, load_checkpoint, prepare, save_checkpoint, FitData, MetricReport, TrainBatch, TrainConfig,
    TrainMode, Trainer,
};
use depthgaze::{DomainRole, FusionVariant, GazeAnnotation, HeatmapGrid, LossWeighting, ModelConfig, Sample};
use depthgaze_autograd::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_secs: f64, detail: String) -> Check {
    let secs = elapsed.as_secs_f64();
    ensure(secs < limit_secs, format!("{detail}; {secs:.1}s (limit {limit_secs}s)"))
}

// ---------------------------------------------------------------------------

fn grl_linear_probe() -> Check {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for lambda in [0.0, 0.5, 1.0, 2.0] {
        let x = random_tensor(&mut r, &[1, 16]);
        let w = random_tensor(&mut r, &[1, 16]);
        let mut g = Graph::<f64>::new();
        let xn = g.param(x);
        let wn = g.input(w.clone());
        let rev = grl(&mut g, xn, lambda);
        let prod = g.mul(rev, wn).map_err(|e| e.to_string())?;
        let y = g.sum(prod);
        if g.value(rev).data() != g.value(xn).data() {
            return Err(format!("forward is not the identity at lambda {lambda}"));
        }
        let grads = g.backward(y).map_err(|e| e.to_string())?;
        let gx = grads.get(xn).ok_or("no gradient for x")?;
        for (gv, wv) in gx.data().iter().zip(w.data()) {
            worst = worst.max((gv - (-lambda * wv)).abs());
        }
    }
    if worst > 1e-12 {
        return Err(format!("max |grad + lambda w| = {worst:e}"));
    }
    within(start.elapsed(), 1.0, format!("max |grad + lambda w| = {worst:e}"))
}

fn fusion_oracles() -> Check {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (n, c, h, w) = (
            r.random_range(1..4usize),
            r.random_range(1..7usize),
            r.random_range(1..5usize),
            r.random_range(1..5usize),
        );
        let e = random_tensor(&mut r, &[n, c, h, w]);
        let a = random_tensor(&mut r, &[n, h * w]);
        let b = random_tensor(&mut r, &[n, c, h, w]);
        let mut g = Graph::<f64>::new();
        let (en, an, bn) = (g.input(e.clone()), g.input(a.clone()), g.input(b.clone()));
        let att = apply_attention(&mut g, en, an).map_err(|e| e.to_string())?;
        let prod = channel_product(&mut g, en, bn).map_err(|e| e.to_string())?;
        let (att, prod) = (g.value(att).data(), g.value(prod).data());
        for ni in 0..n {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let k = ((ni * c + ci) * h + i) * w + j;
                        let expect_att = e.data()[k] * a.data()[ni * h * w + i * w + j];
                        let expect_prod = e.data()[k] * b.data()[k];
                        worst = worst.max((att[k] - expect_att).abs()).max((prod[k] - expect_prod).abs());
                    }
                }
            }
        }
    }
    if worst > 1e-12 {
        return Err(format!("loop oracle mismatch {worst:e}"));
    }

    let swap_gap = |variant: FusionVariant| -> Result<f64, String> {
        let cfg = ModelConfig::toy(64, 16).with_variant(variant);
        let model = Model::<f64>::new(&cfg).map_err(|e| e.to_string())?;
        let mut r = rng(3);
        // perturb so the zero-initialized output stage does not hide asymmetry
        let mut model = model;
        for id in model.params.ids().collect::<Vec<_>>() {
            for v in model.params.get_mut(id).data_mut() {
                *v += 0.05 * r.random_range(-1.0..1.0);
            }
        }
        let c = if variant == FusionVariant::V10 {
            model.decoder_input_channels() / 2
        } else {
            model.decoder_input_channels()
        };
        let s = cfg.feature_size();
        let hs = random_tensor(&mut r, &[2, c, s, s]);
        let hd = random_tensor(&mut r, &[2, c, s, s]);
        let mut g = Graph::<f64>::new();
        let p = model.params.bind_frozen(&mut g);
        let (a, b) = (g.input(hs), g.input(hd));
        let ab = model.predict_heatmap(&mut g, &p, a, Some(b)).map_err(|e| e.to_string())?;
        let ba = model.predict_heatmap(&mut g, &p, b, Some(a)).map_err(|e| e.to_string())?;
        Ok(g.value(ab)
            .data()
            .iter()
            .zip(g.value(ba).data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    };
    let full = swap_gap(FusionVariant::Full)?;
    let v10 = swap_gap(FusionVariant::V10)?;
    ensure(
        full == 0.0 && v10 > 1e-6,
        format!("oracle error {worst:e}; swap gap full {full:e}, v10 {v10:e}"),
    )
}

fn toy_gradcheck() -> Check {
    let start = Instant::now();
    let cfg = ModelConfig::toy(64, 32);
    let mut model = Model::<f64>::new(&cfg).map_err(|e| e.to_string())?;
    let mut r = rng(4);
    for id in model.params.ids().collect::<Vec<_>>() {
        for v in model.params.get_mut(id).data_mut() {
            *v += 0.05 * r.random_range(-1.0..1.0);
        }
    }
    let samples = generate_synthetic(&SynthSpec::new(64, 2, 4, DomainStyle::StyleA)).map_err(|e| e.to_string())?;
    let prepared = prepare(&samples, &cfg).map_err(|e| e.to_string())?;
    let batch = TrainBatch::<f64>::from_prepared(&prepared.iter().collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    let mask = vec![1.0; batch.len()];

    let loss = |model: &Model<f64>, with_grad: bool| -> (f64, Vec<Option<Tensor<f64>>>) {
        let mut g = Graph::new();
        let p = if with_grad {
            model.params.bind(&mut g)
        } else {
            model.params.bind_frozen(&mut g)
        };
        let out = model.forward_graph(&mut g, &p, &batch.inputs).expect("forward");
        let heat = g.mse_loss(out.heatmap, &batch.gt, &mask).expect("mse");
        let io = g.bce_with_logits(out.inout_logit, &mask, &mask).expect("bce");
        let total = g.add(heat, io).expect("add");
        let value = g.value(total).data()[0];
        if !with_grad {
            return (value, Vec::new());
        }
        let mut grads = g.backward(total).expect("backward");
        (value, p.gradients(&mut grads))
    };
    let (_, grads) = loss(&model, true);

    let mut report = Vec::new();
    let mut failed = false;
    for pathway in ["head.", "scene.", "depth.", "fuse_", "decoder.", "inout."] {
        let ids: Vec<_> = model.params.ids().filter(|&id| model.params.name(id).starts_with(pathway)).collect();
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let id = ids[r.random_range(0..ids.len())];
            let k = r.random_range(0..model.params.get(id).len());
            let analytic = grads[id.index()].as_ref().map_or(0.0, |t| t.data()[k]);
            let h = 1e-6;
            let orig = model.params.get(id).data()[k];
            model.params.get_mut(id).data_mut()[k] = orig + h;
            let (lp, _) = loss(&model, false);
            model.params.get_mut(id).data_mut()[k] = orig - h;
            let (lm, _) = loss(&model, false);
            model.params.get_mut(id).data_mut()[k] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs());
            let err = if scale < 1e-9 { 0.0 } else { (analytic - numeric).abs() / scale };
            worst = worst.max(err);
        }
        failed |= worst >= 1e-3;
        report.push(format!("{}={worst:.1e}", pathway.trim_end_matches(['.', '_'])));
    }
    let detail = format!("max relative error per pathway: {}", report.join(" "));
    if failed {
        return Err(detail);
    }
    within(start.elapsed(), 120.0, detail)
}

fn auc_oracle() -> Check {
    let mut r = rng(5);
    for case in 0..200 {
        let (h, w) = (r.random_range(2..=16usize), r.random_range(2..=16usize));
        let grid = HeatmapGrid::new(h, w, (0..h * w).map(|_| r.random_range(0..5u32) as f64).collect())
            .map_err(|e| e.to_string())?;
        let ann = GazeAnnotation {
            points: (0..r.random_range(1..4)).map(|_| [r.random_range(0.0..=1.0), r.random_range(0.0..=1.0)]).collect(),
            inside_frame: Some(true),
        };
        let pos = positive_pixels(&grid, &ann);
        let d = grid.data();
        let (mut s, mut pairs) = (0.0, 0usize);
        for &p in &pos {
            for n in (0..d.len()).filter(|i| !pos.contains(i)) {
                s += if d[p] > d[n] {
                    1.0
                } else if d[p] == d[n] {
                    0.5
                } else {
                    0.0
                };
                pairs += 1;
            }
        }
        let oracle = if pairs == 0 { 0.5 } else { s / pairs as f64 };
        let got = heatmap_auc(&grid, &ann);
        if got != oracle {
            return Err(format!("case {case}: auc {got} vs oracle {oracle}"));
        }
    }
    let constant = heatmap_auc(&HeatmapGrid::new(8, 8, vec![0.25; 64]).unwrap(), &GazeAnnotation::single(0.3, 0.6));
    let mut corner = HeatmapGrid::zeros(64, 64);
    corner.data_mut()[0] = 1.0;
    let dist = avg_distance(&corner, &GazeAnnotation::single(1.0, 1.0));
    ensure(
        constant == 0.5 && (dist - 2f64.sqrt()).abs() <= 1e-9,
        format!("200 cases exact; constant map {constant}; corner distance {dist:.12}"),
    )
}

fn gt_heatmap() -> Check {
    let mut worst = 0.0f64;
    for (x, y) in [(0.5, 0.5), (0.25, 0.75), (0.9, 0.1), (0.37, 0.62)] {
        let hm = render_gt_heatmap(&GazeAnnotation::single(x, y), 64);
        let (r, c) = hm.argmax();
        if (r, c) != (point_to_pixel(y, 64), point_to_pixel(x, 64)) || hm.max() != 1.0 {
            return Err(format!("peak at {:?} value {} for ({x}, {y})", (r, c), hm.max()));
        }
        let off = if c + 3 < 64 { c + 3 } else { c - 3 };
        worst = worst.max((hm.get(r, off) - (-0.5f64).exp()).abs());
    }
    ensure(worst <= 1e-6, format!("peak 1 at target pixel; |h(3px) - exp(-1/2)| <= {worst:e}"))
}

fn overfit_probe() -> Check {
    let start = Instant::now();
    let cfg = ModelConfig::toy(64, 32);
    let tc = TrainConfig {
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let samples = generate_synthetic(&SynthSpec::new(64, 8, 6, DomainStyle::StyleA)).map_err(|e| e.to_string())?;
    let prepared = prepare(&samples, &cfg).map_err(|e| e.to_string())?;
    let batch = TrainBatch::<f32>::from_prepared(&prepared.iter().collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::<f32>::new(&cfg, &tc).map_err(|e| e.to_string())?;
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..200 {
        let rep = trainer.train_step(&batch).map_err(|e| e.to_string())?;
        last = rep.term(LossTerm::Heatmap).unwrap();
        first.get_or_insert(last);
    }
    let first = first.unwrap();
    let ratio = last / first;
    if ratio >= 0.1 {
        return Err(format!("heatmap loss {first:.5} -> {last:.5} (ratio {ratio:.3})"));
    }
    within(start.elapsed(), 180.0, format!("heatmap loss {first:.5} -> {last:.5} (ratio {ratio:.3})"))
}

// ---------------------------------------------------------------------------
// Synthetic benchmark runs shared by the end-to-end, distractor and domain criteria.

const BENCH_INPUT: usize = 64;
const BENCH_CHANNELS: usize = 48;
const BENCH_LR: f64 = 3e-3;
const BENCH_EPOCHS: usize = 15;
const BENCH_TRAIN: usize = 2000;
const BENCH_SEEDS: [u64; 3] = [0, 1, 2];

fn bench_model(variant: FusionVariant, seed: u64) -> ModelConfig {
    ModelConfig::toy(BENCH_INPUT, BENCH_CHANNELS).with_variant(variant).with_seed(seed)
}

fn bench_train(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: BENCH_EPOCHS,
        learning_rate: BENCH_LR,
        seed,
        ..TrainConfig::default()
    }
}

struct SeedData {
    train: Vec<Sample>,
    val: Vec<Sample>,
    test: Vec<Sample>,
    target_train: Vec<Sample>,
    target_test: Vec<Sample>,
}

fn seed_data(seed: u64) -> SeedData {
    let gen = |n, offset: u64, style, role| {
        generate_synthetic(&SynthSpec::new(BENCH_INPUT, n, seed * 10 + offset, style).with_role(role)).expect("generate")
    };
    SeedData {
        train: gen(BENCH_TRAIN, 1000, DomainStyle::StyleA, DomainRole::Source),
        val: gen(300, 2000, DomainStyle::StyleA, DomainRole::Source),
        test: gen(500, 3000, DomainStyle::StyleA, DomainRole::Source),
        target_train: gen(BENCH_TRAIN, 4000, DomainStyle::StyleB, DomainRole::Target),
        target_test: gen(500, 5000, DomainStyle::StyleB, DomainRole::Target),
    }
}

struct SeedRuns {
    full_source: MetricReport,
    full_secs: f64,
    full_target: MetricReport,
    v2_source: MetricReport,
    da_target: MetricReport,
    da_secs: f64,
    onray_full: f64,
    onray_v2: f64,
}

fn onray_distance(report: &MetricReport) -> f64 {
    let d: Vec<f64> = report
        .per_sample
        .iter()
        .filter(|m| m.sample_id.ends_with("-onray"))
        .map(|m| m.avg_distance)
        .collect();
    d.iter().sum::<f64>() / d.len().max(1) as f64
}

fn run_seed(seed: u64) -> Result<SeedRuns, String> {
    let data = seed_data(seed);
    let err = |e: depthgaze::GazeError| e.to_string();
    let plain = FitData {
        train: &data.train,
        val: &data.val,
        target: None,
    };
    let t0 = Instant::now();
    let (full, _) = fit::<f32>(&bench_model(FusionVariant::Full, seed), &bench_train(seed), plain, TrainMode::Plain, None)
        .map_err(err)?;
    let full_secs = t0.elapsed().as_secs_f64();
    let full_source = evaluate(&full.model, &data.test, &data.train, seed).map_err(err)?;
    let full_target = evaluate(&full.model, &data.target_test, &data.train, seed).map_err(err)?;

    let (v2, _) =
        fit::<f32>(&bench_model(FusionVariant::V2, seed), &bench_train(seed), plain, TrainMode::Plain, None).map_err(err)?;
    let v2_source = evaluate(&v2.model, &data.test, &data.train, seed).map_err(err)?;

    let mut da_cfg = bench_model(FusionVariant::Full, seed);
    da_cfg.da_enabled = true;
    let t1 = Instant::now();
    let (da, _) = fit::<f32>(
        &da_cfg,
        &bench_train(seed),
        FitData {
            train: &data.train,
            val: &data.val,
            target: Some(&data.target_train),
        },
        TrainMode::Da,
        None,
    )
    .map_err(err)?;
    let da_secs = t1.elapsed().as_secs_f64();
    let da_target = evaluate(&da.model, &data.target_test, &data.train, seed).map_err(err)?;
    eprintln!(
        "  seed {seed}: full {:.4}/{:.4} ({full_secs:.0}s)  v2 {:.4}/{:.4}  target plain {:.4} da {:.4} ({da_secs:.0}s)",
        full_source.auc, full_source.avg_distance, v2_source.auc, v2_source.avg_distance, full_target.auc, da_target.auc
    );
    Ok(SeedRuns {
        onray_full: onray_distance(&full_source),
        onray_v2: onray_distance(&v2_source),
        full_source,
        full_secs,
        full_target,
        v2_source,
        da_target,
        da_secs,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn synthetic_end_to_end(runs: &[SeedRuns]) -> Check {
    let r = &runs[0];
    let m = &r.full_source;
    let center = m.baseline(BaselineKind::Center).map(|b| b.auc).unwrap_or(f64::NAN);
    let detail = format!(
        "held-out AUC {:.4}, Avg.Dist {:.4}, center baseline AUC {center:.4}; train {:.0}s",
        m.auc, m.avg_distance, r.full_secs
    );
    ensure(
        m.auc >= 0.85 && m.avg_distance <= 0.15 && m.auc >= center + 0.10 && r.full_secs < 1200.0,
        detail,
    )
}

fn distractors(runs: &[SeedRuns]) -> Check {
    let full = mean(runs.iter().map(|r| r.onray_full));
    let v2 = mean(runs.iter().map(|r| r.onray_v2));
    let full_all = mean(runs.iter().map(|r| r.full_source.avg_distance));
    let v2_all = mean(runs.iter().map(|r| r.v2_source.avg_distance));
    ensure(
        full <= v2,
        format!("on-ray Avg.Dist full {full:.4} vs v2 {v2:.4} (all samples {full_all:.4} vs {v2_all:.4})"),
    )
}

fn domain_gap(runs: &[SeedRuns]) -> Check {
    let source = mean(runs.iter().map(|r| r.full_source.auc));
    let target = mean(runs.iter().map(|r| r.full_target.auc));
    let da = mean(runs.iter().map(|r| r.da_target.auc));
    let secs: f64 = runs.iter().map(|r| r.full_secs + r.da_secs).sum();
    let detail = format!(
        "source AUC {source:.4}, target AUC {target:.4} (drop {:.4}); with DA {da:.4} (gain {:.4}); {secs:.0}s",
        source - target,
        da - target
    );
    ensure(source - target >= 0.05 && da - target >= 0.02 && secs < 2700.0, detail)
}

// ---------------------------------------------------------------------------

fn small_samples(n: usize, seed: u64) -> Vec<Sample> {
    generate_synthetic(&SynthSpec::new(32, n, seed, DomainStyle::StyleA)).expect("generate")
}

fn all_variants() -> Check {
    let samples = small_samples(2, 7);
    let mut cfg = ModelConfig::toy(32, 8);
    cfg.heatmap_size = 16;
    let prepared = prepare(&samples, &cfg).map_err(|e| e.to_string())?;
    let batch = TrainBatch::<f32>::from_prepared(&prepared.iter().collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    let mut channels = Vec::new();
    for v in FusionVariant::ALL {
        let c = cfg.clone().with_variant(v);
        let mut t = Trainer::<f32>::new(&c, &TrainConfig::default()).map_err(|e| format!("{}: {e}", v.as_str()))?;
        let before = t.model.params.clone();
        let out = t.model.predict(&batch.inputs).map_err(|e| format!("{}: {e}", v.as_str()))?;
        if out.len() != 2 || out.iter().any(|o| o.heatmap.height() != 16 || !o.inout_logit.is_finite()) {
            return Err(format!("{}: bad forward output", v.as_str()));
        }
        t.train_step(&batch).map_err(|e| format!("{}: {e}", v.as_str()))?;
        let moved = before.iter().zip(t.model.params.iter()).any(|((_, _, a), (_, _, b))| a.data() != b.data());
        if !moved {
            return Err(format!("{}: train step left parameters unchanged", v.as_str()));
        }
        if matches!(v, FusionVariant::V5 | FusionVariant::V6 | FusionVariant::V7) {
            channels.push((v, t.model.scene_input_channels()));
        }
    }
    let expect = [(FusionVariant::V5, Some(4)), (FusionVariant::V6, Some(5)), (FusionVariant::V7, Some(7))];
    ensure(
        channels == expect,
        format!("12 configurations trained; scene input channels {channels:?}"),
    )
}

fn determinism() -> Check {
    let train = small_samples(16, 8);
    let val = small_samples(8, 9);
    let mut cfg = ModelConfig::toy(32, 8);
    cfg.heatmap_size = 16;
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 4,
        learning_rate: 3e-3,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = || -> Result<(String, Trainer<f32>), String> {
        let data = FitData {
            train: &train,
            val: &val,
            target: None,
        };
        let (t, rec) = fit::<f32>(&cfg, &tc, data, TrainMode::Plain, None).map_err(|e| e.to_string())?;
        let report = evaluate(&t.model, &val, &train, tc.seed).map_err(|e| e.to_string())?;
        Ok((format!("{}{}", rec.final_metrics.to_json(), report.to_json()), t))
    };
    let (a, trainer) = run()?;
    let (b, _) = run()?;
    if a != b {
        return Err("metric reports differ between identical runs".into());
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&trainer, &path).map_err(|e| e.to_string())?;
    let loaded: Trainer<f32> = load_checkpoint(&path).map_err(|e| e.to_string())?;
    let prepared = prepare(&val, &cfg).map_err(|e| e.to_string())?;
    let batch =
        ModelBatch::<f32>::from_inputs(&prepared.iter().map(|p| &p.input).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    let x = trainer.model.predict(&batch).map_err(|e| e.to_string())?;
    let y = loaded.model.predict(&batch).map_err(|e| e.to_string())?;
    let identical = x.iter().zip(&y).all(|(p, q)| {
        p.inout_logit.to_bits() == q.inout_logit.to_bits()
            && p.heatmap.data().iter().zip(q.heatmap.data()).all(|(u, v)| u.to_bits() == v.to_bits())
    });
    ensure(
        identical,
        format!("{}-byte reports identical; reloaded forward bit-identical: {identical}", a.len()),
    )
}

fn da_off_equivalence() -> Check {
    let source = small_samples(16, 12);
    let target = generate_synthetic(&SynthSpec::new(32, 16, 13, DomainStyle::StyleB).with_role(DomainRole::Target))
        .map_err(|e| e.to_string())?;
    let mut base = ModelConfig::toy(32, 8);
    base.heatmap_size = 16;
    base.loss_weighting = LossWeighting::Fixed;
    base.grl_lambda = 0.0;
    let mut da_cfg = base.clone();
    da_cfg.da_enabled = true;
    let tc = TrainConfig {
        learning_rate: 3e-3,
        ..TrainConfig::default()
    }
    .with_weight(LossTerm::InOut, 0.0)
    .with_weight(LossTerm::RgbToDepth, 0.0)
    .with_weight(LossTerm::DepthToRgb, 0.0);
    let mut plain = Trainer::<f64>::new(&base, &tc).map_err(|e| e.to_string())?;
    let mut da = Trainer::<f64>::new(&da_cfg, &tc).map_err(|e| e.to_string())?;
    let src = prepare(&source, &base).map_err(|e| e.to_string())?;
    let tgt = prepare(&target, &base).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for step in 0..50 {
        let lo = (step * 4) % 16;
        let sb = TrainBatch::<f64>::from_prepared(&src[lo..lo + 4].iter().collect::<Vec<_>>()).map_err(|e| e.to_string())?;
        let tb = TrainBatch::<f64>::from_prepared(&tgt[lo..lo + 4].iter().collect::<Vec<_>>()).map_err(|e| e.to_string())?;
        let a = plain.train_step(&sb).map_err(|e| e.to_string())?;
        let b = da.da_train_step(&sb, &tb).map_err(|e| e.to_string())?;
        worst = worst.max((a.term(LossTerm::Heatmap).unwrap() - b.term(LossTerm::Heatmap).unwrap()).abs());
    }
    ensure(worst <= 1e-9, format!("max heatmap-loss difference over 50 steps {worst:e}"))
}

// ---------------------------------------------------------------------------

fn main() {
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));

    let mut results: Vec<(usize, &str, Check, f64)> = Vec::new();
    let mut run = |i: usize, name: &'static str, f: &dyn Fn() -> Check| {
        if !wanted(i) {
            return;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        print_line(i, name, &outcome, secs);
        results.push((i, name, outcome, secs));
    };

    run(1, "gradient reversal linear probe", &grl_linear_probe);
    run(2, "attention and fusion oracles", &fusion_oracles);
    run(3, "toy model gradient check", &toy_gradcheck);
    run(4, "AUC against pairwise oracle", &auc_oracle);
    run(5, "ground-truth heatmap", &gt_heatmap);
    run(6, "overfit probe", &overfit_probe);

    if [7, 8, 9].iter().any(|&i| wanted(i)) {
        let start = Instant::now();
        let seeds: &[u64] = if wanted(8) || wanted(9) { &BENCH_SEEDS } else { &BENCH_SEEDS[..1] };
        let runs: Result<Vec<SeedRuns>, String> = seeds.iter().map(|&s| run_seed(s)).collect();
        let shared = start.elapsed().as_secs_f64();
        let with_runs = |f: fn(&[SeedRuns]) -> Check| match &runs {
            Ok(r) => f(r),
            Err(e) => Err(format!("benchmark training failed: {e}")),
        };
        run(7, "synthetic end-to-end", &|| with_runs(synthetic_end_to_end));
        if seeds.len() == BENCH_SEEDS.len() {
            run(8, "on-ray distractors need depth", &|| with_runs(distractors));
            run(9, "cross-domain gap and adaptation", &|| with_runs(domain_gap));
        }
        eprintln!("  benchmark runs took {shared:.0}s in total");
    }

    run(10, "all variants train", &all_variants);
    run(11, "determinism and checkpoint round trip", &determinism);
    run(12, "DA with zero coupling equals plain training", &da_off_equivalence);

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

fn print_line(i: usize, name: &str, outcome: &Check, secs: f64) {
    let (tag, detail) = match outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("[{tag}] criterion {i:>2} {name}: {detail} ({secs:.1}s)");
}
