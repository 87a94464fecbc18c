//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use longtail_cli::commands::{self, AugmentArgs};
use longtail_cli::config::RunConfig;
use longtail_core::anchor_sampler::{
    classify_candidates, sample_batch, CandidateStatus, SamplerConfig,
};
use longtail_core::augment::{duck_fill, mixup_with_lambda, DuckFillConfig, Patch, PatchBank};
use longtail_core::class_balance::SampleWeights;
use longtail_core::dataset::parse_dataset;
use longtail_core::geometry::iou;
use longtail_core::gre_fpn::{
    gre_extract, gre_gradients, roi_align, GreParams, Pyramid, PyramidLevel, RoiAlignConfig,
    Tensor4,
};
use longtail_core::raster::Raster;
use longtail_core::train_utils::{lr_at, swa_average, LrConfig, ParamEntry, ParamSnapshot};
use longtail_core::tta::{
    forward_boxes, fuse, invert_boxes, DetectionSet, FusionMode, TtaTransform,
};
use longtail_core::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn oracle_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    inter / (area(a) + area(b) - inter)
}

fn center(r: [f64; 4]) -> (f64, f64) {
    ((r[0] + r[2]) / 2.0, (r[1] + r[3]) / 2.0)
}

fn random_box(rng: &mut ChaCha8Rng, w: f64, h: f64) -> BBox {
    let bw = rng.random_range(4.0..w / 2.0);
    let bh = rng.random_range(4.0..h / 2.0);
    let x = rng.random_range(0.0..w - bw);
    let y = rng.random_range(0.0..h - bh);
    BBox::new(x, y, x + bw, y + bh).unwrap()
}

fn jitter(rng: &mut ChaCha8Rng, t: &BBox, amount: f64) -> BBox {
    let lo = (1.0 - amount).max(0.2);
    let w = t.width() * rng.random_range(lo..1.0 + amount);
    let h = t.height() * rng.random_range(lo..1.0 + amount);
    let (cx, cy) = t.center();
    let cx = cx + t.width() * rng.random_range(-amount..amount);
    let cy = cy + t.height() * rng.random_range(-amount..amount);
    BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0).unwrap()
}

fn negative_region() -> Verdict {
    let start = Instant::now();
    let cfg = SamplerConfig {
        batch_size: 64,
        ..SamplerConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut negatives = 0usize;
    let mut violations = 0usize;
    for trial in 0..10_000u64 {
        let (w, h) = (rng.random_range(64.0..512.0), rng.random_range(64.0..512.0));
        let targets: Vec<BBox> = (0..rng.random_range(1..=5))
            .map(|_| random_box(&mut rng, w, h))
            .collect();
        let mut anchors: Vec<BBox> = (0..60).map(|_| random_box(&mut rng, w, h)).collect();
        for _ in 0..60 {
            let t = targets[rng.random_range(0..targets.len())];
            let amount = rng.random_range(0.05..1.0);
            anchors.push(jitter(&mut rng, &t, amount));
        }
        let labels = classify_candidates(&anchors, &targets, &cfg).map_err(|e| e.to_string())?;
        let batch = sample_batch(&labels, &cfg, trial).map_err(|e| e.to_string())?;
        for &n in &batch.negatives {
            negatives += 1;
            let a = anchors[n].corners();
            let max_iou = targets
                .iter()
                .map(|t| oracle_iou(a, t.corners()))
                .fold(0.0, f64::max);
            let (ax, ay) = center(a);
            let (dist, t) = targets
                .iter()
                .map(|t| {
                    let (tx, ty) = center(t.corners());
                    (((ax - tx).powi(2) + (ay - ty).powi(2)).sqrt(), t)
                })
                .min_by(|p, q| p.0.total_cmp(&q.0))
                .expect("targets exist");
            let diag = (t.width().powi(2) + t.height().powi(2)).sqrt();
            if !(max_iou < 0.3 && dist < diag) {
                violations += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(violations == 0, || {
        format!("{violations} of {negatives} negatives violate")
    })?;
    ensure(negatives > 100_000, || {
        format!("only {negatives} negatives sampled")
    })?;
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "0 violations in {negatives} negatives, {elapsed:.2?}"
    ))
}

fn hard_share() -> Verdict {
    let cfg = SamplerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let targets: Vec<BBox> = (0..4).map(|_| random_box(&mut rng, 400.0, 400.0)).collect();
    let mut anchors = Vec::new();
    for _ in 0..4000 {
        let t = targets[rng.random_range(0..targets.len())];
        let amount = rng.random_range(0.02..1.2);
        anchors.push(jitter(&mut rng, &t, amount));
    }
    let labels = classify_candidates(&anchors, &targets, &cfg).map_err(|e| e.to_string())?;
    let pool = |s| labels.iter().filter(|l| l.status == s).count();
    let (pos, hard, easy) = (
        pool(CandidateStatus::Positive),
        pool(CandidateStatus::NegativeHard),
        pool(CandidateStatus::NegativeEasy),
    );
    ensure(pos >= 128 && hard >= 128 && easy >= 128, || {
        format!("pools too small: {pos} positive, {hard} hard, {easy} easy")
    })?;
    let (mut h, mut e) = (0usize, 0usize);
    for seed in 0..10_000 {
        let b = sample_batch(&labels, &cfg, seed).map_err(|e| e.to_string())?;
        h += b.diagnostics.hard;
        e += b.diagnostics.easy;
    }
    let share = h as f64 / (h + e) as f64;
    ensure((share - 0.5).abs() <= 0.02, || format!("share {share}"))?;
    Ok(format!(
        "share {share:.4} over 10000 batches (pools {hard} hard / {easy} easy)"
    ))
}

fn balance_chi_square() -> Verdict {
    // one class, so each image's weight is 1 / (its box count)
    let boxes_per_image = [1usize, 1, 2, 4, 4];
    let images: Vec<_> = (1..=5)
        .map(|i| serde_json::json!({"id": i, "width": 100, "height": 100, "file_name": format!("{i}.jpg")}))
        .collect();
    let mut anns = Vec::new();
    for (i, &n) in boxes_per_image.iter().enumerate() {
        for k in 0..n {
            anns.push(serde_json::json!({"id": anns.len() + 1, "image_id": i + 1, "category_id": 7, "bbox": [k as f64 * 10.0, 0, 8, 8]}));
        }
    }
    let doc = serde_json::json!({"images": images, "annotations": anns, "categories": [{"id": 7, "name": "cup"}]});
    let (ds, _) = parse_dataset(&doc.to_string()).map_err(|e| e.to_string())?;
    let w = SampleWeights::compute(&ds).map_err(|e| e.to_string())?;
    let got: Vec<f64> = w.weights.values().copied().collect();
    ensure(got == [1.0, 1.0, 0.5, 0.25, 0.25], || {
        format!("weights {got:?}")
    })?;

    let n = 100_000;
    let draws = w.sample(99, n);
    let total: f64 = got.iter().sum();
    let mut stat = 0.0;
    for (id, wi) in (1..=5u64).zip(&got) {
        let observed = draws.iter().filter(|&&d| d == id).count() as f64;
        let expected = n as f64 * wi / total;
        stat += (observed - expected).powi(2) / expected;
    }
    let p = 1.0 - ChiSquared::new(4.0).unwrap().cdf(stat);
    ensure(p > 0.01, || format!("chi-square {stat:.3}, p = {p:.4}"))?;
    Ok(format!("chi-square {stat:.3} (4 dof), p = {p:.3}"))
}

fn iou_raster() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_fine: f64 = 0.0;
    let mut inexact = 0;
    let mut overlapping = 0;
    for _ in 0..1000 {
        let mut int_box = || {
            let x = rng.random_range(0..40) as f64;
            let y = rng.random_range(0..40) as f64;
            let w = rng.random_range(1..24) as f64;
            let h = rng.random_range(1..24) as f64;
            BBox::new(x, y, x + w, y + h).unwrap()
        };
        let (a, b) = (int_box(), int_box());
        let analytic = iou(&a, &b).map_err(|e| e.to_string())?;

        // unit cells: exact for integer boxes
        let inside = |r: &BBox, x: f64, y: f64| x >= r.x1 && x < r.x2 && y >= r.y1 && y < r.y2;
        let (mut inter, mut uni) = (0u64, 0u64);
        for yi in 0..64 {
            for xi in 0..64 {
                let (x, y) = (xi as f64 + 0.5, yi as f64 + 0.5);
                let (ia, ib) = (inside(&a, x, y), inside(&b, x, y));
                inter += (ia && ib) as u64;
                uni += (ia || ib) as u64;
            }
        }
        overlapping += (inter > 0) as usize;
        if analytic != inter as f64 / uni as f64 {
            inexact += 1;
        }

        // quarter-pixel samples
        let (mut fi, mut fu) = (0u64, 0u64);
        for yi in 0..256 {
            for xi in 0..256 {
                let (x, y) = ((xi as f64 + 0.5) / 4.0, (yi as f64 + 0.5) / 4.0);
                let (ia, ib) = (inside(&a, x, y), inside(&b, x, y));
                fi += (ia && ib) as u64;
                fu += (ia || ib) as u64;
            }
        }
        worst_fine = worst_fine.max((analytic - fi as f64 / fu as f64).abs());
    }
    ensure(inexact == 0, || {
        format!("{inexact} pairs differ from the exact cell count")
    })?;
    ensure(worst_fine <= 1e-2, || {
        format!("fine-grid error {worst_fine}")
    })?;
    Ok(format!(
        "exact on all 1000 pairs ({overlapping} overlapping), fine-grid max error {worst_fine:.1e}"
    ))
}

fn random_pyramid(rng: &mut ChaCha8Rng, levels: usize, c: usize) -> Pyramid {
    Pyramid::new(
        (0..levels)
            .map(|l| PyramidLevel {
                features: Tensor4::from_fn(
                    [1, c, (16 >> l).max(2), (16 >> l).max(2)],
                    |_, _, _, _| rng.random_range(-1.0..1.0),
                ),
                stride: (4usize << l) as f64,
            })
            .collect(),
    )
    .unwrap()
}

fn random_rois(rng: &mut ChaCha8Rng, n: usize) -> Vec<BBox> {
    (0..n)
        .map(|_| {
            let x = rng.random_range(-4.0..40.0);
            let y = rng.random_range(-4.0..40.0);
            BBox::new(
                x,
                y,
                x + rng.random_range(4.0..40.0),
                y + rng.random_range(4.0..40.0),
            )
            .unwrap()
        })
        .collect()
}

fn gre_gradient_check() -> Verdict {
    let start = Instant::now();
    let eps = 1e-5;
    let cfg = RoiAlignConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1.0);
    for levels in [2, 3, 4] {
        for c in [2, 4] {
            let pyr = random_pyramid(&mut rng, levels, c);
            let rois = random_rois(&mut rng, 3);
            let c_out = 3;
            let params = GreParams::new(
                c_out,
                levels * c,
                (0..c_out * levels * c)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
                (0..c_out).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let upstream =
                Tensor4::from_fn([3, c_out, 7, 7], |_, _, _, _| rng.random_range(-1.0..1.0));
            let grads =
                gre_gradients(&pyr, &rois, &cfg, &params, &upstream).map_err(|e| e.to_string())?;
            let loss = |p: &Pyramid, g: &GreParams| -> f64 {
                let out = gre_extract(p, &rois, &cfg, g).unwrap();
                out.data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let with_weights = |i: usize, d: f64| {
                let mut w = params.weights().to_vec();
                w[i] += d;
                GreParams::new(c_out, levels * c, w, params.bias().to_vec()).unwrap()
            };
            for i in 0..params.weights().len() {
                let n = (loss(&pyr, &with_weights(i, eps)) - loss(&pyr, &with_weights(i, -eps)))
                    / (2.0 * eps);
                worst = worst.max(rel(grads.weights[i], n));
                checked += 1;
            }
            for i in 0..c_out {
                let mut b = params.bias().to_vec();
                b[i] += eps;
                let plus = GreParams::new(c_out, levels * c, params.weights().to_vec(), b.clone())
                    .unwrap();
                b[i] -= 2.0 * eps;
                let minus =
                    GreParams::new(c_out, levels * c, params.weights().to_vec(), b).unwrap();
                let n = (loss(&pyr, &plus) - loss(&pyr, &minus)) / (2.0 * eps);
                worst = worst.max(rel(grads.bias[i], n));
                checked += 1;
            }
            let base: Vec<Vec<f64>> = pyr
                .levels()
                .iter()
                .map(|l| l.features.data().to_vec())
                .collect();
            for l in 0..levels {
                for i in 0..base[l].len() {
                    let mut d = base.clone();
                    d[l][i] += eps;
                    let lp = loss(&pyr.with_data(d.clone()).unwrap(), &params);
                    d[l][i] -= 2.0 * eps;
                    let lm = loss(&pyr.with_data(d).unwrap(), &params);
                    worst = worst.max(rel(grads.pyramid[l].data()[i], (lp - lm) / (2.0 * eps)));
                    checked += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(worst < 1e-6, || format!("max relative error {worst:.3e}"))?;
    ensure(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "max relative error {worst:.2e} over {checked} entries, {elapsed:.2?}"
    ))
}

fn selector_reduction() -> Verdict {
    let cfg = RoiAlignConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for levels in [2, 3, 4] {
        for c in [2, 4] {
            let pyr = random_pyramid(&mut rng, levels, c);
            let rois = random_rois(&mut rng, 5);
            for j in 0..levels {
                let params = GreParams::selector(j, levels, c).unwrap();
                let gre = gre_extract(&pyr, &rois, &cfg, &params).map_err(|e| e.to_string())?;
                let lvl = &pyr.levels()[j];
                for (n, roi) in rois.iter().enumerate() {
                    let direct = roi_align(&lvl.features, lvl.stride, roi, &cfg)
                        .map_err(|e| e.to_string())?;
                    let per = c * 49;
                    for (a, b) in gre.data()[n * per..(n + 1) * per].iter().zip(direct.data()) {
                        worst = worst.max((a - b).abs());
                    }
                }
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max difference {worst:.3e}"))?;
    Ok(format!("max difference {worst:.1e}"))
}

fn noise_raster(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Raster {
    Raster::new(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
}

fn augmentation_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let (w, h) = (rng.random_range(8..64), rng.random_range(8..64));
        let a = noise_raster(&mut rng, w, h);
        let b = noise_raster(&mut rng, w, h);
        let out = mixup_with_lambda(&a, &[], &b, &[], 1.0).map_err(|e| e.to_string())?;
        ensure(out.raster == a, || "lambda = 1 changed the image".into())?;
    }

    let bank = PatchBank {
        patches: (0..4)
            .map(|i| Patch {
                raster: noise_raster(&mut rng, 6 + i, 9 - i),
                class_id: i as u32,
                source_image_id: i as u64,
            })
            .collect(),
    };
    let opaque = DuckFillConfig {
        pastes_per_image: (1, 1),
        alpha_range: (1.0, 1.0),
        ..DuckFillConfig::default()
    };
    let none = DuckFillConfig {
        pastes_per_image: (0, 0),
        ..DuckFillConfig::default()
    };
    for seed in 0..200 {
        let target = noise_raster(&mut rng, 40, 32);
        let out = duck_fill(&target, &bank, &opaque, seed).map_err(|e| e.to_string())?;
        for p in &out.pastes {
            let (x, y) = (p.bbox.x1 as usize, p.bbox.y1 as usize);
            let (pw, ph) = (p.bbox.width() as usize, p.bbox.height() as usize);
            let expected = bank.patches[p.patch_index]
                .raster
                .resize_bilinear(pw, ph)
                .unwrap();
            let region = out.raster.crop(x, y, pw, ph).unwrap();
            ensure(region == expected, || {
                format!("seed {seed}: opaque paste differs from patch")
            })?;
        }
        let untouched = duck_fill(&target, &bank, &none, seed).map_err(|e| e.to_string())?;
        ensure(
            untouched.raster == target && untouched.pastes.is_empty(),
            || format!("seed {seed}: zero-paste output differs"),
        )?;
    }
    Ok("lambda 1, opaque paste and zero-paste outputs bit-identical".into())
}

fn random_snapshot(rng: &mut ChaCha8Rng) -> ParamSnapshot {
    ParamSnapshot::new(vec![
        ParamEntry {
            name: "w".into(),
            shape: vec![4, 8],
            values: (0..32)
                .map(|_| rng.random_range(-1e3..1e3) * rng.random::<f64>().powi(8))
                .collect(),
        },
        ParamEntry {
            name: "b".into(),
            shape: vec![4],
            values: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        },
    ])
    .unwrap()
}

fn bits(s: &ParamSnapshot) -> Vec<u64> {
    s.entries
        .iter()
        .flat_map(|e| e.values.iter().map(|v| v.to_bits()))
        .collect()
}

fn swa_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in 1..=6 {
        let s = random_snapshot(&mut rng);
        let mean = swa_average(&vec![s.clone(); k]).map_err(|e| e.to_string())?;
        ensure(bits(&mean) == bits(&s), || {
            format!("mean of {k} identical snapshots differs")
        })?;
    }
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    for trial in 0..200 {
        let trio: Vec<ParamSnapshot> = (0..3).map(|_| random_snapshot(&mut rng)).collect();
        let reference = bits(&swa_average(&trio).map_err(|e| e.to_string())?);
        for p in perms {
            let shuffled: Vec<ParamSnapshot> = p.iter().map(|&i| trio[i].clone()).collect();
            let got = bits(&swa_average(&shuffled).map_err(|e| e.to_string())?);
            ensure(got == reference, || {
                format!("triple {trial}, order {p:?} differs")
            })?;
        }
    }
    Ok("identical snapshots exact; 200 triples order-invariant to 0 ulp".into())
}

fn lr_schedule() -> Verdict {
    let cfg = LrConfig::default();
    let ipe = 1000;
    for it in 0..12 * ipe {
        let expected = if it < 500 {
            0.0067
        } else if it < 8 * ipe {
            0.02
        } else if it < 11 * ipe {
            0.002
        } else {
            0.0002
        };
        let got = lr_at(it, ipe, &cfg).map_err(|e| e.to_string())?;
        ensure(got == expected, || {
            format!("iteration {it}: {got} != {expected}")
        })?;
    }
    Ok("0.0067 / 0.02 / 0.002 / 0.0002 exact over 12000 iterations".into())
}

fn tta_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let frame = (
            rng.random_range(32.0..2000.0),
            rng.random_range(32.0..2000.0),
        );
        let b = random_box(&mut rng, frame.0, frame.1)
            .with_score(rng.random())
            .with_class(rng.random_range(0..10));
        let d = DetectionSet::new(frame, vec![b]).map_err(|e| e.to_string())?;
        let t = TtaTransform {
            scale: rng.random_range(0.2..5.0),
            hflip: rng.random(),
            blur_sigma: rng.random_range(0.0..3.0),
        };
        let back = invert_boxes(&forward_boxes(&d, &t).map_err(|e| e.to_string())?, &t)
            .map_err(|e| e.to_string())?;
        for (p, q) in back.boxes[0].corners().iter().zip(b.corners()) {
            worst = worst.max((p - q).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("round-trip error {worst:.3e}"))?;

    for _ in 0..200 {
        let boxes: Vec<BBox> = (0..rng.random_range(1..30))
            .map(|_| {
                random_box(&mut rng, 300.0, 200.0)
                    .with_score((rng.random_range(0..10) as f64) / 10.0)
                    .with_class(rng.random_range(0..3))
            })
            .collect();
        let set = DetectionSet::new((300.0, 200.0), boxes).map_err(|e| e.to_string())?;
        let single =
            fuse(std::slice::from_ref(&set), 0.5, FusionMode::Nms).map_err(|e| e.to_string())?;
        let doubled =
            fuse(&[set.clone(), set.clone()], 0.5, FusionMode::Nms).map_err(|e| e.to_string())?;
        ensure(doubled == single, || {
            "duplicated sets fuse differently".into()
        })?;
    }
    Ok(format!(
        "round-trip max error {worst:.1e}; duplicated fusion equals single-set NMS"
    ))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (dataset, images) = common::write_dataset(dir.path());
    let targets = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/targets.json");
    let mut cfg = RunConfig::default();
    cfg.augment.shot_threshold = common::SHOT_THRESHOLD;
    cfg.augment.fill_targets = longtail_cli::config::FillTargets::All;
    cfg.sample.batches = 20;

    let run = |tag: &str| -> Result<_, String> {
        let out = dir.path().join(tag);
        let args = AugmentArgs {
            dataset: dataset.clone(),
            images: images.clone(),
            out: out.join("augment"),
        };
        let a = commands::augment(&args, &cfg.augment, 42).map_err(|e| e.to_string())?;
        ensure(a.deferred.is_none(), || {
            format!("augment reported {:?}", a.deferred)
        })?;
        commands::sample_balance(&dataset, &cfg.sample, 42, Some(&out.join("balance.json")))
            .map_err(|e| e.to_string())?;
        commands::sample_anchors(&targets, &cfg.sample, 42, Some(&out.join("anchors.json")))
            .map_err(|e| e.to_string())?;
        Ok((common::read_tree(&out), a.report))
    };
    let (first, report) = run("first")?;
    let (second, _) = run("second")?;
    ensure(first.keys().eq(second.keys()), || {
        "different file sets".into()
    })?;
    let differing: Vec<_> = first
        .iter()
        .filter(|(k, v)| second[*k] != **v)
        .map(|(k, _)| k.display().to_string())
        .collect();
    ensure(differing.is_empty(), || {
        format!("files differ: {differing:?}")
    })?;
    ensure(
        report["duck_filled_images"].as_u64() > Some(0)
            && report["mixed_images"].as_u64() > Some(0),
        || "augment produced no images".into(),
    )?;
    Ok(format!(
        "{} output files byte-identical across two runs",
        first.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("negative region compliance", negative_region),
        ("hard-negative share", hard_share),
        ("class-balance sampler chi-square", balance_chi_square),
        ("IoU against rasterization", iou_raster),
        ("GRE gradient check", gre_gradient_check),
        ("GRE selector reduction", selector_reduction),
        ("mix-up / duck-fill identities", augmentation_identities),
        ("SWA exactness and order invariance", swa_exactness),
        ("learning-rate schedule", lr_schedule),
        ("TTA round trip and fusion", tta_round_trip),
        ("augment and sample determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let verdict = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match verdict {
            Ok(detail) => println!("PASS  {:>2}  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:>2}  {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
