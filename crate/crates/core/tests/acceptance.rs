//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run everything with `cargo test -p madm --test acceptance`; pass criterion
//! numbers after `--` to run a subset.

use std::time::{Duration, Instant};

use madm::data::{synthesize, SyntheticBenchmark, SyntheticModality};
use madm::domain::{ImageSample, LabelMap, LatentTensor, Modality};
use madm::dplg::{diffusion_step, q_sample, NoiseForm, NoiseSchedule};
use madm::lplr::{latent_regression_loss, palette_decode, palette_encode, LatentRegressionTarget};
use madm::model::{ModelSpec, SegModel};
use madm::palette::Palette;
use madm::rng::SeededRng;
use madm::segmentation::{ce_loss, miou, ConfusionMatrix, SegLogits};
use madm::tensor::Tensor;
use madm::train::{
    desk_autoencoder, distill, ema_update, evaluate, fresh_student, objective_gradients,
    objective_value, sample_batch, ModelPair, StepReport, TrainConfig, TrainData, Trainer,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_labels(r: &mut SeededRng, h: usize, w: usize, k: usize, ignore_p: f64) -> LabelMap {
    let d = (0..h * w)
        .map(|_| if r.coin(ignore_p) { 255 } else { r.below(k) as u8 })
        .collect();
    LabelMap::new(d, h, w, k).unwrap()
}

fn random_tensor(r: &mut SeededRng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.normal() * scale).collect()).unwrap()
}

fn c1_schedule_law() -> Outcome {
    for (beta, gamma) in [(60, 5000), (50, 8000)] {
        let s = NoiseSchedule::standard(beta, gamma).map_err(err)?;
        ensure(diffusion_step(0, &s) == beta, || format!("k(0) != {beta}"))?;
        ensure(diffusion_step(gamma, &s) == 0, || format!("k({gamma}) != 0"))?;
        ensure(diffusion_step(3 * gamma, &s) == 0, || "k past gamma != 0".into())?;
        let half = (beta as f64 / 2.0).round() as usize;
        ensure(diffusion_step(gamma / 2, &s) == half, || {
            format!("k(gamma/2) = {} != {half}", diffusion_step(gamma / 2, &s))
        })?;
        let mut prev = usize::MAX;
        for i in 0..=gamma + 10 {
            let k = diffusion_step(i, &s);
            ensure(k <= prev, || format!("k increases at i={i}"))?;
            prev = k;
        }
    }
    Ok("k(0)=beta, k(gamma)=0, k(gamma/2)=round(beta/2), monotone".into())
}

fn c2_q_sample() -> Outcome {
    let s = NoiseSchedule::standard(50, 8000).map_err(err)?;
    let mut r = SeededRng::new(2);
    let shape = [4, 8, 8];
    let latent = |r: &mut SeededRng| LatentTensor::new(random_tensor(r, &shape, 1.0)).unwrap();
    for form in [NoiseForm::Paper, NoiseForm::Standard] {
        let z = latent(&mut r);
        let zero = LatentTensor::zeros(4, 8, 8);
        let (a, _) = s.coefficients(37, form).map_err(err)?;
        let q = q_sample(&z, 37, &zero, &s, form).map_err(err)?;
        for (got, z) in q.values().data().iter().zip(z.values().data()) {
            ensure(*got == a * z, || "eps = 0 is not a pure rescale".into())?;
        }
        let eps = latent(&mut r);
        ensure(q_sample(&z, 0, &eps, &s, form).map_err(err)? == z, || "k = 0 is not identity".into())?;
    }
    for _ in 0..100 {
        let k = 1 + r.below(s.k_max());
        let (z1, z2, e1, e2) = (latent(&mut r), latent(&mut r), latent(&mut r), latent(&mut r));
        let (a, b) = (r.normal(), r.normal());
        let lin = |x: &LatentTensor, y: &LatentTensor| {
            let d = x.values().data().iter().zip(y.values().data()).map(|(x, y)| a * x + b * y).collect();
            LatentTensor::new(Tensor::from_vec(&shape, d).unwrap()).unwrap()
        };
        let lhs = q_sample(&lin(&z1, &z2), k, &lin(&e1, &e2), &s, NoiseForm::Paper).map_err(err)?;
        let q1 = q_sample(&z1, k, &e1, &s, NoiseForm::Paper).map_err(err)?;
        let q2 = q_sample(&z2, k, &e2, &s, NoiseForm::Paper).map_err(err)?;
        let rhs = lin(&q1, &q2);
        for (x, y) in lhs.values().data().iter().zip(rhs.values().data()) {
            ensure((x - y).abs() <= 1e-12 * (1.0 + x.abs()), || format!("linearity at k={k}: {x} vs {y}"))?;
        }
    }
    Ok("eps=0 and k=0 exact, linearity over 100 draws".into())
}

fn c3_palette_round_trip() -> Outcome {
    let p = Palette::cityscapes(11).map_err(err)?;
    let half = p.decode_margin() / 2.0 / 255.0;
    let mut r = SeededRng::new(3);
    for case in 0..1000 {
        let y = random_labels(&mut r, 16, 16, 11, 0.15);
        let img = palette_encode(&y, &p).map_err(err)?;
        ensure(palette_decode(&img, &p) == y, || format!("round trip broke on case {case}"))?;
        // A random direction per pixel, scaled below half the margin.
        let hw = 256;
        let mut d = img.pixels().data().to_vec();
        for q in 0..hw {
            let v = [r.normal(), r.normal(), r.normal()];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
            let len = half * 0.999 * r.uniform();
            for c in 0..3 {
                let x = &mut d[c * hw + q];
                *x = (*x + v[c] / norm * len).clamp(0.0, 1.0);
            }
        }
        let noisy = ImageSample::new(Tensor::from_vec(&[3, 16, 16], d).unwrap(), Modality::Synthetic, "n")
            .map_err(err)?;
        ensure(palette_decode(&noisy, &p) == y, || format!("sub-margin perturbation flipped case {case}"))?;
    }
    Ok(format!("1000 maps exact, margin {:.1}", p.decode_margin()))
}

fn softmax_ce_oracle(logits: &Tensor, y: &LabelMap) -> f64 {
    let (k, h, w) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    let (mut sum, mut n) = (0.0, 0usize);
    for py in 0..h {
        for px in 0..w {
            if y.is_ignored(py, px) {
                continue;
            }
            let z: Vec<f64> = (0..k).map(|c| logits.data()[(c * h + py) * w + px]).collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            sum += lse - z[y.get(py, px) as usize];
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn c4_loss_oracles() -> Outcome {
    let mut r = SeededRng::new(4);
    for case in 0..100 {
        let k = 2 + r.below(10);
        let t = random_tensor(&mut r, &[k, 16, 16], 3.0);
        let y = random_labels(&mut r, 16, 16, k, 0.1);
        let got = ce_loss(&SegLogits::new(t.clone()).map_err(err)?, &y).map_err(err)?;
        let want = softmax_ce_oracle(&t, &y);
        ensure((got - want).abs() < 1e-6, || format!("ce case {case}: {got} vs {want}"))?;
    }
    for k in [2, 6, 11] {
        let y = random_labels(&mut r, 16, 16, k, 0.0);
        let got = ce_loss(&SegLogits::new(Tensor::full(&[k, 16, 16], 0.7)).unwrap(), &y).map_err(err)?;
        ensure((got - (k as f64).ln()).abs() < 1e-6, || format!("uniform K={k}: {got}"))?;
    }
    for case in 0..100 {
        let o = random_tensor(&mut r, &[4, 8, 8], 1.0);
        let t = random_tensor(&mut r, &[4, 8, 8], 1.0);
        let mask: Vec<bool> = (0..64).map(|_| r.coin(0.7)).collect();
        let tgt = LatentRegressionTarget {
            target: LatentTensor::new(t.clone()).unwrap(),
            valid_mask: mask.clone(),
        };
        let got = latent_regression_loss(&LatentTensor::new(o.clone()).unwrap(), &tgt).map_err(err)?;
        let (mut sum, mut n) = (0.0, 0usize);
        for c in 0..4 {
            for q in 0..64 {
                if mask[q] {
                    sum += (o.data()[c * 64 + q] - t.data()[c * 64 + q]).abs();
                    n += 1;
                }
            }
        }
        let want = if n == 0 { 0.0 } else { sum / n as f64 };
        ensure((got - want).abs() < 1e-6, || format!("regression case {case}: {got} vs {want}"))?;
    }
    Ok("ce, ln K and masked L1 oracles within 1e-6".into())
}

fn c5_miou_oracle() -> Outcome {
    let mut r = SeededRng::new(5);
    for case in 0..100 {
        let k = 2 + r.below(10);
        let gt = random_labels(&mut r, 16, 16, k, 0.1);
        let pred = random_labels(&mut r, 16, 16, k, 0.0);
        let mut cm = ConfusionMatrix::new(k);
        cm.update(&pred, &gt).map_err(err)?;
        let mut oracle = vec![vec![0u64; k]; k];
        for y in 0..16 {
            for x in 0..16 {
                if !gt.is_ignored(y, x) {
                    oracle[gt.get(y, x) as usize][pred.get(y, x) as usize] += 1;
                }
            }
        }
        let (mut sum, mut n) = (0.0, 0);
        for c in 0..k {
            ensure((0..k).all(|j| cm.get(c, j) == oracle[c][j]), || format!("counts differ in case {case}"))?;
            let tp = oracle[c][c] as f64;
            let fp: u64 = (0..k).filter(|&i| i != c).map(|i| oracle[i][c]).sum();
            let fneg: u64 = (0..k).filter(|&j| j != c).map(|j| oracle[c][j]).sum();
            let denom = tp + fp as f64 + fneg as f64;
            if denom > 0.0 {
                sum += tp / denom;
                n += 1;
            }
        }
        let got = miou(&cm, false).map_err(err)?.mean;
        let want = sum / n as f64;
        ensure((got - want).abs() < 1e-12, || format!("mIoU case {case}: {got} vs {want}"))?;
    }
    let hand = miou(&ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3]).unwrap(), false).map_err(err)?;
    ensure(hand.mean == 0.6, || format!("hand case gave {}", hand.mean))?;
    Ok("100 random pairs match, [[3,1],[1,3]] -> 0.6".into())
}

fn tiny_benchmark(res: usize, scenes: usize) -> SyntheticBenchmark {
    synthesize(11, scenes, res, SyntheticModality::Edge).unwrap()
}

fn c6_ema_algebra() -> Outcome {
    let student = SegModel::new(ModelSpec::desk(6), &mut SeededRng::new(6));
    let mut other = SegModel::new(ModelSpec::desk(6), &mut SeededRng::new(7));
    let mut pair = ModelPair::new(student.clone());
    pair.teacher = other.clone();
    ema_update(&mut pair, 1.0).map_err(err)?;
    ensure(pair.teacher == other, || "alpha = 1 moved the teacher".into())?;
    ema_update(&mut pair, 0.0).map_err(err)?;
    ensure(pair.teacher == student, || "alpha = 0 did not copy the student".into())?;

    let name = other.params().names().next().unwrap().to_string();
    other.params_mut().get_mut(&name).unwrap().data_mut()[0] = 2.0;
    let mut s2 = student.clone();
    s2.params_mut().get_mut(&name).unwrap().data_mut()[0] = 0.0;
    let mut pair = ModelPair::new(s2);
    pair.teacher = other;
    ema_update(&mut pair, 0.999).map_err(err)?;
    let v = pair.teacher.params().get(&name).unwrap().data()[0];
    ensure(v == 1.998, || format!("scalar case gave {v}"))?;

    // Gradients reach the student only; the teacher moves by EMA alone.
    let bench = tiny_benchmark(32, 10);
    let data = bench.train_data();
    let cfg = TrainConfig {
        resolution: 32,
        batch_size: 2,
        iterations: 1,
        ema_warmup: false,
        ..TrainConfig::default()
    };
    let student = SegModel::new(spec_for(&cfg), &mut SeededRng::new(8));
    let palette = Palette::cityscapes(6).map_err(err)?;
    let mut tr = Trainer::new(cfg.clone(), student, palette.clone()).map_err(err)?;
    let teacher_before = tr.pair.teacher.clone();
    let student_before = tr.pair.student.params().fingerprint();
    let batch = sample_batch(&data, 2, cfg.seed, 0);
    tr.train_step(&batch, 0).map_err(err)?;
    ensure(tr.pair.student.params().fingerprint() != student_before, || "student did not move".into())?;
    let mut expect = ModelPair::new(tr.pair.student.clone());
    expect.teacher = teacher_before.clone();
    ema_update(&mut expect, cfg.ema_alpha).map_err(err)?;
    ensure(expect.teacher.params().fingerprint() == tr.pair.teacher.params().fingerprint(), || {
        "teacher differs from pure EMA of the updated student".into()
    })?;

    let fixed = teacher_before.clone();
    let mut tr = Trainer::with_fixed_teacher(cfg.clone(), tr.pair.student.clone(), fixed, palette)
        .map_err(err)?;
    let h = teacher_before.params().fingerprint();
    tr.train_step(&batch, 0).map_err(err)?;
    ensure(tr.pair.teacher.params().fingerprint() == h, || "frozen teacher changed".into())?;
    Ok("fixed points, 1.998 exact, teacher hash = EMA(student) hash".into())
}

fn spec_for(cfg: &TrainConfig) -> ModelSpec {
    let mut s = ModelSpec::desk(cfg.num_classes);
    s.head.use_hr = cfg.lplr;
    s
}

fn c7_gradient_check() -> Outcome {
    let bench = tiny_benchmark(32, 8);
    let data = bench.train_data();
    // A zero threshold makes every pseudo-label confident, so all four
    // loss terms carry gradient.
    let cfg = TrainConfig {
        resolution: 32,
        batch_size: 2,
        tau: 0.0,
        unfreeze_autoencoder: true,
        ..TrainConfig::default()
    };
    let mut model = SegModel::new(spec_for(&cfg), &mut SeededRng::new(70));
    // Move the zero-initialised condition off zero so its gradient path is
    // generic.
    let mut r = SeededRng::new(71);
    for v in model.params_mut().get_mut("cond").unwrap().data_mut() {
        *v = r.normal() * 0.1;
    }
    let tr = Trainer::new(cfg.clone(), model.clone(), Palette::cityscapes(6).map_err(err)?).map_err(err)?;
    let inputs = tr.prepare(&sample_batch(&data, 2, cfg.seed, 0), 0).map_err(err)?;
    let s = tr.objective_settings();
    let (losses, grads) = objective_gradients(&model, &inputs, &s);
    ensure(
        losses.l_s > 0.0 && losses.l_t > 0.0 && losses.l_s_reg > 0.0 && losses.l_t_reg > 0.0,
        || format!("not all terms active: {losses:?}"),
    )?;

    let groups = ["enc.", "unet.", "dec.", "head.", "cond"];
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for group in groups {
        let names: Vec<String> = grads.keys().filter(|n| n.starts_with(group)).cloned().collect();
        ensure(!names.is_empty(), || format!("no gradients for {group}"))?;
        let mut taken = 0;
        let mut tries = 0;
        while taken < 5 && tries < 200 {
            tries += 1;
            let name = &names[r.below(names.len())];
            let g = &grads[name];
            let idx = r.below(g.len());
            let analytic = g[idx];
            if analytic.abs() < 1e-7 {
                continue;
            }
            let h = 1e-5;
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.params_mut().get_mut(name).unwrap().data_mut()[idx] += delta;
                objective_value(&m, &inputs, &s).total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs());
            worst = worst.max(rel);
            ensure(rel < 1e-3, || format!("{name}[{idx}]: analytic {analytic} vs fd {fd} (rel {rel:.2e})"))?;
            taken += 1;
        }
        ensure(taken == 5, || format!("too few non-negligible gradients in {group}"))?;
        checked += taken;
    }
    Ok(format!("{checked} parameters, worst relative error {worst:.2e}"))
}

fn c8_loss_composition() -> Outcome {
    let bench = tiny_benchmark(64, 20);
    let data = bench.train_data();
    // A low threshold keeps the target terms non-zero from the start.
    let cfg = TrainConfig {
        iterations: 100,
        tau: 0.3,
        ..TrainConfig::default()
    };
    let student = SegModel::new(spec_for(&cfg), &mut SeededRng::new(80));
    let mut tr = Trainer::new(cfg.clone(), student, Palette::cityscapes(6).map_err(err)?).map_err(err)?;
    let lambda = cfg.effective_lambda();
    let mut logged = 0;
    let mut all_active = 0;
    let mut bad: Option<String> = None;
    tr.run(&data, 0, &mut |rep: &StepReport, _| {
        let l = rep.losses;
        let want = l.l_s + l.l_t + lambda * (l.l_s_reg + l.l_t_reg);
        if (l.total - want).abs() > 1e-6 * want.abs() && bad.is_none() {
            bad = Some(format!("iteration {}: {} vs {want}", rep.iteration, l.total));
        }
        if l.l_s > 0.0 && l.l_t > 0.0 && l.l_s_reg > 0.0 && l.l_t_reg > 0.0 {
            all_active += 1;
        }
        logged += 1;
        Ok(())
    })
    .map_err(err)?;
    if let Some(b) = bad {
        return Err(b);
    }
    ensure(logged == 100, || format!("{logged} iterations logged"))?;
    ensure(all_active > 0, || "no iteration had all four terms active".into())?;
    Ok(format!("100 iterations, {all_active} with all four terms active"))
}

const ARMS: [(&str, bool, bool); 4] = [
    ("baseline", false, false),
    ("full", true, true),
    ("dplg", true, false),
    ("lplr", false, true),
];

struct Adapted {
    teacher: SegModel,
    data: TrainData,
    val: Vec<(ImageSample, LabelMap)>,
}

fn c9_adaptation(keep: &mut Option<Adapted>) -> Outcome {
    let bench = synthesize(0, 200, 64, SyntheticModality::Edge).map_err(err)?;
    let data = bench.train_data();
    let val = bench.target_val();
    let base = TrainConfig::default();
    let heldout: Vec<&ImageSample> = bench.val.iter().flat_map(|s| [&s.source, &s.target]).collect();
    let (ae, rep) = desk_autoencoder(&base, &data, &heldout).map_err(err)?;
    let mut means = [0.0; 4];
    let mut detail = Vec::new();
    for seed in 0..3u64 {
        for (a, (name, dplg, lplr)) in ARMS.iter().enumerate() {
            let cfg = TrainConfig {
                seed,
                dplg: *dplg,
                lplr: *lplr,
                ..base.clone()
            };
            let mut tr = Trainer::new(cfg.clone(), fresh_student(&cfg, &ae), Palette::cityscapes(6).unwrap())
                .map_err(err)?;
            tr.run(&data, 0, &mut |_, _| Ok(())).map_err(err)?;
            let m = evaluate(&tr.pair.student, &val, false).map_err(err)?.report.mean;
            means[a] += m / 3.0;
            detail.push(format!("{name}/{seed}={m:.3}"));
            if seed == 0 && *name == "full" {
                *keep = Some(Adapted {
                    teacher: tr.pair.student.clone(),
                    data: data.clone(),
                    val: val.clone(),
                });
            }
        }
    }
    let summary = format!(
        "ae mae {:.3}; mean mIoU baseline {:.4} full {:.4} dplg {:.4} lplr {:.4} [{}]",
        rep.final_mae,
        means[0],
        means[1],
        means[2],
        means[3],
        detail.join(" ")
    );
    ensure(means[1] >= means[0], || format!("full below baseline: {summary}"))?;
    ensure(means[2] >= means[0] - 0.01, || format!("dplg arm below baseline - 0.01: {summary}"))?;
    ensure(means[3] >= means[0] - 0.01, || format!("lplr arm below baseline - 0.01: {summary}"))?;
    Ok(summary)
}

fn c10_distillation(adapted: &Option<Adapted>) -> Outcome {
    let Some(a) = adapted else {
        return Err("needs the criterion 9 teacher; run 9 and 10 together".into());
    };
    let cfg = TrainConfig::default();
    let student = distill(&a.teacher, ModelSpec::compact(6), &a.data, &cfg, &mut |_, _| Ok(())).map_err(err)?;
    let t = evaluate(&a.teacher, &a.val, false).map_err(err)?.report.mean;
    let s = evaluate(&student, &a.val, false).map_err(err)?.report.mean;
    let summary = format!(
        "teacher {t:.4} ({} params), student {s:.4} ({} params), ratio {:.3}",
        a.teacher.params().num_scalars(),
        student.params().num_scalars(),
        s / t
    );
    ensure(s >= 0.9 * t, || summary.clone())?;
    Ok(summary)
}

fn desk_run_log(seed: u64) -> Result<String, String> {
    let bench = synthesize(3, 40, 64, SyntheticModality::Edge).map_err(err)?;
    let data = bench.train_data();
    let cfg = TrainConfig {
        seed,
        iterations: 40,
        pretrain_steps: 20,
        ..TrainConfig::default()
    };
    let held: Vec<&ImageSample> = bench.val.iter().map(|s| &s.target).collect();
    let (ae, rep) = desk_autoencoder(&cfg, &data, &held).map_err(err)?;
    let mut tr = Trainer::new(cfg.clone(), fresh_student(&cfg, &ae), Palette::cityscapes(6).unwrap())
        .map_err(err)?;
    let mut log = format!("{}\npretrain {:?}\n", StepReport::CSV_HEADER, rep.final_mae.to_bits());
    tr.run(&data, 0, &mut |r, _| {
        log.push_str(&r.csv_row());
        log.push('\n');
        Ok(())
    })
    .map_err(err)?;
    let e = evaluate(&tr.pair.student, &bench.target_val(), false).map_err(err)?;
    log.push_str(&format!("{:?}\n{}", e.report.per_class, tr.pair.teacher.params().fingerprint()));
    Ok(log)
}

fn c11_determinism() -> Outcome {
    let a = desk_run_log(5)?;
    let b = desk_run_log(5)?;
    ensure(a == b, || "two identical runs produced different logs".into())?;
    let c = desk_run_log(6)?;
    ensure(a != c, || "a different seed produced the same log".into())?;
    Ok(format!("{} log bytes identical across runs", a.len()))
}

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);

    let mut adapted = None;
    let mut failures = 0;
    let mut report = |n: usize, name: &str, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        if !run(n) {
            return;
        }
        let t = Instant::now();
        let out = f();
        let dt = t.elapsed();
        let (ok, msg) = match out {
            Ok(m) if dt <= budget => (true, m),
            Ok(m) => (false, format!("{m}; over budget {budget:?}")),
            Err(m) => (false, m),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "{} [{n:>2}] {name}: {msg} ({:.1}s / {}s)",
            if ok { "PASS" } else { "FAIL" },
            dt.as_secs_f64(),
            budget.as_secs()
        );
    };
    let s = Duration::from_secs;
    report(1, "schedule law", s(1), &mut c1_schedule_law);
    report(2, "q_sample identities", s(1), &mut c2_q_sample);
    report(3, "palette round-trip", s(10), &mut c3_palette_round_trip);
    report(4, "loss oracles", s(10), &mut c4_loss_oracles);
    report(5, "mIoU oracle", s(5), &mut c5_miou_oracle);
    report(6, "EMA algebra", s(5), &mut c6_ema_algebra);
    report(7, "gradient check", s(120), &mut c7_gradient_check);
    report(8, "loss composition", s(120), &mut c8_loss_composition);
    report(9, "desk-scale adaptation", s(30 * 60), &mut || c9_adaptation(&mut adapted));
    report(10, "distillation", s(15 * 60), &mut || c10_distillation(&adapted));
    report(11, "determinism", s(10 * 60), &mut c11_determinism);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
