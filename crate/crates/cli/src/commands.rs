use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use madm::backbone::DeskBackbone;
use madm::checkpoint::{load_backbone, load_model, save_backbone, save_model};
use madm::data::{
    load_eval_split, synthesize, train_data_from_manifests, DatasetManifest, Split,
    SyntheticModality,
};
use madm::domain::{ImageSample, LabelMap};
use madm::model::ModelSpec;
use madm::palette::Palette;
use madm::train::{
    desk_autoencoder, distill as distill_model, evaluate, fresh_student,
    Evaluation, StepReport, TrainConfig, TrainData, Trainer,
};

use crate::rundir::{
    create_run_dir, RunRecord, CONFIG_FILE, CONFUSION_FILE, EVAL_FILE, METRICS_FILE, MODEL_FILE,
};
use crate::{DataArgs, DistillArgs, EvalArgs, PlotArgs, SynthArgs, TrainArgs};

pub struct LoadedData {
    pub train: TrainData,
    pub target_val: Vec<(ImageSample, LabelMap)>,
    pub source_val: Vec<(ImageSample, LabelMap)>,
    pub source: String,
}

pub fn load_data(a: &DataArgs, resolution: usize) -> Result<LoadedData> {
    match &a.data {
        Some(root) => {
            let src = DatasetManifest::load(&root.join("source"))?;
            let tgt = DatasetManifest::load(&root.join("target"))?;
            Ok(LoadedData {
                train: train_data_from_manifests(&src, &tgt)?,
                target_val: load_eval_split(&tgt, Split::Val)?,
                source_val: load_eval_split(&src, Split::Val)?,
                source: root.display().to_string(),
            })
        }
        None => {
            let m: SyntheticModality = a.synth_modality.parse()?;
            let bench = synthesize(a.synth_seed, a.synth_scenes, resolution, m)?;
            Ok(LoadedData {
                train: bench.train_data(),
                target_val: bench.target_val(),
                source_val: bench.source_val(),
                source: format!(
                    "synthetic:{}:{}:{}",
                    a.synth_modality, a.synth_seed, a.synth_scenes
                ),
            })
        }
    }
}

/// Target val split named by a run record's data field: a dataset root or
/// `synthetic:<modality>:<seed>:<scenes>`.
pub fn load_data_descriptor(d: &Path, resolution: usize) -> Result<Vec<(ImageSample, LabelMap)>> {
    let text = d.to_string_lossy();
    let args = match text.strip_prefix("synthetic:") {
        Some(rest) => {
            let f: Vec<&str> = rest.split(':').collect();
            let [m, seed, scenes] = f[..] else {
                bail!("malformed synthetic descriptor {text:?}");
            };
            DataArgs {
                data: None,
                synth_seed: seed.parse()?,
                synth_scenes: scenes.parse()?,
                synth_modality: m.to_string(),
            }
        }
        None => DataArgs {
            data: Some(d.to_path_buf()),
            synth_seed: 0,
            synth_scenes: 0,
            synth_modality: String::new(),
        },
    };
    Ok(load_data(&args, resolution)?.target_val)
}

/// Splits `["--lr", "0.1", "--seed=2"]` into key/value pairs. Dashes in
/// keys are read as underscores.
pub fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(a) = it.next() {
        let Some(key) = a.strip_prefix("--") else {
            bail!("expected --key value, got {a:?}");
        };
        let (k, v) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().with_context(|| format!("missing value for --{key}"))?;
                (key.to_string(), v.clone())
            }
        };
        out.push((k.replace('-', "_"), v));
    }
    Ok(out)
}

fn read_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_toml_str(&text).with_context(|| format!("in {}", p.display()))
        }
        None => Ok(TrainConfig::default()),
    }
}

/// File config, then flags, then `--key value` overrides.
pub fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut pairs = Vec::new();
    if a.no_dplg {
        pairs.push(("dplg".to_string(), "false".to_string()));
    }
    if a.no_lplr {
        pairs.push(("lplr".to_string(), "false".to_string()));
        pairs.push(("lambda_reg".to_string(), "0.0".to_string()));
    }
    if let Some(f) = a.data_fraction {
        pairs.push(("data_fraction".to_string(), f.to_string()));
    }
    pairs.extend(parse_overrides(&a.overrides)?);
    Ok(read_config(a.config.as_deref())?.with_overrides(&pairs)?)
}

fn write_eval(dir: &Path, e: &Evaluation) -> Result<serde_json::Value> {
    let v = json!({
        "mean_iou": e.report.mean,
        "per_class_iou": e.report.per_class,
        "pixels": e.confusion.total(),
    });
    fs::write(dir.join(EVAL_FILE), serde_json::to_string_pretty(&v)?)?;
    fs::write(dir.join(CONFUSION_FILE), e.confusion.to_csv())?;
    Ok(v)
}

fn obtain_autoencoder(
    cfg: &TrainConfig,
    backbone: Option<&Path>,
    data: &LoadedData,
    dir: &Path,
    record: &mut RunRecord,
) -> Result<DeskBackbone> {
    if let Some(p) = backbone {
        return Ok(load_backbone(p)?.0);
    }
    let heldout: Vec<&ImageSample> = data
        .source_val
        .iter()
        .chain(&data.target_val)
        .map(|(x, _)| x)
        .collect();
    let (b, rep) = desk_autoencoder(cfg, &data.train, &heldout)?;
    if !rep.reached_target {
        eprintln!(
            "warning: autoencoder reconstruction error {:.4} did not reach the target",
            rep.final_mae
        );
    }
    save_backbone(&dir.join("autoencoder.ckpt"), &b, json!(rep))?;
    fs::write(dir.join("pretrain.json"), serde_json::to_string_pretty(&rep)?)?;
    record.artifacts.push("autoencoder.ckpt".into());
    Ok(b)
}

/// Runs `trainer`, appending CSV rows and periodic checkpoints to `dir`.
fn run_logged(trainer: &mut Trainer, data: &TrainData, dir: &Path) -> Result<()> {
    let mut log = std::io::BufWriter::new(fs::File::create(dir.join(METRICS_FILE))?);
    writeln!(log, "{}", StepReport::CSV_HEADER)?;
    let ckpt_dir = dir.join("checkpoints");
    let mut io_err: Option<std::io::Error> = None;
    let res = trainer.run(data, 0, &mut |r, t| {
        let last = r.iteration + 1 == t.config.iterations;
        if r.iteration % t.config.log_every == 0 || last {
            if let Err(e) = writeln!(log, "{}", r.csv_row()) {
                io_err = Some(e);
            }
        }
        let every = t.config.checkpoint_every;
        if every > 0 && (r.iteration + 1) % every == 0 {
            save_model(
                &ckpt_dir.join(format!("iter_{:06}.ckpt", r.iteration + 1)),
                &t.pair.student,
                json!({ "iteration": r.iteration + 1 }),
            )?;
        }
        Ok(())
    });
    log.flush()?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    res?;
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<PathBuf> {
    let cfg = resolve_config(&a)?;
    let data = load_data(&a.data, cfg.resolution)?;
    let dir = create_run_dir("train")?;
    let mut record = RunRecord::new("train");
    record.label = a.label.clone().unwrap_or_else(|| arm_label(&cfg));
    record.config = Some(cfg.clone());
    record.data = Some(PathBuf::from(&data.source));
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml_string())?;
    record.save(&dir)?;

    let ae = obtain_autoencoder(&cfg, a.backbone.as_deref(), &data, &dir, &mut record)?;
    let train_data = data.train.clone().with_target_fraction(cfg.data_fraction);
    let palette = Palette::cityscapes(cfg.num_classes)?;
    let mut trainer = Trainer::new(cfg.clone(), fresh_student(&cfg, &ae), palette)?;
    run_logged(&mut trainer, &train_data, &dir)?;
    record.metrics = Some(METRICS_FILE.into());

    let meta = json!({ "iterations": cfg.iterations, "seed": cfg.seed });
    save_model(&dir.join(MODEL_FILE), &trainer.pair.student, meta.clone())?;
    save_model(&dir.join("teacher.ckpt"), &trainer.pair.teacher, meta)?;
    record.artifacts.extend([MODEL_FILE.to_string(), "teacher.ckpt".to_string()]);
    let e = evaluate(&trainer.pair.student, &data.target_val, false)?;
    record.final_eval = Some(write_eval(&dir, &e)?);
    record.artifacts.extend([EVAL_FILE.to_string(), CONFUSION_FILE.to_string()]);
    record.save(&dir)?;
    Ok(dir)
}

fn arm_label(cfg: &TrainConfig) -> String {
    match (cfg.dplg, cfg.lplr) {
        (true, true) => "full",
        (true, false) => "dplg",
        (false, true) => "lplr",
        (false, false) => "baseline",
    }
    .into()
}

pub fn eval(a: EvalArgs) -> Result<PathBuf> {
    let (model, _) = load_model(&a.checkpoint)?;
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        other => bail!("unknown split {other:?} (train, val)"),
    };
    let samples = match (&a.data.data, split) {
        (Some(root), _) => {
            let m = DatasetManifest::load(&root.join(if a.source { "source" } else { "target" }))?;
            load_eval_split(&m, split)?
        }
        (None, Split::Val) => {
            let d = load_data(&a.data, a.resolution)?;
            if a.source {
                d.source_val
            } else {
                d.target_val
            }
        }
        (None, Split::Train) => bail!("the in-memory benchmark exposes only its val split"),
    };
    if let Some((_, y)) = samples.first() {
        model.check_classes(y.num_classes)?;
    }
    let e = evaluate(&model, &samples, a.count_absent_as_zero)?;
    let dir = create_run_dir("eval")?;
    let v = write_eval(&dir, &e)?;
    let mut record = RunRecord::new("eval");
    record.data = a.data.data.clone();
    record.final_eval = Some(v.clone());
    record.artifacts = vec![EVAL_FILE.into(), CONFUSION_FILE.into()];
    record.save(&dir)?;
    println!("{}", serde_json::to_string(&v)?);
    Ok(dir)
}

pub fn synth(a: SynthArgs) -> Result<PathBuf> {
    let m: SyntheticModality = a.modality.parse()?;
    let bench = synthesize(a.seed, a.scenes, a.resolution, m)?;
    let dir = create_run_dir("synth")?;
    let out = a.out.clone().unwrap_or_else(|| dir.join("dataset"));
    bench.write(&out)?;
    let mut record = RunRecord::new("synth");
    record.data = Some(out);
    record.final_eval = Some(json!({
        "seed": a.seed,
        "scenes": a.scenes,
        "resolution": a.resolution,
        "modality": a.modality,
        "train": bench.train.len(),
        "val": bench.val.len(),
    }));
    record.save(&dir)?;
    Ok(dir)
}

pub fn distill(a: DistillArgs) -> Result<PathBuf> {
    let mut cfg = read_config(a.config.as_deref())?.with_overrides(&parse_overrides(&a.overrides)?)?;
    let (teacher, _) = load_model(&a.teacher)?;
    cfg.num_classes = teacher.num_classes();
    let spec = match a.student.as_str() {
        "compact" => ModelSpec::compact(cfg.num_classes),
        "desk" => {
            let mut s = ModelSpec::desk(cfg.num_classes);
            s.head.use_hr = false;
            s
        }
        other => bail!("unknown student architecture {other:?} (compact, desk)"),
    };
    let data = load_data(&a.data, cfg.resolution)?;
    let dir = create_run_dir("distill")?;
    let mut record = RunRecord::new("distill");
    record.label = format!("distill-{}", a.student);
    record.config = Some(cfg.clone());
    record.data = Some(PathBuf::from(&data.source));
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml_string())?;
    record.save(&dir)?;

    let mut log = std::io::BufWriter::new(fs::File::create(dir.join(METRICS_FILE))?);
    writeln!(log, "{}", StepReport::CSV_HEADER)?;
    let student = distill_model(&teacher, spec, &data.train, &cfg, &mut |r, t| {
        if r.iteration % t.config.log_every == 0 || r.iteration + 1 == t.config.iterations {
            writeln!(log, "{}", r.csv_row())?;
        }
        Ok(())
    })?;
    log.flush()?;
    drop(log);
    save_model(&dir.join(MODEL_FILE), &student, json!({ "distilled_from": a.teacher }))?;
    let te = evaluate(&teacher, &data.target_val, false)?;
    let se = evaluate(&student, &data.target_val, false)?;
    write_eval(&dir, &se)?;
    let report = json!({
        "teacher_miou": te.report.mean,
        "student_miou": se.report.mean,
        "ratio": se.report.mean / te.report.mean,
        "teacher_params": teacher.params().num_scalars(),
        "student_params": student.params().num_scalars(),
    });
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    record.metrics = Some(METRICS_FILE.into());
    record.final_eval = Some(json!({ "mean_iou": se.report.mean, "distill": report }));
    record.artifacts = vec![
        MODEL_FILE.into(),
        METRICS_FILE.into(),
        EVAL_FILE.into(),
        CONFUSION_FILE.into(),
        "report.json".into(),
    ];
    record.save(&dir)?;
    Ok(dir)
}

pub fn plot(a: PlotArgs) -> Result<PathBuf> {
    if a.runs.is_empty() {
        bail!("plot needs at least one run directory");
    }
    let mut runs = Vec::new();
    for r in &a.runs {
        runs.push((r.clone(), RunRecord::load(r)?));
    }
    let dir = create_run_dir("plot")?;
    let files = crate::plot::render_all(&runs, &dir, a.samples)?;
    let mut record = RunRecord::new("plot");
    record.artifacts = files;
    record.save(&dir)?;
    Ok(dir)
}
