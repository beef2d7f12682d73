//! A paired-modality street-scene toy benchmark.
//!
//! Each scene is a label layout (sky, road, buildings, vegetation, poles,
//! vehicles) rendered twice: once as a textured RGB image (the source
//! modality) and once through a fixed modality transform (the target).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{ImageSample, LabelMap, Modality};
use crate::error::{MadmError, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::train::TrainData;

use super::manifest::{DatasetManifest, DatasetRole, ManifestEntry, Split};
use super::merge::ClassMerge;

pub const SYNTH_CLASSES: usize = 6;
pub const SYNTH_CLASS_NAMES: [&str; SYNTH_CLASSES] =
    ["sky", "road", "building", "vegetation", "vehicle", "pole"];
const SKY: u8 = 0;
const ROAD: u8 = 1;
const BUILDING: u8 = 2;
const VEGETATION: u8 = 3;
const VEHICLE: u8 = 4;
const POLE: u8 = 5;

/// Share of scenes held out for evaluation.
pub const VAL_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticModality {
    /// Gradient magnitude of the RGB rendering, like accumulated events.
    Edge,
    /// One constant gray level per object, brighter when closer.
    InverseDepth,
    /// Per-class intensity remap plus blur.
    ThermalLike,
}

impl SyntheticModality {
    pub fn modality(&self) -> Modality {
        match self {
            SyntheticModality::Edge => Modality::Event,
            SyntheticModality::InverseDepth => Modality::Depth,
            SyntheticModality::ThermalLike => Modality::Infrared,
        }
    }
}

impl std::str::FromStr for SyntheticModality {
    type Err = MadmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge" => Ok(Self::Edge),
            "inverse-depth" => Ok(Self::InverseDepth),
            "thermal-like" => Ok(Self::ThermalLike),
            other => Err(MadmError::Config(format!(
                "unknown synthetic modality {other:?} (edge, inverse-depth, thermal-like)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub source: ImageSample,
    pub target: ImageSample,
    pub labels: LabelMap,
}

/// One painted object: its class, per-object inverse depth, and color.
struct Object {
    class: u8,
    near: f64,
    color: [f64; 3],
}

struct Canvas {
    res: usize,
    labels: Vec<u8>,
    owner: Vec<usize>,
    objects: Vec<Object>,
}

impl Canvas {
    fn paint(&mut self, obj: Object, inside: impl Fn(usize, usize) -> bool) {
        let id = self.objects.len();
        for y in 0..self.res {
            for x in 0..self.res {
                if inside(y, x) {
                    self.labels[y * self.res + x] = obj.class;
                    self.owner[y * self.res + x] = id;
                }
            }
        }
        self.objects.push(obj);
    }
}

fn jitter(rng: &mut SeededRng, base: [f64; 3], amount: f64) -> [f64; 3] {
    base.map(|c| (c + rng.uniform_in(-amount, amount)).clamp(0.0, 1.0))
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn layout(rng: &mut SeededRng, res: usize) -> Canvas {
    let r = res as f64;
    let mut c = Canvas {
        res,
        labels: vec![SKY; res * res],
        owner: vec![0; res * res],
        objects: Vec::new(),
    };
    let horizon = rng.uniform_in(0.3, 0.55) * r;
    c.paint(
        Object {
            class: SKY,
            near: 0.05,
            color: jitter(rng, [0.45, 0.65, 0.92], 0.06),
        },
        |_, _| true,
    );
    c.paint(
        Object {
            class: ROAD,
            near: 0.9,
            color: jitter(rng, [0.42, 0.4, 0.42], 0.05),
        },
        |y, _| y as f64 >= horizon,
    );
    for _ in 0..1 + rng.below(3) {
        let w = rng.uniform_in(0.15, 0.35) * r;
        let x0 = rng.uniform_in(-0.1 * r, r - 0.1 * w);
        let top = rng.uniform_in(0.05 * r, (horizon - 0.1 * r).max(0.06 * r));
        let bottom = horizon + 0.05 * r;
        let color = jitter(rng, [0.62, 0.48, 0.36], 0.12);
        let near = rng.uniform_in(0.2, 0.4);
        c.paint(
            Object {
                class: BUILDING,
                near,
                color,
            },
            |y, x| {
                let (y, x) = (y as f64, x as f64);
                y >= top && y < bottom && x >= x0 && x < x0 + w
            },
        );
    }
    for _ in 0..rng.below(3) {
        let cx = rng.uniform() * r;
        let cy = horizon - rng.uniform_in(0.0, 0.1) * r;
        let rad = rng.uniform_in(0.08, 0.16) * r;
        let color = jitter(rng, [0.25, 0.55, 0.2], 0.08);
        let near = rng.uniform_in(0.4, 0.6);
        c.paint(
            Object {
                class: VEGETATION,
                near,
                color,
            },
            |y, x| {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                dx * dx + dy * dy < rad * rad
            },
        );
    }
    for _ in 0..rng.below(3) {
        let x0 = rng.uniform_in(0.0, r - 3.0);
        let w = rng.uniform_in(0.03, 0.05) * r;
        let top = rng.uniform_in(0.1 * r, horizon);
        let bottom = horizon + rng.uniform_in(0.1, 0.25) * r;
        let color = jitter(rng, [0.85, 0.78, 0.2], 0.1);
        let near = rng.uniform_in(0.6, 0.8);
        c.paint(
            Object {
                class: POLE,
                near,
                color,
            },
            |y, x| {
                let (y, x) = (y as f64, x as f64);
                y >= top && y < bottom && x >= x0 && x < x0 + w.max(2.0)
            },
        );
    }
    let mut cars: Vec<(f64, f64, f64, f64)> = (0..1 + rng.below(2))
        .map(|_| {
            let w = rng.uniform_in(0.15, 0.3) * r;
            let h = rng.uniform_in(0.08, 0.15) * r;
            let bottom = rng.uniform_in(horizon + 0.15 * r, r);
            let x0 = rng.uniform_in(-0.05 * r, r - 0.9 * w);
            (x0, w, bottom - h, bottom)
        })
        .collect();
    // Nearer (lower) cars are painted last.
    cars.sort_by(|a, b| a.3.total_cmp(&b.3));
    for (x0, w, top, bottom) in cars {
        let color = [
            [0.85, 0.15, 0.12],
            [0.15, 0.25, 0.8],
            [0.9, 0.9, 0.88],
            [0.12, 0.12, 0.14],
        ][rng.below(4)];
        let color = jitter(rng, color, 0.05);
        c.paint(
            Object {
                class: VEHICLE,
                near: 0.8 + 0.2 * bottom / r,
                color,
            },
            |y, x| {
                let (y, x) = (y as f64, x as f64);
                y >= top && y < bottom && x >= x0 && x < x0 + w
            },
        );
    }
    c
}

/// Textured RGB rendering, `[3, H, W]` values before quantization.
fn render_source(c: &Canvas, rng: &mut SeededRng) -> Vec<f64> {
    let res = c.res;
    let hw = res * res;
    let light = rng.uniform_in(0.85, 1.15);
    let (wy, wx) = (rng.below(6), rng.below(6));
    let mut px = vec![0.0; 3 * hw];
    for y in 0..res {
        for x in 0..res {
            let q = y * res + x;
            let obj = &c.objects[c.owner[q]];
            let shade = match obj.class {
                SKY => 1.0 + 0.25 * (y as f64 / res as f64),
                ROAD => 1.0 + 0.05 * rng.normal(),
                BUILDING => {
                    if (y + wy) % 6 < 3 && (x + wx) % 6 < 3 {
                        0.55
                    } else {
                        1.0
                    }
                }
                VEGETATION => 1.0 + 0.3 * rng.normal(),
                _ => 1.0 + 0.03 * rng.normal(),
            };
            for ch in 0..3 {
                px[ch * hw + q] = (obj.color[ch] * shade * light).clamp(0.0, 1.0);
            }
        }
    }
    px
}

fn luminance(px: &[f64], hw: usize, q: usize) -> f64 {
    0.299 * px[q] + 0.587 * px[hw + q] + 0.114 * px[2 * hw + q]
}

fn render_target(c: &Canvas, source: &[f64], m: SyntheticModality, rng: &mut SeededRng) -> Vec<f64> {
    let res = c.res;
    let hw = res * res;
    let gray: Vec<f64> = match m {
        SyntheticModality::Edge => {
            let lum: Vec<f64> = (0..hw).map(|q| luminance(source, hw, q)).collect();
            let at = |y: isize, x: isize| {
                let y = y.clamp(0, res as isize - 1) as usize;
                let x = x.clamp(0, res as isize - 1) as usize;
                lum[y * res + x]
            };
            (0..hw)
                .map(|q| {
                    let (y, x) = ((q / res) as isize, (q % res) as isize);
                    let gx = at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                        - at(y - 1, x - 1)
                        - 2.0 * at(y, x - 1)
                        - at(y + 1, x - 1);
                    let gy = at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)
                        - at(y - 1, x - 1)
                        - 2.0 * at(y - 1, x)
                        - at(y - 1, x + 1);
                    (gx.hypot(gy) * 0.6).min(1.0)
                })
                .collect()
        }
        SyntheticModality::InverseDepth => (0..hw).map(|q| c.objects[c.owner[q]].near).collect(),
        SyntheticModality::ThermalLike => {
            const HEAT: [f64; SYNTH_CLASSES] = [0.1, 0.55, 0.35, 0.25, 0.9, 0.45];
            let mut t: Vec<f64> = c
                .labels
                .iter()
                .map(|&l| HEAT[l as usize] + 0.03 * rng.normal())
                .collect();
            crate::train::gaussian_blur(&mut t, res, res, 1.0);
            t
        }
    };
    let mut out = vec![0.0; 3 * hw];
    for ch in 0..3 {
        out[ch * hw..(ch + 1) * hw].copy_from_slice(&gray);
    }
    out
}

/// Renders scene `index` of the benchmark keyed on `seed`. Layouts are
/// redrawn until at least three classes are visible.
pub fn synthesize_scene(seed: u64, index: usize, res: usize, m: SyntheticModality) -> Result<SyntheticScene> {
    if res == 0 || res % crate::backbone::UNET_STRIDE != 0 {
        return Err(MadmError::Shape(format!(
            "synthetic resolution {res} must be a positive multiple of {}",
            crate::backbone::UNET_STRIDE
        )));
    }
    let mut rng = SeededRng::keyed(seed, &[index as u64]);
    let canvas = loop {
        let c = layout(&mut rng, res);
        let mut seen = [false; SYNTH_CLASSES];
        c.labels.iter().for_each(|&l| seen[l as usize] = true);
        if seen.iter().filter(|&&s| s).count() >= 3 {
            break c;
        }
    };
    let src = render_source(&canvas, &mut rng);
    let tgt = render_target(&canvas, &src, m, &mut rng);
    let to_img = |v: Vec<f64>, modality: Modality| -> Result<ImageSample> {
        let data = v.into_iter().map(quantize).collect();
        ImageSample::new(
            Tensor::from_vec(&[3, res, res], data)?,
            modality,
            format!("scene{index:05}"),
        )
    };
    Ok(SyntheticScene {
        source: to_img(src, Modality::Image)?,
        target: to_img(tgt, m.modality())?,
        labels: LabelMap::new(canvas.labels, res, res, SYNTH_CLASSES)?,
    })
}

/// The whole benchmark in memory; the last `VAL_FRACTION` of scenes form
/// the validation split.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBenchmark {
    pub modality: SyntheticModality,
    pub train: Vec<SyntheticScene>,
    pub val: Vec<SyntheticScene>,
}

pub fn synthesize(seed: u64, n_scenes: usize, res: usize, m: SyntheticModality) -> Result<SyntheticBenchmark> {
    let scenes = (0..n_scenes)
        .map(|i| synthesize_scene(seed, i, res, m))
        .collect::<Result<Vec<_>>>()?;
    let n_val = ((n_scenes as f64) * VAL_FRACTION).round() as usize;
    let n_val = n_val.min(n_scenes.saturating_sub(1));
    let mut train = scenes;
    let val = train.split_off(n_scenes - n_val);
    Ok(SyntheticBenchmark {
        modality: m,
        train,
        val,
    })
}

impl SyntheticBenchmark {
    /// Labelled source renderings and unlabelled target renderings of the
    /// training scenes.
    pub fn train_data(&self) -> TrainData {
        TrainData {
            source: self
                .train
                .iter()
                .map(|s| (s.source.clone(), s.labels.clone()))
                .collect(),
            target: self.train.iter().map(|s| s.target.clone()).collect(),
        }
    }

    pub fn target_val(&self) -> Vec<(ImageSample, LabelMap)> {
        self.val
            .iter()
            .map(|s| (s.target.clone(), s.labels.clone()))
            .collect()
    }

    pub fn source_val(&self) -> Vec<(ImageSample, LabelMap)> {
        self.val
            .iter()
            .map(|s| (s.source.clone(), s.labels.clone()))
            .collect()
    }

    /// Writes `<root>/source` and `<root>/target`, each with a manifest.
    pub fn write(&self, root: &Path) -> Result<(DatasetManifest, DatasetManifest)> {
        let mut out = Vec::new();
        for (role, dir) in [(DatasetRole::Source, "source"), (DatasetRole::Target, "target")] {
            let base = root.join(dir);
            let mut entries = Vec::new();
            for (split, scenes) in [(Split::Train, &self.train), (Split::Val, &self.val)] {
                let img_dir = PathBuf::from(split.as_str()).join("images");
                let lbl_dir = PathBuf::from(split.as_str()).join("labels");
                std::fs::create_dir_all(base.join(&img_dir))?;
                std::fs::create_dir_all(base.join(&lbl_dir))?;
                for s in scenes {
                    let name = format!("{}.png", s.source.id);
                    let img = match role {
                        DatasetRole::Source => &s.source,
                        DatasetRole::Target => &s.target,
                    };
                    img.save_png(&base.join(&img_dir).join(&name))?;
                    s.labels.save_png(&base.join(&lbl_dir).join(&name))?;
                    entries.push(ManifestEntry {
                        split,
                        image: img_dir.join(&name),
                        label: Some(lbl_dir.join(&name)),
                    });
                }
            }
            let mut merge = ClassMerge::identity(SYNTH_CLASSES);
            merge.names = SYNTH_CLASS_NAMES.iter().map(|s| s.to_string()).collect();
            let manifest = DatasetManifest {
                root: base,
                role,
                modality: match role {
                    DatasetRole::Source => Modality::Image,
                    DatasetRole::Target => self.modality.modality(),
                },
                class_merge: merge,
                entries,
            };
            manifest.save()?;
            out.push(manifest);
        }
        let target = out.pop().expect("two manifests");
        let source = out.pop().expect("two manifests");
        Ok((source, target))
    }
}

/// Generates the benchmark and writes it under `root`.
pub fn generate_synthetic(
    root: &Path,
    seed: u64,
    n_scenes: usize,
    res: usize,
    m: SyntheticModality,
) -> Result<(DatasetManifest, DatasetManifest)> {
    synthesize(seed, n_scenes, res, m)?.write(root)
}

/// Mean absolute pixel difference between two renderings.
pub fn modality_gap(a: &ImageSample, b: &ImageSample) -> f64 {
    let (x, y) = (a.pixels().data(), b.pixels().data());
    x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64
}
