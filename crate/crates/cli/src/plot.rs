//! PNG figures drawn straight into RGB buffers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::RgbImage;

use madm::checkpoint::load_model;
use madm::lplr::palette_encode;
use madm::palette::Palette;
use madm::train::predict_all;

use crate::commands::load_data_descriptor;
use crate::rundir::{RunRecord, METRICS_FILE, MODEL_FILE};

const BG: [u8; 3] = [255, 255, 255];
const AXIS: [u8; 3] = [90, 90, 90];
const PLOT_W: u32 = 640;
const PLOT_H: u32 = 360;
const MARGIN: u32 = 24;

/// Series colors, taken from the label palette so figures match the
/// prediction grids.
fn series_color(i: usize) -> [u8; 3] {
    let p = Palette::cityscapes(11).expect("11-class palette");
    p.colors()[i % p.len()]
}

/// `(iteration, total)` pairs from a metrics CSV.
pub fn read_total_curve(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().context("empty metrics file")?.split(',').collect();
    let it = header.iter().position(|h| *h == "iteration").context("no iteration column")?;
    let tot = header.iter().position(|h| *h == "total").context("no total column")?;
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Ok((f[it].parse()?, f[tot].parse()?))
        })
        .collect()
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, image::Rgb(c));
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn frame() -> RgbImage {
    let mut img = RgbImage::from_pixel(PLOT_W, PLOT_H, image::Rgb(BG));
    let (l, b) = (MARGIN as i64, (PLOT_H - MARGIN) as i64);
    line(&mut img, (l, MARGIN as i64), (l, b), AXIS);
    line(&mut img, (l, b), ((PLOT_W - MARGIN) as i64, b), AXIS);
    img
}

/// Overlaid total-loss curves, one color per run.
pub fn loss_curves(curves: &[Vec<(f64, f64)>]) -> RgbImage {
    let mut img = frame();
    let pts = curves.iter().flatten();
    let xmax = pts.clone().map(|p| p.0).fold(1.0, f64::max);
    let ymax = pts.map(|p| p.1).filter(|v| v.is_finite()).fold(1e-12, f64::max);
    let (w, h) = ((PLOT_W - 2 * MARGIN) as f64, (PLOT_H - 2 * MARGIN) as f64);
    let to_px = |(x, y): (f64, f64)| {
        (
            MARGIN as i64 + (x / xmax * w).round() as i64,
            (PLOT_H - MARGIN) as i64 - (y.max(0.0) / ymax * h).round() as i64,
        )
    };
    for (i, c) in curves.iter().enumerate() {
        for pair in c.windows(2) {
            line(&mut img, to_px(pair[0]), to_px(pair[1]), series_color(i));
        }
        if let [only] = c.as_slice() {
            let p = to_px(*only);
            line(&mut img, p, p, series_color(i));
        }
    }
    img
}

/// One bar per run, height proportional to mIoU on a [0, 1] axis.
pub fn ablation_bars(values: &[f64]) -> RgbImage {
    let mut img = frame();
    let n = values.len().max(1) as u32;
    let slot = (PLOT_W - 2 * MARGIN) / n;
    let h = (PLOT_H - 2 * MARGIN) as f64;
    for (i, v) in values.iter().enumerate() {
        let top = PLOT_H - MARGIN - (v.clamp(0.0, 1.0) * h).round() as u32;
        let x0 = MARGIN + i as u32 * slot + slot / 6;
        for x in x0..x0 + (slot * 2 / 3).max(1) {
            for y in top..PLOT_H - MARGIN {
                img.put_pixel(x, y, image::Rgb(series_color(i)));
            }
        }
    }
    img
}

/// Rows of ground truth next to prediction, both palette-encoded, on an
/// ignore-colored background.
pub fn prediction_grid(
    rows: &[(madm::domain::LabelMap, madm::domain::LabelMap)],
    palette: &Palette,
) -> Result<RgbImage> {
    let Some((first, _)) = rows.first() else {
        bail!("no samples for the prediction grid")
    };
    let (h, w) = (first.height() as u32, first.width() as u32);
    let gap = 4;
    let mut img = RgbImage::from_pixel(
        2 * w + 3 * gap,
        rows.len() as u32 * (h + gap) + gap,
        image::Rgb(palette.ignore_color()),
    );
    for (r, (gt, pred)) in rows.iter().enumerate() {
        for (col, y) in [gt, pred].into_iter().enumerate() {
            let rgb = palette_encode(y, palette)?.to_rgb8();
            let (ox, oy) = (gap + col as u32 * (w + gap), gap + r as u32 * (h + gap));
            for (i, px) in rgb.chunks(3).enumerate() {
                let (x, yy) = (i as u32 % w, i as u32 / w);
                img.put_pixel(ox + x, oy + yy, image::Rgb([px[0], px[1], px[2]]));
            }
        }
    }
    Ok(img)
}

/// Writes every figure the runs support; returns the file names.
pub fn render_all(runs: &[(PathBuf, RunRecord)], out: &Path, samples: usize) -> Result<Vec<String>> {
    let mut files = Vec::new();
    let mut curves = Vec::new();
    let mut legend = Vec::new();
    for (dir, rec) in runs {
        let m = dir.join(METRICS_FILE);
        if m.exists() {
            legend.push(serde_json::json!({ "run": dir, "label": rec.label, "color": series_color(curves.len()) }));
            curves.push(read_total_curve(&m)?);
        }
    }
    if !curves.is_empty() {
        loss_curves(&curves).save(out.join("loss_curves.png"))?;
        files.push("loss_curves.png".to_string());
    }

    let scored: Vec<(String, f64)> = runs
        .iter()
        .filter_map(|(_, r)| {
            let v = r.final_eval.as_ref()?.get("mean_iou")?.as_f64()?;
            Some((r.label.clone(), v))
        })
        .collect();
    if !scored.is_empty() {
        ablation_bars(&scored.iter().map(|s| s.1).collect::<Vec<_>>()).save(out.join("ablation.png"))?;
        files.push("ablation.png".to_string());
    }

    for (dir, rec) in runs {
        let (ckpt, Some(data)) = (dir.join(MODEL_FILE), rec.data.as_ref()) else {
            continue;
        };
        if !ckpt.exists() {
            continue;
        }
        let (model, _) = load_model(&ckpt)?;
        let eval_set = load_data_descriptor(data, rec.config.as_ref().map_or(64, |c| c.resolution))?;
        let picked: Vec<_> = eval_set.iter().take(samples.max(1)).collect();
        let xs: Vec<_> = picked.iter().map(|(x, _)| x).collect();
        let preds = predict_all(&model, &xs)?;
        let rows: Vec<_> = picked.iter().map(|(_, y)| y.clone()).zip(preds).collect();
        let palette = Palette::cityscapes(model.num_classes())?;
        prediction_grid(&rows, &palette)?.save(out.join("predictions.png"))?;
        files.push("predictions.png".to_string());
        break;
    }
    fs::write(out.join("legend.json"), serde_json::to_string_pretty(&serde_json::json!({
        "curves": legend,
        "bars": scored.iter().map(|(l, v)| serde_json::json!({ "label": l, "mean_iou": v })).collect::<Vec<_>>(),
    }))?)?;
    files.push("legend.json".to_string());
    Ok(files)
}
