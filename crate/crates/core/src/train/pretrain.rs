use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::backbone::{decoder_graph, encoder_graph, DeskBackbone};
use crate::domain::ImageSample;
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::optim::AdamW;
use super::step::STREAM_INIT;
use super::run::TrainData;
use crate::lplr::palette_encode;
use crate::palette::Palette;

const PRETRAIN_BATCH: usize = 4;
const TARGET_MAE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: usize,
    pub initial_mae: f64,
    pub final_mae: f64,
    pub reached_target: bool,
}

/// Mean absolute reconstruction error of `decode(encode(x))`.
pub fn reconstruction_mae(backbone: &DeskBackbone, images: &[&ImageSample]) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for chunk in images.chunks(8) {
        let xs: Vec<&Tensor> = chunk.iter().map(|x| x.pixels()).collect();
        let x = Tensor::stack(&xs)?;
        let y = backbone.decode_batch(&backbone.encode_batch(&x));
        sum += x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        count += x.len();
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// L1 reconstruction training of the encoder and decoder only. Missing the
/// error target is reported, not fatal.
pub fn pretrain_autoencoder(
    backbone: DeskBackbone,
    corpus: &[&ImageSample],
    heldout: &[&ImageSample],
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(DeskBackbone, PretrainReport)> {
    let initial_mae = reconstruction_mae(&backbone, heldout)?;
    let mut backbone = backbone;
    let mut opt = AdamW::new(lr, 0.9, 0.999, 1e-8, 0.0);
    let ae = backbone.params().filter_prefix(&["enc.", "dec."]);
    let mut params = ae;
    for step in 0..steps {
        if corpus.is_empty() {
            break;
        }
        let mut rng = SeededRng::keyed(seed, &[step as u64]);
        let xs: Vec<&Tensor> = (0..PRETRAIN_BATCH)
            .map(|_| corpus[rng.below(corpus.len())].pixels())
            .collect();
        let x = Tensor::stack(&xs)?;
        let (n, _, h, w) = x.dims4();
        let mut g = Graph::new();
        let p = params.bind(&mut g, |_| true);
        let xv = g.constant(x.clone());
        let z = encoder_graph(&mut g, &p, xv);
        let y = decoder_graph(&mut g, &p, z);
        let loss = g.masked_l1(y, &x, &vec![true; n * h * w], &vec![1.0; n]);
        g.backward(loss);
        let grads = p.grads(&g);
        opt.step(&mut params, &grads);
    }
    backbone.params_mut().merge(&params);
    let final_mae = reconstruction_mae(&backbone, heldout)?;
    Ok((
        backbone,
        PretrainReport {
            steps,
            initial_mae,
            final_mae,
            reached_target: final_mae < TARGET_MAE,
        },
    ))
}

/// Images the autoencoder is fitted on: source and target renderings plus
/// palette renderings of the source labels, so that label latents are
/// reconstructable too.
pub fn autoencoder_corpus(data: &TrainData, palette: &Palette) -> Result<Vec<ImageSample>> {
    let mut out: Vec<ImageSample> = data.source.iter().map(|(x, _)| x.clone()).collect();
    out.extend(data.target.iter().cloned());
    for (_, y) in &data.source {
        out.push(palette_encode(y, palette)?);
    }
    Ok(out)
}

/// Fits a fresh desk autoencoder on [`autoencoder_corpus`] with the
/// pretraining settings of `cfg`.
pub fn desk_autoencoder(
    cfg: &TrainConfig,
    data: &TrainData,
    heldout: &[&ImageSample],
) -> Result<(DeskBackbone, PretrainReport)> {
    let palette = Palette::cityscapes(cfg.num_classes)?;
    let corpus = autoencoder_corpus(data, &palette)?;
    let corpus: Vec<&ImageSample> = corpus.iter().collect();
    let init = DeskBackbone::new(
        crate::backbone::BackboneConfig::default(),
        &mut SeededRng::keyed(cfg.seed, &[STREAM_INIT, 0xae]),
    );
    pretrain_autoencoder(init, &corpus, heldout, cfg.pretrain_steps, cfg.pretrain_lr, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::domain::Modality;

    #[test]
    fn zero_steps_leave_the_error_unchanged() {
        let b = DeskBackbone::new(BackboneConfig::default(), &mut SeededRng::new(0));
        let mut r = SeededRng::new(1);
        let img = ImageSample::new(
            Tensor::from_vec(&[3, 32, 32], (0..3 * 1024).map(|_| r.uniform()).collect()).unwrap(),
            Modality::Image,
            "x",
        )
        .unwrap();
        let before = reconstruction_mae(&b, &[&img]).unwrap();
        let (after, rep) = pretrain_autoencoder(b.clone(), &[&img], &[&img], 0, 1e-3, 0).unwrap();
        assert_eq!(after, b);
        assert_eq!(rep.initial_mae, before);
        assert_eq!(rep.final_mae, before);
    }
}
