use serde::{Deserialize, Serialize};

use crate::domain::{ImageSample, LabelMap};
use crate::error::Result;
use crate::model::{split_logits, SegModel};
use crate::segmentation::{miou, ConfusionMatrix, MiouReport};
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub report: MiouReport,
}

/// Argmax predictions for every image, computed in small batches.
pub fn predict_all(model: &SegModel, images: &[&ImageSample]) -> Result<Vec<LabelMap>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let xs: Vec<&Tensor> = chunk.iter().map(|x| x.pixels()).collect();
        let logits = model.predict_logits(&Tensor::stack(&xs)?);
        out.extend(split_logits(&logits).iter().map(|l| l.argmax()));
    }
    Ok(out)
}

/// Confusion matrix and mIoU of `model` over labelled samples.
pub fn evaluate(
    model: &SegModel,
    samples: &[(ImageSample, LabelMap)],
    count_absent_as_zero: bool,
) -> Result<Evaluation> {
    if let Some((_, y)) = samples.first() {
        model.check_classes(y.num_classes)?;
    }
    let images: Vec<&ImageSample> = samples.iter().map(|(x, _)| x).collect();
    let preds = predict_all(model, &images)?;
    let mut cm = ConfusionMatrix::new(model.num_classes());
    for (p, (_, y)) in preds.iter().zip(samples) {
        cm.update(p, y)?;
    }
    let report = miou(&cm, count_absent_as_zero)?;
    Ok(Evaluation {
        confusion: cm,
        report,
    })
}
