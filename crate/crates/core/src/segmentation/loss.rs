use crate::autograd::Graph;
use crate::domain::LabelMap;
use crate::dplg::PseudoLabel;
use crate::error::{MadmError, Result};
use crate::tensor::Tensor;

use super::SegLogits;

/// Mean per-pixel cross-entropy over non-ignored pixels; zero when every
/// pixel is ignored.
pub fn ce_loss(p: &SegLogits, y: &LabelMap) -> Result<f64> {
    weighted_ce(p, y, 1.0)
}

/// `ce_loss(p_t, labels) * q`.
pub fn weighted_target_loss(p_t: &SegLogits, pl: &PseudoLabel) -> Result<f64> {
    weighted_ce(p_t, &pl.labels, pl.confidence_q)
}

fn weighted_ce(p: &SegLogits, y: &LabelMap, weight: f64) -> Result<f64> {
    if (p.height(), p.width()) != (y.height(), y.width()) {
        return Err(MadmError::Shape(format!(
            "logits {}x{} vs labels {}x{}",
            p.height(),
            p.width(),
            y.height(),
            y.width()
        )));
    }
    if y.num_classes > p.num_classes() {
        return Err(MadmError::ClassCount {
            expected: p.num_classes(),
            found: y.num_classes,
        });
    }
    let mut g = Graph::new();
    let shape = p.values().shape();
    let batched = Tensor::from_vec(&[1, shape[0], shape[1], shape[2]], p.values().data().to_vec())?;
    let l = g.constant(batched);
    let loss = g.cross_entropy(l, y.classes(), y.ignore_value, &[weight]);
    Ok(g.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(k: usize, h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> SegLogits {
        let mut d = vec![0.0; k * h * w];
        for c in 0..k {
            for p in 0..h * w {
                d[c * h * w + p] = f(c, p);
            }
        }
        SegLogits::new(Tensor::from_vec(&[k, h, w], d).unwrap()).unwrap()
    }

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        let y = LabelMap::new((0..16).map(|i| (i % 4) as u8).collect(), 4, 4, 4).unwrap();
        let p = logits(4, 4, 4, |c, p| if c == p % 4 { 50.0 } else { 0.0 });
        assert!(ce_loss(&p, &y).unwrap() <= 1e-6);
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let y = LabelMap::new((0..64).map(|i| (i % 11) as u8).collect(), 8, 8, 11).unwrap();
        let p = logits(11, 8, 8, |_, _| 0.3);
        assert!((ce_loss(&p, &y).unwrap() - 11f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn all_ignored_gives_zero() {
        let y = LabelMap::filled(4, 4, 3, 255).unwrap();
        let p = logits(3, 4, 4, |c, p| (c * p) as f64);
        assert_eq!(ce_loss(&p, &y).unwrap(), 0.0);
    }

    #[test]
    fn target_loss_scales_with_confidence() {
        let y = LabelMap::new((0..16).map(|i| (i % 3) as u8).collect(), 4, 4, 3).unwrap();
        let p = logits(3, 4, 4, |c, p| ((c + 1) * (p + 2)) as f64 * 0.1);
        let ce = ce_loss(&p, &y).unwrap();
        for (q, want) in [(0.0, 0.0), (1.0, ce), (0.5, ce / 2.0)] {
            let pl = PseudoLabel {
                labels: y.clone(),
                confidence_q: q,
            };
            assert!((weighted_target_loss(&p, &pl).unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let y = LabelMap::filled(4, 4, 3, 0).unwrap();
        let p = logits(3, 4, 8, |_, _| 0.0);
        assert!(ce_loss(&p, &y).is_err());
    }
}
