//! Segmentation head, classification losses and mIoU evaluation.

mod head;
mod loss;
mod metrics;

pub use head::{seg_head_graph, HeadConfig, SegHead, SegLogits};
pub use loss::{ce_loss, weighted_target_loss};
pub use metrics::{miou, ConfusionMatrix, MiouReport};
