//! Modality adaptation for semantic segmentation.
//!
//! A latent-diffusion style backbone feeds a segmentation head trained by
//! teacher-student self-training, with pseudo-labels predicted from noised
//! latents and an auxiliary regression of the UNet output onto encoded
//! label renderings. See the guide in `book/` for a walkthrough.

pub mod autograd;
pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod domain;
pub mod dplg;
pub mod error;
pub mod lplr;
pub mod model;
pub mod palette;
pub mod params;
pub mod rng;
pub mod segmentation;
pub mod tensor;
pub mod train;

pub use error::{MadmError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/backbone.md")]
    mod backbone {}
    #[doc = include_str!("../../../book/src/pseudo_labels.md")]
    mod pseudo_labels {}
    #[doc = include_str!("../../../book/src/palette_regression.md")]
    mod palette_regression {}
    #[doc = include_str!("../../../book/src/segmentation.md")]
    mod segmentation {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
