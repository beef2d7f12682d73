//! The latent-diffusion backbone: encoder, decoder and a single-step
//! denoising UNet conditioned on a learnable embedding.
//!
//! [`BackboneInterface`] is what the rest of the pipeline talks to.
//! [`DeskBackbone`] is a compact convolutional implementation that trains on
//! a CPU in minutes:
//!
//! * encoder: three stride-2 3x3 convolutions and a 3x3 projection to
//!   `latent_channels`, i.e. an exact x8 spatial reduction;
//! * decoder: the mirror image, nearest-neighbour x2 upsampling followed by
//!   a 3x3 convolution at each stage;
//! * UNet: a three-level U with skip connections. The condition embedding
//!   `c` is projected to the first level's width and added as a per-channel
//!   bias. Its three up-path activations are the feature taps at 1/1, 1/2
//!   and 1/4 of the latent resolution (1/8, 1/16, 1/32 of the image), and
//!   its final 3x3 convolution produces the output latent `o`.
//!
//! Parameters are named `enc.*`, `dec.*`, `unet.*` and `cond`.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::domain::{ImageSample, LatentTensor, MultiScaleFeatures, LATENT_STRIDE};
use crate::error::{MadmError, Result};
use crate::params::{Bound, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Name of the learnable condition embedding.
pub const COND: &str = "cond";

/// Images fed to the UNet path must have sides divisible by this.
pub const UNET_STRIDE: usize = 32;

/// Capabilities every backbone offers, independent of its implementation.
pub trait BackboneInterface {
    fn latent_channels(&self) -> usize;

    /// The learnable condition embedding `c`.
    fn condition_embedding(&self) -> &[f64];

    fn encode(&self, x: &ImageSample) -> Result<LatentTensor>;

    /// Decodes to a `[3, 8h, 8w]` tensor.
    fn decode(&self, z: &LatentTensor) -> Result<Tensor>;

    fn unet_forward(&self, z: &LatentTensor, c: &[f64]) -> Result<(MultiScaleFeatures, LatentTensor)>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub latent_channels: usize,
    pub cond_dim: usize,
    pub encoder_widths: [usize; 3],
    pub decoder_widths: [usize; 3],
    pub unet_widths: [usize; 3],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            latent_channels: 4,
            cond_dim: 32,
            encoder_widths: [16, 32, 32],
            decoder_widths: [32, 16, 8],
            unet_widths: [32, 48, 64],
        }
    }
}

impl BackboneConfig {
    /// Channel counts of the `f8`, `f16`, `f32` taps.
    pub fn tap_channels(&self) -> [usize; 3] {
        self.unet_widths
    }
}

/// Builds the encoder on `x : [N, 3, H, W]`, returning `[N, C_lat, H/8, W/8]`.
pub fn encoder_graph(g: &mut Graph, p: &Bound, x: Var) -> Var {
    let h = p.conv(g, "enc.down1", x, 2, 1);
    let h = g.silu(h);
    let h = p.conv(g, "enc.down2", h, 2, 1);
    let h = g.silu(h);
    let h = p.conv(g, "enc.down3", h, 2, 1);
    let h = g.silu(h);
    p.conv(g, "enc.out", h, 1, 1)
}

/// Builds the decoder on `z : [N, C_lat, h, w]`, returning `[N, 3, 8h, 8w]`.
pub fn decoder_graph(g: &mut Graph, p: &Bound, z: Var) -> Var {
    let h = p.conv(g, "dec.in", z, 1, 1);
    let mut h = g.silu(h);
    for name in ["dec.up1", "dec.up2"] {
        h = g.upsample2(h);
        h = p.conv(g, name, h, 1, 1);
        h = g.silu(h);
    }
    h = g.upsample2(h);
    p.conv(g, "dec.out", h, 1, 1)
}

/// Graph handles produced by [`unet_graph`].
#[derive(Clone, Copy, Debug)]
pub struct UnetVars {
    pub f8: Var,
    pub f16: Var,
    pub f32: Var,
    pub o: Var,
}

/// Builds the UNet on `z : [N, C_lat, h, w]` with condition `c : [1, D]`.
pub fn unet_graph(g: &mut Graph, p: &Bound, z: Var, c: Var) -> UnetVars {
    let h = p.conv(g, "unet.in", z, 1, 1);
    let cw = p.var("unet.cond.w");
    let cb = p.var("unet.cond.b");
    let bias = g.linear(c, cw, cb);
    let h = g.add_channel(h, bias);
    let h = g.silu(h);
    let h = p.conv(g, "unet.block1", h, 1, 1);
    let skip1 = g.silu(h);
    let h = p.conv(g, "unet.down1", skip1, 2, 1);
    let h = g.silu(h);
    let h = p.conv(g, "unet.block2", h, 1, 1);
    let skip2 = g.silu(h);
    let h = p.conv(g, "unet.down2", skip2, 2, 1);
    let h = g.silu(h);
    let h = p.conv(g, "unet.mid", h, 1, 1);
    let f32 = g.silu(h);
    let h = g.upsample2(f32);
    let h = g.concat(&[h, skip2]);
    let h = p.conv(g, "unet.up2", h, 1, 1);
    let f16 = g.silu(h);
    let h = g.upsample2(f16);
    let h = g.concat(&[h, skip1]);
    let h = p.conv(g, "unet.up1", h, 1, 1);
    let f8 = g.silu(h);
    let o = p.conv(g, "unet.out", f8, 1, 1);
    UnetVars { f8, f16, f32, o }
}

/// The compact reference backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct DeskBackbone {
    config: BackboneConfig,
    params: ParamStore,
}

impl DeskBackbone {
    /// Random initialisation; the condition embedding starts at zero.
    pub fn new(config: BackboneConfig, rng: &mut SeededRng) -> Self {
        let mut p = ParamStore::new();
        let c = config.latent_channels;
        let [e0, e1, e2] = config.encoder_widths;
        p.init_conv(rng, "enc.down1", 3, e0, 3);
        p.init_conv(rng, "enc.down2", e0, e1, 3);
        p.init_conv(rng, "enc.down3", e1, e2, 3);
        p.init_conv(rng, "enc.out", e2, c, 3);
        let [d0, d1, d2] = config.decoder_widths;
        p.init_conv(rng, "dec.in", c, d0, 3);
        p.init_conv(rng, "dec.up1", d0, d1, 3);
        p.init_conv(rng, "dec.up2", d1, d2, 3);
        p.init_conv(rng, "dec.out", d2, 3, 3);
        let [u0, u1, u2] = config.unet_widths;
        p.init_conv(rng, "unet.in", c, u0, 3);
        p.init_linear(rng, "unet.cond", config.cond_dim, u0);
        p.init_conv(rng, "unet.block1", u0, u0, 3);
        p.init_conv(rng, "unet.down1", u0, u1, 3);
        p.init_conv(rng, "unet.block2", u1, u1, 3);
        p.init_conv(rng, "unet.down2", u1, u2, 3);
        p.init_conv(rng, "unet.mid", u2, u2, 3);
        p.init_conv(rng, "unet.up2", u2 + u1, u1, 3);
        p.init_conv(rng, "unet.up1", u1 + u0, u0, 3);
        p.init_conv(rng, "unet.out", u0, c, 3);
        p.insert(COND, Tensor::zeros(&[1, config.cond_dim]));
        Self { config, params: p }
    }

    pub fn from_params(config: BackboneConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::new(config.clone(), &mut SeededRng::new(0));
        let own = params.filter_prefix(&["enc.", "dec.", "unet.", COND]);
        reference.params.check_congruent(&own)?;
        Ok(Self {
            config,
            params: own,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Replaces only the encoder and decoder weights, e.g. after
    /// autoencoder pretraining.
    pub fn with_autoencoder(mut self, other: &DeskBackbone) -> Self {
        self.params
            .merge(&other.params.filter_prefix(&["enc.", "dec."]));
        self
    }

    pub fn encode_batch(&self, x: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let z = encoder_graph(&mut g, &p, xv);
        g.value(z).clone()
    }

    pub fn decode_batch(&self, z: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let zv = g.constant(z.clone());
        let y = decoder_graph(&mut g, &p, zv);
        g.value(y).clone()
    }
}

fn check_stride(h: usize, w: usize, stride: usize, what: &str) -> Result<()> {
    if h == 0 || w == 0 || h % stride != 0 || w % stride != 0 {
        return Err(MadmError::Shape(format!(
            "{what} needs sides divisible by {stride}, got {h}x{w}"
        )));
    }
    Ok(())
}

impl BackboneInterface for DeskBackbone {
    fn latent_channels(&self) -> usize {
        self.config.latent_channels
    }

    fn condition_embedding(&self) -> &[f64] {
        self.params.get(COND).expect("cond present").data()
    }

    fn encode(&self, x: &ImageSample) -> Result<LatentTensor> {
        check_stride(x.height(), x.width(), LATENT_STRIDE, "encode")?;
        let batch = Tensor::stack(&[x.pixels()])?;
        let z = self.encode_batch(&batch);
        let (_, c, h, w) = z.dims4();
        LatentTensor::new(z.reshape(&[c, h, w])?)
    }

    fn decode(&self, z: &LatentTensor) -> Result<Tensor> {
        if z.channels() != self.config.latent_channels {
            return Err(MadmError::Shape(format!(
                "latent has {} channels, backbone expects {}",
                z.channels(),
                self.config.latent_channels
            )));
        }
        let batch = Tensor::stack(&[z.values()])?;
        let y = self.decode_batch(&batch);
        let (_, c, h, w) = y.dims4();
        y.reshape(&[c, h, w])
    }

    fn unet_forward(&self, z: &LatentTensor, c: &[f64]) -> Result<(MultiScaleFeatures, LatentTensor)> {
        check_stride(z.height(), z.width(), UNET_STRIDE / LATENT_STRIDE, "unet_forward")?;
        if z.channels() != self.config.latent_channels || c.len() != self.config.cond_dim {
            return Err(MadmError::Shape(format!(
                "unet_forward got {} latent channels and a {}-dim condition",
                z.channels(),
                c.len()
            )));
        }
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let zv = g.constant(Tensor::stack(&[z.values()])?);
        let cv = g.constant(Tensor::from_vec(&[1, c.len()], c.to_vec())?);
        let out = unet_graph(&mut g, &p, zv, cv);
        let squeeze = |v: Var| {
            let t = g.value(v).clone();
            let (_, c, h, w) = t.dims4();
            t.reshape(&[c, h, w])
        };
        let feats = MultiScaleFeatures {
            f8: squeeze(out.f8)?,
            f16: squeeze(out.f16)?,
            f32: squeeze(out.f32)?,
        };
        Ok((feats, LatentTensor::new(squeeze(out.o)?)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Modality;

    fn backbone() -> DeskBackbone {
        DeskBackbone::new(BackboneConfig::default(), &mut SeededRng::new(1))
    }

    fn image(h: usize, w: usize, seed: u64) -> ImageSample {
        let mut r = SeededRng::new(seed);
        let data = (0..3 * h * w).map(|_| r.uniform()).collect();
        ImageSample::new(Tensor::from_vec(&[3, h, w], data).unwrap(), Modality::Image, "t").unwrap()
    }

    #[test]
    fn encode_and_decode_follow_stride_arithmetic() {
        let b = backbone();
        let z = b.encode(&image(64, 64, 0)).unwrap();
        assert_eq!(z.values().shape(), &[4, 8, 8]);
        let y = b.decode(&z).unwrap();
        assert_eq!(y.shape(), &[3, 64, 64]);
        let y0 = b.decode(&LatentTensor::zeros(4, 8, 8)).unwrap();
        assert!(y0.is_finite());
    }

    #[test]
    fn encode_of_full_scale_input_is_64_square() {
        let b = backbone();
        let z = b.encode(&image(512, 512, 3)).unwrap();
        assert_eq!(z.values().shape(), &[4, 64, 64]);
    }

    #[test]
    fn zero_image_encodes_deterministically() {
        let b = backbone();
        let x = ImageSample::new(Tensor::zeros(&[3, 64, 64]), Modality::Image, "0").unwrap();
        let (z1, z2) = (b.encode(&x).unwrap(), b.encode(&x).unwrap());
        assert!(z1.values().is_finite());
        assert_eq!(z1, z2);
    }

    #[test]
    fn unet_taps_have_declared_shapes() {
        let b = backbone();
        let z = b.encode(&image(64, 64, 2)).unwrap();
        let (f, o) = b.unet_forward(&z, b.condition_embedding()).unwrap();
        assert_eq!(f.spatial(), [(8, 8), (4, 4), (2, 2)]);
        assert_eq!(o.values().shape(), &[4, 8, 8]);
        let (f2, o2) = b.unet_forward(&z, b.condition_embedding()).unwrap();
        assert_eq!(f, f2);
        assert_eq!(o, o2);
    }

    #[test]
    fn condition_embedding_starts_at_zero_and_steers_the_output() {
        let b = backbone();
        assert!(b.condition_embedding().iter().all(|&v| v == 0.0));
        let z = b.encode(&image(32, 32, 5)).unwrap();
        let (_, o0) = b.unet_forward(&z, b.condition_embedding()).unwrap();
        let mut c = b.condition_embedding().to_vec();
        c[3] += 1e-3;
        let (_, o1) = b.unet_forward(&z, &c).unwrap();
        let diff: f64 = o0
            .values()
            .data()
            .iter()
            .zip(o1.values().data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn rejects_unaligned_inputs() {
        let b = backbone();
        let z = LatentTensor::zeros(4, 3, 4);
        assert!(b.unet_forward(&z, b.condition_embedding()).is_err());
        assert!(b.decode(&LatentTensor::zeros(3, 8, 8)).is_err());
    }

    #[test]
    fn desk_backbone_is_small() {
        assert!(backbone().params().num_scalars() <= 2_000_000);
    }
}
