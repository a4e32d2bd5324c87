//! Visual backbone and the unified encoder interface.
//!
//! The backbone is a small frozen patch transformer: patchify → linear
//! projection → fixed sinusoidal position encodings → two pre-norm
//! self-attention blocks, all seed-initialized and never trained. Its
//! forward pass is plain `ndarray` math, so no gradient can flow into it
//! structurally. An adapter ([`feature_files`]) accepts externally computed
//! feature files for users with real pretrained backbones.
//!
//! Encoders produce a [`Representation`]: one pooled token (`Global`), the
//! full token grid (`Dense`), or `K` slot vectors (`Slots`).

pub mod feature_files;
pub mod registry;

pub use registry::{Encoder, EncoderRegistry};

use crate::error::{Error, Result};
use crate::nn::{impl_params, init, LayerNorm, Linear};
use crate::scalar::{s, Scalar};
use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// An H×W×3 image with pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFrame<S: Scalar> {
    pub pixels: Array3<S>,
}

impl<S: Scalar> ImageFrame<S> {
    pub fn new(pixels: Array3<S>) -> Result<Self> {
        if pixels.shape()[2] != 3 {
            return Err(Error::contract("image must have 3 channels"));
        }
        if !pixels.iter().all(|v| v.is_finite() && *v >= S::zero() && *v <= S::one()) {
            return Err(Error::contract("pixel values must lie in [0, 1]"));
        }
        Ok(ImageFrame { pixels })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let inv = s::<S>(1.0 / 255.0);
        let pixels = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            s::<S>(img.get_pixel(x as u32, y as u32).0[c] as f64) * inv
        });
        ImageFrame { pixels }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let (h, w, _) = self.pixels.dim();
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |c: usize| {
                let v = self.pixels[(y as usize, x as usize, c)].to_f64();
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }
}

/// Dense backbone features over a square patch grid, flattened row-major to
/// `N = grid²` tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<S: Scalar> {
    pub tokens: Array2<S>,
    /// Side length of the square patch grid.
    pub grid: usize,
    /// Pixels per patch side.
    pub patch_size: usize,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn new(tokens: Array2<S>, grid: usize, patch_size: usize) -> Result<Self> {
        if tokens.nrows() != grid * grid {
            return Err(Error::contract(format!(
                "token count {} does not equal grid {}²",
                tokens.nrows(),
                grid
            )));
        }
        if !tokens.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("feature map contains non-finite entries"));
        }
        Ok(FeatureMap { tokens, grid, patch_size })
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.ncols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReprKind {
    Global,
    Dense,
    Slots,
}

impl std::fmt::Display for ReprKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReprKind::Global => write!(f, "global"),
            ReprKind::Dense => write!(f, "dense"),
            ReprKind::Slots => write!(f, "slots"),
        }
    }
}

/// Unified encoder output: `M×D` tokens tagged with their structural kind
/// (`M = 1` for Global, `M = N` for Dense, `M = K` for Slots).
#[derive(Clone, Debug, PartialEq)]
pub struct Representation<S: Scalar> {
    pub kind: ReprKind,
    pub tokens: Array2<S>,
    pub source_id: String,
}

impl<S: Scalar> Representation<S> {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ReprKind::Global if self.tokens.nrows() != 1 => {
                Err(Error::contract("global representation must have one token"))
            }
            _ if self.tokens.nrows() == 0 => {
                Err(Error::contract("representation needs at least one token"))
            }
            _ => Ok(()),
        }
    }

    pub fn token_count(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub feat_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Init gain on each residual branch's output projection. Small values
    /// keep the frozen blocks near identity so patch content stays local.
    pub block_scale: f64,
    pub seed: u64,
    /// Always true for policy-training uses; training code refuses to run
    /// otherwise.
    pub frozen: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            image_size: 112,
            patch_size: 8,
            feat_dim: 64,
            blocks: 2,
            heads: 4,
            mlp_ratio: 2,
            block_scale: 1.0,
            seed: 0,
            frozen: true,
        }
    }
}

impl BackboneConfig {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Parameter(
                "image size must be divisible by patch size".into(),
            ));
        }
        if self.feat_dim % self.heads != 0 {
            return Err(Error::Parameter("feat_dim must divide into heads".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BackboneBlock<S: Scalar> {
    pub ln1: LayerNorm<S>,
    pub w_q: Linear<S>,
    pub w_k: Linear<S>,
    pub w_v: Linear<S>,
    pub w_o: Linear<S>,
    pub ln2: LayerNorm<S>,
    pub fc1: Linear<S>,
    pub fc2: Linear<S>,
}

impl_params!(BackboneBlock { ln1, w_q, w_k, w_v, w_o, ln2, fc1, fc2 });

/// The frozen, seed-initialized patch transformer.
#[derive(Clone, Debug)]
pub struct Backbone<S: Scalar> {
    pub patch_proj: Linear<S>,
    pub pos: Array2<S>,
    pub blocks: Vec<BackboneBlock<S>>,
    pub config: BackboneConfig,
}

impl_params!(Backbone { patch_proj, pos, blocks });

impl<S: Scalar> Backbone<S> {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let d = config.feat_dim;
        let patch_in = config.patch_size * config.patch_size * 3;
        let patch_proj = Linear::new(&mut rng, patch_in, d);
        let pos = init::sinusoidal_positions(config.tokens(), d);
        let blocks = (0..config.blocks)
            .map(|_| BackboneBlock {
                ln1: LayerNorm::new(d),
                w_q: Linear::new(&mut rng, d, d),
                w_k: Linear::new(&mut rng, d, d),
                w_v: Linear::new(&mut rng, d, d),
                w_o: Linear::new_scaled(&mut rng, d, d, config.block_scale),
                ln2: LayerNorm::new(d),
                fc1: Linear::new(&mut rng, d, d * config.mlp_ratio),
                fc2: Linear::new_scaled(&mut rng, d * config.mlp_ratio, d, config.block_scale),
            })
            .collect();
        Ok(Backbone { patch_proj, pos, blocks, config })
    }

    /// Row-major patch extraction: patch (gy, gx) flattens its pixels
    /// (y, x, c) row-major into one row.
    fn patchify(&self, image: &ImageFrame<S>) -> Array2<S> {
        let p = self.config.patch_size;
        let g = self.config.grid();
        let mut out = Array2::zeros((g * g, p * p * 3));
        for gy in 0..g {
            for gx in 0..g {
                let row = gy * g + gx;
                let mut col = 0;
                for py in 0..p {
                    for px in 0..p {
                        for c in 0..3 {
                            out[(row, col)] = image.pixels[(gy * p + py, gx * p + px, c)];
                            col += 1;
                        }
                    }
                }
            }
        }
        out
    }

    /// Deterministic frozen forward pass (no tape, no gradients).
    pub fn forward(&self, image: &ImageFrame<S>) -> Result<FeatureMap<S>> {
        let (h, w, _) = image.pixels.dim();
        if h != self.config.image_size || w != self.config.image_size {
            return Err(Error::contract(format!(
                "image {h}×{w} does not match configured size {}",
                self.config.image_size
            )));
        }
        let mut x = plain_linear(&self.patchify(image), &self.patch_proj);
        x += &self.pos;
        for block in &self.blocks {
            let normed = plain_layer_norm(&x, &block.ln1);
            x = &x + &plain_attention(&normed, block, self.config.heads);
            let normed = plain_layer_norm(&x, &block.ln2);
            let hidden = plain_linear(&normed, &block.fc1).mapv(|v| plain_gelu(v));
            x = &x + &plain_linear(&hidden, &block.fc2);
        }
        FeatureMap::new(x, self.config.grid(), self.config.patch_size)
    }
}

fn plain_linear<S: Scalar>(x: &Array2<S>, l: &Linear<S>) -> Array2<S> {
    x.dot(&l.weight) + &l.bias
}

fn plain_layer_norm<S: Scalar>(x: &Array2<S>, ln: &LayerNorm<S>) -> Array2<S> {
    let d = x.ncols();
    let dn = s::<S>(d as f64);
    let mut out = Array2::zeros(x.dim());
    for (xi, mut oi) in x.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let mu: S = xi.iter().cloned().sum::<S>() / dn;
        let var: S = xi.iter().map(|&v| (v - mu) * (v - mu)).sum::<S>() / dn;
        let sig = (var + ln.eps).sqrt();
        for (j, (o, &v)) in oi.iter_mut().zip(xi.iter()).enumerate() {
            *o = (v - mu) / sig * ln.gamma[(0, j)] + ln.beta[(0, j)];
        }
    }
    out
}

fn plain_softmax_rows<S: Scalar>(x: &mut Array2<S>) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut z = S::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z = z + *v;
        }
        row.mapv_inplace(|v| v / z);
    }
}

fn plain_gelu<S: Scalar>(v: S) -> S {
    let c = s::<S>(0.7978845608028654);
    let a = s::<S>(0.044715);
    let half = s::<S>(0.5);
    half * v * (S::one() + (c * (v + a * v * v * v)).tanh())
}

fn plain_attention<S: Scalar>(x: &Array2<S>, b: &BackboneBlock<S>, heads: usize) -> Array2<S> {
    let d = x.ncols();
    let dh = d / heads;
    let scale = s::<S>(1.0 / (dh as f64).sqrt());
    let q = plain_linear(x, &b.w_q);
    let k = plain_linear(x, &b.w_k);
    let v = plain_linear(x, &b.w_v);
    let mut out = Array2::zeros(x.dim());
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let qh = q.slice(ndarray::s![.., cols.clone()]);
        let kh = k.slice(ndarray::s![.., cols.clone()]);
        let vh = v.slice(ndarray::s![.., cols.clone()]);
        let mut scores = qh.dot(&kh.t()).mapv(|val| val * scale);
        plain_softmax_rows(&mut scores);
        out.slice_mut(ndarray::s![.., cols]).assign(&scores.dot(&vh));
    }
    plain_linear(&out, &b.w_o)
}

/// Backbone features for one image.
pub fn extract_features<S: Scalar>(
    image: &ImageFrame<S>,
    backbone: &Backbone<S>,
) -> Result<FeatureMap<S>> {
    backbone.forward(image)
}

/// Mean over all tokens → a single global token.
pub fn encode_global<S: Scalar>(feat: &FeatureMap<S>, source_id: &str) -> Representation<S> {
    let n = s::<S>(feat.tokens.nrows() as f64);
    let mean = feat
        .tokens
        .sum_axis(Axis(0))
        .insert_axis(Axis(0))
        .mapv(|v| v / n);
    Representation {
        kind: ReprKind::Global,
        tokens: mean,
        source_id: source_id.to_string(),
    }
}

/// Identity pass-through of the N tokens in row-major grid order.
pub fn encode_dense<S: Scalar>(feat: &FeatureMap<S>, source_id: &str) -> Representation<S> {
    Representation {
        kind: ReprKind::Dense,
        tokens: feat.tokens.clone(),
        source_id: source_id.to_string(),
    }
}
