//! Object-centric encoder models.
//!
//! [`DinosaurModel`] runs slot attention on frozen backbone features and
//! trains by reconstructing those features with a spatial-broadcast decoder.
//! [`VideosaurModel`] extends it to video: a transformer predictor carries
//! slots across timesteps and a temporal feature-similarity loss (decoded
//! through a slot-mixer) supervises the dynamics. Slot masks export as
//! label images for visualization and segmentation scoring.

pub mod decoders;
pub mod masks;

pub use decoders::{BroadcastDecoder, DecodeResult, SlotMixerConfig, SlotMixerDecoder};
pub use masks::slot_masks_to_segmentation;

use crate::encoders::{Backbone, BackboneConfig, FeatureMap, ImageFrame};
use crate::error::{Error, Result};
use crate::nn::{impl_params, Act, EncoderBlock, LayerNorm, Mlp};
use crate::scalar::{s, Scalar};
use crate::slots::{AttentionMap, SlotAttention, SlotAttentionConfig, SlotSet};
use crate::tensor::{mse, Tape, Var};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DinosaurConfig {
    pub backbone: BackboneConfig,
    pub slots: SlotAttentionConfig,
    /// Hidden width of the feature projection in front of slot attention.
    pub proj_hidden: usize,
    pub dec_layers: usize,
    pub dec_hidden: usize,
    /// Seed of the fixed slot-init draw used at inference time (training
    /// samples from the training generator instead).
    pub init_seed: u64,
}

impl Default for DinosaurConfig {
    fn default() -> Self {
        DinosaurConfig {
            backbone: BackboneConfig {
                block_scale: 0.1,
                ..Default::default()
            },
            slots: SlotAttentionConfig::default(),
            proj_hidden: 128,
            dec_layers: 3,
            dec_hidden: 768,
            init_seed: 0,
        }
    }
}

/// Slot-attention image model over a frozen backbone, trained by feature
/// reconstruction.
#[derive(Clone, Debug)]
pub struct DinosaurModel<S: Scalar> {
    /// Frozen; excluded from the trainable parameter walk.
    pub backbone: Backbone<S>,
    pub feature_norm: LayerNorm<S>,
    pub feature_proj: Mlp<S>,
    pub slot_attn: SlotAttention<S>,
    pub decoder: BroadcastDecoder<S>,
    pub config: DinosaurConfig,
}

impl_params!(DinosaurModel {
    feature_norm,
    feature_proj,
    slot_attn,
    decoder,
});

impl<S: Scalar> DinosaurModel<S> {
    pub fn new(rng: &mut impl Rng, config: DinosaurConfig) -> Result<Self> {
        let backbone = Backbone::new(config.backbone.clone())?;
        let feat_dim = config.backbone.feat_dim;
        let slot_attn = SlotAttention::new(rng, config.slots.clone())?;
        let feature_proj = Mlp::new(
            rng,
            &[feat_dim, config.proj_hidden, config.slots.input_dim],
            Act::Relu,
        );
        let decoder = BroadcastDecoder::new(
            rng,
            config.slots.slot_dim,
            config.backbone.tokens(),
            feat_dim,
            config.dec_layers,
            config.dec_hidden,
        );
        Ok(DinosaurModel {
            backbone,
            feature_norm: LayerNorm::new(feat_dim),
            feature_proj,
            slot_attn,
            decoder,
            config,
        })
    }

    /// Projects raw backbone tokens into slot-attention input space.
    fn project(&self, raw_tokens: &Var<S>) -> Var<S> {
        self.feature_proj
            .forward(&self.feature_norm.forward(raw_tokens))
    }

    /// Slot init lifted onto a tape so the learned Gaussian trains.
    fn init_slots_vars(&self, tape: &Tape<S>, rng: &mut impl Rng, k: usize) -> Var<S> {
        init_slots_vars(&self.slot_attn, tape, rng, k)
    }

    /// Slots + final attention map for externally supplied features (the
    /// adapter seam for real pretrained backbones).
    pub fn encode_features(&self, feats: &FeatureMap<S>) -> Result<(SlotSet<S>, AttentionMap<S>)> {
        if feats.width() != self.config.backbone.feat_dim {
            return Err(Error::contract(format!(
                "feature width {} does not match backbone width {}",
                feats.width(),
                self.config.backbone.feat_dim
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(self.config.init_seed);
        let init = self
            .slot_attn
            .init_slots(&mut rng, self.config.slots.num_slots)?;
        let tape = Tape::new();
        let raw = tape.constant(feats.tokens.clone());
        let projected = self.project(&raw);
        let (slots, attn) = self
            .slot_attn
            .run_vars(&tape.constant(init.slots.clone()), &projected);
        let attn_val = attn.value().as_ref().clone();
        if !attn_val.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("non-finite attention in encode"));
        }
        Ok((
            SlotSet::new(slots.value().as_ref().clone())?,
            AttentionMap { weights: attn_val },
        ))
    }

    /// Backbone → slot init → iterative attention.
    pub fn encode(&self, image: &ImageFrame<S>) -> Result<(SlotSet<S>, AttentionMap<S>)> {
        let feats = self.backbone.forward(image)?;
        self.encode_features(&feats)
    }

    /// Broadcast-decode a slot set.
    pub fn decode(&self, slots: &SlotSet<S>) -> Result<DecodeResult<S>> {
        if slots.width() != self.config.slots.slot_dim {
            return Err(Error::contract("slot width does not match decoder"));
        }
        let tape = Tape::new();
        let sv = tape.constant(slots.slots.clone());
        let (recon, alpha) = self.decoder.decode_vars(&sv);
        let res = DecodeResult {
            reconstruction: recon.value().as_ref().clone(),
            alpha: alpha.value().as_ref().clone(),
        };
        res.validate()?;
        Ok(res)
    }

    /// Training loss on a tape: encode the (frozen) feature tokens, decode,
    /// and regress the tokens themselves.
    pub fn loss_vars(&self, tape: &Tape<S>, raw_tokens: &Array2<S>, rng: &mut impl Rng) -> Var<S> {
        let targets = tape.constant(raw_tokens.clone());
        let raw = tape.constant(raw_tokens.clone());
        let projected = self.project(&raw);
        let init = self.init_slots_vars(tape, rng, self.config.slots.num_slots);
        let (slots, _) = self.slot_attn.run_vars(&init, &projected);
        let (recon, _) = self.decoder.decode_vars(&slots);
        mse(&recon, &targets)
    }

    /// Feature-reconstruction loss for one image.
    pub fn loss(&self, image: &ImageFrame<S>, rng: &mut impl Rng) -> Result<S> {
        let feats = self.backbone.forward(image)?;
        let tape = Tape::new();
        let loss = self.loss_vars(&tape, &feats.tokens, rng);
        let v = loss.item();
        if !v.is_finite() {
            return Err(Error::numeric("non-finite reconstruction loss"));
        }
        Ok(v)
    }
}

/// Mean squared error between a decoded reconstruction and target features,
/// as plain values. The targets are constants: no gradient reaches them.
pub fn reconstruction_loss<S: Scalar>(recon: &Array2<S>, targets: &Array2<S>) -> Result<S> {
    if recon.dim() != targets.dim() {
        return Err(Error::contract("reconstruction/target shape mismatch"));
    }
    let n = recon.len();
    let total: S = recon
        .iter()
        .zip(targets.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(total / s::<S>(n as f64))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct VideosaurConfig {
    pub backbone: BackboneConfig,
    pub slots: SlotAttentionConfig,
    pub proj_hidden: usize,
    pub predictor_heads: usize,
    pub predictor_hidden: usize,
    pub mixer: SlotMixerConfig,
    /// Frames encoded per window (≥ 2 for training, ≥ 1 for inference).
    pub history: usize,
    /// Temperature of the temporal feature-similarity targets.
    pub tau: f64,
    /// Weight of the optional per-frame feature-reconstruction term.
    pub lambda: f64,
    pub init_seed: u64,
}

impl Default for VideosaurConfig {
    fn default() -> Self {
        VideosaurConfig {
            backbone: BackboneConfig {
                block_scale: 0.1,
                ..Default::default()
            },
            slots: SlotAttentionConfig::default(),
            proj_hidden: 128,
            predictor_heads: 4,
            predictor_hidden: 512,
            mixer: SlotMixerConfig::default(),
            history: 4,
            tau: 0.1,
            lambda: 0.1,
            init_seed: 0,
        }
    }
}

/// Video slot model: per-frame slot attention with a transformer predictor
/// carrying slots from `t-1` to `t`, a slot-mixer decoder, and a temporal
/// feature-similarity loss.
#[derive(Clone, Debug)]
pub struct VideosaurModel<S: Scalar> {
    pub backbone: Backbone<S>,
    pub feature_norm: LayerNorm<S>,
    pub feature_proj: Mlp<S>,
    pub slot_attn: SlotAttention<S>,
    pub predictor: EncoderBlock<S>,
    pub mixer: SlotMixerDecoder<S>,
    pub sim_head: crate::nn::Linear<S>,
    pub config: VideosaurConfig,
}

impl_params!(VideosaurModel {
    feature_norm,
    feature_proj,
    slot_attn,
    predictor,
    mixer,
    sim_head,
});

impl<S: Scalar> VideosaurModel<S> {
    pub fn new(rng: &mut impl Rng, config: VideosaurConfig) -> Result<Self> {
        if config.history == 0 {
            return Err(Error::Parameter("history must be at least 1".into()));
        }
        if config.slots.slot_dim % config.predictor_heads != 0 {
            return Err(Error::Parameter(
                "slot width must divide into predictor heads".into(),
            ));
        }
        let backbone = Backbone::new(config.backbone.clone())?;
        let feat_dim = config.backbone.feat_dim;
        let slot_attn = SlotAttention::new(rng, config.slots.clone())?;
        let feature_proj = Mlp::new(
            rng,
            &[feat_dim, config.proj_hidden, config.slots.input_dim],
            Act::Relu,
        );
        let predictor = EncoderBlock::new(
            rng,
            config.slots.slot_dim,
            config.predictor_heads,
            config.predictor_hidden,
        );
        let mixer = SlotMixerDecoder::new(
            rng,
            config.slots.slot_dim,
            config.backbone.tokens(),
            feat_dim,
            &config.mixer,
        );
        let sim_head = crate::nn::Linear::new(rng, feat_dim, feat_dim);
        Ok(VideosaurModel {
            backbone,
            feature_norm: LayerNorm::new(feat_dim),
            feature_proj,
            slot_attn,
            predictor,
            mixer,
            sim_head,
            config,
        })
    }

    fn project(&self, raw_tokens: &Var<S>) -> Var<S> {
        self.feature_proj
            .forward(&self.feature_norm.forward(raw_tokens))
    }

    pub fn predict_slots_vars(&self, prev: &Var<S>) -> Var<S> {
        self.predictor.forward(prev, None)
    }

    /// Self-attention transformer over the previous timestep's slots; the
    /// output seeds slot attention at the next timestep.
    pub fn predict_slots(&self, prev: &SlotSet<S>) -> Result<SlotSet<S>> {
        if prev.width() != self.config.slots.slot_dim {
            return Err(Error::contract("slot width does not match predictor"));
        }
        let tape = Tape::new();
        let out = self.predict_slots_vars(&tape.constant(prev.slots.clone()));
        SlotSet::new(out.value().as_ref().clone())
    }

    /// Encodes an ordered frame window. Frame 0 starts from the learned
    /// init; later frames start from the predictor's output, so slot
    /// identity is index-stable across time.
    pub fn encode_video(
        &self,
        frames: &[ImageFrame<S>],
    ) -> Result<Vec<(SlotSet<S>, AttentionMap<S>)>> {
        if frames.is_empty() {
            return Err(Error::contract("encode_video needs at least one frame"));
        }
        let feats = frames
            .iter()
            .map(|f| self.backbone.forward(f))
            .collect::<Result<Vec<_>>>()?;
        self.encode_video_features(&feats)
    }

    /// Same as [`Self::encode_video`] but from precomputed backbone features.
    pub fn encode_video_features(
        &self,
        feats: &[FeatureMap<S>],
    ) -> Result<Vec<(SlotSet<S>, AttentionMap<S>)>> {
        if feats.is_empty() {
            return Err(Error::contract("encode_video needs at least one frame"));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(self.config.init_seed);
        let init = self
            .slot_attn
            .init_slots(&mut rng, self.config.slots.num_slots)?;
        let tape = Tape::new();
        let mut prev: Option<Var<S>> = None;
        let mut out = Vec::with_capacity(feats.len());
        for f in feats {
            let projected = self.project(&tape.constant(f.tokens.clone()));
            let start = match &prev {
                None => tape.constant(init.slots.clone()),
                Some(p) => self.predict_slots_vars(p),
            };
            let (slots, attn) = self.slot_attn.run_vars(&start, &projected);
            out.push((
                SlotSet::new(slots.value().as_ref().clone())?,
                AttentionMap {
                    weights: attn.value().as_ref().clone(),
                },
            ));
            prev = Some(slots);
        }
        Ok(out)
    }

    /// Slot-mixer decode of one slot set.
    pub fn decode(&self, slots: &SlotSet<S>) -> Result<DecodeResult<S>> {
        if slots.width() != self.config.slots.slot_dim {
            return Err(Error::contract("slot width does not match mixer"));
        }
        let tape = Tape::new();
        let sv = tape.constant(slots.slots.clone());
        let (recon, alpha) = self.mixer.decode_vars(&sv);
        let res = DecodeResult {
            reconstruction: recon.value().as_ref().clone(),
            alpha: alpha.value().as_ref().clone(),
        };
        res.validate()?;
        Ok(res)
    }

    /// Temporal-consistency targets between consecutive frames: for each
    /// position `n` of frame `t`, a softmax (temperature `tau`) over the
    /// cosine similarities to every position of frame `t+1`. Computed from
    /// frozen features only.
    pub fn similarity_targets(&self, feat_t: &Array2<S>, feat_next: &Array2<S>) -> Array2<S> {
        let a = normalize_rows(feat_t);
        let b = normalize_rows(feat_next);
        let mut logits = a.dot(&b.t());
        let inv_tau = s::<S>(1.0 / self.config.tau);
        logits.mapv_inplace(|v| v * inv_tau);
        softmax_rows_owned(logits)
    }

    /// Training loss on a tape over an ordered window of raw feature
    /// tokens: mean cross-entropy between predicted and target transition
    /// distributions over consecutive frame pairs, plus `lambda` times the
    /// per-frame feature-reconstruction error (all frames).
    pub fn loss_vars(
        &self,
        tape: &Tape<S>,
        raw_tokens: &[Array2<S>],
        rng: &mut impl Rng,
    ) -> Result<Var<S>> {
        if raw_tokens.len() < 2 {
            return Err(Error::contract("temporal loss needs at least 2 frames"));
        }
        let l = raw_tokens.len();
        let mut temporal: Option<Var<S>> = None;
        let mut recon_term: Option<Var<S>> = None;
        let mut prev: Option<Var<S>> = None;
        for t in 0..l {
            let raw = tape.constant(raw_tokens[t].clone());
            let projected = self.project(&raw);
            let start = match &prev {
                None => init_slots_vars(&self.slot_attn, tape, rng, self.config.slots.num_slots),
                Some(p) => self.predict_slots_vars(p),
            };
            let (slots, _) = self.slot_attn.run_vars(&start, &projected);
            let (recon, _) = self.mixer.decode_vars(&slots);
            if self.config.lambda > 0.0 {
                let term = mse(&recon, &raw);
                recon_term = Some(match recon_term {
                    Some(acc) => acc.add(&term),
                    None => term,
                });
            }
            if t + 1 < l {
                let targets = self.similarity_targets(&raw_tokens[t], &raw_tokens[t + 1]);
                let h = self.sim_head.forward(&recon);
                let h_norm = h
                    .mul(&h)
                    .sum_cols()
                    .clamp_min(s::<S>(1e-12))
                    .sqrt()
                    .recip();
                let h_hat = h.mul_col(&h_norm);
                let next_hat = tape.constant(normalize_rows(&raw_tokens[t + 1]));
                let logits = h_hat
                    .matmul(&next_hat.t())
                    .scale(s::<S>(1.0 / self.config.tau));
                let ce = cross_entropy_mean(&targets, &logits.log_softmax_rows());
                temporal = Some(match temporal {
                    Some(acc) => acc.add(&ce),
                    None => ce,
                });
            }
            prev = Some(slots);
        }
        let mut loss = temporal
            .expect("at least one frame pair")
            .scale(S::one() / s::<S>((l - 1) as f64));
        if let Some(r) = recon_term {
            loss = loss.add(&r.scale(s::<S>(self.config.lambda / l as f64)));
        }
        Ok(loss)
    }

    /// Temporal loss for an ordered frame window.
    pub fn loss(&self, frames: &[ImageFrame<S>], rng: &mut impl Rng) -> Result<S> {
        if frames.len() < 2 {
            return Err(Error::contract("temporal loss needs at least 2 frames"));
        }
        let feats = frames
            .iter()
            .map(|f| self.backbone.forward(f).map(|fm| fm.tokens))
            .collect::<Result<Vec<_>>>()?;
        let tape = Tape::new();
        let loss = self.loss_vars(&tape, &feats, rng)?;
        let v = loss.item();
        if !v.is_finite() {
            return Err(Error::numeric("non-finite temporal loss"));
        }
        Ok(v)
    }
}

/// Slot init on a tape: `mean + exp(log_scale) ⊙ ε` with fresh noise, so
/// the learned Gaussian receives gradients.
fn init_slots_vars<S: Scalar>(
    sa: &SlotAttention<S>,
    tape: &Tape<S>,
    rng: &mut impl Rng,
    k: usize,
) -> Var<S> {
    let d = sa.init_mean.ncols();
    let eps = Array2::from_shape_fn((k, d), |_| S::sample_normal(rng));
    let mean = tape.param(&sa.init_mean).tile_rows(k);
    let scale = tape.param(&sa.init_log_scale).exp().tile_rows(k);
    mean.add(&scale.mul(&tape.constant(eps)))
}

fn normalize_rows<S: Scalar>(x: &Array2<S>) -> Array2<S> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let norm: S = row.iter().map(|&v| v * v).sum::<S>().sqrt().max(s::<S>(1e-12));
        row.mapv_inplace(|v| v / norm);
    }
    out
}

fn softmax_rows_owned<S: Scalar>(mut x: Array2<S>) -> Array2<S> {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut z = S::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z = z + *v;
        }
        row.mapv_inplace(|v| v / z);
    }
    x
}

/// Mean over rows of the cross-entropy between constant target
/// distributions and a predicted log-distribution.
pub fn cross_entropy_mean<S: Scalar>(targets: &Array2<S>, log_pred: &Var<S>) -> Var<S> {
    let n = targets.nrows();
    log_pred
        .mul(&log_pred.tape().constant(targets.clone()))
        .sum_all()
        .scale(-S::one() / s::<S>(n as f64))
}
