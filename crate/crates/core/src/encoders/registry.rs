//! Encoder registry: id-keyed dispatch to the concrete encoder kinds.

use super::{encode_dense, encode_global, ImageFrame, Representation, ReprKind};
use crate::error::{Error, Result};
use crate::nn::{checksum, Params};
use crate::ocr::{slot_masks_to_segmentation, DinosaurModel, VideosaurModel};
use crate::scalar::Scalar;
use ndarray::Array2;
use std::collections::BTreeMap;

/// A registered encoder. Immutable after construction; concurrent encode
/// calls are safe.
pub enum Encoder<S: Scalar> {
    Global(super::Backbone<S>),
    Dense(super::Backbone<S>),
    Dinosaur(DinosaurModel<S>),
    Videosaur(VideosaurModel<S>),
}

impl<S: Scalar> Encoder<S> {
    pub fn kind(&self) -> ReprKind {
        match self {
            Encoder::Global(_) => ReprKind::Global,
            Encoder::Dense(_) => ReprKind::Dense,
            Encoder::Dinosaur(_) | Encoder::Videosaur(_) => ReprKind::Slots,
        }
    }

    /// Tokens per representation (`M`).
    pub fn token_count(&self) -> usize {
        match self {
            Encoder::Global(_) => 1,
            Encoder::Dense(b) => b.config.tokens(),
            Encoder::Dinosaur(m) => m.config.slots.num_slots,
            Encoder::Videosaur(m) => m.config.slots.num_slots,
        }
    }

    /// Token width (`D`).
    pub fn dim(&self) -> usize {
        match self {
            Encoder::Global(b) | Encoder::Dense(b) => b.config.feat_dim,
            Encoder::Dinosaur(m) => m.config.slots.slot_dim,
            Encoder::Videosaur(m) => m.config.slots.slot_dim,
        }
    }

    /// Frames of history one encode call consumes.
    pub fn history_len(&self) -> usize {
        match self {
            Encoder::Videosaur(m) => m.config.history,
            _ => 1,
        }
    }

    /// Encodes a frame history ordered oldest→newest. Single-frame encoders
    /// read only the newest frame; video encoders require at least
    /// `history_len` frames.
    pub fn encode(&self, id: &str, frames: &[ImageFrame<S>]) -> Result<Representation<S>> {
        let newest = frames
            .last()
            .ok_or_else(|| Error::contract("encode needs at least one frame"))?;
        match self {
            Encoder::Global(b) => Ok(encode_global(&b.forward(newest)?, id)),
            Encoder::Dense(b) => Ok(encode_dense(&b.forward(newest)?, id)),
            Encoder::Dinosaur(m) => {
                let (slots, _) = m.encode(newest)?;
                Ok(Representation {
                    kind: ReprKind::Slots,
                    tokens: slots.slots,
                    source_id: id.to_string(),
                })
            }
            Encoder::Videosaur(m) => {
                if frames.len() < m.config.history {
                    return Err(Error::contract(format!(
                        "video encoder needs {} frames, got {}",
                        m.config.history,
                        frames.len()
                    )));
                }
                let window = &frames[frames.len() - m.config.history..];
                let steps = m.encode_video(window)?;
                let (slots, _) = steps.into_iter().last().expect("non-empty window");
                Ok(Representation {
                    kind: ReprKind::Slots,
                    tokens: slots.slots,
                    source_id: id.to_string(),
                })
            }
        }
    }

    /// Patch-grid segmentation labels from the decoder's alpha masks.
    /// Global/dense encoders have no masks to offer.
    pub fn segmentation(&self, frames: &[ImageFrame<S>]) -> Result<Array2<u8>> {
        match self {
            Encoder::Global(_) | Encoder::Dense(_) => Err(Error::Unsupported(
                "segmentation requires a slot-based encoder".into(),
            )),
            Encoder::Dinosaur(m) => {
                let newest = frames
                    .last()
                    .ok_or_else(|| Error::contract("segmentation needs a frame"))?;
                let (slots, _) = m.encode(newest)?;
                let decoded = m.decode(&slots)?;
                slot_masks_to_segmentation(&decoded.alpha, m.config.backbone.grid())
            }
            Encoder::Videosaur(m) => {
                if frames.is_empty() {
                    return Err(Error::contract("segmentation needs a frame"));
                }
                let window_len = m.config.history.min(frames.len());
                let window = &frames[frames.len() - window_len..];
                let steps = m.encode_video(window)?;
                let (slots, _) = steps.into_iter().last().expect("non-empty window");
                let decoded = m.decode(&slots)?;
                slot_masks_to_segmentation(&decoded.alpha, m.config.backbone.grid())
            }
        }
    }

    /// Patch size of the underlying feature grid.
    pub fn patch_size(&self) -> usize {
        match self {
            Encoder::Global(b) | Encoder::Dense(b) => b.config.patch_size,
            Encoder::Dinosaur(m) => m.config.backbone.patch_size,
            Encoder::Videosaur(m) => m.config.backbone.patch_size,
        }
    }

    /// SHA-256 over every parameter, backbone included. The frozen-encoder
    /// contract asserts this digest never changes across policy training.
    pub fn checksum(&self) -> String {
        let mut named = Vec::new();
        match self {
            Encoder::Global(b) | Encoder::Dense(b) => b.visit("backbone", &mut named),
            Encoder::Dinosaur(m) => {
                m.backbone.visit("backbone", &mut named);
                m.visit("model", &mut named);
            }
            Encoder::Videosaur(m) => {
                m.backbone.visit("backbone", &mut named);
                m.visit("model", &mut named);
            }
        }
        struct Holder<'a, S: Scalar>(Vec<(String, &'a Array2<S>)>);
        impl<'a, S: Scalar> Params<S> for Holder<'a, S> {
            fn visit<'b>(&'b self, _: &str, out: &mut Vec<(String, &'b Array2<S>)>) {
                for (n, a) in &self.0 {
                    out.push((n.clone(), a));
                }
            }
            fn visit_mut<'b>(
                &'b mut self,
                _: &str,
                _: &mut Vec<(String, &'b mut Array2<S>)>,
            ) {
                unreachable!("checksum never mutates")
            }
        }
        checksum(&Holder(named))
    }
}

/// Id-keyed encoder collection.
#[derive(Default)]
pub struct EncoderRegistry<S: Scalar> {
    encoders: BTreeMap<String, Encoder<S>>,
}

impl<S: Scalar> EncoderRegistry<S> {
    pub fn new() -> Self {
        EncoderRegistry {
            encoders: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, encoder: Encoder<S>) {
        self.encoders.insert(id.into(), encoder);
    }

    pub fn get(&self, id: &str) -> Result<&Encoder<S>> {
        self.encoders
            .get(id)
            .ok_or_else(|| Error::UnknownEncoder(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.encoders.keys()
    }

    /// Dispatches to the registered encoder; the result carries the id as
    /// its `source_id`.
    pub fn encode_with(&self, id: &str, frames: &[ImageFrame<S>]) -> Result<Representation<S>> {
        self.get(id)?.encode(id, frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{Backbone, BackboneConfig};
    use crate::ocr::DinosaurConfig;
    use crate::slots::SlotAttentionConfig;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn small_backbone_config() -> BackboneConfig {
        BackboneConfig {
            image_size: 32,
            patch_size: 8,
            feat_dim: 16,
            blocks: 1,
            heads: 2,
            ..Default::default()
        }
    }

    fn frame(v: f64) -> ImageFrame<f64> {
        ImageFrame::new(Array3::from_elem((32, 32, 3), v)).unwrap()
    }

    fn registry() -> EncoderRegistry<f64> {
        let mut reg = EncoderRegistry::new();
        reg.insert(
            "global-baseline",
            Encoder::Global(Backbone::new(small_backbone_config()).unwrap()),
        );
        reg.insert(
            "dense-baseline",
            Encoder::Dense(Backbone::new(small_backbone_config()).unwrap()),
        );
        let cfg = DinosaurConfig {
            backbone: small_backbone_config(),
            slots: SlotAttentionConfig {
                num_slots: 10,
                slot_dim: 12,
                attn_dim: 12,
                input_dim: 12,
                iterations: 2,
                ff_hidden: 12,
            },
            proj_hidden: 12,
            dec_layers: 2,
            dec_hidden: 16,
            init_seed: 0,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        reg.insert(
            "dinosaur",
            Encoder::Dinosaur(DinosaurModel::new(&mut rng, cfg).unwrap()),
        );
        reg
    }

    #[test]
    fn dinosaur_yields_k_slot_tokens() {
        let reg = registry();
        let rep = reg.encode_with("dinosaur", &[frame(0.4)]).unwrap();
        assert_eq!(rep.kind, ReprKind::Slots);
        assert_eq!(rep.token_count(), 10);
    }

    #[test]
    fn global_baseline_yields_one_token() {
        let reg = registry();
        let rep = reg.encode_with("global-baseline", &[frame(0.4)]).unwrap();
        assert_eq!(rep.kind, ReprKind::Global);
        assert_eq!(rep.token_count(), 1);
    }

    #[test]
    fn unknown_id_is_registry_error() {
        let reg = registry();
        assert!(matches!(
            reg.encode_with("nope", &[frame(0.4)]),
            Err(Error::UnknownEncoder(_))
        ));
    }

    #[test]
    fn global_has_no_segmentation() {
        let reg = registry();
        let enc = reg.get("global-baseline").unwrap();
        assert!(matches!(
            enc.segmentation(&[frame(0.2)]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn encode_is_deterministic() {
        let reg = registry();
        let a = reg.encode_with("dinosaur", &[frame(0.6)]).unwrap();
        let b = reg.encode_with("dinosaur", &[frame(0.6)]).unwrap();
        assert_eq!(a.tokens, b.tokens);
    }

    #[test]
    fn checksum_tracks_parameter_changes() {
        let reg = registry();
        let before = reg.get("dinosaur").unwrap().checksum();
        assert_eq!(before, reg.get("dinosaur").unwrap().checksum());

        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let cfg = DinosaurConfig {
            backbone: small_backbone_config(),
            slots: SlotAttentionConfig {
                num_slots: 10,
                slot_dim: 12,
                attn_dim: 12,
                input_dim: 12,
                iterations: 2,
                ff_hidden: 12,
            },
            proj_hidden: 12,
            dec_layers: 2,
            dec_hidden: 16,
            init_seed: 0,
        };
        let mut model = DinosaurModel::<f64>::new(&mut rng, cfg).unwrap();
        model.slot_attn.init_mean[(0, 0)] += 1e-9;
        let enc = Encoder::Dinosaur(model);
        assert_ne!(enc.checksum(), before);
    }
}
