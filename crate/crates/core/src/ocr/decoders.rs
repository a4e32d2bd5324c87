//! Slot decoders: spatial broadcast and slot-mixer.
//!
//! Both produce a per-position reconstruction plus per-slot alpha masks
//! whose columns (one column per position) sum to 1.

use crate::error::{Error, Result};
use crate::nn::{impl_params, init, Act, CrossBlock, EncoderBlock, LayerNorm, Linear, Mlp};
use crate::scalar::{s, Scalar};
use crate::tensor::Var;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Reconstruction (`N×feat_dim`) and alpha masks (`K×N`, columns sum to 1).
#[derive(Clone, Debug)]
pub struct DecodeResult<S: Scalar> {
    pub reconstruction: Array2<S>,
    pub alpha: Array2<S>,
}

impl<S: Scalar> DecodeResult<S> {
    pub const COLUMN_TOL: f64 = 1e-6;

    pub fn validate(&self) -> Result<()> {
        if self.alpha.ncols() != self.reconstruction.nrows() {
            return Err(Error::contract("alpha positions must match reconstruction"));
        }
        let tol = s::<S>(Self::COLUMN_TOL);
        for col in self.alpha.columns() {
            let total: S = col.iter().cloned().sum();
            if (total - S::one()).abs() > tol {
                return Err(Error::numeric("alpha column does not sum to 1"));
            }
            if col.iter().any(|v| *v < S::zero()) {
                return Err(Error::numeric("alpha weights must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Per-slot spatial broadcast followed by a shared feed-forward stack with
/// additive learned position encodings. The last output channel is the
/// alpha logit; alphas are softmaxed over slots at each position and the
/// reconstruction is the alpha-weighted sum of per-slot decodes.
#[derive(Clone, Debug)]
pub struct BroadcastDecoder<S: Scalar> {
    pub pos: Array2<S>,
    pub mlp: Mlp<S>,
}

impl_params!(BroadcastDecoder { pos, mlp });

impl<S: Scalar> BroadcastDecoder<S> {
    /// `layers` affine maps with `hidden` width between them; output width
    /// is `feat_dim + 1` (the extra channel is the alpha logit).
    pub fn new(
        rng: &mut impl Rng,
        slot_dim: usize,
        positions: usize,
        feat_dim: usize,
        layers: usize,
        hidden: usize,
    ) -> Self {
        let mut dims = vec![slot_dim];
        dims.extend(std::iter::repeat(hidden).take(layers.saturating_sub(1)));
        dims.push(feat_dim + 1);
        BroadcastDecoder {
            pos: init::normal(rng, positions, slot_dim, 0.02),
            mlp: Mlp::new(rng, &dims, Act::Relu),
        }
    }

    pub fn positions(&self) -> usize {
        self.pos.nrows()
    }

    pub fn feat_dim(&self) -> usize {
        self.mlp.layers.last().expect("mlp has layers").d_out() - 1
    }

    pub fn slot_dim(&self) -> usize {
        self.pos.ncols()
    }

    /// Tape-level decode: returns `(reconstruction N×feat_dim, alpha K×N)`.
    pub fn decode_vars(&self, slots: &Var<S>) -> (Var<S>, Var<S>) {
        let tape = slots.tape();
        let k = slots.rows();
        let n = self.positions();
        let feat_dim = self.feat_dim();
        let pos = tape.param(&self.pos);
        let expanded = slots.repeat_rows_each(n).add(&pos.tile_rows(k));
        let out = self.mlp.forward(&expanded); // (K·N)×(feat_dim+1)
        let alpha = out
            .slice_cols(feat_dim, feat_dim + 1)
            .reshape(k, n)
            .softmax_cols();
        let mut recon: Option<Var<S>> = None;
        for ki in 0..k {
            let part = out
                .slice_rows(ki * n, (ki + 1) * n)
                .slice_cols(0, feat_dim)
                .mul_col(&alpha.slice_rows(ki, ki + 1).t());
            recon = Some(match recon {
                Some(acc) => acc.add(&part),
                None => part,
            });
        }
        (recon.expect("at least one slot"), alpha)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields, default)]
pub struct SlotMixerConfig {
    /// Model width of the mixer transformer.
    pub dim: usize,
    pub alloc_layers: usize,
    pub alloc_heads: usize,
    pub pred_heads: usize,
    /// Feed-forward hidden width inside the blocks.
    pub ff_hidden: usize,
}

impl Default for SlotMixerConfig {
    fn default() -> Self {
        SlotMixerConfig {
            dim: 512,
            alloc_layers: 2,
            alloc_heads: 4,
            pred_heads: 4,
            ff_hidden: 512,
        }
    }
}

/// Slot-mixer decoder: an allocator transformer cross-attends learned
/// position queries to the slots, a final mixing attention yields the
/// per-position slot weights (softmax over slots), the mixed vectors pass
/// through a single predictor block, and a linear head maps to feature
/// space.
#[derive(Clone, Debug)]
pub struct SlotMixerDecoder<S: Scalar> {
    pub queries: Array2<S>,
    pub slot_in: Linear<S>,
    pub allocator: Vec<CrossBlock<S>>,
    pub norm_mix_q: LayerNorm<S>,
    pub norm_mix_s: LayerNorm<S>,
    pub predictor: EncoderBlock<S>,
    pub out_proj: Linear<S>,
}

impl_params!(SlotMixerDecoder {
    queries,
    slot_in,
    allocator,
    norm_mix_q,
    norm_mix_s,
    predictor,
    out_proj,
});

impl<S: Scalar> SlotMixerDecoder<S> {
    pub fn new(
        rng: &mut impl Rng,
        slot_dim: usize,
        positions: usize,
        feat_dim: usize,
        config: &SlotMixerConfig,
    ) -> Self {
        SlotMixerDecoder {
            queries: init::normal(rng, positions, config.dim, 0.02),
            slot_in: Linear::new(rng, slot_dim, config.dim),
            allocator: (0..config.alloc_layers)
                .map(|_| CrossBlock::new(rng, config.dim, config.alloc_heads, config.ff_hidden))
                .collect(),
            norm_mix_q: LayerNorm::new(config.dim),
            norm_mix_s: LayerNorm::new(config.dim),
            predictor: EncoderBlock::new(rng, config.dim, config.pred_heads, config.ff_hidden),
            out_proj: Linear::new(rng, config.dim, feat_dim),
        }
    }

    pub fn positions(&self) -> usize {
        self.queries.nrows()
    }

    pub fn feat_dim(&self) -> usize {
        self.out_proj.d_out()
    }

    /// Tape-level decode: returns `(reconstruction N×feat_dim, alpha K×N)`.
    pub fn decode_vars(&self, slots: &Var<S>) -> (Var<S>, Var<S>) {
        let tape = slots.tape();
        let dim = self.queries.ncols();
        let scale = s::<S>(1.0 / (dim as f64).sqrt());
        let slot_tokens = self.slot_in.forward(slots); // K×dim
        let mut q = tape.param(&self.queries);
        for block in &self.allocator {
            q = block.forward(&q, &slot_tokens);
        }
        let logits = self
            .norm_mix_q
            .forward(&q)
            .matmul(&self.norm_mix_s.forward(&slot_tokens).t())
            .scale(scale); // N×K
        let mix = logits.softmax_rows(); // per-position weights over slots
        let mixed = mix.matmul(&slot_tokens); // N×dim
        let decoded = self.predictor.forward(&mixed, None);
        (self.out_proj.forward(&decoded), mix.t())
    }
}
