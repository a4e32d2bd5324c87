//! Iterative slot attention with competitive normalization.
//!
//! A set of slot vectors cross-attends to a set of input features; softmax
//! normalization runs over the *slot* axis, so input locations distribute
//! their mass across slots and slots compete for the scene. The winning
//! weights are renormalized per slot into a weighted mean of the values,
//! which drives a gated recurrent update plus a residual feed-forward
//! transform. Repeating the step a fixed number of times yields the final
//! slots.

use crate::error::{Error, Result};
use crate::nn::{impl_params, Act, GruCell, LayerNorm, Linear, Mlp};
use crate::scalar::{s, Scalar};
use crate::tensor::{Tape, Var};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Floor applied to per-slot weight sums before renormalization.
pub const WEIGHT_SUM_FLOOR: f64 = 1e-8;

/// Dense input features: `N` tokens of width `input_dim`, with optional
/// position encodings carried alongside (already baked into `values` by the
/// encoders; kept for permutation bookkeeping).
#[derive(Clone, Debug)]
pub struct FeatureSet<S: Scalar> {
    pub values: Array2<S>,
    pub positions: Option<Array2<S>>,
}

impl<S: Scalar> FeatureSet<S> {
    pub fn new(values: Array2<S>, positions: Option<Array2<S>>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::contract("feature set needs at least one token"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("feature set contains non-finite entries"));
        }
        if let Some(p) = &positions {
            if p.nrows() != values.nrows() {
                return Err(Error::contract("positions must match token count"));
            }
        }
        Ok(FeatureSet { values, positions })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// The `K` object vectors produced by iterative attention.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotSet<S: Scalar> {
    pub slots: Array2<S>,
}

impl<S: Scalar> SlotSet<S> {
    pub fn new(slots: Array2<S>) -> Result<Self> {
        if slots.nrows() == 0 {
            return Err(Error::contract("slot set needs at least one slot"));
        }
        if !slots.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("slot set contains non-finite entries"));
        }
        Ok(SlotSet { slots })
    }

    pub fn count(&self) -> usize {
        self.slots.nrows()
    }

    pub fn width(&self) -> usize {
        self.slots.ncols()
    }
}

/// Slot-by-input attention weights. Every column (one input location) sums
/// to 1 across slots.
#[derive(Clone, Debug)]
pub struct AttentionMap<S: Scalar> {
    pub weights: Array2<S>,
}

impl<S: Scalar> AttentionMap<S> {
    /// Column-normalization tolerance used by `validate`.
    pub const COLUMN_TOL: f64 = 1e-6;

    pub fn validate(&self) -> Result<()> {
        let tol = s::<S>(Self::COLUMN_TOL);
        for v in self.weights.iter() {
            if !(*v >= S::zero() && *v <= S::one() + tol) {
                return Err(Error::numeric("attention weight outside [0, 1]"));
            }
        }
        for col in self.weights.columns() {
            let total: S = col.iter().cloned().sum();
            if (total - S::one()).abs() > tol {
                return Err(Error::numeric("attention column does not sum to 1"));
            }
        }
        Ok(())
    }

    pub fn num_slots(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_inputs(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct SlotAttentionConfig {
    pub num_slots: usize,
    pub slot_dim: usize,
    /// Common width the query/key/value projections map into.
    pub attn_dim: usize,
    /// Width of the input features.
    pub input_dim: usize,
    pub iterations: usize,
    pub ff_hidden: usize,
}

impl Default for SlotAttentionConfig {
    fn default() -> Self {
        SlotAttentionConfig {
            num_slots: 10,
            slot_dim: 128,
            attn_dim: 128,
            input_dim: 128,
            iterations: 3,
            ff_hidden: 128,
        }
    }
}

impl SlotAttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_slots == 0 || self.slot_dim == 0 || self.attn_dim == 0 || self.input_dim == 0 {
            return Err(Error::Parameter("slot attention widths must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Parameter("iteration count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parameters of the slot attention module: projections, pre-normalization,
/// the recurrent update, the residual feed-forward transform, and the
/// learned Gaussian used for slot initialization.
#[derive(Clone, Debug)]
pub struct SlotAttention<S: Scalar> {
    pub norm_input: LayerNorm<S>,
    pub norm_slots: LayerNorm<S>,
    pub norm_ff: LayerNorm<S>,
    pub proj_q: Linear<S>,
    pub proj_k: Linear<S>,
    pub proj_v: Linear<S>,
    pub gru: GruCell<S>,
    pub ff: Mlp<S>,
    pub init_mean: Array2<S>,
    pub init_log_scale: Array2<S>,
    pub config: SlotAttentionConfig,
}

impl_params!(SlotAttention {
    norm_input,
    norm_slots,
    norm_ff,
    proj_q,
    proj_k,
    proj_v,
    gru,
    ff,
    init_mean,
    init_log_scale,
});

impl<S: Scalar> SlotAttention<S> {
    pub fn new(rng: &mut impl Rng, config: SlotAttentionConfig) -> Result<Self> {
        config.validate()?;
        Ok(SlotAttention {
            norm_input: LayerNorm::new(config.input_dim),
            norm_slots: LayerNorm::new(config.slot_dim),
            norm_ff: LayerNorm::new(config.slot_dim),
            proj_q: Linear::new(rng, config.slot_dim, config.attn_dim),
            proj_k: Linear::new(rng, config.input_dim, config.attn_dim),
            proj_v: Linear::new(rng, config.input_dim, config.attn_dim),
            gru: GruCell::new(rng, config.attn_dim, config.slot_dim),
            ff: Mlp::new(rng, &[config.slot_dim, config.ff_hidden, config.slot_dim], Act::Relu),
            init_mean: crate::nn::init::xavier_uniform(rng, 1, config.slot_dim),
            init_log_scale: Array2::zeros((1, config.slot_dim)),
            config,
        })
    }

    /// Draws `k` slots from the learned Gaussian: `mean + exp(log_scale)·ε`
    /// with `ε ~ N(0, I)`. Deterministic given the generator state. The
    /// mean must be finite; `log_scale` may be `-inf` (zero variance) but
    /// not `+inf` or NaN.
    pub fn init_slots(&self, rng: &mut impl Rng, k: usize) -> Result<SlotSet<S>> {
        if k == 0 {
            return Err(Error::contract("slot count must be at least 1"));
        }
        if !self.init_mean.iter().all(|v| v.is_finite()) {
            return Err(Error::Parameter("init mean must be finite".into()));
        }
        if self
            .init_log_scale
            .iter()
            .any(|v| v.is_nan() || *v == S::infinity())
        {
            return Err(Error::Parameter("init log-scale must not be NaN or +inf".into()));
        }
        let d = self.init_mean.ncols();
        let mut slots = Array2::zeros((k, d));
        for i in 0..k {
            for j in 0..d {
                let eps: S = S::sample_normal(rng);
                slots[(i, j)] = self.init_mean[(0, j)] + self.init_log_scale[(0, j)].exp() * eps;
            }
        }
        SlotSet::new(slots)
    }

    fn check_widths(&self, slots: &SlotSet<S>, feats: &FeatureSet<S>) -> Result<()> {
        if slots.width() != self.config.slot_dim {
            return Err(Error::contract(format!(
                "slot width {} does not match configured {}",
                slots.width(),
                self.config.slot_dim
            )));
        }
        if feats.width() != self.config.input_dim {
            return Err(Error::contract(format!(
                "feature width {} does not match configured {}",
                feats.width(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Keys and values from layer-normalized features. Constant across
    /// iterations, so computed once per run.
    pub fn project_inputs(&self, feats: &Var<S>) -> (Var<S>, Var<S>) {
        let normed = self.norm_input.forward(feats);
        (self.proj_k.forward(&normed), self.proj_v.forward(&normed))
    }

    /// One attention iteration given projected keys/values. Returns the
    /// updated slots and the competitive attention map (K×N, columns sum
    /// to 1).
    pub fn step_kv(&self, slots: &Var<S>, keys: &Var<S>, values: &Var<S>) -> (Var<S>, Var<S>) {
        let scale = s::<S>(1.0 / (self.config.attn_dim as f64).sqrt());
        let q = self.proj_q.forward(&self.norm_slots.forward(slots));
        let logits = q.matmul(&keys.t()).scale(scale); // K×N
        let attn = logits.softmax_cols(); // competition over the slot axis
        let weight_sum = attn.sum_cols().clamp_min(s::<S>(WEIGHT_SUM_FLOOR)); // K×1
        let weights = attn.mul_col(&weight_sum.recip()); // rows sum to 1
        let updates = weights.matmul(values); // K×attn_dim
        let updated = self.gru.forward(&updates, slots);
        let out = updated.add(&self.ff.forward(&self.norm_ff.forward(&updated)));
        (out, attn)
    }

    /// One iteration on tape vars, projecting the features in place.
    pub fn step_vars(&self, slots: &Var<S>, feats: &Var<S>) -> (Var<S>, Var<S>) {
        let (k, v) = self.project_inputs(feats);
        self.step_kv(slots, &k, &v)
    }

    /// `iterations` chained steps from `init`; returns the final slots and
    /// the final-iteration attention map.
    pub fn run_vars(&self, init: &Var<S>, feats: &Var<S>) -> (Var<S>, Var<S>) {
        let (k, v) = self.project_inputs(feats);
        let mut slots = init.clone();
        let mut attn = None;
        for _ in 0..self.config.iterations {
            let (next, a) = self.step_kv(&slots, &k, &v);
            slots = next;
            attn = Some(a);
        }
        (slots, attn.expect("at least one iteration"))
    }

    /// One iteration on concrete values, with contract checks.
    pub fn step(
        &self,
        slots: &SlotSet<S>,
        feats: &FeatureSet<S>,
    ) -> Result<(SlotSet<S>, AttentionMap<S>)> {
        self.check_widths(slots, feats)?;
        let tape = Tape::new();
        let sv = tape.constant(slots.slots.clone());
        let fv = tape.constant(feats.values.clone());
        let (out, attn) = self.step_vars(&sv, &fv);
        self.finish(out, attn)
    }

    /// The full iterative run on concrete values, with contract checks.
    pub fn run(
        &self,
        init: &SlotSet<S>,
        feats: &FeatureSet<S>,
    ) -> Result<(SlotSet<S>, AttentionMap<S>)> {
        self.check_widths(init, feats)?;
        let tape = Tape::new();
        let sv = tape.constant(init.slots.clone());
        let fv = tape.constant(feats.values.clone());
        let (out, attn) = self.run_vars(&sv, &fv);
        self.finish(out, attn)
    }

    fn finish(&self, out: Var<S>, attn: Var<S>) -> Result<(SlotSet<S>, AttentionMap<S>)> {
        let attn_val = attn.value();
        if !attn_val.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("non-finite attention logits"));
        }
        let slots = SlotSet::new(out.value().as_ref().clone())?;
        Ok((
            slots,
            AttentionMap {
                weights: attn_val.as_ref().clone(),
            },
        ))
    }

    /// Attention internals for one step on concrete values: the competitive
    /// map `A`, the per-slot renormalized weights `W`, and the update matrix
    /// `U = W·V`. Used by tests and visualization.
    pub fn attention_detail(
        &self,
        slots: &SlotSet<S>,
        feats: &FeatureSet<S>,
    ) -> Result<(Array2<S>, Array2<S>, Array2<S>)> {
        self.check_widths(slots, feats)?;
        let tape = Tape::new();
        let sv = tape.constant(slots.slots.clone());
        let fv = tape.constant(feats.values.clone());
        let (k, v) = self.project_inputs(&fv);
        let scale = s::<S>(1.0 / (self.config.attn_dim as f64).sqrt());
        let q = self.proj_q.forward(&self.norm_slots.forward(&sv));
        let attn = q.matmul(&k.t()).scale(scale).softmax_cols();
        let weight_sum = attn.sum_cols().clamp_min(s::<S>(WEIGHT_SUM_FLOOR));
        let weights = attn.mul_col(&weight_sum.recip());
        let updates = weights.matmul(&v);
        Ok((
            attn.value().as_ref().clone(),
            weights.value().as_ref().clone(),
            updates.value().as_ref().clone(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn tiny(
        rng_seed: u64,
        k: usize,
        n_inputs: usize,
    ) -> (SlotAttention<f64>, SlotSet<f64>, FeatureSet<f64>) {
        let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
        let config = SlotAttentionConfig {
            num_slots: k,
            slot_dim: 4,
            attn_dim: 4,
            input_dim: 3,
            iterations: 3,
            ff_hidden: 4,
        };
        let sa = SlotAttention::new(&mut rng, config).unwrap();
        let slots = sa.init_slots(&mut rng, k).unwrap();
        let values = Array2::from_shape_fn((n_inputs, 3), |_| rng.gen::<f64>() * 2.0 - 1.0);
        (sa, slots, FeatureSet::new(values, None).unwrap())
    }

    #[test]
    fn init_matches_defaults() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let sa = SlotAttention::<f64>::new(&mut rng, SlotAttentionConfig::default()).unwrap();
        let slots = sa.init_slots(&mut rng, 10).unwrap();
        assert_eq!(slots.slots.dim(), (10, 128));
        assert_eq!(sa.config.iterations, 3);
    }

    #[test]
    fn init_zero_variance_equals_mean() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut sa = SlotAttention::<f64>::new(
            &mut rng,
            SlotAttentionConfig {
                slot_dim: 4,
                attn_dim: 4,
                input_dim: 4,
                ..Default::default()
            },
        )
        .unwrap();
        sa.init_log_scale.fill(f64::NEG_INFINITY);
        let slots = sa.init_slots(&mut rng, 3).unwrap();
        for row in slots.slots.rows() {
            for (a, b) in row.iter().zip(sa.init_mean.row(0).iter()) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn init_is_deterministic_given_seed() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let sa = SlotAttention::<f64>::new(
            &mut rng,
            SlotAttentionConfig {
                slot_dim: 4,
                attn_dim: 4,
                input_dim: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let a = sa.init_slots(&mut ChaCha12Rng::seed_from_u64(7), 2).unwrap();
        let b = sa.init_slots(&mut ChaCha12Rng::seed_from_u64(7), 2).unwrap();
        assert_eq!(a.slots, b.slots);
    }

    #[test]
    fn init_rejects_nan_params() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut sa = SlotAttention::<f64>::new(
            &mut rng,
            SlotAttentionConfig {
                slot_dim: 4,
                attn_dim: 4,
                input_dim: 4,
                ..Default::default()
            },
        )
        .unwrap();
        sa.init_mean[(0, 0)] = f64::NAN;
        assert!(matches!(sa.init_slots(&mut rng, 2), Err(Error::Parameter(_))));
    }

    #[test]
    fn single_slot_attention_is_all_ones() {
        let (sa, slots, feats) = tiny(10, 1, 5);
        let (_, attn) = sa.step(&slots, &feats).unwrap();
        assert_eq!(attn.weights.dim(), (1, 5));
        for v in attn.weights.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        // W is uniform 1/N and U is the mean of the value rows
        let (_, w, u) = sa.attention_detail(&slots, &feats).unwrap();
        for v in w.iter() {
            assert!((v - 0.2).abs() < 1e-12);
        }
        let tape = Tape::new();
        let fv = tape.constant(feats.values.clone());
        let (_, values) = sa.project_inputs(&fv);
        let mean = values.value().mean_axis(ndarray::Axis(0)).unwrap();
        for (a, b) in u.row(0).iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_slots_split_attention_evenly() {
        let (sa, slots, feats) = tiny(11, 2, 4);
        let dup = SlotSet::new(ndarray::stack![
            ndarray::Axis(0),
            slots.slots.row(0),
            slots.slots.row(0)
        ])
        .unwrap();
        let (_, attn) = sa.step(&dup, &feats).unwrap();
        for v in attn.weights.iter() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn columns_sum_to_one() {
        for seed in 0..20 {
            let (sa, slots, feats) = tiny(seed, 3, 6);
            let (_, attn) = sa.run(&slots, &feats).unwrap();
            attn.validate().unwrap();
        }
    }

    #[test]
    fn one_iteration_equals_single_step() {
        let (mut sa, slots, feats) = tiny(12, 3, 5);
        sa.config.iterations = 1;
        let (run_slots, run_attn) = sa.run(&slots, &feats).unwrap();
        let (step_slots, step_attn) = sa.step(&slots, &feats).unwrap();
        assert_eq!(run_slots.slots, step_slots.slots);
        assert_eq!(run_attn.weights, step_attn.weights);
    }

    #[test]
    fn three_iterations_chain_steps() {
        let (sa, slots, feats) = tiny(13, 2, 5);
        assert_eq!(sa.config.iterations, 3);
        let (run_slots, run_attn) = sa.run(&slots, &feats).unwrap();
        let mut cur = slots;
        let mut attn = None;
        for _ in 0..3 {
            let (next, a) = sa.step(&cur, &feats).unwrap();
            cur = next;
            attn = Some(a);
        }
        assert_eq!(run_slots.slots, cur.slots);
        assert_eq!(run_attn.weights, attn.unwrap().weights);
    }

    #[test]
    fn run_is_deterministic() {
        let (sa, slots, feats) = tiny(14, 4, 6);
        let a = sa.run(&slots, &feats).unwrap();
        let b = sa.run(&slots, &feats).unwrap();
        assert_eq!(a.0.slots, b.0.slots);
        assert_eq!(a.1.weights, b.1.weights);
    }

    #[test]
    fn output_keeps_slot_shape() {
        let (sa, slots, feats) = tiny(15, 3, 7);
        let (out, attn) = sa.run(&slots, &feats).unwrap();
        assert_eq!(out.slots.dim(), slots.slots.dim());
        assert_eq!(attn.weights.dim(), (3, 7));
    }

    #[test]
    fn width_mismatch_is_contract_error() {
        let (sa, _, feats) = tiny(16, 2, 4);
        let bad = SlotSet::new(Array2::ones((2, 7))).unwrap();
        assert!(matches!(sa.step(&bad, &feats), Err(Error::Contract(_))));
        let (sa2, slots, _) = tiny(17, 2, 4);
        let badf = FeatureSet::new(Array2::ones((4, 9)), None).unwrap();
        assert!(matches!(sa2.step(&slots, &badf), Err(Error::Contract(_))));
    }

    #[test]
    fn slot_permutation_equivariance() {
        for seed in 0..50 {
            let (sa, slots, feats) = tiny(100 + seed, 3, 5);
            let perm = [2usize, 0, 1];
            let permuted = SlotSet::new(ndarray::stack![
                ndarray::Axis(0),
                slots.slots.row(perm[0]),
                slots.slots.row(perm[1]),
                slots.slots.row(perm[2])
            ])
            .unwrap();
            let (out_a, attn_a) = sa.run(&slots, &feats).unwrap();
            let (out_b, attn_b) = sa.run(&permuted, &feats).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                for j in 0..out_a.slots.ncols() {
                    assert!((out_b.slots[(i, j)] - out_a.slots[(p, j)]).abs() <= 1e-6);
                }
                for j in 0..attn_a.weights.ncols() {
                    assert!((attn_b.weights[(i, j)] - attn_a.weights[(p, j)]).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn input_permutation_consistency() {
        for seed in 0..50 {
            let (sa, slots, feats) = tiny(200 + seed, 3, 4);
            let perm = [3usize, 1, 0, 2];
            let permuted = FeatureSet::new(
                ndarray::stack![
                    ndarray::Axis(0),
                    feats.values.row(perm[0]),
                    feats.values.row(perm[1]),
                    feats.values.row(perm[2]),
                    feats.values.row(perm[3])
                ],
                None,
            )
            .unwrap();
            let (out_a, attn_a) = sa.run(&slots, &feats).unwrap();
            let (out_b, attn_b) = sa.run(&slots, &permuted).unwrap();
            for i in 0..out_a.slots.nrows() {
                for j in 0..out_a.slots.ncols() {
                    assert!((out_b.slots[(i, j)] - out_a.slots[(i, j)]).abs() <= 1e-6);
                }
            }
            for (col_b, &col_a) in perm.iter().enumerate() {
                for k in 0..attn_a.weights.nrows() {
                    assert!((attn_b.weights[(k, col_b)] - attn_a.weights[(k, col_a)]).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn hand_computed_column_softmax_case() {
        // softmax over slots of [[0, ln 3], [0, 0]] per column:
        // column 0 → (1/2, 1/2); column 1 → (3/4, 1/4)
        let tape: Tape<f64> = Tape::new();
        let logits = tape.constant(array![[0.0, 3f64.ln()], [0.0, 0.0]]);
        let attn = logits.softmax_cols().value();
        assert!((attn[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((attn[(0, 1)] - 0.75).abs() < 1e-12);
        assert!((attn[(1, 1)] - 0.25).abs() < 1e-12);
    }
}
