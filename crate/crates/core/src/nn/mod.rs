//! Small neural-net layer library over the autodiff tape.
//!
//! Layers own their parameters as plain `ndarray` matrices and lift them
//! onto a tape inside `forward`. The [`Params`] trait walks every parameter
//! with a stable name, which is what the optimizer, checkpoints, and the
//! frozen-encoder checksums are built on.

pub mod init;

use crate::scalar::Scalar;
use crate::tensor::{gelu, Var};
use ndarray::Array2;
use rand::Rng;
use sha2::{Digest, Sha256};

/// Walks parameters in a stable order with hierarchical names.
pub trait Params<S: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<S>)>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<S>)>);
}

impl<S: Scalar> Params<S> for Array2<S> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<S>)>) {
        out.push((prefix.to_string(), self));
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<S>)>) {
        out.push((prefix.to_string(), self));
    }
}

impl<S: Scalar, T: Params<S>> Params<S> for Vec<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<S>)>) {
        for (i, item) in self.iter().enumerate() {
            item.visit(&format!("{prefix}.{i}"), out);
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<S>)>) {
        for (i, item) in self.iter_mut().enumerate() {
            item.visit_mut(&format!("{prefix}.{i}"), out);
        }
    }
}

impl<S: Scalar, T: Params<S>> Params<S> for Option<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<S>)>) {
        if let Some(item) = self {
            item.visit(prefix, out);
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array2<S>)>) {
        if let Some(item) = self {
            item.visit_mut(prefix, out);
        }
    }
}

/// Generates `Params` impls for structs whose listed fields are themselves
/// `Params`.
macro_rules! impl_params {
    ($ty:ident { $($field:ident),+ $(,)? }) => {
        impl<S: crate::scalar::Scalar> crate::nn::Params<S> for $ty<S> {
            fn visit<'a>(
                &'a self,
                prefix: &str,
                out: &mut Vec<(String, &'a ndarray::Array2<S>)>,
            ) {
                $( self.$field.visit(&crate::nn::join_name(prefix, stringify!($field)), out); )+
            }
            fn visit_mut<'a>(
                &'a mut self,
                prefix: &str,
                out: &mut Vec<(String, &'a mut ndarray::Array2<S>)>,
            ) {
                $( self.$field.visit_mut(&crate::nn::join_name(prefix, stringify!($field)), out); )+
            }
        }
    };
}
pub(crate) use impl_params;

pub fn join_name(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

pub fn param_names_and_shapes<S: Scalar>(m: &dyn Params<S>) -> Vec<(String, (usize, usize))> {
    let mut out = Vec::new();
    m.visit("", &mut out);
    out.into_iter().map(|(n, a)| (n, a.dim())).collect()
}

pub fn param_count<S: Scalar>(m: &dyn Params<S>) -> usize {
    let mut out = Vec::new();
    m.visit("", &mut out);
    out.iter().map(|(_, a)| a.len()).sum()
}

/// SHA-256 over every parameter's name, shape, and raw little-endian bytes.
/// Bitwise-stable: any parameter change alters the digest.
pub fn checksum<S: Scalar>(m: &dyn Params<S>) -> String {
    let mut named = Vec::new();
    m.visit("", &mut named);
    let mut hasher = Sha256::new();
    for (name, arr) in named {
        hasher.update(name.as_bytes());
        hasher.update((arr.nrows() as u64).to_le_bytes());
        hasher.update((arr.ncols() as u64).to_le_bytes());
        let mut bytes = Vec::with_capacity(arr.len() * S::WIDTH);
        for &v in arr.iter() {
            v.write_le(&mut bytes);
        }
        hasher.update(&bytes);
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Act {
    Relu,
    Gelu,
    Tanh,
}

impl Act {
    pub fn apply<S: Scalar>(self, x: &Var<S>) -> Var<S> {
        match self {
            Act::Relu => x.relu(),
            Act::Gelu => gelu(x),
            Act::Tanh => x.tanh(),
        }
    }
}

/// Affine map `x·W + b` with `W: in×out`, `b: 1×out`.
#[derive(Clone, Debug)]
pub struct Linear<S: Scalar> {
    pub weight: Array2<S>,
    pub bias: Array2<S>,
}

impl_params!(Linear { weight, bias });

impl<S: Scalar> Linear<S> {
    pub fn new(rng: &mut impl Rng, d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: init::xavier_uniform(rng, d_in, d_out),
            bias: Array2::zeros((1, d_out)),
        }
    }

    /// Xavier init scaled by `gain`; used to start residual branches small.
    pub fn new_scaled(rng: &mut impl Rng, d_in: usize, d_out: usize, gain: f64) -> Self {
        let mut l = Self::new(rng, d_in, d_out);
        let g = S::from_f64(gain);
        l.weight.mapv_inplace(|v| v * g);
        l
    }

    pub fn d_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Var<S>) -> Var<S> {
        let t = x.tape();
        x.matmul(&t.param(&self.weight)).add_row(&t.param(&self.bias))
    }
}

/// Layer normalization with learnable affine parameters.
#[derive(Clone, Debug)]
pub struct LayerNorm<S: Scalar> {
    pub gamma: Array2<S>,
    pub beta: Array2<S>,
    pub eps: S,
}

impl_params!(LayerNorm { gamma, beta });

impl<S: Scalar> LayerNorm<S> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Array2::ones((1, dim)),
            beta: Array2::zeros((1, dim)),
            eps: S::from_f64(1e-5),
        }
    }

    pub fn forward(&self, x: &Var<S>) -> Var<S> {
        let t = x.tape();
        x.layer_norm(&t.param(&self.gamma), &t.param(&self.beta), self.eps)
    }
}

/// Feed-forward stack: `layers.len()` affine maps with `act` between them
/// (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp<S: Scalar> {
    pub layers: Vec<Linear<S>>,
    pub act: Act,
}

impl_params!(Mlp { layers });

impl<S: Scalar> Mlp<S> {
    /// `dims` are the widths `[d_in, h_1, .., d_out]`.
    pub fn new(rng: &mut impl Rng, dims: &[usize], act: Act) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let layers = dims
            .windows(2)
            .map(|w| Linear::new(rng, w[0], w[1]))
            .collect();
        Mlp { layers, act }
    }

    pub fn forward(&self, x: &Var<S>) -> Var<S> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i + 1 < self.layers.len() {
                h = self.act.apply(&h);
            }
        }
        h
    }
}

/// Gated recurrent cell applied row-wise: each row of `x` updates the
/// matching row of `h`.
#[derive(Clone, Debug)]
pub struct GruCell<S: Scalar> {
    pub w_r: Linear<S>,
    pub u_r: Linear<S>,
    pub w_z: Linear<S>,
    pub u_z: Linear<S>,
    pub w_n: Linear<S>,
    pub u_n: Linear<S>,
}

impl_params!(GruCell { w_r, u_r, w_z, u_z, w_n, u_n });

impl<S: Scalar> GruCell<S> {
    pub fn new(rng: &mut impl Rng, d_in: usize, d_hidden: usize) -> Self {
        GruCell {
            w_r: Linear::new(rng, d_in, d_hidden),
            u_r: Linear::new(rng, d_hidden, d_hidden),
            w_z: Linear::new(rng, d_in, d_hidden),
            u_z: Linear::new(rng, d_hidden, d_hidden),
            w_n: Linear::new(rng, d_in, d_hidden),
            u_n: Linear::new(rng, d_hidden, d_hidden),
        }
    }

    pub fn forward(&self, x: &Var<S>, h: &Var<S>) -> Var<S> {
        let r = self.w_r.forward(x).add(&self.u_r.forward(h)).sigmoid();
        let z = self.w_z.forward(x).add(&self.u_z.forward(h)).sigmoid();
        let n = self.w_n.forward(x).add(&r.mul(&self.u_n.forward(h))).tanh();
        // h' = (1-z)*n + z*h
        let one_minus_z = z.neg().add_scalar(S::one());
        one_minus_z.mul(&n).add(&z.mul(h))
    }
}

/// Multi-head scaled dot-product attention. `mask`, when given, is added to
/// the pre-softmax logits of every head (use large negative entries to
/// forbid edges).
#[derive(Clone, Debug)]
pub struct MultiHeadAttention<S: Scalar> {
    pub w_q: Linear<S>,
    pub w_k: Linear<S>,
    pub w_v: Linear<S>,
    pub w_o: Linear<S>,
    pub heads: usize,
}

impl_params!(MultiHeadAttention { w_q, w_k, w_v, w_o });

impl<S: Scalar> MultiHeadAttention<S> {
    pub fn new(rng: &mut impl Rng, dim: usize, heads: usize) -> Self {
        assert!(dim % heads == 0, "dim must divide into heads");
        MultiHeadAttention {
            w_q: Linear::new(rng, dim, dim),
            w_k: Linear::new(rng, dim, dim),
            w_v: Linear::new(rng, dim, dim),
            w_o: Linear::new(rng, dim, dim),
            heads,
        }
    }

    pub fn forward(
        &self,
        queries: &Var<S>,
        keys: &Var<S>,
        values: &Var<S>,
        mask: Option<&Var<S>>,
    ) -> Var<S> {
        let dim = self.w_q.d_out();
        let dh = dim / self.heads;
        let scale = S::from_f64(1.0 / (dh as f64).sqrt());
        let q = self.w_q.forward(queries);
        let k = self.w_k.forward(keys);
        let v = self.w_v.forward(values);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let qh = q.slice_cols(a, b);
            let kh = k.slice_cols(a, b);
            let vh = v.slice_cols(a, b);
            let mut logits = qh.matmul(&kh.t()).scale(scale);
            if let Some(m) = mask {
                logits = logits.add(m);
            }
            outs.push(logits.softmax_rows().matmul(&vh));
        }
        let refs: Vec<&Var<S>> = outs.iter().collect();
        self.w_o.forward(&Var::hcat(&refs))
    }
}

/// Pre-norm transformer encoder block (self-attention + feed-forward, both
/// residual).
#[derive(Clone, Debug)]
pub struct EncoderBlock<S: Scalar> {
    pub norm1: LayerNorm<S>,
    pub attn: MultiHeadAttention<S>,
    pub norm2: LayerNorm<S>,
    pub ff: Mlp<S>,
}

impl_params!(EncoderBlock { norm1, attn, norm2, ff });

impl<S: Scalar> EncoderBlock<S> {
    pub fn new(rng: &mut impl Rng, dim: usize, heads: usize, hidden: usize) -> Self {
        EncoderBlock {
            norm1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(rng, dim, heads),
            norm2: LayerNorm::new(dim),
            ff: Mlp::new(rng, &[dim, hidden, dim], Act::Gelu),
        }
    }

    pub fn forward(&self, x: &Var<S>, mask: Option<&Var<S>>) -> Var<S> {
        let n = self.norm1.forward(x);
        let x = x.add(&self.attn.forward(&n, &n, &n, mask));
        x.add(&self.ff.forward(&self.norm2.forward(&x)))
    }
}

/// Pre-norm block whose attention reads from an external memory
/// (cross-attention + feed-forward).
#[derive(Clone, Debug)]
pub struct CrossBlock<S: Scalar> {
    pub norm_q: LayerNorm<S>,
    pub norm_mem: LayerNorm<S>,
    pub attn: MultiHeadAttention<S>,
    pub norm_ff: LayerNorm<S>,
    pub ff: Mlp<S>,
}

impl_params!(CrossBlock { norm_q, norm_mem, attn, norm_ff, ff });

impl<S: Scalar> CrossBlock<S> {
    pub fn new(rng: &mut impl Rng, dim: usize, heads: usize, hidden: usize) -> Self {
        CrossBlock {
            norm_q: LayerNorm::new(dim),
            norm_mem: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(rng, dim, heads),
            norm_ff: LayerNorm::new(dim),
            ff: Mlp::new(rng, &[dim, hidden, dim], Act::Gelu),
        }
    }

    pub fn forward(&self, queries: &Var<S>, memory: &Var<S>) -> Var<S> {
        let q = self.norm_q.forward(queries);
        let m = self.norm_mem.forward(memory);
        let x = queries.add(&self.attn.forward(&q, &m, &m, None));
        x.add(&self.ff.forward(&self.norm_ff.forward(&x)))
    }
}

/// Transformer decoder block: causal-free self-attention over the queries,
/// cross-attention into the memory, then feed-forward. Pre-norm, residual.
#[derive(Clone, Debug)]
pub struct DecoderBlock<S: Scalar> {
    pub norm_self: LayerNorm<S>,
    pub self_attn: MultiHeadAttention<S>,
    pub cross: CrossBlock<S>,
}

impl_params!(DecoderBlock { norm_self, self_attn, cross });

impl<S: Scalar> DecoderBlock<S> {
    pub fn new(rng: &mut impl Rng, dim: usize, heads: usize, hidden: usize) -> Self {
        DecoderBlock {
            norm_self: LayerNorm::new(dim),
            self_attn: MultiHeadAttention::new(rng, dim, heads),
            cross: CrossBlock::new(rng, dim, heads, hidden),
        }
    }

    pub fn forward(&self, queries: &Var<S>, memory: &Var<S>) -> Var<S> {
        let n = self.norm_self.forward(queries);
        let q = queries.add(&self.self_attn.forward(&n, &n, &n, None));
        self.cross.forward(&q, memory)
    }
}

/// Additive attention mask with `0` on allowed edges and a large negative
/// value on forbidden ones. `blocks` gives the token count of each
/// observation step; tokens may attend within their own step and to all
/// earlier steps ("block-causal"). The first `prefix` tokens (task tokens)
/// are visible to everyone and see everything.
pub fn block_causal_mask<S: Scalar>(prefix: usize, blocks: &[usize]) -> Array2<S> {
    let total: usize = prefix + blocks.iter().sum::<usize>();
    let neg = S::from_f64(-1e30);
    let mut mask = Array2::from_elem((total, total), neg);
    // step id per token: prefix tokens get step 0, block b gets step b+1
    let mut step_of = vec![0usize; total];
    let mut pos = prefix;
    for (b, &len) in blocks.iter().enumerate() {
        for _ in 0..len {
            step_of[pos] = b + 1;
            pos += 1;
        }
    }
    for i in 0..total {
        for j in 0..total {
            if step_of[j] <= step_of[i] {
                mask[(i, j)] = S::zero();
            }
        }
    }
    mask
}
