//! Transformer building blocks on top of [`Tensor`].

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Parameter traversal. Names are dotted paths, stable across runs.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn normal_param<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("valid std");
    let n = shape.iter().product();
    Tensor::param((0..n).map(|_| dist.sample(rng)).collect(), shape).expect("shape matches")
}

fn zeros_param(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape).with_requires_grad(true)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: normal_param(rng, &[d_in, d_out], INIT_STD),
            bias: zeros_param(&[d_out]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_row(&self.bias)
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Tensor::full(&[dim], 1.0).with_requires_grad(true),
            bias: zeros_param(&[dim]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gain, &self.bias, LN_EPS)
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "gain"), &self.gain);
        f(join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "gain"), &mut self.gain);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng>(rng: &mut R, d_in: usize, hidden: usize, d_out: usize) -> Self {
        Mlp { fc1: Linear::new(rng, d_in, hidden), fc2: Linear::new(rng, hidden, d_out) }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}

impl Module for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Scaled dot-product attention over `heads` column groups.
fn multi_head(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    let (_, dim) = q.dims2()?;
    if dim % heads != 0 {
        return Err(Error::Dimension(format!("dim {dim} not divisible by {heads} heads")));
    }
    let hd = dim / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.narrow(1, h * hd, hd)?;
        let kh = k.narrow(1, h * hd, hd)?;
        let vh = v.narrow(1, h * hd, hd)?;
        let attn = qh.matmul(&kh.transpose()?)?.scale(scale)?.softmax(1)?;
        outs.push(attn.matmul(&vh)?);
    }
    if heads == 1 {
        Ok(outs.pop().expect("one head"))
    } else {
        Tensor::concat(&outs, 1)
    }
}

#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new<R: Rng>(rng: &mut R, dim: usize, heads: usize) -> Self {
        SelfAttention { qkv: Linear::new(rng, dim, 3 * dim), proj: Linear::new(rng, dim, dim), heads }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, dim) = x.dims2()?;
        let qkv = self.qkv.forward(x)?;
        let q = qkv.narrow(1, 0, dim)?;
        let k = qkv.narrow(1, dim, dim)?;
        let v = qkv.narrow(1, 2 * dim, dim)?;
        self.proj.forward(&multi_head(&q, &k, &v, self.heads)?)
    }
}

impl Module for SelfAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.qkv.visit(&join(prefix, "qkv"), f);
        self.proj.visit(&join(prefix, "proj"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.qkv.visit_mut(&join(prefix, "qkv"), f);
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}

#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub q: Linear,
    pub kv: Linear,
    pub proj: Linear,
    pub heads: usize,
}

impl CrossAttention {
    pub fn new<R: Rng>(rng: &mut R, dim: usize, heads: usize) -> Self {
        CrossAttention {
            q: Linear::new(rng, dim, dim),
            kv: Linear::new(rng, dim, 2 * dim),
            proj: Linear::new(rng, dim, dim),
            heads,
        }
    }

    pub fn forward(&self, x: &Tensor, context: &Tensor) -> Result<Tensor> {
        let (_, dim) = x.dims2()?;
        let q = self.q.forward(x)?;
        let kv = self.kv.forward(context)?;
        let k = kv.narrow(1, 0, dim)?;
        let v = kv.narrow(1, dim, dim)?;
        self.proj.forward(&multi_head(&q, &k, &v, self.heads)?)
    }
}

impl Module for CrossAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.q.visit(&join(prefix, "q"), f);
        self.kv.visit(&join(prefix, "kv"), f);
        self.proj.visit(&join(prefix, "proj"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.q.visit_mut(&join(prefix, "q"), f);
        self.kv.visit_mut(&join(prefix, "kv"), f);
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}

/// Pre-norm ViT block.
#[derive(Clone, Debug)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: SelfAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn new<R: Rng>(rng: &mut R, dim: usize, heads: usize, mlp_ratio: usize) -> Self {
        Block {
            norm1: LayerNorm::new(dim),
            attn: SelfAttention::new(rng, dim, heads),
            norm2: LayerNorm::new(dim),
            mlp: Mlp::new(rng, dim, dim * mlp_ratio, dim),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.add(&self.attn.forward(&self.norm1.forward(x)?)?)?;
        x.add(&self.mlp.forward(&self.norm2.forward(&x)?)?)
    }
}

impl Module for Block {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.mlp.visit(&join(prefix, "mlp"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
    }
}

/// Decoder block: self-attention, cross-attention to the other stream, MLP.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub norm1: LayerNorm,
    pub attn: SelfAttention,
    pub norm_q: LayerNorm,
    pub norm_ctx: LayerNorm,
    pub cross: CrossAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl DecoderBlock {
    pub fn new<R: Rng>(rng: &mut R, dim: usize, heads: usize, mlp_ratio: usize) -> Self {
        DecoderBlock {
            norm1: LayerNorm::new(dim),
            attn: SelfAttention::new(rng, dim, heads),
            norm_q: LayerNorm::new(dim),
            norm_ctx: LayerNorm::new(dim),
            cross: CrossAttention::new(rng, dim, heads),
            norm2: LayerNorm::new(dim),
            mlp: Mlp::new(rng, dim, dim * mlp_ratio, dim),
        }
    }

    pub fn forward(&self, x: &Tensor, other: &Tensor) -> Result<Tensor> {
        let x = x.add(&self.attn.forward(&self.norm1.forward(x)?)?)?;
        let ctx = self.norm_ctx.forward(other)?;
        let x = x.add(&self.cross.forward(&self.norm_q.forward(&x)?, &ctx)?)?;
        x.add(&self.mlp.forward(&self.norm2.forward(&x)?)?)
    }
}

impl Module for DecoderBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.norm_q.visit(&join(prefix, "norm_q"), f);
        self.norm_ctx.visit(&join(prefix, "norm_ctx"), f);
        self.cross.visit(&join(prefix, "cross"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.mlp.visit(&join(prefix, "mlp"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.norm_q.visit_mut(&join(prefix, "norm_q"), f);
        self.norm_ctx.visit_mut(&join(prefix, "norm_ctx"), f);
        self.cross.visit_mut(&join(prefix, "cross"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}
