//! The reconstruction network: a ViT image encoder, two intertwined
//! decoders, query/key heads, pointmap heads and the memory value encoder.
//!
//! The target decoder consumes the current frame and produces the query
//! for the next memory read. The reference decoder consumes what was read
//! out of memory for the previous frame and predicts its pointmap.

pub mod layers;
mod types;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use layers::Module;
pub use types::{ConfidenceMap, Image, Pointmap, TokenGrid};

use crate::error::{Error, Result};
use crate::memory::{AttentionRecord, MemoryBank, ReadMode};
use crate::tensor::Tensor;
use layers::{join, normal_param, Block, DecoderBlock, LayerNorm, Linear, Mlp};

/// Network sizes. Defaults are a CPU-trainable toy; the reference scale is
/// a ViT-L encoder (1024 wide, 24 deep), ViT-B decoders (768 wide, 12 deep)
/// and a 6-block value encoder at width 1024.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub enc_dim: usize,
    pub dec_dim: usize,
    /// Width of the value encoder, and of memory keys, values and queries.
    pub mem_enc_dim: usize,
    pub enc_depth: usize,
    pub dec_depth: usize,
    pub mem_enc_depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    /// Dropout on memory-read attention weights during training.
    pub attn_dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 32,
            patch_size: 8,
            enc_dim: 64,
            dec_dim: 48,
            mem_enc_dim: 48,
            enc_depth: 4,
            dec_depth: 2,
            mem_enc_depth: 2,
            num_heads: 4,
            mlp_ratio: 4,
            attn_dropout_p: 0.15,
        }
    }
}

impl ModelConfig {
    /// Tiny network for finite-difference checks.
    pub fn micro() -> Self {
        ModelConfig {
            image_size: 16,
            patch_size: 8,
            enc_dim: 8,
            dec_dim: 8,
            mem_enc_dim: 8,
            enc_depth: 1,
            dec_depth: 1,
            mem_enc_depth: 1,
            num_heads: 2,
            mlp_ratio: 2,
            attn_dropout_p: 0.15,
        }
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model: {m}")));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.num_heads == 0 {
            return bad("num_heads must be >= 1".into());
        }
        for (name, d) in [("enc_dim", self.enc_dim), ("dec_dim", self.dec_dim), ("mem_enc_dim", self.mem_enc_dim)] {
            if d == 0 || d % self.num_heads != 0 {
                return bad(format!("{name} {d} must be a positive multiple of num_heads {}", self.num_heads));
            }
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.attn_dropout_p) {
            return bad(format!("attn_dropout_p {} outside [0, 1)", self.attn_dropout_p));
        }
        Ok(())
    }
}

/// What the reference decoder consumes.
pub enum ReferenceInput<'a> {
    /// Visual features of the first frame (two-view initialization).
    Visual(&'a TokenGrid),
    /// Memory readout for the previous frame.
    Fused(&'a TokenGrid),
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub pointmap: Pointmap,
    pub confidence: ConfidenceMap,
    pub frame_index: usize,
}

impl Prediction {
    pub fn detach(&self) -> Prediction {
        Prediction {
            pointmap: self.pointmap.detach(),
            confidence: self.confidence.detach(),
            frame_index: self.frame_index,
        }
    }
}

/// Carried between steps: the query for the next read and the visual
/// features of the last frame seen.
#[derive(Debug, Clone)]
pub struct StepState {
    pub query: TokenGrid,
    pub visual: TokenGrid,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Reference-stream prediction, for the previous frame (or frame 0 at init).
    pub pred: Prediction,
    /// Target-stream prediction for the current frame; supervision only.
    pub target_pred: Prediction,
    pub next_query: TokenGrid,
    pub new_key: TokenGrid,
    pub new_value: TokenGrid,
    pub attention: Option<AttentionRecord>,
    pub state: StepState,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    patch_embed: Linear,
    enc_pos: Tensor,
    enc_blocks: Vec<Block>,
    enc_norm: LayerNorm,
    dec_in_target: Linear,
    dec_in_visual: Linear,
    dec_in_memory: Linear,
    dec_pos: Tensor,
    dec_target: Vec<DecoderBlock>,
    dec_ref: Vec<DecoderBlock>,
    dec_norm_target: LayerNorm,
    dec_norm_ref: LayerNorm,
    query_head: Mlp,
    key_head: Mlp,
    out_head: Linear,
    target_out_head: Linear,
    value_embed: Linear,
    value_pos: Tensor,
    value_blocks: Vec<Block>,
    value_norm: LayerNorm,
    value_out: Linear,
}

impl Model {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let p = c.num_patches();
        let pix = c.patch_size * c.patch_size;
        let heads = c.num_heads;
        let r = c.mlp_ratio;
        let head_hidden = c.mem_enc_dim * r;
        Ok(Model {
            patch_embed: Linear::new(rng, pix * 3, c.enc_dim),
            enc_pos: normal_param(rng, &[p, c.enc_dim], 0.02),
            enc_blocks: (0..c.enc_depth).map(|_| Block::new(rng, c.enc_dim, heads, r)).collect(),
            enc_norm: LayerNorm::new(c.enc_dim),
            dec_in_target: Linear::new(rng, c.enc_dim, c.dec_dim),
            dec_in_visual: Linear::new(rng, c.enc_dim, c.dec_dim),
            dec_in_memory: Linear::new(rng, c.mem_enc_dim, c.dec_dim),
            dec_pos: normal_param(rng, &[p, c.dec_dim], 0.02),
            dec_target: (0..c.dec_depth).map(|_| DecoderBlock::new(rng, c.dec_dim, heads, r)).collect(),
            dec_ref: (0..c.dec_depth).map(|_| DecoderBlock::new(rng, c.dec_dim, heads, r)).collect(),
            dec_norm_target: LayerNorm::new(c.dec_dim),
            dec_norm_ref: LayerNorm::new(c.dec_dim),
            query_head: Mlp::new(rng, c.dec_dim + c.enc_dim, head_hidden, c.mem_enc_dim),
            key_head: Mlp::new(rng, c.dec_dim + c.enc_dim, head_hidden, c.mem_enc_dim),
            out_head: Linear::new(rng, c.dec_dim, pix * 4),
            target_out_head: Linear::new(rng, c.dec_dim, pix * 4),
            value_embed: Linear::new(rng, pix * 3, c.mem_enc_dim),
            value_pos: normal_param(rng, &[p, c.mem_enc_dim], 0.02),
            value_blocks: (0..c.mem_enc_depth).map(|_| Block::new(rng, c.mem_enc_dim, heads, r)).collect(),
            value_norm: LayerNorm::new(c.mem_enc_dim),
            value_out: Linear::new(rng, c.mem_enc_dim, c.mem_enc_dim),
            config,
        })
    }

    fn check_grid(&self, g: &TokenGrid, dim: usize, what: &str) -> Result<()> {
        let (p, c) = g.tokens.dims2()?;
        if p != self.config.num_patches() || c != dim {
            return Err(Error::Dimension(format!(
                "{what}: expected [{}, {dim}], got {:?}",
                self.config.num_patches(),
                g.tokens.shape()
            )));
        }
        Ok(())
    }

    pub fn encode_image(&self, frame: &Image, frame_index: usize) -> Result<TokenGrid> {
        let s = self.config.image_size;
        if frame.width != s || frame.height != s {
            return Err(Error::Config(format!(
                "frame is {}x{}, model expects {s}x{s}",
                frame.width, frame.height
            )));
        }
        let mut x = self.patch_embed.forward(&frame.patches(self.config.patch_size)?)?.add(&self.enc_pos)?;
        for b in &self.enc_blocks {
            x = b.forward(&x)?;
        }
        Ok(TokenGrid::new(self.enc_norm.forward(&x)?, frame_index))
    }

    /// Runs both decoders jointly; every block reads the other stream's
    /// output from the previous block. Returns `(target, reference)`.
    pub fn decode(&self, f_i: &TokenGrid, f_g: ReferenceInput<'_>) -> Result<(TokenGrid, TokenGrid)> {
        let c = &self.config;
        self.check_grid(f_i, c.enc_dim, "decoder target input")?;
        let (mut r, ref_frame) = match f_g {
            ReferenceInput::Visual(g) => {
                self.check_grid(g, c.enc_dim, "decoder reference input")?;
                (self.dec_in_visual.forward(&g.tokens)?, g.frame_index)
            }
            ReferenceInput::Fused(g) => {
                self.check_grid(g, c.mem_enc_dim, "decoder memory input")?;
                (self.dec_in_memory.forward(&g.tokens)?, g.frame_index)
            }
        };
        r = r.add(&self.dec_pos)?;
        let mut t = self.dec_in_target.forward(&f_i.tokens)?.add(&self.dec_pos)?;
        for (bt, br) in self.dec_target.iter().zip(&self.dec_ref) {
            let t_next = bt.forward(&t, &r)?;
            let r_next = br.forward(&r, &t)?;
            t = t_next;
            r = r_next;
        }
        Ok((
            TokenGrid::new(self.dec_norm_target.forward(&t)?, f_i.frame_index),
            TokenGrid::new(self.dec_norm_ref.forward(&r)?, ref_frame),
        ))
    }

    fn feature_head(&self, head: &Mlp, h: &TokenGrid, f_i: &TokenGrid, what: &str) -> Result<TokenGrid> {
        self.check_grid(h, self.config.dec_dim, what)?;
        self.check_grid(f_i, self.config.enc_dim, what)?;
        let x = Tensor::concat(&[h.tokens.clone(), f_i.tokens.clone()], 1)?;
        Ok(TokenGrid::new(head.forward(&x)?, h.frame_index))
    }

    pub fn head_query(&self, f_h_target: &TokenGrid, f_i: &TokenGrid) -> Result<TokenGrid> {
        self.feature_head(&self.query_head, f_h_target, f_i, "query head")
    }

    pub fn head_key(&self, f_h_ref: &TokenGrid, f_i: &TokenGrid) -> Result<TokenGrid> {
        self.feature_head(&self.key_head, f_h_ref, f_i, "key head")
    }

    fn unpatchify_indices(&self) -> (Vec<usize>, Vec<usize>) {
        let p = self.config.patch_size;
        let side = self.config.image_size;
        let gw = self.config.grid_side();
        let mut pts = Vec::with_capacity(side * side * 3);
        let mut conf = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                let patch = (y / p) * gw + x / p;
                let base = (patch * p * p + (y % p) * p + x % p) * 4;
                pts.extend([base, base + 1, base + 2]);
                conf.push(base + 3);
            }
        }
        (pts, conf)
    }

    fn pointmap_head(&self, head: &Linear, h: &TokenGrid) -> Result<Prediction> {
        self.check_grid(h, self.config.dec_dim, "pointmap head")?;
        let out = head.forward(&h.tokens)?;
        let side = self.config.image_size;
        let (pi, ci) = self.unpatchify_indices();
        let points = out.gather(&[side, side, 3], pi)?;
        let raw = out.gather(&[side, side], ci)?;
        Ok(Prediction {
            pointmap: Pointmap::new(points, vec![true; side * side])?,
            confidence: ConfidenceMap::from_raw(raw)?,
            frame_index: h.frame_index,
        })
    }

    pub fn head_out(&self, f_h_ref: &TokenGrid) -> Result<Prediction> {
        self.pointmap_head(&self.out_head, f_h_ref)
    }

    pub fn head_out_target(&self, f_h_target: &TokenGrid) -> Result<Prediction> {
        self.pointmap_head(&self.target_out_head, f_h_target)
    }

    /// Lightweight ViT over the patchified pointmap, added to the key.
    pub fn encode_value(&self, x: &Pointmap, f_k: &TokenGrid) -> Result<TokenGrid> {
        let c = &self.config;
        self.check_grid(f_k, c.mem_enc_dim, "value encoder key")?;
        let side = c.image_size;
        if x.height() != side || x.width() != side {
            return Err(Error::Dimension(format!(
                "value encoder pointmap {}x{}, expected {side}x{side}",
                x.width(),
                x.height()
            )));
        }
        let p = c.patch_size;
        let gw = c.grid_side();
        let mut idx = Vec::with_capacity(side * side * 3);
        for py in 0..gw {
            for px in 0..gw {
                for iy in 0..p {
                    for ix in 0..p {
                        let pix = (py * p + iy) * side + px * p + ix;
                        idx.extend([3 * pix, 3 * pix + 1, 3 * pix + 2]);
                    }
                }
            }
        }
        let patches = x.points.gather(&[c.num_patches(), p * p * 3], idx)?;
        let mut v = self.value_embed.forward(&patches)?.add(&self.value_pos)?;
        for b in &self.value_blocks {
            v = b.forward(&v)?;
        }
        let v = self.value_out.forward(&self.value_norm.forward(&v)?)?;
        Ok(TokenGrid::new(v.add(&f_k.tokens)?, f_k.frame_index))
    }

    /// Two-view initialization on the first pair: the reference decoder
    /// reads frame 0's visual features directly.
    pub fn init_step(&self, frame0: &Image, frame1: &Image, index0: usize, index1: usize) -> Result<StepOutput> {
        let v0 = self.encode_image(frame0, index0)?;
        let v1 = self.encode_image(frame1, index1)?;
        self.step_from(v1, v0, ReferenceKind::Visual, None)
    }

    /// One incremental step: read memory with the carried query, decode the
    /// new frame against the readout, and produce the next query plus a
    /// key/value pair for the previous frame.
    pub fn forward_step(
        &self,
        frame: &Image,
        frame_index: usize,
        state: &StepState,
        bank: &mut MemoryBank,
        mode: &mut ReadMode<'_>,
    ) -> Result<StepOutput> {
        if bank.total_tokens() == 0 {
            return Err(Error::PipelineOrder(
                "memory is empty after initialization; insert the init key/value first".into(),
            ));
        }
        let (fused, record) = bank.read(&state.query, mode)?;
        let fused = TokenGrid::new(fused.tokens, state.visual.frame_index);
        let v_t = self.encode_image(frame, frame_index)?;
        self.step_from(v_t, state.visual.clone(), ReferenceKind::Fused(fused), Some(record))
    }

    fn step_from(
        &self,
        v_t: TokenGrid,
        v_prev: TokenGrid,
        reference: ReferenceKind,
        attention: Option<AttentionRecord>,
    ) -> Result<StepOutput> {
        let (h_t, h_ref) = match &reference {
            ReferenceKind::Visual => self.decode(&v_t, ReferenceInput::Visual(&v_prev))?,
            ReferenceKind::Fused(g) => self.decode(&v_t, ReferenceInput::Fused(g))?,
        };
        let pred = self.head_out(&h_ref)?;
        let target_pred = self.head_out_target(&h_t)?;
        let next_query = self.head_query(&h_t, &v_t)?;
        let new_key = self.head_key(&h_ref, &v_prev)?;
        let new_value = self.encode_value(&pred.pointmap, &new_key)?;
        Ok(StepOutput {
            pred,
            target_pred,
            state: StepState { query: next_query.clone(), visual: v_t },
            next_query,
            new_key,
            new_value,
            attention,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n, t.clone())));
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(Tensor::len).sum()
    }

    /// Replaces parameters in `named_params` order.
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        let n = self.named_params().len();
        if values.len() != n {
            return Err(Error::Dimension(format!("expected {n} parameter tensors, got {}", values.len())));
        }
        let mut it = values.into_iter();
        let mut err = None;
        self.visit_mut("", &mut |name, slot| {
            let v = it.next().expect("length checked");
            if v.shape() != slot.shape() {
                err.get_or_insert(Error::Dimension(format!(
                    "parameter {name}: shape {:?} vs {:?}",
                    v.shape(),
                    slot.shape()
                )));
                return;
            }
            // keep caller-owned leaves so gradients flow back to them
            *slot = if v.requires_grad() { v } else { v.with_requires_grad(true) };
        });
        err.map_or(Ok(()), Err)
    }

    /// Applies `f` to every parameter of the value encoder.
    pub fn map_value_encoder(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.visit_mut("", &mut |name, t| {
            if name.starts_with("value_encoder.") {
                f(t)
            }
        });
    }
}

enum ReferenceKind {
    Visual,
    Fused(TokenGrid),
}

fn visit_tensor(prefix: &str, name: &str, t: &Tensor, f: &mut dyn FnMut(String, &Tensor)) {
    f(join(prefix, name), t)
}

impl Module for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        let enc = join(prefix, "encoder");
        self.patch_embed.visit(&join(&enc, "patch_embed"), f);
        visit_tensor(&enc, "pos", &self.enc_pos, f);
        self.enc_blocks.visit(&join(&enc, "blocks"), f);
        self.enc_norm.visit(&join(&enc, "norm"), f);
        let dec = join(prefix, "decoder");
        self.dec_in_target.visit(&join(&dec, "in_target"), f);
        self.dec_in_visual.visit(&join(&dec, "in_visual"), f);
        self.dec_in_memory.visit(&join(&dec, "in_memory"), f);
        visit_tensor(&dec, "pos", &self.dec_pos, f);
        self.dec_target.visit(&join(&dec, "target"), f);
        self.dec_ref.visit(&join(&dec, "reference"), f);
        self.dec_norm_target.visit(&join(&dec, "norm_target"), f);
        self.dec_norm_ref.visit(&join(&dec, "norm_reference"), f);
        let heads = join(prefix, "heads");
        self.query_head.visit(&join(&heads, "query"), f);
        self.key_head.visit(&join(&heads, "key"), f);
        self.out_head.visit(&join(&heads, "out"), f);
        self.target_out_head.visit(&join(&heads, "target_out"), f);
        let val = join(prefix, "value_encoder");
        self.value_embed.visit(&join(&val, "embed"), f);
        visit_tensor(&val, "pos", &self.value_pos, f);
        self.value_blocks.visit(&join(&val, "blocks"), f);
        self.value_norm.visit(&join(&val, "norm"), f);
        self.value_out.visit(&join(&val, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        let enc = join(prefix, "encoder");
        self.patch_embed.visit_mut(&join(&enc, "patch_embed"), f);
        f(join(&enc, "pos"), &mut self.enc_pos);
        self.enc_blocks.visit_mut(&join(&enc, "blocks"), f);
        self.enc_norm.visit_mut(&join(&enc, "norm"), f);
        let dec = join(prefix, "decoder");
        self.dec_in_target.visit_mut(&join(&dec, "in_target"), f);
        self.dec_in_visual.visit_mut(&join(&dec, "in_visual"), f);
        self.dec_in_memory.visit_mut(&join(&dec, "in_memory"), f);
        f(join(&dec, "pos"), &mut self.dec_pos);
        self.dec_target.visit_mut(&join(&dec, "target"), f);
        self.dec_ref.visit_mut(&join(&dec, "reference"), f);
        self.dec_norm_target.visit_mut(&join(&dec, "norm_target"), f);
        self.dec_norm_ref.visit_mut(&join(&dec, "norm_reference"), f);
        let heads = join(prefix, "heads");
        self.query_head.visit_mut(&join(&heads, "query"), f);
        self.key_head.visit_mut(&join(&heads, "key"), f);
        self.out_head.visit_mut(&join(&heads, "out"), f);
        self.target_out_head.visit_mut(&join(&heads, "target_out"), f);
        let val = join(prefix, "value_encoder");
        self.value_embed.visit_mut(&join(&val, "embed"), f);
        f(join(&val, "pos"), &mut self.value_pos);
        self.value_blocks.visit_mut(&join(&val, "blocks"), f);
        self.value_norm.visit_mut(&join(&val, "norm"), f);
        self.value_out.visit_mut(&join(&val, "out"), f);
    }
}
