//! Two-tier spatial memory.
//!
//! The working tier keeps dense key/value grids of the most recent frames.
//! Frames pushed out of it are drained token-by-token into the long-term
//! tier, which tracks how much attention each token has received and is
//! pruned to the most-attended tokens once it outgrows its budget.
//!
//! Reads attend over both tiers at once: long-term tokens come first, then
//! working frames oldest to newest.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenGrid;
use crate::tensor::{dump, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    pub working_max_frames: usize,
    /// Insert a frame only if its best similarity to stored frames is below this.
    pub sim_gate: f64,
    pub gate_enabled: bool,
    pub clip_threshold: f64,
    pub clip_enabled: bool,
    /// When false, frames leaving the working tier are discarded.
    pub long_term_enabled: bool,
    pub lt_max_tokens: usize,
    /// Tokens kept by consolidation; `None` means `lt_max_tokens / 2`.
    pub topk_keep: Option<usize>,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            working_max_frames: 5,
            sim_gate: 0.95,
            gate_enabled: true,
            clip_threshold: 5e-4,
            clip_enabled: true,
            long_term_enabled: true,
            lt_max_tokens: 4000,
            topk_keep: None,
        }
    }
}

impl MemoryConfig {
    /// Training variant: every frame is stored (no similarity gate).
    pub fn training() -> Self {
        MemoryConfig { gate_enabled: false, ..Self::default() }
    }

    pub fn keep_tokens(&self) -> usize {
        self.topk_keep.unwrap_or((self.lt_max_tokens / 2).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("memory: {m}")));
        if self.working_max_frames == 0 {
            return bad("working_max_frames must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.sim_gate) {
            return bad(format!("sim_gate {} outside [0, 1]", self.sim_gate));
        }
        if !(0.0..1.0).contains(&self.clip_threshold) {
            return bad(format!("clip_threshold {} outside [0, 1)", self.clip_threshold));
        }
        if self.lt_max_tokens == 0 {
            return bad("lt_max_tokens must be >= 1".into());
        }
        let k = self.keep_tokens();
        if k == 0 || k > self.lt_max_tokens {
            return bad(format!("topk_keep {k} must lie in [1, lt_max_tokens]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct WorkingEntry {
    pub keys: Tensor,
    pub values: Tensor,
    pub frame_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenOrigin {
    pub frame: usize,
    pub patch: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LongTermMemory {
    pub keys: Option<Tensor>,
    pub values: Option<Tensor>,
    pub acc_attn: Vec<f64>,
    pub origin: Vec<TokenOrigin>,
}

impl LongTermMemory {
    pub fn len(&self) -> usize {
        self.acc_attn.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acc_attn.is_empty()
    }

    fn append(&mut self, entry: WorkingEntry) -> Result<()> {
        let (p, _) = entry.keys.dims2()?;
        let (keys, values) = match (self.keys.take(), self.values.take()) {
            (Some(k), Some(v)) => (
                Tensor::concat(&[k, entry.keys], 0)?,
                Tensor::concat(&[v, entry.values], 0)?,
            ),
            _ => (entry.keys, entry.values),
        };
        self.keys = Some(keys);
        self.values = Some(values);
        self.acc_attn.extend(std::iter::repeat(0.0).take(p));
        self.origin.extend((0..p).map(|patch| TokenOrigin { frame: entry.frame_index, patch }));
        Ok(())
    }

    fn retain(&mut self, keep: &[usize]) -> Result<()> {
        if let (Some(k), Some(v)) = (&self.keys, &self.values) {
            self.keys = Some(k.select_rows(keep)?);
            self.values = Some(v.select_rows(keep)?);
        }
        self.acc_attn = keep.iter().map(|&i| self.acc_attn[i]).collect();
        self.origin = keep.iter().map(|&i| self.origin[i]).collect();
        Ok(())
    }
}

/// How attention weights are post-processed on a read.
pub enum ReadMode<'a> {
    /// Post-softmax weight dropout with row renormalization.
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
    /// Hard clipping of small weights (when enabled) with renormalization.
    Infer,
}

#[derive(Debug, Clone)]
pub struct AttentionRecord {
    /// `[queries, tokens]`, after clipping/dropout and renormalization.
    pub weights: Tensor,
    pub clipped_count: usize,
    /// Rows that lost every entry and were restored to their raw softmax.
    pub fallback_rows: Vec<usize>,
    pub long_term_columns: usize,
}

impl AttentionRecord {
    pub fn clipped_fraction(&self) -> f64 {
        self.clipped_count as f64 / self.weights.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InsertOutcome {
    Inserted { drained: bool, consolidated: bool },
    Skipped { similarity: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStat {
    pub frame_index: usize,
    pub inserted: bool,
    pub working_tokens: usize,
    pub long_term_tokens: usize,
    pub clipped_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationEvent {
    pub frame_index: usize,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryStats {
    pub frames: Vec<FrameStat>,
    pub consolidations: Vec<ConsolidationEvent>,
    pub dropped_tokens: usize,
    pub max_total_tokens: usize,
    pub reads: usize,
    pub clipped_entries: usize,
    pub attention_entries: usize,
}

#[derive(Debug, Clone)]
pub struct MemoryBank {
    pub config: MemoryConfig,
    pub working: VecDeque<WorkingEntry>,
    pub long_term: LongTermMemory,
    pub stats: MemoryStats,
    last_clipped_fraction: f64,
}

/// Indices of the `k` largest values (ties: lower index first), ascending.
pub fn top_k_indices(acc: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..acc.len()).collect();
    if k < idx.len() {
        let by_rank = |a: &usize, b: &usize| acc[*b].total_cmp(&acc[*a]).then(a.cmp(b));
        idx.select_nth_unstable_by(k, by_rank);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Mean over patch positions of the cosine similarity between corresponding tokens.
pub fn frame_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (p, c) = a.dims2()?;
    if b.shape() != a.shape() {
        return Err(Error::Dimension(format!(
            "similarity of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (x, y) = (a.data(), b.data());
    let mut total = 0.0;
    for i in 0..p {
        let (xr, yr) = (&x[i * c..(i + 1) * c], &y[i * c..(i + 1) * c]);
        let dot: f64 = xr.iter().zip(yr).map(|(u, v)| u * v).sum();
        let nx = xr.iter().map(|u| u * u).sum::<f64>().sqrt();
        let ny = yr.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx > 0.0 && ny > 0.0 {
            total += dot / (nx * ny);
        }
    }
    Ok(total / p as f64)
}

impl MemoryBank {
    pub fn new(config: MemoryConfig) -> Result<Self> {
        config.validate()?;
        Ok(MemoryBank {
            config,
            working: VecDeque::new(),
            long_term: LongTermMemory::default(),
            stats: MemoryStats::default(),
            last_clipped_fraction: 0.0,
        })
    }

    pub fn working_tokens(&self) -> usize {
        self.working.iter().map(|e| e.keys.shape()[0]).sum()
    }

    pub fn total_tokens(&self) -> usize {
        self.working_tokens() + self.long_term.len()
    }

    /// All keys and values, long-term first.
    fn gather_tokens(&self) -> Result<(Tensor, Tensor)> {
        let mut keys = Vec::with_capacity(self.working.len() + 1);
        let mut values = Vec::with_capacity(self.working.len() + 1);
        if let (Some(k), Some(v)) = (&self.long_term.keys, &self.long_term.values) {
            keys.push(k.clone());
            values.push(v.clone());
        }
        for e in &self.working {
            keys.push(e.keys.clone());
            values.push(e.values.clone());
        }
        if keys.len() == 1 {
            return Ok((keys.pop().expect("one"), values.pop().expect("one")));
        }
        Ok((Tensor::concat(&keys, 0)?, Tensor::concat(&values, 0)?))
    }

    /// Cross-attention readout: `softmax(Q K^T / sqrt(C))`, post-processed
    /// per `mode`, then `A V + Q`.
    pub fn read(&mut self, query: &TokenGrid, mode: &mut ReadMode<'_>) -> Result<(TokenGrid, AttentionRecord)> {
        if self.total_tokens() == 0 {
            return Err(Error::EmptyMemory);
        }
        let (keys, values) = self.gather_tokens()?;
        let (pq, cq) = query.tokens.dims2()?;
        let (n, ck) = keys.dims2()?;
        if cq != ck {
            return Err(Error::Dimension(format!("query dim {cq} vs key dim {ck}")));
        }
        let raw = query
            .tokens
            .matmul(&keys.transpose()?)?
            .scale(1.0 / (ck as f64).sqrt())?
            .softmax(1)?;

        let lt = self.long_term.len();
        {
            let a = raw.data();
            for row in 0..pq {
                for (col, acc) in self.long_term.acc_attn.iter_mut().enumerate() {
                    *acc += a[row * n + col];
                }
            }
        }

        let mut fallback_rows = Vec::new();
        let mut clipped_count = 0;
        let mask: Option<Vec<f64>> = match mode {
            ReadMode::Train { dropout, rng } if *dropout > 0.0 => {
                let mut m: Vec<f64> = (0..pq * n)
                    .map(|_| if rng.gen::<f64>() < *dropout { 0.0 } else { 1.0 })
                    .collect();
                for row in 0..pq {
                    let r = &mut m[row * n..(row + 1) * n];
                    if r.iter().all(|v| *v == 0.0) {
                        r.iter_mut().for_each(|v| *v = 1.0);
                        fallback_rows.push(row);
                    }
                }
                Some(m)
            }
            ReadMode::Infer if self.config.clip_enabled => {
                let a = raw.data();
                let thr = self.config.clip_threshold;
                let mut m: Vec<f64> = a.iter().map(|&w| if w < thr { 0.0 } else { 1.0 }).collect();
                for row in 0..pq {
                    let r = &mut m[row * n..(row + 1) * n];
                    let zeroed = r.iter().filter(|v| **v == 0.0).count();
                    if zeroed == n {
                        r.iter_mut().for_each(|v| *v = 1.0);
                        fallback_rows.push(row);
                    } else {
                        clipped_count += zeroed;
                    }
                }
                Some(m)
            }
            _ => None,
        };
        let weights = match mask {
            Some(m) => raw.mul_const(&m)?.normalize_last()?,
            None => raw,
        };
        let fused = weights.matmul(&values)?.add(&query.tokens)?;

        self.stats.reads += 1;
        self.stats.clipped_entries += clipped_count;
        self.stats.attention_entries += pq * n;
        let record = AttentionRecord {
            weights: weights.detach(),
            clipped_count,
            fallback_rows,
            long_term_columns: lt,
        };
        self.last_clipped_fraction = record.clipped_fraction();
        Ok((TokenGrid { tokens: fused, frame_index: query.frame_index }, record))
    }

    /// Similarity-gated insertion into the working tier. Overflow drains the
    /// oldest frame into long-term memory, which is consolidated if it
    /// exceeds its budget.
    pub fn working_insert(&mut self, key: TokenGrid, value: TokenGrid) -> Result<InsertOutcome> {
        if key.tokens.shape() != value.tokens.shape() {
            return Err(Error::Dimension(format!(
                "key {:?} and value {:?} grids differ",
                key.tokens.shape(),
                value.tokens.shape()
            )));
        }
        if let Some(first) = self.working.front() {
            if first.keys.shape() != key.tokens.shape() {
                return Err(Error::Dimension(format!(
                    "key grid {:?} vs stored {:?}",
                    key.tokens.shape(),
                    first.keys.shape()
                )));
            }
        }
        let frame_index = key.frame_index;
        if self.config.gate_enabled && !self.working.is_empty() {
            let mut best = f64::NEG_INFINITY;
            for e in &self.working {
                best = best.max(frame_similarity(&key.tokens, &e.keys)?);
            }
            if best >= self.config.sim_gate {
                self.push_frame_stat(frame_index, false);
                return Ok(InsertOutcome::Skipped { similarity: best });
            }
        }
        self.working.push_back(WorkingEntry { keys: key.tokens, values: value.tokens, frame_index });
        let mut drained = false;
        if self.working.len() > self.config.working_max_frames {
            let oldest = self.working.pop_front().expect("non-empty");
            if self.config.long_term_enabled {
                self.long_term.append(oldest)?;
                drained = true;
            } else {
                self.stats.dropped_tokens += oldest.keys.shape()[0];
            }
        }
        let consolidated = self.consolidate_at(frame_index)?.is_some();
        self.push_frame_stat(frame_index, true);
        Ok(InsertOutcome::Inserted { drained, consolidated })
    }

    fn push_frame_stat(&mut self, frame_index: usize, inserted: bool) {
        let total = self.total_tokens();
        self.stats.max_total_tokens = self.stats.max_total_tokens.max(total);
        self.stats.frames.push(FrameStat {
            frame_index,
            inserted,
            working_tokens: self.working_tokens(),
            long_term_tokens: self.long_term.len(),
            clipped_fraction: self.last_clipped_fraction,
        });
    }

    /// Keeps the `topk_keep` most-attended long-term tokens once the tier
    /// holds more than `lt_max_tokens`. No-op otherwise.
    pub fn consolidate(&mut self) -> Result<Option<ConsolidationEvent>> {
        let frame = self.working.back().map(|e| e.frame_index).unwrap_or(0);
        self.consolidate_at(frame)
    }

    fn consolidate_at(&mut self, frame_index: usize) -> Result<Option<ConsolidationEvent>> {
        let before = self.long_term.len();
        if before <= self.config.lt_max_tokens {
            return Ok(None);
        }
        let keep = top_k_indices(&self.long_term.acc_attn, self.config.keep_tokens());
        self.long_term.retain(&keep)?;
        let event = ConsolidationEvent { frame_index, before, after: self.long_term.len() };
        self.stats.consolidations.push(event.clone());
        Ok(Some(event))
    }

    /// Adds tokens straight into the long-term tier (zero attention history).
    /// Used to seed memory for experiments; triggers consolidation if needed.
    pub fn inject_long_term(&mut self, keys: Tensor, values: Tensor, frame_index: usize) -> Result<()> {
        if keys.shape() != values.shape() {
            return Err(Error::Dimension("injected keys/values differ in shape".into()));
        }
        self.long_term.append(WorkingEntry { keys, values, frame_index })?;
        self.consolidate_at(frame_index)?;
        Ok(())
    }

    /// Drops every long-term token that came from `frame_index`.
    pub fn remove_long_term_frame(&mut self, frame_index: usize) -> Result<usize> {
        let keep: Vec<usize> = (0..self.long_term.len()).filter(|&i| self.long_term.origin[i].frame != frame_index).collect();
        let removed = self.long_term.len() - keep.len();
        if removed > 0 {
            if keep.is_empty() {
                self.long_term = LongTermMemory::default();
            } else {
                self.long_term.retain(&keep)?;
            }
        }
        Ok(removed)
    }

    /// Writes the bank in the tensor-archive format.
    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        if let (Some(k), Some(v)) = (&self.long_term.keys, &self.long_term.values) {
            names.push("long_term.keys".to_string());
            tensors.push(k.clone());
            names.push("long_term.values".to_string());
            tensors.push(v.clone());
        }
        for (i, e) in self.working.iter().enumerate() {
            names.push(format!("working.{i}.keys"));
            tensors.push(e.keys.clone());
            names.push(format!("working.{i}.values"));
            tensors.push(e.values.clone());
        }
        let meta = serde_json::to_value(SnapshotMeta {
            config: self.config.clone(),
            working_frames: self.working.iter().map(|e| e.frame_index).collect(),
            acc_attn: self.long_term.acc_attn.clone(),
            origin: self.long_term.origin.clone(),
            stats: self.stats.clone(),
        })?;
        dump::write_archive(
            dir,
            names.iter().zip(&tensors).map(|(n, t)| (n.as_str(), t.shape(), t.data())),
            meta,
        )
    }

    pub fn read_snapshot(dir: &Path) -> Result<Self> {
        let arch = dump::read_archive(dir)?;
        let meta: SnapshotMeta = serde_json::from_value(arch.meta.clone())?;
        let mut bank = MemoryBank::new(meta.config)?;
        let missing = |n: &str| Error::Format(format!("snapshot lacks tensor {n}"));
        for (i, &frame_index) in meta.working_frames.iter().enumerate() {
            let kn = format!("working.{i}.keys");
            let vn = format!("working.{i}.values");
            bank.working.push_back(WorkingEntry {
                keys: arch.get(&kn).ok_or_else(|| missing(&kn))?.clone(),
                values: arch.get(&vn).ok_or_else(|| missing(&vn))?.clone(),
                frame_index,
            });
        }
        if !meta.acc_attn.is_empty() {
            bank.long_term.keys = Some(arch.get("long_term.keys").ok_or_else(|| missing("long_term.keys"))?.clone());
            bank.long_term.values =
                Some(arch.get("long_term.values").ok_or_else(|| missing("long_term.values"))?.clone());
        }
        bank.long_term.acc_attn = meta.acc_attn;
        bank.long_term.origin = meta.origin;
        bank.stats = meta.stats;
        Ok(bank)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotMeta {
    config: MemoryConfig,
    working_frames: Vec<usize>,
    acc_attn: Vec<f64>,
    origin: Vec<TokenOrigin>,
    stats: MemoryStats,
}
