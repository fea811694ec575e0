//! Reconstruction drivers.
//!
//! Ordered mode walks the frames as given. Unordered mode first scores every
//! pair with a two-view pass, starts from the most confident pair, and then
//! orders the rest either along a maximum spanning tree of the pair scores
//! or greedily by confidence against the current memory.

use std::time::Instant;

use petgraph::algo::min_spanning_tree;
use petgraph::data::Element;
use petgraph::graph::UnGraph;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{MemoryBank, MemoryConfig, MemoryStats, ReadMode};
use crate::model::{ConfidenceMap, Image, Model, Prediction, ReferenceInput, StepOutput, StepState};
use crate::tensor::no_grad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceScore {
    /// Mean of `(C - 1) / C` per map, summed over the two maps.
    #[default]
    Sigmoid,
    /// Mean of `C` per map, summed over the two maps.
    Exponential,
}

/// Pair score from two mapped confidence maps.
pub fn view_confidence_with(c1: &ConfidenceMap, c2: &ConfidenceMap, kind: ConfidenceScore) -> f64 {
    match kind {
        ConfidenceScore::Sigmoid => c1.mean_sigmoid() + c2.mean_sigmoid(),
        ConfidenceScore::Exponential => c1.mean_mapped() + c2.mean_mapped(),
    }
}

pub fn view_confidence(c1: &ConfidenceMap, c2: &ConfidenceMap) -> f64 {
    view_confidence_with(c1, c2, ConfidenceScore::Sigmoid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Mst,
    NextBest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Reference,
    Target,
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    /// Index into the input frame list.
    pub frame_index: usize,
    pub prediction: Prediction,
    pub stream: Stream,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// In processing order; the first entry defines the world frame.
    pub frames: Vec<FrameResult>,
    pub order: Vec<usize>,
    pub memory: MemoryStats,
    pub step_seconds: Vec<f64>,
    pub bank: MemoryBank,
}

impl Reconstruction {
    pub fn frame(&self, input_index: usize) -> Option<&FrameResult> {
        self.frames.iter().find(|f| f.frame_index == input_index)
    }
}

/// Everything a sequence run produces, including graph-carrying outputs for training.
pub struct SequenceRun {
    pub init: StepOutput,
    pub steps: Vec<StepOutput>,
    pub bank: MemoryBank,
    pub step_seconds: Vec<f64>,
}

impl SequenceRun {
    /// One prediction per frame: reference stream for all but the last,
    /// whose only prediction is from the target stream.
    pub fn per_frame(&self) -> Vec<(Prediction, Stream)> {
        let mut out = vec![(self.init.pred.clone(), Stream::Reference)];
        for s in &self.steps {
            out.push((s.pred.clone(), Stream::Reference));
        }
        let last = self.steps.last().unwrap_or(&self.init);
        out.push((last.target_pred.clone(), Stream::Target));
        out
    }

    /// All predictions of both streams.
    pub fn all_predictions(&self) -> Vec<&Prediction> {
        std::iter::once(&self.init)
            .chain(&self.steps)
            .flat_map(|s| [&s.pred, &s.target_pred])
            .collect()
    }

    pub fn clipped_fraction(&self) -> f64 {
        let recs: Vec<_> = self.steps.iter().filter_map(|s| s.attention.as_ref()).collect();
        if recs.is_empty() {
            return 0.0;
        }
        recs.iter().map(|r| r.clipped_fraction()).sum::<f64>() / recs.len() as f64
    }
}

/// Incremental state over one pass: init, then `push` frame by frame.
pub struct Session<'m> {
    model: &'m Model,
    pub bank: MemoryBank,
    state: Option<StepState>,
    dropout: Option<(f64, ChaCha8Rng)>,
    init: Option<StepOutput>,
    steps: Vec<StepOutput>,
    step_seconds: Vec<f64>,
}

impl<'m> Session<'m> {
    /// `dropout` switches memory reads to training mode.
    pub fn new(model: &'m Model, bank: MemoryBank, dropout: Option<(f64, ChaCha8Rng)>) -> Self {
        Session { model, bank, state: None, dropout, init: None, steps: Vec::new(), step_seconds: Vec::new() }
    }

    pub fn initialize(&mut self, f0: &Image, f1: &Image, i0: usize, i1: usize) -> Result<()> {
        if self.init.is_some() {
            return Err(Error::PipelineOrder("session already initialized".into()));
        }
        let t = Instant::now();
        let out = self.model.init_step(f0, f1, i0, i1)?;
        self.bank.working_insert(out.new_key.clone(), out.new_value.clone())?;
        self.state = Some(out.state.clone());
        self.init = Some(out);
        self.step_seconds.push(t.elapsed().as_secs_f64());
        Ok(())
    }

    /// Query and visual tokens carried to the next step.
    pub fn state(&self) -> Option<&StepState> {
        self.state.as_ref()
    }

    pub fn push(&mut self, frame: &Image, index: usize) -> Result<()> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::PipelineOrder("push before initialize".into()))?;
        let t = Instant::now();
        let out = {
            let mut mode = match &mut self.dropout {
                Some((p, rng)) => ReadMode::Train { dropout: *p, rng },
                None => ReadMode::Infer,
            };
            self.model.forward_step(frame, index, state, &mut self.bank, &mut mode)?
        };
        self.bank.working_insert(out.new_key.clone(), out.new_value.clone())?;
        self.state = Some(out.state.clone());
        self.steps.push(out);
        self.step_seconds.push(t.elapsed().as_secs_f64());
        Ok(())
    }

    /// Confidence of `frame` as the next view, against a copy of the bank.
    pub fn score_candidate(&self, frame: &Image, index: usize, kind: ConfidenceScore) -> Result<f64> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::PipelineOrder("scoring before initialize".into()))?;
        let mut probe = self.bank.clone();
        let (fused, _) = probe.read(&state.query, &mut ReadMode::Infer)?;
        let v = self.model.encode_image(frame, index)?;
        let (h_t, h_ref) = self.model.decode(&v, ReferenceInput::Fused(&fused))?;
        let r = self.model.head_out(&h_ref)?;
        let t = self.model.head_out_target(&h_t)?;
        Ok(view_confidence_with(&r.confidence, &t.confidence, kind))
    }

    pub fn finish(self) -> Result<SequenceRun> {
        let init = self.init.ok_or_else(|| Error::PipelineOrder("session never initialized".into()))?;
        Ok(SequenceRun { init, steps: self.steps, bank: self.bank, step_seconds: self.step_seconds })
    }
}

/// Runs frames in the given order. Training passes `dropout`.
pub fn run_sequence(
    model: &Model,
    frames: &[&Image],
    indices: &[usize],
    bank: MemoryBank,
    dropout: Option<(f64, ChaCha8Rng)>,
) -> Result<SequenceRun> {
    if frames.len() < 2 {
        return Err(Error::InsufficientLength(format!("need at least 2 frames, got {}", frames.len())));
    }
    let mut s = Session::new(model, bank, dropout);
    s.initialize(frames[0], frames[1], indices[0], indices[1])?;
    for (f, &i) in frames.iter().zip(indices).skip(2) {
        s.push(f, i)?;
    }
    s.finish()
}

pub fn into_reconstruction(run: SequenceRun, order: Vec<usize>) -> Reconstruction {
    let frames = run
        .per_frame()
        .into_iter()
        .zip(&order)
        .map(|((p, stream), &i)| FrameResult { frame_index: i, prediction: p.detach(), stream })
        .collect();
    Reconstruction { frames, order, memory: run.bank.stats.clone(), step_seconds: run.step_seconds, bank: run.bank }
}

fn check_len(frames: &[Image]) -> Result<()> {
    if frames.len() < 2 {
        return Err(Error::InsufficientLength(format!("need at least 2 frames, got {}", frames.len())));
    }
    Ok(())
}

pub fn reconstruct_ordered(model: &Model, frames: &[Image], memory: &MemoryConfig) -> Result<Reconstruction> {
    let order: Vec<usize> = (0..frames.len()).collect();
    reconstruct_in_order(model, frames, &order, MemoryBank::new(memory.clone())?)
}

/// Ordered pass over `order`, starting from a caller-prepared bank.
pub fn reconstruct_in_order(model: &Model, frames: &[Image], order: &[usize], bank: MemoryBank) -> Result<Reconstruction> {
    check_len(frames)?;
    let _g = no_grad();
    let refs: Vec<&Image> = order.iter().map(|&i| &frames[i]).collect();
    let run = run_sequence(model, &refs, order, bank, None)?;
    Ok(into_reconstruction(run, order.to_vec()))
}

/// Directed two-view scores and their symmetric (max) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGraph {
    pub n: usize,
    /// `directed[i][j]`: frame `i` as reference, `j` as target.
    pub directed: Vec<Vec<f64>>,
    pub scores: Vec<Vec<f64>>,
}

impl PairGraph {
    pub fn from_directed(directed: Vec<Vec<f64>>) -> Result<Self> {
        let n = directed.len();
        if directed.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("pair score matrix is not square".into()));
        }
        let mut scores = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let s = directed[i][j].max(directed[j][i]);
                    if !s.is_finite() {
                        return Err(Error::NonFinite { op: "pair score", index: i * n + j });
                    }
                    scores[i][j] = s;
                }
            }
        }
        Ok(PairGraph { n, directed, scores })
    }

    /// Best edge, ties to the lexicographically smallest `(i, j)`, `i < j`.
    pub fn best_pair(&self) -> (usize, usize) {
        let mut best = (0, 1);
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.scores[i][j] > self.scores[best.0][best.1] {
                    best = (i, j);
                }
            }
        }
        best
    }
}

pub fn score_pairs(model: &Model, frames: &[Image], kind: ConfidenceScore) -> Result<PairGraph> {
    let n = frames.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).collect();
    let scored: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let _g = no_grad();
            let out = model.init_step(&frames[i], &frames[j], i, j)?;
            Ok(view_confidence_with(&out.pred.confidence, &out.target_pred.confidence, kind))
        })
        .collect();
    let mut directed = vec![vec![0.0; n]; n];
    for (&(i, j), s) in pairs.iter().zip(scored) {
        directed[i][j] = s?;
    }
    PairGraph::from_directed(directed)
}

/// Maximum-weight spanning tree, as `(u, v)` edges with `u < v`.
pub fn max_spanning_tree(g: &PairGraph) -> Vec<(usize, usize)> {
    let mut graph = UnGraph::<(), f64>::with_capacity(g.n, g.n * g.n / 2);
    let nodes: Vec<_> = (0..g.n).map(|_| graph.add_node(())).collect();
    for i in 0..g.n {
        for j in i + 1..g.n {
            graph.add_edge(nodes[i], nodes[j], -g.scores[i][j]);
        }
    }
    min_spanning_tree(&graph)
        .filter_map(|e| match e {
            Element::Edge { source, target, .. } => Some((source.min(target), source.max(target))),
            Element::Node { .. } => None,
        })
        .collect()
}

/// Visiting order: the initial pair, then repeatedly the unvisited tree
/// neighbour with the strongest edge.
pub fn tree_order(g: &PairGraph, tree: &[(usize, usize)], start: (usize, usize)) -> Vec<usize> {
    let mut visited = vec![false; g.n];
    let mut order = vec![start.0, start.1];
    visited[start.0] = true;
    visited[start.1] = true;
    while order.len() < g.n {
        let next = tree
            .iter()
            .filter_map(|&(u, v)| match (visited[u], visited[v]) {
                (true, false) => Some((v, g.scores[u][v])),
                (false, true) => Some((u, g.scores[u][v])),
                _ => None,
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match next {
            Some((n, _)) => {
                visited[n] = true;
                order.push(n);
            }
            // disconnected tree: fall back to the lowest unvisited frame
            None => {
                let n = visited.iter().position(|v| !v).expect("order shorter than n");
                visited[n] = true;
                order.push(n);
            }
        }
    }
    order
}

pub fn reconstruct_unordered(
    model: &Model,
    frames: &[Image],
    memory: &MemoryConfig,
    strategy: Strategy,
    kind: ConfidenceScore,
) -> Result<(Reconstruction, PairGraph)> {
    check_len(frames)?;
    let graph = score_pairs(model, frames, kind)?;
    let start = graph.best_pair();
    let bank = MemoryBank::new(memory.clone())?;
    let rec = match strategy {
        Strategy::Mst => {
            let order = tree_order(&graph, &max_spanning_tree(&graph), start);
            reconstruct_in_order(model, frames, &order, bank)?
        }
        Strategy::NextBest => {
            let _g = no_grad();
            let mut s = Session::new(model, bank, None);
            s.initialize(&frames[start.0], &frames[start.1], start.0, start.1)?;
            let mut order = vec![start.0, start.1];
            let mut remaining: Vec<usize> = (0..frames.len()).filter(|i| *i != start.0 && *i != start.1).collect();
            while !remaining.is_empty() {
                let mut best = (0, f64::NEG_INFINITY);
                for (k, &i) in remaining.iter().enumerate() {
                    let score = s.score_candidate(&frames[i], i, kind)?;
                    if score > best.1 {
                        best = (k, score);
                    }
                }
                let i = remaining.remove(best.0);
                s.push(&frames[i], i)?;
                order.push(i);
            }
            into_reconstruction(s.finish()?, order)
        }
    };
    Ok((rec, graph))
}
