//! CBOW training with hierarchical (or exact) softmax and plain SGD.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::huffman::HuffmanCoding;
use super::space::{decision_loss, dot, log_sum_exp, sigmoid, EmbeddingSpace, SoftmaxMode};
use crate::data::{TokenSequence, Vocabulary, WordKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub window_before: usize,
    pub window_after: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Worker threads. One worker is deterministic; more workers update
    /// shared weights without locking.
    pub workers: usize,
    pub softmax: SoftmaxMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 200,
            window_before: 5,
            window_after: 5,
            epochs: 5,
            learning_rate: 0.2,
            seed: 42,
            workers: 1,
            softmax: SoftmaxMode::Hierarchical,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if self.window_before + self.window_after == 0 {
            return Err(Error::Config("context window must cover at least one word".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub tokens_per_sec: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    pub epochs: Vec<EpochStats>,
    /// Targets per epoch that had a usable context.
    pub targets: usize,
    /// Targets per epoch skipped because their context was empty.
    pub skipped: usize,
}

impl TrainStats {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    /// `epoch <TAB> mean_loss <TAB> tokens/sec` per line.
    pub fn write_log(&self, mut w: impl Write) -> Result<()> {
        for e in &self.epochs {
            writeln!(w, "{}\t{}\t{:.1}", e.epoch, e.mean_loss, e.tokens_per_sec)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub space: EmbeddingSpace,
    pub stats: TrainStats,
}

/// Trains one kind of word against itself.
pub fn train(sequences: &[TokenSequence], kind: WordKind, cfg: &TrainConfig) -> Result<Trained> {
    train_cross(sequences, kind, kind, cfg, None)
}

/// Trains `input` words to predict the aligned `output` words. When the kinds
/// differ the word at the target position is part of the context. `init`
/// seeds input vectors for tokens it knows.
pub fn train_cross(
    sequences: &[TokenSequence],
    input: WordKind,
    output: WordKind,
    cfg: &TrainConfig,
    init: Option<&EmbeddingSpace>,
) -> Result<Trained> {
    cfg.validate()?;
    if sequences.is_empty() {
        return Err(Error::Training("empty corpus".into()));
    }
    let in_vocab = Vocabulary::build(sequences, input)?;
    let out_vocab = if input == output {
        None
    } else {
        Some((Vocabulary::build(sequences, output)?, output))
    };
    let v_out = out_vocab.as_ref().map_or(in_vocab.len(), |(v, _)| v.len());
    if v_out < 2 {
        return Err(Error::Training(format!(
            "vocabulary of {v_out} word(s); at least 2 are required"
        )));
    }
    let mut space =
        EmbeddingSpace::initialize(in_vocab, input, out_vocab, cfg.dim, cfg.softmax, cfg.seed)?;
    if let Some(init) = init {
        if init.dim != cfg.dim {
            return Err(Error::Config(format!(
                "initial space has dim {}, config wants {}",
                init.dim, cfg.dim
            )));
        }
        for i in 0..space.len() {
            if let Some(v) = init.vector(space.vocabulary.token(i)) {
                space.input_weights[i * cfg.dim..(i + 1) * cfg.dim].copy_from_slice(v);
            }
        }
    }
    let corpus = Corpus::encode(sequences, &space, input != output);
    let stats = run_epochs(&mut space, &corpus, cfg);
    if !space.is_finite() {
        return Err(Error::Training("weights diverged to non-finite values".into()));
    }
    Ok(Trained { space, stats })
}

/// Feature words are trained against themselves first, then the resulting
/// vectors are refined by predicting location words.
pub fn train_two_round(sequences: &[TokenSequence], cfg: &TrainConfig) -> Result<Trained> {
    let first = train(sequences, WordKind::Feature, cfg)?;
    let mut second = train_cross(
        sequences,
        WordKind::Feature,
        WordKind::Location,
        cfg,
        Some(&first.space),
    )?;
    let mut epochs = first.stats.epochs;
    let offset = epochs.len();
    epochs.extend(second.stats.epochs.into_iter().map(|mut e| {
        e.epoch += offset;
        e
    }));
    second.stats.epochs = epochs;
    Ok(second)
}

/// Index-encoded corpus with precomputed (context, target) windows.
struct Corpus {
    sequences: Vec<(Vec<usize>, Vec<usize>)>,
    include_center: bool,
}

impl Corpus {
    fn encode(sequences: &[TokenSequence], space: &EmbeddingSpace, include_center: bool) -> Self {
        let encoded = sequences
            .iter()
            .map(|s| {
                let ins = s
                    .words(space.kind)
                    .iter()
                    .map(|w| space.vocabulary.get(w).expect("vocabulary built from corpus"))
                    .collect();
                let outs = s
                    .words(space.output_kind)
                    .iter()
                    .map(|w| {
                        space
                            .output_vocabulary
                            .get(w)
                            .expect("vocabulary built from corpus")
                    })
                    .collect();
                (ins, outs)
            })
            .collect();
        Corpus {
            sequences: encoded,
            include_center,
        }
    }

    fn tokens(&self) -> usize {
        self.sequences.iter().map(|s| s.0.len()).sum()
    }
}

/// Context positions for target `i`, truncated at the sequence ends.
pub(crate) fn window(
    len: usize,
    i: usize,
    before: usize,
    after: usize,
    include_center: bool,
) -> impl Iterator<Item = usize> {
    let lo = i.saturating_sub(before);
    let hi = (i + after).min(len.saturating_sub(1));
    (lo..=hi).filter(move |&j| include_center || j != i)
}

fn run_epochs(space: &mut EmbeddingSpace, corpus: &Corpus, cfg: &TrainConfig) -> TrainStats {
    let n_tokens = corpus.tokens();
    let total = (n_tokens * cfg.epochs).max(1) as u64;
    let progress = AtomicU64::new(0);
    let mut stats = TrainStats::default();
    let shared = if cfg.workers > 1 {
        Some((to_atomic(&space.input_weights), to_atomic(&space.output_weights)))
    } else {
        None
    };
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let (loss, targets, skipped) = match &shared {
            None => {
                let mut w = Plain {
                    dim: space.dim,
                    input: &mut space.input_weights,
                    output: &mut space.output_weights,
                };
                let job = Job {
                    corpus,
                    cfg,
                    mode: space.mode,
                    huffman: &space.huffman,
                    n_out: space.output_vocabulary.len(),
                    progress: &progress,
                    total,
                };
                job.run(&mut w, corpus.sequences.iter().map(|s| (&s.0, &s.1)))
            }
            Some((input, output)) => {
                let job = Job {
                    corpus,
                    cfg,
                    mode: space.mode,
                    huffman: &space.huffman,
                    n_out: space.output_vocabulary.len(),
                    progress: &progress,
                    total,
                };
                let dim = space.dim;
                thread::scope(|scope| {
                    let handles: Vec<_> = (0..cfg.workers)
                        .map(|wid| {
                            let job = &job;
                            scope.spawn(move || {
                                let mut w = Shared { dim, input, output };
                                let part = corpus
                                    .sequences
                                    .iter()
                                    .skip(wid)
                                    .step_by(cfg.workers)
                                    .map(|s| (&s.0, &s.1));
                                job.run(&mut w, part)
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("training worker panicked"))
                        .fold((0.0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2))
                })
            }
        };
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        stats.targets = targets;
        stats.skipped = skipped;
        stats.epochs.push(EpochStats {
            epoch,
            mean_loss: if targets > 0 { loss / targets as f64 } else { 0.0 },
            tokens_per_sec: n_tokens as f64 / secs,
        });
    }
    if let Some((input, output)) = shared {
        from_atomic(&input, &mut space.input_weights);
        from_atomic(&output, &mut space.output_weights);
    }
    stats
}

struct Job<'a> {
    corpus: &'a Corpus,
    cfg: &'a TrainConfig,
    mode: SoftmaxMode,
    huffman: &'a HuffmanCoding,
    n_out: usize,
    progress: &'a AtomicU64,
    total: u64,
}

impl Job<'_> {
    fn run<'s, W: WeightAccess>(
        &self,
        w: &mut W,
        seqs: impl Iterator<Item = (&'s Vec<usize>, &'s Vec<usize>)>,
    ) -> (f64, usize, usize) {
        let dim = self.cfg.dim;
        let mut scratch = Scratch::new(dim, self.n_out);
        let mut ctx = Vec::new();
        let (mut loss, mut targets, mut skipped) = (0.0, 0, 0);
        let lr0 = self.cfg.learning_rate;
        for (ins, outs) in seqs {
            for i in 0..ins.len() {
                let done = self.progress.fetch_add(1, Ordering::Relaxed);
                let lr = lr0 * (1.0 - done as f64 / self.total as f64).max(1e-4);
                ctx.clear();
                ctx.extend(
                    window(
                        ins.len(),
                        i,
                        self.cfg.window_before,
                        self.cfg.window_after,
                        self.corpus.include_center,
                    )
                    .map(|j| ins[j]),
                );
                if ctx.is_empty() {
                    skipped += 1;
                    continue;
                }
                loss += cbow_step(w, self.mode, self.huffman, self.n_out, &ctx, outs[i], lr, &mut scratch);
                targets += 1;
            }
        }
        (loss, targets, skipped)
    }
}

/// Read/update access to the two weight matrices. Implemented over plain
/// slices for deterministic training, over atomics for lock-free parallel
/// training, and by a recorder that captures updates as gradients.
pub(crate) trait WeightAccess {
    fn read_input(&self, i: usize, out: &mut [f64]);
    fn read_output(&self, j: usize, out: &mut [f64]);
    /// `row_i += scale * delta`
    fn add_input(&mut self, i: usize, delta: &[f64], scale: f64);
    fn add_output(&mut self, j: usize, delta: &[f64], scale: f64);
}

struct Plain<'a> {
    dim: usize,
    input: &'a mut [f64],
    output: &'a mut [f64],
}

impl WeightAccess for Plain<'_> {
    fn read_input(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.input[i * self.dim..(i + 1) * self.dim]);
    }

    fn read_output(&self, j: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.output[j * self.dim..(j + 1) * self.dim]);
    }

    fn add_input(&mut self, i: usize, delta: &[f64], scale: f64) {
        for (w, d) in self.input[i * self.dim..(i + 1) * self.dim].iter_mut().zip(delta) {
            *w += scale * d;
        }
    }

    fn add_output(&mut self, j: usize, delta: &[f64], scale: f64) {
        for (w, d) in self.output[j * self.dim..(j + 1) * self.dim].iter_mut().zip(delta) {
            *w += scale * d;
        }
    }
}

/// Weights as `f64` bit patterns in relaxed atomics. Concurrent read-add-store
/// sequences can lose updates; that is tolerated.
struct Shared<'a> {
    dim: usize,
    input: &'a [AtomicU64],
    output: &'a [AtomicU64],
}

fn load_row(src: &[AtomicU64], out: &mut [f64]) {
    for (o, a) in out.iter_mut().zip(src) {
        *o = f64::from_bits(a.load(Ordering::Relaxed));
    }
}

fn add_row(dst: &[AtomicU64], delta: &[f64], scale: f64) {
    for (a, d) in dst.iter().zip(delta) {
        let cur = f64::from_bits(a.load(Ordering::Relaxed));
        a.store((cur + scale * d).to_bits(), Ordering::Relaxed);
    }
}

impl WeightAccess for Shared<'_> {
    fn read_input(&self, i: usize, out: &mut [f64]) {
        load_row(&self.input[i * self.dim..(i + 1) * self.dim], out);
    }

    fn read_output(&self, j: usize, out: &mut [f64]) {
        load_row(&self.output[j * self.dim..(j + 1) * self.dim], out);
    }

    fn add_input(&mut self, i: usize, delta: &[f64], scale: f64) {
        add_row(&self.input[i * self.dim..(i + 1) * self.dim], delta, scale);
    }

    fn add_output(&mut self, j: usize, delta: &[f64], scale: f64) {
        add_row(&self.output[j * self.dim..(j + 1) * self.dim], delta, scale);
    }
}

fn to_atomic(w: &[f64]) -> Vec<AtomicU64> {
    w.iter().map(|x| AtomicU64::new(x.to_bits())).collect()
}

fn from_atomic(src: &[AtomicU64], dst: &mut [f64]) {
    for (d, a) in dst.iter_mut().zip(src) {
        *d = f64::from_bits(a.load(Ordering::Relaxed));
    }
}

pub(crate) struct Scratch {
    h: Vec<f64>,
    dh: Vec<f64>,
    row: Vec<f64>,
    scores: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(dim: usize, n_out: usize) -> Self {
        Scratch {
            h: vec![0.0; dim],
            dh: vec![0.0; dim],
            row: vec![0.0; dim],
            scores: Vec::with_capacity(n_out),
        }
    }
}

/// One SGD step on `E = -log p(target | context)`. Returns the loss before
/// the update.
///
/// The hidden layer is the mean of the context rows. Output rows receive
/// `-lr * dE/dx * h`; every context occurrence receives `-lr * dE/dh / k`.
/// `dE/dh` is accumulated from output rows before they are updated.
#[allow(clippy::too_many_arguments)]
pub(crate) fn cbow_step<W: WeightAccess>(
    w: &mut W,
    mode: SoftmaxMode,
    huffman: &HuffmanCoding,
    n_out: usize,
    context: &[usize],
    target: usize,
    lr: f64,
    s: &mut Scratch,
) -> f64 {
    let k = context.len() as f64;
    s.h.iter_mut().for_each(|x| *x = 0.0);
    for &c in context {
        w.read_input(c, &mut s.row);
        for (h, r) in s.h.iter_mut().zip(&s.row) {
            *h += r;
        }
    }
    s.h.iter_mut().for_each(|x| *x /= k);
    s.dh.iter_mut().for_each(|x| *x = 0.0);

    let mut loss = 0.0;
    match mode {
        SoftmaxMode::Hierarchical => {
            for (&bit, &node) in huffman.code(target).iter().zip(huffman.path(target)) {
                let node = node as usize;
                w.read_output(node, &mut s.row);
                let x = dot(&s.row, &s.h);
                loss += decision_loss(x, bit);
                let g = sigmoid(x) - (1 - bit) as f64;
                for (d, r) in s.dh.iter_mut().zip(&s.row) {
                    *d += g * r;
                }
                w.add_output(node, &s.h, -lr * g);
            }
        }
        SoftmaxMode::Exact => {
            s.scores.clear();
            for j in 0..n_out {
                w.read_output(j, &mut s.row);
                s.scores.push(dot(&s.row, &s.h));
            }
            let lse = log_sum_exp(&s.scores);
            loss = lse - s.scores[target];
            for j in 0..n_out {
                let p = (s.scores[j] - lse).exp();
                let g = p - if j == target { 1.0 } else { 0.0 };
                w.read_output(j, &mut s.row);
                for (d, r) in s.dh.iter_mut().zip(&s.row) {
                    *d += g * r;
                }
                w.add_output(j, &s.h, -lr * g);
            }
        }
    }
    for &c in context {
        w.add_input(c, &s.dh, -lr / k);
    }
    loss
}
