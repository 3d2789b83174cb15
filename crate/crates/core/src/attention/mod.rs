//! Masked encoder-only sequence model.
//!
//! Each student's chronological question/answer history is embedded (one
//! table per channel, concatenated, plus a sinusoidal positional encoding)
//! and run through a stack of bidirectional encoder blocks. Training hides a
//! random subset of the answer tokens and predicts them from context;
//! held-out answers are imputed the same way at inference, so masking is the
//! only information barrier.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, KTTX_MAGIC, KTTX_VERSION};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamParams, AdamState, Tape, Tensor, VarId};
use crate::data::{Dataset, Split, SplitLabel};
use crate::{Error, Result};

/// Answer-channel vocabulary.
pub const TOKEN_INCORRECT: usize = 0;
pub const TOKEN_CORRECT: usize = 1;
pub const TOKEN_MASK: usize = 2;
pub const TOKEN_PAD: usize = 3;
pub const ANSWER_VOCAB: usize = 4;

/// One chronological window of a student's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KtSequence {
    pub user_id: i64,
    /// Dense question indices; `n_questions` is the reserved unknown row.
    pub questions: Vec<usize>,
    /// Answer tokens over {INCORRECT, CORRECT, MASK, PAD}.
    pub answers: Vec<usize>,
    /// Original answer ids, aligned with positions.
    pub answer_ids: Vec<i64>,
    /// True where the answer token carries a known label (training rows).
    pub known: Vec<bool>,
    /// Ground-truth correctness per position (defined for known rows).
    pub labels: Vec<u8>,
}

impl KtSequence {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub mask_prob: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults; the full-scale run of record used d_model 512,
    /// batch 64, sequence length 400, 6 blocks, 4 heads, 20% masking.
    pub fn desk_default() -> EncoderConfig {
        EncoderConfig {
            d_model: 64,
            n_heads: 4,
            n_blocks: 2,
            d_ff: 256,
            max_seq_len: 64,
            mask_prob: 0.2,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model % 2 != 0 {
            return Err(Error::InvalidConfig("d_model must be even (two embedding halves)".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig("d_model must be divisible by n_heads".into()));
        }
        if !(0.0 < self.mask_prob && self.mask_prob < 1.0) {
            return Err(Error::InvalidConfig("mask_prob must lie in (0, 1)".into()));
        }
        if self.n_blocks == 0 || self.d_ff == 0 || self.max_seq_len == 0 {
            return Err(Error::InvalidConfig("n_blocks, d_ff, max_seq_len must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

const PARAMS_PER_BLOCK: usize = 16;

/// The encoder: embeddings, block weights, and the 2-logit output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KtTransformer {
    pub config: EncoderConfig,
    pub n_questions: usize,
    pub params: Vec<Tensor>,
    pub names: Vec<String>,
    /// Fixed sinusoidal positional table (max_seq_len x d_model).
    pub positional: Tensor,
}

fn xavier(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(vec![rows, cols], data)
}

pub fn sinusoidal_positional_encoding(max_len: usize, d_model: usize) -> Tensor {
    let mut data = vec![0.0; max_len * d_model];
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            let rate = (pos as f64) / 10_000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = rate.sin();
            data[pos * d_model + 2 * i + 1] = rate.cos();
        }
    }
    Tensor::new(vec![max_len, d_model], data)
}

impl KtTransformer {
    /// Random initialization; the output head starts at zero so the
    /// untrained model predicts exactly 0.5.
    pub fn new(config: EncoderConfig, n_questions: usize) -> Result<KtTransformer> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let half = d / 2;
        let mut params = Vec::new();
        let mut names = Vec::new();
        let push = |name: String, t: Tensor, params: &mut Vec<Tensor>, names: &mut Vec<String>| {
            names.push(name);
            params.push(t);
        };
        push("question_embedding".into(), xavier(&mut rng, n_questions + 1, half), &mut params, &mut names);
        push("answer_embedding".into(), xavier(&mut rng, ANSWER_VOCAB, half), &mut params, &mut names);
        for b in 0..config.n_blocks {
            for (suffix, t) in [
                ("attn.wq", xavier(&mut rng, d, d)),
                ("attn.bq", Tensor::zeros(vec![d])),
                ("attn.wk", xavier(&mut rng, d, d)),
                ("attn.bk", Tensor::zeros(vec![d])),
                ("attn.wv", xavier(&mut rng, d, d)),
                ("attn.bv", Tensor::zeros(vec![d])),
                ("attn.wo", xavier(&mut rng, d, d)),
                ("attn.bo", Tensor::zeros(vec![d])),
                ("ln1.scale", Tensor::new(vec![d], vec![1.0; d])),
                ("ln1.shift", Tensor::zeros(vec![d])),
                ("ffn.w1", xavier(&mut rng, d, config.d_ff)),
                ("ffn.b1", Tensor::zeros(vec![config.d_ff])),
                ("ffn.w2", xavier(&mut rng, config.d_ff, d)),
                ("ffn.b2", Tensor::zeros(vec![d])),
                ("ln2.scale", Tensor::new(vec![d], vec![1.0; d])),
                ("ln2.shift", Tensor::zeros(vec![d])),
            ] {
                push(format!("block{b}.{suffix}"), t, &mut params, &mut names);
            }
        }
        push("head.weight".into(), Tensor::zeros(vec![d, 2]), &mut params, &mut names);
        push("head.bias".into(), Tensor::zeros(vec![2]), &mut params, &mut names);
        let positional = sinusoidal_positional_encoding(config.max_seq_len, d);
        Ok(KtTransformer { config, n_questions, params, names, positional })
    }

    fn block_param(&self, block: usize, k: usize) -> usize {
        2 + block * PARAMS_PER_BLOCK + k
    }

    fn head_weight(&self) -> usize {
        2 + self.config.n_blocks * PARAMS_PER_BLOCK
    }
}

/// Splits each user's chronological history into non-overlapping windows of
/// at most `max_seq_len`. Training rows reveal their answer token; held-out
/// rows always carry MASK.
pub fn build_sequences(dataset: &Dataset, split: &SplitLabel, max_seq_len: usize) -> Vec<KtSequence> {
    let splits = split.row_splits(dataset);
    let mut sequences = Vec::new();
    for dense_user in 0..dataset.n_users() {
        let rows = &dataset.by_user[dense_user];
        let user_id = dataset.users.raw(dense_user as u32);
        for chunk in rows.chunks(max_seq_len) {
            let mut seq = KtSequence {
                user_id,
                questions: Vec::with_capacity(chunk.len()),
                answers: Vec::with_capacity(chunk.len()),
                answer_ids: Vec::with_capacity(chunk.len()),
                known: Vec::with_capacity(chunk.len()),
                labels: Vec::with_capacity(chunk.len()),
            };
            for &r in chunk {
                let x = &dataset.interactions[r as usize];
                let dense_q = dataset
                    .question_ids
                    .dense(x.question_id)
                    .map(|d| d as usize)
                    .unwrap_or(dataset.n_questions());
                let is_train = splits[r as usize] == Split::Train;
                seq.questions.push(dense_q);
                seq.answers.push(if is_train {
                    if x.is_correct == 1 { TOKEN_CORRECT } else { TOKEN_INCORRECT }
                } else {
                    TOKEN_MASK
                });
                seq.answer_ids.push(x.answer_id);
                seq.known.push(is_train);
                seq.labels.push(x.is_correct);
            }
            sequences.push(seq);
        }
    }
    sequences
}

/// Independently masks each known answer token with probability `mask_prob`
/// (question tokens are never touched); if the draw selects none, one
/// eligible position is forced. Returns the masked copy and the positions
/// whose original answers became prediction targets.
pub fn mask_answers(sequence: &KtSequence, mask_prob: f64, seed: u64) -> (KtSequence, Vec<usize>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    mask_answers_with_rng(sequence, mask_prob, &mut rng)
}

fn mask_answers_with_rng(
    sequence: &KtSequence,
    mask_prob: f64,
    rng: &mut ChaCha20Rng,
) -> (KtSequence, Vec<usize>) {
    let mut masked = sequence.clone();
    let mut targets = Vec::new();
    let eligible: Vec<usize> = (0..sequence.len()).filter(|&i| sequence.known[i]).collect();
    for &i in &eligible {
        if rng.random::<f64>() < mask_prob {
            masked.answers[i] = TOKEN_MASK;
            targets.push(i);
        }
    }
    if targets.is_empty() && !eligible.is_empty() {
        let forced = eligible[rng.random_range(0..eligible.len())];
        masked.answers[forced] = TOKEN_MASK;
        targets.push(forced);
    }
    (masked, targets)
}

/// A padded batch ready for the encoder.
struct Batch {
    n: usize,
    seq_len: usize,
    questions: Vec<usize>,
    answers: Vec<usize>,
    /// True at real (non-PAD) positions.
    real: Vec<bool>,
}

fn pad_batch(sequences: &[&KtSequence], unknown_row: usize) -> Batch {
    let n = sequences.len();
    let seq_len = sequences.iter().map(|s| s.len()).max().unwrap_or(1).max(1);
    let mut questions = vec![unknown_row; n * seq_len];
    let mut answers = vec![TOKEN_PAD; n * seq_len];
    let mut real = vec![false; n * seq_len];
    for (b, seq) in sequences.iter().enumerate() {
        for (i, (&q, &a)) in seq.questions.iter().zip(&seq.answers).enumerate() {
            questions[b * seq_len + i] = q;
            answers[b * seq_len + i] = a;
            real[b * seq_len + i] = true;
        }
    }
    Batch { n, seq_len, questions, answers, real }
}

struct ForwardOutput {
    logits: VarId,
    param_vars: Vec<VarId>,
}

/// Dropout keep-masks are constants on the tape, sampled only in training.
fn dropout_mask(rng: &mut ChaCha20Rng, shape: Vec<usize>, p: f64) -> Tensor {
    let n = shape.iter().product();
    let keep = 1.0 - p;
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Tensor::new(shape, data)
}

fn forward_batch(
    model: &KtTransformer,
    tape: &mut Tape,
    batch: &Batch,
    dropout_rng: Option<&mut ChaCha20Rng>,
) -> Result<ForwardOutput> {
    let cfg = &model.config;
    let (n, s) = (batch.n, batch.seq_len);
    let d = cfg.d_model;
    let heads = cfg.n_heads;
    let dk = d / heads;

    let param_vars: Vec<VarId> = model.params.iter().map(|p| tape.param(p)).collect();

    let q_emb = tape.embedding_lookup(param_vars[0], &batch.questions, &[n, s])?;
    let a_emb = tape.embedding_lookup(param_vars[1], &batch.answers, &[n, s])?;
    let mut x = tape.concat(q_emb, a_emb)?;

    // positional encoding, truncated to the batch length
    let pos = Tensor::new(
        vec![s, d],
        model.positional.data[..s * d].to_vec(),
    );
    let pos_const = tape.constant(&pos);
    x = tape.add(x, pos_const)?;

    // additive attention mask: -1e30 on PAD keys
    let mut mask_data = vec![0.0; n * heads * s * s];
    for b in 0..n {
        for j in 0..s {
            if !batch.real[b * s + j] {
                for h in 0..heads {
                    for i in 0..s {
                        mask_data[((b * heads + h) * s + i) * s + j] = -1e30;
                    }
                }
            }
        }
    }
    let attn_mask = tape.constant(&Tensor::new(vec![n, heads, s, s], mask_data));

    let mut rng_holder = dropout_rng;

    for block in 0..cfg.n_blocks {
        let p = |k: usize| param_vars[model.block_param(block, k)];
        // multi-head self attention
        let split_heads = |tape: &mut Tape, t: VarId| -> Result<VarId> {
            let r = tape.reshape(t, vec![n, s, heads, dk])?;
            tape.transpose(r, 1, 2)
        };
        let q = tape.matmul(x, p(0))?;
        let q = tape.add(q, p(1))?;
        let q = split_heads(tape, q)?;
        let k = tape.matmul(x, p(2))?;
        let k = tape.add(k, p(3))?;
        let k = split_heads(tape, k)?;
        let v = tape.matmul(x, p(4))?;
        let v = tape.add(v, p(5))?;
        let v = split_heads(tape, v)?;

        let kt = tape.transpose(k, 2, 3)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
        let scores = tape.add(scores, attn_mask)?;
        let weights = tape.softmax(scores);
        let context = tape.matmul(weights, v)?;
        let context = tape.transpose(context, 1, 2)?;
        let context = tape.reshape(context, vec![n, s, d])?;
        let attn = tape.matmul(context, p(6))?;
        let mut attn = tape.add(attn, p(7))?;
        if let Some(rng) = rng_holder.as_deref_mut() {
            if cfg.dropout > 0.0 {
                let mask = dropout_mask(rng, vec![n, s, d], cfg.dropout);
                let m = tape.constant(&mask);
                attn = tape.mul(attn, m)?;
            }
        }
        let res1 = tape.add(x, attn)?;
        let normed1 = tape.layer_norm(res1, p(8), p(9))?;

        // pointwise feed-forward
        let h1 = tape.matmul(normed1, p(10))?;
        let h1 = tape.add(h1, p(11))?;
        let mut h1 = tape.gelu_approx(h1);
        if let Some(rng) = rng_holder.as_deref_mut() {
            if cfg.dropout > 0.0 {
                let mask = dropout_mask(rng, vec![n, s, cfg.d_ff], cfg.dropout);
                let m = tape.constant(&mask);
                h1 = tape.mul(h1, m)?;
            }
        }
        let h2 = tape.matmul(h1, p(12))?;
        let h2 = tape.add(h2, p(13))?;
        let res2 = tape.add(normed1, h2)?;
        x = tape.layer_norm(res2, p(14), p(15))?;
    }

    let logits = tape.matmul(x, param_vars[model.head_weight()])?;
    let logits = tape.add(logits, param_vars[model.head_weight() + 1])?;
    Ok(ForwardOutput { logits, param_vars })
}

/// Per-position 2-class logits for a batch of sequences (eval mode).
pub fn forward(model: &KtTransformer, sequences: &[&KtSequence]) -> Result<(Vec<f64>, usize)> {
    let batch = pad_batch(sequences, model.n_questions);
    let mut tape = Tape::new();
    let out = forward_batch(model, &mut tape, &batch, None)?;
    Ok((tape.value(out.logits).to_vec(), batch.seq_len))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Hard cap on optimizer steps (handy for fixtures); `None` = epochs only.
    pub max_steps: Option<usize>,
    /// Early-stop patience in evaluations of the validation loss.
    pub patience: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 64,
            learning_rate: 1e-4,
            epochs: 3,
            seed: 0,
            max_steps: None,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss after every optimizer step.
    pub loss_curve: Vec<f64>,
    pub steps: usize,
    pub aborted_on_nan: bool,
    pub stopped_early: bool,
}

/// Trains in place. Per step: sample a batch, mask answers, forward,
/// masked cross-entropy, Adam. Deterministic given the seed.
pub fn train(
    model: &mut KtTransformer,
    sequences: &[KtSequence],
    validation: Option<&[KtSequence]>,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if sequences.is_empty() {
        return Err(Error::EmptyTraining("attention sequences"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut state = AdamState::for_params(&model.params);
    let adam = AdamParams { learning_rate: opts.learning_rate, ..AdamParams::default() };
    let mut report = TrainReport::default();
    let mut snapshot = model.params.clone();
    let mut best_val = f64::INFINITY;
    let mut bad_evals = 0usize;

    'epochs: for _epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(opts.batch_size.max(1)) {
            if let Some(cap) = opts.max_steps {
                if report.steps >= cap {
                    break 'epochs;
                }
            }
            let mut masked_seqs = Vec::with_capacity(chunk.len());
            let mut all_targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (m, targets) = mask_answers_with_rng(&sequences[i], model.config.mask_prob, &mut rng);
                masked_seqs.push(m);
                all_targets.push(targets);
            }
            let refs: Vec<&KtSequence> = masked_seqs.iter().collect();
            let batch = pad_batch(&refs, model.n_questions);
            let mut targets = vec![0usize; batch.n * batch.seq_len];
            let mut loss_mask = vec![false; batch.n * batch.seq_len];
            for (b, seq_targets) in all_targets.iter().enumerate() {
                for &pos in seq_targets {
                    let flat = b * batch.seq_len + pos;
                    targets[flat] = masked_seqs[b].labels[pos] as usize;
                    loss_mask[flat] = true;
                }
            }
            if !loss_mask.iter().any(|&m| m) {
                continue;
            }

            let mut tape = Tape::new();
            let out = forward_batch(model, &mut tape, &batch, Some(&mut rng))?;
            let loss = tape.cross_entropy_masked(out.logits, &targets, &loss_mask)?;
            let loss_value = tape.value(loss)[0];
            if !loss_value.is_finite() {
                model.params = snapshot;
                report.aborted_on_nan = true;
                break 'epochs;
            }
            tape.backward(loss)?;
            let grads: Vec<Option<&[f64]>> = out.param_vars.iter().map(|&v| tape.grad(v)).collect();
            adam_step(&mut model.params, &grads, &mut state, &adam);
            report.loss_curve.push(loss_value);
            report.steps += 1;
        }
        snapshot = model.params.clone();

        if let Some(val) = validation {
            let val_loss = held_out_log_loss(model, val)?;
            if val_loss + 1e-9 < best_val {
                best_val = val_loss;
                bad_evals = 0;
            } else {
                bad_evals += 1;
                if bad_evals >= opts.patience {
                    report.stopped_early = true;
                    break 'epochs;
                }
            }
        }
    }
    Ok(report)
}

/// Probability of CORRECT at every masked position of every sequence,
/// keyed by answer id.
pub fn predict_masked(
    model: &KtTransformer,
    sequences: &[KtSequence],
    batch_size: usize,
) -> Result<Vec<(i64, f64)>> {
    let mut out = Vec::new();
    for chunk in sequences.chunks(batch_size.max(1)) {
        let refs: Vec<&KtSequence> = chunk.iter().collect();
        let (logits, seq_len) = forward(model, &refs)?;
        for (b, seq) in chunk.iter().enumerate() {
            for (i, &token) in seq.answers.iter().enumerate() {
                if token != TOKEN_MASK {
                    continue;
                }
                let base = (b * seq_len + i) * 2;
                let (l0, l1) = (logits[base + TOKEN_INCORRECT], logits[base + TOKEN_CORRECT]);
                let p = crate::math::clamp_prob(crate::math::sigmoid(l1 - l0));
                out.push((seq.answer_ids[i], p));
            }
        }
    }
    Ok(out)
}

/// Imputes the probability of a correct answer for specific dataset rows.
/// Every held-out answer in the affected sequences stays masked, so no
/// test label can leak into another test prediction.
pub fn predict_test(
    model: &KtTransformer,
    dataset: &Dataset,
    split: &SplitLabel,
    rows: &[usize],
    batch_size: usize,
) -> Result<Vec<f64>> {
    let sequences = build_sequences(dataset, split, model.config.max_seq_len);
    let scored = predict_masked(model, &sequences, batch_size)?;
    let by_answer: std::collections::HashMap<i64, f64> = scored.into_iter().collect();
    let base = dataset.base_rate();
    Ok(rows
        .iter()
        .map(|&r| {
            let answer_id = dataset.interactions[r].answer_id;
            by_answer.get(&answer_id).copied().unwrap_or(base)
        })
        .collect())
}

/// Mean log-loss over all masked (held-out) positions with known labels.
fn held_out_log_loss(model: &KtTransformer, sequences: &[KtSequence]) -> Result<f64> {
    let preds = predict_masked(model, sequences, 16)?;
    let mut labels_by_answer = std::collections::HashMap::new();
    for seq in sequences {
        for (i, &aid) in seq.answer_ids.iter().enumerate() {
            labels_by_answer.insert(aid, seq.labels[i]);
        }
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (aid, p) in preds {
        let y = labels_by_answer[&aid];
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        total += if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
        n += 1;
    }
    if n == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(total / n as f64)
}

/// Fraction of masked positions whose argmax matches the hidden label,
/// with masking drawn from `seed`.
pub fn masked_accuracy(model: &KtTransformer, sequences: &[KtSequence], seed: u64) -> Result<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut total = 0usize;
    for seq in sequences {
        let (masked, targets) = mask_answers_with_rng(seq, model.config.mask_prob, &mut rng);
        if targets.is_empty() {
            continue;
        }
        let (logits, _seq_len) = forward(model, &[&masked])?;
        for &pos in &targets {
            let base = pos * 2;
            let predicted = if logits[base + TOKEN_CORRECT] >= logits[base + TOKEN_INCORRECT] { 1 } else { 0 };
            hits += (predicted == seq.labels[pos] as usize) as usize;
            total += 1;
        }
    }
    Ok(hits as f64 / total.max(1) as f64)
}
