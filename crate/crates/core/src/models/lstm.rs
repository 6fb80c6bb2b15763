use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, softmax, ModelError, Prediction};
use crate::eval::macro_f1;
use crate::features::{encode, EmbeddingTable, SequenceBatch, Vocabulary, PAD, UNK};
use crate::label::{Label, NUM_CLASSES};
use crate::textnorm::CleanDocument;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbiLstmConfig {
    pub embedding_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dense: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for SbiLstmConfig {
    fn default() -> Self {
        SbiLstmConfig {
            embedding_dim: 100,
            hidden: 64,
            layers: 2,
            dense: 64,
            dropout: 0.5,
            max_len: 100,
            batch_size: 32,
            epochs: 30,
            learning_rate: 0.005,
            patience: 5,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl SbiLstmConfig {
    fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("embedding_dim", self.embedding_dim),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("dense", self.dense),
            ("max_len", self.max_len),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config("dropout must lie in [0, 1)".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ModelError::Config("learning_rate must be positive".into()));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(ModelError::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Offsets of one direction's LSTM weights in the flat parameter vector.
/// Gate blocks are ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CellLayout {
    input: usize,
    w: usize,
    u: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    vocab: usize,
    embed: usize,
    hidden: usize,
    dense: usize,
    cells: Vec<[CellLayout; 2]>,
    dense_w: usize,
    dense_b: usize,
    out_w: usize,
    out_b: usize,
    total: usize,
}

impl Layout {
    fn new(vocab: usize, c: &SbiLstmConfig) -> Self {
        let (e, h) = (c.embedding_dim, c.hidden);
        let mut at = vocab * e;
        let mut cells = Vec::with_capacity(c.layers);
        for layer in 0..c.layers {
            let input = if layer == 0 { e } else { 2 * h };
            let mut cell = || {
                let l = CellLayout {
                    input,
                    w: at,
                    u: at + 4 * h * input,
                    b: at + 4 * h * (input + h),
                };
                at = l.b + 4 * h;
                l
            };
            cells.push([cell(), cell()]);
        }
        let dense_w = at;
        let dense_b = dense_w + c.dense * 2 * h;
        let out_w = dense_b + c.dense;
        let out_b = out_w + NUM_CLASSES * c.dense;
        Layout {
            vocab,
            embed: e,
            hidden: h,
            dense: c.dense,
            cells,
            dense_w,
            dense_b,
            out_w,
            out_b,
            total: out_b + NUM_CLASSES,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += M · x` for row-major `M` of shape `out.len() × x.len()`.
fn gemv_acc(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Mᵀ · d`.
fn gemv_t_acc(m: &[f64], d: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (&di, row) in d.iter().zip(m.chunks_exact(cols)) {
        if di != 0.0 {
            out.iter_mut().zip(row).for_each(|(o, a)| *o += di * a);
        }
    }
}

/// `G += d ⊗ x`.
fn outer_acc(g: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (&di, row) in d.iter().zip(g.chunks_exact_mut(cols)) {
        if di != 0.0 {
            row.iter_mut().zip(x).for_each(|(a, b)| *a += di * b);
        }
    }
}

/// Activations of one direction over one sequence, in processing order.
struct CellTrace {
    /// Post-activation gates `[i f g o]` per step, each `4h`.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    hiddens: Vec<Vec<f64>>,
}

struct LayerTrace {
    inputs: Vec<Vec<f64>>,
    dirs: [CellTrace; 2],
    /// Inverted-dropout scale applied to this layer's outputs.
    mask: Option<Vec<Vec<f64>>>,
}

struct Trace {
    ids: Vec<usize>,
    layers: Vec<LayerTrace>,
    pooled: Vec<f64>,
    dense_pre: Vec<f64>,
    dense_out: Vec<f64>,
    dense_mask: Option<Vec<f64>>,
    probs: [f64; NUM_CLASSES],
}

fn dropout_mask(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..n)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

/// Runs one direction over `inputs`; `reverse` reads right to left. The
/// returned trace is indexed by processing step.
fn run_cell(params: &[f64], cell: &CellLayout, h: usize, inputs: &[Vec<f64>], reverse: bool) -> CellTrace {
    let n = inputs.len();
    let w = &params[cell.w..cell.u];
    let u = &params[cell.u..cell.b];
    let b = &params[cell.b..cell.b + 4 * h];
    let mut trace = CellTrace {
        gates: Vec::with_capacity(n),
        cells: Vec::with_capacity(n),
        hiddens: Vec::with_capacity(n),
    };
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        let mut a = b.to_vec();
        gemv_acc(w, &inputs[t], &mut a);
        gemv_acc(u, &h_prev, &mut a);
        for (k, v) in a.iter_mut().enumerate() {
            *v = if (2 * h..3 * h).contains(&k) {
                v.tanh()
            } else {
                sigmoid(*v)
            };
        }
        let mut c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for j in 0..h {
            c[j] = a[h + j] * c_prev[j] + a[j] * a[2 * h + j];
            hn[j] = a[3 * h + j] * c[j].tanh();
        }
        trace.gates.push(a);
        h_prev.clone_from(&hn);
        c_prev.clone_from(&c);
        trace.cells.push(c);
        trace.hiddens.push(hn);
    }
    trace
}

/// Backpropagates `d_out` (indexed by position) through one direction,
/// accumulating weight gradients into `grad` and input gradients into
/// `d_in`.
#[allow(clippy::too_many_arguments)]
fn backprop_cell(
    params: &[f64],
    grad: &mut [f64],
    cell: &CellLayout,
    h: usize,
    inputs: &[Vec<f64>],
    trace: &CellTrace,
    reverse: bool,
    d_out: &[Vec<f64>],
    d_in: &mut [Vec<f64>],
) {
    let n = inputs.len();
    let w = &params[cell.w..cell.u];
    let u = &params[cell.u..cell.b];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let zeros = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    for step in (0..n).rev() {
        let t = if reverse { n - 1 - step } else { step };
        let g = &trace.gates[step];
        let c = &trace.cells[step];
        let c_prev = if step == 0 { &zeros } else { &trace.cells[step - 1] };
        let h_prev = if step == 0 { &zeros } else { &trace.hiddens[step - 1] };
        for j in 0..h {
            let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let dh = d_out[t][j] + dh_next[j];
            let tc = c[j].tanh();
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            da[j] = dc * gg * i * (1.0 - i);
            da[h + j] = dc * c_prev[j] * f * (1.0 - f);
            da[2 * h + j] = dc * i * (1.0 - gg * gg);
            da[3 * h + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        let (gw, rest) = grad[cell.w..cell.b + 4 * h].split_at_mut(cell.u - cell.w);
        let (gu, gb) = rest.split_at_mut(cell.b - cell.u);
        outer_acc(gw, &da, &inputs[t]);
        outer_acc(gu, &da, h_prev);
        gb.iter_mut().zip(&da).for_each(|(a, b)| *a += b);
        gemv_t_acc(w, &da, &mut d_in[t]);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        gemv_t_acc(u, &da, &mut dh_next);
    }
}

/// Stacked bidirectional LSTM over token ids with masked mean pooling, a
/// ReLU dense layer and a softmax output.
///
/// Padding ids are dropped before the recurrent pass, so padded positions
/// never touch the recurrent state or the pooled vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SbiLstmModel {
    vocab: Vocabulary,
    config: SbiLstmConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl SbiLstmModel {
    /// Randomly initialised model. Rows of `embeddings` seed the embedding
    /// matrix where the table has a vector for the token.
    pub fn init(
        vocab: Vocabulary,
        config: SbiLstmConfig,
        embeddings: Option<&EmbeddingTable>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if let Some(table) = embeddings {
            if table.dim() != config.embedding_dim {
                return Err(ModelError::Config(format!(
                    "embedding table has dimension {}, model expects {}",
                    table.dim(),
                    config.embedding_dim
                )));
            }
        }
        let layout = Layout::new(vocab.len(), &config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0; layout.total];
        let e = layout.embed;
        for idx in 1..layout.vocab {
            let row = &mut params[idx * e..(idx + 1) * e];
            let pretrained = embeddings.zip(vocab.token(idx)).and_then(|(t, tok)| t.vector(tok));
            match pretrained {
                Some(v) => row.copy_from_slice(&v),
                None => row.iter_mut().for_each(|x| *x = rng.random_range(-0.1..0.1)),
            }
        }
        let h = layout.hidden;
        let scale = 1.0 / (h as f64).sqrt();
        for cell in layout.cells.iter().flatten() {
            params[cell.w..cell.b]
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-scale..scale));
            params[cell.b + h..cell.b + 2 * h].iter_mut().for_each(|x| *x = 1.0);
        }
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let a = glorot(2 * h, layout.dense);
        params[layout.dense_w..layout.dense_b]
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-a..a));
        let a = glorot(layout.dense, NUM_CLASSES);
        params[layout.out_w..layout.out_b]
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-a..a));
        Ok(SbiLstmModel {
            vocab,
            config,
            layout,
            params,
        })
    }

    pub(crate) fn from_parts(vocab: Vocabulary, config: SbiLstmConfig, params: Vec<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(vocab.len(), &config);
        if params.len() != layout.total {
            return Err(ModelError::Shape(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::Format("non-finite parameter".into()));
        }
        Ok(SbiLstmModel {
            vocab,
            config,
            layout,
            params,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &SbiLstmConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn predict(&self, doc: &CleanDocument) -> Prediction {
        let (ids, _) = encode(&doc.tokens, &self.vocab, self.config.max_len);
        self.predict_ids(&ids)
    }

    /// Prediction for an index sequence; padding ids are ignored wherever
    /// they appear.
    pub fn predict_ids(&self, ids: &[usize]) -> Prediction {
        let trace = self.forward(ids, None);
        Prediction::from_distribution(trace.probs)
    }

    fn forward(&self, ids: &[usize], mut rng: Option<&mut ChaCha8Rng>) -> Trace {
        let l = &self.layout;
        let p = &self.params;
        let (e, h) = (l.embed, l.hidden);
        let ids: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|&i| i != PAD)
            .map(|i| if i < l.vocab { i } else { UNK })
            .collect();
        let rate = self.config.dropout;
        let mut inputs: Vec<Vec<f64>> = ids.iter().map(|&i| p[i * e..(i + 1) * e].to_vec()).collect();
        let mut layers = Vec::with_capacity(l.cells.len());
        for cells in &l.cells {
            let fwd = run_cell(p, &cells[0], h, &inputs, false);
            let bwd = run_cell(p, &cells[1], h, &inputs, true);
            let n = inputs.len();
            let mut outputs: Vec<Vec<f64>> = (0..n)
                .map(|t| {
                    let mut o = fwd.hiddens[t].clone();
                    o.extend_from_slice(&bwd.hiddens[n - 1 - t]);
                    o
                })
                .collect();
            let mask = match rng.as_deref_mut() {
                Some(r) if rate > 0.0 => {
                    let m: Vec<Vec<f64>> = (0..n).map(|_| dropout_mask(r, 2 * h, rate)).collect();
                    for (o, mk) in outputs.iter_mut().zip(&m) {
                        o.iter_mut().zip(mk).for_each(|(a, b)| *a *= b);
                    }
                    Some(m)
                }
                _ => None,
            };
            layers.push(LayerTrace {
                inputs: std::mem::replace(&mut inputs, outputs),
                dirs: [fwd, bwd],
                mask,
            });
        }
        let mut pooled = vec![0.0; 2 * h];
        if !inputs.is_empty() {
            for o in &inputs {
                pooled.iter_mut().zip(o).for_each(|(a, b)| *a += b);
            }
            let n = inputs.len() as f64;
            pooled.iter_mut().for_each(|a| *a /= n);
        }
        let mut dense_pre = p[l.dense_b..l.dense_b + l.dense].to_vec();
        gemv_acc(&p[l.dense_w..l.dense_b], &pooled, &mut dense_pre);
        let mut dense_out: Vec<f64> = dense_pre.iter().map(|&v| v.max(0.0)).collect();
        let dense_mask = match rng {
            Some(r) if rate > 0.0 => {
                let m = dropout_mask(r, l.dense, rate);
                dense_out.iter_mut().zip(&m).for_each(|(a, b)| *a *= b);
                Some(m)
            }
            _ => None,
        };
        let mut logits = [0.0; NUM_CLASSES];
        logits.copy_from_slice(&p[l.out_b..l.out_b + NUM_CLASSES]);
        gemv_acc(&p[l.out_w..l.out_b], &dense_out, &mut logits);
        Trace {
            ids,
            layers,
            pooled,
            dense_pre,
            dense_out,
            dense_mask,
            probs: softmax(&logits),
        }
    }

    /// Adds `scale ·` the cross-entropy gradient for one example to `grad`.
    fn backward(&self, trace: &Trace, label: Label, scale: f64, grad: &mut [f64]) {
        let l = &self.layout;
        let p = &self.params;
        let h = l.hidden;
        let mut dlogits = trace.probs;
        dlogits[label.index()] -= 1.0;
        dlogits.iter_mut().for_each(|d| *d *= scale);
        outer_acc(&mut grad[l.out_w..l.out_b], &dlogits, &trace.dense_out);
        grad[l.out_b..l.out_b + NUM_CLASSES]
            .iter_mut()
            .zip(&dlogits)
            .for_each(|(g, d)| *g += d);
        let mut d_dense = vec![0.0; l.dense];
        gemv_t_acc(&p[l.out_w..l.out_b], &dlogits, &mut d_dense);
        if let Some(m) = &trace.dense_mask {
            d_dense.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
        for (d, &z) in d_dense.iter_mut().zip(&trace.dense_pre) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        outer_acc(&mut grad[l.dense_w..l.dense_b], &d_dense, &trace.pooled);
        grad[l.dense_b..l.dense_b + l.dense]
            .iter_mut()
            .zip(&d_dense)
            .for_each(|(g, d)| *g += d);
        let n = trace.ids.len();
        if n == 0 {
            return;
        }
        let mut d_pooled = vec![0.0; 2 * h];
        gemv_t_acc(&p[l.dense_w..l.dense_b], &d_dense, &mut d_pooled);
        d_pooled.iter_mut().for_each(|d| *d /= n as f64);
        let mut d_out: Vec<Vec<f64>> = vec![d_pooled; n];
        for (layer, cells) in trace.layers.iter().zip(&l.cells).rev() {
            if let Some(mask) = &layer.mask {
                for (d, m) in d_out.iter_mut().zip(mask) {
                    d.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
                }
            }
            let input_dim = cells[0].input;
            let mut d_in = vec![vec![0.0; input_dim]; n];
            let fwd_out: Vec<Vec<f64>> = d_out.iter().map(|d| d[..h].to_vec()).collect();
            let bwd_out: Vec<Vec<f64>> = d_out.iter().map(|d| d[h..].to_vec()).collect();
            backprop_cell(
                p,
                grad,
                &cells[0],
                h,
                &layer.inputs,
                &layer.dirs[0],
                false,
                &fwd_out,
                &mut d_in,
            );
            backprop_cell(
                p,
                grad,
                &cells[1],
                h,
                &layer.inputs,
                &layer.dirs[1],
                true,
                &bwd_out,
                &mut d_in,
            );
            d_out = d_in;
        }
        let e = l.embed;
        for (&id, d) in trace.ids.iter().zip(&d_out) {
            grad[id * e..(id + 1) * e].iter_mut().zip(d).for_each(|(g, v)| *g += v);
        }
    }

    /// Mean cross-entropy over the examples and its gradient, without
    /// dropout.
    pub fn loss_and_gradient(&self, rows: &[Vec<usize>], labels: &[Label]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.layout.total];
        let scale = 1.0 / rows.len().max(1) as f64;
        let mut loss = 0.0;
        for (ids, &label) in rows.iter().zip(labels) {
            let trace = self.forward(ids, None);
            loss -= trace.probs[label.index()].max(f64::MIN_POSITIVE).ln() * scale;
            self.backward(&trace, label, scale, &mut grad);
        }
        (loss, grad)
    }

    /// Evaluation-mode loss and predicted labels.
    fn evaluate(&self, batch: &SequenceBatch, labels: &[Label]) -> (f64, Vec<Label>) {
        let mut loss = 0.0;
        let mut pred = Vec::with_capacity(batch.len());
        for (ids, label) in batch.ids.iter().zip(labels) {
            let probs = self.forward(ids, None).probs;
            loss -= probs[label.index()].max(f64::MIN_POSITIVE).ln();
            pred.push(Label::ALL[argmax(&probs)]);
        }
        (loss / batch.len().max(1) as f64, pred)
    }
}

/// Held-out data for early stopping.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub batch: &'a SequenceBatch,
    pub labels: &'a [Label],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean minibatch loss with dropout active.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_macro_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SbiLstmTrained {
    pub model: SbiLstmModel,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Minibatch Adam with global-norm clipping. With validation data, keeps
/// the parameters of the best validation macro-F1 epoch and stops after
/// `patience` epochs without improvement.
pub fn train_sbilstm(
    vocab: Vocabulary,
    train: &SequenceBatch,
    labels: &[Label],
    embeddings: Option<&EmbeddingTable>,
    validation: Option<Validation<'_>>,
    config: SbiLstmConfig,
) -> Result<SbiLstmTrained, ModelError> {
    if train.len() != labels.len() {
        return Err(ModelError::Config(format!(
            "{} sequences but {} labels",
            train.len(),
            labels.len()
        )));
    }
    if train.is_empty() {
        return Err(ModelError::Config("training set is empty".into()));
    }
    if let Some(v) = validation {
        if v.batch.len() != v.labels.len() {
            return Err(ModelError::Config(
                "validation sequences and labels differ in length".into(),
            ));
        }
    }
    let too_long = train
        .ids
        .iter()
        .chain(validation.iter().flat_map(|v| &v.batch.ids))
        .find(|r| r.len() > config.max_len);
    if too_long.is_some() {
        return Err(ModelError::Config(format!(
            "sequences longer than max_len {}",
            config.max_len
        )));
    }
    if let Some(&bad) = train.ids.iter().flatten().find(|&&i| i >= vocab.len()) {
        return Err(ModelError::Config(format!(
            "token id {bad} outside vocabulary of {}",
            vocab.len()
        )));
    }

    let mut model = SbiLstmModel::init(vocab, config.clone(), embeddings)?;
    // Separate streams keep the initialisation independent of shuffling.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = Adam::new(model.layout.total);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = vec![0.0; model.layout.total];
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let trace = model.forward(&train.ids[i], Some(&mut rng));
                loss_sum -= trace.probs[labels[i].index()].max(f64::MIN_POSITIVE).ln();
                model.backward(&trace, labels[i], scale, &mut grad);
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(ModelError::NonFinite {
                    epoch,
                    detail: format!("gradient norm is {norm}"),
                });
            }
            if norm > config.clip_norm {
                let s = config.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam.step(&mut model.params, &grad, config.learning_rate);
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(ModelError::NonFinite {
                epoch,
                detail: format!("training loss is {train_loss}"),
            });
        }
        let (_, train_pred) = model.evaluate(train, labels);
        let correct = train_pred.iter().zip(labels).filter(|(p, g)| p == g).count();
        let mut entry = EpochLog {
            epoch,
            train_loss,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss: None,
            val_macro_f1: None,
        };
        let mut stop = false;
        if let Some(v) = validation {
            let (val_loss, pred) = model.evaluate(v.batch, v.labels);
            let f1 = macro_f1(v.labels, &pred).expect("lengths checked above");
            entry.val_loss = Some(val_loss);
            entry.val_macro_f1 = Some(f1);
            match &best {
                Some((score, _, _)) if f1 <= *score => {
                    let since = epoch - best.as_ref().map_or(0, |b| b.1);
                    stop = since >= config.patience.max(1);
                }
                _ => best = Some((f1, epoch, model.params.clone())),
            }
        }
        log::debug!(
            "sbilstm epoch {epoch}: loss {:.6} acc {:.4} val_f1 {:?}",
            entry.train_loss,
            entry.train_accuracy,
            entry.val_macro_f1
        );
        log.push(entry);
        if stop {
            break;
        }
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => log.len(),
    };
    Ok(SbiLstmTrained {
        model,
        epochs: log,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_vocab, to_sequences};

    fn tiny_config() -> SbiLstmConfig {
        SbiLstmConfig {
            embedding_dim: 4,
            hidden: 3,
            layers: 2,
            dense: 5,
            dropout: 0.0,
            max_len: 6,
            batch_size: 2,
            epochs: 3,
            ..SbiLstmConfig::default()
        }
    }

    fn toy() -> (Vocabulary, Vec<CleanDocument>) {
        let docs: Vec<CleanDocument> = ["ሀ", "ለ", "መ", "ረ"]
            .iter()
            .map(|t| CleanDocument::from_tokens("d", vec![t.to_string()]))
            .collect();
        (build_vocab(&docs, 1).unwrap(), docs)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let docs: Vec<CleanDocument> = ["a b c", "b c", "c a a b", "d"]
            .iter()
            .map(|t| CleanDocument::from_tokens("d", t.split(' ').map(String::from).collect()))
            .collect();
        let vocab = build_vocab(&docs, 1).unwrap();
        let model = SbiLstmModel::init(vocab.clone(), tiny_config(), None).unwrap();
        let batch = to_sequences(&docs, &vocab, 6).unwrap();
        let (_, grad) = model.loss_and_gradient(&batch.ids, &Label::ALL);
        let h = 1e-6;
        let mut checked = 0;
        for k in (0..model.num_params()).step_by(7) {
            let mut plus = model.clone();
            plus.params[k] += h;
            let mut minus = model.clone();
            minus.params[k] -= h;
            let fd = (plus.loss_and_gradient(&batch.ids, &Label::ALL).0
                - minus.loss_and_gradient(&batch.ids, &Label::ALL).0)
                / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() <= 1e-6 * fd.abs().max(1e-2),
                "param {k}: fd {fd} analytic {}",
                grad[k]
            );
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn padding_is_masked() {
        let (vocab, _) = toy();
        let model = SbiLstmModel::init(vocab, tiny_config(), None).unwrap();
        let short = model.predict_ids(&[2, 4, 3]);
        let long = model.predict_ids(&[2, 4, 3, PAD, PAD, PAD, PAD, PAD]);
        for (a, b) in short.distribution.iter().zip(&long.distribution) {
            assert!((a - b).abs() < 1e-12);
        }
        let empty = model.predict_ids(&[PAD; 4]);
        assert!((empty.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn separable_toy_set_is_fit_deterministically() {
        let (vocab, docs) = toy();
        let config = SbiLstmConfig {
            embedding_dim: 8,
            hidden: 8,
            dense: 8,
            epochs: 200,
            max_len: 4,
            learning_rate: 0.01,
            seed: 7,
            ..SbiLstmConfig::default()
        };
        let batch = to_sequences(&docs, &vocab, 4).unwrap();
        let run = || train_sbilstm(vocab.clone(), &batch, &Label::ALL, None, None, config.clone()).unwrap();
        let a = run();
        let b = run();
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.epochs.last().unwrap().train_accuracy, 1.0);
        for (doc, label) in docs.iter().zip(Label::ALL) {
            assert_eq!(a.model.predict(doc).label, label);
        }
    }

    #[test]
    fn early_stopping_keeps_best_epoch() {
        let (vocab, docs) = toy();
        let batch = to_sequences(&docs, &vocab, 4).unwrap();
        let config = SbiLstmConfig {
            epochs: 60,
            patience: 3,
            ..tiny_config()
        };
        let val = Validation {
            batch: &batch,
            labels: &Label::ALL,
        };
        let trained = train_sbilstm(vocab, &batch, &Label::ALL, None, Some(val), config).unwrap();
        let best = trained.epochs[trained.best_epoch - 1].val_macro_f1.unwrap();
        assert!(trained.epochs.iter().all(|e| e.val_macro_f1.unwrap() <= best));
        assert!(trained.epochs.len() <= 60);
        let stopped_early = trained.epochs.len() < 60;
        if stopped_early {
            assert_eq!(trained.epochs.len(), trained.best_epoch + 3);
        }
    }

    #[test]
    fn configuration_errors() {
        let (vocab, docs) = toy();
        let batch = to_sequences(&docs, &vocab, 4).unwrap();
        let bad = SbiLstmConfig {
            hidden: 0,
            ..tiny_config()
        };
        assert!(matches!(
            train_sbilstm(vocab.clone(), &batch, &Label::ALL, None, None, bad),
            Err(ModelError::Config(_))
        ));
        assert!(train_sbilstm(vocab.clone(), &batch, &Label::ALL[..2], None, None, tiny_config()).is_err());
        let short = SbiLstmConfig {
            max_len: 2,
            ..tiny_config()
        };
        assert!(train_sbilstm(vocab, &batch, &Label::ALL, None, None, short).is_err());
    }
}
