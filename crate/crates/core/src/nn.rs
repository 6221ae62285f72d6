//! Embeddings + MLP click model.
//!
//! A [`CtrModel`] looks up one embedding row per categorical field,
//! concatenates the rows, runs them through ReLU hidden layers and produces a
//! single click logit. Gradients are computed by hand (reverse mode over the
//! fixed architecture) and applied with Adagrad. All math is `f64`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;
/// Adagrad denominator offset.
pub const ADAGRAD_EPS: f64 = 1e-8;

/// Logistic function `1 / (1 + exp(-z))`, unclamped.
#[inline]
pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-z))
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub embedding_dim: usize,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, embedding_dim: usize) -> Self {
        FieldSpec { name: name.into(), embedding_dim }
    }
}

/// Field layout and hidden widths of a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub fields: Vec<FieldSpec>,
    pub hidden: Vec<usize>,
}

impl ModelSpec {
    pub fn new(fields: Vec<FieldSpec>, hidden: Vec<usize>) -> Self {
        ModelSpec { fields, hidden }
    }

    /// Same embedding width for every named field.
    pub fn uniform(names: &[&str], embedding_dim: usize, hidden: Vec<usize>) -> Self {
        let fields = names.iter().map(|n| FieldSpec::new(*n, embedding_dim)).collect();
        ModelSpec { fields, hidden }
    }

    pub fn input_width(&self) -> usize {
        self.fields.iter().map(|f| f.embedding_dim).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one field".into()));
        }
        for (i, f) in self.fields.iter().enumerate() {
            if f.embedding_dim == 0 {
                return Err(Error::InvalidArgument(format!("field `{}` has embedding_dim 0", f.name)));
            }
            if self.fields[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::InvalidArgument(format!("duplicate field name `{}`", f.name)));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
struct FieldVocab {
    name: String,
    values: Vec<u32>,
    index: BTreeMap<u32, u32>,
}

/// Per-field append-only map from categorical value to embedding row.
///
/// Categorical values are `u32` tokens. The first value inserted into a field
/// gets row 0, the next new value row 1, and so on; indices never move.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Vocabulary {
    fields: Vec<FieldVocab>,
}

impl Vocabulary {
    /// Empty vocabulary over the named fields.
    pub fn new<S: AsRef<str>>(field_names: &[S]) -> Self {
        let fields =
            field_names.iter().map(|n| FieldVocab { name: n.as_ref().to_string(), ..Default::default() }).collect();
        Vocabulary { fields }
    }

    /// Rebuilds a vocabulary from per-field value lists in index order.
    pub fn from_values(fields: Vec<(String, Vec<u32>)>) -> Result<Self> {
        let mut out = Vec::with_capacity(fields.len());
        for (name, values) in fields {
            let mut index = BTreeMap::new();
            for (i, &v) in values.iter().enumerate() {
                if index.insert(v, i as u32).is_some() {
                    return Err(Error::InvalidArgument(format!("value {v} appears twice in field `{name}`")));
                }
            }
            out.push(FieldVocab { name, values, index });
        }
        Ok(Vocabulary { fields: out })
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }

    pub fn field_name(&self, field: usize) -> &str {
        &self.fields[field].name
    }

    pub fn len(&self, field: usize) -> usize {
        self.fields[field].values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.iter().all(|f| f.values.is_empty())
    }

    /// Values of a field in index order.
    pub fn values(&self, field: usize) -> &[u32] {
        &self.fields[field].values
    }

    pub fn get(&self, field: usize, value: u32) -> Option<u32> {
        self.fields[field].index.get(&value).copied()
    }

    /// Returns the row of `value`, appending it if unseen.
    pub fn insert(&mut self, field: usize, value: u32) -> u32 {
        let f = &mut self.fields[field];
        let next = f.values.len() as u32;
        *f.index.entry(value).or_insert_with(|| {
            f.values.push(value);
            next
        })
    }

    fn check_arity(&self, values: &[u32]) -> Result<()> {
        if values.len() != self.fields.len() {
            return Err(Error::FieldMismatch(format!(
                "impression has {} features, vocabulary has {} fields",
                values.len(),
                self.fields.len()
            )));
        }
        Ok(())
    }

    /// Row index per field; unknown values are an error.
    pub fn lookup_indices(&self, values: &[u32]) -> Result<Vec<u32>> {
        self.check_arity(values)?;
        values
            .iter()
            .enumerate()
            .map(|(f, &v)| {
                self.get(f, v).ok_or_else(|| Error::OutOfVocabulary { field: self.fields[f].name.clone(), value: v })
            })
            .collect()
    }

    /// Appends one row of indices to `out`, strict or with `None` for unseen values.
    pub(crate) fn encode_into(&self, values: &[u32], out: &mut Vec<Option<u32>>, lenient: bool) -> Result<()> {
        self.check_arity(values)?;
        for (f, &v) in values.iter().enumerate() {
            match self.get(f, v) {
                Some(i) => out.push(Some(i)),
                None if lenient => out.push(None),
                None => return Err(Error::OutOfVocabulary { field: self.fields[f].name.clone(), value: v }),
            }
        }
        Ok(())
    }

    /// True if `self` keeps every field and every index of `base`.
    pub fn extends(&self, base: &Vocabulary) -> bool {
        self.fields.len() == base.fields.len()
            && self.fields.iter().zip(&base.fields).all(|(s, b)| {
                s.name == b.name && s.values.len() >= b.values.len() && s.values[..b.values.len()] == b.values[..]
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub rows: usize,
    pub dim: usize,
    /// `rows × dim`, row-major.
    pub weights: Vec<f64>,
}

impl EmbeddingTable {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.dim..(r + 1) * self.dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `inputs × outputs`, row-major: `weights[i * outputs + o]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    fn glorot(inputs: usize, outputs: usize, activation: Activation, seed: u64, stream: u64) -> Self {
        let scale = libm::sqrt(6.0 / (inputs + outputs) as f64);
        let mut rng = rng::stream(seed, stream);
        let weights = (0..inputs * outputs).map(|_| rng::symmetric(&mut rng, scale)).collect();
        DenseLayer { inputs, outputs, weights, bias: vec![0.0; outputs], activation }
    }

    /// `out[b] = act(bias + x[b] · W)` for a batch laid out row-major.
    fn forward(&self, x: &[f64], batch: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(batch * self.outputs, 0.0);
        for b in 0..batch {
            let row = &mut out[b * self.outputs..(b + 1) * self.outputs];
            row.copy_from_slice(&self.bias);
            let xb = &x[b * self.inputs..(b + 1) * self.inputs];
            for (i, &xi) in xb.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let w = &self.weights[i * self.outputs..(i + 1) * self.outputs];
                for (o, &wio) in w.iter().enumerate() {
                    row[o] += xi * wio;
                }
            }
            if self.activation == Activation::Relu {
                for v in row.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
    }
}

/// Training provenance carried with every model and written to checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    /// Optimizer steps applied since initialization.
    pub steps: u64,
    pub config_hash: u64,
    /// Config hash of the teacher a student was warm-started from (0 if none).
    pub teacher_hash: u64,
    /// Mean click label of the training window; used as the teacher prior for
    /// impressions with values outside its vocabulary.
    pub label_prior: f64,
}

impl Default for ModelMeta {
    fn default() -> Self {
        ModelMeta { seed: 0, steps: 0, config_hash: 0, teacher_hash: 0, label_prior: 0.5 }
    }
}

/// Identifies one parameter block; blocks are always visited in the order
/// embeddings (field order), hidden layers (weights then bias), output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockId {
    Embedding(usize),
    HiddenWeights(usize),
    HiddenBias(usize),
    OutputWeights,
    OutputBias,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CtrModel {
    pub fields: Vec<FieldSpec>,
    pub vocab: Vocabulary,
    pub tables: Vec<EmbeddingTable>,
    pub hidden: Vec<DenseLayer>,
    pub output: DenseLayer,
    pub meta: ModelMeta,
}

const DENSE_STREAM_BASE: u64 = 1;

fn embedding_stream(field: usize, row: usize) -> u64 {
    ((field as u64 + 1) << 40) | row as u64
}

/// Scratch initialization of one embedding row. Rows are treated as a dense
/// layer with a one-hot input, so the Glorot bound is `sqrt(6 / (1 + dim))`.
/// The values depend only on `(seed, field, row)`.
pub fn init_embedding_row(seed: u64, field: usize, row: usize, dim: usize) -> impl Iterator<Item = f64> {
    let scale = libm::sqrt(6.0 / (1 + dim) as f64);
    let mut rng = rng::stream(seed, embedding_stream(field, row));
    (0..dim).map(move |_| rng::symmetric(&mut rng, scale))
}

/// Scratch model over `vocab`.
///
/// Embedding rows and dense weights are uniform in `(-s, s)` with
/// `s = sqrt(6 / (fan_in + fan_out))`; biases are zero.
pub fn init_model(spec: &ModelSpec, vocab: &Vocabulary, seed: u64) -> Result<CtrModel> {
    spec.validate()?;
    if vocab.n_fields() != spec.fields.len() || spec.fields.iter().zip(vocab.field_names()).any(|(f, n)| f.name != n) {
        let want: Vec<&str> = spec.fields.iter().map(|f| f.name.as_str()).collect();
        let got: Vec<&str> = vocab.field_names().collect();
        return Err(Error::FieldMismatch(format!("spec fields {want:?} vs vocabulary fields {got:?}")));
    }
    let tables = spec
        .fields
        .iter()
        .enumerate()
        .map(|(f, fs)| {
            let rows = vocab.len(f);
            let mut weights = Vec::with_capacity(rows * fs.embedding_dim);
            for r in 0..rows {
                weights.extend(init_embedding_row(seed, f, r, fs.embedding_dim));
            }
            EmbeddingTable { rows, dim: fs.embedding_dim, weights }
        })
        .collect();
    let mut width = spec.input_width();
    let mut hidden = Vec::with_capacity(spec.hidden.len());
    for (l, &w) in spec.hidden.iter().enumerate() {
        hidden.push(DenseLayer::glorot(width, w, Activation::Relu, seed, DENSE_STREAM_BASE + l as u64));
        width = w;
    }
    let output = DenseLayer::glorot(width, 1, Activation::Identity, seed, DENSE_STREAM_BASE + spec.hidden.len() as u64);
    Ok(CtrModel {
        fields: spec.fields.clone(),
        vocab: vocab.clone(),
        tables,
        hidden,
        output,
        meta: ModelMeta { seed, ..Default::default() },
    })
}

/// Activations recorded by a forward pass, consumed by the backward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    batch: usize,
    inputs: Vec<f64>,
    layers: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &CtrModel) -> Self {
        Gradients { blocks: model.block_lens().into_iter().map(|n| vec![0.0; n]).collect() }
    }

    fn reset(&mut self) {
        for b in &mut self.blocks {
            b.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().flatten().all(|&g| g == 0.0)
    }
}

impl CtrModel {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec { fields: self.fields.clone(), hidden: self.hidden.iter().map(|l| l.outputs).collect() }
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn input_width(&self) -> usize {
        self.tables.iter().map(|t| t.dim).sum()
    }

    pub fn block_ids(&self) -> Vec<BlockId> {
        let mut ids: Vec<BlockId> = (0..self.tables.len()).map(BlockId::Embedding).collect();
        for l in 0..self.hidden.len() {
            ids.push(BlockId::HiddenWeights(l));
            ids.push(BlockId::HiddenBias(l));
        }
        ids.push(BlockId::OutputWeights);
        ids.push(BlockId::OutputBias);
        ids
    }

    pub fn block_name(&self, id: BlockId) -> String {
        match id {
            BlockId::Embedding(f) => format!("embedding/{}", self.fields[f].name),
            BlockId::HiddenWeights(l) => format!("hidden/{l}/weights"),
            BlockId::HiddenBias(l) => format!("hidden/{l}/bias"),
            BlockId::OutputWeights => "output/weights".into(),
            BlockId::OutputBias => "output/bias".into(),
        }
    }

    /// `(rows, cols)` of a block.
    pub fn block_shape(&self, id: BlockId) -> (usize, usize) {
        match id {
            BlockId::Embedding(f) => (self.tables[f].rows, self.tables[f].dim),
            BlockId::HiddenWeights(l) => (self.hidden[l].inputs, self.hidden[l].outputs),
            BlockId::HiddenBias(l) => (1, self.hidden[l].outputs),
            BlockId::OutputWeights => (self.output.inputs, 1),
            BlockId::OutputBias => (1, 1),
        }
    }

    fn block_lens(&self) -> Vec<usize> {
        self.blocks().iter().map(|b| b.len()).collect()
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.tables.iter().map(|t| t.weights.as_slice()).collect();
        for l in &self.hidden {
            out.push(&l.weights);
            out.push(&l.bias);
        }
        out.push(&self.output.weights);
        out.push(&self.output.bias);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.tables.iter_mut().map(|t| t.weights.as_mut_slice()).collect();
        for l in &mut self.hidden {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out.push(&mut self.output.weights);
        out.push(&mut self.output.bias);
        out
    }

    pub fn n_params(&self) -> usize {
        self.block_lens().iter().sum()
    }

    /// Row indices for one impression's feature values; unknown values are an error.
    pub fn lookup_indices(&self, values: &[u32]) -> Result<Vec<u32>> {
        self.vocab.lookup_indices(values)
    }

    /// Encodes a batch of feature rows. With `lenient`, values outside the
    /// vocabulary map to `None`, which the forward pass reads as a zero
    /// embedding.
    pub fn encode<'a, I>(&self, rows: I, lenient: bool) -> Result<Vec<Option<u32>>>
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        let mut out = Vec::new();
        for values in rows {
            self.vocab.encode_into(values, &mut out, lenient)?;
        }
        Ok(out)
    }

    fn check_batch(&self, indices: &[Option<u32>]) -> Result<usize> {
        let nf = self.n_fields();
        if !indices.len().is_multiple_of(nf) {
            return Err(Error::Shape(format!("batch of {} indices is not a multiple of {} fields", indices.len(), nf)));
        }
        for chunk in indices.chunks(nf) {
            for (f, idx) in chunk.iter().enumerate() {
                if let Some(i) = *idx {
                    if i as usize >= self.tables[f].rows {
                        return Err(Error::IndexOutOfRange {
                            field: self.fields[f].name.clone(),
                            index: i,
                            rows: self.tables[f].rows,
                        });
                    }
                }
            }
        }
        Ok(indices.len() / nf)
    }

    /// Forward pass keeping the activations needed by [`CtrModel::backward_tape`].
    pub fn forward_tape(&self, indices: &[Option<u32>], tape: &mut Tape) -> Result<()> {
        let batch = self.check_batch(indices)?;
        let nf = self.n_fields();
        let width = self.input_width();
        tape.batch = batch;
        tape.inputs.clear();
        tape.inputs.resize(batch * width, 0.0);
        for b in 0..batch {
            let mut off = b * width;
            for f in 0..nf {
                let dim = self.tables[f].dim;
                if let Some(r) = indices[b * nf + f] {
                    tape.inputs[off..off + dim].copy_from_slice(self.tables[f].row(r as usize));
                }
                off += dim;
            }
        }
        tape.layers.resize_with(self.hidden.len(), Vec::new);
        for l in 0..self.hidden.len() {
            let (done, rest) = tape.layers.split_at_mut(l);
            let x = if l == 0 { &tape.inputs } else { &done[l - 1] };
            self.hidden[l].forward(x, batch, &mut rest[0]);
        }
        let last = tape.layers.last().unwrap_or(&tape.inputs);
        self.output.forward(last, batch, &mut tape.logits);
        Ok(())
    }

    /// Click logits, one per example, in batch order.
    pub fn forward(&self, indices: &[Option<u32>]) -> Result<Vec<f64>> {
        let mut tape = Tape::default();
        self.forward_tape(indices, &mut tape)?;
        Ok(tape.logits)
    }

    /// Clamped click probabilities.
    pub fn predict_batch(&self, indices: &[Option<u32>]) -> Result<Vec<f64>> {
        Ok(self.forward(indices)?.into_iter().map(|z| clamp_prob(logistic(z))).collect())
    }

    /// Click probability of one impression; values outside the vocabulary are an error.
    pub fn predict(&self, values: &[u32]) -> Result<f64> {
        let idx: Vec<Option<u32>> = self.lookup_indices(values)?.into_iter().map(Some).collect();
        Ok(self.predict_batch(&idx)?[0])
    }

    /// Gradients of `Σ_b logits[b] · dlogits[b]` with respect to every parameter.
    pub fn backward(&self, indices: &[Option<u32>], dlogits: &[f64]) -> Result<Gradients> {
        let mut tape = Tape::default();
        self.forward_tape(indices, &mut tape)?;
        let mut grads = Gradients::zeros_like(self);
        let mut scratch = BackwardScratch::default();
        self.backward_tape(indices, &tape, dlogits, &mut grads, &mut scratch)?;
        Ok(grads)
    }

    /// Backward pass from a recorded tape; `grads` is overwritten.
    pub fn backward_tape(
        &self,
        indices: &[Option<u32>],
        tape: &Tape,
        dlogits: &[f64],
        grads: &mut Gradients,
        scratch: &mut BackwardScratch,
    ) -> Result<()> {
        let batch = tape.batch;
        if dlogits.len() != batch {
            return Err(Error::Shape(format!("{} logit gradients for a batch of {}", dlogits.len(), batch)));
        }
        if grads.blocks.len() != self.tables.len() + 2 * self.hidden.len() + 2 {
            return Err(Error::Shape("gradient blocks do not match model".into()));
        }
        grads.reset();
        let n_tables = self.tables.len();
        let n_hidden = self.hidden.len();

        // output layer
        let last = tape.layers.last().unwrap_or(&tape.inputs);
        scratch.delta.clear();
        scratch.delta.extend_from_slice(dlogits);
        backprop_dense(
            &self.output,
            last,
            batch,
            &scratch.delta,
            &mut grads.blocks[n_tables + 2 * n_hidden..],
            &mut scratch.next,
        );
        core::mem::swap(&mut scratch.delta, &mut scratch.next);

        for l in (0..n_hidden).rev() {
            let layer = &self.hidden[l];
            // relu mask from the post-activation values
            for (d, &a) in scratch.delta.iter_mut().zip(&tape.layers[l]) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let x = if l == 0 { &tape.inputs } else { &tape.layers[l - 1] };
            backprop_dense(
                layer,
                x,
                batch,
                &scratch.delta,
                &mut grads.blocks[n_tables + 2 * l..n_tables + 2 * l + 2],
                &mut scratch.next,
            );
            core::mem::swap(&mut scratch.delta, &mut scratch.next);
        }

        // scatter into embedding rows
        let nf = self.n_fields();
        let width = self.input_width();
        for b in 0..batch {
            let mut off = b * width;
            for f in 0..nf {
                let dim = self.tables[f].dim;
                if let Some(r) = indices[b * nf + f] {
                    let g = &mut grads.blocks[f][r as usize * dim..(r as usize + 1) * dim];
                    for (gi, &d) in g.iter_mut().zip(&scratch.delta[off..off + dim]) {
                        *gi += d;
                    }
                }
                off += dim;
            }
        }
        Ok(())
    }
}

/// Reusable buffers for [`CtrModel::backward_tape`].
#[derive(Clone, Debug, Default)]
pub struct BackwardScratch {
    delta: Vec<f64>,
    next: Vec<f64>,
}

/// Accumulates weight and bias gradients into `out[0]`, `out[1]` and writes
/// the input gradient to `dx`.
fn backprop_dense(layer: &DenseLayer, x: &[f64], batch: usize, delta: &[f64], out: &mut [Vec<f64>], dx: &mut Vec<f64>) {
    let (ni, no) = (layer.inputs, layer.outputs);
    dx.clear();
    dx.resize(batch * ni, 0.0);
    let (gw, gb) = out.split_at_mut(1);
    let (gw, gb) = (&mut gw[0], &mut gb[0]);
    for b in 0..batch {
        let d = &delta[b * no..(b + 1) * no];
        let xb = &x[b * ni..(b + 1) * ni];
        for (o, &dv) in d.iter().enumerate() {
            gb[o] += dv;
        }
        let dxb = &mut dx[b * ni..(b + 1) * ni];
        for i in 0..ni {
            let w = &layer.weights[i * no..(i + 1) * no];
            let gwi = &mut gw[i * no..(i + 1) * no];
            let xi = xb[i];
            let mut acc = 0.0;
            for o in 0..no {
                gwi[o] += xi * d[o];
                acc += w[o] * d[o];
            }
            dxb[i] = acc;
        }
    }
}

/// Adagrad accumulators, one per parameter, mirroring the model's blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub accumulators: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn zeros_like(model: &CtrModel) -> Self {
        OptimizerState {
            accumulators: model.block_lens().into_iter().map(|n| vec![0.0; n]).collect(),
            epsilon: ADAGRAD_EPS,
        }
    }

    /// `acc += g²; θ -= lr · g / (sqrt(acc) + ε)`.
    ///
    /// Every gradient is checked before any parameter moves, so a non-finite
    /// gradient leaves both model and state untouched.
    pub fn apply(&mut self, model: &mut CtrModel, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        let ids = model.block_ids();
        let lens = model.block_lens();
        if grads.blocks.len() != lens.len() || self.accumulators.len() != lens.len() {
            return Err(Error::Shape("optimizer/gradient block count differs from model".into()));
        }
        for (k, &n) in lens.iter().enumerate() {
            if grads.blocks[k].len() != n || self.accumulators[k].len() != n {
                return Err(Error::Shape(format!("block `{}` has {} parameters", model.block_name(ids[k]), n)));
            }
            if let Some((i, &g)) = grads.blocks[k].iter().enumerate().find(|(_, g)| !g.is_finite()) {
                return Err(Error::NonFiniteGradient { block: model.block_name(ids[k]), index: i, value: g });
            }
        }
        let eps = self.epsilon;
        for ((params, g), acc) in model.blocks_mut().into_iter().zip(&grads.blocks).zip(&mut self.accumulators) {
            for ((p, &gi), a) in params.iter_mut().zip(g).zip(acc.iter_mut()) {
                if gi == 0.0 {
                    continue;
                }
                *a += gi * gi;
                *p -= lr * gi / (libm::sqrt(*a) + eps);
            }
        }
        model.meta.steps += 1;
        Ok(())
    }
}
